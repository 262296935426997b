use super::ModelConfig;

/// Trainable parameters of a detector with shared hidden layers.
///
/// `(input_dim + 1) V + (Z − 1)(V + 1) V` for the hidden stack plus
/// `(T V + 1) K` for the output layer. This is the single place the count is
/// defined; [`super::SlpModel::param_count`] agrees with it by construction.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let v = cfg.hidden_width;
    (cfg.input_dim + 1) * v
        + cfg.hidden_layers.saturating_sub(1) * (v + 1) * v
        + (cfg.cluster_inputs * v + 1) * cfg.num_devices
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoPoint {
    pub params: usize,
    pub loss: f64,
}

#[cfg(test)]
fn dominates(a: ParetoPoint, b: ParetoPoint) -> bool {
    (a.params as f64) <= (b.params as f64) && a.loss <= b.loss && (a.params < b.params || a.loss < b.loss)
}

/// `true` for every point not dominated by another point of the list.
pub fn pareto_mask(points: &[ParetoPoint]) -> Vec<bool> {
    // Sweep by increasing params (ties: increasing loss); a point survives
    // when its loss beats the best seen at strictly fewer params and it is
    // not a strictly worse duplicate at equal params.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .params
            .cmp(&points[j].params)
            .then(points[i].loss.total_cmp(&points[j].loss))
    });
    let mut mask = vec![false; points.len()];
    let mut best_loss = f64::INFINITY;
    let mut idx = 0;
    while idx < order.len() {
        let params = points[order[idx]].params;
        let group_min = points[order[idx]].loss;
        let mut end = idx;
        while end < order.len() && points[order[end]].params == params {
            let p = points[order[end]];
            mask[order[end]] = p.loss == group_min && p.loss < best_loss;
            end += 1;
        }
        best_loss = best_loss.min(group_min);
        idx = end;
    }
    mask
}

/// Non-dominated points ordered by parameter count.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mask = pareto_mask(points);
    let mut front: Vec<ParetoPoint> = points.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    front.sort_by(|a, b| a.params.cmp(&b.params).then(a.loss.total_cmp(&b.loss)));
    front
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(params: usize, loss: f64) -> ParetoPoint {
        ParetoPoint { params, loss }
    }

    #[test]
    fn counts() {
        let cfg = ModelConfig::for_signal(40, 2, 1, 512, 100, 1);
        assert_eq!(param_count(&cfg), (160 + 1) * 512 + (512 + 1) * 100);
        assert_eq!(param_count(&cfg), 133_732);
        let cfg4 = ModelConfig { cluster_inputs: 4, ..cfg };
        assert_eq!(param_count(&cfg4), 82_432 + (4 * 512 + 1) * 100);
        assert_eq!(param_count(&cfg4), 287_332);
        let tiny = ModelConfig { input_dim: 1, hidden_layers: 1, hidden_width: 1, num_devices: 1, cluster_inputs: 1 };
        assert_eq!(param_count(&tiny), 4);
    }

    #[test]
    fn count_agrees_with_allocated_model() {
        for (z, v, t) in [(1, 3, 1), (3, 4, 2), (2, 7, 4)] {
            let cfg = ModelConfig::for_signal(3, 2, z, v, 5, t);
            let m = super::super::SlpModel::zeros(cfg).unwrap();
            assert_eq!(m.param_count(), param_count(&cfg));
        }
    }

    #[test]
    fn small_fronts() {
        let f = pareto_front(&[pt(10, 0.5), pt(20, 0.3), pt(15, 0.6)]);
        assert_eq!(f, vec![pt(10, 0.5), pt(20, 0.3)]);
        assert_eq!(pareto_front(&[pt(7, 1.0)]), vec![pt(7, 1.0)]);
        // exact duplicates do not dominate each other
        assert_eq!(pareto_front(&[pt(5, 1.0), pt(5, 1.0)]).len(), 2);
    }

    fn brute_force(points: &[ParetoPoint]) -> Vec<bool> {
        points
            .iter()
            .map(|&p| !points.iter().any(|&q| dominates(q, p)))
            .collect()
    }

    proptest! {
        #[test]
        fn matches_brute_force(raw in prop::collection::vec((0usize..40, 0u32..40), 1..100)) {
            let points: Vec<ParetoPoint> = raw.iter().map(|&(p, l)| pt(p, f64::from(l) / 10.0)).collect();
            let mask = pareto_mask(&points);
            prop_assert_eq!(&mask, &brute_force(&points));
            let front = pareto_front(&points);
            for a in &front {
                for b in &front {
                    prop_assert!(!dominates(*a, *b));
                }
            }
            for (p, &kept) in points.iter().zip(&mask) {
                if !kept {
                    prop_assert!(front.iter().any(|q| dominates(*q, *p)));
                }
            }
        }
    }
}
