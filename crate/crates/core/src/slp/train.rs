use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;

use super::{sigmoid, SlpModel};
use crate::error::{Error, Result};
use crate::seed;

/// Predictions are clipped to `[δ, 1 − δ]` before taking logs.
pub const PREDICTION_CLIP: f64 = 1e-7;

/// Rows evaluated per chunk when scoring a whole sample set.
const EVAL_CHUNK: usize = 1024;

/// Binary cross-entropy summed over every entry of `predictions` vs `labels`.
pub fn bce_loss(predictions: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>) -> Result<f64> {
    if predictions.dim() != labels.dim() {
        return Err(Error::DimensionMismatch(format!(
            "predictions {:?} vs labels {:?}",
            predictions.dim(),
            labels.dim()
        )));
    }
    let mut total = 0.0;
    Zip::from(&predictions).and(&labels).for_each(|&p, &a| {
        let p = p.clamp(PREDICTION_CLIP, 1.0 - PREDICTION_CLIP);
        total -= a * p.ln() + (1.0 - a) * (1.0 - p).ln();
    });
    Ok(total)
}

/// Training inputs for a model with `T` input slots.
///
/// `inputs[t]` is `n x input_dim` (row `i` is the `t`-th signal of sample `i`)
/// and `labels` is `n x K` with entries in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub inputs: Vec<Array2<f64>>,
    pub labels: Array2<f64>,
}

impl SampleSet {
    pub fn new(inputs: Vec<Array2<f64>>, labels: Array2<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::DimensionMismatch("a sample set needs at least one input block".into()));
        }
        let n = labels.nrows();
        let dim = inputs[0].ncols();
        if inputs.iter().any(|x| x.nrows() != n || x.ncols() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "input blocks must all be {n} x {dim} to match {n} labels"
            )));
        }
        Ok(SampleSet { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> SampleSet {
        SampleSet {
            inputs: self.inputs.iter().map(|x| x.select(Axis(0), rows)).collect(),
            labels: self.labels.select(Axis(0), rows),
        }
    }

    /// Splits off the trailing `fraction` of samples for validation (at least
    /// one sample each side when `n >= 2`).
    pub fn split_validation(&self, fraction: f64) -> (SampleSet, SampleSet) {
        let n = self.len();
        let mut n_val = (n as f64 * fraction).round() as usize;
        if n >= 2 {
            n_val = n_val.clamp(1, n - 1);
        }
        let cut = n - n_val;
        let part = |r: std::ops::Range<usize>| SampleSet {
            inputs: self.inputs.iter().map(|x| x.slice(s![r.clone(), ..]).to_owned()).collect(),
            labels: self.labels.slice(s![r, ..]).to_owned(),
        };
        (part(0..cut), part(cut..n))
    }

    fn views(&self) -> Vec<ArrayView2<'_, f64>> {
        self.inputs.iter().map(|x| x.view()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 256,
            max_epochs: 100,
            early_stop_patience: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.adam_epsilon <= 0.0 {
            return Err(Error::Config("adam_epsilon must be > 0".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be >= 1".into()));
        }
        if !unit_open(self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample BCE (summed over the K outputs) on the training set,
    /// one entry per completed epoch.
    pub train_loss: Vec<f64>,
    /// Same, on the validation set.
    pub val_loss: Vec<f64>,
    /// Last epoch run (1-based).
    pub stopped_epoch: usize,
    /// Epoch whose weights were kept (1-based, 0 if none improved on the start).
    pub best_epoch: usize,
    pub param_count: usize,
}

impl TrainReport {
    /// Training loss of the kept weights.
    pub fn best_train_loss(&self) -> f64 {
        match self.best_epoch {
            0 => f64::NAN,
            e => self.train_loss[e - 1],
        }
    }

    pub fn best_val_loss(&self) -> f64 {
        self.val_loss.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Gradients of the summed loss, laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<(Array2<f64>, Array1<f64>)>,
    pub output: (Array2<f64>, Array1<f64>),
}

impl Gradients {
    fn slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::with_capacity(2 * self.hidden.len() + 2);
        for (w, b) in self.hidden.iter().chain(std::iter::once(&self.output)) {
            v.push(w.as_slice().expect("standard layout"));
            v.push(b.as_slice().expect("standard layout"));
        }
        v
    }
}

impl SlpModel {
    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::with_capacity(2 * self.hidden.len() + 2);
        for layer in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            v.push(layer.weights.as_slice_mut().expect("standard layout"));
            v.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        v
    }
}

/// Summed BCE over a batch and its gradient w.r.t. every parameter.
///
/// The gradient of the loss w.r.t. each logit is `σ(z) − a`; it ignores the
/// clipping, which only binds when a prediction is already within 1e-7 of
/// its label's opposite extreme.
pub fn loss_and_gradients(
    model: &SlpModel,
    inputs: &[ArrayView2<'_, f64>],
    labels: ArrayView2<'_, f64>,
) -> Result<(f64, Gradients)> {
    let logits = model.logits_batch(inputs)?;
    if logits.dim() != labels.dim() {
        return Err(Error::DimensionMismatch(format!(
            "labels are {:?}, model produces {:?}",
            labels.dim(),
            logits.dim()
        )));
    }
    let probs = logits.mapv(sigmoid);
    let loss = bce_loss(probs.view(), labels)?;
    let delta = &probs - &labels;

    let v = model.config.hidden_width;
    let acts: Vec<Vec<Array2<f64>>> = inputs.iter().map(|x| model.hidden_activations(*x)).collect();

    let mut out_w = Array2::zeros(model.output.weights.dim());
    for (t, a) in acts.iter().enumerate() {
        let top = a.last().expect("hidden output");
        out_w.slice_mut(s![.., t * v..(t + 1) * v]).assign(&delta.t().dot(top));
    }
    let out_b = delta.sum_axis(Axis(0));
    let d_concat = delta.dot(&model.output.weights);

    let mut hidden: Vec<(Array2<f64>, Array1<f64>)> = model
        .hidden
        .iter()
        .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
        .collect();
    for (t, a) in acts.iter().enumerate() {
        let mut dh = d_concat.slice(s![.., t * v..(t + 1) * v]).to_owned();
        for z in (0..model.hidden.len()).rev() {
            Zip::from(&mut dh).and(&a[z + 1]).for_each(|d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
            hidden[z].0 += &dh.t().dot(&a[z]);
            hidden[z].1 += &dh.sum_axis(Axis(0));
            if z > 0 {
                dh = dh.dot(&model.hidden[z].weights);
            }
        }
    }
    Ok((loss, Gradients { hidden, output: (out_w, out_b) }))
}

/// Mean per-sample loss of `model` on `set`.
fn mean_loss(model: &SlpModel, set: &SampleSet) -> Result<f64> {
    let n = set.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let block: Vec<ArrayView2<'_, f64>> = set.inputs.iter().map(|x| x.slice(s![start..end, ..])).collect();
        let p = model.forward_batch(&block)?;
        total += bce_loss(p.view(), set.labels.slice(s![start..end, ..]))?;
        start = end;
    }
    Ok(total / n as f64)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(model: &mut SlpModel) -> Self {
        let sizes: Vec<usize> = model.param_slices_mut().iter().map(|p| p.len()).collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut SlpModel, grads: &Gradients, scale: f64, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.step);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.step);
        let lr = cfg.learning_rate;
        for (((param, grad), m), v) in model
            .param_slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..param.len() {
                let g = grad[i] * scale;
                m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
                v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
            }
        }
    }
}

/// Mini-batch Adam on the BCE loss with early stopping on `val_set`.
///
/// Returns the weights from the epoch with the lowest validation loss.
pub fn train(
    model: &SlpModel,
    train_set: &SampleSet,
    val_set: &SampleSet,
    cfg: &TrainConfig,
) -> Result<(SlpModel, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let k = model.config.num_devices;
    for set in [train_set, val_set] {
        model.check_inputs(&set.views())?;
        if set.labels.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "labels have {} columns, model has K = {k}",
                set.labels.ncols()
            )));
        }
    }

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_val = mean_loss(model, val_set)?;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut adam = Adam::new(&mut current);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = seed::stream(cfg.seed, "slp-train", 0);
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        param_count: model.param_count(),
    };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = train_set.select(batch);
            let (loss, grads) = loss_and_gradients(&current, &b.views(), b.labels.view())?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            epoch_loss += loss;
            adam.update(&mut current, &grads, 1.0 / batch.len() as f64, cfg);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = mean_loss(&current, val_set)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("epoch {epoch}: train {train_loss:.5}, val {val_loss:.5}");
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report.stopped_epoch = epoch;

        if val_loss < best_val {
            best_val = val_loss;
            best = current.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    report.best_epoch = best_epoch;
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn half_predictions_cost_ln2_per_output() {
        let p = Array2::from_elem((3, 5), 0.5);
        let a = Array2::from_shape_fn((3, 5), |(i, j)| ((i + j) % 2) as f64);
        let l = bce_loss(p.view(), a.view()).unwrap();
        assert!((l - 15.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_cost_only_the_clip() {
        let a = array![[1.0, 0.0, 1.0, 0.0]];
        let l = bce_loss(a.view(), a.view()).unwrap();
        assert!(l <= 4.0 * -(1.0 - PREDICTION_CLIP).ln() + 1e-15);
        assert!(l >= 0.0);
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let mut rng = seed::stream(1, "bce", 0);
        let p = Array2::from_shape_simple_fn((7, 4), || rng.random::<f64>());
        let a = Array2::from_shape_simple_fn((7, 4), || f64::from(rng.random::<bool>()));
        let mut want = 0.0;
        for i in 0..7 {
            for j in 0..4 {
                let q = p[[i, j]].clamp(1e-7, 1.0 - 1e-7);
                want += if a[[i, j]] == 1.0 { -q.ln() } else { -(1.0 - q).ln() };
            }
        }
        assert!((bce_loss(p.view(), a.view()).unwrap() - want).abs() < 1e-10);
        assert!(bce_loss(p.view(), a.slice(s![..3, ..])).is_err());
    }

    fn toy_set(n: usize, seed: u64) -> SampleSet {
        let mut rng = seed::stream(seed, "toy", 0);
        let x = Array2::from_shape_simple_fn((n, 4), || rng.random::<f64>() - 0.5);
        let y = Array2::from_shape_fn((n, 2), |(i, j)| f64::from(if j == 0 { x[[i, 0]] > 0.0 } else { x[[i, 1]] + x[[i, 2]] > 0.0 }));
        SampleSet::new(vec![x], y).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let m = SlpModel::new(ModelConfig::for_signal(2, 1, 1, 5, 2, 1), 3).unwrap();
        let set = toy_set(40, 1);
        let (tr, va) = set.split_validation(0.25);
        let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 3, batch_size: 8, ..Default::default() };
        let (out, rep) = train(&m, &tr, &va, &cfg).unwrap();
        assert_eq!(out, m);
        assert_eq!(rep.stopped_epoch, 3);
        assert!(rep.train_loss.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn single_sample_overfits() {
        let m = SlpModel::new(ModelConfig::for_signal(2, 1, 1, 32, 3, 1), 4).unwrap();
        let x = array![[0.3, -0.7, 1.1, 0.2]];
        let y = array![[1.0, 0.0, 1.0]];
        let set = SampleSet::new(vec![x], y).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 500,
            early_stop_patience: 500,
            batch_size: 1,
            ..Default::default()
        };
        let (out, _) = train(&m, &set, &set, &cfg).unwrap();
        let p = out.forward_batch(&set.views()).unwrap();
        let l = bce_loss(p.view(), set.labels.view()).unwrap();
        assert!(l < 1e-3, "loss {l}");
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let m = SlpModel::new(ModelConfig::for_signal(2, 1, 2, 6, 2, 1), 8).unwrap();
        let set = toy_set(400, 2);
        let (tr, va) = set.split_validation(0.1);
        assert_eq!(va.len(), 40);
        let cfg = TrainConfig { learning_rate: 1e-2, max_epochs: 30, batch_size: 32, seed: 5, ..Default::default() };
        let (a, ra) = train(&m, &tr, &va, &cfg).unwrap();
        let (b, rb) = train(&m, &tr, &va, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.best_val_loss() < 2.0 * std::f64::consts::LN_2 * 0.8);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let m = SlpModel::new(ModelConfig::for_signal(2, 1, 1, 3, 2, 1), 0).unwrap();
        let set = toy_set(10, 0);
        let bad = TrainConfig { validation_fraction: 1.5, ..Default::default() };
        assert!(train(&m, &set, &set, &bad).is_err());
        let wrong_k = SampleSet::new(vec![set.inputs[0].clone()], Array2::zeros((10, 3))).unwrap();
        assert!(train(&m, &wrong_k, &wrong_k, &TrainConfig::default()).is_err());
    }
}
