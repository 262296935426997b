//! Detection metrics and the experiment harness.

mod experiment;
mod report;

pub use experiment::*;
pub use report::{write_auc_csv, write_cdf_csv, write_pareto_csv, write_roc_csv, write_timing_csv, AucRow, ParetoRow};

use crate::channel::LargeScaleMap;
use crate::error::{Error, Result};
use crate::scenario::{dominant_ap_snr, empirical_quantile};

/// Headroom above 1 for the last threshold, so that sigmoid scores (always
/// below 1) are all rejected there.
pub const TAU_HEADROOM: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Miss-detection probability over active devices.
    pub fn p_md(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.fn_ as f64 / p as f64)
    }

    /// False-alarm probability over inactive devices.
    pub fn p_fa(&self) -> Option<f64> {
        let n = self.fp + self.tn;
        (n > 0).then(|| self.fp as f64 / n as f64)
    }

    pub fn p_d(&self) -> Option<f64> {
        self.p_md().map(|m| 1.0 - m)
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn confusion(decisions: &[bool], truth: &[bool]) -> Result<ConfusionCounts> {
    if decisions.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} decisions vs {} truth values",
            decisions.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&d, &t) in decisions.iter().zip(truth) {
        match (d, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Soft scores and ground truth pooled over devices and slots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScorePool {
    pub scores: Vec<f64>,
    pub truth: Vec<bool>,
}

impl ScorePool {
    pub fn new(scores: Vec<f64>, truth: Vec<bool>) -> Result<Self> {
        if scores.len() != truth.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores vs {} truth values",
                scores.len(),
                truth.len()
            )));
        }
        Ok(ScorePool { scores, truth })
    }

    pub fn extend(&mut self, scores: &[f64], truth: &[bool]) {
        self.scores.extend_from_slice(scores);
        self.truth.extend_from_slice(truth);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_sizes(&self) -> Result<(u64, u64)> {
        let pos = self.truth.iter().filter(|&&t| t).count() as u64;
        let neg = self.truth.len() as u64 - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::Numeric(format!(
                "ROC needs both active and inactive samples (got {pos} active, {neg} inactive)"
            )));
        }
        Ok((pos, neg))
    }

    /// Rank-normalized copy (see [`rank_normalize`]).
    pub fn rank_normalized(&self) -> ScorePool {
        ScorePool { scores: rank_normalize(&self.scores), truth: self.truth.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub tau: f64,
    pub p_fa: f64,
    pub p_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub method: String,
    /// Ordered by increasing `tau`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Trapezoidal area under `(p_fa, p_d)` points sorted by `p_fa` (then `p_d`).
pub fn auc(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.p_fa, p.p_d)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// ROC from pooled confusion counts at each of the given thresholds.
pub fn roc_at_thresholds(method: &str, pool: &ScorePool, taus: &[f64]) -> Result<RocCurve> {
    let (pos, neg) = pool.class_sizes()?;
    let mut pos_scores: Vec<f64> = Vec::with_capacity(pos as usize);
    let mut neg_scores: Vec<f64> = Vec::with_capacity(neg as usize);
    for (&s, &t) in pool.scores.iter().zip(&pool.truth) {
        if t { pos_scores.push(s) } else { neg_scores.push(s) }
    }
    pos_scores.sort_by(f64::total_cmp);
    neg_scores.sort_by(f64::total_cmp);
    // number of scores >= tau in a sorted list
    let at_or_above = |v: &[f64], tau: f64| v.len() - v.partition_point(|&s| s < tau);
    let mut taus = taus.to_vec();
    taus.sort_by(f64::total_cmp);
    let points: Vec<RocPoint> = taus
        .iter()
        .map(|&tau| RocPoint {
            tau,
            p_fa: at_or_above(&neg_scores, tau) as f64 / neg as f64,
            p_d: at_or_above(&pos_scores, tau) as f64 / pos as f64,
        })
        .collect();
    let auc = auc(&points);
    Ok(RocCurve { method: method.to_string(), points, auc })
}

/// `num_taus` evenly spaced thresholds over `[0, 1 + TAU_HEADROOM]`.
pub fn tau_grid(num_taus: usize) -> Vec<f64> {
    let n = num_taus.max(2);
    (0..n).map(|i| (1.0 + TAU_HEADROOM) * i as f64 / (n - 1) as f64).collect()
}

/// ROC over a uniform threshold grid; scores are expected in [0, 1].
pub fn roc_sweep(method: &str, pool: &ScorePool, num_taus: usize) -> Result<RocCurve> {
    roc_at_thresholds(method, pool, &tau_grid(num_taus))
}

/// ROC at every distinct score plus one threshold above them all: the exact
/// empirical curve, whose AUC equals the Mann-Whitney statistic with ties
/// counted one half.
pub fn roc_exact(method: &str, pool: &ScorePool) -> Result<RocCurve> {
    let mut taus = pool.scores.clone();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let top = taus.last().copied().unwrap_or(0.0);
    taus.push(if top.is_finite() { top + top.abs().max(1.0) } else { f64::INFINITY });
    roc_at_thresholds(method, pool, &taus)
}

/// Maps scores to `[0, 1]` by rank, tied scores sharing their average rank.
pub fn rank_normalize(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    if n <= 1 {
        return vec![0.5; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0;
        for &idx in &order[i..=j] {
            out[idx] = rank / (n - 1) as f64;
        }
        i = j + 1;
    }
    out
}

/// Threshold maximizing per-device decision accuracy, and that accuracy.
pub fn best_accuracy(pool: &ScorePool) -> (f64, f64) {
    let n = pool.len();
    if n == 0 {
        return (0.0, f64::NAN);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pool.scores[b].total_cmp(&pool.scores[a]));
    let neg = pool.truth.iter().filter(|&&t| !t).count();
    // threshold above every score: everything declared inactive
    let mut correct = neg;
    let mut best = (correct, pool.scores[order[0]] + TAU_HEADROOM);
    let mut i = 0;
    while i < n {
        let s = pool.scores[order[i]];
        while i < n && pool.scores[order[i]] == s {
            correct = if pool.truth[order[i]] { correct + 1 } else { correct - 1 };
            i += 1;
        }
        if correct > best.0 {
            best = (correct, s);
        }
    }
    (best.1, best.0 as f64 / n as f64)
}

/// Empirical CDF of the dominant-AP SNR evaluated on `grid_db`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrCdf {
    pub grid_db: Vec<f64>,
    pub cdf: Vec<f64>,
    /// Per-device SNR (dB), sorted ascending.
    pub samples_db: Vec<f64>,
    /// The CDF = 0.05 crossing.
    pub target_db: f64,
}

impl SnrCdf {
    pub fn eval(&self, snr_db: f64) -> f64 {
        self.samples_db.partition_point(|&s| s <= snr_db) as f64 / self.samples_db.len() as f64
    }
}

pub fn snr_cdf(lsf: &LargeScaleMap, tx_power_w: &[f64], noise_var_w: f64, grid_db: &[f64]) -> SnrCdf {
    let report = dominant_ap_snr(lsf, tx_power_w, noise_var_w, 0.0);
    let mut samples = report.snr_db;
    samples.sort_by(f64::total_cmp);
    let target_db = empirical_quantile(&samples, 0.05);
    let mut cdf = SnrCdf { grid_db: grid_db.to_vec(), cdf: Vec::new(), samples_db: samples, target_db };
    cdf.cdf = grid_db.iter().map(|&g| cdf.eval(g)).collect();
    cdf
}

/// `n` points evenly spanning `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
