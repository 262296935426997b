//! Clustering, the two detection strategies and the CPU-side post-processing.
//!
//! Strategy I (decentralized) runs a `T = 1` detector at every AP and fuses
//! the cluster APs' predictions at the CPU, either by majority vote on hard
//! decisions or by a β-weighted average (ponderation). Strategy II
//! (centralized) forwards each device's `T` cluster signals to the CPU and
//! runs one concatenating detector, keeping only that device's output.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;

use crate::channel::LargeScaleMap;
use crate::error::{Error, Result};
use crate::scenario::AccessSlot;
use crate::seed;
use crate::slp::{signal_features_into, SampleSet, SlpModel};

/// The `T` best-β APs of every device.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// `aps[k]` lists device `k`'s cluster, strongest link first.
    pub aps: Vec<Vec<usize>>,
    /// Linear β of the same links, aligned with `aps`.
    pub beta_linear: Vec<Vec<f64>>,
    pub cluster_size: usize,
}

impl ClusterAssignment {
    pub fn num_devices(&self) -> usize {
        self.aps.len()
    }
}

/// Selects, per device, the `T` APs of largest β (ties to the lower AP index).
pub fn select_clusters(lsf: &LargeScaleMap, cluster_size: usize) -> Result<ClusterAssignment> {
    let m = lsf.num_aps();
    if cluster_size == 0 || cluster_size > m {
        return Err(Error::Config(format!("cluster size must lie in [1, {m}], got {cluster_size}")));
    }
    let mut aps = Vec::with_capacity(lsf.num_devices());
    let mut betas = Vec::with_capacity(lsf.num_devices());
    for k in 0..lsf.num_devices() {
        let mut order: Vec<usize> = (0..m).collect();
        // smallest attenuation first; a stable sort keeps lower indices first on ties
        order.sort_by(|&a, &b| lsf.beta_db[[a, k]].total_cmp(&lsf.beta_db[[b, k]]));
        order.truncate(cluster_size);
        betas.push(order.iter().map(|&a| lsf.beta_linear[[a, k]]).collect());
        aps.push(order);
    }
    Ok(ClusterAssignment { aps, beta_linear: betas, cluster_size })
}

/// `score >= tau` element-wise.
pub fn hard_decision(scores: &[f64], tau: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= tau).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FusionRule {
    /// At least `T / 2` votes (so 2 of 4 suffice).
    #[default]
    Majority,
    /// More than `T / 2` votes.
    StrictMajority,
    And,
    Or,
}

impl FusionRule {
    /// Minimum number of positive votes out of `t` that declares activity.
    pub fn required_votes(self, t: usize) -> usize {
        match self {
            FusionRule::Majority => t.div_ceil(2),
            FusionRule::StrictMajority => t / 2 + 1,
            FusionRule::And => t,
            FusionRule::Or => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionRule::Majority => "majority",
            FusionRule::StrictMajority => "strict-majority",
            FusionRule::And => "and",
            FusionRule::Or => "or",
        }
    }
}

pub fn fuse(votes: &[bool], rule: FusionRule) -> bool {
    votes.iter().filter(|&&v| v).count() >= rule.required_votes(votes.len())
}

pub fn fuse_majority(votes: &[bool]) -> bool {
    fuse(votes, FusionRule::Majority)
}

/// β-weighted average of cluster predictions, weights `β_t / Σ β`.
pub fn ponderate(predictions: &[f64], beta: &[f64]) -> Result<f64> {
    if predictions.len() != beta.len() || beta.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions vs {} weights",
            predictions.len(),
            beta.len()
        )));
    }
    if beta.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::Domain("ponderation weights need every beta > 0".into()));
    }
    let total: f64 = beta.iter().sum();
    let value: f64 = predictions.iter().zip(beta).map(|(p, b)| p * (b / total)).sum();
    // a convex combination lies within the inputs' range; clamping removes
    // round-off so that unanimous predictions come back exactly
    let lo = predictions.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = predictions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(value.clamp(lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PostMode {
    Fusion(FusionRule),
    Pond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Decentralized(PostMode),
    Centralized,
}

impl Strategy {
    pub fn label(self) -> String {
        match self {
            Strategy::Decentralized(PostMode::Pond) => "slp-dec-pond".into(),
            Strategy::Decentralized(PostMode::Fusion(FusionRule::Majority)) => "slp-dec-fusion".into(),
            Strategy::Decentralized(PostMode::Fusion(r)) => format!("slp-dec-fusion-{}", r.as_str()),
            Strategy::Centralized => "slp-central".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// Pre-threshold score per device in [0, 1]. For fusion this is the
    /// fraction of cluster APs voting active at `tau`.
    pub scores: Vec<f64>,
    pub decisions: Vec<bool>,
    pub tau: f64,
    pub strategy: Strategy,
}

/// Network inputs for every AP of a slot, `M x 2LN`.
pub fn slot_features(slot: &AccessSlot) -> Array2<f64> {
    let m = slot.received.len();
    let dim = 2 * slot.received.first().map_or(0, |y| y.len());
    let mut x = Array2::zeros((m, dim));
    for (row, y) in x.outer_iter_mut().zip(&slot.received) {
        let mut row = row;
        signal_features_into(y.view(), row.as_slice_mut().expect("contiguous row"));
    }
    x
}

/// Per-AP predictions `M x K`: `models` is either one model shared by every
/// AP or one model per AP.
pub fn ap_predictions(models: &[SlpModel], slot: &AccessSlot) -> Result<Array2<f64>> {
    let m = slot.received.len();
    if models.len() != 1 && models.len() != m {
        return Err(Error::Mismatch(format!("need 1 shared model or {m} per-AP models, got {}", models.len())));
    }
    let x = slot_features(slot);
    for model in models {
        model.ensure_compatible(model.config.num_devices, x.ncols(), 1)?;
    }
    if models.len() == 1 {
        return models[0].forward_batch(&[x.view()]);
    }
    let k = models[0].config.num_devices;
    let mut out = Array2::zeros((m, k));
    for (ap, model) in models.iter().enumerate() {
        let p = model.forward_batch(&[x.slice(ndarray::s![ap..ap + 1, ..])])?;
        if p.ncols() != k {
            return Err(Error::Mismatch("per-AP models disagree on K".into()));
        }
        out.row_mut(ap).assign(&p.row(0));
    }
    Ok(out)
}

fn check_clusters(clusters: &ClusterAssignment, num_aps: usize, num_devices: usize) -> Result<()> {
    if clusters.num_devices() != num_devices {
        return Err(Error::Mismatch(format!(
            "clusters cover {} devices, predictions {num_devices}",
            clusters.num_devices()
        )));
    }
    if clusters.aps.iter().flatten().any(|&a| a >= num_aps) {
        return Err(Error::Mismatch(format!("cluster refers to an AP outside [0, {num_aps})")));
    }
    Ok(())
}

/// Threshold-free decentralized score per device.
///
/// Pond: the ponderated prediction. Fusion: the `r`-th largest cluster
/// prediction, `r` being the rule's required vote count, so that
/// `score >= tau` holds exactly when the fused decision at `tau` is active.
pub fn decentralized_scores(preds: ArrayView2<'_, f64>, clusters: &ClusterAssignment, mode: PostMode) -> Result<Vec<f64>> {
    check_clusters(clusters, preds.nrows(), preds.ncols())?;
    let mut scores = Vec::with_capacity(preds.ncols());
    let mut buf = Vec::with_capacity(clusters.cluster_size);
    for (k, aps) in clusters.aps.iter().enumerate() {
        buf.clear();
        buf.extend(aps.iter().map(|&a| preds[[a, k]]));
        let s = match mode {
            PostMode::Pond => ponderate(&buf, &clusters.beta_linear[k])?,
            PostMode::Fusion(rule) => {
                buf.sort_by(|a, b| b.total_cmp(a));
                buf[rule.required_votes(buf.len()) - 1]
            }
        };
        scores.push(s);
    }
    Ok(scores)
}

/// Strategy I on one slot.
pub fn detect_decentralized(
    models: &[SlpModel],
    slot: &AccessSlot,
    clusters: &ClusterAssignment,
    mode: PostMode,
    tau: f64,
) -> Result<DetectionResult> {
    let preds = ap_predictions(models, slot)?;
    check_clusters(clusters, preds.nrows(), preds.ncols())?;
    let strategy = Strategy::Decentralized(mode);
    let (scores, decisions) = match mode {
        PostMode::Pond => {
            let s = decentralized_scores(preds.view(), clusters, mode)?;
            let d = hard_decision(&s, tau);
            (s, d)
        }
        PostMode::Fusion(rule) => {
            let mut scores = Vec::with_capacity(preds.ncols());
            let mut decisions = Vec::with_capacity(preds.ncols());
            for (k, aps) in clusters.aps.iter().enumerate() {
                let votes: Vec<bool> = aps.iter().map(|&a| preds[[a, k]] >= tau).collect();
                scores.push(votes.iter().filter(|&&v| v).count() as f64 / votes.len() as f64);
                decisions.push(fuse(&votes, rule));
            }
            (scores, decisions)
        }
    };
    Ok(DetectionResult { scores, decisions, tau, strategy })
}

/// Centralized soft score per device.
///
/// Devices whose clusters coincide share one forward pass.
pub fn centralized_scores(model: &SlpModel, slot: &AccessSlot, clusters: &ClusterAssignment) -> Result<Vec<f64>> {
    let x = slot_features(slot);
    let k = clusters.num_devices();
    check_clusters(clusters, x.nrows(), k)?;
    model.ensure_compatible(k, x.ncols(), clusters.cluster_size)?;

    let mut unique: HashMap<&[usize], usize> = HashMap::new();
    let mut order: Vec<&[usize]> = Vec::new();
    let row_of: Vec<usize> = clusters
        .aps
        .iter()
        .map(|c| {
            *unique.entry(c.as_slice()).or_insert_with(|| {
                order.push(c.as_slice());
                order.len() - 1
            })
        })
        .collect();
    let inputs: Vec<Array2<f64>> = (0..clusters.cluster_size)
        .map(|t| {
            let rows: Vec<usize> = order.iter().map(|c| c[t]).collect();
            x.select(Axis(0), &rows)
        })
        .collect();
    let views: Vec<_> = inputs.iter().map(|a| a.view()).collect();
    let out = model.forward_batch(&views)?;
    Ok(row_of.iter().enumerate().map(|(dev, &r)| out[[r, dev]]).collect())
}

/// Strategy II on one slot.
pub fn detect_centralized(model: &SlpModel, slot: &AccessSlot, clusters: &ClusterAssignment, tau: f64) -> Result<DetectionResult> {
    let scores = centralized_scores(model, slot, clusters)?;
    let decisions = hard_decision(&scores, tau);
    Ok(DetectionResult { scores, decisions, tau, strategy: Strategy::Centralized })
}

/// Bytes sent over the fronthaul per slot, assuming 32-bit reals.
///
/// Decentralized: each AP sends its K predictions. Centralized: each AP
/// sends its `L x N` complex block.
pub fn fronthaul_bytes(strategy: Strategy, num_aps: usize, num_devices: usize, pilot_len: usize, num_antennas: usize) -> usize {
    match strategy {
        Strategy::Decentralized(_) => num_aps * num_devices * 4,
        Strategy::Centralized => num_aps * pilot_len * num_antennas * 2 * 4,
    }
}

fn labels_of(slot: &AccessSlot) -> impl Iterator<Item = f64> + '_ {
    slot.activity.a.iter().map(|&a| f64::from(u8::from(a)))
}

/// Decentralized training samples: `(one AP's signal, full activity)`.
///
/// Slot `i` contributes the APs `(i * aps_per_slot + j) mod M` for
/// `j < aps_per_slot`, cycling round-robin over the APs.
pub fn decentralized_samples(slots: &[AccessSlot], aps_per_slot: usize) -> Result<SampleSet> {
    let first = slots.first().ok_or_else(|| Error::Config("no slots to build samples from".into()))?;
    let m = first.received.len();
    let per = aps_per_slot.clamp(1, m);
    let dim = 2 * first.received[0].len();
    let k = first.activity.a.len();
    let n = slots.len() * per;
    let mut x = Array2::zeros((n, dim));
    let mut y = Array2::zeros((n, k));
    let mut row = 0;
    for (i, slot) in slots.iter().enumerate() {
        for j in 0..per {
            let ap = (i * per + j) % m;
            let mut xr = x.row_mut(row);
            signal_features_into(slot.received[ap].view(), xr.as_slice_mut().expect("contiguous"));
            y.row_mut(row).iter_mut().zip(labels_of(slot)).for_each(|(d, v)| *d = v);
            row += 1;
        }
    }
    SampleSet::new(vec![x], y)
}

/// Per-AP training samples: slot `i` contributes AP `ap`'s signal only.
pub fn single_ap_samples(slots: &[AccessSlot], ap: usize) -> Result<SampleSet> {
    let first = slots.first().ok_or_else(|| Error::Config("no slots to build samples from".into()))?;
    if ap >= first.received.len() {
        return Err(Error::Config(format!("AP {ap} out of range")));
    }
    let dim = 2 * first.received[ap].len();
    let k = first.activity.a.len();
    let mut x = Array2::zeros((slots.len(), dim));
    let mut y = Array2::zeros((slots.len(), k));
    for (i, slot) in slots.iter().enumerate() {
        let mut xr = x.row_mut(i);
        signal_features_into(slot.received[ap].view(), xr.as_slice_mut().expect("contiguous"));
        y.row_mut(i).iter_mut().zip(labels_of(slot)).for_each(|(d, v)| *d = v);
    }
    SampleSet::new(vec![x], y)
}

/// Centralized training samples: per slot, `devices_per_slot` devices drawn
/// without replacement; each gives `(its T cluster signals, full activity)`.
pub fn centralized_samples(
    slots: &[AccessSlot],
    clusters: &ClusterAssignment,
    devices_per_slot: usize,
    seed: u64,
) -> Result<SampleSet> {
    let first = slots.first().ok_or_else(|| Error::Config("no slots to build samples from".into()))?;
    let k = clusters.num_devices();
    check_clusters(clusters, first.received.len(), first.activity.a.len())?;
    let per = devices_per_slot.clamp(1, k);
    let dim = 2 * first.received[0].len();
    let t = clusters.cluster_size;
    let n = slots.len() * per;
    let mut xs: Vec<Array2<f64>> = (0..t).map(|_| Array2::zeros((n, dim))).collect();
    let mut y = Array2::zeros((n, k));
    let mut row = 0;
    for (i, slot) in slots.iter().enumerate() {
        let mut rng = seed::stream(seed, "central-samples", i as u64);
        for dev in sample(&mut rng, k, per).into_iter() {
            for (ti, &ap) in clusters.aps[dev].iter().enumerate() {
                let mut xr = xs[ti].row_mut(row);
                signal_features_into(slot.received[ap].view(), xr.as_slice_mut().expect("contiguous"));
            }
            y.row_mut(row).iter_mut().zip(labels_of(slot)).for_each(|(d, v)| *d = v);
            row += 1;
        }
    }
    SampleSet::new(xs, y)
}
