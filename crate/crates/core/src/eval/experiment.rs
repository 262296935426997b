use std::time::Instant;

use ndarray::{s, Array2};
use rayon::prelude::*;

use super::{best_accuracy, roc_exact, roc_sweep, ParetoRow, RocCurve, ScorePool};
use crate::baseline::{baseline_scores, Algorithm, PreparedSolver};
use crate::config::RunConfig;
use crate::detect::{
    ap_predictions, centralized_samples, centralized_scores, decentralized_samples, decentralized_scores,
    select_clusters, single_ap_samples, ClusterAssignment, FusionRule, PostMode,
};
use crate::error::{Error, Result};
use crate::scenario::{generate_dataset, AccessSlot, AccessSlotDataset};
use crate::seed::derive_seed;
use crate::slp::{pareto_mask, signal_features_into, train, ModelConfig, ParetoPoint, SampleSet, SlpModel, TrainReport};

/// Slots scored together in one batched forward pass.
const SLOT_CHUNK: usize = 64;

/// Per-mode score columns and labels for one chunk of slots.
type ChunkScores = (Vec<Vec<f64>>, Vec<bool>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    DecPond,
    DecFusion,
    Central,
    Baseline(Algorithm),
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::DecPond,
        Method::DecFusion,
        Method::Central,
        Method::Baseline(Algorithm::Ista),
        Method::Baseline(Algorithm::Fista),
        Method::Baseline(Algorithm::Amp),
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::DecPond => "slp-dec-pond",
            Method::DecFusion => "slp-dec-fusion",
            Method::Central => "slp-central",
            Method::Baseline(Algorithm::Ista) => "ista",
            Method::Baseline(Algorithm::Fista) => "fista",
            Method::Baseline(Algorithm::Amp) => "amp",
        }
    }

    /// Accepts the labels above and the short forms `dec-pond`,
    /// `dec-fusion` and `central`.
    pub fn parse(s: &str) -> Option<Method> {
        let s = s.strip_prefix("slp-").unwrap_or(s);
        match s {
            "dec-pond" => Some(Method::DecPond),
            "dec-fusion" => Some(Method::DecFusion),
            "central" => Some(Method::Central),
            other => Algorithm::parse(other).map(Method::Baseline),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Decentralized,
    Centralized,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Decentralized => "decentralized",
            StrategyKind::Centralized => "centralized",
        }
    }
}

/// The training and evaluation datasets of a configuration: one network,
/// slot stream 0 for training and stream 1 for evaluation.
pub fn generate_datasets(cfg: &RunConfig) -> Result<(AccessSlotDataset, AccessSlotDataset)> {
    let train = generate_dataset(&cfg.scenario(cfg.train_slots), cfg.seed, 0)?;
    let eval = generate_dataset(&cfg.scenario(cfg.eval_slots), cfg.seed, 1)?;
    Ok((train, eval))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDetector {
    pub kind: StrategyKind,
    /// One shared model, or one per AP when `per_ap_models` is set.
    pub models: Vec<SlpModel>,
    pub reports: Vec<TrainReport>,
}

fn fit(cfg: &RunConfig, model_cfg: ModelConfig, samples: &SampleSet, index: u64) -> Result<(SlpModel, TrainReport)> {
    let init = SlpModel::new(model_cfg, derive_seed(cfg.seed, "model-init", index))?;
    let (tr, va) = samples.split_validation(cfg.validation_fraction);
    train(&init, &tr, &va, &cfg.train_config(derive_seed(cfg.seed, "train-order", index)))
}

/// Builds the training samples for `kind` and fits the detector.
pub fn train_detector(cfg: &RunConfig, data: &AccessSlotDataset, kind: StrategyKind) -> Result<TrainedDetector> {
    let model_cfg = |t| {
        ModelConfig::for_signal(data.pilot_len(), data.num_antennas, cfg.hidden_layers, cfg.hidden_width, data.num_devices(), t)
    };
    match kind {
        StrategyKind::Decentralized if cfg.per_ap_models => {
            let mut models = Vec::new();
            let mut reports = Vec::new();
            for ap in 0..data.num_aps() {
                let samples = single_ap_samples(&data.slots, ap)?;
                let (m, r) = fit(cfg, model_cfg(1), &samples, ap as u64)?;
                models.push(m);
                reports.push(r);
            }
            Ok(TrainedDetector { kind, models, reports })
        }
        StrategyKind::Decentralized => {
            let samples = decentralized_samples(&data.slots, cfg.aps_per_slot)?;
            let (m, r) = fit(cfg, model_cfg(1), &samples, 0)?;
            Ok(TrainedDetector { kind, models: vec![m], reports: vec![r] })
        }
        StrategyKind::Centralized => {
            let clusters = select_clusters(&data.lsf_map, cfg.cluster_size)?;
            let samples = centralized_samples(
                &data.slots,
                &clusters,
                cfg.devices_per_slot,
                derive_seed(cfg.seed, "central-samples", 0),
            )?;
            let (m, r) = fit(cfg, model_cfg(cfg.cluster_size), &samples, 0)?;
            Ok(TrainedDetector { kind, models: vec![m], reports: vec![r] })
        }
    }
}

fn truth_of(slot: &AccessSlot) -> impl Iterator<Item = bool> + '_ {
    slot.activity.a.iter().copied()
}

/// Pooled decentralized scores, one pool per requested post-processing mode.
pub fn decentralized_pools(
    models: &[SlpModel],
    data: &AccessSlotDataset,
    clusters: &ClusterAssignment,
    modes: &[PostMode],
) -> Result<Vec<ScorePool>> {
    let m = data.num_aps();
    let dim = 2 * data.pilot_len() * data.num_antennas;
    let chunks: Vec<Result<ChunkScores>> = data
        .slots
        .par_chunks(SLOT_CHUNK)
        .map(|chunk| {
            let preds_all = if models.len() == 1 {
                let mut x = Array2::zeros((chunk.len() * m, dim));
                for (i, slot) in chunk.iter().enumerate() {
                    for (ap, y) in slot.received.iter().enumerate() {
                        let mut row = x.row_mut(i * m + ap);
                        signal_features_into(y.view(), row.as_slice_mut().expect("contiguous"));
                    }
                }
                models[0].ensure_compatible(data.num_devices(), dim, 1)?;
                models[0].forward_batch(&[x.view()])?
            } else {
                let mut out = Array2::zeros((chunk.len() * m, data.num_devices()));
                for (i, slot) in chunk.iter().enumerate() {
                    out.slice_mut(s![i * m..(i + 1) * m, ..]).assign(&ap_predictions(models, slot)?);
                }
                out
            };
            let mut scores = vec![Vec::with_capacity(chunk.len() * data.num_devices()); modes.len()];
            let mut truth = Vec::with_capacity(chunk.len() * data.num_devices());
            for (i, slot) in chunk.iter().enumerate() {
                let preds = preds_all.slice(s![i * m..(i + 1) * m, ..]);
                for (mi, &mode) in modes.iter().enumerate() {
                    scores[mi].extend(decentralized_scores(preds, clusters, mode)?);
                }
                truth.extend(truth_of(slot));
            }
            Ok((scores, truth))
        })
        .collect();
    let mut pools = vec![ScorePool::default(); modes.len()];
    for chunk in chunks {
        let (scores, truth) = chunk?;
        for (pool, s) in pools.iter_mut().zip(&scores) {
            pool.extend(s, &truth);
        }
    }
    Ok(pools)
}

fn pool_per_slot<F>(data: &AccessSlotDataset, score: F) -> Result<ScorePool>
where
    F: Fn(&AccessSlot) -> Result<Vec<f64>> + Sync,
{
    let per_slot: Vec<Result<Vec<f64>>> = data.slots.par_iter().map(&score).collect();
    let mut pool = ScorePool::default();
    for (slot, scores) in data.slots.iter().zip(per_slot) {
        let truth: Vec<bool> = truth_of(slot).collect();
        pool.extend(&scores?, &truth);
    }
    Ok(pool)
}

pub fn centralized_pool(model: &SlpModel, data: &AccessSlotDataset, clusters: &ClusterAssignment) -> Result<ScorePool> {
    pool_per_slot(data, |slot| centralized_scores(model, slot, clusters))
}

/// Raw baseline row energies pooled over slots (not yet rank-normalized).
pub fn baseline_pool(cfg: &RunConfig, data: &AccessSlotDataset, algorithm: Algorithm, clusters: &ClusterAssignment) -> Result<ScorePool> {
    let solver = PreparedSolver::from_codebook(&data.codebook, cfg.solver_config(algorithm))?;
    pool_per_slot(data, |slot| baseline_scores(slot, &solver, clusters, cfg.baseline_aggregation))
}

/// Summary of one method on one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    /// Curve over the configured threshold grid (baselines rank-normalized).
    pub curve: RocCurve,
    /// AUC of the exact empirical ROC.
    pub auc_exact: f64,
    pub best_tau: f64,
    pub best_accuracy: f64,
}

pub fn summarize(method: Method, pool: &ScorePool, num_taus: usize) -> Result<MethodResult> {
    let label = method.label();
    let swept = match method {
        Method::Baseline(_) => roc_sweep(label, &pool.rank_normalized(), num_taus)?,
        _ => roc_sweep(label, pool, num_taus)?,
    };
    let exact = roc_exact(label, pool)?;
    let (best_tau, best_accuracy) = best_accuracy(pool);
    Ok(MethodResult { method, curve: swept, auc_exact: exact.auc, best_tau, best_accuracy })
}

/// Trained detectors needed by a set of methods.
#[derive(Debug, Clone, Default)]
pub struct Detectors {
    pub decentralized: Option<TrainedDetector>,
    pub centralized: Option<TrainedDetector>,
}

impl Detectors {
    pub fn train_for(cfg: &RunConfig, train_data: &AccessSlotDataset, methods: &[Method]) -> Result<Self> {
        let mut d = Detectors::default();
        if methods.iter().any(|m| matches!(m, Method::DecPond | Method::DecFusion)) {
            d.decentralized = Some(train_detector(cfg, train_data, StrategyKind::Decentralized)?);
        }
        if methods.contains(&Method::Central) {
            d.centralized = Some(train_detector(cfg, train_data, StrategyKind::Centralized)?);
        }
        Ok(d)
    }
}

/// Pooled scores of every method on `data`, in the order given.
pub fn score_methods(
    cfg: &RunConfig,
    detectors: &Detectors,
    data: &AccessSlotDataset,
    methods: &[Method],
) -> Result<Vec<(Method, ScorePool)>> {
    let clusters = select_clusters(&data.lsf_map, cfg.cluster_size)?;
    let fusion = PostMode::Fusion(cfg.fusion_rule);
    let dec_modes: Vec<(Method, PostMode)> = methods
        .iter()
        .filter_map(|&m| match m {
            Method::DecPond => Some((m, PostMode::Pond)),
            Method::DecFusion => Some((m, fusion)),
            _ => None,
        })
        .collect();
    let mut dec_pools = Vec::new();
    if !dec_modes.is_empty() {
        let det = detectors
            .decentralized
            .as_ref()
            .ok_or_else(|| Error::Config("no decentralized detector available".into()))?;
        let modes: Vec<PostMode> = dec_modes.iter().map(|p| p.1).collect();
        dec_pools = decentralized_pools(&det.models, data, &clusters, &modes)?;
    }
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let pool = match m {
            Method::DecPond | Method::DecFusion => {
                let idx = dec_modes.iter().position(|p| p.0 == m).expect("collected above");
                dec_pools[idx].clone()
            }
            Method::Central => {
                let det = detectors
                    .centralized
                    .as_ref()
                    .ok_or_else(|| Error::Config("no centralized detector available".into()))?;
                centralized_pool(&det.models[0], data, &clusters)?
            }
            Method::Baseline(alg) => baseline_pool(cfg, data, alg, &clusters)?,
        };
        out.push((m, pool));
    }
    Ok(out)
}

/// Generates data, trains what `methods` need, and summarizes each method.
pub fn run_methods(cfg: &RunConfig, methods: &[Method]) -> Result<Vec<MethodResult>> {
    cfg.validate()?;
    let needs_training = methods.iter().any(|m| !matches!(m, Method::Baseline(_)));
    let eval = generate_dataset(&cfg.scenario(cfg.eval_slots), cfg.seed, 1)?;
    let detectors = if needs_training {
        let train_data = generate_dataset(&cfg.scenario(cfg.train_slots), cfg.seed, 0)?;
        Detectors::train_for(cfg, &train_data, methods)?
    } else {
        Detectors::default()
    };
    score_methods(cfg, &detectors, &eval, methods)?
        .iter()
        .map(|(m, pool)| summarize(*m, pool, cfg.num_taus))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    PilotLen,
    NumDevices,
    Sparsity,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::PilotLen => "L",
            SweepAxis::NumDevices => "K",
            SweepAxis::Sparsity => "eps",
        }
    }

    pub fn parse(s: &str) -> Option<SweepAxis> {
        match s {
            "L" | "pilot_len" => Some(SweepAxis::PilotLen),
            "K" | "num_devices" => Some(SweepAxis::NumDevices),
            "eps" | "epsilon" | "sparsity" => Some(SweepAxis::Sparsity),
            _ => None,
        }
    }

    /// The standard grid for this axis.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::PilotLen => vec![10.0, 20.0, 30.0, 40.0],
            SweepAxis::NumDevices => vec![50.0, 100.0, 150.0, 200.0],
            SweepAxis::Sparsity => vec![0.05, 0.1, 0.15, 0.2],
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = cfg.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{} must be a positive integer, got {v}", self.as_str())))
            }
        };
        match self {
            SweepAxis::PilotLen => c.pilot_len = as_count(value)?,
            SweepAxis::NumDevices => c.num_devices = as_count(value)?,
            SweepAxis::Sparsity => c.epsilon = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub config: RunConfig,
    pub results: Vec<MethodResult>,
}

/// Regenerates data, retrains and evaluates `methods` at every value.
///
/// All points share the master seed, so they see the same AP and device
/// placement and differ only in the swept parameter (and what it changes).
pub fn run_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64], methods: &[Method]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Config("a sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&value| {
            let config = axis.apply(cfg, value)?;
            log::info!("sweep {} = {value}", axis.as_str());
            let results = run_methods(&config, methods)?;
            Ok(SweepPoint { value, config, results })
        })
        .collect()
}

/// Trains one decentralized detector per `(V, Z)` on the reduced budget and
/// flags the Pareto-efficient configurations of (parameters, training loss).
pub fn pareto_experiment(cfg: &RunConfig, train_data: &AccessSlotDataset) -> Result<Vec<ParetoRow>> {
    let n = cfg.pareto_train_slots.min(train_data.len());
    let subset = AccessSlotDataset { slots: train_data.slots[..n].to_vec(), ..train_data.clone() };
    let mut rows = Vec::new();
    for &z in &cfg.pareto_depths {
        for &v in &cfg.pareto_widths {
            let mut c = cfg.clone();
            c.hidden_width = v;
            c.hidden_layers = z;
            c.max_epochs = cfg.pareto_max_epochs;
            let det = train_detector(&c, &subset, StrategyKind::Decentralized)?;
            let report = &det.reports[0];
            log::info!("pareto V = {v}, Z = {z}: {} params, loss {:.5}", report.param_count, report.best_train_loss());
            rows.push(ParetoRow {
                v,
                z,
                params: report.param_count,
                train_loss: report.best_train_loss(),
                pareto_flag: false,
            });
        }
    }
    let points: Vec<ParetoPoint> = rows.iter().map(|r| ParetoPoint { params: r.params, loss: r.train_loss }).collect();
    for (row, flag) in rows.iter_mut().zip(pareto_mask(&points)) {
        row.pareto_flag = flag;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingEntry {
    pub method: String,
    /// Per-slot wall-clock time, median over repetitions.
    pub median_s: f64,
    pub mean_s: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub entries: Vec<TimingEntry>,
    pub warmup: usize,
    pub slots_per_rep: usize,
}

impl TimingReport {
    pub fn median_of(&self, method: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.method == method).map(|e| e.median_s)
    }
}

/// A per-slot inference routine under timing.
/// Per-slot scoring closure.
pub type SlotScorer<'a> = Box<dyn Fn(&AccessSlot) -> Result<Vec<f64>> + 'a>;

pub type TimedMethod<'a> = (String, SlotScorer<'a>);

/// Times every method on the same slots in the calling thread.
///
/// Each repetition runs the method over all `slots`; the reported figure is
/// the repetition time divided by the slot count.
pub fn bench_timing(methods: &[TimedMethod<'_>], slots: &[AccessSlot], reps: usize, warmup: usize) -> Result<TimingReport> {
    if reps < 5 {
        return Err(Error::Config(format!("timing needs at least 5 repetitions, got {reps}")));
    }
    if slots.is_empty() {
        return Err(Error::Config("timing needs at least one slot".into()));
    }
    let mut entries = Vec::with_capacity(methods.len());
    for (name, run) in methods {
        let mut sink = 0.0;
        for _ in 0..warmup {
            for slot in slots {
                sink += run(slot)?.first().copied().unwrap_or(0.0);
            }
        }
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            for slot in slots {
                sink += run(slot)?.first().copied().unwrap_or(0.0);
            }
            times.push(start.elapsed().as_secs_f64() / slots.len() as f64);
        }
        std::hint::black_box(sink);
        let mean_s = times.iter().sum::<f64>() / reps as f64;
        times.sort_by(f64::total_cmp);
        let median_s = if reps % 2 == 1 { times[reps / 2] } else { (times[reps / 2 - 1] + times[reps / 2]) / 2.0 };
        entries.push(TimingEntry { method: name.clone(), median_s, mean_s, reps });
    }
    Ok(TimingReport { entries, warmup, slots_per_rep: slots.len() })
}

/// The deployed inference path of each method, ready for [`bench_timing`].
///
/// SLP entries need the matching detector; baselines are prepared once per
/// codebook (like loading a model). `constant` returns a fixed score vector
/// and bounds the harness overhead.
pub fn timed_methods<'a>(
    cfg: &RunConfig,
    detectors: &'a Detectors,
    data: &'a AccessSlotDataset,
    methods: &[Method],
) -> Result<Vec<TimedMethod<'a>>> {
    let clusters = select_clusters(&data.lsf_map, cfg.cluster_size)?;
    let k = data.num_devices();
    let mut out: Vec<TimedMethod<'a>> = Vec::new();
    for &m in methods {
        let clusters = clusters.clone();
        let entry: SlotScorer<'a> = match m {
            Method::DecPond | Method::DecFusion => {
                let det = detectors
                    .decentralized
                    .as_ref()
                    .ok_or_else(|| Error::Config("no decentralized detector to time".into()))?;
                let mode = if m == Method::DecPond { PostMode::Pond } else { PostMode::Fusion(cfg.fusion_rule) };
                Box::new(move |slot: &AccessSlot| {
                    let preds = ap_predictions(&det.models, slot)?;
                    decentralized_scores(preds.view(), &clusters, mode)
                })
            }
            Method::Central => {
                let det = detectors
                    .centralized
                    .as_ref()
                    .ok_or_else(|| Error::Config("no centralized detector to time".into()))?;
                Box::new(move |slot: &AccessSlot| centralized_scores(&det.models[0], slot, &clusters))
            }
            Method::Baseline(alg) => {
                let solver = PreparedSolver::from_codebook(&data.codebook, cfg.solver_config(alg))?;
                let agg = cfg.baseline_aggregation;
                Box::new(move |slot: &AccessSlot| baseline_scores(slot, &solver, &clusters, agg))
            }
        };
        out.push((m.label().to_string(), entry));
    }
    out.push(("constant".to_string(), Box::new(move |_slot: &AccessSlot| Ok(vec![0.5; k]))));
    Ok(out)
}

/// Fusion rule label used in method names when it is not the default.
pub fn fusion_label(rule: FusionRule) -> String {
    if rule == FusionRule::Majority {
        Method::DecFusion.label().to_string()
    } else {
        format!("{}-{}", Method::DecFusion.label(), rule.as_str())
    }
}
