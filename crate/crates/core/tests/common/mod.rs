//! Independent oracles and fixed-seed checks shared by the integration
//! suites and the acceptance runner.
#![allow(dead_code)]

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;

use cfad_core::baseline::{group_soft_threshold, ista, Algorithm, SolverConfig};
use cfad_core::channel::{complex_normal, draw_small_scale, large_scale_map, place_network, FadingMode, GeometryConfig};
use cfad_core::config::RunConfig;
use cfad_core::detect::{fuse_majority, ponderate};
use cfad_core::eval::{roc_exact, roc_sweep, run_methods, write_auc_csv, write_roc_csv, AucRow, Method, ScorePool};
use cfad_core::scenario::{draw_activity, generate_dataset, load_dataset, save_dataset};
use cfad_core::seed::{self, SimRng};
use cfad_core::slp::{load_model, loss_and_gradients, save_model, Gradients, ModelConfig, SlpModel};

/// Outcome of one check: verdict plus a one-line account of the evidence.
#[derive(Debug, Clone)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Check { pass, detail: detail.into() }
    }

    /// Conjunction of several checks, keeping every detail.
    pub fn all(parts: Vec<(&str, Check)>) -> Self {
        let pass = parts.iter().all(|(_, c)| c.pass);
        let mut detail = String::new();
        for (i, (name, c)) in parts.iter().enumerate() {
            if i > 0 {
                detail.push_str("; ");
            }
            let _ = write!(detail, "{name}: {} ({})", if c.pass { "ok" } else { "FAILED" }, c.detail);
        }
        Check { pass, detail }
    }
}

// ---------------------------------------------------------------- gradients

pub fn random_small_model(rng: &mut SimRng) -> (SlpModel, Vec<Array2<f64>>, Array2<f64>) {
    let cfg = ModelConfig {
        input_dim: rng.random_range(2..7),
        hidden_layers: rng.random_range(1..4),
        hidden_width: rng.random_range(2..7),
        num_devices: rng.random_range(1..5),
        cluster_inputs: rng.random_range(1..4),
    };
    let mut model = SlpModel::new(cfg, rng.random()).unwrap();
    for layer in model.hidden.iter_mut().chain(std::iter::once(&mut model.output)) {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let batch = rng.random_range(1..6);
    let inputs = (0..cfg.cluster_inputs)
        .map(|_| Array2::from_shape_simple_fn((batch, cfg.input_dim), || rng.random_range(-2.0..2.0)))
        .collect();
    let labels = Array2::from_shape_simple_fn((batch, cfg.num_devices), || f64::from(u8::from(rng.random_bool(0.5))));
    (model, inputs, labels)
}

fn flat_gradients(g: &Gradients) -> Vec<f64> {
    g.hidden
        .iter()
        .chain(std::iter::once(&g.output))
        .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
        .collect()
}

/// Number of scalar parameters, visited in the same order as `flat_gradients`.
fn param_total(model: &SlpModel) -> usize {
    model.hidden.iter().chain(std::iter::once(&model.output)).map(|l| l.weights.len() + l.bias.len()).sum()
}

fn param_mut(model: &mut SlpModel, mut index: usize) -> &mut f64 {
    for layer in model.hidden.iter_mut().chain(std::iter::once(&mut model.output)) {
        let nw = layer.weights.len();
        if index < nw {
            return layer.weights.iter_mut().nth(index).unwrap();
        }
        index -= nw;
        let nb = layer.bias.len();
        if index < nb {
            return &mut layer.bias[index];
        }
        index -= nb;
    }
    panic!("parameter index out of range")
}

/// Central finite differences of the summed loss w.r.t. every parameter.
pub fn finite_difference_gradient(model: &SlpModel, inputs: &[Array2<f64>], labels: &Array2<f64>, h: f64) -> Vec<f64> {
    let views: Vec<ArrayView2<'_, f64>> = inputs.iter().map(|x| x.view()).collect();
    let mut probe = model.clone();
    (0..param_total(model))
        .map(|i| {
            let orig = *param_mut(&mut probe, i);
            *param_mut(&mut probe, i) = orig + h;
            let up = loss_and_gradients(&probe, &views, labels.view()).unwrap().0;
            *param_mut(&mut probe, i) = orig - h;
            let down = loss_and_gradients(&probe, &views, labels.view()).unwrap().0;
            *param_mut(&mut probe, i) = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)`.
pub fn gradient_relative_error(model: &SlpModel, inputs: &[Array2<f64>], labels: &Array2<f64>) -> f64 {
    let views: Vec<ArrayView2<'_, f64>> = inputs.iter().map(|x| x.view()).collect();
    let analytic = flat_gradients(&loss_and_gradients(model, &views, labels.view()).unwrap().1);
    let numeric = finite_difference_gradient(model, inputs, labels, 1e-6);
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-300)
}

pub fn gradient_check(models: usize, master: u64) -> Check {
    let mut rng = seed::stream(master, "gradient-check", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..models {
        let (model, inputs, labels) = random_small_model(&mut rng);
        worst = worst.max(gradient_relative_error(&model, &inputs, &labels));
    }
    Check::new(worst < 1e-4, format!("{models} models, worst relative error {worst:.2e} (limit 1e-4)"))
}

// ------------------------------------------------------------- baselines

pub fn random_complex(rng: &mut SimRng, rows: usize, cols: usize) -> Array2<Complex64> {
    Array2::from_shape_simple_fn((rows, cols), || complex_normal(rng, 1.0))
}

/// Worst relative objective increase between consecutive ISTA iterations.
pub fn ista_worst_increase(rng: &mut SimRng) -> f64 {
    let l = rng.random_range(2..10);
    let k = rng.random_range(2..14);
    let n = rng.random_range(1..5);
    let s = random_complex(rng, l, k);
    let y = random_complex(rng, l, n);
    let cfg = SolverConfig {
        max_iters: 40,
        lambda: Some(rng.random_range(0.0..2.0)),
        seed: rng.random(),
        ..SolverConfig::new(Algorithm::Ista)
    };
    let est = ista(y.view(), s.view(), &cfg).unwrap();
    est.objective
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(1e-300))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn ista_descent_check(instances: usize, master: u64) -> Check {
    let mut rng = seed::stream(master, "ista-descent", 0);
    let worst = (0..instances).map(|_| ista_worst_increase(&mut rng)).fold(f64::NEG_INFINITY, f64::max);
    Check::new(worst <= 1e-10, format!("{instances} instances, worst relative step {worst:.2e} (limit +1e-10)"))
}

/// Largest deviation of `group_soft_threshold` from the row-wise closed form.
pub fn soft_threshold_error(x: &Array2<Complex64>, threshold: f64) -> f64 {
    let mut out = x.clone();
    group_soft_threshold(&mut out, threshold);
    let mut worst: f64 = 0.0;
    for (row_in, row_out) in x.outer_iter().zip(out.outer_iter()) {
        let norm = row_in.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for (a, b) in row_in.iter().zip(row_out.iter()) {
            let expected = if norm <= threshold { Complex64::new(0.0, 0.0) } else { a * (1.0 - threshold / norm) };
            if norm <= threshold && *b != Complex64::new(0.0, 0.0) {
                return f64::INFINITY;
            }
            worst = worst.max((b - expected).norm() / norm.max(1.0));
        }
    }
    worst
}

pub fn soft_threshold_check(instances: usize, master: u64) -> Check {
    let mut rng = seed::stream(master, "soft-threshold", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (r, c) = (rng.random_range(1..12), rng.random_range(1..6));
        let x = random_complex(&mut rng, r, c);
        worst = worst.max(soft_threshold_error(&x, rng.random_range(0.0..3.0)));
    }
    Check::new(worst < 1e-14, format!("{instances} matrices, worst deviation {worst:.2e}"))
}

// ------------------------------------------------------------- detection

/// Weight normalization and scale invariance of `ponderate`.
pub fn ponderation_deviation(rng: &mut SimRng) -> f64 {
    let t = rng.random_range(1..8);
    let beta: Vec<f64> = (0..t).map(|_| 10f64.powf(-rng.random_range(6.0..14.0))).collect();
    let preds: Vec<f64> = (0..t).map(|_| rng.random()).collect();
    let total: f64 = beta.iter().sum();
    let mut worst: f64 = 0.0;
    // unit vectors recover each normalized weight, and the weights sum to one
    let mut weight_sum = 0.0;
    for j in 0..t {
        let e: Vec<f64> = (0..t).map(|i| f64::from(u8::from(i == j))).collect();
        let w = ponderate(&e, &beta).unwrap();
        worst = worst.max((w - beta[j] / total).abs());
        weight_sum += w;
    }
    worst = worst.max((weight_sum - 1.0).abs());
    let c = rng.random();
    worst = worst.max((ponderate(&vec![c; t], &beta).unwrap() - c).abs());
    let scale = 10f64.powf(rng.random_range(-6.0..6.0));
    let scaled: Vec<f64> = beta.iter().map(|b| b * scale).collect();
    worst.max((ponderate(&preds, &scaled).unwrap() - ponderate(&preds, &beta).unwrap()).abs())
}

pub fn ponderation_check(instances: usize, master: u64) -> Check {
    let mut rng = seed::stream(master, "ponderation", 0);
    let worst = (0..instances).map(|_| ponderation_deviation(&mut rng)).fold(0.0, f64::max);
    Check::new(worst <= 1e-12, format!("{instances} clusters, worst deviation {worst:.2e} (limit 1e-12)"))
}

pub fn fusion_exhaustive_check() -> Check {
    let mut cases = 0;
    for t in 1..=6usize {
        for mask in 0u32..(1 << t) {
            let votes: Vec<bool> = (0..t).map(|i| mask >> i & 1 == 1).collect();
            let count = votes.iter().filter(|&&v| v).count();
            if fuse_majority(&votes) != (2 * count >= t) {
                return Check::new(false, format!("mismatch at T = {t}, votes {votes:?}"));
            }
            cases += 1;
        }
    }
    Check::new(true, format!("all {cases} vote patterns for T = 1..6"))
}

// ------------------------------------------------------------- evaluation

pub fn mann_whitney(pool: &ScorePool) -> f64 {
    let pos: Vec<f64> = pool.scores.iter().zip(&pool.truth).filter(|p| *p.1).map(|p| *p.0).collect();
    let neg: Vec<f64> = pool.scores.iter().zip(&pool.truth).filter(|p| !*p.1).map(|p| *p.0).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Monotonicity, endpoints and the rank-statistic AUC oracle on one pool.
pub fn roc_invariant_violation(pool: &ScorePool, num_taus: usize) -> Option<String> {
    for curve in [roc_sweep("m", pool, num_taus).unwrap(), roc_exact("m", pool).unwrap()] {
        let pts = &curve.points;
        if pts.windows(2).any(|w| w[1].tau < w[0].tau || w[1].p_fa > w[0].p_fa || w[1].p_d > w[0].p_d) {
            return Some("curve not monotone in tau".into());
        }
        let (first, last) = (pts[0], pts[pts.len() - 1]);
        if (first.p_fa, first.p_d) != (1.0, 1.0) || (last.p_fa, last.p_d) != (0.0, 0.0) {
            return Some(format!("endpoints {first:?} / {last:?}"));
        }
        if !(0.0..=1.0).contains(&curve.auc) {
            return Some(format!("auc {} outside [0, 1]", curve.auc));
        }
    }
    let exact = roc_exact("m", pool).unwrap().auc;
    let oracle = mann_whitney(pool);
    ((exact - oracle).abs() > 1e-12).then(|| format!("exact auc {exact} vs Mann-Whitney {oracle}"))
}

pub fn random_pool(rng: &mut SimRng, n: usize) -> ScorePool {
    let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    truth[0] = true;
    truth[1] = false;
    // coarse quantization forces ties
    let scores = truth
        .iter()
        .map(|&t| ((rng.random::<f64>() + if t { 0.3 } else { 0.0 }).min(1.0) * 20.0).round() / 20.0)
        .collect();
    ScorePool::new(scores, truth).unwrap()
}

pub fn roc_check(instances: usize, master: u64) -> Check {
    let mut rng = seed::stream(master, "roc", 0);
    for i in 0..instances {
        let n = rng.random_range(4..200);
        let pool = random_pool(&mut rng, n);
        if let Some(msg) = roc_invariant_violation(&pool, 101) {
            return Check::new(false, format!("pool {i}: {msg}"));
        }
    }
    Check::new(true, format!("{instances} pools (grid and exact curves, AUC vs Mann-Whitney)"))
}

// ------------------------------------------------------------- artifacts

pub fn tiny_run_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        num_aps: 4,
        num_devices: 8,
        pilot_len: 6,
        cluster_size: 2,
        epsilon: 0.25,
        area_side_m: 300.0,
        train_slots: 300,
        eval_slots: 100,
        hidden_width: 16,
        max_epochs: 4,
        batch_size: 32,
        ista_iters: 15,
        fista_iters: 15,
        amp_iters: 8,
        num_taus: 51,
        ..RunConfig::default()
    }
}

pub fn round_trip_check(master: u64) -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run_config(master);
    let data = generate_dataset(&cfg.scenario(20), master, 0).unwrap();
    let dpath = dir.path().join("d.cfds");
    save_dataset(&data, &dpath).unwrap();
    let data_ok = load_dataset(&dpath).unwrap() == data;
    let model_cfg = ModelConfig::for_signal(6, 2, 2, 9, 8, 3);
    let model = SlpModel::new(model_cfg, master).unwrap();
    let mpath = dir.path().join("m.cfmd");
    save_model(&model, &mpath).unwrap();
    let model_ok = load_model(&mpath).unwrap() == model;
    Check::new(data_ok && model_ok, format!("dataset round-trip {data_ok}, model round-trip {model_ok}"))
}

/// Runs the whole tiny pipeline and returns the bytes of its roc and auc CSVs.
pub fn pipeline_csv_bytes(cfg: &RunConfig) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let results = run_methods(cfg, &Method::ALL).unwrap();
    let curves: Vec<_> = results.iter().map(|r| r.curve.clone()).collect();
    let rows: Vec<AucRow> = results
        .iter()
        .map(|r| AucRow {
            method: r.method.label().into(),
            axis: "none".into(),
            value: 0.0,
            auc: r.auc_exact,
            best_accuracy: r.best_accuracy,
        })
        .collect();
    write_roc_csv(&dir.path().join("roc.csv"), &curves).unwrap();
    write_auc_csv(&dir.path().join("auc.csv"), &rows).unwrap();
    let mut bytes = std::fs::read(dir.path().join("roc.csv")).unwrap();
    bytes.extend(std::fs::read(dir.path().join("auc.csv")).unwrap());
    bytes
}

pub fn determinism_check(master: u64) -> Check {
    let cfg = tiny_run_config(master);
    let a = pipeline_csv_bytes(&cfg);
    let b = pipeline_csv_bytes(&cfg);
    let c = pipeline_csv_bytes(&RunConfig { seed: master + 1, ..cfg });
    Check::new(a == b && a != c, format!("identical seeds give identical CSVs: {}; a new seed changes them: {}", a == b, a != c))
}

// -------------------------------------------------------------- generators

/// `|x − mean| ≤ 3·se`, with the z-score in the detail.
fn within_3se(what: &str, value: f64, mean: f64, se: f64) -> Check {
    let z = (value - mean) / se;
    Check::new(z.abs() <= 3.0, format!("{what} {value:.5} vs {mean}, z = {z:+.2}"))
}

pub fn activity_rate_check(master: u64) -> Check {
    let (epsilon, devices, draws) = (0.1, 1000, 1000);
    let active: usize = (0..draws)
        .map(|i| draw_activity(devices, epsilon, seed::derive_seed(master, "activity-check", i)).num_active())
        .sum();
    let n = (devices * draws as usize) as f64;
    within_3se(&format!("activity rate over {n:.0} draws"), active as f64 / n, epsilon, (epsilon * (1.0 - epsilon) / n).sqrt())
}

pub fn shadowing_check(master: u64) -> Check {
    let geometry = GeometryConfig { num_devices: 5000, ..GeometryConfig::default() };
    let topology = place_network(&geometry, seed::derive_seed(master, "shadow-check", 0)).unwrap();
    let lsf = large_scale_map(&topology, 1.0, seed::derive_seed(master, "shadow-check", 1)).unwrap();
    let samples: Vec<f64> = lsf.shadowing_db.iter().copied().collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Check::all(vec![
        ("mean", within_3se(&format!("shadowing mean over {n:.0}"), mean, 0.0, (1.0 / n).sqrt())),
        ("variance", within_3se("shadowing variance (dB^2)", var, 1.0, (2.0 / (n - 1.0)).sqrt())),
    ])
}

pub fn small_scale_check(master: u64) -> Check {
    let source = draw_small_scale(20, 2, 100, FadingMode::PerSlot, seed::derive_seed(master, "ssf-check", 0));
    let samples: Vec<Complex64> = (0..50).flat_map(|slot| source.block(slot).h.into_iter()).collect();
    let n = samples.len() as f64;
    let power = samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
    let re_var = samples.iter().map(|z| z.re * z.re).sum::<f64>() / n;
    let mean_re = samples.iter().map(|z| z.re).sum::<f64>() / n;
    let mean_im = samples.iter().map(|z| z.im).sum::<f64>() / n;
    Check::all(vec![
        // |h|² ~ Exp(1): variance 1
        ("power", within_3se(&format!("E|h|^2 over {n:.0}"), power, 1.0, (1.0 / n).sqrt())),
        // re² has mean 1/2 and variance 2·(1/2)² = 1/2
        ("real-part variance", within_3se("E[Re(h)^2]", re_var, 0.5, (0.5 / n).sqrt())),
        ("mean re", within_3se("E[Re h]", mean_re, 0.0, (0.5 / n).sqrt())),
        ("mean im", within_3se("E[Im h]", mean_im, 0.0, (0.5 / n).sqrt())),
    ])
}
