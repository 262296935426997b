//! Sparse-recovery baselines for the multiple-measurement-vector model
//! `Y = S X + W`, where the non-zero rows of `X` mark the active devices.
//!
//! ISTA and FISTA minimize the group LASSO `½‖Y − SX‖²_F + λ Σ_k ‖x_k‖₂`.
//! AMP runs on unit-norm columns with a row-wise soft-threshold denoiser
//! whose threshold tracks the residual level.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use num_complex::{Complex32, Complex64};
use rand::Rng;

use crate::detect::ClusterAssignment;
use crate::error::{Error, Result};
use crate::scenario::{AccessSlot, PilotCodebook};
use crate::seed;

pub const SPECTRAL_TOLERANCE: f64 = 1e-8;
pub const SPECTRAL_MAX_ITERS: usize = 500;
pub const DEFAULT_LAMBDA_FRACTION: f64 = 0.1;
pub const DEFAULT_AMP_ALPHA: f64 = 1.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ista,
    Fista,
    Amp,
}

impl Algorithm {
    /// Default iteration budget.
    pub fn default_iters(self) -> usize {
        match self {
            Algorithm::Ista => 235,
            Algorithm::Fista => 100,
            Algorithm::Amp => 18,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ista => "ista",
            Algorithm::Fista => "fista",
            Algorithm::Amp => "amp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ista" => Some(Algorithm::Ista),
            "fista" => Some(Algorithm::Fista),
            "amp" => Some(Algorithm::Amp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub max_iters: usize,
    /// Regularization weight; `None` selects `0.1 · max_k ‖s_kᴴY‖ / ‖s_k‖²`
    /// per measurement.
    pub lambda: Option<f64>,
    /// Multiplies the step bound `c`; values above 1 take shorter steps.
    pub step_scale: f64,
    /// AMP threshold multiplier on the residual level.
    pub amp_alpha: f64,
    /// Seeds the power-iteration start vector.
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        SolverConfig {
            algorithm,
            max_iters: algorithm.default_iters(),
            lambda: None,
            step_scale: 1.0,
            amp_alpha: DEFAULT_AMP_ALPHA,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("solver needs at least one iteration".into()));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return Err(Error::Config(format!("lambda must be >= 0, got {l}")));
            }
        }
        if !(self.step_scale > 0.0) || !(self.amp_alpha >= 0.0) {
            return Err(Error::Config("step_scale must be > 0 and amp_alpha >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseEstimate {
    /// K x N, in the scaling of the original pilots.
    pub x: Array2<Complex64>,
    /// Objective at the start and after every iteration (ISTA and FISTA).
    pub objective: Vec<f64>,
    /// `‖x̂_k‖²` per device.
    pub scores: Vec<f64>,
}

fn row_energies(x: &Array2<Complex64>) -> Vec<f64> {
    x.outer_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect()
}

fn frob_sqr(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

fn conj_t(s: ArrayView2<'_, Complex64>) -> Array2<Complex64> {
    s.t().mapv(|z| z.conj())
}

/// `σ_max(S)²` by power iteration on the smaller Gram matrix.
pub fn spectral_step(s: ArrayView2<'_, Complex64>, seed: u64) -> Result<f64> {
    if s.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::Domain("spectral step of an all-zero matrix".into()));
    }
    let sh = conj_t(s);
    let gram = if s.nrows() <= s.ncols() { s.dot(&sh) } else { sh.dot(&s) };
    let n = gram.nrows();
    let mut rng = seed::stream(seed, "power-iteration", 0);
    let mut v: Array1<Complex64> = (0..n).map(|_| Complex64::new(rng.random::<f64>() + 0.5, rng.random::<f64>() - 0.5)).collect();
    let mut estimate = 0.0;
    for _ in 0..SPECTRAL_MAX_ITERS {
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.mapv_inplace(|z| z / norm);
        let w = gram.dot(&v);
        // Rayleigh quotient of the Hermitian Gram matrix
        let next: f64 = v.iter().zip(w.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        if (next - estimate).abs() <= SPECTRAL_TOLERANCE * next.abs() {
            return Ok(next);
        }
        estimate = next;
        v = w;
    }
    Err(Error::NonConvergence(SPECTRAL_MAX_ITERS))
}

/// Shrinks every row of `x` towards zero by `threshold` in ℓ₂ norm.
pub fn group_soft_threshold(x: &mut Array2<Complex64>, threshold: f64) {
    for mut row in x.outer_iter_mut() {
        let norm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let scale = if norm > threshold { 1.0 - threshold / norm } else { 0.0 };
        row.mapv_inplace(|z| z * scale);
    }
}

/// `½‖Y − SX‖²_F + λ Σ_k ‖x_k‖₂`.
pub fn group_lasso_objective(
    y: ArrayView2<'_, Complex64>,
    s: ArrayView2<'_, Complex64>,
    x: &Array2<Complex64>,
    lambda: f64,
) -> f64 {
    let r = &y - &s.dot(x);
    0.5 * frob_sqr(&r) + lambda * row_energies(x).iter().map(|e| e.sqrt()).sum::<f64>()
}

/// `0.1 · max_k ‖s_kᴴY‖ / ‖s_k‖²`.
pub fn default_lambda(y: ArrayView2<'_, Complex64>, s: ArrayView2<'_, Complex64>) -> f64 {
    let corr = conj_t(s).dot(&y);
    corr.outer_iter()
        .zip(s.axis_iter(Axis(1)))
        .map(|(c, col)| {
            let cn = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let sn = col.iter().map(|z| z.norm_sqr()).sum::<f64>();
            if sn > 0.0 {
                cn / sn
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
        * DEFAULT_LAMBDA_FRACTION
}

/// Codebook-dependent quantities computed once and reused across slots.
#[derive(Debug, Clone)]
pub struct PreparedSolver {
    pub cfg: SolverConfig,
    s: Array2<Complex64>,
    s_h: Array2<Complex64>,
    /// Step bound `c` (already multiplied by `step_scale`).
    step: f64,
    /// Unit-norm columns for AMP.
    a: Array2<Complex64>,
    a_h: Array2<Complex64>,
    col_norm: Vec<f64>,
}

impl PreparedSolver {
    pub fn new(s: ArrayView2<'_, Complex64>, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let step = spectral_step(s, cfg.seed)? * cfg.step_scale;
        let col_norm: Vec<f64> = s
            .axis_iter(Axis(1))
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect();
        if col_norm.contains(&0.0) {
            return Err(Error::Domain("pilot matrix has an all-zero column".into()));
        }
        let mut a = s.to_owned();
        for (mut col, &n) in a.axis_iter_mut(Axis(1)).zip(&col_norm) {
            col.mapv_inplace(|z| z / n);
        }
        Ok(PreparedSolver {
            cfg,
            s: s.to_owned(),
            s_h: conj_t(s),
            step,
            a_h: conj_t(a.view()),
            a,
            col_norm,
        })
    }

    pub fn from_codebook(codebook: &PilotCodebook, cfg: SolverConfig) -> Result<Self> {
        Self::new(codebook.s.view(), cfg)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    fn check(&self, y: ArrayView2<'_, Complex64>) -> Result<()> {
        if y.nrows() != self.s.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "measurement has {} rows, pilots have length {}",
                y.nrows(),
                self.s.nrows()
            )));
        }
        Ok(())
    }

    fn lambda(&self, y: ArrayView2<'_, Complex64>) -> f64 {
        self.cfg.lambda.unwrap_or_else(|| default_lambda(y, self.s.view()))
    }

    /// `X + (1/c) Sᴴ(Y − S X)` followed by the group soft-threshold.
    fn prox_step(&self, y: ArrayView2<'_, Complex64>, x: &Array2<Complex64>, lambda: f64) -> Array2<Complex64> {
        let r = &y - &self.s.dot(x);
        let mut next = self.s_h.dot(&r);
        let inv = 1.0 / self.step;
        Zip::from(&mut next).and(x).for_each(|g, &xv| *g = xv + *g * inv);
        group_soft_threshold(&mut next, lambda / self.step);
        next
    }

    pub fn ista(&self, y: ArrayView2<'_, Complex64>) -> Result<SparseEstimate> {
        self.check(y)?;
        let lambda = self.lambda(y);
        let mut x = Array2::zeros((self.s.ncols(), y.ncols()));
        let mut objective = vec![group_lasso_objective(y, self.s.view(), &x, lambda)];
        for _ in 0..self.cfg.max_iters {
            x = self.prox_step(y, &x, lambda);
            objective.push(group_lasso_objective(y, self.s.view(), &x, lambda));
        }
        let scores = row_energies(&x);
        Ok(SparseEstimate { x, objective, scores })
    }

    pub fn fista(&self, y: ArrayView2<'_, Complex64>) -> Result<SparseEstimate> {
        self.check(y)?;
        let lambda = self.lambda(y);
        let mut x: Array2<Complex64> = Array2::zeros((self.s.ncols(), y.ncols()));
        let mut z = x.clone();
        let mut t = 1.0f64;
        let mut objective = vec![group_lasso_objective(y, self.s.view(), &x, lambda)];
        for _ in 0..self.cfg.max_iters {
            let next = self.prox_step(y, &z, lambda);
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let momentum = (t - 1.0) / t_next;
            z = &next + &((&next - &x) * Complex64::new(momentum, 0.0));
            x = next;
            t = t_next;
            objective.push(group_lasso_objective(y, self.s.view(), &x, lambda));
        }
        let scores = row_energies(&x);
        Ok(SparseEstimate { x, objective, scores })
    }

    pub fn amp(&self, y: ArrayView2<'_, Complex64>) -> Result<SparseEstimate> {
        self.check(y)?;
        let (l, k) = self.a.dim();
        let n = y.ncols();
        let ratio = k as f64 / l as f64;
        let mut x: Array2<Complex64> = Array2::zeros((k, n));
        let mut r = y.to_owned();
        for iter in 1..=self.cfg.max_iters {
            let r_norm = frob_sqr(&r).sqrt();
            if !r_norm.is_finite() {
                return Err(Error::Divergence { epoch: iter });
            }
            let theta = self.cfg.amp_alpha * r_norm / ((l * n) as f64).sqrt();
            let mut v = self.a_h.dot(&r);
            v += &x;
            // mean divergence of the row-wise complex soft-threshold
            let mut deriv = 0.0;
            for row in v.outer_iter() {
                let norm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if norm > theta {
                    deriv += 1.0 - theta * (2 * n - 1) as f64 / (2 * n) as f64 / norm;
                }
            }
            deriv /= k as f64;
            group_soft_threshold(&mut v, theta);
            x = v;
            let onsager = &r * Complex64::new(ratio * deriv, 0.0);
            r = &y - &self.a.dot(&x);
            r += &onsager;
        }
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Divergence { epoch: self.cfg.max_iters });
        }
        // back to the scaling of S: x_S = x_A / ‖s_k‖
        for (mut row, &cn) in x.outer_iter_mut().zip(&self.col_norm) {
            row.mapv_inplace(|z| z / cn);
        }
        let scores = row_energies(&x);
        Ok(SparseEstimate { x, objective: Vec::new(), scores })
    }

    pub fn solve(&self, y: ArrayView2<'_, Complex64>) -> Result<SparseEstimate> {
        match self.cfg.algorithm {
            Algorithm::Ista => self.ista(y),
            Algorithm::Fista => self.fista(y),
            Algorithm::Amp => self.amp(y),
        }
    }
}

pub fn ista(y: ArrayView2<'_, Complex64>, s: ArrayView2<'_, Complex64>, cfg: &SolverConfig) -> Result<SparseEstimate> {
    PreparedSolver::new(s, SolverConfig { algorithm: Algorithm::Ista, ..*cfg })?.ista(y)
}

pub fn fista(y: ArrayView2<'_, Complex64>, s: ArrayView2<'_, Complex64>, cfg: &SolverConfig) -> Result<SparseEstimate> {
    PreparedSolver::new(s, SolverConfig { algorithm: Algorithm::Fista, ..*cfg })?.fista(y)
}

pub fn amp(y: ArrayView2<'_, Complex64>, s: ArrayView2<'_, Complex64>, cfg: &SolverConfig) -> Result<SparseEstimate> {
    PreparedSolver::new(s, SolverConfig { algorithm: Algorithm::Amp, ..*cfg })?.amp(y)
}

/// How per-AP row energies become one score per device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BaselineAggregation {
    /// `Σ_t (β_t / Σβ) · ‖x̂_k‖²` over the device's cluster.
    #[default]
    ClusterWeighted,
    /// Row energy at the device's strongest AP only.
    DominantAp,
}

fn to_c64(y: ArrayView2<'_, Complex32>) -> Array2<Complex64> {
    y.mapv(|z| Complex64::new(f64::from(z.re), f64::from(z.im)))
}

/// Per-device baseline statistic for one slot.
pub fn baseline_scores(
    slot: &AccessSlot,
    solver: &PreparedSolver,
    clusters: &ClusterAssignment,
    aggregation: BaselineAggregation,
) -> Result<Vec<f64>> {
    let k = clusters.num_devices();
    let m = slot.received.len();
    if solver.s.ncols() != k {
        return Err(Error::Mismatch(format!(
            "solver built for {} devices, clusters cover {k}",
            solver.s.ncols()
        )));
    }
    let mut needed = vec![false; m];
    for aps in &clusters.aps {
        let used = match aggregation {
            BaselineAggregation::ClusterWeighted => &aps[..],
            BaselineAggregation::DominantAp => &aps[..1],
        };
        for &a in used {
            *needed.get_mut(a).ok_or_else(|| Error::Mismatch(format!("cluster AP {a} out of range")))? = true;
        }
    }
    let mut energy: Vec<Option<Vec<f64>>> = vec![None; m];
    for (ap, slot_energy) in energy.iter_mut().enumerate() {
        if needed[ap] {
            *slot_energy = Some(solver.solve(to_c64(slot.received[ap].view()).view())?.scores);
        }
    }
    let mut scores = Vec::with_capacity(k);
    for (dev, aps) in clusters.aps.iter().enumerate() {
        let s = match aggregation {
            BaselineAggregation::DominantAp => energy[aps[0]].as_ref().expect("solved")[dev],
            BaselineAggregation::ClusterWeighted => {
                let betas = &clusters.beta_linear[dev];
                let total: f64 = betas.iter().sum();
                aps.iter()
                    .zip(betas)
                    .map(|(&a, b)| b / total * energy[a].as_ref().expect("solved")[dev])
                    .sum()
            }
        };
        scores.push(s);
    }
    Ok(scores)
}
