//! Access-slot synthesis.
//!
//! A dataset is one network realization (topology, large-scale map, pilot
//! codebook) observed over many random access slots. In each slot a sparse
//! set of devices transmits its pilot and every AP receives
//! `Y_m = S D_a D_rho^{1/2} G_m + W_m`.

pub(crate) mod io;

pub use io::{load_dataset, read_dataset_header, save_dataset, DatasetHeader, DATASET_FORMAT_VERSION, DATASET_MAGIC};

use ndarray::{Array2, ArrayView2};
use num_complex::{Complex32, Complex64};
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{
    complex_normal, draw_small_scale, large_scale_map, place_network, FadingMode, GeometryConfig, LargeScaleMap,
    NetworkTopology, SmallScaleBlock, SmallScaleSource,
};
use crate::error::{Error, Result};
use crate::seed;

/// Pilot matrix `S` (L x K). Every column has squared norm `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotCodebook {
    pub s: Array2<Complex64>,
}

impl PilotCodebook {
    pub fn pilot_len(&self) -> usize {
        self.s.nrows()
    }

    pub fn num_devices(&self) -> usize {
        self.s.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotKind {
    /// i.i.d. complex Gaussian, non-orthogonal.
    Gaussian,
    /// Orthogonal columns (requires K <= L); used for noiseless sanity runs.
    Orthonormal,
}

fn rescale_columns(s: &mut Array2<Complex64>) {
    let l = s.nrows() as f64;
    for mut col in s.columns_mut() {
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            let scale = l.sqrt() / norm;
            col.mapv_inplace(|z| z * scale);
        }
    }
}

/// i.i.d. `CN(0,1)` pilots with each column rescaled to `||s_k||^2 = L`.
pub fn generate_pilots(pilot_len: usize, num_devices: usize, seed: u64) -> PilotCodebook {
    let mut rng = seed::rng_from_seed(seed);
    let mut s = Array2::from_shape_simple_fn((pilot_len, num_devices), || complex_normal(&mut rng, 1.0));
    rescale_columns(&mut s);
    PilotCodebook { s }
}

/// Gaussian pilots orthogonalized by modified Gram-Schmidt, then scaled to
/// `||s_k||^2 = L`.
pub fn orthonormal_pilots(pilot_len: usize, num_devices: usize, seed: u64) -> Result<PilotCodebook> {
    if num_devices > pilot_len {
        return Err(Error::Config(format!(
            "orthogonal pilots need K <= L (K = {num_devices}, L = {pilot_len})"
        )));
    }
    let mut s = generate_pilots(pilot_len, num_devices, seed).s;
    for k in 0..num_devices {
        for j in 0..k {
            let proj: Complex64 = (0..pilot_len).map(|l| s[[l, j]].conj() * s[[l, k]]).sum();
            for l in 0..pilot_len {
                let sj = s[[l, j]];
                s[[l, k]] -= proj * sj;
            }
        }
        let norm = s.column(k).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Numeric("degenerate pilot draw during orthogonalization".into()));
        }
        s.column_mut(k).mapv_inplace(|z| z / norm);
    }
    rescale_columns(&mut s);
    Ok(PilotCodebook { s })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityVector {
    pub a: Vec<bool>,
    pub epsilon: f64,
}

impl ActivityVector {
    pub fn num_active(&self) -> usize {
        self.a.iter().filter(|&&x| x).count()
    }
}

/// i.i.d. Bernoulli(`epsilon`) activity for `num_devices` devices.
pub fn draw_activity(num_devices: usize, epsilon: f64, seed: u64) -> ActivityVector {
    assert!(epsilon > 0.0 && epsilon < 1.0, "activation probability must lie in (0, 1)");
    let mut rng = seed::rng_from_seed(seed);
    ActivityVector {
        a: (0..num_devices).map(|_| rng.random_bool(epsilon)).collect(),
        epsilon,
    }
}

/// One random access slot as seen by all APs.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessSlot {
    pub activity: ActivityVector,
    /// One L x N block per AP.
    pub received: Vec<Array2<Complex32>>,
}

/// Builds `Y_m = S D_a D_rho^{1/2} G_m + W_m` for every AP.
///
/// `W_m` has i.i.d. `CN(0, noise_var_w)` entries drawn from `seed`.
pub fn synthesize_slot(
    codebook: &PilotCodebook,
    activity: &ActivityVector,
    lsf: &LargeScaleMap,
    ssf: &SmallScaleBlock,
    tx_power_w: &[f64],
    noise_var_w: f64,
    seed: u64,
) -> Result<AccessSlot> {
    let (l_len, k_dev) = codebook.s.dim();
    let (m_aps, n_ant, k_ssf) = ssf.h.dim();
    if activity.a.len() != k_dev || tx_power_w.len() != k_dev || k_ssf != k_dev || lsf.beta_linear.dim() != (m_aps, k_dev) {
        return Err(Error::DimensionMismatch(format!(
            "pilots L x K = {l_len} x {k_dev}, activity {}, powers {}, fading {:?}, large-scale {:?}",
            activity.a.len(),
            tx_power_w.len(),
            ssf.h.dim(),
            lsf.beta_linear.dim()
        )));
    }
    if !(noise_var_w >= 0.0) || tx_power_w.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Config("transmit powers must be > 0 and noise variance >= 0".into()));
    }

    let active: Vec<usize> = (0..k_dev).filter(|&k| activity.a[k]).collect();
    let mut rng = seed::rng_from_seed(seed);
    let mut received = Vec::with_capacity(m_aps);
    for m in 0..m_aps {
        let mut y = Array2::<Complex64>::zeros((l_len, n_ant));
        for &k in &active {
            let amp = (tx_power_w[k] * lsf.beta_linear[[m, k]]).sqrt();
            for n in 0..n_ant {
                let coef = ssf.h[[m, n, k]] * amp;
                for l in 0..l_len {
                    y[[l, n]] += coef * codebook.s[[l, k]];
                }
            }
        }
        for v in y.iter_mut() {
            *v += complex_normal(&mut rng, 1.0) * noise_var_w.sqrt();
        }
        received.push(y.mapv(|z| Complex32::new(z.re as f32, z.im as f32)));
    }
    Ok(AccessSlot {
        activity: activity.clone(),
        received,
    })
}

/// Per-device SNR at the dominant AP plus the 5%-quantile target.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrReport {
    pub snr_db: Vec<f64>,
    /// Smallest SNR met by at least 95% of devices (the CDF = 0.05 crossing).
    pub target_db: f64,
}

/// Smallest sample `x` with empirical `CDF(x) >= p`.
pub fn empirical_quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

pub fn watts_to_db(w: f64) -> f64 {
    10.0 * w.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// `SNR_k = rho_k * max_m beta_mk / sigma^2` in dB, times an optional
/// processing gain (`gain_db`, zero for the plain per-symbol single-antenna
/// figure).
pub fn dominant_ap_snr(lsf: &LargeScaleMap, tx_power_w: &[f64], noise_var_w: f64, gain_db: f64) -> SnrReport {
    let snr_db: Vec<f64> = (0..lsf.num_devices())
        .map(|k| {
            let best = lsf.beta_linear.column(k).iter().copied().fold(0.0, f64::max);
            watts_to_db(tx_power_w[k] * best / noise_var_w) + gain_db
        })
        .collect();
    let target_db = empirical_quantile(&snr_db, 0.05);
    SnrReport { snr_db, target_db }
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub geometry: GeometryConfig,
    pub num_antennas: usize,
    pub pilot_len: usize,
    pub pilot_kind: PilotKind,
    pub epsilon: f64,
    pub tx_power_w: f64,
    pub noise_var_w: f64,
    pub shadow_sigma_db: f64,
    pub fading_mode: FadingMode,
    /// Scale each device's power so that its dominant-AP SNR equals the 95%
    /// coverage target of the nominal-power network.
    pub power_control: bool,
    pub num_slots: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            geometry: GeometryConfig::default(),
            num_antennas: 2,
            pilot_len: 40,
            pilot_kind: PilotKind::Gaussian,
            epsilon: 0.1,
            tx_power_w: 0.2,
            noise_var_w: dbm_to_watts(-109.0),
            shadow_sigma_db: 1.0,
            fading_mode: FadingMode::PerSlot,
            power_control: false,
            num_slots: 50_000,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.num_antennas == 0 || self.pilot_len == 0 {
            return Err(Error::Config("num_antennas and pilot_len must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.tx_power_w > 0.0) || !(self.noise_var_w >= 0.0) {
            return Err(Error::Config("tx power must be > 0 and noise variance >= 0".into()));
        }
        if let FadingMode::StaticBlock { block_len: 0 } = self.fading_mode {
            return Err(Error::Config("fading block length must be at least 1".into()));
        }
        if self.pilot_kind == PilotKind::Orthonormal && self.geometry.num_devices > self.pilot_len {
            return Err(Error::Config("orthogonal pilots need num_devices <= pilot_len".into()));
        }
        Ok(())
    }
}

/// The static part of a scenario: who is where and which pilot they use.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub topology: NetworkTopology,
    pub lsf: LargeScaleMap,
    pub codebook: PilotCodebook,
    pub tx_power_w: Vec<f64>,
    pub noise_var_w: f64,
}

impl Network {
    pub fn build(cfg: &ScenarioConfig, master_seed: u64) -> Result<Network> {
        cfg.validate()?;
        let topology = place_network(&cfg.geometry, seed::derive_seed(master_seed, "topology", 0))?;
        let lsf = large_scale_map(&topology, cfg.shadow_sigma_db, seed::derive_seed(master_seed, "shadowing", 0))?;
        let pilot_seed = seed::derive_seed(master_seed, "pilots", 0);
        let codebook = match cfg.pilot_kind {
            PilotKind::Gaussian => generate_pilots(cfg.pilot_len, cfg.geometry.num_devices, pilot_seed),
            PilotKind::Orthonormal => orthonormal_pilots(cfg.pilot_len, cfg.geometry.num_devices, pilot_seed)?,
        };
        let mut tx_power_w = vec![cfg.tx_power_w; cfg.geometry.num_devices];
        if cfg.power_control {
            let snr = dominant_ap_snr(&lsf, &tx_power_w, cfg.noise_var_w, 0.0);
            let target = 10f64.powf(snr.target_db / 10.0);
            for (k, p) in tx_power_w.iter_mut().enumerate() {
                let best = lsf.beta_linear.column(k).iter().copied().fold(0.0, f64::max);
                *p = target * cfg.noise_var_w / best;
            }
        }
        Ok(Network {
            topology,
            lsf,
            codebook,
            tx_power_w,
            noise_var_w: cfg.noise_var_w,
        })
    }
}

/// A network together with a sequence of synthesized access slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessSlotDataset {
    pub codebook: PilotCodebook,
    pub topology: NetworkTopology,
    pub lsf_map: LargeScaleMap,
    pub tx_power_w: Vec<f64>,
    pub noise_var_w: f64,
    pub epsilon: f64,
    pub num_antennas: usize,
    pub fading_mode: FadingMode,
    pub master_seed: u64,
    /// Which slot stream of the network this is (0 = training, 1 = evaluation
    /// by convention); streams share the network but not the slots.
    pub slot_stream: u64,
    pub format_version: u32,
    pub slots: Vec<AccessSlot>,
}

impl AccessSlotDataset {
    pub fn num_aps(&self) -> usize {
        self.topology.num_aps()
    }

    pub fn num_devices(&self) -> usize {
        self.codebook.num_devices()
    }

    pub fn pilot_len(&self) -> usize {
        self.codebook.pilot_len()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Mean of all activity indicators.
    pub fn activity_rate(&self) -> f64 {
        let active: usize = self.slots.iter().map(|s| s.activity.num_active()).sum();
        active as f64 / (self.len() * self.num_devices()) as f64
    }

    pub fn received(&self, slot: usize, ap: usize) -> ArrayView2<'_, Complex32> {
        self.slots[slot].received[ap].view()
    }
}

/// Synthesizes `num_slots` slots of `network` from slot stream `slot_stream`.
///
/// Slot `i` draws its activity, fading and noise from seeds derived from
/// `(master_seed, slot_stream, i)`, so the output does not depend on how many
/// worker threads run.
pub fn generate_slots(
    network: &Network,
    cfg: &ScenarioConfig,
    master_seed: u64,
    slot_stream: u64,
    num_slots: usize,
) -> Result<Vec<AccessSlot>> {
    let stream_seed = seed::derive_seed(master_seed, "slots", slot_stream);
    let ssf: SmallScaleSource = draw_small_scale(
        network.topology.num_aps(),
        cfg.num_antennas,
        network.topology.num_devices(),
        cfg.fading_mode,
        seed::derive_seed(stream_seed, "ssf", 0),
    );
    (0..num_slots)
        .into_par_iter()
        .map(|i| {
            let activity = draw_activity(
                network.topology.num_devices(),
                cfg.epsilon,
                seed::derive_seed(stream_seed, "activity", i as u64),
            );
            synthesize_slot(
                &network.codebook,
                &activity,
                &network.lsf,
                &ssf.block(i as u64),
                &network.tx_power_w,
                network.noise_var_w,
                seed::derive_seed(stream_seed, "noise", i as u64),
            )
        })
        .collect()
}

/// Builds the network of `master_seed` and `cfg.num_slots` slots of stream
/// `slot_stream`.
pub fn generate_dataset(cfg: &ScenarioConfig, master_seed: u64, slot_stream: u64) -> Result<AccessSlotDataset> {
    if cfg.num_slots == 0 {
        return Err(Error::Config("a dataset needs at least one slot".into()));
    }
    let network = Network::build(cfg, master_seed)?;
    let slots = generate_slots(&network, cfg, master_seed, slot_stream, cfg.num_slots)?;
    Ok(AccessSlotDataset {
        codebook: network.codebook,
        topology: network.topology,
        lsf_map: network.lsf,
        tx_power_w: network.tx_power_w,
        noise_var_w: network.noise_var_w,
        epsilon: cfg.epsilon,
        num_antennas: cfg.num_antennas,
        fading_mode: cfg.fading_mode,
        master_seed,
        slot_stream,
        format_version: DATASET_FORMAT_VERSION,
        slots,
    })
}

/// Warns when the pilot does not fit in its share of the coherence block.
pub fn coherence_budget_ok(pilot_len: usize, coherence_time_s: f64, coherence_bw_hz: f64, reserved_fraction: f64) -> bool {
    let symbols = coherence_time_s * coherence_bw_hz;
    pilot_len as f64 <= reserved_fraction * symbols + 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_small_scale;

    #[test]
    fn pilot_columns_have_norm_l() {
        let cb = generate_pilots(40, 100, 3);
        assert_eq!(cb.s.dim(), (40, 100));
        for col in cb.s.columns() {
            let n2: f64 = col.iter().map(|z| z.norm_sqr()).sum();
            assert!((n2 - 40.0).abs() < 1e-10);
        }
        assert_eq!(generate_pilots(40, 100, 3), cb);
        assert_eq!(generate_pilots(5, 1, 0).s.ncols(), 1);
    }

    #[test]
    fn orthonormal_pilots_are_orthogonal() {
        let cb = orthonormal_pilots(8, 8, 1).unwrap();
        let gram = cb.s.t().mapv(|z| z.conj()).dot(&cb.s);
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 8.0 } else { 0.0 };
                assert!((gram[[i, j]] - Complex64::new(want, 0.0)).norm() < 1e-10);
            }
        }
        assert!(orthonormal_pilots(4, 5, 1).is_err());
    }

    #[test]
    fn cross_correlation_falls_with_pilot_length() {
        // mean |<s_i, s_j>| / L over 1000 random pairs, L = 10 vs L = 40
        let mean_xcorr = |l: usize| {
            let cb = generate_pilots(l, 2000, 17);
            (0..1000)
                .map(|p| {
                    let (i, j) = (2 * p, 2 * p + 1);
                    let ip: Complex64 = (0..l).map(|r| cb.s[[r, i]].conj() * cb.s[[r, j]]).sum();
                    ip.norm() / l as f64
                })
                .sum::<f64>()
                / 1000.0
        };
        let (c10, c40) = (mean_xcorr(10), mean_xcorr(40));
        assert!(c40 < c10, "{c10} {c40}");
        // order sqrt(pi)/2 / sqrt(L)
        assert!((c40 - 0.886 / 40f64.sqrt()).abs() < 0.03);
    }

    #[test]
    fn tiny_epsilon_gives_silent_slots() {
        let silent = (0..1000).filter(|&i| draw_activity(100, 1e-6, i).num_active() == 0).count();
        assert!(silent >= 990);
    }

    #[test]
    fn silent_noiseless_slot_is_zero() {
        let cb = generate_pilots(8, 4, 0);
        let lsf = LargeScaleMap::uniform(3, 4, 60.0);
        let ssf = draw_small_scale(3, 2, 4, FadingMode::PerSlot, 0).block(0);
        let act = ActivityVector { a: vec![false; 4], epsilon: 0.1 };
        let slot = synthesize_slot(&cb, &act, &lsf, &ssf, &[0.2; 4], 0.0, 1).unwrap();
        assert_eq!(slot.received.len(), 3);
        assert!(slot.received.iter().all(|y| y.iter().all(|z| *z == Complex32::new(0.0, 0.0))));
    }

    #[test]
    fn single_active_device_scales_its_pilot() {
        let cb = generate_pilots(6, 3, 2);
        let lsf = LargeScaleMap::uniform(2, 3, 30.0);
        let ssf = draw_small_scale(2, 1, 3, FadingMode::PerSlot, 8).block(0);
        let act = ActivityVector { a: vec![false, true, false], epsilon: 0.1 };
        let rho = [0.1, 0.4, 0.3];
        let slot = synthesize_slot(&cb, &act, &lsf, &ssf, &rho, 0.0, 1).unwrap();
        for m in 0..2 {
            let g = lsf.beta_linear[[m, 1]].sqrt() * ssf.h[[m, 0, 1]];
            for l in 0..6 {
                let want = cb.s[[l, 1]] * g * rho[1].sqrt();
                let got = slot.received[m][[l, 0]];
                assert!((Complex64::new(got.re as f64, got.im as f64) - want).norm() < 1e-6 * want.norm().max(1e-3));
            }
        }
    }

    #[test]
    fn synthesize_rejects_mismatched_dims() {
        let cb = generate_pilots(6, 3, 2);
        let lsf = LargeScaleMap::uniform(2, 4, 30.0);
        let ssf = draw_small_scale(2, 1, 3, FadingMode::PerSlot, 8).block(0);
        let act = ActivityVector { a: vec![true; 3], epsilon: 0.1 };
        assert!(matches!(
            synthesize_slot(&cb, &act, &lsf, &ssf, &[0.1; 3], 0.0, 0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn snr_reference_and_linearity() {
        let lsf = LargeScaleMap::uniform(1, 1, 74.33);
        let noise = dbm_to_watts(-109.0);
        let r = dominant_ap_snr(&lsf, &[0.2], noise, 0.0);
        // 23.0103 dBm - 74.33 dB + 109 dB
        assert!((r.snr_db[0] - 57.68).abs() < 0.01, "{}", r.snr_db[0]);
        let r2 = dominant_ap_snr(&lsf, &[0.4], noise, 0.0);
        assert!((r2.snr_db[0] - r.snr_db[0] - 3.0103).abs() < 1e-4);
    }

    #[test]
    fn more_aps_never_lower_dominant_snr() {
        let cfg = ScenarioConfig::default();
        let net = Network::build(&cfg, 4).unwrap();
        let noise = cfg.noise_var_w;
        let full = dominant_ap_snr(&net.lsf, &net.tx_power_w, noise, 0.0);
        let first = LargeScaleMap::from_db(
            net.lsf.beta_db.slice(ndarray::s![0..1, ..]).to_owned(),
            net.lsf.shadowing_db.slice(ndarray::s![0..1, ..]).to_owned(),
            1.0,
        );
        let single = dominant_ap_snr(&first, &net.tx_power_w, noise, 0.0);
        for (a, b) in full.snr_db.iter().zip(&single.snr_db) {
            assert!(a >= b);
        }
    }

    #[test]
    fn quantile_is_order_statistic() {
        let v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.05), 5.0);
        assert_eq!(empirical_quantile(&[3.0], 0.05), 3.0);
    }

    #[test]
    fn power_control_meets_target() {
        let cfg = ScenarioConfig {
            power_control: true,
            ..Default::default()
        };
        let net = Network::build(&cfg, 2).unwrap();
        let r = dominant_ap_snr(&net.lsf, &net.tx_power_w, cfg.noise_var_w, 0.0);
        for s in &r.snr_db {
            assert!((s - r.target_db).abs() < 1e-9);
        }
    }

    #[test]
    fn coherence_budget() {
        assert!(coherence_budget_ok(40, 1e-3, 200e3, 0.2));
        assert!(!coherence_budget_ok(41, 1e-3, 200e3, 0.2));
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let cfg = ScenarioConfig {
            num_slots: 6,
            fading_mode: FadingMode::StaticBlock { block_len: 3 },
            ..Default::default()
        };
        let a = generate_dataset(&cfg, 9, 0).unwrap();
        let b = generate_dataset(&cfg, 9, 0).unwrap();
        assert_eq!(a, b);
        let eval = generate_dataset(&cfg, 9, 1).unwrap();
        assert_eq!(eval.topology, a.topology);
        assert_eq!(eval.codebook, a.codebook);
        assert_ne!(eval.slots, a.slots);
    }
}
