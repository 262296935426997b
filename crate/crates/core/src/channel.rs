//! Network geometry and the 3GPP UMa-LOS channel.
//!
//! Access points and devices are dropped in a `D x D` square by rejection
//! sampling. Large-scale fading combines the TR 38.901 UMa-LOS path loss with
//! log-normal shadowing, small-scale fading is i.i.d. Rayleigh.
//!
//! Large-scale coefficients are stored as *attenuations*: `beta_db` is
//! positive and the linear power gain is `10^(-beta_db / 10)`.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::{self, SimRng};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Distances below this are evaluated at this value by [`path_loss_db`].
pub const MIN_MODEL_DISTANCE_M: f64 = 10.0;
pub const MAX_MODEL_DISTANCE_M: f64 = 5000.0;

/// Rejection-sampling budget per placed point.
pub const MAX_PLACEMENT_RETRIES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyMode {
    CellFree,
    /// One AP at the centre of the area.
    Cellular,
}

impl TopologyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TopologyMode::CellFree => "cell_free",
            TopologyMode::Cellular => "cellular",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig {
    pub area_side_m: f64,
    pub edge_margin_m: f64,
    pub min_device_ap_dist_m: f64,
    pub min_ap_spacing_m: f64,
    pub ap_height_m: f64,
    pub device_height_m: f64,
    pub carrier_freq_hz: f64,
    pub num_aps: usize,
    pub num_devices: usize,
    pub topology_mode: TopologyMode,
}

impl Default for GeometryConfig {
    /// The cell-free deployment: 1 km², 20 APs, 100 devices at 900 MHz.
    fn default() -> Self {
        GeometryConfig {
            area_side_m: 1000.0,
            edge_margin_m: 50.0,
            min_device_ap_dist_m: 10.0,
            min_ap_spacing_m: 15.0,
            ap_height_m: 12.0,
            device_height_m: 1.5,
            carrier_freq_hz: 900e6,
            num_aps: 20,
            num_devices: 100,
            topology_mode: TopologyMode::CellFree,
        }
    }
}

impl GeometryConfig {
    /// The co-located reference deployment: same area and devices, one AP.
    pub fn cellular() -> Self {
        GeometryConfig {
            num_aps: 1,
            topology_mode: TopologyMode::Cellular,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("area_side_m", self.area_side_m),
            ("edge_margin_m", self.edge_margin_m),
            ("min_device_ap_dist_m", self.min_device_ap_dist_m),
            ("min_ap_spacing_m", self.min_ap_spacing_m),
            ("ap_height_m", self.ap_height_m),
            ("device_height_m", self.device_height_m),
            ("carrier_freq_hz", self.carrier_freq_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.area_side_m <= 2.0 * self.edge_margin_m {
            return Err(Error::Config(format!(
                "area side {} m leaves no room inside an edge margin of {} m",
                self.area_side_m, self.edge_margin_m
            )));
        }
        if self.ap_height_m <= 1.0 || self.device_height_m <= 1.0 {
            return Err(Error::Config(
                "antenna heights must exceed the 1 m effective-height offset".into(),
            ));
        }
        if self.num_aps == 0 || self.num_devices == 0 {
            return Err(Error::Config("num_aps and num_devices must be at least 1".into()));
        }
        if self.topology_mode == TopologyMode::Cellular && self.num_aps != 1 {
            return Err(Error::Config(format!(
                "cellular topology has exactly one AP, got num_aps = {}",
                self.num_aps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub ap_positions: Vec<[f64; 2]>,
    pub device_positions: Vec<[f64; 2]>,
    pub geometry: GeometryConfig,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl NetworkTopology {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_devices(&self) -> usize {
        self.device_positions.len()
    }

    /// Horizontal AP-device distance in meters.
    pub fn distance_2d(&self, ap: usize, device: usize) -> f64 {
        dist(self.ap_positions[ap], self.device_positions[device])
    }

    /// Re-checks every placement constraint by exhaustive scan.
    pub fn check_constraints(&self) -> Result<()> {
        let g = &self.geometry;
        let inside = |p: [f64; 2]| (0.0..=g.area_side_m).contains(&p[0]) && (0.0..=g.area_side_m).contains(&p[1]);
        for (m, &p) in self.ap_positions.iter().enumerate() {
            let lo = g.edge_margin_m;
            let hi = g.area_side_m - g.edge_margin_m;
            if !(lo..=hi).contains(&p[0]) || !(lo..=hi).contains(&p[1]) {
                return Err(Error::PlacementInfeasible(format!("AP {m} violates the edge margin")));
            }
            if g.topology_mode == TopologyMode::CellFree {
                for (j, &q) in self.ap_positions.iter().enumerate().skip(m + 1) {
                    if dist(p, q) < g.min_ap_spacing_m {
                        return Err(Error::PlacementInfeasible(format!("APs {m} and {j} too close")));
                    }
                }
            }
        }
        for (k, &d) in self.device_positions.iter().enumerate() {
            if !inside(d) {
                return Err(Error::PlacementInfeasible(format!("device {k} outside the area")));
            }
            for (m, &p) in self.ap_positions.iter().enumerate() {
                if dist(p, d) < g.min_device_ap_dist_m {
                    return Err(Error::PlacementInfeasible(format!("device {k} too close to AP {m}")));
                }
            }
        }
        Ok(())
    }
}

fn sample_point(rng: &mut SimRng, lo: f64, hi: f64) -> [f64; 2] {
    [rng.random_range(lo..=hi), rng.random_range(lo..=hi)]
}

/// Drops APs and devices in the service area.
///
/// APs are drawn uniformly inside the edge margin and rejected when closer
/// than `min_ap_spacing_m` to an already placed AP; devices are drawn over the
/// whole square and rejected when closer than `min_device_ap_dist_m` to any
/// AP. In cellular mode the single AP sits at the centre.
pub fn place_network(cfg: &GeometryConfig, seed: u64) -> Result<NetworkTopology> {
    cfg.validate()?;
    let mut rng = seed::rng_from_seed(seed);
    let d = cfg.area_side_m;

    let mut aps: Vec<[f64; 2]> = Vec::with_capacity(cfg.num_aps);
    match cfg.topology_mode {
        TopologyMode::Cellular => aps.push([d / 2.0, d / 2.0]),
        TopologyMode::CellFree => {
            for m in 0..cfg.num_aps {
                let mut placed = false;
                for _ in 0..MAX_PLACEMENT_RETRIES {
                    let p = sample_point(&mut rng, cfg.edge_margin_m, d - cfg.edge_margin_m);
                    if aps.iter().all(|&q| dist(p, q) >= cfg.min_ap_spacing_m) {
                        aps.push(p);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(Error::PlacementInfeasible(format!(
                        "could not place AP {m} of {} with spacing {} m",
                        cfg.num_aps, cfg.min_ap_spacing_m
                    )));
                }
            }
        }
    }

    let mut devices = Vec::with_capacity(cfg.num_devices);
    for k in 0..cfg.num_devices {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_RETRIES {
            let p = sample_point(&mut rng, 0.0, d);
            if aps.iter().all(|&q| dist(p, q) >= cfg.min_device_ap_dist_m) {
                devices.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementInfeasible(format!("could not place device {k}")));
        }
    }

    Ok(NetworkTopology {
        ap_positions: aps,
        device_positions: devices,
        geometry: cfg.clone(),
    })
}

/// Breakpoint distance `4 (h_BS - 1)(h_UT - 1) f_c / c` with effective
/// antenna heights.
pub fn breakpoint_distance(cfg: &GeometryConfig) -> f64 {
    4.0 * (cfg.ap_height_m - 1.0) * (cfg.device_height_m - 1.0) * cfg.carrier_freq_hz / SPEED_OF_LIGHT
}

/// UMa-LOS path loss in dB for a horizontal distance `d_2d` (meters).
///
/// Distances under 10 m are evaluated at 10 m. The carrier enters the log
/// terms in GHz.
pub fn path_loss_db(d_2d: f64, cfg: &GeometryConfig) -> Result<f64> {
    if !(d_2d > 0.0 && d_2d <= MAX_MODEL_DISTANCE_M) {
        return Err(Error::Domain(format!(
            "horizontal distance {d_2d} m outside (0, {MAX_MODEL_DISTANCE_M}] m"
        )));
    }
    let d_2d = d_2d.max(MIN_MODEL_DISTANCE_M);
    let dh = cfg.ap_height_m - cfg.device_height_m;
    let d_3d = (d_2d * d_2d + dh * dh).sqrt();
    let fc_ghz = cfg.carrier_freq_hz / 1e9;
    let d_bp = breakpoint_distance(cfg);
    let pl = if d_2d <= d_bp {
        28.0 + 22.0 * d_3d.log10() + 20.0 * fc_ghz.log10()
    } else {
        28.0 + 40.0 * d_3d.log10() + 20.0 * fc_ghz.log10() - 9.0 * (d_bp * d_bp + dh * dh).log10()
    };
    Ok(pl)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LargeScaleMap {
    /// M x K attenuation in dB (path loss plus shadowing).
    pub beta_db: Array2<f64>,
    /// M x K linear power gain, `10^(-beta_db/10)`.
    pub beta_linear: Array2<f64>,
    pub shadowing_db: Array2<f64>,
    pub shadow_sigma_db: f64,
}

impl LargeScaleMap {
    pub fn from_db(beta_db: Array2<f64>, shadowing_db: Array2<f64>, shadow_sigma_db: f64) -> Self {
        let beta_linear = beta_db.mapv(|b| 10f64.powf(-b / 10.0));
        LargeScaleMap {
            beta_db,
            beta_linear,
            shadowing_db,
            shadow_sigma_db,
        }
    }

    /// A map with the same attenuation on every link and no shadowing.
    pub fn uniform(num_aps: usize, num_devices: usize, beta_db: f64) -> Self {
        Self::from_db(
            Array2::from_elem((num_aps, num_devices), beta_db),
            Array2::zeros((num_aps, num_devices)),
            0.0,
        )
    }

    pub fn num_aps(&self) -> usize {
        self.beta_db.nrows()
    }

    pub fn num_devices(&self) -> usize {
        self.beta_db.ncols()
    }

    /// Index of the AP with the smallest attenuation towards `device`
    /// (lowest index on ties).
    pub fn dominant_ap(&self, device: usize) -> usize {
        let col = self.beta_db.column(device);
        let mut best = 0;
        for (m, &b) in col.iter().enumerate() {
            if b < col[best] {
                best = m;
            }
        }
        best
    }
}

/// Path loss plus i.i.d. `N(0, sigma^2)` shadowing (dB) on every link.
pub fn large_scale_map(topology: &NetworkTopology, shadow_sigma_db: f64, seed: u64) -> Result<LargeScaleMap> {
    if !(shadow_sigma_db >= 0.0 && shadow_sigma_db.is_finite()) {
        return Err(Error::Config(format!("shadowing sigma must be >= 0, got {shadow_sigma_db}")));
    }
    let (m_aps, k_dev) = (topology.num_aps(), topology.num_devices());
    let mut rng = seed::rng_from_seed(seed);
    let normal = Normal::new(0.0, shadow_sigma_db).map_err(|e| Error::Config(e.to_string()))?;
    let mut beta_db = Array2::zeros((m_aps, k_dev));
    let mut shadowing = Array2::zeros((m_aps, k_dev));
    for m in 0..m_aps {
        for k in 0..k_dev {
            let pl = path_loss_db(topology.distance_2d(m, k), &topology.geometry)?;
            let f: f64 = normal.sample(&mut rng);
            shadowing[[m, k]] = f;
            beta_db[[m, k]] = pl + f;
        }
    }
    Ok(LargeScaleMap::from_db(beta_db, shadowing, shadow_sigma_db))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingMode {
    /// Independent fading in every access slot.
    PerSlot,
    /// Fading held for `block_len` consecutive slots.
    StaticBlock { block_len: usize },
}

impl FadingMode {
    fn block_index(self, slot: u64) -> u64 {
        match self {
            FadingMode::PerSlot => slot,
            FadingMode::StaticBlock { block_len } => slot / block_len.max(1) as u64,
        }
    }
}

/// One realization of the M x N x K small-scale fading tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallScaleBlock {
    pub h: Array3<Complex64>,
    pub fading_mode: FadingMode,
}

/// Deterministic source of small-scale fading realizations, indexed by slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmallScaleSource {
    pub num_aps: usize,
    pub num_antennas: usize,
    pub num_devices: usize,
    pub fading_mode: FadingMode,
    pub seed: u64,
}

impl SmallScaleSource {
    /// The tensor in force during `slot`. Slots inside one static block
    /// return bit-identical tensors.
    pub fn block(&self, slot: u64) -> SmallScaleBlock {
        let mut rng = seed::stream(self.seed, "ssf", self.fading_mode.block_index(slot));
        let h = Array3::from_shape_simple_fn((self.num_aps, self.num_antennas, self.num_devices), || {
            complex_normal(&mut rng, 1.0)
        });
        SmallScaleBlock {
            h,
            fading_mode: self.fading_mode,
        }
    }
}

pub fn draw_small_scale(
    num_aps: usize,
    num_antennas: usize,
    num_devices: usize,
    fading_mode: FadingMode,
    seed: u64,
) -> SmallScaleSource {
    SmallScaleSource {
        num_aps,
        num_antennas,
        num_devices,
        fading_mode,
        seed,
    }
}

/// Circularly-symmetric complex Gaussian sample of variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// `g[m][n][k] = sqrt(beta_linear[m][k]) * h[m][n][k]`.
pub fn channel_gains(lsf: &LargeScaleMap, ssf: &SmallScaleBlock) -> Result<Array3<Complex64>> {
    let (m_aps, n_ant, k_dev) = ssf.h.dim();
    if lsf.beta_linear.dim() != (m_aps, k_dev) {
        return Err(Error::DimensionMismatch(format!(
            "large-scale map is {:?}, fading tensor is {:?}",
            lsf.beta_linear.dim(),
            ssf.h.dim()
        )));
    }
    let mut g = ssf.h.clone();
    for m in 0..m_aps {
        for n in 0..n_ant {
            for k in 0..k_dev {
                g[[m, n, k]] *= lsf.beta_linear[[m, k]].sqrt();
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_geometry() -> GeometryConfig {
        GeometryConfig::default()
    }

    #[test]
    fn breakpoint_at_reference_heights() {
        // 4 * 11 * 0.5 * 0.9e9 / 3e8 = 66
        assert!((breakpoint_distance(&reference_geometry()) - 66.0).abs() < 1e-12);
        let doubled = GeometryConfig {
            carrier_freq_hz: 1.8e9,
            ..reference_geometry()
        };
        assert!((breakpoint_distance(&doubled) - 132.0).abs() < 1e-12);
        let low = GeometryConfig {
            device_height_m: 1.0 + 1e-12,
            ..reference_geometry()
        };
        assert!(breakpoint_distance(&low) < 1e-9);
    }

    #[test]
    fn path_loss_reference_points() {
        let cfg = reference_geometry();
        // d_3D = sqrt(50^2 + 10.5^2) = 51.0906; 28 + 22 log10(51.0906) + 20 log10(0.9)
        let pl50 = path_loss_db(50.0, &cfg).unwrap();
        assert!((pl50 - 64.668).abs() < 0.01, "{pl50}");
        // beyond the 66 m breakpoint
        let pl100 = path_loss_db(100.0, &cfg).unwrap();
        assert!((pl100 - 74.33).abs() < 0.01, "{pl100}");
        assert!(path_loss_db(200.0, &cfg).unwrap() > pl100);
    }

    #[test]
    fn path_loss_domain() {
        let cfg = reference_geometry();
        assert!(matches!(path_loss_db(5000.1, &cfg), Err(Error::Domain(_))));
        assert!(matches!(path_loss_db(0.0, &cfg), Err(Error::Domain(_))));
        assert_eq!(path_loss_db(3.0, &cfg).unwrap(), path_loss_db(10.0, &cfg).unwrap());
    }

    #[test]
    fn path_loss_monotone_and_continuous() {
        let cfg = reference_geometry();
        let mut prev = f64::NEG_INFINITY;
        let mut d = 0.5;
        while d <= 5000.0 {
            let pl = path_loss_db(d, &cfg).unwrap();
            assert!(pl >= prev, "decrease at {d}");
            prev = pl;
            d += 0.5;
        }
        let bp = breakpoint_distance(&cfg);
        let below = path_loss_db(bp, &cfg).unwrap();
        let above = path_loss_db(bp + 1e-9, &cfg).unwrap();
        assert!((below - above).abs() <= 0.5);
    }

    #[test]
    fn cellular_places_single_centre_ap() {
        let topo = place_network(&GeometryConfig::cellular(), 3).unwrap();
        assert_eq!(topo.ap_positions, vec![[500.0, 500.0]]);
        topo.check_constraints().unwrap();
    }

    #[test]
    fn cellular_rejects_multiple_aps() {
        let cfg = GeometryConfig {
            num_aps: 4,
            ..GeometryConfig::cellular()
        };
        assert!(matches!(place_network(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn reference_placement_satisfies_constraints() {
        for seed in 0..5 {
            let topo = place_network(&reference_geometry(), seed).unwrap();
            assert_eq!(topo.num_aps(), 20);
            assert_eq!(topo.num_devices(), 100);
            // exhaustive re-check, independent of the sampler's own test
            for i in 0..20 {
                for j in (i + 1)..20 {
                    let (a, b) = (topo.ap_positions[i], topo.ap_positions[j]);
                    assert!(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() >= 15.0);
                }
            }
            topo.check_constraints().unwrap();
        }
    }

    #[test]
    fn placement_is_deterministic() {
        let a = place_network(&reference_geometry(), 11).unwrap();
        let b = place_network(&reference_geometry(), 11).unwrap();
        let bits = |t: &NetworkTopology| {
            t.ap_positions
                .iter()
                .chain(&t.device_positions)
                .flat_map(|p| [p[0].to_bits(), p[1].to_bits()])
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&place_network(&reference_geometry(), 12).unwrap()));
    }

    #[test]
    fn infeasible_placement_fails_loudly() {
        // 120 m usable square cannot hold 100 APs 15 m apart
        let cfg = GeometryConfig {
            area_side_m: 220.0,
            num_aps: 100,
            ..reference_geometry()
        };
        assert!(matches!(place_network(&cfg, 0), Err(Error::PlacementInfeasible(_))));
    }

    #[test]
    fn zero_shadowing_is_pure_path_loss() {
        let topo = place_network(&reference_geometry(), 2).unwrap();
        let lsf = large_scale_map(&topo, 0.0, 9).unwrap();
        for m in 0..topo.num_aps() {
            for k in 0..topo.num_devices() {
                let pl = path_loss_db(topo.distance_2d(m, k), &topo.geometry).unwrap();
                assert_eq!(lsf.beta_db[[m, k]], pl);
                assert_eq!(lsf.beta_linear[[m, k]], 10f64.powf(-lsf.beta_db[[m, k]] / 10.0));
                assert!(lsf.beta_linear[[m, k]] > 0.0 && lsf.beta_linear[[m, k]] < 1.0);
            }
        }
    }

    #[test]
    fn small_scale_modes() {
        let stat = draw_small_scale(2, 2, 3, FadingMode::StaticBlock { block_len: 10 }, 5);
        assert_eq!(stat.block(0).h, stat.block(3).h);
        assert_ne!(stat.block(0).h, stat.block(10).h);
        let per = draw_small_scale(2, 2, 3, FadingMode::PerSlot, 5);
        assert_ne!(per.block(0).h, per.block(1).h);
    }

    #[test]
    fn gains_follow_square_root_law() {
        let ssf = draw_small_scale(1, 4, 2, FadingMode::PerSlot, 1).block(0);
        let unit = LargeScaleMap::uniform(1, 2, 0.0);
        assert_eq!(channel_gains(&unit, &ssf).unwrap(), ssf.h);

        // 10^(-6.0206/10) ~= 0.25
        let quarter = LargeScaleMap::from_db(Array2::from_elem((1, 2), -10.0 * 0.25f64.log10()), Array2::zeros((1, 2)), 0.0);
        let g = channel_gains(&quarter, &ssf).unwrap();
        for (a, b) in g.iter().zip(ssf.h.iter()) {
            assert!((a.norm() - 0.5 * b.norm()).abs() < 1e-12);
        }

        let bad = LargeScaleMap::uniform(2, 2, 0.0);
        assert!(matches!(channel_gains(&bad, &ssf), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn doubling_beta_doubles_gain_power() {
        let ssf = draw_small_scale(1, 8, 1, FadingMode::PerSlot, 4).block(0);
        let one = LargeScaleMap::from_db(Array2::from_elem((1, 1), 20.0), Array2::zeros((1, 1)), 0.0);
        let two = LargeScaleMap::from_db(
            Array2::from_elem((1, 1), 20.0 - 10.0 * 2f64.log10()),
            Array2::zeros((1, 1)),
            0.0,
        );
        let p = |l: &LargeScaleMap| channel_gains(l, &ssf).unwrap().iter().map(|z| z.norm_sqr()).sum::<f64>();
        assert!((p(&two) / p(&one) - 2.0).abs() < 1e-12);
    }
}
