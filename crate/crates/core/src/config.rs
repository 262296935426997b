//! Run configuration: a flat `key = value` text format.
//!
//! Lines are `key = value`; `#` starts a comment; keys are case-sensitive.
//! Every key is optional and defaults to the cell-free operating point
//! (`topology = cellular` switches the defaults of `num_aps`,
//! `num_antennas` and `cluster_size` to 1, 8 and 1). Unknown keys, repeated
//! keys, malformed values and out-of-range values are rejected with the line
//! number. [`RunConfig::emit`] writes every key explicitly, and parsing that
//! text gives back an identical configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::baseline::{Algorithm, BaselineAggregation, SolverConfig};
use crate::channel::{FadingMode, GeometryConfig, TopologyMode};
use crate::detect::FusionRule;
use crate::error::{Error, Result};
use crate::scenario::{coherence_budget_ok, dbm_to_watts, PilotKind, ScenarioConfig};
use crate::slp::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub topology: TopologyMode,
    pub num_aps: usize,
    pub num_devices: usize,
    pub num_antennas: usize,
    pub pilot_len: usize,
    pub cluster_size: usize,
    pub epsilon: f64,
    pub area_side_m: f64,
    pub edge_margin_m: f64,
    pub min_device_ap_dist_m: f64,
    pub min_ap_spacing_m: f64,
    pub ap_height_m: f64,
    pub device_height_m: f64,
    pub carrier_freq_mhz: f64,
    pub tx_power_mw: f64,
    pub noise_power_dbm: f64,
    /// Makes the noise variance exactly zero (overrides `noise_power_dbm`).
    pub noiseless: bool,
    pub shadow_sigma_db: f64,
    /// `true` holds the small-scale fading for `fading_block_len` slots.
    pub static_fading: bool,
    pub fading_block_len: usize,
    pub pilot_kind: PilotKind,
    pub power_control: bool,
    pub coherence_time_ms: f64,
    pub coherence_bandwidth_khz: f64,
    pub pilot_fraction: f64,
    pub train_slots: usize,
    pub eval_slots: usize,

    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub aps_per_slot: usize,
    pub devices_per_slot: usize,
    pub per_ap_models: bool,

    pub fusion_rule: FusionRule,
    pub num_taus: usize,
    pub tau: f64,

    pub lambda: Option<f64>,
    pub amp_alpha: f64,
    pub step_scale: f64,
    pub ista_iters: usize,
    pub fista_iters: usize,
    pub amp_iters: usize,
    pub baseline_aggregation: BaselineAggregation,

    pub timing_reps: usize,
    pub timing_warmup: usize,
    pub timing_slots: usize,

    pub pareto_widths: Vec<usize>,
    pub pareto_depths: Vec<usize>,
    pub pareto_train_slots: usize,
    pub pareto_max_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::defaults_for(TopologyMode::CellFree)
    }
}

fn topology_str(t: TopologyMode) -> &'static str {
    match t {
        TopologyMode::CellFree => "cell-free",
        TopologyMode::Cellular => "cellular",
    }
}

fn list_str(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

type SetResult = std::result::Result<(), String>;

fn parse_usize(v: &str, min: usize) -> std::result::Result<usize, String> {
    let n: i128 = v.parse().map_err(|_| format!("expected an integer, got `{v}`"))?;
    if n < min as i128 {
        return Err(format!("must be >= {min}, got {n}"));
    }
    usize::try_from(n).map_err(|_| format!("{n} is too large"))
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("expected a number, got `{v}`"))?;
    if !x.is_finite() {
        return Err(format!("must be finite, got {v}"));
    }
    Ok(x)
}

fn positive(v: &str) -> std::result::Result<f64, String> {
    let x = parse_f64(v)?;
    if x <= 0.0 {
        return Err(format!("must be > 0, got {x}"));
    }
    Ok(x)
}

fn non_negative(v: &str) -> std::result::Result<f64, String> {
    let x = parse_f64(v)?;
    if x < 0.0 {
        return Err(format!("must be >= 0, got {x}"));
    }
    Ok(x)
}

fn open_unit(v: &str) -> std::result::Result<f64, String> {
    let x = parse_f64(v)?;
    if !(x > 0.0 && x < 1.0) {
        return Err(format!("must lie in (0, 1), got {x}"));
    }
    Ok(x)
}

fn unit_closed_open(v: &str) -> std::result::Result<f64, String> {
    let x = parse_f64(v)?;
    if !(0.0..1.0).contains(&x) {
        return Err(format!("must lie in [0, 1), got {x}"));
    }
    Ok(x)
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    let out: Vec<usize> = v
        .split(',')
        .map(|s| parse_usize(s.trim(), 1))
        .collect::<std::result::Result<_, _>>()?;
    if out.is_empty() {
        return Err("list must not be empty".into());
    }
    Ok(out)
}

impl RunConfig {
    fn defaults_for(topology: TopologyMode) -> Self {
        let cellular = topology == TopologyMode::Cellular;
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            topology,
            num_aps: if cellular { 1 } else { 20 },
            num_devices: 100,
            num_antennas: if cellular { 8 } else { 2 },
            pilot_len: 40,
            cluster_size: if cellular { 1 } else { 4 },
            epsilon: 0.1,
            area_side_m: 1000.0,
            edge_margin_m: 50.0,
            min_device_ap_dist_m: 10.0,
            min_ap_spacing_m: 15.0,
            ap_height_m: 12.0,
            device_height_m: 1.5,
            carrier_freq_mhz: 900.0,
            tx_power_mw: 200.0,
            noise_power_dbm: -109.0,
            noiseless: false,
            shadow_sigma_db: 1.0,
            static_fading: false,
            fading_block_len: 10,
            pilot_kind: PilotKind::Gaussian,
            power_control: false,
            coherence_time_ms: 1.0,
            coherence_bandwidth_khz: 200.0,
            pilot_fraction: 0.2,
            train_slots: 50_000,
            eval_slots: 20_000,
            hidden_width: 512,
            hidden_layers: 1,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 256,
            max_epochs: 100,
            early_stop_patience: 10,
            validation_fraction: 0.1,
            aps_per_slot: 1,
            devices_per_slot: 1,
            per_ap_models: false,
            fusion_rule: FusionRule::Majority,
            num_taus: 1001,
            tau: 0.5,
            lambda: None,
            amp_alpha: 1.4,
            step_scale: 1.0,
            ista_iters: Algorithm::Ista.default_iters(),
            fista_iters: Algorithm::Fista.default_iters(),
            amp_iters: Algorithm::Amp.default_iters(),
            baseline_aggregation: BaselineAggregation::ClusterWeighted,
            timing_reps: 7,
            timing_warmup: 2,
            timing_slots: 20,
            pareto_widths: vec![128, 160, 256, 320, 512, 640],
            pareto_depths: vec![1, 2, 3, 4],
            pareto_train_slots: 10_000,
            pareto_max_epochs: 30,
        }
    }

    /// The cellular reference deployment with otherwise default settings.
    pub fn cellular() -> Self {
        Self::defaults_for(TopologyMode::Cellular)
    }

    fn set(&mut self, key: &str, v: &str) -> SetResult {
        match key {
            "seed" => self.seed = v.parse().map_err(|_| format!("expected an unsigned 64-bit integer, got `{v}`"))?,
            "out_dir" => {
                if v.is_empty() {
                    return Err("must not be empty".into());
                }
                self.out_dir = PathBuf::from(v)
            }
            "topology" => {
                self.topology = match v {
                    "cell-free" => TopologyMode::CellFree,
                    "cellular" => TopologyMode::Cellular,
                    _ => return Err(format!("expected cell-free or cellular, got `{v}`")),
                }
            }
            "num_aps" => self.num_aps = parse_usize(v, 1)?,
            "num_devices" => self.num_devices = parse_usize(v, 1)?,
            "num_antennas" => self.num_antennas = parse_usize(v, 1)?,
            "pilot_len" => self.pilot_len = parse_usize(v, 1)?,
            "cluster_size" => self.cluster_size = parse_usize(v, 1)?,
            "epsilon" => self.epsilon = open_unit(v)?,
            "area_side_m" => self.area_side_m = positive(v)?,
            "edge_margin_m" => self.edge_margin_m = positive(v)?,
            "min_device_ap_dist_m" => self.min_device_ap_dist_m = positive(v)?,
            "min_ap_spacing_m" => self.min_ap_spacing_m = positive(v)?,
            "ap_height_m" => self.ap_height_m = positive(v)?,
            "device_height_m" => self.device_height_m = positive(v)?,
            "carrier_freq_mhz" => self.carrier_freq_mhz = positive(v)?,
            "tx_power_mw" => self.tx_power_mw = positive(v)?,
            "noise_power_dbm" => self.noise_power_dbm = parse_f64(v)?,
            "noiseless" => self.noiseless = parse_bool(v)?,
            "shadow_sigma_db" => self.shadow_sigma_db = non_negative(v)?,
            "fading" => {
                self.static_fading = match v {
                    "per-slot" => false,
                    "static-block" => true,
                    _ => return Err(format!("expected per-slot or static-block, got `{v}`")),
                }
            }
            "fading_block_len" => self.fading_block_len = parse_usize(v, 1)?,
            "pilot_kind" => {
                self.pilot_kind = match v {
                    "gaussian" => PilotKind::Gaussian,
                    "orthonormal" => PilotKind::Orthonormal,
                    _ => return Err(format!("expected gaussian or orthonormal, got `{v}`")),
                }
            }
            "power_control" => self.power_control = parse_bool(v)?,
            "coherence_time_ms" => self.coherence_time_ms = positive(v)?,
            "coherence_bandwidth_khz" => self.coherence_bandwidth_khz = positive(v)?,
            "pilot_fraction" => {
                let x = positive(v)?;
                if x > 1.0 {
                    return Err(format!("must lie in (0, 1], got {x}"));
                }
                self.pilot_fraction = x
            }
            "train_slots" => self.train_slots = parse_usize(v, 1)?,
            "eval_slots" => self.eval_slots = parse_usize(v, 1)?,
            "hidden_width" => self.hidden_width = parse_usize(v, 1)?,
            "hidden_layers" => self.hidden_layers = parse_usize(v, 1)?,
            "learning_rate" => self.learning_rate = non_negative(v)?,
            "adam_beta1" => self.adam_beta1 = unit_closed_open(v)?,
            "adam_beta2" => self.adam_beta2 = unit_closed_open(v)?,
            "adam_epsilon" => self.adam_epsilon = positive(v)?,
            "batch_size" => self.batch_size = parse_usize(v, 1)?,
            "max_epochs" => self.max_epochs = parse_usize(v, 1)?,
            "early_stop_patience" => self.early_stop_patience = parse_usize(v, 1)?,
            "validation_fraction" => self.validation_fraction = open_unit(v)?,
            "aps_per_slot" => self.aps_per_slot = parse_usize(v, 1)?,
            "devices_per_slot" => self.devices_per_slot = parse_usize(v, 1)?,
            "per_ap_models" => self.per_ap_models = parse_bool(v)?,
            "fusion_rule" => {
                self.fusion_rule = match v {
                    "majority" => FusionRule::Majority,
                    "strict-majority" => FusionRule::StrictMajority,
                    "and" => FusionRule::And,
                    "or" => FusionRule::Or,
                    _ => return Err(format!("expected majority, strict-majority, and or or, got `{v}`")),
                }
            }
            "num_taus" => self.num_taus = parse_usize(v, 2)?,
            "tau" => self.tau = non_negative(v)?,
            "lambda" => self.lambda = if v == "auto" { None } else { Some(non_negative(v)?) },
            "amp_alpha" => self.amp_alpha = non_negative(v)?,
            "step_scale" => self.step_scale = positive(v)?,
            "ista_iters" => self.ista_iters = parse_usize(v, 1)?,
            "fista_iters" => self.fista_iters = parse_usize(v, 1)?,
            "amp_iters" => self.amp_iters = parse_usize(v, 1)?,
            "baseline_aggregation" => {
                self.baseline_aggregation = match v {
                    "cluster" => BaselineAggregation::ClusterWeighted,
                    "dominant" => BaselineAggregation::DominantAp,
                    _ => return Err(format!("expected cluster or dominant, got `{v}`")),
                }
            }
            "timing_reps" => self.timing_reps = parse_usize(v, 5)?,
            "timing_warmup" => self.timing_warmup = parse_usize(v, 0)?,
            "timing_slots" => self.timing_slots = parse_usize(v, 1)?,
            "pareto_widths" => self.pareto_widths = parse_list(v)?,
            "pareto_depths" => self.pareto_depths = parse_list(v)?,
            "pareto_train_slots" => self.pareto_train_slots = parse_usize(v, 2)?,
            "pareto_max_epochs" => self.pareto_max_epochs = parse_usize(v, 1)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }
}

impl RunConfig {
    /// Parses the text of a configuration file.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigLine {
                line,
                key: content.to_string(),
                msg: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some((first, _, _)) = entries.iter().find(|(_, k, _)| *k == key) {
                return Err(Error::ConfigLine { line, key: key.into(), msg: format!("already set on line {first}") });
            }
            entries.push((line, key, value));
        }

        let mut cfg = RunConfig::default();
        if let Some(&(line, key, value)) = entries.iter().find(|(_, k, _)| *k == "topology") {
            cfg.set(key, value).map_err(|msg| Error::ConfigLine { line, key: key.into(), msg })?;
            cfg = Self::defaults_for(cfg.topology);
        }
        for &(line, key, value) in &entries {
            cfg.set(key, value).map_err(|msg| Error::ConfigLine { line, key: key.into(), msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Every key with its effective value, one per line, in a fixed order.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("topology", topology_str(self.topology).into());
        put("num_aps", self.num_aps.to_string());
        put("num_devices", self.num_devices.to_string());
        put("num_antennas", self.num_antennas.to_string());
        put("pilot_len", self.pilot_len.to_string());
        put("cluster_size", self.cluster_size.to_string());
        put("epsilon", self.epsilon.to_string());
        put("area_side_m", self.area_side_m.to_string());
        put("edge_margin_m", self.edge_margin_m.to_string());
        put("min_device_ap_dist_m", self.min_device_ap_dist_m.to_string());
        put("min_ap_spacing_m", self.min_ap_spacing_m.to_string());
        put("ap_height_m", self.ap_height_m.to_string());
        put("device_height_m", self.device_height_m.to_string());
        put("carrier_freq_mhz", self.carrier_freq_mhz.to_string());
        put("tx_power_mw", self.tx_power_mw.to_string());
        put("noise_power_dbm", self.noise_power_dbm.to_string());
        put("noiseless", self.noiseless.to_string());
        put("shadow_sigma_db", self.shadow_sigma_db.to_string());
        put("fading", if self.static_fading { "static-block" } else { "per-slot" }.into());
        put("fading_block_len", self.fading_block_len.to_string());
        put(
            "pilot_kind",
            match self.pilot_kind {
                PilotKind::Gaussian => "gaussian",
                PilotKind::Orthonormal => "orthonormal",
            }
            .into(),
        );
        put("power_control", self.power_control.to_string());
        put("coherence_time_ms", self.coherence_time_ms.to_string());
        put("coherence_bandwidth_khz", self.coherence_bandwidth_khz.to_string());
        put("pilot_fraction", self.pilot_fraction.to_string());
        put("train_slots", self.train_slots.to_string());
        put("eval_slots", self.eval_slots.to_string());
        put("hidden_width", self.hidden_width.to_string());
        put("hidden_layers", self.hidden_layers.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("adam_beta1", self.adam_beta1.to_string());
        put("adam_beta2", self.adam_beta2.to_string());
        put("adam_epsilon", self.adam_epsilon.to_string());
        put("batch_size", self.batch_size.to_string());
        put("max_epochs", self.max_epochs.to_string());
        put("early_stop_patience", self.early_stop_patience.to_string());
        put("validation_fraction", self.validation_fraction.to_string());
        put("aps_per_slot", self.aps_per_slot.to_string());
        put("devices_per_slot", self.devices_per_slot.to_string());
        put("per_ap_models", self.per_ap_models.to_string());
        put("fusion_rule", self.fusion_rule.as_str().into());
        put("num_taus", self.num_taus.to_string());
        put("tau", self.tau.to_string());
        put("lambda", self.lambda.map_or_else(|| "auto".to_string(), |l| l.to_string()));
        put("amp_alpha", self.amp_alpha.to_string());
        put("step_scale", self.step_scale.to_string());
        put("ista_iters", self.ista_iters.to_string());
        put("fista_iters", self.fista_iters.to_string());
        put("amp_iters", self.amp_iters.to_string());
        put(
            "baseline_aggregation",
            match self.baseline_aggregation {
                BaselineAggregation::ClusterWeighted => "cluster",
                BaselineAggregation::DominantAp => "dominant",
            }
            .into(),
        );
        put("timing_reps", self.timing_reps.to_string());
        put("timing_warmup", self.timing_warmup.to_string());
        put("timing_slots", self.timing_slots.to_string());
        put("pareto_widths", list_str(&self.pareto_widths));
        put("pareto_depths", list_str(&self.pareto_depths));
        put("pareto_train_slots", self.pareto_train_slots.to_string());
        put("pareto_max_epochs", self.pareto_max_epochs.to_string());
        s
    }

    /// SHA-256 of [`RunConfig::emit`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.emit().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cross-field checks, run before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.scenario(1).validate()?;
        if self.cluster_size > self.num_aps {
            return Err(Error::Config(format!(
                "cluster_size = {} exceeds num_aps = {}",
                self.cluster_size, self.num_aps
            )));
        }
        self.train_config(0).validate()?;
        if !coherence_budget_ok(
            self.pilot_len,
            self.coherence_time_ms * 1e-3,
            self.coherence_bandwidth_khz * 1e3,
            self.pilot_fraction,
        ) {
            log::warn!(
                "pilot_len = {} exceeds the reserved {} of a {}-symbol coherence block",
                self.pilot_len,
                self.pilot_fraction,
                self.coherence_time_ms * self.coherence_bandwidth_khz
            );
        }
        Ok(())
    }

    pub fn noise_var_w(&self) -> f64 {
        if self.noiseless {
            0.0
        } else {
            dbm_to_watts(self.noise_power_dbm)
        }
    }

    pub fn fading_mode(&self) -> FadingMode {
        if self.static_fading {
            FadingMode::StaticBlock { block_len: self.fading_block_len }
        } else {
            FadingMode::PerSlot
        }
    }

    pub fn geometry(&self) -> GeometryConfig {
        GeometryConfig {
            area_side_m: self.area_side_m,
            edge_margin_m: self.edge_margin_m,
            min_device_ap_dist_m: self.min_device_ap_dist_m,
            min_ap_spacing_m: self.min_ap_spacing_m,
            ap_height_m: self.ap_height_m,
            device_height_m: self.device_height_m,
            carrier_freq_hz: self.carrier_freq_mhz * 1e6,
            num_aps: self.num_aps,
            num_devices: self.num_devices,
            topology_mode: self.topology,
        }
    }

    pub fn scenario(&self, num_slots: usize) -> ScenarioConfig {
        ScenarioConfig {
            geometry: self.geometry(),
            num_antennas: self.num_antennas,
            pilot_len: self.pilot_len,
            pilot_kind: self.pilot_kind,
            epsilon: self.epsilon,
            tx_power_w: self.tx_power_mw * 1e-3,
            noise_var_w: self.noise_var_w(),
            shadow_sigma_db: self.shadow_sigma_db,
            fading_mode: self.fading_mode(),
            power_control: self.power_control,
            num_slots,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            early_stop_patience: self.early_stop_patience,
            validation_fraction: self.validation_fraction,
            seed,
        }
    }

    pub fn solver_config(&self, algorithm: Algorithm) -> SolverConfig {
        SolverConfig {
            algorithm,
            max_iters: match algorithm {
                Algorithm::Ista => self.ista_iters,
                Algorithm::Fista => self.fista_iters,
                Algorithm::Amp => self.amp_iters,
            },
            lambda: self.lambda,
            step_scale: self.step_scale,
            amp_alpha: self.amp_alpha,
            seed: crate::seed::derive_seed(self.seed, "solver", 0),
        }
    }
}

/// Where an artifact came from: enough to regenerate it bit-identically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// The effective configuration, as emitted.
    pub config: String,
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        let config = cfg.emit();
        Provenance { command: command.into(), config_hash: cfg.hash(), seed: cfg.seed, config }
    }

    /// Writes `<artifact>.meta` next to `artifact`.
    ///
    /// The sidecar is itself a valid configuration file: provenance lines are
    /// comments, followed by the full effective configuration.
    pub fn write_sidecar(&self, artifact: &Path) -> Result<()> {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".meta");
        let text = format!(
            "# artifact = {}\n# command = {}\n# config_hash = {}\n# seed = {}\n{}",
            artifact.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
            self.command,
            self.config_hash,
            self.seed,
            self.config
        );
        std::fs::write(PathBuf::from(name), text)?;
        Ok(())
    }
}
