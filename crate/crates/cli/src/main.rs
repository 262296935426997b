use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cfad_core::baseline::Algorithm;
use cfad_core::config::{Provenance, RunConfig};
use cfad_core::detect::{select_clusters, PostMode};
use cfad_core::eval::{
    bench_timing, centralized_pool, decentralized_pools, generate_datasets, linear_grid, pareto_experiment,
    baseline_pool, run_sweep, snr_cdf, summarize, timed_methods, train_detector, write_auc_csv, write_cdf_csv,
    write_pareto_csv, write_roc_csv, write_timing_csv, AucRow, Detectors, Method, MethodResult, StrategyKind,
    SweepAxis,
};
use cfad_core::scenario::{generate_dataset, load_dataset, save_dataset, AccessSlotDataset, Network};
use cfad_core::slp::{load_model, save_model, SlpModel};
use cfad_core::{Error, ErrorCategory, Result};

#[derive(Parser, Debug)]
#[command(name = "cfad", version, about = "Activity detection experiments for cell-free massive MIMO")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the training and evaluation datasets.
    Generate {
        #[arg(long, value_enum, default_value_t = Split::Both)]
        split: Split,
    },
    /// Train a detector on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = StrategyArg::Decentralized)]
        strategy: StrategyArg,
        /// Hidden width V.
        #[arg(long)]
        hidden: Option<usize>,
        /// Hidden depth Z.
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Score a dataset with trained models and write the ROC.
    Detect {
        #[arg(long)]
        data: PathBuf,
        /// One shared model, or one per AP in AP order.
        #[arg(long, required = true, num_args = 1..)]
        model: Vec<PathBuf>,
        /// Post-processing for decentralized models.
        #[arg(long, value_enum, default_value_t = PostArg::Pond)]
        post: PostArg,
        #[arg(long)]
        taus: Option<usize>,
    },
    /// Run a sparse-recovery baseline and write its ROC.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = AlgoArg::Ista)]
        algo: AlgoArg,
        /// Iteration count (defaults: ista 235, fista 100, amp 18).
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        taus: Option<usize>,
    },
    /// CDF of the dominant-AP SNR over the devices of the network.
    SnrCdf {
        #[arg(long, default_value_t = -20.0)]
        min_db: f64,
        #[arg(long, default_value_t = 80.0)]
        max_db: f64,
        #[arg(long, default_value_t = 501)]
        points: usize,
    },
    /// Train the V x Z grid and mark the Pareto front.
    Pareto,
    /// Retrain and evaluate over a parameter sweep.
    Sweep {
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Comma-separated values (defaults to the standard grid of the axis).
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Comma-separated method labels.
        #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "dec-pond,dec-fusion")]
        methods: Vec<Method>,
    },
    /// Per-slot single-threaded inference timing.
    Bench {
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_delimiter = ',', value_parser = parse_method,
              default_value = "dec-pond,dec-fusion,central,ista,fista,amp")]
        methods: Vec<Method>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Split {
    Train,
    Eval,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum StrategyArg {
    Decentralized,
    Centralized,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum PostArg {
    Fusion,
    Pond,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AlgoArg {
    Ista,
    Fista,
    Amp,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Ista => Algorithm::Ista,
            AlgoArg::Fista => Algorithm::Fista,
            AlgoArg::Amp => Algorithm::Amp,
        }
    }
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    SweepAxis::parse(s).ok_or_else(|| format!("unknown axis `{s}` (expected L, K or eps)"))
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}`"))
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Io => 3,
        ErrorCategory::Numeric => 4,
        ErrorCategory::Mismatch => 5,
    }
}

/// Output directory plus the provenance stamped on everything written there.
struct Outputs {
    dir: PathBuf,
    provenance: Provenance,
}

impl Outputs {
    fn create(dir: &Path, command: &str, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.emit())?;
        Ok(Outputs { dir: dir.to_path_buf(), provenance: Provenance::new(command, cfg) })
    }

    /// Writes an artifact with `write` and stamps its sidecar.
    fn artifact(&self, name: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write(&path)?;
        self.provenance.write_sidecar(&path)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::parse_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.out_dir = common.out.clone();
    Ok(cfg)
}

fn auc_rows(results: &[MethodResult], axis: &str, value: f64) -> Vec<AucRow> {
    results
        .iter()
        .map(|r| AucRow {
            method: r.method.label().to_string(),
            axis: axis.to_string(),
            value,
            auc: r.auc_exact,
            best_accuracy: r.best_accuracy,
        })
        .collect()
}

fn write_results(out: &Outputs, results: &[MethodResult]) -> Result<()> {
    let curves: Vec<_> = results.iter().map(|r| r.curve.clone()).collect();
    out.artifact("roc.csv", |p| write_roc_csv(p, &curves))?;
    out.artifact("auc.csv", |p| write_auc_csv(p, &auc_rows(results, "none", 0.0)))?;
    for r in results {
        println!("{}: auc {:.4}, best accuracy {:.4} at tau {:.4}", r.method.label(), r.auc_exact, r.best_accuracy, r.best_tau);
    }
    Ok(())
}

/// Rejects a dataset that does not match the configured system.
fn check_dataset(cfg: &RunConfig, data: &AccessSlotDataset) -> Result<()> {
    if cfg.cluster_size > data.num_aps() {
        return Err(Error::Mismatch(format!(
            "cluster_size {} exceeds the {} APs of the dataset",
            cfg.cluster_size,
            data.num_aps()
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Generate { split } => {
            cfg.validate()?;
            let out = Outputs::create(&cli.common.out, "generate", &cfg)?;
            let splits: &[(&str, usize, u64)] = match split {
                Split::Train => &[("train.cfds", cfg.train_slots, 0)],
                Split::Eval => &[("eval.cfds", cfg.eval_slots, 1)],
                Split::Both => &[("train.cfds", cfg.train_slots, 0), ("eval.cfds", cfg.eval_slots, 1)],
            };
            for &(name, slots, stream) in splits {
                let data = generate_dataset(&cfg.scenario(slots), cfg.seed, stream)?;
                out.artifact(name, |p| save_dataset(&data, p))?;
            }
        }
        Command::Train { data, strategy, hidden, layers } => {
            if let Some(v) = hidden {
                cfg.hidden_width = v;
            }
            if let Some(z) = layers {
                cfg.hidden_layers = z;
            }
            cfg.validate()?;
            let dataset = load_dataset(&data)?;
            check_dataset(&cfg, &dataset)?;
            let kind = match strategy {
                StrategyArg::Decentralized => StrategyKind::Decentralized,
                StrategyArg::Centralized => StrategyKind::Centralized,
            };
            let out = Outputs::create(&cli.common.out, &format!("train --strategy {}", kind.as_str()), &cfg)?;
            let det = train_detector(&cfg, &dataset, kind)?;
            let names: Vec<String> = if det.models.len() == 1 {
                vec!["model.cfmd".into()]
            } else {
                (0..det.models.len()).map(|m| format!("model-ap{m}.cfmd")).collect()
            };
            for ((model, report), name) in det.models.iter().zip(&det.reports).zip(&names) {
                out.artifact(name, |p| save_model(model, p))?;
                let log_name = name.replace(".cfmd", ".log.csv");
                out.artifact(&log_name, |p| {
                    let mut w = csv::Writer::from_path(p)?;
                    w.write_record(["epoch", "train_loss", "val_loss"])?;
                    for (e, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
                        w.write_record([(e + 1).to_string(), t.to_string(), v.to_string()])?;
                    }
                    w.flush()?;
                    Ok(())
                })?;
                println!(
                    "{name}: {} parameters, best epoch {} of {}, train loss {:.5}, validation loss {:.5}",
                    report.param_count,
                    report.best_epoch,
                    report.stopped_epoch,
                    report.best_train_loss(),
                    report.best_val_loss()
                );
            }
        }
        Command::Detect { data, model, post, taus } => {
            if let Some(n) = taus {
                cfg.num_taus = n;
            }
            cfg.validate()?;
            let dataset = load_dataset(&data)?;
            check_dataset(&cfg, &dataset)?;
            let models = model.iter().map(|p| load_model(p)).collect::<Result<Vec<SlpModel>>>()?;
            let out = Outputs::create(&cli.common.out, "detect", &cfg)?;
            let clusters = select_clusters(&dataset.lsf_map, cfg.cluster_size)?;
            let (method, pool) = if models[0].config.cluster_inputs > 1 {
                if models.len() != 1 {
                    return Err(Error::Mismatch("a centralized detector is a single model".into()));
                }
                if models[0].config.cluster_inputs != cfg.cluster_size {
                    return Err(Error::Mismatch(format!(
                        "model expects clusters of {} APs, configuration has cluster_size {}",
                        models[0].config.cluster_inputs, cfg.cluster_size
                    )));
                }
                (Method::Central, centralized_pool(&models[0], &dataset, &clusters)?)
            } else {
                if models.len() != 1 && models.len() != dataset.num_aps() {
                    return Err(Error::Mismatch(format!(
                        "{} models given for {} APs (expected 1 or one per AP)",
                        models.len(),
                        dataset.num_aps()
                    )));
                }
                let (method, mode) = match post {
                    PostArg::Pond => (Method::DecPond, PostMode::Pond),
                    PostArg::Fusion => (Method::DecFusion, PostMode::Fusion(cfg.fusion_rule)),
                };
                let mut pools = decentralized_pools(&models, &dataset, &clusters, &[mode])?;
                (method, pools.remove(0))
            };
            let result = summarize(method, &pool, cfg.num_taus)?;
            write_results(&out, &[result])?;
        }
        Command::Baseline { data, algo, iters, taus } => {
            let algorithm = Algorithm::from(algo);
            if let Some(t) = iters {
                match algorithm {
                    Algorithm::Ista => cfg.ista_iters = t,
                    Algorithm::Fista => cfg.fista_iters = t,
                    Algorithm::Amp => cfg.amp_iters = t,
                }
            }
            if let Some(n) = taus {
                cfg.num_taus = n;
            }
            cfg.validate()?;
            let dataset = load_dataset(&data)?;
            check_dataset(&cfg, &dataset)?;
            let out = Outputs::create(&cli.common.out, &format!("baseline --algo {}", algorithm.as_str()), &cfg)?;
            let clusters = select_clusters(&dataset.lsf_map, cfg.cluster_size)?;
            let pool = baseline_pool(&cfg, &dataset, algorithm, &clusters)?;
            let result = summarize(Method::Baseline(algorithm), &pool, cfg.num_taus)?;
            write_results(&out, &[result])?;
        }
        Command::SnrCdf { min_db, max_db, points } => {
            cfg.validate()?;
            if !(min_db < max_db) || points < 2 {
                return Err(Error::Config("snr-cdf needs min_db < max_db and at least 2 points".into()));
            }
            let out = Outputs::create(&cli.common.out, "snr-cdf", &cfg)?;
            let network = Network::build(&cfg.scenario(0), cfg.seed)?;
            let cdf = snr_cdf(&network.lsf, &network.tx_power_w, network.noise_var_w, &linear_grid(min_db, max_db, points));
            out.artifact("cdf.csv", |p| write_cdf_csv(p, &cdf))?;
            println!("5th-percentile dominant-AP SNR: {:.2} dB", cdf.target_db);
        }
        Command::Pareto => {
            cfg.validate()?;
            let out = Outputs::create(&cli.common.out, "pareto", &cfg)?;
            let train_data = generate_dataset(&cfg.scenario(cfg.pareto_train_slots), cfg.seed, 0)?;
            let rows = pareto_experiment(&cfg, &train_data)?;
            out.artifact("pareto.csv", |p| write_pareto_csv(p, &rows))?;
            for r in rows.iter().filter(|r| r.pareto_flag) {
                println!("front: V = {}, Z = {}, {} parameters, loss {:.5}", r.v, r.z, r.params, r.train_loss);
            }
        }
        Command::Sweep { axis, values, methods } => {
            cfg.validate()?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            let out = Outputs::create(&cli.common.out, &format!("sweep --axis {}", axis.as_str()), &cfg)?;
            let points = run_sweep(&cfg, axis, &values, &methods)?;
            let mut rows = Vec::new();
            let mut curves = Vec::new();
            for p in &points {
                rows.extend(auc_rows(&p.results, axis.as_str(), p.value));
                for r in &p.results {
                    let mut c = r.curve.clone();
                    c.method = format!("{}@{}={}", c.method, axis.as_str(), p.value);
                    curves.push(c);
                    println!("{} = {}: {} auc {:.4}", axis.as_str(), p.value, r.method.label(), r.auc_exact);
                }
            }
            out.artifact("auc.csv", |p| write_auc_csv(p, &rows))?;
            out.artifact("roc.csv", |p| write_roc_csv(p, &curves))?;
        }
        Command::Bench { reps, methods } => {
            if let Some(r) = reps {
                cfg.timing_reps = r;
            }
            cfg.validate()?;
            let out = Outputs::create(&cli.common.out, "bench", &cfg)?;
            let (train_data, eval) = generate_datasets(&cfg)?;
            let detectors = Detectors::train_for(&cfg, &train_data, &methods)?;
            let timing_slots = cfg.timing_slots.min(eval.len());
            let timed = timed_methods(&cfg, &detectors, &eval, &methods)?;
            let report = bench_timing(&timed, &eval.slots[..timing_slots], cfg.timing_reps, cfg.timing_warmup)?;
            out.artifact("timing.csv", |p| write_timing_csv(p, &report))?;
            for e in &report.entries {
                println!("{}: median {:.3e} s per slot", e.method, e.median_s);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({:?}): {e}", e.category());
            ExitCode::from(exit_code(e.category()))
        }
    }
}
