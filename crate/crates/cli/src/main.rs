#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Command-line driver: data generation, training, evaluation, Monte Carlo
//! prediction, attention export and SNR sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biosig::config::{IntervalMode, LossMode, MetricSpace, ModelKind, RunConfig};
use biosig::evaluation::{self, DEFAULT_SNRS};
use biosig::models::checkpoint::Checkpoint;
use biosig::models::train::{train, EpochRecord, Prepared};
use biosig::models::Model;
use biosig::spectral::{Dataset, GenerateParams, NormalizerState, Split, SpeciesCatalog};
use biosig::uncertainty;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "biosig", version, about = "Biosignature flux regression from synthetic spectra")]
struct Cli {
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Strict JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset file.
    GenData(GenData),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Point metrics and error correlations on one split.
    Eval(EvalArgs),
    /// Monte Carlo predictive distribution with credible intervals.
    McPredict(McArgs),
    /// Export SQuAT cross-attention for one spectrum.
    Attention(AttentionArgs),
    /// Metrics on test spectra re-noised at fixed SNR levels.
    SnrSweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 5.0)]
    snr_min: f64,
    #[arg(long, default_value_t = 100.0)]
    snr_max: f64,
    /// Species catalog JSON; the built-in table when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// train:val:test weights.
    #[arg(long, default_value = "3:1:1", value_parser = parse_ratio)]
    split_ratio: [u32; 3],
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hyperparameter preset used when no config file is given.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    loss_mode: Option<LossMode>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory for metrics.csv and error_correlation.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long)]
    space: Option<MetricSpace>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
struct McArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Prediction CSV; calibration metrics go beside it.
    #[arg(long)]
    out: PathBuf,
    /// Stochastic passes; 50 for bcnn and 30 otherwise unless configured.
    #[arg(long)]
    passes: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    interval_mode: Option<IntervalMode>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
}

#[derive(Args, Debug)]
struct AttentionArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sample id; the first test sample when omitted.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// One or more checkpoints.
    #[arg(long, required = true, num_args = 1..)]
    ckpt: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated SNR levels.
    #[arg(long, value_delimiter = ',')]
    snrs: Option<Vec<f64>>,
    #[arg(long)]
    space: Option<MetricSpace>,
}

fn parse_ratio(s: &str) -> Result<[u32; 3], String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, c] = parts.as_slice() else {
        return Err("expected three integers like 3:1:1".into());
    };
    let p = |x: &str| x.trim().parse::<u32>().map_err(|e| format!("{x:?}: {e}"));
    Ok([p(a)?, p(b)?, p(c)?])
}

/// A failure with its exit code: 1 for invalid input, 2 for I/O.
struct Failure {
    code: u8,
    message: String,
}

impl From<biosig::Error> for Failure {
    fn from(e: biosig::Error) -> Self {
        Failure { code: if e.is_io() { 2 } else { 1 }, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { code: 2, message: format!("{}: {e}", path.display()) }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

struct Session {
    seed: Option<u64>,
    config: Option<PathBuf>,
    quiet: bool,
}

impl Session {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let session = Session { seed: cli.seed, config: cli.config, quiet: cli.quiet };
    let result = match cli.command {
        Command::GenData(a) => gen_data(&session, a),
        Command::Train(a) => train_cmd(&session, a),
        Command::Eval(a) => eval_cmd(&session, a),
        Command::McPredict(a) => mc_cmd(&session, a),
        Command::Attention(a) => attention_cmd(&session, a),
        Command::SnrSweep(a) => sweep_cmd(&session, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// `<path>.config.json` beside an output file.
fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    out.with_file_name(name)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

fn gen_data(s: &Session, a: GenData) -> Outcome {
    let catalog = match &a.catalog {
        Some(p) => SpeciesCatalog::load(p)?,
        None => SpeciesCatalog::default(),
    };
    let params = GenerateParams {
        n: a.n,
        seed: s.seed.unwrap_or(42),
        snr_range: [a.snr_min, a.snr_max],
        split_ratio: a.split_ratio,
        catalog,
        ..GenerateParams::default()
    };
    let ds = Dataset::generate(&params)?;
    let fp = ds.write(&a.out)?;
    write_json(&sidecar(&a.out), &params)?;
    let [tr, va, te] = ds.meta().split_counts;
    s.note(format!("wrote {} samples ({tr}/{va}/{te}) to {} [{fp}]", ds.len(), a.out.display()));
    Ok(())
}

/// Preset or config file, then flag overrides.
fn run_config(s: &Session, a: &TrainArgs) -> Outcome<RunConfig> {
    let mut cfg = match &s.config {
        Some(path) => {
            let mut cfg = RunConfig::load(path)?;
            if let Some(m) = a.model {
                cfg.model = m;
            }
            cfg
        }
        None => {
            let model = a.model.unwrap_or(ModelKind::Squat);
            match a.preset {
                Preset::Full => RunConfig { model, ..RunConfig::default() },
                Preset::Desk => RunConfig::desk(model),
            }
        }
    };
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    if let Some(m) = a.loss_mode {
        cfg.loss_mode = m;
    }
    if let Some(e) = a.epochs {
        let mut t = cfg.train_config();
        t.epochs = e;
        t.warmup_epochs = t.warmup_epochs.min(e.saturating_sub(1));
        cfg.train = Some(t);
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(s: &Session, a: TrainArgs) -> Outcome {
    let cfg = run_config(s, &a)?;
    let data = cfg.data.clone().ok_or_else(|| invalid("train needs --data or a config `data` path"))?;
    let out = cfg.out.clone().ok_or_else(|| invalid("train needs --out or a config `out` path"))?;
    let (ds, fingerprint) = Dataset::read(&data)?;
    let grid = ds.grid()?;
    let norm = NormalizerState::fit(&ds.train())?;
    let tr = Prepared::from_dataset(&ds, &norm, &ds.indices(Split::Train))?;
    let va = Prepared::from_dataset(&ds, &norm, &ds.indices(Split::Val))?;
    let mut model = Model::<f32>::build(&cfg, &grid, &ds.meta().catalog, cfg.seed)?;
    s.note(format!("training {} ({} parameters) on {} samples", cfg.model, model.params.count(), tr.len()));
    let mut progress = |r: &EpochRecord| {
        s.note(format!("epoch {:>3}  train {:.6}  val_mse {:.6}  lr {:.2e}", r.epoch, r.train_loss, r.val_mse, r.lr))
    };
    let history = train(&mut model, &tr, &va, &cfg.train_config(), cfg.loss_mode, cfg.seed, Some(&mut progress))?;
    s.note(format!("best epoch {} (val_mse {:.6})", history.best_epoch, history.best_val_mse));
    let ckpt = Checkpoint::new(
        model,
        &cfg,
        cfg.seed,
        norm,
        ds.meta().grid,
        ds.meta().catalog.clone(),
        Some(fingerprint),
        Some(history),
    );
    ckpt.write(&out)?;
    write_json(&sidecar(&out), &cfg)?;
    s.note(format!("wrote {}", out.display()));
    Ok(())
}

fn load_pair(ckpt: &Path, data: &Path) -> Outcome<(Checkpoint, Dataset)> {
    let ck = Checkpoint::read(ckpt)?;
    let (ds, fp) = Dataset::read(data)?;
    if ck.manifest.dataset_fingerprint.as_deref().is_some_and(|f| f != fp) {
        eprintln!("warning: {} was trained on a different dataset than {}", ckpt.display(), data.display());
    }
    if ds.n_wavelengths() != ck.model.input_len() {
        return Err(invalid(format!(
            "dataset has {} wavelengths, checkpoint expects {}",
            ds.n_wavelengths(),
            ck.model.input_len()
        )));
    }
    Ok((ck, ds))
}

fn split_data(ck: &Checkpoint, ds: &Dataset, split: Split) -> Outcome<Prepared> {
    let ids = ds.indices(split);
    if ids.len() < 3 {
        return Err(invalid(format!("split {split:?} has fewer than 3 samples")));
    }
    Ok(Prepared::from_dataset(ds, &ck.manifest.normalizer, &ids)?)
}

fn eval_cmd(s: &Session, a: EvalArgs) -> Outcome {
    let (ck, ds) = load_pair(&a.ckpt, &a.data)?;
    let space = a.space.unwrap_or(ck.manifest.config.metric_space);
    let data = split_data(&ck, &ds, a.split.into())?;
    let (pred, truth) = evaluation::evaluate(&ck, &data, space)?;
    let report = evaluation::point_metrics(&pred, &truth, space)?;
    let corr = evaluation::error_correlation(&pred, &truth)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| io_failure(&a.out_dir, e))?;
    report.write_csv(&a.out_dir.join("metrics.csv"))?;
    corr.write_csv(&a.out_dir.join("error_correlation.csv"))?;
    let mut cfg = ck.manifest.config.clone();
    cfg.metric_space = space;
    write_json(&a.out_dir.join("config.json"), &cfg)?;
    s.note(format!("wrote reports to {}", a.out_dir.display()));
    println!("{} model={}", report.summary(), ck.manifest.kind);
    Ok(())
}

fn mc_cmd(s: &Session, a: McArgs) -> Outcome {
    let (ck, ds) = load_pair(&a.ckpt, &a.data)?;
    let mut cfg = ck.manifest.config.clone();
    if let Some(p) = a.passes {
        cfg.mc_passes = Some(p);
    }
    if let Some(m) = a.interval_mode {
        cfg.interval_mode = m;
    }
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    let passes = cfg.passes();
    let data = split_data(&ck, &ds, a.split.into())?;
    s.note(format!("{passes} stochastic passes over {} samples", data.len()));
    let samples = uncertainty::mc_predict(&ck.model, &data, passes, cfg.seed)?;
    let dist = uncertainty::decompose(&samples)?;
    let (lower, upper) = uncertainty::interval(cfg.interval_mode, &samples, &dist, a.level)?;
    let truth = data.targets();
    uncertainty::write_predictions(&a.out, &data.ids, &dist, &lower, &upper, &truth)?;
    let report = uncertainty::calibration_report(&dist, &truth)?;
    let mut cal = a.out.file_stem().unwrap_or_default().to_os_string();
    cal.push("_calibration.csv");
    report.write_csv(&a.out.with_file_name(cal))?;
    write_json(&sidecar(&a.out), &cfg)?;
    s.note(format!(
        "coverage 1σ {:.4}  2σ {:.4}  sharpness {:.6}",
        report.coverage_1sigma, report.coverage_2sigma, report.sharpness
    ));
    Ok(())
}

fn attention_cmd(s: &Session, a: AttentionArgs) -> Outcome {
    let ck = Checkpoint::read(&a.ckpt)?;
    if ck.manifest.kind != ModelKind::Squat {
        return Err(invalid("attention export requires a squat checkpoint"));
    }
    let data = a.data.as_deref().ok_or_else(|| invalid("attention needs --data"))?;
    let out = a.out.as_deref().ok_or_else(|| invalid("attention needs --out"))?;
    let (_, ds) = load_pair(&a.ckpt, data)?;
    let id = match a.sample {
        Some(id) if id < ds.len() => id,
        Some(id) => return Err(invalid(format!("sample {id} out of range (dataset has {})", ds.len()))),
        None => *ds.indices(Split::Test).first().ok_or_else(|| invalid("dataset has no test samples"))?,
    };
    let spectrum: Vec<f64> = ds.spectrum(id).iter().map(|&v| v as f64).collect();
    let export = evaluation::export_attention(&ck, &spectrum)?;
    export.write_csv(out)?;
    write_json(&sidecar(out), &ck.manifest.config)?;
    s.note(format!("wrote attention for sample {id} to {}", out.display()));
    Ok(())
}

fn sweep_cmd(s: &Session, a: SweepArgs) -> Outcome {
    let snrs = a.snrs.clone().unwrap_or_else(|| DEFAULT_SNRS.to_vec());
    if snrs.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("SNR levels must be positive"));
    }
    let seed = s.seed.unwrap_or(42);
    let mut rows = Vec::new();
    let mut configs = Vec::new();
    for path in &a.ckpt {
        let (ck, ds) = load_pair(path, &a.data)?;
        let space = a.space.unwrap_or(ck.manifest.config.metric_space);
        rows.extend(evaluation::snr_sweep(&ck, &ds, &snrs, seed, space)?);
        configs.push(ck.manifest.config);
    }
    evaluation::write_sweep_csv(&a.out, &rows)?;
    write_json(&sidecar(&a.out), &serde_json::json!({ "seed": seed, "snrs": snrs, "models": configs }))?;
    for r in &rows {
        s.note(format!("{:<6} snr {:>6}  r2 {}  rmse {:.6}", r.model, r.snr, r.r2.map_or("undefined".into(), |v| format!("{v:.4}")), r.rmse));
    }
    Ok(())
}
