//! `cmmlp` command-line front end: dataset generation, training,
//! evaluation, prediction, gradient verification and ablation sweeps.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (non-finite values or a failed gradient check).

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use image::imageops::{self, FilterType};
use image::{GrayImage, Luma, Rgb};

use cmmlp_core::data::{self, Sample, SynthSpec};
use cmmlp_core::metrics::{self, MetricReport};
use cmmlp_core::network::{self, Setting};
use cmmlp_core::train::{self, EpochRecord};
use cmmlp_core::verify::{self, Scope};
use cmmlp_core::{Error as CoreError, ParamStore, Tensor};

use config::{RunConfig, RESOLVED_NAME};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const DEFAULT_SETTINGS: &str = "full,w/o-MFI,w/o-Local,w/o-Global,w/o-ACRE,MFI-PP,MFI-CP";

#[derive(Debug)]
pub struct UsageError(pub String);

#[derive(Debug)]
pub struct NumericFailure(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for NumericFailure {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Maps an error chain to the documented exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<NumericFailure>() {
            return EXIT_NUMERIC;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Config(_) => EXIT_USAGE,
                CoreError::NonFinite(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

#[derive(Debug, Parser)]
#[command(name = "cmmlp", version, about = "CM-MLP segmentation: train, evaluate, predict, verify")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen {
        /// JSON synthetic spec; defaults are used for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train a model and write checkpoints, history and the resolved config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `key=value` override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on every image of a dataset.
    Eval {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Report path; a `.jsonl` sibling holds per-image records.
        #[arg(long)]
        out: PathBuf,
        /// Run config; defaults to `config.txt` beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the ground-truth masks as predictions (no checkpoint needed).
        #[arg(long)]
        oracle: bool,
    },
    /// Write the probability map and a thresholded overlay for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient verification.
    Gradcheck {
        #[arg(long, default_value = "primitive")]
        scope: String,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Train and evaluate several configuration toggles on the same data.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_SETTINGS)]
        settings: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("CMMLP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn deterministic_env() -> bool {
    std::env::var("CMMLP_DETERMINISTIC").is_ok_and(|v| v == "1")
}

pub fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Gen { spec, out, count, seed, size } => cmd_gen(spec.as_deref(), &out, count, seed, size),
        Command::Train { config, data, out, overrides } => {
            let cfg = resolve(config.as_deref(), data, out, &overrides)?;
            cmd_train(&cfg)
        }
        Command::Eval { checkpoint, data, out, config, oracle } => {
            cmd_eval(checkpoint.as_deref(), &data, &out, config.as_deref(), oracle)
        }
        Command::Predict { checkpoint, image, out, config } => cmd_predict(&checkpoint, &image, &out, config.as_deref()),
        Command::Gradcheck { scope, tolerance } => cmd_gradcheck(&scope, tolerance),
        Command::Ablate { config, data, settings, out, overrides } => {
            let cfg = resolve(config.as_deref(), data, None, &overrides)?;
            cmd_ablate(&cfg, &settings, &out)
        }
    }
}

/// Config file, then `--set` overrides, then explicit flags and the
/// environment.
pub fn resolve(config: Option<&Path>, data: Option<PathBuf>, out: Option<PathBuf>, overrides: &[String]) -> anyhow::Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(overrides).map_err(usage)?;
    if data.is_some() {
        cfg.data_root = data;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    if deterministic_env() {
        cfg.deterministic = true;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

pub fn cmd_gen(spec_path: Option<&Path>, out: &Path, count: Option<usize>, seed: Option<u64>, size: Option<usize>) -> anyhow::Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(c) = count {
        spec.count = c;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(s) = size {
        spec.size = s;
    }
    let samples = data::generate(&spec)?;
    data::write_dataset(out, &samples, Some(&spec))?;
    println!("wrote {} samples ({}x{}) to {}", samples.len(), spec.size, spec.size, out.display());
    Ok(())
}

fn load_data(cfg: &RunConfig) -> anyhow::Result<Vec<Sample>> {
    let root = cfg
        .data_root
        .as_ref()
        .ok_or_else(|| usage("no dataset given (use --data or data.root)"))?;
    let samples = data::load_root(root, Some(cfg.model.image_size))?;
    if samples.is_empty() {
        return Err(CoreError::Data(format!("no images found under {}", root.display())).into());
    }
    Ok(samples)
}

fn write_history(path: &Path, history: &[EpochRecord]) -> anyhow::Result<()> {
    let mut s = String::new();
    for r in history {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| usage("no output directory given (use --out or output.dir)"))?;
    fs::create_dir_all(&out)?;
    fs::write(out.join(RESOLVED_NAME), cfg.to_text())?;

    let samples = load_data(cfg)?;
    let (train_set, val_set, test_set) = data::split(&samples, cfg.split, cfg.split_seed);
    println!(
        "data: {} train / {} val / {} test, model has {} parameters",
        train_set.len(),
        val_set.len(),
        test_set.len(),
        cfg.model.param_count()?
    );
    let tcfg = cfg.train_config();
    let init: ParamStore<f32> = cfg.model.init_params(cfg.init_seed)?;
    let started = Instant::now();
    let history_path = out.join("history.jsonl");
    let mut history = Vec::new();
    let mut on_epoch = |rec: &EpochRecord, weights: &ParamStore<f32>| -> cmmlp_core::Result<()> {
        history.push(rec.clone());
        let log = rec.epoch == 1 || rec.epoch == tcfg.epochs || rec.val.is_some() || rec.epoch.is_multiple_of(10);
        if log {
            let val = rec.val.map(|v| format!("  val Dice {:.4}", v.dice)).unwrap_or_default();
            eprintln!(
                "epoch {:>4}  step {:>5}  loss {:.4}{val}  ({:.0}s)",
                rec.epoch,
                rec.steps,
                rec.loss.total,
                started.elapsed().as_secs_f64()
            );
        }
        if tcfg.checkpoint_every > 0 && rec.epoch.is_multiple_of(tcfg.checkpoint_every) {
            weights.save(&out.join(format!("epoch_{:04}.ckpt", rec.epoch)))?;
        }
        Ok(())
    };
    let result = train::fit(&cfg.model, &tcfg, init, &train_set, &val_set, &mut on_epoch);
    write_history(&history_path, &history)?;
    let result = result?;
    result.best.save(&out.join("best.ckpt"))?;
    result.last.save(&out.join("last.ckpt"))?;

    let mut rows = vec![("train".to_string(), train::evaluate(&cfg.model, &result.best, &train_set)?.0)];
    for (name, set) in [("val", &val_set), ("test", &test_set)] {
        if !set.is_empty() {
            rows.push((name.to_string(), train::evaluate(&cfg.model, &result.best, set)?.0));
        }
    }
    let table = report::metric_table("Split", &rows);
    fs::write(out.join("metrics.txt"), &table)?;
    fs::write(out.join("metrics.jsonl"), report::metric_lines("split", &rows))?;
    println!("best epoch {} of {}\n{table}", result.best_epoch, tcfg.epochs);
    Ok(())
}

fn config_for_checkpoint(checkpoint: &Path, explicit: Option<&Path>) -> anyhow::Result<RunConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join(RESOLVED_NAME),
    };
    if !path.exists() {
        return Err(usage(format!(
            "no run config at {} (pass --config)",
            path.display()
        )));
    }
    RunConfig::load(&path).map_err(usage)
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> anyhow::Result<ParamStore<f32>> {
    let params = ParamStore::<f32>::load(path)?;
    params.validate(&cfg.model.param_specs()?)?;
    Ok(params)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn cmd_eval(checkpoint: Option<&Path>, data_dir: &Path, out: &Path, config: Option<&Path>, oracle: bool) -> anyhow::Result<()> {
    let cfg = match (checkpoint, config) {
        (Some(c), explicit) => config_for_checkpoint(c, explicit)?,
        (None, Some(p)) => RunConfig::load(p).map_err(usage)?,
        (None, None) => RunConfig::default(),
    };
    let samples = data::load_root(data_dir, Some(cfg.model.image_size))?;
    if samples.is_empty() {
        return Err(CoreError::Data(format!("no images found under {}", data_dir.display())).into());
    }
    let per_image: Vec<MetricReport> = if oracle {
        samples
            .iter()
            .map(|s| metrics::metrics(&s.mask, &s.mask, 0.5))
            .collect::<cmmlp_core::Result<_>>()?
    } else {
        let ckpt = checkpoint.ok_or_else(|| usage("--checkpoint is required without --oracle"))?;
        let params = load_checkpoint(ckpt, &cfg)?;
        train::evaluate(&cfg.model, &params, &samples)?.1
    };
    let summary = metrics::aggregate(&per_image);
    let label = data_dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("data")
        .to_string();
    let label = if oracle { format!("{label} (oracle)") } else { label };
    let table = report::metric_table("Dataset", &[(label.clone(), summary)]);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, &table)?;
    let mut lines: Vec<(String, MetricReport)> = samples.iter().map(|s| s.id.clone()).zip(per_image).collect();
    lines.push(("summary".to_string(), summary));
    fs::write(sibling(out, ".jsonl"), report::metric_lines("id", &lines))?;
    fs::write(sibling(out, ".config.txt"), cfg.to_text())?;
    print!("{table}");
    Ok(())
}

pub fn cmd_predict(checkpoint: &Path, image_path: &Path, out: &Path, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg = config_for_checkpoint(checkpoint, config)?;
    let params = load_checkpoint(checkpoint, &cfg)?;
    let original = image::open(image_path)
        .map_err(|e| CoreError::Data(format!("cannot read {}: {e}", image_path.display())))?
        .to_rgb8();
    let n = cfg.model.image_size as u32;
    let resized = imageops::resize(&original, n, n, FilterType::Triangle);
    let (w, h) = (n as usize, n as usize);
    let x = Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        resized.get_pixel((p % w) as u32, (p / w) as u32)[c] as f32 / 255.0
    });
    let prob = network::predict(&cfg.model, &params, &x)?;
    if !prob.is_finite() {
        return Err(NumericFailure("prediction contains non-finite values".into()).into());
    }
    let prob_img: GrayImage = data::plane_to_png(&prob)?;
    let prob_img = if original.dimensions() == (n, n) {
        prob_img
    } else {
        imageops::resize(&prob_img, original.width(), original.height(), FilterType::Triangle)
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    prob_img.save(out)?;
    let mut overlay = original.clone();
    for (px, p) in overlay.pixels_mut().zip(prob_img.pixels()) {
        let Luma([v]) = *p;
        if v >= 128 {
            let Rgb([r, g, b]) = *px;
            *px = Rgb([r / 2 + 127, g / 2, b / 2]);
        }
    }
    let overlay_path = sibling(out, "_overlay.png");
    overlay.save(&overlay_path)?;
    fs::write(sibling(out, ".config.txt"), cfg.to_text())?;
    println!("wrote {} and {}", out.display(), overlay_path.display());
    Ok(())
}

pub fn cmd_gradcheck(scope: &str, tolerance: Option<f64>) -> anyhow::Result<()> {
    let scope = Scope::parse(scope).map_err(|e| usage(e.to_string()))?;
    let results = verify::run(scope, tolerance)?;
    let mut failed = 0;
    for r in &results {
        println!(
            "{:<4} {:<30} max rel err {:.3e} (tol {:.0e}, {} checked, {} kink-skipped, worst `{}`)",
            if r.pass { "ok" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.tolerance,
            r.checked,
            r.skipped_kinks,
            r.worst_leaf
        );
        failed += usize::from(!r.pass);
    }
    println!("{} checks, {failed} failed", results.len());
    if failed > 0 {
        return Err(NumericFailure(format!("{failed} gradient checks failed")).into());
    }
    Ok(())
}

pub fn parse_settings(list: &str) -> anyhow::Result<Vec<Setting>> {
    let settings = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Setting::parse(s).map_err(|e| usage(e.to_string())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if settings.is_empty() {
        return Err(usage("no settings given"));
    }
    Ok(settings)
}

pub fn cmd_ablate(cfg: &RunConfig, settings: &str, out: &Path) -> anyhow::Result<()> {
    let settings = parse_settings(settings)?;
    let samples = load_data(cfg)?;
    let (train_set, val_set, test_set) = data::split(&samples, cfg.split, cfg.split_seed);
    let (eval_name, eval_set) = [("test", &test_set), ("val", &val_set), ("train", &train_set)]
        .into_iter()
        .find(|(_, s)| !s.is_empty())
        .expect("training split is never empty");
    let tcfg = cfg.train_config();
    let mut rows = Vec::new();
    for s in settings {
        let model = s.apply(&cfg.model);
        let init: ParamStore<f32> = model.init_params(cfg.init_seed)?;
        let started = Instant::now();
        let fit = train::fit(&model, &tcfg, init, &train_set, &val_set, &mut |_, _| Ok(()))?;
        let (m, _) = train::evaluate(&model, &fit.best, eval_set)?;
        eprintln!("{s}: {m} ({:.0}s)", started.elapsed().as_secs_f64());
        rows.push((s.name().to_string(), m));
    }
    let table = report::metric_table("Setting", &rows);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, &table)?;
    fs::write(sibling(out, ".jsonl"), report::metric_lines("setting", &rows))?;
    fs::write(sibling(out, ".config.txt"), cfg.to_text())?;
    println!("evaluated on the {eval_name} split\n{table}");
    Ok(())
}
