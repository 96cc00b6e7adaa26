//! Command-line runner: run configuration, subcommands and artifact layout.
//!
//! A run directory holds `config.txt` (the resolved configuration), a
//! `report.csv` with one row per seed and one `seed-N/` directory per seed:
//!
//! ```text
//! seed-N/estimators.nsdf     pretrained mean/variance networks (pretrain)
//! seed-N/model.nsdf          full model (train)
//! seed-N/train_report.json
//! seed-N/samples.csv         one window's ensemble (sample)
//! seed-N/report.json         test-split scores (evaluate)
//! seed-N/plot_test_region.csv
//! seed-N/plot_window.csv
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::data::{load_csv, split_dataset, synth, write_csv, SplitScheme, SynthKind, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::pipeline::{
    evaluate, load_checkpoint, prepare_data, pretrain_estimators, region_csv, sample_window, save_checkpoint,
    train_nsdiff, window_csv, Denoiser, NsDiffModel, PreparedData, TrainConfig,
};
use crate::estimators::{ChannelMlp, Target};
use crate::metrics::EvalReport;
use crate::rng::{substream, Stream};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "NSDIFF_OUT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Ratio,
    Months,
}

/// Flat experiment configuration; every key has a default.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// CSV dataset; when unset a synthetic series is generated.
    pub data: Option<PathBuf>,
    /// Whether the CSV's first column is a timestamp; `None` detects a `date` header.
    pub date_column: Option<bool>,
    /// Keep only the first `rows` rows (0 keeps all).
    pub rows: usize,
    pub synth_kind: SynthKind,
    pub synth_length: usize,
    pub split: SplitKind,
    pub steps_per_month: usize,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            date_column: None,
            rows: 0,
            synth_kind: SynthKind::Linear,
            synth_length: 7588,
            split: SplitKind::Ratio,
            steps_per_month: 720,
            seeds: vec![1, 2, 3],
            out: None,
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for key {key}"))),
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 27] = [
        "data",
        "date_column",
        "rows",
        "synth_kind",
        "synth_length",
        "split",
        "steps_per_month",
        "seeds",
        "out",
        "epochs",
        "batch_size",
        "lr",
        "steps",
        "beta_start",
        "beta_end",
        "variant",
        "variance_window",
        "input_len",
        "horizon",
        "samples",
        "estimator_hidden",
        "denoiser_hidden",
        "step_embedding",
        "end_to_end",
        "train_stride",
        "eval_stride",
        "seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "date_column" => {
                self.date_column = if value == "auto" { None } else { Some(parse_bool(key, value)?) }
            }
            "rows" => self.rows = parse(key, value)?,
            "synth_kind" => self.synth_kind = value.parse()?,
            "synth_length" => self.synth_length = parse(key, value)?,
            "split" => {
                self.split = match value {
                    "ratio" => SplitKind::Ratio,
                    "months" => SplitKind::Months,
                    _ => return Err(Error::Config(format!("split must be ratio or months, got {value:?}"))),
                }
            }
            "steps_per_month" => self.steps_per_month = parse(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<Vec<u64>>>()?;
            }
            // single-seed shorthand
            "seed" => self.seeds = vec![parse(key, value)?],
            "out" => self.out = (!value.is_empty()).then(|| PathBuf::from(value)),
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "steps" => t.steps = parse(key, value)?,
            "beta_start" => t.beta_start = parse(key, value)?,
            "beta_end" => t.beta_end = parse(key, value)?,
            "variant" => t.variant = value.parse()?,
            "variance_window" => t.variance_window = parse(key, value)?,
            "input_len" => t.input_len = parse(key, value)?,
            "horizon" => t.horizon = parse(key, value)?,
            "samples" => t.samples = parse(key, value)?,
            "estimator_hidden" => t.estimator_hidden = parse(key, value)?,
            "denoiser_hidden" => t.denoiser_hidden = parse(key, value)?,
            "step_embedding" => t.step_embedding = parse(key, value)?,
            "end_to_end" => t.end_to_end = parse_bool(key, value)?,
            "train_stride" => t.train_stride = parse(key, value)?,
            "eval_stride" => t.eval_stride = parse(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown configuration key {key:?} (known keys: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`, got {raw:?}", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Validates values and checks that referenced paths exist.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config(format!("duplicate seeds in {:?}", self.seeds)));
        }
        if let Some(p) = &self.data {
            if !p.is_file() {
                return Err(Error::Config(format!("data file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// The resolved configuration as `key = value` text, every key present.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("data", path(&self.data));
        kv("date_column", self.date_column.map_or("auto".into(), |b| b.to_string()));
        kv("rows", self.rows.to_string());
        kv("synth_kind", self.synth_kind.to_string());
        kv("synth_length", self.synth_length.to_string());
        kv("split", if self.split == SplitKind::Ratio { "ratio" } else { "months" }.into());
        kv("steps_per_month", self.steps_per_month.to_string());
        kv("seeds", seeds.join(","));
        kv("out", path(&self.out));
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lr", t.lr.to_string());
        kv("steps", t.steps.to_string());
        kv("beta_start", t.beta_start.to_string());
        kv("beta_end", t.beta_end.to_string());
        kv("variant", t.variant.to_string());
        kv("variance_window", t.variance_window.to_string());
        kv("input_len", t.input_len.to_string());
        kv("horizon", t.horizon.to_string());
        kv("samples", t.samples.to_string());
        kv("estimator_hidden", t.estimator_hidden.to_string());
        kv("denoiser_hidden", t.denoiser_hidden.to_string());
        kv("step_embedding", t.step_embedding.to_string());
        kv("end_to_end", t.end_to_end.to_string());
        kv("train_stride", t.train_stride.to_string());
        kv("eval_stride", t.eval_stride.to_string());
        out
    }

    /// Run directory: `out` if set, else `<root>/<dataset>-<variant>` with the
    /// root taken from the environment or `runs`.
    pub fn run_dir(&self) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
        root.join(format!("{}-{}", self.dataset_label(), self.train.variant))
    }

    fn dataset_label(&self) -> String {
        match &self.data {
            Some(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into()),
            None => format!("synth_{}", self.synth_kind),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    /// Loads (or generates) the dataset and attaches the split.
    ///
    /// Synthetic data is generated from the run seed, so each seed sees its own realisation.
    pub fn dataset(&self, seed: u64) -> Result<TimeSeriesDataset> {
        let ds = match &self.data {
            Some(path) => {
                let date = match self.date_column {
                    Some(b) => b,
                    None => detect_date_column(path)?,
                };
                load_csv(path, date)?
            }
            None => synth(self.synth_kind, self.synth_length, seed)?,
        };
        let ds = if self.rows > 0 && self.rows < ds.len() { ds.head(self.rows)? } else { ds };
        let scheme = match self.split {
            SplitKind::Ratio => SplitScheme::Ratio,
            SplitKind::Months => SplitScheme::Months {
                steps_per_month: self.steps_per_month,
            },
        };
        split_dataset(&ds, scheme)
    }
}

fn detect_date_column(path: &Path) -> Result<bool> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("").split(',').next().unwrap_or("").trim();
    Ok(first.eq_ignore_ascii_case("date"))
}

#[derive(Debug, Parser)]
#[command(name = "nsdiff", version, about = "Probabilistic forecasting with non-stationary diffusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic series to CSV.
    Synth {
        #[arg(long, default_value = "linear")]
        kind: String,
        #[arg(long, default_value_t = 7588)]
        length: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the conditional mean and variance networks.
    Pretrain(RunArgs),
    /// Train the denoiser (pretraining the estimators first if needed).
    Train(RunArgs),
    /// Draw a forecast ensemble for one test window.
    Sample {
        #[command(flatten)]
        run: RunArgs,
        /// Index of the test window.
        #[arg(long, default_value_t = 0)]
        window: usize,
    },
    /// Score the test split and export plot data.
    Evaluate(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set epochs=2`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

impl RunArgs {
    /// Defaults, then the file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::Config(format!("config file {} does not exist", path.display())),
                _ => Error::io(path, e),
            })?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        let flags: [(&str, Option<String>); 6] = [
            ("data", self.data.as_ref().map(|p| p.display().to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("seeds", self.seeds.clone()),
            ("variant", self.variant.clone()),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("samples", self.samples.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))
}

struct SeedContext {
    seed: u64,
    dir: PathBuf,
    cfg: TrainConfig,
    data: PreparedData,
}

fn seed_contexts(run: &RunConfig) -> Result<Vec<SeedContext>> {
    let root = run.run_dir();
    run.seeds
        .iter()
        .map(|&seed| {
            let cfg = run.train_config(seed);
            let data = prepare_data(&run.dataset(seed)?, &cfg)?;
            Ok(SeedContext {
                seed,
                dir: root.join(format!("seed-{seed}")),
                cfg,
                data,
            })
        })
        .collect()
}

fn echo_config(run: &RunConfig) -> Result<()> {
    write_file(&run.run_dir().join("config.txt"), run.to_text())
}

fn estimators_path(dir: &Path) -> PathBuf {
    dir.join("estimators.nsdf")
}

fn model_path(dir: &Path) -> PathBuf {
    dir.join("model.nsdf")
}

/// Estimators are stored in the model container with an untrained denoiser.
fn save_estimators(ctx: &SeedContext, mean: &ChannelMlp, variance: &ChannelMlp) -> Result<()> {
    let cfg = &ctx.cfg;
    let bundle = NsDiffModel {
        config: cfg.clone(),
        schedule: cfg.schedule()?,
        mean: mean.clone(),
        variance: variance.clone(),
        denoiser: Denoiser::init(
            cfg.denoiser_spec()?,
            cfg.steps,
            cfg.step_embedding,
            cfg.variant,
            &mut substream(cfg.seed, Stream::DenoiserInit),
        )?,
        scaler: ctx.data.scaler.clone(),
    };
    save_checkpoint(estimators_path(&ctx.dir), &bundle)
}

pub fn cmd_synth(kind: &str, length: usize, seed: u64, out: &Path) -> Result<()> {
    let kind: SynthKind = kind.parse()?;
    let ds = synth(kind, length, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_csv(&ds, out)?;
    info!("wrote {length} rows of synthetic {kind} data to {}", out.display());
    Ok(())
}

pub fn cmd_pretrain(run: &RunConfig) -> Result<()> {
    echo_config(run)?;
    for ctx in seed_contexts(run)? {
        let est = pretrain_estimators(&ctx.data, &ctx.cfg)?;
        save_estimators(&ctx, &est.mean, &est.variance)?;
        let report = serde_json::json!({ "mean": est.mean_report, "variance": est.variance_report });
        write_file(&ctx.dir.join("pretrain_report.json"), to_json(&report)?)?;
        info!("seed {}: estimators written to {}", ctx.seed, ctx.dir.display());
    }
    Ok(())
}

pub fn cmd_train(run: &RunConfig) -> Result<()> {
    echo_config(run)?;
    for ctx in seed_contexts(run)? {
        let cfg = &ctx.cfg;
        let d = &ctx.data.train.first().ok_or_else(|| Error::Data("no training windows".into()))?;
        let (mean, variance) = if cfg.end_to_end {
            (
                ChannelMlp::init(Target::Mean, d.x.nrows(), d.y0.nrows(), cfg.estimator_hidden, cfg.seed)?,
                ChannelMlp::init(Target::Variance, d.x.nrows(), d.y0.nrows(), cfg.estimator_hidden, cfg.seed)?,
            )
        } else if estimators_path(&ctx.dir).is_file() {
            let bundle = load_checkpoint(estimators_path(&ctx.dir))?;
            let c = &bundle.config;
            if (c.input_len, c.horizon, c.estimator_hidden) != (cfg.input_len, cfg.horizon, cfg.estimator_hidden)
                || bundle.scaler != ctx.data.scaler
            {
                return Err(Error::Config(format!(
                    "{} was pretrained with a different configuration or dataset; rerun pretrain",
                    estimators_path(&ctx.dir).display()
                )));
            }
            info!("seed {}: reusing pretrained estimators", ctx.seed);
            (bundle.mean, bundle.variance)
        } else {
            let est = pretrain_estimators(&ctx.data, cfg)?;
            save_estimators(&ctx, &est.mean, &est.variance)?;
            (est.mean, est.variance)
        };
        let (model, report) = train_nsdiff(cfg, &ctx.data.train, &ctx.data.val, mean, variance, ctx.data.scaler.clone())?;
        save_checkpoint(model_path(&ctx.dir), &model)?;
        write_file(&ctx.dir.join("train_report.json"), to_json(&report)?)?;
        info!("seed {}: model written to {}", ctx.seed, model_path(&ctx.dir).display());
    }
    Ok(())
}

fn load_model(ctx: &SeedContext) -> Result<NsDiffModel> {
    let model = load_checkpoint(model_path(&ctx.dir))?;
    if model.config != ctx.cfg {
        return Err(Error::Config(format!(
            "{} was trained with a different configuration; rerun train or pass its config.txt",
            model_path(&ctx.dir).display()
        )));
    }
    Ok(model)
}

pub fn cmd_sample(run: &RunConfig, window: usize) -> Result<()> {
    for ctx in seed_contexts(run)? {
        let model = load_model(&ctx)?;
        let w = ctx.data.test.get(window).ok_or_else(|| {
            Error::InvalidInput(format!("test window {window} out of range ({} windows)", ctx.data.test.len()))
        })?;
        let x = model.scaler.transform(w.x.view())?;
        let (ens, _) = sample_window(&model, x.view(), ctx.cfg.samples, window as u64)?;
        let names = &ctx.data.feature_names;
        let mut csv = String::from("sample,time,feature,value\n");
        for ((p, i, k), v) in ens.samples.indexed_iter() {
            let _ = writeln!(csv, "{p},{},{},{v}", w.origin + i, names[k]);
        }
        write_file(&ctx.dir.join("samples.csv"), csv)?;
        write_file(&ctx.dir.join("plot_window.csv"), window_csv(w, &ens, names))?;
        info!("seed {}: {} samples for test window {window}", ctx.seed, ctx.cfg.samples);
    }
    Ok(())
}

pub fn cmd_evaluate(run: &RunConfig) -> Result<Vec<EvalReport>> {
    let mut rows = vec![EvalReport::CSV_HEADER.to_owned()];
    let mut reports = Vec::new();
    for ctx in seed_contexts(run)? {
        let model = load_model(&ctx)?;
        let names = &ctx.data.feature_names;
        let ev = evaluate(&model, &ctx.data.test, names, ctx.cfg.samples)?;
        ev.report.check_invariants()?;
        write_file(&ctx.dir.join("report.json"), ev.report.to_json()?)?;
        write_file(&ctx.dir.join("plot_test_region.csv"), region_csv(&ev.region, names))?;
        if let Some((w, ens)) = &ev.first_window {
            write_file(&ctx.dir.join("plot_window.csv"), window_csv(w, ens, names))?;
        }
        rows.push(ev.report.csv_row(&format!("seed-{}", ctx.seed)));
        println!(
            "seed {}: CRPS {:.4} QICE {:.4} MAE {:.4} MSE {:.4} (solver fallbacks {}/{})",
            ctx.seed, ev.report.crps, ev.report.qice, ev.report.mae, ev.report.mse, ev.solver_fallbacks, ev.solver_cells
        );
        reports.push(ev.report);
    }
    write_file(&run.run_dir().join("report.csv"), rows.join("\n") + "\n")?;
    Ok(reports)
}

/// Parses arguments and runs one subcommand.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { kind, length, seed, out } => cmd_synth(&kind, length, seed, &out),
        Command::Pretrain(args) => cmd_pretrain(&args.resolve()?),
        Command::Train(args) => cmd_train(&args.resolve()?),
        Command::Sample { run, window } => cmd_sample(&run.resolve()?, window),
        Command::Evaluate(args) => cmd_evaluate(&args.resolve()?).map(|_| ()),
    }
}

/// Process exit code for an error: 1 for caller mistakes, 2 for internal failures.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_user_error() {
        1
    } else {
        2
    }
}

/// One machine-parsable line: `error[<class>]: <detail>`.
pub fn error_line(e: &Error) -> String {
    format!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "))
}
