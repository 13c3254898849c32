//! Command-line interface. Every failure maps to one exit code:
//! 0 success, 1 check-suite failure, 2 input or validation error,
//! 3 numeric failure during training.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checks::{check_joint, run_mi_checks};
use crate::config::{parse_train, KvDoc, RunConfig, REQUIRED_DATA_KEYS};
use crate::data::{load_container, save_container, DatasetContainer, ViewSource};
use crate::eval::{probe_datasets, ProbeConfig};
use crate::info::JointDistribution;
use crate::pipeline::{generate_run_data, parse_grid, run_ablation};
use crate::tensor::{DType, Element};
use crate::train::{
    load_checkpoint, parse_metrics, save_checkpoint, train_epochs, Checkpoint, JsonlSink, MetricsRecord,
    TrainError, TrainState,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable capping the worker threads of `ablate`.
pub const THREADS_ENV: &str = "SUPERINFO_THREADS";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<crate::pipeline::PipelineError> for CliError {
    fn from(e: crate::pipeline::PipelineError) -> Self {
        match e {
            crate::pipeline::PipelineError::Train(t) => t.into(),
            other => Self::input(other),
        }
    }
}

macro_rules! input_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::input(e)
            }
        }
    )*};
}
input_errors!(
    crate::config::ConfigError,
    crate::data::DataError,
    crate::eval::EvalError,
    crate::info::InfoError
);

#[derive(Parser, Debug)]
#[command(name = "superinfo", version, about = "Contrastive pretraining with superfluous-information regularization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate paired-view synthetic datasets (source and transfer tasks).
    GenData {
        /// key = value file with the data keys.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the information-identity suites.
    MiCheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check a joint distribution from a CSV file instead of random ones.
        #[arg(long)]
        joint: Option<PathBuf>,
    },
    /// Pretrain a model; writes a checkpoint and JSONL metrics.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// A directory from `gen-data`, or a single container file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Fit a linear probe on frozen encoder features.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        /// Labelled container file, or a `gen-data` directory.
        #[arg(long)]
        train: PathBuf,
        /// Labelled container file, or a `gen-data` directory.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional key = value file with probe keys.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pretrain and probe once per loss-weight tuple and seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Tuples "l1,l2,l3,l4" separated by ';'.
        #[arg(long)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-epoch tables or charts from a metrics file.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Svg,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_run_config(path: &Path, required: &[&str]) -> Result<RunConfig, CliError> {
    let doc = KvDoc::parse(&read_text(path)?)?;
    doc.require(required)?;
    Ok(RunConfig::from_doc(&doc)?)
}

/// File names written by `gen-data`.
pub fn split_file(split: &str, view: usize) -> String {
    format!("{split}_v{view}.sids")
}

fn cmd_gen_data(spec: &Path, out: &Path, seed: u64, stdout: &mut dyn Write) -> Result<(), CliError> {
    let run = load_run_config(spec, REQUIRED_DATA_KEYS)?;
    let data = generate_run_data(&run, seed)?;
    let mut splits = vec![("train".to_string(), &data.source.train), ("test".to_string(), &data.source.test)];
    for (k, task) in data.transfer.iter().enumerate() {
        splits.push((format!("transfer{k}_train"), &task.train));
        splits.push((format!("transfer{k}_test"), &task.test));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::input(format!("{}: {e}", out.display())))?;
    for (split, paired) in splits {
        let [v1, v2] = DatasetContainer::from_paired(paired)?;
        for (view, c) in [(1, v1), (2, v2)] {
            let path = out.join(split_file(&split, view));
            save_container(&c, &path)?;
            let _ = writeln!(stdout, "{} {} x {}", path.display(), c.len(), c.dim());
        }
    }
    Ok(())
}

fn cmd_mi_check(trials: usize, seed: u64, joint: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let report = match joint {
        Some(path) => check_joint(&JointDistribution::from_csv(&read_text(path)?)?)?,
        None => {
            if trials == 0 {
                return Err(CliError::input("--trials must be >= 1"));
            }
            run_mi_checks(trials, seed)?
        }
    };
    let _ = stdout.write_all(report.render().as_bytes());
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_CHECK_FAILED,
            message: "one or more identity suites exceeded their tolerance".into(),
        })
    }
}

fn load_view_source(path: &Path) -> Result<ViewSource, CliError> {
    if path.is_dir() {
        let v1 = load_container(&path.join(split_file("train", 1)))?;
        let v2_path = path.join(split_file("train", 2));
        let v2 = if v2_path.exists() { Some(load_container(&v2_path)?) } else { None };
        Ok(ViewSource::from_containers(v1, v2)?)
    } else {
        Ok(ViewSource::from_containers(load_container(path)?, None)?)
    }
}

fn pretrain_typed<T: Element>(
    run: &RunConfig,
    source: &ViewSource,
    metrics: &mut JsonlSink<BufWriter<File>>,
) -> Result<Checkpoint, TrainError> {
    let cfg = &run.train;
    cfg.validate()?;
    let mut state = TrainState::<T>::init(cfg)?;
    train_epochs(&mut state, cfg, source, metrics)?;
    Ok(state.to_checkpoint(cfg))
}

fn cmd_pretrain(config: &Path, data: &Path, out: &Path, metrics: &Path) -> Result<(), CliError> {
    let mut run = load_run_config(config, &["seed"])?;
    let source = load_view_source(data)?;
    run.train.model.input_dim = source.dim();
    if let Some(dir) = metrics.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    }
    let file = File::create(metrics).map_err(|e| CliError::input(format!("{}: {e}", metrics.display())))?;
    let mut sink = JsonlSink::new(BufWriter::new(file));
    let ckpt = match run.train.dtype {
        DType::F32 => pretrain_typed::<f32>(&run, &source, &mut sink),
        DType::F64 => pretrain_typed::<f64>(&run, &source, &mut sink),
    }?;
    save_checkpoint(&ckpt, out)?;
    Ok(())
}

fn probe_split(path: &Path, split: &str) -> Result<DatasetContainer, CliError> {
    if path.is_dir() {
        Ok(load_container(&path.join(split_file(split, 1)))?)
    } else {
        Ok(load_container(path)?)
    }
}

fn cmd_probe(ckpt: &Path, train: &Path, test: &Path, out: &Path, config: Option<&Path>) -> Result<(), CliError> {
    let ckpt = load_checkpoint(ckpt)?;
    let cfg = parse_train(&KvDoc::parse(&ckpt.config_echo)?)?;
    let mut probe = ProbeConfig {
        seed: cfg.seed,
        ..Default::default()
    };
    if let Some(path) = config {
        let run = load_run_config(path, &[])?;
        probe = ProbeConfig {
            seed: cfg.seed,
            ..run.probe
        };
    }
    let (train, test) = (probe_split(train, "train")?, probe_split(test, "test")?);
    let result = match cfg.dtype {
        DType::F32 => probe_datasets(&TrainState::<f32>::from_checkpoint(&ckpt, &cfg)?.bundle, &train, &test, &probe),
        DType::F64 => probe_datasets(&TrainState::<f64>::from_checkpoint(&ckpt, &cfg)?.bundle, &train, &test, &probe),
    }?;
    let mut json = serde_json::to_string_pretty(&result).map_err(CliError::input)?;
    json.push('\n');
    write_bytes(out, json.as_bytes())
}

fn thread_count() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::input(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Header of the ablation CSV.
pub const ABLATION_COLUMNS: &str = "lambda1,lambda2,lambda3,lambda4,seed,source_acc,transfer_acc_mean";

fn cmd_ablate(config: &Path, grid: &str, out: &Path) -> Result<(), CliError> {
    let grid = parse_grid(grid).map_err(CliError::input)?;
    let run = load_run_config(config, &["seed"])?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(CliError::input)?;
    let rows = pool.install(|| run_ablation(&run, &grid, &run.ablation_seeds))?;
    let mut csv = format!("{ABLATION_COLUMNS}\n");
    for r in rows {
        let w = r.weights;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            w.lambda1, w.lambda2, w.lambda3, w.lambda4, r.seed, r.source_acc, r.transfer_acc_mean
        );
    }
    write_bytes(out, csv.as_bytes())
}

/// Header of the per-epoch report CSV. `steps` counts the step records of
/// the epoch; the loss columns are the epoch means.
pub const REPORT_COLUMNS: &str = "run_id,epoch,steps,l_cl,l_kl_1,l_kl_2,l_re_1,l_re_2,l_total,grad_norm";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub run_id: String,
    pub epoch: u64,
    pub steps: usize,
    /// `l_cl, l_kl_1, l_kl_2, l_re_1, l_re_2, l_total, grad_norm`
    pub values: [f64; 7],
}

fn record_values(r: &MetricsRecord) -> [f64; 7] {
    [r.l_cl, r.l_kl_1, r.l_kl_2, r.l_re_1, r.l_re_2, r.l_total, r.grad_norm]
}

/// One row per `(run_id, epoch)` in order of first appearance. Epoch summary
/// records are used as-is; epochs without one average their step records.
pub fn epoch_rows(records: &[MetricsRecord]) -> Vec<EpochRow> {
    let mut rows: Vec<(EpochRow, Option<[f64; 7]>)> = Vec::new();
    for r in records {
        let pos = rows.iter().position(|(row, _)| row.run_id == r.run_id && row.epoch == r.epoch);
        let idx = pos.unwrap_or_else(|| {
            rows.push((
                EpochRow {
                    run_id: r.run_id.clone(),
                    epoch: r.epoch,
                    steps: 0,
                    values: [0.0; 7],
                },
                None,
            ));
            rows.len() - 1
        });
        let (row, summary) = &mut rows[idx];
        if r.is_epoch_summary() {
            *summary = Some(record_values(r));
        } else {
            row.steps += 1;
            for (acc, v) in row.values.iter_mut().zip(record_values(r)) {
                *acc += v;
            }
        }
    }
    rows.into_iter()
        .map(|(mut row, summary)| {
            match summary {
                Some(v) => row.values = v,
                None => {
                    let n = row.steps as f64;
                    row.values.iter_mut().for_each(|v| *v /= n);
                }
            }
            row
        })
        .collect()
}

pub fn report_csv(rows: &[EpochRow]) -> String {
    let mut out = format!("{REPORT_COLUMNS}\n");
    for r in rows {
        let _ = write!(out, "{},{},{}", r.run_id, r.epoch, r.steps);
        for v in r.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

const SVG_SERIES: [(&str, usize, &str); 3] = [("l_total", 5, "#1f77b4"), ("l_cl", 0, "#d62728"), ("grad_norm", 6, "#2ca02c")];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line chart of `l_total`, `l_cl` and `grad_norm` against the row index,
/// one panel per series.
pub fn report_svg(rows: &[EpochRow]) -> String {
    let (w, panel_h, pad) = (640.0, 180.0, 40.0);
    let height = panel_h * SVG_SERIES.len() as f64;
    let mut s = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{height}\" viewBox=\"0 0 {w} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let n = rows.len();
    for (panel, (name, col, color)) in SVG_SERIES.iter().enumerate() {
        let top = panel as f64 * panel_h;
        let vals: Vec<f64> = rows.iter().map(|r| r.values[*col]).filter(|v| v.is_finite()).collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
        let span = if hi > lo { hi - lo } else { 1.0 };
        let x = |i: usize| pad + (w - 2.0 * pad) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let y = |v: f64| top + panel_h - pad + -(panel_h - 2.0 * pad) * (v - lo) / span;
        let _ = writeln!(
            s,
            "<rect x=\"{pad}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>",
            top + pad,
            w - 2.0 * pad,
            panel_h - 2.0 * pad
        );
        let _ = writeln!(
            s,
            "<text x=\"{pad}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{} (min {lo:.4}, max {hi:.4})</text>",
            top + pad - 6.0,
            xml_escape(name)
        );
        let points: Vec<String> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.values[*col].is_finite())
            .map(|(i, r)| format!("{:.2},{:.2}", x(i), y(r.values[*col])))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

fn cmd_report(metrics: &Path, out: &Path, format: ReportFormat) -> Result<(), CliError> {
    let records = parse_metrics(&read_text(metrics)?).map_err(|e| CliError::input(format!("{}: {e}", metrics.display())))?;
    if records.is_empty() {
        return Err(CliError::input(format!("{}: no metrics records", metrics.display())));
    }
    let rows = epoch_rows(&records);
    let text = match format {
        ReportFormat::Csv => report_csv(&rows),
        ReportFormat::Svg => report_svg(&rows),
    };
    write_bytes(out, text.as_bytes())
}

/// Runs a parsed command, writing progress lines to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { spec, out, seed } => cmd_gen_data(&spec, &out, seed, stdout),
        Command::MiCheck { trials, seed, joint } => cmd_mi_check(trials, seed, joint.as_deref(), stdout),
        Command::Pretrain {
            config,
            data,
            out,
            metrics,
        } => cmd_pretrain(&config, &data, &out, &metrics),
        Command::Probe {
            ckpt,
            train,
            test,
            out,
            config,
        } => cmd_probe(&ckpt, &train, &test, &out, config.as_deref()),
        Command::Ablate { config, grid, out } => cmd_ablate(&config, &grid, &out),
        Command::Report { metrics, out, format } => cmd_report(&metrics, &out, format),
    }
}
