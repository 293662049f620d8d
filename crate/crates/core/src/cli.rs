//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{generate_with_centers, Dataset, GeneratorSpec};
use crate::error::{Error, Result};
use crate::experiment::{rank_modes, ranking_csv, ranking_table, run_experiment, ExperimentConfig, ExperimentReport};
use crate::metrics::EvalReport;
use crate::pipeline::{evaluate_parents, Checkpoint};

pub const SIDECAR_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "splitclass", version, about = "Sub-class pseudo-label training and evaluation")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset from a generator spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and cross-validate every mode in a config.
    Train(RunArgs),
    /// Score a saved checkpoint on a labelled CSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Optional directory for the evaluation JSON and confusion CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Like `train`, but ranks the modes by macro-F.
    Compare(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `training.seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run_cli(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { spec, out } => cmd_generate(&spec, &out).map(|_| ()),
        Command::Train(args) => {
            let report = cmd_train(&args)?;
            print!("{}", ranking_table(&rank_modes(&report)));
            Ok(())
        }
        Command::Evaluate { checkpoint, data, out } => {
            let r = cmd_evaluate(&checkpoint, &data, out.as_deref())?;
            println!(
                "accuracy {}  recall {}  precision {}  f_score {}  var_fn {}  var_fp {}",
                r.accuracy, r.recall, r.precision, r.f_score, r.var_fn, r.var_fp
            );
            Ok(())
        }
        Command::Compare(args) => {
            let table = cmd_compare(&args)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::file(path, e))
}

#[derive(Serialize)]
struct Sidecar<'a> {
    schema_version: u32,
    spec: &'a GeneratorSpec,
    class_names: &'a [String],
    mode_ids: &'a [usize],
    centers: &'a [Vec<Vec<f64>>],
}

/// Writes `data.csv` and `ground_truth.json`; returns the CSV path.
pub fn cmd_generate(spec_path: &Path, out: &Path) -> Result<PathBuf> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::file(spec_path, e))?;
    let spec: GeneratorSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        message: format!("{}: {e}", spec_path.display()),
    })?;
    let generated = generate_with_centers(&spec)?;
    create_dir(out)?;
    let csv_path = out.join("data.csv");
    generated.dataset.save_csv(&csv_path)?;
    let sidecar = Sidecar {
        schema_version: SIDECAR_SCHEMA_VERSION,
        spec: &spec,
        class_names: &generated.dataset.class_names,
        mode_ids: generated.dataset.mode_ids.as_deref().unwrap_or(&[]),
        centers: &generated.centers,
    };
    write(&out.join("ground_truth.json"), serde_json::to_string_pretty(&sidecar)?)?;
    log::info!("wrote {} samples to {}", generated.dataset.len(), csv_path.display());
    Ok(csv_path)
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(report: &ExperimentReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    write(&out.join("report.json"), report.to_json()?)?;
    write(&out.join("summary.csv"), ranking_csv(&rank_modes(report))?)?;
    Ok(())
}

/// Runs all configured modes and writes `report.json`, `summary.csv` and
/// `checkpoints/<mode>_r<repeat>_f<fold>.json`.
pub fn cmd_train(args: &RunArgs) -> Result<ExperimentReport> {
    let cfg = load_config(args)?;
    let report = run_experiment(&cfg)?;
    write_report(&report, &args.out)?;
    let ck_dir = args.out.join("checkpoints");
    create_dir(&ck_dir)?;
    for result in &report.results {
        for (r, run) in result.runs.iter().enumerate() {
            for fold in &run.folds {
                if let Some(ck) = &fold.checkpoint {
                    ck.save(&ck_dir.join(format!("{}_r{r}_f{}.json", result.mode, fold.fold)))?;
                }
            }
        }
    }
    Ok(report)
}

/// Runs at least two modes on shared folds and writes `report.json` plus the
/// ranked `comparison.csv`. Returns the printed table.
pub fn cmd_compare(args: &RunArgs) -> Result<String> {
    let cfg = load_config(args)?;
    if cfg.modes.len() < 2 {
        return Err(Error::param("modes", "compare needs at least two modes"));
    }
    let report = run_experiment(&cfg)?;
    create_dir(&args.out)?;
    write(&args.out.join("report.json"), report.to_json()?)?;
    let ranked = rank_modes(&report);
    write(&args.out.join("comparison.csv"), ranking_csv(&ranked)?)?;
    Ok(ranking_table(&ranked))
}

/// Maps a dataset's class names onto the checkpoint's label space.
fn align_labels(data: &Dataset, names: &[String]) -> Result<Vec<usize>> {
    let remap = data
        .class_names
        .iter()
        .map(|n| {
            names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| Error::param("data", format!("class '{n}' is unknown to the checkpoint")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(data.parent_labels.iter().map(|&l| remap[l]).collect())
}

pub fn cmd_evaluate(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let raw = Dataset::load_csv(data)?;
    let aligned = Dataset {
        parent_labels: align_labels(&raw, &ck.class_names)?,
        class_names: ck.class_names.clone(),
        ..raw
    };
    let report = evaluate_parents(&ck.model, &aligned, &ck.pseudo_to_parent)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("evaluation.json"), serde_json::to_string_pretty(&report)?)?;
        let path = dir.join("confusion.csv");
        let f = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
        report.confusion.write_csv(f)?;
    }
    Ok(report)
}
