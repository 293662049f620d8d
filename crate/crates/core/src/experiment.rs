//! Experiment configuration files, multi-mode / multi-seed orchestration and
//! the versioned report document.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate, Dataset, GeneratorSpec};
use crate::error::{Error, Result};
use crate::pipeline::{run, AggregateMetrics, Mode, RunConfig, RunOutcome, TrainingParams};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Feature CSV; relative paths resolve against the config file's directory.
    Csv(PathBuf),
    Generator(GeneratorSpec),
}

fn one() -> usize {
    1
}

/// Contents of a run config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub modes: Vec<Mode>,
    pub dataset: DataSource,
    /// Independent repetitions. Repeat `r` uses seed `training.seed + r`;
    /// generated datasets are re-drawn with generator seed `spec.seed + r`.
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub training: TrainingParams,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config file and resolves a relative CSV path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let DataSource::Csv(p) = &mut cfg.dataset {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::param("modes", "at least one mode is required"));
        }
        let mut seen = self.modes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.modes.len() {
            return Err(Error::param("modes", "modes must be distinct"));
        }
        if self.repeats == 0 {
            return Err(Error::param("repeats", "must be at least 1"));
        }
        if let DataSource::Generator(g) = &self.dataset {
            g.validate()?;
        }
        self.training.validate()
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        self.training.seed.wrapping_add(repeat as u64)
    }

    pub fn dataset_for_repeat(&self, repeat: usize) -> Result<Dataset> {
        match &self.dataset {
            DataSource::Csv(path) => {
                if !path.exists() {
                    return Err(Error::file(
                        path,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
                    ));
                }
                Dataset::load_csv(path)
            }
            DataSource::Generator(spec) => {
                let mut spec = spec.clone();
                spec.seed = spec.seed.wrapping_add(repeat as u64);
                generate(&spec)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: Mode,
    pub runs: Vec<RunOutcome>,
    /// Mean over every fold of every repeat.
    pub aggregate: AggregateMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub results: Vec<ModeResult>,
}

impl ExperimentReport {
    pub fn result(&self, mode: Mode) -> Option<&ModeResult> {
        self.results.iter().find(|r| r.mode == mode)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs every configured mode on every repeat. All modes of one repeat share
/// the dataset, the seed and therefore the fold definitions.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let datasets = (0..cfg.repeats)
        .map(|r| cfg.dataset_for_repeat(r))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(Mode, usize)> = cfg
        .modes
        .iter()
        .flat_map(|&m| (0..cfg.repeats).map(move |r| (m, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(mode, r)| {
            let params = TrainingParams {
                seed: cfg.repeat_seed(r),
                ..cfg.training.clone()
            };
            log::info!("running {mode} (repeat {r})");
            run(&RunConfig::new(mode, params), &datasets[r])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::with_capacity(cfg.modes.len());
    let mut it = outcomes.into_iter();
    for &mode in &cfg.modes {
        let runs: Vec<RunOutcome> = it.by_ref().take(cfg.repeats).collect();
        let aggregate = AggregateMetrics::mean_of(runs.iter().flat_map(|r| r.folds.iter().map(|f| &f.best)));
        results.push(ModeResult { mode, runs, aggregate });
    }
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        results,
    })
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub rank: usize,
    pub mode: Mode,
    pub metrics: AggregateMetrics,
    /// Whether `clustering_triplet` scores at least this row's macro-F;
    /// `None` for that mode itself or when it was not run.
    pub ours_ge: Option<bool>,
}

/// Modes sorted by macro-F, best first; ties keep configuration order.
pub fn rank_modes(report: &ExperimentReport) -> Vec<RankedRow> {
    let ours = report.result(Mode::ClusteringTriplet).map(|r| r.aggregate.f_score);
    let mut rows: Vec<&ModeResult> = report.results.iter().collect();
    rows.sort_by(|a, b| b.aggregate.f_score.total_cmp(&a.aggregate.f_score));
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| RankedRow {
            rank: i + 1,
            mode: r.mode,
            metrics: r.aggregate,
            ours_ge: match ours {
                Some(o) if r.mode != Mode::ClusteringTriplet => Some(o >= r.aggregate.f_score),
                _ => None,
            },
        })
        .collect()
}

pub const TABLE_COLUMNS: [&str; 9] = [
    "rank",
    "mode",
    "accuracy",
    "recall",
    "precision",
    "f_score",
    "var_fn",
    "var_fp",
    "ours_ge",
];

fn row_fields(r: &RankedRow) -> Vec<String> {
    let m = &r.metrics;
    vec![
        r.rank.to_string(),
        r.mode.to_string(),
        m.accuracy.to_string(),
        m.recall.to_string(),
        m.precision.to_string(),
        m.f_score.to_string(),
        m.var_fn.to_string(),
        m.var_fp.to_string(),
        r.ours_ge.map_or(String::new(), |b| b.to_string()),
    ]
}

/// CSV rendering of the ranking; numbers use the shortest exact decimal form.
pub fn ranking_csv(rows: &[RankedRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(TABLE_COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record(row_fields(r)).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Fixed-width text table with the same values as [`ranking_csv`].
pub fn ranking_table(rows: &[RankedRow]) -> String {
    let cells: Vec<Vec<String>> = std::iter::once(TABLE_COLUMNS.iter().map(|s| s.to_string()).collect())
        .chain(rows.iter().map(row_fields))
        .collect();
    let widths: Vec<usize> = (0..TABLE_COLUMNS.len())
        .map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
