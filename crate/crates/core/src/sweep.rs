//! Cross-product runs over policies, velocities and seeds.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::SelectionPolicy;
use crate::metrics::MetricsReport;
use crate::scenario::{run_scenario, RunOutput, ScenarioConfig, ScenarioError};

/// One sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub policy: SelectionPolicy,
    pub max_velocity: f64,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("empty {0} list")]
    Empty(&'static str),
    #[error("run {policy} at {max_velocity} m/s, seed {seed} failed: {source}")]
    Cell {
        policy: SelectionPolicy,
        max_velocity: f64,
        seed: u64,
        source: ScenarioError,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One CSV row. `seed` is empty on seed-averaged rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub policy: SelectionPolicy,
    pub max_velocity: f64,
    pub seed: Option<u64>,
    pub ch_change_rate: f64,
    pub avg_ch_duration: Option<f64>,
    pub avg_cm_duration: Option<f64>,
    pub overhead: Option<f64>,
    pub avg_clusters: f64,
}

impl SweepRow {
    fn from_report(r: &MetricsReport) -> Self {
        Self {
            policy: r.policy,
            max_velocity: r.max_velocity,
            seed: Some(r.seed),
            ch_change_rate: r.ch_change_rate,
            avg_ch_duration: r.avg_ch_duration,
            avg_cm_duration: r.avg_cm_duration,
            overhead: r.overhead,
            avg_clusters: r.avg_clusters,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub runs: Vec<SweepRow>,
    pub means: Vec<SweepRow>,
    /// Total invariant violations across all cells.
    pub violations: usize,
}

pub fn cells(policies: &[SelectionPolicy], velocities: &[f64], seeds: &[u64]) -> Vec<Cell> {
    let mut out = Vec::with_capacity(policies.len() * velocities.len() * seeds.len());
    for &policy in policies {
        for &max_velocity in velocities {
            for &seed in seeds {
                out.push(Cell {
                    policy,
                    max_velocity,
                    seed,
                });
            }
        }
    }
    out
}

pub fn cell_config(base: &ScenarioConfig, cell: Cell) -> ScenarioConfig {
    let mut cfg = base.clone();
    cfg.protocol.policy = cell.policy;
    cfg.max_velocity = cell.max_velocity;
    cfg
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

/// Seed-averaged rows, one per (policy, velocity) in input order. Missing
/// values are left out of the mean.
pub fn average(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut keys: Vec<(SelectionPolicy, f64)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.policy, r.max_velocity)) {
            keys.push((r.policy, r.max_velocity));
        }
    }
    keys.into_iter()
        .map(|(policy, v)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.policy == policy && r.max_velocity == v)
                .collect();
            SweepRow {
                policy,
                max_velocity: v,
                seed: None,
                ch_change_rate: mean(group.iter().map(|r| r.ch_change_rate)),
                avg_ch_duration: mean_opt(group.iter().map(|r| r.avg_ch_duration)),
                avg_cm_duration: mean_opt(group.iter().map(|r| r.avg_cm_duration)),
                overhead: mean_opt(group.iter().map(|r| r.overhead)),
                avg_clusters: mean(group.iter().map(|r| r.avg_clusters)),
            }
        })
        .collect()
}

/// Runs every cell, in parallel, and calls `each` with every finished run
/// in cell order.
pub fn sweep(
    base: &ScenarioConfig,
    policies: &[SelectionPolicy],
    velocities: &[f64],
    seeds: &[u64],
    mut each: impl FnMut(&RunOutput) -> Result<(), SweepError>,
) -> Result<SweepResult, SweepError> {
    if policies.is_empty() {
        return Err(SweepError::Empty("policy"));
    }
    if velocities.is_empty() {
        return Err(SweepError::Empty("velocity"));
    }
    if seeds.is_empty() {
        return Err(SweepError::Empty("seed"));
    }
    let cells = cells(policies, velocities, seeds);
    let outputs: Vec<Result<RunOutput, SweepError>> = cells
        .par_iter()
        .map(|&cell| {
            run_scenario(&cell_config(base, cell), cell.seed).map_err(|source| SweepError::Cell {
                policy: cell.policy,
                max_velocity: cell.max_velocity,
                seed: cell.seed,
                source,
            })
        })
        .collect();
    let mut runs = Vec::with_capacity(outputs.len());
    let mut violations = 0;
    for out in outputs {
        let out = out?;
        each(&out)?;
        violations += out.violations.len();
        runs.push(SweepRow::from_report(&out.report));
    }
    let means = average(&runs);
    Ok(SweepResult {
        runs,
        means,
        violations,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

const COLUMNS: [&str; 8] = [
    "policy",
    "max_velocity",
    "seed",
    "ch_change_rate",
    "avg_ch_duration",
    "avg_cm_duration",
    "overhead",
    "avg_clusters",
];

fn record(r: &SweepRow) -> [String; 8] {
    [
        r.policy.to_string(),
        r.max_velocity.to_string(),
        r.seed
            .map(|s| s.to_string())
            .unwrap_or_else(|| "mean".into()),
        r.ch_change_rate.to_string(),
        fmt_opt(r.avg_ch_duration),
        fmt_opt(r.avg_cm_duration),
        fmt_opt(r.overhead),
        r.avg_clusters.to_string(),
    ]
}

impl SweepResult {
    /// Per-run rows followed by the seed-averaged rows (seed = `mean`).
    pub fn write_csv(&self, path: &Path, header: &str) -> Result<(), SweepError> {
        let mut buf = header.as_bytes().to_vec();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(COLUMNS)?;
            for r in self.runs.iter().chain(&self.means) {
                w.write_record(record(r))?;
            }
            w.flush()?;
        }
        fs::write(path, buf)?;
        Ok(())
    }

    /// One CSV per figure: seed-averaged values by velocity, one column per
    /// policy.
    pub fn write_plot_data(&self, dir: &Path, header: &str) -> Result<(), SweepError> {
        fs::create_dir_all(dir)?;
        type Column = (&'static str, fn(&SweepRow) -> Option<f64>);
        let figures: [Column; 4] = [
            ("fig6_ch_change_rate.csv", |r| Some(r.ch_change_rate)),
            ("fig7_ch_duration.csv", |r| r.avg_ch_duration),
            ("fig8_cm_duration.csv", |r| r.avg_cm_duration),
            ("fig9_overhead.csv", |r| r.overhead),
        ];
        let mut policies: Vec<SelectionPolicy> = Vec::new();
        let mut velocities: Vec<f64> = Vec::new();
        for r in &self.means {
            if !policies.contains(&r.policy) {
                policies.push(r.policy);
            }
            if !velocities.contains(&r.max_velocity) {
                velocities.push(r.max_velocity);
            }
        }
        for (name, pick) in figures {
            let mut buf = header.as_bytes().to_vec();
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                let mut head = vec!["max_velocity".to_string()];
                head.extend(policies.iter().map(|p| p.label().to_string()));
                w.write_record(&head)?;
                for &v in &velocities {
                    let mut row = vec![v.to_string()];
                    for &p in &policies {
                        let val = self
                            .means
                            .iter()
                            .find(|r| r.policy == p && r.max_velocity == v)
                            .and_then(pick);
                        row.push(fmt_opt(val));
                    }
                    w.write_record(&row)?;
                }
                w.flush()?;
            }
            fs::write(dir.join(name), buf)?;
        }
        Ok(())
    }

    pub fn mean_row(&self, policy: SelectionPolicy, v: f64) -> Option<&SweepRow> {
        self.means
            .iter()
            .find(|r| r.policy == policy && r.max_velocity == v)
    }
}
