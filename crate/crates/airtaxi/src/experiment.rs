//! Experiment orchestration: map sourcing, seeded runs, method sweeps, and
//! artifact output. This is the layer the CLI and the crate examples call.
//!
//! A fresh seed regenerates the vertiport layout as well as the arrivals,
//! unless a fixed map file is supplied; arrival rates are recalibrated for
//! the run's fleet size from the cached served populations.

use crate::engine::{
    self, AssignmentMethod, LevelMethod, MetricsSummary, SimConfig, SimTrace, TrajectoryMethod,
};
use crate::mapgen::{
    self, calibrate_arrival_rates, generate_vertiports, load_population_grid, GaussianBlob,
    GridFormat, PopulationGrid, SyntheticSpec, WorldMap,
};
use crate::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Map(#[from] mapgen::MapError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad map file {path}: {reason}")]
    BadMapFile { path: String, reason: String },
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Built-in synthetic population shapes, scaled to the map side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticPreset {
    /// Flat density everywhere.
    Uniform,
    /// One dense urban core on a sparse floor.
    Monocentric,
    /// A major core, two satellite centers, and a sparse floor.
    Polycentric,
}

impl SyntheticPreset {
    pub fn spec(&self, side: f64, cells: usize) -> SyntheticSpec {
        let blob = |fx: f64, fy: f64, fs: f64, weight: f64| GaussianBlob {
            cx: fx * side,
            cy: fy * side,
            sx: fs * side,
            sy: fs * side,
            weight,
        };
        let gaussians = match self {
            SyntheticPreset::Uniform => vec![],
            SyntheticPreset::Monocentric => vec![blob(0.5, 0.5, 0.08, 700_000.0)],
            SyntheticPreset::Polycentric => vec![
                blob(0.42, 0.55, 0.09, 600_000.0),
                blob(0.72, 0.3, 0.05, 250_000.0),
                blob(0.25, 0.2, 0.06, 150_000.0),
            ],
        };
        SyntheticSpec {
            width: cells,
            height: cells,
            cell_size: side / cells as f64,
            origin: (0.0, 0.0),
            gaussians,
            uniform_weight: match self {
                SyntheticPreset::Uniform => 1_000_000.0,
                _ => 300_000.0,
            },
        }
    }
}

/// Where the vertiport map comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapSource {
    Population {
        path: PathBuf,
        format: GridFormat,
    },
    Synthetic {
        preset: SyntheticPreset,
        side_length: f64,
        #[serde(default = "default_grid_cells")]
        cells: usize,
    },
    MapFile {
        path: PathBuf,
    },
}

fn default_grid_cells() -> usize {
    128
}

/// One experiment: map source, fleet, methods, tunables, seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub map_source: MapSource,
    pub m_vertiports: usize,
    pub flight_levels: u32,
    /// Engine configuration template; `seed` is overwritten per run.
    pub sim: SimConfig,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::BadConfig("need at least one seed".into()));
        }
        if self.m_vertiports < 2 && !matches!(self.map_source, MapSource::MapFile { .. }) {
            return Err(ExperimentError::BadConfig(
                "need at least 2 vertiports".into(),
            ));
        }
        if self.flight_levels < 1 {
            return Err(ExperimentError::BadConfig(
                "need at least 1 flight level".into(),
            ));
        }
        self.sim.validate()?;
        Ok(())
    }
}

/// Serialized map artifact: resolved config plus the map itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapFile {
    pub schema_version: u32,
    pub build: String,
    pub config: serde_json::Value,
    pub map: WorldMap,
}

fn load_grid(source: &MapSource) -> Result<Option<PopulationGrid>, ExperimentError> {
    match source {
        MapSource::Population { path, format } => {
            Ok(Some(load_population_grid(path, *format)?))
        }
        MapSource::Synthetic {
            preset,
            side_length,
            cells,
        } => Ok(Some(mapgen::synth_population(&preset.spec(*side_length, *cells))?)),
        MapSource::MapFile { .. } => Ok(None),
    }
}

/// Resolve the world map for one seeded run: generate from a population
/// raster (seed-dependent layout) or load a fixed map file, then calibrate
/// arrival rates for the fleet size.
pub fn build_map(config: &ExperimentConfig, seed: u64) -> Result<WorldMap, ExperimentError> {
    let mut map = match &config.map_source {
        MapSource::MapFile { path } => {
            let raw = fs::read_to_string(path).map_err(io_err(path))?;
            let file: MapFile =
                serde_json::from_str(&raw).map_err(|e| ExperimentError::BadMapFile {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
            file.map
        }
        source => {
            let grid = load_grid(source)?.expect("non-mapfile sources have grids");
            let mut stream = rng::stream(seed, "mapgen");
            generate_vertiports(&grid, config.m_vertiports, &mut stream)?
        }
    };
    map.flight_levels = config.flight_levels;
    let served: f64 = map.vertiports.iter().map(|v| v.served_population).sum();
    if served > 0.0 {
        calibrate_arrival_rates(&mut map, config.sim.n_agents, &config.sim.kinematics)?;
    }
    map.validate()?;
    Ok(map)
}

/// Generate and write a map artifact; returns the map for display.
pub fn generate_map_file(
    config: &ExperimentConfig,
    seed: u64,
    out_path: &Path,
) -> Result<WorldMap, ExperimentError> {
    let map = build_map(config, seed)?;
    let artifact = MapFile {
        schema_version: crate::SCHEMA_VERSION,
        build: crate::BUILD_ID.to_string(),
        config: serde_json::json!({
            "experiment": config,
            "seed": seed,
        }),
        map: map.clone(),
    };
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(out_path))?;
        }
    }
    let json = serde_json::to_string_pretty(&artifact).expect("map serializes");
    fs::write(out_path, json).map_err(io_err(out_path))?;
    Ok(map)
}

/// Execute one seeded run and write `trace.jsonl`, `summary.json`, and
/// `summary.csv` under `out_dir`.
pub fn run_to_files(
    config: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<MetricsSummary, ExperimentError> {
    let (trace, summary) = run_once(config, seed)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let trace_path = out_dir.join("trace.jsonl");
    let mut file = fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    trace.write_jsonl(&mut file).map_err(io_err(&trace_path))?;
    let summary_path = out_dir.join("summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
    .map_err(io_err(&summary_path))?;
    let csv_path = out_dir.join("summary.csv");
    let mut csv = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    summary.write_csv(&mut csv).map_err(io_err(&csv_path))?;
    Ok(summary)
}

/// Execute one seeded run in memory.
pub fn run_once(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(SimTrace, MetricsSummary), ExperimentError> {
    config.validate()?;
    let map = build_map(config, seed)?;
    let mut sim = config.sim.clone();
    sim.seed = seed;
    let (trace, summary) = engine::run(&sim, &map)?;
    Ok((trace, summary))
}

/// One cell of a sweep grid: a full method combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodCell {
    pub assignment: AssignmentMethod,
    pub trajectory: TrajectoryMethod,
    pub level: LevelMethod,
    pub flight_levels: u32,
}

impl MethodCell {
    pub fn label(&self) -> String {
        format!(
            "{}+{}+{}xF{}",
            method_name(self.assignment),
            trajectory_name(self.trajectory),
            level_name(self.level),
            self.flight_levels
        )
    }
}

pub fn method_name(m: AssignmentMethod) -> &'static str {
    match m {
        AssignmentMethod::Proposed => "proposed",
        AssignmentMethod::Greedy => "greedy",
        AssignmentMethod::FirstDispatch => "first_dispatch",
    }
}

pub fn trajectory_name(t: TrajectoryMethod) -> &'static str {
    match t {
        TrajectoryMethod::Greedy => "greedy",
        TrajectoryMethod::Mcts => "mcts",
    }
}

pub fn level_name(l: LevelMethod) -> &'static str {
    match l {
        LevelMethod::Proposed => "proposed",
        LevelMethod::Random => "random",
    }
}

/// The default pairing of level selector to assignment method: the proposed
/// stack holds for traffic, the baselines take off immediately.
pub fn auto_level_method(assignment: AssignmentMethod) -> LevelMethod {
    match assignment {
        AssignmentMethod::Proposed => LevelMethod::Proposed,
        _ => LevelMethod::Random,
    }
}

/// Mean and sample standard deviation (n-1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregated results for one cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCellReport {
    pub cell: MethodCell,
    pub seeds: Vec<u64>,
    pub summaries: Vec<MetricsSummary>,
}

pub const REPORT_METRICS: [&str; 6] = [
    "nmac_per_hr_agent",
    "los_per_hr_agent",
    "passengers_per_hr_agent",
    "avg_wait_s",
    "max_wait_s",
    "trip_ratio_mean",
];

impl SweepCellReport {
    pub fn metric_values(&self, metric: &str) -> Vec<f64> {
        self.summaries
            .iter()
            .map(|s| match metric {
                "nmac_per_hr_agent" => s.nmac_per_hr_agent,
                "los_per_hr_agent" => s.los_per_hr_agent,
                "passengers_per_hr_agent" => s.passengers_per_hr_agent,
                "avg_wait_s" => s.avg_wait_s,
                "max_wait_s" => s.max_wait_s,
                "trip_ratio_mean" => s.trip_ratio_mean,
                other => panic!("unknown metric {other}"),
            })
            .collect()
    }

    pub fn mean_std(&self, metric: &str) -> (f64, f64) {
        mean_std(&self.metric_values(metric))
    }
}

/// Full sweep output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub build: String,
    pub config: serde_json::Value,
    pub cells: Vec<SweepCellReport>,
}

impl SweepReport {
    /// Per-run rows: cell label, seed, then every metric column.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("assignment,trajectory,level_method,flight_levels,seed,");
        out.push_str(crate::engine::MetricsSummary::csv_header());
        out.push('\n');
        for cell in &self.cells {
            for (seed, summary) in cell.seeds.iter().zip(&cell.summaries) {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    method_name(cell.cell.assignment),
                    trajectory_name(cell.cell.trajectory),
                    level_name(cell.cell.level),
                    cell.cell.flight_levels,
                    seed,
                    summary.csv_row()
                ));
            }
        }
        out
    }

    /// Aggregated rows: one per (cell, metric) with mean and sample std.
    pub fn report_csv(&self) -> String {
        let mut out =
            String::from("assignment,trajectory,level_method,flight_levels,metric,mean,std\n");
        for cell in &self.cells {
            for metric in REPORT_METRICS {
                let (mean, std) = cell.mean_std(metric);
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    method_name(cell.cell.assignment),
                    trajectory_name(cell.cell.trajectory),
                    level_name(cell.cell.level),
                    cell.cell.flight_levels,
                    metric,
                    mean,
                    std
                ));
            }
        }
        out
    }

    /// Human-readable table: metrics as rows, cells as columns.
    pub fn report_table(&self) -> String {
        let mut out = String::new();
        let labels: Vec<String> = self.cells.iter().map(|c| c.cell.label()).collect();
        out.push_str(&format!("{:<26}", "metric"));
        for label in &labels {
            out.push_str(&format!("{label:>30}"));
        }
        out.push('\n');
        for metric in REPORT_METRICS {
            out.push_str(&format!("{metric:<26}"));
            for cell in &self.cells {
                let (mean, std) = cell.mean_std(metric);
                out.push_str(&format!("{:>30}", format!("{mean:.3} ± {std:.3}")));
            }
            out.push('\n');
        }
        out
    }
}

/// Run a full grid of cells over the seed list; cells and seeds execute in
/// a worker pool, aggregation order is deterministic.
pub fn run_sweep(
    config: &ExperimentConfig,
    cells: &[MethodCell],
) -> Result<SweepReport, ExperimentError> {
    config.validate()?;
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, _)| config.seeds.iter().map(move |&s| (ci, s)))
        .collect();
    let summaries: Vec<((usize, u64), Result<MetricsSummary, ExperimentError>)> = jobs
        .par_iter()
        .map(|&(ci, seed)| {
            let cell = cells[ci];
            let mut cfg = config.clone();
            cfg.flight_levels = cell.flight_levels;
            cfg.sim.assignment = cell.assignment;
            cfg.sim.trajectory = cell.trajectory;
            cfg.sim.level = cell.level;
            cfg.sim.record_agent_snapshots = false;
            let result = run_once(&cfg, seed).map(|(_, s)| s);
            ((ci, seed), result)
        })
        .collect();

    let mut report = SweepReport {
        schema_version: crate::SCHEMA_VERSION,
        build: crate::BUILD_ID.to_string(),
        config: serde_json::json!({ "experiment": config, "cells": cells }),
        cells: cells
            .iter()
            .map(|&cell| SweepCellReport {
                cell,
                seeds: Vec::new(),
                summaries: Vec::new(),
            })
            .collect(),
    };
    let mut indexed: Vec<((usize, u64), MetricsSummary)> = Vec::with_capacity(summaries.len());
    for ((ci, seed), result) in summaries {
        indexed.push(((ci, seed), result?));
    }
    indexed.sort_by_key(|&((ci, seed), _)| (ci, seed));
    for ((ci, seed), summary) in indexed {
        report.cells[ci].seeds.push(seed);
        report.cells[ci].summaries.push(summary);
    }
    Ok(report)
}

/// Run a sweep and write `runs.csv`, `report.csv`, and `report.txt`.
pub fn sweep_to_files(
    config: &ExperimentConfig,
    cells: &[MethodCell],
    out_dir: &Path,
) -> Result<SweepReport, ExperimentError> {
    let report = run_sweep(config, cells)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for (name, content) in [
        ("runs.csv", report.runs_csv()),
        ("report.csv", report.report_csv()),
        ("report.txt", report.report_table()),
        (
            "report.json",
            serde_json::to_string_pretty(&report).expect("report serializes"),
        ),
    ] {
        let path = out_dir.join(name);
        fs::write(&path, content).map_err(io_err(&path))?;
    }
    Ok(report)
}
