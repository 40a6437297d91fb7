//! Thin command-line front end: map generation, single runs, and method
//! sweeps. All logic lives in the library; this binary only parses flags,
//! builds an `ExperimentConfig`, and prints results.

use airtaxi::engine::{AssignmentMethod, LevelMethod, SimConfig, TrajectoryMethod};
use airtaxi::experiment::{
    auto_level_method, generate_map_file, run_to_files, sweep_to_files, ExperimentConfig,
    MapSource, MethodCell, SyntheticPreset,
};
use airtaxi::mapgen::GridFormat;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit code for runs that hit the step valve before delivering everyone.
const EXIT_TRUNCATED: u8 = 3;

#[derive(Parser)]
#[command(name = "airtaxi", version, about = "Air taxi fleet planning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a vertiport map from a population raster and write it as JSON.
    Genmap(GenmapArgs),
    /// Run one seeded simulation and write trace + summary artifacts.
    Run(RunArgs),
    /// Run a method grid over a seed list and write aggregated reports.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct MapArgs {
    /// Fixed map JSON produced by `genmap` (disables regeneration per seed).
    #[arg(long, conflicts_with_all = ["pop", "synthetic"])]
    map: Option<PathBuf>,
    /// Population raster file.
    #[arg(long, conflicts_with = "synthetic")]
    pop: Option<PathBuf>,
    /// Raster format for --pop.
    #[arg(long, value_enum, default_value = "esri-ascii")]
    pop_format: PopFormat,
    /// Built-in synthetic population preset.
    #[arg(long, value_enum)]
    synthetic: Option<Preset>,
    /// Map side length in km (synthetic sources).
    #[arg(long, default_value_t = 40.0)]
    side: f64,
    /// Synthetic raster resolution (cells per side).
    #[arg(long, default_value_t = 128)]
    cells: usize,
    /// Number of vertiports to generate.
    #[arg(long, short, default_value_t = 5)]
    m: usize,
}

impl MapArgs {
    fn source(&self) -> Result<MapSource, String> {
        if let Some(path) = &self.map {
            return Ok(MapSource::MapFile { path: path.clone() });
        }
        if let Some(path) = &self.pop {
            return Ok(MapSource::Population {
                path: path.clone(),
                format: match self.pop_format {
                    PopFormat::EsriAscii => GridFormat::EsriAscii,
                    PopFormat::Csv => GridFormat::Csv,
                },
            });
        }
        let preset = self.synthetic.unwrap_or(Preset::Polycentric);
        Ok(MapSource::Synthetic {
            preset: preset.into(),
            side_length: self.side,
            cells: self.cells,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PopFormat {
    EsriAscii,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Uniform,
    Monocentric,
    Polycentric,
}

impl From<Preset> for SyntheticPreset {
    fn from(p: Preset) -> Self {
        match p {
            Preset::Uniform => SyntheticPreset::Uniform,
            Preset::Monocentric => SyntheticPreset::Monocentric,
            Preset::Polycentric => SyntheticPreset::Polycentric,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Assignment {
    Proposed,
    Greedy,
    FirstDispatch,
}

impl From<Assignment> for AssignmentMethod {
    fn from(a: Assignment) -> Self {
        match a {
            Assignment::Proposed => AssignmentMethod::Proposed,
            Assignment::Greedy => AssignmentMethod::Greedy,
            Assignment::FirstDispatch => AssignmentMethod::FirstDispatch,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Trajectory {
    Greedy,
    Mcts,
}

impl From<Trajectory> for TrajectoryMethod {
    fn from(t: Trajectory) -> Self {
        match t {
            Trajectory::Greedy => TrajectoryMethod::Greedy,
            Trajectory::Mcts => TrajectoryMethod::Mcts,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelChoice {
    /// Proposed selector for the proposed assignment, random otherwise.
    Auto,
    Proposed,
    Random,
}

impl LevelChoice {
    fn resolve(self, assignment: AssignmentMethod) -> LevelMethod {
        match self {
            LevelChoice::Auto => auto_level_method(assignment),
            LevelChoice::Proposed => LevelMethod::Proposed,
            LevelChoice::Random => LevelMethod::Random,
        }
    }
}

#[derive(Args)]
struct Tunables {
    /// Candidate matchings per assignment round.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Flight-level lookahead steps.
    #[arg(long, default_value_t = 20)]
    phi: usize,
    /// Hold the aircraft when every level's route risk exceeds this.
    #[arg(long, default_value_t = 0.5)]
    hold_threshold: f64,
    /// UCT iterations per agent pass.
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    /// UCT tree depth.
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Passengers to deliver per agent before the run completes.
    #[arg(long, default_value_t = 10)]
    passenger_factor: usize,
    /// Step-count safety valve.
    #[arg(long, default_value_t = 100_000)]
    max_steps: u64,
    /// Skip per-agent snapshots in the trace (events are always kept).
    #[arg(long)]
    no_snapshots: bool,
}

impl Tunables {
    fn apply(&self, sim: &mut SimConfig) {
        sim.k_candidates = self.k;
        sim.levels.lookahead_steps = self.phi;
        sim.levels.hold_threshold = self.hold_threshold;
        sim.search.iterations = self.iterations;
        sim.search.max_depth = self.depth;
        sim.passenger_factor = self.passenger_factor;
        sim.max_steps = self.max_steps;
        sim.record_agent_snapshots = !self.no_snapshots;
    }
}

#[derive(Args)]
struct GenmapArgs {
    #[command(flatten)]
    map: MapArgs,
    /// Fleet size the arrival rates are calibrated for.
    #[arg(long, short, default_value_t = 10)]
    n: usize,
    /// Flight levels recorded in the map.
    #[arg(long, default_value_t = 1)]
    levels: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the map JSON.
    #[arg(long, default_value = "map.json")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    map: MapArgs,
    #[arg(long, short, default_value_t = 10)]
    n: usize,
    #[arg(long, value_enum, default_value = "proposed")]
    assignment: Assignment,
    #[arg(long, value_enum, default_value = "mcts")]
    trajectory: Trajectory,
    #[arg(long, value_enum, default_value = "auto")]
    level_method: LevelChoice,
    #[arg(long, default_value_t = 1)]
    levels: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (default: $AIRTAXI_OUT_DIR or ./out).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    map: MapArgs,
    #[arg(long, short, default_value_t = 10)]
    n: usize,
    /// Assignment methods in the grid.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Assignment::Proposed, Assignment::Greedy, Assignment::FirstDispatch])]
    assignments: Vec<Assignment>,
    /// Trajectory methods in the grid.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Trajectory::Greedy])]
    trajectories: Vec<Trajectory>,
    /// Level selectors in the grid.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [LevelChoice::Auto])]
    level_methods: Vec<LevelChoice>,
    /// Flight-level counts in the grid.
    #[arg(long, value_delimiter = ',', default_values_t = [1u32])]
    levels_list: Vec<u32>,
    /// Seed list: comma separated, or an exclusive range like 0..10.
    #[arg(long, default_value = "0..10")]
    seeds: String,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    tunables: Tunables,
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, String> {
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| format!("bad seed range {spec}"))?;
        let hi: u64 = hi.trim().parse().map_err(|_| format!("bad seed range {spec}"))?;
        if lo >= hi {
            return Err(format!("empty seed range {spec}"));
        }
        return Ok((lo..hi).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse().map_err(|_| format!("bad seed {s}")))
        .collect()
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("AIRTAXI_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn experiment(
    map: &MapArgs,
    n: usize,
    levels: u32,
    seeds: Vec<u64>,
) -> Result<ExperimentConfig, String> {
    Ok(ExperimentConfig {
        map_source: map.source()?,
        m_vertiports: map.m,
        flight_levels: levels,
        sim: SimConfig {
            n_agents: n,
            ..Default::default()
        },
        seeds,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Genmap(args) => {
            let config = experiment(&args.map, args.n, args.levels, vec![args.seed])?;
            let map = generate_map_file(&config, args.seed, &args.out)
                .map_err(|e| e.to_string())?;
            println!("wrote {} ({} vertiports)", args.out.display(), map.vertiports.len());
            println!("{:>4} {:>10} {:>10} {:>12} {:>14}", "id", "x_km", "y_km", "lambda_hr", "served_pop");
            for v in &map.vertiports {
                println!(
                    "{:>4} {:>10.2} {:>10.2} {:>12.3} {:>14.0}",
                    v.id, v.x, v.y, v.lambda, v.served_population
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let mut config = experiment(&args.map, args.n, args.levels, vec![args.seed])?;
            config.sim.assignment = args.assignment.into();
            config.sim.trajectory = args.trajectory.into();
            config.sim.level = args.level_method.resolve(config.sim.assignment);
            args.tunables.apply(&mut config.sim);
            let out_dir = args.out_dir.unwrap_or_else(default_out_dir);
            let summary =
                run_to_files(&config, args.seed, &out_dir).map_err(|e| e.to_string())?;
            println!(
                "seed {}: delivered {}/{} in {:.0} s | LOS/hr/agent {:.3} | NMAC/hr/agent {:.3} | pax/hr/agent {:.2} | wait avg {:.0} s max {:.0} s | trip ratio {:.3}",
                args.seed,
                summary.delivered,
                summary.spawned,
                summary.sim_duration_s,
                summary.los_per_hr_agent,
                summary.nmac_per_hr_agent,
                summary.passengers_per_hr_agent,
                summary.avg_wait_s,
                summary.max_wait_s,
                summary.trip_ratio_mean,
            );
            println!("artifacts in {}", out_dir.display());
            if summary.truncated {
                eprintln!("warning: run truncated at the step valve");
                return Ok(ExitCode::from(EXIT_TRUNCATED));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(args) => {
            if let Some(jobs) = args.jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build_global()
                    .map_err(|e| e.to_string())?;
            }
            let seeds = parse_seeds(&args.seeds)?;
            let mut config = experiment(&args.map, args.n, 1, seeds)?;
            args.tunables.apply(&mut config.sim);
            let mut cells = Vec::new();
            for &assignment in &args.assignments {
                for &trajectory in &args.trajectories {
                    for &level_choice in &args.level_methods {
                        for &flight_levels in &args.levels_list {
                            let assignment: AssignmentMethod = assignment.into();
                            cells.push(MethodCell {
                                assignment,
                                trajectory: trajectory.into(),
                                level: level_choice.resolve(assignment),
                                flight_levels,
                            });
                        }
                    }
                }
            }
            let out_dir = args.out_dir.unwrap_or_else(default_out_dir);
            let report =
                sweep_to_files(&config, &cells, &out_dir).map_err(|e| e.to_string())?;
            print!("{}", report.report_table());
            println!("artifacts in {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
