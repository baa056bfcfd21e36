use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fitslam::grid::Grid;
use fitslam::harness::{parse_seeds, run_experiment, ExperimentConfig, MissionParams, Strategy};
use fitslam::simworld::{generate_world, WorldConfig};
use fitslam::traversability::threshold;
use fitslam::Error;

#[derive(Parser)]
#[command(name = "fitslam", version, about = "Exploration experiments on synthetic worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run strategies over seeds and write CSVs, summary and plots.
    Run(RunArgs),
    /// Inspect world configurations.
    World {
        #[command(subcommand)]
        command: WorldCommand,
    },
}

#[derive(Subcommand)]
enum WorldCommand {
    /// Write the generated world's grids as text rasters.
    Preview {
        #[arg(long)]
        config: PathBuf,
        /// Run seed mixed into the world seed, as in `run`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "preview")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "fit,greedy,random")]
    strategies: String,
    #[arg(long, default_value = "1..10")]
    seeds: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use 0.05 m cells instead of the configured resolution.
    #[arg(long)]
    full_res: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    n_shortlist: Option<usize>,
    #[arg(long)]
    delta_theta_deg: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Mission time limit in simulated seconds.
    #[arg(long)]
    max_time: Option<f64>,
}

fn run(args: RunArgs) -> Result<bool, Error> {
    let mut world = WorldConfig::load(&args.config)?;
    if args.full_res {
        world.resolution = 0.05;
    }
    let mut params = MissionParams::default();
    if let Some(a) = args.alpha {
        params.utility.alpha = a;
    }
    if let Some(b) = args.beta {
        params.utility.beta = b;
    }
    if let Some(n) = args.n_shortlist {
        params.utility.shortlist_n = n;
    }
    if let Some(d) = args.delta_theta_deg {
        params.raycast.delta_theta = d.to_radians();
    }
    if let Some(g) = args.gamma {
        params.raycast.gamma = g;
    }
    if let Some(t) = args.max_time {
        params.max_mission_time = t;
    }
    let strategies = args
        .strategies
        .split(',')
        .map(|s| Strategy::parse(s, 0))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = ExperimentConfig {
        world,
        strategies,
        seeds: parse_seeds(&args.seeds)?,
        params,
        out_dir: args.out,
    };
    let report = run_experiment(&cfg)?;
    for r in &report.runs {
        let f = r.result.final_sample();
        println!(
            "{:<7} seed {:>3}: {:<8} t={:>8.1}s trace={:.4e} unexplored={:>6.2}% loops={}",
            r.strategy.name(),
            r.seed,
            r.result.termination.as_str(),
            f.t,
            f.trace_cov,
            f.pct_unexplored,
            f.n_loop_closures
        );
    }
    for p in &report.files {
        if p.extension().is_some_and(|e| e != "csv") || p.ends_with("summary.csv") {
            println!("wrote {}", p.display());
        }
    }
    Ok(report.any_stalled())
}

fn write_raster<T: fitslam::grid::RasterValue>(grid: &Grid<T>, dir: &Path, name: &str) -> Result<(), Error> {
    let path = dir.join(name);
    grid.write_raster(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn preview(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), Error> {
    let mut cfg = WorldConfig::load(config)?;
    if let Some(s) = seed {
        cfg = fitslam::harness::world_for_seed(&cfg, s);
    }
    let world = generate_world(&cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let params = MissionParams::default();
    let trav = world.full_traversability(&params.trav);
    write_raster(&world.elevation(), out, "elevation.txt")?;
    write_raster(&world.true_occupancy(), out, "occupancy.txt")?;
    write_raster(&trav, out, "traversability.txt")?;
    write_raster(&threshold(&trav, params.trav_threshold), out, "navigable.txt")?;
    println!(
        "{} cells of {:.2} m, {} obstacles, {} landmarks",
        world.spec.len(),
        world.spec.resolution,
        world.obstacles.len(),
        world.landmarks.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args).map(|stalled| if stalled { 2 } else { 0 }),
        Command::World {
            command: WorldCommand::Preview { config, seed, out },
        } => preview(&config, seed, &out).map(|_| 0),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
