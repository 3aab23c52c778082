use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semtraj::annotate::Method;
use semtraj::synth::{activity_log_csv, generate_trajectory_fixture, raw_place_geojson, trajectory_csv, TrajectoryFixtureConfig};

mod artifacts;
mod config;
mod error;
mod pipeline;

use artifacts::write_atomic;
use config::Config;
use error::CliError;
use pipeline::Context;

#[derive(Debug, Parser)]
#[command(name = "semtraj", version, about = "Stop detection and semantic place annotation for GPS trajectories")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Annotation method: spatial-only, spatiotemporal, upapp, upapp-hmm or upapp-joint.
    #[arg(long, global = true)]
    method: Option<Method>,
    /// Worker threads (0 for one per logical CPU).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for the synthetic fixture.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean trajectories and build the place index.
    Ingest,
    /// Detect stops and attach candidate places.
    DetectStops,
    /// Learn temporal priors and the category transition matrix.
    BuildPriors,
    /// Annotate every stop with one method.
    Annotate,
    /// Score annotations against activity logs.
    Evaluate,
    /// Every stage in order; compares all configured methods unless --method is given.
    RunAll,
    /// Write a synthetic trajectory fixture with its place layers, logs and config.
    Synth,
}

fn write_fixture(out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = TrajectoryFixtureConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let scheme = Config::default().scheme()?;
    let fixture = generate_trajectory_fixture(&cfg, &scheme);
    let (pois, rois) = raw_place_geojson(&fixture.map.index);
    let config = format!(
        "[input]\ntrajectories = \"trajectories.csv\"\npoi = \"pois.geojson\"\nroi = \"rois.geojson\"\nlogs = \"logs.csv\"\ntimezone = \"{}\"\n",
        fixture.zone
    );
    for (name, text) in [
        ("trajectories.csv", trajectory_csv(&fixture.points, &fixture.zone)),
        ("pois.geojson", pois),
        ("rois.geojson", rois),
        ("logs.csv", activity_log_csv(&fixture.logs, &fixture.zone)),
        ("config.toml", config),
    ] {
        write_atomic(&out.join(name), text.as_bytes())?;
    }
    println!(
        "synth: {} points, {} log entries, {} places -> {}",
        fixture.points.len(),
        fixture.logs.len(),
        fixture.map.index.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Synth = cli.command {
        let out = cli.out.ok_or_else(|| CliError::config("synth needs --out"))?;
        return write_fixture(&out, cli.seed);
    }
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(m) = cli.method {
        config.run.method = m.as_str().into();
    }
    let threads = cli.threads.unwrap_or(config.run.threads);
    let out = cli
        .out
        .or_else(|| config.run.out.clone())
        .ok_or_else(|| CliError::config("no output directory: pass --out or set run.out"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    let ctx = Context::new(config, &out, pool.current_num_threads());
    let method = ctx.config.method()?;
    pool.install(|| match cli.command {
        Command::Ingest => pipeline::ingest(&ctx),
        Command::DetectStops => pipeline::detect_stops(&ctx),
        Command::BuildPriors => pipeline::build_priors_stage(&ctx),
        Command::Annotate => pipeline::annotate(&ctx, method),
        Command::Evaluate => pipeline::evaluate_stage(&ctx, method).map(|r| print!("{}", r.to_table())),
        Command::RunAll => {
            let methods = if cli.method.is_some() { vec![method] } else { ctx.config.methods()? };
            let reports = pipeline::run_all(&ctx, &methods)?;
            for (m, r) in &reports {
                println!("{m}: overall {:.4} average {:.4} ({} matched)", r.overall, r.average, r.counts.matched);
            }
            Ok(())
        }
        Command::Synth => unreachable!("handled above"),
    })?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
