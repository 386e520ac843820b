//! Command-line front end for the simulator.
//!
//! `istn run` executes one scheduler on one scenario, `istn sweep` walks a
//! parameter grid from a JSON spec, and `istn trace` prints the inner
//! convergence trajectory of a single slot.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use istn_core::config::RunConfig;
use istn_core::harness::{self, AlgorithmChoice, SweepSpec};
use istn_core::sca::{run_sca_for_ts, ScaOptions};
use istn_core::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "istn",
    version,
    about = "Simulator for satellite-backhauled cellular uplinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    /// Small system for quick experiments.
    Desk,
    /// Full-size reference system.
    Table,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algorithm {
    /// Iterative convex-surrogate scheduler.
    Sca,
    /// Strength-based greedy baseline.
    Greedy,
}

impl Algorithm {
    fn choice(self) -> AlgorithmChoice {
        match self {
            Algorithm::Sca => AlgorithmChoice::Sca,
            Algorithm::Greedy => AlgorithmChoice::Greedy,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheduler on one scenario and report completion time.
    Run {
        /// Built-in scenario size (ignored when --config is given).
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        /// JSON file with configuration overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Algorithm::Sca)]
        algorithm: Algorithm,
        /// Write the slot-by-slot run record as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Convergence tolerance of the iterative scheduler.
        #[arg(long)]
        sca_tol: Option<f64>,
        /// Inner iteration cap of the iterative scheduler.
        #[arg(long)]
        sca_max_iters: Option<usize>,
    },
    /// Run a parameter sweep described by a JSON spec.
    Sweep {
        /// Sweep spec (base config, parameter, values, seeds, algorithms).
        #[arg(long)]
        spec: PathBuf,
        /// Directory for results.csv, manifest.json and curve files.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Print the inner convergence trace of one slot.
    Trace {
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Slot to trace, 1-based.
        #[arg(long, default_value_t = 1)]
        ts: usize,
        /// Write the trace as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sca_max_iters: Option<usize>,
    },
}

fn load_config(profile: Profile, config: &Option<PathBuf>, seed: u64) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::from_json(&text)?
        }
        None => match profile {
            Profile::Desk => RunConfig::desk_scale(seed),
            Profile::Table => RunConfig::table_scale(seed),
        },
    };
    cfg.rng_seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn sca_options(tol: Option<f64>, max_iters: Option<usize>) -> ScaOptions {
    let mut opts = ScaOptions::default();
    if let Some(t) = tol {
        opts.tol_sca = t;
    }
    if let Some(n) = max_iters {
        opts.max_iters = n;
    }
    opts
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            profile,
            config,
            seed,
            algorithm,
            out,
            sca_tol,
            sca_max_iters,
        } => {
            let cfg = load_config(profile, &config, seed)?;
            let horizon = cfg.max_ts;
            let opts = sca_options(sca_tol, sca_max_iters);
            let result = harness::execute(cfg, algorithm.choice(), &opts)?;
            println!("algorithm: {}", result.algorithm.label());
            match result.ts_used {
                Some(v) => println!("slots_used: {v}"),
                None => println!("slots_used: unmet after {horizon} slots"),
            }
            println!("residual_bits: {:.3}", result.total_residual_bits());
            for slot in &result.slots {
                let delivered: f64 = slot.delivered_bits.iter().sum();
                println!(
                    "slot {:>3}: delivered {:>14.1} bits  iterations {:>3}  feasible {}",
                    slot.ts,
                    delivered,
                    slot.iterations,
                    slot.feasibility.all_ok()
                );
            }
            if let Some(path) = out {
                harness::write_trace_json(&result, &path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Sweep { spec, out_dir } => {
            let text = fs::read_to_string(&spec)
                .with_context(|| format!("reading sweep spec {}", spec.display()))?;
            let spec = SweepSpec::from_json(&text)?;
            let outputs = harness::run_sweep_to_dir(&spec, &out_dir)?;
            println!("runs: {}", outputs.records.len());
            println!("wrote {}", outputs.csv_path.display());
            println!("wrote {}", outputs.manifest_path.display());
            for path in &outputs.curve_paths {
                println!("wrote {}", path.display());
            }
            if !outputs.trace_paths.is_empty() {
                println!("traces: {}", outputs.trace_paths.len());
            }
        }
        Command::Trace {
            profile,
            config,
            seed,
            ts,
            out,
            sca_max_iters,
        } => {
            let cfg = load_config(profile, &config, seed)?;
            if cfg.demand_bits <= 0.0 {
                bail!("tracing needs positive demand");
            }
            let weights = vec![cfg.demand_bits; cfg.num_ue];
            let scn = Scenario::generate(cfg)?;
            let opts = sca_options(None, sca_max_iters);
            let state = run_sca_for_ts(&scn, ts, &weights, &opts)?;
            println!("slot: {ts}");
            println!("iterations: {}", state.iterations);
            println!("converged: {}", state.converged);
            for rec in &state.trace {
                println!(
                    "iteration {:>3}: objective {:>18.6e}  ({:?}, {:.1} ms)",
                    rec.iteration,
                    rec.objective,
                    rec.status,
                    rec.solve_time_s * 1e3
                );
            }
            if let Some(path) = out {
                let doc = serde_json::json!({
                    "ts": ts,
                    "iterations": state.iterations,
                    "converged": state.converged,
                    "objective_history": state.objective_history,
                });
                fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
