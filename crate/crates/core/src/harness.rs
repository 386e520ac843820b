//! Experiment harness: parameter sweeps, result tables and plot data.
//!
//! A sweep walks one scalar knob (BS backhaul power, satellite bandwidth,
//! or user transmit power) over a value grid, runs each scheduler on the
//! same seeded scenarios, and writes a deterministic `results.csv`, a
//! `manifest.json` describing the grid, and one `curve_*.dat` file per
//! scheduler with the mean completion time per value.  Runs that fail to
//! drain all demand inside the horizon are counted at the full horizon
//! (censored) and reported in the `unmet` column; a run that aborts
//! outright is recorded the same way, with a warning on stderr, and the
//! rest of the sweep continues.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::greedy::run_greedy;
use crate::sca::{run_min_time, AlgorithmKind, ScaOptions, TsLoopResult};
use crate::scenario::Scenario;

/// The scalar knob a sweep walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// BS backhaul transmit power, watts.
    BsMaxPower,
    /// Per-satellite bandwidth, Hz.
    LeoBandwidth,
    /// Per-user transmit power budget, watts.
    UeMaxPower,
}

impl SweepParameter {
    pub fn key(self) -> &'static str {
        match self {
            SweepParameter::BsMaxPower => "bs_max_power",
            SweepParameter::LeoBandwidth => "leo_bandwidth",
            SweepParameter::UeMaxPower => "ue_max_power",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig, value: f64) {
        match self {
            SweepParameter::BsMaxPower => cfg.bs_max_power_w = value,
            SweepParameter::LeoBandwidth => cfg.leo_bandwidth_hz = value,
            SweepParameter::UeMaxPower => cfg.ue_max_power_w = value,
        }
    }
}

/// Scheduler selector used in sweep specs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmChoice {
    Sca,
    Greedy,
}

impl AlgorithmChoice {
    pub fn label(self) -> &'static str {
        match self {
            AlgorithmChoice::Sca => "sca",
            AlgorithmChoice::Greedy => "greedy",
        }
    }

    pub fn kind(self) -> AlgorithmKind {
        match self {
            AlgorithmChoice::Sca => AlgorithmKind::Iterative,
            AlgorithmChoice::Greedy => AlgorithmKind::Greedy,
        }
    }
}

/// Declarative sweep description, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Configuration every run starts from.
    #[serde(default)]
    pub base: RunConfig,
    pub parameter: SweepParameter,
    /// Grid of values, in the parameter's linear unit.
    pub values: Vec<f64>,
    /// One full run (per algorithm) per seed and value.
    pub seeds: Vec<u64>,
    pub algorithms: Vec<AlgorithmChoice>,
    /// Optional override of the iterative scheduler's convergence tol.
    #[serde(default)]
    pub sca_tol: Option<f64>,
    /// Optional override of the inner iteration cap.
    #[serde(default)]
    pub sca_max_iters: Option<usize>,
    /// Also write one trace JSON per iterative run.
    #[serde(default)]
    pub emit_traces: bool,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Harness("sweep needs at least one value".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Harness("sweep needs at least one seed".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Harness("sweep needs at least one algorithm".into()));
        }
        if self.values.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Harness("sweep values must be positive".into()));
        }
        Ok(())
    }

    pub fn sca_options(&self) -> ScaOptions {
        let mut opts = ScaOptions::default();
        if let Some(tol) = self.sca_tol {
            opts.tol_sca = tol;
        }
        if let Some(iters) = self.sca_max_iters {
            opts.max_iters = iters;
        }
        opts
    }
}

/// One row of the sweep result table.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub parameter: String,
    pub value: f64,
    pub seed: u64,
    pub algorithm: String,
    /// Slots needed, with unmet runs counted at the horizon.
    pub slots_used: usize,
    pub demand_met: bool,
    pub residual_bits: f64,
    pub delivered_bits: f64,
    /// Summed inner iterations over all slots (0 for greedy).
    pub inner_iterations: usize,
    /// Wall time of the run; excluded from the CSV to keep it
    /// byte-reproducible.
    pub wall_time_s: f64,
}

/// Generate the scenario for `cfg` and run one scheduler on it.
pub fn execute(cfg: RunConfig, algorithm: AlgorithmChoice, opts: &ScaOptions) -> Result<TsLoopResult> {
    let scn = Scenario::generate(cfg)?;
    match algorithm {
        AlgorithmChoice::Sca => run_min_time(&scn, opts),
        AlgorithmChoice::Greedy => run_greedy(&scn),
    }
}

fn record_for(
    spec: &SweepSpec,
    value: f64,
    seed: u64,
    algorithm: AlgorithmChoice,
    result: &TsLoopResult,
    wall_time_s: f64,
) -> RunRecord {
    let delivered: f64 = result
        .slots
        .iter()
        .map(|slot| slot.delivered_bits.iter().sum::<f64>())
        .sum();
    RunRecord {
        parameter: spec.parameter.key().to_string(),
        value,
        seed,
        algorithm: algorithm.label().to_string(),
        slots_used: result.slots_used_censored(),
        demand_met: result.demand_met(),
        residual_bits: result.total_residual_bits(),
        delivered_bits: delivered,
        inner_iterations: result.slots.iter().map(|s| s.iterations).sum(),
        wall_time_s,
    }
}

/// Row for a run that aborted before producing a result: counted at the
/// full horizon with all demand unmet, like a run that timed out.
fn censored_record(
    spec: &SweepSpec,
    value: f64,
    seed: u64,
    algorithm: AlgorithmChoice,
    wall_time_s: f64,
) -> RunRecord {
    RunRecord {
        parameter: spec.parameter.key().to_string(),
        value,
        seed,
        algorithm: algorithm.label().to_string(),
        slots_used: spec.base.max_ts,
        demand_met: false,
        residual_bits: spec.base.num_ue as f64 * spec.base.demand_bits,
        delivered_bits: 0.0,
        inner_iterations: 0,
        wall_time_s,
    }
}

fn run_jobs(spec: &SweepSpec) -> Result<Vec<(RunRecord, Option<TsLoopResult>)>> {
    spec.validate()?;
    let opts = spec.sca_options();
    let jobs: Vec<(f64, u64, AlgorithmChoice)> = spec
        .values
        .iter()
        .flat_map(|&v| {
            spec.seeds.iter().flat_map(move |&seed| {
                spec.algorithms.iter().map(move |&alg| (v, seed, alg))
            })
        })
        .collect();

    let mut outcomes: Vec<(RunRecord, Option<TsLoopResult>)> = jobs
        .par_iter()
        .map(|&(value, seed, alg)| {
            let mut cfg = spec.base.clone();
            spec.parameter.apply(&mut cfg, value);
            cfg.rng_seed = seed;
            let t0 = Instant::now();
            match cfg.validate().and_then(|()| execute(cfg, alg, &opts)) {
                Ok(result) => {
                    let record =
                        record_for(spec, value, seed, alg, &result, t0.elapsed().as_secs_f64());
                    (record, Some(result))
                }
                Err(err) => {
                    eprintln!(
                        "warning: run failed ({}={value}, seed {seed}, {}): {err}; \
                         recorded at the horizon, sweep continues",
                        spec.parameter.key(),
                        alg.label()
                    );
                    (
                        censored_record(spec, value, seed, alg, t0.elapsed().as_secs_f64()),
                        None,
                    )
                }
            }
        })
        .collect();

    outcomes.sort_by(|a, b| {
        a.0.value
            .total_cmp(&b.0.value)
            .then(a.0.seed.cmp(&b.0.seed))
            .then(a.0.algorithm.cmp(&b.0.algorithm))
    });
    Ok(outcomes)
}

/// Run the whole grid; rows come back sorted by (value, seed, algorithm).
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<RunRecord>> {
    Ok(run_jobs(spec)?.into_iter().map(|(r, _)| r).collect())
}

/// Write the result table; identical runs produce identical bytes.
pub fn write_results_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "parameter",
        "value",
        "seed",
        "algorithm",
        "slots_used",
        "demand_met",
        "residual_bits",
        "delivered_bits",
        "inner_iterations",
    ])?;
    for r in records {
        writer.write_record([
            r.parameter.clone(),
            r.value.to_string(),
            r.seed.to_string(),
            r.algorithm.clone(),
            r.slots_used.to_string(),
            r.demand_met.to_string(),
            format!("{:.3}", r.residual_bits),
            format!("{:.3}", r.delivered_bits),
            r.inner_iterations.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Describe the sweep grid next to its results.
pub fn write_manifest(spec: &SweepSpec, rows: usize, path: &Path) -> Result<()> {
    let manifest = serde_json::json!({
        "schema_version": 1,
        "parameter": spec.parameter.key(),
        "values": spec.values,
        "seeds": spec.seeds,
        "algorithms": spec.algorithms.iter().map(|a| a.label()).collect::<Vec<_>>(),
        "horizon": spec.base.max_ts,
        "rows": rows,
    });
    fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Mean completion time per value, one plot file per scheduler.
///
/// Lines are `value mean_slots runs unmet`; a scheduler listed in the
/// spec but absent from the table is skipped with a warning.
pub fn emit_curves(spec: &SweepSpec, records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Harness("no records to plot".into()));
    }
    let mut paths = Vec::new();
    for &alg in &spec.algorithms {
        let label = alg.label();
        let rows: Vec<&RunRecord> = records.iter().filter(|r| r.algorithm == label).collect();
        if rows.is_empty() {
            eprintln!("warning: no rows for algorithm '{label}', curve omitted");
            continue;
        }
        let mut lines = String::from("# value mean_slots runs unmet\n");
        let mut values: Vec<f64> = rows.iter().map(|r| r.value).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for v in values {
            let at: Vec<&&RunRecord> = rows.iter().filter(|r| r.value == v).collect();
            let mean =
                at.iter().map(|r| r.slots_used as f64).sum::<f64>() / at.len() as f64;
            let unmet = at.iter().filter(|r| !r.demand_met).count();
            lines.push_str(&format!("{v} {mean:.6} {} {unmet}\n", at.len()));
        }
        let path = dir.join(format!("curve_{}_{label}.dat", spec.parameter.key()));
        fs::write(&path, lines)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Slot-by-slot trace of one run as JSON (objective trajectory, delivered
/// bits, feasibility verdicts).
pub fn write_trace_json(result: &TsLoopResult, path: &Path) -> Result<()> {
    let slots: Vec<serde_json::Value> = result
        .slots
        .iter()
        .map(|s| {
            serde_json::json!({
                "ts": s.ts,
                "iterations": s.iterations,
                "converged": s.converged,
                "objective_history": s.objective_history,
                "delivered_bits": s.delivered_bits,
                "backhaul_scale": s.backhaul_scale,
                "feasible": s.feasibility.all_ok(),
                "worst_violation": s.feasibility.worst_violation(),
            })
        })
        .collect();
    let doc = serde_json::json!({
        "algorithm": match result.algorithm {
            AlgorithmKind::Iterative => "sca",
            AlgorithmKind::Greedy => "greedy",
        },
        "ts_used": result.ts_used,
        "horizon": result.horizon,
        "residual_bits": result.residual_bits,
        "slots": slots,
    });
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

/// Everything a sweep leaves on disk.
#[derive(Debug)]
pub struct SweepOutputs {
    pub records: Vec<RunRecord>,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub curve_paths: Vec<PathBuf>,
    pub trace_paths: Vec<PathBuf>,
}

/// Run the sweep and write table, manifest, curves (and traces when
/// requested) under `dir`.
pub fn run_sweep_to_dir(spec: &SweepSpec, dir: &Path) -> Result<SweepOutputs> {
    fs::create_dir_all(dir)?;
    let outcomes = run_jobs(spec)?;

    let mut trace_paths = Vec::new();
    if spec.emit_traces {
        for (record, result) in &outcomes {
            let Some(result) = result else { continue };
            if record.algorithm == AlgorithmChoice::Sca.label() {
                let name = format!(
                    "trace_{}_{}_s{}.json",
                    record.parameter, record.value, record.seed
                );
                let path = dir.join(name);
                write_trace_json(result, &path)?;
                trace_paths.push(path);
            }
        }
    }

    let records: Vec<RunRecord> = outcomes.into_iter().map(|(r, _)| r).collect();
    let csv_path = dir.join("results.csv");
    write_results_csv(&records, &csv_path)?;
    let manifest_path = dir.join("manifest.json");
    write_manifest(spec, records.len(), &manifest_path)?;
    let curve_paths = emit_curves(spec, &records, dir)?;

    Ok(SweepOutputs {
        records,
        csv_path,
        manifest_path,
        curve_paths,
        trace_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smallest runnable system: one of everything, light demand.
    fn tiny_base() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.num_leo = 1;
        cfg.num_bs = 1;
        cfg.num_ue = 1;
        cfg.num_sc = 1;
        cfg.max_sc_per_ue = 1;
        cfg.bs_per_cluster = 1;
        cfg.leo_initial_positions = vec![(39.95, 20.0)];
        cfg.demand_bits = 5e4;
        cfg
    }

    fn tiny_spec() -> SweepSpec {
        SweepSpec {
            base: tiny_base(),
            parameter: SweepParameter::UeMaxPower,
            values: vec![0.1, 0.2512],
            seeds: vec![1, 2],
            algorithms: vec![AlgorithmChoice::Sca, AlgorithmChoice::Greedy],
            sca_tol: None,
            sca_max_iters: None,
            emit_traces: false,
        }
    }

    #[test]
    fn sweep_row_cardinality_and_order() {
        let spec = tiny_spec();
        let records = run_sweep(&spec).unwrap();
        assert_eq!(records.len(), 2 * 2 * 2);
        // sorted by (value, seed, algorithm)
        for pair in records.windows(2) {
            let key = |r: &RunRecord| (r.value, r.seed, r.algorithm.clone());
            assert!(key(&pair[0]) <= key(&pair[1]));
        }
        for r in &records {
            assert_eq!(r.parameter, "ue_max_power");
            if r.demand_met {
                assert_eq!(r.residual_bits, 0.0);
                assert!(r.slots_used <= spec.base.max_ts);
            } else {
                assert_eq!(r.slots_used, spec.base.max_ts);
            }
            if r.algorithm == "greedy" {
                assert_eq!(r.inner_iterations, 0);
            } else {
                assert!(r.inner_iterations > 0);
            }
        }
    }

    #[test]
    fn single_cell_sweep() {
        let mut spec = tiny_spec();
        spec.values = vec![0.2512];
        spec.seeds = vec![9];
        spec.algorithms = vec![AlgorithmChoice::Greedy];
        let records = run_sweep(&spec).unwrap();
        assert_eq!(records.len(), 1);
        assert!(records[0].demand_met);
    }

    #[test]
    fn failed_runs_become_censored_rows() {
        let mut spec = tiny_spec();
        spec.base.max_sc_per_ue = 0; // every run fails config validation
        spec.values = vec![0.1];
        spec.seeds = vec![1];
        let records = run_sweep(&spec).unwrap();
        assert_eq!(records.len(), 2);
        for r in &records {
            assert!(!r.demand_met);
            assert_eq!(r.slots_used, spec.base.max_ts);
            assert_eq!(
                r.residual_bits,
                spec.base.num_ue as f64 * spec.base.demand_bits
            );
            assert_eq!(r.delivered_bits, 0.0);
            assert_eq!(r.inner_iterations, 0);
        }
    }

    #[test]
    fn results_csv_is_byte_reproducible() {
        let spec = tiny_spec();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_results_csv(&run_sweep(&spec).unwrap(), &a).unwrap();
        write_results_csv(&run_sweep(&spec).unwrap(), &b).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        assert!(!bytes_a.is_empty());
        assert_eq!(bytes_a, std::fs::read(&b).unwrap());
    }

    #[test]
    fn sweep_dir_outputs() {
        let mut spec = tiny_spec();
        spec.seeds = vec![1];
        spec.emit_traces = true;
        let dir = tempfile::tempdir().unwrap();
        let out = run_sweep_to_dir(&spec, dir.path()).unwrap();
        assert!(out.csv_path.exists());
        assert!(out.manifest_path.exists());
        assert_eq!(out.curve_paths.len(), 2);
        // two iterative runs traced (one per value)
        assert_eq!(out.trace_paths.len(), 2);
        for path in &out.curve_paths {
            let text = std::fs::read_to_string(path).unwrap();
            let data_lines: Vec<&str> =
                text.lines().filter(|l| !l.starts_with('#')).collect();
            assert_eq!(data_lines.len(), 2, "one line per value in {path:?}");
            for line in data_lines {
                let cols: Vec<&str> = line.split_whitespace().collect();
                assert_eq!(cols.len(), 4);
                cols[1].parse::<f64>().unwrap();
            }
        }
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&out.manifest_path).unwrap()).unwrap();
        assert_eq!(manifest["schema_version"], 1);
        assert_eq!(manifest["rows"], out.records.len());
    }

    #[test]
    fn curves_skip_missing_algorithm() {
        let spec = tiny_spec();
        let records: Vec<RunRecord> = run_sweep(&spec)
            .unwrap()
            .into_iter()
            .filter(|r| r.algorithm == "sca")
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_curves(&spec, &records, dir.path()).unwrap();
        assert_eq!(paths.len(), 1);
        assert!(emit_curves(&spec, &[], dir.path()).is_err());
    }

    #[test]
    fn spec_json_round_trip_and_validation() {
        let text = r#"{
            "parameter": "leo_bandwidth",
            "values": [1e7, 2e7],
            "seeds": [1],
            "algorithms": ["sca", "greedy"]
        }"#;
        let spec = SweepSpec::from_json(text).unwrap();
        assert_eq!(spec.parameter, SweepParameter::LeoBandwidth);
        assert_eq!(spec.base.num_ue, RunConfig::default().num_ue);

        assert!(SweepSpec::from_json(r#"{"parameter":"ue_max_power","values":[],"seeds":[1],"algorithms":["sca"]}"#).is_err());
        assert!(SweepSpec::from_json(r#"{"parameter":"ue_max_power","values":[0.1],"seeds":[1],"algorithms":[]}"#).is_err());
        assert!(SweepSpec::from_json(r#"{"parameter":"nope","values":[0.1],"seeds":[1],"algorithms":["sca"]}"#).is_err());
    }
}
