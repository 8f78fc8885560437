//! Night-long simulations, dispatch traces and their CSV form.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FleetState, ModelError, ViolationReport};
use crate::mpc::{BulkPurchase, MpcConfig, MpcError, MpcScheduler};
use crate::scenario::Scenario;
use crate::spuc::{SpucError, SpucPick, SpucRanking, SpucScheduler};

pub const TRACE_HEADER: [&str; 6] = ["epoch", "p_kw", "a_kw", "target_kw", "load_kw", "deviation_kw"];
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Violation(#[from] ViolationReport),
    #[error(transparent)]
    Spuc(#[from] SpucError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("traces come from different scenarios ({0} vs {1})")]
    ScenarioMismatch(String, String),
    #[error("purchase profile has {found} epochs, expected {expected}")]
    ProfileLength { expected: usize, found: usize },
    #[error("nothing to compare")]
    Empty,
    #[error("unknown scheduler {0:?} (expected mpc, spuc-static or spuc-updated)")]
    UnknownScheduler(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    Mpc,
    SpucStatic,
    SpucUpdated,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 3] = [Self::Mpc, Self::SpucStatic, Self::SpucUpdated];

    pub fn label(self) -> &'static str {
        match self {
            Self::Mpc => "mpc",
            Self::SpucStatic => "spuc-static",
            Self::SpucUpdated => "spuc-updated",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchedulerKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| HarnessError::UnknownScheduler(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub p_kw: f64,
    pub a_kw: f64,
    pub target_kw: f64,
    pub load_kw: f64,
    pub deviation_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchTrace {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub epoch_minutes: f64,
    pub scenario_fingerprint: String,
    pub records: Vec<TraceRecord>,
    pub deviation_energy_kwh: f64,
    pub qos_completion_fraction: f64,
    pub runtime_seconds: f64,
}

impl DispatchTrace {
    pub fn epoch_hours(&self) -> f64 {
        self.epoch_minutes / 60.0
    }

    /// Share of the deviation energy falling in each quarter of the night.
    pub fn quarter_shares(&self) -> [f64; 4] {
        let n = self.records.len();
        let mut energy = [0.0; 4];
        for (i, r) in self.records.iter().enumerate() {
            energy[i * 4 / n.max(1)] += r.deviation_kw.abs();
        }
        let total: f64 = energy.iter().sum();
        if total == 0.0 {
            return [0.0; 4];
        }
        energy.map(|e| e / total)
    }

    pub fn recomputed_deviation_energy(&self) -> f64 {
        deviation_energy(&self.records, self.epoch_hours())
    }
}

fn deviation_energy(records: &[TraceRecord], epoch_hours: f64) -> f64 {
    records.iter().map(|r| r.deviation_kw.abs()).sum::<f64>() * epoch_hours
}

/// Fleet state at `t = 0` for a scenario.
pub fn initial_state(scenario: &Scenario) -> Result<FleetState, HarnessError> {
    Ok(FleetState::new(
        scenario.specs.clone(),
        &scenario.fleet,
        scenario.config.night_epochs,
    )?)
}

/// MPC settings aligned with the scenario's night length and epoch size.
pub fn mpc_config_for(scenario: &Scenario, base: &MpcConfig) -> MpcConfig {
    MpcConfig {
        horizon_end: scenario.config.night_epochs,
        epochs_per_hour: scenario.config.epochs_per_hour(),
        ..base.clone()
    }
}

/// Tracks per-class completion at each class deadline.
struct QosMeter {
    done: u64,
    total: u64,
}

impl QosMeter {
    fn new(state: &FleetState) -> Self {
        Self {
            done: 0,
            total: state.fleet_size(),
        }
    }

    /// Call after the decision of epoch `state.epoch` has been applied.
    fn observe(&mut self, state: &FleetState) {
        for spec in state.specs().specs() {
            if spec.deadline == state.epoch + 1 {
                self.done += state.population(spec.class_index, spec.subclass_count) as u64;
            }
        }
    }

    fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.done as f64 / self.total as f64
        }
    }
}

struct TraceBuilder {
    records: Vec<TraceRecord>,
}

impl TraceBuilder {
    fn push(&mut self, epoch: usize, p: f64, a: f64, load: f64) {
        let target = p + a;
        self.records.push(TraceRecord {
            epoch,
            p_kw: p,
            a_kw: a,
            target_kw: target,
            load_kw: load,
            deviation_kw: load - target,
        });
    }

    fn finish(self, scenario: &Scenario, kind: SchedulerKind, qos: f64, runtime: f64) -> DispatchTrace {
        let epoch_hours = scenario.config.epoch_minutes / 60.0;
        DispatchTrace {
            scheduler: kind,
            seed: scenario.config.rng_seed,
            epoch_minutes: scenario.config.epoch_minutes,
            scenario_fingerprint: scenario.fingerprint(),
            deviation_energy_kwh: deviation_energy(&self.records, epoch_hours),
            records: self.records,
            qos_completion_fraction: qos,
            runtime_seconds: runtime,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MpcRun {
    pub trace: DispatchTrace,
    pub initial_purchase: BulkPurchase,
    /// Every purchase revision, `P^(0)` first.
    pub purchases: Vec<BulkPurchase>,
    /// `P^(k)(t)` in force at each epoch.
    pub purchase_in_force: Vec<f64>,
    pub initial_purchase_seconds: f64,
}

pub fn run_mpc(scenario: &Scenario, base: &MpcConfig) -> Result<MpcRun, HarnessError> {
    let started = Instant::now();
    let cfg = mpc_config_for(scenario, base);
    let mut scheduler = MpcScheduler::new(cfg)?;
    let mut state = initial_state(scenario)?;
    let initial = scheduler.initial_purchase(&state)?;
    let initial_purchase_seconds = started.elapsed().as_secs_f64();
    let mut bulk = initial.clone();
    let mut purchases = vec![initial.clone()];
    let mut in_force = Vec::with_capacity(scenario.config.night_epochs);
    let mut trace = TraceBuilder { records: Vec::new() };
    let mut qos = QosMeter::new(&state);

    for t in 1..=scenario.config.night_epochs {
        let a = scenario.wind[t - 1];
        let p = bulk.at(t);
        let step = scheduler.schedule_epoch(&state, &bulk, a)?;
        let load = state.step(&step.decision)?;
        qos.observe(&state);
        trace.push(t, p, a, load);
        in_force.push(p);
        if let Some(next) = step.bulk_update {
            bulk = next;
            purchases.push(bulk.clone());
        }
    }
    Ok(MpcRun {
        trace: trace.finish(scenario, SchedulerKind::Mpc, qos.fraction(), started.elapsed().as_secs_f64()),
        initial_purchase: initial,
        purchases,
        purchase_in_force: in_force,
        initial_purchase_seconds,
    })
}

/// Diagnostics of one SPUC epoch, kept for auditing the pick order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpucEpochRecord {
    pub epoch: usize,
    pub target_kw: f64,
    pub forced_load_kw: f64,
    pub load_kw: f64,
    pub eligible: Vec<SpucRanking>,
    pub picks: Vec<SpucPick>,
    pub max_power_kw: f64,
}

#[derive(Debug, Clone)]
pub struct SpucRun {
    pub trace: DispatchTrace,
    pub epochs: Vec<SpucEpochRecord>,
}

/// Run the heuristic against a given per-epoch purchase profile.
pub fn run_spuc(
    scenario: &Scenario,
    purchase: &[f64],
    kind: SchedulerKind,
    record: bool,
) -> Result<SpucRun, HarnessError> {
    let started = Instant::now();
    let horizon = scenario.config.night_epochs;
    if purchase.len() != horizon {
        return Err(HarnessError::ProfileLength {
            expected: horizon,
            found: purchase.len(),
        });
    }
    let scheduler = SpucScheduler::new(scenario.specs.clone());
    let max_power = scenario.specs.max_power();
    let mut state = initial_state(scenario)?;
    let mut trace = TraceBuilder { records: Vec::new() };
    let mut qos = QosMeter::new(&state);
    let mut epochs = Vec::new();

    for t in 1..=horizon {
        let a = scenario.wind[t - 1];
        let p = purchase[t - 1];
        let out = scheduler.schedule_epoch(&state, p + a)?;
        let load = state.step(&out.decision)?;
        qos.observe(&state);
        trace.push(t, p, a, load);
        if record {
            epochs.push(SpucEpochRecord {
                epoch: t,
                target_kw: out.target_kw,
                forced_load_kw: out.forced_load_kw,
                load_kw: out.load_kw,
                eligible: out.eligible,
                picks: out.picks,
                max_power_kw: max_power,
            });
        }
    }
    Ok(SpucRun {
        trace: trace.finish(scenario, kind, qos.fraction(), started.elapsed().as_secs_f64()),
        epochs,
    })
}

/// The three schedulers on one scenario, sharing a single MPC run.
#[derive(Debug, Clone)]
pub struct PairedRuns {
    pub mpc: MpcRun,
    pub spuc_static: SpucRun,
    pub spuc_updated: SpucRun,
}

pub fn run_paired(scenario: &Scenario, base: &MpcConfig, record: bool) -> Result<PairedRuns, HarnessError> {
    let mpc = run_mpc(scenario, base)?;
    let mut spuc_static = run_spuc(scenario, &mpc.initial_purchase.profile(), SchedulerKind::SpucStatic, record)?;
    spuc_static.trace.runtime_seconds += mpc.initial_purchase_seconds;
    let mut spuc_updated = run_spuc(scenario, &mpc.purchase_in_force, SchedulerKind::SpucUpdated, record)?;
    spuc_updated.trace.runtime_seconds += mpc.trace.runtime_seconds;
    Ok(PairedRuns {
        mpc,
        spuc_static,
        spuc_updated,
    })
}

/// Simulate one night with the chosen scheduler.
///
/// `spuc-static` follows `P^(0)`; `spuc-updated` first runs the MPC on the
/// same scenario and follows the purchase revisions it made.
pub fn run_night(scenario: &Scenario, kind: SchedulerKind, base: &MpcConfig) -> Result<DispatchTrace, HarnessError> {
    match kind {
        SchedulerKind::Mpc => Ok(run_mpc(scenario, base)?.trace),
        SchedulerKind::SpucStatic => {
            let started = Instant::now();
            let cfg = mpc_config_for(scenario, base);
            let state = initial_state(scenario)?;
            let p0 = crate::mpc::initial_purchase(&state, &cfg)?;
            let mut run = run_spuc(scenario, &p0.profile(), kind, false)?;
            run.trace.runtime_seconds = started.elapsed().as_secs_f64();
            Ok(run.trace)
        }
        SchedulerKind::SpucUpdated => {
            let started = Instant::now();
            let mpc = run_mpc(scenario, base)?;
            let mut run = run_spuc(scenario, &mpc.purchase_in_force, kind, false)?;
            run.trace.runtime_seconds = started.elapsed().as_secs_f64();
            Ok(run.trace)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Summary {
    schema_version: u32,
    scheduler: SchedulerKind,
    seed: u64,
    epoch_minutes: f64,
    epochs: usize,
    scenario_fingerprint: String,
    deviation_energy_kwh: f64,
    qos_completion_fraction: f64,
    runtime_seconds: f64,
}

/// Sidecar path holding the run totals: `<stem>.summary.json`.
pub fn summary_path(trace_path: &Path) -> PathBuf {
    trace_path.with_extension("summary.json")
}

/// Write the per-epoch CSV and its summary sidecar.
pub fn export_trace(trace: &DispatchTrace, path: &Path) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    writer.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in &trace.records {
        writer
            .write_record([
                r.epoch.to_string(),
                r.p_kw.to_string(),
                r.a_kw.to_string(),
                r.target_kw.to_string(),
                r.load_kw.to_string(),
                r.deviation_kw.to_string(),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(io_err(path))?;

    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        scheduler: trace.scheduler,
        seed: trace.seed,
        epoch_minutes: trace.epoch_minutes,
        epochs: trace.records.len(),
        scenario_fingerprint: trace.scenario_fingerprint.clone(),
        deviation_energy_kwh: trace.deviation_energy_kwh,
        qos_completion_fraction: trace.qos_completion_fraction,
        runtime_seconds: trace.runtime_seconds,
    };
    let sidecar = summary_path(path);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&sidecar, json + "\n").map_err(io_err(&sidecar))
}

pub fn read_trace_records(path: &Path) -> Result<Vec<TraceRecord>, HarnessError> {
    let fmt_err = |line: usize, message: String| HarnessError::Format {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| fmt_err(0, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| fmt_err(1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != TRACE_HEADER {
        return Err(fmt_err(1, format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| fmt_err(line, e.to_string()))?;
        let num = |k: usize| -> Result<f64, HarnessError> {
            row.get(k)
                .ok_or_else(|| fmt_err(line, "missing field".into()))?
                .parse()
                .map_err(|e| fmt_err(line, format!("{e}")))
        };
        records.push(TraceRecord {
            epoch: row[0].parse().map_err(|e| fmt_err(line, format!("{e}")))?,
            p_kw: num(1)?,
            a_kw: num(2)?,
            target_kw: num(3)?,
            load_kw: num(4)?,
            deviation_kw: num(5)?,
        });
    }
    Ok(records)
}

/// Read a trace written by [`export_trace`].
pub fn import_trace(path: &Path) -> Result<DispatchTrace, HarnessError> {
    let records = read_trace_records(path)?;
    let sidecar = summary_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(io_err(&sidecar))?;
    let summary: Summary = serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path: sidecar.clone(),
        message: e.to_string(),
    })?;
    if summary.schema_version != SUMMARY_SCHEMA_VERSION {
        return Err(HarnessError::Format {
            path: sidecar,
            message: format!("unsupported schema_version {}", summary.schema_version),
        });
    }
    if summary.epochs != records.len() {
        return Err(HarnessError::Format {
            path: sidecar,
            message: format!("summary lists {} epochs, CSV has {}", summary.epochs, records.len()),
        });
    }
    Ok(DispatchTrace {
        scheduler: summary.scheduler,
        seed: summary.seed,
        epoch_minutes: summary.epoch_minutes,
        scenario_fingerprint: summary.scenario_fingerprint,
        records,
        deviation_energy_kwh: summary.deviation_energy_kwh,
        qos_completion_fraction: summary.qos_completion_fraction,
        runtime_seconds: summary.runtime_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub deviation_energy_kwh: f64,
    pub qos_completion_fraction: f64,
    pub runtime_seconds: f64,
    pub max_abs_deviation_kw: f64,
    pub quarter_shares: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDifference {
    pub a: String,
    pub b: String,
    /// `b - a` deviation energy.
    pub deviation_energy_diff_kwh: f64,
    pub max_load_diff_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario_fingerprint: String,
    pub runs: Vec<RunSummary>,
    pub differences: Vec<PairDifference>,
}

/// Summarize traces from the same scenario side by side.
pub fn compare_runs(traces: &[DispatchTrace]) -> Result<Comparison, HarnessError> {
    let first = traces.first().ok_or(HarnessError::Empty)?;
    for t in traces {
        if t.scenario_fingerprint != first.scenario_fingerprint {
            return Err(HarnessError::ScenarioMismatch(
                first.scenario_fingerprint.clone(),
                t.scenario_fingerprint.clone(),
            ));
        }
    }
    let label = |i: usize, t: &DispatchTrace| {
        let dup = traces.iter().filter(|o| o.scheduler == t.scheduler).count() > 1;
        if dup {
            format!("{}#{i}", t.scheduler)
        } else {
            t.scheduler.to_string()
        }
    };
    let runs = traces
        .iter()
        .enumerate()
        .map(|(i, t)| RunSummary {
            label: label(i, t),
            deviation_energy_kwh: t.deviation_energy_kwh,
            qos_completion_fraction: t.qos_completion_fraction,
            runtime_seconds: t.runtime_seconds,
            max_abs_deviation_kw: t.records.iter().map(|r| r.deviation_kw.abs()).fold(0.0, f64::max),
            quarter_shares: t.quarter_shares(),
        })
        .collect::<Vec<_>>();
    let mut differences = Vec::new();
    for i in 0..traces.len() {
        for j in i + 1..traces.len() {
            let (a, b) = (&traces[i], &traces[j]);
            let max_load_diff = a
                .records
                .iter()
                .zip(&b.records)
                .map(|(x, y)| (x.load_kw - y.load_kw).abs())
                .fold(0.0, f64::max);
            differences.push(PairDifference {
                a: runs[i].label.clone(),
                b: runs[j].label.clone(),
                deviation_energy_diff_kwh: b.deviation_energy_kwh - a.deviation_energy_kwh,
                max_load_diff_kw: max_load_diff,
            });
        }
    }
    Ok(Comparison {
        scenario_fingerprint: first.scenario_fingerprint.clone(),
        runs,
        differences,
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}", self.scenario_fingerprint)?;
        writeln!(
            f,
            "{:<16} {:>14} {:>8} {:>10} {:>12}  quarter shares",
            "run", "deviation_kwh", "qos", "runtime_s", "max_dev_kw"
        )?;
        for r in &self.runs {
            writeln!(
                f,
                "{:<16} {:>14.6} {:>8.4} {:>10.2} {:>12.4}  {:.3} {:.3} {:.3} {:.3}",
                r.label,
                r.deviation_energy_kwh,
                r.qos_completion_fraction,
                r.runtime_seconds,
                r.max_abs_deviation_kw,
                r.quarter_shares[0],
                r.quarter_shares[1],
                r.quarter_shares[2],
                r.quarter_shares[3]
            )?;
        }
        for d in &self.differences {
            writeln!(
                f,
                "{} -> {}: deviation {:+.6} kWh, max load difference {:.4} kW",
                d.a, d.b, d.deviation_energy_diff_kwh, d.max_load_diff_kw
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    fn tiny(seed: u64) -> Scenario {
        let cfg = ScenarioConfig {
            rng_seed: seed,
            ..ScenarioConfig::scaled(15, 48)
        };
        Scenario::generate(&cfg).unwrap()
    }

    fn fast_mpc() -> MpcConfig {
        MpcConfig {
            lookahead_hours: Some(2),
            ..MpcConfig::default()
        }
    }

    #[test]
    fn scheduler_labels_round_trip() {
        for k in SchedulerKind::ALL {
            assert_eq!(k.label().parse::<SchedulerKind>().unwrap(), k);
        }
        assert!("edf".parse::<SchedulerKind>().is_err());
    }

    #[test]
    fn empty_fleet_zero_wind_gives_zero_trace() {
        let mut s = tiny(1);
        s.fleet.clear();
        s.wind = vec![0.0; 48];
        for kind in SchedulerKind::ALL {
            let trace = run_night(&s, kind, &fast_mpc()).unwrap();
            assert_eq!(trace.records.len(), 48);
            assert!(trace.records.iter().all(|r| r.load_kw == 0.0 && r.deviation_kw == 0.0));
            assert_eq!(trace.deviation_energy_kwh, 0.0);
            assert_eq!(trace.qos_completion_fraction, 1.0);
        }
    }

    #[test]
    fn small_nights_meet_every_deadline() {
        let s = tiny(2);
        let runs = run_paired(&s, &fast_mpc(), true).unwrap();
        for trace in [&runs.mpc.trace, &runs.spuc_static.trace, &runs.spuc_updated.trace] {
            assert_eq!(trace.qos_completion_fraction, 1.0, "{}", trace.scheduler);
            assert!((trace.recomputed_deviation_energy() - trace.deviation_energy_kwh).abs() < 1e-9);
        }
        assert_eq!(runs.spuc_static.epochs.len(), 48);
        assert_eq!(runs.mpc.purchases[0], runs.mpc.initial_purchase);
        // Revisions land at the end of hours 1..=T/D - 2.
        assert_eq!(runs.mpc.purchases.len(), 1 + 10);
        assert_eq!(runs.mpc.purchases.last().unwrap().revision, 11);
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny(3);
        let trace = run_night(&s, SchedulerKind::SpucStatic, &fast_mpc()).unwrap();
        let path = dir.path().join("spuc-static.csv");
        export_trace(&trace, &path).unwrap();
        let back = import_trace(&path).unwrap();
        assert_eq!(back, trace);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,p_kw,a_kw,target_kw,load_kw,deviation_kw\n"));
        let recomputed = deviation_energy(&read_trace_records(&path).unwrap(), trace.epoch_hours());
        assert!((recomputed - trace.deviation_energy_kwh).abs() < 1e-9);
    }

    #[test]
    fn zero_length_trace_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let trace = DispatchTrace {
            scheduler: SchedulerKind::Mpc,
            seed: 0,
            epoch_minutes: 5.0,
            scenario_fingerprint: "x".into(),
            records: vec![],
            deviation_energy_kwh: 0.0,
            qos_completion_fraction: 1.0,
            runtime_seconds: 0.0,
        };
        let path = dir.path().join("empty.csv");
        export_trace(&trace, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "epoch,p_kw,a_kw,target_kw,load_kw,deviation_kw\n");
        assert_eq!(import_trace(&path).unwrap(), trace);
    }

    #[test]
    fn comparison_of_identical_traces() {
        let s = tiny(4);
        let trace = run_night(&s, SchedulerKind::SpucStatic, &fast_mpc()).unwrap();
        let cmp = compare_runs(&[trace.clone(), trace.clone()]).unwrap();
        assert_eq!(cmp.differences.len(), 1);
        assert_eq!(cmp.differences[0].deviation_energy_diff_kwh, 0.0);
        assert_eq!(cmp.differences[0].max_load_diff_kw, 0.0);
        assert!(cmp.to_string().contains("spuc-static#0"));

        let other = run_night(&tiny(5), SchedulerKind::SpucStatic, &fast_mpc()).unwrap();
        assert!(matches!(compare_runs(&[trace, other]), Err(HarnessError::ScenarioMismatch(..))));
        assert!(matches!(compare_runs(&[]), Err(HarnessError::Empty)));
    }

    #[test]
    fn quarter_shares_sum_to_one() {
        let s = tiny(6);
        let trace = run_night(&s, SchedulerKind::SpucStatic, &fast_mpc()).unwrap();
        let shares = trace.quarter_shares();
        if trace.deviation_energy_kwh > 0.0 {
            assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn purchase_profile_length_is_checked() {
        let s = tiny(7);
        assert!(matches!(
            run_spuc(&s, &[0.0; 3], SchedulerKind::SpucStatic, false),
            Err(HarnessError::ProfileLength { .. })
        ));
    }
}
