//! Clustered load model for a fleet of interruptible EV charging tasks.
//!
//! Every charging task is a chain of non-interruptible subtasks. An EV of
//! class `q` sitting in subclass `s` needs one authorized epoch to move to
//! `s + 1`, drawing `g_s^q` kW while it does. Subclass `S^q` is a full battery.
//! The aggregator only tracks how many EVs sit in each `(q, s)` cluster, so the
//! state size is independent of the fleet size.
//!
//! Epochs are 1-based: decision `d(t)` is applied at epoch `t = 1..T` and the
//! state with `epoch == 0` is the initial condition.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack used when comparing accumulated pulse energies against a request.
const ENERGY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid cluster spec for class {class}: {reason}")]
    InvalidSpec { class: usize, reason: String },
    #[error("invalid charge request: {0}")]
    InvalidRequest(String),
    #[error("no cluster matches pulse tag {tag:?} with deadline {deadline}")]
    NoMatchingClass { tag: String, deadline: usize },
    #[error(
        "request needs {required_kwh:.4} kWh but class {class} delivers at most {deliverable_kwh:.4} kWh"
    )]
    InfeasibleRequest {
        class: usize,
        required_kwh: f64,
        deliverable_kwh: f64,
    },
    #[error("{count} EV(s) in cluster {cluster} cannot finish by their class deadline")]
    InfeasibleDeadline { cluster: ClusterIndex, count: u32 },
    #[error("horizon {horizon} is shorter than the latest class deadline {deadline}")]
    HorizonTooShort { horizon: usize, deadline: usize },
    #[error("unknown cluster {0}")]
    UnknownCluster(ClusterIndex),
    #[error(transparent)]
    Violation(#[from] ViolationReport),
}

/// Parameters that describe what kind of charging an EV needs, apart from how
/// much energy it still requires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characteristic {
    pub charge_rate_kw: f64,
    pub battery_kwh: f64,
    pub deadline_epoch: usize,
    pub pulse_tag: String,
}

/// One EV's raw parameters before classification. The state of charge is
/// stored as the energy (kWh) still required to reach a full battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeRequest {
    pub characteristic: Characteristic,
    pub required_kwh: f64,
    pub deadline_epoch: usize,
}

impl ChargeRequest {
    pub fn new(characteristic: Characteristic, required_kwh: f64) -> Result<Self, ModelError> {
        if !(required_kwh >= 0.0) {
            return Err(ModelError::InvalidRequest(format!(
                "required energy must be non-negative, got {required_kwh}"
            )));
        }
        if required_kwh > characteristic.battery_kwh + ENERGY_EPS {
            return Err(ModelError::InvalidRequest(format!(
                "required energy {required_kwh} exceeds battery capacity {}",
                characteristic.battery_kwh
            )));
        }
        if characteristic.deadline_epoch < 1 {
            return Err(ModelError::InvalidRequest("deadline epoch must be >= 1".into()));
        }
        let deadline_epoch = characteristic.deadline_epoch;
        Ok(Self {
            characteristic,
            required_kwh,
            deadline_epoch,
        })
    }
}

/// A characteristic class `q`: the shared charge-pulse profile and deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub class_index: usize,
    pub pulse_tag: String,
    pub subclass_count: usize,
    /// `pulse[s - 1]` is the power (kW) drawn while moving from `s` to `s + 1`.
    pub pulse: Vec<f64>,
    pub deadline: usize,
    pub epoch_minutes: f64,
}

impl ClusterSpec {
    pub fn new(
        class_index: usize,
        pulse_tag: impl Into<String>,
        pulse: Vec<f64>,
        deadline: usize,
        epoch_minutes: f64,
    ) -> Result<Self, ModelError> {
        let spec = Self {
            class_index,
            pulse_tag: pulse_tag.into(),
            subclass_count: pulse.len() + 1,
            pulse,
            deadline,
            epoch_minutes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| ModelError::InvalidSpec {
            class: self.class_index,
            reason,
        };
        if self.class_index < 1 {
            return Err(fail("class index must be >= 1".into()));
        }
        if self.subclass_count < 1 {
            return Err(fail("subclass count must be >= 1".into()));
        }
        if self.pulse.len() + 1 != self.subclass_count {
            return Err(fail(format!(
                "pulse has {} entries, expected {}",
                self.pulse.len(),
                self.subclass_count - 1
            )));
        }
        if self.pulse.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(fail("pulse entries must be finite and non-negative".into()));
        }
        if self.subclass_count > 1 && self.pulse.iter().all(|g| *g == 0.0) {
            return Err(fail("pulse must draw power in at least one subtask".into()));
        }
        if self.deadline < 1 {
            return Err(fail("deadline must be >= 1".into()));
        }
        if !(self.epoch_minutes > 0.0) {
            return Err(fail("epoch length must be positive".into()));
        }
        Ok(())
    }

    /// Hours per epoch.
    pub fn epoch_hours(&self) -> f64 {
        self.epoch_minutes / 60.0
    }

    /// Power drawn by the subtask leaving subclass `s` (1-based).
    pub fn power(&self, s: usize) -> f64 {
        self.pulse[s - 1]
    }

    /// Energy (kWh) delivered by subtasks `s..S-1`. Zero for `s >= S`.
    pub fn remaining_energy(&self, s: usize) -> f64 {
        if s >= self.subclass_count {
            return 0.0;
        }
        self.pulse[s - 1..].iter().sum::<f64>() * self.epoch_hours()
    }

    /// Epoch by which an EV must leave subclass `s` to be full by the deadline.
    /// Negative values mean the deadline is already unreachable.
    pub fn subtask_deadline(&self, s: usize) -> i64 {
        self.deadline as i64 - (self.subclass_count as i64 - s as i64)
    }
}

/// The classes `q = 1..Q` of a fleet, indexed by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    specs: Vec<ClusterSpec>,
}

impl ClusterSet {
    pub fn new(specs: Vec<ClusterSpec>) -> Result<Self, ModelError> {
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            if spec.class_index != i + 1 {
                return Err(ModelError::InvalidSpec {
                    class: spec.class_index,
                    reason: format!("class indices must be 1..Q in order, found at position {}", i + 1),
                });
            }
        }
        Ok(Self { specs })
    }

    pub fn specs(&self) -> &[ClusterSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Spec of class `q` (1-based).
    pub fn class(&self, q: usize) -> &ClusterSpec {
        &self.specs[q - 1]
    }

    pub fn get(&self, q: usize) -> Option<&ClusterSpec> {
        q.checked_sub(1).and_then(|i| self.specs.get(i))
    }

    pub fn latest_deadline(&self) -> usize {
        self.specs.iter().map(|s| s.deadline).max().unwrap_or(0)
    }

    pub fn max_power(&self) -> f64 {
        self.specs
            .iter()
            .flat_map(|s| s.pulse.iter().copied())
            .fold(0.0, f64::max)
    }

    fn check_index(&self, idx: ClusterIndex) -> Result<&ClusterSpec, ModelError> {
        match self.get(idx.q) {
            Some(spec) if idx.s <= spec.subclass_count => Ok(spec),
            _ => Err(ModelError::UnknownCluster(idx)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterIndex {
    pub q: usize,
    pub s: usize,
}

impl ClusterIndex {
    pub fn new(q: usize, s: usize) -> Self {
        Self { q, s }
    }
}

impl fmt::Display for ClusterIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.q, self.s)
    }
}

/// Number of EVs that start the night in one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FleetEntry {
    pub cluster: ClusterIndex,
    pub count: u32,
}

impl FleetEntry {
    pub fn new(q: usize, s: usize, count: u32) -> Self {
        Self {
            cluster: ClusterIndex::new(q, s),
            count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    /// Relative energy shortfall accepted before a request is rejected.
    pub energy_tolerance: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            energy_tolerance: 0.1,
        }
    }
}

/// Map a request onto its cluster `(q, s_init)`.
///
/// The class is the one sharing the request's pulse tag whose deadline is the
/// latest quantized deadline not after the request's own deadline. The initial
/// subclass is the largest `s` whose remaining chain still delivers the
/// required energy, so an EV is never under-charged.
pub fn classify(
    request: &ChargeRequest,
    specs: &ClusterSet,
    options: ClassifyOptions,
) -> Result<ClusterIndex, ModelError> {
    let tag = &request.characteristic.pulse_tag;
    let spec = specs
        .specs()
        .iter()
        .filter(|c| &c.pulse_tag == tag && c.deadline <= request.deadline_epoch)
        .max_by_key(|c| c.deadline)
        .ok_or_else(|| ModelError::NoMatchingClass {
            tag: tag.clone(),
            deadline: request.deadline_epoch,
        })?;

    let need = request.required_kwh;
    let dt = spec.epoch_hours();
    // Walk the chain backwards accumulating deliverable energy.
    let mut deliverable = 0.0;
    let mut s = spec.subclass_count;
    while deliverable + ENERGY_EPS < need && s > 1 {
        s -= 1;
        deliverable += spec.power(s) * dt;
    }
    if deliverable + ENERGY_EPS < need {
        if deliverable + ENERGY_EPS < need * (1.0 - options.energy_tolerance) {
            return Err(ModelError::InfeasibleRequest {
                class: spec.class_index,
                required_kwh: need,
                deliverable_kwh: deliverable,
            });
        }
        s = 1;
    }
    Ok(ClusterIndex::new(spec.class_index, s))
}

/// EVs whose deadline cannot be met even when charged at every epoch from
/// `t = 1`. An empty result means the whole fleet is feasible.
pub fn feasibility_check(fleet: &[FleetEntry], specs: &ClusterSet) -> Vec<FleetEntry> {
    fleet
        .iter()
        .filter(|e| e.count > 0)
        .filter(|e| match specs.get(e.cluster.q) {
            Some(spec) => e.cluster.s < spec.subclass_count && spec.subtask_deadline(e.cluster.s) < 1,
            None => true,
        })
        .copied()
        .collect()
}

/// Cumulative minimum activation `M_s^q(t)` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinActivation {
    horizon: usize,
    /// `table[q - 1][s][t]`; rows `s = 0` and `s = S^q` stay empty.
    table: Vec<Vec<Vec<u32>>>,
}

impl MinActivation {
    /// Build from per-epoch minimum activations `m[q-1][s][t]` (`t = 1..=T`,
    /// index 0 ignored) by accumulating over time.
    pub fn from_increments(specs: &ClusterSet, horizon: usize, m: &[Vec<Vec<u32>>]) -> Self {
        let table = specs
            .specs()
            .iter()
            .zip(m)
            .map(|(spec, per_s)| {
                (0..=spec.subclass_count)
                    .map(|s| {
                        let mut acc = 0u32;
                        (0..=horizon)
                            .map(|t| {
                                if t > 0 && s >= 1 && s < spec.subclass_count {
                                    acc += per_s.get(s).and_then(|r| r.get(t)).copied().unwrap_or(0);
                                }
                                acc
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { horizon, table }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `M_s^q(t)`; epochs past the horizon return the final value.
    pub fn get(&self, q: usize, s: usize, t: usize) -> u32 {
        let row = &self.table[q - 1][s];
        row[t.min(self.horizon)]
    }

    /// Per-epoch increment `m_s^q(t)`.
    pub fn increment(&self, q: usize, s: usize, t: usize) -> u32 {
        if t == 0 || t > self.horizon {
            return 0;
        }
        self.get(q, s, t) - self.get(q, s, t - 1)
    }
}

/// Map each EV's global deadline onto per-subtask deadlines and accumulate
/// them into `M_s^q(t)`. Computed once, before the night starts.
pub fn build_min_activation(
    fleet: &[FleetEntry],
    specs: &ClusterSet,
    horizon: usize,
) -> Result<MinActivation, ModelError> {
    let latest = specs.latest_deadline();
    if horizon < latest {
        return Err(ModelError::HorizonTooShort {
            horizon,
            deadline: latest,
        });
    }
    let mut m: Vec<Vec<Vec<u32>>> = specs
        .specs()
        .iter()
        .map(|spec| vec![vec![0u32; horizon + 1]; spec.subclass_count + 1])
        .collect();
    for entry in fleet {
        let spec = specs.check_index(entry.cluster)?;
        if entry.count == 0 || entry.cluster.s >= spec.subclass_count {
            continue;
        }
        if entry.cluster.s == 0 {
            return Err(ModelError::UnknownCluster(entry.cluster));
        }
        if spec.subtask_deadline(entry.cluster.s) < 1 {
            return Err(ModelError::InfeasibleDeadline {
                cluster: entry.cluster,
                count: entry.count,
            });
        }
        for s in entry.cluster.s..spec.subclass_count {
            let due = spec.subtask_deadline(s) as usize;
            m[entry.cluster.q - 1][s][due] += entry.count;
        }
    }
    Ok(MinActivation::from_increments(specs, horizon, &m))
}

/// Per-cluster activation counts `d_s^q(t)` for one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationDecision {
    pub epoch: usize,
    /// `counts[q - 1][s]` for `s = 1..S^q-1`; index 0 and `S^q` must stay zero.
    pub counts: Vec<Vec<u32>>,
}

impl ActivationDecision {
    pub fn zeros(specs: &ClusterSet, epoch: usize) -> Self {
        Self {
            epoch,
            counts: specs
                .specs()
                .iter()
                .map(|spec| vec![0; spec.subclass_count + 1])
                .collect(),
        }
    }

    pub fn get(&self, q: usize, s: usize) -> u32 {
        self.counts[q - 1][s]
    }

    pub fn set(&mut self, q: usize, s: usize, value: u32) {
        self.counts[q - 1][s] = value;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&d| d as u64).sum()
    }

    /// Aggregate load `L(t) = sum_q sum_s d_s^q(t) g_s^q` in kW.
    pub fn load_kw(&self, specs: &ClusterSet) -> f64 {
        let mut load = 0.0;
        for (spec, row) in specs.specs().iter().zip(&self.counts) {
            for s in 1..spec.subclass_count {
                load += row[s] as f64 * spec.power(s);
            }
        }
        load
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Decision is not for the epoch right after the state.
    EpochMismatch { expected: usize, found: usize },
    /// Decision table does not have the shape of the cluster set.
    Shape,
    /// Activation requested out of subclass 0 or the terminal subclass.
    InactiveSubclass { requested: u32 },
    BelowMinimum { required: u32, achieved: u32 },
    ExceedsPopulation { requested: u32, available: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub cluster: ClusterIndex,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ViolationKind::EpochMismatch { expected, found } => {
                write!(f, "decision for epoch {found}, expected {expected}")
            }
            ViolationKind::Shape => write!(f, "decision shape does not match the cluster set"),
            ViolationKind::InactiveSubclass { requested } => {
                write!(f, "cluster {}: {requested} activation(s) from an inactive subclass", self.cluster)
            }
            ViolationKind::BelowMinimum { required, achieved } => write!(
                f,
                "cluster {}: below minimum activation ({achieved} < {required})",
                self.cluster
            ),
            ViolationKind::ExceedsPopulation { requested, available } => write!(
                f,
                "cluster {}: exceeds population ({requested} > {available})",
                self.cluster
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid activation decision: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

/// Populations and cumulative activations of every cluster at one epoch.
///
/// `populations` holds `n_s^q(t+1)` after `epoch = t` decisions have been
/// applied, i.e. the EVs available to the next decision.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub epoch: usize,
    specs: Arc<ClusterSet>,
    min_activation: Arc<MinActivation>,
    initial: Vec<Vec<u32>>,
    populations: Vec<Vec<u32>>,
    cumulative: Vec<Vec<u32>>,
}

impl FleetState {
    /// Initial state at `t = 0` with the minimum-activation table built from
    /// the fleet itself.
    pub fn new(specs: Arc<ClusterSet>, fleet: &[FleetEntry], horizon: usize) -> Result<Self, ModelError> {
        let m = build_min_activation(fleet, &specs, horizon)?;
        Self::with_min_activation(specs, fleet, Arc::new(m))
    }

    /// Initial state with an externally supplied `M` table.
    pub fn with_min_activation(
        specs: Arc<ClusterSet>,
        fleet: &[FleetEntry],
        min_activation: Arc<MinActivation>,
    ) -> Result<Self, ModelError> {
        let mut initial: Vec<Vec<u32>> = specs
            .specs()
            .iter()
            .map(|spec| vec![0; spec.subclass_count + 1])
            .collect();
        for entry in fleet {
            specs.check_index(entry.cluster)?;
            initial[entry.cluster.q - 1][entry.cluster.s] += entry.count;
        }
        let cumulative = initial.iter().map(|row| vec![0; row.len()]).collect();
        Ok(Self {
            epoch: 0,
            populations: initial.clone(),
            initial,
            cumulative,
            specs,
            min_activation,
        })
    }

    pub fn specs(&self) -> &ClusterSet {
        &self.specs
    }

    pub fn specs_arc(&self) -> &Arc<ClusterSet> {
        &self.specs
    }

    pub fn min_activation(&self) -> &MinActivation {
        &self.min_activation
    }

    /// `n_s^q` available to the next decision.
    pub fn population(&self, q: usize, s: usize) -> u32 {
        self.populations[q - 1][s]
    }

    /// `n_s^q(0)`.
    pub fn initial_population(&self, q: usize, s: usize) -> u32 {
        self.initial[q - 1][s]
    }

    /// `D_s^q(epoch)`.
    pub fn cumulative(&self, q: usize, s: usize) -> u32 {
        self.cumulative[q - 1][s]
    }

    pub fn class_total(&self, q: usize) -> u32 {
        self.initial[q - 1].iter().sum()
    }

    pub fn fleet_size(&self) -> u64 {
        self.initial.iter().flatten().map(|&n| n as u64).sum()
    }

    /// Fleet composition at `t = 0`.
    pub fn initial_fleet(&self) -> Vec<FleetEntry> {
        let mut out = Vec::new();
        for (qi, row) in self.initial.iter().enumerate() {
            for (s, &n) in row.iter().enumerate() {
                if n > 0 {
                    out.push(FleetEntry::new(qi + 1, s, n));
                }
            }
        }
        out
    }

    /// Check a decision against the three constraint families of the
    /// decision set: non-negativity (enforced by the integer type), the
    /// cumulative minimum activation, and the available population.
    pub fn validate_decision(&self, decision: &ActivationDecision) -> Result<(), ViolationReport> {
        let mut violations = Vec::new();
        if decision.epoch != self.epoch + 1 {
            violations.push(Violation {
                cluster: ClusterIndex::new(0, 0),
                kind: ViolationKind::EpochMismatch {
                    expected: self.epoch + 1,
                    found: decision.epoch,
                },
            });
        }
        let shape_ok = decision.counts.len() == self.specs.len()
            && self
                .specs
                .specs()
                .iter()
                .zip(&decision.counts)
                .all(|(spec, row)| row.len() == spec.subclass_count + 1);
        if !shape_ok {
            violations.push(Violation {
                cluster: ClusterIndex::new(0, 0),
                kind: ViolationKind::Shape,
            });
            return Err(ViolationReport { violations });
        }
        let t = decision.epoch;
        for spec in self.specs.specs() {
            let q = spec.class_index;
            let row = &decision.counts[q - 1];
            for s in [0, spec.subclass_count] {
                if row[s] != 0 {
                    violations.push(Violation {
                        cluster: ClusterIndex::new(q, s),
                        kind: ViolationKind::InactiveSubclass { requested: row[s] },
                    });
                }
            }
            for s in 1..spec.subclass_count {
                let d = row[s];
                let available = self.populations[q - 1][s];
                if d > available {
                    violations.push(Violation {
                        cluster: ClusterIndex::new(q, s),
                        kind: ViolationKind::ExceedsPopulation {
                            requested: d,
                            available,
                        },
                    });
                }
                let required = self.min_activation.get(q, s, t);
                let achieved = self.cumulative[q - 1][s] + d;
                if achieved < required {
                    violations.push(Violation {
                        cluster: ClusterIndex::new(q, s),
                        kind: ViolationKind::BelowMinimum { required, achieved },
                    });
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ViolationReport { violations })
        }
    }

    /// Apply a valid decision and return the aggregate load it draws (kW).
    pub fn step(&mut self, decision: &ActivationDecision) -> Result<f64, ViolationReport> {
        self.validate_decision(decision)?;
        for spec in self.specs.specs() {
            let qi = spec.class_index - 1;
            let row = &decision.counts[qi];
            // Leaving first, then arrivals, so an EV moves at most one step.
            for s in 1..spec.subclass_count {
                self.populations[qi][s] -= row[s];
                self.cumulative[qi][s] += row[s];
            }
            for s in 1..spec.subclass_count {
                self.populations[qi][s + 1] += row[s];
            }
        }
        self.epoch = decision.epoch;
        Ok(decision.load_kw(&self.specs))
    }

    /// Whether every EV of class `q` has reached the terminal subclass.
    pub fn class_complete(&self, q: usize) -> bool {
        let spec = self.specs.class(q);
        self.populations[q - 1][spec.subclass_count] == self.class_total(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(specs: Vec<ClusterSpec>) -> Arc<ClusterSet> {
        Arc::new(ClusterSet::new(specs).unwrap())
    }

    fn request(tag: &str, need: f64, deadline: usize) -> ChargeRequest {
        ChargeRequest::new(
            Characteristic {
                charge_rate_kw: 3.3,
                battery_kwh: 50.0,
                deadline_epoch: deadline,
                pulse_tag: tag.into(),
            },
            need,
        )
        .unwrap()
    }

    fn flat_class(q: usize, s_count: usize, g: f64, k: usize) -> ClusterSpec {
        ClusterSpec::new(q, "flat", vec![g; s_count - 1], k, 5.0).unwrap()
    }

    #[test]
    fn spec_invariants() {
        assert!(ClusterSpec::new(1, "a", vec![1.0, 2.0], 3, 5.0).is_ok());
        assert!(ClusterSpec::new(1, "a", vec![0.0, 0.0], 3, 5.0).is_err());
        assert!(ClusterSpec::new(1, "a", vec![-1.0], 3, 5.0).is_err());
        assert!(ClusterSpec::new(1, "a", vec![1.0], 0, 5.0).is_err());
        assert!(ClusterSpec::new(1, "a", vec![], 2, 5.0).is_ok());
        let mut bad = flat_class(1, 4, 1.0, 5);
        bad.subclass_count = 5;
        assert!(bad.validate().is_err());
        assert!(ClusterSet::new(vec![flat_class(2, 3, 1.0, 4)]).is_err());
    }

    #[test]
    fn request_invariants() {
        let c = Characteristic {
            charge_rate_kw: 1.0,
            battery_kwh: 10.0,
            deadline_epoch: 3,
            pulse_tag: "x".into(),
        };
        assert!(ChargeRequest::new(c.clone(), -0.1).is_err());
        assert!(ChargeRequest::new(c.clone(), 10.5).is_err());
        assert!(ChargeRequest::new(Characteristic { deadline_epoch: 0, ..c }, 1.0).is_err());
    }

    #[test]
    fn classify_full_battery_is_terminal() {
        let specs = set(vec![flat_class(1, 4, 3.3, 10)]);
        let idx = classify(&request("flat", 0.0, 10), &specs, ClassifyOptions::default()).unwrap();
        assert_eq!(idx, ClusterIndex::new(1, 4));
    }

    #[test]
    fn classify_rounds_remaining_subtasks_up() {
        // 3.3 kW over 5 minutes is 0.275 kWh per subtask.
        let specs = set(vec![flat_class(1, 4, 3.3, 10)]);
        let opts = ClassifyOptions::default();
        assert_eq!(classify(&request("flat", 0.5, 10), &specs, opts).unwrap(), ClusterIndex::new(1, 2));
        assert_eq!(classify(&request("flat", 0.55, 10), &specs, opts).unwrap(), ClusterIndex::new(1, 2));
        assert_eq!(classify(&request("flat", 0.275, 10), &specs, opts).unwrap(), ClusterIndex::new(1, 3));
        assert_eq!(classify(&request("flat", 0.276, 10), &specs, opts).unwrap(), ClusterIndex::new(1, 2));
        assert_eq!(classify(&request("flat", 0.84, 10), &specs, opts).unwrap(), ClusterIndex::new(1, 1));
    }

    #[test]
    fn classify_energy_tolerance() {
        let specs = set(vec![flat_class(1, 4, 3.3, 10)]);
        // The full chain delivers 0.825 kWh; 0.9 kWh is an 8.3% shortfall.
        let strict = ClassifyOptions { energy_tolerance: 0.0 };
        assert!(matches!(
            classify(&request("flat", 0.9, 10), &specs, strict),
            Err(ModelError::InfeasibleRequest { class: 1, .. })
        ));
        assert!(matches!(
            classify(&request("flat", 0.84, 10), &specs, strict),
            Err(ModelError::InfeasibleRequest { .. })
        ));
        let loose = ClassifyOptions::default();
        assert_eq!(classify(&request("flat", 0.9, 10), &specs, loose).unwrap(), ClusterIndex::new(1, 1));
        assert!(classify(&request("flat", 0.95, 10), &specs, loose).is_err());
    }

    #[test]
    fn classify_picks_latest_deadline_not_after_request() {
        let specs = set(vec![
            flat_class(1, 3, 1.0, 5),
            flat_class(2, 3, 1.0, 9),
            ClusterSpec::new(3, "other", vec![1.0, 1.0], 7, 5.0).unwrap(),
        ]);
        let opts = ClassifyOptions::default();
        assert_eq!(classify(&request("flat", 0.0, 5), &specs, opts).unwrap().q, 1);
        assert_eq!(classify(&request("flat", 0.0, 8), &specs, opts).unwrap().q, 1);
        assert_eq!(classify(&request("flat", 0.0, 12), &specs, opts).unwrap().q, 2);
        assert_eq!(classify(&request("other", 0.0, 7), &specs, opts).unwrap().q, 3);
        assert!(matches!(
            classify(&request("flat", 0.0, 4), &specs, opts),
            Err(ModelError::NoMatchingClass { .. })
        ));
        assert!(matches!(
            classify(&request("missing", 0.0, 9), &specs, opts),
            Err(ModelError::NoMatchingClass { .. })
        ));
    }

    #[test]
    fn min_activation_of_full_battery_is_zero() {
        let specs = set(vec![flat_class(1, 3, 1.0, 5)]);
        let m = build_min_activation(&[FleetEntry::new(1, 3, 4)], &specs, 6).unwrap();
        for s in 0..=3 {
            for t in 0..=6 {
                assert_eq!(m.get(1, s, t), 0);
            }
        }
    }

    #[test]
    fn min_activation_single_ev() {
        let specs = set(vec![flat_class(1, 3, 1.0, 5)]);
        let m = build_min_activation(&[FleetEntry::new(1, 1, 1)], &specs, 5).unwrap();
        assert_eq!(m.increment(1, 1, 3), 1);
        assert_eq!(m.increment(1, 2, 4), 1);
        let m1: Vec<u32> = (1..=5).map(|t| m.get(1, 1, t)).collect();
        let m2: Vec<u32> = (1..=5).map(|t| m.get(1, 2, t)).collect();
        assert_eq!(m1, vec![0, 0, 1, 1, 1]);
        assert_eq!(m2, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn min_activation_mixed_start() {
        let specs = set(vec![flat_class(1, 3, 1.0, 5)]);
        let fleet = [FleetEntry::new(1, 1, 2), FleetEntry::new(1, 2, 1)];
        let m = build_min_activation(&fleet, &specs, 5).unwrap();
        assert_eq!(m.increment(1, 1, 3), 2);
        assert_eq!(m.increment(1, 2, 4), 3);
        assert_eq!(m.get(1, 2, 3), 0);
    }

    #[test]
    fn min_activation_errors() {
        let specs = set(vec![flat_class(1, 10, 1.0, 9)]);
        assert!(matches!(
            build_min_activation(&[FleetEntry::new(1, 1, 1)], &specs, 9),
            Err(ModelError::InfeasibleDeadline { .. })
        ));
        assert!(matches!(
            build_min_activation(&[FleetEntry::new(1, 2, 1)], &specs, 8),
            Err(ModelError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn feasibility_examples() {
        let tight = set(vec![flat_class(1, 10, 1.0, 9)]);
        let ok = set(vec![flat_class(1, 10, 1.0, 10)]);
        assert!(feasibility_check(&[FleetEntry::new(1, 10, 3)], &tight).is_empty());
        assert_eq!(
            feasibility_check(&[FleetEntry::new(1, 1, 2)], &tight),
            vec![FleetEntry::new(1, 1, 2)]
        );
        assert!(feasibility_check(&[FleetEntry::new(1, 1, 2)], &ok).is_empty());
    }

    fn toy_state() -> FleetState {
        let specs = set(vec![ClusterSpec::new(1, "t", vec![1.0, 2.0], 6, 5.0).unwrap()]);
        FleetState::new(specs, &[FleetEntry::new(1, 1, 3), FleetEntry::new(1, 2, 1)], 6).unwrap()
    }

    #[test]
    fn zero_decision_is_valid_and_idle() {
        let mut state = toy_state();
        let before = state.clone();
        let d = ActivationDecision::zeros(state.specs(), 1);
        assert!(state.validate_decision(&d).is_ok());
        let load = state.step(&d).unwrap();
        assert_eq!(load, 0.0);
        assert_eq!(state.populations, before.populations);
        assert_eq!(state.epoch, 1);
    }

    #[test]
    fn exceeding_population_is_reported() {
        let state = toy_state();
        let mut d = ActivationDecision::zeros(state.specs(), 1);
        d.set(1, 2, 2);
        let report = state.validate_decision(&d).unwrap_err();
        assert_eq!(
            report.violations,
            vec![Violation {
                cluster: ClusterIndex::new(1, 2),
                kind: ViolationKind::ExceedsPopulation { requested: 2, available: 1 }
            }]
        );
        assert!(report.to_string().contains("exceeds population"));
    }

    #[test]
    fn below_minimum_is_reported() {
        // M_1(2) = 2 with one activation so far: zero more is too few.
        let specs = set(vec![flat_class(1, 3, 1.0, 5)]);
        let mut m = vec![vec![vec![0u32; 4]; 4]];
        m[0][1][1] = 1;
        m[0][1][2] = 1;
        let table = Arc::new(MinActivation::from_increments(&specs, 3, &m));
        let mut state = FleetState::with_min_activation(specs, &[FleetEntry::new(1, 1, 3)], table).unwrap();
        let mut d1 = ActivationDecision::zeros(state.specs(), 1);
        d1.set(1, 1, 1);
        state.step(&d1).unwrap();
        let d2 = ActivationDecision::zeros(state.specs(), 2);
        let report = state.validate_decision(&d2).unwrap_err();
        assert_eq!(
            report.violations[0].kind,
            ViolationKind::BelowMinimum { required: 2, achieved: 1 }
        );
        assert!(report.to_string().contains("below minimum activation"));
    }

    #[test]
    fn wrong_epoch_and_shape_are_reported() {
        let state = toy_state();
        let d = ActivationDecision::zeros(state.specs(), 3);
        assert!(matches!(
            state.validate_decision(&d).unwrap_err().violations[0].kind,
            ViolationKind::EpochMismatch { expected: 1, found: 3 }
        ));
        let bad = ActivationDecision { epoch: 1, counts: vec![vec![0; 2]] };
        assert!(state.validate_decision(&bad).is_err());
        let mut terminal = ActivationDecision::zeros(state.specs(), 1);
        terminal.counts[0][3] = 1;
        assert!(state.validate_decision(&terminal).is_err());
    }

    #[test]
    fn single_activation_load() {
        let specs = set(vec![flat_class(1, 4, 3.3, 10)]);
        let mut state = FleetState::new(specs, &[FleetEntry::new(1, 2, 2)], 10).unwrap();
        let mut d = ActivationDecision::zeros(state.specs(), 1);
        d.set(1, 2, 1);
        let load = state.step(&d).unwrap();
        assert_eq!(load, 3.3);
        assert_eq!(state.population(1, 2), 1);
        assert_eq!(state.population(1, 3), 1);
        assert_eq!(state.cumulative(1, 2), 1);
    }

    #[test]
    fn two_cluster_load() {
        let mut state = toy_state();
        let mut d = ActivationDecision::zeros(state.specs(), 1);
        d.set(1, 1, 2);
        d.set(1, 2, 1);
        assert_eq!(state.step(&d).unwrap(), 4.0);
        assert_eq!(state.population(1, 1), 1);
        // The EV that arrived in s = 2 this epoch cannot move again yet.
        assert_eq!(state.population(1, 2), 2);
        assert_eq!(state.population(1, 3), 1);
    }

    #[test]
    fn invalid_step_leaves_state_untouched() {
        let mut state = toy_state();
        let before = state.clone();
        let mut d = ActivationDecision::zeros(state.specs(), 1);
        d.set(1, 1, 4);
        assert!(state.step(&d).is_err());
        assert_eq!(state, before);
    }

    #[test]
    fn state_is_send() {
        fn assert_send<T: Send + Sync>() {}
        assert_send::<FleetState>();
        assert_send::<MinActivation>();
    }
}
