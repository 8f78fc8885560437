//! Slack-per-unit-charge heuristic.
//!
//! Each epoch first activates every subtask whose cumulative minimum forces
//! it, then fills toward the target by repeatedly activating one EV from the
//! most flexible cluster (largest SPUC metric), until the load exceeds the
//! target or nothing is left to activate.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::model::{ActivationDecision, ClusterIndex, ClusterSet, ClusterSpec, FleetState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpucError {
    #[error("subclass {s} of class {q} has no remaining subtasks")]
    TerminalSubclass { q: usize, s: usize },
    #[error("remaining pulse of cluster {0} draws no power")]
    DegeneratePulse(ClusterIndex),
    #[error("cluster {cluster} must activate {required} EV(s) but only {available} are present")]
    InfeasibleMinActivation {
        cluster: ClusterIndex,
        required: u32,
        available: u32,
    },
}

/// Time-sensitivity figures of one cluster at one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpucRanking {
    pub cluster: ClusterIndex,
    pub slack: i64,
    pub sensitivity: f64,
    pub spuc: f64,
    pub mean_remaining_power: f64,
    pub remaining_power_variance: f64,
}

/// Slack `k - (t + S - s)` of a subtask waiting in subclass `s` at epoch `t`.
pub fn slack(spec: &ClusterSpec, s: usize, t: usize) -> i64 {
    spec.deadline as i64 - (t as i64 + spec.subclass_count as i64 - s as i64)
}

/// Mean and summed squared deviation of the pulse entries `s..S-1`.
fn remaining_stats(spec: &ClusterSpec, s: usize) -> (f64, f64, f64) {
    let rest = &spec.pulse[s - 1..];
    let sum: f64 = rest.iter().sum();
    let mean = sum / rest.len() as f64;
    let var = rest.iter().map(|g| (g - mean) * (g - mean)).sum();
    (sum, mean, var)
}

pub fn spuc_metric(spec: &ClusterSpec, s: usize, t: usize) -> Result<SpucRanking, SpucError> {
    if s == 0 || s >= spec.subclass_count {
        return Err(SpucError::TerminalSubclass {
            q: spec.class_index,
            s,
        });
    }
    let cluster = ClusterIndex::new(spec.class_index, s);
    let (sum, mean, var) = remaining_stats(spec, s);
    if sum <= 0.0 {
        return Err(SpucError::DegeneratePulse(cluster));
    }
    let rho = slack(spec, s, t);
    let remaining = (spec.subclass_count - s) as f64;
    Ok(SpucRanking {
        cluster,
        slack: rho,
        sensitivity: rho as f64 / remaining,
        spuc: rho as f64 / sum,
        mean_remaining_power: mean,
        remaining_power_variance: var,
    })
}

/// Pick order: larger SPUC, then larger variance, then lower `q`, then lower `s`.
pub fn rank_order(a: &SpucRanking, b: &SpucRanking) -> Ordering {
    b.spuc
        .total_cmp(&a.spuc)
        .then_with(|| b.remaining_power_variance.total_cmp(&a.remaining_power_variance))
        .then_with(|| a.cluster.cmp(&b.cluster))
}

/// One activation chosen by the fill loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpucPick {
    pub ranking: SpucRanking,
    pub load_before_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpucOutcome {
    pub decision: ActivationDecision,
    pub load_kw: f64,
    /// Load drawn by the deadline-forced activations alone.
    pub forced_load_kw: f64,
    pub target_kw: f64,
    /// Clusters eligible for the fill loop, in pick order.
    pub eligible: Vec<SpucRanking>,
    pub picks: Vec<SpucPick>,
}

/// Precomputed per-cluster pulse statistics for a fixed cluster set.
#[derive(Debug, Clone)]
pub struct SpucScheduler {
    specs: Arc<ClusterSet>,
    /// `stats[q-1][s] = (sum, mean, var)` of the remaining pulse.
    stats: Vec<Vec<(f64, f64, f64)>>,
}

impl SpucScheduler {
    pub fn new(specs: Arc<ClusterSet>) -> Self {
        let stats = specs
            .specs()
            .iter()
            .map(|spec| {
                (0..spec.subclass_count)
                    .map(|s| if s == 0 { (0.0, 0.0, 0.0) } else { remaining_stats(spec, s) })
                    .collect()
            })
            .collect();
        Self { specs, stats }
    }

    fn ranking(&self, spec: &ClusterSpec, s: usize, t: usize) -> SpucRanking {
        let (sum, mean, var) = self.stats[spec.class_index - 1][s];
        let rho = slack(spec, s, t);
        let remaining = (spec.subclass_count - s) as f64;
        SpucRanking {
            cluster: ClusterIndex::new(spec.class_index, s),
            slack: rho,
            sensitivity: rho as f64 / remaining,
            spuc: rho as f64 / sum,
            mean_remaining_power: mean,
            remaining_power_variance: var,
        }
    }

    /// Decide epoch `state.epoch + 1` against `target_kw`.
    pub fn schedule_epoch(&self, state: &FleetState, target_kw: f64) -> Result<SpucOutcome, SpucError> {
        let t = state.epoch + 1;
        let m = state.min_activation();
        let mut decision = ActivationDecision::zeros(&self.specs, t);
        let mut eligible = Vec::new();

        for spec in self.specs.specs() {
            let q = spec.class_index;
            for s in 1..spec.subclass_count {
                let available = state.population(q, s);
                let need = m.get(q, s, t).saturating_sub(state.cumulative(q, s));
                if need > available {
                    return Err(SpucError::InfeasibleMinActivation {
                        cluster: ClusterIndex::new(q, s),
                        required: need,
                        available,
                    });
                }
                if self.stats[q - 1][s].0 <= 0.0 {
                    // Nothing left to draw: finish these chains for free.
                    decision.set(q, s, available);
                    continue;
                }
                decision.set(q, s, need);
                if available > need {
                    eligible.push(self.ranking(spec, s, t));
                }
            }
        }

        let forced_load_kw = decision.load_kw(&self.specs);
        let mut load = forced_load_kw;
        eligible.sort_by(rank_order);

        let mut picks = Vec::new();
        let mut cursor = 0;
        while load <= target_kw && cursor < eligible.len() {
            let r = eligible[cursor];
            let ClusterIndex { q, s } = r.cluster;
            let d = decision.get(q, s);
            if d == state.population(q, s) {
                cursor += 1;
                continue;
            }
            picks.push(SpucPick {
                ranking: r,
                load_before_kw: load,
            });
            decision.set(q, s, d + 1);
            load += self.specs.class(q).power(s);
        }

        Ok(SpucOutcome {
            decision,
            load_kw: load,
            forced_load_kw,
            target_kw,
            eligible,
            picks,
        })
    }
}

/// Convenience wrapper building the pulse statistics on the fly.
pub fn schedule_epoch(state: &FleetState, target_kw: f64) -> Result<SpucOutcome, SpucError> {
    SpucScheduler::new(state.specs_arc().clone()).schedule_epoch(state, target_kw)
}
