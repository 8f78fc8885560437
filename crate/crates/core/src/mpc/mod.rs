//! Receding-horizon scheduler.
//!
//! At every epoch the scheduler forecasts the dispatch signal, solves an
//! integer program over the remaining look-ahead, commits the first epoch's
//! activations and, at the last epoch of each hour, revises the bulk purchase
//! for the hours that can still be bought.

pub mod bnb;
pub mod interior;
pub mod lp;
pub mod program;
pub mod rounding;
pub mod simplex;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActivationDecision, FleetState, ModelError, ViolationReport};
use lp::{LpBackend, LpStatus, Sense};
pub use program::{build_program, horizon_end, ActivationGrid, Cell, MpcProgram, Plan};

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(String),
    #[error("epoch {epoch} is past the horizon {horizon}")]
    PastHorizon { epoch: usize, horizon: usize },
    #[error("look-ahead program is infeasible: {0}")]
    InfeasibleProgram(String),
    #[error("LP backend returned {0:?}")]
    Solver(LpStatus),
    #[error("rounding failed: {0}")]
    Rounding(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Violation(#[from] ViolationReport),
    #[error("debug dump failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    /// Branch-and-bound to proven optimality (small programs only).
    Exact,
    /// LP relaxation followed by feasibility-preserving rounding.
    #[default]
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    /// Last epoch of the night `T`.
    pub horizon_end: usize,
    pub penalty_weight: f64,
    pub epochs_per_hour: usize,
    pub solver_mode: SolverMode,
    /// Slack used when flooring LP values to integers.
    pub rounding_tolerance: f64,
    /// Hours after the current one covered by the look-ahead; `None` means
    /// the rest of the night.
    pub lookahead_hours: Option<usize>,
    pub lp_backend: LpBackend,
    /// Branch-and-bound node limit in exact mode.
    pub node_budget: usize,
    /// Programs up to this many variables are also rounded by diving, which
    /// re-solves the relaxation once per candidate column.
    pub dive_max_vars: usize,
    /// Write every epoch's program and solution here when set.
    pub debug_dump_dir: Option<PathBuf>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon_end: 144,
            penalty_weight: 10.0,
            epochs_per_hour: 12,
            solver_mode: SolverMode::Relaxed,
            rounding_tolerance: 1e-6,
            lookahead_hours: None,
            lp_backend: LpBackend::Auto,
            node_budget: 100_000,
            dive_max_vars: lp::AUTO_SIMPLEX_MAX_VARS,
            debug_dump_dir: None,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: &str| Err(MpcError::InvalidConfig(m.into()));
        if !(self.penalty_weight > 0.0) {
            return bad("penalty_weight must be positive");
        }
        if self.epochs_per_hour < 1 {
            return bad("epochs_per_hour must be >= 1");
        }
        if self.horizon_end < 1 {
            return bad("horizon_end must be >= 1");
        }
        if self.lookahead_hours == Some(0) {
            return bad("lookahead_hours must be >= 1");
        }
        if !(0.0..0.5).contains(&self.rounding_tolerance) {
            return bad("rounding_tolerance must lie in [0, 0.5)");
        }
        Ok(())
    }

    pub fn hour_of(&self, t: usize) -> usize {
        (t - 1) / self.epochs_per_hour + 1
    }
}

/// Expected dispatch `E[a(l)]` for `l = start..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchForecast {
    pub start: usize,
    pub expected: Vec<f64>,
}

impl DispatchForecast {
    pub fn at(&self, l: usize) -> f64 {
        l.checked_sub(self.start)
            .and_then(|i| self.expected.get(i))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Persistence inside the current hour, zero mean afterwards.
pub fn forecast_dispatch(a_t: f64, t: usize, cfg: &MpcConfig) -> DispatchForecast {
    let hour_end = cfg.hour_of(t) * cfg.epochs_per_hour;
    let expected = (t..=cfg.horizon_end.max(t))
        .map(|l| if l <= hour_end { a_t } else { 0.0 })
        .collect();
    DispatchForecast { start: t, expected }
}

/// Hourly-constant purchase profile `P^(k)(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkPurchase {
    pub epochs_per_hour: usize,
    pub horizon: usize,
    /// Purchased power (kW) per hour, hour 1 first.
    pub hourly_kw: Vec<f64>,
    /// Update index `k` of this profile.
    pub revision: usize,
}

impl BulkPurchase {
    pub fn constant(kw: f64, horizon: usize, epochs_per_hour: usize) -> Self {
        Self {
            epochs_per_hour,
            horizon,
            hourly_kw: vec![kw; horizon.div_ceil(epochs_per_hour)],
            revision: 0,
        }
    }

    pub fn from_hourly(hourly_kw: Vec<f64>, horizon: usize, epochs_per_hour: usize) -> Self {
        Self {
            epochs_per_hour,
            horizon,
            hourly_kw,
            revision: 0,
        }
    }

    pub fn hours(&self) -> usize {
        self.hourly_kw.len()
    }

    /// Purchased power at epoch `t`.
    pub fn at(&self, t: usize) -> f64 {
        self.hourly_kw[(t - 1) / self.epochs_per_hour]
    }

    /// Epoch range of hour `h` (1-based), clipped to the horizon.
    pub fn hour_epochs(&self, h: usize) -> std::ops::RangeInclusive<usize> {
        ((h - 1) * self.epochs_per_hour + 1)..=(h * self.epochs_per_hour).min(self.horizon)
    }

    /// Per-epoch profile for `t = 1..=T`.
    pub fn profile(&self) -> Vec<f64> {
        (1..=self.horizon).map(|t| self.at(t)).collect()
    }
}

/// Replace hours `k + 2..` that the plan fully covers with the hourly mean of
/// the planned load. Hour `k + 1` is already bought and stays untouched.
pub fn update_bulk_purchase(solution: &MpcSolution, bulk: &BulkPurchase, k: usize) -> BulkPurchase {
    let mut next = bulk.clone();
    next.revision = k + 1;
    for h in (k + 2)..=bulk.hours() {
        let epochs = bulk.hour_epochs(h);
        if *epochs.start() < solution.start || *epochs.end() > solution.end {
            continue;
        }
        let n = epochs.clone().count() as f64;
        let sum: f64 = epochs.map(|l| solution.planned_load[l - solution.start]).sum();
        next.hourly_kw[h - 1] = sum / n;
    }
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub start: usize,
    pub end: usize,
    pub plan: Plan,
    /// Weighted deviation cost of the integer plan.
    pub objective: f64,
    /// Optimal value of the LP relaxation; `-inf` when the relaxation could
    /// not be solved and the carried-over plan was used instead.
    pub lp_bound: f64,
    /// Planned load for `start..=end`.
    pub planned_load: Vec<f64>,
    /// Exact mode finished the search within its node budget.
    pub proven_optimal: bool,
    pub nodes: usize,
}

/// Solve a look-ahead program in the requested mode.
pub fn solve(program: &MpcProgram, mode: SolverMode, cfg: &MpcConfig) -> Result<MpcSolution, MpcError> {
    solve_warm(program, mode, cfg, None)
}

/// [`solve`] with a feasible plan (usually the previous epoch's, carried
/// over) that the result must not be worse than.
pub fn solve_warm(
    program: &MpcProgram,
    mode: SolverMode,
    cfg: &MpcConfig,
    warm: Option<&Plan>,
) -> Result<MpcSolution, MpcError> {
    let relaxed = lp::solve_lp(&program.lp, cfg.lp_backend);
    match relaxed.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(MpcError::InfeasibleProgram("LP relaxation is infeasible".into())),
        other => match warm {
            // A stalled solver should not end the night while a feasible plan
            // is at hand: polish the carried-over plan and commit it.
            Some(plan) => {
                log::warn!("LP relaxation {other:?} at epoch {}; continuing the previous plan", program.start());
                return continue_plan(program, plan, cfg);
            }
            None => return Err(MpcError::Solver(other)),
        },
    }
    let mut extras: Vec<Plan> = warm.into_iter().cloned().collect();
    if program.lp.num_vars() <= cfg.dive_max_vars {
        extras.extend(rounding::dive(program, &relaxed.x, cfg.rounding_tolerance, cfg.lp_backend));
    }
    let rounded = rounding::round_plan_with(program, &relaxed.x, cfg.rounding_tolerance, &extras)?;
    let rounded_cost = program.plan_cost(&rounded);

    let (plan, proven_optimal, nodes) = match mode {
        SolverMode::Relaxed => (rounded, false, 0),
        SolverMode::Exact => {
            let incumbent = (program.plan_to_x(&rounded), program.lp.evaluate(&program.plan_to_x(&rounded)));
            let out = bnb::branch_and_bound(&program.lp, cfg.lp_backend, cfg.node_budget, Some(incumbent))
                .map_err(MpcError::Solver)?;
            let plan = program.plan_from_integral_x(&out.x);
            if program.plan_cost(&plan) <= rounded_cost {
                (plan, out.proven_optimal, out.nodes)
            } else {
                (rounded, out.proven_optimal, out.nodes)
            }
        }
    };
    let objective = program.plan_cost(&plan);
    let planned_load = plan.loads(&program.grid.specs);
    Ok(MpcSolution {
        start: program.start(),
        end: program.end(),
        plan,
        objective,
        lp_bound: relaxed.objective,
        planned_load,
        proven_optimal,
        nodes,
    })
}

/// Polish a feasible carried-over plan without an LP point to guide it.
fn continue_plan(program: &MpcProgram, plan: &Plan, cfg: &MpcConfig) -> Result<MpcSolution, MpcError> {
    let plan = rounding::round_plan(program, &program.plan_to_x(plan), cfg.rounding_tolerance)?;
    Ok(MpcSolution {
        start: program.start(),
        end: program.end(),
        objective: program.plan_cost(&plan),
        lp_bound: f64::NEG_INFINITY,
        planned_load: plan.loads(&program.grid.specs),
        plan,
        proven_optimal: false,
        nodes: 0,
    })
}

/// P^(0): the hourly purchase with the smallest peak that a relaxed plan can
/// follow while keeping every deadline. Ties are broken toward plans that are
/// flat inside each hour.
pub fn initial_purchase(state: &FleetState, cfg: &MpcConfig) -> Result<BulkPurchase, MpcError> {
    cfg.validate()?;
    let horizon = cfg.horizon_end;
    let delta = cfg.epochs_per_hour;
    let hours = horizon.div_ceil(delta);
    let mut lp = lp::LinearProgram::default();
    let grid = ActivationGrid::build(state, horizon, &mut lp)?;
    let big = 10.0 * horizon as f64;
    let z = lp.add_var("z", big, 0.0, f64::INFINITY, false);
    let p: Vec<usize> = (1..=hours)
        .map(|h| lp.add_var(format!("p_{h}"), 0.0, 0.0, f64::INFINITY, false))
        .collect();
    for &ph in &p {
        lp.add_row(vec![(ph, 1.0), (z, -1.0)], Sense::Le, 0.0);
    }
    let mut bulk = BulkPurchase::constant(0.0, horizon, delta);
    // p_h is the hourly mean of the load.
    for (h, &ph) in p.iter().enumerate() {
        let epochs = bulk.hour_epochs(h + 1);
        let n = epochs.clone().count() as f64;
        let mut terms = vec![(ph, -n)];
        let mut rhs = 0.0;
        for l in epochs {
            let i = l - grid.start + 1;
            terms.extend_from_slice(&grid.load_terms[i]);
            rhs -= grid.load_const[i];
        }
        lp.add_row(terms, Sense::Eq, rhs);
    }
    // Intra-hour flatness as a secondary objective.
    for (i, l) in grid.epochs().enumerate() {
        let ep = lp.add_var(format!("ep_{l}"), 1.0, 0.0, f64::INFINITY, false);
        let em = lp.add_var(format!("em_{l}"), 1.0, 0.0, f64::INFINITY, false);
        let mut terms = grid.load_terms[i + 1].clone();
        terms.push((p[(l - 1) / delta], -1.0));
        terms.push((ep, -1.0));
        terms.push((em, 1.0));
        lp.add_row(terms, Sense::Eq, -grid.load_const[i + 1]);
    }
    let sol = lp::solve_lp(&lp, cfg.lp_backend);
    if sol.status != LpStatus::Optimal {
        return Err(MpcError::Solver(sol.status));
    }
    for (h, &ph) in p.iter().enumerate() {
        let v = sol.x[ph];
        // Clear solver noise around zero.
        bulk.hourly_kw[h] = if v.abs() < 1e-9 { 0.0 } else { v };
    }
    Ok(bulk)
}

/// Result of one scheduling epoch.
#[derive(Debug, Clone)]
pub struct MpcStep {
    pub decision: ActivationDecision,
    /// Purchase revision produced at the end of an hour.
    pub bulk_update: Option<BulkPurchase>,
    pub solution: MpcSolution,
    pub solve_seconds: f64,
}

/// Receding-horizon scheduler. Keeps the last plan so that the next epoch
/// starts from it.
#[derive(Debug, Clone)]
pub struct MpcScheduler {
    cfg: MpcConfig,
    last_plan: Option<Plan>,
}

impl MpcScheduler {
    pub fn new(cfg: MpcConfig) -> Result<Self, MpcError> {
        cfg.validate()?;
        Ok(Self { cfg, last_plan: None })
    }

    /// Forget the stored plan.
    pub fn reset(&mut self) {
        self.last_plan = None;
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn initial_purchase(&self, state: &FleetState) -> Result<BulkPurchase, MpcError> {
        initial_purchase(state, &self.cfg)
    }

    /// Decide epoch `state.epoch + 1` given the dispatch observed there.
    pub fn schedule_epoch(&mut self, state: &FleetState, bulk: &BulkPurchase, a_t: f64) -> Result<MpcStep, MpcError> {
        let started = Instant::now();
        let t = state.epoch + 1;
        let forecast = forecast_dispatch(a_t, t, &self.cfg);
        let program = build_program(state, bulk, &forecast, &self.cfg)?;
        let warm = self.last_plan.as_ref().and_then(|p| p.carry_over(&program));
        let solution = solve_warm(&program, self.cfg.solver_mode, &self.cfg, warm.as_ref())?;
        self.last_plan = Some(solution.plan.clone());

        let mut decision = ActivationDecision::zeros(state.specs(), t);
        for spec in state.specs().specs() {
            let q = spec.class_index;
            for s in 1..spec.subclass_count {
                let d = solution.plan.get(q, s, t) - solution.plan.get(q, s, t - 1);
                decision.set(q, s, d);
            }
        }
        state.validate_decision(&decision)?;

        let k = self.cfg.hour_of(t);
        let bulk_update = (t == k * self.cfg.epochs_per_hour && k + 2 <= bulk.hours())
            .then(|| update_bulk_purchase(&solution, bulk, k));

        if let Some(dir) = &self.cfg.debug_dump_dir {
            dump_epoch(dir, t, &program, &solution)?;
        }
        log::debug!(
            "mpc t={t} vars={} rows={} objective={:.6} bound={:.6}",
            program.lp.num_vars(),
            program.lp.rows.len(),
            solution.objective,
            solution.lp_bound
        );
        Ok(MpcStep {
            decision,
            bulk_update,
            solution,
            solve_seconds: started.elapsed().as_secs_f64(),
        })
    }
}

fn dump_epoch(dir: &std::path::Path, t: usize, program: &MpcProgram, solution: &MpcSolution) -> std::io::Result<()> {
    use std::fmt::Write as _;
    std::fs::create_dir_all(dir)?;
    let mut text = program.lp.to_lp_format();
    let _ = writeln!(text, "\\ solution objective {}", solution.objective);
    let _ = writeln!(text, "\\ lp_bound {}", solution.lp_bound);
    for (i, l) in (solution.start..=solution.end).enumerate() {
        let _ = writeln!(text, "\\ L({l}) = {} target {}", solution.planned_load[i], program.targets[i]);
    }
    std::fs::write(dir.join(format!("epoch_{t:04}.lp")), text)
}
