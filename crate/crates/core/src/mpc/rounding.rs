//! Turn a fractional LP point into an integer plan.
//!
//! Values are rounded epoch by epoch as `floor(x + theta)`, clamped into the
//! interval that the previous epoch leaves open, then nudged by single
//! activations toward the LP's planned load. The cheapest of several `theta`
//! goes through a local search over one- and two-cell changes that lower the
//! true weighted deviation cost.
//!
//! A shared offset already keeps every difference constraint, since their
//! right-hand sides are integers; the clamps only absorb solver noise.

use super::lp::{solve_lp, LpBackend, LpStatus};
use super::program::{Cell, MpcProgram, Plan};
use super::MpcError;

const MAX_SWEEPS: usize = 50;
const GAIN_TOL: f64 = 1e-9;

struct Ctx<'a> {
    prog: &'a MpcProgram,
    values: Vec<Vec<Vec<u32>>>,
}

impl<'a> Ctx<'a> {
    fn plan(&self) -> Plan {
        Plan {
            start: self.prog.grid.start,
            end: self.prog.grid.end,
            values: self.values.clone(),
        }
    }

    /// Feasible interval for `D_s^q` at column `c` given column `c - 1`,
    /// ignoring later columns.
    fn interval(&self, qi: usize, s: usize, c: usize, j: usize) -> (u32, u32) {
        let lp = &self.prog.lp;
        let v = &self.values[qi];
        let lo = (lp.lower[j].max(0.0) as u32).max(v[s][c - 1]);
        let mut hi = lp.upper[j].max(0.0) as u32;
        if s > 1 {
            hi = hi.min(self.prog.grid.initial[qi][s] + v[s - 1][c - 1]);
        }
        (lo, hi)
    }

    fn load(&self, c: usize) -> f64 {
        let mut load = 0.0;
        for (spec, v) in self.prog.grid.specs.specs().iter().zip(&self.values) {
            for s in 1..spec.subclass_count {
                let d = v[s][c] as i64 - v[s][c - 1] as i64;
                load += d as f64 * spec.power(s);
            }
        }
        load
    }

    fn cost(&self, c: usize, load: f64) -> f64 {
        self.prog.weights[c - 1] * (load - self.prog.targets[c - 1]).abs()
    }
}

/// Offsets tried when rounding; `floor(x + theta)` with one shared `theta`
/// keeps every difference constraint with an integer right-hand side.
const THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Best of several threshold roundings of `x`, then polished.
pub fn round_plan(prog: &MpcProgram, x: &[f64], tol: f64) -> Result<Plan, MpcError> {
    round_plan_with(prog, x, tol, &[])
}

/// Like [`round_plan`], with extra feasible plans competing before the
/// polish step.
pub fn round_plan_with(prog: &MpcProgram, x: &[f64], tol: f64, extras: &[Plan]) -> Result<Plan, MpcError> {
    let mut best = threshold_round(prog, x, tol)?;
    let mut best_cost = prog.plan_cost(&best.plan());
    for theta in THRESHOLDS {
        if theta <= tol {
            continue;
        }
        let ctx = threshold_round(prog, x, theta)?;
        let cost = prog.plan_cost(&ctx.plan());
        if cost < best_cost - GAIN_TOL {
            best = ctx;
            best_cost = cost;
        }
    }
    for plan in extras {
        let cost = prog.plan_cost(plan);
        if cost < best_cost - GAIN_TOL {
            best.values = plan.values.clone();
            best_cost = cost;
        }
    }
    let width = prog.grid.end + 2 - prog.grid.start;
    polish(&mut best, width);
    Ok(best.plan())
}

/// Offsets tried per column while diving.
const DIVE_THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];
/// Columns with at most this many admissible value combinations are tried
/// in full while diving.
const DIVE_FULL_BOX: u64 = 64;

/// Round one epoch at a time. Each column is rounded with a few offsets
/// from the current LP point (or enumerated when its box is small) and
/// improved by unit steps; every candidate is held fixed, the relaxation
/// is re-solved, and the rest of the horizon is rounded and polished. The
/// candidate with the cheapest completion is kept, and the cheapest complete
/// plan seen on the way is returned. `None` when the first column already
/// has no candidate that keeps the relaxation feasible.
pub fn dive(prog: &MpcProgram, x: &[f64], tol: f64, backend: LpBackend) -> Option<Plan> {
    let grid = &prog.grid;
    let width = grid.end + 2 - grid.start;
    let mut ctx = threshold_round(prog, x, tol).ok()?;
    let mut lp = prog.lp.clone();
    let mut incumbent: Option<(f64, Plan)> = None;
    for c in 1..width {
        let cells: Vec<(usize, usize, usize)> = grid
            .specs
            .specs()
            .iter()
            .enumerate()
            .flat_map(|(qi, spec)| (1..spec.subclass_count).map(move |s| (qi, s)))
            .filter_map(|(qi, s)| match grid.cells[qi][s][c] {
                Cell::Var(j) => Some((qi, s, j)),
                Cell::Fixed(_) => None,
            })
            .collect();
        if cells.is_empty() {
            continue;
        }
        let point = solve_lp(&lp, backend);
        if point.status != LpStatus::Optimal {
            break;
        }
        let mut bounds = Vec::with_capacity(cells.len());
        for &(qi, s, j) in &cells {
            let (lo, hi) = ctx.interval(qi, s, c, j);
            if lo > hi {
                return incumbent.map(|b| b.1);
            }
            bounds.push((lo, hi));
        }
        let mut tried: Vec<Vec<u32>> = Vec::new();
        let mut best: Option<(f64, f64, Vec<u32>)> = None;
        // Score a column by the cheapest completion found from it.
        let mut consider = |column: Vec<u32>, best: &mut Option<(f64, f64, Vec<u32>)>| -> bool {
            if tried.contains(&column) {
                return false;
            }
            tried.push(column.clone());
            let mut trial = lp.clone();
            for (&(_, _, j), &v) in cells.iter().zip(&column) {
                trial.lower[j] = v as f64;
                trial.upper[j] = v as f64;
            }
            let sol = solve_lp(&trial, backend);
            if sol.status != LpStatus::Optimal {
                return false;
            }
            let Ok(plan) = round_plan(prog, &sol.x, tol) else { return false };
            let cost = prog.plan_cost(&plan);
            if incumbent.as_ref().is_none_or(|b| cost < b.0 - GAIN_TOL) {
                incumbent = Some((cost, plan));
            }
            let better = match best {
                None => true,
                Some((bc, bl, _)) => cost < *bc - GAIN_TOL || (cost < *bc + GAIN_TOL && sol.objective < *bl - GAIN_TOL),
            };
            if better {
                *best = Some((cost, sol.objective, column));
            }
            better
        };
        for theta in std::iter::once(tol).chain(DIVE_THRESHOLDS).chain(std::iter::once(1.0 - tol)) {
            let column = cells
                .iter()
                .zip(&bounds)
                .map(|(&(_, _, j), &(lo, hi))| ((point.x[j] + theta).floor().max(0.0) as u32).clamp(lo, hi))
                .collect();
            consider(column, &mut best);
        }
        let box_size = bounds
            .iter()
            .try_fold(1u64, |acc, &(lo, hi)| acc.checked_mul((hi - lo + 1) as u64))
            .unwrap_or(u64::MAX);
        if box_size <= DIVE_FULL_BOX {
            let mut column: Vec<u32> = bounds.iter().map(|b| b.0).collect();
            loop {
                consider(column.clone(), &mut best);
                let Some(i) = (0..column.len()).find(|&i| column[i] < bounds[i].1) else { break };
                column[i] += 1;
                for k in 0..i {
                    column[k] = bounds[k].0;
                }
            }
        }
        // Coordinate search around the best column.
        let mut improved = true;
        while improved {
            improved = false;
            let Some((_, _, centre)) = best.clone() else { break };
            for i in 0..cells.len() {
                for up in [true, false] {
                    let mut column = centre.clone();
                    let (lo, hi) = bounds[i];
                    match up {
                        true if column[i] < hi => column[i] += 1,
                        false if column[i] > lo => column[i] -= 1,
                        _ => continue,
                    }
                    improved |= consider(column, &mut best);
                }
            }
        }
        let Some((_, _, column)) = best else { break };
        for (&(qi, s, j), &v) in cells.iter().zip(&column) {
            ctx.values[qi][s][c] = v;
            lp.lower[j] = v as f64;
            lp.upper[j] = v as f64;
        }
    }
    incumbent.map(|b| b.1)
}

fn threshold_round<'a>(prog: &'a MpcProgram, x: &[f64], theta: f64) -> Result<Ctx<'a>, MpcError> {
    let grid = &prog.grid;
    let width = grid.end + 2 - grid.start;
    let planned = grid.load_from_x(x);
    let values: Vec<Vec<Vec<u32>>> = grid
        .cells
        .iter()
        .map(|per_s| {
            per_s
                .iter()
                .map(|row| {
                    let mut out = vec![0u32; width];
                    if let Cell::Fixed(v) = row[0] {
                        out[0] = v;
                    }
                    out
                })
                .collect()
        })
        .collect();
    let mut ctx = Ctx { prog, values };

    for c in 1..width {
        let l = grid.start + c - 1;
        for (qi, spec) in grid.specs.specs().iter().enumerate() {
            for s in 1..spec.subclass_count {
                let value = match grid.cells[qi][s][c] {
                    Cell::Fixed(v) => {
                        let prev = ctx.values[qi][s][c - 1];
                        let room = if s > 1 { grid.initial[qi][s] + ctx.values[qi][s - 1][c - 1] } else { u32::MAX };
                        if v < prev || v > room {
                            return Err(MpcError::Rounding(format!(
                                "fixed cell ({}, {s}) at epoch {l} conflicts with earlier epochs",
                                qi + 1
                            )));
                        }
                        v
                    }
                    Cell::Var(j) => {
                        let (lo, hi) = ctx.interval(qi, s, c, j);
                        if lo > hi {
                            return Err(MpcError::Rounding(format!(
                                "cluster ({}, {s}) at epoch {l} has empty interval [{lo}, {hi}]",
                                qi + 1
                            )));
                        }
                        let raw = (x[j] + theta).floor().max(0.0) as u32;
                        raw.clamp(lo, hi)
                    }
                };
                ctx.values[qi][s][c] = value;
            }
        }
        fill_toward(&mut ctx, c, planned[c - 1], x);
    }
    Ok(ctx)
}

/// Single-activation moves at column `c` that bring the load closer to `goal`.
fn fill_toward(ctx: &mut Ctx<'_>, c: usize, goal: f64, x: &[f64]) {
    let grid = &ctx.prog.grid;
    let mut gap = goal - ctx.load(c);
    loop {
        let mut best: Option<(usize, usize, i64, f64, f64)> = None;
        for (qi, spec) in grid.specs.specs().iter().enumerate() {
            for s in 1..spec.subclass_count {
                let Cell::Var(j) = grid.cells[qi][s][c] else { continue };
                let g = spec.power(s);
                if g == 0.0 {
                    continue;
                }
                let (lo, hi) = ctx.interval(qi, s, c, j);
                let v = ctx.values[qi][s][c];
                let step: i64 = if gap > 0.0 { 1 } else { -1 };
                let allowed = if step > 0 { v < hi } else { v > lo };
                if !allowed {
                    continue;
                }
                let gain = gap.abs() - (gap - step as f64 * g).abs();
                if gain <= GAIN_TOL {
                    continue;
                }
                let residual = step as f64 * (x[j] - v as f64);
                let better = match best {
                    None => true,
                    Some((_, _, _, bg, br)) => gain > bg + GAIN_TOL || (gain > bg - GAIN_TOL && residual > br + 1e-12),
                };
                if better {
                    best = Some((qi, s, step, gain, residual));
                }
            }
        }
        let Some((qi, s, step, _, _)) = best else { break };
        let v = &mut ctx.values[qi][s][c];
        *v = (*v as i64 + step) as u32;
        gap -= step as f64 * grid.specs.specs()[qi].power(s);
    }
}

/// One unit change of `D_s^q` at column `c`.
#[derive(Clone, Copy)]
struct Move {
    qi: usize,
    s: usize,
    c: usize,
    step: i64,
}

impl Ctx<'_> {
    /// Every constraint that involves cell `(qi, s, c)` holds.
    fn cell_ok(&self, qi: usize, s: usize, c: usize, width: usize) -> bool {
        let grid = &self.prog.grid;
        let Cell::Var(j) = grid.cells[qi][s][c] else { return true };
        let lp = &self.prog.lp;
        let v = &self.values[qi];
        let x = v[s][c] as f64;
        if x < lp.lower[j] || x > lp.upper[j] || v[s][c] < v[s][c - 1] {
            return false;
        }
        if s > 1 && v[s][c] > grid.initial[qi][s] + v[s - 1][c - 1] {
            return false;
        }
        if c + 1 < width {
            if v[s][c] > v[s][c + 1] {
                return false;
            }
            if s + 1 < grid.specs.specs()[qi].subclass_count && v[s + 1][c + 1] > grid.initial[qi][s + 1] + v[s][c] {
                return false;
            }
        }
        true
    }

    /// Apply `moves` if they stay feasible and lower the cost; `loads` is
    /// kept in step with the values.
    fn try_apply(&mut self, moves: &[Move], loads: &mut [f64], width: usize) -> bool {
        let mut changed: Vec<(usize, f64)> = Vec::with_capacity(4);
        let mut bump = |c: usize, dl: f64| match changed.iter_mut().find(|e| e.0 == c) {
            Some(e) => e.1 += dl,
            None => changed.push((c, dl)),
        };
        for m in moves {
            let v = self.values[m.qi][m.s][m.c] as i64 + m.step;
            if v < 0 {
                return false;
            }
            let dl = m.step as f64 * self.prog.grid.specs.specs()[m.qi].power(m.s);
            bump(m.c, dl);
            if m.c + 1 < width {
                bump(m.c + 1, -dl);
            }
        }
        let delta: f64 = changed
            .iter()
            .map(|&(c, dl)| self.cost(c, loads[c] + dl) - self.cost(c, loads[c]))
            .sum();
        if delta >= -GAIN_TOL {
            return false;
        }
        for m in moves {
            let v = &mut self.values[m.qi][m.s][m.c];
            *v = (*v as i64 + m.step) as u32;
        }
        if moves.iter().all(|m| self.cell_ok(m.qi, m.s, m.c, width)) {
            for (c, dl) in changed {
                loads[c] += dl;
            }
            return true;
        }
        for m in moves {
            let v = &mut self.values[m.qi][m.s][m.c];
            *v = (*v as i64 - m.step) as u32;
        }
        false
    }
}

/// Local search on the weighted deviation cost. A move changes one cell by
/// one unit, which shifts a single activation by one epoch; pairs of moves
/// on neighbouring cells of the same class are tried too, so a vehicle can
/// shift two consecutive subtasks, or one subtask by two epochs.
fn polish(ctx: &mut Ctx<'_>, width: usize) {
    let grid = &ctx.prog.grid;
    let mut loads: Vec<f64> = (0..width).map(|c| if c == 0 { 0.0 } else { ctx.load(c) }).collect();
    let movable = |qi: usize, s: usize, c: usize| {
        c >= 1 && c < width && s >= 1 && matches!(grid.cells[qi][s][c], Cell::Var(_)) && grid.specs.specs()[qi].power(s) != 0.0
    };
    for _ in 0..MAX_SWEEPS {
        let mut improved = false;
        for c in 1..width {
            for (qi, spec) in grid.specs.specs().iter().enumerate() {
                let s_max = spec.subclass_count;
                for s in 1..s_max {
                    if !movable(qi, s, c) {
                        continue;
                    }
                    'steps: for step in [1i64, -1] {
                        let first = Move { qi, s, c, step };
                        if ctx.try_apply(&[first], &mut loads, width) {
                            improved = true;
                            break;
                        }
                        for s2 in s.saturating_sub(1).max(1)..=(s + 1).min(s_max - 1) {
                            for c2 in c - 1..=c + 1 {
                                if (s2, c2) == (s, c) || !movable(qi, s2, c2) {
                                    continue;
                                }
                                for step2 in [1i64, -1] {
                                    let second = Move { qi, s: s2, c: c2, step: step2 };
                                    if ctx.try_apply(&[first, second], &mut loads, width) {
                                        improved = true;
                                        break 'steps;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClusterSet, ClusterSpec, FleetEntry, FleetState};
    use crate::mpc::{build_program, forecast_dispatch, BulkPurchase, MpcConfig};
    use std::sync::Arc;

    fn program(target: f64) -> MpcProgram {
        let specs = Arc::new(
            ClusterSet::new(vec![
                ClusterSpec::new(1, "a", vec![1.0, 2.0, 1.0], 8, 5.0).unwrap(),
                ClusterSpec::new(2, "b", vec![3.0], 6, 5.0).unwrap(),
            ])
            .unwrap(),
        );
        let state = FleetState::new(specs, &[FleetEntry::new(1, 1, 3), FleetEntry::new(2, 1, 2)], 8).unwrap();
        let cfg = MpcConfig {
            horizon_end: 8,
            epochs_per_hour: 4,
            ..MpcConfig::default()
        };
        build_program(&state, &BulkPurchase::constant(target, 8, 4), &forecast_dispatch(0.0, 1, &cfg), &cfg).unwrap()
    }

    fn check_feasible(prog: &MpcProgram, plan: &Plan) {
        let x = prog.plan_to_x(plan);
        assert!(prog.lp.max_violation(&x) < 1e-9);
    }

    #[test]
    fn integral_points_pass_through() {
        let prog = program(2.0);
        let sol = crate::mpc::lp::solve_lp(&prog.lp, Default::default());
        let mut x = sol.x.clone();
        // Replace the LP point by an integral feasible one: the rounded plan.
        let plan = round_plan(&prog, &x, 1e-6).unwrap();
        x = prog.plan_to_x(&plan);
        let again = round_plan(&prog, &x, 1e-6).unwrap();
        assert_eq!(plan, again);
    }

    #[test]
    fn rounded_plans_are_feasible() {
        for target in [0.0, 0.7, 1.5, 2.5, 4.0, 9.0] {
            let prog = program(target);
            let sol = crate::mpc::lp::solve_lp(&prog.lp, Default::default());
            let plan = round_plan(&prog, &sol.x, 1e-6).unwrap();
            check_feasible(&prog, &plan);
            assert!(prog.plan_cost(&plan) >= sol.objective - 1e-9);
        }
    }

    #[test]
    fn dive_reaches_a_column_the_lp_point_does_not_suggest() {
        // The LP hits 6.5 kW at epoch 1 with 2.6 first subtasks; the best
        // integer column is two second subtasks (6 kW), far from that point.
        let specs = Arc::new(ClusterSet::new(vec![ClusterSpec::new(1, "a", vec![2.5, 3.0], 4, 60.0).unwrap()]).unwrap());
        let state = FleetState::new(specs, &[FleetEntry::new(1, 1, 3), FleetEntry::new(1, 2, 3)], 9).unwrap();
        let cfg = MpcConfig {
            horizon_end: 9,
            epochs_per_hour: 1,
            solver_mode: crate::mpc::SolverMode::Exact,
            ..MpcConfig::default()
        };
        let hourly = vec![6.5, 2.5, 4.25, 4.25, 1.75, 0.25, 6.0, 1.0, 5.25];
        let prog = build_program(&state, &BulkPurchase::from_hourly(hourly, 9, 1), &forecast_dispatch(0.0, 1, &cfg), &cfg).unwrap();
        let sol = crate::mpc::lp::solve_lp(&prog.lp, Default::default());
        let plain = round_plan(&prog, &sol.x, 1e-6).unwrap();
        let dived = dive(&prog, &sol.x, 1e-6, Default::default()).unwrap();
        check_feasible(&prog, &dived);
        let exact = crate::mpc::solve(&prog, crate::mpc::SolverMode::Exact, &cfg).unwrap();
        assert!(exact.proven_optimal);
        assert!(prog.plan_cost(&plain) > exact.objective);
        assert_eq!(prog.plan_cost(&dived), exact.objective);
        assert_eq!(dived.get(1, 2, 1), 2);
    }

    #[test]
    fn noisy_points_are_repaired() {
        let prog = program(1.5);
        let sol = crate::mpc::lp::solve_lp(&prog.lp, Default::default());
        let noisy: Vec<f64> = sol.x.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.4 } else { -0.4 }).collect();
        let plan = round_plan(&prog, &noisy, 1e-6).unwrap();
        check_feasible(&prog, &plan);
    }
}
