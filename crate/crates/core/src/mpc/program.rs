//! Look-ahead integer program over cumulative activations `D_s^q(l)`.
//!
//! Each cell `(q, s, l)` is either a decision variable or fixed, when its
//! lower bound (minimum activation, monotonicity) meets its upper bound
//! (reachability from the initial populations). Only constraints touching at
//! least two variables become rows; the rest are folded into bounds.

use std::sync::Arc;

use super::lp::{LinearProgram, Sense};
use super::{BulkPurchase, DispatchForecast, MpcConfig, MpcError};
use crate::model::{ClusterSet, FleetState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Fixed(u32),
    Var(usize),
}

/// Variable part of the program shared by the look-ahead and initial
/// purchase programs.
#[derive(Debug, Clone)]
pub struct ActivationGrid {
    pub specs: Arc<ClusterSet>,
    /// First decided epoch; column 0 of every cell row is epoch `start - 1`.
    pub start: usize,
    pub end: usize,
    /// `cells[q-1][s][l - start + 1]` for `s = 0..=S`.
    pub cells: Vec<Vec<Vec<Cell>>>,
    pub initial: Vec<Vec<u32>>,
    /// Load per epoch: constant plus `(var, coefficient)` terms.
    pub load_const: Vec<f64>,
    pub load_terms: Vec<Vec<(usize, f64)>>,
}

impl ActivationGrid {
    /// Build cells, bounds and structural rows for epochs `start..=end`
    /// from a state at epoch `start - 1`.
    pub fn build(state: &FleetState, end: usize, lp: &mut LinearProgram) -> Result<Self, MpcError> {
        let specs = state.specs_arc().clone();
        let start = state.epoch + 1;
        let width = end + 2 - start;
        let m = state.min_activation();
        let mut cells = Vec::with_capacity(specs.len());
        let mut initial = Vec::with_capacity(specs.len());
        let mut load_const = vec![0.0; width];
        let mut load_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); width];

        for spec in specs.specs() {
            let q = spec.class_index;
            let s_max = spec.subclass_count;
            let n0: Vec<u32> = (0..=s_max).map(|s| state.initial_population(q, s)).collect();
            let mut below = vec![0u32; s_max + 1];
            for s in 1..=s_max {
                below[s] = below[s - 1] + n0[s];
            }
            let mut grid = vec![vec![Cell::Fixed(0); width]; s_max + 1];
            let mut lb = vec![vec![0u32; width]; s_max + 1];
            let mut ub = vec![vec![0u32; width]; s_max + 1];
            for s in 1..s_max {
                let d = state.cumulative(q, s);
                grid[s][0] = Cell::Fixed(d);
                lb[s][0] = d;
                ub[s][0] = d;
            }
            for c in 1..width {
                let l = start + c - 1;
                for s in 1..s_max {
                    let lo = m.get(q, s, l).max(lb[s][c - 1]);
                    let reach = if s == 1 { n0[1] } else { n0[s] + ub[s - 1][c - 1] };
                    let hi = reach.min(below[s]).max(ub[s][c - 1]);
                    if lo > hi {
                        return Err(MpcError::InfeasibleProgram(format!(
                            "cluster ({q}, {s}) at epoch {l}: minimum {lo} exceeds reachable {hi}"
                        )));
                    }
                    lb[s][c] = lo;
                    ub[s][c] = hi;
                    grid[s][c] = if lo == hi {
                        Cell::Fixed(lo)
                    } else {
                        Cell::Var(lp.add_var(format!("D_{q}_{s}_{l}"), 0.0, lo as f64, hi as f64, true))
                    };
                }
            }
            for c in 1..width {
                for s in 1..s_max {
                    // Monotone: D_s(l) - D_s(l-1) >= 0.
                    add_folded(lp, &[(grid[s][c], 1.0), (grid[s][c - 1], -1.0)], Sense::Ge, 0.0);
                    // Population: D_s(l) - D_{s-1}(l-1) <= n_s(0).
                    if s > 1 {
                        add_folded(lp, &[(grid[s][c], 1.0), (grid[s - 1][c - 1], -1.0)], Sense::Le, n0[s] as f64);
                    }
                    let g = spec.power(s);
                    if g == 0.0 {
                        continue;
                    }
                    for (cell, sign) in [(grid[s][c], 1.0), (grid[s][c - 1], -1.0)] {
                        match cell {
                            Cell::Fixed(v) => load_const[c] += sign * g * v as f64,
                            Cell::Var(j) => load_terms[c].push((j, sign * g)),
                        }
                    }
                }
            }
            cells.push(grid);
            initial.push(n0);
        }
        Ok(Self {
            specs,
            start,
            end,
            cells,
            initial,
            load_const,
            load_terms,
        })
    }

    pub fn epochs(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn cell(&self, q: usize, s: usize, l: usize) -> Cell {
        self.cells[q - 1][s][l + 1 - self.start]
    }

    /// `D_s^q(l)` under an LP point (fractional for relaxed solutions).
    pub fn value(&self, x: &[f64], q: usize, s: usize, l: usize) -> f64 {
        match self.cell(q, s, l) {
            Cell::Fixed(v) => v as f64,
            Cell::Var(j) => x[j],
        }
    }

    /// Planned load for epochs `start..=end` under an LP point.
    pub fn load_from_x(&self, x: &[f64]) -> Vec<f64> {
        (1..self.load_const.len())
            .map(|c| self.load_const[c] + self.load_terms[c].iter().map(|(j, a)| a * x[*j]).sum::<f64>())
            .collect()
    }
}

/// Add a row after substituting fixed cells. Rows left with a single
/// variable become bound updates; empty rows are dropped.
fn add_folded(lp: &mut LinearProgram, terms: &[(Cell, f64)], sense: Sense, rhs: f64) {
    let mut rhs = rhs;
    let mut vars = Vec::with_capacity(terms.len());
    for &(cell, a) in terms {
        match cell {
            Cell::Fixed(v) => rhs -= a * v as f64,
            Cell::Var(j) => vars.push((j, a)),
        }
    }
    match vars.len() {
        0 => debug_assert!(
            match sense {
                Sense::Le => rhs >= -1e-9,
                Sense::Ge => rhs <= 1e-9,
                Sense::Eq => rhs.abs() <= 1e-9,
            },
            "fixed cells violate a structural row"
        ),
        1 => {
            let (j, a) = vars[0];
            let bound = rhs / a;
            let tighten_upper = (sense == Sense::Le) == (a > 0.0);
            if tighten_upper {
                lp.upper[j] = lp.upper[j].min(bound.floor());
            } else {
                lp.lower[j] = lp.lower[j].max(bound.ceil());
            }
        }
        _ => lp.add_row(vars, sense, rhs),
    }
}

/// An integer schedule `D_s^q(l)` for `l = start-1..=end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub start: usize,
    pub end: usize,
    /// `values[q-1][s][l - start + 1]`.
    pub values: Vec<Vec<Vec<u32>>>,
}

impl Plan {
    pub fn get(&self, q: usize, s: usize, l: usize) -> u32 {
        self.values[q - 1][s][l + 1 - self.start]
    }

    pub fn load(&self, specs: &ClusterSet, l: usize) -> f64 {
        let c = l + 1 - self.start;
        let mut load = 0.0;
        for (spec, per_s) in specs.specs().iter().zip(&self.values) {
            for s in 1..spec.subclass_count {
                let d = per_s[s][c] as i64 - per_s[s][c - 1] as i64;
                load += d as f64 * spec.power(s);
            }
        }
        load
    }

    pub fn loads(&self, specs: &ClusterSet) -> Vec<f64> {
        (self.start..=self.end).map(|l| self.load(specs, l)).collect()
    }

    /// The part of this plan that `program` still covers, extended past the
    /// old end by the smallest values its bounds allow. `None` when the
    /// result does not fit the program, e.g. after a different decision was
    /// committed.
    pub fn carry_over(&self, program: &MpcProgram) -> Option<Plan> {
        let grid = &program.grid;
        if grid.start < self.start || grid.start > self.end + 1 {
            return None;
        }
        let width = grid.end + 2 - grid.start;
        let mut values = Vec::with_capacity(grid.cells.len());
        for (qi, per_s) in grid.cells.iter().enumerate() {
            let mut rows = Vec::with_capacity(per_s.len());
            for (s, row) in per_s.iter().enumerate() {
                let mut out = Vec::with_capacity(width);
                for (c, cell) in row.iter().enumerate() {
                    let l = grid.start + c - 1;
                    let v = match cell {
                        Cell::Fixed(v) => *v,
                        Cell::Var(_) if l <= self.end => self.get(qi + 1, s, l),
                        Cell::Var(j) => (program.lp.lower[*j].max(0.0) as u32).max(out[c - 1]),
                    };
                    out.push(v);
                }
                rows.push(out);
            }
            values.push(rows);
        }
        let plan = Plan {
            start: grid.start,
            end: grid.end,
            values,
        };
        // Fixed cells must agree with the old plan where both exist.
        for (qi, per_s) in grid.cells.iter().enumerate() {
            for (s, row) in per_s.iter().enumerate() {
                for (c, cell) in row.iter().enumerate() {
                    let l = grid.start + c - 1;
                    if matches!(cell, Cell::Fixed(_)) && l + 1 >= self.start && l <= self.end && plan.values[qi][s][c] != self.get(qi + 1, s, l) {
                        return None;
                    }
                }
            }
        }
        (program.lp.max_violation(&program.plan_to_x(&plan)) < 1e-9).then_some(plan)
    }
}

/// The look-ahead program solved at one epoch.
#[derive(Debug, Clone)]
pub struct MpcProgram {
    pub lp: LinearProgram,
    pub grid: ActivationGrid,
    /// Current hour `k`; epochs up to `k * epochs_per_hour` carry the penalty weight.
    pub hour: usize,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
    /// `(e_plus, e_minus)` per epoch.
    pub deviation_vars: Vec<(usize, usize)>,
}

impl MpcProgram {
    pub fn start(&self) -> usize {
        self.grid.start
    }

    pub fn end(&self) -> usize {
        self.grid.end
    }

    /// Weighted absolute deviation of a plan's loads from the targets.
    pub fn plan_cost(&self, plan: &Plan) -> f64 {
        plan.loads(&self.grid.specs)
            .iter()
            .zip(self.targets.iter().zip(&self.weights))
            .map(|(l, (p, w))| w * (l - p).abs())
            .sum()
    }

    /// LP point matching an integer plan, with deviation parts set to their
    /// optimal split.
    pub fn plan_to_x(&self, plan: &Plan) -> Vec<f64> {
        let mut x = vec![0.0; self.lp.num_vars()];
        for (qi, per_s) in self.grid.cells.iter().enumerate() {
            for (s, row) in per_s.iter().enumerate() {
                for (c, cell) in row.iter().enumerate() {
                    if let Cell::Var(j) = cell {
                        x[*j] = plan.values[qi][s][c] as f64;
                    }
                }
            }
        }
        for (i, l) in plan.loads(&self.grid.specs).into_iter().enumerate() {
            let (ep, em) = self.deviation_vars[i];
            let dev = l - self.targets[i];
            x[ep] = dev.max(0.0);
            x[em] = (-dev).max(0.0);
        }
        x
    }

    /// Integer plan read off an LP point whose D variables are integral.
    pub fn plan_from_integral_x(&self, x: &[f64]) -> Plan {
        let values = self
            .grid
            .cells
            .iter()
            .map(|per_s| {
                per_s
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|cell| match cell {
                                Cell::Fixed(v) => *v,
                                Cell::Var(j) => x[*j].round().max(0.0) as u32,
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Plan {
            start: self.grid.start,
            end: self.grid.end,
            values,
        }
    }
}

/// Last epoch covered by the look-ahead at epoch `t`.
pub fn horizon_end(t: usize, cfg: &MpcConfig) -> usize {
    let delta = cfg.epochs_per_hour;
    let k = (t - 1) / delta + 1;
    let mut end = match cfg.lookahead_hours {
        None => cfg.horizon_end,
        Some(h) => (k + h) * delta,
    };
    if t == k * delta {
        // The purchase update at the end of hour k needs hour k + 2.
        end = end.max((k + 2) * delta);
    }
    end.min(cfg.horizon_end).max(t)
}

/// Build the penalty-plus-market program for epoch `state.epoch + 1`.
pub fn build_program(
    state: &FleetState,
    bulk: &BulkPurchase,
    forecast: &DispatchForecast,
    cfg: &MpcConfig,
) -> Result<MpcProgram, MpcError> {
    let t = state.epoch + 1;
    if t > cfg.horizon_end {
        return Err(MpcError::PastHorizon {
            epoch: t,
            horizon: cfg.horizon_end,
        });
    }
    let end = horizon_end(t, cfg);
    let mut lp = LinearProgram::default();
    let grid = ActivationGrid::build(state, end, &mut lp)?;
    let hour = (t - 1) / cfg.epochs_per_hour + 1;
    let hour_end = hour * cfg.epochs_per_hour;

    let mut targets = Vec::new();
    let mut weights = Vec::new();
    let mut deviation_vars = Vec::new();
    for (i, l) in grid.epochs().enumerate() {
        let (target, w) = if l <= hour_end {
            (bulk.at(l) + forecast.at(l), cfg.penalty_weight)
        } else {
            (bulk.at(l), 1.0)
        };
        let ep = lp.add_var(format!("ep_{l}"), w, 0.0, f64::INFINITY, false);
        let em = lp.add_var(format!("em_{l}"), w, 0.0, f64::INFINITY, false);
        let mut terms = grid.load_terms[i + 1].clone();
        terms.push((ep, -1.0));
        terms.push((em, 1.0));
        lp.add_row(terms, Sense::Eq, target - grid.load_const[i + 1]);
        targets.push(target);
        weights.push(w);
        deviation_vars.push((ep, em));
    }
    Ok(MpcProgram {
        lp,
        grid,
        hour,
        targets,
        weights,
        deviation_vars,
    })
}
