//! Dense two-phase primal simplex with bounded variables.
//!
//! Suited to the desk-scale programs used by the exact branch-and-bound and
//! the small-instance tests; large programs go to the interior-point backend.

use super::lp::{LinearProgram, LpSolution, LpStatus, Sense};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Free variable parked at zero.
    Zero,
}

struct Tableau {
    m: usize,
    cols: usize,
    /// Row-major `m x (cols + 1)`; the last column is `B^-1 b`.
    t: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
    status: Vec<Status>,
    basis: Vec<usize>,
    /// Columns that may not enter the basis.
    frozen: Vec<bool>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.cols + 1;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        let pivot_row: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * w..(i + 1) * w];
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
    }

    /// Recompute basic values from the nonbasic ones.
    fn refresh_basics(&mut self) {
        let w = self.cols + 1;
        for i in 0..self.m {
            let row = &self.t[i * w..(i + 1) * w];
            let mut v = row[self.cols];
            for j in 0..self.cols {
                if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                    v -= row[j] * self.x[j];
                }
            }
            let b = self.basis[i];
            self.x[b] = v;
        }
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for (j, dj) in d.iter_mut().enumerate() {
                *dj -= cb * self.at(i, j);
            }
        }
        d
    }

    /// Run primal simplex iterations for `cost`. Returns `Ok(())` at
    /// optimality.
    fn optimize(&mut self, cost: &[f64], max_iter: usize) -> Result<(), LpStatus> {
        let mut d = self.reduced_costs(cost);
        let mut degenerate = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate > DEGENERATE_LIMIT;
            // Entering column and direction.
            let mut enter: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..self.cols {
                if self.frozen[j] {
                    continue;
                }
                let dir = match self.status[j] {
                    Status::Basic => continue,
                    Status::AtLower if d[j] < -COST_TOL && self.upper[j] > self.lower[j] => 1.0,
                    Status::AtUpper if d[j] > COST_TOL && self.upper[j] > self.lower[j] => -1.0,
                    Status::Zero if d[j].abs() > COST_TOL => -d[j].signum(),
                    _ => continue,
                };
                if bland {
                    enter = Some((j, dir));
                    break;
                }
                if d[j].abs() > best {
                    best = d[j].abs();
                    enter = Some((j, dir));
                }
            }
            let Some((j, dir)) = enter else {
                return Ok(());
            };

            // Ratio test, starting from the entering variable's own range.
            let mut theta = self.upper[j] - self.lower[j];
            let mut leave: Option<usize> = None;
            for i in 0..self.m {
                let alpha = dir * self.at(i, j);
                let b = self.basis[i];
                let limit = if alpha > PIVOT_TOL {
                    (self.x[b] - self.lower[b]) / alpha
                } else if alpha < -PIVOT_TOL {
                    (self.upper[b] - self.x[b]) / -alpha
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let better = if limit < theta - 1e-12 {
                    true
                } else if let Some(l) = leave.filter(|_| limit <= theta + 1e-12) {
                    // Ties: Bland takes the lowest basic index, otherwise
                    // the largest pivot for stability.
                    if bland {
                        b < self.basis[l]
                    } else {
                        alpha.abs() > (dir * self.at(l, j)).abs()
                    }
                } else {
                    false
                };
                if better {
                    theta = limit;
                    leave = Some(i);
                }
            }
            if !theta.is_finite() {
                return Err(LpStatus::Unbounded);
            }
            degenerate = if theta <= 1e-12 { degenerate + 1 } else { 0 };

            // Move along the edge.
            for i in 0..self.m {
                let a = self.at(i, j);
                if a != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= dir * theta * a;
                }
            }
            self.x[j] += dir * theta;

            match leave {
                None => {
                    // Bound flip.
                    self.status[j] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                    self.x[j] = if dir > 0.0 { self.upper[j] } else { self.lower[j] };
                }
                Some(r) => {
                    let out = self.basis[r];
                    let alpha = dir * self.at(r, j);
                    let (st, val) = if alpha > 0.0 {
                        (Status::AtLower, self.lower[out])
                    } else {
                        (Status::AtUpper, self.upper[out])
                    };
                    self.status[out] = st;
                    self.x[out] = val;
                    let dj = d[j];
                    let piv = self.at(r, j);
                    // Update reduced costs with the pivot row before pivoting.
                    let w = self.cols + 1;
                    for (k, dk) in d.iter_mut().enumerate() {
                        let a = self.t[r * w + k];
                        if a != 0.0 {
                            *dk -= dj * a / piv;
                        }
                    }
                    self.pivot(r, j);
                    self.basis[r] = j;
                    self.status[j] = Status::Basic;
                }
            }
        }
        Err(LpStatus::Failed)
    }
}

fn failed(lp: &LinearProgram, status: LpStatus) -> LpSolution {
    LpSolution {
        status,
        x: vec![0.0; lp.num_vars()],
        objective: f64::NAN,
    }
}

pub fn solve(lp: &LinearProgram) -> LpSolution {
    let n = lp.num_vars();
    let m = lp.rows.len();
    for j in 0..n {
        if lp.lower[j] > lp.upper[j] + FEAS_TOL {
            return failed(lp, LpStatus::Infeasible);
        }
    }

    // Columns: structurals, one slack per row, one artificial per row.
    let cols = n + 2 * m;
    let w = cols + 1;
    let mut lower = Vec::with_capacity(cols);
    let mut upper = Vec::with_capacity(cols);
    lower.extend_from_slice(&lp.lower);
    upper.extend_from_slice(&lp.upper);
    for row in &lp.rows {
        let (lo, hi) = match row.sense {
            Sense::Le => (0.0, f64::INFINITY),
            Sense::Ge => (f64::NEG_INFINITY, 0.0),
            Sense::Eq => (0.0, 0.0),
        };
        lower.push(lo);
        upper.push(hi);
    }
    lower.extend(std::iter::repeat(0.0).take(m));
    upper.extend(std::iter::repeat(f64::INFINITY).take(m));

    let mut status = vec![Status::AtLower; cols];
    let mut x = vec![0.0; cols];
    for j in 0..n + m {
        if lower[j].is_finite() {
            status[j] = Status::AtLower;
            x[j] = lower[j];
        } else if upper[j].is_finite() {
            status[j] = Status::AtUpper;
            x[j] = upper[j];
        } else {
            status[j] = Status::Zero;
        }
    }

    let mut t = vec![0.0; m * w];
    let mut basis = vec![0; m];
    let mut frozen = vec![false; cols];
    let mut phase1_cost = vec![0.0; cols];
    for (i, row) in lp.rows.iter().enumerate() {
        let mut activity = 0.0;
        for &(j, a) in &row.terms {
            t[i * w + j] += a;
            activity += a * x[j];
        }
        let slack = n + i;
        let art = n + m + i;
        t[i * w + slack] = 1.0;
        let r = row.rhs - activity;
        if r >= lower[slack] - FEAS_TOL && r <= upper[slack] + FEAS_TOL {
            // The slack absorbs the residual; no artificial needed.
            basis[i] = slack;
            status[slack] = Status::Basic;
            x[slack] = r;
            t[i * w + cols] = row.rhs;
            frozen[art] = true;
            upper[art] = 0.0;
        } else {
            // The slack sits at the bound nearest to the residual.
            let sv = if r < lower[slack] { lower[slack] } else { upper[slack] };
            status[slack] = if sv == lower[slack] { Status::AtLower } else { Status::AtUpper };
            x[slack] = sv;
            let sigma = if r - sv >= 0.0 { 1.0 } else { -1.0 };
            // Scale the row so the artificial has a unit coefficient.
            for j in 0..cols {
                t[i * w + j] *= sigma;
            }
            t[i * w + art] = 1.0;
            t[i * w + cols] = sigma * row.rhs;
            basis[i] = art;
            status[art] = Status::Basic;
            x[art] = (r - sv).abs();
            phase1_cost[art] = 1.0;
        }
    }

    let mut tab = Tableau {
        m,
        cols,
        t,
        lower,
        upper,
        x,
        status,
        basis,
        frozen,
    };
    let max_iter = 50 * (cols + m) + 1000;

    if phase1_cost.iter().any(|&c| c > 0.0) {
        if let Err(st) = tab.optimize(&phase1_cost, max_iter) {
            return failed(lp, if st == LpStatus::Unbounded { LpStatus::Failed } else { st });
        }
        tab.refresh_basics();
        let infeas: f64 = (n + m..cols).map(|j| tab.x[j]).sum();
        if infeas > FEAS_TOL * (1.0 + m as f64) {
            return failed(lp, LpStatus::Infeasible);
        }
    }
    for j in n + m..cols {
        tab.frozen[j] = true;
        tab.upper[j] = 0.0;
        if tab.status[j] != Status::Basic {
            tab.x[j] = 0.0;
        }
    }

    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.objective);
    if let Err(st) = tab.optimize(&cost, max_iter) {
        return failed(lp, st);
    }
    tab.refresh_basics();

    let mut xs: Vec<f64> = tab.x[..n].to_vec();
    for (j, v) in xs.iter_mut().enumerate() {
        // Snap tiny drift back inside the box.
        *v = v.clamp(lp.lower[j], lp.upper[j]);
    }
    LpSolution {
        status: LpStatus::Optimal,
        objective: lp.evaluate(&xs),
        x: xs,
    }
}
