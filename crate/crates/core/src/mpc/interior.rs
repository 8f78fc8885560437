//! Interior-point backend for large programs, delegating to `clarabel`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT, ZeroConeT,
};

use super::lp::{LinearProgram, LpSolution, LpStatus, Sense};

type Variant = fn(&mut DefaultSettingsBuilder<f64>);

/// Settings tried in order until one run converges. Degenerate programs
/// occasionally stall near the optimum with the defaults.
const VARIANTS: [Variant; 3] = [
    |_| {},
    |b| {
        b.static_regularization_constant(1e-7);
    },
    |b| {
        b.equilibrate_enable(false);
    },
];

pub fn solve(lp: &LinearProgram) -> LpSolution {
    let n = lp.num_vars();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut b = Vec::new();

    // Equality block first, then the `A x <= b` block.
    let mut r = 0;
    for row in lp.rows.iter().filter(|row| row.sense == Sense::Eq) {
        for &(j, a) in &row.terms {
            cols[j].push((r, a));
        }
        b.push(row.rhs);
        r += 1;
    }
    for j in 0..n {
        if lp.lower[j] == lp.upper[j] {
            cols[j].push((r, 1.0));
            b.push(lp.lower[j]);
            r += 1;
        }
    }
    let n_eq = r;
    for row in lp.rows.iter().filter(|row| row.sense != Sense::Eq) {
        let sign = if row.sense == Sense::Le { 1.0 } else { -1.0 };
        for &(j, a) in &row.terms {
            cols[j].push((r, sign * a));
        }
        b.push(sign * row.rhs);
        r += 1;
    }
    for j in 0..n {
        if lp.lower[j] == lp.upper[j] {
            continue;
        }
        if lp.lower[j].is_finite() {
            cols[j].push((r, -1.0));
            b.push(-lp.lower[j]);
            r += 1;
        }
        if lp.upper[j].is_finite() {
            cols[j].push((r, 1.0));
            b.push(lp.upper[j]);
            r += 1;
        }
    }
    let m = r;

    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &mut cols {
        col.sort_by_key(|e| e.0);
        for &(i, v) in col.iter() {
            rowval.push(i);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    let a = CscMatrix::new(m, n, colptr, rowval, nzval);
    let p = CscMatrix::<f64>::zeros((n, n));
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }
    if m > n_eq {
        cones.push(NonnegativeConeT(m - n_eq));
    }

    let mut last = None;
    for (attempt, variant) in VARIANTS.iter().enumerate() {
        let mut builder = DefaultSettingsBuilder::default();
        builder.verbose(false).max_iter(200);
        variant(&mut builder);
        let settings = builder.build().expect("static solver settings are valid");
        let Ok(mut solver) = DefaultSolver::new(&p, &lp.objective, &a, &b, &cones, settings) else {
            break;
        };
        solver.solve();
        let status = match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => LpStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => LpStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => LpStatus::Unbounded,
            other => {
                log::warn!(
                    "interior point stopped with {other:?} after {} iterations (settings {attempt})",
                    solver.solution.iterations
                );
                LpStatus::Failed
            }
        };
        last = Some((status, solver.solution.x));
        if status != LpStatus::Failed {
            break;
        }
    }
    let Some((status, raw)) = last else {
        return LpSolution {
            status: LpStatus::Failed,
            x: vec![0.0; n],
            objective: f64::NAN,
        };
    };
    let x: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(j, v)| v.clamp(lp.lower[j], lp.upper[j]))
        .collect();
    LpSolution {
        status,
        objective: lp.evaluate(&x),
        x,
    }
}
