//! Depth-first branch-and-bound over the integer-marked variables.

use super::lp::{solve_lp, LinearProgram, LpBackend, LpStatus};

const INT_TOL: f64 = 1e-6;
/// Nodes whose bound is within this of the incumbent are pruned.
const PRUNE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BnbOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    /// The search finished within the node budget.
    pub proven_optimal: bool,
    pub nodes: usize,
    pub root_bound: f64,
}

struct Node {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Most fractional integer variable, lowest index on ties.
fn branching_var(lp: &LinearProgram, x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &v) in x.iter().enumerate() {
        if !lp.integer[j] {
            continue;
        }
        let frac = v - v.floor();
        let dist = frac.min(1.0 - frac);
        if dist > INT_TOL && best.map_or(true, |(_, d)| dist > d + 1e-12) {
            best = Some((j, dist));
        }
    }
    best.map(|(j, _)| j)
}

/// Minimize `lp` with integrality on marked variables. A known feasible
/// point may be supplied to seed pruning.
pub fn branch_and_bound(
    lp: &LinearProgram,
    backend: LpBackend,
    node_budget: usize,
    incumbent: Option<(Vec<f64>, f64)>,
) -> Result<BnbOutcome, LpStatus> {
    let mut work = lp.clone();
    let mut best = incumbent;
    let mut stack = vec![Node {
        lower: lp.lower.clone(),
        upper: lp.upper.clone(),
    }];
    let mut nodes = 0usize;
    let mut root_bound = f64::NAN;
    let mut complete = true;

    while let Some(node) = stack.pop() {
        if nodes >= node_budget {
            complete = false;
            break;
        }
        nodes += 1;
        work.lower = node.lower;
        work.upper = node.upper;
        let sol = solve_lp(&work, backend);
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                if nodes == 1 && best.is_none() {
                    return Err(LpStatus::Infeasible);
                }
                continue;
            }
            other => return Err(other),
        }
        if nodes == 1 {
            root_bound = sol.objective;
        }
        if let Some((_, inc)) = &best {
            if sol.objective >= inc - PRUNE_TOL {
                continue;
            }
        }
        match branching_var(&work, &sol.x) {
            None => {
                let mut x = sol.x;
                for (j, v) in x.iter_mut().enumerate() {
                    if lp.integer[j] {
                        *v = v.round();
                    }
                }
                let obj = lp.evaluate(&x);
                best = Some((x, obj));
            }
            Some(j) => {
                let v = sol.x[j];
                let mut down_upper = work.upper.clone();
                down_upper[j] = v.floor();
                let mut up_lower = work.lower.clone();
                up_lower[j] = v.ceil();
                let down = Node {
                    lower: work.lower.clone(),
                    upper: down_upper,
                };
                let up = Node {
                    lower: up_lower,
                    upper: work.upper.clone(),
                };
                // The child nearer the LP value is explored first.
                if v - v.floor() < 0.5 {
                    stack.push(up);
                    stack.push(down);
                } else {
                    stack.push(down);
                    stack.push(up);
                }
            }
        }
    }

    let (x, objective) = best.ok_or(LpStatus::Infeasible)?;
    Ok(BnbOutcome {
        x,
        objective,
        proven_optimal: complete,
        nodes,
        root_bound,
    })
}
