//! Generic sparse linear program with variable bounds and integrality marks.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub integer: Vec<bool>,
    pub names: Vec<String>,
    pub rows: Vec<Row>,
    /// Constant added to the objective value.
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The backend stopped early (iteration limit or numerical trouble).
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64, integer: bool) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.integer.push(integer);
        self.names.push(name.into());
        self.objective.len() - 1
    }

    /// Repeated variables are merged and zero coefficients dropped.
    pub fn add_row(&mut self, mut terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (j, a) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        self.rows.push(Row { terms: merged, sense, rhs });
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.offset + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, v) in x.iter().enumerate() {
            worst = worst.max(self.lower[i] - v).max(v - self.upper[i]);
        }
        for row in &self.rows {
            let lhs: f64 = row.terms.iter().map(|(j, a)| a * x[*j]).sum();
            let gap = match row.sense {
                Sense::Le => lhs - row.rhs,
                Sense::Ge => row.rhs - lhs,
                Sense::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }

    /// Text dump in CPLEX LP format.
    pub fn to_lp_format(&self) -> String {
        let name = |j: usize| -> String {
            if self.names[j].is_empty() {
                format!("x{j}")
            } else {
                self.names[j].clone()
            }
        };
        let expr = |terms: &mut dyn Iterator<Item = (usize, f64)>| -> String {
            let mut out = String::new();
            for (j, a) in terms {
                if a == 0.0 {
                    continue;
                }
                let sign = if a < 0.0 { "-" } else { "+" };
                let _ = write!(out, " {sign} {} {}", a.abs(), name(j));
            }
            if out.is_empty() {
                out.push_str(" 0");
            }
            out
        };
        let mut out = String::new();
        let _ = writeln!(out, "\\ objective offset {}", self.offset);
        out.push_str("Minimize\n obj:");
        out.push_str(&expr(&mut self.objective.iter().copied().enumerate()));
        out.push_str("\nSubject To\n");
        for (i, row) in self.rows.iter().enumerate() {
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " r{i}:{} {op} {}", expr(&mut row.terms.iter().copied()), row.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.num_vars() {
            let lo = if self.lower[j].is_finite() { self.lower[j].to_string() } else { "-inf".into() };
            let hi = if self.upper[j].is_finite() { self.upper[j].to_string() } else { "+inf".into() };
            let _ = writeln!(out, " {lo} <= {} <= {hi}", name(j));
        }
        let ints: Vec<String> = (0..self.num_vars()).filter(|&j| self.integer[j]).map(name).collect();
        if !ints.is_empty() {
            out.push_str("General\n");
            for chunk in ints.chunks(8) {
                let _ = writeln!(out, " {}", chunk.join(" "));
            }
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LpBackend {
    /// Dense simplex for small programs, interior point otherwise.
    #[default]
    Auto,
    Simplex,
    InteriorPoint,
}

/// Programs at or below this many variables go to the dense simplex.
pub const AUTO_SIMPLEX_MAX_VARS: usize = 600;

pub fn solve_lp(lp: &LinearProgram, backend: LpBackend) -> LpSolution {
    let use_simplex = match backend {
        LpBackend::Simplex => true,
        LpBackend::InteriorPoint => false,
        LpBackend::Auto => lp.num_vars() <= AUTO_SIMPLEX_MAX_VARS && lp.rows.len() <= AUTO_SIMPLEX_MAX_VARS,
    };
    if use_simplex {
        super::simplex::solve(lp)
    } else {
        super::interior::solve(lp)
    }
}
