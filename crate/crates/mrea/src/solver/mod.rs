//! LP/MILP solver abstraction. Formulations build a [`LinearProgram`];
//! [`solve`] dispatches to the configured backend. The built-in fallback
//! (bounded-variable simplex plus branch-and-bound over binaries) keeps the
//! crate fully self-contained; the `highs` feature binds the HiGHS engine
//! for production-size runs.

mod branch_bound;
#[cfg(feature = "highs")]
mod highs_backend;
mod simplex;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Constraint sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    /// Sparse row as (variable index, coefficient) pairs.
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Minimization problem over bounded variables; only mode binaries carry the
/// integer flag, so their bounds stay within {0, 1}.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub variables: Vec<Variable>,
    /// Sparse objective as (variable index, coefficient) pairs.
    pub objective: Vec<(usize, f64)>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            integer: false,
        });
        self.variables.len() - 1
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lower: 0.0,
            upper: 1.0,
            integer: true,
        });
        self.variables.len() - 1
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective.push((var, coeff));
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn num_integers(&self) -> usize {
        self.variables.iter().filter(|v| v.integer).count()
    }

    /// Structural well-formedness; returns a description of the first defect.
    pub fn validate(&self) -> Result<(), String> {
        for (i, v) in self.variables.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(format!("variable {i} ({}) has bounds [{}, {}]", v.name, v.lower, v.upper));
            }
            if v.integer && !(v.lower >= 0.0 && v.upper <= 1.0) {
                return Err(format!(
                    "integer variable {i} ({}) must have bounds within [0, 1]",
                    v.name
                ));
            }
        }
        let check_refs = |coeffs: &[(usize, f64)], what: &str| {
            for &(j, c) in coeffs {
                if j >= self.variables.len() {
                    return Err(format!("{what} references undeclared variable {j}"));
                }
                if !c.is_finite() {
                    return Err(format!("{what} has non-finite coefficient on variable {j}"));
                }
            }
            Ok(())
        };
        check_refs(&self.objective, "objective")?;
        for (i, row) in self.constraints.iter().enumerate() {
            check_refs(&row.coeffs, &format!("constraint {i} ({})", row.name))?;
            if !row.rhs.is_finite() {
                return Err(format!("constraint {i} ({}) has non-finite rhs", row.name));
            }
        }
        Ok(())
    }

    /// Dense objective vector.
    pub(crate) fn objective_dense(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.variables.len()];
        for &(j, v) in &self.objective {
            c[j] += v;
        }
        c
    }

    pub(crate) fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * x[j]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    TimeLimit,
    NumericalFailure,
}

/// Backend outcome. `primal_values` (indexed by variable) are present
/// exactly when the status is Optimal; `objective_value` is NaN otherwise.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective_value: f64,
    pub primal_values: Option<Vec<f64>>,
    pub wall_time: f64,
}

impl SolveResult {
    fn failed(status: SolveStatus) -> Self {
        SolveResult {
            status,
            objective_value: f64::NAN,
            primal_values: None,
            wall_time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    /// HiGHS when compiled in, the built-in simplex otherwise.
    #[default]
    Auto,
    /// Built-in two-phase simplex with branch-and-bound.
    Simplex,
    #[cfg(feature = "highs")]
    Highs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Seconds per solve call.
    pub time_limit: f64,
    /// Relative MILP optimality gap.
    pub mip_gap: f64,
    pub feasibility_tol: f64,
    pub backend: BackendChoice,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            time_limit: 60.0,
            mip_gap: 1e-8,
            feasibility_tol: 1e-7,
            backend: BackendChoice::Auto,
        }
    }
}

/// Solve a built problem. Never panics on solver trouble: failures come back
/// as a status. Identical problems and options yield identical results.
pub fn solve(lp: &LinearProgram, options: &SolveOptions) -> SolveResult {
    let start = Instant::now();
    if let Err(msg) = lp.validate() {
        log::error!("malformed problem: {msg}");
        return SolveResult {
            wall_time: start.elapsed().as_secs_f64(),
            ..SolveResult::failed(SolveStatus::NumericalFailure)
        };
    }
    let mut result = match options.backend {
        #[cfg(feature = "highs")]
        BackendChoice::Auto | BackendChoice::Highs => highs_backend::solve(lp, options),
        #[cfg(not(feature = "highs"))]
        BackendChoice::Auto => solve_fallback(lp, options),
        BackendChoice::Simplex => solve_fallback(lp, options),
    };
    result.wall_time = start.elapsed().as_secs_f64();
    if let (SolveStatus::Optimal, Some(x)) = (result.status, result.primal_values.as_ref()) {
        debug_assert!(
            check_feasible(lp, x, 10.0 * options.feasibility_tol.max(1e-9)),
            "backend returned an infeasible point"
        );
    }
    result
}

fn solve_fallback(lp: &LinearProgram, options: &SolveOptions) -> SolveResult {
    if lp.num_integers() == 0 {
        simplex::solve_lp(lp, options)
    } else {
        branch_bound::solve_milp(lp, options)
    }
}

fn check_feasible(lp: &LinearProgram, x: &[f64], tol: f64) -> bool {
    for (v, &xi) in lp.variables.iter().zip(x) {
        if xi < v.lower - tol || xi > v.upper + tol {
            return false;
        }
    }
    for row in &lp.constraints {
        let lhs: f64 = row.coeffs.iter().map(|&(j, c)| c * x[j]).sum();
        let scale = 1.0 + row.rhs.abs();
        let ok = match row.relation {
            Relation::Le => lhs <= row.rhs + tol * scale,
            Relation::Ge => lhs >= row.rhs - tol * scale,
            Relation::Eq => (lhs - row.rhs).abs() <= tol * scale,
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Write the problem in LP text format for offline inspection.
pub fn export_lp<W: Write>(lp: &LinearProgram, mut out: W) -> std::io::Result<()> {
    writeln!(out, "Minimize")?;
    write!(out, " obj:")?;
    let c = lp.objective_dense();
    let mut first = true;
    for (j, &cj) in c.iter().enumerate() {
        if cj == 0.0 {
            continue;
        }
        write_term(&mut out, cj, &lp.variables[j].name, first)?;
        first = false;
    }
    writeln!(out)?;
    writeln!(out, "Subject To")?;
    for row in &lp.constraints {
        write!(out, " {}:", row.name)?;
        let mut dense = std::collections::BTreeMap::new();
        for &(j, v) in &row.coeffs {
            *dense.entry(j).or_insert(0.0) += v;
        }
        let mut first = true;
        for (&j, &v) in &dense {
            if v == 0.0 {
                continue;
            }
            write_term(&mut out, v, &lp.variables[j].name, first)?;
            first = false;
        }
        if first {
            write!(out, " 0 {}", lp.variables.first().map(|v| v.name.as_str()).unwrap_or("x"))?;
        }
        let rel = match row.relation {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        };
        writeln!(out, " {} {}", rel, fmt_num(row.rhs))?;
    }
    writeln!(out, "Bounds")?;
    for v in &lp.variables {
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (true, true) if v.lower == v.upper => writeln!(out, " {} = {}", v.name, fmt_num(v.lower))?,
            (true, true) => writeln!(out, " {} <= {} <= {}", fmt_num(v.lower), v.name, fmt_num(v.upper))?,
            (true, false) => writeln!(out, " {} >= {}", v.name, fmt_num(v.lower))?,
            (false, true) => writeln!(out, " -inf <= {} <= {}", v.name, fmt_num(v.upper))?,
            (false, false) => writeln!(out, " {} free", v.name)?,
        }
    }
    let binaries: Vec<&str> = lp
        .variables
        .iter()
        .filter(|v| v.integer)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        writeln!(out, "Binaries")?;
        writeln!(out, " {}", binaries.join(" "))?;
    }
    writeln!(out, "End")?;
    Ok(())
}

pub fn export_lp_to_path(lp: &LinearProgram, path: &std::path::Path) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    export_lp(lp, std::io::BufWriter::new(file))
}

fn write_term<W: Write>(out: &mut W, coeff: f64, name: &str, first: bool) -> std::io::Result<()> {
    if first {
        if coeff < 0.0 {
            write!(out, " - {} {}", fmt_num(-coeff), name)
        } else {
            write!(out, " {} {}", fmt_num(coeff), name)
        }
    } else if coeff < 0.0 {
        write!(out, " - {} {}", fmt_num(-coeff), name)
    } else {
        write!(out, " + {} {}", fmt_num(coeff), name)
    }
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
