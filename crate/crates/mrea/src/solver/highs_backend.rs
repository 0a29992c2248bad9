//! HiGHS bindings. One fresh model per call with internal threading off, so
//! concurrent callers (Monte Carlo workers) stay independent and repeatable.

use highs::{HighsModelStatus, RowProblem, Sense};

use super::{LinearProgram, Relation, SolveOptions, SolveResult, SolveStatus};

pub(crate) fn solve(lp: &LinearProgram, options: &SolveOptions) -> SolveResult {
    if lp.variables.is_empty() {
        let feasible = lp.constraints.iter().all(|row| match row.relation {
            Relation::Le => 0.0 <= row.rhs,
            Relation::Ge => 0.0 >= row.rhs,
            Relation::Eq => row.rhs == 0.0,
        });
        return if feasible {
            SolveResult {
                status: SolveStatus::Optimal,
                objective_value: 0.0,
                primal_values: Some(Vec::new()),
                wall_time: 0.0,
            }
        } else {
            SolveResult::failed(SolveStatus::Infeasible)
        };
    }

    let c = lp.objective_dense();
    let mut pb = RowProblem::default();
    let mut cols = Vec::with_capacity(lp.variables.len());
    for (j, v) in lp.variables.iter().enumerate() {
        let col = if v.integer {
            pb.add_integer_column(c[j], v.lower..=v.upper)
        } else {
            pb.add_column(c[j], v.lower..=v.upper)
        };
        cols.push(col);
    }
    let mut dense: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for row in &lp.constraints {
        dense.clear();
        for &(j, v) in &row.coeffs {
            *dense.entry(j).or_insert(0.0) += v;
        }
        let factors: Vec<(highs::Col, f64)> =
            dense.iter().map(|(&j, &v)| (cols[j], v)).collect();
        match row.relation {
            Relation::Le => pb.add_row(..=row.rhs, factors),
            Relation::Ge => pb.add_row(row.rhs.., factors),
            Relation::Eq => pb.add_row(row.rhs..=row.rhs, factors),
        };
    }

    let mut model = pb.optimise(Sense::Minimise);
    model.make_quiet();
    model.set_option("time_limit", options.time_limit);
    model.set_option("mip_rel_gap", options.mip_gap);
    model.set_option("primal_feasibility_tolerance", options.feasibility_tol.max(1e-10));
    model.set_option("threads", 1);
    model.set_option("random_seed", 0);
    // Sub-MIP primal heuristics (restarts, RENS, RINS and friends) cost far
    // more than the full exact tree on problems this size: disabling them
    // cuts a daily two-market solve from ~0.6 s to ~0.06 s.
    model.set_option("mip_allow_restart", false);
    model.set_option("mip_heuristic_effort", 0.0);
    model.set_option("mip_heuristic_run_rens", false);
    model.set_option("mip_heuristic_run_rins", false);
    model.set_option("mip_heuristic_run_root_reduced_cost", false);
    model.set_option("mip_heuristic_run_zi_round", false);
    model.set_option("mip_heuristic_run_shifting", false);
    model.set_option("mip_heuristic_run_feasibility_jump", false);

    let solved = model.solve();
    let status = match solved.status() {
        HighsModelStatus::Optimal => SolveStatus::Optimal,
        HighsModelStatus::Infeasible => SolveStatus::Infeasible,
        HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => {
            SolveStatus::Unbounded
        }
        HighsModelStatus::ReachedTimeLimit => SolveStatus::TimeLimit,
        other => {
            log::warn!("solver returned status {other:?}");
            SolveStatus::NumericalFailure
        }
    };
    if status != SolveStatus::Optimal {
        return SolveResult::failed(status);
    }

    let solution = solved.get_solution();
    let mut x = solution.columns().to_vec();
    for (xj, v) in x.iter_mut().zip(&lp.variables) {
        if v.integer && (*xj - xj.round()).abs() < 1e-5 {
            *xj = xj.round();
        }
        if v.lower.is_finite() {
            *xj = xj.max(v.lower);
        }
        if v.upper.is_finite() {
            *xj = xj.min(v.upper);
        }
    }
    let objective_value = lp.objective_value(&x);
    SolveResult {
        status: SolveStatus::Optimal,
        objective_value,
        primal_values: Some(x),
        wall_time: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{LinearProgram, Relation, SolveOptions, SolveStatus};

    #[test]
    fn lp_and_milp_agree_with_known_optima() {
        let o = SolveOptions::default();
        // LP: min -x - 2y s.t. x + y <= 1.5, x,y in [0, 1] => x = 0.5, y = 1
        let mut lp = LinearProgram::new();
        let x = lp.add_variable("x", 0.0, 1.0);
        let y = lp.add_variable("y", 0.0, 1.0);
        lp.set_objective(x, -1.0);
        lp.set_objective(y, -2.0);
        lp.add_constraint("c", vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.5);
        let r = super::solve(&lp, &o);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective_value + 2.5).abs() < 1e-8);

        // Same with y binary: y = 1, x = 0.5 still integral-feasible.
        let mut milp = LinearProgram::new();
        let x = milp.add_variable("x", 0.0, 1.0);
        let y = milp.add_binary("y");
        milp.set_objective(x, -1.0);
        milp.set_objective(y, -2.0);
        milp.add_constraint("c", vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.5);
        let r = super::solve(&milp, &o);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective_value + 2.5).abs() < 1e-8);
        let xs = r.primal_values.unwrap();
        assert_eq!(xs[y], 1.0);
    }

    #[test]
    fn duplicate_row_entries_are_summed() {
        let o = SolveOptions::default();
        // x + x <= 1 means x <= 0.5
        let mut lp = LinearProgram::new();
        let x = lp.add_variable("x", 0.0, 1.0);
        lp.set_objective(x, -1.0);
        lp.add_constraint("c", vec![(x, 1.0), (x, 1.0)], Relation::Le, 1.0);
        let r = super::solve(&lp, &o);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective_value + 0.5).abs() < 1e-8);
    }

    #[test]
    fn empty_problem() {
        let lp = LinearProgram::new();
        let r = super::solve(&lp, &SolveOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_eq!(r.objective_value, 0.0);
    }
}
