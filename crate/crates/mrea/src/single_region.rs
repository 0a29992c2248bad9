//! Single-market arbitrage benchmarks: epigraph LP, MILP with mode
//! binaries, the noDis heuristic, and backward-induction DP.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::battery::{soc_propagate, BatteryParams, SocTrajectory};
use crate::market::PriceSeries;
use crate::metrics;
use crate::solver::{self, LinearProgram, Relation, SolveOptions, SolveStatus};
use crate::{MreaError, Result};

#[derive(Debug, Clone)]
pub struct SingleRegionInstance {
    pub params: BatteryParams,
    pub prices: PriceSeries,
}

impl SingleRegionInstance {
    pub fn new(params: BatteryParams, prices: PriceSeries) -> Result<Self> {
        params.validate()?;
        prices.validate()?;
        Ok(SingleRegionInstance { params, prices })
    }

    pub fn n(&self) -> usize {
        self.prices.len()
    }
}

/// A solved schedule. `objective_reported` is the solver's own objective in
/// revenue convention (-min cost); `revenue_true` re-prices the dispatch
/// with the exact piecewise cost and physical efficiencies, which is what
/// actually lands in the account. The two differ for the LP under negative
/// prices and whenever a pseudo efficiency is active.
#[derive(Debug, Clone)]
pub struct Dispatch {
    pub x: Vec<f64>,
    pub soc: SocTrajectory,
    pub objective_reported: f64,
    pub revenue_true: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingleModel {
    Lp,
    Milp,
    NoDis,
}

/// DP grid steps in MWh. The action step must be an integer multiple of the
/// state step so every reachable state lands on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub d_a: f64,
    pub d_s: f64,
}

impl DpConfig {
    /// Default resolution: 90 state steps across the usable band (0.01 MWh
    /// at reference scale).
    pub fn for_params(params: &BatteryParams) -> DpConfig {
        let d = params.usable_capacity() / 90.0;
        DpConfig { d_a: d, d_s: d }
    }

    pub fn halved(&self) -> DpConfig {
        DpConfig {
            d_a: self.d_a / 2.0,
            d_s: self.d_s / 2.0,
        }
    }
}

/// Finite floor for epigraph variables: strictly below any segment value a
/// feasible dispatch can produce, so negative prices cannot create an
/// unbounded ray.
pub(crate) fn epigraph_floor(params: &BatteryParams, prices: &[&[f64]]) -> f64 {
    let (eta_ch, eta_dis) = params.compose_efficiencies();
    let rb = params.ramp_bounds();
    let xcap = rb.x_max.abs().max(rb.x_min.abs());
    let pmax = prices
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |a, &p| a.max(p.abs()));
    -(xcap * pmax * (1.0 / eta_ch).max(eta_dis)) - 1.0
}

/// Build the LP/MILP/noDis problem. Layout: x_0..x_{n-1}, t_0..t_{n-1},
/// then z_0..z_{n-1} for the MILP.
pub fn build_single(inst: &SingleRegionInstance, model: SingleModel) -> LinearProgram {
    let params = &inst.params;
    let n = inst.n();
    let (eta_ch, eta_dis) = params.compose_efficiencies();
    let rb = params.ramp_bounds();
    let p_buy = &inst.prices.p_buy;
    let p_sell = &inst.prices.p_sell;
    let t_lb = epigraph_floor(params, &[p_buy, p_sell]);

    let mut lp = LinearProgram::new();
    for i in 0..n {
        let lower = match model {
            SingleModel::NoDis if p_buy[i] >= 0.0 => 0.0,
            _ => rb.x_min,
        };
        lp.add_variable(format!("x_{i}"), lower, rb.x_max);
    }
    for i in 0..n {
        let t = lp.add_variable(format!("t_{i}"), t_lb, f64::INFINITY);
        lp.set_objective(t, 1.0);
    }
    if model == SingleModel::Milp {
        for i in 0..n {
            lp.add_binary(format!("z_{i}"));
        }
    }

    for i in 0..n {
        let t = n + i;
        lp.add_constraint(
            format!("seg_buy_{i}"),
            vec![(i, p_buy[i] / eta_ch), (t, -1.0)],
            Relation::Le,
            0.0,
        );
        lp.add_constraint(
            format!("seg_sell_{i}"),
            vec![(i, p_sell[i] * eta_dis), (t, -1.0)],
            Relation::Le,
            0.0,
        );
    }
    for i in 0..n {
        let prefix: Vec<(usize, f64)> = (0..=i).map(|j| (j, 1.0)).collect();
        lp.add_constraint(
            format!("cap_hi_{i}"),
            prefix.clone(),
            Relation::Le,
            params.b_max - params.b0,
        );
        lp.add_constraint(
            format!("cap_lo_{i}"),
            prefix,
            Relation::Ge,
            params.b_min - params.b0,
        );
    }
    if model == SingleModel::Milp {
        // x_i in [(1-z_i) x_min, z_i x_max]: z = 1 selects the charge side.
        for i in 0..n {
            let z = 2 * n + i;
            lp.add_constraint(
                format!("mode_hi_{i}"),
                vec![(i, 1.0), (z, -rb.x_max)],
                Relation::Le,
                0.0,
            );
            lp.add_constraint(
                format!("mode_lo_{i}"),
                vec![(i, 1.0), (z, rb.x_min)],
                Relation::Ge,
                rb.x_min,
            );
        }
    }
    lp
}

/// Project raw solver values onto the exactly feasible dispatch set; the
/// correction is bounded by the solver's feasibility tolerance and keeps
/// SOC propagation clean.
pub(crate) fn sanitize_dispatch(params: &BatteryParams, raw: &[f64]) -> Vec<f64> {
    let rb = params.ramp_bounds();
    let mut b = params.b0;
    let mut out = Vec::with_capacity(raw.len());
    for &xi in raw {
        let lo = rb.x_min.max(params.b_min - b);
        let hi = rb.x_max.min(params.b_max - b);
        let v = crate::metrics::scrub_zero(xi.clamp(lo, hi));
        b += v;
        out.push(v);
    }
    out
}

fn finish(
    inst: &SingleRegionInstance,
    raw_x: &[f64],
    objective: f64,
    wall_time: f64,
) -> Result<Dispatch> {
    let x = sanitize_dispatch(&inst.params, raw_x);
    let soc = soc_propagate(&inst.params, &x)?;
    let revenue_true =
        metrics::true_revenue(&inst.params, &inst.prices.p_buy, &inst.prices.p_sell, &x)?;
    Ok(Dispatch {
        x,
        soc,
        objective_reported: -objective,
        revenue_true,
        wall_time,
    })
}

fn solve_variant(
    inst: &SingleRegionInstance,
    model: SingleModel,
    options: &SolveOptions,
) -> Result<Dispatch> {
    let lp = build_single(inst, model);
    let result = solver::solve(&lp, options);
    if result.status != SolveStatus::Optimal {
        return Err(MreaError::SolverFailure {
            status: result.status,
        });
    }
    let values = result.primal_values.as_ref().unwrap();
    finish(inst, &values[..inst.n()], result.objective_value, result.wall_time)
}

pub fn solve_lp(inst: &SingleRegionInstance, options: &SolveOptions) -> Result<Dispatch> {
    solve_variant(inst, SingleModel::Lp, options)
}

pub fn solve_milp(inst: &SingleRegionInstance, options: &SolveOptions) -> Result<Dispatch> {
    solve_variant(inst, SingleModel::Milp, options)
}

pub fn solve_nodis(inst: &SingleRegionInstance, options: &SolveOptions) -> Result<Dispatch> {
    solve_variant(inst, SingleModel::NoDis, options)
}

fn grid_points(lo: f64, hi: f64, step: f64, what: &str) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(MreaError::Grid(format!("{what} step must be positive, got {step}")));
    }
    let span = hi - lo;
    let ratio = span / step;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
        return Err(MreaError::Grid(format!(
            "{what} grid [{lo}, {hi}] does not include both endpoints at step {step}"
        )));
    }
    let k = k as usize;
    let mut pts: Vec<f64> = (0..=k).map(|j| lo + step * j as f64).collect();
    pts[k] = hi;
    Ok(pts)
}

fn interp(values: &[f64], lo: f64, step: f64, b: f64) -> f64 {
    let t = ((b - lo) / step).clamp(0.0, (values.len() - 1) as f64);
    let i0 = (t.floor() as usize).min(values.len() - 2);
    let w = t - i0 as f64;
    values[i0] * (1.0 - w) + values[i0 + 1] * w
}

/// (cost, x) comparison with the tie-breaks: cheapest first, then the
/// smallest move, then charging over discharging.
fn better(cand: (f64, f64), best: (f64, f64)) -> bool {
    if cand.0 < best.0 - 1e-12 {
        return true;
    }
    if cand.0 > best.0 + 1e-12 {
        return false;
    }
    let (ca, ba) = (cand.1.abs(), best.1.abs());
    if ca < ba - 1e-15 {
        return true;
    }
    if (ca - ba).abs() <= 1e-15 {
        return cand.1 > best.1;
    }
    false
}

/// Backward induction with terminal value zero, linear interpolation on the
/// state grid, and a greedy forward rollout from (snapped) b0.
pub fn solve_dp(inst: &SingleRegionInstance, cfg: &DpConfig) -> Result<Dispatch> {
    let start = Instant::now();
    let params = &inst.params;
    let n = inst.n();
    let rb = params.ramp_bounds();
    let (eta_ch, eta_dis) = params.compose_efficiencies();

    let ratio = cfg.d_a / cfg.d_s;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio < 1.0 - 1e-9 {
        return Err(MreaError::Grid(format!(
            "action step {} is not an integer multiple of state step {}",
            cfg.d_a, cfg.d_s
        )));
    }
    let states = grid_points(params.b_min, params.b_max, cfg.d_s, "state")?;
    let actions = grid_points(rb.x_min, rb.x_max, cfg.d_a, "action")?;

    let p_buy = &inst.prices.p_buy;
    let p_sell = &inst.prices.p_sell;
    let cost = |i: usize, x: f64| -> f64 {
        if x > 0.0 {
            p_buy[i] * x / eta_ch
        } else if x < 0.0 {
            p_sell[i] * eta_dis * x
        } else {
            0.0
        }
    };

    let ns = states.len();
    let mut tables = vec![vec![0.0f64; ns]; n + 1];
    for i in (0..n).rev() {
        let (head, tail) = tables.split_at_mut(i + 1);
        let v_cur = &mut head[i];
        let v_next = &tail[0];
        for (si, &b) in states.iter().enumerate() {
            let mut best = (f64::INFINITY, 0.0f64);
            for &a in &actions {
                let x = a.clamp(params.b_min - b, params.b_max - b);
                let c = cost(i, x) + interp(v_next, params.b_min, cfg.d_s, b + x);
                if better((c, x), best) {
                    best = (c, x);
                }
            }
            v_cur[si] = best.0;
        }
    }

    // Snap b0 to the nearest state node.
    let k = (((params.b0 - params.b_min) / cfg.d_s).round() as usize).min(ns - 1);
    let b0 = states[k];
    let offset = params.b0 - b0;
    if offset.abs() > params.soc_tolerance() {
        log::debug!("b0 {} snapped to grid state {} (offset {:.3e})", params.b0, b0, offset);
    }
    let mut snapped = params.clone();
    snapped.b0 = b0;

    let mut x_out = Vec::with_capacity(n);
    let mut total_cost = 0.0;
    let mut b = b0;
    for i in 0..n {
        let mut best = (f64::INFINITY, 0.0f64);
        for &a in &actions {
            let x = a.clamp(params.b_min - b, params.b_max - b);
            let c = cost(i, x) + interp(&tables[i + 1], params.b_min, cfg.d_s, b + x);
            if better((c, x), best) {
                best = (c, x);
            }
        }
        total_cost += cost(i, best.1);
        b += best.1;
        x_out.push(best.1);
    }

    let soc = soc_propagate(&snapped, &x_out)?;
    let revenue_true = metrics::true_revenue(params, p_buy, p_sell, &x_out)?;
    Ok(Dispatch {
        x: x_out,
        soc,
        objective_reported: -total_cost,
        revenue_true,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Refine the DP grid by successive halving until the reported revenue
/// moves by less than `tol` between levels.
pub fn solve_dp_converged(inst: &SingleRegionInstance, tol: f64) -> Result<Dispatch> {
    const MAX_LEVELS: usize = 7;
    let mut cfg = DpConfig::for_params(&inst.params);
    let mut current = solve_dp(inst, &cfg)?;
    for _ in 0..MAX_LEVELS {
        cfg = cfg.halved();
        let refined = solve_dp(inst, &cfg)?;
        let change = (refined.objective_reported - current.objective_reported).abs();
        current = refined;
        if change < tol {
            return Ok(current);
        }
    }
    log::warn!("DP grid refinement stopped at step {} without meeting tol {tol}", cfg.d_s);
    Ok(current)
}
