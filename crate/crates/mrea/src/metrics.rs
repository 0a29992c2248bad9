//! Performance indices: exact piecewise revenue, equivalent full cycles,
//! revenue per cycle, and the cross-market conflict certificate.

use serde::{Deserialize, Serialize};

use crate::battery::{BatteryParams, SocTrajectory};
use crate::{MreaError, Result};

/// Cycle counting method. Both weight depth linearly against usable
/// capacity, so totals agree; rainflow is kept as an independent
/// cross-check and as the extension point for nonlinear depth weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleMethod {
    #[default]
    EquivalentFullCycles,
    Rainflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceIndices {
    pub revenue: f64,
    pub cycles: f64,
    /// None when the battery never moved.
    pub revenue_per_cycle: Option<f64>,
    pub m_ind: f64,
    pub wall_time: f64,
}

pub fn indices(revenue: f64, cycles: f64, m_ind: f64, wall_time: f64) -> PerformanceIndices {
    let revenue_per_cycle = if cycles > 0.0 {
        Some(revenue / cycles)
    } else {
        None
    };
    PerformanceIndices {
        revenue: scrub_zero(revenue),
        cycles: scrub_zero(cycles),
        revenue_per_cycle,
        m_ind: scrub_zero(m_ind),
        wall_time,
    }
}

/// Solver output carries negative zeros that would leak into reports.
pub(crate) fn scrub_zero(v: f64) -> f64 {
    if v == 0.0 { 0.0 } else { v }
}

/// Exact piecewise trading cost of one interval at the given prices,
/// physical efficiencies only (the pseudo term never touches money).
pub fn interval_cost(params: &BatteryParams, p_buy: f64, p_sell: f64, x: f64) -> f64 {
    let (eta_ch, eta_dis) = params.physical_efficiencies();
    if x > 0.0 {
        p_buy * x / eta_ch
    } else if x < 0.0 {
        p_sell * eta_dis * x
    } else {
        0.0
    }
}

/// Revenue of a dispatch against one market: R = -sum of interval costs.
/// The solver objective can differ (epigraph distortion under negative
/// prices); this is the number money is counted in.
pub fn true_revenue(
    params: &BatteryParams,
    p_buy: &[f64],
    p_sell: &[f64],
    x: &[f64],
) -> Result<f64> {
    if p_buy.len() != x.len() || p_sell.len() != x.len() {
        return Err(MreaError::LengthMismatch(format!(
            "dispatch length {} vs prices {}/{}",
            x.len(),
            p_buy.len(),
            p_sell.len()
        )));
    }
    let cost: f64 = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| interval_cost(params, p_buy[i], p_sell[i], xi))
        .sum();
    Ok(-cost)
}

/// Equivalent 100% depth-of-discharge cycles of a SOC trajectory.
pub fn count_cycles(soc: &SocTrajectory, params: &BatteryParams, method: CycleMethod) -> f64 {
    let usable = params.usable_capacity();
    if usable <= 0.0 || soc.b.len() < 2 {
        return 0.0;
    }
    match method {
        CycleMethod::EquivalentFullCycles => soc.throughput() / (2.0 * usable),
        CycleMethod::Rainflow => rainflow(&soc.b, usable),
    }
}

/// Conflict certificate: max over intervals and remote markets of the
/// product of home and remote dispatch. Near zero whenever at most one
/// market moves per interval; a binding interconnector cap can make it
/// legitimately positive (coordinated same-direction trades).
pub fn conflict_metric(x_home: &[f64], x_remotes: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for xr in x_remotes {
        for (&a, &b) in x_home.iter().zip(xr) {
            worst = worst.max(a * b);
        }
    }
    scrub_zero(worst)
}

fn turning_points(b: &[f64]) -> Vec<f64> {
    let mut tp = Vec::with_capacity(b.len());
    for &v in b {
        if tp.last() == Some(&v) {
            continue;
        }
        while tp.len() >= 2 {
            let n = tp.len();
            let monotone = (tp[n - 1] - tp[n - 2]) * (v - tp[n - 1]) >= 0.0;
            if monotone {
                tp.pop();
            } else {
                break;
            }
        }
        tp.push(v);
    }
    tp
}

/// Four-point rainflow extraction; full cycles weigh range/usable and the
/// residue counts as half cycles, which matches the throughput formula
/// under linear depth weighting.
fn rainflow(b: &[f64], usable: f64) -> f64 {
    let tp = turning_points(b);
    let mut stack: Vec<f64> = Vec::new();
    let mut total = 0.0;
    for &p in &tp {
        stack.push(p);
        while stack.len() >= 4 {
            let n = stack.len();
            let r1 = (stack[n - 3] - stack[n - 4]).abs();
            let r2 = (stack[n - 2] - stack[n - 3]).abs();
            let r3 = (stack[n - 1] - stack[n - 2]).abs();
            if r2 <= r1 && r2 <= r3 {
                total += r2 / usable;
                stack.remove(n - 3);
                stack.remove(n - 3);
            } else {
                break;
            }
        }
    }
    for w in stack.windows(2) {
        total += 0.5 * (w[1] - w[0]).abs() / usable;
    }
    total
}
