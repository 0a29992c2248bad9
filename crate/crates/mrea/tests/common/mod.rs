//! Shared fixtures for the integration suites: reference battery, price
//! series construction, and independent lattice-enumeration oracles the
//! solvers are checked against.

#![allow(dead_code)]

use chrono::{DateTime, TimeZone, Utc};
use mrea::battery::BatteryParams;
use mrea::market::{InterconnectorSpec, PriceSeries};
use mrea::multi_region::MreaInstance;
use mrea::solver::SolveOptions;

pub const GRID: f64 = 0.1;

pub fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 6, 30, 0, 0, 0).unwrap()
}

pub fn battery() -> BatteryParams {
    BatteryParams::default()
}

pub fn series(id: &str, prices: &[f64]) -> PriceSeries {
    PriceSeries::synthetic(id, start(), prices.to_vec())
}

pub fn opts() -> SolveOptions {
    SolveOptions::default()
}

pub fn pair_instance(
    params: BatteryParams,
    home: &[f64],
    remote: &[f64],
    eta_line: f64,
    rent: f64,
) -> MreaInstance {
    let n = remote.len();
    let ic = InterconnectorSpec::new(100.0, eta_line, vec![rent; n], vec![0.0; n]).unwrap();
    MreaInstance::new(params, series("home", home), vec![(series("far", remote), ic)]).unwrap()
}

/// Linearized (epigraph) cost of one trade, the quantity the LP/MILP
/// objectives optimize.
pub fn epi_cost(params: &BatteryParams, p_buy: f64, p_sell: f64, x: f64) -> f64 {
    let (eta_ch, eta_dis) = params.compose_efficiencies();
    (p_buy * x / eta_ch).max(p_sell * eta_dis * x)
}

fn lattice(lo: f64, hi: f64, g: f64) -> Vec<f64> {
    let k0 = (lo / g).round() as i64;
    let k1 = (hi / g).round() as i64;
    (k0..=k1).map(|k| k as f64 * g).collect()
}

/// Exhaustive optimum of the single-market epigraph objective over the
/// action lattice. Valid as an exact oracle because every vertex of the
/// feasible polytope lies on the lattice when all bounds are multiples of
/// the grid.
pub fn single_oracle(params: &BatteryParams, p_buy: &[f64], p_sell: &[f64], g: f64) -> f64 {
    let n = p_buy.len();
    let rb = params.ramp_bounds();
    let actions = lattice(rb.x_min, rb.x_max, g);
    let nstates = ((params.b_max - params.b_min) / g).round() as usize + 1;
    let soc = |s: usize| params.b_min + s as f64 * g;
    // value[s] = best revenue from interval i onward starting at soc(s).
    let mut value = vec![0.0f64; nstates];
    for i in (0..n).rev() {
        let mut next = vec![f64::NEG_INFINITY; nstates];
        for (s, slot) in next.iter_mut().enumerate() {
            let b = soc(s);
            for &x in &actions {
                let nb = b + x;
                if nb < params.b_min - 1e-9 || nb > params.b_max + 1e-9 {
                    continue;
                }
                let ns = ((nb - params.b_min) / g).round() as usize;
                let v = -epi_cost(params, p_buy[i], p_sell[i], x) + value[ns];
                if v > *slot {
                    *slot = v;
                }
            }
        }
        value = next;
    }
    let s0 = ((params.b0 - params.b_min) / g).round() as usize;
    value[s0]
}

/// Exhaustive optimum of the two-market model over the joint lattice:
/// shared mode (no opposite signs in one interval), aggregate ramp box,
/// SOC window, epigraph costs at the already-effective remote prices.
pub fn joint_oracle(
    params: &BatteryParams,
    home: (&[f64], &[f64]),
    remote_eff: (&[f64], &[f64]),
    g: f64,
) -> f64 {
    let n = home.0.len();
    let rb = params.ramp_bounds();
    let actions = lattice(rb.x_min, rb.x_max, g);
    let nstates = ((params.b_max - params.b_min) / g).round() as usize + 1;
    let soc = |s: usize| params.b_min + s as f64 * g;
    let mut value = vec![0.0f64; nstates];
    for i in (0..n).rev() {
        let mut next = vec![f64::NEG_INFINITY; nstates];
        for (s, slot) in next.iter_mut().enumerate() {
            let b = soc(s);
            for &xh in &actions {
                for &xr in &actions {
                    // One shared mode: no charging one market while
                    // discharging the other.
                    if xh * xr < -1e-12 {
                        continue;
                    }
                    let agg = xh + xr;
                    if agg < rb.x_min - 1e-9 || agg > rb.x_max + 1e-9 {
                        continue;
                    }
                    let nb = b + agg;
                    if nb < params.b_min - 1e-9 || nb > params.b_max + 1e-9 {
                        continue;
                    }
                    let ns = ((nb - params.b_min) / g).round() as usize;
                    let v = -epi_cost(params, home.0[i], home.1[i], xh)
                        - epi_cost(params, remote_eff.0[i], remote_eff.1[i], xr)
                        + value[ns];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
        value = next;
    }
    let s0 = ((params.b0 - params.b_min) / g).round() as usize;
    value[s0]
}

/// Worst per-interval objective slope; one lattice step is worth at most
/// this much revenue.
pub fn one_step_value(params: &BatteryParams, price_rows: &[(&[f64], &[f64])], g: f64) -> f64 {
    let (eta_ch, eta_dis) = params.compose_efficiencies();
    let mut slope = 0.0f64;
    for (pb, ps) in price_rows {
        for (&b, &s) in pb.iter().zip(ps.iter()) {
            slope = slope.max((b / eta_ch).abs()).max((s * eta_dis).abs());
        }
    }
    slope * g + 1e-6
}
