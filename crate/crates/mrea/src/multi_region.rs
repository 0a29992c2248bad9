//! One battery trading in its home market and, over interconnectors, in
//! remote ones. Per-market epigraph segments price each leg at its own
//! effective prices; a single binary per interval puts every market on the
//! same side of charge/discharge, which is what keeps simultaneous
//! cross-border charging and discharging out of the optimum.

use crate::battery::{soc_propagate, BatteryParams, RampBounds, SocTrajectory};
use crate::market::{
    adjusted_envelope, effective_prices, EffectivePrices, InterconnectorSpec, PriceSeries,
};
use crate::metrics;
use crate::single_region::{epigraph_floor, sanitize_dispatch};
use crate::solver::{self, LinearProgram, Relation, SolveOptions, SolveStatus};
use crate::{MreaError, Result};

#[derive(Debug, Clone)]
pub struct MreaInstance {
    pub params: BatteryParams,
    /// Battery-side market; its prices apply without adjustment.
    pub home_prices: PriceSeries,
    /// One (prices, interconnector) pair per remote market. Remote series
    /// may run longer than the home series; only the first `n` intervals
    /// enter the problem.
    pub remote_markets: Vec<(PriceSeries, InterconnectorSpec)>,
}

impl MreaInstance {
    pub fn new(
        params: BatteryParams,
        home_prices: PriceSeries,
        remote_markets: Vec<(PriceSeries, InterconnectorSpec)>,
    ) -> Result<Self> {
        params.validate()?;
        home_prices.validate()?;
        if remote_markets.is_empty() {
            return Err(MreaError::InvalidParams(
                "multi-region instance needs at least one remote market".into(),
            ));
        }
        let n = home_prices.len();
        for (prices, ic) in &remote_markets {
            prices.validate()?;
            ic.validate()?;
            if prices.len() < n {
                return Err(MreaError::LengthMismatch(format!(
                    "remote market {} has {} intervals, home has {}",
                    prices.market_id,
                    prices.len(),
                    n
                )));
            }
            if ic.rent.len() != prices.len() || ic.flow.len() != prices.len() {
                return Err(MreaError::LengthMismatch(format!(
                    "market {}: {} prices vs {} rent / {} flow entries",
                    prices.market_id,
                    prices.len(),
                    ic.rent.len(),
                    ic.flow.len()
                )));
            }
        }
        Ok(MreaInstance {
            params,
            home_prices,
            remote_markets,
        })
    }

    pub fn n(&self) -> usize {
        self.home_prices.len()
    }

    fn effective(&self) -> Result<Vec<EffectivePrices>> {
        self.remote_markets
            .iter()
            .map(|(prices, ic)| effective_prices(prices, ic))
            .collect()
    }
}

/// A solved multi-market schedule. Conventions match `Dispatch`: the
/// reported objective is the solver's, `revenue_true` re-prices every leg
/// with exact piecewise costs and physical efficiencies. `m_ind` is the
/// largest simultaneous home/remote same-direction trade found.
#[derive(Debug, Clone)]
pub struct MreaSolution {
    pub x_home: Vec<f64>,
    pub x_remote: Vec<Vec<f64>>,
    pub z_ch: Vec<f64>,
    pub z_dis: Vec<f64>,
    pub t_home: Vec<f64>,
    pub t_remote: Vec<Vec<f64>>,
    pub soc: SocTrajectory,
    pub objective_reported: f64,
    pub revenue_true: f64,
    pub m_ind: f64,
    pub wall_time: f64,
}

/// Column layout: x blocks per market (home first), then t blocks per
/// scenario in the same market order, then one z per interval. A plain
/// solve is the one-scenario case.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub n: usize,
    pub markets: usize,
    pub scenarios: usize,
}

impl Layout {
    pub fn x(&self, m: usize, i: usize) -> usize {
        m * self.n + i
    }
    pub fn t(&self, s: usize, m: usize, i: usize) -> usize {
        (self.markets + s * self.markets + m) * self.n + i
    }
    pub fn z(&self, i: usize) -> usize {
        (1 + self.scenarios) * self.markets * self.n + i
    }
}

fn name(prefix: &str, m: usize, i: usize) -> String {
    if m == 0 {
        format!("{prefix}_h_{i}")
    } else {
        format!("{prefix}_r{}_{i}", m - 1)
    }
}

/// One market's prices as the solver sees them: home prices verbatim,
/// remote prices adjusted for rent and line losses.
#[derive(Debug, Clone)]
pub(crate) struct MarketPrices {
    pub buy: Vec<f64>,
    pub sell: Vec<f64>,
}

/// Effective per-market price views of an instance, home first, truncated
/// to the instance horizon.
pub(crate) fn market_views(inst: &MreaInstance) -> Result<Vec<MarketPrices>> {
    let n = inst.n();
    let mut views = vec![MarketPrices {
        buy: inst.home_prices.p_buy[..n].to_vec(),
        sell: inst.home_prices.p_sell[..n].to_vec(),
    }];
    for e in inst.effective()? {
        views.push(MarketPrices {
            buy: e.p_buy_eff[..n].to_vec(),
            sell: e.p_sell_eff[..n].to_vec(),
        });
    }
    Ok(views)
}

/// Per-market per-interval dispatch bounds, home first.
pub(crate) fn envelope_bounds(inst: &MreaInstance, use_flow_envelopes: bool) -> Vec<Vec<RampBounds>> {
    let rb = inst.params.ramp_bounds();
    let n = inst.n();
    let mut bounds: Vec<Vec<RampBounds>> = vec![vec![rb; n]];
    for (prices, ic) in &inst.remote_markets {
        let mb: Vec<RampBounds> = (0..n)
            .map(|i| {
                if use_flow_envelopes {
                    adjusted_envelope(rb, ic, i, inst.params.h)
                } else {
                    rb
                }
            })
            .collect();
        // A fully saturated line pins one trade direction per interval; both
        // directions pinned everywhere means the remote market is present
        // but untradeable, which is worth flagging.
        if use_flow_envelopes && mb.iter().all(|b| b.x_min == 0.0 && b.x_max == 0.0) {
            log::warn!(
                "interconnector to {} leaves no trading headroom at any interval",
                prices.market_id
            );
        }
        bounds.push(mb);
    }
    bounds
}

/// The shared-dispatch epigraph MILP over one or more price scenarios:
/// one x per market/interval and one z per interval, with each scenario
/// contributing its own epigraph block at weight 1/S.
pub(crate) fn build_epigraph_milp(
    params: &BatteryParams,
    bounds: &[Vec<RampBounds>],
    scenarios: &[Vec<MarketPrices>],
) -> LinearProgram {
    let markets = bounds.len();
    let n = bounds[0].len();
    let ns = scenarios.len();
    let (eta_ch, eta_dis) = params.compose_efficiencies();
    let rb = params.ramp_bounds();
    let lay = Layout {
        n,
        markets,
        scenarios: ns,
    };
    let tname = |s: usize, m: usize, i: usize| {
        if ns == 1 {
            name("t", m, i)
        } else {
            format!("s{s}_{}", name("t", m, i))
        }
    };
    let all_prices: Vec<&[f64]> = scenarios
        .iter()
        .flat_map(|sc| sc.iter().flat_map(|mp| [&mp.buy[..], &mp.sell[..]]))
        .collect();
    let t_lb = epigraph_floor(params, &all_prices);

    let mut lp = LinearProgram::new();
    for (m, mb) in bounds.iter().enumerate() {
        for (i, b) in mb.iter().enumerate() {
            lp.add_variable(name("x", m, i), b.x_min, b.x_max);
        }
    }
    for s in 0..ns {
        for m in 0..markets {
            for i in 0..n {
                let t = lp.add_variable(tname(s, m, i), t_lb, f64::INFINITY);
                lp.set_objective(t, 1.0 / ns as f64);
            }
        }
    }
    for i in 0..n {
        lp.add_binary(format!("z_{i}"));
    }

    for (s, views) in scenarios.iter().enumerate() {
        for (m, mp) in views.iter().enumerate() {
            for i in 0..n {
                let x = lay.x(m, i);
                let t = lay.t(s, m, i);
                let rname = |base: &str| {
                    if ns == 1 {
                        name(base, m, i)
                    } else {
                        format!("s{s}_{}", name(base, m, i))
                    }
                };
                lp.add_constraint(
                    rname("seg_buy"),
                    vec![(x, mp.buy[i] / eta_ch), (t, -1.0)],
                    Relation::Le,
                    0.0,
                );
                lp.add_constraint(
                    rname("seg_sell"),
                    vec![(x, mp.sell[i] * eta_dis), (t, -1.0)],
                    Relation::Le,
                    0.0,
                );
            }
        }
    }
    for i in 0..n {
        let row: Vec<(usize, f64)> = (0..markets).map(|m| (lay.x(m, i), 1.0)).collect();
        lp.add_constraint(format!("ramp_hi_{i}"), row.clone(), Relation::Le, rb.x_max);
        lp.add_constraint(format!("ramp_lo_{i}"), row, Relation::Ge, rb.x_min);
    }
    for i in 0..n {
        let prefix: Vec<(usize, f64)> = (0..=i)
            .flat_map(|j| (0..markets).map(move |m| (m * n + j, 1.0)))
            .collect();
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
    // z_i = 1 selects [X_min, 0] in every market at once, z_i = 0 selects
    // [0, X_max]: x >= z X_min and x <= (1 - z) X_max, with each market's
    // own (possibly envelope-adjusted) bounds as the big-M values.
    for m in 0..markets {
        for i in 0..n {
            let x = lay.x(m, i);
            let z = lay.z(i);
            let mb = bounds[m][i];
            lp.add_constraint(
                name("mode_lo", m, i),
                vec![(x, 1.0), (z, -mb.x_min)],
                Relation::Ge,
                0.0,
            );
            lp.add_constraint(
                name("mode_hi", m, i),
                vec![(x, 1.0), (z, mb.x_max)],
                Relation::Le,
                mb.x_max,
            );
        }
    }
    lp
}

pub fn build_mrea(inst: &MreaInstance, use_flow_envelopes: bool) -> Result<LinearProgram> {
    let views = market_views(inst)?;
    let bounds = envelope_bounds(inst, use_flow_envelopes);
    Ok(build_epigraph_milp(&inst.params, &bounds, &[views]))
}

pub fn solve_mrea(
    inst: &MreaInstance,
    use_flow_envelopes: bool,
    options: &SolveOptions,
) -> Result<MreaSolution> {
    let lp = build_mrea(inst, use_flow_envelopes)?;
    let result = solver::solve(&lp, options);
    if result.status != SolveStatus::Optimal {
        return Err(MreaError::SolverFailure {
            status: result.status,
        });
    }
    let v = result.primal_values.as_ref().unwrap();
    let n = inst.n();
    let lay = Layout {
        n,
        markets: 1 + inst.remote_markets.len(),
        scenarios: 1,
    };

    let mut x: Vec<Vec<f64>> = (0..lay.markets)
        .map(|m| (0..n).map(|i| metrics::scrub_zero(v[lay.x(m, i)])).collect())
        .collect();
    let t_home: Vec<f64> = (0..n).map(|i| v[lay.t(0, 0, i)]).collect();
    let t_remote: Vec<Vec<f64>> = (1..lay.markets)
        .map(|m| (0..n).map(|i| v[lay.t(0, m, i)]).collect())
        .collect();
    let z_ch: Vec<f64> = (0..n)
        .map(|i| metrics::scrub_zero(v[lay.z(i)].round()))
        .collect();
    let z_dis: Vec<f64> = z_ch.iter().map(|z| 1.0 - z).collect();

    // Project the aggregate onto the exactly feasible set and land each
    // interval's correction on its largest mover; the shift is bounded by
    // the solver's feasibility tolerance.
    let agg_raw: Vec<f64> = (0..n).map(|i| (0..lay.markets).map(|m| x[m][i]).sum()).collect();
    let agg = sanitize_dispatch(&inst.params, &agg_raw);
    for i in 0..n {
        let diff = agg[i] - agg_raw[i];
        if diff != 0.0 {
            let m_star = (0..lay.markets)
                .max_by(|&a, &b| x[a][i].abs().partial_cmp(&x[b][i].abs()).unwrap())
                .unwrap();
            x[m_star][i] += diff;
        }
    }
    let soc = soc_propagate(&inst.params, &agg)?;

    let eff = inst.effective()?;
    let mut revenue_true = metrics::true_revenue(
        &inst.params,
        &inst.home_prices.p_buy[..n],
        &inst.home_prices.p_sell[..n],
        &x[0],
    )?;
    for (m, e) in eff.iter().enumerate() {
        revenue_true += metrics::true_revenue(
            &inst.params,
            &e.p_buy_eff[..n],
            &e.p_sell_eff[..n],
            &x[1 + m],
        )?;
    }

    let x_home = x.remove(0);
    let m_ind = metrics::conflict_metric(&x_home, &x);
    Ok(MreaSolution {
        x_home,
        x_remote: x,
        z_ch,
        z_dis,
        t_home,
        t_remote,
        soc,
        objective_reported: -result.objective_value,
        revenue_true,
        m_ind,
        wall_time: result.wall_time,
    })
}

/// Largest simultaneous same-direction home/remote trade in the solution.
/// With slack on the interconnectors every interval routes through the one
/// best market, so this stays at numerical noise; binding line capacity can
/// legitimately push it positive.
pub fn conflict_metric(sol: &MreaSolution) -> f64 {
    metrics::conflict_metric(&sol.x_home, &sol.x_remote)
}

/// Same instance with the planning-side pseudo efficiency set. Dispatches
/// found under it are still evaluated at the physical efficiencies.
pub fn apply_pseudo_efficiency(inst: &MreaInstance, eta_pseudo: f64) -> MreaInstance {
    assert!(
        eta_pseudo > 0.0 && eta_pseudo <= 1.0,
        "eta_pseudo {eta_pseudo} outside (0, 1]"
    );
    MreaInstance {
        params: inst.params.with_eta_pseudo(eta_pseudo),
        ..inst.clone()
    }
}
