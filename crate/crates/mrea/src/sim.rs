//! Rolling-horizon backtesting over long price histories, scenario-averaged
//! solves, and Monte Carlo runtime benchmarking.

use chrono::{DateTime, Datelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::battery::BatteryParams;
use crate::market::{InterconnectorSpec, PriceSeries};
use crate::metrics::{self, CycleMethod, PerformanceIndices};
use crate::multi_region::{
    self, build_epigraph_milp, envelope_bounds, market_views, Layout, MreaInstance, MreaSolution,
};
use crate::single_region::{self, DpConfig, SingleRegionInstance};
use crate::solver::{self, SolveOptions, SolveStatus};
use crate::{MreaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lp,
    Milp,
    NoDis,
    Dp,
    Mrea,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Lp => "lp",
            ModelKind::Milp => "milp",
            ModelKind::NoDis => "nodis",
            ModelKind::Dp => "dp",
            ModelKind::Mrea => "mrea",
        }
    }
}

/// Window geometry of the rolling horizon. Each solve sees
/// `horizon_length` intervals and only the first `step` get committed;
/// `step == horizon_length` is plain day-by-day solving, `step == 1` is
/// receding-horizon MPC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HorizonPlan {
    pub horizon_length: usize,
    pub step: usize,
    /// Terminal SOC of one window seeds the next; off means every window
    /// restarts from the configured b0.
    pub soc_chaining: bool,
}

impl Default for HorizonPlan {
    fn default() -> Self {
        HorizonPlan {
            horizon_length: 24,
            step: 24,
            soc_chaining: true,
        }
    }
}

impl HorizonPlan {
    pub fn validate(&self) -> Result<()> {
        if self.step == 0 || self.step > self.horizon_length {
            return Err(MreaError::InvalidParams(format!(
                "step {} outside 1..={}",
                self.step, self.horizon_length
            )));
        }
        Ok(())
    }
}

/// Everything a backtest needs besides the window geometry. Remote markets
/// may be empty for the single-market models; MREA requires at least one.
#[derive(Debug, Clone)]
pub struct BacktestSpec {
    pub params: BatteryParams,
    pub home_prices: PriceSeries,
    pub remote_markets: Vec<(PriceSeries, InterconnectorSpec)>,
    pub use_flow_envelopes: bool,
    pub model: ModelKind,
    /// Explicit DP grid; defaults to the per-params resolution.
    pub dp: Option<DpConfig>,
    pub cycle_method: CycleMethod,
    /// Record a zero-dispatch window and continue instead of aborting when
    /// one window's solve fails.
    pub skip_failed_windows: bool,
}

impl BacktestSpec {
    pub fn new(params: BatteryParams, home_prices: PriceSeries, model: ModelKind) -> BacktestSpec {
        BacktestSpec {
            params,
            home_prices,
            remote_markets: Vec::new(),
            use_flow_envelopes: false,
            model,
            dp: None,
            cycle_method: CycleMethod::default(),
            skip_failed_windows: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearRow {
    pub year: i32,
    pub indices: PerformanceIndices,
}

/// Committed dispatch of a whole backtest plus yearly and total indices.
/// `dispatch` is per market (home first); `soc` holds the end-of-interval
/// charge, which jumps at window boundaries when chaining is off.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub model: ModelKind,
    pub timestamps: Vec<DateTime<Utc>>,
    pub dispatch: Vec<Vec<f64>>,
    pub soc: Vec<f64>,
    pub years: Vec<YearRow>,
    pub totals: PerformanceIndices,
    /// Mean of the yearly revenue/cycles ratios, reported alongside the
    /// ratio of totals because per-year averaging conventions differ.
    pub mean_yearly_revenue_per_cycle: Option<f64>,
    pub skipped_windows: Vec<usize>,
}

impl SimulationReport {
    /// Deterministic text form: per-interval rows, yearly table, and totals,
    /// with wall times excluded so repeated runs compare byte-identical.
    pub fn canonical_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("timestamp");
        for m in 0..self.dispatch.len() {
            if m == 0 {
                out.push_str(",x_home");
            } else {
                out.push_str(&format!(",x_remote{}", m - 1));
            }
        }
        out.push_str(",soc\n");
        for i in 0..self.timestamps.len() {
            out.push_str(&self.timestamps[i].to_rfc3339());
            for xs in &self.dispatch {
                out.push_str(&format!(",{:.9}", xs[i]));
            }
            out.push_str(&format!(",{:.9}\n", self.soc[i]));
        }
        out.push_str("year,revenue,cycles,revenue_per_cycle,m_ind\n");
        let row = |out: &mut String, label: &str, ix: &PerformanceIndices| {
            let rpc = ix
                .revenue_per_cycle
                .map(|r| format!("{r:.6}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{label},{:.6},{:.6},{rpc},{:.3e}\n",
                ix.revenue, ix.cycles, ix.m_ind
            ));
        };
        for y in &self.years {
            row(&mut out, &y.year.to_string(), &y.indices);
        }
        row(&mut out, "total", &self.totals);
        out
    }
}

struct WindowResult {
    /// Per-market dispatch over the whole window, home first.
    x: Vec<Vec<f64>>,
    wall_time: f64,
}

fn solve_window(
    spec: &BacktestSpec,
    params: &BatteryParams,
    start: usize,
    len: usize,
    options: &SolveOptions,
) -> Result<WindowResult> {
    match spec.model {
        ModelKind::Mrea => {
            let remotes = spec
                .remote_markets
                .iter()
                .map(|(p, ic)| (p.slice(start, len), ic.slice(start, len)))
                .collect();
            let inst = MreaInstance::new(
                params.clone(),
                spec.home_prices.slice(start, len),
                remotes,
            )?;
            let sol = multi_region::solve_mrea(&inst, spec.use_flow_envelopes, options)?;
            let mut x = vec![sol.x_home];
            x.extend(sol.x_remote);
            Ok(WindowResult {
                x,
                wall_time: sol.wall_time,
            })
        }
        single => {
            let inst =
                SingleRegionInstance::new(params.clone(), spec.home_prices.slice(start, len))?;
            let d = match single {
                ModelKind::Lp => single_region::solve_lp(&inst, options)?,
                ModelKind::Milp => single_region::solve_milp(&inst, options)?,
                ModelKind::NoDis => single_region::solve_nodis(&inst, options)?,
                ModelKind::Dp => {
                    let cfg = spec.dp.unwrap_or_else(|| DpConfig::for_params(params));
                    single_region::solve_dp(&inst, &cfg)?
                }
                ModelKind::Mrea => unreachable!(),
            };
            Ok(WindowResult {
                x: vec![d.x],
                wall_time: d.wall_time,
            })
        }
    }
}

pub fn run_backtest(
    spec: &BacktestSpec,
    plan: &HorizonPlan,
    options: &SolveOptions,
) -> Result<SimulationReport> {
    plan.validate()?;
    spec.params.validate()?;
    spec.home_prices.validate()?;
    if spec.model == ModelKind::Mrea && spec.remote_markets.is_empty() {
        return Err(MreaError::InvalidParams(
            "MREA backtest needs at least one remote market".into(),
        ));
    }
    let n = spec.home_prices.len();
    let markets = match spec.model {
        ModelKind::Mrea => 1 + spec.remote_markets.len(),
        _ => 1,
    };
    // Per-market effective prices for committed-revenue accounting.
    let mut eff_buy: Vec<Vec<f64>> = vec![spec.home_prices.p_buy.clone()];
    let mut eff_sell: Vec<Vec<f64>> = vec![spec.home_prices.p_sell.clone()];
    if spec.model == ModelKind::Mrea {
        for (prices, ic) in &spec.remote_markets {
            let e = crate::market::effective_prices(prices, ic)?;
            eff_buy.push(e.p_buy_eff);
            eff_sell.push(e.p_sell_eff);
        }
    }

    let mut dispatch: Vec<Vec<f64>> = vec![Vec::with_capacity(n); markets];
    let mut soc = Vec::with_capacity(n);
    let mut per_window_wall: Vec<(usize, f64)> = Vec::new();
    let mut skipped = Vec::new();
    let mut b = spec.params.b0;

    let mut start = 0;
    let mut window = 0;
    while start < n {
        let len = plan.horizon_length.min(n - start);
        let commit = plan.step.min(len);
        let params_w = spec.params.with_b0(b);
        match solve_window(spec, &params_w, start, len, options) {
            Ok(res) => {
                for m in 0..markets {
                    dispatch[m].extend(&res.x[m][..commit]);
                }
                per_window_wall.push((start, res.wall_time));
            }
            Err(e) => {
                if !spec.skip_failed_windows {
                    log::error!("window {window} (interval {start}) failed: {e}");
                    return Err(e);
                }
                log::warn!("window {window} (interval {start}) failed, committing zeros: {e}");
                for xs in dispatch.iter_mut() {
                    xs.extend(std::iter::repeat_n(0.0, commit));
                }
                per_window_wall.push((start, 0.0));
                skipped.push(window);
            }
        }
        for i in start..start + commit {
            let agg: f64 = (0..markets).map(|m| dispatch[m][i]).sum();
            // Clamp away sub-tolerance rounding so the carried SOC stays a
            // valid b0 for the next window.
            let next = (b + agg).clamp(spec.params.b_min, spec.params.b_max);
            debug_assert!((next - (b + agg)).abs() <= spec.params.soc_tolerance());
            b = next;
            soc.push(b);
        }
        if !plan.soc_chaining {
            b = spec.params.b0;
        }
        start += commit;
        window += 1;
    }

    let timestamps = spec.home_prices.timestamps.clone();
    let usable = spec.params.usable_capacity();
    let year_of = |i: usize| timestamps[i].year();

    // Per-interval revenue, throughput, and conflict products; yearly rows
    // group by calendar year of the interval, window wall time by the year
    // of the window's first interval.
    let mut years: Vec<i32> = Vec::new();
    for i in 0..n {
        let y = year_of(i);
        if years.last() != Some(&y) && !years.contains(&y) {
            years.push(y);
        }
    }
    let mut rows = Vec::new();
    for &y in &years {
        let idx: Vec<usize> = (0..n).filter(|&i| year_of(i) == y).collect();
        let revenue: f64 = idx
            .iter()
            .map(|&i| {
                -(0..markets)
                    .map(|m| {
                        metrics::interval_cost(
                            &spec.params,
                            eff_buy[m][i],
                            eff_sell[m][i],
                            dispatch[m][i],
                        )
                    })
                    .sum::<f64>()
            })
            .sum();
        let cycles = match spec.cycle_method {
            CycleMethod::EquivalentFullCycles => {
                idx.iter()
                    .map(|&i| (0..markets).map(|m| dispatch[m][i]).sum::<f64>().abs())
                    .sum::<f64>()
                    / (2.0 * usable)
            }
            CycleMethod::Rainflow => {
                let first = idx[0];
                let b0 = if first == 0 {
                    spec.params.b0
                } else {
                    soc[first - 1]
                };
                let mut traj = vec![b0];
                traj.extend(idx.iter().map(|&i| soc[i]));
                let t = crate::battery::SocTrajectory { b: traj };
                metrics::count_cycles(&t, &spec.params, CycleMethod::Rainflow)
            }
        };
        let m_ind = idx
            .iter()
            .map(|&i| {
                (1..markets)
                    .map(|m| dispatch[0][i] * dispatch[m][i])
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0, f64::max);
        let wall: f64 = per_window_wall
            .iter()
            .filter(|(s, _)| year_of(*s) == y)
            .map(|(_, w)| w)
            .sum();
        rows.push(YearRow {
            year: y,
            indices: metrics::indices(revenue, cycles, m_ind, wall),
        });
    }

    let totals = metrics::indices(
        rows.iter().map(|r| r.indices.revenue).sum(),
        rows.iter().map(|r| r.indices.cycles).sum(),
        rows.iter().map(|r| r.indices.m_ind).fold(0.0, f64::max),
        rows.iter().map(|r| r.indices.wall_time).sum(),
    );
    let yearly_ratios: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.indices.revenue_per_cycle)
        .collect();
    let mean_yearly = (!yearly_ratios.is_empty())
        .then(|| yearly_ratios.iter().sum::<f64>() / yearly_ratios.len() as f64);

    Ok(SimulationReport {
        model: spec.model,
        timestamps,
        dispatch,
        soc,
        years: rows,
        totals,
        mean_yearly_revenue_per_cycle: mean_yearly,
        skipped_windows: skipped,
    })
}

/// One scenario's prices; interconnector data stays with the base instance.
#[derive(Debug, Clone)]
pub struct ScenarioPrices {
    pub home: PriceSeries,
    pub remotes: Vec<PriceSeries>,
}

#[derive(Debug, Clone)]
pub struct ScenarioSet {
    pub scenarios: Vec<ScenarioPrices>,
    /// One day-ahead schedule across all scenarios (nonanticipativity) vs
    /// per-scenario recourse dispatch.
    pub shared_dispatch: bool,
}

impl ScenarioSet {
    fn validate(&self, base: &MreaInstance) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(MreaError::InvalidParams("scenario set is empty".into()));
        }
        let n = base.n();
        for (s, sc) in self.scenarios.iter().enumerate() {
            sc.home.validate()?;
            if sc.home.len() != n {
                return Err(MreaError::LengthMismatch(format!(
                    "scenario {s}: home has {} intervals, base has {n}",
                    sc.home.len()
                )));
            }
            if sc.remotes.len() != base.remote_markets.len() {
                return Err(MreaError::LengthMismatch(format!(
                    "scenario {s}: {} remote series, base has {}",
                    sc.remotes.len(),
                    base.remote_markets.len()
                )));
            }
            for (r, (base_prices, _)) in sc.remotes.iter().zip(&base.remote_markets) {
                r.validate()?;
                if r.len() != base_prices.len() {
                    return Err(MreaError::LengthMismatch(format!(
                        "scenario {s}: remote {} has {} intervals, base has {}",
                        r.market_id,
                        r.len(),
                        base_prices.len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn instance(&self, base: &MreaInstance, s: usize) -> Result<MreaInstance> {
        let sc = &self.scenarios[s];
        MreaInstance::new(
            base.params.clone(),
            sc.home.clone(),
            sc.remotes
                .iter()
                .cloned()
                .zip(base.remote_markets.iter().map(|(_, ic)| ic.clone()))
                .collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct SaaResult {
    /// Shared mode: the one committed schedule, epigraph values from the
    /// first scenario. Recourse mode: the first scenario's solution.
    pub solution: MreaSolution,
    /// Linearized revenue of each scenario at the returned dispatch.
    pub scenario_revenues: Vec<f64>,
    pub expected_revenue: f64,
}

pub fn run_saa(
    base: &MreaInstance,
    scen: &ScenarioSet,
    use_flow_envelopes: bool,
    options: &SolveOptions,
) -> Result<SaaResult> {
    scen.validate(base)?;
    let ns = scen.scenarios.len();

    if !scen.shared_dispatch {
        // Recourse separates by scenario: each solves independently.
        let mut sols = Vec::with_capacity(ns);
        for s in 0..ns {
            let inst = scen.instance(base, s)?;
            sols.push(multi_region::solve_mrea(&inst, use_flow_envelopes, options)?);
        }
        let revenues: Vec<f64> = sols.iter().map(|s| s.objective_reported).collect();
        let expected = revenues.iter().sum::<f64>() / ns as f64;
        return Ok(SaaResult {
            solution: sols.swap_remove(0),
            scenario_revenues: revenues,
            expected_revenue: expected,
        });
    }

    let mut views = Vec::with_capacity(ns);
    for s in 0..ns {
        views.push(market_views(&scen.instance(base, s)?)?);
    }
    let bounds = envelope_bounds(base, use_flow_envelopes);
    let lp = build_epigraph_milp(&base.params, &bounds, &views);
    let result = solver::solve(&lp, options);
    if result.status != SolveStatus::Optimal {
        return Err(MreaError::SolverFailure {
            status: result.status,
        });
    }
    let v = result.primal_values.as_ref().unwrap();
    let n = base.n();
    let markets = 1 + base.remote_markets.len();
    let lay = Layout {
        n,
        markets,
        scenarios: ns,
    };
    let scenario_revenues: Vec<f64> = (0..ns)
        .map(|s| {
            -(0..markets)
                .flat_map(|m| (0..n).map(move |i| (m, i)))
                .map(|(m, i)| v[lay.t(s, m, i)])
                .sum::<f64>()
        })
        .collect();

    // Reuse the deterministic single-scenario extraction for the solution
    // record: re-solve scenario 0 with dispatch pinned would be wasteful;
    // instead assemble directly from the shared columns.
    let x: Vec<Vec<f64>> = (0..markets)
        .map(|m| (0..n).map(|i| metrics::scrub_zero(v[lay.x(m, i)])).collect())
        .collect();
    let z_ch: Vec<f64> = (0..n)
        .map(|i| metrics::scrub_zero(v[lay.z(i)].round()))
        .collect();
    let agg: Vec<f64> = (0..n).map(|i| (0..markets).map(|m| x[m][i]).sum()).collect();
    let soc = crate::battery::soc_propagate(
        &base.params,
        &crate::single_region::sanitize_dispatch(&base.params, &agg),
    )?;
    let mut revenue_true = 0.0;
    for s in 0..ns {
        let views_s = &views[s];
        for m in 0..markets {
            revenue_true +=
                metrics::true_revenue(&base.params, &views_s[m].buy, &views_s[m].sell, &x[m])?;
        }
    }
    revenue_true /= ns as f64;
    let t_home: Vec<f64> = (0..n).map(|i| v[lay.t(0, 0, i)]).collect();
    let t_remote: Vec<Vec<f64>> = (1..markets)
        .map(|m| (0..n).map(|i| v[lay.t(0, m, i)]).collect())
        .collect();
    let mut x = x;
    let x_home = x.remove(0);
    let m_ind = metrics::conflict_metric(&x_home, &x);
    let solution = MreaSolution {
        x_home,
        x_remote: x,
        z_ch: z_ch.clone(),
        z_dis: z_ch.iter().map(|z| 1.0 - z).collect(),
        t_home,
        t_remote,
        soc,
        objective_reported: -result.objective_value,
        revenue_true,
        m_ind,
        wall_time: result.wall_time,
    };
    Ok(SaaResult {
        expected_revenue: solution.objective_reported,
        scenario_revenues,
        solution,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McRun {
    pub run: usize,
    pub revenue: f64,
    pub cycles: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub runs: Vec<McRun>,
    pub mean_revenue: f64,
    pub mean_wall_time: f64,
    pub p50_wall_time: f64,
    pub p95_wall_time: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 nudged away from 0.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn perturb(prices: &mut [f64], rng: &mut ChaCha8Rng, sigma: f64) {
    // Mean-one multiplicative lognormal noise per interval.
    for p in prices {
        let z = normal(rng);
        *p *= (sigma * z - 0.5 * sigma * sigma).exp();
    }
}

/// Repeated backtests over noisy price copies; run r uses a ChaCha stream
/// derived from `seed` and r alone, so results do not depend on thread
/// scheduling.
pub fn run_monte_carlo(
    spec: &BacktestSpec,
    plan: &HorizonPlan,
    n_runs: usize,
    sigma: f64,
    seed: u64,
    options: &SolveOptions,
) -> Result<McReport> {
    if n_runs == 0 {
        return Err(MreaError::InvalidParams("n_runs must be at least 1".into()));
    }
    let runs: Vec<McRun> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut spec_r = spec.clone();
            if sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                );
                perturb(&mut spec_r.home_prices.p_buy, &mut rng, sigma);
                spec_r.home_prices.p_sell = spec_r.home_prices.p_buy.clone();
                for (prices, _) in spec_r.remote_markets.iter_mut() {
                    perturb(&mut prices.p_buy, &mut rng, sigma);
                    prices.p_sell = prices.p_buy.clone();
                }
            }
            let report = run_backtest(&spec_r, plan, options)?;
            Ok(McRun {
                run: r,
                revenue: report.totals.revenue,
                cycles: report.totals.cycles,
                wall_time: report.totals.wall_time,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mean = |f: fn(&McRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let mut walls: Vec<f64> = runs.iter().map(|r| r.wall_time).collect();
    walls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |q: f64| walls[((q * (walls.len() - 1) as f64).round()) as usize];
    Ok(McReport {
        mean_revenue: mean(|r| r.revenue),
        mean_wall_time: mean(|r| r.wall_time),
        p50_wall_time: pct(0.5),
        p95_wall_time: pct(0.95),
        runs,
    })
}
