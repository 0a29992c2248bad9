//! Python bindings: thin wrappers over the core arbitrage library. Solves
//! return plain dicts so downstream analysis can go straight into pandas.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mrea::battery::BatteryParams;
use mrea::market::{self, InterconnectorSpec, PriceSeries};
use mrea::metrics;
use mrea::multi_region::{self, MreaInstance};
use mrea::sim::{self, BacktestSpec, HorizonPlan, ModelKind};
use mrea::single_region::{self, DpConfig, SingleRegionInstance};
use mrea::solver::SolveOptions;
use mrea::MreaError;

fn err(e: MreaError) -> PyErr {
    match &e {
        MreaError::SolverFailure { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Battery", from_py_object)]
#[derive(Clone)]
struct PyBattery {
    inner: BatteryParams,
}

#[pymethods]
impl PyBattery {
    /// Defaults are the reference 1 MWh system.
    #[new]
    #[pyo3(signature = (b_min=0.1, b_max=1.0, b0=0.5, delta_min=-0.5, delta_max=0.5,
                        h=1.0, eta_ch=0.95, eta_dis=0.95, eta_conv=0.95, eta_pseudo=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        b_min: f64,
        b_max: f64,
        b0: f64,
        delta_min: f64,
        delta_max: f64,
        h: f64,
        eta_ch: f64,
        eta_dis: f64,
        eta_conv: f64,
        eta_pseudo: f64,
    ) -> PyResult<Self> {
        let inner = BatteryParams {
            b_min,
            b_max,
            b0,
            delta_min,
            delta_max,
            h,
            eta_ch,
            eta_dis,
            eta_conv,
            eta_pseudo,
            ..BatteryParams::default()
        };
        inner.validate().map_err(err)?;
        Ok(PyBattery { inner })
    }

    #[getter]
    fn usable_capacity(&self) -> f64 {
        self.inner.usable_capacity()
    }

    fn with_eta_pseudo(&self, eta_pseudo: f64) -> PyResult<Self> {
        if !(eta_pseudo > 0.0 && eta_pseudo <= 1.0) {
            return Err(PyValueError::new_err(format!(
                "eta_pseudo {eta_pseudo} outside (0, 1]"
            )));
        }
        Ok(PyBattery {
            inner: self.inner.with_eta_pseudo(eta_pseudo),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Battery(b in [{}, {}], ramp [{}, {}], eta {}x{})",
            self.inner.b_min,
            self.inner.b_max,
            self.inner.delta_min,
            self.inner.delta_max,
            self.inner.eta_ch,
            self.inner.eta_dis
        )
    }
}

#[pyclass(name = "Prices", from_py_object)]
#[derive(Clone)]
struct PyPrices {
    inner: PriceSeries,
}

#[pymethods]
impl PyPrices {
    /// Hourly series starting at `start` (RFC 3339, UTC).
    #[new]
    fn new(market_id: &str, start: &str, prices: Vec<f64>) -> PyResult<Self> {
        let ts = chrono::DateTime::parse_from_rfc3339(start)
            .map_err(|e| PyValueError::new_err(format!("bad start timestamp: {e}")))?
            .with_timezone(&chrono::Utc);
        Ok(PyPrices {
            inner: PriceSeries::synthetic(market_id, ts, prices),
        })
    }

    /// Load from a delimited file with `timestamp` and `price` columns.
    #[staticmethod]
    #[pyo3(signature = (path, market_id, currency_factor=1.0))]
    fn from_csv(path: &str, market_id: &str, currency_factor: f64) -> PyResult<Self> {
        let inner = market::load_prices(
            path,
            &market::ColumnSchema::default(),
            currency_factor,
            market_id,
            market::GapPolicy::Error,
        )
        .map_err(err)?;
        Ok(PyPrices { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn p_buy(&self) -> Vec<f64> {
        self.inner.p_buy.clone()
    }

    #[getter]
    fn p_sell(&self) -> Vec<f64> {
        self.inner.p_sell.clone()
    }

    #[getter]
    fn timestamps(&self) -> Vec<String> {
        self.inner
            .timestamps
            .iter()
            .map(|t| t.to_rfc3339())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Prices('{}', {} intervals)", self.inner.market_id, self.inner.len())
    }
}

#[pyclass(name = "Interconnector", from_py_object)]
#[derive(Clone)]
struct PyInterconnector {
    inner: InterconnectorSpec,
}

#[pymethods]
impl PyInterconnector {
    #[new]
    #[pyo3(signature = (l_max, n, eta_line=1.0, rent=0.0, flow=None))]
    fn new(
        l_max: f64,
        n: usize,
        eta_line: f64,
        rent: f64,
        flow: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let inner = InterconnectorSpec::new(
            l_max,
            eta_line,
            vec![rent; n],
            flow.unwrap_or_else(|| vec![0.0; n]),
        )
        .map_err(err)?;
        Ok(PyInterconnector { inner })
    }

    fn reversed(&self) -> Self {
        PyInterconnector {
            inner: self.inner.reversed(),
        }
    }
}

fn parse_model(model: &str) -> PyResult<ModelKind> {
    match model {
        "lp" => Ok(ModelKind::Lp),
        "milp" => Ok(ModelKind::Milp),
        "nodis" => Ok(ModelKind::NoDis),
        "dp" => Ok(ModelKind::Dp),
        "mrea" => Ok(ModelKind::Mrea),
        _ => Err(PyValueError::new_err(format!(
            "unknown model '{model}', expected lp|milp|nodis|dp|mrea"
        ))),
    }
}

fn options(time_limit: f64) -> SolveOptions {
    SolveOptions {
        time_limit,
        ..SolveOptions::default()
    }
}

/// Solve one single-market window. Returns a dict with dispatch (`x`),
/// the SOC path including the initial level, and performance numbers.
#[pyfunction]
#[pyo3(signature = (model, battery, prices, time_limit=60.0))]
fn solve_single<'py>(
    py: Python<'py>,
    model: &str,
    battery: &PyBattery,
    prices: &PyPrices,
    time_limit: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = parse_model(model)?;
    let inst =
        SingleRegionInstance::new(battery.inner.clone(), prices.inner.clone()).map_err(err)?;
    let opts = options(time_limit);
    let d = match kind {
        ModelKind::Lp => single_region::solve_lp(&inst, &opts),
        ModelKind::Milp => single_region::solve_milp(&inst, &opts),
        ModelKind::NoDis => single_region::solve_nodis(&inst, &opts),
        ModelKind::Dp => single_region::solve_dp(&inst, &DpConfig::for_params(&battery.inner)),
        ModelKind::Mrea => {
            return Err(PyValueError::new_err(
                "use solve_mrea for the multi-market model",
            ))
        }
    }
    .map_err(err)?;
    let cycles = metrics::count_cycles(&d.soc, &battery.inner, Default::default());
    let out = PyDict::new(py);
    out.set_item("model", model)?;
    out.set_item("x", d.x)?;
    out.set_item("soc", d.soc.b)?;
    out.set_item("revenue", d.revenue_true)?;
    out.set_item("objective", d.objective_reported)?;
    out.set_item("cycles", cycles)?;
    out.set_item("wall_time", d.wall_time)?;
    Ok(out)
}

/// Solve the multi-market model. `remotes` is a list of
/// (Prices, Interconnector) pairs.
#[pyfunction]
#[pyo3(signature = (battery, home, remotes, use_flow_envelopes=false, time_limit=60.0))]
fn solve_mrea<'py>(
    py: Python<'py>,
    battery: &PyBattery,
    home: &PyPrices,
    remotes: Vec<(PyPrices, PyInterconnector)>,
    use_flow_envelopes: bool,
    time_limit: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let inst = MreaInstance::new(
        battery.inner.clone(),
        home.inner.clone(),
        remotes
            .into_iter()
            .map(|(p, ic)| (p.inner, ic.inner))
            .collect(),
    )
    .map_err(err)?;
    let sol =
        multi_region::solve_mrea(&inst, use_flow_envelopes, &options(time_limit)).map_err(err)?;
    let cycles = metrics::count_cycles(&sol.soc, &battery.inner, Default::default());
    let out = PyDict::new(py);
    out.set_item("x_home", sol.x_home)?;
    out.set_item("x_remote", sol.x_remote)?;
    out.set_item("z_ch", sol.z_ch)?;
    out.set_item("soc", sol.soc.b)?;
    out.set_item("revenue", sol.revenue_true)?;
    out.set_item("objective", sol.objective_reported)?;
    out.set_item("m_ind", sol.m_ind)?;
    out.set_item("cycles", cycles)?;
    out.set_item("wall_time", sol.wall_time)?;
    Ok(out)
}

/// Remote prices as seen from the battery bus (losses and rent applied).
#[pyfunction]
fn effective_prices(prices: &PyPrices, ic: &PyInterconnector) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let e = market::effective_prices(&prices.inner, &ic.inner).map_err(err)?;
    Ok((e.p_buy_eff, e.p_sell_eff))
}

/// Rolling-horizon backtest. Returns totals, yearly rows, and the
/// committed dispatch per market.
#[pyfunction]
#[pyo3(signature = (model, battery, home, remotes=None, horizon_length=24, step=24,
                    soc_chaining=true, use_flow_envelopes=false, time_limit=60.0))]
#[allow(clippy::too_many_arguments)]
fn backtest<'py>(
    py: Python<'py>,
    model: &str,
    battery: &PyBattery,
    home: &PyPrices,
    remotes: Option<Vec<(PyPrices, PyInterconnector)>>,
    horizon_length: usize,
    step: usize,
    soc_chaining: bool,
    use_flow_envelopes: bool,
    time_limit: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = parse_model(model)?;
    let mut spec = BacktestSpec::new(battery.inner.clone(), home.inner.clone(), kind);
    spec.remote_markets = remotes
        .unwrap_or_default()
        .into_iter()
        .map(|(p, ic)| (p.inner, ic.inner))
        .collect();
    spec.use_flow_envelopes = use_flow_envelopes;
    let plan = HorizonPlan {
        horizon_length,
        step,
        soc_chaining,
    };
    let rep = sim::run_backtest(&spec, &plan, &options(time_limit)).map_err(err)?;
    let years: Vec<Bound<'py, PyDict>> = rep
        .years
        .iter()
        .map(|y| {
            let d = PyDict::new(py);
            d.set_item("year", y.year)?;
            d.set_item("revenue", y.indices.revenue)?;
            d.set_item("cycles", y.indices.cycles)?;
            d.set_item("revenue_per_cycle", y.indices.revenue_per_cycle)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    let out = PyDict::new(py);
    out.set_item("model", model)?;
    out.set_item("revenue", rep.totals.revenue)?;
    out.set_item("cycles", rep.totals.cycles)?;
    out.set_item("m_ind", rep.totals.m_ind)?;
    out.set_item("years", years)?;
    out.set_item("csv", rep.canonical_csv())?;
    out.set_item("dispatch", rep.dispatch)?;
    out.set_item("soc", rep.soc)?;
    Ok(out)
}

#[pymodule]
fn mrea_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBattery>()?;
    m.add_class::<PyPrices>()?;
    m.add_class::<PyInterconnector>()?;
    m.add_function(wrap_pyfunction!(solve_single, m)?)?;
    m.add_function(wrap_pyfunction!(solve_mrea, m)?)?;
    m.add_function(wrap_pyfunction!(effective_prices, m)?)?;
    m.add_function(wrap_pyfunction!(backtest, m)?)?;
    Ok(())
}
