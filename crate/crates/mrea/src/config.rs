//! Run configuration: one TOML file with named sections describes a batch
//! run end to end (battery, markets, model, horizon, solver, output).
//! Parsing keeps paths exactly as written; they resolve against the config
//! file's directory at load time.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::battery::BatteryParams;
use crate::market::{self, ColumnSchema, GapPolicy, InterconnectorSpec, PriceSeries};
use crate::metrics::CycleMethod;
use crate::sim::{HorizonPlan, ModelKind};
use crate::single_region::DpConfig;
use crate::solver::SolveOptions;
use crate::{MreaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Omit the whole section for the reference 1 MWh battery.
    #[serde(default)]
    pub battery: BatteryParams,
    /// `[[market]]` entries; exactly one `role = "home"`.
    #[serde(rename = "market")]
    pub markets: Vec<MarketConfig>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub horizon: HorizonPlan,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketRole {
    Home,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub id: String,
    pub role: MarketRole,
    /// Delimited price file, relative to the config file.
    pub file: String,
    /// Multiplies every price on load (currency conversion).
    #[serde(default = "one")]
    pub currency_factor: f64,
    #[serde(default)]
    pub columns: ColumnSchema,
    #[serde(default)]
    pub gap_policy: GapPolicy,
    /// Required for remote markets, forbidden for the home market.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interconnector: Option<InterconnectorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterconnectorConfig {
    /// Line capacity, MW.
    pub l_max: f64,
    #[serde(default = "one")]
    pub eta_line: f64,
    /// Constant per-MWh transmission rent; ignored when `rent_file` is set.
    #[serde(default)]
    pub rent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rent_file: Option<String>,
    /// Recorded pre-existing flows, positive toward the remote market.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_file: Option<String>,
    #[serde(default)]
    pub use_flow_envelopes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub id: ModelKind,
    /// Overrides `battery.eta_pseudo` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_pseudo: Option<f64>,
    /// DP action grid step, MWh; default is the per-battery resolution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dp_action_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dp_soc_step: Option<f64>,
    pub cycle_method: CycleMethod,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            id: ModelKind::Milp,
            eta_pseudo: None,
            dp_action_step: None,
            dp_soc_step: None,
            cycle_method: CycleMethod::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub formats: Vec<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Config materialized into solver-ready data. Remote series are index
/// aligned to the home series (same timestamps, same length).
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub params: BatteryParams,
    pub home: PriceSeries,
    pub remotes: Vec<(PriceSeries, InterconnectorSpec)>,
    pub use_flow_envelopes: bool,
    pub model: ModelKind,
    pub dp: Option<DpConfig>,
    pub plan: HorizonPlan,
    pub options: SolveOptions,
    pub cycle_method: CycleMethod,
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| MreaError::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MreaError::Config(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| MreaError::Config(e.to_string()))
    }

    fn home_index(&self) -> Result<usize> {
        let homes: Vec<usize> = self
            .markets
            .iter()
            .enumerate()
            .filter(|(_, m)| m.role == MarketRole::Home)
            .map(|(i, _)| i)
            .collect();
        match homes.as_slice() {
            [i] => Ok(*i),
            [] => Err(MreaError::Config("no market with role = \"home\"".into())),
            _ => Err(MreaError::Config("more than one home market".into())),
        }
    }

    /// Structural checks plus existence of every referenced file.
    pub fn validate(&self, base: &Path) -> Result<()> {
        self.battery.validate()?;
        self.horizon.validate()?;
        if self.markets.is_empty() {
            return Err(MreaError::Config("no [[market]] sections".into()));
        }
        let home = self.home_index()?;
        if self.markets[home].interconnector.is_some() {
            return Err(MreaError::Config(format!(
                "home market '{}' must not declare an interconnector",
                self.markets[home].id
            )));
        }
        let exists = |rel: &str| -> Result<()> {
            let p = base.join(rel);
            if p.is_file() {
                Ok(())
            } else {
                Err(MreaError::Config(format!(
                    "referenced file not found: {}",
                    p.display()
                )))
            }
        };
        for m in &self.markets {
            if !(m.currency_factor > 0.0) {
                return Err(MreaError::Config(format!(
                    "market '{}': currency factor must be positive",
                    m.id
                )));
            }
            exists(&m.file)?;
            match (&m.role, &m.interconnector) {
                (MarketRole::Remote, None) => {
                    return Err(MreaError::Config(format!(
                        "remote market '{}' needs an [market.interconnector] table",
                        m.id
                    )));
                }
                (MarketRole::Remote, Some(ic)) => {
                    if !(ic.l_max > 0.0) {
                        return Err(MreaError::Config(format!(
                            "market '{}': l_max must be positive",
                            m.id
                        )));
                    }
                    if !(ic.eta_line > 0.0 && ic.eta_line <= 1.0) {
                        return Err(MreaError::Config(format!(
                            "market '{}': eta_line outside (0, 1]",
                            m.id
                        )));
                    }
                    if ic.rent < 0.0 {
                        return Err(MreaError::Config(format!(
                            "market '{}': rent must be nonnegative",
                            m.id
                        )));
                    }
                    if ic.use_flow_envelopes && ic.flow_file.is_none() {
                        return Err(MreaError::Config(format!(
                            "market '{}': use_flow_envelopes set but no flow_file given",
                            m.id
                        )));
                    }
                    for f in [&ic.rent_file, &ic.flow_file].into_iter().flatten() {
                        exists(f)?;
                    }
                }
                _ => {}
            }
        }
        if self.model.id == ModelKind::Mrea && self.markets.len() < 2 {
            return Err(MreaError::Config(
                "model \"mrea\" needs at least one remote market".into(),
            ));
        }
        if let Some(ep) = self.model.eta_pseudo {
            if !(ep > 0.0 && ep <= 1.0) {
                return Err(MreaError::Config(format!(
                    "eta_pseudo {ep} outside (0, 1]"
                )));
            }
        }
        for (name, v) in [
            ("dp_action_step", self.model.dp_action_step),
            ("dp_soc_step", self.model.dp_soc_step),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(MreaError::Config(format!("{name} must be positive")));
                }
            }
        }
        if !(self.solver.time_limit > 0.0) || !(self.solver.feasibility_tol > 0.0) {
            return Err(MreaError::Config(
                "solver time limit and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Load every referenced file and align all series to the home market's
    /// timestamp range.
    pub fn load(&self, base: &Path) -> Result<LoadedRun> {
        self.validate(base)?;
        let home_cfg = &self.markets[self.home_index()?];
        let home = self.load_market(base, home_cfg)?;
        let n = home.len();

        let mut remotes = Vec::new();
        for m in self.markets.iter().filter(|m| m.role == MarketRole::Remote) {
            let full = self.load_market(base, m)?;
            let prices = align(&full, &home)?;
            let ic_cfg = m.interconnector.as_ref().unwrap();
            let rent = match &ic_cfg.rent_file {
                Some(f) => lookup_series(
                    &market::load_rent(&path_str(base, f), home_cfg.gap_policy)?,
                    &home,
                    f,
                )?,
                None => vec![ic_cfg.rent; n],
            };
            let flow = match &ic_cfg.flow_file {
                Some(f) => lookup_series(
                    &market::load_flow(&path_str(base, f), home_cfg.gap_policy)?,
                    &home,
                    f,
                )?,
                None => vec![0.0; n],
            };
            let ic = InterconnectorSpec::new(ic_cfg.l_max, ic_cfg.eta_line, rent, flow)?;
            remotes.push((prices, ic));
        }

        let mut params = self.battery.clone();
        if let Some(ep) = self.model.eta_pseudo {
            params = params.with_eta_pseudo(ep);
        }
        let dp = match (self.model.dp_action_step, self.model.dp_soc_step) {
            (None, None) => None,
            (a, s) => {
                let d = DpConfig::for_params(&params);
                Some(DpConfig {
                    d_a: a.unwrap_or(d.d_a),
                    d_s: s.unwrap_or(d.d_s),
                })
            }
        };
        let use_flow_envelopes = self
            .markets
            .iter()
            .filter_map(|m| m.interconnector.as_ref())
            .any(|ic| ic.use_flow_envelopes);

        Ok(LoadedRun {
            params,
            home,
            remotes,
            use_flow_envelopes,
            model: self.model.id,
            dp,
            plan: self.horizon,
            options: self.solver,
            cycle_method: self.model.cycle_method,
        })
    }

    fn load_market(&self, base: &Path, m: &MarketConfig) -> Result<PriceSeries> {
        market::load_prices(
            &path_str(base, &m.file),
            &m.columns,
            m.currency_factor,
            m.id.clone(),
            m.gap_policy,
        )
    }
}

fn path_str(base: &Path, rel: &str) -> String {
    let p: PathBuf = base.join(rel);
    p.to_string_lossy().into_owned()
}

/// Slice `series` to the home market's exact timestamp range.
fn align(series: &PriceSeries, home: &PriceSeries) -> Result<PriceSeries> {
    let offset = series
        .timestamps
        .iter()
        .position(|t| *t == home.timestamps[0])
        .ok_or_else(|| {
            MreaError::Data(format!(
                "market '{}' does not cover {}",
                series.market_id,
                home.timestamps[0].to_rfc3339()
            ))
        })?;
    if offset + home.len() > series.len() {
        return Err(MreaError::Data(format!(
            "market '{}' ends before {}",
            series.market_id,
            home.timestamps[home.len() - 1].to_rfc3339()
        )));
    }
    let sliced = series.slice(offset, home.len());
    if sliced.timestamps != home.timestamps {
        return Err(MreaError::Data(format!(
            "market '{}' timestamps do not align with the home market",
            series.market_id
        )));
    }
    Ok(sliced)
}

/// Pick the value at each home timestamp out of an auxiliary series.
fn lookup_series(
    loaded: &(Vec<chrono::DateTime<chrono::Utc>>, Vec<f64>),
    home: &PriceSeries,
    file: &str,
) -> Result<Vec<f64>> {
    let map: HashMap<i64, f64> = loaded
        .0
        .iter()
        .map(|t| t.timestamp())
        .zip(loaded.1.iter().copied())
        .collect();
    home.timestamps
        .iter()
        .map(|t| {
            map.get(&t.timestamp()).copied().ok_or_else(|| {
                MreaError::Data(format!("{file}: no value for {}", t.to_rfc3339()))
            })
        })
        .collect()
}
