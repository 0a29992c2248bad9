//! Day-ahead price and interconnector flow ingestion, effective cross-border
//! prices, and congestion-adjusted operating envelopes.

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::battery::RampBounds;
use crate::{MreaError, Result};

/// Hourly buy/sell prices for one market, currency/MWh. Prices may be
/// negative. Timestamps are UTC, strictly increasing, uniformly spaced.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub market_id: String,
    pub timestamps: Vec<DateTime<Utc>>,
    pub p_buy: Vec<f64>,
    pub p_sell: Vec<f64>,
}

impl PriceSeries {
    pub fn new(
        market_id: impl Into<String>,
        timestamps: Vec<DateTime<Utc>>,
        p_buy: Vec<f64>,
        p_sell: Vec<f64>,
    ) -> Result<Self> {
        let s = PriceSeries {
            market_id: market_id.into(),
            timestamps,
            p_buy,
            p_sell,
        };
        s.validate()?;
        Ok(s)
    }

    /// Hourly series starting at `start` with p_buy = p_sell = `prices`.
    pub fn synthetic(
        market_id: impl Into<String>,
        start: DateTime<Utc>,
        prices: Vec<f64>,
    ) -> Self {
        let timestamps = (0..prices.len())
            .map(|i| start + Duration::hours(i as i64))
            .collect();
        PriceSeries {
            market_id: market_id.into(),
            timestamps,
            p_buy: prices.clone(),
            p_sell: prices,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.is_empty() {
            return Err(MreaError::Data(format!(
                "market {}: empty price series",
                self.market_id
            )));
        }
        if self.p_buy.len() != self.timestamps.len() || self.p_sell.len() != self.timestamps.len()
        {
            return Err(MreaError::LengthMismatch(format!(
                "market {}: {} timestamps vs {} buy / {} sell prices",
                self.market_id,
                self.timestamps.len(),
                self.p_buy.len(),
                self.p_sell.len()
            )));
        }
        if self.timestamps.len() >= 2 {
            let step = self.timestamps[1] - self.timestamps[0];
            if step <= Duration::zero() {
                return Err(MreaError::Data(format!(
                    "market {}: timestamps not increasing",
                    self.market_id
                )));
            }
            for w in self.timestamps.windows(2) {
                if w[1] - w[0] != step {
                    return Err(MreaError::Gap {
                        path: self.market_id.clone(),
                        locations: vec![w[1].to_rfc3339()],
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Interval spacing in hours (1.0 for single-row series).
    pub fn spacing_hours(&self) -> f64 {
        if self.timestamps.len() < 2 {
            return 1.0;
        }
        (self.timestamps[1] - self.timestamps[0]).num_seconds() as f64 / 3600.0
    }

    pub fn slice(&self, start: usize, len: usize) -> PriceSeries {
        PriceSeries {
            market_id: self.market_id.clone(),
            timestamps: self.timestamps[start..start + len].to_vec(),
            p_buy: self.p_buy[start..start + len].to_vec(),
            p_sell: self.p_sell[start..start + len].to_vec(),
        }
    }

    /// (start, len) of the intervals falling on the given UTC date, ready
    /// to feed `slice`.
    pub fn day_range(&self, date: NaiveDate) -> Option<(usize, usize)> {
        let day_start = Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0)?);
        let day_end = day_start + Duration::days(1);
        let lo = self.timestamps.partition_point(|t| *t < day_start);
        let hi = self.timestamps.partition_point(|t| *t < day_end);
        (lo < hi).then_some((lo, hi - lo))
    }
}

/// Interconnector between the battery's region and one remote market.
/// `flow` uses the convention flow > 0 = injection from the battery's
/// region toward the remote one.
#[derive(Debug, Clone, PartialEq)]
pub struct InterconnectorSpec {
    /// Rated capacity, MW.
    pub l_max: f64,
    /// Line efficiency in (0, 1].
    pub eta_line: f64,
    /// Rent in currency/MWh, one entry per interval, nonnegative.
    pub rent: Vec<f64>,
    /// Scheduled flow, MW, one entry per interval.
    pub flow: Vec<f64>,
}

impl InterconnectorSpec {
    pub fn new(l_max: f64, eta_line: f64, rent: Vec<f64>, flow: Vec<f64>) -> Result<Self> {
        let s = InterconnectorSpec {
            l_max,
            eta_line,
            rent,
            flow,
        };
        s.validate()?;
        Ok(s)
    }

    /// Lossless, rent-free, zero-flow interconnector of capacity `l_max`.
    pub fn unconstrained(l_max: f64, n: usize) -> Self {
        InterconnectorSpec {
            l_max,
            eta_line: 1.0,
            rent: vec![0.0; n],
            flow: vec![0.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_max > 0.0) {
            return Err(MreaError::InvalidParams(format!(
                "interconnector capacity {} not positive",
                self.l_max
            )));
        }
        if !(self.eta_line > 0.0 && self.eta_line <= 1.0) {
            return Err(MreaError::InvalidParams(format!(
                "line efficiency {} outside (0, 1]",
                self.eta_line
            )));
        }
        if self.rent.iter().any(|&z| z < 0.0) {
            return Err(MreaError::InvalidParams("negative interconnector rent".into()));
        }
        let tol = 1e-9 * self.l_max;
        if let Some(f) = self.flow.iter().find(|f| f.abs() > self.l_max + tol) {
            return Err(MreaError::InvalidParams(format!(
                "flow {} exceeds rated capacity {}",
                f, self.l_max
            )));
        }
        Ok(())
    }

    pub fn slice(&self, start: usize, len: usize) -> InterconnectorSpec {
        InterconnectorSpec {
            l_max: self.l_max,
            eta_line: self.eta_line,
            rent: self.rent[start..start + len].to_vec(),
            flow: self.flow[start..start + len].to_vec(),
        }
    }

    /// Same interconnector with the flow series negated.
    pub fn reversed(&self) -> InterconnectorSpec {
        InterconnectorSpec {
            flow: self.flow.iter().map(|f| -f).collect(),
            ..self.clone()
        }
    }

    /// Same interconnector with zero flow everywhere.
    pub fn without_flow(&self) -> InterconnectorSpec {
        InterconnectorSpec {
            flow: vec![0.0; self.flow.len()],
            ..self.clone()
        }
    }
}

/// Remote-market prices as seen from the battery's side of the line:
/// rent and losses raise the effective buy price and lower the sell price.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePrices {
    pub p_buy_eff: Vec<f64>,
    pub p_sell_eff: Vec<f64>,
}

/// p_buy_eff = (p_buy + rent)/eta_line, p_sell_eff = (p_sell - rent)*eta_line.
pub fn effective_prices(prices_b: &PriceSeries, ic: &InterconnectorSpec) -> Result<EffectivePrices> {
    if ic.rent.len() != prices_b.len() {
        return Err(MreaError::LengthMismatch(format!(
            "market {}: {} prices vs {} rent entries",
            prices_b.market_id,
            prices_b.len(),
            ic.rent.len()
        )));
    }
    let p_buy_eff = prices_b
        .p_buy
        .iter()
        .zip(&ic.rent)
        .map(|(p, z)| (p + z) / ic.eta_line)
        .collect();
    let p_sell_eff = prices_b
        .p_sell
        .iter()
        .zip(&ic.rent)
        .map(|(p, z)| (p - z) * ic.eta_line)
        .collect();
    Ok(EffectivePrices {
        p_buy_eff,
        p_sell_eff,
    })
}

/// Remote-market ramp envelope at interval `i` given the scheduled flow.
/// Flow toward the battery's region (negative) consumes import headroom and
/// caps remote charging; flow away (nonnegative) caps remote discharging.
/// `h` converts the MW capacity and flow to per-interval MWh.
pub fn adjusted_envelope(
    bounds: RampBounds,
    ic: &InterconnectorSpec,
    i: usize,
    h: f64,
) -> RampBounds {
    let l = ic.l_max * h;
    let f = ic.flow[i] * h;
    if f < 0.0 {
        RampBounds {
            x_min: bounds.x_min,
            x_max: bounds.x_max.min(l + f).max(0.0),
        }
    } else {
        RampBounds {
            x_min: bounds.x_min.max(-l + f).min(0.0),
            x_max: bounds.x_max,
        }
    }
}

/// Count of intervals with a negative buy price and their fraction.
pub fn negative_price_stats(prices: &PriceSeries) -> (usize, f64) {
    let n = prices.p_buy.iter().filter(|&&p| p < 0.0).count();
    let frac = if prices.is_empty() {
        0.0
    } else {
        n as f64 / prices.len() as f64
    };
    (n, frac)
}

/// Column names used when loading delimited price files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ColumnSchema {
    pub timestamp: String,
    /// Single-price column; when present it feeds both buy and sell.
    pub price: Option<String>,
    pub price_buy: Option<String>,
    pub price_sell: Option<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            timestamp: "timestamp".into(),
            price: Some("price".into()),
            price_buy: Some("price_buy".into()),
            price_sell: Some("price_sell".into()),
        }
    }
}

/// What to do about missing hours in an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Hard error naming the gap locations (default): silent filling
    /// corrupts arbitrage backtests.
    #[default]
    Error,
    /// Repeat the previous row's prices, logging a warning.
    ForwardFill,
}

/// Load a delimited price file (comma or semicolon, autodetected).
/// All prices are scaled by `currency_factor`. With a single price column,
/// buy and sell prices coincide.
pub fn load_prices(
    path: &str,
    schema: &ColumnSchema,
    currency_factor: f64,
    market_id: impl Into<String>,
    gap_policy: GapPolicy,
) -> Result<PriceSeries> {
    if !(currency_factor > 0.0) {
        return Err(MreaError::InvalidParams(format!(
            "currency factor {currency_factor} not positive"
        )));
    }
    let raw = std::fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(&raw))
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
    };
    let ts_col = find(&schema.timestamp)
        .ok_or_else(|| parse_err(path, 1, format!("missing column '{}'", schema.timestamp)))?;
    let single = schema.price.as_deref().and_then(find);
    let buy = schema.price_buy.as_deref().and_then(find);
    let sell = schema.price_sell.as_deref().and_then(find);
    let (buy_col, sell_col) = match (single, buy, sell) {
        (Some(c), _, _) => (c, c),
        (None, Some(b), Some(s)) => (b, s),
        _ => {
            return Err(parse_err(
                path,
                1,
                "need either a single price column or both buy and sell columns".into(),
            ))
        }
    };

    let mut timestamps: Vec<DateTime<Utc>> = Vec::new();
    let mut p_buy = Vec::new();
    let mut p_sell = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| parse_err(path, line, e.to_string()))?;
        let ts = parse_timestamp(record.get(ts_col).unwrap_or(""))
            .ok_or_else(|| parse_err(path, line, format!("bad timestamp '{}'", record.get(ts_col).unwrap_or(""))))?;
        let pb: f64 = parse_num(record.get(buy_col), path, line)?;
        let ps: f64 = parse_num(record.get(sell_col), path, line)?;
        timestamps.push(ts);
        p_buy.push(pb * currency_factor);
        p_sell.push(ps * currency_factor);
    }
    if timestamps.is_empty() {
        return Err(parse_err(path, 1, "no data rows".into()));
    }

    fill_gaps(path, &mut timestamps, &mut [&mut p_buy, &mut p_sell], gap_policy)?;
    PriceSeries::new(market_id, timestamps, p_buy, p_sell)
}

/// Load an interconnector flow file with columns `timestamp, flow_mw`.
pub fn load_flow(path: &str, gap_policy: GapPolicy) -> Result<(Vec<DateTime<Utc>>, Vec<f64>)> {
    load_value_series(path, "flow_mw", gap_policy)
}

/// Load a per-interval rent file with columns `timestamp, rent`.
pub fn load_rent(path: &str, gap_policy: GapPolicy) -> Result<(Vec<DateTime<Utc>>, Vec<f64>)> {
    load_value_series(path, "rent", gap_policy)
}

fn load_value_series(
    path: &str,
    value_col: &str,
    gap_policy: GapPolicy,
) -> Result<(Vec<DateTime<Utc>>, Vec<f64>)> {
    let raw = std::fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(&raw))
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let ts_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("timestamp"))
        .ok_or_else(|| parse_err(path, 1, "missing column 'timestamp'".into()))?;
    let val_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(value_col))
        .ok_or_else(|| parse_err(path, 1, format!("missing column '{value_col}'")))?;

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| parse_err(path, line, e.to_string()))?;
        let ts = parse_timestamp(record.get(ts_col).unwrap_or(""))
            .ok_or_else(|| parse_err(path, line, "bad timestamp".into()))?;
        timestamps.push(ts);
        values.push(parse_num(record.get(val_col), path, line)?);
    }
    if timestamps.is_empty() {
        return Err(parse_err(path, 1, "no data rows".into()));
    }
    fill_gaps(path, &mut timestamps, &mut [&mut values], gap_policy)?;
    Ok((timestamps, values))
}

fn detect_delimiter(raw: &str) -> u8 {
    let first = raw.lines().next().unwrap_or("");
    let semis = first.matches(';').count();
    let commas = first.matches(',').count();
    if semis > commas {
        b';'
    } else {
        b','
    }
}

fn parse_err(path: &str, line: usize, msg: String) -> MreaError {
    MreaError::Parse {
        path: path.to_string(),
        line,
        msg,
    }
}

fn parse_num(field: Option<&str>, path: &str, line: usize) -> Result<f64> {
    let s = field.unwrap_or("");
    s.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("bad number '{s}'")))
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&t));
        }
    }
    None
}

/// Enforce uniform spacing; on ForwardFill, repeat the previous row for
/// missing stamps. Duplicates and out-of-order rows are always hard errors.
fn fill_gaps(
    path: &str,
    timestamps: &mut Vec<DateTime<Utc>>,
    columns: &mut [&mut Vec<f64>],
    policy: GapPolicy,
) -> Result<()> {
    if timestamps.len() < 2 {
        return Ok(());
    }
    // Cadence = smallest positive delta; the first delta may itself be a gap.
    let mut step = Duration::MAX;
    for w in timestamps.windows(2) {
        let d = w[1] - w[0];
        if d <= Duration::zero() {
            return Err(MreaError::Gap {
                path: path.to_string(),
                locations: vec![w[1].to_rfc3339()],
            });
        }
        step = step.min(d);
    }
    let mut gaps: Vec<String> = Vec::new();
    let mut out_ts = Vec::with_capacity(timestamps.len());
    let mut out_cols: Vec<Vec<f64>> = columns.iter().map(|_| Vec::with_capacity(timestamps.len())).collect();
    out_ts.push(timestamps[0]);
    for (c, col) in columns.iter().enumerate() {
        out_cols[c].push(col[0]);
    }
    for i in 1..timestamps.len() {
        let gap = timestamps[i] - timestamps[i - 1];
        if gap != step {
            let missing = gap.num_seconds() / step.num_seconds() - 1;
            if gap.num_seconds() % step.num_seconds() != 0 || missing < 1 {
                return Err(MreaError::Gap {
                    path: path.to_string(),
                    locations: vec![timestamps[i].to_rfc3339()],
                });
            }
            gaps.push(format!("{} ({} rows)", timestamps[i - 1].to_rfc3339(), missing));
            if policy == GapPolicy::Error {
                continue; // keep scanning to report every gap at once
            }
            for k in 1..=missing {
                out_ts.push(timestamps[i - 1] + step * k as i32);
                for (c, col) in columns.iter().enumerate() {
                    out_cols[c].push(col[i - 1]);
                }
            }
        }
        out_ts.push(timestamps[i]);
        for (c, col) in columns.iter().enumerate() {
            out_cols[c].push(col[i]);
        }
    }
    if !gaps.is_empty() {
        match policy {
            GapPolicy::Error => {
                return Err(MreaError::Gap {
                    path: path.to_string(),
                    locations: gaps,
                })
            }
            GapPolicy::ForwardFill => {
                log::warn!("{path}: forward-filled {} gap(s): {}", gaps.len(), gaps.join(", "));
            }
        }
    }
    *timestamps = out_ts;
    for (c, col) in columns.iter_mut().enumerate() {
        **col = std::mem::take(&mut out_cols[c]);
    }
    Ok(())
}
