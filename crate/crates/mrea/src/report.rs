//! Output files: dispatch series, indices tables, backtest tables, sweep
//! tables, and a JSON run manifest tying results back to the exact config.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metrics::PerformanceIndices;
use crate::sim::SimulationReport;
use crate::{MreaError, Result};

/// One row of a model-comparison or single-solve indices table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    /// Flow scenario label: "none", "file", or "reversed".
    pub flow: String,
    pub indices: PerformanceIndices,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|r| format!("{r:.6}")).unwrap_or_default()
}

pub fn indices_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("model,flow,revenue,cycles,revenue_per_cycle,m_ind\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{},{:.3e}",
            r.model,
            r.flow,
            r.indices.revenue,
            r.indices.cycles,
            fmt_opt(r.indices.revenue_per_cycle),
            r.indices.m_ind
        )
        .unwrap();
    }
    out
}

/// Per-interval dispatch of one solve. `series` holds one named column per
/// market; `z` adds the mode binaries when the model has them.
pub fn dispatch_csv(
    timestamps: &[DateTime<Utc>],
    series: &[(String, Vec<f64>)],
    soc: &[f64],
    z: Option<(&[f64], &[f64])>,
) -> String {
    let mut out = String::from("timestamp");
    for (name, _) in series {
        write!(out, ",x_{name}").unwrap();
    }
    out.push_str(",soc");
    if z.is_some() {
        out.push_str(",z_ch,z_dis");
    }
    out.push('\n');
    for i in 0..timestamps.len() {
        write!(out, "{}", timestamps[i].to_rfc3339()).unwrap();
        for (_, xs) in series {
            write!(out, ",{:.9}", xs[i]).unwrap();
        }
        write!(out, ",{:.9}", soc[i]).unwrap();
        if let Some((zc, zd)) = z {
            write!(out, ",{:.0},{:.0}", zc[i], zd[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Yearly table in the shape of the long-run benchmarks: one row per year,
/// a totals row, and both revenue-per-cycle conventions (ratio of totals on
/// the totals row, mean of yearly ratios on its own line).
pub fn backtest_csv(report: &SimulationReport) -> String {
    let mut out = String::from("year,revenue,cycles,revenue_per_cycle,m_ind,wall_time_s\n");
    let mut row = |label: &str, ix: &PerformanceIndices| {
        writeln!(
            out,
            "{label},{:.6},{:.6},{},{:.3e},{:.3}",
            ix.revenue,
            ix.cycles,
            fmt_opt(ix.revenue_per_cycle),
            ix.m_ind,
            ix.wall_time
        )
        .unwrap();
    };
    for y in &report.years {
        row(&y.year.to_string(), &y.indices);
    }
    row("total", &report.totals);
    if let Some(m) = report.mean_yearly_revenue_per_cycle {
        writeln!(out, "mean_yearly,,,{m:.6},,").unwrap();
    }
    out
}

/// Planning-efficiency sweep rows for revenue/cycle trade-off plots.
pub fn sweep_csv(rows: &[(f64, PerformanceIndices)]) -> String {
    let mut out = String::from("eta_pseudo,revenue,cycles,revenue_per_cycle\n");
    for (ep, ix) in rows {
        writeln!(
            out,
            "{ep},{:.6},{:.6},{}",
            ix.revenue,
            ix.cycles,
            fmt_opt(ix.revenue_per_cycle)
        )
        .unwrap();
    }
    out
}

/// Reproducibility record written next to every result set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub model: String,
    pub config_path: String,
    pub config_sha256: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub solver_status: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub created_utc: String,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| MreaError::Config(e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    digest.iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

/// Write a file, creating parent directories as needed.
pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}
