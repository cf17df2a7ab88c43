//! Tidy per-cell aggregates for plotting.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::ResultRecord;
use crate::error::{Error, Result};
use crate::eval;
use crate::oracles::NoiseFamily;

/// The swept quantity placed on the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XVar {
    TargetRate,
    Beta,
    DropoutRate,
    FilterThreshold,
}

impl XVar {
    pub fn name(self) -> &'static str {
        match self {
            XVar::TargetRate => "target_rate",
            XVar::Beta => "beta",
            XVar::DropoutRate => "dropout_rate",
            XVar::FilterThreshold => "filter_threshold",
        }
    }

    /// The record's x value; an unfiltered run sits at threshold 0.5.
    fn value(self, r: &ResultRecord) -> f64 {
        match self {
            XVar::TargetRate => r.target_rate,
            XVar::Beta => r.beta,
            XVar::DropoutRate => r.dropout_rate,
            XVar::FilterThreshold => r.filter_threshold.unwrap_or(0.5),
        }
    }

    /// Settings that are neither on the x axis nor the noise family.
    fn series(self, r: &ResultRecord) -> String {
        let mut parts = Vec::new();
        if self != XVar::TargetRate {
            parts.push(format!("rate={}", r.target_rate));
        }
        if self != XVar::Beta {
            parts.push(format!("beta={}", r.beta));
        }
        if self != XVar::DropoutRate {
            parts.push(format!("dropout={}", r.dropout_rate));
        }
        if self != XVar::FilterThreshold {
            parts.push(match r.filter_threshold {
                Some(t) => format!("t={t}"),
                None => "t=none".to_string(),
            });
        }
        parts.join(";")
    }
}

impl FromStr for XVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target_rate" => Ok(XVar::TargetRate),
            "beta" => Ok(XVar::Beta),
            "dropout_rate" => Ok(XVar::DropoutRate),
            "filter_threshold" => Ok(XVar::FilterThreshold),
            other => Err(Error::usage(format!(
                "unknown x variable `{other}` (expected target_rate, beta, dropout_rate or filter_threshold)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub x_var: String,
    pub x_value: f64,
    pub noise_family: NoiseFamily,
    pub mean_win_rate: f64,
    /// Absent when fewer than two seeds succeeded.
    pub ci_half_width: Option<f64>,
    pub n_seeds: usize,
    pub series: String,
}

/// Aggregates successful records per (noise family, x value, series) with a
/// 95% two-tailed t interval.
pub fn emit_plot_data(records: &[ResultRecord], x_var: XVar) -> Result<Vec<PlotRow>> {
    let mut groups: BTreeMap<(NoiseFamily, String, u64), (f64, Vec<f64>, &str)> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.failed) {
        let Some(w) = r.win_rate else { continue };
        let x = x_var.value(r);
        // Keyed by the bit pattern after the series so rows sort by x within a series.
        let key = (r.noise_family, x_var.series(r), x.to_bits());
        let entry = groups.entry(key).or_insert((x, Vec::new(), &r.base_fingerprint));
        if entry.2 != r.base_fingerprint {
            return Err(Error::usage(format!(
                "records from different worlds/reference policies ({} and {}) fall in one plot cell",
                entry.2, r.base_fingerprint
            )));
        }
        entry.1.push(w);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((family, series, _), (x, values, _)) in groups {
        let (mean, ci) = if values.len() >= 2 {
            let a = eval::aggregate(&values, 0.95)?;
            (a.mean, Some(a.ci_half_width))
        } else {
            (values[0], None)
        };
        rows.push(PlotRow {
            x_var: x_var.name().to_string(),
            x_value: x,
            noise_family: family,
            mean_win_rate: mean,
            ci_half_width: ci,
            n_seeds: values.len(),
            series,
        });
    }
    rows.sort_by(|a, b| {
        (a.noise_family, &a.series)
            .cmp(&(b.noise_family, &b.series))
            .then(a.x_value.total_cmp(&b.x_value))
    });
    Ok(rows)
}

/// Writes rows as CSV: `x_var,x_value,noise_family,mean_win_rate,ci_half_width,n_seeds,series`.
pub fn write_plot_csv(path: &Path, rows: &[PlotRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
