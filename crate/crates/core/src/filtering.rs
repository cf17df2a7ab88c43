//! Confidence-based data filtering.
//!
//! A pair is kept when its Bradley-Terry confidence exceeds a threshold `t`.
//! The default confidence is label-agnostic, `σ(|Δr*|)`: it measures how
//! clearly the gold reward separates the two responses, whichever way the
//! oracle labeled them, so `t = 0.5` keeps every pair with a nonzero margin.
//! [`ConfidenceMode::Signed`] keeps the literal `σ(r*(y_w) − r*(y_l))` for
//! comparison; under it `t = 0.5` removes exactly the flipped pairs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{measure_noise_rate, LabeledPair, PreferenceDataset};
use crate::error::{Error, Result};
use crate::math::sigmoid;

/// Thresholds swept by default.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMode {
    /// `σ(|gold_margin|)`.
    #[default]
    Magnitude,
    /// `σ(gold_margin)`, relative to the oracle's chosen winner.
    Signed,
}

pub fn confidence(pair: &LabeledPair) -> f64 {
    confidence_with(pair, ConfidenceMode::Magnitude)
}

pub fn confidence_with(pair: &LabeledPair, mode: ConfidenceMode) -> f64 {
    match mode {
        ConfidenceMode::Magnitude => sigmoid(pair.gold_margin.abs()),
        ConfidenceMode::Signed => sigmoid(pair.gold_margin),
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.5..1.0).contains(&t) {
        return Err(Error::usage(format!(
            "filter threshold must lie in [0.5, 1), got {t}"
        )));
    }
    Ok(())
}

/// Keeps the pairs whose confidence is strictly larger than `t`, in order.
pub fn filter_dataset(dataset: &PreferenceDataset, t: f64) -> Result<PreferenceDataset> {
    filter_dataset_with(dataset, t, ConfidenceMode::Magnitude)
}

pub fn filter_dataset_with(dataset: &PreferenceDataset, t: f64, mode: ConfidenceMode) -> Result<PreferenceDataset> {
    check_threshold(t)?;
    Ok(PreferenceDataset {
        pairs: dataset
            .pairs
            .iter()
            .filter(|p| confidence_with(p, mode) > t)
            .copied()
            .collect(),
        provenance: dataset.provenance.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub threshold: f64,
    pub kept: usize,
    pub kept_fraction: f64,
    pub noise_before: f64,
    /// `None` when nothing survives the threshold.
    pub noise_after: Option<f64>,
}

/// Retention and post-filter noise rate at each threshold.
pub fn retention_stats(dataset: &PreferenceDataset, thresholds: &[f64]) -> Result<Vec<FilterReport>> {
    retention_stats_with(dataset, thresholds, ConfidenceMode::Magnitude)
}

pub fn retention_stats_with(
    dataset: &PreferenceDataset,
    thresholds: &[f64],
    mode: ConfidenceMode,
) -> Result<Vec<FilterReport>> {
    let noise_before = measure_noise_rate(dataset)?;
    thresholds
        .iter()
        .map(|&t| {
            let kept = filter_dataset_with(dataset, t, mode)?;
            Ok(FilterReport {
                threshold: t,
                kept: kept.len(),
                kept_fraction: kept.len() as f64 / dataset.len() as f64,
                noise_before,
                noise_after: measure_noise_rate(&kept).ok(),
            })
        })
        .collect()
}

/// Writes reports as CSV: `threshold,kept,kept_fraction,noise_before,noise_after`.
pub fn write_reports_csv(reports: &[FilterReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
