//! Scored preference pairs from outside the synthetic world.
//!
//! Input is JSON lines, one object per pair:
//!
//! ```text
//! {"id": "p1", "score_a": 0.31, "score_b": -1.2, "label": "a"}
//! ```
//!
//! `id` may be a string or an integer; `label` is optional and names the
//! preferred response (`"a"` or `"b"`).

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{LabeledPair, PreferenceDataset};
use crate::error::{Error, Result};
use crate::filtering::{self, FilterReport};
use crate::oracles::Preference;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalPair {
    pub id: String,
    pub score_a: f64,
    pub score_b: f64,
    pub label: Option<Label>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Number(i64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    id: RawId,
    score_a: f64,
    score_b: f64,
    #[serde(default)]
    label: Option<Label>,
}

impl ExternalPair {
    /// The preference implied by the scores; `None` on equal scores.
    pub fn score_preference(&self) -> Option<Preference> {
        if self.score_a > self.score_b {
            Some(Preference::A)
        } else if self.score_b > self.score_a {
            Some(Preference::B)
        } else {
            None
        }
    }

    /// The provided label disagrees with the score order. `None` when the pair
    /// is unlabeled or its scores tie.
    pub fn disagrees(&self) -> Option<bool> {
        let label = match self.label? {
            Label::A => Preference::A,
            Label::B => Preference::B,
        };
        Some(self.score_preference()? != label)
    }
}

/// Parses a scored-pair file, reporting the first malformed line by number.
pub fn ingest_external(path: &Path) -> Result<Vec<ExternalPair>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let raw: RawPair = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !raw.score_a.is_finite() || !raw.score_b.is_finite() {
            return Err(parse_err("scores must be finite".into()));
        }
        pairs.push(ExternalPair {
            id: match raw.id {
                RawId::Text(s) => s,
                RawId::Number(n) => n.to_string(),
            },
            score_a: raw.score_a,
            score_b: raw.score_b,
            label: raw.label,
        });
    }
    if pairs.is_empty() {
        return Err(Error::usage(format!("{} contains no pairs", path.display())));
    }
    Ok(pairs)
}

/// Fraction of labeled, non-tied pairs whose label contradicts the scores.
pub fn disagreement_rate(pairs: &[ExternalPair]) -> Option<f64> {
    let judged: Vec<bool> = pairs.iter().filter_map(ExternalPair::disagrees).collect();
    if judged.is_empty() {
        return None;
    }
    Some(judged.iter().filter(|&&d| d).count() as f64 / judged.len() as f64)
}

/// `(score_a, score_b)` per pair, the input of oracle calibration.
pub fn score_pairs(pairs: &[ExternalPair]) -> Vec<(f64, f64)> {
    pairs.iter().map(|p| (p.score_a, p.score_b)).collect()
}

/// Labeled pairs with scores standing in for gold rewards, so that filtering
/// statistics and noise rates apply. Pair `i` becomes prompt `i` with
/// candidates `0` (a) and `1` (b). Unlabeled pairs follow their scores.
pub fn to_dataset(pairs: &[ExternalPair]) -> PreferenceDataset {
    PreferenceDataset::new(
        pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let a_wins = match p.label {
                    Some(Label::A) => true,
                    Some(Label::B) => false,
                    None => p.score_a >= p.score_b,
                };
                if a_wins {
                    LabeledPair::from_margin(i, 0, 1, p.score_a - p.score_b)
                } else {
                    LabeledPair::from_margin(i, 1, 0, p.score_b - p.score_a)
                }
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub n_pairs: usize,
    pub n_labeled: usize,
    pub disagreement_rate: Option<f64>,
    pub retention: Vec<FilterReport>,
}

pub fn ingest_report(pairs: &[ExternalPair], thresholds: &[f64]) -> Result<IngestReport> {
    Ok(IngestReport {
        n_pairs: pairs.len(),
        n_labeled: pairs.iter().filter(|p| p.label.is_some()).count(),
        disagreement_rate: disagreement_rate(pairs),
        retention: filtering::retention_stats(&to_dataset(pairs), thresholds)?,
    })
}
