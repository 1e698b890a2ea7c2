//! Predictive entropy and its total / aleatoric / epistemic decomposition.
//!
//! For a record with Monte-Carlo samples `p_1..p_M` of the positive-class
//! probability:
//!
//! * total     = H(mean_k p_k)
//! * aleatoric = mean_k H(p_k)
//! * epistemic = total - aleatoric (the mutual information between the label
//!   and the model parameters)
//!
//! All entropies are in nats. Deterministic records are treated as `M = 1`,
//! for which epistemic uncertainty is exactly zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::predstore::{PredictionRecord, PredictionSet};

/// Binary entropy `-p ln p - (1-p) ln(1-p)` in nats, with `0 ln 0 = 0`.
///
/// Evaluated on `q = min(p, 1 - p)` so that the value depends only on the
/// distance of `p` from 0.5.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked(p: f64) -> f64 {
    let q = p.min(1.0 - p);
    if q <= 0.0 {
        return 0.0;
    }
    -(q * q.ln()) - (1.0 - q) * (1.0 - q).ln()
}

/// Inverse of the binary entropy on the lower branch: the `z` in `[0, 0.5]`
/// with `H(z) = h`. Bisection to full `f64` resolution.
pub fn inverse_binary_entropy(h: f64) -> Result<f64> {
    if !(0.0..=std::f64::consts::LN_2).contains(&h) {
        return Err(Error::Domain(format!("entropy {h} outside [0, ln 2]")));
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if entropy_unchecked(mid) < h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Converts nats to bits, for display.
pub fn nats_to_bits(h: f64) -> f64 {
    h / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
    pub mean_score: f64,
}

impl UncertaintyRecord {
    pub fn key(&self, mode: UncertaintyMode) -> f64 {
        match mode {
            UncertaintyMode::Aleatoric => self.aleatoric,
            UncertaintyMode::Total => self.total,
        }
    }
}

/// Which entropy is used to rank records for referral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyMode {
    /// Mean per-sample predictive entropy.
    #[default]
    Aleatoric,
    /// Entropy of the mean prediction.
    Total,
}

impl FromStr for UncertaintyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aleatoric" | "aleatoric_only" => Ok(Self::Aleatoric),
            "total" => Ok(Self::Total),
            other => Err(Error::Config(format!("unknown uncertainty mode {other:?}"))),
        }
    }
}

impl UncertaintyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Aleatoric => "aleatoric",
            Self::Total => "total",
        }
    }
}

/// Decomposes a record's predictive uncertainty.
///
/// `total == aleatoric + epistemic` holds exactly in `f64`.
pub fn decompose(record: &PredictionRecord) -> Result<UncertaintyRecord> {
    match &record.mc_scores {
        None => decompose_samples(std::slice::from_ref(&record.score)),
        Some(mc) => decompose_samples(mc),
    }
}

/// Decomposition for a raw list of Monte-Carlo probabilities.
pub fn decompose_samples(samples: &[f64]) -> Result<UncertaintyRecord> {
    if samples.is_empty() {
        return Err(Error::Input("empty Monte-Carlo sample list".into()));
    }
    let m = samples.len() as f64;
    let mut sum = 0.0;
    let mut ent_sum = 0.0;
    for &p in samples {
        ent_sum += binary_entropy(p)?;
        sum += p;
    }
    let mean_score = (sum / m).clamp(0.0, 1.0);
    let aleatoric = ent_sum / m;
    let total = entropy_unchecked(mean_score);
    let epistemic = exact_difference(total, aleatoric);
    Ok(UncertaintyRecord {
        total,
        aleatoric,
        epistemic,
        mean_score,
    })
}

/// Returns `d` such that `b + d == a` in floating point.
///
/// `a - b` is usually that value; when the subtraction rounds the other way
/// the result is nudged by single ulps.
fn exact_difference(a: f64, b: f64) -> f64 {
    let mut d = a - b;
    for _ in 0..8 {
        let s = b + d;
        if s == a {
            break;
        }
        d = if s < a { d.next_up() } else { d.next_down() };
    }
    d
}

/// One [`UncertaintyRecord`] per record, aligned with the source set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyVector {
    pub records: Vec<UncertaintyRecord>,
    pub mode: UncertaintyMode,
}

impl UncertaintyVector {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Ranking keys under the vector's mode; higher means less confident.
    pub fn keys(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.key(self.mode)).collect()
    }

    /// Uniform keys, for callers that bring their own uncertainty measure.
    pub fn from_keys(keys: &[f64]) -> Self {
        let records = keys
            .iter()
            .map(|&k| UncertaintyRecord {
                total: k,
                aleatoric: k,
                epistemic: 0.0,
                mean_score: f64::NAN,
            })
            .collect();
        Self {
            records,
            mode: UncertaintyMode::Aleatoric,
        }
    }
}

pub fn uncertainty_vector(set: &PredictionSet, mode: UncertaintyMode) -> Result<UncertaintyVector> {
    let records = set
        .records()
        .par_iter()
        .map(decompose)
        .collect::<Result<Vec<_>>>()?;
    Ok(UncertaintyVector { records, mode })
}
