//! Histogram data for logit and entropy diagnostics, split by true label.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::predstore::{to_logits, PredictionSet, DEFAULT_CLAMP_EPS};
use crate::uncertainty::{uncertainty_vector, UncertaintyMode};

pub const DEFAULT_HISTOGRAM_BINS: usize = 50;

/// Equal-width bins; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            if v < lo || v > hi || v.is_nan() {
                continue;
            }
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// One histogram per true label over a shared range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelHistograms {
    pub label0: Histogram,
    pub label1: Histogram,
}

impl LabelHistograms {
    fn new(values: &[f64], labels: &[u8], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        let pick = |y: u8| -> Vec<f64> {
            values.iter().zip(labels).filter(|(_, &l)| l == y).map(|(v, _)| *v).collect()
        };
        Ok(Self {
            label0: Histogram::new(&pick(0), lo, hi, bins)?,
            label1: Histogram::new(&pick(1), lo, hi, bins)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticHistograms {
    pub uncertainty_mode: UncertaintyMode,
    /// Logits of the (clamped) scores.
    pub logit: LabelHistograms,
    /// Ranking entropy under `uncertainty_mode`, over `[0, ln 2]`.
    pub entropy: LabelHistograms,
}

pub fn diagnostic_histograms(set: &PredictionSet, mode: UncertaintyMode, bins: usize) -> Result<DiagnosticHistograms> {
    let labels = set.labels();
    let logits = to_logits(set, DEFAULT_CLAMP_EPS)?.logits;
    let (lo, hi) = logits.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let keys = uncertainty_vector(set, mode)?.keys();
    Ok(DiagnosticHistograms {
        uncertainty_mode: mode,
        logit: LabelHistograms::new(&logits, &labels, lo, hi, bins)?,
        entropy: LabelHistograms::new(&keys, &labels, 0.0, LN_2, bins)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predstore::{Domain, PredictionRecord};

    #[test]
    fn counts_cover_every_value() {
        let h = Histogram::new(&[0.0, 0.25, 0.5, 0.99, 1.0], 0.0, 1.0, 4).unwrap();
        assert_eq!(h.counts, vec![1, 1, 1, 2]);
        assert_eq!(h.edges, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(Histogram::new(&[], 1.0, 1.0, 3).is_err());
    }

    #[test]
    fn diagnostics_split_by_label() {
        let recs = (0..10)
            .map(|i| PredictionRecord::new(format!("r{i}"), Domain::InDomain, (i % 2) as u8, 0.05 + 0.09 * i as f64))
            .collect();
        let set = PredictionSet::new(recs).unwrap();
        let d = diagnostic_histograms(&set, UncertaintyMode::Aleatoric, 8).unwrap();
        assert_eq!(d.logit.label0.total() + d.logit.label1.total(), 10);
        assert_eq!(d.entropy.label1.total(), 5);
    }
}
