//! Classification and calibration metrics on arbitrary retained subsets.
//!
//! Metrics that degenerate on the given subset (AUROC or balanced accuracy
//! with a single class, anything on an empty subset) return an undefined
//! [`MetricValue`] instead of NaN or zero, so that referral curves can skip
//! them explicitly.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default number of equal-count calibration bins.
pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "auroc")]
    Auroc,
    #[serde(rename = "acc")]
    Acc,
    #[serde(rename = "bacc")]
    BAcc,
    #[serde(rename = "ap")]
    AvgPrec,
    #[serde(rename = "f1")]
    F1,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Auroc,
        MetricKind::Acc,
        MetricKind::BAcc,
        MetricKind::AvgPrec,
        MetricKind::F1,
    ];

    /// Short name used in file names and on the command line.
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Auroc => "auroc",
            MetricKind::Acc => "acc",
            MetricKind::BAcc => "bacc",
            MetricKind::AvgPrec => "ap",
            MetricKind::F1 => "f1",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?} (expected auroc, acc, bacc, ap or f1)")))
    }
}

/// A metric value, or `None` where the metric is undefined on the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: Option<f64>,
}

impl MetricValue {
    fn defined(kind: MetricKind, v: f64) -> Self {
        Self { kind, value: Some(v) }
    }

    fn undefined(kind: MetricKind) -> Self {
        Self { kind, value: None }
    }

    pub fn is_defined(&self) -> bool {
        self.value.is_some()
    }
}

/// How AUROC scores a tied (positive, negative) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    /// Ties count 0 (strict indicator).
    #[default]
    Strict,
    /// Ties count 1/2 (Mann-Whitney convention).
    Half,
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Input(format!("label {l} is not binary")));
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    (labels.len() - n1, n1)
}

/// Ascending order by score, ties by index.
fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<MetricValue> {
    auroc_with(scores, labels, TieRule::Strict)
}

/// Rank-based AUROC in `O(n log n)`, exactly equal to the pairwise sum
/// `1/(n0 n1) * sum_{pos i} sum_{neg j} [s_i > s_j]` (plus half-ties under
/// [`TieRule::Half`]).
pub fn auroc_with(scores: &[f64], labels: &[u8], ties: TieRule) -> Result<MetricValue> {
    check_lengths(scores, labels)?;
    let (n0, n1) = class_counts(labels);
    if n0 == 0 || n1 == 0 {
        return Ok(MetricValue::undefined(MetricKind::Auroc));
    }
    let order = ascending_order(scores);
    // Counts are kept doubled so the half-tie rule stays in integers.
    let mut doubled: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let s = scores[order[start]];
        let mut end = start;
        let (mut pos_here, mut neg_here) = (0u128, 0u128);
        while end < order.len() && scores[order[end]] == s {
            if labels[order[end]] == 1 {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            end += 1;
        }
        doubled += 2 * pos_here * neg_below;
        if ties == TieRule::Half {
            doubled += pos_here * neg_here;
        }
        neg_below += neg_here;
        start = end;
    }
    let pairs = (n0 as u128) * (n1 as u128);
    let value = match ties {
        TieRule::Strict => (doubled / 2) as f64 / pairs as f64,
        TieRule::Half => doubled as f64 / (2 * pairs) as f64,
    };
    Ok(MetricValue::defined(MetricKind::Auroc, value))
}

/// Fraction of records whose hard prediction (`score >= threshold`) equals the label.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricValue> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Ok(MetricValue::undefined(MetricKind::Acc));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| u8::from(s >= threshold) == y)
        .count();
    Ok(MetricValue::defined(
        MetricKind::Acc,
        correct as f64 / scores.len() as f64,
    ))
}

/// Mean of the two per-class recalls.
pub fn balanced_accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricValue> {
    check_lengths(scores, labels)?;
    let (n0, n1) = class_counts(labels);
    if n0 == 0 || n1 == 0 {
        return Ok(MetricValue::undefined(MetricKind::BAcc));
    }
    let (mut tn, mut tp) = (0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        let pred = u8::from(s >= threshold);
        match (y, pred) {
            (0, 0) => tn += 1,
            (1, 1) => tp += 1,
            _ => {}
        }
    }
    let recall0 = tn as f64 / n0 as f64;
    let recall1 = tp as f64 / n1 as f64;
    Ok(MetricValue::defined(MetricKind::BAcc, 0.5 * (recall0 + recall1)))
}

/// Average precision (step-wise area under the precision-recall curve over
/// descending score thresholds) and F1 at `threshold`.
pub fn avg_precision_f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(MetricValue, MetricValue)> {
    check_lengths(scores, labels)?;
    let (_, n1) = class_counts(labels);
    if n1 == 0 {
        return Ok((
            MetricValue::undefined(MetricKind::AvgPrec),
            MetricValue::undefined(MetricKind::F1),
        ));
    }

    let mut order = ascending_order(scores);
    order.reverse();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut start = 0;
    while start < order.len() {
        let s = scores[order[start]];
        let mut end = start;
        while end < order.len() && scores[order[end]] == s {
            tp += usize::from(labels[order[end]] == 1);
            seen += 1;
            end += 1;
        }
        let recall = tp as f64 / n1 as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        start = end;
    }

    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (y, s >= threshold) {
            (1, true) => tp += 1,
            (0, true) => fp += 1,
            (1, false) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((
        MetricValue::defined(MetricKind::AvgPrec, ap),
        MetricValue::defined(MetricKind::F1, f1),
    ))
}

/// Evaluates `kind` with the default tie rule.
pub fn evaluate(kind: MetricKind, scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricValue> {
    match kind {
        MetricKind::Auroc => auroc(scores, labels),
        MetricKind::Acc => accuracy(scores, labels, threshold),
        MetricKind::BAcc => balanced_accuracy(scores, labels, threshold),
        MetricKind::AvgPrec => Ok(avg_precision_f1(scores, labels, threshold)?.0),
        MetricKind::F1 => Ok(avg_precision_f1(scores, labels, threshold)?.1),
    }
}

/// Quantile-binned reliability data and expected calibration error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// `bins + 1` non-decreasing score edges: the first score of each bin,
    /// then the maximum score.
    pub bin_edges: Vec<f64>,
    pub bin_mean_score: Vec<f64>,
    pub bin_positive_rate: Vec<f64>,
    pub bin_counts: Vec<usize>,
    pub ece: f64,
    /// Number of bins requested.
    pub requested_bins: usize,
    /// Set when fewer records than requested bins were supplied.
    pub reduced_bins: bool,
}

impl CalibrationReport {
    pub fn n(&self) -> usize {
        self.bin_counts.iter().sum()
    }

    pub fn bins(&self) -> usize {
        self.bin_counts.len()
    }

    /// ECE recomputed from the per-bin summaries.
    pub fn recomputed_ece(&self) -> f64 {
        let n = self.n() as f64;
        self.bin_counts
            .iter()
            .zip(self.bin_mean_score.iter().zip(&self.bin_positive_rate))
            .map(|(&c, (&m, &r))| (c as f64 * (r - m)).abs())
            .sum::<f64>()
            / n
    }

    /// Whether the empirical calibration curve is non-decreasing across bins.
    pub fn is_monotone(&self) -> bool {
        self.bin_positive_rate.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Equal-count binning over sorted scores.
///
/// Nominal bin `i` starts at sorted position `floor(i * n / bins)`. A start
/// that would separate equal scores is moved forward to the end of the tie
/// run, so tied scores always share a bin; bins emptied by this are dropped.
pub fn calibration(scores: &[f64], labels: &[u8], bins: usize) -> Result<CalibrationReport> {
    check_lengths(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Input("calibration needs at least one record".into()));
    }
    if bins == 0 {
        return Err(Error::Config("calibration needs at least one bin".into()));
    }
    let n = scores.len();
    let reduced_bins = n < bins;
    let b = bins.min(n);

    let order = ascending_order(scores);
    let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let mut starts = Vec::with_capacity(b + 1);
    starts.push(0usize);
    for i in 1..b {
        let mut p = i * n / b;
        while p < n && sorted[p - 1] == sorted[p] {
            p += 1;
        }
        starts.push(p);
    }
    starts.push(n);

    let mut report = CalibrationReport {
        bin_edges: Vec::new(),
        bin_mean_score: Vec::new(),
        bin_positive_rate: Vec::new(),
        bin_counts: Vec::new(),
        ece: 0.0,
        requested_bins: bins,
        reduced_bins,
    };
    let mut gap_sum = 0.0;
    for w in starts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if lo >= hi {
            continue;
        }
        let members = &order[lo..hi];
        let count = members.len();
        let score_sum: f64 = members.iter().map(|&i| scores[i]).sum();
        let positives = members.iter().filter(|&&i| labels[i] == 1).count();
        let residual: f64 = members.iter().map(|&i| f64::from(labels[i]) - scores[i]).sum();
        gap_sum += residual.abs();
        report.bin_edges.push(sorted[lo]);
        report.bin_mean_score.push(score_sum / count as f64);
        report.bin_positive_rate.push(positives as f64 / count as f64);
        report.bin_counts.push(count);
    }
    report.bin_edges.push(sorted[n - 1]);
    report.ece = gap_sum / n as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(m: MetricValue) -> f64 {
        m.value.expect("defined")
    }

    fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> Option<f64> {
        let (mut hits, mut pairs) = (0u64, 0u64);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1;
                    hits += u64::from(scores[i] > scores[j]);
                }
            }
        }
        (pairs > 0).then(|| hits as f64 / pairs as f64)
    }

    #[test]
    fn auroc_extremes() {
        assert_eq!(v(auroc(&[0.1, 0.9], &[0, 1]).unwrap()), 1.0);
        assert_eq!(v(auroc(&[0.9, 0.1], &[0, 1]).unwrap()), 0.0);
        assert!(!auroc(&[0.1, 0.2], &[1, 1]).unwrap().is_defined());
        assert!(auroc(&[0.1], &[0, 1]).is_err());
    }

    #[test]
    fn auroc_with_one_tie_matches_pairwise_sum() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.65, 0.2, 0.9];
        let labels = [0, 0, 1, 1, 1, 0, 0, 1];
        // 16 pairs, the (0.4, 0.4) tie scores zero: 12/16.
        assert_eq!(pairwise_auroc(&scores, &labels), Some(0.75));
        assert_eq!(v(auroc(&scores, &labels).unwrap()), 0.75);
        assert_eq!(
            v(auroc_with(&scores, &labels, TieRule::Half).unwrap()),
            12.5 / 16.0
        );
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(v(accuracy(&[0.6, 0.4], &[1, 0], 0.5).unwrap()), 1.0);
        assert_eq!(v(accuracy(&[0.6, 0.4], &[0, 1], 0.5).unwrap()), 0.0);
        assert_eq!(v(accuracy(&[0.5], &[1], 0.5).unwrap()), 1.0);
        assert!(!accuracy(&[], &[], 0.5).unwrap().is_defined());
    }

    #[test]
    fn accuracy_matches_counting_loop() {
        let mut rng = crate::rng::Stream::new(11, 0);
        let scores: Vec<f64> = (0..20).map(|_| rng.uniform()).collect();
        let labels: Vec<u8> = (0..20).map(|_| (rng.uniform() < 0.5) as u8).collect();
        let mut correct = 0;
        for i in 0..20 {
            let pred = if scores[i] >= 0.5 { 1 } else { 0 };
            if pred == labels[i] {
                correct += 1;
            }
        }
        assert_eq!(
            v(accuracy(&scores, &labels, 0.5).unwrap()),
            correct as f64 / 20.0
        );
    }

    #[test]
    fn balanced_accuracy_cases() {
        let b = v(balanced_accuracy(&[0.1, 0.1, 0.9, 0.9], &[0, 0, 0, 1], 0.5).unwrap());
        assert!((b - 5.0 / 6.0).abs() < 1e-15);
        assert!(!balanced_accuracy(&[0.1, 0.9], &[0, 0], 0.5).unwrap().is_defined());
        let scores = [0.2, 0.7, 0.6, 0.3];
        let labels = [0, 0, 1, 1];
        assert_eq!(
            v(balanced_accuracy(&scores, &labels, 0.5).unwrap()),
            v(accuracy(&scores, &labels, 0.5).unwrap())
        );
    }

    #[test]
    fn average_precision_and_f1() {
        let (ap, f1) = avg_precision_f1(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 0.5).unwrap();
        assert_eq!(v(ap), 1.0);
        assert_eq!(v(f1), 1.0);
        let (ap, _) = avg_precision_f1(&[0.4, 0.6], &[1, 0], 0.5).unwrap();
        assert_eq!(v(ap), 0.5);
        let (_, f1) = avg_precision_f1(&[0.1, 0.2], &[1, 0], 0.5).unwrap();
        assert_eq!(v(f1), 0.0);
        let (ap, f1) = avg_precision_f1(&[0.1, 0.7], &[0, 0], 0.5).unwrap();
        assert!(!ap.is_defined() && !f1.is_defined());
    }

    #[test]
    fn calibration_constant_cases() {
        let scores = vec![0.5; 30];
        let labels: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
        let r = calibration(&scores, &labels, 15).unwrap();
        assert!(r.ece <= 1e-12);
        assert_eq!(r.bins(), 1);

        let r = calibration(&[0.9; 20], &[0; 20], 15).unwrap();
        assert!((r.ece - 0.9).abs() <= 1e-12);
        assert_eq!(r.bin_counts, vec![20]);
    }

    #[test]
    fn calibration_reduces_bins_for_small_inputs() {
        let r = calibration(&[0.1, 0.5, 0.9], &[0, 1, 1], 15).unwrap();
        assert!(r.reduced_bins);
        assert_eq!(r.bins(), 3);
        assert_eq!(r.bin_edges, vec![0.1, 0.5, 0.9, 0.9]);
        assert!(calibration(&[], &[], 15).is_err());
    }

    #[test]
    fn calibration_bins_are_equal_count() {
        let scores: Vec<f64> = (0..60).map(|i| (i as f64 + 0.5) / 60.0).collect();
        let labels: Vec<u8> = (0..60).map(|i| u8::from(i % 3 == 0)).collect();
        let r = calibration(&scores, &labels, 15).unwrap();
        assert_eq!(r.bin_counts, vec![4; 15]);
        assert_eq!(r.bin_edges.len(), 16);
        assert!(r.bin_edges.windows(2).all(|w| w[0] <= w[1]));
        assert!((r.recomputed_ece() - r.ece).abs() <= 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tied_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
            (2usize..200).prop_flat_map(|n| {
                (
                    prop::collection::vec((0u32..20).prop_map(|k| k as f64 / 20.0), n),
                    prop::collection::vec(0u8..2, n),
                )
            })
        }

        proptest! {
            #[test]
            fn rank_auroc_equals_pairwise((scores, labels) in tied_scores()) {
                let fast = auroc(&scores, &labels).unwrap().value;
                prop_assert_eq!(fast, pairwise_auroc(&scores, &labels));
            }

            #[test]
            fn auroc_invariant_under_increasing_maps((scores, labels) in tied_scores()) {
                let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
                prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&mapped, &labels).unwrap());
            }

            #[test]
            fn ece_recomputes_from_bins((scores, labels) in tied_scores(), bins in 1usize..20) {
                let r = calibration(&scores, &labels, bins).unwrap();
                prop_assert_eq!(r.n(), scores.len());
                prop_assert!((r.recomputed_ece() - r.ece).abs() <= 1e-12);
                prop_assert!(r.bin_edges.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}
