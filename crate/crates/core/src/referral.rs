//! Referral (selective classification) curves.
//!
//! At referral rate `r` the least confident records are deferred and a metric
//! is evaluated on the rest. Two policies are implemented:
//!
//! * **Standard**: rank every record by one uncertainty key and refer the
//!   `floor(r * n)` highest.
//! * **Split**: partition by hard prediction (`score >= threshold` is
//!   positive), then refer `floor(r * |class|)` of the highest-uncertainty
//!   records from each predicted class. Predicted-label proportions are
//!   preserved up to rounding at every rate.
//!
//! Within a ranking, equal uncertainties are ordered by record index with the
//! lower index retained first. Both policies share that rule, so on sets
//! whose two predicted classes carry identical uncertainty profiles they
//! retain the same records.
//!
//! The area under the referral curve (AURC) is the mean metric over the
//! percentile grid `0.00, 0.01, ..., 0.95`; rates where the metric is
//! undefined are skipped and counted.

use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, MetricKind};
use crate::predstore::{PredictionSet, DEFAULT_THRESHOLD};
use crate::uncertainty::{self, UncertaintyMode, UncertaintyVector};

/// Largest grid rate, in percent.
pub const DEFAULT_GRID_MAX: u32 = 95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferralKind {
    Standard,
    Split,
}

impl ReferralKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReferralKind::Standard => "standard",
            ReferralKind::Split => "split",
        }
    }
}

impl FromStr for ReferralKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "split" => Ok(Self::Split),
            other => Err(Error::Config(format!("unknown referral policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferralPolicy {
    pub kind: ReferralKind,
    pub uncertainty_mode: UncertaintyMode,
    /// Prediction split point; ignored by [`ReferralKind::Standard`].
    pub threshold: f64,
}

impl ReferralPolicy {
    pub fn standard(mode: UncertaintyMode) -> Self {
        Self {
            kind: ReferralKind::Standard,
            uncertainty_mode: mode,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn split(mode: UncertaintyMode) -> Self {
        Self {
            kind: ReferralKind::Split,
            uncertainty_mode: mode,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Referral rates at which a curve is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateGrid {
    rates: Vec<f64>,
}

impl RateGrid {
    /// `0.00, 0.01, ..., max_percent / 100`.
    pub fn percentiles(max_percent: u32) -> Result<Self> {
        Self::uniform(100, max_percent)
    }

    /// `k / steps` for `k = 0..=max_step`; finer than percentiles when
    /// `steps > 100`.
    pub fn uniform(steps: u32, max_step: u32) -> Result<Self> {
        if steps == 0 || max_step >= steps {
            return Err(Error::Config(format!(
                "grid needs 0 <= max_step < steps, got {max_step} / {steps}"
            )));
        }
        Ok(Self {
            rates: (0..=max_step).map(|k| f64::from(k) / f64::from(steps)).collect(),
        })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

impl Default for RateGrid {
    fn default() -> Self {
        Self::percentiles(DEFAULT_GRID_MAX).expect("valid default grid")
    }
}

/// `floor(r * n)`, treating products within 1e-9 (relative) of an integer as
/// that integer so `0.29 * 100` refers 29 records, not 28.
pub fn referred_count(r: f64, n: usize) -> usize {
    let x = r * n as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.floor()
    };
    (k.max(0.0) as usize).min(n)
}

fn check_rate(r: f64) -> Result<()> {
    if (0.0..1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::Domain(format!("referral rate {r} outside [0, 1)")))
    }
}

fn check_aligned(set: &PredictionSet, u: &UncertaintyVector) -> Result<()> {
    if set.len() == u.len() {
        Ok(())
    } else {
        Err(Error::Input(format!(
            "{} records but {} uncertainty values",
            set.len(),
            u.len()
        )))
    }
}

/// Indices of the records kept at a referral rate, in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedSet {
    pub indices: Vec<usize>,
    pub rate: f64,
}

impl RetainedSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `members` sorted most-confident first: ascending key, then ascending index.
fn retention_order(keys: &[f64], members: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut order: Vec<usize> = members.into_iter().collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    order
}

/// Precomputed rankings from which the retained set at any rate is a prefix
/// (Standard) or a union of prefixes (Split).
#[derive(Debug, Clone)]
struct Ranking {
    groups: Vec<Vec<usize>>,
}

impl Ranking {
    fn new(set: &PredictionSet, keys: &[f64], policy: &ReferralPolicy) -> Result<Self> {
        let groups = match policy.kind {
            ReferralKind::Standard => vec![retention_order(keys, 0..set.len())],
            ReferralKind::Split => {
                let split = crate::predstore::split_by_prediction(set, policy.threshold)?;
                vec![
                    retention_order(keys, split.negatives),
                    retention_order(keys, split.positives),
                ]
            }
        };
        Ok(Self { groups })
    }

    fn retain(&self, r: f64) -> RetainedSet {
        let mut indices: Vec<usize> = self
            .groups
            .iter()
            .flat_map(|g| g[..g.len() - referred_count(r, g.len())].iter().copied())
            .collect();
        indices.sort_unstable();
        RetainedSet { indices, rate: r }
    }
}

/// Refers the `floor(r * n)` least confident records.
pub fn retain_standard(set: &PredictionSet, u: &UncertaintyVector, r: f64) -> Result<RetainedSet> {
    check_aligned(set, u)?;
    check_rate(r)?;
    let policy = ReferralPolicy::standard(u.mode);
    Ok(Ranking::new(set, &u.keys(), &policy)?.retain(r))
}

/// Refers `floor(r * |class|)` of the least confident records from each
/// predicted class.
pub fn retain_split(set: &PredictionSet, u: &UncertaintyVector, r: f64, threshold: f64) -> Result<RetainedSet> {
    check_aligned(set, u)?;
    check_rate(r)?;
    let policy = ReferralPolicy {
        kind: ReferralKind::Split,
        uncertainty_mode: u.mode,
        threshold,
    };
    Ok(Ranking::new(set, &u.keys(), &policy)?.retain(r))
}

/// Metric values over a rate grid plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferralCurve {
    pub metric: MetricKind,
    pub policy: ReferralPolicy,
    pub rates: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub aurc: f64,
    /// Grid points where the metric was undefined and left out of `aurc`.
    pub skipped: usize,
}

impl ReferralCurve {
    /// Writes `rate,value,defined`; undefined values leave `value` empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["rate", "value", "defined"])?;
        for (r, v) in self.rates.iter().zip(&self.values) {
            let value = v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([r.to_string(), value, v.is_some().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV form back into `(rate, value)` pairs.
    pub fn read_csv<R: Read>(reader: R) -> Result<Vec<(f64, Option<f64>)>> {
        let mut rdr = csv::Reader::from_reader(reader);
        if rdr.headers()?.iter().collect::<Vec<_>>() != ["rate", "value", "defined"] {
            return Err(Error::Schema("curve header must be rate,value,defined".into()));
        }
        let mut out = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |m: &str| Error::Parse { row: i + 1, message: m.to_string() };
            let rate: f64 = row[0].parse().map_err(|_| bad("rate"))?;
            let value = match &row[2] {
                "true" => Some(row[1].parse::<f64>().map_err(|_| bad("value"))?),
                "false" if row[1].is_empty() => None,
                _ => return Err(bad("defined flag inconsistent with value")),
            };
            out.push((rate, value));
        }
        Ok(out)
    }

    /// Number of grid points in the longest strictly decreasing run of
    /// consecutive defined values (1 for a non-decreasing curve, 0 if empty).
    pub fn longest_decreasing_segment(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        let mut prev: Option<f64> = None;
        for v in &self.values {
            run = match (prev, v) {
                (Some(p), Some(x)) if *x < p => run + 1,
                (_, Some(_)) => 1,
                (_, None) => 0,
            };
            prev = *v;
            best = best.max(run);
        }
        best
    }

    /// Value at the first grid point (no referral).
    pub fn initial(&self) -> Option<f64> {
        self.values.first().copied().flatten()
    }
}

fn evaluate_retained(
    scores: &[f64],
    labels: &[u8],
    retained: &RetainedSet,
    metric: MetricKind,
    threshold: f64,
) -> Result<Option<f64>> {
    let s: Vec<f64> = retained.indices.iter().map(|&i| scores[i]).collect();
    let y: Vec<u8> = retained.indices.iter().map(|&i| labels[i]).collect();
    Ok(metrics::evaluate(metric, &s, &y, threshold)?.value)
}

/// Curve for `metric` under `policy`, with uncertainty derived from `set`.
pub fn referral_curve(
    set: &PredictionSet,
    policy: &ReferralPolicy,
    metric: MetricKind,
    grid: &RateGrid,
) -> Result<ReferralCurve> {
    let u = uncertainty::uncertainty_vector(set, policy.uncertainty_mode)?;
    Ok(referral_curves_with(set, &u, policy, &[metric], grid)?.remove(0))
}

/// Curves for several metrics sharing one ranking. `u` supplies the
/// ranking keys, so externally computed uncertainties can be used.
pub fn referral_curves_with(
    set: &PredictionSet,
    u: &UncertaintyVector,
    policy: &ReferralPolicy,
    metrics_wanted: &[MetricKind],
    grid: &RateGrid,
) -> Result<Vec<ReferralCurve>> {
    check_aligned(set, u)?;
    let ranking = Ranking::new(set, &u.keys(), policy)?;
    let scores = set.scores();
    let labels = set.labels();
    // Metric evaluation is hard-thresholded at 0.5 regardless of the split point.
    let metric_threshold = DEFAULT_THRESHOLD;

    let per_rate: Vec<Vec<Option<f64>>> = grid
        .rates()
        .par_iter()
        .map(|&r| {
            let retained = ranking.retain(r);
            metrics_wanted
                .iter()
                .map(|&m| evaluate_retained(&scores, &labels, &retained, m, metric_threshold))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    metrics_wanted
        .iter()
        .enumerate()
        .map(|(j, &metric)| {
            let values: Vec<Option<f64>> = per_rate.iter().map(|row| row[j]).collect();
            if values.first().copied().flatten().is_none() {
                return Err(Error::Curve(format!(
                    "{metric} is undefined on the full set; no curve can be drawn"
                )));
            }
            let defined: Vec<f64> = values.iter().flatten().copied().collect();
            let aurc = defined.iter().sum::<f64>() / defined.len() as f64;
            Ok(ReferralCurve {
                metric,
                policy: *policy,
                rates: grid.rates().to_vec(),
                skipped: values.len() - defined.len(),
                values,
                aurc,
            })
        })
        .collect()
}

/// Right-continuous empirical CDF of entropies within one predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCdf {
    sorted: Vec<f64>,
}

impl EntropyCdf {
    pub fn new(mut values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        Some(Self { sorted: values })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of entropies `<= h`.
    pub fn eval(&self, h: f64) -> f64 {
        self.sorted.partition_point(|&x| x <= h) as f64 / self.sorted.len() as f64
    }

    /// Smallest entropy `h` with `eval(h) >= c`; `-inf` for `c <= 0`.
    pub fn inverse(&self, c: f64) -> f64 {
        if c <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let n = self.sorted.len();
        let k = n - referred_count(1.0 - c.min(1.0), n);
        self.sorted[k.max(1) - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }
}

/// Per-predicted-class entropy CDFs; a class with no records has no CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntropyCdfs {
    pub negative: Option<EntropyCdf>,
    pub positive: Option<EntropyCdf>,
}

impl ClassEntropyCdfs {
    /// Score threshold `z0(c)`: negatives with score `<= z0` are retained at
    /// coverage `c`. Meaningful for deterministic (aleatoric) keys.
    pub fn z0(&self, c: f64) -> Option<f64> {
        let h = self.negative.as_ref()?.inverse(c);
        if h == f64::NEG_INFINITY {
            return Some(f64::NEG_INFINITY);
        }
        uncertainty::inverse_binary_entropy(h).ok()
    }

    /// Score threshold `z1(c)`: positives with score `>= z1` are retained.
    pub fn z1(&self, c: f64) -> Option<f64> {
        let h = self.positive.as_ref()?.inverse(c);
        if h == f64::NEG_INFINITY {
            return Some(f64::INFINITY);
        }
        uncertainty::inverse_binary_entropy(h).ok().map(|z| 1.0 - z)
    }
}

pub fn entropy_cdf(set: &PredictionSet, u: &UncertaintyVector, threshold: f64) -> Result<ClassEntropyCdfs> {
    check_aligned(set, u)?;
    let split = crate::predstore::split_by_prediction(set, threshold)?;
    let keys = u.keys();
    let pick = |idx: &[usize]| EntropyCdf::new(idx.iter().map(|&i| keys[i]).collect());
    Ok(ClassEntropyCdfs {
        negative: pick(&split.negatives),
        positive: pick(&split.positives),
    })
}
