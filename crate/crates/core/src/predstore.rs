//! Prediction records, file ingestion and the log-odds view.
//!
//! A [`PredictionSet`] is the universal evaluation input: one record per test
//! sample carrying the positive-class probability, the binary label, a domain
//! tag and optionally a fixed number of Monte-Carlo score samples.
//!
//! Two interchange formats are supported. CSV is canonical:
//!
//! ```text
//! id,domain,label,score[,mc_0,...,mc_{M-1}]
//! ```
//!
//! with `domain` one of `ID`/`OOD` and `label` one of `0`/`1`. JSON mirrors
//! it as a top-level array of objects with the same keys and `mc` as an
//! array.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clamp applied to probabilities before taking logs.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

/// Default decision threshold; a score equal to it is a positive prediction.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "ID")]
    InDomain,
    #[serde(rename = "OOD")]
    OutOfDomain,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::InDomain => "ID",
            Domain::OutOfDomain => "OOD",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ID" => Ok(Domain::InDomain),
            "OOD" => Ok(Domain::OutOfDomain),
            other => Err(Error::Input(format!("unknown domain tag {other:?} (expected ID or OOD)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub domain: Domain,
    pub label: u8,
    /// Probability of the positive class.
    pub score: f64,
    /// Monte-Carlo samples of the positive-class probability.
    #[serde(rename = "mc", default, skip_serializing_if = "Option::is_none")]
    pub mc_scores: Option<Vec<f64>>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, domain: Domain, label: u8, score: f64) -> Self {
        Self {
            id: id.into(),
            domain,
            label,
            score,
            mc_scores: None,
        }
    }

    pub fn with_mc(mut self, mc_scores: Vec<f64>) -> Self {
        self.mc_scores = Some(mc_scores);
        self
    }

    /// Hard prediction at `threshold` (`score >= threshold` is positive).
    pub fn predicted(&self, threshold: f64) -> u8 {
        u8::from(self.score >= threshold)
    }

    fn validate(&self, row: usize) -> Result<()> {
        let bad = |message: String| Error::Validation { row, message };
        if self.label > 1 {
            return Err(bad(format!("label {} is not 0 or 1", self.label)));
        }
        if !is_probability(self.score) {
            return Err(bad(format!("score {} outside [0, 1]", self.score)));
        }
        if let Some(mc) = &self.mc_scores {
            if mc.is_empty() {
                return Err(bad("empty Monte-Carlo sample list".into()));
            }
            if let Some((k, v)) = mc.iter().enumerate().find(|(_, v)| !is_probability(**v)) {
                return Err(bad(format!("mc_{k} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn is_probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

/// Validated, immutable, insertion-ordered collection of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    records: Vec<PredictionRecord>,
    mc_count: Option<usize>,
}

impl PredictionSet {
    /// Validates and wraps `records`. Row numbers in errors are 1-based.
    pub fn new(records: Vec<PredictionRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Input("prediction set is empty".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        let mut mc_count: Option<Option<usize>> = None;
        for (i, rec) in records.iter().enumerate() {
            let row = i + 1;
            rec.validate(row)?;
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::Validation {
                    row,
                    message: format!("duplicate id {:?}", rec.id),
                });
            }
            let m = rec.mc_scores.as_ref().map(Vec::len);
            match mc_count {
                None => mc_count = Some(m),
                Some(expected) if expected != m => {
                    return Err(Error::Schema(format!(
                        "row {row} has {} Monte-Carlo samples, expected {}",
                        m.unwrap_or(0),
                        expected.unwrap_or(0)
                    )));
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            records,
            mc_count: mc_count.flatten(),
        })
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Always false; construction rejects empty sets.
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mc_count(&self) -> Option<usize> {
        self.mc_count
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PredictionRecord> {
        self.records.iter()
    }

    /// Records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.records[i].clone()).collect())
    }

    /// Records with the given domain tag, or `None` if there are none.
    pub fn filter_domain(&self, domain: Domain) -> Option<Self> {
        let records: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.domain == domain)
            .cloned()
            .collect();
        if records.is_empty() {
            None
        } else {
            Some(Self {
                records,
                mc_count: self.mc_count,
            })
        }
    }

    /// Deterministic sample of `k` records without replacement, returned in
    /// their original order.
    pub fn subsample(&self, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > self.len() {
            return Err(Error::Input(format!(
                "cannot subsample {k} of {} records",
                self.len()
            )));
        }
        let mut rng = crate::rng::Stream::new(seed, crate::rng::streams::SUBSAMPLE);
        let mut idx = rng.sample_indices(self.len(), k);
        idx.sort_unstable();
        self.subset(&idx)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["id".to_string(), "domain".into(), "label".into(), "score".into()];
        header.extend((0..self.mc_count.unwrap_or(0)).map(|k| format!("mc_{k}")));
        w.write_record(&header)?;
        for rec in &self.records {
            let mut row = vec![
                rec.id.clone(),
                rec.domain.to_string(),
                rec.label.to_string(),
                rec.score.to_string(),
            ];
            if let Some(mc) = &rec.mc_scores {
                row.extend(mc.iter().map(f64::to_string));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.records)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
            .clone();
        let mc_cols = check_header(&header)?;

        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row_no = i + 1;
            let row = row.map_err(|e| Error::Parse {
                row: row_no,
                message: e.to_string(),
            })?;
            if row.len() != 4 + mc_cols {
                if row.len() > 4 {
                    return Err(Error::Schema(format!(
                        "row {row_no} has {} Monte-Carlo columns, header declares {mc_cols}",
                        row.len() - 4
                    )));
                }
                return Err(Error::Parse {
                    row: row_no,
                    message: format!("expected {} fields, found {}", 4 + mc_cols, row.len()),
                });
            }
            let parse_err = |message: String| Error::Parse { row: row_no, message };
            let domain = row[1]
                .parse::<Domain>()
                .map_err(|e| parse_err(e.to_string()))?;
            let label = match &row[2] {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(format!("label {other:?} is not 0 or 1"))),
            };
            let score = parse_prob(&row[3]).map_err(|m| parse_err(format!("score: {m}")))?;
            let mc_scores = if mc_cols > 0 {
                let mut mc = Vec::with_capacity(mc_cols);
                for k in 0..mc_cols {
                    mc.push(parse_prob(&row[4 + k]).map_err(|m| parse_err(format!("mc_{k}: {m}")))?);
                }
                Some(mc)
            } else {
                None
            };
            records.push(PredictionRecord {
                id: row[0].to_string(),
                domain,
                label,
                score,
                mc_scores,
            });
        }
        Self::new(records)
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let values: Vec<serde_json::Value> = serde_json::from_reader(reader)?;
        let mut records = Vec::with_capacity(values.len());
        for (i, v) in values.into_iter().enumerate() {
            let rec: PredictionRecord = serde_json::from_value(v).map_err(|e| Error::Parse {
                row: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Self::new(records)
    }
}

impl<'a> IntoIterator for &'a PredictionSet {
    type Item = &'a PredictionRecord;
    type IntoIter = std::slice::Iter<'a, PredictionRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

fn parse_prob(s: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format!("{s:?}: {e}"))
}

/// Returns the number of `mc_k` columns after checking the fixed prefix.
fn check_header(header: &csv::StringRecord) -> Result<usize> {
    let fixed = ["id", "domain", "label", "score"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
        return Err(Error::Schema(format!(
            "header must start with id,domain,label,score; found {:?}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    for (k, h) in header.iter().skip(4).enumerate() {
        if h != format!("mc_{k}") {
            return Err(Error::Schema(format!("column {} should be mc_{k}, found {h:?}", k + 4)));
        }
    }
    Ok(header.len() - 4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

pub fn load_predictions(path: impl AsRef<Path>, format: Format) -> Result<PredictionSet> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = std::io::BufReader::new(file);
    match format {
        Format::Csv => PredictionSet::read_csv(reader),
        Format::Json => PredictionSet::read_json(reader),
    }
}

/// Log-odds of each record's score.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitView {
    pub logits: Vec<f64>,
}

impl LogitView {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.logits.iter().map(|l| l.abs()).collect()
    }
}

/// Clamps each score to `[clamp_eps, 1 - clamp_eps]` and applies the logit.
///
/// Both tails are computed from `q = min(p, 1 - p)` so that `|logit|` is a
/// function of the distance to 0.5 alone, which keeps its ordering identical
/// to the binary-entropy ordering used for referral.
pub fn to_logits(set: &PredictionSet, clamp_eps: f64) -> Result<LogitView> {
    if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
        return Err(Error::Domain(format!("clamp_eps {clamp_eps} outside (0, 0.5)")));
    }
    let logits = set
        .iter()
        .map(|r| clamped_logit(r.score, clamp_eps))
        .collect();
    Ok(LogitView { logits })
}

/// Logit with `min(p, 1 - p)` floored at `eps`; exactly odd around 0.5.
pub(crate) fn clamped_logit(p: f64, eps: f64) -> f64 {
    let q = p.min(1.0 - p).max(eps);
    let mag = (1.0 - q).ln() - q.ln();
    if p >= 0.5 {
        mag
    } else {
        -mag
    }
}

/// Record indices partitioned by hard prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSplit {
    pub negatives: Vec<usize>,
    pub positives: Vec<usize>,
}

impl PredictionSplit {
    /// True if either predicted class is empty.
    pub fn has_empty_part(&self) -> bool {
        self.negatives.is_empty() || self.positives.is_empty()
    }

    pub fn negative_set(&self, set: &PredictionSet) -> Option<PredictionSet> {
        (!self.negatives.is_empty()).then(|| set.subset(&self.negatives).expect("subset of valid set"))
    }

    pub fn positive_set(&self, set: &PredictionSet) -> Option<PredictionSet> {
        (!self.positives.is_empty()).then(|| set.subset(&self.positives).expect("subset of valid set"))
    }
}

/// Partitions records into predicted negatives (`score < threshold`) and
/// predicted positives (`score >= threshold`), preserving order.
pub fn split_by_prediction(set: &PredictionSet, threshold: f64) -> Result<PredictionSplit> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    let (positives, negatives): (Vec<usize>, Vec<usize>) =
        (0..set.len()).partition(|&i| set.records[i].score >= threshold);
    Ok(PredictionSplit { negatives, positives })
}
