//! End-to-end synthetic shift experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fit, generate, generate_test, segregation, SegregationReport, SyntheticSpec, TrainConfig, TrainedLinearModel, TrainerKind};
use crate::diagnostics::{diagnostic_histograms, DiagnosticHistograms, DEFAULT_HISTOGRAM_BINS};
use crate::error::{Error, Result};
use crate::metrics::{self, CalibrationReport, MetricKind, DEFAULT_BINS};
use crate::output::OutputDir;
use crate::predstore::{Domain, PredictionSet, DEFAULT_THRESHOLD};
use crate::referral::{referral_curves_with, RateGrid, ReferralCurve, ReferralKind, ReferralPolicy, DEFAULT_GRID_MAX};
use crate::uncertainty::{uncertainty_vector, UncertaintyMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trainer: TrainerKind,
    pub train: TrainConfig,
    pub policies: Vec<ReferralKind>,
    pub uncertainty_mode: UncertaintyMode,
    pub metrics: Vec<MetricKind>,
    pub bins: usize,
    pub grid_max: u32,
    pub threshold: f64,
    pub histogram_bins: usize,
}

impl ExperimentConfig {
    /// Both policies, aleatoric ranking, AUROC and accuracy curves.
    pub fn new(trainer: TrainerKind) -> Self {
        Self {
            trainer,
            train: TrainConfig::for_trainer(trainer),
            policies: vec![ReferralKind::Standard, ReferralKind::Split],
            uncertainty_mode: UncertaintyMode::Aleatoric,
            metrics: vec![MetricKind::Auroc, MetricKind::Acc],
            bins: DEFAULT_BINS,
            grid_max: DEFAULT_GRID_MAX,
            threshold: DEFAULT_THRESHOLD,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
        }
    }
}

/// A referral curve tagged with the domain it was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainCurve {
    pub domain: Domain,
    pub curve: ReferralCurve,
}

impl DomainCurve {
    /// `curve_{id|ood}_{policy}_{metric}.csv`.
    pub fn file_name(&self) -> String {
        format!(
            "curve_{}_{}_{}.csv",
            domain_tag(self.domain),
            self.curve.policy.kind.as_str(),
            self.curve.metric
        )
    }
}

fn domain_tag(d: Domain) -> &'static str {
    match d {
        Domain::InDomain => "id",
        Domain::OutOfDomain => "ood",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurcEntry {
    pub domain: Domain,
    pub policy: ReferralKind,
    pub metric: MetricKind,
    pub aurc: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub version: String,
    pub trainer: TrainerKind,
    pub seed: u64,
    pub weights: [f64; 2],
    pub bias: f64,
    /// `|w_2| / |w_1|` of the input-space boundary.
    pub feature2_suppression_ratio: f64,
    pub epochs_run: usize,
    pub converged: bool,
    pub accuracy_id: f64,
    pub accuracy_ood: f64,
    pub ece_id: f64,
    pub ece_ood: f64,
    pub aurc: Vec<AurcEntry>,
    pub segregation_distance_ratio: f64,
    pub segregation_domain_accuracy: f64,
}

impl ExperimentSummary {
    pub fn aurc_of(&self, domain: Domain, policy: ReferralKind, metric: MetricKind) -> Option<f64> {
        self.aurc
            .iter()
            .find(|e| e.domain == domain && e.policy == policy && e.metric == metric)
            .map(|e| e.aurc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentBundle {
    pub spec: SyntheticSpec,
    pub config: ExperimentConfig,
    pub model: TrainedLinearModel,
    pub predictions_id: PredictionSet,
    pub predictions_ood: PredictionSet,
    pub curves: Vec<DomainCurve>,
    pub calibration_id: CalibrationReport,
    pub calibration_ood: CalibrationReport,
    pub segregation: SegregationReport,
    pub histograms_id: DiagnosticHistograms,
    pub histograms_ood: DiagnosticHistograms,
    pub summary: ExperimentSummary,
}

impl ExperimentBundle {
    pub fn curve(&self, domain: Domain, policy: ReferralKind, metric: MetricKind) -> Option<&ReferralCurve> {
        self.curves
            .iter()
            .find(|c| c.domain == domain && c.curve.policy.kind == policy && c.curve.metric == metric)
            .map(|c| &c.curve)
    }

    pub fn predictions(&self, domain: Domain) -> &PredictionSet {
        match domain {
            Domain::InDomain => &self.predictions_id,
            Domain::OutOfDomain => &self.predictions_ood,
        }
    }

    /// Writes the bundle; on failure nothing written by this call remains.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        OutputDir::write_all(dir, |out| {
            out.write_json("spec.json", &self.spec)?;
            out.write_json("model.json", &self.model)?;
            out.write_with("predictions_id.csv", |w| self.predictions_id.write_csv(w))?;
            out.write_with("predictions_ood.csv", |w| self.predictions_ood.write_csv(w))?;
            for c in &self.curves {
                out.write_with(&c.file_name(), |w| c.curve.write_csv(w))?;
            }
            out.write_json("calibration_id.json", &self.calibration_id)?;
            out.write_json("calibration_ood.json", &self.calibration_ood)?;
            out.write_json("segregation.json", &self.segregation)?;
            out.write_json("histograms_id.json", &self.histograms_id)?;
            out.write_json("histograms_ood.json", &self.histograms_ood)?;
            out.write_json("summary.json", &self.summary)
        })
    }
}

/// Trains on a draw from `spec` (labelled in-domain rows, plus unlabelled
/// out-of-domain rows for DAN / IW), scores an independent draw, and
/// evaluates both domains under each configured referral policy.
///
/// Segregation is measured on the model's representation of the evaluation
/// draw: raw features for the plain trainer, encoder outputs otherwise.
pub fn run_shift_experiment(spec: &SyntheticSpec, config: &ExperimentConfig) -> Result<ExperimentBundle> {
    if config.policies.is_empty() || config.metrics.is_empty() {
        return Err(Error::Config("experiment needs at least one policy and one metric".into()));
    }
    let train = generate(spec)?;
    let test = generate_test(spec)?;
    let model = fit(config.trainer, &train, &config.train, spec.seed)?;

    let predictions_id = test.predictions(&model, Domain::InDomain)?;
    let predictions_ood = test.predictions(&model, Domain::OutOfDomain)?;
    let grid = RateGrid::percentiles(config.grid_max)?;

    let mut curves = Vec::new();
    for (domain, set) in [(Domain::InDomain, &predictions_id), (Domain::OutOfDomain, &predictions_ood)] {
        let u = uncertainty_vector(set, config.uncertainty_mode)?;
        for &kind in &config.policies {
            let policy = ReferralPolicy {
                kind,
                uncertainty_mode: config.uncertainty_mode,
                threshold: config.threshold,
            };
            for curve in referral_curves_with(set, &u, &policy, &config.metrics, &grid)? {
                curves.push(DomainCurve { domain, curve });
            }
        }
    }

    let calibration_id = metrics::calibration(&predictions_id.scores(), &predictions_id.labels(), config.bins)?;
    let calibration_ood = metrics::calibration(&predictions_ood.scores(), &predictions_ood.labels(), config.bins)?;

    let represent = |d: Domain| -> Vec<[f64; 2]> { test.domain_part(d).0.into_iter().map(|x| model.represent(x)).collect() };
    let segregation = segregation(&represent(Domain::InDomain), &represent(Domain::OutOfDomain), spec.seed)?;

    let histograms_id = diagnostic_histograms(&predictions_id, config.uncertainty_mode, config.histogram_bins)?;
    let histograms_ood = diagnostic_histograms(&predictions_ood, config.uncertainty_mode, config.histogram_bins)?;

    let acc = |s: &PredictionSet| metrics::accuracy(&s.scores(), &s.labels(), config.threshold).map(|v| v.value.unwrap_or(f64::NAN));
    let summary = ExperimentSummary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        trainer: config.trainer,
        seed: spec.seed,
        weights: model.weights,
        bias: model.bias,
        feature2_suppression_ratio: model.feature2_ratio(),
        epochs_run: model.epochs_run,
        converged: model.converged,
        accuracy_id: acc(&predictions_id)?,
        accuracy_ood: acc(&predictions_ood)?,
        ece_id: calibration_id.ece,
        ece_ood: calibration_ood.ece,
        aurc: curves
            .iter()
            .map(|c| AurcEntry {
                domain: c.domain,
                policy: c.curve.policy.kind,
                metric: c.curve.metric,
                aurc: c.curve.aurc,
                skipped: c.curve.skipped,
            })
            .collect(),
        segregation_distance_ratio: segregation.distance_ratio,
        segregation_domain_accuracy: segregation.domain_pred_accuracy,
    };

    Ok(ExperimentBundle {
        spec: spec.clone(),
        config: config.clone(),
        model,
        predictions_id,
        predictions_ood,
        curves,
        calibration_id,
        calibration_ood,
        segregation,
        histograms_id,
        histograms_ood,
        summary,
    })
}
