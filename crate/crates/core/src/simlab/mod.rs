//! Synthetic covariate-shift laboratory.
//!
//! Two features, two classes, two domains. Feature 1 separates the classes
//! and feature 2 separates the domains; within every (domain, class) cell the
//! features are jointly Gaussian with a small positive covariance, which is
//! enough to tilt a boundary fitted on in-domain data alone so that it cuts
//! close to the out-of-domain class-B mode.
//!
//! The module covers data generation ([`generate`]), logistic-regression
//! trainers ([`fit_plain`], [`fit_dan`], [`fit_iw`]), representation analysis
//! ([`pca_project`], [`segregation`]), the significance test used to compare
//! seeds ([`welch_t_test`]) and the end-to-end [`run_shift_experiment`].

mod analysis;
mod experiment;
mod trainers;

pub use analysis::{pca_project, segregation, welch_t_test, PcaResult, SegregationReport, WelchResult};
pub use experiment::{run_shift_experiment, ExperimentBundle, ExperimentConfig, ExperimentSummary};
pub use trainers::{
    fit, fit_dan, fit_iw, fit_plain, AdversarialObjective, AdversarialParams, EncoderState, PlainObjective,
    TrainConfig, TrainedLinearModel, TrainerKind,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predstore::{Domain, PredictionRecord, PredictionSet};
use crate::rng::{streams, Stream};

/// Parameters of the four-cell Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Feature-1 means for class A (label 0) and class B (label 1).
    pub class_means_feature1: [f64; 2],
    /// Feature-2 means for the in-domain and out-of-domain cells.
    pub domain_means_feature2: [f64; 2],
    pub cov12: f64,
    /// Variances of feature 1 and feature 2.
    pub var: [f64; 2],
    pub n_per_cell: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            class_means_feature1: [0.0, 5.0],
            domain_means_feature2: [0.0, 5.0],
            cov12: 0.4,
            var: [1.0, 1.0],
            n_per_cell: 1000,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let [v1, v2] = self.var;
        let finite = self
            .class_means_feature1
            .iter()
            .chain(&self.domain_means_feature2)
            .chain(&self.var)
            .chain(std::iter::once(&self.cov12))
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("spec values must be finite".into()));
        }
        if !(v1 > 0.0 && v2 > 0.0 && v1 * v2 - self.cov12 * self.cov12 > 0.0) {
            return Err(Error::Config(format!(
                "covariance [[{v1}, {c}], [{c}, {v2}]] is not positive definite",
                c = self.cov12
            )));
        }
        if self.n_per_cell == 0 {
            return Err(Error::Config("n_per_cell must be positive".into()));
        }
        Ok(())
    }

    /// Mean of the cell for `domain` and class `label`.
    pub fn cell_mean(&self, domain: Domain, label: u8) -> [f64; 2] {
        let d = match domain {
            Domain::InDomain => 0,
            Domain::OutOfDomain => 1,
        };
        [self.class_means_feature1[usize::from(label)], self.domain_means_feature2[d]]
    }
}

/// Labelled two-feature rows with their domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub features: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
    pub domains: Vec<Domain>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row indices belonging to `domain`, in order.
    pub fn rows(&self, domain: Domain) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.domains[i] == domain).collect()
    }

    /// Features and labels of one domain.
    pub fn domain_part(&self, domain: Domain) -> (Vec<[f64; 2]>, Vec<u8>) {
        let rows = self.rows(domain);
        (
            rows.iter().map(|&i| self.features[i]).collect(),
            rows.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Scores every row of `domain` with `model` as a prediction set.
    pub fn predictions(&self, model: &TrainedLinearModel, domain: Domain) -> Result<PredictionSet> {
        let prefix = match domain {
            Domain::InDomain => "id",
            Domain::OutOfDomain => "ood",
        };
        let records = self
            .rows(domain)
            .into_iter()
            .enumerate()
            .map(|(k, i)| PredictionRecord::new(format!("{prefix}-{k:06}"), domain, self.labels[i], model.predict(self.features[i])))
            .collect();
        PredictionSet::new(records)
    }
}

/// Cells in generation order: (ID, A), (ID, B), (OOD, A), (OOD, B).
const CELLS: [(Domain, u8); 4] = [
    (Domain::InDomain, 0),
    (Domain::InDomain, 1),
    (Domain::OutOfDomain, 0),
    (Domain::OutOfDomain, 1),
];

fn draw(spec: &SyntheticSpec, base_stream: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let [v1, v2] = spec.var;
    let l11 = v1.sqrt();
    let l21 = spec.cov12 / l11;
    let l22 = (v2 - l21 * l21).sqrt();

    let total = 4 * spec.n_per_cell;
    let mut out = SyntheticDataset {
        features: Vec::with_capacity(total),
        labels: Vec::with_capacity(total),
        domains: Vec::with_capacity(total),
    };
    for (k, &(domain, label)) in CELLS.iter().enumerate() {
        let mut rng = Stream::new(spec.seed, base_stream + k as u64);
        let [m1, m2] = spec.cell_mean(domain, label);
        for _ in 0..spec.n_per_cell {
            let (z1, z2) = rng.normal_pair();
            out.features.push([m1 + l11 * z1, m2 + l21 * z1 + l22 * z2]);
            out.labels.push(label);
            out.domains.push(domain);
        }
    }
    Ok(out)
}

/// Training draw: `n_per_cell` rows per cell, deterministic in `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    draw(spec, streams::TRAIN_CELLS)
}

/// Independent evaluation draw from the same mixture.
pub fn generate_test(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    draw(spec, streams::TEST_CELLS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_draws_differ() {
        let spec = SyntheticSpec::with_seed(4);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        assert_ne!(generate(&spec).unwrap().features, generate_test(&spec).unwrap().features);
        assert_ne!(generate(&spec).unwrap().features, generate(&SyntheticSpec::with_seed(5)).unwrap().features);
    }

    #[test]
    fn cells_are_laid_out_in_order() {
        let spec = SyntheticSpec { n_per_cell: 3, ..SyntheticSpec::default() };
        let d = generate(&spec).unwrap();
        assert_eq!(d.labels, vec![0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1]);
        assert_eq!(d.rows(Domain::OutOfDomain), (6..12).collect::<Vec<_>>());
    }

    #[test]
    fn large_cells_match_moments() {
        let spec = SyntheticSpec { n_per_cell: 100_000, seed: 9, ..SyntheticSpec::default() };
        let d = generate(&spec).unwrap();
        for (k, &(domain, label)) in CELLS.iter().enumerate() {
            let rows = &d.features[k * spec.n_per_cell..(k + 1) * spec.n_per_cell];
            let n = rows.len() as f64;
            let m = [rows.iter().map(|r| r[0]).sum::<f64>() / n, rows.iter().map(|r| r[1]).sum::<f64>() / n];
            let cov = rows.iter().map(|r| (r[0] - m[0]) * (r[1] - m[1])).sum::<f64>() / (n - 1.0);
            let want = spec.cell_mean(domain, label);
            assert!((m[0] - want[0]).abs() < 0.02 && (m[1] - want[1]).abs() < 0.02, "cell {k}: {m:?}");
            assert!((cov - 0.4).abs() < 0.02, "cell {k}: {cov}");
        }
        assert_eq!(spec.cell_mean(Domain::InDomain, 0), [0.0, 0.0]);
        assert_eq!(spec.cell_mean(Domain::OutOfDomain, 1), [5.0, 5.0]);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let spec = SyntheticSpec { cov12: 1.2, ..SyntheticSpec::default() };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }
}
