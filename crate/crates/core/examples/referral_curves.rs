//! Standard and Split referral curves for a set of predictions whose
//! uncertainty is skewed towards one predicted class.
//!
//! cargo run --example referral_curves

use refergate::metrics::MetricKind;
use refergate::predstore::{Domain, PredictionRecord, PredictionSet};
use refergate::referral::{entropy_cdf, referral_curve, RateGrid, ReferralPolicy};
use refergate::rng::Stream;
use refergate::uncertainty::{uncertainty_vector, UncertaintyMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Stream::new(11, 0);
    let mut records = Vec::new();
    for i in 0..2000 {
        // Predicted negatives are confident; predicted positives hug 0.5.
        let positive = rng.uniform() < 0.4;
        let score = if positive { 0.5 + 0.15 * rng.uniform() } else { 0.02 + 0.3 * rng.uniform() };
        let label = u8::from(rng.uniform() < score);
        records.push(PredictionRecord::new(format!("p{i}"), Domain::OutOfDomain, label, score));
    }
    let set = PredictionSet::new(records)?;
    let grid = RateGrid::default();

    for policy in [ReferralPolicy::standard(UncertaintyMode::Aleatoric), ReferralPolicy::split(UncertaintyMode::Aleatoric)] {
        let acc = referral_curve(&set, &policy, MetricKind::Acc, &grid)?;
        let auroc = referral_curve(&set, &policy, MetricKind::Auroc, &grid)?;
        let at = |r: usize| acc.values[r].map_or("undefined".into(), |v| format!("{v:.3}"));
        println!(
            "{:<8} AURC acc {:.4}  auroc {:.4}  acc at 0/50/90%: {} {} {}",
            policy.kind.as_str(),
            acc.aurc,
            auroc.aurc,
            at(0),
            at(50),
            at(90)
        );
    }

    // Where each class's entropy quantiles sit.
    let u = uncertainty_vector(&set, UncertaintyMode::Aleatoric)?;
    let cdfs = entropy_cdf(&set, &u, 0.5)?;
    for c in [0.25, 0.5, 0.75] {
        println!("c = {c}: z0 = {:.3?}, z1 = {:.3?}", cdfs.z0(c), cdfs.z1(c));
    }
    Ok(())
}
