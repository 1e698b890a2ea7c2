//! Per-seed AURC comparison between two trainers with Welch's t-test.
//!
//! cargo run --release --example welch_compare

use refergate::metrics::MetricKind;
use refergate::predstore::Domain;
use refergate::referral::ReferralKind;
use refergate::simlab::{run_shift_experiment, welch_t_test, ExperimentConfig, SyntheticSpec, TrainerKind};

fn aurcs(trainer: TrainerKind) -> Result<Vec<f64>, refergate::error::Error> {
    let mut config = ExperimentConfig::new(trainer);
    config.metrics = vec![MetricKind::Acc];
    config.policies = vec![ReferralKind::Standard];
    (0..6)
        .map(|seed| {
            let b = run_shift_experiment(&SyntheticSpec::with_seed(seed), &config)?;
            Ok(b.summary.aurc_of(Domain::OutOfDomain, ReferralKind::Standard, MetricKind::Acc).unwrap())
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plain = aurcs(TrainerKind::Plain)?;
    let dan = aurcs(TrainerKind::Dan)?;
    println!("plain {plain:.4?}\ndan   {dan:.4?}");
    let w = welch_t_test(&plain, &dan)?;
    println!(
        "t = {:.3}, df = {:.2}, p = {:.3e}{}",
        w.t,
        w.df,
        w.p,
        if w.significant(0.05) { "  (significant at 0.05)" } else { "" }
    );
    Ok(())
}
