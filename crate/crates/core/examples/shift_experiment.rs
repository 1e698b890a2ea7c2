//! One synthetic covariate-shift run: train, score a held-out draw, and write
//! the experiment bundle.
//!
//! cargo run --release --example shift_experiment -- [plain|dan|iw] [seed] [out_dir]

use refergate::metrics::MetricKind;
use refergate::predstore::Domain;
use refergate::referral::ReferralKind;
use refergate::simlab::{run_shift_experiment, ExperimentConfig, SyntheticSpec, TrainerKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let trainer: TrainerKind = args.next().as_deref().unwrap_or("plain").parse()?;
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let out = args.next();

    let bundle = run_shift_experiment(&SyntheticSpec::with_seed(seed), &ExperimentConfig::new(trainer))?;
    let s = &bundle.summary;
    println!("{trainer} seed {seed}: w = {:.3?}, b = {:.3}, |w2|/|w1| = {:.4}", s.weights, s.bias, s.feature2_suppression_ratio);
    println!("accuracy ID {:.4}  OOD {:.4}   ECE ID {:.4}  OOD {:.4}", s.accuracy_id, s.accuracy_ood, s.ece_id, s.ece_ood);
    for d in [Domain::InDomain, Domain::OutOfDomain] {
        for p in [ReferralKind::Standard, ReferralKind::Split] {
            println!("AURC acc {d:<3} {:<8} {:.4}", p.as_str(), s.aurc_of(d, p, MetricKind::Acc).unwrap());
        }
    }
    println!(
        "segregation: distance ratio {:.3}, domain accuracy {:.3}",
        s.segregation_distance_ratio, s.segregation_domain_accuracy
    );
    if let Some(dir) = out {
        bundle.write_dir(&dir)?;
        println!("wrote {dir}");
    }
    Ok(())
}
