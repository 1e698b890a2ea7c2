//! Splits the predictive entropy of Monte Carlo dropout samples into
//! aleatoric and epistemic parts.
//!
//! cargo run --example uncertainty_decomposition

use refergate::predstore::{Domain, PredictionRecord};
use refergate::uncertainty::{decompose, inverse_binary_entropy, nats_to_bits};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = [
        ("agreeing samples", vec![0.7, 0.7, 0.7, 0.7]),
        ("disagreeing samples", vec![0.1, 0.9, 0.2, 0.8]),
        ("confident", vec![0.98, 0.99, 0.97, 0.99]),
        ("one outlier", vec![0.9, 0.92, 0.88, 0.2]),
    ];
    println!("{:<20} {:>7} {:>9} {:>9} {:>9}", "", "mean", "total", "aleatoric", "epistemic");
    for (name, mc) in cases {
        let mean = mc.iter().sum::<f64>() / mc.len() as f64;
        let r = decompose(&PredictionRecord::new(name, Domain::InDomain, 1, mean).with_mc(mc))?;
        println!(
            "{name:<20} {:>7.3} {:>9.4} {:>9.4} {:>9.4}",
            r.mean_score, r.total, r.aleatoric, r.epistemic
        );
        assert_eq!(r.aleatoric + r.epistemic, r.total);
    }

    let h = 0.5;
    println!("\n{h} nats = {:.4} bits; entropy {h} at p = {:.4}", nats_to_bits(h), inverse_binary_entropy(h)?);
    Ok(())
}
