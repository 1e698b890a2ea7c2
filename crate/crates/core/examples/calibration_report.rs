//! Quantile-binned reliability data and ECE for an overconfident model.
//!
//! cargo run --example calibration_report

use refergate::metrics::calibration;
use refergate::rng::Stream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Stream::new(3, 0);
    let n = 3000;
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let p = rng.uniform();
        // Scores pushed towards 0 and 1 relative to the true probability.
        let logit = (p / (1.0 - p)).ln() * 2.5;
        scores.push(1.0 / (1.0 + (-logit).exp()));
        labels.push(u8::from(rng.uniform() < p));
    }
    let report = calibration(&scores, &labels, 15)?;
    println!("ECE {:.4} over {} bins", report.ece, report.bins());
    println!("{:>8} {:>10} {:>10} {:>6}", "from", "mean score", "positives", "n");
    for b in 0..report.bins() {
        println!(
            "{:>8.4} {:>10.4} {:>10.4} {:>6}",
            report.bin_edges[b], report.bin_mean_score[b], report.bin_positive_rate[b], report.bin_counts[b]
        );
    }
    println!("monotone reliability curve: {}", report.is_monotone());
    Ok(())
}
