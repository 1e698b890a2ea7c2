//! Reads a prediction file, reports its shape, and writes it back in the
//! other format.
//!
//! cargo run --example prediction_files -- predictions.csv [out.json]

use std::fs::File;

use refergate::predstore::{load_predictions, split_by_prediction, to_logits, Domain, Format, DEFAULT_CLAMP_EPS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let Some(input) = args.next() else {
        eprintln!("usage: prediction_files <predictions.csv|json> [out]");
        std::process::exit(2);
    };
    let format = if input.ends_with(".json") { Format::Json } else { Format::Csv };
    let set = load_predictions(&input, format)?;

    let split = split_by_prediction(&set, 0.5)?;
    let logits = to_logits(&set, DEFAULT_CLAMP_EPS)?;
    let max_mag = logits.magnitudes().into_iter().fold(0.0, f64::max);
    println!("{} records, MC samples: {:?}", set.len(), set.mc_count());
    for d in [Domain::InDomain, Domain::OutOfDomain] {
        println!("{d}: {}", set.filter_domain(d).map_or(0, |s| s.len()));
    }
    println!("predicted negative {}, positive {}", split.negatives.len(), split.positives.len());
    println!("largest |logit| {max_mag:.2}");

    if let Some(out) = args.next() {
        let f = File::create(&out)?;
        match format {
            Format::Csv => set.write_json(f)?,
            Format::Json => set.write_csv(f)?,
        }
        println!("wrote {out}");
    }
    Ok(())
}
