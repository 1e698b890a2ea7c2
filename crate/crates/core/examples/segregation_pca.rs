//! How separated the two domains are in each model's representation:
//! principal components of the pooled data, the inter/intra-domain distance
//! ratio and a domain classifier's accuracy.
//!
//! cargo run --release --example segregation_pca

use refergate::predstore::Domain;
use refergate::simlab::{fit, generate, pca_project, segregation, SyntheticSpec, TrainConfig, TrainerKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::with_seed(2);
    let data = generate(&spec)?;
    let pooled: Vec<[f64; 2]> = data.features.clone();
    let pca = pca_project(&pooled, 2)?;
    println!("raw features: explained variance ratio {:.3?}", pca.explained_variance_ratio);
    println!("first component {:.3?}", pca.components[0]);

    for trainer in [TrainerKind::Plain, TrainerKind::Dan] {
        let model = fit(trainer, &data, &TrainConfig::for_trainer(trainer), spec.seed)?;
        let rep = |d: Domain| -> Vec<[f64; 2]> { data.domain_part(d).0.into_iter().map(|x| model.represent(x)).collect() };
        let r = segregation(&rep(Domain::InDomain), &rep(Domain::OutOfDomain), spec.seed)?;
        println!(
            "{trainer:<5} distance ratio {:.3}  domain accuracy {:.3}  ({} x {} rows)",
            r.distance_ratio, r.domain_pred_accuracy, r.n_repeats, r.n_subsample
        );
    }
    Ok(())
}
