//! Evaluates each training objective on a small batch and compares its
//! analytic gradient against central differences.
//!
//! cargo run --example objectives

use refergate::objectives::gradcheck::{central_difference, relative_error, STEP};
use refergate::objectives::{
    dan_objective, iw_weights, masked_patch_loss, osp_objective, reverse_gradient, simclr_loss, weighted_cross_entropy,
    DomainBatch, EmbeddingBatch, PatchBatch,
};
use refergate::rng::Stream;

fn rows(v: &[f64], cols: usize) -> Vec<Vec<f64>> {
    v.chunks(cols).map(<[f64]>::to_vec).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Stream::new(5, 0);

    let z: Vec<f64> = (0..24).map(|_| rng.normal()).collect();
    let loss = |v: &[f64]| simclr_loss(&EmbeddingBatch::adjacent_pairs(rows(v, 4)).unwrap(), 0.1).unwrap().loss;
    let out = simclr_loss(&EmbeddingBatch::adjacent_pairs(rows(&z, 4))?, 0.1)?;
    let err = relative_error(&out.grad.concat(), &central_difference(loss, &z, STEP));
    println!("contrastive     loss {:>8.4}  gradient rel. error {err:.1e}", out.loss);

    let target: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| f64::from(rng.uniform() < 0.5)).collect()).collect();
    let mask = vec![true, false, true, true, false, true];
    let pred: Vec<f64> = (0..24).map(|_| 0.1 + 0.8 * rng.uniform()).collect();
    let f = |v: &[f64]| masked_patch_loss(&PatchBatch::new(target.clone(), rows(v, 4), mask.clone()).unwrap()).unwrap().loss;
    let out = masked_patch_loss(&PatchBatch::new(target.clone(), rows(&pred, 4), mask.clone())?).expect("patches masked");
    let err = relative_error(&out.grad.concat(), &central_difference(f, &pred, STEP));
    println!("masked patches  loss {:>8.4}  gradient rel. error {err:.1e}", out.loss);

    let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
    let scores: Vec<Vec<f64>> = (0..9).map(|_| (0..3).map(|_| 0.1 + 0.8 * rng.uniform()).collect()).collect();
    let out = osp_objective(&scores, &labels, &[1.0, 0.5, 2.0], &[0.3, 0.3, 0.3])?;
    println!("one-sided       total {:>7.4}  per head {:.3?}", out.total, out.per_head);

    let batch = DomainBatch::new(
        (0..8).map(|_| vec![rng.normal(), rng.normal()]).collect(),
        vec![0, 0, 0, 0, 1, 1, 1, 1],
        vec![Some(0), Some(1), Some(0), Some(1), None, None, None, None],
    )?;
    let dp: Vec<f64> = (0..8).map(|_| 0.2 + 0.6 * rng.uniform()).collect();
    let cp: Vec<f64> = (0..8).map(|_| 0.2 + 0.6 * rng.uniform()).collect();
    let out = dan_objective(&batch, &dp, &cp)?;
    println!(
        "adversarial     class {:.4}  domain {:.4}  reversed domain grad[0] {:.4}",
        out.class_loss.unwrap_or(f64::NAN),
        out.domain_loss,
        reverse_gradient(&out.grad_domain_preds, 1.0)[0]
    );

    let w = iw_weights(&dp[..4], Some(10.0))?;
    let out = weighted_cross_entropy(&w, &cp[..4], &[0, 1, 0, 1])?;
    println!("importance-wtd  loss {:>8.4}  weights {:.3?}", out.loss, w);
    Ok(())
}
