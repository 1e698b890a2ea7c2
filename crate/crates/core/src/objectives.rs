//! Training objectives as pure functions of batch values.
//!
//! Each objective takes the quantities a network would produce (embeddings,
//! probabilities) and returns its value together with the analytic gradient
//! with respect to those inputs. Parameters and the chain rule back into a
//! model belong to the caller; see `simlab` for linear-model trainers built on
//! these.
//!
//! Probabilities are clamped to `[eps, 1 - eps]` with
//! [`DEFAULT_CLAMP_EPS`] before any logarithm. Where the clamp is active the
//! returned gradient component is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::predstore::DEFAULT_CLAMP_EPS;

fn clamp_prob(p: f64) -> (f64, bool) {
    let c = p.clamp(DEFAULT_CLAMP_EPS, 1.0 - DEFAULT_CLAMP_EPS);
    (c, c == p)
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} {p} outside [0, 1]")))
    }
}

/// Row-major embeddings with a positive-pair map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch {
    pub vectors: Vec<Vec<f64>>,
    /// `pairing[i]` is the other view of the image that produced row `i`.
    pub pairing: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(vectors: Vec<Vec<f64>>, pairing: Vec<usize>) -> Result<Self> {
        let n = vectors.len();
        if n < 2 || pairing.len() != n {
            return Err(Error::Input("need at least one pair and one partner per row".into()));
        }
        let d = vectors[0].len();
        if d == 0 || vectors.iter().any(|v| v.len() != d) {
            return Err(Error::Input("embeddings must share a dimension >= 1".into()));
        }
        for (i, &j) in pairing.iter().enumerate() {
            if j >= n || j == i || pairing[j] != i {
                return Err(Error::Input(format!("pairing is not a fixed-point-free involution at row {i}")));
            }
        }
        Ok(Self { vectors, pairing })
    }

    /// Rows `2k` and `2k + 1` are the two views of image `k`.
    pub fn adjacent_pairs(vectors: Vec<Vec<f64>>) -> Result<Self> {
        if !vectors.len().is_multiple_of(2) {
            return Err(Error::Input("adjacent pairing needs an even row count".into()));
        }
        let pairing = (0..vectors.len()).map(|i| i ^ 1).collect();
        Self::new(vectors, pairing)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimclrOutput {
    pub loss: f64,
    /// Same shape as the batch's vectors.
    pub grad: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Contrastive loss with cosine similarity, summed over every ordered
/// positive pair `(i, pairing[i])`:
///
/// `l_ij = -ln( exp(sim(z_i, z_j) / tau) / sum_{k != i} exp(sim(z_i, z_k) / tau) )`
pub fn simclr_loss(batch: &EmbeddingBatch, temperature: f64) -> Result<SimclrOutput> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Domain(format!("temperature {temperature} must be positive")));
    }
    let n = batch.len();
    let z = &batch.vectors;
    let norms: Vec<f64> = z.iter().map(|v| dot(v, v).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&r| r == 0.0 || !r.is_finite()) {
        return Err(Error::Domain(format!("cosine similarity undefined: row {i} has zero norm")));
    }
    let mut cos = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in i + 1..n {
            let c = dot(&z[i], &z[k]) / (norms[i] * norms[k]);
            cos[i][k] = c;
            cos[k][i] = c;
        }
    }

    let d = z[0].len();
    let mut grad = vec![vec![0.0; d]; n];
    let mut loss = 0.0;
    for i in 0..n {
        let j = batch.pairing[i];
        let logits: Vec<f64> = (0..n).map(|k| cos[i][k] / temperature).collect();
        let max = (0..n).filter(|&k| k != i).map(|k| logits[k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&k| k != i).map(|k| (logits[k] - max).exp()).sum();
        loss += -(logits[j] - max) + denom.ln();

        for k in (0..n).filter(|&k| k != i) {
            let p = (logits[k] - max).exp() / denom;
            let coef = (p - if k == j { 1.0 } else { 0.0 }) / temperature;
            if coef == 0.0 {
                continue;
            }
            // d cos(a, b) / d a = b / (|a||b|) - cos * a / |a|^2
            let c = cos[i][k];
            for t in 0..d {
                grad[i][t] += coef * (z[k][t] / (norms[i] * norms[k]) - c * z[i][t] / (norms[i] * norms[i]));
                grad[k][t] += coef * (z[i][t] / (norms[i] * norms[k]) - c * z[k][t] / (norms[k] * norms[k]));
            }
        }
    }
    Ok(SimclrOutput { loss, grad })
}

/// Per-patch pixel targets and reconstructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchBatch {
    pub target: Vec<Vec<f64>>,
    pub predicted: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

impl PatchBatch {
    pub fn new(target: Vec<Vec<f64>>, predicted: Vec<Vec<f64>>, mask: Vec<bool>) -> Result<Self> {
        if target.len() != predicted.len() || target.len() != mask.len() {
            return Err(Error::Input("target, predicted and mask disagree on patch count".into()));
        }
        let px = target.first().map_or(0, Vec::len);
        if px == 0 || target.iter().chain(&predicted).any(|p| p.len() != px) {
            return Err(Error::Input("every patch needs the same nonzero pixel count".into()));
        }
        for v in target.iter().chain(&predicted).flatten() {
            check_prob(*v, "pixel value")?;
        }
        Ok(Self { target, predicted, mask })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLossOutput {
    pub loss: f64,
    /// Gradient with respect to `predicted`; rows of unmasked patches are zero.
    pub grad: Vec<Vec<f64>>,
}

/// Masked reconstruction loss: for each masked patch the mean over pixels of
/// `y ln(y / yhat) + (1 - y) ln((1 - y) / (1 - yhat))`, summed over masked
/// patches. `None` when nothing is masked.
pub fn masked_patch_loss(batch: &PatchBatch) -> Option<PatchLossOutput> {
    if !batch.mask.iter().any(|&m| m) {
        return None;
    }
    let mut loss = 0.0;
    let mut grad: Vec<Vec<f64>> = batch.predicted.iter().map(|p| vec![0.0; p.len()]).collect();
    for (p, (&masked, (ys, yh))) in batch.mask.iter().zip(batch.target.iter().zip(&batch.predicted)).enumerate() {
        if !masked {
            continue;
        }
        let mn = ys.len() as f64;
        let mut patch = 0.0;
        for (t, (&y, &h)) in ys.iter().zip(yh).enumerate() {
            let (h, free) = clamp_prob(h);
            patch += xlogy_ratio(y, h) + xlogy_ratio(1.0 - y, 1.0 - h);
            if free {
                grad[p][t] = (-y / h + (1.0 - y) / (1.0 - h)) / mn;
            }
        }
        loss += patch / mn;
    }
    Some(PatchLossOutput { loss, grad })
}

/// `a ln(a / b)` with `0 ln 0 = 0`.
fn xlogy_ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (a / b).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OspOutput {
    pub per_head: Vec<f64>,
    pub total: f64,
    /// `d total / d f[i][k]`.
    pub grad_scores: Vec<Vec<f64>>,
    pub grad_phis: Vec<f64>,
    pub grad_lambdas: Vec<f64>,
}

/// One-sided prediction Lagrangian. For head `k` with probabilities `f_k`:
///
/// `mean_{y=k} -ln f_k + phi_k + lambda_k (mean_{y!=k} -ln(1 - f_k) - phi_k)`
///
/// `scores[i][k]` is head `k`'s probability for sample `i`; `labels[i]` is a
/// class index.
pub fn osp_objective(scores: &[Vec<f64>], labels: &[usize], lambdas: &[f64], phis: &[f64]) -> Result<OspOutput> {
    let k_heads = lambdas.len();
    if k_heads == 0 || phis.len() != k_heads {
        return Err(Error::Input("lambdas and phis must have one entry per head".into()));
    }
    if scores.len() != labels.len() || scores.iter().any(|s| s.len() != k_heads) {
        return Err(Error::Input("scores must be samples x heads, aligned with labels".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::Domain(format!("Lagrange multiplier {l} must be nonnegative")));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k_heads) {
        return Err(Error::Input(format!("label {y} has no head")));
    }
    for s in scores.iter().flatten() {
        check_prob(*s, "head probability")?;
    }

    let n = scores.len();
    let mut per_head = vec![0.0; k_heads];
    let mut grad_scores = vec![vec![0.0; k_heads]; n];
    let mut grad_phis = vec![0.0; k_heads];
    let mut grad_lambdas = vec![0.0; k_heads];
    for k in 0..k_heads {
        let n_pos = labels.iter().filter(|&&y| y == k).count();
        let n_neg = n - n_pos;
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::Input(format!("head {k} needs both positives and negatives")));
        }
        let (mut pos, mut neg) = (0.0, 0.0);
        for i in 0..n {
            let (f, free) = clamp_prob(scores[i][k]);
            if labels[i] == k {
                pos -= f.ln();
                if free {
                    grad_scores[i][k] = -1.0 / (f * n_pos as f64);
                }
            } else {
                neg -= (1.0 - f).ln();
                if free {
                    grad_scores[i][k] = lambdas[k] / ((1.0 - f) * n_neg as f64);
                }
            }
        }
        let (pos, neg) = (pos / n_pos as f64, neg / n_neg as f64);
        per_head[k] = pos + phis[k] + lambdas[k] * (neg - phis[k]);
        grad_phis[k] = 1.0 - lambdas[k];
        grad_lambdas[k] = neg - phis[k];
    }
    Ok(OspOutput {
        total: per_head.iter().sum(),
        per_head,
        grad_scores,
        grad_phis,
        grad_lambdas,
    })
}

/// Rows for the domain-adversarial and importance-weighted objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBatch {
    pub encoder_outputs: Vec<Vec<f64>>,
    /// 0 = in-domain, 1 = out-of-domain.
    pub domain_labels: Vec<u8>,
    /// Present for in-domain rows.
    pub class_labels: Vec<Option<u8>>,
}

impl DomainBatch {
    pub fn new(encoder_outputs: Vec<Vec<f64>>, domain_labels: Vec<u8>, class_labels: Vec<Option<u8>>) -> Result<Self> {
        let n = encoder_outputs.len();
        if domain_labels.len() != n || class_labels.len() != n {
            return Err(Error::Input("batch columns have different lengths".into()));
        }
        for (i, (&d, c)) in domain_labels.iter().zip(&class_labels).enumerate() {
            if d > 1 || c.is_some_and(|y| y > 1) {
                return Err(Error::Input(format!("row {i}: labels must be 0 or 1")));
            }
            if d == 0 && c.is_none() {
                return Err(Error::Input(format!("row {i}: in-domain rows need a class label")));
            }
        }
        Ok(Self {
            encoder_outputs,
            domain_labels,
            class_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.domain_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain_labels.is_empty()
    }

    fn count(&self, domain: u8) -> usize {
        self.domain_labels.iter().filter(|&&d| d == domain).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DanOutput {
    /// In-domain cross-entropy; `None` when the batch has no in-domain rows.
    pub class_loss: Option<f64>,
    /// `mean_ID ln(1 - D) + mean_OOD ln D`, at most zero.
    pub domain_loss: f64,
    /// `d class_loss / d class_preds`; zero on out-of-domain rows.
    pub grad_class_preds: Vec<f64>,
    /// `d domain_loss / d domain_preds`.
    pub grad_domain_preds: Vec<f64>,
}

/// Binary cross-entropy of one probability, clamped, and its derivative.
fn bce(y: u8, p: f64) -> (f64, f64) {
    let (c, free) = clamp_prob(p);
    let (value, slope) = if y == 1 {
        (-c.ln(), -1.0 / c)
    } else {
        (-(1.0 - c).ln(), 1.0 / (1.0 - c))
    };
    (value, if free { slope } else { 0.0 })
}

/// Domain-adversarial objective terms for given domain-predictor and
/// classifier outputs.
///
/// The domain predictor maximizes `domain_loss` (equivalently minimizes the
/// domain BCE, which is its negative); the encoder minimizes it through a
/// gradient-reversal layer, see [`reverse_gradient`].
pub fn dan_objective(batch: &DomainBatch, domain_preds: &[f64], class_preds: &[f64]) -> Result<DanOutput> {
    let n = batch.len();
    if domain_preds.len() != n || class_preds.len() != n {
        return Err(Error::Input("predictions must align with the batch".into()));
    }
    for &p in domain_preds.iter().chain(class_preds) {
        check_prob(p, "probability")?;
    }
    let (n_id, n_ood) = (batch.count(0), batch.count(1));
    if n_ood == 0 {
        return Err(Error::Input("domain loss needs out-of-domain rows".into()));
    }

    let mut domain_loss = 0.0;
    let mut grad_domain_preds = vec![0.0; n];
    let mut class_sum = 0.0;
    let mut grad_class_preds = vec![0.0; n];
    for i in 0..n {
        let d = batch.domain_labels[i];
        let m = if d == 0 { n_id } else { n_ood } as f64;
        // ln(1 - D) on ID rows and ln D on OOD rows is minus the BCE with target d.
        let (v, g) = bce(d, domain_preds[i]);
        domain_loss -= v / m;
        grad_domain_preds[i] = -g / m;
        if d == 0 {
            let y = batch.class_labels[i].expect("validated");
            let (v, g) = bce(y, class_preds[i]);
            class_sum += v;
            grad_class_preds[i] = g / n_id as f64;
        }
    }
    Ok(DanOutput {
        class_loss: (n_id > 0).then(|| class_sum / n_id as f64),
        domain_loss,
        grad_class_preds,
        grad_domain_preds,
    })
}

/// Gradient-reversal layer backward pass: identity forward, `-gamma * g`
/// backward.
pub fn reverse_gradient(grad: &[f64], gamma: f64) -> Vec<f64> {
    grad.iter().map(|g| -gamma * g).collect()
}

/// Density-ratio weights `g / (1 - g)` from domain-predictor outputs `g`
/// (probability of out-of-domain). `cap`, when given, bounds every weight.
pub fn iw_weights(domain_scores: &[f64], cap: Option<f64>) -> Result<Vec<f64>> {
    if let Some(c) = cap {
        if !(c > 0.0) {
            return Err(Error::Config(format!("weight cap {c} must be positive")));
        }
    }
    domain_scores
        .iter()
        .map(|&g| {
            check_prob(g, "domain score")?;
            let (g, _) = clamp_prob(g);
            let w = g / (1.0 - g);
            Ok(cap.map_or(w, |c| w.min(c)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCeOutput {
    /// `mean_i w_i * CE(y_i, p_i)`.
    pub loss: f64,
    pub grad_probs: Vec<f64>,
    pub grad_weights: Vec<f64>,
}

/// Importance-weighted cross-entropy over labelled rows.
pub fn weighted_cross_entropy(weights: &[f64], probs: &[f64], labels: &[u8]) -> Result<WeightedCeOutput> {
    let n = probs.len();
    if n == 0 || weights.len() != n || labels.len() != n {
        return Err(Error::Input("weights, probabilities and labels must align and be non-empty".into()));
    }
    let mut loss = 0.0;
    let mut grad_probs = vec![0.0; n];
    let mut grad_weights = vec![0.0; n];
    for i in 0..n {
        check_prob(probs[i], "probability")?;
        if labels[i] > 1 {
            return Err(Error::Input(format!("row {i}: label must be 0 or 1")));
        }
        let (v, g) = bce(labels[i], probs[i]);
        loss += weights[i] * v;
        grad_probs[i] = weights[i] * g / n as f64;
        grad_weights[i] = v / n as f64;
    }
    Ok(WeightedCeOutput {
        loss: loss / n as f64,
        grad_probs,
        grad_weights,
    })
}

/// Finite-difference gradient checking.
pub mod gradcheck {
    /// Default central-difference step.
    pub const STEP: f64 = 1e-6;

    /// Central-difference gradient of `f` at `x`.
    pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + h;
                let up = f(&probe);
                probe[i] = x[i] - h;
                let down = f(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
    pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let scale = norm(a).max(norm(b));
        if scale == 0.0 {
            0.0
        } else {
            norm(&diff) / scale
        }
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::{central_difference, relative_error, STEP};
    use super::*;
    use crate::rng::Stream;
    use std::f64::consts::LN_2;

    const TOL: f64 = 1e-5;

    fn flatten(m: &[Vec<f64>]) -> Vec<f64> {
        m.iter().flatten().copied().collect()
    }

    fn reshape(x: &[f64], cols: usize) -> Vec<Vec<f64>> {
        x.chunks(cols).map(<[f64]>::to_vec).collect()
    }

    #[test]
    fn simclr_single_pair_is_zero() {
        let b = EmbeddingBatch::adjacent_pairs(vec![vec![1.0, 0.3], vec![-0.2, 2.0]]).unwrap();
        let out = simclr_loss(&b, 0.5).unwrap();
        assert!(out.loss.abs() < 1e-15);
        assert!(flatten(&out.grad).iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn simclr_orthogonal_pairs_match_enumeration() {
        // Views of image 0 along e1, image 1 along e2; tau = 1.
        let b = EmbeddingBatch::adjacent_pairs(vec![
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 3.0],
        ])
        .unwrap();
        // Each row: positive similarity 1, two negatives with similarity 0.
        let per_row = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        let out = simclr_loss(&b, 1.0).unwrap();
        assert!((out.loss - 4.0 * per_row).abs() < 1e-14);
    }

    #[test]
    fn simclr_is_scale_invariant_and_rejects_zero_rows() {
        let mut rng = Stream::new(7, 0);
        let v: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let scaled: Vec<Vec<f64>> = v.iter().map(|r| r.iter().map(|x| 3.0 * x).collect()).collect();
        let a = simclr_loss(&EmbeddingBatch::adjacent_pairs(v.clone()).unwrap(), 0.2).unwrap();
        let b = simclr_loss(&EmbeddingBatch::adjacent_pairs(scaled).unwrap(), 0.2).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);

        let mut z = v;
        z[3] = vec![0.0; 3];
        assert!(simclr_loss(&EmbeddingBatch::adjacent_pairs(z).unwrap(), 0.2).is_err());
    }

    #[test]
    fn simclr_improves_with_alignment() {
        let base = vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0], vec![-0.5, 0.9]];
        let mut aligned = base.clone();
        aligned[1] = vec![0.8, 0.6];
        let l0 = simclr_loss(&EmbeddingBatch::adjacent_pairs(base).unwrap(), 0.5).unwrap().loss;
        let l1 = simclr_loss(&EmbeddingBatch::adjacent_pairs(aligned).unwrap(), 0.5).unwrap().loss;
        assert!(l1 < l0);
    }

    #[test]
    fn pairing_must_be_an_involution() {
        assert!(EmbeddingBatch::new(vec![vec![1.0]; 3], vec![1, 2, 0]).is_err());
        assert!(EmbeddingBatch::new(vec![vec![1.0]; 2], vec![0, 1]).is_err());
        assert!(EmbeddingBatch::new(vec![vec![1.0]; 4], vec![2, 3, 0, 1]).is_ok());
    }

    #[test]
    fn patch_loss_values() {
        let same = PatchBatch::new(vec![vec![0.2, 0.9]], vec![vec![0.2, 0.9]], vec![true]).unwrap();
        assert!(masked_patch_loss(&same).unwrap().loss.abs() < 1e-15);

        let one = PatchBatch::new(vec![vec![1.0]], vec![vec![0.5]], vec![true]).unwrap();
        assert!((masked_patch_loss(&one).unwrap().loss - LN_2).abs() < 1e-15);

        let none = PatchBatch::new(vec![vec![1.0]], vec![vec![0.5]], vec![false]).unwrap();
        assert!(masked_patch_loss(&none).is_none());
    }

    #[test]
    fn unmasking_removes_exactly_that_patch() {
        let t = vec![vec![0.1, 0.7], vec![0.4, 0.4], vec![1.0, 0.0]];
        let p = vec![vec![0.3, 0.5], vec![0.6, 0.2], vec![0.9, 0.2]];
        let all = masked_patch_loss(&PatchBatch::new(t.clone(), p.clone(), vec![true; 3]).unwrap()).unwrap();
        let two = masked_patch_loss(&PatchBatch::new(t.clone(), p.clone(), vec![true, false, true]).unwrap()).unwrap();
        let only = masked_patch_loss(&PatchBatch::new(t, p, vec![false, true, false]).unwrap()).unwrap();
        assert!((all.loss - two.loss - only.loss).abs() < 1e-15);
        assert!(two.grad[1].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn osp_reduces_and_enumerates() {
        let scores = vec![vec![0.8, 0.3], vec![0.6, 0.1], vec![0.2, 0.7], vec![0.4, 0.9]];
        let labels = [0, 0, 1, 1];
        let plain = osp_objective(&scores, &labels, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        let ce0 = -(0.8f64.ln() + 0.6f64.ln()) / 2.0;
        let ce1 = -(0.7f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((plain.per_head[0] - ce0).abs() < 1e-15);
        assert!((plain.per_head[1] - ce1).abs() < 1e-15);

        // Term by term with lambda = (0.5, 2), phi = (0.1, 0.3).
        let out = osp_objective(&scores, &labels, &[0.5, 2.0], &[0.1, 0.3]).unwrap();
        let neg0 = -(0.8f64.ln() + 0.6f64.ln()) / 2.0; // 1 - f_0 on samples 2, 3
        let neg1 = -(0.7f64.ln() + 0.9f64.ln()) / 2.0; // 1 - f_1 on samples 0, 1
        let h0 = ce0 + 0.1 + 0.5 * (neg0 - 0.1);
        let h1 = ce1 + 0.3 + 2.0 * (neg1 - 0.3);
        assert!((out.per_head[0] - h0).abs() < 1e-14);
        assert!((out.per_head[1] - h1).abs() < 1e-14);
        assert!((out.total - h0 - h1).abs() < 1e-14);

        assert!(osp_objective(&scores, &[0, 0, 0, 0], &[0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(osp_objective(&scores, &labels, &[-1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn osp_perfect_heads_leave_phi_terms() {
        let scores = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let out = osp_objective(&scores, &[0, 1], &[0.25, 0.5], &[0.4, 0.2]).unwrap();
        let phi_terms = 0.4 * (1.0 - 0.25) + 0.2 * (1.0 - 0.5);
        assert!((out.total - phi_terms).abs() < 1e-6);
    }

    fn domain_batch() -> DomainBatch {
        DomainBatch::new(
            vec![vec![0.0]; 6],
            vec![0, 0, 0, 1, 1, 1],
            vec![Some(1), Some(0), Some(1), None, None, None],
        )
        .unwrap()
    }

    #[test]
    fn dan_symmetric_ignorance() {
        let b = domain_batch();
        let out = dan_objective(&b, &[0.5; 6], &[0.5; 6]).unwrap();
        assert!((out.domain_loss + 2.0 * LN_2).abs() < 1e-15);
        assert!((out.class_loss.unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn dan_mixed_batch_matches_hand_terms() {
        let b = domain_batch();
        let d = [0.1, 0.3, 0.2, 0.8, 0.6, 0.9];
        let c = [0.7, 0.4, 0.9, 0.5, 0.5, 0.5];
        let out = dan_objective(&b, &d, &c).unwrap();
        let id = (0.9f64.ln() + 0.7f64.ln() + 0.8f64.ln()) / 3.0;
        let ood = (0.8f64.ln() + 0.6f64.ln() + 0.9f64.ln()) / 3.0;
        assert!((out.domain_loss - (id + ood)).abs() < 1e-15);
        let ce = -(0.7f64.ln() + 0.6f64.ln() + 0.9f64.ln()) / 3.0;
        assert!((out.class_loss.unwrap() - ce).abs() < 1e-15);
        assert!(out.grad_class_preds[3..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dan_perfect_predictor_approaches_zero_from_below() {
        let b = domain_batch();
        let out = dan_objective(&b, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[0.5; 6]).unwrap();
        assert!(out.domain_loss < 0.0 && out.domain_loss > -1e-6);
    }

    #[test]
    fn dan_without_id_rows_has_no_class_loss() {
        let b = DomainBatch::new(vec![vec![0.0]; 2], vec![1, 1], vec![None, None]).unwrap();
        assert!(dan_objective(&b, &[0.6, 0.7], &[0.5, 0.5]).unwrap().class_loss.is_none());
    }

    #[test]
    fn gradient_reversal_negates_and_scales() {
        assert_eq!(reverse_gradient(&[1.0, -2.0], 0.5), vec![-0.5, 1.0]);
    }

    #[test]
    fn iw_weight_values() {
        let w = iw_weights(&[0.5, 0.75], None).unwrap();
        assert_eq!(w, vec![1.0, 3.0]);
        assert_eq!(iw_weights(&[0.99], Some(10.0)).unwrap(), vec![10.0]);
        assert!(iw_weights(&[1.0], None).unwrap()[0].is_finite());
        assert!(iw_weights(&[0.5], Some(0.0)).is_err());
    }

    #[test]
    fn weighted_ce_is_manual_weighted_mean() {
        let w = iw_weights(&[0.5, 0.75, 0.2], None).unwrap();
        let out = weighted_cross_entropy(&w, &[0.9, 0.3, 0.6], &[1, 0, 0]).unwrap();
        let manual = (1.0 * -(0.9f64.ln()) + 3.0 * -(0.7f64.ln()) + 0.25 * -(0.4f64.ln())) / 3.0;
        assert!((out.loss - manual).abs() < 1e-15);
    }

    // Finite-difference checks on randomized 10-point batches.

    fn probs(rng: &mut Stream, n: usize) -> Vec<f64> {
        (0..n).map(|_| 0.05 + 0.9 * rng.uniform()).collect()
    }

    #[test]
    fn simclr_gradient_matches_finite_differences() {
        let mut rng = Stream::new(11, 0);
        for _ in 0..5 {
            let x: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
            let f = |x: &[f64]| simclr_loss(&EmbeddingBatch::adjacent_pairs(reshape(x, 3)).unwrap(), 0.5).unwrap().loss;
            let a = flatten(&simclr_loss(&EmbeddingBatch::adjacent_pairs(reshape(&x, 3)).unwrap(), 0.5).unwrap().grad);
            assert!(relative_error(&a, &central_difference(f, &x, STEP)) < TOL);
        }
    }

    #[test]
    fn patch_gradient_matches_finite_differences() {
        let mut rng = Stream::new(12, 0);
        let target: Vec<Vec<f64>> = (0..10).map(|_| (0..4).map(|_| rng.uniform()).collect()).collect();
        let mask: Vec<bool> = (0..10).map(|i| i % 3 != 0).collect();
        let x = probs(&mut rng, 40);
        let f = |x: &[f64]| masked_patch_loss(&PatchBatch::new(target.clone(), reshape(x, 4), mask.clone()).unwrap()).unwrap().loss;
        let a = flatten(&masked_patch_loss(&PatchBatch::new(target.clone(), reshape(&x, 4), mask.clone()).unwrap()).unwrap().grad);
        assert!(relative_error(&a, &central_difference(f, &x, STEP)) < TOL);
    }

    #[test]
    fn osp_gradient_matches_finite_differences() {
        let mut rng = Stream::new(13, 0);
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let scores = probs(&mut rng, 30);
        let lambdas = [0.3, 1.2, 0.7];
        let phis = [0.2, -0.1, 0.5];
        // Parameters packed as scores ++ phis ++ lambdas.
        let mut x = scores.clone();
        x.extend(phis);
        x.extend(lambdas);
        let f = |x: &[f64]| osp_objective(&reshape(&x[..30], 3), &labels, &x[33..36], &x[30..33]).unwrap().total;
        let out = osp_objective(&reshape(&scores, 3), &labels, &lambdas, &phis).unwrap();
        let mut a = flatten(&out.grad_scores);
        a.extend(&out.grad_phis);
        a.extend(&out.grad_lambdas);
        assert!(relative_error(&a, &central_difference(f, &x, STEP)) < TOL);
    }

    #[test]
    fn dan_gradients_match_finite_differences() {
        let mut rng = Stream::new(14, 0);
        let b = DomainBatch::new(
            vec![vec![0.0]; 10],
            (0..10).map(|i| u8::from(i >= 6)).collect(),
            (0..10).map(|i| (i < 6).then_some((i % 2) as u8)).collect(),
        )
        .unwrap();
        let d = probs(&mut rng, 10);
        let c = probs(&mut rng, 10);
        let out = dan_objective(&b, &d, &c).unwrap();
        let fd = |x: &[f64]| dan_objective(&b, x, &c).unwrap().domain_loss;
        assert!(relative_error(&out.grad_domain_preds, &central_difference(fd, &d, STEP)) < TOL);
        let fc = |x: &[f64]| dan_objective(&b, &d, x).unwrap().class_loss.unwrap();
        assert!(relative_error(&out.grad_class_preds, &central_difference(fc, &c, STEP)) < TOL);
    }

    #[test]
    fn weighted_ce_gradients_match_finite_differences() {
        let mut rng = Stream::new(15, 0);
        let labels: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let w = iw_weights(&probs(&mut rng, 10), None).unwrap();
        let p = probs(&mut rng, 10);
        let out = weighted_cross_entropy(&w, &p, &labels).unwrap();
        let fp = |x: &[f64]| weighted_cross_entropy(&w, x, &labels).unwrap().loss;
        assert!(relative_error(&out.grad_probs, &central_difference(fp, &p, STEP)) < TOL);
        let fw = |x: &[f64]| weighted_cross_entropy(x, &p, &labels).unwrap().loss;
        assert!(relative_error(&out.grad_weights, &central_difference(fw, &w, STEP)) < TOL);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn iw_weights_increase(a in 1e-6f64..0.999, b in 1e-6f64..0.999) {
                prop_assume!(a < b);
                let w = iw_weights(&[a, b], None).unwrap();
                prop_assert!(w[0] < w[1]);
            }

            #[test]
            fn patch_loss_nonnegative(
                t in prop::collection::vec(0.0f64..=1.0, 6),
                p in prop::collection::vec(0.0f64..=1.0, 6),
            ) {
                let b = PatchBatch::new(reshape(&t, 2), reshape(&p, 2), vec![true, true, true]).unwrap();
                prop_assert!(masked_patch_loss(&b).unwrap().loss >= -1e-15);
            }

            #[test]
            fn simclr_scale_invariance(x in prop::collection::vec(0.1f64..2.0, 8), s in 0.01f64..100.0) {
                let a = simclr_loss(&EmbeddingBatch::adjacent_pairs(reshape(&x, 2)).unwrap(), 0.3).unwrap().loss;
                let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
                let b = simclr_loss(&EmbeddingBatch::adjacent_pairs(reshape(&scaled, 2)).unwrap(), 0.3).unwrap().loss;
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
