//! Logistic-regression trainers for the synthetic study.
//!
//! * Plain: in-domain rows only, full-batch Nesterov accelerated gradient
//!   descent with adaptive restart, step `1 / L` where `L` bounds the Hessian.
//!   Stops when the gradient norm falls below `grad_tol`.
//! * DAN: a 2x2 linear encoder `h = A x` (initialised to the identity) feeds
//!   a logistic classifier and a logistic domain predictor. The domain
//!   predictor descends the domain cross-entropy; the encoder receives the
//!   classifier gradient plus the reversed (`-gamma`) domain gradient.
//! * IW: the same architecture, but the domain predictor sees detached
//!   encodings and the classifier minimizes cross-entropy weighted by
//!   `g / (1 - g)`, the weights treated as constants.
//!
//! All three are deterministic; the seed is recorded, not consumed.

use std::str::FromStr;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::SyntheticDataset;
use crate::error::{Error, Result};
use crate::objectives;
use crate::predstore::Domain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    Plain,
    Dan,
    Iw,
}

impl TrainerKind {
    pub const ALL: [TrainerKind; 3] = [TrainerKind::Plain, TrainerKind::Dan, TrainerKind::Iw];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::Dan => "dan",
            Self::Iw => "iw",
        }
    }
}

impl std::fmt::Display for TrainerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "dan" => Ok(Self::Dan),
            "iw" => Ok(Self::Iw),
            other => Err(Error::Config(format!("unknown trainer {other:?}"))),
        }
    }
}

/// Optimisation settings. [`TrainConfig::for_trainer`] gives the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Step size; `None` uses `1 / L` (plain trainer only).
    pub lr: Option<f64>,
    /// L2 penalty on the classifier weights (not the bias).
    pub l2: f64,
    /// Gradient-norm stopping threshold; zero runs the full budget.
    pub grad_tol: f64,
    /// Gradient-reversal multiplier.
    pub gamma: f64,
    /// Domain-predictor updates per epoch.
    pub domain_steps: usize,
    /// Domain-predictor step size; `None` uses `lr`.
    #[serde(default)]
    pub domain_lr: Option<f64>,
    pub domain_weight_decay: f64,
    pub weight_cap: Option<f64>,
}

impl TrainConfig {
    pub fn plain() -> Self {
        Self {
            max_epochs: 200_000,
            lr: None,
            l2: 0.0,
            grad_tol: 1e-10,
            gamma: 0.0,
            domain_steps: 0,
            domain_lr: None,
            domain_weight_decay: 0.0,
            weight_cap: None,
        }
    }

    pub fn adversarial() -> Self {
        Self {
            max_epochs: 3000,
            lr: Some(0.05),
            l2: 0.0,
            grad_tol: 0.0,
            gamma: 0.5,
            domain_steps: 5,
            domain_lr: None,
            domain_weight_decay: 0.01,
            weight_cap: None,
        }
    }

    pub fn for_trainer(kind: TrainerKind) -> Self {
        match kind {
            TrainerKind::Plain => Self::plain(),
            TrainerKind::Dan | TrainerKind::Iw => Self::adversarial(),
        }
    }
}

/// Encoder and heads of the DAN / IW architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversarialParams {
    /// `h = encoder * x`.
    pub encoder: [[f64; 2]; 2],
    pub head: [f64; 2],
    pub bias: f64,
    pub domain_weights: [f64; 2],
    pub domain_bias: f64,
}

impl Default for AdversarialParams {
    fn default() -> Self {
        Self {
            encoder: [[1.0, 0.0], [0.0, 1.0]],
            head: [0.0; 2],
            bias: 0.0,
            domain_weights: [0.0; 2],
            domain_bias: 0.0,
        }
    }
}

impl AdversarialParams {
    pub const LEN: usize = 10;

    /// `[a00, a01, a10, a11, w0, w1, b, u0, u1, c]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let a = self.encoder;
        vec![
            a[0][0],
            a[0][1],
            a[1][0],
            a[1][1],
            self.head[0],
            self.head[1],
            self.bias,
            self.domain_weights[0],
            self.domain_weights[1],
            self.domain_bias,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            encoder: [[v[0], v[1]], [v[2], v[3]]],
            head: [v[4], v[5]],
            bias: v[6],
            domain_weights: [v[7], v[8]],
            domain_bias: v[9],
        }
    }

    pub fn encode(&self, x: [f64; 2]) -> [f64; 2] {
        let a = self.encoder;
        [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
    }

    /// Classifier weights in input space, `encoder^T head`.
    pub fn effective_weights(&self) -> [f64; 2] {
        let (a, w) = (self.encoder, self.head);
        [w[0] * a[0][0] + w[1] * a[1][0], w[0] * a[0][1] + w[1] * a[1][1]]
    }
}

/// Saved encoder state of a DAN or IW model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderState {
    pub params: AdversarialParams,
    pub weight_cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedLinearModel {
    pub trainer: TrainerKind,
    /// Input-space weights; prediction is `logistic(weights . x + bias)`.
    pub weights: [f64; 2],
    pub bias: f64,
    /// Training loss per epoch (classification loss for DAN / IW).
    pub trace: Vec<f64>,
    /// Domain cross-entropy per epoch (DAN / IW).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domain_trace: Vec<f64>,
    pub epochs_run: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderState>,
    pub config: TrainConfig,
    pub seed: u64,
}

impl TrainedLinearModel {
    pub fn logit(&self, x: [f64; 2]) -> f64 {
        self.weights[0] * x[0] + self.weights[1] * x[1] + self.bias
    }

    pub fn predict(&self, x: [f64; 2]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// `|w_2| / |w_1|`: how much the boundary leans on the domain feature.
    pub fn feature2_ratio(&self) -> f64 {
        self.weights[1].abs() / self.weights[0].abs()
    }

    /// Encoded representation (identity for the plain trainer).
    pub fn represent(&self, x: [f64; 2]) -> [f64; 2] {
        self.encoder.as_ref().map_or(x, |e| e.params.encode(x))
    }

    /// Density-ratio weights the model's domain predictor assigns to `xs`.
    pub fn importance_weights(&self, xs: &[[f64; 2]]) -> Option<Vec<f64>> {
        let e = self.encoder.as_ref()?;
        let g: Vec<f64> = xs.iter().map(|&x| domain_prob(&e.params, x)).collect();
        objectives::iw_weights(&g, e.weight_cap).ok()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy `ln(1 + e^z) - y z` of label `y` under logit `z`, and its
/// derivative `sigmoid(z) - y`, sharing one exp.
fn loss_and_residual(z: f64, y: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    let softplus = z.max(0.0) + e.ln_1p();
    let p = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (softplus - y * z, p - y)
}

fn domain_prob(p: &AdversarialParams, x: [f64; 2]) -> f64 {
    let h = p.encode(x);
    sigmoid(p.domain_weights[0] * h[0] + p.domain_weights[1] * h[1] + p.domain_bias)
}

/// Mean logistic loss of a linear model with L2 on the weights, over
/// `theta = [w1, w2, b]`.
#[derive(Debug, Clone, Copy)]
pub struct PlainObjective<'a> {
    pub x: &'a [[f64; 2]],
    pub y: &'a [u8],
    pub l2: f64,
}

impl PlainObjective<'_> {
    pub fn value_grad(&self, theta: [f64; 3]) -> (f64, [f64; 3]) {
        let n = self.x.len() as f64;
        let mut value = 0.0;
        let mut g = [0.0; 3];
        for (x, &y) in self.x.iter().zip(self.y) {
            let z = theta[0] * x[0] + theta[1] * x[1] + theta[2];
            let (l, e) = loss_and_residual(z, f64::from(y));
            value += l;
            g[0] += e * x[0];
            g[1] += e * x[1];
            g[2] += e;
        }
        value /= n;
        for gi in &mut g {
            *gi /= n;
        }
        value += 0.5 * self.l2 * (theta[0] * theta[0] + theta[1] * theta[1]);
        g[0] += self.l2 * theta[0];
        g[1] += self.l2 * theta[1];
        (value, g)
    }

    /// Upper bound on the Hessian's largest eigenvalue.
    fn lipschitz(&self) -> f64 {
        let mut m = Matrix3::zeros();
        for x in self.x {
            let v = nalgebra::Vector3::new(x[0], x[1], 1.0);
            m += v * v.transpose();
        }
        m /= self.x.len() as f64;
        let top = SymmetricEigen::new(m).eigenvalues.max();
        top / 4.0 + self.l2
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn require_classes(labels: &[u8], what: &str) -> Result<()> {
    if labels.contains(&0) && labels.contains(&1) {
        Ok(())
    } else {
        Err(Error::Fit(format!("{what} needs both classes")))
    }
}

/// Plain logistic regression on the in-domain rows of `data`.
pub fn fit_plain(data: &SyntheticDataset, config: &TrainConfig, seed: u64) -> Result<TrainedLinearModel> {
    let (x, y) = data.domain_part(Domain::InDomain);
    require_classes(&y, "plain training")?;
    let obj = PlainObjective { x: &x, y: &y, l2: config.l2 };
    let lr = match config.lr {
        Some(lr) => lr,
        None => 1.0 / obj.lipschitz(),
    };
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {lr} must be positive")));
    }

    let step = |p: [f64; 3], g: [f64; 3]| [p[0] - lr * g[0], p[1] - lr * g[1], p[2] - lr * g[2]];
    let mut theta = [0.0; 3];
    let mut look = theta;
    let mut t = 1.0f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut grad_norm = norm(&obj.value_grad(theta).1);
    for _ in 0..config.max_epochs {
        let (_, g) = obj.value_grad(look);
        let next = step(look, g);
        let (value, g_next) = obj.value_grad(next);
        trace.push(value);
        grad_norm = norm(&g_next);
        if grad_norm < config.grad_tol {
            theta = next;
            converged = true;
            break;
        }
        let moved: f64 = (0..3).map(|i| g[i] * (next[i] - theta[i])).sum();
        if moved > 0.0 {
            // Momentum points uphill: restart.
            t = 1.0;
            look = next;
        } else {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            look = [0, 1, 2].map(|i| next[i] + beta * (next[i] - theta[i]));
            t = t_next;
        }
        theta = next;
    }
    finish(TrainedLinearModel {
        trainer: TrainerKind::Plain,
        weights: [theta[0], theta[1]],
        bias: theta[2],
        epochs_run: trace.len(),
        trace,
        domain_trace: Vec::new(),
        converged,
        final_grad_norm: grad_norm,
        encoder: None,
        config: config.clone(),
        seed,
    })
}

fn finish(model: TrainedLinearModel) -> Result<TrainedLinearModel> {
    let finite = model.trace.iter().chain(&model.domain_trace).all(|v| v.is_finite())
        && model.weights.iter().all(|w| w.is_finite())
        && model.bias.is_finite();
    if finite {
        Ok(model)
    } else {
        Err(Error::Fit(format!("{} training diverged", model.trainer)))
    }
}

/// Gradient of the classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassGrad {
    pub encoder: [[f64; 2]; 2],
    pub head: [f64; 2],
    pub bias: f64,
}

/// Gradient of the regularised domain cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DomainGrad {
    pub encoder: [[f64; 2]; 2],
    pub weights: [f64; 2],
    pub bias: f64,
}

/// Losses of the encoder architecture over a mixed-domain dataset.
#[derive(Debug, Clone)]
pub struct AdversarialObjective<'a> {
    pub x: &'a [[f64; 2]],
    pub labels: &'a [u8],
    pub domains: &'a [Domain],
    pub domain_weight_decay: f64,
    n_id: usize,
    n_ood: usize,
}

impl<'a> AdversarialObjective<'a> {
    pub fn new(data: &'a SyntheticDataset, domain_weight_decay: f64) -> Result<Self> {
        let n_id = data.domains.iter().filter(|&&d| d == Domain::InDomain).count();
        let n_ood = data.len() - n_id;
        if n_id == 0 || n_ood == 0 {
            return Err(Error::Fit("training needs rows from both domains".into()));
        }
        let id_labels: Vec<u8> = data.rows(Domain::InDomain).iter().map(|&i| data.labels[i]).collect();
        require_classes(&id_labels, "in-domain training")?;
        Ok(Self {
            x: &data.features,
            labels: &data.labels,
            domains: &data.domains,
            domain_weight_decay,
            n_id,
            n_ood,
        })
    }

    /// Mean (optionally weighted) cross-entropy on in-domain rows.
    /// `weights` is aligned with the in-domain rows in order.
    pub fn class_loss(&self, p: &AdversarialParams, weights: Option<&[f64]>) -> (f64, ClassGrad) {
        let n = self.n_id as f64;
        let mut value = 0.0;
        let mut g = ClassGrad::default();
        let mut k = 0;
        for i in 0..self.x.len() {
            if self.domains[i] != Domain::InDomain {
                continue;
            }
            let wt = weights.map_or(1.0, |w| w[k]);
            k += 1;
            let x = self.x[i];
            let h = p.encode(x);
            let z = p.head[0] * h[0] + p.head[1] * h[1] + p.bias;
            let (l, r) = loss_and_residual(z, f64::from(self.labels[i]));
            value += wt * l;
            let e = wt * r / n;
            for r in 0..2 {
                g.head[r] += e * h[r];
                for c in 0..2 {
                    g.encoder[r][c] += e * p.head[r] * x[c];
                }
            }
            g.bias += e;
        }
        (value / n, g)
    }

    /// Domain cross-entropy `-(mean_ID ln(1 - D) + mean_OOD ln D)` plus
    /// `decay / 2 * |u|^2` on the domain predictor weights.
    pub fn domain_loss(&self, p: &AdversarialParams) -> (f64, DomainGrad) {
        let mut value = 0.0;
        let mut g = DomainGrad::default();
        let u = p.domain_weights;
        for i in 0..self.x.len() {
            let (t, m) = match self.domains[i] {
                Domain::InDomain => (0.0, self.n_id as f64),
                Domain::OutOfDomain => (1.0, self.n_ood as f64),
            };
            let x = self.x[i];
            let h = p.encode(x);
            let z = u[0] * h[0] + u[1] * h[1] + p.domain_bias;
            let (l, r) = loss_and_residual(z, t);
            value += l / m;
            let e = r / m;
            for r in 0..2 {
                g.weights[r] += e * h[r];
                for c in 0..2 {
                    g.encoder[r][c] += e * u[r] * x[c];
                }
            }
            g.bias += e;
        }
        let wd = self.domain_weight_decay;
        value += 0.5 * wd * (u[0] * u[0] + u[1] * u[1]);
        g.weights[0] += wd * u[0];
        g.weights[1] += wd * u[1];
        (value, g)
    }

    /// Density-ratio weights for the in-domain rows, in order.
    pub fn importance_weights(&self, p: &AdversarialParams, cap: Option<f64>) -> Result<Vec<f64>> {
        let g: Vec<f64> = (0..self.x.len())
            .filter(|&i| self.domains[i] == Domain::InDomain)
            .map(|i| domain_prob(p, self.x[i]))
            .collect();
        objectives::iw_weights(&g, cap)
    }

    /// Encoder gradient under gradient reversal: the classification
    /// gradient plus `-gamma` times the domain gradient.
    pub fn reversed_encoder_grad(&self, p: &AdversarialParams, gamma: f64) -> [[f64; 2]; 2] {
        let (_, gc) = self.class_loss(p, None);
        let (_, gd) = self.domain_loss(p);
        combine_reversed(gc.encoder, gd.encoder, gamma)
    }
}

fn combine_reversed(class: [[f64; 2]; 2], domain: [[f64; 2]; 2], gamma: f64) -> [[f64; 2]; 2] {
    let rev = objectives::reverse_gradient(&[domain[0][0], domain[0][1], domain[1][0], domain[1][1]], gamma);
    [
        [class[0][0] + rev[0], class[0][1] + rev[1]],
        [class[1][0] + rev[2], class[1][1] + rev[3]],
    ]
}

fn adversarial_lr(config: &TrainConfig) -> Result<f64> {
    let lr = config.lr.unwrap_or(0.05);
    if lr > 0.0 && lr.is_finite() {
        Ok(lr)
    } else {
        Err(Error::Config(format!("learning rate {lr} must be positive")))
    }
}

/// Gradient steps on the domain predictor with the encoder held fixed.
fn domain_updates(obj: &AdversarialObjective<'_>, p: &mut AdversarialParams, steps: usize, lr: f64) {
    if steps == 0 {
        return;
    }
    let h: Vec<[f64; 2]> = obj.x.iter().map(|&x| p.encode(x)).collect();
    let (m_id, m_ood) = (obj.n_id as f64, obj.n_ood as f64);
    for _ in 0..steps {
        let u = p.domain_weights;
        let mut g = [0.0; 3];
        for (hi, d) in h.iter().zip(obj.domains) {
            let (t, m) = match d {
                Domain::InDomain => (0.0, m_id),
                Domain::OutOfDomain => (1.0, m_ood),
            };
            let e = (sigmoid(u[0] * hi[0] + u[1] * hi[1] + p.domain_bias) - t) / m;
            g[0] += e * hi[0];
            g[1] += e * hi[1];
            g[2] += e;
        }
        let wd = obj.domain_weight_decay;
        p.domain_weights[0] -= lr * (g[0] + wd * u[0]);
        p.domain_weights[1] -= lr * (g[1] + wd * u[1]);
        p.domain_bias -= lr * g[2];
    }
}

fn apply_class_step(p: &mut AdversarialParams, encoder_grad: [[f64; 2]; 2], g: &ClassGrad, lr: f64) {
    for r in 0..2 {
        for c in 0..2 {
            p.encoder[r][c] -= lr * encoder_grad[r][c];
        }
        p.head[r] -= lr * g.head[r];
    }
    p.bias -= lr * g.bias;
}

fn adversarial_model(
    trainer: TrainerKind,
    p: AdversarialParams,
    trace: Vec<f64>,
    domain_trace: Vec<f64>,
    final_grad_norm: f64,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedLinearModel> {
    finish(TrainedLinearModel {
        trainer,
        weights: p.effective_weights(),
        bias: p.bias,
        epochs_run: trace.len(),
        trace,
        domain_trace,
        converged: false,
        final_grad_norm,
        encoder: Some(EncoderState {
            params: p,
            weight_cap: config.weight_cap,
        }),
        config: config.clone(),
        seed,
    })
}

/// Domain-adversarial training on labelled in-domain and unlabelled
/// out-of-domain rows (out-of-domain labels are never read).
pub fn fit_dan(data: &SyntheticDataset, config: &TrainConfig, seed: u64) -> Result<TrainedLinearModel> {
    let obj = AdversarialObjective::new(data, config.domain_weight_decay)?;
    let lr = adversarial_lr(config)?;
    let mut p = AdversarialParams::default();
    let mut trace = Vec::with_capacity(config.max_epochs);
    let mut domain_trace = Vec::with_capacity(config.max_epochs);
    let mut grad_norm = f64::NAN;
    for _ in 0..config.max_epochs {
        domain_updates(&obj, &mut p, config.domain_steps, config.domain_lr.unwrap_or(lr));
        let (dv, gd) = obj.domain_loss(&p);
        let (cv, gc) = obj.class_loss(&p, None);
        let ge = combine_reversed(gc.encoder, gd.encoder, config.gamma);
        grad_norm = norm(&[ge[0][0], ge[0][1], ge[1][0], ge[1][1], gc.head[0], gc.head[1], gc.bias]);
        apply_class_step(&mut p, ge, &gc, lr);
        trace.push(cv);
        domain_trace.push(dv);
        if grad_norm < config.grad_tol {
            break;
        }
    }
    adversarial_model(TrainerKind::Dan, p, trace, domain_trace, grad_norm, config, seed)
}

/// Importance-weighted training: the domain predictor is fitted on detached
/// encodings, and its odds reweight the in-domain classification loss.
pub fn fit_iw(data: &SyntheticDataset, config: &TrainConfig, seed: u64) -> Result<TrainedLinearModel> {
    let obj = AdversarialObjective::new(data, config.domain_weight_decay)?;
    let lr = adversarial_lr(config)?;
    let mut p = AdversarialParams::default();
    let mut trace = Vec::with_capacity(config.max_epochs);
    let mut domain_trace = Vec::with_capacity(config.max_epochs);
    let mut grad_norm = f64::NAN;
    for _ in 0..config.max_epochs {
        domain_updates(&obj, &mut p, config.domain_steps, config.domain_lr.unwrap_or(lr));
        let (dv, _) = obj.domain_loss(&p);
        let w = obj.importance_weights(&p, config.weight_cap)?;
        let (cv, gc) = obj.class_loss(&p, Some(&w));
        grad_norm = norm(&[
            gc.encoder[0][0],
            gc.encoder[0][1],
            gc.encoder[1][0],
            gc.encoder[1][1],
            gc.head[0],
            gc.head[1],
            gc.bias,
        ]);
        apply_class_step(&mut p, gc.encoder, &gc, lr);
        trace.push(cv);
        domain_trace.push(dv);
        if grad_norm < config.grad_tol {
            break;
        }
    }
    adversarial_model(TrainerKind::Iw, p, trace, domain_trace, grad_norm, config, seed)
}

pub fn fit(kind: TrainerKind, data: &SyntheticDataset, config: &TrainConfig, seed: u64) -> Result<TrainedLinearModel> {
    match kind {
        TrainerKind::Plain => fit_plain(data, config, seed),
        TrainerKind::Dan => fit_dan(data, config, seed),
        TrainerKind::Iw => fit_iw(data, config, seed),
    }
}
