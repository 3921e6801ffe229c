//! Policy-side optimization: Adam on theta, the exponential-moving-average
//! reward baseline, and the clipped-surrogate PPO update.

use crate::error::{Error, Result};
use crate::policy::{grad_log_prob, log_prob, sigmoid, OpCounts, PolicyParams};
use serde::{Deserialize, Serialize};

/// Adam optimizer state for the policy parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with the search defaults (lr 0.1, beta1 0.5, beta2 0.999).
    pub fn new(k: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { m: vec![0.0; k], v: vec![0.0; k], step: 0, lr, beta1, beta2, eps: 1e-8 }
    }
}

/// One bias-corrected Adam ascent step: theta <- theta + lr * m_hat / (sqrt(v_hat) + eps).
pub fn adam_step(
    mut s: AdamState,
    theta: &[f64],
    grad: &[f64],
) -> Result<(AdamState, Vec<f64>)> {
    assert_eq!(theta.len(), grad.len());
    assert_eq!(theta.len(), s.m.len());
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::GradientOverflow(i));
    }
    s.step += 1;
    let bc1 = 1.0 - s.beta1.powi(s.step as i32);
    let bc2 = 1.0 - s.beta2.powi(s.step as i32);
    let mut out = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        s.m[j] = s.beta1 * s.m[j] + (1.0 - s.beta1) * grad[j];
        s.v[j] = s.beta2 * s.v[j] + (1.0 - s.beta2) * grad[j] * grad[j];
        let m_hat = s.m[j] / bc1;
        let v_hat = s.v[j] / bc2;
        out.push(theta[j] + s.lr * m_hat / (v_hat.sqrt() + s.eps));
    }
    Ok((s, out))
}

/// Exponential moving average of rewards, decay 0.9, seeded by the first reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub value: f64,
    pub initialized: bool,
    pub decay: f64,
}

impl Default for BaselineState {
    fn default() -> Self {
        Self { value: 0.0, initialized: false, decay: 0.9 }
    }
}

pub fn baseline_update(b: BaselineState, reward: f64) -> BaselineState {
    if !b.initialized {
        BaselineState { value: reward, initialized: true, decay: b.decay }
    } else {
        BaselineState { value: b.decay * b.value + (1.0 - b.decay) * reward, ..b }
    }
}

/// One search iteration's collected experience: the draw counts, the log
/// probabilities they had under the sampling policy, and the advantage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PpoBatch {
    pub counts: OpCounts,
    /// ln p_{theta_old}(k) for every k with counts[k] > 0 (others unused).
    pub old_log_probs: Vec<f64>,
    pub reward: f64,
    pub advantage: f64,
}

impl PpoBatch {
    /// Record log-probs of the sampled classes under the sampling policy.
    pub fn collect(p: &PolicyParams, counts: OpCounts, reward: f64, baseline: f64) -> Self {
        let old_log_probs = counts
            .counts
            .iter()
            .enumerate()
            .map(|(k, &c)| if c > 0 { log_prob(p, k).expect("sampled op is unmasked") } else { 0.0 })
            .collect();
        Self { counts, old_log_probs, reward, advantage: reward - baseline }
    }
}

/// PPO update hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    pub surrogate_epochs: usize,
    pub lr_theta: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self { clip: 0.2, surrogate_epochs: 4, lr_theta: 0.1, beta1: 0.5, beta2: 0.999 }
    }
}

/// Clipped surrogate objective
///   L = sum_k counts_k * min(r_k A, clip(r_k, 1-eps, 1+eps) A) / total
/// with r_k = exp(ln p_theta(k) - ln p_theta_old(k)).
pub fn ppo_surrogate(p: &PolicyParams, batch: &PpoBatch, clip: f64) -> f64 {
    if batch.counts.total == 0 {
        return 0.0;
    }
    let total = batch.counts.total as f64;
    let a = batch.advantage;
    let mut loss = 0.0;
    for (k, &c) in batch.counts.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let r = (log_prob(p, k).expect("sampled op is unmasked") - batch.old_log_probs[k]).exp();
        let clipped = r.clamp(1.0 - clip, 1.0 + clip);
        loss += c as f64 * (r * a).min(clipped * a);
    }
    loss / total
}

/// Analytic gradient of the clipped surrogate with respect to theta.
///
/// Terms where the clipped branch is active contribute nothing; the rest
/// contribute (c_k / total) * A * r_k * d ln p_theta(k) / d theta, which is
/// accumulated through the normalized-sigmoid log-prob in O(K).
pub fn ppo_surrogate_grad(p: &PolicyParams, batch: &PpoBatch, clip: f64) -> Vec<f64> {
    let k_total = p.k();
    let mut grad = vec![0.0; k_total];
    if batch.counts.total == 0 {
        return grad;
    }
    let total = batch.counts.total as f64;
    let a = batch.advantage;
    let s: f64 = p
        .theta
        .iter()
        .zip(&p.mask)
        .filter(|(_, &m)| m)
        .map(|(&t, _)| sigmoid(t))
        .sum();
    let mut weight_sum = 0.0;
    for (k, &c) in batch.counts.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let lp = log_prob(p, k).expect("sampled op is unmasked");
        let r = (lp - batch.old_log_probs[k]).exp();
        let clipped = r.clamp(1.0 - clip, 1.0 + clip);
        // min picks the unclipped branch (ties included): gradient flows.
        if r * a <= clipped * a {
            let w = c as f64 / total * a * r;
            let sig = sigmoid(p.theta[k]);
            grad[k] += w * (1.0 - sig);
            weight_sum += w;
        }
    }
    for j in 0..k_total {
        if p.mask[j] {
            let sig = sigmoid(p.theta[j]);
            grad[j] -= weight_sum * sig * (1.0 - sig) / s;
        }
    }
    grad
}

/// Run `surrogate_epochs` Adam ascent steps on the clipped surrogate.
/// Masked coordinates are left untouched.
pub fn ppo_update(
    p: &PolicyParams,
    batch: &PpoBatch,
    adam: AdamState,
    cfg: &PpoConfig,
) -> Result<(PolicyParams, AdamState)> {
    let mut cur = p.clone();
    let mut adam = adam;
    for _ in 0..cfg.surrogate_epochs {
        let grad = ppo_surrogate_grad(&cur, batch, cfg.clip);
        let (next_adam, mut theta) = adam_step(adam, &cur.theta, &grad)?;
        for j in 0..theta.len() {
            if !cur.mask[j] {
                theta[j] = cur.theta[j];
            }
        }
        adam = next_adam;
        cur = PolicyParams { theta, mask: cur.mask };
    }
    Ok((cur, adam))
}
