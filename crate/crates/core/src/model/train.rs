//! Mini-batch SGD with Nesterov momentum, weight decay, cosine learning
//! rate, and the per-image augmentation pipeline
//! flip -> pad+crop -> sampled policy op -> cutout.

use super::net::{softmax_cross_entropy, Net};
use super::ModelState;
use crate::augment::{apply_op_with_fill, cutout, flip_and_crop, op_table, PreprocessConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::policy::{OpCounts, PolicyParams, PolicySampler};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Constant,
}

/// Inner-loop training hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    /// Enlarge Batch ratio: each selected image appears this many times with
    /// independent augmentations; optimizer steps per epoch are unchanged.
    pub eb_factor: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr_max: 0.04,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Schedule::Cosine,
            eb_factor: 1,
        }
    }
}

/// Augmentation source for a training epoch.
#[derive(Clone, Copy)]
pub enum PolicyMode<'a> {
    /// Basic pre-processing only.
    None,
    /// One operation per image sampled from the policy (uniform sampling is
    /// the all-zero-theta policy).
    Policy(&'a PolicyParams),
}

/// lr(t) = lr_max * (1 + cos(pi t / T)) / 2.
pub fn cosine_lr(lr_max: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return lr_max;
    }
    lr_max * (1.0 + (std::f64::consts::PI * epoch as f64 / total as f64).cos()) / 2.0
}

/// Reusable training state: the compiled net, momentum buffer, and gradient
/// scratch space for one model.
pub struct Trainer {
    net: Net,
    velocity: Vec<f64>,
    grad: Vec<f64>,
    pub steps_taken: u64,
}

impl Trainer {
    pub fn new(model: &ModelState) -> Result<Self> {
        let net = Net::new(&model.arch)?;
        let n = net.param_count();
        if n != model.params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} params"),
                got: format!("{}", model.params.len()),
            });
        }
        Ok(Self { net, velocity: vec![0.0; n], grad: vec![0.0; n], steps_taken: 0 })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn reset_momentum(&mut self) {
        self.velocity.iter_mut().for_each(|v| *v = 0.0);
    }

    /// One pass over `data`; returns the mean training loss.
    #[allow(clippy::too_many_arguments)]
    pub fn epoch(
        &mut self,
        model: &mut ModelState,
        data: &Dataset,
        mode: &PolicyMode,
        cfg: &TrainConfig,
        pre: &PreprocessConfig,
        lr: f64,
        rng: &mut ChaCha8Rng,
        mut counts: Option<&mut OpCounts>,
    ) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidConfig("cannot train on an empty dataset".into()));
        }
        let eb = cfg.eb_factor.max(1);
        let sampler = match mode {
            PolicyMode::Policy(p) => Some(PolicySampler::new(p)),
            PolicyMode::None => None,
        };
        let ops = op_table();
        let mut indices: Vec<usize> = (0..data.len()).collect();
        indices.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for batch in indices.chunks(cfg.batch_size.max(1)) {
            self.grad.iter_mut().for_each(|g| *g = 0.0);
            let n_samples = (batch.len() * eb) as f64;
            for &idx in batch {
                for _ in 0..eb {
                    let mut img = flip_and_crop(&data.images[idx], pre, rng);
                    if let Some(sampler) = &sampler {
                        let id = sampler.sample(rng);
                        if let Some(c) = counts.as_deref_mut() {
                            c.record(id);
                        }
                        img = apply_op_with_fill(&img, &ops[id], pre.fill, rng);
                    }
                    let img = cutout(&img, pre, rng);
                    let input = self.net.image_to_input(&img)?;
                    let acts = self.net.forward_cached(&model.params, &input);
                    let (loss, mut dlogits) =
                        softmax_cross_entropy(acts.last().unwrap(), data.labels[idx] as usize);
                    loss_sum += loss;
                    loss_n += 1;
                    for d in &mut dlogits {
                        *d /= n_samples;
                    }
                    self.net.backward(&model.params, &acts, &dlogits, &mut self.grad);
                }
            }
            // Nesterov lookahead: v <- mu v + g, theta <- theta - lr (g + mu v),
            // with weight decay folded into g as an L2 term.
            for j in 0..model.params.len() {
                let g = self.grad[j] + cfg.weight_decay * model.params[j];
                self.velocity[j] = cfg.momentum * self.velocity[j] + g;
                model.params[j] -= lr * (g + cfg.momentum * self.velocity[j]);
            }
            self.steps_taken += 1;
        }
        Ok(loss_sum / loss_n as f64)
    }
}

/// Single-epoch convenience wrapper with a fresh momentum buffer.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut ModelState,
    data: &Dataset,
    mode: &PolicyMode,
    cfg: &TrainConfig,
    pre: &PreprocessConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
    counts: Option<&mut OpCounts>,
) -> Result<f64> {
    let mut trainer = Trainer::new(model)?;
    trainer.epoch(model, data, mode, cfg, pre, lr, rng, counts)
}

/// Fraction of argmax-correct predictions, no augmentation, deterministic.
pub fn evaluate(model: &ModelState, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate on an empty dataset".into()));
    }
    let net = Net::new(&model.arch)?;
    let mut correct = 0usize;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let input = net.image_to_input(img)?;
        let logits = net.forward(&model.params, &input);
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        if pred == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean cross-entropy over a dataset without augmentation.
pub fn mean_loss(model: &ModelState, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate on an empty dataset".into()));
    }
    let net = Net::new(&model.arch)?;
    let mut sum = 0.0;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let input = net.image_to_input(img)?;
        let logits = net.forward(&model.params, &input);
        sum += softmax_cross_entropy(&logits, label as usize).0;
    }
    Ok(sum / data.len() as f64)
}
