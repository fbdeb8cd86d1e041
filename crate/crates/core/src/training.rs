//! Objective terms, the Adam optimizer and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_one_negative, TemporalSplit};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalTarget};
use crate::model::{LossWeights, Model, Parameters, Precision, Triple};
use crate::operators::OperatorBank;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub div: f64,
    /// Squared L2 norm of all trainable parameters.
    pub l2: f64,
    /// `rec + lambda * div + gamma * l2`.
    pub total: f64,
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(-log sigma(y), d/dy)` for positives, `(-log(1 - sigma(y)), d/dy)` for negatives.
#[inline]
pub fn bce_terms(score: f64, positive: bool) -> (f64, f64) {
    if positive {
        (softplus(-score), sigmoid(score) - 1.0)
    } else {
        (softplus(score), sigmoid(score))
    }
}

/// Summed binary cross-entropy over positive and negative scores.
pub fn bce_loss(pos_scores: &[f64], neg_scores: &[f64]) -> f64 {
    pos_scores.iter().map(|&y| bce_terms(y, true).0).sum::<f64>()
        + neg_scores.iter().map(|&y| bce_terms(y, false).0).sum::<f64>()
}

/// Batch mean and population standard deviation.
fn moments(x: &[f64]) -> (f64, f64) {
    let b = x.len() as f64;
    let mean = x.iter().sum::<f64>() / b;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b;
    (mean, var.sqrt())
}

/// Empirical correlation of standardized margin vectors, `C_ij = <z_i, z_j> / B`,
/// with `z = (x - mean) / (std + eps)` and population std.
pub fn correlation_matrix(margins: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
    let z: Vec<Vec<f64>> = margins.iter().map(|x| standardized(x, eps)).collect();
    let b = margins.first().map_or(0, Vec::len) as f64;
    z.iter()
        .map(|zi| z.iter().map(|zj| crate::tensor::dot(zi, zj) / b).collect())
        .collect()
}

fn standardized(x: &[f64], eps: f64) -> Vec<f64> {
    let (mean, std) = moments(x);
    x.iter().map(|v| (v - mean) / (std + eps)).collect()
}

/// `||C - I||_F^2 + lambda_var * sum_k max(0, sigma_min - std_k)` and its gradient
/// with respect to every margin. `margins[k]` holds expert `k`'s batch margins.
pub fn diversity_loss(margins: &[Vec<f64>], sigma_min: f64, lambda_var: f64, eps: f64) -> (f64, Vec<Vec<f64>>) {
    let k = margins.len();
    let b = margins.first().map_or(0, Vec::len);
    assert!(b >= 2, "diversity loss needs at least two triples");
    let bf = b as f64;
    let stats: Vec<(f64, f64)> = margins.iter().map(|x| moments(x)).collect();
    let z: Vec<Vec<f64>> = margins
        .iter()
        .zip(&stats)
        .map(|(x, &(mean, std))| x.iter().map(|v| (v - mean) / (std + eps)).collect())
        .collect();
    let c: Vec<Vec<f64>> = z
        .iter()
        .map(|zi| z.iter().map(|zj| crate::tensor::dot(zi, zj) / bf).collect())
        .collect();

    let mut value = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            value += (c[i][j] - target).powi(2);
        }
    }
    for &(_, std) in &stats {
        value += lambda_var * (sigma_min - std).max(0.0);
    }

    let mut grads = Vec::with_capacity(k);
    for i in 0..k {
        // dF/dz_i = (4/B) sum_j (C_ij - I_ij) z_j
        let mut gz = vec![0.0; b];
        for j in 0..k {
            let coef = 4.0 / bf * (c[i][j] - if i == j { 1.0 } else { 0.0 });
            crate::tensor::axpy_slice(coef, &z[j], &mut gz);
        }
        let x = &margins[i];
        let (mean, std) = stats[i];
        let n = std + eps;
        let g_mean = gz.iter().sum::<f64>() / bf;
        let g_dot_centered: f64 = gz.iter().zip(x).map(|(g, v)| g * (v - mean)).sum();
        // d std / dx_c = (x_c - mean) / (B std); undefined at std = 0, taken as 0
        let mut dstd_coef = if std > 0.0 { -g_dot_centered / (n * n) } else { 0.0 };
        if std < sigma_min && std > 0.0 {
            dstd_coef -= lambda_var;
        }
        let gx = x
            .iter()
            .zip(&gz)
            .map(|(v, g)| {
                let dstd = if std > 0.0 { (v - mean) / (bf * std) } else { 0.0 };
                (g - g_mean) / n + dstd_coef * dstd
            })
            .collect();
        grads.push(gx);
    }
    (value, grads)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over a list of parameter slices and matching gradients.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[t], &mut self.v[t]);
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) {
        let mut g: Vec<Vec<f64>> = Vec::new();
        grads.visit(&mut |_, _, v| g.push(v.to_vec()));
        let mut p: Vec<Vec<f64>> = Vec::new();
        params.visit(&mut |_, _, v| p.push(v.to_vec()));
        {
            let mut views: Vec<&mut [f64]> = p.iter_mut().map(|x| x.as_mut_slice()).collect();
            let gviews: Vec<&[f64]> = g.iter().map(|x| x.as_slice()).collect();
            self.step_slices(&mut views, &gviews);
        }
        let mut idx = 0;
        params.visit_mut(&mut |_, v| {
            v.copy_from_slice(&p[idx]);
            idx += 1;
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub negatives: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Summed BCE over the epoch.
    pub loss_rec: f64,
    /// Mean per-batch diversity loss.
    pub loss_div: f64,
    pub recall20_valid: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_recall20: f64,
    pub history: Vec<EpochRecord>,
}

/// History CSV: `epoch,loss_rec,loss_div,recall20_valid`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss_rec,loss_div,recall20_valid\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.loss_rec, r.loss_div, r.recall20_valid));
    }
    s
}

/// Positive/negative triples for one epoch, in batch order.
pub fn epoch_batches(split: &TemporalSplit, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<Triple>> {
    let train = split.train();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let per_batch = (cfg.batch_size / cfg.negatives).max(1);
    order
        .chunks(per_batch)
        .map(|chunk| {
            let mut batch = Vec::with_capacity(chunk.len() * cfg.negatives);
            for &idx in chunk {
                let t = train.interactions()[idx];
                for _ in 0..cfg.negatives {
                    let neg = sample_one_negative(train, t.user as usize, rng);
                    batch.push(Triple {
                        user: t.user,
                        pos: t.item,
                        neg,
                    });
                }
            }
            batch
        })
        .collect()
}

/// One pass over the training interactions. Returns (summed BCE, mean diversity loss).
pub fn train_epoch(
    model: &mut Model,
    bank: &OperatorBank,
    split: &TemporalSplit,
    cfg: &TrainConfig,
    optimizer: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let batches = epoch_batches(split, cfg, rng);
    let (mut rec, mut div) = (0.0, 0.0);
    for batch in &batches {
        let (loss, grads) = model.loss_and_grad(bank, batch, &cfg.weights)?;
        rec += loss.rec;
        div += loss.div;
        optimizer.step(&mut model.params, &grads);
        if model.precision == Precision::F32 {
            model.params.round_to_f32();
        }
        if let Some(group) = model.params.first_non_finite() {
            return Err(Error::Numeric {
                group,
                message: "parameter became non-finite after an optimizer step".into(),
            });
        }
    }
    Ok((rec, div / batches.len().max(1) as f64))
}

/// Trains with early stopping on validation Recall@20. On return `model.params`
/// holds the best checkpoint, including when training diverges.
pub fn train(model: &mut Model, bank: &OperatorBank, split: &TemporalSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    validate_train_config(cfg)?;
    if split.train().is_empty() {
        return Err(Error::Data("training partition is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut optimizer = OptimizerState::new(cfg.adam);
    let mut best_params: Parameters = model.params.clone();
    let mut best_recall = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let (rec, div) = match train_epoch(model, bank, split, cfg, &mut optimizer, &mut rng) {
            Ok(v) => v,
            Err(e) => {
                model.params = best_params;
                return Err(e);
            }
        };
        let fwd = model.forward(bank)?;
        let report = evaluate(&fwd, split, EvalTarget::Valid, &[20]);
        let recall = report.recall(20).unwrap_or(0.0);
        history.push(EpochRecord {
            epoch,
            loss_rec: rec,
            loss_div: div,
            recall20_valid: recall,
        });
        if recall > best_recall {
            best_recall = recall;
            best_epoch = epoch;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        best_epoch,
        best_recall20: best_recall,
        history,
    })
}

fn validate_train_config(cfg: &TrainConfig) -> Result<()> {
    if cfg.batch_size == 0 || cfg.negatives == 0 || cfg.max_epochs == 0 {
        return Err(Error::InvalidArgument(
            "batch size, negatives and epochs must be positive".into(),
        ));
    }
    if !(cfg.adam.lr > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be > 0".into()));
    }
    if cfg.weights.lambda < 0.0 || cfg.weights.gamma < 0.0 {
        return Err(Error::InvalidArgument("lambda and gamma must be >= 0".into()));
    }
    Ok(())
}
