//! Temporal context states, scale gating, scale fusion and modality routing.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::data::TrainView;
use crate::error::{Error, Result};
use crate::propagation::ScaleRepresentations;
use crate::tensor::{axpy_slice, dot, Matrix};

/// Number of per-user and per-item context features.
pub const CONTEXT_DIM: usize = 4;

/// Floor applied to per-dimension standard deviations during standardization.
pub const STD_FLOOR: f64 = 1e-6;

/// Standardized temporal context vectors for every user and item.
///
/// User features: log(1+mean interaction age), log(1+median interaction age),
/// log(1+activity span), fraction of interactions inside the recent window.
/// Item features: log(1+age since first interaction), log(1+activity span),
/// log(1+interaction count), log(1+mean gap between consecutive interactions).
/// Ages are measured from the latest train timestamp, in `time_unit`s.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalContext {
    pub user: Matrix,
    pub item: Matrix,
    pub user_raw: Matrix,
    pub item_raw: Matrix,
}

pub fn compute_contexts(train: &TrainView, window_fraction: f64, time_unit: f64) -> Result<TemporalContext> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "window fraction must lie in (0, 1], got {window_fraction}"
        )));
    }
    if !(time_unit > 0.0) {
        return Err(Error::InvalidArgument("time unit must be > 0".into()));
    }
    if train.is_empty() {
        return Err(Error::Data("training partition is empty".into()));
    }
    let (t_min, t_max) = train.time_range();
    let window_start = t_max - window_fraction * (t_max - t_min);

    let mut user_raw = Matrix::zeros(train.num_users(), CONTEXT_DIM);
    for u in 0..train.num_users() {
        let h = train.user_history(u);
        if h.is_empty() {
            continue;
        }
        let mut ages: Vec<f64> = h.iter().map(|t| (t_max - t.time) / time_unit).collect();
        ages.sort_by(f64::total_cmp);
        let mean_age = ages.iter().sum::<f64>() / ages.len() as f64;
        let median_age = median_sorted(&ages);
        let span = train.user_span(u) / time_unit;
        let recent = h.iter().filter(|t| t.time >= window_start).count() as f64 / h.len() as f64;
        let row = user_raw.row_mut(u);
        row[0] = mean_age.ln_1p();
        row[1] = median_age.ln_1p();
        row[2] = span.ln_1p();
        row[3] = recent;
    }

    let mut item_times: Vec<Vec<f64>> = vec![Vec::new(); train.num_items()];
    for t in train.interactions() {
        item_times[t.item as usize].push(t.time);
    }
    let global_span = (t_max - t_min) / time_unit;
    let mut item_raw = Matrix::zeros(train.num_items(), CONTEXT_DIM);
    for (i, times) in item_times.iter_mut().enumerate() {
        let row = item_raw.row_mut(i);
        if times.is_empty() {
            // unseen in train: oldest possible age, no activity
            row[0] = global_span.ln_1p();
            continue;
        }
        times.sort_by(f64::total_cmp);
        let first = times[0];
        let last = *times.last().unwrap();
        let span = (last - first) / time_unit;
        let mean_gap = if times.len() > 1 {
            span / (times.len() - 1) as f64
        } else {
            0.0
        };
        row[0] = ((t_max - first) / time_unit).ln_1p();
        row[1] = span.ln_1p();
        row[2] = (times.len() as f64).ln_1p();
        row[3] = mean_gap.ln_1p();
    }

    Ok(TemporalContext {
        user: standardize(&user_raw),
        item: standardize(&item_raw),
        user_raw,
        item_raw,
    })
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Per-column z-scores with population statistics and a floored std.
pub fn standardize(x: &Matrix) -> Matrix {
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = x.clone();
    if rows == 0 {
        return out;
    }
    for c in 0..cols {
        let mean = (0..rows).map(|r| x.get(r, c)).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|r| (x.get(r, c) - mean).powi(2)).sum::<f64>() / rows as f64;
        let std = var.sqrt().max(STD_FLOOR);
        for r in 0..rows {
            out.set(r, c, (x.get(r, c) - mean) / std);
        }
    }
    out
}

/// Two-layer perceptron `W2 relu(W1 s + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    /// `hidden x input`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `output x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Hidden pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub pre: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; output * hidden],
            b2: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden, output);
        fill_glorot(&mut net.w1, input, hidden, rng);
        fill_glorot(&mut net.w2, hidden, output, rng);
        net
    }

    pub fn forward(&self, s: &[f64]) -> (Vec<f64>, MlpCache) {
        debug_assert_eq!(s.len(), self.input);
        let mut pre = self.b1.clone();
        for (h, p) in pre.iter_mut().enumerate() {
            *p += dot(&self.w1[h * self.input..(h + 1) * self.input], s);
        }
        let mut out = self.b2.clone();
        for (o, v) in out.iter_mut().enumerate() {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            *v += row.iter().zip(&pre).map(|(w, p)| w * p.max(0.0)).sum::<f64>();
        }
        (out, MlpCache { pre })
    }

    /// Accumulates parameter gradients into `grad` given `d_out = dL/d(output)`.
    pub fn backward(&self, s: &[f64], cache: &MlpCache, d_out: &[f64], grad: &mut Mlp) {
        let mut d_hidden = vec![0.0; self.hidden];
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b2[o] += g;
            let w_row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            let gw_row = &mut grad.w2[o * self.hidden..(o + 1) * self.hidden];
            for h in 0..self.hidden {
                gw_row[h] += g * cache.pre[h].max(0.0);
                d_hidden[h] += g * w_row[h];
            }
        }
        for h in 0..self.hidden {
            // relu'(x) = 0 for x <= 0
            if cache.pre[h] <= 0.0 {
                continue;
            }
            let g = d_hidden[h];
            grad.b1[h] += g;
            axpy_slice(g, s, &mut grad.w1[h * self.input..(h + 1) * self.input]);
        }
    }
}

pub(crate) fn fill_glorot<R: Rng + ?Sized>(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    for v in w {
        *v = dist.sample(rng);
    }
}

/// Max-subtracted softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {temperature}")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            group: "gating".into(),
            message: format!("non-finite logits {logits:?}"),
        });
    }
    Ok(softmax_unchecked(logits, temperature))
}

pub(crate) fn softmax_unchecked(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Gradient with respect to the logits of `softmax(z / T)` given `dL/dp`.
pub fn softmax_backward(probs: &[f64], d_probs: &[f64], temperature: f64) -> Vec<f64> {
    let inner = dot(probs, d_probs);
    probs
        .iter()
        .zip(d_probs)
        .map(|(p, g)| p * (g - inner) / temperature)
        .collect()
}

/// Jacobian `dp/dz` of `softmax(z / T)`, row-major `K x K`.
pub fn softmax_jacobian(probs: &[f64], temperature: f64) -> Vec<f64> {
    let k = probs.len();
    let mut j = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let delta = if a == b { probs[a] } else { 0.0 };
            j[a * k + b] = (delta - probs[a] * probs[b]) / temperature;
        }
    }
    j
}

/// Context-conditioned mixture over the K operators.
pub fn gate(s: &[f64], net: &Mlp, temperature: f64) -> Result<Vec<f64>> {
    if s.len() != net.input {
        return Err(Error::Shape(format!("context of length {} for a net expecting {}", s.len(), net.input)));
    }
    let (logits, _) = net.forward(s);
    softmax(&logits, temperature)
}

/// `fused[m](n) = sum_k g[n,k] h[k][m](n)`; users read `g_user`, items `g_item`.
pub fn fuse_scales(reps: &ScaleRepresentations, g_user: &Matrix, g_item: &Matrix) -> Result<Vec<Matrix>> {
    let k = reps.k();
    if k == 0 {
        return Err(Error::Shape("no scale representations".into()));
    }
    let n = reps.get(0, 0).rows();
    let num_users = g_user.rows();
    if g_user.cols() != k || g_item.cols() != k || num_users + g_item.rows() != n {
        return Err(Error::Shape(format!(
            "gates {}x{} / {}x{} do not cover {n} nodes over {k} scales",
            g_user.rows(),
            g_user.cols(),
            g_item.rows(),
            g_item.cols()
        )));
    }
    let mut fused = Vec::with_capacity(reps.m());
    for m in 0..reps.m() {
        let d = reps.get(0, m).cols();
        let mut out = Matrix::zeros(n, d);
        for node in 0..n {
            let g = if node < num_users {
                g_user.row(node)
            } else {
                g_item.row(node - num_users)
            };
            let dst = out.row_mut(node);
            for (kk, &w) in g.iter().enumerate() {
                axpy_slice(w, reps.get(kk, m).row(node), dst);
            }
        }
        fused.push(out);
    }
    Ok(fused)
}

/// `concat_m(beta[m] * channels[m])`.
pub fn route_modalities(channels: &[&[f64]], beta: &[f64]) -> Result<Vec<f64>> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("at least one modality is required".into()));
    }
    if channels.len() != beta.len() {
        return Err(Error::Shape(format!("{} channels, {} routing weights", channels.len(), beta.len())));
    }
    let mut out = Vec::with_capacity(channels.iter().map(|c| c.len()).sum());
    for (c, &b) in channels.iter().zip(beta) {
        out.extend(c.iter().map(|v| b * v));
    }
    Ok(out)
}

/// Item side: plain concatenation of the fused channels.
pub fn concat_channels(channels: &[&[f64]]) -> Vec<f64> {
    channels.iter().flat_map(|c| c.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;

    fn view(histories: Vec<Vec<(u32, u32, f64)>>, items: usize) -> TrainView {
        TrainView::from_histories(
            items,
            histories
                .into_iter()
                .map(|h| h.into_iter().map(|(user, item, time)| Interaction { user, item, time }).collect())
                .collect(),
        )
    }

    #[test]
    fn single_interaction_user_has_zero_span() {
        let tv = view(vec![vec![(0, 0, 10.0)], vec![(1, 0, 0.0), (1, 1, 100.0)]], 2);
        let ctx = compute_contexts(&tv, 0.1, 1.0).unwrap();
        assert_eq!(ctx.user_raw.get(0, 2), 0.0);
        assert!((ctx.user_raw.get(1, 2) - 101f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn recent_fraction() {
        // global range [0, 100], window [90, 100]
        let tv = view(vec![vec![(0, 0, 95.0), (0, 1, 100.0)], vec![(1, 0, 0.0), (1, 1, 92.0)]], 2);
        let ctx = compute_contexts(&tv, 0.1, 1.0).unwrap();
        assert_eq!(ctx.user_raw.get(0, 3), 1.0);
        assert_eq!(ctx.user_raw.get(1, 3), 0.5);
    }

    #[test]
    fn standardized_columns() {
        let tv = view(
            vec![
                vec![(0, 0, 0.0), (0, 1, 50.0), (0, 2, 70.0)],
                vec![(1, 1, 10.0)],
                vec![(2, 2, 90.0), (2, 0, 100.0)],
            ],
            3,
        );
        let ctx = compute_contexts(&tv, 0.2, 1.0).unwrap();
        for m in [&ctx.user, &ctx.item] {
            for c in 0..CONTEXT_DIM {
                let mean = (0..m.rows()).map(|r| m.get(r, c)).sum::<f64>() / m.rows() as f64;
                assert!(mean.abs() < 1e-9, "column {c} mean {mean}");
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let g = softmax(&[0.3, 0.3, 0.3], 0.7).unwrap();
        assert!(g.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        let g = softmax(&[1.0, 0.0], 0.01).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8 && g[1] < 1e-8);
        let e = std::f64::consts::E;
        let g = softmax(&[1.0, 0.0], 1.0).unwrap();
        assert!((g[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((g[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!(softmax(&[f64::NAN, 0.0], 1.0).is_err());
        assert!(softmax(&[0.0], 0.0).is_err());
    }

    #[test]
    fn softmax_jacobian_at_uniform() {
        let k = 4;
        let p = vec![1.0 / k as f64; k];
        let j = softmax_jacobian(&p, 1.0);
        for a in 0..k {
            for b in 0..k {
                let expected = if a == b { 1.0 / k as f64 } else { 0.0 } - 1.0 / (k * k) as f64;
                assert!((j[a * k + b] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn relu_blocks_gradient_for_negative_preactivation() {
        let mut net = Mlp::zeros(1, 1, 1);
        net.w1[0] = 1.0;
        net.b1[0] = -5.0;
        net.w2[0] = 2.0;
        let s = [1.0];
        let (_, cache) = net.forward(&s);
        let mut grad = Mlp::zeros(1, 1, 1);
        net.backward(&s, &cache, &[1.0], &mut grad);
        assert_eq!(grad.w1[0], 0.0);
        assert_eq!(grad.b1[0], 0.0);
        assert_eq!(grad.w2[0], 0.0);
        assert_eq!(grad.b2[0], 1.0);
    }

    #[test]
    fn fusion_examples() {
        let h1 = Matrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
        let h2 = Matrix::from_vec(2, 1, vec![3.0, 6.0]).unwrap();
        let reps = ScaleRepresentations {
            layers: 0,
            reps: vec![vec![h1.clone()], vec![h2]],
        };
        let one_hot = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let fused = fuse_scales(&reps, &one_hot, &one_hot).unwrap();
        assert_eq!(fused[0], h1);
        let uniform = Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        let fused = fuse_scales(&reps, &uniform, &uniform).unwrap();
        assert_eq!(fused[0].as_slice(), &[2.0, 4.0]);
        let single = ScaleRepresentations {
            layers: 0,
            reps: vec![vec![h1.clone()]],
        };
        let g = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        assert_eq!(fuse_scales(&single, &g, &g).unwrap()[0], h1);
    }

    #[test]
    fn routing_examples() {
        let x = [1.0, 2.0];
        let y = [3.0, 4.0];
        assert_eq!(route_modalities(&[&x], &[1.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            route_modalities(&[&x, &y], &[0.5, 0.5]).unwrap(),
            vec![0.5, 1.0, 1.5, 2.0]
        );
        assert!(route_modalities(&[&x, &y], &[1.0]).is_err());
    }
}
