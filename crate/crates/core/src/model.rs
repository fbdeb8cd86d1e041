//! Model parameters, the full forward pass and the hand-derived backward pass.
//!
//! Forward, per batch:
//! 1. `X0[m]`: free user rows; item rows are free (`id` modality) or an affine
//!    projection of the modality's feature matrix.
//! 2. `h[k][m] = p_L(S_k) X0[m]` for every operator of the bank.
//! 3. `g_n = softmax(gate(s_n) / T)` per node, `beta_u = softmax(router(s_u))` per user.
//! 4. `fused[m](n) = sum_k g_{n,k} h[k][m](n)`.
//! 5. `y_ui = sum_m beta_{u,m} <fused[m](u), fused[m](i)>`.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::context::{fill_glorot, softmax_backward, softmax_unchecked, Mlp, MlpCache, TemporalContext, CONTEXT_DIM};
use crate::error::{Error, Result};
use crate::operators::OperatorBank;
use crate::propagation::{propagate, propagate_adjoint, ScaleRepresentations};
use crate::tensor::{axpy_slice, dot, round_slice_to_f32, Matrix};
use crate::training::{bce_terms, diversity_loss, LossBreakdown};

/// How item rows of a modality's input table are produced.
#[derive(Debug, Clone)]
pub enum ModalityKind {
    /// Free item embeddings.
    Id,
    /// Affine projection of an `items x dim` feature matrix.
    Features(Arc<Matrix>),
}

#[derive(Debug, Clone)]
pub struct Modality {
    pub name: String,
    pub kind: ModalityKind,
}

impl Modality {
    pub fn id() -> Self {
        Self {
            name: "id".into(),
            kind: ModalityKind::Id,
        }
    }

    pub fn features(name: impl Into<String>, features: Matrix) -> Self {
        Self {
            name: name.into(),
            kind: ModalityKind::Features(Arc::new(features)),
        }
    }
}

/// Storage precision for parameters and propagated activations.
/// Arithmetic is always carried out in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub temperature: f64,
}

/// One `(user, positive, negative)` training triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Loss weights for the composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
    pub sigma_min: f64,
    pub lambda_var: f64,
    pub eps: f64,
}

/// Every trainable tensor. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub names: Vec<String>,
    /// Per modality, `users x dim`.
    pub user_emb: Vec<Matrix>,
    /// Per modality, `items x dim` for `id` modalities.
    pub item_emb: Vec<Option<Matrix>>,
    /// Per modality, `dim x feature_dim` for feature modalities.
    pub proj_w: Vec<Option<Matrix>>,
    pub proj_b: Vec<Option<Vec<f64>>>,
    pub user_gate: Mlp,
    pub item_gate: Mlp,
    pub router: Mlp,
}

impl Parameters {
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, xs| xs.fill(0.0));
        z
    }

    /// Visits `(name, shape, values)` in a fixed order.
    pub fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (m, name) in self.names.iter().enumerate() {
            let e = &self.user_emb[m];
            f(&format!("user_emb.{name}"), &[e.rows(), e.cols()], e.as_slice());
            if let Some(e) = &self.item_emb[m] {
                f(&format!("item_emb.{name}"), &[e.rows(), e.cols()], e.as_slice());
            }
            if let (Some(w), Some(b)) = (&self.proj_w[m], &self.proj_b[m]) {
                f(&format!("proj_w.{name}"), &[w.rows(), w.cols()], w.as_slice());
                f(&format!("proj_b.{name}"), &[b.len()], b);
            }
        }
        for (prefix, net) in [("user_gate", &self.user_gate), ("item_gate", &self.item_gate), ("router", &self.router)] {
            f(&format!("{prefix}.w1"), &[net.hidden, net.input], &net.w1);
            f(&format!("{prefix}.b1"), &[net.hidden], &net.b1);
            f(&format!("{prefix}.w2"), &[net.output, net.hidden], &net.w2);
            f(&format!("{prefix}.b2"), &[net.output], &net.b2);
        }
    }

    /// Mutable counterpart of [`Parameters::visit`], same order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for m in 0..self.names.len() {
            let name = self.names[m].clone();
            f(&format!("user_emb.{name}"), self.user_emb[m].as_mut_slice());
            if let Some(e) = &mut self.item_emb[m] {
                f(&format!("item_emb.{name}"), e.as_mut_slice());
            }
            if let (Some(w), Some(b)) = (&mut self.proj_w[m], &mut self.proj_b[m]) {
                f(&format!("proj_w.{name}"), w.as_mut_slice());
                f(&format!("proj_b.{name}"), b);
            }
        }
        for (prefix, net) in [
            ("user_gate", &mut self.user_gate),
            ("item_gate", &mut self.item_gate),
            ("router", &mut self.router),
        ] {
            f(&format!("{prefix}.w1"), &mut net.w1);
            f(&format!("{prefix}.b1"), &mut net.b1);
            f(&format!("{prefix}.w2"), &mut net.w2);
            f(&format!("{prefix}.b2"), &mut net.b2);
        }
    }

    /// Flattened `(name, shape, values)` copies.
    pub fn to_named(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit(&mut |n, s, v| out.push((n.to_string(), s.to_vec(), v.to_vec())));
        out
    }

    pub fn squared_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |_, _, v| s += v.iter().map(|x| x * x).sum::<f64>());
        s
    }

    pub fn num_values(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    pub fn round_to_f32(&mut self) {
        self.visit_mut(&mut |_, v| round_slice_to_f32(v));
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.visit(&mut |n, _, v| {
            if bad.is_none() && v.iter().any(|x| !x.is_finite()) {
                bad = Some(n.to_string());
            }
        });
        bad
    }
}

/// Everything the forward pass produces.
#[derive(Debug, Clone)]
pub struct Forward {
    pub x0: Vec<Matrix>,
    pub reps: ScaleRepresentations,
    pub g_user: Matrix,
    pub g_item: Matrix,
    pub beta: Matrix,
    pub fused: Vec<Matrix>,
    user_gate_cache: Vec<MlpCache>,
    item_gate_cache: Vec<MlpCache>,
    router_cache: Vec<MlpCache>,
    num_users: usize,
}

impl Forward {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.g_item.rows()
    }

    pub fn m(&self) -> usize {
        self.fused.len()
    }

    /// `y_ui = sum_m beta_{u,m} <fused[m](u), fused[m](i)>`.
    pub fn score(&self, user: usize, item: usize) -> f64 {
        let node = self.num_users + item;
        self.fused
            .iter()
            .enumerate()
            .map(|(m, f)| self.beta.get(user, m) * dot(f.row(user), f.row(node)))
            .sum()
    }

    /// Routed user vector `concat_m beta_{u,m} fused[m](u)`, length `M * D`.
    pub fn user_vector(&self, user: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for (m, f) in self.fused.iter().enumerate() {
            let b = self.beta.get(user, m);
            out.extend(f.row(user).iter().map(|v| b * v));
        }
        out
    }

    /// Item vector `concat_m fused[m](i)`.
    pub fn item_vector(&self, item: usize) -> Vec<f64> {
        let node = self.num_users + item;
        self.fused.iter().flat_map(|f| f.row(node).iter().copied()).collect()
    }

    /// Component-`k` user vector: scale-`k` channels scaled by the routing weights.
    pub fn component_user_vector(&self, k: usize, user: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for m in 0..self.m() {
            let b = self.beta.get(user, m);
            out.extend(self.reps.get(k, m).row(user).iter().map(|v| b * v));
        }
        out
    }

    /// Component-`k` item vector: unscaled scale-`k` channels.
    pub fn component_item_vector(&self, k: usize, item: usize) -> Vec<f64> {
        let node = self.num_users + item;
        (0..self.m())
            .flat_map(|m| self.reps.get(k, m).row(node).iter().copied())
            .collect()
    }

    /// `delta[k][b]`: per-operator ranking margin of each triple.
    pub fn expert_margins(&self, batch: &[Triple]) -> Vec<Vec<f64>> {
        let u0 = self.num_users;
        (0..self.reps.k())
            .map(|k| {
                batch
                    .iter()
                    .map(|t| {
                        let (u, p, n) = (t.user as usize, u0 + t.pos as usize, u0 + t.neg as usize);
                        (0..self.m())
                            .map(|m| {
                                let h = self.reps.get(k, m);
                                let hu = h.row(u);
                                self.beta.get(u, m) * (dot(hu, h.row(p)) - dot(hu, h.row(n)))
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Trainable model state plus the static inputs it reads.
#[derive(Debug, Clone)]
pub struct Model {
    pub dims: ModelDims,
    pub modalities: Vec<Modality>,
    pub contexts: TemporalContext,
    pub params: Parameters,
    pub precision: Precision,
    num_users: usize,
    num_items: usize,
    k: usize,
}

impl Model {
    /// Free embeddings ~ N(0, 0.01^2); affine weights Glorot-uniform; biases zero.
    pub fn new(
        dims: ModelDims,
        modalities: Vec<Modality>,
        contexts: TemporalContext,
        k: usize,
        seed: u64,
        precision: Precision,
    ) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::InvalidArgument("at least one modality is required".into()));
        }
        if k == 0 || dims.dim == 0 || dims.hidden == 0 {
            return Err(Error::InvalidArgument("k, dim and hidden must be positive".into()));
        }
        if !(dims.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be > 0".into()));
        }
        let num_users = contexts.user.rows();
        let num_items = contexts.item.rows();
        for m in &modalities {
            if let ModalityKind::Features(f) = &m.kind {
                if f.rows() != num_items {
                    return Err(Error::Shape(format!(
                        "modality `{}` has {} rows for {num_items} items",
                        m.name,
                        f.rows()
                    )));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).unwrap();
        let d = dims.dim;
        let emb = |rows: usize, rng: &mut ChaCha8Rng| Matrix::from_fn(rows, d, |_, _| normal.sample(rng));

        let mut names = Vec::new();
        let mut user_emb = Vec::new();
        let mut item_emb = Vec::new();
        let mut proj_w = Vec::new();
        let mut proj_b = Vec::new();
        for m in &modalities {
            names.push(m.name.clone());
            user_emb.push(emb(num_users, &mut rng));
            match &m.kind {
                ModalityKind::Id => {
                    item_emb.push(Some(emb(num_items, &mut rng)));
                    proj_w.push(None);
                    proj_b.push(None);
                }
                ModalityKind::Features(f) => {
                    item_emb.push(None);
                    let mut w = Matrix::zeros(d, f.cols());
                    fill_glorot(w.as_mut_slice(), f.cols(), d, &mut rng);
                    proj_w.push(Some(w));
                    proj_b.push(Some(vec![0.0; d]));
                }
            }
        }
        let user_gate = Mlp::glorot(CONTEXT_DIM, dims.hidden, k, &mut rng);
        let item_gate = Mlp::glorot(CONTEXT_DIM, dims.hidden, k, &mut rng);
        let router = Mlp::glorot(CONTEXT_DIM, dims.hidden, modalities.len(), &mut rng);
        let mut params = Parameters {
            names,
            user_emb,
            item_emb,
            proj_w,
            proj_b,
            user_gate,
            item_gate,
            router,
        };
        if precision == Precision::F32 {
            params.round_to_f32();
        }
        Ok(Self {
            dims,
            modalities,
            contexts,
            params,
            precision,
            num_users,
            num_items,
            k,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.modalities.len()
    }

    /// Input tables `X0[m]`, `nodes x dim`.
    pub fn input_tables(&self) -> Vec<Matrix> {
        let (nu, ni, d) = (self.num_users, self.num_items, self.dims.dim);
        self.modalities
            .iter()
            .enumerate()
            .map(|(m, modality)| {
                let mut x = Matrix::zeros(nu + ni, d);
                x.as_mut_slice()[..nu * d].copy_from_slice(self.params.user_emb[m].as_slice());
                match &modality.kind {
                    ModalityKind::Id => {
                        let e = self.params.item_emb[m].as_ref().unwrap();
                        x.as_mut_slice()[nu * d..].copy_from_slice(e.as_slice());
                    }
                    ModalityKind::Features(f) => {
                        let w = self.params.proj_w[m].as_ref().unwrap();
                        let b = self.params.proj_b[m].as_ref().unwrap();
                        for i in 0..ni {
                            let fi = f.row(i);
                            let dst = x.row_mut(nu + i);
                            for (j, out) in dst.iter_mut().enumerate() {
                                *out = b[j] + dot(w.row(j), fi);
                            }
                        }
                    }
                }
                if self.precision == Precision::F32 {
                    x.round_to_f32();
                }
                x
            })
            .collect()
    }

    pub fn forward(&self, bank: &OperatorBank) -> Result<Forward> {
        if bank.k() != self.k || bank.num_users() != self.num_users || bank.num_items() != self.num_items {
            return Err(Error::Shape(format!(
                "bank ({} ops, {}+{} nodes) incompatible with model ({} ops, {}+{} nodes)",
                bank.k(),
                bank.num_users(),
                bank.num_items(),
                self.k,
                self.num_users,
                self.num_items
            )));
        }
        let x0 = self.input_tables();
        let mut reps = propagate(bank, &x0, self.dims.layers)?;
        if self.precision == Precision::F32 {
            reps.reps.iter_mut().flatten().for_each(Matrix::round_to_f32);
        }
        let t = self.dims.temperature;
        let (g_user, user_gate_cache) = gate_table(&self.params.user_gate, &self.contexts.user, t);
        let (g_item, item_gate_cache) = gate_table(&self.params.item_gate, &self.contexts.item, t);
        let (beta, router_cache) = gate_table(&self.params.router, &self.contexts.user, 1.0);
        let fused = crate::context::fuse_scales(&reps, &g_user, &g_item)?;
        Ok(Forward {
            x0,
            reps,
            g_user,
            g_item,
            beta,
            fused,
            user_gate_cache,
            item_gate_cache,
            router_cache,
            num_users: self.num_users,
        })
    }

    /// Composite loss over a batch and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        bank: &OperatorBank,
        batch: &[Triple],
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, Parameters)> {
        let fwd = self.forward(bank)?;
        self.loss_and_grad_from(bank, &fwd, batch, weights)
    }

    /// Loss only (no gradient); used by finite-difference checks.
    pub fn loss(&self, bank: &OperatorBank, batch: &[Triple], weights: &LossWeights) -> Result<LossBreakdown> {
        let fwd = self.forward(bank)?;
        Ok(self.loss_from(&fwd, batch, weights).0)
    }

    fn loss_from(&self, fwd: &Forward, batch: &[Triple], weights: &LossWeights) -> (LossBreakdown, Vec<f64>, Option<Vec<Vec<f64>>>) {
        let mut rec = 0.0;
        let mut d_scores = Vec::with_capacity(2 * batch.len());
        for t in batch {
            let yp = fwd.score(t.user as usize, t.pos as usize);
            let yn = fwd.score(t.user as usize, t.neg as usize);
            let (lp, gp) = bce_terms(yp, true);
            let (ln, gn) = bce_terms(yn, false);
            rec += lp + ln;
            d_scores.push(gp);
            d_scores.push(gn);
        }
        let (div, d_margins) = if batch.len() >= 2 {
            let margins = fwd.expert_margins(batch);
            let (v, g) = diversity_loss(&margins, weights.sigma_min, weights.lambda_var, weights.eps);
            (v, Some(g))
        } else {
            (0.0, None)
        };
        let l2 = self.params.squared_norm();
        let total = rec + weights.lambda * div + weights.gamma * l2;
        (
            LossBreakdown {
                rec,
                div,
                l2,
                total,
            },
            d_scores,
            d_margins,
        )
    }

    pub fn loss_and_grad_from(
        &self,
        bank: &OperatorBank,
        fwd: &Forward,
        batch: &[Triple],
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, Parameters)> {
        let (breakdown, d_scores, d_margins) = self.loss_from(fwd, batch, weights);
        if !breakdown.total.is_finite() {
            return Err(Error::Numeric {
                group: "loss".into(),
                message: format!("{breakdown:?}"),
            });
        }
        let (nu, ni) = (self.num_users, self.num_items);
        let n = nu + ni;
        let (k_ops, m_count, d) = (self.k, self.m(), self.dims.dim);

        let mut d_fused: Vec<Matrix> = (0..m_count).map(|_| Matrix::zeros(n, d)).collect();
        let mut d_beta = Matrix::zeros(nu, m_count);
        let mut touched = vec![false; n];

        // scores
        for (b, t) in batch.iter().enumerate() {
            let u = t.user as usize;
            touched[u] = true;
            for (item, gy) in [(t.pos as usize, d_scores[2 * b]), (t.neg as usize, d_scores[2 * b + 1])] {
                let node = nu + item;
                touched[node] = true;
                for m in 0..m_count {
                    let beta = fwd.beta.get(u, m);
                    let f = &fwd.fused[m];
                    d_beta.row_mut(u)[m] += gy * dot(f.row(u), f.row(node));
                    let (uu, ii) = two_rows_mut(&mut d_fused[m], u, node);
                    axpy_slice(gy * beta, f.row(node), uu);
                    axpy_slice(gy * beta, f.row(u), ii);
                }
            }
        }

        // diversity term through the per-operator margins
        let mut d_reps: Vec<Vec<Option<Matrix>>> = vec![vec![None; m_count]; k_ops];
        if let (Some(dm), true) = (&d_margins, weights.lambda != 0.0) {
            for k in 0..k_ops {
                for m in 0..m_count {
                    let h = fwd.reps.get(k, m);
                    let mut g = Matrix::zeros(n, d);
                    for (b, t) in batch.iter().enumerate() {
                        let coef = weights.lambda * dm[k][b];
                        if coef == 0.0 {
                            continue;
                        }
                        let (u, p, q) = (t.user as usize, nu + t.pos as usize, nu + t.neg as usize);
                        let beta = fwd.beta.get(u, m);
                        let (hu, hp, hq) = (h.row(u), h.row(p), h.row(q));
                        d_beta.row_mut(u)[m] += coef * (dot(hu, hp) - dot(hu, hq));
                        let cb = coef * beta;
                        {
                            let gu = g.row_mut(u);
                            for j in 0..d {
                                gu[j] += cb * (hp[j] - hq[j]);
                            }
                        }
                        axpy_slice(cb, hu, g.row_mut(p));
                        axpy_slice(-cb, hu, g.row_mut(q));
                    }
                    d_reps[k][m] = Some(g);
                }
            }
        }

        // fusion and gates
        let mut grads = self.params.zeros_like();
        let t = self.dims.temperature;
        for node in (0..n).filter(|&v| touched[v]) {
            let (g_row, net, grad_net, s, cache) = if node < nu {
                (
                    fwd.g_user.row(node),
                    &self.params.user_gate,
                    &mut grads.user_gate,
                    self.contexts.user.row(node),
                    &fwd.user_gate_cache[node],
                )
            } else {
                (
                    fwd.g_item.row(node - nu),
                    &self.params.item_gate,
                    &mut grads.item_gate,
                    self.contexts.item.row(node - nu),
                    &fwd.item_gate_cache[node - nu],
                )
            };
            let mut dg = vec![0.0; k_ops];
            for m in 0..m_count {
                let df = d_fused[m].row(node);
                for (k, dgk) in dg.iter_mut().enumerate() {
                    *dgk += dot(df, fwd.reps.get(k, m).row(node));
                    let slot = d_reps[k][m].get_or_insert_with(|| Matrix::zeros(n, d));
                    axpy_slice(g_row[k], df, slot.row_mut(node));
                }
            }
            let dz = softmax_backward(g_row, &dg, t);
            net.backward(s, cache, &dz, grad_net);
        }

        // routing
        if m_count > 1 {
            for u in (0..nu).filter(|&v| touched[v]) {
                let dz = softmax_backward(fwd.beta.row(u), d_beta.row(u), 1.0);
                self.params
                    .router
                    .backward(self.contexts.user.row(u), &fwd.router_cache[u], &dz, &mut grads.router);
            }
        }

        // propagation adjoint into the input tables
        let d_x0 = propagate_adjoint(bank, &d_reps, self.dims.layers)?;
        for (m, dx) in d_x0.into_iter().enumerate() {
            let Some(dx) = dx else { continue };
            grads.user_emb[m]
                .as_mut_slice()
                .copy_from_slice(&dx.as_slice()[..nu * d]);
            match &self.modalities[m].kind {
                ModalityKind::Id => {
                    grads.item_emb[m]
                        .as_mut()
                        .unwrap()
                        .as_mut_slice()
                        .copy_from_slice(&dx.as_slice()[nu * d..]);
                }
                ModalityKind::Features(f) => {
                    let gw = grads.proj_w[m].as_mut().unwrap();
                    let gb = grads.proj_b[m].as_mut().unwrap();
                    for i in 0..ni {
                        let di = dx.row(nu + i);
                        let fi = f.row(i);
                        for j in 0..d {
                            if di[j] != 0.0 {
                                gb[j] += di[j];
                                axpy_slice(di[j], fi, gw.row_mut(j));
                            }
                        }
                    }
                }
            }
        }

        // l2
        if weights.gamma != 0.0 {
            let mut values = Vec::new();
            self.params.visit(&mut |_, _, v| values.push(v.to_vec()));
            let mut idx = 0;
            let two_gamma = 2.0 * weights.gamma;
            grads.visit_mut(&mut |_, g| {
                axpy_slice(two_gamma, &values[idx], g);
                idx += 1;
            });
        }

        if let Some(group) = grads.first_non_finite() {
            return Err(Error::Numeric {
                group,
                message: "non-finite gradient".into(),
            });
        }
        Ok((breakdown, grads))
    }
}

fn gate_table(net: &Mlp, contexts: &Matrix, temperature: f64) -> (Matrix, Vec<MlpCache>) {
    let mut out = Matrix::zeros(contexts.rows(), net.output);
    let mut caches = Vec::with_capacity(contexts.rows());
    for r in 0..contexts.rows() {
        let (logits, cache) = net.forward(contexts.row(r));
        out.row_mut(r).copy_from_slice(&softmax_unchecked(&logits, temperature));
        caches.push(cache);
    }
    (out, caches)
}

fn two_rows_mut(m: &mut Matrix, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b);
    let cols = m.cols();
    let data = m.as_mut_slice();
    if a < b {
        let (lo, hi) = data.split_at_mut(b * cols);
        (&mut lo[a * cols..(a + 1) * cols], &mut hi[..cols])
    } else {
        let (lo, hi) = data.split_at_mut(a * cols);
        (&mut hi[..cols], &mut lo[b * cols..(b + 1) * cols])
    }
}
