//! Temporal proximity kernel and the bank of symmetrically normalized,
//! temporally weighted adjacency operators.
//!
//! Node layout: users occupy `[0, U)` and items `[U, U + I)`. Every operator
//! in a bank shares one [`CsrPattern`]; only the value arrays differ.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::data::TrainView;
use crate::error::{Error, Result};

/// Seconds per day; the default unit for recency before kernel evaluation.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Recency of an interaction relative to the user's latest train interaction,
/// clamped at zero. Same unit as the timestamps.
pub fn recency(train: &TrainView, user: usize, time: f64) -> Result<f64> {
    let anchor = train
        .anchor(user)
        .ok_or_else(|| Error::Data(format!("user {user} has no train interactions")))?;
    Ok((anchor - time).max(0.0))
}

/// `(1 + dt)^(-1/tau)`, evaluated as `exp(-ln(1 + dt) / tau)`.
pub fn kernel(dt: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("kernel scale must be > 0, got {tau}")));
    }
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!("recency must be >= 0, got {dt}")));
    }
    Ok(kernel_unchecked(dt, tau))
}

#[inline]
pub(crate) fn kernel_unchecked(dt: f64, tau: f64) -> f64 {
    (-(dt.ln_1p()) / tau).exp()
}

/// Edge weighting used to build a bank.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelMode {
    /// One operator per scale, `tau` strictly increasing.
    Temporal { scales: Vec<f64>, time_unit: f64 },
    /// `k` copies of the unweighted operator (every edge weight 1).
    Uniform { k: usize },
}

/// Compressed sparse row index structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrPattern {
    n: usize,
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl CsrPattern {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn row(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }

    /// Builds a pattern from `(row, col)` coordinates, sorted by row then column.
    fn from_sorted_coords(n: usize, coords: &[(u32, u32)]) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(r, _) in coords {
            offsets[r as usize + 1] += 1;
        }
        for r in 0..n {
            offsets[r + 1] += offsets[r];
        }
        let indices = coords.iter().map(|&(_, c)| c).collect();
        Self { n, offsets, indices }
    }

    fn position(&self, row: usize, col: u32) -> Option<usize> {
        let range = self.row(row);
        self.indices[range.clone()]
            .binary_search(&col)
            .ok()
            .map(|p| range.start + p)
    }
}

/// A sparse square matrix over the bipartite node set.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pattern: Arc<CsrPattern>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    pub fn new(pattern: Arc<CsrPattern>, values: Vec<f64>, symmetric: bool) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::Shape(format!(
                "{} values for {} stored entries",
                values.len(),
                pattern.nnz()
            )));
        }
        Ok(Self {
            pattern,
            values,
            symmetric,
        })
    }

    /// Builds from triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)], symmetric: bool) -> Result<Self> {
        let mut sorted: Vec<(u32, u32, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::Shape(format!("entry ({r}, {c}) outside {n}x{n}")));
            }
            sorted.push((r as u32, c as u32, v));
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut coords: Vec<(u32, u32)> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for (r, c, v) in sorted {
            if coords.last() == Some(&(r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                coords.push((r, c));
                values.push(v);
            }
        }
        let pattern = Arc::new(CsrPattern::from_sorted_coords(n, &coords));
        Self::new(pattern, values, symmetric)
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern
            .position(row, col as u32)
            .map_or(0.0, |p| self.values[p])
    }

    /// Row sums.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n())
            .map(|r| self.values[self.pattern.row(r)].iter().sum())
            .collect()
    }

    /// Dense copy, row-major `n x n`.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for p in self.pattern.row(r) {
                out[r * n + self.pattern.indices[p] as usize] = self.values[p];
            }
        }
        out
    }

    /// `out = self * x` for row-major `x` and `out` of width `d`.
    pub fn spmm(&self, x: &[f64], d: usize, out: &mut [f64]) {
        let n = self.n();
        assert_eq!(x.len(), n * d);
        assert_eq!(out.len(), n * d);
        let offsets = &self.pattern.offsets;
        let indices = &self.pattern.indices;
        let values = &self.values;
        const ROWS_PER_TASK: usize = 256;
        out.par_chunks_mut(d * ROWS_PER_TASK)
            .enumerate()
            .for_each(|(chunk, block)| {
                let first = chunk * ROWS_PER_TASK;
                for (local, dst) in block.chunks_mut(d).enumerate() {
                    let r = first + local;
                    dst.fill(0.0);
                    for p in offsets[r]..offsets[r + 1] {
                        let w = values[p];
                        let src = &x[indices[p] as usize * d..(indices[p] as usize + 1) * d];
                        for (o, s) in dst.iter_mut().zip(src) {
                            *o += w * s;
                        }
                    }
                }
            });
    }

    /// `row col value` lines, one per stored entry.
    pub fn dump_triplets(&self) -> String {
        let mut s = String::new();
        for r in 0..self.n() {
            for p in self.pattern.row(r) {
                let _ = writeln!(s, "{} {} {}", r, self.pattern.indices[p], self.values[p]);
            }
        }
        s
    }
}

/// `D^{-1/2} A D^{-1/2}` with `D` the row sums of `A`. Zero-degree rows stay zero.
pub fn normalize(adjacency: &SparseOperator) -> Result<SparseOperator> {
    if let Some(v) = adjacency.values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "adjacency weights must be finite and non-negative, found {v}"
        )));
    }
    let inv_sqrt: Vec<f64> = adjacency
        .degrees()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let pattern = &adjacency.pattern;
    let mut values = Vec::with_capacity(adjacency.values.len());
    for r in 0..pattern.n {
        for p in pattern.row(r) {
            let c = pattern.indices[p] as usize;
            values.push(adjacency.values[p] * inv_sqrt[r] * inv_sqrt[c]);
        }
    }
    SparseOperator::new(Arc::clone(pattern), values, adjacency.symmetric)
}

/// Distinct train `(user, item)` pairs and, per pair, the smallest recency
/// (in `time_unit`s) among its interactions.
struct PairRecency {
    pairs: Vec<(u32, u32)>,
    recency: Vec<f64>,
}

fn pair_recency(train: &TrainView, time_unit: f64) -> PairRecency {
    let mut pairs = Vec::new();
    let mut recency = Vec::new();
    for u in 0..train.num_users() {
        let history = train.user_history(u);
        let Some(anchor) = train.anchor(u) else { continue };
        let mut entries: Vec<(u32, f64)> = history
            .iter()
            .map(|t| (t.item, (anchor - t.time).max(0.0) / time_unit))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for (item, dt) in entries {
            if pairs.last() == Some(&(u as u32, item)) {
                continue; // first entry per pair has the smallest recency
            }
            pairs.push((u as u32, item));
            recency.push(dt);
        }
    }
    PairRecency { pairs, recency }
}

/// Shared bipartite pattern plus, per pair, the two value slots it occupies.
fn bipartite_pattern(num_users: usize, num_items: usize, pairs: &[(u32, u32)]) -> (CsrPattern, Vec<(usize, usize)>) {
    let n = num_users + num_items;
    let mut coords: Vec<(u32, u32)> = Vec::with_capacity(pairs.len() * 2);
    for &(u, i) in pairs {
        let item_node = num_users as u32 + i;
        coords.push((u, item_node));
        coords.push((item_node, u));
    }
    coords.sort_unstable();
    let pattern = CsrPattern::from_sorted_coords(n, &coords);
    let slots = pairs
        .iter()
        .map(|&(u, i)| {
            let item_node = num_users as u32 + i;
            let a = pattern.position(u as usize, item_node).unwrap();
            let b = pattern.position(item_node as usize, u).unwrap();
            (a, b)
        })
        .collect();
    (pattern, slots)
}

/// Raw weighted adjacency for one scale: each train pair gets the maximum
/// kernel weight over its interactions, mirrored across the diagonal.
pub fn build_weighted_adjacency(train: &TrainView, tau: f64, time_unit: f64) -> Result<SparseOperator> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("kernel scale must be > 0, got {tau}")));
    }
    let pr = pair_recency(train, time_unit);
    let (pattern, slots) = bipartite_pattern(train.num_users(), train.num_items(), &pr.pairs);
    let mut values = vec![0.0; pattern.nnz()];
    for (&(a, b), &dt) in slots.iter().zip(&pr.recency) {
        let w = kernel_unchecked(dt, tau);
        values[a] = w;
        values[b] = w;
    }
    SparseOperator::new(Arc::new(pattern), values, true)
}

/// K normalized operators over one shared topology.
#[derive(Debug, Clone)]
pub struct OperatorBank {
    num_users: usize,
    num_items: usize,
    mode: KernelMode,
    raw: Vec<SparseOperator>,
    operators: Vec<SparseOperator>,
    degrees: Vec<Vec<f64>>,
}

impl OperatorBank {
    pub fn build(train: &TrainView, mode: &KernelMode) -> Result<Self> {
        let k = match mode {
            KernelMode::Temporal { scales, time_unit } => {
                if scales.is_empty() {
                    return Err(Error::InvalidArgument("at least one scale is required".into()));
                }
                if let Some(t) = scales.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
                    return Err(Error::InvalidArgument(format!("scale {t} must be > 0")));
                }
                if scales.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidArgument(format!(
                        "scales must be strictly increasing, got {scales:?}"
                    )));
                }
                if !(*time_unit > 0.0) {
                    return Err(Error::InvalidArgument("time unit must be > 0".into()));
                }
                scales.len()
            }
            KernelMode::Uniform { k } => {
                if *k == 0 {
                    return Err(Error::InvalidArgument("at least one operator is required".into()));
                }
                *k
            }
        };
        if train.is_empty() {
            return Err(Error::Data("training partition is empty".into()));
        }
        let time_unit = match mode {
            KernelMode::Temporal { time_unit, .. } => *time_unit,
            KernelMode::Uniform { .. } => 1.0,
        };
        let pr = pair_recency(train, time_unit);
        let (pattern, slots) = bipartite_pattern(train.num_users(), train.num_items(), &pr.pairs);
        let pattern = Arc::new(pattern);

        let raw_values: Vec<Vec<f64>> = (0..k)
            .into_par_iter()
            .map(|s| {
                let mut values = vec![0.0; pattern.nnz()];
                for (&(a, b), &dt) in slots.iter().zip(&pr.recency) {
                    let w = match mode {
                        KernelMode::Temporal { scales, .. } => kernel_unchecked(dt, scales[s]),
                        KernelMode::Uniform { .. } => 1.0,
                    };
                    values[a] = w;
                    values[b] = w;
                }
                values
            })
            .collect();

        let mut raw = Vec::with_capacity(k);
        let mut operators = Vec::with_capacity(k);
        let mut degrees = Vec::with_capacity(k);
        for values in raw_values {
            let a = SparseOperator::new(Arc::clone(&pattern), values, true)?;
            degrees.push(a.degrees());
            operators.push(normalize(&a)?);
            raw.push(a);
        }
        Ok(Self {
            num_users: train.num_users(),
            num_items: train.num_items(),
            mode: mode.clone(),
            raw,
            operators,
            degrees,
        })
    }

    /// Temporal bank with the given scales, recency measured in `time_unit` seconds.
    pub fn temporal(train: &TrainView, scales: &[f64], time_unit: f64) -> Result<Self> {
        Self::build(
            train,
            &KernelMode::Temporal {
                scales: scales.to_vec(),
                time_unit,
            },
        )
    }

    /// Single unweighted operator (plain LightGCN normalization).
    pub fn uniform(train: &TrainView) -> Result<Self> {
        Self::build(train, &KernelMode::Uniform { k: 1 })
    }

    pub fn k(&self) -> usize {
        self.operators.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn mode(&self) -> &KernelMode {
        &self.mode
    }

    /// Number of distinct train pairs.
    pub fn num_edges(&self) -> usize {
        self.pattern().nnz() / 2
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        self.operators[0].pattern()
    }

    pub fn operator(&self, k: usize) -> &SparseOperator {
        &self.operators[k]
    }

    pub fn operators(&self) -> &[SparseOperator] {
        &self.operators
    }

    /// Pre-normalization weighted adjacency for scale `k`.
    pub fn adjacency(&self, k: usize) -> &SparseOperator {
        &self.raw[k]
    }

    pub fn degrees(&self, k: usize) -> &[f64] {
        &self.degrees[k]
    }

    /// Per-scale `row col value` dumps of the normalized operators.
    pub fn dump(&self) -> Vec<String> {
        self.operators.iter().map(SparseOperator::dump_triplets).collect()
    }

    /// Largest absolute difference between corresponding operator values.
    /// `None` when the banks differ in size or topology.
    pub fn max_value_diff(&self, other: &OperatorBank) -> Option<f64> {
        if self.k() != other.k() || **self.pattern() != **other.pattern() {
            return None;
        }
        Some(
            self.operators
                .iter()
                .zip(&other.operators)
                .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max),
        )
    }
}

/// `k` scales log-spaced over `[lo, hi]`.
pub fn log_spaced_scales(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..k)
        .map(|j| (a + (b - a) * j as f64 / (k - 1) as f64).exp())
        .collect()
}
