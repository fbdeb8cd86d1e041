//! Dense small-graph oracle for the polynomial-filter view of propagation.
//!
//! Everything here works on dense `n x n` copies (n <= 64) and is never used
//! during training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Interaction, TrainView};
use crate::error::{Error, Result};
use crate::operators::{OperatorBank, SparseOperator};
use crate::propagation::propagate;
use crate::tensor::Matrix;

pub const MAX_ORACLE_NODES: usize = 64;

/// Symmetric eigendecomposition `S = U diag(values) U^T`, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct DenseSpectrum {
    pub n: usize,
    pub values: Vec<f64>,
    /// Column `r` is the eigenvector of `values[r]`; row-major `n x n`.
    pub vectors: Vec<f64>,
}

impl DenseSpectrum {
    pub fn vector(&self, r: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.vectors[i * self.n + r]).collect()
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n)
                    .map(|r| self.vectors[i * n + r] * self.values[r] * self.vectors[j * n + r])
                    .sum();
            }
        }
        out
    }

    /// `||U^T U - I||_F`.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| self.vectors[i * n + a] * self.vectors[i * n + b]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                s += (dot - target).powi(2);
            }
        }
        s.sqrt()
    }

    /// `U f(Lambda) U^T X`.
    pub fn apply_filter(&self, x: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
        let (n, d) = (self.n, x.cols());
        // coefficients U^T X, scaled by the response
        let mut coef = Matrix::zeros(n, d);
        for r in 0..n {
            let gain = f(self.values[r]);
            for i in 0..n {
                let u = self.vectors[i * n + r];
                if u == 0.0 {
                    continue;
                }
                for c in 0..d {
                    coef.as_mut_slice()[r * d + c] += gain * u * x.get(i, c);
                }
            }
        }
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            for r in 0..n {
                let u = self.vectors[i * n + r];
                for c in 0..d {
                    out.as_mut_slice()[i * d + c] += u * coef.get(r, c);
                }
            }
        }
        out
    }
}

fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cyclic Jacobi eigensolver for a dense symmetric row-major matrix.
pub fn eig(s: &[f64], n: usize) -> Result<DenseSpectrum> {
    if s.len() != n * n {
        return Err(Error::Shape(format!("{} values for a {n}x{n} matrix", s.len())));
    }
    if n > MAX_ORACLE_NODES {
        return Err(Error::InvalidArgument(format!("oracle is limited to {MAX_ORACLE_NODES} nodes, got {n}")));
    }
    for i in 0..n {
        for j in 0..i {
            if (s[i * n + j] - s[j * n + i]).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut a = s.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = frobenius(s).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x * n + x].total_cmp(&a[y * n + y]));
    let values = order.iter().map(|&r| a[r * n + r]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + new] = v[i * n + old];
        }
    }
    Ok(DenseSpectrum { n, values, vectors })
}

pub fn eig_operator(op: &SparseOperator) -> Result<DenseSpectrum> {
    eig(&op.to_dense(), op.n())
}

/// `p_L(lambda) = sum_{l=0..L} lambda^l`.
pub fn poly_response(lambda: f64, layers: usize) -> f64 {
    let mut acc = 0.0;
    let mut p = 1.0;
    for _ in 0..=layers {
        acc += p;
        p *= lambda;
    }
    acc
}

/// Max |propagate - U p_L(Lambda) U^T X| over all scales of a single-table bank.
pub fn check_polynomial_equivalence(bank: &OperatorBank, x0: &Matrix, layers: usize) -> Result<f64> {
    let reps = propagate(bank, std::slice::from_ref(x0), layers)?;
    let mut worst: f64 = 0.0;
    for k in 0..bank.k() {
        let spec = eig_operator(bank.operator(k))?;
        let spectral = spec.apply_filter(x0, |l| poly_response(l, layers));
        worst = worst.max(spectral.max_abs_diff(reps.get(k, 0)));
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct SpectralResponse {
    /// `(lambda_r, p_L(lambda_r))` per eigencomponent, ascending in lambda.
    pub gains: Vec<(f64, f64)>,
    /// Max |<u_r, h> - p_L(lambda_r) <u_r, x>| over components and columns.
    pub max_projection_error: f64,
    /// Whether `p_L` is non-decreasing over the non-negative eigenvalues.
    pub low_pass_on_nonnegative: bool,
}

/// Compares eigen-projections of the propagated signal with `p_L(lambda)`
/// times the projections of the input.
pub fn check_spectral_response(op: &SparseOperator, spectrum: &DenseSpectrum, x0: &Matrix, layers: usize) -> Result<SpectralResponse> {
    let h = crate::propagation::propagate_one(op, x0, layers)?;
    let (n, d) = (spectrum.n, x0.cols());
    let mut worst: f64 = 0.0;
    let mut gains = Vec::with_capacity(n);
    for r in 0..n {
        let u = spectrum.vector(r);
        let gain = poly_response(spectrum.values[r], layers);
        gains.push((spectrum.values[r], gain));
        for c in 0..d {
            let px: f64 = (0..n).map(|i| u[i] * x0.get(i, c)).sum();
            let ph: f64 = (0..n).map(|i| u[i] * h.get(i, c)).sum();
            worst = worst.max((ph - gain * px).abs());
        }
    }
    let nonneg: Vec<&(f64, f64)> = gains.iter().filter(|(l, _)| *l >= 0.0).collect();
    let low_pass = nonneg.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12);
    Ok(SpectralResponse {
        gains,
        max_projection_error: worst,
        low_pass_on_nonnegative: low_pass,
    })
}

/// Both sides of the Dirichlet energy identity: the trace form
/// `tr(X^T (I - S) X)` and `1/2 sum_ij A_ij ||x_i/sqrt(D_ii) - x_j/sqrt(D_jj)||^2`.
/// Zero-degree nodes are left out of both sides.
pub fn check_dirichlet(s: &SparseOperator, a: &SparseOperator, degrees: &[f64], x: &Matrix) -> (f64, f64) {
    let n = s.n();
    let mut sx = vec![0.0; n * x.cols()];
    s.spmm(x.as_slice(), x.cols(), &mut sx);
    let mut trace = 0.0;
    for i in (0..n).filter(|&i| degrees[i] > 0.0) {
        let xi = x.row(i);
        let sxi = &sx[i * x.cols()..(i + 1) * x.cols()];
        trace += xi.iter().zip(sxi).map(|(p, q)| p * (p - q)).sum::<f64>();
    }
    let pattern = a.pattern();
    let mut edge_sum = 0.0;
    for i in 0..n {
        for p in pattern.row(i) {
            let j = pattern.indices()[p] as usize;
            if degrees[i] <= 0.0 || degrees[j] <= 0.0 {
                continue;
            }
            let (si, sj) = (degrees[i].sqrt(), degrees[j].sqrt());
            let diff: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(xi, xj)| (xi / si - xj / sj).powi(2))
                .sum();
            edge_sum += a.values()[p] * diff;
        }
    }
    (trace, 0.5 * edge_sum)
}

/// Max |sum_k g_k h^(k) - sum_k g_k U_k p_L(Lambda_k) U_k^T X|.
pub fn check_mixture_decomposition(bank: &OperatorBank, g: &[f64], x0: &Matrix, layers: usize) -> Result<f64> {
    if g.len() != bank.k() {
        return Err(Error::Shape(format!("{} mixture weights for {} operators", g.len(), bank.k())));
    }
    if g.iter().any(|&w| !(w >= 0.0)) || (g.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("mixture weights {g:?} are not on the simplex")));
    }
    let reps = propagate(bank, std::slice::from_ref(x0), layers)?;
    let gate = Matrix::from_fn(1, bank.k(), |_, c| g[c]);
    let g_user = Matrix::from_fn(bank.num_users(), bank.k(), |_, c| gate.get(0, c));
    let g_item = Matrix::from_fn(bank.num_items(), bank.k(), |_, c| gate.get(0, c));
    let fused = crate::context::fuse_scales(&reps, &g_user, &g_item)?;
    let mut spectral = Matrix::zeros(x0.rows(), x0.cols());
    for (k, &w) in g.iter().enumerate() {
        let spec = eig_operator(bank.operator(k))?;
        spectral.axpy(w, &spec.apply_filter(x0, |l| poly_response(l, layers)));
    }
    Ok(fused[0].max_abs_diff(&spectral))
}

/// Random bipartite train view with `users + items` nodes and roughly
/// `density * users * items` edges, timestamps spread over `span_days` days.
pub fn random_bipartite(seed: u64, users: usize, items: usize, density: f64, span_days: f64) -> TrainView {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut histories = Vec::with_capacity(users);
    for u in 0..users {
        let mut h = Vec::new();
        for i in 0..items {
            if rng.gen::<f64>() < density {
                h.push(Interaction {
                    user: u as u32,
                    item: i as u32,
                    time: rng.gen::<f64>() * span_days * 86_400.0,
                });
            }
        }
        if h.is_empty() {
            h.push(Interaction {
                user: u as u32,
                item: rng.gen_range(0..items) as u32,
                time: rng.gen::<f64>() * span_days * 86_400.0,
            });
        }
        h.sort_by(|a, b| a.time.total_cmp(&b.time));
        histories.push(h);
    }
    TrainView::from_histories(items, histories)
}

/// One case of the oracle suite.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub seed: u64,
    pub nodes: usize,
    pub k: usize,
    pub layers: usize,
    pub polynomial_deviation: f64,
    pub dirichlet_relative_error: f64,
    pub mixture_deviation: f64,
    pub response_error: f64,
    pub eigen_reconstruction: f64,
    pub eigen_range_ok: bool,
    pub low_pass_ok: bool,
}

#[derive(Debug, Clone)]
pub struct OracleSummary {
    pub cases: Vec<OracleCase>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheckRow {
    pub name: &'static str,
    pub worst: f64,
    pub passed: bool,
}

impl OracleSummary {
    pub fn rows(&self) -> Vec<OracleCheckRow> {
        let worst = |f: &dyn Fn(&OracleCase) -> f64| self.cases.iter().map(f).fold(0.0, f64::max);
        let tol = self.tolerance;
        let mut rows = vec![
            ("polynomial_equivalence", worst(&|c| c.polynomial_deviation)),
            ("spectral_response", worst(&|c| c.response_error)),
            ("dirichlet_identity", worst(&|c| c.dirichlet_relative_error)),
            ("mixture_decomposition", worst(&|c| c.mixture_deviation)),
            ("eigen_reconstruction", worst(&|c| c.eigen_reconstruction)),
        ]
        .into_iter()
        .map(|(name, w)| OracleCheckRow {
            name,
            worst: w,
            passed: w <= tol,
        })
        .collect::<Vec<_>>();
        let range_fail = self.cases.iter().filter(|c| !c.eigen_range_ok).count();
        rows.push(OracleCheckRow {
            name: "eigenvalue_range",
            worst: range_fail as f64,
            passed: range_fail == 0,
        });
        let lp_fail = self.cases.iter().filter(|c| !c.low_pass_ok).count();
        rows.push(OracleCheckRow {
            name: "low_pass_response",
            worst: lp_fail as f64,
            passed: lp_fail == 0,
        });
        rows
    }

    pub fn passed(&self) -> bool {
        self.rows().iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<24} {:>14}  {}\n", "check", "worst", "result");
        for r in self.rows() {
            s.push_str(&format!(
                "{:<24} {:>14.3e}  {}\n",
                r.name,
                r.worst,
                if r.passed { "PASS" } else { "FAIL" }
            ));
        }
        s.push_str(&format!("{} graphs, tolerance {:.0e}\n", self.cases.len(), self.tolerance));
        s
    }
}

/// Runs every check on `graphs` seeded random bipartite graphs with
/// `N in [4, 64]`, `K in {1,2,3}`, `L in {0,1,2,3}`.
pub fn run_oracle_suite(graphs: usize, seed: u64) -> Result<OracleSummary> {
    let tolerance = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(graphs);
    for case in 0..graphs {
        let case_seed = seed.wrapping_mul(1_000_003).wrapping_add(case as u64);
        let nodes = rng.gen_range(4..=MAX_ORACLE_NODES);
        let users = rng.gen_range(1..nodes);
        let items = nodes - users;
        let density = rng.gen_range(0.1..0.6);
        let k = rng.gen_range(1..=3);
        let layers = rng.gen_range(0..=3);
        let d = rng.gen_range(1..=4);
        let train = random_bipartite(case_seed, users, items, density, 365.0);
        let scales: Vec<f64> = [0.5, 2.0, 8.0][..k].to_vec();
        let bank = OperatorBank::temporal(&train, &scales, 86_400.0)?;
        let x0 = Matrix::from_fn(nodes, d, |_, _| rng.gen_range(-1.0..1.0));

        let polynomial_deviation = check_polynomial_equivalence(&bank, &x0, layers)?;

        let mut dirichlet_relative_error: f64 = 0.0;
        let mut response_error: f64 = 0.0;
        let mut eigen_reconstruction: f64 = 0.0;
        let mut eigen_range_ok = true;
        let mut low_pass_ok = true;
        for kk in 0..k {
            let op = bank.operator(kk);
            let dense = op.to_dense();
            let spec = eig(&dense, nodes)?;
            let recon = spec.reconstruct();
            let diff: Vec<f64> = recon.iter().zip(&dense).map(|(a, b)| a - b).collect();
            eigen_reconstruction = eigen_reconstruction
                .max(frobenius(&diff) / frobenius(&dense).max(1.0))
                .max(spec.orthogonality_error());
            eigen_range_ok &= spec.values.iter().all(|l| (-1.0 - 1e-8..=1.0 + 1e-8).contains(l));
            let resp = check_spectral_response(op, &spec, &x0, layers)?;
            response_error = response_error.max(resp.max_projection_error);
            low_pass_ok &= resp.low_pass_on_nonnegative;
            let (lhs, rhs) = check_dirichlet(op, bank.adjacency(kk), bank.degrees(kk), &x0);
            dirichlet_relative_error = dirichlet_relative_error.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300));
        }
        let mut g: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = g.iter().sum();
        g.iter_mut().for_each(|w| *w /= total);
        let mixture_deviation = check_mixture_decomposition(&bank, &g, &x0, layers)?;
        cases.push(OracleCase {
            seed: case_seed,
            nodes,
            k,
            layers,
            polynomial_deviation,
            dirichlet_relative_error,
            mixture_deviation,
            response_error,
            eigen_reconstruction,
            eigen_range_ok,
            low_pass_ok,
        });
    }
    Ok(OracleSummary { cases, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spectrum() {
        let n = 4;
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            s[i * n + i] = 1.0;
        }
        let spec = eig(&s, n).unwrap();
        assert!(spec.values.iter().all(|&l| (l - 1.0).abs() < 1e-14));
        let recon = spec.reconstruct();
        assert!(recon.iter().zip(&s).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn swap_operator_spectrum() {
        let spec = eig(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        assert!((spec.values[0] + 1.0).abs() < 1e-14);
        assert!((spec.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn asymmetric_rejected() {
        assert!(eig(&[0.0, 1.0, 0.5, 0.0], 2).is_err());
    }

    #[test]
    fn bipartite_spectrum_is_symmetric() {
        let train = random_bipartite(7, 9, 12, 0.4, 100.0);
        let bank = OperatorBank::temporal(&train, &[1.0], 86_400.0).unwrap();
        let spec = eig_operator(bank.operator(0)).unwrap();
        let n = spec.values.len();
        for r in 0..n {
            assert!((spec.values[r] + spec.values[n - 1 - r]).abs() < 1e-9);
        }
    }

    #[test]
    fn response_values() {
        assert_eq!(poly_response(1.0, 2), 3.0);
        assert_eq!(poly_response(0.0, 2), 1.0);
        assert_eq!(poly_response(-1.0, 2), 1.0);
        assert_eq!(poly_response(0.3, 0), 1.0);
    }

    #[test]
    fn dirichlet_single_edge() {
        for w in [0.3, 1.0, 5.0] {
            let a = SparseOperator::from_triplets(2, &[(0, 1, w), (1, 0, w)], true).unwrap();
            let s = crate::operators::normalize(&a).unwrap();
            let x = Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
            let (lhs, rhs) = check_dirichlet(&s, &a, &a.degrees(), &x);
            // x^T (I - S) x with S = [[0,1],[1,0]]: 2 - (-2) = 4
            assert!((lhs - 4.0).abs() < 1e-12);
            assert!((rhs - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_zero_for_degree_weighted_constant() {
        let train = random_bipartite(3, 5, 6, 0.5, 50.0);
        let bank = OperatorBank::temporal(&train, &[2.0], 86_400.0).unwrap();
        let deg = bank.degrees(0);
        let x = Matrix::from_fn(deg.len(), 1, |r, _| 2.5 * deg[r].sqrt());
        let (lhs, rhs) = check_dirichlet(bank.operator(0), bank.adjacency(0), deg, &x);
        assert!(lhs.abs() < 1e-10 && rhs.abs() < 1e-10, "{lhs} {rhs}");
    }

    #[test]
    fn mixture_rejects_off_simplex() {
        let train = random_bipartite(1, 3, 3, 0.6, 10.0);
        let bank = OperatorBank::temporal(&train, &[0.5, 2.0], 86_400.0).unwrap();
        let x = Matrix::from_fn(6, 2, |r, c| (r + c) as f64);
        assert!(check_mixture_decomposition(&bank, &[0.7, 0.7], &x, 2).is_err());
        assert!(check_mixture_decomposition(&bank, &[1.0, 0.0], &x, 2).unwrap() < 1e-9);
    }
}
