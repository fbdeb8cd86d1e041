use timemm::operators::OperatorBank;
use timemm::propagation::{propagate, propagate_adjoint, propagate_adjoint_one, propagate_one};
use timemm::spectral::random_bipartite;
use timemm::tensor::Matrix;

fn dense_apply(s: &[f64], n: usize, x: &Matrix) -> Matrix {
    Matrix::from_fn(n, x.cols(), |r, c| (0..n).map(|j| s[r * n + j] * x.get(j, c)).sum())
}

fn dense_poly(s: &[f64], n: usize, x: &Matrix, layers: usize) -> Matrix {
    let mut acc = x.clone();
    let mut cur = x.clone();
    for _ in 0..layers {
        cur = dense_apply(s, n, &cur);
        acc.axpy(1.0, &cur);
    }
    acc
}

fn table(n: usize, d: usize, seed: u64) -> Matrix {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Matrix::from_fn(n, d, |_, _| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

#[test]
fn sparse_propagation_matches_dense_powers() {
    for seed in 0..10 {
        let train = random_bipartite(seed, 9, 11, 0.3, 90.0);
        let bank = OperatorBank::temporal(&train, &[0.5, 2.0, 8.0], 86_400.0).unwrap();
        let n = bank.num_nodes();
        let x = table(n, 5, seed);
        for k in 0..bank.k() {
            let s = bank.operator(k).to_dense();
            for layers in 0..=4 {
                let sparse = propagate_one(bank.operator(k), &x, layers).unwrap();
                let dense = dense_poly(&s, n, &x, layers);
                assert!(sparse.max_abs_diff(&dense) < 1e-12, "seed {seed} k {k} L {layers}");
            }
        }
    }
}

#[test]
fn adjoint_identity_holds() {
    for seed in 0..10 {
        let train = random_bipartite(seed, 7, 13, 0.35, 200.0);
        let bank = OperatorBank::temporal(&train, &[0.5, 8.0], 86_400.0).unwrap();
        let n = bank.num_nodes();
        let (x, y) = (table(n, 3, seed), table(n, 3, seed + 100));
        for k in 0..bank.k() {
            let px = propagate_one(bank.operator(k), &x, 3).unwrap();
            let pty = propagate_adjoint_one(bank.operator(k), &y, 3).unwrap();
            let lhs = px.frobenius_inner(&y);
            let rhs = x.frobenius_inner(&pty);
            assert!((lhs - rhs).abs() <= 1e-11 * lhs.abs().max(1.0));
        }
    }
}

#[test]
fn propagation_is_linear() {
    let train = random_bipartite(3, 10, 10, 0.3, 50.0);
    let bank = OperatorBank::temporal(&train, &[2.0], 86_400.0).unwrap();
    let n = bank.num_nodes();
    let (x, y) = (table(n, 4, 1), table(n, 4, 2));
    let (a, b) = (0.7, -1.3);
    let mut combo = x.clone();
    combo.scale(a);
    combo.axpy(b, &y);
    let lhs = propagate_one(bank.operator(0), &combo, 2).unwrap();
    let mut rhs = propagate_one(bank.operator(0), &x, 2).unwrap();
    rhs.scale(a);
    rhs.axpy(b, &propagate_one(bank.operator(0), &y, 2).unwrap());
    assert!(lhs.max_abs_diff(&rhs) < 1e-12);
}

#[test]
fn bank_propagation_and_summed_adjoint() {
    let train = random_bipartite(5, 8, 9, 0.4, 30.0);
    let bank = OperatorBank::temporal(&train, &[0.5, 2.0, 8.0], 86_400.0).unwrap();
    let n = bank.num_nodes();
    let tables = vec![table(n, 2, 1), table(n, 2, 2)];
    let reps = propagate(&bank, &tables, 2).unwrap();
    assert_eq!((reps.k(), reps.m()), (3, 2));
    for k in 0..3 {
        for m in 0..2 {
            let single = propagate_one(bank.operator(k), &tables[m], 2).unwrap();
            assert_eq!(reps.get(k, m), &single);
        }
    }
    // adjoint of the map X -> (h[k])_k is the sum over k of the per-operator adjoints
    let grads: Vec<Vec<Option<Matrix>>> = (0..3).map(|k| vec![Some(table(n, 2, 10 + k as u64)), None]).collect();
    let back = propagate_adjoint(&bank, &grads, 2).unwrap();
    assert!(back[1].is_none());
    let lhs: f64 = (0..3).map(|k| reps.get(k, 0).frobenius_inner(grads[k][0].as_ref().unwrap())).sum();
    let rhs = tables[0].frobenius_inner(back[0].as_ref().unwrap());
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

#[test]
fn shape_mismatch_is_an_error() {
    let train = random_bipartite(0, 4, 4, 0.5, 10.0);
    let bank = OperatorBank::uniform(&train).unwrap();
    let bad = Matrix::zeros(bank.num_nodes() + 1, 2);
    assert!(propagate_one(bank.operator(0), &bad, 1).is_err());
    assert!(propagate(&bank, &[bad], 1).is_err());
}
