//! Multi-scale LightGCN-style propagation `h = sum_{l=0..L} S^l X` and its adjoint.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operators::{OperatorBank, SparseOperator};
use crate::tensor::Matrix;

/// `sum_{l=0..layers} S^l x` via repeated sparse-dense products.
pub fn propagate_one(op: &SparseOperator, x0: &Matrix, layers: usize) -> Result<Matrix> {
    if op.n() != x0.rows() {
        return Err(Error::Shape(format!(
            "operator has {} nodes, embedding table has {} rows",
            op.n(),
            x0.rows()
        )));
    }
    let d = x0.cols();
    let mut acc = x0.clone();
    if layers == 0 {
        return Ok(acc);
    }
    let mut cur = x0.as_slice().to_vec();
    let mut next = vec![0.0; cur.len()];
    for _ in 0..layers {
        op.spmm(&cur, d, &mut next);
        for (a, v) in acc.as_mut_slice().iter_mut().zip(&next) {
            *a += v;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(acc)
}

/// Adjoint of [`propagate_one`]. The operators built here are symmetric, so
/// the adjoint polynomial equals the forward one.
pub fn propagate_adjoint_one(op: &SparseOperator, grad: &Matrix, layers: usize) -> Result<Matrix> {
    if !op.is_symmetric() {
        return Err(Error::InvalidArgument(
            "adjoint propagation requires a symmetric operator".into(),
        ));
    }
    propagate_one(op, grad, layers)
}

/// Per-scale, per-modality propagated representations `h[k][m]`.
#[derive(Debug, Clone)]
pub struct ScaleRepresentations {
    pub layers: usize,
    pub reps: Vec<Vec<Matrix>>,
}

impl ScaleRepresentations {
    pub fn k(&self) -> usize {
        self.reps.len()
    }

    pub fn m(&self) -> usize {
        self.reps.first().map_or(0, Vec::len)
    }

    pub fn get(&self, k: usize, m: usize) -> &Matrix {
        &self.reps[k][m]
    }
}

fn check_tables(bank: &OperatorBank, tables: &[Matrix]) -> Result<()> {
    for (m, t) in tables.iter().enumerate() {
        if t.rows() != bank.num_nodes() {
            return Err(Error::Shape(format!(
                "modality {m}: {} rows, bank has {} nodes",
                t.rows(),
                bank.num_nodes()
            )));
        }
    }
    Ok(())
}

/// Propagates every modality table through every operator of the bank.
pub fn propagate(bank: &OperatorBank, tables: &[Matrix], layers: usize) -> Result<ScaleRepresentations> {
    check_tables(bank, tables)?;
    let k = bank.k();
    let m = tables.len();
    let flat: Vec<Matrix> = (0..k * m)
        .into_par_iter()
        .map(|j| propagate_one(bank.operator(j / m), &tables[j % m], layers))
        .collect::<Result<_>>()?;
    let mut it = flat.into_iter();
    let reps = (0..k).map(|_| it.by_ref().take(m).collect()).collect();
    Ok(ScaleRepresentations { layers, reps })
}

/// Gradient with respect to each modality's input table, summed over scales.
/// `grads[k][m]` is the gradient with respect to `h[k][m]`; `None` entries are zero.
pub fn propagate_adjoint(
    bank: &OperatorBank,
    grads: &[Vec<Option<Matrix>>],
    layers: usize,
) -> Result<Vec<Option<Matrix>>> {
    if grads.len() != bank.k() {
        return Err(Error::Shape(format!(
            "{} scale gradients for a bank of {}",
            grads.len(),
            bank.k()
        )));
    }
    let m = grads.first().map_or(0, Vec::len);
    let jobs: Vec<(usize, usize)> = (0..bank.k())
        .flat_map(|k| (0..m).map(move |mm| (k, mm)))
        .filter(|&(k, mm)| grads[k][mm].is_some())
        .collect();
    let results: Vec<((usize, usize), Matrix)> = jobs
        .into_par_iter()
        .map(|(k, mm)| {
            let g = grads[k][mm].as_ref().unwrap();
            if g.rows() != bank.num_nodes() {
                return Err(Error::Shape(format!("gradient for ({k}, {mm}) has {} rows", g.rows())));
            }
            propagate_adjoint_one(bank.operator(k), g, layers).map(|r| ((k, mm), r))
        })
        .collect::<Result<_>>()?;
    // fixed summation order over k keeps results independent of scheduling
    let mut out: Vec<Option<Matrix>> = vec![None; m];
    for ((_, mm), r) in results {
        match &mut out[mm] {
            Some(acc) => acc.axpy(1.0, &r),
            slot @ None => *slot = Some(r),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::SparseOperator;

    fn swap_operator() -> SparseOperator {
        SparseOperator::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)], true).unwrap()
    }

    #[test]
    fn zero_layers_is_identity() {
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(propagate_one(&swap_operator(), &x, 0).unwrap(), x);
        assert_eq!(propagate_adjoint_one(&swap_operator(), &x, 0).unwrap(), x);
    }

    #[test]
    fn single_edge_two_layers() {
        // S swaps rows, S^2 = I: h = X + SX + X
        let x = Matrix::from_vec(2, 1, vec![3.0, 5.0]).unwrap();
        let h = propagate_one(&swap_operator(), &x, 2).unwrap();
        assert_eq!(h.as_slice(), &[2.0 * 3.0 + 5.0, 3.0 + 2.0 * 5.0]);
    }

    #[test]
    fn shape_mismatch() {
        let x = Matrix::zeros(3, 2);
        assert!(matches!(propagate_one(&swap_operator(), &x, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn asymmetric_adjoint_rejected() {
        let op = SparseOperator::from_triplets(2, &[(0, 1, 1.0)], false).unwrap();
        assert!(propagate_adjoint_one(&op, &Matrix::zeros(2, 1), 1).is_err());
    }
}
