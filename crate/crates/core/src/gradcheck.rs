//! Central-difference verification of the hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::context::compute_contexts;
use crate::data::{Interaction, TrainView};
use crate::error::{Error, Result};
use crate::model::{LossWeights, Modality, Model, ModelDims, Parameters, Precision, Triple};
use crate::operators::{KernelMode, OperatorBank};
use crate::tensor::Matrix;

/// Comparison for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub values: usize,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` in Euclidean norm over the tensor.
    pub rel_error: f64,
}

/// Tensor-wise relative error between the analytic gradient and central
/// differences of the loss with step `step`.
pub fn gradient_check(
    model: &Model,
    bank: &OperatorBank,
    batch: &[Triple],
    weights: &LossWeights,
    step: f64,
) -> Result<Vec<GroupCheck>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be > 0".into()));
    }
    let (_, grads) = model.loss_and_grad(bank, batch, weights)?;
    let analytic = grads.to_named();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(analytic.len());
    for (g, (name, _, a)) in analytic.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for (j, &aj) in a.iter().enumerate() {
            let original = value_at(&probe.params, g, j);
            set_value(&mut probe.params, g, j, original + step);
            let plus = probe.loss(bank, batch, weights)?.total;
            set_value(&mut probe.params, g, j, original - step);
            let minus = probe.loss(bank, batch, weights)?.total;
            set_value(&mut probe.params, g, j, original);
            let nj = (plus - minus) / (2.0 * step);
            diff2 += (aj - nj).powi(2);
            a2 += aj * aj;
            n2 += nj * nj;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        let rel_error = if scale > 0.0 { diff2.sqrt() / scale } else { 0.0 };
        out.push(GroupCheck {
            name: name.clone(),
            values: a.len(),
            rel_error,
        });
    }
    Ok(out)
}

fn value_at(params: &Parameters, group: usize, idx: usize) -> f64 {
    let (mut g, mut v) = (0, 0.0);
    params.visit(&mut |_, _, xs| {
        if g == group {
            v = xs[idx];
        }
        g += 1;
    });
    v
}

fn set_value(params: &mut Parameters, group: usize, idx: usize, value: f64) {
    let mut g = 0;
    params.visit_mut(&mut |_, xs| {
        if g == group {
            xs[idx] = value;
        }
        g += 1;
    });
}

/// A small instance for gradient checks: 4 users and 4 items (8 nodes),
/// two temporal operators, an `id` and a `feat` modality, `dim = 4`,
/// and a batch of four triples. Parameters are redrawn at unit-ish scale so
/// every nonlinearity is exercised away from its initialization regime.
pub fn toy_instance(seed: u64, precision: Precision) -> Result<(OperatorBank, Model, Vec<Triple>)> {
    let (users, items) = (4usize, 4usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let day = 86_400.0;
    let histories: Vec<Vec<Interaction>> = (0..users)
        .map(|u| {
            let mut h = Vec::new();
            for i in 0..items {
                let keep = i == u || i == (u + 1) % items || rng.gen_bool(0.3);
                let time = rng.gen_range(0.0..60.0) * day;
                if keep {
                    h.push(Interaction {
                        user: u as u32,
                        item: i as u32,
                        time,
                    });
                }
            }
            h.sort_by(|a, b| a.time.total_cmp(&b.time));
            h
        })
        .collect();
    let train = TrainView::from_histories(items, histories);
    let bank = OperatorBank::build(
        &train,
        &KernelMode::Temporal {
            scales: vec![0.5, 8.0],
            time_unit: day,
        },
    )?;
    let contexts = compute_contexts(&train, 0.3, day)?;
    let features = Matrix::from_fn(items, 3, |_, _| rng.gen_range(-1.0..1.0));
    let dims = ModelDims {
        dim: 4,
        hidden: 5,
        layers: 2,
        temperature: 0.7,
    };
    let mut model = Model::new(
        dims,
        vec![Modality::id(), Modality::features("feat", features)],
        contexts,
        bank.k(),
        seed,
        precision,
    )?;
    let normal = Normal::new(0.0, 0.5).unwrap();
    model.params.visit_mut(&mut |_, xs| xs.iter_mut().for_each(|x| *x = normal.sample(&mut rng)));
    if precision == Precision::F32 {
        model.params.round_to_f32();
    }
    let batch = (0..4)
        .map(|b| {
            let user = b % users;
            let pos = train.user_items(user)[0];
            let neg = (0..items as u32).find(|i| !train.contains(user, *i)).unwrap_or((pos + 1) % items as u32);
            Triple {
                user: user as u32,
                pos,
                neg,
            }
        })
        .collect();
    Ok((bank, model, batch))
}

/// Loss weights for the toy check: every term active, the variance hinge included.
pub fn toy_weights() -> LossWeights {
    LossWeights {
        lambda: 0.5,
        gamma: 1e-2,
        sigma_min: 10.0,
        lambda_var: 1.0,
        eps: 1e-8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_has_the_advertised_shape() {
        let (bank, model, batch) = toy_instance(0, Precision::F64).unwrap();
        assert_eq!(bank.num_nodes(), 8);
        assert_eq!(bank.k(), 2);
        assert_eq!(model.m(), 2);
        assert_eq!(model.dims.dim, 4);
        assert_eq!(batch.len(), 4);
    }

    #[test]
    fn f64_gradients_match() {
        let (bank, model, batch) = toy_instance(1, Precision::F64).unwrap();
        for c in gradient_check(&model, &bank, &batch, &toy_weights(), 1e-6).unwrap() {
            assert!(c.rel_error <= 1e-5, "{c:?}");
        }
    }

    #[test]
    fn f32_gradients_match() {
        let (bank, model, batch) = toy_instance(2, Precision::F32).unwrap();
        for c in gradient_check(&model, &bank, &batch, &toy_weights(), 1e-3).unwrap() {
            assert!(c.rel_error <= 1e-3, "{c:?}");
        }
    }

    #[test]
    fn rejects_nonpositive_step() {
        let (bank, model, batch) = toy_instance(0, Precision::F64).unwrap();
        assert!(gradient_check(&model, &bank, &batch, &toy_weights(), 0.0).is_err());
    }
}
