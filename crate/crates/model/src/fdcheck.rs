//! Central-difference verification of analytic gradients.
//!
//! A check owns a parameter store and a closure that builds a scalar loss on
//! a fresh tape. The analytic gradient comes from one backward sweep; each
//! sampled component is then perturbed in both directions and the secant
//! slope compared against it. Everything runs in f64.

use micseg_core::seeds::{rng_stream, DOMAIN_GRADCHECK};
use micseg_core::{Tape, Tensor};
use rand::seq::index::sample;

use crate::error::Result;
use crate::net::store::{fnv1a, BoundParams, ParameterStore};

/// Worst observed disagreement across all sampled components.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_abs: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_rel < tol
    }
}

/// Guarded relative error. The floor keeps secant noise from dominating
/// near-zero components: with steps of 1e-5 on losses of order ten, central
/// differences resolve about 1e-10 absolute, so components below the floor
/// are compared at 1e-9 absolute resolution instead of relatively.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

fn eval_loss<F>(store: &ParameterStore<f64>, build: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &BoundParams<f64>) -> Result<Tensor<f64>>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape)?;
    let loss = build(&mut tape, &bound)?;
    Ok(loss.item()?)
}

/// Compare analytic and central-difference gradients of `build`'s loss with
/// respect to every parameter in `store`.
///
/// `samples_per_tensor` limits how many components of each parameter are
/// perturbed; zero means all of them. The store is restored to its original
/// values before returning.
pub fn central_difference<F>(
    store: &mut ParameterStore<f64>,
    build: F,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<FdReport>
where
    F: Fn(&mut Tape<f64>, &BoundParams<f64>) -> Result<Tensor<f64>>,
{
    let grads = {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape)?;
        let loss = build(&mut tape, &bound)?;
        tape.backward(&loss)?
    };

    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let mut report = FdReport {
        checked: 0,
        worst_rel: 0.0,
        worst_abs: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };

    for name in &names {
        let original = store.get(name)?.clone();
        let shape: Vec<usize> = original.shape().to_vec();
        let numel = original.numel();
        let indices: Vec<usize> = if samples_per_tensor == 0 || samples_per_tensor >= numel {
            (0..numel).collect()
        } else {
            let mut rng = rng_stream(seed, DOMAIN_GRADCHECK, fnv1a(name));
            sample(&mut rng, numel, samples_per_tensor).into_vec()
        };
        let analytic = grads.get(name);

        for &idx in &indices {
            let v = original.data()[idx];
            let h = 1e-5 * v.abs().max(1.0);

            let mut bumped = original.data().to_vec();
            bumped[idx] = v + h;
            store.set(name, Tensor::from_vec(&shape, bumped)?)?;
            let f_plus = eval_loss(store, &build)?;

            let mut bumped = original.data().to_vec();
            bumped[idx] = v - h;
            store.set(name, Tensor::from_vec(&shape, bumped)?)?;
            let f_minus = eval_loss(store, &build)?;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g.data()[idx]);
            let rel = rel_err(a, numeric);
            report.checked += 1;
            if rel > report.worst_rel {
                report.worst_rel = rel;
                report.worst_abs = (a - numeric).abs();
                report.worst_param = name.clone();
                report.worst_index = idx;
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
        store.set(name, original)?;
    }
    Ok(report)
}

/// Contract a tensor of any shape to a scalar through fixed pseudo-random
/// weights, so every output component influences the loss with a distinct
/// coefficient.
pub fn weighted_scalar_loss(
    tape: &mut Tape<f64>,
    out: &Tensor<f64>,
    seed: u64,
) -> Result<Tensor<f64>> {
    let n = out.numel();
    let mut rng = rng_stream(seed, DOMAIN_GRADCHECK, u64::MAX);
    let w = tape.constant(Tensor::rand_uniform(&[n, 1], -1.0, 1.0, &mut rng));
    let flat = tape.reshape(out, &[1, n])?;
    let prod = tape.matmul(&flat, &w)?;
    let loss = tape.reshape(&prod, &[])?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::store::ParameterStore;

    #[test]
    fn quadratic_gradient_matches() {
        let mut store = ParameterStore::new();
        store
            .insert("x", Tensor::from_vec(&[3], vec![0.5, -1.25, 2.0]).unwrap())
            .unwrap();
        let mut report = central_difference(
            &mut store,
            |tape, bound| {
                let x = bound.get("x")?;
                let sq = tape.mul(x, x)?;
                weighted_scalar_loss(tape, &sq, 9)
            },
            0,
            1,
        )
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.passes(1e-6), "worst {}", report.worst_rel);
        report.worst_rel = 1.0;
        assert!(!report.passes(1e-4));
    }

    #[test]
    fn store_is_restored_after_check() {
        let mut store = ParameterStore::new();
        let x0 = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap();
        store.insert("x", x0.clone()).unwrap();
        central_difference(
            &mut store,
            |tape, bound| {
                let x = bound.get("x")?;
                let y = tape.gelu(x)?;
                weighted_scalar_loss(tape, &y, 3)
            },
            0,
            1,
        )
        .unwrap();
        assert!(store.get("x").unwrap().bitwise_eq(&x0));
    }

    #[test]
    fn sampling_caps_component_count() {
        let mut store = ParameterStore::new();
        store
            .insert("w", Tensor::full(&[10, 10], 0.3))
            .unwrap();
        let report = central_difference(
            &mut store,
            |tape, bound| {
                let w = bound.get("w")?;
                let y = tape.gelu(w)?;
                weighted_scalar_loss(tape, &y, 5)
            },
            7,
            1,
        )
        .unwrap();
        assert_eq!(report.checked, 7);
    }
}
