use micseg_core::{GradSink, NodeId, Real, Tape, TapeCtx, TapeOp, Tensor, TensorError};

use crate::error::Result;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-position standardization over the channel (last) axis followed by an
/// affine map. Fused into one tape record: the channel mean re-enters every
/// element's gradient, which the generic broadcast ops cannot express.
struct LayerNormOp {
    input: NodeId,
    gamma: NodeId,
    beta: NodeId,
    eps: f64,
}

fn moments<P: Real>(row: &[P]) -> (P, P) {
    let n = P::from_f64(row.len() as f64);
    let mut mu = P::ZERO;
    for &v in row {
        mu = mu + v;
    }
    mu = mu / n;
    let mut var = P::ZERO;
    for &v in row {
        let d = v - mu;
        var = var + d * d;
    }
    (mu, var / n)
}

impl<P: Real> TapeOp<P> for LayerNormOp {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.input, self.gamma, self.beta]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let x = ctx.value(self.input);
        let gamma = ctx.value(self.gamma);
        let c = gamma.numel();
        let rows = x.numel() / c;
        let g = grad_out.data();
        let gm = gamma.data();
        let eps = P::from_f64(self.eps);
        let inv_c = P::ONE / P::from_f64(c as f64);

        // dβ and dγ reduce over rows; dx needs the two channel means per row.
        {
            let gb = sink.acc(self.beta, c);
            for r in 0..rows {
                for i in 0..c {
                    gb[i] = gb[i] + g[r * c + i];
                }
            }
        }
        {
            let gg = sink.acc(self.gamma, c);
            for r in 0..rows {
                let xs = &x.data()[r * c..(r + 1) * c];
                let (mu, var) = moments(xs);
                let inv_sigma = P::ONE / (var + eps).sqrt();
                for i in 0..c {
                    let xhat = (xs[i] - mu) * inv_sigma;
                    gg[i] = gg[i] + g[r * c + i] * xhat;
                }
            }
        }
        {
            let gx = sink.acc(self.input, x.numel());
            for r in 0..rows {
                let xs = &x.data()[r * c..(r + 1) * c];
                let gs = &g[r * c..(r + 1) * c];
                let (mu, var) = moments(xs);
                let inv_sigma = P::ONE / (var + eps).sqrt();
                let mut mean_gy = P::ZERO;
                let mut mean_gy_xhat = P::ZERO;
                for i in 0..c {
                    let gy = gs[i] * gm[i];
                    let xhat = (xs[i] - mu) * inv_sigma;
                    mean_gy = mean_gy + gy;
                    mean_gy_xhat = mean_gy_xhat + gy * xhat;
                }
                mean_gy = mean_gy * inv_c;
                mean_gy_xhat = mean_gy_xhat * inv_c;
                for i in 0..c {
                    let gy = gs[i] * gm[i];
                    let xhat = (xs[i] - mu) * inv_sigma;
                    let idx = r * c + i;
                    gx[idx] = gx[idx] + inv_sigma * (gy - mean_gy - xhat * mean_gy_xhat);
                }
            }
        }
    }
}

pub fn layer_norm<P: Real>(
    tape: &mut Tape<P>,
    x: &Tensor<P>,
    gamma: &Tensor<P>,
    beta: &Tensor<P>,
) -> Result<Tensor<P>> {
    let c = *x.shape().last().ok_or(TensorError::InvalidAxis {
        axis: 0,
        shape: vec![],
    })?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        }
        .into());
    }
    let rows = x.numel() / c;
    let eps = P::from_f64(LAYER_NORM_EPS);
    let mut out = vec![P::ZERO; x.numel()];
    for r in 0..rows {
        let xs = &x.data()[r * c..(r + 1) * c];
        let (mu, var) = moments(xs);
        let inv_sigma = P::ONE / (var + eps).sqrt();
        for i in 0..c {
            out[r * c + i] = (xs[i] - mu) * inv_sigma * gamma.data()[i] + beta.data()[i];
        }
    }
    let input = tape.ensure(x);
    let gamma_id = tape.ensure(gamma);
    let beta_id = tape.ensure(beta);
    let value = Tensor::from_vec(x.shape(), out)?;
    Ok(tape.record(
        Box::new(LayerNormOp {
            input,
            gamma: gamma_id,
            beta: beta_id,
            eps: LAYER_NORM_EPS,
        }),
        value,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rows_map_to_beta() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[2, 3], vec![5.0; 6]).unwrap();
        let gamma = Tensor::from_vec(&[3], vec![1.0; 3]).unwrap();
        let beta = Tensor::zeros(&[3]);
        let y = layer_norm(&mut tape, &x, &gamma, &beta).unwrap();
        for &v in y.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn standardized_input_passes_through() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap();
        let gamma = Tensor::from_vec(&[2], vec![1.0; 2]).unwrap();
        let beta = Tensor::zeros(&[2]);
        let y = layer_norm(&mut tape, &x, &gamma, &beta).unwrap();
        // Variance is 1, so only eps separates the output from [1, -1].
        assert!((y.data()[0] - 1.0).abs() < 1e-5);
        assert!((y.data()[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn matches_scalar_reference() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::rand_uniform(&[4, 6], -2.0, 2.0, &mut rng);
        let gamma = Tensor::<f64>::rand_uniform(&[6], 0.5, 1.5, &mut rng);
        let beta = Tensor::<f64>::rand_uniform(&[6], -0.5, 0.5, &mut rng);
        let mut tape = Tape::new();
        let y = layer_norm(&mut tape, &x, &gamma, &beta).unwrap();
        for r in 0..4 {
            let row = &x.data()[r * 6..(r + 1) * 6];
            let mu: f64 = row.iter().sum::<f64>() / 6.0;
            let var: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 6.0;
            for i in 0..6 {
                let want = (row[i] - mu) / (var + LAYER_NORM_EPS).sqrt() * gamma.data()[i]
                    + beta.data()[i];
                assert!((y.data()[r * 6 + i] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn wrong_gamma_length_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::zeros(&[2, 3]);
        let gamma = Tensor::zeros(&[4]);
        let beta = Tensor::zeros(&[4]);
        assert!(layer_norm(&mut tape, &x, &gamma, &beta).is_err());
    }
}
