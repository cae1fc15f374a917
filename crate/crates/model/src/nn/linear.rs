use micseg_core::{Real, Tape, Tensor};

use crate::error::Result;

/// Affine map along the last axis: `x · weight + bias`, with `weight` of
/// shape `[in, out]` and `bias` of shape `[out]`. Inputs of any rank ≥ 1 are
/// flattened to rows for the product and restored afterwards.
pub fn linear<P: Real>(
    tape: &mut Tape<P>,
    x: &Tensor<P>,
    weight: &Tensor<P>,
    bias: &Tensor<P>,
) -> Result<Tensor<P>> {
    let in_dim = weight.shape()[0];
    let out_dim = weight.shape()[1];
    let rows = x.numel() / in_dim;
    let flat = tape.reshape(x, &[rows, in_dim])?;
    let prod = tape.matmul(&flat, weight)?;
    let with_bias = tape.add(&prod, bias)?;
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = out_dim;
    Ok(tape.reshape(&with_bias, &out_shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(&[3]);
        let y = linear(&mut tape, &x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut tape = Tape::new();
        let x = Tensor::zeros(&[2, 2]);
        let w = Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = linear(&mut tape, &x, &w, &b).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn matches_matmul_plus_add() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[5], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let y = linear(&mut tape, &x, &w, &b).unwrap();
        let prod = tape.matmul(&x, &w).unwrap();
        let want = tape.add(&prod, &b).unwrap();
        for (u, v) in y.data().iter().zip(want.data().iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
