use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{GradSink, NodeId, Tape, TapeCtx, TapeOp};
use crate::tensor::Tensor;

/// `out[i,j] += sum_k a[i,k] * b[k,j]`, accumulating in ascending `k` so the
/// result is bitwise identical to the classic triple loop.
pub fn mm2d<P: Real>(a: &[P], b: &[P], m: usize, k: usize, n: usize, out: &mut [P]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &b_kj) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ik * b_kj;
            }
        }
    }
}

fn transpose2d<P: Real>(src: &[P], rows: usize, cols: usize) -> Vec<P> {
    let mut out = vec![P::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Batch geometry shared by forward and backward: which slice of each operand
/// a given output batch index reads, with broadcast dims pinned to slice 0.
struct BatchMap {
    batch_shape: Vec<usize>,
    lhs_broadcast: Vec<bool>,
    rhs_broadcast: Vec<bool>,
}

impl BatchMap {
    fn resolve(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Self> {
        let lb = &lhs[..lhs.len() - 2];
        let rb = &rhs[..rhs.len() - 2];
        let rank = lb.len().max(rb.len());
        let mut batch_shape = vec![1; rank];
        let mut lhs_broadcast = vec![true; rank];
        let mut rhs_broadcast = vec![true; rank];
        for i in 0..rank {
            let ld = if i < rank - lb.len() { 1 } else { lb[i - (rank - lb.len())] };
            let rd = if i < rank - rb.len() { 1 } else { rb[i - (rank - rb.len())] };
            if ld != rd && ld != 1 && rd != 1 {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: lhs.to_vec(),
                    rhs: rhs.to_vec(),
                });
            }
            batch_shape[i] = ld.max(rd);
            lhs_broadcast[i] = ld == 1 && batch_shape[i] > 1;
            rhs_broadcast[i] = rd == 1 && batch_shape[i] > 1;
        }
        Ok(BatchMap {
            batch_shape,
            lhs_broadcast,
            rhs_broadcast,
        })
    }

    fn batches(&self) -> usize {
        self.batch_shape.iter().product()
    }

    /// (lhs batch index, rhs batch index) for an output batch index.
    fn source(&self, mut flat: usize) -> (usize, usize) {
        let mut idx = vec![0usize; self.batch_shape.len()];
        for i in (0..self.batch_shape.len()).rev() {
            idx[i] = flat % self.batch_shape[i];
            flat /= self.batch_shape[i];
        }
        let mut l = 0usize;
        let mut r = 0usize;
        for i in 0..self.batch_shape.len() {
            l = l * (if self.lhs_broadcast[i] { 1 } else { self.batch_shape[i] })
                + (if self.lhs_broadcast[i] { 0 } else { idx[i] });
            r = r * (if self.rhs_broadcast[i] { 1 } else { self.batch_shape[i] })
                + (if self.rhs_broadcast[i] { 0 } else { idx[i] });
        }
        (l, r)
    }
}

struct MatmulOp {
    lhs: NodeId,
    rhs: NodeId,
}

impl<P: Real> TapeOp<P> for MatmulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.lhs, self.rhs]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let a = ctx.value(self.lhs);
        let b = ctx.value(self.rhs);
        let (ash, bsh) = (a.shape(), b.shape());
        let m = ash[ash.len() - 2];
        let k = ash[ash.len() - 1];
        let n = bsh[bsh.len() - 1];
        let map = BatchMap::resolve("matmul", ash, bsh).expect("validated in forward");

        let ga = sink.acc(self.lhs, a.numel());
        let g = grad_out.data();
        for ob in 0..map.batches() {
            let (la, _) = map.source(ob);
            let b_slice = {
                let (_, rb) = map.source(ob);
                &b.data()[rb * k * n..(rb + 1) * k * n]
            };
            // dA = g · Bᵀ
            let bt = transpose2d(b_slice, k, n);
            mm2d(
                &g[ob * m * n..(ob + 1) * m * n],
                &bt,
                m,
                n,
                k,
                &mut ga[la * m * k..(la + 1) * m * k],
            );
        }

        let gb = sink.acc(self.rhs, b.numel());
        for ob in 0..map.batches() {
            let (la, rb) = map.source(ob);
            // dB = Aᵀ · g
            let at = transpose2d(&a.data()[la * m * k..(la + 1) * m * k], m, k);
            mm2d(
                &at,
                &g[ob * m * n..(ob + 1) * m * n],
                k,
                m,
                n,
                &mut gb[rb * k * n..(rb + 1) * k * n],
            );
        }
    }
}

impl<P: Real> Tape<P> {
    /// Batched matrix product over the trailing two axes. Leading axes must
    /// agree or broadcast from 1.
    pub fn matmul(&mut self, a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
        let (ash, bsh) = (a.shape(), b.shape());
        if ash.len() < 2 || bsh.len() < 2 || ash[ash.len() - 1] != bsh[bsh.len() - 2] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ash.to_vec(),
                rhs: bsh.to_vec(),
            });
        }
        let map = BatchMap::resolve("matmul", ash, bsh)?;
        let m = ash[ash.len() - 2];
        let k = ash[ash.len() - 1];
        let n = bsh[bsh.len() - 1];

        let mut out_shape = map.batch_shape.clone();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![P::ZERO; map.batches() * m * n];
        for ob in 0..map.batches() {
            let (la, rb) = map.source(ob);
            mm2d(
                &a.data()[la * m * k..(la + 1) * m * k],
                &b.data()[rb * k * n..(rb + 1) * k * n],
                m,
                k,
                n,
                &mut out[ob * m * n..(ob + 1) * m * n],
            );
        }

        let lhs = self.ensure(a);
        let rhs = self.ensure(b);
        let value = Tensor::from_vec(&out_shape, out)?;
        Ok(self.record(Box::new(MatmulOp { lhs, rhs }), value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    fn eye(n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    #[test]
    fn identity_is_identity() {
        let mut tape = Tape::new();
        let a = t(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = tape.matmul(&a, &eye(2)).unwrap();
        assert_eq!(y.data(), a.data());
    }

    #[test]
    fn row_times_column() {
        let mut tape = Tape::new();
        let a = t(&[1, 2], vec![1.0, 2.0]);
        let b = t(&[2, 1], vec![3.0, 4.0]);
        let y = tape.matmul(&a, &b).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.data(), &[11.0]);
    }

    #[test]
    fn matches_triple_loop_oracle() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a = Tensor::<f64>::rand_uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let y = tape.matmul(&a, &b).unwrap();

        let mut oracle = vec![0.0; 5 * 3];
        for i in 0..5 {
            for j in 0..3 {
                for kk in 0..4 {
                    oracle[i * 3 + j] += a.data()[i * 4 + kk] * b.data()[kk * 3 + j];
                }
            }
        }
        for (got, want) in y.data().iter().zip(oracle.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_twice_is_bitwise_stable() {
        let mut tape = Tape::new();
        let x = t(&[3, 3], vec![3.0, -1.0, 4.0, 1.0, -5.0, 9.0, 2.0, 6.0, -5.0]);
        let y = tape.matmul(&x, &eye(3)).unwrap();
        let z = tape.matmul(&y, &eye(3)).unwrap();
        assert!(z.bitwise_eq(&x));
    }

    #[test]
    fn inner_extent_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = tape.matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn batch_broadcast_from_one() {
        let mut tape = Tape::<f64>::new();
        let a = Tensor::from_fn(&[3, 2, 2], |i| i as f64);
        let b = eye(2).reshaped(&[1, 2, 2]).unwrap();
        let y = tape.matmul(&a, &b).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2]);
        assert_eq!(y.data(), a.data());
    }

    #[test]
    fn conflicting_batch_extents_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = Tensor::zeros(&[3, 2, 2]);
        let b = Tensor::zeros(&[2, 2, 2]);
        assert!(tape.matmul(&a, &b).is_err());
    }
}
