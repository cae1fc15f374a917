use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{GradSink, NodeId, Tape, TapeCtx, TapeOp};
use crate::tensor::Tensor;

struct SoftmaxOp {
    input: NodeId,
}

impl<P: Real> TapeOp<P> for SoftmaxOp {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.input]
    }

    fn backward(&self, _ctx: &TapeCtx<'_, P>, out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        // dx = y * (g - sum_j g_j y_j), rebuilt from the saved output.
        let shape = out.shape();
        let row = shape[shape.len() - 1];
        let y = out.data();
        let g = grad_out.data();
        let gx = sink.acc(self.input, y.len());
        for r in 0..y.len() / row {
            let ys = &y[r * row..(r + 1) * row];
            let gs = &g[r * row..(r + 1) * row];
            let mut dot = P::ZERO;
            for (gi, yi) in gs.iter().zip(ys.iter()) {
                dot = dot + *gi * *yi;
            }
            for i in 0..row {
                gx[r * row + i] = gx[r * row + i] + ys[i] * (gs[i] - dot);
            }
        }
    }
}

/// Row softmax without a tape, shared by the op and by eval-time argmax paths.
pub fn softmax_rows<P: Real>(x: &[P], row: usize, out: &mut [P]) {
    debug_assert_eq!(x.len(), out.len());
    debug_assert_eq!(x.len() % row, 0);
    for r in 0..x.len() / row {
        let xs = &x[r * row..(r + 1) * row];
        let os = &mut out[r * row..(r + 1) * row];
        let mut hi = xs[0];
        for &v in &xs[1..] {
            hi = hi.maximum(v);
        }
        let mut denom = P::ZERO;
        for (o, &v) in os.iter_mut().zip(xs.iter()) {
            *o = (v - hi).exp();
            denom = denom + *o;
        }
        for o in os.iter_mut() {
            *o = *o / denom;
        }
    }
}

impl<P: Real> Tape<P> {
    /// Softmax over the last axis. Rows are shifted by their max before
    /// exponentiation so large logits do not overflow.
    pub fn softmax(&mut self, x: &Tensor<P>) -> Result<Tensor<P>> {
        if x.rank() == 0 {
            return Err(TensorError::InvalidAxis {
                axis: 0,
                shape: x.shape().to_vec(),
            });
        }
        let row = x.shape()[x.rank() - 1];
        let mut out = vec![P::ZERO; x.numel()];
        softmax_rows(x.data(), row, &mut out);
        let input = self.ensure(x);
        let value = Tensor::from_vec(x.shape(), out)?;
        Ok(self.record(Box::new(SoftmaxOp { input }), value))
    }
}
