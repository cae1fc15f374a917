use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::{GradSink, NodeId, Tape, TapeCtx, TapeOp};
use crate::tensor::{strides, Tensor};

struct ReshapeOp {
    input: NodeId,
}

impl<P: Real> TapeOp<P> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.input]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let n = ctx.value(self.input).numel();
        let gx = sink.acc(self.input, n);
        for (o, &gi) in gx.iter_mut().zip(grad_out.data().iter()) {
            *o = *o + gi;
        }
    }
}

struct TransposeOp {
    perm: Vec<usize>,
    input: NodeId,
}

fn permute<P: Real>(x: &Tensor<P>, perm: &[usize]) -> Vec<P> {
    let in_shape = x.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&a| in_shape[a]).collect();
    let out_strides = strides(&out_shape);
    let mut out = vec![P::ZERO; x.numel()];
    let d = x.data();
    for (flat, &v) in d.iter().enumerate() {
        // Decompose the input index, re-linearize under the permuted layout.
        let mut dst = 0usize;
        for (j, &axis) in perm.iter().enumerate() {
            let coord = flat / in_strides[axis] % in_shape[axis];
            dst += coord * out_strides[j];
        }
        out[dst] = v;
    }
    out
}

impl<P: Real> TapeOp<P> for TransposeOp {
    fn name(&self) -> &'static str {
        "transpose"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.input]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let mut inverse = vec![0usize; self.perm.len()];
        for (j, &axis) in self.perm.iter().enumerate() {
            inverse[axis] = j;
        }
        let back = permute(grad_out, &inverse);
        let n = ctx.value(self.input).numel();
        let gx = sink.acc(self.input, n);
        for (o, gi) in gx.iter_mut().zip(back.into_iter()) {
            *o = *o + gi;
        }
    }
}

/// Selects rows of a `[rows, cols]` view by index, where `cols` is everything
/// after the first axis. Indices may repeat; the backward pass scatter-adds.
struct GatherRowsOp {
    indices: Arc<Vec<usize>>,
    input: NodeId,
}

impl<P: Real> TapeOp<P> for GatherRowsOp {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.input]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let x = ctx.value(self.input);
        let cols = x.numel() / x.shape()[0];
        let g = grad_out.data();
        let gx = sink.acc(self.input, x.numel());
        for (i, &src) in self.indices.iter().enumerate() {
            let dst = &mut gx[src * cols..(src + 1) * cols];
            let row = &g[i * cols..(i + 1) * cols];
            for (o, &gi) in dst.iter_mut().zip(row.iter()) {
                *o = *o + gi;
            }
        }
    }
}

struct ConcatLastOp {
    lhs: NodeId,
    rhs: NodeId,
}

impl<P: Real> TapeOp<P> for ConcatLastOp {
    fn name(&self) -> &'static str {
        "concat_last"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.lhs, self.rhs]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let a = ctx.value(self.lhs);
        let b = ctx.value(self.rhs);
        let ca = *a.shape().last().unwrap();
        let cb = *b.shape().last().unwrap();
        let g = grad_out.data();
        {
            let ga = sink.acc(self.lhs, a.numel());
            for r in 0..a.numel() / ca {
                let src = &g[r * (ca + cb)..r * (ca + cb) + ca];
                let dst = &mut ga[r * ca..(r + 1) * ca];
                for (o, &gi) in dst.iter_mut().zip(src.iter()) {
                    *o = *o + gi;
                }
            }
        }
        {
            let gb = sink.acc(self.rhs, b.numel());
            for r in 0..b.numel() / cb {
                let src = &g[r * (ca + cb) + ca..(r + 1) * (ca + cb)];
                let dst = &mut gb[r * cb..(r + 1) * cb];
                for (o, &gi) in dst.iter_mut().zip(src.iter()) {
                    *o = *o + gi;
                }
            }
        }
    }
}

impl<P: Real> Tape<P> {
    /// Same data, new shape; the element count must match.
    pub fn reshape(&mut self, x: &Tensor<P>, shape: &[usize]) -> Result<Tensor<P>> {
        let value = x.reshaped(shape)?;
        let input = self.ensure(x);
        Ok(self.record(Box::new(ReshapeOp { input }), value))
    }

    /// Reorders axes so output axis `j` is input axis `perm[j]`.
    pub fn transpose(&mut self, x: &Tensor<P>, perm: &[usize]) -> Result<Tensor<P>> {
        if perm.len() != x.rank() {
            return Err(TensorError::InvalidAxis {
                axis: perm.len(),
                shape: x.shape().to_vec(),
            });
        }
        let mut seen = vec![false; perm.len()];
        for &a in perm {
            if a >= perm.len() || seen[a] {
                return Err(TensorError::InvalidAxis {
                    axis: a,
                    shape: x.shape().to_vec(),
                });
            }
            seen[a] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&a| x.shape()[a]).collect();
        let value = Tensor::from_vec(&out_shape, permute(x, perm))?;
        let input = self.ensure(x);
        Ok(self.record(
            Box::new(TransposeOp {
                perm: perm.to_vec(),
                input,
            }),
            value,
        ))
    }

    /// Gathers rows of `x` (first axis) in the order given by `indices`.
    pub fn gather_rows(&mut self, x: &Tensor<P>, indices: Arc<Vec<usize>>) -> Result<Tensor<P>> {
        if x.rank() == 0 {
            return Err(TensorError::InvalidAxis {
                axis: 0,
                shape: vec![],
            });
        }
        let rows = x.shape()[0];
        let cols = x.numel() / rows;
        for &i in indices.iter() {
            if i >= rows {
                return Err(TensorError::domain(
                    "gather_rows",
                    format!("index {i} out of range for {rows} rows"),
                ));
            }
        }
        let mut out = vec![P::ZERO; indices.len() * cols];
        let d = x.data();
        for (r, &src) in indices.iter().enumerate() {
            out[r * cols..(r + 1) * cols].copy_from_slice(&d[src * cols..(src + 1) * cols]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&x.shape()[1..]);
        let value = Tensor::from_vec(&shape, out)?;
        let input = self.ensure(x);
        Ok(self.record(Box::new(GatherRowsOp { indices, input }), value))
    }

    /// Concatenates along the last axis; all other extents must match.
    pub fn concat_last(&mut self, a: &Tensor<P>, b: &Tensor<P>) -> Result<Tensor<P>> {
        if a.rank() == 0 || a.rank() != b.rank() || a.shape()[..a.rank() - 1] != b.shape()[..b.rank() - 1] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_last",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let ca = *a.shape().last().unwrap();
        let cb = *b.shape().last().unwrap();
        let rows = a.numel() / ca;
        let mut out = vec![P::ZERO; rows * (ca + cb)];
        for r in 0..rows {
            out[r * (ca + cb)..r * (ca + cb) + ca].copy_from_slice(&a.data()[r * ca..(r + 1) * ca]);
            out[r * (ca + cb) + ca..(r + 1) * (ca + cb)].copy_from_slice(&b.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let value = Tensor::from_vec(&shape, out)?;
        let lhs = self.ensure(a);
        let rhs = self.ensure(b);
        Ok(self.record(Box::new(ConcatLastOp { lhs, rhs }), value))
    }
}
