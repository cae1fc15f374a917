use micseg_core::{GradSink, NodeId, Real, Tape, TapeCtx, TapeOp, Tensor};

use crate::error::{ModelError, Result};
use crate::nn::linear::linear;

/// Depthwise k×k×k weights [C, k, k, k], pointwise mixing [C, C_out], bias [C_out].
#[derive(Debug)]
pub struct ConvKernel3D<P: Real> {
    pub depthwise: Tensor<P>,
    pub pointwise: Tensor<P>,
    pub bias: Tensor<P>,
}

impl<P: Real> ConvKernel3D<P> {
    pub fn new(depthwise: Tensor<P>, pointwise: Tensor<P>, bias: Tensor<P>) -> Result<Self> {
        if depthwise.rank() != 4 {
            return Err(ModelError::Config(format!(
                "depthwise weights must be rank 4, got {:?}",
                depthwise.shape()
            )));
        }
        let k = depthwise.shape()[1];
        if depthwise.shape()[2] != k || depthwise.shape()[3] != k {
            return Err(ModelError::Config(format!(
                "depthwise kernel must be cubic, got {:?}",
                depthwise.shape()
            )));
        }
        if k % 2 == 0 {
            return Err(ModelError::EvenKernel(k));
        }
        if pointwise.rank() != 2 || pointwise.shape()[0] != depthwise.shape()[0] {
            return Err(ModelError::ChannelMismatch {
                expected: depthwise.shape()[0],
                actual: pointwise.shape().first().copied().unwrap_or(0),
            });
        }
        if bias.shape() != [pointwise.shape()[1]] {
            return Err(ModelError::ChannelMismatch {
                expected: pointwise.shape()[1],
                actual: bias.numel(),
            });
        }
        Ok(Self {
            depthwise,
            pointwise,
            bias,
        })
    }
}

/// One filter per channel, zero padding of (k−1)/2, stride 1. Fused into one
/// tape record because both gradients are correlations over the same
/// neighborhood and the generic ops would materialize an unfolded copy.
struct DwConvOp {
    input: NodeId,
    weights: NodeId,
}

fn dw_forward<P: Real>(x: &Tensor<P>, w: &Tensor<P>, out: &mut [P]) {
    let (d, h, wd, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let k = w.shape()[1];
    let r = (k - 1) / 2;
    let xd = x.data();
    let wdta = w.data();
    for z in 0..d {
        for y in 0..h {
            for xx in 0..wd {
                for ch in 0..c {
                    let mut acc = P::ZERO;
                    for kz in 0..k {
                        let sz = z as isize + kz as isize - r as isize;
                        if sz < 0 || sz >= d as isize {
                            continue;
                        }
                        for ky in 0..k {
                            let sy = y as isize + ky as isize - r as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let sx = xx as isize + kx as isize - r as isize;
                                if sx < 0 || sx >= wd as isize {
                                    continue;
                                }
                                let src = ((sz as usize * h + sy as usize) * wd + sx as usize) * c
                                    + ch;
                                let wi = ((ch * k + kz) * k + ky) * k + kx;
                                acc = acc + xd[src] * wdta[wi];
                            }
                        }
                    }
                    out[((z * h + y) * wd + xx) * c + ch] = acc;
                }
            }
        }
    }
}

impl<P: Real> TapeOp<P> for DwConvOp {
    fn name(&self) -> &'static str {
        "depthwise_conv3d"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.input, self.weights]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let x = ctx.value(self.input);
        let w = ctx.value(self.weights);
        let (d, h, wd, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let k = w.shape()[1];
        let r = (k - 1) / 2;
        let g = grad_out.data();
        {
            // d/dx: correlate the output gradient with the flipped kernel.
            let gx = sink.acc(self.input, x.numel());
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        for ch in 0..c {
                            let mut acc = P::ZERO;
                            for kz in 0..k {
                                let oz = z as isize - (kz as isize - r as isize);
                                if oz < 0 || oz >= d as isize {
                                    continue;
                                }
                                for ky in 0..k {
                                    let oy = y as isize - (ky as isize - r as isize);
                                    if oy < 0 || oy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ox = xx as isize - (kx as isize - r as isize);
                                        if ox < 0 || ox >= wd as isize {
                                            continue;
                                        }
                                        let oi = ((oz as usize * h + oy as usize) * wd
                                            + ox as usize)
                                            * c
                                            + ch;
                                        let wi = ((ch * k + kz) * k + ky) * k + kx;
                                        acc = acc + g[oi] * w.data()[wi];
                                    }
                                }
                            }
                            let xi = ((z * h + y) * wd + xx) * c + ch;
                            gx[xi] = gx[xi] + acc;
                        }
                    }
                }
            }
        }
        {
            let gw = sink.acc(self.weights, w.numel());
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        for ch in 0..c {
                            let go = g[((z * h + y) * wd + xx) * c + ch];
                            for kz in 0..k {
                                let sz = z as isize + kz as isize - r as isize;
                                if sz < 0 || sz >= d as isize {
                                    continue;
                                }
                                for ky in 0..k {
                                    let sy = y as isize + ky as isize - r as isize;
                                    if sy < 0 || sy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let sx = xx as isize + kx as isize - r as isize;
                                        if sx < 0 || sx >= wd as isize {
                                            continue;
                                        }
                                        let src = ((sz as usize * h + sy as usize) * wd
                                            + sx as usize)
                                            * c
                                            + ch;
                                        let wi = ((ch * k + kz) * k + ky) * k + kx;
                                        gw[wi] = gw[wi] + x.data()[src] * go;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn depthwise_conv3d<P: Real>(
    tape: &mut Tape<P>,
    x: &Tensor<P>,
    weights: &Tensor<P>,
) -> Result<Tensor<P>> {
    if x.rank() != 4 {
        return Err(ModelError::GeometryMismatch(format!(
            "depthwise_conv3d expects [D,H,W,C] input, got {:?}",
            x.shape()
        )));
    }
    let c = x.shape()[3];
    if weights.rank() != 4 || weights.shape()[0] != c {
        return Err(ModelError::ChannelMismatch {
            expected: c,
            actual: weights.shape().first().copied().unwrap_or(0),
        });
    }
    let k = weights.shape()[1];
    if k % 2 == 0 {
        return Err(ModelError::EvenKernel(k));
    }
    let mut out = vec![P::ZERO; x.numel()];
    dw_forward(x, weights, &mut out);
    let input = tape.ensure(x);
    let wid = tape.ensure(weights);
    let value = Tensor::from_vec(x.shape(), out)?;
    Ok(tape.record(
        Box::new(DwConvOp {
            input,
            weights: wid,
        }),
        value,
    ))
}

/// Depthwise spatial filtering followed by a pointwise channel mix with bias.
pub fn depthwise_separable_conv3d<P: Real>(
    tape: &mut Tape<P>,
    x: &Tensor<P>,
    kernel: &ConvKernel3D<P>,
) -> Result<Tensor<P>> {
    let mid = depthwise_conv3d(tape, x, &kernel.depthwise)?;
    linear(tape, &mid, &kernel.pointwise, &kernel.bias)
}
