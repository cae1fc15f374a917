use std::sync::Arc;

use micseg_core::{Real, Tape, Tensor};

use crate::error::{ModelError, Result};

/// Non-overlapping w³ windows over a token lattice, [num_windows, w³, C].
/// Shifted partitions roll the lattice cyclically first; the reverse applies
/// the inverse roll, so partition∘reverse is exact in both directions.
#[derive(Debug)]
pub struct WindowSet<P: Real> {
    tensor: Tensor<P>,
    dims: [usize; 3],
    window: usize,
    shift: usize,
}

impl<P: Real> WindowSet<P> {
    pub fn tensor(&self) -> &Tensor<P> {
        &self.tensor
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window.pow(3)
    }

    pub fn num_windows(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn same_geometry(&self, other: &WindowSet<P>) -> bool {
        self.dims == other.dims
            && self.window == other.window
            && self.shift == other.shift
            && self.channels() == other.channels()
    }

    /// Same window geometry around a replacement tensor (attention outputs).
    pub fn with_tensor(&self, tensor: Tensor<P>) -> Result<WindowSet<P>> {
        if tensor.shape() != self.tensor.shape() {
            return Err(ModelError::GeometryMismatch(format!(
                "window tensor {:?} does not match {:?}",
                tensor.shape(),
                self.tensor.shape()
            )));
        }
        Ok(WindowSet {
            tensor,
            dims: self.dims,
            window: self.window,
            shift: self.shift,
        })
    }
}

fn check_window(dims: [usize; 3], window: usize, shift: usize) -> Result<()> {
    for &e in &dims {
        if window == 0 || e % window != 0 {
            return Err(ModelError::Divisibility {
                extent: e,
                multiple: window,
                context: "window partition",
            });
        }
    }
    if shift != 0 && shift != window / 2 {
        return Err(ModelError::GeometryMismatch(format!(
            "shift {shift} must be 0 or {}",
            window / 2
        )));
    }
    Ok(())
}

/// Flat lattice index each window row reads from: window-major order, with a
/// cyclic roll of `shift` folded into the source coordinate.
fn partition_indices(dims: [usize; 3], window: usize, shift: usize) -> Vec<usize> {
    let [d, h, w] = dims;
    let (nd, nh, nw) = (d / window, h / window, w / window);
    let mut idx = Vec::with_capacity(d * h * w);
    for wz in 0..nd {
        for wy in 0..nh {
            for wx in 0..nw {
                for lz in 0..window {
                    for ly in 0..window {
                        for lx in 0..window {
                            let sz = (wz * window + lz + shift) % d;
                            let sy = (wy * window + ly + shift) % h;
                            let sx = (wx * window + lx + shift) % w;
                            idx.push((sz * h + sy) * w + sx);
                        }
                    }
                }
            }
        }
    }
    idx
}

pub fn window_partition<P: Real>(
    tape: &mut Tape<P>,
    x: &Tensor<P>,
    window: usize,
    shift: usize,
) -> Result<WindowSet<P>> {
    if x.rank() != 4 {
        return Err(ModelError::GeometryMismatch(format!(
            "window_partition expects [D,H,W,C], got {:?}",
            x.shape()
        )));
    }
    let dims = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let c = x.shape()[3];
    check_window(dims, window, shift)?;
    let n = dims[0] * dims[1] * dims[2];
    let rows = tape.reshape(x, &[n, c])?;
    let gathered = tape.gather_rows(&rows, Arc::new(partition_indices(dims, window, shift)))?;
    let w3 = window.pow(3);
    let tensor = tape.reshape(&gathered, &[n / w3, w3, c])?;
    Ok(WindowSet {
        tensor,
        dims,
        window,
        shift,
    })
}

pub fn window_reverse<P: Real>(tape: &mut Tape<P>, ws: &WindowSet<P>) -> Result<Tensor<P>> {
    let [d, h, w] = ws.dims;
    let n = d * h * w;
    let w3 = ws.tokens_per_window();
    if ws.num_windows() * w3 != n {
        return Err(ModelError::GeometryMismatch(format!(
            "{} windows of {} tokens cannot tile a {n}-token lattice",
            ws.num_windows(),
            w3
        )));
    }
    check_window(ws.dims, ws.window, ws.shift)?;
    let forward = partition_indices(ws.dims, ws.window, ws.shift);
    let mut inverse = vec![0usize; n];
    for (row, &src) in forward.iter().enumerate() {
        inverse[src] = row;
    }
    let c = ws.channels();
    let rows = tape.reshape(&ws.tensor, &[n, c])?;
    let restored = tape.gather_rows(&rows, Arc::new(inverse))?;
    Ok(tape.reshape(&restored, &[d, h, w, c])?)
}
