use std::sync::Arc;

use micseg_core::{Real, Tape, Tensor};

use crate::error::{ModelError, Result};

/// Row indices that walk a lattice block by block: for every coarse cell of
/// edge `b`, the `b³` member positions in (z, y, x) lexicographic order.
fn block_indices(d: usize, h: usize, w: usize, b: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(d * h * w);
    for cz in 0..d / b {
        for cy in 0..h / b {
            for cx in 0..w / b {
                for oz in 0..b {
                    for oy in 0..b {
                        for ox in 0..b {
                            idx.push(((cz * b + oz) * h + (cy * b + oy)) * w + (cx * b + ox));
                        }
                    }
                }
            }
        }
    }
    idx
}

fn require_divisible(extents: &[usize], multiple: usize, context: &'static str) -> Result<()> {
    for &e in extents {
        if e % multiple != 0 {
            return Err(ModelError::Divisibility {
                extent: e,
                multiple,
                context,
            });
        }
    }
    Ok(())
}

/// Projects each non-overlapping p³ block of a single-channel volume to a C
/// channel token. weight is [p³, C], bias [C].
pub fn patch_embed<P: Real>(
    tape: &mut Tape<P>,
    volume: &Tensor<P>,
    patch: usize,
    weight: &Tensor<P>,
    bias: &Tensor<P>,
) -> Result<Tensor<P>> {
    if volume.rank() != 3 {
        return Err(ModelError::GeometryMismatch(format!(
            "patch_embed expects a [D,H,W] volume, got {:?}",
            volume.shape()
        )));
    }
    let (d, h, w) = (volume.shape()[0], volume.shape()[1], volume.shape()[2]);
    require_divisible(&[d, h, w], patch, "patch_embed")?;
    let p3 = patch * patch * patch;
    if weight.shape().first() != Some(&p3) {
        return Err(ModelError::ChannelMismatch {
            expected: p3,
            actual: weight.shape().first().copied().unwrap_or(0),
        });
    }
    let c = weight.shape()[1];
    let rows = tape.reshape(volume, &[d * h * w, 1])?;
    let gathered = tape.gather_rows(&rows, Arc::new(block_indices(d, h, w, patch)))?;
    let blocks = tape.reshape(&gathered, &[d * h * w / p3, p3])?;
    let projected = tape.matmul(&blocks, weight)?;
    let biased = tape.add(&projected, bias)?;
    Ok(tape.reshape(&biased, &[d / patch, h / patch, w / patch, c])?)
}

/// Halves each lattice edge by concatenating 2³ neighborhoods (8C channels)
/// and projecting to 2C. weight is [8C, 2C], bias [2C].
pub fn patch_merge<P: Real>(
    tape: &mut Tape<P>,
    x: &Tensor<P>,
    weight: &Tensor<P>,
    bias: &Tensor<P>,
) -> Result<Tensor<P>> {
    if x.rank() != 4 {
        return Err(ModelError::GeometryMismatch(format!(
            "patch_merge expects [D,H,W,C], got {:?}",
            x.shape()
        )));
    }
    let (d, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    require_divisible(&[d, h, w], 2, "patch_merge")?;
    if weight.shape() != [8 * c, 2 * c] {
        return Err(ModelError::ChannelMismatch {
            expected: 8 * c,
            actual: weight.shape().first().copied().unwrap_or(0),
        });
    }
    let rows = tape.reshape(x, &[d * h * w, c])?;
    let gathered = tape.gather_rows(&rows, Arc::new(block_indices(d, h, w, 2)))?;
    let blocks = tape.reshape(&gathered, &[d * h * w / 8, 8 * c])?;
    let projected = tape.matmul(&blocks, weight)?;
    let biased = tape.add(&projected, bias)?;
    Ok(tape.reshape(&biased, &[d / 2, h / 2, w / 2, 2 * c])?)
}

/// Doubles each lattice edge: project C → 4C, then scatter each row's eight
/// (C/2)-channel slices onto the corresponding 2³ fine cells. weight is
/// [C, 4C], bias [4C].
pub fn patch_expand<P: Real>(
    tape: &mut Tape<P>,
    x: &Tensor<P>,
    weight: &Tensor<P>,
    bias: &Tensor<P>,
) -> Result<Tensor<P>> {
    if x.rank() != 4 {
        return Err(ModelError::GeometryMismatch(format!(
            "patch_expand expects [D,H,W,C], got {:?}",
            x.shape()
        )));
    }
    let (d, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if c % 2 != 0 {
        return Err(ModelError::Divisibility {
            extent: c,
            multiple: 2,
            context: "patch_expand channels",
        });
    }
    if weight.shape() != [c, 4 * c] {
        return Err(ModelError::ChannelMismatch {
            expected: c,
            actual: weight.shape().first().copied().unwrap_or(0),
        });
    }
    let n = d * h * w;
    let half = c / 2;
    let rows = tape.reshape(x, &[n, c])?;
    let projected = tape.matmul(&rows, weight)?;
    let biased = tape.add(&projected, bias)?;
    // Row r of the [8N, C/2] view is coarse cell r/8, sub-cell r%8 with the
    // sub-cells in (z, y, x) order; gather re-orders them into the fine lattice.
    let sub_rows = tape.reshape(&biased, &[8 * n, half])?;
    let (fd, fh, fw) = (2 * d, 2 * h, 2 * w);
    let mut idx = Vec::with_capacity(8 * n);
    for fz in 0..fd {
        for fy in 0..fh {
            for fx in 0..fw {
                let coarse = ((fz / 2) * h + fy / 2) * w + fx / 2;
                let sub = ((fz % 2) * 2 + fy % 2) * 2 + fx % 2;
                idx.push(coarse * 8 + sub);
            }
        }
    }
    let fine = tape.gather_rows(&sub_rows, Arc::new(idx))?;
    Ok(tape.reshape(&fine, &[fd, fh, fw, half])?)
}
