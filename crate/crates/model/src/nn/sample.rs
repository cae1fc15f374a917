use micseg_core::{GradSink, NodeId, Real, Tape, TapeCtx, TapeOp, Tensor};

use crate::error::{ModelError, Result};

/// Linear blend that returns `a` untouched when t is exactly zero, so sampling
/// at integer coordinates reproduces the stored values bit for bit.
#[inline]
fn lerp<P: Real>(a: P, b: P, t: P) -> P {
    if t == P::ZERO {
        a
    } else {
        a + t * (b - a)
    }
}

#[derive(Clone, Copy)]
struct Cell {
    lo: [usize; 3],
    hi: [usize; 3],
    frac: [f64; 3],
    clamped: [bool; 3],
}

/// Resolves one coordinate triple (x, y, z order, x along the fastest axis)
/// into its surrounding cell. Coordinates are clamped to [0, extent−1].
fn resolve_cell<P: Real>(coord: &[P], extents: [usize; 3]) -> Cell {
    let mut cell = Cell {
        lo: [0; 3],
        hi: [0; 3],
        frac: [0.0; 3],
        clamped: [false; 3],
    };
    // coord order is (x, y, z); extents arrive as (D, H, W).
    for axis in 0..3 {
        let ext = extents[2 - axis];
        let raw = coord[axis].to_f64();
        let max = (ext - 1) as f64;
        let c = raw.clamp(0.0, max);
        cell.clamped[axis] = raw < 0.0 || raw > max;
        let lo = c.floor();
        cell.lo[axis] = lo as usize;
        cell.hi[axis] = (cell.lo[axis] + 1).min(ext - 1);
        cell.frac[axis] = c - lo;
    }
    cell
}

fn corner_index(cell: &Cell, pick: [bool; 3], h: usize, w: usize, c: usize, ch: usize) -> usize {
    let ix = if pick[0] { cell.hi[0] } else { cell.lo[0] };
    let iy = if pick[1] { cell.hi[1] } else { cell.lo[1] };
    let iz = if pick[2] { cell.hi[2] } else { cell.lo[2] };
    ((iz * h + iy) * w + ix) * c + ch
}

struct TrilinearOp {
    input: NodeId,
    coords: NodeId,
}

impl<P: Real> TapeOp<P> for TrilinearOp {
    fn name(&self) -> &'static str {
        "trilinear_sample"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.input, self.coords]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let x = ctx.value(self.input);
        let coords = ctx.value(self.coords);
        let (d, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let positions = coords.numel() / 3;
        let g = grad_out.data();
        let xd = x.data();

        {
            let gx = sink.acc(self.input, x.numel());
            for p in 0..positions {
                let cell = resolve_cell(&coords.data()[p * 3..p * 3 + 3], [d, h, w]);
                let (fx, fy, fz) = (cell.frac[0], cell.frac[1], cell.frac[2]);
                for ch in 0..c {
                    let go = g[p * c + ch].to_f64();
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let weight = (if dx == 1 { fx } else { 1.0 - fx })
                                    * (if dy == 1 { fy } else { 1.0 - fy })
                                    * (if dz == 1 { fz } else { 1.0 - fz });
                                if weight == 0.0 {
                                    continue;
                                }
                                let idx = corner_index(
                                    &cell,
                                    [dx == 1, dy == 1, dz == 1],
                                    h,
                                    w,
                                    c,
                                    ch,
                                );
                                gx[idx] = gx[idx] + P::from_f64(go * weight);
                            }
                        }
                    }
                }
            }
        }
        {
            let gc = sink.acc(self.coords, coords.numel());
            for p in 0..positions {
                let cell = resolve_cell(&coords.data()[p * 3..p * 3 + 3], [d, h, w]);
                let (fx, fy, fz) = (cell.frac[0], cell.frac[1], cell.frac[2]);
                let corner = |pick: [bool; 3], ch: usize| -> f64 {
                    xd[corner_index(&cell, pick, h, w, c, ch)].to_f64()
                };
                let mut acc = [0.0f64; 3];
                for ch in 0..c {
                    let go = g[p * c + ch].to_f64();
                    if go == 0.0 {
                        continue;
                    }
                    let v = |dx: bool, dy: bool, dz: bool| corner([dx, dy, dz], ch);
                    let lx = |dy: bool, dz: bool| {
                        (1.0 - fx) * v(false, dy, dz) + fx * v(true, dy, dz)
                    };
                    // d/dfx collapses y and z first, and so on by symmetry.
                    let dfx = (1.0 - fz)
                        * ((1.0 - fy) * (v(true, false, false) - v(false, false, false))
                            + fy * (v(true, true, false) - v(false, true, false)))
                        + fz * ((1.0 - fy) * (v(true, false, true) - v(false, false, true))
                            + fy * (v(true, true, true) - v(false, true, true)));
                    let dfy = (1.0 - fz) * (lx(true, false) - lx(false, false))
                        + fz * (lx(true, true) - lx(false, true));
                    let dfz = ((1.0 - fy) * lx(false, true) + fy * lx(true, true))
                        - ((1.0 - fy) * lx(false, false) + fy * lx(true, false));
                    acc[0] += go * dfx;
                    acc[1] += go * dfy;
                    acc[2] += go * dfz;
                }
                for axis in 0..3 {
                    if cell.clamped[axis] {
                        continue;
                    }
                    let idx = p * 3 + axis;
                    gc[idx] = gc[idx] + P::from_f64(acc[axis]);
                }
            }
        }
    }
}

/// Samples `x` at continuous voxel coordinates. `coords[..., 0..3]` holds
/// (x, y, z) positions in source index space; out-of-range positions clamp to
/// the border.
pub fn trilinear_sample<P: Real>(
    tape: &mut Tape<P>,
    x: &Tensor<P>,
    coords: &Tensor<P>,
) -> Result<Tensor<P>> {
    if x.rank() != 4 {
        return Err(ModelError::GeometryMismatch(format!(
            "trilinear_sample expects [D,H,W,C] input, got {:?}",
            x.shape()
        )));
    }
    let (d, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if coords.shape() != [d, h, w, 3] {
        return Err(ModelError::GeometryMismatch(format!(
            "coords shape {:?} does not match grid [{d},{h},{w},3]",
            coords.shape()
        )));
    }
    if let Some(bad) = coords.data().iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteCoords(bad));
    }

    let mut out = vec![P::ZERO; x.numel()];
    let xd = x.data();
    for p in 0..d * h * w {
        let cell = resolve_cell(&coords.data()[p * 3..p * 3 + 3], [d, h, w]);
        let fx = P::from_f64(cell.frac[0]);
        let fy = P::from_f64(cell.frac[1]);
        let fz = P::from_f64(cell.frac[2]);
        for ch in 0..c {
            let v = |pick: [bool; 3]| xd[corner_index(&cell, pick, h, w, c, ch)];
            let front = lerp(
                lerp(v([false, false, false]), v([true, false, false]), fx),
                lerp(v([false, true, false]), v([true, true, false]), fx),
                fy,
            );
            let back = lerp(
                lerp(v([false, false, true]), v([true, false, true]), fx),
                lerp(v([false, true, true]), v([true, true, true]), fx),
                fy,
            );
            out[p * c + ch] = lerp(front, back, fz);
        }
    }
    let input = tape.ensure(x);
    let coords_id = tape.ensure(coords);
    let value = Tensor::from_vec(x.shape(), out)?;
    Ok(tape.record(
        Box::new(TrilinearOp {
            input,
            coords: coords_id,
        }),
        value,
    ))
}

/// Coordinate grid where every position names itself, [D,H,W,3] in (x, y, z)
/// order. Displacement fields add onto this.
pub fn identity_coords<P: Real>(d: usize, h: usize, w: usize) -> Tensor<P> {
    let mut data = vec![P::ZERO; d * h * w * 3];
    let mut i = 0;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                data[i] = P::from_f64(x as f64);
                data[i + 1] = P::from_f64(y as f64);
                data[i + 2] = P::from_f64(z as f64);
                i += 3;
            }
        }
    }
    Tensor::from_vec(&[d, h, w, 3], data).expect("consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_coordinates_reproduce_input_bitwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::rand_uniform(&[3, 4, 5, 2], -2.0, 2.0, &mut rng);
        let coords = identity_coords(3, 4, 5);
        let mut tape = Tape::new();
        let y = trilinear_sample(&mut tape, &x, &coords).unwrap();
        assert!(y.bitwise_eq(&x));
    }

    #[test]
    fn midpoint_averages_neighbors() {
        let x = Tensor::from_vec(&[1, 1, 2, 1], vec![1.0, 3.0]).unwrap();
        let coords = Tensor::from_vec(&[1, 1, 2, 3], vec![0.5, 0.0, 0.0, 0.5, 0.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let y = trilinear_sample(&mut tape, &x, &coords).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0]);
    }

    #[test]
    fn out_of_range_clamps_to_border() {
        let x = Tensor::from_vec(&[1, 1, 3, 1], vec![4.0, 5.0, 6.0]).unwrap();
        let coords =
            Tensor::from_vec(&[1, 1, 3, 3], vec![-7.0, 0.0, 0.0, 9.0, 0.0, 0.0, 2.0, 0.0, 0.0])
                .unwrap();
        let mut tape = Tape::new();
        let y = trilinear_sample(&mut tape, &x, &coords).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 6.0]);
    }

    #[test]
    fn output_stays_within_neighbor_hull() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let x = Tensor::<f64>::rand_uniform(&[4, 4, 4, 3], -5.0, 5.0, &mut rng);
        let coords = Tensor::<f64>::rand_uniform(&[4, 4, 4, 3], -0.5, 3.5, &mut rng);
        let lo = x.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut tape = Tape::new();
        let y = trilinear_sample(&mut tape, &x, &coords).unwrap();
        for &v in y.data() {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn non_finite_coordinate_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 1]);
        let coords =
            Tensor::from_vec(&[1, 1, 2, 3], vec![0.0, 0.0, 0.0, f64::NAN, 0.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            trilinear_sample(&mut tape, &x, &coords).unwrap_err(),
            ModelError::NonFiniteCoords(3)
        ));
    }
}
