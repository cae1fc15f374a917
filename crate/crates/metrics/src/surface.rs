//! 95th-percentile symmetric surface distance.
//!
//! Boundary definition: a voxel of the class whose 6-neighbourhood contains at
//! least one voxel of a different class, where positions outside the volume
//! count as different. Distances are Euclidean in millimetres (voxel index
//! times per-axis spacing). The directed 95th percentile uses the nearest-rank
//! rule, rank ⌈0.95·n⌉ over n sorted distances, and the symmetric value is the
//! larger of the two directed percentiles.

use micseg_data::LabelMap;

use crate::error::Result;
use crate::overlap::check_extents;

/// Stand-in for an unreachable squared distance. Large enough to dominate any
/// real value, small enough that envelope arithmetic stays finite.
const FAR: f64 = 1e30;

/// Physical diagonal of the volume; sentinel distance when exactly one mask
/// is empty.
pub fn volume_diagonal(extents: [usize; 3], spacing: [f32; 3]) -> f64 {
    let mut sq = 0.0;
    for a in 0..3 {
        let span = extents[a] as f64 * spacing[a] as f64;
        sq += span * span;
    }
    sq.sqrt()
}

/// Marks boundary voxels of `class`; also reports whether the mask is empty.
fn boundary_mask(map: &LabelMap, class: u8) -> (Vec<bool>, bool) {
    let [d, h, w] = map.extents();
    let data = map.indices();
    let mut boundary = vec![false; data.len()];
    let mut empty = true;
    let at = |z: usize, y: usize, x: usize| data[(z * h + y) * w + x];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                if data[i] != class {
                    continue;
                }
                empty = false;
                let exposed = z == 0
                    || z == d - 1
                    || y == 0
                    || y == h - 1
                    || x == 0
                    || x == w - 1
                    || at(z - 1, y, x) != class
                    || at(z + 1, y, x) != class
                    || at(z, y - 1, x) != class
                    || at(z, y + 1, x) != class
                    || at(z, y, x - 1) != class
                    || at(z, y, x + 1) != class;
                boundary[i] = exposed;
            }
        }
    }
    (boundary, empty)
}

/// Lower envelope of parabolas: exact 1D squared-distance transform over
/// samples at positions i·step, values read through `idx` strides.
fn dt_axis(
    field: &mut [f64],
    idx: impl Fn(usize) -> usize,
    n: usize,
    step: f64,
    f: &mut Vec<f64>,
    v: &mut Vec<usize>,
    z: &mut Vec<f64>,
) {
    f.clear();
    f.extend((0..n).map(|i| field[idx(i)]));
    v.clear();
    z.clear();
    v.push(0);
    z.push(f64::NEG_INFINITY);
    z.push(f64::INFINITY);
    let pos = |i: usize| i as f64 * step;
    for q in 1..n {
        let fq = f[q] + pos(q) * pos(q);
        loop {
            let p = v[v.len() - 1];
            let fp = f[p] + pos(p) * pos(p);
            let s = (fq - fp) / (2.0 * (pos(q) - pos(p)));
            if s <= z[z.len() - 2] {
                v.pop();
                z.pop();
            } else {
                *z.last_mut().unwrap() = s;
                v.push(q);
                z.push(f64::INFINITY);
                break;
            }
        }
    }
    let mut k = 0;
    for q in 0..n {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let p = v[k];
        let d = pos(q) - pos(p);
        field[idx(q)] = d * d + f[p];
    }
}

/// Squared Euclidean distance in millimetres from every voxel to the nearest
/// seed voxel, by three separable envelope passes.
fn squared_distance_field(seeds: &[bool], extents: [usize; 3], spacing: [f32; 3]) -> Vec<f64> {
    let [d, h, w] = extents;
    let mut field: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let mut f = Vec::new();
    let mut v = Vec::new();
    let mut z = Vec::new();
    for zz in 0..d {
        for yy in 0..h {
            let base = (zz * h + yy) * w;
            dt_axis(&mut field, |x| base + x, w, spacing[2] as f64, &mut f, &mut v, &mut z);
        }
    }
    for zz in 0..d {
        for xx in 0..w {
            let base = zz * h * w + xx;
            dt_axis(&mut field, |y| base + y * w, h, spacing[1] as f64, &mut f, &mut v, &mut z);
        }
    }
    for yy in 0..h {
        for xx in 0..w {
            let base = yy * w + xx;
            dt_axis(
                &mut field,
                |zc| base + zc * h * w,
                d,
                spacing[0] as f64,
                &mut f,
                &mut v,
                &mut z,
            );
        }
    }
    field
}

/// Nearest-rank 95th percentile: the ⌈0.95·n⌉-th smallest value, computed in
/// integer arithmetic as ⌈19n/20⌉.
fn percentile_95(distances: &mut Vec<f64>) -> f64 {
    let n = distances.len();
    assert!(n > 0, "percentile of an empty distance set");
    let rank = (19 * n).div_ceil(20);
    distances.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distances[rank - 1]
}

/// Directed 95th-percentile distance from the boundary of `from` to the
/// boundary of `to`.
fn directed_95(
    from: &[bool],
    to: &[bool],
    extents: [usize; 3],
    spacing: [f32; 3],
) -> f64 {
    let field = squared_distance_field(to, extents, spacing);
    let mut distances: Vec<f64> = from
        .iter()
        .zip(&field)
        .filter(|(b, _)| **b)
        .map(|(_, sq)| sq.sqrt())
        .collect();
    percentile_95(&mut distances)
}

/// Symmetric 95th-percentile boundary distance for one class, in millimetres.
/// Both masks empty → 0.0; exactly one empty → the volume diagonal.
pub fn hd95(pred: &LabelMap, reference: &LabelMap, class: u8, spacing: [f32; 3]) -> Result<f64> {
    check_extents(pred, reference)?;
    let extents = pred.extents();
    let (pb, p_empty) = boundary_mask(pred, class);
    let (gb, g_empty) = boundary_mask(reference, class);
    if p_empty && g_empty {
        return Ok(0.0);
    }
    if p_empty || g_empty {
        return Ok(volume_diagonal(extents, spacing));
    }
    let forward = directed_95(&pb, &gb, extents, spacing);
    let backward = directed_95(&gb, &pb, extents, spacing);
    Ok(forward.max(backward))
}
