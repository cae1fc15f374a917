//! Synthetic paired-modality cases.
//!
//! Each case scatters non-overlapping ellipsoids on background. The first
//! volume sees sharp boundaries but one shared foreground intensity, so
//! class identity is unrecoverable from it alone; the second volume sees
//! distinct per-class intensities but blurred boundaries, additive noise,
//! and a smooth sub-window misalignment relative to the first. Labels live
//! in the first volume's geometry. Segmenting well therefore requires both
//! streams, and correcting the misalignment is exactly what the offset
//! predictor is for.

use micseg_core::seeds::{rng_stream, DOMAIN_CASE};
use rand::{Rng, RngExt};
use rand_distr::{Distribution, Normal};

use crate::error::{DataError, Result};
use crate::types::{CasePair, LabelMap, Modality, Volume};

/// Default misalignment amplitude in voxels.
pub const DEFAULT_MISALIGN: f64 = 2.0;
/// Boundary softness of the second modality in voxels.
const BLUR_SIGMA: f64 = 2.0;
/// Additive noise level for both modalities.
const NOISE_SIGMA: f64 = 0.1;
/// Spacing of the displacement control lattice in voxels.
const CONTROL_SPACING: usize = 8;
/// Intensity step between classes in the second modality.
const CLASS_STEP: f32 = 0.5;
/// Shared foreground intensity of the first modality.
const FG_INTENSITY: f32 = 1.0;

const ATTEMPTS_PER_ELLIPSOID: usize = 200;
const RESTARTS: usize = 20;

struct Ellipsoid {
    center: [f64; 3],
    semi: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, z: f64, y: f64, x: f64) -> bool {
        let dz = (z - self.center[0]) / self.semi[0];
        let dy = (y - self.center[1]) / self.semi[1];
        let dx = (x - self.center[2]) / self.semi[2];
        dz * dz + dy * dy + dx * dx <= 1.0
    }

    fn bounding_radius(&self) -> f64 {
        self.semi.iter().cloned().fold(0.0, f64::max)
    }
}

fn place_ellipsoids<R: Rng>(rng: &mut R, edge: usize, count: usize) -> Result<Vec<Ellipsoid>> {
    let e = edge as f64;
    let (semi_lo, semi_hi) = (0.08 * e, 0.16 * e);
    let gap = 2.0;
    let mut attempts_total = 0;
    for _ in 0..RESTARTS {
        let mut placed: Vec<Ellipsoid> = Vec::with_capacity(count);
        'next: for _ in 0..count {
            for _ in 0..ATTEMPTS_PER_ELLIPSOID {
                attempts_total += 1;
                let semi = [
                    rng.random_range(semi_lo..semi_hi),
                    rng.random_range(semi_lo..semi_hi),
                    rng.random_range(semi_lo..semi_hi),
                ];
                let r = semi.iter().cloned().fold(0.0, f64::max);
                let margin = r + 2.0;
                if 2.0 * margin >= e {
                    continue;
                }
                let center = [
                    rng.random_range(margin..e - margin),
                    rng.random_range(margin..e - margin),
                    rng.random_range(margin..e - margin),
                ];
                let cand = Ellipsoid { center, semi };
                let clear = placed.iter().all(|p| {
                    let d: f64 = p
                        .center
                        .iter()
                        .zip(&cand.center)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    d > p.bounding_radius() + cand.bounding_radius() + gap
                });
                if clear {
                    placed.push(cand);
                    continue 'next;
                }
            }
            break 'next;
        }
        if placed.len() == count {
            return Ok(placed);
        }
    }
    Err(DataError::InfeasiblePlacement {
        placed: 0,
        wanted: count,
        attempts: attempts_total,
    })
}

fn rasterize_labels(edge: usize, ellipsoids: &[Ellipsoid]) -> Vec<u8> {
    let mut labels = vec![0u8; edge * edge * edge];
    let mut i = 0;
    for z in 0..edge {
        for y in 0..edge {
            for x in 0..edge {
                for (id, ell) in ellipsoids.iter().enumerate() {
                    if ell.contains(z as f64, y as f64, x as f64) {
                        labels[i] = (id + 1) as u8;
                        break;
                    }
                }
                i += 1;
            }
        }
    }
    labels
}

/// Separable Gaussian blur with replicated borders.
fn gaussian_blur(data: &mut [f64], extents: [usize; 3], sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let [d, h, w] = extents;
    let strides = [h * w, w, 1usize];
    let mut scratch = vec![0.0f64; data.len()];
    for (axis, &ext) in [d, h, w].iter().enumerate() {
        let stride = strides[axis];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let pos = [z, y, x][axis] as isize;
                    let base = (z * h + y) * w + x;
                    let mut acc = 0.0;
                    for (ki, &kv) in kernel.iter().enumerate() {
                        let p = (pos + ki as isize - radius).clamp(0, ext as isize - 1);
                        let idx = base as isize + (p - pos) * stride as isize;
                        acc += kv * data[idx as usize];
                    }
                    scratch[base] = acc;
                }
            }
        }
        data.copy_from_slice(&scratch);
    }
}

fn trilerp(src: &[f64], extents: [usize; 3], z: f64, y: f64, x: f64) -> f64 {
    let [d, h, w] = extents;
    let sample = |c: f64, ext: usize| -> (usize, usize, f64) {
        let c = c.clamp(0.0, (ext - 1) as f64);
        let lo = c.floor() as usize;
        let hi = (lo + 1).min(ext - 1);
        (lo, hi, c - lo as f64)
    };
    let (z0, z1, fz) = sample(z, d);
    let (y0, y1, fy) = sample(y, h);
    let (x0, x1, fx) = sample(x, w);
    let at = |zi: usize, yi: usize, xi: usize| src[(zi * h + yi) * w + xi];
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let c00 = lerp(at(z0, y0, x0), at(z0, y0, x1), fx);
    let c01 = lerp(at(z0, y1, x0), at(z0, y1, x1), fx);
    let c10 = lerp(at(z1, y0, x0), at(z1, y0, x1), fx);
    let c11 = lerp(at(z1, y1, x0), at(z1, y1, x1), fx);
    lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz)
}

/// Smooth per-voxel displacement with the largest component magnitude
/// scaled to exactly `amplitude`. Three planes in (z, y, x) order.
fn displacement_field<R: Rng>(rng: &mut R, edge: usize, amplitude: f64) -> [Vec<f64>; 3] {
    let nc = (edge - 1) / CONTROL_SPACING + 2;
    let coarse: [Vec<f64>; 3] = std::array::from_fn(|_| {
        (0..nc * nc * nc)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect()
    });
    let mut fine: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; edge * edge * edge]);
    let s = CONTROL_SPACING as f64;
    let mut max_abs = 0.0f64;
    for comp in 0..3 {
        let mut i = 0;
        for z in 0..edge {
            for y in 0..edge {
                for x in 0..edge {
                    let v = trilerp(
                        &coarse[comp],
                        [nc, nc, nc],
                        z as f64 / s,
                        y as f64 / s,
                        x as f64 / s,
                    );
                    fine[comp][i] = v;
                    max_abs = max_abs.max(v.abs());
                    i += 1;
                }
            }
        }
    }
    if max_abs > 0.0 {
        let scale = amplitude / max_abs;
        for plane in &mut fine {
            for v in plane.iter_mut() {
                *v *= scale;
            }
        }
    }
    fine
}

fn warp(src: &[f64], extents: [usize; 3], field: &[Vec<f64>; 3]) -> Vec<f64> {
    let [d, h, w] = extents;
    let mut out = vec![0.0; src.len()];
    let mut i = 0;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                out[i] = trilerp(
                    src,
                    extents,
                    z as f64 + field[0][i],
                    y as f64 + field[1][i],
                    x as f64 + field[2][i],
                );
                i += 1;
            }
        }
    }
    out
}

fn add_noise<R: Rng>(data: &mut [f64], rng: &mut R, sigma: f64) {
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for v in data.iter_mut() {
        *v += normal.sample(rng);
    }
}

/// Deterministic case for `seed` with the default misalignment amplitude.
pub fn synth_case(seed: u64, edge: usize, classes: usize) -> Result<CasePair> {
    synth_case_misaligned(seed, edge, classes, DEFAULT_MISALIGN)
}

/// As [`synth_case`], with an explicit misalignment amplitude in voxels;
/// zero produces perfectly aligned pairs.
pub fn synth_case_misaligned(
    seed: u64,
    edge: usize,
    classes: usize,
    misalign: f64,
) -> Result<CasePair> {
    if edge < 32 {
        return Err(DataError::Config(format!("edge {edge} below minimum 32")));
    }
    if classes < 3 {
        return Err(DataError::Config(format!(
            "need at least 3 classes, got {classes}"
        )));
    }
    if classes > 256 {
        return Err(DataError::Config(format!(
            "class indices are bytes, {classes} classes do not fit"
        )));
    }
    if !misalign.is_finite() || misalign < 0.0 {
        return Err(DataError::Config(format!(
            "misalignment must be finite and non-negative, got {misalign}"
        )));
    }

    let mut place_rng = rng_stream(seed, DOMAIN_CASE, 0);
    let mut field_rng = rng_stream(seed, DOMAIN_CASE, 1);
    let mut ct_rng = rng_stream(seed, DOMAIN_CASE, 2);
    let mut mri_rng = rng_stream(seed, DOMAIN_CASE, 3);

    let ellipsoids = place_ellipsoids(&mut place_rng, edge, classes - 1)?;
    let labels = rasterize_labels(edge, &ellipsoids);
    let extents = [edge, edge, edge];

    let mut ct: Vec<f64> = labels
        .iter()
        .map(|&c| if c > 0 { FG_INTENSITY as f64 } else { 0.0 })
        .collect();
    add_noise(&mut ct, &mut ct_rng, NOISE_SIGMA);

    let mut mri: Vec<f64> = labels
        .iter()
        .map(|&c| f64::from(c) * CLASS_STEP as f64)
        .collect();
    gaussian_blur(&mut mri, extents, BLUR_SIGMA);
    if misalign > 0.0 {
        let field = displacement_field(&mut field_rng, edge, misalign);
        mri = warp(&mri, extents, &field);
    }
    add_noise(&mut mri, &mut mri_rng, NOISE_SIGMA);

    let spacing = [1.0f32; 3];
    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect();
    let ct = Volume::new(extents, spacing, Modality::Ct, to_f32(ct))?;
    let mri = Volume::new(extents, spacing, Modality::Mri, to_f32(mri))?;
    let labels = LabelMap::new(extents, spacing, labels)?;
    CasePair::new(format!("{seed:016x}"), ct, mri, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_reproduces_bitwise() {
        let a = synth_case(42, 32, 4).unwrap();
        let b = synth_case(42, 32, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_class_appears() {
        let case = synth_case(7, 64, 4).unwrap();
        let mut seen = [false; 4];
        for &c in case.labels.indices() {
            seen[usize::from(c)] = true;
        }
        assert!(seen.iter().all(|&s| s), "{seen:?}");
    }

    #[test]
    fn twenty_seeds_give_distinct_label_maps() {
        let mut maps = Vec::new();
        for seed in 0..20 {
            let case = synth_case(seed, 32, 4).unwrap();
            maps.push(case.labels.indices().to_vec());
        }
        for i in 0..maps.len() {
            for j in i + 1..maps.len() {
                assert_ne!(maps[i], maps[j], "seeds {i} and {j} collide");
            }
        }
    }

    #[test]
    fn misalignment_zero_matches_blur_of_code_volume() {
        // with no warp the second volume is exactly blur(code) + noise, so
        // it must differ from the warped variant of the same seed
        let aligned = synth_case_misaligned(3, 32, 4, 0.0).unwrap();
        let warped = synth_case_misaligned(3, 32, 4, 2.0).unwrap();
        assert_eq!(aligned.labels, warped.labels);
        assert_eq!(aligned.ct, warped.ct);
        assert_ne!(aligned.mri.data(), warped.mri.data());
    }

    #[test]
    fn rejects_small_edge_and_few_classes() {
        assert!(matches!(
            synth_case(0, 16, 4).unwrap_err(),
            DataError::Config(_)
        ));
        assert!(matches!(
            synth_case(0, 32, 2).unwrap_err(),
            DataError::Config(_)
        ));
    }

    #[test]
    fn impossible_packing_reports_infeasible() {
        let err = synth_case(0, 32, 40).unwrap_err();
        assert!(matches!(err, DataError::InfeasiblePlacement { .. }), "{err}");
    }

    #[test]
    fn ct_foreground_intensity_is_class_blind() {
        let case = synth_case(11, 32, 5).unwrap();
        // per-class mean of the sharp volume must coincide across classes
        let mut sums = vec![0.0f64; 5];
        let mut counts = vec![0usize; 5];
        for (i, &c) in case.labels.indices().iter().enumerate() {
            sums[usize::from(c)] += case.ct.data()[i] as f64;
            counts[usize::from(c)] += 1;
        }
        for c in 1..5 {
            assert!(counts[c] > 0);
            let mean = sums[c] / counts[c] as f64;
            assert!(
                (mean - FG_INTENSITY as f64).abs() < 0.05,
                "class {c} mean {mean}"
            );
        }
    }

    #[test]
    fn displacement_respects_amplitude_cap() {
        let mut rng = rng_stream(9, DOMAIN_CASE, 1);
        let field = displacement_field(&mut rng, 32, 2.0);
        let max = field
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!((max - 2.0).abs() < 1e-12, "max {max}");
    }
}
