use crate::error::Result;
use crate::types::{LabelMap, Volume};

/// Where padding went, so predictions can be cropped back. `lo` is the
/// number of voxels prepended per axis; `original` the extents before
/// padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadPlan {
    pub original: [usize; 3],
    pub lo: [usize; 3],
}

impl PadPlan {
    pub fn is_noop(&self) -> bool {
        self.lo == [0; 3]
    }
}

/// Shift and scale to zero mean and unit variance over the whole volume.
/// A constant volume has nothing to scale and maps to all zeros.
pub fn normalize_intensity(v: &Volume) -> Volume {
    let n = v.numel() as f64;
    let mean = v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v
        .data()
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let data = if var == 0.0 {
        vec![0.0f32; v.numel()]
    } else {
        let inv = 1.0 / var.sqrt();
        v.data()
            .iter()
            .map(|&x| ((x as f64 - mean) * inv) as f32)
            .collect()
    };
    Volume::new(v.extents(), v.spacing(), v.modality, data).expect("same extents, finite output")
}

fn padded_extents(extents: [usize; 3], multiple: usize) -> ([usize; 3], [usize; 3]) {
    let mut out = [0usize; 3];
    let mut lo = [0usize; 3];
    for a in 0..3 {
        let e = extents[a];
        let total = (multiple - e % multiple) % multiple;
        lo[a] = total / 2;
        out[a] = e + total;
    }
    (out, lo)
}

fn pad_grid<T: Copy>(
    src: &[T],
    extents: [usize; 3],
    padded: [usize; 3],
    lo: [usize; 3],
    fill: T,
) -> Vec<T> {
    let [d, h, w] = extents;
    let [pd, ph, pw] = padded;
    let mut out = vec![fill; pd * ph * pw];
    for z in 0..d {
        for y in 0..h {
            let src_row = (z * h + y) * w;
            let dst_row = ((z + lo[0]) * ph + y + lo[1]) * pw + lo[2];
            out[dst_row..dst_row + w].copy_from_slice(&src[src_row..src_row + w]);
        }
    }
    out
}

fn crop_grid<T: Copy + Default>(src: &[T], padded: [usize; 3], plan: &PadPlan) -> Vec<T> {
    let [d, h, w] = plan.original;
    let [_, ph, pw] = padded;
    let mut out = vec![T::default(); d * h * w];
    for z in 0..d {
        for y in 0..h {
            let src_row = ((z + plan.lo[0]) * ph + y + plan.lo[1]) * pw + plan.lo[2];
            let dst_row = (z * h + y) * w;
            out[dst_row..dst_row + w].copy_from_slice(&src[src_row..src_row + w]);
        }
    }
    out
}

/// Symmetric zero-pad up to the next multiple per axis; an extra odd voxel
/// goes to the high side.
pub fn pad_volume(v: &Volume, multiple: usize) -> Result<(Volume, PadPlan)> {
    let (padded, lo) = padded_extents(v.extents(), multiple.max(1));
    let plan = PadPlan {
        original: v.extents(),
        lo,
    };
    if plan.is_noop() && padded == v.extents() {
        return Ok((v.clone(), plan));
    }
    let data = pad_grid(v.data(), v.extents(), padded, lo, 0.0f32);
    Ok((Volume::new(padded, v.spacing(), v.modality, data)?, plan))
}

/// Labels pad with background class 0.
pub fn pad_labels(l: &LabelMap, multiple: usize) -> Result<(LabelMap, PadPlan)> {
    let (padded, lo) = padded_extents(l.extents(), multiple.max(1));
    let plan = PadPlan {
        original: l.extents(),
        lo,
    };
    if plan.is_noop() && padded == l.extents() {
        return Ok((l.clone(), plan));
    }
    let data = pad_grid(l.indices(), l.extents(), padded, lo, 0u8);
    Ok((LabelMap::new(padded, l.spacing(), data)?, plan))
}

pub fn crop_volume(v: &Volume, plan: &PadPlan) -> Result<Volume> {
    if v.extents() == plan.original {
        return Ok(v.clone());
    }
    let data = crop_grid(v.data(), v.extents(), plan);
    Volume::new(plan.original, v.spacing(), v.modality, data)
}

pub fn crop_labels(l: &LabelMap, plan: &PadPlan) -> Result<LabelMap> {
    if l.extents() == plan.original {
        return Ok(l.clone());
    }
    let data = crop_grid(l.indices(), l.extents(), plan);
    LabelMap::new(plan.original, l.spacing(), data)
}
