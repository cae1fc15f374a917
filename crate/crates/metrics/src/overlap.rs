//! Overlap metrics by exact voxel counting.

use micseg_data::LabelMap;

use crate::error::{MetricsError, Result};

/// Intersection / prediction / reference voxel counts for one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapCounts {
    pub intersection: u64,
    pub pred: u64,
    pub reference: u64,
}

impl OverlapCounts {
    /// 2|P∩G| / (|P|+|G|); 1.0 when both masks are empty, 0.0 when exactly
    /// one is.
    pub fn dice(&self) -> f64 {
        if self.pred == 0 && self.reference == 0 {
            return 1.0;
        }
        2.0 * self.intersection as f64 / (self.pred + self.reference) as f64
    }

    /// |P∩G| / |P∪G| with the same empty-mask conventions as `dice`.
    pub fn iou(&self) -> f64 {
        if self.pred == 0 && self.reference == 0 {
            return 1.0;
        }
        let union = self.pred + self.reference - self.intersection;
        self.intersection as f64 / union as f64
    }
}

pub(crate) fn check_extents(pred: &LabelMap, reference: &LabelMap) -> Result<()> {
    if pred.extents() != reference.extents() {
        return Err(MetricsError::ExtentMismatch(
            pred.extents(),
            reference.extents(),
        ));
    }
    Ok(())
}

/// Counts for a single class in one pass over both maps.
pub fn overlap_counts(pred: &LabelMap, reference: &LabelMap, class: u8) -> Result<OverlapCounts> {
    check_extents(pred, reference)?;
    let mut counts = OverlapCounts {
        intersection: 0,
        pred: 0,
        reference: 0,
    };
    for (&p, &g) in pred.indices().iter().zip(reference.indices()) {
        let in_p = p == class;
        let in_g = g == class;
        counts.pred += in_p as u64;
        counts.reference += in_g as u64;
        counts.intersection += (in_p && in_g) as u64;
    }
    Ok(counts)
}

/// Counts for every class below `classes` in one pass.
pub fn overlap_counts_all(
    pred: &LabelMap,
    reference: &LabelMap,
    classes: usize,
) -> Result<Vec<OverlapCounts>> {
    check_extents(pred, reference)?;
    let mut counts = vec![
        OverlapCounts {
            intersection: 0,
            pred: 0,
            reference: 0,
        };
        classes
    ];
    for (&p, &g) in pred.indices().iter().zip(reference.indices()) {
        if (p as usize) >= classes {
            return Err(MetricsError::ClassRange { found: p, classes });
        }
        if (g as usize) >= classes {
            return Err(MetricsError::ClassRange { found: g, classes });
        }
        counts[p as usize].pred += 1;
        counts[g as usize].reference += 1;
        if p == g {
            counts[p as usize].intersection += 1;
        }
    }
    Ok(counts)
}

pub fn dice(pred: &LabelMap, reference: &LabelMap, class: u8) -> Result<f64> {
    Ok(overlap_counts(pred, reference, class)?.dice())
}

/// Mean IoU over the foreground classes 1..classes.
pub fn miou(pred: &LabelMap, reference: &LabelMap, classes: usize) -> Result<f64> {
    if classes < 2 {
        return Err(MetricsError::NoForeground(classes));
    }
    let counts = overlap_counts_all(pred, reference, classes)?;
    let sum: f64 = counts[1..].iter().map(OverlapCounts::iou).sum();
    Ok(sum / (classes - 1) as f64)
}
