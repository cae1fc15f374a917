//! Per-case metrics report: per-class values plus foreground means.

use serde::{Deserialize, Serialize};

use micseg_data::LabelMap;

use crate::error::{MetricsError, Result};
use crate::overlap::overlap_counts_all;
use crate::surface::hd95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub dice: f64,
    pub iou: f64,
    pub hd95: f64,
    pub pred_voxels: u64,
    pub reference_voxels: u64,
}

/// Per-class metrics for classes 0..K (0 = background) and means over the
/// foreground classes 1..K. Background stays in the per-class table for
/// inspection but never enters a mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub mean_hd95: f64,
}

impl MetricsReport {
    /// Flat `metric.class = value` text, one line per entry; means carry the
    /// pseudo-class `mean`.
    pub fn to_flat_text(&self) -> String {
        let mut out = String::new();
        for (k, c) in self.classes.iter().enumerate() {
            out.push_str(&format!("dice.{k} = {:.9}\n", c.dice));
            out.push_str(&format!("iou.{k} = {:.9}\n", c.iou));
            out.push_str(&format!("hd95.{k} = {:.9}\n", c.hd95));
            out.push_str(&format!("pred_voxels.{k} = {}\n", c.pred_voxels));
            out.push_str(&format!("reference_voxels.{k} = {}\n", c.reference_voxels));
        }
        out.push_str(&format!("dice.mean = {:.9}\n", self.mean_dice));
        out.push_str(&format!("iou.mean = {:.9}\n", self.mean_iou));
        out.push_str(&format!("hd95.mean = {:.9}\n", self.mean_hd95));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Full report over `classes` classes. Spacing is taken from the reference
/// map; label values must lie below `classes`.
pub fn report(pred: &LabelMap, reference: &LabelMap, classes: usize) -> Result<MetricsReport> {
    if classes < 2 {
        return Err(MetricsError::NoForeground(classes));
    }
    let counts = overlap_counts_all(pred, reference, classes)?;
    let spacing = reference.spacing();
    let mut per_class = Vec::with_capacity(classes);
    for (k, c) in counts.iter().enumerate() {
        per_class.push(ClassMetrics {
            dice: c.dice(),
            iou: c.iou(),
            hd95: hd95(pred, reference, k as u8, spacing)?,
            pred_voxels: c.pred,
            reference_voxels: c.reference,
        });
    }
    let fg = &per_class[1..];
    let n = fg.len() as f64;
    Ok(MetricsReport {
        mean_dice: fg.iter().map(|c| c.dice).sum::<f64>() / n,
        mean_iou: fg.iter().map(|c| c.iou).sum::<f64>() / n,
        mean_hd95: fg.iter().map(|c| c.hd95).sum::<f64>() / n,
        classes: per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(extents: [usize; 3], data: Vec<u8>) -> LabelMap {
        LabelMap::new(extents, [1.0; 3], data).unwrap()
    }

    #[test]
    fn identical_maps_score_perfectly() {
        let a = map([2, 2, 2], vec![0, 1, 1, 2, 0, 0, 2, 1]);
        let r = report(&a, &a, 3).unwrap();
        assert_eq!(r.mean_dice, 1.0);
        assert_eq!(r.mean_iou, 1.0);
        assert_eq!(r.mean_hd95, 0.0);
        assert_eq!(r.classes.len(), 3);
        assert_eq!(r.classes[1].pred_voxels, 3);
        assert_eq!(r.classes[1].reference_voxels, 3);
    }

    #[test]
    fn dice_iou_identity_holds_per_class() {
        let p = map([2, 2, 3], vec![0, 1, 1, 2, 0, 1, 2, 2, 0, 1, 0, 2]);
        let g = map([2, 2, 3], vec![1, 1, 0, 2, 2, 1, 0, 2, 0, 0, 1, 2]);
        let r = report(&p, &g, 3).unwrap();
        for c in &r.classes {
            let derived = 2.0 * c.iou / (1.0 + c.iou);
            assert!((c.dice - derived).abs() < 1e-12);
            assert!(c.iou <= c.dice + 1e-15);
            assert!((0.0..=1.0).contains(&c.dice));
            assert!((0.0..=1.0).contains(&c.iou));
            assert!(c.hd95 >= 0.0);
        }
    }

    #[test]
    fn flat_text_has_one_line_per_entry() {
        let a = map([1, 1, 4], vec![0, 1, 1, 0]);
        let r = report(&a, &a, 2).unwrap();
        let text = r.to_flat_text();
        assert_eq!(text.lines().count(), 2 * 5 + 3);
        assert!(text.contains("dice.1 = 1.000000000\n"));
        assert!(text.contains("hd95.mean = 0.000000000\n"));
        for line in text.lines() {
            let (key, value) = line.split_once(" = ").unwrap();
            assert!(key.contains('.'));
            assert!(value.parse::<f64>().is_ok());
        }
    }

    #[test]
    fn json_round_trips() {
        let p = map([1, 2, 2], vec![0, 1, 2, 1]);
        let g = map([1, 2, 2], vec![0, 1, 1, 2]);
        let r = report(&p, &g, 3).unwrap();
        let back = MetricsReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn class_count_below_two_is_rejected() {
        let a = map([1, 1, 2], vec![0, 0]);
        assert!(matches!(
            report(&a, &a, 1),
            Err(MetricsError::NoForeground(1))
        ));
    }

    #[test]
    fn absent_class_in_both_maps_scores_perfect_by_convention() {
        let a = map([1, 1, 4], vec![0, 1, 1, 0]);
        let r = report(&a, &a, 3).unwrap();
        assert_eq!(r.classes[2].dice, 1.0);
        assert_eq!(r.classes[2].iou, 1.0);
        assert_eq!(r.classes[2].hd95, 0.0);
    }
}
