//! Compound segmentation loss: mean voxel cross-entropy plus one minus the
//! mean soft Dice over foreground classes, equal weights. Fused into a single
//! tape record: the Dice denominators couple every voxel, which the generic
//! broadcast ops cannot express.

use std::sync::Arc;

use micseg_core::{GradSink, NodeId, Real, Tape, TapeCtx, TapeOp, Tensor};
use micseg_data::LabelMap;

use crate::error::{Result, TrainError};

/// Smoothing added to soft-Dice numerator and denominator; makes the term
/// total (a class absent from both maps scores 1) and bounds gradients.
pub const DICE_SMOOTHING: f64 = 1e-5;

/// Differentiable total plus the two forward components for logging.
pub struct LossParts<P: Real> {
    pub total: Tensor<P>,
    pub cross_entropy: f64,
    pub soft_dice: f64,
}

struct Forward {
    total: f64,
    cross_entropy: f64,
    soft_dice: f64,
}

/// Shared by forward and backward so both sides see identical probabilities
/// and reductions.
struct Workspace {
    /// Softmax probabilities, voxel-major [n, k].
    probs: Vec<f64>,
    /// Per-class Σ_v p_vc.
    prob_sum: Vec<f64>,
    /// Per-class Σ_v p_vc over voxels labelled c.
    overlap: Vec<f64>,
    /// Per-class reference voxel count.
    label_count: Vec<f64>,
    /// Per-class soft Dice.
    dice: Vec<f64>,
}

fn workspace<P: Real>(logits: &Tensor<P>, labels: &[u8], k: usize) -> Workspace {
    let n = labels.len();
    let z = logits.data();
    let mut ws = Workspace {
        probs: vec![0.0; n * k],
        prob_sum: vec![0.0; k],
        overlap: vec![0.0; k],
        label_count: vec![0.0; k],
        dice: vec![0.0; k],
    };
    for v in 0..n {
        let row = &z[v * k..(v + 1) * k];
        let mut hi = f64::NEG_INFINITY;
        for &x in row {
            hi = hi.max(x.to_f64());
        }
        let mut denom = 0.0;
        let p = &mut ws.probs[v * k..(v + 1) * k];
        for c in 0..k {
            p[c] = (row[c].to_f64() - hi).exp();
            denom += p[c];
        }
        let y = labels[v] as usize;
        for c in 0..k {
            p[c] /= denom;
            ws.prob_sum[c] += p[c];
        }
        ws.overlap[y] += p[y];
        ws.label_count[y] += 1.0;
    }
    for c in 0..k {
        ws.dice[c] = (2.0 * ws.overlap[c] + DICE_SMOOTHING)
            / (ws.prob_sum[c] + ws.label_count[c] + DICE_SMOOTHING);
    }
    ws
}

fn forward_value<P: Real>(logits: &Tensor<P>, labels: &[u8], k: usize) -> Forward {
    let n = labels.len();
    let ws = workspace(logits, labels, k);
    let mut ce = 0.0;
    for v in 0..n {
        ce -= ws.probs[v * k + labels[v] as usize].ln();
    }
    ce /= n as f64;
    let mean_dice: f64 = ws.dice[1..].iter().sum::<f64>() / (k - 1) as f64;
    Forward {
        total: ce + (1.0 - mean_dice),
        cross_entropy: ce,
        soft_dice: mean_dice,
    }
}

struct SegLossOp {
    logits: NodeId,
    labels: Arc<Vec<u8>>,
    classes: usize,
}

impl<P: Real> TapeOp<P> for SegLossOp {
    fn name(&self) -> &'static str {
        "seg_loss"
    }

    fn inputs(&self) -> Vec<NodeId> {
        vec![self.logits]
    }

    fn backward(&self, ctx: &TapeCtx<'_, P>, _out: &Tensor<P>, grad_out: &Tensor<P>, sink: &mut GradSink<P>) {
        let logits = ctx.value(self.logits);
        let k = self.classes;
        let n = self.labels.len();
        let ws = workspace(logits, &self.labels, k);
        let go = grad_out.data()[0].to_f64();
        let inv_n = 1.0 / n as f64;
        let inv_fg = 1.0 / (k - 1) as f64;

        // d(1 − meanDice)/dp_vc = −(2·[label_v = c] − dice_c) / (fg·(denom_c));
        // class 0 never enters the Dice term.
        let mut dice_coeff = vec![0.0; k];
        for c in 1..k {
            dice_coeff[c] =
                inv_fg / (ws.prob_sum[c] + ws.label_count[c] + DICE_SMOOTHING);
        }

        let gx = sink.acc(self.logits, logits.numel());
        for v in 0..n {
            let y = self.labels[v] as usize;
            let p = &ws.probs[v * k..(v + 1) * k];
            // q_c = dL/dp_vc from the Dice term; s = Σ_c q_c p_c folds the
            // softmax Jacobian into one inner product.
            let mut s = 0.0;
            for c in 1..k {
                let g = if y == c { 2.0 } else { 0.0 };
                let q = -(g - ws.dice[c]) * dice_coeff[c];
                s += q * p[c];
            }
            for c in 0..k {
                let target = if y == c { 1.0 } else { 0.0 };
                let ce_part = (p[c] - target) * inv_n;
                let dice_part = if c == 0 {
                    -p[c] * s
                } else {
                    let g = if y == c { 2.0 } else { 0.0 };
                    let q = -(g - ws.dice[c]) * dice_coeff[c];
                    p[c] * (q - s)
                };
                let idx = v * k + c;
                gx[idx] = gx[idx] + P::from_f64(go * (ce_part + dice_part));
            }
        }
    }
}

/// Scalar loss for logits [D,H,W,K] against a label map of the same grid.
pub fn seg_loss<P: Real>(
    tape: &mut Tape<P>,
    logits: &Tensor<P>,
    labels: &LabelMap,
    classes: usize,
) -> Result<LossParts<P>> {
    if classes < 2 {
        return Err(TrainError::Config(format!(
            "loss needs at least 2 classes, got {classes}"
        )));
    }
    let [d, h, w] = labels.extents();
    if logits.shape() != [d, h, w, classes] {
        return Err(TrainError::Config(format!(
            "logits shape {:?} does not match labels {:?} with {classes} classes",
            logits.shape(),
            labels.extents()
        )));
    }
    labels.check_classes(classes)?;

    let fwd = forward_value(logits, labels.indices(), classes);
    let node = tape.ensure(logits);
    let total = tape.record(
        Box::new(SegLossOp {
            logits: node,
            labels: Arc::new(labels.indices().to_vec()),
            classes,
        }),
        Tensor::scalar(P::from_f64(fwd.total)),
    );
    Ok(LossParts {
        total,
        cross_entropy: fwd.cross_entropy,
        soft_dice: fwd.soft_dice,
    })
}
