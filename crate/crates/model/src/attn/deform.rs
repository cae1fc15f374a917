use micseg_core::{Real, Tape, Tensor};

use crate::attn::attention::w_mca;
use crate::attn::params::{AttentionParams, ValueSource};
use crate::attn::window::{window_partition, window_reverse};
use crate::error::{ModelError, Result};
use crate::nn::conv::{depthwise_separable_conv3d, ConvKernel3D};
use crate::nn::sample::{identity_coords, trilinear_sample};

fn require_same_grid<P: Real>(a: &Tensor<P>, b: &Tensor<P>, what: &str) -> Result<()> {
    if a.rank() != 4 || a.shape() != b.shape() {
        return Err(ModelError::GeometryMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Per-voxel displacement field [D,H,W,3] predicted from both streams: the
/// channel concatenation runs through a depthwise separable convolution whose
/// pointwise stage emits the three displacement channels (x, y, z).
pub fn predict_offsets<P: Real>(
    tape: &mut Tape<P>,
    feat_a: &Tensor<P>,
    feat_b: &Tensor<P>,
    kernel: &ConvKernel3D<P>,
) -> Result<Tensor<P>> {
    require_same_grid(feat_a, feat_b, "offset prediction inputs")?;
    if kernel.pointwise.shape()[1] != 3 {
        return Err(ModelError::ChannelMismatch {
            expected: 3,
            actual: kernel.pointwise.shape()[1],
        });
    }
    let both = tape.concat_last(feat_a, feat_b)?;
    depthwise_separable_conv3d(tape, &both, kernel)
}

/// Resamples `feat_a` at (identity lattice + off) with clamped borders.
pub fn deform_features<P: Real>(
    tape: &mut Tape<P>,
    feat_a: &Tensor<P>,
    off: &Tensor<P>,
) -> Result<Tensor<P>> {
    if feat_a.rank() != 4 {
        return Err(ModelError::GeometryMismatch(format!(
            "deform_features expects [D,H,W,C], got {:?}",
            feat_a.shape()
        )));
    }
    let (d, h, w) = (feat_a.shape()[0], feat_a.shape()[1], feat_a.shape()[2]);
    if off.shape() != [d, h, w, 3] {
        return Err(ModelError::GeometryMismatch(format!(
            "offset field {:?} does not match grid [{d},{h},{w},3]",
            off.shape()
        )));
    }
    let identity = tape.constant(identity_coords(d, h, w));
    let coords = tape.add(&identity, off)?;
    trilinear_sample(tape, feat_a, &coords)
}

/// Cross-attention with the key stream warped first: predict offsets from
/// both streams, resample stream a along them, then run windowed
/// cross-attention of stream b against the warped stream a.
#[allow(clippy::too_many_arguments)]
pub fn deformable_cross_attention<P: Real>(
    tape: &mut Tape<P>,
    feat_a: &Tensor<P>,
    feat_b: &Tensor<P>,
    p: &AttentionParams<P>,
    kernel: &ConvKernel3D<P>,
    window: usize,
    shift: usize,
    value_source: ValueSource,
) -> Result<Tensor<P>> {
    let off = predict_offsets(tape, feat_a, feat_b, kernel)?;
    let warped = deform_features(tape, feat_a, &off)?;
    windowed_cross_attention(tape, &warped, feat_b, p, window, shift, value_source)
}

/// The same pipeline without the warp, for offset-free operation.
pub fn windowed_cross_attention<P: Real>(
    tape: &mut Tape<P>,
    feat_a: &Tensor<P>,
    feat_b: &Tensor<P>,
    p: &AttentionParams<P>,
    window: usize,
    shift: usize,
    value_source: ValueSource,
) -> Result<Tensor<P>> {
    require_same_grid(feat_a, feat_b, "cross-attention inputs")?;
    let wa = window_partition(tape, feat_a, window, shift)?;
    let wb = window_partition(tape, feat_b, window, shift)?;
    let out = w_mca(tape, &wb, &wa, p, value_source)?;
    window_reverse(tape, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_kernel(c_in: usize) -> ConvKernel3D<f64> {
        ConvKernel3D::new(
            Tensor::zeros(&[c_in, 3, 3, 3]),
            Tensor::zeros(&[c_in, 3]),
            Tensor::zeros(&[3]),
        )
        .unwrap()
    }

    #[test]
    fn zero_kernel_predicts_zero_offsets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::<f64>::rand_uniform(&[3, 3, 3, 2], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[3, 3, 3, 2], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let off = predict_offsets(&mut tape, &a, &b, &zero_kernel(4)).unwrap();
        assert_eq!(off.shape(), [3, 3, 3, 3]);
        assert!(off.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_offsets_deform_to_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::<f64>::rand_uniform(&[3, 4, 5, 2], -1.0, 1.0, &mut rng);
        let off = Tensor::zeros(&[3, 4, 5, 3]);
        let mut tape = Tape::new();
        let warped = deform_features(&mut tape, &a, &off).unwrap();
        assert!(warped.bitwise_eq(&a));
    }

    #[test]
    fn unit_x_offset_shifts_a_ramp() {
        // Feature = x coordinate; offset (1,0,0) reads one step right, so the
        // value rises by one except at the clamped far border.
        let w = 5usize;
        let a = Tensor::from_fn(&[1, 1, w, 1], |i| i as f64);
        let off = Tensor::from_fn(&[1, 1, w, 3], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let mut tape = Tape::new();
        let warped = deform_features(&mut tape, &a, &off).unwrap();
        assert_eq!(warped.data(), &[1.0, 2.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn half_offset_hits_midpoint() {
        let a = Tensor::from_vec(&[1, 1, 2, 1], vec![0.0, 1.0]).unwrap();
        let off =
            Tensor::from_vec(&[1, 1, 2, 3], vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let warped = deform_features(&mut tape, &a, &off).unwrap();
        assert_eq!(warped.data()[0], 0.5);
    }

    #[test]
    fn composition_matches_hand_chained_ops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let c = 4usize;
        let a = Tensor::<f64>::rand_uniform(&[4, 4, 4, c], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[4, 4, 4, c], -1.0, 1.0, &mut rng);
        let kernel = ConvKernel3D::new(
            Tensor::rand_uniform(&[2 * c, 3, 3, 3], -0.2, 0.2, &mut rng),
            Tensor::rand_uniform(&[2 * c, 3], -0.2, 0.2, &mut rng),
            Tensor::rand_uniform(&[3], -0.2, 0.2, &mut rng),
        )
        .unwrap();
        let table = (2 * 2 - 1) as usize;
        let p = AttentionParams::new(
            Tensor::rand_uniform(&[c, c], -0.5, 0.5, &mut rng),
            Tensor::rand_uniform(&[c, c], -0.5, 0.5, &mut rng),
            Tensor::rand_uniform(&[c, c], -0.5, 0.5, &mut rng),
            Tensor::rand_uniform(&[c, c], -0.5, 0.5, &mut rng),
            Tensor::rand_uniform(&[c], -0.5, 0.5, &mut rng),
            Tensor::rand_uniform(&[table.pow(3), 2], -0.5, 0.5, &mut rng),
            2,
            c / 2,
            2,
        )
        .unwrap();

        let mut tape = Tape::new();
        let fused =
            deformable_cross_attention(&mut tape, &a, &b, &p, &kernel, 2, 1, ValueSource::B)
                .unwrap();

        let mut tape2 = Tape::new();
        let off = predict_offsets(&mut tape2, &a, &b, &kernel).unwrap();
        let warped = deform_features(&mut tape2, &a, &off).unwrap();
        let wa = window_partition(&mut tape2, &warped, 2, 1).unwrap();
        let wb = window_partition(&mut tape2, &b, 2, 1).unwrap();
        let out = w_mca(&mut tape2, &wb, &wa, &p, ValueSource::B).unwrap();
        let chained = window_reverse(&mut tape2, &out).unwrap();

        assert!(fused.bitwise_eq(&chained));
    }

    #[test]
    fn zero_offset_kernel_reduces_to_plain_pipeline() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let c = 4usize;
        let a = Tensor::<f64>::rand_uniform(&[2, 2, 2, c], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[2, 2, 2, c], -1.0, 1.0, &mut rng);
        let p = AttentionParams::new(
            Tensor::rand_uniform(&[c, c], -0.5, 0.5, &mut rng),
            Tensor::rand_uniform(&[c, c], -0.5, 0.5, &mut rng),
            Tensor::rand_uniform(&[c, c], -0.5, 0.5, &mut rng),
            Tensor::rand_uniform(&[c, c], -0.5, 0.5, &mut rng),
            Tensor::rand_uniform(&[c], -0.5, 0.5, &mut rng),
            Tensor::rand_uniform(&[27, 2], -0.5, 0.5, &mut rng),
            2,
            c / 2,
            2,
        )
        .unwrap();
        let mut tape = Tape::new();
        let deformed =
            deformable_cross_attention(&mut tape, &a, &b, &p, &zero_kernel(2 * c), 2, 0, ValueSource::B)
                .unwrap();
        let mut tape2 = Tape::new();
        let plain =
            windowed_cross_attention(&mut tape2, &a, &b, &p, 2, 0, ValueSource::B).unwrap();
        assert!(deformed.bitwise_eq(&plain));
    }
}
