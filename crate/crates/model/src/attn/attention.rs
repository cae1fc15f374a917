use std::sync::Arc;

use micseg_core::{Real, Tape, Tensor};

use crate::attn::params::{relative_bias_indices, AttentionParams, ValueSource};
use crate::attn::window::WindowSet;
use crate::error::{ModelError, Result};
use crate::nn::linear::linear;

/// [C, C] projection of every window token, split into [nw, heads, T, d].
fn project_heads<P: Real>(
    tape: &mut Tape<P>,
    x: &Tensor<P>,
    weight: &Tensor<P>,
    heads: usize,
    head_dim: usize,
) -> Result<Tensor<P>> {
    let (nw, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let flat = tape.reshape(x, &[nw * t, c])?;
    let proj = tape.matmul(&flat, weight)?;
    let split = tape.reshape(&proj, &[nw, t, heads, head_dim])?;
    Ok(tape.transpose(&split, &[0, 2, 1, 3])?)
}

/// Relative-position bias laid out as [heads, T, T] so it broadcasts over the
/// window axis of the score tensor.
fn bias_grid<P: Real>(tape: &mut Tape<P>, p: &AttentionParams<P>) -> Result<Tensor<P>> {
    let t = p.window.pow(3);
    let gathered = tape.gather_rows(&p.bias_table, Arc::new(relative_bias_indices(p.window)))?;
    let by_head = tape.transpose(&gathered, &[1, 0])?;
    Ok(tape.reshape(&by_head, &[p.heads, t, t])?)
}

/// Scaled dot-product attention over window tokens: queries from `q_src`,
/// keys from `k_src`, values from `v_src`, all [nw, T, C]. Scores gain the
/// relative-position bias before the softmax; the head outputs are re-merged
/// and sent through the output projection.
fn windowed_attention<P: Real>(
    tape: &mut Tape<P>,
    q_src: &Tensor<P>,
    k_src: &Tensor<P>,
    v_src: &Tensor<P>,
    p: &AttentionParams<P>,
) -> Result<Tensor<P>> {
    let (nw, t, c) = (q_src.shape()[0], q_src.shape()[1], q_src.shape()[2]);
    if c != p.channels() {
        return Err(ModelError::HeadDivisibility {
            channels: c,
            head_dim: p.head_dim,
        });
    }
    let q = project_heads(tape, q_src, &p.wq, p.heads, p.head_dim)?;
    let k = project_heads(tape, k_src, &p.wk, p.heads, p.head_dim)?;
    let v = project_heads(tape, v_src, &p.wv, p.heads, p.head_dim)?;

    let k_t = tape.transpose(&k, &[0, 1, 3, 2])?;
    let raw = tape.matmul(&q, &k_t)?;
    let scaled = tape.scale(&raw, 1.0 / (p.head_dim as f64).sqrt());
    let bias = bias_grid(tape, p)?;
    let scored = tape.add(&scaled, &bias)?;
    let attn = tape.softmax(&scored)?;

    let mixed = tape.matmul(&attn, &v)?;
    let merged = tape.transpose(&mixed, &[0, 2, 1, 3])?;
    let tokens = tape.reshape(&merged, &[nw, t, c])?;
    linear(tape, &tokens, &p.out_weight, &p.out_bias)
}

/// Windowed multi-head self-attention.
pub fn w_msa<P: Real>(
    tape: &mut Tape<P>,
    x: &WindowSet<P>,
    p: &AttentionParams<P>,
) -> Result<WindowSet<P>> {
    let out = windowed_attention(tape, x.tensor(), x.tensor(), x.tensor(), p)?;
    x.with_tensor(out)
}

/// Windowed multi-head cross-attention: queries from stream b, keys from
/// stream a, values from the configured source (stream b by default).
pub fn w_mca<P: Real>(
    tape: &mut Tape<P>,
    feat_b: &WindowSet<P>,
    feat_a: &WindowSet<P>,
    p: &AttentionParams<P>,
    value_source: ValueSource,
) -> Result<WindowSet<P>> {
    if !feat_b.same_geometry(feat_a) {
        return Err(ModelError::GeometryMismatch(format!(
            "cross-attention windows disagree: {:?}/{:?} vs {:?}/{:?}",
            feat_b.dims(),
            feat_b.tensor().shape(),
            feat_a.dims(),
            feat_a.tensor().shape()
        )));
    }
    let v_src = match value_source {
        ValueSource::B => feat_b.tensor(),
        ValueSource::A => feat_a.tensor(),
    };
    let out = windowed_attention(tape, feat_b.tensor(), feat_a.tensor(), v_src, p)?;
    feat_b.with_tensor(out)
}
