use micseg_core::{Real, Tape, Tensor};

use crate::attn::attention::w_msa;
use crate::attn::deform::{deformable_cross_attention, windowed_cross_attention};
use crate::attn::params::{AttentionParams, ValueSource};
use crate::attn::window::{window_partition, window_reverse};
use crate::error::Result;
use crate::net::store::BoundParams;
use crate::nn::conv::ConvKernel3D;
use crate::nn::linear::linear;
use crate::nn::norm::layer_norm;

/// Hidden width of every transformer MLP relative to its channel count.
pub const MLP_RATIO: usize = 4;

/// Whether cross-attention warps the key stream along predicted offsets or
/// matches on the raw lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossKind {
    Deformable,
    Plain,
}

pub fn read_attention<P: Real>(
    bound: &BoundParams<P>,
    prefix: &str,
    heads: usize,
    head_dim: usize,
    window: usize,
) -> Result<AttentionParams<P>> {
    AttentionParams::new(
        bound.get(&format!("{prefix}.wq"))?.clone(),
        bound.get(&format!("{prefix}.wk"))?.clone(),
        bound.get(&format!("{prefix}.wv"))?.clone(),
        bound.get(&format!("{prefix}.out_w"))?.clone(),
        bound.get(&format!("{prefix}.out_b"))?.clone(),
        bound.get(&format!("{prefix}.bias_table"))?.clone(),
        heads,
        head_dim,
        window,
    )
}

pub fn read_kernel<P: Real>(bound: &BoundParams<P>, prefix: &str) -> Result<ConvKernel3D<P>> {
    ConvKernel3D::new(
        bound.get(&format!("{prefix}.dw"))?.clone(),
        bound.get(&format!("{prefix}.pw"))?.clone(),
        bound.get(&format!("{prefix}.bias"))?.clone(),
    )
}

fn norm_of<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    prefix: &str,
    x: &Tensor<P>,
) -> Result<Tensor<P>> {
    layer_norm(
        tape,
        x,
        bound.get(&format!("{prefix}.gamma"))?,
        bound.get(&format!("{prefix}.beta"))?,
    )
}

/// x + fc2(gelu(fc1(norm(x)))), the pre-norm feed-forward sub-layer.
pub fn mlp_sublayer<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    ln_prefix: &str,
    mlp_prefix: &str,
    x: &Tensor<P>,
) -> Result<Tensor<P>> {
    let normed = norm_of(tape, bound, ln_prefix, x)?;
    let hidden = linear(
        tape,
        &normed,
        bound.get(&format!("{mlp_prefix}.fc1.weight"))?,
        bound.get(&format!("{mlp_prefix}.fc1.bias"))?,
    )?;
    let active = tape.gelu(&hidden)?;
    let out = linear(
        tape,
        &active,
        bound.get(&format!("{mlp_prefix}.fc2.weight"))?,
        bound.get(&format!("{mlp_prefix}.fc2.bias"))?,
    )?;
    Ok(tape.add(x, &out)?)
}

/// Pre-norm windowed self-attention block:
/// x + w_msa(norm(x)) followed by the MLP sub-layer.
#[allow(clippy::too_many_arguments)]
pub fn swin_block<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    prefix: &str,
    x: &Tensor<P>,
    heads: usize,
    head_dim: usize,
    window: usize,
    shift: usize,
) -> Result<Tensor<P>> {
    let normed = norm_of(tape, bound, &format!("{prefix}.ln1"), x)?;
    let p = read_attention(bound, &format!("{prefix}.attn"), heads, head_dim, window)?;
    let windows = window_partition(tape, &normed, window, shift)?;
    let attended = w_msa(tape, &windows, &p)?;
    let back = window_reverse(tape, &attended)?;
    let x = tape.add(x, &back)?;
    mlp_sublayer(tape, bound, &format!("{prefix}.ln2"), &format!("{prefix}.mlp"), &x)
}

fn cross_delta<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    phase_prefix: &str,
    key_stream: &Tensor<P>,
    query_stream: &Tensor<P>,
    heads: usize,
    head_dim: usize,
    window: usize,
    shift: usize,
    value_source: ValueSource,
    kind: CrossKind,
) -> Result<Tensor<P>> {
    let p = read_attention(bound, &format!("{phase_prefix}.attn"), heads, head_dim, window)?;
    match kind {
        CrossKind::Deformable => {
            let kernel = read_kernel(bound, &format!("{phase_prefix}.off"))?;
            deformable_cross_attention(
                tape,
                key_stream,
                query_stream,
                &p,
                &kernel,
                window,
                shift,
                value_source,
            )
        }
        CrossKind::Plain => windowed_cross_attention(
            tape,
            key_stream,
            query_stream,
            &p,
            window,
            shift,
            value_source,
        ),
    }
}

/// Bidirectional fusion in two sequential phases. Phase 1: stream b queries
/// stream a and takes its residual MLP. Phase 2 runs only after phase 1 and
/// lets stream a query the already-updated b. Each phase owns its attention,
/// offset kernel, and MLP parameters ({prefix}.p1.*, {prefix}.p2.*).
#[allow(clippy::too_many_arguments)]
pub fn cross_transformer_block<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    prefix: &str,
    a: &Tensor<P>,
    b: &Tensor<P>,
    heads: usize,
    head_dim: usize,
    window: usize,
    shift: usize,
    value_source: ValueSource,
    kind: CrossKind,
) -> Result<(Tensor<P>, Tensor<P>)> {
    let p1 = format!("{prefix}.p1");
    let delta_b = cross_delta(
        tape, bound, &p1, a, b, heads, head_dim, window, shift, value_source, kind,
    )?;
    let b = tape.add(b, &delta_b)?;
    let b = mlp_sublayer(tape, bound, &format!("{p1}.mlp_ln"), &format!("{p1}.mlp"), &b)?;

    let p2 = format!("{prefix}.p2");
    let delta_a = cross_delta(
        tape, bound, &p2, &b, a, heads, head_dim, window, shift, value_source, kind,
    )?;
    let a = tape.add(a, &delta_a)?;
    let a = mlp_sublayer(tape, bound, &format!("{p2}.mlp_ln"), &format!("{p2}.mlp"), &a)?;
    Ok((a, b))
}

/// Stream a's share of a cross site when no partner stream exists: the
/// phase-2 MLP sub-layer alone. At zero-initialized cross branches this is
/// exactly what the full block does to stream a.
pub fn cross_site_solo_a<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    prefix: &str,
    a: &Tensor<P>,
) -> Result<Tensor<P>> {
    let p2 = format!("{prefix}.p2");
    mlp_sublayer(tape, bound, &format!("{p2}.mlp_ln"), &format!("{p2}.mlp"), a)
}
