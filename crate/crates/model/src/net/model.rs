use std::sync::Arc;

use micseg_core::{Real, Tape, Tensor};

use crate::error::{ModelError, Result};
use crate::net::blocks::{
    cross_site_solo_a, cross_transformer_block, swin_block, CrossKind,
};
use crate::net::config::ModelConfig;
use crate::net::store::BoundParams;
use crate::nn::linear::linear;
use crate::nn::patch::{patch_embed, patch_expand, patch_merge};

/// One forward pass: voxel logits plus the full-resolution per-stream
/// features that fed the head (stream b absent in single-stream operation).
#[derive(Debug)]
pub struct ForwardOut<P: Real> {
    pub logits: Tensor<P>,
    pub feat_a: Tensor<P>,
    pub feat_b: Option<Tensor<P>>,
}

fn check_volumes<P: Real>(cfg: &ModelConfig, vols: &[&Tensor<P>]) -> Result<()> {
    let first = vols[0];
    if first.rank() != 3 {
        return Err(ModelError::GeometryMismatch(format!(
            "expected a [D,H,W] volume, got {:?}",
            first.shape()
        )));
    }
    for v in &vols[1..] {
        if v.shape() != first.shape() {
            return Err(ModelError::GeometryMismatch(format!(
                "modality extents differ: {:?} vs {:?}",
                first.shape(),
                v.shape()
            )));
        }
    }
    cfg.check_extents(&[first.shape()[0], first.shape()[1], first.shape()[2]])
}

fn embed<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    cfg: &ModelConfig,
    stream: &str,
    v: &Tensor<P>,
) -> Result<Tensor<P>> {
    patch_embed(
        tape,
        v,
        cfg.patch,
        bound.get(&format!("{stream}.embed.weight"))?,
        bound.get(&format!("{stream}.embed.bias"))?,
    )
}

fn merge<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    name: &str,
    x: &Tensor<P>,
) -> Result<Tensor<P>> {
    patch_merge(
        tape,
        x,
        bound.get(&format!("{name}.weight"))?,
        bound.get(&format!("{name}.bias"))?,
    )
}

fn expand<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    name: &str,
    x: &Tensor<P>,
) -> Result<Tensor<P>> {
    patch_expand(
        tape,
        x,
        bound.get(&format!("{name}.weight"))?,
        bound.get(&format!("{name}.bias"))?,
    )
}

/// The block sequence of one stage: `blocks_per_stage` (swin, cross) pairs.
/// Self-attention runs unshifted; each cross application uses the
/// half-window shift, so consecutive attention applications alternate
/// between the two window tilings.
fn stage_pair<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    cfg: &ModelConfig,
    section: &str,
    stage: usize,
    mut a: Tensor<P>,
    mut b: Tensor<P>,
    kind: CrossKind,
) -> Result<(Tensor<P>, Tensor<P>)> {
    let heads = cfg.heads_at(stage);
    let shift = cfg.window / 2;
    for j in 0..cfg.blocks_per_stage {
        a = swin_block(
            tape,
            bound,
            &format!("a.{section}.{j}.swin"),
            &a,
            heads,
            cfg.head_dim,
            cfg.window,
            0,
        )?;
        b = swin_block(
            tape,
            bound,
            &format!("b.{section}.{j}.swin"),
            &b,
            heads,
            cfg.head_dim,
            cfg.window,
            0,
        )?;
        let (a2, b2) = cross_transformer_block(
            tape,
            bound,
            &format!("cross_{section}.{j}"),
            &a,
            &b,
            heads,
            cfg.head_dim,
            cfg.window,
            shift,
            cfg.value_source,
            kind,
        )?;
        a = a2;
        b = b2;
    }
    Ok((a, b))
}

/// Stream a walking the same U shape alone: swin blocks as usual, and at each
/// cross site only the phase-2 MLP that stream a owns there.
fn stage_solo<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    cfg: &ModelConfig,
    section: &str,
    stage: usize,
    mut a: Tensor<P>,
) -> Result<Tensor<P>> {
    let heads = cfg.heads_at(stage);
    for j in 0..cfg.blocks_per_stage {
        a = swin_block(
            tape,
            bound,
            &format!("a.{section}.{j}.swin"),
            &a,
            heads,
            cfg.head_dim,
            cfg.window,
            0,
        )?;
        a = cross_site_solo_a(tape, bound, &format!("cross_{section}.{j}"), &a)?;
    }
    Ok(a)
}

/// Concatenate the two streams' features and project to class logits; with a
/// single stream, only the matching rows of the head weight participate.
pub fn seg_head<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    feat_a: &Tensor<P>,
    feat_b: Option<&Tensor<P>>,
) -> Result<Tensor<P>> {
    let weight = bound.get("head.weight")?;
    let bias = bound.get("head.bias")?;
    match feat_b {
        Some(b) => {
            let fused = tape.concat_last(feat_a, b)?;
            linear(tape, &fused, weight, bias)
        }
        None => {
            let f = *feat_a.shape().last().expect("rank checked upstream");
            let rows = tape.gather_rows(weight, Arc::new((0..f).collect()))?;
            linear(tape, feat_a, &rows, bias)
        }
    }
}

/// Two coupled U-shaped streams over pre-aligned volumes; returns logits at
/// voxel resolution. `kind` selects whether cross sites warp the key stream.
pub fn dual_forward<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    cfg: &ModelConfig,
    ct: &Tensor<P>,
    mri: &Tensor<P>,
    kind: CrossKind,
) -> Result<ForwardOut<P>> {
    check_volumes(cfg, &[ct, mri])?;
    let mut a = embed(tape, bound, cfg, "a", ct)?;
    let mut b = embed(tape, bound, cfg, "b", mri)?;

    let mut skips: Vec<(Tensor<P>, Tensor<P>)> = Vec::new();
    for s in 0..cfg.stages {
        let (a2, b2) = stage_pair(tape, bound, cfg, &format!("enc{s}"), s, a, b, kind)?;
        a = a2;
        b = b2;
        if s + 1 < cfg.stages {
            skips.push((a.clone(), b.clone()));
            a = merge(tape, bound, &format!("a.merge{s}"), &a)?;
            b = merge(tape, bound, &format!("b.merge{s}"), &b)?;
        }
    }

    for s in (0..cfg.stages.saturating_sub(1)).rev() {
        a = expand(tape, bound, &format!("a.expand{s}"), &a)?;
        b = expand(tape, bound, &format!("b.expand{s}"), &b)?;
        a = tape.add(&a, &skips[s].0)?;
        b = tape.add(&b, &skips[s].1)?;
        let (a2, b2) = stage_pair(tape, bound, cfg, &format!("dec{s}"), s, a, b, kind)?;
        a = a2;
        b = b2;
    }

    for i in 0..cfg.final_expansions() {
        a = expand(tape, bound, &format!("a.final_expand{i}"), &a)?;
        b = expand(tape, bound, &format!("b.final_expand{i}"), &b)?;
    }

    let logits = seg_head(tape, bound, &a, Some(&b))?;
    Ok(ForwardOut {
        logits,
        feat_a: a,
        feat_b: Some(b),
    })
}

/// Stream a alone over the same U shape and parameter names.
pub fn solo_forward<P: Real>(
    tape: &mut Tape<P>,
    bound: &BoundParams<P>,
    cfg: &ModelConfig,
    ct: &Tensor<P>,
) -> Result<ForwardOut<P>> {
    check_volumes(cfg, &[ct])?;
    let mut a = embed(tape, bound, cfg, "a", ct)?;

    let mut skips: Vec<Tensor<P>> = Vec::new();
    for s in 0..cfg.stages {
        a = stage_solo(tape, bound, cfg, &format!("enc{s}"), s, a)?;
        if s + 1 < cfg.stages {
            skips.push(a.clone());
            a = merge(tape, bound, &format!("a.merge{s}"), &a)?;
        }
    }

    for s in (0..cfg.stages.saturating_sub(1)).rev() {
        a = expand(tape, bound, &format!("a.expand{s}"), &a)?;
        a = tape.add(&a, &skips[s])?;
        a = stage_solo(tape, bound, cfg, &format!("dec{s}"), s, a)?;
    }

    for i in 0..cfg.final_expansions() {
        a = expand(tape, bound, &format!("a.final_expand{i}"), &a)?;
    }

    let logits = seg_head(tape, bound, &a, None)?;
    Ok(ForwardOut {
        logits,
        feat_a: a,
        feat_b: None,
    })
}
