//! Parameter inventory builders. The spec list fixes the name, shape, and
//! initialization of every learnable tensor; store order follows list order.
//! Initialization discipline: truncated normal for mixing projections, ones
//! for norm gains, zeros for all output projections, offset kernels, the
//! relative-position bias tables, the head, and every bias, so each block
//! starts as the identity.

use crate::net::blocks::MLP_RATIO;
use crate::net::config::ModelConfig;
use crate::net::store::{InitKind, ParamSpec};

fn linear_specs(out: &mut Vec<ParamSpec>, prefix: &str, shape: &[usize], init: InitKind) {
    out.push(ParamSpec::new(format!("{prefix}.weight"), shape, init));
    out.push(ParamSpec::new(
        format!("{prefix}.bias"),
        &[shape[1]],
        InitKind::Zeros,
    ));
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, c: usize) {
    out.push(ParamSpec::new(format!("{prefix}.gamma"), &[c], InitKind::Ones));
    out.push(ParamSpec::new(format!("{prefix}.beta"), &[c], InitKind::Zeros));
}

fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, c: usize, heads: usize, window: usize) {
    let table = (2 * window - 1).pow(3);
    for w in ["wq", "wk", "wv"] {
        out.push(ParamSpec::new(
            format!("{prefix}.{w}"),
            &[c, c],
            InitKind::TruncNormal,
        ));
    }
    out.push(ParamSpec::new(format!("{prefix}.out_w"), &[c, c], InitKind::Zeros));
    out.push(ParamSpec::new(format!("{prefix}.out_b"), &[c], InitKind::Zeros));
    out.push(ParamSpec::new(
        format!("{prefix}.bias_table"),
        &[table, heads],
        InitKind::Zeros,
    ));
}

fn mlp_specs(out: &mut Vec<ParamSpec>, ln_prefix: &str, mlp_prefix: &str, c: usize) {
    norm_specs(out, ln_prefix, c);
    out.push(ParamSpec::new(
        format!("{mlp_prefix}.fc1.weight"),
        &[c, MLP_RATIO * c],
        InitKind::TruncNormal,
    ));
    out.push(ParamSpec::new(
        format!("{mlp_prefix}.fc1.bias"),
        &[MLP_RATIO * c],
        InitKind::Zeros,
    ));
    out.push(ParamSpec::new(
        format!("{mlp_prefix}.fc2.weight"),
        &[MLP_RATIO * c, c],
        InitKind::Zeros,
    ));
    out.push(ParamSpec::new(format!("{mlp_prefix}.fc2.bias"), &[c], InitKind::Zeros));
}

pub(crate) fn swin_specs(prefix: &str, c: usize, heads: usize, window: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    norm_specs(&mut out, &format!("{prefix}.ln1"), c);
    attention_specs(&mut out, &format!("{prefix}.attn"), c, heads, window);
    mlp_specs(&mut out, &format!("{prefix}.ln2"), &format!("{prefix}.mlp"), c);
    out
}

pub(crate) fn cross_specs(
    prefix: &str,
    c: usize,
    heads: usize,
    window: usize,
    with_offsets: bool,
) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for phase in ["p1", "p2"] {
        let p = format!("{prefix}.{phase}");
        attention_specs(&mut out, &format!("{p}.attn"), c, heads, window);
        if with_offsets {
            out.push(ParamSpec::new(format!("{p}.off.dw"), &[2 * c, 3, 3, 3], InitKind::Zeros));
            out.push(ParamSpec::new(format!("{p}.off.pw"), &[2 * c, 3], InitKind::Zeros));
            out.push(ParamSpec::new(format!("{p}.off.bias"), &[3], InitKind::Zeros));
        }
        mlp_specs(&mut out, &format!("{p}.mlp_ln"), &format!("{p}.mlp"), c);
    }
    out
}

fn stage_specs(
    out: &mut Vec<ParamSpec>,
    cfg: &ModelConfig,
    section: &str,
    stage: usize,
    with_offsets: bool,
) {
    let c = cfg.channels_at(stage);
    let heads = cfg.heads_at(stage);
    for j in 0..cfg.blocks_per_stage {
        for stream in ["a", "b"] {
            out.extend(swin_specs(
                &format!("{stream}.{section}.{j}.swin"),
                c,
                heads,
                cfg.window,
            ));
        }
        out.extend(cross_specs(
            &format!("cross_{section}.{j}"),
            c,
            heads,
            cfg.window,
            with_offsets,
        ));
    }
}

/// Every parameter of the two-stream network, in store order. `with_offsets`
/// false omits the offset kernels (the frozen-offsets ablation).
pub(crate) fn dual_specs(cfg: &ModelConfig, with_offsets: bool) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let p3 = cfg.patch.pow(3);
    for stream in ["a", "b"] {
        linear_specs(
            &mut out,
            &format!("{stream}.embed"),
            &[p3, cfg.base_channels],
            InitKind::TruncNormal,
        );
    }
    for s in 0..cfg.stages {
        stage_specs(&mut out, cfg, &format!("enc{s}"), s, with_offsets);
        if s + 1 < cfg.stages {
            let c = cfg.channels_at(s);
            for stream in ["a", "b"] {
                linear_specs(
                    &mut out,
                    &format!("{stream}.merge{s}"),
                    &[8 * c, 2 * c],
                    InitKind::TruncNormal,
                );
            }
        }
    }
    for s in (0..cfg.stages.saturating_sub(1)).rev() {
        let c_in = cfg.channels_at(s + 1);
        for stream in ["a", "b"] {
            linear_specs(
                &mut out,
                &format!("{stream}.expand{s}"),
                &[c_in, 4 * c_in],
                InitKind::TruncNormal,
            );
        }
        stage_specs(&mut out, cfg, &format!("dec{s}"), s, with_offsets);
    }
    for i in 0..cfg.final_expansions() {
        let c_in = cfg.base_channels >> i;
        for stream in ["a", "b"] {
            linear_specs(
                &mut out,
                &format!("{stream}.final_expand{i}"),
                &[c_in, 4 * c_in],
                InitKind::TruncNormal,
            );
        }
    }
    linear_specs(
        &mut out,
        "head",
        &[2 * cfg.final_channels(), cfg.classes],
        InitKind::Zeros,
    );
    out
}

/// Single-stream subset: everything stream a touches, which is the a-side
/// blocks, the phase-2 MLP of each cross site, and the (full-width) head.
pub(crate) fn ct_only_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    dual_specs(cfg, true)
        .into_iter()
        .filter(|s| {
            s.name.starts_with("a.")
                || s.name.starts_with("head.")
                || (s.name.starts_with("cross_") && s.name.contains(".p2.mlp"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_inventory_is_consistent() {
        let cfg = ModelConfig::default();
        let specs = dual_specs(&cfg, true);
        let mut names = std::collections::HashSet::new();
        for s in &specs {
            assert!(names.insert(s.name.clone()), "duplicate {}", s.name);
            assert!(!s.shape.is_empty());
        }
        // Two streams, three encoder stages, two decoder stages, head.
        assert!(names.contains("a.embed.weight"));
        assert!(names.contains("b.enc2.0.swin.attn.wq"));
        assert!(names.contains("cross_dec0.0.p1.off.dw"));
        assert!(names.contains("a.final_expand1.weight"));
        assert!(names.contains("head.bias"));
        assert!(!names.contains("a.merge2.weight"));
    }

    #[test]
    fn frozen_inventory_drops_only_offsets() {
        let cfg = ModelConfig::default();
        let with: Vec<_> = dual_specs(&cfg, true).into_iter().map(|s| s.name).collect();
        let without: Vec<_> = dual_specs(&cfg, false).into_iter().map(|s| s.name).collect();
        let dropped: Vec<_> = with.iter().filter(|n| !without.contains(n)).collect();
        assert!(!dropped.is_empty());
        assert!(dropped.iter().all(|n| n.contains(".off.")));
        assert!(without.iter().all(|n| !n.contains(".off.")));
    }

    #[test]
    fn single_stream_inventory_is_a_strict_subset() {
        let cfg = ModelConfig::default();
        let dual: std::collections::HashSet<_> =
            dual_specs(&cfg, true).into_iter().map(|s| s.name).collect();
        let solo = ct_only_specs(&cfg);
        assert!(solo.iter().all(|s| dual.contains(&s.name)));
        assert!(solo.iter().any(|s| s.name == "cross_enc0.0.p2.mlp.fc1.weight"));
        assert!(solo.iter().all(|s| !s.name.starts_with("b.")));
        assert!(solo.iter().all(|s| !s.name.contains(".p1.")));
        assert!(solo.iter().all(|s| !s.name.contains(".attn.") || s.name.contains("a.")));
    }

    #[test]
    fn head_projection_starts_at_zero() {
        let cfg = ModelConfig::default();
        let specs = dual_specs(&cfg, true);
        let head = specs.iter().find(|s| s.name == "head.weight").unwrap();
        assert_eq!(head.init, InitKind::Zeros);
        assert_eq!(head.shape, vec![12, 8]);
    }
}
