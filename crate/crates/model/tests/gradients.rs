//! Central-difference checks for every differentiable building block and for
//! the assembled network. Weights are drawn small and away from clamp or
//! kink points so the secant slope is trustworthy.

use micseg_core::seeds::{rng_stream, DOMAIN_CASE};
use micseg_core::Tensor;
use micseg_model::attn::attention::w_msa;
use micseg_model::attn::deform::deformable_cross_attention;
use micseg_model::attn::params::AttentionParams;
use micseg_model::attn::window::window_partition;
use micseg_model::fdcheck::{central_difference, weighted_scalar_loss, FdReport};
use micseg_model::net::{make_variant, ModelConfig};
use micseg_model::nn::{
    depthwise_separable_conv3d, layer_norm, patch_embed, patch_expand, patch_merge,
    trilinear_sample, ConvKernel3D,
};
use micseg_model::{ParameterStore, ValueSource};

const TOL: f64 = 1e-4;

fn assert_pass(report: &FdReport) {
    assert!(
        report.passes(TOL),
        "worst rel {} at {}[{}]: analytic {} vs numeric {} over {} components",
        report.worst_rel,
        report.worst_param,
        report.worst_index,
        report.analytic_at_worst,
        report.numeric_at_worst,
        report.checked
    );
}

fn rand_param(store: &mut ParameterStore<f64>, name: &str, shape: &[usize], scale: f64, k: u64) {
    let mut rng = rng_stream(k, DOMAIN_CASE, 0);
    store
        .insert(name, Tensor::rand_uniform(shape, -scale, scale, &mut rng))
        .unwrap();
}

#[test]
fn layer_norm_gradients() {
    let mut store = ParameterStore::new();
    rand_param(&mut store, "x", &[2, 3, 4], 1.0, 1);
    rand_param(&mut store, "gamma", &[4], 0.8, 2);
    rand_param(&mut store, "beta", &[4], 0.5, 3);
    let report = central_difference(
        &mut store,
        |tape, bound| {
            let y = layer_norm(tape, bound.get("x")?, bound.get("gamma")?, bound.get("beta")?)?;
            weighted_scalar_loss(tape, &y, 11)
        },
        0,
        21,
    )
    .unwrap();
    assert_pass(&report);
}

#[test]
fn separable_conv_gradients() {
    let mut store = ParameterStore::new();
    rand_param(&mut store, "x", &[3, 3, 3, 2], 1.0, 4);
    rand_param(&mut store, "dw", &[2, 3, 3, 3], 0.4, 5);
    rand_param(&mut store, "pw", &[2, 3], 0.4, 6);
    rand_param(&mut store, "bias", &[3], 0.3, 7);
    let report = central_difference(
        &mut store,
        |tape, bound| {
            let kernel = ConvKernel3D::new(
                bound.get("dw")?.clone(),
                bound.get("pw")?.clone(),
                bound.get("bias")?.clone(),
            )?;
            let y = depthwise_separable_conv3d(tape, bound.get("x")?, &kernel)?;
            weighted_scalar_loss(tape, &y, 12)
        },
        0,
        22,
    )
    .unwrap();
    assert_pass(&report);
}

#[test]
fn trilinear_gradients_for_features_and_coordinates() {
    let mut store = ParameterStore::new();
    rand_param(&mut store, "x", &[3, 3, 3, 2], 1.0, 8);
    let mut rng = rng_stream(9, DOMAIN_CASE, 0);
    let coords = Tensor::rand_uniform(&[3, 3, 3, 3], 0.35, 1.45, &mut rng);
    store.insert("coords", coords).unwrap();
    let report = central_difference(
        &mut store,
        |tape, bound| {
            let y = trilinear_sample(tape, bound.get("x")?, bound.get("coords")?)?;
            weighted_scalar_loss(tape, &y, 13)
        },
        0,
        23,
    )
    .unwrap();
    assert_pass(&report);
}

#[test]
fn patch_op_gradients() {
    let mut store = ParameterStore::new();
    rand_param(&mut store, "vol", &[4, 4, 4], 1.0, 10);
    rand_param(&mut store, "ew", &[8, 3], 0.4, 11);
    rand_param(&mut store, "eb", &[3], 0.3, 12);
    let report = central_difference(
        &mut store,
        |tape, bound| {
            let y = patch_embed(tape, bound.get("vol")?, 2, bound.get("ew")?, bound.get("eb")?)?;
            weighted_scalar_loss(tape, &y, 14)
        },
        0,
        24,
    )
    .unwrap();
    assert_pass(&report);

    let mut store = ParameterStore::new();
    rand_param(&mut store, "x", &[2, 2, 2, 2], 1.0, 13);
    rand_param(&mut store, "mw", &[16, 4], 0.4, 14);
    rand_param(&mut store, "mb", &[4], 0.3, 15);
    let report = central_difference(
        &mut store,
        |tape, bound| {
            let y = patch_merge(tape, bound.get("x")?, bound.get("mw")?, bound.get("mb")?)?;
            weighted_scalar_loss(tape, &y, 15)
        },
        0,
        25,
    )
    .unwrap();
    assert_pass(&report);

    let mut store = ParameterStore::new();
    rand_param(&mut store, "x", &[2, 2, 2, 4], 1.0, 16);
    rand_param(&mut store, "xw", &[4, 16], 0.4, 17);
    rand_param(&mut store, "xb", &[16], 0.3, 18);
    let report = central_difference(
        &mut store,
        |tape, bound| {
            let y = patch_expand(tape, bound.get("x")?, bound.get("xw")?, bound.get("xb")?)?;
            weighted_scalar_loss(tape, &y, 16)
        },
        0,
        26,
    )
    .unwrap();
    assert_pass(&report);
}

fn attention_from(bound: &micseg_model::net::BoundParams<f64>) -> AttentionParams<f64> {
    AttentionParams::new(
        bound.get("wq").unwrap().clone(),
        bound.get("wk").unwrap().clone(),
        bound.get("wv").unwrap().clone(),
        bound.get("ow").unwrap().clone(),
        bound.get("ob").unwrap().clone(),
        bound.get("table").unwrap().clone(),
        2,
        2,
        2,
    )
    .unwrap()
}

#[test]
fn windowed_self_attention_gradients() {
    let mut store = ParameterStore::new();
    rand_param(&mut store, "x", &[4, 4, 4, 4], 0.8, 20);
    for (name, shape) in [
        ("wq", &[4usize, 4][..]),
        ("wk", &[4, 4]),
        ("wv", &[4, 4]),
        ("ow", &[4, 4]),
    ] {
        rand_param(&mut store, name, shape, 0.4, 1000 + name.len() as u64 * 7);
    }
    rand_param(&mut store, "ob", &[4], 0.3, 30);
    rand_param(&mut store, "table", &[27, 2], 0.3, 31);
    let report = central_difference(
        &mut store,
        |tape, bound| {
            let p = attention_from(bound);
            let ws = window_partition(tape, bound.get("x")?, 2, 1)?;
            let out = w_msa(tape, &ws, &p)?;
            weighted_scalar_loss(tape, out.tensor(), 17)
        },
        24,
        27,
    )
    .unwrap();
    assert_pass(&report);
}

#[test]
fn deformable_cross_attention_gradients() {
    let mut store = ParameterStore::new();
    rand_param(&mut store, "a", &[4, 4, 4, 2], 0.8, 40);
    rand_param(&mut store, "b", &[4, 4, 4, 2], 0.8, 41);
    rand_param(&mut store, "dw", &[4, 3, 3, 3], 0.12, 42);
    rand_param(&mut store, "pw", &[4, 3], 0.12, 43);
    rand_param(&mut store, "kb", &[3], 0.1, 44);
    for (name, k) in [("wq", 45u64), ("wk", 46), ("wv", 47), ("ow", 48)] {
        rand_param(&mut store, name, &[2, 2], 0.4, k);
    }
    rand_param(&mut store, "ob", &[2], 0.3, 49);
    rand_param(&mut store, "table", &[27, 1], 0.3, 50);
    let report = central_difference(
        &mut store,
        |tape, bound| {
            let p = AttentionParams::new(
                bound.get("wq")?.clone(),
                bound.get("wk")?.clone(),
                bound.get("wv")?.clone(),
                bound.get("ow")?.clone(),
                bound.get("ob")?.clone(),
                bound.get("table")?.clone(),
                1,
                2,
                2,
            )?;
            let kernel = ConvKernel3D::new(
                bound.get("dw")?.clone(),
                bound.get("pw")?.clone(),
                bound.get("kb")?.clone(),
            )?;
            let out = deformable_cross_attention(
                tape,
                bound.get("a")?,
                bound.get("b")?,
                &p,
                &kernel,
                2,
                1,
                ValueSource::B,
            )?;
            weighted_scalar_loss(tape, &out, 18)
        },
        16,
        28,
    )
    .unwrap();
    assert_pass(&report);
}

#[test]
fn assembled_network_gradients() {
    let cfg = ModelConfig {
        patch: 2,
        base_channels: 4,
        stages: 2,
        blocks_per_stage: 1,
        window: 2,
        head_dim: 2,
        classes: 3,
        value_source: ValueSource::B,
        seed: 51,
    };
    cfg.validate().unwrap();
    let variant = make_variant::<f64>("dual").unwrap();
    let mut store = variant.init_params(&cfg).unwrap();
    let mut rng = rng_stream(52, DOMAIN_CASE, 1);
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    for name in &names {
        let shape: Vec<usize> = store.get(name).unwrap().shape().to_vec();
        store
            .set(name, Tensor::rand_uniform(&shape, -0.08, 0.08, &mut rng))
            .unwrap();
    }
    let mut vol_rng = rng_stream(53, DOMAIN_CASE, 2);
    let ct = Tensor::rand_uniform(&[8, 8, 8], -1.0, 1.0, &mut vol_rng);
    let mri = Tensor::rand_uniform(&[8, 8, 8], -1.0, 1.0, &mut vol_rng);

    let report = central_difference(
        &mut store,
        |tape, bound| {
            let out = variant.forward(tape, bound, &cfg, &ct, &mri)?;
            weighted_scalar_loss(tape, &out.logits, 19)
        },
        2,
        29,
    )
    .unwrap();
    assert_pass(&report);
}
