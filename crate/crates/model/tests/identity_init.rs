//! At initialization every attention output projection and every MLP second
//! layer is zero, so all residual branches vanish: each stream must pass its
//! input through untouched, the two streams must not leak into each other,
//! and removing the second stream or the offset kernels must change nothing.

use micseg_core::seeds::{rng_stream, DOMAIN_CASE};
use micseg_core::{Tape, Tensor};
use micseg_model::net::{make_variant, ModelConfig, ModelVariant};
use micseg_model::ValueSource;

fn small_config() -> ModelConfig {
    ModelConfig {
        patch: 2,
        base_channels: 4,
        stages: 2,
        blocks_per_stage: 2,
        window: 2,
        head_dim: 2,
        classes: 4,
        value_source: ValueSource::B,
        seed: 3,
    }
}

fn volume(seed_index: u64) -> Tensor<f64> {
    let mut rng = rng_stream(29, DOMAIN_CASE, seed_index);
    Tensor::rand_uniform(&[8, 8, 8], -1.5, 1.5, &mut rng)
}

fn forward(
    variant: &dyn ModelVariant<f64>,
    cfg: &ModelConfig,
    ct: &Tensor<f64>,
    mri: &Tensor<f64>,
) -> micseg_model::net::ForwardOut<f64> {
    let store = variant.init_params(cfg).unwrap();
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape).unwrap();
    variant.forward(&mut tape, &bound, cfg, ct, mri).unwrap()
}

#[test]
fn streams_are_decoupled_at_init() {
    let cfg = small_config();
    let dual = make_variant::<f64>("dual").unwrap();
    let ct = volume(0);
    let mri_one = volume(1);
    let mri_two = volume(2);
    let ct_other = volume(3);

    let base = forward(dual.as_ref(), &cfg, &ct, &mri_one);
    let swapped_mri = forward(dual.as_ref(), &cfg, &ct, &mri_two);
    assert!(
        base.feat_a.bitwise_eq(&swapped_mri.feat_a),
        "second stream leaked into the first at init"
    );

    let swapped_ct = forward(dual.as_ref(), &cfg, &ct_other, &mri_one);
    assert!(
        base.feat_b
            .as_ref()
            .unwrap()
            .bitwise_eq(swapped_ct.feat_b.as_ref().unwrap()),
        "first stream leaked into the second at init"
    );
}

#[test]
fn single_stream_variant_matches_dual_first_stream_at_init() {
    let cfg = small_config();
    let dual = make_variant::<f64>("dual").unwrap();
    let solo = make_variant::<f64>("ct-only").unwrap();
    let ct = volume(4);
    let mri = volume(5);

    let full = forward(dual.as_ref(), &cfg, &ct, &mri);
    let alone = forward(solo.as_ref(), &cfg, &ct, &mri);
    assert!(alone.feat_b.is_none());
    assert!(
        full.feat_a.bitwise_eq(&alone.feat_a),
        "single-stream features diverge from the dual first stream at init"
    );
    assert!(full.logits.bitwise_eq(&alone.logits));
}

#[test]
fn frozen_offsets_match_dual_at_init() {
    let cfg = small_config();
    let dual = make_variant::<f64>("dual").unwrap();
    let frozen = make_variant::<f64>("frozen-offsets").unwrap();
    let ct = volume(6);
    let mri = volume(7);

    let a = forward(dual.as_ref(), &cfg, &ct, &mri);
    let b = forward(frozen.as_ref(), &cfg, &ct, &mri);
    assert!(a.feat_a.bitwise_eq(&b.feat_a));
    assert!(a
        .feat_b
        .as_ref()
        .unwrap()
        .bitwise_eq(b.feat_b.as_ref().unwrap()));
    assert!(a.logits.bitwise_eq(&b.logits));
}

#[test]
fn logits_are_exactly_zero_at_init() {
    let cfg = small_config();
    for name in micseg_model::variant_names() {
        let variant = make_variant::<f64>(name).unwrap();
        let out = forward(variant.as_ref(), &cfg, &volume(8), &volume(9));
        let zeros = Tensor::zeros(out.logits.shape());
        assert!(
            out.logits.bitwise_eq(&zeros),
            "{name} logits nonzero at init"
        );
    }
}

#[test]
fn value_source_choice_is_invisible_at_init() {
    let mut cfg = small_config();
    let ct = volume(10);
    let mri = volume(11);
    let dual = make_variant::<f64>("dual").unwrap();
    cfg.value_source = ValueSource::B;
    let b = forward(dual.as_ref(), &cfg, &ct, &mri);
    cfg.value_source = ValueSource::A;
    let a = forward(dual.as_ref(), &cfg, &ct, &mri);
    assert!(b.feat_a.bitwise_eq(&a.feat_a));
    assert!(b
        .feat_b
        .as_ref()
        .unwrap()
        .bitwise_eq(a.feat_b.as_ref().unwrap()));
}
