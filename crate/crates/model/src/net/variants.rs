use micseg_core::{Real, Tape, Tensor};

use crate::error::{ModelError, Result};
use crate::net::blocks::CrossKind;
use crate::net::config::ModelConfig;
use crate::net::model::{dual_forward, solo_forward, ForwardOut};
use crate::net::specs::{ct_only_specs, dual_specs};
use crate::net::store::{build_store, BoundParams, ParameterStore};

/// One trainable network shape. A variant owns its parameter inventory and
/// its forward pass; shared names receive identical initial values across
/// variants, so ablations compare like for like.
pub trait ModelVariant<P: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn init_params(&self, cfg: &ModelConfig) -> Result<ParameterStore<P>>;

    /// Forward over pre-aligned volumes. Variants without a second stream
    /// ignore `mri`.
    fn forward(
        &self,
        tape: &mut Tape<P>,
        bound: &BoundParams<P>,
        cfg: &ModelConfig,
        ct: &Tensor<P>,
        mri: &Tensor<P>,
    ) -> Result<ForwardOut<P>>;
}

/// Both streams with offset-warped cross-attention.
struct DualStream;

impl<P: Real> ModelVariant<P> for DualStream {
    fn name(&self) -> &'static str {
        "dual"
    }

    fn init_params(&self, cfg: &ModelConfig) -> Result<ParameterStore<P>> {
        build_store(&dual_specs(cfg, true), cfg.seed)
    }

    fn forward(
        &self,
        tape: &mut Tape<P>,
        bound: &BoundParams<P>,
        cfg: &ModelConfig,
        ct: &Tensor<P>,
        mri: &Tensor<P>,
    ) -> Result<ForwardOut<P>> {
        dual_forward(tape, bound, cfg, ct, mri, CrossKind::Deformable)
    }
}

/// Stream a alone; the ablation baseline without the second modality.
struct CtOnly;

impl<P: Real> ModelVariant<P> for CtOnly {
    fn name(&self) -> &'static str {
        "ct-only"
    }

    fn init_params(&self, cfg: &ModelConfig) -> Result<ParameterStore<P>> {
        build_store(&ct_only_specs(cfg), cfg.seed)
    }

    fn forward(
        &self,
        tape: &mut Tape<P>,
        bound: &BoundParams<P>,
        cfg: &ModelConfig,
        ct: &Tensor<P>,
        _mri: &Tensor<P>,
    ) -> Result<ForwardOut<P>> {
        solo_forward(tape, bound, cfg, ct)
    }
}

/// Both streams, cross-attention matching on the raw lattice: no offset
/// kernels exist, which is exactly offsets frozen at zero.
struct FrozenOffsets;

impl<P: Real> ModelVariant<P> for FrozenOffsets {
    fn name(&self) -> &'static str {
        "frozen-offsets"
    }

    fn init_params(&self, cfg: &ModelConfig) -> Result<ParameterStore<P>> {
        build_store(&dual_specs(cfg, false), cfg.seed)
    }

    fn forward(
        &self,
        tape: &mut Tape<P>,
        bound: &BoundParams<P>,
        cfg: &ModelConfig,
        ct: &Tensor<P>,
        mri: &Tensor<P>,
    ) -> Result<ForwardOut<P>> {
        dual_forward(tape, bound, cfg, ct, mri, CrossKind::Plain)
    }
}

pub fn variant_names() -> &'static [&'static str] {
    &["dual", "ct-only", "frozen-offsets"]
}

pub fn make_variant<P: Real>(name: &str) -> Result<Box<dyn ModelVariant<P>>> {
    match name {
        "dual" => Ok(Box::new(DualStream)),
        "ct-only" => Ok(Box::new(CtOnly)),
        "frozen-offsets" => Ok(Box::new(FrozenOffsets)),
        other => Err(ModelError::Config(format!(
            "unknown model variant '{other}' (expected one of {})",
            variant_names().join(", ")
        ))),
    }
}
