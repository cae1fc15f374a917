//! Finite-difference verification registry. Every differentiable operation in
//! the stack has a named case here; each case draws fresh random inputs per
//! trial and compares the tape's gradients against 64-bit central
//! differences. Cases are strategy objects so the CLI can run one by name or
//! sweep the whole registry.

use std::sync::Arc;

use micseg_core::seeds::{derive_seed, rng_stream, DOMAIN_GRADCHECK};
use micseg_core::{Tape, Tensor};
use micseg_data::LabelMap;
use micseg_model::attn::{
    deformable_cross_attention, w_msa, window_partition, windowed_cross_attention,
    AttentionParams,
};
use micseg_model::fdcheck::{central_difference, weighted_scalar_loss, FdReport};
use micseg_model::net::{make_variant, BoundParams};
use micseg_model::nn::{
    depthwise_conv3d, depthwise_separable_conv3d, layer_norm, linear, patch_embed, patch_expand,
    patch_merge, trilinear_sample, ConvKernel3D,
};
use micseg_model::{ModelConfig, ParameterStore, ValueSource};
use rand::RngExt;

use crate::error::{Result, TrainError};
use crate::loss::seg_loss;

pub const GRADCHECK_TOL: f64 = 1e-4;

/// One verifiable operation. `trial` runs a single randomized check; distinct
/// seeds draw distinct inputs.
pub trait GradCheckCase: Send + Sync {
    fn name(&self) -> &'static str;
    fn trial(&self, seed: u64) -> Result<FdReport>;
}

fn fill(store: &mut ParameterStore<f64>, name: &str, shape: &[usize], lo: f64, hi: f64, seed: u64) {
    let mut rng = rng_stream(seed, DOMAIN_GRADCHECK, 1 + name.len() as u64);
    store
        .insert(name, Tensor::rand_uniform(shape, lo, hi, &mut rng))
        .expect("fresh store");
}

/// Unary tape method applied to one input tensor drawn from [lo, hi].
struct UnaryCase {
    name: &'static str,
    lo: f64,
    hi: f64,
    apply: fn(&mut Tape<f64>, &Tensor<f64>) -> micseg_core::Result<Tensor<f64>>,
}

impl GradCheckCase for UnaryCase {
    fn name(&self) -> &'static str {
        self.name
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "x", &[3, 5], self.lo, self.hi, seed);
        let apply = self.apply;
        Ok(central_difference(
            &mut store,
            |tape, bound| {
                let y = apply(tape, bound.get("x")?)?;
                weighted_scalar_loss(tape, &y, seed)
            },
            0,
            seed,
        )?)
    }
}

/// Binary elementwise tape method on two same-shape inputs.
struct BinaryCase {
    name: &'static str,
    apply: fn(&mut Tape<f64>, &Tensor<f64>, &Tensor<f64>) -> micseg_core::Result<Tensor<f64>>,
}

impl GradCheckCase for BinaryCase {
    fn name(&self) -> &'static str {
        self.name
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "a", &[3, 4], -1.0, 1.0, seed);
        fill(&mut store, "b", &[3, 4], -1.0, 1.0, seed.wrapping_add(101));
        let apply = self.apply;
        Ok(central_difference(
            &mut store,
            |tape, bound| {
                let y = apply(tape, bound.get("a")?, bound.get("b")?)?;
                weighted_scalar_loss(tape, &y, seed)
            },
            0,
            seed,
        )?)
    }
}

struct MatmulCase;

impl GradCheckCase for MatmulCase {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "a", &[3, 4], -1.0, 1.0, seed);
        fill(&mut store, "b", &[4, 2], -1.0, 1.0, seed.wrapping_add(101));
        Ok(central_difference(
            &mut store,
            |tape, bound| {
                let y = tape.matmul(bound.get("a")?, bound.get("b")?)?;
                weighted_scalar_loss(tape, &y, seed)
            },
            0,
            seed,
        )?)
    }
}

/// Gather with repeated indices (exercises gradient accumulation) feeding a
/// concat, so both movement ops are on the differentiated path.
struct MovementCase;

impl GradCheckCase for MovementCase {
    fn name(&self) -> &'static str {
        "gather_concat"
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "x", &[4, 3], -1.0, 1.0, seed);
        fill(&mut store, "y", &[5, 2], -1.0, 1.0, seed.wrapping_add(101));
        let indices = Arc::new(vec![2usize, 0, 2, 3, 1]);
        Ok(central_difference(
            &mut store,
            move |tape, bound| {
                let g = tape.gather_rows(bound.get("x")?, indices.clone())?;
                let joined = tape.concat_last(&g, bound.get("y")?)?;
                let moved = tape.transpose(&joined, &[1, 0])?;
                let flat = tape.reshape(&moved, &[5, 5])?;
                weighted_scalar_loss(tape, &flat, seed)
            },
            0,
            seed,
        )?)
    }
}

struct LinearCase;

impl GradCheckCase for LinearCase {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "x", &[2, 3, 4], -1.0, 1.0, seed);
        fill(&mut store, "w", &[4, 3], -0.6, 0.6, seed.wrapping_add(101));
        fill(&mut store, "b", &[3], -0.4, 0.4, seed.wrapping_add(202));
        Ok(central_difference(
            &mut store,
            |tape, bound| {
                let y = linear(tape, bound.get("x")?, bound.get("w")?, bound.get("b")?)?;
                weighted_scalar_loss(tape, &y, seed)
            },
            0,
            seed,
        )?)
    }
}

struct LayerNormCase;

impl GradCheckCase for LayerNormCase {
    fn name(&self) -> &'static str {
        "layer_norm"
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "x", &[2, 3, 4], -1.2, 1.2, seed);
        fill(&mut store, "gamma", &[4], 0.5, 1.2, seed.wrapping_add(101));
        fill(&mut store, "beta", &[4], -0.4, 0.4, seed.wrapping_add(202));
        Ok(central_difference(
            &mut store,
            |tape, bound| {
                let y = layer_norm(tape, bound.get("x")?, bound.get("gamma")?, bound.get("beta")?)?;
                weighted_scalar_loss(tape, &y, seed)
            },
            0,
            seed,
        )?)
    }
}

struct ConvCase {
    separable: bool,
}

impl ConvCase {
    fn kernel(bound: &BoundParams<f64>) -> Result<ConvKernel3D<f64>> {
        Ok(ConvKernel3D::new(
            bound.get("dw")?.clone(),
            bound.get("pw")?.clone(),
            bound.get("bias")?.clone(),
        )?)
    }
}

impl GradCheckCase for ConvCase {
    fn name(&self) -> &'static str {
        if self.separable {
            "separable_conv"
        } else {
            "depthwise_conv"
        }
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "x", &[3, 3, 3, 2], -1.0, 1.0, seed);
        fill(&mut store, "dw", &[2, 3, 3, 3], -0.4, 0.4, seed.wrapping_add(101));
        if self.separable {
            fill(&mut store, "pw", &[2, 3], -0.4, 0.4, seed.wrapping_add(202));
            fill(&mut store, "bias", &[3], -0.3, 0.3, seed.wrapping_add(303));
        }
        let separable = self.separable;
        Ok(central_difference(
            &mut store,
            move |tape, bound| {
                let y = if separable {
                    let kernel = Self::kernel(bound).expect("kernel shapes fixed");
                    depthwise_separable_conv3d(tape, bound.get("x")?, &kernel)?
                } else {
                    depthwise_conv3d(tape, bound.get("x")?, bound.get("dw")?)?
                };
                weighted_scalar_loss(tape, &y, seed)
            },
            0,
            seed,
        )?)
    }
}

/// Interior, non-integer sampling coordinates keep the FD step away from the
/// trilinear kinks at cell boundaries.
struct TrilinearCase;

impl GradCheckCase for TrilinearCase {
    fn name(&self) -> &'static str {
        "trilinear"
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "x", &[3, 3, 3, 2], -1.0, 1.0, seed);
        let mut rng = rng_stream(seed, DOMAIN_GRADCHECK, 7);
        let n = 27 * 3;
        let coords: Vec<f64> = (0..n)
            .map(|_| {
                // Uniform in [0.35, 0.45] ∪ [0.55, 1.45]: never within h of a
                // grid plane.
                let u: f64 = rng.random_range(0.35..1.35);
                if u < 0.45 {
                    u
                } else {
                    u + 0.1
                }
            })
            .collect();
        store
            .insert("coords", Tensor::from_vec(&[3, 3, 3, 3], coords).unwrap())
            .unwrap();
        Ok(central_difference(
            &mut store,
            |tape, bound| {
                let y = trilinear_sample(tape, bound.get("x")?, bound.get("coords")?)?;
                weighted_scalar_loss(tape, &y, seed)
            },
            0,
            seed,
        )?)
    }
}

struct PatchCase {
    which: PatchKind,
}

enum PatchKind {
    Embed,
    Merge,
    Expand,
}

impl GradCheckCase for PatchCase {
    fn name(&self) -> &'static str {
        match self.which {
            PatchKind::Embed => "patch_embed",
            PatchKind::Merge => "patch_merge",
            PatchKind::Expand => "patch_expand",
        }
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        match self.which {
            PatchKind::Embed => {
                fill(&mut store, "x", &[4, 4, 4], -1.0, 1.0, seed);
                fill(&mut store, "w", &[8, 3], -0.4, 0.4, seed.wrapping_add(101));
                fill(&mut store, "b", &[3], -0.3, 0.3, seed.wrapping_add(202));
            }
            PatchKind::Merge => {
                fill(&mut store, "x", &[2, 2, 2, 2], -1.0, 1.0, seed);
                fill(&mut store, "w", &[16, 4], -0.4, 0.4, seed.wrapping_add(101));
                fill(&mut store, "b", &[4], -0.3, 0.3, seed.wrapping_add(202));
            }
            PatchKind::Expand => {
                fill(&mut store, "x", &[2, 2, 2, 4], -1.0, 1.0, seed);
                fill(&mut store, "w", &[4, 16], -0.4, 0.4, seed.wrapping_add(101));
                fill(&mut store, "b", &[16], -0.3, 0.3, seed.wrapping_add(202));
            }
        }
        let which = match self.which {
            PatchKind::Embed => 0,
            PatchKind::Merge => 1,
            PatchKind::Expand => 2,
        };
        Ok(central_difference(
            &mut store,
            move |tape, bound| {
                let (x, w, b) = (bound.get("x")?, bound.get("w")?, bound.get("b")?);
                let y = match which {
                    0 => patch_embed(tape, x, 2, w, b)?,
                    1 => patch_merge(tape, x, w, b)?,
                    _ => patch_expand(tape, x, w, b)?,
                };
                weighted_scalar_loss(tape, &y, seed)
            },
            0,
            seed,
        )?)
    }
}

fn attention_store(store: &mut ParameterStore<f64>, c: usize, table_heads: usize, seed: u64) {
    for (i, name) in ["wq", "wk", "wv", "ow"].iter().enumerate() {
        fill(store, name, &[c, c], -0.4, 0.4, seed.wrapping_add(101 + i as u64));
    }
    fill(store, "ob", &[c], -0.3, 0.3, seed.wrapping_add(301));
    fill(store, "table", &[27, table_heads], -0.3, 0.3, seed.wrapping_add(302));
}

fn attention_params(bound: &BoundParams<f64>, heads: usize) -> AttentionParams<f64> {
    AttentionParams::new(
        bound.get("wq").unwrap().clone(),
        bound.get("wk").unwrap().clone(),
        bound.get("wv").unwrap().clone(),
        bound.get("ow").unwrap().clone(),
        bound.get("ob").unwrap().clone(),
        bound.get("table").unwrap().clone(),
        heads,
        2,
        2,
    )
    .expect("attention shapes fixed")
}

struct SelfAttentionCase;

impl GradCheckCase for SelfAttentionCase {
    fn name(&self) -> &'static str {
        "self_attention"
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "x", &[4, 4, 4, 4], -0.8, 0.8, seed);
        attention_store(&mut store, 4, 2, seed);
        Ok(central_difference(
            &mut store,
            |tape, bound| {
                let p = attention_params(bound, 2);
                let ws = window_partition(tape, bound.get("x")?, 2, 1)?;
                let out = w_msa(tape, &ws, &p)?;
                weighted_scalar_loss(tape, out.tensor(), seed)
            },
            24,
            seed,
        )?)
    }
}

struct CrossAttentionCase {
    deformable: bool,
}

impl GradCheckCase for CrossAttentionCase {
    fn name(&self) -> &'static str {
        if self.deformable {
            "deformable_attention"
        } else {
            "cross_attention"
        }
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "a", &[4, 4, 4, 2], -0.8, 0.8, seed);
        fill(&mut store, "b", &[4, 4, 4, 2], -0.8, 0.8, seed.wrapping_add(77));
        attention_store(&mut store, 2, 1, seed);
        if self.deformable {
            fill(&mut store, "dw", &[4, 3, 3, 3], -0.12, 0.12, seed.wrapping_add(401));
            fill(&mut store, "pw", &[4, 3], -0.12, 0.12, seed.wrapping_add(402));
            fill(&mut store, "kb", &[3], -0.1, 0.1, seed.wrapping_add(403));
        }
        let deformable = self.deformable;
        Ok(central_difference(
            &mut store,
            move |tape, bound| {
                let p = attention_params(bound, 1);
                let (a, b) = (bound.get("a")?, bound.get("b")?);
                let out = if deformable {
                    let kernel = ConvKernel3D::new(
                        bound.get("dw")?.clone(),
                        bound.get("pw")?.clone(),
                        bound.get("kb")?.clone(),
                    )?;
                    deformable_cross_attention(tape, a, b, &p, &kernel, 2, 1, ValueSource::B)?
                } else {
                    windowed_cross_attention(tape, a, b, &p, 2, 1, ValueSource::B)?
                };
                weighted_scalar_loss(tape, &out, seed)
            },
            16,
            seed,
        )?)
    }
}

struct SegLossCase;

impl GradCheckCase for SegLossCase {
    fn name(&self) -> &'static str {
        "seg_loss"
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let mut store = ParameterStore::new();
        fill(&mut store, "logits", &[4, 4, 4, 3], -1.5, 1.5, seed);
        let mut rng = rng_stream(seed, DOMAIN_GRADCHECK, 9);
        let data: Vec<u8> = (0..64).map(|_| rng.random_range(0..3u8)).collect();
        let labels = LabelMap::new([4, 4, 4], [1.0; 3], data).expect("valid labels");
        Ok(central_difference(
            &mut store,
            move |tape, bound| {
                let parts = seg_loss(tape, bound.get("logits")?, &labels, 3)
                    .expect("shapes and classes fixed");
                Ok(parts.total)
            },
            48,
            seed,
        )?)
    }
}

/// The assembled dual-stream network, re-randomized away from the zero
/// initialization so every parameter carries gradient.
struct NetworkCase;

impl GradCheckCase for NetworkCase {
    fn name(&self) -> &'static str {
        "network"
    }
    fn trial(&self, seed: u64) -> Result<FdReport> {
        let cfg = ModelConfig {
            patch: 2,
            base_channels: 4,
            stages: 2,
            blocks_per_stage: 1,
            window: 2,
            head_dim: 2,
            classes: 3,
            value_source: ValueSource::B,
            seed,
        };
        cfg.validate()?;
        let variant = make_variant::<f64>("dual")?;
        let mut store = variant.init_params(&cfg)?;
        let mut rng = rng_stream(seed, DOMAIN_GRADCHECK, 11);
        let names: Vec<String> = store.names().map(str::to_owned).collect();
        for name in &names {
            let shape = store.get(name)?.shape().to_vec();
            store.set(name, Tensor::rand_uniform(&shape, -0.08, 0.08, &mut rng))?;
        }
        let ct = Tensor::rand_uniform(&[8, 8, 8], -1.0, 1.0, &mut rng);
        let mri = Tensor::rand_uniform(&[8, 8, 8], -1.0, 1.0, &mut rng);
        Ok(central_difference(
            &mut store,
            move |tape, bound| {
                let out = variant.forward(tape, bound, &cfg, &ct, &mri)?;
                weighted_scalar_loss(tape, &out.logits, seed)
            },
            1,
            seed,
        )?)
    }
}

pub fn registry() -> Vec<Box<dyn GradCheckCase>> {
    vec![
        Box::new(BinaryCase { name: "add", apply: |t, a, b| t.add(a, b) }),
        Box::new(BinaryCase { name: "sub", apply: |t, a, b| t.sub(a, b) }),
        Box::new(BinaryCase { name: "mul", apply: |t, a, b| t.mul(a, b) }),
        Box::new(UnaryCase { name: "neg", lo: -1.0, hi: 1.0, apply: |t, x| Ok(t.neg(x)) }),
        Box::new(UnaryCase { name: "scale", lo: -1.0, hi: 1.0, apply: |t, x| Ok(t.scale(x, 1.7)) }),
        Box::new(UnaryCase { name: "gelu", lo: -2.0, hi: 2.0, apply: |t, x| t.gelu(x) }),
        Box::new(UnaryCase { name: "exp", lo: -1.5, hi: 1.5, apply: |t, x| t.exp(x) }),
        Box::new(UnaryCase { name: "sqrt", lo: 0.3, hi: 2.0, apply: |t, x| t.sqrt(x) }),
        Box::new(UnaryCase { name: "recip", lo: 0.4, hi: 2.0, apply: |t, x| t.recip(x) }),
        Box::new(UnaryCase { name: "softmax", lo: -2.0, hi: 2.0, apply: |t, x| t.softmax(x) }),
        Box::new(UnaryCase { name: "sum", lo: -1.0, hi: 1.0, apply: |t, x| Ok(t.sum_all(x)) }),
        Box::new(UnaryCase { name: "mean", lo: -1.0, hi: 1.0, apply: |t, x| Ok(t.mean_all(x)) }),
        Box::new(UnaryCase { name: "max", lo: -1.0, hi: 1.0, apply: |t, x| Ok(t.max_all(x)) }),
        Box::new(UnaryCase { name: "sum_axis", lo: -1.0, hi: 1.0, apply: |t, x| t.sum_axis(x, 0) }),
        Box::new(UnaryCase { name: "mean_axis", lo: -1.0, hi: 1.0, apply: |t, x| t.mean_axis(x, 1) }),
        Box::new(UnaryCase { name: "reshape", lo: -1.0, hi: 1.0, apply: |t, x| t.reshape(x, &[5, 3]) }),
        Box::new(UnaryCase { name: "transpose", lo: -1.0, hi: 1.0, apply: |t, x| t.transpose(x, &[1, 0]) }),
        Box::new(MatmulCase),
        Box::new(MovementCase),
        Box::new(LinearCase),
        Box::new(LayerNormCase),
        Box::new(ConvCase { separable: false }),
        Box::new(ConvCase { separable: true }),
        Box::new(TrilinearCase),
        Box::new(PatchCase { which: PatchKind::Embed }),
        Box::new(PatchCase { which: PatchKind::Merge }),
        Box::new(PatchCase { which: PatchKind::Expand }),
        Box::new(SelfAttentionCase),
        Box::new(CrossAttentionCase { deformable: false }),
        Box::new(CrossAttentionCase { deformable: true }),
        Box::new(SegLossCase),
        Box::new(NetworkCase),
    ]
}

pub fn case_names() -> Vec<&'static str> {
    registry().iter().map(|c| c.name()).collect()
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_param: String,
    pub passed: bool,
}

/// Run one named case, or all of them for `op == "all"`. Every (case, trial)
/// pair gets its own derived seed, so reports are reproducible for a given
/// root seed.
pub fn run_cases(op: &str, trials: usize, seed: u64, tol: f64) -> Result<Vec<CaseOutcome>> {
    let all = registry();
    let selected: Vec<&dyn GradCheckCase> = if op == "all" {
        all.iter().map(Box::as_ref).collect()
    } else {
        match all.iter().find(|c| c.name() == op) {
            Some(case) => vec![case.as_ref()],
            None => {
                return Err(TrainError::UnknownCase {
                    name: op.to_owned(),
                    known: case_names().join(", "),
                })
            }
        }
    };
    let mut outcomes = Vec::with_capacity(selected.len());
    for (ci, case) in selected.iter().enumerate() {
        let mut worst_rel = 0.0;
        let mut worst_param = String::new();
        let mut checked = 0;
        for trial in 0..trials {
            let report = case.trial(derive_seed(seed, ci as u64, trial as u64))?;
            checked += report.checked;
            if report.worst_rel > worst_rel {
                worst_rel = report.worst_rel;
                worst_param = format!("{}[{}]", report.worst_param, report.worst_index);
            }
        }
        outcomes.push(CaseOutcome {
            name: case.name(),
            trials,
            checked,
            worst_rel,
            worst_param,
            passed: worst_rel < tol,
        });
    }
    Ok(outcomes)
}
