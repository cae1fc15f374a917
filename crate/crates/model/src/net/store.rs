use indexmap::IndexMap;
use rand_distr::{Distribution, Normal};

use micseg_core::seeds::{rng_stream, DOMAIN_INIT};
use micseg_core::{Real, Tape, Tensor};

use crate::error::{ModelError, Result};

pub const INIT_SIGMA: f64 = 0.02;

/// Ordered name → tensor map holding every learnable weight. Iteration order
/// is insertion order and is the contract for checkpoints and optimizer state.
#[derive(Debug)]
pub struct ParameterStore<P: Real> {
    map: IndexMap<String, Tensor<P>>,
}

impl<P: Real> ParameterStore<P> {
    pub fn new() -> Self {
        ParameterStore {
            map: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<P>) -> Result<()> {
        if self.map.contains_key(name) {
            return Err(ModelError::Config(format!("duplicate parameter '{name}'")));
        }
        self.map.insert(name.to_string(), tensor.detached());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<P>> {
        self.map
            .get(name)
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    /// Replace an existing tensor, keeping its shape (optimizer updates).
    pub fn set(&mut self, name: &str, tensor: Tensor<P>) -> Result<()> {
        let slot = self
            .map
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))?;
        if slot.shape() != tensor.shape() {
            return Err(ModelError::Config(format!(
                "parameter '{name}' update shape {:?} does not match {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor.detached();
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<P>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|k| k.as_str())
    }

    /// Register every tensor on a fresh tape so one forward/backward pass can
    /// reach it; gradient-map keys equal store keys.
    pub fn bind(&self, tape: &mut Tape<P>) -> Result<BoundParams<P>> {
        let mut map = IndexMap::new();
        for (name, tensor) in &self.map {
            let bound = tape.param(name, tensor.clone()).map_err(ModelError::from)?;
            map.insert(name.clone(), bound);
        }
        Ok(BoundParams { map })
    }

    pub fn total_elements(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }
}

impl<P: Real> Default for ParameterStore<P> {
    fn default() -> Self {
        ParameterStore::new()
    }
}

/// Tape-registered view of a store for one forward pass.
pub struct BoundParams<P: Real> {
    map: IndexMap<String, Tensor<P>>,
}

impl<P: Real> BoundParams<P> {
    pub fn get(&self, name: &str) -> Result<&Tensor<P>> {
        self.map
            .get(name)
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Normal(0, 0.02) with samples beyond two standard deviations redrawn.
    TruncNormal,
    Ones,
    Zeros,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: InitKind) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

pub(crate) fn fnv1a(name: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Initialize one tensor from its own stream keyed by (seed, name), so the
/// values a name receives do not depend on which other parameters exist.
fn init_tensor<P: Real>(spec: &ParamSpec, seed: u64) -> Tensor<P> {
    match spec.init {
        InitKind::Zeros => Tensor::zeros(&spec.shape),
        InitKind::Ones => Tensor::full(&spec.shape, P::ONE),
        InitKind::TruncNormal => {
            let mut rng = rng_stream(seed, DOMAIN_INIT, fnv1a(&spec.name));
            let normal = Normal::new(0.0f64, INIT_SIGMA).expect("valid sigma");
            let n: usize = spec.shape.iter().product();
            let data = (0..n)
                .map(|_| loop {
                    let v = normal.sample(&mut rng);
                    if v.abs() <= 2.0 * INIT_SIGMA {
                        break P::from_f64(v);
                    }
                })
                .collect();
            Tensor::from_vec(&spec.shape, data).expect("consistent by construction")
        }
    }
}

pub fn build_store<P: Real>(specs: &[ParamSpec], seed: u64) -> Result<ParameterStore<P>> {
    let mut store = ParameterStore::new();
    for spec in specs {
        store.insert(&spec.name, init_tensor(spec, seed))?;
    }
    Ok(store)
}
