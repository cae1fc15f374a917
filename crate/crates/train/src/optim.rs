//! Bias-corrected Adam and its resumable state.

use std::path::Path;

use micseg_core::{GradientMap, Real, Tensor};
use micseg_model::{load_store, save_store, ParameterStore};

use crate::error::{Result, TrainError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter, plus the shared step counter.
pub struct OptimState<P: Real> {
    pub lr: f64,
    pub t: u64,
    m: ParameterStore<P>,
    v: ParameterStore<P>,
}

impl<P: Real> OptimState<P> {
    pub fn new(params: &ParameterStore<P>, lr: f64) -> Result<Self> {
        let mut m = ParameterStore::new();
        let mut v = ParameterStore::new();
        for (name, tensor) in params.iter() {
            m.insert(name, Tensor::zeros(tensor.shape()))?;
            v.insert(name, Tensor::zeros(tensor.shape()))?;
        }
        Ok(OptimState { lr, t: 0, m, v })
    }

    /// One Adam update over every parameter; the step counter advances once
    /// per call.
    pub fn step(&mut self, params: &mut ParameterStore<P>, grads: &GradientMap<P>) -> Result<()> {
        self.t += 1;
        let b1 = P::from_f64(ADAM_BETA1);
        let b2 = P::from_f64(ADAM_BETA2);
        let one = P::ONE;
        let bias1 = P::from_f64(1.0 - ADAM_BETA1.powi(self.t as i32));
        let bias2 = P::from_f64(1.0 - ADAM_BETA2.powi(self.t as i32));
        let lr = P::from_f64(self.lr);
        let eps = P::from_f64(ADAM_EPS);

        let names: Vec<String> = params.names().map(str::to_owned).collect();
        for name in &names {
            let grad = grads
                .get(name)
                .ok_or_else(|| TrainError::MissingGradient(name.clone()))?;
            let mut p = params.get(name)?.data().to_vec();
            let mut m = self.m.get(name)?.data().to_vec();
            let mut v = self.v.get(name)?.data().to_vec();
            let g = grad.data();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            let shape = params.get(name)?.shape().to_vec();
            params.set(name, Tensor::from_vec(&shape, p)?)?;
            self.m.set(name, Tensor::from_vec(&shape, m)?)?;
            self.v.set(name, Tensor::from_vec(&shape, v)?)?;
        }
        Ok(())
    }
}

/// Progress carried alongside the optimizer for resumption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainProgress {
    /// Epochs fully completed.
    pub epoch: usize,
    /// Best validation mean Dice seen so far; NEG_INFINITY before any.
    pub best_dice: f64,
}

/// Both moment stores in one archive, names prefixed `m.` / `v.`; counters in
/// the archive's config text.
pub fn save_optim<P: Real>(
    state: &OptimState<P>,
    progress: &TrainProgress,
    path: &Path,
) -> Result<()> {
    let mut packed = ParameterStore::new();
    for (name, tensor) in state.m.iter() {
        packed.insert(&format!("m.{name}"), tensor.clone())?;
    }
    for (name, tensor) in state.v.iter() {
        packed.insert(&format!("v.{name}"), tensor.clone())?;
    }
    let meta = format!(
        "t = {}\nlr = {}\nepoch = {}\nbest_dice = {}\n",
        state.t, state.lr, progress.epoch, progress.best_dice
    );
    save_store(&packed, &meta, path)?;
    Ok(())
}

pub fn load_optim<P: Real>(path: &Path) -> Result<(OptimState<P>, TrainProgress)> {
    let (packed, meta) = load_store::<P>(path)?;
    let mut t = None;
    let mut lr = None;
    let mut epoch = None;
    let mut best = None;
    for line in meta.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let value = value.trim();
        match key.trim() {
            "t" => t = value.parse::<u64>().ok(),
            "lr" => lr = value.parse::<f64>().ok(),
            "epoch" => epoch = value.parse::<usize>().ok(),
            "best_dice" => best = value.parse::<f64>().ok(),
            _ => {}
        }
    }
    let (t, lr, epoch, best) = (|| Some((t?, lr?, epoch?, best?)))()
        .ok_or_else(|| TrainError::Config(format!("optimizer file {path:?} has bad metadata")))?;

    let mut m = ParameterStore::new();
    let mut v = ParameterStore::new();
    for (name, tensor) in packed.iter() {
        if let Some(base) = name.strip_prefix("m.") {
            m.insert(base, tensor.clone())?;
        } else if let Some(base) = name.strip_prefix("v.") {
            v.insert(base, tensor.clone())?;
        } else {
            return Err(TrainError::Config(format!(
                "unexpected tensor '{name}' in optimizer file"
            )));
        }
    }
    Ok((
        OptimState { lr, t, m, v },
        TrainProgress {
            epoch,
            best_dice: best,
        },
    ))
}
