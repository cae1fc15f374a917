//! Training loop, evaluation, and inference drivers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use micseg_core::seeds::{rng_stream, DOMAIN_SHUFFLE};
use micseg_core::{Real, Tape, Tensor};
use micseg_data::{
    crop_labels, normalize_intensity, pad_labels, pad_volume, CasePair, LabelMap, Manifest,
    PadPlan,
};
use micseg_metrics::{report, MetricsReport};
use micseg_model::net::{make_variant, ModelVariant};
use micseg_model::{load_store, save_store, ParameterStore};

use crate::config::TrainConfig;
use crate::error::{Result, TrainError};
use crate::loss::seg_loss;
use crate::optim::{load_optim, save_optim, OptimState, TrainProgress};
use crate::runlog::{LogRecord, RunLog, RUNLOG_NAME};

pub const MODEL_LATEST: &str = "model_latest.micf";
pub const OPTIM_LATEST: &str = "optim_latest.micf";
pub const MODEL_BEST: &str = "model_best.micf";
pub const MODEL_FINAL: &str = "model_final.micf";

/// A case made network-ready once: intensities standardized, grids padded to
/// the model's divisibility requirement, originals kept for scoring.
pub struct PreparedCase<P: Real> {
    pub id: String,
    pub ct: Tensor<P>,
    pub mri: Tensor<P>,
    pub padded_labels: LabelMap,
    pub labels: LabelMap,
    pub plan: PadPlan,
}

pub fn prepare_case<P: Real>(case: &CasePair, pad_multiple: usize) -> Result<PreparedCase<P>> {
    let (ct, _) = pad_volume(&normalize_intensity(&case.ct), pad_multiple)?;
    let (mri, _) = pad_volume(&normalize_intensity(&case.mri), pad_multiple)?;
    let (padded_labels, plan) = pad_labels(&case.labels, pad_multiple)?;
    Ok(PreparedCase {
        id: case.id.clone(),
        ct: ct.to_tensor(),
        mri: mri.to_tensor(),
        padded_labels,
        labels: case.labels.clone(),
        plan,
    })
}

/// Load and prepare one side of the dataset split.
pub fn load_split<P: Real>(
    data_dir: &Path,
    ids: &[String],
    pad_multiple: usize,
) -> Result<Vec<PreparedCase<P>>> {
    let mut cases = Vec::with_capacity(ids.len());
    for id in ids {
        let case = micseg_data::load_case(data_dir, id)?;
        cases.push(prepare_case(&case, pad_multiple)?);
    }
    Ok(cases)
}

/// Highest-scoring class per voxel; ties go to the lowest class index.
pub fn argmax_labels<P: Real>(logits: &Tensor<P>, spacing: [f32; 3]) -> Result<LabelMap> {
    let shape = logits.shape();
    let [d, h, w, k] = [shape[0], shape[1], shape[2], shape[3]];
    let data = logits.data();
    let mut out = vec![0u8; d * h * w];
    for v in 0..d * h * w {
        let row = &data[v * k..(v + 1) * k];
        let mut best = 0usize;
        for c in 1..k {
            if row[c] > row[best] {
                best = c;
            }
        }
        out[v] = best as u8;
    }
    Ok(LabelMap::new([d, h, w], spacing, out)?)
}

#[derive(Debug, Clone)]
pub struct CaseEval {
    pub id: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Copy)]
pub struct Aggregate {
    pub cases: usize,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub mean_hd95: f64,
}

/// Arithmetic mean of the per-case foreground means.
pub fn aggregate(evals: &[CaseEval]) -> Aggregate {
    let n = evals.len() as f64;
    Aggregate {
        cases: evals.len(),
        mean_dice: evals.iter().map(|e| e.report.mean_dice).sum::<f64>() / n,
        mean_iou: evals.iter().map(|e| e.report.mean_iou).sum::<f64>() / n,
        mean_hd95: evals.iter().map(|e| e.report.mean_hd95).sum::<f64>() / n,
    }
}

/// Predicted labels on the original (pre-padding) grid.
pub fn predict_labels<P: Real>(
    variant: &dyn ModelVariant<P>,
    store: &ParameterStore<P>,
    cfg: &TrainConfig,
    case: &PreparedCase<P>,
) -> Result<LabelMap> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape)?;
    let out = variant.forward(&mut tape, &bound, &cfg.model, &case.ct, &case.mri)?;
    let padded = argmax_labels(&out.logits, case.labels.spacing())?;
    Ok(crop_labels(&padded, &case.plan)?)
}

pub fn evaluate_cases<P: Real>(
    variant: &dyn ModelVariant<P>,
    store: &ParameterStore<P>,
    cfg: &TrainConfig,
    cases: &[PreparedCase<P>],
) -> Result<Vec<CaseEval>> {
    let mut evals = Vec::with_capacity(cases.len());
    for case in cases {
        let predicted = predict_labels(variant, store, cfg, case)?;
        evals.push(CaseEval {
            id: case.id.clone(),
            report: report(&predicted, &case.labels, cfg.model.classes)?,
        });
    }
    Ok(evals)
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub best_dice: f64,
}

fn save_snapshot<P: Real>(
    store: &ParameterStore<P>,
    optim: &OptimState<P>,
    progress: &TrainProgress,
    cfg_text: &str,
    out_dir: &Path,
    log: &mut RunLog,
) -> Result<()> {
    save_store(store, cfg_text, &out_dir.join(MODEL_LATEST))?;
    save_optim(optim, progress, &out_dir.join(OPTIM_LATEST))?;
    log.append(&LogRecord::Checkpoint {
        epoch: progress.epoch,
        file: MODEL_LATEST.to_owned(),
    })?;
    Ok(())
}

/// Run the full training recipe: batch size 1, Adam, seeded per-epoch
/// shuffling, per-epoch validation, periodic resumable snapshots. `resume`
/// picks up from a directory previously written by this function.
pub fn train<P: Real>(
    cfg: &TrainConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = Manifest::load(data_dir)?;
    if manifest.classes != cfg.model.classes {
        return Err(TrainError::Config(format!(
            "config declares {} classes but the dataset has {}",
            cfg.model.classes, manifest.classes
        )));
    }
    if manifest.split.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let pad = cfg.model.pad_multiple();
    let train_cases: Vec<PreparedCase<P>> = load_split(data_dir, &manifest.split.train, pad)?;
    let val_cases: Vec<PreparedCase<P>> = load_split(data_dir, &manifest.split.test, pad)?;

    let variant = make_variant::<P>(&cfg.variant)?;
    let (mut store, mut optim, mut progress) = match resume {
        None => {
            let store = variant.init_params(&cfg.model)?;
            let optim = OptimState::new(&store, cfg.lr)?;
            (
                store,
                optim,
                TrainProgress {
                    epoch: 0,
                    best_dice: f64::NEG_INFINITY,
                },
            )
        }
        Some(dir) => {
            let (store, _echo) = load_store::<P>(&dir.join(MODEL_LATEST))?;
            let (optim, progress) = load_optim::<P>(&dir.join(OPTIM_LATEST))?;
            (store, optim, progress)
        }
    };

    std::fs::create_dir_all(out_dir)?;
    let cfg_text = cfg.to_text();
    let mut log = RunLog::create(&out_dir.join(RUNLOG_NAME))?;
    let mut step = optim.t;
    let mut final_loss = f64::NAN;

    let start_epoch = progress.epoch;
    for epoch in start_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..train_cases.len()).collect();
        order.shuffle(&mut rng_stream(cfg.model.seed, DOMAIN_SHUFFLE, epoch as u64));

        for idx in order {
            let case = &train_cases[idx];
            let wall = Instant::now();
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape)?;
            let out = variant.forward(&mut tape, &bound, &cfg.model, &case.ct, &case.mri)?;
            let parts = seg_loss(&mut tape, &out.logits, &case.padded_labels, cfg.model.classes)?;
            let loss = parts.total.data()[0].to_f64();
            step += 1;
            if !loss.is_finite() {
                log.append(&LogRecord::Abort {
                    step,
                    reason: format!("non-finite loss {loss} on case {}", case.id),
                })?;
                return Err(TrainError::NonFiniteLoss { step, value: loss });
            }
            let grads = tape.backward(&parts.total)?;
            drop(tape);
            if !grads.all_finite() {
                log.append(&LogRecord::Abort {
                    step,
                    reason: format!("non-finite gradients on case {}", case.id),
                })?;
                return Err(TrainError::NonFiniteGradients { step });
            }
            optim.step(&mut store, &grads)?;
            log.append(&LogRecord::Iter {
                step,
                epoch,
                case: case.id.clone(),
                loss,
                cross_entropy: parts.cross_entropy,
                soft_dice: parts.soft_dice,
            })?;
            println!(
                "step {step} epoch {epoch} case {} loss {loss:.6} ({} ms)",
                case.id,
                wall.elapsed().as_millis()
            );
            final_loss = loss;
        }

        progress.epoch = epoch + 1;
        if !val_cases.is_empty() {
            let evals = evaluate_cases(variant.as_ref(), &store, cfg, &val_cases)?;
            let agg = aggregate(&evals);
            log.append(&LogRecord::Validation {
                epoch,
                mean_dice: agg.mean_dice,
                mean_iou: agg.mean_iou,
                mean_hd95: agg.mean_hd95,
            })?;
            println!(
                "epoch {epoch} validation: dice {:.4} iou {:.4} hd95 {:.3}",
                agg.mean_dice, agg.mean_iou, agg.mean_hd95
            );
            if agg.mean_dice > progress.best_dice {
                progress.best_dice = agg.mean_dice;
                save_store(&store, &cfg_text, &out_dir.join(MODEL_BEST))?;
            }
        }
        if progress.epoch % cfg.checkpoint_every == 0 || progress.epoch == cfg.epochs {
            save_snapshot(&store, &optim, &progress, &cfg_text, out_dir, &mut log)?;
        }
    }

    save_store(&store, &cfg_text, &out_dir.join(MODEL_FINAL))?;
    log.append(&LogRecord::Checkpoint {
        epoch: progress.epoch,
        file: MODEL_FINAL.to_owned(),
    })?;

    Ok(TrainOutcome {
        epochs_run: cfg.epochs - start_epoch,
        steps: step,
        final_loss,
        best_dice: progress.best_dice,
    })
}

/// Checkpoint plus the config it was trained under.
pub fn load_checkpoint<P: Real>(path: &Path) -> Result<(ParameterStore<P>, TrainConfig)> {
    let (store, echo) = load_store::<P>(path)?;
    let cfg = TrainConfig::parse(&echo)?;
    Ok((store, cfg))
}

/// Paths of the split to evaluate.
pub fn split_ids<'m>(manifest: &'m Manifest, split: &str) -> Result<&'m [String]> {
    match split {
        "train" => Ok(&manifest.split.train),
        "test" => Ok(&manifest.split.test),
        other => Err(TrainError::Config(format!(
            "split must be 'train' or 'test', got '{other}'"
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub per_case: Vec<CaseEval>,
    pub aggregate: Aggregate,
}

pub fn evaluate<P: Real>(
    checkpoint: &Path,
    data_dir: &Path,
    split: &str,
) -> Result<EvalOutcome> {
    let (store, cfg) = load_checkpoint::<P>(checkpoint)?;
    let manifest = Manifest::load(data_dir)?;
    if manifest.classes != cfg.model.classes {
        return Err(TrainError::Config(format!(
            "checkpoint expects {} classes but the dataset has {}",
            cfg.model.classes, manifest.classes
        )));
    }
    let ids = split_ids(&manifest, split)?;
    if ids.is_empty() {
        return Err(TrainError::EmptySplit(if split == "train" {
            "train"
        } else {
            "test"
        }));
    }
    let cases: Vec<PreparedCase<P>> = load_split(data_dir, ids, cfg.model.pad_multiple())?;
    let variant = make_variant::<P>(&cfg.variant)?;
    let per_case = evaluate_cases(variant.as_ref(), &store, &cfg, &cases)?;
    let aggregate = aggregate(&per_case);
    Ok(EvalOutcome {
        per_case,
        aggregate,
    })
}

/// Segment one CT/MRI pair with a trained checkpoint; the result keeps the
/// inputs' original extents.
pub fn infer<P: Real>(
    checkpoint: &Path,
    ct_path: &Path,
    mri_path: &Path,
) -> Result<LabelMap> {
    let (store, cfg) = load_checkpoint::<P>(checkpoint)?;
    let ct = micseg_data::read_volume(ct_path)?;
    let mri = micseg_data::read_volume(mri_path)?;
    let extents = ct.extents();
    let spacing = ct.spacing();
    let blank = LabelMap::new(extents, spacing, vec![0u8; extents[0] * extents[1] * extents[2]])?;
    let case = CasePair::new("inference", ct, mri, blank)?;
    let prepared = prepare_case::<P>(&case, cfg.model.pad_multiple())?;
    let variant = make_variant::<P>(&cfg.variant)?;
    predict_labels(variant.as_ref(), &store, &cfg, &prepared)
}

/// The checkpoint files a finished run leaves behind, for tests and tooling.
pub fn run_artifacts(out_dir: &Path) -> Vec<PathBuf> {
    [MODEL_LATEST, OPTIM_LATEST, MODEL_FINAL, MODEL_BEST, RUNLOG_NAME]
        .iter()
        .map(|name| out_dir.join(name))
        .collect()
}
