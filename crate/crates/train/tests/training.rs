//! End-to-end training behavior on a small handcrafted dataset: run-to-run
//! determinism, exact checkpoint resume, abort on poisoned state, and the
//! evaluate/infer paths.

use std::fs;
use std::path::Path;

use micseg_core::seeds::rng_stream;
use micseg_data::{
    save_case, CasePair, DatasetSplit, LabelMap, Manifest, Modality, Volume,
};
use micseg_core::Tensor;
use micseg_model::net::make_variant;
use micseg_model::{save_store, ModelConfig, ValueSource};
use micseg_train::{
    evaluate, infer, read_runlog, train, LogRecord, OptimState, TrainConfig, TrainError,
    TrainProgress, MODEL_FINAL, MODEL_LATEST, OPTIM_LATEST, RUNLOG_NAME,
};
use rand::RngExt;

const EDGE: usize = 16;
const CLASSES: usize = 3;
const DOMAIN_TEST: u64 = 840;

fn synthetic_case(id: &str, seed: u64) -> CasePair {
    let n = EDGE * EDGE * EDGE;
    let mut rng = rng_stream(seed, DOMAIN_TEST, 0);
    let mut labels = vec![0u8; n];
    // One off-center box per foreground class; plenty of every class in view.
    let half = EDGE / 2;
    let ox = rng.random_range(0..4usize);
    for z in 2..half {
        for y in 2..half {
            for x in 2 + ox..half + ox {
                labels[(z * EDGE + y) * EDGE + x] = 1;
            }
        }
    }
    for z in half..EDGE - 2 {
        for y in half..EDGE - 2 {
            for x in half..EDGE - 2 {
                labels[(z * EDGE + y) * EDGE + x] = 2;
            }
        }
    }
    let ct: Vec<f32> = labels
        .iter()
        .map(|&c| (if c > 0 { 1.0f32 } else { 0.0 }) + rng.random_range(-0.1..0.1f32))
        .collect();
    let mri: Vec<f32> = labels
        .iter()
        .map(|&c| c as f32 * 0.5 + rng.random_range(-0.1..0.1f32))
        .collect();
    let extents = [EDGE; 3];
    let spacing = [1.0f32; 3];
    CasePair::new(
        id,
        Volume::new(extents, spacing, Modality::Ct, ct).unwrap(),
        Volume::new(extents, spacing, Modality::Mri, mri).unwrap(),
        LabelMap::new(extents, spacing, labels).unwrap(),
    )
    .unwrap()
}

fn write_dataset(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    for (id, seed) in [("a", 1u64), ("b", 2), ("c", 3)] {
        save_case(dir, &synthetic_case(id, seed)).unwrap();
    }
    let manifest = Manifest {
        edge: EDGE,
        classes: CLASSES,
        seed: 0,
        misalign: 0.0,
        split: DatasetSplit {
            train: vec!["a".into(), "b".into()],
            test: vec!["c".into()],
        },
    };
    manifest.save(dir).unwrap();
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            patch: 2,
            base_channels: 4,
            stages: 2,
            blocks_per_stage: 1,
            window: 2,
            head_dim: 2,
            classes: CLASSES,
            value_source: ValueSource::B,
            seed: 11,
        },
        variant: "dual".into(),
        lr: 1e-3,
        epochs,
        checkpoint_every: 2,
    }
}

#[test]
fn identical_runs_produce_identical_logs_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&data);
    let cfg = small_config(2);

    let out1 = tmp.path().join("run1");
    let out2 = tmp.path().join("run2");
    let o1 = train::<f64>(&cfg, &data, &out1, None).unwrap();
    let o2 = train::<f64>(&cfg, &data, &out2, None).unwrap();

    assert_eq!(o1.steps, 4);
    assert_eq!(o1.final_loss.to_bits(), o2.final_loss.to_bits());
    let log1 = fs::read(out1.join(RUNLOG_NAME)).unwrap();
    let log2 = fs::read(out2.join(RUNLOG_NAME)).unwrap();
    assert_eq!(log1, log2, "run logs differ");
    let m1 = fs::read(out1.join(MODEL_FINAL)).unwrap();
    let m2 = fs::read(out2.join(MODEL_FINAL)).unwrap();
    assert_eq!(m1, m2, "final checkpoints differ");
}

#[test]
fn resuming_half_way_matches_the_uninterrupted_run_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&data);

    let full_dir = tmp.path().join("full");
    let full = train::<f64>(&small_config(4), &data, &full_dir, None).unwrap();

    let split_dir = tmp.path().join("split");
    train::<f64>(&small_config(2), &data, &split_dir, None).unwrap();
    let resumed =
        train::<f64>(&small_config(4), &data, &split_dir, Some(&split_dir)).unwrap();

    assert_eq!(full.steps, 8);
    assert_eq!(resumed.epochs_run, 2);
    assert_eq!(resumed.steps, 8);
    assert_eq!(full.final_loss.to_bits(), resumed.final_loss.to_bits());

    for name in [MODEL_FINAL, MODEL_LATEST, OPTIM_LATEST] {
        let a = fs::read(full_dir.join(name)).unwrap();
        let b = fs::read(split_dir.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between full and resumed runs");
    }

    // The interrupted run's log carries one extra final-checkpoint record at
    // the break; every training and validation record must agree exactly.
    let progress_only = |path: &Path| -> Vec<LogRecord> {
        read_runlog(path)
            .unwrap()
            .into_iter()
            .filter(|r| !matches!(r, LogRecord::Checkpoint { .. }))
            .collect()
    };
    assert_eq!(
        progress_only(&full_dir.join(RUNLOG_NAME)),
        progress_only(&split_dir.join(RUNLOG_NAME))
    );
}

#[test]
fn non_finite_state_aborts_with_a_diagnostic_record() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&data);
    let cfg = small_config(2);

    // A checkpoint whose head bias is NaN: forward still runs, the loss does
    // not, and the failure must land in the log before the error surfaces.
    let seed_dir = tmp.path().join("poisoned");
    fs::create_dir_all(&seed_dir).unwrap();
    let variant = make_variant::<f64>("dual").unwrap();
    let mut store = variant.init_params(&cfg.model).unwrap();
    let bias_shape = store.get("head.bias").unwrap().shape().to_vec();
    let poison = vec![f64::NAN; bias_shape.iter().product()];
    store
        .set("head.bias", Tensor::from_vec(&bias_shape, poison).unwrap())
        .unwrap();
    save_store(&store, &cfg.to_text(), &seed_dir.join(MODEL_LATEST)).unwrap();
    let optim = OptimState::new(&store, cfg.lr).unwrap();
    let progress = TrainProgress {
        epoch: 0,
        best_dice: f64::NEG_INFINITY,
    };
    micseg_train::save_optim(&optim, &progress, &seed_dir.join(OPTIM_LATEST)).unwrap();

    let out = tmp.path().join("out");
    let err = train::<f64>(&cfg, &data, &out, Some(&seed_dir)).unwrap_err();
    assert!(matches!(err, TrainError::NonFiniteLoss { step: 1, .. }), "got {err}");

    let records = read_runlog(&out.join(RUNLOG_NAME)).unwrap();
    assert_eq!(records.len(), 1);
    assert!(matches!(
        &records[0],
        LogRecord::Abort { step: 1, reason } if reason.contains("non-finite")
    ));
}

#[test]
fn empty_train_split_is_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&data);
    let mut manifest = Manifest::load(&data).unwrap();
    manifest.split.test.extend(manifest.split.train.drain(..));
    manifest.save(&data).unwrap();

    let err = train::<f64>(&small_config(1), &data, &tmp.path().join("out"), None).unwrap_err();
    assert!(matches!(err, TrainError::EmptySplit("train")), "got {err}");
}

#[test]
fn evaluate_reports_per_case_and_exact_mean_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&data);
    let out = tmp.path().join("run");
    train::<f64>(&small_config(1), &data, &out, None).unwrap();

    let outcome = evaluate::<f64>(&out.join(MODEL_FINAL), &data, "train").unwrap();
    assert_eq!(outcome.per_case.len(), 2);
    for (dim, pick) in [
        (&outcome.aggregate.mean_dice, "dice"),
        (&outcome.aggregate.mean_iou, "iou"),
        (&outcome.aggregate.mean_hd95, "hd95"),
    ] {
        let values: Vec<f64> = outcome
            .per_case
            .iter()
            .map(|c| match pick {
                "dice" => c.report.mean_dice,
                "iou" => c.report.mean_iou,
                _ => c.report.mean_hd95,
            })
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!((dim - mean).abs() < 1e-12, "{pick} aggregate drifted");
    }

    let err = evaluate::<f64>(&out.join(MODEL_FINAL), &data, "val").unwrap_err();
    assert!(err.to_string().contains("val"), "got {err}");
}

#[test]
fn infer_returns_labels_with_the_input_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&data);
    let out = tmp.path().join("run");
    train::<f64>(&small_config(1), &data, &out, None).unwrap();

    let labels = infer::<f64>(
        &out.join(MODEL_FINAL),
        &data.join("c_ct.mvol"),
        &data.join("c_mri.mvol"),
    )
    .unwrap();
    assert_eq!(labels.extents(), [EDGE; 3]);
    assert!(labels.indices().iter().all(|&c| (c as usize) < CLASSES));
}
