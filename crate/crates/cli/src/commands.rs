//! One function per subcommand. Each returns the process exit code on the
//! success path; errors bubble as [`TrainError`] and are mapped by the caller.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use micseg_core::seeds::{derive_seed, DOMAIN_CASE};
use micseg_data::{make_split, save_case, synth_case_misaligned, Manifest};
use micseg_train::{
    evaluate, infer, run_cases, train, TrainConfig, TrainError, GRADCHECK_TOL,
};

use crate::exit::EXIT_NUMERIC;

type Result<T> = std::result::Result<T, TrainError>;

pub fn cmd_synth(
    out: &Path,
    cases: usize,
    edge: usize,
    classes: usize,
    seed: u64,
    misalign: f64,
    train_fraction: f64,
) -> Result<i32> {
    if cases == 0 {
        return Err(TrainError::Config("need at least one case".into()));
    }
    fs::create_dir_all(out)?;
    let ids: Vec<String> = (0..cases).map(|i| format!("case{i:03}")).collect();
    for (i, id) in ids.iter().enumerate() {
        let case_seed = derive_seed(seed, DOMAIN_CASE, i as u64);
        let mut case = synth_case_misaligned(case_seed, edge, classes, misalign)?;
        case.id = id.clone();
        save_case(out, &case)?;
        println!("wrote {id} (edge {edge}, {classes} classes)");
    }
    let split = make_split(&ids, train_fraction, seed)?;
    let manifest = Manifest {
        edge,
        classes,
        seed,
        misalign,
        split,
    };
    manifest.save(out)?;
    println!(
        "manifest: {} cases, {} train / {} test, misalign {misalign}",
        cases,
        manifest.split.train.len(),
        manifest.split.test.len()
    );
    Ok(0)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| TrainError::Config(format!("cannot read config {}: {e}", path.display())))?;
    TrainConfig::parse(&text)
}

pub fn cmd_train(
    config: &Path,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<i32> {
    let cfg = load_config(config)?;
    let started = Instant::now();
    let outcome = train::<f64>(&cfg, data, out, resume)?;
    println!(
        "trained {} epochs ({} steps) in {:.1}s: final loss {:.6}, best dice {:.4}",
        outcome.epochs_run,
        outcome.steps,
        started.elapsed().as_secs_f64(),
        outcome.final_loss,
        outcome.best_dice
    );
    println!("artifacts in {}", out.display());
    Ok(0)
}

pub fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    split: &str,
    report_path: Option<&Path>,
) -> Result<i32> {
    let outcome = evaluate::<f64>(checkpoint, data, split)?;
    for case in &outcome.per_case {
        println!(
            "case {:10} dice {:.4} iou {:.4} hd95 {:.3}",
            case.id, case.report.mean_dice, case.report.mean_iou, case.report.mean_hd95
        );
    }
    let agg = &outcome.aggregate;
    println!(
        "aggregate ({split}, {} cases): dice {:.4} iou {:.4} hd95 {:.3}",
        outcome.per_case.len(),
        agg.mean_dice,
        agg.mean_iou,
        agg.mean_hd95
    );

    let default_path = checkpoint
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("metrics.json");
    let path: &Path = report_path.unwrap_or(&default_path);
    let cases: Vec<serde_json::Value> = outcome
        .per_case
        .iter()
        .map(|c| {
            Ok(serde_json::json!({
                "id": c.id,
                "metrics": serde_json::to_value(&c.report)?,
            }))
        })
        .collect::<std::result::Result<_, serde_json::Error>>()?;
    let doc = serde_json::json!({
        "split": split,
        "cases": cases,
        "aggregate": {
            "mean_dice": agg.mean_dice,
            "mean_iou": agg.mean_iou,
            "mean_hd95": agg.mean_hd95,
        },
    });
    fs::write(path, format!("{:#}\n", doc))?;
    println!("report written to {}", path.display());
    Ok(0)
}

pub fn cmd_infer(checkpoint: &Path, ct: &Path, mri: &Path, out: &Path) -> Result<i32> {
    let labels = infer::<f64>(checkpoint, ct, mri)?;
    micseg_data::write_labels(&labels, out)?;
    let mut counts = vec![0u64; labels.max_class() as usize + 1];
    for &c in labels.indices() {
        counts[c as usize] += 1;
    }
    let [d, h, w] = labels.extents();
    println!("segmented {d}x{h}x{w} volume -> {}", out.display());
    for (class, n) in counts.iter().enumerate() {
        println!("class {class}: {n} voxels");
    }
    Ok(0)
}

pub fn cmd_gradcheck(op: &str, trials: usize, seed: u64) -> Result<i32> {
    if trials == 0 {
        return Err(TrainError::Config("need at least one trial".into()));
    }
    let started = Instant::now();
    let outcomes = run_cases(op, trials, seed, GRADCHECK_TOL)?;
    let mut failures = Vec::new();
    for o in &outcomes {
        println!(
            "op {:24} worst {:.3e} over {} trials ({} checks) {}",
            o.name,
            o.worst_rel,
            o.trials,
            o.checked,
            if o.passed { "PASS" } else { "FAIL" }
        );
        if !o.passed {
            failures.push(o.name);
        }
    }
    println!(
        "{} ops checked in {:.1}s, tolerance {GRADCHECK_TOL:.0e}",
        outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    if failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("gradient check failed for: {}", failures.join(", "));
        Ok(EXIT_NUMERIC)
    }
}

/// Resolve eval/infer output locations that callers pass as flags.
pub fn flag_path(p: &Option<PathBuf>) -> Option<&Path> {
    p.as_deref()
}
