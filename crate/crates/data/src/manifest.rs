//! Dataset directory layout: one manifest plus three `.mvol` files per case,
//! named `{id}_ct.mvol`, `{id}_mri.mvol`, `{id}_labels.mvol`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::mvol::{read_labels, read_volume, write_labels, write_volume};
use crate::split::DatasetSplit;
use crate::types::{CasePair, Modality};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Generation parameters plus the frozen split, written next to the cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub edge: usize,
    pub classes: usize,
    pub seed: u64,
    pub misalign: f64,
    pub split: DatasetSplit,
}

impl Manifest {
    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.split.train.iter().chain(self.split.test.iter())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(text.as_bytes())?;
        tmp.write_all(b"\n")?;
        tmp.flush()?;
        tmp.persist(dir.join(MANIFEST_NAME))
            .map_err(|e| DataError::Io(e.error))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn case_paths(dir: &Path, id: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("{id}_ct.mvol")),
        dir.join(format!("{id}_mri.mvol")),
        dir.join(format!("{id}_labels.mvol")),
    ]
}

pub fn save_case(dir: &Path, case: &CasePair) -> Result<()> {
    let [ct, mri, labels] = case_paths(dir, &case.id);
    write_volume(&case.ct, &ct)?;
    write_volume(&case.mri, &mri)?;
    write_labels(&case.labels, &labels)
}

pub fn load_case(dir: &Path, id: &str) -> Result<CasePair> {
    let [ct_path, mri_path, labels_path] = case_paths(dir, id);
    let ct = read_volume(&ct_path)?.with_modality(Modality::Ct);
    let mri = read_volume(&mri_path)?.with_modality(Modality::Mri);
    let labels = read_labels(&labels_path)?;
    CasePair::new(id, ct, mri, labels)
}
