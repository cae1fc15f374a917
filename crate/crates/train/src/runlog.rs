//! Append-only training log: one JSON record per line. Every field is a
//! deterministic function of (config, seed, data), so two runs of the same
//! setup produce byte-identical logs; wall-clock timings go to stdout only.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const RUNLOG_NAME: &str = "runlog.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Iter {
        step: u64,
        epoch: usize,
        case: String,
        loss: f64,
        cross_entropy: f64,
        soft_dice: f64,
    },
    Validation {
        epoch: usize,
        mean_dice: f64,
        mean_iou: f64,
        mean_hd95: f64,
    },
    Checkpoint {
        epoch: usize,
        /// File name only; the log stays identical across output directories.
        file: String,
    },
    Abort {
        step: u64,
        reason: String,
    },
}

pub struct RunLog {
    writer: BufWriter<File>,
    last_step: u64,
}

impl RunLog {
    /// Opens in append mode, so a resumed run extends its predecessor's log.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::options().create(true).append(true).open(path)?;
        Ok(RunLog {
            writer: BufWriter::new(file),
            last_step: 0,
        })
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<()> {
        if let LogRecord::Iter { step, .. } = record {
            assert!(*step > self.last_step, "iteration steps must increase");
            self.last_step = *step;
        }
        serde_json::to_writer(&mut self.writer, record)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_runlog(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines() {
        records.push(serde_json::from_str(line)?);
    }
    Ok(records)
}
