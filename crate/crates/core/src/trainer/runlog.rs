use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evalmetrics::MetricsReport;
use crate::photoloss::LossBreakdown;

use super::Phase;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Seconds since the run (or resumed run) started.
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub step: u64,
    pub metrics: Option<MetricsReport>,
    /// Mean angle in degrees between predicted and true translation directions.
    pub pose_angle_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

/// Everything a run reports, in order. Optionally mirrored to an NDJSON file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            _ => None,
        })
    }

    /// The log with wall-clock times zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> RunLog {
        let records = self
            .records
            .iter()
            .cloned()
            .map(|r| match r {
                LogRecord::Step(s) => LogRecord::Step(StepRecord { wall_time: 0.0, ..s }),
                other => other,
            })
            .collect();
        RunLog { records }
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn read_ndjson(path: &Path) -> Result<RunLog> {
        let mut records = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(RunLog { records })
    }
}

/// Appends one JSON line per record.
pub struct NdjsonSink {
    file: File,
}

impl NdjsonSink {
    pub fn append(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self { file: OpenOptions::new().create(true).append(true).open(path)? })
    }

    pub fn write(&mut self, record: &LogRecord) -> Result<()> {
        writeln!(self.file, "{}", serde_json::to_string(record)?)?;
        Ok(())
    }
}
