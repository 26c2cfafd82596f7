//! Append-only per-epoch log sinks.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const EVENTS_JSONL: &str = "events.jsonl";

/// Rounds to 6 significant digits, the precision of every logged float.
pub fn round6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

/// Renders a float with 6 significant digits and no trailing zeros.
pub fn format6(x: f64) -> String {
    let r = round6(x);
    if r.is_finite() && r.fract() == 0.0 && r.abs() < 1e15 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

/// One training epoch: loss on train plus the dev metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(flatten)]
    pub dev: IndexMap<String, f64>,
}

impl EpochRecord {
    /// The record as it is written: every float rounded by [`round6`].
    pub fn rounded(&self) -> Self {
        EpochRecord {
            epoch: self.epoch,
            train_loss: round6(self.train_loss),
            dev: self.dev.iter().map(|(k, v)| (k.clone(), round6(*v))).collect(),
        }
    }
}

/// Destination of epoch records. Writes are flushed before returning.
pub trait LogSink {
    fn log(&mut self, record: &EpochRecord) -> Result<()>;
}

/// `metrics.csv`: `epoch, train_loss` then one column per dev metric.
pub struct CsvSink {
    path: PathBuf,
    file: File,
    header_written: bool,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(CsvSink {
            path: path.to_path_buf(),
            file: File::create(path).at(path)?,
            header_written: false,
        })
    }
}

impl LogSink for CsvSink {
    fn log(&mut self, record: &EpochRecord) -> Result<()> {
        let mut line = String::new();
        if !self.header_written {
            line.push_str("epoch,train_loss");
            for k in record.dev.keys() {
                line.push(',');
                line.push_str(k);
            }
            line.push('\n');
            self.header_written = true;
        }
        line.push_str(&format!("{},{}", record.epoch, format6(record.train_loss)));
        for v in record.dev.values() {
            line.push(',');
            line.push_str(&format6(*v));
        }
        line.push('\n');
        self.file.write_all(line.as_bytes()).at(&self.path)?;
        self.file.flush().at(&self.path)
    }
}

/// `events.jsonl`: one JSON object per epoch.
pub struct JsonlSink {
    path: PathBuf,
    file: File,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(JsonlSink {
            path: path.to_path_buf(),
            file: File::create(path).at(path)?,
        })
    }
}

impl LogSink for JsonlSink {
    fn log(&mut self, record: &EpochRecord) -> Result<()> {
        let mut line = serde_json::to_string(&record.rounded())?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).at(&self.path)?;
        self.file.flush().at(&self.path)
    }
}

/// Parses a `metrics.csv` back into records.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.get(0) != Some("epoch") || header.get(1) != Some("train_loss") {
        return Err(Error::MissingColumn("epoch".into()));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Manifest(format!("{}: bad value in column {}", path.display(), i + 1)))
        };
        let epoch = num(0)? as usize;
        let train_loss = num(1)?;
        let mut dev = IndexMap::new();
        for (i, name) in header.iter().enumerate().skip(2) {
            dev.insert(name.to_string(), num(i)?);
        }
        out.push(EpochRecord { epoch, train_loss, dev });
    }
    Ok(out)
}

pub fn read_events_jsonl(path: &Path) -> Result<Vec<EpochRecord>> {
    let file = File::open(path).at(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.at(path)?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize) -> EpochRecord {
        let mut dev = IndexMap::new();
        dev.insert("accuracy".to_string(), 0.958333333 + epoch as f64 * 1e-3);
        dev.insert("uar".to_string(), 1.0);
        EpochRecord {
            epoch,
            train_loss: 1.23456789e-5,
            dev,
        }
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(format6(0.958333333), "0.958333");
        assert_eq!(format6(1.0), "1");
        assert_eq!(format6(1.23456789e-5), "0.0000123457");
        assert_eq!(format6(123456789.0), "123457000");
        assert_eq!(format6(0.0), "0");
    }

    #[test]
    fn sinks_agree_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join(METRICS_CSV);
        let json_path = dir.path().join(EVENTS_JSONL);
        let mut csv = CsvSink::create(&csv_path).unwrap();
        let mut json = JsonlSink::create(&json_path).unwrap();
        let records: Vec<EpochRecord> = (0..3).map(record).collect();
        for r in &records {
            csv.log(r).unwrap();
            json.log(r).unwrap();
        }
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("epoch,train_loss,accuracy,uar\n0,0.0000123457,0.958333,1\n"));
        let from_csv = read_metrics_csv(&csv_path).unwrap();
        let from_json = read_events_jsonl(&json_path).unwrap();
        let rounded: Vec<EpochRecord> = records.iter().map(EpochRecord::rounded).collect();
        assert_eq!(from_json, rounded);
        assert_eq!(from_csv, rounded);
    }
}
