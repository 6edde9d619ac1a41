//! Append-only JSONL run logs: one header line, then one record per scenario.
//!
//! Wall-clock values live only under `timing` keys so a log can be compared
//! across runs with [`strip_wall_clock`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::config::{config_digest, ExperimentConfig};
use crate::model::DecisionRecord;

pub const LOG_FORMAT: &str = "align-run-log/1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeaderTiming {
    pub started_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub format: String,
    pub tool_version: String,
    pub run_id: String,
    pub config_digest: String,
    pub dataset_id: String,
    /// Scenarios selected for the run; a clean log holds this many records.
    pub scenario_count: usize,
    pub config: ExperimentConfig,
    pub timing: HeaderTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum LogLine {
    Header(RunHeader),
    Record(DecisionRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<DecisionRecord>,
}

impl RunLog {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.is_failure()).count()
    }

    pub fn record(&self, scenario_id: &str) -> Option<&DecisionRecord> {
        self.records.iter().find(|r| r.scenario_id == scenario_id)
    }

    /// Serialize to the on-disk JSONL form.
    pub fn to_jsonl(&self) -> String {
        let mut out = line(&LogLine::Header(self.header.clone()));
        for r in &self.records {
            out.push_str(&line(&LogLine::Record(r.clone())));
        }
        out
    }
}

fn line(l: &LogLine) -> String {
    let mut s = serde_json::to_string(l).expect("log line serializes");
    s.push('\n');
    s
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("log is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("header digest {found} does not match its config (expected {expected})")]
    HeaderDigest { expected: String, found: String },
    #[error("line {line}: record for scenario `{scenario_id}` has digest {found}, header has {expected}")]
    DigestMismatch {
        line: usize,
        scenario_id: String,
        expected: String,
        found: String,
    },
}

/// Streaming writer. Each line is flushed as soon as it is written.
pub struct LogWriter {
    out: BufWriter<File>,
    path: String,
}

impl LogWriter {
    pub fn create(path: &Path, header: &RunHeader) -> Result<Self, LogError> {
        let io = |source| LogError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let file = File::create(path).map_err(io)?;
        let mut w = Self {
            out: BufWriter::new(file),
            path: path.display().to_string(),
        };
        w.write(&LogLine::Header(header.clone()))?;
        Ok(w)
    }

    pub fn append(&mut self, record: &DecisionRecord) -> Result<(), LogError> {
        self.write(&LogLine::Record(record.clone()))
    }

    fn write(&mut self, l: &LogLine) -> Result<(), LogError> {
        let io = |source| LogError::Io {
            path: self.path.clone(),
            source,
        };
        self.out.write_all(line(l).as_bytes()).map_err(io)?;
        self.out.flush().map_err(io)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub log: RunLog,
    pub warnings: Vec<String>,
    pub truncated: bool,
}

pub fn replay(path: &Path) -> Result<Replay, LogError> {
    let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    replay_str(&text)
}

/// Parse and validate a log. A final line without its newline that fails to
/// parse is treated as truncation: earlier records load and a warning is set.
pub fn replay_str(text: &str) -> Result<Replay, LogError> {
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    let ends_cleanly = text.ends_with('\n');
    let mut warnings = Vec::new();
    let mut truncated = false;

    let first = lines.first().ok_or(LogError::Empty)?;
    let header = match serde_json::from_str::<LogLine>(first) {
        Ok(LogLine::Header(h)) => h,
        Ok(LogLine::Record(_)) => {
            return Err(LogError::Corrupt {
                line: 1,
                message: "first line must be the header".into(),
            })
        }
        Err(e) => {
            return Err(LogError::Corrupt {
                line: 1,
                message: e.to_string(),
            })
        }
    };
    let expected = config_digest(&header.config);
    if header.config_digest != expected {
        return Err(LogError::HeaderDigest {
            expected,
            found: header.config_digest,
        });
    }

    let mut records = Vec::with_capacity(lines.len().saturating_sub(1));
    for (i, raw) in lines.iter().enumerate().skip(1) {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record = match serde_json::from_str::<LogLine>(raw) {
            Ok(LogLine::Record(r)) => r,
            Ok(LogLine::Header(_)) => {
                return Err(LogError::Corrupt {
                    line: line_no,
                    message: "unexpected second header".into(),
                })
            }
            Err(e) if line_no == lines.len() && !ends_cleanly => {
                let last_ok = records
                    .last()
                    .map(|r: &DecisionRecord| format!("scenario `{}`", r.scenario_id))
                    .unwrap_or_else(|| "none".into());
                warnings.push(format!(
                    "log truncated at line {line_no} ({e}); last valid record: {last_ok}"
                ));
                truncated = true;
                break;
            }
            Err(e) => {
                return Err(LogError::Corrupt {
                    line: line_no,
                    message: e.to_string(),
                })
            }
        };
        if record.config_digest != header.config_digest {
            return Err(LogError::DigestMismatch {
                line: line_no,
                scenario_id: record.scenario_id,
                expected: header.config_digest.clone(),
                found: record.config_digest,
            });
        }
        if record.decision.is_some() == record.error.is_some() {
            return Err(LogError::Corrupt {
                line: line_no,
                message: format!(
                    "record for `{}` must carry exactly one of decision and error",
                    record.scenario_id
                ),
            });
        }
        records.push(record);
    }
    if !truncated && records.len() != header.scenario_count {
        warnings.push(format!(
            "log holds {} records but the run selected {} scenarios",
            records.len(),
            header.scenario_count
        ));
    }
    Ok(Replay {
        log: RunLog { header, records },
        warnings,
        truncated,
    })
}

/// Drop every `timing` object from each JSONL line.
pub fn strip_wall_clock(jsonl: &str) -> String {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(map) => {
                map.remove("timing");
                map.values_mut().for_each(strip);
            }
            Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    jsonl
        .lines()
        .map(|l| match serde_json::from_str::<Value>(l) {
            Ok(mut v) => {
                strip(&mut v);
                v.to_string()
            }
            Err(_) => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}
