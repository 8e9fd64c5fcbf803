//! Replay backend: serves previously measured times from a CSV table.
//!
//! The file has the header `config,time_ms`; `config` is the canonical
//! encoding (`name=value` pairs sorted by name, joined by `;`).

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ktune_core::backend::Status;
use ktune_core::{Backend, BackendError, EvaluationRequest, EvaluationResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayTable {
    times: BTreeMap<String, f64>,
}

fn malformed(line: u64, reason: impl Into<String>) -> BackendError {
    BackendError::MalformedReplayFile {
        line,
        reason: reason.into(),
    }
}

impl ReplayTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a measurement; returns `false` and keeps the existing time if
    /// the configuration was present.
    pub fn insert(&mut self, canonical: impl Into<String>, time_ms: f64) -> bool {
        match self.times.entry(canonical.into()) {
            Entry::Vacant(slot) => {
                slot.insert(time_ms);
                true
            }
            Entry::Occupied(_) => false,
        }
    }

    pub fn get(&self, canonical: &str) -> Option<f64> {
        self.times.get(canonical).copied()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, BackendError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["config", "time_ms"] {
            return Err(malformed(1, "expected header `config,time_ms`"));
        }
        let mut table = ReplayTable::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                malformed(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let config = &record[0];
            if config.is_empty() {
                return Err(malformed(line, "empty configuration"));
            }
            let time: f64 = record[1]
                .trim()
                .parse()
                .map_err(|_| malformed(line, format!("`{}` is not a number", &record[1])))?;
            if !(time.is_finite() && time > 0.0) {
                return Err(malformed(
                    line,
                    format!("time {time} must be positive and finite"),
                ));
            }
            if !table.insert(config, time) {
                return Err(malformed(line, format!("duplicate configuration `{config}`")));
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path)
            .map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn write(&self, writer: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["config", "time_ms"])?;
        for (config, time) in &self.times {
            w.write_record([config.as_str(), &time.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Exact-match lookup: hits succeed with the stored time, misses are
/// reported as `missing`.
pub fn evaluate_replay(request: &EvaluationRequest<'_>, table: &ReplayTable) -> EvaluationResult {
    match table.get(&request.canonical) {
        Some(t) => EvaluationResult::success(t),
        None => EvaluationResult::failed(Status::Missing, "configuration not in replay table"),
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBackend {
    pub table: ReplayTable,
}

impl ReplayBackend {
    pub fn new(table: ReplayTable) -> Self {
        ReplayBackend { table }
    }
}

impl Backend for ReplayBackend {
    fn evaluate(&mut self, request: &EvaluationRequest<'_>) -> Result<EvaluationResult, BackendError> {
        Ok(evaluate_replay(request, &self.table))
    }

    fn concurrency_safe(&self) -> bool {
        true
    }
}
