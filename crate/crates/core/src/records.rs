//! Choice records and their CSV / JSONL encodings.
//!
//! CSV columns: `session_id,subject_id,part,screen,pair,chosen,display_seed,timestamp`.
//! Part-1 rows leave `pair` empty; JSONL writes it as `null`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::choice::{PairTag, Pick};

pub const CSV_HEADER: &str = "session_id,subject_id,part,screen,pair,chosen,display_seed,timestamp";

/// One submitted decision.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub session_id: String,
    pub subject_id: String,
    /// 1 = price list, 2 = spread screens.
    pub part: u8,
    /// Price-list row index (`"1"`..`"10"`) or case id (`"C1"`..).
    pub screen: String,
    pub pair: Option<PairTag>,
    pub chosen: Pick,
    pub display_seed: u64,
    /// Milliseconds since the Unix epoch for live sessions, a per-subject
    /// sequence number for simulated ones.
    pub timestamp: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("record {index}: {reason}")]
    Invalid { index: usize, reason: String },
    #[error("cannot infer record format from `{0}` (use .csv or .jsonl)")]
    UnknownFormat(String),
}

impl ChoiceRecord {
    /// Checks the shape of a single record.
    pub fn validate(&self) -> Result<(), String> {
        match (self.part, self.pair) {
            (1, None) => {
                if !matches!(self.chosen, Pick::Safe | Pick::Risky) {
                    return Err(format!("price-list choice must be safe or risky, got {}", self.chosen));
                }
                match self.screen.parse::<u32>() {
                    Ok(1..=10) => Ok(()),
                    _ => Err(format!("price-list screen must be a row 1..10, got `{}`", self.screen)),
                }
            }
            (1, Some(_)) => Err("price-list records carry no pair tag".into()),
            (2, Some(tag)) if tag.allows(self.chosen) => Ok(()),
            (2, Some(tag)) => Err(format!("choice {} is not offered in pair {tag}", self.chosen)),
            (2, None) => Err("spread records need a pair tag".into()),
            (p, _) => Err(format!("unknown part {p}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    Jsonl,
}

impl RecordFormat {
    pub fn from_path(path: &Path) -> Result<Self, RecordError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(RecordFormat::Csv),
            Some("jsonl") | Some("ndjson") | Some("json") => Ok(RecordFormat::Jsonl),
            _ => Err(RecordError::UnknownFormat(path.display().to_string())),
        }
    }
}

pub fn write_csv<W: Write>(out: W, records: &[ChoiceRecord]) -> Result<(), RecordError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[ChoiceRecord]) -> Result<(), RecordError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| RecordError::Json { line: 0, source: e })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_records<W: Write>(out: W, records: &[ChoiceRecord], format: RecordFormat) -> Result<(), RecordError> {
    match format {
        RecordFormat::Csv => write_csv(out, records),
        RecordFormat::Jsonl => write_jsonl(out, records),
    }
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ChoiceRecord>, RecordError> {
    let mut rdr = csv::Reader::from_reader(input);
    let records = rdr.deserialize().collect::<Result<Vec<ChoiceRecord>, _>>()?;
    check_all(&records)?;
    Ok(records)
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<ChoiceRecord>, RecordError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| RecordError::Json { line: i + 1, source: e })?;
        records.push(r);
    }
    check_all(&records)?;
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<ChoiceRecord>, RecordError> {
    let format = RecordFormat::from_path(path)?;
    let file = std::fs::File::open(path)?;
    match format {
        RecordFormat::Csv => read_csv(file),
        RecordFormat::Jsonl => read_jsonl(std::io::BufReader::new(file)),
    }
}

fn check_all(records: &[ChoiceRecord]) -> Result<(), RecordError> {
    for (index, r) in records.iter().enumerate() {
        r.validate().map_err(|reason| RecordError::Invalid { index, reason })?;
    }
    Ok(())
}
