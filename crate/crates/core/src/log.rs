//! JSONL trial logs: a schema header line, then one [`TrialRecord`] per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::TrialRecord;

pub const SCHEMA: &str = "lockbox-probe/1";

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("log is empty: missing `{{\"schema\":\"{SCHEMA}\"}}` header")]
    MissingHeader,
    #[error("schema mismatch: expected `{expected}`, found `{found}`")]
    SchemaMismatch { expected: String, found: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
}

pub fn write_records<W: Write>(mut out: W, records: &[TrialRecord]) -> Result<(), LogError> {
    serde_json::to_writer(&mut out, &Header { schema: SCHEMA.into() }).map_err(io::Error::from)?;
    out.write_all(b"\n")?;
    for r in records {
        // one buffer per record so a line is never half-written
        let mut line = serde_json::to_vec(r).map_err(io::Error::from)?;
        line.push(b'\n');
        out.write_all(&line)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<TrialRecord>, LogError> {
    let mut lines = input.lines();
    let header = match lines.next() {
        None => return Err(LogError::MissingHeader),
        Some(line) => line?,
    };
    if header.trim().is_empty() {
        return Err(LogError::MissingHeader);
    }
    let header: Header = serde_json::from_str(&header).map_err(|e| LogError::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.schema != SCHEMA {
        return Err(LogError::SchemaMismatch {
            expected: SCHEMA.into(),
            found: header.schema,
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| LogError::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_log(path: &Path, records: &[TrialRecord]) -> Result<(), LogError> {
    write_records(BufWriter::new(File::create(path)?), records)
}

pub fn read_log(path: &Path) -> Result<Vec<TrialRecord>, LogError> {
    read_records(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentSpec;
    use crate::runner::{run_sweep, RunPlan};

    fn sample() -> Vec<TrialRecord> {
        run_sweep(&RunPlan::new(AgentSpec::Random, 1, 2, 3), 1)
    }

    #[test]
    fn round_trip() {
        let recs = sample();
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"schema\":\"lockbox-probe/1\"}\n"));
        assert_eq!(text.lines().count(), recs.len() + 1);
        assert_eq!(read_records(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn empty_input_is_missing_header() {
        assert!(matches!(read_records(&b""[..]), Err(LogError::MissingHeader)));
    }

    #[test]
    fn truncated_line_reports_line_number() {
        let mut buf = Vec::new();
        write_records(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 40);
        let err = read_records(&buf[..]).unwrap_err();
        let n_lines = String::from_utf8_lossy(&buf).lines().count();
        assert!(matches!(err, LogError::Parse { line, .. } if line == n_lines), "{err}");
    }

    #[test]
    fn schema_mismatch_names_versions() {
        let err = read_records(&b"{\"schema\":\"lockbox-probe/0\"}\n"[..]).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("lockbox-probe/1") && msg.contains("lockbox-probe/0"),
            "{msg}"
        );
    }
}
