//! Line-delimited JSON artifacts.
//!
//! Every record carries a `schema_version` field next to its own fields.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema_version: u32,
    #[serde(flatten)]
    record: T,
}

#[derive(Serialize)]
struct VersionedRef<'a, T> {
    schema_version: u32,
    #[serde(flatten)]
    record: &'a T,
}

pub fn to_json_line<T: Serialize>(record: &T) -> Result<String> {
    Ok(serde_json::to_string(&VersionedRef {
        schema_version: SCHEMA_VERSION,
        record,
    })?)
}

pub fn write_jsonl_to<T: Serialize, W: Write>(mut out: W, records: &[T]) -> Result<()> {
    for r in records {
        writeln!(out, "{}", to_json_line(r)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_jsonl_to(BufWriter::new(File::create(path)?), records)
}

pub fn parse_jsonl<T: DeserializeOwned, R: BufRead>(input: R, origin: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: format!("{origin}:{}", i + 1),
            message,
        };
        let v: Versioned<T> = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if v.schema_version != SCHEMA_VERSION {
            return Err(parse_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                v.schema_version
            )));
        }
        out.push(v.record);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path)?;
    parse_jsonl(BufReader::new(file), &path.display().to_string())
}

/// Writes one pretty-printed, versioned JSON document.
pub fn write_json<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(&VersionedRef {
        schema_version: SCHEMA_VERSION,
        record,
    })?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let parse_err = |message: String| Error::Parse {
        path: path.display().to_string(),
        message,
    };
    let v: Versioned<T> = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    if v.schema_version != SCHEMA_VERSION {
        return Err(parse_err(format!("schema_version {} is not supported", v.schema_version)));
    }
    Ok(v.record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        id: String,
        n: u32,
    }

    #[test]
    fn round_trip_with_version() {
        let rows = vec![Row { id: "a".into(), n: 1 }, Row { id: "b".into(), n: 2 }];
        let mut buf = Vec::new();
        write_jsonl_to(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"schema_version":1,"id":"a","n":1}"#));
        let back: Vec<Row> = parse_jsonl(&buf[..], "mem").unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn rejects_unknown_version_with_location() {
        let err = parse_jsonl::<Row, _>(&br#"{"schema_version":9,"id":"a","n":1}"#[..], "f.jsonl")
            .unwrap_err()
            .to_string();
        assert!(err.contains("f.jsonl:1") && err.contains("schema_version 9"), "{err}");
    }

    #[test]
    fn json_document_round_trip() {
        let path = std::env::temp_dir().join(format!("rerank-io-{}.json", std::process::id()));
        let row = Row { id: "x".into(), n: 3 };
        write_json(&path, &row).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert_eq!(read_json::<Row>(&path).unwrap(), row);
        std::fs::remove_file(path).unwrap();
    }
}
