//! Reader for the Customer Support on Twitter CSV dump.
//!
//! Expected columns: `tweet_id, author_id, inbound, created_at, text,
//! response_tweet_id, in_response_to_tweet_id`.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::Deserialize;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TwcsRecord {
    pub tweet_id: String,
    pub author_id: String,
    pub inbound: bool,
    pub created_at: DateTime<Utc>,
    pub text: String,
    pub in_response_to: Option<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    tweet_id: String,
    author_id: String,
    inbound: String,
    created_at: String,
    text: String,
    #[serde(default)]
    in_response_to_tweet_id: String,
}

#[derive(Debug, Default)]
pub struct TwcsRead {
    pub records: Vec<TwcsRecord>,
    /// Rows that could not be decoded at all (wrong column count, bad UTF-8,
    /// empty id, unknown inbound flag).
    pub malformed_rows: usize,
}

/// Accepts the dump's `Tue Oct 31 22:10:47 +0000 2017` form and RFC 3339.
pub fn parse_timestamp(value: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_str(value.trim(), "%a %b %d %H:%M:%S %z %Y")
        .or_else(|_| DateTime::parse_from_rfc3339(value.trim()))
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

fn clean_id(id: &str) -> String {
    let id = id.trim();
    id.strip_suffix(".0").unwrap_or(id).to_string()
}

pub fn read_twcs_from<R: Read>(input: R) -> Result<TwcsRead> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let mut out = TwcsRead::default();
    for row in reader.deserialize::<RawRecord>() {
        let Ok(raw) = row else {
            out.malformed_rows += 1;
            continue;
        };
        let inbound = match raw.inbound.trim().to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" => false,
            _ => {
                out.malformed_rows += 1;
                continue;
            }
        };
        let tweet_id = clean_id(&raw.tweet_id);
        if tweet_id.is_empty() {
            out.malformed_rows += 1;
            continue;
        }
        let created_at = parse_timestamp(&raw.created_at).ok_or_else(|| Error::Timestamp {
            id: tweet_id.clone(),
            value: raw.created_at.clone(),
        })?;
        let parent = clean_id(&raw.in_response_to_tweet_id);
        out.records.push(TwcsRecord {
            tweet_id,
            author_id: raw.author_id.trim().to_string(),
            inbound,
            created_at,
            text: raw.text,
            in_response_to: (!parent.is_empty()).then_some(parent),
        });
    }
    Ok(out)
}

pub fn read_twcs(path: &Path) -> Result<TwcsRead> {
    read_twcs_from(std::fs::File::open(path)?)
}

/// Writes records in the dump's column layout. `response_tweet_id` is left
/// empty since the reader does not use it.
pub fn write_twcs_to<W: Write>(output: W, records: &[TwcsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record([
        "tweet_id",
        "author_id",
        "inbound",
        "created_at",
        "text",
        "response_tweet_id",
        "in_response_to_tweet_id",
    ])?;
    for r in records {
        let created = r.created_at.format("%a %b %d %H:%M:%S +0000 %Y").to_string();
        w.write_record([
            r.tweet_id.as_str(),
            r.author_id.as_str(),
            if r.inbound { "True" } else { "False" },
            created.as_str(),
            r.text.as_str(),
            "",
            r.in_response_to.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_twcs(path: &Path, records: &[TwcsRecord]) -> Result<()> {
    write_twcs_to(std::io::BufWriter::new(std::fs::File::create(path)?), records)
}
