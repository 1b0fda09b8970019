//! Line-based text container for named tensors.
//!
//! ```text
//! rerank-tensors v1 <count>
//! <name> <rank> <dim_0> ... <dim_{rank-1}>
//! <value> <value> ...
//! ```
//!
//! Each tensor takes two lines: a header and a single line of values in
//! row-major order. Values are written with Rust's shortest round-trip
//! `f64` formatting, so reading a file back reproduces every bit. Names may
//! not contain whitespace.

use std::io::{BufRead, Write};

use crate::{Result, Tensor, TensorError};

const MAGIC: &str = "rerank-tensors";
const VERSION: &str = "v1";

pub fn write_tensors<W: Write>(mut out: W, tensors: &[(&str, &Tensor)]) -> Result<()> {
    writeln!(out, "{MAGIC} {VERSION} {}", tensors.len())?;
    for (name, t) in tensors {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(TensorError::Checkpoint(format!("invalid tensor name {name:?}")));
        }
        write!(out, "{name} {}", t.shape().len())?;
        for d in t.shape() {
            write!(out, " {d}")?;
        }
        writeln!(out)?;
        let mut first = true;
        for v in t.data() {
            if !first {
                out.write_all(b" ")?;
            }
            first = false;
            write!(out, "{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_tensors<R: BufRead>(input: R) -> Result<Vec<(String, Tensor)>> {
    let mut lines = input.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| TensorError::Checkpoint(format!("unexpected end of file reading {what}")))
    };
    let header = next("header")?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let count: usize = match parts.as_slice() {
        [MAGIC, VERSION, n] => n
            .parse()
            .map_err(|_| TensorError::Checkpoint(format!("bad tensor count {n:?}")))?,
        _ => return Err(TensorError::Checkpoint(format!("bad header {header:?}"))),
    };
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let head = next("tensor header")?;
        let mut fields = head.split_whitespace();
        let name = fields
            .next()
            .ok_or_else(|| TensorError::Checkpoint("empty tensor header".into()))?
            .to_string();
        let parse_usize = |s: Option<&str>| -> Result<usize> {
            s.and_then(|s| s.parse().ok())
                .ok_or_else(|| TensorError::Checkpoint(format!("bad shape for {name}")))
        };
        let rank = parse_usize(fields.next())?;
        let shape = (0..rank)
            .map(|_| parse_usize(fields.next()))
            .collect::<Result<Vec<_>>>()?;
        let values = next("tensor values")?;
        let data = values
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| TensorError::Checkpoint(format!("bad value {s:?} in {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(tensors)
}
