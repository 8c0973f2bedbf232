//! Versioned text serialization for named tensors.
//!
//! Values print with Rust's shortest-round-trip float formatting, so a
//! write/read cycle reproduces every bit.

use super::{ParamStore, Tensor};
use thiserror::Error;

const MAGIC: &str = "betau-tensors-v1";

#[derive(Debug, Error)]
pub enum SerializeError {
    #[error("bad header: expected '{MAGIC}', got '{0}'")]
    BadHeader(String),
    #[error("truncated document at tensor {0}")]
    Truncated(usize),
    #[error("malformed line for tensor '{name}': {detail}")]
    Malformed { name: String, detail: String },
    #[error("tensor '{name}': shape {shape:?} expects {expected} values, got {got}")]
    WrongLen {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
}

/// Serialize parameters as a text document:
/// one `tensor <name> <d0>x<d1>x...` line followed by one line of values.
pub fn write_tensors(store: &ParamStore) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&store.len().to_string());
    out.push('\n');
    for (name, t) in store.iter() {
        out.push_str("tensor ");
        out.push_str(name);
        out.push(' ');
        if t.shape().is_empty() {
            out.push_str("scalar");
        } else {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            out.push_str(&dims.join("x"));
        }
        out.push('\n');
        let mut first = true;
        for v in t.data() {
            if !first {
                out.push(' ');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    out
}

pub fn read_tensors(text: &str) -> Result<ParamStore, SerializeError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != MAGIC {
        return Err(SerializeError::BadHeader(header.to_string()));
    }
    let count: usize = lines
        .next()
        .unwrap_or_default()
        .trim()
        .parse()
        .map_err(|_| SerializeError::BadHeader("missing tensor count".into()))?;
    let mut store = ParamStore::new();
    for idx in 0..count {
        let head = lines.next().ok_or(SerializeError::Truncated(idx))?;
        let mut parts = head.split_whitespace();
        let tag = parts.next().unwrap_or_default();
        let name = parts.next().unwrap_or_default().to_string();
        let dims = parts.next().unwrap_or_default();
        if tag != "tensor" || name.is_empty() || dims.is_empty() {
            return Err(SerializeError::Malformed {
                name,
                detail: format!("bad tensor header '{head}'"),
            });
        }
        let shape: Vec<usize> = if dims == "scalar" {
            vec![]
        } else {
            dims.split('x')
                .map(|d| {
                    d.parse::<usize>().map_err(|_| SerializeError::Malformed {
                        name: name.clone(),
                        detail: format!("bad dimension '{d}'"),
                    })
                })
                .collect::<Result<_, _>>()?
        };
        let values_line = lines.next().ok_or(SerializeError::Truncated(idx))?;
        let data: Vec<f64> = values_line
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>().map_err(|_| SerializeError::Malformed {
                    name: name.clone(),
                    detail: format!("bad value '{v}'"),
                })
            })
            .collect::<Result<_, _>>()?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(SerializeError::WrongLen {
                name,
                shape,
                expected,
                got: data.len(),
            });
        }
        store.insert(&name, Tensor::new(shape, data).expect("length checked"));
    }
    Ok(store)
}
