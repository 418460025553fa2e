//! Canonical port traces and the TraceV1 text format.
//!
//! Every simulator dump, regardless of origin, is normalized into a
//! [`PortTrace`] before differential comparison. The on-disk form (TraceV1)
//! is line oriented: header lines `#port <name> <width>` followed by sample
//! lines `<index> <name> <hex>`. Values are lowercase hex, zero-extended to
//! the declared width.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace line {line}: {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("port {port} used at line {line} but not declared in header")]
    UndeclaredPort { port: String, line: usize },
    #[error("duplicate port declaration {0}")]
    DuplicatePort(String),
    #[error("port width must be >= 1 for {0}")]
    ZeroWidth(String),
    #[error("value {value} wider than declared width {width} for port {port}")]
    ValueTooWide {
        port: String,
        width: u32,
        value: String,
    },
    #[error("sample index decreased at line {line}")]
    NonMonotoneIndex { line: usize },
}

/// One declared output port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortDecl {
    pub name: String,
    pub width_bits: u32,
}

/// One recorded value: the `sample_index`-th output transaction of `port`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSample {
    pub sample_index: u64,
    pub port: String,
    /// Lowercase hex, zero-padded to ceil(width/4) digits.
    pub value_hex: String,
}

/// Canonical, simulator-independent dump of output-port values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortTrace {
    pub header: Vec<PortDecl>,
    pub samples: Vec<TraceSample>,
}

/// Number of hex digits a value of `width_bits` occupies.
pub fn hex_digits(width_bits: u32) -> usize {
    ((width_bits + 3) / 4) as usize
}

/// Canonicalize a hex string to lowercase, zero-extended to the declared width.
pub fn canonical_hex(raw: &str, width_bits: u32) -> Result<String, String> {
    let lower = raw.to_ascii_lowercase();
    let stripped = lower.trim_start_matches('0');
    if !lower.chars().all(|c| c.is_ascii_hexdigit()) || lower.is_empty() {
        return Err(format!("not a hex value: {raw:?}"));
    }
    let digits = hex_digits(width_bits);
    let body = if stripped.is_empty() { "0" } else { stripped };
    if body.len() > digits {
        return Err(format!("value {raw:?} exceeds {width_bits} bits"));
    }
    Ok(format!("{body:0>digits$}"))
}

impl PortTrace {
    pub fn new(header: Vec<PortDecl>) -> Self {
        PortTrace {
            header,
            samples: Vec::new(),
        }
    }

    pub fn width_of(&self, port: &str) -> Option<u32> {
        self.header
            .iter()
            .find(|p| p.name == port)
            .map(|p| p.width_bits)
    }

    /// Push a sample, canonicalizing the value against the declared width.
    pub fn push(&mut self, sample_index: u64, port: &str, raw_value: &str) -> Result<(), TraceError> {
        let width = self
            .width_of(port)
            .ok_or_else(|| TraceError::UndeclaredPort {
                port: port.to_string(),
                line: 0,
            })?;
        let value_hex = canonical_hex(raw_value, width).map_err(|_| TraceError::ValueTooWide {
            port: port.to_string(),
            width,
            value: raw_value.to_string(),
        })?;
        self.samples.push(TraceSample {
            sample_index,
            port: port.to_string(),
            value_hex,
        });
        Ok(())
    }

    /// Serialize to the TraceV1 text format (bit-exact contract).
    pub fn to_trace_v1(&self) -> String {
        let mut out = String::new();
        for p in &self.header {
            writeln!(out, "#port {} {}", p.name, p.width_bits).unwrap();
        }
        for s in &self.samples {
            writeln!(out, "{} {} {}", s.sample_index, s.port, s.value_hex).unwrap();
        }
        out
    }

    /// Parse the TraceV1 text format.
    pub fn from_trace_v1(text: &str) -> Result<PortTrace, TraceError> {
        let mut header: Vec<PortDecl> = Vec::new();
        let mut samples: Vec<TraceSample> = Vec::new();
        let mut last_index: Option<u64> = None;
        for (i, raw_line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw_line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#port ") {
                let mut parts = rest.split_whitespace();
                let (name, width) = match (parts.next(), parts.next(), parts.next()) {
                    (Some(n), Some(w), None) => (n, w),
                    _ => {
                        return Err(TraceError::MalformedLine {
                            line: lineno,
                            text: raw_line.to_string(),
                        })
                    }
                };
                let width_bits: u32 = width.parse().map_err(|_| TraceError::MalformedLine {
                    line: lineno,
                    text: raw_line.to_string(),
                })?;
                if width_bits == 0 {
                    return Err(TraceError::ZeroWidth(name.to_string()));
                }
                if header.iter().any(|p| p.name == name) {
                    return Err(TraceError::DuplicatePort(name.to_string()));
                }
                header.push(PortDecl {
                    name: name.to_string(),
                    width_bits,
                });
                continue;
            }
            let mut parts = line.split_whitespace();
            let (idx, port, value) = match (parts.next(), parts.next(), parts.next(), parts.next())
            {
                (Some(a), Some(b), Some(c), None) => (a, b, c),
                _ => {
                    return Err(TraceError::MalformedLine {
                        line: lineno,
                        text: raw_line.to_string(),
                    })
                }
            };
            let sample_index: u64 = idx.parse().map_err(|_| TraceError::MalformedLine {
                line: lineno,
                text: raw_line.to_string(),
            })?;
            if let Some(prev) = last_index {
                if sample_index < prev {
                    return Err(TraceError::NonMonotoneIndex { line: lineno });
                }
            }
            last_index = Some(sample_index);
            let width = header
                .iter()
                .find(|p| p.name == port)
                .map(|p| p.width_bits)
                .ok_or_else(|| TraceError::UndeclaredPort {
                    port: port.to_string(),
                    line: lineno,
                })?;
            let value_hex =
                canonical_hex(value, width).map_err(|_| TraceError::ValueTooWide {
                    port: port.to_string(),
                    width,
                    value: value.to_string(),
                })?;
            samples.push(TraceSample {
                sample_index,
                port: port.to_string(),
                value_hex,
            });
        }
        Ok(PortTrace { header, samples })
    }

    /// Map of (sample_index, port) -> value, for comparison.
    pub fn value_map(&self) -> BTreeMap<(u64, String), String> {
        self.samples
            .iter()
            .map(|s| ((s.sample_index, s.port.clone()), s.value_hex.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decl(name: &str, w: u32) -> PortDecl {
        PortDecl {
            name: name.into(),
            width_bits: w,
        }
    }

    #[test]
    fn identity_normalization() {
        let t = PortTrace::from_trace_v1("#port y 8\n3 y 1f\n").unwrap();
        assert_eq!(t.samples[0].sample_index, 3);
        assert_eq!(t.samples[0].value_hex, "1f");
    }

    #[test]
    fn uppercase_canonicalized() {
        let mut t = PortTrace::new(vec![decl("y", 8)]);
        t.push(0, "y", "FF").unwrap();
        assert_eq!(t.samples[0].value_hex, "ff");
    }

    #[test]
    fn zero_extension_to_width() {
        let mut t = PortTrace::new(vec![decl("y", 12)]);
        t.push(0, "y", "f").unwrap();
        assert_eq!(t.samples[0].value_hex, "00f");
    }

    #[test]
    fn undeclared_port_is_schema_error() {
        let err = PortTrace::from_trace_v1("#port y 8\n3 z 00\n").unwrap_err();
        match err {
            TraceError::UndeclaredPort { port, line } => {
                assert_eq!(port, "z");
                assert_eq!(line, 2);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = PortTrace::from_trace_v1("#port y 8\nnot a line at all\n").unwrap_err();
        match err {
            TraceError::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let mut t = PortTrace::new(vec![decl("y", 8), decl("q", 16)]);
        t.push(0, "y", "1f").unwrap();
        t.push(0, "q", "00ff").unwrap();
        t.push(1, "y", "20").unwrap();
        let reparsed = PortTrace::from_trace_v1(&t.to_trace_v1()).unwrap();
        assert_eq!(reparsed, t);
        assert_eq!(reparsed.to_trace_v1(), t.to_trace_v1());
    }
}
