//! Tolerant parsers for free-text model outputs. None of them panic on
//! arbitrary input; rejected fragments are reported as diagnostics.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::bbox::{format_bbox, BBox};
use crate::error::{Error, Result};

/// Image `(width, height)` in pixels, used to normalize pixel coordinates.
pub type ImageSize = (f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedEntry {
    pub class_name: String,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub segment: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedDetections {
    pub entries: Vec<ParsedEntry>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedDetections {
    /// Canonical `name:[x1, y1, x2, y2], ...` rendering of the entries.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}:{}", e.class_name, format_bbox(&e.bbox)))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn segment_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"([^,;:\n.!?\[\](){}"'`*]*?)\s*:\s*\[([^\[\]]*)\]"#).expect("segment regex")
    })
}

fn bracket_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]]*)\]").expect("bracket regex"))
}

/// Four numbers separated by commas and/or whitespace, normalized and
/// clamped into a valid box.
fn parse_box_body(body: &str, size: Option<ImageSize>) -> std::result::Result<BBox, String> {
    let parts: Vec<&str> = body
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if parts.len() != 4 {
        return Err(format!("expected 4 numbers, found {}", parts.len()));
    }
    let mut c = [0.0; 4];
    for (slot, p) in c.iter_mut().zip(&parts) {
        match p.parse::<f64>() {
            Ok(v) if v.is_finite() => *slot = v,
            _ => return Err(format!("not a number: `{p}`")),
        }
    }
    if c.iter().any(|&v| v > 1.0) {
        match size {
            Some((w, h)) if w > 0.0 && h > 0.0 => {
                c[0] /= w;
                c[2] /= w;
                c[1] /= h;
                c[3] /= h;
            }
            _ => return Err("pixel coordinates without an image size".into()),
        }
    }
    let c = c.map(|v| v.clamp(0.0, 1.0));
    BBox::new(c[0], c[1], c[2], c[3]).map_err(|_| "degenerate box".to_string())
}

/// Extracts every `name:[n, n, n, n]` segment. Detections get confidence
/// 1.0 and keep emission order.
pub fn parse_detection_output(text: &str, size: Option<ImageSize>) -> ParsedDetections {
    let mut out = ParsedDetections::default();
    for caps in segment_re().captures_iter(text) {
        let name = caps[1].trim();
        let segment = caps[0].trim().to_string();
        if name.is_empty() {
            out.diagnostics.push(Diagnostic {
                segment,
                reason: "missing class name".into(),
            });
            continue;
        }
        match parse_box_body(&caps[2], size) {
            Ok(bbox) => out.entries.push(ParsedEntry {
                class_name: name.to_string(),
                bbox,
                confidence: 1.0,
            }),
            Err(reason) => out.diagnostics.push(Diagnostic { segment, reason }),
        }
    }
    out
}

/// First bracketed list in `text` that forms a valid box.
pub fn parse_bbox(text: &str, size: Option<ImageSize>) -> Result<BBox> {
    let mut reasons = Vec::new();
    for caps in bracket_re().captures_iter(text) {
        match parse_box_body(&caps[1], size) {
            Ok(b) => return Ok(b),
            Err(r) => reasons.push(r),
        }
    }
    Err(Error::Parse(if reasons.is_empty() {
        "no bracketed box found".into()
    } else {
        format!("no valid box: {}", reasons.join("; "))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountAnswer {
    Letter(char),
    Number(u64),
}

/// A leading standalone `A`-`D` wins; otherwise the first integer.
pub fn parse_count(text: &str) -> Option<CountAnswer> {
    static LETTER: OnceLock<Regex> = OnceLock::new();
    static NUMBER: OnceLock<Regex> = OnceLock::new();
    let letter = LETTER.get_or_init(|| Regex::new(r"^\s*[(\[]?([A-D])(?:$|[^A-Za-z0-9])").expect("letter regex"));
    if let Some(c) = letter.captures(text) {
        return c[1].chars().next().map(CountAnswer::Letter);
    }
    let number = NUMBER.get_or_init(|| Regex::new(r"\d+").expect("number regex"));
    number
        .find(text)
        .and_then(|m| m.as_str().parse().ok())
        .map(CountAnswer::Number)
}
