//! YOLO text label files: one `class cx cy w h` line per box.

use std::fmt::{self, Write as _};

use super::{Annotation, NormBox, EXTENT_TOLERANCE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct LabelError {
    /// 1-based line number.
    pub line: usize,
    pub kind: LabelErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelErrorKind {
    TokenCount(usize),
    NotNumeric(String),
    ClassOutOfRange { class_id: usize, class_count: usize },
    CoordinateOutOfRange { field: &'static str, value: f64 },
    NonPositiveSize { field: &'static str, value: f64 },
    EdgeOutOfRange { edge: &'static str, value: f64 },
}

impl fmt::Display for LabelErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelErrorKind::TokenCount(n) => write!(f, "expected 5 tokens, found {n}"),
            LabelErrorKind::NotNumeric(tok) => write!(f, "token `{tok}` is not a number"),
            LabelErrorKind::ClassOutOfRange {
                class_id,
                class_count,
            } => write!(f, "class id {class_id} out of range for {class_count} classes"),
            LabelErrorKind::CoordinateOutOfRange { field, value } => {
                write!(f, "{field} = {value} outside [0, 1]")
            }
            LabelErrorKind::NonPositiveSize { field, value } => {
                write!(f, "{field} = {value} must be positive")
            }
            LabelErrorKind::EdgeOutOfRange { edge, value } => {
                let bound = if *value < 0.0 { "< 0" } else { "> 1" };
                write!(f, "box {edge} edge {} {bound}", round_for_display(*value))
            }
        }
    }
}

// 0.9 + 0.4 / 2 prints as 1.1 rather than 1.1000000000000001
fn round_for_display(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Parses a label file. Blank lines are skipped; line numbers in errors are
/// 1-based and count blank lines.
pub fn parse_label_file(text: &str, class_count: usize) -> Result<Vec<Annotation>, LabelError> {
    let mut out = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw_line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let err = |kind| LabelError { line, kind };
        if tokens.len() != 5 {
            return Err(err(LabelErrorKind::TokenCount(tokens.len())));
        }
        let class_id: usize = tokens[0]
            .parse()
            .map_err(|_| err(LabelErrorKind::NotNumeric(tokens[0].to_string())))?;
        if class_id >= class_count {
            return Err(err(LabelErrorKind::ClassOutOfRange {
                class_id,
                class_count,
            }));
        }
        let mut vals = [0.0f64; 4];
        for (slot, tok) in vals.iter_mut().zip(&tokens[1..]) {
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(LabelErrorKind::NotNumeric(tok.to_string())))?;
        }
        const FIELDS: [&str; 4] = ["cx", "cy", "w", "h"];
        for (field, value) in FIELDS.iter().zip(vals) {
            if !(0.0..=1.0).contains(&value) {
                return Err(err(LabelErrorKind::CoordinateOutOfRange { field, value }));
            }
        }
        for (field, value) in FIELDS[2..].iter().zip(&vals[2..]) {
            if *value <= 0.0 {
                return Err(err(LabelErrorKind::NonPositiveSize {
                    field,
                    value: *value,
                }));
            }
        }
        let bbox = NormBox::new(vals[0], vals[1], vals[2], vals[3]);
        let (x1, y1, x2, y2) = bbox.corners();
        for (edge, value) in [("left", x1), ("top", y1), ("right", x2), ("bottom", y2)] {
            if !(-EXTENT_TOLERANCE..=1.0 + EXTENT_TOLERANCE).contains(&value) {
                return Err(err(LabelErrorKind::EdgeOutOfRange { edge, value }));
            }
        }
        out.push(Annotation::new(class_id, bbox));
    }
    Ok(out)
}

/// Serializes annotations with six fractional digits and LF line endings.
pub fn format_labels(annotations: &[Annotation]) -> String {
    let mut s = String::with_capacity(annotations.len() * 40);
    for a in annotations {
        let b = &a.bbox;
        let _ = writeln!(
            s,
            "{} {:.6} {:.6} {:.6} {:.6}",
            a.class_id, b.cx, b.cy, b.w, b.h
        );
    }
    s
}
