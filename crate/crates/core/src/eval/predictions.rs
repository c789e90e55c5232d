//! Predictions file: one `image_id class_id score cx cy w h` line per
//! detection.

use std::fmt::Write as _;

use super::Detection;
use crate::dataset::NormBox;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct PredictionError {
    pub line: usize,
    pub message: String,
}

pub fn parse_predictions(text: &str) -> Result<Vec<Detection>, PredictionError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let err = |message: String| PredictionError { line, message };
        if tokens.len() != 7 {
            return Err(err(format!("expected 7 tokens, found {}", tokens.len())));
        }
        let class_id: usize = tokens[1]
            .parse()
            .map_err(|_| err(format!("class id `{}` is not a non-negative integer", tokens[1])))?;
        let mut vals = [0.0f64; 5];
        for (slot, tok) in vals.iter_mut().zip(&tokens[2..]) {
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("`{tok}` is not a number")))?;
        }
        if !(0.0..=1.0).contains(&vals[0]) {
            return Err(err(format!("score {} outside [0, 1]", vals[0])));
        }
        out.push(Detection::new(
            tokens[0],
            class_id,
            vals[0],
            NormBox::new(vals[1], vals[2], vals[3], vals[4]),
        ));
    }
    Ok(out)
}

pub fn format_predictions(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = &d.bbox;
        let _ = writeln!(
            s,
            "{} {} {:.6} {:.6} {:.6} {:.6} {:.6}",
            d.image_id, d.class_id, d.score, b.cx, b.cy, b.w, b.h
        );
    }
    s
}
