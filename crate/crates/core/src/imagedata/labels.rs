//! Ground-truth CSV in the ISIC-2018 task 3 layout.

use std::fmt::Write as _;

use super::{SoftLabel, CLASS_COUNT};
use crate::{Error, Result};

pub const LABELS_HEADER: &str = "image,MEL,NV,BCC,AKIEC,BKL,DF,VASC";

/// Accepted deviation of a CSV row's sum from 1. Rows are rescaled to sum
/// to 1 afterwards so they meet the tighter [`SoftLabel`] invariant.
pub const ROW_SUM_TOL: f64 = 1e-6;

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

/// Parses `image,MEL,...,VASC` rows. Line numbers in errors are 1-based.
pub fn load_labels_csv(text: &str) -> Result<Vec<(String, SoftLabel)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == LABELS_HEADER => {}
        Some((_, h)) => {
            return Err(parse_err(1, format!("expected header `{LABELS_HEADER}`, found `{h}`")))
        }
        None => return Err(parse_err(1, "empty file; header required")),
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CLASS_COUNT + 1 {
            return Err(parse_err(
                line_no,
                format!("expected {} fields, found {}", CLASS_COUNT + 1, fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(parse_err(line_no, "empty image id"));
        }
        let mut probs = [0.0; CLASS_COUNT];
        for (k, f) in fields[1..].iter().enumerate() {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(line_no, format!("non-numeric field `{f}`")))?;
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(parse_err(line_no, format!("value {v} outside [0, 1]")));
            }
            probs[k] = v;
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(parse_err(line_no, format!("row sums to {sum}, expected 1")));
        }
        if sum != 1.0 {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        let label = SoftLabel::new(probs).map_err(|e| parse_err(line_no, e.to_string()))?;
        out.push((id.to_string(), label));
    }
    Ok(out)
}

/// Writes rows in the same schema [`load_labels_csv`] reads. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_labels_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a SoftLabel)>) -> String {
    let mut out = String::from(LABELS_HEADER);
    out.push('\n');
    for (id, label) in rows {
        out.push_str(id);
        for p in label.probs() {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    out
}
