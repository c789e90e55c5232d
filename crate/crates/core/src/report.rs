//! Side-by-side comparison of run reports.
//!
//! Any JSON report written by the tool (evaluation, budget, benchmark,
//! training) can be fed in. Metrics are looked up by field name, the
//! shallowest occurrence winning, so a report only has to carry the fields
//! it knows about; everything else renders as an empty cell.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{source_name}: report must be a JSON object")]
    NotAnObject { source_name: String },
    #[error("{source_name}: field `{field}` must be a non-negative number")]
    BadField { source_name: String, field: String },
    #[error("{source_name}: no comparable metric fields found")]
    NoMetrics { source_name: String },
    #[error("aggregation needs at least one row")]
    Empty,
}

/// Column order of the comparison table.
pub const COLUMNS: [&str; 7] = [
    "mAP@0.50:0.95",
    "mAP@0.50",
    "mAP@0.75",
    "Params",
    "FLOPs (G)",
    "Size (MB)",
    "Latency (ms)",
];

/// One table row. `None` cells were absent from the sources.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub map5095: Option<f64>,
    pub map50: Option<f64>,
    pub map75: Option<f64>,
    pub params: Option<f64>,
    pub gflops: Option<f64>,
    pub size_mb: Option<f64>,
    pub latency_ms: Option<f64>,
}

// (column field, accepted keys in priority order)
const FIELDS: [(&str, &[&str]); 7] = [
    ("map5095", &["map5095"]),
    ("map50", &["map50"]),
    ("map75", &["map75"]),
    ("params", &["params"]),
    ("gflops", &["gflops"]),
    ("size_mb", &["size_mb"]),
    ("latency_ms", &["latency_ms", "median_ms"]),
];

impl ComparisonRow {
    pub fn cells(&self) -> [Option<f64>; 7] {
        [
            self.map5095,
            self.map50,
            self.map75,
            self.params,
            self.gflops,
            self.size_mb,
            self.latency_ms,
        ]
    }

    fn cell_mut(&mut self, field: &str) -> &mut Option<f64> {
        match field {
            "map5095" => &mut self.map5095,
            "map50" => &mut self.map50,
            "map75" => &mut self.map75,
            "params" => &mut self.params,
            "gflops" => &mut self.gflops,
            "size_mb" => &mut self.size_mb,
            _ => &mut self.latency_ms,
        }
    }

    /// Fills cells that are still empty from `other`.
    pub fn fill_from(&mut self, other: &ComparisonRow) {
        let mut other = other.clone();
        for (field, _) in FIELDS {
            let v = *other.cell_mut(field);
            let slot = self.cell_mut(field);
            if slot.is_none() {
                *slot = v;
            }
        }
    }
}

/// Breadth-first lookup so top-level fields win over nested ones.
fn find_field<'a>(root: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    let mut queue: VecDeque<&Map<String, Value>> = VecDeque::from([root]);
    while let Some(obj) = queue.pop_front() {
        if let Some(v) = obj.get(key) {
            if !v.is_null() {
                return Some(v);
            }
        }
        for v in obj.values() {
            match v {
                Value::Object(m) => queue.push_back(m),
                Value::Array(items) => queue.extend(items.iter().filter_map(Value::as_object)),
                _ => {}
            }
        }
    }
    None
}

/// Extracts one row from a parsed report.
pub fn row_from_value(name: &str, value: &Value) -> Result<ComparisonRow, ReportError> {
    let obj = value.as_object().ok_or_else(|| ReportError::NotAnObject {
        source_name: name.to_string(),
    })?;
    let mut row = ComparisonRow {
        name: name.to_string(),
        ..ComparisonRow::default()
    };
    for (field, keys) in FIELDS {
        for key in keys {
            if let Some(v) = find_field(obj, key) {
                let num = v.as_f64().filter(|n| n.is_finite() && *n >= 0.0).ok_or_else(|| {
                    ReportError::BadField {
                        source_name: name.to_string(),
                        field: key.to_string(),
                    }
                })?;
                *row.cell_mut(field) = Some(num);
                break;
            }
        }
    }
    if row.cells().iter().all(Option::is_none) {
        return Err(ReportError::NoMetrics {
            source_name: name.to_string(),
        });
    }
    Ok(row)
}

/// Merges several parsed reports into one row; earlier sources take
/// precedence. Sources without any metric are rejected.
pub fn merged_row(name: &str, parts: &[(String, Value)]) -> Result<ComparisonRow, ReportError> {
    let mut row = ComparisonRow {
        name: name.to_string(),
        ..ComparisonRow::default()
    };
    for (part_name, value) in parts {
        row.fill_from(&row_from_value(part_name, value)?);
    }
    Ok(row)
}

/// Mean and sample standard deviation of each column, over the rows that
/// have it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub runs: usize,
    pub mean: ComparisonRow,
    pub sd: ComparisonRow,
}

pub fn aggregate(rows: &[ComparisonRow]) -> Result<AggregateRow, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut mean = ComparisonRow {
        name: "mean".into(),
        ..ComparisonRow::default()
    };
    let mut sd = ComparisonRow {
        name: "sd".into(),
        ..ComparisonRow::default()
    };
    for (field, _) in FIELDS {
        let values: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.cells()[FIELDS.iter().position(|(f, _)| *f == field).expect("known field")])
            .collect();
        if values.is_empty() {
            continue;
        }
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        *mean.cell_mut(field) = Some(m);
        *sd.cell_mut(field) = Some(var.sqrt());
    }
    Ok(AggregateRow {
        runs: rows.len(),
        mean,
        sd,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Header plus one line per row; LF endings.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = format!("name,{}\n", COLUMNS.join(","));
    for r in rows {
        let cells: Vec<String> = r.cells().iter().map(|c| cell(*c)).collect();
        out.push_str(&format!("{},{}\n", csv_escape(&r.name), cells.join(",")));
    }
    out
}

/// Single `mean ± sd` line under the standard header.
pub fn aggregate_csv(agg: &AggregateRow) -> String {
    let mut out = format!("name,runs,{}\n", COLUMNS.join(","));
    let cells: Vec<String> = agg
        .mean
        .cells()
        .iter()
        .zip(agg.sd.cells())
        .map(|(m, s)| match (m, s) {
            (Some(m), Some(s)) => format!("{m} ± {s}"),
            _ => String::new(),
        })
        .collect();
    out.push_str(&format!("mean ± sd,{},{}\n", agg.runs, cells.join(",")));
    out
}
