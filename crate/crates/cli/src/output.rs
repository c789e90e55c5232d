//! Report envelopes, serialization and sidecar files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutFormat {
    Json,
    Csv,
}

/// SHA-256 of the compact JSON form. Map keys are sorted, so equal configs
/// hash equally regardless of construction order.
pub fn config_hash(config: &Value) -> String {
    let canonical = serde_json::to_string(config).expect("JSON value serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn envelope(command: &str, seed: u64, config: Value, result: Value) -> Value {
    json!({
        "command": command,
        "reproducibility": {
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": config_hash(&config),
        },
        "config": config,
        "result": result,
    })
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// Pretty JSON with a trailing newline.
pub fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s
}

fn flatten_into(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                flatten_into(&key(k), child, out);
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten_into(&key(&i.to_string()), child, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `key,value` rows with dotted paths.
pub fn flat_csv(v: &Value) -> String {
    let mut rows = Vec::new();
    flatten_into("", v, &mut rows);
    let mut out = String::from("key,value\n");
    for (k, val) in rows {
        out.push_str(&format!("{},{}\n", csv_field(&k), csv_field(&val)));
    }
    out
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Inverse of [`flat_csv`] up to array-vs-object: indices become keys.
pub fn unflatten_csv(text: &str) -> Result<Value> {
    let mut lines = text.lines();
    anyhow::ensure!(lines.next() == Some("key,value"), "not a key,value report");
    let mut root = Map::new();
    for (n, line) in lines.enumerate() {
        let f = split_csv_line(line);
        anyhow::ensure!(f.len() == 2, "line {}: expected 2 fields", n + 2);
        let value = if f[1].is_empty() {
            Value::Null
        } else if let Ok(x) = f[1].parse::<f64>() {
            json!(x)
        } else {
            Value::String(f[1].clone())
        };
        let parts: Vec<&str> = f[0].split('.').collect();
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            let child = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            node = child
                .as_object_mut()
                .with_context(|| format!("line {}: `{}` is both a value and a group", n + 2, f[0]))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(Value::Object(root))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `dir/stem.<suffix>` next to `path`.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Writes the wall-clock sidecar of a report file.
pub fn write_meta(report: &Path, command: &str) -> Result<()> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let meta = json!({
        "command": command,
        "report": report.file_name().map(|n| n.to_string_lossy().into_owned()),
        "created_unix_s": now.as_secs(),
    });
    write_text(&sidecar_path(report, "meta.json"), &json_text(&meta))
}
