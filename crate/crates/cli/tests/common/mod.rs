//! Helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dune_detect::dataset::{split_dataset, write_dataset, SplitRatio};
use dune_detect::eval::{format_predictions, Detection};
use dune_detect::sat::{make_background, make_synthetic_shapes};
use serde_json::Value;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dune-detect"));
    c.env_remove("DUNE_DETECT_SEED");
    c
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A small labelled dataset in the split layout plus a pool of negatives.
pub fn fixture(dir: &Path) {
    let imgs = make_synthetic_shapes(20, 32, 3, 11).unwrap();
    let ids: Vec<String> = imgs.iter().map(|i| i.id.clone()).collect();
    let split = split_dataset(&ids, SplitRatio::DEFAULT, 0).unwrap();
    write_dataset(&dir.join("raw"), &imgs, &split).unwrap();

    let neg = make_background(4, 32, 3);
    let nids: Vec<String> = neg.iter().map(|i| i.id.clone()).collect();
    let nsplit = split_dataset(&nids, SplitRatio([1.0, 0.0, 0.0]), 0).unwrap();
    write_dataset(&dir.join("neg"), &neg, &nsplit).unwrap();

    let dets: Vec<Detection> = imgs
        .iter()
        .flat_map(|img| {
            img.annotations
                .iter()
                .map(|a| Detection::new(img.id.clone(), a.class_id, 0.9, a.bbox))
        })
        .collect();
    fs::write(dir.join("oracle.txt"), format_predictions(&dets)).unwrap();
    let spec = serde_json::json!({
        "layers": [
            {"kind": "conv", "in_ch": 3, "out_ch": 16, "kernel": 3, "stride": 2},
            {"kind": "conv", "in_ch": 16, "out_ch": 32, "kernel": 3, "stride": 2}
        ],
        "width_multiple": 1.0,
        "depth_multiple": 1.0,
        "max_channels": 1024,
        "input_side": 32
    });
    fs::write(dir.join("tiny.json"), spec.to_string()).unwrap();
}

/// Runs every subcommand twice with seed 7, each time in a fresh directory
/// with identical relative paths, and returns the outputs that differ.
pub fn nondeterministic_outputs() -> Vec<String> {
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("ingest", vec!["ingest", "--in", "raw", "--out", "ing"]),
        ("split", vec!["split", "--in", "raw"]),
        (
            "augment",
            vec![
                "augment", "--in", "raw", "--out", "var", "--num-geom", "1", "--num-cutmix", "1",
                "--num-mosaic", "1", "--negatives", "neg",
            ],
        ),
        ("eval", vec!["eval", "--gt", "raw", "--pred", "oracle.txt", "--sweep", "sweep.csv"]),
        ("budget", vec!["budget", "--reference", "--prune-width", "0.33"]),
        ("bench", vec!["bench", "--spec", "tiny.json", "--iters", "10", "--warmup", "1"]),
        (
            "train-toy",
            vec!["train-toy", "--data", "synthetic:16", "--epochs", "2", "--patience", "1", "--out", "m.ckpt"],
        ),
        ("report", vec!["report", "--compare", "eval.json", "budget.json"]),
    ];
    let extra = ["m.ckpt", "m.history.csv", "var/manifest.json", "var/augment_manifest.json", "ing/manifest.json", "sweep.csv"];
    let dirs = [tempfile::TempDir::new().unwrap(), tempfile::TempDir::new().unwrap()];
    let mut outputs: Vec<Vec<(String, Vec<u8>)>> = vec![Vec::new(), Vec::new()];
    for (k, dir) in dirs.iter().enumerate() {
        fixture(dir.path());
        for (name, args) in &runs {
            let report = format!("{name}.json");
            let mut full: Vec<&str> = args.clone();
            full.extend(["--seed", "7", "--report", &report]);
            ok(dir.path(), &full);
            outputs[k].push((report.clone(), fs::read(dir.path().join(&report)).unwrap()));
        }
        for f in extra {
            outputs[k].push((f.to_string(), fs::read(dir.path().join(f)).unwrap()));
        }
    }
    outputs[0]
        .iter()
        .zip(&outputs[1])
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.clone())
        .collect()
}
