#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub const PIPELINE_CONFIG: &str = r#"seed = 42
out_dir = "run"

[provider.sim]
site_probability = 0.6

[[regions]]
name = "a"
bottom_left = [-20.0, -40.0]
top_right = [-19.995, -39.995]

[[regions]]
name = "b"
bottom_left = [-20.0, -39.995]
top_right = [-19.995, -39.99]

[[regions]]
name = "c"
bottom_left = [-19.995, -40.0]
top_right = [-19.99, -39.995]

[[regions]]
name = "d"
bottom_left = [-19.995, -39.995]
top_right = [-19.99, -39.99]
"#;

/// Runs the binary in `dir` with a scrubbed environment.
pub fn crosswalk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crosswalk"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = crosswalk(dir, args);
    assert!(
        out.status.success(),
        "crosswalk {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub struct PipelineRun {
    pub manifest: Vec<u8>,
    pub eval: serde_json::Value,
    pub eval_text: String,
}

/// plan, harvest, annotate, split, train-baseline, predict, eval in `dir`.
pub fn run_pipeline(dir: &Path) -> PipelineRun {
    std::fs::write(dir.join("crosswalk.toml"), PIPELINE_CONFIG).unwrap();
    ok(dir, &["plan"]);
    ok(dir, &["harvest"]);
    // Review the first few samples and confirm their automatic labels.
    let manifest = std::fs::read_to_string(dir.join("run/manifest.jsonl")).unwrap();
    let mut overrides = String::new();
    for line in manifest.lines().skip(1).take(3) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        overrides += &format!("{}\t{}\n", v["sample_id"].as_str().unwrap(), v["label"].as_str().unwrap());
    }
    std::fs::write(dir.join("overrides.tsv"), overrides).unwrap();
    ok(dir, &["annotate", "--overrides", "overrides.tsv"]);
    ok(dir, &["split"]);
    ok(dir, &["train-baseline"]);
    ok(dir, &["predict"]);
    let eval_text = ok(dir, &["eval", "--spans", "run/spans.tsv"]);
    PipelineRun {
        manifest: std::fs::read(dir.join("run/manifest.jsonl")).unwrap(),
        eval: serde_json::from_slice(&std::fs::read(dir.join("run/eval.json")).unwrap()).unwrap(),
        eval_text,
    }
}
