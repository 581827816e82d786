//! The golden CLI pipeline: every subcommand, relative paths only, so two
//! runs in different directories must produce identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_paramdelta")
}

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn golden_dir() -> PathBuf {
    manifest_dir().join("tests/golden")
}

pub fn run(dir: &Path, threads: usize, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .env_remove("PARAMDELTA_THREADS")
        .env("RUST_LOG", "error")
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .expect("spawn paramdelta")
}

pub fn ok(dir: &Path, threads: usize, args: &[&str]) -> Output {
    let out = run(dir, threads, args);
    assert!(
        out.status.success(),
        "paramdelta {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const GEN: &[&str] = &["gen", "--layers", "2", "--hidden", "32", "--ffn", "32", "--vocab", "48"];

fn gen(dir: &Path, threads: usize, extra: &[&str]) {
    let args: Vec<&str> = GEN.iter().chain(extra).copied().collect();
    ok(dir, threads, &args);
}

/// Runs every subcommand in `dir` and returns all produced files.
pub fn run_pipeline(dir: &Path, threads: usize) -> BTreeMap<String, Vec<u8>> {
    std::fs::copy(
        manifest_dir().join("tests/fixtures/scores/llama_8b_transfer.csv"),
        dir.join("scores.csv"),
    )
    .unwrap();
    let t = threads;
    gen(dir, t, &["--seed", "1", "--dtype", "BF16", "-o", "base.ck"]);
    gen(dir, t, &["--seed", "1", "--dtype", "BF16", "--plant-seed", "7", "--plant-class", "feed_forward=4", "-o", "post.ck"]);
    gen(dir, t, &["--seed", "2", "--dtype", "BF16", "-o", "base2.ck"]);
    gen(dir, t, &["--seed", "2", "--dtype", "BF16", "--plant-seed", "9", "--plant-offset", "lm_head.weight=-0.125", "-o", "post2.ck"]);
    ok(dir, t, &["inspect", "post.ck", "-o", "inspect.json"]);
    ok(dir, t, &["validate", "base.ck", "post.ck", "-o", "compat.json"]);
    ok(dir, t, &["diff", "post.ck", "base.ck", "-o", "delta.ck", "--scenario", "1"]);
    ok(dir, t, &["diff", "post2.ck", "base2.ck", "-o", "delta2.ck"]);
    ok(dir, t, &["apply", "base2.ck", "delta.ck", "--alpha", "1", "-o", "transferred.ck", "--scenario", "1"]);
    ok(dir, t, &["apply", "base.ck", "delta.ck", "-o", "reconstructed.ck"]);
    ok(dir, t, &["fuse", "base2.ck", "--coeff", "delta.ck=0.5", "--coeff", "delta2.ck=0.5", "-o", "fused.ck", "--scenario", "4"]);
    ok(dir, t, &["fuse", "base2.ck", "--coeff", "delta.ck=-0.25", "--out-dtype", "f32", "-o", "fused_f32.ck"]);
    ok(dir, t, &["cosine", "delta.ck", "delta2.ck", "-o", "cosine.json"]);
    ok(dir, t, &["norms", "delta.ck", "--bins", "20", "-o", "norms.json"]);
    ok(dir, t, &[
        "gamma", "scores.csv", "--base-i", "llama3.1-8b-base", "--post-j", "llama3-8b-inst",
        "--base-j", "llama3-8b-base", "--real", "llama3.1-8b-base+delta", "-o", "gamma.json",
    ]);
    ok(dir, t, &["sweep", "base2.ck", "delta.ck", "--alpha", "1,0,0.5", "--template", "sweep-{alpha}.ck", "-o", "sweep.json"]);

    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name != "scores.csv" {
            files.insert(name, std::fs::read(&path).unwrap());
        }
    }
    files
}

pub fn digest_listing(files: &BTreeMap<String, Vec<u8>>) -> String {
    files
        .iter()
        .map(|(name, bytes)| {
            let hash = Sha256::digest(bytes);
            let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
            format!("{hex}  {name}\n")
        })
        .collect()
}

/// Compares against `tests/golden`; `UPDATE_GOLDEN=1` rewrites it instead.
/// Returns the names of mismatching files.
pub fn check_golden(files: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let dir = golden_dir();
    let listing = digest_listing(files);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("SHA256SUMS"), &listing).unwrap();
        for (name, bytes) in files.iter().filter(|(n, _)| n.ends_with(".json")) {
            std::fs::write(dir.join(name), bytes).unwrap();
        }
        return Vec::new();
    }
    let mut bad = Vec::new();
    let want = std::fs::read_to_string(dir.join("SHA256SUMS")).unwrap_or_default();
    if want != listing {
        let have: BTreeMap<&str, &str> = listing.lines().filter_map(|l| l.split_once("  ").map(|(h, n)| (n, h))).collect();
        let expected: BTreeMap<&str, &str> = want.lines().filter_map(|l| l.split_once("  ").map(|(h, n)| (n, h))).collect();
        for name in have.keys().chain(expected.keys()) {
            if have.get(name) != expected.get(name) && !bad.contains(&name.to_string()) {
                bad.push(name.to_string());
            }
        }
    }
    bad
}
