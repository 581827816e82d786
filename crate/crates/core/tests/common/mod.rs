#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub mod pipeline;
pub mod stats;

use paramdelta::analysis::LayerClass;
use paramdelta::gen::{generate, GenSpec, Plant};
use paramdelta::{Checkpoint, DType, ExecOptions};

pub fn spec(seed: u64, dtype: DType) -> GenSpec {
    GenSpec {
        seed,
        layers: 2,
        hidden_dim: 16,
        ffn_dim: 24,
        vocab: 20,
        dtype,
        ..GenSpec::default()
    }
}

pub fn planted(mut s: GenSpec, plant_seed: u64, scale: f32) -> GenSpec {
    s.plant = Some(Plant::new(plant_seed, scale));
    s
}

pub fn with_class_scale(mut s: GenSpec, class: LayerClass, factor: f32) -> GenSpec {
    s.plant.as_mut().expect("planted spec").class_scales.insert(class, factor);
    s
}

pub fn gen(dir: &Path, name: &str, spec: &GenSpec) -> (PathBuf, Checkpoint) {
    let path = dir.join(name);
    let ck = generate(spec, &path).expect("generate");
    (path, ck)
}

/// Every tensor in working precision, by name.
pub fn values(ck: &Checkpoint) -> BTreeMap<String, Vec<f32>> {
    let opts = ExecOptions::default();
    ck.names()
        .map(|n| (n.to_string(), ck.read_tensor(n, &opts).unwrap().0.into_vec()))
        .collect()
}

/// Raw stored bytes of every tensor, by name.
pub fn raw(ck: &Checkpoint) -> BTreeMap<String, Vec<u8>> {
    ck.names().map(|n| (n.to_string(), ck.read_raw(n).unwrap())).collect()
}

/// Unit in the last place of an f32 magnitude.
pub fn ulp_f32(x: f32) -> f32 {
    let x = x.abs();
    if x == 0.0 || !x.is_finite() {
        return f32::from_bits(1);
    }
    let next = f32::from_bits(x.to_bits() + 1);
    next - x
}

/// Distance in representable f32 steps.
pub fn ulp_distance(a: f32, b: f32) -> u32 {
    fn key(x: f32) -> i64 {
        let bits = x.to_bits() as i32 as i64;
        if bits < 0 {
            i64::from(i32::MIN) - bits
        } else {
            bits
        }
    }
    (key(a) - key(b)).unsigned_abs() as u32
}

/// `|got − want|` in units of the f32 ULP at `scale`, the largest magnitude
/// that took part in producing the element.
pub fn ulps_at(got: f32, want: f32, scale: f32) -> f64 {
    (got as f64 - want as f64).abs() / ulp_f32(scale) as f64
}

pub fn interop_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/interop")
}

/// Diffs the reference-writer fixtures and compares every element, bit for
/// bit, with the values the reference toolchain computed. Returns the number
/// of tensors checked or a description of the first mismatch.
pub fn check_interop(out_dir: &Path) -> Result<usize, String> {
    let dir = interop_dir();
    let base = Checkpoint::open(dir.join("base.safetensors")).map_err(|e| e.to_string())?;
    let post = Checkpoint::open(dir.join("post.safetensors")).map_err(|e| e.to_string())?;
    let expected: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    let delta = paramdelta::extract_delta(&post, &base, out_dir.join("interop.delta"), &ExecOptions::default())
        .map_err(|e| e.to_string())?;
    let (dv, pv) = (values(&delta), values(&post));
    if dv.len() != expected.len() {
        return Err(format!("{} tensors, expected {}", dv.len(), expected.len()));
    }
    let floats = |v: &serde_json::Value| -> Vec<f32> {
        v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap() as f32).collect()
    };
    for (name, e) in &expected {
        let shape: Vec<usize> = e["shape"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect();
        let meta = post.get(name).ok_or_else(|| format!("{name} missing"))?;
        let dtype = match e["dtype"].as_str().unwrap() {
            "bfloat16" => "BF16",
            "float16" => "F16",
            "float32" => "F32",
            other => other,
        };
        if meta.shape != shape || meta.dtype.as_str() != dtype {
            return Err(format!("{name}: manifest {:?} {} vs {shape:?} {}", meta.shape, meta.dtype, e["dtype"]));
        }
        let same = |a: &[f32], b: &[f32]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        if !same(&pv[name], &floats(&e["post"])) {
            return Err(format!("{name}: decoded values differ"));
        }
        if !same(&dv[name], &floats(&e["delta"])) {
            return Err(format!("{name}: delta differs"));
        }
    }
    Ok(expected.len())
}

/// Why a reconstructed 16-bit element can legitimately differ from `post`
/// even though the arithmetic is correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mismatch {
    /// `post` is −0; `base + (−base)` is +0 under round-to-nearest.
    NegativeZero,
    /// `post − base` needs more than 24 significant bits, so the stored F32
    /// delta is already rounded.
    InexactDifference,
    Unexplained,
}

pub fn classify_mismatch(post: f32, base: f32, back: f32) -> Mismatch {
    let exact = post as f64 - base as f64;
    if post == 0.0 && post.is_sign_negative() && back == 0.0 {
        Mismatch::NegativeZero
    } else if (exact as f32) as f64 != exact {
        Mismatch::InexactDifference
    } else {
        Mismatch::Unexplained
    }
}

/// Elementwise comparison of a reconstruction against `post`: counts of
/// (total, mismatches per cause).
pub fn reconstruction_mismatches(post: &Checkpoint, base: &Checkpoint, back: &Checkpoint) -> (usize, BTreeMap<String, usize>) {
    let (pv, bv, rv) = (values(post), values(base), values(back));
    let (pr, rr) = (raw(post), raw(back));
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for (name, p) in &pv {
        total += p.len();
        if pr[name] == rr[name] {
            continue;
        }
        let width = post.get(name).unwrap().dtype.byte_width();
        for i in 0..p.len() {
            let span = i * width..(i + 1) * width;
            if pr[name][span.clone()] != rr[name][span] {
                let cause = classify_mismatch(p[i], bv[name][i], rv[name][i]);
                *counts.entry(format!("{cause:?}")).or_insert(0) += 1;
            }
        }
    }
    (total, counts)
}
