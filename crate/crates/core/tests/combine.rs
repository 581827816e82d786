mod common;

use std::collections::BTreeMap;
use std::path::Path;

use paramdelta::checkpoint::CheckpointKind;
use paramdelta::combine::{CombineSpec, CombineTerm};
use paramdelta::{
    apply_delta, extract_delta, fuse, linear_combine, write_checkpoint, Checkpoint, DType, ExecOptions,
    MissingPolicy, OutDTypePolicy, TensorSpec,
};
use proptest::prelude::*;

use common::*;

fn opts() -> ExecOptions {
    ExecOptions::default()
}

/// A file of named constant-valued F32 tensors.
fn constant(dir: &Path, file: &str, tensors: &[(&str, &[usize], f32)]) -> Checkpoint {
    let specs = tensors
        .iter()
        .map(|(n, s, _)| TensorSpec::new(*n, DType::F32, s.to_vec()))
        .collect();
    let fill: BTreeMap<&str, f32> = tensors.iter().map(|(n, _, v)| (*n, *v)).collect();
    write_checkpoint(dir.join(file), specs, &BTreeMap::new(), |s| {
        Ok(vec![fill[s.name.as_str()]; s.numel()])
    })
    .unwrap()
}

fn all_equal(ck: &Checkpoint, want: f32) {
    for (name, v) in values(ck) {
        assert!(v.iter().all(|&x| x == want), "{name}: {v:?} != {want}");
    }
}

#[test]
fn small_worked_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let two = constant(d, "two.ck", &[("w", &[2, 2], 2.0)]);
    let four = constant(d, "four.ck", &[("w", &[2, 2], 4.0)]);
    let one = constant(d, "one.ck", &[("w", &[2, 2], 1.0)]);

    let mut spec = CombineSpec::new(vec![CombineTerm::new(&two, 0.5), CombineTerm::new(&four, 0.5)]);
    spec.output_kind = CheckpointKind::Fused;
    all_equal(&linear_combine(&spec, d.join("avg.ck"), &opts()).unwrap(), 3.0);

    all_equal(&apply_delta(&one, &two, 0.5, MissingPolicy::Strict, d.join("a.ck"), &opts()).unwrap(), 2.0);
    all_equal(
        &fuse(&one, &[(&two, 0.5), (&four, 0.25)], MissingPolicy::Strict, d.join("f.ck"), &opts()).unwrap(),
        3.0,
    );

    let zero = extract_delta(&two, &two, d.join("z.ck"), &opts()).unwrap();
    all_equal(&zero, 0.0);
    assert!(values(&zero)["w"].iter().all(|x| x.is_sign_positive()));

    let ident = linear_combine(&CombineSpec::new(vec![CombineTerm::new(&four, 1.0)]), d.join("i.ck"), &opts()).unwrap();
    assert_eq!(raw(&ident), raw(&four));
}

#[test]
fn planted_offsets_are_recovered_exactly_in_the_delta() {
    let dir = tempfile::tempdir().unwrap();
    let base_spec = spec(4, DType::F32);
    let mut post_spec = planted(base_spec.clone(), 1, 0.0);
    let plant = post_spec.plant.as_mut().unwrap();
    plant.offsets.insert("model.norm.weight".into(), 0.5);
    plant.offsets.insert("lm_head.weight".into(), -0.25);
    let (_, base) = gen(dir.path(), "b.ck", &base_spec);
    let (_, post) = gen(dir.path(), "p.ck", &post_spec);
    let delta = extract_delta(&post, &base, dir.path().join("d.ck"), &opts()).unwrap();
    let (bv, pv, dv) = (values(&base), values(&post), values(&delta));
    for (name, d) in &dv {
        let off = post_spec.plant.as_ref().unwrap().offsets.get(name).copied().unwrap_or(0.0);
        for (i, &x) in d.iter().enumerate() {
            // Oracle: the f64 difference of the stored values, rounded once.
            let exact = (pv[name][i] as f64 - bv[name][i] as f64) as f32;
            assert_eq!(x.to_bits(), exact.to_bits(), "{name}[{i}]");
            assert!((x - off).abs() <= ulp_f32(bv[name][i]) + ulp_f32(off), "{name}[{i}]: {x} vs {off}");
        }
    }
}

#[test]
fn zero_base_gives_post_and_zero_alpha_gives_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, post) = gen(d, "p.ck", &planted(spec(2, DType::F32), 3, 0.01));
    let zeros = write_checkpoint(d.join("z.ck"), post.manifest().values().map(|m| {
        TensorSpec::new(m.name.clone(), DType::F32, m.shape.clone())
    }).collect(), &BTreeMap::new(), |s| Ok(vec![0.0; s.numel()])).unwrap();
    let delta = extract_delta(&post, &zeros, d.join("d.ck"), &opts()).unwrap();
    assert_eq!(raw(&delta), raw(&post));

    let (_, anchor) = gen(d, "a.ck", &spec(9, DType::BF16));
    let (_, p2) = gen(d, "p2.ck", &planted(spec(9, DType::F32), 3, 0.01));
    let (_, b2) = gen(d, "b2.ck", &spec(9, DType::F32));
    let d2 = extract_delta(&p2, &b2, d.join("d2.ck"), &opts()).unwrap();
    let same = apply_delta(&anchor, &d2, 0.0, MissingPolicy::Strict, d.join("s.ck"), &opts()).unwrap();
    assert_eq!(raw(&same), raw(&anchor));
}

#[test]
fn reconstruction_is_bit_exact_for_16_bit_and_within_2_ulp_for_f32() {
    let dir = tempfile::tempdir().unwrap();
    for (k, dtype) in [DType::BF16, DType::F16, DType::F32].into_iter().enumerate() {
        for seed in 0..3u64 {
            let tag = format!("{k}-{seed}");
            let (_, base) = gen(dir.path(), &format!("b{tag}"), &spec(seed, dtype));
            let (_, post) = gen(dir.path(), &format!("p{tag}"), &planted(spec(seed, dtype), seed + 100, 0.01));
            let delta = extract_delta(&post, &base, dir.path().join(format!("d{tag}")), &opts()).unwrap();
            let back = apply_delta(&base, &delta, 1.0, MissingPolicy::Strict, dir.path().join(format!("r{tag}")), &opts()).unwrap();
            if dtype == DType::F32 {
                let (want, got, bv) = (values(&post), values(&back), values(&base));
                for (name, w) in &want {
                    for ((a, b), z) in w.iter().zip(&got[name]).zip(&bv[name]) {
                        let e = ulps_at(*b, *a, a.abs().max(z.abs()));
                        assert!(e <= 2.0, "{name}: {a} vs {b} ({e} ulp)");
                    }
                }
            } else {
                // Bit-identical except where the F32 delta itself cannot hold
                // the exact difference or post carries a negative zero.
                let (_, causes) = reconstruction_mismatches(&post, &base, &back);
                assert!(!causes.contains_key("Unexplained"), "{dtype}: {causes:?}");
            }
        }
    }
}

#[test]
fn fusion_matches_sequential_application_on_f32() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, anchor) = gen(d, "anchor", &spec(50, DType::F32));
    let mut deltas = Vec::new();
    for s in [51u64, 52] {
        let (_, b) = gen(d, &format!("b{s}"), &spec(s, DType::F32));
        let (_, p) = gen(d, &format!("p{s}"), &planted(spec(s, DType::F32), s * 7, 0.01));
        deltas.push(extract_delta(&p, &b, d.join(format!("d{s}")), &opts()).unwrap());
    }
    for (a, b) in [(0.5, 0.5), (1.0, 1.0), (0.3, -0.7)] {
        let fused = fuse(&anchor, &[(&deltas[0], a), (&deltas[1], b)], MissingPolicy::Strict, d.join("f"), &opts()).unwrap();
        let step = apply_delta(&anchor, &deltas[0], a, MissingPolicy::Strict, d.join("s1"), &opts()).unwrap();
        let seq = apply_delta(&step, &deltas[1], b, MissingPolicy::Strict, d.join("s2"), &opts()).unwrap();
        let (fv, sv, av, mv) = (values(&fused), values(&seq), values(&anchor), values(&step));
        for (name, f) in &fv {
            for (i, (x, y)) in f.iter().zip(&sv[name]).enumerate() {
                let scale = [av[name][i], mv[name][i], *x].iter().fold(0f32, |m, v| m.max(v.abs()));
                let e = ulps_at(*x, *y, scale);
                assert!(e <= 2.0, "({a},{b}) {name}: {x} vs {y} ({e} ulp)");
            }
        }
    }
}

#[test]
fn term_order_does_not_change_bits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cks: Vec<Checkpoint> = (0..4u64).map(|s| gen(d, &format!("c{s}"), &spec(s, DType::F32)).1).collect();
    let coeffs = [1.0, -0.375, 2.5, 1e-3];
    let forward: Vec<CombineTerm> = cks.iter().zip(coeffs).map(|(c, k)| CombineTerm::new(c, k)).collect();
    let mut backward = forward.clone();
    backward.reverse();
    let mut fspec = CombineSpec::new(forward);
    fspec.out_dtype_policy = OutDTypePolicy::ForceF32;
    let mut bspec = CombineSpec::new(backward);
    bspec.out_dtype_policy = OutDTypePolicy::ForceF32;
    let f = linear_combine(&fspec, d.join("f"), &opts()).unwrap();
    let b = linear_combine(&bspec, d.join("b"), &opts()).unwrap();
    assert_eq!(raw(&f), raw(&b));

    // Oracle: the exact sum in f64 of f32 products, rounded once. Exact
    // unless the f64 sum itself rounds, which these magnitudes avoid.
    let vals: Vec<_> = cks.iter().map(values).collect();
    for (name, got) in values(&f) {
        for (i, g) in got.iter().enumerate() {
            let s: f64 = vals.iter().zip(coeffs).map(|(v, k)| (k as f32) as f64 * v[&name][i] as f64).sum();
            assert!(ulp_distance(*g, s as f32) <= 1, "{name}[{i}]");
        }
    }
}

#[test]
fn output_bytes_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let big = paramdelta::gen::GenSpec { hidden_dim: 96, ffn_dim: 160, ..spec(1, DType::BF16) };
    let (_, base) = gen(d, "b", &big);
    let (_, post) = gen(d, "p", &planted(big.clone(), 2, 0.01));
    let one = extract_delta(&post, &base, d.join("d1"), &ExecOptions::with_threads(1)).unwrap();
    let eight = extract_delta(&post, &base, d.join("d8"), &ExecOptions::with_threads(8)).unwrap();
    assert_eq!(std::fs::read(one.path()).unwrap().len(), std::fs::read(eight.path()).unwrap().len());
    assert_eq!(raw(&one), raw(&eight));
    let a1 = apply_delta(&base, &one, 0.7, MissingPolicy::Strict, d.join("a1"), &ExecOptions::with_threads(1)).unwrap();
    let a8 = apply_delta(&base, &one, 0.7, MissingPolicy::Strict, d.join("a8"), &ExecOptions::with_threads(8)).unwrap();
    assert_eq!(raw(&a1), raw(&a8));
}

#[test]
fn missing_tensor_policies() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let anchor = constant(d, "anchor", &[("a", &[2], 1.0), ("b", &[3], 1.0)]);
    let partial = constant(d, "partial", &[("a", &[2], 2.0), ("c", &[1], 9.0)]);

    let err = apply_delta(&anchor, &partial, 1.0, MissingPolicy::Strict, d.join("s"), &opts()).unwrap_err();
    assert_eq!(err.class(), "NotHomologous");
    assert!(!d.join("s").exists());

    let inter = apply_delta(&anchor, &partial, 1.0, MissingPolicy::Intersect, d.join("i"), &opts()).unwrap();
    assert_eq!(inter.names().collect::<Vec<_>>(), vec!["a"]);
    assert_eq!(values(&inter)["a"], vec![3.0, 3.0]);

    let pass = apply_delta(&anchor, &partial, 1.0, MissingPolicy::AnchorPassthrough, d.join("p"), &opts()).unwrap();
    assert_eq!(pass.names().collect::<Vec<_>>(), vec!["a", "b"]);
    assert_eq!(values(&pass)["b"], vec![1.0; 3]);

    let disjoint = constant(d, "disjoint", &[("z", &[1], 1.0)]);
    let err = apply_delta(&anchor, &disjoint, 1.0, MissingPolicy::Intersect, d.join("e"), &opts()).unwrap_err();
    assert_eq!(err.class(), "EmptyIntersection");

    let reshaped = constant(d, "reshaped", &[("a", &[1, 2], 1.0), ("b", &[3], 1.0)]);
    for policy in [MissingPolicy::Strict, MissingPolicy::Intersect, MissingPolicy::AnchorPassthrough] {
        let err = apply_delta(&anchor, &reshaped, 1.0, policy, d.join("r"), &opts()).unwrap_err();
        assert_eq!(err.class(), "ShapeConflict");
    }

    for bad in [f64::NAN, f64::INFINITY, 1e300] {
        let err = apply_delta(&anchor, &anchor, bad, MissingPolicy::Strict, d.join("n"), &opts()).unwrap_err();
        assert_eq!(err.class(), "NonFiniteCoefficient");
    }
}

#[test]
fn outputs_carry_kind_and_recipe() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = constant(d, "a", &[("w", &[1], 1.0)]);
    let b = constant(d, "b", &[("w", &[1], 2.0)]);
    let f = apply_delta(&a, &b, 0.5, MissingPolicy::Intersect, d.join("o"), &opts()).unwrap();
    assert_eq!(f.kind(), CheckpointKind::Fused);
    let recipe = &f.metadata()["paramdelta.recipe"];
    assert!(recipe.contains("missing=intersect"), "{recipe}");
    assert!(recipe.contains(&format!("{}*", b.path().display())), "{recipe}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Linearity against an f64 oracle on arbitrary finite inputs.
    #[test]
    fn two_term_combination_is_correctly_rounded(
        xs in prop::collection::vec(-1e3f32..1e3, 1..40),
        ys_seed in any::<u64>(),
        a in -4.0f64..4.0,
        b in -4.0f64..4.0,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let n = xs.len();
        let mut s = ys_seed;
        let ys: Vec<f32> = (0..n).map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((s >> 40) as f32 / (1u64 << 24) as f32 - 0.5) * 2e3
        }).collect();
        let mk = |file: &str, v: Vec<f32>| write_checkpoint(
            dir.path().join(file), vec![TensorSpec::new("t", DType::F32, vec![n])], &BTreeMap::new(),
            move |_| Ok(v.clone())).unwrap();
        let x = mk("x", xs.clone());
        let y = mk("y", ys.clone());
        let out = linear_combine(
            &CombineSpec::new(vec![CombineTerm::new(&x, a), CombineTerm::new(&y, b)]),
            dir.path().join("o"), &ExecOptions::default()).unwrap();
        let got = &values(&out)["t"];
        for i in 0..n {
            let exact = (a as f32) as f64 * xs[i] as f64 + (b as f32) as f64 * ys[i] as f64;
            prop_assert!(ulp_distance(got[i], exact as f32) <= 1, "{} vs {}", got[i], exact);
        }
    }
}
