//! Streaming linear combination of homologous checkpoints.
//!
//! Every recipe (delta extraction, delta application, multi-delta fusion) is
//! a weighted sum `out[name] = Σ coeffᵢ · termᵢ[name]` evaluated one tensor at
//! a time in name order. Sums use error-free transformations so the result is
//! the working-precision rounding of a nearly exact sum.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::buffer::{ExecOptions, CHUNK};
use crate::checkpoint::{
    validate_homologous, Checkpoint, CheckpointKind, META_KIND, META_MINUEND, META_RECIPE,
    META_SUBTRAHEND,
};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::writer::{CheckpointWriter, TensorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Every term must be homologous with the anchor.
    #[default]
    Strict,
    /// Only tensors present in every term are written.
    Intersect,
    /// Anchor tensors are always written; terms lacking a tensor simply do
    /// not contribute to it.
    AnchorPassthrough,
}

impl MissingPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            MissingPolicy::Strict => "strict",
            MissingPolicy::Intersect => "intersect",
            MissingPolicy::AnchorPassthrough => "anchor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutDTypePolicy {
    #[default]
    MatchAnchor,
    ForceF32,
}

impl OutDTypePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            OutDTypePolicy::MatchAnchor => "match-anchor",
            OutDTypePolicy::ForceF32 => "f32",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CombineTerm<'a> {
    pub checkpoint: &'a Checkpoint,
    pub coefficient: f64,
}

impl<'a> CombineTerm<'a> {
    pub fn new(checkpoint: &'a Checkpoint, coefficient: f64) -> Self {
        Self {
            checkpoint,
            coefficient,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CombineSpec<'a> {
    pub terms: Vec<CombineTerm<'a>>,
    pub missing_policy: MissingPolicy,
    pub anchor_index: usize,
    pub out_dtype_policy: OutDTypePolicy,
    /// Kind tag written to the output.
    pub output_kind: CheckpointKind,
    /// Extra provenance merged into the output metadata.
    pub metadata: BTreeMap<String, String>,
}

impl<'a> CombineSpec<'a> {
    /// A plain combination anchored on the first term.
    pub fn new(terms: Vec<CombineTerm<'a>>) -> Self {
        Self {
            terms,
            missing_policy: MissingPolicy::Strict,
            anchor_index: 0,
            out_dtype_policy: OutDTypePolicy::MatchAnchor,
            output_kind: CheckpointKind::Fused,
            metadata: BTreeMap::new(),
        }
    }

    /// `post − base`, stored in F32.
    pub fn delta(post: &'a Checkpoint, base: &'a Checkpoint) -> Self {
        let mut spec = Self::new(vec![CombineTerm::new(post, 1.0), CombineTerm::new(base, -1.0)]);
        spec.out_dtype_policy = OutDTypePolicy::ForceF32;
        spec.output_kind = CheckpointKind::Delta;
        spec.metadata
            .insert(META_MINUEND.to_string(), checkpoint_id(post));
        spec.metadata
            .insert(META_SUBTRAHEND.to_string(), checkpoint_id(base));
        spec
    }

    /// `anchor + alpha · delta`.
    pub fn apply(anchor: &'a Checkpoint, delta: &'a Checkpoint, alpha: f64, policy: MissingPolicy) -> Self {
        Self::fuse(anchor, &[(delta, alpha)], policy)
    }

    /// `anchor + Σ coeffᵢ · deltaᵢ`.
    pub fn fuse(anchor: &'a Checkpoint, deltas: &[(&'a Checkpoint, f64)], policy: MissingPolicy) -> Self {
        for (d, _) in deltas {
            if d.kind() != CheckpointKind::Delta {
                log::warn!(
                    "{} is not tagged as a delta (kind={}); treating it as one",
                    d.path().display(),
                    d.kind()
                );
            }
        }
        let mut terms = vec![CombineTerm::new(anchor, 1.0)];
        terms.extend(deltas.iter().map(|&(d, c)| CombineTerm::new(d, c)));
        let mut spec = Self::new(terms);
        spec.missing_policy = policy;
        spec
    }

    pub fn anchor(&self) -> Option<&CombineTerm<'a>> {
        self.terms.get(self.anchor_index)
    }

    /// Canonical text rendering recorded as `paramdelta.recipe`.
    pub fn recipe(&self) -> String {
        let mut s = String::from("terms=");
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                s.push(';');
            }
            let _ = write!(s, "{}*{:.16e}", checkpoint_id(t.checkpoint), t.coefficient);
        }
        let _ = write!(
            s,
            "|missing={}|anchor={}|out_dtype={}",
            self.missing_policy.as_str(),
            self.anchor_index,
            self.out_dtype_policy.as_str()
        );
        s
    }

    fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidSpec("no terms".into()));
        }
        let anchor = self.anchor().ok_or_else(|| {
            Error::InvalidSpec(format!(
                "anchor index {} out of range for {} terms",
                self.anchor_index,
                self.terms.len()
            ))
        })?;
        for t in &self.terms {
            if !t.coefficient.is_finite() || !(t.coefficient as f32).is_finite() {
                return Err(Error::NonFiniteCoefficient(t.coefficient));
            }
        }
        if self.missing_policy == MissingPolicy::AnchorPassthrough && anchor.coefficient != 1.0 {
            return Err(Error::InvalidSpec(format!(
                "anchor passthrough requires anchor coefficient 1, got {}",
                anchor.coefficient
            )));
        }
        Ok(())
    }
}

/// Identifier recorded in provenance metadata for a checkpoint.
pub fn checkpoint_id(ckpt: &Checkpoint) -> String {
    ckpt.path().display().to_string()
}

/// One output tensor and the term indices contributing to it.
struct PlannedTensor {
    spec: TensorSpec,
    terms: Vec<usize>,
}

fn plan(spec: &CombineSpec<'_>) -> Result<Vec<PlannedTensor>> {
    let anchor = spec.terms[spec.anchor_index].checkpoint;

    // Shape conflicts on shared names are fatal under every policy.
    for (i, t) in spec.terms.iter().enumerate() {
        if i == spec.anchor_index {
            continue;
        }
        let report = validate_homologous(anchor, t.checkpoint);
        if let Some(m) = report.shape_mismatches.first() {
            return Err(Error::ShapeConflict {
                name: m.name.clone(),
                a: m.shape_a.clone(),
                b: m.shape_b.clone(),
            });
        }
        if spec.missing_policy == MissingPolicy::Strict && !report.homologous {
            return Err(Error::NotHomologous(format!(
                "{} vs {}: {}",
                anchor.path().display(),
                t.checkpoint.path().display(),
                report.describe()
            )));
        }
    }
    // Names outside the anchor may still disagree among the other terms.
    let mut shapes: BTreeMap<&str, &[usize]> = BTreeMap::new();
    for t in &spec.terms {
        for (name, meta) in t.checkpoint.manifest() {
            match shapes.get(name.as_str()) {
                Some(&s) if s != meta.shape.as_slice() => {
                    return Err(Error::ShapeConflict {
                        name: name.clone(),
                        a: s.to_vec(),
                        b: meta.shape.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    shapes.insert(name, &meta.shape);
                }
            }
        }
    }

    let mut planned = Vec::new();
    for (name, meta) in anchor.manifest() {
        let present: Vec<usize> = (0..spec.terms.len())
            .filter(|&i| spec.terms[i].checkpoint.contains(name))
            .collect();
        if present.len() < spec.terms.len() && spec.missing_policy == MissingPolicy::Intersect {
            log::warn!("skipping `{name}`: missing from at least one term");
            continue;
        }
        let dtype = match spec.out_dtype_policy {
            OutDTypePolicy::MatchAnchor => meta.dtype,
            OutDTypePolicy::ForceF32 => DType::F32,
        };
        planned.push(PlannedTensor {
            spec: TensorSpec::new(name.clone(), dtype, meta.shape.clone()),
            terms: present,
        });
    }
    for t in &spec.terms {
        let extra = t.checkpoint.names().filter(|n| !anchor.contains(n)).count();
        if extra > 0 {
            log::warn!(
                "{}: {extra} tensor(s) absent from the anchor are ignored",
                t.checkpoint.path().display()
            );
        }
    }
    if planned.is_empty() && !anchor.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok(planned)
}

/// Evaluates `spec` and streams the result to `out`.
pub fn linear_combine(spec: &CombineSpec<'_>, out: impl AsRef<Path>, opts: &ExecOptions) -> Result<Checkpoint> {
    spec.validate()?;
    let planned = plan(spec)?;

    let mut metadata = spec.metadata.clone();
    metadata.insert(META_KIND.to_string(), spec.output_kind.as_str().to_string());
    metadata.insert(META_RECIPE.to_string(), spec.recipe());

    let specs = planned.iter().map(|p| p.spec.clone()).collect();
    let mut writer = CheckpointWriter::create(out, specs, &metadata)?;

    let mut acc = opts.buf(0);
    let mut comp = opts.buf(0);
    let mut scratch = opts.buf(0);
    opts.install(|| -> Result<()> {
        for p in &planned {
            let name = p.spec.name.as_str();
            let (&first, rest) = p
                .terms
                .split_first()
                .expect("anchor always contributes to its own tensors");
            let t = &spec.terms[first];
            t.checkpoint.read_tensor_into(name, &mut acc)?;
            comp.reset(acc.len());
            scale_first(&mut acc, &mut comp, t.coefficient as f32, opts.parallel());
            for &i in rest {
                let t = &spec.terms[i];
                t.checkpoint.read_tensor_into(name, &mut scratch)?;
                accumulate(&mut acc, &mut comp, &scratch, t.coefficient as f32, opts.parallel());
            }
            finalize(&mut acc, &comp, opts.parallel());
            writer.write_tensor(name, &acc)?;
        }
        Ok(())
    })?;
    drop((acc, comp, scratch));
    writer.finish()
}

/// `post − base` in F32, tagged as a delta.
pub fn extract_delta(post: &Checkpoint, base: &Checkpoint, out: impl AsRef<Path>, opts: &ExecOptions) -> Result<Checkpoint> {
    linear_combine(&CombineSpec::delta(post, base), out, opts)
}

/// `anchor + alpha · delta`, stored in the anchor's dtypes.
pub fn apply_delta(
    anchor: &Checkpoint,
    delta: &Checkpoint,
    alpha: f64,
    policy: MissingPolicy,
    out: impl AsRef<Path>,
    opts: &ExecOptions,
) -> Result<Checkpoint> {
    linear_combine(&CombineSpec::apply(anchor, delta, alpha, policy), out, opts)
}

/// `anchor + Σ coeffᵢ · deltaᵢ`, stored in the anchor's dtypes.
pub fn fuse(
    anchor: &Checkpoint,
    deltas: &[(&Checkpoint, f64)],
    policy: MissingPolicy,
    out: impl AsRef<Path>,
    opts: &ExecOptions,
) -> Result<Checkpoint> {
    linear_combine(&CombineSpec::fuse(anchor, deltas, policy), out, opts)
}

/// Exact product split: `c · x == p + e` with `p = fl(c · x)`.
///
/// The product of two f32 values is exact in f64, and its rounding error
/// fits in an f32.
#[inline]
fn two_prod(c: f32, x: f32) -> (f32, f32) {
    let exact = c as f64 * x as f64;
    let p = exact as f32;
    let e = (exact - p as f64) as f32;
    if p.is_finite() {
        (p, e)
    } else {
        (p, 0.0)
    }
}

/// Knuth's branch-free exact sum: `a + b == s + e`.
#[inline]
fn two_sum(a: f32, b: f32) -> (f32, f32) {
    let s = a + b;
    if !s.is_finite() {
        return (s, 0.0);
    }
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

fn for_chunks(
    acc: &mut [f32],
    comp: &mut [f32],
    x: Option<&[f32]>,
    parallel: bool,
    kernel: impl Fn(&mut [f32], &mut [f32], Option<&[f32]>) + Sync + Send,
) {
    if parallel {
        match x {
            Some(x) => acc
                .par_chunks_mut(CHUNK)
                .zip(comp.par_chunks_mut(CHUNK))
                .zip(x.par_chunks(CHUNK))
                .for_each(|((a, c), x)| kernel(a, c, Some(x))),
            None => acc
                .par_chunks_mut(CHUNK)
                .zip(comp.par_chunks_mut(CHUNK))
                .for_each(|(a, c)| kernel(a, c, None)),
        }
    } else {
        kernel(acc, comp, x);
    }
}

fn scale_first(acc: &mut [f32], comp: &mut [f32], coeff: f32, parallel: bool) {
    if coeff == 1.0 {
        return;
    }
    for_chunks(acc, comp, None, parallel, |a, c, _| {
        for (a, c) in a.iter_mut().zip(c.iter_mut()) {
            let (p, e) = two_prod(coeff, *a);
            *a = p;
            *c = e;
        }
    });
}

fn accumulate(acc: &mut [f32], comp: &mut [f32], x: &[f32], coeff: f32, parallel: bool) {
    for_chunks(acc, comp, Some(x), parallel, |a, c, x| {
        let x = x.expect("term values");
        for ((a, c), &x) in a.iter_mut().zip(c.iter_mut()).zip(x) {
            let (p, pe) = two_prod(coeff, x);
            let (s, se) = two_sum(*a, p);
            *a = s;
            *c += pe + se;
        }
    });
}

fn finalize(acc: &mut [f32], comp: &[f32], parallel: bool) {
    let kernel = |a: &mut [f32], c: &[f32]| {
        for (a, &c) in a.iter_mut().zip(c) {
            // Adding a zero correction could flip the sign of a zero sum.
            if c != 0.0 && a.is_finite() {
                *a += c;
            }
        }
    };
    if parallel {
        acc.par_chunks_mut(CHUNK)
            .zip(comp.par_chunks(CHUNK))
            .for_each(|(a, c)| kernel(a, c));
    } else {
        kernel(acc, comp);
    }
}
