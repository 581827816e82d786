//! Deterministic pairwise reductions.
//!
//! Each fixed-size leaf of [`CHUNK`] elements is summed sequentially in f64
//! (products of f32 values are exact there), then leaf sums are combined by
//! a balanced binary tree. The tree shape depends only on the length, so the
//! result is bit-identical for any thread count.

use rayon::prelude::*;

use crate::buffer::CHUNK;

/// Sum of leaf partials along a balanced binary tree.
pub fn tree_sum(partials: &[f64]) -> f64 {
    match partials.len() {
        0 => 0.0,
        1 => partials[0],
        n => {
            let (l, r) = partials.split_at(n / 2);
            tree_sum(l) + tree_sum(r)
        }
    }
}

fn leaves<T, F>(len: usize, parallel: bool, leaf: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    let n = len.div_ceil(CHUNK);
    let bounds = move |i: usize| (i * CHUNK, ((i + 1) * CHUNK).min(len));
    if parallel {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let (s, e) = bounds(i);
                leaf(s, e)
            })
            .collect()
    } else {
        (0..n)
            .map(|i| {
                let (s, e) = bounds(i);
                leaf(s, e)
            })
            .collect()
    }
}

/// Σ x².
pub fn sum_squares(x: &[f32], parallel: bool) -> f64 {
    let parts = leaves(x.len(), parallel, |s, e| {
        x[s..e].iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
    });
    tree_sum(&parts)
}

/// Euclidean norm of the flattened tensor.
pub fn l2_norm(x: &[f32], parallel: bool) -> f64 {
    sum_squares(x, parallel).sqrt()
}

/// (Σ a·b, Σ a², Σ b²) in one pass.
pub fn dot_and_squares(a: &[f32], b: &[f32], parallel: bool) -> (f64, f64, f64) {
    assert_eq!(a.len(), b.len(), "dot of unequal lengths");
    let parts = leaves(a.len(), parallel, |s, e| {
        let mut acc = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in a[s..e].iter().zip(&b[s..e]) {
            let (x, y) = (x as f64, y as f64);
            acc.0 += x * y;
            acc.1 += x * x;
            acc.2 += y * y;
        }
        acc
    });
    let dots: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let sa: Vec<f64> = parts.iter().map(|p| p.1).collect();
    let sb: Vec<f64> = parts.iter().map(|p| p.2).collect();
    (tree_sum(&dots), tree_sum(&sa), tree_sum(&sb))
}

/// Cosine similarity, `None` when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32], parallel: bool) -> (Option<f64>, f64, f64) {
    let (dot, sa, sb) = dot_and_squares(a, b, parallel);
    let (na, nb) = (sa.sqrt(), sb.sqrt());
    if na == 0.0 || nb == 0.0 {
        return (None, na, nb);
    }
    (Some((dot / (na * nb)).clamp(-1.0, 1.0)), na, nb)
}
