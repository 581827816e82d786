use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 50;

/// Equal-width bins; the last bin's right edge is inclusive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Values outside an explicit range; always 0 for the default range.
    pub outside: u64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Default range over `values`: `[min, max]`, widened by machine epsilon
/// when every value is equal.
pub fn default_range(values: &[f64]) -> Option<(f64, f64)> {
    let mut it = values.iter().copied().filter(|v| v.is_finite());
    let first = it.next()?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo < hi {
        Some((lo, hi))
    } else {
        let eps = f64::EPSILON * lo.abs().max(1.0);
        Some((lo - eps, hi + eps))
    }
}

/// Bins the finite entries of `values`. Non-finite entries are ignored.
pub fn histogram(values: &[f64], bin_count: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if bin_count == 0 {
        return Err(Error::InvalidSpec("bin count must be at least 1".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
            return Err(Error::InvalidSpec(format!("invalid histogram range [{lo}, {hi}]")))
        }
        Some(r) => r,
        None => default_range(values).ok_or(Error::EmptyInput)?,
    };
    if !values.iter().any(|v| v.is_finite()) {
        return Err(Error::EmptyInput);
    }

    let width = hi - lo;
    let edges = (0..=bin_count)
        .map(|i| if i == bin_count { hi } else { lo + width * (i as f64) / (bin_count as f64) })
        .collect();
    let mut counts = vec![0u64; bin_count];
    let mut outside = 0;
    for &v in values.iter().filter(|v| v.is_finite()) {
        if v < lo || v > hi {
            outside += 1;
            continue;
        }
        let idx = (((v - lo) / width) * bin_count as f64).floor() as usize;
        counts[idx.min(bin_count - 1)] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        outside,
    })
}
