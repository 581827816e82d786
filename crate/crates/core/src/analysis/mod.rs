//! Delta-space diagnostics: per-tensor cosine similarity between two deltas,
//! per-tensor delta norms, and per-layer-class summaries and histograms.

pub mod classify;
pub mod histogram;
pub mod reduce;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::buffer::ExecOptions;
use crate::checkpoint::Checkpoint;
use crate::combine::checkpoint_id;
use crate::error::{Error, Result};

pub use classify::{classify_tensor, ClassificationRules, LayerClass};
pub use histogram::{histogram, Histogram, DEFAULT_BINS};

pub const REPORT_SCHEMA: &str = "paramdelta.report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    CosineMap,
    NormMap,
}

/// One analyzed tensor. `value` is the cosine for a cosine map (absent when
/// either delta is zero there) or the norm for a norm map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorRecord {
    pub tensor: String,
    pub class: LayerClass,
    pub layer_index: Option<usize>,
    pub numel: usize,
    pub value: Option<f64>,
    pub norm_a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    /// Records in this class, defined or not.
    pub count: usize,
    /// Records with a defined value.
    pub defined: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl ClassSummary {
    fn from_values(count: usize, values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                count,
                defined: 0,
                mean: None,
                median: None,
                min: None,
                max: None,
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Self {
            count,
            defined: n,
            mean: Some(values.iter().sum::<f64>() / n as f64),
            median: Some(median),
            min: Some(sorted[0]),
            max: Some(sorted[n - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub schema: &'static str,
    pub kind: ReportKind,
    pub inputs: Vec<String>,
    pub records: Vec<TensorRecord>,
    pub class_summary: BTreeMap<LayerClass, ClassSummary>,
    pub histograms: BTreeMap<LayerClass, Histogram>,
}

impl AnalysisReport {
    pub fn summary(&self, class: LayerClass) -> Option<&ClassSummary> {
        self.class_summary.get(&class)
    }

    pub fn record(&self, tensor: &str) -> Option<&TensorRecord> {
        self.records
            .binary_search_by(|r| r.tensor.as_str().cmp(tensor))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Histogram settings shared by every class of a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSpec {
    pub bins: usize,
    /// Defaults to the min/max of all defined values in the report.
    pub range: Option<(f64, f64)>,
}

impl Default for BinSpec {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            range: None,
        }
    }
}

fn assemble(
    kind: ReportKind,
    inputs: Vec<String>,
    records: Vec<TensorRecord>,
    bins: BinSpec,
) -> Result<AnalysisReport> {
    let mut by_class: BTreeMap<LayerClass, (usize, Vec<f64>)> = BTreeMap::new();
    for r in &records {
        let entry = by_class.entry(r.class).or_default();
        entry.0 += 1;
        if let Some(v) = r.value {
            entry.1.push(v);
        }
    }
    let all: Vec<f64> = records.iter().filter_map(|r| r.value).collect();
    let range = bins.range.or_else(|| histogram::default_range(&all));

    let mut class_summary = BTreeMap::new();
    let mut histograms = BTreeMap::new();
    for (class, (count, values)) in by_class {
        class_summary.insert(class, ClassSummary::from_values(count, &values));
        if !values.is_empty() {
            histograms.insert(class, histogram(&values, bins.bins, range)?);
        }
    }
    Ok(AnalysisReport {
        schema: REPORT_SCHEMA,
        kind,
        inputs,
        records,
        class_summary,
        histograms,
    })
}

/// Per-tensor cosine similarity between two deltas over their shared names.
pub fn cosine_map(
    a: &Checkpoint,
    b: &Checkpoint,
    rules: &ClassificationRules,
    bins: BinSpec,
    opts: &ExecOptions,
) -> Result<AnalysisReport> {
    let mut shared = Vec::new();
    for (name, ma) in a.manifest() {
        if let Some(mb) = b.get(name) {
            if ma.shape != mb.shape {
                return Err(Error::ShapeConflict {
                    name: name.clone(),
                    a: ma.shape.clone(),
                    b: mb.shape.clone(),
                });
            }
            shared.push(name.as_str());
        }
    }
    if shared.is_empty() {
        return Err(Error::NoSharedTensors);
    }

    let mut buf_a = opts.buf(0);
    let mut buf_b = opts.buf(0);
    let records = opts.install(|| -> Result<Vec<TensorRecord>> {
        let mut records = Vec::with_capacity(shared.len());
        for name in shared {
            a.read_tensor_into(name, &mut buf_a)?;
            b.read_tensor_into(name, &mut buf_b)?;
            let (cos, na, nb) = reduce::cosine(&buf_a, &buf_b, opts.parallel());
            let (class, layer_index) = rules.classify(name);
            records.push(TensorRecord {
                tensor: name.to_string(),
                class,
                layer_index,
                numel: buf_a.len(),
                value: cos,
                norm_a: na,
                norm_b: Some(nb),
            });
        }
        Ok(records)
    })?;
    assemble(
        ReportKind::CosineMap,
        vec![checkpoint_id(a), checkpoint_id(b)],
        records,
        bins,
    )
}

/// Per-tensor Euclidean norm of a delta.
pub fn norm_map(
    delta: &Checkpoint,
    rules: &ClassificationRules,
    bins: BinSpec,
    opts: &ExecOptions,
) -> Result<AnalysisReport> {
    let mut buf = opts.buf(0);
    let records = opts.install(|| -> Result<Vec<TensorRecord>> {
        let mut records = Vec::with_capacity(delta.len());
        for name in delta.names() {
            delta.read_tensor_into(name, &mut buf)?;
            let norm = reduce::l2_norm(&buf, opts.parallel());
            let (class, layer_index) = rules.classify(name);
            records.push(TensorRecord {
                tensor: name.to_string(),
                class,
                layer_index,
                numel: buf.len(),
                value: Some(norm),
                norm_a: norm,
                norm_b: None,
            });
        }
        Ok(records)
    })?;
    assemble(ReportKind::NormMap, vec![checkpoint_id(delta)], records, bins)
}
