//! Transfer metrics: hypothetical scores from existing checkpoints, the
//! transfer-efficiency regression, and alpha-sweep planning.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::buffer::ExecOptions;
use crate::checkpoint::Checkpoint;
use crate::combine::{apply_delta, MissingPolicy};
use crate::error::{Error, Result};

pub const GAMMA_SCHEMA: &str = "paramdelta.gamma/1";
pub const SWEEP_SCHEMA: &str = "paramdelta.sweep/1";
pub const SCORE_HEADER: [&str; 4] = ["model_id", "benchmark", "metric", "value"];

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct ScoreRow {
    pub model_id: String,
    pub benchmark: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct MetricKey {
    pub benchmark: String,
    pub metric: String,
}

/// Benchmark scores keyed by `(model_id, benchmark, metric)`.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    rows: Vec<ScoreRow>,
    index: HashMap<(String, MetricKey), f64>,
}

impl ScoreTable {
    pub fn from_rows(rows: Vec<ScoreRow>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for r in &rows {
            if !r.value.is_finite() {
                return Err(Error::ScoreTable(format!(
                    "non-finite value for ({}, {}, {})",
                    r.model_id, r.benchmark, r.metric
                )));
            }
            let key = (
                r.model_id.clone(),
                MetricKey {
                    benchmark: r.benchmark.clone(),
                    metric: r.metric.clone(),
                },
            );
            if index.insert(key, r.value).is_some() {
                return Err(Error::ScoreTable(format!(
                    "duplicate row ({}, {}, {})",
                    r.model_id, r.benchmark, r.metric
                )));
            }
        }
        Ok(Self { rows, index })
    }

    /// Reads a comma-separated table whose header is
    /// `model_id,benchmark,metric,value`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::ScoreTable(e.to_string()))?
            .clone();
        if header.iter().collect::<Vec<_>>() != SCORE_HEADER {
            return Err(Error::ScoreTable(format!(
                "expected header `{}`, found `{}`",
                SCORE_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ScoreRow>, _>>()
            .map_err(|e| Error::ScoreTable(e.to_string()))?;
        Self::from_rows(rows)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(file)
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn get(&self, model: &str, key: &MetricKey) -> Option<f64> {
        self.index.get(&(model.to_string(), key.clone())).copied()
    }

    /// Every (benchmark, metric) scored for any of `models`, sorted.
    fn keys_for(&self, models: &[&str]) -> BTreeSet<MetricKey> {
        self.rows
            .iter()
            .filter(|r| models.contains(&r.model_id.as_str()))
            .map(|r| MetricKey {
                benchmark: r.benchmark.clone(),
                metric: r.metric.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypotheticalScore {
    pub benchmark: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypotheticalScores {
    pub scores: Vec<HypotheticalScore>,
    pub skipped: Vec<MetricKey>,
}

/// The score a model built on `base_i` would get if it gained exactly what
/// `post_j` gained over `base_j`.
#[inline]
pub fn hypothetical(base_i: f64, post_j: f64, base_j: f64) -> f64 {
    base_i + post_j - base_j
}

pub fn hypothetical_scores(table: &ScoreTable, base_i: &str, post_j: &str, base_j: &str) -> Result<HypotheticalScores> {
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for key in table.keys_for(&[base_i, post_j, base_j]) {
        match (
            table.get(base_i, &key),
            table.get(post_j, &key),
            table.get(base_j, &key),
        ) {
            (Some(bi), Some(pj), Some(bj)) => scores.push(HypotheticalScore {
                value: hypothetical(bi, pj, bj),
                benchmark: key.benchmark,
                metric: key.metric,
            }),
            _ => skipped.push(key),
        }
    }
    if scores.is_empty() {
        return Err(Error::NoCompleteTriples);
    }
    Ok(HypotheticalScores { scores, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    #[default]
    ThroughOrigin,
    WithIntercept,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub gamma: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub residuals: Vec<f64>,
    pub fit_mode: FitMode,
}

/// Least-squares fit of `real = gamma · hypothetical (+ intercept)` over
/// `(hypothetical, real)` pairs. R² is taken about the mean of the real
/// values in both modes.
pub fn fit_gamma(pairs: &[(f64, f64)], mode: FitMode) -> Result<RegressionResult> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 points, got {n}")));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::DegenerateInput("non-finite point".into()));
    }
    let nf = n as f64;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / nf;

    let (gamma, intercept) = match mode {
        FitMode::ThroughOrigin => {
            let sxx: f64 = pairs.iter().map(|(x, _)| x * x).sum();
            if sxx == 0.0 {
                return Err(Error::DegenerateInput("all hypothetical values are zero".into()));
            }
            let sxy: f64 = pairs.iter().map(|(x, y)| x * y).sum();
            (sxy / sxx, 0.0)
        }
        FitMode::WithIntercept => {
            let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
            let sxx: f64 = pairs.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
            if sxx == 0.0 {
                return Err(Error::DegenerateInput("all hypothetical values are identical".into()));
            }
            let sxy: f64 = pairs.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
            let gamma = sxy / sxx;
            (gamma, mean_y - gamma * mean_x)
        }
    };

    let residuals: Vec<f64> = pairs.iter().map(|(x, y)| y - (gamma * x + intercept)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = pairs.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };

    Ok(RegressionResult {
        gamma,
        intercept,
        r_squared,
        n_points: n,
        residuals,
        fit_mode: mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaPoint {
    pub benchmark: String,
    pub metric: String,
    pub hypothetical: f64,
    pub real: f64,
}

/// Model ids used to build a transfer regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferModels {
    pub base_i: String,
    pub post_j: String,
    pub base_j: String,
    pub real: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaReport {
    pub schema: &'static str,
    pub models: TransferModels,
    pub fit_mode: FitMode,
    pub gamma: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub points: Vec<GammaPoint>,
    pub residuals: Vec<f64>,
    pub skipped: Vec<MetricKey>,
}

impl GammaReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Pairs every (benchmark, metric) having all four scores and fits gamma.
pub fn transfer_regression(table: &ScoreTable, models: TransferModels, mode: FitMode) -> Result<GammaReport> {
    let keys = table.keys_for(&[&models.base_i, &models.post_j, &models.base_j, &models.real]);
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for key in keys {
        let got = (
            table.get(&models.base_i, &key),
            table.get(&models.post_j, &key),
            table.get(&models.base_j, &key),
            table.get(&models.real, &key),
        );
        match got {
            (Some(bi), Some(pj), Some(bj), Some(real)) => points.push(GammaPoint {
                hypothetical: hypothetical(bi, pj, bj),
                real,
                benchmark: key.benchmark,
                metric: key.metric,
            }),
            _ => skipped.push(key),
        }
    }
    if points.is_empty() {
        return Err(Error::NoCompleteTriples);
    }
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.hypothetical, p.real)).collect();
    let fit = fit_gamma(&pairs, mode)?;
    Ok(GammaReport {
        schema: GAMMA_SCHEMA,
        models,
        fit_mode: fit.fit_mode,
        gamma: fit.gamma,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        n_points: fit.n_points,
        points,
        residuals: fit.residuals,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub alpha: f64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema: String,
    pub anchor: String,
    pub delta: String,
    pub template: String,
    pub entries: Vec<SweepEntry>,
}

pub const ALPHA_PLACEHOLDER: &str = "{alpha}";

/// Expands `{alpha}` in `template` with the shortest decimal that
/// round-trips the value.
pub fn sweep_path(template: &str, alpha: f64) -> String {
    template.replace(ALPHA_PLACEHOLDER, &format!("{alpha}"))
}

pub fn plan_sweep(anchor: &str, delta: &str, alphas: &[f64], template: &str) -> Result<SweepManifest> {
    if alphas.is_empty() {
        return Err(Error::InvalidSpec("sweep needs at least one alpha".into()));
    }
    if let Some(&a) = alphas.iter().find(|a| !a.is_finite()) {
        return Err(Error::NonFiniteAlpha(a));
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateAlpha(w[0]));
    }
    if sorted.len() > 1 && !template.contains(ALPHA_PLACEHOLDER) {
        return Err(Error::InvalidSpec(format!(
            "template `{template}` needs {ALPHA_PLACEHOLDER} to name {} outputs",
            sorted.len()
        )));
    }
    let entries = sorted
        .into_iter()
        .map(|alpha| SweepEntry {
            alpha,
            path: sweep_path(template, alpha),
        })
        .collect();
    Ok(SweepManifest {
        schema: SWEEP_SCHEMA.to_string(),
        anchor: anchor.to_string(),
        delta: delta.to_string(),
        template: template.to_string(),
        entries,
    })
}

impl SweepManifest {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: SweepManifest = serde_json::from_str(text)?;
        if m.schema != SWEEP_SCHEMA {
            return Err(Error::InvalidSpec(format!("unexpected schema `{}`", m.schema)));
        }
        Ok(m)
    }

    /// Runs `anchor + alpha · delta` for every entry, one output at a time.
    pub fn execute(&self, policy: MissingPolicy, opts: &ExecOptions) -> Result<BTreeMap<String, Checkpoint>> {
        let anchor = Checkpoint::open(&self.anchor)?;
        let delta = Checkpoint::open(&self.delta)?;
        let mut outputs = BTreeMap::new();
        for e in &self.entries {
            let ck = apply_delta(&anchor, &delta, e.alpha, policy, &e.path, opts)?;
            outputs.insert(e.path.clone(), ck);
        }
        Ok(outputs)
    }
}
