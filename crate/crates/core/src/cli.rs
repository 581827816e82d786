//! `paramdelta` command-line interface.
//!
//! Exit status: 0 on success, 1 when an operation fails (stderr carries one
//! line `paramdelta: <ErrorClass>: <message>`), 2 on usage errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{self, BinSpec, ClassificationRules, LayerClass, DEFAULT_BINS};
use crate::buffer::{ExecOptions, MemProbe};
use crate::checkpoint::{validate_homologous, Checkpoint, CompatReport, TensorMeta, META_SCENARIO};
use crate::combine::{linear_combine, CombineSpec, MissingPolicy, OutDTypePolicy};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::gen::{self, GenSpec, Plant};
use crate::transfer::{self, FitMode, ScoreTable, SweepManifest, TransferModels};

#[derive(Debug, Parser)]
#[command(name = "paramdelta", version, about = "Extract, apply, fuse and analyze post-training parameter deltas")]
pub struct Cli {
    /// Cap on worker threads; never changes output bytes.
    #[arg(long, global = true, env = "PARAMDELTA_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    /// Print peak live tensor-buffer bytes to stderr after the command.
    #[arg(long, global = true, hide = true)]
    pub mem_probe: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a deterministic miniature decoder checkpoint.
    Gen(GenArgs),
    /// Print a checkpoint's manifest and metadata as JSON.
    Inspect {
        checkpoint: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Check that two checkpoints share names and shapes (exit 1 if not).
    Validate {
        a: PathBuf,
        b: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Extract `post - base` as an F32 delta checkpoint.
    Diff {
        post: PathBuf,
        base: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Write `anchor + alpha * delta`.
    Apply {
        anchor: PathBuf,
        delta: PathBuf,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        alpha: f64,
        #[command(flatten)]
        combine: CombineArgs,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Write `anchor + sum(coeff_i * delta_i)`.
    Fuse {
        anchor: PathBuf,
        /// Delta and coefficient as PATH=VALUE; repeat per delta.
        #[arg(long = "coeff", value_name = "PATH=VALUE", required = true, value_parser = parse_coeff, allow_hyphen_values = true)]
        coeffs: Vec<(PathBuf, f64)>,
        #[command(flatten)]
        combine: CombineArgs,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Per-tensor cosine similarity between two deltas.
    Cosine {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Per-tensor norms of a delta.
    Norms {
        delta: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Fit real scores against hypothetical scores from a score table.
    Gamma {
        scores: PathBuf,
        #[arg(long)]
        base_i: String,
        #[arg(long)]
        post_j: String,
        #[arg(long)]
        base_j: String,
        #[arg(long)]
        real: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Origin)]
        mode: ModeArg,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Plan (and by default run) `anchor + alpha * delta` over several alphas.
    Sweep {
        anchor: PathBuf,
        delta: PathBuf,
        #[arg(long = "alpha", required = true, value_delimiter = ',', allow_negative_numbers = true)]
        alphas: Vec<f64>,
        /// Output path per alpha; `{alpha}` is replaced by the value.
        #[arg(long)]
        template: String,
        /// Manifest path.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        plan_only: bool,
        #[arg(long, value_enum, default_value_t = PolicyArg::Strict)]
        policy: PolicyArg,
    },
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long = "hidden", default_value_t = 32)]
    pub hidden_dim: usize,
    #[arg(long = "ffn", default_value_t = 64)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
    #[arg(long, default_value = "F32", value_parser = parse_dtype)]
    pub dtype: DType,
    #[arg(long, default_value_t = 0.02)]
    pub init_scale: f32,
    /// Seed of the planted perturbation; enables planting.
    #[arg(long)]
    pub plant_seed: Option<u64>,
    /// Per-element standard deviation of the planted perturbation.
    #[arg(long, default_value_t = 0.01)]
    pub plant_scale: f32,
    /// Per-class multiplier on the plant scale, e.g. `feed_forward=4`.
    #[arg(long = "plant-class", value_name = "CLASS=FACTOR", value_parser = parse_class_scale)]
    pub plant_class: Vec<(LayerClass, f32)>,
    /// Constant added to a tensor, e.g. `lm_head.weight=0.5`.
    #[arg(long = "plant-offset", value_name = "NAME=VALUE", value_parser = parse_offset, allow_hyphen_values = true)]
    pub plant_offset: Vec<(String, f32)>,
    #[arg(short, long)]
    pub out: PathBuf,
}

impl GenArgs {
    pub fn spec(&self) -> GenSpec {
        let planting = self.plant_seed.is_some() || !self.plant_class.is_empty() || !self.plant_offset.is_empty();
        let plant = planting.then(|| Plant {
            seed: self.plant_seed.unwrap_or(0),
            scale: self.plant_scale,
            class_scales: self.plant_class.iter().copied().collect(),
            offsets: self.plant_offset.iter().cloned().collect(),
        });
        GenSpec {
            seed: self.seed,
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            ffn_dim: self.ffn_dim,
            vocab: self.vocab,
            dtype: self.dtype,
            init_scale: self.init_scale,
            plant,
        }
    }
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    #[arg(long, value_enum, default_value_t = PolicyArg::Strict)]
    pub policy: PolicyArg,
    #[arg(long, value_enum, default_value_t = OutDTypeArg::Match)]
    pub out_dtype: OutDTypeArg,
}

#[derive(Debug, Args)]
pub struct ScenarioArg {
    /// Usage pattern recorded in provenance metadata (1-4).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub scenario: Option<u8>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON rules file overriding the default layer classification.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS as u32, value_parser = clap::value_parser!(u32).range(1..))]
    pub bins: u32,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Strict,
    Intersect,
    Anchor,
}

impl From<PolicyArg> for MissingPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Strict => MissingPolicy::Strict,
            PolicyArg::Intersect => MissingPolicy::Intersect,
            PolicyArg::Anchor => MissingPolicy::AnchorPassthrough,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutDTypeArg {
    Match,
    F32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Origin,
    Intercept,
}

fn parse_dtype(s: &str) -> std::result::Result<DType, String> {
    s.parse()
}

fn split_pair(s: &str) -> std::result::Result<(&str, &str), String> {
    s.rsplit_once('=')
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn parse_coeff(s: &str) -> std::result::Result<(PathBuf, f64), String> {
    let (k, v) = split_pair(s)?;
    let c = v.parse::<f64>().map_err(|e| format!("coefficient `{v}`: {e}"))?;
    Ok((PathBuf::from(k), c))
}

fn parse_class_scale(s: &str) -> std::result::Result<(LayerClass, f32), String> {
    let (k, v) = split_pair(s)?;
    Ok((k.parse()?, v.parse::<f32>().map_err(|e| format!("`{v}`: {e}"))?))
}

fn parse_offset(s: &str) -> std::result::Result<(String, f32), String> {
    let (k, v) = split_pair(s)?;
    Ok((k.to_string(), v.parse::<f32>().map_err(|e| format!("`{v}`: {e}"))?))
}

/// Parses the process arguments, runs, and returns the exit status.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    run_cli(cli)
}

pub fn run_cli(cli: Cli) -> i32 {
    let threads = cli
        .threads
        .map(usize::from)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let opts = ExecOptions {
        threads,
        probe: cli.mem_probe.then(MemProbe::new),
    };
    let result = run(cli.command, &opts);
    if let Some(p) = &opts.probe {
        eprintln!("peak_tensor_bytes={}", p.peak_bytes());
    }
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("paramdelta: {}: {msg}", e.class());
            1
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
struct InspectReport<'a> {
    schema: &'static str,
    path: String,
    kind: crate::checkpoint::CheckpointKind,
    metadata: &'a BTreeMap<String, String>,
    tensor_count: usize,
    total_bytes: u64,
    largest_tensor_bytes: u64,
    tensors: Vec<&'a TensorMeta>,
}

#[derive(Serialize)]
struct CompatDocument<'a> {
    schema: &'static str,
    a: String,
    b: String,
    #[serde(flatten)]
    report: &'a CompatReport,
}

fn scenario_meta(spec: &mut CombineSpec<'_>, scenario: &ScenarioArg) {
    if let Some(s) = scenario.scenario {
        spec.metadata.insert(META_SCENARIO.to_string(), s.to_string());
    }
}

fn apply_combine_args(spec: &mut CombineSpec<'_>, args: &CombineArgs) {
    spec.missing_policy = args.policy.into();
    spec.out_dtype_policy = match args.out_dtype {
        OutDTypeArg::Match => OutDTypePolicy::MatchAnchor,
        OutDTypeArg::F32 => OutDTypePolicy::ForceF32,
    };
}

fn load_rules(path: Option<&Path>) -> Result<ClassificationRules> {
    match path {
        Some(p) => ClassificationRules::from_file(p),
        None => Ok(ClassificationRules::default()),
    }
}

fn run(command: Command, opts: &ExecOptions) -> Result<()> {
    match command {
        Command::Gen(args) => {
            gen::generate(&args.spec(), &args.out)?;
        }
        Command::Inspect { checkpoint, out } => {
            let ck = Checkpoint::open(&checkpoint)?;
            let report = InspectReport {
                schema: "paramdelta.inspect/1",
                path: checkpoint.display().to_string(),
                kind: ck.kind(),
                metadata: ck.metadata(),
                tensor_count: ck.len(),
                total_bytes: ck.total_tensor_bytes(),
                largest_tensor_bytes: ck.largest_tensor_bytes(),
                tensors: ck.manifest().values().collect(),
            };
            emit(out.as_deref(), &to_json(&report)?)?;
        }
        Command::Validate { a, b, out } => {
            let (ca, cb) = (Checkpoint::open(&a)?, Checkpoint::open(&b)?);
            let report = validate_homologous(&ca, &cb);
            let doc = CompatDocument {
                schema: "paramdelta.compat/1",
                a: a.display().to_string(),
                b: b.display().to_string(),
                report: &report,
            };
            emit(out.as_deref(), &to_json(&doc)?)?;
            if !report.homologous {
                return Err(Error::NotHomologous(report.describe()));
            }
        }
        Command::Diff {
            post,
            base,
            out,
            scenario,
        } => {
            let (post, base) = (Checkpoint::open(&post)?, Checkpoint::open(&base)?);
            let mut spec = CombineSpec::delta(&post, &base);
            scenario_meta(&mut spec, &scenario);
            linear_combine(&spec, &out, opts)?;
        }
        Command::Apply {
            anchor,
            delta,
            alpha,
            combine,
            out,
            scenario,
        } => {
            let (anchor, delta) = (Checkpoint::open(&anchor)?, Checkpoint::open(&delta)?);
            let mut spec = CombineSpec::apply(&anchor, &delta, alpha, combine.policy.into());
            apply_combine_args(&mut spec, &combine);
            scenario_meta(&mut spec, &scenario);
            linear_combine(&spec, &out, opts)?;
        }
        Command::Fuse {
            anchor,
            coeffs,
            combine,
            out,
            scenario,
        } => {
            let anchor = Checkpoint::open(&anchor)?;
            let deltas = coeffs
                .iter()
                .map(|(p, c)| Ok((Checkpoint::open(p)?, *c)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<(&Checkpoint, f64)> = deltas.iter().map(|(d, c)| (d, *c)).collect();
            let mut spec = CombineSpec::fuse(&anchor, &refs, combine.policy.into());
            apply_combine_args(&mut spec, &combine);
            scenario_meta(&mut spec, &scenario);
            linear_combine(&spec, &out, opts)?;
        }
        Command::Cosine { a, b, report } => {
            let rules = load_rules(report.rules.as_deref())?;
            let (ca, cb) = (Checkpoint::open(&a)?, Checkpoint::open(&b)?);
            let bins = BinSpec {
                bins: report.bins as usize,
                range: None,
            };
            analysis::cosine_map(&ca, &cb, &rules, bins, opts)?.write(&report.out)?;
        }
        Command::Norms { delta, report } => {
            let rules = load_rules(report.rules.as_deref())?;
            let ck = Checkpoint::open(&delta)?;
            let bins = BinSpec {
                bins: report.bins as usize,
                range: None,
            };
            analysis::norm_map(&ck, &rules, bins, opts)?.write(&report.out)?;
        }
        Command::Gamma {
            scores,
            base_i,
            post_j,
            base_j,
            real,
            mode,
            out,
        } => {
            let table = ScoreTable::from_path(&scores)?;
            let mode = match mode {
                ModeArg::Origin => FitMode::ThroughOrigin,
                ModeArg::Intercept => FitMode::WithIntercept,
            };
            let models = TransferModels {
                base_i,
                post_j,
                base_j,
                real,
            };
            let report = transfer::transfer_regression(&table, models, mode)?;
            emit(out.as_deref(), &report.to_json()?)?;
        }
        Command::Sweep {
            anchor,
            delta,
            alphas,
            template,
            out,
            plan_only,
            policy,
        } => {
            let manifest = transfer::plan_sweep(
                &anchor.display().to_string(),
                &delta.display().to_string(),
                &alphas,
                &template,
            )?;
            emit(Some(&out), &manifest.to_json()?)?;
            if !plan_only {
                run_sweep(&manifest, policy.into(), opts)?;
            }
        }
    }
    Ok(())
}

fn run_sweep(manifest: &SweepManifest, policy: MissingPolicy, opts: &ExecOptions) -> Result<()> {
    manifest.execute(policy, opts).map(|_| ())
}
