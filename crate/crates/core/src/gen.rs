//! Deterministic miniature decoder checkpoints for tests and demos.
//!
//! Values come from a ChaCha stream keyed by SHA-256 of (seed, tensor name),
//! so each tensor's data is independent of generation order and identical on
//! every platform. Normals are approximated by a unit-variance Irwin–Hall sum
//! to stay clear of platform libm differences.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{ClassificationRules, LayerClass};
use crate::checkpoint::{Checkpoint, META_KIND};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::writer::{write_checkpoint, TensorSpec};

pub const PLANT_SCHEMA: &str = "paramdelta.plant/1";
pub const META_GENERATOR: &str = "paramdelta.generator";

/// A structured perturbation added on top of the base weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub seed: u64,
    /// Per-element standard deviation of the perturbation.
    pub scale: f32,
    /// Multipliers on `scale` per layer class (default 1).
    #[serde(default)]
    pub class_scales: BTreeMap<LayerClass, f32>,
    /// Constant added to every element of the named tensor.
    #[serde(default)]
    pub offsets: BTreeMap<String, f32>,
}

impl Plant {
    pub fn new(seed: u64, scale: f32) -> Self {
        Self {
            seed,
            scale,
            class_scales: BTreeMap::new(),
            offsets: BTreeMap::new(),
        }
    }

    pub fn element_scale(&self, class: LayerClass) -> f32 {
        self.scale * self.class_scales.get(&class).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub seed: u64,
    pub layers: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub vocab: usize,
    pub dtype: DType,
    /// Standard deviation of non-norm base weights.
    pub init_scale: f32,
    pub plant: Option<Plant>,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            layers: 2,
            hidden_dim: 32,
            ffn_dim: 64,
            vocab: 64,
            dtype: DType::F32,
            init_scale: 0.02,
            plant: None,
        }
    }
}

/// Ground truth written next to a planted checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantRecord {
    pub schema: String,
    pub seed: u64,
    pub tensors: Vec<PlantedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTensor {
    pub name: String,
    pub class: LayerClass,
    pub element_scale: f32,
    pub offset: f32,
}

impl GenSpec {
    fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.ffn_dim == 0 || self.vocab == 0 {
            return Err(Error::InvalidSpec("hidden_dim, ffn_dim and vocab must be positive".into()));
        }
        if !self.init_scale.is_finite() {
            return Err(Error::InvalidSpec("init_scale must be finite".into()));
        }
        if let Some(p) = &self.plant {
            if !p.scale.is_finite()
                || p.class_scales.values().any(|s| !s.is_finite())
                || p.offsets.values().any(|o| !o.is_finite())
            {
                return Err(Error::InvalidSpec("plant values must be finite".into()));
            }
            let names = self.tensor_specs();
            if let Some(unknown) = p.offsets.keys().find(|k| !names.iter().any(|s| &s.name == *k)) {
                return Err(Error::InvalidSpec(format!("plant offset for unknown tensor `{unknown}`")));
            }
        }
        Ok(())
    }

    /// Llama-style tensor layout, in lexicographic name order.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let (h, f, v) = (self.hidden_dim, self.ffn_dim, self.vocab);
        let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        shapes.insert("model.embed_tokens.weight".into(), vec![v, h]);
        shapes.insert("model.norm.weight".into(), vec![h]);
        shapes.insert("lm_head.weight".into(), vec![v, h]);
        for l in 0..self.layers {
            let p = format!("model.layers.{l}");
            shapes.insert(format!("{p}.input_layernorm.weight"), vec![h]);
            shapes.insert(format!("{p}.post_attention_layernorm.weight"), vec![h]);
            for proj in ["q_proj", "k_proj", "v_proj", "o_proj"] {
                shapes.insert(format!("{p}.self_attn.{proj}.weight"), vec![h, h]);
            }
            shapes.insert(format!("{p}.mlp.gate_proj.weight"), vec![f, h]);
            shapes.insert(format!("{p}.mlp.up_proj.weight"), vec![f, h]);
            shapes.insert(format!("{p}.mlp.down_proj.weight"), vec![h, f]);
        }
        shapes
            .into_iter()
            .map(|(name, shape)| TensorSpec::new(name, self.dtype, shape))
            .collect()
    }

    /// Working-precision values of one tensor, before storage rounding.
    pub fn tensor_values(&self, name: &str, numel: usize, rules: &ClassificationRules) -> Vec<f32> {
        let (class, _) = rules.classify(name);
        let noise = unit_noise(self.seed, name, numel);
        let mut values: Vec<f32> = if class == LayerClass::Norm {
            noise.iter().map(|&z| (1.0 + self.init_scale as f64 * z) as f32).collect()
        } else {
            noise.iter().map(|&z| (self.init_scale as f64 * z) as f32).collect()
        };
        if let Some(p) = &self.plant {
            let scale = p.element_scale(class) as f64;
            let offset = p.offsets.get(name).copied().unwrap_or(0.0);
            let pert = unit_noise(p.seed ^ PLANT_DOMAIN, name, numel);
            for (v, z) in values.iter_mut().zip(pert) {
                *v = ((*v as f64 + scale * z) as f32) + offset;
            }
        }
        values
    }

    pub fn plant_record(&self) -> Option<PlantRecord> {
        let rules = ClassificationRules::default();
        self.plant.as_ref().map(|p| PlantRecord {
            schema: PLANT_SCHEMA.to_string(),
            seed: p.seed,
            tensors: self
                .tensor_specs()
                .into_iter()
                .map(|s| {
                    let (class, _) = rules.classify(&s.name);
                    PlantedTensor {
                        element_scale: p.element_scale(class),
                        offset: p.offsets.get(&s.name).copied().unwrap_or(0.0),
                        class,
                        name: s.name,
                    }
                })
                .collect(),
        })
    }
}

const PLANT_DOMAIN: u64 = 0x706c_616e_7400_0000;

/// Path of the ground-truth file written beside a planted checkpoint.
pub fn plant_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".plant.json");
    PathBuf::from(p)
}

/// `numel` approximately standard-normal values for `(seed, name)`.
pub fn unit_noise(seed: u64, name: &str, numel: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(b"paramdelta.gen/1");
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    // Sum of four U[0,1) has mean 2 and variance 1/3.
    let scale = 3f64.sqrt();
    (0..numel)
        .map(|_| {
            let s: f64 = (0..4).map(|_| (rng.next_u32() >> 8) as f64 / (1u64 << 24) as f64).sum();
            (s - 2.0) * scale
        })
        .collect()
}

/// Writes the checkpoint described by `spec` and, when it carries a plant,
/// the companion ground-truth file.
pub fn generate(spec: &GenSpec, out: impl AsRef<Path>) -> Result<Checkpoint> {
    spec.validate()?;
    let out = out.as_ref();
    let rules = ClassificationRules::default();
    let mut metadata = BTreeMap::new();
    let kind = if spec.plant.is_some() { "post" } else { "base" };
    metadata.insert(META_KIND.to_string(), kind.to_string());
    metadata.insert(META_GENERATOR.to_string(), serde_json::to_string(spec)?);

    let ck = write_checkpoint(out, spec.tensor_specs(), &metadata, |s| {
        Ok(spec.tensor_values(&s.name, s.numel(), &rules))
    })?;
    if let Some(record) = spec.plant_record() {
        let path = plant_path(out);
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(ck)
}
