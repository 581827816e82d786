//! Streaming checkpoint writer.
//!
//! The header is written up front from declared shapes, then tensors are
//! appended one at a time in manifest order. Output goes to a `.partial`
//! sibling and is renamed into place only when every tensor has arrived.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::checkpoint::{Checkpoint, METADATA_KEY};
use crate::dtype::DType;
use crate::error::{Error, Result};

const ENCODE_CHUNK: usize = 16 * 1024;

/// Declared layout of one output tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, dtype: DType, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            dtype,
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Renders the canonical header: `__metadata__` first (when non-empty), then
/// tensors in the given order with contiguous offsets, padded with spaces to
/// a multiple of 8 bytes.
pub fn render_header(specs: &[TensorSpec], metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut text = String::from("{");
    let mut first = true;
    let mut push = |text: &mut String, key: &str, value: serde_json::Value| -> Result<()> {
        if !first {
            text.push(',');
        }
        first = false;
        text.push_str(&serde_json::to_string(key)?);
        text.push(':');
        text.push_str(&serde_json::to_string(&value)?);
        Ok(())
    };
    if !metadata.is_empty() {
        push(&mut text, METADATA_KEY, json!(metadata))?;
    }
    let mut offset = 0u64;
    for spec in specs {
        let end = offset + (spec.numel() * spec.dtype.byte_width()) as u64;
        push(
            &mut text,
            &spec.name,
            json!({
                "dtype": spec.dtype.as_str(),
                "shape": spec.shape,
                "data_offsets": [offset, end],
            }),
        )?;
        offset = end;
    }
    text.push('}');
    while text.len() % 8 != 0 {
        text.push(' ');
    }
    Ok(text.into_bytes())
}

pub struct CheckpointWriter {
    path: PathBuf,
    partial: PathBuf,
    out: Option<BufWriter<File>>,
    specs: Vec<TensorSpec>,
    next: usize,
    staging: Vec<u8>,
}

impl CheckpointWriter {
    pub fn create(
        path: impl AsRef<Path>,
        specs: Vec<TensorSpec>,
        metadata: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut seen = std::collections::HashSet::new();
        for spec in &specs {
            if spec.name.is_empty() || spec.name == METADATA_KEY {
                return Err(Error::InvalidSpec(format!("invalid tensor name `{}`", spec.name)));
            }
            if !seen.insert(spec.name.as_str()) {
                return Err(Error::DuplicateTensorName {
                    path,
                    name: spec.name.clone(),
                });
            }
        }

        let mut partial = path.clone().into_os_string();
        partial.push(".partial");
        let partial = PathBuf::from(partial);

        let header = render_header(&specs, metadata)?;
        let file = File::create(&partial).map_err(|e| Error::io(&partial, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        out.write_all(&(header.len() as u64).to_le_bytes())
            .and_then(|_| out.write_all(&header))
            .map_err(|e| Error::io(&partial, e))?;

        Ok(Self {
            path,
            partial,
            out: Some(out),
            specs,
            next: 0,
            staging: Vec::with_capacity(ENCODE_CHUNK * 4),
        })
    }

    /// The tensor the writer expects next, if any.
    pub fn next_spec(&self) -> Option<&TensorSpec> {
        self.specs.get(self.next)
    }

    pub fn write_tensor(&mut self, name: &str, values: &[f32]) -> Result<()> {
        let spec = self.specs.get(self.next).ok_or_else(|| {
            Error::InvalidSpec(format!("tensor `{name}` written after the manifest was complete"))
        })?;
        if spec.name != name {
            return Err(Error::InvalidSpec(format!(
                "expected tensor `{}` next, got `{name}`",
                spec.name
            )));
        }
        if spec.numel() != values.len() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: spec.numel(),
                actual: values.len(),
            });
        }
        let dtype = spec.dtype;
        let out = self.out.as_mut().expect("writer already finished");
        for chunk in values.chunks(ENCODE_CHUNK) {
            self.staging.clear();
            dtype.encode(chunk, &mut self.staging);
            out.write_all(&self.staging)
                .map_err(|e| Error::io(&self.partial, e))?;
        }
        self.next += 1;
        Ok(())
    }

    /// Flushes, moves the file into place and reopens it.
    pub fn finish(mut self) -> Result<Checkpoint> {
        if let Some(spec) = self.specs.get(self.next) {
            return Err(Error::InvalidSpec(format!(
                "writer finished before tensor `{}` was written",
                spec.name
            )));
        }
        let out = self.out.take().expect("writer already finished");
        let file = out
            .into_inner()
            .map_err(|e| Error::io(&self.partial, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&self.partial, e))?;
        drop(file);
        fs::rename(&self.partial, &self.path).map_err(|e| Error::io(&self.path, e))?;
        Checkpoint::open(&self.path)
    }
}

impl Drop for CheckpointWriter {
    fn drop(&mut self) {
        if self.out.take().is_some() {
            let _ = fs::remove_file(&self.partial);
        }
    }
}

/// Writes a whole checkpoint, pulling each tensor from `producer` in
/// `specs` order.
pub fn write_checkpoint<F, V>(
    path: impl AsRef<Path>,
    specs: Vec<TensorSpec>,
    metadata: &BTreeMap<String, String>,
    mut producer: F,
) -> Result<Checkpoint>
where
    F: FnMut(&TensorSpec) -> Result<V>,
    V: AsRef<[f32]>,
{
    let order = specs.clone();
    let mut writer = CheckpointWriter::create(path, specs, metadata)?;
    for spec in &order {
        let values = producer(spec)?;
        writer.write_tensor(&spec.name, values.as_ref())?;
    }
    writer.finish()
}
