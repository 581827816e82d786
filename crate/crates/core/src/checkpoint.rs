//! Reading and validating single-file tensor checkpoints.
//!
//! Layout: an unsigned 64-bit little-endian header length `N`, then `N` bytes
//! of UTF-8 JSON mapping tensor name to `{dtype, shape, data_offsets}` plus an
//! optional `__metadata__` string map, then the raw little-endian tensor data.
//! Offsets are relative to the first byte after the header.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use crate::buffer::{ExecOptions, TensorBuf};
use crate::dtype::DType;
use crate::error::{Error, Result};

pub const METADATA_KEY: &str = "__metadata__";
pub const META_KIND: &str = "paramdelta.kind";
pub const META_MINUEND: &str = "paramdelta.minuend";
pub const META_SUBTRAHEND: &str = "paramdelta.subtrahend";
pub const META_RECIPE: &str = "paramdelta.recipe";
pub const META_SCENARIO: &str = "paramdelta.scenario";

/// Refuse headers larger than this; real checkpoints stay far below it.
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

/// Bytes decoded per read while streaming a tensor.
const STAGING_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data_offsets: (u64, u64),
}

impl TensorMeta {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> u64 {
        self.data_offsets.1 - self.data_offsets.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Base,
    Post,
    Delta,
    Fused,
}

impl CheckpointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::Base => "base",
            CheckpointKind::Post => "post",
            CheckpointKind::Delta => "delta",
            CheckpointKind::Fused => "fused",
        }
    }

    fn from_metadata(meta: &BTreeMap<String, String>) -> Self {
        match meta.get(META_KIND).map(String::as_str) {
            Some("post") => CheckpointKind::Post,
            Some("delta") => CheckpointKind::Delta,
            Some("fused") => CheckpointKind::Fused,
            _ => CheckpointKind::Base,
        }
    }
}

impl fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An opened checkpoint. Only the manifest is held in memory; tensor data is
/// read on demand with positional reads, so a handle can be shared across
/// threads.
#[derive(Debug)]
pub struct Checkpoint {
    path: PathBuf,
    file: File,
    data_start: u64,
    manifest: BTreeMap<String, TensorMeta>,
    metadata: BTreeMap<String, String>,
    kind: CheckpointKind,
}

impl Checkpoint {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();

        if file_len < 8 {
            return Err(Error::malformed(&path, "file shorter than length prefix"));
        }
        let mut prefix = [0u8; 8];
        read_exact_at(&file, &mut prefix, 0).map_err(|e| Error::io(&path, e))?;
        let header_len = u64::from_le_bytes(prefix);
        if header_len > MAX_HEADER_LEN || header_len > file_len - 8 {
            return Err(Error::malformed(
                &path,
                format!("header length {header_len} exceeds file size {file_len}"),
            ));
        }

        let mut header = vec![0u8; header_len as usize];
        read_exact_at(&file, &mut header, 8).map_err(|e| Error::io(&path, e))?;
        let text = std::str::from_utf8(&header)
            .map_err(|e| Error::malformed(&path, format!("header is not UTF-8: {e}")))?;
        let raw: RawHeader = serde_json::from_str(text)
            .map_err(|e| Error::malformed(&path, format!("invalid header JSON: {e}")))?;

        let mut manifest = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        let mut seen_metadata = false;
        for (name, value) in raw.0 {
            if name == METADATA_KEY {
                if seen_metadata {
                    return Err(Error::malformed(&path, "duplicate __metadata__"));
                }
                seen_metadata = true;
                metadata = parse_metadata(&path, value)?;
                continue;
            }
            if manifest.contains_key(&name) {
                return Err(Error::DuplicateTensorName { path, name });
            }
            let meta = parse_entry(&path, &name, value)?;
            manifest.insert(name, meta);
        }

        let data_start = 8 + header_len;
        check_regions(&path, &manifest, file_len - data_start)?;

        let kind = CheckpointKind::from_metadata(&metadata);
        Ok(Self {
            path,
            file,
            data_start,
            manifest,
            metadata,
            kind,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn kind(&self) -> CheckpointKind {
        self.kind
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn manifest(&self) -> &BTreeMap<String, TensorMeta> {
        &self.manifest
    }

    pub fn get(&self, name: &str) -> Option<&TensorMeta> {
        self.manifest.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.manifest.contains_key(name)
    }

    /// Tensor names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.manifest.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    /// Size in bytes of the largest stored tensor.
    pub fn largest_tensor_bytes(&self) -> u64 {
        self.manifest.values().map(TensorMeta::byte_len).max().unwrap_or(0)
    }

    /// Total bytes of the data section covered by tensors.
    pub fn total_tensor_bytes(&self) -> u64 {
        self.manifest.values().map(TensorMeta::byte_len).sum()
    }

    /// Reads and upcasts one tensor into a fresh working-precision buffer.
    pub fn read_tensor(&self, name: &str, opts: &ExecOptions) -> Result<(TensorBuf, DType)> {
        let meta = self.meta(name)?;
        let mut buf = opts.buf(meta.numel());
        self.fill(meta, &mut buf)?;
        Ok((buf, meta.dtype))
    }

    /// Reads one tensor into `buf`, resizing it to the tensor's length.
    pub fn read_tensor_into(&self, name: &str, buf: &mut TensorBuf) -> Result<DType> {
        let meta = self.meta(name)?;
        buf.reset(meta.numel());
        self.fill(meta, buf)?;
        Ok(meta.dtype)
    }

    /// Copies the stored bytes of a tensor verbatim.
    pub fn read_raw(&self, name: &str) -> Result<Vec<u8>> {
        let meta = self.meta(name)?;
        let mut bytes = vec![0u8; meta.byte_len() as usize];
        read_exact_at(&self.file, &mut bytes, self.data_start + meta.data_offsets.0)
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(bytes)
    }

    fn meta(&self, name: &str) -> Result<&TensorMeta> {
        self.manifest
            .get(name)
            .ok_or_else(|| Error::UnknownTensor(name.to_string()))
    }

    fn fill(&self, meta: &TensorMeta, out: &mut [f32]) -> Result<()> {
        let width = meta.dtype.byte_width();
        let per_chunk = STAGING_BYTES / width;
        let mut staging = vec![0u8; per_chunk.min(out.len()) * width];
        let mut offset = self.data_start + meta.data_offsets.0;
        for dst in out.chunks_mut(per_chunk) {
            let bytes = &mut staging[..dst.len() * width];
            read_exact_at(&self.file, bytes, offset).map_err(|e| Error::io(&self.path, e))?;
            meta.dtype.decode(bytes, dst);
            offset += bytes.len() as u64;
        }
        Ok(())
    }
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, offset)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        match file.seek_read(buf, offset) {
            Ok(0) => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => {
                buf = &mut buf[n..];
                offset += n as u64;
            }
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Header entries in file order, keeping duplicates so they can be rejected.
struct RawHeader(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for RawHeader {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = RawHeader;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawHeader, A::Error> {
                let mut entries = Vec::new();
                while let Some(entry) = map.next_entry()? {
                    entries.push(entry);
                }
                Ok(RawHeader(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

#[derive(Deserialize)]
struct RawEntry {
    dtype: String,
    shape: Vec<u64>,
    data_offsets: (u64, u64),
}

fn parse_entry(path: &Path, name: &str, value: serde_json::Value) -> Result<TensorMeta> {
    if name.is_empty() {
        return Err(Error::malformed(path, "empty tensor name"));
    }
    let raw: RawEntry = serde_json::from_value(value)
        .map_err(|e| Error::malformed(path, format!("tensor `{name}`: {e}")))?;
    let dtype = raw.dtype.parse::<DType>().map_err(|_| Error::UnsupportedDType {
        path: path.to_path_buf(),
        name: name.to_string(),
        dtype: raw.dtype.clone(),
    })?;
    let shape = raw
        .shape
        .iter()
        .map(|&d| usize::try_from(d))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::malformed(path, format!("tensor `{name}`: dimension too large")))?;
    let (begin, end) = raw.data_offsets;
    let expected = shape
        .iter()
        .try_fold(dtype.byte_width() as u64, |acc, &d| acc.checked_mul(d as u64));
    match (expected, end.checked_sub(begin)) {
        (Some(want), Some(have)) if want == have => {}
        _ => {
            return Err(Error::malformed(
                path,
                format!("tensor `{name}`: data_offsets [{begin}, {end}] disagree with shape {shape:?} and dtype {dtype}"),
            ))
        }
    }
    Ok(TensorMeta {
        name: name.to_string(),
        dtype,
        shape,
        data_offsets: (begin, end),
    })
}

fn parse_metadata(path: &Path, value: serde_json::Value) -> Result<BTreeMap<String, String>> {
    serde_json::from_value(value)
        .map_err(|e| Error::malformed(path, format!("__metadata__ must map strings to strings: {e}")))
}

fn check_regions(path: &Path, manifest: &BTreeMap<String, TensorMeta>, data_len: u64) -> Result<()> {
    let mut regions: Vec<&TensorMeta> = manifest.values().filter(|m| m.byte_len() > 0).collect();
    regions.sort_by_key(|m| m.data_offsets);
    for pair in regions.windows(2) {
        if pair[1].data_offsets.0 < pair[0].data_offsets.1 {
            return Err(Error::OverlappingRegions {
                path: path.to_path_buf(),
                first: pair[0].name.clone(),
                second: pair[1].name.clone(),
            });
        }
    }
    let needed = manifest.values().map(|m| m.data_offsets.1).max().unwrap_or(0);
    if needed > data_len {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected: needed,
            actual: data_len,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeMismatchEntry {
    pub name: String,
    pub shape_a: Vec<usize>,
    pub shape_b: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DTypeMismatchEntry {
    pub name: String,
    pub dtype_a: DType,
    pub dtype_b: DType,
}

/// Structural comparison of two checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompatReport {
    pub homologous: bool,
    pub shared: Vec<String>,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
    pub shape_mismatches: Vec<ShapeMismatchEntry>,
    pub dtype_mismatches: Vec<DTypeMismatchEntry>,
}

impl CompatReport {
    /// One-line summary of why the pair is not homologous.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if !self.only_in_a.is_empty() {
            parts.push(format!("{} tensor(s) only in first (e.g. `{}`)", self.only_in_a.len(), self.only_in_a[0]));
        }
        if !self.only_in_b.is_empty() {
            parts.push(format!("{} tensor(s) only in second (e.g. `{}`)", self.only_in_b.len(), self.only_in_b[0]));
        }
        if let Some(m) = self.shape_mismatches.first() {
            parts.push(format!(
                "{} shape mismatch(es) (e.g. `{}` {:?} vs {:?})",
                self.shape_mismatches.len(),
                m.name,
                m.shape_a,
                m.shape_b
            ));
        }
        if parts.is_empty() {
            "homologous".to_string()
        } else {
            parts.join("; ")
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Compares manifests only; no tensor data is touched.
///
/// Dtype differences are reported but do not break homology.
pub fn validate_homologous(a: &Checkpoint, b: &Checkpoint) -> CompatReport {
    let mut shared = Vec::new();
    let mut only_in_a = Vec::new();
    let mut shape_mismatches = Vec::new();
    let mut dtype_mismatches = Vec::new();

    for (name, ma) in &a.manifest {
        match b.manifest.get(name) {
            None => only_in_a.push(name.clone()),
            Some(mb) => {
                shared.push(name.clone());
                if ma.shape != mb.shape {
                    shape_mismatches.push(ShapeMismatchEntry {
                        name: name.clone(),
                        shape_a: ma.shape.clone(),
                        shape_b: mb.shape.clone(),
                    });
                }
                if ma.dtype != mb.dtype {
                    dtype_mismatches.push(DTypeMismatchEntry {
                        name: name.clone(),
                        dtype_a: ma.dtype,
                        dtype_b: mb.dtype,
                    });
                }
            }
        }
    }
    let only_in_b = b
        .manifest
        .keys()
        .filter(|n| !a.manifest.contains_key(*n))
        .cloned()
        .collect::<Vec<_>>();

    CompatReport {
        homologous: only_in_a.is_empty() && only_in_b.is_empty() && shape_mismatches.is_empty(),
        shared,
        only_in_a,
        only_in_b,
        shape_mismatches,
        dtype_mismatches,
    }
}
