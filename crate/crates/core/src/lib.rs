//! Checkpoint arithmetic for post-training parameter deltas.
//!
//! A post-training delta is the elementwise difference between a
//! post-trained checkpoint and the base it was trained from. Adding that
//! delta (optionally scaled, optionally mixed with other deltas) to an
//! updated base transfers the post-training without retraining. This crate
//! provides:
//!
//! * [`checkpoint`] / [`writer`]: bit-exact reading and streaming writing of
//!   single-file tensor checkpoints (F32, F16, BF16), plus homology checks.
//! * [`combine`]: the streaming linear-combination engine behind
//!   [`extract_delta`], [`apply_delta`] and [`fuse`].
//! * [`analysis`]: per-tensor cosine similarity and norm reports grouped by
//!   layer class.
//! * [`transfer`]: hypothetical scores, the transfer-efficiency regression
//!   and alpha-sweep planning.
//! * [`gen`]: deterministic synthetic checkpoints.

pub mod analysis;
pub mod buffer;
pub mod checkpoint;
pub mod cli;
pub mod combine;
pub mod dtype;
pub mod error;
pub mod gen;
pub mod transfer;
pub mod writer;

pub use buffer::{ExecOptions, MemProbe, TensorBuf};
pub use checkpoint::{validate_homologous, Checkpoint, CheckpointKind, CompatReport, TensorMeta};
pub use combine::{
    apply_delta, extract_delta, fuse, linear_combine, CombineSpec, CombineTerm, MissingPolicy,
    OutDTypePolicy,
};
pub use dtype::DType;
pub use error::{Error, Result};
pub use writer::{write_checkpoint, CheckpointWriter, TensorSpec};
