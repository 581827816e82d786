//! Working-precision tensor buffers and the execution knobs shared by every
//! streaming operation.

use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Tracks live and peak bytes held in [`TensorBuf`]s created under it.
#[derive(Debug, Default)]
pub struct MemProbe {
    live: AtomicU64,
    peak: AtomicU64,
}

impl MemProbe {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn live_bytes(&self) -> u64 {
        self.live.load(Ordering::SeqCst)
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak.load(Ordering::SeqCst)
    }

    fn acquire(&self, bytes: u64) {
        let now = self.live.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn release(&self, bytes: u64) {
        self.live.fetch_sub(bytes, Ordering::SeqCst);
    }
}

/// A flat row-major tensor in working precision.
#[derive(Debug)]
pub struct TensorBuf {
    data: Vec<f32>,
    probe: Option<Arc<MemProbe>>,
}

impl TensorBuf {
    pub fn zeros(len: usize, probe: Option<&Arc<MemProbe>>) -> Self {
        Self::from_vec(vec![0.0; len], probe)
    }

    pub fn from_vec(data: Vec<f32>, probe: Option<&Arc<MemProbe>>) -> Self {
        let probe = probe.cloned();
        if let Some(p) = &probe {
            p.acquire(tracked_bytes(&data));
        }
        Self { data, probe }
    }

    /// Resizes in place, zero-filling any new elements.
    pub fn reset(&mut self, len: usize) {
        let before = tracked_bytes(&self.data);
        if len > self.data.capacity() {
            self.data = Vec::new();
            self.data.reserve_exact(len);
        }
        self.data.clear();
        self.data.resize(len, 0.0);
        let after = tracked_bytes(&self.data);
        if let Some(p) = &self.probe {
            if after > before {
                p.acquire(after - before);
            } else {
                p.release(before - after);
            }
        }
    }

    pub fn into_vec(mut self) -> Vec<f32> {
        if let Some(p) = self.probe.take() {
            p.release(tracked_bytes(&self.data));
        }
        std::mem::take(&mut self.data)
    }
}

fn tracked_bytes(data: &Vec<f32>) -> u64 {
    (data.capacity() * std::mem::size_of::<f32>()) as u64
}

impl Drop for TensorBuf {
    fn drop(&mut self) {
        if let Some(p) = &self.probe {
            p.release(tracked_bytes(&self.data));
        }
    }
}

impl Deref for TensorBuf {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.data
    }
}

impl DerefMut for TensorBuf {
    fn deref_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Elements per parallel work unit for elementwise kernels and per leaf for
/// pairwise reductions.
pub const CHUNK: usize = 4096;

/// Execution options: a thread cap and an optional memory probe.
///
/// Thread count never changes output bits.
#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// 0 and 1 both mean single-threaded.
    pub threads: usize,
    pub probe: Option<Arc<MemProbe>>,
}

impl ExecOptions {
    pub fn with_threads(threads: usize) -> Self {
        Self {
            threads,
            probe: None,
        }
    }

    pub fn buf(&self, len: usize) -> TensorBuf {
        TensorBuf::zeros(len, self.probe.as_ref())
    }

    /// Runs `f` inside a pool capped at `threads` workers, or inline when
    /// single-threaded.
    pub(crate) fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        if self.threads <= 1 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("thread pool unavailable ({e}); running single-threaded");
                f()
            }
        }
    }

    pub(crate) fn parallel(&self) -> bool {
        self.threads > 1
    }
}
