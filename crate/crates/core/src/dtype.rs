//! Storage dtypes and conversion to and from the 32-bit working precision.

use std::fmt;
use std::str::FromStr;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

/// Quiet NaN every downcast to F16 emits.
pub const F16_CANONICAL_NAN: u16 = 0x7E00;
/// Quiet NaN every downcast to BF16 emits.
pub const BF16_CANONICAL_NAN: u16 = 0x7FC0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DType {
    F32,
    F16,
    BF16,
}

impl DType {
    pub const fn byte_width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 | DType::BF16 => 2,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::F16 => "F16",
            DType::BF16 => "BF16",
        }
    }

    /// Decodes little-endian storage bytes into working values.
    ///
    /// `bytes.len()` must equal `out.len() * byte_width()`.
    pub fn decode(self, bytes: &[u8], out: &mut [f32]) {
        debug_assert_eq!(bytes.len(), out.len() * self.byte_width());
        match self {
            DType::F32 => {
                for (dst, src) in out.iter_mut().zip(bytes.chunks_exact(4)) {
                    *dst = f32::from_le_bytes([src[0], src[1], src[2], src[3]]);
                }
            }
            DType::F16 => {
                for (dst, src) in out.iter_mut().zip(bytes.chunks_exact(2)) {
                    *dst = upcast_f16(u16::from_le_bytes([src[0], src[1]]));
                }
            }
            DType::BF16 => {
                for (dst, src) in out.iter_mut().zip(bytes.chunks_exact(2)) {
                    *dst = upcast_bf16(u16::from_le_bytes([src[0], src[1]]));
                }
            }
        }
    }

    /// Encodes working values into little-endian storage bytes, rounding to
    /// nearest-even for 16-bit targets.
    pub fn encode(self, values: &[f32], out: &mut Vec<u8>) {
        out.reserve(values.len() * self.byte_width());
        match self {
            DType::F32 => {
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            DType::F16 => {
                for &v in values {
                    out.extend_from_slice(&downcast_f16(v).to_le_bytes());
                }
            }
            DType::BF16 => {
                for &v in values {
                    out.extend_from_slice(&downcast_bf16(v).to_le_bytes());
                }
            }
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "F32" | "f32" => Ok(DType::F32),
            "F16" | "f16" => Ok(DType::F16),
            "BF16" | "bf16" => Ok(DType::BF16),
            other => Err(format!("unsupported dtype `{other}`")),
        }
    }
}

#[inline]
pub fn upcast_f16(bits: u16) -> f32 {
    f16::from_bits(bits).to_f32()
}

#[inline]
pub fn upcast_bf16(bits: u16) -> f32 {
    bf16::from_bits(bits).to_f32()
}

#[inline]
pub fn downcast_f16(v: f32) -> u16 {
    if v.is_nan() {
        F16_CANONICAL_NAN
    } else {
        f16::from_f32(v).to_bits()
    }
}

#[inline]
pub fn downcast_bf16(v: f32) -> u16 {
    if v.is_nan() {
        BF16_CANONICAL_NAN
    } else {
        bf16::from_f32(v).to_bits()
    }
}
