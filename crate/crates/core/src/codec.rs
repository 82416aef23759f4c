//! Bit-exact conversion between poses and fixed-length binary labels.
//!
//! Each pose component is written as an IEEE-754 bit pattern of the chosen
//! precision, most significant bit first (sign, exponent, mantissa), and the
//! seven patterns are concatenated in the order `qa, qb, qc, qd, t1, t2, t3`.

use std::fmt;

use thiserror::Error;

use crate::pose::{PoseError, PoseVector};

/// Number of scalar components in a pose vector.
pub const POSE_COMPONENTS: usize = 7;

/// Floating point width used for each pose component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precision {
    Half,
    Single,
    Double,
}

impl Precision {
    pub fn bits(self) -> usize {
        match self {
            Precision::Half => 16,
            Precision::Single => 32,
            Precision::Double => 64,
        }
    }

    pub fn from_bits(bits: usize) -> Option<Self> {
        match bits {
            16 => Some(Precision::Half),
            32 => Some(Precision::Single),
            64 => Some(Precision::Double),
            _ => None,
        }
    }

    /// Label length `7b`.
    pub fn label_len(self) -> usize {
        POSE_COMPONENTS * self.bits()
    }

    /// Largest finite magnitude of the format.
    pub fn max_finite(self) -> f64 {
        match self {
            Precision::Half => 65504.0,
            Precision::Single => f32::MAX as f64,
            Precision::Double => f64::MAX,
        }
    }

    fn exponent_bits(self) -> usize {
        match self {
            Precision::Half => 5,
            Precision::Single => 8,
            Precision::Double => 11,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("value {value} exceeds the largest finite {precision}-bit float")]
    Overflow { value: f64, precision: Precision },
    #[error("bit pattern decodes to a non-finite value")]
    NonFiniteDecoded,
    #[error("expected {expected} bits, got {got}")]
    Length { expected: usize, got: usize },
    #[error("pose component {index}: {source}")]
    Component { index: usize, source: Box<CodecError> },
}

/// Why a predicted label could not be turned into a pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeFailureReason {
    NonFinite,
    DegenerateQuaternion,
}

/// A label whose bits do not describe a valid pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("decode failure in component {component_index}: {reason:?}")]
pub struct DecodeFailure {
    pub component_index: usize,
    pub reason: DecodeFailureReason,
}

/// Raw IEEE-754 bit pattern of `z` at the given precision, right-aligned in a `u64`.
pub fn scalar_to_pattern(z: f64, precision: Precision) -> Result<u64, CodecError> {
    if !z.is_finite() {
        return Err(CodecError::NonFinite(z));
    }
    if z.abs() > precision.max_finite() {
        return Err(CodecError::Overflow {
            value: z,
            precision,
        });
    }
    Ok(match precision {
        Precision::Half => f64_to_half_bits(z) as u64,
        // `as` rounds to nearest, ties to even
        Precision::Single => (z as f32).to_bits() as u64,
        Precision::Double => z.to_bits(),
    })
}

/// Value of a right-aligned bit pattern. Non-finite patterns are an error.
pub fn pattern_to_scalar(pattern: u64, precision: Precision) -> Result<f64, CodecError> {
    let exp_bits = precision.exponent_bits();
    let mant_bits = precision.bits() - 1 - exp_bits;
    let exp_mask = (1u64 << exp_bits) - 1;
    if (pattern >> mant_bits) & exp_mask == exp_mask {
        return Err(CodecError::NonFiniteDecoded);
    }
    Ok(match precision {
        Precision::Half => half_bits_to_f64(pattern as u16),
        Precision::Single => f32::from_bits(pattern as u32) as f64,
        Precision::Double => f64::from_bits(pattern),
    })
}

/// `b` bits of `z`, sign bit first.
pub fn encode_scalar(z: f64, precision: Precision) -> Result<Vec<bool>, CodecError> {
    let pattern = scalar_to_pattern(z, precision)?;
    let b = precision.bits();
    Ok((0..b).map(|i| (pattern >> (b - 1 - i)) & 1 == 1).collect())
}

pub fn decode_scalar(bits: &[bool], precision: Precision) -> Result<f64, CodecError> {
    let b = precision.bits();
    if bits.len() != b {
        return Err(CodecError::Length {
            expected: b,
            got: bits.len(),
        });
    }
    pattern_to_scalar(pack_pattern(bits), precision)
}

fn pack_pattern(bits: &[bool]) -> u64 {
    bits.iter().fold(0u64, |acc, &bit| (acc << 1) | bit as u64)
}

/// Narrows an `f64` to binary16 with round-to-nearest-even, directly from the
/// 53-bit significand (no intermediate `f32` rounding). The caller guarantees
/// `|z| <= 65504`.
fn f64_to_half_bits(z: f64) -> u16 {
    let bits = z.to_bits();
    let sign = ((bits >> 48) & 0x8000) as u16;
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        // zero or f64 subnormal, far below the smallest half subnormal
        return sign;
    }
    let exp = biased - 1023;
    let significand = (1u64 << 52) | (bits & ((1u64 << 52) - 1));
    if exp >= -14 {
        let mut q = round_shift(significand, 42);
        let mut e = exp;
        if q == 1 << 11 {
            q >>= 1;
            e += 1;
        }
        sign | (((e + 15) as u16) << 10) | (q as u16 & 0x3ff)
    } else {
        // subnormal: value = q * 2^-24; a carry into bit 10 yields the
        // smallest normal pattern, which is the same integer
        let shift = (28 - exp) as u32;
        let q = if shift > 54 { 0 } else { round_shift(significand, shift) };
        sign | q as u16
    }
}

fn round_shift(value: u64, shift: u32) -> u64 {
    let q = value >> shift;
    let rem = value & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

fn half_bits_to_f64(h: u16) -> f64 {
    let sign = if h & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((h >> 10) & 0x1f) as i32;
    let frac = (h & 0x3ff) as f64;
    if exp == 0 {
        sign * frac * 2f64.powi(-24)
    } else {
        sign * (1.0 + frac / 1024.0) * 2f64.powi(exp - 15)
    }
}

/// The value `z` takes after a round trip through precision `b`.
pub fn round_to_precision(z: f64, precision: Precision) -> Result<f64, CodecError> {
    pattern_to_scalar(scalar_to_pattern(z, precision)?, precision)
}

/// Binary encoding of one pose: `7b` bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryLabel {
    bits: Vec<bool>,
    precision: Precision,
}

impl BinaryLabel {
    pub fn from_bits(bits: Vec<bool>, precision: Precision) -> Result<Self, CodecError> {
        if bits.len() != precision.label_len() {
            return Err(CodecError::Length {
                expected: precision.label_len(),
                got: bits.len(),
            });
        }
        Ok(BinaryLabel { bits, precision })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bits of component `index` (0..7).
    pub fn component(&self, index: usize) -> &[bool] {
        let b = self.precision.bits();
        &self.bits[index * b..(index + 1) * b]
    }

    /// Packs bits into bytes, first bit in the most significant position of
    /// the first byte. `7b` is always a multiple of 8.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|chunk| chunk.iter().fold(0u8, |acc, &bit| (acc << 1) | bit as u8))
            .collect()
    }

    pub fn from_packed_bytes(bytes: &[u8], precision: Precision) -> Result<Self, CodecError> {
        let bits = bytes
            .iter()
            .flat_map(|byte| (0..8).rev().map(move |i| (byte >> i) & 1 == 1))
            .collect();
        Self::from_bits(bits, precision)
    }
}

/// Concatenated bit patterns of `qa, qb, qc, qd, t1, t2, t3`.
pub fn encode_pose(pose: &PoseVector, precision: Precision) -> Result<BinaryLabel, CodecError> {
    let mut bits = Vec::with_capacity(precision.label_len());
    for (index, value) in pose.components().into_iter().enumerate() {
        let component = encode_scalar(value, precision).map_err(|source| CodecError::Component {
            index,
            source: Box::new(source),
        })?;
        bits.extend(component);
    }
    Ok(BinaryLabel { bits, precision })
}

/// Inverse of [`encode_pose`]; the decoded quaternion is renormalized and
/// sign-canonicalized.
pub fn decode_pose(label: &BinaryLabel) -> Result<PoseVector, DecodeFailure> {
    let mut c = [0.0; POSE_COMPONENTS];
    for (index, slot) in c.iter_mut().enumerate() {
        *slot = decode_scalar(label.component(index), label.precision).map_err(|_| {
            DecodeFailure {
                component_index: index,
                reason: DecodeFailureReason::NonFinite,
            }
        })?;
    }
    PoseVector::from_components(&c).map_err(|e| match e {
        PoseError::DegenerateQuaternion(_) => DecodeFailure {
            component_index: 0,
            reason: DecodeFailureReason::DegenerateQuaternion,
        },
        PoseError::NonFinite { index } => DecodeFailure {
            component_index: index,
            reason: DecodeFailureReason::NonFinite,
        },
    })
}
