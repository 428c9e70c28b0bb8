//! Deterministic 1- and 2-bit quantizers, the straight-through gradient
//! contract, and the bit-packed codec for finalized vectors.
//!
//! The quantizers are fixed step functions. The 1-bit quantizer maps any
//! non-negative input to +1/3 and any negative input to -1/3; the 2-bit
//! quantizer maps into {-3/4, -1/4, +1/4, +3/4} with thresholds at 0 and
//! +/-1/2. During training the quantizer's derivative is taken to be the
//! identity, so gradients computed against quantized values are applied to
//! the underlying full-precision parameters unchanged.
//!
//! Quantized values are the nearest binary floating-point approximations of
//! the ideal rationals (1/3 is not exactly representable). Code that needs
//! exact equality — the packed codec, tests — compares codebook indices, not
//! floats.

use crate::error::{Error, Result};

/// Number of bits per parameter: 1, 2, or 32 (no quantization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bitlevel {
    B1,
    B2,
    B32,
}

impl Bitlevel {
    pub fn bits(self) -> u8 {
        match self {
            Bitlevel::B1 => 1,
            Bitlevel::B2 => 2,
            Bitlevel::B32 => 32,
        }
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        match bits {
            1 => Some(Bitlevel::B1),
            2 => Some(Bitlevel::B2),
            32 => Some(Bitlevel::B32),
            _ => None,
        }
    }

    /// True for the 1- and 2-bit levels, false for full precision.
    pub fn is_quantized(self) -> bool {
        !matches!(self, Bitlevel::B32)
    }
}

impl std::fmt::Display for Bitlevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.bits())
    }
}

impl std::str::FromStr for Bitlevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<u8>()
            .ok()
            .and_then(Bitlevel::from_bits)
            .ok_or_else(|| {
                Error::InvalidConfig(format!("bitlevel must be 1, 2, or 32, got {s:?}"))
            })
    }
}

const CODEBOOK_1BIT: [f32; 2] = [-1.0 / 3.0, 1.0 / 3.0];
const CODEBOOK_2BIT: [f32; 4] = [-0.75, -0.25, 0.25, 0.75];

fn check_finite(x: f64, context: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
            value: x,
        })
    }
}

/// 1-bit quantizer: +1/3 for x >= 0, -1/3 for x < 0.
///
/// Zero (including -0.0) lands on the non-negative branch.
pub fn q1(x: f64) -> Result<f64> {
    check_finite(x, "q1 input")?;
    Ok(if x >= 0.0 { 1.0 / 3.0 } else { -1.0 / 3.0 })
}

/// 2-bit quantizer: +3/4 for x > 1/2, +1/4 for 0 <= x <= 1/2,
/// -1/4 for -1/2 <= x < 0, -3/4 for x < -1/2.
pub fn q2(x: f64) -> Result<f64> {
    check_finite(x, "q2 input")?;
    Ok(if x > 0.5 {
        0.75
    } else if x >= 0.0 {
        0.25
    } else if x >= -0.5 {
        -0.25
    } else {
        -0.75
    })
}

/// Straight-through gradient of the quantizer: the upstream gradient is
/// passed through unchanged, as if the quantizer were the identity.
pub fn ste_gradient(upstream: &[f64]) -> Vec<f64> {
    upstream.to_vec()
}

/// A bit level together with its codebook of representable values.
///
/// The standard codebooks are [-1/3, +1/3] (1-bit) and
/// [-3/4, -1/4, +1/4, +3/4] (2-bit). Custom output levels can be supplied
/// with [`QuantizationScheme::with_codebook`]; the decision thresholds stay
/// fixed (sign for 1-bit, 0 and +/-1/2 for 2-bit), only the emitted values
/// change. The packed file format assumes the standard codebooks.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationScheme {
    bitlevel: Bitlevel,
    codebook: Vec<f32>,
}

impl QuantizationScheme {
    /// Scheme with the standard codebook for the given bit level.
    pub fn new(bitlevel: Bitlevel) -> Self {
        let codebook = match bitlevel {
            Bitlevel::B1 => CODEBOOK_1BIT.to_vec(),
            Bitlevel::B2 => CODEBOOK_2BIT.to_vec(),
            Bitlevel::B32 => Vec::new(),
        };
        QuantizationScheme { bitlevel, codebook }
    }

    /// Scheme with custom output levels. The codebook must hold exactly
    /// 2^bitlevel strictly increasing finite values; full precision takes
    /// no codebook.
    pub fn with_codebook(bitlevel: Bitlevel, codebook: Vec<f32>) -> Result<Self> {
        if bitlevel == Bitlevel::B32 {
            return Err(Error::InvalidConfig(
                "a 32-bit scheme has no codebook".into(),
            ));
        }
        let expected = 1usize << bitlevel.bits();
        if codebook.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "{}-bit codebook needs {} entries, got {}",
                bitlevel.bits(),
                expected,
                codebook.len()
            )));
        }
        if codebook.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("codebook values must be finite".into()));
        }
        if codebook.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "codebook values must be strictly increasing".into(),
            ));
        }
        Ok(QuantizationScheme { bitlevel, codebook })
    }

    pub fn bitlevel(&self) -> Bitlevel {
        self.bitlevel
    }

    pub fn codebook(&self) -> &[f32] {
        &self.codebook
    }

    /// Whether this scheme uses the standard codebook for its bit level.
    pub fn is_standard(&self) -> bool {
        match self.bitlevel {
            Bitlevel::B1 => self.codebook == CODEBOOK_1BIT,
            Bitlevel::B2 => self.codebook == CODEBOOK_2BIT,
            Bitlevel::B32 => true,
        }
    }

    /// Codebook index of `x` after quantization. Full precision has no codes.
    pub fn code_for(&self, x: f64) -> Result<Option<u8>> {
        check_finite(x, "quantizer input")?;
        Ok(match self.bitlevel {
            Bitlevel::B1 => Some(if x >= 0.0 { 1 } else { 0 }),
            Bitlevel::B2 => Some(if x > 0.5 {
                3
            } else if x >= 0.0 {
                2
            } else if x >= -0.5 {
                1
            } else {
                0
            }),
            Bitlevel::B32 => None,
        })
    }

    /// Quantize a scalar; identity at full precision.
    pub fn quantize(&self, x: f64) -> Result<f64> {
        match self.code_for(x)? {
            Some(code) => Ok(self.codebook[code as usize] as f64),
            None => Ok(x),
        }
    }

    /// Elementwise quantization of a vector; identity at full precision.
    pub fn quantize_vector(&self, v: &[f32]) -> Result<Vec<f32>> {
        if self.bitlevel == Bitlevel::B32 {
            for &x in v {
                check_finite(x as f64, "quantizer input")?;
            }
            return Ok(v.to_vec());
        }
        v.iter()
            .map(|&x| self.quantize(x as f64).map(|q| q as f32))
            .collect()
    }

    /// Codebook index of an exact codebook member, or None.
    pub fn code_of(&self, value: f32) -> Option<u8> {
        self.codebook.iter().position(|&c| c == value).map(|i| i as u8)
    }

    /// Bytes needed to pack one row of `dim` parameters.
    pub fn bytes_per_row(&self, dim: usize) -> usize {
        (dim * self.bitlevel.bits() as usize).div_ceil(8)
    }
}

/// Pack a row-major matrix of codebook values into bytes.
///
/// Each row occupies `ceil(dim * bits / 8)` bytes. Within a byte, parameters
/// fill from the least-significant bit upward; codes are codebook indices;
/// trailing pad bits are zero. Every entry must be an exact codebook member.
pub fn pack_rows(matrix: &[f32], dim: usize, scheme: &QuantizationScheme) -> Result<Vec<u8>> {
    if !scheme.bitlevel().is_quantized() {
        return Err(Error::InvalidConfig(
            "packing requires a 1- or 2-bit scheme".into(),
        ));
    }
    if dim == 0 || !matrix.len().is_multiple_of(dim) {
        return Err(Error::InvalidConfig(format!(
            "matrix length {} is not a multiple of dimension {}",
            matrix.len(),
            dim
        )));
    }
    let bits = scheme.bitlevel().bits() as usize;
    let row_bytes = scheme.bytes_per_row(dim);
    let rows = matrix.len() / dim;
    let mut out = vec![0u8; rows * row_bytes];

    for (row, chunk) in matrix.chunks_exact(dim).enumerate() {
        let base = row * row_bytes;
        for (col, &value) in chunk.iter().enumerate() {
            let code = scheme.code_of(value).ok_or(Error::NotInCodebook {
                row,
                col,
                value: value as f64,
                bits: scheme.bitlevel().bits(),
            })?;
            let bit_pos = col * bits;
            out[base + bit_pos / 8] |= code << (bit_pos % 8);
        }
    }
    Ok(out)
}

/// Inverse of [`pack_rows`]: decode a payload back into codebook values.
///
/// The number of rows is implied by the payload length, which must be a
/// multiple of the per-row byte count.
pub fn unpack_rows(payload: &[u8], dim: usize, scheme: &QuantizationScheme) -> Result<Vec<f32>> {
    if !scheme.bitlevel().is_quantized() {
        return Err(Error::InvalidConfig(
            "unpacking requires a 1- or 2-bit scheme".into(),
        ));
    }
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be positive".into()));
    }
    let bits = scheme.bitlevel().bits() as usize;
    let row_bytes = scheme.bytes_per_row(dim);
    if !payload.len().is_multiple_of(row_bytes) {
        return Err(Error::PayloadSize {
            actual: payload.len(),
            bytes_per_row: row_bytes,
        });
    }
    let rows = payload.len() / row_bytes;
    let mask = (1u8 << bits) - 1;
    let mut out = Vec::with_capacity(rows * dim);

    for row in 0..rows {
        let base = row * row_bytes;
        for col in 0..dim {
            let bit_pos = col * bits;
            let code = (payload[base + bit_pos / 8] >> (bit_pos % 8)) & mask;
            out.push(scheme.codebook[code as usize]);
        }
    }
    Ok(out)
}
