//! Limited-bit gradient quantization.
//!
//! Values in `[-1, 1]` are mapped affinely onto `[0, 1]`, snapped to the grid
//! `{i / a}` with `a = 2^b - 1`, and mapped back. Model updates are first
//! normalized by their largest magnitude ([`quantize_update`]), which is the
//! DoReFa gradient treatment; without it almost every entry of a small update
//! would land on the grid points next to zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bits per parameter of an uncompressed model.
pub const FULL_PRECISION_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    bit_width: u32,
}

impl QuantizerConfig {
    pub fn new(bit_width: u32) -> Result<Self> {
        if !(1..=FULL_PRECISION_BITS).contains(&bit_width) {
            return Err(Error::domain(format!("bit width must be in [1, 32], got {bit_width}")));
        }
        Ok(Self { bit_width })
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width
    }

    /// `a = 2^b - 1`.
    pub fn levels(&self) -> u64 {
        (1u64 << self.bit_width) - 1
    }

    pub fn is_full_precision(&self) -> bool {
        self.bit_width == FULL_PRECISION_BITS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGradient {
    pub bit_width: u32,
    pub values: Vec<f64>,
}

impl QuantizedGradient {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Payload size, charging `bit_width` bits per element.
    pub fn payload_bits(&self) -> u64 {
        self.bit_width as u64 * self.values.len() as u64
    }
}

/// Quantizes `values` to `bits` bits. Inputs are clipped to `[-1, 1]`;
/// 32 bits is the identity.
pub fn quantize(values: &[f64], bits: u32) -> Result<QuantizedGradient> {
    let cfg = QuantizerConfig::new(bits)?;
    if let Some(index) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite { index });
    }
    if cfg.is_full_precision() {
        return Ok(QuantizedGradient {
            bit_width: bits,
            values: values.to_vec(),
        });
    }
    let a = cfg.levels() as f64;
    let values = values.iter().map(|&v| snap(v, a)).collect();
    Ok(QuantizedGradient {
        bit_width: bits,
        values,
    })
}

#[inline]
fn snap(v: f64, a: f64) -> f64 {
    let u = (v.clamp(-1.0, 1.0) + 1.0) * 0.5;
    2.0 * ((a * u).round() / a) - 1.0
}

/// Worst-case absolute error of [`quantize`] on inputs inside `[-1, 1]`:
/// half of the output grid step `2 / a`.
pub fn quantization_error_bound(bits: u32) -> Result<f64> {
    Ok(1.0 / QuantizerConfig::new(bits)?.levels() as f64)
}

/// A model update normalized by its largest magnitude and then quantized.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledUpdate {
    pub scale: f64,
    pub quantized: QuantizedGradient,
}

impl ScaledUpdate {
    pub fn reconstruct(&self) -> Vec<f64> {
        self.quantized.values.iter().map(|q| q * self.scale).collect()
    }
}

/// How [`quantize_update_with`] resolves values that fall between grid
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Nearest grid point, as in [`quantize`].
    #[default]
    Nearest,
    /// Up or down with probabilities that make the result unbiased (uniform
    /// noise of one grid step added before flooring).
    Stochastic,
}

/// Max-abs normalization followed by [`quantize`]. The error per element is at
/// most `scale / a`. The scale travels as side information and is not charged
/// against the bit budget.
pub fn quantize_update(values: &[f64], bits: u32) -> Result<ScaledUpdate> {
    QuantizerConfig::new(bits)?;
    let mut scale: f64 = 0.0;
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        scale = scale.max(v.abs());
    }
    if scale == 0.0 || bits == FULL_PRECISION_BITS {
        return Ok(ScaledUpdate {
            scale: 1.0,
            quantized: quantize(values, bits)?,
        });
    }
    let normalized: Vec<f64> = values.iter().map(|v| v / scale).collect();
    Ok(ScaledUpdate {
        scale,
        quantized: quantize(&normalized, bits)?,
    })
}

/// [`quantize_update`] with a choice of rounding; `rng` is only drawn from for
/// [`Rounding::Stochastic`] below 32 bits.
pub fn quantize_update_with<R: Rng>(
    values: &[f64],
    bits: u32,
    rounding: Rounding,
    rng: &mut R,
) -> Result<ScaledUpdate> {
    if rounding == Rounding::Nearest || bits == FULL_PRECISION_BITS {
        return quantize_update(values, bits);
    }
    let a = QuantizerConfig::new(bits)?.levels() as f64;
    let mut scale: f64 = 0.0;
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        scale = scale.max(v.abs());
    }
    if scale == 0.0 {
        return Ok(ScaledUpdate {
            scale: 1.0,
            quantized: quantize(values, bits)?,
        });
    }
    let quantized = values
        .iter()
        .map(|v| {
            let u = (v / scale + 1.0) * 0.5;
            let level = (a * u + rng.random::<f64>()).floor().min(a);
            2.0 * level / a - 1.0
        })
        .collect();
    Ok(ScaledUpdate {
        scale,
        quantized: QuantizedGradient {
            bit_width: bits,
            values: quantized,
        },
    })
}

/// Rate-adaptive compression for one device in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub model_bits: f64,
    pub bit_budget: f64,
    /// `max(I / c, 1)`.
    pub compression_rate: f64,
    pub bit_width: u32,
    /// Set when `floor(32 / r)` was 0 and the width was raised to 1 bit.
    pub clamped: bool,
}

/// `r = max(I / c, 1)`, `b = floor(32 / r)`, at least one bit.
pub fn plan_compression(model_bits: f64, bit_budget: f64) -> Result<CompressionPlan> {
    if !(model_bits > 0.0) {
        return Err(Error::domain(format!("model size must be positive, got {model_bits}")));
    }
    if !(bit_budget >= 0.0) {
        return Err(Error::domain(format!(
            "bit budget must be non-negative, got {bit_budget}"
        )));
    }
    let rate = if bit_budget >= model_bits {
        1.0
    } else {
        model_bits / bit_budget
    };
    let raw = (FULL_PRECISION_BITS as f64 / rate).floor();
    let clamped = raw < 1.0;
    Ok(CompressionPlan {
        model_bits,
        bit_budget,
        compression_rate: rate,
        bit_width: if clamped { 1 } else { raw as u32 },
        clamped,
    })
}

/// A fixed quantizer input with its expected output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceCase {
    pub name: &'static str,
    pub bits: u32,
    pub input: Vec<f64>,
    pub expected: Vec<f64>,
}

/// Hand-checked vectors for the quantizer.
pub fn conformance_cases() -> Vec<ConformanceCase> {
    vec![
        ConformanceCase {
            name: "full precision passes through",
            bits: 32,
            input: vec![0.123456789, -3.5, 1e-9, 7.0],
            expected: vec![0.123456789, -3.5, 1e-9, 7.0],
        },
        ConformanceCase {
            name: "two bits, 0.4 -> 1/3",
            bits: 2,
            input: vec![0.4],
            expected: vec![1.0 / 3.0],
        },
        ConformanceCase {
            name: "one bit is a sign grid",
            bits: 1,
            input: vec![-0.9, 0.9],
            expected: vec![-1.0, 1.0],
        },
        ConformanceCase {
            name: "out-of-range inputs clip",
            bits: 3,
            input: vec![-4.0, 2.5],
            expected: vec![-1.0, 1.0],
        },
        ConformanceCase {
            name: "grid points are fixed",
            bits: 2,
            input: vec![-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0],
            expected: vec![-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0],
        },
    ]
}
