//! Fixed-point formats shared by the crossbar mapping and the training engine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("{total} total bits cannot hold {int} integer bits{}", if *.signed { " and a sign" } else { "" })]
    TooFewBits { total: u32, int: u32, signed: bool },
    #[error("fixed-point formats are limited to 31 bits, got {0}")]
    TooManyBits(u32),
}

/// Sign-magnitude (or unsigned) fixed-point format.
///
/// `frac_bits = total - int - sign`; the grid step is `2^-frac_bits` and the
/// range is symmetric for signed formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedFormat {
    pub total_bits: u32,
    pub int_bits: u32,
    pub signed: bool,
}

impl FixedFormat {
    pub fn new(total_bits: u32, int_bits: u32, signed: bool) -> Result<Self, QuantError> {
        let f = Self {
            total_bits,
            int_bits,
            signed,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        if self.total_bits > 31 {
            return Err(QuantError::TooManyBits(self.total_bits));
        }
        if self.total_bits <= self.int_bits + self.signed as u32 {
            return Err(QuantError::TooFewBits {
                total: self.total_bits,
                int: self.int_bits,
                signed: self.signed,
            });
        }
        Ok(())
    }

    /// Bits carrying magnitude.
    pub fn magnitude_bits(&self) -> u32 {
        self.total_bits - self.signed as u32
    }

    pub fn frac_bits(&self) -> u32 {
        self.magnitude_bits() - self.int_bits
    }

    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits() as f64)).exp2()
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << self.magnitude_bits()) - 1
    }

    pub fn min_code(&self) -> i64 {
        if self.signed {
            -self.max_code()
        } else {
            0
        }
    }

    pub fn max_value(&self) -> f64 {
        self.max_code() as f64 * self.lsb()
    }

    pub fn min_value(&self) -> f64 {
        self.min_code() as f64 * self.lsb()
    }

    /// Nearest grid code, ties away from zero, saturated at the range edges.
    pub fn code(&self, x: f64) -> i64 {
        if x.is_nan() {
            return 0;
        }
        let scaled = (x / self.lsb()).round();
        scaled.clamp(self.min_code() as f64, self.max_code() as f64) as i64
    }

    pub fn quantize(&self, x: f64) -> f64 {
        self.code(x) as f64 * self.lsb()
    }
}

/// Quantizes every element onto the given grid.
pub fn quantize_fixed(
    x: &[f32],
    total_bits: u32,
    int_bits: u32,
    signed: bool,
) -> Result<Vec<f32>, QuantError> {
    let fmt = FixedFormat::new(total_bits, int_bits, signed)?;
    Ok(x.iter().map(|&v| fmt.quantize(v as f64) as f32).collect())
}

/// Weight and activation formats of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantConfig {
    pub weight_total_bits: u32,
    pub weight_int_bits: u32,
    pub weight_signed: bool,
    pub act_total_bits: u32,
    pub act_int_bits: u32,
    pub act_signed: bool,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            weight_total_bits: 7,
            weight_int_bits: 0,
            weight_signed: true,
            act_total_bits: 7,
            act_int_bits: 2,
            act_signed: false,
        }
    }
}

impl QuantConfig {
    pub fn with_bits(weight_total_bits: u32, act_total_bits: u32) -> Self {
        Self {
            weight_total_bits,
            act_total_bits,
            ..Self::default()
        }
    }

    pub fn weight_format(&self) -> FixedFormat {
        FixedFormat {
            total_bits: self.weight_total_bits,
            int_bits: self.weight_int_bits,
            signed: self.weight_signed,
        }
    }

    pub fn act_format(&self) -> FixedFormat {
        FixedFormat {
            total_bits: self.act_total_bits,
            int_bits: self.act_int_bits,
            signed: self.act_signed,
        }
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        self.weight_format().validate()?;
        self.act_format().validate()
    }
}
