//! Behavioral models of the bit-line readout converters.
//!
//! Four topologies are modeled: a current-controlled-oscillator (CCO) ADC,
//! a successive-approximation (SAR) ADC behind a transimpedance front end,
//! a single-slope ADC, and the ideal uniform quantizer. All of them map a
//! non-negative bit-line current to an integer code in `0..=2^N - 1`.
//!
//! Internally every converter works on the input normalized to its full-scale
//! current (`x = i_bl / i_max`), which keeps the zero-error case bit-exact
//! against `floor(2^N * x)`.

mod cco;
mod curve;
mod sar;
mod single_slope;
mod variation;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cco::{CcoAdc, NonLinearity, MAX_NL_COEFF};
pub use curve::{
    read_population, sample_curve, write_population, PopulationManifest, TransferCurve, CURVE_SPAN,
};
pub use sar::SarAdc;
pub use single_slope::SingleSlopeAdc;
pub use variation::{sample_instance, sample_population, VariationConfig};

/// Largest supported resolution. Codes are carried as `u32`.
pub const MAX_BITS: u32 = 30;

#[derive(Debug, Error)]
pub enum AdcError {
    #[error("resolution must be within 1..={MAX_BITS} bits, got {0}")]
    InvalidResolution(u32),
    #[error("full-scale current must be positive and finite, got {0}")]
    InvalidFullScale(f64),
    #[error("bit-line current must be non-negative, got {0}")]
    NegativeInput(f64),
    #[error("maximum frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),
    #[error("supply scale must lie in (0, 1], got {0}")]
    InvalidSupply(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{got} grid points cannot resolve {needed} codes")]
    TooFewPoints { got: usize, needed: usize },
    #[error("invalid transfer curve: {0}")]
    InvalidCurve(String),
    #[error("population manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = AdcError> = std::result::Result<T, E>;

/// Resolution and full-scale of a converter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcSpec {
    pub n_bits: u32,
    /// Full-scale bit-line current in amperes.
    pub i_max: f64,
    /// Joules per conversion. Metadata only; never computed.
    #[serde(default)]
    pub energy_per_conversion: f64,
}

impl AdcSpec {
    pub fn new(n_bits: u32, i_max: f64) -> Result<Self> {
        let spec = Self {
            n_bits,
            i_max,
            energy_per_conversion: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_energy(mut self, joules: f64) -> Self {
        self.energy_per_conversion = joules;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bits == 0 || self.n_bits > MAX_BITS {
            return Err(AdcError::InvalidResolution(self.n_bits));
        }
        if !(self.i_max > 0.0 && self.i_max.is_finite()) {
            return Err(AdcError::InvalidFullScale(self.i_max));
        }
        Ok(())
    }

    pub fn code_max(&self) -> u32 {
        ((1u64 << self.n_bits) - 1) as u32
    }

    /// `2^N` as a float.
    pub fn levels(&self) -> f64 {
        (1u64 << self.n_bits) as f64
    }

    /// Floors `raw` and clamps it into the code range.
    pub(crate) fn clamp_code(&self, raw: f64) -> u32 {
        if raw.is_nan() || raw <= 0.0 {
            return 0;
        }
        let max = self.code_max();
        let floored = raw.floor();
        if floored >= max as f64 {
            max
        } else {
            floored as u32
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Cco,
    Sar,
    SingleSlope,
    Ideal,
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Topology::Cco => "cco",
            Topology::Sar => "sar",
            Topology::SingleSlope => "single_slope",
            Topology::Ideal => "ideal",
        };
        f.write_str(name)
    }
}

/// Clock cycles for one conversion.
///
/// SAR resolves one bit per cycle; single-slope ramps through every level;
/// the CCO counts over a window that spans `2^N` periods at full scale.
pub fn latency_cycles(topology: Topology, n_bits: u32) -> u64 {
    match topology {
        Topology::Sar => n_bits as u64,
        Topology::SingleSlope | Topology::Cco => 1u64 << n_bits,
        Topology::Ideal => 1,
    }
}

/// Counter evaluation window `2^N / f_max`.
pub fn eval_time(spec: &AdcSpec, f_max: f64) -> Result<f64> {
    if !(f_max > 0.0) || !f_max.is_finite() {
        return Err(AdcError::NonPositiveFrequency(f_max));
    }
    Ok(spec.levels() / f_max)
}

/// The ideal uniform quantizer `floor(2^N * i / i_max)`, clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealAdc {
    pub spec: AdcSpec,
}

impl IdealAdc {
    pub fn new(spec: AdcSpec) -> Self {
        Self { spec }
    }

    pub fn convert_norm(&self, x: f64) -> u32 {
        self.spec.clamp_code(self.spec.levels() * x)
    }
}

/// Any of the supported converter instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "snake_case")]
pub enum AdcModel {
    Cco(CcoAdc),
    Sar(SarAdc),
    SingleSlope(SingleSlopeAdc),
    Ideal(IdealAdc),
}

/// Result of converting a batch of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchConversion {
    pub codes: Vec<u32>,
    /// Fraction of inputs strictly above full scale.
    pub saturated_fraction: f64,
}

impl AdcModel {
    pub fn ideal(n_bits: u32, i_max: f64) -> Result<Self> {
        Ok(AdcModel::Ideal(IdealAdc::new(AdcSpec::new(n_bits, i_max)?)))
    }

    pub fn topology(&self) -> Topology {
        match self {
            AdcModel::Cco(_) => Topology::Cco,
            AdcModel::Sar(_) => Topology::Sar,
            AdcModel::SingleSlope(_) => Topology::SingleSlope,
            AdcModel::Ideal(_) => Topology::Ideal,
        }
    }

    pub fn spec(&self) -> &AdcSpec {
        match self {
            AdcModel::Cco(m) => &m.spec,
            AdcModel::Sar(m) => &m.spec,
            AdcModel::SingleSlope(m) => &m.spec,
            AdcModel::Ideal(m) => &m.spec,
        }
    }

    /// Converts a bit-line current in amperes.
    pub fn convert(&self, i_bl: f64) -> Result<u32> {
        if !(i_bl >= 0.0) {
            return Err(AdcError::NegativeInput(i_bl));
        }
        Ok(self.convert_norm(i_bl / self.spec().i_max))
    }

    /// Converts an input expressed as a fraction of full scale. Negative
    /// inputs are treated as zero current.
    pub fn convert_norm(&self, x: f64) -> u32 {
        let x = x.max(0.0);
        match self {
            AdcModel::Cco(m) => m.convert_norm(x),
            AdcModel::Sar(m) => m.convert_norm(x),
            AdcModel::SingleSlope(m) => m.convert_norm(x),
            AdcModel::Ideal(m) => m.convert_norm(x),
        }
    }

    pub fn convert_batch(&self, currents: &[f64]) -> Result<BatchConversion> {
        let i_max = self.spec().i_max;
        let mut codes = Vec::with_capacity(currents.len());
        let mut saturated = 0usize;
        for &i in currents {
            codes.push(self.convert(i)?);
            if i > i_max {
                saturated += 1;
            }
        }
        let saturated_fraction = if currents.is_empty() {
            0.0
        } else {
            saturated as f64 / currents.len() as f64
        };
        Ok(BatchConversion {
            codes,
            saturated_fraction,
        })
    }

    pub fn latency_cycles(&self) -> u64 {
        latency_cycles(self.topology(), self.spec().n_bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_time_examples() {
        let spec = AdcSpec::new(7, 10e-6).unwrap();
        assert_eq!(eval_time(&spec, 128e6).unwrap(), 1.0e-6);
        let one = AdcSpec::new(1, 1.0).unwrap();
        assert_eq!(eval_time(&one, 2.0).unwrap(), 1.0);
        // k_cco = 12.8 MHz/uA over 10 uA gives f_max = 128 MHz.
        let f_max = 12.8e6 / 1e-6 * 10e-6;
        approx::assert_relative_eq!(
            eval_time(&spec, f_max).unwrap(),
            1.0e-6,
            max_relative = 1e-15
        );
        assert!(matches!(
            eval_time(&spec, 0.0),
            Err(AdcError::NonPositiveFrequency(_))
        ));
        assert!(eval_time(&spec, -3.0).is_err());
    }

    #[test]
    fn latency() {
        assert_eq!(latency_cycles(Topology::Sar, 7), 7);
        assert_eq!(latency_cycles(Topology::SingleSlope, 7), 128);
        assert_eq!(latency_cycles(Topology::Sar, 1), 1);
        assert_eq!(latency_cycles(Topology::Cco, 7), 128);
    }

    #[test]
    fn ideal_examples() {
        let adc = AdcModel::ideal(7, 10e-6).unwrap();
        assert_eq!(adc.convert(5e-6).unwrap(), 64);
        assert_eq!(adc.convert(0.0).unwrap(), 0);
        assert_eq!(adc.convert(10e-6).unwrap(), 127);
        assert_eq!(adc.convert(25e-6).unwrap(), 127);
        assert!(matches!(
            adc.convert(-1e-9),
            Err(AdcError::NegativeInput(_))
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(AdcSpec::new(0, 1.0).is_err());
        assert!(AdcSpec::new(31, 1.0).is_err());
        assert!(AdcSpec::new(4, 0.0).is_err());
        assert!(AdcSpec::new(4, f64::NAN).is_err());
        let s = AdcSpec::new(7, 1.0).unwrap();
        assert_eq!(s.code_max(), 127);
        assert_eq!(s.levels(), 128.0);
    }

    #[test]
    fn batch_reports_saturation() {
        let adc = AdcModel::ideal(4, 1.0).unwrap();
        let out = adc.convert_batch(&[0.0, 0.5, 1.0, 1.5]).unwrap();
        assert_eq!(out.codes, vec![0, 8, 15, 15]);
        assert_eq!(out.saturated_fraction, 0.25);
    }
}
