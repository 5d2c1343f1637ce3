use serde::{Deserialize, Serialize};

use super::{AdcSpec, Result};

/// Ramp-compare converter. Offset is input-referred and applied before gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSlopeAdc {
    pub spec: AdcSpec,
    pub gain_err: f64,
    /// Input-referred offset in amperes.
    pub offset_err: f64,
}

impl SingleSlopeAdc {
    pub fn new(spec: AdcSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            gain_err: 0.0,
            offset_err: 0.0,
        })
    }

    pub fn with_errors(mut self, gain_err: f64, offset_err: f64) -> Self {
        self.gain_err = gain_err;
        self.offset_err = offset_err;
        self
    }

    pub fn convert_norm(&self, x: f64) -> u32 {
        let v = x + self.offset_err / self.spec.i_max;
        self.spec
            .clamp_code(self.spec.levels() * (1.0 + self.gain_err) * v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_and_offset() {
        let spec = AdcSpec::new(3, 1.0).unwrap();
        let ss = SingleSlopeAdc::new(spec).unwrap();
        assert_eq!(ss.convert_norm(0.5), 4);
        let fast = ss.clone().with_errors(0.25, 0.0);
        assert_eq!(fast.convert_norm(0.5), 5);
        let shifted = ss.with_errors(0.0, 1.0 / 8.0);
        assert_eq!(shifted.convert_norm(0.5), 5);
        assert_eq!(shifted.convert_norm(0.0), 1);
    }
}
