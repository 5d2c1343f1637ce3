use serde::{Deserialize, Serialize};

use super::{AdcError, AdcSpec, Result};

/// SAR converter behind a transimpedance (or integrating) front end.
///
/// The front end turns `i_bl` into `v = frontend_gain * (1 + frontend_gain_err) * i_bl`.
/// The capacitive DAC is binary weighted with one terminating unit cap, so a
/// trial code switches a fraction `sum(on caps) / sum(all caps)` of the
/// reference onto the comparator. Comparisons are top-plate, no redundancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarAdc {
    pub spec: AdcSpec,
    /// Transimpedance in V/A.
    pub frontend_gain: f64,
    pub frontend_gain_err: f64,
    /// Capacitor weights, MSB first, in unit-cap multiples.
    pub cap_weights: Vec<f64>,
    /// Input-referred comparator offset in volts.
    pub comparator_offset: f64,
}

/// `[2^(N-1), ..., 2, 1]`.
pub(crate) fn nominal_caps(n_bits: u32) -> Vec<f64> {
    (0..n_bits)
        .map(|k| (1u64 << (n_bits - 1 - k)) as f64)
        .collect()
}

impl SarAdc {
    pub fn new(spec: AdcSpec, frontend_gain: f64) -> Result<Self> {
        spec.validate()?;
        if !(frontend_gain > 0.0 && frontend_gain.is_finite()) {
            return Err(AdcError::InvalidParameter(format!(
                "frontend gain must be positive, got {frontend_gain}"
            )));
        }
        Ok(Self {
            spec,
            frontend_gain,
            frontend_gain_err: 0.0,
            cap_weights: nominal_caps(spec.n_bits),
            comparator_offset: 0.0,
        })
    }

    pub fn with_caps(mut self, caps: Vec<f64>) -> Result<Self> {
        if caps.len() != self.spec.n_bits as usize {
            return Err(AdcError::InvalidParameter(format!(
                "expected {} capacitor weights, got {}",
                self.spec.n_bits,
                caps.len()
            )));
        }
        if caps.iter().any(|c| !(*c > 0.0)) {
            return Err(AdcError::InvalidParameter(
                "capacitor weights must be positive".into(),
            ));
        }
        self.cap_weights = caps;
        Ok(self)
    }

    pub fn with_comparator_offset(mut self, volts: f64) -> Self {
        self.comparator_offset = volts;
        self
    }

    pub fn with_frontend_gain_err(mut self, err: f64) -> Self {
        self.frontend_gain_err = err;
        self
    }

    /// Full-scale front-end voltage, `frontend_gain * i_max`.
    pub fn full_scale_voltage(&self) -> f64 {
        self.frontend_gain * self.spec.i_max
    }

    pub fn convert_norm(&self, x: f64) -> u32 {
        // Everything is normalized to the nominal full-scale voltage.
        let v =
            x * (1.0 + self.frontend_gain_err) - self.comparator_offset / self.full_scale_voltage();
        let total: f64 = self.cap_weights.iter().sum::<f64>() + 1.0;
        let n = self.spec.n_bits;
        let mut code = 0u32;
        let mut on = 0.0;
        for (k, cap) in self.cap_weights.iter().enumerate() {
            let trial = on + cap;
            if v >= trial / total {
                on = trial;
                code |= 1 << (n as usize - 1 - k);
            }
        }
        code
    }
}
