use serde::{Deserialize, Serialize};

use super::{eval_time, AdcError, AdcSpec, Result};

/// Upper bound on the compression coefficient.
pub const MAX_NL_COEFF: f64 = 0.9;

/// Supply dependence of the CCO compression coefficient:
/// `nl(s) = base + supply_gain * (1/s - 1)`, clamped to `[0, MAX_NL_COEFF]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NonLinearity {
    pub base: f64,
    pub supply_gain: f64,
}

impl NonLinearity {
    pub const NONE: NonLinearity = NonLinearity {
        base: 0.0,
        supply_gain: 0.0,
    };

    pub fn coeff_at(&self, supply_scale: f64) -> f64 {
        let raw = self.base + self.supply_gain * (1.0 / supply_scale - 1.0);
        raw.clamp(0.0, MAX_NL_COEFF)
    }
}

/// Current-controlled ring oscillator followed by a ripple counter.
///
/// The oscillator frequency is `(1 + slope_err) * trim * k_cco * i_max * h(v)`
/// with `v = (i_bl + offset_err) / i_max` and the compressive characteristic
/// `h(v) = v * (1 - nl * v^2)`. Above the peak of `h` (at `v = 1/sqrt(3 nl)`)
/// the frequency is held flat so the converter stays monotone for any input.
/// The code is the number of periods counted over `t_eval = 2^N / f_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcoAdc {
    pub spec: AdcSpec,
    /// Nominal current-to-frequency gain in Hz/A.
    pub k_cco: f64,
    pub f_max: f64,
    pub t_eval: f64,
    pub supply_scale: f64,
    pub nonlinearity: NonLinearity,
    /// Compression coefficient at the current supply.
    pub nl_coeff: f64,
    pub slope_err: f64,
    /// Input-referred offset in amperes.
    pub offset_err: f64,
    /// Mirror-ratio multiplier applied by the calibration bank.
    #[serde(default = "unit")]
    pub gain_trim: f64,
    /// Clamped bit-line voltage. Informational.
    pub v_ref: f64,
}

fn unit() -> f64 {
    1.0
}

impl CcoAdc {
    /// A nominal, perfectly linear instance at full supply.
    pub fn new(spec: AdcSpec, k_cco: f64) -> Result<Self> {
        spec.validate()?;
        if !(k_cco > 0.0 && k_cco.is_finite()) {
            return Err(AdcError::InvalidParameter(format!(
                "k_cco must be positive, got {k_cco}"
            )));
        }
        let f_max = k_cco * spec.i_max;
        let t_eval = eval_time(&spec, f_max)?;
        Ok(Self {
            spec,
            k_cco,
            f_max,
            t_eval,
            supply_scale: 1.0,
            nonlinearity: NonLinearity::NONE,
            nl_coeff: 0.0,
            slope_err: 0.0,
            offset_err: 0.0,
            gain_trim: 1.0,
            v_ref: 0.4,
        })
    }

    pub fn with_nonlinearity(mut self, nonlinearity: NonLinearity) -> Self {
        self.nonlinearity = nonlinearity;
        self.nl_coeff = nonlinearity.coeff_at(self.supply_scale);
        self
    }

    /// Moves the instance to another supply, re-deriving the compression.
    pub fn at_supply(&self, supply_scale: f64) -> Result<Self> {
        if !(supply_scale > 0.0 && supply_scale <= 1.0) {
            return Err(AdcError::InvalidSupply(supply_scale));
        }
        let mut out = self.clone();
        out.supply_scale = supply_scale;
        out.nl_coeff = self.nonlinearity.coeff_at(supply_scale);
        Ok(out)
    }

    /// Overrides the compression coefficient directly.
    pub fn with_nl_coeff(mut self, nl_coeff: f64) -> Result<Self> {
        if !(0.0..=MAX_NL_COEFF).contains(&nl_coeff) {
            return Err(AdcError::InvalidParameter(format!(
                "nl_coeff must lie in [0, {MAX_NL_COEFF}], got {nl_coeff}"
            )));
        }
        self.nl_coeff = nl_coeff;
        Ok(self)
    }

    pub fn with_errors(mut self, slope_err: f64, offset_err: f64) -> Self {
        self.slope_err = slope_err;
        self.offset_err = offset_err;
        self
    }

    pub fn with_gain_trim(mut self, gain_trim: f64) -> Self {
        self.gain_trim = gain_trim;
        self
    }

    fn compress(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        let nl = self.nl_coeff;
        if nl <= 0.0 {
            return v;
        }
        let v = v.min((3.0 * nl).sqrt().recip());
        v * (1.0 - nl * v * v)
    }

    fn gain(&self) -> f64 {
        (1.0 + self.slope_err) * self.gain_trim
    }

    /// Oscillation frequency in Hz for a bit-line current in amperes.
    pub fn frequency(&self, i_bl: f64) -> Result<f64> {
        if !(i_bl >= 0.0) {
            return Err(AdcError::NegativeInput(i_bl));
        }
        let v = (i_bl + self.offset_err) / self.spec.i_max;
        Ok((self.gain() * self.k_cco * self.spec.i_max * self.compress(v)).max(0.0))
    }

    /// Count accumulated over the evaluation window, before flooring.
    ///
    /// Equal to `t_eval * frequency(x * i_max)`; evaluated in normalized form
    /// so the error-free instance is exactly `2^N * x`.
    pub fn raw_count(&self, x: f64) -> f64 {
        let v = x + self.offset_err / self.spec.i_max;
        (self.spec.levels() * self.gain() * self.compress(v)).max(0.0)
    }

    pub fn convert_norm(&self, x: f64) -> u32 {
        self.spec.clamp_code(self.raw_count(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn nominal() -> CcoAdc {
        let spec = AdcSpec::new(7, 10e-6).unwrap();
        CcoAdc::new(spec, 12.8e6 / 1e-6).unwrap()
    }

    #[test]
    fn eval_window_matches_fmax() {
        let m = nominal();
        assert_relative_eq!(m.t_eval * m.f_max, 128.0, max_relative = 1e-15);
        assert_relative_eq!(m.f_max, 128e6, max_relative = 1e-12);
        assert_relative_eq!(m.t_eval, 1e-6, max_relative = 1e-12);
    }

    #[test]
    fn frequency_endpoints() {
        let m = nominal();
        assert_eq!(m.frequency(m.spec.i_max).unwrap(), m.f_max);
        assert_eq!(m.frequency(0.0).unwrap(), 0.0);
        assert!(m.frequency(-1e-9).is_err());
    }

    #[test]
    fn compression_lowers_frequency() {
        // nl = 0.2 at supply 0.8, input at 90% of full scale.
        let m = nominal()
            .at_supply(0.8)
            .unwrap()
            .with_nl_coeff(0.2)
            .unwrap();
        let f = m.frequency(0.9 * m.spec.i_max).unwrap();
        let linear = 0.9 * m.f_max;
        // Analytic: 0.9 * (1 - 0.2 * 0.81) = 0.7542 of f_max.
        assert_relative_eq!(f / m.f_max, 0.9 * (1.0 - 0.2 * 0.81), max_relative = 1e-12);
        assert!(f < linear);
    }

    #[test]
    fn full_scale_code_clamps() {
        let m = nominal();
        assert_eq!(m.convert_norm(1.0), 127);
        assert_eq!(m.convert_norm(0.5), 64);
        assert_eq!(m.convert_norm(0.0), 0);
    }

    #[test]
    fn count_equals_window_times_frequency() {
        let m = nominal()
            .with_nonlinearity(NonLinearity {
                base: 0.05,
                supply_gain: 0.1,
            })
            .at_supply(0.7)
            .unwrap()
            .with_errors(0.03, 0.2e-6);
        for k in 0..50 {
            let x = k as f64 / 40.0;
            let counted = m.t_eval * m.frequency(x * m.spec.i_max).unwrap();
            assert_relative_eq!(
                m.raw_count(x),
                counted,
                max_relative = 1e-12,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn nonlinearity_grows_as_supply_drops() {
        let nl = NonLinearity {
            base: 0.01,
            supply_gain: 0.1,
        };
        assert_eq!(nl.coeff_at(1.0), 0.01);
        assert!(nl.coeff_at(0.8) < nl.coeff_at(0.6));
        assert_eq!(
            NonLinearity {
                base: 0.5,
                supply_gain: 5.0
            }
            .coeff_at(0.1),
            MAX_NL_COEFF
        );
    }

    #[test]
    fn frequency_is_monotone_past_the_peak() {
        let m = nominal().with_nl_coeff(0.6).unwrap();
        let mut prev = 0.0;
        for k in 0..=300 {
            let f = m.frequency(k as f64 / 200.0 * m.spec.i_max).unwrap();
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn invalid_supply_rejected() {
        assert!(nominal().at_supply(0.0).is_err());
        assert!(nominal().at_supply(1.2).is_err());
        assert!(nominal().with_nl_coeff(-0.1).is_err());
    }
}
