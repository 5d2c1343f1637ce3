use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AdcError, AdcModel, Result};

/// Random mismatch statistics at nominal supply.
///
/// Every sigma is multiplied by `supply_scale^(-supply_variation_exponent)`
/// when an instance is drawn, so spread grows as the supply is lowered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariationConfig {
    /// Relative std-dev of the gain (slope) error.
    pub sigma_slope: f64,
    /// Std-dev of the input-referred offset, as a fraction of `i_max`.
    pub sigma_offset: f64,
    /// Relative mismatch of a unit capacitor (SAR).
    pub sigma_cap: f64,
    /// Comparator offset std-dev in volts (SAR).
    pub sigma_comp: f64,
    pub supply_variation_exponent: f64,
    /// Systematic (corner) gain shift added to every instance.
    pub slope_mean: f64,
}

impl Default for VariationConfig {
    fn default() -> Self {
        Self {
            sigma_slope: 0.03,
            sigma_offset: 0.002,
            sigma_cap: 0.01,
            sigma_comp: 1e-3,
            supply_variation_exponent: 1.5,
            slope_mean: 0.0,
        }
    }
}

impl VariationConfig {
    pub const NONE: VariationConfig = VariationConfig {
        sigma_slope: 0.0,
        sigma_offset: 0.0,
        sigma_cap: 0.0,
        sigma_comp: 0.0,
        supply_variation_exponent: 0.0,
        slope_mean: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.sigma_slope,
            self.sigma_offset,
            self.sigma_cap,
            self.sigma_comp,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(AdcError::InvalidParameter(
                "variation sigmas must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Multiplier applied to every sigma at the given supply.
    pub fn supply_factor(&self, supply_scale: f64) -> f64 {
        supply_scale.powf(-self.supply_variation_exponent)
    }
}

/// Draws one mismatched instance of `template` at `supply_scale`.
///
/// Draws are zero-mean Gaussians added on top of the template's own error
/// terms. The result is a pure function of the arguments.
pub fn sample_instance(
    template: &AdcModel,
    var: &VariationConfig,
    supply_scale: f64,
    seed: u64,
) -> Result<AdcModel> {
    if !(supply_scale > 0.0 && supply_scale <= 1.0) {
        return Err(AdcError::InvalidSupply(supply_scale));
    }
    var.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = var.supply_factor(supply_scale);
    let mut z = move || -> f64 { StandardNormal.sample(&mut rng) };

    Ok(match template {
        AdcModel::Cco(m) => {
            let mut inst = m.at_supply(supply_scale)?;
            inst.slope_err += var.slope_mean + var.sigma_slope * k * z();
            inst.offset_err += var.sigma_offset * k * z() * m.spec.i_max;
            AdcModel::Cco(inst)
        }
        AdcModel::Sar(m) => {
            let mut inst = m.clone();
            inst.frontend_gain_err += var.slope_mean + var.sigma_slope * k * z();
            // Pelgrom scaling: a weight built from n unit caps mismatches by sigma/sqrt(n).
            for cap in inst.cap_weights.iter_mut() {
                let rel = var.sigma_cap * k / cap.sqrt();
                *cap = (*cap * (1.0 + rel * z())).max(1e-6);
            }
            inst.comparator_offset += var.sigma_comp * k * z();
            AdcModel::Sar(inst)
        }
        AdcModel::SingleSlope(m) => {
            let mut inst = m.clone();
            inst.gain_err += var.slope_mean + var.sigma_slope * k * z();
            inst.offset_err += var.sigma_offset * k * z() * m.spec.i_max;
            AdcModel::SingleSlope(inst)
        }
        AdcModel::Ideal(m) => AdcModel::Ideal(*m),
    })
}

/// Seed used for instance `index` of a population.
pub(crate) fn instance_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

/// `count` instances with seeds `base_seed, base_seed + 1, ...`.
pub fn sample_population(
    template: &AdcModel,
    var: &VariationConfig,
    supply_scale: f64,
    base_seed: u64,
    count: usize,
) -> Result<Vec<AdcModel>> {
    (0..count)
        .map(|i| sample_instance(template, var, supply_scale, instance_seed(base_seed, i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adc::{AdcSpec, CcoAdc, SarAdc, SingleSlopeAdc};

    fn cco() -> AdcModel {
        AdcModel::Cco(CcoAdc::new(AdcSpec::new(7, 10e-6).unwrap(), 12.8e12).unwrap())
    }

    #[test]
    fn zero_sigma_is_identity() {
        let spec = AdcSpec::new(7, 10e-6).unwrap();
        let templates = [
            cco(),
            AdcModel::Sar(SarAdc::new(spec, 1e5).unwrap()),
            AdcModel::SingleSlope(SingleSlopeAdc::new(spec).unwrap()),
            AdcModel::ideal(7, 10e-6).unwrap(),
        ];
        for t in &templates {
            let inst = sample_instance(t, &VariationConfig::NONE, 1.0, 42).unwrap();
            assert_eq!(&inst, t);
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let var = VariationConfig::default();
        let a = sample_instance(&cco(), &var, 0.8, 7).unwrap();
        let b = sample_instance(&cco(), &var, 0.8, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_instance(&cco(), &var, 0.8, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn slope_population_std() {
        let var = VariationConfig {
            sigma_slope: 0.05,
            ..VariationConfig::NONE
        };
        let pop = sample_population(&cco(), &var, 1.0, 1000, 200).unwrap();
        let slopes: Vec<f64> = pop
            .iter()
            .map(|m| match m {
                AdcModel::Cco(c) => c.slope_err,
                _ => unreachable!(),
            })
            .collect();
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        let var_s = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / slopes.len() as f64;
        let std = var_s.sqrt();
        assert!((std - 0.05).abs() < 0.2 * 0.05, "std {std}");
    }

    #[test]
    fn sigma_grows_at_low_supply() {
        let var = VariationConfig::default();
        assert_eq!(var.supply_factor(1.0), 1.0);
        assert!(var.supply_factor(0.6) > var.supply_factor(0.8));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(sample_instance(&cco(), &VariationConfig::default(), 0.0, 1).is_err());
        let bad = VariationConfig {
            sigma_slope: -0.1,
            ..VariationConfig::NONE
        };
        assert!(sample_instance(&cco(), &bad, 1.0, 1).is_err());
    }
}
