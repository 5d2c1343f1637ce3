//! Single-point gain calibration of CCO converters.
//!
//! A bank of equally sized mirror devices is enabled one at a time
//! (thermometer code). Every enabled device diverts a fixed fraction of the
//! mirrored current, lowering the CCO gain by `tuning_step`. The loop stops at
//! the first setting whose code at the calibration current is at or below
//! the reference count, and the setting is frozen from then on.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adc::{AdcSpec, CcoAdc};
use crate::metrics::{code_spread, Spread};

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("code {code_at_max_tuning} at the calibration point still exceeds reference {ref_count} with every tuning bit enabled")]
    OutOfRange {
        code_at_max_tuning: u32,
        ref_count: u32,
    },
    #[error("invalid calibration config: {0}")]
    InvalidConfig(String),
    #[error("empty population")]
    EmptyPopulation,
}

/// Where the target count at the calibration current comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RefCount {
    /// Ideal code at the calibration current.
    IdealCode,
    /// Ideal code of a reference slowed by half the bank range, so the
    /// one-directional bank can pull instances in from either side.
    BankCentered,
    Fixed(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub n_tuning_bits: u32,
    /// Relative gain reduction per enabled tuning device.
    pub tuning_step: f64,
    /// Calibration current as a fraction of `i_max`.
    pub i_cal_fraction: f64,
    pub reference: RefCount,
    /// Area of a calibrated converter relative to an uncalibrated one.
    /// Reported, never modeled.
    pub area_factor: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_tuning_bits: 9,
            tuning_step: 0.01,
            i_cal_fraction: 1.0 / 3.0,
            reference: RefCount::BankCentered,
            area_factor: 3.0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self, spec: &AdcSpec) -> Result<(), CalibrationError> {
        let bad = |m: String| Err(CalibrationError::InvalidConfig(m));
        if self.n_tuning_bits < 1 {
            return bad("n_tuning_bits must be at least 1".into());
        }
        if !(self.tuning_step > 0.0) || self.tuning_step * self.n_tuning_bits as f64 >= 1.0 {
            return bad(format!(
                "tuning_step {} must be positive and keep the gain above zero",
                self.tuning_step
            ));
        }
        if !(self.i_cal_fraction > 0.0 && self.i_cal_fraction <= 1.0) {
            return bad(format!(
                "i_cal fraction {} outside (0, 1]",
                self.i_cal_fraction
            ));
        }
        if let RefCount::Fixed(c) = self.reference {
            if c > spec.code_max() {
                return bad(format!(
                    "ref_count {c} exceeds code_max {}",
                    spec.code_max()
                ));
            }
        }
        Ok(())
    }

    pub fn i_cal(&self, spec: &AdcSpec) -> f64 {
        self.i_cal_fraction * spec.i_max
    }

    pub fn ref_count(&self, spec: &AdcSpec) -> u32 {
        let ideal = spec.levels() * self.i_cal_fraction;
        let raw = match self.reference {
            RefCount::IdealCode => ideal,
            RefCount::BankCentered => {
                ideal * (1.0 - 0.5 * self.n_tuning_bits as f64 * self.tuning_step)
            }
            RefCount::Fixed(c) => return c,
        };
        spec.clamp_code(raw)
    }

    /// Gain multiplier with `code` tuning devices enabled.
    pub fn multiplier(&self, code: u32) -> f64 {
        1.0 - code as f64 * self.tuning_step
    }
}

/// A CCO instance with its frozen thermometer setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedAdc {
    pub base: CcoAdc,
    pub tuning_code: u32,
    pub tuning_step: f64,
}

impl CalibratedAdc {
    pub fn slope_multiplier(&self) -> f64 {
        1.0 - self.tuning_code as f64 * self.tuning_step
    }

    /// The trimmed converter.
    pub fn model(&self) -> CcoAdc {
        let trim = self.base.gain_trim * self.slope_multiplier();
        self.base.clone().with_gain_trim(trim)
    }

    pub fn convert_norm(&self, x: f64) -> u32 {
        self.model().convert_norm(x)
    }
}

/// Code at the calibration point with `code` tuning devices on.
pub fn code_with_tuning(model: &CcoAdc, cfg: &CalibrationConfig, code: u32) -> u32 {
    let trimmed = model
        .clone()
        .with_gain_trim(model.gain_trim * cfg.multiplier(code));
    trimmed.convert_norm(cfg.i_cal_fraction)
}

/// Runs the shift-register calibration loop on one instance.
pub fn calibrate(
    model: &CcoAdc,
    cfg: &CalibrationConfig,
) -> Result<CalibratedAdc, CalibrationError> {
    cfg.validate(&model.spec)?;
    let ref_count = cfg.ref_count(&model.spec);
    let mut code_at_ical = 0;
    for t in 0..=cfg.n_tuning_bits {
        code_at_ical = code_with_tuning(model, cfg, t);
        if code_at_ical <= ref_count {
            return Ok(CalibratedAdc {
                base: model.clone(),
                tuning_code: t,
                tuning_step: cfg.tuning_step,
            });
        }
    }
    Err(CalibrationError::OutOfRange {
        code_at_max_tuning: code_at_ical,
        ref_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalStatus {
    Ok,
    OutOfRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalEntry {
    pub instance_id: usize,
    /// Empty when the instance could not be calibrated.
    pub tuning_code: Option<u32>,
    /// Final code at `i_cal` (at full tuning for out-of-range instances).
    pub code_at_ical: u32,
    pub status: CalStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostCalReport {
    pub entries: Vec<CalEntry>,
    pub ref_count: u32,
    /// Spreads over the calibrated instances, before and after calibration.
    pub pre_spread_at_ical: Spread,
    pub pre_spread_at_imax: Spread,
    pub spread_at_ical: Spread,
    pub spread_at_imax: Spread,
    pub area_factor: f64,
    pub calibrated: Vec<CalibratedAdc>,
}

impl PostCalReport {
    pub fn out_of_range(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.status == CalStatus::OutOfRange)
            .count()
    }

    /// `instance_id,tuning_code,code_at_ical,status`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Calibrates every instance and compares code spread at `i_cal` and `i_max`.
pub fn post_cal_spread(
    population: &[CcoAdc],
    cfg: &CalibrationConfig,
) -> Result<PostCalReport, CalibrationError> {
    let first = population
        .first()
        .ok_or(CalibrationError::EmptyPopulation)?;
    cfg.validate(&first.spec)?;
    let x_cal = cfg.i_cal_fraction;
    let mut entries = Vec::with_capacity(population.len());
    let mut calibrated = Vec::new();
    let mut included = Vec::new();
    for (id, m) in population.iter().enumerate() {
        match calibrate(m, cfg) {
            Ok(cal) => {
                entries.push(CalEntry {
                    instance_id: id,
                    tuning_code: Some(cal.tuning_code),
                    code_at_ical: cal.convert_norm(x_cal),
                    status: CalStatus::Ok,
                });
                included.push(m);
                calibrated.push(cal);
            }
            Err(CalibrationError::OutOfRange {
                code_at_max_tuning, ..
            }) => entries.push(CalEntry {
                instance_id: id,
                tuning_code: None,
                code_at_ical: code_at_max_tuning,
                status: CalStatus::OutOfRange,
            }),
            Err(e) => return Err(e),
        }
    }
    let pre = |x: f64| {
        let codes: Vec<u32> = included.iter().map(|m| m.convert_norm(x)).collect();
        code_spread(&codes, x)
    };
    let post = |x: f64| {
        let codes: Vec<u32> = calibrated.iter().map(|c| c.convert_norm(x)).collect();
        code_spread(&codes, x)
    };
    Ok(PostCalReport {
        ref_count: cfg.ref_count(&first.spec),
        pre_spread_at_ical: pre(x_cal),
        pre_spread_at_imax: pre(1.0),
        spread_at_ical: post(x_cal),
        spread_at_imax: post(1.0),
        area_factor: cfg.area_factor,
        entries,
        calibrated,
    })
}
