//! `calibrate`: thermometer-bank calibration of a CCO population.

use imc_core::adc::{sample_population, AdcModel, CcoAdc, Topology};
use imc_core::calibration::{post_cal_spread, PostCalReport};
use imc_core::metrics::{code_spread, write_spread_csv, Spread};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{f6, RunDir, Table};

#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub report: PostCalReport,
    /// Spread vs input before calibration (all instances).
    pub pre: Vec<Spread>,
    /// Spread vs input after calibration (calibrated instances).
    pub post: Vec<Spread>,
}

impl CalibrationRun {
    /// Pre/post std-dev ratio at the calibration current.
    pub fn reduction_at_ical(&self) -> f64 {
        self.report.pre_spread_at_ical.std_code / self.report.spread_at_ical.std_code
    }
}

/// Mismatched CCO instances of the configured template.
pub fn population(cfg: &ExperimentConfig) -> Result<Vec<CcoAdc>> {
    if cfg.adc.topology != Topology::Cco {
        return Err(HarnessError::Config(format!(
            "calibration needs the cco topology, configured {}",
            cfg.adc.topology
        )));
    }
    let template = cfg.adc.template()?;
    let pop = sample_population(
        &template,
        &cfg.variation,
        cfg.calibrate.supply_scale,
        cfg.seed,
        cfg.calibrate.population,
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(cfg
        .adc
        .pin_nl(pop)?
        .into_iter()
        .filter_map(|m| match m {
            AdcModel::Cco(c) => Some(c),
            _ => None,
        })
        .collect())
}

pub fn run(cfg: &ExperimentConfig, out: &RunDir) -> Result<CalibrationRun> {
    let pop = population(cfg)?;
    let report = post_cal_spread(&pop, &cfg.calibration)
        .map_err(|e| HarnessError::Config(format!("calibration: {e}")))?;
    let points = &cfg.calibrate.spread_points;
    let pre: Vec<Spread> = points
        .iter()
        .map(|&x| {
            let codes: Vec<u32> = pop.iter().map(|m| m.convert_norm(x)).collect();
            code_spread(&codes, x)
        })
        .collect();
    let post: Vec<Spread> = points
        .iter()
        .map(|&x| {
            let codes: Vec<u32> = report
                .calibrated
                .iter()
                .map(|m| m.convert_norm(x))
                .collect();
            code_spread(&codes, x)
        })
        .collect();

    report.write_csv(out.create_file("report.csv")?)?;
    write_spread_csv(&pre, out.create_file("spread_pre.csv")?).map_err(HarnessError::model)?;
    write_spread_csv(&post, out.create_file("spread_post.csv")?).map_err(HarnessError::model)?;

    let mut table = Table::new(
        &format!(
            "Calibration of {} CCO instances at supply {:.2} (reference count {})",
            pop.len(),
            cfg.calibrate.supply_scale,
            report.ref_count
        ),
        &["point", "input", "pre_std", "post_std"],
    );
    let x_cal = cfg.calibration.i_cal_fraction;
    table.push(vec![
        "i_cal".into(),
        f6(x_cal),
        f6(report.pre_spread_at_ical.std_code),
        f6(report.spread_at_ical.std_code),
    ]);
    table.push(vec![
        "i_max".into(),
        f6(1.0),
        f6(report.pre_spread_at_imax.std_code),
        f6(report.spread_at_imax.std_code),
    ]);
    out.write_table("summary", &table)?;
    out.write_text(
        "status.txt",
        &format!(
            "instances {}\ncalibrated {}\nout_of_range {}\narea_factor {}\n",
            pop.len(),
            report.calibrated.len(),
            report.out_of_range(),
            report.area_factor
        ),
    )?;
    Ok(CalibrationRun { report, pre, post })
}
