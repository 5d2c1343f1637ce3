//! `characterize`: transfer curves, INL/DNL and Monte-Carlo spread per supply.

use imc_core::adc::{
    sample_curve, sample_population, write_population, AdcModel, PopulationManifest,
};
use imc_core::metrics::{code_spread, linearity, write_spread_csv, LinearityReport, Spread};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{f4, f6, par_map, RunDir, Table};

/// Per-supply headline numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyPoint {
    pub supply_scale: f64,
    /// Compression coefficient of the nominal CCO (0 for other topologies).
    pub nl_coeff: f64,
    pub nominal: LinearityReport,
    /// Population spread at each configured input.
    pub spread: Vec<Spread>,
    /// Code std-dev at half full scale.
    pub mid_std: f64,
    pub mc_mean_max_abs_inl: f64,
    pub mc_worst_max_abs_inl: f64,
}

pub fn supply_dir(s: f64) -> String {
    format!("supply_{s:.2}")
}

pub fn run(cfg: &ExperimentConfig, out: &RunDir) -> Result<Vec<SupplyPoint>> {
    let template = cfg.adc.template()?;
    let ch = &cfg.characterize;
    let results = par_map(&ch.supplies, cfg.jobs, |&s| {
        characterize_supply(cfg, &template, s)
    });
    let mut points = Vec::with_capacity(results.len());
    for r in results {
        let (point, curves_to_write) = r?;
        let dir = supply_dir(point.supply_scale);
        let nominal_curve = &curves_to_write.0;
        nominal_curve
            .write_csv(out.create_file(&format!("{dir}/curve.csv"))?)
            .map_err(HarnessError::model)?;
        point
            .nominal
            .write_csv(out.create_file(&format!("{dir}/linearity.csv"))?)
            .map_err(HarnessError::model)?;
        write_spread_csv(
            &point.spread,
            out.create_file(&format!("{dir}/spread.csv"))?,
        )
        .map_err(HarnessError::model)?;
        let manifest = PopulationManifest::new(
            template.topology(),
            cfg.adc.n_bits,
            ch.mc_count,
            cfg.seed,
            point.supply_scale,
            cfg.adc.n_points,
            cfg.variation,
        );
        let mc_dir = out.subdir(&format!("{dir}/mc"))?;
        if ch.write_curves {
            write_population(&mc_dir, &manifest, &curves_to_write.1)
                .map_err(HarnessError::model)?;
        } else {
            let text = toml::to_string(&manifest).map_err(HarnessError::model)?;
            out.write_text(&format!("{dir}/mc/manifest.toml"), &text)?;
        }
        points.push(point);
    }

    let mut table = Table::new(
        &format!(
            "{} ADC, {} bits: linearity and spread vs supply ({} MC instances)",
            template.topology(),
            cfg.adc.n_bits,
            ch.mc_count
        ),
        &[
            "supply",
            "nl_coeff",
            "max_abs_inl",
            "max_abs_dnl",
            "missing_codes",
            "mid_code_std",
            "mc_mean_max_abs_inl",
            "mc_worst_max_abs_inl",
        ],
    );
    for p in &points {
        table.push(vec![
            format!("{:.2}", p.supply_scale),
            f4(p.nl_coeff),
            f4(p.nominal.max_abs_inl),
            f4(p.nominal.max_abs_dnl),
            p.nominal.missing_codes.len().to_string(),
            f6(p.mid_std),
            f4(p.mc_mean_max_abs_inl),
            f4(p.mc_worst_max_abs_inl),
        ]);
    }
    out.write_table("summary", &table)?;
    Ok(points)
}

type Curves = (
    imc_core::adc::TransferCurve,
    Vec<imc_core::adc::TransferCurve>,
);

fn characterize_supply(
    cfg: &ExperimentConfig,
    template: &AdcModel,
    s: f64,
) -> Result<(SupplyPoint, Curves)> {
    let nominal = cfg.adc.at_supply(template, s)?;
    let curve = sample_curve(&nominal, cfg.adc.n_points).map_err(HarnessError::model)?;
    let report = linearity(&curve).map_err(|e| HarnessError::Numerical(e.to_string()))?;
    let population = sample_population(
        template,
        &cfg.variation,
        s,
        cfg.seed,
        cfg.characterize.mc_count,
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    let population = cfg.adc.pin_nl(population)?;
    let spread: Vec<Spread> = cfg
        .characterize
        .spread_points
        .iter()
        .map(|&x| {
            let codes: Vec<u32> = population.iter().map(|m| m.convert_norm(x)).collect();
            code_spread(&codes, x)
        })
        .collect();
    let mid_codes: Vec<u32> = population.iter().map(|m| m.convert_norm(0.5)).collect();
    let mid_std = code_spread(&mid_codes, 0.5).std_code;
    let mut curves = Vec::with_capacity(population.len());
    let mut inl = Vec::with_capacity(population.len());
    for m in &population {
        let c = sample_curve(m, cfg.adc.n_points).map_err(HarnessError::model)?;
        inl.push(
            linearity(&c)
                .map_err(|e| HarnessError::Numerical(e.to_string()))?
                .max_abs_inl,
        );
        curves.push(c);
    }
    let mc_mean = if inl.is_empty() {
        0.0
    } else {
        inl.iter().sum::<f64>() / inl.len() as f64
    };
    let mc_worst = inl.iter().cloned().fold(0.0, f64::max);
    let nl_coeff = match &nominal {
        AdcModel::Cco(m) => m.nl_coeff,
        _ => 0.0,
    };
    Ok((
        SupplyPoint {
            supply_scale: s,
            nl_coeff,
            nominal: report,
            spread,
            mid_std,
            mc_mean_max_abs_inl: mc_mean,
            mc_worst_max_abs_inl: mc_worst,
        },
        (curve, curves),
    ))
}
