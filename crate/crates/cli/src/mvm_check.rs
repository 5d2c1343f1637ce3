//! `mvm-check`: bit-sliced crossbar MVMs against the integer dot product.

use imc_core::adc::AdcModel;
use imc_core::crossbar::{mvm, program, write_trace, AdcBank, CrossbarConfig, Matrix};
use imc_core::quant::QuantConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{f6, RunDir, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct MvmReport {
    pub cases: usize,
    /// Ideal cases whose output differs from the oracle.
    pub mismatched_cases: usize,
    pub max_abs_deviation: f64,
    pub zero_input_max_abs: f64,
    /// Saturation of a full-scale-matched readout driven by all-ones.
    pub dense_ones_saturation: f64,
    /// Readout built from the configured crossbar and ADC.
    pub realistic_saturation: f64,
    pub realistic_rms_error: f64,
}

/// Random integer case: activation codes and signed weight codes.
pub struct Case {
    pub x: Vec<u32>,
    pub w_codes: Vec<i64>,
}

pub fn random_case<R: Rng>(rows: usize, cols: usize, q: &QuantConfig, rng: &mut R) -> Case {
    let act = q.act_format();
    let wf = q.weight_format();
    let x = (0..rows)
        .map(|_| rng.random_range(0..=act.max_code() as u32))
        .collect();
    let w_codes = (0..rows * cols)
        .map(|_| rng.random_range(wf.min_code()..=wf.max_code()))
        .collect();
    Case { x, w_codes }
}

/// `sum_r x_r * w_rc` in integer codes.
pub fn oracle(x: &[u32], w_codes: &[i64], cols: usize) -> Vec<i64> {
    (0..cols)
        .map(|c| {
            x.iter()
                .enumerate()
                .map(|(r, &xr)| xr as i64 * w_codes[r * cols + c])
                .sum()
        })
        .collect()
}

fn weight_matrix(w_codes: &[i64], rows: usize, cols: usize, q: &QuantConfig) -> Matrix {
    let lsb = q.weight_format().lsb();
    Matrix::new(
        rows,
        cols,
        w_codes.iter().map(|&c| c as f64 * lsb).collect(),
    )
}

pub fn run(cfg: &ExperimentConfig, out: &RunDir) -> Result<MvmReport> {
    let mc = &cfg.mvm_check;
    let q = cfg.quant;
    let xb_err = |e: imc_core::crossbar::CrossbarError| HarnessError::Config(e.to_string());
    let (ideal_cfg, bits) = CrossbarConfig::lossless(mc.rows, mc.cols);
    let ideal_adc = AdcModel::ideal(bits, ideal_cfg.adc_i_max()).map_err(HarnessError::model)?;
    let bank = AdcBank::Shared(ideal_adc);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut cases = Table::new("", &["case", "max_abs_deviation", "saturation_fraction"]);
    let mut mismatched = 0;
    let mut max_dev = 0.0f64;
    for k in 0..mc.cases {
        let case = random_case(mc.rows, mc.cols, &q, &mut rng);
        let w = program(
            &weight_matrix(&case.w_codes, mc.rows, mc.cols, &q),
            &q,
            &ideal_cfg,
            cfg.seed.wrapping_add(k as u64),
        )
        .map_err(xb_err)?;
        let mut trace = Vec::new();
        let res = mvm(
            &case.x,
            &w,
            &bank,
            &q,
            &ideal_cfg,
            (k == 0).then_some(&mut trace),
        )
        .map_err(HarnessError::model)?;
        if k == 0 {
            write_trace(&trace, out.create_file("trace_case0.csv")?)
                .map_err(HarnessError::model)?;
        }
        let expect = oracle(&case.x, &case.w_codes, mc.cols);
        let dev = res
            .products
            .iter()
            .zip(&expect)
            .map(|(p, &e)| (p - e as f64).abs())
            .fold(0.0, f64::max);
        if dev != 0.0 {
            mismatched += 1;
        }
        max_dev = max_dev.max(dev);
        cases.push(vec![k.to_string(), f6(dev), f6(res.saturation_fraction())]);
    }
    cases.write_csv(out.create_file("cases.csv")?)?;

    // All-zero inputs.
    let case = random_case(mc.rows, mc.cols, &q, &mut rng);
    let w = program(
        &weight_matrix(&case.w_codes, mc.rows, mc.cols, &q),
        &q,
        &ideal_cfg,
        cfg.seed,
    )
    .map_err(xb_err)?;
    let zero =
        mvm(&vec![0; mc.rows], &w, &bank, &q, &ideal_cfg, None).map_err(HarnessError::model)?;
    let zero_max = zero.products.iter().map(|p| p.abs()).fold(0.0, f64::max);

    // Dense ones through an N-bit converter whose full scale is rows cells.
    let dense_cfg = CrossbarConfig::ideal(mc.rows, mc.cols);
    let dense_adc =
        AdcModel::ideal(mc.realistic_bits, dense_cfg.adc_i_max()).map_err(HarnessError::model)?;
    let wf = q.weight_format();
    let ones = program(
        &Matrix::new(mc.rows, mc.cols, vec![wf.max_value(); mc.rows * mc.cols]),
        &q,
        &dense_cfg,
        cfg.seed,
    )
    .map_err(xb_err)?;
    let dense = mvm(
        &vec![q.act_format().max_code() as u32; mc.rows],
        &ones,
        &AdcBank::Shared(dense_adc),
        &q,
        &dense_cfg,
        None,
    )
    .map_err(HarnessError::model)?;

    // Configured array and converter.
    let real_cfg = CrossbarConfig {
        rows: mc.rows,
        cols: mc.cols,
        ..cfg.crossbar
    };
    let template =
        cfg.adc
            .template_of(cfg.adc.topology, mc.realistic_bits, real_cfg.adc_i_max())?;
    let real_adc = cfg.adc.at_supply(&template, cfg.adc.supply_scale)?;
    let real_bank = AdcBank::Shared(real_adc);
    let mut sat = 0usize;
    let mut conv = 0usize;
    let mut sq = 0.0;
    let mut n = 0usize;
    for k in 0..mc.realistic_cases {
        let case = random_case(mc.rows, mc.cols, &q, &mut rng);
        let w = program(
            &weight_matrix(&case.w_codes, mc.rows, mc.cols, &q),
            &q,
            &real_cfg,
            cfg.seed.wrapping_add(k as u64),
        )
        .map_err(xb_err)?;
        let res = mvm(&case.x, &w, &real_bank, &q, &real_cfg, None).map_err(HarnessError::model)?;
        sat += res.saturated;
        conv += res.conversions;
        for (p, e) in res
            .products
            .iter()
            .zip(oracle(&case.x, &case.w_codes, mc.cols))
        {
            sq += (p - e as f64).powi(2);
            n += 1;
        }
    }
    let report = MvmReport {
        cases: mc.cases,
        mismatched_cases: mismatched,
        max_abs_deviation: max_dev,
        zero_input_max_abs: zero_max,
        dense_ones_saturation: dense.saturation_fraction(),
        realistic_saturation: if conv == 0 {
            0.0
        } else {
            sat as f64 / conv as f64
        },
        realistic_rms_error: if n == 0 { 0.0 } else { (sq / n as f64).sqrt() },
    };

    let mut table = Table::new(
        &format!(
            "{}x{} bit-sliced MVM against the integer oracle",
            mc.rows, mc.cols
        ),
        &["metric", "value"],
    );
    for (k, v) in [
        ("ideal_cases", report.cases.to_string()),
        ("mismatched_cases", report.mismatched_cases.to_string()),
        ("max_abs_deviation", f6(report.max_abs_deviation)),
        ("zero_input_max_abs", f6(report.zero_input_max_abs)),
        ("dense_ones_saturation", f6(report.dense_ones_saturation)),
        ("realistic_saturation", f6(report.realistic_saturation)),
        ("realistic_rms_error", f6(report.realistic_rms_error)),
    ] {
        table.push(vec![k.to_string(), v]);
    }
    out.write_table("summary", &table)?;

    if report.mismatched_cases > 0 || report.zero_input_max_abs != 0.0 {
        return Err(HarnessError::OracleMismatch(format!(
            "{} of {} ideal cases deviate (max {}), zero-input max {}",
            report.mismatched_cases,
            report.cases,
            report.max_abs_deviation,
            report.zero_input_max_abs
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_by_hand() {
        // x = [1, 2], w = [[3, -1], [-2, 4]] -> [3 - 4, -1 + 8]
        assert_eq!(oracle(&[1, 2], &[3, -1, -2, 4], 2), vec![-1, 7]);
    }
}
