//! `train`: runs one recipe over the configured seeds and writes
//! checkpoints, histories and summary tables.

use imc_core::metrics::mean_std;

use crate::config::{ExperimentConfig, Recipe};
use crate::error::{HarnessError, Result};
use crate::lab::{fmt_acc, fmt_std, histogram, AdcRetrainSeed, Lab, NoiseSeed, SweepSeed, VatSeed};
use crate::output::{f2, RunDir, Table};

#[derive(Debug, Clone)]
pub enum RecipeOutput {
    BitwidthSweep(Vec<SweepSeed>),
    AdcRetrain(Vec<AdcRetrainSeed>),
    Vat(Vec<VatSeed>),
    WeightNoise(Vec<NoiseSeed>),
}

pub fn run(cfg: &ExperimentConfig, out: &RunDir) -> Result<RecipeOutput> {
    let mut lab = Lab::new(cfg, out.path().to_path_buf())?;
    run_recipe(&mut lab, cfg.training.recipe, out)
}

pub fn run_recipe(lab: &mut Lab, recipe: Recipe, out: &RunDir) -> Result<RecipeOutput> {
    let seeds = lab.cfg.training.seeds(lab.cfg.seed);
    match recipe {
        Recipe::BitwidthSweep => {
            let res = seeds
                .iter()
                .map(|&s| lab.bitwidth_sweep(s))
                .collect::<Result<Vec<_>>>()?;
            write_sweep(lab, &res, out)?;
            Ok(RecipeOutput::BitwidthSweep(res))
        }
        Recipe::AdcRetrain => {
            let res = seeds
                .iter()
                .map(|&s| lab.adc_retrain(s))
                .collect::<Result<Vec<_>>>()?;
            write_adc_retrain(lab, &res, out)?;
            Ok(RecipeOutput::AdcRetrain(res))
        }
        Recipe::Vat => {
            let res = seeds
                .iter()
                .map(|&s| lab.vat(s))
                .collect::<Result<Vec<_>>>()?;
            write_vat(lab, &res, out)?;
            Ok(RecipeOutput::Vat(res))
        }
        Recipe::WeightNoise => {
            let res = seeds
                .iter()
                .map(|&s| lab.weight_noise(s))
                .collect::<Result<Vec<_>>>()?;
            write_weight_noise(lab, &res, out)?;
            Ok(RecipeOutput::WeightNoise(res))
        }
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    mean_std(&v).0
}

fn seed_dir(seed: u64) -> String {
    format!("seed_{seed}")
}

fn write_adc_retrain(lab: &mut Lab, res: &[AdcRetrainSeed], out: &RunDir) -> Result<()> {
    lab.cco_curve()?
        .write_csv(out.create_file("cco_curve.csv")?)
        .map_err(HarnessError::model)?;
    lab.sar_curve()?
        .write_csv(out.create_file("sar_curve.csv")?)
        .map_err(HarnessError::model)?;
    let mut per_seed = Table::new("", &["seed", "scheme", "no_rt", "rt"]);
    for r in res {
        for m in &r.models {
            m.save(out, &seed_dir(r.seed))?;
        }
        for row in &r.rows {
            per_seed.push(vec![
                r.seed.to_string(),
                row.scheme.clone(),
                fmt_acc(row.no_rt),
                fmt_acc(row.rt),
            ]);
        }
    }
    per_seed.write_csv(out.create_file("per_seed.csv")?)?;
    let inl = res.first().map_or(0.0, |r| r.cco_max_abs_inl);
    let mut table = Table::new(
        &format!(
            "Test accuracy (%) of different ADCs, mean of {} seed(s); CCO max|INL| {:.2} LSB",
            res.len(),
            inl
        ),
        &["adc_scheme", "without_rt", "with_rt"],
    );
    if let Some(first) = res.first() {
        for row in &first.rows {
            let s = &row.scheme;
            table.push(vec![
                s.clone(),
                fmt_acc(mean(res.iter().map(|r| r.row(s).no_rt))),
                fmt_acc(mean(res.iter().map(|r| r.row(s).rt))),
            ]);
        }
    }
    out.write_table("summary", &table)
}

fn write_vat(lab: &mut Lab, res: &[VatSeed], out: &RunDir) -> Result<()> {
    let width = lab.cfg.training.vat.bin_width;
    let mut per_curve = Table::new("", &["seed", "model", "curve", "accuracy"]);
    let mut hist = Table::new("", &["seed", "model", "bin_lo", "bin_hi", "count"]);
    let mut table = Table::new(
        &format!(
            "Accuracy (%) over {} held-out CCO curves",
            lab.cfg.training.vat.heldout
        ),
        &["seed", "model", "mean", "std", "min", "max"],
    );
    for r in res {
        for m in &r.models {
            m.save(out, &seed_dir(r.seed))?;
        }
        for (name, e) in &r.evals {
            for (k, a) in e.accuracies.iter().enumerate() {
                per_curve.push(vec![
                    r.seed.to_string(),
                    name.clone(),
                    k.to_string(),
                    fmt_acc(*a),
                ]);
            }
            for (lo, hi, n) in histogram(&e.accuracies, width) {
                hist.push(vec![
                    r.seed.to_string(),
                    name.clone(),
                    f2(lo),
                    f2(hi),
                    n.to_string(),
                ]);
            }
            table.push(vec![
                r.seed.to_string(),
                name.clone(),
                fmt_acc(e.mean),
                fmt_std(e.std),
                fmt_acc(e.min),
                fmt_acc(e.max),
            ]);
        }
    }
    if let Some(first) = res.first() {
        for (name, _) in &first.evals {
            table.push(vec![
                "mean".into(),
                name.clone(),
                fmt_acc(mean(res.iter().map(|r| r.eval(name).mean))),
                fmt_std(mean(res.iter().map(|r| r.eval(name).std))),
                fmt_acc(mean(res.iter().map(|r| r.eval(name).min))),
                fmt_acc(mean(res.iter().map(|r| r.eval(name).max))),
            ]);
        }
    }
    per_curve.write_csv(out.create_file("per_curve.csv")?)?;
    hist.write_csv(out.create_file("histogram.csv")?)?;
    out.write_table("summary", &table)
}

fn write_weight_noise(lab: &mut Lab, res: &[NoiseSeed], out: &RunDir) -> Result<()> {
    let mut per_seed = Table::new("", &["seed", "condition", "accuracy"]);
    for r in res {
        for m in &r.models {
            m.save(out, &seed_dir(r.seed))?;
        }
        for row in &r.rows {
            per_seed.push(vec![
                r.seed.to_string(),
                row.condition.clone(),
                fmt_acc(row.accuracy),
            ]);
        }
    }
    per_seed.write_csv(out.create_file("per_seed.csv")?)?;
    let mut table = Table::new(
        &format!(
            "Weight noise gamma = {} in training, mean of {} seed(s)",
            lab.cfg.training.noise_gamma,
            res.len()
        ),
        &["condition", "accuracy"],
    );
    if let Some(first) = res.first() {
        for row in &first.rows {
            let c = &row.condition;
            table.push(vec![
                c.clone(),
                fmt_acc(mean(res.iter().map(|r| r.accuracy(c)))),
            ]);
        }
    }
    out.write_table("summary", &table)
}

/// Mean accuracy of a sweep point over seeds.
pub fn sweep_mean(res: &[SweepSeed], weight_bits: u32, act_bits: u32) -> f64 {
    mean(res.iter().flat_map(|r| {
        r.points
            .iter()
            .filter(move |p| p.weight_bits == weight_bits && p.act_bits == act_bits)
            .map(|p| p.test_acc)
    }))
}

fn write_sweep(lab: &mut Lab, res: &[SweepSeed], out: &RunDir) -> Result<()> {
    let sw = &lab.cfg.training.sweep;
    let mut per_seed = Table::new("", &["seed", "weight_bits", "act_bits", "test_acc"]);
    for r in res {
        for m in &r.models {
            m.save(out, &seed_dir(r.seed))?;
        }
        per_seed.push(vec![
            r.seed.to_string(),
            "fp32".into(),
            "fp32".into(),
            fmt_acc(r.float_acc),
        ]);
        for p in &r.points {
            per_seed.push(vec![
                r.seed.to_string(),
                p.weight_bits.to_string(),
                p.act_bits.to_string(),
                fmt_acc(p.test_acc),
            ]);
        }
    }
    per_seed.write_csv(out.create_file("per_seed.csv")?)?;
    let q = lab.cfg.quant;
    let header: Vec<String> = std::iter::once("weight_bits".to_string())
        .chain(sw.act_bits.iter().map(|a| format!("act_{a}")))
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(
        &format!(
            "Test accuracy (%) by total bits, {} weight / {} activation integer bits, mean of {} seed(s); fp32 baseline {}",
            q.weight_int_bits,
            q.act_int_bits,
            res.len(),
            fmt_acc(mean(res.iter().map(|r| r.float_acc)))
        ),
        &header_refs,
    );
    for &wb in &sw.weight_bits {
        let mut row = vec![wb.to_string()];
        row.extend(
            sw.act_bits
                .iter()
                .map(|&ab| fmt_acc(sweep_mean(res, wb, ab))),
        );
        table.push(row);
    }
    out.write_table("summary", &table)
}
