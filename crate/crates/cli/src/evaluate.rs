//! `evaluate`: accuracy of a saved checkpoint under a chosen readout.

use imc_core::adc::read_population;
use imc_core::qat::{evaluate, evaluate_curves, ActMode, Checkpoint, VatPool};

use crate::config::{EvalMode, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::lab::{fmt_acc, fmt_std, load_dataset};
use crate::output::{RunDir, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    /// Mean accuracy (the single accuracy outside `curves` mode).
    pub accuracy: f64,
    pub per_curve: Vec<f64>,
}

pub fn run(cfg: &ExperimentConfig, out: &RunDir) -> Result<EvalReport> {
    let ev = &cfg.evaluate;
    let path = ev
        .checkpoint
        .as_ref()
        .ok_or_else(|| HarnessError::Config("evaluate.checkpoint is not set".into()))?;
    let ck = Checkpoint::load(path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let net = ck
        .network()
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let (_, test) = load_dataset(cfg)?.split();
    let curves = || -> Result<Vec<_>> {
        let dir = ev
            .curves
            .as_ref()
            .ok_or_else(|| HarnessError::Config("evaluate.curves is not set".into()))?;
        let (_, curves) = read_population(dir)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", dir.display())))?;
        Ok(curves)
    };
    let cfg_err = |e: imc_core::qat::QatError| HarnessError::Config(e.to_string());
    let (accuracy, per_curve) = match ev.mode {
        EvalMode::Curves => {
            let r = evaluate_curves(
                &net,
                &test,
                &curves()?,
                &ck.quant,
                &cfg.noise,
                cfg.seed,
                cfg.jobs,
            )
            .map_err(cfg_err)?;
            (r.mean, r.accuracies)
        }
        mode => {
            let act = match mode {
                EvalMode::IdealFloat => ActMode::IdealReluFloat,
                EvalMode::IdealQuantized => ActMode::IdealQuantized,
                _ => ActMode::VatPool(VatPool::new(curves()?, cfg.training.vat.policy)),
            };
            let a =
                evaluate(&net, &test, &act, &ck.quant, &cfg.noise, cfg.seed).map_err(cfg_err)?;
            (a, Vec::new())
        }
    };
    if !per_curve.is_empty() {
        let mut t = Table::new("", &["curve", "accuracy"]);
        for (k, a) in per_curve.iter().enumerate() {
            t.push(vec![k.to_string(), fmt_acc(*a)]);
        }
        t.write_csv(out.create_file("per_curve.csv")?)?;
    }
    let mode_name = toml::Value::try_from(ev.mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    let mut t = Table::new(
        &format!("{} evaluated on {} test images", path.display(), test.len()),
        &["mode", "gamma", "accuracy", "std_over_curves"],
    );
    let std = if per_curve.is_empty() {
        String::new()
    } else {
        fmt_std(imc_core::metrics::mean_std(&per_curve).1)
    };
    t.push(vec![
        mode_name,
        format!("{}", cfg.noise.gamma),
        fmt_acc(accuracy),
        std,
    ]);
    out.write_table("summary", &t)?;
    Ok(EvalReport {
        mode: ev.mode,
        accuracy,
        per_curve,
    })
}
