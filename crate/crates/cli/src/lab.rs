//! Training recipes: bit-width sweep, ADC retraining, variation-aware
//! training and weight noise.
//!
//! A [`Lab`] owns the dataset split and memoizes the float and
//! ideal-quantized baselines per seed, so recipes that share a seed also
//! share those models. Every non-baseline model is warm-started from the
//! ideal-quantized baseline of its seed and retrained for
//! `training.retrain_epochs`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::PathBuf;

use imc_core::adc::{
    sample_curve, sample_instance, sample_population, AdcModel, Topology, TransferCurve,
};
use imc_core::metrics::linearity;
use imc_core::qat::{
    evaluate, evaluate_curves, train, write_history, ActMode, Checkpoint, CurveSetEval, Dataset,
    Network, NoiseConfig, TrainConfig, TrainOutcome, VatPool,
};
use imc_core::quant::QuantConfig;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{f2, f4, RunDir};

/// Loads the configured dataset (the bundled copy when no path is set).
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let Some(path) = &cfg.data.path else {
        return Dataset::load_bundled().map_err(HarnessError::model);
    };
    let bytes = std::fs::read(path).map_err(|e| {
        HarnessError::Config(format!("dataset {}: {e} (run fetch-data)", path.display()))
    })?;
    let parsed = if path.extension().is_some_and(|e| e == "gz") {
        let mut text = Vec::new();
        flate2::read::GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut text)
            .map_err(|e| HarnessError::Config(format!("dataset {}: {e}", path.display())))?;
        Dataset::from_csv(text.as_slice())
    } else {
        Dataset::from_csv(bytes.as_slice())
    };
    parsed.map_err(|e| HarnessError::Config(format!("dataset {}: {e}", path.display())))
}

/// A trained model with the mode it was trained in.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub outcome: TrainOutcome,
    pub quant: QuantConfig,
    pub seed: u64,
    pub mode: String,
}

impl Model {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.outcome.net,
            self.quant,
            self.seed,
            &self.mode,
            self.outcome.history.clone(),
        )
    }

    /// Writes `<dir>/<name>.json` and `<dir>/<name>_history.csv`.
    pub fn save(&self, out: &RunDir, dir: &str) -> Result<()> {
        let sub = out.subdir(dir)?;
        self.checkpoint()
            .save(&sub.join(format!("{}.json", self.name)))
            .map_err(HarnessError::model)?;
        let f = out.create_file(&format!("{dir}/{}_history.csv", self.name))?;
        write_history(&self.outcome.history, f).map_err(HarnessError::model)
    }
}

pub struct Lab<'a> {
    pub cfg: &'a ExperimentConfig,
    pub train_set: Dataset,
    pub test_set: Dataset,
    /// Where a diverged run leaves its last good checkpoint.
    pub failure_dir: PathBuf,
    float: BTreeMap<u64, Model>,
    ideal: BTreeMap<u64, Model>,
    pool: Option<Vec<TransferCurve>>,
    heldout: Option<Vec<TransferCurve>>,
}

impl<'a> Lab<'a> {
    pub fn new(cfg: &'a ExperimentConfig, failure_dir: PathBuf) -> Result<Self> {
        let data = load_dataset(cfg)?;
        let (train_set, test_set) = data.split();
        Ok(Self {
            cfg,
            train_set,
            test_set,
            failure_dir,
            float: BTreeMap::new(),
            ideal: BTreeMap::new(),
            pool: None,
            heldout: None,
        })
    }

    pub fn quant(&self) -> QuantConfig {
        self.cfg.quant
    }

    fn scratch_cfg(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.cfg.training.train
        }
    }

    fn retrain_cfg(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            epochs: self.cfg.training.retrain_epochs,
            lr: self.cfg.training.retrain_lr,
            ..self.cfg.training.train
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn fit(
        &self,
        name: &str,
        net: Network,
        quant: QuantConfig,
        mode: &mut ActMode,
        noise: &NoiseConfig,
        tcfg: &TrainConfig,
    ) -> Result<Model> {
        let mode_name = mode.name().to_string();
        let outcome = train(
            net,
            &self.train_set,
            &self.test_set,
            &quant,
            mode,
            noise,
            tcfg,
        )
        .map_err(|e| {
            HarnessError::from_training(
                e,
                self.failure_dir
                    .join(format!("{name}_seed{}_last_good.json", tcfg.seed)),
            )
        })?;
        Ok(Model {
            name: name.to_string(),
            outcome,
            quant,
            seed: tcfg.seed,
            mode: mode_name,
        })
    }

    fn fresh(&self, seed: u64) -> Result<Network> {
        Network::init(self.cfg.training.arch.layers(), seed).map_err(HarnessError::model)
    }

    /// Float ReLU model trained from scratch.
    pub fn float_model(&mut self, seed: u64) -> Result<&Model> {
        if !self.float.contains_key(&seed) {
            let m = self.fit(
                "float",
                self.fresh(seed)?,
                self.quant(),
                &mut ActMode::IdealReluFloat,
                &NoiseConfig::default(),
                &self.scratch_cfg(seed),
            )?;
            self.float.insert(seed, m);
        }
        Ok(&self.float[&seed])
    }

    /// Ideal-quantized model trained from scratch: the baseline.
    pub fn ideal_model(&mut self, seed: u64) -> Result<&Model> {
        if !self.ideal.contains_key(&seed) {
            let m = self.fit(
                "ideal_quantized",
                self.fresh(seed)?,
                self.quant(),
                &mut ActMode::IdealQuantized,
                &NoiseConfig::default(),
                &self.scratch_cfg(seed),
            )?;
            self.ideal.insert(seed, m);
        }
        Ok(&self.ideal[&seed])
    }

    fn act_bits(&self) -> u32 {
        self.quant().act_format().magnitude_bits()
    }

    fn curve_of(&self, model: &AdcModel) -> Result<TransferCurve> {
        sample_curve(model, self.cfg.adc.n_points).map_err(HarnessError::model)
    }

    /// The fixed non-ideal CCO used by `adc-retrain` (no mismatch).
    pub fn cco_curve(&self) -> Result<TransferCurve> {
        let t = &self.cfg.training;
        let template =
            self.cfg
                .adc
                .template_of(Topology::Cco, self.act_bits(), self.cfg.adc.i_max)?;
        let AdcModel::Cco(c) = template else {
            unreachable!("cco template")
        };
        let c = c
            .at_supply(t.cco_supply_scale)
            .and_then(|c| c.with_nl_coeff(t.cco_nl_coeff))
            .map_err(|e| HarnessError::Config(format!("training cco curve: {e}")))?;
        self.curve_of(&AdcModel::Cco(c))
    }

    /// One Monte-Carlo SAR instance at nominal supply.
    pub fn sar_curve(&self) -> Result<TransferCurve> {
        let template =
            self.cfg
                .adc
                .template_of(Topology::Sar, self.act_bits(), self.cfg.adc.i_max)?;
        let inst = sample_instance(&template, &self.cfg.variation, 1.0, self.cfg.seed)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.curve_of(&inst)
    }

    fn cco_population(&self, base_seed: u64, count: usize) -> Result<Vec<TransferCurve>> {
        let template =
            self.cfg
                .adc
                .template_of(Topology::Cco, self.act_bits(), self.cfg.adc.i_max)?;
        let pop = sample_population(
            &template,
            &self.cfg.variation,
            self.cfg.training.vat.supply_scale,
            base_seed,
            count,
        )
        .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.cfg
            .adc
            .pin_nl(pop)?
            .iter()
            .map(|m| self.curve_of(m))
            .collect()
    }

    /// Training pool of CCO Monte-Carlo curves.
    pub fn vat_pool(&mut self) -> Result<&[TransferCurve]> {
        if self.pool.is_none() {
            let v = &self.cfg.training.vat;
            self.pool = Some(self.cco_population(v.pool_seed, v.pool_size)?);
        }
        Ok(self.pool.as_deref().unwrap())
    }

    /// Held-out CCO curves (disjoint seeds from the pool).
    pub fn heldout(&mut self) -> Result<&[TransferCurve]> {
        if self.heldout.is_none() {
            let v = &self.cfg.training.vat;
            self.heldout = Some(self.cco_population(v.heldout_seed, v.heldout)?);
        }
        Ok(self.heldout.as_deref().unwrap())
    }

    pub fn eval(
        &self,
        net: &Network,
        mode: &ActMode,
        noise: &NoiseConfig,
        seed: u64,
    ) -> Result<f64> {
        evaluate(net, &self.test_set, mode, &self.quant(), noise, seed).map_err(HarnessError::model)
    }

    pub fn eval_curves(
        &self,
        net: &Network,
        curves: &[TransferCurve],
        noise: &NoiseConfig,
        seed: u64,
    ) -> Result<CurveSetEval> {
        evaluate_curves(
            net,
            &self.test_set,
            curves,
            &self.quant(),
            noise,
            seed,
            self.cfg.jobs,
        )
        .map_err(HarnessError::model)
    }

    /// Retraining comparison for one seed: float, ideal-quantized, and each
    /// converter curve without and with retraining.
    pub fn adc_retrain(&mut self, seed: u64) -> Result<AdcRetrainSeed> {
        let none = NoiseConfig::default();
        let float = self.float_model(seed)?.clone();
        let ideal = self.ideal_model(seed)?.clone();
        let float_acc = float.outcome.final_test_acc();
        let float_as_q = self.eval(&float.outcome.net, &ActMode::IdealQuantized, &none, seed)?;
        let ideal_acc = ideal.outcome.final_test_acc();
        let mut rows = vec![
            SchemeRow::new("ideal_fp32_relu", float_acc, float_acc),
            SchemeRow::new("ideal_7bit", float_as_q, ideal_acc),
        ];
        let mut models = vec![float, ideal.clone()];
        let cco = self.cco_curve()?;
        let cco_inl = linearity(&cco)
            .map_err(|e| HarnessError::Numerical(e.to_string()))?
            .max_abs_inl;
        for (scheme, curve) in [("sar_7bit", self.sar_curve()?), ("cco_7bit", cco)] {
            let mut mode = ActMode::FixedCurve(curve);
            let no_rt = self.eval(&ideal.outcome.net, &mode, &none, seed)?;
            let rt = self.fit(
                &format!("{scheme}_retrained"),
                ideal.outcome.net.clone(),
                self.quant(),
                &mut mode,
                &none,
                &self.retrain_cfg(seed),
            )?;
            rows.push(SchemeRow::new(scheme, no_rt, rt.outcome.final_test_acc()));
            models.push(rt);
        }
        Ok(AdcRetrainSeed {
            seed,
            rows,
            cco_max_abs_inl: cco_inl,
            models,
        })
    }

    /// Variation-aware comparison for one seed: single-curve vs pool training, both
    /// evaluated on every held-out curve.
    pub fn vat(&mut self, seed: u64) -> Result<VatSeed> {
        let noise = self.cfg.noise;
        let ideal = self.ideal_model(seed)?.clone();
        let pool = self.vat_pool()?.to_vec();
        let heldout = self.heldout()?.to_vec();
        let single_index = (seed % pool.len() as u64) as usize;
        let single = self.fit(
            "single_curve",
            ideal.outcome.net.clone(),
            self.quant(),
            &mut ActMode::FixedCurve(pool[single_index].clone()),
            &noise,
            &self.retrain_cfg(seed),
        )?;
        let vat = self.fit(
            "vat",
            ideal.outcome.net.clone(),
            self.quant(),
            &mut ActMode::VatPool(VatPool::new(pool, self.cfg.training.vat.policy)),
            &noise,
            &self.retrain_cfg(seed),
        )?;
        let evals = [
            ("ideal_quantized", &ideal),
            ("single_curve", &single),
            ("vat", &vat),
        ]
        .into_iter()
        .map(|(name, m)| {
            Ok((
                name.to_string(),
                self.eval_curves(&m.outcome.net, &heldout, &noise, seed)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
        Ok(VatSeed {
            seed,
            single_index,
            evals,
            models: vec![single, vat],
        })
    }

    /// Weight-noise comparison for one seed, with ideal and CCO readouts.
    pub fn weight_noise(&mut self, seed: u64) -> Result<NoiseSeed> {
        let g = NoiseConfig {
            gamma: self.cfg.training.noise_gamma,
        };
        let none = NoiseConfig::default();
        let ideal = self.ideal_model(seed)?.clone();
        let pool = self.vat_pool()?.to_vec();
        let heldout = self.heldout()?.to_vec();
        let single = pool[(seed % pool.len() as u64) as usize].clone();
        let rcfg = self.retrain_cfg(seed);

        let base = self.eval(&ideal.outcome.net, &ActMode::IdealQuantized, &none, seed)?;
        let untrained = self.eval(&ideal.outcome.net, &ActMode::IdealQuantized, &g, seed)?;
        let mut ideal_mode = ActMode::IdealQuantized;
        let ideal_g = self.fit(
            "ideal_noise",
            ideal.outcome.net.clone(),
            self.quant(),
            &mut ideal_mode,
            &g,
            &rcfg,
        )?;
        let ideal_g_acc = self.eval(&ideal_g.outcome.net, &ideal_mode, &g, seed)?;
        let mut cco_mode = ActMode::FixedCurve(single);
        let cco_g = self.fit(
            "cco_noise",
            ideal.outcome.net.clone(),
            self.quant(),
            &mut cco_mode,
            &g,
            &rcfg,
        )?;
        let cco_g_acc = self.eval(&cco_g.outcome.net, &cco_mode, &g, seed)?;
        let mut vat_mode = ActMode::VatPool(VatPool::new(pool, self.cfg.training.vat.policy));
        let vat_g = self.fit(
            "cco_vat_noise",
            ideal.outcome.net.clone(),
            self.quant(),
            &mut vat_mode,
            &g,
            &rcfg,
        )?;
        let vat_pool_acc = self.eval(&vat_g.outcome.net, &vat_mode, &g, seed)?;
        let vat_heldout = self.eval_curves(&vat_g.outcome.net, &heldout, &g, seed)?;
        let gs = format!("{}", g.gamma);
        Ok(NoiseSeed {
            seed,
            rows: vec![
                ConditionRow::new("ideal_adc_gamma0", base),
                ConditionRow::new(&format!("ideal_adc_gamma{gs}_no_noise_training"), untrained),
                ConditionRow::new(&format!("ideal_adc_gamma{gs}"), ideal_g_acc),
                ConditionRow::new(&format!("cco_adc_gamma{gs}"), cco_g_acc),
                ConditionRow::new(&format!("cco_adc_vat_gamma{gs}_pool"), vat_pool_acc),
                ConditionRow::new(
                    &format!("cco_adc_vat_gamma{gs}_heldout_mean"),
                    vat_heldout.mean,
                ),
            ],
            models: vec![ideal_g, cco_g, vat_g],
        })
    }

    /// Bit-width sweep for one seed: ideal-quantized training from scratch
    /// at every (weight, activation) total width.
    pub fn bitwidth_sweep(&mut self, seed: u64) -> Result<SweepSeed> {
        let float_acc = self.float_model(seed)?.outcome.final_test_acc();
        let sw = self.cfg.training.sweep.clone();
        let mut points = Vec::new();
        let mut models = Vec::new();
        for &wb in &sw.weight_bits {
            for &ab in &sw.act_bits {
                let q = QuantConfig {
                    weight_total_bits: wb,
                    act_total_bits: ab,
                    ..self.quant()
                };
                q.validate()
                    .map_err(|e| HarnessError::Config(format!("sweep w{wb}/a{ab}: {e}")))?;
                let m = if q == self.quant() {
                    let mut m = self.ideal_model(seed)?.clone();
                    m.name = format!("w{wb}_a{ab}");
                    m
                } else {
                    self.fit(
                        &format!("w{wb}_a{ab}"),
                        self.fresh(seed)?,
                        q,
                        &mut ActMode::IdealQuantized,
                        &NoiseConfig::default(),
                        &self.scratch_cfg(seed),
                    )?
                };
                points.push(SweepPoint {
                    weight_bits: wb,
                    act_bits: ab,
                    test_acc: m.outcome.final_test_acc(),
                });
                models.push(m);
            }
        }
        Ok(SweepSeed {
            seed,
            float_acc,
            points,
            models,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRow {
    pub scheme: String,
    pub no_rt: f64,
    pub rt: f64,
}

impl SchemeRow {
    fn new(scheme: &str, no_rt: f64, rt: f64) -> Self {
        Self {
            scheme: scheme.to_string(),
            no_rt,
            rt,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdcRetrainSeed {
    pub seed: u64,
    /// `ideal_fp32_relu`, `ideal_7bit`, `sar_7bit`, `cco_7bit`.
    pub rows: Vec<SchemeRow>,
    pub cco_max_abs_inl: f64,
    pub models: Vec<Model>,
}

impl AdcRetrainSeed {
    pub fn row(&self, scheme: &str) -> &SchemeRow {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme)
            .unwrap_or_else(|| panic!("no row {scheme}"))
    }
}

#[derive(Debug, Clone)]
pub struct VatSeed {
    pub seed: u64,
    pub single_index: usize,
    /// `ideal_quantized`, `single_curve`, `vat` on the held-out curves.
    pub evals: Vec<(String, CurveSetEval)>,
    pub models: Vec<Model>,
}

impl VatSeed {
    pub fn eval(&self, model: &str) -> &CurveSetEval {
        &self
            .evals
            .iter()
            .find(|(n, _)| n == model)
            .unwrap_or_else(|| panic!("no model {model}"))
            .1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub condition: String,
    pub accuracy: f64,
}

impl ConditionRow {
    fn new(condition: &str, accuracy: f64) -> Self {
        Self {
            condition: condition.to_string(),
            accuracy,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseSeed {
    pub seed: u64,
    pub rows: Vec<ConditionRow>,
    pub models: Vec<Model>,
}

impl NoiseSeed {
    pub fn accuracy(&self, prefix: &str) -> f64 {
        self.rows
            .iter()
            .find(|r| r.condition == prefix)
            .unwrap_or_else(|| panic!("no condition {prefix}"))
            .accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub weight_bits: u32,
    pub act_bits: u32,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct SweepSeed {
    pub seed: u64,
    pub float_acc: f64,
    pub points: Vec<SweepPoint>,
    pub models: Vec<Model>,
}

/// Histogram of accuracies on fixed `width`-point bins aligned to 0.
pub fn histogram(values: &[f64], width: f64) -> Vec<(f64, f64, usize)> {
    if values.is_empty() {
        return Vec::new();
    }
    let bin = |v: f64| (v / width).floor() as i64;
    let lo = values.iter().map(|&v| bin(v)).min().unwrap();
    let hi = values.iter().map(|&v| bin(v)).max().unwrap();
    (lo..=hi)
        .map(|b| {
            let count = values.iter().filter(|&&v| bin(v) == b).count();
            (b as f64 * width, (b + 1) as f64 * width, count)
        })
        .collect()
}

pub fn fmt_acc(x: f64) -> String {
    f2(x)
}

pub fn fmt_std(x: f64) -> String {
    f4(x)
}
