//! Experiment configuration: one TOML tree covering every module, with
//! `path.to.key=value` overrides applied on top of the file.

use std::fs;
use std::path::{Path, PathBuf};

use imc_core::adc::{
    AdcModel, AdcSpec, CcoAdc, NonLinearity, SarAdc, SingleSlopeAdc, Topology, VariationConfig,
};
use imc_core::calibration::CalibrationConfig;
use imc_core::crossbar::CrossbarConfig;
use imc_core::qat::{Architecture, NoiseConfig, ReassignmentPolicy, TrainConfig};
use imc_core::quant::QuantConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed: Monte-Carlo populations, random test cases, and the
    /// first training seed.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for independent sweep points.
    pub jobs: usize,
    pub data: DataConfig,
    pub adc: AdcConfig,
    pub variation: VariationConfig,
    pub characterize: CharacterizeConfig,
    pub calibration: CalibrationConfig,
    pub calibrate: CalibrateConfig,
    pub crossbar: CrossbarConfig,
    pub mvm_check: MvmCheckConfig,
    pub quant: QuantConfig,
    pub noise: NoiseConfig,
    pub training: TrainingConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            jobs: 1,
            data: DataConfig::default(),
            adc: AdcConfig::default(),
            variation: VariationConfig::default(),
            characterize: CharacterizeConfig::default(),
            calibration: CalibrationConfig::default(),
            calibrate: CalibrateConfig::default(),
            crossbar: CrossbarConfig::default(),
            mvm_check: MvmCheckConfig::default(),
            quant: QuantConfig::default(),
            noise: NoiseConfig::default(),
            training: TrainingConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Digits CSV (optionally gzip-compressed) written by `fetch-data`.
    /// Unset: the copy bundled with the library.
    pub path: Option<PathBuf>,
}

/// Converter template shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdcConfig {
    pub topology: Topology,
    pub n_bits: u32,
    /// Full-scale current, amperes.
    pub i_max: f64,
    /// CCO current-to-frequency gain, Hz/A.
    pub k_cco: f64,
    pub nonlinearity: NonLinearity,
    /// Fixed CCO compression coefficient; overrides the supply law.
    pub nl_coeff: Option<f64>,
    pub supply_scale: f64,
    /// SAR transimpedance front end, V/A.
    pub sar_frontend_gain: f64,
    /// Grid points per sampled transfer curve.
    pub n_points: usize,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            topology: Topology::Cco,
            n_bits: 7,
            i_max: 10e-6,
            k_cco: 12.8e12,
            nonlinearity: NonLinearity {
                base: 0.01,
                supply_gain: 0.1,
            },
            nl_coeff: None,
            supply_scale: 1.0,
            sar_frontend_gain: 1e5,
            n_points: 2048,
        }
    }
}

impl AdcConfig {
    fn spec(&self, n_bits: u32, i_max: f64) -> Result<AdcSpec> {
        AdcSpec::new(n_bits, i_max).map_err(|e| HarnessError::Config(format!("adc: {e}")))
    }

    /// Nominal (mismatch-free) template of `topology` at supply 1.
    pub fn template_of(&self, topology: Topology, n_bits: u32, i_max: f64) -> Result<AdcModel> {
        let spec = self.spec(n_bits, i_max)?;
        let cfg = |e: imc_core::adc::AdcError| HarnessError::Config(format!("adc: {e}"));
        Ok(match topology {
            Topology::Cco => {
                let m = CcoAdc::new(spec, self.k_cco)
                    .map_err(cfg)?
                    .with_nonlinearity(self.nonlinearity);
                AdcModel::Cco(m)
            }
            Topology::Sar => AdcModel::Sar(SarAdc::new(spec, self.sar_frontend_gain).map_err(cfg)?),
            Topology::SingleSlope => AdcModel::SingleSlope(SingleSlopeAdc::new(spec).map_err(cfg)?),
            Topology::Ideal => AdcModel::Ideal(imc_core::adc::IdealAdc::new(spec)),
        })
    }

    pub fn template(&self) -> Result<AdcModel> {
        self.template_of(self.topology, self.n_bits, self.i_max)
    }

    /// Applies the supply scale and, for a CCO, the fixed `nl_coeff`.
    pub fn at_supply(&self, model: &AdcModel, supply_scale: f64) -> Result<AdcModel> {
        let cfg = |e: imc_core::adc::AdcError| HarnessError::Config(format!("adc: {e}"));
        Ok(match model {
            AdcModel::Cco(m) => {
                let mut m = m.at_supply(supply_scale).map_err(cfg)?;
                if let Some(nl) = self.nl_coeff {
                    m = m.with_nl_coeff(nl).map_err(cfg)?;
                }
                AdcModel::Cco(m)
            }
            other => {
                if !(supply_scale > 0.0 && supply_scale <= 1.0) {
                    return Err(HarnessError::Config(format!(
                        "supply scale {supply_scale} outside (0, 1]"
                    )));
                }
                other.clone()
            }
        })
    }

    /// Re-applies the fixed `nl_coeff` to sampled instances.
    pub fn pin_nl(&self, instances: Vec<AdcModel>) -> Result<Vec<AdcModel>> {
        let Some(nl) = self.nl_coeff else {
            return Ok(instances);
        };
        instances
            .into_iter()
            .map(|m| match m {
                AdcModel::Cco(c) => c
                    .with_nl_coeff(nl)
                    .map(AdcModel::Cco)
                    .map_err(|e| HarnessError::Config(format!("adc: {e}"))),
                other => Ok(other),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizeConfig {
    pub supplies: Vec<f64>,
    /// Monte-Carlo instances per supply.
    pub mc_count: usize,
    /// Inputs (fraction of full scale) at which population spread is reported.
    pub spread_points: Vec<f64>,
    /// Write every Monte-Carlo curve, not only the manifest and summaries.
    pub write_curves: bool,
}

impl Default for CharacterizeConfig {
    fn default() -> Self {
        Self {
            supplies: vec![1.0, 0.8, 0.6],
            mc_count: 200,
            spread_points: default_spread_points(),
            write_curves: true,
        }
    }
}

/// `k / 16` for `k = 1..=16`.
pub fn default_spread_points() -> Vec<f64> {
    (1..=16).map(|k| k as f64 / 16.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateConfig {
    pub population: usize,
    pub supply_scale: f64,
    pub spread_points: Vec<f64>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            population: 200,
            supply_scale: 1.0,
            spread_points: default_spread_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvmCheckConfig {
    pub cases: usize,
    pub rows: usize,
    pub cols: usize,
    /// Resolution of the realistic readout used for saturation statistics.
    pub realistic_bits: u32,
    pub realistic_cases: usize,
}

impl Default for MvmCheckConfig {
    fn default() -> Self {
        Self {
            cases: 1000,
            rows: 16,
            cols: 16,
            realistic_bits: 7,
            realistic_cases: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    BitwidthSweep,
    AdcRetrain,
    Vat,
    WeightNoise,
}

impl Recipe {
    pub fn name(&self) -> &'static str {
        match self {
            Recipe::BitwidthSweep => "bitwidth-sweep",
            Recipe::AdcRetrain => "adc-retrain",
            Recipe::Vat => "vat",
            Recipe::WeightNoise => "weight-noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "bitwidth-sweep" => Ok(Recipe::BitwidthSweep),
            "adc-retrain" => Ok(Recipe::AdcRetrain),
            "vat" => Ok(Recipe::Vat),
            "weight-noise" => Ok(Recipe::WeightNoise),
            _ => Err(HarnessError::Config(format!(
                "unknown recipe {s:?} (bitwidth-sweep, adc-retrain, vat, weight-noise)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub recipe: Recipe,
    pub arch: Architecture,
    /// Schedule for training from scratch; its seed field is replaced by
    /// the run seed.
    pub train: TrainConfig,
    /// Number of training seeds: `seed, seed + 1, ...`.
    pub n_seeds: usize,
    /// Warm-started retraining from the ideal-quantized model.
    pub retrain_epochs: usize,
    pub retrain_lr: f64,
    /// Fixed non-ideal CCO curve for `adc-retrain`.
    pub cco_nl_coeff: f64,
    pub cco_supply_scale: f64,
    pub vat: VatConfig,
    pub sweep: SweepConfig,
    /// Weight noise of the noisy rows of `weight-noise`.
    pub noise_gamma: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            recipe: Recipe::AdcRetrain,
            arch: Architecture::default(),
            train: TrainConfig::default(),
            n_seeds: 3,
            retrain_epochs: 15,
            retrain_lr: 0.02,
            cco_nl_coeff: 0.9,
            cco_supply_scale: 1.0,
            vat: VatConfig::default(),
            sweep: SweepConfig::default(),
            noise_gamma: 0.1,
        }
    }
}

impl TrainingConfig {
    pub fn seeds(&self, base: u64) -> Vec<u64> {
        (0..self.n_seeds as u64)
            .map(|k| base.wrapping_add(k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VatConfig {
    pub pool_size: usize,
    pub heldout: usize,
    pub supply_scale: f64,
    pub policy: ReassignmentPolicy,
    pub pool_seed: u64,
    pub heldout_seed: u64,
    /// Histogram bin width, accuracy percentage points.
    pub bin_width: f64,
}

impl Default for VatConfig {
    fn default() -> Self {
        Self {
            pool_size: 200,
            heldout: 100,
            supply_scale: 0.6,
            policy: ReassignmentPolicy::PerIteration,
            pool_seed: 0,
            heldout_seed: 10_000,
            bin_width: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub weight_bits: Vec<u32>,
    pub act_bits: Vec<u32>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            weight_bits: vec![5, 6, 7, 8],
            act_bits: vec![5, 6, 7, 8],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    IdealFloat,
    IdealQuantized,
    /// Every curve of the population drives all converters, one at a time.
    Curves,
    /// The population as a per-channel pool.
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub checkpoint: Option<PathBuf>,
    pub mode: EvalMode,
    /// Population directory written by `characterize` (for `curves`/`pool`).
    pub curves: Option<PathBuf>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            mode: EvalMode::IdealQuantized,
            curves: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies `overrides`, and validates the tree.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        Self::from_table(tree)
    }

    pub fn from_table(tree: Table) -> Result<Self> {
        let defaults = Value::try_from(ExperimentConfig::default())
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut merged = defaults;
        merge(&mut merged, Value::Table(tree.clone()));
        let cfg: ExperimentConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.message().to_string()))?;
        let resolved =
            Value::try_from(cfg.clone()).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(key) = first_unknown_key(&Value::Table(tree), &resolved, "") {
            return Err(HarnessError::Config(format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if self.adc.n_points < 2 {
            return bad("adc.n_points must be at least 2".into());
        }
        self.adc.template()?;
        self.variation
            .validate()
            .map_err(|e| HarnessError::Config(format!("variation: {e}")))?;
        self.quant
            .validate()
            .map_err(|e| HarnessError::Config(format!("quant: {e}")))?;
        self.noise
            .validate()
            .map_err(|e| HarnessError::Config(format!("noise: {e}")))?;
        self.crossbar
            .validate()
            .map_err(|e| HarnessError::Config(format!("crossbar: {e}")))?;
        let t = &self.training;
        if t.n_seeds == 0 {
            return bad("training.n_seeds must be at least 1".into());
        }
        if t.vat.pool_size == 0 || t.vat.heldout == 0 {
            return bad("training.vat pool and held-out sets must be non-empty".into());
        }
        if !(t.vat.bin_width > 0.0) {
            return bad("training.vat.bin_width must be positive".into());
        }
        if self.characterize.supplies.is_empty() {
            return bad("characterize.supplies is empty".into());
        }
        if self.mvm_check.rows == 0 || self.mvm_check.cols == 0 {
            return bad("mvm_check dimensions must be positive".into());
        }
        Ok(())
    }

    /// Resolved config as TOML text (the provenance record).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Applies `a.b.c=value`. The value is parsed as a TOML literal when
/// possible (numbers, booleans, arrays, inline tables) and as a bare
/// string otherwise.
pub fn apply_override(tree: &mut Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Config(format!("bad override path {path:?}")));
    }
    let value = parse_value(raw.trim());
    let mut node = tree;
    for k in &keys[..keys.len() - 1] {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{k}` in {path:?} is not a table")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Overlays `over` onto `base`. Integers written where the default is a
/// float are widened so `i_max = 1` parses.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (Value::Array(b), Value::Array(o)) if b.first().is_some_and(|v| v.is_float()) => {
            *b = o.into_iter().map(widen).collect();
        }
        (slot @ Value::Float(_), v) => *slot = widen(v),
        (slot, v) => *slot = v,
    }
}

fn widen(v: Value) -> Value {
    match v {
        Value::Integer(i) => Value::Float(i as f64),
        other => other,
    }
}

fn first_unknown_key(input: &Value, resolved: &Value, prefix: &str) -> Option<String> {
    let (Value::Table(i), Value::Table(r)) = (input, resolved) else {
        return None;
    };
    for (k, v) in i {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match r.get(k) {
            None => return Some(path),
            Some(rv) => {
                if let Some(found) = first_unknown_key(v, rv, &path) {
                    return Some(found);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_table(text.parse().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = ExperimentConfig::load(
            None,
            &[
                "adc.supply_scale=0.8".into(),
                "training.recipe=vat".into(),
                "characterize.supplies=[1, 0.5]".into(),
                "adc.i_max=1".into(),
                "calibration.reference={kind=\"fixed\", value=40}".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.adc.supply_scale, 0.8);
        assert_eq!(cfg.training.recipe, Recipe::Vat);
        assert_eq!(cfg.characterize.supplies, vec![1.0, 0.5]);
        assert_eq!(cfg.adc.i_max, 1.0);
        assert_eq!(
            cfg.calibration.reference,
            imc_core::calibration::RefCount::Fixed(40)
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for o in ["adc.n_bitz=3", "variation.sigma_slop=0.1", "nope=1"] {
            let err = ExperimentConfig::load(None, &[o.into()]).unwrap_err();
            assert!(matches!(err, HarnessError::Config(_)), "{o}");
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for o in [
            "jobs=0",
            "adc.n_bits=0",
            "noise.gamma=-1",
            "adc.topology=flash",
            "seed=x",
        ] {
            let err = ExperimentConfig::load(None, &[o.into()]).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{o}");
        }
    }

    #[test]
    fn file_values_are_overridden() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 5\n[adc]\nn_bits = 6\n").unwrap();
        let cfg = ExperimentConfig::load(Some(&path), &["seed=9".into()]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.adc.n_bits, 6);
        assert_eq!(cfg.adc.i_max, AdcConfig::default().i_max);
    }

    #[test]
    fn recipe_names_parse() {
        for r in [
            Recipe::BitwidthSweep,
            Recipe::AdcRetrain,
            Recipe::Vat,
            Recipe::WeightNoise,
        ] {
            assert_eq!(Recipe::parse(r.name()).unwrap(), r);
        }
        assert!(Recipe::parse("other").is_err());
    }
}
