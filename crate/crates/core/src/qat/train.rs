//! Training loop and evaluation.
//!
//! Accuracies are percentages of correctly classified samples.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::act::{draw_assignment, ActMode, Readout, ReassignmentPolicy};
use super::checkpoint::Checkpoint;
use super::data::{Dataset, N_CLASSES};
use super::network::{argmax, softmax_xent, Network};
use super::{perturb, NoiseConfig, QatError, Result};
use crate::adc::TransferCurve;
use crate::metrics::mean_std;
use crate::quant::{FixedFormat, QuantConfig};

/// Samples per noise/allocation draw during evaluation.
const EVAL_BATCH: usize = 32;
/// Separates the training stream from the initialization stream.
const TRAIN_STREAM: u64 = 0x7261_696e;
const EVAL_STREAM: u64 = 0x6576_616c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to zero over the run.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            schedule: LrSchedule::Cosine,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(QatError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(QatError::Config(format!(
                "need lr > 0 and momentum in [0, 1), got {} and {}",
                self.lr, self.momentum
            )));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                0.5 * self.lr * (1.0 + (PI * epoch as f64 / self.epochs as f64).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub mode: String,
}

/// `epoch,train_acc,test_acc,mode`.
pub fn write_history<W: Write>(rows: &[HistoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub history: Vec<HistoryRow>,
}

impl TrainOutcome {
    pub fn final_test_acc(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.test_acc)
    }
}

fn prepare_inputs(data: &Dataset, act: &FixedFormat, quantized: bool) -> Vec<f32> {
    if quantized {
        data.images
            .iter()
            .map(|&p| act.quantize(p as f64) as f32)
            .collect()
    } else {
        data.images.clone()
    }
}

fn effective_weights(net: &Network, wfmt: &FixedFormat, quantized: bool) -> Vec<Vec<f32>> {
    if quantized {
        net.quantized_weights(wfmt)
    } else {
        net.weights.clone()
    }
}

/// Trains `net` in place of a copy and returns it with its history.
///
/// Each mini-batch: derive effective weights (quantize, then perturb),
/// re-draw the curve allocation if the pool policy asks for it, run
/// forward/backward per sample, and apply momentum SGD to the shadow
/// weights. Test accuracy is measured after every epoch in the same mode.
pub fn train(
    mut net: Network,
    train_set: &Dataset,
    test_set: &Dataset,
    qcfg: &QuantConfig,
    mode: &mut ActMode,
    noise: &NoiseConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    qcfg.validate()?;
    noise.validate()?;
    let wfmt = qcfg.weight_format();
    let afmt = qcfg.act_format();
    mode.validate(&afmt)?;
    if train_set.is_empty() {
        return Err(QatError::Data("empty training set".into()));
    }
    let quantized = mode.is_quantized();
    let float_mode = !quantized;
    let inputs = prepare_inputs(train_set, &afmt, quantized);
    let px = Dataset::PIXELS;
    let channels = net.adc_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM);
    if let ActMode::VatPool(p) = mode {
        p.reassign(&channels, &mut rng);
    }

    let mut ws = net.workspace();
    let mut grads = net.zero_gradients();
    let mut vel = net.zero_gradients();
    let mut d_logits = vec![0.0f32; N_CLASSES];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mode_name = mode.name().to_string();

    for epoch in 0..cfg.epochs {
        let last_good = net.clone();
        order.shuffle(&mut rng);
        if let ActMode::VatPool(p) = mode {
            if p.policy == ReassignmentPolicy::PerEpoch && epoch > 0 {
                p.reassign(&channels, &mut rng);
            }
        }
        let lr = cfg.lr_at(epoch) as f32;
        let mu = cfg.momentum as f32;
        let mut correct = 0usize;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            if let ActMode::VatPool(p) = mode {
                if p.policy == ReassignmentPolicy::PerIteration && (epoch, bi) != (0, 0) {
                    p.reassign(&channels, &mut rng);
                }
            }
            let mut eff = effective_weights(&net, &wfmt, quantized);
            eff.iter_mut()
                .for_each(|w| perturb(w, noise.gamma, &mut rng));
            grads.zero();
            let readout = mode.readout();
            let mut loss = 0.0f32;
            for &i in batch {
                let label = train_set.labels[i] as usize;
                let logits =
                    net.forward(&eff, &inputs[i * px..(i + 1) * px], &afmt, readout, &mut ws);
                correct += (argmax(logits) == label) as usize;
                loss += softmax_xent(logits, label, &mut d_logits);
                net.backward(&eff, &d_logits, &afmt, float_mode, &mut ws, &mut grads);
            }
            if !loss.is_finite() {
                let ck = Checkpoint::new(&last_good, *qcfg, cfg.seed, &mode_name, history);
                return Err(QatError::Diverged {
                    epoch: epoch + 1,
                    batch: bi,
                    last_good: Box::new(ck),
                });
            }
            let scale = 1.0 / batch.len() as f32;
            let params = net.weights.iter_mut().chain(net.biases.iter_mut());
            let g_all = grads.weights.iter().chain(&grads.biases);
            let v_all = vel.weights.iter_mut().chain(vel.biases.iter_mut());
            for ((p, g), v) in params.zip(g_all).zip(v_all) {
                for ((pp, gg), vv) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vv = mu * *vv + gg * scale;
                    *pp -= lr * *vv;
                }
            }
            if quantized {
                net.clamp_weights(&wfmt);
            }
        }
        let train_acc = 100.0 * correct as f64 / train_set.len() as f64;
        let test_acc = evaluate(
            &net,
            test_set,
            mode,
            qcfg,
            noise,
            cfg.seed.wrapping_add(epoch as u64),
        )?;
        history.push(HistoryRow {
            epoch: epoch + 1,
            train_acc,
            test_acc,
            mode: mode_name.clone(),
        });
    }
    Ok(TrainOutcome { net, history })
}

/// Classification accuracy of `net` in `mode`.
///
/// Weight noise and (for a curve pool) the per-channel allocation are
/// re-drawn for every group of 32 samples, seeded by `seed`.
pub fn evaluate(
    net: &Network,
    data: &Dataset,
    mode: &ActMode,
    qcfg: &QuantConfig,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<f64> {
    qcfg.validate()?;
    noise.validate()?;
    let afmt = qcfg.act_format();
    mode.validate(&afmt)?;
    if data.is_empty() {
        return Err(QatError::Data("empty evaluation set".into()));
    }
    let quantized = mode.is_quantized();
    let inputs = prepare_inputs(data, &afmt, quantized);
    let base = effective_weights(net, &qcfg.weight_format(), quantized);
    let channels = net.adc_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_STREAM);
    let mut ws = net.workspace();
    let px = Dataset::PIXELS;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for batch in idx.chunks(EVAL_BATCH) {
        let assignment;
        let readout = match mode {
            ActMode::VatPool(p) => {
                assignment = draw_assignment(p.curves.len(), &channels, &mut rng);
                Readout::Pool {
                    curves: &p.curves,
                    assignment: &assignment,
                }
            }
            m => m.readout(),
        };
        let noisy;
        let eff = if noise.gamma > 0.0 {
            let mut w = base.clone();
            w.iter_mut().for_each(|v| perturb(v, noise.gamma, &mut rng));
            noisy = w;
            &noisy
        } else {
            &base
        };
        for &i in batch {
            let logits = net.forward(eff, &inputs[i * px..(i + 1) * px], &afmt, readout, &mut ws);
            correct += (argmax(logits) == data.labels[i] as usize) as usize;
        }
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Accuracy distribution over a set of curves, each driving every ADC.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSetEval {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl CurveSetEval {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&accuracies);
        let min = accuracies.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            accuracies,
            mean,
            std,
            min,
            max,
        }
    }
}

/// Evaluates `net` once per curve. Curve `k` uses evaluation seed
/// `seed + k`; work is spread over `jobs` threads without affecting results.
pub fn evaluate_curves(
    net: &Network,
    data: &Dataset,
    curves: &[TransferCurve],
    qcfg: &QuantConfig,
    noise: &NoiseConfig,
    seed: u64,
    jobs: usize,
) -> Result<CurveSetEval> {
    if curves.is_empty() {
        return Err(QatError::Config("empty curve set".into()));
    }
    let jobs = jobs.clamp(1, curves.len());
    let run = |k: usize| {
        evaluate(
            net,
            data,
            &ActMode::FixedCurve(curves[k].clone()),
            qcfg,
            noise,
            seed.wrapping_add(k as u64),
        )
    };
    let results: Vec<Result<f64>> = if jobs == 1 {
        (0..curves.len()).map(run).collect()
    } else {
        let mut slots: Vec<Option<Result<f64>>> = (0..curves.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let run = &run;
                    s.spawn(move || {
                        (j..curves.len())
                            .step_by(jobs)
                            .map(|k| (k, run(k)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (k, r) in h.join().expect("evaluation worker panicked") {
                    slots[k] = Some(r);
                }
            }
        });
        slots
            .into_iter()
            .map(|r| r.expect("every curve evaluated"))
            .collect()
    };
    let accuracies = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CurveSetEval::from_accuracies(accuracies))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adc::{sample_curve, AdcModel};
    use crate::qat::{Architecture, VatPool};

    fn small() -> (Dataset, Dataset) {
        let d = Dataset::load_bundled().unwrap();
        let (tr, te) = d.split();
        let pick = |d: &Dataset, n: usize| d.subset(&(0..n).collect::<Vec<_>>());
        (pick(&tr, 300), pick(&te, 100))
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (tr, te) = small();
        let q = QuantConfig::default();
        let run = || {
            let net = Network::init(Architecture::default().layers(), 1).unwrap();
            train(
                net,
                &tr,
                &te,
                &q,
                &mut ActMode::IdealQuantized,
                &NoiseConfig { gamma: 0.05 },
                &quick(),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.net, b.net);
        assert!(a.final_test_acc() > 50.0, "{:?}", a.history);
        let mut buf = Vec::new();
        write_history(&a.history, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("epoch,train_acc,test_acc,mode\n1,"));
    }

    #[test]
    fn shadow_weights_stay_in_format_range() {
        let (tr, te) = small();
        let q = QuantConfig::default();
        let net = Network::init(Architecture::default().layers(), 2).unwrap();
        let cfg = TrainConfig { lr: 0.5, ..quick() };
        let out = train(
            net,
            &tr,
            &te,
            &q,
            &mut ActMode::IdealQuantized,
            &NoiseConfig::default(),
            &cfg,
        )
        .unwrap();
        let hi = q.weight_format().max_value() as f32;
        assert!(out.net.weights.iter().flatten().all(|w| w.abs() <= hi));
    }

    #[test]
    fn divergence_is_reported() {
        let (tr, te) = small();
        let net = Network::init(Architecture::default().layers(), 3).unwrap();
        let cfg = TrainConfig {
            lr: 1e30,
            momentum: 0.0,
            schedule: LrSchedule::Constant,
            ..quick()
        };
        let err = train(
            net,
            &tr,
            &te,
            &QuantConfig::default(),
            &mut ActMode::IdealReluFloat,
            &NoiseConfig::default(),
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, QatError::Diverged { .. }), "{err}");
    }

    #[test]
    fn vat_pool_covers_every_curve_in_one_epoch() {
        let d = Dataset::load_bundled().unwrap();
        let (tr, te) = d.split();
        let te = te.subset(&[0, 1, 2]);
        let curve = sample_curve(&AdcModel::ideal(7, 1.0).unwrap(), 512).unwrap();
        let pool = VatPool::new(vec![curve; 200], ReassignmentPolicy::PerIteration);
        let mut mode = ActMode::VatPool(pool);
        let net = Network::init(Architecture::default().layers(), 4).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        train(
            net,
            &tr,
            &te,
            &QuantConfig::default(),
            &mut mode,
            &NoiseConfig::default(),
            &cfg,
        )
        .unwrap();
        let ActMode::VatPool(p) = mode else {
            unreachable!()
        };
        assert!(p.usage.iter().sum::<u64>() >= 2000);
        assert!(p.covers_all());
    }

    #[test]
    fn curve_set_evaluation_is_job_independent() {
        let (_, te) = small();
        let net = Network::init(Architecture::default().layers(), 5).unwrap();
        let ideal = sample_curve(&AdcModel::ideal(7, 1.0).unwrap(), 2048).unwrap();
        let curves = vec![ideal.clone(), ideal.shifted(3), ideal.shifted(-2)];
        let q = QuantConfig::default();
        let noise = NoiseConfig { gamma: 0.1 };
        let a = evaluate_curves(&net, &te, &curves, &q, &noise, 9, 1).unwrap();
        let b = evaluate_curves(&net, &te, &curves, &q, &noise, 9, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.accuracies.len(), 3);
    }
}
