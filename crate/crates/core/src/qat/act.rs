//! ADC-in-the-loop activation.
//!
//! A pre-activation `u` is read out as a bit-line current. The current is a
//! linear function of `clamp(u, 0, FS)` where `FS = 2^N * act_LSB` is the
//! activation full scale, plus a half-LSB bias current so that the ideal
//! converter rounds to the nearest activation code instead of truncating:
//!
//! `x = min(clamp(u, 0, FS) / FS + 0.5 / 2^N, 1)`
//!
//! The converter (ideal, one transfer curve, or one curve per channel) maps
//! `x` to a code `k` and the activation output is `k * act_LSB`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{QatError, Result};
use crate::adc::TransferCurve;
use crate::quant::FixedFormat;

/// How activations are read out during a forward pass.
#[derive(Debug, Clone)]
pub enum ActMode {
    /// Float ReLU with float weights; the unquantized reference.
    IdealReluFloat,
    /// Ideal uniform ADC, quantized weights and inputs.
    IdealQuantized,
    /// Every ADC shares one transfer curve.
    FixedCurve(TransferCurve),
    /// Curves drawn from a pool and assigned per output channel.
    VatPool(VatPool),
}

impl ActMode {
    pub fn name(&self) -> &'static str {
        match self {
            ActMode::IdealReluFloat => "ideal_relu_float",
            ActMode::IdealQuantized => "ideal_quantized",
            ActMode::FixedCurve(_) => "fixed_curve",
            ActMode::VatPool(_) => "vat_pool",
        }
    }

    /// Whether weights, inputs and activations are on fixed-point grids.
    pub fn is_quantized(&self) -> bool {
        !matches!(self, ActMode::IdealReluFloat)
    }

    /// Checks every curve resolves exactly the activation codes.
    pub fn validate(&self, act: &FixedFormat) -> Result<()> {
        let check = |c: &TransferCurve| {
            if c.n_bits() != act.magnitude_bits() {
                Err(QatError::Config(format!(
                    "{}-bit transfer curve cannot drive {}-bit activations",
                    c.n_bits(),
                    act.magnitude_bits()
                )))
            } else {
                Ok(())
            }
        };
        match self {
            ActMode::FixedCurve(c) => check(c),
            ActMode::VatPool(p) => {
                if p.curves.is_empty() {
                    return Err(QatError::Config("empty curve pool".into()));
                }
                p.curves.iter().try_for_each(check)
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn readout(&self) -> Readout<'_> {
        match self {
            ActMode::IdealReluFloat => Readout::Float,
            ActMode::IdealQuantized => Readout::Ideal,
            ActMode::FixedCurve(c) => Readout::Curve(c),
            ActMode::VatPool(p) => Readout::Pool {
                curves: &p.curves,
                assignment: &p.assignment,
            },
        }
    }
}

/// Borrowed view of an [`ActMode`] used inside a forward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Readout<'a> {
    Float,
    Ideal,
    Curve(&'a TransferCurve),
    Pool {
        curves: &'a [TransferCurve],
        assignment: &'a [Vec<usize>],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReassignmentPolicy {
    /// Fresh random allocation before every mini-batch.
    PerIteration,
    /// Fresh random allocation at the start of every epoch.
    PerEpoch,
    /// One allocation for the whole run.
    Fixed,
}

/// Monte-Carlo curve pool with a per-channel allocation for every ADC layer.
#[derive(Debug, Clone)]
pub struct VatPool {
    pub curves: Vec<TransferCurve>,
    pub policy: ReassignmentPolicy,
    /// `assignment[layer][channel]` indexes `curves`.
    pub assignment: Vec<Vec<usize>>,
    /// How often each curve has been allocated.
    pub usage: Vec<u64>,
}

impl VatPool {
    pub fn new(curves: Vec<TransferCurve>, policy: ReassignmentPolicy) -> Self {
        let usage = vec![0; curves.len()];
        Self {
            curves,
            policy,
            assignment: Vec::new(),
            usage,
        }
    }

    /// Draws a curve index for every channel of every ADC layer.
    pub fn reassign<R: Rng>(&mut self, channels: &[usize], rng: &mut R) {
        self.assignment = draw_assignment(self.curves.len(), channels, rng);
        for &k in self.assignment.iter().flatten() {
            self.usage[k] += 1;
        }
    }

    pub fn curve(&self, layer: usize, channel: usize) -> &TransferCurve {
        &self.curves[self.assignment[layer][channel]]
    }

    pub fn covers_all(&self) -> bool {
        self.usage.iter().all(|&u| u > 0)
    }
}

/// Uniform random curve index for every channel of every ADC layer.
pub(crate) fn draw_assignment<R: Rng>(
    n_curves: usize,
    channels: &[usize],
    rng: &mut R,
) -> Vec<Vec<usize>> {
    channels
        .iter()
        .map(|&c| (0..c).map(|_| rng.random_range(0..n_curves)).collect())
        .collect()
}

/// Activation full scale in activation units, `2^N * LSB`.
pub fn act_full_scale(act: &FixedFormat) -> f64 {
    (act.max_code() + 1) as f64 * act.lsb()
}

/// Normalized ADC input current for pre-activation `u`.
pub fn current_fraction(u: f32, act: &FixedFormat) -> f64 {
    let levels = (act.max_code() + 1) as f64;
    let fs = act_full_scale(act);
    let u = (u as f64).clamp(0.0, fs);
    (u / fs + 0.5 / levels).min(1.0)
}

/// Ideal code: `floor(2^N x)` clamped, which equals round-to-nearest of `u`.
fn ideal_code(u: f32, act: &FixedFormat) -> u32 {
    let v = (u as f64).max(0.0) / act.lsb() + 0.5;
    v.floor().min(act.max_code() as f64) as u32
}

/// Activation code of one element through a converter.
pub fn adc_code(u: f32, act: &FixedFormat, curve: Option<&TransferCurve>) -> u32 {
    match curve {
        None => ideal_code(u, act),
        Some(c) => c.code_at(current_fraction(u, act)),
    }
}

/// Forward pass of an ADC activation over `channels` planes of `plane` elements.
pub(crate) fn adc_forward_planes(
    u: &[f32],
    out: &mut [f32],
    plane: usize,
    layer: usize,
    act: &FixedFormat,
    readout: Readout<'_>,
) {
    let lsb = act.lsb() as f32;
    match readout {
        Readout::Float => {
            for (o, &v) in out.iter_mut().zip(u) {
                *o = v.max(0.0);
            }
        }
        Readout::Ideal => {
            for (o, &v) in out.iter_mut().zip(u) {
                *o = ideal_code(v, act) as f32 * lsb;
            }
        }
        Readout::Curve(c) => {
            for (o, &v) in out.iter_mut().zip(u) {
                *o = adc_code(v, act, Some(c)) as f32 * lsb;
            }
        }
        Readout::Pool { curves, assignment } => {
            for (ch, (o_plane, u_plane)) in out.chunks_mut(plane).zip(u.chunks(plane)).enumerate() {
                let c = &curves[assignment[layer][ch]];
                for (o, &v) in o_plane.iter_mut().zip(u_plane) {
                    *o = adc_code(v, act, Some(c)) as f32 * lsb;
                }
            }
        }
    }
}

/// Forward pass with a single converter for every element.
pub fn adc_forward(u: &[f32], act: &FixedFormat, mode: &ActMode) -> Vec<f32> {
    let mut out = vec![0.0; u.len()];
    let readout = match mode {
        // A pool without a layer context uses its first allocated channel.
        ActMode::VatPool(p) => Readout::Curve(p.curve(0, 0)),
        m => m.readout(),
    };
    adc_forward_planes(u, &mut out, u.len().max(1), 0, act, readout);
    out
}

/// Clipped straight-through estimator.
///
/// Quantized modes pass the gradient where `0 < u < FS`; the float mode is
/// exactly the ReLU derivative.
pub fn adc_backward(u: &[f32], upstream: &[f32], act: &FixedFormat, float_mode: bool) -> Vec<f32> {
    let mut out = vec![0.0; u.len()];
    adc_backward_into(u, upstream, &mut out, act, float_mode);
    out
}

pub(crate) fn adc_backward_into(
    u: &[f32],
    upstream: &[f32],
    out: &mut [f32],
    act: &FixedFormat,
    float_mode: bool,
) {
    let fs = act_full_scale(act) as f32;
    for ((o, &v), &g) in out.iter_mut().zip(u).zip(upstream) {
        let pass = if float_mode {
            v > 0.0
        } else {
            v > 0.0 && v < fs
        };
        *o = if pass { g } else { 0.0 };
    }
}
