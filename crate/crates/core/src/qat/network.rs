//! Small sequential CNN with explicit forward/backward passes.
//!
//! Weights live in a full-precision shadow copy. Each forward pass runs on a
//! derived set of effective weights (quantized and optionally perturbed);
//! gradients computed against the effective weights are applied to the
//! shadow copy unchanged (straight-through).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::act::{adc_backward_into, adc_forward_planes, Readout};
use super::data::{IMAGE_SIDE, N_CLASSES};
use super::{QatError, Result};
use crate::quant::{FixedFormat, QuantConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3x3 convolution, stride 1, zero padding 1, on `side x side` planes.
    Conv3x3 {
        in_ch: usize,
        out_ch: usize,
        side: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// ADC activation on every element of the incoming tensor.
    Adc,
    /// 2x2 max pooling, stride 2.
    MaxPool2,
}

/// Shape of a `channels x side x side` tensor (dense tensors have side 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub side: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.channels * self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Widths of the reference network
/// `conv -> ADC -> conv -> ADC -> pool -> dense -> ADC -> dense`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            conv1: 16,
            conv2: 32,
            hidden: 88,
        }
    }
}

impl Architecture {
    pub fn layers(&self) -> Vec<LayerSpec> {
        let s = IMAGE_SIDE;
        vec![
            LayerSpec::Conv3x3 {
                in_ch: 1,
                out_ch: self.conv1,
                side: s,
            },
            LayerSpec::Adc,
            LayerSpec::Conv3x3 {
                in_ch: self.conv1,
                out_ch: self.conv2,
                side: s,
            },
            LayerSpec::Adc,
            LayerSpec::MaxPool2,
            LayerSpec::Dense {
                inputs: self.conv2 * (s / 2) * (s / 2),
                outputs: self.hidden,
            },
            LayerSpec::Adc,
            LayerSpec::Dense {
                inputs: self.hidden,
                outputs: N_CLASSES,
            },
        ]
    }
}

/// Shapes flowing between layers: `shapes[i]` feeds layer `i`.
pub fn infer_shapes(layers: &[LayerSpec], input: Shape) -> Result<Vec<Shape>> {
    let mut shapes = vec![input];
    for (i, l) in layers.iter().enumerate() {
        let s = *shapes.last().unwrap();
        let bad = |m: String| Err(QatError::Config(format!("layer {i}: {m}")));
        let next = match *l {
            LayerSpec::Conv3x3 {
                in_ch,
                out_ch,
                side,
            } => {
                if s.channels != in_ch || s.side != side {
                    return bad(format!("conv expects {in_ch}x{side}x{side}, got {s:?}"));
                }
                Shape {
                    channels: out_ch,
                    side,
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                if s.len() != inputs {
                    return bad(format!("dense expects {inputs} inputs, got {}", s.len()));
                }
                Shape {
                    channels: outputs,
                    side: 1,
                }
            }
            LayerSpec::Adc => s,
            LayerSpec::MaxPool2 => {
                if s.side % 2 != 0 {
                    return bad(format!("cannot pool side {}", s.side));
                }
                Shape {
                    channels: s.channels,
                    side: s.side / 2,
                }
            }
        };
        shapes.push(next);
    }
    Ok(shapes)
}

impl LayerSpec {
    fn weight_len(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv3x3 { in_ch, out_ch, .. } => Some((out_ch * in_ch * 9, out_ch)),
            LayerSpec::Dense { inputs, outputs } => Some((inputs * outputs, outputs)),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv3x3 { in_ch, .. } => in_ch * 9,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    /// Shadow weights per weighted layer, in layer order.
    pub weights: Vec<Vec<f32>>,
    /// Biases stay in full precision.
    pub biases: Vec<Vec<f32>>,
}

/// Per-sample activation and gradient buffers.
#[derive(Debug, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f32>>,
    grads: Vec<Vec<f32>>,
}

/// Gradients of a mini-batch, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zero(&mut self) {
        self.weights.iter_mut().flatten().for_each(|g| *g = 0.0);
        self.biases.iter_mut().flatten().for_each(|g| *g = 0.0);
    }
}

pub const INPUT_SHAPE: Shape = Shape {
    channels: 1,
    side: IMAGE_SIDE,
};

impl Network {
    /// He-normal initialization, zero biases.
    pub fn init(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let shapes = infer_shapes(&layers, INPUT_SHAPE)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in &layers {
            if let Some((nw, nb)) = l.weight_len() {
                let std = (2.0 / l.fan_in() as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("positive std");
                weights.push((0..nw).map(|_| dist.sample(&mut rng) as f32).collect());
                biases.push(vec![0.0; nb]);
            }
        }
        Ok(Self {
            layers,
            shapes,
            weights,
            biases,
        })
    }

    pub fn from_parts(
        layers: Vec<LayerSpec>,
        weights: Vec<Vec<f32>>,
        biases: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let shapes = infer_shapes(&layers, INPUT_SHAPE)?;
        let expect: Vec<(usize, usize)> = layers.iter().filter_map(LayerSpec::weight_len).collect();
        let got: Vec<(usize, usize)> = weights
            .iter()
            .zip(&biases)
            .map(|(w, b)| (w.len(), b.len()))
            .collect();
        if expect != got || weights.len() != biases.len() {
            return Err(QatError::Config(format!(
                "parameter shapes {got:?} do not match layers {expect:?}"
            )));
        }
        Ok(Self {
            layers,
            shapes,
            weights,
            biases,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Channel count of every ADC layer, in order.
    pub fn adc_channels(&self) -> Vec<usize> {
        self.layers
            .iter()
            .zip(&self.shapes)
            .filter(|(l, _)| matches!(l, LayerSpec::Adc))
            .map(|(_, s)| s.channels)
            .collect()
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.shapes.iter().map(|s| vec![0.0; s.len()]).collect(),
            grads: self.shapes.iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Shadow weights rounded onto `fmt`.
    pub fn quantized_weights(&self, fmt: &FixedFormat) -> Vec<Vec<f32>> {
        self.weights
            .iter()
            .map(|w| w.iter().map(|&v| fmt.quantize(v as f64) as f32).collect())
            .collect()
    }

    /// Clamps the shadow weights into the representable range of `fmt`.
    pub fn clamp_weights(&mut self, fmt: &FixedFormat) {
        let (lo, hi) = (fmt.min_value() as f32, fmt.max_value() as f32);
        self.weights
            .iter_mut()
            .flatten()
            .for_each(|w| *w = w.clamp(lo, hi));
    }

    /// Forward pass of one sample; returns the logits.
    pub(crate) fn forward<'w>(
        &self,
        eff: &[Vec<f32>],
        input: &[f32],
        act: &FixedFormat,
        readout: Readout<'_>,
        ws: &'w mut Workspace,
    ) -> &'w [f32] {
        ws.acts[0].copy_from_slice(input);
        let mut p = 0;
        let mut adc = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(i + 1);
            let x = &head[i];
            let y = &mut tail[0];
            let s = self.shapes[i];
            match *layer {
                LayerSpec::Conv3x3 {
                    in_ch,
                    out_ch,
                    side,
                } => {
                    conv_forward(x, &eff[p], &self.biases[p], in_ch, out_ch, side, y);
                    p += 1;
                }
                LayerSpec::Dense { inputs, outputs } => {
                    dense_forward(x, &eff[p], &self.biases[p], inputs, outputs, y);
                    p += 1;
                }
                LayerSpec::Adc => {
                    adc_forward_planes(x, y, s.side * s.side, adc, act, readout);
                    adc += 1;
                }
                LayerSpec::MaxPool2 => pool_forward(x, s.channels, s.side, y),
            }
        }
        ws.acts.last().unwrap()
    }

    /// Pre-activations entering each ADC layer for one sample, with
    /// quantized weights and inputs and the ideal converter (float weights
    /// and ReLU when `quantized` is false).
    pub fn adc_inputs(&self, input: &[f32], qcfg: &QuantConfig, quantized: bool) -> Vec<Vec<f32>> {
        let act = qcfg.act_format();
        let (eff, x, readout) = if quantized {
            let x: Vec<f32> = input
                .iter()
                .map(|&p| act.quantize(p as f64) as f32)
                .collect();
            (
                self.quantized_weights(&qcfg.weight_format()),
                x,
                Readout::Ideal,
            )
        } else {
            (self.weights.clone(), input.to_vec(), Readout::Float)
        };
        let mut ws = self.workspace();
        self.forward(&eff, &x, &act, readout, &mut ws);
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Adc))
            .map(|(i, _)| ws.acts[i].clone())
            .collect()
    }

    /// Back-propagates `d_logits` through the last forward pass in `ws`,
    /// accumulating parameter gradients into `grads`.
    pub(crate) fn backward(
        &self,
        eff: &[Vec<f32>],
        d_logits: &[f32],
        act: &FixedFormat,
        float_mode: bool,
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) {
        let n = self.layers.len();
        ws.grads[n].copy_from_slice(d_logits);
        let mut p = self.weights.len();
        for i in (0..n).rev() {
            let (g_head, g_tail) = ws.grads.split_at_mut(i + 1);
            let dx = &mut g_head[i];
            let dy = &g_tail[0];
            let x = &ws.acts[i];
            let s = self.shapes[i];
            let need_dx = i > 0;
            match self.layers[i] {
                LayerSpec::Conv3x3 {
                    in_ch,
                    out_ch,
                    side,
                } => {
                    p -= 1;
                    conv_backward(
                        x,
                        &eff[p],
                        dy,
                        in_ch,
                        out_ch,
                        side,
                        &mut grads.weights[p],
                        &mut grads.biases[p],
                        need_dx.then_some(dx),
                    );
                }
                LayerSpec::Dense { inputs, outputs } => {
                    p -= 1;
                    dense_backward(
                        x,
                        &eff[p],
                        dy,
                        inputs,
                        outputs,
                        &mut grads.weights[p],
                        &mut grads.biases[p],
                        need_dx.then_some(dx),
                    );
                }
                LayerSpec::Adc => adc_backward_into(x, dy, dx, act, float_mode),
                LayerSpec::MaxPool2 => pool_backward(x, dy, s.channels, s.side, dx),
            }
        }
    }
}

fn conv_forward(
    x: &[f32],
    w: &[f32],
    b: &[f32],
    in_ch: usize,
    out_ch: usize,
    side: usize,
    y: &mut [f32],
) {
    let plane = side * side;
    for o in 0..out_ch {
        let out = &mut y[o * plane..(o + 1) * plane];
        out.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..in_ch {
            let inp = &x[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = w[((o * in_ch + c) * 3 + ky) * 3 + kx];
                    let (y0, y1) = (1usize.saturating_sub(ky), (side + 1 - ky).min(side));
                    let (x0, x1) = (1usize.saturating_sub(kx), (side + 1 - kx).min(side));
                    for yy in y0..y1 {
                        let src = (yy + ky - 1) * side + x0 + kx - 1;
                        let row = &mut out[yy * side + x0..yy * side + x1];
                        let srow = &inp[src..src + x1 - x0];
                        for (r, s) in row.iter_mut().zip(srow) {
                            *r += wv * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    in_ch: usize,
    out_ch: usize,
    side: usize,
    gw: &mut [f32],
    gb: &mut [f32],
    mut dx: Option<&mut Vec<f32>>,
) {
    let plane = side * side;
    if let Some(d) = dx.as_deref_mut() {
        d.iter_mut().for_each(|v| *v = 0.0);
    }
    for o in 0..out_ch {
        let g = &dy[o * plane..(o + 1) * plane];
        gb[o] += g.iter().sum::<f32>();
        for c in 0..in_ch {
            let inp = &x[c * plane..(c + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wi = ((o * in_ch + c) * 3 + ky) * 3 + kx;
                    let (y0, y1) = (1usize.saturating_sub(ky), (side + 1 - ky).min(side));
                    let (x0, x1) = (1usize.saturating_sub(kx), (side + 1 - kx).min(side));
                    let mut acc = 0.0;
                    for yy in y0..y1 {
                        let src = (yy + ky - 1) * side + x0 + kx - 1;
                        let grow = &g[yy * side + x0..yy * side + x1];
                        let srow = &inp[src..src + x1 - x0];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f32>();
                        if let Some(d) = dx.as_deref_mut() {
                            let drow = &mut d[c * plane + src..c * plane + src + x1 - x0];
                            for (dd, gg) in drow.iter_mut().zip(grow) {
                                *dd += w[wi] * gg;
                            }
                        }
                    }
                    gw[wi] += acc;
                }
            }
        }
    }
}

fn dense_forward(x: &[f32], w: &[f32], b: &[f32], inputs: usize, outputs: usize, y: &mut [f32]) {
    for o in 0..outputs {
        let row = &w[o * inputs..(o + 1) * inputs];
        y[o] = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>();
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    inputs: usize,
    outputs: usize,
    gw: &mut [f32],
    gb: &mut [f32],
    mut dx: Option<&mut Vec<f32>>,
) {
    if let Some(d) = dx.as_deref_mut() {
        d.iter_mut().for_each(|v| *v = 0.0);
    }
    for o in 0..outputs {
        let g = dy[o];
        gb[o] += g;
        if g == 0.0 {
            continue;
        }
        let grow = &mut gw[o * inputs..(o + 1) * inputs];
        for (gg, xv) in grow.iter_mut().zip(x) {
            *gg += g * xv;
        }
        if let Some(d) = dx.as_deref_mut() {
            let row = &w[o * inputs..(o + 1) * inputs];
            for (dd, wv) in d.iter_mut().zip(row) {
                *dd += g * wv;
            }
        }
    }
}

fn pool_argmax(x: &[f32], c: usize, side: usize, y: usize, xx: usize) -> usize {
    let base = c * side * side;
    let cands = [
        base + 2 * y * side + 2 * xx,
        base + 2 * y * side + 2 * xx + 1,
        base + (2 * y + 1) * side + 2 * xx,
        base + (2 * y + 1) * side + 2 * xx + 1,
    ];
    cands
        .into_iter()
        .reduce(|a, b| if x[b] > x[a] { b } else { a })
        .unwrap()
}

fn pool_forward(x: &[f32], channels: usize, side: usize, y: &mut [f32]) {
    let half = side / 2;
    for c in 0..channels {
        for r in 0..half {
            for q in 0..half {
                y[(c * half + r) * half + q] = x[pool_argmax(x, c, side, r, q)];
            }
        }
    }
}

fn pool_backward(x: &[f32], dy: &[f32], channels: usize, side: usize, dx: &mut [f32]) {
    dx.iter_mut().for_each(|v| *v = 0.0);
    let half = side / 2;
    for c in 0..channels {
        for r in 0..half {
            for q in 0..half {
                dx[pool_argmax(x, c, side, r, q)] += dy[(c * half + r) * half + q];
            }
        }
    }
}

/// Softmax cross-entropy of one sample; writes `dL/dlogits` into `grad`.
pub(crate) fn softmax_xent(logits: &[f32], label: usize, grad: &mut [f32]) -> f32 {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for (g, &l) in grad.iter_mut().zip(logits) {
        *g = (l - max).exp();
        sum += *g;
    }
    for g in grad.iter_mut() {
        *g /= sum;
    }
    // Log-sum-exp form: finite for any finite logits, NaN/inf otherwise.
    let loss = sum.ln() - (logits[label] - max);
    grad[label] -= 1.0;
    loss
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::QuantConfig;

    fn act() -> FixedFormat {
        QuantConfig::default().act_format()
    }

    #[test]
    fn reference_shapes() {
        let net = Network::init(Architecture::default().layers(), 0).unwrap();
        assert_eq!(net.adc_channels(), vec![16, 32, 88]);
        assert_eq!(net.output_len(), 10);
        assert_eq!(net.param_count(), 160 + 4640 + 45144 + 890);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (c_in, c_out, s) = (2, 3, 5);
        let x: Vec<f32> = (0..c_in * s * s)
            .map(|i| ((i * 7) % 11) as f32 - 5.0)
            .collect();
        let w: Vec<f32> = (0..c_out * c_in * 9)
            .map(|i| ((i * 5) % 7) as f32 * 0.1 - 0.3)
            .collect();
        let b = vec![0.5, -1.0, 0.0];
        let mut y = vec![0.0; c_out * s * s];
        conv_forward(&x, &w, &b, c_in, c_out, s, &mut y);
        for o in 0..c_out {
            for r in 0..s as i64 {
                for q in 0..s as i64 {
                    let mut acc = b[o];
                    for c in 0..c_in {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (rr, qq) = (r + ky - 1, q + kx - 1);
                                if rr < 0 || qq < 0 || rr >= s as i64 || qq >= s as i64 {
                                    continue;
                                }
                                acc += w[((o * c_in + c) * 3 + ky as usize) * 3 + kx as usize]
                                    * x[(c * s + rr as usize) * s + qq as usize];
                            }
                        }
                    }
                    let got = y[(o * s + r as usize) * s + q as usize];
                    assert!((got - acc).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn float_gradients_match_finite_differences() {
        let layers = Architecture {
            conv1: 2,
            conv2: 3,
            hidden: 5,
        }
        .layers();
        let mut net = Network::init(layers, 7).unwrap();
        // Positive biases keep most units away from the ReLU kink.
        net.biases.iter_mut().flatten().for_each(|b| *b = 0.05);
        let input: Vec<f32> = (0..64).map(|i| ((i * 13) % 17) as f32 / 16.0).collect();
        let label = 3;
        let mut ws = net.workspace();
        let loss_of = |n: &Network, ws: &mut Workspace| {
            let logits = n
                .forward(&n.weights, &input, &act(), Readout::Float, ws)
                .to_vec();
            let mut g = vec![0.0; 10];
            softmax_xent(&logits, label, &mut g)
        };
        let logits = net
            .forward(&net.weights, &input, &act(), Readout::Float, &mut ws)
            .to_vec();
        let mut d = vec![0.0; 10];
        softmax_xent(&logits, label, &mut d);
        let mut grads = net.zero_gradients();
        net.backward(&net.weights.clone(), &d, &act(), true, &mut ws, &mut grads);
        let h = 1e-2f32;
        let mut checked = 0;
        for p in 0..net.weights.len() {
            for k in (0..net.weights[p].len()).step_by(7) {
                let mut plus = net.clone();
                plus.weights[p][k] += h;
                let mut minus = net.clone();
                minus.weights[p][k] -= h;
                let fd = (loss_of(&plus, &mut ws) - loss_of(&minus, &mut ws)) / (2.0 * h);
                let an = grads.weights[p][k];
                assert!(
                    (fd - an).abs() < 2e-2 + 0.05 * an.abs(),
                    "layer {p} w{k}: fd {fd} vs {an}"
                );
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn softmax_gradient_sums_to_zero() {
        let mut g = vec![0.0; 4];
        let loss = softmax_xent(&[1.0, 2.0, 3.0, 4.0], 3, &mut g);
        assert!(g.iter().sum::<f32>().abs() < 1e-6);
        assert!(loss > 0.0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
    }

    #[test]
    fn rejects_bad_parts() {
        let layers = Architecture::default().layers();
        assert!(Network::from_parts(layers.clone(), vec![], vec![]).is_err());
        let net = Network::init(layers.clone(), 1).unwrap();
        let back = Network::from_parts(layers, net.weights.clone(), net.biases.clone()).unwrap();
        assert_eq!(back, net);
        let bad = vec![LayerSpec::Dense {
            inputs: 10,
            outputs: 2,
        }];
        assert!(Network::init(bad, 0).is_err());
    }
}
