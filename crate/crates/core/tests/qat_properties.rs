use imc_core::adc::{sample_curve, AdcModel, AdcSpec, CcoAdc};
use imc_core::crossbar::{mvm, program, AdcBank, CrossbarConfig, Matrix};
use imc_core::qat::{
    act_full_scale, adc_backward, adc_forward, ActMode, Architecture, LayerSpec, Network,
    INPUT_SHAPE,
};
use imc_core::quant::{quantize_fixed, QuantConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cco_curve(nl: f64) -> ActMode {
    let model = CcoAdc::new(AdcSpec::new(5, 10e-6).unwrap(), 12.8e12)
        .unwrap()
        .with_nl_coeff(nl)
        .unwrap();
    ActMode::FixedCurve(sample_curve(&AdcModel::Cco(model), 2048).unwrap())
}

proptest! {
    #[test]
    fn quantize_fixed_is_idempotent(
        xs in prop::collection::vec(-20.0f32..20.0, 1..64),
        total in 2u32..12,
        int in 0u32..4,
        signed: bool,
    ) {
        prop_assume!(int + u32::from(signed) < total);
        let once = quantize_fixed(&xs, total, int, signed).unwrap();
        let twice = quantize_fixed(&once, total, int, signed).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn activations_stay_on_the_code_grid(
        us in prop::collection::vec(-8.0f32..8.0, 1..128),
        nl in 0.0f64..0.9,
        total in 3u32..9,
    ) {
        let q = QuantConfig { act_total_bits: total, ..QuantConfig::default() };
        let act = q.act_format();
        let lsb = act.lsb() as f32;
        let top = act.max_code() as f32 * lsb;
        let mut modes = vec![ActMode::IdealQuantized];
        if total == 5 {
            modes.push(cco_curve(nl));
        }
        for mode in &modes {
            for y in adc_forward(&us, &act, mode) {
                prop_assert!(y >= 0.0 && y <= top);
                prop_assert_eq!((y / lsb).fract(), 0.0);
            }
        }
    }

    #[test]
    fn float_backward_is_the_relu_derivative(
        us in prop::collection::vec(-8.0f32..8.0, 1..64),
        g in -3.0f32..3.0,
    ) {
        let act = QuantConfig::default().act_format();
        let up = vec![g; us.len()];
        let d = adc_backward(&us, &up, &act, true);
        for (u, d) in us.iter().zip(d) {
            prop_assert_eq!(d, if *u > 0.0 { g } else { 0.0 });
        }
    }
}

#[test]
fn ideal_activation_equals_quantized_relu_on_a_million_inputs() {
    let q = QuantConfig::default();
    let act = q.act_format();
    let fs = act_full_scale(&act) as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let us: Vec<f32> = (0..1_000_000)
        .map(|_| rng.random_range(-1.0..1.5) * fs)
        .collect();
    let relu: Vec<f32> = us.iter().map(|u| u.max(0.0)).collect();
    let expect = quantize_fixed(&relu, q.act_total_bits, q.act_int_bits, q.act_signed).unwrap();
    assert_eq!(adc_forward(&us, &act, &ActMode::IdealQuantized), expect);
}

/// A network whose only hidden layer is a 64 -> 16 dense layer.
fn dense_probe(seed: u64) -> Network {
    let layers = vec![
        LayerSpec::Dense {
            inputs: INPUT_SHAPE.len(),
            outputs: 16,
        },
        LayerSpec::Adc,
        LayerSpec::Dense {
            inputs: 16,
            outputs: 10,
        },
    ];
    let mut net = Network::init(layers, seed).unwrap();
    net.biases.iter_mut().flatten().for_each(|b| *b = 0.0);
    net
}

#[test]
fn dense_layer_readout_matches_the_crossbar() {
    let q = QuantConfig::default();
    let act = q.act_format();
    let wf = q.weight_format();
    let rows = INPUT_SHAPE.len();
    let (cfg, bits) = CrossbarConfig::lossless(rows, 16);
    let bank = AdcBank::Shared(AdcModel::ideal(bits, cfg.adc_i_max()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..200 {
        let net = dense_probe(case);
        let input: Vec<f32> = (0..rows).map(|_| rng.random_range(0.0..4.0)).collect();

        let pre = &net.adc_inputs(&input, &q, true)[0];
        let from_network = adc_forward(pre, &act, &ActMode::IdealQuantized);

        // Dense weights are stored output-major; the array is input-major.
        let w = &net.weights[0];
        let data: Vec<f64> = (0..rows)
            .flat_map(|r| (0..16).map(move |c| wf.quantize(w[c * rows + r] as f64)))
            .collect();
        let programmed = program(&Matrix::new(rows, 16, data), &q, &cfg, 0).unwrap();
        let x: Vec<u32> = input.iter().map(|&v| act.code(v as f64) as u32).collect();
        let out = mvm(&x, &programmed, &bank, &q, &cfg, None).unwrap();
        let sums: Vec<f32> = out.values.iter().map(|&v| v as f32).collect();
        let from_crossbar = adc_forward(&sums, &act, &ActMode::IdealQuantized);

        assert_eq!(from_network, from_crossbar, "case {case}");
        assert_eq!(pre, &sums, "case {case}");
    }
}

#[test]
fn adc_inputs_follow_the_reference_layout() {
    let net = Network::init(Architecture::default().layers(), 4).unwrap();
    let q = QuantConfig::default();
    let input: Vec<f32> = (0..INPUT_SHAPE.len())
        .map(|i| (i % 5) as f32 * 0.3)
        .collect();
    let float = net.adc_inputs(&input, &q, false);
    let quant = net.adc_inputs(&input, &q, true);
    let side = INPUT_SHAPE.side;
    let a = Architecture::default();
    let lens: Vec<usize> = float.iter().map(Vec::len).collect();
    assert_eq!(
        lens,
        vec![a.conv1 * side * side, a.conv2 * side * side, a.hidden]
    );
    assert_eq!(quant.iter().map(Vec::len).collect::<Vec<_>>(), lens);
    assert_ne!(float, quant);
}
