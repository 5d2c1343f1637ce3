use imc_core::adc::AdcModel;
use imc_core::crossbar::{mvm, program, AdcBank, CrossbarConfig, Matrix, ParasiticModel, Polarity};
use imc_core::quant::QuantConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weight_codes(rows: usize, cols: usize) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(-63i64..=63, rows * cols)
}

fn to_matrix(codes: &[i64], rows: usize, cols: usize, q: &QuantConfig) -> Matrix {
    let lsb = q.weight_format().lsb();
    Matrix::new(rows, cols, codes.iter().map(|&c| c as f64 * lsb).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slicing_round_trips_quantized_weights(codes in weight_codes(8, 5)) {
        let q = QuantConfig::default();
        let m = to_matrix(&codes, 8, 5, &q);
        let w = program(&m, &q, &CrossbarConfig::ideal(8, 5), 0).unwrap();
        prop_assert_eq!(w.dequantize(), m);
    }

    #[test]
    fn column_current_is_additive_over_disjoint_rows(
        codes in weight_codes(12, 4),
        mask in prop::collection::vec(0u8..3, 12),
        gamma in 0.0f64..0.2,
        seed in any::<u64>(),
    ) {
        let q = QuantConfig::default();
        let cfg = CrossbarConfig { gamma, ..CrossbarConfig::ideal(12, 4) };
        let w = program(&to_matrix(&codes, 12, 4, &q), &q, &cfg, seed).unwrap();
        let a: Vec<bool> = mask.iter().map(|&m| m == 1).collect();
        let b: Vec<bool> = mask.iter().map(|&m| m == 2).collect();
        let both: Vec<bool> = mask.iter().map(|&m| m != 0).collect();
        for s in 0..w.n_slices() {
            let ia = w.column_current(s, &a, &cfg, Polarity::All).unwrap();
            let ib = w.column_current(s, &b, &cfg, Polarity::All).unwrap();
            let iab = w.column_current(s, &both, &cfg, Polarity::All).unwrap();
            for c in 0..4 {
                prop_assert!((ia[c] + ib[c] - iab[c]).abs() <= 1e-12 * iab[c].abs().max(1e-9));
            }
        }
    }

    #[test]
    fn lossless_mvm_equals_the_integer_dot_product(
        codes in weight_codes(16, 16),
        x in prop::collection::vec(0u32..128, 16),
    ) {
        let q = QuantConfig::default();
        let (cfg, bits) = CrossbarConfig::lossless(16, 16);
        let w = program(&to_matrix(&codes, 16, 16, &q), &q, &cfg, 0).unwrap();
        let bank = AdcBank::Shared(AdcModel::ideal(bits, cfg.adc_i_max()).unwrap());
        let out = mvm(&x, &w, &bank, &q, &cfg, None).unwrap();
        for c in 0..16 {
            let expect: i64 = (0..16).map(|r| x[r] as i64 * codes[r * 16 + c]).sum();
            prop_assert_eq!(out.products[c], expect as f64);
        }
    }

    #[test]
    fn attenuation_falls_with_wire_resistance_and_distance(r1 in 0.0f64..50.0, dr in 0.0f64..50.0) {
        let base = CrossbarConfig {
            parasitic_model: ParasiticModel::Analytic,
            ..CrossbarConfig::ideal(64, 8)
        };
        let lo = CrossbarConfig { r_wire: r1, ..base };
        let hi = CrossbarConfig { r_wire: r1 + dr, ..base };
        for row in 0..64 {
            prop_assert!(hi.attenuation(row) <= lo.attenuation(row));
            if row > 0 {
                // Row 0 is the farthest from the sense node.
                prop_assert!(lo.attenuation(row - 1) <= lo.attenuation(row));
            }
        }
    }
}

fn relative_spread(gamma: f64) -> f64 {
    let q = QuantConfig::default();
    let cfg = CrossbarConfig {
        gamma,
        ..CrossbarConfig::ideal(64, 64)
    };
    let ones = Matrix::new(64, 64, vec![q.weight_format().max_value(); 64 * 64]);
    let mut samples = Vec::new();
    for seed in 0..5 {
        let w = program(&ones, &q, &cfg, seed).unwrap();
        samples.extend(w.currents.iter().flatten().copied());
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

#[test]
fn doubling_gamma_doubles_the_current_spread() {
    // 5 seeds x 6 slices x 4096 cells > 1e5 samples per estimate.
    let (a, b) = (relative_spread(0.05), relative_spread(0.1));
    assert!((a / 0.05 - 1.0).abs() < 0.02, "{a}");
    assert!((b / a - 2.0).abs() < 0.05, "{a} {b}");
}

#[test]
fn analytic_parasitics_never_raise_a_column_current() {
    let q = QuantConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let codes: Vec<i64> = (0..32 * 8).map(|_| rng.random_range(-63..=63)).collect();
    let m = to_matrix(&codes, 32, 8, &q);
    let ideal = CrossbarConfig::ideal(32, 8);
    let lossy = CrossbarConfig {
        parasitic_model: ParasiticModel::Analytic,
        r_wire: 20.0,
        ..ideal
    };
    let w = program(&m, &q, &ideal, 0).unwrap();
    let bits: Vec<bool> = (0..32).map(|_| rng.random()).collect();
    for s in 0..w.n_slices() {
        let a = w.column_current(s, &bits, &ideal, Polarity::All).unwrap();
        let b = w.column_current(s, &bits, &lossy, Polarity::All).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| y <= x));
    }
}
