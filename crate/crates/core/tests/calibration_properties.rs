use imc_core::adc::{sample_population, AdcModel, AdcSpec, CcoAdc, VariationConfig};
use imc_core::calibration::{
    calibrate, code_with_tuning, post_cal_spread, CalibrationConfig, CalibrationError, RefCount,
};
use proptest::prelude::*;

fn instance(slope: f64, offset: f64, nl: f64) -> CcoAdc {
    let spec = AdcSpec::new(7, 10e-6).unwrap();
    CcoAdc::new(spec, 12.8e12)
        .unwrap()
        .with_nl_coeff(nl)
        .unwrap()
        .with_errors(slope, offset * spec.i_max)
}

fn references() -> impl Strategy<Value = RefCount> {
    prop_oneof![
        Just(RefCount::IdealCode),
        Just(RefCount::BankCentered),
        (30u32..50).prop_map(RefCount::Fixed),
    ]
}

proptest! {
    #[test]
    fn returned_code_is_the_first_that_meets_the_reference(
        slope in -0.1f64..0.2,
        offset in -0.01f64..0.01,
        nl in 0.0f64..0.1,
        reference in references(),
    ) {
        let m = instance(slope, offset, nl);
        let cfg = CalibrationConfig { reference, ..CalibrationConfig::default() };
        let target = cfg.ref_count(&m.spec);
        let first = (0..=cfg.n_tuning_bits).find(|&t| code_with_tuning(&m, &cfg, t) <= target);
        match (calibrate(&m, &cfg), first) {
            (Ok(cal), Some(t)) => prop_assert_eq!(cal.tuning_code, t),
            (Err(CalibrationError::OutOfRange { .. }), None) => {}
            (got, want) => prop_assert!(false, "calibrate {:?} vs enumeration {:?}", got, want),
        }
    }

    #[test]
    fn calibrated_code_lands_near_the_reference(
        slope in -0.05f64..0.08,
        offset in -0.005f64..0.005,
    ) {
        let m = instance(slope, offset, 0.01);
        let cfg = CalibrationConfig::default();
        let target = cfg.ref_count(&m.spec) as i64;
        if let Ok(cal) = calibrate(&m, &cfg) {
            let code = cal.convert_norm(cfg.i_cal_fraction) as i64;
            let bound = (cfg.tuning_step * target as f64).ceil() as i64 + 1;
            prop_assert!(code <= target);
            if cal.tuning_code > 0 {
                prop_assert!((code - target).abs() <= bound, "code {} target {}", code, target);
            }
        }
    }

    #[test]
    fn code_at_ical_falls_as_tuning_rises(
        slope in -0.2f64..0.2,
        offset in -0.01f64..0.01,
        nl in 0.0f64..0.9,
    ) {
        let m = instance(slope, offset, nl);
        let cfg = CalibrationConfig::default();
        let codes: Vec<u32> = (0..=cfg.n_tuning_bits).map(|t| code_with_tuning(&m, &cfg, t)).collect();
        prop_assert!(codes.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn slope_only_population_diverges_toward_full_scale() {
    let var = VariationConfig {
        sigma_slope: 0.03,
        ..VariationConfig::NONE
    };
    let template = AdcModel::Cco(instance(0.0, 0.0, 0.0));
    for seed in [0, 1, 2] {
        let pop: Vec<CcoAdc> = sample_population(&template, &var, 1.0, seed, 200)
            .unwrap()
            .into_iter()
            .map(|m| match m {
                AdcModel::Cco(c) => c,
                _ => unreachable!(),
            })
            .collect();
        let rep = post_cal_spread(&pop, &CalibrationConfig::default()).unwrap();
        assert!(rep.spread_at_imax.std_code >= rep.spread_at_ical.std_code);
        assert!(rep.spread_at_ical.std_code < rep.pre_spread_at_ical.std_code);
    }
}
