//! Static linearity metrics and Monte-Carlo population statistics.
//!
//! Transition points are located by linear interpolation between the two
//! grid samples bracketing a code change. DNL/INL use an endpoint fit: the
//! effective LSB is the distance between the first and last observed
//! transitions divided by the number of codes between them, so INL is zero
//! at both ends by construction.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::adc::TransferCurve;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("transfer curve is not monotone at input {0}")]
    NonMonotone(f64),
    #[error("need at least 2 code transitions, found {0}")]
    TooFewTransitions(usize),
    #[error("empty curve population")]
    EmptyPopulation,
    #[error("population mixes {0}-bit and {1}-bit curves")]
    MixedResolution(u32, u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Located code transitions of a curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    /// `(code, input)` for every code that appears in the curve after the
    /// first sample, in increasing order.
    pub points: Vec<(u32, f64)>,
    /// Codes jumped over by the curve.
    pub missing: Vec<u32>,
}

pub fn transition_points(curve: &TransferCurve) -> Result<Transitions> {
    let xs = curve.inputs();
    let cs = curve.codes();
    let mut points = Vec::new();
    let mut missing = Vec::new();
    for i in 1..cs.len() {
        let (c0, c1) = (cs[i - 1], cs[i]);
        if c1 < c0 {
            return Err(MetricsError::NonMonotone(xs[i]));
        }
        if c1 == c0 {
            continue;
        }
        let span = (c1 - c0) as f64;
        let t = xs[i - 1] + (xs[i] - xs[i - 1]) * (span - 0.5) / span;
        missing.extend(c0 + 1..c1);
        points.push((c1, t));
    }
    Ok(Transitions { points, missing })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearityReport {
    /// First and last codes whose transitions were observed.
    pub first_code: u32,
    pub last_code: u32,
    /// Endpoint-fit LSB in normalized input units.
    pub lsb: f64,
    /// DNL of codes `first_code..last_code`, in LSB.
    pub dnl: Vec<f64>,
    /// INL at transitions `first_code..=last_code`, in LSB.
    pub inl: Vec<f64>,
    pub max_abs_dnl: f64,
    /// Maximum over present codes only.
    pub max_abs_inl: f64,
    pub missing_codes: Vec<u32>,
}

pub fn linearity(curve: &TransferCurve) -> Result<LinearityReport> {
    let tr = transition_points(curve)?;
    if tr.points.len() < 2 {
        return Err(MetricsError::TooFewTransitions(tr.points.len()));
    }
    let (first_code, t_first) = tr.points[0];
    let (last_code, t_last) = *tr.points.last().unwrap();
    let lsb = (t_last - t_first) / (last_code - first_code) as f64;

    // Transition of every code in range; a missing code shares the
    // transition of the next present code (zero width).
    let n = (last_code - first_code + 1) as usize;
    let mut t = vec![f64::NAN; n];
    for &(k, x) in &tr.points {
        t[(k - first_code) as usize] = x;
    }
    for i in (0..n).rev() {
        if t[i].is_nan() {
            t[i] = t[i + 1];
        }
    }

    let dnl: Vec<f64> = t.windows(2).map(|w| (w[1] - w[0]) / lsb - 1.0).collect();
    let inl: Vec<f64> = t
        .iter()
        .enumerate()
        .map(|(j, x)| (x - t_first) / lsb - j as f64)
        .collect();
    let max_abs_dnl = dnl.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let max_abs_inl = inl
        .iter()
        .enumerate()
        .filter(|(j, _)| tr.missing.binary_search(&(first_code + *j as u32)).is_err())
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    Ok(LinearityReport {
        first_code,
        last_code,
        lsb,
        dnl,
        inl,
        max_abs_dnl,
        max_abs_inl,
        missing_codes: tr.missing,
    })
}

impl LinearityReport {
    /// `code,dnl_lsb,inl_lsb` rows followed by a `#` summary line. The last
    /// code has no width, so its DNL cell is empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "code,dnl_lsb,inl_lsb")?;
        for (j, inl) in self.inl.iter().enumerate() {
            let code = self.first_code + j as u32;
            match self.dnl.get(j) {
                Some(d) => writeln!(out, "{code},{d},{inl}")?,
                None => writeln!(out, "{code},,{inl}")?,
            }
        }
        let missing: Vec<String> = self.missing_codes.iter().map(|c| c.to_string()).collect();
        writeln!(
            out,
            "# max_abs_dnl={},max_abs_inl={},missing_codes={}",
            self.max_abs_dnl,
            self.max_abs_inl,
            missing.join(" ")
        )?;
        Ok(())
    }
}

/// Code statistics across a population at one input level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub input_norm: f64,
    pub mean_code: f64,
    /// Population (not sample) standard deviation.
    pub std_code: f64,
    pub min_code: u32,
    pub max_code: u32,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Statistics of raw codes (not tied to a curve table).
pub fn code_spread(codes: &[u32], input_norm: f64) -> Spread {
    let vals: Vec<f64> = codes.iter().map(|&c| c as f64).collect();
    let (mean_code, std_code) = mean_std(&vals);
    Spread {
        input_norm,
        mean_code,
        std_code,
        min_code: codes.iter().copied().min().unwrap_or(0),
        max_code: codes.iter().copied().max().unwrap_or(0),
    }
}

pub fn population_spread(curves: &[TransferCurve], input_norm: f64) -> Result<Spread> {
    let first = curves.first().ok_or(MetricsError::EmptyPopulation)?;
    if let Some(c) = curves.iter().find(|c| c.n_bits() != first.n_bits()) {
        return Err(MetricsError::MixedResolution(first.n_bits(), c.n_bits()));
    }
    let codes: Vec<u32> = curves.iter().map(|c| c.code_at(input_norm)).collect();
    Ok(code_spread(&codes, input_norm))
}

pub fn write_spread_csv<W: Write>(rows: &[Spread], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adc::{sample_curve, AdcModel, AdcSpec, SingleSlopeAdc, CURVE_SPAN};

    fn ideal(n_bits: u32, points: usize) -> TransferCurve {
        sample_curve(&AdcModel::ideal(n_bits, 1.0).unwrap(), points).unwrap()
    }

    #[test]
    fn unaligned_ideal_grid_stays_within_one_step() {
        let points = 1000;
        let rep = linearity(&ideal(7, points)).unwrap();
        let step_lsb = (1.0 / points as f64) / rep.lsb;
        assert!(rep.max_abs_dnl <= step_lsb);
        assert!(rep.max_abs_inl <= step_lsb);
    }

    #[test]
    fn ideal_two_bit_transitions() {
        let points = 257;
        let step = CURVE_SPAN / (points - 1) as f64;
        let tr = transition_points(&ideal(2, points)).unwrap();
        let xs: Vec<f64> = tr.points.iter().map(|p| p.1).collect();
        assert_eq!(
            tr.points.iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        for (x, t) in xs.iter().zip([0.25, 0.5, 0.75]) {
            assert!((x - t).abs() <= step);
        }
        assert!(tr.missing.is_empty());
    }

    #[test]
    fn missing_code_is_skipped_and_reported() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let codes = vec![0, 0, 1, 1, 3, 3, 4, 4];
        let curve = TransferCurve::new(xs, codes, 3).unwrap();
        let tr = transition_points(&curve).unwrap();
        assert_eq!(
            tr.points.iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![1, 3, 4]
        );
        assert_eq!(tr.missing, vec![2]);
        let rep = linearity(&curve).unwrap();
        assert_eq!(rep.missing_codes, vec![2]);
        // dnl index 1 is code 2.
        assert!((rep.dnl[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_monotone_is_rejected() {
        let curve = TransferCurve::new(vec![0.0, 0.5, 1.0], vec![0, 2, 1], 2).unwrap();
        assert!(matches!(
            transition_points(&curve),
            Err(MetricsError::NonMonotone(_))
        ));
    }

    #[test]
    fn gain_error_transitions_invert_linear_model() {
        let spec = AdcSpec::new(3, 1.0).unwrap();
        let adc = AdcModel::SingleSlope(SingleSlopeAdc::new(spec).unwrap().with_errors(0.1, 0.0));
        let points = 4097;
        let step = CURVE_SPAN / (points - 1) as f64;
        let tr = transition_points(&sample_curve(&adc, points).unwrap()).unwrap();
        for (k, x) in tr.points {
            let expected = (k as f64 / 8.0) / 1.1;
            assert!((x - expected).abs() <= step, "code {k}: {x} vs {expected}");
        }
        let rep = linearity(&sample_curve(&adc, points).unwrap()).unwrap();
        assert!(rep.max_abs_dnl < 2.0 * step / rep.lsb);
    }

    #[test]
    fn ideal_linearity_is_flat() {
        let points = 128 * 16;
        let curve = ideal(7, points);
        let rep = linearity(&curve).unwrap();
        assert_eq!(rep.dnl.len(), 126);
        // Grid aligned with the code boundaries: uniform widths.
        assert!(rep.max_abs_dnl < 1e-9, "{}", rep.max_abs_dnl);
        assert!(rep.max_abs_inl < 1e-9, "{}", rep.max_abs_inl);
        assert_eq!(rep.inl[0], 0.0);
        assert!(rep.inl.last().unwrap().abs() < 1e-9);
        assert!(rep.dnl.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn too_few_transitions() {
        let curve = TransferCurve::new(vec![0.0, 1.0], vec![0, 1], 2).unwrap();
        assert!(matches!(
            linearity(&curve),
            Err(MetricsError::TooFewTransitions(1))
        ));
    }

    #[test]
    fn spread_examples() {
        let a = ideal(4, 64);
        assert_eq!(
            population_spread(&[a.clone(), a.clone()], 0.4)
                .unwrap()
                .std_code,
            0.0
        );
        let b = a.shifted(1);
        let s = population_spread(&[a.clone(), b], 0.4).unwrap();
        assert_eq!(s.std_code, 0.5);
        assert_eq!(s.max_code - s.min_code, 1);
        assert!(matches!(
            population_spread(&[], 0.4),
            Err(MetricsError::EmptyPopulation)
        ));
        let other = ideal(3, 64);
        assert!(matches!(
            population_spread(&[a, other], 0.4),
            Err(MetricsError::MixedResolution(4, 3))
        ));
    }

    #[test]
    fn report_csv_layout() {
        let rep = linearity(&ideal(2, 64)).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "code,dnl_lsb,inl_lsb");
        assert_eq!(lines.len(), 1 + 3 + 1);
        assert!(lines[4].starts_with("# max_abs_dnl="));
    }
}
