use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{variation::instance_seed, AdcError, AdcModel, Result, Topology, VariationConfig};

/// Upper end of the sampling grid, as a fraction of full scale.
pub const CURVE_SPAN: f64 = 1.05;

/// Sampled code-versus-input table.
///
/// Inputs are normalized to full scale and strictly increasing. Between grid
/// points the curve holds the code of the nearest lower sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCurve {
    inputs: Vec<f64>,
    codes: Vec<u32>,
    n_bits: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    input_norm: f64,
    code: u32,
}

impl TransferCurve {
    pub fn new(inputs: Vec<f64>, codes: Vec<u32>, n_bits: u32) -> Result<Self> {
        if n_bits == 0 || n_bits > super::MAX_BITS {
            return Err(AdcError::InvalidResolution(n_bits));
        }
        if inputs.len() != codes.len() {
            return Err(AdcError::InvalidCurve(format!(
                "{} inputs but {} codes",
                inputs.len(),
                codes.len()
            )));
        }
        if inputs.is_empty() {
            return Err(AdcError::InvalidCurve("empty curve".into()));
        }
        if inputs.iter().any(|x| !x.is_finite()) || inputs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AdcError::InvalidCurve(
                "inputs must be finite and strictly increasing".into(),
            ));
        }
        let code_max = ((1u64 << n_bits) - 1) as u32;
        if let Some(c) = codes.iter().find(|&&c| c > code_max) {
            return Err(AdcError::InvalidCurve(format!(
                "code {c} exceeds {code_max} for {n_bits} bits"
            )));
        }
        Ok(Self {
            inputs,
            codes,
            n_bits,
        })
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    pub fn code_max(&self) -> u32 {
        ((1u64 << self.n_bits) - 1) as u32
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.codes.windows(2).all(|w| w[1] >= w[0])
    }

    /// Code held at normalized input `x` (zero below the first sample).
    pub fn code_at(&self, x: f64) -> u32 {
        let idx = self.inputs.partition_point(|&g| g <= x);
        if idx == 0 {
            0
        } else {
            self.codes[idx - 1]
        }
    }

    /// A copy with every code shifted by `delta`, clamped to the code range.
    pub fn shifted(&self, delta: i64) -> Self {
        let max = self.code_max() as i64;
        let codes = self
            .codes
            .iter()
            .map(|&c| (c as i64 + delta).clamp(0, max) as u32)
            .collect();
        Self {
            inputs: self.inputs.clone(),
            codes,
            n_bits: self.n_bits,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (&input_norm, &code) in self.inputs.iter().zip(&self.codes) {
            w.serialize(Row { input_norm, code })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, n_bits: u32) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut inputs = Vec::new();
        let mut codes = Vec::new();
        for row in r.deserialize() {
            let row: Row = row?;
            inputs.push(row.input_norm);
            codes.push(row.code);
        }
        Self::new(inputs, codes, n_bits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(fs::File::create(path)?)
    }

    pub fn load(path: &Path, n_bits: u32) -> Result<Self> {
        Self::read_csv(fs::File::open(path)?, n_bits)
    }
}

/// Tabulates `model` on a uniform grid of step `1 / n_points` (in units of
/// full scale) over `[0, CURVE_SPAN]`.
///
/// With `n_points` a multiple of `2^N` every ideal code boundary falls on a
/// grid point, so the ideal quantizer yields exactly uniform code widths.
pub fn sample_curve(model: &AdcModel, n_points: usize) -> Result<TransferCurve> {
    let n_bits = model.spec().n_bits;
    let needed = 1usize << n_bits;
    if n_points < needed {
        return Err(AdcError::TooFewPoints {
            got: n_points,
            needed,
        });
    }
    let step = n_points as f64;
    let last = (CURVE_SPAN * step).floor() as usize;
    let inputs: Vec<f64> = (0..=last).map(|i| i as f64 / step).collect();
    let codes = inputs.iter().map(|&x| model.convert_norm(x)).collect();
    TransferCurve::new(inputs, codes, n_bits)
}

/// Provenance record written next to a Monte-Carlo curve directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationManifest {
    pub topology: Topology,
    pub n_bits: u32,
    pub count: usize,
    pub base_seed: u64,
    pub supply_scale: f64,
    pub n_points: usize,
    pub variation: VariationConfig,
    /// Per-instance seeds, in file order.
    pub seeds: Vec<u64>,
}

impl PopulationManifest {
    pub fn new(
        topology: Topology,
        n_bits: u32,
        count: usize,
        base_seed: u64,
        supply_scale: f64,
        n_points: usize,
        variation: VariationConfig,
    ) -> Self {
        Self {
            topology,
            n_bits,
            count,
            base_seed,
            supply_scale,
            n_points,
            variation,
            seeds: (0..count).map(|i| instance_seed(base_seed, i)).collect(),
        }
    }
}

const MANIFEST: &str = "manifest.toml";

/// Writes `mc_<index>.csv` for each curve plus `manifest.toml`.
pub fn write_population(
    dir: &Path,
    manifest: &PopulationManifest,
    curves: &[TransferCurve],
) -> Result<()> {
    if curves.len() != manifest.count {
        return Err(AdcError::Manifest(format!(
            "manifest lists {} curves, got {}",
            manifest.count,
            curves.len()
        )));
    }
    fs::create_dir_all(dir)?;
    for (i, c) in curves.iter().enumerate() {
        c.save(&dir.join(format!("mc_{i}.csv")))?;
    }
    let text = toml::to_string(manifest).map_err(|e| AdcError::Manifest(e.to_string()))?;
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

pub fn read_population(dir: &Path) -> Result<(PopulationManifest, Vec<TransferCurve>)> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: PopulationManifest =
        toml::from_str(&text).map_err(|e| AdcError::Manifest(e.to_string()))?;
    let curves = (0..manifest.count)
        .map(|i| TransferCurve::load(&dir.join(format!("mc_{i}.csv")), manifest.n_bits))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, curves))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adc::{sample_population, AdcSpec, CcoAdc, NonLinearity};

    #[test]
    fn ideal_two_bit_staircase() {
        let adc = AdcModel::ideal(2, 1.0).unwrap();
        let curve = sample_curve(&adc, 64).unwrap();
        let step = CURVE_SPAN / 63.0;
        for (k, target) in [(1u32, 0.25), (2, 0.5), (3, 0.75)] {
            let first = curve
                .inputs()
                .iter()
                .zip(curve.codes())
                .find(|(_, &c)| c >= k)
                .map(|(x, _)| *x)
                .unwrap();
            assert!((first - target).abs() <= step, "code {k} at {first}");
        }
        assert!(curve.is_monotone());
        assert_eq!(*curve.codes().last().unwrap(), 3);
    }

    #[test]
    fn too_few_points() {
        let adc = AdcModel::ideal(7, 1.0).unwrap();
        assert!(matches!(
            sample_curve(&adc, 100),
            Err(AdcError::TooFewPoints {
                got: 100,
                needed: 128
            })
        ));
    }

    #[test]
    fn compression_widens_high_codes() {
        let spec = AdcSpec::new(5, 1.0).unwrap();
        let linear = AdcModel::Cco(CcoAdc::new(spec, 1.0).unwrap());
        let bent = AdcModel::Cco(CcoAdc::new(spec, 1.0).unwrap().with_nl_coeff(0.2).unwrap());
        let gaps = |m: &AdcModel| {
            let c = sample_curve(m, 8192).unwrap();
            let mut t = Vec::new();
            for i in 1..c.len() {
                if c.codes()[i] > c.codes()[i - 1] {
                    t.push(c.inputs()[i]);
                }
            }
            t.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>()
        };
        let g_lin = gaps(&linear);
        let g_nl = gaps(&bent);
        let lin_spread = g_lin.last().unwrap() - g_lin.first().unwrap();
        assert!(lin_spread.abs() < 2.0 * CURVE_SPAN / 8191.0);
        assert!(g_nl.last().unwrap() > &(g_nl[0] * 1.3));
        let _ = NonLinearity::NONE;
    }

    #[test]
    fn code_at_holds_lower_sample() {
        let c = TransferCurve::new(vec![0.0, 0.5, 1.0], vec![0, 2, 3], 2).unwrap();
        assert_eq!(c.code_at(-0.1), 0);
        assert_eq!(c.code_at(0.49), 0);
        assert_eq!(c.code_at(0.5), 2);
        assert_eq!(c.code_at(2.0), 3);
        assert_eq!(c.shifted(2).codes(), &[2, 3, 3]);
    }

    #[test]
    fn validation() {
        assert!(TransferCurve::new(vec![0.0, 0.0], vec![0, 1], 2).is_err());
        assert!(TransferCurve::new(vec![0.0, 1.0], vec![0, 4], 2).is_err());
        assert!(TransferCurve::new(vec![0.0], vec![0, 1], 2).is_err());
    }

    #[test]
    fn csv_header_and_population_roundtrip() {
        let adc = AdcModel::ideal(2, 1.0).unwrap();
        let curve = sample_curve(&adc, 4).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("input_norm,code\n"));

        let dir = tempfile::tempdir().unwrap();
        let template = AdcModel::Cco(CcoAdc::new(AdcSpec::new(4, 1.0).unwrap(), 1.0).unwrap());
        let var = VariationConfig::default();
        let pop = sample_population(&template, &var, 0.8, 5, 3).unwrap();
        let curves: Vec<_> = pop.iter().map(|m| sample_curve(m, 64).unwrap()).collect();
        let manifest = PopulationManifest::new(Topology::Cco, 4, 3, 5, 0.8, 64, var);
        write_population(dir.path(), &manifest, &curves).unwrap();
        assert!(dir.path().join("mc_2.csv").exists());
        let (m2, c2) = read_population(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(c2, curves);
        assert_eq!(m2.seeds, vec![5, 6, 7]);
    }
}
