//! Bit-sliced, bit-serial current-mode crossbar.
//!
//! Weight magnitudes are split into one binary array per bit; the sign is kept
//! in a separate plane and realized as a positive/negative column pair, so
//! each logical column is read by two conversions whose results are
//! subtracted digitally. Activations are streamed one bit per step. Every
//! (input bit, weight slice, polarity) partial sum is converted by the
//! column ADC and recombined with shift-add.
//!
//! Currents are accumulated in units of the nominal cell current, so an ideal
//! array with no programming noise yields exact integer counts.

mod image;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adc::AdcModel;
use crate::quant::{FixedFormat, QuantConfig, QuantError};

pub use image::{load_image, save_image, ImageManifest};

#[derive(Debug, Error)]
pub enum CrossbarError {
    #[error("weight matrix {rows}x{cols} exceeds the {max_rows}x{max_cols} array; partition into {row_tiles}x{col_tiles} tiles")]
    DimensionOverflow {
        rows: usize,
        cols: usize,
        max_rows: usize,
        max_cols: usize,
        row_tiles: usize,
        col_tiles: usize,
    },
    #[error("invalid crossbar config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} inputs, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("activation code {code} does not fit {bits} bits")]
    ActivationRange { code: u32, bits: u32 },
    #[error("expected {expected} column ADCs, got {got}")]
    AdcCount { expected: usize, got: usize },
    #[error("slice {0} out of range")]
    SliceRange(usize),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("weight image: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CrossbarError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParasiticModel {
    Ideal,
    /// First-order IR-drop attenuation along the bit line.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
    /// Cell current when input bit and weight bit are both 1, amperes.
    pub i_cell: f64,
    /// Relative std-dev of programmed cell current.
    pub gamma: f64,
    /// Wire resistance per cell pitch, ohms.
    pub r_wire: f64,
    /// Wire capacitance per cell pitch, farads. Only feeds `settling_time`.
    pub c_wire: f64,
    /// Clamped bit-line voltage, volts.
    pub v_ref: f64,
    pub parasitic_model: ParasiticModel,
    /// ADC full scale in cell currents; `rows` when unset.
    pub adc_full_scale_cells: Option<f64>,
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            i_cell: 1e-6,
            gamma: 0.0,
            r_wire: 1.0,
            c_wire: 0.2e-15,
            v_ref: 0.4,
            parasitic_model: ParasiticModel::Ideal,
            adc_full_scale_cells: None,
        }
    }
}

impl CrossbarConfig {
    pub fn ideal(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CrossbarError::InvalidConfig(m.to_string()));
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be at least 1");
        }
        if !(self.i_cell > 0.0) {
            return bad("i_cell must be positive");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if !(self.r_wire >= 0.0) || !(self.c_wire >= 0.0) {
            return bad("wire parasitics must be non-negative");
        }
        if !(self.v_ref > 0.0) {
            return bad("v_ref must be positive");
        }
        if let Some(fs) = self.adc_full_scale_cells {
            if !(fs > 0.0) {
                return bad("adc_full_scale_cells must be positive");
            }
        }
        Ok(())
    }

    /// Equivalent resistance of an on cell at the clamped bit-line voltage.
    pub fn r_eq(&self) -> f64 {
        self.v_ref / self.i_cell
    }

    pub fn full_scale_cells(&self) -> f64 {
        self.adc_full_scale_cells.unwrap_or(self.rows as f64)
    }

    /// ADC full-scale current implied by the array.
    pub fn adc_i_max(&self) -> f64 {
        self.full_scale_cells() * self.i_cell
    }

    /// An ideal array whose ADC resolves every partial-sum count exactly:
    /// full scale is the next power of two strictly above `rows` cell
    /// currents and one ADC LSB equals one cell current. Returns the config
    /// and the matching ADC resolution.
    pub fn lossless(rows: usize, cols: usize) -> (Self, u32) {
        let fs = (rows + 1).next_power_of_two();
        let cfg = Self {
            adc_full_scale_cells: Some(fs as f64),
            ..Self::ideal(rows, cols)
        };
        (cfg, fs.trailing_zeros())
    }

    /// Pitches of wire between `row` and the sense node below the last row.
    pub fn distance(&self, row: usize) -> usize {
        self.rows - row
    }

    pub fn attenuation(&self, row: usize) -> f64 {
        match self.parasitic_model {
            ParasiticModel::Ideal => 1.0,
            ParasiticModel::Analytic => {
                1.0 / (1.0 + self.distance(row) as f64 * self.r_wire / self.r_eq())
            }
        }
    }

    /// Elmore delay of a fully distributed bit line.
    pub fn settling_time(&self) -> f64 {
        let n = self.rows as f64;
        0.5 * (n * self.r_wire) * (n * self.c_wire)
    }

    fn tiles_for(&self, rows: usize, cols: usize) -> (usize, usize) {
        (rows.div_ceil(self.rows), cols.div_ceil(self.cols))
    }
}

/// Convolution layer dimensions and their crossbar footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMapping {
    pub in_channels: usize,
    pub n_kernels: usize,
    pub kernel_size: usize,
    pub out_pixels: usize,
}

impl LayerMapping {
    /// Rows needed by one flattened kernel, `M * S^2`.
    pub fn column_height(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }

    pub fn tiles(&self, cfg: &CrossbarConfig) -> (usize, usize) {
        cfg.tiles_for(self.column_height(), self.n_kernels)
    }

    /// Sequential MVMs needed to produce every output pixel once.
    pub fn mvm_count(&self) -> usize {
        self.out_pixels
    }
}

/// Row-major real matrix; row `r` is input `r`, column `c` is output `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    All,
    Positive,
    Negative,
}

/// Quantized weights laid out as binary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct BitSlicedWeights {
    pub rows: usize,
    pub cols: usize,
    pub format: FixedFormat,
    /// One plane per magnitude bit, LSB first, row-major.
    pub slices: Vec<Vec<bool>>,
    /// Sign plane; `true` marks a negative weight.
    pub negative: Vec<bool>,
    /// Programmed cell currents per slice, amperes. Drawn once.
    pub currents: Vec<Vec<f64>>,
    pub gamma: f64,
    pub seed: u64,
}

/// Quantizes, slices and programs a weight matrix into one array.
pub fn program(
    weights: &Matrix,
    qcfg: &QuantConfig,
    cfg: &CrossbarConfig,
    seed: u64,
) -> Result<BitSlicedWeights> {
    cfg.validate()?;
    qcfg.validate()?;
    if weights.rows > cfg.rows || weights.cols > cfg.cols {
        let (row_tiles, col_tiles) = cfg.tiles_for(weights.rows, weights.cols);
        return Err(CrossbarError::DimensionOverflow {
            rows: weights.rows,
            cols: weights.cols,
            max_rows: cfg.rows,
            max_cols: cfg.cols,
            row_tiles,
            col_tiles,
        });
    }
    let fmt = qcfg.weight_format();
    let n = weights.rows * weights.cols;
    let n_slices = fmt.magnitude_bits() as usize;
    let codes: Vec<i64> = weights.data.iter().map(|&w| fmt.code(w)).collect();
    let slices = (0..n_slices)
        .map(|b| {
            codes
                .iter()
                .map(|c| (c.unsigned_abs() >> b) & 1 == 1)
                .collect()
        })
        .collect();
    let negative = codes.iter().map(|&c| c < 0).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let currents = if cfg.gamma > 0.0 {
        let noise = Normal::new(0.0, cfg.gamma).expect("gamma validated");
        (0..n_slices)
            .map(|_| {
                (0..n)
                    .map(|_| cfg.i_cell * (1.0 + noise.sample(&mut rng)))
                    .collect()
            })
            .collect()
    } else {
        vec![vec![cfg.i_cell; n]; n_slices]
    };
    Ok(BitSlicedWeights {
        rows: weights.rows,
        cols: weights.cols,
        format: fmt,
        slices,
        negative,
        currents,
        gamma: cfg.gamma,
        seed,
    })
}

impl BitSlicedWeights {
    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    /// Signed integer weight code rebuilt from the planes.
    pub fn weight_code(&self, r: usize, c: usize) -> i64 {
        let i = r * self.cols + c;
        let mag: i64 = self
            .slices
            .iter()
            .enumerate()
            .map(|(b, s)| (s[i] as i64) << b)
            .sum();
        if self.negative[i] {
            -mag
        } else {
            mag
        }
    }

    /// Real weights rebuilt from the planes (ignores programming noise).
    pub fn dequantize(&self) -> Matrix {
        let lsb = self.format.lsb();
        let data = (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| self.weight_code(r, c) as f64 * lsb)
            .collect();
        Matrix::new(self.rows, self.cols, data)
    }

    /// Bit-line currents of one slice in units of `i_cell`.
    fn column_units(
        &self,
        slice: usize,
        input_bits: &[bool],
        cfg: &CrossbarConfig,
        polarity: Polarity,
        out: &mut [f64],
    ) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let plane = &self.slices[slice];
        let currents = &self.currents[slice];
        for (r, &on) in input_bits.iter().enumerate() {
            if !on {
                continue;
            }
            let att = cfg.attenuation(r);
            let base = r * self.cols;
            for c in 0..self.cols {
                let i = base + c;
                if !plane[i] {
                    continue;
                }
                let keep = match polarity {
                    Polarity::All => true,
                    Polarity::Positive => !self.negative[i],
                    Polarity::Negative => self.negative[i],
                };
                if keep {
                    out[c] += currents[i] / cfg.i_cell * att;
                }
            }
        }
    }

    /// Bit-line currents in amperes for one slice and one input bit vector.
    pub fn column_current(
        &self,
        slice: usize,
        input_bits: &[bool],
        cfg: &CrossbarConfig,
        polarity: Polarity,
    ) -> Result<Vec<f64>> {
        if slice >= self.n_slices() {
            return Err(CrossbarError::SliceRange(slice));
        }
        if input_bits.len() != self.rows {
            return Err(CrossbarError::InputLength {
                expected: self.rows,
                got: input_bits.len(),
            });
        }
        let mut units = vec![0.0; self.cols];
        self.column_units(slice, input_bits, cfg, polarity, &mut units);
        Ok(units.into_iter().map(|u| u * cfg.i_cell).collect())
    }
}

/// Column ADCs of an array.
#[derive(Debug, Clone)]
pub enum AdcBank {
    Shared(AdcModel),
    PerColumn(Vec<AdcModel>),
}

impl AdcBank {
    /// Converter for physical column `col` (negative columns follow the
    /// positive ones).
    fn get(&self, col: usize) -> &AdcModel {
        match self {
            AdcBank::Shared(m) => m,
            AdcBank::PerColumn(v) => &v[col],
        }
    }

    fn check(&self, physical_cols: usize) -> Result<()> {
        if let AdcBank::PerColumn(v) = self {
            if v.len() != physical_cols {
                return Err(CrossbarError::AdcCount {
                    expected: physical_cols,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }
}

/// One conversion of an MVM, as written to the trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub inbit: u32,
    pub slice: u32,
    /// Physical column: `c` for the positive array, `cols + c` for the negative one.
    pub col: usize,
    pub current: f64,
    pub code: u32,
    pub saturated: bool,
}

pub fn write_trace<W: std::io::Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvmOutput {
    /// Reconstructed `sum_r x_r * w_r` in integer-code units.
    pub products: Vec<f64>,
    /// `products` scaled by both LSBs.
    pub values: Vec<f64>,
    pub conversions: usize,
    /// Conversions whose input exceeded the ADC full scale.
    pub saturated: usize,
}

impl MvmOutput {
    pub fn saturation_fraction(&self) -> f64 {
        if self.conversions == 0 {
            0.0
        } else {
            self.saturated as f64 / self.conversions as f64
        }
    }
}

/// Bit-serial MVM through the array and its column ADCs.
///
/// `x` holds unsigned activation codes in the activation format of `qcfg`.
pub fn mvm(
    x: &[u32],
    w: &BitSlicedWeights,
    adcs: &AdcBank,
    qcfg: &QuantConfig,
    cfg: &CrossbarConfig,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<MvmOutput> {
    if x.len() != w.rows {
        return Err(CrossbarError::InputLength {
            expected: w.rows,
            got: x.len(),
        });
    }
    let act = qcfg.act_format();
    let in_bits = act.magnitude_bits();
    if let Some(&code) = x.iter().find(|&&c| (c as u64) >> in_bits != 0) {
        return Err(CrossbarError::ActivationRange {
            code,
            bits: in_bits,
        });
    }
    adcs.check(2 * w.cols)?;

    let fs = cfg.full_scale_cells();
    let mut products = vec![0.0; w.cols];
    let mut units = vec![0.0; w.cols];
    let mut bits = vec![false; w.rows];
    let mut conversions = 0;
    let mut saturated = 0;
    for i in 0..in_bits {
        for (b, r) in bits.iter_mut().zip(x) {
            *b = (r >> i) & 1 == 1;
        }
        for s in 0..w.n_slices() {
            let weight = ((i as usize + s) as f64).exp2();
            for (pol, sign, offset) in [
                (Polarity::Positive, 1.0, 0),
                (Polarity::Negative, -1.0, w.cols),
            ] {
                w.column_units(s, &bits, cfg, pol, &mut units);
                for c in 0..w.cols {
                    let adc = adcs.get(offset + c);
                    let n_levels = adc.spec().levels();
                    let xn = units[c] / fs;
                    let code = adc.convert_norm(xn);
                    let sat = xn > 1.0;
                    conversions += 1;
                    saturated += sat as usize;
                    products[c] += sign * weight * (code as f64 * fs / n_levels);
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(TraceRow {
                            inbit: i,
                            slice: s as u32,
                            col: offset + c,
                            current: units[c] * cfg.i_cell,
                            code,
                            saturated: sat,
                        });
                    }
                }
            }
        }
    }
    let scale = act.lsb() * w.format.lsb();
    let values = products.iter().map(|p| p * scale).collect();
    Ok(MvmOutput {
        products,
        values,
        conversions,
        saturated,
    })
}

/// A layer too large for one array, split into tiles.
#[derive(Debug, Clone)]
pub struct TiledWeights {
    pub rows: usize,
    pub cols: usize,
    pub row_tiles: usize,
    pub col_tiles: usize,
    /// Row-major over (row tile, col tile).
    pub tiles: Vec<BitSlicedWeights>,
}

/// Programs a matrix of any size onto `rows x cols` tiles. Tile `t` uses
/// programming seed `seed + t`.
pub fn program_tiled(
    weights: &Matrix,
    qcfg: &QuantConfig,
    cfg: &CrossbarConfig,
    seed: u64,
) -> Result<TiledWeights> {
    cfg.validate()?;
    let (row_tiles, col_tiles) = cfg.tiles_for(weights.rows, weights.cols);
    let mut tiles = Vec::with_capacity(row_tiles * col_tiles);
    for rt in 0..row_tiles {
        for ct in 0..col_tiles {
            let r0 = rt * cfg.rows;
            let c0 = ct * cfg.cols;
            let r1 = (r0 + cfg.rows).min(weights.rows);
            let c1 = (c0 + cfg.cols).min(weights.cols);
            let data = (r0..r1)
                .flat_map(|r| (c0..c1).map(move |c| (r, c)))
                .map(|(r, c)| weights.get(r, c))
                .collect();
            let sub = Matrix::new(r1 - r0, c1 - c0, data);
            let idx = (rt * col_tiles + ct) as u64;
            tiles.push(program(&sub, qcfg, cfg, seed.wrapping_add(idx))?);
        }
    }
    Ok(TiledWeights {
        rows: weights.rows,
        cols: weights.cols,
        row_tiles,
        col_tiles,
        tiles,
    })
}

/// MVM over every tile, accumulating partial results digitally.
pub fn mvm_tiled(
    x: &[u32],
    w: &TiledWeights,
    adc: &AdcModel,
    qcfg: &QuantConfig,
    cfg: &CrossbarConfig,
) -> Result<MvmOutput> {
    if x.len() != w.rows {
        return Err(CrossbarError::InputLength {
            expected: w.rows,
            got: x.len(),
        });
    }
    let bank = AdcBank::Shared(adc.clone());
    let mut out = MvmOutput {
        products: vec![0.0; w.cols],
        values: vec![0.0; w.cols],
        conversions: 0,
        saturated: 0,
    };
    for rt in 0..w.row_tiles {
        for ct in 0..w.col_tiles {
            let tile = &w.tiles[rt * w.col_tiles + ct];
            let r0 = rt * cfg.rows;
            let c0 = ct * cfg.cols;
            let part = mvm(&x[r0..r0 + tile.rows], tile, &bank, qcfg, cfg, None)?;
            for c in 0..tile.cols {
                out.products[c0 + c] += part.products[c];
                out.values[c0 + c] += part.values[c];
            }
            out.conversions += part.conversions;
            out.saturated += part.saturated;
        }
    }
    Ok(out)
}
