//! On-disk weight image: `manifest.toml` plus one CSV row per programmed cell.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BitSlicedWeights, CrossbarError, Result};
use crate::quant::FixedFormat;

const MANIFEST: &str = "manifest.toml";
const CELLS: &str = "cells.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub rows: usize,
    pub cols: usize,
    pub n_slices: usize,
    pub format: FixedFormat,
    pub gamma: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CellRow {
    slice: usize,
    row: usize,
    col: usize,
    bit: u8,
    negative: u8,
    current: f64,
}

pub fn save_image(dir: &Path, w: &BitSlicedWeights) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = ImageManifest {
        rows: w.rows,
        cols: w.cols,
        n_slices: w.n_slices(),
        format: w.format,
        gamma: w.gamma,
        seed: w.seed,
    };
    let text = toml::to_string(&manifest).map_err(|e| CrossbarError::Image(e.to_string()))?;
    fs::write(dir.join(MANIFEST), text)?;
    let mut out = csv::Writer::from_path(dir.join(CELLS))?;
    for s in 0..w.n_slices() {
        for r in 0..w.rows {
            for c in 0..w.cols {
                let i = r * w.cols + c;
                out.serialize(CellRow {
                    slice: s,
                    row: r,
                    col: c,
                    bit: w.slices[s][i] as u8,
                    negative: w.negative[i] as u8,
                    current: w.currents[s][i],
                })?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_image(dir: &Path) -> Result<BitSlicedWeights> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let m: ImageManifest =
        toml::from_str(&text).map_err(|e| CrossbarError::Image(e.to_string()))?;
    let n = m.rows * m.cols;
    let mut slices = vec![vec![false; n]; m.n_slices];
    let mut currents = vec![vec![0.0; n]; m.n_slices];
    let mut negative = vec![false; n];
    let mut seen = 0usize;
    for row in csv::Reader::from_path(dir.join(CELLS))?.deserialize() {
        let row: CellRow = row?;
        if row.slice >= m.n_slices || row.row >= m.rows || row.col >= m.cols {
            return Err(CrossbarError::Image(format!(
                "cell ({}, {}, {}) outside {}x{}x{}",
                row.slice, row.row, row.col, m.n_slices, m.rows, m.cols
            )));
        }
        let i = row.row * m.cols + row.col;
        slices[row.slice][i] = row.bit != 0;
        currents[row.slice][i] = row.current;
        negative[i] = row.negative != 0;
        seen += 1;
    }
    if seen != n * m.n_slices {
        return Err(CrossbarError::Image(format!(
            "expected {} cells, found {seen}",
            n * m.n_slices
        )));
    }
    Ok(BitSlicedWeights {
        rows: m.rows,
        cols: m.cols,
        format: m.format,
        slices,
        negative,
        currents,
        gamma: m.gamma,
        seed: m.seed,
    })
}
