//! The bundled 8x8 handwritten-digit set (1797 images, 10 classes).

use std::io::Read;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{QatError, Result};

const DIGITS_GZ: &[u8] = include_bytes!("../../data/digits.csv.gz");

/// Seed of the fixed train/test permutation. Independent of the training
/// seed so every run sees the same held-out images.
const SPLIT_SEED: u64 = 0x5eed_d161;

pub const IMAGE_SIDE: usize = 8;
pub const N_CLASSES: usize = 10;

/// Images as single-channel `8x8` planes with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * Self::PIXELS..(i + 1) * Self::PIXELS]
    }

    /// Parses rows of 64 pixel values in `0..=16` followed by the label.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(reader);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| QatError::Data(e.to_string()))?;
            if rec.len() != Self::PIXELS + 1 {
                return Err(QatError::Data(format!(
                    "row {line}: expected {} fields, got {}",
                    Self::PIXELS + 1,
                    rec.len()
                )));
            }
            let mut vals = rec.iter().map(|f| {
                f.trim()
                    .parse::<u8>()
                    .map_err(|e| QatError::Data(format!("row {line}: {e}")))
            });
            for _ in 0..Self::PIXELS {
                let p = vals.next().unwrap()?;
                if p > 16 {
                    return Err(QatError::Data(format!("row {line}: pixel {p} > 16")));
                }
                images.push(p as f32 / 16.0);
            }
            let label = vals.next().unwrap()?;
            if label as usize >= N_CLASSES {
                return Err(QatError::Data(format!("row {line}: label {label}")));
            }
            labels.push(label);
        }
        Ok(Self { images, labels })
    }

    /// Raw gzip-compressed CSV bundled with the crate.
    pub fn bundled_bytes() -> &'static [u8] {
        DIGITS_GZ
    }

    pub fn load_bundled() -> Result<Self> {
        Self::from_csv(GzDecoder::new(DIGITS_GZ))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut images = Vec::with_capacity(idx.len() * Self::PIXELS);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self { images, labels }
    }

    /// Fixed 80/20 split: `(train, test)`.
    pub fn split(&self) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(SPLIT_SEED));
        let n_train = self.len() * 4 / 5;
        (self.subset(&idx[..n_train]), self.subset(&idx[n_train..]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_set_shape() {
        let d = Dataset::load_bundled().unwrap();
        assert_eq!(d.len(), 1797);
        let mut counts = [0usize; N_CLASSES];
        d.labels.iter().for_each(|&l| counts[l as usize] += 1);
        assert!(counts.iter().all(|&c| (170..=190).contains(&c)));
        assert!(d.images.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let (train, test) = d.split();
        assert_eq!((train.len(), test.len()), (1437, 360));
        assert_eq!(d.split(), (train, test));
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(Dataset::from_csv("1,2,3\n".as_bytes()).is_err());
        let row = format!("{}17\n", "0,".repeat(64));
        assert!(Dataset::from_csv(row.as_bytes()).is_err());
    }
}
