//! `fetch-data`: materializes the digits dataset into a local cache.
//!
//! The 1797-image 8x8 handwritten-digit set ships inside the library, so
//! this step works offline; it writes the gzip CSV (64 pixels in `0..=16`
//! followed by the label per row) where `data.path` can point at it.

use imc_core::qat::Dataset;

use crate::error::Result;
use crate::output::RunDir;

pub const DATA_FILE: &str = "digits.csv.gz";

pub fn run(out: &RunDir) -> Result<std::path::PathBuf> {
    let path = out.join(DATA_FILE);
    std::fs::write(&path, Dataset::bundled_bytes())
        .map_err(|e| crate::error::HarnessError::io(path.display().to_string(), e))?;
    Ok(path)
}
