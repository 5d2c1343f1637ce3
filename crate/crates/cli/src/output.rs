//! Run directories, provenance files and summary tables.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// An output directory that already holds `config.resolved.toml` and
/// `version.txt`.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| HarnessError::io(root.display().to_string(), e))?;
        let dir = Self {
            root: root.to_path_buf(),
        };
        dir.write_text("config.resolved.toml", &cfg.to_toml()?)?;
        dir.write_text(
            "version.txt",
            &format!("imcsim {VERSION}\ncommand {command}\n"),
        )?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn join(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Creates (if needed) and returns a subdirectory.
    pub fn subdir(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        fs::create_dir_all(&p).map_err(|e| HarnessError::io(p.display().to_string(), e))?;
        Ok(p)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<()> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| HarnessError::io(parent.display().to_string(), e))?;
        }
        fs::write(&p, text).map_err(|e| HarnessError::io(p.display().to_string(), e))
    }

    pub fn create_file(&self, rel: &str) -> Result<fs::File> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| HarnessError::io(parent.display().to_string(), e))?;
        }
        fs::File::create(&p).map_err(|e| HarnessError::io(p.display().to_string(), e))
    }

    /// Writes `<stem>.csv` and the aligned `<stem>.txt`.
    pub fn write_table(&self, stem: &str, table: &Table) -> Result<()> {
        table.write_csv(self.create_file(&format!("{stem}.csv"))?)?;
        self.write_text(&format!("{stem}.txt"), &table.to_text())
    }
}

/// A small string table rendered both as CSV and as aligned text.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &str, header: &[&str]) -> Self {
        Self {
            title: title.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()
            .map_err(|e| HarnessError::io("flushing table", e))?;
        Ok(())
    }

    /// First column left-aligned, the rest right-aligned.
    pub fn to_text(&self) -> String {
        let n = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, c) in cells.iter().enumerate() {
                if i == 0 {
                    s.push_str(&format!("{c:<w$}", w = widths[0]));
                } else {
                    s.push_str(&format!("  {c:>w$}", w = widths[i]));
                }
            }
            s.trim_end().to_string()
        };
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        out.push_str(&line(&self.header));
        out.push('\n');
        let total: usize = widths.iter().sum::<usize>() + 2 * n.saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

/// Fixed-precision formatting keeps CSV bytes stable across runs.
pub fn f2(x: f64) -> String {
    format!("{x:.2}")
}

pub fn f4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn f6(x: f64) -> String {
    format!("{x:.6}")
}

/// Order-preserving parallel map over `jobs` scoped threads.
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
