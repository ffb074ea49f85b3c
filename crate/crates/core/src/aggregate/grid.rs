//! Posterior grid file.
//!
//! ```text
//! "PGRD" | version u32 | epoch count u32 | tau u32 | Y u32
//!        | per epoch: presence bitmap, ceil((2 tau + 1) / 8) bytes,
//!          bit j (LSB first) set when offset j - tau is present,
//!          then Y f32 values per present offset in increasing offset order
//! ```
//!
//! All numbers are little-endian. Posteriors are renormalized on read to
//! undo single-precision rounding.

use std::path::Path;

use crate::binio::{read_file, write_atomic, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PGRD";
const VERSION: u32 = 1;

/// Posteriors `P(y_n | X_{n+k})` keyed by epoch `n` and source offset `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGrid {
    tau: usize,
    n_classes: usize,
    cells: Vec<Vec<Option<Vec<f64>>>>,
}

impl PosteriorGrid {
    pub fn new(epoch_count: usize, tau: usize, n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::invalid("posterior grid needs at least one class"));
        }
        Ok(PosteriorGrid {
            tau,
            n_classes,
            cells: vec![vec![None; 2 * tau + 1]; epoch_count],
        })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn epoch_count(&self) -> usize {
        self.cells.len()
    }

    fn slot(&self, offset: isize) -> Option<usize> {
        let s = offset + self.tau as isize;
        (s >= 0 && s <= 2 * self.tau as isize).then_some(s as usize)
    }

    /// Stores the posterior for epoch `n` made from input `n + offset`.
    pub fn insert(&mut self, n: usize, offset: isize, posterior: &[f64]) -> Result<()> {
        if n >= self.epoch_count() {
            return Err(Error::invalid(format!(
                "epoch {n} outside grid of {}",
                self.epoch_count()
            )));
        }
        let src = n as isize + offset;
        let slot = self
            .slot(offset)
            .filter(|_| src >= 0 && src < self.epoch_count() as isize)
            .ok_or_else(|| Error::invalid(format!("offset {offset} invalid for epoch {n}")))?;
        if posterior.len() != self.n_classes {
            return Err(Error::shape(format!(
                "posterior of {} classes in a {}-class grid",
                posterior.len(),
                self.n_classes
            )));
        }
        if posterior.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("posterior has negative or non-finite entries"));
        }
        let sum: f64 = posterior.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("posterior sums to {sum}")));
        }
        self.cells[n][slot] = Some(posterior.to_vec());
        Ok(())
    }

    pub fn get(&self, n: usize, offset: isize) -> Option<&[f64]> {
        let slot = self.slot(offset)?;
        self.cells.get(n)?[slot].as_deref()
    }

    /// Present `(offset, posterior)` pairs of epoch `n`, by increasing offset.
    pub fn entries(&self, n: usize) -> impl Iterator<Item = (isize, &[f64])> + '_ {
        let tau = self.tau as isize;
        self.cells[n]
            .iter()
            .enumerate()
            .filter_map(move |(s, c)| c.as_deref().map(|p| (s as isize - tau, p)))
    }

    pub fn count(&self, n: usize) -> usize {
        self.cells[n].iter().filter(|c| c.is_some()).count()
    }

    pub fn total_entries(&self) -> usize {
        (0..self.epoch_count()).map(|n| self.count(n)).sum()
    }

    /// The classification (offset 0) posterior of every epoch.
    pub fn center(&self, n: usize) -> Option<&[f64]> {
        self.get(n, 0)
    }
}

pub fn write_grid(path: impl AsRef<Path>, grid: &PosteriorGrid) -> Result<()> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u32(grid.epoch_count() as u32);
    w.u32(grid.tau as u32);
    w.u32(grid.n_classes as u32);
    let nbytes = (2 * grid.tau + 1).div_ceil(8);
    for row in &grid.cells {
        let mut bitmap = vec![0u8; nbytes];
        for (j, c) in row.iter().enumerate() {
            if c.is_some() {
                bitmap[j / 8] |= 1 << (j % 8);
            }
        }
        w.bytes(&bitmap);
        for p in row.iter().flatten() {
            w.f32s(p.iter().map(|&v| v as f32));
        }
    }
    write_atomic(path.as_ref(), &w.finish())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<PosteriorGrid> {
    let path = path.as_ref();
    let data = read_file(path)?;
    let mut r = Reader::new(path, &data, MAGIC, VERSION)?;
    let n = r.u32()? as usize;
    let tau = r.u32()? as usize;
    let y = r.u32()? as usize;
    let mut grid = PosteriorGrid::new(n, tau, y).map_err(|_| r.err("zero classes"))?;
    let nbytes = (2 * tau + 1).div_ceil(8);
    for epoch in 0..n {
        let bitmap = r.take(nbytes)?.to_vec();
        for j in 0..2 * tau + 1 {
            if bitmap[j / 8] & (1 << (j % 8)) == 0 {
                continue;
            }
            let raw = r.f32s(y)?;
            let sum: f64 = raw.iter().map(|&v| f64::from(v)).sum();
            if !(sum - 1.0).abs().le(&1e-4) {
                return Err(r.err(format!("posterior sums to {sum}")));
            }
            let p: Vec<f64> = raw.iter().map(|&v| f64::from(v) / sum).collect();
            grid.insert(epoch, j as isize - tau as isize, &p)
                .map_err(|e| r.err(e.to_string()))?;
        }
    }
    r.finish()?;
    Ok(grid)
}
