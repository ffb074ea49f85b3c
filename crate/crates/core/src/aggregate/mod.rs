//! Fusing the overlapping per-epoch decisions of a one-to-many model.
//!
//! Input epoch `i` emits posteriors for epochs `i - tau ..= i + tau`. After
//! scattering, epoch `n` holds `P(y_n | X_{n+k})` for every source offset `k`
//! whose input exists; the voting rules fuse these into one decision.

mod grid;
mod hypnogram;

pub use grid::{read_grid, write_grid, PosteriorGrid};
pub use hypnogram::{read_hypnogram, write_hypnogram, Hypnogram};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::LOG_FLOOR;
use crate::signal_io::StageLabel;

/// Per-input outputs `outputs[i][slot]`, slots ordered from offset `-tau`
/// to `+tau`, scattered onto the epochs they describe.
pub fn scatter_decisions(outputs: &[Vec<Vec<f64>>], tau: usize, epoch_count: usize) -> Result<PosteriorGrid> {
    if outputs.len() != epoch_count {
        return Err(Error::shape(format!(
            "{} outputs for {epoch_count} epochs",
            outputs.len()
        )));
    }
    let n_classes = outputs.first().and_then(|o| o.first()).map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(epoch_count * (2 * tau + 1) * n_classes);
    for o in outputs {
        if o.len() != 2 * tau + 1 {
            return Err(Error::shape(format!("{} output slots for tau = {tau}", o.len())));
        }
        for slot in o {
            if slot.len() != n_classes {
                return Err(Error::shape("output slots disagree on class count"));
            }
            flat.extend_from_slice(slot);
        }
    }
    scatter_flat(&flat, tau, epoch_count, n_classes)
}

/// As [`scatter_decisions`] with outputs flattened to `N x (2 tau + 1) x Y`.
pub fn scatter_flat(outputs: &[f64], tau: usize, epoch_count: usize, n_classes: usize) -> Result<PosteriorGrid> {
    let slots = 2 * tau + 1;
    if outputs.len() != epoch_count * slots * n_classes {
        return Err(Error::shape(format!(
            "{} values for {epoch_count} epochs x {slots} slots x {n_classes} classes",
            outputs.len()
        )));
    }
    let mut grid = PosteriorGrid::new(epoch_count, tau, n_classes)?;
    let tau = tau as isize;
    for i in 0..epoch_count {
        for s in 0..slots {
            let k = s as isize - tau;
            let n = i as isize + k;
            if n < 0 || n >= epoch_count as isize {
                continue;
            }
            let at = (i * slots + s) * n_classes;
            grid.insert(n as usize, -k, &outputs[at..at + n_classes])?;
        }
    }
    Ok(grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VotingRule {
    Additive,
    Multiplicative,
}

impl VotingRule {
    pub const ALL: [VotingRule; 2] = [VotingRule::Additive, VotingRule::Multiplicative];

    pub fn as_str(self) -> &'static str {
        match self {
            VotingRule::Additive => "additive",
            VotingRule::Multiplicative => "multiplicative",
        }
    }
}

impl fmt::Display for VotingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VotingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(VotingRule::Additive),
            "multiplicative" => Ok(VotingRule::Multiplicative),
            _ => Err(Error::invalid(format!("unknown voting rule `{s}`"))),
        }
    }
}

/// A fused likelihood vector. Multiplicative fusion keeps its scores as
/// logarithms so long windows do not underflow.
#[derive(Clone, Debug, PartialEq)]
pub struct Fused {
    pub scores: Vec<f64>,
    pub log_domain: bool,
}

impl Fused {
    /// Likelihoods on the linear scale.
    pub fn values(&self) -> Vec<f64> {
        if self.log_domain {
            self.scores.iter().map(|s| s.exp()).collect()
        } else {
            self.scores.clone()
        }
    }

    /// Index of the largest score; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.scores)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_entries(entries: &[&[f64]]) -> Result<usize> {
    let first = entries.first().ok_or_else(|| Error::invalid("no decisions to fuse"))?;
    if entries.iter().any(|e| e.len() != first.len()) {
        return Err(Error::shape("decisions disagree on class count"));
    }
    Ok(first.len())
}

/// Mean of the available posteriors.
pub fn vote_additive(entries: &[&[f64]]) -> Result<Fused> {
    let y = check_entries(entries)?;
    let mut sum = vec![0.0; y];
    for e in entries {
        for (s, v) in sum.iter_mut().zip(e.iter()) {
            *s += v;
        }
    }
    let n = entries.len() as f64;
    Ok(Fused {
        scores: sum.into_iter().map(|s| s / n).collect(),
        log_domain: false,
    })
}

/// Product of the available posteriors divided by their count, as
/// `sum(ln max(p, 1e-12)) - ln(count)`. Only the argmax is meaningful; the
/// values are not a distribution.
pub fn vote_multiplicative(entries: &[&[f64]]) -> Result<Fused> {
    let y = check_entries(entries)?;
    let mut sum = vec![-(entries.len() as f64).ln(); y];
    for e in entries {
        for (s, v) in sum.iter_mut().zip(e.iter()) {
            *s += v.max(LOG_FLOOR).ln();
        }
    }
    Ok(Fused {
        scores: sum,
        log_domain: true,
    })
}

pub fn vote(rule: VotingRule, entries: &[&[f64]]) -> Result<Fused> {
    match rule {
        VotingRule::Additive => vote_additive(entries),
        VotingRule::Multiplicative => vote_multiplicative(entries),
    }
}

/// Fuses every epoch of `grid` with `rule`.
pub fn fuse_grid(grid: &PosteriorGrid, rule: VotingRule) -> Result<Vec<Fused>> {
    (0..grid.epoch_count())
        .map(|n| {
            let entries: Vec<&[f64]> = grid.entries(n).map(|(_, p)| p).collect();
            vote(rule, &entries)
        })
        .collect()
}

/// Maximum-likelihood labels, lowest class index on ties.
pub fn decide(fused: &[Fused]) -> Result<Hypnogram> {
    let labels = fused
        .iter()
        .map(|f| {
            StageLabel::from_index(f.argmax())
                .ok_or_else(|| Error::invalid(format!("class {} is not a sleep stage", f.argmax())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Hypnogram {
        labels,
        likelihoods: Some(fused.iter().map(Fused::values).collect()),
    })
}
