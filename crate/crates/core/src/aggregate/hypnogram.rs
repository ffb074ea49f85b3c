use std::fmt::Write as _;
use std::path::Path;

use crate::binio::write_atomic;
use crate::error::{Error, Result};
use crate::signal_io::StageLabel;

#[derive(Clone, Debug, PartialEq)]
pub struct Hypnogram {
    pub labels: Vec<StageLabel>,
    /// Fused likelihood vector per epoch, when known.
    pub likelihoods: Option<Vec<Vec<f64>>>,
}

impl Hypnogram {
    pub fn from_labels(labels: Vec<StageLabel>) -> Self {
        Hypnogram {
            labels,
            likelihoods: None,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One stage mnemonic per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.labels.len() * 4);
        for l in &self.labels {
            let _ = writeln!(s, "{l}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<StageLabel>>>()?;
        Ok(Hypnogram::from_labels(labels))
    }
}

pub fn write_hypnogram(path: impl AsRef<Path>, h: &Hypnogram) -> Result<()> {
    write_atomic(path.as_ref(), h.to_text().as_bytes())
}

pub fn read_hypnogram(path: impl AsRef<Path>) -> Result<Hypnogram> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Hypnogram::parse(&text)
}
