use std::fmt;
use std::str::FromStr;

use super::StageLabel;
use crate::error::{Error, Result};

/// Manual scoring standard a recording was labelled under.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoringScheme {
    /// Rechtschaffen & Kales: W, N1..N4, REM, MOVEMENT, UNKNOWN.
    Rk,
    /// AASM: W, N1, N2, N3, REM.
    Aasm,
}

impl fmt::Display for ScoringScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoringScheme::Rk => "RK",
            ScoringScheme::Aasm => "AASM",
        })
    }
}

impl FromStr for ScoringScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "RK" => Ok(ScoringScheme::Rk),
            "AASM" => Ok(ScoringScheme::Aasm),
            other => Err(Error::invalid(format!("unknown scoring scheme `{other}`"))),
        }
    }
}

/// A stage code as scored, before harmonization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawStage {
    W,
    N1,
    N2,
    N3,
    N4,
    Rem,
    Movement,
    Unknown,
}

impl RawStage {
    pub fn name(self) -> &'static str {
        match self {
            RawStage::W => "W",
            RawStage::N1 => "N1",
            RawStage::N2 => "N2",
            RawStage::N3 => "N3",
            RawStage::N4 => "N4",
            RawStage::Rem => "REM",
            RawStage::Movement => "MOVEMENT",
            RawStage::Unknown => "UNKNOWN",
        }
    }

    fn allowed_in(self, scheme: ScoringScheme) -> bool {
        match scheme {
            ScoringScheme::Rk => true,
            ScoringScheme::Aasm => !matches!(self, RawStage::N4 | RawStage::Movement | RawStage::Unknown),
        }
    }
}

impl From<StageLabel> for RawStage {
    fn from(s: StageLabel) -> Self {
        match s {
            StageLabel::W => RawStage::W,
            StageLabel::N1 => RawStage::N1,
            StageLabel::N2 => RawStage::N2,
            StageLabel::N3 => RawStage::N3,
            StageLabel::Rem => RawStage::Rem,
        }
    }
}

impl FromStr for RawStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "W" => RawStage::W,
            "N1" => RawStage::N1,
            "N2" => RawStage::N2,
            "N3" => RawStage::N3,
            "N4" => RawStage::N4,
            "REM" => RawStage::Rem,
            "MOVEMENT" => RawStage::Movement,
            "UNKNOWN" => RawStage::Unknown,
            other => {
                return Err(Error::UnknownStage {
                    stage: other.to_string(),
                    scheme: "raw".into(),
                })
            }
        })
    }
}

/// Maps scored codes onto the five-stage set.
///
/// Under R&K, N4 merges into N3 and MOVEMENT/UNKNOWN epochs come back as
/// `None` with a `false` entry in the kept mask. AASM codes pass through.
pub fn harmonize_labels(raw: &[RawStage], scheme: ScoringScheme) -> Result<(Vec<Option<StageLabel>>, Vec<bool>)> {
    let mut labels = Vec::with_capacity(raw.len());
    let mut kept = Vec::with_capacity(raw.len());
    for &code in raw {
        if !code.allowed_in(scheme) {
            return Err(Error::UnknownStage {
                stage: code.name().into(),
                scheme: scheme.to_string(),
            });
        }
        let label = match code {
            RawStage::W => Some(StageLabel::W),
            RawStage::N1 => Some(StageLabel::N1),
            RawStage::N2 => Some(StageLabel::N2),
            RawStage::N3 | RawStage::N4 => Some(StageLabel::N3),
            RawStage::Rem => Some(StageLabel::Rem),
            RawStage::Movement | RawStage::Unknown => None,
        };
        kept.push(label.is_some());
        labels.push(label);
    }
    Ok((labels, kept))
}
