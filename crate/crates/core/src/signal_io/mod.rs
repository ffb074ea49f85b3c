//! Recording bundles: on-disk format, label harmonization, epoch-grid
//! conversions, resampling and cross-validation splits.

mod bundle;
mod grid;
mod harmonize;
mod resample;
mod split;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use bundle::{load_bundle, write_bundle, LABEL_FILE, MANIFEST_FILE};
pub use grid::{convert_epoch_grid_20_to_30, trim_in_bed};
pub use harmonize::{harmonize_labels, RawStage, ScoringScheme};
pub use resample::{resample, resample_bundle, resample_to_100hz, TARGET_RATE_HZ};
pub use split::{make_split_plan, Fold, SplitPlan, SplitProtocol};

/// Number of sleep stages after harmonization.
pub const NUM_STAGES: usize = 5;

/// One of the five harmonized sleep stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StageLabel {
    W,
    N1,
    N2,
    N3,
    Rem,
}

impl StageLabel {
    pub const ALL: [StageLabel; NUM_STAGES] = [
        StageLabel::W,
        StageLabel::N1,
        StageLabel::N2,
        StageLabel::N3,
        StageLabel::Rem,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<StageLabel> {
        Self::ALL.get(index).copied()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            StageLabel::W => "W",
            StageLabel::N1 => "N1",
            StageLabel::N2 => "N2",
            StageLabel::N3 => "N3",
            StageLabel::Rem => "REM",
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for StageLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "W" => Ok(StageLabel::W),
            "N1" => Ok(StageLabel::N1),
            "N2" => Ok(StageLabel::N2),
            "N3" => Ok(StageLabel::N3),
            "REM" => Ok(StageLabel::Rem),
            other => Err(Error::UnknownStage {
                stage: other.to_string(),
                scheme: "harmonized".into(),
            }),
        }
    }
}

/// A single named signal channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub sample_rate_hz: u32,
    pub samples: Vec<f32>,
}

/// A subject's multichannel recording together with its epoch labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingBundle {
    pub subject_id: String,
    pub channels: Vec<Channel>,
    pub epoch_len_s: u32,
    pub labels: Vec<StageLabel>,
    /// Inclusive epoch range between lights-off and lights-on.
    pub in_bed_range: Option<(usize, usize)>,
    /// Set once a 20 s grid has been widened to 30 s; the first and last
    /// epochs then carry zero padding.
    pub zero_padded_edges: bool,
}

impl RecordingBundle {
    pub fn sample_rate_hz(&self) -> u32 {
        self.channels.first().map_or(0, |c| c.sample_rate_hz)
    }

    pub fn samples_per_epoch(&self) -> usize {
        self.epoch_len_s as usize * self.sample_rate_hz() as usize
    }

    pub fn epoch_count(&self) -> usize {
        self.labels.len()
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    /// Samples of `channel` that fall inside epoch `epoch`.
    pub fn epoch_samples(&self, channel: usize, epoch: usize) -> &[f32] {
        let spe = self.samples_per_epoch();
        &self.channels[channel].samples[epoch * spe..(epoch + 1) * spe]
    }

    /// Checks every structural invariant of a bundle.
    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::InvalidBundle("empty subject id".into()));
        }
        let first = self
            .channels
            .first()
            .ok_or_else(|| Error::InvalidBundle("no channels".into()))?;
        if first.sample_rate_hz == 0 {
            return Err(Error::InvalidBundle("sample rate must be positive".into()));
        }
        if self.epoch_len_s == 0 {
            return Err(Error::InvalidBundle("epoch length must be positive".into()));
        }
        for c in &self.channels {
            if c.sample_rate_hz != first.sample_rate_hz {
                return Err(Error::InvalidBundle(format!(
                    "channel `{}` has rate {} Hz, expected {} Hz",
                    c.name, c.sample_rate_hz, first.sample_rate_hz
                )));
            }
            if c.samples.len() != first.samples.len() {
                return Err(Error::InvalidBundle(format!(
                    "channel length mismatch: `{}` has {} samples, `{}` has {}",
                    c.name,
                    c.samples.len(),
                    first.name,
                    first.samples.len()
                )));
            }
        }
        let spe = self.samples_per_epoch();
        if first.samples.len() % spe != 0 {
            return Err(Error::InvalidBundle(format!(
                "{} samples is not a whole number of {} s epochs",
                first.samples.len(),
                self.epoch_len_s
            )));
        }
        let epochs = first.samples.len() / spe;
        if epochs != self.labels.len() {
            return Err(Error::InvalidBundle(format!(
                "{} labels for {} epochs",
                self.labels.len(),
                epochs
            )));
        }
        if let Some((start, end)) = self.in_bed_range {
            if start > end || end >= epochs {
                return Err(Error::InvalidBundle(format!(
                    "in-bed range ({start}, {end}) outside [0, {epochs})"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(lens: &[usize], labels: usize) -> RecordingBundle {
        RecordingBundle {
            subject_id: "s".into(),
            channels: lens
                .iter()
                .enumerate()
                .map(|(i, &n)| Channel {
                    name: format!("c{i}"),
                    sample_rate_hz: 100,
                    samples: vec![0.0; n],
                })
                .collect(),
            epoch_len_s: 30,
            labels: vec![StageLabel::W; labels],
            in_bed_range: None,
            zero_padded_edges: false,
        }
    }

    #[test]
    fn stage_roundtrip() {
        for s in StageLabel::ALL {
            assert_eq!(s.mnemonic().parse::<StageLabel>().unwrap(), s);
            assert_eq!(StageLabel::from_index(s.index()), Some(s));
        }
        assert!("N4".parse::<StageLabel>().is_err());
        assert_eq!(StageLabel::from_index(5), None);
    }

    #[test]
    fn validate_catches_broken_invariants() {
        assert!(bundle(&[3000, 3000], 1).validate().is_ok());
        assert!(bundle(&[3000, 2999], 1).validate().is_err());
        assert!(bundle(&[3001], 1).validate().is_err());
        assert!(bundle(&[6000], 1).validate().is_err());
        let mut b = bundle(&[6000], 2);
        b.in_bed_range = Some((1, 2));
        assert!(b.validate().is_err());
        b.in_bed_range = Some((0, 1));
        assert!(b.validate().is_ok());
    }
}
