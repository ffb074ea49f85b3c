use crate::error::{Error, Result};
use crate::signal_io::{StageLabel, NUM_STAGES};

/// A band of Gaussian noise, flat over `center +- bandwidth / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    /// Variance contributed by the band.
    pub power: f64,
}

const fn band(center_hz: f64, bandwidth_hz: f64, power: f64) -> Band {
    Band {
        center_hz,
        bandwidth_hz,
        power,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSignature {
    pub bands: Vec<Band>,
    /// Variance of the broadband (white) floor.
    pub floor: f64,
}

/// Per-channel spectral content of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSignature {
    pub channels: Vec<ChannelSignature>,
}

/// Everything the generator needs besides the stage sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SignatureSet {
    pub channel_names: Vec<String>,
    pub sample_rate_hz: u32,
    /// Indexed by `StageLabel::index`.
    pub stages: Vec<StageSignature>,
    /// Log-normal sigma of the per-epoch gain of every band.
    pub jitter: f64,
    /// Peak share of a differing neighbour's signal at an epoch boundary.
    pub transition_blend: f64,
    /// Seconds over which that share decays to zero inside the epoch.
    pub transition_span_s: f64,
}

pub const DEFAULT_CHANNELS: [&str; 3] = ["EEG", "EOG", "EMG"];

fn default_stage(stage: StageLabel) -> [ChannelSignature; 3] {
    let ch = |bands: Vec<Band>, floor: f64| ChannelSignature { bands, floor };
    // channel order: EEG, EOG, EMG
    match stage {
        StageLabel::W => [
            ch(vec![band(10.0, 4.0, 20.0), band(20.0, 10.0, 6.0)], 1.0),
            ch(vec![band(1.0, 1.5, 8.0)], 1.0),
            ch(vec![band(30.0, 30.0, 40.0)], 1.0),
        ],
        StageLabel::N1 => [
            ch(vec![band(5.5, 3.0, 15.0), band(10.0, 4.0, 4.0)], 1.0),
            ch(vec![band(0.75, 1.0, 6.0)], 1.0),
            ch(vec![band(30.0, 30.0, 12.0)], 1.0),
        ],
        StageLabel::N2 => [
            ch(
                vec![band(13.5, 5.0, 12.0), band(5.5, 3.0, 12.0), band(1.25, 1.5, 8.0)],
                1.0,
            ),
            ch(vec![band(1.0, 1.5, 2.0)], 1.0),
            ch(vec![band(30.0, 30.0, 6.0)], 1.0),
        ],
        StageLabel::N3 => [
            ch(vec![band(1.25, 1.5, 200.0), band(5.5, 3.0, 6.0)], 1.0),
            ch(vec![band(1.25, 1.5, 40.0)], 1.0),
            ch(vec![band(30.0, 30.0, 5.0)], 1.0),
        ],
        StageLabel::Rem => [
            ch(vec![band(5.5, 3.0, 15.0), band(10.0, 4.0, 4.0)], 1.0),
            ch(vec![band(2.0, 3.0, 40.0)], 1.0),
            ch(vec![band(30.0, 30.0, 1.0)], 1.0),
        ],
    }
}

impl SignatureSet {
    /// Default signatures for the first `n_channels` of EEG, EOG, EMG at 100 Hz.
    pub fn default_for(n_channels: usize) -> Result<Self> {
        if n_channels == 0 || n_channels > DEFAULT_CHANNELS.len() {
            return Err(Error::invalid(format!(
                "default signatures cover 1 to {} channels, got {n_channels}",
                DEFAULT_CHANNELS.len()
            )));
        }
        let stages = StageLabel::ALL
            .iter()
            .map(|&s| StageSignature {
                channels: default_stage(s).into_iter().take(n_channels).collect(),
            })
            .collect();
        let set = SignatureSet {
            channel_names: DEFAULT_CHANNELS[..n_channels].iter().map(|s| s.to_string()).collect(),
            sample_rate_hz: 100,
            stages,
            jitter: 0.5,
            transition_blend: 0.5,
            transition_span_s: 10.0,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn stage(&self, s: StageLabel) -> &StageSignature {
        &self.stages[s.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 || self.channel_names.is_empty() {
            return Err(Error::invalid("signatures need a sample rate and at least one channel"));
        }
        if self.stages.len() != NUM_STAGES {
            return Err(Error::invalid(format!(
                "{} stage signatures, expected {NUM_STAGES}",
                self.stages.len()
            )));
        }
        let nyquist = f64::from(self.sample_rate_hz) / 2.0;
        for (s, sig) in self.stages.iter().enumerate() {
            if sig.channels.len() != self.channel_names.len() {
                return Err(Error::invalid(format!(
                    "stage {} has {} channel signatures for {} channels",
                    StageLabel::ALL[s],
                    sig.channels.len(),
                    self.channel_names.len()
                )));
            }
            for c in &sig.channels {
                if !(c.floor > 0.0 && c.floor.is_finite()) {
                    return Err(Error::invalid("noise floor must be positive"));
                }
                for b in &c.bands {
                    let (lo, hi) = (b.center_hz - b.bandwidth_hz / 2.0, b.center_hz + b.bandwidth_hz / 2.0);
                    if !(b.power > 0.0 && b.power.is_finite()) {
                        return Err(Error::invalid(format!(
                            "band at {} Hz has non-positive power",
                            b.center_hz
                        )));
                    }
                    if !(b.bandwidth_hz > 0.0 && lo >= 0.0 && hi < nyquist) {
                        return Err(Error::invalid(format!(
                            "band {lo}..{hi} Hz must lie below the {nyquist} Hz Nyquist frequency"
                        )));
                    }
                }
            }
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.transition_blend) || !(self.transition_span_s >= 0.0) {
            return Err(Error::invalid(
                "transition blend must be in [0, 1] with a non-negative span",
            ));
        }
        Ok(())
    }
}
