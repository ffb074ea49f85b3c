use super::{apply_filterbank, FilterBank, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::signal_io::RecordingBundle;

/// P x M x T time-frequency image, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TfImage {
    pub values: Vec<f64>,
    pub n_channels: usize,
    pub n_filters: usize,
    pub n_frames: usize,
    pub channel_names: Vec<String>,
}

impl TfImage {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_channels, self.n_filters, self.n_frames)
    }

    pub fn plane(&self, p: usize) -> &[f64] {
        let n = self.n_filters * self.n_frames;
        &self.values[p * n..(p + 1) * n]
    }

    pub fn get(&self, p: usize, m: usize, t: usize) -> f64 {
        self.values[(p * self.n_filters + m) * self.n_frames + t]
    }
}

/// Turns bundle epochs into stacked, filtered log-power images.
pub struct TfImageBuilder {
    stft: Stft,
    channels: Vec<String>,
    banks: Vec<FilterBank>,
}

impl TfImageBuilder {
    pub fn new(config: StftConfig, channels: &[String], banks: Vec<FilterBank>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("no channels selected"));
        }
        if banks.len() != channels.len() {
            return Err(Error::invalid(format!(
                "{} filter banks for {} channels",
                banks.len(),
                channels.len()
            )));
        }
        for b in &banks {
            b.validate()?;
            if b.n_freq != config.n_freq() || b.n_filters != banks[0].n_filters {
                return Err(Error::shape("filter banks disagree with the transform or each other"));
            }
        }
        Ok(TfImageBuilder {
            stft: Stft::new(config)?,
            channels: channels.to_vec(),
            banks,
        })
    }

    pub fn banks(&self) -> &[FilterBank] {
        &self.banks
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn build(&self, bundle: &RecordingBundle, epoch_index: usize) -> Result<TfImage> {
        if epoch_index >= bundle.epoch_count() {
            return Err(Error::invalid(format!(
                "epoch {epoch_index} out of range for {} epochs",
                bundle.epoch_count()
            )));
        }
        if bundle.sample_rate_hz() != self.stft.config().sample_rate_hz {
            return Err(Error::invalid(format!(
                "bundle sampled at {} Hz, transform expects {} Hz",
                bundle.sample_rate_hz(),
                self.stft.config().sample_rate_hz
            )));
        }
        let mut values = Vec::new();
        let mut n_frames = 0;
        for (name, bank) in self.channels.iter().zip(&self.banks) {
            let idx = bundle
                .channels
                .iter()
                .position(|c| &c.name == name)
                .ok_or_else(|| Error::invalid(format!("missing channel `{name}`")))?;
            let spec = self.stft.log_power(bundle.epoch_samples(idx, epoch_index))?;
            n_frames = spec.n_frames;
            values.extend(apply_filterbank(&spec, bank)?);
        }
        Ok(TfImage {
            values,
            n_channels: self.channels.len(),
            n_filters: self.banks[0].n_filters,
            n_frames,
            channel_names: self.channels.clone(),
        })
    }
}

/// Builds one image with the canonical transform.
pub fn build_tf_image(
    bundle: &RecordingBundle,
    epoch_index: usize,
    channel_selection: &[String],
    fb_per_channel: &[FilterBank],
) -> Result<TfImage> {
    let config = StftConfig {
        sample_rate_hz: bundle.sample_rate_hz(),
        ..StftConfig::default()
    };
    TfImageBuilder::new(config, channel_selection, fb_per_channel.to_vec())?.build(bundle, epoch_index)
}

/// Per-channel zero-mean, unit-variance scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n_channels: usize) -> Self {
        Standardizer {
            mean: vec![0.0; n_channels],
            std: vec![1.0; n_channels],
        }
    }

    /// Fits channel statistics over `images`, each a flat P x M x T buffer.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a [f32]>, n_channels: usize) -> Result<Self> {
        let mut sum = vec![0.0f64; n_channels];
        let mut sum_sq = vec![0.0f64; n_channels];
        let mut count = 0usize;
        let mut plane = 0;
        for img in images {
            if img.len() % n_channels != 0 {
                return Err(Error::shape("image size is not a multiple of the channel count"));
            }
            plane = img.len() / n_channels;
            for p in 0..n_channels {
                for &v in &img[p * plane..(p + 1) * plane] {
                    let v = f64::from(v);
                    sum[p] += v;
                    sum_sq[p] += v * v;
                }
            }
            count += 1;
        }
        if count == 0 || plane == 0 {
            return Err(Error::invalid("cannot fit standardization on no images"));
        }
        let n = (count * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / n - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, image: &mut [f64]) {
        let plane = image.len() / self.mean.len();
        for (p, chunk) in image.chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[p], self.std[p]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{Channel, StageLabel};
    use crate::tfr::make_triangular_filterbank;

    fn bundle() -> RecordingBundle {
        let tone = |f: f64| -> Vec<f32> {
            (0..6000)
                .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 100.0).sin() as f32)
                .collect()
        };
        RecordingBundle {
            subject_id: "t".into(),
            channels: vec![
                Channel {
                    name: "EEG".into(),
                    sample_rate_hz: 100,
                    samples: tone(10.0),
                },
                Channel {
                    name: "EOG".into(),
                    sample_rate_hz: 100,
                    samples: tone(1.0),
                },
                Channel {
                    name: "EMG".into(),
                    sample_rate_hz: 100,
                    samples: tone(30.0),
                },
            ],
            epoch_len_s: 30,
            labels: vec![StageLabel::W, StageLabel::N2],
            in_bed_range: None,
            zero_padded_edges: false,
        }
    }

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn plane_counts_and_order() {
        let b = bundle();
        let fb = make_triangular_filterbank(20, 129, 100).unwrap();
        let one = build_tf_image(&b, 0, &names(&["EEG"]), &[fb.clone()]).unwrap();
        assert_eq!(one.dims(), (1, 20, 29));
        let three = build_tf_image(&b, 1, &names(&["EEG", "EOG", "EMG"]), &vec![fb.clone(); 3]).unwrap();
        assert_eq!(three.dims(), (3, 20, 29));
        assert_eq!(three.channel_names, names(&["EEG", "EOG", "EMG"]));
        let eog = build_tf_image(&b, 1, &names(&["EOG"]), &[fb]).unwrap();
        assert_eq!(three.plane(1), eog.plane(0));
    }

    #[test]
    fn identical_channels_give_identical_planes() {
        let b = bundle();
        let fb = make_triangular_filterbank(20, 129, 100).unwrap();
        let img = build_tf_image(&b, 0, &names(&["EEG", "EEG"]), &vec![fb; 2]).unwrap();
        assert_eq!(img.plane(0), img.plane(1));
    }

    #[test]
    fn bad_epoch_and_missing_channel() {
        let b = bundle();
        let fb = make_triangular_filterbank(20, 129, 100).unwrap();
        assert!(build_tf_image(&b, 2, &names(&["EEG"]), &[fb.clone()]).is_err());
        assert!(build_tf_image(&b, 0, &names(&["ECG"]), &[fb]).is_err());
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let a: Vec<f32> = (0..12).map(|i| i as f32).collect();
        let b: Vec<f32> = (0..12).map(|i| (i * i) as f32).collect();
        let st = Standardizer::fit([a.as_slice(), b.as_slice()], 2).unwrap();
        let mut vals: Vec<Vec<f64>> = [&a, &b]
            .iter()
            .map(|x| x.iter().map(|&v| f64::from(v)).collect())
            .collect();
        for v in &mut vals {
            st.apply(v);
        }
        for p in 0..2 {
            let all: Vec<f64> = vals.iter().flat_map(|v| v[p * 6..(p + 1) * 6].to_vec()).collect();
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / all.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }
}
