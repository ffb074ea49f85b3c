//! Polyphase rational resampling with a windowed-sinc anti-aliasing filter.

use std::f64::consts::PI;

use super::{Channel, RecordingBundle};
use crate::error::{Error, Result};

pub const TARGET_RATE_HZ: u32 = 100;

/// Low-pass cutoff as a fraction of the output sample rate.
const CUTOFF_FRACTION: f64 = 0.45;
/// Transition band width as a fraction of the output sample rate.
const TRANSITION_FRACTION: f64 = 0.1;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Blackman-windowed sinc designed at the upsampled rate, unit DC gain.
fn design_lowpass(up_rate_hz: f64, cutoff_hz: f64, transition_hz: f64) -> Vec<f64> {
    let mut n = (5.5 * up_rate_hz / transition_hz).ceil() as usize;
    if n % 2 == 0 {
        n += 1;
    }
    let mid = (n - 1) as f64 / 2.0;
    let fc = cutoff_hz / up_rate_hz;
    let mut h: Vec<f64> = (0..n)
        .map(|k| {
            let x = k as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let phase = 2.0 * PI * k as f64 / (n - 1) as f64;
            let window = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Resamples `samples` from `src_hz` down to `dst_hz`.
///
/// Only downsampling (or identity) is supported. The output has
/// `floor(len * dst / src)` samples and is aligned so that output sample `m`
/// sits at time `m / dst_hz`.
pub fn resample(samples: &[f32], src_hz: u32, dst_hz: u32) -> Result<Vec<f32>> {
    if src_hz == 0 || dst_hz == 0 || src_hz < dst_hz {
        return Err(Error::UnsupportedRate { src_hz, dst_hz });
    }
    if src_hz == dst_hz {
        return Ok(samples.to_vec());
    }
    let g = gcd(src_hz, dst_hz);
    let up = (dst_hz / g) as usize;
    let down = (src_hz / g) as usize;
    let up_rate = f64::from(src_hz) * up as f64;
    let h = design_lowpass(
        up_rate,
        CUTOFF_FRACTION * f64::from(dst_hz),
        TRANSITION_FRACTION * f64::from(dst_hz),
    );
    let delay = (h.len() - 1) / 2;
    let out_len = samples.len() * up / down;
    let gain = up as f64;
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let pos = m * down + delay;
        // input samples i with 0 <= pos - i*up < h.len()
        let i_hi = (pos / up).min(samples.len().saturating_sub(1));
        let i_lo = (pos + up).saturating_sub(h.len()) / up;
        let mut acc = 0.0;
        let mut i = i_lo;
        while i <= i_hi {
            let k = pos - i * up;
            if k < h.len() {
                acc += f64::from(samples[i]) * h[k];
            }
            i += 1;
        }
        out.push((acc * gain) as f32);
    }
    Ok(out)
}

pub fn resample_to_100hz(samples: &[f32], src_hz: u32) -> Result<Vec<f32>> {
    resample(samples, src_hz, TARGET_RATE_HZ)
}

/// Resamples every channel of a bundle to 100 Hz.
pub fn resample_bundle(bundle: &RecordingBundle) -> Result<RecordingBundle> {
    let src = bundle.sample_rate_hz();
    if src == TARGET_RATE_HZ {
        return Ok(bundle.clone());
    }
    let channels = bundle
        .channels
        .iter()
        .map(|c| {
            Ok(Channel {
                name: c.name.clone(),
                sample_rate_hz: TARGET_RATE_HZ,
                samples: resample_to_100hz(&c.samples, src)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = RecordingBundle {
        channels,
        ..bundle.clone()
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(rate: u32, freq: f64, seconds: usize) -> Vec<f32> {
        (0..rate as usize * seconds)
            .map(|i| (2.0 * PI * freq * i as f64 / f64::from(rate)).sin() as f32)
            .collect()
    }

    fn rms(x: &[f32]) -> f64 {
        (x.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn identity_at_100hz() {
        let x = sine(100, 3.0, 2);
        assert_eq!(resample_to_100hz(&x, 100).unwrap(), x);
    }

    #[test]
    fn passband_sinusoid_matches_analytic_samples() {
        for src in [200u32, 256, 500] {
            let x = sine(src, 10.0, 30);
            let y = resample_to_100hz(&x, src).unwrap();
            assert_eq!(y.len(), 3000);
            // skip the filter's edge transient
            let expected = sine(100, 10.0, 30);
            let interior = 200..2800;
            let max_err = interior
                .clone()
                .map(|i| (y[i] - expected[i]).abs())
                .fold(0.0f32, f32::max);
            assert!(max_err < 0.01, "src {src}: max error {max_err}");
            let ratio = rms(&y[interior.clone()]) / rms(&expected[interior]);
            assert!((ratio - 1.0).abs() < 0.01, "src {src}: amplitude ratio {ratio}");
        }
    }

    #[test]
    fn aliasing_band_is_suppressed() {
        let x = sine(200, 70.0, 30);
        let y = resample_to_100hz(&x, 200).unwrap();
        let ratio = rms(&y[200..2800]) / rms(&x);
        assert!(ratio < 0.05, "residual {ratio}");
    }

    #[test]
    fn upsampling_is_unsupported() {
        assert!(matches!(
            resample_to_100hz(&[0.0; 10], 50),
            Err(Error::UnsupportedRate { .. })
        ));
        assert!(resample_to_100hz(&[0.0; 10], 0).is_err());
    }

    #[test]
    fn bundle_resampling_keeps_epoch_grid() {
        let b = RecordingBundle {
            subject_id: "x".into(),
            channels: vec![Channel {
                name: "EEG".into(),
                sample_rate_hz: 256,
                samples: sine(256, 5.0, 60),
            }],
            epoch_len_s: 30,
            labels: vec![crate::signal_io::StageLabel::W; 2],
            in_bed_range: None,
            zero_padded_edges: false,
        };
        let r = resample_bundle(&b).unwrap();
        assert_eq!(r.sample_rate_hz(), 100);
        assert_eq!(r.channels[0].samples.len(), 6000);
    }
}
