use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Power values are floored here before taking the logarithm.
pub const POWER_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StftConfig {
    pub sample_rate_hz: u32,
    pub window_s: f64,
    pub overlap: f64,
    pub nfft: usize,
}

impl Default for StftConfig {
    /// 2 s Hamming window, 50 % overlap, 256-point transform at 100 Hz.
    fn default() -> Self {
        StftConfig {
            sample_rate_hz: 100,
            window_s: 2.0,
            overlap: 0.5,
            nfft: 256,
        }
    }
}

impl StftConfig {
    pub fn window_len(&self) -> usize {
        (self.window_s * f64::from(self.sample_rate_hz)).round() as usize
    }

    pub fn hop(&self) -> usize {
        ((1.0 - self.overlap) * self.window_len() as f64).round() as usize
    }

    pub fn n_freq(&self) -> usize {
        self.nfft / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        let win = self.window_len();
        if len < win {
            0
        } else {
            (len - win) / self.hop() + 1
        }
    }
}

/// F x T grid of natural-log power, frequency-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub values: Vec<f64>,
    pub n_freq: usize,
    pub n_frames: usize,
}

impl Spectrogram {
    pub fn get(&self, f: usize, t: usize) -> f64 {
        self.values[f * self.n_frames + t]
    }
}

/// Symmetric Hamming window `0.54 - 0.46 cos(2 pi n / (N - 1))`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Reusable short-time Fourier transform with a planned FFT.
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        let win = config.window_len();
        if win == 0 || config.hop() == 0 {
            return Err(Error::invalid("window and hop must be at least one sample"));
        }
        if win > config.nfft {
            return Err(Error::invalid(format!(
                "window of {win} samples exceeds the {}-point transform",
                config.nfft
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(config.nfft);
        Ok(Stft {
            config,
            window: hamming(win),
            fft,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Log-power spectrogram of one epoch.
    pub fn log_power(&self, samples: &[f32]) -> Result<Spectrogram> {
        let win = self.window.len();
        if samples.len() < win {
            return Err(Error::invalid(format!(
                "epoch of {} samples is shorter than the {win}-sample window",
                samples.len()
            )));
        }
        let hop = self.config.hop();
        let n_frames = self.config.n_frames(samples.len());
        let n_freq = self.config.n_freq();
        let mut values = vec![0.0; n_freq * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); self.config.nfft];
        for t in 0..n_frames {
            let frame = &samples[t * hop..t * hop + win];
            for (b, (&s, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(f64::from(s) * w, 0.0);
            }
            for b in &mut buf[win..] {
                *b = Complex::new(0.0, 0.0);
            }
            self.fft.process(&mut buf);
            for (f, c) in buf[..n_freq].iter().enumerate() {
                values[f * n_frames + t] = c.norm_sqr().max(POWER_FLOOR).ln();
            }
        }
        Ok(Spectrogram {
            values,
            n_freq,
            n_frames,
        })
    }
}

/// Log-power spectrogram with the canonical configuration.
pub fn stft_log_power(samples: &[f32]) -> Result<Spectrogram> {
    Stft::new(StftConfig::default())?.log_power(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct discrete Fourier sum over one Hamming-windowed frame.
    fn dft_power(frame: &[f32], nfft: usize, bin: usize) -> f64 {
        let w = hamming(frame.len());
        let (mut re, mut im) = (0.0, 0.0);
        for (n, (&x, &wn)) in frame.iter().zip(&w).enumerate() {
            let phase = -2.0 * PI * (bin * n) as f64 / nfft as f64;
            re += f64::from(x) * wn * phase.cos();
            im += f64::from(x) * wn * phase.sin();
        }
        re * re + im * im
    }

    fn sine(freq: f64) -> Vec<f32> {
        (0..3000)
            .map(|i| (2.0 * PI * freq * i as f64 / 100.0).sin() as f32)
            .collect()
    }

    #[test]
    fn canonical_shape() {
        let s = stft_log_power(&vec![0.5; 3000]).unwrap();
        assert_eq!((s.n_freq, s.n_frames), (129, 29));
    }

    #[test]
    fn zero_epoch_hits_the_floor() {
        let s = stft_log_power(&vec![0.0; 3000]).unwrap();
        assert!(s.values.iter().all(|&v| v == POWER_FLOOR.ln()));
    }

    #[test]
    fn sinusoid_peaks_at_expected_bin_and_matches_dft() {
        let x = sine(10.0);
        let s = stft_log_power(&x).unwrap();
        let expected_bin = (10.0f64 * 256.0 / 100.0).round() as usize;
        assert_eq!(expected_bin, 26);
        for t in 0..s.n_frames {
            let argmax = (0..s.n_freq)
                .max_by(|&a, &b| s.get(a, t).partial_cmp(&s.get(b, t)).unwrap())
                .unwrap();
            assert_eq!(argmax, expected_bin, "frame {t}");
            let frame = &x[t * 100..t * 100 + 200];
            for f in [0, 13, 25, 26, 27, 64, 128] {
                let oracle = dft_power(frame, 256, f).max(POWER_FLOOR);
                let got = s.get(f, t).exp();
                assert!(
                    ((got - oracle) / oracle).abs() < 1e-9,
                    "frame {t} bin {f}: {got} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn short_epoch_is_rejected() {
        assert!(stft_log_power(&[0.0; 199]).is_err());
        let cfg = StftConfig {
            window_s: 3.0,
            ..StftConfig::default()
        };
        assert!(Stft::new(cfg).is_err());
    }

    proptest! {
        #[test]
        fn frame_count_formula(len in 200usize..4000, win_s in 1usize..3, hop_pct in prop::sample::select(vec![0.25f64, 0.5, 0.75])) {
            let cfg = StftConfig { sample_rate_hz: 100, window_s: win_s as f64, overlap: hop_pct, nfft: 512 };
            prop_assume!(len >= cfg.window_len());
            let stft = Stft::new(cfg).unwrap();
            let s = stft.log_power(&vec![1.0; len]).unwrap();
            prop_assert_eq!(s.n_frames, (len - cfg.window_len()) / cfg.hop() + 1);
        }

        #[test]
        fn sinusoid_argmax_is_frame_stationary(freq in 1.0f64..45.0) {
            let s = stft_log_power(&sine(freq)).unwrap();
            let argmax = |t: usize| (0..s.n_freq).max_by(|&a, &b| s.get(a, t).partial_cmp(&s.get(b, t)).unwrap()).unwrap();
            let first = argmax(1);
            for t in 2..s.n_frames - 1 {
                prop_assert_eq!(argmax(t), first);
            }
        }
    }
}
