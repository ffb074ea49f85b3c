//! Synthetic multichannel recordings: a calibrated first-order Markov stage
//! sequence rendered as stage-dependent band-limited noise.

mod markov;
mod signature;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub use markov::{calibrate_transition_matrix, empirical_lag_same, MarkovStageModel, DEFAULT_STATIONARY};
pub use signature::{Band, ChannelSignature, SignatureSet, StageSignature, DEFAULT_CHANNELS};

use crate::error::{Error, Result};
use crate::signal_io::{Channel, RecordingBundle, StageLabel};

pub const EPOCH_LEN_S: u32 = 30;

/// Per-subject seed derived from a corpus seed (splitmix64 finalizer).
pub fn subject_seed(seed: u64, subject: usize) -> u64 {
    let mut z = seed.wrapping_add((subject as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn subject_id(subject: usize) -> String {
    format!("syn{subject:03}")
}

struct Renderer {
    n: usize,
    bin_hz: f64,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl Renderer {
    fn new(n: usize, sample_rate_hz: u32) -> Self {
        let ifft = FftPlanner::new().plan_fft_inverse(n);
        Renderer {
            n,
            bin_hz: f64::from(sample_rate_hz) / n as f64,
            ifft,
            buf: vec![Complex::new(0.0, 0.0); n],
        }
    }

    /// One epoch of noise whose per-bin variance follows the signature,
    /// each band scaled by its own log-normal gain.
    fn render<R: Rng + ?Sized>(&mut self, sig: &ChannelSignature, jitter: f64, rng: &mut R) -> Result<Vec<f64>> {
        let half = self.n / 2;
        // variance per positive-frequency bin, DC and Nyquist left empty
        let mut psd = vec![sig.floor / (half - 1) as f64; half];
        psd[0] = 0.0;
        let gain = LogNormal::new(0.0, jitter).map_err(|e| Error::invalid(e.to_string()))?;
        for b in &sig.bands {
            let g: f64 = if jitter > 0.0 { gain.sample(rng) } else { 1.0 };
            let lo = ((b.center_hz - b.bandwidth_hz / 2.0) / self.bin_hz).ceil().max(1.0) as usize;
            let hi = (((b.center_hz + b.bandwidth_hz / 2.0) / self.bin_hz).floor() as usize).min(half - 1);
            if hi < lo {
                continue;
            }
            let share = b.power * g / (hi - lo + 1) as f64;
            for p in &mut psd[lo..=hi] {
                *p += share;
            }
        }
        // x_n = (1/N) sum X_k e^{...}: Var x = (2/N^2) sum_k E|X_k|^2 over
        // positive bins, so E|X_k|^2 = N^2 p_k / 2.
        let scale = self.n as f64 / 2.0;
        self.buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (k, &p) in psd.iter().enumerate().skip(1) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let a = scale * p.sqrt();
            self.buf[k] = Complex::new(a * re, a * im);
            self.buf[self.n - k] = Complex::new(a * re, -a * im);
        }
        self.ifft.process(&mut self.buf);
        let inv = 1.0 / self.n as f64;
        Ok(self.buf.iter().map(|c| c.re * inv).collect())
    }
}

/// Renders `labels` through the signatures. Near a boundary with a differing
/// neighbour, the neighbour's signal is cross-faded in with a share falling
/// linearly from `transition_blend` at the boundary to zero after
/// `transition_span_s`.
pub fn render_labels(
    labels: &[StageLabel],
    signatures: &SignatureSet,
    subject_id: &str,
    seed: u64,
) -> Result<RecordingBundle> {
    signatures.validate()?;
    if labels.is_empty() {
        return Err(Error::invalid("a recording needs at least one epoch"));
    }
    let fs = signatures.sample_rate_hz;
    let spe = EPOCH_LEN_S as usize * fs as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut renderer = Renderer::new(spe, fs);
    let span = (signatures.transition_span_s * f64::from(fs)).round() as usize;
    let blend = signatures.transition_blend;
    let mut channels: Vec<Vec<f32>> = vec![Vec::with_capacity(labels.len() * spe); signatures.n_channels()];
    for (n, &l) in labels.iter().enumerate() {
        let prev = n.checked_sub(1).map(|i| labels[i]).filter(|&p| p != l && blend > 0.0);
        let next = labels.get(n + 1).copied().filter(|&q| q != l && blend > 0.0);
        for (c, out) in channels.iter_mut().enumerate() {
            let mut own = renderer.render(&signatures.stage(l).channels[c], signatures.jitter, &mut rng)?;
            for (neigh, at_start) in [(prev, true), (next, false)] {
                let Some(s) = neigh else { continue };
                let other = renderer.render(&signatures.stage(s).channels[c], signatures.jitter, &mut rng)?;
                for i in 0..span.min(spe) {
                    let w = blend * (1.0 - i as f64 / span as f64);
                    let idx = if at_start { i } else { spe - 1 - i };
                    own[idx] = (1.0 - w).sqrt() * own[idx] + w.sqrt() * other[idx];
                }
            }
            out.extend(own.iter().map(|&v| v as f32));
        }
    }
    let bundle = RecordingBundle {
        subject_id: subject_id.to_string(),
        channels: signatures
            .channel_names
            .iter()
            .zip(channels)
            .map(|(name, samples)| Channel {
                name: name.clone(),
                sample_rate_hz: fs,
                samples,
            })
            .collect(),
        epoch_len_s: EPOCH_LEN_S,
        labels: labels.to_vec(),
        in_bed_range: None,
        zero_padded_edges: false,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Draws a stage sequence from `model` and renders it. Deterministic per seed.
pub fn generate_recording(
    model: &MarkovStageModel,
    signatures: &SignatureSet,
    n_epochs: usize,
    subject_id: &str,
    seed: u64,
) -> Result<RecordingBundle> {
    if n_epochs == 0 {
        return Err(Error::invalid("a recording needs at least one epoch"));
    }
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = model.sample_sequence(n_epochs, &mut rng)?;
    render_labels(&labels, signatures, subject_id, seed)
}

/// `n_subjects` recordings with per-subject derived seeds, generated on up to
/// `jobs` threads. The output does not depend on `jobs`.
pub fn generate_corpus(
    model: &MarkovStageModel,
    signatures: &SignatureSet,
    n_subjects: usize,
    epochs_per_subject: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<RecordingBundle>> {
    let jobs = jobs.clamp(1, n_subjects.max(1));
    let mut slots: Vec<Option<Result<RecordingBundle>>> = (0..n_subjects).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in slots.chunks_mut(n_subjects.div_ceil(jobs).max(1)).enumerate() {
            let base = w * n_subjects.div_ceil(jobs).max(1);
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    let s = base + i;
                    *slot = Some(generate_recording(
                        model,
                        signatures,
                        epochs_per_subject,
                        &subject_id(s),
                        subject_seed(seed, s),
                    ));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every subject generated")).collect()
}
