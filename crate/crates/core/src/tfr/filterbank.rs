use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::Spectrogram;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterBankKind {
    /// Fixed triangular bank.
    Triangular,
    /// Triangular initialization, trained jointly with the network.
    Learnable,
}

impl fmt::Display for FilterBankKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterBankKind::Triangular => "triangular",
            FilterBankKind::Learnable => "learnable",
        })
    }
}

impl FromStr for FilterBankKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triangular" => Ok(FilterBankKind::Triangular),
            "learnable" => Ok(FilterBankKind::Learnable),
            other => Err(Error::invalid(format!("unknown filter bank kind `{other}`"))),
        }
    }
}

/// M x F matrix of non-negative gains, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub weights: Vec<f64>,
    pub n_filters: usize,
    pub n_freq: usize,
    pub kind: FilterBankKind,
}

impl FilterBank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_freq..(m + 1) * self.n_freq]
    }

    /// Hex SHA-256 over kind, shape and the exact weight bits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.to_string().as_bytes());
        h.update((self.n_filters as u32).to_le_bytes());
        h.update((self.n_freq as u32).to_le_bytes());
        for w in &self.weights {
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.n_filters * self.n_freq {
            return Err(Error::shape("filter bank weights do not match M x F"));
        }
        for m in 0..self.n_filters {
            let row = self.row(m);
            if row.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::invalid(format!("filter {m} has a negative or non-finite gain")));
            }
            if !row.iter().any(|&w| w > 0.0) {
                return Err(Error::invalid(format!("filter {m} is all zero")));
            }
        }
        Ok(())
    }
}

/// `m` unit-sum triangular filters with peaks linearly spaced on
/// [0, Nyquist] over `n_freq` linearly spaced bins. Adjacent triangles cross
/// at half height.
pub fn make_triangular_filterbank(m: usize, n_freq: usize, sample_rate_hz: u32) -> Result<FilterBank> {
    if m < 2 || m > n_freq {
        return Err(Error::invalid(format!("filter count {m} must lie in [2, {n_freq}]")));
    }
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    let spacing = nyquist / (m - 1) as f64;
    let bin_hz = nyquist / (n_freq - 1) as f64;
    let mut weights = vec![0.0; m * n_freq];
    for i in 0..m {
        let peak = i as f64 * spacing;
        let row = &mut weights[i * n_freq..(i + 1) * n_freq];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = (1.0 - (f - peak).abs() / spacing).max(0.0);
        }
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= sum);
    }
    Ok(FilterBank {
        weights,
        n_filters: m,
        n_freq,
        kind: FilterBankKind::Triangular,
    })
}

/// M x T grid `out[m][t] = sum_f weights[m][f] * spec[f][t]`.
pub fn apply_filterbank(spec: &Spectrogram, fb: &FilterBank) -> Result<Vec<f64>> {
    if fb.n_freq != spec.n_freq {
        return Err(Error::shape(format!(
            "filter bank expects {} bins, spectrogram has {}",
            fb.n_freq, spec.n_freq
        )));
    }
    let t_len = spec.n_frames;
    let mut out = vec![0.0; fb.n_filters * t_len];
    for m in 0..fb.n_filters {
        let row = fb.row(m);
        let dst = &mut out[m * t_len..(m + 1) * t_len];
        for (f, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let src = &spec.values[f * t_len..(f + 1) * t_len];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(n_freq: usize, n_frames: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Spectrogram {
            values: (0..n_freq * n_frames).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            n_freq,
            n_frames,
        }
    }

    #[test]
    fn canonical_bank_shape_and_unit_rows() {
        let fb = make_triangular_filterbank(20, 129, 100).unwrap();
        assert_eq!(fb.weights.len(), 20 * 129);
        fb.validate().unwrap();
        for m in 0..20 {
            let s: f64 = fb.row(m).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn square_bank_is_identity() {
        let fb = make_triangular_filterbank(129, 129, 100).unwrap();
        let s = spec(129, 29, 1);
        assert_eq!(apply_filterbank(&s, &fb).unwrap(), s.values);
    }

    #[test]
    fn two_filters_over_five_bins_by_hand() {
        // bins at 0,1,2,3,4 Hz; peaks at 0 and 4 Hz; raw gains 1-|f-peak|/4
        let fb = make_triangular_filterbank(2, 5, 8).unwrap();
        let expected = [0.4, 0.3, 0.2, 0.1, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4];
        for (a, b) in fb.weights.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{:?}", fb.weights);
        }
    }

    #[test]
    fn adjacent_filters_cross_at_half_height() {
        // before normalization interior peaks have gain 1 and the midpoint 0.5
        let fb = make_triangular_filterbank(5, 9, 16).unwrap();
        let row1 = fb.row(1);
        let peak = row1[2];
        assert!((row1[1] / peak - 0.5).abs() < 1e-12);
        assert!((row1[3] / peak - 0.5).abs() < 1e-12);
        let argmax = |r: &[f64]| (0..r.len()).max_by(|&a, &b| r[a].partial_cmp(&r[b]).unwrap()).unwrap();
        let peaks: Vec<usize> = (0..5).map(|m| argmax(fb.row(m))).collect();
        assert_eq!(peaks, vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn out_of_range_filter_count() {
        assert!(make_triangular_filterbank(1, 129, 100).is_err());
        assert!(make_triangular_filterbank(130, 129, 100).is_err());
    }

    #[test]
    fn all_ones_row_sums_columns() {
        let s = spec(6, 4, 2);
        let fb = FilterBank {
            weights: vec![1.0; 6],
            n_filters: 1,
            n_freq: 6,
            kind: FilterBankKind::Triangular,
        };
        let out = apply_filterbank(&s, &fb).unwrap();
        for t in 0..4 {
            let col: f64 = (0..6).map(|f| s.get(f, t)).sum();
            assert!((out[t] - col).abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_reduction_and_naive_oracle() {
        let fb = make_triangular_filterbank(20, 129, 100).unwrap();
        assert_eq!(apply_filterbank(&spec(129, 29, 3), &fb).unwrap().len(), 20 * 29);

        let s = spec(5, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fb = FilterBank {
            weights: (0..10).map(|_| rng.gen_range(0.0..1.0)).collect(),
            n_filters: 2,
            n_freq: 5,
            kind: FilterBankKind::Triangular,
        };
        let got = apply_filterbank(&s, &fb).unwrap();
        for m in 0..2 {
            for t in 0..3 {
                let mut acc = 0.0;
                for f in 0..5 {
                    acc += fb.weights[m * 5 + f] * s.values[f * 3 + t];
                }
                assert_eq!(got[m * 3 + t], acc);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let fb = make_triangular_filterbank(20, 129, 100).unwrap();
        assert!(apply_filterbank(&spec(128, 29, 0), &fb).is_err());
    }

    proptest! {
        #[test]
        fn triangular_rows_unit_sum_non_negative(m in 2usize..60, extra in 0usize..80) {
            let f = m + extra;
            let fb = make_triangular_filterbank(m, f, 100).unwrap();
            fb.validate().unwrap();
            for i in 0..m {
                let s: f64 = fb.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(fb.row(i).iter().all(|&w| w >= 0.0));
            }
        }

        #[test]
        fn application_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let fb = make_triangular_filterbank(20, 129, 100).unwrap();
            let s1 = spec(129, 29, seed);
            let s2 = spec(129, 29, seed.wrapping_add(1));
            let mix = Spectrogram {
                values: s1.values.iter().zip(&s2.values).map(|(x, y)| a * x + b * y).collect(),
                ..s1.clone()
            };
            let lhs = apply_filterbank(&mix, &fb).unwrap();
            let r1 = apply_filterbank(&s1, &fb).unwrap();
            let r2 = apply_filterbank(&s2, &fb).unwrap();
            for ((l, x), y) in lhs.iter().zip(&r1).zip(&r2) {
                let rhs = a * x + b * y;
                let scale = l.abs().max(rhs.abs()).max(1.0);
                prop_assert!((l - rhs).abs() / scale < 1e-12);
            }
        }
    }
}
