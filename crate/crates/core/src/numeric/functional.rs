//! Single-example forms of the core layers.

use super::tape::softmax_in_place;
use super::Tensor;
use crate::error::{Error, Result};

/// Slides a `P x M x w` filter over a `P x M x T` input along time:
/// `out[t] = sum_{p,m,k} input[p, m, t + k] * filter[p, m, k]`.
pub fn conv_over_time(input: &Tensor, filter: &Tensor) -> Result<Vec<f64>> {
    let (&[p, m, t], &[fp, fm, w]) = (input.shape(), filter.shape()) else {
        return Err(Error::shape("conv_over_time expects rank-3 input and filter"));
    };
    if fp != p || fm != m || w > t {
        return Err(Error::shape(format!(
            "filter {:?} does not fit input {:?}",
            filter.shape(),
            input.shape()
        )));
    }
    let x = input.data();
    let f = filter.data();
    let out = (0..=t - w)
        .map(|ti| {
            let mut s = 0.0;
            for row in 0..p * m {
                let xs = &x[row * t + ti..row * t + ti + w];
                let fs = &f[row * w..(row + 1) * w];
                s += xs.iter().zip(fs).map(|(a, b)| a * b).sum::<f64>();
            }
            s
        })
        .collect();
    Ok(out)
}

/// Largest element and its first index.
pub fn one_max_pool(feature_map: &[f64]) -> Result<(f64, usize)> {
    if feature_map.is_empty() {
        return Err(Error::invalid("1-max pooling of an empty feature map"));
    }
    let mut best = 0;
    for (i, &v) in feature_map.iter().enumerate().skip(1) {
        if v > feature_map[best] {
            best = i;
        }
    }
    Ok((feature_map[best], best))
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}
