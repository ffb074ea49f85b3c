use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DeepCnnSpec, HeadKind, ModelSpec};
use crate::error::Result;
use crate::numeric::Tensor;
use crate::tfr::make_triangular_filterbank;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub seed: u64,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_squares).sum()
    }

    /// Rounds every value through `f32`, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    fn push(&mut self, name: String, t: Tensor) {
        self.names.push(name);
        self.tensors.push(t);
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-limit..limit);
    }
    t
}

/// Uniform `+-sqrt(6 / fan_in)` weights, zero biases. A learnable bank
/// starts from the triangular bank.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams {
        names: Vec::new(),
        tensors: Vec::new(),
        seed,
    };
    let slots = spec.context().n_outputs();
    let y = spec.n_classes();
    let features = match spec {
        ModelSpec::OneMax(s) => {
            let (pc, m) = (s.n_channels, s.n_filters);
            if let Some(bins) = s.learnable_bank_bins {
                // Peak positions in bins do not depend on the sample rate.
                let tri = make_triangular_filterbank(m, bins, 100)?;
                let data: Vec<f64> = (0..pc).flat_map(|_| tri.weights.iter().copied()).collect();
                p.push("bank".into(), Tensor::new(vec![pc, m, bins], data)?);
            }
            for (r, &w) in s.filter_widths.iter().enumerate() {
                let q = s.filters_per_width;
                p.push(format!("conv{r}.weight"), uniform(&mut rng, &[q, w, pc, m], w * pc * m));
                p.push(format!("conv{r}.bias"), Tensor::zeros(&[q]));
            }
            s.feature_len()
        }
        ModelSpec::Deep(s) => {
            let (k, maps, fc) = (DeepCnnSpec::KERNEL, DeepCnnSpec::CONV_MAPS, DeepCnnSpec::FC_UNITS);
            p.push(
                "conv1.weight".into(),
                uniform(&mut rng, &[maps, s.n_channels, k, k], s.n_channels * k * k),
            );
            p.push("conv1.bias".into(), Tensor::zeros(&[maps]));
            p.push(
                "conv2.weight".into(),
                uniform(&mut rng, &[maps, maps, k, k], maps * k * k),
            );
            p.push("conv2.bias".into(), Tensor::zeros(&[maps]));
            let flat = s.flat_len()?;
            p.push("fc1.weight".into(), uniform(&mut rng, &[fc, flat], flat));
            p.push("fc1.bias".into(), Tensor::zeros(&[fc]));
            p.push("fc2.weight".into(), uniform(&mut rng, &[fc, fc], fc));
            p.push("fc2.bias".into(), Tensor::zeros(&[fc]));
            fc
        }
    };
    let head = match spec {
        ModelSpec::OneMax(s) => s.head,
        ModelSpec::Deep(_) => HeadKind::Shared,
    };
    match head {
        HeadKind::Shared => {
            p.push(
                "head.weight".into(),
                uniform(&mut rng, &[slots * y, features], features),
            );
            p.push("head.bias".into(), Tensor::zeros(&[slots * y]));
        }
        HeadKind::PerSlot => {
            for k in 0..slots {
                p.push(format!("head{k}.weight"), uniform(&mut rng, &[y, features], features));
                p.push(format!("head{k}.bias"), Tensor::zeros(&[y]));
            }
        }
    }
    Ok(p)
}
