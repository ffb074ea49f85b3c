use rand_chacha::ChaCha8Rng;

use super::{ContextMode, DeepCnnSpec, HeadKind, ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};
use crate::tfr::TfImage;

/// Concatenates `P x M x T` images along time into one `P x M x (k T)` image.
pub fn assemble_context(images: &[&[f64]], (p, m, t): (usize, usize, usize)) -> Result<Vec<f64>> {
    if images.iter().any(|img| img.len() != p * m * t) {
        return Err(Error::shape(format!("context image is not {p}x{m}x{t}")));
    }
    let mut out = Vec::with_capacity(images.len() * p * m * t);
    for row in 0..p * m {
        for img in images {
            out.extend_from_slice(&img[row * t..(row + 1) * t]);
        }
    }
    Ok(out)
}

/// Lays out channel-major input images the way the architecture consumes them.
fn batch_tensor(spec: &ModelSpec, images: &[&[f64]]) -> Result<Tensor> {
    let (p, bins, t) = spec.epoch_dims();
    let t = t * spec.context().n_inputs();
    let b = images.len();
    if b == 0 {
        return Err(Error::shape("empty batch"));
    }
    if let Some(img) = images.iter().find(|img| img.len() != p * bins * t) {
        return Err(Error::shape(format!(
            "input has {} values, model expects {p}x{bins}x{t}",
            img.len()
        )));
    }
    match spec {
        ModelSpec::OneMax(s) => {
            // time-major: B x T x (P * bins)
            let c = p * bins;
            let mut data = vec![0.0; b * t * c];
            for (bi, img) in images.iter().enumerate() {
                let out = &mut data[bi * t * c..(bi + 1) * t * c];
                for row in 0..c {
                    for ti in 0..t {
                        out[ti * c + row] = img[row * t + ti];
                    }
                }
            }
            let shape = if s.learnable_bank_bins.is_some() {
                vec![b, t, p, bins]
            } else {
                vec![b, t, c]
            };
            Tensor::new(shape, data)
        }
        ModelSpec::Deep(_) => {
            let data = images.iter().flat_map(|img| img.iter().copied()).collect();
            Tensor::new(vec![b, p, bins, t], data)
        }
    }
}

struct Lookup<'a> {
    params: &'a ModelParams,
    vars: &'a [Var],
}

impl Lookup<'_> {
    fn var(&self, name: &str) -> Result<Var> {
        self.params
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }
}

/// Records the forward pass for a batch and returns `B x (slots * Y)`
/// posteriors. Dropout is applied iff `dropout_rng` is given.
pub fn forward_batch(
    spec: &ModelSpec,
    params: &ModelParams,
    tape: &mut Tape,
    vars: &[Var],
    input: Var,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let lk = Lookup { params, vars };
    let rate = spec.dropout();
    let mut drop = |tape: &mut Tape, v: Var| -> Result<Var> {
        match dropout_rng.as_deref_mut() {
            Some(rng) => tape.dropout(v, rate, rng),
            None => Ok(v),
        }
    };
    let b = tape.value(input).shape()[0];
    let (features, head) = match spec {
        ModelSpec::OneMax(s) => {
            let x = if s.learnable_bank_bins.is_some() {
                let t = tape.value(input).shape()[1];
                let banked = tape.filter_bank(input, lk.var("bank")?)?;
                tape.reshape(banked, &[b, t, s.n_channels * s.n_filters])?
            } else {
                input
            };
            let mut pooled = Vec::with_capacity(s.filter_widths.len());
            for (r, &w) in s.filter_widths.iter().enumerate() {
                let y = tape.conv_time(
                    x,
                    lk.var(&format!("conv{r}.weight"))?,
                    lk.var(&format!("conv{r}.bias"))?,
                    w,
                )?;
                let y = tape.relu(y)?;
                pooled.push(tape.max_time(y)?);
            }
            let f = tape.concat(&pooled)?;
            (drop(tape, f)?, s.head)
        }
        ModelSpec::Deep(s) => {
            let x = tape.conv2d(input, lk.var("conv1.weight")?, lk.var("conv1.bias")?)?;
            let x = tape.relu(x)?;
            let x = tape.max_pool2d(x, DeepCnnSpec::POOL1.0, DeepCnnSpec::POOL1.1)?;
            let x = drop(tape, x)?;
            let x = tape.conv2d(x, lk.var("conv2.weight")?, lk.var("conv2.bias")?)?;
            let x = tape.relu(x)?;
            let x = tape.max_pool2d(x, DeepCnnSpec::POOL2.0, DeepCnnSpec::POOL2.1)?;
            let x = drop(tape, x)?;
            let x = tape.reshape(x, &[b, s.flat_len()?])?;
            let x = tape.affine(x, lk.var("fc1.weight")?, lk.var("fc1.bias")?)?;
            let x = tape.relu(x)?;
            let x = drop(tape, x)?;
            let x = tape.affine(x, lk.var("fc2.weight")?, lk.var("fc2.bias")?)?;
            let x = tape.relu(x)?;
            (drop(tape, x)?, HeadKind::Shared)
        }
    };
    let logits = match head {
        HeadKind::Shared => tape.affine(features, lk.var("head.weight")?, lk.var("head.bias")?)?,
        HeadKind::PerSlot => {
            let slots = (0..spec.context().n_outputs())
                .map(|k| {
                    tape.affine(
                        features,
                        lk.var(&format!("head{k}.weight"))?,
                        lk.var(&format!("head{k}.bias"))?,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            tape.concat(&slots)?
        }
    };
    tape.softmax_groups(logits, spec.n_classes())
}

/// Registers `params` on `tape` as trainable leaves or constants.
pub fn register_params(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Result<Vec<Var>> {
    params
        .tensors
        .iter()
        .map(|t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect()
}

/// Records a batch of channel-major images as the model's input.
pub fn batch_input(tape: &mut Tape, spec: &ModelSpec, images: &[&[f64]]) -> Result<Var> {
    let t = batch_tensor(spec, images)?;
    tape.constant(t)
}

/// Inference-mode posteriors for a batch, `B x slots x Y` flattened.
pub fn predict_batch(spec: &ModelSpec, params: &ModelParams, images: &[&[f64]]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, false)?;
    let x = batch_input(&mut tape, spec, images)?;
    let out = forward_batch(spec, params, &mut tape, &vars, x, None)?;
    Ok(tape.value(out).data().to_vec())
}

fn check_image(spec: &ModelSpec, image: &TfImage) -> Result<()> {
    let (p, bins, t) = spec.epoch_dims();
    if image.dims() != (p, bins, t) {
        return Err(Error::shape(format!(
            "image is {:?}, model expects {:?}",
            image.dims(),
            (p, bins, t)
        )));
    }
    Ok(())
}

fn split_slots(flat: Vec<f64>, y: usize) -> Vec<Vec<f64>> {
    flat.chunks(y).map(<[f64]>::to_vec).collect()
}

/// Posteriors for one epoch image, slots ordered from offset `-tau` to `+tau`.
/// Passing an RNG selects training mode (dropout active).
pub fn forward(
    params: &ModelParams,
    spec: &ModelSpec,
    image: &TfImage,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<Vec<f64>>> {
    if spec.context().mode == ContextMode::ManyToOne {
        return Err(Error::invalid("many_to_one models take a context of images"));
    }
    check_image(spec, image)?;
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, false)?;
    let x = batch_input(&mut tape, spec, &[&image.values])?;
    let out = forward_batch(spec, params, &mut tape, &vars, x, rng)?;
    Ok(split_slots(tape.value(out).data().to_vec(), spec.n_classes()))
}

/// Center-epoch posterior from `2 tau + 1` consecutive images.
pub fn forward_many_to_one(params: &ModelParams, spec: &ModelSpec, images: &[TfImage]) -> Result<Vec<f64>> {
    let ctx = spec.context();
    if ctx.mode != ContextMode::ManyToOne {
        return Err(Error::invalid("forward_many_to_one needs a many_to_one model"));
    }
    if images.len() != ctx.context_size() {
        return Err(Error::shape(format!(
            "{} context images for tau = {}",
            images.len(),
            ctx.tau
        )));
    }
    for img in images {
        check_image(spec, img)?;
    }
    let views: Vec<&[f64]> = images.iter().map(|i| i.values.as_slice()).collect();
    let joined = assemble_context(&views, spec.epoch_dims())?;
    predict_batch(spec, params, &[&joined])
}
