//! Model checkpoint file.
//!
//! ```text
//! "SSCK" | version u32 | header (u32 length + UTF-8 `key=value` lines)
//!        | P u32 | P f32 channel means | P f32 channel stds
//!        | tensor count u32 | per tensor: name, rank u32, rank x u32 dims, f32 values
//! ```
//!
//! Integers and floats are little-endian. The header echoes the model
//! specification and the initialization seed.

use std::collections::BTreeMap;
use std::path::Path;

use super::{init_params, ContextConfig, DeepCnnSpec, HeadKind, ModelParams, ModelSpec, OneMaxCnnSpec};
use crate::binio::{read_file, write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::tfr::Standardizer;

const MAGIC: &[u8; 4] = b"SSCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ModelParams,
    /// Input standardization fitted on the training images.
    pub norm: Standardizer,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn header(spec: &ModelSpec, seed: u64) -> Result<String> {
    let ctx = spec.context();
    let (p, _, t) = spec.epoch_dims();
    let mut lines = vec![
        format!("arch={}", spec.arch_name()),
        format!("mode={}", ctx.mode),
        format!("tau={}", ctx.tau),
        format!("classes={}", spec.n_classes()),
        format!("channels={p}"),
        format!("frames={t}"),
        format!("dropout={}", spec.dropout()),
        format!("lambda={}", spec.lambda_reg()),
        format!("seed={seed}"),
    ];
    match spec {
        ModelSpec::OneMax(s) => {
            lines.push(format!("filters={}", s.n_filters));
            lines.push(format!("widths={}", join(&s.filter_widths)));
            lines.push(format!("q={}", s.filters_per_width));
            lines.push(format!("head={}", s.head.as_str()));
            if let Some(bins) = s.learnable_bank_bins {
                lines.push(format!("bank_bins={bins}"));
            }
        }
        ModelSpec::Deep(s) => {
            lines.push(format!("filters={}", s.n_filters));
            let dims: Vec<String> = s.map_dims()?.iter().map(|(h, w)| format!("{h}x{w}")).collect();
            lines.push(format!("map_dims={}", dims.join(",")));
        }
    }
    Ok(lines.join("\n"))
}

fn parse_header(path: &Path, text: &str) -> Result<(ModelSpec, u64)> {
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, 0, format!("bad header line `{line}`")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| -> Result<&str> {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::format(path, 0, format!("header lacks `{k}`")))
    };
    fn num<T: std::str::FromStr>(path: &Path, k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::format(path, 0, format!("bad header value {k}={v}")))
    }
    let context = ContextConfig::new(get("mode")?.parse()?, num(path, "tau", get("tau")?)?)?;
    let dims = (
        num(path, "channels", get("channels")?)?,
        num(path, "filters", get("filters")?)?,
        num(path, "frames", get("frames")?)?,
    );
    let spec = match get("arch")? {
        "onemax" => {
            let widths = get("widths")?
                .split(',')
                .map(|w| num(path, "widths", w))
                .collect::<Result<Vec<usize>>>()?;
            let mut s = OneMaxCnnSpec::new(widths, num(path, "q", get("q")?)?, dims, context);
            s.head = get("head")?.parse::<HeadKind>()?;
            s.learnable_bank_bins = match kv.get("bank_bins") {
                Some(v) => Some(num(path, "bank_bins", v)?),
                None => None,
            };
            s.n_classes = num(path, "classes", get("classes")?)?;
            s.dropout = num(path, "dropout", get("dropout")?)?;
            s.lambda_reg = num(path, "lambda", get("lambda")?)?;
            ModelSpec::OneMax(s)
        }
        "deepcnn" => {
            let mut s = DeepCnnSpec::new(dims, context);
            s.n_classes = num(path, "classes", get("classes")?)?;
            s.dropout = num(path, "dropout", get("dropout")?)?;
            s.lambda_reg = num(path, "lambda", get("lambda")?)?;
            ModelSpec::Deep(s)
        }
        other => return Err(Error::format(path, 0, format!("unknown arch `{other}`"))),
    };
    spec.validate()?;
    Ok((spec, num(path, "seed", get("seed")?)?))
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.str(&header(&ck.spec, ck.params.seed)?);
    w.u32(ck.norm.mean.len() as u32);
    w.f32s(ck.norm.mean.iter().map(|&v| v as f32));
    w.f32s(ck.norm.std.iter().map(|&v| v as f32));
    w.u32(ck.params.tensors.len() as u32);
    for (name, t) in ck.params.names.iter().zip(&ck.params.tensors) {
        w.str(name);
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        w.f32s(t.data().iter().map(|&v| v as f32));
    }
    write_atomic(path.as_ref(), &w.finish())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let data = read_file(path)?;
    let mut r = Reader::new(path, &data, MAGIC, VERSION)?;
    let (spec, seed) = parse_header(path, &r.str()?)?;
    let p = r.u32()? as usize;
    let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<_>>();
    let mean = widen(r.f32s(p)?);
    let std = widen(r.f32s(p)?);
    let expected = init_params(&spec, seed)?;
    let n = r.u32()? as usize;
    if n != expected.tensors.len() {
        return Err(r.err(format!("{n} tensors, model has {}", expected.tensors.len())));
    }
    let mut params = ModelParams {
        names: Vec::with_capacity(n),
        tensors: Vec::with_capacity(n),
        seed,
    };
    for (name, want) in expected.names.iter().zip(&expected.tensors) {
        let got = r.str()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        if &got != name || shape != want.shape() {
            return Err(r.err(format!(
                "tensor `{got}` {shape:?} where `{name}` {:?} was expected",
                want.shape()
            )));
        }
        let values = widen(r.f32s(want.len())?);
        let t = Tensor::new(shape, values)?;
        t.check_finite(name)?;
        params.names.push(got);
        params.tensors.push(t);
    }
    r.finish()?;
    Ok(Checkpoint {
        spec,
        params,
        norm: Standardizer { mean, std },
    })
}
