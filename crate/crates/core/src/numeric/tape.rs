//! Reverse-mode differentiation over a linear tape of batched ops.
//!
//! Nodes are appended in creation order, so walking the tape backwards is a
//! reverse topological order and each node is visited once.

use rand::Rng;

use super::gemm::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

/// Probabilities are floored here before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    ConvTime {
        input: Var,
        filters: Var,
        bias: Var,
        width: usize,
    },
    Relu(Var),
    MaxTime {
        input: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    SoftmaxGroups {
        input: Var,
        group: usize,
    },
    CrossEntropy {
        probs: Var,
        targets: Vec<usize>,
        group: usize,
    },
    Add(Var, Var),
    SumSquares {
        inputs: Vec<Var>,
        scale: f64,
    },
    Dot {
        input: Var,
        weights: Vec<f64>,
    },
    FilterBank {
        input: Var,
        bank: Var,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn dims<const N: usize>(t: &Tensor, what: &str) -> Result<[usize; N]> {
    let s = t.shape();
    if s.len() != N {
        return Err(Error::shape(format!("{what}: expected rank {N}, got shape {s:?}")));
    }
    let mut out = [0; N];
    out.copy_from_slice(s);
    Ok(out)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("output of {}", op_name(&op))));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: &[Var]) -> bool {
        v.iter().any(|x| self.nodes[x.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Over-time convolution of a `B x T x C` input (time-major, `C`
    /// features per frame) with `Q` filters spanning `width` frames and all
    /// `C` features. Filters hold `Q x width x C` values. Output is
    /// `B x Q x (T - width + 1)`.
    pub fn conv_time(&mut self, input: Var, filters: Var, bias: Var, width: usize) -> Result<Var> {
        let [b, t, c] = dims::<3>(self.value(input), "conv_time input")?;
        let q = self.value(filters).shape()[0];
        let k = width * c;
        if width == 0 || width > t {
            return Err(Error::shape(format!("filter width {width} for {t} frames")));
        }
        if self.value(filters).len() != q * k || self.value(bias).len() != q {
            return Err(Error::shape(format!(
                "conv_time filters {:?} / bias {:?} do not fit width {width} x {c} features",
                self.value(filters).shape(),
                self.value(bias).shape()
            )));
        }
        let l = t - width + 1;
        let x = self.value(input).data();
        let w = self.value(filters).data();
        let bs = self.value(bias).data();
        let mut out = vec![0.0; b * q * l];
        for bi in 0..b {
            let xb = &x[bi * t * c..(bi + 1) * t * c];
            let ob = &mut out[bi * q * l..(bi + 1) * q * l];
            for (qi, row) in ob.chunks_mut(l).enumerate() {
                row.fill(bs[qi]);
            }
            // Row i of the strided view is frames i..i+width flattened.
            let patches = MatRef {
                data: xb,
                rows: l,
                cols: k,
                row_stride: c,
                col_stride: 1,
            };
            gemm(patches, MatRef::row_major(w, q, k).t(), 1.0, ob, 1, l);
        }
        let rg = self.rg(&[input, filters, bias]);
        self.push(
            Tensor::new(vec![b, q, l], out)?,
            Op::ConvTime {
                input,
                filters,
                bias,
                width,
            },
            rg,
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(&[input]);
        self.push(t, Op::Relu(input), rg)
    }

    /// Max over the last axis of a `B x Q x L` tensor; ties go to the first index.
    pub fn max_time(&mut self, input: Var) -> Result<Var> {
        let [b, q, l] = dims::<3>(self.value(input), "max_time input")?;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * q);
        let mut argmax = Vec::with_capacity(b * q);
        for row in 0..b * q {
            let s = &x[row * l..(row + 1) * l];
            let mut best = 0;
            for i in 1..l {
                if s[i] > s[best] {
                    best = i;
                }
            }
            out.push(s[best]);
            argmax.push(row * l + best);
        }
        let rg = self.rg(&[input]);
        self.push(Tensor::new(vec![b, q], out)?, Op::MaxTime { input, argmax }, rg)
    }

    /// Concatenates `B x d_i` tensors along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of nothing"));
        }
        let b = dims::<2>(self.value(parts[0]), "concat part")?[0];
        let mut widths = Vec::new();
        for &p in parts {
            let [pb, d] = dims::<2>(self.value(p), "concat part")?;
            if pb != b {
                return Err(Error::shape("concat parts disagree on batch size"));
            }
            widths.push(d);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(b * total);
        for bi in 0..b {
            for (&p, &d) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[bi * d..(bi + 1) * d]);
            }
        }
        let rg = self.rg(parts);
        self.push(Tensor::new(vec![b, total], out)?, Op::Concat(parts.to_vec()), rg)
    }

    /// Inverted dropout: zeroes each unit with probability `rate` and scales
    /// the survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - rate);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(&[input]);
        self.push(t, Op::Dropout { input, mask }, rg)
    }

    /// `x W^T + b` for `x: B x D`, `W: O x D`, `b: O`.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [b, d] = dims::<2>(self.value(input), "affine input")?;
        let [o, wd] = dims::<2>(self.value(weight), "affine weight")?;
        if wd != d || self.value(bias).len() != o {
            return Err(Error::shape(format!(
                "affine: input width {d}, weight {:?}, bias {:?}",
                self.value(weight).shape(),
                self.value(bias).shape()
            )));
        }
        let bs = self.value(bias).data();
        let mut out: Vec<f64> = (0..b).flat_map(|_| bs.iter().copied()).collect();
        gemm(
            MatRef::row_major(self.value(input).data(), b, d),
            MatRef::row_major(self.value(weight).data(), o, d).t(),
            1.0,
            &mut out,
            o,
            1,
        );
        let rg = self.rg(&[input, weight, bias]);
        self.push(Tensor::new(vec![b, o], out)?, Op::Affine { input, weight, bias }, rg)
    }

    /// Softmax over consecutive groups of `group` values along the last axis.
    pub fn softmax_groups(&mut self, input: Var, group: usize) -> Result<Var> {
        let x = self.value(input);
        if group == 0 || x.len() % group != 0 {
            return Err(Error::shape(format!("{} logits in groups of {group}", x.len())));
        }
        let mut out = x.data().to_vec();
        for chunk in out.chunks_mut(group) {
            softmax_in_place(chunk);
        }
        let t = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(&[input]);
        self.push(t, Op::SoftmaxGroups { input, group }, rg)
    }

    /// Mean over the batch of the summed per-group negative log-likelihoods.
    /// `targets` has one class index per group, batch-major.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize], group: usize) -> Result<Var> {
        let p = self.value(probs);
        let batch = p.shape()[0];
        if group == 0 || p.len() != targets.len() * group {
            return Err(Error::shape(format!(
                "{} probabilities for {} targets of {group} classes",
                p.len(),
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= group) {
            return Err(Error::invalid(format!("target class {bad} >= {group}")));
        }
        let loss: f64 = targets
            .iter()
            .enumerate()
            .map(|(g, &y)| -p.data()[g * group + y].max(LOG_FLOOR).ln())
            .sum::<f64>()
            / batch as f64;
        let rg = self.rg(&[probs]);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
                group,
            },
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(format!("add {:?} + {:?}", x.shape(), y.shape())));
        }
        let out = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg)
    }

    /// `scale * sum of squares` over all inputs. With `scale = lambda / 2`
    /// this is the weight penalty.
    pub fn sum_squares(&mut self, inputs: &[Var], scale: f64) -> Result<Var> {
        let s: f64 = inputs.iter().map(|&v| self.value(v).sum_squares()).sum();
        let rg = self.rg(inputs);
        self.push(
            Tensor::scalar(scale * s),
            Op::SumSquares {
                inputs: inputs.to_vec(),
                scale,
            },
            rg,
        )
    }

    /// Scalar `sum(x * weights)`; handy for probing non-scalar ops.
    pub fn dot(&mut self, input: Var, weights: &[f64]) -> Result<Var> {
        let x = self.value(input);
        if x.len() != weights.len() {
            return Err(Error::shape("dot: length mismatch"));
        }
        let s = x.data().iter().zip(weights).map(|(a, b)| a * b).sum();
        let rg = self.rg(&[input]);
        self.push(
            Tensor::scalar(s),
            Op::Dot {
                input,
                weights: weights.to_vec(),
            },
            rg,
        )
    }

    /// Applies one `M x F` bank per channel to a `B x T x P x F` input,
    /// giving `B x T x P x M`. `bank` holds `P x M x F` values.
    pub fn filter_bank(&mut self, input: Var, bank: Var) -> Result<Var> {
        let [b, t, p, f] = dims::<4>(self.value(input), "filter_bank input")?;
        let [bp, m, bf] = dims::<3>(self.value(bank), "filter bank")?;
        if bp != p || bf != f {
            return Err(Error::shape(format!(
                "bank {:?} for input {:?}",
                self.value(bank).shape(),
                self.value(input).shape()
            )));
        }
        let rows = b * t;
        let x = self.value(input).data();
        let w = self.value(bank).data();
        let mut out = vec![0.0; rows * p * m];
        for pi in 0..p {
            let xin = MatRef {
                data: &x[pi * f..],
                rows,
                cols: f,
                row_stride: p * f,
                col_stride: 1,
            };
            let wp = MatRef::row_major(&w[pi * m * f..(pi + 1) * m * f], m, f).t();
            gemm(xin, wp, 0.0, &mut out[pi * m..], p * m, 1);
        }
        let rg = self.rg(&[input, bank]);
        self.push(Tensor::new(vec![b, t, p, m], out)?, Op::FilterBank { input, bank }, rg)
    }

    /// Valid 2-D convolution (cross-correlation) of `B x C x H x W` with
    /// `K x C x kh x kw` kernels.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let [b, c, h, w] = dims::<4>(self.value(input), "conv2d input")?;
        let [k, kc, kh, kw] = dims::<4>(self.value(kernel), "conv2d kernel")?;
        if kc != c || kh > h || kw > w || self.value(bias).len() != k {
            return Err(Error::shape(format!(
                "conv2d kernel {:?} for input {:?}",
                self.value(kernel).shape(),
                self.value(input).shape()
            )));
        }
        let g = Conv2dGeom { c, h, w, kh, kw };
        let (ho, wo) = (g.ho(), g.wo());
        let x = self.value(input).data();
        let kern = self.value(kernel).data();
        let bs = self.value(bias).data();
        let mut cols = vec![0.0; g.col_rows() * ho * wo];
        let mut out = vec![0.0; b * k * ho * wo];
        for bi in 0..b {
            g.im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], &mut cols);
            let ob = &mut out[bi * k * ho * wo..(bi + 1) * k * ho * wo];
            for (ki, plane) in ob.chunks_mut(ho * wo).enumerate() {
                plane.fill(bs[ki]);
            }
            gemm(
                MatRef::row_major(kern, k, g.col_rows()),
                MatRef::row_major(&cols, g.col_rows(), ho * wo),
                1.0,
                ob,
                ho * wo,
                1,
            );
        }
        let rg = self.rg(&[input, kernel, bias]);
        self.push(
            Tensor::new(vec![b, k, ho, wo], out)?,
            Op::Conv2d { input, kernel, bias },
            rg,
        )
    }

    /// Non-overlapping max pooling over `ph x pw` windows of a
    /// `B x C x H x W` tensor; trailing rows/columns that do not fill a
    /// window are dropped.
    pub fn max_pool2d(&mut self, input: Var, ph: usize, pw: usize) -> Result<Var> {
        let [b, c, h, w] = dims::<4>(self.value(input), "max_pool2d input")?;
        if ph == 0 || pw == 0 || ph > h || pw > w {
            return Err(Error::shape(format!("pool {ph}x{pw} on {h}x{w}")));
        }
        let (oh, ow) = (h / ph, w / pw);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * ph * w + ox * pw;
                    for i in 0..ph {
                        for j in 0..pw {
                            let idx = base + (oy * ph + i) * w + ox * pw + j;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(&[input]);
        self.push(
            Tensor::new(vec![b, c, oh, ow], out)?,
            Op::MaxPool2d { input, argmax },
            rg,
        )
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).clone().reshaped(shape)?;
        let rg = self.rg(&[input]);
        self.push(t, Op::Reshape(input), rg)
    }

    /// Gradients of the scalar `root` with respect to every node on the tape
    /// that depends on a parameter.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::new(self.nodes[i].value.shape().to_vec(), d).unwrap()))
            .collect();
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::ConvTime {
                input,
                filters,
                bias,
                width,
            } => {
                let [b, t, c] = dims::<3>(self.value(*input), "").unwrap();
                let k = width * c;
                let q = self.value(*filters).shape()[0];
                let l = t - width + 1;
                let x = self.value(*input).data();
                let w = self.value(*filters).data();
                // Gradients after 1-max pooling are mostly zero, so loop over
                // the nonzero entries instead of a dense product.
                if let Some(db) = self.slot(grads, *bias) {
                    for bi in 0..b {
                        for qi in 0..q {
                            db[qi] += g[(bi * q + qi) * l..(bi * q + qi + 1) * l].iter().sum::<f64>();
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *filters) {
                    for bi in 0..b {
                        for qi in 0..q {
                            for ti in 0..l {
                                let gv = g[(bi * q + qi) * l + ti];
                                if gv != 0.0 {
                                    let xs = &x[bi * t * c + ti * c..bi * t * c + ti * c + k];
                                    axpy(&mut dw[qi * k..(qi + 1) * k], gv, xs);
                                }
                            }
                        }
                    }
                }
                if let Some(dx) = self.slot(grads, *input) {
                    for bi in 0..b {
                        for qi in 0..q {
                            for ti in 0..l {
                                let gv = g[(bi * q + qi) * l + ti];
                                if gv != 0.0 {
                                    let at = bi * t * c + ti * c;
                                    axpy(&mut dx[at..at + k], gv, &w[qi * k..(qi + 1) * k]);
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                if let Some(dx) = self.slot(grads, *input) {
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(x) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::MaxTime { input, argmax } | Op::MaxPool2d { input, argmax } => {
                if let Some(dx) = self.slot(grads, *input) {
                    for (&gv, &at) in g.iter().zip(argmax) {
                        dx[at] += gv;
                    }
                }
            }
            Op::Concat(parts) => {
                let b = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut off = 0;
                for &p in parts {
                    let d = self.value(p).shape()[1];
                    if let Some(dp) = self.slot(grads, p) {
                        for bi in 0..b {
                            let src = &g[bi * total + off..bi * total + off + d];
                            axpy(&mut dp[bi * d..(bi + 1) * d], 1.0, src);
                        }
                    }
                    off += d;
                }
            }
            Op::Dropout { input, mask } => {
                if let Some(dx) = self.slot(grads, *input) {
                    for ((d, &gv), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
            Op::Affine { input, weight, bias } => {
                let [b, d] = dims::<2>(self.value(*input), "").unwrap();
                let o = self.value(*weight).shape()[0];
                if let Some(db) = self.slot(grads, *bias) {
                    for row in g.chunks(o) {
                        axpy(db, 1.0, row);
                    }
                }
                if let Some(dw) = self.slot(grads, *weight) {
                    gemm(
                        MatRef::row_major(g, b, o).t(),
                        MatRef::row_major(self.value(*input).data(), b, d),
                        1.0,
                        dw,
                        d,
                        1,
                    );
                }
                if let Some(dx) = self.slot(grads, *input) {
                    gemm(
                        MatRef::row_major(g, b, o),
                        MatRef::row_major(self.value(*weight).data(), o, d),
                        1.0,
                        dx,
                        d,
                        1,
                    );
                }
            }
            Op::SoftmaxGroups { input, group } => {
                let p = node.value.data();
                if let Some(dx) = self.slot(grads, *input) {
                    for ((dxc, gc), pc) in dx.chunks_mut(*group).zip(g.chunks(*group)).zip(p.chunks(*group)) {
                        let s: f64 = gc.iter().zip(pc).map(|(a, b)| a * b).sum();
                        for ((d, &gv), &pv) in dxc.iter_mut().zip(gc).zip(pc) {
                            *d += pv * (gv - s);
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, targets, group } => {
                let p = self.value(*probs);
                let batch = p.shape()[0] as f64;
                let pd = p.data();
                if let Some(dp) = self.slot(grads, *probs) {
                    for (gi, &y) in targets.iter().enumerate() {
                        let at = gi * group + y;
                        if pd[at] > LOG_FLOOR {
                            dp[at] -= g[0] / (batch * pd[at]);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.slot(grads, *v) {
                        axpy(d, 1.0, g);
                    }
                }
            }
            Op::SumSquares { inputs, scale } => {
                for &v in inputs {
                    let x = self.value(v).data();
                    if let Some(d) = self.slot(grads, v) {
                        axpy(d, 2.0 * scale * g[0], x);
                    }
                }
            }
            Op::Dot { input, weights } => {
                if let Some(d) = self.slot(grads, *input) {
                    axpy(d, g[0], weights);
                }
            }
            Op::FilterBank { input, bank } => {
                let [b, t, p, f] = dims::<4>(self.value(*input), "").unwrap();
                let m = self.value(*bank).shape()[1];
                let rows = b * t;
                let x = self.value(*input).data();
                let w = self.value(*bank).data();
                if let Some(dw) = self.slot(grads, *bank) {
                    for pi in 0..p {
                        let gp = MatRef {
                            data: &g[pi * m..],
                            rows,
                            cols: m,
                            row_stride: p * m,
                            col_stride: 1,
                        };
                        let xp = MatRef {
                            data: &x[pi * f..],
                            rows,
                            cols: f,
                            row_stride: p * f,
                            col_stride: 1,
                        };
                        gemm(gp.t(), xp, 1.0, &mut dw[pi * m * f..(pi + 1) * m * f], f, 1);
                    }
                }
                if let Some(dx) = self.slot(grads, *input) {
                    for pi in 0..p {
                        let gp = MatRef {
                            data: &g[pi * m..],
                            rows,
                            cols: m,
                            row_stride: p * m,
                            col_stride: 1,
                        };
                        let wp = MatRef::row_major(&w[pi * m * f..(pi + 1) * m * f], m, f);
                        gemm(gp, wp, 1.0, &mut dx[pi * f..], p * f, 1);
                    }
                }
            }
            Op::Conv2d { input, kernel, bias } => {
                let [b, c, h, w] = dims::<4>(self.value(*input), "").unwrap();
                let [k, _, kh, kw] = dims::<4>(self.value(*kernel), "").unwrap();
                let geom = Conv2dGeom { c, h, w, kh, kw };
                let hw = geom.ho() * geom.wo();
                let rows = geom.col_rows();
                let x = self.value(*input).data();
                if let Some(db) = self.slot(grads, *bias) {
                    for bi in 0..b {
                        for ki in 0..k {
                            let at = (bi * k + ki) * hw;
                            db[ki] += g[at..at + hw].iter().sum::<f64>();
                        }
                    }
                }
                let mut cols = vec![0.0; rows * hw];
                if let Some(dk) = self.slot(grads, *kernel) {
                    for bi in 0..b {
                        geom.im2col(&x[bi * c * h * w..(bi + 1) * c * h * w], &mut cols);
                        gemm(
                            MatRef::row_major(&g[bi * k * hw..(bi + 1) * k * hw], k, hw),
                            MatRef::row_major(&cols, rows, hw).t(),
                            1.0,
                            dk,
                            rows,
                            1,
                        );
                    }
                }
                let kern = self.value(*kernel).data();
                if let Some(dx) = self.slot(grads, *input) {
                    for bi in 0..b {
                        gemm(
                            MatRef::row_major(kern, k, rows).t(),
                            MatRef::row_major(&g[bi * k * hw..(bi + 1) * k * hw], k, hw),
                            0.0,
                            &mut cols,
                            hw,
                            1,
                        );
                        geom.col2im_add(&cols, &mut dx[bi * c * h * w..(bi + 1) * c * h * w]);
                    }
                }
            }
            Op::Reshape(input) => {
                if let Some(dx) = self.slot(grads, *input) {
                    axpy(dx, 1.0, g);
                }
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::ConvTime { .. } => "conv_time",
        Op::Relu(_) => "relu",
        Op::MaxTime { .. } => "max_time",
        Op::Concat(_) => "concat",
        Op::Dropout { .. } => "dropout",
        Op::Affine { .. } => "affine",
        Op::SoftmaxGroups { .. } => "softmax",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::Add(..) => "add",
        Op::SumSquares { .. } => "sum_squares",
        Op::Dot { .. } => "dot",
        Op::FilterBank { .. } => "filter_bank",
        Op::Conv2d { .. } => "conv2d",
        Op::MaxPool2d { .. } => "max_pool2d",
        Op::Reshape(_) => "reshape",
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

struct Conv2dGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl Conv2dGeom {
    fn ho(&self) -> usize {
        self.h - self.kh + 1
    }

    fn wo(&self) -> usize {
        self.w - self.kw + 1
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (ho, wo) = (self.ho(), self.wo());
        for ci in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ci * self.kh + i) * self.kw + j;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for y in 0..ho {
                        let src = &x[(ci * self.h + y + i) * self.w + j..][..wo];
                        dst[y * wo..(y + 1) * wo].copy_from_slice(src);
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], dx: &mut [f64]) {
        let (ho, wo) = (self.ho(), self.wo());
        for ci in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (ci * self.kh + i) * self.kw + j;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for y in 0..ho {
                        let at = (ci * self.h + y + i) * self.w + j;
                        axpy(&mut dx[at..at + wo], 1.0, &src[y * wo..(y + 1) * wo]);
                    }
                }
            }
        }
    }
}
