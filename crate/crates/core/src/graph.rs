//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Operations refer to their
//! inputs by [`Var`] handles, which always point at earlier nodes, so the recording is
//! already in topological order and [`Graph::backward`] is a single reverse sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::{Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation counts accumulated while a graph is evaluated. One multiply-accumulate
/// counts as one FLOP; `pointwise` covers bias adds, nonlinearities, normalization and
/// interpolation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub conv_macs: u64,
    pub pointwise: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.conv_macs + self.pointwise
    }
}

impl std::ops::Add for FlopCount {
    type Output = FlopCount;
    fn add(self, rhs: FlopCount) -> FlopCount {
        FlopCount {
            conv_macs: self.conv_macs + rhs.conv_macs,
            pointwise: self.pointwise + rhs.pointwise,
        }
    }
}

impl std::ops::AddAssign for FlopCount {
    fn add_assign(&mut self, rhs: FlopCount) {
        *self = *self + rhs;
    }
}

/// Pointwise cost charged per element by each kind of operation.
pub mod cost {
    pub const NORM_PER_ELEMENT: u64 = 4;
    pub const AFFINE_PER_ELEMENT: u64 = 2;
    pub const UPSAMPLE_PER_ELEMENT: u64 = 4;
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Var, Var),
    Slice {
        input: Var,
        start: usize,
    },
    Upsample(Var),
    Flip(Var),
    ChannelNorm {
        input: Var,
        over_batch: bool,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        input: Var,
        scale: Vec<f64>,
    },
    BiasAdd {
        input: Var,
        bias: Var,
    },
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<u8>,
        ignore: u8,
        probs: Vec<f64>,
        count: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Rebuilt for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    flops: FlopCount,
}

/// Gradient buffers produced by [`Graph::backward`], keyed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a trainable leaf. Leaves always receive a buffer.
    pub fn wrt(&self, var: Var) -> &Tensor {
        self.get(var).expect("gradient requested for a node without one")
    }
}

/// Statistics of a batch-normalized layer, reported so callers can track running means.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn flops(&self) -> FlopCount {
        self.flops
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    /// A trainable leaf: it receives a gradient buffer on backward.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that is held fixed.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa} vs {sb}")));
        }
        Ok(sa)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
    ) -> Result<Var> {
        let value = kernels::conv2d_forward(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            geometry,
        )?;
        let ks = self.shape(kernel);
        let os = value.shape();
        self.flops.conv_macs += (os.numel() * ks.c * ks.h * ks.w) as u64;
        if bias.is_some() {
            self.flops.pointwise += os.numel() as u64;
        }
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            },
            &inputs,
        )
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(shape, data)?;
        self.flops.pointwise += shape.numel() as u64;
        self.push(name, value, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(a).map(f);
        self.flops.pointwise += value.numel() as u64;
        self.push(name, value, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary("mul_scalar", a, |x| x * s, Op::MulScalar(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Channel-wise concatenation `a ⊕ b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
            return Err(Error::shape("concat_channels", format!("{sa} vs {sb}")));
        }
        let out = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let mut data = Vec::with_capacity(out.numel());
        let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
        for n in 0..sa.n {
            data.extend_from_slice(&self.value(a).data()[n * la..(n + 1) * la]);
            data.extend_from_slice(&self.value(b).data()[n * lb..(n + 1) * lb]);
        }
        let value = Tensor::from_vec(out, data)?;
        self.push("concat_channels", value, Op::Concat(a, b), &[a, b])
    }

    /// Channels `start..start + len` of `input`.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input);
        if start + len > s.c || len == 0 {
            return Err(Error::shape(
                "slice_channels",
                format!("range {start}..{} of {} channels", start + len, s.c),
            ));
        }
        let out = Shape::new(s.n, len, s.h, s.w);
        let p = s.plane();
        let mut data = Vec::with_capacity(out.numel());
        for n in 0..s.n {
            let base = (n * s.c + start) * p;
            data.extend_from_slice(&self.value(input).data()[base..base + len * p]);
        }
        let value = Tensor::from_vec(out, data)?;
        self.push("slice_channels", value, Op::Slice { input, start }, &[input])
    }

    /// Align-corners bilinear upsampling to `out_h × out_w`.
    pub fn bilinear_upsample(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = kernels::upsample_forward(self.value(input), out_h, out_w)?;
        self.flops.pointwise += cost::UPSAMPLE_PER_ELEMENT * value.numel() as u64;
        self.push("bilinear_upsample", value, Op::Upsample(input), &[input])
    }

    /// Left-right mirror of every plane.
    pub fn flip_horizontal(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).flip_horizontal();
        self.push("flip_horizontal", value, Op::Flip(input), &[input])
    }

    /// Zero-mean, unit-variance normalization per channel. Statistics are pooled over
    /// the spatial plane of each sample, or over the whole batch when `over_batch`.
    pub fn channel_norm(&mut self, input: Var, over_batch: bool, eps: f64) -> Result<(Var, ChannelStats)> {
        let x = self.value(input);
        let s = x.shape();
        let p = s.plane();
        let groups: Vec<Vec<usize>> = if over_batch {
            (0..s.c).map(|c| (0..s.n).map(|n| n * s.c + c).collect()).collect()
        } else {
            (0..s.n * s.c).map(|i| vec![i]).collect()
        };
        let mut out = Tensor::zeros(s);
        let mut inv_std = Vec::with_capacity(groups.len());
        let mut stats = ChannelStats {
            mean: Vec::with_capacity(groups.len()),
            var: Vec::with_capacity(groups.len()),
        };
        for planes in &groups {
            let m = (planes.len() * p) as f64;
            let mean = planes
                .iter()
                .map(|&i| x.data()[i * p..(i + 1) * p].iter().sum::<f64>())
                .sum::<f64>()
                / m;
            let var = planes
                .iter()
                .map(|&i| {
                    x.data()[i * p..(i + 1) * p]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / m;
            let is = 1.0 / (var + eps).sqrt();
            for &i in planes {
                for j in i * p..(i + 1) * p {
                    out.data_mut()[j] = (x.data()[j] - mean) * is;
                }
            }
            inv_std.push(is);
            stats.mean.push(mean);
            stats.var.push(var);
        }
        self.flops.pointwise += cost::NORM_PER_ELEMENT * s.numel() as u64;
        let var = self.push(
            "channel_norm",
            out,
            Op::ChannelNorm {
                input,
                over_batch,
                inv_std,
            },
            &[input],
        )?;
        Ok((var, stats))
    }

    /// `y = x * scale[c] + shift[c]` with fixed per-channel constants.
    pub fn channel_affine(&mut self, input: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let s = self.shape(input);
        if scale.len() != s.c || shift.len() != s.c {
            return Err(Error::shape("channel_affine", format!("{} channels", s.c)));
        }
        let mut out = self.value(input).clone();
        let p = s.plane();
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * p;
                for v in &mut out.data_mut()[base..base + p] {
                    *v = *v * scale[c] + shift[c];
                }
            }
        }
        self.flops.pointwise += cost::AFFINE_PER_ELEMENT * s.numel() as u64;
        self.push(
            "channel_affine",
            out,
            Op::ChannelAffine {
                input,
                scale: scale.to_vec(),
            },
            &[input],
        )
    }

    /// Adds a per-channel bias vector (stored with `c` entries) to every position.
    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let s = self.shape(input);
        let b = self.value(bias);
        if b.numel() != s.c {
            return Err(Error::shape(
                "add_channel_bias",
                format!("{} bias entries for {} channels", b.numel(), s.c),
            ));
        }
        let mut out = self.value(input).clone();
        let p = s.plane();
        for n in 0..s.n {
            for c in 0..s.c {
                let bc = b.data()[c];
                let base = (n * s.c + c) * p;
                out.data_mut()[base..base + p].iter_mut().for_each(|v| *v += bc);
            }
        }
        self.flops.pointwise += s.numel() as u64;
        self.push("add_channel_bias", out, Op::BiasAdd { input, bias }, &[input, bias])
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total = self.value(input).sum();
        self.flops.pointwise += self.value(input).numel() as u64;
        self.push("sum", Tensor::scalar(total), Op::Sum(input), &[input])
    }

    /// Mean per-pixel softmax cross-entropy over pixels whose label is not `ignore`.
    /// `labels` holds one class index per (n, y, x). With every pixel ignored the loss is
    /// zero and so is its gradient.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u8], ignore: u8) -> Result<Var> {
        let x = self.value(logits);
        let s = x.shape();
        let p = s.plane();
        if labels.len() != s.n * p {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} labels for logits {s}", labels.len()),
            ));
        }
        let mut probs = vec![0.0; s.numel()];
        let mut total = 0.0;
        let mut count = 0usize;
        for n in 0..s.n {
            for q in 0..p {
                let label = labels[n * p + q];
                if label == ignore {
                    continue;
                }
                if label as usize >= s.c {
                    return Err(Error::shape(
                        "softmax_cross_entropy",
                        format!("label {label} out of range for {} classes", s.c),
                    ));
                }
                let idx = |k: usize| (n * s.c + k) * p + q;
                let max = (0..s.c).map(|k| x.data()[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..s.c).map(|k| (x.data()[idx(k)] - max).exp()).sum();
                for k in 0..s.c {
                    probs[idx(k)] = (x.data()[idx(k)] - max).exp() / z;
                }
                total += z.ln() + max - x.data()[idx(label as usize)];
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.flops.pointwise += 3 * s.numel() as u64;
        self.push(
            "softmax_cross_entropy",
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                ignore,
                probs,
                count,
            },
            &[logits],
        )
    }

    /// Reverse sweep from a scalar `loss`. Every trainable leaf gets a buffer, zero-filled
    /// when the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::shape("backward", "loss is not on this graph"));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {ls}")));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(ls, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(node.value.shape()));
                }
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            } => {
                let need_input = self.wants(*input);
                let cg = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *geometry,
                    need_input,
                )?;
                if need_input {
                    accumulate(grads, *input, cg.input);
                }
                if self.wants(*kernel) {
                    accumulate(grads, *kernel, cg.kernel);
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let bs = self.shape(*b);
                        accumulate(grads, *b, Tensor::from_vec(bs, cg.bias.into_vec())?);
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, zip_map(g, self.value(*b), |g, x| g * x));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, zip_map(g, self.value(*a), |g, x| g * x));
                }
            }
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::MulScalar(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, y, |g, y| g * y * (1.0 - y))),
            Op::Tanh(a) => accumulate(grads, *a, zip_map(g, y, |g, y| g * (1.0 - y * y))),
            Op::Relu(a) => accumulate(grads, *a, zip_map(g, y, |g, y| if y > 0.0 { g } else { 0.0 })),
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
                let mut ga = Vec::with_capacity(sa.numel());
                let mut gb = Vec::with_capacity(sb.numel());
                for n in 0..sa.n {
                    let base = n * (la + lb);
                    ga.extend_from_slice(&g.data()[base..base + la]);
                    gb.extend_from_slice(&g.data()[base + la..base + la + lb]);
                }
                if self.wants(*a) {
                    accumulate(grads, *a, Tensor::from_vec(sa, ga)?);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, Tensor::from_vec(sb, gb)?);
                }
            }
            Op::Slice { input, start } => {
                let s = self.shape(*input);
                let gs = g.shape();
                let p = s.plane();
                let mut gi = Tensor::zeros(s);
                for n in 0..s.n {
                    let dst = (n * s.c + start) * p;
                    let src = n * gs.c * p;
                    gi.data_mut()[dst..dst + gs.c * p].copy_from_slice(&g.data()[src..src + gs.c * p]);
                }
                accumulate(grads, *input, gi);
            }
            Op::Upsample(a) => {
                let gi = kernels::upsample_backward(g, self.shape(*a));
                accumulate(grads, *a, gi);
            }
            Op::Flip(a) => accumulate(grads, *a, g.flip_horizontal()),
            Op::ChannelNorm {
                input,
                over_batch,
                inv_std,
            } => {
                let s = self.shape(*input);
                let p = s.plane();
                let mut gi = Tensor::zeros(s);
                let groups = if *over_batch { s.c } else { s.n * s.c };
                for grp in 0..groups {
                    let planes: Vec<usize> = if *over_batch {
                        (0..s.n).map(|n| n * s.c + grp).collect()
                    } else {
                        vec![grp]
                    };
                    let m = (planes.len() * p) as f64;
                    let mut mean_g = 0.0;
                    let mut mean_gy = 0.0;
                    for &i in &planes {
                        for j in i * p..(i + 1) * p {
                            mean_g += g.data()[j];
                            mean_gy += g.data()[j] * y.data()[j];
                        }
                    }
                    mean_g /= m;
                    mean_gy /= m;
                    let is = inv_std[grp];
                    for &i in &planes {
                        for j in i * p..(i + 1) * p {
                            gi.data_mut()[j] = is * (g.data()[j] - mean_g - y.data()[j] * mean_gy);
                        }
                    }
                }
                accumulate(grads, *input, gi);
            }
            Op::ChannelAffine { input, scale } => {
                let s = self.shape(*input);
                let p = s.plane();
                let mut gi = g.clone();
                for n in 0..s.n {
                    for (c, sc) in scale.iter().enumerate() {
                        let base = (n * s.c + c) * p;
                        gi.data_mut()[base..base + p].iter_mut().for_each(|v| *v *= sc);
                    }
                }
                accumulate(grads, *input, gi);
            }
            Op::BiasAdd { input, bias } => {
                if self.wants(*bias) {
                    let s = g.shape();
                    let p = s.plane();
                    let mut gb = Tensor::zeros(self.shape(*bias));
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let base = (n * s.c + c) * p;
                            gb.data_mut()[c] += g.data()[base..base + p].iter().sum::<f64>();
                        }
                    }
                    accumulate(grads, *bias, gb);
                }
                if self.wants(*input) {
                    accumulate(grads, *input, g.clone());
                }
            }
            Op::Sum(a) => {
                let s = self.shape(*a);
                accumulate(grads, *a, Tensor::full(s, g.data()[0]));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                ignore,
                probs,
                count,
            } => {
                let s = self.shape(*logits);
                let p = s.plane();
                let mut gi = Tensor::zeros(s);
                if *count > 0 {
                    let scale = g.data()[0] / *count as f64;
                    for n in 0..s.n {
                        for q in 0..p {
                            let label = labels[n * p + q];
                            if label == *ignore {
                                continue;
                            }
                            for k in 0..s.c {
                                let idx = (n * s.c + k) * p + q;
                                let target = if k == label as usize { 1.0 } else { 0.0 };
                                gi.data_mut()[idx] = scale * (probs[idx] - target);
                            }
                        }
                    }
                }
                accumulate(grads, *logits, gi);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("shapes checked on forward")
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
