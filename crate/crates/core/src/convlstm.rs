//! Convolutional LSTM cell.
//!
//! ```text
//! i_t   = σ(W_ih * h_{t-1} + W_ix * x_t + b_i)
//! f_t   = σ(W_fh * h_{t-1} + W_fx * x_t + b_f + b_fg)
//! c̃_t   = tanh(W_ch * h_{t-1} + W_cx * x_t + b_c)
//! c_t   = f_t · c_{t-1} + i_t · c̃_t
//! o_t   = σ(W_oh * h_{t-1} + W_ox * x_t + b_o)
//! h_t   = o_t · tanh(c_t)
//! ```
//!
//! `b_fg` is the fixed forget-gate offset [`FORGET_OFFSET`]; it is not trained.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeometry;
use crate::tensor::{Shape, Tensor};

pub const FORGET_OFFSET: f64 = 1.0;

/// Draws a `(c_out, c_in, k, k)` kernel from Normal(0, 2 / (fan_in + fan_out)).
pub fn glorot_normal(c_out: usize, c_in: usize, k: usize, rng: &mut impl Rng) -> Tensor {
    let fan_in = (c_in * k * k) as f64;
    let fan_out = (c_out * k * k) as f64;
    let std = (2.0 / (fan_in + fan_out)).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let shape = Shape::new(c_out, c_in, k, k);
    let data = (0..shape.numel()).map(|_| normal.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("sized to shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmParams {
    pub w_ih: Tensor,
    pub w_ix: Tensor,
    pub w_fh: Tensor,
    pub w_fx: Tensor,
    pub w_oh: Tensor,
    pub w_ox: Tensor,
    pub w_ch: Tensor,
    pub w_cx: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
    pub b_c: Tensor,
}

pub const PARAM_NAMES: [&str; 12] = [
    "w_ih", "w_ix", "w_fh", "w_fx", "w_oh", "w_ox", "w_ch", "w_cx", "b_i", "b_f", "b_o", "b_c",
];

impl ConvLstmParams {
    /// Glorot-normal kernels, zero biases.
    pub fn init(c_in: usize, c_out: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        if c_in == 0 || c_out == 0 || kernel == 0 {
            return Err(Error::Config("ConvLSTM channel counts and kernel must be positive".into()));
        }
        let mut h = || glorot_normal(c_out, c_out, kernel, rng);
        let (w_ih, w_fh, w_oh, w_ch) = (h(), h(), h(), h());
        let mut x = || glorot_normal(c_out, c_in, kernel, rng);
        let (w_ix, w_fx, w_ox, w_cx) = (x(), x(), x(), x());
        let zero = || Tensor::vector(vec![0.0; c_out]);
        Ok(ConvLstmParams {
            w_ih,
            w_ix,
            w_fh,
            w_fx,
            w_oh,
            w_ox,
            w_ch,
            w_cx,
            b_i: zero(),
            b_f: zero(),
            b_o: zero(),
            b_c: zero(),
        })
    }

    pub fn init_seeded(c_in: usize, c_out: usize, seed: u64) -> Result<Self> {
        Self::init(c_in, c_out, 1, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn zeros(c_in: usize, c_out: usize, kernel: usize) -> Self {
        let x = || Tensor::zeros(Shape::new(c_out, c_in, kernel, kernel));
        let h = || Tensor::zeros(Shape::new(c_out, c_out, kernel, kernel));
        let b = || Tensor::vector(vec![0.0; c_out]);
        ConvLstmParams {
            w_ih: h(),
            w_ix: x(),
            w_fh: h(),
            w_fx: x(),
            w_oh: h(),
            w_ox: x(),
            w_ch: h(),
            w_cx: x(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_c: b(),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.w_ix.shape().c
    }

    pub fn output_channels(&self) -> usize {
        self.w_ix.shape().n
    }

    pub fn kernel_size(&self) -> usize {
        self.w_ix.shape().h
    }

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.w_ih, &self.w_ix, &self.w_fh, &self.w_fx, &self.w_oh, &self.w_ox, &self.w_ch,
            &self.w_cx, &self.b_i, &self.b_f, &self.b_o, &self.b_c,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.w_ih,
            &mut self.w_ix,
            &mut self.w_fh,
            &mut self.w_fx,
            &mut self.w_oh,
            &mut self.w_ox,
            &mut self.w_ch,
            &mut self.w_cx,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ConvLstmVars {
        let [a, b, c, d, e, f, h, i, j, k, l, m] = self.tensors().map(|t| {
            if trainable {
                g.variable(t.clone())
            } else {
                g.constant(t.clone())
            }
        });
        ConvLstmVars {
            w_ih: a,
            w_ix: b,
            w_fh: c,
            w_fx: d,
            w_oh: e,
            w_ox: f,
            w_ch: h,
            w_cx: i,
            b_i: j,
            b_f: k,
            b_o: l,
            b_c: m,
        }
    }

    /// One step evaluated outside any caller-owned graph.
    pub fn step(&self, state: &ConvLstmState, x: &Tensor) -> Result<ConvLstmState> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let sv = state.bind(&mut g);
        let xv = g.constant(x.clone());
        let out = lstm_step(&mut g, &vars, sv, xv)?;
        Ok(ConvLstmState {
            h: g.value(out.state.h).clone(),
            c: g.value(out.state.c).clone(),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvLstmVars {
    pub w_ih: Var,
    pub w_ix: Var,
    pub w_fh: Var,
    pub w_fx: Var,
    pub w_oh: Var,
    pub w_ox: Var,
    pub w_ch: Var,
    pub w_cx: Var,
    pub b_i: Var,
    pub b_f: Var,
    pub b_o: Var,
    pub b_c: Var,
}

impl ConvLstmVars {
    pub fn all(&self) -> [Var; 12] {
        [
            self.w_ih, self.w_ix, self.w_fh, self.w_fx, self.w_oh, self.w_ox, self.w_ch, self.w_cx,
            self.b_i, self.b_f, self.b_o, self.b_c,
        ]
    }
}

/// Hidden and cell maps of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl ConvLstmState {
    pub fn zeros(n: usize, channels: usize, height: usize, width: usize) -> Self {
        let s = Shape::new(n, channels, height, width);
        ConvLstmState {
            h: Tensor::zeros(s),
            c: Tensor::zeros(s),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> StateVars {
        StateVars {
            h: g.constant(self.h.clone()),
            c: g.constant(self.c.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub h: Var,
    pub c: Var,
}

/// Result of one recorded step, with the gate activations kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct LstmStep {
    pub state: StateVars,
    pub input_gate: Var,
    pub forget_gate: Var,
    pub output_gate: Var,
    pub candidate: Var,
}

fn gate_preactivation(
    g: &mut Graph,
    geo: ConvGeometry,
    w_h: Var,
    h: Var,
    w_x: Var,
    x: Var,
    bias: Var,
) -> Result<Var> {
    let from_h = g.conv2d(h, w_h, None, geo)?;
    let from_x = g.conv2d(x, w_x, Some(bias), geo)?;
    g.add(from_h, from_x)
}

pub fn lstm_step(g: &mut Graph, p: &ConvLstmVars, state: StateVars, x: Var) -> Result<LstmStep> {
    let (xs, hs) = (g.shape(x), g.shape(state.h));
    if (xs.n, xs.h, xs.w) != (hs.n, hs.h, hs.w) {
        return Err(Error::shape("lstm_step", format!("input {xs} vs state {hs}")));
    }
    if g.shape(state.c) != hs {
        return Err(Error::shape("lstm_step", "hidden and cell maps differ in shape"));
    }
    let geo = ConvGeometry::same(1, 1);
    let i_pre = gate_preactivation(g, geo, p.w_ih, state.h, p.w_ix, x, p.b_i)?;
    let input_gate = g.sigmoid(i_pre)?;
    let f_pre = gate_preactivation(g, geo, p.w_fh, state.h, p.w_fx, x, p.b_f)?;
    let f_pre = g.add_scalar(f_pre, FORGET_OFFSET)?;
    let forget_gate = g.sigmoid(f_pre)?;
    let c_pre = gate_preactivation(g, geo, p.w_ch, state.h, p.w_cx, x, p.b_c)?;
    let candidate = g.tanh(c_pre)?;
    let kept = g.mul(forget_gate, state.c)?;
    let written = g.mul(input_gate, candidate)?;
    let c = g.add(kept, written)?;
    let o_pre = gate_preactivation(g, geo, p.w_oh, state.h, p.w_ox, x, p.b_o)?;
    let output_gate = g.sigmoid(o_pre)?;
    let c_squashed = g.tanh(c)?;
    let h = g.mul(output_gate, c_squashed)?;
    Ok(LstmStep {
        state: StateVars { h, c },
        input_gate,
        forget_gate,
        output_gate,
        candidate,
    })
}
