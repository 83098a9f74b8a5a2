//! The GC-GRU building block: a spectral graph convolution embedded in a
//! GRU cell, used identically by encoders and decoders.
//!
//! Each gate owns an independent weight matrix over the concatenated
//! `[input, hidden]` signal. The new hidden state is the standard GRU
//! convex combination `u * h_prev + (1 - u) * c`, which keeps hidden
//! values bounded by the candidate range. Biases are added before the
//! activation so gate outputs stay strictly inside (0, 1).

use rand::Rng;

use crate::error::Result;
use crate::graph::PropagationMatrix;
use crate::numeric::{Tape, Tensor, Var};

/// Activation applied after a graph convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    None,
}

/// Weights of one graph-convolution map: `W` is
/// `(d_in + d_hidden) x d_out`, `b` a `1 x d_out` row vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GConvParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl GConvParams {
    /// Uniform init in +/- sqrt(1 / fan_in); biases zero.
    pub fn init<R: Rng>(fan_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        GConvParams {
            w: Tensor::uniform(fan_in, d_out, bound, rng).with_grad(),
            b: Tensor::zeros(1, d_out).with_grad(),
        }
    }

    pub fn zeros(fan_in: usize, d_out: usize) -> Self {
        GConvParams {
            w: Tensor::zeros(fan_in, d_out).with_grad(),
            b: Tensor::zeros(1, d_out).with_grad(),
        }
    }
}

/// The three gate parameter sets of one GC-GRU cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GCGRUParams {
    pub reset: GConvParams,
    pub update: GConvParams,
    pub candidate: GConvParams,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl GCGRUParams {
    pub fn init<R: Rng>(d_in: usize, d_hidden: usize, rng: &mut R) -> Self {
        let fan_in = d_in + d_hidden;
        GCGRUParams {
            reset: GConvParams::init(fan_in, d_hidden, rng),
            update: GConvParams::init(fan_in, d_hidden, rng),
            candidate: GConvParams::init(fan_in, d_hidden, rng),
            d_in,
            d_hidden,
        }
    }

    pub fn zeros(d_in: usize, d_hidden: usize) -> Self {
        let fan_in = d_in + d_hidden;
        GCGRUParams {
            reset: GConvParams::zeros(fan_in, d_hidden),
            update: GConvParams::zeros(fan_in, d_hidden),
            candidate: GConvParams::zeros(fan_in, d_hidden),
            d_in,
            d_hidden,
        }
    }
}

/// Tape handles for one gate's parameters.
#[derive(Debug, Clone, Copy)]
pub struct BoundGConv {
    pub w: Var,
    pub b: Var,
}

impl BoundGConv {
    pub fn bind(tape: &mut Tape, p: &GConvParams) -> Self {
        BoundGConv {
            w: tape.param(&p.w),
            b: tape.param(&p.b),
        }
    }

    pub fn accumulate_grads(&self, tape: &Tape, p: &mut GConvParams) {
        p.w.accumulate_grad(tape.grad(self.w));
        p.b.accumulate_grad(tape.grad(self.b));
    }
}

/// Tape handles for one cell. Binding once per tape is what shares the
/// weights across all time steps of a sequence.
#[derive(Debug, Clone, Copy)]
pub struct BoundGCGRU {
    pub reset: BoundGConv,
    pub update: BoundGConv,
    pub candidate: BoundGConv,
}

impl BoundGCGRU {
    pub fn bind(tape: &mut Tape, p: &GCGRUParams) -> Self {
        BoundGCGRU {
            reset: BoundGConv::bind(tape, &p.reset),
            update: BoundGConv::bind(tape, &p.update),
            candidate: BoundGConv::bind(tape, &p.candidate),
        }
    }

    pub fn accumulate_grads(&self, tape: &Tape, p: &mut GCGRUParams) {
        self.reset.accumulate_grads(tape, &mut p.reset);
        self.update.accumulate_grads(tape, &mut p.update);
        self.candidate.accumulate_grads(tape, &mut p.candidate);
    }
}

/// Graph convolution `activation(P^hops . H . W + b)` with the bias
/// broadcast over node rows.
pub fn gconv(
    tape: &mut Tape,
    p: Var,
    h_in: Var,
    params: &BoundGConv,
    activation: Activation,
    hops: usize,
) -> Result<Var> {
    let mut mixed = h_in;
    for _ in 0..hops {
        mixed = tape.matmul(p, mixed)?;
    }
    let projected = tape.matmul(mixed, params.w)?;
    let biased = tape.add_bias(projected, params.b)?;
    Ok(match activation {
        Activation::Sigmoid => tape.sigmoid(biased),
        Activation::Tanh => tape.tanh(biased),
        Activation::None => biased,
    })
}

/// One GC-GRU step:
/// `r = sigma(gconv([x, h]))`, `u = sigma(gconv([x, h]))`,
/// `c = tanh(gconv([x, r*h]))`, `h' = u*h + (1-u)*c`.
pub fn gcgru_step(
    tape: &mut Tape,
    p: Var,
    x_t: Var,
    h_prev: Var,
    params: &BoundGCGRU,
    hops: usize,
) -> Result<Var> {
    let xh = tape.concat_cols(x_t, h_prev)?;
    let r = gconv(tape, p, xh, &params.reset, Activation::Sigmoid, hops)?;
    let u = gconv(tape, p, xh, &params.update, Activation::Sigmoid, hops)?;

    let rh = tape.mul(r, h_prev)?;
    let xrh = tape.concat_cols(x_t, rh)?;
    let c = gconv(tape, p, xrh, &params.candidate, Activation::Tanh, hops)?;

    let keep = tape.mul(u, h_prev)?;
    let ones = {
        let shape = tape.value(u).shape().to_vec();
        tape.constant(Tensor::ones(shape[0], shape[1]))
    };
    let one_minus_u = tape.sub(ones, u)?;
    let take = tape.mul(one_minus_u, c)?;
    tape.add(keep, take)
}

/// Convenience single-step evaluation on plain tensors; spins up a private
/// tape and discards it.
pub fn gcgru_step_eval(
    prop: &PropagationMatrix,
    x_t: &Tensor,
    h_prev: &Tensor,
    params: &GCGRUParams,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = tape.constant(prop.matrix().clone());
    let x = tape.constant(x_t.clone());
    let h = tape.constant(h_prev.clone());
    let bound = BoundGCGRU::bind(&mut tape, params);
    let out = gcgru_step(&mut tape, p, x, h, &bound, 1)?;
    Ok(tape.value(out).clone())
}

/// Same for a bare graph convolution.
pub fn gconv_eval(
    prop: &PropagationMatrix,
    h_in: &Tensor,
    params: &GConvParams,
    activation: Activation,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = tape.constant(prop.matrix().clone());
    let h = tape.constant(h_in.clone());
    let bound = BoundGConv::bind(&mut tape, params);
    let out = gconv(&mut tape, p, h, &bound, activation, 1)?;
    Ok(tape.value(out).clone())
}
