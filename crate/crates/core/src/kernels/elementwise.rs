use super::conv::FrameDims;
use crate::error::{GsmError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply<F: Scalar>(self, v: F) -> F {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => F::one() / (F::one() + (-v).exp()),
            Activation::Relu => v.max(F::zero()),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    pub fn derivative<F: Scalar>(self, x: F, y: F) -> F {
        match self {
            Activation::Tanh => F::one() - y * y,
            Activation::Sigmoid => y * (F::one() - y),
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }
}

pub fn activation_map<F: Scalar>(x: &Tensor<F>, kind: Activation) -> Tensor<F> {
    x.map(|v| kind.apply(v))
}

pub fn activation_backward<F: Scalar>(
    x: &Tensor<F>,
    y: &Tensor<F>,
    kind: Activation,
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    let d: Vec<F> = x
        .data()
        .iter()
        .zip(y.data())
        .zip(grad_out.data())
        .map(|((&xi, &yi), &g)| g * kind.derivative(xi, yi))
        .collect();
    Tensor::new(x.shape(), d)
}

fn check_broadcast<F: Scalar>(gate: &Tensor<F>, x: &Tensor<F>) -> Result<FrameDims> {
    let dg = FrameDims::of(gate.shape())?;
    let dx = FrameDims::of(x.shape())?;
    if gate.rank() != x.rank()
        || dg.c != 1
        || dg.n != dx.n
        || dg.t != dx.t
        || dg.h != dx.h
        || dg.w != dx.w
    {
        return Err(GsmError::shape(
            "non-channel",
            format!(
                "gate {:?} cannot broadcast over {:?}",
                gate.shape(),
                x.shape()
            ),
        ));
    }
    Ok(dx)
}

/// `out[n,c,t,h,w] = gate[n,0,t,h,w] * x[n,c,t,h,w]`.
pub fn hadamard_broadcast<F: Scalar>(gate: &Tensor<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
    let d = check_broadcast(gate, x)?;
    let inner = d.t * d.plane();
    let g = gate.data();
    let mut out = x.data().to_vec();
    for n in 0..d.n {
        let gs = &g[n * inner..(n + 1) * inner];
        for c in 0..d.c {
            let off = (n * d.c + c) * inner;
            for (o, &gv) in out[off..off + inner].iter_mut().zip(gs) {
                *o *= gv;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Returns `(grad_gate, grad_x)`; the gate gradient sums over channels.
pub fn hadamard_broadcast_backward<F: Scalar>(
    gate: &Tensor<F>,
    x: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let d = check_broadcast(gate, x)?;
    let inner = d.t * d.plane();
    let g = gate.data();
    let xs = x.data();
    let go = grad_out.data();
    let mut gg = vec![F::zero(); gate.numel()];
    let mut gx = vec![F::zero(); x.numel()];
    for n in 0..d.n {
        for c in 0..d.c {
            let off = (n * d.c + c) * inner;
            for i in 0..inner {
                gg[n * inner + i] += go[off + i] * xs[off + i];
                gx[off + i] = go[off + i] * g[n * inner + i];
            }
        }
    }
    Ok((Tensor::new(gate.shape(), gg)?, Tensor::new(x.shape(), gx)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftDirection {
    /// `out[t] = x[t-1]`, frame 0 zero-filled.
    Forward,
    /// `out[t] = x[t+1]`, last frame zero-filled.
    Backward,
}

impl ShiftDirection {
    pub fn adjoint(self) -> Self {
        match self {
            ShiftDirection::Forward => ShiftDirection::Backward,
            ShiftDirection::Backward => ShiftDirection::Forward,
        }
    }
}

/// One-step temporal shift of an `(N,C,T,H,W)` tensor with zero fill.
pub fn temporal_shift<F: Scalar>(x: &Tensor<F>, dir: ShiftDirection) -> Result<Tensor<F>> {
    if x.rank() != 5 {
        return Err(GsmError::shape(
            "rank",
            format!("temporal shift needs (N,C,T,H,W), got {:?}", x.shape()),
        ));
    }
    let d = FrameDims::of(x.shape())?;
    let plane = d.plane();
    let xs = x.data();
    let mut out = vec![F::zero(); xs.len()];
    for nc in 0..d.n * d.c {
        let base = nc * d.t * plane;
        for t in 0..d.t {
            let src = match dir {
                ShiftDirection::Forward if t >= 1 => t - 1,
                ShiftDirection::Backward if t + 1 < d.t => t + 1,
                _ => continue,
            };
            out[base + t * plane..base + (t + 1) * plane]
                .copy_from_slice(&xs[base + src * plane..base + (src + 1) * plane]);
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn shift_fw<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    temporal_shift(x, ShiftDirection::Forward)
}

pub fn shift_bw<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    temporal_shift(x, ShiftDirection::Backward)
}

/// Inverted-dropout mask: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<F: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    rate: f64,
    rng: &mut R,
) -> Result<Tensor<F>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(GsmError::InvalidArgument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    let keep = F::from_f64_lossy(1.0 / (1.0 - rate));
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if rate > 0.0 && rng.gen::<f64>() < rate {
                F::zero()
            } else {
                keep
            }
        })
        .collect();
    Tensor::new(shape, data)
}
