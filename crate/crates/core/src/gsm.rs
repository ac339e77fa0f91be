//! The Gate-Shift Module.
//!
//! Channels are split into two halves `X = [X₁, X₂]`. Each half gets a single
//! spatio-temporal gating plane `g_i = act(W_i ∗ X_i)` (3×3×3 kernel, zero
//! padding, no bias) which splits it into a gated part `Y_i = g_i ⊙ X_i` and a
//! residual `R_i = X_i − Y_i`. The gated part of the first half moves one
//! frame forward in time, that of the second half one frame backward, and
//! each is added back to its residual:
//!
//! ```text
//! Z₁ = shift_fw(Y₁) + R₁        Z₂ = shift_bw(Y₂) + R₂
//! ```
//!
//! With zero gating kernels and tanh the module is the identity; with the
//! gate forced to one it reduces to a plain grouped temporal shift.

use crate::error::{GsmError, Result};
use crate::kernels::{self, Activation, Conv2dGeometry, ShiftDirection};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Gating kernel extent along (T, H, W).
pub const GATE_KERNEL: usize = 3;
const GATE_PADDING: (usize, usize, usize) = (1, 1, 1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateActivation {
    Tanh,
    Sigmoid,
}

impl From<GateActivation> for Activation {
    fn from(g: GateActivation) -> Self {
        match g {
            GateActivation::Tanh => Activation::Tanh,
            GateActivation::Sigmoid => Activation::Sigmoid,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    #[default]
    Learned,
    /// Gate plane ≡ 0; the gating convolution is skipped.
    ForcedZero,
    /// Gate plane ≡ 1; the gating convolution is skipped.
    ForcedOne,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GsmParams<F> {
    pub gate_kernel_1: Tensor<F>,
    pub gate_kernel_2: Tensor<F>,
    /// Optional `(C, C_in, 3, 3)` per-frame convolution applied before the split.
    pub spatial_conv: Option<Tensor<F>>,
    pub gate_activation: GateActivation,
    channels: usize,
}

/// Number of learnable gating parameters for `channels` channels: `27·C`.
pub fn gsm_param_count(channels: usize) -> Result<usize> {
    check_even(channels)?;
    Ok(2 * GATE_KERNEL.pow(3) * (channels / 2))
}

fn check_even(channels: usize) -> Result<()> {
    if channels == 0 || !channels.is_multiple_of(2) {
        return Err(GsmError::shape(
            "channel",
            format!("GSM needs a positive even channel count, got {channels}"),
        ));
    }
    Ok(())
}

impl<F: Scalar> GsmParams<F> {
    /// Zero-initialized gating kernels, no spatial convolution.
    pub fn new(channels: usize, gate_activation: GateActivation) -> Result<Self> {
        check_even(channels)?;
        let k = [channels / 2, GATE_KERNEL, GATE_KERNEL, GATE_KERNEL];
        Ok(GsmParams {
            gate_kernel_1: Tensor::zeros(&k),
            gate_kernel_2: Tensor::zeros(&k),
            spatial_conv: None,
            gate_activation,
            channels,
        })
    }

    /// Gating kernels drawn from N(0, std²).
    pub fn random<R: Rng + ?Sized>(
        channels: usize,
        gate_activation: GateActivation,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::new(channels, gate_activation)?;
        p.gate_kernel_1 = Tensor::randn(p.gate_kernel_1.shape(), std, rng);
        p.gate_kernel_2 = Tensor::randn(p.gate_kernel_2.shape(), std, rng);
        Ok(p)
    }

    /// Adds the 1×3×3 spatial convolution from `in_channels`, He-initialized.
    pub fn with_spatial_conv<R: Rng + ?Sized>(mut self, in_channels: usize, rng: &mut R) -> Self {
        let std = (2.0 / (in_channels * 9) as f64).sqrt();
        self.spatial_conv = Some(Tensor::randn(&[self.channels, in_channels, 3, 3], std, rng));
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn gating_param_count(&self) -> usize {
        self.gate_kernel_1.numel() + self.gate_kernel_2.numel()
    }
}

/// Every tensor of Eqns. Y/R/Z for both channel groups.
#[derive(Clone, Debug)]
pub struct GsmIntermediates<F> {
    pub x1: Tensor<F>,
    pub x2: Tensor<F>,
    pub y1: Tensor<F>,
    pub y2: Tensor<F>,
    pub r1: Tensor<F>,
    pub r2: Tensor<F>,
    pub z1: Tensor<F>,
    pub z2: Tensor<F>,
}

/// `act(W ∗ X)` for one channel group; output `(N,1,T,H,W)`.
pub fn spatial_gate<F: Scalar>(
    x_group: &Tensor<F>,
    kernel: &Tensor<F>,
    act: GateActivation,
) -> Result<Tensor<F>> {
    let plane = kernels::conv3d_plane(x_group, kernel, GATE_PADDING)?;
    Ok(kernels::activation_map(&plane, act.into()))
}

fn gate_plane<F: Scalar>(
    x_group: &Tensor<F>,
    kernel: &Tensor<F>,
    act: GateActivation,
    mode: GateMode,
) -> Result<Tensor<F>> {
    let s = x_group.shape();
    let plane = [s[0], 1, s[2], s[3], s[4]];
    match mode {
        GateMode::Learned => spatial_gate(x_group, kernel, act),
        GateMode::ForcedZero => Ok(Tensor::zeros(&plane)),
        GateMode::ForcedOne => Ok(Tensor::ones(&plane)),
    }
}

fn prepare<F: Scalar>(x: &Tensor<F>, params: &GsmParams<F>) -> Result<Tensor<F>> {
    if x.rank() != 5 {
        return Err(GsmError::shape(
            "rank",
            format!("GSM input must be (N,C,T,H,W), got {:?}", x.shape()),
        ));
    }
    let x = match &params.spatial_conv {
        Some(w) => kernels::conv2d(x, w, None, &Conv2dGeometry::same(3))?,
        None => x.clone(),
    };
    check_even(x.shape()[1])?;
    if x.shape()[1] != params.channels {
        return Err(GsmError::shape(
            "channel",
            format!(
                "GSM built for {} channels, input has {}",
                params.channels,
                x.shape()[1]
            ),
        ));
    }
    Ok(x)
}

pub fn gsm_forward<F: Scalar>(
    x: &Tensor<F>,
    params: &GsmParams<F>,
    mode: GateMode,
) -> Result<(Tensor<F>, GsmIntermediates<F>)> {
    let x = prepare(x, params)?;
    let half = params.channels / 2;
    let x1 = x.slice_channels(0, half)?;
    let x2 = x.slice_channels(half, half)?;
    let g1 = gate_plane(&x1, &params.gate_kernel_1, params.gate_activation, mode)?;
    let g2 = gate_plane(&x2, &params.gate_kernel_2, params.gate_activation, mode)?;
    let y1 = kernels::hadamard_broadcast(&g1, &x1)?;
    let y2 = kernels::hadamard_broadcast(&g2, &x2)?;
    let r1 = x1.sub(&y1)?;
    let r2 = x2.sub(&y2)?;
    let z1 = kernels::shift_fw(&y1)?.add(&r1)?;
    let z2 = kernels::shift_bw(&y2)?.add(&r2)?;
    let z = Tensor::concat_channels(&[&z1, &z2])?;
    Ok((
        z,
        GsmIntermediates {
            x1,
            x2,
            y1,
            y2,
            r1,
            r2,
            z1,
            z2,
        },
    ))
}

/// Same module written as `Z_i = X_i + (shift(Y_i) − Y_i)`.
pub fn gsm_forward_residual_form<F: Scalar>(
    x: &Tensor<F>,
    params: &GsmParams<F>,
    mode: GateMode,
) -> Result<Tensor<F>> {
    let x = prepare(x, params)?;
    let half = params.channels / 2;
    let groups = [
        (&params.gate_kernel_1, ShiftDirection::Forward, 0),
        (&params.gate_kernel_2, ShiftDirection::Backward, half),
    ];
    let mut outs = Vec::with_capacity(2);
    for (kernel, dir, start) in groups {
        let xi = x.slice_channels(start, half)?;
        let g = gate_plane(&xi, kernel, params.gate_activation, mode)?;
        let y = kernels::hadamard_broadcast(&g, &xi)?;
        let residual = kernels::temporal_shift(&y, dir)?.sub(&y)?;
        outs.push(xi.add(&residual)?);
    }
    Tensor::concat_channels(&[&outs[0], &outs[1]])
}

/// Tape handles of one module's parameters.
#[derive(Clone, Copy, Debug)]
pub struct GsmVars {
    pub gate_kernel_1: Var,
    pub gate_kernel_2: Var,
    pub spatial_conv: Option<Var>,
}

impl GsmVars {
    pub fn bind<F: Scalar>(tape: &mut Tape<F>, params: &GsmParams<F>, requires_grad: bool) -> Self {
        GsmVars {
            gate_kernel_1: tape.leaf(params.gate_kernel_1.clone(), requires_grad),
            gate_kernel_2: tape.leaf(params.gate_kernel_2.clone(), requires_grad),
            spatial_conv: params
                .spatial_conv
                .as_ref()
                .map(|w| tape.leaf(w.clone(), requires_grad)),
        }
    }
}

/// Differentiable GSM; mirrors [`gsm_forward`] op for op.
pub fn gsm_on_tape<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    vars: &GsmVars,
    act: GateActivation,
    mode: GateMode,
) -> Result<Var> {
    if tape.shape(x).len() != 5 {
        return Err(GsmError::shape("rank", "GSM input must be (N,C,T,H,W)"));
    }
    let x = match vars.spatial_conv {
        Some(w) => tape.conv2d(x, w, None, Conv2dGeometry::same(3))?,
        None => x,
    };
    let c = tape.shape(x)[1];
    check_even(c)?;
    let kc = tape.shape(vars.gate_kernel_1)[0];
    if kc * 2 != c {
        return Err(GsmError::shape(
            "channel",
            format!("GSM built for {} channels, input has {c}", kc * 2),
        ));
    }
    let half = c / 2;
    let groups = [
        (vars.gate_kernel_1, ShiftDirection::Forward, 0),
        (vars.gate_kernel_2, ShiftDirection::Backward, half),
    ];
    let mut outs = Vec::with_capacity(2);
    for (kernel, dir, start) in groups {
        let xi = tape.slice_channels(x, start, half)?;
        let gate = match mode {
            GateMode::Learned => {
                let plane = tape.conv3d_plane(xi, kernel, GATE_PADDING)?;
                tape.activation(plane, act.into())
            }
            GateMode::ForcedZero | GateMode::ForcedOne => {
                let s = tape.shape(xi).to_vec();
                let fill = if mode == GateMode::ForcedOne {
                    F::one()
                } else {
                    F::zero()
                };
                tape.constant(Tensor::full(&[s[0], 1, s[2], s[3], s[4]], fill))
            }
        };
        let y = tape.hadamard_broadcast(gate, xi)?;
        let r = tape.sub(xi, y)?;
        let shifted = tape.temporal_shift(y, dir)?;
        outs.push(tape.add(shifted, r)?);
    }
    tape.concat_channels(&outs)
}
