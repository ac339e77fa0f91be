//! Per-frame 2D convolution and the single-plane 3D gating convolution.
//!
//! Both lower to im2col + GEMM. Work is split per output frame; partial
//! weight gradients are reduced in frame order so results do not depend on
//! the worker count.

use crate::error::{GsmError, Result};
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Conv2dGeometry {
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }
}

impl Conv2dGeometry {
    pub fn new(stride: (usize, usize), padding: (usize, usize), groups: usize) -> Self {
        Conv2dGeometry {
            stride,
            padding,
            groups,
        }
    }

    /// Stride 1, padding `k/2`: preserves H and W for odd kernels.
    pub fn same(kernel: usize) -> Self {
        Conv2dGeometry::new((1, 1), (kernel / 2, kernel / 2), 1)
    }
}

/// Output extent of a sliding window, floor convention.
pub fn window_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    axis: &str,
) -> Result<usize> {
    if stride == 0 {
        return Err(GsmError::Geometry(format!("{axis}: stride must be >= 1")));
    }
    if kernel == 0 {
        return Err(GsmError::Geometry(format!("{axis}: kernel must be >= 1")));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(GsmError::Geometry(format!(
            "{axis}: kernel {kernel} exceeds padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Interprets a rank-4 `(N,C,H,W)` or rank-5 `(N,C,T,H,W)` shape.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FrameDims {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl FrameDims {
    pub fn of(shape: &[usize]) -> Result<Self> {
        match *shape {
            [n, c, h, w] => Ok(FrameDims { n, c, t: 1, h, w }),
            [n, c, t, h, w] => Ok(FrameDims { n, c, t, h, w }),
            _ => Err(GsmError::shape(
                "rank",
                format!("expected (N,C,H,W) or (N,C,T,H,W), got {shape:?}"),
            )),
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Offset of plane `(n, c, t)`.
    pub fn offset(&self, n: usize, c: usize, t: usize) -> usize {
        ((n * self.c + c) * self.t + t) * self.h * self.w
    }

    pub fn shape_like(&self, rank: usize, c: usize, t: usize, h: usize, w: usize) -> Vec<usize> {
        if rank == 4 {
            vec![self.n, c, h, w]
        } else {
            vec![self.n, c, t, h, w]
        }
    }
}

/// Sliding 3D patch; temporal stride is always 1.
#[derive(Clone, Copy, Debug)]
struct Patch {
    kt: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    ph: usize,
    pw: usize,
}

impl Patch {
    fn rows(&self, channels: usize) -> usize {
        channels * self.kt * self.kh * self.kw
    }
}

/// Fills `cols` (`rows × ho·wo`) with the receptive fields of output frame `to`.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    x: &[F],
    d: &FrameDims,
    n: usize,
    c0: usize,
    cg: usize,
    to: usize,
    p: &Patch,
    ho: usize,
    wo: usize,
    cols: &mut [F],
) {
    let hw_out = ho * wo;
    for ci in 0..cg {
        for dt in 0..p.kt {
            let ti = (to + dt) as isize - p.pt as isize;
            for ky in 0..p.kh {
                for kx in 0..p.kw {
                    let row = ((ci * p.kt + dt) * p.kh + ky) * p.kw + kx;
                    let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                    if ti < 0 || ti >= d.t as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let plane = &x[d.offset(n, c0 + ci, ti as usize)..][..d.plane()];
                    for oy in 0..ho {
                        let iy = (oy * p.sh + ky) as isize - p.ph as isize;
                        let seg = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= d.h as isize {
                            seg.fill(F::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                        for (ox, v) in seg.iter_mut().enumerate() {
                            let ix = (ox * p.sw + kx) as isize - p.pw as isize;
                            *v = if ix < 0 || ix >= d.w as isize {
                                F::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` into the frame planes of `gx`.
///
/// `gx` holds only the `cg` channels of one sample, layout `(cg, T, H, W)`.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    cols: &[F],
    d: &FrameDims,
    cg: usize,
    to: usize,
    p: &Patch,
    ho: usize,
    wo: usize,
    gx: &mut [F],
) {
    let hw_out = ho * wo;
    let plane_len = d.plane();
    for ci in 0..cg {
        for dt in 0..p.kt {
            let ti = (to + dt) as isize - p.pt as isize;
            if ti < 0 || ti >= d.t as isize {
                continue;
            }
            let plane_off = (ci * d.t + ti as usize) * plane_len;
            for ky in 0..p.kh {
                for kx in 0..p.kw {
                    let row = ((ci * p.kt + dt) * p.kh + ky) * p.kw + kx;
                    let src = &cols[row * hw_out..(row + 1) * hw_out];
                    for oy in 0..ho {
                        let iy = (oy * p.sh + ky) as isize - p.ph as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let dst = &mut gx[plane_off + iy as usize * d.w..][..d.w];
                        for ox in 0..wo {
                            let ix = (ox * p.sw + kx) as isize - p.pw as isize;
                            if ix >= 0 && (ix as usize) < d.w {
                                dst[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dPlan {
    d: FrameDims,
    rank: usize,
    co: usize,
    cig: usize,
    cog: usize,
    groups: usize,
    ho: usize,
    wo: usize,
    patch: Patch,
}

fn plan_conv2d<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    geom: &Conv2dGeometry,
) -> Result<Conv2dPlan> {
    let d = FrameDims::of(input.shape())?;
    let &[co, cig, kh, kw] = weight.shape() else {
        return Err(GsmError::shape(
            "weight rank",
            format!(
                "conv2d weight must be (Co,Ci/g,kh,kw), got {:?}",
                weight.shape()
            ),
        ));
    };
    let g = geom.groups;
    if g == 0 {
        return Err(GsmError::shape("groups", "groups must be >= 1"));
    }
    if d.c % g != 0 {
        return Err(GsmError::shape(
            "input channel",
            format!("{} input channels not divisible by {g} groups", d.c),
        ));
    }
    if co % g != 0 {
        return Err(GsmError::shape(
            "output channel",
            format!("{co} output channels not divisible by {g} groups"),
        ));
    }
    if d.c / g != cig {
        return Err(GsmError::shape(
            "input channel",
            format!(
                "weight expects {cig} channels per group, input has {}",
                d.c / g
            ),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(GsmError::shape(
                "bias",
                format!("bias must be ({co}), got {:?}", b.shape()),
            ));
        }
    }
    let ho = window_extent(d.h, kh, geom.stride.0, geom.padding.0, "height")?;
    let wo = window_extent(d.w, kw, geom.stride.1, geom.padding.1, "width")?;
    Ok(Conv2dPlan {
        d,
        rank: input.rank(),
        co,
        cig,
        cog: co / g,
        groups: g,
        ho,
        wo,
        patch: Patch {
            kt: 1,
            kh,
            kw,
            sh: geom.stride.0,
            sw: geom.stride.1,
            pt: 0,
            ph: geom.padding.0,
            pw: geom.padding.1,
        },
    })
}

/// Per-frame 2D cross-correlation. Input `(N,C,H,W)` or `(N,C,T,H,W)`.
pub fn conv2d<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    geom: &Conv2dGeometry,
) -> Result<Tensor<F>> {
    let pl = plan_conv2d(input, weight, bias, geom)?;
    let d = pl.d;
    let hw = pl.ho * pl.wo;
    let k = pl.patch.rows(pl.cig);
    let x = input.data();
    let w = weight.data();

    // frame f = n * T + t; each yields a (Co, Ho*Wo) block
    let frames: Vec<Vec<F>> = (0..d.n * d.t)
        .into_par_iter()
        .map(|f| {
            let (n, t) = (f / d.t, f % d.t);
            let mut cols = vec![F::zero(); k * hw];
            let mut out = vec![F::zero(); pl.co * hw];
            for g in 0..pl.groups {
                im2col(
                    x,
                    &d,
                    n,
                    g * pl.cig,
                    pl.cig,
                    t,
                    &pl.patch,
                    pl.ho,
                    pl.wo,
                    &mut cols,
                );
                matmul(
                    pl.cog,
                    k,
                    hw,
                    &w[g * pl.cog * k..],
                    false,
                    &cols,
                    false,
                    &mut out[g * pl.cog * hw..],
                    false,
                );
            }
            out
        })
        .collect();

    let out_shape = d.shape_like(pl.rank, pl.co, d.t, pl.ho, pl.wo);
    let mut out = vec![F::zero(); d.n * pl.co * d.t * hw];
    for (f, block) in frames.iter().enumerate() {
        let (n, t) = (f / d.t, f % d.t);
        for c in 0..pl.co {
            let dst = ((n * pl.co + c) * d.t + t) * hw;
            let b = bias.map_or(F::zero(), |b| b.data()[c]);
            for (o, &v) in out[dst..dst + hw]
                .iter_mut()
                .zip(&block[c * hw..(c + 1) * hw])
            {
                *o = v + b;
            }
        }
    }
    Tensor::new(&out_shape, out)
}

pub struct Conv2dGrads<F> {
    pub input: Tensor<F>,
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    geom: &Conv2dGeometry,
    grad_out: &Tensor<F>,
) -> Result<Conv2dGrads<F>> {
    let pl = plan_conv2d(input, weight, None, geom)?;
    let d = pl.d;
    let hw = pl.ho * pl.wo;
    let k = pl.patch.rows(pl.cig);
    let expected = d.shape_like(pl.rank, pl.co, d.t, pl.ho, pl.wo);
    if grad_out.shape() != expected.as_slice() {
        return Err(GsmError::shape(
            "grad_out",
            format!("expected {expected:?}, got {:?}", grad_out.shape()),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let go = grad_out.data();

    // per frame: (grad of the frame's input planes (C,H,W), partial weight grad)
    let parts: Vec<(Vec<F>, Vec<F>)> = (0..d.n * d.t)
        .into_par_iter()
        .map(|f| {
            let (n, t) = (f / d.t, f % d.t);
            let mut gout = vec![F::zero(); pl.co * hw];
            for c in 0..pl.co {
                let src = ((n * pl.co + c) * d.t + t) * hw;
                gout[c * hw..(c + 1) * hw].copy_from_slice(&go[src..src + hw]);
            }
            let mut cols = vec![F::zero(); k * hw];
            let mut gcols = vec![F::zero(); k * hw];
            let mut gw = vec![F::zero(); weight.numel()];
            let mut gx = vec![F::zero(); d.c * d.plane()];
            let single = FrameDims { t: 1, ..d };
            for g in 0..pl.groups {
                im2col(
                    x,
                    &d,
                    n,
                    g * pl.cig,
                    pl.cig,
                    t,
                    &pl.patch,
                    pl.ho,
                    pl.wo,
                    &mut cols,
                );
                let gout_g = &gout[g * pl.cog * hw..(g + 1) * pl.cog * hw];
                // dW_g = dOut_g · colsᵀ
                matmul(
                    pl.cog,
                    hw,
                    k,
                    gout_g,
                    false,
                    &cols,
                    true,
                    &mut gw[g * pl.cog * k..],
                    false,
                );
                // dcols = W_gᵀ · dOut_g
                matmul(
                    k,
                    pl.cog,
                    hw,
                    &w[g * pl.cog * k..],
                    true,
                    gout_g,
                    false,
                    &mut gcols,
                    false,
                );
                col2im(
                    &gcols,
                    &single,
                    pl.cig,
                    0,
                    &pl.patch,
                    pl.ho,
                    pl.wo,
                    &mut gx[g * pl.cig * d.plane()..(g + 1) * pl.cig * d.plane()],
                );
            }
            (gx, gw)
        })
        .collect();

    let mut gx_all = vec![F::zero(); input.numel()];
    let mut gw_all = vec![F::zero(); weight.numel()];
    for (f, (gx, gw)) in parts.iter().enumerate() {
        let (n, t) = (f / d.t, f % d.t);
        for c in 0..d.c {
            let dst = d.offset(n, c, t);
            gx_all[dst..dst + d.plane()].copy_from_slice(&gx[c * d.plane()..(c + 1) * d.plane()]);
        }
        for (a, &b) in gw_all.iter_mut().zip(gw) {
            *a += b;
        }
    }
    let mut gb = vec![F::zero(); pl.co];
    for n in 0..d.n {
        for (c, slot) in gb.iter_mut().enumerate() {
            let off = (n * pl.co + c) * d.t * hw;
            *slot += go[off..off + d.t * hw].iter().copied().sum::<F>();
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape(), gx_all)?,
        weight: Tensor::new(weight.shape(), gw_all)?,
        bias: Tensor::new(&[pl.co], gb)?,
    })
}

struct PlanePlan {
    d: FrameDims,
    to: usize,
    ho: usize,
    wo: usize,
    patch: Patch,
}

fn plan_plane<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    padding: (usize, usize, usize),
) -> Result<PlanePlan> {
    if input.rank() != 5 {
        return Err(GsmError::shape(
            "rank",
            format!(
                "conv3d_plane input must be (N,C,T,H,W), got {:?}",
                input.shape()
            ),
        ));
    }
    let d = FrameDims::of(input.shape())?;
    let &[kc, kt, kh, kw] = kernel.shape() else {
        return Err(GsmError::shape(
            "kernel rank",
            format!("kernel must be (C,kt,kh,kw), got {:?}", kernel.shape()),
        ));
    };
    if kc != d.c {
        return Err(GsmError::shape(
            "channel",
            format!("kernel has {kc} channels, input has {}", d.c),
        ));
    }
    let to = window_extent(d.t, kt, 1, padding.0, "time")?;
    let ho = window_extent(d.h, kh, 1, padding.1, "height")?;
    let wo = window_extent(d.w, kw, 1, padding.2, "width")?;
    Ok(PlanePlan {
        d,
        to,
        ho,
        wo,
        patch: Patch {
            kt,
            kh,
            kw,
            sh: 1,
            sw: 1,
            pt: padding.0,
            ph: padding.1,
            pw: padding.2,
        },
    })
}

/// 3D convolution producing a single output plane, stride 1, no bias.
///
/// Input `(N,C,T,H,W)`, kernel `(C,kt,kh,kw)`, output `(N,1,T',H',W')`.
pub fn conv3d_plane<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    padding: (usize, usize, usize),
) -> Result<Tensor<F>> {
    let pl = plan_plane(input, kernel, padding)?;
    let d = pl.d;
    let hw = pl.ho * pl.wo;
    let k = pl.patch.rows(d.c);
    let x = input.data();
    let w = kernel.data();
    let frames: Vec<Vec<F>> = (0..d.n * pl.to)
        .into_par_iter()
        .map(|f| {
            let (n, t) = (f / pl.to, f % pl.to);
            let mut cols = vec![F::zero(); k * hw];
            im2col(x, &d, n, 0, d.c, t, &pl.patch, pl.ho, pl.wo, &mut cols);
            let mut out = vec![F::zero(); hw];
            matmul(1, k, hw, w, false, &cols, false, &mut out, false);
            out
        })
        .collect();
    let data: Vec<F> = frames.into_iter().flatten().collect();
    Tensor::new(&[d.n, 1, pl.to, pl.ho, pl.wo], data)
}

pub fn conv3d_plane_backward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    padding: (usize, usize, usize),
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let pl = plan_plane(input, kernel, padding)?;
    let d = pl.d;
    let hw = pl.ho * pl.wo;
    let k = pl.patch.rows(d.c);
    if grad_out.shape() != [d.n, 1, pl.to, pl.ho, pl.wo] {
        return Err(GsmError::shape(
            "grad_out",
            format!("unexpected gradient shape {:?}", grad_out.shape()),
        ));
    }
    let x = input.data();
    let w = kernel.data();
    let go = grad_out.data();
    let sample_len = d.c * d.t * d.plane();

    // per sample: walk output frames in order so the reduction is fixed
    let parts: Vec<(Vec<F>, Vec<F>)> = (0..d.n)
        .into_par_iter()
        .map(|n| {
            let mut cols = vec![F::zero(); k * hw];
            let mut gcols = vec![F::zero(); k * hw];
            let mut gk = vec![F::zero(); k];
            let mut gx = vec![F::zero(); sample_len];
            for t in 0..pl.to {
                let gout = &go[(n * pl.to + t) * hw..(n * pl.to + t + 1) * hw];
                im2col(x, &d, n, 0, d.c, t, &pl.patch, pl.ho, pl.wo, &mut cols);
                matmul(1, hw, k, gout, false, &cols, true, &mut gk, true);
                matmul(k, 1, hw, w, true, gout, false, &mut gcols, false);
                col2im(&gcols, &d, d.c, t, &pl.patch, pl.ho, pl.wo, &mut gx);
            }
            (gx, gk)
        })
        .collect();
    let mut gx_all = Vec::with_capacity(input.numel());
    let mut gk_all = vec![F::zero(); k];
    for (gx, gk) in parts {
        gx_all.extend_from_slice(&gx);
        for (a, b) in gk_all.iter_mut().zip(gk) {
            *a += b;
        }
    }
    Ok((
        Tensor::new(input.shape(), gx_all)?,
        Tensor::new(kernel.shape(), gk_all)?,
    ))
}
