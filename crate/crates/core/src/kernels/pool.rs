use super::conv::{window_extent, FrameDims};
use crate::error::{GsmError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    /// Average including zero padding in the divisor.
    Avg,
    /// Collapses H and W to 1.
    GlobalAvg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub kind: PoolKind,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolGeometry {
    pub fn max(k: usize, s: usize, p: usize) -> Self {
        PoolGeometry {
            kind: PoolKind::Max,
            kernel: (k, k),
            stride: (s, s),
            padding: (p, p),
        }
    }

    pub fn avg(k: usize, s: usize, p: usize) -> Self {
        PoolGeometry {
            kind: PoolKind::Avg,
            kernel: (k, k),
            stride: (s, s),
            padding: (p, p),
        }
    }

    pub fn global_avg() -> Self {
        PoolGeometry {
            kind: PoolKind::GlobalAvg,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.kind {
            PoolKind::GlobalAvg => Ok((1, 1)),
            _ if self.padding.0 >= self.kernel.0 || self.padding.1 >= self.kernel.1 => {
                Err(GsmError::Geometry(format!(
                    "pool padding {:?} must be smaller than kernel {:?}",
                    self.padding, self.kernel
                )))
            }
            _ => Ok((
                window_extent(h, self.kernel.0, self.stride.0, self.padding.0, "height")?,
                window_extent(w, self.kernel.1, self.stride.1, self.padding.1, "width")?,
            )),
        }
    }
}

/// Saved state for the backward pass (argmax positions for max pooling).
#[derive(Clone, Debug)]
pub struct PoolCache {
    argmax: Vec<usize>,
}

pub fn pool<F: Scalar>(x: &Tensor<F>, g: &PoolGeometry) -> Result<(Tensor<F>, PoolCache)> {
    let d = FrameDims::of(x.shape())?;
    let (ho, wo) = g.output_hw(d.h, d.w)?;
    let planes = d.n * d.c * d.t;
    let xs = x.data();
    let mut out = Vec::with_capacity(planes * ho * wo);
    let mut argmax = Vec::new();
    for p in 0..planes {
        let plane = &xs[p * d.plane()..(p + 1) * d.plane()];
        match g.kind {
            PoolKind::GlobalAvg => {
                let s: F = plane.iter().copied().sum();
                out.push(s / F::from_usize(d.plane()).unwrap());
            }
            PoolKind::Max | PoolKind::Avg => {
                let area = F::from_usize(g.kernel.0 * g.kernel.1).unwrap();
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = F::neg_infinity();
                        let mut best_at = usize::MAX;
                        let mut sum = F::zero();
                        for ky in 0..g.kernel.0 {
                            let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for kx in 0..g.kernel.1 {
                                let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                let at = iy as usize * d.w + ix as usize;
                                let v = plane[at];
                                sum += v;
                                if v > best || best_at == usize::MAX {
                                    best = v;
                                    best_at = at;
                                }
                            }
                        }
                        if g.kind == PoolKind::Max {
                            out.push(best);
                            argmax.push(p * d.plane() + best_at);
                        } else {
                            out.push(sum / area);
                        }
                    }
                }
            }
        }
    }
    let shape = d.shape_like(x.rank(), d.c, d.t, ho, wo);
    Ok((Tensor::new(&shape, out)?, PoolCache { argmax }))
}

pub fn pool_backward<F: Scalar>(
    input_shape: &[usize],
    g: &PoolGeometry,
    cache: &PoolCache,
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    let d = FrameDims::of(input_shape)?;
    let (ho, wo) = g.output_hw(d.h, d.w)?;
    let go = grad_out.data();
    let mut gx = vec![F::zero(); d.n * d.c * d.t * d.plane()];
    match g.kind {
        PoolKind::Max => {
            for (&at, &v) in cache.argmax.iter().zip(go) {
                gx[at] += v;
            }
        }
        PoolKind::GlobalAvg => {
            let inv = F::one() / F::from_usize(d.plane()).unwrap();
            for (p, &v) in go.iter().enumerate() {
                for slot in &mut gx[p * d.plane()..(p + 1) * d.plane()] {
                    *slot = v * inv;
                }
            }
        }
        PoolKind::Avg => {
            let inv = F::one() / F::from_usize(g.kernel.0 * g.kernel.1).unwrap();
            for p in 0..d.n * d.c * d.t {
                let plane = &mut gx[p * d.plane()..(p + 1) * d.plane()];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let v = go[(p * ho + oy) * wo + ox] * inv;
                        for ky in 0..g.kernel.0 {
                            let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for kx in 0..g.kernel.1 {
                                let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                                if ix >= 0 && (ix as usize) < d.w {
                                    plane[iy as usize * d.w + ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, gx)
}
