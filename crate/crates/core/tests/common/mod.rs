//! Direct loop oracles. Nothing here calls the crate's kernels; tensors are
//! only used as shaped storage.
#![allow(dead_code)]

use gsm_core::Tensor;

pub type T64 = Tensor<f64>;

/// Views `(N,C,H,W)` as `(N,C,1,H,W)`; returns `(n, c, t, h, w)`.
fn dims5(shape: &[usize]) -> (usize, usize, usize, usize, usize) {
    match *shape {
        [n, c, h, w] => (n, c, 1, h, w),
        [n, c, t, h, w] => (n, c, t, h, w),
        _ => panic!("oracle expects rank 4 or 5, got {shape:?}"),
    }
}

fn at5(
    d: (usize, usize, usize, usize, usize),
    n: usize,
    c: usize,
    t: usize,
    h: usize,
    w: usize,
) -> usize {
    (((n * d.1 + c) * d.2 + t) * d.3 + h) * d.4 + w
}

fn out_shape(rank: usize, n: usize, c: usize, t: usize, h: usize, w: usize) -> Vec<usize> {
    if rank == 4 {
        vec![n, c, h, w]
    } else {
        vec![n, c, t, h, w]
    }
}

/// Signed input coordinate, `None` when it falls in the padding.
fn coord(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    (i >= 0 && (i as usize) < extent).then_some(i as usize)
}

pub fn conv2d(
    x: &T64,
    weight: &T64,
    bias: Option<&T64>,
    stride: (usize, usize),
    pad: (usize, usize),
    groups: usize,
) -> T64 {
    let d = dims5(x.shape());
    let (n, ci, t, h, w) = d;
    let &[co, cig, kh, kw] = weight.shape() else {
        panic!()
    };
    assert_eq!(ci, cig * groups);
    let cog = co / groups;
    let ho = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let wo = (w + 2 * pad.1 - kw) / stride.1 + 1;
    let od = (n, co, t, ho, wo);
    let mut out = vec![0.0; n * co * t * ho * wo];
    for b in 0..n {
        for oc in 0..co {
            let g = oc / cog;
            for f in 0..t {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = bias.map_or(0.0, |b| b.data()[oc]);
                        for icg in 0..cig {
                            let ic = g * cig + icg;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let (Some(iy), Some(ix)) = (
                                        coord(oy, ky, stride.0, pad.0, h),
                                        coord(ox, kx, stride.1, pad.1, w),
                                    ) else {
                                        continue;
                                    };
                                    let wv = weight.data()[((oc * cig + icg) * kh + ky) * kw + kx];
                                    s += wv * x.data()[at5(d, b, ic, f, iy, ix)];
                                }
                            }
                        }
                        out[at5(od, b, oc, f, oy, ox)] = s;
                    }
                }
            }
        }
    }
    T64::new(&out_shape(x.rank(), n, co, t, ho, wo), out).unwrap()
}

/// Single-plane 3D convolution: kernel `(C,kt,kh,kw)`, stride 1, output `(N,1,To,Ho,Wo)`.
pub fn conv3d_plane(x: &T64, kernel: &T64, pad: (usize, usize, usize)) -> T64 {
    let d = dims5(x.shape());
    let (n, c, t, h, w) = d;
    let &[kc, kt, kh, kw] = kernel.shape() else {
        panic!()
    };
    assert_eq!(kc, c);
    let (to, ho, wo) = (
        t + 2 * pad.0 - kt + 1,
        h + 2 * pad.1 - kh + 1,
        w + 2 * pad.2 - kw + 1,
    );
    let od = (n, 1, to, ho, wo);
    let mut out = vec![0.0; n * to * ho * wo];
    for b in 0..n {
        for ot in 0..to {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for ch in 0..c {
                        for a in 0..kt {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let (Some(it), Some(iy), Some(ix)) = (
                                        coord(ot, a, 1, pad.0, t),
                                        coord(oy, ky, 1, pad.1, h),
                                        coord(ox, kx, 1, pad.2, w),
                                    ) else {
                                        continue;
                                    };
                                    let kv = kernel.data()[((ch * kt + a) * kh + ky) * kw + kx];
                                    s += kv * x.data()[at5(d, b, ch, it, iy, ix)];
                                }
                            }
                        }
                    }
                    out[at5(od, b, 0, ot, oy, ox)] = s;
                }
            }
        }
    }
    T64::new(&[n, 1, to, ho, wo], out).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub enum Pool {
    Max,
    /// Zero padding counts in the divisor.
    Avg,
    Global,
}

pub fn pool(x: &T64, kind: Pool, k: usize, s: usize, p: usize) -> T64 {
    let d = dims5(x.shape());
    let (n, c, t, h, w) = d;
    if let Pool::Global = kind {
        let mut out = Vec::new();
        for b in 0..n {
            for ch in 0..c {
                for f in 0..t {
                    let mut sum = 0.0;
                    for y in 0..h {
                        for xx in 0..w {
                            sum += x.data()[at5(d, b, ch, f, y, xx)];
                        }
                    }
                    out.push(sum / (h * w) as f64);
                }
            }
        }
        return T64::new(&out_shape(x.rank(), n, c, t, 1, 1), out).unwrap();
    }
    let ho = (h + 2 * p - k) / s + 1;
    let wo = (w + 2 * p - k) / s + 1;
    let od = (n, c, t, ho, wo);
    let mut out = vec![0.0; n * c * t * ho * wo];
    for b in 0..n {
        for ch in 0..c {
            for f in 0..t {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = match kind {
                            Pool::Max => f64::NEG_INFINITY,
                            _ => 0.0,
                        };
                        for ky in 0..k {
                            for kx in 0..k {
                                let (Some(iy), Some(ix)) =
                                    (coord(oy, ky, s, p, h), coord(ox, kx, s, p, w))
                                else {
                                    continue;
                                };
                                let v = x.data()[at5(d, b, ch, f, iy, ix)];
                                acc = match kind {
                                    Pool::Max => acc.max(v),
                                    _ => acc + v,
                                };
                            }
                        }
                        if let Pool::Avg = kind {
                            acc /= (k * k) as f64;
                        }
                        out[at5(od, b, ch, f, oy, ox)] = acc;
                    }
                }
            }
        }
    }
    T64::new(&out_shape(x.rank(), n, c, t, ho, wo), out).unwrap()
}

/// Per-channel `(mean, biased var)` over every non-channel axis.
pub fn channel_moments(x: &T64) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let inner: usize = x.shape()[2..].iter().product();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| (0..inner).map(move |i| (b * c + ch) * inner + i))
            .map(|i| x.data()[i])
            .collect();
        mean[ch] = vals.iter().sum::<f64>() / vals.len() as f64;
        var[ch] = vals.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>() / vals.len() as f64;
    }
    (mean, var)
}

pub fn batch_norm(
    x: &T64,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> T64 {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let inner: usize = x.shape()[2..].iter().product();
    let mut out = x.data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..inner {
                let j = (b * c + ch) * inner + i;
                out[j] = gamma[ch] * (out[j] - mean[ch]) / (var[ch] + eps).sqrt() + beta[ch];
            }
        }
    }
    T64::new(x.shape(), out).unwrap()
}

pub fn linear(x: &T64, weight: &T64, bias: &T64) -> T64 {
    let &[n, f] = x.shape() else { panic!() };
    let k = weight.shape()[0];
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        for o in 0..k {
            let mut s = bias.data()[o];
            for j in 0..f {
                s += x.data()[i * f + j] * weight.data()[o * f + j];
            }
            out.push(s);
        }
    }
    T64::new(&[n, k], out).unwrap()
}

pub fn tanh(x: &T64) -> T64 {
    x.map(f64::tanh)
}

pub fn sigmoid(x: &T64) -> T64 {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn relu(x: &T64) -> T64 {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// `gate (N,1,T,H,W)` times every channel of `x (N,C,T,H,W)`.
pub fn hadamard(gate: &T64, x: &T64) -> T64 {
    let d = dims5(x.shape());
    let gd = (d.0, 1, d.2, d.3, d.4);
    let mut out = x.data().to_vec();
    for b in 0..d.0 {
        for c in 0..d.1 {
            for t in 0..d.2 {
                for y in 0..d.3 {
                    for w in 0..d.4 {
                        out[at5(d, b, c, t, y, w)] *= gate.data()[at5(gd, b, 0, t, y, w)];
                    }
                }
            }
        }
    }
    T64::new(x.shape(), out).unwrap()
}

/// `out[t] = x[t - step]` with zero fill; `step` is +1 (forward) or -1.
pub fn shift(x: &T64, step: isize) -> T64 {
    let d = dims5(x.shape());
    let mut out = vec![0.0; x.numel()];
    for b in 0..d.0 {
        for c in 0..d.1 {
            for t in 0..d.2 {
                let src = t as isize - step;
                if src < 0 || src >= d.2 as isize {
                    continue;
                }
                for y in 0..d.3 {
                    for w in 0..d.4 {
                        out[at5(d, b, c, t, y, w)] = x.data()[at5(d, b, c, src as usize, y, w)];
                    }
                }
            }
        }
    }
    T64::new(x.shape(), out).unwrap()
}

pub fn channels(x: &T64, start: usize, len: usize) -> T64 {
    let d = dims5(x.shape());
    let mut shape = x.shape().to_vec();
    shape[1] = len;
    let mut out = Vec::new();
    for b in 0..d.0 {
        for c in start..start + len {
            for t in 0..d.2 {
                for y in 0..d.3 {
                    for w in 0..d.4 {
                        out.push(x.data()[at5(d, b, c, t, y, w)]);
                    }
                }
            }
        }
    }
    T64::new(&shape, out).unwrap()
}

pub fn concat(a: &T64, b: &T64) -> T64 {
    let (ca, cb) = (a.shape()[1], b.shape()[1]);
    let inner: usize = a.shape()[2..].iter().product();
    let mut shape = a.shape().to_vec();
    shape[1] = ca + cb;
    let mut out = Vec::new();
    for n in 0..a.shape()[0] {
        out.extend_from_slice(&a.data()[n * ca * inner..(n + 1) * ca * inner]);
        out.extend_from_slice(&b.data()[n * cb * inner..(n + 1) * cb * inner]);
    }
    T64::new(&shape, out).unwrap()
}

pub fn add(a: &T64, b: &T64) -> T64 {
    T64::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )
    .unwrap()
}

pub fn sub(a: &T64, b: &T64) -> T64 {
    T64::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect(),
    )
    .unwrap()
}

/// Mean over batch of `-log softmax(row)[label]`.
pub fn softmax_cross_entropy(logits: &T64, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let mut total = 0.0;
    for (row, &l) in logits.data().chunks(k).zip(labels) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total -= (row[l].exp() / z).ln();
    }
    total / labels.len() as f64
}

/// Mean over the time axis of `(N,T,K)`.
pub fn consensus(x: &T64) -> T64 {
    let &[n, t, k] = x.shape() else { panic!() };
    let mut out = vec![0.0; n * k];
    for b in 0..n {
        for f in 0..t {
            for c in 0..k {
                out[b * k + c] += x.data()[(b * t + f) * k + c];
            }
        }
    }
    T64::new(&[n, k], out.into_iter().map(|v| v / t as f64).collect()).unwrap()
}

pub fn max_abs_diff(a: &T64, b: &T64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff32(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

/// Gate-shift module written out group by group from the oracle primitives.
/// `act` is the gate nonlinearity; `None` kernels stand for a constant gate.
pub fn gsm(x: &T64, k1: &T64, k2: &T64, act: fn(&T64) -> T64, spatial: Option<&T64>) -> T64 {
    let x = match spatial {
        Some(w) => conv2d(x, w, None, (1, 1), (1, 1), 1),
        None => x.clone(),
    };
    let half = x.shape()[1] / 2;
    let x1 = channels(&x, 0, half);
    let x2 = channels(&x, half, half);
    let y1 = hadamard(&act(&conv3d_plane(&x1, k1, (1, 1, 1))), &x1);
    let y2 = hadamard(&act(&conv3d_plane(&x2, k2, (1, 1, 1))), &x2);
    let r1 = sub(&x1, &y1);
    let r2 = sub(&x2, &y2);
    let z1 = add(&shift(&y1, 1), &r1);
    let z2 = add(&shift(&y2, -1), &r2);
    concat(&z1, &z2)
}
