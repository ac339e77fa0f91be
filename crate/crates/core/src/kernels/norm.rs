//! Batch normalization over every axis except channels (axis 1).

use crate::error::{GsmError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the current batch in the running-statistics moving average.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Batch statistics from a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Biased variance (used for normalization).
    pub var: Vec<F>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

impl<F: Scalar> BatchStats<F> {
    /// Exponential moving average update of running mean / unbiased variance.
    pub fn update_running(&self, running_mean: &mut [F], running_var: &mut [F]) {
        let m = F::from_f64_lossy(BN_MOMENTUM);
        let one = F::one();
        let unbias = F::from_usize(self.count).unwrap() / F::from_usize(self.count - 1).unwrap();
        for c in 0..self.mean.len() {
            running_mean[c] = (one - m) * running_mean[c] + m * self.mean[c];
            running_var[c] = (one - m) * running_var[c] + m * self.var[c] * unbias;
        }
    }
}

/// Saved state for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<F> {
    mode: NormMode,
    xhat: Vec<F>,
    inv_std: Vec<F>,
}

pub struct BatchNormGrads<F> {
    pub input: Tensor<F>,
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
}

fn layout<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
) -> Result<(usize, usize, usize)> {
    let (n, c, inner) = x.channel_layout()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(GsmError::shape(
            "channel",
            format!(
                "scale/shift must be ({c}), got {:?} / {:?}",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    Ok((n, c, inner))
}

#[allow(clippy::too_many_arguments)]
pub fn batch_norm<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running_mean: &[F],
    running_var: &[F],
    mode: NormMode,
    eps: F,
) -> Result<(Tensor<F>, NormCache<F>, Option<BatchStats<F>>)> {
    let (n, c, inner) = layout(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(GsmError::shape(
            "channel",
            "running statistics length differs from C",
        ));
    }
    let count = n * inner;
    if mode == NormMode::Train && count < 2 {
        return Err(GsmError::InvalidArgument(
            "batch norm in train mode needs more than one element per channel".into(),
        ));
    }
    let xs = x.data();
    let (mean, var) = match mode {
        NormMode::Train => {
            let cnt = F::from_usize(count).unwrap();
            let mut mean = vec![F::zero(); c];
            let mut var = vec![F::zero(); c];
            for ch in 0..c {
                let mut s = F::zero();
                for b in 0..n {
                    let off = (b * c + ch) * inner;
                    s += xs[off..off + inner].iter().copied().sum::<F>();
                }
                let mu = s / cnt;
                let mut v = F::zero();
                for b in 0..n {
                    let off = (b * c + ch) * inner;
                    for &e in &xs[off..off + inner] {
                        v += (e - mu) * (e - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = v / cnt;
            }
            (mean, var)
        }
        NormMode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };
    let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
    let g = gamma.data();
    let bt = beta.data();
    let mut xhat = vec![F::zero(); xs.len()];
    let mut out = vec![F::zero(); xs.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                let h = (xs[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = g[ch] * h + bt[ch];
            }
        }
    }
    let stats = (mode == NormMode::Train).then_some(BatchStats { mean, var, count });
    Ok((
        Tensor::new(x.shape(), out)?,
        NormCache {
            mode,
            xhat,
            inv_std,
        },
        stats,
    ))
}

pub fn batch_norm_backward<F: Scalar>(
    gamma: &Tensor<F>,
    cache: &NormCache<F>,
    grad_out: &Tensor<F>,
) -> Result<BatchNormGrads<F>> {
    let (n, c, inner) = grad_out.channel_layout()?;
    let go = grad_out.data();
    let g = gamma.data();
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                dgamma[ch] += go[i] * cache.xhat[i];
                dbeta[ch] += go[i];
            }
        }
    }
    let mut gx = vec![F::zero(); go.len()];
    let cnt = F::from_usize(n * inner).unwrap();
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            let k = g[ch] * cache.inv_std[ch];
            for i in off..off + inner {
                gx[i] = match cache.mode {
                    NormMode::Eval => k * go[i],
                    // dx = γ/σ · (dy − mean(dy) − x̂·mean(dy·x̂))
                    NormMode::Train => {
                        k * (go[i] - dbeta[ch] / cnt - cache.xhat[i] * dgamma[ch] / cnt)
                    }
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape(), gx)?,
        gamma: Tensor::new(&[c], dgamma)?,
        beta: Tensor::new(&[c], dbeta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_with_unit_stats_is_near_identity() {
        let x = Tensor::<f64>::new(&[2, 3, 2], (0..12).map(|v| v as f64 - 5.0).collect()).unwrap();
        let (y, _, s) = batch_norm(
            &x,
            &Tensor::ones(&[3]),
            &Tensor::zeros(&[3]),
            &[0.0; 3],
            &[1.0; 3],
            NormMode::Eval,
            1e-5,
        )
        .unwrap();
        assert!(s.is_none());
        assert!(y.max_abs_diff(&x).unwrap() < 1e-4);
    }

    #[test]
    fn train_on_constant_gives_shift() {
        let x = Tensor::<f64>::full(&[4, 2, 3, 3], 2.5);
        let beta = Tensor::new(&[2], vec![0.75, -1.0]).unwrap();
        let (y, _, s) = batch_norm(
            &x,
            &Tensor::full(&[2], 3.0),
            &beta,
            &[0.0; 2],
            &[1.0; 2],
            NormMode::Train,
            1e-5,
        )
        .unwrap();
        let s = s.unwrap();
        assert_eq!(s.count, 36);
        for (i, v) in y.data().iter().enumerate() {
            let ch = (i / 9) % 2;
            assert!((v - beta.data()[ch]).abs() < 1e-9);
        }
    }

    #[test]
    fn single_element_per_channel_rejected_in_train() {
        let x = Tensor::<f32>::ones(&[1, 2, 1, 1]);
        let r = batch_norm(
            &x,
            &Tensor::ones(&[2]),
            &Tensor::zeros(&[2]),
            &[0.0; 2],
            &[1.0; 2],
            NormMode::Train,
            1e-5,
        );
        assert!(r.is_err());
    }

    #[test]
    fn running_stats_update() {
        let s = BatchStats::<f64> {
            mean: vec![1.0],
            var: vec![2.0],
            count: 5,
        };
        let (mut m, mut v) = ([0.0], [1.0]);
        s.update_running(&mut m, &mut v);
        assert!((m[0] - 0.1).abs() < 1e-15);
        assert!((v[0] - (0.9 + 0.1 * 2.5)).abs() < 1e-15);
    }
}
