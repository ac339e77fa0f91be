use crate::error::{GsmError, Result};
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;

fn linear_dims<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
) -> Result<(usize, usize, usize)> {
    let &[n, f] = x.shape() else {
        return Err(GsmError::shape(
            "rank",
            format!("linear input must be (N,F), got {:?}", x.shape()),
        ));
    };
    let &[k, wf] = weight.shape() else {
        return Err(GsmError::shape(
            "rank",
            format!("linear weight must be (K,F), got {:?}", weight.shape()),
        ));
    };
    if wf != f {
        return Err(GsmError::shape(
            "feature",
            format!("input has {f} features, weight expects {wf}"),
        ));
    }
    if bias.shape() != [k] {
        return Err(GsmError::shape(
            "bias",
            format!("bias must be ({k}), got {:?}", bias.shape()),
        ));
    }
    Ok((n, f, k))
}

/// `out = x·weightᵀ + bias`.
pub fn linear<F: Scalar>(x: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, f, k) = linear_dims(x, weight, bias)?;
    let mut out = vec![F::zero(); n * k];
    for row in out.chunks_mut(k) {
        row.copy_from_slice(bias.data());
    }
    matmul(
        n,
        f,
        k,
        x.data(),
        false,
        weight.data(),
        true,
        &mut out,
        true,
    );
    Tensor::new(&[n, k], out)
}

/// Returns `(grad_x, grad_weight, grad_bias)`.
pub fn linear_backward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, f, k) = linear_dims(x, weight, bias)?;
    let go = grad_out.data();
    let mut gx = vec![F::zero(); n * f];
    matmul(n, k, f, go, false, weight.data(), false, &mut gx, false);
    let mut gw = vec![F::zero(); k * f];
    matmul(k, n, f, go, true, x.data(), false, &mut gw, false);
    let mut gb = vec![F::zero(); k];
    for row in go.chunks(k) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((
        Tensor::new(&[n, f], gx)?,
        Tensor::new(&[k, f], gw)?,
        Tensor::new(&[k], gb)?,
    ))
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy<F: Scalar>(
    logits: &Tensor<F>,
    labels: &[usize],
) -> Result<(F, Tensor<F>)> {
    let &[n, k] = logits.shape() else {
        return Err(GsmError::shape(
            "rank",
            format!("logits must be (N,K), got {:?}", logits.shape()),
        ));
    };
    if labels.len() != n {
        return Err(GsmError::shape(
            "batch",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(GsmError::InvalidArgument(format!(
            "label {bad} outside [0, {k})"
        )));
    }
    let inv_n = F::one() / F::from_usize(n).unwrap();
    let mut loss = F::zero();
    let mut grad = vec![F::zero(); n * k];
    for (i, row) in logits.data().chunks(k).enumerate() {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let z: F = row.iter().map(|&v| (v - m).exp()).sum();
        let log_z = z.ln() + m;
        loss += log_z - row[labels[i]];
        for j in 0..k {
            let p = (row[j] - log_z).exp();
            let onehot = if j == labels[i] { F::one() } else { F::zero() };
            grad[i * k + j] = (p - onehot) * inv_n;
        }
    }
    Ok((loss * inv_n, Tensor::new(&[n, k], grad)?))
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows<F: Scalar>(scores: &Tensor<F>) -> Vec<usize> {
    let k = *scores.shape().last().unwrap();
    scores
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_hand_arithmetic() {
        let x = Tensor::<f64>::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap();
        let b = Tensor::new(&[1], vec![5.0]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[16.0]);
        let eye = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);
        assert!(linear(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn cross_entropy_limits() {
        let (l, _) = softmax_cross_entropy(&Tensor::<f64>::zeros(&[3, 4]), &[0, 1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let big = Tensor::<f64>::new(&[1, 3], vec![0.0, 1e3, 0.0]).unwrap();
        let (l, _) = softmax_cross_entropy(&big, &[1]).unwrap();
        assert!(l < 1e-12);
        assert!(softmax_cross_entropy(&big, &[3]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let s = Tensor::<f32>::new(&[2, 3], vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_rows(&s), vec![0, 1]);
    }
}
