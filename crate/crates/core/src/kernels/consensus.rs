use crate::error::{GsmError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean over the time axis of `(N, T, K)` frame scores.
///
/// Each `(n, k)` column is summed in sorted order, so the result is exactly
/// invariant under any permutation of the frames.
pub fn tsn_consensus<F: Scalar>(frame_scores: &Tensor<F>) -> Result<Tensor<F>> {
    let &[n, t, k] = frame_scores.shape() else {
        return Err(GsmError::shape(
            "rank",
            format!(
                "frame scores must be (N,T,K), got {:?}",
                frame_scores.shape()
            ),
        ));
    };
    let s = frame_scores.data();
    let inv_t = F::one() / F::from_usize(t).unwrap();
    let mut out = Vec::with_capacity(n * k);
    let mut column = Vec::with_capacity(t);
    for b in 0..n {
        for j in 0..k {
            column.clear();
            column.extend((0..t).map(|i| s[(b * t + i) * k + j]));
            column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let sum: F = column.iter().copied().sum();
            out.push(sum * inv_t);
        }
    }
    Tensor::new(&[n, k], out)
}

pub fn tsn_consensus_backward<F: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    let &[n, t, k] = input_shape else {
        return Err(GsmError::shape("rank", "frame scores must be (N,T,K)"));
    };
    let inv_t = F::one() / F::from_usize(t).unwrap();
    let g = grad_out.data();
    let mut out = Vec::with_capacity(n * t * k);
    for b in 0..n {
        for _ in 0..t {
            out.extend(g[b * k..(b + 1) * k].iter().map(|&v| v * inv_t));
        }
    }
    Tensor::new(input_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_arithmetic_and_identity() {
        let s = Tensor::<f64>::new(&[1, 2, 2], vec![1.0, 3.0, 3.0, 1.0]).unwrap();
        assert_eq!(tsn_consensus(&s).unwrap().data(), &[2.0, 2.0]);
        let one = Tensor::<f64>::new(&[2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(tsn_consensus(&one).unwrap().data(), one.data());
    }
}
