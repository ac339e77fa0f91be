mod common;

use common::{max_abs_diff, Pool, T64};
use gsm_core::kernels::{
    self, activation_backward, activation_map, dropout_mask, Activation, Conv2dGeometry, NormMode,
    PoolGeometry, BN_EPS,
};
use gsm_core::{GsmError, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> T64 {
    Tensor::randn(shape, 1.0, r)
}

#[test]
fn conv2d_matches_loop_oracle_over_random_geometry() {
    let mut r = rng(1);
    for _ in 0..60 {
        let groups = r.gen_range(1..=3);
        let (cig, cog) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let (kh, kw) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let stride = (r.gen_range(1..=3), r.gen_range(1..=3));
        let pad = (r.gen_range(0..kh), r.gen_range(0..kw));
        let (h, w) = (r.gen_range(kh..=8), r.gen_range(kw..=8));
        let shape = if r.gen_bool(0.5) {
            vec![r.gen_range(1..=2), cig * groups, h, w]
        } else {
            vec![r.gen_range(1..=2), cig * groups, r.gen_range(1..=3), h, w]
        };
        let x = randn(&shape, &mut r);
        let wt = randn(&[cog * groups, cig, kh, kw], &mut r);
        let b = randn(&[cog * groups], &mut r);
        let bias = r.gen_bool(0.5).then_some(&b);
        let got =
            kernels::conv2d(&x, &wt, bias, &Conv2dGeometry::new(stride, pad, groups)).unwrap();
        let want = common::conv2d(&x, &wt, bias, stride, pad, groups);
        assert!(
            max_abs_diff(&got, &want) < 1e-6,
            "{shape:?} g={groups} k={kh}x{kw} s={stride:?} p={pad:?}"
        );
    }
}

#[test]
fn grouped_conv_equals_independent_per_group_convs() {
    let mut r = rng(2);
    let (g, cig, cog) = (3, 2, 2);
    let x = randn(&[2, g * cig, 6, 5], &mut r);
    let wt = randn(&[g * cog, cig, 3, 3], &mut r);
    let geom = Conv2dGeometry::new((1, 2), (1, 1), g);
    let whole = kernels::conv2d(&x, &wt, None, &geom).unwrap();
    let parts: Vec<T64> = (0..g)
        .map(|i| {
            let xi = x.slice_channels(i * cig, cig).unwrap();
            let wi = Tensor::new(
                &[cog, cig, 3, 3],
                wt.data()[i * cog * cig * 9..(i + 1) * cog * cig * 9].to_vec(),
            )
            .unwrap();
            kernels::conv2d(&xi, &wi, None, &Conv2dGeometry::new((1, 2), (1, 1), 1)).unwrap()
        })
        .collect();
    let refs: Vec<&T64> = parts.iter().collect();
    assert_eq!(whole, Tensor::concat_channels(&refs).unwrap());
}

#[test]
fn conv2d_hand_examples_and_errors() {
    let x = Tensor::<f64>::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
    let ones = Tensor::<f64>::ones(&[1, 1, 3, 3]);
    let y = kernels::conv2d(&x, &ones, None, &Conv2dGeometry::new((1, 1), (0, 0), 1)).unwrap();
    assert_eq!(y.data(), &[45.0]);
    let id = Tensor::<f64>::ones(&[1, 1, 1, 1]);
    assert_eq!(
        kernels::conv2d(&x, &id, None, &Conv2dGeometry::new((1, 1), (0, 0), 1)).unwrap(),
        x
    );

    let big = Tensor::<f64>::ones(&[1, 1, 5, 5]);
    let e = kernels::conv2d(&x, &big, None, &Conv2dGeometry::new((1, 1), (0, 0), 1)).unwrap_err();
    assert!(matches!(e, GsmError::Geometry(_)), "{e}");
    let bad_groups = Tensor::<f64>::ones(&[3, 1, 1, 1]);
    let x2 = Tensor::<f64>::ones(&[1, 2, 3, 3]);
    assert!(kernels::conv2d(
        &x2,
        &bad_groups,
        None,
        &Conv2dGeometry::new((1, 1), (0, 0), 2)
    )
    .is_err());
    let wrong_c = Tensor::<f64>::ones(&[1, 3, 1, 1]);
    assert!(matches!(
        kernels::conv2d(&x, &wrong_c, None, &Conv2dGeometry::new((1, 1), (0, 0), 1)),
        Err(GsmError::Shape { .. })
    ));
}

#[test]
fn conv3d_plane_examples_and_oracle() {
    let x = Tensor::<f64>::ones(&[1, 2, 4, 4, 4]);
    let zero = kernels::conv3d_plane(&x, &Tensor::zeros(&[2, 3, 3, 3]), (1, 1, 1)).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
    let y = kernels::conv3d_plane(&x, &Tensor::ones(&[2, 3, 3, 3]), (1, 1, 1)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 4, 4, 4]);
    for t in 1..3 {
        for h in 1..3 {
            for w in 1..3 {
                assert_eq!(y.data()[(t * 4 + h) * 4 + w], 54.0);
            }
        }
    }
    let mut r = rng(3);
    for _ in 0..20 {
        let c = r.gen_range(1..=4);
        let shape = [
            r.gen_range(1..=2),
            c,
            r.gen_range(1..=5),
            r.gen_range(3..=6),
            r.gen_range(3..=6),
        ];
        let x = randn(&shape, &mut r);
        let k = randn(&[c, 3, 3, 3], &mut r);
        let got = kernels::conv3d_plane(&x, &k, (1, 1, 1)).unwrap();
        assert!(max_abs_diff(&got, &common::conv3d_plane(&x, &k, (1, 1, 1))) < 1e-6);
    }
    let x = randn(&[1, 3, 4, 5, 5], &mut r);
    let k = randn(&[3, 3, 3, 3], &mut r);
    assert!(
        max_abs_diff(
            &kernels::conv3d_plane(&x, &k, (1, 1, 1)).unwrap(),
            &common::conv3d_plane(&x, &k, (1, 1, 1))
        ) < 1e-6
    );
}

#[test]
fn activations_and_derivative_at_zero() {
    let z = Tensor::<f64>::zeros(&[1]);
    assert_eq!(activation_map(&z, Activation::Tanh).data(), &[0.0]);
    assert_eq!(activation_map(&z, Activation::Sigmoid).data(), &[0.5]);
    let x = Tensor::<f64>::new(&[4], vec![-2.0, -0.5, 0.5, 3.0]).unwrap();
    assert_eq!(activation_map(&x, Activation::Relu), common::relu(&x));
    assert!(max_abs_diff(&activation_map(&x, Activation::Tanh), &common::tanh(&x)) < 1e-15);
    assert!(
        max_abs_diff(
            &activation_map(&x, Activation::Sigmoid),
            &common::sigmoid(&x)
        ) < 1e-15
    );

    let y = activation_map(&z, Activation::Tanh);
    let up = Tensor::<f64>::full(&[1], 0.7);
    assert_eq!(
        activation_backward(&z, &y, Activation::Tanh, &up)
            .unwrap()
            .data(),
        &[0.7]
    );

    let mut r = rng(4);
    let big = randn(&[1000], &mut r).scale(5.0);
    assert!(activation_map(&big, Activation::Tanh)
        .data()
        .iter()
        .all(|v| v.abs() < 1.0));
    assert!(activation_map(&big, Activation::Sigmoid)
        .data()
        .iter()
        .all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn hadamard_broadcast_examples() {
    let mut r = rng(5);
    let x = randn(&[1, 3, 2, 2, 2], &mut r);
    assert_eq!(
        kernels::hadamard_broadcast(&Tensor::ones(&[1, 1, 2, 2, 2]), &x).unwrap(),
        x
    );
    let z = kernels::hadamard_broadcast(&Tensor::zeros(&[1, 1, 2, 2, 2]), &x).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));
    let g = randn(&[1, 1, 2, 2, 2], &mut r);
    assert_eq!(
        kernels::hadamard_broadcast(&g, &x).unwrap(),
        common::hadamard(&g, &x)
    );
    assert!(kernels::hadamard_broadcast(&Tensor::ones(&[1, 1, 2, 2, 3]), &x).is_err());
}

#[test]
fn batch_norm_examples_and_oracle() {
    let mut r = rng(6);
    let x = randn(&[2, 3, 2, 3, 3], &mut r);
    let (ones, zeros) = (Tensor::<f64>::ones(&[3]), Tensor::<f64>::zeros(&[3]));
    let (y, _, stats) = kernels::batch_norm(
        &x,
        &ones,
        &zeros,
        &[0.0; 3],
        &[1.0; 3],
        NormMode::Eval,
        BN_EPS,
    )
    .unwrap();
    assert!(stats.is_none());
    assert!(max_abs_diff(&y, &x) < 1e-5 * 4.0);

    let c = Tensor::<f64>::full(&[2, 3, 1, 2, 2], 4.5);
    let beta = Tensor::<f64>::new(&[3], vec![0.1, -0.2, 0.3]).unwrap();
    let (y, _, _) = kernels::batch_norm(
        &c,
        &ones,
        &beta,
        &[0.0; 3],
        &[1.0; 3],
        NormMode::Train,
        BN_EPS,
    )
    .unwrap();
    for (i, v) in y.data().iter().enumerate() {
        assert_eq!(*v, beta.data()[(i / 4) % 3]);
    }

    let gamma = randn(&[3], &mut r);
    let beta = randn(&[3], &mut r);
    let (y, _, stats) = kernels::batch_norm(
        &x,
        &gamma,
        &beta,
        &[0.0; 3],
        &[1.0; 3],
        NormMode::Train,
        BN_EPS,
    )
    .unwrap();
    let (mean, var) = common::channel_moments(&x);
    let want = common::batch_norm(&x, gamma.data(), beta.data(), &mean, &var, BN_EPS);
    assert!(max_abs_diff(&y, &want) < 1e-12);

    let stats = stats.unwrap();
    let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
    stats.update_running(&mut rm, &mut rv);
    let count = stats.count as f64;
    for ch in 0..3 {
        assert!((rm[ch] - 0.1 * mean[ch]).abs() < 1e-14);
        assert!((rv[ch] - (0.9 + 0.1 * var[ch] * count / (count - 1.0))).abs() < 1e-14);
    }

    let rm = [0.3, -0.1, 0.0];
    let rv = [2.0, 0.5, 1.0];
    let (y, _, _) =
        kernels::batch_norm(&x, &gamma, &beta, &rm, &rv, NormMode::Eval, BN_EPS).unwrap();
    assert!(
        max_abs_diff(
            &y,
            &common::batch_norm(&x, gamma.data(), beta.data(), &rm, &rv, BN_EPS)
        ) < 1e-12
    );

    let single = Tensor::<f64>::ones(&[1, 3, 1, 1, 1]);
    assert!(kernels::batch_norm(
        &single,
        &ones,
        &zeros,
        &[0.0; 3],
        &[1.0; 3],
        NormMode::Train,
        BN_EPS
    )
    .is_err());
}

#[test]
fn pooling_examples_and_oracle() {
    let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(
        kernels::pool(&x, &PoolGeometry::max(2, 2, 0))
            .unwrap()
            .0
            .data(),
        &[4.0]
    );
    let c = Tensor::<f64>::full(&[2, 3, 2, 4, 5], -1.25);
    let (g, _) = kernels::pool(&c, &PoolGeometry::global_avg()).unwrap();
    assert_eq!(g.shape(), &[2, 3, 2, 1, 1]);
    assert!(g.data().iter().all(|&v| v == -1.25));

    let mut r = rng(7);
    for _ in 0..40 {
        let k = r.gen_range(1..=3);
        let (s, p) = (r.gen_range(1..=2), r.gen_range(0..k));
        let shape = vec![
            r.gen_range(1..=2),
            r.gen_range(1..=3),
            r.gen_range(1..=2),
            r.gen_range(k..=7),
            r.gen_range(k..=7),
        ];
        let x = randn(&shape, &mut r);
        let (m, _) = kernels::pool(&x, &PoolGeometry::max(k, s, p)).unwrap();
        assert_eq!(m, common::pool(&x, Pool::Max, k, s, p));
        let (a, _) = kernels::pool(&x, &PoolGeometry::avg(k, s, p)).unwrap();
        assert!(max_abs_diff(&a, &common::pool(&x, Pool::Avg, k, s, p)) < 1e-12);
        let (ga, _) = kernels::pool(&x, &PoolGeometry::global_avg()).unwrap();
        assert!(max_abs_diff(&ga, &common::pool(&x, Pool::Global, 0, 0, 0)) < 1e-12);
    }
    assert!(kernels::pool(&x, &PoolGeometry::max(3, 1, 0)).is_err());
}

#[test]
fn linear_examples() {
    let x = Tensor::<f64>::new(&[1, 2], vec![1.0, 2.0]).unwrap();
    let w = Tensor::<f64>::new(&[1, 2], vec![3.0, 4.0]).unwrap();
    let b = Tensor::<f64>::new(&[1], vec![5.0]).unwrap();
    assert_eq!(kernels::linear(&x, &w, &b).unwrap().data(), &[16.0]);
    let mut r = rng(8);
    let x = randn(&[4, 3], &mut r);
    let eye =
        Tensor::<f64>::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(kernels::linear(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
    let w = randn(&[5, 3], &mut r);
    let b = randn(&[5], &mut r);
    assert!(
        max_abs_diff(
            &kernels::linear(&x, &w, &b).unwrap(),
            &common::linear(&x, &w, &b)
        ) < 1e-12
    );
    assert!(kernels::linear(&x, &randn(&[5, 4], &mut r), &b).is_err());
}

#[test]
fn dropout_examples_and_expectation() {
    let mut r = rng(9);
    let x = randn(&[3, 4], &mut r);
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), false);
    let y = tape.dropout(v, 0.0, &mut r).unwrap();
    assert_eq!(tape.value(y), &x);
    assert!(dropout_mask::<f64, _>(&[2], 1.0, &mut r).is_err());

    let x = randn(&[64], &mut r).map(|v| v + v.signum());
    let mut acc = Tensor::<f64>::zeros(&[64]);
    let mut mask_rng = rng(10);
    let trials = 10_000;
    for _ in 0..trials {
        let m = dropout_mask::<f64, _>(&[64], 0.5, &mut mask_rng).unwrap();
        acc.add_assign(&x.mul(&m).unwrap()).unwrap();
    }
    let mean = acc.scale(1.0 / trials as f64);
    for (m, v) in mean.data().iter().zip(x.data()) {
        assert!(((m - v) / v).abs() < 0.05, "{m} vs {v}");
    }
}

#[test]
fn softmax_cross_entropy_examples() {
    let (loss, grad) =
        kernels::softmax_cross_entropy(&Tensor::<f64>::zeros(&[1, 4]), &[2]).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-15);
    assert!((grad.data()[2] + 0.75).abs() < 1e-15);
    let peaked = Tensor::<f64>::new(&[1, 3], vec![0.0, 1000.0, 0.0]).unwrap();
    let (loss, _) = kernels::softmax_cross_entropy(&peaked, &[1]).unwrap();
    assert!(loss.abs() < 1e-12);
    assert!(kernels::softmax_cross_entropy(&peaked, &[3]).is_err());
    let mut r = rng(11);
    let logits = randn(&[5, 4], &mut r);
    let labels = [0, 3, 1, 1, 2];
    let (loss, _) = kernels::softmax_cross_entropy(&logits, &labels).unwrap();
    assert!((loss - common::softmax_cross_entropy(&logits, &labels)).abs() < 1e-12);
}

#[test]
fn shifts_match_definition() {
    let x = Tensor::<f64>::new(&[1, 1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
    assert_eq!(kernels::shift_fw(&x).unwrap().data(), &[0.0, 1.0, 2.0]);
    assert_eq!(kernels::shift_bw(&x).unwrap().data(), &[2.0, 3.0, 0.0]);
    let single = Tensor::<f64>::ones(&[2, 2, 1, 2, 2]);
    assert!(kernels::shift_fw(&single)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    assert!(kernels::shift_bw(&single)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));

    let mut r = rng(12);
    let x = randn(&[2, 3, 5, 2, 3], &mut r);
    assert_eq!(kernels::shift_fw(&x).unwrap(), common::shift(&x, 1));
    assert_eq!(kernels::shift_bw(&x).unwrap(), common::shift(&x, -1));
    let round = kernels::shift_bw(&kernels::shift_fw(&x).unwrap()).unwrap();
    let plane = 6;
    for nc in 0..6 {
        let base = nc * 5 * plane;
        assert_eq!(
            &round.data()[base..base + 4 * plane],
            &x.data()[base..base + 4 * plane]
        );
        assert!(round.data()[base + 4 * plane..base + 5 * plane]
            .iter()
            .all(|&v| v == 0.0));
    }
}

#[test]
fn tsn_consensus_examples() {
    let x = Tensor::<f64>::new(&[1, 2, 2], vec![1.0, 3.0, 3.0, 1.0]).unwrap();
    assert_eq!(kernels::tsn_consensus(&x).unwrap().data(), &[2.0, 2.0]);
    let one = Tensor::<f64>::new(&[2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(kernels::tsn_consensus(&one).unwrap().data(), one.data());
    let mut r = rng(13);
    let x = randn(&[3, 7, 4], &mut r);
    assert!(max_abs_diff(&kernels::tsn_consensus(&x).unwrap(), &common::consensus(&x)) < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_adjointness_is_exact(seed in any::<u64>(), n in 1usize..3, c in 1usize..4, t in 1usize..6, h in 1usize..4) {
        let mut r = rng(seed);
        let shape = [n, c, t, h, 2];
        // Small integers keep every inner product exact.
        let x = Tensor::<f64>::new(&shape, (0..n * c * t * h * 2).map(|_| r.gen_range(-8..8) as f64).collect()).unwrap();
        let y = Tensor::<f64>::new(&shape, (0..n * c * t * h * 2).map(|_| r.gen_range(-8..8) as f64).collect()).unwrap();
        let lhs = kernels::shift_fw(&x).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&kernels::shift_bw(&y).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn consensus_is_permutation_invariant(seed in any::<u64>(), t in 1usize..9) {
        let mut r = rng(seed);
        let x = Tensor::<f32>::randn(&[2, t, 3], 1.0, &mut r);
        let mut order: Vec<usize> = (0..t).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        let mut permuted = vec![0.0f32; x.numel()];
        for n in 0..2 {
            for (dst, &src) in order.iter().enumerate() {
                permuted[(n * t + dst) * 3..(n * t + dst + 1) * 3].copy_from_slice(&x.data()[(n * t + src) * 3..(n * t + src + 1) * 3]);
            }
        }
        let p = Tensor::new(&[2, t, 3], permuted).unwrap();
        prop_assert_eq!(kernels::tsn_consensus(&x).unwrap(), kernels::tsn_consensus(&p).unwrap());
    }
}
