//! Reverse-mode differentiation over whole tensors.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! output, its parents and a backward closure with whatever intermediates the
//! kernel saved. [`Tape::backward`] walks the nodes in reverse creation order,
//! which is a valid topological order because parents always precede children.

use crate::error::{GsmError, Result};
use crate::kernels::{
    self, Activation, BatchStats, Conv2dGeometry, NormMode, PoolGeometry, ShiftDirection,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// `(parent values, output value, output gradient) -> parent gradients`.
type BackwardFn<F> =
    Box<dyn Fn(&[&Tensor<F>], &Tensor<F>, &Tensor<F>) -> Result<Vec<Option<Tensor<F>>>>>;

struct Node<F> {
    value: Tensor<F>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<F>>,
    requires_grad: bool,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    fault_scale: Option<F>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Grads<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            fault_scale: None,
        }
    }

    /// A tape whose every backward rule is multiplied by `scale`.
    ///
    /// Only useful for checking that gradient verification catches a wrong
    /// derivative.
    pub fn with_fault(scale: F) -> Self {
        Tape {
            nodes: Vec::new(),
            fault_scale: Some(scale),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, parents: Vec<Var>, backward: BackwardFn<F>) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents,
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagates from a single-element output seeded with 1.
    pub fn backward(&self, root: Var) -> Result<Grads<F>> {
        let v = self.value(root);
        if v.numel() != 1 {
            return Err(GsmError::shape(
                "root",
                format!("backward needs a scalar root, got {:?}", v.shape()),
            ));
        }
        self.backward_seeded(root, Tensor::full(v.shape(), F::one()))
    }

    pub fn backward_seeded(&self, root: Var, seed: Tensor<F>) -> Result<Grads<F>> {
        seed.expect_same_shape(self.value(root), "seed")?;
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let parents: Vec<&Tensor<F>> = node
                .parents
                .iter()
                .map(|p| &self.nodes[p.0].value)
                .collect();
            let pgrads = bw(&parents, &node.value, &g)?;
            // keep the node's own gradient available to callers
            grads[i] = Some(g);
            for (p, pg) in node.parents.iter().zip(pgrads) {
                let Some(mut pg) = pg else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                if let Some(s) = self.fault_scale {
                    pg = pg.scale(s);
                }
                match grads[p.0].as_mut() {
                    Some(acc) => acc.add_assign(&pg)?,
                    None => grads[p.0] = Some(pg),
                }
            }
        }
        Ok(Grads { grads })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(|_, _, g| Ok(vec![Some(g.clone()), Some(g.clone())])),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(|_, _, g| Ok(vec![Some(g.clone()), Some(g.scale(-F::one()))])),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.push(
            out,
            vec![a, b],
            Box::new(|p, _, g| Ok(vec![Some(g.mul(p[1])?), Some(g.mul(p[0])?)])),
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = kernels::activation_map(self.value(x), kind);
        self.push(
            out,
            vec![x],
            Box::new(move |p, y, g| {
                Ok(vec![Some(kernels::activation_backward(p[0], y, kind, g)?)])
            }),
        )
    }

    /// Gate plane `(N,1,T,H,W)` times every channel of `x`.
    pub fn hadamard_broadcast(&mut self, gate: Var, x: Var) -> Result<Var> {
        let out = kernels::hadamard_broadcast(self.value(gate), self.value(x))?;
        Ok(self.push(
            out,
            vec![gate, x],
            Box::new(|p, _, g| {
                let (gg, gx) = kernels::hadamard_broadcast_backward(p[0], p[1], g)?;
                Ok(vec![Some(gg), Some(gx)])
            }),
        ))
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: Conv2dGeometry,
    ) -> Result<Var> {
        let out = kernels::conv2d(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &geom,
        )?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let with_bias = bias.is_some();
        Ok(self.push(
            out,
            parents,
            Box::new(move |p, _, g| {
                let gr = kernels::conv2d_backward(p[0], p[1], &geom, g)?;
                let mut v = vec![Some(gr.input), Some(gr.weight)];
                if with_bias {
                    v.push(Some(gr.bias));
                }
                Ok(v)
            }),
        ))
    }

    pub fn conv3d_plane(
        &mut self,
        x: Var,
        kernel: Var,
        padding: (usize, usize, usize),
    ) -> Result<Var> {
        let out = kernels::conv3d_plane(self.value(x), self.value(kernel), padding)?;
        Ok(self.push(
            out,
            vec![x, kernel],
            Box::new(move |p, _, g| {
                let (gx, gk) = kernels::conv3d_plane_backward(p[0], p[1], padding, g)?;
                Ok(vec![Some(gx), Some(gk)])
            }),
        ))
    }

    pub fn pool(&mut self, x: Var, geom: PoolGeometry) -> Result<Var> {
        let (out, cache) = kernels::pool(self.value(x), &geom)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |p, _, g| {
                Ok(vec![Some(kernels::pool_backward(
                    p[0].shape(),
                    &geom,
                    &cache,
                    g,
                )?)])
            }),
        ))
    }

    /// Returns the batch statistics in train mode so the caller can update
    /// its running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[F],
        running_var: &[F],
        mode: NormMode,
    ) -> Result<(Var, Option<BatchStats<F>>)> {
        let (out, cache, stats) = kernels::batch_norm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            mode,
            F::from_f64_lossy(kernels::BN_EPS),
        )?;
        let v = self.push(
            out,
            vec![x, gamma, beta],
            Box::new(move |p, _, g| {
                let gr = kernels::batch_norm_backward(p[1], &cache, g)?;
                Ok(vec![Some(gr.input), Some(gr.gamma), Some(gr.beta)])
            }),
        );
        Ok((v, stats))
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = kernels::linear(self.value(x), self.value(weight), self.value(bias))?;
        Ok(self.push(
            out,
            vec![x, weight, bias],
            Box::new(|p, _, g| {
                let (gx, gw, gb) = kernels::linear_backward(p[0], p[1], p[2], g)?;
                Ok(vec![Some(gx), Some(gw), Some(gb)])
            }),
        ))
    }

    /// Inverted dropout with a mask drawn from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        let mask = kernels::dropout_mask::<F, R>(self.value(x).shape(), rate, rng)?;
        let out = self.value(x).mul(&mask)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |_, _, g| Ok(vec![Some(g.mul(&mask)?)])),
        ))
    }

    /// Mean softmax cross-entropy; output has shape `(1)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, grad) = kernels::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            vec![logits],
            Box::new(move |_, _, g| Ok(vec![Some(grad.scale(g.data()[0]))])),
        ))
    }

    pub fn temporal_shift(&mut self, x: Var, dir: ShiftDirection) -> Result<Var> {
        let out = kernels::temporal_shift(self.value(x), dir)?;
        // the adjoint of a shift is the opposite shift
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |_, _, g| Ok(vec![Some(kernels::temporal_shift(g, dir.adjoint())?)])),
        ))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, len)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(move |p, _, g| {
                let c = p[0].shape()[1];
                let mut parts = Vec::new();
                if start > 0 {
                    let mut s = p[0].shape().to_vec();
                    s[1] = start;
                    parts.push(Tensor::zeros(&s));
                }
                parts.push(g.clone());
                if start + len < c {
                    let mut s = p[0].shape().to_vec();
                    s[1] = c - start - len;
                    parts.push(Tensor::zeros(&s));
                }
                let refs: Vec<&Tensor<F>> = parts.iter().collect();
                Ok(vec![Some(Tensor::concat_channels(&refs)?)])
            }),
        ))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<F>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat_channels(&refs)?;
        let widths: Vec<usize> = refs.iter().map(|t| t.shape()[1]).collect();
        Ok(self.push(
            out,
            xs.to_vec(),
            Box::new(move |_, _, g| {
                let mut start = 0;
                let mut v = Vec::with_capacity(widths.len());
                for &w in &widths {
                    v.push(Some(g.slice_channels(start, w)?));
                    start += w;
                }
                Ok(v)
            }),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(|p, _, g| Ok(vec![Some(g.clone().reshape(p[0].shape())?)])),
        ))
    }

    /// `(A, B, C) -> (A, C, B)`.
    pub fn swap_last_two(&mut self, x: Var) -> Result<Var> {
        let out = swap_last_two(self.value(x))?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(|_, _, g| Ok(vec![Some(swap_last_two(g)?)])),
        ))
    }

    /// Time-averaged scores, `(N,T,K) -> (N,K)`.
    pub fn tsn_consensus(&mut self, x: Var) -> Result<Var> {
        let out = kernels::tsn_consensus(self.value(x))?;
        Ok(self.push(
            out,
            vec![x],
            Box::new(|p, _, g| {
                Ok(vec![Some(kernels::tsn_consensus_backward(
                    p[0].shape(),
                    g,
                )?)])
            }),
        ))
    }

    /// `Σ x ⊙ w` as a one-element tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<F>) -> Result<Var> {
        let s = self.value(x).dot(&weights)?;
        Ok(self.push(
            Tensor::scalar(s),
            vec![x],
            Box::new(move |_, _, g| Ok(vec![Some(weights.scale(g.data()[0]))])),
        ))
    }
}

fn swap_last_two<F: Scalar>(x: &Tensor<F>) -> Result<Tensor<F>> {
    let &[a, b, c] = x.shape() else {
        return Err(GsmError::shape(
            "rank",
            format!("expected rank 3, got {:?}", x.shape()),
        ));
    };
    let d = x.data();
    let mut out = Vec::with_capacity(d.len());
    for i in 0..a {
        for k in 0..c {
            for j in 0..b {
                out.push(d[(i * b + j) * c + k]);
            }
        }
    }
    Tensor::new(&[a, c, b], out)
}
