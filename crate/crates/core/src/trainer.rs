//! Mini-batch SGD with heavy-ball momentum, linear warmup into a cosine
//! schedule, and evaluation under frame-order transforms.

use crate::backbone::{is_gate_param, tsn_consensus, ForwardOptions, MiniGsmNet};
use crate::error::{GsmError, Result};
use crate::gsm::GateMode;
use crate::kernels::{argmax_rows, NormMode};
use crate::scalar::Scalar;
use crate::synth::{Dataset, SyntheticSample};
use crate::tape::Tape;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Missing fields in a serialized config take their default values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Run on a single worker thread.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            momentum: 0.9,
            epochs: 20,
            warmup_epochs: 3,
            batch_size: 16,
            dropout_rate: 0.5,
            seed: 0,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GsmError::InvalidArgument(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr = {} must be positive", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum = {} must lie in [0, 1)", self.momentum));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return bad(format!(
                "warmup_epochs = {} must be below epochs = {}",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!(
                "dropout_rate = {} must lie in [0, 1)",
                self.dropout_rate
            ));
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: linear warmup from `base/warmup` to `base`,
/// then half-cosine decay.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(GsmError::InvalidArgument(format!(
            "epoch {epoch} outside [0, {})",
            cfg.epochs
        )));
    }
    let (base, w) = (cfg.base_lr, cfg.warmup_epochs);
    if epoch < w {
        return Ok(base * (epoch + 1) as f64 / w as f64);
    }
    let progress = (epoch - w) as f64 / (cfg.epochs - w) as f64;
    Ok(base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// `v ← m·v + g; p ← p − lr·v`.
pub fn sgd_momentum_step<F: Scalar>(
    name: &str,
    param: &mut Tensor<F>,
    grad: &Tensor<F>,
    velocity: &mut Tensor<F>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(GsmError::shape(
            name.to_owned(),
            format!(
                "param {:?}, grad {:?}, velocity {:?}",
                param.shape(),
                grad.shape(),
                velocity.shape()
            ),
        ));
    }
    if !grad.all_finite() {
        return Err(GsmError::NonFinite(format!("gradient of '{name}'")));
    }
    let (lr, m) = (F::from_f64_lossy(lr), F::from_f64_lossy(momentum));
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = m * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
}

pub const METRICS_HEADER: &str = "epoch\tlr\ttrain_loss\ttrain_acc\teval_acc";

pub fn metrics_tsv(metrics: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in metrics {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            m.epoch, m.lr, m.train_loss, m.train_acc, m.eval_acc
        )
        .unwrap();
    }
    s
}

/// Stacks `[3, T, H, W]` clips into `[N, 3, T, H, W]`.
pub fn stack_clips<F: Scalar>(samples: &[&SyntheticSample]) -> Result<Tensor<F>> {
    let first = samples
        .first()
        .ok_or_else(|| GsmError::InvalidArgument("empty batch".into()))?;
    let shape = first.clip.shape();
    let mut data = Vec::with_capacity(samples.len() * first.clip.numel());
    for s in samples {
        if s.clip.shape() != shape {
            return Err(GsmError::shape(
                "clip",
                format!("{:?} vs {shape:?}", s.clip.shape()),
            ));
        }
        data.extend(s.clip.data().iter().map(|&v| F::from_f64_lossy(v as f64)));
    }
    let mut full = vec![samples.len()];
    full.extend_from_slice(shape);
    Tensor::new(&full, data)
}

fn run_single_threaded<T: Send>(on: bool, f: impl FnOnce() -> T + Send) -> T {
    if !on {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Trains in place and returns one metrics row per epoch. Gate kernels stay
/// frozen unless the net's gate mode is `Learned`.
pub fn train<F: Scalar>(
    net: &mut MiniGsmNet<F>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) + Send,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let train_set = dataset.train();
    let test_set = dataset.test();
    if cfg.epochs > 0 && train_set.is_empty() {
        return Err(GsmError::InvalidArgument("training split is empty".into()));
    }
    if let Some(s) = train_set.iter().find(|s| s.label >= net.config.classes) {
        return Err(GsmError::InvalidArgument(format!(
            "label {} exceeds the network's {} classes",
            s.label, net.config.classes
        )));
    }
    let learn_gates = net.gate_mode == GateMode::Learned;
    let trainable = move |name: &str| learn_gates || !is_gate_param(name);

    run_single_threaded(cfg.deterministic, || {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        dropout_rng.set_stream(1);
        let mut velocity: BTreeMap<String, Tensor<F>> = net
            .params
            .iter()
            .filter(|(k, _)| trainable(k))
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut metrics = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            let lr = lr_at(cfg, epoch)?;
            order.shuffle(&mut shuffle_rng);
            let (mut loss_sum, mut correct) = (0.0f64, 0usize);
            for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<&SyntheticSample> = idx.iter().map(|&i| train_set[i]).collect();
                let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
                let clip = net.normalize(&stack_clips(&batch)?)?;

                let mut tape = Tape::new();
                let vars = net.bind(&mut tape, trainable);
                let x = tape.constant(clip);
                let opts = ForwardOptions {
                    norm: NormMode::Train,
                    dropout: Some((cfg.dropout_rate, &mut dropout_rng)),
                };
                let (frame_logits, bn) = net.forward_on_tape(&mut tape, &vars, x, opts)?;
                let scores = tape.tsn_consensus(frame_logits)?;
                let loss = tape.softmax_cross_entropy(scores, &labels)?;
                let loss_value = tape.value(loss).data()[0].to_f64_lossy();
                if !loss_value.is_finite() {
                    return Err(GsmError::NonFinite(format!(
                        "loss at epoch {epoch}, step {step}"
                    )));
                }
                correct += argmax_rows(tape.value(scores))
                    .iter()
                    .zip(&labels)
                    .filter(|(p, l)| p == l)
                    .count();
                loss_sum += loss_value * batch.len() as f64;

                let mut grads = tape.backward(loss)?;
                for (name, v) in velocity.iter_mut() {
                    let g = grads
                        .take(vars[name])
                        .unwrap_or_else(|| Tensor::zeros(v.shape()));
                    let p = net.params.get_mut(name).expect("velocity mirrors params");
                    sgd_momentum_step(name, p, &g, v, lr, cfg.momentum)?;
                }
                net.apply_bn_updates(&bn);
            }
            let eval_acc = if test_set.is_empty() {
                f64::NAN
            } else {
                evaluate(net, &test_set, &EvalOptions::default())?.accuracy
            };
            let m = EpochMetrics {
                epoch,
                lr,
                train_loss: loss_sum / train_set.len() as f64,
                train_acc: correct as f64 / train_set.len() as f64,
                eval_acc,
            };
            on_epoch(&m);
            metrics.push(m);
        }
        Ok(metrics)
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum FrameOrder {
    #[default]
    Natural,
    Reversed,
    /// Seeded random permutation of the frames.
    Permutation(u64),
    /// Frame `t` of the transformed clip is frame `order[t]` of the original.
    Explicit(Vec<usize>),
}

impl FrameOrder {
    /// Source index of each output frame.
    pub fn order(&self, frames: usize) -> Result<Vec<usize>> {
        let order: Vec<usize> = match self {
            FrameOrder::Natural => (0..frames).collect(),
            FrameOrder::Reversed => (0..frames).rev().collect(),
            FrameOrder::Permutation(seed) => {
                let mut o: Vec<usize> = (0..frames).collect();
                o.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
                o
            }
            FrameOrder::Explicit(o) => o.clone(),
        };
        let mut seen = vec![false; frames];
        if order.len() != frames
            || !order
                .iter()
                .all(|&i| i < frames && !std::mem::replace(&mut seen[i], true))
        {
            return Err(GsmError::InvalidArgument(format!(
                "{order:?} is not a permutation of 0..{frames}"
            )));
        }
        Ok(order)
    }
}

/// `natural`, `reversed`, `permute:SEED`, or `permute:` followed by a
/// comma-separated source frame list such as `permute:0,2,1,3`.
impl std::str::FromStr for FrameOrder {
    type Err = GsmError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            GsmError::InvalidArgument(format!(
                "frame order '{s}' (natural, reversed, permute:SEED, permute:I,J,..)"
            ))
        };
        match s {
            "natural" => Ok(FrameOrder::Natural),
            "reversed" => Ok(FrameOrder::Reversed),
            _ => {
                let rest = s.strip_prefix("permute:").ok_or_else(bad)?;
                if rest.contains(',') {
                    let order = rest
                        .split(',')
                        .map(|t| t.trim().parse().map_err(|_| bad()))
                        .collect::<Result<_>>()?;
                    Ok(FrameOrder::Explicit(order))
                } else {
                    rest.parse().map(FrameOrder::Permutation).map_err(|_| bad())
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub frame_order: FrameOrder,
    /// Clips per forward pass; 0 selects a default.
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// NaN for classes absent from the set.
    pub per_class_accuracy: Vec<f64>,
    /// Mean clip score per class.
    pub mean_logits: Vec<f64>,
    pub predictions: Vec<usize>,
    /// Clip scores `[N, K]`.
    pub scores: Tensor<f64>,
}

pub fn evaluate<F: Scalar>(
    net: &MiniGsmNet<F>,
    samples: &[&SyntheticSample],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(GsmError::InvalidArgument(
            "cannot evaluate an empty dataset".into(),
        ));
    }
    let k = net.config.classes;
    if let Some(s) = samples.iter().find(|s| s.label >= k) {
        return Err(GsmError::InvalidArgument(format!(
            "label {} exceeds the network's {k} classes",
            s.label
        )));
    }
    let order = opts.frame_order.order(net.config.frames)?;
    let bs = if opts.batch_size == 0 {
        32
    } else {
        opts.batch_size
    };
    let mut scores = Vec::with_capacity(samples.len() * k);
    for chunk in samples.chunks(bs) {
        let clip = stack_clips::<F>(chunk)?;
        net.check_clip_shape(clip.shape())?;
        let clip = clip.reorder_time(&order)?;
        let frame_logits = net.forward_clip(&clip, ForwardOptions::eval())?;
        scores.extend(
            tsn_consensus(&frame_logits)?
                .data()
                .iter()
                .map(|v| v.to_f64_lossy()),
        );
    }
    let scores = Tensor::new(&[samples.len(), k], scores)?;
    let predictions = argmax_rows(&scores);
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (s, &p) in samples.iter().zip(&predictions) {
        totals[s.label] += 1;
        hits[s.label] += (p == s.label) as usize;
    }
    let mut mean_logits = vec![0.0; k];
    for row in scores.data().chunks(k) {
        for (m, v) in mean_logits.iter_mut().zip(row) {
            *m += v / samples.len() as f64;
        }
    }
    Ok(EvalReport {
        accuracy: hits.iter().sum::<usize>() as f64 / samples.len() as f64,
        per_class_accuracy: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| {
                if t == 0 {
                    f64::NAN
                } else {
                    h as f64 / t as f64
                }
            })
            .collect(),
        mean_logits,
        predictions,
        scores,
    })
}
