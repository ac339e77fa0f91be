//! Miniature GSM network: per-frame 2D stem, Inception-style blocks with a
//! GSM on one branch, and a per-frame classifier whose scores are averaged
//! over time (TSN consensus).
//!
//! Only GSM layers mix frames. With every gate at zero the network is a
//! per-frame 2D CNN.

use crate::analysis::{
    ArchSpec, ConvEntry, Entry, Geometry, InceptionEntry, PoolEntry, SpecPoolKind,
};
use crate::checkpoint::{read_checkpoint, write_checkpoint, NamedTensors};
use crate::error::{GsmError, Result};
use crate::gsm::{gsm_on_tape, GateActivation, GateMode, GsmVars, GATE_KERNEL};
use crate::kernels::{Conv2dGeometry, NormMode, PoolGeometry, PoolKind};
use crate::scalar::Scalar;
use crate::synth::NormStats;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use crate::kernels::tsn_consensus;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDesc {
    /// `kernel`×`kernel` convolution (no bias, "same" padding) + batch norm + ReLU.
    Conv {
        kernel: usize,
        stride: usize,
        out: usize,
    },
    Pool {
        geometry: PoolGeometry,
    },
}

impl LayerDesc {
    pub fn conv(kernel: usize, out: usize) -> Self {
        LayerDesc::Conv {
            kernel,
            stride: 1,
            out,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InceptionBlockSpec {
    pub branches: Vec<Vec<LayerDesc>>,
    /// Branch whose output passes through a GSM (without spatial conv).
    pub gsm_branch: Option<usize>,
}

impl InceptionBlockSpec {
    /// 1×1 | 1×1→3×3 | avg-pool→1×1→GSM.
    pub fn three_branch(b0: usize, reduce: usize, b1: usize, b2: usize) -> Self {
        InceptionBlockSpec {
            branches: vec![
                vec![LayerDesc::conv(1, b0)],
                vec![LayerDesc::conv(1, reduce), LayerDesc::conv(3, b1)],
                vec![
                    LayerDesc::Pool {
                        geometry: PoolGeometry::avg(3, 1, 1),
                    },
                    LayerDesc::conv(1, b2),
                ],
            ],
            gsm_branch: Some(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StemConfig {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: Option<PoolGeometry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub stem: StemConfig,
    pub blocks: Vec<InceptionBlockSpec>,
    pub gate_activation: GateActivation,
}

impl NetConfig {
    /// Desk-scale network for `frames`×32×32 clips: stem 3×3/2 plus max pool,
    /// two GSM-Inception blocks, linear head.
    pub fn mini(frames: usize, classes: usize, gate_activation: GateActivation) -> Self {
        NetConfig {
            frames,
            height: 32,
            width: 32,
            classes,
            stem: StemConfig {
                out_channels: 16,
                kernel: 3,
                stride: 2,
                pool: Some(PoolGeometry::max(3, 2, 1)),
            },
            blocks: vec![
                InceptionBlockSpec::three_branch(16, 16, 24, 16),
                InceptionBlockSpec::three_branch(32, 24, 32, 32),
            ],
            gate_activation,
        }
    }

    /// Small enough for finite-difference checks through the whole net.
    pub fn tiny(frames: usize, classes: usize, gate_activation: GateActivation) -> Self {
        NetConfig {
            frames,
            height: 8,
            width: 8,
            classes,
            stem: StemConfig {
                out_channels: 4,
                kernel: 3,
                stride: 2,
                pool: None,
            },
            blocks: vec![
                InceptionBlockSpec::three_branch(2, 2, 2, 4),
                InceptionBlockSpec::three_branch(2, 2, 2, 4),
            ],
            gate_activation,
        }
    }
}

/// Channel count and spatial extent after each block, validating as it goes.
fn trace_config(cfg: &NetConfig) -> Result<Vec<(usize, usize, usize)>> {
    if cfg.frames == 0 || cfg.classes == 0 {
        return Err(GsmError::InvalidArgument(
            "frames and classes must be >= 1".into(),
        ));
    }
    let s = &cfg.stem;
    if s.out_channels == 0 || s.kernel == 0 || s.stride == 0 {
        return Err(GsmError::InvalidArgument(
            "stem extents must be >= 1".into(),
        ));
    }
    let g = Conv2dGeometry::new((s.stride, s.stride), (s.kernel / 2, s.kernel / 2), 1);
    let mut h =
        crate::kernels::window_extent(cfg.height, s.kernel, g.stride.0, g.padding.0, "height")?;
    let mut w =
        crate::kernels::window_extent(cfg.width, s.kernel, g.stride.1, g.padding.1, "width")?;
    if let Some(p) = &s.pool {
        (h, w) = p.output_hw(h, w)?;
    }
    let mut c = s.out_channels;
    let mut trace = vec![(c, h, w)];
    for (bi, block) in cfg.blocks.iter().enumerate() {
        let err = |m: String| GsmError::Geometry(format!("block {bi}: {m}"));
        if block.branches.is_empty() {
            return Err(err("no branches".into()));
        }
        if let Some(gb) = block.gsm_branch {
            if gb >= block.branches.len() {
                return Err(err(format!("gsm_branch {gb} out of range")));
            }
        }
        let mut total = 0;
        let mut out_hw = None;
        for (ri, branch) in block.branches.iter().enumerate() {
            let (mut bc, mut bh, mut bw) = (c, h, w);
            for layer in branch {
                match layer {
                    LayerDesc::Conv {
                        kernel,
                        stride,
                        out,
                    } => {
                        if *out == 0 || *kernel == 0 || *stride == 0 {
                            return Err(err(format!("branch {ri}: conv extents must be >= 1")));
                        }
                        bh = crate::kernels::window_extent(
                            bh,
                            *kernel,
                            *stride,
                            kernel / 2,
                            "height",
                        )
                        .map_err(|e| err(format!("branch {ri}: {e}")))?;
                        bw = crate::kernels::window_extent(
                            bw,
                            *kernel,
                            *stride,
                            kernel / 2,
                            "width",
                        )
                        .map_err(|e| err(format!("branch {ri}: {e}")))?;
                        bc = *out;
                    }
                    LayerDesc::Pool { geometry } => {
                        (bh, bw) = geometry
                            .output_hw(bh, bw)
                            .map_err(|e| err(format!("branch {ri}: {e}")))?;
                    }
                }
            }
            if block.gsm_branch == Some(ri) && bc % 2 != 0 {
                return Err(err(format!("GSM branch {ri} has odd channel count {bc}")));
            }
            match out_hw {
                None => out_hw = Some((bh, bw)),
                Some(hw) if hw != (bh, bw) => {
                    return Err(err(format!(
                        "branch {ri} ends at {bh}x{bw} but branch 0 ends at {}x{}",
                        hw.0, hw.1
                    )))
                }
                Some(_) => {}
            }
            total += bc;
        }
        c = total;
        (h, w) = out_hw.expect("at least one branch");
        trace.push((c, h, w));
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiniGsmNet<F> {
    pub config: NetConfig,
    /// Learnable tensors by name.
    pub params: BTreeMap<String, Tensor<F>>,
    /// Batch-norm running statistics and input normalization.
    pub buffers: BTreeMap<String, Tensor<F>>,
    pub gate_mode: GateMode,
}

/// BN statistics gathered by a train-mode forward pass, keyed by layer prefix.
pub type BnUpdates<F> = Vec<(String, crate::kernels::BatchStats<F>)>;

fn he_normal<F: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

fn conv_layer_names(prefix: &str) -> [String; 3] {
    [
        format!("{prefix}.conv.weight"),
        format!("{prefix}.bn.weight"),
        format!("{prefix}.bn.bias"),
    ]
}

pub fn gsm_prefix(block: usize) -> String {
    format!("blocks.{block}.gsm")
}

/// True for gating-kernel parameter names.
pub fn is_gate_param(name: &str) -> bool {
    name.contains(".gsm.gate")
}

/// Seeded construction: He fan-in normal convolutions and classifier, zero
/// gates, unit BN scale and zero shift.
pub fn build_mini_net<F: Scalar>(config: NetConfig, seed: u64) -> Result<MiniGsmNet<F>> {
    let trace = trace_config(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    let mut buffers = BTreeMap::new();

    let add_conv = |params: &mut BTreeMap<String, Tensor<F>>,
                    buffers: &mut BTreeMap<String, Tensor<F>>,
                    rng: &mut ChaCha8Rng,
                    prefix: &str,
                    cin: usize,
                    cout: usize,
                    k: usize| {
        let [w, g, b] = conv_layer_names(prefix);
        params.insert(w, he_normal(&[cout, cin, k, k], cin * k * k, rng));
        params.insert(g, Tensor::ones(&[cout]));
        params.insert(b, Tensor::zeros(&[cout]));
        buffers.insert(format!("{prefix}.bn.running_mean"), Tensor::zeros(&[cout]));
        buffers.insert(format!("{prefix}.bn.running_var"), Tensor::ones(&[cout]));
    };

    let s = &config.stem;
    add_conv(
        &mut params,
        &mut buffers,
        &mut rng,
        "stem",
        3,
        s.out_channels,
        s.kernel,
    );
    for (bi, block) in config.blocks.iter().enumerate() {
        let cin = trace[bi].0;
        for (ri, branch) in block.branches.iter().enumerate() {
            let mut c = cin;
            for (li, layer) in branch.iter().enumerate() {
                if let LayerDesc::Conv { kernel, out, .. } = layer {
                    add_conv(
                        &mut params,
                        &mut buffers,
                        &mut rng,
                        &format!("blocks.{bi}.branch{ri}.{li}"),
                        c,
                        *out,
                        *kernel,
                    );
                    c = *out;
                }
            }
            if block.gsm_branch == Some(ri) {
                let half = c / 2;
                let k = GATE_KERNEL;
                for name in ["gate1", "gate2"] {
                    params.insert(
                        format!("{}.{name}", gsm_prefix(bi)),
                        Tensor::zeros(&[half, k, k, k]),
                    );
                }
            }
        }
    }
    let feat = trace.last().expect("stem entry").0;
    params.insert(
        "head.fc.weight".into(),
        he_normal(&[config.classes, feat], feat, &mut rng),
    );
    params.insert("head.fc.bias".into(), Tensor::zeros(&[config.classes]));
    buffers.insert("input.mean".into(), Tensor::zeros(&[3]));
    buffers.insert("input.std".into(), Tensor::ones(&[3]));

    Ok(MiniGsmNet {
        config,
        params,
        buffers,
        gate_mode: GateMode::Learned,
    })
}

/// Options for one forward pass.
pub struct ForwardOptions<'a> {
    pub norm: NormMode,
    /// Dropout rate and mask generator; `None` disables dropout.
    pub dropout: Option<(f64, &'a mut dyn rand::RngCore)>,
}

impl ForwardOptions<'_> {
    pub fn eval() -> Self {
        ForwardOptions {
            norm: NormMode::Eval,
            dropout: None,
        }
    }
}

impl<F: Scalar> MiniGsmNet<F> {
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn with_gate_mode(mut self, mode: GateMode) -> Self {
        self.gate_mode = mode;
        self
    }

    pub fn set_input_stats(&mut self, stats: &NormStats) {
        let conv = |v: &[f32; 3]| {
            Tensor::new(
                &[3],
                v.iter().map(|&x| F::from_f64_lossy(x as f64)).collect(),
            )
            .expect("3 values")
        };
        self.buffers.insert("input.mean".into(), conv(&stats.mean));
        self.buffers.insert("input.std".into(), conv(&stats.std));
    }

    /// Checks `[N, 3, T, H, W]` against the configuration.
    pub fn check_clip_shape(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 5 {
            return Err(GsmError::shape(
                "rank",
                format!("clip must be (N,3,T,H,W), got {shape:?}"),
            ));
        }
        for (axis, got, want) in [
            ("channel", shape[1], 3),
            ("time", shape[2], c.frames),
            ("height", shape[3], c.height),
            ("width", shape[4], c.width),
        ] {
            if got != want {
                return Err(GsmError::shape(
                    axis,
                    format!("clip has {got}, network expects {want}"),
                ));
            }
        }
        Ok(())
    }

    /// Per-channel `(x − mean) / std` with the stored input statistics.
    pub fn normalize(&self, clip: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_clip_shape(clip.shape())?;
        let mean = self.buffers["input.mean"].data();
        let std = self.buffers["input.std"].data();
        let (n, c, inner) = clip.channel_layout()?;
        let mut out = clip.clone();
        let d = out.data_mut();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * inner;
                let inv = F::one() / std[ci];
                for v in &mut d[base..base + inner] {
                    *v = (*v - mean[ci]) * inv;
                }
            }
        }
        Ok(out)
    }

    /// Puts every parameter on the tape; `trainable` decides which ones get gradients.
    pub fn bind(
        &self,
        tape: &mut Tape<F>,
        trainable: impl Fn(&str) -> bool,
    ) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), trainable(k))))
            .collect()
    }

    fn conv_bn_relu(
        &self,
        tape: &mut Tape<F>,
        vars: &BTreeMap<String, Var>,
        x: Var,
        prefix: &str,
        stride: usize,
        norm: NormMode,
        updates: &mut BnUpdates<F>,
    ) -> Result<Var> {
        let [w, g, b] = conv_layer_names(prefix);
        let weight = vars[&w];
        let k = tape.shape(weight)[2];
        let geom = Conv2dGeometry::new((stride, stride), (k / 2, k / 2), 1);
        let y = tape.conv2d(x, weight, None, geom)?;
        let rm = &self.buffers[&format!("{prefix}.bn.running_mean")];
        let rv = &self.buffers[&format!("{prefix}.bn.running_var")];
        let (y, stats) = tape.batch_norm(y, vars[&g], vars[&b], rm.data(), rv.data(), norm)?;
        if let Some(s) = stats {
            updates.push((prefix.to_owned(), s));
        }
        Ok(tape.activation(y, crate::kernels::Activation::Relu))
    }

    /// Frame logits `[N, T, K]` for a normalized clip already on the tape.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<F>,
        vars: &BTreeMap<String, Var>,
        x: Var,
        opts: ForwardOptions<'_>,
    ) -> Result<(Var, BnUpdates<F>)> {
        self.check_clip_shape(tape.shape(x))?;
        let cfg = &self.config;
        let norm = opts.norm;
        let mut updates = Vec::new();
        let mut h =
            self.conv_bn_relu(tape, vars, x, "stem", cfg.stem.stride, norm, &mut updates)?;
        if let Some(p) = cfg.stem.pool {
            h = tape.pool(h, p)?;
        }
        for (bi, block) in cfg.blocks.iter().enumerate() {
            let mut outs = Vec::with_capacity(block.branches.len());
            for (ri, branch) in block.branches.iter().enumerate() {
                let mut y = h;
                for (li, layer) in branch.iter().enumerate() {
                    y = match layer {
                        LayerDesc::Conv { stride, .. } => self.conv_bn_relu(
                            tape,
                            vars,
                            y,
                            &format!("blocks.{bi}.branch{ri}.{li}"),
                            *stride,
                            norm,
                            &mut updates,
                        )?,
                        LayerDesc::Pool { geometry } => tape.pool(y, *geometry)?,
                    };
                }
                if block.gsm_branch == Some(ri) {
                    let p = gsm_prefix(bi);
                    let gv = GsmVars {
                        gate_kernel_1: vars[&format!("{p}.gate1")],
                        gate_kernel_2: vars[&format!("{p}.gate2")],
                        spatial_conv: None,
                    };
                    y = gsm_on_tape(tape, y, &gv, cfg.gate_activation, self.gate_mode)?;
                }
                outs.push(y);
            }
            h = tape.concat_channels(&outs)?;
        }
        let pooled = tape.pool(h, PoolGeometry::global_avg())?;
        let s = tape.shape(pooled).to_vec();
        let (n, c, t) = (s[0], s[1], s[2]);
        let feat = tape.reshape(pooled, &[n, c, t])?;
        let feat = tape.swap_last_two(feat)?;
        let mut feat = tape.reshape(feat, &[n * t, c])?;
        if let Some((rate, rng)) = opts.dropout {
            if rate > 0.0 {
                feat = tape.dropout(feat, rate, rng)?;
            }
        }
        let logits = tape.linear(feat, vars["head.fc.weight"], vars["head.fc.bias"])?;
        let logits = tape.reshape(logits, &[n, t, cfg.classes])?;
        Ok((logits, updates))
    }

    /// Frame logits `[N, T, K]` for a raw (unnormalized) clip.
    pub fn forward_clip(&self, clip: &Tensor<F>, opts: ForwardOptions<'_>) -> Result<Tensor<F>> {
        let x = self.normalize(clip)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, |_| false);
        let xv = tape.constant(x);
        let (out, _) = self.forward_on_tape(&mut tape, &vars, xv, opts)?;
        Ok(tape.value(out).clone())
    }

    /// Clip scores `[N, K]` in eval mode.
    pub fn predict(&self, clip: &Tensor<F>) -> Result<Tensor<F>> {
        tsn_consensus(&self.forward_clip(clip, ForwardOptions::eval())?)
    }

    pub fn apply_bn_updates(&mut self, updates: &BnUpdates<F>) {
        for (prefix, stats) in updates {
            let mk = format!("{prefix}.bn.running_mean");
            let vk = format!("{prefix}.bn.running_var");
            let mut rm = self.buffers.remove(&mk).expect("known BN layer");
            let mut rv = self.buffers.remove(&vk).expect("known BN layer");
            stats.update_running(rm.data_mut(), rv.data_mut());
            self.buffers.insert(mk, rm);
            self.buffers.insert(vk, rv);
        }
    }

    /// Equivalent cost description (conv + BN per 2D layer, GSM, head).
    pub fn to_archspec(&self) -> ArchSpec {
        let cfg = &self.config;
        let trace = trace_config(cfg).expect("validated at construction");
        let conv = |k: usize, s: usize, cin: usize, cout: usize| {
            Entry::Conv2d(ConvEntry {
                kernel: (1, k, k),
                stride: (1, s, s),
                padding: (0, k / 2, k / 2),
                in_channels: cin,
                out_channels: cout,
                groups: 1,
                bias: false,
                batch_norm: true,
            })
        };
        let pool = |g: &PoolGeometry| {
            Entry::Pool(PoolEntry {
                kind: match g.kind {
                    PoolKind::Max => SpecPoolKind::Max,
                    PoolKind::Avg => SpecPoolKind::Avg,
                    PoolKind::GlobalAvg => SpecPoolKind::GlobalAvg,
                },
                kernel: g.kernel,
                stride: g.stride,
                padding: g.padding,
            })
        };
        let mut entries = vec![conv(
            cfg.stem.kernel,
            cfg.stem.stride,
            3,
            cfg.stem.out_channels,
        )];
        if let Some(p) = &cfg.stem.pool {
            entries.push(pool(p));
        }
        for (bi, block) in cfg.blocks.iter().enumerate() {
            let cin = trace[bi].0;
            let mut branches = Vec::new();
            for (ri, branch) in block.branches.iter().enumerate() {
                let mut c = cin;
                let mut es = Vec::new();
                for layer in branch {
                    match layer {
                        LayerDesc::Conv {
                            kernel,
                            stride,
                            out,
                        } => {
                            es.push(conv(*kernel, *stride, c, *out));
                            c = *out;
                        }
                        LayerDesc::Pool { geometry } => es.push(pool(geometry)),
                    }
                }
                if block.gsm_branch == Some(ri) {
                    es.push(Entry::Gsm { channels: c });
                }
                branches.push(es);
            }
            entries.push(Entry::Inception(InceptionEntry {
                branches,
                out_channels: trace[bi + 1].0,
            }));
        }
        let feat = trace.last().expect("stem entry").0;
        entries.push(pool(&PoolGeometry::global_avg()));
        entries.push(Entry::Linear {
            in_features: feat,
            out_features: cfg.classes,
        });
        ArchSpec {
            input: Geometry {
                channels: 3,
                frames: cfg.frames,
                height: cfg.height,
                width: cfg.width,
            },
            entries,
        }
    }

    /// Parameters and buffers in one map, at 32-bit.
    pub fn to_named_tensors(&self) -> NamedTensors {
        self.params
            .iter()
            .chain(self.buffers.iter())
            .map(|(k, v)| (k.clone(), v.cast::<f32>()))
            .collect()
    }

    /// Rebuilds a network from a configuration and a full tensor map.
    pub fn from_named_tensors(
        config: NetConfig,
        gate_mode: GateMode,
        entries: &NamedTensors,
    ) -> Result<Self> {
        let mut net = build_mini_net::<F>(config, 0)?.with_gate_mode(gate_mode);
        let expected = net.params.len() + net.buffers.len();
        if entries.len() != expected {
            return Err(GsmError::InvalidArgument(format!(
                "checkpoint has {} entries, network needs {expected}",
                entries.len()
            )));
        }
        for map in [&mut net.params, &mut net.buffers] {
            for (name, slot) in map.iter_mut() {
                let t = entries.get(name).ok_or_else(|| {
                    GsmError::InvalidArgument(format!("checkpoint lacks '{name}'"))
                })?;
                if t.shape() != slot.shape() {
                    return Err(GsmError::shape(
                        name.clone(),
                        format!(
                            "checkpoint has {:?}, network needs {:?}",
                            t.shape(),
                            slot.shape()
                        ),
                    ));
                }
                *slot = t.cast::<F>();
            }
        }
        Ok(net)
    }

    /// Writes the tensor file and a `.json` sidecar holding the configuration.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_named_tensors())?;
        let meta = CheckpointMeta {
            config: self.config.clone(),
            gate_mode: self.gate_mode,
        };
        let json = serde_json::to_string_pretty(&meta).expect("config serializes");
        std::fs::write(sidecar_path(path), json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_text = std::fs::read_to_string(sidecar_path(path))?;
        let meta: CheckpointMeta = serde_json::from_str(&meta_text)
            .map_err(|e| GsmError::parse(e.line(), format!("checkpoint sidecar: {e}")))?;
        Self::from_named_tensors(meta.config, meta.gate_mode, &read_checkpoint(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: NetConfig,
    gate_mode: GateMode,
}

pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Elementwise mean of model scores, summed in list order.
pub fn ensemble_average<F: Scalar>(scores: &[Tensor<F>]) -> Result<Tensor<F>> {
    let (first, rest) = scores
        .split_first()
        .ok_or_else(|| GsmError::InvalidArgument("ensemble needs at least one model".into()))?;
    let mut acc = first.clone();
    for s in rest {
        acc.add_assign(s)?;
    }
    Ok(acc.scale(F::one() / F::from_usize(scores.len()).expect("small count")))
}

/// Random clip batch `[n, 3, T, H, W]` matching a configuration.
pub fn random_clip<F: Scalar, R: Rng + ?Sized>(
    cfg: &NetConfig,
    n: usize,
    rng: &mut R,
) -> Tensor<F> {
    Tensor::randn(&[n, 3, cfg.frames, cfg.height, cfg.width], 1.0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::count_params;

    #[test]
    fn default_builds_and_counts_match() {
        let net = build_mini_net::<f32>(NetConfig::mini(8, 2, GateActivation::Tanh), 1).unwrap();
        assert_eq!(net.param_count() as u64, count_params(&net.to_archspec()));
        assert!(net
            .params
            .iter()
            .filter(|(k, _)| is_gate_param(k))
            .all(|(_, v)| v.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn inconsistent_blocks_rejected_with_index() {
        let mut cfg = NetConfig::mini(8, 2, GateActivation::Tanh);
        cfg.blocks[1].branches[2][1] = LayerDesc::conv(1, 31);
        let e = build_mini_net::<f32>(cfg.clone(), 0)
            .unwrap_err()
            .to_string();
        assert!(e.contains("block 1"), "{e}");
        cfg.blocks[1].branches[2][1] = LayerDesc::conv(1, 32);
        cfg.blocks[0].branches[0][0] = LayerDesc::Conv {
            kernel: 1,
            stride: 2,
            out: 8,
        };
        let e = build_mini_net::<f32>(cfg, 0).unwrap_err().to_string();
        assert!(e.contains("block 0"), "{e}");
    }

    #[test]
    fn output_shape_and_constant_clip() {
        let net = build_mini_net::<f64>(NetConfig::tiny(4, 3, GateActivation::Tanh), 2).unwrap();
        let clip = Tensor::full(&[2, 3, 4, 8, 8], 0.7);
        let out = net.forward_clip(&clip, ForwardOptions::eval()).unwrap();
        assert_eq!(out.shape(), &[2, 4, 3]);
        let d = out.data();
        for n in 0..2 {
            for t in 1..4 {
                assert_eq!(
                    &d[(n * 4) * 3..(n * 4) * 3 + 3],
                    &d[(n * 4 + t) * 3..(n * 4 + t) * 3 + 3]
                );
            }
        }
    }

    #[test]
    fn ensemble_cases() {
        let s = Tensor::<f64>::new(&[1, 2], vec![1.0, -3.0]).unwrap();
        assert_eq!(ensemble_average(std::slice::from_ref(&s)).unwrap(), s);
        let z = ensemble_average(&[s.clone(), s.scale(-1.0)]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(ensemble_average::<f64>(&[]).is_err());
    }
}
