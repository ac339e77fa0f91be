//! Randomized grad-check suites over the primitives, the GSM and a tiny
//! network, at 64-bit.

use crate::backbone::{build_mini_net, ForwardOptions, NetConfig};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::gsm::{gsm_on_tape, GateActivation, GateMode, GsmVars, GATE_KERNEL};
use crate::kernels::{Activation, Conv2dGeometry, NormMode, PoolGeometry, ShiftDirection};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Primitives,
    Gsm,
    Net,
}

impl std::str::FromStr for Scope {
    type Err = crate::GsmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primitives" => Ok(Scope::Primitives),
            "gsm" => Ok(Scope::Gsm),
            "net" => Ok(Scope::Net),
            other => Err(crate::GsmError::InvalidArgument(format!(
                "unknown scope '{other}' (primitives, gsm, net)"
            ))),
        }
    }
}

impl Scope {
    /// `(eps, tolerance)` used when the caller does not override them.
    /// The GSM gate composes two curved maps, so its stencil truncation error
    /// at 1e-4 sits near the tolerance; the net scope also keeps ReLU kinks
    /// out of the stencil.
    pub fn defaults(self) -> (f64, f64) {
        match self {
            Scope::Primitives => (1e-4, 1e-5),
            Scope::Gsm => (1e-5, 1e-5),
            Scope::Net => (1e-6, 1e-4),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub eps: Option<f64>,
    pub tolerance: Option<f64>,
    pub instances: usize,
    pub seed: u64,
    pub fault_scale: Option<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            eps: None,
            tolerance: None,
            instances: 20,
            seed: 0,
            fault_scale: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub op: String,
    pub instances: usize,
    pub checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub failure: Option<String>,
}

type Op = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

struct Instance {
    op: Op,
    inputs: Vec<Tensor<f64>>,
    max_per_input: Option<usize>,
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Distinct values at least 0.05 apart, so no max-pool window has a near tie.
fn separated(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("matching count")
}

/// Magnitudes at least 0.05, keeping ReLU inputs off the kink.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    randn(shape, rng).map(|x| x.signum() * (0.05 + x.abs()))
}

fn video(rng: &mut ChaCha8Rng, channels: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    vec![
        rng.gen_range(1..=2),
        rng.gen_range(channels),
        rng.gen_range(1..=4),
        rng.gen_range(2..=5),
        rng.gen_range(2..=5),
    ]
}

fn primitive_instances(name: &str, rng: &mut ChaCha8Rng) -> Instance {
    let one = |op: Op, inputs| Instance {
        op,
        inputs,
        max_per_input: None,
    };
    match name {
        "conv2d" => {
            let g = rng.gen_range(1..=2);
            let cin = g * rng.gen_range(1..=2);
            let cout = g * rng.gen_range(1..=3);
            let (kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
            let pad = (rng.gen_range(0..kh), rng.gen_range(0..kw));
            let (h, w) = (rng.gen_range(kh..=6), rng.gen_range(kw..=6));
            let n = rng.gen_range(1..=2);
            let shape = if rng.gen_bool(0.5) {
                vec![n, cin, h, w]
            } else {
                vec![n, cin, rng.gen_range(1..=2), h, w]
            };
            let geom = Conv2dGeometry::new(stride, pad, g);
            let mut inputs = vec![randn(&shape, rng), randn(&[cout, cin / g, kh, kw], rng)];
            let bias = rng.gen_bool(0.5);
            if bias {
                inputs.push(randn(&[cout], rng));
            }
            one(
                Box::new(move |t, v| t.conv2d(v[0], v[1], v.get(2).copied(), geom)),
                inputs,
            )
        }
        "conv3d_plane" => {
            let c = rng.gen_range(1..=3);
            let k = [
                rng.gen_range(1..=3),
                rng.gen_range(1..=3),
                rng.gen_range(1..=3),
            ];
            let pad = (
                rng.gen_range(0..k[0]),
                rng.gen_range(0..k[1]),
                rng.gen_range(0..k[2]),
            );
            let shape = vec![
                rng.gen_range(1..=2),
                c,
                rng.gen_range(k[0]..=4),
                rng.gen_range(k[1]..=5),
                rng.gen_range(k[2]..=5),
            ];
            one(
                Box::new(move |t, v| t.conv3d_plane(v[0], v[1], pad)),
                vec![randn(&shape, rng), randn(&[c, k[0], k[1], k[2]], rng)],
            )
        }
        "tanh" | "sigmoid" | "relu" => {
            let kind = match name {
                "tanh" => Activation::Tanh,
                "sigmoid" => Activation::Sigmoid,
                _ => Activation::Relu,
            };
            let shape = video(rng, 1..=3);
            one(
                Box::new(move |t, v| Ok(t.activation(v[0], kind))),
                vec![off_zero(&shape, rng)],
            )
        }
        "hadamard_broadcast" => {
            let shape = video(rng, 1..=3);
            let mut gshape = shape.clone();
            gshape[1] = 1;
            one(
                Box::new(|t, v| t.hadamard_broadcast(v[0], v[1])),
                vec![randn(&gshape, rng), randn(&shape, rng)],
            )
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let c = rng.gen_range(1..=3);
            let shape = video(rng, c..=c);
            let mode = if name == "batch_norm_train" {
                NormMode::Train
            } else {
                NormMode::Eval
            };
            let rm: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let rv: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
            let mut x = randn(&shape, rng);
            if shape[0] * shape[2] * shape[3] * shape[4] < 2 {
                x = randn(&[2, c, 1, 1, 1], rng);
            }
            one(
                Box::new(move |t, v| Ok(t.batch_norm(v[0], v[1], v[2], &rm, &rv, mode)?.0)),
                vec![x, randn(&[c], rng), randn(&[c], rng)],
            )
        }
        "max_pool" | "avg_pool" => {
            let k = rng.gen_range(1..=3);
            let s = rng.gen_range(1..=2);
            let p = rng.gen_range(0..k);
            let geom = if name == "max_pool" {
                PoolGeometry::max(k, s, p)
            } else {
                PoolGeometry::avg(k, s, p)
            };
            let mut shape = video(rng, 1..=2);
            shape[3] = shape[3].max(k);
            shape[4] = shape[4].max(k);
            let x = if name == "max_pool" {
                separated(&shape, rng)
            } else {
                randn(&shape, rng)
            };
            one(Box::new(move |t, v| t.pool(v[0], geom)), vec![x])
        }
        "global_avg_pool" => {
            let shape = video(rng, 1..=3);
            one(
                Box::new(|t, v| t.pool(v[0], PoolGeometry::global_avg())),
                vec![randn(&shape, rng)],
            )
        }
        "linear" => {
            let (n, f, k) = (
                rng.gen_range(1..=4),
                rng.gen_range(1..=6),
                rng.gen_range(1..=4),
            );
            one(
                Box::new(|t, v| t.linear(v[0], v[1], v[2])),
                vec![randn(&[n, f], rng), randn(&[k, f], rng), randn(&[k], rng)],
            )
        }
        "softmax_cross_entropy" => {
            let (n, k) = (rng.gen_range(1..=4), rng.gen_range(2..=5));
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            one(
                Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)),
                vec![randn(&[n, k], rng).scale(2.0)],
            )
        }
        "dropout" => {
            let shape = video(rng, 2..=2);
            let seed = rng.gen();
            one(
                Box::new(move |t, v| t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(seed))),
                vec![randn(&shape, rng)],
            )
        }
        "shift_fw" | "shift_bw" => {
            let dir = if name == "shift_fw" {
                ShiftDirection::Forward
            } else {
                ShiftDirection::Backward
            };
            let shape = video(rng, 1..=3);
            one(
                Box::new(move |t, v| t.temporal_shift(v[0], dir)),
                vec![randn(&shape, rng)],
            )
        }
        "slice_concat" => {
            let c = rng.gen_range(2..=4);
            let shape = video(rng, c..=c);
            let start = rng.gen_range(0..c - 1);
            let len = rng.gen_range(1..=c - start);
            one(
                Box::new(move |t, v| {
                    let a = t.slice_channels(v[0], start, len)?;
                    t.concat_channels(&[a, v[0]])
                }),
                vec![randn(&shape, rng)],
            )
        }
        "tsn_consensus" => {
            let shape = [
                rng.gen_range(1..=3),
                rng.gen_range(1..=5),
                rng.gen_range(1..=4),
            ];
            one(
                Box::new(|t, v| {
                    let s = t.swap_last_two(v[0])?;
                    let s = t.swap_last_two(s)?;
                    t.tsn_consensus(s)
                }),
                vec![randn(&shape, rng)],
            )
        }
        "add_sub_mul" => {
            let shape = video(rng, 1..=2);
            one(
                Box::new(|t, v| {
                    let a = t.add(v[0], v[1])?;
                    let b = t.sub(v[0], v[1])?;
                    t.mul(a, b)
                }),
                vec![randn(&shape, rng), randn(&shape, rng)],
            )
        }
        other => unreachable!("unknown primitive {other}"),
    }
}

pub const PRIMITIVES: &[&str] = &[
    "conv2d",
    "conv3d_plane",
    "tanh",
    "sigmoid",
    "relu",
    "hadamard_broadcast",
    "batch_norm_train",
    "batch_norm_eval",
    "max_pool",
    "avg_pool",
    "global_avg_pool",
    "linear",
    "softmax_cross_entropy",
    "dropout",
    "shift_fw",
    "shift_bw",
    "slice_concat",
    "tsn_consensus",
    "add_sub_mul",
];

fn gsm_instance(i: usize, rng: &mut ChaCha8Rng) -> (String, Instance) {
    let act = if i.is_multiple_of(2) {
        GateActivation::Tanh
    } else {
        GateActivation::Sigmoid
    };
    let spatial = i % 4 >= 2;
    let mode = match i % 20 {
        16..=17 => GateMode::ForcedOne,
        18..=19 => GateMode::ForcedZero,
        _ => GateMode::Learned,
    };
    let c = 2 * rng.gen_range(1..=3);
    let cin = if spatial { rng.gen_range(1..=3) } else { c };
    let shape = video(rng, cin..=cin);
    let k = GATE_KERNEL;
    let mut inputs = vec![
        randn(&shape, rng),
        Tensor::randn(&[c / 2, k, k, k], 0.3, rng),
        Tensor::randn(&[c / 2, k, k, k], 0.3, rng),
    ];
    if spatial {
        inputs.push(Tensor::randn(&[c, cin, 3, 3], 0.4, rng));
    }
    let label = format!(
        "gsm_{}{}",
        match act {
            GateActivation::Tanh => "tanh",
            GateActivation::Sigmoid => "sigmoid",
        },
        if spatial { "_spatial" } else { "" }
    );
    let op: Op = Box::new(move |t, v| {
        let vars = GsmVars {
            gate_kernel_1: v[1],
            gate_kernel_2: v[2],
            spatial_conv: v.get(3).copied(),
        };
        gsm_on_tape(t, v[0], &vars, act, mode)
    });
    (
        label,
        Instance {
            op,
            inputs,
            max_per_input: None,
        },
    )
}

fn net_instance(i: usize, rng: &mut ChaCha8Rng) -> Result<(String, Instance)> {
    let act = if i.is_multiple_of(2) {
        GateActivation::Tanh
    } else {
        GateActivation::Sigmoid
    };
    let cfg = NetConfig::tiny(4, 3, act);
    let mut net = build_mini_net::<f64>(cfg.clone(), rng.gen())?;
    for (name, p) in net.params.iter_mut() {
        if crate::backbone::is_gate_param(name) {
            *p = Tensor::randn(p.shape(), 0.2, rng);
        }
    }
    let names: Vec<String> = net.params.keys().cloned().collect();
    let mut inputs = vec![crate::backbone::random_clip::<f64, _>(&cfg, 2, rng)];
    inputs.extend(net.params.values().cloned());
    let op: Op = Box::new(move |t, v| {
        let vars: BTreeMap<String, Var> =
            names.iter().cloned().zip(v[1..].iter().copied()).collect();
        let opts = ForwardOptions {
            norm: NormMode::Train,
            dropout: None,
        };
        Ok(net.forward_on_tape(t, &vars, v[0], opts)?.0)
    });
    let label = match act {
        GateActivation::Tanh => "net_tanh",
        GateActivation::Sigmoid => "net_sigmoid",
    };
    Ok((
        label.into(),
        Instance {
            op,
            inputs,
            max_per_input: Some(6),
        },
    ))
}

fn aggregate(
    rows: &mut BTreeMap<String, SuiteRow>,
    order: &mut Vec<String>,
    label: String,
    r: GradCheckReport,
    tol: f64,
) {
    let row = rows.entry(label.clone()).or_insert_with(|| {
        order.push(label.clone());
        SuiteRow {
            op: label,
            instances: 0,
            checked: 0,
            max_relative_error: 0.0,
            tolerance: tol,
            passed: true,
            failure: None,
        }
    });
    row.instances += 1;
    row.checked += r.checked;
    row.max_relative_error = row.max_relative_error.max(r.max_relative_error);
    row.passed &= r.passed;
    if row.failure.is_none() {
        row.failure = r.failure;
    }
}

/// One row per operation, each aggregated over `instances` random cases.
pub fn run_suite(scope: Scope, cfg: &SuiteConfig) -> Result<Vec<SuiteRow>> {
    let (eps, tol) = scope.defaults();
    let eps = cfg.eps.unwrap_or(eps);
    let tol = cfg.tolerance.unwrap_or(tol);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = BTreeMap::new();
    let mut order = Vec::new();
    let mut check = |label: String, inst: Instance, rng: &mut ChaCha8Rng| -> Result<()> {
        let gc = GradCheckConfig {
            eps,
            tolerance: tol,
            max_per_input: inst.max_per_input,
            seed: rng.gen(),
            fault_scale: cfg.fault_scale,
        };
        let r = grad_check(&inst.op, &inst.inputs, &gc)?;
        aggregate(&mut rows, &mut order, label, r, tol);
        Ok(())
    };
    match scope {
        Scope::Primitives => {
            for name in PRIMITIVES {
                for _ in 0..cfg.instances {
                    let inst = primitive_instances(name, &mut rng);
                    check(name.to_string(), inst, &mut rng)?;
                }
            }
        }
        Scope::Gsm => {
            for i in 0..4 * cfg.instances {
                let (label, inst) = gsm_instance(i, &mut rng);
                check(label, inst, &mut rng)?;
            }
        }
        Scope::Net => {
            for i in 0..2 * cfg.instances {
                let (label, inst) = net_instance(i, &mut rng)?;
                check(label, inst, &mut rng)?;
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|k| rows.remove(&k).expect("recorded"))
        .collect())
}

/// Aligned text table of suite rows.
pub fn render_rows(rows: &[SuiteRow]) -> String {
    let width = rows.iter().map(|r| r.op.len()).max().unwrap_or(2).max(2);
    let mut s = format!(
        "{:<width$}  {:>9}  {:>8}  {:>12}  {:>9}  result\n",
        "op", "instances", "checked", "max rel err", "tol"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<width$}  {:>9}  {:>8}  {:>12.3e}  {:>9.1e}  {}{}\n",
            r.op,
            r.instances,
            r.checked,
            r.max_relative_error,
            r.tolerance,
            if r.passed { "pass" } else { "FAIL" },
            r.failure
                .as_deref()
                .map(|f| format!(" ({f})"))
                .unwrap_or_default()
        ));
    }
    s
}
