//! Parameter and FLOP accounting over an [`ArchSpec`].
//!
//! One multiply-accumulate counts as one FLOP. Batch-norm affine and ReLU
//! work, and pooling work, go to a separate `aux` column that is excluded
//! from totals. A GSM entry costs its single-plane gating convolutions plus
//! three elementwise operations per output element (gate multiply, residual
//! subtract, fuse add); shifts are free.

use super::archspec::{ArchSpec, ConvEntry, Entry, Geometry, SpecPoolKind};
use crate::error::{GsmError, Result};
use std::fmt::Write as _;

/// Gating parameters of one GSM layer: two `(C/2, 3, 3, 3)` kernels.
pub fn gsm_gate_params(channels: usize) -> u64 {
    27 * channels as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostRow {
    pub name: String,
    pub output: Geometry,
    pub params: u64,
    pub flops: u64,
    pub aux_flops: u64,
    pub is_gsm: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub frames: usize,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_flops: u64,
    pub total_aux_flops: u64,
    pub gsm_params: u64,
    pub gsm_flops: u64,
    pub param_overhead_pct: f64,
    pub flop_overhead_pct: f64,
}

fn conv_cost(c: &ConvEntry, out: Geometry) -> (u64, u64, u64) {
    let taps = (c.in_channels / c.groups) as u64 * (c.kernel.0 * c.kernel.1 * c.kernel.2) as u64;
    let mut params = c.out_channels as u64 * taps;
    if c.bias {
        params += c.out_channels as u64;
    }
    if c.batch_norm {
        params += 2 * c.out_channels as u64;
    }
    let out_elems = (out.channels * out.elements_per_channel()) as u64;
    let flops = out_elems * taps;
    let aux = if c.batch_norm { 2 * out_elems } else { 0 };
    (params, flops, aux)
}

fn entry_cost(e: &Entry, input: Geometry, out: Geometry) -> (u64, u64, u64) {
    match e {
        Entry::Conv2d(c) | Entry::Conv3d(c) => conv_cost(c, out),
        Entry::Pool(p) => {
            let window = match p.kind {
                SpecPoolKind::GlobalAvg => (input.height * input.width) as u64,
                _ => (p.kernel.0 * p.kernel.1) as u64,
            };
            (
                0,
                0,
                (out.channels * out.elements_per_channel()) as u64 * window,
            )
        }
        Entry::Linear {
            in_features,
            out_features,
        } => {
            let params = (*out_features * *in_features + *out_features) as u64;
            (params, (out.frames * in_features * out_features) as u64, 0)
        }
        Entry::Gsm { channels } => {
            let per_element = (input.elements_per_channel()) as u64;
            let gate = 27 * *channels as u64 * per_element;
            let elementwise = 3 * *channels as u64 * per_element;
            // gate activation over one plane per group
            (
                gsm_gate_params(*channels),
                gate + elementwise,
                2 * per_element,
            )
        }
        Entry::Inception(_) => unreachable!("blocks are expanded by the walker"),
    }
}

fn label(e: &Entry) -> String {
    match e {
        Entry::Conv2d(c) => format!(
            "conv2d {}x{}/{} {}->{}",
            c.kernel.1, c.kernel.2, c.stride.1, c.in_channels, c.out_channels
        ),
        Entry::Conv3d(c) => format!(
            "conv3d {}x{}x{}/{} {}->{}",
            c.kernel.0, c.kernel.1, c.kernel.2, c.stride.1, c.in_channels, c.out_channels
        ),
        Entry::Pool(p) => match p.kind {
            SpecPoolKind::GlobalAvg => "pool global_avg".into(),
            SpecPoolKind::Max => format!("pool max {}x{}/{}", p.kernel.0, p.kernel.1, p.stride.0),
            SpecPoolKind::Avg => format!("pool avg {}x{}/{}", p.kernel.0, p.kernel.1, p.stride.0),
        },
        Entry::Linear {
            in_features,
            out_features,
        } => format!("linear {in_features}->{out_features}"),
        Entry::Gsm { channels } => format!("gsm c={channels}"),
        Entry::Inception(_) => "inception".into(),
    }
}

fn walk(
    entries: &[Entry],
    mut g: Geometry,
    prefix: &str,
    rows: &mut Vec<CostRow>,
) -> Result<Geometry> {
    let mut block_idx = 0;
    for (i, e) in entries.iter().enumerate() {
        if let Entry::Inception(b) = e {
            let name = format!("{prefix}block{block_idx}");
            block_idx += 1;
            for (bi, branch) in b.branches.iter().enumerate() {
                walk(branch, g, &format!("{name}.branch{bi}."), rows)?;
            }
            g = e.output_geometry(g).map_err(GsmError::Geometry)?;
            continue;
        }
        let out = e.output_geometry(g).map_err(GsmError::Geometry)?;
        let (params, flops, aux_flops) = entry_cost(e, g, out);
        rows.push(CostRow {
            name: format!("{prefix}{i}:{}", label(e)),
            output: out,
            params,
            flops,
            aux_flops,
            is_gsm: matches!(e, Entry::Gsm { .. }),
        });
        g = out;
    }
    Ok(g)
}

pub fn report(spec: &ArchSpec, frames: usize) -> Result<CostReport> {
    if frames == 0 {
        return Err(GsmError::InvalidArgument("frames must be >= 1".into()));
    }
    let mut rows = Vec::new();
    walk(
        &spec.entries,
        Geometry {
            frames,
            ..spec.input
        },
        "",
        &mut rows,
    )?;
    let total_params = rows.iter().map(|r| r.params).sum();
    let total_flops = rows.iter().map(|r| r.flops).sum();
    let total_aux_flops = rows.iter().map(|r| r.aux_flops).sum();
    let gsm_params = rows.iter().filter(|r| r.is_gsm).map(|r| r.params).sum();
    let gsm_flops = rows.iter().filter(|r| r.is_gsm).map(|r| r.flops).sum();
    let pct = |part: u64, total: u64| {
        if part == 0 {
            0.0
        } else {
            part as f64 / (total - part) as f64 * 100.0
        }
    };
    Ok(CostReport {
        frames,
        param_overhead_pct: pct(gsm_params, total_params),
        flop_overhead_pct: pct(gsm_flops, total_flops),
        rows,
        total_params,
        total_flops,
        total_aux_flops,
        gsm_params,
        gsm_flops,
    })
}

pub fn count_params(spec: &ArchSpec) -> u64 {
    report(spec, spec.input.frames)
        .expect("a parsed spec is valid at its own frame count")
        .total_params
}

pub fn count_flops(spec: &ArchSpec, frames: usize) -> Result<u64> {
    Ok(report(spec, frames)?.total_flops)
}

fn human(v: u64) -> String {
    let v = v as f64;
    if v >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.1}K", v / 1e3)
    } else {
        format!("{v}")
    }
}

impl CostReport {
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = String::new();
        writeln!(
            s,
            "{:<width$}  {:>16}  {:>12}  {:>16}  {:>14}",
            "layer", "output CxTxHxW", "params", "flops", "aux flops"
        )
        .unwrap();
        for r in &self.rows {
            let o = r.output;
            writeln!(
                s,
                "{:<width$}  {:>16}  {:>12}  {:>16}  {:>14}",
                r.name,
                format!("{}x{}x{}x{}", o.channels, o.frames, o.height, o.width),
                r.params,
                r.flops,
                r.aux_flops
            )
            .unwrap();
        }
        writeln!(
            s,
            "{:<width$}  {:>16}  {:>12}  {:>16}  {:>14}",
            "total", "", self.total_params, self.total_flops, self.total_aux_flops
        )
        .unwrap();
        writeln!(
            s,
            "{:<width$}  {:>16}  {:>12}  {:>16}",
            "gsm subtotal", "", self.gsm_params, self.gsm_flops
        )
        .unwrap();
        writeln!(s).unwrap();
        writeln!(s, "frames: {}", self.frames).unwrap();
        writeln!(
            s,
            "params: {} total, {} without gsm, +{:.3}%",
            human(self.total_params),
            human(self.total_params - self.gsm_params),
            self.param_overhead_pct
        )
        .unwrap();
        writeln!(
            s,
            "flops: {} total, {} without gsm, +{:.3}%",
            human(self.total_flops),
            human(self.total_flops - self.gsm_flops),
            self.flop_overhead_pct
        )
        .unwrap();
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s =
            String::from("layer\tchannels\tframes\theight\twidth\tparams\tflops\taux_flops\tgsm\n");
        for r in &self.rows {
            let o = r.output;
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.name,
                o.channels,
                o.frames,
                o.height,
                o.width,
                r.params,
                r.flops,
                r.aux_flops,
                r.is_gsm as u8
            )
            .unwrap();
        }
        writeln!(
            s,
            "total\t\t\t\t\t{}\t{}\t{}\t",
            self.total_params, self.total_flops, self.total_aux_flops
        )
        .unwrap();
        writeln!(
            s,
            "gsm_subtotal\t\t\t\t\t{}\t{}\t\t",
            self.gsm_params, self.gsm_flops
        )
        .unwrap();
        writeln!(s, "# param_overhead_pct={:.6}", self.param_overhead_pct).unwrap();
        writeln!(s, "# flop_overhead_pct={:.6}", self.flop_overhead_pct).unwrap();
        s
    }
}
