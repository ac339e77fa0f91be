//! Line-oriented architecture description.
//!
//! ```text
//! # comment
//! input 3 8 224 224                     # channels frames height width
//! conv2d k=7x7 s=2 p=3 in=3 out=64 g=1 bias=0 bn=1
//! conv3d k=3x3x3 s=1 p=1 in=64 out=64 g=1 bias=0 bn=1
//! pool max k=3x3 s=2 p=1                # max | avg | global_avg
//! inception begin
//! inception branch
//! conv2d k=1x1 s=1 p=0 in=192 out=64
//! inception branch
//! pool avg k=3x3 s=1 p=1
//! conv2d k=1x1 s=1 p=0 in=192 out=32
//! gsm c=32
//! inception end out=96
//! linear in=1024 out=174
//! ```
//!
//! `k`, `s` and `p` accept a single value or one value per axis joined by
//! `x`. `g` defaults to 1, `bias` to 0 and `bn` (batch norm after the
//! convolution) to 1. Blocks may nest inside a branch. Output extents use the floor convention. Serialization
//! writes every attribute explicitly, so parse → serialize → parse is a
//! fixed point.

use crate::error::{GsmError, Result};
use crate::kernels::window_extent;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn elements_per_channel(&self) -> usize {
        self.frames * self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvEntry {
    /// `(kt, kh, kw)`; `kt = 1` for conv2d.
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub bias: bool,
    pub batch_norm: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecPoolKind {
    Max,
    Avg,
    GlobalAvg,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolEntry {
    pub kind: SpecPoolKind,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InceptionEntry {
    pub branches: Vec<Vec<Entry>>,
    /// Concatenated output channels.
    pub out_channels: usize,
}

impl InceptionEntry {
    /// Index of the branch carrying a GSM entry, if any.
    pub fn gsm_branch(&self) -> Option<usize> {
        self.branches
            .iter()
            .position(|b| b.iter().any(|e| matches!(e, Entry::Gsm { .. })))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Entry {
    Conv2d(ConvEntry),
    Conv3d(ConvEntry),
    Pool(PoolEntry),
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Gsm {
        channels: usize,
    },
    Inception(InceptionEntry),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub input: Geometry,
    pub entries: Vec<Entry>,
}

impl Entry {
    /// Geometry after this entry, or a message describing the violation.
    pub fn output_geometry(&self, g: Geometry) -> std::result::Result<Geometry, String> {
        match self {
            Entry::Conv2d(c) | Entry::Conv3d(c) => {
                if c.in_channels != g.channels {
                    return Err(format!(
                        "channel mismatch: layer expects in={} but receives {} channels",
                        c.in_channels, g.channels
                    ));
                }
                if c.groups == 0 || c.in_channels % c.groups != 0 || c.out_channels % c.groups != 0
                {
                    return Err(format!(
                        "groups={} must divide in={} and out={}",
                        c.groups, c.in_channels, c.out_channels
                    ));
                }
                let ext =
                    |i, k, s, p, axis| window_extent(i, k, s, p, axis).map_err(|e| e.to_string());
                Ok(Geometry {
                    channels: c.out_channels,
                    frames: ext(g.frames, c.kernel.0, c.stride.0, c.padding.0, "time")?,
                    height: ext(g.height, c.kernel.1, c.stride.1, c.padding.1, "height")?,
                    width: ext(g.width, c.kernel.2, c.stride.2, c.padding.2, "width")?,
                })
            }
            Entry::Pool(p) => match p.kind {
                SpecPoolKind::GlobalAvg => Ok(Geometry {
                    height: 1,
                    width: 1,
                    ..g
                }),
                _ => {
                    if p.padding.0 >= p.kernel.0 || p.padding.1 >= p.kernel.1 {
                        return Err("pool padding must be smaller than its kernel".into());
                    }
                    let ext = |i, k, s, pd, axis| {
                        window_extent(i, k, s, pd, axis).map_err(|e| e.to_string())
                    };
                    Ok(Geometry {
                        height: ext(g.height, p.kernel.0, p.stride.0, p.padding.0, "height")?,
                        width: ext(g.width, p.kernel.1, p.stride.1, p.padding.1, "width")?,
                        ..g
                    })
                }
            },
            Entry::Linear {
                in_features,
                out_features,
            } => {
                let have = g.channels * g.height * g.width;
                if *in_features != have {
                    return Err(format!(
                        "channel mismatch: linear expects in={in_features} but receives {have} features"
                    ));
                }
                Ok(Geometry {
                    channels: *out_features,
                    height: 1,
                    width: 1,
                    ..g
                })
            }
            Entry::Gsm { channels } => {
                if *channels == 0 || channels % 2 != 0 {
                    return Err(format!(
                        "gsm channel count {channels} must be positive and even"
                    ));
                }
                if *channels != g.channels {
                    return Err(format!(
                        "channel mismatch: gsm c={channels} but receives {} channels",
                        g.channels
                    ));
                }
                Ok(g)
            }
            Entry::Inception(block) => {
                let mut outs = Vec::new();
                for branch in &block.branches {
                    let mut bg = g;
                    for e in branch {
                        bg = e.output_geometry(bg)?;
                    }
                    outs.push(bg);
                }
                concat_geometry(&outs, Some(block.out_channels))
            }
        }
    }
}

fn concat_geometry(
    outs: &[Geometry],
    declared: Option<usize>,
) -> std::result::Result<Geometry, String> {
    let Some(first) = outs.first() else {
        return Err("inception block has no branches".into());
    };
    for (i, o) in outs.iter().enumerate() {
        if (o.frames, o.height, o.width) != (first.frames, first.height, first.width) {
            return Err(format!(
                "branch {i} ends at {}x{}x{} but branch 0 ends at {}x{}x{}",
                o.frames, o.height, o.width, first.frames, first.height, first.width
            ));
        }
    }
    let channels: usize = outs.iter().map(|o| o.channels).sum();
    if let Some(d) = declared {
        if d != channels {
            return Err(format!(
                "branch concat channels {channels} do not match declared out={d}"
            ));
        }
    }
    Ok(Geometry { channels, ..*first })
}

impl ArchSpec {
    /// Output geometry of the whole network for a given frame count.
    pub fn output_geometry(&self, frames: usize) -> Result<Geometry> {
        let mut g = Geometry {
            frames,
            ..self.input
        };
        for e in &self.entries {
            g = e.output_geometry(g).map_err(GsmError::Geometry)?;
        }
        Ok(g)
    }

    /// Top-level Inception blocks, in order.
    pub fn inception_blocks(&self) -> impl Iterator<Item = &InceptionEntry> {
        self.entries.iter().filter_map(|e| match e {
            Entry::Inception(b) => Some(b),
            _ => None,
        })
    }

    pub fn gsm_count(&self) -> usize {
        fn count(entries: &[Entry]) -> usize {
            entries
                .iter()
                .map(|e| match e {
                    Entry::Gsm { .. } => 1,
                    Entry::Inception(b) => b.branches.iter().map(|br| count(br)).sum(),
                    _ => 0,
                })
                .sum()
        }
        count(&self.entries)
    }

    /// Copy of the spec with every GSM entry removed.
    pub fn without_gsm(&self) -> ArchSpec {
        fn strip(entries: &[Entry]) -> Vec<Entry> {
            entries
                .iter()
                .filter(|e| !matches!(e, Entry::Gsm { .. }))
                .map(|e| match e {
                    Entry::Inception(b) => Entry::Inception(InceptionEntry {
                        branches: b.branches.iter().map(|br| strip(br)).collect(),
                        out_channels: b.out_channels,
                    }),
                    other => other.clone(),
                })
                .collect()
        }
        ArchSpec {
            input: self.input,
            entries: strip(&self.entries),
        }
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let g = self.input;
        writeln!(
            s,
            "input {} {} {} {}",
            g.channels, g.frames, g.height, g.width
        )
        .unwrap();
        for e in &self.entries {
            write_entry(&mut s, e);
        }
        s
    }
}

fn axes2(v: (usize, usize)) -> String {
    if v.0 == v.1 {
        v.0.to_string()
    } else {
        format!("{}x{}", v.0, v.1)
    }
}

fn axes3(v: (usize, usize, usize)) -> String {
    if v.0 == v.1 && v.1 == v.2 {
        v.0.to_string()
    } else {
        format!("{}x{}x{}", v.0, v.1, v.2)
    }
}

fn write_entry(s: &mut String, e: &Entry) {
    match e {
        Entry::Conv2d(c) => writeln!(
            s,
            "conv2d k={}x{} s={} p={} in={} out={} g={} bias={} bn={}",
            c.kernel.1,
            c.kernel.2,
            axes2((c.stride.1, c.stride.2)),
            axes2((c.padding.1, c.padding.2)),
            c.in_channels,
            c.out_channels,
            c.groups,
            c.bias as u8,
            c.batch_norm as u8
        )
        .unwrap(),
        Entry::Conv3d(c) => writeln!(
            s,
            "conv3d k={}x{}x{} s={} p={} in={} out={} g={} bias={} bn={}",
            c.kernel.0,
            c.kernel.1,
            c.kernel.2,
            axes3(c.stride),
            axes3(c.padding),
            c.in_channels,
            c.out_channels,
            c.groups,
            c.bias as u8,
            c.batch_norm as u8
        )
        .unwrap(),
        Entry::Pool(p) => match p.kind {
            SpecPoolKind::GlobalAvg => writeln!(s, "pool global_avg").unwrap(),
            kind => writeln!(
                s,
                "pool {} k={}x{} s={} p={}",
                if kind == SpecPoolKind::Max {
                    "max"
                } else {
                    "avg"
                },
                p.kernel.0,
                p.kernel.1,
                axes2(p.stride),
                axes2(p.padding)
            )
            .unwrap(),
        },
        Entry::Linear {
            in_features,
            out_features,
        } => writeln!(s, "linear in={in_features} out={out_features}").unwrap(),
        Entry::Gsm { channels } => writeln!(s, "gsm c={channels}").unwrap(),
        Entry::Inception(b) => {
            s.push_str("inception begin\n");
            for branch in &b.branches {
                s.push_str("inception branch\n");
                for e in branch {
                    write_entry(s, e);
                }
            }
            writeln!(s, "inception end out={}", b.out_channels).unwrap();
        }
    }
}

struct Attrs<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Attrs<'a> {
    fn new(line: usize, tokens: &[&'a str], allowed: &[&str]) -> Result<Self> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| GsmError::parse(line, format!("expected key=value, got '{tok}'")))?;
            if !allowed.contains(&k) {
                return Err(GsmError::parse(line, format!("unknown attribute '{k}'")));
            }
            if pairs.iter().any(|(pk, _)| *pk == k) {
                return Err(GsmError::parse(line, format!("duplicate attribute '{k}'")));
            }
            pairs.push((k, v));
        }
        Ok(Attrs { line, pairs })
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn usize_opt(&self, key: &str) -> Result<Option<usize>> {
        self.raw(key)
            .map(|v| {
                v.parse::<usize>().map_err(|_| {
                    GsmError::parse(self.line, format!("{key}={v} is not an unsigned integer"))
                })
            })
            .transpose()
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.usize_opt(key)?
            .ok_or_else(|| GsmError::parse(self.line, format!("missing attribute '{key}'")))
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("0") => Ok(false),
            Some("1") => Ok(true),
            Some(v) => Err(GsmError::parse(
                self.line,
                format!("{key}={v} must be 0 or 1"),
            )),
        }
    }

    /// `n` or `a x b [x c]`, broadcast to `axes` values.
    fn axes(&self, key: &str, axes: usize, default: Option<usize>) -> Result<Vec<usize>> {
        let Some(v) = self.raw(key) else {
            return default
                .map(|d| vec![d; axes])
                .ok_or_else(|| GsmError::parse(self.line, format!("missing attribute '{key}'")));
        };
        let parts: Vec<usize> = v
            .split('x')
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| GsmError::parse(self.line, format!("bad extent list {key}={v}")))?;
        match parts.len() {
            1 => Ok(vec![parts[0]; axes]),
            n if n == axes => Ok(parts),
            _ => Err(GsmError::parse(
                self.line,
                format!("{key}={v} needs 1 or {axes} values"),
            )),
        }
    }
}

fn parse_conv(line: usize, tokens: &[&str], three_d: bool) -> Result<Entry> {
    let a = Attrs::new(
        line,
        tokens,
        &["k", "s", "p", "in", "out", "g", "bias", "bn"],
    )?;
    let n = if three_d { 3 } else { 2 };
    let k = a.axes("k", n, None)?;
    let s = a.axes("s", n, Some(1))?;
    let p = a.axes("p", n, Some(0))?;
    let t3 = |v: &[usize]| {
        if three_d {
            (v[0], v[1], v[2])
        } else {
            (1, v[0], v[1])
        }
    };
    let mut padding = t3(&p);
    if !three_d {
        padding.0 = 0;
    }
    let c = ConvEntry {
        kernel: t3(&k),
        stride: t3(&s),
        padding,
        in_channels: a.usize("in")?,
        out_channels: a.usize("out")?,
        groups: a.usize_opt("g")?.unwrap_or(1),
        bias: a.flag("bias", false)?,
        batch_norm: a.flag("bn", true)?,
    };
    if c.out_channels == 0 {
        return Err(GsmError::parse(line, "out must be >= 1"));
    }
    Ok(if three_d {
        Entry::Conv3d(c)
    } else {
        Entry::Conv2d(c)
    })
}

fn parse_pool(line: usize, tokens: &[&str]) -> Result<Entry> {
    let (kind, rest) = tokens
        .split_first()
        .ok_or_else(|| GsmError::parse(line, "pool needs a kind (max, avg, global_avg)"))?;
    let kind = match *kind {
        "max" => SpecPoolKind::Max,
        "avg" => SpecPoolKind::Avg,
        "global_avg" => SpecPoolKind::GlobalAvg,
        other => {
            return Err(GsmError::parse(
                line,
                format!("unknown pool kind '{other}'"),
            ))
        }
    };
    if kind == SpecPoolKind::GlobalAvg {
        Attrs::new(line, rest, &[])?;
        return Ok(Entry::Pool(PoolEntry {
            kind,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
        }));
    }
    let a = Attrs::new(line, rest, &["k", "s", "p"])?;
    let k = a.axes("k", 2, None)?;
    let s = a.axes("s", 2, Some(1))?;
    let p = a.axes("p", 2, Some(0))?;
    Ok(Entry::Pool(PoolEntry {
        kind,
        kernel: (k[0], k[1]),
        stride: (s[0], s[1]),
        padding: (p[0], p[1]),
    }))
}

struct OpenBlock {
    input: Geometry,
    branches: Vec<(Vec<Entry>, Geometry)>,
    current: Option<(Vec<Entry>, Geometry)>,
}

/// Parses and validates a spec; errors carry the 1-based line number.
pub fn parse_archspec(text: &str) -> Result<ArchSpec> {
    let mut input: Option<Geometry> = None;
    let mut geom = Geometry {
        channels: 0,
        frames: 0,
        height: 0,
        width: 0,
    };
    let mut entries = Vec::new();
    let mut stack: Vec<OpenBlock> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        last_line = line;
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let (head, rest) = tokens.split_first().expect("non-empty line");

        if input.is_none() {
            if *head != "input" {
                return Err(GsmError::parse(line, "first entry must be 'input C T H W'"));
            }
            let nums: Vec<usize> = rest
                .iter()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| GsmError::parse(line, "input extents must be unsigned integers"))?;
            if nums.len() != 4 || nums.contains(&0) {
                return Err(GsmError::parse(
                    line,
                    "input needs four positive extents: C T H W",
                ));
            }
            let g = Geometry {
                channels: nums[0],
                frames: nums[1],
                height: nums[2],
                width: nums[3],
            };
            input = Some(g);
            geom = g;
            continue;
        }

        if *head == "inception" {
            let verb = rest.first().copied().unwrap_or("");
            match verb {
                "begin" => {
                    if rest.len() > 1 {
                        return Err(GsmError::parse(
                            line,
                            "unexpected tokens after 'inception begin'",
                        ));
                    }
                    let input = match stack.last() {
                        None => geom,
                        Some(b) => {
                            b.current
                                .as_ref()
                                .ok_or_else(|| {
                                    GsmError::parse(line, "nested block before 'inception branch'")
                                })?
                                .1
                        }
                    };
                    stack.push(OpenBlock {
                        input,
                        branches: Vec::new(),
                        current: None,
                    });
                }
                "branch" => {
                    let b = stack.last_mut().ok_or_else(|| {
                        GsmError::parse(line, "'inception branch' outside a block")
                    })?;
                    if let Some(done) = b.current.take() {
                        b.branches.push(done);
                    }
                    b.current = Some((Vec::new(), b.input));
                }
                "end" => {
                    let mut b = stack
                        .pop()
                        .ok_or_else(|| GsmError::parse(line, "'inception end' without 'begin'"))?;
                    if let Some(done) = b.current.take() {
                        b.branches.push(done);
                    }
                    let a = Attrs::new(line, &rest[1..], &["out"])?;
                    let declared = a.usize_opt("out")?;
                    let outs: Vec<Geometry> = b.branches.iter().map(|(_, g)| *g).collect();
                    let g =
                        concat_geometry(&outs, declared).map_err(|m| GsmError::parse(line, m))?;
                    let entry = Entry::Inception(InceptionEntry {
                        branches: b.branches.into_iter().map(|(es, _)| es).collect(),
                        out_channels: g.channels,
                    });
                    match stack.last_mut() {
                        // a parent's current branch exists: it was checked at 'begin'
                        Some(parent) => {
                            let (es, pg) = parent.current.as_mut().expect("checked at begin");
                            es.push(entry);
                            *pg = g;
                        }
                        None => {
                            entries.push(entry);
                            geom = g;
                        }
                    }
                }
                other => {
                    return Err(GsmError::parse(
                        line,
                        format!("unknown inception directive '{other}' (begin, branch, end)"),
                    ))
                }
            }
            continue;
        }

        let entry = match *head {
            "conv2d" => parse_conv(line, rest, false)?,
            "conv3d" => parse_conv(line, rest, true)?,
            "pool" => parse_pool(line, rest)?,
            "linear" => {
                let a = Attrs::new(line, rest, &["in", "out"])?;
                Entry::Linear {
                    in_features: a.usize("in")?,
                    out_features: a.usize("out")?,
                }
            }
            "gsm" => {
                let a = Attrs::new(line, rest, &["c"])?;
                Entry::Gsm {
                    channels: a.usize("c")?,
                }
            }
            "input" => return Err(GsmError::parse(line, "duplicate 'input' line")),
            other => {
                return Err(GsmError::parse(
                    line,
                    format!("unknown entry kind '{other}'"),
                ))
            }
        };

        match stack.last_mut() {
            Some(b) => {
                let (es, g) = b.current.as_mut().ok_or_else(|| {
                    GsmError::parse(line, "layer inside a block before 'inception branch'")
                })?;
                *g = entry
                    .output_geometry(*g)
                    .map_err(|m| GsmError::parse(line, m))?;
                es.push(entry);
            }
            None => {
                geom = entry
                    .output_geometry(geom)
                    .map_err(|m| GsmError::parse(line, m))?;
                entries.push(entry);
            }
        }
    }

    if !stack.is_empty() {
        return Err(GsmError::parse(last_line, "unterminated inception block"));
    }
    let input = input.ok_or_else(|| GsmError::parse(last_line.max(1), "missing 'input' line"))?;
    Ok(ArchSpec { input, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec() {
        let s =
            parse_archspec("# tiny\ninput 3 8 32 32\nconv2d k=3x3 s=1 p=1 in=3 out=8\n").unwrap();
        assert_eq!(s.entries.len(), 1);
        assert_eq!(
            s.output_geometry(8).unwrap(),
            Geometry {
                channels: 8,
                frames: 8,
                height: 32,
                width: 32
            }
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_archspec("input 3 1 8 8\nconv2d k=3x3 in=4 out=8\n").unwrap_err();
        assert!(matches!(e, GsmError::Parse { line: 2, .. }), "{e}");
        let e = parse_archspec("input 3 1 8 8\n\nfrobnicate x=1\n").unwrap_err();
        assert!(matches!(e, GsmError::Parse { line: 3, .. }), "{e}");
        let e = parse_archspec("input 3 1 8 8\nconv2d k=9x9 in=3 out=8\n").unwrap_err();
        assert!(matches!(e, GsmError::Parse { line: 2, .. }), "{e}");
        let e = parse_archspec("input 4 1 8 8\ngsm c=3\n").unwrap_err();
        assert!(matches!(e, GsmError::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn mismatched_concat_rejected_at_end_line() {
        let text = "input 8 1 8 8\ninception begin\ninception branch\nconv2d k=1x1 in=8 out=4\ninception branch\nconv2d k=1x1 in=8 out=6\ninception end out=12\n";
        let e = parse_archspec(text).unwrap_err();
        assert!(matches!(e, GsmError::Parse { line: 7, .. }), "{e}");
        let ok = parse_archspec(&text.replace("out=12", "out=10")).unwrap();
        assert_eq!(ok.output_geometry(1).unwrap().channels, 10);
    }

    #[test]
    fn nested_blocks() {
        let text = "input 8 1 4 4\ninception begin\ninception branch\nconv2d k=1x1 in=8 out=4\ninception begin\ninception branch\nconv2d k=1x3 p=0x1 in=4 out=4\ninception branch\nconv2d k=3x1 p=1x0 in=4 out=4\ninception end out=8\ninception branch\ngsm c=8\ninception end out=16\n";
        let s = parse_archspec(text).unwrap();
        assert_eq!(s.output_geometry(1).unwrap().channels, 16);
        assert_eq!(parse_archspec(&s.serialize()).unwrap(), s);
        assert_eq!(s.gsm_count(), 1);
        let e = parse_archspec("input 8 1 4 4\ninception begin\ninception begin\n").unwrap_err();
        assert!(matches!(e, GsmError::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn serialize_is_a_fixed_point() {
        let text = "input 3 8 32 32\nconv2d k=3x3 s=2 p=1 in=3 out=16 bias=1\npool max k=3 s=2 p=1\ninception begin\ninception branch\nconv2d k=1x1 in=16 out=8\ninception branch\npool avg k=3x3 s=1 p=1\nconv2d k=1x1 in=16 out=8 bn=0\ngsm c=8\ninception end\nconv3d k=3x1x1 p=1x0x0 in=16 out=16\npool global_avg\nlinear in=16 out=2\n";
        let a = parse_archspec(text).unwrap();
        let b = parse_archspec(&a.serialize()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.serialize(), b.serialize());
        assert_eq!(a.inception_blocks().next().unwrap().gsm_branch(), Some(1));
    }
}
