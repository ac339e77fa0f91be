//! Order-sensitive synthetic video tasks.
//!
//! Every pair holds a clip and its exact time-reversal with opposite labels,
//! so both classes share the same frame multiset and only frame order
//! separates them.

use crate::binfmt::{put_tensor, Reader};
use crate::error::{GsmError, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const SAMPLE_MAGIC: &[u8; 4] = b"GSMV";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    /// A square sweeps left to right (class 0) or right to left (class 1).
    Direction,
    /// A square grows (class 0) or shrinks (class 1).
    GrowShrink,
}

impl std::str::FromStr for SyntheticTask {
    type Err = GsmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direction" => Ok(SyntheticTask::Direction),
            "grow-shrink" | "grow_shrink" | "growshrink" => Ok(SyntheticTask::GrowShrink),
            other => Err(GsmError::InvalidArgument(format!(
                "unknown task '{other}' (direction, grow-shrink)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub task: SyntheticTask,
    pub frames: usize,
    /// Frame height and width.
    pub size: usize,
    /// Square side (Direction) or final side (GrowShrink).
    pub object_size: usize,
    pub noise_sigma: f64,
    pub per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            task: SyntheticTask::Direction,
            frames: 8,
            size: 32,
            object_size: 6,
            noise_sigma: 0.05,
            per_class: 500,
            seed: 0,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GsmError::Geometry(m));
        if self.frames < 2 {
            return bad(format!("frames = {} (need >= 2)", self.frames));
        }
        if self.size < 8 {
            return bad(format!("size = {} (need >= 8)", self.size));
        }
        if self.object_size == 0 || self.object_size >= self.size {
            return bad(format!(
                "object size {} does not fit a {}x{} frame with room to move",
                self.object_size, self.size, self.size
            ));
        }
        if self.task == SyntheticTask::GrowShrink && self.object_size < 2 {
            return bad("grow-shrink needs object size >= 2".into());
        }
        if self.per_class == 0 {
            return Err(GsmError::InvalidArgument("per_class must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(GsmError::InvalidArgument(format!(
                "noise sigma {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// `[3, T, S, S]`.
    pub clip: Tensor<f32>,
    pub label: usize,
    pub pair_id: usize,
    pub split: Split,
}

/// Per-channel statistics of the training clips.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for NormStats {
    fn default() -> Self {
        NormStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SyntheticSample>,
    pub stats: NormStats,
    pub classes: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&SyntheticSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn train(&self) -> Vec<&SyntheticSample> {
        self.split(Split::Train)
    }

    pub fn test(&self) -> Vec<&SyntheticSample> {
        self.split(Split::Test)
    }

    /// `(frames, height, width)` shared by every clip.
    pub fn clip_geometry(&self) -> Option<(usize, usize, usize)> {
        self.samples.first().map(|s| {
            let d = s.clip.shape();
            (d[1], d[2], d[3])
        })
    }
}

fn paint(
    clip: &mut [f32],
    spec: &SyntheticTaskSpec,
    t: usize,
    y0: usize,
    x0: usize,
    side: usize,
    color: [f32; 3],
) {
    let s = spec.size;
    let plane = s * s;
    for (c, &v) in color.iter().enumerate() {
        let base = (c * spec.frames + t) * plane;
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                clip[base + y * s + x] = v;
            }
        }
    }
}

/// Class-0 clip of one pair; the class-1 twin is its time-reversal.
fn render_forward(spec: &SyntheticTaskSpec, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let (t_len, s, obj) = (spec.frames, spec.size, spec.object_size);
    let mut clip = vec![0.0f32; 3 * t_len * s * s];
    let color = [
        rng.gen_range(0.5f32..1.0),
        rng.gen_range(0.5f32..1.0),
        rng.gen_range(0.5f32..1.0),
    ];
    let last = (t_len - 1) as f64;
    match spec.task {
        SyntheticTask::Direction => {
            let y0 = rng.gen_range(0..=s - obj);
            let span = (s - obj) as f64;
            for t in 0..t_len {
                let x0 = (span * t as f64 / last).round() as usize;
                paint(&mut clip, spec, t, y0, x0, obj, color);
            }
        }
        SyntheticTask::GrowShrink => {
            let y0 = rng.gen_range(0..=s - obj);
            let x0 = rng.gen_range(0..=s - obj);
            for t in 0..t_len {
                let side = 1 + ((obj - 1) as f64 * t as f64 / last).round() as usize;
                let off = (obj - side) / 2;
                paint(&mut clip, spec, t, y0 + off, x0 + off, side, color);
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        for v in clip.iter_mut() {
            *v += normal.sample(rng) as f32;
        }
    }
    Tensor::new(&[3, t_len, s, s], clip).expect("extents are consistent")
}

fn compute_stats(samples: &[SyntheticSample]) -> NormStats {
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    let mut count = 0f64;
    for s in samples.iter().filter(|s| s.split == Split::Train) {
        let per_c = s.clip.numel() / 3;
        for (c, chunk) in s.clip.data().chunks(per_c).enumerate() {
            for &v in chunk {
                sum[c] += v as f64;
                sq[c] += (v as f64) * (v as f64);
            }
        }
        count += per_c as f64;
    }
    let mut stats = NormStats::default();
    if count > 0.0 {
        for c in 0..3 {
            let m = sum[c] / count;
            stats.mean[c] = m as f32;
            stats.std[c] = ((sq[c] / count - m * m).max(0.0).sqrt().max(1e-6)) as f32;
        }
    }
    stats
}

/// Pure function of `spec`: the same spec yields a bit-identical dataset.
pub fn generate(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let pairs = spec.per_class;
    let mut order: Vec<usize> = (0..pairs).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = ((pairs as f64) * TRAIN_FRACTION).round() as usize;
    let mut split = vec![Split::Test; pairs];
    for &p in &order[..n_train] {
        split[p] = Split::Train;
    }

    let clips: Vec<Tensor<f32>> = (0..pairs)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(p as u64 + 1);
            render_forward(spec, &mut rng)
        })
        .collect();

    let mut samples = Vec::with_capacity(2 * pairs);
    for (p, clip) in clips.into_iter().enumerate() {
        let twin = clip.reverse_time()?;
        samples.push(SyntheticSample {
            clip,
            label: 0,
            pair_id: p,
            split: split[p],
        });
        samples.push(SyntheticSample {
            clip: twin,
            label: 1,
            pair_id: p,
            split: split[p],
        });
    }
    let stats = compute_stats(&samples);
    Ok(Dataset {
        samples,
        stats,
        classes: 2,
    })
}

pub fn sample_file_name(index: usize) -> String {
    format!("sample_{index:05}.gsmv")
}

pub fn encode_sample(clip: &Tensor<f32>) -> Result<Vec<u8>> {
    let mut buf = SAMPLE_MAGIC.to_vec();
    put_tensor(&mut buf, clip)?;
    Ok(buf)
}

pub fn decode_sample(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes);
    r.magic(SAMPLE_MAGIC)?;
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

fn join(v: &[f32; 3]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes one `.gsmv` file per sample plus `manifest.tsv`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = format!(
        "# mean={} std={} classes={}\n",
        join(&dataset.stats.mean),
        join(&dataset.stats.std),
        dataset.classes
    );
    for (i, s) in dataset.samples.iter().enumerate() {
        let name = sample_file_name(i);
        std::fs::write(dir.join(&name), encode_sample(&s.clip)?)?;
        writeln!(
            manifest,
            "{name}\t{}\t{}\t{}",
            s.label,
            s.pair_id,
            s.split.tag()
        )
        .unwrap();
    }
    std::fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

fn parse_triple(line: usize, text: &str) -> Result<[f32; 3]> {
    let parts: Vec<f32> = text
        .split(',')
        .map(|p| p.parse::<f32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| GsmError::parse(line, format!("bad channel statistics '{text}'")))?;
    parts
        .try_into()
        .map_err(|_| GsmError::parse(line, "channel statistics need three values"))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| GsmError::parse(1, "empty manifest"))?;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| GsmError::parse(1, "manifest header must start with '#'"))?;
    let mut stats = NormStats::default();
    let mut classes = 2;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("mean", v)) => stats.mean = parse_triple(1, v)?,
            Some(("std", v)) => stats.std = parse_triple(1, v)?,
            Some(("classes", v)) => {
                classes = v
                    .parse()
                    .map_err(|_| GsmError::parse(1, format!("bad class count '{v}'")))?
            }
            _ => {
                return Err(GsmError::parse(
                    1,
                    format!("unknown header field '{field}'"),
                ))
            }
        }
    }
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let ln = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [file, label, pair, split] = cols[..] else {
            return Err(GsmError::parse(ln, "expected 4 tab-separated columns"));
        };
        if file.contains('/') || file.contains('\\') {
            return Err(GsmError::parse(
                ln,
                format!("file name '{file}' must not contain a path"),
            ));
        }
        let label: usize = label
            .parse()
            .map_err(|_| GsmError::parse(ln, format!("bad label '{label}'")))?;
        if label >= classes {
            return Err(GsmError::parse(
                ln,
                format!("label {label} outside [0, {classes})"),
            ));
        }
        let pair_id = pair
            .parse()
            .map_err(|_| GsmError::parse(ln, format!("bad pair id '{pair}'")))?;
        let split = match split {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(GsmError::parse(ln, format!("bad split tag '{other}'"))),
        };
        let clip = decode_sample(&std::fs::read(dir.join(file))?).map_err(|e| match e {
            GsmError::Format { offset, detail } => GsmError::Format {
                offset,
                detail: format!("{file}: {detail}"),
            },
            other => other,
        })?;
        if clip.rank() != 4 || clip.dim(0) != 3 {
            return Err(GsmError::shape(
                "channel",
                format!("{file} has shape {:?}, expected [3,T,H,W]", clip.shape()),
            ));
        }
        samples.push(SyntheticSample {
            clip,
            label,
            pair_id,
            split,
        });
    }
    if let Some(first) = samples.first() {
        let shape = first.clip.shape().to_vec();
        if let Some(bad) = samples
            .iter()
            .position(|s| s.clip.shape() != shape.as_slice())
        {
            return Err(GsmError::shape(
                "clip",
                format!(
                    "sample {bad} has shape {:?}, first sample {shape:?}",
                    samples[bad].clip.shape()
                ),
            ));
        }
    }
    Ok(Dataset {
        samples,
        stats,
        classes,
    })
}
