//! Samples, splits, the synthetic generator, the feature-file format and
//! mini-batching.
//!
//! # Feature file
//!
//! Line-oriented UTF-8 text. The first line is a header:
//!
//! ```text
//! dims <l_t> <d_t> <l_a> <d_a> <l_v> <d_v> range <lo> <hi>
//! ```
//!
//! Every following non-empty line is one sample:
//!
//! ```text
//! <id>|<train|valid|test>|<label>|<text>|<audio>|<vision>
//! ```
//!
//! where each sequence is its rows joined by `;` and each row its values
//! joined by `,`. Numbers use the shortest decimal form that parses back to
//! the identical `f64`, so a write/read cycle is lossless.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

/// Sequence lengths and feature widths per modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqDims {
    pub l_t: usize,
    pub d_t: usize,
    pub l_a: usize,
    pub d_a: usize,
    pub l_v: usize,
    pub d_v: usize,
}

impl SeqDims {
    pub fn validate(&self) -> Result<()> {
        let all = [self.l_t, self.d_t, self.l_a, self.d_a, self.l_v, self.d_v];
        if all.contains(&0) {
            return Err(Error::Validation(format!("dims must be positive: {self:?}")));
        }
        Ok(())
    }

    fn shapes(&self) -> [[usize; 2]; 3] {
        [[self.l_t, self.d_t], [self.l_a, self.d_a], [self.l_v, self.d_v]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySample {
    pub id: String,
    pub text: Tensor,
    pub audio: Tensor,
    pub vision: Tensor,
    pub label: f64,
}

impl ModalitySample {
    pub fn sequences(&self) -> [&Tensor; 3] {
        [&self.text, &self.audio, &self.vision]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Train,
    Valid,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Valid => "valid",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<ModalitySample>,
    pub valid: Vec<ModalitySample>,
    pub test: Vec<ModalitySample>,
    pub range: (f64, f64),
    pub dims: SeqDims,
}

impl DatasetSplits {
    pub fn split(&self, kind: SplitKind) -> &[ModalitySample] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Valid => &self.valid,
            SplitKind::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }

    /// Checks shapes, finiteness, label range, disjoint ids and non-empty
    /// splits.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let (lo, hi) = self.range;
        if lo.partial_cmp(&hi) != Some(Ordering::Less) {
            return Err(Error::Validation(format!("invalid label range [{lo}, {hi}]")));
        }
        let mut seen = BTreeSet::new();
        for kind in [SplitKind::Train, SplitKind::Valid, SplitKind::Test] {
            let split = self.split(kind);
            if split.is_empty() {
                return Err(Error::Schema(format!(
                    "{} split is empty; at least one sample per split is required",
                    kind.name()
                )));
            }
            for s in split {
                if !seen.insert(s.id.as_str()) {
                    return Err(Error::Schema(format!("duplicate sample id {}", s.id)));
                }
                check_sample(s, &self.dims, self.range)?;
            }
        }
        Ok(())
    }
}

fn check_sample(s: &ModalitySample, dims: &SeqDims, range: (f64, f64)) -> Result<()> {
    for (name, seq, [l, d]) in ["text", "audio", "vision"]
        .into_iter()
        .zip(s.sequences())
        .zip(dims.shapes())
        .map(|((n, q), sh)| (n, q, sh))
    {
        if seq.shape() != [l, d] {
            return Err(Error::Schema(format!(
                "sample {}: {name} has shape {:?}, expected [{l}, {d}]",
                s.id,
                seq.shape()
            )));
        }
        if !seq.is_finite() {
            return Err(Error::Validation(format!("sample {}: non-finite {name} value", s.id)));
        }
    }
    if !s.label.is_finite() || s.label < range.0 || s.label > range.1 {
        return Err(Error::Validation(format!(
            "sample {}: label {} outside [{}, {}]",
            s.id, s.label, range.0, range.1
        )));
    }
    Ok(())
}

fn default_temporal_noise() -> f64 {
    0.1
}

fn default_range() -> (f64, f64) {
    (-3.0, 3.0)
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub dims: SeqDims,
    pub latent_dim: usize,
    /// Weight of the shared latent in every time step of every modality.
    pub rho: f64,
    /// Label noise standard deviation.
    pub noise: f64,
    pub seed: u64,
    #[serde(default = "default_range")]
    pub range: (f64, f64),
    /// Standard deviation of per-step observation noise in feature space.
    #[serde(default = "default_temporal_noise")]
    pub temporal_noise: f64,
}

impl SyntheticSpec {
    /// The reference desk-scale spec: 2000 samples, text 8×16, audio and
    /// vision 12×8, 4 latent dims, ρ = 0.8, σ = 0.3.
    pub fn standard(seed: u64) -> Self {
        Self {
            n_samples: 2000,
            dims: SeqDims {
                l_t: 8,
                d_t: 16,
                l_a: 12,
                d_a: 8,
                l_v: 12,
                d_v: 8,
            },
            latent_dim: 4,
            rho: 0.8,
            noise: 0.3,
            seed,
            range: (-3.0, 3.0),
            temporal_noise: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.latent_dim == 0 {
            return Err(Error::Validation("latent_dim must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Validation(format!("rho {} outside [0, 1]", self.rho)));
        }
        if self.noise < 0.0 || self.temporal_noise < 0.0 {
            return Err(Error::Validation("noise levels must be non-negative".into()));
        }
        if self.n_samples < 3 {
            return Err(Error::Validation("need at least 3 samples for three splits".into()));
        }
        if self.range.0.partial_cmp(&self.range.1) != Some(Ordering::Less) {
            return Err(Error::Validation(format!("invalid range {:?}", self.range)));
        }
        Ok(())
    }
}

/// Norm of the label weight vector; keeps most labels inside `[-3, 3]`.
const LABEL_WEIGHT_NORM: f64 = 1.5;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Split sizes 60/10/30 with at least one sample in each.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = ((0.6 * n as f64).round() as usize).max(1);
    let valid = ((0.1 * n as f64).round() as usize).max(1);
    let train = train.min(n.saturating_sub(valid + 1)).max(1);
    (train, valid, n - train - valid)
}

/// Draws a dataset whose three modalities share a latent `z`.
///
/// For each modality, time step `t` holds `(ρ·z + sqrt(1-ρ²)·n_t)·A + c + τ·e_t`
/// with fresh noise `n_t`, `e_t` per step and a fixed random mixing `A`,
/// offset `c`. The label is `clamp(w·z + σ·ξ)` for a fixed random `w`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.latent_dim;
    let mut w = normals(&mut rng, k);
    let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v *= LABEL_WEIGHT_NORM / wn);

    let shapes = spec.dims.shapes();
    let mixing: Vec<(Vec<f64>, Vec<f64>)> = shapes
        .iter()
        .map(|&[_, d]| {
            let a: Vec<f64> = normals(&mut rng, k * d)
                .into_iter()
                .map(|v| v / (k as f64).sqrt())
                .collect();
            let c: Vec<f64> = normals(&mut rng, d).into_iter().map(|v| 0.1 * v).collect();
            (a, c)
        })
        .collect();

    let shared = spec.rho;
    let own = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let z = normals(&mut rng, k);
        let mut seqs = Vec::with_capacity(3);
        for (&[l, d], (a, c)) in shapes.iter().zip(&mixing) {
            let mut data = Vec::with_capacity(l * d);
            for _ in 0..l {
                let latent: Vec<f64> = z
                    .iter()
                    .map(|&zj| shared * zj + own * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect();
                for j in 0..d {
                    let mut v = c[j];
                    for (p, lp) in latent.iter().enumerate() {
                        v += lp * a[p * d + j];
                    }
                    let e: f64 = StandardNormal.sample(&mut rng);
                    data.push(v + spec.temporal_noise * e);
                }
            }
            seqs.push(Tensor::matrix(l, d, data)?);
        }
        let xi: f64 = StandardNormal.sample(&mut rng);
        let raw: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + spec.noise * xi;
        let label = raw.clamp(spec.range.0, spec.range.1);
        let vision = seqs.pop().expect("three");
        let audio = seqs.pop().expect("three");
        let text = seqs.pop().expect("three");
        samples.push(ModalitySample {
            id: format!("s{i:05}"),
            text,
            audio,
            vision,
            label,
        });
    }

    let (n_train, n_valid, _) = split_sizes(spec.n_samples);
    let test = samples.split_off(n_train + n_valid);
    let valid = samples.split_off(n_train);
    let splits = DatasetSplits {
        train: samples,
        valid,
        test,
        range: spec.range,
        dims: spec.dims,
    };
    log::debug!("synthetic splits {:?}", splits.sizes());
    Ok(splits)
}

fn fmt_seq(out: &mut String, t: &Tensor) {
    for i in 0..t.rows() {
        if i > 0 {
            out.push(';');
        }
        for (j, v) in t.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("string write");
        }
    }
}

/// Serialises splits in the feature-file format.
pub fn write_features<W: Write>(splits: &DatasetSplits, mut w: W) -> Result<()> {
    let d = splits.dims;
    writeln!(
        w,
        "dims {} {} {} {} {} {} range {} {}",
        d.l_t, d.d_t, d.l_a, d.d_a, d.l_v, d.d_v, splits.range.0, splits.range.1
    )?;
    let mut line = String::new();
    for kind in [SplitKind::Train, SplitKind::Valid, SplitKind::Test] {
        for s in splits.split(kind) {
            if s.id.contains(['|', '\n']) {
                return Err(Error::Validation(format!("sample id {:?} contains a separator", s.id)));
            }
            line.clear();
            write!(line, "{}|{}|{}|", s.id, kind.name(), s.label).expect("string write");
            fmt_seq(&mut line, &s.text);
            line.push('|');
            fmt_seq(&mut line, &s.audio);
            line.push('|');
            fmt_seq(&mut line, &s.vision);
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_features(splits: &DatasetSplits, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_features(splits, std::io::BufWriter::new(f))
}

fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        detail: format!("bad number {s:?} in {what}"),
    })
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse::<usize>().map_err(|_| Error::Parse {
        line,
        detail: format!("bad integer {s:?} in header"),
    })
}

fn parse_header(text: &str) -> Result<(SeqDims, (f64, f64))> {
    let bad = |detail: &str| Error::Parse {
        line: 1,
        detail: detail.to_string(),
    };
    let tok: Vec<&str> = text.split_whitespace().collect();
    if tok.len() != 10 || tok[0] != "dims" || tok[7] != "range" {
        return Err(bad("expected `dims l_t d_t l_a d_a l_v d_v range lo hi`"));
    }
    let n: Vec<usize> = tok[1..7].iter().map(|s| parse_usize(s, 1)).collect::<Result<_>>()?;
    let dims = SeqDims {
        l_t: n[0],
        d_t: n[1],
        l_a: n[2],
        d_a: n[3],
        l_v: n[4],
        d_v: n[5],
    };
    let lo = parse_f64(tok[8], 1, "range")?;
    let hi = parse_f64(tok[9], 1, "range")?;
    Ok((dims, (lo, hi)))
}

fn parse_seq(text: &str, line: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    text.split(';')
        .map(|row| {
            row.split(',')
                .map(|v| parse_f64(v, line, what))
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

fn seq_tensor(rows: Vec<Vec<f64>>, id: &str, what: &str) -> Result<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Schema(format!("sample {id}: {what} rows have differing widths")));
    }
    Tensor::from_rows(&rows).map_err(|_| Error::Schema(format!("sample {id}: empty {what} sequence")))
}

/// Parses and validates a feature file.
pub fn read_features<R: BufRead>(reader: R) -> Result<DatasetSplits> {
    let mut lines = reader.lines().enumerate();
    let (dims, range) = match lines.next() {
        Some((_, l)) => parse_header(&l?)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                detail: "missing header".into(),
            })
        }
    };
    let mut splits = DatasetSplits {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        range,
        dims,
    };
    for (idx, line) in lines {
        let line = line?;
        let no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 6 {
            return Err(Error::Parse {
                line: no,
                detail: format!("expected 6 `|`-separated fields, found {}", f.len()),
            });
        }
        let id = f[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line: no,
                detail: "empty sample id".into(),
            });
        }
        let label = parse_f64(f[2], no, "label")?;
        let text = seq_tensor(parse_seq(f[3], no, "text")?, &id, "text")?;
        let audio = seq_tensor(parse_seq(f[4], no, "audio")?, &id, "audio")?;
        let vision = seq_tensor(parse_seq(f[5], no, "vision")?, &id, "vision")?;
        let sample = ModalitySample {
            id,
            text,
            audio,
            vision,
            label,
        };
        check_sample(&sample, &dims, range)?;
        match f[1].trim() {
            "train" => splits.train.push(sample),
            "valid" => splits.valid.push(sample),
            "test" => splits.test.push(sample),
            other => {
                return Err(Error::Parse {
                    line: no,
                    detail: format!("unknown split {other:?}"),
                })
            }
        }
    }
    splits.validate()?;
    Ok(splits)
}

pub fn load_features(path: &Path) -> Result<DatasetSplits> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_features(std::io::BufReader::new(f))
}

/// Shuffled index batches covering `0..n` once. The order depends only on
/// `(seed, epoch)`; the last batch may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    idx.shuffle(&mut rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Sample labels as a vector.
pub fn labels(samples: &[ModalitySample]) -> Vec<f64> {
    samples.iter().map(|s| s.label).collect()
}

/// MAE on `eval` of always predicting the mean training label.
pub fn mean_predictor_mae(train: &[ModalitySample], eval: &[ModalitySample]) -> f64 {
    let mean = train.iter().map(|s| s.label).sum::<f64>() / train.len().max(1) as f64;
    eval.iter().map(|s| (s.label - mean).abs()).sum::<f64>() / eval.len().max(1) as f64
}

/// Uniform random draw helper used by tests and tools.
pub fn uniform_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
