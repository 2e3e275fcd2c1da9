//! Synthetic datasets for the four reference models, plus small text loaders.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Result, ScarError};
use crate::rng::{self, Stream};

/// Training data for one of the reference models.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Qp(QpSpec),
    LabeledSparse(LabeledSparse),
    Ratings(RatingTriples),
    Corpus(BagOfWords),
}

impl Dataset {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Dataset::Qp(_) => "qp",
            Dataset::LabeledSparse(_) => "labeled_sparse",
            Dataset::Ratings(_) => "ratings",
            Dataset::Corpus(_) => "corpus",
        }
    }
}

/// `min 0.5 x'Ax - b'x` with `A` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSpec {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl QpSpec {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || b.len() != n {
            return Err(ScarError::structural(format!(
                "QP needs square A and matching b, got {}x{} and {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        let scale = a.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                    return Err(ScarError::argument("QP matrix is not symmetric"));
                }
            }
        }
        if a.clone().cholesky().is_none() {
            return Err(ScarError::argument("QP matrix is not positive definite"));
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.a.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: usize,
    /// Sparse `(index, value)` pairs with strictly increasing indices.
    pub features: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSparse {
    pub dim: usize,
    pub classes: usize,
    pub samples: Vec<Sample>,
}

impl LabeledSparse {
    pub fn new(dim: usize, classes: usize, samples: Vec<Sample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.label >= classes {
                return Err(ScarError::structural(format!(
                    "sample {i} has label {} but only {classes} classes",
                    s.label
                )));
            }
            if let Some((idx, _)) = s.features.iter().find(|(idx, _)| *idx >= dim) {
                return Err(ScarError::structural(format!(
                    "sample {i} has feature index {idx} outside dim {dim}"
                )));
            }
        }
        Ok(Self { dim, classes, samples })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub row: u32,
    pub col: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingTriples {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Rating>,
}

impl RatingTriples {
    pub fn new(rows: usize, cols: usize, entries: Vec<Rating>) -> Result<Self> {
        if let Some(r) = entries
            .iter()
            .find(|r| r.row as usize >= rows || r.col as usize >= cols)
        {
            return Err(ScarError::structural(format!(
                "rating ({}, {}) outside {rows}x{cols}",
                r.row, r.col
            )));
        }
        Ok(Self { rows, cols, entries })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagOfWords {
    pub vocab: usize,
    pub docs: Vec<Vec<u32>>,
}

impl BagOfWords {
    pub fn new(vocab: usize, docs: Vec<Vec<u32>>) -> Result<Self> {
        for (d, doc) in docs.iter().enumerate() {
            if let Some(w) = doc.iter().find(|w| **w as usize >= vocab) {
                return Err(ScarError::structural(format!(
                    "document {d} has token {w} outside vocabulary of {vocab}"
                )));
            }
        }
        Ok(Self { vocab, docs })
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }
}

/// Random SPD quadratic program with eigenvalues log-spaced in
/// `[1, condition_number]`.
pub fn gen_qp(dim: usize, condition_number: f64, seed: u64) -> Result<Dataset> {
    if dim == 0 {
        return Err(ScarError::argument("QP dimension must be at least 1"));
    }
    if !(condition_number >= 1.0) {
        return Err(ScarError::argument("condition number must be >= 1"));
    }
    let mut rng = rng::keyed(seed, Stream::Data, 0);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let g = DMatrix::from_fn(dim, dim, |_, _| normal());
    let b = DVector::from_fn(dim, |_, _| normal());
    let a = if condition_number == 1.0 {
        DMatrix::identity(dim, dim)
    } else {
        let q = g.qr().q();
        let spectrum = DVector::from_iterator(dim, qp_spectrum(dim, condition_number));
        let a = &q * DMatrix::from_diagonal(&spectrum) * q.transpose();
        (&a + a.transpose()) * 0.5
    };
    Ok(Dataset::Qp(QpSpec::new(a, b)?))
}

/// The eigenvalues `gen_qp` plants, ascending.
pub fn qp_spectrum(dim: usize, condition_number: f64) -> impl Iterator<Item = f64> {
    let top = condition_number.ln();
    (0..dim).map(move |i| {
        if dim == 1 {
            1.0
        } else {
            (top * i as f64 / (dim - 1) as f64).exp()
        }
    })
}

/// Gaussian class clusters for multinomial logistic regression. The last
/// feature is a constant 1.0 intercept.
pub fn gen_classification(samples: usize, dim: usize, classes: usize, seed: u64) -> Result<Dataset> {
    gen_classification_with(samples, dim, classes, 2.0, seed)
}

/// As [`gen_classification`] with explicit spacing between class means.
/// Two class means lie `separation` within-class standard deviations apart
/// in expectation (root mean square).
pub fn gen_classification_with(
    samples: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(ScarError::argument("need at least 2 classes"));
    }
    if dim < 2 {
        return Err(ScarError::argument("need at least one feature besides the intercept"));
    }
    let features = dim - 1;
    let mut rng = rng::keyed(seed, Stream::Data, 1);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..features)
                .map(|_| separation * rng.sample::<f64, _>(StandardNormal) / (2.0 * features as f64).sqrt())
                .collect()
        })
        .collect();
    let samples = (0..samples)
        .map(|i| {
            let label = i % classes;
            let mut feats: Vec<(usize, f64)> = means[label]
                .iter()
                .enumerate()
                .map(|(j, m)| (j, m + rng.sample::<f64, _>(StandardNormal)))
                .collect();
            feats.push((features, 1.0));
            Sample { label, features: feats }
        })
        .collect();
    Ok(Dataset::LabeledSparse(LabeledSparse::new(dim, classes, samples)?))
}

/// Planted low-rank ratings `L R^T + noise` observed on a random
/// `density` fraction of cells.
pub fn gen_ratings(rows: usize, cols: usize, rank: usize, density: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if rows == 0 || cols == 0 || rank == 0 {
        return Err(ScarError::argument("rows, cols and rank must be positive"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(ScarError::argument("density must be in (0, 1]"));
    }
    if !(noise >= 0.0) {
        return Err(ScarError::argument("noise must be non-negative"));
    }
    let mut rng = rng::keyed(seed, Stream::Data, 2);
    let left: Vec<f64> = (0..rows * rank).map(|_| rng.random::<f64>()).collect();
    let right: Vec<f64> = (0..cols * rank).map(|_| rng.random::<f64>()).collect();
    let cells = rows * cols;
    let count = ((density * cells as f64).round() as usize).clamp(1, cells);
    let mut chosen = index::sample(&mut rng, cells, count).into_vec();
    chosen.sort_unstable();
    let entries = chosen
        .into_iter()
        .map(|cell| {
            let (i, j) = (cell / cols, cell % cols);
            let planted: f64 = (0..rank).map(|f| left[i * rank + f] * right[j * rank + f]).sum();
            let eps: f64 = if noise > 0.0 {
                noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            Rating {
                row: i as u32,
                col: j as u32,
                value: planted + eps,
            }
        })
        .collect();
    Ok(Dataset::Ratings(RatingTriples::new(rows, cols, entries)?))
}

fn sample_dirichlet(rng: &mut impl Rng, concentration: f64, len: usize) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|d| *d /= total);
    } else {
        draws.iter_mut().for_each(|d| *d = 1.0 / len as f64);
    }
    draws
}

fn sample_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Documents drawn from a planted LDA model with sparse topics.
pub fn gen_corpus(docs: usize, vocab: usize, topics: usize, doc_len: usize, seed: u64) -> Result<Dataset> {
    if vocab == 0 || topics == 0 {
        return Err(ScarError::argument("vocab and topics must be positive"));
    }
    let mut rng = rng::keyed(seed, Stream::Data, 3);
    let phi: Vec<Vec<f64>> = (0..topics).map(|_| sample_dirichlet(&mut rng, 0.1, vocab)).collect();
    let docs = (0..docs)
        .map(|_| {
            let theta = if topics == 1 {
                vec![1.0]
            } else {
                sample_dirichlet(&mut rng, 0.2, topics)
            };
            (0..doc_len)
                .map(|_| {
                    let z = sample_categorical(&mut rng, &theta);
                    sample_categorical(&mut rng, &phi[z]) as u32
                })
                .collect()
        })
        .collect();
    Ok(Dataset::Corpus(BagOfWords::new(vocab, docs)?))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> ScarError {
    ScarError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `label idx:val idx:val ...` lines (0-based indices).
pub fn load_sparse(path: &Path, dim: usize, classes: usize) -> Result<LabeledSparse> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut samples = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let mut fields = line.split_whitespace();
        let Some(label) = fields.next() else {
            continue;
        };
        let label: usize = label
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad label {label:?}")))?;
        if label >= classes {
            return Err(parse_err(path, lineno, format!("label {label} >= {classes} classes")));
        }
        let mut features = Vec::new();
        for field in fields {
            let (idx, val) = field
                .split_once(':')
                .ok_or_else(|| parse_err(path, lineno, format!("expected idx:val, got {field:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad index {idx:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad value {val:?}")))?;
            if idx >= dim {
                return Err(parse_err(path, lineno, format!("index {idx} >= dim {dim}")));
            }
            if features.last().is_some_and(|(prev, _)| *prev >= idx) {
                return Err(parse_err(path, lineno, "indices must be strictly increasing"));
            }
            features.push((idx, val));
        }
        samples.push(Sample { label, features });
    }
    LabeledSparse::new(dim, classes, samples)
}

pub fn write_sparse(path: &Path, data: &LabeledSparse) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for s in &data.samples {
        write!(out, "{}", s.label)?;
        for (idx, val) in &s.features {
            write!(out, " {idx}:{val}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `row,col,value` CSV lines without a header.
pub fn load_ratings(path: &Path, rows: usize, cols: usize) -> Result<RatingTriples> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut entries = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let lineno = n + 1;
        let record = record.map_err(|e| parse_err(path, lineno, e.to_string()))?;
        if record.len() != 3 {
            return Err(parse_err(path, lineno, "expected row,col,value"));
        }
        let row: u32 = record[0].parse().map_err(|_| parse_err(path, lineno, "bad row"))?;
        let col: u32 = record[1].parse().map_err(|_| parse_err(path, lineno, "bad col"))?;
        let value: f64 = record[2].parse().map_err(|_| parse_err(path, lineno, "bad value"))?;
        if row as usize >= rows || col as usize >= cols {
            return Err(parse_err(path, lineno, format!("({row}, {col}) outside {rows}x{cols}")));
        }
        entries.push(Rating { row, col, value });
    }
    RatingTriples::new(rows, cols, entries)
}

pub fn write_ratings(path: &Path, data: &RatingTriples) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in &data.entries {
        writeln!(out, "{},{},{}", r.row, r.col, r.value)?;
    }
    out.flush()?;
    Ok(())
}

/// One document per line of space-separated token ids.
pub fn load_corpus(path: &Path, vocab: usize) -> Result<BagOfWords> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let doc = line
            .split_whitespace()
            .map(|t| {
                let w: u32 = t
                    .parse()
                    .map_err(|_| parse_err(path, n + 1, format!("bad token {t:?}")))?;
                if w as usize >= vocab {
                    return Err(parse_err(path, n + 1, format!("token {w} >= vocab {vocab}")));
                }
                Ok(w)
            })
            .collect::<Result<Vec<u32>>>()?;
        docs.push(doc);
    }
    BagOfWords::new(vocab, docs)
}

pub fn write_corpus(path: &Path, data: &BagOfWords) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for doc in &data.docs {
        let line: Vec<String> = doc.iter().map(u32::to_string).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}
