//! Cross-item features and the one-hidden-layer scorer.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const FEATURE_DIM: usize = 16;
pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

pub type Features = [f64; FEATURE_DIM];

/// Question side of a pair: every patch, their mean, and the question text vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionContext {
    pub pooled_patch_vec: Vec<f64>,
    pub patch_vecs: Vec<Vec<f64>>,
    pub qtext_vec: Vec<f64>,
}

impl QuestionContext {
    pub fn new(patch_vecs: Vec<Vec<f64>>, qtext_vec: Vec<f64>) -> Result<Self> {
        let dim = qtext_vec.len();
        if patch_vecs.is_empty() {
            return Err(Error::Empty("question context needs at least one patch".into()));
        }
        if let Some(bad) = patch_vecs.iter().find(|p| p.len() != dim) {
            return Err(Error::DimMismatch {
                id: "<patch>".into(),
                expected: dim,
                found: bad.len(),
            });
        }
        let mut pooled = vec![0.0; dim];
        for p in &patch_vecs {
            for (acc, x) in pooled.iter_mut().zip(p) {
                *acc += x;
            }
        }
        let n = patch_vecs.len() as f64;
        pooled.iter_mut().for_each(|x| *x /= n);
        Ok(Self {
            pooled_patch_vec: pooled,
            patch_vecs,
            qtext_vec,
        })
    }

    pub fn dim(&self) -> usize {
        self.qtext_vec.len()
    }
}

/// Candidate side. Text-only candidates have no image vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateContext {
    pub cimg_vec: Option<Vec<f64>>,
    pub ctext_vec: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

fn max_mean_min(values: impl Iterator<Item = f64>) -> [f64; 3] {
    let (mut max, mut min, mut sum, mut n) = (f64::NEG_INFINITY, f64::INFINITY, 0.0, 0usize);
    for v in values {
        max = max.max(v);
        min = min.min(v);
        sum += v;
        n += 1;
    }
    if n == 0 {
        return [0.0; 3];
    }
    [max, sum / n as f64, min]
}

/// Features, in order:
/// `[0..8]` dot and cosine for (pooled, image), (pooled, text), (qtext, image), (qtext, text);
/// `[8..11]` max/mean/min of per-patch dots with the candidate image;
/// `[11..14]` the same with the candidate text;
/// `[14]` retrieval score; `[15]` 1 when the candidate has no image.
pub fn build_features(q: &QuestionContext, c: &CandidateContext, retrieval_score: f64) -> Result<Features> {
    let dim = q.dim();
    let check = |v: &[f64], id: &str| {
        if v.len() == dim {
            Ok(())
        } else {
            Err(Error::DimMismatch {
                id: id.into(),
                expected: dim,
                found: v.len(),
            })
        }
    };
    check(&q.pooled_patch_vec, "<pooled>")?;
    check(&c.ctext_vec, "<candidate text>")?;
    if let Some(img) = &c.cimg_vec {
        check(img, "<candidate image>")?;
    }
    for p in &q.patch_vecs {
        check(p, "<patch>")?;
    }

    let zero = vec![0.0; dim];
    let img = c.cimg_vec.as_deref().unwrap_or(&zero);
    let text = c.ctext_vec.as_slice();
    let mut f = [0.0; FEATURE_DIM];
    let pairs = [
        (&q.pooled_patch_vec, img),
        (&q.pooled_patch_vec, text),
        (&q.qtext_vec, img),
        (&q.qtext_vec, text),
    ];
    for (k, (a, b)) in pairs.iter().enumerate() {
        f[2 * k] = dot(a, b);
        f[2 * k + 1] = cosine(a, b);
    }
    f[8..11].copy_from_slice(&max_mean_min(q.patch_vecs.iter().map(|p| dot(p, img))));
    f[11..14].copy_from_slice(&max_mean_min(q.patch_vecs.iter().map(|p| dot(p, text))));
    f[14] = retrieval_score;
    f[15] = if c.cimg_vec.is_none() { 1.0 } else { 0.0 };
    Ok(f)
}

/// `score = w2 · tanh(W1 f + b1) + b2`, parameters stored flat as
/// `[W1 (row-major, hidden × feature), b1, w2, b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankerModel {
    feature_dim: usize,
    hidden_width: usize,
    seed: u64,
    params: Vec<f64>,
}

impl RerankerModel {
    /// Uniform(±1/sqrt(fan_in)) weights, zero biases.
    pub fn init(hidden_width: usize, seed: u64) -> Result<Self> {
        if hidden_width == 0 {
            return Err(Error::InvalidConfig("hidden_width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self {
            feature_dim: FEATURE_DIM,
            hidden_width,
            seed,
            params: vec![0.0; Self::param_count(FEATURE_DIM, hidden_width)],
        };
        let a1 = 1.0 / (FEATURE_DIM as f64).sqrt();
        for w in model.w1_mut() {
            *w = rng.random_range(-a1..a1);
        }
        let a2 = 1.0 / (hidden_width as f64).sqrt();
        let w2 = model.hidden_width * (model.feature_dim + 1);
        for w in &mut model.params[w2..w2 + hidden_width] {
            *w = rng.random_range(-a2..a2);
        }
        Ok(model)
    }

    pub fn from_parts(
        hidden_width: usize,
        seed: u64,
        w1: &[Vec<f64>],
        b1: &[f64],
        w2: &[f64],
        b2: f64,
    ) -> Result<Self> {
        let shape_err = |what: &str| Error::InvalidArgument(format!("reranker {what} has wrong shape"));
        if w1.len() != hidden_width || w1.iter().any(|r| r.len() != FEATURE_DIM) {
            return Err(shape_err("w1"));
        }
        if b1.len() != hidden_width {
            return Err(shape_err("b1"));
        }
        if w2.len() != hidden_width {
            return Err(shape_err("w2"));
        }
        let mut params: Vec<f64> = w1.iter().flatten().copied().collect();
        params.extend_from_slice(b1);
        params.extend_from_slice(w2);
        params.push(b2);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(
                "reranker parameters must be finite".into(),
            ));
        }
        Ok(Self {
            feature_dim: FEATURE_DIM,
            hidden_width,
            seed,
            params,
        })
    }

    pub fn param_count(feature_dim: usize, hidden_width: usize) -> usize {
        hidden_width * feature_dim + 2 * hidden_width + 1
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w1_mut(&mut self) -> &mut [f64] {
        let n = self.hidden_width * self.feature_dim;
        &mut self.params[..n]
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], f64) {
        let h = self.hidden_width;
        let n1 = h * self.feature_dim;
        (
            &self.params[..n1],
            &self.params[n1..n1 + h],
            &self.params[n1 + h..n1 + 2 * h],
            self.params[n1 + 2 * h],
        )
    }

    pub fn b2(&self) -> f64 {
        self.split().3
    }

    fn check_len(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::DimMismatch {
                id: "<features>".into(),
                expected: self.feature_dim,
                found: features.len(),
            });
        }
        Ok(())
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        self.check_len(features)?;
        Ok(self.forward(features, &mut vec![0.0; self.hidden_width]))
    }

    fn forward(&self, f: &[f64], hidden: &mut [f64]) -> f64 {
        let (w1, b1, w2, b2) = self.split();
        let mut out = b2;
        for j in 0..self.hidden_width {
            let row = &w1[j * self.feature_dim..(j + 1) * self.feature_dim];
            let z = b1[j] + dot(row, f);
            hidden[j] = z.tanh();
            out += w2[j] * hidden[j];
        }
        out
    }

    /// Adds `upstream * ∂score/∂params` into `grad` and returns the score.
    pub fn accumulate_grad(&self, features: &[f64], upstream: f64, grad: &mut [f64]) -> Result<f64> {
        self.check_len(features)?;
        if grad.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: grad.len(),
                right: self.params.len(),
            });
        }
        let mut hidden = vec![0.0; self.hidden_width];
        let s = self.forward(features, &mut hidden);
        let (_, _, w2, _) = self.split();
        let (h, d) = (self.hidden_width, self.feature_dim);
        let (g_w1, rest) = grad.split_at_mut(h * d);
        let (g_b1, rest) = rest.split_at_mut(h);
        let (g_w2, g_b2) = rest.split_at_mut(h);
        g_b2[0] += upstream;
        for j in 0..h {
            g_w2[j] += upstream * hidden[j];
            let dz = upstream * w2[j] * (1.0 - hidden[j] * hidden[j]);
            g_b1[j] += dz;
            for (g, x) in g_w1[j * d..(j + 1) * d].iter_mut().zip(features) {
                *g += dz * x;
            }
        }
        Ok(s)
    }

    pub fn to_checkpoint(&self) -> RerankerCheckpoint {
        let (w1, b1, w2, b2) = self.split();
        RerankerCheckpoint {
            feature_dim: self.feature_dim,
            hidden_width: self.hidden_width,
            seed: self.seed,
            w1: w1.chunks(self.feature_dim).map(<[f64]>::to_vec).collect(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2,
        }
    }

    pub fn from_checkpoint(c: &RerankerCheckpoint) -> Result<Self> {
        if c.feature_dim != FEATURE_DIM {
            return Err(Error::InvalidArgument(format!(
                "checkpoint feature_dim {} != {FEATURE_DIM}",
                c.feature_dim
            )));
        }
        Self::from_parts(c.hidden_width, c.seed, &c.w1, &c.b1, &c.w2, c.b2)
    }
}

/// On-disk reranker: shapes plus parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankerCheckpoint {
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

pub fn save_reranker<C: Serialize>(model: &RerankerModel, config: &C, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Out<'a, C> {
        #[serde(flatten)]
        checkpoint: RerankerCheckpoint,
        config: &'a C,
    }
    io::write_json(
        path,
        &Out {
            checkpoint: model.to_checkpoint(),
            config,
        },
    )
}

pub fn load_reranker(path: &Path) -> Result<RerankerModel> {
    let c: RerankerCheckpoint = io::read_json(path)?;
    RerankerModel::from_checkpoint(&c)
}
