//! Cross-scene noise penalty: cross entropy on each sample's own label
//! minus an `alpha`-weighted average over mismatched prediction/label pairs
//! taken from other scenes in the batch. The agreement statistics it is
//! derived from live here too, as diagnostics.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradcore::{GradError, Graph, Real, Tensor, Var};

pub const CE_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("peer pairs need at least {needed} samples, batch has {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("invalid penalty config: {0}")]
    Config(String),
    #[error("empty input")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Graph(#[from] GradError),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PenaltyConfig {
    pub alpha: f64,
    /// Pair budget; each anchor gets `m_l - 1` mismatched pairs.
    pub m_l: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { alpha: 0.2, m_l: 4 }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LossError::Config(format!("alpha {} must be non-negative", self.alpha)));
        }
        if self.m_l < 2 {
            return Err(LossError::Config(format!("m_l {} must be at least 2", self.m_l)));
        }
        Ok(())
    }

    /// Smallest batch from which pairs can be drawn.
    pub fn min_batch(&self) -> usize {
        self.m_l.max(3)
    }
}

fn clamp(p: f64) -> f64 {
    // f64::clamp propagates NaN
    p.clamp(CE_EPS, 1.0 - CE_EPS)
}

/// Summed per-pixel binary cross entropy, probabilities clamped to
/// `[eps, 1 - eps]`.
pub fn cross_entropy<T: Real>(s: &[T], y: &[T]) -> f64 {
    s.iter()
        .zip(y)
        .map(|(&p, &t)| {
            let (p, t) = (clamp(p.as_f64()), t.as_f64());
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}

pub fn cross_entropy_mean<T: Real>(s: &[T], y: &[T]) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    cross_entropy(s, y) / s.len() as f64
}

/// Mismatched pairs for every anchor of a batch: `pairs[i][n] = (p, q)`
/// pairs prediction `p` with label `q`, where `p != q` and neither is `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeerPairs {
    pub pairs: Vec<Vec<(usize, usize)>>,
}

impl PeerPairs {
    /// Draw `m_l - 1` independent ordered pairs per anchor.
    pub fn sample(batch: usize, cfg: &PenaltyConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if batch < cfg.min_batch() {
            return Err(LossError::TooFewSamples {
                needed: cfg.min_batch(),
                found: batch,
            });
        }
        let pairs = (0..batch)
            .map(|i| {
                (0..cfg.m_l - 1)
                    .map(|_| {
                        // uniform over batch \ {i}, then batch \ {i, p}
                        let mut p = rng.random_range(0..batch - 1);
                        if p >= i {
                            p += 1;
                        }
                        let (lo, hi) = (i.min(p), i.max(p));
                        let mut q = rng.random_range(0..batch - 2);
                        if q >= lo {
                            q += 1;
                        }
                        if q >= hi {
                            q += 1;
                        }
                        (p, q)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { pairs })
    }

    pub fn per_anchor(&self) -> usize {
        self.pairs.first().map_or(0, Vec::len)
    }
}

/// Recorded value of the loss and its two parts (all summed over pixels
/// and the batch).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyParts {
    pub total: Var,
    pub matched: Var,
    /// Average mismatched cross entropy, before scaling by `alpha`.
    pub mismatched: Option<Var>,
}

/// `L_t = sum_i CE(s_i, y_i) - alpha/(m_l - 1) sum_i sum_n CE(s_p, y_q)`
/// over `s`, `y` of shape `[B, 1, H, W]`. Gradients flow through every
/// prediction, matched or not. With `alpha = 0` the result is the plain
/// cross-entropy node.
pub fn penalty_loss<T: Real>(
    g: &mut Graph<T>,
    s: Var,
    y: &Tensor<T>,
    pairs: &PeerPairs,
    alpha: f64,
) -> Result<PenaltyParts> {
    if g.value(s).shape() != y.shape() {
        return Err(LossError::Shape(format!("prediction {:?} vs label {:?}", g.value(s).shape(), y.shape())));
    }
    let batch = y.shape()[0];
    let eps = T::from_f64(CE_EPS);
    let matched = g.bce(s, y.clone(), eps)?;
    if alpha == 0.0 {
        return Ok(PenaltyParts {
            total: matched,
            matched,
            mismatched: None,
        });
    }
    let n_pairs = pairs.per_anchor();
    if pairs.pairs.len() != batch || n_pairs == 0 || pairs.pairs.iter().any(|p| p.len() != n_pairs) {
        return Err(LossError::Shape(format!("{} anchors of pairs for a batch of {batch}", pairs.pairs.len())));
    }
    let mut acc: Option<Var> = None;
    for n in 0..n_pairs {
        let rows: Vec<usize> = pairs.pairs.iter().map(|p| p[n].0).collect();
        let labels: Vec<usize> = pairs.pairs.iter().map(|p| p[n].1).collect();
        let sp = g.gather(s, &rows)?;
        let yq: Vec<Tensor<T>> = labels.iter().map(|&q| y.batch_rows(q, 1)).collect();
        let yq = Tensor::stack_rows(&yq.iter().collect::<Vec<_>>())?;
        let ce = g.bce(sp, yq, eps)?;
        acc = Some(match acc {
            None => ce,
            Some(a) => g.add(a, ce)?,
        });
    }
    let mismatched = g.scale(acc.expect("at least one pair"), T::one() / T::from_f64(n_pairs as f64))?;
    let pen = g.scale(mismatched, T::from_f64(alpha))?;
    let total = g.sub(matched, pen)?;
    Ok(PenaltyParts {
        total,
        matched,
        mismatched: Some(mismatched),
    })
}

/// Class index of a binary value: 0 for salient (+1), 1 for background (-1).
fn class(v: f64, threshold: f64) -> usize {
    if v >= threshold {
        0
    } else {
        1
    }
}

/// Empirical agreement statistics between binarized predictions and labels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationStats {
    /// `joint[a][b] = p(s = J_a, y = J_b)`, salient class first.
    pub joint: [[f64; 2]; 2],
    pub p_pred: [f64; 2],
    pub p_label: [f64; 2],
    /// `joint - p_pred p_label^T`.
    pub delta: [[f64; 2]; 2],
    /// `1` where `delta > 0`.
    pub omega: [[u8; 2]; 2],
    pub pixels: usize,
}

impl CorrelationStats {
    /// Score of one (prediction, label) value pair.
    pub fn omega_at(&self, s: f64, y: f64, threshold: f64) -> u8 {
        self.omega[class(s, threshold)][class(y, 0.5)]
    }
}

/// Pixel frequencies over every map of the batch. Predictions are
/// binarized at `threshold`, labels at 0.5.
pub fn estimate_delta<T: Real>(predictions: &[&[T]], labels: &[&[T]], threshold: f64) -> Result<CorrelationStats> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(LossError::Empty);
    }
    let mut counts = [[0u64; 2]; 2];
    let mut pixels = 0usize;
    for (s, y) in predictions.iter().zip(labels) {
        if s.len() != y.len() {
            return Err(LossError::Shape(format!("{} predictions vs {} labels", s.len(), y.len())));
        }
        for (&p, &l) in s.iter().zip(y.iter()) {
            counts[class(p.as_f64(), threshold)][class(l.as_f64(), 0.5)] += 1;
        }
        pixels += s.len();
    }
    if pixels == 0 {
        return Err(LossError::Empty);
    }
    let n = pixels as f64;
    let mut joint = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            joint[a][b] = counts[a][b] as f64 / n;
        }
    }
    let p_pred = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let p_label = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut delta = [[0.0; 2]; 2];
    let mut omega = [[0u8; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            delta[a][b] = joint[a][b] - p_pred[a] * p_label[b];
            omega[a][b] = (delta[a][b] > 0.0) as u8;
        }
    }
    Ok(CorrelationStats {
        joint,
        p_pred,
        p_label,
        delta,
        omega,
        pixels,
    })
}

/// `S = Omega(anchor) - Omega(cross)` and `Psi = Omega(anchor) - alpha Omega(cross)`.
pub fn score_functions(omega_anchor: u8, omega_cross: u8, alpha: f64) -> (f64, f64) {
    let (a, c) = (omega_anchor as f64, omega_cross as f64);
    (a - c, a - alpha * c)
}

/// Mean `S` and `Psi` over the pixels of an anchor and a cross pair.
pub fn mean_scores<T: Real>(
    stats: &CorrelationStats,
    anchor: (&[T], &[T]),
    cross: (&[T], &[T]),
    alpha: f64,
    threshold: f64,
) -> (f64, f64) {
    let n = anchor.0.len().max(1) as f64;
    let mut acc = (0.0, 0.0);
    for i in 0..anchor.0.len() {
        let oa = stats.omega_at(anchor.0[i].as_f64(), anchor.1[i].as_f64(), threshold);
        let oc = stats.omega_at(cross.0[i].as_f64(), cross.1[i].as_f64(), threshold);
        let (s, p) = score_functions(oa, oc, alpha);
        acc.0 += s;
        acc.1 += p;
    }
    (acc.0 / n, acc.1 / n)
}
