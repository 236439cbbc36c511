//! Per-pixel forgetting events and the confidence-weighted fusion of the
//! two initial predictions.
//!
//! A pixel is *recognized* at an epoch when its prediction lies within
//! `delta` of the noisy label. Every recognized-to-unrecognized transition
//! between consecutive epochs is one forgetting event; the cumulative count
//! `G` turns into a confidence weight `M = 2 / (1 + exp(a G^2))`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradcore::serialize::{read_all, write_tensor};
use crate::gradcore::{GradError, Graph, ParameterSet, Real, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForgettingError {
    #[error("no forgetting state for sample `{0}`")]
    UnknownSample(String),
    #[error("sample `{id}`: map has {found} pixels, state expects {expected}")]
    Shape { id: String, expected: usize, found: usize },
    #[error("invalid forgetting config: {0}")]
    Config(String),
    #[error("forgetting state: {0}")]
    Format(String),
}

impl From<GradError> for ForgettingError {
    fn from(e: GradError) -> Self {
        ForgettingError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ForgettingError>;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ForgettingConfig {
    /// Margin on `|s - y|` under which a pixel counts as recognized.
    pub delta: f64,
    /// Descent coefficient of the confidence weight.
    pub a: f64,
}

impl Default for ForgettingConfig {
    fn default() -> Self {
        Self { delta: 0.3, a: 0.04 }
    }
}

impl ForgettingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ForgettingError::Config(format!("delta {} outside (0, 1)", self.delta)));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(ForgettingError::Config(format!("a {} must be positive", self.a)));
        }
        Ok(())
    }
}

/// `T = 1` where `|s - y| <= delta`. Labels are binarized at 0.5.
pub fn transform_matrix<T: Real>(s: &[T], y: &[T], delta: f64) -> Vec<u8> {
    s.iter()
        .zip(y)
        .map(|(&p, &l)| {
            let l = if l.as_f64() >= 0.5 { 1.0 } else { 0.0 };
            ((p.as_f64() - l).abs() <= delta) as u8
        })
        .collect()
}

/// `2 / (1 + exp(a g^2))`, saturating to 0 instead of overflowing.
pub fn confidence_weight(g: u32, a: f64) -> f64 {
    let x = a * (g as f64) * (g as f64);
    if x > 700.0 {
        // exp(-x) underflows long before this matters.
        return 2.0 * (-x).exp();
    }
    2.0 / (1.0 + x.exp())
}

pub fn confidence_map(g: &[u32], a: f64) -> Vec<f64> {
    g.iter().map(|&v| confidence_weight(v, a)).collect()
}

/// Recognition state of one prediction stream of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState {
    /// Last transformation matrix; empty before the first presentation.
    pub t: Vec<u8>,
    /// Cumulative forgetting counts.
    pub g: Vec<u32>,
    /// Epoch of the first `T = 1`, per pixel.
    pub first_learn: Vec<Option<u32>>,
}

impl StreamState {
    fn new(pixels: usize) -> Self {
        Self {
            t: Vec::new(),
            g: vec![0; pixels],
            first_learn: vec![None; pixels],
        }
    }

    /// Returns the number of new forgetting events.
    fn update(&mut self, t_new: Vec<u8>, epoch: u32) -> u64 {
        let mut events = 0;
        if !self.t.is_empty() {
            for ((g, &old), &new) in self.g.iter_mut().zip(&self.t).zip(&t_new) {
                if new < old {
                    *g += 1;
                    events += 1;
                }
            }
        }
        for (fl, &new) in self.first_learn.iter_mut().zip(&t_new) {
            if new == 1 && fl.is_none() {
                *fl = Some(epoch);
            }
        }
        self.t = t_new;
        events
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleState {
    pub focal: StreamState,
    pub all_focus: StreamState,
    /// Epoch of the most recent update.
    pub epoch: Option<u32>,
}

/// Forgetting bookkeeping for exactly the training-set ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ForgettingState {
    pub height: usize,
    pub width: usize,
    samples: BTreeMap<String, SampleState>,
}

/// Events produced by one update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateEvents {
    pub focal: u64,
    pub all_focus: u64,
}

impl ForgettingState {
    pub fn new<'a>(ids: impl IntoIterator<Item = &'a str>, height: usize, width: usize) -> Self {
        let n = height * width;
        let samples = ids
            .into_iter()
            .map(|id| {
                (
                    id.to_string(),
                    SampleState {
                        focal: StreamState::new(n),
                        all_focus: StreamState::new(n),
                        epoch: None,
                    },
                )
            })
            .collect();
        Self { height, width, samples }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.keys().map(String::as_str)
    }

    pub fn get(&self, id: &str) -> Result<&SampleState> {
        self.samples.get(id).ok_or_else(|| ForgettingError::UnknownSample(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SampleState)> {
        self.samples.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Replace both streams' transformation matrices with this epoch's and
    /// count 1 -> 0 transitions. The first presentation only records `T`.
    pub fn update(&mut self, id: &str, epoch: u32, t_focal: Vec<u8>, t_all_focus: Vec<u8>) -> Result<UpdateEvents> {
        let n = self.pixels();
        for t in [&t_focal, &t_all_focus] {
            if t.len() != n {
                return Err(ForgettingError::Shape {
                    id: id.to_string(),
                    expected: n,
                    found: t.len(),
                });
            }
        }
        let s = self.samples.get_mut(id).ok_or_else(|| ForgettingError::UnknownSample(id.to_string()))?;
        let focal = s.focal.update(t_focal, epoch);
        let all_focus = s.all_focus.update(t_all_focus, epoch);
        s.epoch = Some(epoch);
        Ok(UpdateEvents { focal, all_focus })
    }

    /// Confidence weights `(M_f, M_r)` of a sample, recomputed from `G`.
    pub fn weights(&self, id: &str, a: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.get(id)?;
        Ok((confidence_map(&s.focal.g, a), confidence_map(&s.all_focus.g, a)))
    }

    /// `[B, 1, H, W]` weight tensors for a batch of ids.
    pub fn batch_weights<T: Real>(&self, ids: &[&str], a: f64) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = self.pixels();
        let mut mf = Vec::with_capacity(ids.len() * n);
        let mut mr = Vec::with_capacity(ids.len() * n);
        for id in ids {
            let (f, r) = self.weights(id, a)?;
            mf.extend(f.into_iter().map(T::from_f64));
            mr.extend(r.into_iter().map(T::from_f64));
        }
        let shape = [ids.len(), 1, self.height, self.width];
        Ok((Tensor::from_vec(&shape, mf)?, Tensor::from_vec(&shape, mr)?))
    }

    pub fn total_events(&self) -> u64 {
        self.samples
            .values()
            .flat_map(|s| s.focal.g.iter().chain(&s.all_focus.g))
            .map(|&g| g as u64)
            .sum()
    }

    /// Write every map as a tensor record named `<id>/<field>`. Unset
    /// entries (`T` before the first update, unlearned pixels) are stored
    /// as -1.
    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        let dims = Tensor::from_vec(&[2], vec![self.height as f32, self.width as f32])?;
        write_tensor(out, "dims", &dims)?;
        let shape = [self.height, self.width];
        for (id, s) in &self.samples {
            let epoch = s.epoch.map_or(-1.0, |e| e as f32);
            write_tensor(out, &format!("{id}/epoch"), &Tensor::from_vec(&[1], vec![epoch])?)?;
            for (tag, st) in [("f", &s.focal), ("r", &s.all_focus)] {
                let t = if st.t.is_empty() {
                    vec![-1.0; self.pixels()]
                } else {
                    st.t.iter().map(|&v| v as f32).collect()
                };
                write_tensor(out, &format!("{id}/{tag}.t"), &Tensor::from_vec(&shape, t)?)?;
                let g = st.g.iter().map(|&v| v as f32).collect();
                write_tensor(out, &format!("{id}/{tag}.g"), &Tensor::from_vec(&shape, g)?)?;
                let fl = st.first_learn.iter().map(|v| v.map_or(-1.0, |e| e as f32)).collect();
                write_tensor(out, &format!("{id}/{tag}.first"), &Tensor::from_vec(&shape, fl)?)?;
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: &mut R) -> Result<Self> {
        let records = read_all(input)?;
        let bad = |m: String| ForgettingError::Format(m);
        let mut it = records.into_iter();
        let (name, dims) = it.next().ok_or_else(|| bad("empty state".into()))?;
        if name != "dims" || dims.len() != 2 {
            return Err(bad("missing dims record".into()));
        }
        let (height, width) = (dims.data()[0] as usize, dims.data()[1] as usize);
        let n = height * width;
        let mut state = Self {
            height,
            width,
            samples: BTreeMap::new(),
        };
        let rest: Vec<_> = it.collect();
        for chunk in rest.chunks(7) {
            if chunk.len() != 7 {
                return Err(bad("truncated sample record".into()));
            }
            let id = chunk[0]
                .0
                .strip_suffix("/epoch")
                .ok_or_else(|| bad(format!("unexpected record `{}`", chunk[0].0)))?
                .to_string();
            let epoch = chunk[0].1.data().first().copied().unwrap_or(-1.0);
            let mut streams = Vec::new();
            for (j, tag) in ["f", "r"].iter().enumerate() {
                let rec = &chunk[1 + 3 * j..4 + 3 * j];
                for (r, field) in rec.iter().zip(["t", "g", "first"]) {
                    if r.0 != format!("{id}/{tag}.{field}") || r.1.len() != n {
                        return Err(bad(format!("unexpected record `{}` for sample `{id}`", r.0)));
                    }
                }
                let t: Vec<u8> = if rec[0].1.data().iter().all(|&v| v < 0.0) {
                    Vec::new()
                } else {
                    rec[0].1.data().iter().map(|&v| (v > 0.5) as u8).collect()
                };
                streams.push(StreamState {
                    t,
                    g: rec[1].1.data().iter().map(|&v| v as u32).collect(),
                    first_learn: rec[2].1.data().iter().map(|&v| (v >= 0.0).then_some(v as u32)).collect(),
                });
            }
            let all_focus = streams.pop().expect("two streams");
            let focal = streams.pop().expect("two streams");
            state.samples.insert(
                id,
                SampleState {
                    focal,
                    all_focus,
                    epoch: (epoch >= 0.0).then_some(epoch as u32),
                },
            );
        }
        Ok(state)
    }
}

/// `s_i = sigmoid(Up(w * [M_f s_f; M_r s_r] + b))` with a 3x3 convolution
/// named `fuse`. The weights are constants: no gradient reaches `G`.
pub fn guided_fuse<T: Real>(
    g: &mut Graph<T>,
    params: &ParameterSet<T>,
    s_f: Var,
    s_r: Var,
    m_f: Tensor<T>,
    m_r: Tensor<T>,
    out_hw: (usize, usize),
) -> crate::gradcore::Result<Var> {
    let mf = g.constant(m_f);
    let mr = g.constant(m_r);
    let wf = g.mul(s_f, mf)?;
    let wr = g.mul(s_r, mr)?;
    let c = g.concat(&[wf, wr])?;
    let w = g.param(params, "fuse.w")?;
    let b = g.param(params, "fuse.b")?;
    let z = g.conv2d(c, w, Some(b), 1, 1)?;
    let up = g.upsample(z, out_hw.0, out_hw.1)?;
    g.sigmoid(up)
}
