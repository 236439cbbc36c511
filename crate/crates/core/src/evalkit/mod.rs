//! Metrics against clean masks, forgetting-event distributions and the
//! per-scene placement of label noise.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::forgetting::ForgettingState;
use crate::synthdata::io::encode_pnm;
use crate::synthdata::{noise_mask, quantize, FocalStackSample, Mask, NoiseMode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub const BETA2: f64 = 0.3;

/// `min(2 mean(s), 1)`.
pub fn adaptive_threshold(s: &[f64]) -> f64 {
    if s.is_empty() {
        return 1.0;
    }
    (2.0 * s.iter().sum::<f64>() / s.len() as f64).min(1.0)
}

/// F-measure of `s` binarized at the adaptive threshold. A pixel is
/// predicted salient when `s >= threshold` and `s > 0`. Returns 0 when
/// either side is empty, 1 when both are.
pub fn f_measure(s: &[f64], y: &Mask, beta2: f64) -> f64 {
    let thr = adaptive_threshold(s);
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (&p, &t) in s.iter().zip(&y.data) {
        let pred = p > 0.0 && p >= thr;
        match (pred, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let (pred_n, true_n) = (tp + fp, tp + fneg);
    if pred_n == 0 || true_n == 0 {
        return (pred_n == 0 && true_n == 0) as u8 as f64;
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / pred_n as f64;
    let r = tp as f64 / true_n as f64;
    (1.0 + beta2) * p * r / (beta2 * p + r)
}

/// Mean absolute error of the continuous map.
pub fn mae(s: &[f64], y: &Mask) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    s.iter().zip(&y.data).map(|(&p, &t)| (p - t as f64).abs()).sum::<f64>() / s.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub id: String,
    pub threshold: f64,
    pub f_measure: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub samples: Vec<SampleMetrics>,
    pub mean_f: f64,
    pub mean_mae: f64,
    pub beta2: f64,
}

impl MetricReport {
    /// Score `(id, prediction)` pairs against the matching clean masks.
    pub fn compute<'a>(predictions: impl IntoIterator<Item = (&'a str, &'a [f64], &'a Mask)>) -> Result<Self> {
        let samples: Vec<SampleMetrics> = predictions
            .into_iter()
            .map(|(id, s, y)| {
                if s.len() != y.len() {
                    return Err(EvalError::Invalid(format!("`{id}`: {} predictions for {} pixels", s.len(), y.len())));
                }
                Ok(SampleMetrics {
                    id: id.to_string(),
                    threshold: adaptive_threshold(s),
                    f_measure: f_measure(s, y, BETA2),
                    mae: mae(s, y),
                })
            })
            .collect::<Result<_>>()?;
        if samples.is_empty() {
            return Err(EvalError::Invalid("no samples to evaluate".into()));
        }
        let n = samples.len() as f64;
        Ok(Self {
            mean_f: samples.iter().map(|m| m.f_measure).sum::<f64>() / n,
            mean_mae: samples.iter().map(|m| m.mae).sum::<f64>() / n,
            samples,
            beta2: BETA2,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One row per sample plus a trailing `mean` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(s)?;
        }
        let mean_thr = self.samples.iter().map(|s| s.threshold).sum::<f64>() / self.samples.len() as f64;
        w.serialize(SampleMetrics {
            id: "mean".into(),
            threshold: mean_thr,
            f_measure: self.mean_f,
            mae: self.mean_mae,
        })?;
        w.flush().map_err(|e| EvalError::Io {
            path: "csv".into(),
            source: e,
        })
    }
}

/// Metrics of the noisy labels themselves against the clean masks.
pub fn label_quality(samples: &[FocalStackSample]) -> Result<MetricReport> {
    let maps: Vec<Vec<f64>> = samples.iter().map(|s| s.noisy.to_f64()).collect();
    MetricReport::compute(samples.iter().zip(&maps).map(|(s, m)| (s.id.as_str(), m.as_slice(), s.clean_mask())))
}

/// Ground truth needed to split tracked pixels.
#[derive(Clone, Debug)]
pub struct NoiseTruth {
    pub id: String,
    /// 1 where the noisy label disagrees with the clean mask.
    pub noise: Mask,
    /// Bounding box of the clean object, `[y0, x0, y1, x1)`.
    pub bbox: Option<[usize; 4]>,
}

impl NoiseTruth {
    pub fn from_sample(s: &FocalStackSample) -> Self {
        Self {
            id: s.id.clone(),
            noise: noise_mask(s.clean_mask(), &s.noisy),
            bbox: bounding_box(s.clean_mask()),
        }
    }
}

pub fn bounding_box(m: &Mask) -> Option<[usize; 4]> {
    let mut b: Option<[usize; 4]> = None;
    for y in 0..m.height {
        for x in 0..m.width {
            if m.get(y, x) {
                let e = b.get_or_insert([y, x, y + 1, x + 1]);
                e[0] = e[0].min(y);
                e[1] = e[1].min(x);
                e[2] = e[2].max(y + 1);
                e[3] = e[3].max(x + 1);
            }
        }
    }
    b
}

pub const EVENT_THRESHOLD: u32 = 3;

/// Forgetting statistics of one pixel population. Fractions are `None`
/// when the population is empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Population {
    pub pixels: u64,
    /// Pixels with more than [`EVENT_THRESHOLD`] events.
    pub frequent: u64,
    pub fraction: Option<f64>,
    pub mean_events: Option<f64>,
    /// Never-learned pixels count as learned one epoch after the last.
    pub mean_first_learn: Option<f64>,
    pub never_learned: u64,
}

#[derive(Default)]
struct Acc {
    pixels: u64,
    frequent: u64,
    events: u64,
    first: u64,
    never: u64,
}

impl Acc {
    fn add(&mut self, g: u32, first: Option<u32>, epochs: u32) {
        self.pixels += 1;
        self.frequent += (g > EVENT_THRESHOLD) as u64;
        self.events += g as u64;
        match first {
            Some(e) => self.first += e as u64,
            None => {
                self.never += 1;
                self.first += epochs as u64;
            }
        }
    }

    fn finish(&self) -> Population {
        let n = self.pixels as f64;
        let some = |v: f64| (self.pixels > 0).then_some(v / n);
        Population {
            pixels: self.pixels,
            frequent: self.frequent,
            fraction: some(self.frequent as f64),
            mean_events: some(self.events as f64),
            mean_first_learn: some(self.first as f64),
            never_learned: self.never,
        }
    }
}

/// Pixel distributions split by whether the label was corrupted. Both
/// prediction streams contribute, so each pixel is counted twice.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForgettingReport {
    pub epochs: u32,
    pub noisy: Population,
    pub clean: Population,
    pub noisy_in_box: Population,
    pub clean_in_box: Population,
    /// `first_learn[e] = (noisy, clean)` for epochs `0..epochs`, then a
    /// final never-learned bin.
    pub first_learn: Vec<(u64, u64)>,
    /// `events[g] = (noisy, clean)` pixel counts with exactly `g` events.
    pub events: Vec<(u64, u64)>,
}

impl ForgettingReport {
    /// `noisy / clean` frequent-forgetting ratio, when both exist.
    pub fn separation(&self) -> Option<f64> {
        match (self.noisy.fraction, self.clean.fraction) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            (Some(a), Some(_)) if a > 0.0 => Some(f64::INFINITY),
            _ => None,
        }
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            population: &'a str,
            region: &'a str,
            pixels: u64,
            frequent: u64,
            fraction: Option<f64>,
            mean_events: Option<f64>,
            mean_first_learn: Option<f64>,
            never_learned: u64,
        }
        let mut w = csv::Writer::from_writer(out);
        for (population, region, p) in [
            ("noisy", "all", &self.noisy),
            ("clean", "all", &self.clean),
            ("noisy", "bbox", &self.noisy_in_box),
            ("clean", "bbox", &self.clean_in_box),
        ] {
            w.serialize(Row {
                population,
                region,
                pixels: p.pixels,
                frequent: p.frequent,
                fraction: p.fraction,
                mean_events: p.mean_events,
                mean_first_learn: p.mean_first_learn,
                never_learned: p.never_learned,
            })?;
        }
        w.flush().map_err(|e| EvalError::Io {
            path: "csv".into(),
            source: e,
        })
    }

    pub fn write_first_learn_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "noisy", "clean"])?;
        for (e, (n, c)) in self.first_learn.iter().enumerate() {
            let label = if e as u32 == self.epochs { "never".to_string() } else { e.to_string() };
            w.write_record([label, n.to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| EvalError::Io {
            path: "csv".into(),
            source: e,
        })
    }

    pub fn write_events_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["events", "noisy", "clean"])?;
        for (g, (n, c)) in self.events.iter().enumerate() {
            w.write_record([g.to_string(), n.to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| EvalError::Io {
            path: "csv".into(),
            source: e,
        })
    }
}

/// Split the tracked pixels of every sample by the noise mask.
pub fn forgetting_analysis(state: &ForgettingState, truth: &[NoiseTruth]) -> Result<ForgettingReport> {
    let last = state
        .iter()
        .filter_map(|(_, s)| s.epoch)
        .max()
        .ok_or_else(|| EvalError::Invalid("forgetting state holds no logged epochs".into()))?;
    let epochs = last + 1;
    if truth.len() != state.len() {
        return Err(EvalError::Invalid(format!(
            "{} noise masks for {} tracked samples",
            truth.len(),
            state.len()
        )));
    }
    let (mut noisy, mut clean, mut noisy_box, mut clean_box) = (Acc::default(), Acc::default(), Acc::default(), Acc::default());
    let mut first_learn = vec![(0u64, 0u64); epochs as usize + 1];
    let mut events: Vec<(u64, u64)> = Vec::new();
    for t in truth {
        let s = state
            .get(&t.id)
            .map_err(|e| EvalError::Invalid(e.to_string()))?;
        if t.noise.len() != state.pixels() {
            return Err(EvalError::Invalid(format!("`{}`: noise mask size differs from the tracked grid", t.id)));
        }
        let w = t.noise.width;
        for stream in [&s.focal, &s.all_focus] {
            for i in 0..t.noise.len() {
                let (g, first) = (stream.g[i], stream.first_learn[i]);
                let is_noisy = t.noise.data[i] != 0;
                let in_box = t
                    .bbox
                    .is_some_and(|b| (b[0]..b[2]).contains(&(i / w)) && (b[1]..b[3]).contains(&(i % w)));
                let (all, bx) = if is_noisy {
                    (&mut noisy, &mut noisy_box)
                } else {
                    (&mut clean, &mut clean_box)
                };
                all.add(g, first, epochs);
                if in_box {
                    bx.add(g, first, epochs);
                }
                let bin = first.map_or(epochs as usize, |e| (e as usize).min(epochs as usize - 1));
                let gi = g as usize;
                if events.len() <= gi {
                    events.resize(gi + 1, (0, 0));
                }
                if is_noisy {
                    first_learn[bin].0 += 1;
                    events[gi].0 += 1;
                } else {
                    first_learn[bin].1 += 1;
                    events[gi].1 += 1;
                }
            }
        }
    }
    Ok(ForgettingReport {
        epochs,
        noisy: noisy.finish(),
        clean: clean.finish(),
        noisy_in_box: noisy_box.finish(),
        clean_in_box: clean_box.finish(),
        first_learn,
        events,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenePoint {
    pub id: String,
    /// Mean all-focus luminance at noisy-label pixels.
    pub intensity: f64,
    /// Mean distance of noisy pixels to the clean-object centroid, over the
    /// image diagonal.
    pub distance: f64,
    pub noisy_pixels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationReport {
    pub points: Vec<ScenePoint>,
    /// Scenes without any noisy pixel (or without an object).
    pub omitted: usize,
}

impl CorrelationReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush().map_err(|e| EvalError::Io {
            path: "csv".into(),
            source: e,
        })
    }
}

/// One `(intensity, distance)` point per corrupted scene.
pub fn cross_scene_correlation(samples: &[FocalStackSample]) -> Result<CorrelationReport> {
    if let Some(s) = samples.iter().find(|s| s.meta.noise.mode != NoiseMode::Corruption) {
        return Err(EvalError::Invalid(format!(
            "sample `{}` has heuristic labels; correlation needs corruption-mode noise masks",
            s.id
        )));
    }
    let mut points = Vec::new();
    let mut omitted = 0;
    for s in samples {
        let clean = s.clean_mask();
        let noise = noise_mask(clean, &s.noisy);
        let w = clean.width;
        let (mut cy, mut cx, mut n) = (0.0, 0.0, 0usize);
        for i in 0..clean.len() {
            if clean.data[i] != 0 {
                cy += (i / w) as f64 + 0.5;
                cx += (i % w) as f64 + 0.5;
                n += 1;
            }
        }
        let noisy_px: Vec<usize> = (0..noise.len()).filter(|&i| noise.data[i] != 0).collect();
        if n == 0 || noisy_px.is_empty() {
            omitted += 1;
            continue;
        }
        let (cy, cx) = (cy / n as f64, cx / n as f64);
        let diag = ((clean.height * clean.height + w * w) as f64).sqrt();
        let lum = s.all_focus.luminance();
        let k = noisy_px.len() as f64;
        let intensity = noisy_px.iter().map(|&i| lum[i]).sum::<f64>() / k;
        let distance = noisy_px
            .iter()
            .map(|&i| {
                let (dy, dx) = ((i / w) as f64 + 0.5 - cy, (i % w) as f64 + 0.5 - cx);
                (dy * dy + dx * dx).sqrt()
            })
            .sum::<f64>()
            / k
            / diag;
        points.push(ScenePoint {
            id: s.id.clone(),
            intensity,
            distance,
            noisy_pixels: noisy_px.len(),
        });
    }
    Ok(CorrelationReport { points, omitted })
}

/// 8-bit PGM of a `[0, 1]` map, rounding half up.
pub fn encode_map(s: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if s.len() != height * width {
        return Err(EvalError::Invalid(format!("{} values for a {height}x{width} map", s.len())));
    }
    let px: Vec<u8> = s.iter().map(|&v| quantize(v as f32)).collect();
    Ok(encode_pnm(1, height, width, &px))
}

pub fn render_map(s: &[f64], height: usize, width: usize, path: &Path) -> Result<()> {
    let bytes = encode_map(s, height, width)?;
    fs::write(path, bytes).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests;
