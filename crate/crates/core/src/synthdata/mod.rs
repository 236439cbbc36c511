//! Synthetic light-field scenes: all-focus image, depth-dependent focal
//! stack, clean salient mask and a noisy training label.
//!
//! The salient object of every scene is the object nearest the camera.
//! Distractor objects are drawn from the same shape and texture families at
//! farther depths, so depth (recoverable from the focal stack) is what
//! separates them from the target.

mod focal;
mod heuristic;
pub mod io;
mod noise;
mod scene;

pub use focal::{render_focal_stack, slice_focus_depth};
pub use heuristic::{heuristic_label, HeuristicLabel};
pub use noise::{corrupt_label, noise_mask, Morphology, NoiseMode, NoiseSpec};
pub use scene::{render_scene, Placement, RenderedScene, SceneSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradcore::{Real, Tensor};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("object placement failed after {attempts} attempts")]
    Placement { attempts: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed image: {reason}")]
    Image { path: String, reason: String },
    #[error("{path}: missing file")]
    Missing { path: String },
    #[error("{path}: bad metadata: {reason}")]
    Meta { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Planar 8-bit image, values map linearly onto [0, 1].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn from_unit(channels: usize, height: usize, width: usize, values: &[f32]) -> Self {
        debug_assert_eq!(values.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data: values.iter().map(|&v| quantize(v)).collect(),
        }
    }

    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&b| b as f32 / 255.0).collect()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// `[channels, height, width]` as a rank-3 tensor of unit values.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&b| T::from_f64(b as f64 / 255.0)).collect();
        Tensor::from_vec(&[self.channels, self.height, self.width], data).expect("image shape")
    }

    /// Mean over channels at each pixel, in [0, 1].
    pub fn luminance(&self) -> Vec<f64> {
        let p = self.pixels();
        (0..p)
            .map(|i| (0..self.channels).map(|c| self.data[c * p + i] as f64).sum::<f64>() / (255.0 * self.channels as f64))
            .collect()
    }
}

/// Linear [0, 1] to 8-bit with round-half-up.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Binary per-pixel map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.len() as f64
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| (v == 0) as u8).collect(),
        }
    }

    pub fn disagreement(&self, other: &Mask) -> f64 {
        let diff = self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count();
        diff as f64 / self.len() as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// `[1, 1, height, width]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| if v != 0 { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(&[1, 1, self.height, self.width], data).expect("mask shape")
    }

    /// Binarize a continuous map at `threshold` (values `>= threshold` are 1).
    pub fn from_scores(height: usize, width: usize, scores: &[f64], threshold: f64) -> Self {
        Self {
            height,
            width,
            data: scores.iter().map(|&s| (s >= threshold) as u8).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct FocalSpec {
    /// Number of focal slices.
    pub k: usize,
    /// Gaussian sigma in pixels per unit of depth defocus.
    pub blur_scale: f64,
}

impl Default for FocalSpec {
    fn default() -> Self {
        Self { k: 4, blur_scale: 6.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SampleMeta {
    pub id: String,
    pub seed: u64,
    pub spec: SceneSpec,
    pub focal: FocalSpec,
    pub noise: NoiseSpec,
    /// Set when the heuristic label source hit a degenerate input.
    #[serde(default)]
    pub label_warning: Option<String>,
}

/// One scene. The clean mask is for evaluation only; training code takes a
/// [`TrainingView`], which does not carry it.
#[derive(Clone, Debug, PartialEq)]
pub struct FocalStackSample {
    pub id: String,
    pub all_focus: Image,
    pub slices: Vec<Image>,
    pub noisy: Mask,
    clean: Mask,
    pub meta: SampleMeta,
}

/// What the training path may see of a sample.
#[derive(Clone, Copy, Debug)]
pub struct TrainingView<'a> {
    pub id: &'a str,
    pub all_focus: &'a Image,
    pub slices: &'a [Image],
    pub noisy: &'a Mask,
}

impl FocalStackSample {
    pub fn new(id: String, all_focus: Image, slices: Vec<Image>, noisy: Mask, clean: Mask, meta: SampleMeta) -> Self {
        Self {
            id,
            all_focus,
            slices,
            noisy,
            clean,
            meta,
        }
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            id: &self.id,
            all_focus: &self.all_focus,
            slices: &self.slices,
            noisy: &self.noisy,
        }
    }

    /// Ground-truth mask. Evaluation and analysis only.
    pub fn clean_mask(&self) -> &Mask {
        &self.clean
    }

    pub fn k(&self) -> usize {
        self.slices.len()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.all_focus.height, self.all_focus.width)
    }
}

/// Corpus-level generator settings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GenConfig {
    pub count: usize,
    pub scene: SceneSpec,
    pub focal: FocalSpec,
    pub noise: NoiseSpec,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: 250,
            scene: SceneSpec::default(),
            focal: FocalSpec::default(),
            noise: NoiseSpec::default(),
        }
    }
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// SplitMix64 finalizer; derives independent child seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate one sample; a pure function of its arguments.
pub fn generate_sample(cfg: &GenConfig, seed: u64, index: usize) -> Result<FocalStackSample> {
    let scene_seed = mix_seed(seed, 2 * index as u64);
    let noise_seed = mix_seed(seed, 2 * index as u64 + 1);
    let rendered = render_scene(&cfg.scene, scene_seed)?;
    let slices = render_focal_stack(&rendered, cfg.focal.k, cfg.focal.blur_scale);
    let (h, w, c) = (cfg.scene.height, cfg.scene.width, cfg.scene.channels);
    let all_focus = Image::from_unit(c, h, w, &rendered.image);
    let slices: Vec<Image> = slices.iter().map(|s| Image::from_unit(c, h, w, s)).collect();
    let mut noise = cfg.noise.clone();
    noise.seed = noise_seed;
    let mut label_warning = None;
    let noisy = match noise.mode {
        NoiseMode::Corruption => corrupt_label(&rendered.mask, &noise),
        NoiseMode::Heuristic => {
            let h = heuristic_label(&all_focus);
            label_warning = h.warning;
            h.label
        }
    };
    let id = sample_id(index);
    let meta = SampleMeta {
        id: id.clone(),
        seed: scene_seed,
        spec: cfg.scene.clone(),
        focal: cfg.focal,
        noise,
        label_warning,
    };
    Ok(FocalStackSample::new(id, all_focus, slices, noisy, rendered.mask, meta))
}

pub fn generate_corpus(cfg: &GenConfig, seed: u64) -> Result<Vec<FocalStackSample>> {
    cfg.scene.validate()?;
    if cfg.focal.k < 2 || cfg.focal.k > 12 {
        return Err(SynthError::InvalidSpec(format!("slice count {} outside 2..=12", cfg.focal.k)));
    }
    (0..cfg.count).map(|i| generate_sample(cfg, seed, i)).collect()
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
