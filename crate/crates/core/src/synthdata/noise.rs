use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{seeded_rng, Mask};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Corruption,
    Heuristic,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Morphology {
    /// Dilate or erode, chosen per sample.
    #[default]
    Random,
    Dilate,
    Erode,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    /// Independent per-pixel flip probability, applied last.
    pub rate: f64,
    /// Boundary dilation/erosion radius in pixels.
    pub radius: usize,
    pub morphology: Morphology,
    pub holes: usize,
    pub blobs: usize,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            mode: NoiseMode::Corruption,
            rate: 0.1,
            radius: 2,
            morphology: Morphology::Random,
            holes: 0,
            blobs: 0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn clean() -> Self {
        Self {
            rate: 0.0,
            radius: 0,
            ..Self::default()
        }
    }
}

fn morph(m: &Mask, radius: usize, dilate: bool) -> Mask {
    if radius == 0 {
        return m.clone();
    }
    let (h, w) = (m.height, m.width);
    let r = radius as isize;
    let mut out = Mask::zeros(h, w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            // Disc structuring element; out-of-image pixels count as background.
            let mut any = false;
            let mut all = true;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                    let (yy, xx) = (y + dy, x + dx);
                    let v = yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize && m.get(yy as usize, xx as usize);
                    any |= v;
                    all &= v;
                }
            }
            out.data[y as usize * w + x as usize] = if dilate { any } else { all } as u8;
        }
    }
    out
}

fn stamp_disc(m: &mut Mask, cy: f64, cx: f64, radius: f64, value: u8) {
    for y in 0..m.height {
        for x in 0..m.width {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            if dx * dx + dy * dy <= radius * radius {
                m.data[y * m.width + x] = value;
            }
        }
    }
}

/// Structured corruption (morphology, holes, blobs) without the final flips.
fn structured(clean: &Mask, spec: &NoiseSpec, r: &mut impl Rng) -> Mask {
    let dilate = match spec.morphology {
        Morphology::Dilate => true,
        Morphology::Erode => false,
        Morphology::Random => r.random_bool(0.5),
    };
    let mut m = morph(clean, spec.radius, dilate);
    let scale = (clean.height.min(clean.width) as f64 / 16.0).max(1.0);
    let inside: Vec<usize> = (0..clean.len()).filter(|&i| clean.data[i] != 0).collect();
    let outside: Vec<usize> = (0..clean.len()).filter(|&i| clean.data[i] == 0).collect();
    for _ in 0..spec.holes {
        if inside.is_empty() {
            break;
        }
        let i = inside[r.random_range(0..inside.len())];
        let rad = r.random_range(0.5..1.0) * scale;
        stamp_disc(&mut m, (i / clean.width) as f64 + 0.5, (i % clean.width) as f64 + 0.5, rad, 0);
    }
    for _ in 0..spec.blobs {
        if outside.is_empty() {
            break;
        }
        let i = outside[r.random_range(0..outside.len())];
        let rad = r.random_range(0.5..1.0) * scale;
        stamp_disc(&mut m, (i / clean.width) as f64 + 0.5, (i % clean.width) as f64 + 0.5, rad, 1);
    }
    m
}

/// Corrupt a clean mask: dilation or erosion, holes inside the object,
/// background blobs, then independent flips at `spec.rate`.
pub fn corrupt_label(clean: &Mask, spec: &NoiseSpec) -> Mask {
    corrupt_with_stages(clean, spec).1
}

/// `(pre-flip, final)` labels.
pub(crate) fn corrupt_with_stages(clean: &Mask, spec: &NoiseSpec) -> (Mask, Mask) {
    let mut r = seeded_rng(spec.seed);
    let pre = structured(clean, spec, &mut r);
    let rate = spec.rate.clamp(0.0, 1.0);
    let mut out = pre.clone();
    // One uniform draw per pixel, so raising the rate only adds flips.
    for v in out.data.iter_mut() {
        let u: f64 = r.random();
        if u < rate {
            *v = 1 - *v;
        }
    }
    (pre, out)
}

/// 1 where the noisy label disagrees with the clean mask.
pub fn noise_mask(clean: &Mask, noisy: &Mask) -> Mask {
    Mask {
        height: clean.height,
        width: clean.width,
        data: clean.data.iter().zip(&noisy.data).map(|(a, b)| (a != b) as u8).collect(),
    }
}
