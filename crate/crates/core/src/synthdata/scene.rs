use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mix_seed, seeded_rng, Mask, Result, SynthError};

const MAX_ATTEMPTS: usize = 200;
const MIN_AREA: f64 = 0.03;
const MAX_AREA: f64 = 0.45;

/// Where the salient object's center may fall.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    Anywhere,
    Centered,
    /// Touching one image edge.
    Boundary,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Total object count including the salient one.
    pub objects: usize,
    pub depth_range: (f64, f64),
    pub texture_seed: u64,
    /// Background clutter in [0, 1]; 0 leaves a smooth gradient.
    pub clutter: f64,
    pub placement: Placement,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            channels: 1,
            objects: 3,
            depth_range: (0.05, 0.95),
            texture_seed: 0,
            clutter: 0.5,
            placement: Placement::Anywhere,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(16) || !self.height.is_multiple_of(16) {
            return bad(format!("size {}x{} must be positive multiples of 16", self.width, self.height));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.objects == 0 {
            return bad("need at least one object".into());
        }
        let (lo, hi) = self.depth_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return bad(format!("depth range ({lo}, {hi}) must be an increasing sub-interval of [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return bad(format!("clutter {} outside [0, 1]", self.clutter));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedScene {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Planar `[channels, height, width]` values in [0, 1].
    pub image: Vec<f32>,
    /// Per-pixel depth in [0, 1]; 0 is nearest.
    pub depth: Vec<f64>,
    pub mask: Mask,
}

#[derive(Clone, Copy, Debug)]
enum Outline {
    Ellipse { rx: f64, ry: f64 },
    Rect { hx: f64, hy: f64 },
    Lobed { r: f64, amp: f64, lobes: f64, phase: f64 },
}

#[derive(Clone, Copy, Debug)]
enum Pattern {
    Stripes { fx: f64, fy: f64, phase: f64 },
    Checker { cell: f64 },
    Speckle { seed: u64 },
}

#[derive(Clone, Copy, Debug)]
struct Object {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    outline: Outline,
    depth: f64,
    base: [f64; 3],
    amp: f64,
    pattern: Pattern,
}

impl Object {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        match self.outline {
            Outline::Ellipse { rx, ry } => (u / rx).powi(2) + (v / ry).powi(2) <= 1.0,
            Outline::Rect { hx, hy } => u.abs() <= hx && v.abs() <= hy,
            Outline::Lobed { r, amp, lobes, phase } => {
                let t = v.atan2(u);
                (u * u + v * v).sqrt() <= r * (1.0 + amp * (lobes * t + phase).cos())
            }
        }
    }

    fn texture(&self, x: f64, y: f64) -> f64 {
        match self.pattern {
            Pattern::Stripes { fx, fy, phase } => (fx * x + fy * y + phase).sin(),
            Pattern::Checker { cell } => {
                let a = (x / cell).floor() as i64 + (y / cell).floor() as i64;
                if a.rem_euclid(2) == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Pattern::Speckle { seed } => hash_unit(seed, x as i64, y as i64) * 2.0 - 1.0,
        }
    }

    fn raster(&self, h: usize, w: usize) -> Vec<bool> {
        let mut out = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = self.contains(x as f64 + 0.5, y as f64 + 0.5);
            }
        }
        out
    }
}

fn hash_unit(seed: u64, x: i64, y: i64) -> f64 {
    let h = mix_seed(seed, (x as u64).wrapping_mul(0x1_0000_0001) ^ (y as u64).wrapping_mul(0x9E37));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinear value noise on a lattice of `cell` pixels.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let gx = x / cell;
    let gy = y / cell;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let tx = gx - x0;
    let ty = gy - y0;
    let sx = tx * tx * (3.0 - 2.0 * tx);
    let sy = ty * ty * (3.0 - 2.0 * ty);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let a = hash_unit(seed, x0, y0);
    let b = hash_unit(seed, x0 + 1, y0);
    let c = hash_unit(seed, x0, y0 + 1);
    let d = hash_unit(seed, x0 + 1, y0 + 1);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

fn sample_outline(r: &mut ChaCha8Rng, area: f64) -> Outline {
    match r.random_range(0..3) {
        0 => {
            let aspect: f64 = r.random_range(0.6..1.6);
            let rx = (area * aspect / std::f64::consts::PI).sqrt();
            Outline::Ellipse { rx, ry: rx / aspect }
        }
        1 => {
            let aspect: f64 = r.random_range(0.6..1.6);
            let hx = (area * aspect / 4.0).sqrt();
            Outline::Rect { hx, hy: hx / aspect }
        }
        _ => {
            let amp = r.random_range(0.1..0.3);
            let radius = (area / (std::f64::consts::PI * (1.0 + amp * amp / 2.0))).sqrt();
            Outline::Lobed {
                r: radius,
                amp,
                lobes: r.random_range(3..6) as f64,
                phase: r.random_range(0.0..std::f64::consts::TAU),
            }
        }
    }
}

fn sample_pattern(r: &mut ChaCha8Rng, tex_seed: u64) -> Pattern {
    match r.random_range(0..3) {
        0 => {
            let period: f64 = r.random_range(2.5..6.0);
            let theta: f64 = r.random_range(0.0..std::f64::consts::PI);
            let f = std::f64::consts::TAU / period;
            Pattern::Stripes {
                fx: f * theta.cos(),
                fy: f * theta.sin(),
                phase: r.random_range(0.0..std::f64::consts::TAU),
            }
        }
        1 => Pattern::Checker {
            cell: r.random_range(2..5) as f64,
        },
        _ => Pattern::Speckle {
            seed: mix_seed(tex_seed, r.random()),
        },
    }
}

struct Background {
    g0: [f64; 3],
    gx: f64,
    gy: f64,
    clutter: f64,
    seed: u64,
}

impl Background {
    fn value(&self, c: usize, x: f64, y: f64, w: f64, h: f64) -> f64 {
        let smooth = self.g0[c] + self.gx * (x / w - 0.5) + self.gy * (y / h - 0.5);
        if self.clutter == 0.0 {
            return smooth;
        }
        let coarse = value_noise(self.seed, x, y, 8.0) - 0.5;
        let fine = value_noise(self.seed ^ 0xABCD, x, y, 2.0) - 0.5;
        smooth + self.clutter * (0.5 * coarse + 0.35 * fine)
    }
}

/// Render a scene: textured background on the far plane plus textured
/// objects, with object 0 (the salient one) nearest.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<RenderedScene> {
    spec.validate()?;
    let (h, w, ch) = (spec.height, spec.width, spec.channels);
    let (wf, hf) = (w as f64, h as f64);
    let tex_seed = mix_seed(spec.texture_seed, seed);
    let mut r = seeded_rng(seed);
    let (lo, hi) = spec.depth_range;
    let span = hi - lo;

    let gray: f64 = r.random_range(0.3..0.7);
    let mut g0 = [gray; 3];
    if ch == 3 {
        for g in g0.iter_mut() {
            *g = (gray + r.random_range(-0.15..0.15)).clamp(0.1, 0.9);
        }
    }
    let bg = Background {
        g0,
        gx: r.random_range(-0.25..0.25),
        gy: r.random_range(-0.25..0.25),
        clutter: spec.clutter,
        seed: mix_seed(tex_seed, 1),
    };

    let total = wf * hf;
    let mut objects: Vec<Object> = Vec::with_capacity(spec.objects);
    let mut salient_px: Vec<bool> = Vec::new();
    let mut occupied = vec![false; h * w];
    for idx in 0..spec.objects {
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let frac = if idx == 0 {
                r.random_range(0.06..0.3)
            } else {
                r.random_range(0.03..0.16)
            };
            let outline = sample_outline(&mut r, frac * total);
            let theta: f64 = r.random_range(0.0..std::f64::consts::PI);
            let (cx, cy) = match (idx, spec.placement) {
                (0, Placement::Centered) => (wf / 2.0 + r.random_range(-2.0..2.0), hf / 2.0 + r.random_range(-2.0..2.0)),
                (0, Placement::Boundary) => {
                    let side = r.random_range(0..4);
                    let t = r.random_range(0.25..0.75);
                    match side {
                        0 => (t * wf, 0.0),
                        1 => (t * wf, hf),
                        2 => (0.0, t * hf),
                        _ => (wf, t * hf),
                    }
                }
                _ => (r.random_range(0.15..0.85) * wf, r.random_range(0.15..0.85) * hf),
            };
            let lum: f64 = loop {
                let v: f64 = r.random_range(0.08..0.92);
                if (v - bg.value(0, cx, cy, wf, hf)).abs() >= 0.2 {
                    break v;
                }
            };
            let mut base = [lum; 3];
            if ch == 3 {
                for b in base.iter_mut() {
                    *b = (lum + r.random_range(-0.2..0.2)).clamp(0.05, 0.95);
                }
            }
            let depth = if idx == 0 {
                lo + span * r.random_range(0.0..0.3)
            } else {
                lo + span * r.random_range(0.45..1.0)
            };
            let obj = Object {
                cx,
                cy,
                cos: theta.cos(),
                sin: theta.sin(),
                outline,
                depth,
                base,
                amp: r.random_range(0.12..0.25),
                pattern: sample_pattern(&mut r, tex_seed),
            };
            let px = obj.raster(h, w);
            let count = px.iter().filter(|&&b| b).count() as f64;
            if idx == 0 {
                let f = count / total;
                if !(MIN_AREA..=MAX_AREA).contains(&f) {
                    continue;
                }
                salient_px = px.clone();
            } else {
                if count < 0.01 * total {
                    continue;
                }
                let overlap = px.iter().zip(&salient_px).filter(|(a, b)| **a && **b).count() as f64;
                let crowded = px.iter().zip(&occupied).filter(|(a, b)| **a && **b).count() as f64;
                if overlap > 0.25 * count || crowded > 0.5 * count {
                    continue;
                }
            }
            for (o, &p) in occupied.iter_mut().zip(&px) {
                *o |= p;
            }
            placed = Some(obj);
            break;
        }
        objects.push(placed.ok_or(SynthError::Placement { attempts: MAX_ATTEMPTS })?);
    }

    let far = hi;
    let mut image = vec![0f32; ch * h * w];
    let mut depth = vec![far; h * w];
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    // Painter's order: farthest first so the salient object ends on top.
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by(|&a, &b| objects[b].depth.total_cmp(&objects[a].depth));
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            for &o in &order {
                if objects[o].contains(px, py) {
                    owner[y * w + x] = Some(o);
                }
            }
            let i = y * w + x;
            match owner[i] {
                Some(o) => {
                    let obj = &objects[o];
                    depth[i] = obj.depth;
                    let t = obj.texture(px, py);
                    for c in 0..ch {
                        image[c * h * w + i] = (obj.base[c] + obj.amp * t).clamp(0.0, 1.0) as f32;
                    }
                }
                None => {
                    for c in 0..ch {
                        image[c * h * w + i] = bg.value(c, px, py, wf, hf).clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
    }
    let mask = Mask {
        height: h,
        width: w,
        data: owner.iter().map(|o| (*o == Some(0)) as u8).collect(),
    };
    Ok(RenderedScene {
        height: h,
        width: w,
        channels: ch,
        image,
        depth,
        mask,
    })
}
