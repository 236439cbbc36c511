use rand::Rng;

use super::AugmentConfig;
use crate::gradcore::{Real, Tensor};

/// Largest translation used by the crop augmentation, in pixels.
const MAX_SHIFT: isize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Transform {
    flip: bool,
    quarter_turns: u8,
    shift: (isize, isize),
}

impl Transform {
    fn draw(cfg: &AugmentConfig, square: bool, rng: &mut impl Rng) -> Self {
        Self {
            flip: cfg.flip && rng.random_bool(0.5),
            quarter_turns: if cfg.rotate && square { rng.random_range(0..4) } else { 0 },
            shift: if cfg.crop {
                (rng.random_range(-MAX_SHIFT as i64..=MAX_SHIFT as i64) as isize, rng.random_range(-MAX_SHIFT as i64..=MAX_SHIFT as i64) as isize)
            } else {
                (0, 0)
            },
        }
    }

    /// Source pixel of output `(y, x)`: shift (edge-clamped crop), then
    /// rotate, then mirror.
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> usize {
        let (mut y, mut x) = (y, x);
        if self.flip {
            x = w - 1 - x;
        }
        for _ in 0..self.quarter_turns {
            // square planes only
            let (ny, nx) = (x, h - 1 - y);
            y = ny;
            x = nx;
        }
        let sy = (y as isize + self.shift.0).clamp(0, h as isize - 1) as usize;
        let sx = (x as isize + self.shift.1).clamp(0, w as isize - 1) as usize;
        sy * w + sx
    }
}

fn apply_rows<T: Real>(t: &mut Tensor<T>, rows: std::ops::Range<usize>, tr: &Transform) {
    let [_, c, h, w] = t.dims4();
    let plane = h * w;
    let data = t.data_mut();
    for n in rows {
        for ch in 0..c {
            let base = (n * c + ch) * plane;
            let src: Vec<T> = data[base..base + plane].to_vec();
            for y in 0..h {
                for x in 0..w {
                    data[base + y * w + x] = src[tr.source(y, x, h, w)];
                }
            }
        }
    }
}

/// Apply one random spatial transform per sample, shared by its all-focus
/// image, its `k` slices and its label.
pub(crate) fn augment_batch<T: Real>(
    cfg: &AugmentConfig,
    all_focus: &mut Tensor<T>,
    slices: &mut Tensor<T>,
    labels: &mut Tensor<T>,
    k: usize,
    rng: &mut impl Rng,
) {
    let [b, _, h, w] = all_focus.dims4();
    for n in 0..b {
        let tr = Transform::draw(cfg, h == w, rng);
        if tr == (Transform { flip: false, quarter_turns: 0, shift: (0, 0) }) {
            continue;
        }
        apply_rows(all_focus, n..n + 1, &tr);
        apply_rows(slices, n * k..(n + 1) * k, &tr);
        apply_rows(labels, n..n + 1, &tr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::seeded_rng;

    #[test]
    fn four_rotations_are_the_identity() {
        let t = Transform { flip: false, quarter_turns: 1, shift: (0, 0) };
        let mut m = Tensor::from_vec(&[1, 1, 3, 3], (0..9).map(|v| v as f64).collect()).unwrap();
        let orig = m.clone();
        apply_rows(&mut m, 0..1, &t);
        assert_eq!(m.data(), &[2.0, 5.0, 8.0, 1.0, 4.0, 7.0, 0.0, 3.0, 6.0]);
        for _ in 0..3 {
            apply_rows(&mut m, 0..1, &t);
        }
        assert_eq!(m, orig);
    }

    #[test]
    fn inputs_and_labels_move_together() {
        let cfg = AugmentConfig { flip: true, crop: true, rotate: true };
        let base: Vec<f64> = (0..2 * 16).map(|v| v as f64).collect();
        let mut af = Tensor::from_vec(&[2, 1, 4, 4], base.clone()).unwrap();
        let mut sl = Tensor::from_vec(&[4, 1, 4, 4], [base.clone(), base.clone()].concat()).unwrap();
        // slices of sample n are rows 2n, 2n + 1; make them copies of the image
        let d = sl.data_mut();
        d[16..32].copy_from_slice(&base[..16]);
        d[32..48].copy_from_slice(&base[16..]);
        let mut y = af.clone();
        augment_batch(&cfg, &mut af, &mut sl, &mut y, 2, &mut seeded_rng(4));
        assert_eq!(af, y);
        assert_eq!(sl.data()[..16], af.data()[..16]);
        assert_eq!(sl.data()[16..32], af.data()[..16]);
        assert_eq!(sl.data()[48..], af.data()[16..]);
    }
}
