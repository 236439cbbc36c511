use super::RenderedScene;

/// Blur levels are precomputed at this sigma spacing and interpolated.
const SIGMA_STEP: f64 = 0.25;

/// Focus depth of slice `j` (0-based) in a `k`-slice stack.
pub fn slice_focus_depth(j: usize, k: usize) -> f64 {
    (j as f64 + 0.5) / k as f64
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped borders.
fn blur_plane(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * src[y * w + clamp(x as isize + t as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                acc += kv * tmp[clamp(y as isize + t as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Render `k` focal slices. Each pixel of slice `j` takes the value of the
/// all-focus image blurred with sigma `blur_scale * |depth - d_j|`; sigma
/// is resolved by linear interpolation between precomputed blur levels.
pub fn render_focal_stack(scene: &RenderedScene, k: usize, blur_scale: f64) -> Vec<Vec<f32>> {
    let (h, w, ch) = (scene.height, scene.width, scene.channels);
    let hw = h * w;
    let sigma_at = |i: usize, j: usize| blur_scale.max(0.0) * (scene.depth[i] - slice_focus_depth(j, k)).abs();
    let mut max_sigma: f64 = 0.0;
    for i in 0..hw {
        for j in 0..k {
            max_sigma = max_sigma.max(sigma_at(i, j));
        }
    }
    let levels = (max_sigma / SIGMA_STEP).ceil() as usize + 1;
    // blurred[c][level] planes
    let blurred: Vec<Vec<Vec<f64>>> = (0..ch)
        .map(|c| {
            let plane: Vec<f64> = scene.image[c * hw..(c + 1) * hw].iter().map(|&v| v as f64).collect();
            (0..levels).map(|l| blur_plane(&plane, h, w, l as f64 * SIGMA_STEP)).collect()
        })
        .collect();
    (0..k)
        .map(|j| {
            let mut out = vec![0f32; ch * hw];
            for i in 0..hw {
                let s = sigma_at(i, j) / SIGMA_STEP;
                let lo = s.floor() as usize;
                let t = s - lo as f64;
                for c in 0..ch {
                    out[c * hw + i] = if t == 0.0 {
                        if lo == 0 {
                            scene.image[c * hw + i]
                        } else {
                            blurred[c][lo][i] as f32
                        }
                    } else {
                        let a = blurred[c][lo][i];
                        let b = blurred[c][(lo + 1).min(levels - 1)][i];
                        (a + t * (b - a)) as f32
                    };
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{render_scene, Mask, SceneSpec};

    fn flat_depth_scene(depth: f64) -> RenderedScene {
        let mut s = render_scene(&SceneSpec::default(), 3).unwrap();
        s.depth.iter_mut().for_each(|d| *d = depth);
        s
    }

    #[test]
    fn zero_blur_scale_copies_all_focus() {
        let s = render_scene(&SceneSpec::default(), 1).unwrap();
        for slice in render_focal_stack(&s, 4, 0.0) {
            assert_eq!(slice, s.image);
        }
    }

    #[test]
    fn in_focus_plane_is_exact() {
        let s = flat_depth_scene(slice_focus_depth(0, 4));
        let stack = render_focal_stack(&s, 4, 6.0);
        assert_eq!(stack[0], s.image);
        assert_ne!(stack[3], s.image);
    }

    #[test]
    fn blur_preserves_constant_planes() {
        let plane = vec![0.37; 16 * 16];
        let out = blur_plane(&plane, 16, 16, 2.3);
        assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    /// Variance of the 4-neighbour Laplacian over interior mask pixels.
    fn laplacian_variance(img: &[f32], mask: &Mask) -> f64 {
        let (h, w) = (mask.height, mask.width);
        let mut vals = Vec::new();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let inner = (0..9).all(|n| mask.get(y + n / 3 - 1, x + n % 3 - 1));
                if !inner {
                    continue;
                }
                let c = img[y * w + x] as f64;
                let l = img[(y - 1) * w + x] as f64 + img[(y + 1) * w + x] as f64 + img[y * w + x - 1] as f64
                    + img[y * w + x + 1] as f64
                    - 4.0 * c;
                vals.push(l);
            }
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn sharpest_slice_is_nearest_object_depth() {
        let k = 4;
        for seed in 0..20 {
            let s = render_scene(&SceneSpec::default(), seed).unwrap();
            let stack = render_focal_stack(&s, k, 6.0);
            let d_obj = s.depth[s.mask.data.iter().position(|&m| m == 1).unwrap()];
            let sharp: Vec<f64> = stack.iter().map(|sl| laplacian_variance(sl, &s.mask)).collect();
            let best = (0..k).max_by(|&a, &b| sharp[a].total_cmp(&sharp[b])).unwrap();
            let nearest = (0..k)
                .min_by(|&a, &b| {
                    (slice_focus_depth(a, k) - d_obj).abs().total_cmp(&(slice_focus_depth(b, k) - d_obj).abs())
                })
                .unwrap();
            assert_eq!(best, nearest, "seed {seed}: sharpness {sharp:?}, depth {d_obj}");
        }
    }

    #[test]
    fn sigma_is_minimized_by_nearest_slice() {
        let k = 5;
        for step in 0..=100 {
            let d = step as f64 / 100.0;
            let sig: Vec<f64> = (0..k).map(|j| (d - slice_focus_depth(j, k)).abs()).collect();
            let best = (0..k).min_by(|&a, &b| sig[a].total_cmp(&sig[b])).unwrap();
            let expect = ((d * k as f64).floor() as usize).min(k - 1);
            assert!(
                best == expect || (sig[best] - sig[expect]).abs() < 1e-12,
                "depth {d}: {best} vs {expect}"
            );
        }
    }
}
