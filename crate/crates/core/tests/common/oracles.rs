//! Brute-force scalar recomputations of the fusion and loss blocks on small
//! random instances, compared in 64-bit. Each check panics on a mismatch.

use focalsal::forgetting::{confidence_weight, guided_fuse};
use focalsal::fusion::{channel_attention, pixel_guidance, PixelAttention};
use focalsal::gradcore::{Graph, ParameterSet, Tensor};
use focalsal::noiseloss::{penalty_loss, PeerPairs, PenaltyConfig};
use focalsal::synthdata::seeded_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 100;
pub const TOL: f64 = 1e-10;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * b.abs().max(1.0)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn assert_all_close(got: &Tensor<f64>, want: &[f64], what: &str, seed: u64) {
    assert_eq!(got.len(), want.len(), "{what} seed {seed}");
    for (i, (a, b)) in got.data().iter().zip(want).enumerate() {
        assert!(close(*a, *b), "{what} seed {seed} index {i}: {a} vs {b}");
    }
}

fn bce(s: f64, y: f64) -> f64 {
    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

fn dbce(s: f64, y: f64) -> f64 {
    -y / s + (1.0 - y) / (1.0 - s)
}

pub fn penalty_loss_matches_scalar_sums() {
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(seed);
        let b = rng.random_range(3..=6);
        let cfg = PenaltyConfig {
            alpha: rng.random_range(0.0..1.0),
            m_l: rng.random_range(2..=b),
        };
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let px = h * w;
        let s = uniform(&mut rng, &[b, 1, h, w], 0.02, 0.98);
        let y = Tensor::from_vec(&[b, 1, h, w], (0..b * px).map(|_| rng.random_bool(0.4) as u8 as f64).collect()).unwrap();
        let pairs = PeerPairs::sample(b, &cfg, &mut rng).unwrap();
        for (i, row) in pairs.pairs.iter().enumerate() {
            assert_eq!(row.len(), cfg.m_l - 1);
            for &(p, q) in row {
                assert!(p != i && q != i && q != p, "seed {seed}");
            }
        }

        let (sd, yd) = (s.data(), y.data());
        let mut matched = 0.0;
        let mut grad = vec![0.0; b * px];
        for j in 0..b * px {
            matched += bce(sd[j], yd[j]);
            grad[j] += dbce(sd[j], yd[j]);
        }
        let scale = 1.0 / (cfg.m_l - 1) as f64;
        let mut mismatched = 0.0;
        for row in &pairs.pairs {
            for &(p, q) in row {
                for t in 0..px {
                    let (sp, yq) = (sd[p * px + t], yd[q * px + t]);
                    mismatched += scale * bce(sp, yq);
                    grad[p * px + t] -= cfg.alpha * scale * dbce(sp, yq);
                }
            }
        }
        let total = matched - cfg.alpha * mismatched;

        let mut g = Graph::<f64>::new();
        let sv = g.constant(s.clone());
        let parts = penalty_loss(&mut g, sv, &y, &pairs, cfg.alpha).unwrap();
        assert!(close(g.value(parts.total).item(), total), "total seed {seed}");
        assert!(close(g.value(parts.matched).item(), matched), "matched seed {seed}");
        assert!(close(g.value(parts.mismatched.unwrap()).item(), mismatched), "mismatched seed {seed}");
        let grads = g.backward(parts.total).unwrap();
        assert_all_close(grads.get(sv).unwrap(), &grad, "gradient", seed);
    }
}

fn mean_plane(t: &Tensor<f64>, n: usize, c: usize) -> f64 {
    let [_, _, h, w] = t.dims4();
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            acc += t.at4(n, c, y, x);
        }
    }
    acc / (h * w) as f64
}

pub fn channel_attention_matches_scalar_softmax() {
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(1000 + seed);
        let (b, k, c) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let r = uniform(&mut rng, &[b, c, h, w], -1.0, 1.0);
        let f = uniform(&mut rng, &[b * k, c, h, w], -1.0, 1.0);
        let mut params = ParameterSet::new();
        for name in ["r", "s", "g"] {
            params.insert(format!("att.{name}.w"), uniform(&mut rng, &[1, c, 1, 1], -2.0, 2.0)).unwrap();
        }
        params.insert("att.r.b", uniform(&mut rng, &[1], -1.0, 1.0)).unwrap();
        params.insert("att.s.b", uniform(&mut rng, &[1], -1.0, 1.0)).unwrap();
        let pv = |n: &str, i: usize| params.value(n).unwrap().data()[i];

        let mut want_att = Vec::new();
        let mut want_weighted = vec![0.0; f.len()];
        for n in 0..b {
            let dot = |name: &str, t: &Tensor<f64>, row: usize| (0..c).map(|ch| pv(name, ch) * mean_plane(t, row, ch)).sum::<f64>();
            let mut logits = vec![dot("att.r.w", &r, n) + pv("att.r.b", 0)];
            for i in 0..k {
                logits.push(dot("att.s.w", &f, n * k + i) + pv("att.s.b", 0) + dot("att.g.w", &r, n));
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let att: Vec<f64> = logits.iter().map(|l| (l - mx).exp() / z).collect();
            for i in 0..k {
                let row = n * k + i;
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            want_weighted[((row * c + ch) * h + y) * w + x] = f.at4(row, ch, y, x) * att[i + 1];
                        }
                    }
                }
            }
            want_att.extend(att);
        }

        let mut g = Graph::<f64>::new();
        let (rv, fv) = (g.constant(r), g.constant(f));
        let (att, weighted) = channel_attention(&mut g, &params, "att", rv, fv, k).unwrap();
        assert_eq!(g.value(att).shape(), &[b, k + 1, 1, 1]);
        assert_all_close(g.value(att), &want_att, "attention", seed);
        assert_all_close(g.value(weighted), &want_weighted, "weighted slices", seed);
    }
}

/// 3x3 zero-padded single-output convolution at one pixel.
fn conv3x3_at(x: &Tensor<f64>, w: &Tensor<f64>, bias: f64, n: usize, y: usize, xx: usize) -> f64 {
    let [_, c, h, wd] = x.dims4();
    let mut acc = bias;
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                    acc += w.at4(0, ch, ky, kx) * x.at4(n, ch, iy as usize, ix as usize);
                }
            }
        }
    }
    acc
}

pub fn pixel_guidance_matches_scalar_gating() {
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(2000 + seed);
        let (b, c) = (rng.random_range(1..=3), rng.random_range(1..=4));
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let r = uniform(&mut rng, &[b, c, h, w], -1.0, 1.0);
        let refined = uniform(&mut rng, &[b, c, h, w], -1.0, 1.0);
        let mut params = ParameterSet::new();
        params.insert("pix.w", uniform(&mut rng, &[1, c, 3, 3], -1.0, 1.0)).unwrap();
        params.insert("pix.b", uniform(&mut rng, &[1], -1.0, 1.0)).unwrap();
        let (wt, bias) = (params.value("pix.w").unwrap().clone(), params.value("pix.b").unwrap().data()[0]);

        for mode in [PixelAttention::Softmax, PixelAttention::Sigmoid] {
            let mut want = vec![0.0; r.len()];
            for n in 0..b {
                let z: Vec<f64> = (0..h * w).map(|i| conv3x3_at(&refined, &wt, bias, n, i / w, i % w)).collect();
                let att: Vec<f64> = match mode {
                    PixelAttention::Softmax => {
                        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let s: f64 = z.iter().map(|v| (v - mx).exp()).sum();
                        z.iter().map(|v| (v - mx).exp() / s).collect()
                    }
                    PixelAttention::Sigmoid => z.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
                };
                for ch in 0..c {
                    for i in 0..h * w {
                        let v = r.at4(n, ch, i / w, i % w);
                        want[(n * c + ch) * h * w + i] = v * att[i] + v;
                    }
                }
            }
            let mut g = Graph::<f64>::new();
            let (rv, fv) = (g.constant(r.clone()), g.constant(refined.clone()));
            let out = pixel_guidance(&mut g, &params, "pix", rv, fv, mode).unwrap();
            assert_all_close(g.value(out), &want, "guided features", seed);
        }
    }
}

/// Corner-aligned bilinear source position of output index `o`.
fn source_pos(o: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    if src == 1 || dst == 1 {
        return (0, 0, 0.0);
    }
    let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
    let i0 = (pos.floor() as usize).min(src - 1);
    (i0, (i0 + 1).min(src - 1), pos - i0 as f64)
}

pub fn guided_fuse_matches_scalar_fusion() {
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(3000 + seed);
        let b = rng.random_range(1..=3);
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (oh, ow) = (rng.random_range(h..=8), rng.random_range(w..=8));
        let s_f = uniform(&mut rng, &[b, 1, h, w], 0.0, 1.0);
        let s_r = uniform(&mut rng, &[b, 1, h, w], 0.0, 1.0);
        let a = rng.random_range(0.01..0.5);
        let weights = |rng: &mut ChaCha8Rng| {
            let d = (0..b * h * w).map(|_| confidence_weight(rng.random_range(0..8), a)).collect();
            Tensor::from_vec(&[b, 1, h, w], d).unwrap()
        };
        let (m_f, m_r) = (weights(&mut rng), weights(&mut rng));
        let mut params = ParameterSet::new();
        params.insert("fuse.w", uniform(&mut rng, &[1, 2, 3, 3], -2.0, 2.0)).unwrap();
        params.insert("fuse.b", uniform(&mut rng, &[1], -1.0, 1.0)).unwrap();
        let (wt, bias) = (params.value("fuse.w").unwrap().clone(), params.value("fuse.b").unwrap().data()[0]);

        let mut stacked = Vec::with_capacity(2 * b * h * w);
        for n in 0..b {
            for (s, m) in [(&s_f, &m_f), (&s_r, &m_r)] {
                for i in 0..h * w {
                    stacked.push(s.data()[n * h * w + i] * m.data()[n * h * w + i]);
                }
            }
        }
        let stacked = Tensor::from_vec(&[b, 2, h, w], stacked).unwrap();
        let mut want = Vec::with_capacity(b * oh * ow);
        for n in 0..b {
            let z = |y: usize, x: usize| conv3x3_at(&stacked, &wt, bias, n, y, x);
            for oy in 0..oh {
                let (y0, y1, ty) = source_pos(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1, tx) = source_pos(ox, w, ow);
                    let top = z(y0, x0) * (1.0 - tx) + z(y0, x1) * tx;
                    let bot = z(y1, x0) * (1.0 - tx) + z(y1, x1) * tx;
                    let v = top * (1.0 - ty) + bot * ty;
                    want.push(1.0 / (1.0 + (-v).exp()));
                }
            }
        }

        let mut g = Graph::<f64>::new();
        let (fv, rv) = (g.constant(s_f), g.constant(s_r));
        let out = guided_fuse(&mut g, &params, fv, rv, m_f, m_r, (oh, ow)).unwrap();
        assert_eq!(g.value(out).shape(), &[b, 1, oh, ow]);
        assert_all_close(g.value(out), &want, "fused map", seed);
    }
}
