//! Forward and backward kernels. Pure functions over tensors; the graph
//! decides when to call them.

use super::tensor::{Real, Tensor};
use super::{GradError, Result};

pub(crate) fn require_rank4<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    if t.shape().len() != 4 {
        return Err(GradError::Rank {
            op,
            rank: t.shape().len(),
        });
    }
    Ok(t.dims4())
}

pub(crate) fn conv_out_extent(
    axis: &'static str,
    extent: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(GradError::Invalid {
            op: "conv2d",
            detail: "stride must be at least 1".into(),
        });
    }
    if kernel == 0 || kernel > extent + 2 * pad {
        return Err(GradError::KernelTooLarge {
            op: "conv2d",
            axis,
            kernel,
            extent,
            pad,
        });
    }
    Ok((extent + 2 * pad - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let [n, ci, h, wd] = require_rank4("conv2d", x)?;
        let [co, wci, kh, kw] = require_rank4("conv2d", w)?;
        if wci != ci {
            return Err(GradError::Mismatch {
                op: "conv2d",
                axis: "input channel",
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        let ho = conv_out_extent("height", h, kh, stride, pad)?;
        let wo = conv_out_extent("width", wd, kw, stride, pad)?;
        Ok(Self {
            n,
            ci,
            h,
            w: wd,
            co,
            kh,
            kw,
            ho,
            wo,
            stride,
            pad,
        })
    }

    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.pixels();
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut col[((c * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let p = g.pixels();
    for c in 0..g.ci {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &col[((c * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, w, stride, pad)?;
    if let Some(b) = b {
        if b.len() != g.co {
            return Err(GradError::Mismatch {
                op: "conv2d",
                axis: "bias/output channel",
                left: w.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
    }
    let (k, p) = (g.k(), g.pixels());
    let mut out = Tensor::zeros(&[g.n, g.co, g.ho, g.wo]);
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let xin = x.data();
    let od = out.data_mut();
    for n in 0..g.n {
        let xn = &xin[n * g.ci * g.h * g.w..(n + 1) * g.ci * g.h * g.w];
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(&g, xn, &mut col);
            &col
        };
        let on = &mut od[n * g.co * p..(n + 1) * g.co * p];
        if let Some(b) = b {
            for (co, chunk) in on.chunks_mut(p).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        T::gemm(
            g.co,
            k,
            p,
            T::one(),
            w.data(),
            (k as isize, 1),
            cols,
            (p as isize, 1),
            T::one(),
            on,
            (p as isize, 1),
        );
    }
    Ok(out)
}

/// Returns (dx, dw, db).
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let g = ConvGeom::new(x, w, stride, pad).expect("shapes validated in forward");
    let (k, p) = (g.k(), g.pixels());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[g.co]);
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcol = vec![T::zero(); k * p];
    let xin = x.data();
    for n in 0..g.n {
        let dyn_ = &dy.data()[n * g.co * p..(n + 1) * g.co * p];
        for (co, chunk) in dyn_.chunks(p).enumerate() {
            db.data_mut()[co] += chunk.iter().copied().sum();
        }
        let xn = &xin[n * g.ci * g.h * g.w..(n + 1) * g.ci * g.h * g.w];
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(&g, xn, &mut col);
            &col
        };
        // dW[co, k] += dY[co, p] * col[k, p]^T
        T::gemm(
            g.co,
            p,
            k,
            T::one(),
            dyn_,
            (p as isize, 1),
            cols,
            (1, p as isize),
            T::one(),
            dw.data_mut(),
            (k as isize, 1),
        );
        // dcol[k, p] = W^T[k, co] * dY[co, p]
        T::gemm(
            k,
            g.co,
            p,
            T::one(),
            w.data(),
            (1, k as isize),
            dyn_,
            (p as isize, 1),
            T::zero(),
            &mut dcol,
            (p as isize, 1),
        );
        let dxn = &mut dx.data_mut()[n * g.ci * g.h * g.w..(n + 1) * g.ci * g.h * g.w];
        if g.is_pointwise() {
            for (d, s) in dxn.iter_mut().zip(&dcol) {
                *d += *s;
            }
        } else {
            col2im(&g, &dcol, dxn);
        }
    }
    (dx, dw, db)
}

/// Strides into `b` when it is broadcast against `a`'s 4-axis shape.
pub(crate) fn broadcast_strides<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<[usize; 4]> {
    if b.shape().len() > a.shape().len() {
        return Err(GradError::Mismatch {
            op,
            axis: "rank",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let ad = a.dims4();
    let bd = b.dims4();
    let mut strides = [0; 4];
    let mut acc = 1;
    for ax in (0..4).rev() {
        if bd[ax] == ad[ax] {
            strides[ax] = if bd[ax] == 1 { 0 } else { acc };
        } else if bd[ax] == 1 {
            strides[ax] = 0;
        } else {
            const NAMES: [&str; 4] = ["batch", "channel", "height", "width"];
            return Err(GradError::Mismatch {
                op,
                axis: NAMES[ax],
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        acc *= bd[ax];
    }
    Ok(strides)
}

/// Calls `f(flat index in a, flat index in b)` for every element of `a`.
pub(crate) fn for_each_broadcast(dims: [usize; 4], strides: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let mut ia = 0;
    for n in 0..dims[0] {
        for c in 0..dims[1] {
            for y in 0..dims[2] {
                let base = n * strides[0] + c * strides[1] + y * strides[2];
                if strides[3] == 0 {
                    for _ in 0..dims[3] {
                        f(ia, base);
                        ia += 1;
                    }
                } else {
                    for x in 0..dims[3] {
                        f(ia, base + x * strides[3]);
                        ia += 1;
                    }
                }
            }
        }
    }
}

pub(crate) fn broadcast_binary<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(a.shape(), data);
    }
    let strides = broadcast_strides(op, a, b)?;
    let mut out = Tensor::zeros(a.shape());
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for_each_broadcast(a.dims4(), strides, |i, j| od[i] = f(ad[i], bd[j]));
    Ok(out)
}

/// Sums `grad` (shaped like `a`) down to `b`'s shape.
pub(crate) fn reduce_to<T: Real>(grad: &Tensor<T>, a: &Tensor<T>, b: &Tensor<T>, scale: impl Fn(usize, usize) -> T) -> Tensor<T> {
    let mut out = Tensor::zeros(b.shape());
    if a.shape() == b.shape() {
        let od = out.data_mut();
        for (i, g) in grad.data().iter().enumerate() {
            od[i] = *g * scale(i, i);
        }
        return out;
    }
    let strides = broadcast_strides("reduce", a, b).expect("validated in forward");
    let gd = grad.data();
    let od = out.data_mut();
    for_each_broadcast(a.dims4(), strides, |i, j| od[j] += gd[i] * scale(i, j));
    out
}

/// Layout of a softmax reduction: `outer` groups of `len` elements spaced
/// `inner` apart, repeated over `inner` offsets.
pub(crate) fn softmax_layout(dims: [usize; 4], channel: bool) -> (usize, usize, usize) {
    let [n, c, h, w] = dims;
    if channel {
        (n, c, h * w)
    } else {
        (n * c, h * w, 1)
    }
}

pub(crate) fn softmax_forward<T: Real>(x: &Tensor<T>, channel: bool) -> Tensor<T> {
    let (outer, len, inner) = softmax_layout(x.dims4(), channel);
    let mut out = Tensor::zeros(x.shape());
    let xd = x.data();
    let od = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let mut m = T::neg_infinity();
            for j in 0..len {
                m = m.max(xd[idx(j)]);
            }
            let mut s = T::zero();
            for j in 0..len {
                let e = (xd[idx(j)] - m).exp();
                od[idx(j)] = e;
                s += e;
            }
            for j in 0..len {
                od[idx(j)] = od[idx(j)] / s;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>, channel: bool) -> Tensor<T> {
    let (outer, len, inner) = softmax_layout(y.dims4(), channel);
    let mut dx = Tensor::zeros(y.shape());
    let (yd, gd) = (y.data(), dy.data());
    let dd = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                dot += yd[idx(j)] * gd[idx(j)];
            }
            for j in 0..len {
                dd[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
            }
        }
    }
    dx
}

/// Corner-aligned bilinear sample weights along one axis.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            let pos = if dst > 1 && src > 1 {
                o as f64 * (src - 1) as f64 / (dst - 1) as f64
            } else {
                0.0
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample_forward<T: Real>(x: &Tensor<T>, ho: usize, wo: usize) -> Tensor<T> {
    let [n, c, h, w] = x.dims4();
    if (h, w) == (ho, wo) {
        return x.clone();
    }
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        let dst = &mut od[plane * ho * wo..(plane + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * wo + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Real>(x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = [x_shape[0], x_shape[1], x_shape[2], x_shape[3]];
    let [_, _, ho, wo] = dy.dims4();
    if (h, w) == (ho, wo) {
        return dy.clone();
    }
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let mut dx = Tensor::zeros(x_shape);
    let gd = dy.data();
    let dd = dx.data_mut();
    for plane in 0..n * c {
        let g = &gd[plane * ho * wo..(plane + 1) * ho * wo];
        let d = &mut dd[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let v = g[oy * wo + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                d[y0 * w + x0] += top * (T::one() - fx);
                d[y0 * w + x1] += top * fx;
                d[y1 * w + x0] += bot * (T::one() - fx);
                d[y1 * w + x1] += bot * fx;
            }
        }
    }
    dx
}

/// NaN passes through so a broken prediction cannot hide behind the clamp.
pub(crate) fn clamp_prob<T: Real>(s: T, eps: T) -> T {
    if s.is_nan() {
        return s;
    }
    s.max(eps).min(T::one() - eps)
}

pub(crate) fn bce_sum<T: Real>(s: &Tensor<T>, y: &Tensor<T>, eps: T) -> T {
    let mut acc = T::zero();
    for (&p, &t) in s.data().iter().zip(y.data()) {
        let p = clamp_prob(p, eps);
        acc -= t * p.ln() + (T::one() - t) * (T::one() - p).ln();
    }
    acc
}

pub(crate) fn bce_backward<T: Real>(s: &Tensor<T>, y: &Tensor<T>, eps: T, dout: T) -> Tensor<T> {
    let data = s
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &t)| {
            if p < eps || p > T::one() - eps {
                T::zero()
            } else {
                dout * ((T::one() - t) / (T::one() - p) - t / p)
            }
        })
        .collect();
    Tensor::from_vec(s.shape(), data).expect("same shape")
}
