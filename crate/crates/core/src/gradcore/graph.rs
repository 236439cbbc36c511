use std::collections::HashMap;

use super::ops;
use super::params::ParameterSet;
use super::tensor::{Real, Tensor};
use super::{GradError, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoftmaxAxis {
    /// Normalize across channels at every (batch, y, x).
    Channel,
    /// Normalize across all pixels of every (batch, channel) plane.
    Spatial,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var, SoftmaxAxis),
    GlobalAvgPool(Var),
    Concat(Vec<Var>),
    Narrow {
        x: Var,
        start: usize,
        len: usize,
    },
    Gather {
        x: Var,
        rows: Vec<usize>,
    },
    Upsample {
        x: Var,
        h: usize,
        w: usize,
    },
    Reshape(Var, Vec<usize>),
    Sum(Var),
    Bce {
        s: Var,
        target: Tensor<T>,
        eps: T,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Tape of forward operations. Values are computed eagerly as operations
/// are recorded; [`Graph::replay`] recomputes them from the current leaves.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(Var, String)>,
    bound: HashMap<String, Var>,
}

/// Reverse-mode result: one optional gradient per recorded node.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: usize,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Number of operations the backward sweep visited.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Record a leaf holding `t`. Gradients are produced for every leaf;
    /// callers simply ignore those of constants.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a named parameter. Repeated calls with the same name
    /// return the same leaf.
    pub fn param(&mut self, params: &ParameterSet<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = params.value(name)?.clone();
        let v = self.constant(value);
        self.bindings.push((v, name.to_string()));
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameter leaves in binding order.
    pub fn bindings(&self) -> &[(Var, String)] {
        &self.bindings
    }

    /// Overwrite a leaf's value. Call [`Graph::replay`] afterwards to refresh
    /// dependent values.
    pub fn set_leaf(&mut self, v: Var, t: Tensor<T>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(GradError::Invalid {
                op: "set_leaf",
                detail: format!("node {} is not a leaf", v.0),
            });
        }
        if node.value.shape() != t.shape() {
            return Err(GradError::Mismatch {
                op: "set_leaf",
                axis: "shape",
                left: node.value.shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
        node.value = t;
        Ok(())
    }

    /// Recompute every non-leaf value in recording order.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = self.eval(&self.nodes[i].op)?;
            self.nodes[i].value = value;
        }
        Ok(())
    }

    fn push(&mut self, op: Op<T>) -> Result<Var> {
        let value = self.eval(&op)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn v(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn eval(&self, op: &Op<T>) -> Result<Tensor<T>> {
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::Conv2d { x, w, b, stride, pad } => {
                ops::conv2d_forward(self.v(*x), self.v(*w), b.map(|b| self.v(b)), *stride, *pad)?
            }
            Op::Add(a, b) => ops::broadcast_binary("add", self.v(*a), self.v(*b), |x, y| x + y)?,
            Op::Sub(a, b) => ops::broadcast_binary("sub", self.v(*a), self.v(*b), |x, y| x - y)?,
            Op::Mul(a, b) => ops::broadcast_binary("mul", self.v(*a), self.v(*b), |x, y| x * y)?,
            Op::Scale(a, c) => {
                let c = *c;
                self.v(*a).map(|x| x * c)
            }
            Op::Sigmoid(a) => self.v(*a).map(sigmoid),
            Op::Tanh(a) => self.v(*a).map(|x| x.tanh()),
            Op::Relu(a) => self.v(*a).map(|x| x.max(T::zero())),
            Op::Softmax(a, axis) => {
                let x = self.v(*a);
                ops::require_rank4("softmax", x)?;
                ops::softmax_forward(x, *axis == SoftmaxAxis::Channel)
            }
            Op::GlobalAvgPool(a) => {
                let x = self.v(*a);
                let [n, c, h, w] = ops::require_rank4("global_avg_pool", x)?;
                let inv = T::one() / T::from_f64((h * w) as f64);
                let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
                Tensor::from_vec(&[n, c, 1, 1], data)?
            }
            Op::Concat(parts) => self.eval_concat(parts)?,
            Op::Narrow { x, start, len } => {
                let x = self.v(*x);
                let [n, c, h, w] = ops::require_rank4("narrow", x)?;
                if *len == 0 || start + len > c {
                    return Err(GradError::Invalid {
                        op: "narrow",
                        detail: format!("channels {}..{} out of {}", start, start + len, c),
                    });
                }
                let plane = h * w;
                let mut data = Vec::with_capacity(n * len * plane);
                for b in 0..n {
                    let base = (b * c + start) * plane;
                    data.extend_from_slice(&x.data()[base..base + len * plane]);
                }
                Tensor::from_vec(&[n, *len, h, w], data)?
            }
            Op::Gather { x, rows } => {
                let x = self.v(*x);
                let n = x.shape()[0];
                if rows.is_empty() {
                    return Err(GradError::Empty { op: "gather" });
                }
                if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
                    return Err(GradError::Invalid {
                        op: "gather",
                        detail: format!("row {bad} out of {n}"),
                    });
                }
                let parts: Vec<Tensor<T>> = rows.iter().map(|&r| x.batch_rows(r, 1)).collect();
                Tensor::stack_rows(&parts.iter().collect::<Vec<_>>())?
            }
            Op::Upsample { x, h, w } => {
                let x = self.v(*x);
                ops::require_rank4("upsample", x)?;
                if *h == 0 || *w == 0 {
                    return Err(GradError::Invalid {
                        op: "upsample",
                        detail: "target size must be positive".into(),
                    });
                }
                ops::upsample_forward(x, *h, *w)
            }
            Op::Reshape(a, shape) => self.v(*a).reshape(shape)?,
            Op::Sum(a) => Tensor::scalar(self.v(*a).sum()),
            Op::Bce { s, target, eps } => {
                let s = self.v(*s);
                if s.shape() != target.shape() {
                    return Err(GradError::Mismatch {
                        op: "bce",
                        axis: "shape",
                        left: s.shape().to_vec(),
                        right: target.shape().to_vec(),
                    });
                }
                Tensor::scalar(ops::bce_sum(s, target, *eps))
            }
        })
    }

    fn eval_concat(&self, parts: &[Var]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or(GradError::Empty { op: "concat" })?;
        let [n, _, h, w] = ops::require_rank4("concat", self.v(*first))?;
        let mut total = 0;
        for p in parts {
            let [pn, pc, ph, pw] = ops::require_rank4("concat", self.v(*p))?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(GradError::Mismatch {
                    op: "concat",
                    axis: if pn != n { "batch" } else { "spatial" },
                    left: self.v(*first).shape().to_vec(),
                    right: self.v(*p).shape().to_vec(),
                });
            }
            total += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for p in parts {
                let t = self.v(*p);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        Tensor::from_vec(&[n, total, h, w], data)
    }

    // ---- recorded operations ----

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        self.push(Op::Conv2d { x, w, b, stride, pad })
    }

    /// `a + b`, with `b` broadcast over axes where it has extent 1.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    /// `a * b` elementwise, with `b` broadcast over axes where it has extent 1.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    pub fn softmax(&mut self, a: Var, axis: SoftmaxAxis) -> Result<Var> {
        self.push(Op::Softmax(a, axis))
    }

    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        self.push(Op::GlobalAvgPool(a))
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.push(Op::Concat(parts.to_vec()))
    }

    /// Channels `[start, start + len)`.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::Narrow { x, start, len })
    }

    /// Select rows of the batch axis (repeats allowed).
    pub fn gather(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        self.push(Op::Gather {
            x,
            rows: rows.to_vec(),
        })
    }

    /// Corner-aligned bilinear resize to `h x w`; identity at equal size.
    pub fn upsample(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        self.push(Op::Upsample { x, h, w })
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [_, _, h, w] = ops::require_rank4("upsample", self.v(x))?;
        self.upsample(x, 2 * h, 2 * w)
    }

    /// Same elements in row-major order under a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.v(a).len();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::from_f64(n as f64))
    }

    /// Summed binary cross entropy of probabilities `s` against a constant
    /// target, with `s` clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, s: Var, target: Tensor<T>, eps: T) -> Result<Var> {
        self.push(Op::Bce { s, target, eps })
    }

    // ---- reverse mode ----

    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        let shape = self.v(out).shape();
        if self.v(out).len() != 1 {
            return Err(GradError::NonScalarOutput(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::full(shape, T::one()));
        let mut visited = 0;
        for i in (0..self.nodes.len()).rev() {
            visited += 1;
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.backward_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads, visited })
    }

    fn backward_node(&self, i: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (dx, dw, db) = ops::conv2d_backward(self.v(*x), self.v(*w), dy, *stride, *pad);
                accumulate(&mut grads[x.0], dx);
                accumulate(&mut grads[w.0], dw);
                if let Some(b) = b {
                    accumulate(&mut grads[b.0], db.reshape(self.v(*b).shape()).expect("bias shape"));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                accumulate(&mut grads[a.0], dy.clone());
                let sign = if neg { -T::one() } else { T::one() };
                let db = ops::reduce_to(dy, self.v(*a), self.v(*b), |_, _| sign);
                accumulate(&mut grads[b.0], db);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                let da = ops::broadcast_binary("mul", dy, bv, |g, s| g * s).expect("validated");
                let ad = av.data();
                let db = ops::reduce_to(dy, av, bv, |ia, _| ad[ia]);
                accumulate(&mut grads[a.0], da);
                accumulate(&mut grads[b.0], db);
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(&mut grads[a.0], dy.map(|g| g * c));
            }
            Op::Sigmoid(a) => {
                let d = zip_map(dy, y, |g, s| g * s * (T::one() - s));
                accumulate(&mut grads[a.0], d);
            }
            Op::Tanh(a) => {
                let d = zip_map(dy, y, |g, t| g * (T::one() - t * t));
                accumulate(&mut grads[a.0], d);
            }
            Op::Relu(a) => {
                let d = zip_map(dy, self.v(*a), |g, x| if x > T::zero() { g } else { T::zero() });
                accumulate(&mut grads[a.0], d);
            }
            Op::Softmax(a, axis) => {
                let d = ops::softmax_backward(y, dy, *axis == SoftmaxAxis::Channel);
                accumulate(&mut grads[a.0], d);
            }
            Op::GlobalAvgPool(a) => {
                let x = self.v(*a);
                let [_, _, h, w] = x.dims4();
                let inv = T::one() / T::from_f64((h * w) as f64);
                let mut d = Tensor::zeros(x.shape());
                for (plane, g) in d.data_mut().chunks_mut(h * w).zip(dy.data()) {
                    plane.fill(*g * inv);
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::Concat(parts) => {
                let [n, total, h, w] = dy.dims4();
                let plane = h * w;
                let mut offset = 0;
                for p in parts {
                    let c = self.v(*p).shape()[1];
                    let mut data = Vec::with_capacity(n * c * plane);
                    for b in 0..n {
                        let base = (b * total + offset) * plane;
                        data.extend_from_slice(&dy.data()[base..base + c * plane]);
                    }
                    offset += c;
                    accumulate(&mut grads[p.0], Tensor::from_vec(self.v(*p).shape(), data).expect("shape"));
                }
            }
            Op::Narrow { x, start, len } => {
                let xv = self.v(*x);
                let [n, c, h, w] = xv.dims4();
                let plane = h * w;
                let mut d = Tensor::zeros(xv.shape());
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    d.data_mut()[dst..dst + len * plane].copy_from_slice(&dy.data()[src..src + len * plane]);
                }
                accumulate(&mut grads[x.0], d);
            }
            Op::Gather { x, rows } => {
                let xv = self.v(*x);
                let per = xv.len() / xv.shape()[0];
                let mut d = Tensor::zeros(xv.shape());
                for (k, &r) in rows.iter().enumerate() {
                    let dst = &mut d.data_mut()[r * per..(r + 1) * per];
                    for (a, g) in dst.iter_mut().zip(&dy.data()[k * per..(k + 1) * per]) {
                        *a += *g;
                    }
                }
                accumulate(&mut grads[x.0], d);
            }
            Op::Upsample { x, .. } => {
                let d = ops::upsample_backward(self.v(*x).shape(), dy);
                accumulate(&mut grads[x.0], d);
            }
            Op::Reshape(a, _) => {
                accumulate(&mut grads[a.0], dy.reshape(self.v(*a).shape()).expect("same count"));
            }
            Op::Sum(a) => {
                let g = dy.item();
                accumulate(&mut grads[a.0], Tensor::full(self.v(*a).shape(), g));
            }
            Op::Bce { s, target, eps } => {
                let d = ops::bce_backward(self.v(*s), target, *eps, dy.item());
                accumulate(&mut grads[s.0], d);
            }
        }
    }

    /// Add the gradients of every bound parameter leaf into `params`.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, params: &mut ParameterSet<T>) -> Result<()> {
        for (v, name) in &self.bindings {
            if let Some(g) = grads.get(*v) {
                let p = params.get_mut(name)?;
                for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
        }
        Ok(())
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}
