//! Two-stream saliency network over an all-focus image and its focal stack.
//!
//! Focal slices are stacked into the batch axis (`row = sample * k + slice`)
//! so one set of encoder weights serves every slice.

mod attention;
mod convlstm;
mod encoder;
mod heads;

pub use attention::{channel_attention, pixel_guidance, slice_rows};
pub use convlstm::{ConvLstm, LstmState};
pub use encoder::{encode, Features};
pub use heads::heads;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gradcore::{GradError, Graph, ParameterSet, Real, Result, Tensor, Var};
use crate::synthdata::TrainingView;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum PixelAttention {
    /// Softmax over the spatial extent of each map.
    #[default]
    Softmax,
    /// Independent per-pixel sigmoid.
    Sigmoid,
}

/// Architecture descriptor; stored next to every checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct NetConfig {
    pub k: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channel width of each encoder level, finest first.
    pub widths: Vec<usize>,
    pub convs_per_stage: usize,
    pub head_width: usize,
    pub refine_kernel: usize,
    pub head_kernel: usize,
    pub pixel_attention: PixelAttention,
    /// Attention fusion of the focal stack and pixel guidance. When off,
    /// slice features are averaged and the all-focus stream is left as is.
    pub mffo: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            k: 4,
            in_channels: 1,
            height: 64,
            width: 64,
            widths: vec![16, 32, 64, 64],
            convs_per_stage: 2,
            head_width: 16,
            refine_kernel: 3,
            head_kernel: 3,
            pixel_attention: PixelAttention::Softmax,
            mffo: true,
        }
    }
}

impl NetConfig {
    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(GradError::Invalid { op: "net_config", detail });
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("widths {:?} must be non-empty and positive", self.widths));
        }
        let div = 1usize << self.levels();
        if !self.height.is_multiple_of(div) || !self.width.is_multiple_of(div) || self.height == 0 || self.width == 0 {
            return bad(format!(
                "input {}x{} not divisible by {} for {} levels",
                self.height,
                self.width,
                div,
                self.levels()
            ));
        }
        if self.k == 0 || self.in_channels == 0 || self.head_width == 0 {
            return bad("k, in_channels and head_width must be positive".into());
        }
        if !(1..=2).contains(&self.convs_per_stage) {
            return bad(format!("convs_per_stage {} must be 1 or 2", self.convs_per_stage));
        }
        if self.refine_kernel.is_multiple_of(2) || self.head_kernel.is_multiple_of(2) {
            return bad("recurrent kernels must be odd".into());
        }
        Ok(())
    }

    /// Spatial size of encoder level `l` (0-based, finest first).
    pub fn level_size(&self, l: usize) -> (usize, usize) {
        (self.height >> (l + 1), self.width >> (l + 1))
    }

    /// `(name, shape)` of every parameter, in a fixed order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, co: usize, ci: usize, k: usize, bias: bool| {
            out.push((format!("{name}.w"), vec![co, ci, k, k]));
            if bias {
                out.push((format!("{name}.b"), vec![co]));
            }
        };
        for stream in ["r", "f"] {
            let mut ci = self.in_channels;
            for (l, &c) in self.widths.iter().enumerate() {
                conv(format!("enc.{stream}.l{l}.c0"), c, ci, 3, true);
                if self.convs_per_stage == 2 {
                    conv(format!("enc.{stream}.l{l}.c1"), c, c, 3, true);
                }
                ci = c;
            }
        }
        if self.mffo {
            for (l, &c) in self.widths.iter().enumerate() {
                conv(format!("att.l{l}.r"), 1, c, 1, true);
                conv(format!("att.l{l}.s"), 1, c, 1, true);
                // All-focus context term of the slice logits.
                conv(format!("att.l{l}.g"), 1, c, 1, false);
                conv(format!("ref.l{l}"), 4 * c, 2 * c, self.refine_kernel, true);
                conv(format!("pix.l{l}"), 1, c, 3, true);
            }
        }
        let hw = self.head_width;
        for stream in ["f", "r"] {
            for (l, &c) in self.widths.iter().enumerate() {
                conv(format!("head.{stream}.proj.l{l}"), hw, c, 1, true);
            }
            conv(format!("head.{stream}.lstm"), 4 * hw, 2 * hw, self.head_kernel, true);
            conv(format!("head.{stream}.out"), 1, hw, 1, true);
        }
        conv("fuse".into(), 1, 2, 3, true);
        out
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParameterSet<T>> {
        self.validate()?;
        let mut rng = crate::synthdata::seeded_rng(seed);
        let shapes = self.parameter_shapes();
        let mut params = ParameterSet::new();
        for (name, shape) in &shapes {
            let fan_in = if shape.len() == 4 {
                shape[1] * shape[2] * shape[3]
            } else {
                let wname = format!("{}.w", &name[..name.len() - 2]);
                let w = &shapes.iter().find(|(n, _)| *n == wname).expect("bias has weight").1;
                w[1] * w[2] * w[3]
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let count: usize = shape.iter().product();
            let data = (0..count).map(|_| T::from_f64(rng.random_range(-bound..=bound))).collect();
            params.insert(name.clone(), Tensor::from_vec(shape, data)?)?;
        }
        Ok(params)
    }
}

/// Network inputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchInputs<T> {
    /// `[B, c, H, W]`
    pub all_focus: Tensor<T>,
    /// `[B * k, c, H, W]`, sample-major.
    pub slices: Tensor<T>,
    pub batch: usize,
    pub k: usize,
}

/// 8-bit intensity to the zero-centred network range [-1, 1].
pub fn input_value(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

impl<T: Real> BatchInputs<T> {
    pub fn from_views(views: &[TrainingView<'_>]) -> Result<Self> {
        let first = views.first().ok_or(GradError::Empty { op: "batch" })?;
        let (c, h, w) = (first.all_focus.channels, first.all_focus.height, first.all_focus.width);
        let k = first.slices.len();
        let mut af = Vec::with_capacity(views.len() * c * h * w);
        let mut sl = Vec::with_capacity(views.len() * k * c * h * w);
        for v in views {
            if v.slices.len() != k || (v.all_focus.channels, v.all_focus.height, v.all_focus.width) != (c, h, w) {
                return Err(GradError::Invalid {
                    op: "batch",
                    detail: format!("sample `{}` differs in resolution or slice count", v.id),
                });
            }
            af.extend(v.all_focus.data.iter().map(|&b| T::from_f64(input_value(b))));
            for s in v.slices {
                sl.extend(s.data.iter().map(|&b| T::from_f64(input_value(b))));
            }
        }
        Ok(Self {
            all_focus: Tensor::from_vec(&[views.len(), c, h, w], af)?,
            slices: Tensor::from_vec(&[views.len() * k, c, h, w], sl)?,
            batch: views.len(),
            k,
        })
    }
}

/// The two initial predictions, each `[B, 1, H, W]` in (0, 1).
#[derive(Clone, Copy, Debug)]
pub struct NetOutput {
    pub s_f: Var,
    pub s_r: Var,
}

/// Encode, fuse the focal stack into the all-focus stream and run both heads.
pub fn forward<T: Real>(g: &mut Graph<T>, params: &ParameterSet<T>, cfg: &NetConfig, input: &BatchInputs<T>) -> Result<NetOutput> {
    let [_, c, h, w] = input.all_focus.dims4();
    if (c, h, w) != (cfg.in_channels, cfg.height, cfg.width) || input.k != cfg.k {
        return Err(GradError::Invalid {
            op: "forward",
            detail: format!(
                "input {}x{}x{} with k={} does not match network {}x{}x{} with k={}",
                c, h, w, input.k, cfg.in_channels, cfg.height, cfg.width, cfg.k
            ),
        });
    }
    let af = g.constant(input.all_focus.clone());
    let sl = g.constant(input.slices.clone());
    let feats = encode(g, params, cfg, af, sl)?;
    let (b, k) = (input.batch, input.k);
    let mut f_ref = Vec::with_capacity(cfg.levels());
    let mut r_ref = Vec::with_capacity(cfg.levels());
    for l in 0..cfg.levels() {
        let (r, f) = (feats.r[l], feats.f[l]);
        if cfg.mffo {
            let (_, weighted) = channel_attention(g, params, &format!("att.l{l}"), r, f, k)?;
            let lstm = ConvLstm::new(format!("ref.l{l}"), cfg.widths[l], cfg.refine_kernel);
            let refined = refine_slices(g, params, &lstm, weighted, b, k)?;
            let guided = pixel_guidance(g, params, &format!("pix.l{l}"), r, refined, cfg.pixel_attention)?;
            f_ref.push(refined);
            r_ref.push(guided);
        } else {
            f_ref.push(slice_mean(g, f, b, k)?);
            r_ref.push(r);
        }
    }
    let (s_f, s_r) = heads(g, params, cfg, &f_ref, &r_ref)?;
    Ok(NetOutput { s_f, s_r })
}

/// Run the recurrence over slices `0..k` as time steps; returns the last
/// hidden state.
pub fn refine_slices<T: Real>(
    g: &mut Graph<T>,
    params: &ParameterSet<T>,
    cell: &ConvLstm,
    weighted: Var,
    batch: usize,
    k: usize,
) -> Result<Var> {
    let mut state: Option<LstmState> = None;
    for i in 0..k {
        let x = g.gather(weighted, &slice_rows(batch, k, i))?;
        state = Some(cell.step(g, params, x, state)?);
    }
    Ok(state.expect("k >= 1").h)
}

fn slice_mean<T: Real>(g: &mut Graph<T>, f: Var, batch: usize, k: usize) -> Result<Var> {
    let mut acc = g.gather(f, &slice_rows(batch, k, 0))?;
    for i in 1..k {
        let x = g.gather(f, &slice_rows(batch, k, i))?;
        acc = g.add(acc, x)?;
    }
    g.scale(acc, T::one() / T::from_f64(k as f64))
}

#[cfg(test)]
mod tests;
