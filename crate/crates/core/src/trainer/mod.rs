//! Training loop: forward both streams, fuse them under the confidence
//! weights, apply the penalty loss to all three predictions, step Adam and
//! update the forgetting state from this epoch's initial predictions.

mod augment;
mod checkpoint;
mod sweep;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use sweep::{delta_sweep, write_sweep_csv, SweepRow, DELTA_GRID};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evalkit::{EvalError, MetricReport};
use crate::forgetting::{guided_fuse, transform_matrix, ForgettingConfig, ForgettingError, ForgettingState};
use crate::fusion::{forward, BatchInputs, NetConfig};
use crate::gradcore::{GradError, Graph, ParameterSet, Tensor};
use crate::noiseloss::{penalty_loss, LossError, PeerPairs, PenaltyConfig};
use crate::synthdata::{mix_seed, seeded_rng, FocalStackSample, TrainingView};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("data does not fit the run: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}; last good checkpoint: {}", .checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string()))]
    Diverged { epoch: usize, checkpoint: Option<PathBuf> },
    #[error("checkpoint was written for config {found}, this run has {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Graph(#[from] GradError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Forgetting(#[from] ForgettingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Which components are active.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Separate streams, slice averaging, concatenation fusion, plain CE.
    Baseline,
    /// Adds attention fusion of the focal stack.
    Mffo,
    /// Adds forgetting-guided fusion.
    Pfm,
    /// Adds the cross-scene penalty.
    Ploss,
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Baseline, Variant::Mffo, Variant::Pfm, Variant::Ploss, Variant::Full];

    pub fn mffo(self) -> bool {
        matches!(self, Variant::Mffo | Variant::Full)
    }

    pub fn pfm(self) -> bool {
        matches!(self, Variant::Pfm | Variant::Full)
    }

    pub fn ploss(self) -> bool {
        matches!(self, Variant::Ploss | Variant::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Mffo => "mffo",
            Variant::Pfm => "pfm",
            Variant::Ploss => "ploss",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| TrainError::Config(format!("unknown variant `{s}` (expected baseline, mffo, pfm, ploss or full)")))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip: bool,
    /// Random translation with edge clamping.
    pub crop: bool,
    /// Quarter turns; square inputs only.
    pub rotate: bool,
}

impl AugmentConfig {
    pub fn any(&self) -> bool {
        self.flip || self.crop || self.rotate
    }
}

/// Network size used for desk-scale runs.
pub fn desk_net() -> NetConfig {
    NetConfig {
        widths: vec![4, 8, 8, 8],
        convs_per_stage: 1,
        head_width: 4,
        ..NetConfig::default()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub forgetting: ForgettingConfig,
    pub penalty: PenaltyConfig,
    pub augment: AugmentConfig,
    pub net: NetConfig,
    /// Validate every this many epochs (and always after the last); 0
    /// validates only after the last.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            seed: 0,
            variant: Variant::Full,
            forgetting: ForgettingConfig::default(),
            penalty: PenaltyConfig::default(),
            augment: AugmentConfig::default(),
            net: desk_net(),
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("Adam moments must lie in [0, 1) with positive epsilon".into());
        }
        self.penalty.validate()?;
        if self.batch_size < self.penalty.min_batch() {
            return bad(format!(
                "batch size {} is below the {} samples peer pairs need",
                self.batch_size,
                self.penalty.min_batch()
            ));
        }
        self.forgetting.validate()?;
        self.effective_net().validate()?;
        Ok(())
    }

    /// Network with attention fusion switched by the variant.
    pub fn effective_net(&self) -> NetConfig {
        NetConfig {
            mffo: self.variant.mffo(),
            ..self.net.clone()
        }
    }

    pub fn effective_alpha(&self) -> f64 {
        if self.variant.ploss() {
            self.penalty.alpha
        } else {
            0.0
        }
    }

    /// Augmentation is off whenever forgetting is tracked, so every pixel
    /// keeps its identity across epochs.
    pub fn effective_augment(&self) -> AugmentConfig {
        if self.variant.pfm() {
            AugmentConfig::default()
        } else {
            self.augment
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

/// One row of the run log. Losses are per pixel and per sample, summed
/// over the three supervised predictions.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Matched cross entropy.
    pub ce: f64,
    /// Mean mismatched cross entropy before scaling by alpha.
    pub penalty: f64,
    pub val_f: Option<f64>,
    pub val_mae: Option<f64>,
    /// Forgetting events counted this epoch.
    pub events: u64,
    pub events_total: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub variant: Variant,
    pub config_hash: String,
    pub forgetting_enabled: bool,
    pub epochs: Vec<EpochRecord>,
}

impl RunRecord {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_f(&self) -> Option<f64> {
        self.last().and_then(|e| e.val_f)
    }

    pub fn final_mae(&self) -> Option<f64> {
        self.last().and_then(|e| e.val_mae)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Adam with bias correction; moments are kept per parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<f32>>,
    pub v: BTreeMap<String, Tensor<f32>>,
}

impl Adam {
    pub fn new(params: &ParameterSet<f32>) -> Self {
        let zeros = |p: &ParameterSet<f32>| {
            p.iter()
                .map(|(n, p)| (n.to_string(), Tensor::zeros(p.value.shape())))
                .collect::<BTreeMap<_, _>>()
        };
        Self {
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// Apply accumulated gradients, then clear them.
    pub fn update(&mut self, params: &mut ParameterSet<f32>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = (cfg.lr / c1) as f32;
        let (b1, b2, c2, eps) = (b1 as f32, b2 as f32, c2 as f32, cfg.adam_eps as f32);
        for (name, p) in params.iter_mut() {
            let m = self.m.get_mut(name).expect("moment per parameter").data_mut();
            let v = self.v.get_mut(name).expect("moment per parameter").data_mut();
            let (value, grad) = (p.value.data_mut(), p.grad.data_mut());
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                value[i] -= lr * m[i] / ((v[i] / c2).sqrt() + eps);
                grad[i] = 0.0;
            }
        }
    }
}

/// Where and how often to write checkpoints.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Write `epoch_NNN` every this many epochs; 0 writes only `final`.
    pub checkpoint_every: usize,
    /// Stop after this many completed epochs (for staged runs).
    pub stop_after: Option<usize>,
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

fn check_data(train: &[TrainingView<'_>], eval: &[FocalStackSample], cfg: &TrainConfig) -> Result<()> {
    let net = &cfg.net;
    let need = cfg.batch_size.max(cfg.penalty.min_batch());
    if train.len() < need {
        return Err(TrainError::Data(format!("{} training samples, need at least {need}", train.len())));
    }
    let fits = |id: &str, c: usize, h: usize, w: usize, k: usize| {
        if (c, h, w, k) != (net.in_channels, net.height, net.width, net.k) {
            Err(TrainError::Data(format!(
                "sample `{id}` is {c}x{h}x{w} with k={k}, network expects {}x{}x{} with k={}",
                net.in_channels, net.height, net.width, net.k
            )))
        } else {
            Ok(())
        }
    };
    for v in train {
        fits(v.id, v.all_focus.channels, v.all_focus.height, v.all_focus.width, v.slices.len())?;
    }
    for s in eval {
        fits(&s.id, s.all_focus.channels, s.all_focus.height, s.all_focus.width, s.slices.len())?;
    }
    Ok(())
}

/// Batches of a permutation; a short tail joins the previous batch so every
/// batch can supply peer pairs.
fn batches(order: &[usize], size: usize, min: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < min) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

fn labels_f32(views: &[TrainingView<'_>]) -> Result<Tensor<f32>> {
    let first = views[0].noisy;
    let mut data = Vec::with_capacity(views.len() * first.len());
    for v in views {
        data.extend(v.noisy.data.iter().map(|&b| b as f32));
    }
    Ok(Tensor::from_vec(&[views.len(), 1, first.height, first.width], data)?)
}

/// Seed of a per-epoch random stream.
fn epoch_seed(seed: u64, epoch: usize, stream: u64) -> u64 {
    mix_seed(mix_seed(seed, 0x5eed_0000 + stream), epoch as u64)
}

const INIT_STREAM: u64 = 0xfeed;

/// Fuse predictions `s_i` of a batch under unit confidence weights.
pub fn predict(params: &ParameterSet<f32>, net: &NetConfig, views: &[TrainingView<'_>]) -> Result<Vec<Vec<f64>>> {
    let input = BatchInputs::<f32>::from_views(views)?;
    let mut g = Graph::new();
    let out = forward(&mut g, params, net, &input)?;
    let shape = [views.len(), 1, net.height, net.width];
    let ones = Tensor::full(&shape, 1.0f32);
    let s = guided_fuse(&mut g, params, out.s_f, out.s_r, ones.clone(), ones, (net.height, net.width))?;
    let n = net.height * net.width;
    Ok(g.value(s).data().chunks(n).map(|c| c.iter().map(|&v| v as f64).collect()).collect())
}

/// Predictions for every sample, in order, batched by `batch`.
pub fn predict_all(params: &ParameterSet<f32>, net: &NetConfig, samples: &[FocalStackSample], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let views: Vec<TrainingView<'_>> = chunk.iter().map(|s| s.training_view()).collect();
        out.extend(predict(params, net, &views)?);
    }
    Ok(out)
}

/// Metrics of a parameter set on an evaluation corpus.
pub fn evaluate(params: &ParameterSet<f32>, net: &NetConfig, samples: &[FocalStackSample], batch: usize) -> Result<MetricReport> {
    let preds = predict_all(params, net, samples, batch)?;
    Ok(MetricReport::compute(
        samples.iter().zip(&preds).map(|(s, p)| (s.id.as_str(), p.as_slice(), s.clean_mask())),
    )?)
}

/// Fresh initial state of a run.
pub fn initial_checkpoint(train: &[TrainingView<'_>], cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let net = cfg.effective_net();
    let params = net.init_params::<f32>(mix_seed(cfg.seed, INIT_STREAM))?;
    let forgetting = cfg
        .variant
        .pfm()
        .then(|| ForgettingState::new(train.iter().map(|v| v.id), net.height, net.width));
    Ok(Checkpoint {
        meta: CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            config_hash: cfg.hash(),
            epoch: 0,
            adam_step: 0,
            config: cfg.clone(),
            record: Vec::new(),
        },
        adam: Adam::new(&params),
        params,
        forgetting,
    })
}

pub fn train(train: &[TrainingView<'_>], eval: &[FocalStackSample], cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let start = initial_checkpoint(train, cfg)?;
    resume(train, eval, cfg, start, opts)
}

/// Run one variant with everything else shared.
pub fn ablation(
    train_set: &[TrainingView<'_>],
    eval: &[FocalStackSample],
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<RunRecord> {
    let cfg = TrainConfig { variant, ..cfg.clone() };
    Ok(train(train_set, eval, &cfg, &TrainOptions::default())?.record)
}

/// Continue a run from a checkpoint of the same config.
pub fn resume(
    train: &[TrainingView<'_>],
    eval: &[FocalStackSample],
    cfg: &TrainConfig,
    mut ckpt: Checkpoint,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    if ckpt.meta.config_hash != hash {
        return Err(TrainError::ConfigMismatch {
            expected: hash,
            found: ckpt.meta.config_hash.clone(),
        });
    }
    check_data(train, eval, cfg)?;
    if let Some(st) = &ckpt.forgetting {
        let mut ids: Vec<&str> = train.iter().map(|v| v.id).collect();
        ids.sort_unstable();
        if st.ids().ne(ids.iter().copied()) {
            return Err(TrainError::Data("forgetting state does not cover exactly the training ids".into()));
        }
    }
    let net = cfg.effective_net();
    let (h, w) = (net.height, net.width);
    let alpha = cfg.effective_alpha();
    let augment = cfg.effective_augment();
    let pixels = (train.len() * h * w) as f64;
    let stop = opts.stop_after.unwrap_or(cfg.epochs).min(cfg.epochs);
    let mut last_good: Option<PathBuf> = None;

    while ckpt.meta.epoch < stop {
        let epoch = ckpt.meta.epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeded_rng(epoch_seed(cfg.seed, epoch, 1)));
        let mut pair_rng = seeded_rng(epoch_seed(cfg.seed, epoch, 2));
        let mut aug_rng = seeded_rng(epoch_seed(cfg.seed, epoch, 3));
        let (mut loss_sum, mut ce_sum, mut pen_sum, mut events) = (0.0, 0.0, 0.0, 0u64);

        for idx in batches(&order, cfg.batch_size, cfg.penalty.min_batch()) {
            let views: Vec<TrainingView<'_>> = idx.iter().map(|&i| train[i]).collect();
            let ids: Vec<&str> = views.iter().map(|v| v.id).collect();
            let mut input = BatchInputs::<f32>::from_views(&views)?;
            let mut labels = labels_f32(&views)?;
            if augment.any() {
                augment::augment_batch(&augment, &mut input.all_focus, &mut input.slices, &mut labels, input.k, &mut aug_rng);
            }
            let (m_f, m_r) = match &ckpt.forgetting {
                Some(st) => st.batch_weights::<f32>(&ids, cfg.forgetting.a)?,
                None => {
                    let ones = Tensor::full(labels.shape(), 1.0f32);
                    (ones.clone(), ones)
                }
            };
            let pairs = if alpha > 0.0 {
                PeerPairs::sample(views.len(), &cfg.penalty, &mut pair_rng)?
            } else {
                PeerPairs { pairs: Vec::new() }
            };

            let mut g = Graph::new();
            let out = forward(&mut g, &ckpt.params, &net, &input)?;
            let s_i = guided_fuse(&mut g, &ckpt.params, out.s_f, out.s_r, m_f, m_r, (h, w))?;
            let mut total = None;
            let mut value = 0.0;
            for s in [s_i, out.s_f, out.s_r] {
                let parts = penalty_loss(&mut g, s, &labels, &pairs, alpha)?;
                value += g.value(parts.total).item() as f64;
                ce_sum += g.value(parts.matched).item() as f64;
                if let Some(m) = parts.mismatched {
                    pen_sum += g.value(m).item() as f64;
                }
                total = Some(match total {
                    None => parts.total,
                    Some(t) => g.add(t, parts.total)?,
                });
            }
            let total = total.expect("three terms");
            if !value.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    checkpoint: last_good,
                });
            }
            loss_sum += value;
            let grads = g.backward(total)?;
            g.accumulate_param_grads(&grads, &mut ckpt.params)?;
            if ckpt.params.iter().any(|(_, p)| !p.grad.all_finite()) {
                return Err(TrainError::Diverged {
                    epoch,
                    checkpoint: last_good,
                });
            }
            ckpt.adam.update(&mut ckpt.params, cfg);

            if let Some(st) = ckpt.forgetting.as_mut() {
                let n = h * w;
                let (sf, sr) = (g.value(out.s_f).data(), g.value(out.s_r).data());
                let yd = labels.data();
                for (b, id) in ids.iter().enumerate() {
                    let y = &yd[b * n..(b + 1) * n];
                    let tf = transform_matrix(&sf[b * n..(b + 1) * n], y, cfg.forgetting.delta);
                    let tr = transform_matrix(&sr[b * n..(b + 1) * n], y, cfg.forgetting.delta);
                    let ev = st.update(id, epoch as u32, tf, tr)?;
                    events += ev.focal + ev.all_focus;
                }
            }
        }

        let last_epoch = epoch + 1 == cfg.epochs;
        let validate = !eval.is_empty() && (last_epoch || (cfg.eval_every > 0 && (epoch + 1).is_multiple_of(cfg.eval_every)));
        let metrics = if validate {
            Some(evaluate(&ckpt.params, &net, eval, cfg.batch_size)?)
        } else {
            None
        };
        let row = EpochRecord {
            epoch,
            loss: loss_sum / pixels,
            ce: ce_sum / pixels,
            penalty: pen_sum / pixels,
            val_f: metrics.as_ref().map(|m| m.mean_f),
            val_mae: metrics.as_ref().map(|m| m.mean_mae),
            events,
            events_total: ckpt.forgetting.as_ref().map_or(0, |s| s.total_events()),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} ce {:.5} penalty {:.5} F {:?} MAE {:?} events {}",
            row.loss,
            row.ce,
            row.penalty,
            row.val_f,
            row.val_mae,
            row.events
        );
        ckpt.meta.record.push(row);
        ckpt.meta.epoch += 1;
        ckpt.meta.adam_step = ckpt.adam.step;

        if let Some(dir) = &opts.checkpoint_dir {
            let done = ckpt.meta.epoch;
            if opts.checkpoint_every > 0 && done.is_multiple_of(opts.checkpoint_every) {
                let p = dir.join(format!("epoch_{done:03}"));
                ckpt.write(&p)?;
                last_good = Some(p);
            }
        }
    }

    if let Some(dir) = &opts.checkpoint_dir {
        ckpt.write(&dir.join("final"))?;
    }
    let record = RunRecord {
        variant: cfg.variant,
        config_hash: hash,
        forgetting_enabled: ckpt.forgetting.is_some(),
        epochs: ckpt.meta.record.clone(),
    };
    Ok(TrainOutcome { record, checkpoint: ckpt })
}

pub(crate) fn io_error(path: &Path, e: impl fmt::Display) -> TrainError {
    TrainError::Checkpoint {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

#[cfg(test)]
mod tests;
