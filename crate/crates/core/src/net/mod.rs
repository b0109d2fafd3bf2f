//! The enhancement GAN: dual-encoder generator with per-stage audio-visual
//! fusion, an embedding bottleneck, a skip-connected deconvolution decoder,
//! and the conditional least-squares discriminator with its losses.

mod discriminator;
mod generator;
mod loss;

pub use discriminator::Discriminator;
pub use generator::Generator;
pub use loss::{d_loss, g_loss, GLossNodes, LossValues};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{NodeId, ParamKind, ParamStore, Tape, Tensor};

/// Leaky-ReLU slope used throughout both networks.
pub const LRELU_SLOPE: f64 = 0.2;
/// Batch-norm running statistics keep 0.9 of their previous value.
pub const BN_MOMENTUM: f64 = 0.9;

/// Encoder layer table: filter counts, kernel sizes, audio strides and
/// video pool windows for the ten convolution layers (two per stage).
pub const AUDIO_FILTERS: [usize; 10] = [64, 64, 128, 128, 256, 256, 512, 512, 1024, 1024];
pub const FILTER_SIZES: [(usize, usize); 10] =
    [(5, 5), (4, 4), (4, 4), (4, 4), (2, 2), (2, 2), (2, 2), (2, 2), (2, 2), (2, 2)];
pub const AUDIO_STRIDES: [(usize, usize); 10] =
    [(2, 2), (1, 1), (2, 2), (1, 1), (2, 1), (1, 1), (2, 1), (1, 1), (1, 5), (1, 1)];
pub const VIDEO_POOLS: [(usize, usize); 10] =
    [(2, 4), (1, 2), (2, 2), (1, 1), (2, 1), (1, 1), (2, 1), (1, 1), (1, 5), (1, 1)];

/// Audio feature input extent (mel bands x frames).
pub const AUDIO_IN: (usize, usize) = (80, 20);
/// Video input extent per frame.
pub const VIDEO_IN: (usize, usize) = (80, 80);
/// Discriminator conv ladder channels (kernel 4x4, stride (2,2) each).
pub const DISC_FILTERS: [usize; 4] = [64, 128, 256, 512];

/// Model-shape knobs. `width_scale` divides every channel count by
/// `2^width_scale` (0 = the full published widths); `latent_noise` appends
/// a standard-normal channel to the audio input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct NetConfig {
    pub width_scale: u32,
    pub latent_noise: bool,
}

impl NetConfig {
    pub fn with_width_scale(width_scale: u32) -> Self {
        NetConfig { width_scale, latent_noise: false }
    }

    /// Scaled channel count, clamped to at least 1.
    pub fn ch(&self, full: usize) -> usize {
        (full >> self.width_scale).max(1)
    }

    pub fn audio_in_channels(&self) -> usize {
        if self.latent_noise {
            2
        } else {
            1
        }
    }

    /// Flattened single-stream width entering the embedding bottleneck.
    pub fn embedding_width(&self) -> usize {
        self.ch(AUDIO_FILTERS[9]) * 5
    }

    /// Trainable parameter count of the two fully connected embedding
    /// layers, by construction.
    pub fn embedding_param_count(&self) -> usize {
        let w = self.embedding_width();
        (2 * w) * w + w + w * w + w
    }
}

/// Per-stage (channels, audio HxW, video HxW) implied by the layer table,
/// computed by pure ceil-division arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePlan {
    pub channels: usize,
    pub audio_hw: (usize, usize),
    pub video_hw: (usize, usize),
}

pub fn encoder_plan(cfg: &NetConfig) -> [StagePlan; 5] {
    let mut audio = AUDIO_IN;
    let mut video = VIDEO_IN;
    let mut out = [StagePlan { channels: 0, audio_hw: (0, 0), video_hw: (0, 0) }; 5];
    for stage in 0..5 {
        for layer in [2 * stage, 2 * stage + 1] {
            let (sh, sw) = AUDIO_STRIDES[layer];
            audio = (audio.0.div_ceil(sh), audio.1.div_ceil(sw));
            let (ph, pw) = VIDEO_POOLS[layer];
            video = (video.0.div_ceil(ph), video.1.div_ceil(pw));
        }
        out[stage] = StagePlan { channels: cfg.ch(AUDIO_FILTERS[2 * stage + 1]), audio_hw: audio, video_hw: video };
    }
    out
}

/// Whether batch-norm layers use batch statistics (training) or the stored
/// running statistics (inference). `update_stats` controls whether the pass
/// refreshes the running buffers, so a frozen network can still be run in
/// train mode without mutating its state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { update_stats: bool },
    Eval,
}

/// Pending running-stat refresh produced by a train-mode forward.
pub struct BnUpdate<T: Scalar> {
    pub name: String,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

/// Applies collected batch statistics to the store's running buffers.
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) -> Result<()> {
    let keep = T::cast(BN_MOMENTUM);
    let take = T::one() - keep;
    for u in updates {
        for (suffix, batch) in [("rmean", &u.batch_mean), ("rvar", &u.batch_var)] {
            let buf = store.get_mut(&format!("{}.{suffix}", u.name))?;
            for (r, &b) in buf.data_mut().iter_mut().zip(batch.iter()) {
                *r = keep * *r + take * b;
            }
        }
    }
    Ok(())
}

/// Tape leaves for every trainable parameter, plus read access to the
/// running statistics still in the store.
pub struct NetBinding<'a, T: Scalar> {
    ids: BTreeMap<String, NodeId>,
    store: &'a ParamStore<T>,
}

impl<'a, T: Scalar> NetBinding<'a, T> {
    /// Inserts every trainable parameter as a tape leaf. Parameters whose
    /// name starts with one of `grad_prefixes` receive gradients; the rest
    /// are frozen constants for this tape.
    pub fn bind(tape: &mut Tape<T>, store: &'a ParamStore<T>, grad_prefixes: &[&str]) -> Self {
        Self::bind_with_overrides(tape, store, grad_prefixes, &BTreeMap::new())
    }

    /// Like [`NetBinding::bind`], but selected parameters map to existing
    /// tape nodes instead of fresh leaves (used by the gradient suite to
    /// probe individual parameters).
    pub fn bind_with_overrides(
        tape: &mut Tape<T>,
        store: &'a ParamStore<T>,
        grad_prefixes: &[&str],
        overrides: &BTreeMap<String, NodeId>,
    ) -> Self {
        let mut ids = BTreeMap::new();
        for (name, tensor, kind) in store.iter() {
            if kind == ParamKind::Trainable {
                let id = if let Some(&id) = overrides.get(name) {
                    id
                } else if grad_prefixes.iter().any(|p| name.starts_with(p)) {
                    tape.leaf_grad(tensor)
                } else {
                    tape.leaf_const(tensor)
                };
                ids.insert(name.to_string(), id);
            }
        }
        NetBinding { ids, store }
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("unbound parameter {name}")))
    }

    pub fn running_stats(&self, bn_name: &str) -> Result<(&'a [T], &'a [T])> {
        let mean = self.store.get(&format!("{bn_name}.rmean"))?;
        let var = self.store.get(&format!("{bn_name}.rvar"))?;
        Ok((mean.data(), var.data()))
    }

    /// Gradients of bound parameters with a given prefix, after backward.
    pub fn grads(&self, tape: &Tape<T>, prefix: &str) -> BTreeMap<String, Vec<T>> {
        self.ids
            .iter()
            .filter(|(name, _)| name.starts_with(prefix))
            .filter_map(|(name, id)| tape.grad(*id).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Scaled-uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// seeded per parameter name so layer order never matters.
pub(crate) fn init_weight<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    dims: &[usize],
    fan_in: usize,
    seed: u64,
) {
    let k = 1.0 / (fan_in as f64).sqrt();
    let t = Tensor::rand_uniform(dims, -k, k, seed ^ fnv1a(name));
    store.insert(name, t, ParamKind::Trainable);
}

pub(crate) fn init_bias<T: Scalar>(store: &mut ParamStore<T>, name: &str, n: usize) {
    store.insert(name, Tensor::zeros(&[n]), ParamKind::Trainable);
}

pub(crate) fn init_bn<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) {
    store.insert(format!("{name}.gamma"), Tensor::ones(&[channels]), ParamKind::Trainable);
    store.insert(format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable);
    store.insert(format!("{name}.rmean"), Tensor::zeros(&[channels]), ParamKind::Buffer);
    store.insert(format!("{name}.rvar"), Tensor::ones(&[channels]), ParamKind::Buffer);
}

/// conv -> batch-norm -> leaky-ReLU plumbing both networks are made of.
pub struct LayerCtx<'t, 'b, T: Scalar> {
    pub tape: &'t mut Tape<T>,
    pub bind: &'b NetBinding<'b, T>,
    pub mode: Mode,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<'t, 'b, T: Scalar> LayerCtx<'t, 'b, T> {
    pub fn new(tape: &'t mut Tape<T>, bind: &'b NetBinding<'b, T>, mode: Mode) -> Self {
        LayerCtx { tape, bind, mode, bn_updates: Vec::new() }
    }

    pub fn conv(&mut self, name: &str, x: NodeId, stride: (usize, usize)) -> Result<NodeId> {
        let w = self.bind.id(&format!("{name}.w"))?;
        let b = self.bind.id(&format!("{name}.b"))?;
        self.tape.conv2d(x, w, b, stride)
    }

    pub fn deconv(&mut self, name: &str, x: NodeId, stride: (usize, usize)) -> Result<NodeId> {
        let w = self.bind.id(&format!("{name}.w"))?;
        let b = self.bind.id(&format!("{name}.b"))?;
        self.tape.conv_transpose2d(x, w, b, stride)
    }

    pub fn bn(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let gamma = self.bind.id(&format!("{name}.gamma"))?;
        let beta = self.bind.id(&format!("{name}.beta"))?;
        match self.mode {
            Mode::Train { update_stats } => {
                let (y, mean, var) = self.tape.batchnorm2d_train(x, gamma, beta)?;
                if update_stats {
                    self.bn_updates.push(BnUpdate { name: name.to_string(), batch_mean: mean, batch_var: var });
                }
                Ok(y)
            }
            Mode::Eval => {
                let (rmean, rvar) = self.bind.running_stats(name)?;
                self.tape.batchnorm2d_eval(x, gamma, beta, rmean, rvar)
            }
        }
    }

    pub fn lrelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.tape.leaky_relu(x, LRELU_SLOPE)
    }

    pub fn linear(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let w = self.bind.id(&format!("{name}.w"))?;
        let b = self.bind.id(&format!("{name}.b"))?;
        self.tape.linear(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_width_plan_matches_published_ladder() {
        let plan = encoder_plan(&NetConfig::default());
        let want = [
            (64, (40, 10)),
            (128, (20, 5)),
            (256, (10, 5)),
            (512, (5, 5)),
            (1024, (5, 1)),
        ];
        for (stage, (ch, hw)) in want.iter().enumerate() {
            assert_eq!(plan[stage].channels, *ch, "stage {} channels", stage + 1);
            assert_eq!(plan[stage].audio_hw, *hw, "stage {} audio dims", stage + 1);
            assert_eq!(plan[stage].video_hw, *hw, "stage {} video dims", stage + 1);
        }
    }

    #[test]
    fn embedding_parameter_count_full_width() {
        let cfg = NetConfig::default();
        assert_eq!(cfg.embedding_width(), 5120);
        assert_eq!(cfg.embedding_param_count(), 10240 * 5120 + 5120 + 5120 * 5120 + 5120);
    }

    #[test]
    fn width_scale_divides_channels() {
        let cfg = NetConfig::with_width_scale(4);
        let plan = encoder_plan(&cfg);
        assert_eq!(plan[0].channels, 4);
        assert_eq!(plan[4].channels, 64);
        assert_eq!(plan[4].audio_hw, (5, 1));
    }
}
