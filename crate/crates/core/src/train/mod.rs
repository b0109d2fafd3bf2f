//! Three-step adversarial training loop with per-iteration noise
//! attenuation augmentation, deterministic resumption from binary
//! checkpoints, and the enhancement inference path.

pub mod checkpoint;
pub mod records;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC};
pub use records::TensorRecord;

use std::path::{Path, PathBuf};

use rand::RngExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_utterance, Manifest};
use crate::dsp::{
    denormalize, mel_pseudo_inverse, normalize, slice_segments, stft, Augmenter, LogMelFrames, LogMelSegment,
    MelFilterbank, NormStats, VideoSegment, Waveform, SAMPLE_RATE_HZ, SEG_FRAMES, STFT_HOP, STFT_WIN,
};
use crate::error::{Error, Result};
use crate::metrics::{si_sdr, stoi};
use crate::net::{
    apply_bn_updates, d_loss, g_loss, Discriminator, Generator, LayerCtx, LossValues, Mode, NetBinding, NetConfig,
};
use crate::scalar::{DType, Scalar};
use crate::tensor::{adam_step, AdamParams, AdamState, ParamStore, Tape, Tensor};

/// Samples of one 200 ms segment.
pub const SEG_SAMPLES: usize = SEG_FRAMES * STFT_HOP;
/// Samples needed to compute one segment's 20 STFT frames.
pub const SEG_SPAN: usize = (SEG_FRAMES - 1) * STFT_HOP + STFT_WIN;

const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUG: u64 = 2;
const STREAM_LATENT: u64 = 3;

const SEGMENT_CACHE_MAGIC: [u8; 4] = *b"VSGC";

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic per-(stream, index) generator. Draws are a function of the
/// global step index, never of arrival order.
pub(crate) fn stream_rng(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(splitmix(master) ^ stream) ^ index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// All training hyperparameters; serialized verbatim into every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    pub atten_min_db: f64,
    pub atten_max_db: f64,
    pub width_scale: u32,
    pub precision: Precision,
    pub latent_noise: bool,
    pub train_manifest: String,
    pub val_manifest: String,
    pub out_dir: String,
    pub segment_cache: Option<String>,
    pub norm: Option<NormStats>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            epochs: 70,
            batch_size: 8,
            lambda: 100.0,
            seed: 42,
            atten_min_db: -15.0,
            atten_max_db: 0.0,
            width_scale: 0,
            precision: Precision::F32,
            latent_noise: false,
            train_manifest: String::new(),
            val_manifest: String::new(),
            out_dir: String::new(),
            segment_cache: None,
            norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.atten_min_db > self.atten_max_db || self.atten_min_db.is_nan() || self.atten_max_db.is_nan() {
            return Err(Error::config(format!(
                "attenuation range [{}, {}] is inverted",
                self.atten_min_db, self.atten_max_db
            )));
        }
        Ok(())
    }

    fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        if self.train_manifest.is_empty() || self.val_manifest.is_empty() || self.out_dir.is_empty() {
            return Err(Error::config("train_manifest, val_manifest and out_dir must be set"));
        }
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig { width_scale: self.width_scale, latent_noise: self.latent_noise }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Generator + discriminator parameters and optimizer states.
pub struct Model<T: Scalar> {
    pub cfg: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub store: ParamStore<T>,
    pub adam_g: AdamState<T>,
    pub adam_d: AdamState<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        if cfg.precision.dtype() != T::DTYPE {
            return Err(Error::contract(format!(
                "config precision {:?} does not match model scalar {:?}",
                cfg.precision.dtype(),
                T::DTYPE
            )));
        }
        let net_cfg = cfg.net_config();
        let generator = Generator::new(net_cfg);
        let discriminator = Discriminator::new(net_cfg);
        let mut store = ParamStore::new();
        generator.init_params(&mut store, cfg.seed);
        discriminator.init_params(&mut store, cfg.seed);
        let adam_g = AdamState::for_prefix(&store, "g.");
        let adam_d = AdamState::for_prefix(&store, "d.");
        Ok(Model { cfg: cfg.clone(), generator, discriminator, store, adam_g, adam_d })
    }

    pub fn to_checkpoint(&self, rng: RngState) -> Result<Checkpoint> {
        let config_json = serde_json::to_string_pretty(&self.cfg)?;
        Ok(Checkpoint::from_model(config_json, &self.store, &self.adam_g, &self.adam_d, rng))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, RngState)> {
        let cfg: TrainConfig = serde_json::from_str(&ck.config_json)
            .map_err(|e| Error::integrity(format!("checkpoint config: {e}")))?;
        let mut model = Model::init(&cfg)?;
        ck.apply_to(&mut model.store, &mut model.adam_g, &mut model.adam_d)?;
        Ok((model, ck.rng))
    }
}

/// Reads just the embedded config (for precision dispatch before
/// constructing a typed model).
pub fn checkpoint_config(path: &Path) -> Result<TrainConfig> {
    let ck = Checkpoint::load(path)?;
    serde_json::from_str(&ck.config_json).map_err(|e| Error::integrity(format!("checkpoint config: {e}")))
}

// ── data pipeline ───────────────────────────────────────────────────

/// One manifest entry with features extracted and the noise pre-scaled to
/// the entry's base SNR.
pub struct PreparedUtterance<T: Scalar> {
    pub id: String,
    pub clean: Waveform<T>,
    /// Noise component scaled so clean/noise matches the base SNR.
    pub noise_scaled: Waveform<T>,
    /// Normalized clean targets, one per aligned segment.
    pub clean_segs: Vec<LogMelSegment<T>>,
    pub video: Vec<VideoSegment<T>>,
    pub n_segs: usize,
}

pub struct TrainData<T: Scalar> {
    pub utts: Vec<PreparedUtterance<T>>,
    /// Flattened (utterance, segment) references for epoch shuffling.
    pub segs: Vec<(usize, usize)>,
    pub norm: NormStats,
    pub bank: MelFilterbank<T>,
}

fn fnv_bytes(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Builds features for every entry, computing normalization stats over the
/// training split (clean and base-SNR noisy log-mels) unless provided.
pub fn prepare_data<T: Scalar>(
    manifest: &Manifest,
    base_dir: &Path,
    norm: Option<NormStats>,
    cache_path: Option<&Path>,
) -> Result<TrainData<T>> {
    let bank = MelFilterbank::<T>::new();
    let manifest_digest = fnv_bytes(serde_json::to_string(manifest)?.as_bytes());

    if let (Some(path), Some(n)) = (cache_path, norm) {
        if let Some(data) = try_load_segment_cache::<T>(path, manifest, base_dir, n, manifest_digest)? {
            return Ok(data);
        }
    }

    // pass 1: raw audio/video plus clean features
    struct Raw<T: Scalar> {
        id: String,
        clean: Waveform<T>,
        noise_scaled: Waveform<T>,
        video: Vec<VideoSegment<T>>,
        clean_frames: LogMelFrames<T>,
    }
    let mut raws = Vec::with_capacity(manifest.entries.len());
    let mut stats = NormStats::empty();
    for entry in &manifest.entries {
        let u = load_utterance::<T>(entry, base_dir)?;
        let (mixed, noise_scaled) = crate::dsp::mix_at_snr(&u.clean, &u.noise, u.base_snr_db)?;
        let clean_frames = LogMelFrames::from_spectrogram(&stft(&u.clean)?, &bank)?;
        if norm.is_none() {
            let noisy_frames = LogMelFrames::from_spectrogram(&stft(&mixed)?, &bank)?;
            for v in clean_frames.data.iter().chain(noisy_frames.data.iter()) {
                stats.accumulate(v.as_f64());
            }
        }
        raws.push(Raw { id: u.id, clean: u.clean, noise_scaled, video: u.video, clean_frames });
    }
    let norm = match norm {
        Some(n) => n,
        None => {
            if !stats.is_valid() {
                return Err(Error::contract("cannot compute normalization stats from an empty manifest"));
            }
            stats
        }
    };

    // pass 2: normalized segments and alignment
    let mut utts = Vec::with_capacity(raws.len());
    let mut segs = Vec::new();
    for (ui, raw) in raws.into_iter().enumerate() {
        let clean_all = slice_segments(&raw.clean_frames);
        let n_segs = clean_all.len().min(raw.video.len());
        let clean_segs = clean_all
            .into_iter()
            .take(n_segs)
            .map(|s| normalize(&s, &norm))
            .collect::<Result<Vec<_>>>()?;
        for k in 0..n_segs {
            segs.push((ui, k));
        }
        utts.push(PreparedUtterance {
            id: raw.id,
            clean: raw.clean,
            noise_scaled: raw.noise_scaled,
            clean_segs,
            video: raw.video,
            n_segs,
        });
    }
    let data = TrainData { utts, segs, norm, bank };
    if let Some(path) = cache_path {
        save_segment_cache(path, &data, manifest_digest)?;
    }
    Ok(data)
}

#[derive(Serialize, Deserialize, PartialEq)]
struct CacheMeta {
    manifest_digest: u64,
    dtype: u8,
    norm: NormStats,
}

fn save_segment_cache<T: Scalar>(path: &Path, data: &TrainData<T>, manifest_digest: u64) -> Result<()> {
    let meta = CacheMeta { manifest_digest, dtype: T::DTYPE.code(), norm: data.norm };
    let mut recs = Vec::new();
    for (ui, u) in data.utts.iter().enumerate() {
        for (k, seg) in u.clean_segs.iter().enumerate() {
            recs.push(TensorRecord::from_slice(format!("{ui:05}.clean.{k:03}"), &[80, SEG_FRAMES], &seg.values));
        }
        for (k, v) in u.video.iter().enumerate() {
            recs.push(TensorRecord::from_slice(format!("{ui:05}.video.{k:03}"), &[5, 80, 80], &v.frames));
        }
    }
    records::write_container(path, SEGMENT_CACHE_MAGIC, &serde_json::to_string(&meta)?, &recs, &[])
}

/// Loads cached features when the manifest, dtype and normalization match;
/// otherwise the cache is silently rebuilt. Waveforms always regenerate
/// (augmentation remixes them every iteration).
fn try_load_segment_cache<T: Scalar>(
    path: &Path,
    manifest: &Manifest,
    base_dir: &Path,
    norm: NormStats,
    manifest_digest: u64,
) -> Result<Option<TrainData<T>>> {
    if !path.exists() {
        return Ok(None);
    }
    let (meta_json, recs, _) = match records::read_container(path, SEGMENT_CACHE_MAGIC) {
        Ok(x) => x,
        Err(Error::Integrity(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let meta: CacheMeta = match serde_json::from_str(&meta_json) {
        Ok(m) => m,
        Err(_) => return Ok(None),
    };
    if meta != (CacheMeta { manifest_digest, dtype: T::DTYPE.code(), norm }) {
        return Ok(None);
    }
    let bank = MelFilterbank::<T>::new();
    let (center, half) = norm.affine();
    let mut utts: Vec<PreparedUtterance<T>> = Vec::with_capacity(manifest.entries.len());
    for (ui, entry) in manifest.entries.iter().enumerate() {
        let u = load_utterance::<T>(entry, base_dir)?;
        let (_, noise_scaled) = crate::dsp::mix_at_snr(&u.clean, &u.noise, u.base_snr_db)?;
        let prefix = format!("{ui:05}.clean.");
        let mut clean_segs = Vec::new();
        for r in recs.iter().filter(|r| r.name.starts_with(&prefix)) {
            let mut seg = LogMelSegment::new(r.to_vec::<T>()?)?;
            seg.norm_mean = T::cast(center);
            seg.norm_scale = T::cast(half);
            clean_segs.push(seg);
        }
        let n_segs = clean_segs.len();
        utts.push(PreparedUtterance {
            id: u.id,
            clean: u.clean,
            noise_scaled,
            clean_segs,
            video: u.video,
            n_segs,
        });
    }
    let segs = utts
        .iter()
        .enumerate()
        .flat_map(|(ui, u)| (0..u.n_segs).map(move |k| (ui, k)))
        .collect();
    Ok(Some(TrainData { utts, segs, norm, bank }))
}

/// Noisy log-mel segment for one (utterance, segment) pair with the noise
/// attenuated by `atten_db` before mixing.
pub fn noisy_segment<T: Scalar>(
    data: &TrainData<T>,
    utt: usize,
    seg: usize,
    atten_db: f64,
) -> Result<LogMelSegment<T>> {
    let u = &data.utts[utt];
    let start = seg * SEG_SAMPLES;
    let end = start + SEG_SPAN;
    if end > u.clean.len() {
        return Err(Error::contract(format!("segment {seg} out of range for {}", u.id)));
    }
    let k = T::cast(Augmenter::amplitude_factor(atten_db));
    let span: Vec<T> = u.clean.samples[start..end]
        .iter()
        .zip(&u.noise_scaled.samples[start..end])
        .map(|(&c, &n)| c + n * k)
        .collect();
    let spec = stft(&Waveform::new(span, SAMPLE_RATE_HZ))?;
    debug_assert_eq!(spec.frames, SEG_FRAMES);
    let lm = LogMelFrames::from_spectrogram(&spec, &data.bank)?;
    let segs = slice_segments(&lm);
    normalize(&segs[0], &data.norm)
}

/// One training batch of aligned (clean, noisy, video) tensors.
pub struct Batch<T: Scalar> {
    pub clean: Tensor<T>,
    pub noisy: Tensor<T>,
    pub video: Tensor<T>,
    pub ids: Vec<String>,
}

pub fn assemble_batch<T: Scalar>(
    data: &TrainData<T>,
    refs: &[(usize, usize)],
    attens: &[f64],
) -> Result<Batch<T>> {
    if refs.is_empty() || refs.len() != attens.len() {
        return Err(Error::contract("assemble_batch: refs/attens length mismatch"));
    }
    let b = refs.len();
    let mut clean = Vec::with_capacity(b * 80 * SEG_FRAMES);
    let mut noisy = Vec::with_capacity(b * 80 * SEG_FRAMES);
    let mut video = Vec::with_capacity(b * 5 * 80 * 80);
    let mut ids = Vec::with_capacity(b);
    for (&(ui, k), &att) in refs.iter().zip(attens) {
        let u = &data.utts[ui];
        clean.extend_from_slice(&u.clean_segs[k].values);
        let n = noisy_segment(data, ui, k, att)?;
        noisy.extend_from_slice(&n.values);
        video.extend_from_slice(&u.video[k].frames);
        ids.push(format!("{}#{k}", u.id));
    }
    Ok(Batch {
        clean: Tensor::from_vec(&[b, 1, 80, SEG_FRAMES], clean)?,
        noisy: Tensor::from_vec(&[b, 1, 80, SEG_FRAMES], noisy)?,
        video: Tensor::from_vec(&[b, 5, 80, 80], video)?,
        ids,
    })
}

// ── the three-step adversarial update ───────────────────────────────

/// Appends the latent noise channel when the config asks for one.
fn audio_input<T: Scalar>(cfg: &NetConfig, noisy: &Tensor<T>, rng: Option<&mut ChaCha8Rng>) -> Tensor<T> {
    if !cfg.latent_noise {
        return noisy.clone();
    }
    let d = noisy.dims();
    let (b, hw) = (d[0], d[2] * d[3]);
    let mut rng_local;
    let rng = match rng {
        Some(r) => r,
        None => {
            rng_local = ChaCha8Rng::seed_from_u64(0);
            &mut rng_local
        }
    };
    let mut out = Vec::with_capacity(b * 2 * hw);
    for item in 0..b {
        out.extend_from_slice(&noisy.data()[item * hw..][..hw]);
        for _ in 0..hw {
            // Box-Muller standard normal
            let u1: f64 = rng.random_range(1e-12..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            out.push(T::cast((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()));
        }
    }
    Tensor::from_vec(&[b, 2, d[2], d[3]], out).expect("latent channel assembly")
}

/// One full adversarial step: update D on a real and a G-generated batch
/// with G frozen, then update G with D frozen. The freezing contract is
/// re-checked with parameter digests on every call.
pub fn train_step<T: Scalar>(model: &mut Model<T>, batch: &Batch<T>, step: u64) -> Result<LossValues> {
    let lambda = model.cfg.lambda;
    let hp = AdamParams::with_lr(model.cfg.lr);
    let net_cfg = model.cfg.net_config();
    let seed = model.cfg.seed;

    // Steps 1-2: discriminator update, generator frozen.
    let g_digest = model.store.digest("g.");
    let d_loss_val = {
        let mut latent = stream_rng(seed, STREAM_LATENT, step * 2);
        let audio_in = audio_input(&net_cfg, &batch.noisy, Some(&mut latent));
        let mut tape = Tape::new();
        let bind = NetBinding::bind(&mut tape, &model.store, &["d."]);
        let (clean_id, noisy_id, video_id) =
            (tape.leaf(&batch.clean), tape.leaf(&batch.noisy), tape.leaf(&batch.video));
        let audio_id = tape.leaf(&audio_in);
        let y_hat = {
            let mut g_ctx = LayerCtx::new(&mut tape, &bind, Mode::Train { update_stats: false });
            model.generator.forward(&mut g_ctx, audio_id, video_id)?
        };
        let (loss, d_updates) = {
            let mut d_ctx = LayerCtx::new(&mut tape, &bind, Mode::Train { update_stats: true });
            let d_real = model.discriminator.forward(&mut d_ctx, clean_id, noisy_id)?;
            let d_fake = model.discriminator.forward(&mut d_ctx, y_hat, noisy_id)?;
            let loss = d_loss(d_ctx.tape, d_real, d_fake)?;
            (loss, d_ctx.bn_updates)
        };
        tape.backward(loss)?;
        let grads = bind.grads(&tape, "d.");
        let value = tape.scalar_value(loss).as_f64();
        drop(bind);
        adam_step(&mut model.store, &grads, &mut model.adam_d, &hp)?;
        apply_bn_updates(&mut model.store, &d_updates)?;
        value
    };
    if model.store.digest("g.") != g_digest {
        return Err(Error::contract(
            "freezing contract violated: generator parameters changed during the discriminator update",
        ));
    }

    // Step 3: generator update, discriminator frozen.
    let d_digest = model.store.digest("d.");
    let (g_adv, g_l1, g_total) = {
        let mut latent = stream_rng(seed, STREAM_LATENT, step * 2 + 1);
        let audio_in = audio_input(&net_cfg, &batch.noisy, Some(&mut latent));
        let mut tape = Tape::new();
        let bind = NetBinding::bind(&mut tape, &model.store, &["g."]);
        let (clean_id, noisy_id, video_id) =
            (tape.leaf(&batch.clean), tape.leaf(&batch.noisy), tape.leaf(&batch.video));
        let audio_id = tape.leaf(&audio_in);
        let (y_hat, g_updates) = {
            let mut g_ctx = LayerCtx::new(&mut tape, &bind, Mode::Train { update_stats: true });
            let y = model.generator.forward(&mut g_ctx, audio_id, video_id)?;
            (y, g_ctx.bn_updates)
        };
        let d_fake = {
            let mut d_ctx = LayerCtx::new(&mut tape, &bind, Mode::Train { update_stats: false });
            model.discriminator.forward(&mut d_ctx, y_hat, noisy_id)?
        };
        let nodes = g_loss(&mut tape, d_fake, y_hat, clean_id, lambda)?;
        tape.backward(nodes.total)?;
        let grads = bind.grads(&tape, "g.");
        let vals = (
            tape.scalar_value(nodes.adv).as_f64(),
            tape.scalar_value(nodes.l1).as_f64(),
            tape.scalar_value(nodes.total).as_f64(),
        );
        drop(bind);
        adam_step(&mut model.store, &grads, &mut model.adam_g, &hp)?;
        apply_bn_updates(&mut model.store, &g_updates)?;
        vals
    };
    if model.store.digest("d.") != d_digest {
        return Err(Error::contract(
            "freezing contract violated: discriminator parameters changed during the generator update",
        ));
    }

    Ok(LossValues { d_loss: d_loss_val, g_adv_loss: g_adv, g_l1_loss: g_l1, g_total, lambda })
}

// ── enhancement ─────────────────────────────────────────────────────

/// Eval-mode enhancement: segment, normalize, run the generator, invert the
/// log-mel representation with the noisy phase, overlap-add back to audio.
pub struct Enhancer<'a, T: Scalar> {
    pub generator: Generator,
    pub store: &'a ParamStore<T>,
    pub norm: NormStats,
    pub latent_noise: bool,
    pub latent_seed: u64,
    pub bank: MelFilterbank<T>,
}

impl<'a, T: Scalar> Enhancer<'a, T> {
    pub fn from_model(model: &'a Model<T>) -> Result<Self> {
        let norm = model
            .cfg
            .norm
            .ok_or_else(|| Error::contract("model config carries no normalization stats"))?;
        Ok(Enhancer {
            generator: model.generator,
            store: &model.store,
            norm,
            latent_noise: model.cfg.latent_noise,
            latent_seed: model.cfg.seed,
            bank: MelFilterbank::new(),
        })
    }

    /// Duration of the output equals the input truncated to whole segments.
    pub fn enhance(&self, noisy: &Waveform<T>, video: &[VideoSegment<T>]) -> Result<Waveform<T>> {
        noisy.expect_pipeline_rate("enhance")?;
        let spec = stft(noisy)?;
        let lm = LogMelFrames::from_spectrogram(&spec, &self.bank)?;
        let noisy_segs = slice_segments(&lm);
        let (na, nv) = (noisy_segs.len(), video.len());
        if na == 0 || nv == 0 {
            return Err(Error::contract(format!(
                "enhance: input shorter than one 200 ms segment (audio {na}, video {nv} segments)"
            )));
        }
        if na.abs_diff(nv) > 1 {
            return Err(Error::contract(format!(
                "enhance: length mismatch between audio and frames ({na} audio vs {nv} video segments)"
            )));
        }
        let n = na.min(nv);

        let mut noisy_vals = Vec::with_capacity(n * 80 * SEG_FRAMES);
        let mut video_vals = Vec::with_capacity(n * 5 * 80 * 80);
        for k in 0..n {
            let seg = normalize(&noisy_segs[k], &self.norm)?;
            noisy_vals.extend_from_slice(&seg.values);
            video_vals.extend_from_slice(&video[k].frames);
        }
        let noisy_t = Tensor::from_vec(&[n, 1, 80, SEG_FRAMES], noisy_vals)?;
        let video_t = Tensor::from_vec(&[n, 5, 80, 80], video_vals)?;
        let net_cfg = self.generator.cfg;
        let mut latent = ChaCha8Rng::seed_from_u64(self.latent_seed);
        let audio_in = audio_input(&net_cfg, &noisy_t, if self.latent_noise { Some(&mut latent) } else { None });

        let mut tape = Tape::new();
        let bind = NetBinding::bind(&mut tape, self.store, &[]);
        let mut ctx = LayerCtx::new(&mut tape, &bind, Mode::Eval);
        let (a_id, v_id) = (ctx.tape.leaf(&audio_in), ctx.tape.leaf(&video_t));
        let out = self.generator.forward(&mut ctx, a_id, v_id)?;
        let out_vals = tape.value(out);

        let (center, half) = self.norm.affine();
        let mut enhanced_segs = Vec::with_capacity(n);
        for k in 0..n {
            let seg = LogMelSegment {
                values: out_vals[k * 80 * SEG_FRAMES..][..80 * SEG_FRAMES].to_vec(),
                norm_mean: T::cast(center),
                norm_scale: T::cast(half),
            };
            enhanced_segs.push(denormalize(&seg));
        }
        let wav = mel_pseudo_inverse(&enhanced_segs, &spec, &self.bank)?;
        Ok(Waveform::new(wav.samples[..n * SEG_SAMPLES].to_vec(), SAMPLE_RATE_HZ))
    }
}

/// File-level enhancement used by the CLI.
pub fn enhance_files<T: Scalar>(ckpt: &Path, wav_in: &Path, frames_dir: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let (model, _) = Model::<T>::from_checkpoint(&ck)?;
    let noisy: Waveform<T> = crate::dsp::read_wav(wav_in)?;
    let (frames, n_frames) = crate::corpus::read_frames_dir::<T>(frames_dir)?;
    let video = crate::corpus::video_segments_from_frames(&frames, n_frames)?;
    let enhancer = Enhancer::from_model(&model)?;
    let enhanced = enhancer.enhance(&noisy, &video)?;
    crate::dsp::write_wav(out, &enhanced)
}

// ── the training loop ───────────────────────────────────────────────

pub const METRICS_HEADER: &str = "epoch,step,d_loss,g_adv,g_l1,g_total,val_stoi,val_sisdr";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    pub g_total: f64,
    pub val_stoi: f64,
    pub val_sisdr: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.step, self.d_loss, self.g_adv, self.g_l1, self.g_total, self.val_stoi, self.val_sisdr
        )
    }
}

pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub rows: Vec<MetricsRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-epoch validation: enhance every val utterance at its base SNR and
/// take median STOI / SI-SDR against the clean reference.
fn validate<T: Scalar>(model: &Model<T>, val: &TrainData<T>) -> Result<(f64, f64)> {
    let enhancer = Enhancer::from_model(model)?;
    let mut stois = Vec::with_capacity(val.utts.len());
    let mut sisdrs = Vec::with_capacity(val.utts.len());
    for u in &val.utts {
        let noisy = Waveform::new(
            u.clean
                .samples
                .iter()
                .zip(&u.noise_scaled.samples)
                .map(|(&c, &n)| c + n)
                .collect::<Vec<T>>(),
            SAMPLE_RATE_HZ,
        );
        let enhanced = enhancer.enhance(&noisy, &u.video)?;
        let clean_trunc = Waveform::new(u.clean.samples[..enhanced.len()].to_vec(), SAMPLE_RATE_HZ);
        stois.push(stoi(&clean_trunc, &enhanced)?);
        sisdrs.push(si_sdr(&clean_trunc, &enhanced)?);
    }
    Ok((median(stois), median(sisdrs)))
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Full training run from scratch.
pub fn train<T: Scalar>(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate_for_training()?;
    let train_path = Path::new(&cfg.train_manifest);
    let train_man = Manifest::load(train_path)?;
    let train_base = train_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let data = prepare_data::<T>(
        &train_man,
        &train_base,
        cfg.norm,
        cfg.segment_cache.as_ref().map(Path::new),
    )?;
    let mut resolved = cfg.clone();
    resolved.norm = Some(data.norm);
    let model = Model::<T>::init(&resolved)?;
    let rng = RngState { master_seed: resolved.seed, ..Default::default() };
    run_training(model, data, rng)
}

/// Continues a run from a checkpoint, reproducing the unresumed trajectory.
pub fn resume<T: Scalar>(ckpt_path: &Path) -> Result<TrainOutcome> {
    let ck = Checkpoint::load(ckpt_path)?;
    let (model, rng) = Model::<T>::from_checkpoint(&ck)?;
    let cfg = model.cfg.clone();
    cfg.validate_for_training()?;
    let train_path = Path::new(&cfg.train_manifest);
    let train_man = Manifest::load(train_path)?;
    let train_base = train_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let data = prepare_data::<T>(
        &train_man,
        &train_base,
        cfg.norm,
        cfg.segment_cache.as_ref().map(Path::new),
    )?;
    run_training(model, data, rng)
}

fn run_training<T: Scalar>(mut model: Model<T>, data: TrainData<T>, mut rng: RngState) -> Result<TrainOutcome> {
    let cfg = model.cfg.clone();
    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let val_path = Path::new(&cfg.val_manifest);
    let val_man = Manifest::load(val_path)?;
    let val_base = val_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let val = prepare_data::<T>(&val_man, &val_base, Some(data.norm), None)?;
    let aug = Augmenter::new(cfg.atten_min_db, cfg.atten_max_db)?;

    let metrics_csv = out_dir.join("metrics.csv");
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut final_ckpt = out_dir.join(format!("ckpt_epoch_{:04}.vsgn", rng.next_epoch));

    let start_epoch = rng.next_epoch as usize;
    for epoch in start_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..data.segs.len()).collect();
        let mut shuffle_rng = stream_rng(cfg.seed, STREAM_SHUFFLE, epoch as u64);
        shuffle(&mut order, &mut shuffle_rng);

        let (mut s_d, mut s_adv, mut s_l1, mut s_tot) = (0.0, 0.0, 0.0, 0.0);
        let mut n_steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<(usize, usize)> = chunk.iter().map(|&i| data.segs[i]).collect();
            let mut aug_rng = stream_rng(cfg.seed, STREAM_AUG, rng.global_step);
            let attens: Vec<f64> = refs.iter().map(|_| aug.draw(&mut aug_rng)).collect();
            let batch = assemble_batch(&data, &refs, &attens)?;
            let losses = train_step(&mut model, &batch, rng.global_step).map_err(|e| match e {
                Error::NonFinite { context } => Error::NonFinite {
                    context: format!(
                        "{context} (epoch {epoch}, step {}, batch [{}])",
                        rng.global_step,
                        batch.ids.join(", ")
                    ),
                },
                other => other,
            })?;
            s_d += losses.d_loss;
            s_adv += losses.g_adv_loss;
            s_l1 += losses.g_l1_loss;
            s_tot += losses.g_total;
            n_steps += 1;
            rng.global_step += 1;
        }
        rng.adam_g_steps = model.adam_g.step_count();
        rng.adam_d_steps = model.adam_d.step_count();
        rng.next_epoch = epoch as u64 + 1;

        let (val_stoi, val_sisdr) = validate(&model, &val)?;
        let k = n_steps.max(1) as f64;
        rows.push(MetricsRow {
            epoch: epoch + 1,
            step: rng.global_step,
            d_loss: s_d / k,
            g_adv: s_adv / k,
            g_l1: s_l1 / k,
            g_total: s_tot / k,
            val_stoi,
            val_sisdr,
        });
        let mut csv = String::from(METRICS_HEADER);
        csv.push('\n');
        for r in &rows {
            csv.push_str(&r.to_csv());
            csv.push('\n');
        }
        std::fs::write(&metrics_csv, &csv)?;

        final_ckpt = out_dir.join(format!("ckpt_epoch_{:04}.vsgn", epoch + 1));
        model.to_checkpoint(rng)?.save(&final_ckpt)?;
    }

    Ok(TrainOutcome { final_checkpoint: final_ckpt, metrics_csv, rows })
}
