//! Deterministic synthetic audio-visual corpus: speech-like utterances with
//! correlated mouth frames, a 12-category noise bank, and JSON manifests
//! from which everything regenerates bit-identically. User-provided WAV and
//! PGM-frame directories can be listed in manifests in place of seeds.

mod noise;
mod pgm;
mod synth;

pub use noise::{synth_noise, NoiseCategory, NOISE_CATEGORIES};
pub use pgm::{bytes_to_frame, frame_to_bytes, read_pgm, write_pgm};
pub use synth::{frame_rms_envelope, pearson, speechlike_voice, synth_utterance, SynthUtterance};

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::{self, read_wav, write_wav, VideoSegment, Waveform, VIDEO_FRAMES_PER_SEG, VIDEO_SIZE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One corpus item: either a (seed, duration) pair that regenerates a
/// synthetic utterance, or paths to user-provided audio and frames.
/// Noise is synthetic (category + seed) or a WAV path.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utterance_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wav: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_wav: Option<String>,
    pub snr_db: f64,
}

impl ManifestEntry {
    fn validate(&self) -> Result<()> {
        let synth = self.utterance_seed.is_some() && self.duration_s.is_some();
        let files = self.wav.is_some() && self.frames_dir.is_some();
        if !synth && !files {
            return Err(Error::contract(format!(
                "manifest entry {}: needs (utterance_seed, duration_s) or (wav, frames_dir)",
                self.id
            )));
        }
        let has_synth_noise = self.noise_category.is_some() && self.noise_seed.is_some();
        if !has_synth_noise && self.noise_wav.is_none() {
            return Err(Error::contract(format!(
                "manifest entry {}: needs (noise_category, noise_seed) or noise_wav",
                self.id
            )));
        }
        if let Some(cat) = &self.noise_category {
            NoiseCategory::from_str(cat)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub split: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::contract(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)?;
        for e in &m.entries {
            e.validate()?;
        }
        Ok(m)
    }
}

/// Corpus generation parameters. Seed bases must give disjoint per-split
/// utterance seed ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_snrs")]
    pub snr_choices_db: Vec<f64>,
    /// When set, test entries cycle only these categories (held-out noise).
    #[serde(default)]
    pub test_noise_categories: Option<Vec<String>>,
    #[serde(default)]
    pub seed_bases: Option<[u64; 3]>,
}

fn default_duration() -> f64 {
    1.05
}

fn default_snrs() -> Vec<f64> {
    vec![0.0]
}

impl CorpusConfig {
    pub fn new(seed: u64, train: usize, val: usize, test: usize) -> Self {
        CorpusConfig {
            seed,
            train,
            val,
            test,
            duration_s: default_duration(),
            snr_choices_db: default_snrs(),
            test_noise_categories: None,
            seed_bases: None,
        }
    }

    fn bases(&self) -> [u64; 3] {
        self.seed_bases.unwrap_or_else(|| {
            let b = self.seed.wrapping_mul(1_000_000);
            [b, b + 300_000, b + 600_000]
        })
    }

    fn check_disjoint(&self) -> Result<()> {
        let bases = self.bases();
        let counts = [self.train as u64, self.val as u64, self.test as u64];
        let mut ranges: Vec<(u64, u64)> = bases.iter().zip(counts).map(|(&b, c)| (b, b + c)).collect();
        ranges.sort();
        for pair in ranges.windows(2) {
            if pair[0].1 > pair[1].0 {
                return Err(Error::contract(format!(
                    "corpus: overlapping utterance seed ranges {:?} and {:?}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }
}

fn categories_for(cfg: &CorpusConfig, split: &str) -> Result<Vec<NoiseCategory>> {
    if split == "test" {
        if let Some(names) = &cfg.test_noise_categories {
            if names.is_empty() {
                return Err(Error::contract("corpus: empty test_noise_categories"));
            }
            return names.iter().map(|n| NoiseCategory::from_str(n)).collect();
        }
    }
    Ok(NOISE_CATEGORIES.to_vec())
}

/// Builds the three split manifests without touching the filesystem.
pub fn plan_corpus(cfg: &CorpusConfig) -> Result<[Manifest; 3]> {
    cfg.check_disjoint()?;
    let bases = cfg.bases();
    let splits = ["train", "val", "test"];
    let counts = [cfg.train, cfg.val, cfg.test];
    let mut manifests = Vec::with_capacity(3);
    for ((split, count), base) in splits.iter().zip(counts).zip(bases) {
        let cats = categories_for(cfg, split)?;
        let entries = (0..count)
            .map(|i| {
                let seed = base + i as u64;
                ManifestEntry {
                    id: format!("utt_{seed}"),
                    utterance_seed: Some(seed),
                    duration_s: Some(cfg.duration_s),
                    wav: Some(format!("audio/utt_{seed}.wav")),
                    frames_dir: Some(format!("frames/utt_{seed}")),
                    noise_category: Some(cats[i % cats.len()].name().to_string()),
                    noise_seed: Some(base + 700_000 + i as u64),
                    noise_wav: None,
                    snr_db: cfg.snr_choices_db[i % cfg.snr_choices_db.len()],
                }
            })
            .collect();
        manifests.push(Manifest { split: split.to_string(), entries });
    }
    Ok(manifests.try_into().expect("three splits"))
}

/// Generates the corpus on disk: WAV audio, PGM frames and one manifest per
/// split. Returns the manifest paths (train, val, test).
pub fn build_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<[PathBuf; 3]> {
    let manifests = plan_corpus(cfg)?;
    std::fs::create_dir_all(out_dir.join("audio"))?;
    std::fs::create_dir_all(out_dir.join("frames"))?;
    let mut paths = Vec::with_capacity(3);
    for m in &manifests {
        for e in &m.entries {
            let u: SynthUtterance<f32> =
                synth_utterance(e.utterance_seed.expect("planned entries are synthetic"), e.duration_s.unwrap())?;
            write_wav(&out_dir.join(e.wav.as_ref().unwrap()), &u.clean)?;
            let fdir = out_dir.join(e.frames_dir.as_ref().unwrap());
            std::fs::create_dir_all(&fdir)?;
            for f in 0..u.n_frames {
                let bytes = frame_to_bytes(&u.frames[f * VIDEO_SIZE * VIDEO_SIZE..][..VIDEO_SIZE * VIDEO_SIZE]);
                write_pgm(&fdir.join(format!("f{f:04}.pgm")), VIDEO_SIZE, VIDEO_SIZE, &bytes)?;
            }
        }
        let path = out_dir.join(format!("{}.json", m.split));
        m.save(&path)?;
        paths.push(path);
    }
    Ok(paths.try_into().expect("three manifest paths"))
}

/// A manifest entry materialized in memory, ready for mixing/segmentation.
#[derive(Debug, Clone)]
pub struct UtteranceData<T: Scalar> {
    pub id: String,
    pub clean: Waveform<T>,
    /// Unit-RMS noise tiled to the clean length.
    pub noise: Waveform<T>,
    pub video: Vec<VideoSegment<T>>,
    pub base_snr_db: f64,
}

/// Loads frames from a directory of PGMs, sorted by file name.
pub fn read_frames_dir<T: Scalar>(dir: &Path) -> Result<(Vec<T>, usize)> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::contract(format!("cannot read frames dir {}: {e}", dir.display())))?
        .filter_map(|r| r.ok().map(|d| d.path()))
        .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::contract(format!("no .pgm frames in {}", dir.display())));
    }
    let mut frames = Vec::new();
    for p in &names {
        let (w, h, bytes) = read_pgm(p)?;
        if w != VIDEO_SIZE || h != VIDEO_SIZE {
            return Err(Error::contract(format!(
                "{}: frames must be {VIDEO_SIZE}x{VIDEO_SIZE}, got {w}x{h}",
                p.display()
            )));
        }
        frames.extend(bytes_to_frame::<T>(&bytes));
    }
    Ok((frames, names.len()))
}

/// Groups stacked 80x80 frames into 5-frame segments; a trailing partial
/// group is dropped.
pub fn video_segments_from_frames<T: Scalar>(frames: &[T], n_frames: usize) -> Result<Vec<VideoSegment<T>>> {
    let per_seg = VIDEO_FRAMES_PER_SEG * VIDEO_SIZE * VIDEO_SIZE;
    let n_segs = n_frames / VIDEO_FRAMES_PER_SEG;
    (0..n_segs)
        .map(|k| VideoSegment::new(frames[k * per_seg..][..per_seg].to_vec()))
        .collect()
}

/// Materializes one manifest entry. Synthetic sources regenerate from seeds;
/// file sources are read relative to `base_dir`.
pub fn load_utterance<T: Scalar>(entry: &ManifestEntry, base_dir: &Path) -> Result<UtteranceData<T>> {
    entry.validate()?;
    let (clean, frames, n_frames) = if let (Some(seed), Some(dur)) = (entry.utterance_seed, entry.duration_s) {
        let u: SynthUtterance<T> = synth_utterance(seed, dur)?;
        (u.clean, u.frames, u.n_frames)
    } else {
        let clean: Waveform<T> = read_wav(&base_dir.join(entry.wav.as_ref().unwrap()))?;
        let (frames, n_frames) = read_frames_dir(&base_dir.join(entry.frames_dir.as_ref().unwrap()))?;
        (clean, frames, n_frames)
    };
    let noise: Waveform<T> = if let (Some(cat), Some(nseed)) = (&entry.noise_category, entry.noise_seed) {
        synth_noise(NoiseCategory::from_str(cat)?, nseed, clean.len())
    } else {
        let raw: Waveform<T> = read_wav(&base_dir.join(entry.noise_wav.as_ref().unwrap()))?;
        let p = raw.power();
        if p <= 0.0 {
            return Err(Error::contract(format!("noise wav for {} has zero power", entry.id)));
        }
        let k = T::cast(1.0 / p.sqrt());
        Waveform::new(raw.samples.iter().map(|&s| s * k).collect(), raw.sample_rate_hz)
    };
    let noise = dsp::tile_to_len(&noise, clean.len());
    let video = video_segments_from_frames(&frames, n_frames)?;
    Ok(UtteranceData { id: entry.id.clone(), clean, noise, video, base_snr_db: entry.snr_db })
}
