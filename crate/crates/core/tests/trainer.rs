//! Training-loop behavior: the three-step procedure's freezing contract,
//! determinism, resumption, and the enhancement pipeline's integrity.

use std::path::{Path, PathBuf};

use vsegan_core::corpus::{plan_corpus, CorpusConfig};
use vsegan_core::dsp::{mix_at_snr, write_wav, SAMPLE_RATE_HZ};
use vsegan_core::train::{
    assemble_batch, prepare_data, resume, train, train_step, Batch, Checkpoint, Enhancer, Model, Precision,
    TrainConfig, TrainData,
};

fn test_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vsegan_trainer_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Writes synthetic-entry manifests (no audio/frame files needed: the
/// loader regenerates from seeds).
fn write_manifests(dir: &Path, seed: u64, train_n: usize, val_n: usize, test_n: usize) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = CorpusConfig::new(seed, train_n, val_n, test_n);
    let [train_m, val_m, test_m] = plan_corpus(&cfg).unwrap();
    let (tp, vp, sp) = (dir.join("train.json"), dir.join("val.json"), dir.join("test.json"));
    train_m.save(&tp).unwrap();
    val_m.save(&vp).unwrap();
    test_m.save(&sp).unwrap();
    (tp, vp, sp)
}

fn tiny_config(dir: &Path, train_manifest: &Path, val_manifest: &Path) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        width_scale: 6,
        seed: 7,
        train_manifest: train_manifest.to_string_lossy().into_owned(),
        val_manifest: val_manifest.to_string_lossy().into_owned(),
        out_dir: dir.join("run").to_string_lossy().into_owned(),
        ..TrainConfig::default()
    }
}

fn fixed_batch(data: &TrainData<f32>, n: usize) -> Batch<f32> {
    let refs: Vec<(usize, usize)> = data.segs.iter().copied().take(n).collect();
    let attens = vec![0.0; refs.len()];
    assemble_batch(data, &refs, &attens).unwrap()
}

#[test]
fn step_updates_both_networks_and_keeps_cross_freezing() {
    let dir = test_dir("step");
    let (tp, vp, _) = write_manifests(&dir, 31, 4, 2, 2);
    let cfg = tiny_config(&dir, &tp, &vp);
    let man = vsegan_core::corpus::Manifest::load(&tp).unwrap();
    let data = prepare_data::<f32>(&man, &dir, None, None).unwrap();
    let mut resolved = cfg.clone();
    resolved.norm = Some(data.norm);
    let mut model = Model::<f32>::init(&resolved).unwrap();
    let batch = fixed_batch(&data, 4);

    let g0 = model.store.digest("g.");
    let d0 = model.store.digest("d.");
    // train_step internally re-checks the freezing contract with digests and
    // errors out if it is violated
    let losses = train_step(&mut model, &batch, 0).unwrap();
    assert_ne!(model.store.digest("g."), g0, "generator must change in step 3");
    assert_ne!(model.store.digest("d."), d0, "discriminator must change in steps 1-2");
    assert!(losses.d_loss.is_finite() && losses.g_total.is_finite());
    // the decomposition is exact in the model's (f32) arithmetic
    assert_eq!(
        losses.g_total as f32,
        losses.g_adv_loss as f32 + losses.lambda as f32 * losses.g_l1_loss as f32
    );

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn identical_seeds_give_identical_loss_sequences() {
    let dir = test_dir("determinism");
    let (tp, vp, _) = write_manifests(&dir, 32, 4, 2, 2);
    let cfg = tiny_config(&dir, &tp, &vp);
    let man = vsegan_core::corpus::Manifest::load(&tp).unwrap();

    let run = || {
        let data = prepare_data::<f32>(&man, &dir, None, None).unwrap();
        let mut resolved = cfg.clone();
        resolved.norm = Some(data.norm);
        let mut model = Model::<f32>::init(&resolved).unwrap();
        let batch = fixed_batch(&data, 4);
        (0..10)
            .map(|s| {
                let l = train_step(&mut model, &batch, s).unwrap();
                (
                    l.d_loss.to_bits(),
                    l.g_adv_loss.to_bits(),
                    l.g_l1_loss.to_bits(),
                    l.g_total.to_bits(),
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run(), "loss sequences must be bit-identical");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn overfit_smoke_reduces_l1() {
    // scaled-down version of the overfit oracle: one fixed batch, higher lr
    let dir = test_dir("overfit");
    let (tp, vp, _) = write_manifests(&dir, 33, 2, 1, 1);
    let mut cfg = tiny_config(&dir, &tp, &vp);
    cfg.lr = 2e-3;
    let man = vsegan_core::corpus::Manifest::load(&tp).unwrap();
    let data = prepare_data::<f32>(&man, &dir, None, None).unwrap();
    cfg.norm = Some(data.norm);
    let mut model = Model::<f32>::init(&cfg).unwrap();
    let batch = fixed_batch(&data, 2);

    let first = train_step(&mut model, &batch, 0).unwrap().g_l1_loss;
    let mut last = first;
    for s in 1..120 {
        last = train_step(&mut model, &batch, s).unwrap().g_l1_loss;
    }
    assert!(
        last < 0.6 * first,
        "g_l1 should fall by at least 40% in 120 steps: {first} -> {last}"
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn full_run_is_deterministic_and_resumable() {
    let dir = test_dir("resume");
    let (tp, vp, _) = write_manifests(&dir, 34, 3, 2, 2);
    let cfg = tiny_config(&dir, &tp, &vp);

    let out_a = train::<f32>(&cfg).unwrap();
    assert_eq!(out_a.rows.len(), cfg.epochs, "metrics log row count == epochs");
    let ckpt1 = PathBuf::from(&cfg.out_dir).join("ckpt_epoch_0001.vsgn");
    let ckpt2 = PathBuf::from(&cfg.out_dir).join("ckpt_epoch_0002.vsgn");
    let final_bytes = std::fs::read(&ckpt2).unwrap();

    // same config + seed -> identical metrics log
    let mut cfg_b = cfg.clone();
    cfg_b.out_dir = dir.join("run_b").to_string_lossy().into_owned();
    let out_b = train::<f32>(&cfg_b).unwrap();
    let csv_a: Vec<String> = out_a.rows.iter().map(|r| r.to_csv()).collect();
    let csv_b: Vec<String> = out_b.rows.iter().map(|r| r.to_csv()).collect();
    assert_eq!(csv_a, csv_b, "two runs from the same config+seed must match");

    // resume from epoch 1 reproduces epoch 2 exactly (metrics + checkpoint bytes)
    let out_r = resume::<f32>(&ckpt1).unwrap();
    assert_eq!(out_r.rows.len(), 1);
    assert_eq!(out_r.rows[0].to_csv(), csv_a[1], "resumed epoch must match the unresumed trajectory");
    let resumed_bytes = std::fs::read(&ckpt2).unwrap();
    if final_bytes != resumed_bytes {
        let off = final_bytes
            .iter()
            .zip(&resumed_bytes)
            .position(|(a, b)| a != b)
            .unwrap_or(final_bytes.len().min(resumed_bytes.len()));
        panic!(
            "resumed checkpoint differs: lens {} vs {}, first diff at offset {off}: {:?} vs {:?}",
            final_bytes.len(),
            resumed_bytes.len(),
            &final_bytes[off.saturating_sub(40)..(off + 40).min(final_bytes.len())],
            &resumed_bytes[off.saturating_sub(40)..(off + 40).min(resumed_bytes.len())]
        );
    }

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn enhance_with_untrained_model_yields_valid_audio() {
    let dir = test_dir("enhance");
    let (tp, vp, _) = write_manifests(&dir, 35, 2, 1, 1);
    let cfg = tiny_config(&dir, &tp, &vp);
    let man = vsegan_core::corpus::Manifest::load(&tp).unwrap();
    let data = prepare_data::<f32>(&man, &dir, None, None).unwrap();
    let mut resolved = cfg;
    resolved.norm = Some(data.norm);
    let model = Model::<f32>::init(&resolved).unwrap();
    let enhancer = Enhancer::from_model(&model).unwrap();

    let u = &data.utts[0];
    let noisy = vsegan_core::dsp::Waveform::new(
        u.clean
            .samples
            .iter()
            .zip(&u.noise_scaled.samples)
            .map(|(&c, &n)| c + n)
            .collect::<Vec<f32>>(),
        SAMPLE_RATE_HZ,
    );
    let out = enhancer.enhance(&noisy, &u.video).unwrap();
    // duration == input truncated to whole segments (1.05 s -> 5 segments = 1.0 s)
    assert_eq!(out.len(), u.n_segs * vsegan_core::train::SEG_SAMPLES);
    assert!(out.samples.iter().all(|s| s.is_finite()));
    write_wav(&dir.join("enhanced.wav"), &out).unwrap();

    // video/audio length mismatch is a contract violation
    let too_few = &u.video[..2];
    assert!(enhancer.enhance(&noisy, too_few).is_err());

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn segment_cache_round_trips_features() {
    let dir = test_dir("cache");
    let (tp, _, _) = write_manifests(&dir, 36, 3, 1, 1);
    let man = vsegan_core::corpus::Manifest::load(&tp).unwrap();
    let cache = dir.join("segments.vsgc");

    let a = prepare_data::<f32>(&man, &dir, None, Some(&cache)).unwrap();
    assert!(cache.exists(), "cache file written on first pass");
    let b = prepare_data::<f32>(&man, &dir, Some(a.norm), Some(&cache)).unwrap();
    for (ua, ub) in a.utts.iter().zip(&b.utts) {
        assert_eq!(ua.n_segs, ub.n_segs);
        for (sa, sb) in ua.clean_segs.iter().zip(&ub.clean_segs) {
            assert_eq!(sa.values, sb.values, "cached features must be bit-identical");
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn checkpoint_precision_dispatch_and_mismatch() {
    let dir = test_dir("precision");
    let (tp, vp, _) = write_manifests(&dir, 37, 2, 1, 1);
    let mut cfg = tiny_config(&dir, &tp, &vp);
    cfg.precision = Precision::F64;
    assert!(Model::<f32>::init(&cfg).is_err(), "precision/scalar mismatch must be rejected");
    let man = vsegan_core::corpus::Manifest::load(&tp).unwrap();
    let data = prepare_data::<f64>(&man, &dir, None, None).unwrap();
    cfg.norm = Some(data.norm);
    let model = Model::<f64>::init(&cfg).unwrap();
    let ck = model.to_checkpoint(Default::default()).unwrap();
    let p = dir.join("m.vsgn");
    ck.save(&p).unwrap();
    let loaded = Checkpoint::load(&p).unwrap();
    assert!(Model::<f64>::from_checkpoint(&loaded).is_ok());
    assert!(Model::<f32>::from_checkpoint(&loaded).is_err());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn evaluate_emits_rows_for_every_condition() {
    let dir = test_dir("evaluate");
    let (tp, vp, sp) = write_manifests(&dir, 38, 2, 1, 2);
    let cfg = tiny_config(&dir, &tp, &vp);
    let man = vsegan_core::corpus::Manifest::load(&tp).unwrap();
    let data = prepare_data::<f32>(&man, &dir, None, None).unwrap();
    let mut resolved = cfg;
    resolved.norm = Some(data.norm);
    let model = Model::<f32>::init(&resolved).unwrap();

    let test_man = vsegan_core::corpus::Manifest::load(&sp).unwrap();
    let report = vsegan_core::metrics::evaluate(&model, &test_man, &dir, &[-5.0, 0.0]).unwrap();
    assert_eq!(report.rows.len(), 2 * 2 * 2, "rows == |manifest| x |snr| x 2");
    let again = vsegan_core::metrics::evaluate(&model, &test_man, &dir, &[-5.0, 0.0]).unwrap();
    assert_eq!(report.to_csv(), again.to_csv(), "evaluation must be deterministic");

    // sanity: mixing respects the requested SNRs in the report path
    let u = vsegan_core::corpus::load_utterance::<f32>(&test_man.entries[0], &dir).unwrap();
    let (_, scaled) = mix_at_snr(&u.clean, &u.noise, -5.0).unwrap();
    let got = vsegan_core::dsp::measure_snr_db(&u.clean, &scaled);
    assert!((got + 5.0).abs() < 0.1);

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn latent_noise_channel_trains_and_enhances() {
    let dir = test_dir("latent");
    let (tp, vp, _) = write_manifests(&dir, 39, 2, 1, 1);
    let mut cfg = tiny_config(&dir, &tp, &vp);
    cfg.latent_noise = true;
    let man = vsegan_core::corpus::Manifest::load(&tp).unwrap();
    let data = prepare_data::<f32>(&man, &dir, None, None).unwrap();
    cfg.norm = Some(data.norm);
    let mut model = Model::<f32>::init(&cfg).unwrap();
    // the audio encoder's first conv expects 2 input channels now
    assert_eq!(model.store.get("g.aenc.conv1.w").unwrap().dims()[1], 2);

    let batch = fixed_batch(&data, 2);
    let a = train_step(&mut model, &batch, 0).unwrap();
    let b = {
        // same seed and step index must redraw the same latent channel
        let mut model2 = Model::<f32>::init(&cfg).unwrap();
        train_step(&mut model2, &batch, 0).unwrap()
    };
    assert_eq!(a.g_total.to_bits(), b.g_total.to_bits(), "latent draws are step-deterministic");

    let enhancer = Enhancer::from_model(&model).unwrap();
    let u = &data.utts[0];
    let noisy = vsegan_core::dsp::Waveform::new(
        u.clean
            .samples
            .iter()
            .zip(&u.noise_scaled.samples)
            .map(|(&c, &n)| c + n)
            .collect::<Vec<f32>>(),
        SAMPLE_RATE_HZ,
    );
    let e1 = enhancer.enhance(&noisy, &u.video).unwrap();
    let e2 = enhancer.enhance(&noisy, &u.video).unwrap();
    assert_eq!(e1.samples, e2.samples, "enhancement stays deterministic with the latent channel");
    let _ = std::fs::remove_dir_all(&dir);
}
