//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with `-- --nocapture`). Tolerances and budgets
//! are pinned here, in code.
//!
//! The heavy experiments (the one-batch overfit and the desk-scale training
//! run) execute once and share their artifacts across criteria.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use vsegan_core::corpus::{plan_corpus, synth_noise, synth_utterance, CorpusConfig, Manifest, NoiseCategory, SynthUtterance};
use vsegan_core::dsp::{
    cola_interior, istft, mix_at_snr, measure_snr_db, normalize, slice_segments, stft, LogMelFrames,
    MelFilterbank, NormStats, Waveform, SAMPLE_RATE_HZ, SEG_FRAMES, VIDEO_FRAMES_PER_SEG,
};
use vsegan_core::metrics::{evaluate, si_sdr, stoi, EvalReport};
use vsegan_core::net::{encoder_plan, LayerCtx, Mode, NetBinding, NetConfig};
use vsegan_core::tensor::Tape;
use vsegan_core::train::{
    assemble_batch, prepare_data, resume, train, train_step, Checkpoint, Model, TrainConfig,
};

fn pass(name: &str, detail: String) {
    println!("[PASS] {name}: {detail}");
}

fn work_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vsegan_acceptance_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// ── shared desk-scale experiment ────────────────────────────────────

struct DeskScaleRun {
    report: EvalReport,
    train_minutes: f64,
    final_ckpt: PathBuf,
    epochs_logged: usize,
}

static DESK_SCALE: OnceLock<DeskScaleRun> = OnceLock::new();

/// width_scale 4, 200 synthetic train utterances, 5 epochs; the learning
/// rate is raised to 1e-3 because the desk run covers ~625 optimizer steps,
/// three orders of magnitude fewer than the published regime.
fn desk_scale() -> &'static DeskScaleRun {
    DESK_SCALE.get_or_init(|| {
        let dir = work_dir("desk_scale");
        let corpus = CorpusConfig::new(21, 200, 20, 20);
        let [train_m, val_m, test_m] = plan_corpus(&corpus).unwrap();
        let (tp, vp, sp) = (dir.join("train.json"), dir.join("val.json"), dir.join("test.json"));
        train_m.save(&tp).unwrap();
        val_m.save(&vp).unwrap();
        test_m.save(&sp).unwrap();

        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            width_scale: 4,
            lr: 1e-3,
            seed: 22,
            train_manifest: tp.to_string_lossy().into_owned(),
            val_manifest: vp.to_string_lossy().into_owned(),
            out_dir: dir.join("run").to_string_lossy().into_owned(),
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let outcome = train::<f32>(&cfg).unwrap();
        let train_minutes = t0.elapsed().as_secs_f64() / 60.0;

        let ck = Checkpoint::load(&outcome.final_checkpoint).unwrap();
        let (model, _) = Model::<f32>::from_checkpoint(&ck).unwrap();
        let test_manifest = Manifest::load(&sp).unwrap();
        let report = evaluate(&model, &test_manifest, &dir, &[-5.0, 0.0]).unwrap();
        DeskScaleRun {
            report,
            train_minutes,
            final_ckpt: outcome.final_checkpoint,
            epochs_logged: outcome.rows.len(),
        }
    })
}

// ── criteria ────────────────────────────────────────────────────────

#[test]
fn criterion_scale_disclaimer_documented() {
    // Published-corpus absolute scores are explicitly out of reach here;
    // the README must say so rather than imply comparability.
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md"))
        .expect("README.md at the workspace root");
    assert!(readme.contains("PESQ"), "README must state the PESQ substitution");
    assert!(
        readme.contains("not comparable") || readme.contains("not reproduce"),
        "README must disclaim comparability with published absolute scores"
    );
    pass(
        "scale disclaimer",
        "README documents the synthetic-corpus scope and the PESQ -> SI-SDR/LSD substitution".into(),
    );
}

#[test]
fn criterion_gradient_suite() {
    let t0 = Instant::now();
    let (checks, all_ok) = vsegan_core::verify::full_suite(8).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    for c in &checks {
        assert!(
            c.passed(),
            "{}: worst rel err {:.3e} exceeds {:.0e}",
            c.name,
            c.report.worst(),
            c.report.tolerance
        );
    }
    assert!(all_ok);
    assert!(secs < 60.0, "gradient suite took {secs:.1} s (budget 60 s)");
    let worst_op = checks[..checks.len() - 1].iter().map(|c| c.report.worst()).fold(0.0f64, f64::max);
    let e2e = checks.last().unwrap().report.worst();
    pass(
        "gradient suite",
        format!(
            "{} checks in {secs:.1} s; op-level worst {worst_op:.2e} < 1e-6 (64-bit), end-to-end {e2e:.2e} < 1e-3 (32-bit)",
            checks.len()
        ),
    );
}

#[test]
fn criterion_architecture_invariant() {
    // full-width ladder by construction arithmetic
    let plan = encoder_plan(&NetConfig::default());
    let want = [(64, (40, 10)), (128, (20, 5)), (256, (10, 5)), (512, (5, 5)), (1024, (5, 1))];
    for (stage, (ch, hw)) in want.iter().enumerate() {
        assert_eq!(plan[stage].channels, *ch, "stage {} channels", stage + 1);
        assert_eq!(plan[stage].audio_hw, *hw, "stage {} audio extent", stage + 1);
        assert_eq!(plan[stage].audio_hw, plan[stage].video_hw, "stage {} audio/video match", stage + 1);
    }

    // the same equality on a real forward pass (width-reduced for memory);
    // Generator::forward itself re-asserts the per-stage plan match
    let cfg = NetConfig::with_width_scale(2);
    let g = vsegan_core::net::Generator::new(cfg);
    let mut store = vsegan_core::tensor::ParamStore::<f32>::new();
    g.init_params(&mut store, 1);
    let mut tape = Tape::new();
    let bind = NetBinding::bind(&mut tape, &store, &[]);
    let mut ctx = LayerCtx::new(&mut tape, &bind, Mode::Eval);
    let a = ctx.tape.leaf(&vsegan_core::tensor::Tensor::rand_uniform(&[1, 1, 80, 20], -0.9, 0.9, 2));
    let v = ctx.tape.leaf(&vsegan_core::tensor::Tensor::rand_uniform(&[1, 5, 80, 80], 0.0, 1.0, 3));
    let y = g.forward(&mut ctx, a, v).unwrap();
    assert_eq!(ctx.tape.dims_of(y), &[1, 1, 80, 20]);
    pass(
        "architecture invariant",
        "audio/video feature dims equal at all 5 stages: (64,40,10) (128,20,5) (256,10,5) (512,5,5) (1024,5,1)".into(),
    );
}

#[test]
fn criterion_dsp_front_end() {
    // COLA round trip on white noise and a tone, interior rel err < 1e-6
    let mut worst = 0.0f64;
    for (seed, tone) in [(3u64, None), (0, Some(440.0))] {
        let samples: Vec<f64> = match tone {
            Some(f) => (0..16000)
                .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 16000.0).sin())
                .collect(),
            None => {
                let u: SynthUtterance<f64> = synth_utterance(seed + 900, 1.0).unwrap();
                u.clean.samples
            }
        };
        let w = Waveform::new(samples, SAMPLE_RATE_HZ);
        let spec = stft(&w).unwrap();
        let back = istft(&spec).unwrap();
        let interior = cola_interior(w.len().min(back.len()));
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in interior {
            err += (back.samples[i] - w.samples[i]).powi(2);
            norm += w.samples[i].powi(2);
        }
        worst = worst.max((err / norm).sqrt());
    }
    assert!(worst < 1e-6, "interior round-trip rel err {worst}");

    // mixing accuracy within 0.1 dB across [-20, 20] dB
    let clean: SynthUtterance<f64> = synth_utterance(901, 1.0).unwrap();
    let noise = synth_noise::<f64>(NoiseCategory::Babble, 17, clean.clean.len());
    let mut worst_mix = 0.0f64;
    for k in 0..=8 {
        let want = -20.0 + 5.0 * k as f64;
        let (_, scaled) = mix_at_snr(&clean.clean, &noise, want).unwrap();
        worst_mix = worst_mix.max((measure_snr_db(&clean.clean, &scaled) - want).abs());
    }
    assert!(worst_mix < 0.1, "mix accuracy {worst_mix} dB");

    // 200 ms slices: exactly 20 frames, aligned 1:1 with 5-frame video segments
    let u: SynthUtterance<f32> = synth_utterance(902, 1.05).unwrap();
    let bank = MelFilterbank::<f32>::new();
    let lm = LogMelFrames::from_spectrogram(&stft(&u.clean).unwrap(), &bank).unwrap();
    let segs = slice_segments(&lm);
    assert_eq!(segs[0].values.len(), 80 * SEG_FRAMES);
    let video_segs = u.n_frames / VIDEO_FRAMES_PER_SEG;
    assert_eq!(segs.len(), video_segs, "audio segments align 1:1 with video segments");
    pass(
        "dsp front end",
        format!(
            "round-trip rel err {worst:.2e} < 1e-6; SNR within {worst_mix:.3} dB over [-20,20]; {} x 20-frame slices aligned to {video_segs} x 5-frame video segments",
            segs.len()
        ),
    );
}

#[test]
fn criterion_loss_semantics() {
    use vsegan_core::net::{d_loss, g_loss};
    let mut tape = Tape::<f64>::new();
    let ones = tape.leaf(&vsegan_core::tensor::Tensor::ones(&[4]));
    let zeros = tape.leaf(&vsegan_core::tensor::Tensor::zeros(&[4]));
    let dl = d_loss(&mut tape, ones, zeros).unwrap();
    assert_eq!(tape.scalar_value(dl), 0.0, "d_loss at the (1,0) optimum");

    let y = tape.leaf(&vsegan_core::tensor::Tensor::rand_uniform(&[40], -1.0, 1.0, 9));
    let nodes = g_loss(&mut tape, ones, y, y, 100.0).unwrap();
    assert_eq!(tape.scalar_value(nodes.total), 0.0, "g_total at yhat=y, D=1");

    // exact decomposition in the arithmetic actually used (f32)
    let mut t32 = Tape::<f32>::new();
    let d = t32.leaf(&vsegan_core::tensor::Tensor::rand_uniform(&[6], -1.0, 1.0, 10));
    let yh = t32.leaf(&vsegan_core::tensor::Tensor::rand_uniform(&[50], -1.0, 1.0, 11));
    let yt = t32.leaf(&vsegan_core::tensor::Tensor::rand_uniform(&[50], -1.0, 1.0, 12));
    let n = g_loss(&mut t32, d, yh, yt, 100.0).unwrap();
    let (adv, l1, total) = (t32.scalar_value(n.adv), t32.scalar_value(n.l1), t32.scalar_value(n.total));
    assert_eq!(total, adv + 100.0f32 * l1, "g_total decomposition must be exact");
    pass(
        "loss semantics",
        format!("d_loss(1,0)=0; g_total(yhat=y, D=1)=0; decomposition exact ({total} = {adv} + 100*{l1})"),
    );
}

#[test]
fn criterion_training_procedure() {
    // freezing contract: train_step re-derives parameter digests around both
    // sub-updates and errors out on any violation; run several steps
    let dir = work_dir("overfit");
    let corpus = CorpusConfig::new(31, 2, 1, 1);
    let [train_m, _, _] = plan_corpus(&corpus).unwrap();
    let data = prepare_data::<f32>(&train_m, &dir, None, None).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        width_scale: 4,
        lr: 2e-3,
        seed: 33,
        norm: Some(data.norm),
        ..TrainConfig::default()
    };
    let mut model = Model::<f32>::init(&cfg).unwrap();
    let refs: Vec<(usize, usize)> = data.segs.iter().copied().take(2).collect();
    let batch = assemble_batch(&data, &refs, &[0.0, 0.0]).unwrap();

    let t0 = Instant::now();
    let first = train_step(&mut model, &batch, 0).unwrap().g_l1_loss;
    let mut last = first;
    let mut steps_to_90 = None;
    for s in 1..500u64 {
        last = train_step(&mut model, &batch, s).unwrap().g_l1_loss;
        if steps_to_90.is_none() && last <= 0.1 * first {
            steps_to_90 = Some(s + 1);
        }
    }
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    assert!(
        last <= 0.1 * first,
        "overfit-one-batch: g_l1 {first:.4} -> {last:.4} is less than a 90% reduction in 500 steps"
    );
    assert!(minutes < 10.0, "overfit run took {minutes:.1} min (budget 10)");
    pass(
        "training procedure",
        format!(
            "freezing digests verified on all 500 steps; g_l1 {first:.4} -> {last:.4} (>=90% drop, reached at step {}, {minutes:.1} min)",
            steps_to_90.map(|s| s.to_string()).unwrap_or_else(|| "500".into())
        ),
    );
}

#[test]
fn criterion_desk_scale_experiment() {
    let run = desk_scale();
    assert!(run.train_minutes < 120.0, "training took {:.1} min (budget 2 h)", run.train_minutes);
    assert_eq!(run.epochs_logged, 5, "metrics log row count == epochs");
    let noisy = run.report.summary(0.0, "noisy").unwrap();
    let enhanced = run.report.summary(0.0, "enhanced").unwrap();
    let d_sisdr = enhanced.median_sisdr_db - noisy.median_sisdr_db;
    let d_stoi = enhanced.median_stoi - noisy.median_stoi;
    assert!(d_sisdr >= 3.0, "median SI-SDR improvement {d_sisdr:.2} dB < 3 dB at 0 dB");
    assert!(d_stoi >= 0.05, "median STOI improvement {d_stoi:.3} < 0.05 at 0 dB");
    pass(
        "desk-scale experiment",
        format!(
            "width_scale 4, 200 utterances, 5 epochs in {:.1} min; held-out 0 dB medians: SI-SDR {:.2} -> {:.2} dB (+{d_sisdr:.2}), STOI {:.3} -> {:.3} (+{d_stoi:.3})",
            run.train_minutes, noisy.median_sisdr_db, enhanced.median_sisdr_db, noisy.median_stoi, enhanced.median_stoi
        ),
    );
}

#[test]
fn criterion_metric_oracles() {
    let u: SynthUtterance<f64> = synth_utterance(905, 1.2).unwrap();
    let s_self = stoi(&u.clean, &u.clean).unwrap();
    assert!((s_self - 1.0).abs() < 1e-6, "stoi(x,x) = {s_self}");

    let noise = synth_noise::<f64>(NoiseCategory::Babble, 77, u.clean.len());
    let mut prev = f64::INFINITY;
    let mut sweep = Vec::new();
    for &snr in &[10.0, 5.0, 0.0, -5.0, -10.0] {
        let (mixed, _) = mix_at_snr(&u.clean, &noise, snr).unwrap();
        let s = stoi(&u.clean, &mixed).unwrap();
        assert!(s < prev, "STOI must strictly decrease: {s} at {snr} dB vs {prev}");
        sweep.push(format!("{snr}dB:{s:.3}"));
        prev = s;
    }

    // corpus-median ordering on the shared desk-scale evaluation
    let run = desk_scale();
    let noisy_m5 = run.report.summary(-5.0, "noisy").unwrap().median_stoi;
    let noisy_0 = run.report.summary(0.0, "noisy").unwrap().median_stoi;
    assert!(
        noisy_m5 < noisy_0,
        "noisy STOI median at -5 dB ({noisy_m5:.3}) must fall below 0 dB ({noisy_0:.3})"
    );
    pass(
        "metric oracles",
        format!(
            "stoi(x,x)={s_self:.8}; sweep {}; noisy medians {noisy_m5:.3} @ -5 dB < {noisy_0:.3} @ 0 dB",
            sweep.join(" ")
        ),
    );
}

#[test]
fn criterion_persistence() {
    // byte-identical save -> load -> save on the trained desk-scale model
    let run = desk_scale();
    let dir = work_dir("persistence");
    let resaved = dir.join("resaved.vsgn");
    let ck = Checkpoint::load(&run.final_ckpt).unwrap();
    ck.save(&resaved).unwrap();
    let a = std::fs::read(&run.final_ckpt).unwrap();
    let b = std::fs::read(&resaved).unwrap();
    assert_eq!(a, b, "save -> load -> save must be byte-identical");

    // corrupted byte is rejected via CRC
    let mut corrupt = a.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0x40;
    let bad_path = dir.join("corrupt.vsgn");
    std::fs::write(&bad_path, &corrupt).unwrap();
    match Checkpoint::load(&bad_path) {
        Err(vsegan_core::Error::Integrity(_)) => {}
        other => panic!("corrupted checkpoint must fail with an integrity error, got {other:?}"),
    }

    // resume reproduces the unresumed trajectory exactly
    let corpus = CorpusConfig::new(41, 3, 2, 1);
    let [train_m, val_m, _] = plan_corpus(&corpus).unwrap();
    let (tp, vp) = (dir.join("train.json"), dir.join("val.json"));
    train_m.save(&tp).unwrap();
    val_m.save(&vp).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        width_scale: 6,
        seed: 43,
        train_manifest: tp.to_string_lossy().into_owned(),
        val_manifest: vp.to_string_lossy().into_owned(),
        out_dir: dir.join("run").to_string_lossy().into_owned(),
        ..TrainConfig::default()
    };
    let straight = train::<f32>(&cfg).unwrap();
    let ckpt1 = PathBuf::from(&cfg.out_dir).join("ckpt_epoch_0001.vsgn");
    let final_bytes = std::fs::read(&straight.final_checkpoint).unwrap();
    let resumed = resume::<f32>(&ckpt1).unwrap();
    assert_eq!(resumed.rows.len(), 1);
    assert_eq!(resumed.rows[0].to_csv(), straight.rows[1].to_csv(), "resumed losses/metrics must match");
    let resumed_bytes = std::fs::read(&straight.final_checkpoint).unwrap();
    assert_eq!(final_bytes, resumed_bytes, "resumed final checkpoint must be byte-identical");

    let _ = std::fs::remove_dir_all(&dir);
    pass(
        "persistence",
        "checkpoint save/load/save byte-identical; flipped byte rejected by CRC; resume reproduced epoch 2 bit-exactly".into(),
    );
}

#[test]
fn criterion_normalization_and_reconstruction_support() {
    // supporting invariants the end-to-end path relies on: normalization
    // round trip and the documented self-reconstruction floor
    let stats = NormStats { min: -12.0, max: 4.0 };
    let seg = vsegan_core::dsp::LogMelSegment::new(
        (0..80 * SEG_FRAMES).map(|i| -12.0 + 16.0 * (i as f64 / (80.0 * SEG_FRAMES as f64))).collect(),
    )
    .unwrap();
    let n = normalize(&seg, &stats).unwrap();
    assert!(n.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    let d = vsegan_core::dsp::denormalize(&n);
    let worst = d.values.iter().zip(&seg.values).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
    assert!(worst < 1e-12);

    let u: SynthUtterance<f64> = synth_utterance(907, 1.2).unwrap();
    let bank = MelFilterbank::<f64>::new();
    let spec = stft(&u.clean).unwrap();
    let lm = LogMelFrames::from_spectrogram(&spec, &bank).unwrap();
    let segs = slice_segments(&lm);
    let back = vsegan_core::dsp::mel_pseudo_inverse(&segs, &spec, &bank).unwrap();
    let clean_t = Waveform::new(u.clean.samples[..back.len()].to_vec(), SAMPLE_RATE_HZ);
    let floor = si_sdr(&clean_t, &back).unwrap();
    assert!(floor > 10.0, "self-reconstruction floor {floor:.2} dB");
    pass(
        "normalization & reconstruction support",
        format!("normalize/denormalize exact within clamp; mel-inversion self-reconstruction {floor:.2} dB > 10 dB"),
    );
}
