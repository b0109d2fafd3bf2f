//! Command-line pipeline: synthetic corpus generation, adversarial
//! training, enhancement, objective evaluation, spectrogram export and the
//! gradient verification suite.
//!
//! Exit codes: 0 success, 2 usage error, 3 contract violation, 4 integrity
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vsegan_core::corpus::{build_corpus, CorpusConfig, Manifest};
use vsegan_core::dsp::{read_wav, stft, LogMelFrames, MelFilterbank, MEL_BANDS};
use vsegan_core::error::Error;
use vsegan_core::metrics::{evaluate, EVAL_HEADER};
use vsegan_core::train::{
    checkpoint_config, enhance_files, resume, train, Model, Precision, TrainConfig,
};

#[derive(Parser)]
#[command(name = "vsegan", version, about = "Audio-visual speech enhancement GAN pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic audio-visual corpus and its manifests.
    SynthData(SynthDataArgs),
    /// Train the enhancement GAN from a JSON config.
    Train(TrainArgs),
    /// Enhance a noisy WAV using a checkpoint and a mouth-frame directory.
    Enhance(EnhanceArgs),
    /// Mix, enhance and score a test manifest at the requested SNRs.
    Evaluate(EvaluateArgs),
    /// Export the log-mel spectrogram of a WAV as a PGM image.
    ExportSpec(ExportSpecArgs),
    /// Run the gradient verification suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthDataArgs {
    /// Output directory for audio/, frames/ and the split manifests.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 20)]
    val: usize,
    #[arg(long, default_value_t = 20)]
    test: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Utterance duration in seconds.
    #[arg(long, default_value_t = 1.05)]
    duration_s: f64,
    /// Comma-separated base SNRs cycled across entries.
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    snr: String,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON training config; missing fields take defaults.
    #[arg(long, required_unless_present_any = ["resume", "print_default_config"])]
    config: Option<PathBuf>,
    /// Resume from a checkpoint (its embedded config drives the run).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the default config JSON and exit.
    #[arg(long, default_value_t = false)]
    print_default_config: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width_scale: Option<u32>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    train_manifest: Option<String>,
    #[arg(long)]
    val_manifest: Option<String>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    wav: PathBuf,
    /// Directory of 80x80 PGM mouth frames at 25 fps, sorted by name.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated test SNRs in dB, e.g. "-5,0".
    #[arg(long, allow_hyphen_values = true)]
    snr: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportSpecArgs {
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Width scale of the end-to-end model (channels divided by 2^scale).
    #[arg(long, default_value_t = 8)]
    scale: u32,
}

/// Usage problems that surface after clap parsing (malformed list values
/// and similar) still exit with code 2.
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

fn parse_snr_list(s: &str) -> Result<Vec<f64>, CliError> {
    let list: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match list {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Usage(format!("malformed snr list {s:?}; expected e.g. \"-5,0\""))),
    }
}

fn echo_config(label: &str, value: &serde_json::Value) {
    println!("config {label}: {value}");
}

fn run_synth_data(args: &SynthDataArgs) -> Result<(), CliError> {
    let snrs = parse_snr_list(&args.snr)?;
    let mut cfg = CorpusConfig::new(args.seed, args.train, args.val, args.test);
    cfg.duration_s = args.duration_s;
    cfg.snr_choices_db = snrs;
    echo_config(
        "synth-data",
        &serde_json::json!({ "out": args.out, "corpus": serde_json::to_value(&cfg).map_err(Error::from)? }),
    );
    let [train_p, val_p, test_p] = build_corpus(&cfg, &args.out)?;
    println!("wrote {}", train_p.display());
    println!("wrote {}", val_p.display());
    println!("wrote {}", test_p.display());
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    if args.print_default_config {
        let json = serde_json::to_string_pretty(&TrainConfig::default()).map_err(Error::from)?;
        println!("{json}");
        return Ok(());
    }
    if let Some(ckpt) = &args.resume {
        let cfg = checkpoint_config(ckpt)?;
        echo_config("train (resumed)", &serde_json::to_value(&cfg).map_err(Error::from)?);
        let outcome = match cfg.precision {
            Precision::F32 => resume::<f32>(ckpt)?,
            Precision::F64 => resume::<f64>(ckpt)?,
        };
        println!("final checkpoint: {}", outcome.final_checkpoint.display());
        println!("metrics log: {}", outcome.metrics_csv.display());
        return Ok(());
    }
    let mut cfg = TrainConfig::load(args.config.as_ref().expect("clap enforces --config"))?;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.width_scale {
        cfg.width_scale = v;
    }
    if let Some(v) = &args.out_dir {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = &args.train_manifest {
        cfg.train_manifest = v.clone();
    }
    if let Some(v) = &args.val_manifest {
        cfg.val_manifest = v.clone();
    }
    cfg.validate()?;
    echo_config("train", &serde_json::to_value(&cfg).map_err(Error::from)?);
    let outcome = match cfg.precision {
        Precision::F32 => train::<f32>(&cfg)?,
        Precision::F64 => train::<f64>(&cfg)?,
    };
    for row in &outcome.rows {
        println!("{}", row.to_csv());
    }
    println!("final checkpoint: {}", outcome.final_checkpoint.display());
    println!("metrics log: {}", outcome.metrics_csv.display());
    Ok(())
}

fn run_enhance(args: &EnhanceArgs) -> Result<(), CliError> {
    let cfg = checkpoint_config(&args.ckpt)?;
    echo_config(
        "enhance",
        &serde_json::json!({
            "ckpt": args.ckpt, "wav": args.wav, "frames": args.frames, "out": args.out,
            "model": serde_json::to_value(&cfg).map_err(Error::from)?,
        }),
    );
    match cfg.precision {
        Precision::F32 => enhance_files::<f32>(&args.ckpt, &args.wav, &args.frames, &args.out)?,
        Precision::F64 => enhance_files::<f64>(&args.ckpt, &args.wav, &args.frames, &args.out)?,
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let snrs = parse_snr_list(&args.snr)?;
    let cfg = checkpoint_config(&args.ckpt)?;
    echo_config(
        "evaluate",
        &serde_json::json!({
            "ckpt": args.ckpt, "manifest": args.manifest, "snr": snrs, "out": args.out,
            "model": serde_json::to_value(&cfg).map_err(Error::from)?,
        }),
    );
    let manifest = Manifest::load(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let report = match cfg.precision {
        Precision::F32 => {
            let ck = vsegan_core::train::Checkpoint::load(&args.ckpt)?;
            let (model, _) = Model::<f32>::from_checkpoint(&ck)?;
            evaluate(&model, &manifest, &base, &snrs)?
        }
        Precision::F64 => {
            let ck = vsegan_core::train::Checkpoint::load(&args.ckpt)?;
            let (model, _) = Model::<f64>::from_checkpoint(&ck)?;
            evaluate(&model, &manifest, &base, &snrs)?
        }
    };
    std::fs::write(&args.out, report.to_csv()).map_err(Error::from)?;
    println!("{EVAL_HEADER}");
    for s in &report.summaries {
        println!(
            "median snr={} {}: stoi={:.4} sisdr={:.2} dB lsd={:.2} dB",
            s.snr_db, s.condition, s.median_stoi, s.median_sisdr_db, s.median_lsd_db
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_export_spec(args: &ExportSpecArgs) -> Result<(), CliError> {
    echo_config("export-spec", &serde_json::json!({ "wav": args.wav, "out": args.out }));
    let wav = read_wav::<f32>(&args.wav)?;
    let bank = MelFilterbank::new();
    let spec = stft(&wav)?;
    let lm = LogMelFrames::from_spectrogram(&spec, &bank)?;
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in &lm.data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = (hi - lo).max(1e-12);
    // rows top-down from the highest mel band, one column per frame
    let mut bytes = vec![0u8; MEL_BANDS * lm.frames];
    for t in 0..lm.frames {
        let frame = lm.frame(t);
        for band in 0..MEL_BANDS {
            let v = (frame[band] - lo) / range;
            bytes[(MEL_BANDS - 1 - band) * lm.frames + t] = (v * 255.0).round() as u8;
        }
    }
    vsegan_core::corpus::write_pgm(&args.out, lm.frames, MEL_BANDS, &bytes)?;
    println!("wrote {} ({} x {} px)", args.out.display(), lm.frames, MEL_BANDS);
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    echo_config("gradcheck", &serde_json::json!({ "scale": args.scale }));
    let (checks, all_ok) = vsegan_core::verify::full_suite(args.scale)?;
    for c in &checks {
        println!(
            "{} {} (max rel err {:.3e}, tolerance {:.0e})",
            if c.passed() { "PASS" } else { "FAIL" },
            c.name,
            c.report.worst(),
            c.report.tolerance
        );
    }
    if all_ok {
        println!("gradient suite: all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(CliError::Core(Error::contract("gradient suite reported failures")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SynthData(a) => run_synth_data(a),
        Command::Train(a) => run_train(a),
        Command::Enhance(a) => run_enhance(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::ExportSpec(a) => run_export_spec(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Integrity(_) => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}
