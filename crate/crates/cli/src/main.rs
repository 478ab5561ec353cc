use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use duplex_core::checkpoint::Checkpoint;
use duplex_core::config::RunConfig;
use duplex_core::corpus::{synthesize_toy_corpus, ToySpec, Utterance};
use duplex_core::eval::render_spectrogram_image;
use duplex_core::experiment::{build_trainer, evaluate_recognition, phonemes_only, DataRun, SweepKind};
use duplex_core::modality::Direction;
use duplex_core::store::{self, read_features, read_manifest, read_vocab, read_vocab_file, write_corpus, ManifestEntry};
use duplex_core::text::{Lexicon, PhonemeVocab};
use duplex_core::training::{Trainer, LOSS_CSV_HEADER};
use duplex_core::CoreError;
use duplex_dsp::{griffin_lim, mel_spectrogram, read_wav, resample, write_wav, MelFilterbank, MelSpectrogram, StftConfig};
use duplex_tensor::Tensor;

#[derive(Parser)]
#[command(name = "duplex", version, about = "Speech synthesis and recognition from mostly unpaired data on one shared Transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phoneme/mel corpus as a data directory.
    MakeToyCorpus(ToyArgs),
    /// Extract mel features and phoneme transcripts from a wav manifest.
    Prepare(PrepareArgs),
    /// Train from a config; writes config echo, loss CSV and checkpoints.
    Train(TrainArgs),
    /// Text (or phoneme symbols) to a wav file and a spectrogram image.
    Synthesize(SynthesizeArgs),
    /// Wav or MELF feature file to a phoneme string.
    Recognize(RecognizeArgs),
    /// Test-set PER, overall and by sequence half.
    Evaluate(EvaluateArgs),
    /// Train once per setting and write final PER rows.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set steps=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> duplex_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("override {kv:?} is not KEY=VALUE")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = ToySpec::default().num_phonemes)]
    phonemes: usize,
    #[arg(long, default_value_t = ToySpec::default().count)]
    count: usize,
    #[arg(long, default_value_t = ToySpec::default().frames_per_phoneme)]
    frames_per_phoneme: usize,
    #[arg(long, default_value_t = ToySpec::default().n_mels)]
    n_mels: usize,
    #[arg(long, default_value_t = ToySpec::default().noise)]
    noise: f64,
    #[arg(long, default_value_t = ToySpec::default().min_len)]
    min_len: usize,
    #[arg(long, default_value_t = ToySpec::default().max_len)]
    max_len: usize,
}

#[derive(Args)]
struct PrepareArgs {
    /// Lines `id<TAB>wav_path<TAB>transcript`; relative wav paths resolve
    /// against the manifest's directory.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pronunciation lexicon (`WORD<TAB>PH PH ...`); the built-in one otherwise.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Continue from this checkpoint; the loss CSV is cut back to its step.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print a loss line every this many steps (0 = silent).
    #[arg(long, default_value_t = 50)]
    log_every: u64,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file; defaults to the one in the checkpoint's data directory.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Decode right to left instead of left to right.
    #[arg(long)]
    right_to_left: bool,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// English text, converted with the lexicon.
    #[arg(long, conflicts_with = "phonemes", required_unless_present = "phonemes")]
    text: Option<String>,
    /// Space-separated phoneme symbols from the model's vocabulary.
    #[arg(long)]
    phonemes: Option<String>,
    #[arg(long)]
    out_wav: PathBuf,
    #[arg(long)]
    out_pgm: Option<PathBuf>,
}

#[derive(Args)]
struct RecognizeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// `.wav` or `.melf` input.
    input: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Data directory to score in full; the checkpoint's test split otherwise.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// ablation, paired or maskprob.
    which: String,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeToyCorpus(a) => make_toy_corpus(a),
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_command(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Recognize(a) => recognize(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<CoreError>()).map_or(3, CoreError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn make_toy_corpus(a: ToyArgs) -> anyhow::Result<()> {
    let spec = ToySpec {
        num_phonemes: a.phonemes,
        count: a.count,
        frames_per_phoneme: a.frames_per_phoneme,
        n_mels: a.n_mels,
        noise: a.noise,
        min_len: a.min_len,
        max_len: a.max_len,
        ..ToySpec::default()
    };
    let toy = synthesize_toy_corpus(&spec, a.seed)?;
    let manifest = toy
        .utterances
        .iter()
        .map(|u| {
            let text = u.text.as_deref().unwrap_or_default();
            Ok(ManifestEntry {
                id: u.id.clone(),
                wav: "-".to_string(),
                transcript: toy.vocab.render(phonemes_only(text))?,
            })
        })
        .collect::<duplex_core::Result<Vec<_>>>()?;
    write_corpus(&a.out, &toy.vocab, &manifest, &toy.utterances)?;
    println!("wrote {} utterances to {}", toy.utterances.len(), a.out.display());
    Ok(())
}

fn features_from_wav(path: &Path, stft: &StftConfig, fb: &MelFilterbank) -> duplex_core::Result<Tensor> {
    let mut wave = read_wav(path)?;
    if wave.sample_rate != stft.sample_rate {
        wave = resample(&wave, stft.sample_rate)?;
    }
    let mel = mel_spectrogram(&wave.samples, stft, fb)?;
    Ok(Tensor::from_rows(&mel.frames)?)
}

fn prepare(a: PrepareArgs) -> anyhow::Result<()> {
    let cfg = a.config.resolve()?;
    let lexicon = match &a.lexicon {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::builtin(),
    };
    let manifest = read_manifest(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let fb = MelFilterbank::new(&cfg.stft);
    let mut utterances = Vec::with_capacity(manifest.len());
    for entry in &manifest {
        let wav = base.join(&entry.wav);
        let speech = features_from_wav(&wav, &cfg.stft, &fb).with_context(|| format!("utterance {}", entry.id))?;
        let text = lexicon.text_to_phonemes(&entry.transcript);
        utterances.push(Utterance::paired(entry.id.clone(), speech, text));
    }
    write_corpus(&a.out, lexicon.vocab(), &manifest, &utterances)?;
    println!("prepared {} utterances into {}", utterances.len(), a.out.display());
    Ok(())
}

fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(format!("checkpoint-{step:08}.bin"))
}

/// Trains `run` to `run.config.steps`, logging losses and checkpoints under
/// the output directory.
fn train_run(run: &mut DataRun, resume: Option<&Path>, log_every: u64) -> anyhow::Result<()> {
    let out = run.config.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CoreError::io(format!("creating {}", out.display()), e))?;
    let echo = run.config.echo();
    fs::write(out.join("config.txt"), &echo).map_err(|e| CoreError::io("writing config echo", e))?;

    let csv_path = out.join("losses.csv");
    match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.restore(&mut run.trainer)?;
            let kept = match fs::read_to_string(&csv_path) {
                Ok(text) => truncate_loss_log(&text, ckpt.step),
                Err(_) => LOSS_CSV_HEADER.to_string(),
            };
            fs::write(&csv_path, kept).map_err(|e| CoreError::io("rewriting loss log", e))?;
        }
        None => fs::write(&csv_path, LOSS_CSV_HEADER).map_err(|e| CoreError::io("creating loss log", e))?,
    }
    let mut csv = OpenOptions::new()
        .append(true)
        .open(&csv_path)
        .map_err(|e| CoreError::io("opening loss log", e))?;

    let every = run.config.checkpoint_every;
    while run.trainer.step() < run.config.steps {
        let report = run.trainer.train_step(&run.partition)?;
        csv.write_all(report.csv_rows().as_bytes())
            .map_err(|e| CoreError::io("writing loss log", e))?;
        if log_every > 0 && report.step % log_every == 0 {
            println!(
                "step {:>6}  total {:.4}  mse {:.4}  stop {:.4}  nll {:.4}  lr {:.2e}",
                report.step, report.total, report.speech_mse, report.stop_bce, report.text_nll, report.learning_rate
            );
        }
        if every > 0 && report.step % every == 0 {
            Checkpoint::capture(&run.trainer, &echo).save(&checkpoint_path(&out, report.step))?;
        }
    }
    let final_ckpt = Checkpoint::capture(&run.trainer, &echo);
    final_ckpt.save(&checkpoint_path(&out, run.trainer.step()))?;
    final_ckpt.save(&out.join("final.bin"))?;
    Ok(())
}

/// Header plus rows with step at most `step`.
fn truncate_loss_log(text: &str, step: u64) -> String {
    let mut out = LOSS_CSV_HEADER.to_string();
    for line in text.lines().skip(1) {
        let row_step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
        if row_step.is_some_and(|s| s <= step) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn train_command(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = a.config.resolve()?;
    let mut run = DataRun::open(cfg)?;
    train_run(&mut run, a.resume.as_deref(), a.log_every)?;
    let per = evaluate_recognition(&run.trainer, &run.partition.test, Direction::LeftToRight)?;
    println!("test PER {:.4} (left {:.4}, right {:.4})", per.overall.per(), per.left.per(), per.right.per());
    Ok(())
}

/// Trainer, config and vocabulary restored from a checkpoint.
fn load_model(a: &ModelArgs) -> anyhow::Result<(Trainer, RunConfig, PhonemeVocab)> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let cfg = RunConfig::parse(&ckpt.config)?;
    let vocab = match &a.vocab {
        Some(p) => read_vocab_file(p)?,
        None => read_vocab(&cfg.data_dir)?,
    };
    let mut trainer = build_trainer(&cfg, vocab.len())?;
    ckpt.restore(&mut trainer)?;
    Ok((trainer, cfg, vocab))
}

fn direction(a: &ModelArgs) -> Direction {
    if a.right_to_left {
        Direction::RightToLeft
    } else {
        Direction::LeftToRight
    }
}

fn synthesize(a: SynthesizeArgs) -> anyhow::Result<()> {
    let (trainer, cfg, vocab) = load_model(&a.model)?;
    let ids = match (&a.text, &a.phonemes) {
        (_, Some(p)) => vocab.parse(p)?,
        (Some(t), None) => {
            let lexicon = Lexicon::builtin();
            let ids = lexicon.text_to_phonemes(t);
            // Map through symbols so a non-ARPABET model vocabulary is caught.
            let symbols = lexicon.vocab().ids_to_phonemes(phonemes_only(&ids))?;
            vocab.parse(&symbols.join(" "))?
        }
        (None, None) => bail!("give --text or --phonemes"),
    };
    let gen = trainer.synthesize(&ids, direction(&a.model));
    if gen.truncated {
        eprintln!("warning: synthesis hit the length limit before predicting a stop");
    }
    let mel = MelSpectrogram {
        frames: (0..gen.output.rows()).map(|r| gen.output.row(r).to_vec()).collect(),
    };
    let fb = MelFilterbank::new(&cfg.stft);
    let wave = griffin_lim(&mel, &cfg.stft, &fb, cfg.griffin_lim_iters)?;
    write_wav(&a.out_wav, &wave)?;
    if let Some(p) = &a.out_pgm {
        render_spectrogram_image(&gen.output, p)?;
    }
    println!("{} frames, {:.2} s", gen.output.rows(), wave.duration_secs());
    Ok(())
}

fn recognize(a: RecognizeArgs) -> anyhow::Result<()> {
    let (trainer, cfg, vocab) = load_model(&a.model)?;
    let speech = match a.input.extension().and_then(|e| e.to_str()) {
        Some("melf") => read_features(&a.input)?,
        Some("wav") => features_from_wav(&a.input, &cfg.stft, &MelFilterbank::new(&cfg.stft))?,
        _ => bail!(CoreError::Data(format!("{}: expected a .wav or .melf file", a.input.display()))),
    };
    if speech.cols() != cfg.model.n_mels {
        bail!(CoreError::Data(format!(
            "input has {} mel bins, model expects {}",
            speech.cols(),
            cfg.model.n_mels
        )));
    }
    let gen = trainer.recognize(&speech, direction(&a.model));
    println!("{}", vocab.render(phonemes_only(&gen.output))?);
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let (trainer, cfg, _) = load_model(&a.model)?;
    let utterances = match &a.data_dir {
        Some(dir) => store::load_corpus(dir)?.utterances,
        None => {
            let corpus = store::load_corpus(&cfg.data_dir)?;
            duplex_core::corpus::split_dataset(&corpus.utterances, &cfg.split, cfg.split_seed)?.test
        }
    };
    let per = evaluate_recognition(&trainer, &utterances, direction(&a.model))?;
    println!("part,errors,reference,per");
    for (name, r) in [("overall", per.overall), ("left", per.left), ("right", per.right)] {
        println!("{name},{},{},{:.6}", r.errors(), r.reference_len, r.per());
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let kind = SweepKind::parse(&a.which)?;
    let base = a.config.resolve()?;
    fs::create_dir_all(&base.out_dir).map_err(|e| CoreError::io(format!("creating {}", base.out_dir.display()), e))?;
    let csv_path = base.out_dir.join(format!("sweep-{}.csv", kind.name()));
    let mut rows = String::from("setting,per,left_per,right_per\n");
    for (label, overrides) in kind.settings() {
        let mut cfg = base.clone();
        for (k, v) in &overrides {
            cfg.set(k, v)?;
        }
        cfg.out_dir = base.out_dir.join(format!("{}-{}", kind.name(), label.trim_start_matches('+').replace('+', "-")));
        cfg.validate()?;
        println!("== {label}");
        let mut run = DataRun::open(cfg)?;
        train_run(&mut run, None, 0)?;
        let per = evaluate_recognition(&run.trainer, &run.partition.test, Direction::LeftToRight)?;
        println!("{label}: PER {:.4}", per.overall.per());
        rows.push_str(&format!(
            "{label},{:.6},{:.6},{:.6}\n",
            per.overall.per(),
            per.left.per(),
            per.right.per()
        ));
        fs::write(&csv_path, &rows).map_err(|e| CoreError::io("writing sweep results", e))?;
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}
