//! The `phasecomp` command line: corpus generation, training, composition,
//! inbetweening, long-term generation, evaluation and export.
//!
//! Exit statuses: 0 success, 1 other failure, 2 bad flags or config,
//! 3 missing checkpoint, 4 digest mismatch between checkpoints,
//! 5 unreadable or malformed input data.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use phasecomp::composer::{compose_long, compose_pair, inbetween, ChainSpec, Stack};
use phasecomp::diffusion::{encode_pairs, heldout_l1, train_denoisers, Denoiser};
use phasecomp::motion::MotionSegment;
use phasecomp::phase::{train_actpae, ActPae};
use phasecomp::synth::{pae_segments, Corpus, Split};
use phasecomp_nn::Checkpoint;

pub mod config;
pub mod error;
pub mod evaluate;
pub mod export;

pub use config::RunConfig;
pub use error::CliError;

pub const PAE_CHECKPOINT: &str = "pae.ck";
pub const DENOISER_CHECKPOINTS: [&str; 3] = ["spdm.ck", "tpdm_forward.ck", "tpdm_backward.ck"];

#[derive(Debug, Parser)]
#[command(name = "phasecomp", version, about = "Compose, inbetween and extend motions in a phase latent space")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set pae.q=16`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus.
    SynthData,
    /// Train the autoencoder on the training pairs.
    TrainPae,
    /// Train the semantic and the two transitional denoisers.
    TrainDiffusion,
    /// Compose two prompted segments with a transition.
    Compose,
    /// Fill a gap between two motions.
    Inbetween,
    /// Compose a chain of prompted segments.
    Longgen,
    /// Score inbetweening and composition on the test split.
    Eval,
    /// Write per-frame joint positions of a motion file.
    Export,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::TrainPae => "train-pae",
            Command::TrainDiffusion => "train-diffusion",
            Command::Compose => "compose",
            Command::Inbetween => "inbetween",
            Command::Longgen => "longgen",
            Command::Eval => "eval",
            Command::Export => "export",
        }
    }
}

/// Parses arguments (program name first), runs the command and returns the
/// exit status. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let overrides = cli
        .set
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Config(format!("`--set {kv}` is not KEY=VALUE")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = &cli.corpus {
        cfg.paths.corpus = p.clone();
    }
    if let Some(p) = &cli.checkpoints {
        cfg.paths.checkpoints = p.clone();
    }
    if let Some(p) = &cli.out {
        cfg.paths.output = p.clone();
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let cmd = cli.command;
    log::info!("{} with seed {}", cmd.name(), cfg.seed);
    match cmd {
        Command::SynthData => synth_data(&cfg),
        Command::TrainPae => train_pae(&cfg),
        Command::TrainDiffusion => train_diffusion(&cfg),
        Command::Compose => compose(&cfg),
        Command::Inbetween => run_inbetween(&cfg),
        Command::Longgen => longgen(&cfg),
        Command::Eval => eval(&cfg),
        Command::Export => run_export(&cfg),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))
}

/// The resolved config of a run, stored as `<command>.config.toml` in `dir`.
fn write_config(dir: &Path, cmd: Command, cfg: &RunConfig) -> Result<(), CliError> {
    write(&dir.join(format!("{}.config.toml", cmd.name())), cfg.to_toml())
}

fn read_corpus(cfg: &RunConfig) -> Result<Corpus, CliError> {
    Corpus::read(&cfg.paths.corpus).map_err(CliError::data)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingCheckpoint(path.to_path_buf()));
    }
    Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load_pae(cfg: &RunConfig) -> Result<ActPae, CliError> {
    let ck = load_checkpoint(&cfg.paths.checkpoints.join(PAE_CHECKPOINT))?;
    ActPae::from_checkpoint(&ck).map_err(CliError::data)
}

/// The autoencoder and all three denoisers, checked for a shared latent
/// statistics digest and noise schedule.
pub fn load_stack(cfg: &RunConfig) -> Result<Stack, CliError> {
    let dir = &cfg.paths.checkpoints;
    for name in std::iter::once(PAE_CHECKPOINT).chain(DENOISER_CHECKPOINTS) {
        if !dir.join(name).is_file() {
            return Err(CliError::MissingCheckpoint(dir.join(name)));
        }
    }
    let pae = load_pae(cfg)?;
    let [s, f, b] = DENOISER_CHECKPOINTS
        .map(|n| load_checkpoint(&dir.join(n)).and_then(|ck| Denoiser::from_checkpoint(&ck).map_err(CliError::data)));
    let mut stack = Stack::new(pae, s?, f?, b?)?;
    stack.x0_clip = cfg.x0_clip();
    Ok(stack)
}

fn tokens(prompt: &str) -> Vec<String> {
    prompt.split_whitespace().map(String::from).collect()
}

fn synth_data(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = Corpus::generate(&cfg.corpus_config())?;
    corpus.write(&cfg.paths.corpus).map_err(CliError::data)?;
    write_config(&cfg.paths.corpus, Command::SynthData, cfg)?;
    println!(
        "corpus: {} streams, {} train pairs, {} test pairs -> {}",
        corpus.streams.len(),
        corpus.count(Split::Train),
        corpus.count(Split::Test),
        cfg.paths.corpus.display()
    );
    Ok(())
}

fn train_pae(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = read_corpus(cfg)?;
    let segs = pae_segments(&corpus.pairs(Split::Train).map_err(CliError::data)?);
    let (pae, log) = train_actpae(&segs, &cfg.pae_config(), &cfg.pae_train())?;
    let dir = &cfg.paths.checkpoints;
    write(&dir.join(PAE_CHECKPOINT), pae.to_checkpoint().to_bytes())?;
    let mut loss = String::from("epoch\tloss\n");
    for (i, l) in log.epoch_loss.iter().enumerate() {
        loss.push_str(&format!("{}\t{l:?}\n", i + 1));
    }
    write(&dir.join("pae_loss.tsv"), loss)?;
    write_config(dir, Command::TrainPae, cfg)?;
    println!("autoencoder: {} updates -> {}", log.updates, dir.join(PAE_CHECKPOINT).display());
    Ok(())
}

fn train_diffusion(cfg: &RunConfig) -> Result<(), CliError> {
    let pae = load_pae(cfg)?;
    let corpus = read_corpus(cfg)?;
    let train = encode_pairs(&pae, &corpus.pairs(Split::Train).map_err(CliError::data)?)?;
    let test = encode_pairs(&pae, &corpus.pairs(Split::Test).map_err(CliError::data)?)?;
    let models = train_denoisers(&train, pae.stats()?, &cfg.denoiser_config(), &cfg.schedule()?, &cfg.denoiser_train())?;
    let dir = &cfg.paths.checkpoints;
    let mut loss = String::from("model\tepoch\tloss\n");
    let mut held = String::from("model\tl1\tzero_l1\n");
    for ((model, log), file) in models.iter().zip(DENOISER_CHECKPOINTS) {
        write(&dir.join(file), model.to_checkpoint().to_bytes())?;
        for (i, l) in log.epoch_loss.iter().enumerate() {
            loss.push_str(&format!("{}\t{}\t{l:?}\n", model.kind.as_str(), i + 1));
        }
        let (l1, zero) = heldout_l1(model, &test, cfg.seed)?;
        held.push_str(&format!("{}\t{l1:?}\t{zero:?}\n", model.kind.as_str()));
        println!("{}: {} updates, held-out l1 {l1:.4} (zero predictor {zero:.4})", model.kind.as_str(), log.updates);
    }
    write(&dir.join("diffusion_loss.tsv"), loss)?;
    write(&dir.join("diffusion_heldout.tsv"), held)?;
    write_config(dir, Command::TrainDiffusion, cfg)?;
    Ok(())
}

fn save_motion(cfg: &RunConfig, cmd: Command, m: &MotionSegment, blend: &str) -> Result<PathBuf, CliError> {
    let out = &cfg.paths.output;
    let path = out.join(format!("{}.motion", cmd.name()));
    write(&path, m.to_text())?;
    write(&out.join(format!("{}.blend", cmd.name())), blend)?;
    write_config(out, cmd, cfg)?;
    Ok(path)
}

fn compose(cfg: &RunConfig) -> Result<(), CliError> {
    let stack = load_stack(cfg)?;
    let c = &cfg.compose;
    let r = compose_pair(&stack, &tokens(&c.prev), &tokens(&c.next), c.n_prev, c.n_next, cfg.seed)?;
    let path = save_motion(cfg, Command::Compose, &r.output, &r.plan.to_text())?;
    println!("composed {} frames in {} sweeps -> {}", r.output.frames(), r.sweeps, path.display());
    Ok(())
}

fn run_inbetween(cfg: &RunConfig) -> Result<(), CliError> {
    let stack = load_stack(cfg)?;
    let ib = &cfg.inbetween;
    let (x_p, x_s) = match (&ib.prev, &ib.next) {
        (Some(p), Some(s)) => (
            MotionSegment::load(p).map_err(CliError::data)?,
            MotionSegment::load(s).map_err(CliError::data)?,
        ),
        (None, None) => {
            let corpus = read_corpus(cfg)?;
            let idx = corpus
                .index
                .iter()
                .filter(|p| p.split == Split::Test)
                .nth(ib.pair)
                .ok_or_else(|| CliError::Config(format!("the corpus has no test pair {}", ib.pair)))?;
            let pair = corpus.pair(idx).map_err(CliError::data)?;
            (pair.x_p, pair.x_s)
        }
        _ => return Err(CliError::Config("inbetween.prev and inbetween.next must be given together".into())),
    };
    let text = tokens(&ib.text);
    let cond = (!text.is_empty()).then_some(text.as_slice());
    let r = inbetween(&stack, &x_p, &x_s, ib.frames, cond, cfg.seed)?;
    let path = save_motion(cfg, Command::Inbetween, &r.output, &r.plan.to_text())?;
    println!("filled {} frames ({} total) -> {}", ib.frames, r.output.frames(), path.display());
    Ok(())
}

/// Inline segments are `"<frames> <token> ..."`.
fn parse_segments(segments: &[String]) -> Result<Vec<(Vec<String>, usize)>, CliError> {
    segments
        .iter()
        .map(|s| {
            let mut it = s.split_whitespace();
            let n = it
                .next()
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| CliError::Config(format!("segment `{s}` does not start with a frame count")))?;
            Ok((it.map(String::from).collect(), n))
        })
        .collect()
}

fn longgen(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = match &cfg.longgen.chain {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            ChainSpec::from_text(&text).map_err(CliError::data)?
        }
        None => ChainSpec::new(parse_segments(&cfg.longgen.segments)?, cfg.seed),
    };
    let stack = load_stack(cfg)?;
    let r = compose_long(&stack, &spec, phasecomp::composer::ExecMode::Batched)?;
    let path = save_motion(cfg, Command::Longgen, &r.output, &r.plan.to_text())?;
    write(&cfg.paths.output.join("longgen.chain"), spec.to_text())?;
    println!(
        "{} segments, {} frames in {} sweeps -> {}",
        spec.segments.len(),
        r.output.frames(),
        r.sweeps,
        path.display()
    );
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let stack = load_stack(cfg)?;
    let corpus = read_corpus(cfg)?;
    let e = &cfg.eval;
    let cases = evaluate::gap_cases(&corpus, e.gaps, e.context, e.gap_frames)?;
    if cases.is_empty() {
        return Err(CliError::Data("no test pair leaves room for a gap case".into()));
    }
    let gaps = evaluate::evaluate_gaps(&stack, &cases, cfg.seed)?;
    let smooth = evaluate::evaluate_compositions(&stack, &corpus, e.compositions, cfg.seed)?;
    let conditioned = if e.conditioned > 0 {
        let c = &cfg.corpus;
        let clf = evaluate::FrequencyClassifier::fit(&c.vocab, e.conditioned_frames, c.fps, c.idle_amp, 20, cfg.seed)?;
        let cases = evaluate::gap_cases(&corpus, e.conditioned, e.context, e.conditioned_frames)?;
        Some(evaluate::evaluate_conditioned(&stack, &cases, &clf, cfg.seed)?)
    } else {
        None
    };
    let report = evaluate::report(&gaps, &smooth, conditioned);
    let out = &cfg.paths.output;
    write(&out.join("eval.tsv"), report.to_tsv())?;
    write_config(out, Command::Eval, cfg)?;
    print!("{}", report.summary());
    Ok(())
}

fn run_export(cfg: &RunConfig) -> Result<(), CliError> {
    let input = cfg.export.input.as_ref().ok_or_else(|| CliError::Config("export.input is not set".into()))?;
    let m = MotionSegment::load(input).map_err(CliError::data)?;
    let output = match &cfg.export.output {
        Some(p) => p.clone(),
        None => {
            let stem = input.file_stem().map_or_else(|| "motion".into(), |s| s.to_string_lossy().into_owned());
            cfg.paths.output.join(format!("{stem}.joints.tsv"))
        }
    };
    write(&output, export::export_text(&m)?)?;
    write_config(output.parent().unwrap_or(Path::new(".")), Command::Export, cfg)?;
    println!("{} frames of {} joints -> {}", m.frames(), export::EXPORT_JOINTS.len(), output.display());
    Ok(())
}
