//! Command-line front end. Every subcommand writes its outputs and a
//! `manifest.json` under `--out`; `reldisc replay --manifest` reruns one.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::Preset;
use crate::constraints::{dump_constraints, ConstraintPair};
use crate::datamodel::{
    filter_by_entity_vocab, holdout_with_overlap_ratio, load_corpus, load_entity_links, load_kb, Corpus,
    CorpusFormat,
};
use crate::dvae::{Distance, RegTarget};
use crate::error::Error;
use crate::eval::{evaluate, find_report, mean_std, EvalReport, Level, PredictionMode, Split, SplitConfig};
use crate::kbembed::{train_transe_logged, KBEmbedding};
use crate::synth::{overlap_variant, SynthSpec};
use crate::trainer::{train_with, DenseFeatures, EpochLog, KbContext, NoHooks, TrainConfig, TrainHooks, TrainState, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Caps the worker threads of parallel subcommands.
pub const THREADS_ENV: &str = "RELDISC_THREADS";

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or missing inputs; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Runtime(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "reldisc", version, about = "Relation discovery with KB-regularized discrete-state VAEs")]
pub struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace). RUST_LOG also works.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train TransE embeddings for a KB.
    TrainKb(TrainKbArgs),
    /// Train a relation discovery model.
    Train(TrainArgs),
    /// Score trained models against gold relation labels.
    Eval(EvalArgs),
    /// Train and score over a grid of beta and gamma values.
    Sweep(SweepArgs),
    /// Write a synthetic corpus and KB.
    Synth(SynthArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainKbArgs {
    /// KB triplets, one `head<TAB>relation<TAB>tail` per line.
    #[arg(long)]
    pub kb: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Custom)]
    pub preset: Preset,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus whose relation types are held out of the KB before training.
    #[arg(long)]
    pub holdout_corpus: Option<PathBuf>,
    /// Share of the overlapping relation types kept despite the holdout.
    #[arg(long, default_value_t = 0.0, requires = "holdout_corpus")]
    pub overlap_ratio: f64,
}

/// Model, variant and optimization settings shared by `train` and `sweep`.
/// Explicit flags override the preset.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = Variant::Regdvae)]
    pub variant: Variant,
    #[arg(long, value_enum, default_value_t = Preset::Custom)]
    pub preset: Preset,
    /// TransE embedding file from `train-kb`.
    #[arg(long)]
    pub kb_emb: Option<PathBuf>,
    /// Explicit `corpus_entity<TAB>kb_entity` links.
    #[arg(long)]
    pub entity_links: Option<PathBuf>,
    /// Drop sentences whose entities have no KB link instead of failing.
    #[arg(long)]
    pub filter_unlinked: bool,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub alpha_final: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub distance: Option<Distance>,
    #[arg(long, value_enum)]
    pub reg_target: Option<RegTarget>,
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Decoder entity embedding width.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = self.preset.train_config();
        cfg.variant = self.variant;
        cfg.seed = self.seed;
        let h = &mut cfg.hyper;
        if let Some(v) = self.clusters {
            h.n_clusters = v;
        }
        if let Some(v) = self.alpha0 {
            h.alpha0 = v;
        }
        if let Some(v) = self.alpha_final {
            h.alpha_final = v;
        }
        if let Some(v) = self.beta {
            h.beta = v;
        }
        if let Some(v) = self.gamma {
            h.gamma = v;
        }
        if let Some(v) = self.lambda {
            h.lambda = v;
        }
        if let Some(v) = self.distance {
            h.distance = v;
        }
        if let Some(v) = self.reg_target {
            h.reg_target = v;
        }
        if let Some(v) = self.negatives {
            h.n_negatives = v;
        }
        if let Some(v) = self.dim {
            h.dim = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr0 {
            cfg.lr0 = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Corpus TSV: `id<TAB>head<TAB>tail<TAB>label<TAB>features`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Save a checkpoint every K epochs.
    #[arg(long)]
    pub ckpt_every: Option<usize>,
    /// Checkpoint directory; defaults to OUT/checkpoints.
    #[arg(long)]
    pub ckpt_dir: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs (the schedule still spans all epochs).
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Write each batch's constraints as `i<TAB>j<TAB>score` files here.
    #[arg(long)]
    pub dump_constraints: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Encoder,
    Decoder,
    Both,
}

impl ModeArg {
    pub fn modes(&self) -> Vec<PredictionMode> {
        match self {
            ModeArg::Encoder => vec![PredictionMode::Encoder],
            ModeArg::Decoder => vec![PredictionMode::Decoder],
            ModeArg::Both => vec![PredictionMode::Encoder, PredictionMode::Decoder],
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Model checkpoint; repeat for several training runs.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Needed only for dvae_e models, whose encoder reads KB vectors.
    #[arg(long)]
    pub kb_emb: Option<PathBuf>,
    #[arg(long)]
    pub entity_links: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0.4)]
    pub val_frac: f64,
    /// Seed of the first validation/test split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Number of split seeds per model; mean and std rows are added when
    /// more than one run is scored.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Comma-separated beta values; the preset value when omitted.
    #[arg(long, value_delimiter = ',')]
    pub betas: Vec<f64>,
    /// Comma-separated gamma values; the preset value when omitted.
    #[arg(long, value_delimiter = ',')]
    pub gammas: Vec<f64>,
    /// Training seeds per grid point, counted up from `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Prediction mode behind the F1 and NMI columns.
    #[arg(long, value_enum, default_value_t = PredictionMode::Encoder)]
    pub score_mode: PredictionMode,
    #[arg(long, default_value_t = 0.4)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generator spec as JSON; flags below override its fields. Without it
    /// the spec the synth preset is tuned for is used.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub text_relations: Option<usize>,
    #[arg(long)]
    pub kb_relations: Option<usize>,
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub sentences_per_relation: Option<usize>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    #[arg(long)]
    pub kb_consistency: Option<f64>,
    #[arg(long)]
    pub kb_coverage: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of text relations also written into the KB.
    #[arg(long, default_value_t = 0.0)]
    pub overlap_ratio: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the rerun; the recorded one when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What every run records: the command with absolute paths plus the fully
/// resolved configuration it ran with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub resolved: serde_json::Value,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| usage(format!("{} is not a reldisc manifest: {e}", path.display())))
    }
}

impl Command {
    pub fn out_dir_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::TrainKb(a) => Some(&mut a.out),
            Command::Train(a) => Some(&mut a.out),
            Command::Eval(a) => Some(&mut a.out),
            Command::Sweep(a) => Some(&mut a.out),
            Command::Synth(a) => Some(&mut a.out),
            Command::Replay(_) => None,
        }
    }

    /// Same command with every path made absolute, so a manifest replays
    /// from any working directory.
    fn absolutized(&self) -> CliResult<Command> {
        let mut c = self.clone();
        let abs = |p: &mut PathBuf| -> CliResult<()> {
            *p = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
            Ok(())
        };
        let abs_opt = |p: &mut Option<PathBuf>| -> CliResult<()> {
            if let Some(p) = p {
                *p = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
            }
            Ok(())
        };
        match &mut c {
            Command::TrainKb(a) => {
                abs(&mut a.kb)?;
                abs(&mut a.out)?;
                abs_opt(&mut a.holdout_corpus)?;
            }
            Command::Train(a) => {
                abs(&mut a.corpus)?;
                abs(&mut a.out)?;
                abs_opt(&mut a.model.kb_emb)?;
                abs_opt(&mut a.model.entity_links)?;
                abs_opt(&mut a.ckpt_dir)?;
                abs_opt(&mut a.resume)?;
                abs_opt(&mut a.dump_constraints)?;
            }
            Command::Eval(a) => {
                for m in &mut a.models {
                    abs(m)?;
                }
                abs(&mut a.corpus)?;
                abs(&mut a.out)?;
                abs_opt(&mut a.kb_emb)?;
                abs_opt(&mut a.entity_links)?;
            }
            Command::Sweep(a) => {
                abs(&mut a.corpus)?;
                abs(&mut a.out)?;
                abs_opt(&mut a.model.kb_emb)?;
                abs_opt(&mut a.model.entity_links)?;
            }
            Command::Synth(a) => {
                abs(&mut a.out)?;
                abs_opt(&mut a.spec)?;
            }
            Command::Replay(a) => {
                abs(&mut a.manifest)?;
                abs_opt(&mut a.out)?;
            }
        }
        Ok(c)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

pub fn run(command: &Command) -> CliResult<()> {
    match command {
        Command::TrainKb(a) => cmd_train_kb(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn require_file(path: &Path, flag: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{flag} {}: no such file", path.display())))
    }
}

fn create_out(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e).into())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

fn write_manifest(command: &Command, out: &Path, resolved: serde_json::Value) -> CliResult<()> {
    let manifest = Manifest {
        tool: "reldisc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.absolutized()?,
        resolved,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn cmd_train_kb(a: &TrainKbArgs) -> CliResult<()> {
    require_file(&a.kb, "--kb")?;
    let mut cfg = a.preset.transe_config();
    cfg.seed = a.seed;
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.margin {
        cfg.margin = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if cfg.dim == 0 {
        return Err(usage("--dim must be >= 1"));
    }
    if !(0.0..=1.0).contains(&a.overlap_ratio) {
        return Err(usage(format!("--overlap-ratio {} outside [0, 1]", a.overlap_ratio)));
    }
    let mut kb = load_kb(&a.kb)?;
    create_out(&a.out)?;
    let mut retained = Vec::new();
    if let Some(corpus_path) = &a.holdout_corpus {
        require_file(corpus_path, "--holdout-corpus")?;
        let corpus = load_corpus(corpus_path, CorpusFormat::Tsv)?;
        let relations: Vec<String> = corpus.relation_names().into_iter().collect();
        let before = kb.len();
        let (held, kept) = holdout_with_overlap_ratio(&kb, &relations, a.overlap_ratio, a.seed);
        log::info!("holdout kept {} of {before} KB triplets", held.len());
        kb = held;
        retained = kept;
        kb.save(a.out.join("kb_train.tsv"))?;
    }
    let run = train_transe_logged(&kb, &cfg)?;
    run.embedding.save(a.out.join("kb_embedding.txt"))?;
    let mut log = String::new();
    for (epoch, loss) in run.epoch_losses.iter().enumerate() {
        log.push_str(&serde_json::json!({ "epoch": epoch + 1, "loss": loss }).to_string());
        log.push('\n');
    }
    write_text(&a.out.join("transe_log.jsonl"), &log)?;
    write_manifest(
        &Command::TrainKb(a.clone()),
        &a.out,
        serde_json::json!({
            "transe": to_value(&cfg),
            "n_triplets": kb.len(),
            "retained_overlapping_relations": retained,
        }),
    )
}

/// Corpus and optional KB embedding prepared for training.
struct TrainInputs {
    corpus: Corpus,
    embedding: Option<KBEmbedding>,
    links: HashMap<String, String>,
}

impl TrainInputs {
    fn load(corpus_path: &Path, m: &ModelArgs) -> CliResult<Self> {
        require_file(corpus_path, "--corpus")?;
        if m.variant.needs_kb() && m.kb_emb.is_none() {
            return Err(usage(format!("variant {} requires --kb-emb", m.variant)));
        }
        let mut corpus = load_corpus(corpus_path, CorpusFormat::Tsv)?;
        let links = match &m.entity_links {
            Some(p) => {
                require_file(p, "--entity-links")?;
                load_entity_links(p)?
            }
            None => HashMap::new(),
        };
        let embedding = match (&m.kb_emb, m.variant.needs_kb()) {
            (Some(p), true) => {
                require_file(p, "--kb-emb")?;
                Some(KBEmbedding::load(p)?)
            }
            (Some(_), false) => {
                log::info!("variant {} does not use the KB; --kb-emb ignored", m.variant);
                None
            }
            (None, _) => None,
        };
        if let (Some(emb), true) = (&embedding, m.filter_unlinked) {
            let before = corpus.len();
            corpus = filter_by_entity_vocab(&corpus, &emb.entity_vocab, &links)?;
            log::info!("kept {} of {before} sentences with linked entities", corpus.len());
        }
        Ok(TrainInputs { corpus, embedding, links })
    }

    fn kb_context(&self) -> CliResult<Option<KbContext<'_>>> {
        self.embedding
            .as_ref()
            .map(|emb| {
                KbContext::new(&self.corpus, emb, &self.links).map_err(|e| match e {
                    Error::Unlinked(_) => CliError::Runtime(Error::InvalidConfig(format!(
                        "{e}; pass --entity-links or --filter-unlinked"
                    ))),
                    e => e.into(),
                })
            })
            .transpose()
    }
}

fn validated(cfg: TrainConfig) -> CliResult<TrainConfig> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

/// Writes the JSON-lines epoch log, periodic checkpoints and constraint
/// dumps while training runs.
struct CliHooks<'a> {
    cfg: &'a TrainConfig,
    corpus: &'a Corpus,
    log: BufWriter<File>,
    ckpt_every: Option<usize>,
    ckpt_dir: PathBuf,
    last_ckpt: Option<PathBuf>,
    dump_dir: Option<PathBuf>,
}

impl TrainHooks for CliHooks<'_> {
    fn on_epoch_end(&mut self, state: &TrainState, entry: &EpochLog) -> crate::Result<()> {
        let line = serde_json::to_string(entry).expect("serializable");
        writeln!(self.log, "{line}")
            .and_then(|_| self.log.flush())
            .map_err(|e| Error::io("train_log.jsonl", e))?;
        if let Some(k) = self.ckpt_every {
            if state.epoch % k == 0 {
                let path = self.ckpt_dir.join(format!("epoch_{:04}.ckpt", state.epoch));
                Checkpoint::from_state(self.cfg, self.corpus, state).save(&path)?;
                self.last_ckpt = Some(path);
            }
        }
        Ok(())
    }

    fn on_batch_constraints(&mut self, epoch: usize, batch: usize, pairs: &[ConstraintPair]) -> crate::Result<()> {
        if let Some(dir) = &self.dump_dir {
            dump_constraints(pairs, dir.join(format!("epoch{:04}_batch{:05}.tsv", epoch + 1, batch)))?;
        }
        Ok(())
    }
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let cfg = validated(a.model.train_config())?;
    if a.ckpt_every == Some(0) {
        return Err(usage("--ckpt-every must be >= 1"));
    }
    let inputs = TrainInputs::load(&a.corpus, &a.model)?;
    let kb = inputs.kb_context()?;
    let corpus = &inputs.corpus;
    create_out(&a.out)?;

    let resume = match &a.resume {
        Some(path) => {
            require_file(path, "--resume")?;
            let ck = Checkpoint::load(path)?;
            if ck.config != cfg {
                return Err(usage(format!(
                    "--resume {}: checkpoint was trained with a different configuration",
                    path.display()
                )));
            }
            if ck.entity_vocab != corpus.entity_vocab || ck.feature_vocab != corpus.feature_vocab {
                return Err(Error::VocabMismatch(format!(
                    "corpus vocabularies differ from those of checkpoint {}",
                    path.display()
                ))
                .into());
            }
            Some(ck.train_state()?)
        }
        None => None,
    };

    let log_path = a.out.join("train_log.jsonl");
    let log_file = if resume.is_some() && log_path.exists() {
        OpenOptions::new().append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    if resume.is_none() {
        let header = serde_json::json!({
            "header": {
                "variant": cfg.variant,
                "preset": a.model.preset,
                "beta": cfg.effective_beta(),
                "gamma": cfg.hyper.gamma,
                "n_sentences": corpus.len(),
                "total_steps": cfg.total_steps(corpus.len()),
                "config": to_value(&cfg),
            }
        });
        writeln!(log, "{header}").map_err(|e| Error::io(&log_path, e))?;
    }

    let ckpt_dir = a.ckpt_dir.clone().unwrap_or_else(|| a.out.join("checkpoints"));
    if a.ckpt_every.is_some() {
        create_out(&ckpt_dir)?;
    }
    if let Some(dir) = &a.dump_constraints {
        create_out(dir)?;
    }
    let mut hooks = CliHooks {
        cfg: &cfg,
        corpus,
        log,
        ckpt_every: a.ckpt_every,
        ckpt_dir,
        last_ckpt: None,
        dump_dir: a.dump_constraints.clone(),
    };
    let outcome = train_with(corpus, kb.as_ref(), &cfg, resume, a.stop_after, &mut hooks).map_err(|e| {
        match (&e, &hooks.last_ckpt) {
            (Error::NonFinite(m), Some(p)) => {
                Error::NonFinite(format!("{m}; last checkpoint {}", p.display())).into()
            }
            _ => CliError::from(e),
        }
    })?;

    Checkpoint::from_state(&cfg, corpus, &outcome.state).save(a.out.join("model.ckpt"))?;
    corpus.save(a.out.join("train_corpus.tsv"))?;
    write_manifest(
        &Command::Train(a.clone()),
        &a.out,
        serde_json::json!({
            "train": to_value(&cfg),
            "effective_beta": cfg.effective_beta(),
            "n_sentences": corpus.len(),
            "n_entities": corpus.entity_vocab.len(),
            "n_features": corpus.feature_vocab.len(),
            "total_steps": outcome.total_steps,
            "epochs_completed": outcome.state.epoch,
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRun {
    pub model: usize,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: Split,
    pub mode: PredictionMode,
    pub level: Level,
    pub n_runs: usize,
    pub b3_precision: MeanStd,
    pub b3_recall: MeanStd,
    pub b3_f1: MeanStd,
    pub nmi: MeanStd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput {
    pub runs: Vec<EvalRun>,
    pub summary: Vec<EvalSummary>,
}

fn summarize(runs: &[EvalRun]) -> crate::Result<Vec<EvalSummary>> {
    let mut keys: Vec<(Split, PredictionMode, Level)> = Vec::new();
    for r in runs {
        let k = (r.report.split, r.report.mode, r.report.level);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(split, mode, level)| {
            let group: Vec<&EvalReport> = runs
                .iter()
                .map(|r| &r.report)
                .filter(|r| r.split == split && r.mode == mode && r.level == level)
                .collect();
            let stat = |f: fn(&EvalReport) -> f64| -> crate::Result<MeanStd> {
                let (mean, std) = mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>())?;
                Ok(MeanStd { mean, std })
            };
            Ok(EvalSummary {
                split,
                mode,
                level,
                n_runs: group.len(),
                b3_precision: stat(|r| r.b3_precision)?,
                b3_recall: stat(|r| r.b3_recall)?,
                b3_f1: stat(|r| r.b3_f1)?,
                nmi: stat(|r| r.nmi)?,
            })
        })
        .collect()
}

fn level_name(level: Level) -> &'static str {
    match level {
        Level::Sentence => "sentence",
        Level::Pair => "pair",
    }
}

fn eval_tsv(out: &EvalOutput) -> String {
    let mut text = format!("model\t{}\n", EvalReport::TSV_HEADER);
    for r in &out.runs {
        text.push_str(&format!("{}\t{}\n", r.model, r.report.to_tsv_row()));
    }
    if out.runs.len() > out.summary.len() {
        for (name, pick) in [("mean", true), ("std", false)] {
            for s in &out.summary {
                let v = |m: MeanStd| if pick { m.mean } else { m.std };
                text.push_str(&format!(
                    "{name}\t{}\t{}\t{}\t-\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                    s.split,
                    s.mode,
                    level_name(s.level),
                    s.n_runs,
                    v(s.b3_precision),
                    v(s.b3_recall),
                    v(s.b3_f1),
                    v(s.nmi)
                ));
            }
        }
    }
    text
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    require_file(&a.corpus, "--corpus")?;
    for m in &a.models {
        require_file(m, "--model")?;
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be >= 1"));
    }
    if !(0.0..=1.0).contains(&a.val_frac) {
        return Err(usage(format!("--val-frac {} outside [0, 1]", a.val_frac)));
    }
    let corpus = load_corpus(&a.corpus, CorpusFormat::Tsv)?;
    let links = match &a.entity_links {
        Some(p) => {
            require_file(p, "--entity-links")?;
            load_entity_links(p)?
        }
        None => HashMap::new(),
    };
    let mut embedding = None;
    let modes = a.mode.modes();
    let mut runs = Vec::new();
    for (model_no, path) in a.models.iter().enumerate() {
        let ck = Checkpoint::load(path)?;
        let aligned = ck.align_corpus(&corpus).map_err(|e| match e {
            Error::VocabMismatch(m) => Error::VocabMismatch(format!("model {}: {m}", path.display())),
            e => e,
        })?;
        let dense = if ck.config.variant.dense_encoder() {
            if embedding.is_none() {
                let p = a
                    .kb_emb
                    .as_ref()
                    .ok_or_else(|| usage(format!("model {} reads KB vectors; pass --kb-emb", path.display())))?;
                require_file(p, "--kb-emb")?;
                embedding = Some(KBEmbedding::load(p)?);
            }
            let kb = KbContext::new(&aligned, embedding.as_ref().expect("loaded"), &links)?;
            let dense = DenseFeatures::from_kb(&aligned, &kb)?;
            if dense.dim != ck.params.encoder.dense_dim {
                return Err(Error::VocabMismatch(format!(
                    "KB embedding gives {} dense inputs, model {} expects {}",
                    dense.dim,
                    path.display(),
                    ck.params.encoder.dense_dim
                ))
                .into());
            }
            Some(dense)
        } else {
            None
        };
        for s in 0..a.seeds as u64 {
            let split = SplitConfig {
                val_frac: a.val_frac,
                seed: a.split_seed + s,
            };
            for report in evaluate(&ck.params, &aligned, dense.as_ref(), &modes, &split)? {
                runs.push(EvalRun { model: model_no, report });
            }
        }
    }
    let summary = summarize(&runs)?;
    let output = EvalOutput { runs, summary };
    create_out(&a.out)?;
    write_text(&a.out.join("report.tsv"), &eval_tsv(&output))?;
    write_json(&a.out.join("report.json"), &output)?;
    write_manifest(
        &Command::Eval(a.clone()),
        &a.out,
        serde_json::json!({
            "modes": modes,
            "split_seeds": (0..a.seeds as u64).map(|s| a.split_seed + s).collect::<Vec<_>>(),
            "val_frac": a.val_frac,
            "n_models": a.models.len(),
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl SweepPoint {
    pub fn dir_name(&self) -> String {
        format!("beta={}_gamma={}_seed={}", self.beta, self.gamma, self.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    #[serde(flatten)]
    pub point: SweepPoint,
    pub b3_f1: f64,
    pub nmi: f64,
    pub reports: Vec<EvalReport>,
}

pub const SWEEP_TSV_HEADER: &str = "beta\tgamma\tseed\tb3_f1\tnmi";

/// Worker count from `RELDISC_THREADS`, or rayon's default.
pub fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(usage(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    if a.betas.is_empty() && a.gammas.is_empty() {
        return Err(usage("empty sweep grid: pass --betas and/or --gammas"));
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be >= 1"));
    }
    let base = validated(a.model.train_config())?;
    let betas = if a.betas.is_empty() { vec![base.hyper.beta] } else { a.betas.clone() };
    let gammas = if a.gammas.is_empty() { vec![base.hyper.gamma] } else { a.gammas.clone() };
    let mut points = Vec::new();
    for &beta in &betas {
        for &gamma in &gammas {
            for s in 0..a.seeds as u64 {
                let point = SweepPoint { beta, gamma, seed: a.model.seed + s };
                let mut cfg = base.clone();
                cfg.hyper.beta = beta;
                cfg.hyper.gamma = gamma;
                cfg.seed = point.seed;
                validated(cfg)?;
                points.push(point);
            }
        }
    }
    if !base.variant.uses_constraints() {
        log::warn!("variant {} trains without constraints; beta and gamma have no effect", base.variant);
    }
    let inputs = TrainInputs::load(&a.corpus, &a.model)?;
    let kb = inputs.kb_context()?;
    let corpus = &inputs.corpus;
    let dense = match (&kb, base.variant.dense_encoder()) {
        (Some(kb), true) => Some(DenseFeatures::from_kb(corpus, kb)?),
        _ => None,
    };
    let points_dir = a.out.join("points");
    create_out(&points_dir)?;
    let split = SplitConfig { val_frac: a.val_frac, seed: a.split_seed };

    let run_point = |point: &SweepPoint| -> CliResult<SweepResult> {
        let dir = points_dir.join(point.dir_name());
        let result_path = dir.join("result.json");
        if result_path.is_file() {
            let text = fs::read_to_string(&result_path).map_err(|e| Error::io(&result_path, e))?;
            if let Ok(done) = serde_json::from_str::<SweepResult>(&text) {
                log::info!("{} already done, skipped", point.dir_name());
                return Ok(done);
            }
        }
        let mut cfg = base.clone();
        cfg.hyper.beta = point.beta;
        cfg.hyper.gamma = point.gamma;
        cfg.seed = point.seed;
        let outcome = train_with(corpus, kb.as_ref(), &cfg, None, None, &mut NoHooks)?;
        let reports = evaluate(&outcome.params, corpus, dense.as_ref(), &[a.score_mode], &split)?;
        let main = find_report(&reports, Split::Test, a.score_mode, Level::Sentence)
            .ok_or_else(|| Error::MissingGold("test split is empty".into()))?;
        let result = SweepResult {
            point: *point,
            b3_f1: main.b3_f1,
            nmi: main.nmi,
            reports: reports.clone(),
        };
        create_out(&dir)?;
        // Written under a temporary name so a killed run never leaves a
        // result file that looks complete.
        let tmp = dir.join("result.json.tmp");
        write_json(&tmp, &result)?;
        fs::rename(&tmp, &result_path).map_err(|e| Error::io(&result_path, e))?;
        Ok(result)
    };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<SweepResult> = pool.install(|| points.par_iter().map(run_point).collect::<CliResult<_>>())?;

    let mut tsv = format!("{SWEEP_TSV_HEADER}\n");
    for r in &results {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\n",
            r.point.beta, r.point.gamma, r.point.seed, r.b3_f1, r.nmi
        ));
    }
    write_text(&a.out.join("sweep.tsv"), &tsv)?;
    write_manifest(
        &Command::Sweep(a.clone()),
        &a.out,
        serde_json::json!({
            "base": to_value(&base),
            "points": points,
            "score": { "split": Split::Test, "mode": a.score_mode, "level": Level::Sentence },
            "split": split,
        }),
    )
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            require_file(p, "--spec")?;
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| usage(format!("--spec {}: {e}", p.display())))?
        }
        None => Preset::synth_spec(),
    };
    if let Some(v) = a.text_relations {
        spec.n_relations_text = v;
    }
    if let Some(v) = a.kb_relations {
        spec.n_relations_kb = v;
    }
    if let Some(v) = a.entities {
        spec.n_entities = v;
    }
    if let Some(v) = a.sentences_per_relation {
        spec.sentences_per_relation = v;
    }
    if let Some(v) = a.feature_noise {
        spec.feature_noise = v;
    }
    if let Some(v) = a.kb_consistency {
        spec.kb_consistency = v;
    }
    if let Some(v) = a.kb_coverage {
        spec.kb_coverage = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    if !(0.0..=1.0).contains(&a.overlap_ratio) {
        return Err(usage(format!("--overlap-ratio {} outside [0, 1]", a.overlap_ratio)));
    }
    let data = overlap_variant(&spec, a.overlap_ratio)?;
    create_out(&a.out)?;
    data.corpus.save(a.out.join("corpus.tsv"))?;
    data.kb.save(a.out.join("kb.tsv"))?;
    write_json(&a.out.join("spec.json"), &spec)?;
    write_manifest(
        &Command::Synth(a.clone()),
        &a.out,
        serde_json::json!({
            "spec": to_value(&spec),
            "overlap_ratio": a.overlap_ratio,
            "n_sentences": data.corpus.len(),
            "n_kb_triplets": data.kb.len(),
        }),
    )
}

fn cmd_replay(a: &ReplayArgs) -> CliResult<()> {
    require_file(&a.manifest, "--manifest")?;
    let manifest = Manifest::load(&a.manifest)?;
    let mut command = manifest.command;
    if matches!(command, Command::Replay(_)) {
        return Err(usage("a manifest cannot record a replay"));
    }
    if manifest.version != env!("CARGO_PKG_VERSION") {
        log::warn!(
            "manifest written by reldisc {}, replaying with {}",
            manifest.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    if let (Some(out), Some(slot)) = (&a.out, command.out_dir_mut()) {
        *slot = out.clone();
    }
    run(&command)
}
