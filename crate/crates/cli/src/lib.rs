//! Command-line front end: build confusion indices, synthesize corpora,
//! train, predict, evaluate, audit and transfer.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use csc_core::charkb::{self, ConfusionKind, PinyinMode, SimilarityPolicy, Vocab};
use csc_core::corpus::{self, CorpusSpec, SynthRecord, TargetModel};
use csc_core::encoder::{EncoderHyper, DEFAULT_MAX_LEN};
use csc_core::evalsuite;
use csc_core::model::{ModelState, OracleMode, Prediction};
use csc_core::plugplay::{transfer_corpus, CorrectionModel, DrModule};
use csc_core::train::{self, encode_corpus, label_indices, EncodedPair, GateMode, TrainConfig};
use csc_core::{ConfusionIndex, CscError};

#[derive(Parser, Debug)]
#[command(
    name = "csc",
    version,
    about = "Spelling check by detection, reasoning and confusion-set search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Build a confusion index from a character table (plus optional external sets).
    BuildConfusion(BuildConfusionArgs),
    /// Generate a synthetic parallel corpus.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Correct sentences; prints `src<TAB>prediction` lines.
    Predict(PredictArgs),
    /// Score a model on a parallel corpus.
    Evaluate(EvalArgs),
    /// Count how detected positions were routed through the confusion sets.
    Audit(EvalArgs),
    /// Apply one model's detection-and-reasoning heads to another model's corrections.
    Transfer(TransferArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PinyinArg {
    Exact,
    Edit,
}

#[derive(Args, Debug)]
pub struct BuildConfusionArgs {
    /// Character table: char<TAB>pinyin<TAB>stroke-digits.
    #[arg(long)]
    pub chars: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    pub pinyin_mode: PinyinArg,
    /// Maximum pinyin edit distance in `edit` mode.
    #[arg(long, default_value_t = 1)]
    pub pinyin_k: usize,
    /// Normalized stroke edit-distance threshold.
    #[arg(long, default_value_t = 0.25)]
    pub stroke_tau: f64,
    /// External phonological confusion file(s): char<TAB>candidates.
    #[arg(long)]
    pub external_pc: Vec<PathBuf>,
    /// External visual confusion file(s): char<TAB>candidates.
    #[arg(long)]
    pub external_vc: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub confusion: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub sentences: usize,
    #[arg(long, default_value_t = 8)]
    pub min_len: usize,
    #[arg(long, default_value_t = 16)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.15)]
    pub error_rate: f64,
    /// Share of corruptions drawn from the phonological set.
    #[arg(long, default_value_t = 0.83)]
    pub rho: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw gold sentences from a permutation chain with this many successors per character.
    #[arg(long)]
    pub chain_branching: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub language_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    /// Trainable windowed tanh encoder.
    Toy,
    /// Fixed random window features; only the heads train.
    Fixed,
    /// Copy-through model that never flags.
    Identity,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GateArg {
    Predicted,
    Gold,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub confusion: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch log, one JSON record per line.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// TOML file with `[train]` and `[encoder]` tables; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Seed for parameter initialization.
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub d_e: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for batch shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub gate: Option<GateArg>,
    /// Train with an all-ones search matrix.
    #[arg(long)]
    pub train_no_mask: bool,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct DecodeFlags {
    /// Build the search matrix from gold detection labels.
    #[arg(long)]
    pub gold_d: bool,
    /// Also use gold reasoning labels (requires --gold-d).
    #[arg(long, requires = "gold_d")]
    pub gold_r: bool,
    /// Disable confusion-set masking (all-ones search matrix).
    #[arg(long)]
    pub no_mask: bool,
}

impl DecodeFlags {
    fn oracle(&self) -> OracleMode {
        match (self.gold_d, self.gold_r) {
            (true, true) => OracleMode::GoldDetectionReasoning,
            (true, false) => OracleMode::GoldDetection,
            _ => OracleMode::Predicted,
        }
    }
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub confusion: PathBuf,
    /// One sentence per line, or `src<TAB>tgt` lines (needed for gold flags).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub confusion: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeFlags,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Checkpoint supplying the detection-and-reasoning heads and their encoder.
    #[arg(long)]
    pub dr: PathBuf,
    /// Checkpoint supplying the correction distribution.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub confusion: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeFlags,
}

/// Exit code for an error class.
pub fn exit_code(err: &CscError) -> i32 {
    match err {
        CscError::Io { .. } => 3,
        CscError::Parse { .. }
        | CscError::Duplicate { .. }
        | CscError::Format(_)
        | CscError::Serde(_) => 4,
        CscError::HashMismatch { .. } => 5,
        CscError::Coverage(_)
        | CscError::Vocab(_)
        | CscError::Length { .. }
        | CscError::Shape(_)
        | CscError::Uncoverable { .. } => 6,
        CscError::Config(_) => 7,
        CscError::Divergence { .. } => 8,
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit status.
/// Errors are reported on stderr as a single `error[class]: message` line.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CscError> {
    match cmd {
        Command::BuildConfusion(a) => build_confusion(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a, false),
        Command::Audit(a) => evaluate(a, true),
        Command::Transfer(a) => transfer(a),
    }
}

fn require(paths: &[&Path]) -> Result<(), CscError> {
    for p in paths {
        if !p.exists() {
            return Err(CscError::io(
                *p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
    }
    Ok(())
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CscError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CscError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn build_confusion(a: BuildConfusionArgs) -> Result<(), CscError> {
    let inputs: Vec<&Path> = std::iter::once(a.chars.as_path())
        .chain(a.external_pc.iter().map(PathBuf::as_path))
        .chain(a.external_vc.iter().map(PathBuf::as_path))
        .collect();
    require(&inputs)?;
    let policy = SimilarityPolicy {
        pinyin_mode: match a.pinyin_mode {
            PinyinArg::Exact => PinyinMode::ToneInsensitiveExact,
            PinyinArg::Edit => PinyinMode::EditDistance,
        },
        pinyin_k: a.pinyin_k,
        stroke_tau: a.stroke_tau,
    };
    let table = charkb::load_char_table(&a.chars)?;
    let vocab = Vocab::from_records(&table)?;
    let mut index = charkb::build_confusion_index(&vocab, &table, &policy)?;
    let mut skipped = 0;
    for (files, kind) in [
        (&a.external_pc, ConfusionKind::Phonological),
        (&a.external_vc, ConfusionKind::Visual),
    ] {
        for f in files {
            let (merged, s) = index.merge_external_sets(&vocab, f, kind)?;
            index = merged;
            skipped += s;
        }
    }
    if skipped > 0 {
        eprintln!(
            "warning: skipped {skipped} external pairs with characters outside the vocabulary"
        );
    }
    charkb::save_confusion(&a.out, &vocab, &index, Some(&policy))
}

fn synth(a: SynthArgs) -> Result<(), CscError> {
    require(&[&a.confusion])?;
    let (vocab, index) = charkb::load_confusion(&a.confusion)?;
    let spec = CorpusSpec {
        sentences: a.sentences,
        min_len: a.min_len,
        max_len: a.max_len,
        error_rate: a.error_rate,
        phonological_ratio: a.rho,
        seed: a.seed,
        targets: match a.chain_branching {
            Some(branching) => TargetModel::Chain {
                branching,
                language_seed: a.language_seed,
            },
            None => TargetModel::Uniform,
        },
    };
    let out = corpus::synthesize(&spec, &vocab, &index)?;
    let record = SynthRecord {
        spec,
        stats: out.stats.clone(),
        vocab_hash: vocab.hash(),
        confusion_hash: index.hash(),
    };
    corpus::write_synthesized(&a.out, &out, &record)
}

/// Contents of a `--config` TOML file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub init: Option<InitArg>,
    #[serde(default)]
    pub init_seed: Option<u64>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub encoder: Option<EncoderHyper>,
}

/// Effective training configuration after applying defaults, the config
/// file and then flags.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EffectiveTrain {
    pub init: InitArg,
    pub init_seed: u64,
    pub encoder: EncoderHyper,
    pub train: TrainConfig,
}

pub fn resolve_train_config(a: &TrainArgs) -> Result<EffectiveTrain, CscError> {
    let file = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CscError::io(p, e))?;
            toml::from_str::<FileConfig>(&text)
                .map_err(|e| CscError::Config(format!("{}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let mut train = file.train.unwrap_or_default();
    let mut encoder = file.encoder.unwrap_or_default();
    let init = a.init.or(file.init).unwrap_or(InitArg::Toy);
    let init_seed = a.init_seed.or(file.init_seed).unwrap_or(0);
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(encoder.d_e, a.d_e);
    set!(encoder.hidden, a.hidden);
    set!(encoder.window, a.window);
    set!(encoder.max_len, a.max_len);
    set!(train.epochs, a.epochs);
    set!(train.learning_rate, a.lr);
    set!(train.momentum, a.momentum);
    set!(train.batch_size, a.batch_size);
    set!(train.seed, a.seed);
    set!(train.alpha, a.alpha);
    set!(train.beta, a.beta);
    set!(train.gamma, a.gamma);
    if let Some(g) = a.gate {
        train.gate = match g {
            GateArg::Predicted => GateMode::Predicted,
            GateArg::Gold => GateMode::Gold,
        };
    }
    if a.train_no_mask {
        train.masking = false;
    }
    train.validate()?;
    if encoder.max_len == 0 || encoder.max_len > DEFAULT_MAX_LEN {
        return Err(CscError::Config(format!(
            "max_len must lie in 1..={DEFAULT_MAX_LEN}"
        )));
    }
    Ok(EffectiveTrain {
        init,
        init_seed,
        encoder,
        train,
    })
}

fn train_cmd(a: TrainArgs) -> Result<(), CscError> {
    let mut inputs = vec![a.confusion.as_path(), a.corpus.as_path()];
    if let Some(c) = &a.config {
        inputs.push(c);
    }
    require(&inputs)?;
    let eff = resolve_train_config(&a)?;
    let (vocab, index) = charkb::load_confusion(&a.confusion)?;
    let pairs = corpus::load_parallel(&a.corpus)?;
    let hyper = eff.encoder;
    let model = match eff.init {
        InitArg::Toy => ModelState::new_toy(&vocab, &index, hyper, eff.init_seed),
        InitArg::Fixed => ModelState::new_fixed(
            &vocab,
            &index,
            hyper.d_e,
            hyper.window,
            hyper.max_len,
            eff.init_seed,
        ),
        InitArg::Identity => ModelState::identity(&vocab, &index, hyper.window, hyper.max_len),
    };
    let (model, logs) = if eff.train.epochs == 0 {
        (model, Vec::new())
    } else {
        if pairs.is_empty() {
            return Err(CscError::Config("training corpus is empty".into()));
        }
        train::fit(&pairs, model, &vocab, &index, &eff.train)?
    };
    if let Some(log) = &a.log {
        train::write_log(log, &logs)?;
    }
    let provenance = serde_json::to_value(&eff)?;
    model.save_with_provenance(&a.out, provenance)
}

/// A source sentence and, when given, its gold side.
type InputLine = (Vec<char>, Option<Vec<char>>);

/// Reads prediction input: bare sentences or `src<TAB>tgt` pairs.
fn read_sentences(path: &Path) -> Result<Vec<InputLine>, CscError> {
    let text = fs::read_to_string(path).map_err(|e| CscError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('\t') {
            Some((s, t)) => {
                let pair = csc_core::SentencePair::new(s.chars().collect(), t.chars().collect())
                    .map_err(|e| CscError::Parse {
                        line: n + 1,
                        message: e.to_string(),
                    })?;
                out.push((pair.src, Some(pair.tgt)));
            }
            None => out.push((line.chars().collect(), None)),
        }
    }
    Ok(out)
}

/// Builds decoder inputs. Unknown characters map to `[UNK]` and come back
/// unchanged; gold labels are only required under oracle flags.
fn prepare(
    sentences: &[InputLine],
    vocab: &Vocab,
    index: &ConfusionIndex,
    oracle: OracleMode,
) -> Result<Vec<EncodedPair>, CscError> {
    sentences
        .iter()
        .enumerate()
        .map(|(k, (src, tgt))| {
            let x = vocab.encode_lossy(src);
            let g = match tgt {
                Some(t) if oracle != OracleMode::Predicted => vocab.encode(t)?,
                Some(_) | None if oracle == OracleMode::Predicted => x.clone(),
                _ => {
                    return Err(CscError::Config(format!(
                        "sentence {} has no gold side for oracle decoding",
                        k + 1
                    )))
                }
            };
            Ok(EncodedPair {
                labels: label_indices(&x, &g, index),
                x,
            })
        })
        .collect()
}

fn render_predictions(
    header: serde_json::Value,
    sentences: &[InputLine],
    preds: &[Prediction],
    vocab: &Vocab,
) -> String {
    let mut out = format!("# {header}\n");
    for ((src, _), p) in sentences.iter().zip(preds) {
        out.extend(src);
        out.push('\t');
        for (i, &o) in p.output.iter().enumerate() {
            out.push(
                vocab
                    .char_at(o)
                    .filter(|_| o != vocab.encode_lossy(&src[i..=i])[0])
                    .unwrap_or(src[i]),
            );
        }
        out.push('\n');
    }
    out
}

fn predict(a: PredictArgs) -> Result<(), CscError> {
    require(&[&a.model, &a.confusion, &a.input])?;
    let (vocab, index) = charkb::load_confusion(&a.confusion)?;
    let model = ModelState::load(&a.model, &vocab, &index)?;
    let sentences = read_sentences(&a.input)?;
    let oracle = a.decode.oracle();
    let data = prepare(&sentences, &vocab, &index, oracle)?;
    let preds = model.predict_corpus(&data, &index, oracle, !a.decode.no_mask)?;
    let header = json!({
        "command": "predict",
        "model_vocab_hash": model.vocab_hash,
        "confusion_hash": model.confusion_hash,
        "oracle": oracle,
        "masking": !a.decode.no_mask,
    });
    write_out(
        a.out.as_deref(),
        &render_predictions(header, &sentences, &preds, &vocab),
    )
}

fn evaluate(a: EvalArgs, audit_only: bool) -> Result<(), CscError> {
    require(&[&a.model, &a.confusion, &a.corpus])?;
    let (vocab, index) = charkb::load_confusion(&a.confusion)?;
    let model = ModelState::load(&a.model, &vocab, &index)?;
    let pairs = corpus::load_parallel(&a.corpus)?;
    if pairs.is_empty() {
        eprintln!("warning: empty corpus");
    }
    let data = encode_corpus(&pairs, &vocab, &index)?;
    let oracle = a.decode.oracle();
    let preds = model.predict_corpus(&data, &index, oracle, !a.decode.no_mask)?;
    let config = json!({
        "command": if audit_only { "audit" } else { "evaluate" },
        "corpus": a.corpus,
        "oracle": oracle,
        "masking": !a.decode.no_mask,
    });
    let doc = if audit_only {
        json!({ "config": config, "audit": evalsuite::audit(&preds, &data, &index)? })
    } else {
        json!({ "config": config, "report": evalsuite::evaluate(&preds, &data, &index)? })
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_out(a.report.as_deref(), &text)
}

fn transfer(a: TransferArgs) -> Result<(), CscError> {
    require(&[&a.dr, &a.model, &a.confusion, &a.input])?;
    let (vocab, index) = charkb::load_confusion(&a.confusion)?;
    let dr_state = ModelState::load(&a.dr, &vocab, &index)?;
    let target = ModelState::load(&a.model, &vocab, &index)?;
    let dr = DrModule::from_model(&dr_state);
    let cm = CorrectionModel::from_model(&target);
    let sentences = read_sentences(&a.input)?;
    let oracle = a.decode.oracle();
    let data = prepare(&sentences, &vocab, &index, oracle)?;
    let preds = transfer_corpus(&data, &dr, &cm, &index, oracle, !a.decode.no_mask)?;
    let header = json!({
        "command": "transfer",
        "dr": a.dr,
        "model": a.model,
        "oracle": oracle,
        "masking": !a.decode.no_mask,
    });
    write_out(
        a.out.as_deref(),
        &render_predictions(header, &sentences, &preds, &vocab),
    )
}
