//! `namerec`: build corpora and vocabularies, train, evaluate, predict and
//! serve variable-name models.

mod commands;
mod config;
mod manifest;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::process::ExitCode;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "namerec", version, about = "Recover variable names in decompiled code")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Default location of corpora, vocabularies and checkpoints.
    #[arg(long, global = true, env = "NAMEREC_MODEL_DIR")]
    pub model_dir: Option<PathBuf>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the synthetic toy dataset.
    Toygen(ToygenArgs),
    /// Canonicalize a dataset, tag body-in-train and write the corpus text.
    Corpus(CorpusArgs),
    /// Train the BPE vocabulary.
    Tokenizer(TokenizerArgs),
    /// Masked-LM pre-training.
    Pretrain(TrainArgs),
    /// Constrained-MLM finetuning.
    Finetune(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Suggest names for one request read from a file or stdin.
    Predict(PredictArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Toygen(_) => "toygen",
            Command::Corpus(_) => "corpus",
            Command::Tokenizer(_) => "tokenizer",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Eval(_) => "eval",
            Command::Predict(_) => "predict",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToygenArgs {
    /// Output dataset (JSON lines). Default: <model-dir>/toy.jsonl
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub functions: Option<usize>,
    #[arg(long)]
    pub duplicate_rate: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusArgs {
    /// Input dataset (JSON lines).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Default: <model-dir>
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerArgs {
    /// Canonical corpus. Default: <model-dir>/canonical.jsonl
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub max_merges: Option<usize>,
    /// Output directory. Default: <model-dir>/vocab
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Starting checkpoint. Pretraining starts fresh without one; finetuning
    /// defaults to <model-dir>/pretrained.ckpt.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Finetune from a fresh model instead of a checkpoint.
    #[arg(long)]
    pub from_scratch: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training log (JSON lines). Default: <out>.log.jsonl
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Model size: varbert-base, varbert-small or varbert-toy.
    #[arg(long)]
    pub preset: Option<String>,
    /// base-a, base-b, small-a, small-b, toy-a or toy-b.
    #[arg(long)]
    pub recipe: Option<String>,
    /// mlm or mlm_ww when pretraining.
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// train, validation or test.
    #[arg(long)]
    pub split: Option<String>,
    /// heuristic or oracle.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub max_allowed: Option<usize>,
    /// Report (JSON). Default: <model-dir>/eval-<split>-<mode>.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictArgs {
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Request JSON, `-` for stdin.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub max_allowed: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeArgs {
    #[arg(long, env = "NAMEREC_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "NAMEREC_VOCAB")]
    pub vocab: Option<PathBuf>,
    #[arg(long, env = "NAMEREC_BIND")]
    pub bind: Option<String>,
    #[arg(long, env = "NAMEREC_MAX_BODY")]
    pub max_body: Option<usize>,
    #[arg(long, env = "NAMEREC_MAX_ALLOWED")]
    pub max_allowed: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
