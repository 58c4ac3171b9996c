use crate::config::ConfigFile;
use crate::manifest::RunManifest;
use crate::*;
use namerec_core::corpus::{self, CanonicalFunction, Split};
use namerec_core::eval::{self, ReportMeta};
use namerec_core::fingerprint::{file_sha256, sha256_hex};
use namerec_core::inference::{self, Mode, PendingLayout};
use namerec_core::model::{Checkpoint, Model, ModelConfig};
use namerec_core::tokenizer::{self, BpeVocab};
use namerec_core::training::{self, Objective, TrainConfig, TrainError};
use namerec_core::toy;
use namerec_service::{AppState, LoadedModel, ServiceConfig, SessionlessRequest};
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

pub struct CliError {
    pub code: u8,
    pub message: String,
}

fn usage(m: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: m.to_string(),
    }
}

fn data(m: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_DATA,
        message: m.to_string(),
    }
}

fn runtime(m: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_RUNTIME,
        message: m.to_string(),
    }
}

type Res<T> = Result<T, CliError>;

struct Ctx {
    file: ConfigFile,
    seed: u64,
    model_dir: PathBuf,
    manifest: RunManifest,
}

impl Ctx {
    fn merged<T: Serialize + serde::de::DeserializeOwned>(&self, section: &str, args: &T) -> Res<T> {
        self.file.merge(section, args).map_err(usage)
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.model_dir.join(name)
    }

    fn resolved<T: Serialize>(&mut self, cfg: &T) {
        self.manifest.config = serde_json::to_value(cfg).expect("config serializes");
    }
}

pub fn run(cli: Cli) -> Res<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p).map_err(usage)?,
        None => ConfigFile::default(),
    };
    let seed = match cli.seed {
        Some(s) => s,
        None => file.top("seed").map_err(usage)?.unwrap_or(0),
    };
    let model_dir = match cli.model_dir.clone() {
        Some(d) => d,
        None => file.top::<PathBuf>("model_dir").map_err(usage)?.unwrap_or_else(|| PathBuf::from("models")),
    };
    let name = cli.command.name();
    let mut ctx = Ctx {
        file,
        seed,
        model_dir,
        manifest: RunManifest::new(name, seed),
    };
    let mut manifest_path = cli.manifest.clone();
    let result = match &cli.command {
        Command::Toygen(a) => toygen(&mut ctx, a),
        Command::Corpus(a) => corpus_cmd(&mut ctx, a),
        Command::Tokenizer(a) => tokenizer_cmd(&mut ctx, a),
        Command::Pretrain(a) => train_cmd(&mut ctx, a, false),
        Command::Finetune(a) => train_cmd(&mut ctx, a, true),
        Command::Eval(a) => eval_cmd(&mut ctx, a),
        Command::Predict(a) => predict_cmd(&mut ctx, a),
        Command::Serve(a) => serve_cmd(&mut ctx, a),
    };
    let default_manifest = match result {
        Ok(ref p) => p.clone(),
        Err(_) => None,
    };
    let manifest_path = manifest_path
        .take()
        .or(default_manifest)
        .unwrap_or_else(|| ctx.dir(&format!("{name}.manifest.json")));
    ctx.manifest.fingerprint_all();
    if let Err(e) = &result {
        ctx.manifest.exit_code = e.code as i32;
        ctx.manifest.error = Some(e.message.clone());
    }
    let written = ctx.manifest.write(&manifest_path);
    match (result, written) {
        (Err(e), _) => Err(e),
        (Ok(_), Err(e)) => Err(runtime(format!("writing manifest {}: {e}", manifest_path.display()))),
        (Ok(_), Ok(())) => Ok(()),
    }
}

/// Manifest path placed next to a primary output.
fn beside(out: &Path) -> Option<PathBuf> {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    Some(PathBuf::from(s))
}

fn create_parent(p: &Path) -> Res<()> {
    if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d).map_err(|e| runtime(format!("{}: {e}", d.display())))?;
    }
    Ok(())
}

fn write_file(p: &Path, bytes: &[u8]) -> Res<()> {
    create_parent(p)?;
    std::fs::write(p, bytes).map_err(|e| runtime(format!("{}: {e}", p.display())))
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("serializes");
        out.push(b'\n');
    }
    out
}

// ---- toygen ---------------------------------------------------------------

#[derive(Serialize)]
struct ToygenResolved {
    out: PathBuf,
    functions: usize,
    duplicate_rate: f64,
    seed: u64,
}

fn toygen(ctx: &mut Ctx, a: &ToygenArgs) -> Res<Option<PathBuf>> {
    let a = ctx.merged("toygen", a)?;
    let d = toy::ToyConfig::default();
    let r = ToygenResolved {
        out: a.out.unwrap_or_else(|| ctx.dir("toy.jsonl")),
        functions: a.functions.unwrap_or(d.functions),
        duplicate_rate: a.duplicate_rate.unwrap_or(d.duplicate_rate),
        seed: ctx.seed,
    };
    if r.functions < 10 || !(0.0..=1.0).contains(&r.duplicate_rate) {
        return Err(usage("toygen needs at least 10 functions and a duplicate rate in [0, 1]"));
    }
    ctx.resolved(&r);
    let fs = toy::generate(&toy::ToyConfig {
        functions: r.functions,
        duplicate_rate: r.duplicate_rate,
        seed: r.seed,
    });
    let mut buf = Vec::new();
    corpus::write_dataset(&mut buf, &fs).map_err(runtime)?;
    write_file(&r.out, &buf)?;
    ctx.manifest.output("dataset", &r.out);
    println!("wrote {} functions to {}", fs.len(), r.out.display());
    Ok(beside(&r.out))
}

// ---- corpus ---------------------------------------------------------------

#[derive(Serialize)]
struct CorpusResolved {
    input: PathBuf,
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct CorpusSummary {
    functions: usize,
    skipped_lines: Vec<corpus::LineError>,
    split_counts: BTreeMap<String, usize>,
    tagged_body_in_train: usize,
    tags: corpus::TagSummary,
}

fn corpus_cmd(ctx: &mut Ctx, a: &CorpusArgs) -> Res<Option<PathBuf>> {
    let a = ctx.merged("corpus", a)?;
    let r = CorpusResolved {
        input: a.input.ok_or_else(|| usage("corpus needs --input"))?,
        out_dir: a.out_dir.unwrap_or_else(|| ctx.model_dir.clone()),
    };
    ctx.resolved(&r);
    ctx.manifest.input("dataset", &r.input);
    let file = std::fs::File::open(&r.input).map_err(|e| data(format!("{}: {e}", r.input.display())))?;
    let parsed = corpus::parse_dataset(BufReader::new(file)).map_err(data)?;
    for e in &parsed.errors {
        log::warn!("{}:{}: {}", r.input.display(), e.line, e.message);
    }
    if parsed.functions.is_empty() {
        return Err(data(format!("{}: no valid records", r.input.display())));
    }
    let split_counts = parsed
        .split_counts()
        .into_iter()
        .map(|(s, n)| (format!("{s:?}").to_lowercase(), n))
        .collect();
    let (canon, tags) = corpus::prepare(parsed.functions).map_err(data)?;
    let (text, index) = corpus::build_corpus_text(&canon);
    let paths = [
        ("canonical", r.out_dir.join("canonical.jsonl")),
        ("corpus_text", r.out_dir.join("corpus.txt")),
        ("corpus_index", r.out_dir.join("corpus.index.jsonl")),
        ("summary", r.out_dir.join("corpus.summary.json")),
    ];
    let summary = CorpusSummary {
        functions: canon.len(),
        skipped_lines: parsed.errors,
        split_counts,
        tagged_body_in_train: canon.iter().filter(|f| f.split != Split::Train && f.body_in_train == Some(true)).count(),
        tags,
    };
    write_file(&paths[0].1, &to_jsonl(&canon))?;
    write_file(&paths[1].1, text.as_bytes())?;
    write_file(&paths[2].1, &to_jsonl(&index))?;
    write_file(&paths[3].1, serde_json::to_string_pretty(&summary).expect("serializes").as_bytes())?;
    for (role, p) in &paths {
        ctx.manifest.output(role, p);
    }
    println!(
        "{} functions ({} lines skipped) -> {}",
        canon.len(),
        summary.skipped_lines.len(),
        r.out_dir.display()
    );
    Ok(Some(r.out_dir.join("corpus.manifest.json")))
}

fn read_canonical(path: &Path) -> Res<Vec<CanonicalFunction>> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        out.push(serde_json::from_str(line).map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    if out.is_empty() {
        return Err(data(format!("{}: empty corpus", path.display())));
    }
    Ok(out)
}

// ---- tokenizer ------------------------------------------------------------

#[derive(Serialize)]
struct TokenizerResolved {
    corpus: PathBuf,
    vocab_size: usize,
    max_merges: usize,
    out: PathBuf,
}

fn tokenizer_cmd(ctx: &mut Ctx, a: &TokenizerArgs) -> Res<Option<PathBuf>> {
    let a = ctx.merged("tokenizer", a)?;
    let r = TokenizerResolved {
        corpus: a.corpus.unwrap_or_else(|| ctx.dir("canonical.jsonl")),
        vocab_size: a.vocab_size.unwrap_or(20_000),
        max_merges: a.max_merges.unwrap_or(100_000),
        out: a.out.unwrap_or_else(|| ctx.dir("vocab")),
    };
    ctx.resolved(&r);
    ctx.manifest.input("corpus", &r.corpus);
    let canon = read_canonical(&r.corpus)?;
    let (text, _) = corpus::build_corpus_text(&canon);
    let vocab = tokenizer::train_bpe(&text, r.vocab_size, r.max_merges).map_err(usage)?;
    tokenizer::save_vocab(&vocab, &r.out).map_err(runtime)?;
    ctx.manifest.output("vocab", &r.out);
    println!("vocabulary of {} tokens ({}) -> {}", vocab.size(), vocab.hash(), r.out.display());
    Ok(beside(&r.out))
}

fn load_vocab(ctx: &mut Ctx, path: Option<PathBuf>) -> Res<(PathBuf, BpeVocab)> {
    let p = path.unwrap_or_else(|| ctx.dir("vocab"));
    ctx.manifest.input("vocab", &p);
    let v = tokenizer::load_vocab(&p).map_err(|e| data(format!("{}: {e}", p.display())))?;
    Ok((p, v))
}

fn load_checkpoint(ctx: &mut Ctx, role: &str, path: &Path, vocab: &BpeVocab) -> Res<Checkpoint<f32>> {
    ctx.manifest.input(role, path);
    Checkpoint::<f32>::load(path, &vocab.hash()).map_err(|e| data(format!("{}: {e}", path.display())))
}

// ---- pretrain / finetune --------------------------------------------------

#[derive(Serialize)]
struct TrainResolved {
    corpus: PathBuf,
    vocab: PathBuf,
    init: Option<PathBuf>,
    out: PathBuf,
    log: PathBuf,
    preset: String,
    recipe: String,
    train: TrainConfig,
}

fn parse_objective(s: &str) -> Res<Objective> {
    match s {
        "mlm" => Ok(Objective::Mlm),
        "mlm_ww" => Ok(Objective::MlmWholeWord),
        "cmlm" => Ok(Objective::Cmlm),
        other => Err(usage(format!("unknown objective `{other}`"))),
    }
}

fn train_cmd(ctx: &mut Ctx, a: &TrainArgs, finetune: bool) -> Res<Option<PathBuf>> {
    let section = if finetune { "finetune" } else { "pretrain" };
    let a = ctx.merged(section, a)?;
    let objective = if finetune {
        match a.objective.as_deref() {
            None | Some("cmlm") => Objective::Cmlm,
            Some(o) => return Err(usage(format!("finetune uses cmlm, not `{o}`"))),
        }
    } else {
        let o = parse_objective(a.objective.as_deref().unwrap_or("mlm_ww"))?;
        if !o.is_pretraining() {
            return Err(usage("pretraining uses mlm or mlm_ww"));
        }
        o
    };
    let recipe = a.recipe.unwrap_or_else(|| "toy-a".into());
    let mut cfg = TrainConfig::recipe(&recipe, objective)
        .ok_or_else(|| usage(format!("unknown recipe `{recipe}`; one of {:?}", training::RECIPES)))?;
    cfg.seed = ctx.seed;
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.peak_lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if a.warmup_steps.is_some() {
        cfg.warmup_steps = a.warmup_steps;
    }
    let from_scratch = a.from_scratch.unwrap_or(false);
    let init = if finetune && !from_scratch {
        Some(a.init.unwrap_or_else(|| ctx.dir("pretrained.ckpt")))
    } else {
        a.init
    };
    let out = a
        .out
        .unwrap_or_else(|| ctx.dir(if finetune { "finetuned.ckpt" } else { "pretrained.ckpt" }));
    let log_path = a.log.unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let r = TrainResolved {
        corpus: a.corpus.unwrap_or_else(|| ctx.dir("canonical.jsonl")),
        vocab: a.vocab.clone().unwrap_or_else(|| ctx.dir("vocab")),
        init: init.clone(),
        out: out.clone(),
        log: log_path.clone(),
        preset: a.preset.unwrap_or_else(|| "varbert-toy".into()),
        recipe,
        train: cfg.clone(),
    };
    ctx.resolved(&r);
    ctx.manifest.input("corpus", &r.corpus);
    let canon = read_canonical(&r.corpus)?;
    let (_, vocab) = load_vocab(ctx, Some(r.vocab.clone()))?;
    let start = match &init {
        Some(p) => load_checkpoint(ctx, "init", p, &vocab)?,
        None => {
            let mc = ModelConfig::preset(&r.preset, vocab.size())
                .ok_or_else(|| usage(format!("unknown preset `{}`", r.preset)))?;
            Checkpoint::new(Model::new(mc, ctx.seed).map_err(usage)?, vocab.hash())
        }
    };
    let max_seq = start.model.config().max_seq;
    let train = training::encode_split(&vocab, &canon, Split::Train, max_seq);
    let valid = training::encode_split(&vocab, &canon, Split::Validation, max_seq);
    let outcome = if finetune {
        training::finetune(start, &vocab, &train, &valid, &cfg)
    } else {
        training::pretrain(start, &vocab, &train, &valid, &cfg)
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::Diverged { step, what, last_good }) => {
            let mut p = out.as_os_str().to_owned();
            p.push(".last-good");
            let p = PathBuf::from(p);
            create_parent(&p)?;
            last_good.save(&p).map_err(runtime)?;
            ctx.manifest.output("last_good", &p);
            return Err(runtime(format!(
                "training diverged at step {step} ({what}); last good state saved to {}",
                p.display()
            )));
        }
        Err(e @ (TrainError::Config(_) | TrainError::EmptyDataset | TrainError::VocabMismatch { .. })) => {
            return Err(data(e))
        }
        Err(e) => return Err(runtime(e)),
    };
    create_parent(&out)?;
    outcome.checkpoint.save(&out).map_err(runtime)?;
    outcome.log.write_jsonl(&log_path).map_err(runtime)?;
    ctx.manifest.output("checkpoint", &out);
    ctx.manifest.output("log", &log_path);
    if let Some(last) = outcome.log.epochs.last() {
        println!(
            "{section}: {} steps, final epoch loss {:.4}, validation perplexity {} -> {}",
            outcome.checkpoint.step,
            last.mean_loss,
            last.val_perplexity.map_or("n/a".into(), |p| format!("{p:.4}")),
            out.display()
        );
    }
    Ok(beside(&out))
}

// ---- eval -----------------------------------------------------------------

#[derive(Serialize)]
struct EvalResolved {
    corpus: PathBuf,
    vocab: PathBuf,
    checkpoint: PathBuf,
    split: String,
    mode: Mode,
    max_allowed: usize,
    layout: PendingLayout,
    out: PathBuf,
}

fn parse_split(s: &str) -> Res<Split> {
    match s {
        "train" => Ok(Split::Train),
        "validation" | "valid" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        o => Err(usage(format!("unknown split `{o}`"))),
    }
}

fn parse_mode(s: &str) -> Res<Mode> {
    match s {
        "heuristic" => Ok(Mode::Heuristic),
        "oracle" => Ok(Mode::Oracle),
        o => Err(usage(format!("unknown mode `{o}`"))),
    }
}

fn eval_cmd(ctx: &mut Ctx, a: &EvalArgs) -> Res<Option<PathBuf>> {
    let a = ctx.merged("eval", a)?;
    let split_name = a.split.unwrap_or_else(|| "test".into());
    let split = parse_split(&split_name)?;
    let mode = parse_mode(a.mode.as_deref().unwrap_or("heuristic"))?;
    let r = EvalResolved {
        corpus: a.corpus.unwrap_or_else(|| ctx.dir("canonical.jsonl")),
        vocab: a.vocab.unwrap_or_else(|| ctx.dir("vocab")),
        checkpoint: a.checkpoint.unwrap_or_else(|| ctx.dir("finetuned.ckpt")),
        out: a
            .out
            .unwrap_or_else(|| ctx.dir(&format!("eval-{split_name}-{}.json", mode.name()))),
        split: split_name,
        mode,
        max_allowed: a.max_allowed.unwrap_or(inference::DEFAULT_MAX_ALLOWED),
        layout: PendingLayout::default(),
    };
    if r.max_allowed == 0 {
        return Err(usage("--max-allowed must be at least 1"));
    }
    ctx.resolved(&r);
    ctx.manifest.input("corpus", &r.corpus);
    let canon = read_canonical(&r.corpus)?;
    let (_, vocab) = load_vocab(ctx, Some(r.vocab.clone()))?;
    let ck = load_checkpoint(ctx, "checkpoint", &r.checkpoint.clone(), &vocab)?;
    let fs: Vec<CanonicalFunction> = canon.into_iter().filter(|f| f.split == split).collect();
    if fs.is_empty() {
        return Err(data(format!("no {} functions in {}", r.split, r.corpus.display())));
    }
    let preds = inference::predict_dataset(&ck.model, &vocab, &fs, r.mode, r.max_allowed, r.layout).map_err(data)?;
    let mut meta = ReportMeta {
        dataset_hash: file_sha256(&r.corpus).map_err(data)?,
        checkpoint_hash: file_sha256(&r.checkpoint).map_err(data)?,
        max_allowed: r.max_allowed,
        perplexity: BTreeMap::new(),
    };
    let max_seq = ck.model.config().max_seq;
    for (row, keep) in [
        (eval::ROW_OVERALL, None),
        (eval::ROW_BODY_IN, Some(true)),
        (eval::ROW_BODY_NOT_IN, Some(false)),
    ] {
        let instances: Vec<_> = fs
            .iter()
            .filter(|f| keep.is_none() || f.body_in_train == keep)
            .map(|f| training::encode_function(&vocab, f, max_seq))
            .map(|e| training::make_instance(&e, Objective::Cmlm, vocab.size(), 0))
            .filter(|(_, t)| !t.is_empty())
            .collect();
        if !instances.is_empty() {
            let p = eval::perplexity(&ck.model, &instances).map_err(runtime)?;
            meta.perplexity.insert(row.to_string(), p);
        }
    }
    let report = eval::build_report(&preds, r.mode, &meta).map_err(data)?;
    write_file(&r.out, report.to_json().as_bytes())?;
    ctx.manifest.output("report", &r.out);
    print!("{}", report.render_table());
    Ok(beside(&r.out))
}

// ---- predict --------------------------------------------------------------

#[derive(Serialize)]
struct PredictResolved {
    vocab: PathBuf,
    checkpoint: PathBuf,
    input: PathBuf,
    max_allowed: usize,
}

fn predict_cmd(ctx: &mut Ctx, a: &PredictArgs) -> Res<Option<PathBuf>> {
    let a = ctx.merged("predict", a)?;
    let r = PredictResolved {
        vocab: a.vocab.unwrap_or_else(|| ctx.dir("vocab")),
        checkpoint: a.checkpoint.unwrap_or_else(|| ctx.dir("finetuned.ckpt")),
        input: a.input.unwrap_or_else(|| PathBuf::from("-")),
        max_allowed: a.max_allowed.unwrap_or(inference::DEFAULT_MAX_ALLOWED),
    };
    ctx.resolved(&r);
    let mut raw = Vec::new();
    if r.input.as_os_str() == "-" {
        std::io::stdin().read_to_end(&mut raw).map_err(data)?;
    } else {
        ctx.manifest.input("request", &r.input);
        raw = std::fs::read(&r.input).map_err(|e| data(format!("{}: {e}", r.input.display())))?;
    }
    let request: SessionlessRequest = serde_json::from_slice(&raw).map_err(|e| data(format!("request: {e}")))?;
    ctx.manifest.config["request_sha256"] = sha256_hex(&raw).into();
    let (_, vocab) = load_vocab(ctx, Some(r.vocab.clone()))?;
    let ck = load_checkpoint(ctx, "checkpoint", &r.checkpoint.clone(), &vocab)?;
    let fingerprint = file_sha256(&r.checkpoint).map_err(data)?;
    let loaded = LoadedModel::from_checkpoint(ck, vocab, fingerprint);
    let response = namerec_service::predict(&loaded, &request, r.max_allowed).map_err(data)?;
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &response).map_err(runtime)?;
    writeln!(out).map_err(runtime)?;
    Ok(None)
}

// ---- serve ----------------------------------------------------------------

#[derive(Serialize)]
struct ServeResolved {
    checkpoint: PathBuf,
    vocab: PathBuf,
    bind: String,
    max_body: usize,
    max_allowed: usize,
}

fn serve_cmd(ctx: &mut Ctx, a: &ServeArgs) -> Res<Option<PathBuf>> {
    let a = ctx.merged("serve", a)?;
    let d = ServiceConfig::default();
    let r = ServeResolved {
        checkpoint: a.checkpoint.unwrap_or_else(|| ctx.dir("finetuned.ckpt")),
        vocab: a.vocab.unwrap_or_else(|| ctx.dir("vocab")),
        bind: a.bind.unwrap_or(d.bind),
        max_body: a.max_body.unwrap_or(d.max_body),
        max_allowed: a.max_allowed.unwrap_or(d.max_allowed),
    };
    if r.max_allowed == 0 {
        return Err(usage("--max-allowed must be at least 1"));
    }
    ctx.resolved(&r);
    ctx.manifest.input("checkpoint", &r.checkpoint);
    ctx.manifest.input("vocab", &r.vocab);
    let config = ServiceConfig {
        checkpoint: Some(r.checkpoint.clone()),
        vocab: Some(r.vocab.clone()),
        bind: r.bind.clone(),
        max_body: r.max_body,
        max_allowed: r.max_allowed,
    };
    // A missing model is not fatal: the service answers 503 until reloaded.
    let state = match AppState::from_config(config.clone()) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("starting without a model: {e}");
            AppState::new(config, None)
        }
    };
    // Record the manifest before blocking on the server.
    ctx.manifest.fingerprint_all();
    let path = ctx.dir("serve.manifest.json");
    ctx.manifest.write(&path).map_err(runtime)?;
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(namerec_service::serve(state)).map_err(runtime)?;
    Ok(Some(path))
}
