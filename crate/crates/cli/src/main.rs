use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use smcg::data::synth::{write_synth, SynthGrammar, SynthSpec};
use smcg::data::{
    load_embeddings, read_instances, tokenize, write_atomic, CaptionInstance, DataError, Sentence,
};
use smcg::metrics::{
    default_stopwords, evaluate_with_workers, parse_stopwords, CosContext, EvalReport, Prediction,
};
use smcg::model::{generate_predictions, load_checkpoint, DecodeMode};
use smcg::syntax::{parse_bracketed, strip_leaves, syntax_tokens, tree_edit_distance};
use smcg::train::{
    gradcheck_group, gradcheck_layer, train_run, Ablation, HeldoutEval, TrainConfig, TrainError,
};

/// Failure classes mapped to exit codes 1 and 2.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult = Result<(), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn data_failure(e: DataError) -> Failure {
    match e {
        DataError::Io { .. } => runtime(e),
        _ => invalid(e),
    }
}

#[derive(Parser)]
#[command(
    name = "smcg",
    version,
    about = "Exemplar-conditioned video captioning: data, training, generation and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with defaults for this command's options. Flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: train/val/test JSONL, grammar, embeddings.
    ///
    /// The config file is a TOML synthetic world spec (all fields optional).
    SynthGen {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
        /// Training videos (overrides the spec).
        #[arg(long)]
        train: Option<usize>,
        /// Validation videos.
        #[arg(long)]
        val: Option<usize>,
        /// Test videos.
        #[arg(long)]
        test: Option<usize>,
    },
    /// Train a model; writes config.toml, metrics.jsonl and model.ckpt to --out-dir.
    ///
    /// The config file is a TOML training config; unknown keys are errors.
    /// Any field can also be set with --set key=value.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training dataset (JSONL records).
        #[arg(long)]
        dataset: PathBuf,
        /// Held-out dataset scored after every epoch.
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out_dir: PathBuf,
        /// Model variant: none, video, syntax, all, concat-baseline, caption-baseline.
        #[arg(long)]
        ablation: Option<Ablation>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Threads for the per-batch gradient.
        #[arg(long)]
        workers: Option<usize>,
        /// Synthetic grammar (grammar.json) used to parse held-out generations for TED.
        #[arg(long)]
        grammar: Option<PathBuf>,
        /// Word vectors for held-out COS.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Stop-word list (one word per line) for held-out COS.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Override one config field, e.g. --set eta=0.5 (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Caption every (video, exemplar) pair; writes predictions as JSONL.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Exemplars per video (a number), or a JSONL file of {text, parse}
        /// sentences used as exemplars for every video.
        #[arg(long)]
        exemplars: Option<String>,
        /// greedy or beam:K.
        #[arg(long)]
        mode: Option<DecodeMode>,
        /// Predictions output file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Synthetic grammar used to attach a parse to each prediction.
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Score predictions: TED, COS, BLEU-4, ROUGE-L, CIDEr, diversity.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Word vectors (word followed by floats, one per line).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Stop-word list, one per line; a built-in English list otherwise.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        /// Report output file (one JSON record).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Tree edit distance between two bracketed trees.
    Ted {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
        /// Drop word leaves first, as the TED metric does.
        #[arg(long)]
        strip_words: bool,
    },
    /// Validate bracketed parses and print their syntax token counts.
    ParseCheck {
        #[command(flatten)]
        common: Common,
        /// A single bracketed parse.
        #[arg(long)]
        parse: Option<String>,
        /// File with one bracketed parse per line.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Finite-difference gradient check; exit 0 iff every error is below 1e-4.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// all, nn, model, train, or a single layer name.
        #[arg(long)]
        module: Option<String>,
    },
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(invalid)
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = read_text(p)?;
            toml::from_str(&text)
                .with_context(|| format!("config {}", p.display()))
                .map_err(invalid)
        }
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| invalid(anyhow!("missing --{flag} (flag or config key)")))
}

fn write_out(path: &Path, text: &str) -> CmdResult {
    write_atomic(path, text.as_bytes()).map_err(runtime)
}

fn load_instances(path: &Path) -> Result<Vec<CaptionInstance>, Failure> {
    read_instances(path).map_err(data_failure)
}

fn load_grammar(path: &Path) -> Result<SynthGrammar, Failure> {
    serde_json::from_str(&read_text(path)?)
        .with_context(|| format!("grammar {}", path.display()))
        .map_err(invalid)
}

fn load_stopwords(path: Option<&Path>) -> Result<HashSet<String>, Failure> {
    Ok(match path {
        Some(p) => parse_stopwords(&read_text(p)?),
        None => default_stopwords(),
    })
}

fn synth_gen(
    common: Common,
    out_dir: PathBuf,
    train: Option<usize>,
    val: Option<usize>,
    test: Option<usize>,
) -> CmdResult {
    let mut spec = SynthSpec::default();
    if let Some(path) = &common.config {
        let table: toml::Table = toml::from_str(&read_text(path)?)
            .with_context(|| format!("config {}", path.display()))
            .map_err(invalid)?;
        let mut base = toml::Table::try_from(&spec).map_err(runtime)?;
        for (k, v) in table {
            if !base.contains_key(&k) {
                return Err(invalid(anyhow!("unknown spec field {k:?}")));
            }
            base.insert(k, v);
        }
        spec = base.try_into().context("synthetic spec").map_err(invalid)?;
    }
    spec.train = train.unwrap_or(spec.train);
    spec.val = val.unwrap_or(spec.val);
    spec.test = test.unwrap_or(spec.test);
    let seed = common.seed.unwrap_or(0);
    let data = write_synth(&out_dir, &spec, seed).map_err(data_failure)?;
    println!(
        "wrote {} train / {} val / {} test videos to {} (seed {seed})",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out_dir.display()
    );
    Ok(())
}

fn apply_sets(cfg: TrainConfig, sets: &[String]) -> Result<TrainConfig, Failure> {
    if sets.is_empty() {
        return Ok(cfg);
    }
    let mut table = toml::Table::try_from(&cfg).map_err(runtime)?;
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| invalid(anyhow!("--set expects KEY=VALUE, got {s:?}")))?;
        let k = k.trim();
        if !table.contains_key(k) {
            return Err(invalid(anyhow!("unknown config field {k:?}")));
        }
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(v.to_string()),
        };
        table.insert(k.to_string(), value);
    }
    let cfg: TrainConfig = table
        .try_into()
        .context("config override")
        .map_err(invalid)?;
    Ok(cfg)
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Config(_) | TrainError::Instance { .. } => invalid(e),
        TrainError::Data(d) => data_failure(d),
        _ => runtime(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn train(
    common: Common,
    dataset: PathBuf,
    heldout: Option<PathBuf>,
    out_dir: PathBuf,
    ablation: Option<Ablation>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    workers: Option<usize>,
    grammar: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    stopwords: Option<PathBuf>,
    set: Vec<String>,
) -> CmdResult {
    let cfg = match &common.config {
        Some(p) => TrainConfig::from_toml(&read_text(p)?).map_err(train_failure)?,
        None => TrainConfig::default(),
    };
    let mut cfg = apply_sets(cfg, &set)?;
    if let Some(a) = ablation {
        cfg.apply_ablation(a);
    }
    cfg.seed = common.seed.unwrap_or(cfg.seed);
    cfg.epochs = epochs.unwrap_or(cfg.epochs);
    cfg.lr = lr.unwrap_or(cfg.lr);
    cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
    cfg.workers = workers.unwrap_or(cfg.workers);
    cfg.validate().map_err(train_failure)?;

    let train_set = load_instances(&dataset)?;
    let held = match &heldout {
        Some(p) => load_instances(p)?,
        None => Vec::new(),
    };
    let vocabs = smcg::data::Vocabularies::build(&train_set, cfg.min_word_freq);
    let grammar = grammar.as_deref().map(load_grammar).transpose()?;
    let parser = grammar.as_ref().map(|g| move |w: &[String]| g.parse(w));
    let table = match &embeddings {
        Some(p) => {
            let keep: HashSet<String> = train_set
                .iter()
                .chain(&held)
                .flat_map(|i| &i.captions)
                .flat_map(|c| tokenize(&c.text))
                .chain(vocabs.words.tokens().iter().cloned())
                .collect();
            Some(load_embeddings(p, &keep).map_err(data_failure)?.table)
        }
        None => None,
    };
    let stop = load_stopwords(stopwords.as_deref())?;
    let cos = table.as_ref().map(|t| CosContext {
        table: t,
        stopwords: &stop,
    });
    let eval = HeldoutEval {
        parser: parser.as_ref().map(|p| p as &smcg::model::Parser<'_>),
        cos: cos.as_ref(),
    };
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(runtime)?;
    let outcome = train_run(&cfg, &train_set, &held, &vocabs, eval, Some(&out_dir), |r| {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        println!(
            "epoch {:>3} step {:>6}  loss {:.4} (cap {:.4} vrec {:.4} srec {:.4})  heldout TED {} COS {}",
            r.epoch,
            r.step,
            r.loss_total,
            r.loss_cap,
            r.loss_vrec,
            r.loss_srec,
            opt(r.heldout_ted),
            opt(r.heldout_cos)
        );
    })
    .map_err(train_failure)?;
    println!(
        "best epoch {}; checkpoint {}",
        outcome.best_epoch,
        out_dir.join("model.ckpt").display()
    );
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GenerateFile {
    checkpoint: Option<PathBuf>,
    dataset: Option<PathBuf>,
    exemplars: Option<String>,
    mode: Option<DecodeMode>,
    out: Option<PathBuf>,
    grammar: Option<PathBuf>,
    workers: Option<usize>,
}

fn load_exemplar_file(path: &Path) -> Result<Vec<Sentence>, Failure> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let s: Sentence = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))
            .map_err(invalid)?;
        syntax_tokens(&s.parse)
            .with_context(|| format!("{} line {}", path.display(), i + 1))
            .map_err(invalid)?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(invalid(anyhow!("{} has no exemplars", path.display())));
    }
    Ok(out)
}

fn generate(common: Common, flags: GenerateFile) -> CmdResult {
    let file: GenerateFile = read_config(common.config.as_deref())?;
    let checkpoint = required(flags.checkpoint.or(file.checkpoint), "checkpoint")?;
    let dataset = required(flags.dataset.or(file.dataset), "dataset")?;
    let out = required(flags.out.or(file.out), "out")?;
    let mode = flags.mode.or(file.mode).unwrap_or(DecodeMode::Greedy);
    let workers = flags.workers.or(file.workers).unwrap_or(1).max(1);
    let ckpt = load_checkpoint(&checkpoint).map_err(invalid)?;
    let mut instances = load_instances(&dataset)?;
    let mut limit = None;
    if let Some(e) = flags.exemplars.or(file.exemplars) { match e.parse::<usize>() {
        Ok(n) => limit = Some(n),
        Err(_) => {
            let shared = load_exemplar_file(Path::new(&e))?;
            for inst in &mut instances {
                inst.exemplars = shared.clone();
            }
        }
    } }
    let grammar = flags
        .grammar
        .or(file.grammar)
        .as_deref()
        .map(load_grammar)
        .transpose()?;
    let parser = grammar.as_ref().map(|g| move |w: &[String]| g.parse(w));
    let preds = generate_predictions(
        &ckpt.model,
        &ckpt.vocabs,
        &instances,
        limit,
        mode,
        parser.as_ref().map(|p| p as &smcg::model::Parser<'_>),
        workers,
    )
    .map_err(runtime)?;
    let mut text = String::new();
    for p in &preds {
        text.push_str(&serde_json::to_string(p).map_err(runtime)?);
        text.push('\n');
    }
    write_out(&out, &text)?;
    log::debug!("seed {:?} unused: decoding is deterministic", common.seed);
    println!(
        "{} predictions for {} videos -> {}",
        preds.len(),
        instances.len(),
        out.display()
    );
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EvaluateFile {
    predictions: Option<PathBuf>,
    dataset: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    stopwords: Option<PathBuf>,
    out: Option<PathBuf>,
    workers: Option<usize>,
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>, Failure> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{} line {}", path.display(), i + 1))
                .map_err(invalid)
        })
        .collect()
}

fn print_report(r: &EvalReport) {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("{:<12} {:>10}", "metric", "value");
    println!("{:<12} {:>10}", "predictions", r.predictions);
    println!("{:<12} {:>10}", "videos", r.videos);
    println!("{:<12} {:>10}", "TED", opt(r.avg_ted));
    println!("{:<12} {:>10}", "COS", opt(r.cos));
    println!("{:<12} {:>10.4}", "BLEU-4", r.bleu4);
    println!("{:<12} {:>10.4}", "ROUGE-L", r.rouge_l);
    println!("{:<12} {:>10}", "METEOR", r.meteor);
    println!("{:<12} {:>10.4}", "CIDEr", r.cider);
    println!("{:<12} {:>10}", "LSA", opt(r.lsa));
    println!("{:<12} {:>10}", "Self-CIDEr", opt(r.self_cider));
    if r.missing_parses > 0 {
        println!(
            "warning: {} predictions have no parse; TED skipped for them",
            r.missing_parses
        );
    }
}

fn evaluate_cmd(common: Common, flags: EvaluateFile) -> CmdResult {
    let file: EvaluateFile = read_config(common.config.as_deref())?;
    let predictions = required(flags.predictions.or(file.predictions), "predictions")?;
    let dataset = required(flags.dataset.or(file.dataset), "dataset")?;
    let workers = flags.workers.or(file.workers).unwrap_or(1).max(1);
    let preds = read_predictions(&predictions)?;
    let instances = load_instances(&dataset)?;
    let stop = load_stopwords(flags.stopwords.or(file.stopwords).as_deref())?;
    let table = match flags.embeddings.or(file.embeddings) {
        Some(p) => {
            let keep: HashSet<String> = preds
                .iter()
                .map(|p| p.caption.as_str())
                .chain(
                    instances
                        .iter()
                        .flat_map(|i| i.captions.iter().map(|c| c.text.as_str())),
                )
                .flat_map(tokenize)
                .collect();
            let loaded = load_embeddings(&p, &keep).map_err(data_failure)?;
            println!("embedding coverage {:.1}%", 100.0 * loaded.coverage);
            Some(loaded.table)
        }
        None => None,
    };
    let cos = table.as_ref().map(|t| CosContext {
        table: t,
        stopwords: &stop,
    });
    let report =
        evaluate_with_workers(&preds, &instances, cos.as_ref(), workers).map_err(invalid)?;
    if let Some(out) = flags.out.or(file.out) {
        let mut line = serde_json::to_string(&report).map_err(runtime)?;
        line.push('\n');
        write_out(&out, &line)?;
    }
    log::debug!("seed {:?} unused: evaluation is deterministic", common.seed);
    print_report(&report);
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TedFile {
    a: Option<String>,
    b: Option<String>,
    #[serde(default)]
    strip_words: bool,
}

fn ted(common: Common, a: Option<String>, b: Option<String>, strip_words: bool) -> CmdResult {
    let file: TedFile = read_config(common.config.as_deref())?;
    let a = required(a.or(file.a), "a")?;
    let b = required(b.or(file.b), "b")?;
    let mut ta = parse_bracketed(&a).context("--a").map_err(invalid)?;
    let mut tb = parse_bracketed(&b).context("--b").map_err(invalid)?;
    if strip_words || file.strip_words {
        ta = strip_leaves(&ta);
        tb = strip_leaves(&tb);
    }
    println!("{}", tree_edit_distance(&ta, &tb));
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ParseCheckFile {
    parse: Option<String>,
    input: Option<PathBuf>,
}

fn parse_check(common: Common, parse: Option<String>, input: Option<PathBuf>) -> CmdResult {
    let file: ParseCheckFile = read_config(common.config.as_deref())?;
    let (parse, input) = (parse.or(file.parse), input.or(file.input));
    let mut lines: Vec<(String, String)> = Vec::new();
    if let Some(p) = parse {
        lines.push(("--parse".into(), p));
    }
    if let Some(path) = input {
        let text = read_text(&path)?;
        for (i, l) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            lines.push((format!("{}:{}", path.display(), i + 1), l.to_string()));
        }
    }
    if lines.is_empty() {
        return Err(invalid(anyhow!("give --parse or --input")));
    }
    let mut bad = 0;
    for (at, text) in &lines {
        match syntax_tokens(text) {
            Ok(seq) => println!("{at}: ok, {} syntax tokens", seq.len()),
            Err(e) => {
                bad += 1;
                println!("{at}: error: {e}");
            }
        }
    }
    if bad > 0 {
        return Err(invalid(anyhow!("{bad} of {} parses invalid", lines.len())));
    }
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GradcheckFile {
    module: Option<String>,
}

const GRADCHECK_TOL: f64 = 1e-4;

fn gradcheck(common: Common, module: Option<String>) -> CmdResult {
    let file: GradcheckFile = read_config(common.config.as_deref())?;
    let module = module.or(file.module).unwrap_or_else(|| "all".into());
    let layers =
        gradcheck_group(&module).ok_or_else(|| invalid(anyhow!("unknown module {module:?}")))?;
    let seed = common.seed.unwrap_or(0);
    let mut failed = Vec::new();
    for name in layers {
        let err = gradcheck_layer(name, seed).map_err(runtime)?;
        let ok = err < GRADCHECK_TOL;
        println!("{name:<22} {err:.3e} {}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(invalid(anyhow!(
            "relative error >= {GRADCHECK_TOL:e} in {}",
            failed.join(", ")
        )))
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::SynthGen {
            common,
            out_dir,
            train: tr,
            val,
            test,
        } => synth_gen(common, out_dir, tr, val, test),
        Command::Train {
            common,
            dataset,
            heldout,
            out_dir,
            ablation,
            epochs,
            lr,
            batch_size,
            workers,
            grammar,
            embeddings,
            stopwords,
            set,
        } => train(
            common, dataset, heldout, out_dir, ablation, epochs, lr, batch_size, workers, grammar,
            embeddings, stopwords, set,
        ),
        Command::Generate {
            common,
            checkpoint,
            dataset,
            exemplars,
            mode,
            out,
            grammar,
            workers,
        } => generate(
            common,
            GenerateFile {
                checkpoint,
                dataset,
                exemplars,
                mode,
                out,
                grammar,
                workers,
            },
        ),
        Command::Evaluate {
            common,
            predictions,
            dataset,
            embeddings,
            stopwords,
            out,
            workers,
        } => evaluate_cmd(
            common,
            EvaluateFile {
                predictions,
                dataset,
                embeddings,
                stopwords,
                out,
                workers,
            },
        ),
        Command::Ted {
            common,
            a,
            b,
            strip_words,
        } => ted(common, a, b, strip_words),
        Command::ParseCheck {
            common,
            parse,
            input,
        } => parse_check(common, parse, input),
        Command::Gradcheck { common, module } => gradcheck(common, module),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
