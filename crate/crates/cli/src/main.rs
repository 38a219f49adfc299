use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use missa_client::Client;
use missa_core::api::CreateSession;
use missa_core::corpus::persuasion::{ingest_persuasion_csv, ActMapping};
use missa_core::corpus::{build_vocabulary, load_corpus, save_corpus, split_corpus, Corpus, LoadMode, SlotLexicon, Taxonomy};
use missa_core::decode::DecodeConfig;
use missa_core::eval::{build_transition_table, format_table, run_eval, EvalConfig, EvalReport, TableFormat};
use missa_core::filter::RuleSet;
use missa_core::model::{train, Checkpoint, ModelConfig, TrainConfig, TrainStatus, TrainingMode};
use missa_core::pipeline::{ModelSet, Variant};
use missa_core::session::{ChatConfig, Ratings};
use missa_core::synth::{adversarial_corpus, scripted_corpus};
use missa_service::{AppState, ServiceConfig, DEFAULT_PORT, PORT_ENV};
use serde::Deserialize;
use tokio::io::{AsyncBufReadExt, BufReader};

#[derive(Parser)]
#[command(name = "missa", version, about = "Train, evaluate and serve intent/slot-aware dialog models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one checkpoint into <checkpoint>/<mode>.
    Train(TrainArgs),
    /// Evaluate a variant on the test split and write an EvalReport.
    Eval(EvalArgs),
    /// Print a comparison table from stored reports.
    Table(TableArgs),
    /// Run the HTTP chat service.
    Serve(ServeArgs),
    /// Chat in the terminal through the service.
    Chat(ChatArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(clap::Args)]
struct CorpusArgs {
    /// Corpus JSON, or a PersuasionForGood CSV when --task persuasion.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "antiscam")]
    task: String,
    /// Admit labels missing from the taxonomy.
    #[arg(long)]
    lenient: bool,
    /// Seeds the train/validation/test split and everything downstream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[command(flatten)]
    data: CorpusArgs,
    #[arg(long, default_value = "missa")]
    mode: String,
    /// JSON with optional `model`, `train` and `min_freq` fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint root.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Keep every epoch's checkpoint and the metric log here.
    #[arg(long)]
    series_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[command(flatten)]
    data: CorpusArgs,
    #[arg(long)]
    variant: String,
    /// JSON with optional `decode`, `rules` and `include_control_in_ppl`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(clap::Args)]
struct TableArgs {
    /// EvalReport JSON files.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(clap::Args)]
struct ServiceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "missa-data")]
    data_dir: PathBuf,
    /// JSON with optional `decode` and `rules`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON object of slot → value for the system persona.
    #[arg(long)]
    persona: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[command(flatten)]
    service: ServiceArgs,
    #[arg(long, default_value = "0.0.0.0")]
    host: String,
    /// Directory with the chat bundle served at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ChatArgs {
    /// Service URL; without it a private service is started from --checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    server: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "missa-data")]
    data_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "missa")]
    variant: String,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hide traces.
    #[arg(long)]
    blind: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Scripted,
    Adversarial,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "scripted")]
    kind: SynthKind,
    #[arg(long, default_value_t = 200)]
    dialogs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    model: Option<serde_json::Value>,
    train: TrainConfig,
    min_freq: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EvalFile {
    decode: DecodeConfig,
    rules: Option<RuleSet>,
    include_control_in_ppl: bool,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ChatFile {
    decode: DecodeConfig,
    rules: Option<RuleSet>,
}

fn read_json<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let raw = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn load_data(args: &CorpusArgs) -> Result<Corpus> {
    let taxonomy = Taxonomy::for_task(&args.task)?;
    let corpus = if args.corpus.extension().is_some_and(|e| e == "csv") {
        if taxonomy.task != "persuasion" {
            bail!("CSV corpora are PersuasionForGood exports; pass --task persuasion");
        }
        ingest_persuasion_csv(&args.corpus, &ActMapping::shipped())?
    } else {
        let mode = if args.lenient { LoadMode::Lenient } else { LoadMode::Strict };
        load_corpus(&args.corpus, &taxonomy, mode)?
    };
    Ok(corpus)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mode = TrainingMode::parse(&args.mode)?;
    let file: TrainFile = read_json(args.config.as_deref())?;
    let mut model: ModelConfig = match &file.model {
        Some(v) => serde_json::from_value(v.clone()).context("model config")?,
        None => ModelConfig::default(),
    };
    if !file.model.as_ref().is_some_and(|v| v.get("loss_weights").is_some()) {
        model.loss_weights = mode.default_weights();
    }
    let mut train_config = file.train;
    train_config.seed = args.data.seed;

    let corpus = load_data(&args.data)?;
    let splits = split_corpus(&corpus, args.data.seed)?;
    let vocab = build_vocabulary(&splits.train, file.min_freq.unwrap_or(1), mode.encode_options().delexicalize)?;
    tracing::info!(
        mode = mode.as_str(),
        train = splits.train.len(),
        validation = splits.validation.len(),
        vocab = vocab.len(),
        "training"
    );
    let init = Checkpoint::initialize(model, mode, vocab, splits.train.taxonomy.clone(), args.data.seed)?;
    let out = train(init, &splits.train, Some(&splits.validation), &train_config, args.series_dir.as_deref())?;
    for r in &out.log {
        println!(
            "epoch {:>3}  train {:.4}  validation {}  ppl {}",
            r.epoch,
            r.train.total,
            r.validation.as_ref().map_or("-".into(), |v| format!("{:.4}", v.total)),
            r.validation_perplexity.map_or("-".into(), |p| format!("{p:.3}"))
        );
    }
    let dir = args.checkpoint.join(mode.as_str());
    out.best.save(&dir)?;
    println!("saved {} ({})", dir.display(), out.best.digest());
    if let TrainStatus::Aborted { epoch, step } = out.status {
        bail!("training hit a non-finite loss at epoch {epoch}, step {step}; kept the last good checkpoint");
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let variant = Variant::parse(&args.variant)?;
    let file: EvalFile = read_json(args.config.as_deref())?;
    let corpus = load_data(&args.data)?;
    let splits = split_corpus(&corpus, args.data.seed)?;
    let models = ModelSet::load_dir(&args.checkpoint)?;
    let tables = build_transition_table(&splits.train)?;
    let cfg = EvalConfig {
        variant,
        decode: DecodeConfig {
            seed: args.data.seed,
            ..file.decode
        },
        rules: file.rules.unwrap_or_else(|| RuleSet::for_task(&corpus.task)),
        include_control_in_ppl: file.include_control_in_ppl,
    };
    let report = run_eval(&models, &tables, &splits.test, &cfg)?;
    let json = report.to_json()?;
    match &args.out {
        Some(p) => {
            fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?;
            print!("{}", format_table(std::slice::from_ref(&report), TableFormat::Text));
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_table(args: TableArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| {
            let raw = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<EvalReport>(&raw).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let format = match args.format {
        Format::Text => TableFormat::Text,
        Format::Csv => TableFormat::Csv,
    };
    print!("{}", format_table(&reports, format));
    Ok(())
}

async fn app_state(args: &ServiceArgs, ui_dir: Option<PathBuf>) -> Result<AppState> {
    let models = ModelSet::load_dir(&args.checkpoint)?;
    let file: ChatFile = read_json(args.config.as_deref())?;
    let task = models.taxonomy().map(|t| t.task.clone()).unwrap_or_default();
    let persona = match &args.persona {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).context("persona")?,
        None if task == "antiscam" => SlotLexicon::antiscam_persona(),
        None => SlotLexicon::default(),
    };
    let config = ServiceConfig {
        chat: ChatConfig {
            decode: file.decode,
            rules: file.rules.unwrap_or_else(|| RuleSet::for_task(&task)),
        },
        persona,
        ui_dir,
    };
    tracing::info!(variants = ?models.variants(), "models loaded");
    Ok(AppState::new(models, config, &args.data_dir).await?)
}

fn port() -> Result<u16> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v.parse().with_context(|| format!("{PORT_ENV}={v} is not a port")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

async fn cmd_serve(args: ServeArgs) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", args.host, port()?).parse().context("listen address")?;
    let state = app_state(&args.service, args.ui_dir).await?;
    missa_service::serve(addr, state).await?;
    Ok(())
}

fn print_trace(reply: &missa_core::api::MessageReply) {
    let t = &reply.trace;
    let verdicts = t.filter.as_ref().map(|f| &f.verdicts);
    println!("  route {:?}, {} candidates, {} ms", t.route, t.candidates.len(), t.elapsed_ms);
    for (i, c) in t.candidates.iter().enumerate() {
        let labels: Vec<String> = c.labels().iter().map(|(i, s)| format!("{i}/{s}")).collect();
        let failed: Vec<String> = verdicts
            .and_then(|v| v.get(i))
            .map(|v| v.iter().filter(|r| !r.passed()).map(|r| format!("{}x{}", r.rule, r.violations)).collect())
            .unwrap_or_default();
        println!(
            "  {} [{:>7.2}] {} {}{}",
            if i == t.selected { '*' } else { ' ' },
            c.logp,
            labels.join(" "),
            c.text(),
            if failed.is_empty() { String::new() } else { format!("  ({})", failed.join(", ")) }
        );
    }
    if t.filter.as_ref().is_some_and(|f| f.fallback) {
        println!("  fallback: every candidate broke a rule");
    }
}

async fn cmd_chat(args: ChatArgs) -> Result<()> {
    let (client, _server) = match (&args.server, &args.checkpoint) {
        (Some(url), _) => (Client::new(url.clone()), None),
        (None, Some(ckpt)) => {
            let service = ServiceArgs {
                checkpoint: ckpt.clone(),
                data_dir: args.data_dir.clone(),
                config: args.config.clone(),
                persona: None,
            };
            let state = app_state(&service, None).await?;
            let (addr, task) = missa_service::start("127.0.0.1:0".parse()?, state).await?;
            (Client::new(format!("http://{addr}")), Some(task))
        }
        (None, None) => bail!("pass --server or --checkpoint"),
    };
    let variant = Variant::parse(&args.variant)?;
    let session = client
        .create_session(&CreateSession {
            task: args.task.clone(),
            variant,
            seed: args.seed,
            blind: args.blind,
            lexicon: None,
        })
        .await?;
    println!("session {} ({}, seed {})", session.id, session.variant, session.seed);
    println!("type a message; /rate F C E to rate, /quit to leave");
    let mut lines = BufReader::new(tokio::io::stdin()).lines();
    while let Some(line) = lines.next_line().await? {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "/quit" {
            break;
        }
        if let Some(rest) = line.strip_prefix("/rate") {
            let scores: Vec<u8> = rest.split_whitespace().filter_map(|s| s.parse().ok()).collect();
            let [fluency, coherence, engagement] = scores[..] else {
                println!("usage: /rate FLUENCY COHERENCE ENGAGEMENT (each 1-5)");
                continue;
            };
            match client.rate(&session.id, Ratings { fluency, coherence, engagement }).await {
                Ok(r) => println!("rated; length {}, task success {}", r.stats.length, r.stats.task_success),
                Err(e) => println!("error: {e}"),
            }
            continue;
        }
        match client.post_message(&session.id, line).await {
            Ok(reply) => {
                println!("system: {}", reply.reply);
                if !reply.blind {
                    print_trace(&reply);
                }
            }
            Err(e) => println!("error: {e}"),
        }
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let corpus = match args.kind {
        SynthKind::Scripted => scripted_corpus(args.dialogs, args.seed),
        SynthKind::Adversarial => adversarial_corpus(args.dialogs, args.seed),
    };
    save_corpus(&corpus, &args.out)?;
    let stats = corpus.stats();
    println!("wrote {} dialogs, {} turns to {}", stats.dialogs, stats.turns, args.out.display());
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Train(a) => tokio::task::spawn_blocking(move || cmd_train(a)).await?,
        Command::Eval(a) => tokio::task::spawn_blocking(move || cmd_eval(a)).await?,
        Command::Table(a) => cmd_table(a),
        Command::Serve(a) => cmd_serve(a).await,
        Command::Chat(a) => cmd_chat(a).await,
        Command::Synth(a) => cmd_synth(a),
    }
}
