use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fcurve_core::dataset::SplitMode;
use fcurve_core::eval::evaluate;
use fcurve_core::io::{write_atomic, write_json};
use fcurve_core::lexicon::{LexiconKind, LexiconSource};
use fcurve_core::pipeline::{inspect, load_events, prepare, run_ladder, train_on, Experiment};
use fcurve_core::synth::{generate, GroundTruth, Noise, SynthSpec};
use fcurve_core::{Error, ModelKind, ModelState, RunConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "fcurve", version, about = "Forgetting-curve models for spaced repetition")]
struct Cli {
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and evaluate it on the held-out split
    Train(RunArgs),
    /// Evaluate a saved model
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Model JSON written by `train`
        #[arg(long)]
        model_file: PathBuf,
        /// Score every event instead of the test split
        #[arg(long)]
        all: bool,
    },
    /// Train and evaluate every model kind on one split
    Ladder {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated kinds (default: all)
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<ModelKind>,
    },
    /// Show the largest weights of a saved model
    Inspect {
        model_file: PathBuf,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
        /// Print JSON instead of a table
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic dataset with a known ground truth
    Synth(SynthArgs),
    /// Parse a review log and report row counts
    Ingest(RunArgs),
}

/// Flags shared by every data-driven command; each overrides the config file.
#[derive(Args, Clone, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep only the first N matching events
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Train neural kinds on at most N training events
    #[arg(long)]
    neural_train_limit: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Lexicon as KIND=PATH (complexity, concreteness_norms, subtlex); repeatable
    #[arg(long = "lexicon", value_parser = parse_lexicon)]
    lexicons: Vec<LexiconSource>,
}

fn parse_lexicon(s: &str) -> Result<LexiconSource, String> {
    let (kind, path) = s.split_once('=').ok_or("expected KIND=PATH")?;
    let kind: LexiconKind = serde_json::from_value(json!(kind))
        .map_err(|_| format!("unknown lexicon kind `{kind}` (complexity, concreteness_norms, subtlex)"))?;
    Ok(LexiconSource::new(path, kind))
}

impl RunArgs {
    fn resolve(&self) -> fcurve_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { cfg.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            dataset => dataset,
            model => model,
            seed => seed,
            limit => limit,
            out => out,
            split => split.mode,
            train_fraction => split.train_fraction,
            language => learning_language,
            epochs => hyper.epochs,
            lr => hyper.learning_rate,
            alpha => hyper.alpha,
            lambda => hyper.lambda,
            hidden_dim => hyper.hidden_dim,
            neural_train_limit => neural_train_limit,
            workers => workers,
        );
        for lex in &self.lexicons {
            cfg.lexicons.retain(|l| l.kind != lex.kind);
            cfg.lexicons.push(lex.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    /// Ground-truth kind: hlr or c_hlr_plus
    #[arg(long, default_value = "hlr")]
    ground_truth: ModelKind,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 250)]
    words: usize,
    #[arg(long, default_value_t = 4)]
    events_per_pair: usize,
    /// Binomial draws per session; 0 writes the exact recall probability
    #[arg(long, default_value_t = 50)]
    session_size: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("error: bad arguments"));
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose { "info" } else { "warn" }))
        .format_timestamp_secs()
        .init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            let input = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_input_error));
            ExitCode::from(if input { 2 } else { 1 })
        }
    }
}

fn configure_workers(cfg: &RunConfig) -> anyhow::Result<()> {
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn setup(run: &RunArgs) -> anyhow::Result<(RunConfig, Experiment)> {
    let cfg = run.resolve()?;
    configure_workers(&cfg)?;
    let exp = prepare(&cfg)?;
    Ok((cfg, exp))
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Train(run) => {
            let (cfg, exp) = setup(&run)?;
            let started = Instant::now();
            let out = train_on(&exp, cfg.model, &cfg)?;
            out.state.save(&cfg.out.join("model.json"))?;
            write_atomic(&cfg.out.join("train_log.jsonl"), out.log.to_json_lines()?.as_bytes())?;
            write_json(&cfg.out.join("eval.json"), &out.test_report)?;
            write_json(
                &cfg.out.join("train_summary.json"),
                &json!({
                    "kind": cfg.model,
                    "train_events": out.train_report.num_events,
                    "test_events": out.test_report.num_events,
                    "train_mae": out.train_report.mae,
                    "test_mae": out.test_report.mae,
                    "epochs": out.log.epochs.len(),
                    "ingest": exp.ingest,
                    "metadata": { "seconds": started.elapsed().as_secs_f64() },
                }),
            )?;
            println!(
                "{}: train MAE {:.4}, test MAE {:.4} ({} / {} events) -> {}",
                cfg.model.display_name(),
                out.train_report.mae,
                out.test_report.mae,
                out.train_report.num_events,
                out.test_report.num_events,
                cfg.out.display()
            );
        }
        Command::Evaluate { run, model_file, all } => {
            let state = ModelState::load(&model_file)?;
            let (cfg, exp) = setup(&run)?;
            let events = if all {
                [exp.split.train, exp.split.test].concat()
            } else {
                exp.split.test
            };
            let report = evaluate(&state, &events, &exp.lexicons)?;
            write_json(&cfg.out.join("eval.json"), &report)?;
            println!("{}: MAE {:.4} over {} events", state.kind.display_name(), report.mae, report.num_events);
        }
        Command::Ladder { run, kinds } => {
            let (cfg, exp) = setup(&run)?;
            let kinds = if kinds.is_empty() { ModelKind::ALL.to_vec() } else { kinds };
            let report = run_ladder(&exp, &cfg, &kinds);
            write_json(&cfg.out.join("ladder.json"), &report)?;
            let table = report.render_table();
            write_atomic(&cfg.out.join("ladder.txt"), table.as_bytes())?;
            print!("{table}");
            if report.any_failed() {
                eprintln!("error: some models failed; see {}", cfg.out.join("ladder.json").display());
                return Ok(ExitCode::from(1));
            }
        }
        Command::Inspect { model_file, top_k, json } => {
            let state = ModelState::load(&model_file)?;
            let inspection = inspect(&state, top_k)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&inspection)?);
            } else {
                print!("{}", inspection.render());
            }
        }
        Command::Synth(args) => synth(&args)?,
        Command::Ingest(run) => {
            let cfg = run.resolve()?;
            let (events, stats) = load_events(&cfg)?;
            let users: std::collections::HashSet<_> = events.iter().map(|e| &e.user_id).collect();
            let lexemes: std::collections::HashSet<_> = events.iter().map(|e| &e.lexeme_id).collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "stats": stats,
                    "users": users.len(),
                    "lexemes": lexemes.len(),
                    "mean_recall": events.iter().map(|e| e.observed_recall).sum::<f64>() / events.len() as f64,
                }))?
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let spec = SynthSpec {
        num_users: args.users,
        num_words: args.words,
        events_per_pair: args.events_per_pair,
        ground_truth: GroundTruth::for_kind(args.ground_truth)?,
        noise: match args.session_size {
            0 => Noise::Deterministic,
            n => Noise::Binomial { session_seen: n },
        },
        seed: args.seed,
        ..Default::default()
    };
    let data = generate(&spec)?;
    let dir = &args.out;
    let files = data.write_to(dir)?;

    let relative = |p: &Path| PathBuf::from(p.file_name().expect("generated files have names"));
    let cfg = RunConfig {
        dataset: Some(relative(&files.reviews)),
        lexicons: files
            .lexicons
            .iter()
            .map(|l| LexiconSource { path: relative(&l.path), ..l.clone() })
            .collect(),
        model: args.ground_truth,
        seed: args.seed,
        out: PathBuf::from("runs"),
        ..Default::default()
    };
    write_atomic(&dir.join("run.toml"), cfg.to_toml()?.as_bytes())?;
    write_atomic(&dir.join("synth.toml"), spec.to_toml()?.as_bytes())?;
    println!(
        "wrote {} events, {} words to {} (config: {})",
        data.events.len(),
        data.words.len(),
        dir.display(),
        dir.join("run.toml").display()
    );
    Ok(())
}
