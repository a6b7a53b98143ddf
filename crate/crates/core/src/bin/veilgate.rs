use std::fs;
use std::io::{self, Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use veilgate::corpus::{compute_stats, Corpus, PrivacyItem};
use veilgate::extraction::{Extractor, RemoteExtractor, RuleExtractor};
use veilgate::gateway::bench::{run_extraction_benchmark, EmptyExtractor, GoldExtractor, ScoreBreakdown};
use veilgate::gateway::config::{ExtractorKind, GatewayConfig};
use veilgate::gateway::experiment::{run_experiment, ExperimentConfig};
use veilgate::gateway::{check_input, server, Gateway};
use veilgate::metrics::TrigramEmbedder;
use veilgate::restorer::restore;
use veilgate::sanitizer::{passthrough, sanitize, sanitize_irreversible, sanitize_untyped, Strategy, UntypedSession};
use veilgate::store::MappingStore;
use veilgate::{PrivacyLevel, Taxonomy};

#[derive(Parser)]
#[command(name = "veilgate", version, about = "Local privacy gateway for cloud assistants")]
struct Cli {
    /// TOML config file; credentials may also come from VEILGATE_* variables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractorArg {
    Rules,
    Remote,
    /// Corpus annotations (simulate and bench-extract only)
    Gold,
    Empty,
}

#[derive(clap::Args)]
struct Io {
    /// Input file (default: stdin)
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output file (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Detect privacy items in a message and print them as JSON.
    Extract {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        real_name: Option<String>,
        #[arg(long, value_enum)]
        extractor: Option<ExtractorArg>,
    },
    /// Mask a message for one user.
    Sanitize {
        #[arg(long)]
        user: String,
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        real_name: Option<String>,
        /// none | irreversible | untyped | typed
        #[arg(long)]
        strategy: Option<Strategy>,
        /// PL2 | PL3 | PL4
        #[arg(long)]
        mask_level: Option<PrivacyLevel>,
        /// Mapping store directory
        #[arg(long)]
        store: Option<PathBuf>,
        /// Use these items (JSON array) instead of running the extractor
        #[arg(long)]
        items: Option<PathBuf>,
        #[arg(long, value_enum)]
        extractor: Option<ExtractorArg>,
        /// Print the full record instead of the masked text
        #[arg(long)]
        json: bool,
    },
    /// Replace a user's placeholders with their original values.
    Restore {
        #[arg(long)]
        user: String,
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Score predicted privacy items against gold annotations.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Write the structured report here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Compare masking strategies against the mock memory.
    Simulate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_values = ["none", "irreversible", "untyped", "typed"])]
        strategies: Vec<Strategy>,
        #[arg(long)]
        mask_level: Option<PrivacyLevel>,
        #[arg(long, value_enum, default_value = "rules")]
        extractor: ExtractorArg,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[arg(long)]
        workers: Option<usize>,
        /// Write the structured report here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an extractor over every message of a corpus and score it.
    BenchExtract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "rules")]
        extractor: ExtractorArg,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

fn read_input(path: &Option<PathBuf>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

fn write_output(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn build_extractor(
    arg: Option<ExtractorArg>,
    config: &GatewayConfig,
    corpus: Option<&Corpus>,
) -> Result<Arc<dyn Extractor>> {
    let arg = arg.unwrap_or(match config.extractor {
        ExtractorKind::Rules => ExtractorArg::Rules,
        ExtractorKind::Remote => ExtractorArg::Remote,
    });
    Ok(match arg {
        ExtractorArg::Rules => Arc::new(RuleExtractor),
        ExtractorArg::Remote => Arc::new(RemoteExtractor::new(config.remote_extractor.to_extractor_config()?)?),
        ExtractorArg::Gold => Arc::new(GoldExtractor::from_corpus(
            corpus.ok_or_else(|| anyhow!("--extractor gold needs a corpus"))?,
        )),
        ExtractorArg::Empty => Arc::new(EmptyExtractor),
    })
}

fn open_store(arg: Option<PathBuf>, config: &GatewayConfig) -> Result<MappingStore> {
    match arg.or_else(|| config.store_path.clone()) {
        Some(dir) => MappingStore::open(&dir).with_context(|| format!("opening store {}", dir.display())),
        None => Ok(MappingStore::in_memory()),
    }
}

fn items_of(v: &Value) -> Result<Vec<PrivacyItem>> {
    Ok(serde_json::from_value(v.clone())?)
}

/// Annotation sets from a corpus file (one per message, in corpus order), an
/// array of arrays, or a single array.
fn load_annotation_sets(path: &Path) -> Result<Vec<Vec<PrivacyItem>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match &v {
        Value::Object(o) if o.contains_key("users") => {
            let mut sets = Vec::new();
            for user in o["users"].as_array().ok_or_else(|| anyhow!("users must be an array"))? {
                for dialogue in user["dialogues"].as_array().into_iter().flatten() {
                    for msg in dialogue
                        .as_array()
                        .ok_or_else(|| anyhow!("dialogue must be an array"))?
                    {
                        sets.push(match msg.get("annotations") {
                            Some(a) => items_of(a)?,
                            None => Vec::new(),
                        });
                    }
                }
            }
            Ok(sets)
        }
        Value::Array(a) if a.iter().all(Value::is_array) && !a.is_empty() => a.iter().map(items_of).collect(),
        Value::Array(_) => Ok(vec![items_of(&v)?]),
        _ => bail!("{}: expected a corpus or an array of annotations", path.display()),
    }
}

fn to_json(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn run(cli: Cli) -> Result<()> {
    let config = GatewayConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Extract {
            io,
            real_name,
            extractor,
        } => {
            let text = read_input(&io.input)?;
            let items = build_extractor(extractor, &config, None)?.extract(&text, real_name.as_deref())?;
            write_output(&io.out, &to_json(&items)?)
        }
        Command::Sanitize {
            user,
            io,
            real_name,
            strategy,
            mask_level,
            store,
            items,
            extractor,
            json,
        } => {
            if user.is_empty() {
                bail!("--user must be non-empty");
            }
            let text = read_input(&io.input)?;
            check_input(&text)?;
            let strategy = strategy.unwrap_or(config.strategy);
            let level = mask_level.unwrap_or(config.mask_level);
            let items = match items {
                Some(p) => serde_json::from_str(&fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => build_extractor(extractor, &config, None)?.extract(&text, real_name.as_deref())?,
            };
            let masked = match strategy {
                Strategy::None => passthrough(&text),
                Strategy::Irreversible => sanitize_irreversible(&text, &items, level),
                Strategy::UntypedPlaceholder => sanitize_untyped(&text, &items, level, &mut UntypedSession::new()),
                Strategy::TypedReversible => sanitize(&user, &text, &items, level, &open_store(store, &config)?)?,
            };
            for s in &masked.skipped {
                eprintln!("{}", serde_json::json!({"event": "skipped_item", "reason": s.reason}));
            }
            let out = if json { to_json(&masked)? } else { masked.text };
            write_output(&io.out, &out)
        }
        Command::Restore { user, io, store } => {
            let text = read_input(&io.input)?;
            let restored = restore(&user, &text, &open_store(store, &config)?);
            for p in &restored.unresolved {
                eprintln!(
                    "{}",
                    serde_json::json!({"event": "unresolved_placeholder", "user_id": user, "placeholder": p})
                );
            }
            write_output(&io.out, &restored.text)
        }
        Command::Score { pred, gold, out } => {
            let (preds, golds) = (load_annotation_sets(&pred)?, load_annotation_sets(&gold)?);
            if preds.len() != golds.len() {
                bail!(
                    "prediction file has {} message(s), gold file has {}",
                    preds.len(),
                    golds.len()
                );
            }
            let embedder = TrigramEmbedder::default();
            let mut report = ScoreBreakdown::default();
            for (p, g) in preds.iter().zip(&golds) {
                report.add(p, g, &embedder, Taxonomy::canonical());
            }
            report.finish();
            if let Some(path) = &out {
                fs::write(path, to_json(&report)?)?;
            }
            write_output(&None, &report.render_table())
        }
        Command::Stats { corpus, json } => {
            let stats = compute_stats(&Corpus::load(&corpus)?);
            write_output(&None, &if json { to_json(&stats)? } else { stats.render_table() })
        }
        Command::Simulate {
            corpus,
            strategies,
            mask_level,
            extractor,
            top_k,
            workers,
            out,
        } => {
            let corpus = Corpus::load(&corpus)?;
            if corpus.users.iter().all(|u| u.qa_items.is_empty()) {
                bail!("corpus has no QA items");
            }
            let cfg = ExperimentConfig {
                mask_level: mask_level.unwrap_or(config.mask_level),
                extractor: build_extractor(Some(extractor), &config, Some(&corpus))?,
                top_k,
                workers: workers.unwrap_or(config.workers),
            };
            let report = run_experiment(&corpus, &strategies, &cfg);
            if let Some(path) = &out {
                fs::write(path, to_json(&report)?)?;
            }
            write_output(&None, &report.render_table())
        }
        Command::BenchExtract {
            corpus,
            extractor,
            workers,
            out,
        } => {
            let corpus = Corpus::load(&corpus)?;
            let ex = build_extractor(Some(extractor), &config, Some(&corpus))?;
            let report = run_extraction_benchmark(
                &corpus,
                ex.as_ref(),
                &TrigramEmbedder::default(),
                Taxonomy::canonical(),
                workers.unwrap_or(config.workers),
            );
            if let Some(path) = &out {
                fs::write(path, to_json(&report)?)?;
            }
            let name = extractor
                .to_possible_value()
                .map(|v| v.get_name().to_string())
                .unwrap_or_default();
            write_output(
                &None,
                &format!("{}\n{}", report.render_table(&name), report.scores.render_table()),
            )
        }
        Command::Serve { bind, store } => {
            let mut config = config;
            if let Some(b) = bind {
                config.bind = b;
            }
            if store.is_some() {
                config.store_path = store;
            }
            let addr: SocketAddr = config
                .bind
                .parse()
                .with_context(|| format!("bad bind address {:?}", config.bind))?;
            let gateway = Arc::new(Gateway::from_config(&config)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(addr, gateway))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("VEILGATE_LOG"))
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
