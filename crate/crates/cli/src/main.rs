use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser as ClapParser, Subcommand};
use facetalk::{engine_from, http, lexicon_from, read, repl, schema_from};
use facetalk_core::corpusgen::{read_jsonl, write_jsonl, CorpusGenerator};
use facetalk_core::session::FileStore;
use facetalk_core::{
    load_grammar, round_trip_eval, EngineConfig, Lexicon, MemoryStore, ParseContext, Parser,
    SessionManager, SnapshotStore,
};

#[derive(ClapParser)]
#[command(
    name = "facetalk",
    version,
    about = "Conversational faceted product search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct EngineArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    /// Products returned per turn.
    #[arg(long, default_value_t = 10)]
    page_size: usize,
    /// Seed for session ids.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Persist per-turn snapshots under this directory instead of in memory.
    #[arg(long)]
    store_dir: Option<PathBuf>,
}

impl EngineArgs {
    fn manager(&self) -> Result<SessionManager> {
        let config = EngineConfig {
            page_size: self.page_size,
            ..EngineConfig::default()
        };
        let engine = engine_from(&self.schema, &self.lexicon, &self.catalog, config)?;
        let store: Arc<dyn SnapshotStore> = match &self.store_dir {
            Some(dir) => Arc::new(FileStore::new(dir).context("opening snapshot store")?),
            None => Arc::new(MemoryStore::new()),
        };
        Ok(SessionManager::new(engine, store, self.seed))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse one utterance and print the result as JSON.
    Parse {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        category: Option<String>,
        /// Full parse context as JSON; `--category` overrides its category.
        #[arg(long)]
        context: Option<String>,
        utterance: String,
    },
    /// Serve the JSON API and, optionally, a static UI.
    Serve {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Chat on stdin/stdout.
    Repl {
        #[command(flatten)]
        engine: EngineArgs,
        /// Products printed per turn.
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
    /// Generate a labeled corpus as JSON lines.
    Gen {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Lexicon used to keep generated surfaces unambiguous.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(short = 'n', long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to this file instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Parse a corpus back and report exact-match accuracy.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
    },
}

fn parse_cmd(
    schema: PathBuf,
    lexicon: PathBuf,
    category: Option<String>,
    context: Option<String>,
    text: String,
) -> Result<()> {
    let (schema, lexicon) = (schema_from(&schema)?, lexicon_from(&lexicon)?);
    let mut ctx: ParseContext = match context {
        Some(json) => serde_json::from_str(&json).context("parsing --context")?,
        None => ParseContext::default(),
    };
    if let Some(c) = category {
        ctx.active_category = Some(c.into());
    }
    let result = Parser::new(&schema, &lexicon).parse(&text, &ctx)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

async fn serve(
    sessions: SessionManager,
    schema: PathBuf,
    addr: SocketAddr,
    ui_dir: Option<PathBuf>,
) -> Result<()> {
    if let Some(dir) = &ui_dir {
        if !dir.is_dir() {
            bail!("--ui-dir {} is not a directory", dir.display());
        }
    }
    let schema_json = String::from_utf8(read(&schema)?).context("schema is not UTF-8")?;
    let app = http::router(Arc::new(sessions), schema_json, ui_dir);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn gen(
    grammar: PathBuf,
    schema: PathBuf,
    lexicon: Option<PathBuf>,
    n: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let grammar = load_grammar(&read(&grammar)?).context("loading grammar")?;
    let schema = schema_from(&schema)?;
    let lexicon = match lexicon {
        Some(p) => lexicon_from(&p)?,
        None => Lexicon::default(),
    };
    let corpus = CorpusGenerator::new(&grammar, &schema, &lexicon)?.instantiate(n, seed)?;
    let text = write_jsonl(&corpus);
    match out {
        Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn eval(corpus: PathBuf, schema: PathBuf, lexicon: PathBuf) -> Result<bool> {
    let text = String::from_utf8(read(&corpus)?).context("corpus is not UTF-8")?;
    let corpus = read_jsonl(&text)?;
    let (schema, lexicon) = (schema_from(&schema)?, lexicon_from(&lexicon)?);
    let report = round_trip_eval(&corpus, &Parser::new(&schema, &lexicon));
    for m in &report.mismatches {
        println!("{}", serde_json::to_string(m)?);
    }
    let rate = if report.total == 0 {
        1.0
    } else {
        report.exact_match as f64 / report.total as f64
    };
    println!(
        "{}",
        serde_json::json!({"total": report.total, "exact_match": report.exact_match, "accuracy": rate})
    );
    Ok(report.all_match())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Parse {
            schema,
            lexicon,
            category,
            context,
            utterance,
        } => parse_cmd(schema, lexicon, category, context, utterance)?,
        Command::Serve {
            engine,
            host,
            port,
            ui_dir,
        } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .context("bad --host/--port")?;
            let sessions = engine.manager()?;
            tokio::runtime::Runtime::new()?.block_on(serve(
                sessions,
                engine.schema,
                addr,
                ui_dir,
            ))?;
        }
        Command::Repl { engine, top_k } => {
            let sessions = engine.manager()?;
            repl::run(&sessions, io::stdin().lock(), io::stdout().lock(), top_k)?;
        }
        Command::Gen {
            grammar,
            schema,
            lexicon,
            n,
            seed,
            out,
        } => gen(grammar, schema, lexicon, n, seed, out)?,
        Command::Eval {
            corpus,
            schema,
            lexicon,
        } => return eval(corpus, schema, lexicon),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
