use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use relkit_core::lang::{parse_feature, FeatureFile, TagExpr};
use relkit_core::lifecycle::{CaseState, Role, TransitionRequest};
use relkit_core::orchestrator::{builtin_registry, run_suite, RunConfig, RunMode, RunReport, ScenarioStatus};
use relkit_core::session::{blind_spots, classify_release, meeting_digest, progress, AssignStrategy, ReleaseScope};
use relkit_store::http::CreateSessionBody;
use relkit_store::{OpenMode, Store};
use walkdir::WalkDir;

#[derive(Parser)]
#[command(name = "relkit", version, about = "Release-testing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run feature files against the network simulator.
    Run(RunArgs),
    /// Serve the HTTP API over an event-log store.
    Serve {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long, env = "RELKIT_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Manage test sessions.
    #[command(subcommand)]
    Session(SessionCmd),
    /// Act on individual case results.
    #[command(subcommand)]
    Case(CaseCmd),
    /// Release planning helpers.
    #[command(subcommand)]
    Release(ReleaseCmd),
}

#[derive(Args)]
struct RunArgs {
    /// Feature files or directories searched for `*.feature`.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    /// Tag expression, e.g. `@Network and not @Slow`.
    #[arg(long)]
    tags: Option<String>,
    #[arg(long, default_value = "standard")]
    mode: RunMode,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long, default_value = "Slow")]
    slow_tag: String,
    /// Write the JSON run report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct StoreArg {
    /// Event log file.
    #[arg(long, env = "RELKIT_STORE")]
    store: PathBuf,
}

impl StoreArg {
    fn open(&self, mode: OpenMode) -> Result<Store> {
        Store::open(&self.store, mode).with_context(|| format!("opening store {}", self.store.display()))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum SessionCmd {
    /// Create a session from a JSON description (`-` reads stdin).
    Create {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        file: PathBuf,
    },
    /// Distribute unassigned results over the session's testers.
    Assign {
        #[command(flatten)]
        store: StoreArg,
        id: String,
    },
    List {
        #[command(flatten)]
        store: StoreArg,
    },
    Progress {
        #[command(flatten)]
        store: StoreArg,
        id: String,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    Digest {
        #[command(flatten)]
        store: StoreArg,
        id: String,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    Blindspots {
        #[command(flatten)]
        store: StoreArg,
        id: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    Close {
        #[command(flatten)]
        store: StoreArg,
        id: String,
    },
}

#[derive(Subcommand)]
enum CaseCmd {
    Transition {
        #[command(flatten)]
        store: StoreArg,
        /// Result id, e.g. `s1-3`.
        result: String,
        /// State the result is expected to be in.
        #[arg(long)]
        from: CaseState,
        #[arg(long)]
        to: CaseState,
        #[arg(long)]
        role: Role,
        #[arg(long, env = "RELKIT_ACTOR")]
        actor: String,
        #[arg(long)]
        note: Option<String>,
        #[arg(long)]
        issue: Option<String>,
    },
    Show {
        #[command(flatten)]
        store: StoreArg,
        result: String,
    },
}

#[derive(Subcommand)]
enum ReleaseCmd {
    /// Classify a release from a JSON list of changes.
    Classify {
        #[arg(long)]
        changes: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => return run(args),
        Command::Serve { store, bind } => serve(&store, &bind),
        Command::Session(cmd) => session(cmd),
        Command::Case(cmd) => case(cmd),
        Command::Release(ReleaseCmd::Classify { changes }) => classify(&changes),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn collect_features(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_file() {
            out.push(p.clone());
            continue;
        }
        if !p.exists() {
            bail!("no such file or directory: {}", p.display());
        }
        let mut found: Vec<PathBuf> = WalkDir::new(p)
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "feature"))
            .map(|e| e.into_path())
            .collect();
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn load_suite(args: &RunArgs) -> Result<(Vec<FeatureFile>, Option<TagExpr>, RunConfig)> {
    let tags = args.tags.as_deref().map(TagExpr::parse).transpose().context("invalid --tags")?;
    let config = RunConfig { mode: args.mode, slow_tag: args.slow_tag.clone(), parallelism: args.parallelism, ..Default::default() };
    config.validate()?;
    let mut files = Vec::new();
    for path in collect_features(&args.paths)? {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        files.push(parse_feature(&text, &path.display().to_string())?);
    }
    Ok((files, tags, config))
}

/// Exit 0 iff nothing failed or errored; 2 when the input cannot be loaded.
fn run(args: RunArgs) -> ExitCode {
    let (files, tags, config) = match load_suite(&args) {
        Ok(loaded) => loaded,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let report = run_suite(&files, tags.as_ref(), &builtin_registry(), &config);
    print_report(&report);
    if let Some(out) = &args.report {
        let written = serde_json::to_string_pretty(&report)
            .map_err(anyhow::Error::from)
            .and_then(|json| std::fs::write(out, json + "\n").with_context(|| format!("writing {}", out.display())));
        if let Err(e) = written {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    }
    if report.succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn print_report(report: &RunReport) {
    for r in &report.results {
        match &r.status {
            ScenarioStatus::Passed { warning } => {
                println!("PASS  {}: {} ({} ms virtual)", r.file, r.title, r.virtual_ms);
                if let Some(w) = warning {
                    println!("      warning: {w}");
                }
            }
            ScenarioStatus::Failed { span, clause, expected, actual, message, .. } => {
                println!("FAIL  {}:{}: {}", r.file, span.line, r.title);
                println!("      {clause}");
                println!("      expected {expected}, actual {actual}");
                if !message.is_empty() {
                    println!("      {message}");
                }
            }
            ScenarioStatus::Error { span, clause, message, .. } => {
                println!("ERROR {}:{}: {}", r.file, span.line, r.title);
                if !clause.is_empty() {
                    println!("      {clause}");
                }
                println!("      {message}");
            }
            ScenarioStatus::Skipped { reason } => println!("SKIP  {}: {} ({reason})", r.file, r.title),
        }
    }
    let t = report.totals;
    println!(
        "{} scenarios: {} passed, {} failed, {} errors, {} skipped",
        t.total, t.passed, t.failed, t.errors, t.skipped
    );
}

fn serve(store: &StoreArg, bind: &str) -> Result<()> {
    let store = Arc::new(store.open(OpenMode::RecoverTornTail)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = relkit_store::http::bind(bind).await?;
        if let Some(addr) = relkit_store::http::local_addr(&listener) {
            eprintln!("listening on http://{addr}");
        }
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        relkit_store::http::serve(store, listener, shutdown).await?;
        Ok(())
    })
}

fn session(cmd: SessionCmd) -> Result<()> {
    match cmd {
        SessionCmd::Create { store, file } => {
            let body: CreateSessionBody = serde_json::from_str(&read_input(&file)?).context("invalid session description")?;
            let s = store.open(OpenMode::Strict)?.create_session(body.into_new_session())?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            print_json(&s)
        }
        SessionCmd::Assign { store, id } => print_json(&store.open(OpenMode::Strict)?.assign(&id, AssignStrategy::default())?),
        SessionCmd::List { store } => {
            let snap = store.open(OpenMode::Strict)?.snapshot();
            for s in snap.sessions.values() {
                let p = progress(s);
                let state = if s.is_closed() { "closed" } else { "open" };
                println!("{}\t{}\t{}\t{:.1}%\t{state}", s.id, s.phase, s.plan.name, p.percent_final);
            }
            Ok(())
        }
        SessionCmd::Progress { store, id, format } => {
            let p = store.open(OpenMode::Strict)?.read(|s| s.session(&id).map(progress))?;
            match format {
                Format::Json => print_json(&p),
                Format::Text => {
                    print!("{}", p.to_text());
                    Ok(())
                }
            }
        }
        SessionCmd::Digest { store, id, format } => {
            let d = store.open(OpenMode::Strict)?.read(|s| s.session(&id).map(meeting_digest))?;
            match format {
                Format::Json => print_json(&d),
                Format::Text => {
                    print!("{}", d.to_text());
                    Ok(())
                }
            }
        }
        SessionCmd::Blindspots { store, id, threshold } => {
            let spots = store.open(OpenMode::Strict)?.read(|s| s.session(&id).cloned())?;
            print_json(&blind_spots(&spots, threshold)?)
        }
        SessionCmd::Close { store, id } => print_json(&store.open(OpenMode::Strict)?.close_session(&id)?),
    }
}

fn case(cmd: CaseCmd) -> Result<()> {
    match cmd {
        CaseCmd::Transition { store, result, from, to, role, actor, note, issue } => {
            let req = TransitionRequest { expected_from: from, to, role, actor, note, issue_ref: issue };
            print_json(&store.open(OpenMode::Strict)?.transition(&result, &req)?)
        }
        CaseCmd::Show { store, result } => print_json(&store.open(OpenMode::Strict)?.read(|s| s.result(&result).cloned())?),
    }
}

/// Accepts `{"changes": [...]}` or a bare list of changes.
fn classify(path: &Path) -> Result<()> {
    let text = read_input(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).context("changes file is not JSON")?;
    let scope: ReleaseScope = if value.is_array() {
        ReleaseScope { changes: serde_json::from_value(value)? }
    } else {
        serde_json::from_value(value)?
    };
    println!("{:?}", classify_release(&scope)?);
    Ok(())
}
