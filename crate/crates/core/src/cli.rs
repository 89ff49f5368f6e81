//! The `feedctl` command line.
//!
//! Settings resolve in the order flag, environment, config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::api::{self, AppState};
use crate::dsl::{self, ParseError, Severity};
use crate::engine::{evaluate_and_record, EvalError, EvaluateAndRecordError, EvaluationRequest};
use crate::federation::{federation_summary, CellStatus};
use crate::model::{Catalog, Duration, EvaluationResult, KpiStatus, MetricValue};
use crate::store::{IngestError, Locator, Store};
use crate::time::{format_timestamp, parse_timestamp, Timestamp};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "feedctl", version, about = "Validate KPI catalogs, ingest observations, evaluate KPIs and serve the API")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Catalog file (.kpi).
    #[arg(long, global = true, value_name = "PATH")]
    pub catalog: Option<PathBuf>,
    /// Store directory.
    #[arg(long, global = true, env = "FEEDKIT_STORE", value_name = "PATH")]
    pub store: Option<PathBuf>,
    /// TOML file with `catalog`, `store` and `bind` defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Print results as JSON.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, validate and lint a catalog.
    Validate {
        /// Catalog to check; defaults to --catalog.
        path: Option<PathBuf>,
        /// Fail on lint warnings too.
        #[arg(long)]
        strict: bool,
    },
    /// Import a CSV file for one lab.
    Ingest {
        #[arg(long)]
        lab: String,
        #[arg(long, value_name = "PATH")]
        file: PathBuf,
        /// Uploader for rows that leave `uploader_id` empty.
        #[arg(long, default_value = "")]
        uploader: String,
    },
    /// Evaluate one KPI for one lab and record the result.
    Eval {
        #[arg(long)]
        kpi: String,
        #[arg(long)]
        lab: String,
        /// Evaluation instant (YYYY-MM-DDThh:mm:ssZ); defaults to now.
        #[arg(long, value_parser = parse_instant)]
        at: Option<Timestamp>,
        /// Window length overriding the KPI's, e.g. `6m`.
        #[arg(long)]
        window: Option<Duration>,
    },
    /// Status of every KPI at every lab.
    Summary {
        #[arg(long, value_parser = parse_instant)]
        at: Option<Timestamp>,
    },
    /// Run the HTTP API.
    Serve {
        /// Address to listen on [default: 127.0.0.1:8080].
        #[arg(long)]
        bind: Option<String>,
    },
}

fn parse_instant(s: &str) -> Result<Timestamp, String> {
    parse_timestamp(s).ok_or_else(|| "expected YYYY-MM-DDThh:mm:ssZ".to_string())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub catalog: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub bind: Option<String>,
}

/// Exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILED: u8 = 1;
    pub const SETUP: u8 = 2;
    pub const NOT_MET: u8 = 3;
    pub const INSUFFICIENT: u8 = 4;
}

/// A failure that ends the command with a message on stderr.
struct Fatal(u8, String);

impl Fatal {
    fn setup(message: impl Into<String>) -> Self {
        Fatal(exit::SETUP, message.into())
    }
}

pub fn run(cli: Cli) -> ExitCode {
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Fatal(code, message)) => {
            eprintln!("feedctl: {message}");
            ExitCode::from(code)
        }
    }
}

struct Settings {
    catalog: Option<PathBuf>,
    store: Option<PathBuf>,
    bind: Option<String>,
    json: bool,
}

impl Settings {
    fn resolve(global: &GlobalArgs) -> Result<Self, Fatal> {
        let file = match &global.config {
            None => ConfigFile::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Fatal::setup(format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| Fatal::setup(format!("{}: {e}", path.display())))?
            }
        };
        Ok(Settings {
            catalog: global.catalog.clone().or(file.catalog),
            store: global.store.clone().or(file.store),
            bind: file.bind,
            json: global.json,
        })
    }

    fn catalog_path(&self) -> Result<&Path, Fatal> {
        self.catalog.as_deref().ok_or_else(|| Fatal::setup("no catalog given (use --catalog or a config file)"))
    }

    fn load_catalog(&self) -> Result<Catalog, Fatal> {
        let path = self.catalog_path()?;
        let source = std::fs::read_to_string(path).map_err(|e| Fatal::setup(format!("{}: {e}", path.display())))?;
        let file = path.display().to_string();
        dsl::parse_catalog_file(&file, &source).map(|parsed| parsed.catalog).map_err(|errors| {
            let mut listing = format!("{file}: catalog has errors");
            for e in &errors {
                let _ = write!(listing, "\n{}", render_parse_error(e));
            }
            Fatal::setup(listing)
        })
    }

    fn open_store(&self, catalog: Catalog) -> Result<Store, Fatal> {
        let path = self
            .store
            .as_deref()
            .ok_or_else(|| Fatal::setup("no store given (use --store, FEEDKIT_STORE or a config file)"))?;
        if !path.exists() {
            std::fs::create_dir(path).map_err(|e| Fatal::setup(format!("cannot create store {}: {e}", path.display())))?;
        }
        Store::open(path, Arc::new(catalog)).map_err(|e| Fatal::setup(format!("cannot open store: {e}")))
    }
}

fn render_parse_error(e: &ParseError) -> String {
    format!("{}:{}:{} {} {}", e.span.file, e.span.line, e.span.column, e.code, e.message)
}

fn dispatch(cli: Cli) -> Result<u8, Fatal> {
    let settings = Settings::resolve(&cli.global)?;
    match cli.command {
        Command::Validate { path, strict } => {
            let path = match path {
                Some(p) => p,
                None => settings.catalog_path()?.to_path_buf(),
            };
            validate(&path, strict)
        }
        Command::Ingest { lab, file, uploader } => {
            let store = settings.open_store(settings.load_catalog()?)?;
            ingest(&store, &lab, &file, &uploader, settings.json)
        }
        Command::Eval { kpi, lab, at, window } => {
            let store = settings.open_store(settings.load_catalog()?)?;
            let mut request = EvaluationRequest::new(kpi, lab, at.unwrap_or_else(crate::time::now));
            request.window_override = window;
            eval(&store, &request, settings.json)
        }
        Command::Summary { at } => {
            let store = settings.open_store(settings.load_catalog()?)?;
            let at = at.unwrap_or_else(crate::time::now);
            let summary = federation_summary(store.catalog(), &*store.snapshot(), at);
            if settings.json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            } else {
                print!("{}", render_summary(&summary));
            }
            Ok(exit::OK)
        }
        Command::Serve { bind } => {
            let store = settings.open_store(settings.load_catalog()?)?;
            let bind = bind.or(settings.bind).unwrap_or_else(|| DEFAULT_BIND.to_string());
            serve(store, &bind)
        }
    }
}

/// Prints findings as `file:line:col code message`. Errors always fail;
/// warnings fail only when `strict`.
fn validate(path: &Path, strict: bool) -> Result<u8, Fatal> {
    let source = std::fs::read_to_string(path).map_err(|e| Fatal::setup(format!("{}: {e}", path.display())))?;
    let file = path.display().to_string();
    match dsl::parse_catalog_file(&file, &source) {
        Err(errors) => {
            for e in &errors {
                println!("{}", render_parse_error(e));
            }
            Ok(exit::FAILED)
        }
        Ok(parsed) => {
            let findings = dsl::lint_catalog_with_spans(&parsed.catalog, &parsed.source_map);
            let mut failed = false;
            for f in &findings {
                println!("{}:{}:{} {} {}", f.span.file, f.span.line, f.span.column, f.rule.code(), f.message);
                failed |= strict && f.severity == Severity::Warning;
            }
            Ok(if failed { exit::FAILED } else { exit::OK })
        }
    }
}

fn ingest(store: &Store, lab: &str, file: &Path, uploader: &str, json: bool) -> Result<u8, Fatal> {
    let content = std::fs::read_to_string(file).map_err(|e| Fatal::setup(format!("{}: {e}", file.display())))?;
    let outcome = match store.import_file(lab, uploader, &content) {
        Ok(outcome) => outcome,
        Err(e @ IngestError::MalformedHeader(_)) => return Err(Fatal(exit::FAILED, format!("{}: {e}", file.display()))),
        Err(e) => return Err(Fatal::setup(e.to_string())),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&outcome).expect("outcome serializes"));
    } else {
        println!("accepted {}, rejected {}", outcome.accepted, outcome.rejected.len());
        for r in &outcome.rejected {
            let at = match &r.locator {
                Locator::Row { row } => format!("row {row}"),
                Locator::Field { field } => format!("field {field}"),
            };
            println!("{at}: {} {}", r.code, r.message);
        }
    }
    Ok(if outcome.rejected.is_empty() { exit::OK } else { exit::FAILED })
}

fn eval(store: &Store, request: &EvaluationRequest, json: bool) -> Result<u8, Fatal> {
    let result = match evaluate_and_record(request, store.catalog(), &*store.snapshot(), store) {
        Ok(result) => result,
        Err(EvaluateAndRecordError::Eval(e)) => {
            let code = match e {
                EvalError::InvalidRange | EvalError::TooManyPoints | EvalError::TimeOutOfRange => exit::FAILED,
                _ => exit::SETUP,
            };
            return Err(Fatal(code, e.to_string()));
        }
        Err(EvaluateAndRecordError::History(e)) => return Err(Fatal::setup(format!("cannot record evaluation: {e}"))),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&result).expect("results serialize"));
    } else {
        print!("{}", render_result(&result));
    }
    Ok(match result.status {
        KpiStatus::Met => exit::OK,
        KpiStatus::NotMet => exit::NOT_MET,
        KpiStatus::InsufficientData => exit::INSUFFICIENT,
    })
}

pub fn render_result(r: &EvaluationResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} at {}", r.kpi_id, r.lab_id);
    let _ = writeln!(out, "window  {} .. {}", format_timestamp(&r.window_start), format_timestamp(&r.window_end));
    for (id, value) in &r.metric_values {
        let shown = match value {
            MetricValue::Value { value } => value.to_string(),
            MetricValue::Insufficient { .. } => "insufficient data".to_string(),
        };
        let _ = writeln!(out, "metric  {id} = {shown}");
    }
    for (predicate, outcome) in &r.predicate_outcomes {
        let _ = writeln!(out, "check   {predicate}: {}", serde_json::to_value(outcome).expect("outcome").as_str().unwrap_or("?"));
    }
    let status = serde_json::to_value(r.status).expect("status");
    let _ = writeln!(out, "status  {}", status.as_str().unwrap_or("?"));
    for action in &r.triggered_actions {
        let _ = writeln!(out, "action  {}", action.description);
    }
    for note in &r.notes {
        let _ = writeln!(out, "note    {note}");
    }
    out
}

fn render_summary(s: &crate::federation::FederationSummary) -> String {
    let width = s.labs.iter().map(String::len).max().unwrap_or(0).max(13);
    let mut lines = Vec::new();
    let mut header = format!("{:<6}", "KPI");
    for lab in &s.labs {
        let _ = write!(header, " {lab:<width$}");
    }
    lines.push(header);
    for row in &s.rows {
        let mut line = format!("{:<6}", row.kpi_id);
        for lab in &s.labs {
            let cell = match row.statuses[lab] {
                CellStatus::Met => "met",
                CellStatus::NotMet => "not met",
                CellStatus::InsufficientData => "insufficient",
                CellStatus::NotApplicable => "-",
            };
            let _ = write!(line, " {cell:<width$}");
        }
        lines.push(line);
    }
    lines.extend(s.notes.iter().map(|note| format!("note: {note}")));
    lines.iter().map(|l| format!("{}\n", l.trim_end())).collect()
}

fn serve(store: Store, bind: &str) -> Result<u8, Fatal> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Fatal::setup(format!("cannot start runtime: {e}")))?;
    let state = AppState::new(Arc::new(store));
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| Fatal::setup(format!("cannot bind {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Fatal::setup(e.to_string()))?;
        tracing::info!("listening on http://{addr}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        };
        api::serve(listener, state, shutdown).await.map_err(|e| Fatal::setup(format!("server error: {e}")))
    })?;
    Ok(exit::OK)
}
