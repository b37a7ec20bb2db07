//! `pipereuse` command line: mining, recommendations, replay, an interactive session and the service.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pipereuse_core::ingest::{export_rules, load_history, HistoryFormat, IngestError, RuleExport};
use pipereuse_core::model::{DatasetId, ModelError, ModuleId, RawRun};
use pipereuse_core::recommend::{ReuseSuggestion, StoreDecision};
use pipereuse_core::replay::{replay, Policy, ReplayError, ReplayReport};
use pipereuse_core::store::{load_manifest, MemoryBlobStore, StoreError};
use pipereuse_core::MiningOptions;
use pipereuse_service::{Engine, Service, ServiceConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pipereuse", version, about = "Recommend which pipeline intermediates to store and reuse")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine rules from a usage history and print the rule export document.
    Mine(MineArgs),
    /// Reuse suggestions or a store decision for one pipeline.
    #[command(subcommand)]
    Recommend(RecommendCommand),
    /// Replay the history through a storing policy and report gain/loss per timeframe.
    Replay(ReplayArgs),
    /// Interactive pipeline building: enter module tokens, get suggestions after each.
    Session(SessionArgs),
    /// Serve the JSON API (and the builder UI when --ui-dir is given).
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum RecommendCommand {
    /// Stored intermediates a pipeline under construction could start from.
    Reuse(ReuseArgs),
    /// Where to materialize intermediates of a completed pipeline (dry run).
    Store(StoreArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Lines,
    Dsl,
}

impl From<InputFormat> for HistoryFormat {
    fn from(f: InputFormat) -> Self {
        match f {
            InputFormat::Lines => HistoryFormat::Lines,
            InputFormat::Dsl => HistoryFormat::Dsl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Risp,
    StoreAll,
    StoreNone,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Risp => Policy::Risp,
            PolicyArg::StoreAll => Policy::StoreAll,
            PolicyArg::StoreNone => Policy::StoreNone,
        }
    }
}

#[derive(Debug, Args)]
pub struct HistoryArgs {
    /// Usage history file (`.jsonl` line records or `.dsl` dash notation).
    #[arg(long)]
    pub history: PathBuf,
    /// Count the complete pipeline as an itemset too.
    #[arg(long)]
    pub include_full: bool,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub history: HistoryArgs,
    /// History format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<InputFormat>,
    /// Write the document here instead of standard out.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format; JSON when redirected, a table on a terminal.
    #[arg(long, value_enum)]
    pub emit: Option<Emit>,
}

#[derive(Debug, Args)]
pub struct ReuseArgs {
    #[command(flatten)]
    pub history: HistoryArgs,
    #[arg(long, value_enum)]
    pub history_format: Option<InputFormat>,
    #[arg(long)]
    pub dataset: String,
    /// Modules already in the pipeline, comma separated.
    #[arg(long, default_value = "")]
    pub prefix: String,
    /// Manifest to flag stored intermediates against. Without it, the storing policy is
    /// replayed over the history and its decisions are used.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = pipereuse_service::DEFAULT_TOP_K as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub top: u64,
    #[arg(long, value_enum)]
    pub emit: Option<Emit>,
}

#[derive(Debug, Args)]
pub struct StoreArgs {
    #[command(flatten)]
    pub history: HistoryArgs,
    #[arg(long, value_enum)]
    pub history_format: Option<InputFormat>,
    #[arg(long)]
    pub dataset: String,
    /// The completed pipeline, comma separated.
    #[arg(long)]
    pub pipeline: String,
    #[arg(long, value_enum)]
    pub emit: Option<Emit>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub history: HistoryArgs,
    #[arg(long, value_enum)]
    pub history_format: Option<InputFormat>,
    #[arg(long, value_enum, default_value = "risp")]
    pub policy: PolicyArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format; JSON when redirected, a table on a terminal.
    #[arg(long, value_enum)]
    pub format: Option<Emit>,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    #[command(flatten)]
    pub history: HistoryArgs,
    #[arg(long, value_enum)]
    pub history_format: Option<InputFormat>,
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = pipereuse_service::DEFAULT_TOP_K as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub top: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    #[command(flatten)]
    pub history: HistoryArgs,
    #[arg(long, value_enum)]
    pub history_format: Option<InputFormat>,
    #[arg(long)]
    pub store_dir: PathBuf,
    /// Directory holding the builder UI bundle, served at `/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "risp")]
    pub policy: PolicyArg,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    History(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Service(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::Usage(e.to_string())
    }
}

/// Standard streams for one invocation.
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
    /// Picks the table format when no explicit format is requested.
    pub stdout_is_terminal: bool,
}

/// Parses `argv` (including the program name) and runs it; returns the exit status.
pub fn run_cli<I, T>(argv: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = io.stdout.write_all(rendered.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = io.stderr.write_all(rendered.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, io) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(io.stderr, "pipereuse: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command, io: &mut Io<'_>) -> Result<(), CliError> {
    match command {
        Command::Mine(args) => mine(args, io),
        Command::Recommend(RecommendCommand::Reuse(args)) => reuse(args, io),
        Command::Recommend(RecommendCommand::Store(args)) => store(args, io),
        Command::Replay(args) => replay_cmd(args, io),
        Command::Session(args) => session(args, io),
        Command::Serve(args) => serve(args, io),
    }
}

fn options(h: &HistoryArgs) -> MiningOptions {
    MiningOptions {
        include_full_pipeline: h.include_full,
    }
}

fn read_history(path: &Path, format: Option<InputFormat>) -> Result<pipereuse_core::History, CliError> {
    Ok(load_history(path, format.map(Into::into))?)
}

fn emit_or_default(emit: Option<Emit>, io: &Io<'_>) -> Emit {
    emit.unwrap_or(if io.stdout_is_terminal { Emit::Table } else { Emit::Json })
}

fn write_output(text: &str, out: Option<&Path>, io: &mut Io<'_>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => io.stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn parse_module_list(raw: &str) -> Result<Vec<ModuleId>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| ModuleId::new(s).map_err(CliError::from))
        .collect()
}

fn engine_for(
    history: pipereuse_core::History,
    options: MiningOptions,
    manifest: Option<&Path>,
) -> Result<Engine, CliError> {
    let blobs = MemoryBlobStore::new();
    match manifest {
        // An explicit manifest is authoritative; only the index and ledger are replayed.
        Some(path) => {
            let manifest = load_manifest(path)?;
            let engine = Engine::bootstrap(history, options, Policy::Risp, manifest.clone(), &blobs)?;
            Ok(engine.with_manifest(manifest))
        }
        None => Ok(Engine::bootstrap(history, options, Policy::Risp, Default::default(), &blobs)?),
    }
}

fn mine(args: MineArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let history = read_history(&args.history.history, args.format)?;
    let index = pipereuse_core::build_index(&history, options(&args.history));
    let doc = export_rules(&index);
    let emit = match (args.emit, &args.out) {
        (Some(e), _) => e,
        (None, Some(_)) => Emit::Json,
        (None, None) => emit_or_default(None, io),
    };
    let text = match emit {
        Emit::Json => doc.to_json(),
        Emit::Csv => rules_csv(&doc),
        Emit::Table => rules_table(&doc),
    };
    write_output(&text, args.out.as_deref(), io)
}

fn reuse(args: ReuseArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let dataset = DatasetId::new(args.dataset.as_str())?;
    let prefix = parse_module_list(&args.prefix)?;
    let history = read_history(&args.history.history, args.history_format)?;
    let engine = engine_for(history, options(&args.history), args.manifest.as_deref())?;
    let suggestions = engine.reuse(&dataset, &prefix, args.top as usize);
    let text = match emit_or_default(args.emit, io) {
        Emit::Json => suggestions_json(&suggestions),
        Emit::Csv => suggestions_csv(&suggestions),
        Emit::Table => suggestions_table(&suggestions),
    };
    io.stdout.write_all(text.as_bytes())?;
    Ok(())
}

fn store(args: StoreArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let dataset = DatasetId::new(args.dataset.as_str())?;
    let modules = parse_module_list(&args.pipeline)?;
    let history = read_history(&args.history.history, args.history_format)?;
    let engine = engine_for(history, options(&args.history), None)?;
    let run = engine.prepare(RawRun {
        id: None,
        dataset: dataset.to_string(),
        modules: modules.iter().map(ToString::to_string).collect(),
        seq: None,
    })?;
    let decision = engine.preview_store(&run);
    let text = match emit_or_default(args.emit, io) {
        Emit::Json => decision_json(&decision),
        Emit::Csv | Emit::Table => decision_text(&decision),
    };
    io.stdout.write_all(text.as_bytes())?;
    Ok(())
}

fn replay_cmd(args: ReplayArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let history = read_history(&args.history.history, args.history_format)?;
    let report = replay(&history, args.policy.into(), options(&args.history))?;
    let format = match (args.format, &args.out) {
        (Some(f), _) => f,
        (None, Some(_)) => Emit::Json,
        (None, None) => emit_or_default(None, io),
    };
    let text = match format {
        Emit::Json => report.to_json(),
        Emit::Csv => report.to_csv(),
        Emit::Table => report_table(&report),
    };
    write_output(&text, args.out.as_deref(), io)
}

fn session(args: SessionArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let dataset = DatasetId::new(args.dataset.as_str())?;
    let history = read_history(&args.history.history, args.history_format)?;
    let engine = engine_for(history, options(&args.history), args.manifest.as_deref())?;
    let top = args.top as usize;
    let mut prefix: Vec<ModuleId> = Vec::new();

    writeln!(
        io.stdout,
        "dataset {dataset}; enter module tokens one per line, `back`, `reset`, `done` or `quit`"
    )?;
    print_suggestions(&engine, &dataset, &prefix, top, io)?;
    let mut line = String::new();
    loop {
        line.clear();
        if io.stdin.read_line(&mut line)? == 0 {
            break;
        }
        match line.trim() {
            "" => continue,
            "quit" | "exit" => break,
            "back" => {
                prefix.pop();
            }
            "reset" => prefix.clear(),
            "done" => {
                if prefix.is_empty() {
                    writeln!(io.stdout, "nothing to decide: the pipeline is empty")?;
                    continue;
                }
                let run = engine.prepare(RawRun {
                    id: None,
                    dataset: dataset.to_string(),
                    modules: prefix.iter().map(ToString::to_string).collect(),
                    seq: None,
                })?;
                write!(io.stdout, "{}", decision_text(&engine.preview_store(&run)))?;
                prefix.clear();
            }
            token => match ModuleId::new(token) {
                Ok(m) => prefix.push(m),
                Err(e) => {
                    writeln!(io.stderr, "{e}")?;
                    continue;
                }
            },
        }
        print_suggestions(&engine, &dataset, &prefix, top, io)?;
    }
    Ok(())
}

fn print_suggestions(
    engine: &Engine,
    dataset: &DatasetId,
    prefix: &[ModuleId],
    top: usize,
    io: &mut Io<'_>,
) -> Result<(), CliError> {
    let shown: Vec<&str> = prefix.iter().map(ModuleId::as_str).collect();
    writeln!(io.stdout, "pipeline: {dataset}: {}", shown.join("-"))?;
    let suggestions = engine.reuse(dataset, prefix, top);
    if suggestions.is_empty() {
        writeln!(io.stdout, "no suggestions")?;
    } else {
        write!(io.stdout, "{}", suggestions_table(&suggestions))?;
    }
    Ok(())
}

fn serve(args: ServeArgs, io: &mut Io<'_>) -> Result<(), CliError> {
    let service = Service::open(ServiceConfig {
        history_path: Some(args.history.history.clone()),
        history_format: args.history_format.map(Into::into),
        store_dir: Some(args.store_dir),
        ui_dir: args.ui_dir,
        options: options(&args.history),
        policy: args.policy.into(),
    })
    .map_err(|e| CliError::Service(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new()?;
    let stderr = &mut *io.stderr;
    runtime.block_on(pipereuse_service::http::serve(Arc::new(service), args.addr, |addr| {
        let _ = writeln!(stderr, "listening on http://{addr}");
    }))?;
    Ok(())
}

fn suggestions_json(suggestions: &[ReuseSuggestion]) -> String {
    let docs: Vec<pipereuse_service::api::SuggestionDoc> = suggestions.iter().map(Into::into).collect();
    let mut out = serde_json::to_string_pretty(&serde_json::json!({ "suggestions": docs })).expect("serializes");
    out.push('\n');
    out
}

fn decision_json(decision: &StoreDecision) -> String {
    let doc = pipereuse_service::api::DecisionDoc::from(decision);
    let mut out = serde_json::to_string_pretty(&doc).expect("serializes");
    out.push('\n');
    out
}

fn decision_text(decision: &StoreDecision) -> String {
    let mut out = format!("store decision: {}\n", decision.mode.as_str());
    if decision.store_points.is_empty() {
        out.push_str("  (no store points)\n");
    }
    for p in &decision.store_points {
        let mods: Vec<&str> = p.prefix.iter().map(ModuleId::as_str).collect();
        let _ = writeln!(out, "  store {}/{}", p.dataset, mods.join("-"));
    }
    out
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn rules_rows(doc: &RuleExport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (dataset, d) in &doc.datasets {
        for (i, r) in d.rules.iter().enumerate() {
            rows.push(vec![
                dataset.clone(),
                (i + 1).to_string(),
                r.consequent.join("-"),
                r.support.to_string(),
                format!("{}/{}", r.confidence.num, r.confidence.den),
            ]);
        }
    }
    rows
}

fn rules_table(doc: &RuleExport) -> String {
    table(&["dataset", "rank", "consequent", "support", "confidence"], &rules_rows(doc))
}

fn rules_csv(doc: &RuleExport) -> String {
    csv_text(&["dataset", "rank", "consequent", "support", "confidence"], &rules_rows(doc))
}

fn suggestion_rows(suggestions: &[ReuseSuggestion]) -> Vec<Vec<String>> {
    suggestions
        .iter()
        .enumerate()
        .map(|(i, s)| {
            vec![
                (i + 1).to_string(),
                pipereuse_core::model::join_modules(&s.rule.consequent),
                s.stats.support.to_string(),
                s.stats.confidence().to_string(),
                if s.stored { "yes" } else { "no" }.to_owned(),
                s.store_key.as_ref().map(|k| k.canonical()).unwrap_or_default(),
            ]
        })
        .collect()
}

fn suggestions_table(suggestions: &[ReuseSuggestion]) -> String {
    table(&["rank", "consequent", "support", "confidence", "stored", "key"], &suggestion_rows(suggestions))
}

fn suggestions_csv(suggestions: &[ReuseSuggestion]) -> String {
    csv_text(&["rank", "consequent", "support", "confidence", "stored", "key"], &suggestion_rows(suggestions))
}

fn report_table(report: &ReplayReport) -> String {
    let rows: Vec<Vec<String>> = report
        .frames
        .iter()
        .map(|f| {
            vec![
                f.seq.to_string(),
                f.gain.to_string(),
                f.loss_waste.to_string(),
                f.loss_miss.to_string(),
                f.loss.to_string(),
                f.no_effect.to_string(),
                f.ratio.map(|r| r.to_string()).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let mut out = format!("policy {}\n", report.policy);
    out.push_str(&table(&["seq", "gain", "lossWaste", "lossMiss", "loss", "noEffect", "ratio"], &rows));
    out
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for row in rows {
        w.write_record(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}
