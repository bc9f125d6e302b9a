use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value as Json};

use cascom::bundled;
use cascom::cost::PriorityVector;
use cascom::kb::{load_kb, KnowledgeBase, ParseMode};
use cascom::planner::{Solution, SolveOptions, DEFAULT_MAX_DEPTH, DEFAULT_MAX_SOLUTIONS};
use cascom::runtime::{benchmark_modes, generate, to_xml, ExecMode, Executor, Projection, RunLimit};
use cascom::service::{self, rank_grounded, AppState, ContextSelector, DeployRequest, ServiceConfig, ServiceError, Session};
use cascom::synth;

#[derive(Parser)]
#[command(name = "cascom", version, about = "Context-aware sensor configuration")]
struct Cli {
    /// Knowledge base file; the bundled example KB when omitted.
    #[arg(long, env = "CASCOM_KB", global = true)]
    kb: Option<PathBuf>,
    /// Indented JSON output.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge base maintenance.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Interactive question-and-answer configuration on the terminal.
    Wizard {
        #[command(flatten)]
        solve: SolveArgs,
        /// Records to stream after deployment.
        #[arg(long, default_value_t = 0)]
        records: usize,
    },
    /// Compose, ground and rank solutions for a task.
    Solve {
        #[arg(long)]
        task: String,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Re-rank solutions (output of `solve`) under new priorities.
    Rank {
        /// JSON file with {"weights": {...}}.
        #[arg(long)]
        priorities: PathBuf,
        /// Solutions file; stdin when omitted.
        #[arg(long)]
        solutions: Option<PathBuf>,
    },
    /// Generate a pipeline for a solution and stream its records to stdout.
    Deploy {
        /// A solution, or the output of `solve` (its first solution is used).
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value_t = 10)]
        records: usize,
        #[arg(long, value_enum, default_value_t = Mode::Precompiled)]
        mode: Mode,
        /// Also write the virtual sensor document here.
        #[arg(long)]
        xml: Option<PathBuf>,
    },
    /// Generate a synthetic scaling knowledge base.
    Synthkb {
        #[arg(long)]
        sensors: usize,
        #[arg(long)]
        components: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Performance measurements.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "CASCOM_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        solve: SolveArgs,
    },
}

#[derive(Subcommand)]
enum KbCommand {
    /// Parse and cross-check a KB file.
    Validate {
        file: PathBuf,
        /// Ignore unknown keys.
        #[arg(long)]
        lax: bool,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Load and solve time of synthetic KBs of growing size.
    Scaling {
        #[arg(long, value_delimiter = ',', default_values_t = [1000, 10000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Per-row time of both execution modes over chained reasoning ops.
    Modes {
        #[arg(long, default_value_t = 10)]
        max_ops: usize,
        #[arg(long, default_value_t = 100_000)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
}

#[derive(Args, Clone, Copy)]
struct SolveArgs {
    #[arg(long, env = "CASCOM_MAX_DEPTH", default_value_t = DEFAULT_MAX_DEPTH)]
    max_depth: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_SOLUTIONS)]
    max_solutions: usize,
    /// Only exact unit matches.
    #[arg(long)]
    no_conversions: bool,
}

impl SolveArgs {
    fn options(self) -> SolveOptions {
        SolveOptions { max_depth: self.max_depth, allow_conversions: !self.no_conversions, max_solutions: self.max_solutions }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Precompiled,
    DynamicDispatch,
}

impl From<Mode> for ExecMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Precompiled => ExecMode::Precompiled,
            Mode::DynamicDispatch => ExecMode::DynamicDispatch,
        }
    }
}

/// A domain failure: diagnostics go to stderr, an optional JSON payload to stdout.
struct Failure {
    message: String,
    payload: Option<Json>,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { message: e.to_string(), payload: None }
    }
}

type CliResult = Result<(), Failure>;

fn emit<T: Serialize>(value: &T, pretty: bool) {
    let text = if pretty { serde_json::to_string_pretty(value) } else { serde_json::to_string(value) };
    let _ = writeln!(io::stdout(), "{}", text.expect("output serializes"));
}

fn load(path: Option<&Path>) -> Result<KnowledgeBase, Failure> {
    match path {
        Some(p) => Ok(load_kb(p, ParseMode::Strict)?),
        None => Ok(bundled::use_case_kb()),
    }
}

fn read_json(path: Option<&Path>) -> Result<Json, Failure> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?,
        None => io::read_to_string(io::stdin())?,
    };
    Ok(serde_json::from_str(&text)?)
}

/// Accepts a bare solution, a list of them, or an object with a `solutions` list.
fn solutions_from(doc: Json) -> Result<Vec<Solution>, Failure> {
    let list = match doc {
        Json::Array(items) => items,
        Json::Object(mut map) if map.contains_key("solutions") => match map.remove("solutions") {
            Some(Json::Array(items)) => items,
            _ => return Err("`solutions` must be a list".into()),
        },
        other => vec![other],
    };
    let solutions: Vec<Solution> = list.into_iter().map(serde_json::from_value).collect::<Result<_, _>>()?;
    if solutions.is_empty() {
        return Err("no solutions in input".into());
    }
    Ok(solutions)
}

fn service_failure(e: ServiceError) -> Failure {
    let payload = Some(serde_json::to_value(e.body()).expect("error body serializes"));
    Failure { message: e.to_string(), payload }
}

fn stream(def: &cascom::runtime::PipelineDefinition, records: usize) -> CliResult {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for item in Executor::new(def, RunLimit::Records(records))? {
        if writeln!(out, "{}", item.to_json_line()).is_err() {
            break; // closed pipe
        }
    }
    Ok(())
}

fn cmd_solve(kb: KnowledgeBase, task: &str, args: SolveArgs, pretty: bool) -> CliResult {
    let kb = Arc::new(kb);
    let mut session = Session::new("cli", &kb).map_err(service_failure)?;
    session.select_task(&kb, task).map_err(service_failure)?;
    let view = session.solve(kb, args.options()).map_err(service_failure)?;
    emit(&view, pretty);
    Ok(())
}

fn cmd_rank(kb: KnowledgeBase, priorities: &Path, solutions: Option<&Path>, pretty: bool) -> CliResult {
    let priorities: PriorityVector = serde_json::from_value(read_json(Some(priorities))?)?;
    let solutions = solutions_from(read_json(solutions)?)?;
    let ranked = rank_grounded(&kb, &solutions, &priorities).map_err(service_failure)?;
    emit(&json!({ "priorities": priorities, "solutions": ranked }), pretty);
    Ok(())
}

fn cmd_deploy(kb: KnowledgeBase, solution: &Path, records: usize, mode: Mode, xml: Option<&Path>) -> CliResult {
    let solution = solutions_from(read_json(Some(solution))?)?.remove(0);
    let def = generate(&kb, &solution, &Projection::Required, mode.into())?;
    if let Some(path) = xml {
        std::fs::write(path, to_xml(&def))?;
    }
    stream(&def, records)
}

fn cmd_synthkb(sensors: usize, components: usize, seed: u64, out: Option<&Path>) -> CliResult {
    let text = synth::synth_json(sensors, components, seed);
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_bench_scaling(sizes: &[usize], seed: u64, runs: usize, pretty: bool) -> CliResult {
    let dir = std::env::temp_dir().join(format!("cascom-scaling-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let points: Result<Vec<_>, _> = sizes.iter().map(|&n| synth::scaling_point(n, n, seed, runs, &dir)).collect();
    let _ = std::fs::remove_dir_all(&dir);
    let points = points?;
    let growth = match (points.first(), points.last()) {
        (Some(a), Some(b)) if points.len() > 1 && a.solve_ms > 0.0 => Some(b.solve_ms / a.solve_ms),
        _ => None,
    };
    emit(&json!({ "points": points, "solveGrowth": growth }), pretty);
    Ok(())
}

fn cmd_bench_modes(max_ops: usize, rows: usize, trials: usize, pretty: bool) -> CliResult {
    let results = (1..=max_ops).map(|n| benchmark_modes(n, rows, trials)).collect::<Result<Vec<_>, _>>()?;
    emit(&results, pretty);
    Ok(())
}

fn prompt(msg: &str) {
    eprint!("{msg}");
    let _ = io::stderr().flush();
}

/// Index (1-based) or literal; `None` on an empty line or end of input.
fn read_choice(input: &mut impl BufRead) -> io::Result<Option<String>> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let t = line.trim();
    Ok(if t.is_empty() { None } else { Some(t.to_string()) })
}

fn pick<'a>(choice: &str, options: &'a [String]) -> Option<&'a str> {
    match choice.parse::<usize>() {
        Ok(i) if (1..=options.len()).contains(&i) => Some(&options[i - 1]),
        _ => options.iter().find(|o| o.as_str() == choice).map(String::as_str),
    }
}

/// Drives the session state machine from line-based input: one answer per
/// question (empty line stops the questions), then the task, the solution
/// (empty = best ranked) and the context offers (comma-separated numbers).
fn wizard(kb: Arc<KnowledgeBase>, opts: SolveOptions, input: &mut impl BufRead) -> Result<(Session, DeployRequest), Failure> {
    let mut session = Session::new("wizard", &kb).map_err(service_failure)?;
    while let Some(q) = session.questions(&kb, 1).into_iter().next() {
        eprintln!("{}", q.text);
        for (i, c) in q.choices.iter().enumerate() {
            eprintln!("  {}) {c}", i + 1);
        }
        prompt("> ");
        let Some(choice) = read_choice(input)? else { break };
        let value = pick(&choice, &q.choices).map(str::to_string).unwrap_or(choice);
        if let Err(e) = session.answer(&kb, &q.id, &value) {
            eprintln!("{e}");
        }
    }

    let tasks: Vec<String> = session.tasks(&kb).into_iter().map(|t| t.id).collect();
    eprintln!("Tasks:");
    for (i, t) in tasks.iter().enumerate() {
        eprintln!("  {}) {} {}", i + 1, t, kb.task(t).map(|t| t.title.as_str()).unwrap_or(""));
    }
    prompt("task> ");
    let task = match read_choice(input)? {
        Some(c) => pick(&c, &tasks).map(str::to_string).unwrap_or(c),
        None if tasks.len() == 1 => tasks[0].clone(),
        None => return Err("no task selected".into()),
    };
    session.select_task(&kb, &task).map_err(service_failure)?;
    let view = session.solve(kb.clone(), opts).map_err(service_failure)?;

    let ids: Vec<String> = view.solutions.iter().map(|s| s.canonical_id.clone()).collect();
    eprintln!("Solutions (best first):");
    for (i, s) in view.solutions.iter().enumerate() {
        let cost = s.cost.as_ref().map(|c| c.value).unwrap_or(0.0);
        eprintln!("  {}) {} cost {cost:.4}  {}", i + 1, s.canonical_id, s.expression());
    }
    prompt("solution> ");
    let solution = match read_choice(input)? {
        Some(c) => pick(&c, &ids).map(str::to_string).ok_or(format!("unknown solution {c}"))?,
        None => ids[0].clone(),
    };

    let (_, offers) = session.context_offers(Some(&solution)).map_err(service_failure)?;
    let mut accept = Vec::new();
    if !offers.is_empty() {
        eprintln!("Context offers:");
        for (i, o) in offers.iter().enumerate() {
            eprintln!("  {}) {}.{}", i + 1, o.source, o.property.name);
        }
        prompt("context> ");
        if let Some(line) = read_choice(input)? {
            for part in line.split(',') {
                let i: usize = part.trim().parse().map_err(|_| format!("bad offer number {part:?}"))?;
                let o = offers.get(i.wrapping_sub(1)).ok_or(format!("no offer {i}"))?;
                accept.push(ContextSelector { source: o.source.clone(), property: o.property.name.clone() });
            }
        }
    }
    session.accept_context(Some(&solution), &accept).map_err(service_failure)?;
    Ok((session, DeployRequest::default()))
}

fn cmd_wizard(kb: KnowledgeBase, opts: SolveOptions, records: usize, pretty: bool) -> CliResult {
    let kb = Arc::new(kb);
    let stdin = io::stdin();
    let (mut session, req) = wizard(kb, opts, &mut stdin.lock())?;
    let dep = session.deploy(&req, |d| d.id.clone()).map_err(service_failure)?;
    emit(&json!({ "session": session.view(), "solution": session.chosen(), "definition": dep.definition }), pretty);
    if records > 0 {
        stream(&dep.definition, records)?;
    }
    Ok(())
}

fn cmd_serve(kb_path: Option<PathBuf>, kb: KnowledgeBase, host: &str, port: u16, solve: SolveArgs) -> CliResult {
    let addr: SocketAddr = format!("{host}:{port}").parse()?;
    let config = ServiceConfig { kb_path, solve: solve.options(), ..Default::default() };
    let state = AppState::new(kb, config);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(state, addr))?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let pretty = cli.pretty;
    let kb_path = cli.kb.clone();
    match cli.command {
        Command::Kb { command: KbCommand::Validate { file, lax } } => {
            let mode = if lax { ParseMode::Lax } else { ParseMode::Strict };
            let kb = load_kb(&file, mode)?;
            emit(
                &json!({
                    "valid": true,
                    "sensors": kb.sensors().len(),
                    "components": kb.components().len(),
                    "conversions": kb.conversions().len(),
                    "tasks": kb.tasks().len(),
                    "questions": kb.questions().len(),
                }),
                pretty,
            );
            Ok(())
        }
        Command::Wizard { solve, records } => cmd_wizard(load(kb_path.as_deref())?, solve.options(), records, pretty),
        Command::Solve { task, solve } => cmd_solve(load(kb_path.as_deref())?, &task, solve, pretty),
        Command::Rank { priorities, solutions } => {
            cmd_rank(load(kb_path.as_deref())?, &priorities, solutions.as_deref(), pretty)
        }
        Command::Deploy { solution, records, mode, xml } => {
            cmd_deploy(load(kb_path.as_deref())?, &solution, records, mode, xml.as_deref())
        }
        Command::Synthkb { sensors, components, seed, out } => cmd_synthkb(sensors, components, seed, out.as_deref()),
        Command::Bench { command: BenchCommand::Scaling { sizes, seed, runs } } => cmd_bench_scaling(&sizes, seed, runs, pretty),
        Command::Bench { command: BenchCommand::Modes { max_ops, rows, trials } } => {
            cmd_bench_modes(max_ops, rows, trials, pretty)
        }
        Command::Serve { port, host, solve } => {
            let kb = load(kb_path.as_deref())?;
            cmd_serve(kb_path, kb, &host, port, solve)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let pretty = cli.pretty;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Some(p) = &f.payload {
                emit(p, pretty);
            }
            eprintln!("error: {}", f.message);
            ExitCode::from(1)
        }
    }
}
