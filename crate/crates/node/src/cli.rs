//! Command-line front end. Exit codes: 0 success or PASS, 1 FAIL or
//! violations, 2 usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use subjektiv_core::analysis::{analyze, default_starters, Analysis, ExploreBounds};
use subjektiv_core::engine::{logical, to_jsonl, Choice};
use subjektiv_core::model::ValidModel;
use subjektiv_core::patterns::{self, all_cases, PatternCase};
use subjektiv_core::pdl;
use subjektiv_core::tasks::{run_scripted, DeciderScript, DefaultPolicy, LocalCluster};

use crate::cluster::run_case_distributed;
use crate::config::NodeConfig;

#[derive(Parser, Debug)]
#[command(
    name = "subjektiv",
    version,
    about = "Subject-oriented process nodes and tools"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate a model; prints violations.
    Validate { file: PathBuf },
    /// Print the canonical form of a model.
    Fmt {
        file: PathBuf,
        /// Rewrite the file in place.
        #[arg(long)]
        write: bool,
        /// Fail if the file is not already canonical.
        #[arg(long, conflicts_with = "write")]
        check: bool,
    },
    /// Run a model under a decider script on a virtual clock and print the
    /// logical trace.
    Run {
        file: PathBuf,
        #[arg(long)]
        script: Option<PathBuf>,
        /// Extra instants to advance the clock to.
        #[arg(long, num_args = 1..)]
        advance: Vec<u64>,
        /// `Subject=count`, repeatable. Overrides the script's starters.
        #[arg(long = "starter", value_parser = parse_starter)]
        starters: Vec<(String, u32)>,
        /// Include transport records.
        #[arg(long)]
        full: bool,
    },
    /// Explore the composed state space for deadlocks and message leaks.
    Analyze {
        file: PathBuf,
        #[arg(long = "starter", value_parser = parse_starter)]
        starters: Vec<(String, u32)>,
        #[command(flatten)]
        bounds: BoundArgs,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run a node.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Start an instance on a running node.
    Start {
        process: String,
        /// Node URL, e.g. http://127.0.0.1:8471
        #[arg(long)]
        on: String,
        #[arg(long = "starter", value_parser = parse_starter)]
        starters: Vec<(String, u32)>,
    },
    /// List or complete tasks on a running node.
    Tasks {
        #[command(subcommand)]
        action: TasksAction,
    },
    /// The built-in pattern corpus.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[arg(long, default_value_t = ExploreBounds::default().max_instances)]
    max_instances: u32,
    #[arg(long, default_value_t = ExploreBounds::default().pool_bound)]
    pool_bound: usize,
    #[arg(long, default_value_t = ExploreBounds::default().max_states)]
    max_states: usize,
}

#[derive(Subcommand, Debug)]
enum TasksAction {
    List {
        #[arg(long)]
        on: String,
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        instance: Option<String>,
    },
    Complete {
        id: String,
        #[arg(long)]
        on: String,
        /// JSON choice, e.g. '{"branch":"OK"}'
        #[arg(long)]
        choice: String,
    },
}

#[derive(Subcommand, Debug)]
enum CorpusAction {
    /// Run cases and compare them with their goldens.
    Run {
        /// A case id such as `racing.latest`; all cases when omitted.
        name: Option<String>,
        /// Include every variant of the named pattern.
        #[arg(long)]
        variants: bool,
        /// Run across two local nodes.
        #[arg(long)]
        distributed: bool,
        /// Rewrite goldens from the current engine instead of comparing.
        #[arg(long, conflicts_with = "distributed")]
        bless: bool,
        /// Run each case this many times and require identical traces.
        #[arg(long, default_value_t = 1)]
        repeat: u32,
        #[arg(long, default_value = default_corpus_dir())]
        dir: PathBuf,
    },
    /// List case ids.
    List,
}

fn default_corpus_dir() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus")
}

fn parse_starter(s: &str) -> Result<(String, u32), String> {
    let (name, n) = s
        .split_once('=')
        .ok_or_else(|| format!("expected Subject=count, found `{s}`"))?;
    let n = n.parse().map_err(|_| format!("bad count in `{s}`"))?;
    Ok((name.to_string(), n))
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

type Outcome = Result<i32, String>;

fn run(command: Command) -> Outcome {
    match command {
        Command::Validate { file } => validate(&file),
        Command::Fmt { file, write, check } => fmt(&file, write, check),
        Command::Run {
            file,
            script,
            advance,
            starters,
            full,
        } => run_file(&file, script.as_deref(), advance, starters, full),
        Command::Analyze {
            file,
            starters,
            bounds,
            json,
        } => analyze_file(&file, starters, bounds, json),
        Command::Serve { config } => serve(&config),
        Command::Start {
            process,
            on,
            starters,
        } => start(&process, &on, starters),
        Command::Tasks { action } => tasks(action),
        Command::Corpus { action } => corpus(action),
    }
}

/// Reads and validates a model. Problems are printed and yield `Err(1)`.
fn load(file: &Path) -> Result<ValidModel, i32> {
    let shown = file.display();
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{shown}: {e}");
            return Err(1);
        }
    };
    let model = match pdl::parse(&text) {
        Ok(m) => m,
        Err(e) => {
            println!("{shown}:{e}");
            return Err(1);
        }
    };
    match model.into_valid() {
        Ok(m) => {
            for w in &m.warnings().violations {
                eprintln!("{shown}: {w}");
            }
            Ok(m)
        }
        Err(report) => {
            for v in &report.violations {
                println!("{shown}: {v}");
            }
            Err(1)
        }
    }
}

fn validate(file: &Path) -> Outcome {
    Ok(load(file).err().unwrap_or(0))
}

fn fmt(file: &Path, write: bool, check: bool) -> Outcome {
    let model = match load(file) {
        Ok(m) => m,
        Err(code) => return Ok(code),
    };
    let canonical = pdl::serialize(&model);
    if check {
        let text = std::fs::read_to_string(file).map_err(|e| e.to_string())?;
        if text != canonical {
            println!("{}: not in canonical form", file.display());
            return Ok(1);
        }
    } else if write {
        std::fs::write(file, canonical).map_err(|e| e.to_string())?;
    } else {
        print!("{canonical}");
    }
    Ok(0)
}

fn run_file(
    file: &Path,
    script: Option<&Path>,
    advance: Vec<u64>,
    starters: Vec<(String, u32)>,
    full: bool,
) -> Outcome {
    let model = match load(file) {
        Ok(m) => m,
        Err(code) => return Ok(code),
    };
    let mut script = match script {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            DeciderScript::from_json(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => DeciderScript {
            default: Some(DefaultPolicy::FirstBranch),
            ..DeciderScript::default()
        },
    };
    if !starters.is_empty() {
        script.starters = starters.into_iter().collect();
    }
    if script.starters.is_empty() {
        script.starters = default_starters(&model);
    }
    script.advance.extend(advance);
    let mut cluster = LocalCluster::new(model);
    match run_scripted(&mut cluster, &script) {
        Ok(out) => {
            let trace = if full { &out.full_trace } else { &out.trace };
            print!("{}", to_jsonl(trace));
            for (agent, status) in &out.statuses {
                eprintln!("{agent}: {}", json!(status).as_str().unwrap_or_default());
            }
            Ok(0)
        }
        Err(e) => {
            println!("{}: {e}", e.code());
            Ok(1)
        }
    }
}

fn analyze_file(file: &Path, starters: Vec<(String, u32)>, b: BoundArgs, as_json: bool) -> Outcome {
    let model = match load(file) {
        Ok(m) => m,
        Err(code) => return Ok(code),
    };
    let starters: BTreeMap<String, u32> = if starters.is_empty() {
        default_starters(&model)
    } else {
        starters.into_iter().collect()
    };
    let bounds = ExploreBounds {
        max_instances: b.max_instances,
        pool_bound: b.pool_bound,
        max_states: b.max_states,
    };
    let report = analyze(&model, &starters, bounds);
    if as_json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?
        );
    } else {
        print!("{}", verdict(&report));
    }
    Ok(if report.deadlocks.is_empty() { 0 } else { 1 })
}

fn verdict(a: &Analysis) -> String {
    let s = &a.stats;
    let mut out = format!(
        "{}: {} states, {} transitions, {} terminal{}\n",
        a.process,
        s.states,
        s.transitions,
        s.terminal,
        if s.truncated { " (bounds hit)" } else { "" }
    );
    if a.deadlocks.is_empty() {
        out.push_str("no deadlock\n");
    } else {
        out.push_str(&format!("{} deadlock(s)\n", a.deadlocks.len()));
        for d in &a.deadlocks {
            let stuck: Vec<String> = d
                .state
                .agents
                .iter()
                .filter(|(k, _)| d.state.stuck_agents().contains(&k.as_str()))
                .map(|(k, v)| format!("{k} in `{}`", v.state))
                .collect();
            out.push_str(&format!(
                "  {} after {} moves\n",
                stuck.join(", "),
                d.path.len()
            ));
        }
    }
    if a.leaks.is_empty() {
        out.push_str("no message leak\n");
    } else {
        out.push_str(&format!(
            "{} terminal state(s) leave messages behind, at most {}\n",
            a.leaks.len(),
            a.max_residue
        ));
    }
    out
}

fn serve(config: &Path) -> Outcome {
    let cfg = NodeConfig::load(config).map_err(|e| format!("{}: {e}", config.display()))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let running = crate::server::serve(&cfg)
            .await
            .map_err(|e| e.to_string())?;
        for s in &running.skipped {
            eprintln!("warning: skipped {s}");
        }
        println!(
            "{} serving http://{} bus {}",
            cfg.company, running.http_addr, running.bus_addr
        );
        running.wait().await;
        Ok(0)
    })
}

fn http() -> Result<reqwest::blocking::Client, String> {
    reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(30))
        .build()
        .map_err(|e| e.to_string())
}

/// Prints the body; non-success statuses exit 1.
fn report(resp: reqwest::blocking::Response) -> Outcome {
    let ok = resp.status().is_success();
    let body = resp.text().map_err(|e| e.to_string())?;
    let pretty = serde_json::from_str::<Value>(&body)
        .ok()
        .and_then(|v| serde_json::to_string_pretty(&v).ok())
        .unwrap_or(body);
    if ok {
        println!("{pretty}");
        Ok(0)
    } else {
        eprintln!("{pretty}");
        Ok(1)
    }
}

fn start(process: &str, on: &str, starters: Vec<(String, u32)>) -> Outcome {
    let starters: BTreeMap<String, u32> = starters.into_iter().collect();
    let resp = http()?
        .post(format!("{}/instances", on.trim_end_matches('/')))
        .json(&json!({"process": process, "starters": starters}))
        .send()
        .map_err(|e| e.to_string())?;
    report(resp)
}

fn tasks(action: TasksAction) -> Outcome {
    let client = http()?;
    match action {
        TasksAction::List {
            on,
            subject,
            instance,
        } => {
            let mut query = Vec::new();
            if let Some(s) = subject {
                query.push(("subject", s));
            }
            if let Some(i) = instance {
                query.push(("instance", i));
            }
            let resp = client
                .get(format!("{}/tasks", on.trim_end_matches('/')))
                .query(&query)
                .send()
                .map_err(|e| e.to_string())?;
            report(resp)
        }
        TasksAction::Complete { id, on, choice } => {
            let choice: Choice =
                serde_json::from_str(&choice).map_err(|e| format!("--choice: {e}"))?;
            let resp = client
                .post(format!("{}/tasks/{id}/complete", on.trim_end_matches('/')))
                .json(&json!({ "choice": choice }))
                .send()
                .map_err(|e| e.to_string())?;
            report(resp)
        }
    }
}

fn select(name: Option<&str>, variants: bool) -> Result<Vec<PatternCase>, String> {
    let all = all_cases();
    let Some(name) = name else {
        return Ok(all.into_iter().filter(|c| c.script.is_some()).collect());
    };
    let exact = patterns::case(name).map_err(|e| e.to_string())?;
    if !variants {
        return Ok(vec![exact]);
    }
    Ok(all
        .into_iter()
        .filter(|c| c.name == exact.name && c.script.is_some())
        .collect())
}

fn corpus(action: CorpusAction) -> Outcome {
    match action {
        CorpusAction::List => {
            for c in all_cases() {
                let kind = match (&c.script, &c.golden) {
                    (Some(_), Some(_)) => "golden",
                    (Some(_), None) => "script",
                    _ => "model",
                };
                println!("{}\t{kind}", c.id());
            }
            Ok(0)
        }
        CorpusAction::Run {
            name,
            variants,
            distributed,
            bless,
            repeat,
            dir,
        } => {
            let cases = select(name.as_deref(), variants)?;
            let mut failed = 0;
            for c in &cases {
                if bless {
                    if c.golden.is_none() {
                        continue;
                    }
                    let text = patterns::bless(c).map_err(|e| e.to_string())?;
                    let path = dir.join(format!("{}.golden.jsonl", c.id()));
                    std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
                    println!("BLESS {}", c.id());
                    continue;
                }
                let line = run_repeated(c, distributed, repeat.max(1))?;
                if !line.starts_with("PASS") {
                    failed += 1;
                }
                println!("{line}");
            }
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn run_repeated(c: &PatternCase, distributed: bool, repeat: u32) -> Result<String, String> {
    let mut first: Option<String> = None;
    let mut line = String::new();
    for i in 0..repeat {
        let report = if distributed {
            run_case_distributed(c).map_err(|e| e.to_string())?
        } else {
            patterns::run_case(c).map_err(|e| e.to_string())?
        };
        line = report.line();
        if !report.passed() {
            return Ok(line);
        }
        let text = report
            .outcome
            .as_ref()
            .map(|o| to_jsonl(&logical(&o.full_trace)))
            .unwrap_or_default();
        match &first {
            None => first = Some(text),
            Some(f) if *f != text => {
                return Ok(format!("FAIL {}: run {} differs from run 1", c.id(), i + 1))
            }
            Some(_) => {}
        }
    }
    Ok(line)
}
