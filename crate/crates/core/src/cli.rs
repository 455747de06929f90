//! The `consensus-lab` command line.
//!
//! Exit codes: 0 when every property holds or the search is clean, 1 on a
//! usage or input error, 2 when a violation is found.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::checker::{check, Agreement, Validity, Verdict};
use crate::explorer::{
    explore, Choice, ExploreSpec, Outcome, DEFAULT_MAX_BYZ_MESSAGES, DEFAULT_MAX_STEPS, DEFAULT_MAX_VIEW,
};
use crate::quorum::{check_fab_quorum_intersection, check_hbft_quorum_contrast, MAX_QUORUM_F};
use crate::scenario::{run_scenario_with, step_limit_from_env, Run, ScenarioFile};
use crate::types::{Protocol, View};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_VIOLATION: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "consensus-lab",
    version,
    about = "Deterministic simulation lab for two-step BFT view changes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file and check Agreement and Validity.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Write the trace as JSON lines, followed by the verdict record.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the verdict as JSON.
        #[arg(long)]
        verdict: Option<PathBuf>,
        /// Print a readable message-flow narrative before the verdict.
        #[arg(long)]
        pretty: bool,
    },
    /// Search bounded schedules for an Agreement violation.
    Explore {
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long)]
        f: usize,
        /// Cluster size; the protocol minimum when omitted.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
        max_steps: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_BYZ_MESSAGES)]
        max_byz_messages: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_VIEW.0)]
        max_view: u64,
        /// Where to write the witness scenario.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Expand every state, even one already seen.
        #[arg(long)]
        no_dedup: bool,
    },
    /// Enumerate certificates for the quorum-intersection argument.
    CheckQuorum {
        #[arg(long)]
        f: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Hbft,
    Fab,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Protocol {
        match p {
            ProtocolArg::Hbft => Protocol::Hbft,
            ProtocolArg::Fab => Protocol::Fab,
        }
    }
}

/// Parses the process arguments and runs the command.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { EXIT_OK });
        }
    };
    ExitCode::from(execute(&cli.command))
}

/// Runs one command, printing to stdout and stderr; returns the exit code.
pub fn execute(command: &Command) -> u8 {
    let result = match command {
        Command::Run {
            scenario,
            trace,
            verdict,
            pretty,
        } => cmd_run(scenario, trace.as_deref(), verdict.as_deref(), *pretty),
        Command::Explore {
            protocol,
            f,
            n,
            max_steps,
            max_byz_messages,
            max_view,
            out,
            no_dedup,
        } => {
            let protocol = Protocol::from(*protocol);
            ExploreSpec::new(protocol, *f, n.unwrap_or_else(|| protocol.min_replicas(*f)))
                .map_err(|e| e.to_string())
                .and_then(|mut spec| {
                    spec.max_steps = *max_steps;
                    spec.max_byz_messages = *max_byz_messages;
                    spec.max_view = View(*max_view);
                    spec.dedup = !*no_dedup;
                    cmd_explore(&spec, out.as_deref())
                })
        }
        Command::CheckQuorum { f } => cmd_check_quorum(*f),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            EXIT_INPUT
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn cmd_run(
    scenario: &Path,
    trace: Option<&Path>,
    verdict: Option<&Path>,
    pretty: bool,
) -> Result<u8, String> {
    let file = ScenarioFile::load(scenario).map_err(|e| format!("{}: {e}", scenario.display()))?;
    let limit = step_limit_from_env().map_err(|e| e.to_string())?;
    let run = run_scenario_with(&file, limit).map_err(|e| format!("{}: {e}", scenario.display()))?;
    let outcome = check(&run.trace, &run.config);
    let verdict_line = outcome.to_json();
    if let Some(path) = trace {
        write_file(path, &format!("{}{verdict_line}\n", run.trace.to_jsonl()))?;
    }
    if let Some(path) = verdict {
        write_file(path, &format!("{verdict_line}\n"))?;
    }
    if pretty {
        print!("{}", narrative(&file, &run, &outcome));
    }
    println!("{verdict_line}");
    Ok(if outcome.holds() { EXIT_OK } else { EXIT_VIOLATION })
}

/// A readable account of a run: one line per trace record, then the
/// verdict in words.
pub fn narrative(file: &ScenarioFile, run: &Run, verdict: &Verdict) -> String {
    let mut s = String::new();
    let config = &run.config;
    let _ = writeln!(
        s,
        "== {} ({} f={} n={} byzantine={{{}}})",
        file.name.as_deref().unwrap_or("scenario"),
        config.protocol(),
        config.f(),
        config.n(),
        config
            .byzantine()
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    if let Some(d) = &file.description {
        let _ = writeln!(s, "   {d}");
    }
    for r in &run.trace.records {
        let _ = writeln!(s, "{r}");
    }
    match &verdict.agreement {
        Agreement::Holds => {
            let _ = writeln!(s, "agreement: holds");
        }
        Agreement::Violated { witness: [a, b] } => {
            let _ = writeln!(
                s,
                "agreement: VIOLATED, {} committed {} in {} but {} committed {} in {}",
                a.replica, a.value, a.view, b.replica, b.value, b.view
            );
        }
    }
    match &verdict.validity {
        Validity::Holds => {
            let _ = writeln!(s, "validity: holds");
        }
        Validity::Violated { witness } => {
            let _ = writeln!(
                s,
                "validity: VIOLATED, {} committed {} which no primary proposed",
                witness.replica, witness.value
            );
        }
    }
    if verdict.metadata.step_limit_exceeded {
        let _ = writeln!(s, "note: the step limit cut the run short");
    }
    s
}

pub fn describe_choice(c: &Choice) -> String {
    match c {
        Choice::Inject { from, to, payload } => format!("{from} (Byzantine) sends {payload} to {to}"),
        Choice::Deliver { from, to, payload } => format!("deliver {payload} from {from} to {to}"),
        Choice::Timeout { replica, view } => format!("{replica} times out in {view}"),
    }
}

fn cmd_explore(spec: &ExploreSpec, out: Option<&Path>) -> Result<u8, String> {
    let result = explore(spec).map_err(|e| e.to_string())?;
    println!(
        "explore {} f={} n={} max_steps={} max_byz_messages={} max_view={} dedup={}",
        spec.config.protocol(),
        spec.config.f(),
        spec.config.n(),
        spec.max_steps,
        spec.max_byz_messages,
        spec.max_view.0,
        spec.dedup
    );
    let stats = serde_json::to_string(&result.stats).expect("stats serialize");
    match &result.outcome {
        Outcome::NoneWithinBounds => {
            println!("NONE_WITHIN_BOUNDS");
            println!("stats: {stats}");
            Ok(EXIT_OK)
        }
        Outcome::Found(w) => {
            println!("FOUND");
            println!("stats: {stats}");
            println!(
                "minimized witness: {} choices (search found {})",
                w.minimized.len(),
                w.found.len()
            );
            for (i, c) in w.minimized.iter().enumerate() {
                println!("  {:>2}. {}", i + 1, describe_choice(c));
            }
            if let Agreement::Violated { witness: [a, b] } = &w.verdict.agreement {
                println!(
                    "conflict: {} commits {} in {}, {} commits {} in {}",
                    a.replica, a.value, a.view, b.replica, b.value, b.view
                );
            }
            match out {
                Some(path) => {
                    write_file(path, &format!("{}\n", w.scenario.to_json_pretty()))?;
                    println!("witness scenario written to {}", path.display());
                }
                None => println!("pass --out PATH to save the witness scenario"),
            }
            Ok(EXIT_VIOLATION)
        }
    }
}

fn cmd_check_quorum(f: usize) -> Result<u8, String> {
    if f > MAX_QUORUM_F {
        return Err(format!(
            "refusing --f {f}: exhaustive enumeration is limited to f <= {MAX_QUORUM_F}"
        ));
    }
    let fab = check_fab_quorum_intersection(f).map_err(|e| e.to_string())?;
    let hbft = check_hbft_quorum_contrast(f).map_err(|e| e.to_string())?;
    print!("{fab}");
    print!("{hbft}");
    // with f = 0 there is no Byzantine replica to split a certificate
    let contrast_ok = hbft.counterexamples > 0 || f == 0;
    if fab.counterexamples == 0 && contrast_ok {
        println!("quorum check: ok");
        Ok(EXIT_OK)
    } else {
        println!(
            "quorum check: unexpected result (FaB counterexamples={}, hBFT counterexamples={})",
            fab.counterexamples, hbft.counterexamples
        );
        Ok(EXIT_VIOLATION)
    }
}
