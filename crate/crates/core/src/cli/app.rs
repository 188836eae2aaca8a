//! The `negotiate` command.
//!
//! Exit codes: 0 sound or ok, 1 unsound, 2 error or budget exhausted.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::cli::{dot, fixtures, gen, io};
use crate::model::Negotiation;
use crate::semantics::{self, DEFAULT_CAP, SemanticsError};
use crate::state_elim::{self, StateElimError, Summary};
use crate::strategies::{self, ExpStrategy, Verdict};
use crate::structure;

const OK: i32 = 0;
const UNSOUND: i32 = 1;
const ERROR: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "negotiate", version, about = "Analyze negotiation diagrams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and check well-formedness
    Validate { file: PathBuf },
    /// Report determinism and acyclicity
    Classify { file: PathBuf },
    /// Explore the reachability graph
    Reach {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
        /// Print the graph in DOT format
        #[arg(long)]
        dot: bool,
    },
    /// Decide soundness on the reachability graph
    Check {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
    },
    /// Print the summary transformer of every final result
    Summarize {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::States)]
        method: Method,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
    },
    /// Reduce with the strategy matching the negotiation's class
    Reduce {
        file: PathBuf,
        /// Write one line per rule application to this file ("-" for stdout)
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Structural diagnostics
    Diag {
        file: PathBuf,
        #[arg(long)]
        fragments: bool,
        #[arg(long)]
        loops: bool,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
    },
    /// Print the diagram in DOT format
    Dot { file: PathBuf },
    /// Generate a random sound deterministic negotiation
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        agents: usize,
        #[arg(long, default_value_t = 12)]
        max_atoms: usize,
        #[arg(long)]
        acyclic: bool,
        /// Attach random relations over this many states per agent
        #[arg(long)]
        states: Option<usize>,
    },
    /// Print a bundled fixture
    Fixture { name: String },
    /// Demonstrations
    Demo {
        #[command(subcommand)]
        demo: Demo,
    },
}

#[derive(Subcommand, Debug)]
enum Demo {
    /// Contrast two strategies on the exponential family
    Expfam {
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum)]
        strategy: DemoStrategy,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    States,
    Reduce,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DemoStrategy {
    Initial,
    Alternating,
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

macro_rules! say {
    ($w:expr, $($arg:tt)*) => {
        let _ = writeln!($w, $($arg)*);
    };
}

pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ERROR } else { OK };
            if e.use_stderr() {
                say!(err, "{e}");
            } else {
                say!(out, "{e}");
            }
            return code;
        }
    };
    let mut io = Io { out, err };
    match dispatch(cli.command, &mut io) {
        Ok(code) => code,
        Err(msg) => {
            say!(io.err, "error: {msg}");
            ERROR
        }
    }
}

fn load(path: &Path) -> Result<Negotiation, String> {
    io::parse(path).map_err(|e| e.to_string())
}

fn budget_msg(e: &SemanticsError) -> String {
    e.to_string()
}

fn print_summary(out: &mut dyn Write, s: &Summary) {
    for (name, e) in s {
        say!(out, "{name}: {e}");
    }
}

fn dispatch(cmd: Command, io: &mut Io) -> Result<i32, String> {
    match cmd {
        Command::Validate { file } => match io::parse(&file) {
            Ok(n) => {
                say!(
                    io.out,
                    "valid: {} agents, {} atoms, {} outcomes",
                    n.agent_count(),
                    n.atom_count(),
                    n.outcome_count()
                );
                Ok(OK)
            }
            Err(io::ParseError::Invalid(e)) => {
                for v in e.violations() {
                    say!(io.err, "violation: {v}");
                }
                Ok(ERROR)
            }
            Err(e) => Err(e.to_string()),
        },
        Command::Classify { file } => {
            let n = load(&file)?;
            let c = n.classify();
            say!(io.out, "deterministic: {}", c.deterministic);
            say!(io.out, "weakly deterministic: {}", c.weakly_deterministic);
            say!(io.out, "acyclic: {}", c.acyclic);
            say!(io.out, "agents: {}", n.agent_count());
            let det: Vec<&str> = c
                .deterministic_agents
                .iter()
                .map(|&p| n.agents()[p].as_str())
                .collect();
            say!(io.out, "deterministic agents: {}", det.join(","));
            Ok(OK)
        }
        Command::Reach { file, cap, dot } => {
            let n = load(&file)?;
            match semantics::reachability(&n, cap) {
                Ok(rg) => {
                    if dot {
                        let _ = write!(io.out, "{}", dot::reachability_dot(&n, &rg));
                    } else {
                        say!(io.out, "markings: {}", rg.node_count());
                        say!(io.out, "edges: {}", rg.edges.len());
                        say!(io.out, "final reachable: {}", rg.final_node.is_some());
                    }
                    Ok(OK)
                }
                Err(e) => Err(budget_msg(&e)),
            }
        }
        Command::Check { file, cap } => {
            let n = load(&file)?;
            let v = semantics::check_soundness(&n, cap).map_err(|e| budget_msg(&e))?;
            say!(io.out, "{}", v.render(&n));
            Ok(if v.sound { OK } else { UNSOUND })
        }
        Command::Summarize { file, method, cap } => {
            let n = load(&file)?;
            match method {
                Method::States => {
                    let v = semantics::check_soundness(&n, cap).map_err(|e| budget_msg(&e))?;
                    if !v.sound {
                        say!(io.out, "{}", v.render(&n));
                        return Ok(UNSOUND);
                    }
                    match state_elim::summarize_by_states(&n, cap) {
                        Ok(s) => {
                            print_summary(io.out, &s);
                            Ok(OK)
                        }
                        Err(StateElimError::NotFullyReducible { .. }) => {
                            say!(io.out, "unsound: the reachability graph does not reduce");
                            Ok(UNSOUND)
                        }
                        Err(e) => Err(e.to_string()),
                    }
                }
                Method::Reduce => {
                    let t = strategies::reduce(&n).map_err(|e| e.to_string())?;
                    report_trace(io, &t)
                }
            }
        }
        Command::Reduce { file, trace } => {
            let n = load(&file)?;
            let t = strategies::reduce(&n).map_err(|e| e.to_string())?;
            if let Some(path) = trace {
                let mut text = t.log_lines().join("\n");
                text.push('\n');
                if path.as_os_str() == "-" {
                    let _ = write!(io.out, "{text}");
                } else {
                    fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
                }
            }
            report_trace(io, &t)
        }
        Command::Diag {
            file,
            fragments,
            loops,
            cap,
        } => {
            let n = load(&file)?;
            let (fragments, loops) = if fragments || loops {
                (fragments, loops)
            } else {
                (true, true)
            };
            if fragments {
                diag_fragments(io, &n, cap);
            }
            if loops {
                diag_loops(io, &n, cap)?;
            }
            Ok(OK)
        }
        Command::Dot { file } => {
            let n = load(&file)?;
            let _ = write!(io.out, "{}", dot::negotiation_dot(&n));
            Ok(OK)
        }
        Command::Gen {
            seed,
            steps,
            agents,
            max_atoms,
            acyclic,
            states,
        } => {
            if agents == 0 {
                return Err("at least one agent is needed".into());
            }
            let n = gen::generate_sound(
                seed,
                &gen::GenParams {
                    agents,
                    steps,
                    max_atoms,
                    acyclic,
                    states,
                },
            );
            let _ = write!(io.out, "{}", io::serialize(&n));
            Ok(OK)
        }
        Command::Fixture { name } => match fixtures::source(&name) {
            Some(_) => {
                let n = fixtures::load(&name).map_err(|e| e.to_string())?;
                let _ = write!(io.out, "{}", io::serialize(&n));
                Ok(OK)
            }
            None => Err(format!(
                "unknown fixture `{name}`; known: {}",
                fixtures::NAMES.join(", ")
            )),
        },
        Command::Demo {
            demo: Demo::Expfam { k, strategy },
        } => {
            if k == 0 {
                return Err("k must be at least 1".into());
            }
            let n = fixtures::expfam(k);
            let s = match strategy {
                DemoStrategy::Initial => ExpStrategy::InitialPriority,
                DemoStrategy::Alternating => ExpStrategy::Alternating,
            };
            let d = strategies::run_exponential_demo(&n, s, strategies::DEFAULT_BUDGET)
                .map_err(|e| e.to_string())?;
            say!(io.out, "applications: {}", d.trace.total());
            say!(io.out, "peak results at n0: {}", d.peak_initial_results);
            Ok(match d.trace.verdict {
                Verdict::Summarized { .. } => OK,
                Verdict::Unsound(_) => UNSOUND,
                Verdict::Unknown => ERROR,
            })
        }
    }
}

fn report_trace(io: &mut Io, t: &strategies::ReductionTrace) -> Result<i32, String> {
    let bound = t.bound.map(|b| format!(" (bound {b})")).unwrap_or_default();
    say!(io.out, "applications: {}{bound}", t.total());
    for v in &t.violations {
        say!(io.err, "invariant violated: {v}");
    }
    match &t.verdict {
        Verdict::Summarized { summary, .. } => {
            say!(io.out, "sound");
            print_summary(io.out, summary);
            Ok(OK)
        }
        Verdict::Unsound(r) => {
            say!(io.out, "unsound: {r}");
            Ok(UNSOUND)
        }
        Verdict::Unknown => {
            say!(io.out, "unknown: application budget exhausted");
            Ok(ERROR)
        }
    }
}

fn diag_fragments(io: &mut Io, n: &Negotiation, cap: usize) {
    for a in 0..n.atom_count() {
        let id = &n.atom(a).id;
        match structure::fragment(n, a, cap) {
            Ok(f) => {
                let ids: Vec<&str> = f.atoms.iter().map(|&b| n.atom(b).id.as_str()).collect();
                say!(
                    io.out,
                    "fragment {id}: atoms {{{}}} target {}",
                    ids.join(","),
                    f.target.key(n)
                );
            }
            Err(structure::StructureError::NonUniqueTargets(_, w)) => {
                say!(
                    io.out,
                    "fragment {id}: targets differ: {} reaches {}, {} reaches {}",
                    semantics::render_sequence(n, &w.first.0),
                    w.first.1.key(n),
                    semantics::render_sequence(n, &w.second.0),
                    w.second.1.key(n)
                );
            }
            Err(e) => {
                say!(io.out, "fragment {id}: {e}");
            }
        }
    }
}

fn diag_loops(io: &mut Io, n: &Negotiation, cap: usize) -> Result<(), String> {
    match structure::find_minimal_loop(n, cap).map_err(|e| budget_msg(&e))? {
        Some(l) => {
            let sync: Vec<&str> = structure::synchronizers(n, &l)
                .iter()
                .map(|&a| n.atom(a).id.as_str())
                .collect();
            say!(
                io.out,
                "minimal loop: {} from {}",
                semantics::render_sequence(n, &l.sequence),
                l.marking.key(n)
            );
            say!(io.out, "synchronizers: {{{}}}", sync.join(","));
        }
        None => {
            say!(io.out, "no loops");
        }
    }
    for c in n.graph().simple_cycles(256) {
        let ids: Vec<&str> = c.iter().map(|&a| n.atom(a).id.as_str()).collect();
        let dom = structure::dominating_atom(n, &c)
            .map(|a| n.atom(a).id.clone())
            .unwrap_or_else(|| "none".into());
        say!(io.out, "cycle {}: dominated by {dom}", ids.join("→"));
    }
    Ok(())
}
