mod bench;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use cycletab_core::engine::{EngineError, Machine, Options};
use cycletab_core::printer;
use cycletab_core::reader;
use cycletab_core::term;

use bench::BenchMode;

#[derive(Parser)]
#[command(name = "cycletab", version, about = "Tabled logic programming with rational terms")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Consult a program file and run a query against it.
    Run {
        /// Program file.
        file: PathBuf,
        /// Query text, e.g. "bin(X)."
        #[arg(short, long)]
        query: String,
        /// Stop after this many answers.
        #[arg(long)]
        max_answers: Option<usize>,
        /// Resolution step limit (default 1000000).
        #[arg(long)]
        max_depth: Option<u64>,
        /// Canonicalize call arguments before table lookup.
        #[arg(long)]
        canonical_subgoals: bool,
        /// Emit one JSON object per answer.
        #[arg(long)]
        json: bool,
        /// Enumerate every answer (the default; kept for explicitness).
        #[arg(long)]
        all: bool,
    },
    /// Print the canonical form of a term literal, e.g. "L=[1,2,1,2|L]".
    Canon {
        literal: String,
    },
    /// Run the fully connected graph benchmark.
    Bench {
        #[arg(long, value_enum)]
        mode: BenchMode,
        /// Graph size: nodes are 0..=n.
        #[arg(long)]
        n: u32,
        /// Wall-clock timeout in seconds; exceeding it is a reported outcome.
        #[arg(long)]
        timeout: Option<u64>,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { file, query, max_answers, max_depth, canonical_subgoals, json, all: _ } => {
            run_cmd(&file, &query, max_answers, max_depth, canonical_subgoals, json)
        }
        Cmd::Canon { literal } => canon_cmd(&literal),
        Cmd::Bench { mode, n, timeout, json } => bench_cmd(mode, n, timeout, json),
    }
}

fn run_cmd(
    file: &PathBuf,
    query: &str,
    max_answers: Option<usize>,
    max_depth: Option<u64>,
    canonical_subgoals: bool,
    json: bool,
) -> ExitCode {
    let src = match std::fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cycletab: cannot read {}: {e}", file.display());
            return ExitCode::from(1);
        }
    };
    let mut options = Options { canonical_subgoals, ..Options::default() };
    if let Some(d) = max_depth {
        options.max_steps = d;
    }
    let mut machine = Machine::with_options(options);
    if let Err(e) = machine.consult(&src) {
        eprintln!("cycletab: {e}");
        return exit_for(&e);
    }
    let cap = max_answers.unwrap_or(usize::MAX);
    let mut count = 0usize;
    let result = machine.run_query(query, &mut |answer| {
        if json {
            println!("{}", printer::answer_json(&answer));
        } else {
            println!("{}.", printer::format_answer(&answer));
        }
        count += 1;
        count < cap
    });
    match result {
        Ok(exhausted) => {
            if exhausted {
                println!("false.");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cycletab: {e}");
            exit_for(&e)
        }
    }
}

fn canon_cmd(literal: &str) -> ExitCode {
    let parsed = match reader::parse_term_literal(literal) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cycletab: {e}");
            return ExitCode::from(1);
        }
    };
    let mut machine = Machine::new();
    let root = match term::build(&mut machine.store, &parsed) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("cycletab: {e}");
            return ExitCode::from(1);
        }
    };
    let canon =
        cycletab_core::canonical::canonical_term(&mut machine.store, &mut machine.trail, root);
    let text = match &parsed.root {
        term::TermLiteral::Var(name) => {
            printer::format_bindings(&machine.store, &[(name.clone(), canon)])
        }
        _ => printer::format_term(&machine.store, canon),
    };
    println!("{text}");
    ExitCode::SUCCESS
}

fn bench_cmd(mode: BenchMode, n: u32, timeout: Option<u64>, json: bool) -> ExitCode {
    if n < 2 {
        eprintln!("cycletab: bench requires n >= 2");
        return ExitCode::from(1);
    }
    let timeout = timeout.map(Duration::from_secs);
    match bench::run_bench(mode, n, timeout) {
        Ok(row) => {
            if json {
                println!("{}", row.to_json());
            } else if row.timeout {
                println!(
                    "mode={} n={} timeout after {:.3}s ({} answers so far, {} table nodes)",
                    row.mode.name(),
                    row.n,
                    row.seconds,
                    row.answers,
                    row.table_nodes
                );
            } else {
                println!(
                    "mode={} n={} {:.3}s {} answers {} table nodes",
                    row.mode.name(),
                    row.n,
                    row.seconds,
                    row.answers,
                    row.table_nodes
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cycletab: {e}");
            exit_for(&e)
        }
    }
}

fn exit_for(e: &EngineError) -> ExitCode {
    match e {
        EngineError::Parse(_) | EngineError::Build(_) => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}
