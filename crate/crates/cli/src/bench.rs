//! Fully connected graph benchmark: enumerate all cyclic paths from node 1
//! with `path(1, _P), fail` under the chosen coinduction strategy.

use std::time::{Duration, Instant};

use cycletab_core::engine::{EngineError, Machine, Options};
use cycletab_core::program::TabledMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchMode {
    /// Tabling-based coinduction.
    Coslg,
    /// Stack-based coinductive transformation.
    Cosld,
    /// The transformed worker additionally tabled (inductively).
    TabledCosld,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Coslg => "coslg",
            BenchMode::Cosld => "cosld",
            BenchMode::TabledCosld => "tabled-cosld",
        }
    }
}

#[derive(Debug)]
pub struct BenchRow {
    pub mode: BenchMode,
    pub n: u32,
    pub seconds: f64,
    pub answers: u64,
    pub timeout: bool,
    pub table_nodes: usize,
}

impl BenchRow {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mode": self.mode.name(),
            "n": self.n,
            "seconds": self.seconds,
            "answers": self.answers,
            "timeout": self.timeout,
            "table_nodes": self.table_nodes,
        })
    }
}

/// The graph generator of the benchmark workload: nodes `0..=n`, every
/// ordered pair of distinct nodes is an edge.
pub fn graph_program(n: u32) -> String {
    format!(
        "\
full_edge_size({n}).

edge(X, Y) :-
  posint(X),
  posint(Y),
  X \\== Y.

posint(N) :-
  posint(N, 0).
posint(_, I) :-
  full_edge_size(N),
  I > N, !,
  fail.
posint(I, I).
posint(X, I) :-
  NI is I + 1,
  posint(X, NI).
"
    )
}

pub fn bench_program(mode: BenchMode, n: u32) -> String {
    let directives = match mode {
        BenchMode::Coslg => ":- table(path/2).\n:- tabling_mode(path/2, coinductive).\n",
        BenchMode::Cosld | BenchMode::TabledCosld => ":- coinductive(path/2).\n",
    };
    format!(
        "{directives}\
path(F, [F|P]) :-
  edge(F, N),
  path(N, P).

{}",
        graph_program(n)
    )
}

/// Runs one benchmark configuration. A timeout is an outcome, not an error.
pub fn run_bench(mode: BenchMode, n: u32, timeout: Option<Duration>) -> Result<BenchRow, EngineError> {
    let mut options = Options {
        max_steps: u64::MAX / 2,
        ..Options::default()
    };
    let start = Instant::now();
    if let Some(t) = timeout {
        options.deadline = Some(start + t);
    }
    let mut machine = Machine::with_options(options);
    machine.consult(&bench_program(mode, n))?;
    if mode == BenchMode::TabledCosld {
        machine.set_mode("path$co", 3, TabledMode::TabledInductive);
    }
    let mut answers: u64 = 0;
    let result = machine.run_query("path(1, _P).", &mut |_| {
        answers += 1;
        true
    });
    let seconds = start.elapsed().as_secs_f64();
    let table_nodes = machine.table.node_count();
    match result {
        Ok(_) => Ok(BenchRow { mode, n, seconds, answers, timeout: false, table_nodes }),
        Err(EngineError::Timeout) => {
            Ok(BenchRow { mode, n, seconds, answers, timeout: true, table_nodes })
        }
        Err(e) => Err(e),
    }
}
