//! Resolution engine: SLD with backtracking, inductive (least-fixed-point)
//! tabling, coinductive (greatest-fixed-point) tabling via substitution
//! factor unification, and the stack-based coinductive program
//! transformation.
//!
//! Tabled evaluation is scheduled by restart: a generator call runs its
//! clauses exhaustively, inserting every body solution into the answer trie,
//! and the leader of each dependency region re-runs until a full pass adds
//! nothing. Repeated calls met while their frame is on the generator stack
//! are cycles: inductive ones consume the answers stored so far, coinductive
//! ones unify the substitution factors of the repeated call and the
//! generator, record the resulting generator instantiation as an answer, and
//! succeed. Answers reach callers by trie replay once a frame's region is
//! complete (for inductive frames, also while evaluation is still running).

use std::collections::HashMap;
use std::rc::Rc;
use std::time::Instant;

use crate::canonical::canonical_term;
use crate::program::{Clause, Predicate, Program, TabledMode, Template};
use crate::rational::{self, struct_equal, unify};
use crate::reader::{self, Item, QueryVar};
use crate::table::{FrameId, FrameStatus, TableSpace, TrieNodeId};
use crate::term::{self, BuildError, Cell, CellRef, CellStore, SymbolId, Trail, TrailMark};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Parse(#[from] reader::ParseError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("resolution truncated after {steps} steps (depth limit)")]
    Truncated { steps: u64 },
    #[error("timed out")]
    Timeout,
    #[error("unknown predicate {name}/{arity}")]
    UnknownPredicate { name: String, arity: u16 },
    #[error("unknown directive `{0}`")]
    UnknownDirective(String),
    #[error("predicate {0} is declared both tabled and coinductive-transformed")]
    ConflictingModes(String),
    #[error("instantiation error in {0}")]
    Instantiation(&'static str),
    #[error("type error: {0}")]
    Type(String),
    #[error("arithmetic error: {0}")]
    Arithmetic(String),
    #[error("\\+ on tabled predicate {0} is not supported")]
    NegatedTabled(String),
    #[error(transparent)]
    Corruption(#[from] crate::table::CorruptionError),
}

/// Engine options. `max_steps` bounds the number of resolution steps of one
/// query so that untabled cyclic programs report truncation instead of
/// hanging.
#[derive(Clone, Debug)]
pub struct Options {
    pub max_steps: u64,
    pub canonical_subgoals: bool,
    pub deadline: Option<Instant>,
}

impl Default for Options {
    fn default() -> Self {
        Options { max_steps: 1_000_000, canonical_subgoals: false, deadline: None }
    }
}

/// One delivered solution: the bindings of the query's visible named
/// variables, copied into a self-contained store.
#[derive(Debug)]
pub struct Answer {
    pub store: CellStore,
    pub bindings: Vec<(String, CellRef)>,
}

impl Answer {
    pub fn binding(&self, name: &str) -> Option<CellRef> {
        self.bindings
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| *c)
    }
}

struct GoalNode {
    goal: Goal,
    next: Goals,
}

type Goals = Option<Rc<GoalNode>>;

#[derive(Clone)]
enum Goal {
    /// Solve a term; the barrier is the choice-point depth a `!` cuts to.
    Call(CellRef, usize),
    /// If-then-else commit: drop the else choice point and the condition's.
    CommitIfte(usize),
    /// Soft-cut commit: drop only the else choice point.
    CommitSoft(usize),
}

fn cons(goal: Goal, next: Goals) -> Goals {
    Some(Rc::new(GoalNode { goal, next }))
}

enum Alt {
    Clauses {
        key: (SymbolId, u16),
        args: Rc<Vec<CellRef>>,
        next: usize,
        barrier: usize,
    },
    Replay {
        frame: FrameId,
        sf: Rc<Vec<CellRef>>,
        next: usize,
        limit: usize,
    },
    Else {
        goal: CellRef,
        barrier: usize,
    },
    /// Nothing more after the first success (coinductive hit undo point).
    FailOnRetry,
}

struct ChoicePoint {
    goals: Goals,
    trail_mark: TrailMark,
    cell_mark: usize,
    alt: Alt,
    alive: bool,
}

/// Generator activation: one (re-)evaluation of a tabled subgoal. Its depth
/// is its index on the activation stack.
struct Activation {
    frame: FrameId,
    sf: Rc<Vec<CellRef>>,
    /// Shallowest generator-stack depth this evaluation depends on.
    min_dep: usize,
}

#[derive(Clone, Copy)]
struct Syms {
    comma: SymbolId,
    semicolon: SymbolId,
    arrow: SymbolId,
    soft_arrow: SymbolId,
    naf: SymbolId,
    cut: SymbolId,
    true_: SymbolId,
    fail: SymbolId,
    false_: SymbolId,
    unify: SymbolId,
    eq: SymbolId,
    neq: SymbolId,
    univ: SymbolId,
    is: SymbolId,
    lt: SymbolId,
    gt: SymbolId,
    le: SymbolId,
    ge: SymbolId,
    arith_eq: SymbolId,
    arith_neq: SymbolId,
    plus: SymbolId,
    minus: SymbolId,
    times: SymbolId,
    modulo: SymbolId,
    acyclic: SymbolId,
    canonical: SymbolId,
    nil: SymbolId,
}

enum RunMode<'s> {
    /// Top-level query: copy out bindings, ask the sink whether to go on.
    Deliver {
        vars: Rc<Vec<(String, CellRef)>>,
        sink: &'s mut dyn FnMut(Answer) -> bool,
        exhausted: bool,
    },
    /// Generator pass: record each body solution as an answer and keep going.
    Insert {
        frame: FrameId,
        sf: Rc<Vec<CellRef>>,
        inductive: bool,
    },
}

/// The engine: cell store, trail, table space, program, and search state.
pub struct Machine {
    pub store: CellStore,
    pub trail: Trail,
    pub table: TableSpace,
    pub program: Program,
    pub options: Options,
    syms: Syms,
    true_cell: CellRef,
    fail_cell: CellRef,
    cps: Vec<ChoicePoint>,
    activations: Vec<Activation>,
    completion_stack: Vec<FrameId>,
    /// Bumped on inductive answer inserts and on region completions; drives
    /// leader restarts and generator re-evaluation skipping.
    progress_epoch: u64,
    steps: u64,
}

impl Machine {
    pub fn new() -> Self {
        let mut store = CellStore::new();
        let syms = Syms {
            comma: store.symbols.intern(","),
            semicolon: store.symbols.intern(";"),
            arrow: store.symbols.intern("->"),
            soft_arrow: store.symbols.intern("*->"),
            naf: store.symbols.intern("\\+"),
            cut: store.symbols.intern("!"),
            true_: store.symbols.intern("true"),
            fail: store.symbols.intern("fail"),
            false_: store.symbols.intern("false"),
            unify: store.symbols.intern("="),
            eq: store.symbols.intern("=="),
            neq: store.symbols.intern("\\=="),
            univ: store.symbols.intern("=.."),
            is: store.symbols.intern("is"),
            lt: store.symbols.intern("<"),
            gt: store.symbols.intern(">"),
            le: store.symbols.intern("=<"),
            ge: store.symbols.intern(">="),
            arith_eq: store.symbols.intern("=:="),
            arith_neq: store.symbols.intern("=\\="),
            plus: store.symbols.intern("+"),
            minus: store.symbols.intern("-"),
            times: store.symbols.intern("*"),
            modulo: store.symbols.intern("mod"),
            acyclic: store.symbols.intern("acyclic_term"),
            canonical: store.symbols.intern("canonical_term"),
            nil: store.symbols.intern("[]"),
        };
        let true_cell = store.atom("true");
        let fail_cell = store.atom("fail");
        Machine {
            store,
            trail: Trail::new(),
            table: TableSpace::new(),
            program: Program::new(),
            options: Options::default(),
            syms,
            true_cell,
            fail_cell,
            cps: Vec::new(),
            activations: Vec::new(),
            completion_stack: Vec::new(),
            progress_epoch: 0,
            steps: 0,
        }
    }

    pub fn with_options(options: Options) -> Self {
        let mut m = Machine::new();
        m.options = options;
        m
    }

    /// Loads program text: clauses plus directives. Predicates marked
    /// `:- coinductive(p/n).` are rewritten through the coinductive program
    /// transformation once the whole text is read.
    pub fn consult(&mut self, src: &str) -> Result<(), EngineError> {
        let items = reader::parse_program(src)?;
        let mut cosld_marks: Vec<(SymbolId, u16)> = Vec::new();
        for item in items {
            match item {
                Item::Clause { head, body } => {
                    let (name, arity, clause) =
                        crate::program::compile_clause(&head, &body, &mut self.store.symbols)
                            .map_err(EngineError::Type)?;
                    self.program.add_clause(name, arity, clause);
                }
                Item::Directive(d) => self.apply_directive(&d, &mut cosld_marks)?,
            }
        }
        for &key in &cosld_marks {
            transform_coinductive(&mut self.program, &mut self.store.symbols, key, &cosld_marks)?;
        }
        Ok(())
    }

    fn apply_directive(
        &mut self,
        d: &term::TermLiteral,
        cosld_marks: &mut Vec<(SymbolId, u16)>,
    ) -> Result<(), EngineError> {
        use term::TermLiteral as L;
        let indicator = |t: &L| -> Option<(String, u16)> {
            if let L::Compound(slash, args) = t {
                if slash == "/" && args.len() == 2 {
                    if let (L::Atom(name), L::Int(n)) = (&args[0], &args[1]) {
                        return Some((name.clone(), *n as u16));
                    }
                }
            }
            None
        };
        match d {
            L::Compound(name, args) if name == "table" && args.len() == 1 => {
                let (p, n) = indicator(&args[0])
                    .ok_or_else(|| EngineError::UnknownDirective("table".into()))?;
                let sym = self.store.symbols.intern(&p);
                let pred = self.program.ensure_predicate(sym, n);
                if pred.mode == TabledMode::Plain {
                    pred.mode = TabledMode::TabledInductive;
                }
                Ok(())
            }
            L::Compound(name, args) if name == "tabling_mode" && args.len() == 2 => {
                let (p, n) = indicator(&args[0])
                    .ok_or_else(|| EngineError::UnknownDirective("tabling_mode".into()))?;
                let L::Atom(mode) = &args[1] else {
                    return Err(EngineError::UnknownDirective("tabling_mode".into()));
                };
                if mode != "coinductive" {
                    return Err(EngineError::UnknownDirective(format!(
                        "tabling_mode(_, {mode})"
                    )));
                }
                let sym = self.store.symbols.intern(&p);
                self.program.ensure_predicate(sym, n).mode = TabledMode::TabledCoinductive;
                Ok(())
            }
            L::Compound(name, args) if name == "coinductive" && args.len() == 1 => {
                let (p, n) = indicator(&args[0])
                    .ok_or_else(|| EngineError::UnknownDirective("coinductive".into()))?;
                let sym = self.store.symbols.intern(&p);
                let pred = self.program.ensure_predicate(sym, n);
                pred.cosld = true;
                cosld_marks.push((sym, n));
                Ok(())
            }
            L::Compound(name, _) => Err(EngineError::UnknownDirective(name.clone())),
            L::Atom(name) => Err(EngineError::UnknownDirective(name.clone())),
            _ => Err(EngineError::UnknownDirective("<non-atom>".into())),
        }
    }

    pub fn set_mode(&mut self, name: &str, arity: u16, mode: TabledMode) {
        let sym = self.store.symbols.intern(name);
        self.program.ensure_predicate(sym, arity).mode = mode;
    }

    /// Runs a query. The sink is called once per solution with a
    /// self-contained [`Answer`]; returning `false` stops the enumeration.
    /// `Ok(true)` means the search space was exhausted.
    pub fn run_query(
        &mut self,
        src: &str,
        sink: &mut dyn FnMut(Answer) -> bool,
    ) -> Result<bool, EngineError> {
        let (goal_lits, qvars) = reader::parse_query(src)?;
        self.steps = 0;
        let (goals, name_map) = build_goals(&mut self.store, &goal_lits);
        let visible: Vec<(String, CellRef)> = qvars
            .iter()
            .filter(|v| !v.hidden)
            .map(|v: &QueryVar| (v.name.clone(), name_map[&v.name]))
            .collect();
        let mut glist: Goals = None;
        for g in goals.iter().rev() {
            glist = cons(Goal::Call(*g, 0), glist);
        }
        let mut mode = RunMode::Deliver { vars: Rc::new(visible), sink, exhausted: false };
        let cp_base = self.cps.len();
        let trail_mark = self.trail.mark();
        let result = self.run(glist, &mut mode, cp_base);
        // Restore machine state for reuse; completed tables persist.
        self.unwind_to(cp_base);
        self.trail.undo_to(&mut self.store, trail_mark);
        if result.is_err() {
            // Abandon any evaluation in flight so the machine stays usable;
            // unfinished frames are left incomplete and will re-evaluate.
            for act in self.activations.drain(..) {
                self.table.frame_mut(act.frame).active_depth = None;
            }
            for f in self.completion_stack.drain(..) {
                self.table.frame_mut(f).pending_pos = None;
            }
        }
        match result {
            Ok(()) => {
                let RunMode::Deliver { exhausted, .. } = mode else {
                    unreachable!()
                };
                Ok(exhausted)
            }
            Err(e) => Err(e),
        }
    }

    /// Collects every answer of the query (exhaustive enumeration).
    pub fn query_all(&mut self, src: &str) -> Result<Vec<Answer>, EngineError> {
        let mut out = Vec::new();
        self.run_query(src, &mut |a| {
            out.push(a);
            true
        })?;
        Ok(out)
    }

    /// Collects up to `max` answers; the flag reports whether enumeration
    /// finished on its own.
    pub fn query_limited(&mut self, src: &str, max: usize) -> Result<(Vec<Answer>, bool), EngineError> {
        let mut out = Vec::new();
        let exhausted = self.run_query(src, &mut |a| {
            out.push(a);
            out.len() < max
        })?;
        Ok((out, exhausted))
    }

    fn unwind_to(&mut self, cp_base: usize) {
        while self.cps.len() > cp_base {
            let cp = self.cps.pop().unwrap();
            self.trail.undo_to(&mut self.store, cp.trail_mark);
            self.store.truncate(cp.cell_mark);
        }
    }

    fn tick(&mut self) -> Result<(), EngineError> {
        self.steps += 1;
        if self.steps > self.options.max_steps {
            return Err(EngineError::Truncated { steps: self.steps });
        }
        if self.steps % 4096 == 0 {
            if let Some(deadline) = self.options.deadline {
                if Instant::now() >= deadline {
                    return Err(EngineError::Timeout);
                }
            }
        }
        Ok(())
    }

    fn push_cp(&mut self, goals: Goals, alt: Alt) -> usize {
        self.cps.push(ChoicePoint {
            goals,
            trail_mark: self.trail.mark(),
            cell_mark: self.store.len(),
            alt,
            alive: true,
        });
        self.cps.len() - 1
    }

    /// The resolution loop for one run: executes goals until the list is
    /// empty (a solution), backtracking through the choice points above
    /// `cp_base`. Returns when the space at this level is exhausted or the
    /// sink stops the enumeration.
    fn run(
        &mut self,
        mut goals: Goals,
        mode: &mut RunMode<'_>,
        cp_base: usize,
    ) -> Result<(), EngineError> {
        loop {
            let Some(node) = goals.clone() else {
                // A solution of this run.
                let keep_going = self.on_solution(mode)?;
                if !keep_going {
                    self.unwind_to(cp_base);
                    return Ok(());
                }
                match self.backtrack(cp_base)? {
                    Some(resumed) => {
                        goals = resumed;
                        continue;
                    }
                    None => {
                        if let RunMode::Deliver { exhausted, .. } = mode {
                            *exhausted = true;
                        }
                        return Ok(());
                    }
                }
            };
            goals = node.next.clone();
            let proceed = match &node.goal {
                Goal::Call(g, barrier) => self.dispatch(*g, *barrier, &mut goals)?,
                Goal::CommitIfte(cp_index) => {
                    self.cps.truncate(*cp_index);
                    true
                }
                Goal::CommitSoft(cp_index) => {
                    self.cps[*cp_index].alive = false;
                    true
                }
            };
            if !proceed {
                match self.backtrack(cp_base)? {
                    Some(resumed) => goals = resumed,
                    None => {
                        if let RunMode::Deliver { exhausted, .. } = mode {
                            *exhausted = true;
                        }
                        return Ok(());
                    }
                }
            }
        }
    }

    fn on_solution(&mut self, mode: &mut RunMode<'_>) -> Result<bool, EngineError> {
        match mode {
            RunMode::Deliver { vars, sink, .. } => {
                let mut answer_store = CellStore::new();
                let mut memo = HashMap::new();
                let bindings: Vec<(String, CellRef)> = vars
                    .iter()
                    .map(|(name, cell)| {
                        (name.clone(), answer_store.copy_from(&self.store, *cell, &mut memo))
                    })
                    .collect();
                Ok(sink(Answer { store: answer_store, bindings }))
            }
            RunMode::Insert { frame, sf, inductive } => {
                let terms: Vec<CellRef> = sf.as_ref().clone();
                let (_, is_new) = self.table.answer_check_insert(*frame, &self.store, &terms);
                if is_new && *inductive {
                    self.progress_epoch += 1;
                }
                Ok(true)
            }
        }
    }

    /// Picks the next alternative at or above `cp_base`; `None` when the run
    /// is exhausted. Undoes bindings and reclaims cells as it descends.
    fn backtrack(&mut self, cp_base: usize) -> Result<Option<Goals>, EngineError> {
        loop {
            if self.cps.len() <= cp_base {
                return Ok(None);
            }
            self.tick()?;
            let top = self.cps.len() - 1;
            let trail_mark = self.cps[top].trail_mark;
            let cell_mark = self.cps[top].cell_mark;
            self.trail.undo_to(&mut self.store, trail_mark);
            self.store.truncate(cell_mark);
            if !self.cps[top].alive {
                self.cps.pop();
                continue;
            }
            match &mut self.cps[top].alt {
                Alt::FailOnRetry => {
                    self.cps.pop();
                }
                Alt::Else { goal, barrier } => {
                    let (goal, barrier) = (*goal, *barrier);
                    let goals = cons(Goal::Call(goal, barrier), self.cps[top].goals.clone());
                    self.cps.pop();
                    return Ok(Some(goals));
                }
                Alt::Clauses { key, args, next, barrier } => {
                    let key = *key;
                    let args = Rc::clone(args);
                    let barrier = *barrier;
                    let n = *next;
                    let n_clauses = self.program.predicates[&key].clauses.len();
                    if n >= n_clauses {
                        self.cps.pop();
                        continue;
                    }
                    *next = n + 1;
                    let cont = self.cps[top].goals.clone();
                    if let Some(goals) = self.try_clause(key, &args, n, barrier, cont)? {
                        return Ok(Some(goals));
                    }
                    // head unification failed; undo and try the next clause
                    self.trail.undo_to(&mut self.store, trail_mark);
                    self.store.truncate(cell_mark);
                }
                Alt::Replay { frame, sf, next, limit } => {
                    let frame = *frame;
                    let sf = Rc::clone(sf);
                    let n = *next;
                    if n >= *limit {
                        self.cps.pop();
                        continue;
                    }
                    *next = n + 1;
                    let leaf = self.table.frame(frame).answer_leaves[n];
                    let cont = self.cps[top].goals.clone();
                    if self.load_answer(frame, leaf, &sf)? {
                        return Ok(Some(cont));
                    }
                    self.trail.undo_to(&mut self.store, trail_mark);
                    self.store.truncate(cell_mark);
                }
            }
        }
    }

    /// Instantiates clause `idx` of `key` and unifies its head with the call
    /// arguments. On success returns the body goals prepended to `cont`.
    fn try_clause(
        &mut self,
        key: (SymbolId, u16),
        args: &[CellRef],
        idx: usize,
        barrier: usize,
        cont: Goals,
    ) -> Result<Option<Goals>, EngineError> {
        self.tick()?;
        let Machine { program, store, trail, .. } = self;
        let clause = &program.predicates[&key].clauses[idx];
        let mut slots = vec![None; clause.n_slots];
        let head_ok = match &clause.head {
            Template::Compound(_, head_args) => {
                let mut ok = true;
                for (i, at) in head_args.iter().enumerate() {
                    let h = at.instantiate(store, &mut slots);
                    if !unify(store, trail, h, args[i]) {
                        ok = false;
                        break;
                    }
                }
                ok
            }
            Template::Atom(_) => true,
            _ => unreachable!("clause heads are atoms or compounds"),
        };
        if !head_ok {
            return Ok(None);
        }
        let mut goals = cont;
        for bt in clause.body.iter().rev() {
            let b = bt.instantiate(store, &mut slots);
            goals = cons(Goal::Call(b, barrier), goals);
        }
        Ok(Some(goals))
    }

    /// Reconstructs a stored answer and unifies it with the call's
    /// substitution factor.
    fn load_answer(
        &mut self,
        frame: FrameId,
        leaf: TrieNodeId,
        sf: &[CellRef],
    ) -> Result<bool, EngineError> {
        let terms = self.table.reconstruct_answer(frame, leaf, &mut self.store)?;
        debug_assert_eq!(terms.len(), sf.len());
        for (v, t) in sf.iter().zip(terms.iter()) {
            if !unify(&mut self.store, &mut self.trail, *v, *t) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Executes one goal. Returns false to request backtracking. May prepend
    /// goals to `goals` and push choice points.
    fn dispatch(
        &mut self,
        g: CellRef,
        barrier: usize,
        goals: &mut Goals,
    ) -> Result<bool, EngineError> {
        self.tick()?;
        let g = self.store.deref(g);
        let (sym, args): (SymbolId, Vec<CellRef>) = match self.store.cell(g) {
            Cell::Var(_) => return Err(EngineError::Instantiation("call")),
            Cell::Int(_) => return Err(EngineError::Type("integer used as a goal".into())),
            Cell::Pair(..) => return Err(EngineError::Type("list used as a goal".into())),
            Cell::Atom(s) => (*s, Vec::new()),
            Cell::Compound(f, a) => (*f, a.to_vec()),
        };
        let s = self.syms;
        match (sym, args.len()) {
            (x, 0) if x == s.true_ => Ok(true),
            (x, 0) if x == s.fail || x == s.false_ => Ok(false),
            (x, 0) if x == s.cut => {
                self.cps.truncate(barrier);
                Ok(true)
            }
            (x, 2) if x == s.comma => {
                *goals = cons(
                    Goal::Call(args[0], barrier),
                    cons(Goal::Call(args[1], barrier), goals.clone()),
                );
                Ok(true)
            }
            (x, 2) if x == s.semicolon => {
                let left = self.store.deref(args[0]);
                if let Cell::Compound(f, cond_args) = self.store.cell(left) {
                    if *f == s.arrow && cond_args.len() == 2 {
                        let (cond, then) = (cond_args[0], cond_args[1]);
                        self.push_ifte(cond, then, Some(args[1]), barrier, goals);
                        return Ok(true);
                    }
                    if *f == s.soft_arrow && cond_args.len() == 2 {
                        let (cond, then) = (cond_args[0], cond_args[1]);
                        self.push_soft(cond, then, Some(args[1]), barrier, goals);
                        return Ok(true);
                    }
                }
                // plain disjunction
                let cp = self.push_cp(goals.clone(), Alt::Else { goal: args[1], barrier });
                let _ = cp;
                *goals = cons(Goal::Call(args[0], barrier), goals.clone());
                Ok(true)
            }
            (x, 2) if x == s.arrow => {
                self.push_ifte(args[0], args[1], None, barrier, goals);
                Ok(true)
            }
            (x, 2) if x == s.soft_arrow => {
                self.push_soft(args[0], args[1], None, barrier, goals);
                Ok(true)
            }
            (x, 1) if x == s.naf => {
                let inner = self.store.deref(args[0]);
                if let Some(key) = self.goal_key(inner) {
                    if let Some(p) = self.program.predicate(key) {
                        if p.mode != TabledMode::Plain {
                            return Err(EngineError::NegatedTabled(format!(
                                "{}/{}",
                                self.store.symbols.name(key.0),
                                key.1
                            )));
                        }
                    }
                }
                // \+ G  ==  (G -> fail ; true)
                self.push_ifte(args[0], self.fail_cell, Some(self.true_cell), barrier, goals);
                Ok(true)
            }
            (x, 2) if x == s.unify => Ok(unify(&mut self.store, &mut self.trail, args[0], args[1])),
            (x, 2) if x == s.eq => Ok(struct_equal(&self.store, args[0], args[1])),
            (x, 2) if x == s.neq => Ok(!struct_equal(&self.store, args[0], args[1])),
            (x, 2) if x == s.univ => self.builtin_univ(args[0], args[1]),
            (x, 1) if x == s.acyclic => Ok(rational::is_acyclic(&self.store, args[0])),
            (x, 2) if x == s.canonical => {
                let c = canonical_term(&mut self.store, &mut self.trail, args[0]);
                Ok(unify(&mut self.store, &mut self.trail, c, args[1]))
            }
            (x, 2) if x == s.is => {
                let v = self.eval_arith(args[1], 0)?;
                let cell = self.store.int(v);
                Ok(unify(&mut self.store, &mut self.trail, args[0], cell))
            }
            (x, 2)
                if x == s.lt
                    || x == s.gt
                    || x == s.le
                    || x == s.ge
                    || x == s.arith_eq
                    || x == s.arith_neq =>
            {
                let a = self.eval_arith(args[0], 0)?;
                let b = self.eval_arith(args[1], 0)?;
                Ok(if x == s.lt {
                    a < b
                } else if x == s.gt {
                    a > b
                } else if x == s.le {
                    a <= b
                } else if x == s.ge {
                    a >= b
                } else if x == s.arith_eq {
                    a == b
                } else {
                    a != b
                })
            }
            _ => self.call_predicate((sym, args.len() as u16), args, goals),
        }
    }

    fn goal_key(&self, g: CellRef) -> Option<(SymbolId, u16)> {
        match self.store.cell(self.store.deref(g)) {
            Cell::Atom(s) => Some((*s, 0)),
            Cell::Compound(f, args) => Some((*f, args.len() as u16)),
            _ => None,
        }
    }

    fn push_ifte(
        &mut self,
        cond: CellRef,
        then: CellRef,
        else_: Option<CellRef>,
        barrier: usize,
        goals: &mut Goals,
    ) {
        let else_goal = else_.unwrap_or(self.fail_cell);
        let cp_index = self.push_cp(goals.clone(), Alt::Else { goal: else_goal, barrier });
        // condition gets a local cut barrier above the else choice point
        *goals = cons(
            Goal::Call(cond, cp_index + 1),
            cons(Goal::CommitIfte(cp_index), cons(Goal::Call(then, barrier), goals.clone())),
        );
    }

    fn push_soft(
        &mut self,
        cond: CellRef,
        then: CellRef,
        else_: Option<CellRef>,
        barrier: usize,
        goals: &mut Goals,
    ) {
        let else_goal = else_.unwrap_or(self.fail_cell);
        let cp_index = self.push_cp(goals.clone(), Alt::Else { goal: else_goal, barrier });
        *goals = cons(
            Goal::Call(cond, cp_index + 1),
            cons(Goal::CommitSoft(cp_index), cons(Goal::Call(then, barrier), goals.clone())),
        );
    }

    fn builtin_univ(&mut self, t: CellRef, l: CellRef) -> Result<bool, EngineError> {
        let td = self.store.deref(t);
        if !matches!(self.store.cell(td), Cell::Var(_)) {
            let parts = rational::univ(&mut self.store, td)
                .map_err(|e| EngineError::Type(e.to_string()))?;
            let list = self.make_list(&parts);
            return Ok(unify(&mut self.store, &mut self.trail, list, l));
        }
        let parts = self
            .list_to_vec(l)?
            .ok_or(EngineError::Instantiation("=.."))?;
        let rebuilt = rational::univ_rebuild(&mut self.store, &parts)
            .map_err(|e| EngineError::Type(e.to_string()))?;
        Ok(unify(&mut self.store, &mut self.trail, td, rebuilt))
    }

    fn make_list(&mut self, items: &[CellRef]) -> CellRef {
        let mut tail = self.store.atom_id(self.syms.nil);
        for &it in items.iter().rev() {
            tail = self.store.pair(it, tail);
        }
        tail
    }

    /// Proper-list extraction; `Ok(None)` when the term is an unbound var.
    fn list_to_vec(&mut self, l: CellRef) -> Result<Option<Vec<CellRef>>, EngineError> {
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut at = self.store.deref(l);
        loop {
            if !seen.insert(at) {
                return Err(EngineError::Type("cyclic list where a proper list is required".into()));
            }
            match self.store.cell(at) {
                Cell::Var(_) => return Ok(None),
                Cell::Atom(s) if *s == self.syms.nil => return Ok(Some(out)),
                Cell::Pair(h, t) => {
                    out.push(*h);
                    at = self.store.deref(*t);
                }
                _ => return Err(EngineError::Type("improper list".into())),
            }
        }
    }

    fn eval_arith(&mut self, e: CellRef, depth: usize) -> Result<i64, EngineError> {
        if depth > 10_000 {
            return Err(EngineError::Arithmetic("expression too deep".into()));
        }
        let e = self.store.deref(e);
        match self.store.cell(e) {
            Cell::Int(n) => Ok(*n),
            Cell::Var(_) => Err(EngineError::Instantiation("arithmetic")),
            Cell::Compound(f, args) if args.len() == 2 => {
                let (f, a, b) = (*f, args[0], args[1]);
                let a = self.eval_arith(a, depth + 1)?;
                let b = self.eval_arith(b, depth + 1)?;
                let s = &self.syms;
                if f == s.plus {
                    a.checked_add(b)
                        .ok_or_else(|| EngineError::Arithmetic("integer overflow".into()))
                } else if f == s.minus {
                    a.checked_sub(b)
                        .ok_or_else(|| EngineError::Arithmetic("integer overflow".into()))
                } else if f == s.times {
                    a.checked_mul(b)
                        .ok_or_else(|| EngineError::Arithmetic("integer overflow".into()))
                } else if f == s.modulo {
                    if b == 0 {
                        Err(EngineError::Arithmetic("mod by zero".into()))
                    } else {
                        Ok(a.rem_euclid(b))
                    }
                } else {
                    Err(EngineError::Type(format!(
                        "unknown arithmetic operator {}",
                        self.store.symbols.name(f)
                    )))
                }
            }
            Cell::Compound(f, args) if args.len() == 1 && *f == self.syms.minus => {
                let a = args[0];
                let v = self.eval_arith(a, depth + 1)?;
                v.checked_neg()
                    .ok_or_else(|| EngineError::Arithmetic("integer overflow".into()))
            }
            Cell::Atom(s) => Err(EngineError::Type(format!(
                "atom `{}` in arithmetic",
                self.store.symbols.name(*s)
            ))),
            _ => Err(EngineError::Type("bad arithmetic expression".into())),
        }
    }

    /// User predicate call: plain resolution or the tabled variants.
    fn call_predicate(
        &mut self,
        key: (SymbolId, u16),
        args: Vec<CellRef>,
        goals: &mut Goals,
    ) -> Result<bool, EngineError> {
        let Some(pred) = self.program.predicate(key) else {
            return Err(EngineError::UnknownPredicate {
                name: self.store.symbols.name(key.0).to_string(),
                arity: key.1,
            });
        };
        let mode = pred.mode;
        match mode {
            TabledMode::Plain => {
                let barrier = self.cps.len();
                self.push_cp(
                    goals.clone(),
                    Alt::Clauses { key, args: Rc::new(args), next: 0, barrier },
                );
                Ok(false) // enter via backtracking so clause trials share one undo path
            }
            TabledMode::TabledInductive | TabledMode::TabledCoinductive => {
                self.call_tabled(key, args, mode, goals)
            }
        }
    }

    fn call_tabled(
        &mut self,
        key: (SymbolId, u16),
        args: Vec<CellRef>,
        mode: TabledMode,
        goals: &mut Goals,
    ) -> Result<bool, EngineError> {
        let inductive = mode == TabledMode::TabledInductive;
        let insert_args: Vec<CellRef> = if self.options.canonical_subgoals {
            args.iter()
                .map(|&a| canonical_term(&mut self.store, &mut self.trail, a))
                .collect()
        } else {
            args.clone()
        };
        let entry = self.table.entry(key);
        let (frame, sf, _is_new) =
            self.table
                .subgoal_check_insert(entry, &self.store, &insert_args);
        let sf = Rc::new(sf);

        if self.table.frame(frame).status == FrameStatus::Complete {
            let limit = self.table.frame(frame).answer_leaves.len();
            self.push_cp(goals.clone(), Alt::Replay { frame, sf, next: 0, limit });
            return Ok(false);
        }

        if let Some(depth) = self.table.frame(frame).active_depth {
            // Repeated call while evaluating: a cycle.
            if let Some(current) = self.activations.last_mut() {
                current.min_dep = current.min_dep.min(depth);
            }
            if inductive {
                // Consume the answers stored so far, then fail; the leader's
                // restart passes deliver the rest.
                let limit = self.table.frame(frame).answer_leaves.len();
                self.push_cp(goals.clone(), Alt::Replay { frame, sf, next: 0, limit });
                return Ok(false);
            }
            // Coinductive hit: unify the substitution factors, record the
            // generator's instantiation as an answer, succeed once.
            self.push_cp(goals.clone(), Alt::FailOnRetry);
            let gen_sf = Rc::clone(&self.activations[depth].sf);
            debug_assert_eq!(gen_sf.len(), sf.len());
            for (&g, &c) in gen_sf.iter().zip(sf.iter()) {
                if !unify(&mut self.store, &mut self.trail, g, c) {
                    return Ok(false);
                }
            }
            let terms: Vec<CellRef> = gen_sf.as_ref().clone();
            self.table.answer_check_insert(frame, &self.store, &terms);
            return Ok(true);
        }

        // Off-stack, not complete: evaluate (or skip when nothing changed
        // since this frame's last full evaluation).
        let skip = inductive
            && self.table.frame(frame).last_eval_epoch == Some(self.progress_epoch);
        if !skip {
            self.evaluate_generator(key, frame, &args, Rc::clone(&sf), inductive)?;
        }

        if self.table.frame(frame).status == FrameStatus::Complete {
            let limit = self.table.frame(frame).answer_leaves.len();
            self.push_cp(goals.clone(), Alt::Replay { frame, sf, next: 0, limit });
            return Ok(false);
        }
        if inductive {
            // Still inside an enclosing region: deliver what is known so far.
            let limit = self.table.frame(frame).answer_leaves.len();
            self.push_cp(goals.clone(), Alt::Replay { frame, sf, next: 0, limit });
            return Ok(false);
        }
        // Incomplete coinductive frames deliver nothing: their answers flow
        // out of the region only once it completes.
        Ok(false)
    }

    /// Runs the frame's clauses to quiescence as a generator, then performs
    /// completion bookkeeping for its dependency region.
    fn evaluate_generator(
        &mut self,
        key: (SymbolId, u16),
        frame: FrameId,
        call_args: &[CellRef],
        sf: Rc<Vec<CellRef>>,
        inductive: bool,
    ) -> Result<(), EngineError> {
        let depth = self.activations.len();
        self.activations.push(Activation {
            frame,
            sf: Rc::clone(&sf),
            min_dep: depth,
        });
        self.table.frame_mut(frame).active_depth = Some(depth);
        if self.table.frame(frame).pending_pos.is_none() {
            self.table.frame_mut(frame).pending_pos = Some(self.completion_stack.len());
            self.completion_stack.push(frame);
        }

        let n_clauses = self.program.predicates[&key].clauses.len();
        let result = loop {
            let epoch_before = self.progress_epoch;
            if let Err(e) = self.generator_pass(key, frame, call_args, &sf, inductive, n_clauses) {
                break Err(e);
            }
            let am_leader = self.activations[depth].min_dep == depth;
            if !am_leader || self.progress_epoch == epoch_before {
                break Ok(());
            }
        };

        let act = self.activations.pop().expect("activation pushed above");
        self.table.frame_mut(frame).active_depth = None;
        self.table.frame_mut(frame).last_eval_epoch = Some(self.progress_epoch);
        if let Err(e) = result {
            return Err(e);
        }
        if act.min_dep == depth {
            // Leader: the whole region above (and including) this frame is
            // done growing.
            let base = self.table.frame(frame).pending_pos.expect("pending");
            let completed: Vec<FrameId> = self.completion_stack.drain(base..).collect();
            for f in completed {
                self.table.frame_mut(f).status = FrameStatus::Complete;
                self.table.frame_mut(f).pending_pos = None;
                self.table.frame_mut(f).last_eval_epoch = None;
            }
            self.progress_epoch += 1;
        } else if let Some(parent) = self.activations.last_mut() {
            parent.min_dep = parent.min_dep.min(act.min_dep);
        }
        Ok(())
    }

    /// One full pass over the generator's clauses, recording every body
    /// solution as an answer.
    fn generator_pass(
        &mut self,
        key: (SymbolId, u16),
        frame: FrameId,
        call_args: &[CellRef],
        sf: &Rc<Vec<CellRef>>,
        inductive: bool,
        n_clauses: usize,
    ) -> Result<(), EngineError> {
        for idx in 0..n_clauses {
            let trail_mark = self.trail.mark();
            let cell_mark = self.store.len();
            let cp_base = self.cps.len();
            let body = self.try_clause(key, call_args, idx, cp_base, None)?;
            if let Some(body_goals) = body {
                let mut mode = RunMode::Insert {
                    frame,
                    sf: Rc::clone(sf),
                    inductive,
                };
                let run_result = self.run(body_goals, &mut mode, cp_base);
                if run_result.is_err() {
                    self.unwind_to(cp_base);
                    self.trail.undo_to(&mut self.store, trail_mark);
                    self.store.truncate(cell_mark);
                    return run_result;
                }
            }
            self.unwind_to(cp_base);
            self.trail.undo_to(&mut self.store, trail_mark);
            self.store.truncate(cell_mark);
        }
        Ok(())
    }
}

impl Default for Machine {
    fn default() -> Self {
        Machine::new()
    }
}

/// Builds the query goals in the store, sharing named variables across
/// goals. Returns the goal cells and the name map.
fn build_goals(
    store: &mut CellStore,
    goal_lits: &[term::TermLiteral],
) -> (Vec<CellRef>, HashMap<String, CellRef>) {
    term::build_shared(store, goal_lits)
}

/// Rewrites a predicate marked for the coinductive transformation into an
/// entry clause, a worker carrying the hypothesis stack, and a checker that
/// succeeds via soft-cut when an ancestor call unifies and recurses with the
/// call pushed otherwise. `transformed_set` lists every predicate being
/// transformed together, so mutually coinductive calls are rewritten too.
pub fn transform_coinductive(
    program: &mut Program,
    symbols: &mut crate::term::SymbolTable,
    key: (SymbolId, u16),
    transformed_set: &[(SymbolId, u16)],
) -> Result<(), EngineError> {
    let cosld_keys: Vec<(SymbolId, u16)> = transformed_set.to_vec();
    let Some(pred) = program.predicates.get(&key) else {
        return Err(EngineError::UnknownPredicate {
            name: symbols.name(key.0).to_string(),
            arity: key.1,
        });
    };
    if pred.mode != TabledMode::Plain {
        return Err(EngineError::ConflictingModes(format!(
            "{}/{}",
            symbols.name(key.0),
            key.1
        )));
    }
    let name = symbols.name(key.0).to_string();
    let arity = key.1 as usize;
    let worker_sym = symbols.intern(&format!("{name}$co"));
    let checker_sym = symbols.intern(&format!("{name}$chk"));
    let member_sym = symbols.intern("$hyp_member");
    let nil_sym = symbols.intern("[]");
    let true_sym = symbols.intern("true");
    let soft_sym = symbols.intern("*->");
    let semi_sym = symbols.intern(";");

    // checker names for every predicate in the transformed set
    let mut checker_of: HashMap<(SymbolId, u16), SymbolId> = HashMap::new();
    for &(s, n) in &cosld_keys {
        let nm = symbols.name(s).to_string();
        checker_of.insert((s, n), symbols.intern(&format!("{nm}$chk")));
    }

    let original = std::mem::take(&mut program.predicates.get_mut(&key).unwrap().clauses);

    // worker clauses: original clauses with the stack threaded through and
    // recursive calls to transformed predicates replaced by checker calls
    let mut worker_clauses = Vec::with_capacity(original.len());
    for clause in &original {
        let stack_slot = clause.n_slots;
        let head_args = match &clause.head {
            Template::Compound(_, a) => a.clone(),
            Template::Atom(_) => Vec::new(),
            _ => unreachable!(),
        };
        let mut new_head_args = head_args;
        new_head_args.push(Template::Var(stack_slot));
        let body: Vec<Template> = clause
            .body
            .iter()
            .map(|g| rewrite_goal(g, &checker_of, stack_slot, symbols))
            .collect();
        worker_clauses.push(Clause {
            head: Template::Compound(worker_sym, new_head_args),
            body,
            n_slots: clause.n_slots + 1,
        });
    }
    program
        .predicates
        .insert((worker_sym, key.1 + 1), Predicate {
            name: worker_sym,
            arity: key.1 + 1,
            mode: TabledMode::Plain,
            clauses: worker_clauses,
            cosld: false,
        });

    // checker clause
    let arg_vars: Vec<Template> = (0..arity).map(Template::Var).collect();
    let stack_var = Template::Var(arity);
    let hypothesis = if arity == 0 {
        Template::Atom(key.0)
    } else {
        Template::Compound(key.0, arg_vars.clone())
    };
    let member_call = Template::Compound(
        member_sym,
        vec![hypothesis.clone(), stack_var.clone()],
    );
    let mut worker_args = arg_vars.clone();
    worker_args.push(Template::Pair(
        Box::new(hypothesis),
        Box::new(stack_var.clone()),
    ));
    let recurse = Template::Compound(worker_sym, worker_args);
    let soft = Template::Compound(soft_sym, vec![member_call, Template::Atom(true_sym)]);
    let checker_body = Template::Compound(semi_sym, vec![soft, recurse]);
    let mut checker_head_args = arg_vars.clone();
    checker_head_args.push(stack_var);
    program.predicates.insert(
        (checker_sym, key.1 + 1),
        Predicate {
            name: checker_sym,
            arity: key.1 + 1,
            mode: TabledMode::Plain,
            clauses: vec![Clause {
                head: Template::Compound(checker_sym, checker_head_args),
                body: vec![checker_body],
                n_slots: arity + 1,
            }],
            cosld: false,
        },
    );

    // entry clause replaces the original predicate
    let mut entry_args = arg_vars.clone();
    entry_args.push(Template::Atom(nil_sym));
    let entry_head = if arity == 0 {
        Template::Atom(key.0)
    } else {
        Template::Compound(key.0, arg_vars)
    };
    let entry = program.predicates.get_mut(&key).unwrap();
    entry.clauses = vec![Clause {
        head: entry_head,
        body: vec![Template::Compound(worker_sym, entry_args)],
        n_slots: arity,
    }];
    entry.cosld = false;

    // unification-based membership over the hypothesis stack
    if !program.predicates.contains_key(&(member_sym, 2)) {
        program.predicates.insert(
            (member_sym, 2),
            Predicate {
                name: member_sym,
                arity: 2,
                mode: TabledMode::Plain,
                clauses: vec![
                    Clause {
                        head: Template::Compound(
                            member_sym,
                            vec![
                                Template::Var(0),
                                Template::Pair(
                                    Box::new(Template::Var(0)),
                                    Box::new(Template::Var(1)),
                                ),
                            ],
                        ),
                        body: vec![],
                        n_slots: 2,
                    },
                    Clause {
                        head: Template::Compound(
                            member_sym,
                            vec![
                                Template::Var(0),
                                Template::Pair(
                                    Box::new(Template::Var(1)),
                                    Box::new(Template::Var(2)),
                                ),
                            ],
                        ),
                        body: vec![Template::Compound(
                            member_sym,
                            vec![Template::Var(0), Template::Var(2)],
                        )],
                        n_slots: 3,
                    },
                ],
                cosld: false,
            },
        );
    }
    Ok(())
}

/// Replaces calls to transformed predicates with checker calls carrying the
/// stack, descending through the control constructs.
fn rewrite_goal(
    g: &Template,
    checker_of: &HashMap<(SymbolId, u16), SymbolId>,
    stack_slot: usize,
    symbols: &crate::term::SymbolTable,
) -> Template {
    let control: [&str; 5] = [",", ";", "->", "*->", "\\+"];
    match g {
        Template::Compound(f, args) => {
            let fname = symbols.name(*f).to_string();
            if control.contains(&fname.as_str()) {
                return Template::Compound(
                    *f,
                    args.iter()
                        .map(|a| rewrite_goal(a, checker_of, stack_slot, symbols))
                        .collect(),
                );
            }
            if let Some(&chk) = checker_of.get(&(*f, args.len() as u16)) {
                let mut new_args = args.clone();
                new_args.push(Template::Var(stack_slot));
                return Template::Compound(chk, new_args);
            }
            g.clone()
        }
        Template::Atom(a) => {
            if let Some(&chk) = checker_of.get(&(*a, 0)) {
                return Template::Compound(chk, vec![Template::Var(stack_slot)]);
            }
            g.clone()
        }
        other => other.clone(),
    }
}
