//! Clause database: predicates, clause templates, and tabling modes.
//!
//! Clause templates are acyclic (source programs are finite text) and carry
//! variables as dense slot numbers, renamed fresh at every use.

use std::collections::HashMap;

use crate::term::{CellRef, CellStore, SymbolId, SymbolTable, TermLiteral};

/// How calls to a predicate are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TabledMode {
    Plain,
    TabledInductive,
    TabledCoinductive,
}

/// Term template with variables as slots into a per-instantiation vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Template {
    Var(usize),
    Atom(SymbolId),
    Int(i64),
    Pair(Box<Template>, Box<Template>),
    Compound(SymbolId, Vec<Template>),
}

impl Template {
    pub fn instantiate(&self, store: &mut CellStore, slots: &mut [Option<CellRef>]) -> CellRef {
        match self {
            Template::Var(i) => {
                if let Some(c) = slots[*i] {
                    c
                } else {
                    let v = store.new_var();
                    slots[*i] = Some(v);
                    v
                }
            }
            Template::Atom(s) => store.atom_id(*s),
            Template::Int(n) => store.int(*n),
            Template::Pair(h, t) => {
                let h = h.instantiate(store, slots);
                let t = t.instantiate(store, slots);
                store.pair(h, t)
            }
            Template::Compound(f, args) => {
                let args: Vec<CellRef> = args
                    .iter()
                    .map(|a| a.instantiate(store, slots))
                    .collect();
                store.compound(*f, args)
            }
        }
    }
}

/// One clause: head template plus body goal templates sharing the slot space.
#[derive(Clone, Debug)]
pub struct Clause {
    pub head: Template,
    pub body: Vec<Template>,
    pub n_slots: usize,
}

#[derive(Clone, Debug)]
pub struct Predicate {
    pub name: SymbolId,
    pub arity: u16,
    pub mode: TabledMode,
    pub clauses: Vec<Clause>,
    /// Marked by a `:- coinductive(p/n).` directive: resolved by rewriting
    /// the predicate through the stack-based coinductive transformation at
    /// consult time.
    pub cosld: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Program {
    pub predicates: HashMap<(SymbolId, u16), Predicate>,
}

impl Program {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn predicate(&self, key: (SymbolId, u16)) -> Option<&Predicate> {
        self.predicates.get(&key)
    }

    pub fn ensure_predicate(&mut self, name: SymbolId, arity: u16) -> &mut Predicate {
        self.predicates
            .entry((name, arity))
            .or_insert_with(|| Predicate {
                name,
                arity,
                mode: TabledMode::Plain,
                clauses: Vec::new(),
                cosld: false,
            })
    }

    pub fn add_clause(&mut self, name: SymbolId, arity: u16, clause: Clause) {
        self.ensure_predicate(name, arity).clauses.push(clause);
    }
}

/// Compiles one parsed clause into a template, numbering its variables.
/// `_` gets a fresh slot per occurrence; every other name shares one slot.
pub fn compile_clause(
    head: &TermLiteral,
    body: &[TermLiteral],
    symbols: &mut SymbolTable,
) -> Result<(SymbolId, u16, Clause), String> {
    let mut slots: HashMap<String, usize> = HashMap::new();
    let mut n_slots = 0usize;
    let head_t = template_of(head, symbols, &mut slots, &mut n_slots);
    let (name, arity) = match &head_t {
        Template::Atom(s) => (*s, 0u16),
        Template::Compound(s, args) => (*s, args.len() as u16),
        _ => return Err("clause head must be an atom or compound term".into()),
    };
    let body_t: Vec<Template> = body
        .iter()
        .map(|g| template_of(g, symbols, &mut slots, &mut n_slots))
        .collect();
    Ok((name, arity, Clause { head: head_t, body: body_t, n_slots }))
}

fn template_of(
    lit: &TermLiteral,
    symbols: &mut SymbolTable,
    slots: &mut HashMap<String, usize>,
    n_slots: &mut usize,
) -> Template {
    match lit {
        TermLiteral::Atom(a) => Template::Atom(symbols.intern(a)),
        TermLiteral::Int(n) => Template::Int(*n),
        TermLiteral::Var(name) => {
            let slot = if name == "_" {
                let s = *n_slots;
                *n_slots += 1;
                s
            } else {
                *slots.entry(name.clone()).or_insert_with(|| {
                    let s = *n_slots;
                    *n_slots += 1;
                    s
                })
            };
            Template::Var(slot)
        }
        TermLiteral::List(items, tail) => {
            let mut t = match tail {
                Some(t) => template_of(t, symbols, slots, n_slots),
                None => Template::Atom(symbols.intern("[]")),
            };
            for item in items.iter().rev() {
                let h = template_of(item, symbols, slots, n_slots);
                t = Template::Pair(Box::new(h), Box::new(t));
            }
            t
        }
        TermLiteral::Compound(f, args) => {
            let args = args
                .iter()
                .map(|a| template_of(a, symbols, slots, n_slots))
                .collect();
            Template::Compound(symbols.intern(f), args)
        }
    }
}
