//! Arena representation of possibly-cyclic Prolog terms.
//!
//! All terms of one engine live in a single [`CellStore`]. A cell is referred
//! to by its index ([`CellRef`]); cycles arise when a variable cell is bound
//! to a pair or compound cell that (transitively) contains it, which is what
//! unification without an occurs check produces. Bindings are recorded on a
//! [`Trail`] so choice points can undo them.

use std::collections::HashMap;
use std::fmt;

/// Interned atom / functor name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolId(pub u32);

/// Index of a cell in its owning [`CellStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellRef(pub u32);

impl CellRef {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One heap cell.
///
/// `Var(None)` is an unbound variable; binding it to an enclosing pair or
/// compound cell is how rational terms are represented.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Cell {
    Var(Option<CellRef>),
    Atom(SymbolId),
    Int(i64),
    Pair(CellRef, CellRef),
    Compound(SymbolId, Box<[CellRef]>),
}

#[derive(Default, Debug, Clone)]
pub struct SymbolTable {
    names: Vec<String>,
    ids: HashMap<String, SymbolId>,
}

impl SymbolTable {
    pub fn intern(&mut self, name: &str) -> SymbolId {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = SymbolId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn name(&self, id: SymbolId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn lookup(&self, name: &str) -> Option<SymbolId> {
        self.ids.get(name).copied()
    }
}

/// Growable cell arena plus the intern table for atom names.
///
/// Cells are append-only between undo marks; [`CellStore::truncate`] is only
/// called through choice-point rollback, which discards every reference taken
/// above the mark together with the cells.
#[derive(Default, Debug, Clone)]
pub struct CellStore {
    cells: Vec<Cell>,
    pub symbols: SymbolTable,
}

impl CellStore {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn cell(&self, r: CellRef) -> &Cell {
        &self.cells[r.index()]
    }

    #[inline]
    fn push(&mut self, c: Cell) -> CellRef {
        let r = CellRef(self.cells.len() as u32);
        self.cells.push(c);
        r
    }

    /// Fresh unbound variable cell.
    pub fn new_var(&mut self) -> CellRef {
        self.push(Cell::Var(None))
    }

    pub fn atom(&mut self, name: &str) -> CellRef {
        let id = self.symbols.intern(name);
        self.push(Cell::Atom(id))
    }

    pub fn atom_id(&mut self, id: SymbolId) -> CellRef {
        self.push(Cell::Atom(id))
    }

    pub fn int(&mut self, value: i64) -> CellRef {
        self.push(Cell::Int(value))
    }

    pub fn pair(&mut self, head: CellRef, tail: CellRef) -> CellRef {
        self.push(Cell::Pair(head, tail))
    }

    pub fn compound(&mut self, functor: SymbolId, args: Vec<CellRef>) -> CellRef {
        debug_assert!(!args.is_empty(), "compound cells have arity >= 1");
        self.push(Cell::Compound(functor, args.into_boxed_slice()))
    }

    /// Follows variable bindings to an unbound variable or a non-variable
    /// cell. Terminates because bound-variable chains never revisit a cell:
    /// cycles run through pair/compound cells only.
    #[inline]
    pub fn deref(&self, mut r: CellRef) -> CellRef {
        loop {
            match self.cell(r) {
                Cell::Var(Some(next)) => r = *next,
                _ => return r,
            }
        }
    }

    /// Binds an unbound variable, recording it on the trail.
    pub fn bind(&mut self, trail: &mut Trail, var: CellRef, target: CellRef) {
        debug_assert!(
            matches!(self.cell(var), Cell::Var(None)),
            "bind target must be an unbound variable"
        );
        debug_assert_ne!(var, target, "a variable never binds to itself");
        self.cells[var.index()] = Cell::Var(Some(target));
        trail.push(var);
    }

    /// Drops every cell appended after `mark`. Callers must make sure no
    /// surviving reference points above the mark; the engine pairs this with
    /// trail rollback in choice points.
    pub fn truncate(&mut self, mark: usize) {
        debug_assert!(mark <= self.cells.len());
        self.cells.truncate(mark);
    }

    /// Writes a binding without trailing it. Only for construction sites
    /// (literal building, trie reconstruction) whose cells live and die as a
    /// unit, never for bindings a choice point must undo.
    pub(crate) fn set_binding(&mut self, var: CellRef, target: CellRef) {
        debug_assert!(matches!(self.cell(var), Cell::Var(None)));
        self.cells[var.index()] = Cell::Var(Some(target));
    }

    /// Deep-copies the term rooted at `root` in `src` into this store,
    /// preserving sharing and cycles. `memo` carries the mapping across
    /// multiple roots of one answer so shared structure stays shared.
    pub fn copy_from(
        &mut self,
        src: &CellStore,
        root: CellRef,
        memo: &mut HashMap<CellRef, CellRef>,
    ) -> CellRef {
        let r = src.deref(root);
        if let Some(&done) = memo.get(&r) {
            return done;
        }
        match src.cell(r) {
            Cell::Var(_) => {
                let v = self.new_var();
                memo.insert(r, v);
                v
            }
            Cell::Atom(sym) => {
                let c = self.atom(src.symbols.name(*sym));
                memo.insert(r, c);
                c
            }
            Cell::Int(n) => {
                let c = self.int(*n);
                memo.insert(r, c);
                c
            }
            Cell::Pair(h, t) => {
                // Placeholder var first so cycles back into this pair resolve.
                let hole = self.new_var();
                memo.insert(r, hole);
                let (h, t) = (*h, *t);
                let nh = self.copy_from(src, h, memo);
                let nt = self.copy_from(src, t, memo);
                let p = self.pair(nh, nt);
                self.cells[hole.index()] = Cell::Var(Some(p));
                hole
            }
            Cell::Compound(f, args) => {
                let hole = self.new_var();
                memo.insert(r, hole);
                let name = src.symbols.name(*f).to_string();
                let args: Vec<CellRef> = args.to_vec();
                let new_args: Vec<CellRef> =
                    args.iter().map(|&a| self.copy_from(src, a, memo)).collect();
                let f = self.symbols.intern(&name);
                let c = self.compound(f, new_args);
                self.cells[hole.index()] = Cell::Var(Some(c));
                hole
            }
        }
    }
}

/// Record of bound variables, with marks for backtracking.
#[derive(Default, Debug, Clone)]
pub struct Trail {
    entries: Vec<CellRef>,
}

/// Position in the trail usable with [`Trail::undo_to`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrailMark(pub usize);

impl Trail {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    fn push(&mut self, var: CellRef) {
        self.entries.push(var);
    }

    #[inline]
    pub fn mark(&self) -> TrailMark {
        TrailMark(self.entries.len())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Unbinds exactly the variables bound after `mark`.
    pub fn undo_to(&mut self, store: &mut CellStore, mark: TrailMark) {
        debug_assert!(mark.0 <= self.entries.len(), "stale trail mark");
        while self.entries.len() > mark.0 {
            let var = self.entries.pop().unwrap();
            store.cells[var.index()] = Cell::Var(None);
        }
    }
}

/// Source-level description of a term, as produced by the reader or built by
/// hand in tests. Cycle labels let a literal express e.g. `L = [1,2,3|L]`.
#[derive(Clone, Debug, PartialEq)]
pub enum TermLiteral {
    Atom(String),
    Int(i64),
    Var(String),
    /// Proper or partial list: elements plus optional tail.
    List(Vec<TermLiteral>, Option<Box<TermLiteral>>),
    Compound(String, Vec<TermLiteral>),
}

/// A term literal together with its cycle-label equations: `defs` holds one
/// `Name = Term` per label, `root` is the term the whole literal denotes
/// (the first labelled term, or the bare term when there are no labels).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledLiteral {
    pub defs: Vec<(String, TermLiteral)>,
    pub root: TermLiteral,
}

impl LabeledLiteral {
    pub fn bare(root: TermLiteral) -> Self {
        LabeledLiteral { defs: Vec::new(), root }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("cycle label `{0}` is defined more than once")]
    DuplicateLabel(String),
}

/// Builds the heap shape a literal describes. Every label becomes a variable
/// cell bound to the root of its definition, so `L = [1,2,3|L]` produces
/// three pair cells whose last tail is a variable bound to the first pair.
/// Unlabelled variable names share one fresh variable per name.
pub fn build(store: &mut CellStore, lit: &LabeledLiteral) -> Result<CellRef, BuildError> {
    let mut vars: HashMap<&str, CellRef> = HashMap::new();
    for (name, _) in &lit.defs {
        if vars.insert(name, store.new_var()).is_some() {
            return Err(BuildError::DuplicateLabel(name.clone()));
        }
    }
    // Non-label variables are collected on the fly.
    let mut free: HashMap<String, CellRef> = HashMap::new();
    let mut defs_built = Vec::with_capacity(lit.defs.len());
    for (name, term) in &lit.defs {
        let built = build_term(store, term, &vars, &mut free);
        defs_built.push((vars[name.as_str()], built));
    }
    for (label_var, built) in defs_built {
        store.cells[label_var.index()] = Cell::Var(Some(built));
    }
    Ok(match &lit.root {
        TermLiteral::Var(name) if vars.contains_key(name.as_str()) => vars[name.as_str()],
        other => build_term(store, other, &vars, &mut free),
    })
}

fn build_term(
    store: &mut CellStore,
    lit: &TermLiteral,
    labels: &HashMap<&str, CellRef>,
    free: &mut HashMap<String, CellRef>,
) -> CellRef {
    match lit {
        TermLiteral::Atom(name) => store.atom(name),
        TermLiteral::Int(n) => store.int(*n),
        TermLiteral::Var(name) => {
            if let Some(&v) = labels.get(name.as_str()) {
                v
            } else if name == "_" {
                store.new_var()
            } else if let Some(&v) = free.get(name) {
                v
            } else {
                let v = store.new_var();
                free.insert(name.clone(), v);
                v
            }
        }
        TermLiteral::List(items, tail) => {
            let mut t = match tail {
                Some(t) => build_term(store, t, labels, free),
                None => store.atom("[]"),
            };
            for item in items.iter().rev() {
                let h = build_term(store, item, labels, free);
                t = store.pair(h, t);
            }
            t
        }
        TermLiteral::Compound(f, args) => {
            let args: Vec<CellRef> = args
                .iter()
                .map(|a| build_term(store, a, labels, free))
                .collect();
            let f = store.symbols.intern(f);
            store.compound(f, args)
        }
    }
}

/// Builds several literals in one shared variable scope (used for query
/// goals, where named variables are shared across goals). Returns the roots
/// and the name-to-cell map.
pub fn build_shared(
    store: &mut CellStore,
    lits: &[TermLiteral],
) -> (Vec<CellRef>, HashMap<String, CellRef>) {
    let labels = HashMap::new();
    let mut free = HashMap::new();
    let roots = lits
        .iter()
        .map(|l| build_term(store, l, &labels, &mut free))
        .collect();
    (roots, free)
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit_list(items: Vec<TermLiteral>, tail: Option<TermLiteral>) -> TermLiteral {
        TermLiteral::List(items, tail.map(Box::new))
    }

    #[test]
    fn new_var_is_fresh_and_distinct() {
        let mut s = CellStore::new();
        let a = s.new_var();
        let b = s.new_var();
        assert_ne!(a, b);
        assert_eq!(s.cell(a), &Cell::Var(None));
        assert_eq!(s.deref(a), a);
    }

    #[test]
    fn deref_follows_chains() {
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let x = s.new_var();
        let y = s.new_var();
        let a = s.atom("a");
        s.bind(&mut t, y, a);
        s.bind(&mut t, x, y);
        assert_eq!(s.deref(x), a);
        assert_eq!(s.deref(s.deref(x)), a);
    }

    #[test]
    fn bind_and_undo_round_trip() {
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let x = s.new_var();
        let a = s.atom("a");
        let m = t.mark();
        s.bind(&mut t, x, a);
        assert_eq!(s.deref(x), a);
        t.undo_to(&mut s, m);
        assert_eq!(s.deref(x), x);
        // undo with empty segment is a no-op
        t.undo_to(&mut s, m);
        assert_eq!(s.deref(x), x);
    }

    #[test]
    fn nested_marks_unwind_innermost_first() {
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let x = s.new_var();
        let y = s.new_var();
        let a = s.atom("a");
        let b = s.atom("b");
        let outer = t.mark();
        s.bind(&mut t, x, a);
        let inner = t.mark();
        s.bind(&mut t, y, b);
        t.undo_to(&mut s, inner);
        assert_eq!(s.deref(x), a);
        assert_eq!(s.deref(y), y);
        t.undo_to(&mut s, outer);
        assert_eq!(s.deref(x), x);
    }

    #[test]
    fn build_plain_compound() {
        let mut s = CellStore::new();
        let lit = LabeledLiteral::bare(TermLiteral::Compound(
            "f".into(),
            vec![TermLiteral::Atom("a".into()), TermLiteral::Atom("b".into())],
        ));
        let r = build(&mut s, &lit).unwrap();
        match s.cell(r) {
            Cell::Compound(f, args) => {
                assert_eq!(s.symbols.name(*f), "f");
                assert_eq!(args.len(), 2);
            }
            c => panic!("expected compound, got {c:?}"),
        }
    }

    #[test]
    fn build_cyclic_list_shape() {
        // L = [1,2,3|L]: three pairs, last tail is a var bound to the first pair.
        let mut s = CellStore::new();
        let lit = LabeledLiteral {
            defs: vec![(
                "L".into(),
                lit_list(
                    vec![
                        TermLiteral::Int(1),
                        TermLiteral::Int(2),
                        TermLiteral::Int(3),
                    ],
                    Some(TermLiteral::Var("L".into())),
                ),
            )],
            root: TermLiteral::Var("L".into()),
        };
        let root = build(&mut s, &lit).unwrap();
        let p1 = s.deref(root);
        let Cell::Pair(h1, t1) = *s.cell(p1) else {
            panic!("first cell not a pair")
        };
        assert_eq!(s.cell(s.deref(h1)), &Cell::Int(1));
        let Cell::Pair(_, t2) = *s.cell(s.deref(t1)) else {
            panic!()
        };
        let Cell::Pair(h3, t3) = *s.cell(s.deref(t2)) else {
            panic!()
        };
        assert_eq!(s.cell(s.deref(h3)), &Cell::Int(3));
        // last tail is a Var cell whose binding is the first pair
        assert!(matches!(s.cell(t3), Cell::Var(Some(_))));
        assert_eq!(s.deref(t3), p1);
    }

    #[test]
    fn build_one_cell_cycle() {
        // L = [1|L]: a single pair whose tail var points back at it.
        let mut s = CellStore::new();
        let lit = LabeledLiteral {
            defs: vec![(
                "L".into(),
                lit_list(
                    vec![TermLiteral::Int(1)],
                    Some(TermLiteral::Var("L".into())),
                ),
            )],
            root: TermLiteral::Var("L".into()),
        };
        let root = build(&mut s, &lit).unwrap();
        let p = s.deref(root);
        let Cell::Pair(_, t) = *s.cell(p) else { panic!() };
        assert_eq!(s.deref(t), p);
    }

    #[test]
    fn build_rejects_duplicate_labels() {
        let mut s = CellStore::new();
        let lit = LabeledLiteral {
            defs: vec![
                ("L".into(), TermLiteral::Int(1)),
                ("L".into(), TermLiteral::Int(2)),
            ],
            root: TermLiteral::Var("L".into()),
        };
        assert_eq!(
            build(&mut s, &lit),
            Err(BuildError::DuplicateLabel("L".into()))
        );
    }

    #[test]
    fn copy_preserves_cycles_and_sharing() {
        let mut s = CellStore::new();
        let lit = LabeledLiteral {
            defs: vec![(
                "L".into(),
                lit_list(
                    vec![TermLiteral::Int(1), TermLiteral::Int(2)],
                    Some(TermLiteral::Var("L".into())),
                ),
            )],
            root: TermLiteral::Var("L".into()),
        };
        let root = build(&mut s, &lit).unwrap();
        let mut dst = CellStore::new();
        let mut memo = HashMap::new();
        let copied = dst.copy_from(&s, root, &mut memo);
        let p1 = dst.deref(copied);
        let Cell::Pair(h, t) = *dst.cell(p1) else { panic!() };
        assert_eq!(dst.cell(dst.deref(h)), &Cell::Int(1));
        let Cell::Pair(_, t2) = *dst.cell(dst.deref(t)) else {
            panic!()
        };
        assert_eq!(dst.deref(t2), p1);
    }
}
