//! Two-level trie table space with rational-reference tokens.
//!
//! Each tabled predicate owns a table entry with a subgoal trie; every
//! distinct call is one root-to-leaf token path ending in a subgoal frame,
//! and each frame owns an answer trie holding just the substitution terms for
//! the call's free variables.
//!
//! The trie alphabet is extended with a rational-reference token. During
//! insertion every pair/compound cell is memoized together with the trie node
//! that represents it; re-encountering a memoized cell emits a reference to
//! that node instead of descending, which is what lets an infinite term have
//! a finite path. References always target a pair/functor node earlier on the
//! same path, so reconstruction can close the cycles with deferred bindings.

use std::collections::HashMap;

use crate::term::{Cell, CellRef, CellStore, SymbolId};

/// Node index within one trie.
pub type TrieNodeId = u32;

/// Frame index within the table space.
pub type FrameId = u32;

/// Entry index within the table space.
pub type EntryId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Token {
    Atom(SymbolId),
    Int(i64),
    /// `VARi` constant: the i-th distinct unbound variable of one insertion.
    Var(u16),
    Pair,
    Functor(SymbolId, u16),
    /// Cycle back to an earlier pair/functor node on the same path.
    RatRef(TrieNodeId),
}

#[derive(Debug)]
pub struct TrieNode {
    pub token: Option<Token>, // None only at the root
    pub parent: Option<TrieNodeId>,
    children: Vec<TrieNodeId>,
    pub frame: Option<FrameId>,
    pub answer_leaf: bool,
}

#[derive(Debug, Default)]
pub struct Trie {
    nodes: Vec<TrieNode>,
}

impl Trie {
    pub fn new() -> Self {
        Trie {
            nodes: vec![TrieNode {
                token: None,
                parent: None,
                children: Vec::new(),
                frame: None,
                answer_leaf: false,
            }],
        }
    }

    pub const ROOT: TrieNodeId = 0;

    pub fn node(&self, id: TrieNodeId) -> &TrieNode {
        &self.nodes[id as usize]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn child_or_create(&mut self, at: TrieNodeId, token: Token, created: &mut bool) -> TrieNodeId {
        for &c in &self.nodes[at as usize].children {
            if self.nodes[c as usize].token == Some(token) {
                return c;
            }
        }
        if let Token::RatRef(target) = token {
            debug_assert!(
                matches!(
                    self.nodes[target as usize].token,
                    Some(Token::Pair) | Some(Token::Functor(..))
                ),
                "rational reference must target a pair/functor node"
            );
            debug_assert!(
                self.is_ancestor(target, at),
                "rational reference must target a node on its own path"
            );
        }
        let id = self.nodes.len() as TrieNodeId;
        self.nodes.push(TrieNode {
            token: Some(token),
            parent: Some(at),
            children: Vec::new(),
            frame: None,
            answer_leaf: false,
        });
        self.nodes[at as usize].children.push(id);
        *created = true;
        id
    }

    fn is_ancestor(&self, candidate: TrieNodeId, mut from: TrieNodeId) -> bool {
        loop {
            if candidate == from {
                return true;
            }
            match self.nodes[from as usize].parent {
                Some(p) => from = p,
                None => return false,
            }
        }
    }

    /// Token sequence from the root down to `leaf`, with node ids.
    fn path_to(&self, leaf: TrieNodeId) -> Vec<(Token, TrieNodeId)> {
        let mut path = Vec::new();
        let mut at = leaf;
        while let Some(tok) = self.nodes[at as usize].token {
            path.push((tok, at));
            at = self.nodes[at as usize].parent.expect("non-root has parent");
        }
        path.reverse();
        path
    }

    /// One line per node, depth-first: `depth token [->targetId]`.
    pub fn dump(&self, symbols: &crate::term::SymbolTable) -> String {
        let mut out = String::new();
        let mut stack: Vec<(TrieNodeId, usize)> = self.nodes[0]
            .children
            .iter()
            .rev()
            .map(|&c| (c, 1))
            .collect();
        while let Some((id, depth)) = stack.pop() {
            let node = &self.nodes[id as usize];
            let line = match node.token.expect("non-root") {
                Token::Atom(s) => format!("{depth} atom({})", symbols.name(s)),
                Token::Int(n) => format!("{depth} int({n})"),
                Token::Var(i) => format!("{depth} var({i})"),
                Token::Pair => format!("{depth} pair"),
                Token::Functor(s, a) => format!("{depth} functor({}/{a})", symbols.name(s)),
                Token::RatRef(t) => format!("{depth} ratref ->{t}"),
            };
            out.push_str(&line);
            out.push('\n');
            for &c in node.children.iter().rev() {
                stack.push((c, depth + 1));
            }
        }
        out
    }

    /// Checks the rational-reference invariants over the whole trie: every
    /// reference targets a pair/functor node that lies on its own root path.
    pub fn validate_rat_refs(&self) -> Result<(), String> {
        for (id, node) in self.nodes.iter().enumerate() {
            if let Some(Token::RatRef(target)) = node.token {
                if !matches!(
                    self.nodes[target as usize].token,
                    Some(Token::Pair) | Some(Token::Functor(..))
                ) {
                    return Err(format!("node {id}: ratref target {target} not pair/functor"));
                }
                if !self.is_ancestor(target, id as TrieNodeId) {
                    return Err(format!("node {id}: ratref target {target} off-path"));
                }
            }
        }
        Ok(())
    }
}

/// Subgoal evaluation status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameStatus {
    Evaluating,
    Complete,
}

/// Per-call tabling state: status, the answer trie, and the insertion-ordered
/// answer leaves used to replay answers deterministically.
#[derive(Debug)]
pub struct SubgoalFrame {
    pub pred: (SymbolId, u16),
    pub status: FrameStatus,
    pub answers: Trie,
    pub answer_leaves: Vec<TrieNodeId>,
    pub subst_arity: usize,
    /// Generator-stack depth while this frame is being evaluated.
    pub active_depth: Option<usize>,
    /// Position on the completion stack while completion is pending.
    pub pending_pos: Option<usize>,
    /// Answer-insert epoch at the end of this frame's last full evaluation.
    pub last_eval_epoch: Option<u64>,
}

/// Ordered free variables of a call, in first-occurrence order over its
/// arguments.
pub type SubstitutionFactor = Vec<CellRef>;

#[derive(Debug, thiserror::Error)]
#[error("table corruption: {0}")]
pub struct CorruptionError(pub String);

/// The whole table space of one engine: per-predicate subgoal tries plus the
/// frames and answer tries hanging off their leaves.
#[derive(Debug, Default)]
pub struct TableSpace {
    entry_ids: HashMap<(SymbolId, u16), EntryId>,
    entries: Vec<(/* pred */ (SymbolId, u16), Trie)>,
    pub frames: Vec<SubgoalFrame>,
    /// Total answers ever inserted; used as an epoch for fixpoint detection.
    pub insert_count: u64,
    /// Tokens walked by inserts and reconstructions since last drained;
    /// the engine folds this into its step budget so that degenerate
    /// ever-growing answers cannot outrun the depth limit.
    work: u64,
}

impl TableSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&mut self, pred: (SymbolId, u16)) -> EntryId {
        if let Some(&id) = self.entry_ids.get(&pred) {
            return id;
        }
        let id = self.entries.len() as EntryId;
        self.entries.push((pred, Trie::new()));
        self.entry_ids.insert(pred, id);
        id
    }

    pub fn frame(&self, id: FrameId) -> &SubgoalFrame {
        &self.frames[id as usize]
    }

    pub fn frame_mut(&mut self, id: FrameId) -> &mut SubgoalFrame {
        &mut self.frames[id as usize]
    }

    /// Total trie nodes currently allocated (subgoal plus answer tries).
    pub fn node_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.node_count()).sum::<usize>()
            + self.frames.iter().map(|f| f.answers.node_count()).sum::<usize>()
    }

    /// Drains the accumulated token-walk work counter.
    pub fn take_work(&mut self) -> u64 {
        std::mem::take(&mut self.work)
    }

    /// Inserts a call's argument terms into the subgoal trie. Returns the
    /// frame, the substitution factor of this call, and whether the leaf was
    /// newly framed (i.e. this call is a generator).
    pub fn subgoal_check_insert(
        &mut self,
        entry: EntryId,
        store: &CellStore,
        args: &[CellRef],
    ) -> (FrameId, SubstitutionFactor, bool) {
        let trie = &mut self.entries[entry as usize].1;
        let mut walk = InsertWalk::new(trie, store);
        for &a in args {
            walk.insert_term(a);
        }
        let leaf = walk.cursor;
        let sf = walk.sf;
        self.work += walk.walked;
        let pred = self.entries[entry as usize].0;
        let trie = &mut self.entries[entry as usize].1;
        if let Some(frame) = trie.nodes[leaf as usize].frame {
            (frame, sf, false)
        } else {
            let frame = self.frames.len() as FrameId;
            self.frames.push(SubgoalFrame {
                pred,
                status: FrameStatus::Evaluating,
                answers: Trie::new(),
                answer_leaves: Vec::new(),
                subst_arity: sf.len(),
                active_depth: None,
                pending_pos: None,
                last_eval_epoch: None,
            });
            trie.nodes[leaf as usize].frame = Some(frame);
            (frame, sf, true)
        }
    }

    /// Inserts one answer (the substitution terms for the frame's free
    /// variables). `is_new == false` means the answer was already present.
    pub fn answer_check_insert(
        &mut self,
        frame: FrameId,
        store: &CellStore,
        terms: &[CellRef],
    ) -> (TrieNodeId, bool) {
        let f = &mut self.frames[frame as usize];
        debug_assert_eq!(terms.len(), f.subst_arity);
        let mut walk = InsertWalk::new(&mut f.answers, store);
        for &t in terms {
            walk.insert_term(t);
        }
        let leaf = walk.cursor;
        let walked = walk.walked;
        self.work += walked;
        if f.answers.nodes[leaf as usize].answer_leaf {
            (leaf, false)
        } else {
            f.answers.nodes[leaf as usize].answer_leaf = true;
            f.answer_leaves.push(leaf);
            self.insert_count += 1;
            (leaf, true)
        }
    }

    /// Rebuilds the substitution terms stored under `leaf`. Rational
    /// references become fresh variables that are bound to the term built at
    /// their target node once construction finishes.
    pub fn reconstruct_answer(
        &self,
        frame: FrameId,
        leaf: TrieNodeId,
        store: &mut CellStore,
    ) -> Result<Vec<CellRef>, CorruptionError> {
        let f = &self.frames[frame as usize];
        let path = f.answers.path_to(leaf);
        let mut rd = Reconstructor {
            path: &path,
            pos: 0,
            store,
            vars: HashMap::new(),
            built: HashMap::new(),
            pending: Vec::new(),
        };
        let mut terms = Vec::with_capacity(f.subst_arity);
        for _ in 0..f.subst_arity {
            terms.push(rd.parse()?);
        }
        if rd.pos != path.len() {
            return Err(CorruptionError(format!(
                "answer path has {} unconsumed tokens",
                path.len() - rd.pos
            )));
        }
        let pending = std::mem::take(&mut rd.pending);
        for (var, target) in pending {
            let Some(&cell) = rd.built.get(&target) else {
                return Err(CorruptionError(format!(
                    "dangling rational reference to node {target}"
                )));
            };
            rd.store.set_binding(var, cell);
        }
        Ok(terms)
    }

    pub fn dump_subgoal_trie(&self, pred: (SymbolId, u16), symbols: &crate::term::SymbolTable) -> Option<String> {
        let id = *self.entry_ids.get(&pred)?;
        Some(self.entries[id as usize].1.dump(symbols))
    }

    pub fn dump_answer_trie(&self, frame: FrameId, symbols: &crate::term::SymbolTable) -> String {
        self.frames[frame as usize].answers.dump(symbols)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (_, trie) in &self.entries {
            trie.validate_rat_refs()?;
        }
        for f in &self.frames {
            f.answers.validate_rat_refs()?;
        }
        Ok(())
    }
}

/// Pre-order token emission for one insertion (one call or one answer).
/// The variable map and the cycle memo are shared across all terms of the
/// insertion and discarded afterwards.
struct InsertWalk<'a> {
    trie: &'a mut Trie,
    store: &'a CellStore,
    cursor: TrieNodeId,
    var_map: HashMap<CellRef, u16>,
    sf: Vec<CellRef>,
    cycle_memo: HashMap<CellRef, TrieNodeId>,
    created: bool,
}

impl<'a> InsertWalk<'a> {
    fn new(trie: &'a mut Trie, store: &'a CellStore) -> Self {
        InsertWalk {
            trie,
            store,
            cursor: Trie::ROOT,
            var_map: HashMap::new(),
            sf: Vec::new(),
            cycle_memo: HashMap::new(),
            created: false,
        }
    }

    fn step(&mut self, tok: Token) {
        self.cursor = self.trie.child_or_create(self.cursor, tok, &mut self.created);
    }

    fn insert_term(&mut self, t: CellRef) {
        let t = self.store.deref(t);
        match self.store.cell(t) {
            Cell::Var(_) => {
                let next = self.var_map.len() as u16;
                match self.var_map.entry(t) {
                    std::collections::hash_map::Entry::Occupied(e) => {
                        let i = *e.get();
                        self.step(Token::Var(i));
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(next);
                        self.sf.push(t);
                        self.step(Token::Var(next));
                    }
                }
            }
            Cell::Atom(s) => self.step(Token::Atom(*s)),
            Cell::Int(n) => self.step(Token::Int(*n)),
            Cell::Pair(h, tl) => {
                if let Some(&target) = self.cycle_memo.get(&t) {
                    self.step(Token::RatRef(target));
                } else {
                    let (h, tl) = (*h, *tl);
                    self.step(Token::Pair);
                    self.cycle_memo.insert(t, self.cursor);
                    self.insert_term(h);
                    self.insert_term(tl);
                }
            }
            Cell::Compound(f, args) => {
                if let Some(&target) = self.cycle_memo.get(&t) {
                    self.step(Token::RatRef(target));
                } else {
                    let f = *f;
                    let args: Vec<CellRef> = args.to_vec();
                    self.step(Token::Functor(f, args.len() as u16));
                    self.cycle_memo.insert(t, self.cursor);
                    for a in args {
                        self.insert_term(a);
                    }
                }
            }
        }
    }
}

/// Parses a root-to-leaf token path back into heap terms.
struct Reconstructor<'a, 'b> {
    path: &'a [(Token, TrieNodeId)],
    pos: usize,
    store: &'b mut CellStore,
    vars: HashMap<u16, CellRef>,
    built: HashMap<TrieNodeId, CellRef>,
    pending: Vec<(CellRef, TrieNodeId)>,
}

impl Reconstructor<'_, '_> {
    fn parse(&mut self) -> Result<CellRef, CorruptionError> {
        let Some(&(tok, node_id)) = self.path.get(self.pos) else {
            return Err(CorruptionError("answer path ended mid-term".into()));
        };
        self.pos += 1;
        Ok(match tok {
            Token::Atom(s) => self.store.atom_id(s),
            Token::Int(n) => self.store.int(n),
            Token::Var(i) => *self
                .vars
                .entry(i)
                .or_insert_with(|| self.store.new_var()),
            Token::Pair => {
                let h = self.parse()?;
                let t = self.parse()?;
                let p = self.store.pair(h, t);
                self.built.insert(node_id, p);
                p
            }
            Token::Functor(f, arity) => {
                let mut args = Vec::with_capacity(arity as usize);
                for _ in 0..arity {
                    args.push(self.parse()?);
                }
                let c = self.store.compound(f, args);
                self.built.insert(node_id, c);
                c
            }
            Token::RatRef(target) => {
                let v = self.store.new_var();
                self.pending.push((v, target));
                v
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{bisimilar, struct_equal, variant};
    use crate::term::{build, CellStore, LabeledLiteral, TermLiteral};

    fn cyclic_list(store: &mut CellStore, elems: &[i64]) -> CellRef {
        let lit = LabeledLiteral {
            defs: vec![(
                "L".into(),
                TermLiteral::List(
                    elems.iter().map(|&n| TermLiteral::Int(n)).collect(),
                    Some(Box::new(TermLiteral::Var("L".into()))),
                ),
            )],
            root: TermLiteral::Var("L".into()),
        };
        build(store, &lit).unwrap()
    }

    #[test]
    fn subgoal_insert_counts_nodes_like_the_table_design() {
        // p(X,1,Y) inserts three nodes; p(Z,1,b) adds only one more.
        let mut space = TableSpace::new();
        let mut store = CellStore::new();
        let p = store.symbols.intern("p");
        let entry = space.entry((p, 3));
        let x = store.new_var();
        let one = store.int(1);
        let y = store.new_var();
        let (f1, sf1, new1) = space.subgoal_check_insert(entry, &store, &[x, one, y]);
        assert!(new1);
        assert_eq!(sf1, vec![x, y]);
        fn subgoal_nodes(space: &TableSpace, store: &CellStore, p: SymbolId) -> usize {
            space
                .dump_subgoal_trie((p, 3), &store.symbols)
                .unwrap()
                .lines()
                .count()
        }
        assert_eq!(subgoal_nodes(&space, &store, p), 3);

        let z = store.new_var();
        let one2 = store.int(1);
        let b = store.atom("b");
        let (f2, _, new2) = space.subgoal_check_insert(entry, &store, &[z, one2, b]);
        assert!(new2);
        assert_ne!(f1, f2);
        assert_eq!(subgoal_nodes(&space, &store, p), 4);
    }

    #[test]
    fn repeat_call_is_variant_by_token_path() {
        let mut space = TableSpace::new();
        let mut store = CellStore::new();
        let p = store.symbols.intern("p");
        let f = store.symbols.intern("f");
        let entry = space.entry((p, 3));
        let x = store.new_var();
        let one = store.int(1);
        let y = store.new_var();
        let fy = store.compound(f, vec![y]);
        let (frame, sf, is_new) = space.subgoal_check_insert(entry, &store, &[x, one, fy]);
        assert!(is_new);
        assert_eq!(sf.len(), 2);

        let u = store.new_var();
        let one2 = store.int(1);
        let v = store.new_var();
        let fv = store.compound(f, vec![v]);
        let (frame2, sf2, is_new2) = space.subgoal_check_insert(entry, &store, &[u, one2, fv]);
        assert!(!is_new2);
        assert_eq!(frame, frame2);
        assert_eq!(sf2, vec![u, v]);
    }

    #[test]
    fn cyclic_list_has_figure_trie_shape() {
        // L=[1,2,3|L]: pair,1,pair,2,pair,3,ratref->first pair node.
        let mut space = TableSpace::new();
        let mut store = CellStore::new();
        let p = store.symbols.intern("p");
        let entry = space.entry((p, 1));
        let l = cyclic_list(&mut store, &[1, 2, 3]);
        let (_, _, is_new) = space.subgoal_check_insert(entry, &store, &[l]);
        assert!(is_new);
        let dump = space
            .dump_subgoal_trie((p, 1), &store.symbols)
            .unwrap();
        let expected = "\
1 pair
2 int(1)
3 pair
4 int(2)
5 pair
6 int(3)
7 ratref ->1
";
        assert_eq!(dump, expected);
        space.validate().unwrap();
    }

    #[test]
    fn answer_insert_shares_prefixes_and_detects_duplicates() {
        // {X=a, Y=f(V)} then {X=a, Y=b}: the atom node is shared; reinserting
        // {X=a, Y=b} is a duplicate.
        let mut space = TableSpace::new();
        let mut store = CellStore::new();
        let p = store.symbols.intern("p");
        let f = store.symbols.intern("f");
        let entry = space.entry((p, 2));
        let x = store.new_var();
        let y = store.new_var();
        let (frame, _, _) = space.subgoal_check_insert(entry, &store, &[x, y]);

        let a = store.atom("a");
        let v = store.new_var();
        let fv = store.compound(f, vec![v]);
        let (_, new1) = space.answer_check_insert(frame, &store, &[a, fv]);
        assert!(new1);
        let nodes_after_first = space.frame(frame).answers.node_count();

        let a2 = store.atom("a");
        let b = store.atom("b");
        let (_, new2) = space.answer_check_insert(frame, &store, &[a2, b]);
        assert!(new2);
        // shares the atom(a) node: only one new node added
        assert_eq!(
            space.frame(frame).answers.node_count(),
            nodes_after_first + 1
        );

        let a3 = store.atom("a");
        let b2 = store.atom("b");
        let (_, new3) = space.answer_check_insert(frame, &store, &[a3, b2]);
        assert!(!new3);
        assert_eq!(space.frame(frame).answer_leaves.len(), 2);
    }

    #[test]
    fn empty_substitution_answer_inserts_once() {
        let mut space = TableSpace::new();
        let mut store = CellStore::new();
        let p = store.symbols.intern("p");
        let entry = space.entry((p, 1));
        let a = store.atom("a");
        let (frame, sf, _) = space.subgoal_check_insert(entry, &store, &[a]);
        assert!(sf.is_empty());
        let (_, new1) = space.answer_check_insert(frame, &store, &[]);
        assert!(new1);
        let (_, new2) = space.answer_check_insert(frame, &store, &[]);
        assert!(!new2);
        let leaves = space.frame(frame).answer_leaves.clone();
        let terms = space
            .reconstruct_answer(frame, leaves[0], &mut store)
            .unwrap();
        assert!(terms.is_empty());
    }

    #[test]
    fn round_trip_cyclic_answer() {
        let mut space = TableSpace::new();
        let mut store = CellStore::new();
        let p = store.symbols.intern("bin");
        let entry = space.entry((p, 1));
        let l = store.new_var();
        let (frame, _, _) = space.subgoal_check_insert(entry, &store, &[l]);
        // answer {L = [0|L]}
        let ones = cyclic_list(&mut store, &[0]);
        let (leaf, is_new) = space.answer_check_insert(frame, &store, &[ones]);
        assert!(is_new);
        let dump = space.dump_answer_trie(frame, &store.symbols);
        assert_eq!(dump, "1 pair\n2 int(0)\n3 ratref ->1\n");
        let terms = space.reconstruct_answer(frame, leaf, &mut store).unwrap();
        assert_eq!(terms.len(), 1);
        assert!(bisimilar(&store, terms[0], ones));
        assert!(struct_equal(&store, terms[0], ones));
    }

    #[test]
    fn round_trip_acyclic_answer_is_variant() {
        let mut space = TableSpace::new();
        let mut store = CellStore::new();
        let p = store.symbols.intern("q");
        let f = store.symbols.intern("f");
        let entry = space.entry((p, 2));
        let x = store.new_var();
        let y = store.new_var();
        let (frame, _, _) = space.subgoal_check_insert(entry, &store, &[x, y]);
        let a = store.atom("a");
        let v = store.new_var();
        let fv = store.compound(f, vec![v, v]);
        let (leaf, _) = space.answer_check_insert(frame, &store, &[a, fv]);
        let terms = space.reconstruct_answer(frame, leaf, &mut store).unwrap();
        assert!(struct_equal(&store, terms[0], a));
        assert!(variant(&store, terms[1], fv));
    }

    #[test]
    fn shared_cycle_across_arguments_reuses_reference() {
        // p(L, L) with L=[1|L]: the second argument is one reference token.
        let mut space = TableSpace::new();
        let mut store = CellStore::new();
        let p = store.symbols.intern("p");
        let entry = space.entry((p, 2));
        let l = cyclic_list(&mut store, &[1]);
        let (frame, _, _) = space.subgoal_check_insert(entry, &store, &[l, l]);
        let dump = space.dump_subgoal_trie((p, 2), &store.symbols).unwrap();
        assert_eq!(dump, "1 pair\n2 int(1)\n3 ratref ->1\n4 ratref ->1\n");
        // round-trip through an answer trie keeps the sharing
        let (leaf, _) = space.answer_check_insert(frame, &store, &[]);
        let _ = leaf;
        space.validate().unwrap();
    }
}
