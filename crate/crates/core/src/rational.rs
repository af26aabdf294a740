//! Cycle-safe relational primitives over possibly-rational terms.
//!
//! Unification deliberately omits the occurs check: binding a variable to a
//! term containing it is how rational terms come into existence. Termination
//! on cyclic inputs is guaranteed by memoizing co-visited pair/compound cell
//! pairs, bounding any co-traversal by |cells(a)| * |cells(b)|.

use std::collections::{HashMap, HashSet};

use crate::term::{Cell, CellRef, CellStore, SymbolId, Trail};

/// Set of cell pairs already co-visited during a traversal of two terms.
type VisitedPairs = HashSet<(CellRef, CellRef)>;

/// Unifies two terms without an occurs check. On success all bindings are
/// trailed; on failure every intermediate binding is undone before returning.
pub fn unify(store: &mut CellStore, trail: &mut Trail, a: CellRef, b: CellRef) -> bool {
    let mark = trail.mark();
    let mut visited = VisitedPairs::new();
    if unify_rec(store, trail, a, b, &mut visited) {
        true
    } else {
        trail.undo_to(store, mark);
        false
    }
}

fn unify_rec(
    store: &mut CellStore,
    trail: &mut Trail,
    a: CellRef,
    b: CellRef,
    visited: &mut VisitedPairs,
) -> bool {
    let a = store.deref(a);
    let b = store.deref(b);
    if a == b {
        return true;
    }
    match (store.cell(a), store.cell(b)) {
        (Cell::Var(_), _) => {
            store.bind(trail, a, b);
            true
        }
        (_, Cell::Var(_)) => {
            store.bind(trail, b, a);
            true
        }
        (Cell::Atom(x), Cell::Atom(y)) => x == y,
        (Cell::Int(x), Cell::Int(y)) => x == y,
        (Cell::Pair(h1, t1), Cell::Pair(h2, t2)) => {
            if !visited.insert((a, b)) {
                return true;
            }
            let (h1, t1, h2, t2) = (*h1, *t1, *h2, *t2);
            unify_rec(store, trail, h1, h2, visited) && unify_rec(store, trail, t1, t2, visited)
        }
        (Cell::Compound(f1, args1), Cell::Compound(f2, args2)) => {
            if f1 != f2 || args1.len() != args2.len() {
                return false;
            }
            if !visited.insert((a, b)) {
                return true;
            }
            let pairs: Vec<(CellRef, CellRef)> =
                args1.iter().copied().zip(args2.iter().copied()).collect();
            pairs
                .into_iter()
                .all(|(x, y)| unify_rec(store, trail, x, y, visited))
        }
        _ => false,
    }
}

/// Structural equality (the `==` relation): true iff the two terms are
/// bisimilar, treating unbound variables as equal only when they are the
/// same cell. Creates no bindings.
pub fn struct_equal(store: &CellStore, a: CellRef, b: CellRef) -> bool {
    let mut visited = VisitedPairs::new();
    struct_equal_rec(store, a, b, &mut visited)
}

fn struct_equal_rec(store: &CellStore, a: CellRef, b: CellRef, visited: &mut VisitedPairs) -> bool {
    let a = store.deref(a);
    let b = store.deref(b);
    if a == b {
        return true;
    }
    match (store.cell(a), store.cell(b)) {
        (Cell::Atom(x), Cell::Atom(y)) => x == y,
        (Cell::Int(x), Cell::Int(y)) => x == y,
        (Cell::Pair(h1, t1), Cell::Pair(h2, t2)) => {
            if !visited.insert((a, b)) {
                return true;
            }
            struct_equal_rec(store, *h1, *h2, visited) && struct_equal_rec(store, *t1, *t2, visited)
        }
        (Cell::Compound(f1, args1), Cell::Compound(f2, args2)) => {
            if f1 != f2 || args1.len() != args2.len() {
                return false;
            }
            if !visited.insert((a, b)) {
                return true;
            }
            args1
                .iter()
                .zip(args2.iter())
                .all(|(&x, &y)| struct_equal_rec(store, x, y, visited))
        }
        _ => false,
    }
}

/// True iff there is a bijective renaming of unbound variables making the
/// terms bisimilar.
pub fn variant(store: &CellStore, a: CellRef, b: CellRef) -> bool {
    let mut visited = VisitedPairs::new();
    let mut fwd: HashMap<CellRef, CellRef> = HashMap::new();
    let mut bwd: HashMap<CellRef, CellRef> = HashMap::new();
    variant_rec(store, a, b, &mut visited, &mut fwd, &mut bwd)
}

fn variant_rec(
    store: &CellStore,
    a: CellRef,
    b: CellRef,
    visited: &mut VisitedPairs,
    fwd: &mut HashMap<CellRef, CellRef>,
    bwd: &mut HashMap<CellRef, CellRef>,
) -> bool {
    let a = store.deref(a);
    let b = store.deref(b);
    match (store.cell(a), store.cell(b)) {
        (Cell::Var(_), Cell::Var(_)) => {
            let f = *fwd.entry(a).or_insert(b);
            let g = *bwd.entry(b).or_insert(a);
            f == b && g == a
        }
        (Cell::Atom(x), Cell::Atom(y)) => x == y,
        (Cell::Int(x), Cell::Int(y)) => x == y,
        (Cell::Pair(h1, t1), Cell::Pair(h2, t2)) => {
            if !visited.insert((a, b)) {
                return true;
            }
            variant_rec(store, *h1, *h2, visited, fwd, bwd)
                && variant_rec(store, *t1, *t2, visited, fwd, bwd)
        }
        (Cell::Compound(f1, args1), Cell::Compound(f2, args2)) => {
            if f1 != f2 || args1.len() != args2.len() {
                return false;
            }
            if !visited.insert((a, b)) {
                return true;
            }
            args1
                .iter()
                .zip(args2.iter())
                .all(|(&x, &y)| variant_rec(store, x, y, visited, fwd, bwd))
        }
        _ => false,
    }
}

/// True iff no dereference path from `a` revisits a pair/compound cell.
pub fn is_acyclic(store: &CellStore, a: CellRef) -> bool {
    let mut on_path = HashSet::new();
    let mut done = HashSet::new();
    acyclic_rec(store, a, &mut on_path, &mut done)
}

fn acyclic_rec(
    store: &CellStore,
    r: CellRef,
    on_path: &mut HashSet<CellRef>,
    done: &mut HashSet<CellRef>,
) -> bool {
    let r = store.deref(r);
    match store.cell(r) {
        Cell::Var(_) | Cell::Atom(_) | Cell::Int(_) => true,
        Cell::Pair(..) | Cell::Compound(..) => {
            if done.contains(&r) {
                return true;
            }
            if !on_path.insert(r) {
                return false;
            }
            let children: Vec<CellRef> = match store.cell(r) {
                Cell::Pair(h, t) => vec![*h, *t],
                Cell::Compound(_, args) => args.to_vec(),
                _ => unreachable!(),
            };
            let ok = children
                .into_iter()
                .all(|c| acyclic_rec(store, c, on_path, done));
            on_path.remove(&r);
            if ok {
                done.insert(r);
            }
            ok
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum UnivError {
    #[error("=.. on an unbound variable")]
    Instantiation,
    #[error("=.. list must start with an atom")]
    BadFunctor,
    #[error("=.. on an empty list")]
    EmptyList,
}

/// The `=..` decomposition. Works on cyclic terms: it returns the top-level
/// decomposition without unfolding.
pub fn univ(store: &mut CellStore, a: CellRef) -> Result<Vec<CellRef>, UnivError> {
    let a = store.deref(a);
    match store.cell(a) {
        Cell::Var(_) => Err(UnivError::Instantiation),
        Cell::Atom(_) | Cell::Int(_) => Ok(vec![a]),
        Cell::Pair(h, t) => {
            let (h, t) = (*h, *t);
            let dot = store.atom(".");
            Ok(vec![dot, h, t])
        }
        Cell::Compound(f, args) => {
            let f = *f;
            let mut out = Vec::with_capacity(args.len() + 1);
            let args: Vec<CellRef> = args.to_vec();
            out.push(store.atom_id(f));
            out.extend(args);
            Ok(out)
        }
    }
}

/// Rebuilds a term from a `=..`-style list; the inverse of [`univ`].
pub fn univ_rebuild(store: &mut CellStore, parts: &[CellRef]) -> Result<CellRef, UnivError> {
    match parts {
        [] => Err(UnivError::EmptyList),
        [single] => {
            let r = store.deref(*single);
            match store.cell(r) {
                Cell::Atom(_) | Cell::Int(_) => Ok(r),
                _ => Err(UnivError::BadFunctor),
            }
        }
        [functor, args @ ..] => {
            let f = store.deref(*functor);
            let Cell::Atom(sym) = *store.cell(f) else {
                return Err(UnivError::BadFunctor);
            };
            if store.symbols.name(sym) == "." && args.len() == 2 {
                Ok(store.pair(args[0], args[1]))
            } else {
                Ok(store.compound(sym, args.to_vec()))
            }
        }
    }
}

/// Test oracle for rational-tree equality: unfolds both terms to depth
/// |cells(a)| * |cells(b)| + 1 and compares the finite trees. Memoizing on
/// (cell, cell, depth) keeps the comparison polynomial. By the product
/// automaton bound this decides bisimilarity; it is independent of the
/// co-traversal used by [`unify`] and [`struct_equal`].
pub fn bisimilar(store: &CellStore, a: CellRef, b: CellRef) -> bool {
    let depth = reachable_cells(store, a) * reachable_cells(store, b) + 1;
    let mut memo: HashMap<(CellRef, CellRef, usize), bool> = HashMap::new();
    compare_unfold(store, a, b, depth, &mut memo)
}

fn reachable_cells(store: &CellStore, root: CellRef) -> usize {
    let mut seen = HashSet::new();
    let mut stack = vec![root];
    while let Some(r) = stack.pop() {
        let r = store.deref(r);
        if !seen.insert(r) {
            continue;
        }
        match store.cell(r) {
            Cell::Pair(h, t) => {
                stack.push(*h);
                stack.push(*t);
            }
            Cell::Compound(_, args) => stack.extend(args.iter().copied()),
            _ => {}
        }
    }
    seen.len()
}

fn compare_unfold(
    store: &CellStore,
    a: CellRef,
    b: CellRef,
    depth: usize,
    memo: &mut HashMap<(CellRef, CellRef, usize), bool>,
) -> bool {
    let a = store.deref(a);
    let b = store.deref(b);
    if depth == 0 {
        return true;
    }
    if let Some(&r) = memo.get(&(a, b, depth)) {
        return r;
    }
    let result = match (store.cell(a), store.cell(b)) {
        (Cell::Var(_), Cell::Var(_)) => a == b,
        (Cell::Atom(x), Cell::Atom(y)) => x == y,
        (Cell::Int(x), Cell::Int(y)) => x == y,
        (Cell::Pair(h1, t1), Cell::Pair(h2, t2)) => {
            compare_unfold(store, *h1, *h2, depth - 1, memo)
                && compare_unfold(store, *t1, *t2, depth - 1, memo)
        }
        (Cell::Compound(f1, args1), Cell::Compound(f2, args2)) => {
            f1 == f2
                && args1.len() == args2.len()
                && args1
                    .iter()
                    .zip(args2.iter())
                    .all(|(&x, &y)| compare_unfold(store, x, y, depth - 1, memo))
        }
        _ => false,
    };
    memo.insert((a, b, depth), result);
    result
}

/// Convenience for tests and builtins: functor symbol of a compound/pair.
pub fn functor_of(store: &CellStore, r: CellRef) -> Option<(SymbolId, usize)> {
    match store.cell(store.deref(r)) {
        Cell::Compound(f, args) => Some((*f, args.len())),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::{build, LabeledLiteral, TermLiteral};

    fn list(items: Vec<TermLiteral>, tail: Option<TermLiteral>) -> TermLiteral {
        TermLiteral::List(items, tail.map(Box::new))
    }

    fn ints(ns: &[i64]) -> Vec<TermLiteral> {
        ns.iter().map(|&n| TermLiteral::Int(n)).collect()
    }

    fn cyclic_list(store: &mut CellStore, elems: &[i64]) -> CellRef {
        let lit = LabeledLiteral {
            defs: vec![(
                "L".into(),
                list(ints(elems), Some(TermLiteral::Var("L".into()))),
            )],
            root: TermLiteral::Var("L".into()),
        };
        build(store, &lit).unwrap()
    }

    #[test]
    fn unify_var_with_list_containing_it_builds_rational_term() {
        // X = [1|X] -> X is the infinite list of ones.
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let x = s.new_var();
        let one = s.int(1);
        let p = s.pair(one, x);
        assert!(unify(&mut s, &mut t, x, p));
        let ones = cyclic_list(&mut s, &[1]);
        assert!(bisimilar(&s, x, ones));
    }

    #[test]
    fn unify_period_one_with_period_two() {
        // A=[1|A], B=[1,1|B]: unifiable and equal.
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let a = cyclic_list(&mut s, &[1]);
        let b = cyclic_list(&mut s, &[1, 1]);
        assert!(bisimilar(&s, a, b));
        assert!(unify(&mut s, &mut t, a, b));
        assert!(struct_equal(&s, a, b));
    }

    #[test]
    fn unify_distinct_atoms_fails() {
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let a = s.atom("a");
        let b = s.atom("b");
        assert!(!unify(&mut s, &mut t, a, b));
    }

    #[test]
    fn unify_offset_cycles_fails_per_oracle() {
        // A=[1,2|A] vs B=[2,1|B]: heads differ, so not unifiable.
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let a = cyclic_list(&mut s, &[1, 2]);
        let b = cyclic_list(&mut s, &[2, 1]);
        assert!(!bisimilar(&s, a, b));
        let mark = t.mark();
        assert!(!unify(&mut s, &mut t, a, b));
        assert_eq!(t.mark(), mark, "failed unification left bindings");
    }

    #[test]
    fn section5_equalities_hold_after_unification() {
        // A=[1|A], B=[1,1|B], C=[1|A], A=B, B=C, A==B, B==C.
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let a = s.new_var();
        let b = s.new_var();
        let c = s.new_var();
        let one = s.int(1);
        let pa = s.pair(one, a);
        assert!(unify(&mut s, &mut t, a, pa));
        let one2 = s.int(1);
        let one3 = s.int(1);
        let inner = s.pair(one3, b);
        let pb = s.pair(one2, inner);
        assert!(unify(&mut s, &mut t, b, pb));
        let one4 = s.int(1);
        let pc = s.pair(one4, a);
        assert!(unify(&mut s, &mut t, c, pc));
        assert!(unify(&mut s, &mut t, a, b));
        assert!(unify(&mut s, &mut t, b, c));
        assert!(struct_equal(&s, a, b));
        assert!(struct_equal(&s, b, c));
    }

    #[test]
    fn struct_equal_distinct_unbound_vars_false() {
        let mut s = CellStore::new();
        let x = s.new_var();
        let y = s.new_var();
        assert!(!struct_equal(&s, x, y));
        assert!(struct_equal(&s, x, x));
    }

    #[test]
    fn struct_equal_shifted_representation_of_same_word() {
        // A=[1,2|A] vs the three-cell representation [1|[2,1|cyc]] of the
        // same infinite word.
        let mut s = CellStore::new();
        let a = cyclic_list(&mut s, &[1, 2]);
        let lit = LabeledLiteral {
            defs: vec![(
                "M".into(),
                list(ints(&[2, 1]), Some(TermLiteral::Var("M".into()))),
            )],
            root: list(ints(&[1]), Some(TermLiteral::Var("M".into()))),
        };
        let b = build(&mut s, &lit).unwrap();
        assert!(bisimilar(&s, a, b));
        assert!(struct_equal(&s, a, b));
    }

    #[test]
    fn variant_examples() {
        let mut s = CellStore::new();
        let f = s.symbols.intern("p");
        let x = s.new_var();
        let y = s.new_var();
        let u = s.new_var();
        let v = s.new_var();
        let pxy = s.compound(f, vec![x, y]);
        let puv = s.compound(f, vec![u, v]);
        assert!(variant(&s, pxy, puv));
        let pxx = s.compound(f, vec![x, x]);
        assert!(!variant(&s, pxx, puv));
        assert!(!variant(&s, puv, pxx));
    }

    #[test]
    fn acyclic_examples() {
        let mut s = CellStore::new();
        let a = s.atom("a");
        assert!(is_acyclic(&s, a));
        let l = cyclic_list(&mut s, &[1]);
        assert!(!is_acyclic(&s, l));
        // f(a, [1|L], L) with L=[1|L] is cyclic through both args.
        let f = s.symbols.intern("f");
        let one = s.int(1);
        let p = s.pair(one, l);
        let term = s.compound(f, vec![a, p, l]);
        assert!(!is_acyclic(&s, term));
        // an unbound variable is acyclic
        let v = s.new_var();
        assert!(is_acyclic(&s, v));
    }

    #[test]
    fn univ_examples() {
        let mut s = CellStore::new();
        let f = s.symbols.intern("f");
        let a = s.atom("a");
        let b = s.atom("b");
        let fab = s.compound(f, vec![a, b]);
        let parts = univ(&mut s, fab).unwrap();
        assert_eq!(parts.len(), 3);
        assert_eq!(s.cell(parts[0]), &Cell::Atom(f));
        assert_eq!(parts[1], a);

        let one = s.int(1);
        let tail = s.new_var();
        let p = s.pair(one, tail);
        let parts = univ(&mut s, p).unwrap();
        assert_eq!(parts.len(), 3);
        let Cell::Atom(dot) = *s.cell(parts[0]) else {
            panic!()
        };
        assert_eq!(s.symbols.name(dot), ".");

        let rebuilt = univ_rebuild(&mut s, &parts).unwrap();
        assert!(struct_equal(&s, rebuilt, p));

        let v = s.new_var();
        assert_eq!(univ(&mut s, v), Err(UnivError::Instantiation));
    }

    #[test]
    fn bisimilar_examples() {
        let mut s = CellStore::new();
        let a = cyclic_list(&mut s, &[1]);
        assert!(bisimilar(&s, a, a));
        let b = cyclic_list(&mut s, &[1, 1]);
        assert!(bisimilar(&s, a, b));
        let c = cyclic_list(&mut s, &[1, 2]);
        let d = cyclic_list(&mut s, &[1, 2, 1]);
        assert!(!bisimilar(&s, c, d));
    }

    #[test]
    fn unify_binds_shared_tail_across_cycles() {
        // A=[1,2|A] unified with B=[1,2,1,2|B] succeeds (same word).
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let a = cyclic_list(&mut s, &[1, 2]);
        let b = cyclic_list(&mut s, &[1, 2, 1, 2]);
        assert!(bisimilar(&s, a, b));
        assert!(unify(&mut s, &mut t, a, b));
    }
}
