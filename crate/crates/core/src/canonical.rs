//! Canonical representation for rational terms.
//!
//! A rational term has many heap representations (`A=[1|A]` and `B=[1,1|B]`
//! denote the same infinite list). [`canonical_term`] rewrites every rational
//! part of a term to its shortest-unfolding form by fragmenting the term into
//! its cyclic subterms, rebuilding each fragment acyclically with an open end
//! where the cycle was, and then re-closing the cycle at the innermost
//! fragment whose closure reproduces the original term. Closures that do not
//! reproduce the original propagate their open end to the parent fragment.

use crate::rational::{is_acyclic, struct_equal, univ, univ_rebuild};
use crate::term::{CellRef, CellStore, Trail};

/// Converts the rational parts of `t` to canonical form. Acyclic inputs are
/// returned unchanged.
pub fn canonical_term(store: &mut CellStore, trail: &mut Trail, t: CellRef) -> CellRef {
    let t = store.deref(t);
    if is_acyclic(store, t) {
        return t;
    }
    let in_list = univ(store, t).expect("cyclic terms decompose");
    let open_end = store.new_var();
    let mut stack = vec![t];
    let out_list = decompose_cyclic_term(store, trail, t, &in_list, open_end, &mut stack);
    let canonical = univ_rebuild(store, &out_list).expect("rebuilt from a univ list");
    // Close the outermost cycle (or just name the result when no open end
    // propagated this far).
    let oe = store.deref(open_end);
    if oe != store.deref(canonical) {
        if let crate::term::Cell::Var(None) = store.cell(oe) {
            store.bind(trail, oe, canonical);
        }
    }
    store.deref(canonical)
}

/// One decomposition step over the component list of a cyclic term. Clause
/// order is committed, mirroring the cut-terminated clauses of the source
/// algorithm:
///   1. empty list terminates;
///   2. acyclic components are copied verbatim;
///   3. a component equal to the term being decomposed becomes the open end;
///   4. an unvisited cyclic component is decomposed recursively, then a trial
///      closure keeps the rebuilt fragment only if it equals the original,
///      otherwise its open end is propagated upward;
///   5. a component equal to an ancestor on the stack becomes the open end.
fn decompose_cyclic_term(
    store: &mut CellStore,
    trail: &mut Trail,
    cyclic_term: CellRef,
    components: &[CellRef],
    open_end: CellRef,
    stack: &mut Vec<CellRef>,
) -> Vec<CellRef> {
    let mut out = Vec::with_capacity(components.len());
    for &term in components {
        if is_acyclic(store, term) {
            out.push(term);
        } else if struct_equal(store, cyclic_term, term) {
            out.push(open_end);
        } else if !in_stack(store, term, stack) {
            let in_list = univ(store, term).expect("cyclic component decomposes");
            let open_end2 = store.new_var();
            stack.push(term);
            let out_list =
                decompose_cyclic_term(store, trail, term, &in_list, open_end2, stack);
            stack.pop();
            let candidate = univ_rebuild(store, &out_list).expect("rebuilt from a univ list");
            let mark = trail.mark();
            store.bind(trail, store.deref(open_end2), candidate);
            if struct_equal(store, candidate, term) {
                // Trial closure reproduced the original: keep it.
            } else {
                trail.undo_to(store, mark);
                let oe2 = store.deref(open_end2);
                let oe = store.deref(open_end);
                if oe2 != oe {
                    store.bind(trail, oe2, oe);
                }
            }
            out.push(candidate);
        } else {
            out.push(open_end);
        }
    }
    out
}

fn in_stack(store: &CellStore, term: CellRef, stack: &[CellRef]) -> bool {
    stack.iter().any(|&s| struct_equal(store, term, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::bisimilar;
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

    fn pair_count(store: &CellStore, root: CellRef) -> usize {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        let mut stack = vec![root];
        let mut n = 0;
        while let Some(r) = stack.pop() {
            let r = store.deref(r);
            if !seen.insert(r) {
                continue;
            }
            match store.cell(r) {
                crate::term::Cell::Pair(h, t) => {
                    n += 1;
                    stack.push(*h);
                    stack.push(*t);
                }
                crate::term::Cell::Compound(_, args) => stack.extend(args.iter().copied()),
                _ => {}
            }
        }
        n
    }

    #[test]
    fn period_four_list_canonicalizes_to_period_two() {
        // L=[1,2,1,2|L] -> L0=[1,2|L0]
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let l = cyclic_list(&mut s, &[1, 2, 1, 2]);
        let c = canonical_term(&mut s, &mut t, l);
        assert!(bisimilar(&s, l, c));
        assert_eq!(pair_count(&s, c), 2);
        let expected = cyclic_list(&mut s, &[1, 2]);
        assert!(struct_equal(&s, c, expected));
    }

    #[test]
    fn double_ones_shares_canonical_with_single_ones() {
        // B=[1,1|B] -> B0=[1|B0], struct-equal to canonical of A=[1|A].
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let b = cyclic_list(&mut s, &[1, 1]);
        let cb = canonical_term(&mut s, &mut t, b);
        let a = cyclic_list(&mut s, &[1]);
        let ca = canonical_term(&mut s, &mut t, a);
        assert!(struct_equal(&s, cb, ca));
        assert_eq!(pair_count(&s, cb), 1);
    }

    #[test]
    fn nested_compound_shortcut() {
        // F=f(a,f(a,F,b),b) -> F0=f(a,F0,b)
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let lit = LabeledLiteral {
            defs: vec![(
                "F".into(),
                TermLiteral::Compound(
                    "f".into(),
                    vec![
                        TermLiteral::Atom("a".into()),
                        TermLiteral::Compound(
                            "f".into(),
                            vec![
                                TermLiteral::Atom("a".into()),
                                TermLiteral::Var("F".into()),
                                TermLiteral::Atom("b".into()),
                            ],
                        ),
                        TermLiteral::Atom("b".into()),
                    ],
                ),
            )],
            root: TermLiteral::Var("F".into()),
        };
        let f = build(&mut s, &lit).unwrap();
        let c = canonical_term(&mut s, &mut t, f);
        assert!(bisimilar(&s, f, c));
        // one compound cell whose middle argument cycles straight back
        let crate::term::Cell::Compound(_, args) = s.cell(s.deref(c)) else {
            panic!("expected compound");
        };
        assert_eq!(args.len(), 3);
        assert_eq!(s.deref(args[1]), s.deref(c));
    }

    #[test]
    fn acyclic_terms_are_unchanged() {
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let f = s.symbols.intern("f");
        let a = s.atom("a");
        let b = s.atom("b");
        let fab = s.compound(f, vec![a, b]);
        let c = canonical_term(&mut s, &mut t, fab);
        assert_eq!(c, fab);
        let v = s.new_var();
        assert_eq!(canonical_term(&mut s, &mut t, v), v);
    }

    #[test]
    fn decomposition_propagates_open_end_for_shifted_fragment() {
        // [1,2,1,2|L]: closure at the [2|...] fragment fails, closure at the
        // whole succeeds; lasso [1,1,2|cyc] keeps its one-element prefix.
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let lit = LabeledLiteral {
            defs: vec![(
                "M".into(),
                list(ints(&[1, 2]), Some(TermLiteral::Var("M".into()))),
            )],
            root: list(ints(&[1]), Some(TermLiteral::Var("M".into()))),
        };
        let lasso = build(&mut s, &lit).unwrap();
        let c = canonical_term(&mut s, &mut t, lasso);
        assert!(bisimilar(&s, lasso, c));
        assert_eq!(pair_count(&s, c), 3);
    }

    #[test]
    fn self_cycle_closes_in_one_fragment() {
        let mut s = CellStore::new();
        let mut t = Trail::new();
        let l = cyclic_list(&mut s, &[1]);
        let c = canonical_term(&mut s, &mut t, l);
        assert!(bisimilar(&s, l, c));
        assert_eq!(pair_count(&s, c), 1);
    }

    #[test]
    fn idempotent_on_samples() {
        let mut s = CellStore::new();
        let mut t = Trail::new();
        for elems in [&[1i64][..], &[1, 2], &[1, 2, 1, 2], &[2, 2, 1]] {
            let l = cyclic_list(&mut s, elems);
            let c1 = canonical_term(&mut s, &mut t, l);
            let c2 = canonical_term(&mut s, &mut t, c1);
            assert!(struct_equal(&s, c1, c2));
        }
    }
}
