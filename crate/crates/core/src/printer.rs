//! Printing of possibly-rational answer bindings.
//!
//! Every named query variable prints as `Name = Term`. While printing, a
//! revisit of a pair/compound cell on the current print path emits a name
//! instead of recursing: the query variable's own name when the cycle target
//! is that variable's root, another query variable's name when it is bound to
//! the target, and a fresh `_S<k>` with an extra `_S<k> = Term` equation for
//! interior unnamed cycles. Unbound variables print as `_<k>`, consistently
//! within one answer.

use std::collections::{HashMap, HashSet};

use serde_json::{json, Value};

use crate::engine::Answer;
use crate::term::{Cell, CellRef, CellStore};

/// Renders one answer as `Name = Term, ...` (plus trailing cycle equations),
/// or `true` when the query had no visible variables.
pub fn format_answer(answer: &Answer) -> String {
    Printer::new(&answer.store, &answer.bindings).format()
}

/// Renders explicit bindings from any store, same format as answers.
pub fn format_bindings(store: &CellStore, bindings: &[(String, CellRef)]) -> String {
    Printer::new(store, bindings).format()
}

/// Renders a single term without a `Name =` prefix. A term whose root is
/// itself cyclic falls back to an equation through a synthetic name, since
/// cycles are only expressible as equations.
pub fn format_term(store: &CellStore, cell: CellRef) -> String {
    if crate::rational::is_acyclic(store, cell) {
        let bindings = vec![("_T".to_string(), cell)];
        let mut p = Printer::new(store, &bindings);
        let root = store.deref(cell);
        let mut path = HashSet::new();
        let mut out = p.print(root, root, &mut path);
        let aux = std::mem::take(&mut p.aux_targets);
        for target in aux {
            let name = p.target_names[&target].clone();
            let mut path = HashSet::new();
            let text = p.print(target, target, &mut path);
            out.push_str(&format!(", {name} = {text}"));
        }
        out
    } else {
        format_bindings(store, &[("_T".to_string(), cell)])
    }
}

struct Printer<'a> {
    store: &'a CellStore,
    bindings: &'a [(String, CellRef)],
    /// Roots of named bindings, for preferring the variable's own name.
    root_names: HashMap<CellRef, String>,
    /// Names assigned to cycle-target cells.
    target_names: HashMap<CellRef, String>,
    /// `_S<k>` targets in discovery order, printed as extra equations.
    aux_targets: Vec<CellRef>,
    var_names: HashMap<CellRef, String>,
}

impl<'a> Printer<'a> {
    fn new(store: &'a CellStore, bindings: &'a [(String, CellRef)]) -> Self {
        let mut root_names = HashMap::new();
        for (name, cell) in bindings {
            root_names.entry(store.deref(*cell)).or_insert_with(|| name.clone());
        }
        let mut p = Printer {
            store,
            bindings,
            root_names,
            target_names: HashMap::new(),
            aux_targets: Vec::new(),
            var_names: HashMap::new(),
        };
        for (_, cell) in bindings {
            let mut on_path = Vec::new();
            p.find_targets(*cell, &mut on_path);
        }
        p
    }

    /// Marks every cell that some dereference path revisits.
    fn find_targets(&mut self, c: CellRef, on_path: &mut Vec<CellRef>) {
        let c = self.store.deref(c);
        match self.store.cell(c) {
            Cell::Pair(..) | Cell::Compound(..) => {
                if on_path.contains(&c) {
                    if !self.target_names.contains_key(&c) {
                        let name = match self.root_names.get(&c) {
                            Some(n) => n.clone(),
                            None => {
                                self.aux_targets.push(c);
                                format!("_S{}", self.aux_targets.len())
                            }
                        };
                        self.target_names.insert(c, name);
                    }
                    return;
                }
                if self.target_names.contains_key(&c) {
                    return; // already analyzed through another route
                }
                on_path.push(c);
                let children: Vec<CellRef> = match self.store.cell(c) {
                    Cell::Pair(h, t) => vec![*h, *t],
                    Cell::Compound(_, args) => args.to_vec(),
                    _ => unreachable!(),
                };
                for ch in children {
                    self.find_targets(ch, on_path);
                }
                on_path.pop();
            }
            _ => {}
        }
    }

    fn format(&mut self) -> String {
        if self.bindings.is_empty() {
            return "true".to_string();
        }
        let mut parts = Vec::new();
        for (name, cell) in self.bindings {
            let root = self.store.deref(*cell);
            let mut path = HashSet::new();
            let text = self.print(root, root, &mut path);
            parts.push(format!("{name} = {text}"));
        }
        let aux = std::mem::take(&mut self.aux_targets);
        for target in aux {
            let name = self.target_names[&target].clone();
            let mut path = HashSet::new();
            let text = self.print(target, target, &mut path);
            parts.push(format!("{name} = {text}"));
        }
        parts.join(", ")
    }

    /// The name a cell prints as instead of expanding, if any. The defining
    /// occurrence (printing the root of the current equation, not a revisit)
    /// expands.
    fn name_for(&self, c: CellRef, root: CellRef, path: &HashSet<CellRef>) -> Option<&str> {
        let name = self.target_names.get(&c)?;
        if path.contains(&c) || c != root {
            Some(name)
        } else {
            None
        }
    }

    fn print(&mut self, c: CellRef, root: CellRef, path: &mut HashSet<CellRef>) -> String {
        let c = self.store.deref(c);
        match self.store.cell(c) {
            Cell::Var(_) => self.var_name(c),
            Cell::Atom(s) => self.store.symbols.name(*s).to_string(),
            Cell::Int(n) => n.to_string(),
            Cell::Pair(..) => {
                if let Some(name) = self.name_for(c, root, path) {
                    return name.to_string();
                }
                self.print_list(c, root, path)
            }
            Cell::Compound(f, args) => {
                if let Some(name) = self.name_for(c, root, path) {
                    return name.to_string();
                }
                let (f, args) = (*f, args.to_vec());
                path.insert(c);
                let inner: Vec<String> =
                    args.iter().map(|&a| self.print(a, root, path)).collect();
                path.remove(&c);
                format!("{}({})", self.store.symbols.name(f), inner.join(","))
            }
        }
    }

    fn print_list(&mut self, c: CellRef, root: CellRef, path: &mut HashSet<CellRef>) -> String {
        let mut spine = Vec::new();
        let mut out = String::from("[");
        let mut at = c;
        loop {
            let Cell::Pair(h, t) = self.store.cell(at) else {
                unreachable!()
            };
            let (h, t) = (*h, *t);
            path.insert(at);
            spine.push(at);
            if spine.len() > 1 {
                out.push(',');
            }
            out.push_str(&self.print(h, root, path));
            let t = self.store.deref(t);
            match self.store.cell(t) {
                Cell::Pair(..) => {
                    if let Some(name) = self.name_for(t, root, path) {
                        out.push('|');
                        out.push_str(name);
                        out.push(']');
                        break;
                    }
                    at = t;
                }
                Cell::Atom(s) if self.store.symbols.name(*s) == "[]" => {
                    out.push(']');
                    break;
                }
                _ => {
                    out.push('|');
                    let tail = self.print(t, root, path);
                    out.push_str(&tail);
                    out.push(']');
                    break;
                }
            }
        }
        for s in spine {
            path.remove(&s);
        }
        out
    }

    fn var_name(&mut self, c: CellRef) -> String {
        let next = self.var_names.len() + 1;
        self.var_names
            .entry(c)
            .or_insert_with(|| format!("_{next}"))
            .clone()
    }
}

/// Renders one answer as JSON: terms as trees, cycles as path references
/// from each binding's root (`0`/`1` for a pair's head/tail, argument index
/// for compounds). A back reference renders as `{"cycle": k}` where `k`
/// indexes the binding's `cycles` array of target paths.
pub fn answer_json(answer: &Answer) -> Value {
    let store = &answer.store;
    let mut bindings = Vec::new();
    for (name, cell) in &answer.bindings {
        let mut cycles: Vec<Vec<usize>> = Vec::new();
        let mut var_names: HashMap<CellRef, String> = HashMap::new();
        let mut path_of: HashMap<CellRef, Vec<usize>> = HashMap::new();
        let term = json_term(
            store,
            *cell,
            &mut Vec::new(),
            &mut path_of,
            &mut cycles,
            &mut var_names,
        );
        bindings.push(json!({
            "var": name,
            "term": term,
            "cycles": cycles,
        }));
    }
    json!({ "bindings": bindings })
}

fn json_term(
    store: &CellStore,
    c: CellRef,
    path: &mut Vec<usize>,
    path_of: &mut HashMap<CellRef, Vec<usize>>,
    cycles: &mut Vec<Vec<usize>>,
    var_names: &mut HashMap<CellRef, String>,
) -> Value {
    let c = store.deref(c);
    match store.cell(c) {
        Cell::Var(_) => {
            let next = var_names.len() + 1;
            let name = var_names
                .entry(c)
                .or_insert_with(|| format!("_{next}"))
                .clone();
            json!({ "var": name })
        }
        Cell::Atom(s) => json!({ "atom": store.symbols.name(*s) }),
        Cell::Int(n) => json!({ "int": n }),
        Cell::Pair(h, t) => {
            if let Some(target) = path_of.get(&c) {
                let idx = cycles.iter().position(|p| p == target).unwrap_or_else(|| {
                    cycles.push(target.clone());
                    cycles.len() - 1
                });
                return json!({ "cycle": idx });
            }
            let (h, t) = (*h, *t);
            path_of.insert(c, path.clone());
            path.push(0);
            let hj = json_term(store, h, path, path_of, cycles, var_names);
            path.pop();
            path.push(1);
            let tj = json_term(store, t, path, path_of, cycles, var_names);
            path.pop();
            path_of.remove(&c);
            json!({ "pair": { "head": hj, "tail": tj } })
        }
        Cell::Compound(f, args) => {
            if let Some(target) = path_of.get(&c) {
                let idx = cycles.iter().position(|p| p == target).unwrap_or_else(|| {
                    cycles.push(target.clone());
                    cycles.len() - 1
                });
                return json!({ "cycle": idx });
            }
            let (f, args) = (*f, args.to_vec());
            path_of.insert(c, path.clone());
            let mut out_args = Vec::with_capacity(args.len());
            for (i, &a) in args.iter().enumerate() {
                path.push(i);
                out_args.push(json_term(store, a, path, path_of, cycles, var_names));
                path.pop();
            }
            path_of.remove(&c);
            json!({ "compound": { "functor": store.symbols.name(f), "args": out_args } })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::{build, LabeledLiteral, TermLiteral};

    fn answer_with(defs: Vec<(&str, TermLiteral)>, bind: Vec<(&str, &str)>) -> Answer {
        // builds terms in a fresh store and exposes chosen labels as bindings
        let mut store = CellStore::new();
        let lit = LabeledLiteral {
            defs: defs
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            root: TermLiteral::Var(defs[0].0.to_string()),
        };
        let _ = build(&mut store, &lit).unwrap();
        // rebuild to fetch each label root: build() maps labels to cells in
        // definition order starting at cell 0
        let mut bindings = Vec::new();
        for (var, label) in bind {
            let idx = defs.iter().position(|(n, _)| *n == label).unwrap();
            bindings.push((var.to_string(), CellRef(idx as u32)));
        }
        Answer { store, bindings }
    }

    fn list(items: Vec<TermLiteral>, tail: Option<TermLiteral>) -> TermLiteral {
        TermLiteral::List(items, tail.map(Box::new))
    }

    #[test]
    fn prints_root_cycle_with_own_name() {
        let ans = answer_with(
            vec![(
                "L",
                list(vec![TermLiteral::Int(0)], Some(TermLiteral::Var("L".into()))),
            )],
            vec![("L", "L")],
        );
        assert_eq!(format_answer(&ans), "L = [0|L]");
    }

    #[test]
    fn prints_inner_cycle_with_aux_equation() {
        // C = [1|S], S = [1|S]: inner unnamed cycle gets _S1.
        let ans = answer_with(
            vec![
                (
                    "C",
                    list(vec![TermLiteral::Int(1)], Some(TermLiteral::Var("S".into()))),
                ),
                (
                    "S",
                    list(vec![TermLiteral::Int(1)], Some(TermLiteral::Var("S".into()))),
                ),
            ],
            vec![("C", "C")],
        );
        assert_eq!(format_answer(&ans), "C = [1|_S1], _S1 = [1|_S1]");
    }

    #[test]
    fn prints_ground_acyclic_term() {
        let ans = answer_with(
            vec![(
                "X",
                TermLiteral::Compound("f".into(), vec![TermLiteral::Atom("a".into())]),
            )],
            vec![("X", "X")],
        );
        assert_eq!(format_answer(&ans), "X = f(a)");
    }

    #[test]
    fn prefers_other_binding_name_for_shared_cycle() {
        // X = [1|T], T = [2|T]: T names the inner cycle.
        let ans = answer_with(
            vec![
                (
                    "X",
                    list(vec![TermLiteral::Int(1)], Some(TermLiteral::Var("T".into()))),
                ),
                (
                    "T",
                    list(vec![TermLiteral::Int(2)], Some(TermLiteral::Var("T".into()))),
                ),
            ],
            vec![("X", "X"), ("T", "T")],
        );
        assert_eq!(format_answer(&ans), "X = [1|T], T = [2|T]");
    }

    #[test]
    fn unbound_vars_number_consistently() {
        let mut store = CellStore::new();
        let v = store.new_var();
        let w = store.new_var();
        let one = store.int(1);
        let nil = store.atom("[]");
        let p3 = store.pair(w, nil);
        let p2 = store.pair(v, p3);
        let p1 = store.pair(one, p2);
        let inner = store.pair(v, nil);
        let bindings = vec![("A".to_string(), p1), ("B".to_string(), inner)];
        let ans = Answer { store, bindings };
        assert_eq!(format_answer(&ans), "A = [1,_1,_2], B = [_1]");
    }

    #[test]
    fn json_encodes_cycles_as_paths() {
        let ans = answer_with(
            vec![(
                "L",
                list(
                    vec![TermLiteral::Int(1), TermLiteral::Int(2)],
                    Some(TermLiteral::Var("L".into())),
                ),
            )],
            vec![("L", "L")],
        );
        let v = answer_json(&ans);
        let b = &v["bindings"][0];
        assert_eq!(b["var"], "L");
        assert_eq!(b["cycles"][0], json!([]));
        // second tail is a cycle back to the root
        assert_eq!(b["term"]["pair"]["tail"]["pair"]["tail"], json!({"cycle": 0}));
    }

    #[test]
    fn empty_bindings_print_true() {
        let ans = Answer { store: CellStore::new(), bindings: vec![] };
        assert_eq!(format_answer(&ans), "true");
    }
}
