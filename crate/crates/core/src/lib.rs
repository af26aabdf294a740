//! A desk-scale tabled logic programming engine whose table space,
//! unification, and answer handling natively support rational (cyclic) terms.
//!
//! The crate provides:
//!
//! - an arena term representation where cycles are variable cells bound into
//!   enclosing structure ([`term`]);
//! - occurs-check-free unification and cycle-safe term predicates
//!   ([`rational`]);
//! - conversion of rational terms to canonical form ([`canonical`]);
//! - a two-level trie table space extended with rational-reference tokens
//!   ([`table`]);
//! - a resolution engine with inductive and coinductive tabling plus the
//!   stack-based coinductive program transformation ([`engine`]);
//! - a reader and printer for the restricted Prolog-like source language
//!   ([`reader`], [`printer`]).

pub mod canonical;
pub mod engine;
pub mod printer;
pub mod program;
pub mod rational;
pub mod reader;
pub mod table;
pub mod term;

pub use engine::{Answer, EngineError, Machine, Options};
pub use program::{Program, TabledMode};
pub use term::{Cell, CellRef, CellStore, SymbolId, Trail};
