//! Static analysis of Python repositories: per-file facts, symbol tables,
//! call resolution, and the function-level call graph.

pub mod callgraph;
pub mod facts;
pub mod parse;
pub mod resolve;
pub mod symbols;

pub use callgraph::{
    build_call_graph, extract_repo, parse_repo, CallGraph, CallerRef, Diagnostics, Edge,
    EdgeKind, EdgeRecord,
};
pub use facts::{CallSite, ClassDecl, FileFacts, FunctionDecl, ImportBinding, ImportKind, Span};
pub use parse::{parse_file, parse_file_bytes};
pub use resolve::{RepoIndex, Resolution, Resolver};
pub use symbols::{build_symbol_table, ClassHierarchy, SymbolTable};
