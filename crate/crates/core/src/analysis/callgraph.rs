use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::facts::{CallSite, FileFacts, FunctionDecl};
use super::parse::parse_file_bytes;
use super::resolve::{RepoIndex, Resolution, Resolver};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Intra,
    Inter,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub caller: String,
    pub callee: String,
    pub kind: EdgeKind,
    pub site: CallSite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub module_path: String,
    pub decl: FunctionDecl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub files_parsed: usize,
    pub invalid_files: Vec<InvalidFile>,
    pub nodes: usize,
    pub edges: usize,
    pub call_sites: usize,
    pub resolved: usize,
    pub ambiguous: usize,
    pub external: usize,
    pub unresolved: usize,
    pub unresolved_reasons: BTreeMap<String, usize>,
    /// Calls at module or class level; they have no caller function.
    pub module_level_calls: usize,
    /// In-repository call-site hits counting every candidate of an ambiguous site.
    pub hits_all_candidates: usize,
    /// In-repository call-site hits counting only the first candidate.
    pub hits_first_candidate: usize,
}

/// Count of edges per (caller, callee) pair.
pub type EdgeMultiset = BTreeMap<(String, String), usize>;

/// Function-level call graph with mirrored `calls` / `calledby` indexes.
/// Both indexes hold positions into `edges`, so each edge has exactly one
/// entry on either side.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraph {
    pub nodes: BTreeMap<String, NodeInfo>,
    pub edges: Vec<Edge>,
    calls: BTreeMap<String, Vec<usize>>,
    calledby: BTreeMap<String, Vec<usize>>,
    pub diagnostics: Diagnostics,
}

/// One direct caller of a target with its call sites on that target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallerRef {
    pub qname: String,
    pub module_path: String,
    pub decl: FunctionDecl,
    pub sites: Vec<CallSite>,
    /// Every edge from this caller to the target is ambiguous.
    pub ambiguous: bool,
}

impl CallerRef {
    /// Complete caller definition, dedented.
    pub fn text(&self) -> &str {
        &self.decl.source_text
    }
}

impl CallGraph {
    pub fn add_node(&mut self, module_path: &str, decl: FunctionDecl) {
        self.nodes.insert(
            decl.qname.clone(),
            NodeInfo {
                module_path: module_path.to_string(),
                decl,
            },
        );
    }

    pub fn add_edge(&mut self, edge: Edge) {
        let idx = self.edges.len();
        self.calls.entry(edge.caller.clone()).or_default().push(idx);
        self.calledby.entry(edge.callee.clone()).or_default().push(idx);
        self.edges.push(edge);
    }

    pub fn calls_of(&self, caller: &str) -> impl Iterator<Item = &Edge> {
        self.calls
            .get(caller)
            .into_iter()
            .flatten()
            .map(|&i| &self.edges[i])
    }

    pub fn calledby_of(&self, callee: &str) -> impl Iterator<Item = &Edge> {
        self.calledby
            .get(callee)
            .into_iter()
            .flatten()
            .map(|&i| &self.edges[i])
    }

    /// Edge multisets as seen from each index: `calls` as (caller, callee)
    /// and `calledby` flipped back to (caller, callee).
    pub fn edge_multisets(&self) -> (EdgeMultiset, EdgeMultiset) {
        let mut calls = BTreeMap::new();
        for (caller, idxs) in &self.calls {
            for &i in idxs {
                *calls
                    .entry((caller.clone(), self.edges[i].callee.clone()))
                    .or_insert(0) += 1;
            }
        }
        let mut calledby = BTreeMap::new();
        for (callee, idxs) in &self.calledby {
            for &i in idxs {
                *calledby
                    .entry((self.edges[i].caller.clone(), callee.clone()))
                    .or_insert(0) += 1;
            }
        }
        (calls, calledby)
    }

    pub fn is_transpose_consistent(&self) -> bool {
        let (a, b) = self.edge_multisets();
        let total: usize = a.values().sum();
        a == b && total == self.edges.len()
    }

    /// One-hop callers of `target`, ordered by (module path, start line).
    pub fn direct_callers(&self, target: &str) -> Vec<CallerRef> {
        let mut by_caller: BTreeMap<&str, (Vec<CallSite>, bool)> = BTreeMap::new();
        for e in self.calledby_of(target) {
            let slot = by_caller
                .entry(e.caller.as_str())
                .or_insert_with(|| (Vec::new(), true));
            slot.0.push(e.site.clone());
            slot.1 &= e.kind == EdgeKind::Ambiguous;
        }
        let mut out: Vec<CallerRef> = by_caller
            .into_iter()
            .filter_map(|(q, (sites, ambiguous))| {
                let node = self.nodes.get(q)?;
                Some(CallerRef {
                    qname: q.to_string(),
                    module_path: node.module_path.clone(),
                    decl: node.decl.clone(),
                    sites,
                    ambiguous,
                })
            })
            .collect();
        out.sort_by(|a, b| {
            (a.module_path.as_str(), a.decl.span.start, a.qname.as_str()).cmp(&(
                b.module_path.as_str(),
                b.decl.span.start,
                b.qname.as_str(),
            ))
        });
        out
    }

    pub fn edge_records(&self) -> impl Iterator<Item = EdgeRecord> + '_ {
        self.edges.iter().map(|e| EdgeRecord {
            caller: e.caller.clone(),
            callee: e.callee.clone(),
            file: self
                .nodes
                .get(&e.caller)
                .map(|n| n.module_path.clone())
                .unwrap_or_default(),
            line: e.site.line,
            col: e.site.column,
            kind: e.kind,
        })
    }
}

/// Flat edge record used by the JSON-lines export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub caller: String,
    pub callee: String,
    pub file: String,
    pub line: usize,
    pub col: usize,
    pub kind: EdgeKind,
}

/// Build the call graph over already-parsed files.
pub fn build_call_graph(all_facts: &[FileFacts]) -> CallGraph {
    let index = RepoIndex::build(all_facts);
    let mut graph = CallGraph::default();
    let mut diag = Diagnostics {
        files_parsed: all_facts.len(),
        ..Diagnostics::default()
    };
    for facts in all_facts {
        for f in &facts.functions {
            graph.add_node(&facts.module_path, f.clone());
        }
    }
    let resolutions: Vec<Vec<Resolution>> = all_facts
        .par_iter()
        .enumerate()
        .map(|(i, facts)| {
            let r = Resolver::new(&index, facts, i);
            facts.calls.iter().map(|s| r.resolve_call(s)).collect()
        })
        .collect();

    for (facts, resolved) in all_facts.iter().zip(resolutions) {
        diag.module_level_calls += facts.module_level_calls;
        for (site, res) in facts.calls.iter().zip(resolved) {
            diag.call_sites += 1;
            match res {
                Resolution::Resolved { candidates } => {
                    let ambiguous = candidates.len() > 1;
                    if ambiguous {
                        diag.ambiguous += 1;
                    } else {
                        diag.resolved += 1;
                    }
                    diag.hits_all_candidates += candidates.len();
                    diag.hits_first_candidate += 1;
                    for callee in candidates {
                        let kind = if ambiguous {
                            EdgeKind::Ambiguous
                        } else if index.file_of_function(&callee)
                            == index.file_of_function(&site.caller_qname)
                        {
                            EdgeKind::Intra
                        } else {
                            EdgeKind::Inter
                        };
                        let mut site = site.clone();
                        site.resolved_callee = Some(callee.clone());
                        graph.add_edge(Edge {
                            caller: site.caller_qname.clone(),
                            callee,
                            kind,
                            site,
                        });
                    }
                }
                Resolution::External { .. } => diag.external += 1,
                Resolution::Unresolved { reason } => {
                    diag.unresolved += 1;
                    *diag.unresolved_reasons.entry(reason).or_insert(0) += 1;
                }
            }
        }
    }
    diag.nodes = graph.nodes.len();
    diag.edges = graph.edges.len();
    graph.diagnostics = diag;
    graph
}

/// Parse every `.py` file under `root` (sorted by relative path). Files that
/// fail to decode or parse are returned separately.
pub fn parse_repo(root: &Path) -> Result<(Vec<FileFacts>, Vec<InvalidFile>)> {
    let files = python_files(root)?;
    let parsed: Vec<(String, Result<FileFacts>)> = files
        .par_iter()
        .map(|rel| {
            let path = root.join(rel);
            let res = std::fs::read(&path)
                .map_err(|e| Error::io(&path, e))
                .and_then(|bytes| parse_file_bytes(&bytes, rel));
            (rel.clone(), res)
        })
        .collect();
    let mut facts = Vec::new();
    let mut invalid = Vec::new();
    for (rel, res) in parsed {
        match res {
            Ok(f) => facts.push(f),
            Err(e @ (Error::Syntax { .. } | Error::Decode { .. })) => {
                log::warn!("skipping {rel}: {e}");
                invalid.push(InvalidFile {
                    path: rel,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((facts, invalid))
}

/// Parse a repository and build its call graph, recording invalid files.
pub fn extract_repo(root: &Path) -> Result<(Vec<FileFacts>, CallGraph)> {
    let (facts, invalid) = parse_repo(root)?;
    let mut graph = build_call_graph(&facts);
    graph.diagnostics.invalid_files = invalid;
    Ok((facts, graph))
}

/// Repository-relative paths of Python files, '/'-separated and sorted.
/// Hidden directories are skipped.
pub fn python_files(root: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let walker = WalkDir::new(root).sort_by_file_name().into_iter();
    for entry in walker.filter_entry(|e| {
        e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.')
    }) {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file()
            && entry.path().extension().is_some_and(|x| x == "py")
        {
            let rel = entry
                .path()
                .strip_prefix(root)
                .unwrap_or(entry.path())
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.push(rel);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::parse::parse_file;

    fn graph(files: &[(&str, &str)]) -> CallGraph {
        let facts: Vec<_> = files.iter().map(|(p, s)| parse_file(s, p).unwrap()).collect();
        build_call_graph(&facts)
    }

    #[test]
    fn single_function_no_edges() {
        let g = graph(&[("m.py", "def f(): pass\n")]);
        assert_eq!(g.nodes.len(), 1);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn inter_file_edge() {
        let g = graph(&[
            ("a.py", "def f():\n    pass\n"),
            ("b.py", "from a import f\n\ndef caller():\n    f()\n"),
        ]);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].caller, "b.caller");
        assert_eq!(g.edges[0].callee, "a.f");
        assert_eq!(g.edges[0].kind, EdgeKind::Inter);
    }

    #[test]
    fn repeated_calls_are_a_multiset() {
        let g = graph(&[("m.py", "def f():\n    pass\n\ndef g():\n    f()\n    f()\n")]);
        let n = g.calls_of("m.g").filter(|e| e.callee == "m.f").count();
        assert_eq!(n, 2);
        assert!(g.is_transpose_consistent());
        assert_eq!(g.edges[0].kind, EdgeKind::Intra);
    }

    #[test]
    fn direct_callers_ordered_and_recursive() {
        let g = graph(&[
            ("b.py", "from a import f\n\ndef h():\n    f()\n"),
            ("a.py", "def f():\n    f()\n\ndef g():\n    f()\n"),
        ]);
        let callers: Vec<_> = g.direct_callers("a.f").into_iter().map(|c| c.qname).collect();
        assert_eq!(callers, vec!["a.f", "a.g", "b.h"]);
        assert!(g.direct_callers("b.h").is_empty());
    }

    #[test]
    fn diagnostics_count_unresolved() {
        let g = graph(&[("m.py", "import os\n\ndef f(cb):\n    cb()\n    os.getcwd()\n\nf(None)\n")]);
        assert_eq!(g.diagnostics.unresolved, 1);
        assert_eq!(g.diagnostics.external, 1);
        assert_eq!(g.diagnostics.module_level_calls, 1);
    }
}
