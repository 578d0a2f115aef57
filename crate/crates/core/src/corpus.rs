//! Target selection, caller-context expansion, the marker serialization, and
//! length statistics for training corpora.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{CallGraph, CallerRef, FunctionDecl};
use crate::error::{Error, Result};
use crate::pyast::PySource;
use crate::tokenize::{count_tokens, MARKERS};

pub const FUNC: &str = "<func>";
pub const CALLEDBY: &str = "<calledby>";
pub const DOCSTRING: &str = "<docstring>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPolicy {
    pub require_docstring: bool,
    pub assert_density: f64,
}

impl Default for TargetPolicy {
    fn default() -> Self {
        TargetPolicy {
            require_docstring: true,
            assert_density: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetFunction {
    pub repo_id: String,
    pub module_path: String,
    pub decl: FunctionDecl,
    /// Eligible callers in (module path, start line) order.
    pub callers: Vec<CallerRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub qname: String,
    pub reason: String,
}

/// Why a function counts as test code, if it does.
pub fn test_artifact_reason(module_path: &str, decl: &FunctionDecl, density: f64) -> Option<&'static str> {
    let parts: Vec<&str> = module_path.split('/').collect();
    let (file, dirs) = parts.split_last().unwrap_or((&"", &[]));
    if dirs.iter().any(|d| matches!(*d, "tests" | "test" | "testing")) {
        return Some("test directory");
    }
    if file.starts_with("test_") || file.ends_with("_test.py") || *file == "conftest.py" {
        return Some("test file");
    }
    if decl.name.starts_with("test_") || decl.name == "test" {
        return Some("test function");
    }
    if decl.statement_count > 0
        && decl.assert_count as f64 / decl.statement_count as f64 >= density
    {
        return Some("assertion density");
    }
    None
}

pub fn is_test_artifact(module_path: &str, decl: &FunctionDecl, density: f64) -> bool {
    test_artifact_reason(module_path, decl, density).is_some()
}

fn contains_marker(text: &str) -> bool {
    MARKERS.iter().any(|m| text.contains(m))
}

/// Body is only `pass`, `...`, or `raise NotImplementedError` after the docstring.
fn is_stub(decl: &FunctionDecl) -> bool {
    let parsed = PySource::parse(decl.source_text.as_str());
    let Some(def) = parsed.first_function() else {
        return true;
    };
    let Some(body) = def.child_by_field_name("body") else {
        return true;
    };
    let mut cursor = body.walk();
    let mut stmts: Vec<_> = body
        .named_children(&mut cursor)
        .filter(|n| n.kind() != "comment")
        .collect();
    if decl.docstring.is_some() && !stmts.is_empty() {
        stmts.remove(0);
    }
    stmts.iter().all(|s| {
        let t = parsed.node_text(*s).trim();
        s.kind() == "pass_statement"
            || t == "..."
            || (s.kind() == "raise_statement" && t.contains("NotImplementedError"))
    })
}

/// Callers of `target` that may serve as context: never the target itself,
/// never test code, never reached only through ambiguous edges.
pub fn eligible_callers(graph: &CallGraph, target: &str, policy: &TargetPolicy) -> Vec<CallerRef> {
    graph
        .direct_callers(target)
        .into_iter()
        .filter(|c| c.qname != target)
        .filter(|c| !c.ambiguous)
        .filter(|c| !is_test_artifact(&c.module_path, &c.decl, policy.assert_density))
        .collect()
}

pub fn select_targets(
    graph: &CallGraph,
    repo_id: &str,
    policy: &TargetPolicy,
) -> (Vec<TargetFunction>, Vec<Exclusion>) {
    let mut targets = Vec::new();
    let mut excluded = Vec::new();
    let mut nodes: Vec<_> = graph.nodes.values().collect();
    nodes.sort_by(|a, b| {
        (a.module_path.as_str(), a.decl.span.start, a.decl.qname.as_str()).cmp(&(
            b.module_path.as_str(),
            b.decl.span.start,
            b.decl.qname.as_str(),
        ))
    });
    for node in nodes {
        let decl = &node.decl;
        let reason = if let Some(r) = test_artifact_reason(&node.module_path, decl, policy.assert_density) {
            Some(r)
        } else if policy.require_docstring
            && decl.docstring.as_deref().is_none_or(|d| d.trim().is_empty())
        {
            Some("no description")
        } else if PySource::parse(decl.source_text.as_str()).has_error() {
            Some("syntactically invalid")
        } else if is_stub(decl) {
            Some("incomplete body")
        } else if contains_marker(&decl.source_text)
            || decl.docstring.as_deref().is_some_and(contains_marker)
        {
            Some("marker in text")
        } else {
            None
        };
        if let Some(r) = reason {
            excluded.push(Exclusion {
                qname: decl.qname.clone(),
                reason: r.into(),
            });
            continue;
        }
        let callers: Vec<CallerRef> = eligible_callers(graph, &decl.qname, policy)
            .into_iter()
            .filter(|c| !contains_marker(c.text()))
            .collect();
        if callers.is_empty() {
            excluded.push(Exclusion {
                qname: decl.qname.clone(),
                reason: "no external caller".into(),
            });
            continue;
        }
        targets.push(TargetFunction {
            repo_id: repo_id.to_string(),
            module_path: node.module_path.clone(),
            decl: decl.clone(),
            callers,
        });
    }
    (targets, excluded)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub task_len: usize,
    pub target_len: usize,
    pub total_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub id: String,
    pub repo: String,
    pub target_qname: String,
    pub module_path: String,
    pub header: String,
    pub callers: Vec<String>,
    pub caller_qnames: Vec<String>,
    pub docstring: String,
    pub body: String,
    pub serialized: String,
    pub token_counts: TokenCounts,
    pub hop_depth: u8,
    #[serde(default)]
    pub short: bool,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl TrainingInstance {
    fn refresh(&mut self) {
        self.serialized = serialize(&self.header, &self.callers, &self.docstring);
        let task_len = count_tokens(&self.serialized);
        let target_len = count_tokens(&self.body);
        self.token_counts = TokenCounts {
            task_len,
            target_len,
            total_len: task_len + target_len,
        };
        let mut h = Sha256::new();
        for part in [&self.repo, &self.target_qname, &self.serialized] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        self.id = hex::encode(&h.finalize()[..8]);
    }
}

/// `<func>\n{h}\n<calledby>\n{c_1}\n\n...\n\n{c_n}\n<docstring>\n{d}\n`
pub fn serialize(header: &str, callers: &[String], docstring: &str) -> String {
    format!(
        "{FUNC}\n{header}\n{CALLEDBY}\n{}\n{DOCSTRING}\n{docstring}\n",
        callers.join("\n\n")
    )
}

pub fn serialize_instance(instance: &TrainingInstance) -> String {
    serialize(&instance.header, &instance.callers, &instance.docstring)
}

/// Fields recovered from serialized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedFields {
    pub header: String,
    pub callers: Vec<String>,
    pub docstring: String,
}

/// Inverse of [`serialize`]. Callers are split at blank lines followed by a
/// non-whitespace character.
pub fn parse_serialized(text: &str) -> Result<SerializedFields> {
    let bad = |what: &str| Error::ParseFailure(format!("serialized instance: {what}"));
    let rest = text
        .strip_prefix(&format!("{FUNC}\n"))
        .ok_or_else(|| bad("missing <func>"))?;
    let cb = format!("\n{CALLEDBY}\n");
    let (header, rest) = rest.split_once(&cb).ok_or_else(|| bad("missing <calledby>"))?;
    let ds = format!("\n{DOCSTRING}\n");
    let (callers, rest) = rest.split_once(&ds).ok_or_else(|| bad("missing <docstring>"))?;
    let docstring = rest.strip_suffix('\n').ok_or_else(|| bad("missing final newline"))?;
    Ok(SerializedFields {
        header: header.to_string(),
        callers: split_callers(callers),
        docstring: docstring.to_string(),
    })
}

fn split_callers(segment: &str) -> Vec<String> {
    if segment.is_empty() {
        return Vec::new();
    }
    let bytes = segment.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i + 2 < bytes.len() {
        if bytes[i] == b'\n' && bytes[i + 1] == b'\n' && !bytes[i + 2].is_ascii_whitespace() {
            out.push(segment[start..i].to_string());
            start = i + 2;
            i += 2;
        } else {
            i += 1;
        }
    }
    out.push(segment[start..].to_string());
    out
}

fn instance_rng(seed: u64, qname: &str, index: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(qname.as_bytes());
    h.update((index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// One instance per eligible caller; with `n_train > 1` each instance keeps
/// its caller first and adds `n_train - 1` other callers sampled without
/// replacement.
pub fn expand_instances(target: &TargetFunction, n_train: usize, seed: u64) -> Result<Vec<TrainingInstance>> {
    if target.callers.is_empty() {
        return Err(Error::NoEligibleCaller(target.decl.qname.clone()));
    }
    if n_train == 0 {
        return Err(Error::Domain("n_train must be at least 1".into()));
    }
    let m = target.callers.len();
    let mut out = Vec::with_capacity(m);
    for (i, original) in target.callers.iter().enumerate() {
        let mut chosen = vec![original];
        let others: Vec<&CallerRef> = target
            .callers
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, c)| c)
            .collect();
        let extra = (n_train - 1).min(others.len());
        if extra > 0 {
            let mut rng = instance_rng(seed, &target.decl.qname, i);
            for k in rand::seq::index::sample(&mut rng, others.len(), extra) {
                chosen.push(others[k]);
            }
        }
        let mut inst = TrainingInstance {
            id: String::new(),
            repo: target.repo_id.clone(),
            target_qname: target.decl.qname.clone(),
            module_path: target.module_path.clone(),
            header: target.decl.header_text.clone(),
            callers: chosen.iter().map(|c| c.text().to_string()).collect(),
            caller_qnames: chosen.iter().map(|c| c.qname.clone()).collect(),
            docstring: target.decl.docstring.clone().unwrap_or_default(),
            body: target.decl.body_text.clone(),
            serialized: String::new(),
            token_counts: TokenCounts::default(),
            hop_depth: 1,
            short: chosen.len() < n_train,
            flags: Vec::new(),
        };
        if inst.short {
            inst.flags.push("short".into());
        }
        inst.refresh();
        out.push(inst);
    }
    Ok(out)
}

/// Prefix every caller snippet with the first eligible caller of that caller.
pub fn augment_two_hop(instance: &TrainingInstance, graph: &CallGraph, policy: &TargetPolicy) -> TrainingInstance {
    let mut out = instance.clone();
    out.hop_depth = 2;
    for (k, qname) in instance.caller_qnames.iter().enumerate() {
        let grand = eligible_callers(graph, qname, policy)
            .into_iter()
            .find(|g| g.qname != instance.target_qname && !contains_marker(g.text()));
        match grand {
            Some(g) => out.callers[k] = format!("{}\n{}", g.text(), instance.callers[k]),
            None => out.flags.push(format!("no_second_hop:{qname}")),
        }
    }
    out.refresh();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusOptions {
    pub n_train: usize,
    pub two_hop: bool,
    pub seed: u64,
    pub policy: TargetPolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusBuild {
    pub instances: Vec<TrainingInstance>,
    pub excluded: Vec<Exclusion>,
    pub targets: usize,
    pub dropped_duplicates: usize,
    pub dropped_unserializable: usize,
}

/// Expand every selected target of every graph into training instances.
pub fn build_corpus(graphs: &[(String, CallGraph)], opts: &CorpusOptions) -> Result<CorpusBuild> {
    let mut build = CorpusBuild::default();
    let mut work = Vec::new();
    for (repo, graph) in graphs {
        let (targets, excluded) = select_targets(graph, repo, &opts.policy);
        build.excluded.extend(excluded);
        build.targets += targets.len();
        work.extend(targets.into_iter().map(|t| (t, graph)));
    }
    let expanded: Vec<Vec<TrainingInstance>> = work
        .par_iter()
        .map(|(t, graph)| -> Result<Vec<TrainingInstance>> {
            let mut v = expand_instances(t, opts.n_train, opts.seed)?;
            if opts.two_hop {
                v = v.iter().map(|i| augment_two_hop(i, graph, &opts.policy)).collect();
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut seen = BTreeSet::new();
    for inst in expanded.into_iter().flatten() {
        let fields = parse_serialized(&inst.serialized);
        let round_trips = fields.is_ok_and(|f| {
            f.header == inst.header && f.callers == inst.callers && f.docstring == inst.docstring
        });
        if !round_trips {
            build.dropped_unserializable += 1;
            continue;
        }
        if !seen.insert((inst.target_qname.clone(), inst.serialized.clone())) {
            build.dropped_duplicates += 1;
            continue;
        }
        build.instances.push(inst);
    }
    Ok(build)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub median: usize,
    pub p90: usize,
    pub p95: usize,
    pub p99: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub task: ColumnStats,
    pub target: ColumnStats,
    pub total: ColumnStats,
}

/// Nearest-rank percentile over ascending values: the element at 1-based
/// rank ceil(p/100 · n).
pub fn nearest_rank(sorted: &[usize], percent: usize) -> usize {
    let n = sorted.len();
    let rank = (percent * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

fn column(values: impl Iterator<Item = usize>) -> ColumnStats {
    let mut v: Vec<usize> = values.collect();
    v.sort_unstable();
    let mean = v.iter().sum::<usize>() as f64 / v.len() as f64;
    ColumnStats {
        mean,
        median: nearest_rank(&v, 50),
        p90: nearest_rank(&v, 90),
        p95: nearest_rank(&v, 95),
        p99: nearest_rank(&v, 99),
    }
}

pub fn corpus_stats(instances: &[TrainingInstance]) -> Result<LengthStats> {
    if instances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(LengthStats {
        count: instances.len(),
        task: column(instances.iter().map(|i| i.token_counts.task_len)),
        target: column(instances.iter().map(|i| i.token_counts.target_len)),
        total: column(instances.iter().map(|i| i.token_counts.total_len)),
    })
}

/// Table with rows Mean/Median/90%/95%/99% and the three length columns.
pub fn format_stats_table(stats: &LengthStats) -> String {
    let mut s = format!(
        "{:<8}{:>14}{:>20}{:>14}\n",
        "", "Task Length", "Target Code Length", "Total Length"
    );
    s.push_str(&format!(
        "{:<8}{:>14.1}{:>20.1}{:>14.1}\n",
        "Mean", stats.task.mean, stats.target.mean, stats.total.mean
    ));
    type Getter = fn(&ColumnStats) -> usize;
    let rows: [(&str, Getter); 4] = [
        ("Median", |c| c.median),
        ("90%", |c| c.p90),
        ("95%", |c| c.p95),
        ("99%", |c| c.p99),
    ];
    for (label, get) in rows {
        s.push_str(&format!(
            "{:<8}{:>14}{:>20}{:>14}\n",
            label,
            get(&stats.task),
            get(&stats.target),
            get(&stats.total)
        ));
    }
    s
}

/// Sidecar record with model-specific token counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSidecar {
    pub id: String,
    pub task_len: usize,
    pub target_len: usize,
}

/// Replace built-in token counts with sidecar counts where ids match.
pub fn apply_token_sidecar(instances: &mut [TrainingInstance], sidecar: &[TokenSidecar]) -> usize {
    let map: std::collections::BTreeMap<&str, &TokenSidecar> =
        sidecar.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut applied = 0;
    for inst in instances {
        if let Some(s) = map.get(inst.id.as_str()) {
            inst.token_counts = TokenCounts {
                task_len: s.task_len,
                target_len: s.target_len,
                total_len: s.task_len + s.target_len,
            };
            applied += 1;
        }
    }
    applied
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{build_call_graph, parse_file};

    fn graph(files: &[(&str, &str)]) -> CallGraph {
        let facts: Vec<_> = files.iter().map(|(p, s)| parse_file(s, p).unwrap()).collect();
        build_call_graph(&facts)
    }

    #[test]
    fn serialization_layout() {
        let s = serialize("def f(x):", &["def g():\n    f(1)".to_string()], "adds one");
        assert_eq!(s, "<func>\ndef f(x):\n<calledby>\ndef g():\n    f(1)\n<docstring>\nadds one\n");
        let s = serialize("def f(x):", &["def g():\n    f(1)".to_string()], "");
        assert!(s.ends_with("<docstring>\n\n"));
        let back = parse_serialized(&s).unwrap();
        assert_eq!(back.docstring, "");
        assert_eq!(back.callers, vec!["def g():\n    f(1)"]);
    }

    #[test]
    fn multiple_callers_round_trip() {
        let callers = vec![
            "def g():\n    x = 1\n\n    f(x)".to_string(),
            "def h():\n    f(2)".to_string(),
        ];
        let s = serialize("def f(x):", &callers, "doc\n\nmore");
        let back = parse_serialized(&s).unwrap();
        assert_eq!(back.callers, callers);
        assert_eq!(back.docstring, "doc\n\nmore");
    }

    #[test]
    fn test_artifacts() {
        let g = graph(&[(
            "m.py",
            "def test_parse():\n    pass\n\ndef chk(x):\n    a = 1\n    assert a\n    assert x\n    b = 2\n    c = 3\n    d = 4\n    e = 5\n    assert b\n    assert c\n    f = 6\n",
        )]);
        let d = &g.nodes["m.test_parse"].decl;
        assert!(is_test_artifact("a/b.py", d, 0.3));
        let d = &g.nodes["m.chk"].decl;
        assert_eq!(d.statement_count, 10);
        assert_eq!(test_artifact_reason("a/b.py", d, 0.3), Some("assertion density"));
        assert_eq!(test_artifact_reason("a/tests/b.py", d, 0.9), Some("test directory"));
        assert!(!is_test_artifact("a/b.py", d, 0.5));
    }

    const REPO: &str = "def f(x):\n    \"\"\"Doubles.\"\"\"\n    return 2 * x\n\ndef nodoc(x):\n    return x\n\ndef rec(n):\n    \"\"\"Rec.\"\"\"\n    return rec(n - 1)\n\ndef a():\n    return f(1) + nodoc(1)\n\ndef b():\n    return f(2)\n\ndef c():\n    return f(3) + rec(2)\n";

    #[test]
    fn target_selection() {
        let g = graph(&[("m.py", REPO)]);
        let (targets, excluded) = select_targets(&g, "r", &TargetPolicy::default());
        let names: Vec<_> = targets.iter().map(|t| t.decl.qname.as_str()).collect();
        assert_eq!(names, vec!["m.f", "m.rec"]);
        let reason = |q: &str| excluded.iter().find(|e| e.qname == q).map(|e| e.reason.as_str());
        assert_eq!(reason("m.nodoc"), Some("no description"));
        assert_eq!(reason("m.a"), Some("no description"));
        let rec = &targets[1];
        assert_eq!(rec.callers.len(), 1);
        assert_eq!(rec.callers[0].qname, "m.c");

        let g = graph(&[("m.py", "def rec(n):\n    \"\"\"R.\"\"\"\n    return rec(n)\n")]);
        let (targets, excluded) = select_targets(&g, "r", &TargetPolicy::default());
        assert!(targets.is_empty());
        assert_eq!(excluded[0].reason, "no external caller");
    }

    #[test]
    fn expansion_counts_and_determinism() {
        let g = graph(&[("m.py", REPO)]);
        let (targets, _) = select_targets(&g, "r", &TargetPolicy::default());
        let f = &targets[0];
        assert_eq!(expand_instances(f, 1, 0).unwrap().len(), 3);
        let two = expand_instances(f, 2, 7).unwrap();
        assert_eq!(two.len(), 3);
        for (i, inst) in two.iter().enumerate() {
            assert_eq!(inst.caller_qnames[0], f.callers[i].qname);
            let distinct: BTreeSet<_> = inst.caller_qnames.iter().collect();
            assert_eq!(distinct.len(), 2);
            assert!(!inst.short);
        }
        assert_eq!(two, expand_instances(f, 2, 7).unwrap());
        let short = expand_instances(&targets[1], 3, 0).unwrap();
        assert!(short[0].short);
        assert_eq!(short[0].callers.len(), 1);
    }

    #[test]
    fn two_hop_chain_and_diamond() {
        let src = "def f():\n    \"\"\"T.\"\"\"\n    return 1\n\ndef b():\n    return f()\n\ndef a1():\n    return b()\n\ndef a2():\n    return b()\n\ndef lone():\n    return f()\n";
        let g = graph(&[("m.py", src)]);
        let (targets, _) = select_targets(&g, "r", &TargetPolicy::default());
        let insts = expand_instances(&targets[0], 1, 0).unwrap();
        let p = TargetPolicy::default();
        let two = augment_two_hop(&insts[0], &g, &p);
        assert_eq!(two.hop_depth, 2);
        assert!(two.callers[0].starts_with("def a1():"));
        assert!(two.callers[0].ends_with("def b():\n    return f()"));
        let lone = augment_two_hop(&insts[1], &g, &p);
        assert_eq!(lone.callers, insts[1].callers);
        assert_eq!(lone.flags, vec!["no_second_hop:m.lone"]);
    }

    #[test]
    fn percentiles() {
        assert_eq!(nearest_rank(&[2, 4], 50), 2);
        assert_eq!(nearest_rank(&[2, 4], 90), 4);
        let v: Vec<usize> = (1..=100).collect();
        assert_eq!(nearest_rank(&v, 95), 95);
        assert!(matches!(corpus_stats(&[]), Err(Error::EmptyCorpus)));
    }
}
