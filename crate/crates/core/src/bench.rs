//! Caller-driven benchmark tasks: per-call-site requirements, usage-pattern
//! grouping, behavior sketches, suite linting, driver normalization, and
//! minimal invocations for targets without callers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use crate::analysis::facts::{module_qname, FunctionDecl, ParamKind};
use crate::analysis::{extract_repo, CallGraph, CallerRef};
use crate::analysis::callgraph::python_files;
use crate::corpus::{eligible_callers, TargetPolicy};
use crate::error::{Error, Result};
use crate::eval::{self, Sandbox};
use crate::pyast::{self, NameRole, PySource};
use crate::variants::{self, short_name};

pub const MAX_DRIVERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RequirementKind {
    ReturnSubscript { key: String },
    ReturnAttr { name: String },
    ReturnMethod { name: String },
    ReturnIterated,
    ReturnTruthTest,
    ReturnCompared { literal: String },
    ReturnUnpacked { arity: usize },
    RaisesHandled { exception: String },
    ArgShape { arity: usize, keywords: Vec<String> },
}

impl RequirementKind {
    /// Stable identifier used in driver coverage links.
    pub fn key(&self) -> String {
        match self {
            RequirementKind::ReturnSubscript { key } => format!("return_subscript:{key}"),
            RequirementKind::ReturnAttr { name } => format!("return_attr:{name}"),
            RequirementKind::ReturnMethod { name } => format!("return_method:{name}"),
            RequirementKind::ReturnIterated => "return_iterated".into(),
            RequirementKind::ReturnTruthTest => "return_truth_test".into(),
            RequirementKind::ReturnCompared { literal } => format!("return_compared:{literal}"),
            RequirementKind::ReturnUnpacked { arity } => format!("return_unpacked:{arity}"),
            RequirementKind::RaisesHandled { exception } => format!("raises_handled:{exception}"),
            RequirementKind::ArgShape { arity, keywords } => format!("arg_shape:{arity}:{}", keywords.join(",")),
        }
    }

    fn is_arg_shape(&self) -> bool {
        matches!(self, RequirementKind::ArgShape { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Evidence {
    pub file: String,
    pub line: usize,
}

impl std::fmt::Display for Evidence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Requirement {
    #[serde(flatten)]
    pub kind: RequirementKind,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteRef {
    pub caller: String,
    pub file: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteRequirements {
    pub site: SiteRef,
    pub requirements: Vec<Requirement>,
}

impl SiteRequirements {
    pub fn kinds(&self) -> BTreeSet<RequirementKind> {
        self.requirements.iter().map(|r| r.kind.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsagePattern {
    pub id: String,
    pub members: Vec<SiteRef>,
    pub requirements: Vec<RequirementKind>,
}

/// Where a caller text sits in the repository: file and 1-based line of its
/// first line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteContext<'a> {
    pub caller: &'a str,
    pub file: &'a str,
    pub first_line: usize,
}

fn body_block(src: &PySource) -> Node<'_> {
    src.first_function()
        .filter(|d| d.start_position().row == 0 || src.root().named_child_count() == 1)
        .and_then(|d| d.child_by_field_name("body"))
        .unwrap_or_else(|| src.root())
}

fn is_literal(n: Node<'_>) -> bool {
    matches!(
        n.kind(),
        "string" | "integer" | "float" | "true" | "false" | "none" | "concatenated_string"
    ) || (n.kind() == "unary_operator" && n.named_child(0).is_some_and(is_literal))
}

fn same(a: Option<Node<'_>>, b: Node<'_>) -> bool {
    a.is_some_and(|a| a.id() == b.id())
}

/// Requirements implied by how the value at `e` is used by its parent.
fn direct_use(src: &str, e: Node<'_>, out: &mut BTreeSet<RequirementKind>) {
    let mut e = e;
    while let Some(p) = e.parent().filter(|p| matches!(p.kind(), "await" | "parenthesized_expression")) {
        e = p;
    }
    let Some(p) = e.parent() else { return };
    match p.kind() {
        "subscript" if same(p.child_by_field_name("value"), e) => {
            if let Some(s) = p.child_by_field_name("subscript") {
                let key = pyast::string_value(src, s).unwrap_or_else(|| src[s.byte_range()].to_string());
                out.insert(RequirementKind::ReturnSubscript { key });
            }
        }
        "attribute" if same(p.child_by_field_name("object"), e) => {
            let Some(attr) = p.child_by_field_name("attribute") else { return };
            let name = src[attr.byte_range()].to_string();
            let is_call = p
                .parent()
                .is_some_and(|g| g.kind() == "call" && same(g.child_by_field_name("function"), p));
            out.insert(if is_call {
                RequirementKind::ReturnMethod { name }
            } else {
                RequirementKind::ReturnAttr { name }
            });
        }
        "for_statement" | "for_in_clause" if same(p.child_by_field_name("right"), e) => {
            out.insert(RequirementKind::ReturnIterated);
        }
        "if_statement" | "elif_clause" | "while_statement" | "conditional_expression"
            if same(p.child_by_field_name("condition"), e) =>
        {
            out.insert(RequirementKind::ReturnTruthTest);
        }
        "not_operator" | "boolean_operator" | "assert_statement" => {
            out.insert(RequirementKind::ReturnTruthTest);
        }
        "comparison_operator" => {
            let mut cursor = p.walk();
            let other = p.named_children(&mut cursor).find(|c| c.id() != e.id() && is_literal(*c));
            if let Some(o) = other {
                out.insert(RequirementKind::ReturnCompared {
                    literal: src[o.byte_range()].to_string(),
                });
            }
        }
        "assignment" if same(p.child_by_field_name("right"), e) => {
            if let Some(l) = p.child_by_field_name("left") {
                if matches!(l.kind(), "pattern_list" | "tuple_pattern" | "list_pattern") {
                    out.insert(RequirementKind::ReturnUnpacked {
                        arity: l.named_child_count(),
                    });
                }
            }
        }
        _ => {}
    }
}

/// The single name directly receiving the call's result, if any.
fn single_binding(src: &str, call: Node<'_>) -> Option<String> {
    let mut e = call;
    while let Some(p) = e.parent() {
        match p.kind() {
            "await" | "parenthesized_expression" => e = p,
            "assignment" if same(p.child_by_field_name("right"), e) => {
                let l = p.child_by_field_name("left")?;
                return (l.kind() == "identifier").then(|| src[l.byte_range()].to_string());
            }
            "named_expression" if same(p.child_by_field_name("value"), e) => {
                let n = p.child_by_field_name("name")?;
                return Some(src[n.byte_range()].to_string());
            }
            _ => return None,
        }
    }
    None
}

fn exception_names(src: &str, clause: Node<'_>) -> Vec<String> {
    let mut cursor = clause.walk();
    let Some(mut e) = clause.named_children(&mut cursor).find(|c| c.kind() != "block" && c.kind() != "comment")
    else {
        return vec![];
    };
    if e.kind() == "as_pattern" {
        match e.named_child(0) {
            Some(inner) => e = inner,
            None => return vec![],
        }
    }
    if matches!(e.kind(), "tuple" | "parenthesized_expression") {
        let mut c = e.walk();
        return e
            .named_children(&mut c)
            .map(|x| src[x.byte_range()].to_string())
            .collect();
    }
    vec![src[e.byte_range()].to_string()]
}

fn handled_exceptions(src: &str, call: Node<'_>, out: &mut BTreeSet<(String, usize)>) {
    let mut child = call;
    let mut cur = call.parent();
    while let Some(p) = cur {
        if matches!(p.kind(), "function_definition" | "class_definition" | "lambda") {
            break;
        }
        if p.kind() == "try_statement" && same(p.child_by_field_name("body"), child) {
            let mut cursor = p.walk();
            for clause in p.named_children(&mut cursor).filter(|c| c.kind() == "except_clause") {
                for name in exception_names(src, clause) {
                    out.insert((name, clause.start_position().row));
                }
            }
        }
        child = p;
        cur = p.parent();
    }
}

fn arg_shape(src: &str, call: Node<'_>) -> RequirementKind {
    let mut arity = 0;
    let mut keywords = Vec::new();
    if let Some(args) = call.child_by_field_name("arguments") {
        let mut cursor = args.walk();
        for a in args.named_children(&mut cursor) {
            match a.kind() {
                "keyword_argument" => {
                    if let Some(n) = a.child_by_field_name("name") {
                        keywords.push(src[n.byte_range()].to_string());
                    }
                }
                "comment" | "dictionary_splat" => {}
                _ => arity += 1,
            }
        }
    }
    keywords.sort();
    RequirementKind::ArgShape { arity, keywords }
}

fn site_requirements(
    src: &PySource,
    units: &[pyast::StatementUnit<'_>],
    call: Node<'_>,
    ctx: &SiteContext<'_>,
) -> SiteRequirements {
    let text = src.text();
    let line = |row: usize| ctx.first_line + row;
    let evidence = |row: usize| Evidence {
        file: ctx.file.to_string(),
        line: line(row),
    };
    let call_row = pyast::enclosing_statement(call)
        .map(|s| s.start_position().row)
        .unwrap_or(call.start_position().row);
    let mut reqs: BTreeMap<RequirementKind, Evidence> = BTreeMap::new();
    let mut add = |kinds: BTreeSet<RequirementKind>, ev: Evidence| {
        for k in kinds {
            reqs.entry(k).or_insert_with(|| ev.clone());
        }
    };

    let mut here = BTreeSet::new();
    direct_use(text, call, &mut here);
    here.insert(arg_shape(text, call));
    add(here, evidence(call_row));

    if let (Some(var), Some(ui)) = (single_binding(text, call), variants::unit_of(units, call)) {
        let live = BTreeSet::from([var.clone()]);
        for i in variants::direct_uses(text, units, ui, &live) {
            let u = &units[i];
            let roots = if u.header_only { u.read_roots() } else { vec![u.node] };
            let mut found = BTreeSet::new();
            for r in roots {
                pyast::walk(r, &mut |n| {
                    if n.kind() == "identifier"
                        && text[n.byte_range()] == var
                        && matches!(pyast::identifier_role(n), NameRole::Load | NameRole::LoadStore)
                    {
                        direct_use(text, n, &mut found);
                    }
                });
            }
            add(found, evidence(u.node.start_position().row));
        }
    }

    let mut handled = BTreeSet::new();
    handled_exceptions(text, call, &mut handled);
    for (exception, row) in handled {
        add(BTreeSet::from([RequirementKind::RaisesHandled { exception }]), evidence(row));
    }

    SiteRequirements {
        site: SiteRef {
            caller: ctx.caller.to_string(),
            file: ctx.file.to_string(),
            line: line(call_row),
        },
        requirements: reqs
            .into_iter()
            .map(|(kind, evidence)| Requirement { kind, evidence })
            .collect(),
    }
}

/// R(c) for each call on `target_name` in `text` (a caller function or a
/// plain statement sequence). `sites` narrows to calls starting at the given
/// (row, column) pairs when any match.
pub fn extract_requirements(
    text: &str,
    target_name: &str,
    sites: &[(usize, usize)],
    ctx: &SiteContext<'_>,
) -> Vec<SiteRequirements> {
    let src = PySource::parse(text);
    let block = body_block(&src);
    let units = pyast::statement_units(block);
    let all = variants::calls_named(&src, block, target_name);
    let picked: Vec<_> = all
        .iter()
        .copied()
        .filter(|c| sites.contains(&(c.start_position().row, c.start_position().column)))
        .collect();
    let calls = if picked.is_empty() { all } else { picked };
    calls
        .into_iter()
        .map(|c| site_requirements(&src, &units, c, ctx))
        .collect()
}

fn return_side(set: &BTreeSet<RequirementKind>) -> BTreeSet<&RequirementKind> {
    set.iter().filter(|k| !k.is_arg_shape()).collect()
}

/// Two requirement sets can share a pattern unless they disagree on the
/// returned shape.
pub fn compatible(a: &BTreeSet<RequirementKind>, b: &BTreeSet<RequirementKind>) -> bool {
    let unpack = |s: &BTreeSet<RequirementKind>| {
        s.iter()
            .filter_map(|k| match k {
                RequirementKind::ReturnUnpacked { arity } => Some(*arity),
                _ => None,
            })
            .collect::<BTreeSet<_>>()
    };
    let truth = |s: &BTreeSet<RequirementKind>| s.contains(&RequirementKind::ReturnTruthTest);
    let (ua, ub) = (unpack(a), unpack(b));
    if !ua.is_empty() && !ub.is_empty() && ua != ub {
        return false;
    }
    if (truth(a) && !ub.is_empty()) || (truth(b) && !ua.is_empty()) {
        return false;
    }
    true
}

fn shares(a: &BTreeSet<RequirementKind>, b: &BTreeSet<RequirementKind>) -> bool {
    let (ra, rb) = (return_side(a), return_side(b));
    if ra.is_empty() && rb.is_empty() {
        return !a.is_disjoint(b);
    }
    !ra.is_disjoint(&rb)
}

/// Greedy grouping in input order; pattern ids are `U1, U2, ...`.
pub fn group_usage_patterns(sites: &[SiteRequirements]) -> Vec<UsagePattern> {
    let mut groups: Vec<(Vec<SiteRef>, BTreeSet<RequirementKind>)> = Vec::new();
    for s in sites {
        let kinds = s.kinds();
        match groups
            .iter_mut()
            .find(|(_, reqs)| compatible(reqs, &kinds) && shares(reqs, &kinds))
        {
            Some((members, reqs)) => {
                members.push(s.site.clone());
                reqs.extend(kinds);
            }
            None => groups.push((vec![s.site.clone()], kinds)),
        }
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(i, (members, reqs))| UsagePattern {
            id: format!("U{}", i + 1),
            members,
            requirements: reqs.into_iter().collect(),
        })
        .collect()
}

/// B(f): union of pattern requirements, ordered by (kind, params).
pub fn behavior_sketch(patterns: &[UsagePattern]) -> Vec<RequirementKind> {
    let set: BTreeSet<RequirementKind> = patterns.iter().flat_map(|p| p.requirements.iter().cloned()).collect();
    set.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverScript {
    pub path: String,
    pub text: String,
    /// Pattern ids and requirement keys this driver covers.
    #[serde(default)]
    pub covers: Vec<String>,
    #[serde(default)]
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTarget {
    pub qname: String,
    pub name: String,
    pub module_path: String,
    pub header: String,
    pub body: String,
    pub docstring: Option<String>,
    pub source: String,
    pub span_start: usize,
    pub span_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskCaller {
    pub qname: String,
    pub path: String,
    pub line: usize,
    pub text: String,
    #[serde(default)]
    pub synthesized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub task_id: String,
    pub repo: String,
    pub target: TaskTarget,
    pub callers: Vec<TaskCaller>,
    pub patterns: Vec<UsagePattern>,
    pub sketch: Vec<RequirementKind>,
    pub drivers: Vec<DriverScript>,
    #[serde(default)]
    pub nl_description: Option<String>,
    /// Python sources of the repository, keyed by '/'-separated path.
    #[serde(default)]
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub task_id: String,
    /// C1: patterns no driver covers.
    pub uncovered_patterns: Vec<String>,
    /// C2: sketch requirements no driver covers.
    pub uncovered_requirements: Vec<String>,
    /// C3: (driver, 1-based line) of assertions lacking an evidence annotation.
    pub unannotated_assertions: Vec<(String, usize)>,
    pub too_many_drivers: Option<usize>,
}

impl CoverageReport {
    pub fn passes(&self) -> bool {
        self.uncovered_patterns.is_empty()
            && self.uncovered_requirements.is_empty()
            && self.unannotated_assertions.is_empty()
            && self.too_many_drivers.is_none()
    }
}

fn evidence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#\s*evidence:\s*(\S+:\d+)").expect("valid regex"))
}

fn assertion_lines(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim_start();
            t.strip_prefix("assert").is_some_and(|rest| rest.starts_with([' ', '(']))
        })
        .map(|(i, l)| (i + 1, l))
        .collect()
}

pub fn evidence_annotations(text: &str) -> Vec<String> {
    evidence_re()
        .captures_iter(text)
        .map(|c| c[1].to_string())
        .collect()
}

pub fn lint_suite(task: &BenchmarkTask) -> CoverageReport {
    let covered: BTreeSet<&str> = task
        .drivers
        .iter()
        .flat_map(|d| d.covers.iter().map(String::as_str))
        .collect();
    let mut report = CoverageReport {
        task_id: task.task_id.clone(),
        ..Default::default()
    };
    for p in &task.patterns {
        if !covered.contains(p.id.as_str()) {
            report.uncovered_patterns.push(p.id.clone());
        }
    }
    for r in &task.sketch {
        let key = r.key();
        if !covered.contains(key.as_str()) {
            report.uncovered_requirements.push(key);
        }
    }
    for d in &task.drivers {
        for (line, text) in assertion_lines(&d.text) {
            if !evidence_re().is_match(text) {
                report.unannotated_assertions.push((d.path.clone(), line));
            }
        }
    }
    if task.drivers.len() > MAX_DRIVERS {
        report.too_many_drivers = Some(task.drivers.len());
    }
    report
}

pub fn format_lint(r: &CoverageReport) -> String {
    let mut s = format!("{}: {}\n", r.task_id, if r.passes() { "pass" } else { "FAIL" });
    for p in &r.uncovered_patterns {
        s.push_str(&format!("  C1 pattern {p} has no covering driver\n"));
    }
    for q in &r.uncovered_requirements {
        s.push_str(&format!("  C2 requirement {q} is covered by no assertion\n"));
    }
    for (d, l) in &r.unannotated_assertions {
        s.push_str(&format!("  C3 {d}:{l} assertion lacks an evidence annotation\n"));
    }
    if let Some(n) = r.too_many_drivers {
        s.push_str(&format!("  cap {n} drivers exceed the limit of {MAX_DRIVERS}\n"));
    }
    s
}

fn bound_by_imports(lines: &[String]) -> BTreeSet<String> {
    let src = PySource::parse(lines.join("\n"));
    let mut out = BTreeSet::new();
    pyast::walk(src.root(), &mut |n| {
        if n.kind() == "identifier" && pyast::identifier_role(n) == NameRole::Import {
            out.insert(src.node_text(n).to_string());
        }
    });
    // `import a.b` binds `a`
    for l in lines {
        if let Some(rest) = l.trim().strip_prefix("import ") {
            for part in rest.split(',') {
                let part = part.trim();
                if !part.contains(" as ") {
                    if let Some(first) = part.split('.').next() {
                        out.insert(first.trim().to_string());
                    }
                }
            }
        }
    }
    out
}

/// Wrap a test fragment into a self-contained `main()` driver. Exit code 0
/// on success, 1 on a failed assertion or any uncaught exception.
pub fn normalize_driver(fragment: &str, target_qname: &str, imports: &[String]) -> Result<DriverScript> {
    let src = PySource::parse(fragment);
    if src.has_error() {
        return Err(Error::FragmentParse(format!(
            "syntax error at line {}",
            src.first_error_line().unwrap_or(1)
        )));
    }
    let name = short_name(target_qname);
    if !variants::calls_target(fragment, name) {
        return Err(Error::NoTargetCall(target_qname.to_string()));
    }
    let mut defined = bound_by_imports(imports);
    let mut free = BTreeSet::new();
    pyast::walk(src.root(), &mut |n| {
        if n.kind() != "identifier" {
            return;
        }
        let t = src.node_text(n).to_string();
        match pyast::identifier_role(n) {
            NameRole::Load => {
                free.insert(t);
            }
            NameRole::AttributeName | NameRole::KeywordName => {}
            _ => {
                defined.insert(t);
            }
        }
    });
    let undefined: Vec<String> = free
        .into_iter()
        .filter(|n| !defined.contains(n) && !pyast::is_builtin(n) && !pyast::is_keyword(n))
        .collect();
    if !undefined.is_empty() {
        return Err(Error::FragmentParse(format!("undefined name(s): {}", undefined.join(", "))));
    }
    let mut text = String::from("import sys\n");
    for i in imports {
        text.push_str(i.trim());
        text.push('\n');
    }
    text.push_str("\n\ndef main():\n");
    text.push_str(&pyast::indent_all(fragment.trim_end(), "    "));
    text.push_str(
        "\n\n\nif __name__ == \"__main__\":\n    try:\n        main()\n    except AssertionError:\n        sys.exit(1)\n    sys.exit(0)\n",
    );
    debug_assert!(!PySource::parse(text.as_str()).has_error());
    Ok(DriverScript {
        path: String::new(),
        evidence: evidence_annotations(fragment),
        text,
        covers: Vec::new(),
    })
}

fn placeholder(annotation: Option<&str>) -> &'static str {
    let Some(a) = annotation else { return "None" };
    let base = a.trim().split('[').next().unwrap_or("").trim();
    let base = base.rsplit('.').next().unwrap_or(base);
    match base {
        "int" => "0",
        "float" => "0.0",
        "complex" => "0j",
        "bool" => "False",
        "str" => "\"\"",
        "bytes" => "b\"\"",
        "list" | "List" | "Sequence" | "Iterable" => "[]",
        "dict" | "Dict" | "Mapping" => "{}",
        "tuple" | "Tuple" => "()",
        "set" | "Set" => "set()",
        _ => "None",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesizedCaller {
    pub text: String,
    pub flags: Vec<String>,
}

/// A tiny caller binding the target's result, with placeholder arguments:
/// annotated types map to empty values, unannotated to `None`, parameters with
/// defaults are omitted.
pub fn synthesize_minimal_invocation(decl: &FunctionDecl) -> SynthesizedCaller {
    let is_static = decl.decorators.iter().any(|d| d == "staticmethod");
    let is_class = decl.decorators.iter().any(|d| d == "classmethod");
    let first_is_receiver = decl
        .params
        .first()
        .is_some_and(|p| p.kind == ParamKind::Positional && (p.name == "self" || p.name == "cls"));
    let is_method = (decl.is_method || first_is_receiver) && !is_static;
    let mut args = Vec::new();
    for (i, p) in decl.params.iter().enumerate() {
        if i == 0 && is_method && first_is_receiver {
            continue;
        }
        if p.default.is_some() {
            continue;
        }
        match p.kind {
            ParamKind::Positional => args.push(placeholder(p.annotation.as_deref()).to_string()),
            ParamKind::KeywordOnly => args.push(format!("{}={}", p.name, placeholder(p.annotation.as_deref()))),
            ParamKind::VarPositional | ParamKind::VarKeyword => {}
        }
    }
    let owner = decl
        .enclosing_class
        .as_deref()
        .map(|c| short_name(c).to_string());
    let mut flags = Vec::new();
    let (callee, note) = if is_method && !is_class {
        flags.push("unconstructed_receiver".to_string());
        (format!("obj.{}", decl.name), Some("    # obj: receiver instance, not constructed\n"))
    } else if let (true, Some(o)) = (decl.is_method || is_class, owner) {
        (format!("{o}.{}", decl.name), None)
    } else {
        (decl.name.clone(), None)
    };
    let mut text = format!("def _use_{}():\n", decl.name);
    if let Some(n) = note {
        text.push_str(n);
    }
    text.push_str(&format!("    _r = {callee}({})", args.join(", ")));
    SynthesizedCaller { text, flags }
}

/// Same as [`synthesize_minimal_invocation`] starting from a header line.
pub fn synthesize_from_header(header: &str) -> Result<SynthesizedCaller> {
    let facts = crate::analysis::parse_file(&format!("{}\n    pass\n", header.trim_end()), "_header.py")?;
    let decl = facts
        .functions
        .first()
        .ok_or_else(|| Error::ParseFailure(header.to_string()))?;
    Ok(synthesize_minimal_invocation(decl))
}

/// One test fragment for a benchmark target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fragment {
    pub repo: String,
    pub target: String,
    pub fragment: String,
    #[serde(default)]
    pub covers: Vec<String>,
    #[serde(default)]
    pub imports: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub task_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutput {
    pub tasks: Vec<BenchmarkTask>,
    pub rejected: Vec<Rejection>,
}

/// Import path of a repository module as seen with the repository root (and
/// a `src/` directory, when present) on the module search path.
pub fn import_module(module_path: &str, files: &BTreeMap<String, String>) -> String {
    match module_path.strip_prefix("src/") {
        Some(rest) if !files.contains_key("src/__init__.py") => module_qname(rest),
        _ => module_qname(module_path),
    }
}

fn target_import(decl: &FunctionDecl, module_path: &str, files: &BTreeMap<String, String>) -> String {
    let module = import_module(module_path, files);
    let own_module = module_qname(module_path);
    let local = decl
        .qname
        .strip_prefix(&format!("{own_module}."))
        .unwrap_or(&decl.name);
    let top = local.split('.').next().unwrap_or(local);
    let top = top.split('@').next().unwrap_or(top);
    format!("from {module} import {top}")
}

fn task_caller(c: &CallerRef) -> TaskCaller {
    TaskCaller {
        qname: c.qname.clone(),
        path: c.module_path.clone(),
        line: c.decl.span.start,
        text: c.text().to_string(),
        synthesized: false,
    }
}

/// Assemble one task from the call graph and its fragments (no execution).
pub fn assemble_task(
    repo: &str,
    graph: &CallGraph,
    files: &BTreeMap<String, String>,
    target: &str,
    fragments: &[&Fragment],
    policy: &TargetPolicy,
) -> Result<BenchmarkTask> {
    let task_id = format!("{repo}::{target}");
    let node = graph
        .nodes
        .get(target)
        .ok_or_else(|| Error::Domain(format!("{task_id}: target not found in call graph")))?;
    let decl = &node.decl;
    let mut flags = Vec::new();
    let refs = eligible_callers(graph, target, policy);
    let mut callers: Vec<TaskCaller> = refs.iter().map(task_caller).collect();
    let mut sites = Vec::new();
    for c in &refs {
        let snippet = variants::CallerSnippet::from_ref(c, target);
        let ctx = SiteContext {
            caller: &c.qname,
            file: &c.module_path,
            first_line: c.decl.span.start,
        };
        sites.extend(extract_requirements(&snippet.text, &snippet.target_name, &snippet.sites, &ctx));
    }
    if refs.is_empty() {
        let synth = synthesize_minimal_invocation(decl);
        flags.push("synthesized_caller".to_string());
        flags.extend(synth.flags.iter().cloned());
        let qname = format!("_use_{}", decl.name);
        let ctx = SiteContext {
            caller: &qname,
            file: "<synthesized>",
            first_line: 1,
        };
        sites.extend(extract_requirements(&synth.text, &decl.name, &[], &ctx));
        callers.push(TaskCaller {
            qname: qname.clone(),
            path: "<synthesized>".into(),
            line: 1,
            text: synth.text,
            synthesized: true,
        });
    }
    let patterns = group_usage_patterns(&sites);
    let sketch = behavior_sketch(&patterns);
    let import = target_import(decl, &node.module_path, files);
    let mut drivers = Vec::new();
    for (i, f) in fragments.iter().enumerate() {
        let mut imports = f.imports.clone();
        imports.push(import.clone());
        let mut d = normalize_driver(&f.fragment, target, &imports)
            .map_err(|e| Error::Domain(format!("{task_id}: fragment {}: {e}", i + 1)))?;
        d.path = format!("driver_{}.py", i + 1);
        d.covers = f.covers.clone();
        drivers.push(d);
    }
    Ok(BenchmarkTask {
        task_id,
        repo: repo.to_string(),
        target: TaskTarget {
            qname: decl.qname.clone(),
            name: decl.name.clone(),
            module_path: node.module_path.clone(),
            header: decl.header_text.clone(),
            body: decl.body_text.clone(),
            docstring: decl.docstring.clone(),
            source: decl.source_text.clone(),
            span_start: decl.span.start,
            span_end: decl.span.end,
        },
        callers,
        patterns,
        sketch,
        drivers,
        nl_description: decl.docstring.clone(),
        files: files.clone(),
        flags,
    })
}

pub fn read_sources(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    for rel in python_files(root)? {
        let p = root.join(&rel);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        files.insert(rel, String::from_utf8_lossy(&bytes).into_owned());
    }
    Ok(files)
}

/// Build tasks for every target named in `fragments` of the given repos.
/// With a sandbox, tasks whose drivers fail on the reference implementation
/// are rejected.
pub fn build_tasks(
    repos: &[(String, &Path)],
    fragments: &[Fragment],
    policy: &TargetPolicy,
    sandbox: Option<&Sandbox>,
) -> Result<BuildOutput> {
    let mut out = BuildOutput::default();
    for (repo, root) in repos {
        let (_, graph) = extract_repo(root)?;
        let files = read_sources(root)?;
        let mut by_target: BTreeMap<&str, Vec<&Fragment>> = BTreeMap::new();
        for f in fragments.iter().filter(|f| f.repo == *repo) {
            by_target.entry(f.target.as_str()).or_default().push(f);
        }
        for (target, frags) in by_target {
            let task_id = format!("{repo}::{target}");
            let reject = |reason: String| Rejection {
                task_id: task_id.clone(),
                reason,
            };
            if frags.len() > MAX_DRIVERS {
                out.rejected.push(reject(format!("{} scenarios exceed the cap of {MAX_DRIVERS}", frags.len())));
                continue;
            }
            let task = match assemble_task(repo, &graph, &files, target, &frags, policy) {
                Ok(t) => t,
                Err(e) => {
                    out.rejected.push(reject(e.to_string()));
                    continue;
                }
            };
            if let Some(sb) = sandbox {
                if let Err(why) = eval::reference_sanity(&task, sb)? {
                    out.rejected.push(reject(format!("reference sanity failed: {why}")));
                    continue;
                }
            }
            out.tasks.push(task);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> SiteContext<'static> {
        SiteContext {
            caller: "c",
            file: "use.py",
            first_line: 1,
        }
    }

    fn kinds(text: &str) -> Vec<RequirementKind> {
        let s = extract_requirements(text, "f", &[], &ctx());
        s[0].requirements.iter().map(|r| r.kind.clone()).collect()
    }

    fn shape(arity: usize) -> RequirementKind {
        RequirementKind::ArgShape { arity, keywords: vec![] }
    }

    #[test]
    fn requirement_examples() {
        assert_eq!(
            kinds("cfg = f(u)\nlang = cfg[\"language\"]"),
            vec![RequirementKind::ReturnSubscript { key: "language".into() }, shape(1)]
        );
        assert_eq!(kinds("f()"), vec![shape(0)]);
        assert_eq!(kinds("a, b = f(x)"), vec![RequirementKind::ReturnUnpacked { arity: 2 }, shape(1)]);
    }

    #[test]
    fn requirements_from_caller_function() {
        let text = "def run(p):\n    try:\n        r = f(p, mode='x')\n    except (KeyError, ValueError):\n        return None\n    if r.ok:\n        r.close()\n    for x in r:\n        pass\n    return r == 0";
        let s = extract_requirements(text, "f", &[], &SiteContext { caller: "run", file: "m.py", first_line: 10 });
        let k: Vec<_> = s[0].requirements.iter().map(|r| r.kind.key()).collect();
        assert_eq!(
            k,
            vec![
                "return_attr:ok",
                "return_method:close",
                "return_iterated",
                "return_compared:0",
                "raises_handled:KeyError",
                "raises_handled:ValueError",
                "arg_shape:1:mode"
            ]
        );
        let ev: Vec<_> = s[0].requirements.iter().map(|r| r.evidence.line).collect();
        assert_eq!(ev, vec![15, 16, 17, 19, 13, 13, 12]);
        assert_eq!(s[0].site.line, 12);
    }

    fn site(caller: &str, ks: Vec<RequirementKind>) -> SiteRequirements {
        SiteRequirements {
            site: SiteRef { caller: caller.into(), file: "u.py".into(), line: 1 },
            requirements: ks
                .into_iter()
                .map(|kind| Requirement { kind, evidence: Evidence { file: "u.py".into(), line: 1 } })
                .collect(),
        }
    }

    #[test]
    fn grouping_examples() {
        let sub = RequirementKind::ReturnSubscript { key: "language".into() };
        let p = group_usage_patterns(&[site("a", vec![sub.clone(), shape(1)]), site("b", vec![sub.clone(), shape(1)])]);
        assert_eq!(p.len(), 1);
        let u2 = RequirementKind::ReturnUnpacked { arity: 2 };
        let u3 = RequirementKind::ReturnUnpacked { arity: 3 };
        assert_eq!(group_usage_patterns(&[site("a", vec![u2]), site("b", vec![u3])]).len(), 2);
        let m = RequirementKind::ReturnMethod { name: "close".into() };
        let p = group_usage_patterns(&[
            site("a", vec![sub.clone(), shape(1)]),
            site("b", vec![sub.clone(), RequirementKind::ReturnTruthTest, shape(1)]),
            site("c", vec![m, shape(1)]),
        ]);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].members.len(), 2);
        assert_eq!(p[0].id, "U1");
        let sketch = behavior_sketch(&p);
        assert_eq!(sketch.len(), 4);
        assert!(sketch.len() <= p.iter().map(|x| x.requirements.len()).sum());
    }

    #[test]
    fn driver_normalization() {
        let d = normalize_driver("assert f(2) == 4", "m.f", &["from m import f".into()]).unwrap();
        assert!(d.text.contains("def main():\n    assert f(2) == 4\n"));
        assert!(d.text.contains("sys.exit(1)"));
        assert!(!PySource::parse(d.text.as_str()).has_error());
        match normalize_driver("assert f(tmp_path) == 4", "m.f", &["from m import f".into()]) {
            Err(Error::FragmentParse(m)) => assert!(m.contains("tmp_path")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(normalize_driver("assert g(1)", "m.f", &[]), Err(Error::NoTargetCall(_))));
        assert!(matches!(normalize_driver("assert f(", "m.f", &[]), Err(Error::FragmentParse(_))));
    }

    fn decl(src: &str) -> FunctionDecl {
        let facts = crate::analysis::parse_file(src, "m.py").unwrap();
        facts.functions.last().unwrap().clone()
    }

    #[test]
    fn synthesis() {
        let s = synthesize_minimal_invocation(&decl("def f(n: int, s: str = 'a'):\n    pass\n"));
        assert_eq!(s.text, "def _use_f():\n    _r = f(0)");
        assert_eq!(synthesize_minimal_invocation(&decl("def f():\n    pass\n")).text, "def _use_f():\n    _r = f()");
        let s = synthesize_from_header("def m(self, x):").unwrap();
        assert!(s.text.contains("_r = obj.m(None)"));
        assert!(s.text.contains("# obj"));
        assert_eq!(s.flags, vec!["unconstructed_receiver"]);
        let s = synthesize_minimal_invocation(&decl("def f(a: list, *, k: dict, **kw):\n    pass\n"));
        assert_eq!(s.text, "def _use_f():\n    _r = f([], k={})");
    }

    #[test]
    fn lint_flags_each_criterion() {
        let sub = RequirementKind::ReturnSubscript { key: "k".into() };
        let task = BenchmarkTask {
            task_id: "t".into(),
            repo: "r".into(),
            target: TaskTarget {
                qname: "m.f".into(),
                name: "f".into(),
                module_path: "m.py".into(),
                header: "def f():".into(),
                body: String::new(),
                docstring: None,
                source: String::new(),
                span_start: 1,
                span_end: 1,
            },
            callers: vec![],
            patterns: vec![
                UsagePattern { id: "U1".into(), members: vec![], requirements: vec![sub.clone()] },
                UsagePattern { id: "U2".into(), members: vec![], requirements: vec![shape(0)] },
            ],
            sketch: vec![sub.clone(), shape(0)],
            drivers: vec![DriverScript {
                path: "driver_1.py".into(),
                text: "def main():\n    assert f()['k']  # evidence: u.py:3\n    assert f() is not None\n".into(),
                covers: vec!["U1".into(), sub.key()],
                evidence: vec![],
            }],
            nl_description: None,
            files: BTreeMap::new(),
            flags: vec![],
        };
        let r = lint_suite(&task);
        assert_eq!(r.uncovered_patterns, vec!["U2"]);
        assert_eq!(r.uncovered_requirements, vec!["arg_shape:0:"]);
        assert_eq!(r.unannotated_assertions, vec![("driver_1.py".to_string(), 3)]);
        assert!(!r.passes());
        let mut fixed = task.clone();
        fixed.drivers[0].covers.extend(["U2".to_string(), shape(0).key()]);
        fixed.drivers[0].text = fixed.drivers[0].text.replace("is not None\n", "is not None  # evidence: u.py:4\n");
        assert!(lint_suite(&fixed).passes());
    }
}
