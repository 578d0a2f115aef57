//! Caller-context variants and structural classification of call sites.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use crate::analysis::CallerRef;
use crate::error::{Error, Result};
use crate::pyast::{self, NameRole, PySource, StatementUnit};
use crate::tokenize::{count_tokens, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    SignatureOnly,
    CallSiteOnly,
    DataFlow,
    ControlFlow,
    LengthMatchedIrrelevant,
    SemanticsPreserving,
    Full,
}

impl VariantKind {
    pub const ALL: [VariantKind; 7] = [
        VariantKind::SignatureOnly,
        VariantKind::CallSiteOnly,
        VariantKind::DataFlow,
        VariantKind::ControlFlow,
        VariantKind::LengthMatchedIrrelevant,
        VariantKind::SemanticsPreserving,
        VariantKind::Full,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantKind::SignatureOnly => "signature_only",
            VariantKind::CallSiteOnly => "call_site_only",
            VariantKind::DataFlow => "data_flow",
            VariantKind::ControlFlow => "control_flow",
            VariantKind::LengthMatchedIrrelevant => "length_matched_irrelevant",
            VariantKind::SemanticsPreserving => "semantics_preserving",
            VariantKind::Full => "full",
        }
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown variant kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallerVariant {
    pub kind: VariantKind,
    pub text: String,
    #[serde(default)]
    pub fallback_used: bool,
    /// Id of the caller the text was derived from (the pool entry for
    /// length-matched snippets).
    pub provenance: String,
}

/// Caller text plus the positions of its calls on the target, as 0-based
/// (row, column) pairs relative to the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallerSnippet {
    pub id: String,
    pub text: String,
    pub target_name: String,
    pub sites: Vec<(usize, usize)>,
}

/// Unqualified function name of a qname (`pkg.mod.A.m` → `m`).
pub fn short_name(qname: &str) -> &str {
    let last = qname.rsplit('.').next().unwrap_or(qname);
    last.split('@').next().unwrap_or(last)
}

impl CallerSnippet {
    pub fn from_ref(caller: &CallerRef, target_qname: &str) -> Self {
        let start = caller.decl.span.start;
        let col0 = caller.decl.def_column;
        CallerSnippet {
            id: caller.qname.clone(),
            text: caller.text().to_string(),
            target_name: short_name(target_qname).to_string(),
            sites: caller
                .sites
                .iter()
                .map(|s| (s.line - start, s.column.saturating_sub(col0)))
                .collect(),
        }
    }

    /// Locate calls on the target by callee name.
    pub fn from_text(id: &str, text: &str, target_qname: &str) -> Self {
        let target_name = short_name(target_qname).to_string();
        let parsed = PySource::parse(text);
        let sites = parsed
            .first_function()
            .and_then(|d| d.child_by_field_name("body"))
            .map(|body| {
                calls_named(&parsed, body, &target_name)
                    .into_iter()
                    .map(|c| (c.start_position().row, c.start_position().column))
                    .collect()
            })
            .unwrap_or_default();
        CallerSnippet {
            id: id.to_string(),
            text: text.to_string(),
            target_name,
            sites,
        }
    }
}

/// Call nodes under `node` whose callee name is `name`, skipping nested
/// function and class bodies.
pub(crate) fn calls_named<'t>(src: &'t PySource, node: Node<'t>, name: &str) -> Vec<Node<'t>> {
    let mut out = Vec::new();
    collect_calls(src, node, name, &mut out);
    out
}

fn collect_calls<'t>(src: &'t PySource, node: Node<'t>, name: &str, out: &mut Vec<Node<'t>>) {
    if node.kind() == "call" {
        if let Some(f) = node.child_by_field_name("function") {
            if pyast::dotted_chain(src.text(), f).is_some_and(|c| c.last().is_some_and(|l| l == name)) {
                out.push(node);
            }
        }
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        if matches!(
            child.kind(),
            "function_definition" | "class_definition" | "decorated_definition"
        ) {
            continue;
        }
        collect_calls(src, child, name, out);
    }
}

/// Whether `text` syntactically calls `name` (token `name` followed by `(`,
/// not in a `def` header). Works on fragments that do not parse alone.
pub fn calls_target(text: &str, name: &str) -> bool {
    let toks = tokenize(text);
    toks.windows(2).enumerate().any(|(i, w)| {
        w[0] == name && w[1] == "(" && (i == 0 || (toks[i - 1] != "def" && toks[i - 1] != "class"))
    })
}

/// Parsed caller with its function body, statement units, and target calls.
struct Parsed {
    src: PySource,
}

struct CallView<'t> {
    def: Node<'t>,
    units: Vec<StatementUnit<'t>>,
    calls: Vec<Node<'t>>,
}

impl Parsed {
    fn new(snippet: &CallerSnippet) -> Result<Self> {
        let src = PySource::parse(snippet.text.as_str());
        if src.has_error() || src.first_function().is_none() {
            return Err(Error::ParseFailure(snippet.id.clone()));
        }
        Ok(Parsed { src })
    }

    fn view(&self, snippet: &CallerSnippet) -> CallView<'_> {
        let def = self.src.first_function().expect("checked in new");
        let body = def.child_by_field_name("body").expect("function has a body");
        let by_name = calls_named(&self.src, body, &snippet.target_name);
        let mut calls: Vec<Node<'_>> = by_name
            .iter()
            .copied()
            .filter(|c| {
                let p = c.start_position();
                snippet.sites.contains(&(p.row, p.column))
            })
            .collect();
        if calls.is_empty() {
            calls = by_name;
        }
        CallView {
            def,
            units: pyast::statement_units(body),
            calls,
        }
    }
}

pub(crate) fn contains(outer: Node<'_>, inner: Node<'_>) -> bool {
    outer.start_byte() <= inner.start_byte() && inner.end_byte() <= outer.end_byte()
}

pub(crate) fn unit_of(units: &[StatementUnit<'_>], call: Node<'_>) -> Option<usize> {
    units.iter().position(|u| {
        if u.header_only {
            u.read_roots().iter().any(|r| contains(*r, call))
        } else {
            contains(u.node, call)
        }
    })
}

pub(crate) fn unit_reads(src: &str, u: &StatementUnit<'_>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for r in u.read_roots() {
        if r.kind() == "identifier" {
            if matches!(pyast::identifier_role(r), NameRole::Load | NameRole::LoadStore) {
                out.insert(src[r.byte_range()].to_string());
            }
        } else {
            out.extend(pyast::names_read(src, r));
        }
    }
    out
}

fn unit_binds(src: &str, u: &StatementUnit<'_>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let roots = if u.header_only { u.read_roots() } else { vec![u.node] };
    for r in roots {
        if r.kind() == "identifier"
            && matches!(pyast::identifier_role(r), NameRole::Store | NameRole::LoadStore)
        {
            out.insert(src[r.byte_range()].to_string());
        }
        out.extend(pyast::names_bound(src, r));
    }
    out
}

fn store_identifiers(src: &str, node: Node<'_>, out: &mut BTreeSet<String>) {
    if node.kind() == "identifier" {
        out.insert(src[node.byte_range()].to_string());
        return;
    }
    if matches!(node.kind(), "attribute" | "subscript") {
        return;
    }
    let mut cursor = node.walk();
    for c in node.named_children(&mut cursor) {
        store_identifiers(src, c, out);
    }
}

/// Local names that directly receive the call's result.
pub(crate) fn result_bindings(src: &str, call: Node<'_>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut e = call;
    while let Some(p) = e.parent() {
        match p.kind() {
            "await" | "parenthesized_expression" => e = p,
            "assignment" | "augmented_assignment"
                if p.child_by_field_name("right").map(|r| r.id()) == Some(e.id()) =>
            {
                if let Some(l) = p.child_by_field_name("left") {
                    store_identifiers(src, l, &mut out);
                }
                e = p;
            }
            "named_expression" if p.child_by_field_name("value").map(|r| r.id()) == Some(e.id()) => {
                if let Some(n) = p.child_by_field_name("name") {
                    store_identifiers(src, n, &mut out);
                }
                e = p;
            }
            "as_pattern" => {
                if let Some(a) = p.child_by_field_name("alias") {
                    store_identifiers(src, a, &mut out);
                }
                break;
            }
            "for_statement" if p.child_by_field_name("right").map(|r| r.id()) == Some(e.id()) => {
                if let Some(l) = p.child_by_field_name("left") {
                    store_identifiers(src, l, &mut out);
                }
                break;
            }
            _ => break,
        }
    }
    out
}

/// Units after `start` that read a live result variable, with kill on
/// reassignment. Returns their indices in source order.
pub(crate) fn direct_uses(src: &str, units: &[StatementUnit<'_>], start: usize, bound: &BTreeSet<String>) -> Vec<usize> {
    let mut live = bound.clone();
    let mut out = Vec::new();
    for (i, u) in units.iter().enumerate().skip(start + 1) {
        if live.is_empty() {
            break;
        }
        if !unit_reads(src, u).is_disjoint(&live) {
            out.push(i);
        }
        for b in unit_binds(src, u) {
            live.remove(&b);
        }
    }
    out
}

fn is_branching_header(u: &StatementUnit<'_>) -> bool {
    u.header_only
        && matches!(
            u.node.kind(),
            "if_statement" | "elif_clause" | "while_statement" | "for_statement"
        )
}

fn block_of_header<'t>(u: &StatementUnit<'t>) -> Node<'t> {
    if u.node.kind() == "elif_clause" {
        u.node.parent().unwrap_or(u.node)
    } else {
        u.node
    }
}

/// Innermost if/for/while/try strictly inside the function that contains `node`.
fn enclosing_control_block<'t>(node: Node<'t>, def: Node<'t>) -> Option<Node<'t>> {
    let mut cur = node.parent();
    while let Some(p) = cur {
        if p.id() == def.id() {
            return None;
        }
        if pyast::is_control_block(p.kind()) {
            return Some(p);
        }
        cur = p.parent();
    }
    None
}

fn no_call_site(snippet: &CallerSnippet) -> Error {
    Error::NoCallSite {
        caller: snippet.id.clone(),
        target: snippet.target_name.clone(),
    }
}

pub fn full(snippet: &CallerSnippet) -> CallerVariant {
    CallerVariant {
        kind: VariantKind::Full,
        text: snippet.text.clone(),
        fallback_used: false,
        provenance: snippet.id.clone(),
    }
}

pub fn signature_only(snippet: &CallerSnippet) -> Result<CallerVariant> {
    let parsed = Parsed::new(snippet)?;
    let def = parsed.src.first_function().expect("checked");
    Ok(CallerVariant {
        kind: VariantKind::SignatureOnly,
        text: pyast::header_text(parsed.src.text(), def),
        fallback_used: false,
        provenance: snippet.id.clone(),
    })
}

pub fn call_site_only(snippet: &CallerSnippet) -> Result<CallerVariant> {
    let parsed = Parsed::new(snippet)?;
    let view = parsed.view(snippet);
    let src = parsed.src.text();
    let call = *view.calls.first().ok_or_else(|| no_call_site(snippet))?;
    let text = match unit_of(&view.units, call) {
        Some(i) if !view.units[i].header_only => view.units[i].text(src),
        _ => pyast::node_text_dedented(src, call),
    };
    Ok(CallerVariant {
        kind: VariantKind::CallSiteOnly,
        text,
        fallback_used: false,
        provenance: snippet.id.clone(),
    })
}

pub fn data_flow_slice(snippet: &CallerSnippet) -> Result<CallerVariant> {
    let parsed = Parsed::new(snippet)?;
    let view = parsed.view(snippet);
    let src = parsed.src.text();
    let call = *view.calls.first().ok_or_else(|| no_call_site(snippet))?;
    let Some(ui) = unit_of(&view.units, call) else {
        return Err(no_call_site(snippet));
    };
    let bound = result_bindings(src, call);
    let mut parts = vec![view.units[ui].text(src)];
    for i in direct_uses(src, &view.units, ui, &bound) {
        parts.push(view.units[i].text(src));
    }
    Ok(CallerVariant {
        kind: VariantKind::DataFlow,
        text: parts.join("\n"),
        fallback_used: false,
        provenance: snippet.id.clone(),
    })
}

pub fn control_flow_slice(snippet: &CallerSnippet) -> Result<CallerVariant> {
    let parsed = Parsed::new(snippet)?;
    let view = parsed.view(snippet);
    let src = parsed.src.text();
    let call = *view.calls.first().ok_or_else(|| no_call_site(snippet))?;
    let variant = |text: String, fallback_used: bool| CallerVariant {
        kind: VariantKind::ControlFlow,
        text,
        fallback_used,
        provenance: snippet.id.clone(),
    };
    if let Some(block) = enclosing_control_block(call, view.def) {
        return Ok(variant(pyast::node_text_dedented(src, block), false));
    }
    if let Some(ui) = unit_of(&view.units, call) {
        let bound = result_bindings(src, call);
        let feed = direct_uses(src, &view.units, ui, &bound)
            .into_iter()
            .find(|&i| is_branching_header(&view.units[i]));
        if let Some(i) = feed {
            let block = block_of_header(&view.units[i]);
            let text = format!(
                "{}\n{}",
                view.units[ui].text(src),
                pyast::node_text_dedented(src, block)
            );
            return Ok(variant(text, false));
        }
    }
    Ok(variant(snippet.text.clone(), true))
}

/// Pool snippet whose token count is nearest the caller's, within
/// `tolerance` (relative). Pool entries that call the target are skipped.
pub fn length_matched_irrelevant(
    snippet: &CallerSnippet,
    pool: &[CallerSnippet],
    tolerance: f64,
) -> Result<CallerVariant> {
    let want = count_tokens(&snippet.text) as f64;
    let mut best: Option<(f64, &CallerSnippet)> = None;
    for p in pool {
        if p.id == snippet.id || calls_target(&p.text, &snippet.target_name) {
            continue;
        }
        let diff = (count_tokens(&p.text) as f64 - want).abs();
        if diff > tolerance * want + 1e-9 {
            continue;
        }
        if best.is_none_or(|(d, _)| diff < d) {
            best = Some((diff, p));
        }
    }
    let (_, chosen) = best.ok_or(Error::NoLengthMatch { tolerance })?;
    Ok(CallerVariant {
        kind: VariantKind::LengthMatchedIrrelevant,
        text: chosen.text.clone(),
        fallback_used: false,
        provenance: chosen.id.clone(),
    })
}

/// Argument shape of every call on `name`: positional count, keyword names,
/// and presence of `*` / `**` unpacking.
pub fn call_shapes(text: &str, name: &str) -> Vec<(usize, Vec<String>, bool, bool)> {
    let src = PySource::parse(text);
    let mut out = Vec::new();
    let mut calls = Vec::new();
    pyast::walk(src.root(), &mut |n| {
        if n.kind() == "call" {
            if let Some(f) = n.child_by_field_name("function") {
                if pyast::dotted_chain(src.text(), f).is_some_and(|c| c.last().is_some_and(|l| l == name)) {
                    calls.push(n);
                }
            }
        }
    });
    for call in calls {
        let mut positional = 0;
        let mut keywords = Vec::new();
        let (mut star, mut dstar) = (false, false);
        if let Some(args) = call.child_by_field_name("arguments") {
            let mut cursor = args.walk();
            for a in args.named_children(&mut cursor) {
                match a.kind() {
                    "keyword_argument" => {
                        if let Some(n) = a.child_by_field_name("name") {
                            keywords.push(src.node_text(n).to_string());
                        }
                    }
                    "list_splat" => star = true,
                    "dictionary_splat" => dstar = true,
                    "comment" => {}
                    _ => positional += 1,
                }
            }
        }
        out.push((positional, keywords, star, dstar));
    }
    out
}

/// Consistent renaming of caller-local names to fresh `v0, v1, ...` plus
/// comment removal. Seed 0 keeps first-occurrence order; other seeds permute
/// the fresh names.
pub fn semantics_preserving_perturb(snippet: &CallerSnippet, seed: u64) -> Result<CallerVariant> {
    let parsed = Parsed::new(snippet)?;
    let src = parsed.src.text();
    let def = parsed.src.first_function().expect("checked");

    let mut declared = BTreeSet::new();
    let mut imported = BTreeSet::new();
    let mut existing = BTreeSet::new();
    let mut order: Vec<String> = Vec::new();
    let mut identifiers = Vec::new();
    pyast::walk(def, &mut |n| {
        if n.kind() != "identifier" {
            return;
        }
        let text = src[n.byte_range()].to_string();
        existing.insert(text.clone());
        let role = pyast::identifier_role(n);
        match role {
            NameRole::Declaration => {
                declared.insert(text);
            }
            NameRole::Import => {
                imported.insert(text);
            }
            NameRole::Store | NameRole::LoadStore | NameRole::Param | NameRole::Def => {
                if !in_class_body(n) && !order.contains(&text) {
                    order.push(text);
                }
                identifiers.push(n);
            }
            NameRole::Load => identifiers.push(n),
            NameRole::AttributeName | NameRole::KeywordName => {}
        }
    });
    order.retain(|n| {
        !declared.contains(n) && !imported.contains(n) && *n != snippet.target_name && !pyast::is_keyword(n)
    });

    let mut fresh = Vec::with_capacity(order.len());
    let mut k = 0;
    while fresh.len() < order.len() {
        let cand = format!("v{k}");
        k += 1;
        if !existing.contains(&cand) {
            fresh.push(cand);
        }
    }
    if seed != 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fresh.shuffle(&mut rng);
    }
    let mapping: BTreeMap<&str, &str> = order
        .iter()
        .map(String::as_str)
        .zip(fresh.iter().map(String::as_str))
        .collect();

    let mut edits: Vec<(usize, usize, String)> = Vec::new();
    for n in identifiers {
        if let Some(new) = mapping.get(&src[n.byte_range()]) {
            edits.push((n.start_byte(), n.end_byte(), new.to_string()));
        }
    }
    pyast::walk(def, &mut |n| {
        if n.kind() == "comment" {
            edits.push(comment_removal(src, n));
        }
    });
    edits.sort_by_key(|e| std::cmp::Reverse(e.0));
    let base = def.start_byte();
    let mut out = src[base..def.end_byte()].to_string();
    for (s, e, rep) in edits {
        out.replace_range(s - base..e - base, &rep);
    }
    let text = pyast::dedent_continuation(&out, def.start_position().column);

    let reparsed = PySource::parse(text.as_str());
    if reparsed.has_error() {
        return Err(Error::RewriteVerificationFailure(format!("{}: output does not parse", snippet.id)));
    }
    if call_shapes(&snippet.text, &snippet.target_name) != call_shapes(&text, &snippet.target_name) {
        return Err(Error::RewriteVerificationFailure(format!(
            "{}: calls on {} changed shape",
            snippet.id, snippet.target_name
        )));
    }
    Ok(CallerVariant {
        kind: VariantKind::SemanticsPreserving,
        text,
        fallback_used: false,
        provenance: snippet.id.clone(),
    })
}

fn in_class_body(n: Node<'_>) -> bool {
    let mut cur = n.parent();
    while let Some(p) = cur {
        match p.kind() {
            "function_definition" | "lambda" => return false,
            "class_definition" => {
                // the class name itself belongs to the enclosing scope
                return p.child_by_field_name("name").map(|x| x.id()) != Some(n.id());
            }
            _ => {}
        }
        cur = p.parent();
    }
    false
}

/// Byte range (and empty replacement) that removes a comment; a line left
/// blank by the removal is dropped entirely.
fn comment_removal(src: &str, comment: Node<'_>) -> (usize, usize, String) {
    let line_start = src[..comment.start_byte()].rfind('\n').map(|i| i + 1).unwrap_or(0);
    let before = &src[line_start..comment.start_byte()];
    if before.trim().is_empty() {
        let end = src[comment.end_byte()..]
            .find('\n')
            .map(|i| comment.end_byte() + i + 1)
            .unwrap_or(src.len());
        if line_start == 0 {
            return (comment.start_byte(), comment.end_byte(), String::new());
        }
        return (line_start, end, String::new());
    }
    let trimmed = before.trim_end().len();
    (line_start + trimmed, comment.end_byte(), String::new())
}

pub fn make_variant(
    kind: VariantKind,
    snippet: &CallerSnippet,
    pool: &[CallerSnippet],
    tolerance: f64,
    seed: u64,
) -> Result<CallerVariant> {
    match kind {
        VariantKind::SignatureOnly => signature_only(snippet),
        VariantKind::CallSiteOnly => call_site_only(snippet),
        VariantKind::DataFlow => data_flow_slice(snippet),
        VariantKind::ControlFlow => control_flow_slice(snippet),
        VariantKind::LengthMatchedIrrelevant => length_matched_irrelevant(snippet, pool, tolerance),
        VariantKind::SemanticsPreserving => semantics_preserving_perturb(snippet, seed),
        VariantKind::Full => Ok(full(snippet)),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageClass {
    pub enclosed_by_block: bool,
    pub return_feeds_block: bool,
    pub unrelated_control_only: bool,
    pub no_structured_control: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryClass {
    Enclosed,
    ReturnFeeds,
    Unrelated,
    None,
}

impl PrimaryClass {
    pub const ALL: [PrimaryClass; 4] = [
        PrimaryClass::Enclosed,
        PrimaryClass::ReturnFeeds,
        PrimaryClass::Unrelated,
        PrimaryClass::None,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            PrimaryClass::Enclosed => "call site enclosed by a structured block",
            PrimaryClass::ReturnFeeds => "return value feeds a structured block",
            PrimaryClass::Unrelated => "only control flow unrelated to the call",
            PrimaryClass::None => "no structured control",
        }
    }
}

impl UsageClass {
    pub fn primary(&self) -> PrimaryClass {
        if self.enclosed_by_block {
            PrimaryClass::Enclosed
        } else if self.return_feeds_block {
            PrimaryClass::ReturnFeeds
        } else if self.unrelated_control_only {
            PrimaryClass::Unrelated
        } else {
            PrimaryClass::None
        }
    }
}

/// Structural flags of one caller's call sites on the target.
pub fn classify_call_site(snippet: &CallerSnippet) -> Result<UsageClass> {
    let parsed = Parsed::new(snippet)?;
    let view = parsed.view(snippet);
    let src = parsed.src.text();
    if view.calls.is_empty() {
        return Err(no_call_site(snippet));
    }
    let mut class = UsageClass::default();
    let mut related: Vec<Node<'_>> = Vec::new();
    for &call in &view.calls {
        if enclosing_control_block(call, view.def).is_some() {
            class.enclosed_by_block = true;
        }
        let Some(ui) = unit_of(&view.units, call) else { continue };
        let bound = result_bindings(src, call);
        for i in direct_uses(src, &view.units, ui, &bound) {
            let u = &view.units[i];
            if is_branching_header(u) {
                class.return_feeds_block = true;
            }
            related.push(u.node);
        }
        related.push(call);
    }
    let body = view.def.child_by_field_name("body").expect("function has a body");
    let mut blocks = Vec::new();
    pyast::walk_scope(body, &mut |n| {
        if pyast::is_control_block(n.kind()) {
            blocks.push(n);
        }
    });
    class.unrelated_control_only = !class.enclosed_by_block
        && !class.return_feeds_block
        && blocks
            .iter()
            .any(|b| !related.iter().any(|r| contains(*b, *r)));
    class.no_structured_control =
        !class.enclosed_by_block && !class.return_feeds_block && !class.unrelated_control_only;
    Ok(class)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShare {
    pub class: PrimaryClass,
    pub label: String,
    pub instances: usize,
    pub instance_pct: f64,
    pub tasks: usize,
    pub task_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub total_instances: usize,
    pub total_tasks: usize,
    pub classes: Vec<ClassShare>,
    pub skipped: usize,
}

/// Aggregate classifications. Each item is (task id, caller snippet); an
/// instance is one (task, caller) pair and a task counts toward every class
/// any of its instances has.
pub fn usage_report<'a>(items: impl IntoIterator<Item = (&'a str, &'a CallerSnippet)>) -> UsageReport {
    let mut per_class: BTreeMap<PrimaryClass, usize> = BTreeMap::new();
    let mut task_classes: BTreeMap<&str, BTreeSet<PrimaryClass>> = BTreeMap::new();
    let mut total = 0;
    let mut skipped = 0;
    for (task, snippet) in items {
        match classify_call_site(snippet) {
            Ok(c) => {
                total += 1;
                *per_class.entry(c.primary()).or_insert(0) += 1;
                task_classes.entry(task).or_default().insert(c.primary());
            }
            Err(_) => skipped += 1,
        }
    }
    let n_tasks = task_classes.len();
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    let classes = PrimaryClass::ALL
        .into_iter()
        .map(|c| {
            let instances = per_class.get(&c).copied().unwrap_or(0);
            let tasks = task_classes.values().filter(|s| s.contains(&c)).count();
            ClassShare {
                class: c,
                label: c.label().to_string(),
                instances,
                instance_pct: pct(instances, total),
                tasks,
                task_pct: pct(tasks, n_tasks),
            }
        })
        .collect();
    UsageReport {
        total_instances: total,
        total_tasks: n_tasks,
        classes,
        skipped,
    }
}

pub fn format_usage_report(r: &UsageReport) -> String {
    let mut s = format!("{} instances across {} tasks\n", r.total_instances, r.total_tasks);
    for c in &r.classes {
        s.push_str(&format!(
            "{}: {:.2}% instances, {:.2}% tasks\n",
            c.label, c.instance_pct, c.task_pct
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snip(text: &str) -> CallerSnippet {
        CallerSnippet::from_text("c", text, "m.f")
    }

    #[test]
    fn signature() {
        assert_eq!(signature_only(&snip("def g(a):\n    f(a)")).unwrap().text, "def g(a):");
        let v = signature_only(&snip("def g(a,\n      b=(1,\n         2)):\n    f(a)")).unwrap();
        assert_eq!(v.text, "def g(a,\n      b=(1,\n         2)):");
    }

    #[test]
    fn call_site() {
        let body = "def g():\n    x = 1\n    y = f(x)\n    return y";
        assert_eq!(call_site_only(&snip(body)).unwrap().text, "y = f(x)");
        let cond = "def g(x):\n    if f(x):\n        return 1";
        assert_eq!(call_site_only(&snip(cond)).unwrap().text, "f(x)");
        let two = "def g(x):\n    a = f(1)\n    b = f(2)";
        assert_eq!(call_site_only(&snip(two)).unwrap().text, "a = f(1)");
        assert!(matches!(
            call_site_only(&snip("def g():\n    h()")),
            Err(Error::NoCallSite { .. })
        ));
    }

    #[test]
    fn data_flow() {
        let v = data_flow_slice(&snip("def g():\n    r = f()\n    print(r)\n    z = 2")).unwrap();
        assert_eq!(v.text, "r = f()\nprint(r)");
        assert_eq!(data_flow_slice(&snip("def g():\n    f()")).unwrap().text, "f()");
        let v = data_flow_slice(&snip("def g():\n    r = f()\n    r = 0\n    print(r)")).unwrap();
        assert_eq!(v.text, "r = f()");
        let v = data_flow_slice(&snip("def g():\n    r = f()\n    if r > 0:\n        go()\n    return r['k']")).unwrap();
        assert_eq!(v.text, "r = f()\nif r > 0:\nreturn r['k']");
    }

    #[test]
    fn control_flow() {
        let v = control_flow_slice(&snip("def g():\n    try:\n        r = f()\n    except E:\n        pass")).unwrap();
        assert_eq!(v.text, "try:\n    r = f()\nexcept E:\n    pass");
        assert!(!v.fallback_used);
        let v = control_flow_slice(&snip("def g():\n    r = f()\n    if r:\n        go()")).unwrap();
        assert_eq!(v.text, "r = f()\nif r:\n    go()");
        let straight = "def g():\n    r = f()\n    return r";
        let v = control_flow_slice(&snip(straight)).unwrap();
        assert!(v.fallback_used);
        assert_eq!(v.text, straight);
    }

    #[test]
    fn length_matching() {
        let caller = snip(&format!("def g():\n    return f({})", vec!["1"; 17].join(" + ")));
        let n = count_tokens(&caller.text);
        let mk = |id: &str, k: usize| CallerSnippet {
            id: id.into(),
            text: format!("def h():\n    return {}", vec!["x"; k].join(" + ")),
            target_name: "f".into(),
            sites: vec![],
        };
        let p38 = mk("p38", 17);
        let p80 = mk("p80", 38);
        assert!(count_tokens(&p38.text).abs_diff(n) <= n / 10);
        assert!(count_tokens(&p80.text).abs_diff(n) > n / 10);
        let v = length_matched_irrelevant(&caller, &[p80.clone(), p38], 0.1).unwrap();
        assert_eq!(v.provenance, "p38");
        assert!(!calls_target(&v.text, "f"));
        assert!(matches!(
            length_matched_irrelevant(&caller, &[p80], 0.1),
            Err(Error::NoLengthMatch { .. })
        ));
    }

    #[test]
    fn perturbation() {
        let v = semantics_preserving_perturb(&snip("def g(a):\n    r = f(a)\n    return r"), 0).unwrap();
        assert_eq!(v.text, "def v0(v1):\n    v2 = f(v1)\n    return v2");
        let v = semantics_preserving_perturb(
            &snip("def g(a):\n    # note\n    r = f(a, key=CONF)  # trailing\n    return r.value"),
            0,
        )
        .unwrap();
        assert_eq!(v.text, "def v0(v1):\n    v2 = f(v1, key=CONF)\n    return v2.value");
        let s = snip("def g(a, b):\n    x = f(a)\n    y = f(b, c=x)\n    return x, y");
        let a = semantics_preserving_perturb(&s, 11).unwrap();
        assert_eq!(a, semantics_preserving_perturb(&s, 11).unwrap());
        assert!(calls_target(&a.text, "f"));
    }

    #[test]
    fn fresh_names_avoid_clashes() {
        let v = semantics_preserving_perturb(&snip("def g(a):\n    return f(a, v0)"), 0).unwrap();
        assert_eq!(v.text, "def v1(v2):\n    return f(v2, v0)");
    }

    #[test]
    fn classification() {
        let c = |t: &str| classify_call_site(&snip(t)).unwrap().primary();
        assert_eq!(c("def g(xs):\n    for x in xs:\n        f(x)"), PrimaryClass::Enclosed);
        assert_eq!(c("def g():\n    r = f()\n    if r > 0:\n        go()"), PrimaryClass::ReturnFeeds);
        assert_eq!(c("def g(x):\n    r = f()\n    if x:\n        go()\n    return r"), PrimaryClass::Unrelated);
        assert_eq!(c("def g():\n    r = f()\n    return r"), PrimaryClass::None);
    }

    #[test]
    fn report_format() {
        let a = snip("def g(xs):\n    for x in xs:\n        f(x)");
        let b = snip("def h():\n    return f()");
        let r = usage_report([("t1", &a), ("t1", &b), ("t2", &b)]);
        let text = format_usage_report(&r);
        assert!(text.contains("call site enclosed by a structured block: 33.33% instances, 50.00% tasks"));
        assert!(text.contains("no structured control: 66.67% instances, 100.00% tasks"));
    }
}
