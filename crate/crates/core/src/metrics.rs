//! Reference-based similarity: ROUGE-L F1 over code tokens and a four-part
//! CodeBLEU (BLEU, keyword-weighted n-gram, AST subtree match, data-flow
//! match).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use crate::error::{Error, Result};
use crate::pyast::{self, PySource};
use crate::tokenize::tokenize;

pub use crate::tokenize::tokenize as tokenize_code;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Result<RougeL> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let l = lcs_len(candidate, reference) as f64;
    let precision = if candidate.is_empty() { 0.0 } else { l / candidate.len() as f64 };
    let recall = l / reference.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(RougeL { precision, recall, f1 })
}

pub fn rouge_l_text(candidate: &str, reference: &str) -> Result<RougeL> {
    rouge_l(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        CodeBleuWeights {
            alpha: 0.25,
            beta: 0.25,
            gamma: 0.25,
            delta: 0.25,
        }
    }
}

impl CodeBleuWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.alpha, self.beta, self.gamma, self.delta];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain("CodeBLEU weights must be non-negative".into()));
        }
        if (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("CodeBLEU weights must sum to 1".into()));
        }
        Ok(())
    }
}

pub const SMOOTHING_EPS: f64 = 1e-9;
pub const KEYWORD_WEIGHT: f64 = 5.0;
pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeBleu {
    pub score: f64,
    pub bleu: f64,
    pub weighted_ngram: f64,
    pub ast_match: f64,
    pub dataflow_match: f64,
    pub flags: Vec<String>,
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram precision; `weight` scales each candidate n-gram.
fn precision(cand: &[String], refr: &[String], n: usize, weight: impl Fn(&[String]) -> f64) -> f64 {
    let c = ngrams(cand, n);
    let r = ngrams(refr, n);
    let mut matched = 0.0;
    let mut total = 0.0;
    for (g, &count) in &c {
        let w = weight(g);
        total += w * count as f64;
        matched += w * count.min(r.get(g).copied().unwrap_or(0)) as f64;
    }
    if matched == 0.0 {
        matched = SMOOTHING_EPS;
    }
    matched / total.max(1.0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Geometric mean over orders 1..=min(4, |ref|) times the brevity penalty.
fn bleu_with(cand: &[String], refr: &[String], unigram_weight: impl Fn(&[String]) -> f64) -> f64 {
    let orders = MAX_ORDER.min(refr.len());
    if orders == 0 || cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let p = if n == 1 {
            precision(cand, refr, 1, &unigram_weight)
        } else {
            precision(cand, refr, n, |_| 1.0)
        };
        log_sum += p.ln();
    }
    brevity_penalty(cand.len(), refr.len()) * (log_sum / orders as f64).exp()
}

pub fn bleu(cand: &[String], refr: &[String]) -> f64 {
    bleu_with(cand, refr, |_| 1.0)
}

pub fn weighted_ngram(cand: &[String], refr: &[String]) -> f64 {
    bleu_with(cand, refr, |g| {
        if pyast::is_keyword(&g[0]) {
            KEYWORD_WEIGHT
        } else {
            1.0
        }
    })
}

fn subtree_repr(src: &str, node: Node<'_>, out: &mut String) {
    if node.kind() == "identifier" {
        out.push_str("ID");
        return;
    }
    if node.child_count() == 0 {
        if node.is_named() {
            out.push_str(node.kind());
            out.push(':');
            out.push_str(&src[node.byte_range()]);
        } else {
            out.push_str(node.kind());
        }
        return;
    }
    out.push('(');
    out.push_str(node.kind());
    let mut cursor = node.walk();
    for c in node.children(&mut cursor) {
        if c.kind() == "comment" {
            continue;
        }
        out.push(' ');
        subtree_repr(src, c, out);
    }
    out.push(')');
}

/// Multiset of identifier-normalized subtrees rooted at every inner node.
fn subtrees(src: &PySource) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    pyast::walk(src.root(), &mut |n| {
        if n.child_count() > 0 && n.kind() != "comment" {
            let mut s = String::new();
            subtree_repr(src.text(), n, &mut s);
            *out.entry(s).or_insert(0) += 1;
        }
    });
    out
}

fn multiset_recall(cand: &BTreeMap<String, usize>, refr: &BTreeMap<String, usize>) -> Option<f64> {
    let total: usize = refr.values().sum();
    if total == 0 {
        return None;
    }
    let matched: usize = refr
        .iter()
        .map(|(k, &v)| v.min(cand.get(k).copied().unwrap_or(0)))
        .sum();
    Some(matched as f64 / total as f64)
}

pub fn ast_match(cand: &PySource, refr: &PySource) -> f64 {
    multiset_recall(&subtrees(cand), &subtrees(refr)).unwrap_or(1.0)
}

fn identifiers_in(src: &str, node: Node<'_>, out: &mut Vec<String>) {
    pyast::walk(node, &mut |n| {
        if n.kind() == "identifier" {
            out.push(src[n.byte_range()].to_string());
        }
    });
}

/// Def-use edges `(defined, source)` from assignments, augmented
/// assignments, and for-loops, with variables renamed by first appearance.
pub fn dataflow_edges(src: &PySource) -> BTreeMap<String, usize> {
    let text = src.text();
    let mut raw: Vec<(String, String)> = Vec::new();
    let mut order: Vec<String> = Vec::new();
    pyast::walk(src.root(), &mut |n| {
        let (targets, sources, self_edge) = match n.kind() {
            "assignment" => (n.child_by_field_name("left"), n.child_by_field_name("right"), false),
            "augmented_assignment" => (n.child_by_field_name("left"), n.child_by_field_name("right"), true),
            "for_statement" => (n.child_by_field_name("left"), n.child_by_field_name("right"), false),
            _ => return,
        };
        let (Some(l), Some(r)) = (targets, sources) else { return };
        let mut defs = Vec::new();
        if l.kind() == "identifier" {
            defs.push(text[l.byte_range()].to_string());
        } else if !matches!(l.kind(), "attribute" | "subscript") {
            identifiers_in(text, l, &mut defs);
        }
        let mut uses = Vec::new();
        identifiers_in(text, r, &mut uses);
        for d in &defs {
            if self_edge {
                raw.push((d.clone(), d.clone()));
            }
            for u in &uses {
                raw.push((d.clone(), u.clone()));
            }
        }
    });
    for (d, u) in &raw {
        for v in [d, u] {
            if !order.contains(v) {
                order.push(v.clone());
            }
        }
    }
    let idx = |v: &String| order.iter().position(|o| o == v).unwrap_or(0);
    let mut out = BTreeMap::new();
    for (d, u) in &raw {
        *out.entry(format!("var_{}<-var_{}", idx(d), idx(u))).or_insert(0) += 1;
    }
    out
}

pub fn dataflow_match(cand: &PySource, refr: &PySource) -> f64 {
    multiset_recall(&dataflow_edges(cand), &dataflow_edges(refr)).unwrap_or(1.0)
}

pub fn codebleu(candidate: &str, reference: &str, weights: &CodeBleuWeights) -> Result<CodeBleu> {
    weights.validate()?;
    let rt = tokenize(reference);
    if rt.is_empty() {
        return Err(Error::EmptyReference);
    }
    let ct = tokenize(candidate);
    let b = bleu(&ct, &rt);
    let w = weighted_ngram(&ct, &rt);
    let refr = PySource::parse(reference);
    let cand = PySource::parse(candidate);
    let mut flags = Vec::new();
    if refr.has_error() {
        flags.push("reference_parse_failure".to_string());
    }
    let (a, d) = if ct.is_empty() || cand.has_error() {
        flags.push("candidate_parse_failure".to_string());
        (0.0, 0.0)
    } else {
        (ast_match(&cand, &refr), dataflow_match(&cand, &refr))
    };
    Ok(CodeBleu {
        score: weights.alpha * b + weights.beta * w + weights.gamma * a + weights.delta * d,
        bleu: b,
        weighted_ngram: w,
        ast_match: a,
        dataflow_match: d,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub id: String,
    pub candidate: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub id: String,
    pub codebleu: f64,
    pub rouge_l_f1: f64,
    pub flags: Vec<String>,
}

pub fn score_pair(pair: &Pair, weights: &CodeBleuWeights) -> Result<PairScore> {
    let cb = codebleu(&pair.candidate, &pair.reference, weights)?;
    let rl = rouge_l_text(&pair.candidate, &pair.reference)?;
    Ok(PairScore {
        id: pair.id.clone(),
        codebleu: cb.score,
        rouge_l_f1: rl.f1,
        flags: cb.flags,
    })
}
