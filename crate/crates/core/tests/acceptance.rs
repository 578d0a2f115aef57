//! End-to-end acceptance checks. Each criterion runs with a time budget and
//! prints one result line; the test fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use regex::Regex;

use callerkit::analysis::{build_call_graph, extract_repo, parse_file, CallGraph};
use callerkit::bench::{
    build_tasks, extract_requirements, format_lint, group_usage_patterns, lint_suite, BenchmarkTask, Fragment,
    RequirementKind, SiteContext, SiteRef,
};
use callerkit::corpus::{
    build_corpus, parse_serialized, select_targets, serialize, CorpusOptions, TargetPolicy, CALLEDBY, DOCSTRING, FUNC,
};
use callerkit::eval::{aggregate, evaluate, pass_at_k, run_eval, Candidate, Sandbox, Status};
use callerkit::metrics::{codebleu, lcs_len, rouge_l, rouge_l_text, CodeBleuWeights};
use callerkit::pyast::{is_keyword, PySource};
use callerkit::tokenize::{count_tokens, tokenize};
use callerkit::variants::{
    calls_target, call_shapes, control_flow_slice, format_usage_report, make_variant, usage_report, CallerSnippet,
    PrimaryClass, VariantKind,
};
use callerkit::Error;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn write_tree(root: &Path, files: &[(&str, &str)]) {
    for (rel, text) in files {
        let p = root.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, text).unwrap();
    }
}

fn run_prop<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    if let Err(e) = runner.run(&strategy, test) {
        panic!("{e}");
    }
}

// ---------------------------------------------------------------------------
// Call-graph oracle: scans source text line by line, expands names through a
// hand-written alias table, and matches the result against every declaration.

struct OracleRepo {
    aliases: BTreeMap<&'static str, Vec<(&'static str, &'static str)>>,
    mro: BTreeMap<&'static str, Vec<&'static str>>,
}

#[derive(Clone)]
struct Scope {
    qname: String,
    indent: usize,
    is_class: bool,
}

fn module_name(rel: &str) -> String {
    let m = rel.trim_end_matches(".py").replace('/', ".");
    m.strip_suffix(".__init__").map(str::to_string).unwrap_or(m)
}

fn strip_strings(line: &str) -> String {
    let mut out = String::new();
    let mut quote: Option<char> = None;
    for ch in line.chars() {
        match quote {
            Some(q) if ch == q => {
                quote = None;
                out.push(ch);
            }
            Some(_) => out.push(' '),
            None if ch == '"' || ch == '\'' => {
                quote = Some(ch);
                out.push(ch);
            }
            None if ch == '#' => break,
            None => out.push(ch),
        }
    }
    out
}

/// Walk each file's lines keeping a stack of enclosing def/class scopes.
fn scan(root: &Path, files: &[String], mut on_line: impl FnMut(&str, &[Scope], usize, &str, bool)) {
    for rel in files {
        let text = std::fs::read_to_string(root.join(rel)).unwrap();
        let module = module_name(rel);
        let mut stack: Vec<Scope> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let trimmed = raw.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let indent = raw.len() - trimmed.len();
            while stack.last().is_some_and(|s| s.indent >= indent) {
                stack.pop();
            }
            let decl = trimmed
                .strip_prefix("def ")
                .map(|r| (r, false))
                .or_else(|| trimmed.strip_prefix("class ").map(|r| (r, true)));
            if let Some((rest, is_class)) = decl {
                let name: String = rest.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
                let qname = match stack.last() {
                    Some(p) if p.is_class => format!("{}.{name}", p.qname),
                    Some(p) => format!("{}.<locals>.{name}", p.qname),
                    None => format!("{module}.{name}"),
                };
                stack.push(Scope { qname, indent, is_class });
                on_line(&module, &stack, i + 1, trimmed, true);
                continue;
            }
            on_line(&module, &stack, i + 1, trimmed, false);
        }
    }
}

fn oracle_edges(root: &Path, repo: &OracleRepo) -> BTreeMap<(String, String, usize), usize> {
    let files = callerkit::analysis::callgraph::python_files(root).unwrap();
    let mut decls: BTreeMap<String, bool> = BTreeMap::new();
    scan(root, &files, |_, stack, _, _, is_decl| {
        if is_decl {
            let s = stack.last().unwrap();
            decls.insert(s.qname.clone(), s.is_class);
        }
    });
    let call_re = Regex::new(r"(super\(\)\.)?([A-Za-z_]\w*(?:\.[A-Za-z_]\w*)*)\s*\(").unwrap();
    let mro_of = |class: &str| -> Vec<String> {
        repo.mro
            .get(class)
            .map(|v| v.iter().map(|s| s.to_string()).collect())
            .unwrap_or_else(|| vec![class.to_string()])
    };
    let method = |classes: &[String], m: &str| -> Option<String> {
        classes
            .iter()
            .map(|c| format!("{c}.{m}"))
            .find(|q| decls.get(q) == Some(&false))
    };
    let mut edges = BTreeMap::new();
    scan(root, &files, |module, stack, line, text, is_decl| {
        if is_decl {
            return;
        }
        let Some(fi) = stack.iter().rposition(|s| !s.is_class) else { return };
        let caller = &stack[fi];
        let class = fi.checked_sub(1).map(|c| &stack[c]).filter(|s| s.is_class);
        let clean = strip_strings(text);
        for m in call_re.captures_iter(&clean) {
            let start = m.get(0).unwrap().start();
            if clean[..start].chars().last().is_some_and(|c| c == '.' || c == ')' || c == ']' || c.is_alphanumeric() || c == '_') {
                continue;
            }
            let parts: Vec<&str> = m[2].split('.').collect();
            let callee = if m.get(1).is_some() {
                class.and_then(|c| method(&mro_of(&c.qname)[1..], parts[0]))
            } else if parts[0] == "self" && parts.len() == 2 {
                class.and_then(|c| method(&mro_of(&c.qname), parts[1]))
            } else {
                let head = parts[0];
                let locals = stack[..=fi]
                    .iter()
                    .rev()
                    .filter(|s| !s.is_class)
                    .map(|s| format!("{}.<locals>.{head}", s.qname))
                    .find(|q| decls.contains_key(q));
                let alias = repo
                    .aliases
                    .get(module)
                    .and_then(|a| a.iter().find(|(n, _)| *n == head))
                    .map(|(_, q)| q.to_string());
                let global = Some(format!("{module}.{head}")).filter(|q| decls.contains_key(q));
                locals.or(alias).or(global).and_then(|base| {
                    let full = std::iter::once(base.as_str()).chain(parts[1..].iter().copied()).collect::<Vec<_>>().join(".");
                    match decls.get(&full) {
                        Some(false) => Some(full),
                        Some(true) => method(&mro_of(&full), "__init__"),
                        None => None,
                    }
                })
            };
            if let Some(callee) = callee {
                *edges.entry((caller.qname.clone(), callee, line)).or_insert(0) += 1;
            }
        }
    });
    edges
}

fn graph_edges(g: &CallGraph) -> BTreeMap<(String, String, usize), usize> {
    let mut out = BTreeMap::new();
    for e in &g.edges {
        *out.entry((e.caller.clone(), e.callee.clone(), e.site.line)).or_insert(0) += 1;
    }
    out
}

fn oracle_repos() -> Vec<(&'static str, OracleRepo)> {
    vec![
        (
            "shop",
            OracleRepo {
                aliases: BTreeMap::from([
                    (
                        "shop.cart",
                        vec![
                            ("pr", "shop.pricing"),
                            ("sub", "shop.pricing.subtotal"),
                            ("order_total", "shop.pricing.total"),
                            ("cart", "shop.cart.Cart"),
                        ],
                    ),
                    ("shop.report", vec![("c", "shop.cart"), ("tax", "shop.pricing.tax")]),
                ]),
                mro: BTreeMap::new(),
            },
        ),
        (
            "geometry",
            OracleRepo {
                aliases: BTreeMap::from([(
                    "geo.composite",
                    vec![
                        ("Circle", "geo.shapes.Circle"),
                        ("Sq", "geo.shapes.Square"),
                        ("shapes", "geo.shapes"),
                        ("Serializable", "geo.mixins.Serializable"),
                        ("Comparable", "geo.mixins.Comparable"),
                    ],
                )]),
                mro: BTreeMap::from([
                    (
                        "geo.composite.Ring",
                        vec![
                            "geo.composite.Ring",
                            "geo.shapes.Circle",
                            "geo.shapes.Shape",
                            "geo.mixins.Serializable",
                            "geo.mixins.Comparable",
                        ],
                    ),
                    ("geo.shapes.Circle", vec!["geo.shapes.Circle", "geo.shapes.Shape"]),
                    ("geo.shapes.Square", vec!["geo.shapes.Square", "geo.shapes.Shape"]),
                ]),
            },
        ),
        (
            "pipeline",
            OracleRepo {
                aliases: BTreeMap::from([(
                    "src.flow.run",
                    vec![
                        ("fio", "src.flow.io"),
                        ("clean", "src.flow.steps.clean"),
                        ("make_counter", "src.flow.steps.make_counter"),
                        ("flow", "src.flow"),
                    ],
                )]),
                mro: BTreeMap::new(),
            },
        ),
    ]
}

fn criterion_1() {
    for (name, oracle) in oracle_repos() {
        let root = fixtures().join("graphs").join(name);
        let n_files = callerkit::analysis::callgraph::python_files(&root).unwrap().len();
        assert!(n_files <= 20, "{name}: {n_files} files");
        let (_, graph) = extract_repo(&root).unwrap();
        let got = graph_edges(&graph);
        let want = oracle_edges(&root, &oracle);
        assert!(!want.is_empty(), "{name}: oracle found no edges");
        let missing: Vec<_> = want.keys().filter(|k| got.get(*k) != want.get(*k)).collect();
        let extra: Vec<_> = got.keys().filter(|k| !want.contains_key(*k)).collect();
        assert!(
            missing.is_empty() && extra.is_empty(),
            "{name}: missing/miscounted {missing:?}, extra {extra:?}"
        );
    }
}

// ---------------------------------------------------------------------------

/// Modules, each a list of functions, each a list of (module, function)
/// call targets.
type SyntheticRepo = Vec<Vec<Vec<(usize, usize)>>>;

fn synthetic_repo() -> impl Strategy<Value = SyntheticRepo> {
    (1usize..=4, 1usize..=6).prop_flat_map(|(mods, funcs)| {
        proptest::collection::vec(
            proptest::collection::vec(proptest::collection::vec((0..mods, 0..funcs), 0..5), funcs..=funcs),
            mods..=mods,
        )
    })
}

fn criterion_2() {
    run_prop(200, synthetic_repo(), |repo| {
        let mut facts = Vec::new();
        let mut expected: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (mi, funcs) in repo.iter().enumerate() {
            let mut src: String = (0..repo.len()).filter(|&j| j != mi).map(|j| format!("import m{j}\n")).collect();
            for (fi, calls) in funcs.iter().enumerate() {
                src.push_str(&format!("\n\ndef f{fi}(x):\n    y = x\n"));
                for &(tm, tf) in calls {
                    if tm == mi {
                        src.push_str(&format!("    y = f{tf}(y)\n"));
                    } else {
                        src.push_str(&format!("    y = m{tm}.f{tf}(y)\n"));
                    }
                    *expected.entry((format!("m{mi}.f{fi}"), format!("m{tm}.f{tf}"))).or_insert(0) += 1;
                }
                src.push_str("    return y\n");
            }
            facts.push(parse_file(&src, &format!("m{mi}.py")).unwrap());
        }
        let graph = build_call_graph(&facts);
        let (calls, calledby) = graph.edge_multisets();
        prop_assert_eq!(&calls, &expected);
        prop_assert_eq!(&calls, &calledby);
        prop_assert!(graph.is_transpose_consistent());
        let mut via_calls = BTreeMap::new();
        let mut via_calledby = BTreeMap::new();
        for q in graph.nodes.keys() {
            for e in graph.calls_of(q) {
                prop_assert_eq!(&e.caller, q);
                *via_calls.entry((e.caller.clone(), e.callee.clone())).or_insert(0) += 1;
            }
            for e in graph.calledby_of(q) {
                prop_assert_eq!(&e.callee, q);
                *via_calledby.entry((e.caller.clone(), e.callee.clone())).or_insert(0) += 1;
            }
        }
        prop_assert_eq!(&via_calls, &expected);
        prop_assert_eq!(&via_calledby, &expected);
        Ok(())
    });
}

// ---------------------------------------------------------------------------

fn expansion_graph(callers_per_target: &[usize]) -> CallGraph {
    let mut a = String::new();
    let mut b = String::from("from a import *\n");
    for (j, &m) in callers_per_target.iter().enumerate() {
        a.push_str(&format!("\n\ndef t{j}(x):\n    \"\"\"Target {j}.\"\"\"\n    return x + {j}\n"));
        for i in 0..m {
            let dst = if i % 2 == 0 { &mut a } else { &mut b };
            dst.push_str(&format!("\n\ndef c{j}_{i}(y):\n    return t{j}(y) * {}\n", i + 1));
        }
    }
    b = b.replacen("from a import *", &format!("from a import {}", (0..callers_per_target.len()).map(|j| format!("t{j}")).collect::<Vec<_>>().join(", ")), 1);
    build_call_graph(&[parse_file(&a, "a.py").unwrap(), parse_file(&b, "b.py").unwrap()])
}

fn criterion_3() {
    run_prop(25, (proptest::collection::vec(1usize..=6, 1..5), any::<u64>()), |(ms, seed)| {
        let graph = expansion_graph(&ms);
        let policy = TargetPolicy::default();
        let (targets, _) = select_targets(&graph, "r", &policy);
        prop_assert_eq!(targets.len(), ms.len());
        let graphs = vec![("r".to_string(), graph)];
        for n_train in 1..=3usize {
            let opts = CorpusOptions {
                n_train,
                two_hop: false,
                seed,
                policy: policy.clone(),
            };
            let build = build_corpus(&graphs, &opts).unwrap();
            let again = build_corpus(&graphs, &opts).unwrap();
            prop_assert_eq!(serde_json::to_string(&build).unwrap(), serde_json::to_string(&again).unwrap());
            prop_assert_eq!(build.instances.len(), ms.iter().sum::<usize>());
            for (j, &m) in ms.iter().enumerate() {
                let target = format!("a.t{j}");
                let insts: Vec<_> = build.instances.iter().filter(|i| i.target_qname == target).collect();
                prop_assert_eq!(insts.len(), m);
                let firsts: BTreeSet<&str> = insts.iter().map(|i| i.caller_qnames[0].as_str()).collect();
                prop_assert_eq!(firsts.len(), m);
                for inst in &insts {
                    let distinct: BTreeSet<&String> = inst.caller_qnames.iter().collect();
                    prop_assert_eq!(distinct.len(), inst.caller_qnames.len());
                    prop_assert_eq!(inst.callers.len(), n_train.min(m));
                    prop_assert_eq!(inst.short, m < n_train);
                    for q in &inst.caller_qnames {
                        let own = q.starts_with(&format!("a.c{j}_")) || q.starts_with(&format!("b.c{j}_"));
                        prop_assert!(own, "{} is not a caller of t{}", q, j);
                    }
                }
            }
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------

fn criterion_4() {
    let caller = ("[a-z]{1,6}", proptest::collection::vec("[a-z0-9_ =+*()\\[\\]',.-]{1,24}", 1..4))
        .prop_map(|(name, lines)| format!("def {name}():\n    {}", lines.join("\n    ")));
    let strategy = (
        "def [a-z_]{1,8}\\(([a-z], ){0,3}\\):",
        proptest::collection::vec(caller, 0..5),
        "[A-Za-z0-9 .,:\n]{0,60}",
    );
    run_prop(1000, strategy, |(header, callers, doc)| {
        let text = serialize(&header, &callers, &doc);
        let positions: Vec<usize> = [FUNC, CALLEDBY, DOCSTRING]
            .iter()
            .map(|m| {
                let hits: Vec<_> = text.match_indices(m).collect();
                assert_eq!(hits.len(), 1, "{m} in {text:?}");
                hits[0].0
            })
            .collect();
        prop_assert!(positions[0] == 0 && positions[0] < positions[1] && positions[1] < positions[2]);
        let back = parse_serialized(&text).unwrap();
        prop_assert_eq!(back.header, header);
        prop_assert_eq!(back.callers, callers);
        prop_assert_eq!(back.docstring, doc);
        Ok(())
    });
}

// ---------------------------------------------------------------------------

fn template(kind: usize, i: usize, callee: &str) -> String {
    let pad: String = (0..i % 3).map(|k| format!("    w{k} = {k}\n")).collect();
    match kind {
        0 => format!("def s{i}(a{i}):\n{pad}    r = {callee}(a{i}, {i})\n    z = r + {i}\n    return z"),
        1 => format!("def l{i}(items):\n{pad}    total = 0\n    for it in items:\n        total += {callee}(it)\n    return total"),
        2 => format!("def t{i}(p):\n{pad}    try:\n        r = {callee}(p)\n    except ValueError:\n        r = None\n    return r"),
        3 => format!("def c{i}(p):\n{pad}    r = {callee}(p, key=CONF)\n    if r > {i}:\n        return r['k']\n    return None"),
        _ => format!("def u{i}(p, flag):\n{pad}    if flag:\n        p = p + {i}\n    out = {callee}(p)\n    print(out)\n    return out"),
    }
}

fn alpha_normal(text: &str) -> Vec<String> {
    let mut names: BTreeMap<String, usize> = BTreeMap::new();
    tokenize(text)
        .into_iter()
        .map(|t| {
            let ident = t.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
                && t.chars().all(|c| c.is_alphanumeric() || c == '_')
                && !is_keyword(&t);
            if ident {
                let n = names.len();
                format!("id{}", names.entry(t).or_insert(n))
            } else {
                t
            }
        })
        .collect()
}

fn trimmed_lines(text: &str) -> BTreeSet<String> {
    text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect()
}

fn criterion_5() {
    let callers: Vec<CallerSnippet> = (0..50)
        .map(|i| CallerSnippet::from_text(&format!("c{i}"), &template(i % 5, i, "f"), "m.f"))
        .collect();
    let pool: Vec<CallerSnippet> = (0..50)
        .map(|i| CallerSnippet::from_text(&format!("h{i}"), &template((i + 2) % 5, i, "h"), "m.h"))
        .collect();
    for (i, c) in callers.iter().enumerate() {
        assert_eq!(c.sites.len(), 1, "{}", c.text);
        let v = |k| make_variant(k, c, &pool, 0.1, i as u64).unwrap();
        for k in [
            VariantKind::CallSiteOnly,
            VariantKind::DataFlow,
            VariantKind::ControlFlow,
            VariantKind::SemanticsPreserving,
            VariantKind::Full,
        ] {
            assert!(calls_target(&v(k).text, "f"), "{k:?} lost the call in {}", c.text);
        }
        let sig = v(VariantKind::SignatureOnly);
        assert!(!calls_target(&sig.text, "f"));
        assert_eq!(sig.text, c.text.lines().next().unwrap());

        let lm = v(VariantKind::LengthMatchedIrrelevant);
        assert!(!calls_target(&lm.text, "f"));
        let (a, b) = (count_tokens(&c.text) as f64, count_tokens(&lm.text) as f64);
        assert!((a - b).abs() <= 0.1 * a, "{a} vs {b}");

        let lines = trimmed_lines(&c.text);
        let df = v(VariantKind::DataFlow);
        assert!(trimmed_lines(&df.text).is_subset(&lines), "{}", df.text);
        let cf = control_flow_slice(c).unwrap();
        if cf.fallback_used {
            assert_eq!(cf.text, c.text);
        } else {
            assert!(trimmed_lines(&cf.text).is_subset(&lines), "{}", cf.text);
        }
        match i % 5 {
            0 => assert!(cf.fallback_used, "straight-line caller must fall back"),
            1..=3 => assert!(!cf.fallback_used, "{}", c.text),
            _ => {}
        }

        let sp = v(VariantKind::SemanticsPreserving);
        assert!(!PySource::parse(sp.text.as_str()).has_error());
        assert_eq!(alpha_normal(&sp.text), alpha_normal(&c.text), "{}", sp.text);
        assert_eq!(call_shapes(&sp.text, "f"), call_shapes(&c.text, "f"));
        assert_ne!(sp.text, c.text);
    }
}

// ---------------------------------------------------------------------------

const CONF_REPO: &[(&str, &str)] = &[
    ("pkg/__init__.py", ""),
    (
        "pkg/conf.py",
        "def load(name):\n    \"\"\"Configuration for a named profile.\"\"\"\n    return {\"language\": name, \"debug\": False}\n\n\ndef neg(x):\n    \"\"\"Negate.\"\"\"\n    return -x\n",
    ),
    (
        "pkg/app.py",
        "from pkg.conf import load, neg\n\n\ndef lang(n):\n    cfg = load(n)\n    return cfg[\"language\"]\n\n\ndef check(n):\n    cfg = load(n)\n    if cfg:\n        return cfg[\"language\"]\n    return None\n\n\ndef names(n):\n    return load(n).keys()\n\n\ndef flip(v):\n    return neg(v)\n",
    ),
];

fn fragment(target: &str, text: &str, covers: &[&str]) -> Fragment {
    Fragment {
        repo: "conf".into(),
        target: target.into(),
        fragment: text.into(),
        covers: covers.iter().map(|s| s.to_string()).collect(),
        imports: vec![],
    }
}

fn criterion_6() {
    let dir = tempfile::tempdir().unwrap();
    write_tree(dir.path(), CONF_REPO);
    let (_, graph) = extract_repo(dir.path()).unwrap();

    let mut sites = Vec::new();
    for c in graph.direct_callers("pkg.conf.load") {
        let s = CallerSnippet::from_ref(&c, "pkg.conf.load");
        let ctx = SiteContext {
            caller: &c.qname,
            file: &c.module_path,
            first_line: c.decl.span.start,
        };
        sites.extend(extract_requirements(&s.text, "load", &s.sites, &ctx));
    }
    let patterns = group_usage_patterns(&sites);
    assert_eq!(patterns.len(), 2, "{patterns:?}");
    let by_site: BTreeMap<&SiteRef, BTreeSet<RequirementKind>> = sites.iter().map(|s| (&s.site, s.kinds())).collect();
    let mut sketch_oracle = BTreeSet::new();
    for p in &patterns {
        let union: BTreeSet<RequirementKind> = p.members.iter().flat_map(|m| by_site[m].clone()).collect();
        assert_eq!(p.requirements.iter().cloned().collect::<BTreeSet<_>>(), union, "R({})", p.id);
        sketch_oracle.extend(union);
    }
    let sketch = callerkit::bench::behavior_sketch(&patterns);
    assert_eq!(sketch.iter().cloned().collect::<BTreeSet<_>>(), sketch_oracle);

    let keys: Vec<String> = sketch.iter().map(RequirementKind::key).collect();
    let mut cover_a: Vec<&str> = vec!["U1"];
    cover_a.extend(keys.iter().map(String::as_str).filter(|k| !k.starts_with("return_method")));
    let cover_b: Vec<&str> = std::iter::once("U2").chain(keys.iter().map(String::as_str).filter(|k| k.starts_with("return_method"))).collect();
    let good = [
        fragment(
            "pkg.conf.load",
            "cfg = load('py')\nassert cfg['language'] == 'py'  # evidence: pkg/app.py:6\nif cfg:\n    assert True  # evidence: pkg/app.py:11",
            &cover_a,
        ),
        fragment("pkg.conf.load", "assert 'language' in load('x').keys()  # evidence: pkg/app.py:17", &cover_b),
    ];
    let repos = [("conf".to_string(), dir.path())];
    let built = build_tasks(&repos, &good, &TargetPolicy::default(), None).unwrap();
    let task: BenchmarkTask = built.tasks.into_iter().next().unwrap();
    assert_eq!(task.patterns, patterns);
    let clean = lint_suite(&task);
    assert!(clean.passes(), "{}", format_lint(&clean));

    let mut c1 = task.clone();
    c1.drivers[1].covers.retain(|c| c != "U2");
    let r = lint_suite(&c1);
    assert_eq!(r.uncovered_patterns, vec!["U2"]);
    assert!(r.uncovered_requirements.is_empty() && r.unannotated_assertions.is_empty());

    let mut c2 = task.clone();
    let dropped = keys[0].clone();
    for d in &mut c2.drivers {
        d.covers.retain(|c| *c != dropped);
    }
    let r = lint_suite(&c2);
    assert_eq!(r.uncovered_requirements, vec![dropped]);
    assert!(r.uncovered_patterns.is_empty() && r.unannotated_assertions.is_empty());

    let mut c3 = task.clone();
    c3.drivers[0].text = c3.drivers[0].text.replacen("  # evidence: pkg/app.py:6", "", 1);
    let r = lint_suite(&c3);
    assert_eq!(r.unannotated_assertions.len(), 1);
    assert_eq!(r.unannotated_assertions[0].0, "driver_1.py");
    let bad_line = r.unannotated_assertions[0].1;
    assert!(c3.drivers[0].text.lines().nth(bad_line - 1).unwrap().contains("assert cfg['language']"));
    assert!(r.uncovered_patterns.is_empty() && r.uncovered_requirements.is_empty());

    let sandbox = Sandbox::default();
    let sanity = [
        fragment("pkg.conf.neg", "assert neg(2) == -2  # evidence: pkg/app.py:21", &["U1"]),
        good[0].clone(),
    ];
    let ok = build_tasks(&repos, &sanity, &TargetPolicy::default(), Some(&sandbox)).unwrap();
    assert_eq!(ok.tasks.len(), 2, "{:?}", ok.rejected);
    let wrong = [fragment("pkg.conf.neg", "assert neg(2) == 2  # evidence: pkg/app.py:21", &["U1"])];
    let rej = build_tasks(&repos, &wrong, &TargetPolicy::default(), Some(&sandbox)).unwrap();
    assert!(rej.tasks.is_empty());
    assert_eq!(rej.rejected.len(), 1);
    assert_eq!(rej.rejected[0].task_id, "conf::pkg.conf.neg");
    assert!(rej.rejected[0].reason.contains("reference sanity"), "{}", rej.rejected[0].reason);
}

// ---------------------------------------------------------------------------

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

fn criterion_7() {
    let mut worst: f64 = 0.0;
    for n in 1..=10usize {
        for c in 0..=n {
            for k in 1..=n {
                // samples 0..c are correct; count k-subsets containing one
                let mut hit = 0u64;
                let mut total = 0u64;
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize != k {
                        continue;
                    }
                    total += 1;
                    if mask & ((1u32 << c) - 1) != 0 {
                        hit += 1;
                    }
                }
                assert_eq!(total, binomial(n, k));
                let exact = hit as f64 / total as f64;
                worst = worst.max((pass_at_k(n, c, k).unwrap() - exact).abs());
            }
        }
    }
    assert!(worst < 1e-12, "max error {worst}");
    assert!((pass_at_k(5, 2, 3).unwrap() - 0.9).abs() < 1e-12);
}

// ---------------------------------------------------------------------------

const CALC_OPS: &str = "def add(a, b):\n    \"\"\"Sum.\"\"\"\n    return a + b\n\n\ndef mul(a, b):\n    \"\"\"Product.\"\"\"\n    return a * b\n\n\ndef neg(a):\n    \"\"\"Negation.\"\"\"\n    return -a\n\n\ndef use(x):\n    return neg(mul(add(x, 1), 2))\n";

fn calc_tasks(dir: &Path) -> Vec<BenchmarkTask> {
    write_tree(dir, &[("calc/__init__.py", ""), ("calc/ops.py", CALC_OPS)]);
    let f = |target: &str, text: &str| Fragment {
        repo: "calc".into(),
        target: target.into(),
        fragment: text.into(),
        covers: vec![],
        imports: vec![],
    };
    let frags = [
        f("calc.ops.add", "assert add(1, 2) == 3  # evidence: calc/ops.py:18"),
        f("calc.ops.add", "assert add(2, 2) == 4  # evidence: calc/ops.py:18"),
        f("calc.ops.mul", "assert mul(3, 4) == 12  # evidence: calc/ops.py:18"),
        f("calc.ops.neg", "assert neg(5) == -5  # evidence: calc/ops.py:18"),
    ];
    let repos = [("calc".to_string(), dir)];
    let out = build_tasks(&repos, &frags, &TargetPolicy::default(), None).unwrap();
    assert!(out.rejected.is_empty(), "{:?}", out.rejected);
    out.tasks
}

fn criterion_8() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = calc_tasks(dir.path());
    let sandbox = Sandbox::default();
    assert_eq!(sandbox.limits.wall_s, 10.0);
    let add = tasks.iter().find(|t| t.target.name == "add").unwrap();
    assert_eq!(add.drivers.len(), 2);

    let half = evaluate(add, Some("def add(a, b):\n    return 3\n"), &sandbox).unwrap();
    assert_eq!(half.drivers[0].1.status, Status::Pass);
    assert_eq!(half.status, Status::Fail);

    let hang = evaluate(add, Some("def add(a, b):\n    import time\n    time.sleep(10 ** 6)\n"), &sandbox).unwrap();
    assert_eq!(hang.status, Status::Timeout);
    let wall = hang.drivers[0].1.wall_ms as f64 / 1000.0;
    assert!((wall - 10.0).abs() <= 1.0, "timed out after {wall} s");

    let cand = |task: &str, i: usize, code: &str| Candidate {
        task_id: format!("calc::calc.ops.{task}"),
        sample_index: i,
        code: code.into(),
    };
    let cands = vec![
        cand("add", 0, "def add(a, b):\n    return b + a\n"),
        cand("add", 1, "def add(a, b):\n    return a - b\n"),
        cand("mul", 0, "def mul(a, b):\n    return a * b\n"),
        cand("mul", 1, "def mul(a, b):\n    out = 0\n    for _ in range(b):\n        out += a\n    return out\n"),
        cand("neg", 0, "def neg(a):\n    return a\n"),
        cand("neg", 1, "def neg(a):\n    return abs(a)\n"),
    ];
    let outcomes = run_eval(&tasks, &cands, &sandbox, 4).unwrap();
    let ids: Vec<String> = tasks.iter().map(|t| t.task_id.clone()).collect();
    let report = aggregate(&ids, &outcomes, &[1]);
    // add 1/2, mul 2/2, neg 0/2
    let hand = 100.0 * (0.5 + 1.0 + 0.0) / 3.0;
    assert!((report.aggregate["pass@1"] - hand).abs() < 1e-9, "{report:?}");
}

// ---------------------------------------------------------------------------

/// Subsequences of a binary list as a bitset over the index `(1 << len) | bits`.
fn subsequence_set(list: &[u8]) -> [u64; 8] {
    let mut set = [0u64; 8];
    for mask in 0u32..(1 << list.len()) {
        let mut len = 0;
        let mut bits = 0usize;
        for (i, &t) in list.iter().enumerate() {
            if mask >> i & 1 == 1 {
                bits |= (t as usize) << len;
                len += 1;
            }
        }
        let idx = (1usize << len) | bits;
        set[idx / 64] |= 1 << (idx % 64);
    }
    set
}

fn criterion_9() {
    let mut lists: Vec<Vec<u8>> = Vec::new();
    for len in 0..=8usize {
        for bits in 0..(1u32 << len) {
            lists.push((0..len).map(|i| (bits >> i & 1) as u8).collect());
        }
    }
    let sets: Vec<[u64; 8]> = lists.iter().map(|l| subsequence_set(l)).collect();
    for (a, sa) in lists.iter().zip(&sets) {
        for (b, sb) in lists.iter().zip(&sets) {
            let common = (0..8).rev().find_map(|w| {
                let x = sa[w] & sb[w];
                (x != 0).then(|| w * 64 + 63 - x.leading_zeros() as usize)
            });
            let l = usize::BITS as usize - 1 - common.unwrap().leading_zeros() as usize;
            assert_eq!(lcs_len(a, b), l);
            if b.is_empty() {
                assert!(matches!(rouge_l(a, b), Err(Error::EmptyReference)));
                continue;
            }
            let r = rouge_l(a, b).unwrap();
            let p = if a.is_empty() { 0.0 } else { l as f64 / a.len() as f64 };
            let rc = l as f64 / b.len() as f64;
            let f = if l == 0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
            assert_eq!((r.precision, r.recall), (p, rc));
            assert!((r.f1 - f).abs() < 1e-15);
        }
    }

    let w = CodeBleuWeights::default();
    assert_eq!((w.alpha, w.beta, w.gamma, w.delta), (0.25, 0.25, 0.25, 0.25));
    assert!((w.alpha + w.beta + w.gamma + w.delta - 1.0).abs() < 1e-12);
    for code in [
        "x = a + b",
        "def f(xs):\n    total = 0\n    for x in xs:\n        if x > 0:\n            total += x\n    return total",
        "class A:\n    def m(self, k):\n        return self.d.get(k, None)",
    ] {
        let cb = codebleu(code, code, &w).unwrap();
        assert!((cb.score - 1.0).abs() < 1e-6, "{code}: {cb:?}");
        assert!((rouge_l_text(code, code).unwrap().f1 - 1.0).abs() < 1e-6);
    }

    // Hand values: unigram 4/5, bigram 2/4, trigram 1/3, 4-gram smoothed
    // 1e-9/2; no keywords; every reference subtree contains the operator so
    // the AST score is 0; both def-use edges of x match.
    let bleu = (0.8f64 * 0.5 * (1.0 / 3.0) * 5e-10).powf(0.25);
    let cb = codebleu("x = a + b", "x = a - b", &w).unwrap();
    assert!((cb.bleu - bleu).abs() < 1e-6);
    assert!((cb.weighted_ngram - bleu).abs() < 1e-6);
    assert!(cb.ast_match.abs() < 1e-6);
    assert!((cb.dataflow_match - 1.0).abs() < 1e-6);
    assert!((cb.score - (0.25 * bleu * 2.0 + 0.25)).abs() < 1e-6);
}

// ---------------------------------------------------------------------------

fn manifest(url: &str, split: &str) -> String {
    format!(
        r#"{{"entries": [{{"url": "{url}", "revision": "0123abc", "split": "{split}", "stars": 120, "last_commit_date": "2024-05-01"}}]}}"#
    )
}

fn criterion_10() {
    let dir = tempfile::tempdir().unwrap();
    let shared = "https://example.org/acme/shared.git";
    std::fs::write(dir.path().join("train.json"), manifest(shared, "train")).unwrap();
    std::fs::write(dir.path().join("bench.json"), manifest("https://example.org/acme/shared", "bench")).unwrap();
    let train = callerkit::ingest::load_manifest(&dir.path().join("train.json")).unwrap();
    let bench = callerkit::ingest::load_manifest(&dir.path().join("bench.json")).unwrap();
    let err = callerkit::ingest::check_split_disjoint(
        train.entries.iter().map(|e| e.url.as_str()),
        bench.entries.iter().map(|e| e.url.as_str()),
    )
    .unwrap_err();
    assert!(matches!(&err, Error::SplitOverlap(r) if r == &vec!["https://example.org/acme/shared".to_string()]));

    let exe = env!("CARGO_BIN_EXE_callerkit");
    let runs: [&[&str]; 2] = [
        &["corpus", "--manifest", "train.json", "--bench-manifest", "bench.json"],
        &["bench", "build", "--manifest", "bench.json", "--train-manifest", "train.json", "--fragments", "none.jsonl"],
    ];
    for args in runs {
        let out = std::process::Command::new(exe)
            .args(args)
            .current_dir(dir.path())
            .env("CALLERKIT_CACHE_DIR", dir.path().join("cache"))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains("split overlap"), "{stderr}");
        assert!(!dir.path().join("cache").exists());
    }
}

// ---------------------------------------------------------------------------

fn criterion_11() {
    let body = |kind: char, i: usize| match kind {
        'E' => format!("def e{i}(xs):\n    for x in xs:\n        f(x)"),
        'R' => format!("def r{i}():\n    v = f()\n    if v > 0:\n        go()"),
        'U' => format!("def u{i}(x):\n    v = f()\n    if x:\n        go()\n    return v"),
        _ => format!("def n{i}():\n    v = f()\n    return v"),
    };
    let design = [("t1", "EEERN"), ("t2", "EEEUU"), ("t3", "RRRRU"), ("t4", "NNNNU")];
    let mut items = Vec::new();
    for (task, kinds) in design {
        for (i, k) in kinds.chars().enumerate() {
            items.push((task, CallerSnippet::from_text(&format!("{task}.{i}"), &body(k, i), "m.f")));
        }
    }
    assert_eq!(items.len(), 20);
    let report = usage_report(items.iter().map(|(t, s)| (*t, s)));
    assert_eq!((report.total_instances, report.total_tasks, report.skipped), (20, 4, 0));
    let hand: BTreeMap<PrimaryClass, (usize, f64, usize, f64)> = BTreeMap::from([
        (PrimaryClass::Enclosed, (6, 30.0, 2, 50.0)),
        (PrimaryClass::ReturnFeeds, (5, 25.0, 2, 50.0)),
        (PrimaryClass::Unrelated, (4, 20.0, 3, 75.0)),
        (PrimaryClass::None, (5, 25.0, 2, 50.0)),
    ]);
    for c in &report.classes {
        assert_eq!((c.instances, c.instance_pct, c.tasks, c.task_pct), hand[&c.class], "{}", c.label);
    }
    let text = format_usage_report(&report);
    for line in [
        "20 instances across 4 tasks",
        "call site enclosed by a structured block: 30.00% instances, 50.00% tasks",
        "return value feeds a structured block: 25.00% instances, 50.00% tasks",
        "only control flow unrelated to the call: 20.00% instances, 75.00% tasks",
        "no structured control: 25.00% instances, 50.00% tasks",
    ] {
        assert!(text.lines().any(|l| l == line), "missing {line:?} in\n{text}");
    }
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: [(&str, u64, fn()); 11] = [
        ("call-graph oracle equivalence", 5, criterion_1),
        ("calls/calledby transpose", 10, criterion_2),
        ("caller expansion law", 5, criterion_3),
        ("serialization round-trip", 5, criterion_4),
        ("variant contracts", 10, criterion_5),
        ("benchmark calculus and lint", 10, criterion_6),
        ("pass@k estimator", 1, criterion_7),
        ("harness semantics", 60, criterion_8),
        ("similarity metrics", 30, criterion_9),
        ("split safety", 1, criterion_10),
        ("usage classification report", 5, criterion_11),
    ];
    let mut failures = Vec::new();
    let mut out = std::io::stdout();
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let within = elapsed <= Duration::from_secs(budget);
        let ok = result.is_ok() && within;
        let note = match (&result, within) {
            (Err(_), _) => " (assertion failed)".to_string(),
            (Ok(()), false) => format!(" (over budget of {budget}s)"),
            _ => String::new(),
        };
        writeln!(
            out,
            "criterion {:>2} {} {:<32} {:>7.2}s / {budget}s{note}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            name,
            elapsed.as_secs_f64()
        )
        .unwrap();
        if !ok {
            failures.push(i + 1);
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
