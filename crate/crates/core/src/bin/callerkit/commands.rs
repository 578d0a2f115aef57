use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use callerkit::analysis::{extract_repo, CallGraph};
use callerkit::artifact::{read_jsonl, write_json, write_jsonl, Provenance};
use callerkit::bench::{self, BenchmarkTask, Fragment};
use callerkit::config::RunConfig;
use callerkit::corpus::{self, CorpusOptions, TokenSidecar, TrainingInstance};
use callerkit::error::{Error, Result};
use callerkit::eval::{self, Candidate};
use callerkit::ingest::{self, load_manifest, Manifest, Split};
use callerkit::metrics::{self, CodeBleuWeights, Pair};
use callerkit::prompt::{self, PromptConfig, PromptInput, PromptRecord};
use callerkit::variants::{self, CallerSnippet, VariantKind};

use crate::{BenchAction, Cli, Command, CorpusArgs, EvalArgs};

fn emit<T: Serialize>(json: bool, value: &T, text: &str) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{text}");
        if !text.ends_with('\n') {
            println!();
        }
    }
    Ok(())
}

fn out_path(cfg: &RunConfig, given: &Option<PathBuf>, default: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.output_dir.join(default))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn run(cli: &Cli, mut cfg: RunConfig) -> Result<u8> {
    let json = cli.json;
    match &cli.command {
        Command::Ingest { manifest, split, out } => ingest_cmd(&cfg, json, manifest, split.as_deref(), out),
        Command::Extract { repo, out } => extract_cmd(&cfg, json, repo, out),
        Command::Corpus(args) => {
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            corpus_cmd(&cfg, json, args)
        }
        Command::Stats { corpus, tokens } => stats_cmd(json, corpus, tokens.as_deref()),
        Command::Variants { corpus, kind, seed, out } => {
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            variants_cmd(&cfg, json, corpus, kind, out)
        }
        Command::UsageStats { bench } => usage_cmd(json, bench),
        Command::Render {
            tasks,
            fields,
            style,
            n_test,
            synthesize,
            out,
        } => {
            let mut pc = PromptConfig::new(fields, style.parse()?, n_test.parse()?)?;
            pc.synthesize_missing = *synthesize;
            render_cmd(&cfg, json, tasks, &pc, out)
        }
        Command::Bench { action } => bench_cmd(&cfg, json, action),
        Command::Eval(args) => {
            if let Some(w) = args.workers {
                cfg.workers = w;
            }
            if let Some(b) = &args.backend {
                cfg.backend = b.clone();
            }
            if let Some(t) = args.timeout {
                cfg.timeout_s = t;
            }
            cfg.validate()?;
            eval_cmd(&cfg, json, args)
        }
        Command::Metrics { pairs, out } => metrics_cmd(&cfg, json, pairs, out),
    }
}

fn ingest_cmd(cfg: &RunConfig, json: bool, manifest: &Path, split: Option<&str>, out: &Option<PathBuf>) -> Result<u8> {
    let m = load_manifest(manifest)?;
    let split = split.map(str::parse::<Split>).transpose()?;
    let policy = cfg.filter_policy();
    let mut records = Vec::new();
    let mut text = String::new();
    for e in m.entries.iter().filter(|e| split.is_none_or(|s| s == e.split)) {
        let snap = ingest::snapshot_repo(e, &cfg.cache_dir)?;
        let decision = ingest::apply_repo_filters(&snap, e, &policy);
        let verdict = match &decision {
            ingest::FilterDecision::Accept { .. } => "accept".to_string(),
            ingest::FilterDecision::Reject { reasons, .. } => format!(
                "reject ({})",
                reasons.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
            ),
        };
        text.push_str(&format!("{} [{}] {verdict}\n", e.repo_id(), e.split));
        records.push(json!({ "repo_id": e.repo_id(), "split": e.split, "snapshot": snap, "decision": decision }));
    }
    let path = out_path(cfg, out, "snapshots.jsonl");
    write_jsonl(&path, &Provenance::new(cfg), &records)?;
    info!("wrote {}", path.display());
    emit(json, &records, &text)?;
    Ok(0)
}

fn extract_cmd(cfg: &RunConfig, json: bool, repo: &Path, out: &Option<PathBuf>) -> Result<u8> {
    let (_, graph) = extract_repo(repo)?;
    let dir = out_path(cfg, out, "extract");
    let prov = Provenance::new(cfg);
    let id = ingest::repo_id(&repo.to_string_lossy());
    let nodes: Vec<Value> = graph
        .nodes
        .values()
        .map(|n| {
            json!({
                "qname": n.decl.qname,
                "module_path": n.module_path,
                "start": n.decl.span.start,
                "end": n.decl.span.end,
                "calls": graph.calls_of(&n.decl.qname).count(),
                "calledby": graph.calledby_of(&n.decl.qname).count(),
            })
        })
        .collect();
    write_json(&dir.join("graph.json"), &prov, &json!({ "repo_id": id, "nodes": nodes }))?;
    let edges: Vec<_> = graph.edge_records().collect();
    write_jsonl(&dir.join("edges.jsonl"), &prov, &edges)?;
    write_json(&dir.join("diagnostics.json"), &prov, &graph.diagnostics)?;
    let d = &graph.diagnostics;
    let text = format!(
        "{id}: {} files, {} functions, {} edges; call sites {} (resolved {}, ambiguous {}, external {}, unresolved {}), {} invalid files\n",
        d.files_parsed,
        d.nodes,
        d.edges,
        d.call_sites,
        d.resolved,
        d.ambiguous,
        d.external,
        d.unresolved,
        d.invalid_files.len()
    );
    emit(json, d, &text)?;
    Ok(0)
}

/// Accepted snapshots of one split plus directly named repositories.
fn load_graphs(
    cfg: &RunConfig,
    manifest: Option<&Manifest>,
    split: Split,
    dirs: &[PathBuf],
) -> Result<Vec<(String, PathBuf)>> {
    let mut repos = Vec::new();
    if let Some(m) = manifest {
        let policy = cfg.filter_policy();
        for e in m.entries.iter().filter(|e| e.split == split) {
            let snap = ingest::snapshot_repo(e, &cfg.cache_dir)?;
            match ingest::apply_repo_filters(&snap, e, &policy) {
                ingest::FilterDecision::Accept { .. } => repos.push((e.repo_id(), snap.root)),
                ingest::FilterDecision::Reject { reasons, .. } => {
                    warn!("{}: filtered out: {reasons:?}", e.repo_id())
                }
            }
        }
    }
    for d in dirs {
        repos.push((ingest::repo_id(&d.to_string_lossy()), d.clone()));
    }
    Ok(repos)
}

fn check_overlap(a: &Manifest, a_split: Split, b: &Manifest, b_split: Split) -> Result<()> {
    let ra = a.repos(a_split);
    let rb = b.repos(b_split);
    let (train, bench) = if a_split == Split::Train { (ra, rb) } else { (rb, ra) };
    ingest::check_split_disjoint(train.iter().map(String::as_str), bench.iter().map(String::as_str))
}

fn corpus_cmd(cfg: &RunConfig, json: bool, args: &CorpusArgs) -> Result<u8> {
    let manifest = args.manifest.as_deref().map(load_manifest).transpose()?;
    if let Some(bp) = &args.bench_manifest {
        let bench = load_manifest(bp)?;
        let train = manifest.clone().unwrap_or_default();
        check_overlap(&train, Split::Train, &bench, Split::Bench)?;
        let local: Vec<String> = args.repo.iter().map(|d| ingest::repo_id(&d.to_string_lossy())).collect();
        let bench_ids = bench.repos(Split::Bench);
        ingest::check_split_disjoint(local.iter().map(String::as_str), bench_ids.iter().map(String::as_str))?;
    }
    if manifest.is_none() && args.repo.is_empty() {
        return Err(Error::Config("corpus needs --manifest or at least one --repo".into()));
    }
    let repos = load_graphs(cfg, manifest.as_ref(), Split::Train, &args.repo)?;
    let mut graphs: Vec<(String, CallGraph)> = Vec::new();
    for (id, root) in &repos {
        let (_, g) = extract_repo(root)?;
        graphs.push((id.clone(), g));
    }
    let opts = CorpusOptions {
        n_train: args.n_train,
        two_hop: args.two_hop,
        seed: cfg.seed,
        policy: cfg.target_policy(),
    };
    let build = corpus::build_corpus(&graphs, &opts)?;
    let path = out_path(cfg, &args.out, "corpus.jsonl");
    let prov = Provenance::new(cfg);
    write_jsonl(&path, &prov, &build.instances)?;
    write_jsonl(&sibling(&path, "excluded.jsonl"), &prov, &build.excluded)?;
    let summary = json!({
        "repos": graphs.len(),
        "targets": build.targets,
        "instances": build.instances.len(),
        "excluded": build.excluded.len(),
        "dropped_duplicates": build.dropped_duplicates,
        "dropped_unserializable": build.dropped_unserializable,
        "out": path,
    });
    let text = format!(
        "{} repos, {} targets, {} instances ({} functions excluded, {} duplicates dropped) -> {}\n",
        graphs.len(),
        build.targets,
        build.instances.len(),
        build.excluded.len(),
        build.dropped_duplicates,
        path.display()
    );
    emit(json, &summary, &text)?;
    Ok(0)
}

fn stats_cmd(json: bool, corpus_path: &Path, tokens: Option<&Path>) -> Result<u8> {
    let mut instances: Vec<TrainingInstance> = read_jsonl(corpus_path)?;
    if let Some(t) = tokens {
        let sidecar: Vec<TokenSidecar> = read_jsonl(t)?;
        let n = corpus::apply_token_sidecar(&mut instances, &sidecar);
        info!("token sidecar matched {n} instances");
    }
    let stats = corpus::corpus_stats(&instances)?;
    emit(json, &stats, &corpus::format_stats_table(&stats))?;
    Ok(0)
}

#[derive(Serialize)]
struct VariantRecord {
    instance_id: String,
    target_qname: String,
    caller: String,
    #[serde(flatten)]
    variant: variants::CallerVariant,
}

fn variants_cmd(cfg: &RunConfig, json: bool, corpus_path: &Path, kind: &str, out: &Option<PathBuf>) -> Result<u8> {
    let kind: VariantKind = kind.parse()?;
    let instances: Vec<TrainingInstance> = read_jsonl(corpus_path)?;
    let mut work = Vec::new();
    let mut skipped_two_hop = 0;
    for inst in &instances {
        if inst.hop_depth != 1 {
            skipped_two_hop += 1;
            continue;
        }
        for (q, text) in inst.caller_qnames.iter().zip(&inst.callers) {
            work.push((inst, CallerSnippet::from_text(q, text, &inst.target_qname)));
        }
    }
    let mut seen = BTreeSet::new();
    let pool: Vec<CallerSnippet> = work
        .iter()
        .filter(|(_, s)| seen.insert((s.id.clone(), s.text.clone())))
        .map(|(_, s)| s.clone())
        .collect();
    let results: Vec<_> = work
        .par_iter()
        .map(|(inst, s)| {
            let r = variants::make_variant(kind, s, &pool, cfg.length_tolerance, cfg.seed);
            (inst, s, r)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (inst, s, r) in results {
        match r {
            Ok(v) => records.push(VariantRecord {
                instance_id: inst.id.clone(),
                target_qname: inst.target_qname.clone(),
                caller: s.id.clone(),
                variant: v,
            }),
            Err(e) => failures.push(json!({ "instance_id": inst.id, "caller": s.id, "error": e.to_string() })),
        }
    }
    let path = out_path(cfg, out, &format!("variants.{}.jsonl", kind.as_str()));
    write_jsonl(&path, &Provenance::new(cfg), &records)?;
    let fallbacks = records.iter().filter(|r| r.variant.fallback_used).count();
    let summary = json!({
        "kind": kind,
        "variants": records.len(),
        "fallbacks": fallbacks,
        "failures": failures,
        "skipped_two_hop": skipped_two_hop,
        "out": path,
    });
    let mut text = format!(
        "{}: {} variants ({} fallbacks), {} failures, {} two-hop instances skipped -> {}\n",
        kind.as_str(),
        records.len(),
        fallbacks,
        failures.len(),
        skipped_two_hop,
        path.display()
    );
    for f in &failures {
        text.push_str(&format!("  {} {}: {}\n", f["instance_id"], f["caller"], f["error"]));
    }
    emit(json, &summary, &text)?;
    Ok(0)
}

fn usage_cmd(json: bool, bench_path: &Path) -> Result<u8> {
    let tasks: Vec<BenchmarkTask> = read_jsonl(bench_path)?;
    let snippets: Vec<(String, CallerSnippet)> = tasks
        .iter()
        .flat_map(|t| {
            t.callers
                .iter()
                .filter(|c| !c.synthesized)
                .map(move |c| (t.task_id.clone(), CallerSnippet::from_text(&c.qname, &c.text, &t.target.qname)))
        })
        .collect();
    let report = variants::usage_report(snippets.iter().map(|(t, s)| (t.as_str(), s)));
    emit(json, &report, &variants::format_usage_report(&report))?;
    Ok(0)
}

fn render_cmd(cfg: &RunConfig, json: bool, tasks_path: &Path, pc: &PromptConfig, out: &Option<PathBuf>) -> Result<u8> {
    let values: Vec<Value> = read_jsonl(tasks_path)?;
    let inputs: Vec<PromptInput> = values
        .into_iter()
        .map(|v| {
            if v.get("task_id").is_some() {
                serde_json::from_value::<BenchmarkTask>(v).map(|t| PromptInput::from(&t))
            } else {
                serde_json::from_value::<TrainingInstance>(v).map(|t| PromptInput::from(&t))
            }
            .map_err(|e| Error::Schema(format!("{}: {e}", tasks_path.display())))
        })
        .collect::<Result<_>>()?;
    let records: Vec<PromptRecord> = inputs
        .iter()
        .map(|i| {
            Ok(PromptRecord {
                task_id: i.id.clone(),
                config: pc.name(),
                text: prompt::render(i, pc)?,
                decode_hint: pc.decode_hint,
            })
        })
        .collect::<Result<_>>()?;
    let path = out_path(cfg, out, "prompts.jsonl");
    write_jsonl(&path, &Provenance::new(cfg), &records)?;
    let summary = json!({ "prompts": records.len(), "config": pc.name(), "style": pc.style, "out": path });
    emit(json, &summary, &format!("{} prompts ({}) -> {}\n", records.len(), pc.name(), path.display()))?;
    Ok(0)
}

fn bench_cmd(cfg: &RunConfig, json: bool, action: &BenchAction) -> Result<u8> {
    match action {
        BenchAction::Build {
            manifest,
            train_manifest,
            repo,
            fragments,
            no_sanity,
            out,
        } => {
            let m = manifest.as_deref().map(load_manifest).transpose()?;
            if let Some(tp) = train_manifest {
                let train = load_manifest(tp)?;
                let bench = m.clone().unwrap_or_default();
                check_overlap(&train, Split::Train, &bench, Split::Bench)?;
                let local: Vec<String> = repo.iter().map(|d| ingest::repo_id(&d.to_string_lossy())).collect();
                let train_ids = train.repos(Split::Train);
                ingest::check_split_disjoint(train_ids.iter().map(String::as_str), local.iter().map(String::as_str))?;
            }
            if m.is_none() && repo.is_empty() {
                return Err(Error::Config("bench build needs --manifest or at least one --repo".into()));
            }
            let repos = load_graphs(cfg, m.as_ref(), Split::Bench, repo)?;
            let frags: Vec<Fragment> = read_jsonl(fragments)?;
            let sandbox = cfg.sandbox();
            let refs: Vec<(String, &Path)> = repos.iter().map(|(id, p)| (id.clone(), p.as_path())).collect();
            let built = bench::build_tasks(&refs, &frags, &cfg.target_policy(), (!no_sanity).then_some(&sandbox))?;
            let path = out_path(cfg, out, "tasks.jsonl");
            let prov = Provenance::new(cfg);
            write_jsonl(&path, &prov, &built.tasks)?;
            write_jsonl(&sibling(&path, "rejected.jsonl"), &prov, &built.rejected)?;
            let mut text = format!(
                "{} tasks built, {} rejected -> {}\n",
                built.tasks.len(),
                built.rejected.len(),
                path.display()
            );
            for r in &built.rejected {
                text.push_str(&format!("  {}: {}\n", r.task_id, r.reason));
            }
            let summary = json!({ "tasks": built.tasks.len(), "rejected": built.rejected, "out": path });
            emit(json, &summary, &text)?;
            Ok(0)
        }
        BenchAction::Lint { tasks } => {
            let tasks: Vec<BenchmarkTask> = read_jsonl(tasks)?;
            let reports: Vec<_> = tasks.iter().map(bench::lint_suite).collect();
            let text: String = reports.iter().map(bench::format_lint).collect();
            emit(json, &reports, &text)?;
            Ok(if reports.iter().all(|r| r.passes()) { 0 } else { 1 })
        }
        BenchAction::Sanity { tasks } => {
            let tasks: Vec<BenchmarkTask> = read_jsonl(tasks)?;
            let sandbox = cfg.sandbox();
            let mut results = Vec::new();
            for t in &tasks {
                let r = eval::reference_sanity(t, &sandbox)?;
                results.push(json!({ "task_id": t.task_id, "ok": r.is_ok(), "detail": r.err() }));
            }
            let text: String = results
                .iter()
                .map(|r| {
                    let ok = r["ok"].as_bool().unwrap_or(false);
                    let detail = r["detail"].as_str().map(|d| format!(" ({d})")).unwrap_or_default();
                    format!("{}: {}{detail}\n", r["task_id"].as_str().unwrap_or(""), if ok { "ok" } else { "FAIL" })
                })
                .collect();
            emit(json, &results, &text)?;
            Ok(if results.iter().all(|r| r["ok"] == true) { 0 } else { 1 })
        }
    }
}

fn eval_cmd(cfg: &RunConfig, json: bool, args: &EvalArgs) -> Result<u8> {
    let tasks: Vec<BenchmarkTask> = read_jsonl(&args.tasks)?;
    let candidates: Vec<Candidate> = read_jsonl(&args.candidates)?;
    let outcomes = eval::run_eval(&tasks, &candidates, &cfg.sandbox(), cfg.workers)?;
    let ids: Vec<String> = tasks.iter().map(|t| t.task_id.clone()).collect();
    let report = eval::aggregate(&ids, &outcomes, &args.k);
    let path = out_path(cfg, &args.out, "eval_report.json");
    let prov = Provenance::new(cfg);
    write_json(&path, &prov, &report)?;
    write_jsonl(&sibling(&path, "outcomes.jsonl"), &prov, &outcomes)?;
    emit(json, &report, &eval::format_report(&report))?;
    Ok(0)
}

fn metrics_cmd(cfg: &RunConfig, json: bool, pairs_path: &Path, out: &Option<PathBuf>) -> Result<u8> {
    let pairs: Vec<Pair> = read_jsonl(pairs_path)?;
    let weights = CodeBleuWeights::default();
    let scores: Vec<_> = pairs
        .par_iter()
        .map(|p| metrics::score_pair(p, &weights))
        .collect::<Result<_>>()?;
    let path = out_path(cfg, out, "scores.jsonl");
    write_jsonl(&path, &Provenance::new(cfg), &scores)?;
    let n = scores.len().max(1) as f64;
    let cb = scores.iter().map(|s| s.codebleu).sum::<f64>() / n;
    let rl = scores.iter().map(|s| s.rouge_l_f1).sum::<f64>() / n;
    let summary = json!({ "pairs": scores.len(), "codebleu_mean": cb, "rouge_l_f1_mean": rl, "out": path });
    emit(
        json,
        &summary,
        &format!("{} pairs: CodeBLEU {:.4}, ROUGE-L F1 {:.4} -> {}\n", scores.len(), cb, rl, path.display()),
    )?;
    Ok(0)
}
