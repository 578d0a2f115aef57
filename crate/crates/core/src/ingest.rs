//! Manifest-driven repository snapshots, selection filters, and the
//! train/bench repository split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::analysis::callgraph::python_files;
use crate::error::{Error, Result};

pub const WORKTREE: &str = "WORKTREE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Bench,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Bench => "bench",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "bench" => Ok(Split::Bench),
            other => Err(Error::Schema(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub url: String,
    pub revision: String,
    pub split: Split,
    pub stars: u64,
    pub last_commit_date: NaiveDate,
    #[serde(default)]
    pub domain_tag: String,
}

impl ManifestEntry {
    pub fn repo_id(&self) -> String {
        repo_id(&self.url)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn repos(&self, split: Split) -> BTreeSet<String> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(ManifestEntry::repo_id)
            .collect()
    }

    pub fn split_of(&self, repo: &str) -> Option<Split> {
        let id = repo_id(repo);
        self.entries
            .iter()
            .find(|e| e.repo_id() == id)
            .map(|e| e.split)
    }
}

/// Canonical repository identity: URL or path without trailing `/` or `.git`.
pub fn repo_id(url: &str) -> String {
    let t = url.trim().trim_end_matches('/');
    t.strip_suffix(".git").unwrap_or(t).to_string()
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    parse_manifest(&value)
}

pub fn parse_manifest(value: &Value) -> Result<Manifest> {
    let entries = value
        .get("entries")
        .ok_or_else(|| Error::Schema("entries".into()))?
        .as_array()
        .ok_or_else(|| Error::Schema("entries".into()))?;
    let mut out = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        out.push(parse_entry(e, i)?);
    }
    let manifest = Manifest { entries: out };
    check_manifest(&manifest)?;
    Ok(manifest)
}

fn parse_entry(e: &Value, i: usize) -> Result<ManifestEntry> {
    let field = |name: &str| format!("entries[{i}].{name}");
    let obj = e
        .as_object()
        .ok_or_else(|| Error::Schema(format!("entries[{i}]")))?;
    let string = |name: &str, required: bool| -> Result<String> {
        match obj.get(name) {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
            None | Some(Value::Null) if !required => Ok(String::new()),
            Some(Value::String(_)) if !required => Ok(String::new()),
            _ => Err(Error::Schema(field(name))),
        }
    };
    let url = string("url", true)?;
    let revision = string("revision", true)?;
    let split = string("split", true)?
        .parse::<Split>()
        .map_err(|_| Error::Schema(field("split")))?;
    let stars = obj
        .get("stars")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Schema(field("stars")))?;
    let date_text = string("last_commit_date", true)?;
    let last_commit_date = parse_date(&date_text).ok_or_else(|| Error::Schema(field("last_commit_date")))?;
    let domain_tag = string("domain_tag", false)?;
    Ok(ManifestEntry {
        url,
        revision,
        split,
        stars,
        last_commit_date,
        domain_tag,
    })
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let head = s.get(..10)?;
    NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()
}

fn check_manifest(m: &Manifest) -> Result<()> {
    let mut seen: BTreeMap<String, (usize, Split)> = BTreeMap::new();
    let mut overlap = BTreeSet::new();
    for (i, e) in m.entries.iter().enumerate() {
        match seen.get(&e.repo_id()) {
            Some((_, s)) if *s != e.split => {
                overlap.insert(e.repo_id());
            }
            Some(_) => {
                return Err(Error::Schema(format!("entries[{i}].url: duplicate entry")));
            }
            None => {
                seen.insert(e.repo_id(), (i, e.split));
            }
        }
    }
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(Error::SplitOverlap(overlap.into_iter().collect()))
    }
}

/// Merge manifests, rejecting any repository that lands in both splits.
pub fn merge_manifests(manifests: &[Manifest]) -> Result<Manifest> {
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for m in manifests {
        for e in &m.entries {
            if !entries
                .iter()
                .any(|x| x.repo_id() == e.repo_id() && x.split == e.split)
            {
                entries.push(e.clone());
            }
        }
    }
    let merged = Manifest { entries };
    check_manifest(&merged)?;
    Ok(merged)
}

/// Assert that the repositories feeding training data and benchmark tasks
/// are disjoint.
pub fn check_split_disjoint<'a>(
    train: impl IntoIterator<Item = &'a str>,
    bench: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let train: BTreeSet<String> = train.into_iter().map(repo_id).collect();
    let overlap: Vec<String> = bench
        .into_iter()
        .map(repo_id)
        .filter(|b| train.contains(b))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(Error::SplitOverlap(overlap))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSnapshot {
    pub repo_id: String,
    pub revision: String,
    pub root: PathBuf,
    pub content_hash: String,
    pub file_count: usize,
    pub module_count: usize,
}

/// SHA-256 over the sorted (path, contents) pairs of all Python files.
pub fn content_hash(root: &Path) -> Result<(String, usize, usize)> {
    let files = python_files(root)?;
    let mut hasher = Sha256::new();
    let mut dirs = BTreeSet::new();
    for rel in &files {
        let bytes = std::fs::read(root.join(rel)).map_err(|e| Error::io(root.join(rel), e))?;
        hasher.update((rel.len() as u64).to_le_bytes());
        hasher.update(rel.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        dirs.insert(rel.rsplit_once('/').map(|(d, _)| d.to_string()).unwrap_or_default());
    }
    Ok((hex::encode(hasher.finalize()), files.len(), dirs.len()))
}

/// Materialize `entry` under `<cache>/<hash-prefix>/<repo>/`.
pub fn snapshot_repo(entry: &ManifestEntry, cache: &Path) -> Result<RepoSnapshot> {
    std::fs::create_dir_all(cache).map_err(|e| Error::io(cache, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(cache)
        .map_err(|e| Error::io(cache, e))?;
    let work = staging.path().join("tree");
    if entry.revision == WORKTREE {
        let src = Path::new(&entry.url);
        if !src.is_dir() {
            return Err(Error::Fetch {
                url: entry.url.clone(),
                reason: "WORKTREE revision requires a local directory".into(),
            });
        }
        copy_tree(src, &work)?;
    } else {
        git_checkout(&entry.url, &entry.revision, &work)?;
    }
    let (hash, file_count, module_count) = content_hash(&work)?;
    if file_count == 0 {
        return Err(Error::Fetch {
            url: entry.url.clone(),
            reason: "no Python files".into(),
        });
    }
    let name = repo_name(&entry.url);
    let dest = cache.join(&hash[..12]).join(&name);
    if !dest.exists() {
        let parent = dest.parent().expect("dest has a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        std::fs::rename(&work, &dest).map_err(|e| Error::io(&dest, e))?;
    }
    Ok(RepoSnapshot {
        repo_id: entry.repo_id(),
        revision: entry.revision.clone(),
        root: dest,
        content_hash: hash,
        file_count,
        module_count,
    })
}

fn repo_name(url: &str) -> String {
    let id = repo_id(url);
    let name = id
        .rsplit(['/', ':', '\\'])
        .find(|s| !s.is_empty())
        .unwrap_or("repo");
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn copy_tree(src: &Path, dst: &Path) -> Result<()> {
    let walker = WalkDir::new(src).sort_by_file_name().into_iter();
    for entry in walker.filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.')) {
        let entry = entry.map_err(|e| Error::io(src, e.into()))?;
        let rel = entry.path().strip_prefix(src).expect("walk stays under src");
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        } else if entry.file_type().is_file() {
            std::fs::copy(entry.path(), &target).map_err(|e| Error::io(&target, e))?;
        }
    }
    Ok(())
}

fn git_checkout(url: &str, revision: &str, work: &Path) -> Result<()> {
    let fetch_err = |reason: String| Error::Fetch {
        url: url.to_string(),
        reason,
    };
    let out = Command::new("git")
        .args(["clone", "--quiet", "--no-checkout", url])
        .arg(work)
        .output()
        .map_err(|e| fetch_err(format!("cannot run git: {e}")))?;
    if !out.status.success() {
        return Err(fetch_err(String::from_utf8_lossy(&out.stderr).trim().to_string()));
    }
    let out = Command::new("git")
        .arg("-C")
        .arg(work)
        .args(["-c", "advice.detachedHead=false", "checkout", "--quiet", revision, "--"])
        .output()
        .map_err(|e| fetch_err(format!("cannot run git: {e}")))?;
    if !out.status.success() {
        return Err(Error::RevisionNotFound {
            url: url.to_string(),
            revision: revision.to_string(),
        });
    }
    let git_dir = work.join(".git");
    std::fs::remove_dir_all(&git_dir).map_err(|e| Error::io(&git_dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_stars: u64,
    pub recency_months: u32,
    pub as_of: NaiveDate,
    pub min_files: usize,
    pub excluded_domains: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    InsufficientStars,
    StaleRepository,
    StructuralDiversity,
    AlgorithmicDataset,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::InsufficientStars => "insufficient stars",
            RejectReason::StaleRepository => "stale repository",
            RejectReason::StructuralDiversity => "structural diversity",
            RejectReason::AlgorithmicDataset => "algorithmic dataset",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum FilterDecision {
    Accept { warnings: Vec<String> },
    Reject { reasons: Vec<RejectReason>, warnings: Vec<String> },
}

impl FilterDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, FilterDecision::Accept { .. })
    }
}

pub fn apply_repo_filters(
    snapshot: &RepoSnapshot,
    entry: &ManifestEntry,
    policy: &FilterPolicy,
) -> FilterDecision {
    let mut reasons = Vec::new();
    if entry.stars < policy.min_stars {
        reasons.push(RejectReason::InsufficientStars);
    }
    let cutoff = policy
        .as_of
        .checked_sub_months(Months::new(policy.recency_months))
        .unwrap_or(NaiveDate::MIN);
    if entry.last_commit_date < cutoff {
        reasons.push(RejectReason::StaleRepository);
    }
    if snapshot.file_count < policy.min_files {
        reasons.push(RejectReason::StructuralDiversity);
    }
    let tag = entry.domain_tag.trim().to_lowercase();
    if !tag.is_empty()
        && policy
            .excluded_domains
            .iter()
            .any(|d| d.trim().to_lowercase() == tag)
    {
        reasons.push(RejectReason::AlgorithmicDataset);
    }
    let mut warnings = Vec::new();
    if let Ok(files) = python_files(&snapshot.root) {
        if looks_like_numbered_exercises(&files) {
            warnings.push("most files are numbered scripts in one flat directory".into());
        }
    }
    if reasons.is_empty() {
        FilterDecision::Accept { warnings }
    } else {
        FilterDecision::Reject { reasons, warnings }
    }
}

/// At least 80% of the files sit in one directory and have numbered names.
pub fn looks_like_numbered_exercises(files: &[String]) -> bool {
    if files.len() < 5 {
        return false;
    }
    let mut per_dir: BTreeMap<&str, usize> = BTreeMap::new();
    for f in files {
        let (dir, name) = f.rsplit_once('/').unwrap_or(("", f));
        if name.chars().any(|c| c.is_ascii_digit()) {
            *per_dir.entry(dir).or_insert(0) += 1;
        }
    }
    let best = per_dir.values().copied().max().unwrap_or(0);
    best * 5 >= files.len() * 4
}
