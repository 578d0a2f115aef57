//! Reading and writing JSON / JSON-lines artifacts with a provenance header.
//! JSON-lines files start with a `{"_provenance": ...}` record; JSON files
//! carry the same object under the `_provenance` key.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const PROVENANCE_KEY: &str = "_provenance";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_digest: String,
}

impl Provenance {
    pub fn new(config: &RunConfig) -> Self {
        Provenance {
            tool: "callerkit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config_digest: config.digest(),
        }
    }

    fn header(&self) -> Value {
        serde_json::json!({ PROVENANCE_KEY: self })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, prov: &Provenance, records: &[T]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &prov.header())?;
    w.write_all(b"\n").map_err(io)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Records of a JSON-lines file; provenance and blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if value.get(PROVENANCE_KEY).is_some() {
            continue;
        }
        let rec = serde_json::from_value(value)
            .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Write a JSON object with the provenance block merged in.
pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert(PROVENANCE_KEY.into(), serde_json::to_value(prov)?);
        }
        None => {
            v = serde_json::json!({ PROVENANCE_KEY: prov, "value": v });
        }
    }
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &v)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut v: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove(PROVENANCE_KEY);
    }
    serde_json::from_value(v).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Write plain text prefixed by a `#` provenance comment line.
pub fn write_text(path: &Path, prov: &Provenance, text: &str) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "# {} {} seed={} config={}",
        prov.tool, prov.version, prov.seed, prov.config_digest
    )
    .map_err(io)?;
    w.write_all(text.as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Rec {
        id: u32,
    }

    #[test]
    fn jsonl_round_trip_skips_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x/r.jsonl");
        let prov = Provenance::new(&RunConfig::default());
        write_jsonl(&p, &prov, &[Rec { id: 1 }, Rec { id: 2 }]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("{\"_provenance\""));
        let back: Vec<Rec> = read_jsonl(&p).unwrap();
        assert_eq!(back, vec![Rec { id: 1 }, Rec { id: 2 }]);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let prov = Provenance::new(&RunConfig::default());
        write_json(&p, &prov, &Rec { id: 5 }).unwrap();
        let back: Rec = read_json(&p).unwrap();
        assert_eq!(back, Rec { id: 5 });
    }
}
