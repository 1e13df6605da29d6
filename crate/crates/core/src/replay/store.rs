use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::Transition;
use crate::env::SimState;
use crate::error::{Error, Result};

pub const STORE_SCHEMA: &str = "iddqn.evaluative";
pub const STORE_VERSION: u32 = 1;

/// One logged step. Serialized field order: `episode, step, transition
/// {s, a_agent, a_human, r, s_next, done, intervened, lambda_h}, crashed, sim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub episode: u64,
    /// Global environment step at which `transition.s` was observed.
    pub step: u64,
    pub transition: Transition,
    pub crashed: bool,
    /// Simulator state at `transition.s`.
    pub sim: Option<SimState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    v: u32,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Append-only log of every transition in episode order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvaluativeStore {
    records: Vec<EvalRecord>,
}

impl EvaluativeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: EvalRecord) -> Result<()> {
        record.transition.validate()?;
        if let Some(last) = self.records.last() {
            if record.episode < last.episode || record.step <= last.step {
                return Err(Error::RejectedTransition(format!(
                    "out-of-order record (episode {}, step {}) after (episode {}, step {})",
                    record.episode, record.step, last.episode, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EvalRecord> {
        self.records.iter()
    }

    pub fn intervened_count(&self) -> usize {
        self.records.iter().filter(|r| r.transition.intervened).count()
    }

    /// Half-open index ranges, one per episode, in order.
    pub fn episodes(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].episode != self.records[start].episode {
                if i > start {
                    out.push(start..i);
                }
                start = i;
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, STORE_SCHEMA, serde_json::Value::Null, &self.records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (_, records) = read_jsonl(path, STORE_SCHEMA)?;
        let mut store = Self::new();
        for r in records {
            store.append(r).map_err(|e| Error::storage(path, e))?;
        }
        Ok(store)
    }
}

/// Write a schema header line followed by one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, schema: &str, meta: serde_json::Value, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::storage(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        schema: schema.to_string(),
        v: STORE_VERSION,
        meta,
    };
    let io = |e: std::io::Error| Error::storage(path, e);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::storage(path, e))?;
    w.write_all(b"\n").map_err(io)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::storage(path, e))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read a file written by [`write_jsonl`], checking the schema tag.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<(serde_json::Value, Vec<T>)> {
    let file = File::open(path).map_err(|e| Error::storage(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = match lines.next() {
        Some(l) => l.map_err(|e| Error::storage(path, e))?,
        None => return Err(Error::storage(path, "empty file, missing schema header")),
    };
    let header: Header = serde_json::from_str(&first).map_err(|e| Error::storage(path, format!("bad header: {e}")))?;
    if header.schema != schema || header.v != STORE_VERSION {
        return Err(Error::storage(
            path,
            format!("expected schema {schema} v{STORE_VERSION}, found {} v{}", header.schema, header.v),
        ));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::storage(path, format!("line {}: {e}", n + 2)))?;
        out.push(rec);
    }
    Ok((header.meta, out))
}

/// Evaluative store shared between the trainer and readers. Readers get a
/// copy, so they never hold the lock while working.
#[derive(Clone, Debug, Default)]
pub struct SharedStore(Arc<RwLock<EvaluativeStore>>);

impl SharedStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, record: EvalRecord) -> Result<()> {
        self.0.write().map_err(|_| Error::InternalFault("store lock poisoned".into()))?.append(record)
    }

    pub fn len(&self) -> usize {
        self.0.read().map(|s| s.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> EvaluativeStore {
        self.0.read().map(|s| s.clone()).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Observation, OBS_DIM};
    use crate::replay::NO_HUMAN;

    fn record(episode: u64, step: u64, human: i32) -> EvalRecord {
        let mut s = [0.0; OBS_DIM];
        s[0] = step as f64 * 0.1 + 1.0 / 3.0;
        EvalRecord {
            episode,
            step,
            transition: Transition {
                s: Observation(s),
                a_agent: (step % 33) as usize,
                a_human: human,
                r: -(step as f64) / 7.0,
                s_next: Observation([0.25; OBS_DIM]),
                done: false,
                intervened: human != NO_HUMAN,
                lambda_h: 0.3,
            },
            crashed: false,
            sim: None,
        }
    }

    #[test]
    fn episode_boundaries() {
        let mut st = EvaluativeStore::new();
        for (e, s) in [(1, 0), (1, 1), (2, 2), (2, 3), (2, 4), (3, 5)] {
            st.append(record(e, s, NO_HUMAN)).unwrap();
        }
        assert_eq!(st.episodes(), vec![0..2, 2..5, 5..6]);
        assert!(st.append(record(3, 5, NO_HUMAN)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut st = EvaluativeStore::new();
        for s in 0..50 {
            st.append(record(s / 10, s, if s % 7 == 0 { 4 } else { NO_HUMAN })).unwrap();
        }
        st.save(&path).unwrap();
        assert_eq!(EvaluativeStore::load(&path).unwrap(), st);
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        write_jsonl::<u32>(&path, "other", serde_json::Value::Null, &[]).unwrap();
        assert!(matches!(EvaluativeStore::load(&path), Err(Error::Storage { .. })));
        let missing = dir.path().join("missing.jsonl");
        let err = EvaluativeStore::load(&missing).unwrap_err();
        assert!(err.to_string().contains("missing.jsonl"));
    }
}
