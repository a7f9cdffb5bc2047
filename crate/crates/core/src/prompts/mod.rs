//! Prompt batches, the on-disk prompt pool and usage-balanced sampling.
//!
//! A batch document is JSON:
//!
//! ```json
//! {
//!   "meta_prompt_id": "meta-1a2b3c4d",
//!   "pairs": [
//!     { "id": "meta-1a2b3c4d-00",
//!       "foreground": "Weathered oak planks ...",
//!       "background": "A quiet harbor at dusk ...",
//!       "tags": { "weather": "overcast", "time_of_day": "dusk", "lighting": "soft", "site": "stairs" } }
//!   ]
//! }
//! ```
//!
//! `tags` and each of its fields are optional. Unknown fields are accepted
//! and dropped.

mod client;
mod fixtures;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use client::{
    request_prompt_batch, ChatPromptClient, FetchedBatch, OfflinePromptClient, PromptClient, ENV_CHAT_MODEL,
    ENV_CHAT_TOKEN, ENV_CHAT_URL,
};
pub use fixtures::{reference_batch, MetaPrompt, REFERENCE_PROMPTS_JSON};

/// Batch sizes a meta prompt asks for; others are accepted with a warning.
pub const BATCH_SIZE_RANGE: std::ops::RangeInclusive<usize> = 20..=30;
/// Pool size to aim for per task.
pub const POOL_TARGET: usize = 1000;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("not JSON: {0}")]
    Syntax(String),
    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },
    #[error("pair id `{0}` is already in the pool")]
    DuplicateInPool(String),
    #[error("batch `{0}` is already in the pool")]
    DuplicateBatch(String),
    #[error("the prompt pool is empty")]
    EmptyPool,
    #[error("malformed reply: {reason}")]
    MalformedReply { reason: String, reply: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("pool storage: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTags {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_of_day: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lighting: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub id: String,
    pub foreground: String,
    pub background: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<PromptTags>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBatch {
    pub meta_prompt_id: String,
    pub pairs: Vec<PromptPair>,
}

fn schema(path: impl Into<String>, reason: impl Into<String>) -> PromptError {
    PromptError::Schema { path: path.into(), reason: reason.into() }
}

fn nonempty_str<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, path: &str) -> Result<&'a str, PromptError> {
    let at = if path.is_empty() { key.to_string() } else { format!("{path}.{key}") };
    match obj.get(key) {
        None => Err(schema(at, "missing")),
        Some(Value::String(s)) if s.trim().is_empty() => Err(schema(at, "empty")),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(schema(at, "expected a string")),
    }
}

fn parse_tags(v: &Value, path: &str) -> Result<PromptTags, PromptError> {
    let obj = v.as_object().ok_or_else(|| schema(path, "expected an object"))?;
    let field = |key: &str| -> Result<Option<String>, PromptError> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(schema(format!("{path}.{key}"), "expected a string")),
        }
    };
    Ok(PromptTags {
        weather: field("weather")?,
        time_of_day: field("time_of_day")?,
        lighting: field("lighting")?,
        site: field("site")?,
    })
}

/// Validates an already-decoded batch document.
pub fn parse_prompt_value(doc: &Value) -> Result<PromptBatch, PromptError> {
    let root = doc.as_object().ok_or_else(|| schema("$", "expected an object"))?;
    let meta_prompt_id = nonempty_str(root, "meta_prompt_id", "")?.to_string();
    let pairs = match root.get("pairs") {
        None => return Err(schema("pairs", "missing")),
        Some(Value::Array(a)) if a.is_empty() => return Err(schema("pairs", "at least one pair is required")),
        Some(Value::Array(a)) => a,
        Some(_) => return Err(schema("pairs", "expected an array")),
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let path = format!("pairs[{i}]");
        let obj = p.as_object().ok_or_else(|| schema(&path, "expected an object"))?;
        let id = nonempty_str(obj, "id", &path)?;
        if !seen.insert(id) {
            return Err(schema(format!("{path}.id"), format!("duplicate id `{id}`")));
        }
        let tags = match obj.get("tags") {
            None | Some(Value::Null) => None,
            Some(t) => Some(parse_tags(t, &format!("{path}.tags"))?),
        };
        out.push(PromptPair {
            id: id.to_string(),
            foreground: nonempty_str(obj, "foreground", &path)?.to_string(),
            background: nonempty_str(obj, "background", &path)?.to_string(),
            tags,
        });
    }
    Ok(PromptBatch { meta_prompt_id, pairs: out })
}

pub fn parse_prompt_batch(document: &str) -> Result<PromptBatch, PromptError> {
    let doc: Value = serde_json::from_str(document).map_err(|e| PromptError::Syntax(e.to_string()))?;
    parse_prompt_value(&doc)
}

/// Canonical form: pretty-printed, fields in declaration order, absent
/// tags omitted.
pub fn serialize_prompt_batch(batch: &PromptBatch) -> String {
    serde_json::to_string_pretty(batch).expect("prompt batch serializes")
}

impl PromptBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn size_in_range(&self) -> bool {
        BATCH_SIZE_RANGE.contains(&self.pairs.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CountersFile {
    version: u32,
    usage: BTreeMap<String, u64>,
}

/// Batches keyed by meta-prompt id, plus a usage counter per pair.
///
/// Mutation takes `&mut self`; share a pool between threads behind a
/// `RwLock` so counter updates have a single writer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptPool {
    batches: BTreeMap<String, PromptBatch>,
    usage: BTreeMap<String, u64>,
}

impl PromptPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.usage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.usage.is_empty()
    }

    pub fn batches(&self) -> impl Iterator<Item = &PromptBatch> {
        self.batches.values()
    }

    pub fn pairs(&self) -> impl Iterator<Item = &PromptPair> {
        self.batches.values().flat_map(|b| b.pairs.iter())
    }

    pub fn get(&self, id: &str) -> Option<&PromptPair> {
        self.pairs().find(|p| p.id == id)
    }

    pub fn usage(&self, id: &str) -> Option<u64> {
        self.usage.get(id).copied()
    }

    pub fn usage_counts(&self) -> &BTreeMap<String, u64> {
        &self.usage
    }

    /// Adds a batch with zeroed counters. Pair ids must be new to the pool.
    pub fn add_batch(&mut self, batch: PromptBatch) -> Result<(), PromptError> {
        if self.batches.contains_key(&batch.meta_prompt_id) {
            return Err(PromptError::DuplicateBatch(batch.meta_prompt_id));
        }
        let mut ids = BTreeSet::new();
        for p in &batch.pairs {
            if self.usage.contains_key(&p.id) || !ids.insert(p.id.as_str()) {
                return Err(PromptError::DuplicateInPool(p.id.clone()));
            }
        }
        for p in &batch.pairs {
            self.usage.insert(p.id.clone(), 0);
        }
        self.batches.insert(batch.meta_prompt_id.clone(), batch);
        Ok(())
    }

    /// Draws uniformly among the least-used pairs and counts the draw.
    pub fn sample(&mut self, rng_seed: u64) -> Result<PromptPair, PromptError> {
        let min = *self.usage.values().min().ok_or(PromptError::EmptyPool)?;
        let candidates: Vec<&String> = self.usage.iter().filter(|(_, &n)| n == min).map(|(id, _)| id).collect();
        let pick = ChaCha8Rng::seed_from_u64(rng_seed).gen_range(0..candidates.len());
        let id = candidates[pick].clone();
        *self.usage.get_mut(&id).expect("candidate is in the pool") += 1;
        Ok(self.get(&id).expect("usage keys mirror batch pairs").clone())
    }

    /// Writes `batches/batch-<hash>.json` (one per meta prompt, canonical
    /// batch form) and `counters.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), PromptError> {
        let batch_dir = dir.join("batches");
        fs::create_dir_all(&batch_dir)?;
        for b in self.batches.values() {
            fs::write(batch_dir.join(batch_file_name(&b.meta_prompt_id)), serialize_prompt_batch(b))?;
        }
        let counters = CountersFile { version: 1, usage: self.usage.clone() };
        fs::write(dir.join("counters.json"), serde_json::to_string_pretty(&counters).expect("counters serialize"))?;
        Ok(())
    }

    /// Reads a pool written by [`PromptPool::save`]. Pairs missing from the
    /// counters file start at zero; counters for unknown pairs are an error.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let mut pool = Self::new();
        let mut files: Vec<_> = fs::read_dir(dir.join("batches"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            let batch = parse_prompt_batch(&fs::read_to_string(&f)?).map_err(|e| match e {
                PromptError::Schema { path, reason } => {
                    PromptError::Schema { path: format!("{}: {path}", f.display()), reason }
                }
                other => other,
            })?;
            pool.add_batch(batch)?;
        }
        let counters_path = dir.join("counters.json");
        if counters_path.exists() {
            let c: CountersFile = serde_json::from_str(&fs::read_to_string(&counters_path)?)
                .map_err(|e| schema("counters.json", e.to_string()))?;
            for (id, n) in c.usage {
                match pool.usage.get_mut(&id) {
                    Some(slot) => *slot = n,
                    None => return Err(schema("counters.json", format!("counter for unknown pair `{id}`"))),
                }
            }
        }
        Ok(pool)
    }
}

fn batch_file_name(meta_prompt_id: &str) -> String {
    format!("batch-{}.json", &hex::encode(Sha256::digest(meta_prompt_id.as_bytes()))[..16])
}

/// Mean Euclidean distance over all unordered pairs of vectors, e.g. image
/// embeddings of generations from different prompts. `None` with fewer
/// than two vectors or mismatched lengths.
pub fn mean_pairwise_distance(vectors: &[Vec<f64>]) -> Option<f64> {
    let n = vectors.len();
    if n < 2 || vectors.iter().any(|v| v.len() != vectors[0].len()) {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += vectors[i].iter().zip(&vectors[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(pairs: &str) -> String {
        format!(r#"{{"meta_prompt_id": "m", "pairs": [{pairs}]}}"#)
    }

    #[test]
    fn two_pairs_parse() {
        let b = parse_prompt_batch(&doc(
            r#"{"id": "a", "foreground": "x", "background": "y"},
               {"id": "b", "foreground": "x", "background": "y", "tags": {"weather": "fog"}, "extra": 1}"#,
        ))
        .unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.pairs[1].tags.as_ref().unwrap().weather.as_deref(), Some("fog"));
    }

    #[test]
    fn errors_carry_the_path() {
        let err = |d: String| match parse_prompt_batch(&d).unwrap_err() {
            PromptError::Schema { path, .. } => path,
            e => panic!("{e}"),
        };
        assert_eq!(
            err(doc(r#"{"id": "a", "foreground": "x", "background": "y"}, {"id": "b", "foreground": "x"}"#)),
            "pairs[1].background"
        );
        assert_eq!(err(doc(r#"{"id": "a", "foreground": " ", "background": "y"}"#)), "pairs[0].foreground");
        assert_eq!(
            err(doc(r#"{"id": "a", "foreground": "x", "background": "y"}, {"id": "a", "foreground": "x", "background": "y"}"#)),
            "pairs[1].id"
        );
        assert_eq!(err(doc(r#"{"id": "a", "foreground": "x", "background": "y", "tags": {"site": 3}}"#)), "pairs[0].tags.site");
        assert_eq!(err(r#"{"pairs": []}"#.into()), "meta_prompt_id");
        assert_eq!(err(doc("")), "pairs");
        assert!(matches!(parse_prompt_batch("{"), Err(PromptError::Syntax(_))));
    }

    fn pool_of(n: usize) -> PromptPool {
        let mut pool = PromptPool::new();
        pool.add_batch(PromptBatch {
            meta_prompt_id: "m".into(),
            pairs: (0..n)
                .map(|i| PromptPair { id: format!("p{i:03}"), foreground: "f".into(), background: "b".into(), tags: None })
                .collect(),
        })
        .unwrap();
        pool
    }

    #[test]
    fn sampling_is_balanced() {
        let mut one = pool_of(1);
        for s in 0..5 {
            assert_eq!(one.sample(s).unwrap().id, "p000");
        }
        let mut three = pool_of(3);
        let ids: BTreeSet<_> = (0..3).map(|s| three.sample(s).unwrap().id).collect();
        assert_eq!(ids.len(), 3);
        assert!(matches!(PromptPool::new().sample(0), Err(PromptError::EmptyPool)));
    }

    #[test]
    fn sampling_is_deterministic() {
        let (mut a, mut b) = (pool_of(10), pool_of(10));
        for s in 0..25 {
            assert_eq!(a.sample(s).unwrap(), b.sample(s).unwrap());
        }
    }

    #[test]
    fn pool_rejects_duplicate_ids() {
        let mut pool = pool_of(2);
        let again = PromptBatch {
            meta_prompt_id: "other".into(),
            pairs: vec![PromptPair { id: "p001".into(), foreground: "f".into(), background: "b".into(), tags: None }],
        };
        assert!(matches!(pool.add_batch(again), Err(PromptError::DuplicateInPool(_))));
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn pool_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut pool = pool_of(7);
        pool.add_batch(reference_batch()).unwrap();
        for s in 0..12 {
            pool.sample(s).unwrap();
        }
        pool.save(dir.path()).unwrap();
        assert_eq!(PromptPool::load(dir.path()).unwrap(), pool);
    }

    #[test]
    fn pairwise_distance() {
        assert_eq!(mean_pairwise_distance(&[vec![0.0, 0.0]]), None);
        // distances 5, 5 and 6
        let d = mean_pairwise_distance(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![-3.0, 4.0]]).unwrap();
        assert!((d - 16.0 / 3.0).abs() < 1e-12);
    }
}
