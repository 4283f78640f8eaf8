//! Checksummed on-disk layout for the memory repository.
//!
//! A store directory holds `manifest` plus three JSONL files:
//! `semantic.jsonl`, `experiential.jsonl`, and `trajectories.jsonl`. The
//! manifest pins the format version, the embedding dimension and provider
//! kind, entry counts, and a SHA-256 checksum per file; loading verifies
//! all of it before trusting any byte. Embedding keys are stored at full
//! precision, so queries against a reloaded store return bit-identical
//! scores. Episodic state is episode-scoped and never persisted.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::memory::{ExperientialEntry, MemoryRepository, SemanticEntry};
use crate::records::{atomic_write, parse_jsonl, sha256_hex, TrajectoryRecord, FORMAT_VERSION};

const MANIFEST_FILE: &str = "manifest";
const SEMANTIC_FILE: &str = "semantic.jsonl";
const EXPERIENTIAL_FILE: &str = "experiential.jsonl";
const TRAJECTORIES_FILE: &str = "trajectories.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreManifest {
    format_version: u32,
    dimension: usize,
    provider: String,
    semantic_count: usize,
    experiential_count: usize,
    checksums: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SemanticRecord {
    entry_id: u64,
    rule_text: String,
    source_instruction: String,
    key: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperientialRecord {
    entry_id: u64,
    trajectory_id: String,
    summary: String,
    success: bool,
    intent_key: Vec<f64>,
    task_key: Vec<f64>,
}

fn jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

impl MemoryRepository {
    /// Writes the semantic and experiential layers to `dir`. Data files are
    /// written before the manifest, so a complete manifest implies complete
    /// data.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        let semantic: Vec<SemanticRecord> = self
            .semantic_entries()
            .iter()
            .map(|e| SemanticRecord {
                entry_id: e.entry_id,
                rule_text: e.rule_text.clone(),
                source_instruction: e.source_instruction.clone(),
                key: e.key.as_slice().to_vec(),
            })
            .collect();
        let experiential: Vec<ExperientialRecord> = self
            .experiential_entries()
            .iter()
            .map(|e| ExperientialRecord {
                entry_id: e.entry_id,
                trajectory_id: e.trajectory.trajectory_id.clone(),
                summary: e.summary.clone(),
                success: e.success,
                intent_key: e.intent_key.as_slice().to_vec(),
                task_key: e.task_key.as_slice().to_vec(),
            })
            .collect();
        let trajectories: Vec<TrajectoryRecord> = self
            .experiential_entries()
            .iter()
            .map(|e| TrajectoryRecord::from_trajectory(&e.trajectory, None))
            .collect();

        let semantic_body = jsonl(&semantic)?;
        let experiential_body = jsonl(&experiential)?;
        let trajectories_body = jsonl(&trajectories)?;

        let mut checksums = BTreeMap::new();
        checksums.insert(
            SEMANTIC_FILE.to_owned(),
            sha256_hex(semantic_body.as_bytes()),
        );
        checksums.insert(
            EXPERIENTIAL_FILE.to_owned(),
            sha256_hex(experiential_body.as_bytes()),
        );
        checksums.insert(
            TRAJECTORIES_FILE.to_owned(),
            sha256_hex(trajectories_body.as_bytes()),
        );
        let manifest = StoreManifest {
            format_version: FORMAT_VERSION,
            dimension: self.provider().dim(),
            provider: self.provider().kind_name().to_owned(),
            semantic_count: semantic.len(),
            experiential_count: experiential.len(),
            checksums,
        };

        std::fs::create_dir_all(dir)?;
        atomic_write(&dir.join(SEMANTIC_FILE), semantic_body.as_bytes())?;
        atomic_write(&dir.join(EXPERIENTIAL_FILE), experiential_body.as_bytes())?;
        atomic_write(&dir.join(TRAJECTORIES_FILE), trajectories_body.as_bytes())?;
        let manifest_body = serde_json::to_string_pretty(&manifest)?;
        atomic_write(&dir.join(MANIFEST_FILE), manifest_body.as_bytes())?;
        Ok(())
    }

    /// Loads a store written by [`MemoryRepository::persist`]. A directory
    /// without a manifest loads as an empty repository. The provider must
    /// match the persisted embedding dimension; its kind is recorded for
    /// information but a mismatch only affects entries added later, since
    /// stored keys are reused as-is.
    pub fn load(dir: &Path, provider: EmbeddingProvider) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Ok(Self::new(provider));
        }
        let manifest_text = std::fs::read_to_string(&manifest_path)?;
        let manifest: StoreManifest = serde_json::from_str(&manifest_text)
            .map_err(|e| Error::CorruptStore(format!("bad manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                what: "store manifest",
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if manifest.dimension != provider.dim() {
            return Err(Error::DimensionMismatch {
                left: manifest.dimension,
                right: provider.dim(),
            });
        }

        let read_checked = |name: &str| -> Result<String> {
            let body = std::fs::read_to_string(dir.join(name))
                .map_err(|e| Error::CorruptStore(format!("missing {name}: {e}")))?;
            let expected = manifest
                .checksums
                .get(name)
                .ok_or_else(|| Error::CorruptStore(format!("no checksum for {name}")))?;
            if sha256_hex(body.as_bytes()) != *expected {
                return Err(Error::CorruptStore(format!("checksum mismatch for {name}")));
            }
            Ok(body)
        };

        let semantic_records: Vec<SemanticRecord> = parse_jsonl(&read_checked(SEMANTIC_FILE)?)
            .map_err(|e| Error::CorruptStore(format!("{SEMANTIC_FILE}: {e}")))?;
        let experiential_records: Vec<ExperientialRecord> =
            parse_jsonl(&read_checked(EXPERIENTIAL_FILE)?)
                .map_err(|e| Error::CorruptStore(format!("{EXPERIENTIAL_FILE}: {e}")))?;
        let trajectory_records: Vec<TrajectoryRecord> =
            parse_jsonl(&read_checked(TRAJECTORIES_FILE)?)
                .map_err(|e| Error::CorruptStore(format!("{TRAJECTORIES_FILE}: {e}")))?;

        if semantic_records.len() != manifest.semantic_count
            || experiential_records.len() != manifest.experiential_count
        {
            return Err(Error::CorruptStore("entry counts disagree with manifest".into()));
        }

        let key = |name: &str, values: Vec<f64>| -> Result<EmbeddingVector> {
            let v = EmbeddingVector::new(values)
                .map_err(|e| Error::CorruptStore(format!("{name}: {e}")))?;
            if v.dim() != manifest.dimension {
                return Err(Error::CorruptStore(format!(
                    "{name}: key dimension {} does not match store dimension {}",
                    v.dim(),
                    manifest.dimension
                )));
            }
            Ok(v)
        };

        let mut repo = Self::new(provider);
        for r in semantic_records {
            let entry = SemanticEntry {
                entry_id: r.entry_id,
                key: key("semantic key", r.key)?,
                rule_text: r.rule_text,
                source_instruction: r.source_instruction,
            };
            let dedup = (entry.rule_text.clone(), entry.source_instruction.clone());
            if !repo.semantic_keys.insert(dedup) {
                return Err(Error::CorruptStore(format!(
                    "duplicate semantic entry {}",
                    entry.entry_id
                )));
            }
            repo.next_semantic_id = repo.next_semantic_id.max(entry.entry_id + 1);
            repo.semantic.push(entry);
        }

        let mut trajectories: BTreeMap<String, TrajectoryRecord> = BTreeMap::new();
        for t in trajectory_records {
            if trajectories.insert(t.id.clone(), t).is_some() {
                return Err(Error::CorruptStore("duplicate trajectory id".into()));
            }
        }
        for r in experiential_records {
            let record = trajectories.remove(&r.trajectory_id).ok_or_else(|| {
                Error::CorruptStore(format!("no trajectory for entry {}", r.entry_id))
            })?;
            let trajectory = record
                .to_trajectory()
                .map_err(|e| Error::CorruptStore(format!("entry {}: {e}", r.entry_id)))?;
            let entry = ExperientialEntry {
                entry_id: r.entry_id,
                intent_key: key("intent key", r.intent_key)?,
                task_key: key("task key", r.task_key)?,
                summary: r.summary,
                success: r.success,
                trajectory,
            };
            if !repo.experiential_keys.insert(entry.trajectory.dedup_key()) {
                return Err(Error::CorruptStore(format!(
                    "duplicate experiential entry {}",
                    entry.entry_id
                )));
            }
            repo.next_experiential_id = repo.next_experiential_id.max(entry.entry_id + 1);
            repo.experiential.push(entry);
        }
        if !trajectories.is_empty() {
            return Err(Error::CorruptStore("orphan trajectories in store".into()));
        }
        Ok(repo)
    }
}
