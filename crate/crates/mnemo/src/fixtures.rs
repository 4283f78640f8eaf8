//! Checksummed fixture bundle.
//!
//! Fixtures live in a versioned directory next to a `manifest.json` that
//! names each one with a relative path, a sha256 digest, and a kind tag.
//! Loaders verify the digest before parsing, so silent edits to fixture
//! data fail loudly instead of skewing tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{ClipSchedule, OptimizationBatch};
use crate::records::{
    batch_from_records, check_version, parse_jsonl, sha256_hex, ExperienceSeedRecord,
    RewardCaseRecord, RuleRecord, SequenceRecord, TrajectoryRecord,
};
use crate::sim::EnvSpec;

pub const FIXTURES_ENV_VAR: &str = "MNEMO_FIXTURES";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Compiled-in default fixture directory.
pub fn default_dir() -> PathBuf {
    match std::env::var_os(FIXTURES_ENV_VAR) {
        Some(dir) => PathBuf::from(dir),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/v1"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    path: String,
    sha256: String,
    kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    fixtures: BTreeMap<String, ManifestEntry>,
}

/// One optimization batch as stored in a fixture line: schedule settings
/// plus the per-sequence log-probabilities and rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchFixture {
    pub beta: f64,
    pub eps_low: f64,
    pub eps_init: f64,
    pub eps_end: f64,
    pub step: u64,
    pub total_steps: u64,
    pub sequences: Vec<SequenceRecord>,
}

impl BatchFixture {
    pub fn to_batch(&self) -> Result<OptimizationBatch> {
        let schedule = ClipSchedule::new(self.eps_low, self.eps_init, self.eps_end, self.total_steps)?;
        batch_from_records(&self.sequences, self.beta, schedule, self.step)
    }
}

/// A pinned text embedding at a fixed dimension, for drift detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedPin {
    pub dim: usize,
    pub input: String,
    pub vector: Vec<f64>,
}

/// An opened fixture directory with a parsed manifest.
pub struct FixtureSet {
    dir: PathBuf,
    manifest: Manifest,
}

impl FixtureSet {
    pub fn open(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        check_version(manifest.format_version, "fixture manifest")?;
        Ok(Self {
            dir: dir.to_owned(),
            manifest,
        })
    }

    pub fn open_default() -> Result<Self> {
        Self::open(&default_dir())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn names(&self) -> Vec<&str> {
        self.manifest.fixtures.keys().map(String::as_str).collect()
    }

    pub fn kind(&self, name: &str) -> Result<&str> {
        Ok(&self.entry(name)?.kind)
    }

    fn entry(&self, name: &str) -> Result<&ManifestEntry> {
        self.manifest
            .fixtures
            .get(name)
            .ok_or_else(|| Error::UnknownFixture(name.to_owned()))
    }

    /// Reads and checksum-verifies a fixture's bytes as UTF-8 text.
    pub fn raw(&self, name: &str) -> Result<String> {
        let entry = self.entry(name)?;
        let path = self.dir.join(&entry.path);
        let bytes = std::fs::read(&path)?;
        let digest = sha256_hex(&bytes);
        if digest != entry.sha256 {
            return Err(Error::ChecksumMismatch(format!(
                "fixture `{name}` ({}): expected {}, found {digest}",
                path.display(),
                entry.sha256
            )));
        }
        String::from_utf8(bytes)
            .map_err(|e| Error::InvalidRecord(format!("fixture `{name}` is not UTF-8: {e}")))
    }

    fn raw_of_kind(&self, name: &str, kind: &str) -> Result<String> {
        let entry = self.entry(name)?;
        if entry.kind != kind {
            return Err(Error::UnknownFixture(format!(
                "`{name}` has kind `{}`, expected `{kind}`",
                entry.kind
            )));
        }
        self.raw(name)
    }

    pub fn env_spec(&self, name: &str) -> Result<EnvSpec> {
        EnvSpec::from_json(&self.raw_of_kind(name, "env")?)
    }

    pub fn trajectories(&self, name: &str) -> Result<Vec<TrajectoryRecord>> {
        let records: Vec<TrajectoryRecord> = parse_jsonl(&self.raw_of_kind(name, "trajectories")?)?;
        for r in &records {
            r.check()?;
        }
        Ok(records)
    }

    pub fn rules(&self, name: &str) -> Result<Vec<RuleRecord>> {
        let records: Vec<RuleRecord> = parse_jsonl(&self.raw_of_kind(name, "rules")?)?;
        for r in &records {
            r.check()?;
        }
        Ok(records)
    }

    pub fn experience_seeds(&self, name: &str) -> Result<Vec<ExperienceSeedRecord>> {
        let records: Vec<ExperienceSeedRecord> =
            parse_jsonl(&self.raw_of_kind(name, "experience")?)?;
        for r in &records {
            check_version(r.format_version, "experience seed")?;
            r.trajectory.check()?;
        }
        Ok(records)
    }

    pub fn reward_cases(&self, name: &str) -> Result<Vec<RewardCaseRecord>> {
        let records: Vec<RewardCaseRecord> = parse_jsonl(&self.raw_of_kind(name, "reward-cases")?)?;
        for r in &records {
            r.check()?;
        }
        Ok(records)
    }

    pub fn batches(&self, name: &str) -> Result<Vec<BatchFixture>> {
        parse_jsonl(&self.raw_of_kind(name, "batches")?)
    }

    pub fn embed_pins(&self, name: &str) -> Result<Vec<EmbedPin>> {
        parse_jsonl(&self.raw_of_kind(name, "pins")?)
    }

    /// A single free-form text fixture.
    pub fn text(&self, name: &str) -> Result<String> {
        self.raw_of_kind(name, "text")
    }

    /// A JSON array of texts.
    pub fn texts(&self, name: &str) -> Result<Vec<String>> {
        Ok(serde_json::from_str(&self.raw_of_kind(name, "texts")?)?)
    }
}
