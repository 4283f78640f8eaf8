//! On-disk record formats and pinned float formatting.
//!
//! Every artifact the toolkit reads or writes is line-oriented JSON with an
//! explicit `format_version` field. Serialization is deterministic: struct
//! key order is fixed, maps are sorted, and derived metric floats are
//! rounded to nine significant digits before being written so that repeated
//! runs produce byte-identical files. Payload floats (screen coordinates)
//! are stored at full precision to keep round-trips exact.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hindsight::DataSample;
use crate::optim::{ClipSchedule, Group, GrpoReport, OptimizationBatch, SequenceLogProbs};
use crate::reward::{GroundTruth, RewardBreakdown};
use crate::types::{Action, Instruction, Observation, Trajectory, Transition};

pub const FORMAT_VERSION: u32 = 1;

/// Coordinate formatting for agent-facing text: at most six decimals,
/// trailing zeros trimmed. `0.3` stays `"0.3"`, `0.5` stays `"0.5"`.
pub fn fmt_coord(v: f64) -> String {
    let mut s = format!("{v:.6}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

/// Rounds to nine significant digits. Applied to derived metrics (scores,
/// rewards, objectives) before serialization; the JSON writer then emits
/// the shortest round-trip form of the rounded value.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exponent = x.abs().log10().floor() as i32;
    let shift = 8 - exponent;
    if !(-300..=300).contains(&shift) {
        return x;
    }
    let factor = 10f64.powi(shift);
    (x * factor).round() / factor
}

pub(crate) fn round_sig9_vec(xs: &[f64]) -> Vec<f64> {
    xs.iter().copied().map(round_sig9).collect()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Rejects any record version other than the current one.
pub fn check_version(found: u32, what: &'static str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            what,
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Writes bytes through a temp file in the same directory plus rename, so
/// readers never observe a half-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes records one per line and writes them atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Reads newline-delimited JSON records, reporting the offending line on
/// failure. Blank lines are ignored.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidRecord(format!("{}: {e}", path.display())))?;
    parse_jsonl(&text).map_err(|e| match e {
        Error::InvalidRecord(msg) => Error::InvalidRecord(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(line)
            .map_err(|e| Error::InvalidRecord(format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// One trajectory as stored on disk. Observations are reduced to screen
/// ids; converting back to a [`Trajectory`] yields bare observations with
/// regenerated 1-based step indices, and the record representation
/// round-trips losslessly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub format_version: u32,
    pub id: String,
    pub goal: String,
    pub success: bool,
    pub steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub pre: String,
    pub action: Action,
    pub post: String,
}

impl TrajectoryRecord {
    pub fn from_trajectory(t: &Trajectory, source: Option<&str>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            id: t.trajectory_id.clone(),
            goal: t.goal.text().to_owned(),
            success: t.success,
            steps: t
                .transitions
                .iter()
                .map(|tr| StepRecord {
                    pre: tr.pre.screen_id.clone(),
                    action: tr.action.clone(),
                    post: tr.post.screen_id.clone(),
                })
                .collect(),
            source: source.map(str::to_owned),
        }
    }

    pub fn check(&self) -> Result<()> {
        check_version(self.format_version, "trajectory record")
    }

    pub fn to_trajectory(&self) -> Result<Trajectory> {
        check_version(self.format_version, "trajectory record")?;
        let goal = Instruction::new(&self.goal)
            .map_err(|e| Error::InvalidRecord(format!("trajectory `{}`: {e}", self.id)))?;
        let transitions = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| Transition {
                pre: Observation::bare(&s.pre),
                action: s.action.clone(),
                post: Observation::bare(&s.post),
                step_index: (i + 1) as u32,
            })
            .collect();
        Trajectory::new(&self.id, goal, transitions, self.success)
            .map_err(|e| Error::InvalidRecord(format!("trajectory `{}`: {e}", self.id)))
    }
}

/// Origin tag for relabeled trajectories: `hgs:<origin-id>:<prefix-len>`.
pub fn relabel_source_tag(origin_id: &str, prefix_len: usize) -> String {
    format!("hgs:{origin_id}:{prefix_len}")
}

/// Recovers split-pool metadata from a trajectory record: relabeled records
/// point at their origin via the source tag, collected records stand for
/// themselves.
pub fn sample_from_record(record: &TrajectoryRecord) -> Result<DataSample> {
    let trajectory = record.to_trajectory()?;
    let (origin_id, prefix_len) = match record.source.as_deref() {
        Some(tag) => {
            let rest = tag.strip_prefix("hgs:").ok_or_else(|| {
                Error::InvalidRecord(format!("unrecognized source tag `{tag}`"))
            })?;
            let (origin, len) = rest.rsplit_once(':').ok_or_else(|| {
                Error::InvalidRecord(format!("unrecognized source tag `{tag}`"))
            })?;
            let len: usize = len
                .parse()
                .map_err(|_| Error::InvalidRecord(format!("bad prefix length in `{tag}`")))?;
            (origin.to_owned(), len)
        }
        None => (record.id.clone(), record.steps.len()),
    };
    Ok(DataSample {
        trajectory,
        origin_id,
        prefix_len,
    })
}

pub fn record_from_sample(sample: &DataSample) -> TrajectoryRecord {
    let source = if sample.origin_id == sample.trajectory.trajectory_id {
        None
    } else {
        Some(relabel_source_tag(&sample.origin_id, sample.prefix_len))
    };
    TrajectoryRecord::from_trajectory(&sample.trajectory, source.as_deref())
}

/// A distilled rule plus the instruction it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleRecord {
    pub format_version: u32,
    pub rule_text: String,
    pub source_instruction: String,
}

impl RuleRecord {
    pub fn new(rule_text: &str, source_instruction: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            rule_text: rule_text.to_owned(),
            source_instruction: source_instruction.to_owned(),
        }
    }

    pub fn check(&self) -> Result<()> {
        check_version(self.format_version, "rule record")
    }
}

/// A past trajectory plus its curated summary, as seeded into memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperienceSeedRecord {
    pub format_version: u32,
    pub trajectory: TrajectoryRecord,
    pub summary: String,
}

///// Input to reward evaluation: raw model text plus the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardCaseRecord {
    pub format_version: u32,
    pub model_text: String,
    pub ground_truth: GroundTruth,
}

impl RewardCaseRecord {
    pub fn check(&self) -> Result<()> {
        check_version(self.format_version, "reward case")
    }
}

/// Output of reward evaluation, metrics rounded for byte-stable files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardResultRecord {
    pub format_version: u32,
    pub r_format: f64,
    pub r_type: f64,
    pub r_param: f64,
    pub r_acc: f64,
    pub r_total: f64,
}

impl RewardResultRecord {
    pub fn from_breakdown(b: &RewardBreakdown) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            r_format: round_sig9(b.r_format),
            r_type: round_sig9(b.r_type),
            r_param: round_sig9(b.r_param),
            r_acc: round_sig9(b.r_acc),
            r_total: round_sig9(b.r_total),
        }
    }
}

/// One candidate sequence in an optimization batch file. Sequences sharing
/// a `group` value form one group; groups are ordered by first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceRecord {
    pub format_version: u32,
    pub group: u64,
    pub reward: f64,
    pub logp_cur: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
}

/// Assembles an optimization batch from sequence records.
pub fn batch_from_records(
    records: &[SequenceRecord],
    beta: f64,
    schedule: ClipSchedule,
    step: u64,
) -> Result<OptimizationBatch> {
    if records.is_empty() {
        return Err(Error::EmptySequence("batch records".into()));
    }
    let mut order: Vec<u64> = Vec::new();
    for r in records {
        check_version(r.format_version, "sequence record")?;
        if !order.contains(&r.group) {
            order.push(r.group);
        }
    }
    let mut groups = Vec::with_capacity(order.len());
    for gid in order {
        let mut seqs = Vec::new();
        let mut rewards = Vec::new();
        for r in records.iter().filter(|r| r.group == gid) {
            seqs.push(SequenceLogProbs::new(
                r.logp_cur.clone(),
                r.logp_old.clone(),
                r.logp_ref.clone(),
            )?);
            rewards.push(r.reward);
        }
        groups.push(Group::new(seqs, rewards)?);
    }
    OptimizationBatch::new(groups, beta, schedule, step)
}

/// Summary line of a `grpo-step` output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoSummaryRecord {
    pub format_version: u32,
    pub record: String,
    pub objective: f64,
    pub loss: f64,
    pub eps_cur: f64,
}

/// Per-sequence diagnostics line of a `grpo-step` output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoSequenceRecord {
    pub format_version: u32,
    pub record: String,
    pub group: usize,
    pub index: usize,
    pub advantage: f64,
    pub ratios: Vec<f64>,
    pub clipped: Vec<f64>,
    pub surrogate: Vec<f64>,
    pub kl: Vec<f64>,
}

/// Renders a report as one summary line followed by one line per sequence.
pub fn grpo_report_lines(report: &GrpoReport) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    let summary = GrpoSummaryRecord {
        format_version: FORMAT_VERSION,
        record: "summary".into(),
        objective: round_sig9(report.objective),
        loss: round_sig9(report.loss),
        eps_cur: round_sig9(report.eps_cur),
    };
    lines.push(serde_json::to_string(&summary)?);
    for (g, group) in report.groups.iter().enumerate() {
        for (i, seq) in group.sequences.iter().enumerate() {
            let line = GrpoSequenceRecord {
                format_version: FORMAT_VERSION,
                record: "sequence".into(),
                group: g,
                index: i,
                advantage: round_sig9(group.advantages[i]),
                ratios: round_sig9_vec(&seq.ratios),
                clipped: round_sig9_vec(&seq.clipped),
                surrogate: round_sig9_vec(&seq.surrogate),
                kl: round_sig9_vec(&seq.kl),
            };
            lines.push(serde_json::to_string(&line)?);
        }
    }
    Ok(lines)
}

/// Manifest written next to the two split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub format_version: u32,
    pub seed: u64,
    pub n_ground: usize,
    pub n_evolve: usize,
    pub ground: Vec<SplitEntry>,
    pub evolve: Vec<SplitEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub id: String,
    pub origin: String,
    pub prefix_len: usize,
    pub goal: String,
}

impl SplitEntry {
    pub fn from_sample(s: &DataSample) -> Self {
        Self {
            id: s.trajectory.trajectory_id.clone(),
            origin: s.origin_id.clone(),
            prefix_len: s.prefix_len,
            goal: s.trajectory.goal.text().to_owned(),
        }
    }
}
