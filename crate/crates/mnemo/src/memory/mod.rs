//! Hierarchical agent memory.
//!
//! Three layers with different lifetimes and retrieval rules:
//!
//! - **Episodic**: the raw transitions of the current episode, read back as
//!   a sliding window of the most recent steps. Cleared on episode reset.
//! - **Semantic**: distilled rule texts keyed by an embedding of the
//!   instruction they were derived from, retrieved by cosine similarity to
//!   the current instruction.
//! - **Experiential**: complete past trajectories with summaries, keyed by
//!   both an intent embedding (of the goal text) and a task embedding (of
//!   the first screen), retrieved by a blend of the two similarities.
//!
//! Retrieval is an exact scan over stored keys: scores are cosine
//! similarities, ordering is score-descending with entry-id ascending as
//! the tie-break, so results are fully deterministic.

pub mod persist;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::types::{Instruction, Observation, Trajectory, Transition};

/// How experiential candidates are pooled before ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalStrategy {
    /// Rank every stored trajectory by blended score.
    TopK,
    /// Draw from successes and failures alike. At this store's exact-scan
    /// scale this coincides with [`RetrievalStrategy::TopK`]; the variant
    /// exists so configurations name their intent.
    Mixed,
    /// Rank only successful trajectories.
    SuccessOnly,
}

impl RetrievalStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::TopK => "top_k",
            Self::Mixed => "mixed",
            Self::SuccessOnly => "success_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "top_k" => Some(Self::TopK),
            "mixed" => Some(Self::Mixed),
            "success_only" => Some(Self::SuccessOnly),
            _ => None,
        }
    }
}

/// Transitions of the episode in progress.
#[derive(Debug, Clone, Default)]
pub struct EpisodicStore {
    transitions: Vec<Transition>,
}

impl EpisodicStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a transition; step indices must strictly increase within an
    /// episode.
    pub fn append(&mut self, t: Transition) -> Result<()> {
        let last = self.transitions.last().map_or(0, |t| t.step_index);
        if t.step_index <= last {
            return Err(Error::NonMonotonicStep {
                last,
                next: t.step_index,
            });
        }
        self.transitions.push(t);
        Ok(())
    }

    /// The sliding window before step `t`: transitions with step index in
    /// `[max(1, t - horizon), t - 1]`. Never more than `horizon` items and
    /// never anything at or after `t`.
    pub fn window(&self, t: u32, horizon: u32) -> Vec<Transition> {
        if t <= 1 || horizon == 0 {
            return Vec::new();
        }
        let low = t.saturating_sub(horizon).max(1);
        self.transitions
            .iter()
            .filter(|tr| tr.step_index >= low && tr.step_index < t)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }
}

/// A distilled rule keyed by the embedding of its source instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEntry {
    pub entry_id: u64,
    pub rule_text: String,
    pub source_instruction: String,
    pub key: EmbeddingVector,
}

/// A stored past trajectory with summary and two retrieval keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperientialEntry {
    pub entry_id: u64,
    pub trajectory: Trajectory,
    pub summary: String,
    pub success: bool,
    pub intent_key: EmbeddingVector,
    pub task_key: EmbeddingVector,
}

/// A semantic retrieval hit with provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedSemantic {
    pub entry_id: u64,
    pub score: f64,
    pub rule_text: String,
}

/// An experiential retrieval hit with provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedExperience {
    pub entry_id: u64,
    pub score: f64,
    pub trajectory_id: String,
    pub success: bool,
    pub summary: String,
}

/// Produces the stored summary for a trajectory entering experiential
/// memory.
pub trait Summarizer {
    fn summarize(&self, trajectory: &Trajectory) -> String;
}

/// Deterministic template summary built from the goal, the action kind
/// sequence, and the outcome.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateSummarizer;

impl Summarizer for TemplateSummarizer {
    fn summarize(&self, trajectory: &Trajectory) -> String {
        let steps = trajectory
            .transitions
            .iter()
            .map(|t| t.action.kind.as_str())
            .collect::<Vec<_>>()
            .join(" \u{2192} ");
        let outcome = if trajectory.success {
            "success"
        } else {
            "failure"
        };
        // The template supplies sentence punctuation, so a trailing period
        // on the goal text is elided.
        let goal = trajectory.goal.text().trim_end_matches('.');
        format!("Goal: {goal}. Steps: {steps}. Outcome: {outcome}.")
    }
}

/// Returns a fixed, curated summary regardless of the trajectory. Used
/// when seeding memory from reviewed material.
#[derive(Debug, Clone)]
pub struct FixedSummarizer(pub String);

impl Summarizer for FixedSummarizer {
    fn summarize(&self, _trajectory: &Trajectory) -> String {
        self.0.clone()
    }
}

/// The three memory layers behind one embedding provider.
pub struct MemoryRepository {
    provider: EmbeddingProvider,
    episodic: EpisodicStore,
    semantic: Vec<SemanticEntry>,
    experiential: Vec<ExperientialEntry>,
    semantic_keys: std::collections::HashSet<(String, String)>,
    experiential_keys: std::collections::HashSet<(String, String)>,
    next_semantic_id: u64,
    next_experiential_id: u64,
}

impl MemoryRepository {
    pub fn new(provider: EmbeddingProvider) -> Self {
        Self {
            provider,
            episodic: EpisodicStore::new(),
            semantic: Vec::new(),
            experiential: Vec::new(),
            semantic_keys: std::collections::HashSet::new(),
            experiential_keys: std::collections::HashSet::new(),
            next_semantic_id: 1,
            next_experiential_id: 1,
        }
    }

    pub fn provider(&self) -> &EmbeddingProvider {
        &self.provider
    }

    pub fn episodic(&self) -> &EpisodicStore {
        &self.episodic
    }

    pub fn append_transition(&mut self, t: Transition) -> Result<()> {
        self.episodic.append(t)
    }

    pub fn episodic_window(&self, t: u32, horizon: u32) -> Vec<Transition> {
        self.episodic.window(t, horizon)
    }

    pub fn clear_episodic(&mut self) {
        self.episodic.clear();
    }

    pub fn semantic_entries(&self) -> &[SemanticEntry] {
        &self.semantic
    }

    pub fn experiential_entries(&self) -> &[ExperientialEntry] {
        &self.experiential
    }

    /// Adds a rule under the embedding of its source instruction. The pair
    /// (rule text, source instruction) must be new.
    pub fn add_semantic_entry(&mut self, rule_text: &str, source_instruction: &str) -> Result<u64> {
        if rule_text.trim().is_empty() {
            return Err(Error::EmptyInput("rule text".into()));
        }
        if source_instruction.trim().is_empty() {
            return Err(Error::EmptyInput("source instruction".into()));
        }
        let dedup = (rule_text.to_owned(), source_instruction.to_owned());
        if self.semantic_keys.contains(&dedup) {
            return Err(Error::DuplicateEntry(format!(
                "semantic rule already stored for `{source_instruction}`"
            )));
        }
        let key = self.provider.embed_text(source_instruction)?;
        let entry_id = self.next_semantic_id;
        self.next_semantic_id += 1;
        self.semantic.push(SemanticEntry {
            entry_id,
            rule_text: rule_text.to_owned(),
            source_instruction: source_instruction.to_owned(),
            key,
        });
        self.semantic_keys.insert(dedup);
        Ok(entry_id)
    }

    /// Top-k rules by cosine similarity between the query instruction and
    /// each entry's source-instruction key.
    pub fn retrieve_semantic(&self, query: &Instruction, k: usize) -> Result<Vec<RetrievedSemantic>> {
        let qk = self.provider.embed_text(query.text())?;
        self.retrieve_semantic_with_key(&qk, k)
    }

    /// Same ranking, with the query embedding supplied directly.
    pub fn retrieve_semantic_with_key(
        &self,
        query_key: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<RetrievedSemantic>> {
        let mut scored = Vec::with_capacity(self.semantic.len());
        for e in &self.semantic {
            let score = cosine_similarity(query_key, &e.key)?;
            scored.push(RetrievedSemantic {
                entry_id: e.entry_id,
                score,
                rule_text: e.rule_text.clone(),
            });
        }
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.entry_id.cmp(&b.entry_id))
        });
        scored.truncate(k);
        Ok(scored)
    }

    /// Stores a trajectory with a summary produced by the given summarizer.
    /// The (goal text, action sequence) pair must be new.
    pub fn add_experiential_entry(
        &mut self,
        trajectory: &Trajectory,
        summarizer: &dyn Summarizer,
    ) -> Result<u64> {
        let summary = summarizer.summarize(trajectory);
        self.add_experiential_with_summary(trajectory, &summary)
    }

    pub fn add_experiential_with_summary(
        &mut self,
        trajectory: &Trajectory,
        summary: &str,
    ) -> Result<u64> {
        if trajectory.is_empty() {
            return Err(Error::EmptyTrajectory(trajectory.trajectory_id.clone()));
        }
        trajectory.validate()?;
        let dedup = trajectory.dedup_key();
        if self.experiential_keys.contains(&dedup) {
            return Err(Error::DuplicateEntry(format!(
                "trajectory with goal `{}` and identical actions already stored",
                trajectory.goal.text()
            )));
        }
        let intent_key = self.provider.embed_text(trajectory.goal.text())?;
        let task_key = self
            .provider
            .embed_observation(trajectory.first_observation().expect("non-empty"))?;
        let entry_id = self.next_experiential_id;
        self.next_experiential_id += 1;
        self.experiential.push(ExperientialEntry {
            entry_id,
            trajectory: trajectory.clone(),
            summary: summary.to_owned(),
            success: trajectory.success,
            intent_key,
            task_key,
        });
        self.experiential_keys.insert(dedup);
        Ok(entry_id)
    }

    /// Top-k past trajectories under the blended score
    /// `lambda * cos(intent) + (1 - lambda) * cos(task)`.
    pub fn retrieve_experiential(
        &self,
        query: &Instruction,
        observation: &Observation,
        k: usize,
        lambda: f64,
        strategy: RetrievalStrategy,
    ) -> Result<Vec<RetrievedExperience>> {
        let intent = self.provider.embed_text(query.text())?;
        let task = self.provider.embed_observation(observation)?;
        self.retrieve_experiential_with_keys(&intent, &task, k, lambda, strategy)
    }

    /// Same ranking, with both query embeddings supplied directly.
    pub fn retrieve_experiential_with_keys(
        &self,
        intent_query: &EmbeddingVector,
        task_query: &EmbeddingVector,
        k: usize,
        lambda: f64,
        strategy: RetrievalStrategy,
    ) -> Result<Vec<RetrievedExperience>> {
        if !lambda.is_finite() || !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidLambda(lambda));
        }
        let mut scored = Vec::with_capacity(self.experiential.len());
        for e in &self.experiential {
            if strategy == RetrievalStrategy::SuccessOnly && !e.success {
                continue;
            }
            let intent_sim = cosine_similarity(intent_query, &e.intent_key)?;
            let task_sim = cosine_similarity(task_query, &e.task_key)?;
            let score = lambda * intent_sim + (1.0 - lambda) * task_sim;
            scored.push(RetrievedExperience {
                entry_id: e.entry_id,
                score,
                trajectory_id: e.trajectory.trajectory_id.clone(),
                success: e.success,
                summary: e.summary.clone(),
            });
        }
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.entry_id.cmp(&b.entry_id))
        });
        scored.truncate(k);
        Ok(scored)
    }
}

/// The assembled context handed to a policy for one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievedContext {
    pub episodic: Vec<Transition>,
    pub semantic: Vec<RetrievedSemantic>,
    pub experiential: Vec<RetrievedExperience>,
}

impl RetrievedContext {
    pub fn assemble(
        episodic: Vec<Transition>,
        semantic: Vec<RetrievedSemantic>,
        experiential: Vec<RetrievedExperience>,
    ) -> Self {
        Self {
            episodic,
            semantic,
            experiential,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.episodic.is_empty() && self.semantic.is_empty() && self.experiential.is_empty()
    }

    /// Pinned text rendering. Empty context renders as the empty string;
    /// otherwise all three blocks appear (empty ones included) so the
    /// layout is positional: `<EPI>..</EPI><SEM>..</SEM><EXP>..</EXP>`,
    /// items one per line prefixed `- `.
    pub fn render(&self) -> String {
        if self.is_empty() {
            return String::new();
        }
        let join = |items: Vec<String>| -> String {
            items
                .iter()
                .map(|s| format!("- {s}"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let epi = join(
            self.episodic
                .iter()
                .map(|t| {
                    format!(
                        "({}, {}, {})",
                        t.pre.screen_id,
                        t.action.brief(),
                        t.post.screen_id
                    )
                })
                .collect(),
        );
        let sem = join(self.semantic.iter().map(|s| s.rule_text.clone()).collect());
        let exp = join(
            self.experiential
                .iter()
                .map(|e| e.summary.clone())
                .collect(),
        );
        format!("<EPI>{epi}</EPI><SEM>{sem}</SEM><EXP>{exp}</EXP>")
    }
}
