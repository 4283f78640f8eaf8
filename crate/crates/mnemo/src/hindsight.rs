//! Goal relabeling for failed trajectories and dataset splitting.
//!
//! A failed episode often completes a meaningful sub-goal on the way to its
//! missed objective. Relabeling extracts that signal: for each verified
//! sub-goal, the shortest prefix that achieves it becomes a new successful
//! trajectory under the substituted goal, with provenance back to the
//! original episode.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{Instruction, Trajectory, Transition};

/// Supplies candidate sub-goals for a trajectory and decides whether a
/// prefix achieves one.
pub trait SubGoalVerifier {
    fn candidate_goals(&self, trajectory: &Trajectory) -> Vec<Instruction>;
    fn verify(&self, prefix: &[Transition], goal: &Instruction) -> bool;
}

/// Where a relabeled trajectory came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RelabelProvenance {
    pub origin_id: String,
    pub prefix_len: usize,
    pub goal: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelabeledSample {
    pub trajectory: Trajectory,
    pub provenance: RelabelProvenance,
}

/// Relabels one failed trajectory against every candidate sub-goal.
///
/// For each candidate the minimal achieving prefix length is used; a
/// candidate no prefix achieves produces nothing. Output is ordered by
/// (prefix length, candidate index) and is deterministic. Successful input
/// trajectories yield no samples: their full-goal signal is already usable
/// as-is.
pub fn relabel_trajectory(
    trajectory: &Trajectory,
    verifier: &dyn SubGoalVerifier,
) -> Result<Vec<RelabeledSample>> {
    if trajectory.is_empty() {
        return Err(Error::EmptyTrajectory(trajectory.trajectory_id.clone()));
    }
    if trajectory.success {
        return Ok(Vec::new());
    }
    let mut found: Vec<(usize, usize, Instruction)> = Vec::new();
    for (ci, goal) in verifier.candidate_goals(trajectory).into_iter().enumerate() {
        for k in 1..=trajectory.len() {
            if verifier.verify(&trajectory.transitions[..k], &goal) {
                found.push((k, ci, goal));
                break;
            }
        }
    }
    found.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut out = Vec::with_capacity(found.len());
    for (k, ci, goal) in found {
        let id = format!("{}-gs{k}-{ci}", trajectory.trajectory_id);
        let prefix = trajectory.transitions[..k].to_vec();
        let relabeled = Trajectory::new(&id, goal.clone(), prefix, true)?;
        out.push(RelabeledSample {
            trajectory: relabeled,
            provenance: RelabelProvenance {
                origin_id: trajectory.trajectory_id.clone(),
                prefix_len: k,
                goal: goal.text().to_owned(),
            },
        });
    }
    Ok(out)
}

/// Quality gate applied before splitting.
#[derive(Debug, Clone, Copy)]
pub struct FilterConfig {
    /// Minimum number of transitions; shorter trajectories are dropped.
    pub min_steps: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_steps: 2 }
    }
}

/// Drops too-short trajectories and duplicates. The duplicate key is
/// (goal text, full action sequence); the first occurrence wins and input
/// order is otherwise preserved. Goal text is non-empty by construction,
/// so no empty-goal check is needed here.
pub fn filter_trajectories(pool: &[Trajectory], config: &FilterConfig) -> Vec<Trajectory> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for t in pool {
        if t.len() < config.min_steps {
            continue;
        }
        if seen.insert(t.dedup_key()) {
            out.push(t.clone());
        }
    }
    out
}

/// [`filter_trajectories`] lifted to provenance-carrying samples.
pub fn filter_samples(pool: &[DataSample], config: &FilterConfig) -> Vec<DataSample> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for s in pool {
        if s.trajectory.len() < config.min_steps {
            continue;
        }
        if seen.insert(s.trajectory.dedup_key()) {
            out.push(s.clone());
        }
    }
    out
}

/// One pool item for splitting: a trajectory plus its origin, so relabeled
/// prefixes stay traceable after shuffling.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub trajectory: Trajectory,
    pub origin_id: String,
    pub prefix_len: usize,
}

impl DataSample {
    pub fn collected(trajectory: Trajectory) -> Self {
        let origin_id = trajectory.trajectory_id.clone();
        let prefix_len = trajectory.len();
        Self {
            trajectory,
            origin_id,
            prefix_len,
        }
    }

    pub fn relabeled(sample: &RelabeledSample) -> Self {
        Self {
            trajectory: sample.trajectory.clone(),
            origin_id: sample.provenance.origin_id.clone(),
            prefix_len: sample.provenance.prefix_len,
        }
    }
}

/// Disjoint grounding and evolution subsets drawn from one pool.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub ground: Vec<DataSample>,
    pub evolve: Vec<DataSample>,
    pub seed: u64,
}

/// Splits the pool by a seeded shuffle: the first `n_ground` shuffled
/// samples form the grounding set, the next `n_evolve` the evolution set.
/// The same (pool, quotas, seed) input always produces the same split.
pub fn build_splits(
    pool: &[DataSample],
    n_ground: usize,
    n_evolve: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let needed = n_ground + n_evolve;
    if pool.len() < needed {
        return Err(Error::InsufficientPool {
            pool: pool.len(),
            needed,
        });
    }
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let ground = indices[..n_ground]
        .iter()
        .map(|i| pool[*i].clone())
        .collect();
    let evolve = indices[n_ground..needed]
        .iter()
        .map(|i| pool[*i].clone())
        .collect();
    Ok(DatasetSplit {
        ground,
        evolve,
        seed,
    })
}
