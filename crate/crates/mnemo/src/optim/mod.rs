//! Group-relative policy-gradient kernel.
//!
//! The objective operates on token-level log-probabilities of grouped
//! candidate responses. Per group, rewards are normalized into advantages
//! (mean 0, unit variance, zeros for constant groups); per token, an
//! importance ratio against the old policy is clipped into an asymmetric
//! band whose upper edge follows a cosine decay over training steps; a
//! per-token KL estimate against a frozen reference policy is subtracted.
//! All reductions use fixed-order pairwise summation so results are
//! bit-identical across runs.

pub mod toy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard-deviation floor below which a group counts as constant and all
/// its advantages are zero.
pub const STD_FLOOR: f64 = 1e-8;

/// Fixed-order pairwise summation: deterministic and numerically stable.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if let Some(v) = xs.iter().find(|v| !v.is_finite()) {
        return Err(Error::OutOfRange(format!("{name} contains non-finite {v}")));
    }
    Ok(())
}

fn check_log_probs(name: &str, xs: &[f64]) -> Result<()> {
    check_finite(name, xs)?;
    if let Some(v) = xs.iter().find(|v| **v > 0.0) {
        return Err(Error::OutOfRange(format!(
            "{name} contains log-probability {v} > 0"
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood per token, averaged over sequences.
/// Each inner vector holds the log-probabilities of one sequence's target
/// tokens under the current policy.
pub fn sft_loss(sequences: &[Vec<f64>]) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::EmptySequence("sft batch".into()));
    }
    let mut losses = Vec::with_capacity(sequences.len());
    for (i, seq) in sequences.iter().enumerate() {
        if seq.is_empty() {
            return Err(Error::EmptySequence(format!("sft sequence {i}")));
        }
        check_log_probs("sft sequence", seq)?;
        losses.push(-pairwise_sum(seq) / seq.len() as f64);
    }
    Ok(pairwise_sum(&losses) / losses.len() as f64)
}

/// Group-normalized advantages: `(r - mean) / std` with population standard
/// deviation. A group whose std falls below [`STD_FLOOR`] gets all-zero
/// advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    check_finite("rewards", rewards)?;
    if rewards.is_empty() {
        return Ok(Vec::new());
    }
    let n = rewards.len() as f64;
    let mean = pairwise_sum(rewards) / n;
    let sq: Vec<f64> = rewards.iter().map(|r| (r - mean) * (r - mean)).collect();
    let std = (pairwise_sum(&sq) / n).sqrt();
    if std < STD_FLOOR {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Clipping band: the lower edge `1 - eps_low` is fixed, the upper edge
/// `1 + eps(k)` follows a half-cosine decay from `eps_init` at step 0 to
/// `eps_end` at the final step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSchedule {
    pub eps_low: f64,
    pub eps_init: f64,
    pub eps_end: f64,
    pub total_steps: u64,
}

impl ClipSchedule {
    pub fn new(eps_low: f64, eps_init: f64, eps_end: f64, total_steps: u64) -> Result<Self> {
        let s = Self {
            eps_low,
            eps_init,
            eps_end,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_low", self.eps_low),
            ("eps_init", self.eps_init),
            ("eps_end", self.eps_end),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::OutOfRange(format!("{name}={v} must be > 0")));
            }
        }
        if self.eps_low >= 1.0 {
            return Err(Error::OutOfRange(format!(
                "eps_low={} must be < 1",
                self.eps_low
            )));
        }
        if self.eps_init < self.eps_end {
            return Err(Error::OutOfRange(format!(
                "eps_init={} must be >= eps_end={}",
                self.eps_init, self.eps_end
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::OutOfRange("total_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Upper-edge epsilon at step `k` (0-based, `k <= total_steps`):
    /// `eps_end + (eps_init - eps_end) * (1 + cos(pi * k / total)) / 2`.
    pub fn at(&self, k: u64) -> Result<f64> {
        if k > self.total_steps {
            return Err(Error::OutOfRange(format!(
                "step {k} beyond schedule length {}",
                self.total_steps
            )));
        }
        let frac = k as f64 / self.total_steps as f64;
        Ok(self.eps_end
            + 0.5 * (self.eps_init - self.eps_end) * (1.0 + (std::f64::consts::PI * frac).cos()))
    }
}

/// Clamps an importance ratio into `[1 - eps_low, 1 + eps_cur]`.
pub fn clipped_ratio(rho: f64, eps_low: f64, eps_cur: f64) -> f64 {
    rho.clamp(1.0 - eps_low, 1.0 + eps_cur)
}

/// Non-negative per-token KL estimate of current against reference:
/// `r - ln r - 1` with `r = exp(logp_ref - logp_cur)`. The floor at zero
/// absorbs sub-ulp rounding for `r` near 1.
pub fn kl_per_token(logp_cur: f64, logp_ref: f64) -> f64 {
    let lr = logp_ref - logp_cur;
    (lr.exp() - lr - 1.0).max(0.0)
}

/// Token log-probabilities of one candidate sequence under the current,
/// old (sampling), and reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceLogProbs {
    cur: Vec<f64>,
    old: Vec<f64>,
    reference: Vec<f64>,
}

impl SequenceLogProbs {
    pub fn new(cur: Vec<f64>, old: Vec<f64>, reference: Vec<f64>) -> Result<Self> {
        if cur.is_empty() {
            return Err(Error::EmptySequence("sequence log-probabilities".into()));
        }
        for other in [&old, &reference] {
            if other.len() != cur.len() {
                return Err(Error::LengthMismatch {
                    expected: cur.len(),
                    found: other.len(),
                });
            }
        }
        check_log_probs("cur", &cur)?;
        check_log_probs("old", &old)?;
        check_log_probs("reference", &reference)?;
        Ok(Self {
            cur,
            old,
            reference,
        })
    }

    pub fn token_count(&self) -> usize {
        self.cur.len()
    }

    pub fn cur(&self) -> &[f64] {
        &self.cur
    }

    pub fn old(&self) -> &[f64] {
        &self.old
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }
}

/// Candidate sequences for one prompt together with their scalar rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    sequences: Vec<SequenceLogProbs>,
    rewards: Vec<f64>,
}

impl Group {
    pub fn new(sequences: Vec<SequenceLogProbs>, rewards: Vec<f64>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::EmptySequence("group".into()));
        }
        if rewards.len() != sequences.len() {
            return Err(Error::LengthMismatch {
                expected: sequences.len(),
                found: rewards.len(),
            });
        }
        check_finite("rewards", &rewards)?;
        Ok(Self { sequences, rewards })
    }

    pub fn sequences(&self) -> &[SequenceLogProbs] {
        &self.sequences
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(|s| s.token_count()).sum()
    }
}

/// One optimization step's worth of groups plus the regularization and
/// clipping configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationBatch {
    pub groups: Vec<Group>,
    pub beta: f64,
    pub schedule: ClipSchedule,
    pub step: u64,
}

impl OptimizationBatch {
    pub fn new(groups: Vec<Group>, beta: f64, schedule: ClipSchedule, step: u64) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::EmptySequence("optimization batch".into()));
        }
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::OutOfRange(format!("beta={beta} must be >= 0")));
        }
        schedule.validate()?;
        schedule.at(step)?;
        Ok(Self {
            groups,
            beta,
            schedule,
            step,
        })
    }
}

/// Per-token diagnostics for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceReport {
    pub ratios: Vec<f64>,
    pub clipped: Vec<f64>,
    pub surrogate: Vec<f64>,
    pub kl: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub advantages: Vec<f64>,
    pub sequences: Vec<SequenceReport>,
}

/// The objective value plus everything needed to audit it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrpoReport {
    pub objective: f64,
    pub loss: f64,
    pub eps_cur: f64,
    pub groups: Vec<GroupReport>,
}

/// Evaluates the clipped, KL-regularized group-relative objective.
///
/// Per group g: `J_g = (1/T_g) * sum_i sum_t [min(rho * A_i, clip(rho) * A_i)
/// - beta * kl_t]` where `T_g` counts all tokens in the group. The batch
/// objective is the mean over groups; the loss is its negation.
pub fn grpo_objective(batch: &OptimizationBatch) -> Result<GrpoReport> {
    let eps_cur = batch.schedule.at(batch.step)?;
    let mut group_reports = Vec::with_capacity(batch.groups.len());
    let mut group_objectives = Vec::with_capacity(batch.groups.len());
    for group in &batch.groups {
        let advantages = group_advantages(group.rewards())?;
        let t_g = group.token_count();
        let mut terms = Vec::with_capacity(t_g);
        let mut seq_reports = Vec::with_capacity(group.sequences().len());
        for (seq, adv) in group.sequences().iter().zip(&advantages) {
            let n = seq.token_count();
            let mut ratios = Vec::with_capacity(n);
            let mut clipped = Vec::with_capacity(n);
            let mut surrogate = Vec::with_capacity(n);
            let mut kl = Vec::with_capacity(n);
            for t in 0..n {
                let rho = (seq.cur()[t] - seq.old()[t]).exp();
                let clip = clipped_ratio(rho, batch.schedule.eps_low, eps_cur);
                let surr = (rho * adv).min(clip * adv);
                let k = kl_per_token(seq.cur()[t], seq.reference()[t]);
                ratios.push(rho);
                clipped.push(clip);
                surrogate.push(surr);
                kl.push(k);
                terms.push(surr - batch.beta * k);
            }
            seq_reports.push(SequenceReport {
                ratios,
                clipped,
                surrogate,
                kl,
            });
        }
        group_objectives.push(pairwise_sum(&terms) / t_g as f64);
        group_reports.push(GroupReport {
            advantages,
            sequences: seq_reports,
        });
    }
    let objective = pairwise_sum(&group_objectives) / group_objectives.len() as f64;
    Ok(GrpoReport {
        objective,
        loss: -objective,
        eps_cur,
        groups: group_reports,
    })
}
