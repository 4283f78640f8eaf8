//! A tabular softmax policy for verifying objective gradients.
//!
//! The policy stores raw logits per (context, position) pair over a small
//! vocabulary. Closed-form gradients of the SFT loss and of the negated
//! group-relative objective are compared against central finite differences
//! in tests; both sides go through the exact loss implementations in the
//! parent module, so agreement checks the analytic derivation and the
//! implementation at once.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::optim::{
    grpo_objective, pairwise_sum, sft_loss, ClipSchedule, Group, OptimizationBatch,
    SequenceLogProbs,
};

pub type ParamKey = (u32, u32);
pub type Gradient = BTreeMap<ParamKey, Vec<f64>>;

/// Tabular log-linear policy: independent softmax over the vocabulary at
/// every (context, position) slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySoftmaxPolicy {
    vocab: usize,
    logits: BTreeMap<ParamKey, Vec<f64>>,
}

impl ToySoftmaxPolicy {
    pub fn new(vocab: usize) -> Self {
        Self {
            vocab,
            logits: BTreeMap::new(),
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn set_logits(&mut self, context: u32, position: u32, logits: Vec<f64>) -> Result<()> {
        if logits.len() != self.vocab {
            return Err(Error::LengthMismatch {
                expected: self.vocab,
                found: logits.len(),
            });
        }
        self.logits.insert((context, position), logits);
        Ok(())
    }

    pub fn param_keys(&self) -> Vec<ParamKey> {
        self.logits.keys().copied().collect()
    }

    fn slot(&self, key: ParamKey) -> &[f64] {
        self.logits
            .get(&key)
            .unwrap_or_else(|| panic!("no logits for context {} position {}", key.0, key.1))
    }

    pub fn log_softmax(&self, context: u32, position: u32) -> Vec<f64> {
        let z = self.slot((context, position));
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        z.iter().map(|v| v - lse).collect()
    }

    pub fn probs(&self, context: u32, position: u32) -> Vec<f64> {
        self.log_softmax(context, position)
            .iter()
            .map(|v| v.exp())
            .collect()
    }

    pub fn log_prob(&self, context: u32, position: u32, token: usize) -> f64 {
        self.log_softmax(context, position)[token]
    }

    /// Log-probabilities of one token sequence, position by position.
    pub fn sequence_log_probs(&self, context: u32, tokens: &[usize]) -> Vec<f64> {
        tokens
            .iter()
            .enumerate()
            .map(|(t, tok)| self.log_prob(context, t as u32, *tok))
            .collect()
    }

    pub fn perturbed(&self, key: ParamKey, token: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.logits.get_mut(&key).expect("known key")[token] += delta;
        out
    }
}

/// One supervised case: a context and its target token sequence.
#[derive(Debug, Clone)]
pub struct SftCase {
    pub context: u32,
    pub tokens: Vec<usize>,
}

pub fn sft_loss_for(policy: &ToySoftmaxPolicy, cases: &[SftCase]) -> Result<f64> {
    let sequences: Vec<Vec<f64>> = cases
        .iter()
        .map(|c| policy.sequence_log_probs(c.context, &c.tokens))
        .collect();
    sft_loss(&sequences)
}

/// Closed-form gradient of the SFT loss with respect to every logit:
/// `d/dz_v [-log p(y)] = p_v - 1[v == y]`, scaled by `1 / (N * T_i)`.
pub fn sft_analytic_gradient(policy: &ToySoftmaxPolicy, cases: &[SftCase]) -> Gradient {
    let mut grad = zero_gradient(policy);
    let n = cases.len() as f64;
    for case in cases {
        let scale = 1.0 / (n * case.tokens.len() as f64);
        for (t, tok) in case.tokens.iter().enumerate() {
            let key = (case.context, t as u32);
            let probs = policy.probs(key.0, key.1);
            let slot = grad.get_mut(&key).expect("known key");
            for (v, p) in probs.iter().enumerate() {
                let indicator = if v == *tok { 1.0 } else { 0.0 };
                slot[v] += scale * (p - indicator);
            }
        }
    }
    grad
}

/// One prompt group for the toy policy: candidate token sequences plus
/// rewards.
#[derive(Debug, Clone)]
pub struct ToyGroup {
    pub context: u32,
    pub sequences: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
}

/// A full toy optimization problem. The current policy is passed
/// separately so it can be perturbed during finite differencing.
#[derive(Debug, Clone)]
pub struct ToyBatch {
    pub groups: Vec<ToyGroup>,
    pub old: ToySoftmaxPolicy,
    pub reference: ToySoftmaxPolicy,
    pub beta: f64,
    pub schedule: ClipSchedule,
    pub step: u64,
}

pub fn build_batch(cur: &ToySoftmaxPolicy, setup: &ToyBatch) -> Result<OptimizationBatch> {
    let mut groups = Vec::with_capacity(setup.groups.len());
    for g in &setup.groups {
        let mut seqs = Vec::with_capacity(g.sequences.len());
        for tokens in &g.sequences {
            seqs.push(SequenceLogProbs::new(
                cur.sequence_log_probs(g.context, tokens),
                setup.old.sequence_log_probs(g.context, tokens),
                setup.reference.sequence_log_probs(g.context, tokens),
            )?);
        }
        groups.push(Group::new(seqs, g.rewards.clone())?);
    }
    OptimizationBatch::new(groups, setup.beta, setup.schedule, setup.step)
}

/// The negated group-relative objective under the given current policy.
pub fn grpo_loss_for(cur: &ToySoftmaxPolicy, setup: &ToyBatch) -> Result<f64> {
    Ok(grpo_objective(&build_batch(cur, setup)?)?.loss)
}

/// Closed-form gradient of the negated objective with respect to every
/// logit of the current policy.
///
/// Per token with advantage A and ratio `rho = exp(s - s_old)` where
/// `s = log p_cur(y)`: the surrogate contributes `A * rho` unless clipping
/// saturates on the selected side (`A > 0` and `rho` above the band, or
/// `A < 0` and `rho` below it), in which case it contributes 0; the KL term
/// contributes `-beta * (1 - exp(s_ref - s))`. The chain rule through the
/// softmax gives `ds/dz_v = 1[v == y] - p_v`.
pub fn grpo_analytic_gradient(cur: &ToySoftmaxPolicy, setup: &ToyBatch) -> Result<Gradient> {
    let eps_cur = setup.schedule.at(setup.step)?;
    let lo = 1.0 - setup.schedule.eps_low;
    let hi = 1.0 + eps_cur;
    let mut grad = zero_gradient(cur);
    let n_groups = setup.groups.len() as f64;
    for g in &setup.groups {
        let advantages = crate::optim::group_advantages(&g.rewards)?;
        let t_g: usize = g.sequences.iter().map(Vec::len).sum();
        let scale = 1.0 / (n_groups * t_g as f64);
        for (tokens, adv) in g.sequences.iter().zip(&advantages) {
            for (t, tok) in tokens.iter().enumerate() {
                let key = (g.context, t as u32);
                let s_cur = cur.log_prob(key.0, key.1, *tok);
                let s_old = setup.old.log_prob(key.0, key.1, *tok);
                let s_ref = setup.reference.log_prob(key.0, key.1, *tok);
                let rho = (s_cur - s_old).exp();
                let saturated = (*adv > 0.0 && rho >= hi) || (*adv < 0.0 && rho <= lo);
                let d_surr = if saturated { 0.0 } else { adv * rho };
                let d_kl = 1.0 - (s_ref - s_cur).exp();
                let d_term = d_surr - setup.beta * d_kl;
                let probs = cur.probs(key.0, key.1);
                let slot = grad.get_mut(&key).expect("known key");
                for (v, p) in probs.iter().enumerate() {
                    let indicator = if v == *tok { 1.0 } else { 0.0 };
                    // d(loss)/dz = -d(J)/dz
                    slot[v] -= scale * d_term * (indicator - p);
                }
            }
        }
    }
    Ok(grad)
}

/// Smallest distance of any importance ratio to either clipping edge.
/// Generators reject configurations where this is tiny, since the
/// surrogate is not differentiable at the edges.
pub fn min_clip_boundary_distance(cur: &ToySoftmaxPolicy, setup: &ToyBatch) -> Result<f64> {
    let eps_cur = setup.schedule.at(setup.step)?;
    let lo = 1.0 - setup.schedule.eps_low;
    let hi = 1.0 + eps_cur;
    let mut min = f64::INFINITY;
    for g in &setup.groups {
        for tokens in &g.sequences {
            for (t, tok) in tokens.iter().enumerate() {
                let rho = (cur.log_prob(g.context, t as u32, *tok)
                    - setup.old.log_prob(g.context, t as u32, *tok))
                .exp();
                min = min.min((rho - lo).abs()).min((rho - hi).abs());
            }
        }
    }
    Ok(min)
}

fn zero_gradient(policy: &ToySoftmaxPolicy) -> Gradient {
    policy
        .param_keys()
        .into_iter()
        .map(|k| (k, vec![0.0; policy.vocab()]))
        .collect()
}

/// Central finite-difference gradient of `f` over every logit.
pub fn finite_difference_gradient<F>(policy: &ToySoftmaxPolicy, h: f64, f: F) -> Gradient
where
    F: Fn(&ToySoftmaxPolicy) -> f64,
{
    let mut grad = zero_gradient(policy);
    for key in policy.param_keys() {
        for v in 0..policy.vocab() {
            let plus = f(&policy.perturbed(key, v, h));
            let minus = f(&policy.perturbed(key, v, -h));
            grad.get_mut(&key).expect("known key")[v] = (plus - minus) / (2.0 * h);
        }
    }
    grad
}

/// Largest relative disagreement between two gradients. The denominator is
/// floored at 1e-4 so near-zero components are compared absolutely at the
/// 1e-8 scale instead of amplifying finite-difference noise.
pub fn max_relative_error(a: &Gradient, b: &Gradient) -> f64 {
    let mut worst = 0.0f64;
    for (key, av) in a {
        let bv = &b[key];
        for (x, y) in av.iter().zip(bv) {
            let denom = x.abs().max(y.abs()).max(1e-4);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

/// Mean absolute gradient size, used to sanity-check that a comparison was
/// not vacuous.
pub fn gradient_scale(g: &Gradient) -> f64 {
    let all: Vec<f64> = g.values().flatten().map(|v| v.abs()).collect();
    if all.is_empty() {
        0.0
    } else {
        pairwise_sum(&all) / all.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy_with(entries: &[((u32, u32), [f64; 3])]) -> ToySoftmaxPolicy {
        let mut p = ToySoftmaxPolicy::new(3);
        for (key, logits) in entries {
            p.set_logits(key.0, key.1, logits.to_vec()).unwrap();
        }
        p
    }

    #[test]
    fn log_softmax_normalizes() {
        let p = policy_with(&[((0, 0), [0.1, -0.4, 0.7])]);
        let probs = p.probs(0, 0);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.log_prob(0, 0, 2) > p.log_prob(0, 0, 1));
    }

    #[test]
    fn sft_gradient_matches_finite_differences() {
        let p = policy_with(&[
            ((0, 0), [0.3, -0.2, 0.5]),
            ((0, 1), [-0.7, 0.4, 0.1]),
            ((1, 0), [0.0, 0.9, -0.3]),
        ]);
        let cases = vec![
            SftCase {
                context: 0,
                tokens: vec![2, 0],
            },
            SftCase {
                context: 1,
                tokens: vec![1],
            },
        ];
        let analytic = sft_analytic_gradient(&p, &cases);
        let fd = finite_difference_gradient(&p, 1e-5, |q| sft_loss_for(q, &cases).unwrap());
        assert!(max_relative_error(&analytic, &fd) < 1e-6);
        assert!(gradient_scale(&analytic) > 1e-3);
    }

    fn small_setup(old_shift: f64) -> (ToySoftmaxPolicy, ToyBatch) {
        let cur = policy_with(&[((0, 0), [0.2, -0.1, 0.4]), ((0, 1), [-0.3, 0.6, 0.0])]);
        let old = policy_with(&[
            ((0, 0), [0.2 + old_shift, -0.1, 0.4]),
            ((0, 1), [-0.3, 0.6 + old_shift, 0.0]),
        ]);
        let reference = policy_with(&[((0, 0), [0.0, 0.0, 0.0]), ((0, 1), [0.1, 0.1, -0.2])]);
        let setup = ToyBatch {
            groups: vec![ToyGroup {
                context: 0,
                sequences: vec![vec![0, 1], vec![2, 2]],
                rewards: vec![1.0, 0.0],
            }],
            old,
            reference,
            beta: 0.04,
            schedule: ClipSchedule::new(0.2, 0.4, 0.2, 100).unwrap(),
            step: 25,
        };
        (cur, setup)
    }

    #[test]
    fn grpo_gradient_matches_finite_differences() {
        let (cur, setup) = small_setup(0.05);
        assert!(min_clip_boundary_distance(&cur, &setup).unwrap() > 1e-3);
        let analytic = grpo_analytic_gradient(&cur, &setup).unwrap();
        let fd = finite_difference_gradient(&cur, 1e-5, |q| grpo_loss_for(q, &setup).unwrap());
        assert!(max_relative_error(&analytic, &fd) < 1e-6);
        assert!(gradient_scale(&analytic) > 1e-3);
    }

    #[test]
    fn fully_clipped_batch_has_exactly_zero_gradient() {
        // One token per sequence; the winner's ratio sits far above the
        // band, the loser's far below, and beta is 0, so the loss is
        // locally constant.
        let cur = policy_with(&[((0, 0), [2.0, -2.0, 0.0])]);
        let old = policy_with(&[((0, 0), [-2.0, 2.0, 0.0])]);
        let reference = cur.clone();
        let setup = ToyBatch {
            groups: vec![ToyGroup {
                context: 0,
                sequences: vec![vec![0], vec![1]],
                rewards: vec![1.0, 0.0],
            }],
            old,
            reference,
            beta: 0.0,
            schedule: ClipSchedule::new(0.2, 0.2, 0.2, 10).unwrap(),
            step: 0,
        };
        let analytic = grpo_analytic_gradient(&cur, &setup).unwrap();
        assert!(analytic.values().flatten().all(|v| *v == 0.0));
        let fd = finite_difference_gradient(&cur, 1e-5, |q| grpo_loss_for(q, &setup).unwrap());
        assert!(fd.values().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_ratio_batch_reduces_to_token_weighted_advantages() {
        // cur == old makes every ratio exactly 1, and beta = 0 removes the
        // KL term, so J_g = (T_1 * A_1 + T_2 * A_2) / (T_1 + T_2).
        let cur = policy_with(&[
            ((0, 0), [0.3, -0.4, 0.1]),
            ((0, 1), [0.2, 0.2, -0.5]),
            ((0, 2), [-0.1, 0.0, 0.6]),
        ]);
        let setup = ToyBatch {
            groups: vec![ToyGroup {
                context: 0,
                sequences: vec![vec![0, 1], vec![2, 0, 1]],
                rewards: vec![1.0, 0.0],
            }],
            old: cur.clone(),
            reference: cur.clone(),
            beta: 0.0,
            schedule: ClipSchedule::new(0.2, 0.4, 0.2, 100).unwrap(),
            step: 0,
        };
        let loss = grpo_loss_for(&cur, &setup).unwrap();
        // advantages are exactly [1, -1]; J = (2 * 1 + 3 * -1) / 5.
        assert_eq!(loss, 0.2);
    }
}
