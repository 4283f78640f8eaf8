//! Randomized invariant checks: parser round-trips, similarity symmetry
//! and scale invariance, advantage normalization, clip-schedule shape,
//! KL non-negativity, geometric reward bounds, the episodic window
//! contract, and minimal-prefix relabeling, each verified against a
//! straightforward in-test reconstruction.

use proptest::prelude::*;

use mnemo::embed::{cosine_similarity, EmbeddingVector, HashingEmbedder};
use mnemo::hindsight::{relabel_trajectory, SubGoalVerifier};
use mnemo::memory::EpisodicStore;
use mnemo::optim::{
    clipped_ratio, group_advantages, kl_per_token, sft_loss, ClipSchedule,
};
use mnemo::parser::{parse_agent_output, serialize_agent_output, ParsedAgentOutput};
use mnemo::reward::{bbox_reward, iou, math_verify, point_reward};
use mnemo::types::{
    Action, ActionKind, BoundingBox, Instruction, Observation, Point, Trajectory, Transition,
};

/// Coordinates quantized to six decimals, the parser/serializer grid.
fn coord6() -> impl Strategy<Value = f64> {
    (0..=1_000_000u32).prop_map(|n| f64::from(n) / 1e6)
}

fn point6() -> impl Strategy<Value = Point> {
    (coord6(), coord6()).prop_map(|(x, y)| Point::new(x, y).unwrap())
}

fn box6() -> impl Strategy<Value = BoundingBox> {
    (coord6(), coord6(), coord6(), coord6()).prop_map(|(a, b, c, d)| {
        let (x0, x1) = if a <= c { (a, c) } else { (c, a) };
        let (y0, y1) = if b <= d { (b, d) } else { (d, b) };
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    })
}

/// Tag-block bodies: no angle brackets, already trimmed.
fn block_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.!?'-]{0,40}".prop_map(|s| s.trim().to_owned())
}

/// Action values exercise quote and backslash escaping but avoid `<`,
/// which would terminate the surrounding tag block early.
fn value_text() -> impl Strategy<Value = String> {
    r#"[a-zA-Z0-9 _.,!?'"\\-]{1,30}"#
}

fn valid_action() -> impl Strategy<Value = Action> {
    prop_oneof![
        point6().prop_map(Action::click),
        point6().prop_map(|p| Action::new(ActionKind::LongPress, None, Some(p), None).unwrap()),
        (box6(), value_text())
            .prop_map(|(r, v)| Action::new(ActionKind::Scroll, Some(v), None, Some(r)).unwrap()),
        point6().prop_map(|p| Action::new(ActionKind::Scroll, None, Some(p), None).unwrap()),
        value_text().prop_map(|v| Action::new(ActionKind::TypeText, Some(v), None, None).unwrap()),
        value_text().prop_map(|v| Action::new(ActionKind::OpenApp, Some(v), None, None).unwrap()),
        value_text().prop_map(|v| Action::new(ActionKind::Complete, Some(v), None, None).unwrap()),
        Just(Action::bare(ActionKind::Complete)),
        Just(Action::bare(ActionKind::Wait)),
        Just(Action::bare(ActionKind::NavigateHome)),
        Just(Action::bare(ActionKind::NavigateBack)),
        Just(Action::bare(ActionKind::Impossible)),
    ]
}

/// Two vectors of one shared dimension, both clearly nonzero.
fn vector_pair() -> impl Strategy<Value = (EmbeddingVector, EmbeddingVector)> {
    (1usize..12)
        .prop_flat_map(|dim| {
            (
                proptest::collection::vec(-100.0f64..100.0, dim),
                proptest::collection::vec(-100.0f64..100.0, dim),
            )
        })
        .prop_filter_map("needs clearly nonzero norms", |(a, b)| {
            let a = EmbeddingVector::new(a).ok()?;
            let b = EmbeddingVector::new(b).ok()?;
            (a.norm() > 1e-3 && b.norm() > 1e-3).then_some((a, b))
        })
}

/// A linear screen chain s0 -> s1 -> ... with one click per step.
fn chain(n: usize) -> Trajectory {
    let transitions = (0..n)
        .map(|i| Transition {
            pre: Observation::bare(&format!("s{i}")),
            action: Action::click(Point::new((i as f64 + 1.0) / (n as f64 + 1.0), 0.5).unwrap()),
            post: Observation::bare(&format!("s{}", i + 1)),
            step_index: (i + 1) as u32,
        })
        .collect();
    Trajectory::new("chain", Instruction::new("walk the chain").unwrap(), transitions, false)
        .unwrap()
}

/// Declares goal `i` achieved by any prefix of at least `thresholds[i]`
/// steps; a zero threshold means the goal is never achieved.
struct ThresholdVerifier {
    thresholds: Vec<usize>,
}

impl SubGoalVerifier for ThresholdVerifier {
    fn candidate_goals(&self, _t: &Trajectory) -> Vec<Instruction> {
        (0..self.thresholds.len())
            .map(|i| Instruction::new(&format!("sub-goal {i}")).unwrap())
            .collect()
    }

    fn verify(&self, prefix: &[Transition], goal: &Instruction) -> bool {
        let i: usize = goal.text().rsplit(' ').next().unwrap().parse().unwrap();
        self.thresholds[i] > 0 && prefix.len() >= self.thresholds[i]
    }
}

proptest! {
    #[test]
    fn parser_round_trips_and_canonical_form_is_a_fixed_point(
        progress in block_text(),
        rationale in block_text(),
        history in block_text(),
        action in valid_action(),
    ) {
        let original = ParsedAgentOutput {
            progress_evaluation: progress,
            decision_rationale: rationale,
            history_summary: history,
            action,
        };
        let text = serialize_agent_output(&original);
        let back = parse_agent_output(&text).unwrap();
        prop_assert_eq!(&back, &original);
        prop_assert_eq!(serialize_agent_output(&back), text);
    }

    #[test]
    fn cosine_is_symmetric_bounded_and_scale_invariant(
        (a, b) in vector_pair(),
        c in prop_oneof![0.001f64..1000.0, Just(1.0)],
    ) {
        let s = cosine_similarity(&a, &b).unwrap();
        prop_assert_eq!(cosine_similarity(&b, &a).unwrap(), s);
        prop_assert!(s.abs() <= 1.0 + 1e-12);
        let scaled = cosine_similarity(&a.scaled(c), &b).unwrap();
        prop_assert!((scaled - s).abs() < 1e-9, "{scaled} vs {s} at scale {c}");
        prop_assert_eq!(cosine_similarity(&a.scaled(-1.0), &b).unwrap(), -s);
        let zero = EmbeddingVector::zeros(a.dim());
        prop_assert_eq!(cosine_similarity(&a, &zero).unwrap(), 0.0);
    }

    #[test]
    fn hashed_text_embeddings_are_unit_length(text in ".{1,60}", dim in 1usize..512) {
        let e = HashingEmbedder::new(dim).unwrap();
        let v = e.embed_text(&text).unwrap();
        prop_assert_eq!(v.dim(), dim);
        prop_assert!((v.norm() - 1.0).abs() < 1e-9);
        // Same text, same vector: the embedder is a pure function.
        prop_assert_eq!(e.embed_text(&text).unwrap(), v);
    }

    #[test]
    fn kl_estimate_is_non_negative_and_zero_on_agreement(
        cur in -30.0f64..0.0,
        reference in -30.0f64..0.0,
    ) {
        prop_assert!(kl_per_token(cur, reference) >= 0.0);
        prop_assert_eq!(kl_per_token(cur, cur), 0.0);
    }

    #[test]
    fn advantages_are_normalized_and_shift_invariant(
        rewards in proptest::collection::vec(-10.0f64..10.0, 2..12),
        shift in -5.0f64..5.0,
    ) {
        let adv = group_advantages(&rewards).unwrap();
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let spread = {
            let m = rewards.iter().sum::<f64>() / n;
            (rewards.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / n).sqrt()
        };
        if spread > 1e-3 {
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let adv2 = group_advantages(&shifted).unwrap();
            for (x, y) in adv.iter().zip(&adv2) {
                prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn constant_reward_groups_get_zero_advantages(
        value in -10.0f64..10.0,
        n in 1usize..10,
    ) {
        prop_assert_eq!(group_advantages(&vec![value; n]).unwrap(), vec![0.0; n]);
    }

    #[test]
    fn clip_schedule_decays_monotonically_between_its_endpoints(
        eps_low in 0.01f64..0.99,
        eps_end in 0.01f64..0.5,
        extra in 0.0f64..0.5,
        total in 1u64..200,
    ) {
        let eps_init = eps_end + extra;
        let s = ClipSchedule::new(eps_low, eps_init, eps_end, total).unwrap();
        prop_assert!((s.at(0).unwrap() - eps_init).abs() < 1e-12);
        prop_assert!((s.at(total).unwrap() - eps_end).abs() < 1e-12);
        let mut prev = s.at(0).unwrap();
        for k in 1..=total {
            let cur = s.at(k).unwrap();
            prop_assert!(cur <= prev + 1e-12);
            prop_assert!(cur >= eps_end - 1e-12 && cur <= eps_init + 1e-12);
            prev = cur;
        }
        prop_assert!(s.at(total + 1).is_err());
    }

    #[test]
    fn clipped_ratio_stays_in_band_and_passes_interior_points(
        rho in 0.0f64..5.0,
        eps_low in 0.01f64..0.9,
        eps_cur in 0.01f64..1.0,
    ) {
        let c = clipped_ratio(rho, eps_low, eps_cur);
        prop_assert!(c >= 1.0 - eps_low && c <= 1.0 + eps_cur);
        if rho >= 1.0 - eps_low && rho <= 1.0 + eps_cur {
            prop_assert_eq!(c, rho);
        }
    }

    #[test]
    fn sft_loss_is_the_mean_per_token_negative_log_likelihood(
        sequences in proptest::collection::vec(
            proptest::collection::vec(-10.0f64..=0.0, 1..6),
            1..5,
        ),
    ) {
        let loss = sft_loss(&sequences).unwrap();
        let direct = sequences
            .iter()
            .map(|s| -s.iter().sum::<f64>() / s.len() as f64)
            .sum::<f64>()
            / sequences.len() as f64;
        prop_assert!((loss - direct).abs() < 1e-12);
        prop_assert!(loss >= 0.0);
    }

    #[test]
    fn iou_is_symmetric_bounded_and_exact_on_self(a in box6(), b in box6()) {
        let v = iou(&a, &b);
        prop_assert_eq!(iou(&b, &a), v);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        let self_iou = iou(&a, &a);
        if a.area() > 0.0 {
            prop_assert_eq!(self_iou, 1.0);
        } else {
            prop_assert_eq!(self_iou, 0.0);
        }
        let r = bbox_reward(&a, &b, 0.7);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!(r >= v, "the ramp never scores below raw overlap");
    }

    #[test]
    fn point_reward_is_the_containment_indicator(p in point6(), target in box6()) {
        let expected = p.x() >= target.x_min()
            && p.x() <= target.x_max()
            && p.y() >= target.y_min()
            && p.y() <= target.y_max();
        prop_assert_eq!(point_reward(p, &target), if expected { 1.0 } else { 0.0 });
    }

    #[test]
    fn arithmetic_answers_match_up_to_tolerance(a in -1000i64..1000, b in -1000i64..1000) {
        let sum_expr = format!("{a} + {b}");
        let sum = format!("{}", a + b);
        let product_expr = format!("({a}) * ({b})");
        let product = format!("{}", a * b);
        prop_assert!(math_verify(&sum_expr, &sum, 1e-9));
        prop_assert!(math_verify(&product_expr, &product, 1e-9));
        if a != b {
            prop_assert!(!math_verify(&a.to_string(), &b.to_string(), 1e-9));
        }
    }

    #[test]
    fn episodic_window_matches_its_definition(
        n in 0usize..40,
        t in 0u32..50,
        horizon in 0u32..10,
    ) {
        let mut store = EpisodicStore::new();
        for i in 0..n {
            store
                .append(Transition {
                    pre: Observation::bare(&format!("s{i}")),
                    action: Action::bare(ActionKind::Wait),
                    post: Observation::bare(&format!("s{}", i + 1)),
                    step_index: (i + 1) as u32,
                })
                .unwrap();
        }
        let window = store.window(t, horizon);
        let expected: Vec<u32> = (1..=n as u32)
            .filter(|i| *i >= t.saturating_sub(horizon).max(1) && *i < t)
            .collect();
        let got: Vec<u32> = window.iter().map(|w| w.step_index).collect();
        prop_assert_eq!(got, expected);
        prop_assert!(window.len() <= horizon as usize);
    }

    #[test]
    fn relabeling_finds_each_minimal_prefix_in_order(
        n in 1usize..8,
        raw_thresholds in proptest::collection::vec(0usize..10, 0..5),
    ) {
        let trajectory = chain(n);
        let verifier = ThresholdVerifier {
            thresholds: raw_thresholds.clone(),
        };
        let samples = relabel_trajectory(&trajectory, &verifier).unwrap();

        let mut expected: Vec<(usize, usize)> = raw_thresholds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k >= 1 && **k <= n)
            .map(|(i, k)| (*k, i))
            .collect();
        expected.sort_unstable();

        prop_assert_eq!(samples.len(), expected.len());
        for (sample, (k, i)) in samples.iter().zip(&expected) {
            prop_assert_eq!(sample.provenance.prefix_len, *k);
            prop_assert_eq!(sample.trajectory.goal.text(), format!("sub-goal {i}"));
            prop_assert!(sample.trajectory.success);
            prop_assert_eq!(sample.trajectory.len(), *k);
            prop_assert_eq!(sample.provenance.origin_id.as_str(), "chain");
        }
    }
}
