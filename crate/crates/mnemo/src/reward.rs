//! Hierarchical reward for structured agent turns.
//!
//! The total reward blends a format score with an accuracy score,
//! `r_total = w_format * r_format + w_acc * r_acc`, where the accuracy score
//! itself blends action-type correctness with parameter correctness,
//! `r_acc = w_type * r_type + w_param * r_param`. A turn that fails format
//! parsing scores zero on every component: the format gate dominates.
//!
//! Parameter scoring depends on the ground-truth kind: point actions score
//! 1 when the predicted point lands inside the target box, region actions
//! score through a thresholded IoU ramp, and text actions score through
//! exact match or arithmetic equivalence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parser::parse_agent_output;
use crate::types::{Action, ActionKind, BoundingBox, Instruction, Point};

pub const DEFAULT_MATH_TOL: f64 = 1e-6;
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Blend weights and the IoU threshold. The two weight pairs each sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub format: f64,
    pub accuracy: f64,
    pub action_type: f64,
    pub parameter: f64,
    pub iou_threshold: f64,
}

impl RewardWeights {
    pub fn new(
        format: f64,
        accuracy: f64,
        action_type: f64,
        parameter: f64,
        iou_threshold: f64,
    ) -> Result<Self> {
        let w = Self {
            format,
            accuracy,
            action_type,
            parameter,
            iou_threshold,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("format", self.format),
            ("accuracy", self.accuracy),
            ("action_type", self.action_type),
            ("parameter", self.parameter),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "reward weight {name}={v} outside [0, 1]"
                )));
            }
        }
        if (self.format + self.accuracy - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidConfig(
                "format and accuracy weights must sum to 1".into(),
            ));
        }
        if (self.action_type + self.parameter - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidConfig(
                "action_type and parameter weights must sum to 1".into(),
            ));
        }
        if !self.iou_threshold.is_finite()
            || self.iou_threshold <= 0.0
            || self.iou_threshold > 1.0
        {
            return Err(Error::InvalidConfig(format!(
                "iou_threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            format: 0.1,
            accuracy: 0.9,
            action_type: 0.5,
            parameter: 0.5,
            iou_threshold: 0.5,
        }
    }
}

/// The reference action for one step. Point and region kinds carry a target
/// box; text kinds carry a target answer; the rest carry neither.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_box: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_answer: Option<String>,
}

impl GroundTruth {
    pub fn for_box(kind: ActionKind, target_box: BoundingBox) -> Self {
        Self {
            kind,
            target_box: Some(target_box),
            target_answer: None,
        }
    }

    pub fn for_answer(kind: ActionKind, target_answer: &str) -> Self {
        Self {
            kind,
            target_box: None,
            target_answer: Some(target_answer.to_owned()),
        }
    }

    pub fn bare(kind: ActionKind) -> Self {
        Self {
            kind,
            target_box: None,
            target_answer: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| {
            Err(Error::InconsistentGroundTruth(format!(
                "{msg} for kind `{}`",
                self.kind
            )))
        };
        match self.kind {
            ActionKind::Click | ActionKind::LongPress | ActionKind::Scroll => {
                if self.target_box.is_none() {
                    return fail("target_box required");
                }
                if self.target_answer.is_some() {
                    return fail("target_answer not allowed");
                }
            }
            ActionKind::TypeText | ActionKind::OpenApp => {
                if self.target_answer.is_none() {
                    return fail("target_answer required");
                }
                if self.target_box.is_some() {
                    return fail("target_box not allowed");
                }
            }
            _ => {
                if self.target_box.is_some() || self.target_answer.is_some() {
                    return fail("no target fields allowed");
                }
            }
        }
        Ok(())
    }
}

/// Per-component reward scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_type: f64,
    pub r_param: f64,
    pub r_acc: f64,
    pub r_total: f64,
}

impl RewardBreakdown {
    pub fn zero() -> Self {
        Self {
            r_format: 0.0,
            r_type: 0.0,
            r_param: 0.0,
            r_acc: 0.0,
            r_total: 0.0,
        }
    }
}

/// 1 when the point lies inside the box (edges inclusive), else 0.
pub fn point_reward(p: Point, target: &BoundingBox) -> f64 {
    if target.contains(p) {
        1.0
    } else {
        0.0
    }
}

/// Intersection-over-union of two boxes. Zero-area unions (two identical
/// degenerate boxes) score 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let ih = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU ramp: full credit at or above the threshold, proportional credit
/// below it.
pub fn bbox_reward(pred: &BoundingBox, target: &BoundingBox, iou_threshold: f64) -> f64 {
    scaled_overlap(iou(pred, target), iou_threshold)
}

pub(crate) fn scaled_overlap(overlap: f64, threshold: f64) -> f64 {
    if overlap >= threshold {
        1.0
    } else {
        overlap / threshold
    }
}

/// True when the trimmed strings match exactly, or when both parse as
/// arithmetic expressions whose values differ by at most `tol`.
///
/// The expression grammar covers decimal literals, `+ - * /`, unary minus,
/// and parentheses. Division by zero fails the arithmetic branch.
pub fn math_verify(answer: &str, target: &str, tol: f64) -> bool {
    let (a, t) = (answer.trim(), target.trim());
    if a == t {
        return true;
    }
    match (eval_arithmetic(a), eval_arithmetic(t)) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

fn eval_arithmetic(text: &str) -> Option<f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut pos = 0;
    let v = parse_expr(&chars, &mut pos)?;
    skip_ws(&chars, &mut pos);
    if pos == chars.len() && v.is_finite() {
        Some(v)
    } else {
        None
    }
}

fn skip_ws(chars: &[char], pos: &mut usize) {
    while matches!(chars.get(*pos), Some(c) if c.is_whitespace()) {
        *pos += 1;
    }
}

fn parse_expr(chars: &[char], pos: &mut usize) -> Option<f64> {
    let mut acc = parse_term(chars, pos)?;
    loop {
        skip_ws(chars, pos);
        match chars.get(*pos) {
            Some('+') => {
                *pos += 1;
                acc += parse_term(chars, pos)?;
            }
            Some('-') => {
                *pos += 1;
                acc -= parse_term(chars, pos)?;
            }
            _ => return Some(acc),
        }
    }
}

fn parse_term(chars: &[char], pos: &mut usize) -> Option<f64> {
    let mut acc = parse_factor(chars, pos)?;
    loop {
        skip_ws(chars, pos);
        match chars.get(*pos) {
            Some('*') => {
                *pos += 1;
                acc *= parse_factor(chars, pos)?;
            }
            Some('/') => {
                *pos += 1;
                let d = parse_factor(chars, pos)?;
                if d == 0.0 {
                    return None;
                }
                acc /= d;
            }
            _ => return Some(acc),
        }
    }
}

fn parse_factor(chars: &[char], pos: &mut usize) -> Option<f64> {
    skip_ws(chars, pos);
    match chars.get(*pos) {
        Some('-') => {
            *pos += 1;
            Some(-parse_factor(chars, pos)?)
        }
        Some('(') => {
            *pos += 1;
            let v = parse_expr(chars, pos)?;
            skip_ws(chars, pos);
            if chars.get(*pos) == Some(&')') {
                *pos += 1;
                Some(v)
            } else {
                None
            }
        }
        Some(c) if c.is_ascii_digit() || *c == '.' => {
            let start = *pos;
            while matches!(chars.get(*pos), Some(c) if c.is_ascii_digit() || *c == '.') {
                *pos += 1;
            }
            let text: String = chars[start..*pos].iter().collect();
            text.parse::<f64>().ok()
        }
        _ => None,
    }
}

/// Scores one model turn against the ground truth using the default
/// arithmetic tolerance.
pub fn evaluate_reward(
    model_text: &str,
    gt: &GroundTruth,
    weights: &RewardWeights,
) -> Result<RewardBreakdown> {
    evaluate_reward_with_tol(model_text, gt, weights, DEFAULT_MATH_TOL)
}

pub fn evaluate_reward_with_tol(
    model_text: &str,
    gt: &GroundTruth,
    weights: &RewardWeights,
    math_tol: f64,
) -> Result<RewardBreakdown> {
    weights.validate()?;
    gt.validate()?;
    let parsed = match parse_agent_output(model_text) {
        Ok(p) => p,
        Err(_) => return Ok(RewardBreakdown::zero()),
    };
    let action = &parsed.action;
    let r_type = if action.kind == gt.kind { 1.0 } else { 0.0 };
    let r_param = parameter_reward(action, gt, weights.iou_threshold, math_tol, r_type);
    let r_acc = weights.action_type * r_type + weights.parameter * r_param;
    let r_total = weights.format + weights.accuracy * r_acc;
    Ok(RewardBreakdown {
        r_format: 1.0,
        r_type,
        r_param,
        r_acc,
        r_total,
    })
}

fn parameter_reward(
    action: &Action,
    gt: &GroundTruth,
    iou_threshold: f64,
    math_tol: f64,
    r_type: f64,
) -> f64 {
    match gt.kind {
        ActionKind::Click | ActionKind::LongPress => {
            let target = gt.target_box.as_ref().expect("validated");
            match action.position {
                Some(p) => point_reward(p, target),
                None => 0.0,
            }
        }
        ActionKind::Scroll => {
            let target = gt.target_box.as_ref().expect("validated");
            let pred = action
                .region
                .or_else(|| action.position.map(BoundingBox::degenerate));
            match pred {
                Some(b) => bbox_reward(&b, target, iou_threshold),
                None => 0.0,
            }
        }
        ActionKind::TypeText | ActionKind::OpenApp => {
            let target = gt.target_answer.as_deref().expect("validated");
            match action.value.as_deref() {
                Some(v) if math_verify(v, target, math_tol) => 1.0,
                _ => 0.0,
            }
        }
        _ => r_type,
    }
}

/// Terminal episode reward used by training pipelines: 1 for a successful
/// episode on the given goal, else 0. Exposed mostly for symmetry with the
/// step-level score.
pub fn episode_reward(success: bool, _goal: &Instruction) -> f64 {
    if success {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(answer: &str) -> String {
        format!(
            "<Progress_Evaluation>\np\n</Progress_Evaluation>\n<Decision_Rationale>\nd\n</Decision_Rationale>\n<History_Summary>\nh\n</History_Summary>\n<Answer>\n{answer}\n</Answer>"
        )
    }

    fn bbox(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(RewardWeights::default().validate().is_ok());
        assert!(RewardWeights::new(0.2, 0.9, 0.5, 0.5, 0.5).is_err());
        assert!(RewardWeights::new(0.1, 0.9, 0.6, 0.5, 0.5).is_err());
        assert!(RewardWeights::new(0.1, 0.9, 0.5, 0.5, 0.0).is_err());
        assert!(RewardWeights::new(0.1, 0.9, 0.5, 0.5, 1.5).is_err());
    }

    #[test]
    fn point_reward_is_inclusive_on_edges() {
        let b = bbox(0.2, 0.6, 0.4, 0.72);
        assert_eq!(point_reward(Point::new(0.3, 0.66).unwrap(), &b), 1.0);
        assert_eq!(point_reward(Point::new(0.4, 0.72).unwrap(), &b), 1.0);
        assert_eq!(point_reward(Point::new(0.5, 0.66).unwrap(), &b), 0.0);
    }

    #[test]
    fn iou_of_shifted_equal_boxes() {
        let a = bbox(0.0, 0.0, 0.75, 1.0);
        let b = bbox(0.25, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &b), 0.5);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&bbox(0.0, 0.0, 0.1, 0.1), &bbox(0.5, 0.5, 0.6, 0.6)), 0.0);
    }

    #[test]
    fn identical_degenerate_boxes_have_zero_iou() {
        let d = BoundingBox::degenerate(Point::new(0.5, 0.5).unwrap());
        assert_eq!(iou(&d, &d), 0.0);
    }

    #[test]
    fn bbox_reward_ramps_below_threshold() {
        let a = bbox(0.0, 0.0, 0.75, 1.0);
        let b = bbox(0.25, 0.0, 1.0, 1.0);
        assert_eq!(bbox_reward(&a, &b, 0.5), 1.0);
        assert_eq!(bbox_reward(&a, &b, 0.8), 0.625);
        assert_eq!(bbox_reward(&a, &a, 0.5), 1.0);
    }

    #[test]
    fn math_verify_accepts_equivalent_expressions() {
        assert!(math_verify("3*(2+5)", "21", 1e-6));
        assert!(math_verify("21", "21", 1e-6));
        assert!(math_verify(" 21 ", "21", 1e-6));
        assert!(math_verify("-(2-5)", "3", 1e-6));
        assert!(math_verify("1/4", "0.25", 1e-6));
        assert!(!math_verify("1/3", "0.30", 1e-6));
        assert!(!math_verify("1/0", "5", 1e-6));
        assert!(!math_verify("battery saver", "power saving", 1e-6));
        assert!(math_verify("battery saver", "battery saver", 1e-6));
    }

    #[test]
    fn format_gate_zeroes_everything() {
        let gt = GroundTruth::for_box(ActionKind::Click, bbox(0.2, 0.6, 0.4, 0.72));
        let w = RewardWeights::default();
        let r = evaluate_reward("no tags here", &gt, &w).unwrap();
        assert_eq!(r, RewardBreakdown::zero());
        let r = evaluate_reward(&turn("{'action': 'click'}"), &gt, &w).unwrap();
        assert_eq!(r, RewardBreakdown::zero());
    }

    #[test]
    fn perfect_click_scores_exactly_one() {
        let gt = GroundTruth::for_box(ActionKind::Click, bbox(0.2, 0.6, 0.4, 0.72));
        let w = RewardWeights::default();
        let text = turn("{'action': 'click', 'value': 'Apply', 'position': [0.3, 0.66]}");
        let r = evaluate_reward(&text, &gt, &w).unwrap();
        assert_eq!(r.r_format, 1.0);
        assert_eq!(r.r_type, 1.0);
        assert_eq!(r.r_param, 1.0);
        assert_eq!(r.r_acc, 1.0);
        assert_eq!(r.r_total, 1.0);
    }

    #[test]
    fn right_kind_wrong_target_scores_055() {
        let gt = GroundTruth::for_box(ActionKind::Click, bbox(0.2, 0.6, 0.4, 0.72));
        let w = RewardWeights::default();
        let text = turn("{'action': 'click', 'value': '', 'position': [0.9, 0.1]}");
        let r = evaluate_reward(&text, &gt, &w).unwrap();
        assert_eq!(r.r_type, 1.0);
        assert_eq!(r.r_param, 0.0);
        assert!((r.r_acc - 0.5).abs() < 1e-15);
        assert!((r.r_total - 0.55).abs() < 1e-12);
    }

    #[test]
    fn wrong_kind_keeps_format_credit_only() {
        let gt = GroundTruth::for_box(ActionKind::Click, bbox(0.2, 0.6, 0.4, 0.72));
        let w = RewardWeights::default();
        let text = turn("{'action': 'navigate_back', 'value': '', 'position': []}");
        let r = evaluate_reward(&text, &gt, &w).unwrap();
        assert_eq!(r.r_format, 1.0);
        assert_eq!(r.r_type, 0.0);
        assert_eq!(r.r_param, 0.0);
        assert!((r.r_total - 0.1).abs() < 1e-15);
    }

    #[test]
    fn scroll_accepts_point_as_degenerate_region() {
        let gt = GroundTruth::for_box(ActionKind::Scroll, bbox(0.0, 0.2, 1.0, 0.9));
        let w = RewardWeights::default();
        let text = turn("{'action': 'scroll', 'value': 'down', 'position': [0.5, 0.5]}");
        let r = evaluate_reward(&text, &gt, &w).unwrap();
        assert_eq!(r.r_type, 1.0);
        assert_eq!(r.r_param, 0.0);
    }

    #[test]
    fn type_text_scores_through_answer_match() {
        let gt = GroundTruth::for_answer(ActionKind::TypeText, "21");
        let w = RewardWeights::default();
        let exact = turn("{'action': 'type_text', 'value': '3*(2+5)', 'position': []}");
        assert_eq!(evaluate_reward(&exact, &gt, &w).unwrap().r_total, 1.0);
        let wrong = turn("{'action': 'type_text', 'value': '20', 'position': []}");
        assert!((evaluate_reward(&wrong, &gt, &w).unwrap().r_total - 0.55).abs() < 1e-12);
    }

    #[test]
    fn parameterless_kinds_inherit_type_score() {
        let gt = GroundTruth::bare(ActionKind::NavigateBack);
        let w = RewardWeights::default();
        let hit = turn("{'action': 'navigate_back', 'value': '', 'position': []}");
        let r = evaluate_reward(&hit, &gt, &w).unwrap();
        assert_eq!(r.r_param, 1.0);
        assert_eq!(r.r_total, 1.0);
        let miss = turn("{'action': 'wait', 'value': '', 'position': []}");
        let r = evaluate_reward(&miss, &gt, &w).unwrap();
        assert_eq!(r.r_param, 0.0);
    }

    #[test]
    fn ground_truth_consistency_is_checked() {
        let w = RewardWeights::default();
        let bad = GroundTruth {
            kind: ActionKind::Click,
            target_box: None,
            target_answer: Some("x".into()),
        };
        assert!(matches!(
            evaluate_reward(&turn("{'action': 'wait'}"), &bad, &w),
            Err(Error::InconsistentGroundTruth(_))
        ));
        let bad = GroundTruth {
            kind: ActionKind::Complete,
            target_box: Some(bbox(0.0, 0.0, 0.1, 0.1)),
            target_answer: None,
        };
        assert!(bad.validate().is_err());
    }
}
