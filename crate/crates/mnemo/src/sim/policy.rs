//! Scripted policies for exercising the environment loop.
//!
//! Policies speak the tagged text protocol, not structured actions, so
//! every episode exercises the parser end to end. Instances hold
//! per-episode state (the oracle's cursor); construct a fresh policy for
//! each episode.

use crate::error::Result;
use crate::memory::RetrievedContext;
use crate::parser::{serialize_agent_output, ParsedAgentOutput};
use crate::sim::{EnvSpec, OracleStep};
use crate::types::{Action, ActionKind, Instruction, Observation};

/// Produces one raw model turn per step.
pub trait Policy {
    fn act(
        &mut self,
        observation: &Observation,
        goal: &Instruction,
        context: &RetrievedContext,
    ) -> String;
}

fn wrap(step_no: usize, rationale: String, action: Action) -> String {
    let history = if step_no == 0 {
        "No steps taken yet.".to_owned()
    } else {
        format!("{step_no} scripted steps done so far.")
    };
    serialize_agent_output(&ParsedAgentOutput {
        progress_evaluation: format!("Executing scripted step {}.", step_no + 1),
        decision_rationale: rationale,
        history_summary: history,
        action,
    })
}

/// Replays a task's reference solution, resolving widget ids against the
/// current observation so it tolerates position jitter. Falls back to
/// waiting when the script is exhausted or the expected widget is absent.
pub struct OraclePolicy {
    steps: Vec<OracleStep>,
    cursor: usize,
}

impl OraclePolicy {
    pub fn for_task(spec: &EnvSpec, task_name: &str) -> Result<Self> {
        Ok(Self {
            steps: spec.task(task_name)?.oracle.clone(),
            cursor: 0,
        })
    }

    fn resolve(&self, observation: &Observation) -> Option<Action> {
        let step = self.steps.get(self.cursor)?;
        match step.kind {
            ActionKind::Click | ActionKind::LongPress => {
                let widget = observation.widget_by_id(step.widget.as_deref()?)?;
                let center = widget.bounds.center();
                if step.kind == ActionKind::Click {
                    Some(Action::click(center))
                } else {
                    Some(Action::long_press(center))
                }
            }
            ActionKind::Scroll => {
                let widget = observation.widget_by_id(step.widget.as_deref()?)?;
                Some(Action::scroll(widget.bounds, step.value.as_deref()))
            }
            ActionKind::TypeText => Some(Action::type_text(step.value.as_deref()?)),
            ActionKind::OpenApp => Some(Action::open_app(step.value.as_deref()?)),
            kind => Some(Action::bare(kind)),
        }
    }
}

impl Policy for OraclePolicy {
    fn act(
        &mut self,
        observation: &Observation,
        _goal: &Instruction,
        _context: &RetrievedContext,
    ) -> String {
        match self.resolve(observation) {
            Some(action) => {
                let rationale = format!("The plan prescribes a {} action next.", action.kind);
                let text = wrap(self.cursor, rationale, action);
                self.cursor += 1;
                text
            }
            None => wrap(
                self.cursor,
                "The expected control is not on this screen, so wait.".to_owned(),
                Action::bare(ActionKind::Wait),
            ),
        }
    }
}

/// Clicks one of two doors depending on whether the retrieved context
/// mentions a marker phrase. With `use_context` off it ignores memory
/// entirely, which pins down how much retrieval is worth on gated tasks.
pub struct ContextGatedPolicy {
    marker: String,
    primed_widget: String,
    fallback_widget: String,
    use_context: bool,
    turn: usize,
}

impl ContextGatedPolicy {
    pub fn for_task(spec: &EnvSpec, task_name: &str, use_context: bool) -> Result<Self> {
        let gated = spec.task(task_name)?.gated.clone().ok_or_else(|| {
            crate::error::Error::InvalidConfig(format!("task `{task_name}` has no gate definition"))
        })?;
        Ok(Self {
            marker: gated.marker,
            primed_widget: gated.primed_widget,
            fallback_widget: gated.fallback_widget,
            use_context,
            turn: 0,
        })
    }
}

impl Policy for ContextGatedPolicy {
    fn act(
        &mut self,
        observation: &Observation,
        _goal: &Instruction,
        context: &RetrievedContext,
    ) -> String {
        let primed = self.use_context && context.render().contains(&self.marker);
        let target = if primed {
            &self.primed_widget
        } else {
            &self.fallback_widget
        };
        let (rationale, action) = match observation.widget_by_id(target) {
            Some(w) => (
                if primed {
                    "Memory recalls which option worked before.".to_owned()
                } else {
                    "No usable recollection, taking the default option.".to_owned()
                },
                Action::click(w.bounds.center()),
            ),
            None => (
                "The chosen control is not visible, so wait.".to_owned(),
                Action::bare(ActionKind::Wait),
            ),
        };
        let text = wrap(self.turn, rationale, action);
        self.turn += 1;
        text
    }
}

/// Always emits the same unparseable text, for exercising failure caps.
pub struct MalformedPolicy {
    pub text: String,
}

impl Default for MalformedPolicy {
    fn default() -> Self {
        Self {
            text: "I think I should click something.".to_owned(),
        }
    }
}

impl Policy for MalformedPolicy {
    fn act(
        &mut self,
        _observation: &Observation,
        _goal: &Instruction,
        _context: &RetrievedContext,
    ) -> String {
        self.text.clone()
    }
}
