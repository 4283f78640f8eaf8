//! Deterministic scripted GUI environment.
//!
//! An environment is a declarative fixture: named screens with widget
//! trees, transition rules over them, and tasks with a start screen, a
//! step budget, a terminal predicate, and optional verified sub-goals. The
//! runtime executes validated actions by hit-testing widget bounds,
//! following the first matching rule, and scoring 1 exactly when the
//! terminal predicate first holds. Optional bounded position jitter
//! (seeded, per episode) perturbs widget layouts without changing any
//! semantics, so grounding must tolerate layout variation.
//!
//! [`ScriptedEnvironment::run_episode`] closes the full loop: retrieve
//! context from memory, ask the policy for raw text, parse it, step the
//! environment, append to episodic memory, and on success store the
//! trajectory as new experience.

pub mod policy;

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hindsight::SubGoalVerifier;
use crate::memory::{MemoryRepository, RetrievalStrategy, RetrievedContext, Summarizer};
use crate::parser::parse_agent_output;
use crate::types::{
    Action, ActionKind, BoundingBox, Instruction, Observation, Trajectory, Transition, Widget,
};

pub const SCHEMA_VERSION: u32 = 1;

/// A widget template within a screen definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidgetSpec {
    pub id: String,
    pub role: String,
    pub label: String,
    pub bounds: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenSpec {
    pub id: String,
    pub widgets: Vec<WidgetSpec>,
}

/// One transition rule: when an action of `kind` lands on `widget` (or
/// carries `value`) while `from` is showing, the screen changes to `to`.
/// Constraints that are `None` are not checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRule {
    pub from: String,
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widget: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub to: String,
}

/// A conjunctive condition over the current screen and the log of typed
/// text. At least one field is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typed: Option<String>,
}

impl PredicateSpec {
    pub fn eval(&self, screen_id: &str, typed: &[String]) -> bool {
        if let Some(s) = &self.screen {
            if s != screen_id {
                return false;
            }
        }
        if let Some(v) = &self.typed {
            if !typed.iter().any(|t| t == v) {
                return false;
            }
        }
        self.screen.is_some() || self.typed.is_some()
    }
}

/// A named sub-goal with its own instruction text and predicate, used for
/// relabeling failed episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubGoalSpec {
    pub name: String,
    pub goal: String,
    pub predicate: PredicateSpec,
}

/// One step of a task's reference solution, resolved against the current
/// screen at execution time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleStep {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widget: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

/// Configuration for a context-gated policy on this task: click
/// `primed_widget` when the rendered context contains `marker`, else
/// `fallback_widget`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatedSpec {
    pub marker: String,
    pub primed_widget: String,
    pub fallback_widget: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub instruction: String,
    pub start_screen: String,
    pub budget: u32,
    pub terminal: PredicateSpec,
    #[serde(default)]
    pub subgoals: Vec<SubGoalSpec>,
    #[serde(default)]
    pub oracle: Vec<OracleStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gated: Option<GatedSpec>,
}

fn default_gamma() -> f64 {
    0.99
}

/// Seeded widget-position jitter. Disabled by default; when enabled, each
/// episode shifts every widget box by an offset drawn per widget, clamped
/// so boxes stay inside the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterSpec {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "JitterSpec::default_magnitude")]
    pub magnitude: f64,
}

impl JitterSpec {
    fn default_magnitude() -> f64 {
        0.02
    }
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            seed: 0,
            magnitude: Self::default_magnitude(),
        }
    }
}

/// A complete environment definition as stored in a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub schema_version: u32,
    pub name: String,
    pub screens: Vec<ScreenSpec>,
    pub transitions: Vec<TransitionRule>,
    pub tasks: Vec<TaskSpec>,
    /// Reserved discount factor for evaluation tooling; episode rewards
    /// here are sparse-terminal and undiscounted.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub jitter: JitterSpec,
}

impl EnvSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: EnvSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                what: "environment schema",
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.name.trim().is_empty() {
            return bad("environment name is empty".into());
        }
        if self.screens.is_empty() {
            return bad("environment has no screens".into());
        }
        let mut screen_ids = std::collections::HashSet::new();
        let mut widget_ids = std::collections::HashSet::new();
        for s in &self.screens {
            if !screen_ids.insert(s.id.as_str()) {
                return bad(format!("duplicate screen id `{}`", s.id));
            }
            let mut per_screen = std::collections::HashSet::new();
            for w in &s.widgets {
                if !per_screen.insert(w.id.as_str()) {
                    return Err(Error::DuplicateWidgetId(w.id.clone()));
                }
                widget_ids.insert(w.id.as_str());
            }
        }
        let widget_on = |screen: &str, widget: &str| {
            self.screens
                .iter()
                .find(|s| s.id == screen)
                .is_some_and(|s| s.widgets.iter().any(|w| w.id == widget))
        };
        for t in &self.transitions {
            for s in [&t.from, &t.to] {
                if !screen_ids.contains(s.as_str()) {
                    return bad(format!("transition references unknown screen `{s}`"));
                }
            }
            if let Some(w) = &t.widget {
                if !widget_on(&t.from, w) {
                    return bad(format!(
                        "transition from `{}` references widget `{w}` not on that screen",
                        t.from
                    ));
                }
            }
        }
        let check_predicate = |p: &PredicateSpec, what: &str| -> Result<()> {
            if p.screen.is_none() && p.typed.is_none() {
                return Err(Error::InvalidConfig(format!("{what} predicate is empty")));
            }
            if let Some(s) = &p.screen {
                if !screen_ids.contains(s.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "{what} predicate references unknown screen `{s}`"
                    )));
                }
            }
            Ok(())
        };
        for task in &self.tasks {
            if !screen_ids.contains(task.start_screen.as_str()) {
                return bad(format!(
                    "task `{}` starts on unknown screen `{}`",
                    task.name, task.start_screen
                ));
            }
            if task.budget == 0 {
                return bad(format!("task `{}` has zero budget", task.name));
            }
            if task.instruction.trim().is_empty() {
                return bad(format!("task `{}` has an empty instruction", task.name));
            }
            check_predicate(&task.terminal, &format!("task `{}` terminal", task.name))?;
            for sg in &task.subgoals {
                if sg.goal.trim().is_empty() {
                    return bad(format!("sub-goal `{}` has an empty goal", sg.name));
                }
                check_predicate(&sg.predicate, &format!("sub-goal `{}`", sg.name))?;
            }
            for (i, step) in task.oracle.iter().enumerate() {
                if let Some(w) = &step.widget {
                    if !widget_ids.contains(w.as_str()) {
                        return bad(format!(
                            "oracle step {i} of task `{}` references unknown widget `{w}`",
                            task.name
                        ));
                    }
                }
                if matches!(step.kind, ActionKind::TypeText | ActionKind::OpenApp)
                    && step.value.is_none()
                {
                    return bad(format!(
                        "oracle step {i} of task `{}` needs a value",
                        task.name
                    ));
                }
            }
            if let Some(g) = &task.gated {
                for w in [&g.primed_widget, &g.fallback_widget] {
                    if !widget_ids.contains(w.as_str()) {
                        return bad(format!(
                            "task `{}` gate references unknown widget `{w}`",
                            task.name
                        ));
                    }
                }
            }
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 || self.gamma > 1.0 {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !self.jitter.magnitude.is_finite()
            || self.jitter.magnitude < 0.0
            || self.jitter.magnitude > 0.05
        {
            return bad(format!(
                "jitter magnitude {} outside [0, 0.05]",
                self.jitter.magnitude
            ));
        }
        Ok(())
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTask(name.to_owned()))
    }
}

/// The outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub transition: Transition,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Per-episode loop parameters: retrieval shape plus the cap on
/// consecutive-or-not unparseable policy turns before the episode is
/// abandoned.
#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub horizon: u32,
    pub top_k: usize,
    pub lambda: f64,
    pub strategy: RetrievalStrategy,
    pub failure_cap: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            top_k: 3,
            lambda: 0.5,
            strategy: RetrievalStrategy::TopK,
            failure_cap: 5,
        }
    }
}

/// Everything produced by one episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    pub success: bool,
    pub steps_used: u32,
    /// One entry per policy turn: the sparse environment reward for
    /// executed actions, 0 for turns whose output failed to parse.
    pub rewards: Vec<f64>,
    pub parse_failures: u32,
    /// Entry id when the successful trajectory was novel enough to enter
    /// experiential memory.
    pub new_experience: Option<u64>,
}

struct EpisodeState {
    task_index: usize,
    screen: String,
    typed: Vec<String>,
    steps: u32,
    done: bool,
    success: bool,
    transitions: Vec<Transition>,
    jittered: BTreeMap<String, Vec<Widget>>,
}

/// Executable environment instance. Episode ids are sequential per
/// instance, so repeated runs over a fresh instance are reproducible.
pub struct ScriptedEnvironment {
    spec: EnvSpec,
    episode_seq: u32,
    state: Option<EpisodeState>,
}

impl ScriptedEnvironment {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            episode_seq: 0,
            state: None,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn episodes_started(&self) -> u32 {
        self.episode_seq
    }

    fn jittered_widgets(&self, episode: u32) -> BTreeMap<String, Vec<Widget>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.jitter.seed.wrapping_add(episode as u64));
        let mut out = BTreeMap::new();
        for screen in &self.spec.screens {
            let mut widgets = Vec::with_capacity(screen.widgets.len());
            for w in &screen.widgets {
                let bounds = if self.spec.jitter.enabled {
                    let m = self.spec.jitter.magnitude;
                    let dx: f64 = rng.random_range(-m..=m);
                    let dy: f64 = rng.random_range(-m..=m);
                    let dx = dx.clamp(-w.bounds.x_min(), 1.0 - w.bounds.x_max());
                    let dy = dy.clamp(-w.bounds.y_min(), 1.0 - w.bounds.y_max());
                    BoundingBox::new(
                        w.bounds.x_min() + dx,
                        w.bounds.y_min() + dy,
                        w.bounds.x_max() + dx,
                        w.bounds.y_max() + dy,
                    )
                    .expect("clamped shift stays in range")
                } else {
                    w.bounds
                };
                widgets.push(Widget {
                    widget_id: w.id.clone(),
                    role: w.role.clone(),
                    label: w.label.clone(),
                    bounds,
                });
            }
            out.insert(screen.id.clone(), widgets);
        }
        out
    }

    /// Starts an episode of the named task and returns the initial
    /// observation.
    pub fn reset(&mut self, task_name: &str) -> Result<Observation> {
        let task_index = self
            .spec
            .tasks
            .iter()
            .position(|t| t.name == task_name)
            .ok_or_else(|| Error::UnknownTask(task_name.to_owned()))?;
        self.episode_seq += 1;
        let start = self.spec.tasks[task_index].start_screen.clone();
        self.state = Some(EpisodeState {
            task_index,
            screen: start,
            typed: Vec::new(),
            steps: 0,
            done: false,
            success: false,
            transitions: Vec::new(),
            jittered: self.jittered_widgets(self.episode_seq),
        });
        self.observation()
    }

    /// The current screen as an observation. Requires an unfinished
    /// episode.
    pub fn observation(&self) -> Result<Observation> {
        let state = self.active()?;
        Ok(Observation {
            screen_id: state.screen.clone(),
            widgets: state.jittered[&state.screen].clone(),
            raw_image_ref: None,
        })
    }

    fn active(&self) -> Result<&EpisodeState> {
        match &self.state {
            Some(s) if !s.done => Ok(s),
            _ => Err(Error::EpisodeFinished),
        }
    }

    /// Executes one validated action. Unmatched actions are no-ops that
    /// still consume budget. The reward is 1 exactly when the terminal
    /// predicate first becomes true; budget exhaustion ends the episode
    /// with reward 0.
    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        self.active()?;
        action.validate()?;
        let pre = self.observation()?;
        let state = self.state.as_mut().expect("active");
        let task = &self.spec.tasks[state.task_index];

        if action.kind == ActionKind::TypeText {
            state.typed.push(action.value.clone().expect("validated"));
        }

        let target_point = match action.kind {
            ActionKind::Click | ActionKind::LongPress => action.position,
            ActionKind::Scroll => action
                .region
                .map(|r| r.center())
                .or(action.position),
            _ => None,
        };
        let hit_widget = target_point.and_then(|p| pre.widget_at(p)).map(|w| w.widget_id.clone());

        let next_screen = self
            .spec
            .transitions
            .iter()
            .find(|rule| {
                rule.from == state.screen
                    && rule.kind == action.kind
                    && rule
                        .widget
                        .as_ref()
                        .is_none_or(|w| hit_widget.as_deref() == Some(w.as_str()))
                    && rule
                        .value
                        .as_ref()
                        .is_none_or(|v| action.value.as_deref() == Some(v.as_str()))
            })
            .map(|rule| rule.to.clone());
        if let Some(next) = next_screen {
            state.screen = next;
        }

        state.steps += 1;
        let mut reward = 0.0;
        if task.terminal.eval(&state.screen, &state.typed) {
            state.done = true;
            state.success = true;
            reward = 1.0;
        } else if state.steps >= task.budget {
            state.done = true;
        }

        let post = Observation {
            screen_id: state.screen.clone(),
            widgets: state.jittered[&state.screen].clone(),
            raw_image_ref: None,
        };
        let transition = Transition {
            pre,
            action: action.clone(),
            post: post.clone(),
            step_index: state.steps,
        };
        state.transitions.push(transition.clone());
        Ok(StepOutcome {
            observation: post,
            transition,
            reward,
            done: state.done,
            success: state.success,
        })
    }

    /// Runs one full episode: reset, then per step retrieve context, query
    /// the policy, parse, act, and record. Unparseable policy turns count
    /// toward `failure_cap` without consuming budget. On success the
    /// trajectory is offered to experiential memory; an exact duplicate is
    /// silently skipped.
    pub fn run_episode(
        &mut self,
        task_name: &str,
        policy: &mut dyn policy::Policy,
        repo: &mut MemoryRepository,
        config: &RunConfig,
        summarizer: &dyn Summarizer,
    ) -> Result<EpisodeResult> {
        let task = self.spec.task(task_name)?;
        let goal = Instruction::new(&task.instruction)?;
        self.reset(task_name)?;
        repo.clear_episodic();

        let mut rewards = Vec::new();
        let mut parse_failures = 0u32;
        loop {
            let state = self.state.as_ref().expect("episode started");
            if state.done {
                break;
            }
            let t = state.steps + 1;
            let obs = self.observation()?;
            let context = RetrievedContext::assemble(
                repo.episodic_window(t, config.horizon),
                repo.retrieve_semantic(&goal, config.top_k)?,
                repo.retrieve_experiential(
                    &goal,
                    &obs,
                    config.top_k,
                    config.lambda,
                    config.strategy,
                )?,
            );
            let text = policy.act(&obs, &goal, &context);
            match parse_agent_output(&text) {
                Err(_) => {
                    rewards.push(0.0);
                    parse_failures += 1;
                    if parse_failures > config.failure_cap {
                        break;
                    }
                }
                Ok(parsed) => {
                    let outcome = self.step(&parsed.action)?;
                    rewards.push(outcome.reward);
                    repo.append_transition(outcome.transition)?;
                }
            }
        }

        let state = self.state.as_ref().expect("episode started");
        let trajectory_id = format!("{task_name}-ep{}", self.episode_seq);
        let trajectory = Trajectory::new(
            &trajectory_id,
            goal,
            state.transitions.clone(),
            state.success,
        )?;
        let mut new_experience = None;
        if state.success {
            match repo.add_experiential_entry(&trajectory, summarizer) {
                Ok(id) => new_experience = Some(id),
                Err(Error::DuplicateEntry(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(EpisodeResult {
            success: state.success,
            steps_used: state.steps,
            rewards,
            parse_failures,
            new_experience,
            trajectory,
        })
    }
}

/// Sub-goal verification backed by an environment's task definitions: a
/// prefix achieves a sub-goal when the sub-goal's predicate holds on the
/// prefix's final screen and typed-text log.
pub struct EnvVerifier {
    spec: EnvSpec,
}

impl EnvVerifier {
    pub fn new(spec: &EnvSpec) -> Self {
        Self { spec: spec.clone() }
    }

    fn subgoals_for(&self, goal_text: &str) -> Vec<&SubGoalSpec> {
        if let Some(task) = self.spec.tasks.iter().find(|t| t.instruction == goal_text) {
            task.subgoals.iter().collect()
        } else {
            self.spec
                .tasks
                .iter()
                .flat_map(|t| t.subgoals.iter())
                .collect()
        }
    }
}

impl SubGoalVerifier for EnvVerifier {
    fn candidate_goals(&self, trajectory: &Trajectory) -> Vec<Instruction> {
        self.subgoals_for(trajectory.goal.text())
            .into_iter()
            .filter_map(|sg| Instruction::new(&sg.goal).ok())
            .collect()
    }

    fn verify(&self, prefix: &[Transition], goal: &Instruction) -> bool {
        let last = match prefix.last() {
            Some(t) => t,
            None => return false,
        };
        let typed: Vec<String> = prefix
            .iter()
            .filter(|t| t.action.kind == ActionKind::TypeText)
            .filter_map(|t| t.action.value.clone())
            .collect();
        self.spec
            .tasks
            .iter()
            .flat_map(|t| t.subgoals.iter())
            .filter(|sg| sg.goal == goal.text())
            .any(|sg| sg.predicate.eval(&last.post.screen_id, &typed))
    }
}
