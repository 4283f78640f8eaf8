//! Core domain types shared by every subsystem.
//!
//! All geometry lives in the unit square: screen coordinates are normalized
//! to `[0, 1]` with the origin at the top-left corner. Validation happens at
//! construction; a value of one of these types is always well formed.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A normalized screen coordinate. Serializes as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    x: f64,
    y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        for (name, v) in [("x", x), ("y", y)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidGeometry(format!(
                    "point coordinate {name}={v} outside [0, 1]"
                )));
            }
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(deserializer)?;
        Point::new(x, y).map_err(D::Error::custom)
    }
}

/// An axis-aligned box in the unit square. Degenerate (zero-area) boxes are
/// legal. Serializes as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        for (name, v) in [
            ("x_min", x_min),
            ("y_min", y_min),
            ("x_max", x_max),
            ("y_max", y_max),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidGeometry(format!(
                    "box coordinate {name}={v} outside [0, 1]"
                )));
            }
        }
        if x_min > x_max || y_min > y_max {
            return Err(Error::InvalidGeometry(format!(
                "box corners out of order: [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// A zero-area box anchored at one point.
    pub fn degenerate(p: Point) -> Self {
        Self {
            x_min: p.x(),
            y_min: p.y(),
            x_max: p.x(),
            y_max: p.y(),
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point {
            x: 0.5 * (self.x_min + self.x_max),
            y: 0.5 * (self.y_min + self.y_max),
        }
    }

    /// Membership is inclusive on all four edges.
    pub fn contains(&self, p: Point) -> bool {
        p.x() >= self.x_min && p.x() <= self.x_max && p.y() >= self.y_min && p.y() <= self.y_max
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [a, b, c, d] = <[f64; 4]>::deserialize(deserializer)?;
        BoundingBox::new(a, b, c, d).map_err(D::Error::custom)
    }
}

/// The discrete action space of the GUI agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    LongPress,
    Scroll,
    TypeText,
    OpenApp,
    NavigateHome,
    NavigateBack,
    Wait,
    Complete,
    Impossible,
}

impl ActionKind {
    pub const ALL: [ActionKind; 10] = [
        ActionKind::Click,
        ActionKind::LongPress,
        ActionKind::Scroll,
        ActionKind::TypeText,
        ActionKind::OpenApp,
        ActionKind::NavigateHome,
        ActionKind::NavigateBack,
        ActionKind::Wait,
        ActionKind::Complete,
        ActionKind::Impossible,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::LongPress => "long_press",
            ActionKind::Scroll => "scroll",
            ActionKind::TypeText => "type_text",
            ActionKind::OpenApp => "open_app",
            ActionKind::NavigateHome => "navigate_home",
            ActionKind::NavigateBack => "navigate_back",
            ActionKind::Wait => "wait",
            ActionKind::Complete => "complete",
            ActionKind::Impossible => "impossible",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for ActionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One agent action. Which optional fields must be present depends on the
/// kind; see [`Action::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<BoundingBox>,
}

impl Action {
    pub fn new(
        kind: ActionKind,
        value: Option<String>,
        position: Option<Point>,
        region: Option<BoundingBox>,
    ) -> Result<Self> {
        let action = Self {
            kind,
            value,
            position,
            region,
        };
        action.validate()?;
        Ok(action)
    }

    pub fn click(position: Point) -> Self {
        Self {
            kind: ActionKind::Click,
            value: None,
            position: Some(position),
            region: None,
        }
    }

    pub fn long_press(position: Point) -> Self {
        Self {
            kind: ActionKind::LongPress,
            value: None,
            position: Some(position),
            region: None,
        }
    }

    pub fn scroll(region: BoundingBox, direction: Option<&str>) -> Self {
        Self {
            kind: ActionKind::Scroll,
            value: direction.map(str::to_owned),
            position: None,
            region: Some(region),
        }
    }

    pub fn type_text(value: &str) -> Self {
        Self {
            kind: ActionKind::TypeText,
            value: Some(value.to_owned()),
            position: None,
            region: None,
        }
    }

    pub fn open_app(value: &str) -> Self {
        Self {
            kind: ActionKind::OpenApp,
            value: Some(value.to_owned()),
            position: None,
            region: None,
        }
    }

    pub fn bare(kind: ActionKind) -> Self {
        Self {
            kind,
            value: None,
            position: None,
            region: None,
        }
    }

    /// Field rules per kind:
    ///
    /// - `click` / `long_press`: `position` required.
    /// - `scroll`: `region` or `position` required (a point stands for a
    ///   degenerate region).
    /// - `type_text` / `open_app`: `value` required.
    /// - `navigate_home` / `navigate_back` / `complete` / `impossible`:
    ///   no `position` or `region` allowed.
    /// - `wait`: unconstrained.
    pub fn validate(&self) -> Result<()> {
        let need = |field: &'static str, present: bool| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(Error::MissingField {
                    kind: self.kind,
                    field,
                })
            }
        };
        let forbid = |field: &'static str, present: bool| -> Result<()> {
            if present {
                Err(Error::UnexpectedField {
                    kind: self.kind,
                    field,
                })
            } else {
                Ok(())
            }
        };
        match self.kind {
            ActionKind::Click | ActionKind::LongPress => need("position", self.position.is_some()),
            ActionKind::Scroll => need(
                "region",
                self.region.is_some() || self.position.is_some(),
            ),
            ActionKind::TypeText | ActionKind::OpenApp => need("value", self.value.is_some()),
            ActionKind::NavigateHome
            | ActionKind::NavigateBack
            | ActionKind::Complete
            | ActionKind::Impossible => {
                forbid("position", self.position.is_some())?;
                forbid("region", self.region.is_some())
            }
            ActionKind::Wait => Ok(()),
        }
    }

    /// Short human-readable form used when rendering retrieved context.
    pub fn brief(&self) -> String {
        match (&self.value, &self.position) {
            (Some(v), _) => format!("{}({v})", self.kind),
            (None, Some(p)) => format!(
                "{}({}, {})",
                self.kind,
                crate::records::fmt_coord(p.x()),
                crate::records::fmt_coord(p.y())
            ),
            (None, None) => self.kind.to_string(),
        }
    }

    /// Exact token used in deduplication signatures. Uses full-precision
    /// float formatting so distinct actions never collide.
    pub fn signature_token(&self) -> String {
        let mut out = self.kind.as_str().to_owned();
        if let Some(v) = &self.value {
            out.push_str(&format!(":v={v}"));
        }
        if let Some(p) = &self.position {
            out.push_str(&format!(":p={},{}", p.x(), p.y()));
        }
        if let Some(r) = &self.region {
            let [a, b, c, d] = r.as_array();
            out.push_str(&format!(":r={a},{b},{c},{d}"));
        }
        out
    }
}

/// One interactable element of a screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Widget {
    pub widget_id: String,
    pub role: String,
    pub label: String,
    pub bounds: BoundingBox,
}

/// A structured screen snapshot. Widget ids are unique within one
/// observation; the widget list preserves layout order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub screen_id: String,
    #[serde(default)]
    pub widgets: Vec<Widget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_image_ref: Option<String>,
}

impl Observation {
    pub fn new(screen_id: &str, widgets: Vec<Widget>) -> Result<Self> {
        let obs = Self {
            screen_id: screen_id.to_owned(),
            widgets,
            raw_image_ref: None,
        };
        obs.validate()?;
        Ok(obs)
    }

    /// A screen-id-only observation with no widget tree.
    pub fn bare(screen_id: &str) -> Self {
        Self {
            screen_id: screen_id.to_owned(),
            widgets: Vec::new(),
            raw_image_ref: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for w in &self.widgets {
            if !seen.insert(w.widget_id.as_str()) {
                return Err(Error::DuplicateWidgetId(w.widget_id.clone()));
            }
        }
        Ok(())
    }

    /// First widget in layout order whose bounds contain `p`.
    pub fn widget_at(&self, p: Point) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.bounds.contains(p))
    }

    pub fn widget_by_id(&self, id: &str) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.widget_id == id)
    }
}

/// A non-empty natural-language task description.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    text: String,
}

impl Instruction {
    pub fn new(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("instruction text".into()));
        }
        Ok(Self {
            text: text.to_owned(),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

impl std::fmt::Display for Instruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for Instruction {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Instruction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Instruction::new(&text).map_err(D::Error::custom)
    }
}

/// One environment step: the screen before, the action taken, the screen
/// after, and a 1-based position within its episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub pre: Observation,
    pub action: Action,
    pub post: Observation,
    pub step_index: u32,
}

/// A complete episode: goal, ordered transitions, and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub trajectory_id: String,
    pub goal: Instruction,
    pub transitions: Vec<Transition>,
    pub success: bool,
}

impl Trajectory {
    /// Validates step monotonicity (strictly increasing, starting at 1),
    /// screen contiguity (`post` of step i equals `pre` of step i+1 by
    /// screen id), and per-action field rules.
    pub fn new(
        trajectory_id: &str,
        goal: Instruction,
        transitions: Vec<Transition>,
        success: bool,
    ) -> Result<Self> {
        let t = Self {
            trajectory_id: trajectory_id.to_owned(),
            goal,
            transitions,
            success,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let mut last = 0u32;
        for (i, tr) in self.transitions.iter().enumerate() {
            if tr.step_index <= last {
                return Err(Error::NonMonotonicStep {
                    last,
                    next: tr.step_index,
                });
            }
            last = tr.step_index;
            tr.action.validate()?;
            tr.pre.validate()?;
            tr.post.validate()?;
            if i > 0 && self.transitions[i - 1].post.screen_id != tr.pre.screen_id {
                return Err(Error::NonContiguous { index: i });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn first_observation(&self) -> Option<&Observation> {
        self.transitions.first().map(|t| &t.pre)
    }

    /// Exact key for duplicate detection: goal text plus the full action
    /// sequence.
    pub fn dedup_key(&self) -> (String, String) {
        let actions = self
            .transitions
            .iter()
            .map(|t| t.action.signature_token())
            .collect::<Vec<_>>()
            .join(";");
        (self.goal.text().to_owned(), actions)
    }
}
