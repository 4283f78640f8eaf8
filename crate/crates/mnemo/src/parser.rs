//! Parsing and serialization of structured agent output.
//!
//! Agent turns carry four tag blocks in fixed order: `<Progress_Evaluation>`,
//! `<Decision_Rationale>`, `<History_Summary>`, and `<Answer>`. The answer
//! block holds a single Python-dict-style record with keys `action`, `value`,
//! and `position`. The parser is tolerant on input (single or double quotes,
//! one redundant outer brace layer, missing `value`/`position` keys) and the
//! serializer is canonical on output (double quotes, all three keys, floats
//! trimmed to at most six decimals), so `parse(serialize(x)) == x` for every
//! value the parser can produce.

use crate::error::{Error, Result};
use crate::records::fmt_coord;
use crate::types::{Action, ActionKind, BoundingBox, Point};

pub const TAGS: [&str; 4] = [
    "Progress_Evaluation",
    "Decision_Rationale",
    "History_Summary",
    "Answer",
];

/// A fully parsed agent turn. The action has already passed field
/// validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAgentOutput {
    pub progress_evaluation: String,
    pub decision_rationale: String,
    pub history_summary: String,
    pub action: Action,
}

/// Extracts the four tag blocks in order and parses the answer payload.
/// Never panics, whatever the input.
pub fn parse_agent_output(text: &str) -> Result<ParsedAgentOutput> {
    let mut pos = 0;
    let mut blocks: Vec<String> = Vec::with_capacity(4);
    for tag in TAGS {
        let (block, next) = find_block(text, pos, tag)?;
        blocks.push(block);
        pos = next;
    }
    let action = parse_answer(&blocks[3])?;
    action
        .validate()
        .map_err(|e| Error::InvalidAction(e.to_string()))?;
    let mut it = blocks.into_iter();
    Ok(ParsedAgentOutput {
        progress_evaluation: it.next().unwrap(),
        decision_rationale: it.next().unwrap(),
        history_summary: it.next().unwrap(),
        action,
    })
}

/// True when `text` parses cleanly, including action validation.
pub fn check_format(text: &str) -> bool {
    parse_agent_output(text).is_ok()
}

/// Canonical rendering of a parsed turn. Blocks are separated by single
/// newlines; the answer record always carries all three keys, with `""` for
/// a missing value and `[]` for a missing position.
pub fn serialize_agent_output(p: &ParsedAgentOutput) -> String {
    format!(
        "<Progress_Evaluation>\n{}\n</Progress_Evaluation>\n<Decision_Rationale>\n{}\n</Decision_Rationale>\n<History_Summary>\n{}\n</History_Summary>\n<Answer>\n{}\n</Answer>",
        p.progress_evaluation,
        p.decision_rationale,
        p.history_summary,
        answer_payload(&p.action)
    )
}

/// The canonical answer record for one action. A point position serializes
/// as a two-element list, a region as a four-element list.
pub fn answer_payload(a: &Action) -> String {
    let position = match (&a.position, &a.region) {
        (Some(p), _) => format!("[{}, {}]", fmt_coord(p.x()), fmt_coord(p.y())),
        (None, Some(r)) => {
            let [x0, y0, x1, y1] = r.as_array();
            format!(
                "[{}, {}, {}, {}]",
                fmt_coord(x0),
                fmt_coord(y0),
                fmt_coord(x1),
                fmt_coord(y1)
            )
        }
        (None, None) => "[]".to_owned(),
    };
    format!(
        "{{\"action\": \"{}\", \"value\": \"{}\", \"position\": {}}}",
        a.kind,
        escape(a.value.as_deref().unwrap_or("")),
        position
    )
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            _ => out.push(c),
        }
    }
    out
}

fn find_block(text: &str, from: usize, tag: &'static str) -> Result<(String, usize)> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text[from..].find(&open).ok_or(Error::MissingTag(tag))? + from;
    let body_start = start + open.len();
    let end = text[body_start..]
        .find(&close)
        .ok_or(Error::MissingTag(tag))?
        + body_start;
    Ok((text[body_start..end].trim().to_owned(), end + close.len()))
}

struct Cursor<'a> {
    chars: &'a [char],
    idx: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.idx).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.idx += 1;
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.idx += 1;
            Ok(())
        } else {
            Err(Error::MalformedAnswer(format!(
                "expected `{c}` at offset {}",
                self.idx
            )))
        }
    }

    fn parse_string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            _ => {
                return Err(Error::MalformedAnswer(format!(
                    "expected string at offset {}",
                    self.idx
                )))
            }
        };
        self.idx += 1;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(Error::MalformedAnswer("unterminated string".into())),
                Some(c) if c == quote => {
                    self.idx += 1;
                    return Ok(out);
                }
                Some('\\') => {
                    self.idx += 1;
                    match self.peek() {
                        None => return Err(Error::MalformedAnswer("unterminated escape".into())),
                        Some('n') => out.push('\n'),
                        Some('t') => out.push('\t'),
                        Some(c) => out.push(c),
                    }
                    self.idx += 1;
                }
                Some(c) => {
                    out.push(c);
                    self.idx += 1;
                }
            }
        }
    }

    fn parse_number(&mut self) -> Result<f64> {
        let start = self.idx;
        while matches!(
            self.peek(),
            Some('0'..='9' | '.' | '-' | '+' | 'e' | 'E')
        ) {
            self.idx += 1;
        }
        if self.idx == start {
            return Err(Error::MalformedAnswer(format!(
                "expected number at offset {start}"
            )));
        }
        let text: String = self.chars[start..self.idx].iter().collect();
        text.parse::<f64>()
            .map_err(|_| Error::MalformedAnswer(format!("bad number `{text}`")))
    }

    fn parse_number_list(&mut self) -> Result<Vec<f64>> {
        self.expect('[')?;
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(']') {
                self.idx += 1;
                return Ok(out);
            }
            out.push(self.parse_number()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => self.idx += 1,
                Some(']') => {
                    self.idx += 1;
                    return Ok(out);
                }
                _ => {
                    return Err(Error::MalformedAnswer(format!(
                        "expected `,` or `]` at offset {}",
                        self.idx
                    )))
                }
            }
        }
    }
}

/// Parses one answer record into an action. `value: ""` maps to no value,
/// `position: []` to no position; a two-element position becomes a point
/// and a four-element one a region.
fn parse_answer(payload: &str) -> Result<Action> {
    let mut s = payload.trim();
    if s.len() >= 4 && s.starts_with("{{") && s.ends_with("}}") {
        s = s[1..s.len() - 1].trim();
    }
    let chars: Vec<char> = s.chars().collect();
    let mut cur = Cursor {
        chars: &chars,
        idx: 0,
    };
    cur.skip_ws();
    cur.expect('{')?;

    let mut action_name: Option<String> = None;
    let mut value: Option<String> = None;
    let mut coords: Option<Vec<f64>> = None;
    let mut seen: Vec<String> = Vec::new();
    loop {
        cur.skip_ws();
        if cur.peek() == Some('}') {
            cur.idx += 1;
            break;
        }
        let key = cur.parse_string()?;
        if seen.iter().any(|k| *k == key) {
            return Err(Error::MalformedAnswer(format!("duplicate key `{key}`")));
        }
        cur.skip_ws();
        cur.expect(':')?;
        cur.skip_ws();
        match key.as_str() {
            "action" => action_name = Some(cur.parse_string()?),
            "value" => {
                let v = cur.parse_string()?;
                value = if v.is_empty() { None } else { Some(v) };
            }
            "position" => coords = Some(cur.parse_number_list()?),
            other => {
                return Err(Error::MalformedAnswer(format!("unknown key `{other}`")));
            }
        }
        seen.push(key);
        cur.skip_ws();
        match cur.peek() {
            Some(',') => cur.idx += 1,
            Some('}') => {
                cur.idx += 1;
                break;
            }
            _ => {
                return Err(Error::MalformedAnswer(format!(
                    "expected `,` or `}}` at offset {}",
                    cur.idx
                )))
            }
        }
    }
    cur.skip_ws();
    if cur.idx != chars.len() {
        return Err(Error::MalformedAnswer(
            "trailing content after record".into(),
        ));
    }

    let name = action_name.ok_or_else(|| Error::MalformedAnswer("missing key `action`".into()))?;
    let kind = ActionKind::parse(&name)
        .ok_or_else(|| Error::MalformedAnswer(format!("unknown action `{name}`")))?;
    let geometry = |e: Error| Error::InvalidAction(e.to_string());
    let (position, region) = match coords.as_deref() {
        None | Some([]) => (None, None),
        Some([x, y]) => (Some(Point::new(*x, *y).map_err(geometry)?), None),
        Some([a, b, c, d]) => (
            None,
            Some(BoundingBox::new(*a, *b, *c, *d).map_err(geometry)?),
        ),
        Some(other) => {
            return Err(Error::MalformedAnswer(format!(
                "position must have 0, 2, or 4 elements, got {}",
                other.len()
            )));
        }
    };
    Ok(Action {
        kind,
        value,
        position,
        region,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(answer: &str) -> String {
        format!(
            "<Progress_Evaluation>\nOn track.\n</Progress_Evaluation>\n<Decision_Rationale>\nThe target is visible.\n</Decision_Rationale>\n<History_Summary>\nOpened the app.\n</History_Summary>\n<Answer>\n{answer}\n</Answer>"
        )
    }

    #[test]
    fn parses_canonical_click_turn() {
        let p = parse_agent_output(&turn(
            "{'action': 'click', 'value': 'Apply', 'position': [0.3, 0.66]}",
        ))
        .unwrap();
        assert_eq!(p.progress_evaluation, "On track.");
        assert_eq!(p.action.kind, ActionKind::Click);
        assert_eq!(p.action.value.as_deref(), Some("Apply"));
        let pos = p.action.position.unwrap();
        assert_eq!((pos.x(), pos.y()), (0.3, 0.66));
    }

    #[test]
    fn accepts_double_quotes_and_doubled_braces() {
        let p = parse_agent_output(&turn(
            r#"{{"action": "click", "value": "Apply", "position": [0.3, 0.66]}}"#,
        ))
        .unwrap();
        assert_eq!(p.action.kind, ActionKind::Click);
        assert_eq!(p.action.value.as_deref(), Some("Apply"));
    }

    #[test]
    fn empty_value_and_position_map_to_none() {
        let p = parse_agent_output(&turn("{'action': 'wait', 'value': '', 'position': []}"))
            .unwrap();
        assert_eq!(p.action, Action::bare(ActionKind::Wait));
    }

    #[test]
    fn four_element_position_becomes_region() {
        let p = parse_agent_output(&turn(
            "{'action': 'scroll', 'value': 'down', 'position': [0.1, 0.2, 0.9, 0.8]}",
        ))
        .unwrap();
        let r = p.action.region.unwrap();
        assert_eq!(r.as_array(), [0.1, 0.2, 0.9, 0.8]);
        assert!(p.action.position.is_none());
    }

    #[test]
    fn missing_tag_is_reported() {
        let text = "<Progress_Evaluation>x</Progress_Evaluation><Answer>{'action': 'wait'}</Answer>";
        assert!(matches!(
            parse_agent_output(text),
            Err(Error::MissingTag("Decision_Rationale"))
        ));
    }

    #[test]
    fn out_of_order_tags_are_rejected() {
        let text = "<Decision_Rationale>d</Decision_Rationale><Progress_Evaluation>p</Progress_Evaluation><History_Summary>h</History_Summary><Answer>{'action': 'wait'}</Answer>";
        assert!(matches!(
            parse_agent_output(text),
            Err(Error::MissingTag("Decision_Rationale"))
        ));
    }

    #[test]
    fn malformed_payloads_are_rejected() {
        for bad in [
            "{'action': 'click', 'position': [0.3]}",
            "{'action': 'click', 'position': [0.1, 0.2, 0.3]}",
            "{'action': }",
            "{'value': 'x'}",
            "{'action': 'fly'}",
            "{'action': 'click', 'oops': 'x'}",
            "{'action': 'click', 'action': 'wait'}",
            "{'action': 'click', 'position': [0.3, 0.4]} extra",
            "not a record",
        ] {
            assert!(
                matches!(
                    parse_agent_output(&turn(bad)),
                    Err(Error::MalformedAnswer(_))
                ),
                "payload {bad:?} should be malformed"
            );
        }
    }

    #[test]
    fn invalid_actions_are_distinguished_from_malformed_ones() {
        let missing_position = turn("{'action': 'click', 'value': '', 'position': []}");
        assert!(matches!(
            parse_agent_output(&missing_position),
            Err(Error::InvalidAction(_))
        ));
        let out_of_range = turn("{'action': 'click', 'position': [1.3, 0.5]}");
        assert!(matches!(
            parse_agent_output(&out_of_range),
            Err(Error::InvalidAction(_))
        ));
    }

    #[test]
    fn serialization_round_trips() {
        let original = parse_agent_output(&turn(
            "{'action': 'type_text', 'value': 'battery saver', 'position': []}",
        ))
        .unwrap();
        let text = serialize_agent_output(&original);
        let back = parse_agent_output(&text).unwrap();
        assert_eq!(back, original);
    }

    #[test]
    fn escaped_quotes_round_trip() {
        let p = parse_agent_output(&turn(
            r#"{"action": "type_text", "value": "say \"hi\" twice", "position": []}"#,
        ))
        .unwrap();
        assert_eq!(p.action.value.as_deref(), Some("say \"hi\" twice"));
        let back = parse_agent_output(&serialize_agent_output(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn check_format_matches_parse() {
        assert!(check_format(&turn("{'action': 'wait'}")));
        assert!(!check_format("free-form text with no tags"));
        assert!(!check_format(&turn("{'action': 'click'}")));
    }
}
