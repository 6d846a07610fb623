//! Structured scenario queries and the braced classification grammar that
//! language models answer in.
//!
//! The canonical wire format is JSON:
//!
//! ```json
//! {
//!   "ego": {"longitudinal": "keep velocity", "lateral": "follow lane"},
//!   "targets": [{
//!     "start": {"group": "adjacent lane", "member": "left adjacent lane"},
//!     "end": {"group": "same lane", "member": "front"},
//!     "longitudinal": "acceleration",
//!     "lateral": "lane change right"
//!   }]
//! }
//! ```
//!
//! The braced text form only exists at the model boundary; see
//! [`parse_llm_response`] and [`to_braced_text`].

use crate::activity::{LateralActivity, LongitudinalActivity};
use crate::position::{PositionGroup, RelativePosition};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PositionSpec {
    pub group: PositionGroup,
    pub member: RelativePosition,
}

impl PositionSpec {
    /// Spec whose group is the member's own group.
    pub fn of(member: RelativePosition) -> Self {
        Self {
            group: member.group().unwrap_or(PositionGroup::SameLane),
            member,
        }
    }
}

impl fmt::Display for PositionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}: {}}}", self.group, self.member)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EgoSpec {
    pub longitudinal: LongitudinalActivity,
    pub lateral: LateralActivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetSpec {
    pub start: PositionSpec,
    pub end: PositionSpec,
    pub longitudinal: LongitudinalActivity,
    pub lateral: LateralActivity,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioQuery {
    pub ego: EgoSpec,
    pub targets: Vec<TargetSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NoTargets,
    MemberNotInGroup {
        target: usize,
        field: String,
        group: PositionGroup,
        member: RelativePosition,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoTargets => f.write_str("at least one target is required"),
            Violation::MemberNotInGroup {
                target,
                field,
                group,
                member,
            } => write!(
                f,
                "target #{target} {field} position: member not in group ({member:?} is not part of \"{group}\")"
            ),
        }
    }
}

/// A query whose taxonomy pairs have been checked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ValidatedQuery(ScenarioQuery);

impl ValidatedQuery {
    pub fn query(&self) -> &ScenarioQuery {
        &self.0
    }

    pub fn into_inner(self) -> ScenarioQuery {
        self.0
    }
}

impl std::ops::Deref for ValidatedQuery {
    type Target = ScenarioQuery;
    fn deref(&self) -> &ScenarioQuery {
        &self.0
    }
}

pub fn validate_query(query: ScenarioQuery) -> Result<ValidatedQuery, Vec<Violation>> {
    let mut violations = Vec::new();
    if query.targets.is_empty() {
        violations.push(Violation::NoTargets);
    }
    for (i, t) in query.targets.iter().enumerate() {
        for (field, spec) in [("start", t.start), ("end", t.end)] {
            if spec.member.group() != Some(spec.group) {
                violations.push(Violation::MemberNotInGroup {
                    target: i + 1,
                    field: field.into(),
                    group: spec.group,
                    member: spec.member,
                });
            }
        }
    }
    if violations.is_empty() {
        Ok(ValidatedQuery(query))
    } else {
        Err(violations)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("unknown {field} label `{label}`")]
    Vocabulary { field: String, label: String },
    #[error("response structure: {0}")]
    Structure(String),
}

/// Renders the query in the braced classification grammar, targets numbered
/// from 1.
pub fn to_braced_text(query: &ScenarioQuery) -> String {
    let mut out = String::from("{\n");
    out.push_str(&format!(
        "  Ego Vehicle: {{Ego longitudinal activity: ['{}'], Ego lateral activity: ['{}']}}",
        query.ego.longitudinal, query.ego.lateral
    ));
    for (i, t) in query.targets.iter().enumerate() {
        out.push_str(&format!(
            ",\n  Target Vehicle #{}:\n  {{\n        Target start position: {{'{}': ['{}']}},\n        Target end position: {{'{}': ['{}']}},\n        Target behavior: {{target longitudinal activity: ['{}'], target lateral activity: ['{}']}}\n  }}",
            i + 1,
            t.start.group,
            t.start.member,
            t.end.group,
            t.end.member,
            t.longitudinal,
            t.lateral
        ));
    }
    out.push_str("\n}");
    out
}

// ---------------------------------------------------------------------------
// tolerant braced-grammar parser

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    OpenList,
    CloseList,
    Colon,
    Comma,
    Word(String),
}

fn is_quote(c: char) -> bool {
    matches!(c, '\'' | '"' | '`' | '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}')
}

fn lex(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<Token>| {
        let w = normalize(word);
        if !w.is_empty() {
            tokens.push(Token::Word(w));
        }
        word.clear();
    };
    for c in text.chars() {
        let structural = match c {
            '{' => Some(Token::Open),
            '}' => Some(Token::Close),
            '[' => Some(Token::OpenList),
            ']' => Some(Token::CloseList),
            ':' => Some(Token::Colon),
            ',' => Some(Token::Comma),
            _ => None,
        };
        match structural {
            Some(t) => {
                flush(&mut word, &mut tokens);
                tokens.push(t);
            }
            None if is_quote(c) => word.push(' '),
            None => word.push(c),
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

/// Lower-cases, maps `_`/`-` to spaces and collapses whitespace.
fn normalize(s: &str) -> String {
    let lowered: String = s
        .chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect::<String>()
        .to_lowercase();
    let mut out = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    while out.ends_with('.') || out.ends_with(';') {
        out.pop();
    }
    out.trim().to_string()
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Map(Vec<(String, Node)>),
    List(Vec<Node>),
    Text(String),
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    /// Parses `key: value` entries until a closing brace or end of input.
    fn map_body(&mut self) -> Result<Vec<(String, Node)>, ParseError> {
        let mut entries = Vec::new();
        loop {
            match self.peek() {
                None => return Ok(entries),
                Some(Token::Close) => {
                    self.pos += 1;
                    return Ok(entries);
                }
                Some(Token::Comma) | Some(Token::CloseList) => {
                    self.pos += 1;
                }
                Some(Token::Word(_)) => {
                    let Some(Token::Word(key)) = self.next() else { unreachable!() };
                    match self.next() {
                        Some(Token::Colon) => {}
                        other => {
                            return Err(ParseError::Malformed(format!(
                                "expected `:` after `{key}`, found {other:?}"
                            )))
                        }
                    }
                    let value = self.value()?;
                    entries.push((key, value));
                }
                Some(other) => {
                    return Err(ParseError::Malformed(format!("unexpected {other:?}")));
                }
            }
        }
    }

    fn value(&mut self) -> Result<Node, ParseError> {
        match self.next() {
            Some(Token::Open) => Ok(Node::Map(self.map_body()?)),
            Some(Token::OpenList) => {
                let mut items = Vec::new();
                loop {
                    match self.peek() {
                        None => return Err(ParseError::Malformed("unterminated `[`".into())),
                        Some(Token::CloseList) => {
                            self.pos += 1;
                            return Ok(Node::List(items));
                        }
                        Some(Token::Comma) => self.pos += 1,
                        _ => items.push(self.value()?),
                    }
                }
            }
            Some(Token::Word(w)) => Ok(Node::Text(w)),
            other => Err(ParseError::Malformed(format!("expected a value, found {other:?}"))),
        }
    }
}

fn ego_key() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)ego[\s_]+vehicle['"\s]*:"#).expect("valid regex"))
}

fn target_key() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^target vehicle(?:\s*#?\s*(\d+))?$").expect("valid regex"))
}

fn scalar<'a>(node: &'a Node, field: &str) -> Result<&'a str, ParseError> {
    match node {
        Node::Text(s) => Ok(s),
        Node::List(items) if items.len() == 1 => scalar(&items[0], field),
        Node::List(items) if items.is_empty() => {
            Err(ParseError::Structure(format!("{field}: empty classification")))
        }
        _ => Err(ParseError::Structure(format!(
            "{field}: expected a single classification"
        ))),
    }
}

fn strip_articles(label: &str) -> String {
    label
        .split(' ')
        .filter(|w| *w != "the")
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn lookup_longitudinal(label: &str) -> Option<LongitudinalActivity> {
    let l = strip_articles(&normalize(label));
    LongitudinalActivity::ALL.into_iter().find(|a| a.label() == l)
}

pub(crate) fn lookup_lateral(label: &str) -> Option<LateralActivity> {
    let l = strip_articles(&normalize(label));
    LateralActivity::ALL.into_iter().find(|a| a.label() == l)
}

pub(crate) fn lookup_group(label: &str) -> Option<PositionGroup> {
    let l = strip_articles(&normalize(label));
    PositionGroup::ALL.into_iter().find(|g| g.label() == l)
}

pub(crate) fn lookup_member(label: &str) -> Option<RelativePosition> {
    let l = strip_articles(&normalize(label));
    RelativePosition::MEMBERS.into_iter().find(|m| m.label() == l)
}

fn longitudinal(node: &Node, field: &str) -> Result<LongitudinalActivity, ParseError> {
    let s = scalar(node, field)?;
    lookup_longitudinal(s).ok_or_else(|| ParseError::Vocabulary {
        field: field.into(),
        label: s.into(),
    })
}

fn lateral(node: &Node, field: &str) -> Result<LateralActivity, ParseError> {
    let s = scalar(node, field)?;
    lookup_lateral(s).ok_or_else(|| ParseError::Vocabulary {
        field: field.into(),
        label: s.into(),
    })
}

fn member(s: &str, field: &str) -> Result<RelativePosition, ParseError> {
    lookup_member(s).ok_or_else(|| ParseError::Vocabulary {
        field: field.into(),
        label: s.into(),
    })
}

fn position(node: &Node, field: &str) -> Result<PositionSpec, ParseError> {
    match node {
        Node::Map(entries) if entries.len() == 1 => {
            let (g, v) = &entries[0];
            let group = lookup_group(g).ok_or_else(|| ParseError::Vocabulary {
                field: format!("{field} group"),
                label: g.clone(),
            })?;
            Ok(PositionSpec {
                group,
                member: member(scalar(v, field)?, field)?,
            })
        }
        Node::Map(_) => Err(ParseError::Structure(format!(
            "{field}: expected exactly one `group: [member]` entry"
        ))),
        other => {
            // group omitted: infer it from the member
            let m = member(scalar(other, field)?, field)?;
            Ok(PositionSpec::of(m))
        }
    }
}

fn find(entries: &[(String, Node)], pred: impl Fn(&str) -> bool) -> Option<&Node> {
    entries.iter().find(|(k, _)| pred(k)).map(|(_, v)| v)
}

fn parse_target(entries: &[(String, Node)], n: usize) -> Result<TargetSpec, ParseError> {
    let ctx = |f: &str| format!("target #{n} {f}");
    let behavior = find(entries, |k| k.contains("behavio"));
    let behavior_entries: &[(String, Node)] = match behavior {
        Some(Node::Map(e)) => e,
        Some(_) => {
            return Err(ParseError::Structure(format!(
                "target #{n} behavior must be a braced block"
            )))
        }
        None => entries,
    };
    let missing = |f: &str| ParseError::Malformed(format!("target #{n}: missing {f}"));
    Ok(TargetSpec {
        start: position(
            find(entries, |k| k.contains("start")).ok_or_else(|| missing("start position"))?,
            &ctx("start position"),
        )?,
        end: position(
            find(entries, |k| k.contains("end")).ok_or_else(|| missing("end position"))?,
            &ctx("end position"),
        )?,
        longitudinal: longitudinal(
            find(behavior_entries, |k| k.contains("longitudinal"))
                .ok_or_else(|| missing("longitudinal activity"))?,
            &ctx("longitudinal activity"),
        )?,
        lateral: lateral(
            find(behavior_entries, |k| k.contains("lateral"))
                .ok_or_else(|| missing("lateral activity"))?,
            &ctx("lateral activity"),
        )?,
    })
}

/// Tolerant parse of a braced classification response.
///
/// Labels are matched case-insensitively with or without quotes; whitespace
/// and surrounding prose are ignored. Un-numbered target blocks are numbered
/// in order of appearance.
pub fn parse_llm_response(text: &str) -> Result<ScenarioQuery, ParseError> {
    let start = ego_key()
        .find(text)
        .ok_or_else(|| ParseError::Malformed("no `Ego Vehicle` block".into()))?
        .start();
    let mut parser = Parser {
        tokens: lex(&text[start..]),
        pos: 0,
    };
    let entries = parser.map_body()?;

    let ego_entries = match find(&entries, |k| k == "ego vehicle") {
        Some(Node::Map(e)) => e,
        _ => return Err(ParseError::Malformed("`Ego Vehicle` is not a braced block".into())),
    };
    let ego = EgoSpec {
        longitudinal: longitudinal(
            find(ego_entries, |k| k.contains("longitudinal"))
                .ok_or_else(|| ParseError::Malformed("missing ego longitudinal activity".into()))?,
            "ego longitudinal activity",
        )?,
        lateral: lateral(
            find(ego_entries, |k| k.contains("lateral"))
                .ok_or_else(|| ParseError::Malformed("missing ego lateral activity".into()))?,
            "ego lateral activity",
        )?,
    };

    let mut numbered: Vec<(usize, TargetSpec)> = Vec::new();
    let mut next_implicit = 1usize;
    for (key, node) in &entries {
        let Some(caps) = target_key().captures(key) else { continue };
        let n = match caps.get(1) {
            Some(m) => m
                .as_str()
                .parse::<usize>()
                .map_err(|_| ParseError::Structure(format!("bad target numeral in `{key}`")))?,
            None => next_implicit,
        };
        next_implicit = n + 1;
        if numbered.iter().any(|(m, _)| *m == n) {
            return Err(ParseError::Structure(format!("duplicate target #{n}")));
        }
        let Node::Map(target_entries) = node else {
            return Err(ParseError::Structure(format!("target #{n} is not a braced block")));
        };
        numbered.push((n, parse_target(target_entries, n)?));
    }
    if numbered.is_empty() {
        return Err(ParseError::Malformed("no `Target Vehicle` block".into()));
    }
    numbered.sort_by_key(|(n, _)| *n);
    Ok(ScenarioQuery {
        ego,
        targets: numbered.into_iter().map(|(_, t)| t).collect(),
    })
}
