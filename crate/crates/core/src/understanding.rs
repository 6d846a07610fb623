//! Natural-language scenario descriptions to [`ScenarioQuery`].
//!
//! Two paths: a chat-completion provider prompted with the classification
//! framework (responses go through [`parse_llm_response`]), and a
//! deterministic phrase-rule interpreter that needs no network.

use crate::activity::{LateralActivity, LongitudinalActivity};
use crate::position::{PositionGroup, RelativePosition};
use crate::schema::{
    parse_llm_response, validate_query, EgoSpec, ParseError, PositionSpec, ScenarioQuery,
    TargetSpec,
};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::sync::{LazyLock, Mutex};
use std::time::Duration;
use thiserror::Error;

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4-1106-preview";
pub const API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const CORRECTIVE_SENTENCE: &str = "Your previous answer did not follow the required structure. Respond again using exactly the structure given.";

const SYSTEM_SEGMENT: &str = "System, you are an AI trained to understand and classify driving scenarios based on specific frameworks. Your task is to analyze the following driving scenario and classify the behavior of both the ego vehicle and the target vehicle according to the given classification framework. Please follow the framework strictly and provide precise and clear classifications. The framework is as follows: ";

const DESCRIPTION_PREFIX: &str = "Scenario Description: ";

const FORMAT_SEGMENT: &str = "Provide a detailed classification for both the ego vehicle and the target vehicle(s). The response should be formatted exactly as shown in this structure:
{
  Ego Vehicle: {Ego longitudinal activity: ['Your Classification'], Ego lateral activity: ['Your Classification']},
  Target Vehicle #1:
  {
        Target start position: {'Your Classification': ['Your Classification']},
        Target end position: {'Your Classification': ['Your Classification']},
        Target behavior: {target longitudinal activity: ['Your Classification'],
                              target lateral activity: ['Your Classification']'}
  }
  Target Vehicle #2:
  {
      ......
      ......
  }
}";

const EXAMPLE_SEGMENT: &str = "Example: If an ego vehicle is maintaining speed and following its lane, while another vehicle is initially in the left adjacent lane and is accelerating, then changing lanes to the right; finally driving on the front of ego vehicle, the classification would be:
{
  Ego Vehicle: {Ego longitudinal activity: ['keep velocity'], Ego lateral activity: ['follow lane']},
  Target Vehicle:
  {
        Target start position: {'adjacent lane': ['left adjacent lane']},
        Target end position: {'same lane': ['front']},
        Target behavior: {target longitudinal activity: ['acceleration'],
                              target lateral activity: ['lane change right']'}
  }";

const CLOSING_SEGMENT: &str =
    "Remember to analyze carefully and provide the classification as per the structure given above.";

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("scenario description is empty")]
    EmptyDescription,
    #[error("description names no target vehicle")]
    NoTarget,
    #[error("no position could be recognised for target vehicle #{0}")]
    UnknownPosition(usize),
    #[error("interpreted query is inconsistent: {0}")]
    Inconsistent(String),
    #[error("provider rejected the credentials: {0}")]
    Credential(String),
    #[error("provider failed after {attempts} attempt(s): {message}")]
    Provider {
        attempts: u32,
        message: String,
        last_response: Option<String>,
        transcript: Transcript,
    },
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

/// Taxonomy of activities and positions as sent to the provider.
pub fn taxonomy_text() -> String {
    let mut activity = BTreeMap::new();
    activity.insert(
        "Longitudinal Activity",
        LongitudinalActivity::ALL.iter().map(|a| a.label()).collect::<Vec<_>>(),
    );
    activity.insert(
        "Lateral Activity",
        LateralActivity::ALL.iter().map(|a| a.label()).collect::<Vec<_>>(),
    );
    let position: serde_json::Map<String, serde_json::Value> = PositionGroup::ALL
        .iter()
        .map(|g| {
            (
                g.label().to_string(),
                serde_json::json!(g.members().iter().map(|m| m.label()).collect::<Vec<_>>()),
            )
        })
        .collect();
    serde_json::json!({
        "Ego/Target Vehicle Activity": activity,
        "Target Vehicle Position": position,
    })
    .to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_segment: String,
    pub description_segment: String,
    pub format_segment: String,
    pub example_segment: String,
    pub closing_segment: String,
}

impl PromptBundle {
    pub fn segments(&self) -> [&str; 5] {
        [
            &self.system_segment,
            &self.description_segment,
            &self.format_segment,
            &self.example_segment,
            &self.closing_segment,
        ]
    }

    /// Segments joined by blank lines, in order.
    pub fn text(&self) -> String {
        self.segments().join("\n\n")
    }
}

pub fn build_prompt(description: &str) -> Result<PromptBundle, InterpretError> {
    if description.trim().is_empty() {
        return Err(InterpretError::EmptyDescription);
    }
    Ok(PromptBundle {
        system_segment: format!("{SYSTEM_SEGMENT}{}", taxonomy_text()),
        description_segment: format!("{DESCRIPTION_PREFIX}{description}"),
        format_segment: FORMAT_SEGMENT.to_string(),
        example_segment: EXAMPLE_SEGMENT.to_string(),
        closing_segment: CLOSING_SEGMENT.to_string(),
    })
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Never serialised; read from the environment.
    #[serde(skip)]
    pub api_key: Option<String>,
    /// seconds
    pub timeout: f64,
    pub max_retries: u32,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl std::fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            model: DEFAULT_MODEL.to_string(),
            api_key: None,
            timeout: 60.0,
            max_retries: 2,
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

impl ProviderConfig {
    /// Defaults with the key taken from `OPENAI_API_KEY`.
    pub fn from_env() -> Self {
        Self {
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), InterpretError> {
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(InterpretError::Config(format!(
                "timeout must be positive, got {}",
                self.timeout
            )));
        }
        if self.endpoint.trim().is_empty() {
            return Err(InterpretError::Config("endpoint is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("authentication: {0}")]
    Auth(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
}

/// Anything that can answer a chat-completion request.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError>;
}

/// OpenAI-compatible chat-completion endpoint over HTTP.
pub struct HttpCompletionClient {
    config: ProviderConfig,
    http: reqwest::blocking::Client,
}

impl HttpCompletionClient {
    pub fn new(config: ProviderConfig) -> Result<Self, InterpretError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout))
            .build()
            .map_err(|e| InterpretError::Config(e.to_string()))?;
        Ok(Self { config, http })
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let Some(key) = self.config.api_key.as_deref() else {
            return Err(ClientError::Auth(format!("{API_KEY_ENV} is not set")));
        };
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let resp = self
            .http
            .post(&self.config.endpoint)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ClientError::Auth(text));
        }
        if !status.is_success() {
            return Err(ClientError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|e| ClientError::Transport(format!("unexpected response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ClientError::Transport("response has no choices".into()))
    }
}

/// Replays canned answers in order; used for tests and recorded sessions.
pub struct ScriptedClient {
    answers: Mutex<VecDeque<Result<String, ClientError>>>,
    seen: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedClient {
    pub fn new(answers: impl IntoIterator<Item = Result<String, ClientError>>) -> Self {
        Self {
            answers: Mutex::new(answers.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn from_transcript(t: &RecordedTranscript) -> Self {
        Self::new(t.responses.iter().cloned().map(Ok))
    }

    /// Requests received so far.
    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.seen.lock().expect("not poisoned").clone()
    }
}

impl CompletionClient for ScriptedClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        self.seen.lock().expect("not poisoned").push(messages.to_vec());
        self.answers
            .lock()
            .expect("not poisoned")
            .pop_front()
            .unwrap_or_else(|| Err(ClientError::Transport("script exhausted".into())))
    }
}

/// A stored provider session: description plus the raw answers in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedTranscript {
    pub description: String,
    #[serde(default)]
    pub model: Option<String>,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: Vec<ChatMessage>,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Every request and answer of one interpretation, kept for auditing.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub description: String,
    pub exchanges: Vec<Exchange>,
}

impl Transcript {
    pub fn to_recorded(&self, model: Option<String>) -> RecordedTranscript {
        RecordedTranscript {
            description: self.description.clone(),
            model,
            responses: self
                .exchanges
                .iter()
                .filter_map(|e| e.response.clone())
                .collect(),
        }
    }
}

/// Sends the prompt, parses the answer, and retries up to `max_retries`
/// times on transport failures and unparseable answers.
pub fn interpret_remote(
    description: &str,
    client: &dyn CompletionClient,
    max_retries: u32,
) -> Result<(ScenarioQuery, Transcript), InterpretError> {
    let prompt = build_prompt(description)?;
    let base = vec![ChatMessage::new("user", prompt.text())];
    let mut messages = base.clone();
    let mut transcript = Transcript {
        description: description.to_string(),
        exchanges: Vec::new(),
    };
    let mut last_response = None;
    let mut last_error = String::new();
    for attempt in 0..=max_retries {
        let result = client.complete(&messages);
        let request = messages.clone();
        match result {
            Ok(text) => {
                let parsed = parse_llm_response(&text).map_err(|e| e.to_string()).and_then(|q| {
                    validate_query(q.clone())
                        .map(|_| q)
                        .map_err(|v| format!("{v:?}"))
                });
                transcript.exchanges.push(Exchange {
                    request,
                    response: Some(text.clone()),
                    error: parsed.as_ref().err().cloned(),
                });
                match parsed {
                    Ok(q) => return Ok((q, transcript)),
                    Err(e) => {
                        log::warn!("attempt {}: unusable answer: {e}", attempt + 1);
                        last_error = e;
                        messages = base.clone();
                        messages.push(ChatMessage::new("assistant", text.clone()));
                        messages.push(ChatMessage::new("user", CORRECTIVE_SENTENCE));
                        last_response = Some(text);
                    }
                }
            }
            Err(ClientError::Auth(msg)) => {
                return Err(InterpretError::Credential(msg));
            }
            Err(e) => {
                log::warn!("attempt {}: {e}", attempt + 1);
                last_error = e.to_string();
                transcript.exchanges.push(Exchange {
                    request,
                    response: None,
                    error: Some(last_error.clone()),
                });
            }
        }
    }
    Err(InterpretError::Provider {
        attempts: max_retries + 1,
        message: last_error,
        last_response,
        transcript,
    })
}

// ---------------------------------------------------------------------------
// Offline interpretation

struct Rule<T> {
    pattern: Regex,
    value: T,
}

fn rules<T: Copy>(table: &[(&str, T)]) -> Vec<Rule<T>> {
    table
        .iter()
        .map(|(p, v)| Rule {
            pattern: Regex::new(p).expect("valid phrase pattern"),
            value: *v,
        })
        .collect()
}

/// Earliest match in `text` over all rules.
fn first_hit<T: Copy>(rules: &[Rule<T>], text: &str) -> Option<T> {
    rules
        .iter()
        .filter_map(|r| r.pattern.find(text).map(|m| (m.start(), r.value)))
        .min_by_key(|(i, _)| *i)
        .map(|(_, v)| v)
}

static LONGITUDINAL_RULES: LazyLock<Vec<Rule<LongitudinalActivity>>> = LazyLock::new(|| {
    use LongitudinalActivity::*;
    rules(&[
        (r"\bdecelerat\w*", Deceleration),
        (r"\bbrak(?:e|es|ing)\b", Deceleration),
        (r"\bslow(?:s|ing)? down\b", Deceleration),
        (r"\b(?:reduc|decreas)(?:e|es|ing) (?:its |their )?(?:speed|velocity)\b", Deceleration),
        (r"\baccelerat\w*", Acceleration),
        (r"\bspeed(?:s|ing)? up\b", Acceleration),
        (r"\bincreas(?:e|es|ing) (?:its |their )?(?:speed|velocity)\b", Acceleration),
        (
            r"\b(?:maintain|maintains|maintaining|keep|keeps|keeping|hold|holds|holding)\b[^.,;]*?\b(?:velocity|speed)\b",
            KeepVelocity,
        ),
        (r"\b(?:constant|steady|same|unchanged) (?:speed|velocity)\b", KeepVelocity),
        (r"\bkeep velocity\b", KeepVelocity),
    ])
});

static LATERAL_RULES: LazyLock<Vec<Rule<LateralActivity>>> = LazyLock::new(|| {
    use LateralActivity::*;
    rules(&[
        (r"\bchang\w* (?:its |the )?lanes? to the right\b", LaneChangeRight),
        (r"\bchang\w* (?:its |the )?lanes? to the left\b", LaneChangeLeft),
        (r"\blane change (?:to the )?right\b", LaneChangeRight),
        (r"\blane change (?:to the )?left\b", LaneChangeLeft),
        (r"\bcut(?:s|ting)? in from the left\b", LaneChangeRight),
        (r"\bcut(?:s|ting)? in from the right\b", LaneChangeLeft),
        (r"\bmerg\w* (?:in)?to the right\b", LaneChangeRight),
        (r"\bmerg\w* (?:in)?to the left\b", LaneChangeLeft),
        (r"\bmov(?:e|es|ing) (?:over )?(?:in)?to the right\b", LaneChangeRight),
        (r"\bmov(?:e|es|ing) (?:over )?(?:in)?to the left\b", LaneChangeLeft),
        (
            r"\b(?:follow|follows|following|maintain|maintains|maintaining|keep|keeps|keeping|stay|stays|staying|remain|remains|remaining)\b[^.,;]*?\blane\b",
            FollowLane,
        ),
        (r"\bfollow lane\b", FollowLane),
    ])
});

static POSITION_RULES: LazyLock<Vec<Rule<RelativePosition>>> = LazyLock::new(|| {
    use RelativePosition::*;
    rules(&[
        (r"\blane next to (?:the )?left adjacent lane\b", LaneNextToLeftAdjacent),
        (r"\blane next to (?:the )?right adjacent lane\b", LaneNextToRightAdjacent),
        (r"\bleft adjacent lane\b", LeftAdjacent),
        (r"\bright adjacent lane\b", RightAdjacent),
        (r"\b(?:in front of|ahead of|on the front of|before) (?:the )?ego(?: vehicle)?\b", Front),
        (r"\bbehind (?:the )?ego(?: vehicle)?\b", Behind),
    ])
});

static SENTENCE_SPLIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[.;!?](?:\s+|$)|\b(?:while|whereas|meanwhile)\b").expect("valid"));

/// Vehicle mentions that can be a clause subject.
static VEHICLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\b(?:(?P<ego>ego(?: vehicle)?)|target(?: vehicle)?(?:\s*#?\s*(?P<num>\d+))?|(?P<nth>second|third|another|other|a) (?:target )?vehicle)\b",
    )
    .expect("valid")
});

static PRONOUN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:\s*(?:then|and|afterwards|later|subsequently|,)\s*)*\b(?:it|they|which)\b").expect("valid"));

static START_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:initially|at first|first|originally|starts?|starting|begins?|beginning|at the beginning)\b")
        .expect("valid")
});

static END_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:eventually|finally|ends?|ending|ends up|ending up|afterwards|in the end|then)\b")
        .expect("valid")
});

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Subject {
    Ego,
    Target(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Start,
    End,
    Unmarked,
}

#[derive(Debug, Default)]
struct Findings {
    longitudinal: Option<LongitudinalActivity>,
    lateral: Option<LateralActivity>,
    positions: Vec<(Phase, RelativePosition)>,
}

fn normalise(description: &str) -> String {
    let lowered = description.to_lowercase().replace(['’', '\''], "");
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when the mention at `at` is an object such as "in front of the ego".
fn is_object(text: &str, at: usize) -> bool {
    let before = text[..at].trim_end();
    ["of the", "of", "behind the", "behind", "to the", "than the", "with the", "and the"]
        .iter()
        .any(|p| before.ends_with(p))
}

/// Subject of a clause: the first vehicle mentioned that is not an object.
fn clause_subject(clause: &str, next_unnumbered: &mut usize) -> Option<Subject> {
    for caps in VEHICLE.captures_iter(clause) {
        let m = caps.get(0).expect("whole match");
        if is_object(clause, m.start()) {
            continue;
        }
        if caps.name("ego").is_some() {
            return Some(Subject::Ego);
        }
        if let Some(n) = caps.name("num") {
            return n.as_str().parse().ok().map(Subject::Target);
        }
        let n = match caps.name("nth").map(|m| m.as_str()) {
            Some("second") => 2,
            Some("third") => 3,
            Some("another") | Some("other") => {
                *next_unnumbered += 1;
                *next_unnumbered
            }
            _ => (*next_unnumbered).max(1),
        };
        return Some(Subject::Target(n));
    }
    None
}

fn phase_of(clause: &str, at: usize, previous_end: usize) -> Phase {
    let window = &clause[previous_end..at];
    let start = START_MARKER.find_iter(window).last().map(|m| m.start());
    let end = END_MARKER.find_iter(window).last().map(|m| m.start());
    match (start, end) {
        (Some(s), Some(e)) if s > e => Phase::Start,
        (_, Some(_)) => Phase::End,
        (Some(_), None) => Phase::Start,
        (None, None) => Phase::Unmarked,
    }
}

fn collect_positions(clause: &str) -> Vec<(Phase, RelativePosition)> {
    let mut hits: Vec<(usize, usize, RelativePosition)> = Vec::new();
    for r in POSITION_RULES.iter() {
        for m in r.pattern.find_iter(clause) {
            // longer phrases win where they overlap shorter ones
            if hits.iter().any(|(s, e, _)| m.start() < *e && *s < m.end()) {
                continue;
            }
            hits.push((m.start(), m.end(), r.value));
        }
    }
    hits.sort_by_key(|h| h.0);
    let mut prev = 0;
    hits.into_iter()
        .map(|(s, e, p)| {
            let phase = phase_of(clause, s, prev);
            prev = e;
            (phase, p)
        })
        .collect()
}

/// Lane offset towards the driver's right, and whether the target is ahead.
fn lane_offset(p: RelativePosition) -> i32 {
    use RelativePosition::*;
    match p {
        Front | Behind | OutOfScope => 0,
        LeftAdjacent => -1,
        RightAdjacent => 1,
        LaneNextToLeftAdjacent => -2,
        LaneNextToRightAdjacent => 2,
    }
}

fn from_offset(offset: i32, same_lane: RelativePosition) -> Option<RelativePosition> {
    use RelativePosition::*;
    Some(match offset {
        0 => same_lane,
        -1 => LeftAdjacent,
        1 => RightAdjacent,
        -2 => LaneNextToLeftAdjacent,
        2 => LaneNextToRightAdjacent,
        _ => return None,
    })
}

fn shift(lateral: LateralActivity) -> i32 {
    match lateral {
        LateralActivity::FollowLane => 0,
        LateralActivity::LaneChangeLeft => -1,
        LateralActivity::LaneChangeRight => 1,
    }
}

/// Start and end positions of one target. A missing end is derived from
/// the start and the lane change (and the other way round); a target that
/// ends up in the ego's lane is assumed to be in front of it.
fn resolve_positions(
    n: usize,
    mentions: &[(Phase, RelativePosition)],
    lateral: Option<LateralActivity>,
) -> Result<(RelativePosition, RelativePosition, Option<LateralActivity>), InterpretError> {
    let pick = |phase| mentions.iter().find(|(p, _)| *p == phase).map(|(_, r)| *r);
    let unmarked: Vec<RelativePosition> = mentions
        .iter()
        .filter(|(p, _)| *p == Phase::Unmarked)
        .map(|(_, r)| *r)
        .collect();
    let mut start = pick(Phase::Start);
    let mut end = mentions
        .iter()
        .rev()
        .find(|(p, _)| *p == Phase::End)
        .map(|(_, r)| *r);
    let mut free = unmarked.into_iter();
    if start.is_none() {
        start = free.next();
    }
    if end.is_none() {
        end = free.next();
    }
    let same_lane_of = |p: Option<RelativePosition>| match p {
        Some(RelativePosition::Behind) => RelativePosition::Behind,
        _ => RelativePosition::Front,
    };
    let lateral = lateral.or_else(|| match (start, end) {
        (Some(s), Some(e)) => Some(match lane_offset(e) - lane_offset(s) {
            d if d > 0 => LateralActivity::LaneChangeRight,
            d if d < 0 => LateralActivity::LaneChangeLeft,
            _ => LateralActivity::FollowLane,
        }),
        _ => None,
    });
    let dl = shift(lateral.unwrap_or(LateralActivity::FollowLane));
    match (start, end) {
        (Some(s), None) => end = from_offset(lane_offset(s) + dl, same_lane_of(Some(s))),
        (None, Some(e)) => start = from_offset(lane_offset(e) - dl, same_lane_of(Some(e))),
        _ => {}
    }
    match (start, end) {
        (Some(s), Some(e)) => Ok((s, e, lateral)),
        _ => Err(InterpretError::UnknownPosition(n)),
    }
}

/// Deterministic phrase-rule interpretation.
///
/// Each sentence (or `while` clause) is attributed to the first vehicle it
/// names as subject; "it"/"which" continue the previous subject. Activities
/// are read from the phrase tables above, defaulting to keep velocity and
/// follow lane. Positions marked "initially"/"starts" are start positions,
/// those marked "eventually"/"finally"/"then" are end positions.
pub fn interpret_offline(description: &str) -> Result<ScenarioQuery, InterpretError> {
    if description.trim().is_empty() {
        return Err(InterpretError::EmptyDescription);
    }
    let text = normalise(description);
    let mut ego = Findings::default();
    let mut targets: BTreeMap<usize, Findings> = BTreeMap::new();
    let mut current: Option<Subject> = None;
    let mut next_unnumbered = 0usize;
    for clause in SENTENCE_SPLIT.split(&text) {
        let clause = clause.trim();
        if clause.is_empty() {
            continue;
        }
        let subject = if PRONOUN.is_match(clause) {
            current.or_else(|| clause_subject(clause, &mut next_unnumbered))
        } else {
            clause_subject(clause, &mut next_unnumbered).or(current)
        };
        let Some(subject) = subject else { continue };
        if let Subject::Target(n) = subject {
            next_unnumbered = next_unnumbered.max(n);
        }
        current = Some(subject);
        let f = match subject {
            Subject::Ego => &mut ego,
            Subject::Target(n) => targets.entry(n).or_default(),
        };
        if f.longitudinal.is_none() {
            f.longitudinal = first_hit(&LONGITUDINAL_RULES, clause);
        }
        if f.lateral.is_none() || f.lateral == Some(LateralActivity::FollowLane) {
            let lc = first_hit(&LATERAL_RULES, clause);
            if lc.is_some() && lc != Some(LateralActivity::FollowLane) || f.lateral.is_none() {
                f.lateral = lc.or(f.lateral);
            }
        }
        if subject != Subject::Ego {
            f.positions.extend(collect_positions(clause));
        }
    }
    if targets.is_empty() {
        return Err(InterpretError::NoTarget);
    }
    let mut specs = Vec::with_capacity(targets.len());
    for (n, f) in targets {
        let (start, end, lateral) = resolve_positions(n, &f.positions, f.lateral)?;
        specs.push(TargetSpec {
            start: PositionSpec::of(start),
            end: PositionSpec::of(end),
            longitudinal: f.longitudinal.unwrap_or(LongitudinalActivity::KeepVelocity),
            lateral: lateral.unwrap_or(LateralActivity::FollowLane),
        });
    }
    let query = ScenarioQuery {
        ego: EgoSpec {
            longitudinal: ego.longitudinal.unwrap_or(LongitudinalActivity::KeepVelocity),
            lateral: ego.lateral.unwrap_or(LateralActivity::FollowLane),
        },
        targets: specs,
    };
    validate_query(query.clone()).map_err(|v| {
        InterpretError::Inconsistent(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "))
    })?;
    Ok(query)
}

/// Which interpreter to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[default]
    Offline,
    Remote,
}

impl std::str::FromStr for Provider {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "offline" => Ok(Provider::Offline),
            "remote" => Ok(Provider::Remote),
            other => Err(format!("unknown provider `{other}`, expected offline or remote")),
        }
    }
}

/// Interprets with the chosen provider; only remote runs yield a transcript.
pub fn interpret(
    description: &str,
    provider: Provider,
    config: &ProviderConfig,
) -> Result<(ScenarioQuery, Option<Transcript>), InterpretError> {
    match provider {
        Provider::Offline => interpret_offline(description).map(|q| (q, None)),
        Provider::Remote => {
            let client = HttpCompletionClient::new(config.clone())?;
            interpret_remote(description, &client, config.max_retries).map(|(q, t)| (q, Some(t)))
        }
    }
}

impl From<ParseError> for InterpretError {
    fn from(e: ParseError) -> Self {
        InterpretError::Inconsistent(e.to_string())
    }
}
