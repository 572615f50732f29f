//! Structured output parsing.
//!
//! A rollout is accepted only when it is exactly one of the two canonical
//! tag sequences:
//!
//! ```text
//! normal:   <think>..</think><answer>..</answer>
//! abnormal: <think>..</think><location>..</location><type>..</type><answer>..</answer>
//! ```
//!
//! Whitespace between tags is ignored and tag content is trimmed. Tag content
//! runs to the first tag marker of any kind, which must be the matching
//! closing tag. Anything else is reported as a [`MalformedReport`] carrying
//! the first violation and its byte offset.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Final yes/no verdict of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    /// Case-insensitive match against `yes` / `no`.
    pub fn from_token(token: &str) -> Option<Self> {
        if token.eq_ignore_ascii_case("yes") {
            Some(Answer::Yes)
        } else if token.eq_ignore_ascii_case("no") {
            Some(Answer::No)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "Yes",
            Answer::No => "No",
        }
    }
}

/// Which canonical tag sequence a response follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub think: String,
    pub location: Option<String>,
    pub anomaly_type: Option<String>,
    pub answer: Answer,
    pub pattern: PatternKind,
    pub raw: String,
}

impl StructuredResponse {
    /// Builds a normal-pattern response; `raw` is the canonical rendering.
    pub fn normal(think: impl Into<String>, answer: Answer) -> Self {
        let mut r = StructuredResponse {
            think: think.into(),
            location: None,
            anomaly_type: None,
            answer,
            pattern: PatternKind::Normal,
            raw: String::new(),
        };
        r.raw = r.render();
        r
    }

    /// Builds an abnormal-pattern response; `raw` is the canonical rendering.
    pub fn abnormal(
        think: impl Into<String>,
        location: impl Into<String>,
        anomaly_type: impl Into<String>,
        answer: Answer,
    ) -> Self {
        let mut r = StructuredResponse {
            think: think.into(),
            location: Some(location.into()),
            anomaly_type: Some(anomaly_type.into()),
            answer,
            pattern: PatternKind::Abnormal,
            raw: String::new(),
        };
        r.raw = r.render();
        r
    }

    /// Emits the canonical tag sequence for this response.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.think.len() + 64);
        out.push_str("<think>");
        out.push_str(&self.think);
        out.push_str("</think>");
        if self.pattern == PatternKind::Abnormal {
            out.push_str("<location>");
            out.push_str(self.location.as_deref().unwrap_or_default());
            out.push_str("</location><type>");
            out.push_str(self.anomaly_type.as_deref().unwrap_or_default());
            out.push_str("</type>");
        }
        out.push_str("<answer>");
        out.push_str(self.answer.as_str());
        out.push_str("</answer>");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    MissingTag,
    TagOrder,
    DuplicateTag,
    EmptyAnswer,
    UnknownAnswerToken,
    TrailingContent,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Violation::MissingTag => "missing tag",
            Violation::TagOrder => "tag out of order",
            Violation::DuplicateTag => "duplicate tag",
            Violation::EmptyAnswer => "empty answer",
            Violation::UnknownAnswerToken => "unknown answer token",
            Violation::TrailingContent => "content outside tags",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedReport {
    pub first_violation: Violation,
    pub byte_offset: usize,
}

impl fmt::Display for MalformedReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}", self.first_violation, self.byte_offset)
    }
}

/// Result of [`parse`]. Every input yields exactly one of the two variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseOutcome {
    Structured(StructuredResponse),
    Malformed(MalformedReport),
}

impl ParseOutcome {
    pub fn response(&self) -> Option<&StructuredResponse> {
        match self {
            ParseOutcome::Structured(r) => Some(r),
            ParseOutcome::Malformed(_) => None,
        }
    }

    pub fn into_response(self) -> Option<StructuredResponse> {
        match self {
            ParseOutcome::Structured(r) => Some(r),
            ParseOutcome::Malformed(_) => None,
        }
    }

    pub fn malformed(&self) -> Option<&MalformedReport> {
        match self {
            ParseOutcome::Structured(_) => None,
            ParseOutcome::Malformed(m) => Some(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Think,
    Location,
    Type,
    Answer,
}

impl Tag {
    const ALL: [Tag; 4] = [Tag::Think, Tag::Location, Tag::Type, Tag::Answer];

    fn open(self) -> &'static str {
        match self {
            Tag::Think => "<think>",
            Tag::Location => "<location>",
            Tag::Type => "<type>",
            Tag::Answer => "<answer>",
        }
    }

    fn close(self) -> &'static str {
        match self {
            Tag::Think => "</think>",
            Tag::Location => "</location>",
            Tag::Type => "</type>",
            Tag::Answer => "</answer>",
        }
    }

    fn rank(self) -> u8 {
        self as u8
    }
}

/// Returns the offset and length of the first tag marker (open or close, any
/// tag) at or after `from`.
fn next_marker(raw: &str, from: usize) -> Option<(usize, &'static str)> {
    let bytes = raw.as_bytes();
    let mut i = from;
    while let Some(rel) = bytes[i..].iter().position(|&b| b == b'<') {
        let at = i + rel;
        let rest = &raw[at..];
        for tag in Tag::ALL {
            if rest.starts_with(tag.open()) {
                return Some((at, tag.open()));
            }
            if rest.starts_with(tag.close()) {
                return Some((at, tag.close()));
            }
        }
        i = at + 1;
    }
    None
}

fn skip_ws(raw: &str, mut pos: usize) -> usize {
    for c in raw[pos..].chars() {
        if c.is_whitespace() {
            pos += c.len_utf8();
        } else {
            break;
        }
    }
    pos
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Think,
    LocationOrAnswer,
    Type,
    Answer,
    End,
}

impl Expect {
    fn accepts(self, tag: Tag) -> Option<Expect> {
        match (self, tag) {
            (Expect::Think, Tag::Think) => Some(Expect::LocationOrAnswer),
            (Expect::LocationOrAnswer, Tag::Location) => Some(Expect::Type),
            (Expect::LocationOrAnswer, Tag::Answer) => Some(Expect::End),
            (Expect::Type, Tag::Type) => Some(Expect::Answer),
            (Expect::Answer, Tag::Answer) => Some(Expect::End),
            _ => None,
        }
    }
}

fn malformed(first_violation: Violation, byte_offset: usize) -> ParseOutcome {
    ParseOutcome::Malformed(MalformedReport {
        first_violation,
        byte_offset,
    })
}

/// Parses a raw rollout into a [`StructuredResponse`] or reports the first
/// structural violation.
pub fn parse(raw: &str) -> ParseOutcome {
    let mut expect = Expect::Think;
    let mut seen = [false; 4];
    let mut last_rank: Option<u8> = None;
    let mut think = None;
    let mut location = None;
    let mut anomaly_type = None;
    let mut answer = None;

    let mut pos = skip_ws(raw, 0);
    while pos < raw.len() {
        let rest = &raw[pos..];
        let Some(tag) = Tag::ALL.into_iter().find(|t| rest.starts_with(t.open())) else {
            if Tag::ALL.iter().any(|t| rest.starts_with(t.close())) {
                // closing tag with no opener
                return malformed(Violation::MissingTag, pos);
            }
            return malformed(Violation::TrailingContent, pos);
        };

        if seen[tag as usize] {
            return malformed(Violation::DuplicateTag, pos);
        }
        match expect.accepts(tag) {
            Some(next) => expect = next,
            None => {
                let later = &raw[pos + tag.open().len()..];
                let out_of_order = last_rank.is_some_and(|r| tag.rank() < r)
                    || Tag::ALL
                        .iter()
                        .any(|t| t.rank() < tag.rank() && !seen[*t as usize] && later.contains(t.open()));
                let v = if out_of_order {
                    Violation::TagOrder
                } else {
                    Violation::MissingTag
                };
                return malformed(v, pos);
            }
        }
        seen[tag as usize] = true;
        last_rank = Some(tag.rank());

        let content_start = pos + tag.open().len();
        let (content_end, after) = match next_marker(raw, content_start) {
            Some((at, marker)) if marker == tag.close() => (at, at + marker.len()),
            Some((at, _)) => return malformed(Violation::MissingTag, at),
            None => return malformed(Violation::MissingTag, raw.len()),
        };
        let content = raw[content_start..content_end].trim();

        match tag {
            Tag::Think => think = Some(content.to_string()),
            Tag::Location | Tag::Type => {
                if content.is_empty() {
                    return malformed(Violation::MissingTag, content_start);
                }
                if tag == Tag::Location {
                    location = Some(content.to_string());
                } else {
                    anomaly_type = Some(content.to_string());
                }
            }
            Tag::Answer => {
                if content.is_empty() {
                    return malformed(Violation::EmptyAnswer, content_start);
                }
                match Answer::from_token(content) {
                    Some(a) => answer = Some(a),
                    None => return malformed(Violation::UnknownAnswerToken, content_start),
                }
            }
        }
        pos = skip_ws(raw, after);
    }

    if expect != Expect::End {
        return malformed(Violation::MissingTag, raw.len());
    }
    let (Some(think), Some(answer)) = (think, answer) else {
        return malformed(Violation::MissingTag, raw.len());
    };
    let pattern = if location.is_some() {
        PatternKind::Abnormal
    } else {
        PatternKind::Normal
    };
    ParseOutcome::Structured(StructuredResponse {
        think,
        location,
        anomaly_type,
        answer,
        pattern,
        raw: raw.to_string(),
    })
}

/// The `Match(o, P)` predicate used by the consistency reward.
pub fn matches_pattern(raw: &str, kind: PatternKind) -> bool {
    matches!(parse(raw), ParseOutcome::Structured(r) if r.pattern == kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    /// Read the answer tag, falling back to the last answer tag pair anywhere.
    Structured,
    /// Scan free text for the first standalone yes/no token.
    RawText,
}

pub fn extract_answer(raw: &str, mode: ExtractionMode) -> Option<Answer> {
    match mode {
        ExtractionMode::Structured => match parse(raw) {
            ParseOutcome::Structured(r) => Some(r.answer),
            ParseOutcome::Malformed(_) => last_answer_pair(raw),
        },
        ExtractionMode::RawText => first_decision_token(raw),
    }
}

fn last_answer_pair(raw: &str) -> Option<Answer> {
    let open = Tag::Answer.open();
    let close = Tag::Answer.close();
    let mut found = None;
    let mut from = 0;
    while let Some(rel) = raw[from..].find(open) {
        let start = from + rel + open.len();
        let Some(end_rel) = raw[start..].find(close) else {
            break;
        };
        let content = raw[start..start + end_rel].trim();
        if let Some(a) = Answer::from_token(content) {
            found = Some(a);
        }
        from = start + end_rel + close.len();
    }
    found
}

fn first_decision_token(raw: &str) -> Option<Answer> {
    raw.split(|c: char| !c.is_alphanumeric())
        .find_map(Answer::from_token)
}
