//! Skill documents and the distillation-output validation pipeline.
//!
//! A skill is a five-field JSON document. Raw generator output goes through
//! extraction, parsing, and truncation; when the output is not usable JSON a
//! minimal document is abstracted directly from a successful trace instead.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MAX_NAME_CHARS: usize = 40;
pub const MAX_INSIGHT_CHARS: usize = 160;
pub const MAX_STEP_CHARS: usize = 100;
pub const MAX_CHECK_CHARS: usize = 100;
/// Cap on the summed character length of all field values.
pub const MAX_TOTAL_CHARS: usize = 220;
pub const MIN_METHOD_STEPS: usize = 2;
pub const MAX_METHOD_STEPS: usize = 3;
pub const DEFAULT_CHECK: &str = "Substitute back to verify";

const FALLBACK_NAME: &str = "trace_abstract";
const FALLBACK_PREFIX: &str = "Solve by: ";
const FALLBACK_METHOD: [&str; 2] = ["Follow the successful trace", "Check the final answer"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemType {
    Algebra,
    Geometry,
    Combinatorics,
    NumberTheory,
    Calculus,
    General,
}

impl ProblemType {
    pub const ALL: [ProblemType; 6] = [
        ProblemType::Algebra,
        ProblemType::Geometry,
        ProblemType::Combinatorics,
        ProblemType::NumberTheory,
        ProblemType::Calculus,
        ProblemType::General,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemType::Algebra => "algebra",
            ProblemType::Geometry => "geometry",
            ProblemType::Combinatorics => "combinatorics",
            ProblemType::NumberTheory => "number_theory",
            ProblemType::Calculus => "calculus",
            ProblemType::General => "general",
        }
    }

    /// Lenient parse: case and separators are normalized, anything
    /// unrecognized becomes `General`.
    pub fn parse_lenient(raw: &str) -> ProblemType {
        let norm: String = raw
            .trim()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
            .collect();
        ProblemType::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .unwrap_or(ProblemType::General)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ProblemType> {
        ProblemType::ALL.get(i).copied()
    }
}

impl fmt::Display for ProblemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A reusable reasoning skill. Field order is the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillDocument {
    pub skill_name: String,
    pub problem_type: ProblemType,
    pub key_insight: String,
    pub method: Vec<String>,
    pub check: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SkillParseError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing or empty required field `{0}`")]
    MissingField(&'static str),
    #[error("method must hold 2-3 steps, found {0}")]
    BadMethodArity(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaViolation {
    #[error("field `{field}` has {len} chars, limit {limit}")]
    FieldTooLong { field: &'static str, len: usize, limit: usize },
    #[error("field `{0}` is empty")]
    Empty(&'static str),
    #[error("skill_name `{0}` is not snake_case")]
    NotSnakeCase(String),
    #[error("method has {0} steps")]
    MethodArity(usize),
    #[error("total content length {0} exceeds {MAX_TOTAL_CHARS}")]
    TotalTooLong(usize),
}

/// Character length as Unicode scalar count.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

fn clip(s: &str, limit: usize) -> String {
    s.chars().take(limit).collect()
}

fn is_snake_case(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Lowercases, maps every other character to `_`, collapses runs and trims.
fn to_snake_case(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.trim().chars() {
        let c = c.to_ascii_lowercase();
        if c.is_ascii_lowercase() || c.is_ascii_digit() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

impl SkillDocument {
    /// Sum of the character lengths of every field value.
    pub fn content_len(&self) -> usize {
        char_len(&self.skill_name)
            + char_len(self.problem_type.as_str())
            + char_len(&self.key_insight)
            + self.method.iter().map(|s| char_len(s)).sum::<usize>()
            + char_len(&self.check)
    }

    pub fn check_invariants(&self) -> Result<(), SchemaViolation> {
        let bounded = |field, value: &str, limit| {
            let len = char_len(value);
            if len > limit {
                Err(SchemaViolation::FieldTooLong { field, len, limit })
            } else {
                Ok(())
            }
        };
        if self.skill_name.is_empty() {
            return Err(SchemaViolation::Empty("skill_name"));
        }
        if !is_snake_case(&self.skill_name) {
            return Err(SchemaViolation::NotSnakeCase(self.skill_name.clone()));
        }
        bounded("skill_name", &self.skill_name, MAX_NAME_CHARS)?;
        if self.key_insight.is_empty() {
            return Err(SchemaViolation::Empty("key_insight"));
        }
        bounded("key_insight", &self.key_insight, MAX_INSIGHT_CHARS)?;
        if !(MIN_METHOD_STEPS..=MAX_METHOD_STEPS).contains(&self.method.len()) {
            return Err(SchemaViolation::MethodArity(self.method.len()));
        }
        for step in &self.method {
            bounded("method", step, MAX_STEP_CHARS)?;
        }
        bounded("check", &self.check, MAX_CHECK_CHARS)?;
        let total = self.content_len();
        if total > MAX_TOTAL_CHARS {
            return Err(SchemaViolation::TotalTooLong(total));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.check_invariants().is_ok()
    }

    /// Compact single-line JSON in schema field order.
    pub fn to_canonical_json(&self) -> String {
        // Serializing plain strings and a unit enum cannot fail.
        serde_json::to_string(self).unwrap_or_default()
    }

    /// Strict inverse of [`SkillDocument::to_canonical_json`].
    pub fn from_canonical_json(text: &str) -> Result<SkillDocument, SkillParseError> {
        serde_json::from_str(text).map_err(|e| SkillParseError::MalformedJson(e.to_string()))
    }
}

/// Isolates the first balanced JSON object in `raw`, skipping fences and prose.
pub fn extract_json(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, c) in raw[start..].char_indices() {
        if in_string {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn required_text(obj: &serde_json::Map<String, Value>, field: &'static str) -> Result<String, SkillParseError> {
    match obj.get(field) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        _ => Err(SkillParseError::MissingField(field)),
    }
}

fn coerce_step(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn parse_method(v: Option<&Value>) -> Result<Vec<String>, SkillParseError> {
    let steps: Vec<String> = match v {
        None | Some(Value::Null) => return Err(SkillParseError::MissingField("method")),
        Some(Value::String(s)) => s
            .split([';', '\n'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(ToString::to_string)
            .collect(),
        Some(Value::Array(items)) => {
            if items.is_empty() {
                return Err(SkillParseError::MissingField("method"));
            }
            let mut steps = Vec::with_capacity(items.len());
            for item in items {
                match coerce_step(item) {
                    Some(s) if !s.is_empty() => steps.push(s),
                    Some(_) => {}
                    None => return Err(SkillParseError::BadMethodArity(items.len())),
                }
            }
            steps
        }
        Some(_) => return Err(SkillParseError::BadMethodArity(0)),
    };
    if steps.is_empty() {
        return Err(SkillParseError::MissingField("method"));
    }
    if !(MIN_METHOD_STEPS..=MAX_METHOD_STEPS).contains(&steps.len()) {
        return Err(SkillParseError::BadMethodArity(steps.len()));
    }
    Ok(steps)
}

/// Deserializes a candidate object and checks field presence and types.
///
/// Length limits are not enforced here; see [`truncate_fields`].
pub fn parse_and_validate(json_text: &str) -> Result<SkillDocument, SkillParseError> {
    let value: Value =
        serde_json::from_str(json_text).map_err(|e| SkillParseError::MalformedJson(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(SkillParseError::MalformedJson("top-level value is not an object".into()));
    };
    let skill_name = to_snake_case(&required_text(&obj, "skill_name")?);
    if skill_name.is_empty() {
        return Err(SkillParseError::MissingField("skill_name"));
    }
    let key_insight = required_text(&obj, "key_insight")?;
    let method = parse_method(obj.get("method"))?;
    let problem_type = match obj.get("problem_type") {
        Some(Value::String(s)) => ProblemType::parse_lenient(s),
        _ => ProblemType::General,
    };
    let check = match obj.get("check") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        _ => DEFAULT_CHECK.to_string(),
    };
    Ok(SkillDocument { skill_name, problem_type, key_insight, method, check })
}

/// Clips every field to its limit. `None` means the document is discarded
/// because the clipped content still exceeds the total cap.
pub fn truncate_fields(doc: SkillDocument) -> Option<SkillDocument> {
    let doc = SkillDocument {
        skill_name: clip(&doc.skill_name, MAX_NAME_CHARS),
        problem_type: doc.problem_type,
        key_insight: clip(&doc.key_insight, MAX_INSIGHT_CHARS),
        method: doc
            .method
            .iter()
            .take(MAX_METHOD_STEPS)
            .map(|s| clip(s, MAX_STEP_CHARS))
            .collect(),
        check: clip(&doc.check, MAX_CHECK_CHARS),
    };
    (doc.content_len() <= MAX_TOTAL_CHARS).then_some(doc)
}

/// Minimal document abstracted from a single successful trace.
pub fn fallback_from_trace(trace: &str) -> SkillDocument {
    let fixed = char_len(FALLBACK_NAME)
        + char_len(ProblemType::General.as_str())
        + FALLBACK_METHOD.iter().map(|s| char_len(s)).sum::<usize>()
        + char_len(DEFAULT_CHECK)
        + char_len(FALLBACK_PREFIX);
    let budget = (MAX_TOTAL_CHARS - fixed).min(MAX_INSIGHT_CHARS - char_len(FALLBACK_PREFIX));
    let mut compact = String::with_capacity(trace.len());
    for word in trace.split_whitespace() {
        if !compact.is_empty() {
            compact.push(' ');
        }
        compact.push_str(word);
    }
    let mut key_insight = String::from(FALLBACK_PREFIX);
    key_insight.push_str(clip(&compact, budget).trim_end());
    SkillDocument {
        skill_name: FALLBACK_NAME.to_string(),
        problem_type: ProblemType::General,
        key_insight,
        method: FALLBACK_METHOD.iter().map(|s| s.to_string()).collect(),
        check: DEFAULT_CHECK.to_string(),
    }
}

/// Stage at which the primary path gave up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureStage {
    Extraction,
    Parsing(SkillParseError),
}

impl fmt::Display for FailureStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureStage::Extraction => f.write_str("extraction: no balanced JSON object"),
            FailureStage::Parsing(e) => write!(f, "parsing: {e}"),
        }
    }
}

/// Detailed result of running raw generator output through the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PipelineOutcome {
    /// Primary path succeeded.
    Accepted(SkillDocument),
    /// Primary path failed; document abstracted from the first trace.
    Fallback { doc: SkillDocument, stage: FailureStage },
    /// Primary path failed and no trace was available.
    Rejected(FailureStage),
    /// Parsed, but over the total cap after clipping.
    Discarded,
}

impl PipelineOutcome {
    pub fn document(&self) -> Option<&SkillDocument> {
        match self {
            PipelineOutcome::Accepted(doc) | PipelineOutcome::Fallback { doc, .. } => Some(doc),
            _ => None,
        }
    }

    pub fn into_document(self) -> Option<SkillDocument> {
        match self {
            PipelineOutcome::Accepted(doc) | PipelineOutcome::Fallback { doc, .. } => Some(doc),
            _ => None,
        }
    }

    pub fn used_fallback(&self) -> bool {
        matches!(self, PipelineOutcome::Fallback { .. })
    }
}

pub fn run_pipeline<S: AsRef<str>>(raw: &str, successful_traces: &[S]) -> PipelineOutcome {
    let parsed = match extract_json(raw) {
        None => Err(FailureStage::Extraction),
        Some(obj) => parse_and_validate(obj).map_err(FailureStage::Parsing),
    };
    match parsed {
        Ok(doc) => match truncate_fields(doc) {
            Some(doc) => PipelineOutcome::Accepted(doc),
            None => PipelineOutcome::Discarded,
        },
        Err(stage) => match successful_traces.first() {
            Some(trace) => PipelineOutcome::Fallback { doc: fallback_from_trace(trace.as_ref()), stage },
            None => PipelineOutcome::Rejected(stage),
        },
    }
}

/// Extract, parse, truncate; falls back to trace abstraction when the output
/// is not usable JSON. `None` when the document is discarded or no fallback
/// trace exists.
pub fn validate_pipeline<S: AsRef<str>>(raw: &str, successful_traces: &[S]) -> Option<SkillDocument> {
    run_pipeline(raw, successful_traces).into_document()
}
