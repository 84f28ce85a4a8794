//! Desk-scale task distribution: queries with a latent type, a verifier, the
//! seed skills, prompt templates, and the templated skill summarizer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::policy::{Token, Trace};
use crate::skill_doc::{ProblemType, SkillDocument, DEFAULT_CHECK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub vocab_size: usize,
    /// Number of latent types (K); each aligns with one problem type.
    pub num_types: usize,
    pub surface_len: usize,
    /// Per-token probability that a surface token points at a wrong type.
    pub noise: f64,
    pub max_trace_len: usize,
    /// Probability that the summarizer emits malformed output.
    pub fault_probability: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { vocab_size: 32, num_types: 6, surface_len: 3, noise: 0.25, max_trace_len: 8, fault_probability: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvConfigError {
    #[error("num_types must be between 2 and {max}, got {got}")]
    NumTypes { got: usize, max: usize },
    #[error("vocab_size {got} too small for {types} types (need at least {need})")]
    Vocab { got: usize, types: usize, need: usize },
    #[error("{0} must be in [0, 1]")]
    Probability(&'static str),
    #[error("{0} must be at least 1")]
    Zero(&'static str),
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvConfigError> {
        let max = ProblemType::ALL.len();
        if self.num_types < 2 || self.num_types > max {
            return Err(EnvConfigError::NumTypes { got: self.num_types, max });
        }
        let need = 3 * self.num_types + 5;
        if self.vocab_size < need {
            return Err(EnvConfigError::Vocab { got: self.vocab_size, types: self.num_types, need });
        }
        for (name, p) in [("noise", self.noise), ("fault_probability", self.fault_probability)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(EnvConfigError::Probability(name));
            }
        }
        if self.surface_len == 0 {
            return Err(EnvConfigError::Zero("surface_len"));
        }
        if self.max_trace_len == 0 {
            return Err(EnvConfigError::Zero("max_trace_len"));
        }
        Ok(())
    }

    /// Answer token of latent type `k`. Answers sit at the top of the
    /// vocabulary, spaced three apart, clear of markers and the filler token.
    pub fn answer_token(&self, k: usize) -> Token {
        self.vocab_size - 1 - 3 * k
    }

    pub fn answer_map(&self) -> Vec<Token> {
        (0..self.num_types).map(|k| self.answer_token(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub id: u64,
    pub latent_type: usize,
    pub surface_tokens: Vec<Token>,
    pub answer_token: Token,
}

impl SyntheticQuery {
    pub fn problem_type(&self) -> ProblemType {
        ProblemType::from_index(self.latent_type).unwrap_or(ProblemType::General)
    }

    /// Textual rendering used as the question in prompts.
    pub fn question(&self) -> String {
        format!("Query {}: {}", self.id, render_trace(&self.surface_tokens))
    }
}

pub fn sample_query<R: Rng + ?Sized>(rng: &mut R, config: &EnvConfig, id: u64) -> SyntheticQuery {
    let k = config.num_types;
    let latent = rng.gen_range(0..k);
    let surface_tokens = (0..config.surface_len)
        .map(|_| {
            let flip = rng.gen::<f64>() < config.noise;
            if flip {
                let other = rng.gen_range(0..k - 1);
                if other >= latent {
                    other + 1
                } else {
                    other
                }
            } else {
                latent
            }
        })
        .collect();
    SyntheticQuery { id, latent_type: latent, surface_tokens, answer_token: config.answer_token(latent) }
}

/// True iff the answer token occurs within the first `max_len` tokens.
pub fn verify(query: &SyntheticQuery, tokens: &[Token], max_len: usize) -> bool {
    tokens.iter().take(max_len).any(|&t| t == query.answer_token)
}

pub fn render_trace(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.to_string());
    }
    out
}

fn seed(name: &str, problem_type: ProblemType, insight: &str, steps: [&str; 2]) -> SkillDocument {
    SkillDocument {
        skill_name: name.into(),
        problem_type,
        key_insight: insight.into(),
        method: steps.iter().map(|s| String::from(*s)).collect(),
        check: DEFAULT_CHECK.into(),
    }
}

/// The five documents the cache starts with.
pub fn seed_skills() -> Vec<SkillDocument> {
    use ProblemType::*;
    alloc::vec![
        seed(
            "equation_setup",
            Algebra,
            "Translate word-problem quantities into variables and equations before solving",
            ["Name each unknown quantity", "Write and solve the equations"],
        ),
        seed(
            "modular_arithmetic_check",
            NumberTheory,
            "Reduce expressions modulo small primes to constrain or verify integer solutions",
            ["Pick a small modulus", "Compare residues of both sides"],
        ),
        seed(
            "case_enumeration",
            General,
            "Systematically split into exhaustive cases and verify each independently",
            ["List exhaustive cases", "Solve and check each case"],
        ),
        seed(
            "symmetry_exploitation",
            General,
            "Identify and leverage algebraic or geometric symmetry to simplify the problem",
            ["Find the symmetry", "Reduce to one representative case"],
        ),
        seed(
            "extremal_principle",
            General,
            "Consider boundary or extremal configurations to establish bounds or find optima",
            ["Examine the extreme cases", "Bound the general case by them"],
        ),
    ]
}

/// Templated stand-in for the skill-generation rollout. Returns raw text so
/// the caller's validation pipeline runs on it; with probability
/// `fault_probability` the text is malformed.
pub fn synth_summarize<R: Rng + ?Sized>(
    query: &SyntheticQuery,
    successful: &[Trace],
    fault_probability: f64,
    rng: &mut R,
) -> String {
    let pt = query.problem_type();
    let doc = SkillDocument {
        skill_name: format!("type_{}_strategy", query.latent_type),
        problem_type: pt,
        key_insight: format!("Answer with token {} once the {} marker is named", query.answer_token, pt.as_str()),
        method: alloc::vec![
            format!("Cite marker {} for this problem type", pt.index()),
            "Emit the answer token early".into(),
        ],
        check: DEFAULT_CHECK.into(),
    };
    let text = doc.to_canonical_json();
    if rng.gen::<f64>() < fault_probability {
        // Two fault shapes: an unterminated object, or prose around the traces.
        if rng.gen::<bool>() {
            let cut = text.len() / 2;
            return String::from(&text[..cut]);
        }
        let example = successful.first().map(|t| render_trace(&t.tokens)).unwrap_or_default();
        return format!("The trajectories succeed by emitting {example}.");
    }
    text
}

pub const TRACE_CLIP_CHARS: usize = 400;
pub const MAX_PROMPT_TRACES: usize = 2;

const SUMMARY_HEADER: &str = "You are a skill distiller for math reasoning.\n\
Given one question and trajectories from the same rollout group, summarize ONE reusable skill.\n";

const SUMMARY_RULES: &str = "Output MUST be a valid JSON object and nothing else (no markdown/code fences). Schema:\n\
{\"skill_name\", \"problem_type\", \"key_insight\", \"method\", \"check\"}\n\
\n\
Rules:\n\
- Be generic and transferable; do not copy specific numbers.\n\
- Keep the whole skill within 220 characters.\n\
- key_insight is the most important field.\n\
- method must contain 2-3 concise steps.\n\
- Focus on improving correctness, not style.\n";

fn clip_chars(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// The skill-distillation prompt with at most two traces, each clipped to
/// 400 characters.
pub fn build_summary_prompt<S: AsRef<str>>(question: &str, traces: &[S]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push_str("\nQuestion: ");
    out.push_str(question);
    out.push_str("\n\nGroup trajectories:\n");
    for (i, t) in traces.iter().take(MAX_PROMPT_TRACES).enumerate() {
        out.push_str(&format!("[SUCCESS #{}] {}\n", i + 1, clip_chars(t.as_ref(), TRACE_CLIP_CHARS)));
    }
    out.push('\n');
    out.push_str(SUMMARY_RULES);
    out
}

pub const SKILL_PREFIX: &str = "SKILL:";

/// `SKILL:{json}\n<question>` when a document is injected, the bare question
/// otherwise.
pub fn build_injection_prompt(question: &str, doc: Option<&SkillDocument>) -> String {
    match doc {
        Some(d) => format!("{SKILL_PREFIX}{}\n{question}", d.to_canonical_json()),
        None => String::from(question),
    }
}

/// Inverse of [`build_injection_prompt`] on the question part.
pub fn strip_injection(prompt: &str) -> &str {
    if prompt.starts_with(SKILL_PREFIX) {
        if let Some(i) = prompt.find('\n') {
            return &prompt[i + 1..];
        }
    }
    prompt
}

/// Wraps a user message in a minimal chat template.
pub fn chat_user_turn(content: &str) -> String {
    format!("<|user|>\n{content}\n<|assistant|>\n")
}
