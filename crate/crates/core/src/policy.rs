//! Policy contract, the linear toy policy, and the clipped GRPO surrogate.
//!
//! One parameterization serves three roles: it scores skill documents for
//! selection, generates solution traces, and (through its summarizer)
//! proposes new skills.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{synth_summarize, SyntheticQuery};
use crate::reward::RolloutGroup;
use crate::skill_doc::{ProblemType, SkillDocument};

pub type Token = usize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("gradient contains non-finite values")]
    NonFiniteGradient,
    #[error("policy failure: {0}")]
    Failure(String),
}

/// What an injected skill contributes to the policy's context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillCue {
    pub problem_type: ProblemType,
    /// Token named by the skill's insight, if any.
    pub hint: Option<Token>,
}

impl SkillCue {
    /// Reads a document the way the toy policy does: its problem type plus
    /// the first in-vocabulary integer mentioned in the key insight.
    pub fn read(doc: &SkillDocument, vocab_size: usize) -> SkillCue {
        SkillCue { problem_type: doc.problem_type, hint: first_integer_below(&doc.key_insight, vocab_size) }
    }

    /// Token a trajectory emits to cite this skill.
    pub fn marker(&self) -> Token {
        marker_token(self.problem_type)
    }
}

/// Problem types own the lowest token ids.
pub fn marker_token(problem_type: ProblemType) -> Token {
    problem_type.index()
}

/// Filler used in place of a missing hint when tokenizing a skill.
pub const NO_HINT_TOKEN: Token = ProblemType::ALL.len();

fn first_integer_below(text: &str, bound: usize) -> Option<Token> {
    let mut current: Option<usize> = None;
    for c in text.chars().chain(core::iter::once(' ')) {
        match c.to_digit(10) {
            Some(d) => {
                current = Some(current.unwrap_or(0).saturating_mul(10).saturating_add(d as usize));
            }
            None => {
                if let Some(v) = current.take() {
                    if v < bound {
                        return Some(v);
                    }
                }
            }
        }
    }
    None
}

/// The conditioning of a generation: query evidence plus an optional skill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditioning {
    pub query_tokens: Vec<Token>,
    pub skill: Option<SkillCue>,
}

impl Conditioning {
    pub fn unaided(query: &SyntheticQuery) -> Conditioning {
        Conditioning { query_tokens: query.surface_tokens.clone(), skill: None }
    }

    pub fn with_skill(query: &SyntheticQuery, cue: SkillCue) -> Conditioning {
        Conditioning { query_tokens: query.surface_tokens.clone(), skill: Some(cue) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub tokens: Vec<Token>,
    /// Per-token log-probs under the sampling snapshot.
    pub logprobs_old: Vec<f64>,
    pub conditioning: Conditioning,
    /// Version of the snapshot the trace was sampled from.
    pub snapshot: u64,
}

impl Trace {
    pub fn check_shape(&self) -> Result<(), PolicyError> {
        if self.tokens.is_empty() || self.tokens.len() != self.logprobs_old.len() {
            return Err(PolicyError::ShapeMismatch(alloc::format!(
                "trace has {} tokens and {} old log-probs",
                self.tokens.len(),
                self.logprobs_old.len()
            )));
        }
        Ok(())
    }
}

/// Behavioral contract for any policy driven by the engine.
pub trait PolicyInterface {
    fn vocab_size(&self) -> usize;

    /// Log-probabilities over the vocabulary for the next token.
    fn token_logprobs(&self, ctx: &Conditioning, prefix: &[Token]) -> Vec<f64>;

    /// The policy's own tokenization of a skill document.
    fn skill_tokens(&self, doc: &SkillDocument) -> Vec<Token>;

    /// How an injected document enters the context.
    fn skill_cue(&self, doc: &SkillDocument) -> SkillCue {
        SkillCue::read(doc, self.vocab_size())
    }

    /// Monotone parameter version; traces record it.
    fn version(&self) -> u64;

    /// The skill-generation rollout: raw text, validated by the caller.
    fn summarize<R: Rng + ?Sized>(&self, query: &SyntheticQuery, successful: &[Trace], rng: &mut R) -> String;

    /// Immutable copy usable as the sampling policy for a step.
    fn snapshot(&self) -> Self
    where
        Self: Sized + Clone,
    {
        self.clone()
    }

    /// Samples `max_len` tokens; temperature 0 decodes greedily.
    fn sample_trace<R: Rng + ?Sized>(&self, ctx: &Conditioning, max_len: usize, temperature: f64, rng: &mut R) -> Trace {
        let mut tokens = Vec::with_capacity(max_len);
        let mut logprobs = Vec::with_capacity(max_len);
        for _ in 0..max_len {
            let lp = self.token_logprobs(ctx, &tokens);
            let next = if temperature <= 0.0 { argmax(&lp) } else { sample_tempered(&lp, temperature, rng) };
            tokens.push(next);
            logprobs.push(lp[next]);
        }
        Trace { tokens, logprobs_old: logprobs, conditioning: ctx.clone(), snapshot: self.version() }
    }
}

/// Policies whose log-probs can be differentiated with respect to a flat
/// parameter vector.
pub trait DifferentiablePolicy: PolicyInterface {
    fn params(&self) -> &[f64];

    /// Applies `params += delta` and bumps the version.
    fn apply_update(&mut self, delta: &[f64]);

    /// Computes `log π(token | ctx, prefix)` and adds
    /// `scale(logp) * ∂ log π / ∂θ` into `grad`. Returns the log-prob.
    fn logprob_grad<F: FnOnce(f64) -> f64>(
        &self,
        ctx: &Conditioning,
        prefix: &[Token],
        token: Token,
        grad: &mut [f64],
        scale: F,
    ) -> f64;
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + libm::log(values.iter().map(|v| libm::exp(v - max)).sum::<f64>())
}

fn sample_tempered<R: Rng + ?Sized>(logprobs: &[f64], temperature: f64, rng: &mut R) -> Token {
    let max = logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logprobs.iter().map(|lp| libm::exp((lp - max) / temperature)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Sum of per-token conditional log-probs of `sequence` after `prefix`.
pub fn sequence_logprob<P: PolicyInterface + ?Sized>(
    policy: &P,
    ctx: &Conditioning,
    prefix: &[Token],
    sequence: &[Token],
) -> f64 {
    let mut extended = Vec::with_capacity(prefix.len() + sequence.len());
    extended.extend_from_slice(prefix);
    let mut total = 0.0;
    for &tok in sequence {
        total += policy.token_logprobs(ctx, &extended)[tok];
        extended.push(tok);
    }
    total
}

/// Clipped surrogate objective and its gradient.
///
/// Per group: `(1/G) Σ_i (1/|τ_i|) Σ_l min(ρ Â, clip(ρ) Â)`, averaged over
/// groups. Returned as a quantity to maximize.
pub fn grpo_objective<P: DifferentiablePolicy>(
    policy: &P,
    groups: &[RolloutGroup],
    clip_eps: f64,
) -> Result<(f64, Vec<f64>), PolicyError> {
    let mut grad = vec![0.0; policy.params().len()];
    if groups.is_empty() {
        return Ok((0.0, grad));
    }
    let group_weight = 1.0 / groups.len() as f64;
    let mut objective = 0.0;
    for group in groups {
        if group.outcomes.is_empty() {
            return Err(PolicyError::ShapeMismatch("empty rollout group".into()));
        }
        let traj_weight = group_weight / group.outcomes.len() as f64;
        for outcome in &group.outcomes {
            let trace = &outcome.trace;
            trace.check_shape()?;
            let adv = outcome.advantage;
            let weight = traj_weight / trace.tokens.len() as f64;
            for (l, (&tok, &old)) in trace.tokens.iter().zip(&trace.logprobs_old).enumerate() {
                let mut term = 0.0;
                policy.logprob_grad(&trace.conditioning, &trace.tokens[..l], tok, &mut grad, |logp| {
                    let ratio = libm::exp(logp - old);
                    let unclipped = ratio * adv;
                    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
                    if unclipped <= clipped {
                        term = unclipped;
                        weight * unclipped
                    } else {
                        term = clipped;
                        0.0
                    }
                });
                objective += weight * term;
            }
        }
    }
    Ok((objective, grad))
}

/// Gradient ascent: `θ ← θ + lr · grad`.
pub fn sgd_step<P: DifferentiablePolicy>(policy: &mut P, gradient: &[f64], learning_rate: f64) -> Result<(), PolicyError> {
    if gradient.len() != policy.params().len() {
        return Err(PolicyError::ShapeMismatch(alloc::format!(
            "gradient has {} entries, policy has {}",
            gradient.len(),
            policy.params().len()
        )));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(PolicyError::NonFiniteGradient);
    }
    let delta: Vec<f64> = gradient.iter().map(|g| learning_rate * g).collect();
    policy.apply_update(&delta);
    Ok(())
}

/// Row layout of the toy policy's parameter matrix.
///
/// Active feature rows for a context:
/// * previous token (or start)
/// * query bucket × previous token
/// * one row per type marker present in the query, weighted by its count
/// * skill problem type (or none) × previous token
/// * the skill's hint token, when present
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub vocab_size: usize,
    pub query_buckets: usize,
}

const NUM_MARKERS: usize = ProblemType::ALL.len();

impl FeatureLayout {
    pub fn new(vocab_size: usize, query_buckets: usize) -> FeatureLayout {
        assert!(vocab_size > NUM_MARKERS, "vocabulary must exceed the marker range");
        assert!(query_buckets >= 1);
        FeatureLayout { vocab_size, query_buckets }
    }

    fn prev_slots(&self) -> usize {
        self.vocab_size + 1
    }

    fn start(&self) -> usize {
        self.vocab_size
    }

    fn query_offset(&self) -> usize {
        self.prev_slots()
    }

    fn surface_offset(&self) -> usize {
        self.query_offset() + self.query_buckets * self.prev_slots()
    }

    fn skill_offset(&self) -> usize {
        self.surface_offset() + NUM_MARKERS
    }

    fn hint_offset(&self) -> usize {
        self.skill_offset() + (NUM_MARKERS + 1) * self.prev_slots()
    }

    pub fn rows(&self) -> usize {
        self.hint_offset() + self.vocab_size
    }

    pub fn query_bucket(&self, query_tokens: &[Token]) -> usize {
        let mut bucket = 0usize;
        for &t in query_tokens {
            bucket = (bucket.wrapping_mul(NUM_MARKERS + 1).wrapping_add(t.min(NUM_MARKERS) + 1)) % self.query_buckets;
        }
        bucket
    }

    /// Active `(row, value)` pairs; at most `4 + NUM_MARKERS` entries.
    pub fn features(&self, ctx: &Conditioning, prefix: &[Token]) -> Vec<(usize, f64)> {
        let prev = prefix.last().copied().unwrap_or(self.start()).min(self.start());
        let mut out = Vec::with_capacity(4 + NUM_MARKERS);
        out.push((prev, 1.0));
        out.push((self.query_offset() + self.query_bucket(&ctx.query_tokens) * self.prev_slots() + prev, 1.0));
        let mut counts = [0u32; NUM_MARKERS];
        for &t in &ctx.query_tokens {
            if t < NUM_MARKERS {
                counts[t] += 1;
            }
        }
        for (t, &c) in counts.iter().enumerate() {
            if c > 0 {
                out.push((self.surface_offset() + t, f64::from(c)));
            }
        }
        let skill_slot = ctx.skill.map_or(0, |s| s.problem_type.index() + 1);
        out.push((self.skill_offset() + skill_slot * self.prev_slots() + prev, 1.0));
        if let Some(h) = ctx.skill.and_then(|s| s.hint) {
            if h < self.vocab_size {
                out.push((self.hint_offset() + h, 1.0));
            }
        }
        out
    }
}

/// Linear-softmax policy: `logits = φ(context)ᵀ W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub layout: FeatureLayout,
    /// Row-major `rows × vocab_size`.
    pub weights: Vec<f64>,
    pub version: u64,
    /// Probability that the skill summarizer emits malformed output.
    pub fault_probability: f64,
}

impl ToyPolicy {
    /// All-zero weights: uniform over the vocabulary in every context.
    pub fn uniform(layout: FeatureLayout) -> ToyPolicy {
        ToyPolicy { layout, weights: vec![0.0; layout.rows() * layout.vocab_size], version: 0, fault_probability: 0.0 }
    }

    /// Starting point for training: a tendency to repeat type markers seen in
    /// the query (`copy_prior`) and to emit a skill's hinted token
    /// (`hint_prior`).
    pub fn with_priors(layout: FeatureLayout, copy_prior: f64, hint_prior: f64, fault_probability: f64) -> ToyPolicy {
        let mut p = ToyPolicy::uniform(layout);
        p.fault_probability = fault_probability;
        for t in 0..NUM_MARKERS {
            let row = layout.surface_offset() + t;
            p.weights[row * layout.vocab_size + t] = copy_prior;
        }
        for h in 0..layout.vocab_size {
            let row = layout.hint_offset() + h;
            p.weights[row * layout.vocab_size + h] = hint_prior;
        }
        p
    }

    /// Greedy decoding walks `answers` in order from the start token, so any
    /// trace of at least `answers.len()` tokens contains every answer.
    pub fn oracle(layout: FeatureLayout, answers: &[Token], strength: f64) -> ToyPolicy {
        let mut p = ToyPolicy::uniform(layout);
        let v = layout.vocab_size;
        let mut prev = layout.start();
        for &a in answers.iter().chain(answers.first()) {
            p.weights[prev * v + a] = strength;
            prev = a;
        }
        p
    }

    pub fn logits(&self, ctx: &Conditioning, prefix: &[Token]) -> Vec<f64> {
        let v = self.layout.vocab_size;
        let mut logits = vec![0.0; v];
        for (row, value) in self.layout.features(ctx, prefix) {
            let w = &self.weights[row * v..(row + 1) * v];
            for (l, wi) in logits.iter_mut().zip(w) {
                *l += value * wi;
            }
        }
        logits
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let v = self.layout.vocab_size;
        &self.weights[row * v..(row + 1) * v]
    }
}

impl PolicyInterface for ToyPolicy {
    fn vocab_size(&self) -> usize {
        self.layout.vocab_size
    }

    fn token_logprobs(&self, ctx: &Conditioning, prefix: &[Token]) -> Vec<f64> {
        let mut logits = self.logits(ctx, prefix);
        let lse = log_sum_exp(&logits);
        for l in &mut logits {
            *l -= lse;
        }
        logits
    }

    /// `[type marker, hinted token or filler]`.
    fn skill_tokens(&self, doc: &SkillDocument) -> Vec<Token> {
        let cue = self.skill_cue(doc);
        vec![cue.marker(), cue.hint.unwrap_or(NO_HINT_TOKEN)]
    }

    fn version(&self) -> u64 {
        self.version
    }

    fn summarize<R: Rng + ?Sized>(&self, query: &SyntheticQuery, successful: &[Trace], rng: &mut R) -> String {
        synth_summarize(query, successful, self.fault_probability, rng)
    }
}

impl DifferentiablePolicy for ToyPolicy {
    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn apply_update(&mut self, delta: &[f64]) {
        for (w, d) in self.weights.iter_mut().zip(delta) {
            *w += d;
        }
        self.version += 1;
    }

    fn logprob_grad<F: FnOnce(f64) -> f64>(
        &self,
        ctx: &Conditioning,
        prefix: &[Token],
        token: Token,
        grad: &mut [f64],
        scale: F,
    ) -> f64 {
        let v = self.layout.vocab_size;
        let features = self.layout.features(ctx, prefix);
        let mut logits = vec![0.0; v];
        for &(row, value) in &features {
            for (l, wi) in logits.iter_mut().zip(&self.weights[row * v..(row + 1) * v]) {
                *l += value * wi;
            }
        }
        let lse = log_sum_exp(&logits);
        let logp = logits[token] - lse;
        let s = scale(logp);
        if s != 0.0 {
            // ∂ log π(x) / ∂ W[row, j] = value · (1[j = x] − π(j))
            for &(row, value) in &features {
                let g = &mut grad[row * v..(row + 1) * v];
                for (j, gj) in g.iter_mut().enumerate() {
                    let p = libm::exp(logits[j] - lse);
                    let indicator = if j == token { 1.0 } else { 0.0 };
                    *gj += s * value * (indicator - p);
                }
            }
        }
        logp
    }
}
