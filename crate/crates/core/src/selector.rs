//! Skill selection: log-prob relevance scores, a temperature softmax, the
//! confidence gate, and the ε-greedy mixture.

use alloc::vec::Vec;

use rand::Rng;
use serde::Serialize;

use crate::env::SyntheticQuery;
use crate::policy::{argmax, sequence_logprob, Conditioning, PolicyError, PolicyInterface};
use crate::skill_doc::SkillDocument;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectionError {
    #[error("cannot build a selection distribution from zero scores")]
    EmptyScores,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

/// Anything that can rate how relevant a skill document is to a query.
pub trait SkillScorer<Q: ?Sized> {
    fn score(&self, query: &Q, doc: &SkillDocument, token_cap: usize) -> Result<f64, PolicyError>;
}

impl<P: PolicyInterface> SkillScorer<SyntheticQuery> for P {
    fn score(&self, query: &SyntheticQuery, doc: &SkillDocument, token_cap: usize) -> Result<f64, PolicyError> {
        Ok(score_skill(self, query, doc, token_cap))
    }
}

/// `Σ_l log π(m^(l) | q, m^(<l))` over at most `token_cap` skill tokens.
pub fn score_skill<P: PolicyInterface + ?Sized>(
    policy: &P,
    query: &SyntheticQuery,
    doc: &SkillDocument,
    token_cap: usize,
) -> f64 {
    let tokens = policy.skill_tokens(doc);
    let n = tokens.len().min(token_cap);
    sequence_logprob(policy, &Conditioning::unaided(query), &[], &tokens[..n])
}

pub fn score_all<Q: ?Sized, S: SkillScorer<Q> + ?Sized>(
    scorer: &S,
    query: &Q,
    docs: &[&SkillDocument],
    token_cap: usize,
) -> Result<Vec<f64>, PolicyError> {
    docs.iter().map(|d| scorer.score(query, d, token_cap)).collect()
}

/// Numerically stable `softmax(scores / temperature)`.
pub fn selection_distribution(scores: &[f64], temperature: f64) -> Result<Vec<f64>, SelectionError> {
    if scores.is_empty() {
        return Err(SelectionError::EmptyScores);
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(SelectionError::NonFiniteScore(*bad));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| libm::exp((s - max) / temperature)).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionDecision {
    /// Cache index, or `None` for the no-skill action.
    pub chosen: Option<usize>,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub gate_passed: bool,
    pub explored: bool,
}

impl SelectionDecision {
    pub fn abstain(scores: Vec<f64>, probabilities: Vec<f64>) -> SelectionDecision {
        SelectionDecision { chosen: None, scores, probabilities, gate_passed: false, explored: false }
    }
}

/// Gate first: abstain when `max p < delta`. Otherwise exploit the argmax
/// with probability `1 − epsilon` or pick uniformly over all entries.
///
/// The random draw happens only when the gate passes.
pub fn select<R: Rng + ?Sized>(probs: &[f64], epsilon: f64, delta: f64, rng: &mut R) -> SelectionDecision {
    if probs.is_empty() {
        return SelectionDecision::abstain(Vec::new(), Vec::new());
    }
    let best = argmax(probs);
    if probs[best] < delta {
        return SelectionDecision::abstain(Vec::new(), probs.to_vec());
    }
    let explored = rng.gen::<f64>() < epsilon;
    let chosen = if explored { rng.gen_range(0..probs.len()) } else { best };
    SelectionDecision { chosen: Some(chosen), scores: Vec::new(), probabilities: probs.to_vec(), gate_passed: true, explored }
}

/// Scores → distribution → gated ε-greedy decision. An empty cache abstains.
pub fn decide<R: Rng + ?Sized>(
    scores: Vec<f64>,
    temperature: f64,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<SelectionDecision, SelectionError> {
    if scores.is_empty() {
        return Ok(SelectionDecision::abstain(Vec::new(), Vec::new()));
    }
    let probs = selection_distribution(&scores, temperature)?;
    let mut d = select(&probs, epsilon, delta, rng);
    d.scores = scores;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{seed_skills, EnvConfig};
    use crate::policy::{FeatureLayout, ToyPolicy};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_policy_scores_closed_form() {
        let p = ToyPolicy::uniform(FeatureLayout::new(32, 8));
        let q = SyntheticQuery { id: 0, latent_type: 1, surface_tokens: vec![1, 1, 1], answer_token: EnvConfig::default().answer_token(1) };
        let doc = &seed_skills()[0];
        let s = score_skill(&p, &q, doc, 128);
        assert!((s - 2.0 * libm::log(1.0 / 32.0)).abs() < 1e-12);
        assert_eq!(score_skill(&p, &q, doc, 0), 0.0);
        assert!((score_skill(&p, &q, doc, 1) - libm::log(1.0 / 32.0)).abs() < 1e-12);
    }

    #[test]
    fn distribution_examples() {
        assert_eq!(selection_distribution(&[], 1.0), Err(SelectionError::EmptyScores));
        let p = selection_distribution(&[-3.0; 10], 1.0).unwrap();
        assert!(p.iter().all(|x| (x - 0.1).abs() < 1e-15));
        let p = selection_distribution(&[0.0, -50.0], 1.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15);
        // e^-50 ≈ 1.93e-22
        assert!((p[1] - libm::exp(-50.0)).abs() < 1e-35);
        assert!((p[1] - 1.9287e-22).abs() < 1e-26);
    }

    #[test]
    fn uniform_cache_abstains() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = select(&[0.1; 10], 0.1, 0.35, &mut rng);
        assert_eq!(d.chosen, None);
        assert!(!d.gate_passed);
    }

    #[test]
    fn pure_exploitation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = select(&[0.9, 0.1], 0.0, 0.35, &mut rng);
        assert_eq!((d.chosen, d.explored, d.gate_passed), (Some(0), false, true));
        let d = select(&[0.5, 0.5], 0.0, 0.35, &mut rng);
        assert_eq!(d.chosen, Some(0));
    }

    #[test]
    fn empty_cache_abstains() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = decide(vec![], 1.0, 0.1, 0.35, &mut rng).unwrap();
        assert_eq!(d.chosen, None);
    }
}
