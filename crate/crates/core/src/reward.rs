//! Hierarchical rewards, group-relative advantages, and dynamic sampling.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::library::EntryId;
use crate::policy::{Conditioning, Trace};

/// The three reward levels: incorrect, correct unaided, correct with a skill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardLevels {
    pub incorrect: f64,
    pub correct: f64,
    pub correct_with_skill: f64,
}

impl Default for RewardLevels {
    fn default() -> Self {
        RewardLevels { incorrect: 0.0, correct: 1.0, correct_with_skill: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("reward levels must satisfy r2 > r1 > r0, got ({0}, {1}, {2})")]
pub struct InvalidRewardLevels(pub f64, pub f64, pub f64);

impl RewardLevels {
    pub fn validate(&self) -> Result<(), InvalidRewardLevels> {
        let ok = self.correct_with_skill > self.correct
            && self.correct > self.incorrect
            && self.incorrect.is_finite()
            && self.correct_with_skill.is_finite();
        if ok {
            Ok(())
        } else {
            Err(InvalidRewardLevels(self.incorrect, self.correct, self.correct_with_skill))
        }
    }

    /// Composite reward: the skill bonus is paid only for correct, skill-using
    /// trajectories.
    pub fn reward(&self, skill_used: bool, correct: bool) -> f64 {
        match (skill_used, correct) {
            (_, false) => self.incorrect,
            (false, true) => self.correct,
            (true, true) => self.correct_with_skill,
        }
    }

    /// Binary task reward.
    pub fn task_reward(&self, correct: bool) -> f64 {
        if correct {
            self.correct
        } else {
            self.incorrect
        }
    }
}

/// The integer reward table with levels 0/1/2.
pub fn hierarchical_reward(skill_used: bool, correct: bool) -> u8 {
    match (skill_used, correct) {
        (false, false) => 0,
        (false, true) => 1,
        (true, false) => 0,
        (true, true) => 2,
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// `(r_i - mean) / (std + eps)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    let (mean, std) = mean_std(rewards);
    rewards.iter().map(|r| (r - mean) / (std + eps)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdvantageProfile {
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
    pub mu: f64,
    pub sigma: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Closed-form mean, deviation, and per-level advantages for a group with
/// `n0`, `n1`, `n2` trajectories at rewards 0, 1, 2.
///
/// Panics if the group is empty.
pub fn advantage_profile(n0: usize, n1: usize, n2: usize, eps: f64) -> AdvantageProfile {
    let g = n0 + n1 + n2;
    assert!(g > 0, "advantage profile needs a nonempty group");
    let gf = g as f64;
    let (f0, f1, f2) = (n0 as f64, n1 as f64, n2 as f64);
    let mu = (f1 + 2.0 * f2) / gf;
    let var = (f1 * (1.0 - mu) * (1.0 - mu) + f2 * (2.0 - mu) * (2.0 - mu) + f0 * mu * mu) / gf;
    let sigma = libm::sqrt(var);
    let denom = sigma + eps;
    AdvantageProfile {
        n0,
        n1,
        n2,
        mu,
        sigma,
        a0: -mu / denom,
        a1: (1.0 - mu) / denom,
        a2: (2.0 - mu) / denom,
    }
}

/// All `(n0, n1, n2)` with `n0 + n1 + n2 = g`, in lexicographic order.
pub fn compositions(g: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..=g).flat_map(move |n0| (0..=g - n0).map(move |n1| (n0, n1, g - n0 - n1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub trace: Trace,
    /// An injected skill was present and the trace cited it.
    pub skill_used: bool,
    pub correct: bool,
    pub reward: f64,
    pub advantage: f64,
}

/// The trajectories sampled for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub query_id: u64,
    pub conditioning: Conditioning,
    pub selected: Option<EntryId>,
    pub outcomes: Vec<TrajectoryOutcome>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.reward).collect()
    }

    pub fn has_reward_variance(&self) -> bool {
        match self.outcomes.first() {
            None => false,
            Some(first) => self.outcomes.iter().any(|o| o.reward != first.reward),
        }
    }

    /// Fills every outcome's advantage from the group's rewards.
    pub fn assign_advantages(&mut self, eps: f64) {
        let adv = group_advantages(&self.rewards(), eps);
        for (o, a) in self.outcomes.iter_mut().zip(adv) {
            o.advantage = a;
        }
    }

    pub fn mean_reward(&self) -> f64 {
        mean_std(&self.rewards()).0
    }

    pub fn success_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.correct).count()
    }
}

/// Drops groups whose rewards are all equal.
pub fn dynamic_filter(groups: Vec<RolloutGroup>) -> Vec<RolloutGroup> {
    groups.into_iter().filter(RolloutGroup::has_reward_variance).collect()
}
