#![allow(dead_code)]

use arise_core::policy::{Conditioning, FeatureLayout, PolicyInterface, SkillCue, ToyPolicy, Trace};
use arise_core::reward::{group_advantages, RolloutGroup, TrajectoryOutcome};
use arise_core::skill_doc::ProblemType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub policy: ToyPolicy,
    pub groups: Vec<RolloutGroup>,
    pub clip: f64,
}

/// Random weights and a few random rollout groups of size `g` whose old
/// log-probs sit near (but not at) the current ones, so ratios land on both
/// sides of the clip band.
pub fn random_instance(seed: u64, g: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = FeatureLayout::new(12, 5);
    let mut policy = ToyPolicy::uniform(layout);
    for w in &mut policy.weights {
        *w = rng.gen_range(-1.0..1.0);
    }
    let mut groups = Vec::new();
    for qid in 0..3 {
        let query_tokens: Vec<usize> = (0..3).map(|_| rng.gen_range(0..6)).collect();
        let skill = rng.gen_bool(0.5).then(|| SkillCue {
            problem_type: ProblemType::from_index(rng.gen_range(0..6)).unwrap(),
            hint: rng.gen_bool(0.5).then(|| rng.gen_range(0..12)),
        });
        let ctx = Conditioning { query_tokens, skill };
        let rewards: Vec<f64> = (0..g).map(|_| f64::from(rng.gen_range(0u8..3))).collect();
        let adv = group_advantages(&rewards, 1e-4);
        let outcomes = (0..g)
            .map(|i| {
                let len = rng.gen_range(1..5);
                let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..12)).collect();
                let logprobs_old = (0..len)
                    .map(|l| policy.token_logprobs(&ctx, &tokens[..l])[tokens[l]] + rng.gen_range(-0.4..0.4))
                    .collect();
                let trace = Trace { tokens, logprobs_old, conditioning: ctx.clone(), snapshot: 0 };
                TrajectoryOutcome { trace, skill_used: false, correct: rewards[i] > 0.0, reward: rewards[i], advantage: adv[i] }
            })
            .collect();
        groups.push(RolloutGroup { query_id: qid, conditioning: ctx.clone(), selected: None, outcomes });
    }
    Instance { policy, groups, clip: 0.2 }
}

/// Smallest distance from any token ratio to a clip boundary.
pub fn kink_distance(inst: &Instance, clip: f64) -> f64 {
    let mut best = f64::INFINITY;
    for g in &inst.groups {
        for o in &g.outcomes {
            let t = &o.trace;
            for (l, (&tok, &old)) in t.tokens.iter().zip(&t.logprobs_old).enumerate() {
                let ratio = (inst.policy.token_logprobs(&t.conditioning, &t.tokens[..l])[tok] - old).exp();
                best = best.min((ratio - (1.0 - clip)).abs()).min((ratio - (1.0 + clip)).abs());
            }
        }
    }
    best
}
