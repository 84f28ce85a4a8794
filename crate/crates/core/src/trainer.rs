//! The two-phase training loop, evaluation, and per-step metrics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{render_trace, sample_query, seed_skills, verify, EnvConfig, SyntheticQuery};
use crate::library::{ig_exact, LibraryError, OutcomeStat, SelectedFeedback, TwoTierLibrary};
use crate::policy::{
    grpo_objective, sgd_step, Conditioning, DifferentiablePolicy, FeatureLayout, PolicyError, PolicyInterface,
    ToyPolicy, Trace,
};
use crate::reward::{RewardLevels, RolloutGroup, TrajectoryOutcome};
use crate::selector::{decide, score_all, SelectionDecision, SelectionError, SkillScorer};
use crate::skill_doc::{run_pipeline, SkillDocument, MAX_TOTAL_CHARS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub seed: u64,
    pub steps: u64,
    /// Warm-up length (Phase I).
    pub warmup_steps: u64,
    pub batch_size: usize,
    /// Rollouts per query (G).
    pub group_size: usize,
    pub sigma: f64,
    pub epsilon_greedy: f64,
    pub delta_gate: f64,
    pub score_token_cap: usize,
    pub cache_capacity: usize,
    pub reservoir_capacity: usize,
    pub beta: f64,
    pub n_seed: usize,
    /// Generation settings for the skill-distillation call of a bridged model.
    pub gen_temperature: f64,
    pub top_p: f64,
    pub gen_max_tokens: usize,
    pub doc_char_cap: usize,
    /// Bonus of a skill-using correct trajectory over an unaided one.
    pub r_skill: f64,
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub advantage_epsilon: f64,
    pub ig_exact_interval: u64,
    pub reward_levels: RewardLevels,
    /// Sampling temperature of training rollouts.
    pub rollout_temperature: f64,
    /// Decoding temperature at evaluation; 0 is greedy.
    pub eval_temperature: f64,
    pub eval_runs: usize,
    pub eval_queries: usize,
    /// Select and inject skills in Phase II.
    pub skill_selection: bool,
    /// Use the three-level reward in Phase II; otherwise binary throughout.
    pub hierarchical_reward: bool,
    pub query_buckets: usize,
    pub copy_prior: f64,
    pub hint_prior: f64,
    pub env: EnvConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            seed: 0,
            steps: 2000,
            warmup_steps: 200,
            batch_size: 8,
            group_size: 8,
            sigma: 1.0,
            epsilon_greedy: 0.1,
            delta_gate: 0.35,
            score_token_cap: 128,
            cache_capacity: 10,
            reservoir_capacity: 100,
            beta: 0.9,
            n_seed: 5,
            gen_temperature: 0.7,
            top_p: 0.95,
            gen_max_tokens: 192,
            doc_char_cap: MAX_TOTAL_CHARS,
            r_skill: 1.0,
            clip_eps: 0.2,
            learning_rate: 0.01,
            advantage_epsilon: 1e-4,
            ig_exact_interval: 100,
            reward_levels: RewardLevels::default(),
            rollout_temperature: 0.7,
            eval_temperature: 0.0,
            eval_runs: 32,
            eval_queries: 200,
            skill_selection: true,
            hierarchical_reward: true,
            query_buckets: 343,
            copy_prior: 1.25,
            hint_prior: 4.0,
            env: EnvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainerError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
}

fn unit(name: &str, v: f64) -> Result<(), TrainerError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(TrainerError::InvalidConfig(format!("{name} must be in [0, 1], got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<(), TrainerError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(TrainerError::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<(), TrainerError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(TrainerError::InvalidConfig(format!("{name} must be at least 1")))
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        self.reward_levels.validate().map_err(|e| TrainerError::InvalidConfig(format!("{e}")))?;
        let bonus = self.reward_levels.correct_with_skill - self.reward_levels.correct;
        if (bonus - self.r_skill).abs() > 1e-12 {
            return Err(TrainerError::InvalidConfig(format!(
                "r_skill ({}) must equal the gap between the top two reward levels ({bonus})",
                self.r_skill
            )));
        }
        unit("epsilon_greedy", self.epsilon_greedy)?;
        unit("delta_gate", self.delta_gate)?;
        unit("beta", self.beta)?;
        unit("top_p", self.top_p)?;
        positive("sigma", self.sigma)?;
        positive("clip_eps", self.clip_eps)?;
        positive("advantage_epsilon", self.advantage_epsilon)?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainerError::InvalidConfig("learning_rate must be finite and nonnegative".into()));
        }
        for (name, t) in [
            ("gen_temperature", self.gen_temperature),
            ("rollout_temperature", self.rollout_temperature),
            ("eval_temperature", self.eval_temperature),
        ] {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(TrainerError::InvalidConfig(format!("{name} must be finite and nonnegative")));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("group_size", self.group_size),
            ("cache_capacity", self.cache_capacity),
            ("reservoir_capacity", self.reservoir_capacity),
            ("score_token_cap", self.score_token_cap),
            ("gen_max_tokens", self.gen_max_tokens),
            ("eval_runs", self.eval_runs),
            ("query_buckets", self.query_buckets),
        ] {
            at_least_one(name, v)?;
        }
        if self.n_seed > seed_skills().len() {
            return Err(TrainerError::InvalidConfig(format!("n_seed must be at most {}", seed_skills().len())));
        }
        if self.doc_char_cap != MAX_TOTAL_CHARS {
            return Err(TrainerError::InvalidConfig(format!("doc_char_cap is fixed at {MAX_TOTAL_CHARS}")));
        }
        for (name, v) in [("copy_prior", self.copy_prior), ("hint_prior", self.hint_prior)] {
            if !v.is_finite() {
                return Err(TrainerError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        self.env.validate().map_err(|e| TrainerError::InvalidConfig(format!("env: {e}")))
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.env.vocab_size, self.query_buckets)
    }

    /// The toy policy at its configured starting point.
    pub fn initial_policy(&self) -> ToyPolicy {
        ToyPolicy::with_priors(self.layout(), self.copy_prior, self.hint_prior, self.env.fault_probability)
    }

    pub fn initial_library(&self) -> TwoTierLibrary {
        TwoTierLibrary::with_seeds(self.cache_capacity, self.reservoir_capacity, &seed_skills()[..self.n_seed])
    }
}

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Queries = 1,
    Selection = 2,
    Rollouts = 3,
    Summaries = 4,
    EvalQueries = 5,
    Eval = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "I")]
    WarmUp,
    #[serde(rename = "II")]
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub phase: Phase,
    /// Fraction of trajectories that had a skill injected and cited it.
    pub skill_utilization_rate: f64,
    /// Fraction of queries that received a skill.
    pub injection_rate: f64,
    pub gate_pass_rate: f64,
    pub exploration_count: usize,
    pub cache_size: usize,
    pub reservoir_size: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub groups_filtered: usize,
    pub skills_generated: usize,
    pub fallback_fired: usize,
    pub skills_added: usize,
    pub objective: f64,
    pub policy_version: u64,
    pub mean_exact_ig: Option<f64>,
}

/// Everything recorded about one query within a step.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub query: SyntheticQuery,
    pub decision: Option<SelectionDecision>,
    pub group: RolloutGroup,
}

pub struct Trainer<P> {
    pub config: TrainerConfig,
    pub policy: P,
    pub library: TwoTierLibrary,
    pub step: u64,
    query_rng: ChaCha8Rng,
    selection_rng: ChaCha8Rng,
    rollout_rng: ChaCha8Rng,
    summary_rng: ChaCha8Rng,
    next_query_id: u64,
}

impl Trainer<ToyPolicy> {
    pub fn toy(config: TrainerConfig) -> Result<Trainer<ToyPolicy>, TrainerError> {
        let policy = config.initial_policy();
        Trainer::new(config, policy)
    }
}

impl<P: DifferentiablePolicy + Clone> Trainer<P> {
    pub fn new(config: TrainerConfig, policy: P) -> Result<Trainer<P>, TrainerError> {
        config.validate()?;
        let library = config.initial_library();
        let seed = config.seed;
        Ok(Trainer {
            config,
            policy,
            library,
            step: 0,
            query_rng: stream_rng(seed, Stream::Queries),
            selection_rng: stream_rng(seed, Stream::Selection),
            rollout_rng: stream_rng(seed, Stream::Rollouts),
            summary_rng: stream_rng(seed, Stream::Summaries),
            next_query_id: 0,
        })
    }

    pub fn phase_of(&self, step: u64) -> Phase {
        if step <= self.config.warmup_steps {
            Phase::WarmUp
        } else {
            Phase::Full
        }
    }

    fn select_for(&mut self, snapshot: &P, query: &SyntheticQuery) -> Result<SelectionDecision, TrainerError> {
        let docs: Vec<&SkillDocument> = self.library.cache.iter().map(|e| &e.doc).collect();
        let scores = score_all::<SyntheticQuery, P>(snapshot, query, &docs, self.config.score_token_cap)?;
        Ok(decide(scores, self.config.sigma, self.config.epsilon_greedy, self.config.delta_gate, &mut self.selection_rng)?)
    }

    /// One training step on a freshly sampled batch.
    pub fn run_step(&mut self) -> Result<StepMetrics, TrainerError> {
        let queries: Vec<SyntheticQuery> = (0..self.config.batch_size)
            .map(|_| {
                let q = sample_query(&mut self.query_rng, &self.config.env, self.next_query_id);
                self.next_query_id += 1;
                q
            })
            .collect();
        self.run_step_on(queries).map(|(m, _)| m)
    }

    /// One step of the pipeline on the given queries.
    pub fn run_step_on(&mut self, queries: Vec<SyntheticQuery>) -> Result<(StepMetrics, Vec<QueryRecord>), TrainerError> {
        self.step += 1;
        let step = self.step;
        let phase = self.phase_of(step);
        let cfg = self.config.clone();
        let full = phase == Phase::Full;
        let hierarchical = full && cfg.hierarchical_reward;
        let snapshot = self.policy.snapshot();

        // Selection, injection, rollouts, rewards.
        let mut records = Vec::with_capacity(queries.len());
        for query in queries {
            let decision = if full && cfg.skill_selection { Some(self.select_for(&snapshot, &query)?) } else { None };
            let chosen = decision.as_ref().and_then(|d| d.chosen);
            let selected = chosen.map(|i| self.library.cache[i].id);
            let conditioning = match chosen {
                Some(i) => Conditioning::with_skill(&query, snapshot.skill_cue(&self.library.cache[i].doc)),
                None => Conditioning::unaided(&query),
            };
            let marker = conditioning.skill.map(|c| c.marker());
            let mut outcomes = Vec::with_capacity(cfg.group_size);
            for _ in 0..cfg.group_size {
                let trace = snapshot.sample_trace(
                    &conditioning,
                    cfg.env.max_trace_len,
                    cfg.rollout_temperature,
                    &mut self.rollout_rng,
                );
                let correct = verify(&query, &trace.tokens, cfg.env.max_trace_len);
                let skill_used = marker.is_some_and(|m| trace.tokens.contains(&m));
                let reward = if hierarchical {
                    cfg.reward_levels.reward(skill_used, correct)
                } else {
                    cfg.reward_levels.task_reward(correct)
                };
                outcomes.push(TrajectoryOutcome { trace, skill_used, correct, reward, advantage: 0.0 });
            }
            let mut group = RolloutGroup { query_id: query.id, conditioning, selected, outcomes };
            group.assign_advantages(cfg.advantage_epsilon);
            records.push(QueryRecord { query, decision, group });
        }

        // Dynamic sampling and the policy update.
        let kept: Vec<RolloutGroup> =
            records.iter().filter(|r| r.group.has_reward_variance()).map(|r| r.group.clone()).collect();
        let groups_filtered = records.len() - kept.len();
        let mut objective = 0.0;
        if !kept.is_empty() {
            let (obj, grad) = grpo_objective(&self.policy, &kept, cfg.clip_eps)?;
            objective = obj;
            sgd_step(&mut self.policy, &grad, cfg.learning_rate)?;
        }

        // Skill generation from positive-advantage traces, then maintenance.
        let mut skills_generated = 0;
        let mut fallback_fired = 0;
        let mut skills_added = 0;
        let mut ig_values = Vec::new();
        let measure_ig = cfg.ig_exact_interval > 0 && step.is_multiple_of(cfg.ig_exact_interval);
        for rec in &records {
            let positive: Vec<Trace> =
                rec.group.outcomes.iter().filter(|o| o.advantage > 0.0).map(|o| o.trace.clone()).collect();
            let new_doc = if positive.is_empty() {
                None
            } else {
                skills_generated += 1;
                let raw = snapshot.summarize(&rec.query, &positive, &mut self.summary_rng);
                let rendered: Vec<String> = positive.iter().map(|t| render_trace(&t.tokens)).collect();
                let outcome = run_pipeline(&raw, &rendered);
                if outcome.used_fallback() {
                    fallback_fired += 1;
                }
                outcome.into_document()
            };
            if new_doc.is_some() {
                skills_added += 1;
            }
            // The selected entry may have left the cache during an earlier
            // query's maintenance in this batch; its update is then skipped.
            let feedback = rec.group.selected.filter(|id| self.library.cache_index(*id).is_some()).map(|id| {
                let g = rec.group.outcomes.len();
                SelectedFeedback { id, reward: rec.group.mean_reward(), succeeded: 2 * rec.group.success_count() > g }
            });
            if measure_ig && !positive.is_empty() {
                if let Some(id) = feedback.map(|f| f.id) {
                    let doc = self.library.get(id).map(|e| e.doc.clone());
                    if let Some(doc) = doc {
                        let ig = ig_exact(&snapshot, &doc, &rec.query, &positive)?;
                        if let Some(e) = self.library.get_mut(id) {
                            e.last_exact_ig = Some(ig);
                        }
                        ig_values.push(ig);
                    }
                }
            }
            let stats: Vec<OutcomeStat> =
                rec.group.outcomes.iter().map(|o| OutcomeStat { reward: o.reward, correct: o.correct }).collect();
            self.library.maintain(feedback, new_doc, step, cfg.beta, &stats)?;
        }

        let n_traj: usize = records.iter().map(|r| r.group.outcomes.len()).sum();
        let n_q = records.len().max(1) as f64;
        let traj = |f: &dyn Fn(&TrajectoryOutcome) -> f64| -> f64 {
            if n_traj == 0 {
                return 0.0;
            }
            records.iter().flat_map(|r| &r.group.outcomes).map(f).sum::<f64>() / n_traj as f64
        };
        let metrics = StepMetrics {
            step,
            phase,
            skill_utilization_rate: traj(&|o| if o.skill_used { 1.0 } else { 0.0 }),
            injection_rate: records.iter().filter(|r| r.group.selected.is_some()).count() as f64 / n_q,
            gate_pass_rate: records.iter().filter(|r| r.decision.as_ref().is_some_and(|d| d.gate_passed)).count()
                as f64
                / n_q,
            exploration_count: records.iter().filter(|r| r.decision.as_ref().is_some_and(|d| d.explored)).count(),
            cache_size: self.library.cache.len(),
            reservoir_size: self.library.reservoir.len(),
            mean_reward: traj(&|o| o.reward),
            success_rate: traj(&|o| if o.correct { 1.0 } else { 0.0 }),
            groups_filtered,
            skills_generated,
            fallback_fired,
            skills_added,
            objective,
            policy_version: self.policy.version(),
            mean_exact_ig: if ig_values.is_empty() {
                None
            } else {
                Some(ig_values.iter().sum::<f64>() / ig_values.len() as f64)
            },
        };
        Ok((metrics, records))
    }

    /// Runs the configured number of steps, handing each step's metrics to
    /// `on_step` as it completes.
    pub fn train<F: FnMut(&StepMetrics)>(&mut self, mut on_step: F) -> Result<Vec<StepMetrics>, TrainerError> {
        let mut log = Vec::with_capacity(self.config.steps as usize);
        while self.step < self.config.steps {
            let m = self.run_step()?;
            on_step(&m);
            log.push(m);
        }
        Ok(log)
    }

    /// Held-out pass@1 under the trained policy and library.
    pub fn evaluate(&self, queries: &[SyntheticQuery], seed: u64) -> Result<f64, TrainerError> {
        evaluate(&self.policy, &self.library, queries, &EvalSettings::from_config(&self.config), seed)
    }
}

/// Evaluation protocol: selection with the gate active and no exploration,
/// one solution per query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub use_skills: bool,
    pub sigma: f64,
    pub delta_gate: f64,
    pub score_token_cap: usize,
    pub temperature: f64,
    pub max_trace_len: usize,
    pub runs: usize,
}

impl EvalSettings {
    pub fn from_config(cfg: &TrainerConfig) -> EvalSettings {
        EvalSettings {
            use_skills: cfg.skill_selection,
            sigma: cfg.sigma,
            delta_gate: cfg.delta_gate,
            score_token_cap: cfg.score_token_cap,
            temperature: cfg.eval_temperature,
            max_trace_len: cfg.env.max_trace_len,
            runs: cfg.eval_runs,
        }
    }
}

/// Held-out evaluation queries, drawn from their own stream.
pub fn eval_queries(env: &EnvConfig, n: usize, seed: u64) -> Vec<SyntheticQuery> {
    let mut rng = stream_rng(seed, Stream::EvalQueries);
    (0..n).map(|i| sample_query(&mut rng, env, (1u64 << 40) + i as u64)).collect()
}

/// Mean pass@1 over `settings.runs` independent runs.
pub fn evaluate<P: PolicyInterface + SkillScorer<SyntheticQuery>>(
    policy: &P,
    library: &TwoTierLibrary,
    queries: &[SyntheticQuery],
    settings: &EvalSettings,
    seed: u64,
) -> Result<f64, TrainerError> {
    if queries.is_empty() {
        return Err(TrainerError::EmptyEvalSet);
    }
    let docs: Vec<&SkillDocument> = library.cache.iter().map(|e| &e.doc).collect();
    let runs = settings.runs.max(1);
    let mut total = 0.0;
    for run in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((Stream::Eval as u64) << 32) + run as u64);
        let mut correct = 0usize;
        for q in queries {
            let mut ctx = Conditioning::unaided(q);
            if settings.use_skills && !docs.is_empty() {
                let scores = score_all(policy, q, &docs, settings.score_token_cap)?;
                let d = decide(scores, settings.sigma, 0.0, settings.delta_gate, &mut rng)?;
                if let Some(i) = d.chosen {
                    ctx = Conditioning::with_skill(q, policy.skill_cue(docs[i]));
                }
            }
            let trace = policy.sample_trace(&ctx, settings.max_trace_len, settings.temperature, &mut rng);
            if verify(q, &trace.tokens, settings.max_trace_len) {
                correct += 1;
            }
        }
        total += correct as f64 / queries.len() as f64;
    }
    Ok(total / runs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(steps: u64, warmup: u64) -> TrainerConfig {
        TrainerConfig { steps, warmup_steps: warmup, batch_size: 4, eval_runs: 2, ..TrainerConfig::default() }
    }

    #[test]
    fn default_config_is_valid() {
        TrainerConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_reward_levels_rejected() {
        let mut c = TrainerConfig::default();
        c.reward_levels.correct_with_skill = 0.5;
        assert!(matches!(c.validate(), Err(TrainerError::InvalidConfig(_))));
        let c = TrainerConfig { delta_gate: 1.5, ..TrainerConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainerConfig { cache_capacity: 0, ..TrainerConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn library_starts_from_seeds() {
        let t = Trainer::toy(TrainerConfig::default()).unwrap();
        assert_eq!(t.library.cache.len(), 5);
        assert!(t.library.reservoir.is_empty());
        assert_eq!(t.library.cache[0].doc, seed_skills()[0]);
    }

    #[test]
    fn warmup_steps_never_select_or_pay_the_bonus() {
        let mut t = Trainer::toy(small(5, 5)).unwrap();
        for _ in 0..5 {
            let (m, recs) = t.run_step_on((0..4).map(|i| sample_query(&mut t.query_rng.clone(), &t.config.env, i)).collect()).unwrap();
            assert_eq!(m.phase, Phase::WarmUp);
            assert_eq!(m.skill_utilization_rate, 0.0);
            for r in recs {
                assert!(r.decision.is_none());
                assert!(r.group.outcomes.iter().all(|o| o.reward <= 1.0));
            }
        }
    }

    #[test]
    fn phase_two_from_step_one_when_warmup_is_zero() {
        let mut t = Trainer::toy(small(1, 0)).unwrap();
        let m = t.run_step().unwrap();
        assert_eq!(m.phase, Phase::Full);
    }

    #[test]
    fn traces_come_from_the_step_snapshot() {
        let mut t = Trainer::toy(small(3, 1)).unwrap();
        for _ in 0..3 {
            let version = t.policy.version;
            let queries = (0..4).map(|i| sample_query(&mut t.query_rng.clone(), &t.config.env, i)).collect();
            let (_, recs) = t.run_step_on(queries).unwrap();
            for r in recs {
                assert!(r.group.outcomes.iter().all(|o| o.trace.snapshot == version));
            }
        }
    }

    #[test]
    fn empty_eval_set_is_an_error() {
        let t = Trainer::toy(small(1, 1)).unwrap();
        assert_eq!(t.evaluate(&[], 0), Err(TrainerError::EmptyEvalSet));
    }

    #[test]
    fn oracle_policy_scores_perfectly() {
        let cfg = TrainerConfig::default();
        let p = ToyPolicy::oracle(cfg.layout(), &cfg.env.answer_map(), 20.0);
        let queries = eval_queries(&cfg.env, 50, 3);
        let lib = cfg.initial_library();
        let s = EvalSettings { runs: 2, ..EvalSettings::from_config(&cfg) };
        assert_eq!(evaluate(&p, &lib, &queries, &s, 0).unwrap(), 1.0);
    }
}
