//! Evolving skill library co-trained with a GRPO policy.
//!
//! The engine is policy-agnostic: anything implementing
//! [`policy::PolicyInterface`] can score skills, generate traces and propose
//! new skills. A linear [`policy::ToyPolicy`] and a synthetic task
//! distribution ([`env`]) make every component runnable at desk scale.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod env;
pub mod library;
pub mod policy;
pub mod reward;
pub mod selector;
pub mod skill_doc;
pub mod trainer;

pub use env::{EnvConfig, SyntheticQuery};
pub use library::{EntryId, LibraryEntry, LibraryError, TwoTierLibrary};
pub use policy::{Conditioning, DifferentiablePolicy, PolicyError, PolicyInterface, ToyPolicy, Trace};
pub use reward::{RewardLevels, RolloutGroup, TrajectoryOutcome};
pub use selector::{SelectionDecision, SkillScorer};
pub use skill_doc::{ProblemType, SkillDocument};
pub use trainer::{StepMetrics, Trainer, TrainerConfig, TrainerError};
