//! Interval-rule world models over symbolic grid states, with
//! imagination-based policy adaptation after environment novelty.

pub mod action;
pub mod adapt;
pub mod detector;
pub mod env;
pub mod error;
pub mod feature;
pub mod metrics;
pub mod policy;
pub mod rules;

pub use action::Action;
pub use adapt::{AgentConfig, AgentKind, RunResult, RunSpec, Runner};
pub use detector::{DetectionEvent, Detector};
pub use env::{build_env, EnvName, GridEnv, InjectAt, NoveltyKind, NoveltySpec};
pub use error::{Error, Result};
pub use feature::{FeatureSchema, FeatureSpec, FeatureValue, StateDelta, StateKey, SymbolicState};
pub use metrics::{EpisodeRecord, MetricReport};
pub use policy::{TabularQPolicy, Transition, UpdateBuffer};
pub use rules::{Predicted, Prediction, Rule, RuleId, RuleModel, UpdateOutcome};
