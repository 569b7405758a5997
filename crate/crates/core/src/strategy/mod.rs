//! Continual-learning strategies built on the layered network.

mod config;
mod cwr;
mod learner;
mod synaptic;
mod two_phase;

pub use config::{SlowPhaseConfig, StrategyConfig, StrategyKind};
pub use cwr::{argmax, CwrHead};
pub use learner::{score, Evaluation, ExperienceMetrics, Learner};
pub use synaptic::SynapticState;
pub use two_phase::TwoPhaseScheduler;
