use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::CutName;
use crate::replay::ReplacementPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Dual-memory head, importance-regularised trunk, class-balanced latent replay.
    Ar1,
    /// Plain fine-tuning on each experience.
    Naive,
    ReplayBalanced,
    ReplayUnbalanced,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Ar1 => "ar1",
            StrategyKind::Naive => "naive",
            StrategyKind::ReplayBalanced => "replay-balanced",
            StrategyKind::ReplayUnbalanced => "replay-unbalanced",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar1" => Ok(StrategyKind::Ar1),
            "naive" => Ok(StrategyKind::Naive),
            "replay-balanced" => Ok(StrategyKind::ReplayBalanced),
            "replay-unbalanced" => Ok(StrategyKind::ReplayUnbalanced),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Background deep-consolidation settings for two-phase mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlowPhaseConfig {
    pub cut: CutName,
    pub epochs: usize,
    pub lr: f32,
    pub lambda: f32,
}

impl Default for SlowPhaseConfig {
    fn default() -> Self {
        SlowPhaseConfig {
            cut: CutName::Conv2,
            epochs: 8,
            lr: 0.01,
            lambda: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    /// Report label; defaults to `<kind>-<cut>`.
    pub name: Option<String>,
    pub kind: StrategyKind,
    pub cut: CutName,
    pub epochs: usize,
    /// Current patterns per minibatch.
    pub current_batch: usize,
    /// Replay patterns per minibatch.
    pub replay_batch: usize,
    pub lr: f32,
    /// Multiplies `lr` for layers below the cut, which only ever see the
    /// current rows.
    pub below_cut_lr_scale: f32,
    pub lambda: f32,
    pub importance_cap: f32,
    pub damping: f32,
    /// Replay buffer size in patterns; 0 disables replay.
    pub buffer_capacity: usize,
    /// Patterns overwritten per experience by the unbalanced policy.
    pub unbalanced_k: usize,
    pub seed: u64,
    pub slow: Option<SlowPhaseConfig>,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            name: None,
            kind: StrategyKind::Ar1,
            cut: CutName::Pool,
            epochs: 16,
            current_batch: 10,
            replay_batch: 10,
            lr: 0.1,
            below_cut_lr_scale: 0.003,
            lambda: 0.5,
            importance_cap: 0.001,
            damping: 1e-3,
            buffer_capacity: 120,
            unbalanced_k: 10,
            seed: 0,
            slow: None,
        }
    }
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, cut: CutName) -> Self {
        StrategyConfig {
            kind,
            cut,
            ..Default::default()
        }
    }

    pub fn label(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => format!("{}-{}", self.kind, self.cut),
        }
    }

    pub fn replay_policy(&self) -> Option<ReplacementPolicy> {
        if self.buffer_capacity == 0 {
            return None;
        }
        match self.kind {
            StrategyKind::Ar1 | StrategyKind::ReplayBalanced => Some(ReplacementPolicy::Balanced),
            StrategyKind::ReplayUnbalanced => Some(ReplacementPolicy::Unbalanced { k: self.unbalanced_k }),
            StrategyKind::Naive => None,
        }
    }

    pub fn uses_cwr(&self) -> bool {
        self.kind == StrategyKind::Ar1
    }

    pub fn validate(&self) -> Result<()> {
        if self.current_batch == 0 {
            return Err(Error::Config("current_batch must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.below_cut_lr_scale.is_finite() && self.below_cut_lr_scale >= 0.0) {
            return Err(Error::Config(format!(
                "below_cut_lr_scale must be >= 0, got {}",
                self.below_cut_lr_scale
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(self.importance_cap >= 0.0 && self.damping > 0.0) {
            return Err(Error::Config("importance_cap must be >= 0 and damping > 0".into()));
        }
        if let Some(slow) = &self.slow {
            if self.cut != CutName::Pool {
                return Err(Error::Config(
                    "two-phase mode needs the pool cut for the fast phase".into(),
                ));
            }
            if slow.cut == CutName::Pool {
                return Err(Error::Config("the slow phase needs a cut below pool".into()));
            }
        }
        Ok(())
    }
}
