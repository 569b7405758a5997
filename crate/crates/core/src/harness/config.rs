use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ArchSpec, CutName};
use crate::pretrain::PretrainConfig;
use crate::strategy::{StrategyConfig, StrategyKind};
use crate::stream::StreamSpec;

/// Everything a benchmark run needs, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub stream: StreamSpec,
    pub pretrain: PretrainConfig,
    pub strategies: Vec<StrategyConfig>,
    pub seeds: Vec<u64>,
    /// Use `stream.seed` as the dataset seed for every run seed instead of
    /// `stream.seed + seed`.
    pub fixed_dataset: bool,
    /// Evaluate after every n-th experience (and always after the last).
    pub eval_every: usize,
    /// Directory for pretrained snapshots shared across runs.
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stream: StreamSpec::desk(),
            pretrain: PretrainConfig::default(),
            strategies: default_strategies(),
            seeds: (0..5).collect(),
            fixed_dataset: false,
            eval_every: 1,
            cache_dir: None,
        }
    }
}

/// The six strategies of the forgetting/plasticity comparison.
pub fn default_strategies() -> Vec<StrategyConfig> {
    vec![
        StrategyConfig::new(StrategyKind::Ar1, CutName::Pool),
        StrategyConfig::new(StrategyKind::Ar1, CutName::Conv2),
        StrategyConfig::new(StrategyKind::Ar1, CutName::Input),
        StrategyConfig::new(StrategyKind::ReplayBalanced, CutName::Pool),
        StrategyConfig::new(StrategyKind::ReplayUnbalanced, CutName::Pool),
        StrategyConfig::new(StrategyKind::Naive, CutName::Pool),
    ]
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        let mut labels: Vec<String> = self.strategies.iter().map(StrategyConfig::label).collect();
        for s in &self.strategies {
            s.validate()?;
        }
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate strategy label {}", w[0])));
        }
        Ok(())
    }

    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            channels: self.stream.channels,
            image_size: self.stream.image_size,
            ..ArchSpec::desk(self.stream.total_classes())
        }
    }

    pub fn dataset_seed(&self, seed: u64) -> u64 {
        if self.fixed_dataset {
            self.stream.seed
        } else {
            self.stream.seed.wrapping_add(seed)
        }
    }
}
