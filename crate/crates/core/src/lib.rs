//! Continual learning on a small trainable network with latent replay, a
//! dual-memory (CWR) output head and synaptic-importance regularization of
//! the feature layers.

pub mod binfmt;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod layer;
pub mod network;
pub mod pretrain;
pub mod replay;
pub mod strategy;
pub mod stream;
pub mod tensor;
pub mod timing;

pub use error::{Error, Result};
pub use layer::{Layer, LayerKind};
pub use network::{ArchSpec, CutName, CutPoint, LayeredNetwork};
pub use pretrain::{pretrain_model, PretrainConfig, PretrainedModel};
pub use replay::{LatentPattern, ReplacementPolicy, ReplayBuffer};
pub use strategy::{CwrHead, Learner, StrategyConfig, StrategyKind, SynapticState};
pub use stream::{Experience, LabeledSet, Stream, StreamSpec, SyntheticDataset};
pub use tensor::Tensor;
pub use timing::TimingBreakdown;
