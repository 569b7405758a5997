//! Offline training on the initial classes before the stream starts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::softmax_cross_entropy;
use crate::network::{ArchSpec, LayeredNetwork};
use crate::strategy::CwrHead;
use crate::stream::LabeledSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 20,
            batch: 16,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// A network plus its consolidated head, ready to start a stream.
#[derive(Debug, Clone)]
pub struct PretrainedModel {
    pub net: LayeredNetwork,
    pub head: CwrHead,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    key: serde_json::Value,
    network: serde_json::Value,
    cw: Tensor,
    past: Vec<u64>,
}

impl PretrainedModel {
    pub fn fresh(arch: ArchSpec, seed: u64) -> Result<Self> {
        let net = LayeredNetwork::new(arch, seed)?;
        let head = CwrHead::new(arch.classes, net.feature_dim());
        Ok(PretrainedModel { net, head })
    }

    /// Class-wise inference through the consolidated head.
    pub fn predict(&self, frames: &Tensor) -> Result<Vec<usize>> {
        self.head.predict(&self.net.features(frames)?)
    }

    /// Writes the snapshot as JSON together with a cache key.
    pub fn save(&self, path: &Path, key: &impl Serialize) -> Result<()> {
        let snap = Snapshot {
            format: "edgecl-pretrained".into(),
            version: 1,
            key: serde_json::to_value(key)?,
            network: serde_json::from_str(&self.net.to_json()?)?,
            cw: self.head.cw().clone(),
            past: self.head.past().to_vec(),
        };
        fs::write(path, serde_json::to_string(&snap)?)?;
        Ok(())
    }

    /// Loads a snapshot if it exists and was stored under an equal key.
    pub fn load_if_matching(path: &Path, key: &impl Serialize) -> Result<Option<Self>> {
        if !path.exists() {
            return Ok(None);
        }
        let snap: Snapshot = serde_json::from_str(&fs::read_to_string(path)?)?;
        if snap.format != "edgecl-pretrained" || snap.version != 1 {
            return Err(Error::Format(format!(
                "{} is not a pretrained snapshot",
                path.display()
            )));
        }
        if snap.key != serde_json::to_value(key)? {
            return Ok(None);
        }
        let net = LayeredNetwork::from_json(&snap.network.to_string())?;
        let mut head = CwrHead::new(net.num_classes(), net.feature_dim());
        let mut layer = net.output_layer().clone();
        let counts: BTreeMap<usize, usize> = snap
            .past
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(c, &n)| (c, n as usize))
            .collect();
        head.tw_mut().data_mut().copy_from_slice(snap.cw.data());
        head.load_tw_into(&mut layer)?;
        head.set_consolidated(&layer, &counts)?;
        Ok(Some(PretrainedModel { net, head }))
    }
}

/// Full-network SGD on the pretraining set. Output rows of classes absent
/// from the set stay at zero. The trained rows are then fused into `cw`
/// exactly as a first experience would be, and `past` holds the per-class
/// pattern counts.
pub fn pretrain_model(model: &mut PretrainedModel, set: &LabeledSet, cfg: &PretrainConfig) -> Result<f32> {
    if cfg.batch == 0 {
        return Err(Error::Config("pretraining batch must be >= 1".into()));
    }
    let classes: BTreeSet<usize> = set.labels.iter().copied().collect();
    let class_list: Vec<usize> = classes.iter().copied().collect();
    let PretrainedModel { net, head } = model;
    head.store_tw_from(net.output_layer())?;
    head.init_plain(&class_list)?;
    {
        // zero rows of classes with no pretraining data
        let w = head.latent_dim() + 1;
        let k = head.classes();
        for j in (0..k).filter(|j| !classes.contains(j)) {
            head.tw_mut().data_mut()[j * w..(j + 1) * w].fill(0.0);
        }
    }
    head.load_tw_into(net.output_layer_mut())?;
    for i in 0..net.layers().len() {
        net.set_frozen(i, false);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut last_loss = f32::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let x = set.frames.select(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| set.labels[i]).collect();
            let logits = net.forward_train(&x)?;
            let (loss, g) = softmax_cross_entropy(&logits, &labels, labels.len())?;
            net.backward(&g)?;
            head.mask_grads(net.output_layer_mut())?;
            net.sgd_layers(0..net.layers().len(), cfg.lr)?;
            total += loss * chunk.len() as f32;
        }
        last_loss = total / set.len().max(1) as f32;
    }
    let mut counts = BTreeMap::new();
    for &l in &set.labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    // fuse as the first batch of the stream: past is zero, so cw becomes the
    // trained rows minus their common mean
    *head = CwrHead::new(head.classes(), head.latent_dim());
    head.store_tw_from(net.output_layer())?;
    head.consolidate(&class_list, &counts)?;
    Ok(last_loss)
}
