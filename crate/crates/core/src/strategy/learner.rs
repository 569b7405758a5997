//! Per-experience training loop.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::softmax_cross_entropy;
use crate::network::{CutName, LayeredNetwork};
use crate::pretrain::PretrainedModel;
use crate::replay::{LatentPattern, ReplayBuffer, PRETRAIN_SOURCE};
use crate::stream::{Experience, LabeledSet};
use crate::tensor::Tensor;
use crate::timing::{Phase, PhaseClock, TimingBreakdown};

use super::{CwrHead, StrategyConfig, StrategyKind, SynapticState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceMetrics {
    pub experience: usize,
    pub class: usize,
    pub steps: usize,
    pub mean_loss: f32,
    pub final_loss: f32,
    pub replaced: usize,
    pub timing: TimingBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub acc_initial: f64,
    pub acc_new: f64,
    /// `None` for classes with no test frames.
    pub per_class: Vec<Option<f64>>,
}

/// Everything one continual-learning run owns: network, head, importance
/// state, replay buffer and RNG.
#[derive(Debug, Clone)]
pub struct Learner {
    pub net: LayeredNetwork,
    pub head: CwrHead,
    pub synaptic: Option<SynapticState>,
    pub buffer: Option<ReplayBuffer>,
    cfg: StrategyConfig,
    rng: ChaCha8Rng,
    seen: BTreeSet<usize>,
    feature_cache: Option<(u64, Tensor)>,
}

impl Learner {
    /// Starts a run from a pretrained model. The replay buffer, if any, is
    /// seeded with an equal number of pretraining latents per class.
    pub fn new(pretrained: &PretrainedModel, cfg: StrategyConfig, pretrain_set: &LabeledSet) -> Result<Self> {
        cfg.validate()?;
        let mut net = pretrained.net.clone();
        net.set_cut(cfg.cut)?;
        net.freeze_below_cut(cfg.cut == CutName::Pool);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let buffer = match cfg.replay_policy() {
            Some(policy) => {
                let mut b = ReplayBuffer::new(cfg.buffer_capacity, net.latent_shape(), policy);
                if cfg.slow.is_some() {
                    b = b.with_raw_frames(net.input_shape().to_vec());
                }
                let latents = net.extract_latent(&pretrain_set.frames)?;
                let keep_raw = b.raw_shape().is_some();
                let pool: Vec<LatentPattern> = (0..pretrain_set.len())
                    .map(|i| LatentPattern {
                        latent: latents.item(i).to_vec(),
                        label: pretrain_set.labels[i],
                        source: PRETRAIN_SOURCE,
                        raw: keep_raw.then(|| pretrain_set.frames.item(i).to_vec()),
                    })
                    .collect();
                b.seed_from_pretrain(&pool, &mut rng)?;
                Some(b)
            }
            None => None,
        };
        let synaptic = match cfg.kind {
            StrategyKind::Ar1 => Some(SynapticState::new(net.trunk_params(), cfg.importance_cap, cfg.damping)?),
            _ => None,
        };
        let seen = (0..pretrained.head.classes())
            .filter(|&c| pretrained.head.past()[c] > 0)
            .collect();
        Ok(Learner {
            net,
            head: pretrained.head.clone(),
            synaptic,
            buffer,
            cfg,
            rng,
            seen,
            feature_cache: None,
        })
    }

    /// Assembles a learner from explicit parts.
    pub fn from_parts(
        net: LayeredNetwork,
        head: CwrHead,
        synaptic: Option<SynapticState>,
        buffer: Option<ReplayBuffer>,
        cfg: StrategyConfig,
    ) -> Result<Self> {
        if cfg.current_batch == 0 {
            return Err(Error::Config("current_batch must be >= 1".into()));
        }
        let seen = (0..head.classes()).filter(|&c| head.past()[c] > 0).collect();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Learner {
            net,
            head,
            synaptic,
            buffer,
            cfg,
            rng,
            seen,
            feature_cache: None,
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.cfg
    }

    fn trunk_trains(&self) -> bool {
        let net = &self.net;
        net.trunk().any(|i| net.layers()[i].has_params() && !net.is_frozen(i))
    }

    pub fn train_experience(&mut self, exp: &Experience) -> Result<ExperienceMetrics> {
        self.train_cancellable(exp, None)
    }

    /// Runs one experience:
    /// 1. extract latents of every frame once;
    /// 2. head init (dual-memory or plain);
    /// 3. epochs of minibatches: current latents plus replay latents through
    ///    the mixed forward/backward, head update on `tw`, trunk update with
    ///    the importance penalty (AR1);
    /// 4. head fusion; 5. importance consolidation; 6. buffer insertion.
    ///
    /// When `cancel` becomes set the run stops before the next minibatch with
    /// `Error::Cancelled`, leaving the learner partially trained.
    pub fn train_cancellable(&mut self, exp: &Experience, cancel: Option<&AtomicBool>) -> Result<ExperienceMetrics> {
        if exp.is_empty() {
            return Err(Error::Argument(format!("experience {} has no frames", exp.index)));
        }
        let class = exp.class();
        let n = exp.len();
        let mut clock = PhaseClock::start();

        // (1) feature extraction, charged separately from training
        let latents = if self.net.cut().name == CutName::Input {
            exp.frames.clone()
        } else {
            let l = self.net.extract_latent(&exp.frames)?;
            clock.lap(Phase::FeatureExtraction);
            l
        };
        clock.begin_training();

        // (2) head init; replayed classes count as part of the experience
        let mut counts: BTreeMap<usize, usize> = [(class, n)].into_iter().collect();
        let mut replayed = BTreeMap::new();
        if self.cfg.uses_cwr() && self.cfg.replay_batch > 0 {
            if let Some(b) = &self.buffer {
                replayed = b.class_counts();
                for (&c, &k) in &replayed {
                    *counts.entry(c).or_insert(0) += k;
                }
            }
        }
        let exp_classes: Vec<usize> = counts.keys().copied().collect();
        if self.cfg.uses_cwr() {
            self.head.init(&exp_classes)?;
        } else {
            let mut rows: Vec<usize> = self.seen.iter().copied().collect();
            rows.push(class);
            self.head.init_plain(&rows)?;
        }
        self.head.load_tw_into(self.net.output_layer_mut())?;

        // (3) minibatch loop
        let trunk_trains = self.trunk_trains();
        let below_trains = self.net.below_cut_trainable();
        let out = self.net.output_index();
        let trunk = self.net.trunk();
        let lr = self.cfg.lr;
        let regularise = self.cfg.kind == StrategyKind::Ar1 && self.cfg.lambda > 0.0;
        let mut order: Vec<usize> = (0..n).collect();
        let mut steps = 0;
        let mut loss_sum = 0.0f64;
        let mut last_loss = f32::NAN;
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.current_batch) {
                if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
                    return Err(Error::Cancelled);
                }
                // forward
                let (replay, mut labels) = match &self.buffer {
                    Some(b) if self.cfg.replay_batch > 0 => {
                        let picked = b.sample(self.cfg.replay_batch, &mut self.rng);
                        let (t, l) = b.batch_of(&picked);
                        (t, l)
                    }
                    _ => {
                        let mut shape = vec![0];
                        shape.extend(self.net.latent_shape());
                        (Tensor::zeros(&shape), Vec::new())
                    }
                };
                let current = if below_trains {
                    self.net.forward_below(&exp.frames.select(chunk))?
                } else {
                    latents.select(chunk)
                };
                let mut all_labels = vec![class; chunk.len()];
                all_labels.append(&mut labels);
                let logits = self.net.mixed_forward(&current, &replay)?;
                let (loss, dlogits) = softmax_cross_entropy(&logits, &all_labels, all_labels.len())?;
                clock.lap(Phase::Forward);

                // backward; the head update is folded into this phase
                self.net.mixed_backward(&dlogits, chunk.len())?;
                self.head.mask_grads(self.net.output_layer_mut())?;
                self.net.sgd_layers(out..out + 1, lr)?;
                clock.lap(Phase::Backward);

                if trunk_trains {
                    let grads = self.net.trunk_grads();
                    if regularise {
                        let si = self.synaptic.as_ref().expect("AR1 keeps importance state");
                        let pen = si.penalty_grad(&self.net.trunk_params(), self.cfg.lambda)?;
                        self.net.add_trunk_grads(&pen)?;
                    }
                    let before = self.net.trunk_params();
                    let cut = self.net.cut().index;
                    self.net
                        .sgd_layers(trunk.start..cut, lr * self.cfg.below_cut_lr_scale)?;
                    self.net.sgd_layers(cut..trunk.end, lr)?;
                    if let Some(si) = self.synaptic.as_mut() {
                        let after = self.net.trunk_params();
                        let delta: Vec<f32> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
                        si.accumulate(&grads, &delta)?;
                    }
                    clock.lap(Phase::WeightsUpdate);
                }
                steps += 1;
                loss_sum += loss as f64;
                last_loss = loss;
            }
        }
        let timing = clock.finish();

        // (4) head fusion
        self.head.store_tw_from(self.net.output_layer())?;
        if self.cfg.uses_cwr() {
            self.head.consolidate_replayed(&exp_classes, &counts, &replayed)?;
        } else {
            self.head.consolidate_plain(&[(class, n)].into_iter().collect())?;
        }
        self.seen.insert(class);

        // (5) importance consolidation
        if trunk_trains {
            if let Some(si) = self.synaptic.as_mut() {
                si.consolidate(&self.net.trunk_params())?;
            }
        }

        // (6) buffer insertion
        let mut replaced = 0;
        if let Some(b) = self.buffer.as_mut() {
            let keep_raw = b.raw_shape().is_some();
            let patterns = (0..n)
                .map(|i| LatentPattern {
                    latent: latents.item(i).to_vec(),
                    label: class,
                    source: exp.index as u32,
                    raw: keep_raw.then(|| exp.frames.item(i).to_vec()),
                })
                .collect();
            replaced = b.insert(patterns, &mut self.rng)?;
        }

        Ok(ExperienceMetrics {
            experience: exp.index,
            class,
            steps,
            mean_loss: if steps > 0 {
                (loss_sum / steps as f64) as f32
            } else {
                f32::NAN
            },
            final_loss: last_loss,
            replaced,
            timing,
        })
    }

    /// Top-1 predictions through the trunk and the consolidated head.
    pub fn predict(&self, frames: &Tensor) -> Result<Vec<usize>> {
        self.head.predict(&self.net.features(frames)?)
    }

    /// Accuracy on the test split. Trunk features are cached while the trunk
    /// is unchanged; evaluation never touches training state.
    pub fn evaluate(&mut self, test: &LabeledSet, initial_classes: usize) -> Result<Evaluation> {
        let gen = self.net.generation();
        let fresh = !matches!(&self.feature_cache, Some((g, _)) if *g == gen);
        if fresh {
            self.feature_cache = Some((gen, self.net.features(&test.frames)?));
        }
        let feats = &self.feature_cache.as_ref().expect("filled").1;
        let pred = self.head.predict(feats)?;
        Ok(score(&pred, &test.labels, initial_classes, self.head.classes()))
    }
}

/// Accuracy split into initial and new classes plus per-class accuracy.
pub fn score(pred: &[usize], labels: &[usize], initial_classes: usize, classes: usize) -> Evaluation {
    let mut hit = vec![0usize; classes];
    let mut tot = vec![0usize; classes];
    for (&p, &l) in pred.iter().zip(labels) {
        tot[l] += 1;
        if p == l {
            hit[l] += 1;
        }
    }
    let frac = |range: std::ops::Range<usize>| {
        let h: usize = hit[range.clone()].iter().sum();
        let t: usize = tot[range].iter().sum();
        if t == 0 {
            0.0
        } else {
            h as f64 / t as f64
        }
    };
    Evaluation {
        acc_initial: frac(0..initial_classes.min(classes)),
        acc_new: frac(initial_classes.min(classes)..classes),
        per_class: (0..classes)
            .map(|c| (tot[c] > 0).then(|| hit[c] as f64 / tot[c] as f64))
            .collect(),
    }
}
