//! Fast head-only consolidation with a cancellable background pass over the
//! deeper layers.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::network::CutName;
use crate::stream::Experience;

use super::{ExperienceMetrics, Learner, SlowPhaseConfig, StrategyKind, SynapticState};

struct SlowOutcome {
    trunk: Vec<f32>,
    synaptic: Option<SynapticState>,
}

struct SlowJob {
    cancel: Arc<AtomicBool>,
    handle: JoinHandle<Result<SlowOutcome>>,
}

/// Owns a pool-cut learner whose buffer retains raw frames. Each experience
/// is learned synchronously at the head; a background thread then trains a
/// snapshot below the slow cut. A finished slow pass is merged atomically:
/// trunk weights are replaced and buffer latents re-derived from raw frames.
pub struct TwoPhaseScheduler {
    learner: Learner,
    slow: SlowPhaseConfig,
    pending: Option<SlowJob>,
    merged: usize,
    cancelled: usize,
}

impl TwoPhaseScheduler {
    pub fn new(learner: Learner) -> Result<Self> {
        let slow = learner
            .config()
            .slow
            .clone()
            .ok_or_else(|| Error::Config("two-phase mode needs a slow phase configuration".into()))?;
        if learner.config().cut != CutName::Pool {
            return Err(Error::Config("the fast phase runs at the pool cut".into()));
        }
        if slow.cut == CutName::Pool {
            return Err(Error::Config("the slow phase needs a cut below pool".into()));
        }
        match &learner.buffer {
            Some(b) if b.raw_shape().is_some() => {}
            Some(_) => return Err(Error::Config("two-phase mode needs raw frames in the buffer".into())),
            None => {}
        }
        Ok(TwoPhaseScheduler {
            learner,
            slow,
            pending: None,
            merged: 0,
            cancelled: 0,
        })
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn learner_mut(&mut self) -> &mut Learner {
        &mut self.learner
    }

    /// Cancels any pending slow pass and returns a copy of the learner.
    pub fn finish(mut self) -> Learner {
        self.cancel_pending();
        self.learner.clone()
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Slow passes merged so far.
    pub fn merged(&self) -> usize {
        self.merged
    }

    /// Slow passes cancelled or discarded so far.
    pub fn cancelled(&self) -> usize {
        self.cancelled
    }

    /// Merges a finished slow pass, cancels an unfinished one, runs the fast
    /// phase and launches the next slow pass.
    pub fn train_experience(&mut self, exp: &Experience) -> Result<ExperienceMetrics> {
        if self.pending.as_ref().is_some_and(|j| j.handle.is_finished()) {
            self.wait_and_merge()?;
        }
        self.cancel_pending();
        let metrics = self.learner.train_experience(exp)?;
        self.spawn_slow(exp.clone())?;
        Ok(metrics)
    }

    /// Signals the pending slow pass to stop and discards its result.
    pub fn cancel_pending(&mut self) {
        if let Some(job) = self.pending.take() {
            job.cancel.store(true, Ordering::Relaxed);
            let _ = job.handle.join();
            self.cancelled += 1;
        }
    }

    /// Blocks until the pending slow pass ends and merges it. Returns whether
    /// a merge happened.
    pub fn wait_and_merge(&mut self) -> Result<bool> {
        let Some(job) = self.pending.take() else {
            return Ok(false);
        };
        let outcome = job
            .handle
            .join()
            .map_err(|_| Error::State("slow consolidation thread panicked".into()))?;
        match outcome {
            Ok(o) => {
                self.merge(o)?;
                Ok(true)
            }
            Err(Error::Cancelled) => {
                self.cancelled += 1;
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    fn merge(&mut self, o: SlowOutcome) -> Result<()> {
        let l = &mut self.learner;
        l.net.set_trunk_params(&o.trunk)?;
        if o.synaptic.is_some() {
            l.synaptic = o.synaptic;
        }
        if let Some(b) = l.buffer.as_mut() {
            let net = &l.net;
            b.recompute_latents(net.latent_shape(), |x| net.extract_latent(x))?;
        }
        self.merged += 1;
        Ok(())
    }

    fn spawn_slow(&mut self, exp: Experience) -> Result<()> {
        let mut net = self.learner.net.clone();
        let head = self.learner.head.clone();
        let synaptic = self.learner.synaptic.clone();
        let buffer = self.learner.buffer.clone();
        let mut cfg = self.learner.config().clone();
        cfg.cut = self.slow.cut;
        cfg.epochs = self.slow.epochs;
        cfg.lr = self.slow.lr;
        cfg.lambda = self.slow.lambda;
        cfg.kind = StrategyKind::Ar1;
        cfg.slow = None;
        cfg.seed = cfg.seed.wrapping_add(1 + exp.index as u64);
        net.set_cut(cfg.cut)?;
        net.freeze_below_cut(false);

        let cancel = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&cancel);
        let handle = std::thread::spawn(move || -> Result<SlowOutcome> {
            if cfg.epochs == 0 {
                return Ok(SlowOutcome {
                    trunk: net.trunk_params(),
                    synaptic,
                });
            }
            let mut buffer = buffer;
            if let Some(b) = buffer.as_mut() {
                b.recompute_latents(net.latent_shape(), |x| net.extract_latent(x))?;
            }
            let synaptic = match synaptic {
                Some(s) => Some(s),
                None => Some(SynapticState::new(net.trunk_params(), cfg.importance_cap, cfg.damping)?),
            };
            let mut snap = Learner::from_parts(net, head, synaptic, buffer, cfg)?;
            snap.train_cancellable(&exp, Some(&flag))?;
            Ok(SlowOutcome {
                trunk: snap.net.trunk_params(),
                synaptic: snap.synaptic,
            })
        });
        self.pending = Some(SlowJob { cancel, handle });
        Ok(())
    }
}

impl Drop for TwoPhaseScheduler {
    fn drop(&mut self) {
        if let Some(job) = self.pending.take() {
            job.cancel.store(true, Ordering::Relaxed);
            let _ = job.handle.join();
        }
    }
}
