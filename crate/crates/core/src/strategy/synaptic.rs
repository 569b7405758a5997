//! Path-integral importance of trunk parameters.
//!
//! During an experience every SGD step adds `-grad * delta` to a per-weight
//! trajectory sum. At consolidation the trajectory is normalised by the
//! squared total displacement (plus damping), added to the importance and
//! capped. Training then adds `lambda * F * (w - anchor)` to the gradients.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynapticState {
    importance: Vec<f32>,
    anchor: Vec<f32>,
    trajectory: Vec<f64>,
    cap: f32,
    damping: f32,
}

impl SynapticState {
    pub fn new(anchor: Vec<f32>, cap: f32, damping: f32) -> Result<Self> {
        if !(cap >= 0.0 && damping > 0.0) {
            return Err(Error::Config(format!(
                "importance cap must be >= 0 and damping > 0 (cap {cap}, damping {damping})"
            )));
        }
        let n = anchor.len();
        Ok(SynapticState {
            importance: vec![0.0; n],
            anchor,
            trajectory: vec![0.0; n],
            cap,
            damping,
        })
    }

    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }

    pub fn importance(&self) -> &[f32] {
        &self.importance
    }

    pub fn importance_mut(&mut self) -> &mut [f32] {
        &mut self.importance
    }

    pub fn anchor(&self) -> &[f32] {
        &self.anchor
    }

    pub fn trajectory(&self) -> &[f64] {
        &self.trajectory
    }

    pub fn cap(&self) -> f32 {
        self.cap
    }

    fn check(&self, op: &'static str, v: &[f32]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::dim(op, &[self.len()], &[v.len()]));
        }
        Ok(())
    }

    /// `trajectory += -grads * deltas` for one applied SGD step.
    pub fn accumulate(&mut self, grads: &[f32], deltas: &[f32]) -> Result<()> {
        self.check("si_accumulate", grads)?;
        self.check("si_accumulate", deltas)?;
        for ((t, &g), &d) in self.trajectory.iter_mut().zip(grads).zip(deltas) {
            *t -= g as f64 * d as f64;
        }
        Ok(())
    }

    /// Folds the trajectory into the importance, re-anchors at `current` and
    /// clears the trajectory. Negative contributions are clamped to zero.
    pub fn consolidate(&mut self, current: &[f32]) -> Result<()> {
        self.check("si_consolidate", current)?;
        let xi = self.damping as f64;
        for (((imp, &cur), &anchor), &traj) in self
            .importance
            .iter_mut()
            .zip(current)
            .zip(&self.anchor)
            .zip(&self.trajectory)
        {
            let disp = (cur - anchor) as f64;
            let gain = (traj / (disp * disp + xi)).max(0.0);
            *imp = ((*imp as f64 + gain) as f32).min(self.cap);
        }
        self.anchor.copy_from_slice(current);
        self.trajectory.fill(0.0);
        Ok(())
    }

    /// `lambda * F * (weights - anchor)`.
    pub fn penalty_grad(&self, weights: &[f32], lambda: f32) -> Result<Vec<f32>> {
        self.check("si_penalty_grad", weights)?;
        Ok(weights
            .iter()
            .zip(&self.anchor)
            .zip(&self.importance)
            .map(|((&w, &a), &f)| lambda * f * (w - a))
            .collect())
    }
}
