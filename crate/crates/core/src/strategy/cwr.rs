//! Dual-memory output head.
//!
//! `cw` holds consolidated weights used for inference; `tw` holds the
//! temporary weights trained during one experience. Each row is a class; the
//! last column is the bias (a latent column fixed at 1).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layer::{Layer, LayerKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CwrHead {
    classes: usize,
    latent_dim: usize,
    cw: Tensor,
    tw: Tensor,
    past: Vec<u64>,
    trainable: Vec<bool>,
}

impl CwrHead {
    pub fn new(classes: usize, latent_dim: usize) -> Self {
        CwrHead {
            classes,
            latent_dim,
            cw: Tensor::zeros(&[classes, latent_dim + 1]),
            tw: Tensor::zeros(&[classes, latent_dim + 1]),
            past: vec![0; classes],
            trainable: vec![false; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn cw(&self) -> &Tensor {
        &self.cw
    }

    pub fn tw(&self) -> &Tensor {
        &self.tw
    }

    pub fn tw_mut(&mut self) -> &mut Tensor {
        &mut self.tw
    }

    pub fn cw_row(&self, class: usize) -> &[f32] {
        self.cw.item(class)
    }

    pub fn tw_row(&self, class: usize) -> &[f32] {
        self.tw.item(class)
    }

    pub fn past(&self) -> &[u64] {
        &self.past
    }

    pub fn trainable_rows(&self) -> &[bool] {
        &self.trainable
    }

    fn row_width(&self) -> usize {
        self.latent_dim + 1
    }

    fn check_classes(&self, classes: &[usize]) -> Result<()> {
        match classes.iter().find(|&&c| c >= self.classes) {
            Some(c) => Err(Error::Argument(format!(
                "class {c} outside the {} head rows",
                self.classes
            ))),
            None => Ok(()),
        }
    }

    /// Rows of `classes` are copied from `cw`; every other `tw` row is zeroed
    /// and excluded from updates until the next init.
    pub fn init(&mut self, classes: &[usize]) -> Result<()> {
        self.check_classes(classes)?;
        let w = self.row_width();
        self.tw.data_mut().fill(0.0);
        self.trainable.fill(false);
        for &c in classes {
            let row = self.cw.data()[c * w..(c + 1) * w].to_vec();
            self.tw.data_mut()[c * w..(c + 1) * w].copy_from_slice(&row);
            self.trainable[c] = true;
        }
        Ok(())
    }

    /// Plain (non-CWR) head training: `tw` becomes a full copy of `cw` and
    /// only `trainable` rows may change.
    pub fn init_plain(&mut self, trainable: &[usize]) -> Result<()> {
        self.check_classes(trainable)?;
        self.tw = self.cw.clone();
        self.trainable.fill(false);
        for &c in trainable {
            self.trainable[c] = true;
        }
        Ok(())
    }

    /// Fusion after an experience. For each class `j` in the experience:
    ///
    /// `cw[j] = (cw[j] * wpast + (tw[j] - m)) / (wpast + 1)`, with
    /// `wpast = sqrt(past[j] / cur[j])` and `m` the mean over all entries of
    /// the experience's `tw` rows; then `past[j] += cur[j]`.
    pub fn consolidate(&mut self, classes: &[usize], counts: &BTreeMap<usize, usize>) -> Result<()> {
        self.check_classes(classes)?;
        for c in classes {
            if counts.get(c).copied().unwrap_or(0) == 0 {
                return Err(Error::Argument(format!(
                    "class {c} has no current patterns to consolidate"
                )));
            }
        }
        if classes.is_empty() {
            return Ok(());
        }
        let w = self.row_width();
        let mut sum = 0.0f64;
        for &c in classes {
            sum += self.tw.item(c).iter().map(|&v| v as f64).sum::<f64>();
        }
        let mean = (sum / (classes.len() * w) as f64) as f32;
        for &c in classes {
            let cur = counts[&c];
            let wpast = (self.past[c] as f32 / cur as f32).sqrt();
            let tw_row = self.tw.data()[c * w..(c + 1) * w].to_vec();
            let cw_row = &mut self.cw.data_mut()[c * w..(c + 1) * w];
            for (cv, tv) in cw_row.iter_mut().zip(tw_row) {
                *cv = (*cv * wpast + (tv - mean)) / (wpast + 1.0);
            }
            self.past[c] += cur as u64;
        }
        Ok(())
    }

    /// Fusion for an experience trained alongside replayed patterns. `counts`
    /// include the replayed patterns and set the fusion weights; `past` only
    /// grows by the patterns not in `replayed`, since stored patterns were
    /// already counted when first consolidated.
    pub fn consolidate_replayed(
        &mut self,
        classes: &[usize],
        counts: &BTreeMap<usize, usize>,
        replayed: &BTreeMap<usize, usize>,
    ) -> Result<()> {
        for (&c, &r) in replayed {
            if counts.get(&c).copied().unwrap_or(0) < r {
                return Err(Error::Argument(format!(
                    "class {c} replayed more patterns than it was counted with"
                )));
            }
        }
        self.consolidate(classes, counts)?;
        for (&c, &r) in replayed {
            self.past[c] -= r as u64;
        }
        Ok(())
    }

    /// Copies trainable `tw` rows into `cw` unchanged and adds the counts.
    pub fn consolidate_plain(&mut self, counts: &BTreeMap<usize, usize>) -> Result<()> {
        let w = self.row_width();
        for c in 0..self.classes {
            if self.trainable[c] {
                let row = self.tw.data()[c * w..(c + 1) * w].to_vec();
                self.cw.data_mut()[c * w..(c + 1) * w].copy_from_slice(&row);
            }
        }
        for (&c, &n) in counts {
            self.check_classes(&[c])?;
            self.past[c] += n as u64;
        }
        Ok(())
    }

    fn check_layer(&self, layer: &Layer) -> Result<()> {
        match layer.kind {
            LayerKind::Dense { d_in, d_out } if d_in == self.latent_dim && d_out == self.classes => Ok(()),
            _ => Err(Error::dim(
                "cwr head",
                &[self.latent_dim, self.classes],
                layer.weights.shape(),
            )),
        }
    }

    /// Writes `tw` into a dense output layer (`[latent, classes]` + bias).
    pub fn load_tw_into(&self, layer: &mut Layer) -> Result<()> {
        self.check_layer(layer)?;
        let (d, k, w) = (self.latent_dim, self.classes, self.row_width());
        let tw = self.tw.data();
        let weights = layer.weights.data_mut();
        for j in 0..k {
            for i in 0..d {
                weights[i * k + j] = tw[j * w + i];
            }
        }
        let bias = layer.bias.data_mut();
        for j in 0..k {
            bias[j] = tw[j * w + d];
        }
        Ok(())
    }

    /// Reads `tw` back from a dense output layer.
    pub fn store_tw_from(&mut self, layer: &Layer) -> Result<()> {
        self.check_layer(layer)?;
        let (d, k, w) = (self.latent_dim, self.classes, self.row_width());
        let weights = layer.weights.data();
        let bias = layer.bias.data();
        let tw = self.tw.data_mut();
        for j in 0..k {
            for i in 0..d {
                tw[j * w + i] = weights[i * k + j];
            }
            tw[j * w + d] = bias[j];
        }
        Ok(())
    }

    /// Zeroes output-layer gradients of rows excluded from this experience.
    pub fn mask_grads(&self, layer: &mut Layer) -> Result<()> {
        self.check_layer(layer)?;
        let k = self.classes;
        let frozen: Vec<usize> = (0..k).filter(|&j| !self.trainable[j]).collect();
        if frozen.is_empty() {
            return Ok(());
        }
        let gw = layer.weights.grad_mut();
        for i in 0..self.latent_dim {
            for &j in &frozen {
                gw[i * k + j] = 0.0;
            }
        }
        let gb = layer.bias.grad_mut();
        for &j in &frozen {
            gb[j] = 0.0;
        }
        Ok(())
    }

    /// Sets `cw` from a trained output layer and the per-class counts; `tw`
    /// is reset to zero.
    pub fn set_consolidated(&mut self, layer: &Layer, counts: &BTreeMap<usize, usize>) -> Result<()> {
        self.store_tw_from(layer)?;
        self.cw = self.tw.clone();
        self.tw.data_mut().fill(0.0);
        self.past.fill(0);
        for (&c, &n) in counts {
            self.check_classes(&[c])?;
            self.past[c] = n as u64;
        }
        Ok(())
    }

    /// Inference logits from output-layer features, always through `cw`.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        if features.item_shape() != [self.latent_dim] {
            return Err(Error::dim("cwr logits", &[self.latent_dim], features.item_shape()));
        }
        let (d, k, w) = (self.latent_dim, self.classes, self.row_width());
        let cw = self.cw.data();
        let mut out = Vec::with_capacity(features.batch() * k);
        for n in 0..features.batch() {
            let f = features.item(n);
            for j in 0..k {
                let row = &cw[j * w..(j + 1) * w];
                let dot: f32 = row[..d].iter().zip(f).map(|(a, b)| a * b).sum();
                out.push(dot + row[d]);
            }
        }
        Tensor::new(vec![features.batch(), k], out)
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(features)?;
        Ok((0..logits.batch()).map(|n| argmax(logits.item(n))).collect())
    }
}

/// Index of the first maximum.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn counts(pairs: &[(usize, usize)]) -> BTreeMap<usize, usize> {
        pairs.iter().copied().collect()
    }

    fn head_with_cw(rows: &[&[f32]]) -> CwrHead {
        let mut h = CwrHead::new(rows.len(), rows[0].len() - 1);
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        h.cw = Tensor::new(vec![rows.len(), rows[0].len()], data).unwrap();
        h
    }

    #[test]
    fn init_copies_and_zeroes() {
        let mut h = head_with_cw(&[&[1.0, 2.0], &[0.0, 0.0], &[5.0, 6.0]]);
        h.tw.data_mut().fill(9.0);
        h.init(&[0, 1]).unwrap();
        assert_eq!(h.tw_row(0), &[1.0, 2.0]);
        assert_eq!(h.tw_row(1), &[0.0, 0.0]);
        assert_eq!(h.tw_row(2), &[0.0, 0.0]);
        assert_eq!(h.trainable_rows(), &[true, true, false]);
        assert!(matches!(h.init(&[3]), Err(Error::Argument(_))));
    }

    #[test]
    fn fresh_class_takes_centered_tw() {
        let mut h = CwrHead::new(3, 1);
        h.init(&[1]).unwrap();
        h.tw.data_mut().copy_from_slice(&[0.0, 0.0, 3.0, 1.0, 0.0, 0.0]);
        h.consolidate(&[1], &counts(&[(1, 30)])).unwrap();
        assert_eq!(h.cw_row(1), &[1.0, -1.0]);
        assert_eq!(h.past()[1], 30);
    }

    #[test]
    fn weighted_fusion_hand_value() {
        // past = cur = 100 -> wpast = 1; mean over both rows is 1, so
        // tw[0] - mean = [2, 0]; cw[0] = [0, 0] -> [1, 0]
        let mut h = CwrHead::new(2, 1);
        h.past[0] = 100;
        h.init(&[0, 1]).unwrap();
        h.tw.data_mut().copy_from_slice(&[3.0, 1.0, 1.0, -1.0]);
        h.consolidate(&[0, 1], &counts(&[(0, 100), (1, 4)])).unwrap();
        assert_eq!(h.cw_row(0), &[1.0, 0.0]);
        assert_eq!(h.cw_row(1), &[0.0, -2.0]);
        assert_eq!(h.past()[0], 200);
    }

    #[test]
    fn other_rows_untouched_and_zero_count_rejected() {
        let mut h = head_with_cw(&[&[1.5, -2.0], &[0.25, 7.0]]);
        h.init(&[1]).unwrap();
        let before = h.cw_row(0).to_vec();
        h.consolidate(&[1], &counts(&[(1, 4)])).unwrap();
        assert_eq!(h.cw_row(0), before.as_slice());
        assert!(matches!(
            h.consolidate(&[1], &counts(&[(1, 0)])),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn layer_round_trip_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = Layer::dense(2, 3, &mut rng);
        let mut h = CwrHead::new(3, 2);
        h.tw = Tensor::new(vec![3, 3], (0..9).map(|v| v as f32).collect()).unwrap();
        h.load_tw_into(&mut layer).unwrap();
        assert_eq!(layer.weights.data(), &[0.0, 3.0, 6.0, 1.0, 4.0, 7.0]);
        assert_eq!(layer.bias.data(), &[2.0, 5.0, 8.0]);
        let saved = h.tw.clone();
        h.tw.data_mut().fill(0.0);
        h.store_tw_from(&layer).unwrap();
        assert_eq!(h.tw, saved);

        h.trainable = vec![false, true, false];
        layer.weights.grad_mut().fill(1.0);
        layer.bias.grad_mut().fill(1.0);
        h.mask_grads(&mut layer).unwrap();
        assert_eq!(layer.weights.grad().unwrap(), &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(layer.bias.grad().unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn inference_uses_cw() {
        let mut h = head_with_cw(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.5]]);
        let f = Tensor::new(vec![2, 2], vec![2.0, 1.0, 0.0, 1.0]).unwrap();
        let before = h.predict(&f).unwrap();
        assert_eq!(before, vec![0, 1]);
        h.tw.data_mut().iter_mut().for_each(|v| *v = -100.0);
        assert_eq!(h.predict(&f).unwrap(), before);
    }
}
