//! Layered network with named cut points for latent replay.
//!
//! The cut splits the layer list into a below-cut part `[0, cut)` and an
//! above-cut part `[cut, len)`. Replay latents enter at the cut by batch
//! concatenation; their gradient stops there.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::ConvGeometry;
use crate::layer::{sgd_step, Layer, LayerKind};
use crate::tensor::Tensor;

pub const NETWORK_FORMAT: &str = "edgecl-network";
pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutName {
    Input,
    Conv2,
    Pool,
}

impl CutName {
    pub const ALL: [CutName; 3] = [CutName::Input, CutName::Conv2, CutName::Pool];

    pub fn as_str(self) -> &'static str {
        match self {
            CutName::Input => "input",
            CutName::Conv2 => "conv2",
            CutName::Pool => "pool",
        }
    }
}

impl fmt::Display for CutName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CutName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(CutName::Input),
            "conv2" => Ok(CutName::Conv2),
            "pool" => Ok(CutName::Pool),
            other => Err(Error::Config(format!(
                "unknown cut {other:?} (expected input, conv2 or pool)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutPoint {
    pub name: CutName,
    pub index: usize,
}

/// Shape of the default architecture:
/// `conv3x3(conv1)+relu -> conv3x3(conv2)+relu [conv2] -> gap [pool] -> dense`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub channels: usize,
    pub image_size: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub classes: usize,
}

impl ArchSpec {
    pub fn desk(classes: usize) -> Self {
        ArchSpec {
            channels: 3,
            image_size: 16,
            conv1: 8,
            conv2: 16,
            classes,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayeredNetwork {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    cuts: Vec<CutPoint>,
    cut: CutPoint,
    frozen: Vec<bool>,
    seed: u64,
    generation: u64,
}

#[derive(Serialize, Deserialize)]
struct NetworkDocument {
    format: String,
    version: u32,
    seed: u64,
    input_shape: Vec<usize>,
    cut: CutName,
    cuts: Vec<CutPoint>,
    frozen: Vec<bool>,
    layers: Vec<Layer>,
}

impl LayeredNetwork {
    /// Builds the default three-cut architecture with seeded Glorot init.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        if arch.classes == 0 || arch.conv1 == 0 || arch.conv2 == 0 || arch.channels == 0 {
            return Err(Error::Config(format!("degenerate architecture {arch:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = arch.image_size;
        let g1 = ConvGeometry {
            c_in: arch.channels,
            c_out: arch.conv1,
            height: s,
            width: s,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let g2 = ConvGeometry {
            c_in: arch.conv1,
            c_out: arch.conv2,
            ..g1
        };
        let layers = vec![
            Layer::conv2d(g1, &mut rng)?,
            Layer::relu(),
            Layer::conv2d(g2, &mut rng)?,
            Layer::relu(),
            Layer::global_avg_pool(),
            Layer::dense(arch.conv2, arch.classes, &mut rng),
        ];
        let cuts = vec![
            CutPoint {
                name: CutName::Input,
                index: 0,
            },
            CutPoint {
                name: CutName::Conv2,
                index: 4,
            },
            CutPoint {
                name: CutName::Pool,
                index: 5,
            },
        ];
        let net = LayeredNetwork {
            input_shape: vec![arch.channels, s, s],
            frozen: vec![false; layers.len()],
            layers,
            cut: cuts[0],
            cuts,
            seed,
            generation: 0,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let mut shape = self.input_shape.clone();
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
        }
        if self.layers.is_empty() || self.frozen.len() != self.layers.len() {
            return Err(Error::Config("network layer list is inconsistent".into()));
        }
        if !matches!(self.layers.last().map(|l| &l.kind), Some(LayerKind::Dense { .. })) {
            return Err(Error::Config("the output layer must be dense".into()));
        }
        for c in &self.cuts {
            // boundary index: the output layer must stay above every cut
            if c.index > self.output_index() {
                return Err(Error::Config(format!("cut {} must precede the output layer", c.name)));
            }
        }
        if !self.cuts.contains(&self.cut) {
            return Err(Error::Config(format!("active cut {} is not defined", self.cut.name)));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access; counts as a parameter change.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    /// Incremented whenever parameters below the output layer may have changed.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn output_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn num_classes(&self) -> usize {
        match self.layers[self.output_index()].kind {
            LayerKind::Dense { d_out, .. } => d_out,
            _ => unreachable!("validated"),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.layers[self.output_index()].kind {
            LayerKind::Dense { d_in, .. } => d_in,
            _ => unreachable!("validated"),
        }
    }

    pub fn cut(&self) -> CutPoint {
        self.cut
    }

    pub fn cut_point(&self, name: CutName) -> Result<CutPoint> {
        self.cuts
            .iter()
            .copied()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Config(format!("network has no cut named {name}")))
    }

    pub fn set_cut(&mut self, name: CutName) -> Result<()> {
        self.cut = self.cut_point(name)?;
        Ok(())
    }

    pub fn below_cut(&self) -> Range<usize> {
        0..self.cut.index
    }

    pub fn above_cut(&self) -> Range<usize> {
        self.cut.index..self.layers.len()
    }

    /// Layers below the output head.
    pub fn trunk(&self) -> Range<usize> {
        0..self.output_index()
    }

    pub fn is_frozen(&self, layer: usize) -> bool {
        self.frozen[layer]
    }

    pub fn set_frozen(&mut self, layer: usize, frozen: bool) {
        self.frozen[layer] = frozen;
    }

    /// Freezes (or unfreezes) every layer below the active cut.
    pub fn freeze_below_cut(&mut self, frozen: bool) {
        let below = self.below_cut();
        for (i, f) in self.frozen.iter_mut().enumerate() {
            *f = if below.contains(&i) { frozen } else { false };
        }
    }

    /// True when some below-cut layer has parameters that may train.
    pub fn below_cut_trainable(&self) -> bool {
        self.below_cut().any(|i| self.layers[i].has_params() && !self.frozen[i])
    }

    /// Item shape of the activation at the given layer boundary.
    pub fn shape_at(&self, index: usize) -> Vec<usize> {
        let mut shape = self.input_shape.clone();
        for l in &self.layers[..index] {
            shape = l.output_shape(&shape).expect("validated");
        }
        shape
    }

    pub fn latent_shape(&self) -> Vec<usize> {
        self.shape_at(self.cut.index)
    }

    fn run(&self, range: Range<usize>, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for l in &self.layers[range] {
            x = l.forward(&x)?;
        }
        Ok(x)
    }

    fn check_input(&self, op: &'static str, batch: &Tensor, at: usize) -> Result<()> {
        let expected = self.shape_at(at);
        if batch.shape().is_empty() || batch.item_shape() != expected.as_slice() {
            return Err(Error::dim(op, &expected, batch.item_shape()));
        }
        Ok(())
    }

    /// Forward through the below-cut layers. The identity for the input cut.
    pub fn extract_latent(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input("extract_latent", batch, 0)?;
        self.run(self.below_cut(), batch)
    }

    /// Output-layer input features (the pool activation).
    pub fn features(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input("features", batch, 0)?;
        self.run(self.trunk(), batch)
    }

    /// Inference forward from raw input to logits.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input("forward", batch, 0)?;
        self.run(0..self.layers.len(), batch)
    }

    /// Forward from the activation at boundary `start` to logits.
    pub fn forward_from(&self, start: usize, activation: &Tensor) -> Result<Tensor> {
        self.check_input("forward_from", activation, start)?;
        self.run(start..self.layers.len(), activation)
    }

    fn run_train(&mut self, range: Range<usize>, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for l in &mut self.layers[range] {
            x = l.forward_train(&x)?;
        }
        Ok(x)
    }

    /// Recorded forward through the whole network.
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_input("forward_train", batch, 0)?;
        self.run_train(0..self.layers.len(), batch)
    }

    /// Recorded forward through the below-cut layers, for current patterns
    /// whose gradient continues below the cut.
    pub fn forward_below(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_input("forward_below", batch, 0)?;
        self.run_train(self.below_cut(), batch)
    }

    /// Concatenates `[current; replay]` on the batch dimension at the cut and
    /// runs a recorded forward through the above-cut layers.
    pub fn mixed_forward(&mut self, current: &Tensor, replay: &Tensor) -> Result<Tensor> {
        let at = self.cut.index;
        self.check_input("mixed_forward", current, at)?;
        self.check_input("mixed_forward", replay, at)?;
        let joined = Tensor::concat_rows(current, replay)?;
        self.run_train(self.above_cut(), &joined)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.zero_grad();
        }
    }

    fn backward_range(&mut self, range: Range<usize>, upstream: Tensor, input_grad: bool) -> Result<Option<Tensor>> {
        let start = range.start;
        let mut g = upstream;
        for i in range.rev() {
            let need = i > start || input_grad;
            match self.layers[i].backward(&g, need)? {
                Some(next) => g = next,
                None => {
                    debug_assert_eq!(i, start);
                    self.clear_frozen_grads();
                    return Ok(None);
                }
            }
        }
        self.clear_frozen_grads();
        Ok(Some(g))
    }

    fn clear_frozen_grads(&mut self) {
        for (l, &f) in self.layers.iter_mut().zip(&self.frozen) {
            if f {
                l.zero_grad();
            }
        }
    }

    /// Full backward after `forward_train`; parameter gradients are reset
    /// first.
    pub fn backward(&mut self, loss_grads: &Tensor) -> Result<()> {
        self.zero_grad();
        self.backward_range(0..self.layers.len(), loss_grads.clone(), false)?;
        Ok(())
    }

    /// Backward for a mixed batch whose first `current_rows` rows are current
    /// patterns. Above-cut gradients take every row; below-cut gradients take
    /// only the current rows, since replay patterns stop at the cut. Frozen
    /// layers end with zero gradients. Parameter gradients are reset first.
    pub fn mixed_backward(&mut self, loss_grads: &Tensor, current_rows: usize) -> Result<()> {
        let batch = loss_grads.batch();
        if current_rows > batch {
            return Err(Error::Argument(format!(
                "current row count {current_rows} exceeds mixed batch of {batch}"
            )));
        }
        if !self.layers[self.cut.index].has_recorded_forward() {
            return Err(Error::State("mixed_backward without a recorded mixed_forward".into()));
        }
        self.zero_grad();
        let below = self.below_cut();
        let descend = current_rows > 0 && self.below_cut_trainable();
        if descend && self.layers[0].recorded_batch() != Some(current_rows) {
            return Err(Error::State(format!(
                "below-cut layers need a recorded forward of the {current_rows} current rows"
            )));
        }
        let at_cut = self.backward_range(self.above_cut(), loss_grads.clone(), descend)?;
        if let Some(g) = at_cut {
            self.backward_range(below, g.slice_rows(0, current_rows), false)?;
        } else {
            for l in &mut self.layers[below] {
                l.discard_recording();
            }
        }
        Ok(())
    }

    /// Applies SGD to every unfrozen layer in `range` using its stored
    /// gradients.
    pub fn sgd_layers(&mut self, range: Range<usize>, lr: f32) -> Result<()> {
        if range.start < self.output_index() {
            self.generation += 1;
        }
        for i in range {
            if self.frozen[i] || !self.layers[i].has_params() {
                continue;
            }
            let l = &mut self.layers[i];
            for t in [&mut l.weights, &mut l.bias] {
                let g = t.grad().map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
                sgd_step(t.data_mut(), &g, lr)?;
            }
        }
        Ok(())
    }

    /// Flattened trunk parameters (weights then bias, layer order).
    pub fn trunk_params(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for l in &self.layers[self.trunk()] {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Flattened trunk gradients in `trunk_params` order; missing gradients
    /// read as zero.
    pub fn trunk_grads(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for l in &self.layers[self.trunk()] {
            for t in [&l.weights, &l.bias] {
                match t.grad() {
                    Some(g) => out.extend_from_slice(g),
                    None => out.extend(std::iter::repeat_n(0.0, t.len())),
                }
            }
        }
        out
    }

    pub fn set_trunk_params(&mut self, flat: &[f32]) -> Result<()> {
        let total: usize = self.layers[self.trunk()].iter().map(Layer::param_count).sum();
        if flat.len() != total {
            return Err(Error::dim("set_trunk_params", &[total], &[flat.len()]));
        }
        let mut off = 0;
        let trunk = self.trunk();
        for l in &mut self.layers[trunk] {
            for t in [&mut l.weights, &mut l.bias] {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        self.generation += 1;
        Ok(())
    }

    /// Adds `extra` to the trunk gradients (same layout as `trunk_grads`).
    pub fn add_trunk_grads(&mut self, extra: &[f32]) -> Result<()> {
        let total: usize = self.layers[self.trunk()].iter().map(Layer::param_count).sum();
        if extra.len() != total {
            return Err(Error::dim("add_trunk_grads", &[total], &[extra.len()]));
        }
        let mut off = 0;
        let trunk = self.trunk();
        for l in &mut self.layers[trunk] {
            for t in [&mut l.weights, &mut l.bias] {
                let n = t.len();
                if n == 0 {
                    continue;
                }
                for (g, e) in t.grad_mut().iter_mut().zip(&extra[off..off + n]) {
                    *g += e;
                }
                off += n;
            }
        }
        Ok(())
    }

    pub fn output_layer(&self) -> &Layer {
        &self.layers[self.output_index()]
    }

    pub fn output_layer_mut(&mut self) -> &mut Layer {
        let i = self.output_index();
        &mut self.layers[i]
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = NetworkDocument {
            format: NETWORK_FORMAT.into(),
            version: NETWORK_FORMAT_VERSION,
            seed: self.seed,
            input_shape: self.input_shape.clone(),
            cut: self.cut.name,
            cuts: self.cuts.clone(),
            frozen: self.frozen.clone(),
            layers: self.layers.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: NetworkDocument = serde_json::from_str(s)?;
        if doc.format != NETWORK_FORMAT || doc.version != NETWORK_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported network document {} v{}",
                doc.format, doc.version
            )));
        }
        let cut = doc
            .cuts
            .iter()
            .copied()
            .find(|c| c.name == doc.cut)
            .ok_or_else(|| Error::Format(format!("cut {} not listed", doc.cut)))?;
        let net = LayeredNetwork {
            input_shape: doc.input_shape,
            layers: doc.layers,
            cuts: doc.cuts,
            cut,
            frozen: doc.frozen,
            seed: doc.seed,
            generation: 0,
        };
        net.validate()?;
        Ok(net)
    }
}
