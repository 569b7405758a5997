//! Differentiable layers and the softmax cross-entropy loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense { d_in: usize, d_out: usize },
    Conv2d(ConvGeometry),
    Relu,
    GlobalAvgPool,
}

/// One layer: kind tag plus its weights and bias. Parameter-free layers hold
/// empty tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub weights: Tensor,
    pub bias: Tensor,
    #[serde(skip)]
    cache: Option<Tensor>,
}

fn glorot<R: Rng + ?Sized>(len: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    (0..len).map(|_| rng.gen_range(-limit..=limit)).collect()
}

impl Layer {
    /// Dense layer with weights laid out `[d_in, d_out]`.
    pub fn dense<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = glorot(d_in * d_out, d_in, d_out, rng);
        Layer {
            kind: LayerKind::Dense { d_in, d_out },
            weights: Tensor::new(vec![d_in, d_out], w).unwrap(),
            bias: Tensor::zeros(&[d_out]),
            cache: None,
        }
    }

    pub fn conv2d<R: Rng + ?Sized>(geom: ConvGeometry, rng: &mut R) -> Result<Self> {
        if !geom.fits() || geom.c_in == 0 || geom.c_out == 0 {
            return Err(Error::Config(format!("conv kernel does not fit input: {geom:?}")));
        }
        let kk = geom.kernel * geom.kernel;
        let w = glorot(geom.weight_len(), geom.c_in * kk, geom.c_out * kk, rng);
        Ok(Layer {
            kind: LayerKind::Conv2d(geom),
            weights: Tensor::new(vec![geom.c_out, geom.c_in, geom.kernel, geom.kernel], w)?,
            bias: Tensor::zeros(&[geom.c_out]),
            cache: None,
        })
    }

    pub fn relu() -> Self {
        Self::parameter_free(LayerKind::Relu)
    }

    pub fn global_avg_pool() -> Self {
        Self::parameter_free(LayerKind::GlobalAvgPool)
    }

    fn parameter_free(kind: LayerKind) -> Self {
        Layer {
            kind,
            weights: Tensor::zeros(&[0]),
            bias: Tensor::zeros(&[0]),
            cache: None,
        }
    }

    pub fn has_params(&self) -> bool {
        !self.weights.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Output item shape for a given input item shape (batch excluded).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::Dense { d_in, d_out } => {
                if input != [*d_in] {
                    return Err(Error::dim("dense", &[*d_in], input));
                }
                Ok(vec![*d_out])
            }
            LayerKind::Conv2d(g) => {
                let expected = [g.c_in, g.height, g.width];
                if input != expected {
                    return Err(Error::dim("conv2d", &expected, input));
                }
                Ok(vec![g.c_out, g.out_height(), g.out_width()])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::GlobalAvgPool => {
                if input.len() != 3 {
                    return Err(Error::dim("global_avg_pool", &[0, 0, 0], input));
                }
                Ok(vec![input[0]])
            }
        }
    }

    /// Inference forward; nothing is recorded.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let out_item = self.output_shape(input.item_shape())?;
        let batch = input.batch();
        let x = input.data();
        let y = match &self.kind {
            LayerKind::Dense { d_in, d_out } => {
                kernels::dense_forward(x, self.weights.data(), self.bias.data(), batch, *d_in, *d_out)
            }
            LayerKind::Conv2d(g) => kernels::conv2d_forward(x, self.weights.data(), self.bias.data(), batch, g),
            LayerKind::Relu => kernels::relu_forward(x),
            LayerKind::GlobalAvgPool => {
                let s = input.item_shape();
                kernels::gap_forward(x, batch, s[0], s[1] * s[2])
            }
        };
        let mut shape = vec![batch];
        shape.extend(out_item);
        let out = Tensor::new(shape, y)?;
        out.check_finite("forward")?;
        Ok(out)
    }

    /// Training forward: records the input for the next `backward`.
    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.forward(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn has_recorded_forward(&self) -> bool {
        self.cache.is_some()
    }

    pub fn recorded_batch(&self) -> Option<usize> {
        self.cache.as_ref().map(Tensor::batch)
    }

    pub fn discard_recording(&mut self) {
        self.cache = None;
    }

    /// Consumes the recorded forward, accumulates parameter gradients and
    /// returns the input gradient when requested.
    pub fn backward(&mut self, upstream: &Tensor, input_grad: bool) -> Result<Option<Tensor>> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward".into()))?;
        let batch = input.batch();
        let out_item = self.output_shape(input.item_shape())?;
        let mut expected = vec![batch];
        expected.extend(out_item);
        if upstream.shape() != expected.as_slice() {
            return Err(Error::dim("backward", &expected, upstream.shape()));
        }
        let gy = upstream.data();
        let gx = match &self.kind {
            LayerKind::Dense { d_in, d_out } => {
                let (d_in, d_out) = (*d_in, *d_out);
                let mut gx = input_grad.then(|| vec![0.0f32; batch * d_in]);
                let mut gw = std::mem::take(self.weights.grad_vec_mut());
                let mut gb = std::mem::take(self.bias.grad_vec_mut());
                kernels::dense_backward(
                    input.data(),
                    self.weights.data(),
                    gy,
                    batch,
                    d_in,
                    d_out,
                    &mut gw,
                    &mut gb,
                    gx.as_deref_mut(),
                );
                *self.weights.grad_vec_mut() = gw;
                *self.bias.grad_vec_mut() = gb;
                gx
            }
            LayerKind::Conv2d(g) => {
                let g = *g;
                let mut gx = input_grad.then(|| vec![0.0f32; batch * g.in_len()]);
                let mut gw = std::mem::take(self.weights.grad_vec_mut());
                let mut gb = std::mem::take(self.bias.grad_vec_mut());
                kernels::conv2d_backward(
                    input.data(),
                    self.weights.data(),
                    gy,
                    batch,
                    &g,
                    &mut gw,
                    &mut gb,
                    gx.as_deref_mut(),
                );
                *self.weights.grad_vec_mut() = gw;
                *self.bias.grad_vec_mut() = gb;
                gx
            }
            LayerKind::Relu => input_grad.then(|| kernels::relu_backward(input.data(), gy)),
            LayerKind::GlobalAvgPool => {
                let s = input.item_shape();
                input_grad.then(|| kernels::gap_backward(gy, batch, s[0], s[1] * s[2]))
            }
        };
        for t in [&self.weights, &self.bias] {
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("non-finite parameter gradient".into()));
                }
            }
        }
        match gx {
            Some(gx) => {
                let t = Tensor::new(input.shape().to_vec(), gx)?;
                t.check_finite("backward")?;
                Ok(Some(t))
            }
            None => Ok(None),
        }
    }

    pub fn zero_grad(&mut self) {
        if self.has_params() {
            self.weights.zero_grad();
            self.bias.zero_grad();
        }
    }
}

/// Softmax cross-entropy over a `[batch, classes]` logit tensor; the loss is
/// summed over rows and divided by `norm`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize], norm: usize) -> Result<(f32, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::dim("softmax_xent", &[labels.len(), 0], shape));
    }
    let classes = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let (loss, grad) = kernels::softmax_xent(logits.data(), labels, classes, norm);
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    Ok((loss, Tensor::new(shape.to_vec(), grad)?))
}

/// Plain SGD: `w <- w - lr * g`. A step with any non-finite gradient is
/// refused and leaves `weights` untouched.
pub fn sgd_step(weights: &mut [f32], grads: &[f32], lr: f32) -> Result<()> {
    if weights.len() != grads.len() {
        return Err(Error::dim("sgd_step", &[weights.len()], &[grads.len()]));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Argument(format!("learning rate must be non-negative, got {lr}")));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient; step refused".into()));
    }
    for (w, g) in weights.iter_mut().zip(grads) {
        *w -= lr * g;
    }
    Ok(())
}
