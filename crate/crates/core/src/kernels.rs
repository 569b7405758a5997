//! Raw forward/backward kernels on flat slices.
//!
//! Kernels are generic over the float type. The engine instantiates them at
//! `f32`; gradient checks instantiate the same code at `f64` so central
//! differences are not swamped by single-precision rounding.

use num_traits::Float;
use serde::{Deserialize, Serialize};

/// `y[n, o] = b[o] + sum_i x[n, i] * w[i, o]`.
pub fn dense_forward<T: Float>(x: &[T], w: &[T], b: &[T], batch: usize, d_in: usize, d_out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(batch * d_out);
    for n in 0..batch {
        y.extend_from_slice(b);
        let row = &mut y[n * d_out..(n + 1) * d_out];
        let xr = &x[n * d_in..(n + 1) * d_in];
        for (i, &xv) in xr.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let wr = &w[i * d_out..(i + 1) * d_out];
            for (yo, &wv) in row.iter_mut().zip(wr) {
                *yo = *yo + xv * wv;
            }
        }
    }
    y
}

/// Accumulates weight/bias gradients and, when `gx` is given, writes the
/// input gradient.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Float>(
    x: &[T],
    w: &[T],
    gy: &[T],
    batch: usize,
    d_in: usize,
    d_out: usize,
    gw: &mut [T],
    gb: &mut [T],
    gx: Option<&mut [T]>,
) {
    for n in 0..batch {
        let gr = &gy[n * d_out..(n + 1) * d_out];
        let xr = &x[n * d_in..(n + 1) * d_in];
        for (b, &g) in gb.iter_mut().zip(gr) {
            *b = *b + g;
        }
        for (i, &xv) in xr.iter().enumerate() {
            let gwr = &mut gw[i * d_out..(i + 1) * d_out];
            for (gwv, &g) in gwr.iter_mut().zip(gr) {
                *gwv = *gwv + xv * g;
            }
        }
    }
    if let Some(gx) = gx {
        for n in 0..batch {
            let gr = &gy[n * d_out..(n + 1) * d_out];
            for i in 0..d_in {
                let wr = &w[i * d_out..(i + 1) * d_out];
                let mut acc = T::zero();
                for (&wv, &g) in wr.iter().zip(gr) {
                    acc = acc + wv * g;
                }
                gx[n * d_in + i] = acc;
            }
        }
    }
}

/// Shape arithmetic for a square-kernel 2-d cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn fits(&self) -> bool {
        self.stride > 0
            && self.kernel > 0
            && self.height + 2 * self.pad >= self.kernel
            && self.width + 2 * self.pad >= self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel * self.kernel
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.out_height() * self.out_width()
    }

    /// Output columns `ox` whose input column `ox*stride + k - pad` is in
    /// bounds, as a half-open range.
    fn valid_cols(&self, k: usize, out: usize, extent: usize) -> (usize, usize) {
        let s = self.stride;
        // smallest ox with ox*s + k >= pad
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(s) };
        // largest ox with ox*s + k - pad < extent
        let lim = extent + self.pad;
        let hi = if lim > k { ((lim - k - 1) / s + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfolds one image into `[c_in*k*k, oh*ow]` patch columns; padding reads
/// as zero.
fn im2col<T: Float>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, wd, k, s) = (g.height, g.width, g.kernel, g.stride);
    cols.fill(T::zero());
    for ci in 0..g.c_in {
        let xc = &x[ci * h * wd..(ci + 1) * h * wd];
        for ky in 0..k {
            let (oy0, oy1) = g.valid_cols(ky, oh, h);
            for kx in 0..k {
                let (ox0, ox1) = g.valid_cols(kx, ow, wd);
                let row = &mut cols[((ci * k + ky) * k + kx) * oh * ow..][..oh * ow];
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - g.pad;
                    let xrow = &xc[iy * wd..(iy + 1) * wd];
                    for ox in ox0..ox1 {
                        row[oy * ow + ox] = xrow[ox * s + kx - g.pad];
                    }
                }
            }
        }
    }
}

/// Adds patch-column gradients back onto the image they were unfolded from.
fn col2im<T: Float>(cols: &[T], g: &ConvGeometry, gx: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, wd, k, s) = (g.height, g.width, g.kernel, g.stride);
    for ci in 0..g.c_in {
        let gc = &mut gx[ci * h * wd..(ci + 1) * h * wd];
        for ky in 0..k {
            let (oy0, oy1) = g.valid_cols(ky, oh, h);
            for kx in 0..k {
                let (ox0, ox1) = g.valid_cols(kx, ow, wd);
                let row = &cols[((ci * k + ky) * k + kx) * oh * ow..][..oh * ow];
                for oy in oy0..oy1 {
                    let iy = oy * s + ky - g.pad;
                    let grow = &mut gc[iy * wd..(iy + 1) * wd];
                    for ox in ox0..ox1 {
                        let ix = ox * s + kx - g.pad;
                        grow[ix] = grow[ix] + row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Weight layout `[c_out, c_in, k, k]`, input `[batch, c_in, h, w]`.
pub fn conv2d_forward<T: Float>(x: &[T], w: &[T], b: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let p = g.out_height() * g.out_width();
    let r = g.c_in * g.kernel * g.kernel;
    let mut y = vec![T::zero(); batch * g.out_len()];
    let mut cols = vec![T::zero(); r * p];
    for n in 0..batch {
        im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], g, &mut cols);
        for co in 0..g.c_out {
            let plane = &mut y[(n * g.c_out + co) * p..][..p];
            plane.fill(b[co]);
            for (ri, &wv) in w[co * r..(co + 1) * r].iter().enumerate() {
                for (yv, &c) in plane.iter_mut().zip(&cols[ri * p..(ri + 1) * p]) {
                    *yv = *yv + wv * c;
                }
            }
        }
    }
    y
}

/// Accumulates weight and bias gradients; `gx`, when given, is overwritten
/// with the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Float>(
    x: &[T],
    w: &[T],
    gy: &[T],
    batch: usize,
    g: &ConvGeometry,
    gw: &mut [T],
    gb: &mut [T],
    mut gx: Option<&mut [T]>,
) {
    let p = g.out_height() * g.out_width();
    let r = g.c_in * g.kernel * g.kernel;
    let mut cols = vec![T::zero(); r * p];
    let mut gcols = vec![T::zero(); r * p];
    if let Some(gx) = gx.as_deref_mut() {
        gx.fill(T::zero());
    }
    for n in 0..batch {
        im2col(&x[n * g.in_len()..(n + 1) * g.in_len()], g, &mut cols);
        gcols.fill(T::zero());
        for co in 0..g.c_out {
            let gplane = &gy[(n * g.c_out + co) * p..][..p];
            gb[co] = gplane.iter().fold(gb[co], |a, &v| a + v);
            for ri in 0..r {
                let crow = &cols[ri * p..(ri + 1) * p];
                let acc = gplane.iter().zip(crow).fold(T::zero(), |a, (&gv, &c)| a + gv * c);
                gw[co * r + ri] = gw[co * r + ri] + acc;
                if gx.is_some() {
                    let wv = w[co * r + ri];
                    for (gc, &gv) in gcols[ri * p..(ri + 1) * p].iter_mut().zip(gplane) {
                        *gc = *gc + wv * gv;
                    }
                }
            }
        }
        if let Some(gx) = gx.as_deref_mut() {
            col2im(&gcols, g, &mut gx[n * g.in_len()..(n + 1) * g.in_len()]);
        }
    }
}

pub fn relu_forward<T: Float>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<T: Float>(x: &[T], gy: &[T]) -> Vec<T> {
    x.iter()
        .zip(gy)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

/// `[batch, c, hw] -> [batch, c]` spatial mean.
pub fn gap_forward<T: Float>(x: &[T], batch: usize, channels: usize, spatial: usize) -> Vec<T> {
    let inv = T::one() / T::from(spatial).unwrap();
    (0..batch * channels)
        .map(|i| x[i * spatial..(i + 1) * spatial].iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect()
}

pub fn gap_backward<T: Float>(gy: &[T], batch: usize, channels: usize, spatial: usize) -> Vec<T> {
    let inv = T::one() / T::from(spatial).unwrap();
    let mut gx = Vec::with_capacity(batch * channels * spatial);
    for &g in &gy[..batch * channels] {
        gx.extend(std::iter::repeat_n(g * inv, spatial));
    }
    gx
}

/// Softmax cross-entropy summed over rows and divided by `norm`.
///
/// Returns the loss and the logit gradient. `norm` is normally the batch
/// size; the mixed-batch oracles pass a larger value.
pub fn softmax_xent<T: Float>(logits: &[T], labels: &[usize], classes: usize, norm: usize) -> (T, Vec<T>) {
    let batch = labels.len();
    let inv = T::one() / T::from(norm.max(1)).unwrap();
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); batch * classes];
    for (n, &label) in labels.iter().enumerate() {
        let row = &logits[n * classes..(n + 1) * classes];
        let max = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let sum = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp());
        let log_z = max + sum.ln();
        loss = loss + (log_z - row[label]);
        let grow = &mut grad[n * classes..(n + 1) * classes];
        for (c, gv) in grow.iter_mut().enumerate() {
            let p = (row[c] - log_z).exp();
            let target = if c == label { T::one() } else { T::zero() };
            *gv = (p - target) * inv;
        }
    }
    (loss * inv, grad)
}
