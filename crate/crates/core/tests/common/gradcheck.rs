//! Finite-difference checks of every differentiable kernel, run in f64.
//!
//! Each instance draws random shapes and values, contracts the output with a
//! random cotangent `r` to get a scalar `L = <y, r>`, and compares the
//! analytic gradients against central differences. The per-instance error is
//! `|a - n| / max(|a| + |n|, 1e-12)` over the whole gradient vector (2-norms).

use edgecl::kernels::{self, ConvGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: usize = 120;
const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Values bounded away from 0 so differences never straddle a ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (na + nn).max(1e-12)
}

/// Central differences of `f` with respect to every entry of `x`.
fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + H;
            let up = f(&xp);
            xp[i] = orig - H;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub struct Tally {
    pub name: &'static str,
    pub worst: f64,
    pub count: usize,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            name,
            worst: 0.0,
            count: 0,
        }
    }

    fn add(&mut self, e: f64) {
        self.worst = self.worst.max(e);
        self.count += 1;
    }

    pub fn passes(&self) -> bool {
        self.count >= 100 && self.worst < TOL
    }

    pub fn check(&self) {
        assert!(self.count >= 100, "{}: only {} instances", self.name, self.count);
        assert!(self.worst < TOL, "{}: max relative error {:e}", self.name, self.worst);
    }
}

pub fn dense() -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = Tally::new("dense");
    for _ in 0..INSTANCES {
        let (batch, d_in, d_out) = (rng.gen_range(1..4), rng.gen_range(1..7), rng.gen_range(1..6));
        let x = uniform(&mut rng, batch * d_in);
        let w = uniform(&mut rng, d_in * d_out);
        let b = uniform(&mut rng, d_out);
        let r = uniform(&mut rng, batch * d_out);
        let (mut gw, mut gb, mut gx) = (vec![0.0; w.len()], vec![0.0; b.len()], vec![0.0; x.len()]);
        kernels::dense_backward(&x, &w, &r, batch, d_in, d_out, &mut gw, &mut gb, Some(&mut gx));
        let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(&kernels::dense_forward(x, w, b, batch, d_in, d_out), &r);
        t.add(rel_err(&gx, &numeric_grad(&x, |v| loss(v, &w, &b))));
        t.add(rel_err(&gw, &numeric_grad(&w, |v| loss(&x, v, &b))));
        t.add(rel_err(&gb, &numeric_grad(&b, |v| loss(&x, &w, v))));
    }
    t
}

pub fn conv2d() -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut t = Tally::new("conv2d");
    let mut done = 0;
    while done < INSTANCES {
        let g = ConvGeometry {
            c_in: rng.gen_range(1..4),
            c_out: rng.gen_range(1..4),
            height: rng.gen_range(2..7),
            width: rng.gen_range(2..7),
            kernel: rng.gen_range(1..4),
            stride: rng.gen_range(1..3),
            pad: rng.gen_range(0..2),
        };
        if !g.fits() {
            continue;
        }
        done += 1;
        let batch = rng.gen_range(1..3);
        let x = uniform(&mut rng, batch * g.in_len());
        let w = uniform(&mut rng, g.weight_len());
        let b = uniform(&mut rng, g.c_out);
        let r = uniform(&mut rng, batch * g.out_len());
        let (mut gw, mut gb, mut gx) = (vec![0.0; w.len()], vec![0.0; b.len()], vec![0.0; x.len()]);
        kernels::conv2d_backward(&x, &w, &r, batch, &g, &mut gw, &mut gb, Some(&mut gx));
        let loss = |x: &[f64], w: &[f64], b: &[f64]| dot(&kernels::conv2d_forward(x, w, b, batch, &g), &r);
        t.add(rel_err(&gx, &numeric_grad(&x, |v| loss(v, &w, &b))));
        t.add(rel_err(&gw, &numeric_grad(&w, |v| loss(&x, v, &b))));
        t.add(rel_err(&gb, &numeric_grad(&b, |v| loss(&x, &w, v))));
    }
    t
}

pub fn relu() -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = Tally::new("relu");
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..30);
        let x = away_from_zero(&mut rng, n);
        let r = uniform(&mut rng, n);
        let g = kernels::relu_backward(&x, &r);
        t.add(rel_err(&g, &numeric_grad(&x, |v| dot(&kernels::relu_forward(v), &r))));
    }
    t
}

pub fn global_avg_pool() -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut t = Tally::new("global_avg_pool");
    for _ in 0..INSTANCES {
        let (batch, c, s) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..17));
        let x = uniform(&mut rng, batch * c * s);
        let r = uniform(&mut rng, batch * c);
        let g = kernels::gap_backward(&r, batch, c, s);
        t.add(rel_err(
            &g,
            &numeric_grad(&x, |v| dot(&kernels::gap_forward(v, batch, c, s), &r)),
        ));
    }
    t
}

pub fn softmax_cross_entropy() -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = Tally::new("softmax_xent");
    for _ in 0..INSTANCES {
        let (batch, classes) = (rng.gen_range(1..6), rng.gen_range(2..10));
        let norm = batch + rng.gen_range(0..5);
        let logits: Vec<f64> = uniform(&mut rng, batch * classes).iter().map(|v| 4.0 * v).collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
        let (_, g) = kernels::softmax_xent(&logits, &labels, classes, norm);
        let num = numeric_grad(&logits, |v| kernels::softmax_xent(v, &labels, classes, norm).0);
        t.add(rel_err(&g, &num));
    }
    t
}

/// conv -> relu -> conv -> relu -> pool -> dense -> softmax, chained by hand.
pub fn composed_network() -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut t = Tally::new("composed");
    let mut done = 0;
    while done < INSTANCES {
        let (c0, c1, c2, hw, classes, batch) = (2, 3, 4, 5, 3, 2);
        let g1 = ConvGeometry {
            c_in: c0,
            c_out: c1,
            height: hw,
            width: hw,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        let g2 = ConvGeometry {
            c_in: c1,
            c_out: c2,
            height: hw,
            width: hw,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x = uniform(&mut rng, batch * g1.in_len());
        let w1 = uniform(&mut rng, g1.weight_len());
        let b1 = uniform(&mut rng, c1);
        let w2 = uniform(&mut rng, g2.weight_len());
        let b2 = uniform(&mut rng, c2);
        let wd = uniform(&mut rng, c2 * classes);
        let bd = uniform(&mut rng, classes);
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
        let sp = g2.out_height() * g2.out_width();
        let forward = |x: &[f64], w1: &[f64], w2: &[f64], wd: &[f64]| {
            let a1 = kernels::conv2d_forward(x, w1, &b1, batch, &g1);
            let h1 = kernels::relu_forward(&a1);
            let a2 = kernels::conv2d_forward(&h1, w2, &b2, batch, &g2);
            let h2 = kernels::relu_forward(&a2);
            let p = kernels::gap_forward(&h2, batch, c2, sp);
            let z = kernels::dense_forward(&p, wd, &bd, batch, c2, classes);
            (a1, h1, a2, h2, p, z)
        };
        let (a1, h1, a2, h2, p, z) = forward(&x, &w1, &w2, &wd);
        // Resample instances whose pre-activations sit on a kink.
        if a1.iter().chain(&a2).any(|v| v.abs() < 1e-3) {
            continue;
        }
        done += 1;
        let (_, gz) = kernels::softmax_xent(&z, &labels, classes, batch);
        let (mut gwd, mut gbd, mut gp) = (vec![0.0; wd.len()], vec![0.0; classes], vec![0.0; p.len()]);
        kernels::dense_backward(&p, &wd, &gz, batch, c2, classes, &mut gwd, &mut gbd, Some(&mut gp));
        let gh2 = kernels::gap_backward(&gp, batch, c2, sp);
        let ga2 = kernels::relu_backward(&a2, &gh2);
        let (mut gw2, mut gb2, mut gh1) = (vec![0.0; w2.len()], vec![0.0; c2], vec![0.0; h1.len()]);
        kernels::conv2d_backward(&h1, &w2, &ga2, batch, &g2, &mut gw2, &mut gb2, Some(&mut gh1));
        let ga1 = kernels::relu_backward(&a1, &gh1);
        let (mut gw1, mut gb1, mut gx) = (vec![0.0; w1.len()], vec![0.0; c1], vec![0.0; x.len()]);
        kernels::conv2d_backward(&x, &w1, &ga1, batch, &g1, &mut gw1, &mut gb1, Some(&mut gx));
        let _ = h2;
        let loss = |x: &[f64], w1: &[f64], w2: &[f64], wd: &[f64]| {
            kernels::softmax_xent(&forward(x, w1, w2, wd).5, &labels, classes, batch).0
        };
        t.add(rel_err(&gx, &numeric_grad(&x, |v| loss(v, &w1, &w2, &wd))));
        t.add(rel_err(&gw1, &numeric_grad(&w1, |v| loss(&x, v, &w2, &wd))));
        t.add(rel_err(&gw2, &numeric_grad(&w2, |v| loss(&x, &w1, v, &wd))));
        t.add(rel_err(&gwd, &numeric_grad(&wd, |v| loss(&x, &w1, &w2, v))));
    }
    t
}

/// Every primitive plus the composed chain.
pub fn all() -> Vec<Tally> {
    vec![
        dense(),
        conv2d(),
        relu(),
        global_avg_pool(),
        softmax_cross_entropy(),
        composed_network(),
    ]
}
