//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use hybridcnn::layers::reference::{
    conv3d_bwd_data_ref, conv3d_bwd_filter_ref, conv3d_ref, deconv3d_bwd_data_ref, deconv3d_bwd_filter_ref,
    deconv3d_ref,
};
use hybridcnn::layers::{
    batchnorm_backward, batchnorm_forward, cross_entropy, fc_backward, fc_forward, mse, serial_reduce, BnMode, BnState,
    ConvParams,
};
use hybridcnn::{Shape5D, Tensor5};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in `[-1, 1)`.
    pub fn signed(&mut self) -> f64 {
        2.0 * ((self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64) - 1.0
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    pub fn vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.signed()).collect()
    }

    pub fn tensor(&mut self, shape: Shape5D) -> Tensor5<f64> {
        Tensor5::from_vec(shape, self.vec(shape.len())).unwrap()
    }
}

const STEP: f64 = 1e-6;

/// `max |fd - analytic| / max |analytic|` over every coordinate of `at`,
/// with central differences of `f`.
pub fn fd_error(at: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(at.len(), analytic.len());
    let mut p = at.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let v = p[i];
        p[i] = v + STEP;
        let up = f(&p);
        p[i] = v - STEP;
        let down = f(&p);
        p[i] = v;
        worst = worst.max(((up - down) / (2.0 * STEP) - analytic[i]).abs());
    }
    worst / analytic.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(f64::MIN_POSITIVE)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Every gradient check: `(name, relative error)`. Layers are probed
/// through `L = <r, f(x)>` with a random projection `r`.
pub fn gradient_checks() -> Vec<(String, f64)> {
    let mut rng = Rng::new(2024);
    let mut out = Vec::new();

    for (stride, width) in [(1, 6), (2, 6)] {
        let p = ConvParams::cubic(2, 3, 3, stride);
        let x = rng.tensor(Shape5D::cube(1, 2, width));
        let w = rng.vec(p.weight_len());
        let y = conv3d_ref(&x, &w, &p).unwrap();
        let r = rng.tensor(y.shape);
        let dx = conv3d_bwd_data_ref(&r, &w, &p, x.shape.spatial()).unwrap();
        let dw = conv3d_bwd_filter_ref(&x, &r, &p).unwrap();
        let with_x = |d: &[f64]| {
            dot(&r.data, &conv3d_ref(&Tensor5::from_vec(x.shape, d.to_vec()).unwrap(), &w, &p).unwrap().data)
        };
        let with_w = |d: &[f64]| dot(&r.data, &conv3d_ref(&x, d, &p).unwrap().data);
        out.push((format!("conv stride {stride} dx"), fd_error(&x.data, &dx.data, with_x)));
        out.push((format!("conv stride {stride} dw"), fd_error(&w, &dw, with_w)));
    }

    {
        let p = ConvParams::cubic(3, 2, 2, 2);
        let x = rng.tensor(Shape5D::cube(1, 3, 4));
        let w = rng.vec(p.weight_len());
        let y = deconv3d_ref(&x, &w, &p).unwrap();
        let r = rng.tensor(y.shape);
        let dx = deconv3d_bwd_data_ref(&r, &w, &p).unwrap();
        let dw = deconv3d_bwd_filter_ref(&x, &r, &p).unwrap();
        let with_x = |d: &[f64]| {
            dot(&r.data, &deconv3d_ref(&Tensor5::from_vec(x.shape, d.to_vec()).unwrap(), &w, &p).unwrap().data)
        };
        let with_w = |d: &[f64]| dot(&r.data, &deconv3d_ref(&x, d, &p).unwrap().data);
        out.push(("deconv dx".into(), fd_error(&x.data, &dx.data, with_x)));
        out.push(("deconv dw".into(), fd_error(&w, &dw, with_w)));
    }

    {
        let (n, c) = (2, 3);
        let shape = Shape5D::cube(n, c, 4);
        let x: Vec<f64> = rng.vec(shape.len()).iter().enumerate().map(|(i, v)| v + (i % 5) as f64 * 0.3).collect();
        let gamma: Vec<f64> = (0..c).map(|_| 1.0 + 0.5 * rng.signed()).collect();
        let beta = rng.vec(c);
        let r = rng.vec(shape.len());
        let fwd = |x: &[f64], g: &[f64], b: &[f64]| {
            let mut st = BnState::new(c);
            batchnorm_forward(x, n, c, g, b, &mut st, BnMode::Train, &mut serial_reduce).unwrap()
        };
        let (_, cache) = fwd(&x, &gamma, &beta);
        let (dx, dg, db) = batchnorm_backward(&r, n, c, &gamma, &cache, &mut serial_reduce).unwrap();
        out.push(("batch norm dx".into(), fd_error(&x, &dx, |d| dot(&r, &fwd(d, &gamma, &beta).0))));
        out.push(("batch norm dgamma".into(), fd_error(&gamma, &dg, |d| dot(&r, &fwd(&x, d, &beta).0))));
        out.push(("batch norm dbeta".into(), fd_error(&beta, &db, |d| dot(&r, &fwd(&x, &gamma, d).0))));
    }

    {
        let (n, fin, fout) = (3, 10, 4);
        let x = rng.vec(n * fin);
        let w = rng.vec(fin * fout);
        let b = rng.vec(fout);
        let r = rng.vec(n * fout);
        let (dx, dw, db) = fc_backward(&x, &r, &w, fin, fout).unwrap();
        out.push(("fc dx".into(), fd_error(&x, &dx, |d| dot(&r, &fc_forward(d, &w, &b, fin, fout).unwrap()))));
        out.push(("fc dw".into(), fd_error(&w, &dw, |d| dot(&r, &fc_forward(&x, d, &b, fin, fout).unwrap()))));
        out.push(("fc db".into(), fd_error(&b, &db, |d| dot(&r, &fc_forward(&x, &w, d, fin, fout).unwrap()))));
    }

    {
        let pred = rng.vec(8);
        let target = rng.vec(8);
        let g = mse(&pred, &target).unwrap().grad;
        out.push(("mse".into(), fd_error(&pred, &g, |d| mse(d, &target).unwrap().loss)));
        let (n, classes) = (2, 3);
        let logits = rng.vec(n * classes * 8);
        let labels: Vec<f64> = (0..n * 8).map(|_| rng.below(classes) as f64).collect();
        let g = cross_entropy(&logits, &labels, n, classes).unwrap().grad;
        out.push((
            "cross entropy".into(),
            fd_error(&logits, &g, |d| cross_entropy(d, &labels, n, classes).unwrap().loss),
        ));
    }
    out
}
