//! Velocity network: condition embedding, two SiLU hidden layers, linear head.
//!
//! All parameters live in one flat vector. Matrices are column-major views
//! into it, so optimizers and checkpoints only ever see a `Vec<f64>`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};

use super::latent::BLOCK;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub frames: usize,
    pub hidden: usize,
    pub embed: usize,
    pub freqs: usize,
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub cond_w: usize,
    pub cond_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub end: usize,
}

impl Architecture {
    pub fn new(frames: usize, hidden: usize, embed: usize, freqs: usize) -> Result<Self> {
        if frames < 2 || hidden == 0 || embed == 0 || freqs == 0 {
            return Err(invalid("architecture needs frames >= 2 and positive widths"));
        }
        Ok(Architecture { frames, hidden, embed, freqs })
    }

    pub fn latent_dim(&self) -> usize {
        BLOCK * self.frames
    }

    pub fn time_dim(&self) -> usize {
        2 * self.freqs
    }

    pub fn input_dim(&self) -> usize {
        self.latent_dim() + self.time_dim() + self.embed
    }

    pub(crate) fn layout(&self) -> Layout {
        let (d, h, e, i) = (self.latent_dim(), self.hidden, self.embed, self.input_dim());
        let cond_w = 0;
        let cond_b = cond_w + e * d;
        let w1 = cond_b + e;
        let b1 = w1 + h * i;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + d * h;
        Layout { cond_w, cond_b, w1, b1, w2, b2, w3, b3, end: b3 + d }
    }

    pub fn param_count(&self) -> usize {
        self.layout().end
    }

    /// Range of the condition-embedding parameters.
    pub fn condition_params(&self) -> std::ops::Range<usize> {
        let l = self.layout();
        l.cond_w..l.w1
    }
}

/// Sinusoidal features `sin(π2ᵏt), cos(π2ᵏt)` for `k < freqs`.
pub fn time_embedding(t: f64, freqs: usize) -> Vec<f64> {
    (0..freqs)
        .flat_map(|k| {
            let w = PI * (1u64 << k) as f64;
            [(w * t).sin(), (w * t).cos()]
        })
        .collect()
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn silu(a: f64) -> f64 {
    a * sigmoid(a)
}

fn silu_grad(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    cond: DMatrix<f64>,
    input: DMatrix<f64>,
    pre1: DMatrix<f64>,
    h1: DMatrix<f64>,
    pre2: DMatrix<f64>,
    h2: DMatrix<f64>,
}

fn mat<'a>(p: &'a [f64], off: usize, rows: usize, cols: usize) -> DMatrixView<'a, f64> {
    DMatrixView::from_slice(&p[off..off + rows * cols], rows, cols)
}

fn vecv(p: &[f64], off: usize, n: usize) -> DVectorView<'_, f64> {
    DVectorView::from_slice(&p[off..off + n], n)
}

fn add_bias(m: &mut DMatrix<f64>, b: &DVectorView<'_, f64>) {
    for mut col in m.column_iter_mut() {
        col += b;
    }
}

fn accumulate(grad: &mut [f64], off: usize, block: &DMatrix<f64>) {
    for (g, v) in grad[off..off + block.len()].iter_mut().zip(block.iter()) {
        *g += v;
    }
}

fn accumulate_rowsum(grad: &mut [f64], off: usize, block: &DMatrix<f64>) {
    let sums: DVector<f64> = block.column_sum();
    for (g, v) in grad[off..off + sums.len()].iter_mut().zip(sums.iter()) {
        *g += v;
    }
}

/// Initial parameters: `N(0, 1/fan_in)` weights, zero biases.
pub fn init_params<R: Rng>(arch: &Architecture, rng: &mut R) -> Vec<f64> {
    let l = arch.layout();
    let mut p = vec![0.0; l.end];
    let blocks = [
        (l.cond_w, l.cond_b, arch.latent_dim()),
        (l.w1, l.b1, arch.input_dim()),
        (l.w2, l.b2, arch.hidden),
        (l.w3, l.b3, arch.hidden),
    ];
    for (start, end, fan_in) in blocks {
        let std = 1.0 / (fan_in as f64).sqrt();
        for v in &mut p[start..end] {
            let z: f64 = StandardNormal.sample(rng);
            *v = z * std;
        }
    }
    p
}

/// Evaluates the network on a batch. Columns of `z` and `cond` are samples;
/// `t[j]` is the flow time of column `j`.
pub fn forward(
    arch: &Architecture,
    params: &[f64],
    z: &DMatrix<f64>,
    t: &[f64],
    cond: &DMatrix<f64>,
) -> (DMatrix<f64>, ForwardCache) {
    let l = arch.layout();
    let (d, h, e, td) = (arch.latent_dim(), arch.hidden, arch.embed, arch.time_dim());
    let batch = z.ncols();
    debug_assert_eq!(params.len(), l.end);
    debug_assert_eq!((z.nrows(), cond.nrows(), cond.ncols(), t.len()), (d, d, batch, batch));

    let mut embed = mat(params, l.cond_w, e, d) * cond;
    add_bias(&mut embed, &vecv(params, l.cond_b, e));

    let mut input = DMatrix::zeros(arch.input_dim(), batch);
    input.rows_mut(0, d).copy_from(z);
    for (j, &tj) in t.iter().enumerate() {
        for (k, v) in time_embedding(tj, arch.freqs).into_iter().enumerate() {
            input[(d + k, j)] = v;
        }
    }
    input.rows_mut(d + td, e).copy_from(&embed);

    let mut pre1 = mat(params, l.w1, h, arch.input_dim()) * &input;
    add_bias(&mut pre1, &vecv(params, l.b1, h));
    let h1 = pre1.map(silu);
    let mut pre2 = mat(params, l.w2, h, h) * &h1;
    add_bias(&mut pre2, &vecv(params, l.b2, h));
    let h2 = pre2.map(silu);
    let mut out = mat(params, l.w3, d, h) * &h2;
    add_bias(&mut out, &vecv(params, l.b3, d));

    (out, ForwardCache { cond: cond.clone(), input, pre1, h1, pre2, h2 })
}

/// Adds `∂L/∂θ` to `grad`, given `∂L/∂out` for the batch in `cache`.
pub fn backward(arch: &Architecture, params: &[f64], cache: &ForwardCache, grad_out: &DMatrix<f64>, grad: &mut [f64]) {
    let l = arch.layout();
    let (d, h, e, td) = (arch.latent_dim(), arch.hidden, arch.embed, arch.time_dim());

    accumulate(grad, l.w3, &(grad_out * cache.h2.transpose()));
    accumulate_rowsum(grad, l.b3, grad_out);

    let mut da2 = mat(params, l.w3, d, h).transpose() * grad_out;
    da2.zip_apply(&cache.pre2, |g, a| *g *= silu_grad(a));
    accumulate(grad, l.w2, &(&da2 * cache.h1.transpose()));
    accumulate_rowsum(grad, l.b2, &da2);

    let mut da1 = mat(params, l.w2, h, h).transpose() * &da2;
    da1.zip_apply(&cache.pre1, |g, a| *g *= silu_grad(a));
    accumulate(grad, l.w1, &(&da1 * cache.input.transpose()));
    accumulate_rowsum(grad, l.b1, &da1);

    let w1_embed = mat(params, l.w1, h, arch.input_dim()).columns(d + td, e).into_owned();
    let d_embed = w1_embed.transpose() * &da1;
    accumulate(grad, l.cond_w, &(&d_embed * cache.cond.transpose()));
    accumulate_rowsum(grad, l.cond_b, &d_embed);
}
