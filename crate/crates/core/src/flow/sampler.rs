//! Euler integration of the learned flow with a sliding stochastic window.
//!
//! Steps outside the window are deterministic, `z ← z + v̂Δt`. Steps inside
//! add Gaussian noise with `σ_k = η·√Δt·(1 − t_k)` and record the Gaussian
//! log-density of the transition actually taken.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::se3::Trajectory;
use crate::seed;

use super::latent::{decode, TrajLatent};
use super::policy::{broadcast, FlowPolicy};

/// Where the stochastic window sits at a given iteration.
///
/// The window starts over the last `size` steps and moves one step toward
/// `t = 0` every `shift_period` iterations. With `wrap` it jumps back to the
/// end after reaching step 0; without, it stays there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSchedule {
    pub size: usize,
    pub shift_period: usize,
    pub wrap: bool,
}

impl WindowSchedule {
    pub fn new(size: usize, shift_period: usize, wrap: bool) -> Result<Self> {
        if size == 0 || shift_period == 0 {
            return Err(invalid("window size and shift period must be positive"));
        }
        Ok(WindowSchedule { size, shift_period, wrap })
    }

    pub fn active(&self, iteration: usize, steps: usize) -> Result<Range<usize>> {
        if self.size > steps {
            return Err(invalid(format!("window size {} exceeds {steps} steps", self.size)));
        }
        let positions = steps - self.size + 1;
        let shift = iteration / self.shift_period;
        let offset = if self.wrap { shift % positions } else { shift.min(positions - 1) };
        let start = steps - self.size - offset;
        Ok(start..start + self.size)
    }
}

pub fn step_time(k: usize, steps: usize) -> f64 {
    k as f64 / steps as f64
}

/// Transition noise of step `k`.
pub fn step_sigma(k: usize, steps: usize, eta: f64) -> f64 {
    eta * (1.0 / steps as f64).sqrt() * (1.0 - step_time(k, steps))
}

/// Isotropic Gaussian log-density of `x` under `𝒩(mean, σ²I)`.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, sigma: f64) -> f64 {
    let d = x.len() as f64;
    let sq = (x - mean).norm_squared() / (sigma * sigma);
    -0.5 * sq - d * sigma.ln() - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
}

/// One stochastic step of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub step: usize,
    pub state: DVector<f64>,
    pub mean: DVector<f64>,
    pub next: DVector<f64>,
    pub sigma: f64,
    /// Log-density under the parameters that sampled it.
    pub log_density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub seed: u64,
    pub transitions: Vec<Transition>,
    pub latent: TrajLatent,
    pub trajectory: Trajectory,
}

/// Sampling settings shared by every rollout of a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSettings {
    pub steps: usize,
    pub eta: f64,
    pub frame_rate: f64,
}

/// Samples `group` rollouts for one condition. All rollouts start from the
/// same `z₀` drawn from `seed`; rollout `j` draws its window noise from a
/// stream derived from `(seed, j)`.
pub fn sample_group(
    policy: &FlowPolicy,
    condition: &TrajLatent,
    active: Range<usize>,
    group: usize,
    settings: &SamplerSettings,
    seed: u64,
) -> Result<Vec<Rollout>> {
    policy.check_condition(condition)?;
    let steps = settings.steps;
    if group == 0 || steps == 0 {
        return Err(invalid("group size and step count must be positive"));
    }
    if active.is_empty() || active.end > steps {
        return Err(invalid(format!("active window {active:?} must be a non-empty part of 0..{steps}")));
    }
    if !(settings.eta >= 0.0 && settings.eta.is_finite()) {
        return Err(invalid("eta must be finite and >= 0"));
    }
    let d = policy.latent_dim();
    let mut init_rng = seed::rng(seed::derive(seed, &[0]));
    let z0: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut init_rng)).collect();
    let mut z = DMatrix::from_fn(d, group, |i, _| z0[i]);
    let mut rngs: Vec<_> = (0..group).map(|j| seed::rng(seed::derive(seed, &[1, j as u64]))).collect();
    let cond = broadcast(condition, group);
    let dt = 1.0 / steps as f64;
    let mut transitions: Vec<Vec<Transition>> = vec![Vec::new(); group];

    for k in 0..steps {
        let t = vec![step_time(k, steps); group];
        let mean = &z + policy.velocity(&z, &t, &cond) * dt;
        let sigma = step_sigma(k, steps, settings.eta);
        if active.contains(&k) && sigma > 0.0 {
            let mut next = mean.clone();
            for (j, rng) in rngs.iter_mut().enumerate() {
                let mut col = next.column_mut(j);
                for v in col.iter_mut() {
                    let xi: f64 = StandardNormal.sample(rng);
                    *v += sigma * xi;
                }
                let state = z.column(j).into_owned();
                let m = mean.column(j).into_owned();
                let x = next.column(j).into_owned();
                let log_density = gaussian_log_density(&x, &m, sigma);
                transitions[j].push(Transition { step: k, state, mean: m, next: x, sigma, log_density });
            }
            z = next;
        } else {
            z = mean;
        }
    }

    transitions
        .into_iter()
        .enumerate()
        .map(|(j, tr)| {
            let latent = TrajLatent(z.column(j).into_owned());
            let trajectory = decode(&latent, settings.frame_rate)?;
            Ok(Rollout { seed: seed::derive(seed, &[1, j as u64]), transitions: tr, latent, trajectory })
        })
        .collect()
}

/// Deterministic Euler integration of every column of `z0`, each with its
/// own condition column.
pub fn ode_sample(policy: &FlowPolicy, z0: &DMatrix<f64>, cond: &DMatrix<f64>, steps: usize) -> DMatrix<f64> {
    let dt = 1.0 / steps as f64;
    let mut z = z0.clone();
    for k in 0..steps {
        let t = vec![step_time(k, steps); z.ncols()];
        z += policy.velocity(&z, &t, cond) * dt;
    }
    z
}
