//! Verifiable geometry reward: time-weighted translation and rotation
//! deviations between a target trajectory and an estimated one.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::se3::{exp_so3, geodesic_angle, normalize_gauge, Trajectory};
use crate::seed;

/// Shape of the per-frame temporal weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    /// `w_i ∝ i`
    #[default]
    Linear,
    /// `w_i ∝ i²`
    Quadratic,
    /// `w_i = 1/n`; not increasing, kept for ablations.
    Uniform,
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(WeightScheme::Linear),
            "quadratic" => Ok(WeightScheme::Quadratic),
            "uniform" => Ok(WeightScheme::Uniform),
            other => Err(invalid(format!(
                "unknown weight scheme `{other}` (expected linear, quadratic or uniform)"
            ))),
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightScheme::Linear => "linear",
            WeightScheme::Quadratic => "quadratic",
            WeightScheme::Uniform => "uniform",
        })
    }
}

/// Non-negative per-frame weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalWeights(Vec<f64>);

impl TemporalWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(invalid("temporal weights need at least 2 frames"));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("temporal weights must be finite and non-negative"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("temporal weights sum to {sum}, expected 1")));
        }
        Ok(TemporalWeights(w))
    }

    pub fn for_scheme(scheme: WeightScheme, n: usize) -> Result<Self> {
        match scheme {
            WeightScheme::Linear => linear_weights(n),
            WeightScheme::Quadratic => quadratic_weights(n),
            WeightScheme::Uniform => uniform_weights(n),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.0.windows(2).all(|p| p[0] < p[1])
    }
}

fn check_frames(n: usize) -> Result<()> {
    if n < 2 {
        return Err(invalid(format!("temporal weights need n >= 2, got {n}")));
    }
    Ok(())
}

/// `w_i = 2i / (n(n+1))`, `i = 1..n`.
pub fn linear_weights(n: usize) -> Result<TemporalWeights> {
    check_frames(n)?;
    let denom = (n * (n + 1)) as f64;
    Ok(TemporalWeights((1..=n).map(|i| 2.0 * i as f64 / denom).collect()))
}

/// `w_i = 6i² / (n(n+1)(2n+1))`.
pub fn quadratic_weights(n: usize) -> Result<TemporalWeights> {
    check_frames(n)?;
    let denom = (n * (n + 1) * (2 * n + 1)) as f64;
    Ok(TemporalWeights((1..=n).map(|i| 6.0 * (i * i) as f64 / denom).collect()))
}

pub fn uniform_weights(n: usize) -> Result<TemporalWeights> {
    check_frames(n)?;
    Ok(TemporalWeights(vec![1.0 / n as f64; n]))
}

/// Weighted deviations: `d_trans` in meters, `d_rot` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeometryErrors {
    pub d_trans: f64,
    pub d_rot: f64,
}

/// Unweighted per-frame deviations after gauge normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameError {
    pub translation: f64,
    pub rotation: f64,
}

/// Per-frame errors of `estimated` against `target`, both anchored at their first pose.
pub fn frame_errors(target: &Trajectory, estimated: &Trajectory) -> Result<Vec<FrameError>> {
    if target.len() != estimated.len() {
        return Err(invalid(format!(
            "trajectory lengths differ: target {} vs estimated {}",
            target.len(),
            estimated.len()
        )));
    }
    let target = normalize_gauge(target);
    let estimated = normalize_gauge(estimated);
    Ok(target
        .poses()
        .iter()
        .zip(estimated.poses())
        .map(|(p, q)| FrameError {
            translation: (p.translation - q.translation).norm(),
            rotation: geodesic_angle(&p.rotation, &q.rotation),
        })
        .collect())
}

/// `d_trans = Σ w_i ‖t_i − t̂_i‖`, `d_rot = Σ w_i ∠(R_i, R̂_i)`.
pub fn geometry_errors(
    target: &Trajectory,
    estimated: &Trajectory,
    w: &TemporalWeights,
) -> Result<GeometryErrors> {
    if w.len() != target.len() {
        return Err(invalid(format!(
            "{} temporal weights for a {}-frame trajectory",
            w.len(),
            target.len()
        )));
    }
    let frames = frame_errors(target, estimated)?;
    let mut e = GeometryErrors::default();
    for (wi, f) in w.as_slice().iter().zip(&frames) {
        e.d_trans += wi * f.translation;
        e.d_rot += wi * f.rotation;
    }
    Ok(e)
}

/// `(r_trans, r_rot)`: rewards are negated errors.
pub fn geometry_reward_channels(e: &GeometryErrors) -> (f64, f64) {
    (-e.d_trans, -e.d_rot)
}

/// Noise model of the stand-in pose estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorNoise {
    pub sigma_trans: f64,
    pub sigma_rot: f64,
    pub seed: u64,
}

impl EstimatorNoise {
    pub fn new(sigma_trans: f64, sigma_rot: f64, seed: u64) -> Result<Self> {
        if !(sigma_trans >= 0.0 && sigma_rot >= 0.0) || !sigma_trans.is_finite() || !sigma_rot.is_finite()
        {
            return Err(invalid("estimator noise sigmas must be finite and >= 0"));
        }
        Ok(EstimatorNoise { sigma_trans, sigma_rot, seed })
    }

    pub fn exact() -> Self {
        EstimatorNoise { sigma_trans: 0.0, sigma_rot: 0.0, seed: 0 }
    }
}

/// Simulates pose estimation of a generated trajectory: Gaussian translation
/// noise and a left-multiplied random rotation on every frame but the first.
pub fn noisy_estimator(generated: &Trajectory, noise: &EstimatorNoise) -> Trajectory {
    let mut rng = seed::rng(noise.seed);
    let mut gauss3 = |sigma: f64| {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        Vector3::from(v) * sigma
    };
    let mut poses = generated.poses().to_vec();
    for pose in poses.iter_mut().skip(1) {
        let dt = gauss3(noise.sigma_trans);
        let dr = gauss3(noise.sigma_rot);
        if noise.sigma_trans > 0.0 {
            pose.translation += dt;
        }
        if noise.sigma_rot > 0.0 {
            // exp_so3 only fails on non-finite input.
            let r = exp_so3(&dr).expect("finite noise");
            pose.rotation = r * pose.rotation;
        }
    }
    generated.with_poses(poses)
}
