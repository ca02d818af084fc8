//! Metric-aware target trajectory sampling.
//!
//! A raw trajectory's peak frame-to-frame speeds are measured, target peak
//! speeds are drawn from truncated Gaussians, and the trajectory is rescaled
//! so its peaks land on the drawn targets (translations linearly, rotations
//! through the so(3) log map).

use rand::Rng;
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{invalid, Error, Result};
use crate::se3::{exp_so3, log_so3, normalize_gauge, Pose, Trajectory};
use crate::seed;

/// Gauge-normalized rotations this close to a half turn cannot be rescaled.
pub const AMBIGUOUS_LOG_MARGIN: f64 = 1e-6;

const MIN_SUPPORT_MASS: f64 = 1e-300;

/// Truncated-Gaussian parameters for the target peak speeds.
///
/// Translation terms are meters/frame, rotation terms radians/frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaleSpec {
    pub mu_t: f64,
    pub sigma_t: f64,
    pub a_t: f64,
    pub b_t: f64,
    pub mu_r: f64,
    pub sigma_r: f64,
    pub a_r: f64,
    pub b_r: f64,
    pub eps: f64,
}

impl Default for RescaleSpec {
    fn default() -> Self {
        RescaleSpec {
            mu_t: 0.05,
            sigma_t: 0.03,
            a_t: 0.01,
            b_t: 0.15,
            mu_r: 0.017,
            sigma_r: 0.009,
            a_r: 0.002,
            b_r: 0.05,
            eps: 1e-8,
        }
    }
}

impl RescaleSpec {
    pub fn validate(&self) -> Result<()> {
        let pairs = [("translation", self.a_t, self.b_t, self.sigma_t), ("rotation", self.a_r, self.b_r, self.sigma_r)];
        for (name, a, b, sigma) in pairs {
            if !(a > 0.0 && a < b && b.is_finite()) {
                return Err(invalid(format!("{name} bounds must satisfy 0 < a < b, got [{a}, {b}]")));
            }
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(invalid(format!("{name} sigma must be positive, got {sigma}")));
            }
        }
        if !(self.mu_t.is_finite() && self.mu_r.is_finite()) {
            return Err(invalid("rescale means must be finite"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }

    pub fn translation_speed(&self) -> Result<TruncatedGaussian> {
        TruncatedGaussian::new(self.mu_t, self.sigma_t, self.a_t, self.b_t)
    }

    pub fn rotation_speed(&self) -> Result<TruncatedGaussian> {
        TruncatedGaussian::new(self.mu_r, self.sigma_r, self.a_r, self.b_r)
    }
}

/// Peak frame-to-frame speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedProfile {
    pub v_trans_max: f64,
    pub v_rot_max: f64,
}

/// Peak translation step `‖t_{i+1} − t_i‖` and peak rotation step `‖log(R_iᵀR_{i+1})‖`.
pub fn max_speeds(t: &Trajectory) -> Result<SpeedProfile> {
    if t.len() < 2 {
        return Err(invalid("max_speeds needs at least 2 frames"));
    }
    let mut p = SpeedProfile { v_trans_max: 0.0, v_rot_max: 0.0 };
    for pair in t.poses().windows(2) {
        let dt = (pair[1].translation - pair[0].translation).norm();
        let rel = pair[0].rotation.inverse() * pair[1].rotation;
        let dr = log_so3(&rel)?.norm();
        p.v_trans_max = p.v_trans_max.max(dt);
        p.v_rot_max = p.v_rot_max.max(dr);
    }
    Ok(p)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// 𝒩(mu, sigma²) conditioned on `[a, b]`, sampled by inverting the CDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian {
    mu: f64,
    sigma: f64,
    a: f64,
    b: f64,
    /// Sampling happens on the reflected distribution when the support lies
    /// above the mean, which keeps the CDF differences in the accurate tail.
    reflected: bool,
    lo_cdf: f64,
    mass: f64,
}

impl TruncatedGaussian {
    pub fn new(mu: f64, sigma: f64, a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(invalid(format!("truncation bounds need a < b, got [{a}, {b}]")));
        }
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(invalid(format!("need finite mu and sigma > 0, got mu={mu}, sigma={sigma}")));
        }
        let alpha = (a - mu) / sigma;
        let beta = (b - mu) / sigma;
        let reflected = alpha > 0.0;
        let (lo, hi) = if reflected { (-beta, -alpha) } else { (alpha, beta) };
        let lo_cdf = std_normal_cdf(lo);
        let mass = std_normal_cdf(hi) - lo_cdf;
        if !(mass >= MIN_SUPPORT_MASS) {
            return Err(Error::DegenerateSupport { mass });
        }
        Ok(TruncatedGaussian { mu, sigma, a, b, reflected, lo_cdf, mass })
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Maps `u ∈ [0, 1)` to a draw; `mu + sigma·Φ⁻¹(Φ(α) + u(Φ(β) − Φ(α)))`.
    pub fn quantile(&self, u: f64) -> f64 {
        let z = std_normal_quantile(self.lo_cdf + u * self.mass);
        let x = if self.reflected { self.mu - self.sigma * z } else { self.mu + self.sigma * z };
        x.clamp(self.a, self.b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

/// One draw from the truncated Gaussian, determined by `seed`.
pub fn sample_truncated_gaussian(mu: f64, sigma: f64, a: f64, b: f64, seed: u64) -> Result<f64> {
    let dist = TruncatedGaussian::new(mu, sigma, a, b)?;
    Ok(dist.sample(&mut seed::rng(seed)))
}

/// `s = tau / (v_max + eps)` for translation and rotation.
pub fn rescale_factors(p: &SpeedProfile, tau_trans: f64, tau_rot: f64, eps: f64) -> Result<(f64, f64)> {
    if !(tau_trans > 0.0 && tau_rot > 0.0) {
        return Err(invalid(format!("target speeds must be positive, got ({tau_trans}, {tau_rot})")));
    }
    if !(eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    Ok((tau_trans / (p.v_trans_max + eps), tau_rot / (p.v_rot_max + eps)))
}

/// Scales gauge-normalized translations by `s_trans` and rotation angles by
/// `s_rot` (through `exp(s·log R_i)`).
pub fn rescale_trajectory(t: &Trajectory, s_trans: f64, s_rot: f64) -> Result<Trajectory> {
    if !(s_trans.is_finite() && s_rot.is_finite()) {
        return Err(invalid("rescale factors must be finite"));
    }
    let anchored = normalize_gauge(t);
    let mut poses = Vec::with_capacity(t.len());
    for (i, p) in anchored.poses().iter().enumerate() {
        let w = log_so3(&p.rotation)?;
        let angle = w.norm();
        if angle >= std::f64::consts::PI - AMBIGUOUS_LOG_MARGIN {
            return Err(Error::AmbiguousLog { frame: i + 1, angle });
        }
        poses.push(Pose::new(exp_so3(&(w * s_rot))?, p.translation * s_trans)?);
    }
    Ok(t.with_poses(poses))
}

/// Everything drawn while producing one rescaled target.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaleSample {
    pub bank_index: usize,
    pub tau_trans: f64,
    pub tau_rot: f64,
    pub s_trans: f64,
    pub s_rot: f64,
    pub source: SpeedProfile,
    pub trajectory: Trajectory,
}

/// Picks a bank entry uniformly, draws target speeds and rescales it.
pub fn sample_target(bank: &[Trajectory], spec: &RescaleSpec, seed: u64) -> Result<RescaleSample> {
    if bank.is_empty() {
        return Err(invalid("trajectory bank is empty"));
    }
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let bank_index = rng.random_range(0..bank.len());
    let tau_trans = spec.translation_speed()?.sample(&mut rng);
    let tau_rot = spec.rotation_speed()?.sample(&mut rng);
    let source = max_speeds(&bank[bank_index])?;
    let (s_trans, s_rot) = rescale_factors(&source, tau_trans, tau_rot, spec.eps)?;
    let trajectory = rescale_trajectory(&bank[bank_index], s_trans, s_rot)?;
    Ok(RescaleSample { bank_index, tau_trans, tau_rot, s_trans, s_rot, source, trajectory })
}

pub fn sample_target_trajectory(bank: &[Trajectory], spec: &RescaleSpec, seed: u64) -> Result<Trajectory> {
    sample_target(bank, spec, seed).map(|s| s.trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{geodesic_angle, testutil::random_trajectory, Rotation};
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn translations(ts: &[[f64; 3]]) -> Trajectory {
        Trajectory::new(ts.iter().map(|t| Pose::from_translation(Vector3::from(*t))).collect(), 10.0)
            .unwrap()
    }

    fn coaxial(n: usize, step: f64) -> Trajectory {
        let poses = (0..n)
            .map(|i| Pose::new(Rotation::rot_z(step * i as f64), Vector3::new(0.1 * i as f64, 0.0, 0.0)).unwrap())
            .collect();
        Trajectory::new(poses, 10.0).unwrap()
    }

    #[test]
    fn speeds_of_simple_trajectories() {
        let s = max_speeds(&translations(&[[0.0; 3]; 3])).unwrap();
        assert_eq!(s, SpeedProfile { v_trans_max: 0.0, v_rot_max: 0.0 });
        let s = max_speeds(&translations(&[[0.0; 3], [1.0, 0.0, 0.0], [1.0, 2.0, 0.0]])).unwrap();
        assert!((s.v_trans_max - 2.0).abs() < 1e-15);
        let rots = [0.0, PI / 4.0, PI / 2.0]
            .iter()
            .map(|&a| Pose::new(Rotation::rot_z(a), Vector3::zeros()).unwrap())
            .collect();
        let s = max_speeds(&Trajectory::new(rots, 10.0).unwrap()).unwrap();
        assert!((s.v_rot_max - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_gaussian_rejects_bad_parameters() {
        assert!(matches!(TruncatedGaussian::new(0.0, 1.0, 1.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(TruncatedGaussian::new(0.0, 0.0, -1.0, 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            TruncatedGaussian::new(0.0, 1.0, 40.0, 41.0),
            Err(Error::DegenerateSupport { .. })
        ));
    }

    #[test]
    fn truncated_gaussian_far_tail_still_samples() {
        // Φ(β) − Φ(α) would cancel to zero without reflection.
        let d = TruncatedGaussian::new(0.0, 1.0, 9.0, 9.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let x = d.sample(&mut rng);
            assert!((9.0..=9.5).contains(&x));
        }
        // Mass near the lower bound dominates in the far tail.
        assert!(d.quantile(0.5) < 9.1);
    }

    #[test]
    fn truncated_gaussian_seeded_draws() {
        let a = sample_truncated_gaussian(0.05, 0.03, 0.01, 0.15, 42).unwrap();
        assert_eq!(a, sample_truncated_gaussian(0.05, 0.03, 0.01, 0.15, 42).unwrap());
        let mut sum = 0.0;
        let n = 100_000;
        for s in 0..n {
            let x = sample_truncated_gaussian(0.0, 1.0, -1.0, 1.0, s).unwrap();
            assert!((-1.0..=1.0).contains(&x));
            sum += x;
        }
        assert!((sum / n as f64).abs() < 0.01);
    }

    #[test]
    fn rescale_factor_cases() {
        let p = SpeedProfile { v_trans_max: 0.2, v_rot_max: 0.0 };
        let (st, sr) = rescale_factors(&p, 0.1, 0.1, 1e-8).unwrap();
        assert!((st - 0.5).abs() < 1e-6);
        assert!((sr - 1e7).abs() < 1e-6);
        let p = SpeedProfile { v_trans_max: 0.3, v_rot_max: 0.02 };
        let (st, sr) = rescale_factors(&p, 0.3, 0.02, 1e-15).unwrap();
        assert!((st - 1.0).abs() < 1e-12 && (sr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_rescale_equals_anchored_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t = random_trajectory(&mut rng, 2);
        let anchored = normalize_gauge(&t);
        // random_trajectory poses are arbitrary; only rescale when log is unambiguous.
        if let Ok(r) = rescale_trajectory(&t, 1.0, 1.0) {
            for (p, q) in anchored.poses().iter().zip(r.poses()) {
                assert!((p.rotation.matrix() - q.rotation.matrix()).abs().max() < 1e-12);
                assert!((p.translation - q.translation).norm() < 1e-12);
            }
        }
        let t = coaxial(6, 0.3);
        let r = rescale_trajectory(&t, 1.0, 1.0).unwrap();
        for (p, q) in t.poses().iter().zip(r.poses()) {
            assert!((p.rotation.matrix() - q.rotation.matrix()).abs().max() < 1e-12);
            assert!((p.translation - q.translation).norm() < 1e-12);
        }
    }

    #[test]
    fn coaxial_rotations_scale_exactly() {
        let theta = 0.25;
        let t = coaxial(8, theta);
        let r = rescale_trajectory(&t, 2.0, 0.5).unwrap();
        for (i, p) in r.poses().iter().enumerate() {
            let expected = Rotation::rot_z(0.5 * theta * i as f64);
            assert!(geodesic_angle(&p.rotation, &expected) < 1e-9);
        }
        let before = max_speeds(&t).unwrap();
        let after = max_speeds(&r).unwrap();
        assert!((after.v_rot_max - 0.5 * before.v_rot_max).abs() < 1e-9);
        assert!((after.v_trans_max - 2.0 * before.v_trans_max).abs() < 1e-9);
    }

    #[test]
    fn half_turn_is_ambiguous() {
        let poses = vec![Pose::identity(), Pose::new(Rotation::rot_x(PI), Vector3::zeros()).unwrap()];
        let t = Trajectory::new(poses, 10.0).unwrap();
        assert!(matches!(rescale_trajectory(&t, 1.0, 0.5), Err(Error::AmbiguousLog { frame: 2, .. })));
    }

    #[test]
    fn sample_target_hits_requested_peak_speed() {
        let bank = vec![coaxial(10, 0.05), translations(&[[0.0; 3], [0.5, 0.0, 0.0], [0.5, 1.0, 0.0]])];
        let spec = RescaleSpec::default();
        for s in 0..50 {
            let sample = sample_target(&bank, &spec, s).unwrap();
            let v = sample.source.v_trans_max;
            let got = max_speeds(&sample.trajectory).unwrap().v_trans_max;
            assert!((got - sample.tau_trans * v / (v + spec.eps)).abs() < 1e-9);
            assert!((spec.a_t..=spec.b_t).contains(&sample.tau_trans));
            assert!((spec.a_r..=spec.b_r).contains(&sample.tau_rot));
        }
        let a = sample_target_trajectory(&bank, &spec, 3).unwrap();
        assert_eq!(a, sample_target_trajectory(&bank, &spec, 3).unwrap());
    }

    #[test]
    fn static_bank_stays_static() {
        let bank = vec![translations(&[[0.0; 3]; 4])];
        let t = sample_target_trajectory(&bank, &RescaleSpec::default(), 1).unwrap();
        assert!(t.poses().iter().all(|p| p.translation == Vector3::zeros()));
    }

    #[test]
    fn empty_bank_is_rejected() {
        assert!(matches!(
            sample_target_trajectory(&[], &RescaleSpec::default(), 0),
            Err(Error::InvalidArgument(_))
        ));
    }
}
