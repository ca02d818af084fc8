//! Synthetic trajectory banks: cubic B-spline smoothed random walks in
//! translation and in so(3).

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::se3::{exp_so3, normalize_gauge, Pose, Trajectory};
use crate::seed;

/// Largest rotation-knot angle; keeps gauge-normalized angles well below pi.
const MAX_KNOT_ANGLE: f64 = 1.2;
const TRANSLATION_STEP: f64 = 1.0;
const ROTATION_STEP: f64 = 0.3;

fn uniform_bspline(knots: &[Vector3<f64>], s: f64) -> Vector3<f64> {
    let segments = knots.len() - 3;
    let i = (s.floor() as usize).min(segments - 1);
    let u = s - i as f64;
    let (u2, u3) = (u * u, u * u * u);
    let b = [
        (1.0 - u).powi(3) / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ];
    (0..4).map(|k| knots[i + k] * b[k]).sum()
}

fn random_walk<R: Rng>(rng: &mut R, count: usize, step: f64) -> Vec<Vector3<f64>> {
    let mut knots = Vec::with_capacity(count);
    let mut p = Vector3::zeros();
    for _ in 0..count {
        knots.push(p);
        let xi: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        p += Vector3::from(xi) * step;
    }
    knots
}

/// One smooth random trajectory of `frames` poses, anchored at the identity.
pub fn smooth_random_trajectory<R: Rng>(rng: &mut R, frames: usize) -> Result<Trajectory> {
    if frames < 2 {
        return Err(invalid(format!("need at least 2 frames, got {frames}")));
    }
    let knot_count = (frames / 4 + 3).max(4);
    let translation_knots = random_walk(rng, knot_count, TRANSLATION_STEP);
    let mut rotation_knots = random_walk(rng, knot_count, ROTATION_STEP);
    let widest = rotation_knots.iter().map(|k| k.norm()).fold(0.0, f64::max);
    if widest > MAX_KNOT_ANGLE {
        let shrink = MAX_KNOT_ANGLE / widest;
        rotation_knots.iter_mut().for_each(|k| *k *= shrink);
    }

    let span = (knot_count - 3) as f64;
    let poses = (0..frames)
        .map(|f| {
            let s = span * f as f64 / (frames - 1) as f64;
            let r = exp_so3(&uniform_bspline(&rotation_knots, s))?;
            Pose::new(r, uniform_bspline(&translation_knots, s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(normalize_gauge(&Trajectory::new(poses, Trajectory::DEFAULT_FRAME_RATE)?))
}

/// `count` trajectories, reproducible from `seed`.
pub fn generate_bank(count: usize, frames: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(invalid("bank size must be at least 1"));
    }
    (0..count)
        .map(|i| smooth_random_trajectory(&mut seed::rng(seed::derive(seed, &[seed::tag::BANK, i as u64])), frames))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rescale::max_speeds;
    use crate::se3::geodesic_angle;

    #[test]
    fn spline_reproduces_constant_and_linear_knots() {
        let c = vec![Vector3::new(1.0, 2.0, 3.0); 5];
        assert!((uniform_bspline(&c, 1.3) - c[0]).norm() < 1e-12);
        let lin: Vec<_> = (0..6).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        // Uniform cubic B-splines reproduce linear functions shifted by one knot.
        assert!((uniform_bspline(&lin, 2.25).x - 3.25).abs() < 1e-12);
        assert!((uniform_bspline(&lin, 3.0).x - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bank_is_deterministic_and_valid() {
        let a = generate_bank(5, 16, 3).unwrap();
        assert_eq!(a, generate_bank(5, 16, 3).unwrap());
        assert_ne!(a, generate_bank(5, 16, 4).unwrap());
        for t in &a {
            assert_eq!(t.len(), 16);
            assert_eq!(t.poses()[0], Pose::identity());
            let s = max_speeds(t).unwrap();
            assert!(s.v_trans_max > 0.0 && s.v_rot_max > 0.0);
            for p in t.poses() {
                assert!(geodesic_angle(&p.rotation, &crate::se3::Rotation::identity()) < 2.0 * MAX_KNOT_ANGLE + 1e-9);
            }
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(generate_bank(0, 16, 0).is_err());
    }
}
