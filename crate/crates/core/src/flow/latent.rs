//! Flat latent encoding of a trajectory: per frame, the gauge-normalized
//! translation (meters) followed by the so(3) vector of the rotation (radians).

use nalgebra::{DVector, Vector3};

use crate::error::{invalid, Error, Result};
use crate::se3::{exp_so3, log_so3, normalize_gauge, Pose, Trajectory};

/// Latent coordinates per frame.
pub const BLOCK: usize = 6;

/// Rotation blocks must stay this far inside the so(3) ball of radius pi.
pub const ROTATION_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajLatent(pub DVector<f64>);

impl TrajLatent {
    pub fn frames(&self) -> usize {
        self.0.len() / BLOCK
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

/// A target trajectory in latent form, used as the policy's conditioning input.
pub type Condition = TrajLatent;

pub fn encode(t: &Trajectory) -> Result<TrajLatent> {
    let anchored = normalize_gauge(t);
    let limit = std::f64::consts::PI - ROTATION_MARGIN;
    let mut z = DVector::zeros(BLOCK * t.len());
    for (i, p) in anchored.poses().iter().enumerate() {
        let w = log_so3(&p.rotation)?;
        let angle = w.norm();
        if angle >= limit {
            return Err(Error::Encoding { frame: i + 1, angle, limit });
        }
        z.fixed_rows_mut::<3>(BLOCK * i).copy_from(&p.translation);
        z.fixed_rows_mut::<3>(BLOCK * i + 3).copy_from(&w);
    }
    Ok(TrajLatent(z))
}

/// Inverse of `encode`. Rotation blocks longer than the legal radius are
/// shortened onto it, so every finite vector decodes.
pub fn decode(z: &TrajLatent, frame_rate: f64) -> Result<Trajectory> {
    let v = &z.0;
    if v.len() % BLOCK != 0 || v.len() < 2 * BLOCK {
        return Err(invalid(format!("latent length {} is not 6·N with N >= 2", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid("latent has non-finite entries"));
    }
    let limit = std::f64::consts::PI - ROTATION_MARGIN;
    let poses = (0..v.len() / BLOCK)
        .map(|i| {
            let t: Vector3<f64> = v.fixed_rows::<3>(BLOCK * i).into_owned();
            let mut w: Vector3<f64> = v.fixed_rows::<3>(BLOCK * i + 3).into_owned();
            let n = w.norm();
            if n > limit {
                w *= limit / n;
            }
            Pose::new(exp_so3(&w)?, t)
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(poses, frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::generate_bank;
    use crate::se3::{geodesic_angle, Rotation};
    use proptest::prelude::*;

    #[test]
    fn static_trajectory_encodes_to_zero() {
        let t = Trajectory::new(vec![Pose::identity(); 5], 10.0).unwrap();
        assert_eq!(encode(&t).unwrap().0, DVector::zeros(30));
    }

    #[test]
    fn roundtrip_on_smooth_trajectories() {
        for t in generate_bank(1000, 16, 17).unwrap() {
            let back = decode(&encode(&t).unwrap(), t.frame_rate()).unwrap();
            let anchored = normalize_gauge(&t);
            for (p, q) in anchored.poses().iter().zip(back.poses()) {
                assert!((p.translation - q.translation).norm() < 1e-9);
                assert!(geodesic_angle(&p.rotation, &q.rotation) < 1e-9);
            }
        }
    }

    #[test]
    fn near_half_turn_cannot_be_encoded() {
        let poses = vec![Pose::identity(), Pose::new(Rotation::rot_y(3.141), Vector3::zeros()).unwrap()];
        let t = Trajectory::new(poses, 10.0).unwrap();
        assert!(matches!(encode(&t), Err(Error::Encoding { frame: 2, .. })));
    }

    #[test]
    fn decode_rejects_bad_lengths() {
        assert!(decode(&TrajLatent(DVector::zeros(6)), 10.0).is_err());
        assert!(decode(&TrajLatent(DVector::zeros(13)), 10.0).is_err());
    }

    proptest! {
        #[test]
        fn decode_is_total_on_finite_vectors(v in prop::collection::vec(-50.0f64..50.0, 24)) {
            let t = decode(&TrajLatent(DVector::from_vec(v)), 10.0).unwrap();
            prop_assert_eq!(t.len(), 4);
            for p in t.poses() {
                let m = p.rotation.matrix();
                prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
                prop_assert!(p.rotation.angle() < std::f64::consts::PI - ROTATION_MARGIN + 1e-9);
            }
        }
    }
}
