//! Hand-crafted trajectory quality scores. Each is non-positive and equals
//! zero for a perfectly regular trajectory.

use nalgebra::Vector3;

use crate::se3::{geodesic_angle, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AestheticScores {
    /// Rotational smoothness.
    pub s_vis: f64,
    /// Translational smoothness.
    pub s_mot: f64,
    /// Largest single-frame translation jump, negated.
    pub s_hps: f64,
}

pub fn aesthetic_channels(t: &Trajectory) -> AestheticScores {
    let poses = t.poses();
    let trans: Vec<Vector3<f64>> = poses.iter().map(|p| p.translation).collect();
    let jumps: Vec<f64> = trans.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let s_hps = -jumps.iter().copied().fold(0.0, f64::max);

    if poses.len() < 3 {
        return AestheticScores { s_vis: 0.0, s_mot: 0.0, s_hps };
    }
    let second = poses.len() - 2;
    let mot: f64 = trans.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).norm()).sum();

    let steps: Vec<_> = poses.windows(2).map(|w| w[0].rotation.inverse() * w[1].rotation).collect();
    let vis: f64 = steps.windows(2).map(|w| geodesic_angle(&w[0], &w[1])).sum();

    AestheticScores { s_vis: -vis / second as f64, s_mot: -mot / second as f64, s_hps }
}
