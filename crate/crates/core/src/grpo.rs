//! Group-relative advantages and the clipped, timestep-weighted surrogate.
//!
//! Each reward channel is normalized within its rollout group, channels are
//! fused with fixed weights, and the policy objective is the PPO-style
//! clipped importance-weighted advantage. There is no KL term.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Rot,
    Trans,
    Vis,
    Mot,
    Hps,
}

impl Channel {
    pub const ALL: [Channel; 5] = [Channel::Rot, Channel::Trans, Channel::Vis, Channel::Mot, Channel::Hps];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Rot => "rot",
            Channel::Trans => "trans",
            Channel::Vis => "vis",
            Channel::Mot => "mot",
            Channel::Hps => "hps",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn is_geometry(self) -> bool {
        matches!(self, Channel::Rot | Channel::Trans)
    }
}

/// One value per reward channel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerChannel<T>(pub [T; 5]);

impl<T> Index<Channel> for PerChannel<T> {
    type Output = T;

    fn index(&self, c: Channel) -> &T {
        &self.0[c.index()]
    }
}

impl<T> IndexMut<Channel> for PerChannel<T> {
    fn index_mut(&mut self, c: Channel) -> &mut T {
        &mut self.0[c.index()]
    }
}

impl<T> PerChannel<T> {
    pub fn iter(&self) -> impl Iterator<Item = (Channel, &T)> {
        Channel::ALL.into_iter().zip(self.0.iter())
    }
}

/// Scores of a single rollout.
pub type RewardVector = PerChannel<f64>;

/// Fusion weights `λ_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelWeights(PerChannel<f64>);

impl Default for ChannelWeights {
    fn default() -> Self {
        ChannelWeights(PerChannel([1.0, 1.0, 0.25, 0.25, 0.25]))
    }
}

impl ChannelWeights {
    pub fn new(weights: PerChannel<f64>) -> Result<Self> {
        if weights.0.iter().any(|w| !w.is_finite()) {
            return Err(invalid("channel weights must be finite"));
        }
        if weights.0.iter().all(|w| *w == 0.0) {
            return Err(invalid("at least one channel weight must be nonzero"));
        }
        Ok(ChannelWeights(weights))
    }

    pub fn get(&self, c: Channel) -> f64 {
        self.0[c]
    }

    /// Zeroes the channels excluded by `set`.
    pub fn restricted(&self, set: RewardSet) -> Result<Self> {
        let mut w = self.0;
        for c in Channel::ALL {
            if !set.includes(c) {
                w[c] = 0.0;
            }
        }
        ChannelWeights::new(w)
    }
}

/// Which channels contribute to the fused advantage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardSet {
    #[default]
    Full,
    AestheticOnly,
    GeometryOnly,
}

impl RewardSet {
    pub fn includes(self, c: Channel) -> bool {
        match self {
            RewardSet::Full => true,
            RewardSet::AestheticOnly => !c.is_geometry(),
            RewardSet::GeometryOnly => c.is_geometry(),
        }
    }
}

impl FromStr for RewardSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RewardSet::Full),
            "aesthetic-only" => Ok(RewardSet::AestheticOnly),
            "geometry-only" => Ok(RewardSet::GeometryOnly),
            other => Err(invalid(format!(
                "unknown reward set `{other}` (expected full, aesthetic-only or geometry-only)"
            ))),
        }
    }
}

impl fmt::Display for RewardSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardSet::Full => "full",
            RewardSet::AestheticOnly => "aesthetic-only",
            RewardSet::GeometryOnly => "geometry-only",
        })
    }
}

/// Denominator used when normalizing a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdMode {
    /// `max(σ_group, ε)`
    #[default]
    Group,
    /// `max(max over groups in the batch of σ_group, ε)`
    BatchMax,
}

impl FromStr for StdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group" => Ok(StdMode::Group),
            "batch-max" => Ok(StdMode::BatchMax),
            other => Err(invalid(format!("unknown std mode `{other}` (expected group or batch-max)"))),
        }
    }
}

impl fmt::Display for StdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StdMode::Group => "group",
            StdMode::BatchMax => "batch-max",
        })
    }
}

/// Group mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn check_group(rewards: &[f64]) -> Result<()> {
    if rewards.len() < 2 {
        return Err(invalid(format!("group size must be >= 2, got {}", rewards.len())));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(invalid("rewards must be finite"));
    }
    Ok(())
}

/// `Â_j = (r_j − μ) / max(σ, eps_std)` with the population σ of the group.
pub fn normalize_channel(rewards: &[f64], eps_std: f64) -> Result<Vec<f64>> {
    check_group(rewards)?;
    if !(eps_std > 0.0) {
        return Err(invalid(format!("eps_std must be positive, got {eps_std}")));
    }
    let (mean, std) = mean_std(rewards);
    let denom = std.max(eps_std);
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// `A_j = Σ_k λ_k Â_k^{(j)}` over the supplied channels.
pub fn fuse_advantages(per_channel: &[(Channel, Vec<f64>)], weights: &ChannelWeights) -> Result<Vec<f64>> {
    let Some((_, first)) = per_channel.first() else {
        return Err(invalid("no channels to fuse"));
    };
    let g = first.len();
    let mut seen = [false; 5];
    let mut total = vec![0.0; g];
    for (c, adv) in per_channel {
        if adv.len() != g {
            return Err(invalid(format!(
                "channel `{}` has {} entries, expected {g}",
                c.name(),
                adv.len()
            )));
        }
        if std::mem::replace(&mut seen[c.index()], true) {
            return Err(invalid(format!("channel `{}` given twice", c.name())));
        }
        let lambda = weights.get(*c);
        for (t, a) in total.iter_mut().zip(adv) {
            *t += lambda * a;
        }
    }
    Ok(total)
}

/// Normalized advantages of one rollout group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub per_channel: PerChannel<Vec<f64>>,
    pub total: Vec<f64>,
}

/// Normalizes and fuses every group of a batch. Each group holds the reward
/// vectors of rollouts that shared one condition.
pub fn group_advantages(
    groups: &[Vec<RewardVector>],
    weights: &ChannelWeights,
    eps_std: f64,
    mode: StdMode,
) -> Result<Vec<AdvantageSet>> {
    if !(eps_std > 0.0) {
        return Err(invalid(format!("eps_std must be positive, got {eps_std}")));
    }
    let column = |g: &[RewardVector], c: Channel| g.iter().map(|r| r[c]).collect::<Vec<f64>>();

    let mut batch_std = PerChannel([0.0; 5]);
    for g in groups {
        for c in Channel::ALL {
            let col = column(g, c);
            check_group(&col)?;
            batch_std[c] = f64::max(batch_std[c], mean_std(&col).1);
        }
    }

    groups
        .iter()
        .map(|g| {
            let mut per_channel: PerChannel<Vec<f64>> = PerChannel::default();
            for c in Channel::ALL {
                let col = column(g, c);
                per_channel[c] = match mode {
                    StdMode::Group => normalize_channel(&col, eps_std)?,
                    StdMode::BatchMax => {
                        let (mean, _) = mean_std(&col);
                        let denom = batch_std[c].max(eps_std);
                        col.iter().map(|r| (r - mean) / denom).collect()
                    }
                };
            }
            let pairs: Vec<(Channel, Vec<f64>)> =
                Channel::ALL.iter().map(|&c| (c, per_channel[c].clone())).collect();
            let total = fuse_advantages(&pairs, weights)?;
            Ok(AdvantageSet { per_channel, total })
        })
        .collect()
}

/// How the per-step loss weights `w_t` are distributed over the active steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimestepSchedule {
    Uniform,
    /// `w_t ∝ σ_t²` of the injected transition noise.
    #[default]
    NoiseProportional,
}

impl FromStr for TimestepSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(TimestepSchedule::Uniform),
            "noise-proportional" => Ok(TimestepSchedule::NoiseProportional),
            other => Err(invalid(format!(
                "unknown timestep schedule `{other}` (expected uniform or noise-proportional)"
            ))),
        }
    }
}

impl fmt::Display for TimestepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimestepSchedule::Uniform => "uniform",
            TimestepSchedule::NoiseProportional => "noise-proportional",
        })
    }
}

/// Weights for the active steps, given each step's noise level. Positive, sum to 1.
pub fn timestep_weights(step_sigmas: &[f64], schedule: TimestepSchedule) -> Result<Vec<f64>> {
    if step_sigmas.is_empty() {
        return Err(invalid("no active steps"));
    }
    match schedule {
        TimestepSchedule::Uniform => Ok(vec![1.0 / step_sigmas.len() as f64; step_sigmas.len()]),
        TimestepSchedule::NoiseProportional => {
            if step_sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(invalid("noise-proportional weights need positive step sigmas"));
            }
            let total: f64 = step_sigmas.iter().map(|s| s * s).sum();
            Ok(step_sigmas.iter().map(|s| s * s / total).collect())
        }
    }
}

/// One `(rollout, step)` entry of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTerm {
    pub rollout: usize,
    pub step: usize,
    pub logp_current: f64,
    pub logp_behavior: f64,
    pub weight: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub group_size: usize,
    pub terms: Vec<StepTerm>,
}

/// The surrogate value plus, per term, `∂J/∂logp_current`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub value: f64,
    pub coefficients: Vec<f64>,
    /// Fraction of terms whose clipped branch won the min.
    pub clip_fraction: f64,
}

/// `J = (1/G) Σ_j Σ_t w_t min(ρ A, clip(ρ, 1−ε, 1+ε) A)` with `ρ = exp(logp_cur − logp_beh)`.
///
/// Terms are reduced in the order given.
pub fn surrogate_objective(batch: &StepBatch, eps_clip: f64) -> Result<Surrogate> {
    if !(eps_clip > 0.0 && eps_clip < 1.0) {
        return Err(invalid(format!("eps_clip must be in (0, 1), got {eps_clip}")));
    }
    if batch.group_size == 0 {
        return Err(invalid("group size must be positive"));
    }
    let inv_g = 1.0 / batch.group_size as f64;
    let mut value = 0.0;
    let mut clipped = 0usize;
    let mut coefficients = Vec::with_capacity(batch.terms.len());
    for term in &batch.terms {
        let ratio = (term.logp_current - term.logp_behavior).exp();
        if !ratio.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite probability ratio at rollout {}, step {}",
                term.rollout, term.step
            )));
        }
        let a = term.advantage;
        let unclipped = ratio * a;
        let clipped_val = ratio.clamp(1.0 - eps_clip, 1.0 + eps_clip) * a;
        let (v, coef) = if unclipped <= clipped_val {
            (unclipped, term.weight * unclipped * inv_g)
        } else {
            clipped += 1;
            (clipped_val, 0.0)
        };
        value += term.weight * v * inv_g;
        coefficients.push(coef);
    }
    let clip_fraction = if batch.terms.is_empty() { 0.0 } else { clipped as f64 / batch.terms.len() as f64 };
    Ok(Surrogate { value, coefficients, clip_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn term(ratio: f64, advantage: f64) -> StepTerm {
        StepTerm { rollout: 0, step: 0, logp_current: ratio.ln(), logp_behavior: 0.0, weight: 1.0, advantage }
    }

    #[test]
    fn normalize_hand_case() {
        let a = normalize_channel(&[0.0, 1.0, 2.0], 1e-4).unwrap();
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_group_normalizes_to_zero() {
        assert_eq!(normalize_channel(&[5.0, 5.0, 5.0], 1e-4).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn normalize_errors() {
        assert!(normalize_channel(&[1.0], 1e-4).is_err());
        assert!(normalize_channel(&[1.0, f64::NAN], 1e-4).is_err());
        assert!(normalize_channel(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn small_spread_is_guarded() {
        let a = normalize_channel(&[0.0, 1e-6], 1e-4).unwrap();
        assert!((a[1] - 0.5e-6 / 1e-4).abs() < 1e-15);
    }

    #[test]
    fn fuse_cases() {
        let w = ChannelWeights::new(PerChannel([0.0, 1.0, 0.0, 0.0, 0.0])).unwrap();
        let single = vec![(Channel::Trans, vec![0.3, -0.1, -0.2])];
        assert_eq!(fuse_advantages(&single, &w).unwrap(), vec![0.3, -0.1, -0.2]);

        let w = ChannelWeights::new(PerChannel([1.0, 1.0, 0.0, 0.0, 0.0])).unwrap();
        let cancel = vec![(Channel::Rot, vec![1.0, -2.0]), (Channel::Trans, vec![-1.0, 2.0])];
        assert_eq!(fuse_advantages(&cancel, &w).unwrap(), vec![0.0, 0.0]);

        let w = ChannelWeights::new(PerChannel([2.0, 0.5, 0.0, 0.0, 0.0])).unwrap();
        let pair = vec![(Channel::Rot, vec![1.0, -0.5, 0.25]), (Channel::Trans, vec![-2.0, 4.0, 0.0])];
        assert_eq!(fuse_advantages(&pair, &w).unwrap(), vec![1.0, 1.0, 0.5]);
    }

    #[test]
    fn fuse_rejects_mismatch() {
        let w = ChannelWeights::default();
        let bad = vec![(Channel::Rot, vec![1.0, 2.0]), (Channel::Trans, vec![1.0])];
        assert!(fuse_advantages(&bad, &w).is_err());
        let dup = vec![(Channel::Rot, vec![1.0]), (Channel::Rot, vec![1.0])];
        assert!(fuse_advantages(&dup, &w).is_err());
        assert!(ChannelWeights::new(PerChannel([0.0; 5])).is_err());
    }

    #[test]
    fn surrogate_hand_cases() {
        let batch = StepBatch { group_size: 1, terms: vec![term(1.5, 1.0)] };
        let s = surrogate_objective(&batch, 0.2).unwrap();
        assert!((s.value - 1.2).abs() < 1e-12);
        assert_eq!(s.coefficients, vec![0.0]);

        let batch = StepBatch { group_size: 1, terms: vec![term(0.5, -1.0)] };
        let s = surrogate_objective(&batch, 0.2).unwrap();
        assert!((s.value + 0.8).abs() < 1e-12);

        // Unclipped branch wins: gradient flows.
        let batch = StepBatch { group_size: 1, terms: vec![term(0.5, 1.0)] };
        let s = surrogate_objective(&batch, 0.2).unwrap();
        assert!((s.value - 0.5).abs() < 1e-12);
        assert!((s.coefficients[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ratio_one_gives_mean_advantage() {
        let adv = [0.4, -1.0, 2.5, 0.1];
        let terms = adv.iter().enumerate().map(|(j, &a)| StepTerm { rollout: j, ..term(1.0, a) }).collect();
        let s = surrogate_objective(&StepBatch { group_size: 4, terms }, 0.2).unwrap();
        assert!((s.value - adv.iter().sum::<f64>() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_ratio_names_location() {
        let t = StepTerm { rollout: 3, step: 7, logp_current: 1e4, logp_behavior: 0.0, weight: 1.0, advantage: 1.0 };
        let err = surrogate_objective(&StepBatch { group_size: 4, terms: vec![t] }, 0.2).unwrap_err();
        assert!(err.to_string().contains("rollout 3, step 7"), "{err}");
    }

    #[test]
    fn timestep_weight_cases() {
        assert_eq!(timestep_weights(&[0.3; 5], TimestepSchedule::Uniform).unwrap(), vec![0.2; 5]);
        let w = timestep_weights(&[0.3; 5], TimestepSchedule::NoiseProportional).unwrap();
        assert!(w.iter().all(|x| (x - 0.2).abs() < 1e-15));
        let s = [1.0, 2.0f64.sqrt(), 3.0f64.sqrt()];
        let w = timestep_weights(&s, TimestepSchedule::NoiseProportional).unwrap();
        for (x, y) in w.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(timestep_weights(&[], TimestepSchedule::Uniform).is_err());
    }

    #[test]
    fn batch_max_uses_widest_group() {
        let g1: Vec<RewardVector> = [0.0, 2.0].iter().map(|&r| PerChannel([r; 5])).collect();
        let g2: Vec<RewardVector> = [0.0, 4.0].iter().map(|&r| PerChannel([r; 5])).collect();
        let w = ChannelWeights::default();
        let adv = group_advantages(&[g1, g2], &w, 1e-4, StdMode::BatchMax).unwrap();
        assert_eq!(adv[0].per_channel[Channel::Rot], vec![-0.5, 0.5]);
        assert_eq!(adv[1].per_channel[Channel::Rot], vec![-1.0, 1.0]);
    }

    /// Two-parameter Gaussian policy: action ~ 𝒩(θ₀ + θ₁ x, s²).
    fn toy_logp(theta: [f64; 2], x: f64, action: f64, s: f64) -> f64 {
        let mean = theta[0] + theta[1] * x;
        -0.5 * ((action - mean) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = 0.5;
        let behavior = [0.1, -0.3];
        let current = [0.12, -0.27];
        let samples: Vec<(usize, f64, f64, f64)> = (0..12)
            .map(|j| {
                let x: f64 = rng.random_range(-1.0..1.0);
                let action = behavior[0] + behavior[1] * x + s * rng.random_range(-1.5..1.5);
                (j, x, action, rng.random_range(-1.5..1.5))
            })
            .collect();
        let objective = |theta: [f64; 2]| {
            let terms = samples
                .iter()
                .map(|&(j, x, a, adv)| StepTerm {
                    rollout: j,
                    step: 0,
                    logp_current: toy_logp(theta, x, a, s),
                    logp_behavior: toy_logp(behavior, x, a, s),
                    weight: 0.7,
                    advantage: adv,
                })
                .collect();
            surrogate_objective(&StepBatch { group_size: 12, terms }, 0.2).unwrap()
        };
        let sur = objective(current);
        let mut analytic = [0.0; 2];
        for (coef, &(_, x, a, _)) in sur.coefficients.iter().zip(&samples) {
            let resid = (a - (current[0] + current[1] * x)) / (s * s);
            analytic[0] += coef * resid;
            analytic[1] += coef * resid * x;
        }
        let h = 1e-5;
        for k in 0..2 {
            let mut plus = current;
            let mut minus = current;
            plus[k] += h;
            minus[k] -= h;
            let fd = (objective(plus).value - objective(minus).value) / (2.0 * h);
            let rel = (fd - analytic[k]).abs() / analytic[k].abs().max(1e-12);
            assert!(rel < 1e-4, "param {k}: fd {fd} vs analytic {}", analytic[k]);
        }
    }

    proptest! {
        #[test]
        fn normalized_group_is_standardized(rewards in prop::collection::vec(-100.0f64..100.0, 2..32)) {
            let a = normalize_channel(&rewards, 1e-4).unwrap();
            let (mean, std) = mean_std(&a);
            prop_assert!(mean.abs() < 1e-9);
            if mean_std(&rewards).1 > 1e-4 {
                prop_assert!((std - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn normalization_is_affine_invariant(
            rewards in prop::collection::vec(-10.0f64..10.0, 3..16),
            scale in 0.1f64..10.0,
            shift in -50.0f64..50.0,
            negate in any::<bool>(),
        ) {
            prop_assume!(mean_std(&rewards).1 > 1e-3);
            let a = if negate { -scale } else { scale };
            let moved: Vec<f64> = rewards.iter().map(|r| a * r + shift).collect();
            let base = normalize_channel(&rewards, 1e-4).unwrap();
            let out = normalize_channel(&moved, 1e-4).unwrap();
            let sign = a.signum();
            for (x, y) in out.iter().zip(&base) {
                prop_assert!((x - sign * y).abs() < 1e-9);
            }
        }

        #[test]
        fn fusion_is_linear(
            a in prop::collection::vec(-3.0f64..3.0, 6),
            b in prop::collection::vec(-3.0f64..3.0, 6),
            l1 in -2.0f64..2.0,
            l2 in 0.1f64..2.0,
            k in -3.0f64..3.0,
        ) {
            let w = ChannelWeights::new(PerChannel([l1, l2, 0.0, 0.0, 0.0])).unwrap();
            let fused = fuse_advantages(&[(Channel::Rot, a.clone()), (Channel::Trans, b.clone())], &w).unwrap();
            let w2 = ChannelWeights::new(PerChannel([k * l1, k * l2 + 1e-3, 0.0, 0.0, 0.0])).unwrap();
            let fused2 = fuse_advantages(&[(Channel::Rot, a.clone()), (Channel::Trans, b.clone())], &w2).unwrap();
            let scaled_a: Vec<f64> = a.iter().map(|x| x * k).collect();
            let fused3 = fuse_advantages(&[(Channel::Rot, scaled_a), (Channel::Trans, b.clone())], &w).unwrap();
            for j in 0..6 {
                prop_assert!((fused[j] - (l1 * a[j] + l2 * b[j])).abs() < 1e-12);
                prop_assert!((fused2[j] - (k * fused[j] + 1e-3 * b[j])).abs() < 1e-12);
                prop_assert!((fused3[j] - (k * l1 * a[j] + l2 * b[j])).abs() < 1e-12);
            }
        }

        #[test]
        fn clipping_inactive_matches_unclipped(
            ratios in prop::collection::vec(0.81f64..1.19, 1..20),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let terms: Vec<StepTerm> = ratios
                .iter()
                .enumerate()
                .map(|(j, &r)| StepTerm {
                    rollout: j,
                    step: 0,
                    logp_current: r.ln(),
                    logp_behavior: 0.0,
                    weight: rng.random_range(0.1..1.0),
                    advantage: rng.random_range(-2.0..2.0),
                })
                .collect();
            let g = terms.len();
            let s = surrogate_objective(&StepBatch { group_size: g, terms: terms.clone() }, 0.2).unwrap();
            let plain: f64 = terms
                .iter()
                .map(|t| t.weight * (t.logp_current - t.logp_behavior).exp() * t.advantage / g as f64)
                .sum();
            prop_assert!((s.value - plain).abs() < 1e-12);
        }
    }
}
