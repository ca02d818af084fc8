//! GRPO fine-tuning of a pretrained flow policy, plus held-out evaluation.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::error::{invalid, Error, Result};
use crate::geometry::{geometry_errors, geometry_reward_channels, noisy_estimator, GeometryErrors, TemporalWeights};
use crate::grpo::{
    group_advantages, surrogate_objective, timestep_weights, Channel, ChannelWeights, RewardVector, StdMode,
    StepBatch, StepTerm, Surrogate, TimestepSchedule,
};
use crate::metrics::{ChannelMeans, MetricsRecord, MetricsSink};
use crate::rescale::{sample_target_trajectory, RescaleSpec};
use crate::se3::Trajectory;
use crate::seed::{self, tag};

use super::aesthetic::aesthetic_channels;
use super::latent::{decode, encode, TrajLatent};
use super::policy::FlowPolicy;
use super::sampler::{gaussian_log_density, sample_group, step_time, Rollout, SamplerSettings, WindowSchedule};

/// Scores a generated trajectory against the target it was conditioned on.
pub trait RewardModel {
    fn score(&self, target: &Trajectory, generated: &Trajectory, seed: u64) -> Result<RewardVector>;
}

/// Geometry channels through a simulated pose estimator, plus the
/// hand-crafted aesthetic channels of the generated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardRewards {
    pub weights: TemporalWeights,
    pub sigma_trans: f64,
    pub sigma_rot: f64,
}

impl StandardRewards {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Ok(StandardRewards {
            weights: TemporalWeights::for_scheme(config.temporal_weights, config.frames)?,
            sigma_trans: config.estimator_sigma_trans,
            sigma_rot: config.estimator_sigma_rot,
        })
    }
}

impl RewardModel for StandardRewards {
    fn score(&self, target: &Trajectory, generated: &Trajectory, seed: u64) -> Result<RewardVector> {
        let noise = crate::geometry::EstimatorNoise::new(self.sigma_trans, self.sigma_rot, seed)?;
        let estimated = noisy_estimator(generated, &noise);
        let (r_trans, r_rot) = geometry_reward_channels(&geometry_errors(target, &estimated, &self.weights)?);
        let a = aesthetic_channels(generated);
        let mut r = RewardVector::default();
        r[Channel::Rot] = r_rot;
        r[Channel::Trans] = r_trans;
        r[Channel::Vis] = a.s_vis;
        r[Channel::Mot] = a.s_mot;
        r[Channel::Hps] = a.s_hps;
        Ok(r)
    }
}

/// Update rule for RL steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    Adam,
    /// Plain gradient ascent, `θ ← θ + lr·g`.
    Sgd,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            other => Err(invalid(format!("unknown optimizer `{other}` (expected adam or sgd)"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        })
    }
}

/// Adam with bias correction, used for gradient ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { learning_rate, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Moves `params` along `grad` (ascent).
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] += self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One condition's sampled group and its fused advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub condition: TrajLatent,
    pub rollouts: Vec<Rollout>,
    pub advantages: Vec<f64>,
}

/// Evaluates the clipped surrogate at the current parameters and its
/// gradient with respect to every parameter. Behavior log-densities are the
/// ones recorded at sampling time.
pub fn surrogate_and_gradient(
    policy: &FlowPolicy,
    groups: &[GroupBatch],
    steps: usize,
    schedule: TimestepSchedule,
    eps_clip: f64,
) -> Result<(Surrogate, Vec<f64>)> {
    let d = policy.latent_dim();
    let dt = 1.0 / steps as f64;
    let total_rollouts: usize = groups.iter().map(|g| g.rollouts.len()).sum();

    let mut cols = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        if g.advantages.len() != g.rollouts.len() {
            return Err(invalid("one advantage per rollout is required"));
        }
        for (ri, r) in g.rollouts.iter().enumerate() {
            let sigmas: Vec<f64> = r.transitions.iter().map(|t| t.sigma).collect();
            if sigmas.is_empty() {
                continue;
            }
            let w = timestep_weights(&sigmas, schedule)?;
            for (ti, wt) in w.into_iter().enumerate() {
                cols.push((gi, ri, ti, wt));
            }
        }
    }
    let mut grad = vec![0.0; policy.params().len()];
    if cols.is_empty() {
        let empty = StepBatch { group_size: total_rollouts.max(1), terms: Vec::new() };
        return Ok((surrogate_objective(&empty, eps_clip)?, grad));
    }

    let n = cols.len();
    let mut z = DMatrix::zeros(d, n);
    let mut cond = DMatrix::zeros(d, n);
    let mut t = Vec::with_capacity(n);
    for (c, &(gi, ri, ti, _)) in cols.iter().enumerate() {
        let tr = &groups[gi].rollouts[ri].transitions[ti];
        z.set_column(c, &tr.state);
        cond.set_column(c, &groups[gi].condition.0);
        t.push(step_time(tr.step, steps));
    }
    let (v, cache) = policy.forward(&z, &t, &cond);
    let mean = &z + v * dt;

    let mut terms = Vec::with_capacity(n);
    for (c, &(gi, ri, ti, weight)) in cols.iter().enumerate() {
        let tr = &groups[gi].rollouts[ri].transitions[ti];
        let m = mean.column(c).into_owned();
        terms.push(StepTerm {
            rollout: ri,
            step: tr.step,
            logp_current: gaussian_log_density(&tr.next, &m, tr.sigma),
            logp_behavior: tr.log_density,
            weight,
            advantage: groups[gi].advantages[ri],
        });
    }
    let surrogate = surrogate_objective(&StepBatch { group_size: total_rollouts, terms }, eps_clip)?;

    // ∂logp/∂v̂ = Δt (x − mean) / σ².
    let mut grad_out = DMatrix::zeros(d, n);
    for (c, &(gi, ri, ti, _)) in cols.iter().enumerate() {
        let coef = surrogate.coefficients[c];
        if coef == 0.0 {
            continue;
        }
        let tr = &groups[gi].rollouts[ri].transitions[ti];
        let scale = coef * dt / (tr.sigma * tr.sigma);
        grad_out.set_column(c, &((&tr.next - mean.column(c)) * scale));
    }
    policy.backward(&cache, &grad_out, &mut grad);
    Ok((surrogate, grad))
}

/// Everything a training run needs besides the policy.
pub struct TrainSetup<'a> {
    pub bank: &'a [Trajectory],
    pub config: &'a RunConfig,
    pub rewards: &'a dyn RewardModel,
    pub sink: &'a MetricsSink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: FlowPolicy,
    pub records: Vec<MetricsRecord>,
}

struct ResolvedConfig {
    spec: RescaleSpec,
    weights: ChannelWeights,
    window: WindowSchedule,
    std_mode: StdMode,
}

fn resolve(policy: &FlowPolicy, config: &RunConfig) -> Result<ResolvedConfig> {
    config.validate()?;
    if policy.architecture().frames != config.frames {
        return Err(invalid(format!(
            "policy generates {} frames but the config asks for {}",
            policy.architecture().frames,
            config.frames
        )));
    }
    Ok(ResolvedConfig {
        spec: config.rescale_spec(),
        weights: config.channel_weights()?,
        window: WindowSchedule::new(config.window_size, config.shift_period, config.window_wrap)?,
        std_mode: config.std_mode,
    })
}

/// Runs `config.iterations` GRPO iterations. `on_iteration` sees the policy
/// after every update, e.g. to write periodic checkpoints.
pub fn grpo_train(
    mut policy: FlowPolicy,
    setup: &TrainSetup<'_>,
    on_iteration: &mut dyn FnMut(usize, &FlowPolicy) -> Result<()>,
) -> Result<TrainOutcome> {
    let config = setup.config;
    let r = resolve(&policy, config)?;
    let master = config.seed;
    let mut adam = Adam::new(
        policy.params().len(),
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let frozen = policy.architecture().condition_params();
    let start = Instant::now();
    let mut records = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let active = r.window.active(iter, config.steps)?;
        let mut groups = Vec::with_capacity(config.conditions_per_iteration);
        let mut rewards = Vec::with_capacity(config.conditions_per_iteration);
        let mut true_errors = Vec::new();

        for c in 0..config.conditions_per_iteration as u64 {
            let i = iter as u64;
            let target = sample_target_trajectory(setup.bank, &r.spec, seed::derive(master, &[tag::CONDITION, i, c]))?;
            let condition = encode(&target)?;
            let settings = SamplerSettings { steps: config.steps, eta: config.eta, frame_rate: target.frame_rate() };
            let rollouts = sample_group(
                &policy,
                &condition,
                active.clone(),
                config.group_size,
                &settings,
                seed::derive(master, &[tag::ROLLOUT, i, c]),
            )?;
            let mut group_rewards = Vec::with_capacity(rollouts.len());
            for (j, ro) in rollouts.iter().enumerate() {
                let s = seed::derive(master, &[tag::ESTIMATOR, i, c, j as u64]);
                group_rewards.push(setup.rewards.score(&target, &ro.trajectory, s)?);
                let w = TemporalWeights::for_scheme(config.temporal_weights, target.len())?;
                true_errors.push(geometry_errors(&target, &ro.trajectory, &w)?);
            }
            rewards.push(group_rewards);
            groups.push(GroupBatch { condition, rollouts, advantages: Vec::new() });
        }

        let advantages = group_advantages(&rewards, &r.weights, config.eps_std, r.std_mode)?;
        for (g, a) in groups.iter_mut().zip(&advantages) {
            g.advantages = a.total.clone();
        }

        let mut first: Option<(Surrogate, f64)> = None;
        for _ in 0..config.updates_per_iteration {
            let (surrogate, mut grad) =
                surrogate_and_gradient(&policy, &groups, config.steps, config.timestep_weighting, config.eps_clip)?;
            if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient (parameter {k}) at iteration {iter}")));
            }
            if config.freeze_condition_embedding {
                grad[frozen.clone()].iter_mut().for_each(|g| *g = 0.0);
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if config.max_grad_norm > 0.0 && norm > config.max_grad_norm {
                let s = config.max_grad_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            match config.optimizer {
                Optimizer::Adam => adam.ascend(policy.params_mut(), &grad),
                Optimizer::Sgd => {
                    for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
                        *p += config.learning_rate * g;
                    }
                }
            }
            first.get_or_insert((surrogate, norm));
        }
        let (surrogate, grad_norm) = first.expect("at least one update per iteration");

        let all: Vec<&RewardVector> = rewards.iter().flatten().collect();
        let count = all.len() as f64;
        let mut mean_rewards = RewardVector::default();
        for rv in &all {
            for c in Channel::ALL {
                mean_rewards[c] += rv[c] / count;
            }
        }
        let totals: Vec<f64> = groups.iter().flat_map(|g| g.advantages.iter().copied()).collect();
        let record = MetricsRecord {
            iteration: iter,
            mean_rewards: ChannelMeans::from(&mean_rewards),
            mean_advantage: totals.iter().sum::<f64>() / count,
            mean_abs_advantage: totals.iter().map(|a| a.abs()).sum::<f64>() / count,
            surrogate: surrogate.value,
            clip_fraction: surrogate.clip_fraction,
            grad_norm,
            window_start: active.start,
            window_end: active.end,
            mean_d_trans: true_errors.iter().map(|e| e.d_trans).sum::<f64>() / count,
            mean_d_rot: true_errors.iter().map(|e| e.d_rot).sum::<f64>() / count,
            wall_seconds: config.metrics_wall_clock.then(|| start.elapsed().as_secs_f64()),
        };
        setup.sink.emit(&record)?;
        records.push(record);
        on_iteration(iter, &policy)?;
    }
    Ok(TrainOutcome { policy, records })
}

/// Frozen held-out conditions with fixed initial noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSet {
    pub targets: Vec<Trajectory>,
    pub conditions: Vec<TrajLatent>,
    pub samples: usize,
    /// Column `i·samples + k` is the `k`-th starting point for condition `i`.
    pub z0: DMatrix<f64>,
}

impl ValidationSet {
    pub fn new(bank: &[Trajectory], spec: &RescaleSpec, count: usize, samples: usize, seed: u64) -> Result<Self> {
        if count == 0 || samples == 0 {
            return Err(invalid("validation needs at least one condition and one sample"));
        }
        let targets = (0..count as u64)
            .map(|i| sample_target_trajectory(bank, spec, seed::derive(seed, &[tag::VALIDATION, i])))
            .collect::<Result<Vec<_>>>()?;
        let conditions = targets.iter().map(encode).collect::<Result<Vec<_>>>()?;
        let d = conditions[0].0.len();
        let mut rng = seed::rng(seed::derive(seed, &[tag::VALIDATION, u64::MAX]));
        let z0 = DMatrix::from_fn(d, count * samples, |_, _| StandardNormal.sample(&mut rng));
        Ok(ValidationSet { targets, conditions, samples, z0 })
    }

    pub fn from_config(bank: &[Trajectory], config: &RunConfig) -> Result<Self> {
        Self::new(
            bank,
            &config.rescale_spec(),
            config.validation_conditions,
            config.validation_samples,
            config.seed,
        )
    }
}

/// Means over every validation sample of the true (noise-free) errors and
/// the aesthetic scores.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Evaluation {
    pub mean_d_trans: f64,
    pub mean_d_rot: f64,
    pub mean_s_vis: f64,
    pub mean_s_mot: f64,
    pub mean_s_hps: f64,
}

/// Pure-ODE samples of every validation condition, scored against its target.
pub fn evaluate(policy: &FlowPolicy, set: &ValidationSet, steps: usize, weights: &TemporalWeights) -> Result<Evaluation> {
    let cond = DMatrix::from_fn(set.z0.nrows(), set.z0.ncols(), |i, j| set.conditions[j / set.samples].0[i]);
    let out = super::sampler::ode_sample(policy, &set.z0, &cond, steps);
    let n = out.ncols() as f64;
    let mut e = Evaluation::default();
    for j in 0..out.ncols() {
        let target = &set.targets[j / set.samples];
        let generated = decode(&TrajLatent(out.column(j).into_owned()), target.frame_rate())?;
        let GeometryErrors { d_trans, d_rot } = geometry_errors(target, &generated, weights)?;
        let a = aesthetic_channels(&generated);
        e.mean_d_trans += d_trans / n;
        e.mean_d_rot += d_rot / n;
        e.mean_s_vis += a.s_vis / n;
        e.mean_s_mot += a.s_mot / n;
        e.mean_s_hps += a.s_hps / n;
    }
    Ok(e)
}

/// Samples one group from `policy` for `target` with the window over the
/// final `config.window_size` steps.
pub fn rollout_group(policy: &FlowPolicy, target: &Trajectory, config: &RunConfig) -> Result<Vec<Rollout>> {
    let r = resolve(policy, config)?;
    let condition = encode(target)?;
    let settings = SamplerSettings { steps: config.steps, eta: config.eta, frame_rate: target.frame_rate() };
    sample_group(
        policy,
        &condition,
        r.window.active(0, config.steps)?,
        config.group_size,
        &settings,
        seed::derive(config.seed, &[tag::ROLLOUT, u64::MAX]),
    )
    .map_err(|e| match e {
        Error::InvalidArgument(m) => invalid(format!("rollout: {m}")),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::generate_bank;
    use crate::flow::net::Architecture;

    struct Constant;

    impl RewardModel for Constant {
        fn score(&self, _: &Trajectory, _: &Trajectory, _: u64) -> Result<RewardVector> {
            Ok(crate::grpo::PerChannel([-1.0, -2.0, 0.5, 0.0, 3.0]))
        }
    }

    fn small_config() -> RunConfig {
        RunConfig {
            frames: 4,
            steps: 8,
            group_size: 4,
            window_size: 3,
            shift_period: 2,
            iterations: 6,
            hidden_width: 16,
            condition_embedding: 8,
            time_frequencies: 2,
            metrics_wall_clock: false,
            ..RunConfig::default()
        }
    }

    fn policy_for(c: &RunConfig) -> FlowPolicy {
        let arch = Architecture::new(c.frames, c.hidden_width, c.condition_embedding, c.time_frequencies).unwrap();
        FlowPolicy::init(arch, 11)
    }

    fn run(c: &RunConfig, rewards: &dyn RewardModel) -> TrainOutcome {
        let bank = generate_bank(8, c.frames, 1).unwrap();
        let sink = MetricsSink::discard();
        let setup = TrainSetup { bank: &bank, config: c, rewards, sink: &sink };
        grpo_train(policy_for(c), &setup, &mut |_, _| Ok(())).unwrap()
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(2, 0.1, 0.9, 0.999, 1e-12);
        let mut p = vec![1.0, 1.0];
        adam.ascend(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 1.1).abs() < 1e-9 && (p[1] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn constant_rewards_leave_parameters_unchanged() {
        let c = small_config();
        let out = run(&c, &Constant);
        assert_eq!(out.policy.params(), policy_for(&c).params());
        assert!(out.records.iter().all(|r| r.mean_abs_advantage == 0.0 && r.grad_norm == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_moves_the_window() {
        let c = small_config();
        let rewards = StandardRewards::from_config(&c).unwrap();
        let a = run(&c, &rewards);
        let b = run(&c, &rewards);
        assert_eq!(a, b);
        assert_ne!(a.policy.params(), policy_for(&c).params());
        let windows: Vec<_> = a.records.iter().map(|r| (r.window_start, r.window_end)).collect();
        assert_eq!(windows, vec![(5, 8), (5, 8), (4, 7), (4, 7), (3, 6), (3, 6)]);
    }

    #[test]
    fn frozen_embedding_stays_fixed() {
        let c = RunConfig { freeze_condition_embedding: true, ..small_config() };
        let out = run(&c, &StandardRewards::from_config(&c).unwrap());
        let range = out.policy.architecture().condition_params();
        let init = policy_for(&c);
        assert_eq!(out.policy.params()[range.clone()], init.params()[range.clone()]);
        assert_ne!(out.policy.params()[range.end..], init.params()[range.end..]);
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let c = small_config();
        let bank = generate_bank(2, 4, 1).unwrap();
        let sink = MetricsSink::discard();
        let setup = TrainSetup { bank: &bank, config: &RunConfig { frames: 5, ..c.clone() }, rewards: &Constant, sink: &sink };
        assert!(grpo_train(policy_for(&c), &setup, &mut |_, _| Ok(())).is_err());
    }

    fn perturbed_batch(c: &RunConfig) -> (FlowPolicy, Vec<GroupBatch>) {
        let policy = policy_for(c);
        let bank = generate_bank(3, c.frames, 2).unwrap();
        let settings = SamplerSettings { steps: c.steps, eta: c.eta, frame_rate: 16.0 };
        let mut groups = Vec::new();
        for (i, t) in bank.iter().enumerate() {
            let condition = encode(t).unwrap();
            let rollouts = sample_group(&policy, &condition, 2..6, c.group_size, &settings, i as u64).unwrap();
            let advantages = (0..c.group_size).map(|j| j as f64 - 1.3).collect();
            groups.push(GroupBatch { condition, rollouts, advantages });
        }
        // Move away from the behavior parameters so ratios differ from 1.
        let mut moved = policy.clone();
        let mut rng = seed::rng(5);
        for p in moved.params_mut() {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *p += 2e-4 * xi;
        }
        (moved, groups)
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let c = small_config();
        let (policy, groups) = perturbed_batch(&c);
        let f = |p: &FlowPolicy| surrogate_and_gradient(p, &groups, c.steps, c.timestep_weighting, c.eps_clip).unwrap();
        let (s, grad) = f(&policy);
        assert!(s.clip_fraction < 1.0);
        let h = 1e-5;
        let mut probe = policy.clone();
        let mut fd = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let orig = policy.params()[i];
            probe.params_mut()[i] = orig + h;
            let up = f(&probe).0.value;
            probe.params_mut()[i] = orig - h;
            let down = f(&probe).0.value;
            probe.params_mut()[i] = orig;
            fd[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(scale > 0.0);
        assert!(diff / scale < 1e-4, "relative error {}", diff / scale);
    }

    #[test]
    fn evaluation_is_finite_and_deterministic() {
        let c = small_config();
        let bank = generate_bank(4, c.frames, 3).unwrap();
        let set = ValidationSet::new(&bank, &c.rescale_spec(), 3, 2, 0).unwrap();
        let w = TemporalWeights::for_scheme(c.temporal_weights, c.frames).unwrap();
        let p = policy_for(&c);
        let e = evaluate(&p, &set, c.steps, &w).unwrap();
        assert!(e.mean_d_trans.is_finite() && e.mean_d_trans > 0.0);
        assert_eq!(e, evaluate(&p, &set, c.steps, &w).unwrap());
    }
}
