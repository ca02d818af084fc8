//! Run configuration: a flat `key = value` text format with `#` comments.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown keys, duplicate keys and out-of-range values are rejected.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::Optimizer;
use crate::geometry::{EstimatorNoise, WeightScheme};
use crate::grpo::{Channel, ChannelWeights, PerChannel, RewardSet, StdMode, TimestepSchedule};
use crate::rescale::RescaleSpec;

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr, $range:literal, $valid:expr; )*) => {
        /// All tunables of a run.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $name: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $name: $default, )* }
            }
        }

        impl RunConfig {
            /// `(key, legal range)` for every key, in canonical order.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[ $( (stringify!($name), $range), )* ];

            fn set(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $(
                        stringify!($name) => {
                            let value: $ty = raw.parse().map_err(|e| Error::Config {
                                key: key.to_string(),
                                message: format!("cannot parse `{raw}`: {e}"),
                            })?;
                            let valid: fn(&$ty) -> bool = $valid;
                            if !valid(&value) {
                                return Err(Error::Config {
                                    key: key.to_string(),
                                    message: format!("value `{raw}` is outside {}", $range),
                                });
                            }
                            self.$name = value;
                        }
                    )*
                    _ => {
                        return Err(Error::Config { key: key.to_string(), message: "unknown key".to_string() })
                    }
                }
                Ok(())
            }

            /// Canonical text: every key in declaration order.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $( let _ = writeln!(out, "{} = {}", stringify!($name), self.$name); )*
                out
            }
        }
    };
}

fn positive(v: &f64) -> bool {
    v.is_finite() && *v > 0.0
}

fn non_negative(v: &f64) -> bool {
    v.is_finite() && *v >= 0.0
}

run_config! {
    /// Master seed; every random stream derives from it.
    seed: u64 = 0, "any u64", |_| true;
    /// Frames per toy trajectory.
    frames: usize = 16, "[2, 1024]", |v| (2..=1024).contains(v);
    /// Euler steps per rollout.
    steps: usize = 25, "[1, 1000]", |v| (1..=1000).contains(v);
    /// Rollouts per condition.
    group_size: usize = 12, "[2, 4096]", |v| (2..=4096).contains(v);
    /// Conditions (groups) per RL iteration.
    conditions_per_iteration: usize = 32, "[1, 1024]", |v| (1..=1024).contains(v);
    iterations: usize = 140, "[0, 10^7]", |v| *v <= 10_000_000;
    optimizer: Optimizer = Optimizer::Adam, "adam | sgd", |_| true;
    /// Step size for RL updates.
    learning_rate: f64 = 2e-4, "(0, 1]", |v| positive(v) && *v <= 1.0;
    adam_beta1: f64 = 0.9, "[0, 1)", |v| (0.0..1.0).contains(v);
    adam_beta2: f64 = 0.999, "[0, 1)", |v| (0.0..1.0).contains(v);
    adam_eps: f64 = 1e-8, "(0, 1)", |v| positive(v) && *v < 1.0;
    /// Gradient steps taken on each sampled batch.
    updates_per_iteration: usize = 1, "[1, 100]", |v| (1..=100).contains(v);
    /// Global gradient norm cap; 0 disables clipping.
    max_grad_norm: f64 = 0.0, "[0, inf)", non_negative;
    window_size: usize = 5, "[1, steps]", |v| *v >= 1;
    /// Iterations per one-step advance of the stochastic window.
    shift_period: usize = 5, "[1, 10^6]", |v| (1..=1_000_000).contains(v);
    window_wrap: bool = true, "true | false", |_| true;
    /// SDE noise scale; 0 gives pure ODE sampling.
    eta: f64 = 0.7, "[0, 10]", |v| non_negative(v) && *v <= 10.0;
    eps_clip: f64 = 0.2, "(0, 1)", |v| positive(v) && *v < 1.0;
    eps_std: f64 = 1e-4, "(0, inf)", positive;
    std_mode: StdMode = StdMode::Group, "group | batch-max", |_| true;
    timestep_weighting: TimestepSchedule = TimestepSchedule::Uniform,
        "uniform | noise-proportional", |_| true;
    reward_set: RewardSet = RewardSet::Full, "full | aesthetic-only | geometry-only", |_| true;
    lambda_rot: f64 = 1.0, "finite", |v| v.is_finite();
    lambda_trans: f64 = 1.0, "finite", |v| v.is_finite();
    lambda_vis: f64 = 0.25, "finite", |v| v.is_finite();
    lambda_mot: f64 = 0.25, "finite", |v| v.is_finite();
    lambda_hps: f64 = 0.25, "finite", |v| v.is_finite();
    temporal_weights: WeightScheme = WeightScheme::Linear, "linear | quadratic | uniform", |_| true;
    /// Pose-estimator translation noise, meters.
    estimator_sigma_trans: f64 = 0.002, "[0, inf)", non_negative;
    /// Pose-estimator rotation noise per axis, radians.
    estimator_sigma_rot: f64 = 0.001, "[0, inf)", non_negative;
    rescale_mu_t: f64 = 0.05, "finite", |v| v.is_finite();
    rescale_sigma_t: f64 = 0.03, "(0, inf)", positive;
    rescale_a_t: f64 = 0.01, "(0, b_t)", positive;
    rescale_b_t: f64 = 0.15, "(a_t, inf)", positive;
    rescale_mu_r: f64 = 0.017, "finite", |v| v.is_finite();
    rescale_sigma_r: f64 = 0.009, "(0, inf)", positive;
    rescale_a_r: f64 = 0.002, "(0, b_r)", positive;
    rescale_b_r: f64 = 0.05, "(a_r, inf)", positive;
    rescale_eps: f64 = 1e-8, "(0, inf)", positive;
    hidden_width: usize = 64, "[1, 4096]", |v| (1..=4096).contains(v);
    condition_embedding: usize = 32, "[1, 4096]", |v| (1..=4096).contains(v);
    time_frequencies: usize = 4, "[1, 64]", |v| (1..=64).contains(v);
    freeze_condition_embedding: bool = false, "true | false", |_| true;
    /// (condition, target) pairs in the scale-drift pretraining corpus.
    corpus_size: usize = 1024, "[1, 10^7]", |v| (1..=10_000_000).contains(v);
    drift_min: f64 = 0.5, "(0, drift_max)", positive;
    drift_max: f64 = 1.5, "(drift_min, inf)", positive;
    pretrain_epochs: usize = 3000, "[0, 10^6]", |v| *v <= 1_000_000;
    pretrain_batch_size: usize = 32, "[1, 10^5]", |v| (1..=100_000).contains(v);
    pretrain_learning_rate: f64 = 0.3, "(0, 100]", |v| positive(v) && *v <= 100.0;
    validation_conditions: usize = 32, "[1, 10^5]", |v| (1..=100_000).contains(v);
    /// ODE samples per validation condition.
    validation_samples: usize = 4, "[1, 1000]", |v| (1..=1000).contains(v);
    /// Write a checkpoint every this many iterations; 0 disables.
    checkpoint_every: usize = 0, "[0, 10^7]", |v| *v <= 10_000_000;
    /// Include wall-clock seconds in metrics lines.
    metrics_wall_clock: bool = true, "true | false", |_| true;
}

impl RunConfig {
    pub fn rescale_spec(&self) -> RescaleSpec {
        RescaleSpec {
            mu_t: self.rescale_mu_t,
            sigma_t: self.rescale_sigma_t,
            a_t: self.rescale_a_t,
            b_t: self.rescale_b_t,
            mu_r: self.rescale_mu_r,
            sigma_r: self.rescale_sigma_r,
            a_r: self.rescale_a_r,
            b_r: self.rescale_b_r,
            eps: self.rescale_eps,
        }
    }

    /// Raw `λ` weights before the reward-set restriction.
    pub fn lambdas(&self) -> PerChannel<f64> {
        let mut w = PerChannel([0.0; 5]);
        w[Channel::Rot] = self.lambda_rot;
        w[Channel::Trans] = self.lambda_trans;
        w[Channel::Vis] = self.lambda_vis;
        w[Channel::Mot] = self.lambda_mot;
        w[Channel::Hps] = self.lambda_hps;
        w
    }

    /// `λ` with channels outside `reward_set` zeroed.
    pub fn channel_weights(&self) -> Result<ChannelWeights> {
        let mut w = self.lambdas();
        for c in Channel::ALL {
            if !self.reward_set.includes(c) {
                w[c] = 0.0;
            }
        }
        ChannelWeights::new(w).map_err(|e| Error::Config { key: "reward_set".into(), message: e.to_string() })
    }

    pub fn estimator_noise(&self, seed: u64) -> EstimatorNoise {
        EstimatorNoise { sigma_trans: self.estimator_sigma_trans, sigma_rot: self.estimator_sigma_rot, seed }
    }

    /// Checks constraints that span several keys.
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, message: String| Err(Error::Config { key: key.to_string(), message });
        if self.window_size > self.steps {
            return err("window_size", format!("{} exceeds steps = {}", self.window_size, self.steps));
        }
        if self.rescale_a_t >= self.rescale_b_t {
            return err("rescale_a_t", format!("must be below rescale_b_t = {}", self.rescale_b_t));
        }
        if self.rescale_a_r >= self.rescale_b_r {
            return err("rescale_a_r", format!("must be below rescale_b_r = {}", self.rescale_b_r));
        }
        if self.drift_min >= self.drift_max {
            return err("drift_min", format!("must be below drift_max = {}", self.drift_max));
        }
        self.rescale_spec()
            .validate()
            .map_err(|e| Error::Config { key: "rescale_*".into(), message: e.to_string() })?;
        self.channel_weights()?;
        Ok(())
    }

    /// First 8 bytes of the SHA-256 of the canonical text, as a big-endian integer.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
    }

    /// Applies one `key = value` override on top of the current values.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        self.set(key, value)?;
        Ok(())
    }
}

/// Parses a config file. Missing keys keep their defaults.
pub fn load_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse { line: i + 1, message: format!("expected `key = value`, got `{line}`") });
        };
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Config { key: key.to_string(), message: "duplicate key".to_string() });
        }
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = load_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.group_size, 12);
        assert_eq!(cfg.steps, 25);
        assert_eq!(cfg.iterations, 140);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = load_config("# toy run\ngroup_size = 4\n  eta=0.5   # noisier\nreward_set = geometry-only\n").unwrap();
        assert_eq!(cfg.group_size, 4);
        assert_eq!(cfg.eta, 0.5);
        assert_eq!(cfg.reward_set, RewardSet::GeometryOnly);
        assert_eq!(load_config("optimizer = sgd").unwrap().optimizer, Optimizer::Sgd);
        assert_eq!(key_of(load_config("optimizer = rmsprop").unwrap_err()), "optimizer");
    }

    #[test]
    fn bad_values_name_the_key() {
        assert_eq!(key_of(load_config("group_size = 0").unwrap_err()), "group_size");
        assert_eq!(key_of(load_config("group_sise = 3").unwrap_err()), "group_sise");
        assert_eq!(key_of(load_config("steps = 3\nsteps = 4").unwrap_err()), "steps");
        assert_eq!(key_of(load_config("eta = fast").unwrap_err()), "eta");
        assert_eq!(key_of(load_config("window_size = 30").unwrap_err()), "window_size");
        assert_eq!(key_of(load_config("std_mode = global").unwrap_err()), "std_mode");
        assert!(matches!(load_config("just words"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn canonical_text_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.learning_rate = 3.5e-4;
        cfg.reward_set = RewardSet::AestheticOnly;
        cfg.seed = 99;
        let back = load_config(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(RunConfig::default().hash(), cfg.hash());
        assert_eq!(RunConfig::KEYS.len(), cfg.to_text().lines().count());
    }

    #[test]
    fn reward_set_restricts_weights() {
        let cfg = load_config("reward_set = aesthetic-only").unwrap();
        let w = cfg.channel_weights().unwrap();
        assert_eq!(w.get(Channel::Trans), 0.0);
        assert_eq!(w.get(Channel::Hps), 0.25);
        assert!(load_config("reward_set = geometry-only\nlambda_rot = 0\nlambda_trans = 0").is_err());
    }
}
