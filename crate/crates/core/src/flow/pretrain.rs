//! Flow-matching pretraining on a scale-corrupted corpus.
//!
//! Each corpus entry pairs a condition trajectory with a regression target
//! that has the same shape but translations multiplied by a random factor.
//! A policy trained on it reproduces shape and guesses scale.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::error::{invalid, Error, Result};
use crate::rescale::{sample_target_trajectory, RescaleSpec};
use crate::se3::{Pose, Trajectory};
use crate::seed::{self, tag};

use super::latent::{encode, TrajLatent};
use super::net::Architecture;
use super::policy::FlowPolicy;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPair {
    pub condition: TrajLatent,
    pub target: TrajLatent,
    pub drift: f64,
}

/// Scales every translation of `t` by `u`, leaving rotations alone.
pub fn scale_translations(t: &Trajectory, u: f64) -> Result<Trajectory> {
    let poses = t
        .poses()
        .iter()
        .map(|p| Pose::new(p.rotation, p.translation * u))
        .collect::<Result<Vec<_>>>()?;
    Ok(t.with_poses(poses))
}

/// `size` (condition, drifted target) pairs. Conditions are rescaled bank
/// entries; drift factors are uniform on `[drift_min, drift_max]`.
pub fn drift_corpus(
    bank: &[Trajectory],
    spec: &RescaleSpec,
    size: usize,
    drift: (f64, f64),
    seed: u64,
) -> Result<Vec<CorpusPair>> {
    let (lo, hi) = drift;
    if size == 0 {
        return Err(invalid("corpus size must be positive"));
    }
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(invalid(format!("drift range [{lo}, {hi}] must satisfy 0 < min <= max")));
    }
    (0..size as u64)
        .map(|i| {
            let cond = sample_target_trajectory(bank, spec, seed::derive(seed, &[tag::CORPUS, i, 0]))?;
            let mut rng = seed::rng(seed::derive(seed, &[tag::CORPUS, i, 1]));
            let u = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let target = scale_translations(&cond, u)?;
            Ok(CorpusPair { condition: encode(&cond)?, target: encode(&target)?, drift: u })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Loss on a frozen batch before training and after every epoch.
    pub validation_losses: Vec<f64>,
}

/// A batch of flow-matching regression problems.
struct Batch {
    z: DMatrix<f64>,
    t: Vec<f64>,
    cond: DMatrix<f64>,
    velocity: DMatrix<f64>,
}

fn make_batch<R: Rng>(pairs: &[&CorpusPair], rng: &mut R) -> Batch {
    let d = pairs[0].target.0.len();
    let n = pairs.len();
    let mut z = DMatrix::zeros(d, n);
    let mut cond = DMatrix::zeros(d, n);
    let mut velocity = DMatrix::zeros(d, n);
    let mut t = Vec::with_capacity(n);
    for (j, p) in pairs.iter().enumerate() {
        // Open interval: t = 0 exactly would waste the sample on pure noise.
        let tj: f64 = loop {
            let x: f64 = rng.random();
            if x > 0.0 {
                break x;
            }
        };
        for i in 0..d {
            let z0: f64 = StandardNormal.sample(rng);
            let z1 = p.target.0[i];
            z[(i, j)] = (1.0 - tj) * z0 + tj * z1;
            velocity[(i, j)] = z1 - z0;
            cond[(i, j)] = p.condition.0[i];
        }
        t.push(tj);
    }
    Batch { z, t, cond, velocity }
}

/// Mean over samples of `(1 − t)²‖v̂ − (z₁ − z₀)‖²`, which equals the squared
/// error of the clean-latent prediction. With `grad`, also adds its gradient.
fn batch_loss(policy: &FlowPolicy, b: &Batch, grad: Option<&mut [f64]>) -> f64 {
    let (out, cache) = policy.forward(&b.z, &b.t, &b.cond);
    let mut resid = out - &b.velocity;
    for (mut col, tj) in resid.column_iter_mut().zip(&b.t) {
        col *= 1.0 - tj;
    }
    let n = b.t.len() as f64;
    if let Some(g) = grad {
        let mut dv = resid.clone();
        for (mut col, tj) in dv.column_iter_mut().zip(&b.t) {
            col *= 2.0 * (1.0 - tj) / n;
        }
        policy.backward(&cache, &dv, g);
    }
    resid.norm_squared() / n
}

fn check_corpus(corpus: &[CorpusPair], arch: &Architecture) -> Result<()> {
    if corpus.is_empty() {
        return Err(invalid("pretraining corpus is empty"));
    }
    let d = arch.latent_dim();
    if corpus.iter().any(|p| p.condition.0.len() != d || p.target.0.len() != d) {
        return Err(invalid(format!("corpus latents must have {d} entries")));
    }
    Ok(())
}

/// Minibatch SGD on the flow-matching regression, starting from a fresh
/// initialization.
pub fn flow_pretrain(
    corpus: &[CorpusPair],
    arch: Architecture,
    settings: &PretrainSettings,
) -> Result<(FlowPolicy, PretrainReport)> {
    let policy = FlowPolicy::init(arch, seed::derive(settings.seed, &[tag::INIT]));
    continue_pretrain(policy, corpus, settings)
}

/// Same as [`flow_pretrain`] but starting from `policy`.
pub fn continue_pretrain(
    mut policy: FlowPolicy,
    corpus: &[CorpusPair],
    settings: &PretrainSettings,
) -> Result<(FlowPolicy, PretrainReport)> {
    check_corpus(corpus, policy.architecture())?;
    if settings.batch_size == 0 || !(settings.learning_rate > 0.0 && settings.learning_rate.is_finite()) {
        return Err(invalid("batch size and learning rate must be positive"));
    }
    let mut val_rng = seed::rng(seed::derive(settings.seed, &[tag::PRETRAIN, 0]));
    let val_pairs: Vec<&CorpusPair> = corpus.iter().cycle().take(corpus.len().clamp(64, 256)).collect();
    let validation = make_batch(&val_pairs, &mut val_rng);

    let mut rng = seed::rng(seed::derive(settings.seed, &[tag::PRETRAIN, 1]));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut grad = vec![0.0; policy.params().len()];
    let mut losses = vec![batch_loss(&policy, &validation, None)];
    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(settings.batch_size) {
            let pairs: Vec<&CorpusPair> = chunk.iter().map(|&i| &corpus[i]).collect();
            let batch = make_batch(&pairs, &mut rng);
            grad.iter_mut().for_each(|g| *g = 0.0);
            batch_loss(&policy, &batch, Some(&mut grad));
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite pretraining gradient in epoch {epoch}")));
            }
            for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
                *p -= settings.learning_rate * g;
            }
        }
        losses.push(batch_loss(&policy, &validation, None));
    }
    Ok((policy, PretrainReport { validation_losses: losses }))
}

/// Builds the drift corpus from `bank` and pretrains a fresh policy, all
/// sizes and rates taken from `config`.
pub fn pretrain_from_config(bank: &[Trajectory], config: &RunConfig) -> Result<(FlowPolicy, PretrainReport)> {
    config.validate()?;
    if let Some(t) = bank.iter().find(|t| t.len() != config.frames) {
        return Err(invalid(format!("bank trajectory has {} frames but frames = {}", t.len(), config.frames)));
    }
    let corpus = drift_corpus(
        bank,
        &config.rescale_spec(),
        config.corpus_size,
        (config.drift_min, config.drift_max),
        config.seed,
    )?;
    let arch = Architecture::new(config.frames, config.hidden_width, config.condition_embedding, config.time_frequencies)?;
    let settings = PretrainSettings {
        epochs: config.pretrain_epochs,
        batch_size: config.pretrain_batch_size,
        learning_rate: config.pretrain_learning_rate,
        seed: config.seed,
    };
    flow_pretrain(&corpus, arch, &settings)
}
