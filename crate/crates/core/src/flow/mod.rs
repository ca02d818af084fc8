//! A small conditional flow-matching trajectory generator: network, latent
//! encoding, windowed SDE sampling, pretraining and GRPO fine-tuning.

pub mod aesthetic;
pub mod checkpoint;
pub mod latent;
pub mod net;
pub mod policy;
pub mod pretrain;
pub mod sampler;
pub mod train;

pub use aesthetic::{aesthetic_channels, AestheticScores};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use latent::{decode, encode, Condition, TrajLatent};
pub use net::Architecture;
pub use policy::FlowPolicy;
pub use pretrain::{drift_corpus, flow_pretrain, pretrain_from_config, CorpusPair, PretrainReport, PretrainSettings};
pub use sampler::{sample_group, Rollout, SamplerSettings, Transition, WindowSchedule};
pub use train::{
    evaluate, grpo_train, rollout_group, Evaluation, Optimizer, RewardModel, StandardRewards, TrainOutcome, TrainSetup,
    ValidationSet,
};
