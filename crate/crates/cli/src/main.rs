use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use trajrl::bank::generate_bank;
use trajrl::config::{load_config, RunConfig};
use trajrl::flow::{
    evaluate, grpo_train, pretrain_from_config, read_checkpoint, rollout_group, write_checkpoint, FlowPolicy,
    StandardRewards, TrainSetup, ValidationSet,
};
use trajrl::geometry::{frame_errors, geometry_errors, TemporalWeights, WeightScheme};
use trajrl::grpo::RewardSet;
use trajrl::metrics::MetricsSink;
use trajrl::rescale::sample_target;
use trajrl::se3::Trajectory;
use trajrl::traj_io::{parse_trajectory_str, serialize_trajectory};

#[derive(Parser)]
#[command(name = "trajrl", version, about = "Metric-scale trajectory rewards and GRPO fine-tuning for a toy trajectory generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared run-configuration flags.
#[derive(clap::Args)]
struct ConfigArgs {
    /// `key = value` config file; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Weighted translation and rotation error between two trajectory files.
    Eval {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        estimated: PathBuf,
        #[arg(long, default_value = "linear")]
        weights: WeightScheme,
        /// Also write the per-frame error table here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rescale one trajectory to randomly drawn physical speeds.
    Rescale {
        #[arg(long)]
        input: PathBuf,
        /// Config file holding the `rescale_*` keys.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a bank of smooth random trajectories.
    GenBank {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flow-matching pretraining on the scale-drift corpus built from a bank.
    Pretrain {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// GRPO fine-tuning of a checkpoint.
    Train {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        reward_set: Option<RewardSet>,
        /// Metrics lines go here instead of stdout.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Directory for periodic checkpoints (see `checkpoint_every`).
        /// Defaults to the directory of `--out`.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Sample one group for a condition trajectory and score it.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Target trajectory used as the condition.
        #[arg(long)]
        condition: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// An input file that could not be read. Maps to exit code 2.
#[derive(Debug)]
struct Unreadable {
    path: PathBuf,
    source: std::io::Error,
}

impl fmt::Display for Unreadable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot read {}: {}", self.path.display(), self.source)
    }
}

impl std::error::Error for Unreadable {}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Unreadable { path: path.to_path_buf(), source }.into())
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_input(path)?).with_context(|| format!("{} is not UTF-8 text", path.display()))
}

fn read_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_run_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => load_config(&read_text(p)?).with_context(|| format!("config {}", p.display()))?,
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        cfg.apply(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<(FlowPolicy, u64)> {
    let c = read_checkpoint(read_input(path)?.as_slice()).with_context(|| format!("loading {}", path.display()))?;
    Ok((c.policy, c.config_hash))
}

fn save_checkpoint(path: &Path, policy: &FlowPolicy, hash: u64) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, policy, hash)?;
    write_output(path, &bytes)
}

/// Every `*.txt` file of `dir`, in file-name order.
fn load_bank(dir: &Path) -> Result<Vec<Trajectory>> {
    let entries = fs::read_dir(dir).map_err(|source| Unreadable { path: dir.to_path_buf(), source })?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.with_context(|| format!("listing {}", dir.display()))?.path();
        if p.extension().is_some_and(|x| x == "txt") {
            paths.push(p);
        }
    }
    if paths.is_empty() {
        bail!("bank directory {} has no .txt trajectories", dir.display());
    }
    paths.sort();
    paths.iter().map(|p| read_trajectory(p)).collect()
}

fn cmd_eval(target: &Path, estimated: &Path, scheme: WeightScheme, csv: Option<&Path>) -> Result<()> {
    let target = read_trajectory(target)?;
    let estimated = read_trajectory(estimated)?;
    let w = TemporalWeights::for_scheme(scheme, target.len())?;
    let e = geometry_errors(&target, &estimated, &w)?;
    if let Some(path) = csv {
        let mut table = String::from("frame,weight,translation_m,rotation_rad,rotation_deg\n");
        for (i, (f, wi)) in frame_errors(&target, &estimated)?.iter().zip(w.as_slice()).enumerate() {
            table += &format!("{i},{wi},{},{},{}\n", f.translation, f.rotation, f.rotation.to_degrees());
        }
        write_output(path, table.as_bytes())?;
    }
    println!("d_trans = {} m", e.d_trans);
    println!("d_rot = {} rad ({} deg)", e.d_rot, e.d_rot.to_degrees());
    Ok(())
}

fn cmd_rescale(input: &Path, spec: &Path, seed: u64, output: &Path) -> Result<()> {
    let traj = read_trajectory(input)?;
    let cfg = load_config(&read_text(spec)?).with_context(|| format!("spec {}", spec.display()))?;
    let s = sample_target(std::slice::from_ref(&traj), &cfg.rescale_spec(), seed)
        .with_context(|| format!("rescaling {}", input.display()))?;
    write_output(output, serialize_trajectory(&s.trajectory).as_bytes())?;
    println!("tau_trans = {}", s.tau_trans);
    println!("tau_rot = {}", s.tau_rot);
    println!("s_trans = {}", s.s_trans);
    println!("s_rot = {}", s.s_rot);
    Ok(())
}

fn cmd_gen_bank(count: usize, frames: usize, seed: u64, out: &Path) -> Result<()> {
    let bank = generate_bank(count, frames, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (i, t) in bank.iter().enumerate() {
        write_output(&out.join(format!("traj_{i:05}.txt")), serialize_trajectory(t).as_bytes())?;
    }
    println!("wrote {count} trajectories to {}", out.display());
    Ok(())
}

fn cmd_pretrain(bank: &Path, out: &Path, cfg: &ConfigArgs) -> Result<()> {
    let cfg = load_run_config(cfg)?;
    let bank = load_bank(bank)?;
    let (policy, report) = pretrain_from_config(&bank, &cfg)?;
    save_checkpoint(out, &policy, cfg.hash())?;
    let losses = &report.validation_losses;
    println!(
        "pretrained {} epochs: validation loss {} -> {}",
        cfg.pretrain_epochs,
        losses[0],
        losses[losses.len() - 1]
    );
    Ok(())
}

struct TrainArgs<'a> {
    checkpoint: &'a Path,
    bank: &'a Path,
    out: &'a Path,
    iterations: Option<usize>,
    reward_set: Option<RewardSet>,
    metrics: Option<&'a Path>,
    checkpoint_dir: Option<&'a Path>,
}

fn cmd_train(a: TrainArgs<'_>, cfg: &ConfigArgs) -> Result<()> {
    let mut cfg = load_run_config(cfg)?;
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(r) = a.reward_set {
        cfg.reward_set = r;
    }
    cfg.validate()?;
    let (policy, input_hash) = load_checkpoint(a.checkpoint)?;
    let bank = load_bank(a.bank)?;

    let sink = match a.metrics {
        Some(p) => {
            let f = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            MetricsSink::new(BufWriter::new(f))
        }
        None => MetricsSink::new(std::io::stdout()),
    };
    let ckpt_dir = match a.checkpoint_dir {
        Some(d) => d.to_path_buf(),
        None => a.out.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if cfg.checkpoint_every > 0 {
        fs::create_dir_all(&ckpt_dir).with_context(|| format!("creating {}", ckpt_dir.display()))?;
    }

    let validation = ValidationSet::from_config(&bank, &cfg)?;
    let weights = TemporalWeights::for_scheme(cfg.temporal_weights, cfg.frames)?;
    let before = evaluate(&policy, &validation, cfg.steps, &weights)?;

    let rewards = StandardRewards::from_config(&cfg)?;
    let setup = TrainSetup { bank: &bank, config: &cfg, rewards: &rewards, sink: &sink };
    let hash = cfg.hash();
    let every = cfg.checkpoint_every;
    let outcome = grpo_train(policy, &setup, &mut |iter, p| {
        if every > 0 && (iter + 1) % every == 0 {
            let path = ckpt_dir.join(format!("checkpoint_{:06}.bin", iter + 1));
            save_checkpoint(&path, p, hash).map_err(|e| trajrl::Error::Io(std::io::Error::other(format!("{e:#}"))))?;
        }
        Ok(())
    })?;
    // An untouched policy keeps the hash of the run that produced it.
    let out_hash = if cfg.iterations == 0 { input_hash } else { hash };
    save_checkpoint(a.out, &outcome.policy, out_hash)?;
    let after = evaluate(&outcome.policy, &validation, cfg.steps, &weights)?;
    eprintln!(
        "validation d_trans {:.6} -> {:.6} m, d_rot {:.6} -> {:.6} rad, s_mot {:.6} -> {:.6}",
        before.mean_d_trans, after.mean_d_trans, before.mean_d_rot, after.mean_d_rot, before.mean_s_mot, after.mean_s_mot
    );
    Ok(())
}

fn cmd_rollout(checkpoint: &Path, condition: &Path, out: &Path, seed: Option<u64>, cfg: &ConfigArgs) -> Result<()> {
    let mut cfg = load_run_config(cfg)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (policy, _) = load_checkpoint(checkpoint)?;
    let target = read_trajectory(condition)?;
    cfg.frames = policy.architecture().frames;
    let rollouts = rollout_group(&policy, &target, &cfg)?;
    let w = TemporalWeights::for_scheme(cfg.temporal_weights, target.len())?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut table = String::from("rollout,d_trans_m,d_rot_rad,d_rot_deg\n");
    for (j, r) in rollouts.iter().enumerate() {
        write_output(&out.join(format!("rollout_{j:03}.txt")), serialize_trajectory(&r.trajectory).as_bytes())?;
        let e = geometry_errors(&target, &r.trajectory, &w)?;
        table += &format!("{j},{},{},{}\n", e.d_trans, e.d_rot, e.d_rot.to_degrees());
    }
    write_output(&out.join("errors.csv"), table.as_bytes())?;
    std::io::stdout().write_all(table.as_bytes())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval { target, estimated, weights, csv } => cmd_eval(&target, &estimated, weights, csv.as_deref()),
        Command::Rescale { input, spec, seed, output } => cmd_rescale(&input, &spec, seed, &output),
        Command::GenBank { count, frames, seed, out } => cmd_gen_bank(count, frames, seed, &out),
        Command::Pretrain { bank, out, cfg } => cmd_pretrain(&bank, &out, &cfg),
        Command::Train { checkpoint, bank, out, iterations, reward_set, metrics, checkpoint_dir, cfg } => cmd_train(
            TrainArgs {
                checkpoint: &checkpoint,
                bank: &bank,
                out: &out,
                iterations,
                reward_set,
                metrics: metrics.as_deref(),
                checkpoint_dir: checkpoint_dir.as_deref(),
            },
            &cfg,
        ),
        Command::Rollout { checkpoint, condition, out, seed, cfg } => {
            cmd_rollout(&checkpoint, &condition, &out, seed, &cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<Unreadable>()) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
