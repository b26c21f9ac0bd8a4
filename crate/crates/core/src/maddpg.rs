//! Centralized-critic, decentralized-actor training.
//!
//! Every training agent owns an actor that sees only its local observation
//! and a critic that sees the joint observation and joint action of the
//! team. Targets for the critic come exclusively from the slowly blended
//! target networks.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::WorldConfig;
use crate::episode::Episode;
use crate::error::{ConfigError, Error, NeuralError, TrainError};
use crate::neural::{soft_update, Adam, Gradients, Head, Mlp};
use crate::policy::{action_dim, observation_dim, unit_interval, Action, Observation, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub variant: Variant,
    pub episodes: usize,
    pub batch_size: usize,
    pub gamma: f64,
    /// Target blending rate.
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub replay_capacity: usize,
    /// Training starts once the buffer holds this many batches.
    pub warmup_batches: usize,
    pub noise_initial: f64,
    pub noise_final: f64,
    /// Fraction of the run over which exploration noise decays linearly.
    pub noise_decay_fraction: f64,
    /// Multiplier on rewards before they enter critic targets.
    pub reward_scale: f64,
    /// Global gradient-norm clip per network, 0 disables.
    pub max_grad_norm: f64,
    /// Episodes between checkpoints, 0 disables.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            variant: Variant::Ours,
            episodes: 200_000,
            batch_size: 1024,
            gamma: 0.99,
            tau: 0.01,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            hidden_layers: 4,
            hidden_units: 64,
            replay_capacity: 1_000_000,
            warmup_batches: 10,
            noise_initial: 0.3,
            noise_final: 0.05,
            noise_decay_fraction: 0.5,
            reward_scale: 1e-2,
            max_grad_norm: 0.5,
            checkpoint_every: 1000,
            seed: 0,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size == 0 {
            return Err(ConfigError::invalid("batch_size", "must be positive"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(ConfigError::invalid("replay_capacity", "smaller than batch_size"));
        }
        if self.hidden_units == 0 {
            return Err(ConfigError::invalid("hidden_units", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ConfigError::invalid("gamma", "must lie in [0,1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(ConfigError::invalid("tau", "must lie in (0,1]"));
        }
        for (field, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(field, "must be finite and > 0"));
            }
        }
        for (field, v) in [
            ("noise_initial", self.noise_initial),
            ("noise_final", self.noise_final),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(field, "must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.noise_decay_fraction) {
            return Err(ConfigError::invalid("noise_decay_fraction", "must lie in [0,1]"));
        }
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        self.warmup_batches * self.batch_size
    }

    /// Exploration scale for a 0-based episode index.
    pub fn noise_scale(&self, episode: usize) -> f64 {
        let horizon = self.noise_decay_fraction * self.episodes as f64;
        let progress = if horizon > 0.0 {
            (episode as f64 / horizon).min(1.0)
        } else {
            1.0
        };
        self.noise_initial + (self.noise_final - self.noise_initial) * progress
    }

    fn hidden(&self) -> Vec<usize> {
        vec![self.hidden_units; self.hidden_layers]
    }

    pub fn actor_sizes(&self, k: usize) -> Vec<usize> {
        let mut v = vec![observation_dim(k)];
        v.extend(self.hidden());
        v.push(action_dim(k));
        v
    }

    pub fn critic_sizes(&self, k: usize, n_agents: usize) -> Vec<usize> {
        let mut v = vec![n_agents * (observation_dim(k) + action_dim(k))];
        v.extend(self.hidden());
        v.push(1);
        v
    }
}

/// Actor output plus zero-mean Gaussian noise, clamped to `[0,1]`.
pub fn explore_action(
    actor: &Mlp,
    observation: &Observation,
    noise_scale: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, NeuralError> {
    let u = actor.forward_one(&observation.0)?;
    let mut a: Vec<f64> = u.iter().map(|&x| unit_interval(x)).collect();
    if noise_scale > 0.0 {
        let normal = Normal::new(0.0, noise_scale).expect("finite positive std");
        for v in &mut a {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    Ok(a)
}

/// Joint experience of all agents for one decision step. Actions are the
/// continuous `[0,1]` policy outputs, before gate thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub reward: f64,
    pub next_observations: Vec<Vec<f64>>,
    pub done: bool,
}

/// Bounded FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample without replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>, TrainError> {
        if batch_size > self.items.len() {
            return Err(TrainError::BufferTooSmall {
                population: self.items.len(),
                batch: batch_size,
            });
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch_size)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// Column-stacked training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Per agent, B × obs_dim.
    pub observations: Vec<Array2<f64>>,
    /// Per agent, B × act_dim.
    pub actions: Vec<Array2<f64>>,
    pub next_observations: Vec<Array2<f64>>,
    pub rewards: Array1<f64>,
    pub dones: Array1<f64>,
}

fn stack_rows(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows.flatten().collect();
    let n = flat.len() / width.max(1);
    Array2::from_shape_vec((n, width), flat).expect("rows share a width")
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let n_agents = ts[0].observations.len();
        let per_agent = |f: &dyn Fn(&Transition) -> &Vec<Vec<f64>>| -> Vec<Array2<f64>> {
            (0..n_agents)
                .map(|i| {
                    let width = f(ts[0])[i].len();
                    stack_rows(ts.iter().map(|t| f(t)[i].clone()), width)
                })
                .collect()
        };
        Batch {
            observations: per_agent(&|t| &t.observations),
            actions: per_agent(&|t| &t.actions),
            next_observations: per_agent(&|t| &t.next_observations),
            rewards: ts.iter().map(|t| t.reward).collect(),
            dones: ts.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

fn joint(blocks: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(1), &views).expect("blocks share a row count")
}

/// Networks and optimizer state of one training agent.
#[derive(Debug, Clone)]
pub struct AgentNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentLoss {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Maddpg {
    pub agents: Vec<AgentNets>,
    pub k_neighbors: usize,
    pub gamma: f64,
    pub tau: f64,
    pub reward_scale: f64,
    pub max_grad_norm: f64,
}

fn clip(grads: &mut Gradients, max_norm: f64) {
    if max_norm > 0.0 {
        let norm = grads.norm();
        if norm > max_norm {
            grads.scale(max_norm / norm);
        }
    }
}

impl Maddpg {
    pub fn new(n_agents: usize, k: usize, settings: &TrainSettings, rng: &mut impl Rng) -> Self {
        let agents = (0..n_agents)
            .map(|_| {
                let actor = Mlp::random(&settings.actor_sizes(k), Head::Tanh, rng);
                let critic = Mlp::random(&settings.critic_sizes(k, n_agents), Head::Identity, rng);
                AgentNets {
                    actor_opt: Adam::new(&actor, settings.actor_lr),
                    critic_opt: Adam::new(&critic, settings.critic_lr),
                    target_actor: actor.clone(),
                    target_critic: critic.clone(),
                    actor,
                    critic,
                }
            })
            .collect();
        Maddpg {
            agents,
            k_neighbors: k,
            gamma: settings.gamma,
            tau: settings.tau,
            reward_scale: settings.reward_scale,
            max_grad_norm: settings.max_grad_norm,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn actors(&self) -> Vec<Mlp> {
        self.agents.iter().map(|a| a.actor.clone()).collect()
    }

    fn act_dim(&self) -> usize {
        action_dim(self.k_neighbors)
    }

    /// Bootstrapped critic targets `y_i = s·r + γ(1−done)·Q'_i(o', a')`, one
    /// vector per agent, with `a'` from the target actors. Reads target
    /// networks only.
    pub fn critic_targets(&self, batch: &Batch) -> Result<Vec<Array1<f64>>, NeuralError> {
        let next_actions = self
            .agents
            .iter()
            .zip(&batch.next_observations)
            .map(|(agent, obs)| Ok(agent.target_actor.forward(obs.view())?.0.mapv(unit_interval)))
            .collect::<Result<Vec<_>, NeuralError>>()?;
        let mut blocks = batch.next_observations.clone();
        blocks.extend(next_actions);
        let input = joint(&blocks);
        self.agents
            .iter()
            .map(|agent| {
                let q_next = agent.target_critic.forward(input.view())?.0.column(0).to_owned();
                let not_done = batch.dones.mapv(|d| 1.0 - d);
                Ok(&batch.rewards * self.reward_scale + &(q_next * not_done) * self.gamma)
            })
            .collect()
    }

    fn critic_input(&self, batch: &Batch) -> Array2<f64> {
        let mut blocks = batch.observations.clone();
        blocks.extend(batch.actions.iter().cloned());
        joint(&blocks)
    }

    /// Mean squared error of critic `agent` against `targets` and its gradient.
    pub fn critic_loss_gradients(
        &self,
        agent: usize,
        batch: &Batch,
        targets: &Array1<f64>,
    ) -> Result<(f64, Gradients), NeuralError> {
        let critic = &self.agents[agent].critic;
        let (q, cache) = critic.forward(self.critic_input(batch).view())?;
        let resid = &q.column(0) - targets;
        let b = batch.len() as f64;
        let loss = resid.mapv(|r| r * r).sum() / b;
        let grad_out = resid.mapv(|r| 2.0 * r / b).insert_axis(Axis(1));
        let (grads, _) = critic.backward(&cache, grad_out.view())?;
        Ok((loss, grads))
    }

    /// Deterministic policy gradient for actor `agent` through its live
    /// critic, with the agent's own action replaced by its current output.
    /// Returns `(−mean Q, gradient of −mean Q)`.
    pub fn actor_loss_gradients(&self, agent: usize, batch: &Batch) -> Result<(f64, Gradients), NeuralError> {
        let nets = &self.agents[agent];
        let (u, actor_cache) = nets.actor.forward(batch.observations[agent].view())?;
        let mut actions = batch.actions.clone();
        actions[agent] = u.mapv(unit_interval);
        let mut blocks = batch.observations.clone();
        blocks.extend(actions);
        let (q, critic_cache) = nets.critic.forward(joint(&blocks).view())?;
        let b = batch.len() as f64;
        let loss = -q.sum() / b;
        let grad_q = Array2::from_elem((batch.len(), 1), -1.0 / b);
        let (_, grad_input) = nets.critic.backward(&critic_cache, grad_q.view())?;
        let obs_width: usize = batch.observations.iter().map(|o| o.ncols()).sum();
        let start = obs_width + agent * self.act_dim();
        let grad_u = grad_input.slice(s![.., start..start + self.act_dim()]).mapv(|g| 0.5 * g);
        let (grads, _) = nets.actor.backward(&actor_cache, grad_u.view())?;
        Ok((loss, grads))
    }

    /// Critic then actor update for every agent, followed by target blending.
    pub fn train_on_batch(&mut self, batch: &Batch) -> Result<Vec<AgentLoss>, TrainError> {
        let targets = self.critic_targets(batch)?;
        let mut losses = Vec::with_capacity(self.agents.len());
        for i in 0..self.agents.len() {
            let (critic_loss, mut cg) = self.critic_loss_gradients(i, batch, &targets[i])?;
            if !critic_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    agent: i,
                    critic_loss,
                    actor_loss: f64::NAN,
                });
            }
            clip(&mut cg, self.max_grad_norm);
            let nets = &mut self.agents[i];
            nets.critic_opt.apply(&mut nets.critic, &cg)?;

            let (actor_loss, mut ag) = self.actor_loss_gradients(i, batch)?;
            if !actor_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    agent: i,
                    critic_loss,
                    actor_loss,
                });
            }
            clip(&mut ag, self.max_grad_norm);
            let nets = &mut self.agents[i];
            nets.actor_opt.apply(&mut nets.actor, &ag)?;
            losses.push(AgentLoss {
                critic_loss,
                actor_loss,
            });
        }
        for nets in &mut self.agents {
            soft_update(&mut nets.target_critic, &nets.critic, self.tau)?;
            soft_update(&mut nets.target_actor, &nets.actor, self.tau)?;
        }
        Ok(losses)
    }

    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        batch_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<AgentLoss>, TrainError> {
        let sample = buffer.sample(batch_size, rng)?;
        self.train_on_batch(&Batch::from_transitions(&sample))
    }
}

/// Per-episode return split into its two reward terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReturn {
    pub episode: usize,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
}

impl EpisodeReturn {
    pub fn total(&self) -> f64 {
        self.r1 + self.r2
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub learner: Maddpg,
    pub curve: Vec<EpisodeReturn>,
}

/// Runs the full episode loop. `on_checkpoint(learner, episodes_done)` is
/// called every `checkpoint_every` episodes.
pub fn run_training<F>(
    world: &WorldConfig,
    settings: &TrainSettings,
    mut on_checkpoint: F,
) -> Result<TrainingOutcome, Error>
where
    F: FnMut(&Maddpg, usize) -> Result<(), Error>,
{
    world.validate()?;
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let n = world.n_robots;
    let k = world.k_neighbors;
    let mut learner = Maddpg::new(n, k, settings, &mut rng);
    let mut buffer = ReplayBuffer::new(settings.replay_capacity);
    let mut curve = Vec::with_capacity(settings.episodes);
    let warmup = settings.warmup().max(settings.batch_size);
    let variant = settings.variant;

    for episode in 0..settings.episodes {
        let noise = settings.noise_scale(episode);
        let mut ep = Episode::new(world, rng.random())?;
        let mut observations = ep.observations(variant);
        while !ep.is_done() {
            let actions = learner
                .agents
                .iter()
                .zip(&observations)
                .map(|(nets, o)| explore_action(&nets.actor, o, noise, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let decoded: Vec<Action> = actions.iter().map(|a| Action::from_unit(a)).collect();
            let report = ep.step_learned(variant, &decoded).map_err(TrainError::from)?;
            let next = ep.observations(variant);
            buffer.push(Transition {
                observations: observations.iter().map(|o| o.0.clone()).collect(),
                actions,
                reward: report.outcome.reward,
                next_observations: next.iter().map(|o| o.0.clone()).collect(),
                done: ep.world.all_completed(),
            });
            observations = next;
            if buffer.len() >= warmup {
                learner.train_step(&buffer, settings.batch_size, &mut rng)?;
            }
        }
        curve.push(EpisodeReturn {
            episode,
            r1: ep.completion_return,
            r2: ep.motion_return,
        });
        let done = episode + 1;
        if settings.checkpoint_every > 0 && done % settings.checkpoint_every == 0 {
            on_checkpoint(&learner, done)?;
        }
    }
    Ok(TrainingOutcome { learner, curve })
}

/// Actor index for each of `n_eval` robots when `n_trained` actors exist.
pub fn deploy_actors(n_trained: usize, n_eval: usize) -> Vec<usize> {
    assert!(n_trained > 0, "at least one trained actor is required");
    (0..n_eval).map(|i| i % n_trained).collect()
}

/// Runs one greedy-or-custom episode and returns it when finished.
pub fn run_policy_episode<P>(
    world: &WorldConfig,
    seed: u64,
    variant: Variant,
    mut policy: P,
) -> Result<Episode, Error>
where
    P: FnMut(usize, &Observation) -> Result<Action, Error>,
{
    let mut ep = Episode::new(world, seed)?;
    while !ep.is_done() {
        let actions = ep
            .observations(variant)
            .iter()
            .enumerate()
            .map(|(i, o)| policy(i, o))
            .collect::<Result<Vec<_>, _>>()?;
        ep.step_learned(variant, &actions)?;
    }
    Ok(ep)
}

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub run_seed: u64,
    pub episode: usize,
    pub config_hash: String,
    pub variant: Variant,
    pub n_agents: usize,
    pub k_neighbors: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub weight_format_version: u32,
}

const NETWORK_FILES: [&str; 4] = ["actor", "critic", "target_actor", "target_critic"];

fn weight_path(dir: &Path, agent: usize, net: &str) -> std::path::PathBuf {
    dir.join(format!("agent{agent}_{net}.bin"))
}

/// Writes every network plus a manifest. The directory appears only once
/// complete; an existing checkpoint at `dir` is replaced.
pub fn save_checkpoint(dir: &Path, learner: &Maddpg, manifest: &CheckpointManifest) -> Result<(), Error> {
    let partial = dir.with_extension("partial");
    if partial.exists() {
        fs::remove_dir_all(&partial)?;
    }
    fs::create_dir_all(&partial)?;
    for (i, nets) in learner.agents.iter().enumerate() {
        for (name, net) in NETWORK_FILES
            .iter()
            .zip([&nets.actor, &nets.critic, &nets.target_actor, &nets.target_critic])
        {
            let mut w = BufWriter::new(fs::File::create(weight_path(&partial, i, name))?);
            net.save(&mut w)?;
            w.flush()?;
        }
    }
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(partial.join(CHECKPOINT_MANIFEST), text)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&partial, dir)?;
    Ok(())
}

/// Trained actors loaded for deployment.
#[derive(Debug, Clone)]
pub struct ActorSet {
    pub variant: Variant,
    pub k_neighbors: usize,
    pub actors: Vec<Mlp>,
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest, Error> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Loads the live actors, checking each weight-file header against the
/// architecture recorded in the manifest.
pub fn load_actor_set(dir: &Path) -> Result<ActorSet, Error> {
    let m = read_checkpoint_manifest(dir)?;
    let settings = TrainSettings {
        hidden_layers: m.hidden_layers,
        hidden_units: m.hidden_units,
        ..TrainSettings::default()
    };
    let sizes = settings.actor_sizes(m.k_neighbors);
    let actors = (0..m.n_agents)
        .map(|i| {
            let path = weight_path(dir, i, "actor");
            let file = fs::File::open(&path)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
            Ok(Mlp::load_expecting(&mut BufReader::new(file), &sizes, Head::Tanh)?)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    if actors.is_empty() {
        return Err(Error::Checkpoint("checkpoint holds no actors".into()));
    }
    Ok(ActorSet {
        variant: m.variant,
        k_neighbors: m.k_neighbors,
        actors,
    })
}
