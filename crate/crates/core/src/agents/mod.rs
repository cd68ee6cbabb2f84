//! PPO and DDPG agents over the two-channel action interface.

pub mod ddpg;
pub mod ppo;
pub mod replay;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::env::decode_action;
use crate::env::{TradingEnv, TradeRecord};
use crate::error::{CrnError, Result};
use crate::neural::{Activation, Mlp, NetSpec};
use ddpg::{ddpg_act, ddpg_train_step, DdpgAgent, DdpgConfig};
use ppo::{ppo_collect, ppo_update, GaussianPolicy, PpoConfig, PpoOptimizers, RolloutState};
use replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    Ddpg,
}

impl Algorithm {
    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Ppo => "PPO",
            Algorithm::Ddpg => "DDPG",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = CrnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ppo" => Ok(Algorithm::Ppo),
            "ddpg" => Ok(Algorithm::Ddpg),
            _ => Err(CrnError::Config(format!("unknown algorithm `{s}`"))),
        }
    }
}

/// Hidden layers shared by every network of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl NetConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(CrnError::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub ppo_net: NetConfig,
    pub ddpg_net: NetConfig,
    pub ppo: PpoConfig,
    pub ddpg: DdpgConfig,
    /// Training episode length in rows, started at random offsets; `None`
    /// trains on full passes over the training rows.
    pub train_window: Option<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            ppo_net: NetConfig {
                hidden: vec![64, 64],
                activation: Activation::Tanh,
            },
            ddpg_net: NetConfig {
                hidden: vec![64, 64],
                activation: Activation::Relu,
            },
            ppo: PpoConfig::default(),
            ddpg: DdpgConfig::default(),
            train_window: Some(60),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo_net.validate()?;
        self.ddpg_net.validate()?;
        if self.train_window.is_some_and(|w| w < 2) {
            return Err(CrnError::Config("training windows need at least two rows".into()));
        }
        self.ppo.validate()?;
        self.ddpg.validate()
    }
}

/// A trained agent reduced to its deterministic evaluation policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum TrainedPolicy {
    Ppo { policy: GaussianPolicy },
    Ddpg { actor: Mlp },
}

impl TrainedPolicy {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            TrainedPolicy::Ppo { .. } => Algorithm::Ppo,
            TrainedPolicy::Ddpg { .. } => Algorithm::Ddpg,
        }
    }

    /// Mean action for PPO, noiseless actor output for DDPG.
    pub fn act(&self, obs: &[f64]) -> Result<[f64; 2]> {
        match self {
            TrainedPolicy::Ppo { policy } => policy.mean_action(obs),
            TrainedPolicy::Ddpg { actor } => {
                let out = actor.predict_one(obs)?;
                Ok([out[0], out[1]])
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: TrainedPolicy = serde_json::from_str(s)?;
        let net = match &p {
            TrainedPolicy::Ppo { policy } => &policy.mean,
            TrainedPolicy::Ddpg { actor } => actor,
        };
        Mlp::from_params(net.spec().clone(), net.params().to_vec())?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CrnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CrnError::io(path, e))?;
        TrainedPolicy::from_json(&text)
    }
}

/// One training-log row: per PPO rollout, or per DDPG logging interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    /// Mean per-step reward over the interval.
    pub mean_reward: f64,
    /// Mean return of episodes finished in the interval.
    pub episode_return: Option<f64>,
    pub clip_fraction: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub critic_loss: Option<f64>,
}

pub fn training_log_csv(rows: &[TrainLogRow]) -> Result<String> {
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "mean_reward", "episode_return", "clip_fraction", "mean_ratio", "critic_loss"])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.mean_reward.to_string(),
            opt(r.episode_return),
            opt(r.clip_fraction),
            opt(r.mean_ratio),
            opt(r.critic_loss),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CrnError::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_training_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    std::fs::write(path, training_log_csv(rows)?).map_err(|e| CrnError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: TrainedPolicy,
    pub log: Vec<TrainLogRow>,
}

fn average(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Trains on `env` for `total_steps` environment steps. Everything random
/// (initial weights, exploration, minibatch order) derives from `seed`.
pub fn train_agent(algorithm: Algorithm, env: &mut TradingEnv, total_steps: usize, seed: u64, cfg: &AgentConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if let Some(w) = cfg.train_window {
        env.sample_windows(w, net_seed(seed, 4))?;
    }
    let out = match algorithm {
        Algorithm::Ppo => train_ppo(env, total_steps, seed, cfg),
        Algorithm::Ddpg => train_ddpg(env, total_steps, seed, cfg),
    };
    env.full_episodes();
    out
}

fn net_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
}

fn train_ppo(env: &mut TradingEnv, total_steps: usize, seed: u64, cfg: &AgentConfig) -> Result<TrainOutput> {
    let pc = &cfg.ppo;
    let dim = env.obs_dim();
    let mut mean = Mlp::new(NetSpec::mlp(dim, &cfg.ppo_net.hidden, 2, cfg.ppo_net.activation, Activation::Linear, net_seed(seed, 1)))?;
    let last = mean.spec().layers() - 1;
    mean.scale_layer(last, 0.01);
    let mut policy = GaussianPolicy {
        mean,
        log_std: vec![pc.init_log_std; 2],
    };
    let mut value = Mlp::new(NetSpec::mlp(dim, &cfg.ppo_net.hidden, 1, cfg.ppo_net.activation, Activation::Linear, net_seed(seed, 2)))?;
    let mut opt = PpoOptimizers::new(&policy, &value, pc.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(net_seed(seed, 3));
    let mut state = RolloutState::start(env);
    let mut log = Vec::new();
    let mut step = 0;
    while step + pc.rollout <= total_steps {
        let batch = ppo_collect(env, &mut state, &policy, &value, pc.rollout, pc, &mut rng)?;
        step += batch.len();
        let diag = ppo_update(&mut policy, &mut value, &mut opt, &batch, pc, &mut rng)?;
        log.push(TrainLogRow {
            step,
            mean_reward: average(&batch.rewards).unwrap_or(0.0),
            episode_return: average(&batch.episode_returns),
            clip_fraction: Some(diag.clip_fraction),
            mean_ratio: Some(diag.mean_ratio),
            critic_loss: Some(diag.value_loss),
        });
    }
    Ok(TrainOutput {
        policy: TrainedPolicy::Ppo { policy },
        log,
    })
}

fn train_ddpg(env: &mut TradingEnv, total_steps: usize, seed: u64, cfg: &AgentConfig) -> Result<TrainOutput> {
    let dc = &cfg.ddpg;
    let dim = env.obs_dim();
    let actor = Mlp::new(NetSpec::mlp(dim, &cfg.ddpg_net.hidden, 2, cfg.ddpg_net.activation, Activation::Tanh, net_seed(seed, 1)))?;
    let critic = Mlp::new(NetSpec::mlp(dim + 2, &cfg.ddpg_net.hidden, 1, cfg.ddpg_net.activation, Activation::Linear, net_seed(seed, 2)))?;
    let mut agent = DdpgAgent::new(actor, critic, dc);
    let mut buffer = ReplayBuffer::new(dc.capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(net_seed(seed, 3));
    let mut obs = env.reset();
    let mut episode_return = 0.0;
    let mut log = Vec::new();
    let mut rewards = Vec::new();
    let mut returns = Vec::new();
    let mut losses = Vec::new();
    for step in 1..=total_steps {
        let action = if step <= dc.learning_starts {
            [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
        } else {
            ddpg_act(&agent.actor, &obs, dc.noise_sigma, &mut rng)?
        };
        let r = env.step(action)?;
        episode_return += r.reward;
        rewards.push(r.reward);
        let next_obs = if r.done {
            returns.push(episode_return);
            episode_return = 0.0;
            env.reset()
        } else {
            r.observation.clone()
        };
        buffer.push(Transition {
            obs: std::mem::replace(&mut obs, next_obs),
            action,
            reward: r.reward,
            next_obs: r.observation,
            done: r.done,
        })?;
        if step > dc.learning_starts {
            if let Some(d) = ddpg_train_step(&mut agent, &buffer, dc, &mut rng)? {
                losses.push(d.critic_loss);
            }
        }
        if step % dc.log_interval == 0 || step == total_steps {
            log.push(TrainLogRow {
                step,
                mean_reward: average(&rewards).unwrap_or(0.0),
                episode_return: average(&returns),
                clip_fraction: None,
                mean_ratio: None,
                critic_loss: average(&losses),
            });
            rewards.clear();
            returns.clear();
            losses.clear();
        }
    }
    Ok(TrainOutput {
        policy: TrainedPolicy::Ddpg { actor: agent.actor },
        log,
    })
}

/// Runs one deterministic episode and returns its trade log.
pub fn evaluate_policy(policy: &TrainedPolicy, env: &mut TradingEnv) -> Result<Vec<TradeRecord>> {
    let mut obs = env.reset();
    loop {
        let step = env.step(policy.act(&obs)?)?;
        obs = step.observation;
        if step.done {
            break;
        }
    }
    Ok(env.take_trade_log())
}
