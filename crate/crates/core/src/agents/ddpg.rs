use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::replay::{ReplayBatch, ReplayBuffer};
use crate::error::{CrnError, Result};
use crate::neural::{Adam, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub capacity: usize,
    pub batch: usize,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub noise_sigma: f64,
    pub gamma: f64,
    /// Steps of uniformly random actions before learning begins.
    pub learning_starts: usize,
    /// Steps between logged diagnostics.
    pub log_interval: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            capacity: 100_000,
            batch: 64,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            noise_sigma: 0.1,
            gamma: 0.99,
            learning_starts: 100,
            log_interval: 2048,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(CrnError::Config("soft-update tau must lie in (0, 1]".into()));
        }
        if self.batch == 0 || self.capacity < self.batch {
            return Err(CrnError::Config("replay capacity must be at least the batch size".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CrnError::Config("discount must lie in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return Err(CrnError::Config("noise and learning rates must be non-negative / positive".into()));
        }
        if self.log_interval == 0 {
            return Err(CrnError::Config("log interval must be positive".into()));
        }
        Ok(())
    }
}

/// Actor output plus Gaussian noise, clipped to `[-1, 1]`.
pub fn ddpg_act<R: Rng>(actor: &Mlp, obs: &[f64], sigma: f64, rng: &mut R) -> Result<[f64; 2]> {
    let out = actor.predict_one(obs)?;
    let mut a = [out[0], out[1]];
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| CrnError::Config(e.to_string()))?;
        for x in &mut a {
            *x += noise.sample(rng);
        }
    }
    Ok(a.map(|x| x.clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

impl DdpgAgent {
    pub fn new(actor: Mlp, critic: Mlp, cfg: &DdpgConfig) -> Self {
        DdpgAgent {
            actor_opt: Adam::new(actor.param_count(), cfg.actor_lr),
            critic_opt: Adam::new(critic.param_count(), cfg.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        }
    }
}

fn with_actions(obs: &Array2<f64>, actions: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(1), &[obs.view(), actions.view()]).expect("same row count")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DdpgDiagnostics {
    pub critic_loss: f64,
    pub actor_q: f64,
}

/// One gradient step for critic and actor on `batch`, then soft target updates.
pub fn ddpg_update(agent: &mut DdpgAgent, batch: &ReplayBatch, cfg: &DdpgConfig) -> Result<DdpgDiagnostics> {
    let n = batch.len();
    if n == 0 {
        return Err(CrnError::Contract("empty DDPG batch".into()));
    }
    let w = batch.obs.ncols();
    let m = n as f64;
    let obs = &batch.obs;

    let next_act = agent.actor_target.predict(&batch.next_obs)?;
    let q_next = agent.critic_target.predict(&with_actions(&batch.next_obs, &next_act))?;
    let target: Vec<f64> = (0..n)
        .map(|i| batch.rewards[i] + if batch.dones[i] { 0.0 } else { cfg.gamma * q_next[[i, 0]] })
        .collect();

    let cache = agent.critic.forward(&with_actions(obs, &batch.actions))?;
    let q = cache.output();
    let mut dq = Array2::zeros((n, 1));
    let mut critic_loss = 0.0;
    for i in 0..n {
        let diff = q[[i, 0]] - target[i];
        critic_loss += 0.5 * diff * diff / m;
        dq[[i, 0]] = diff / m;
    }
    if !critic_loss.is_finite() {
        return Err(CrnError::Training("non-finite critic loss".into()));
    }
    let (cgrad, _) = agent.critic.backward(&cache, &dq)?;
    agent.critic_opt.step(agent.critic.params_mut(), &cgrad)?;

    let acache = agent.actor.forward(obs)?;
    let mu = acache.output().clone();
    let qcache = agent.critic.forward(&with_actions(obs, &mu))?;
    let actor_q = qcache.output().iter().sum::<f64>() / m;
    if !actor_q.is_finite() {
        return Err(CrnError::Training("non-finite actor objective".into()));
    }
    let (_, dinput) = agent.critic.backward(&qcache, &Array2::from_elem((n, 1), -1.0 / m))?;
    let d_mu = dinput.slice(ndarray::s![.., w..]).to_owned();
    let (agrad, _) = agent.actor.backward(&acache, &d_mu)?;
    agent.actor_opt.step(agent.actor.params_mut(), &agrad)?;

    agent.critic_target.soft_update_from(&agent.critic, cfg.tau)?;
    agent.actor_target.soft_update_from(&agent.actor, cfg.tau)?;
    Ok(DdpgDiagnostics { critic_loss, actor_q })
}

/// Samples a batch and updates when the buffer holds enough transitions.
pub fn ddpg_train_step<R: Rng>(agent: &mut DdpgAgent, buffer: &ReplayBuffer, cfg: &DdpgConfig, rng: &mut R) -> Result<Option<DdpgDiagnostics>> {
    if buffer.len() < cfg.batch {
        return Ok(None);
    }
    let batch = buffer.sample(rng, cfg.batch)?;
    ddpg_update(agent, &batch, cfg).map(Some)
}
