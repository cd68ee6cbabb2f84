use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::TradingEnv;
use crate::error::{CrnError, Result};
use crate::neural::{clip_grad_norm, Adam, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub rollout: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 10,
            rollout: 2048,
            minibatch: 64,
            lr: 3e-4,
            max_grad_norm: 0.5,
            init_log_std: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(CrnError::Config("PPO clip must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(CrnError::Config("discount and GAE lambda must lie in [0, 1]".into()));
        }
        if self.epochs == 0 || self.rollout == 0 || self.minibatch == 0 {
            return Err(CrnError::Config("PPO epochs, rollout and minibatch must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(CrnError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal Gaussian policy with a state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

impl GaussianPolicy {
    pub fn sample<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<([f64; 2], f64)> {
        let mean = self.mean.predict_one(obs)?;
        let mut a = [0.0; 2];
        for (j, x) in a.iter_mut().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            *x = mean[j] + self.log_std[j].exp() * eps;
        }
        let lp = gaussian_log_prob(&a, &mean, &self.log_std);
        Ok((a, lp))
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<[f64; 2]> {
        let m = self.mean.predict_one(obs)?;
        Ok([m[0], m[1]])
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut p = self.mean.params().to_vec();
        p.extend_from_slice(&self.log_std);
        p
    }

    fn set_flat_params(&mut self, p: &[f64]) {
        let n = self.mean.param_count();
        self.mean.params_mut().copy_from_slice(&p[..n]);
        self.log_std.copy_from_slice(&p[n..]);
    }
}

/// On-policy samples with GAE advantages and value targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<[f64; 2]>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Returns of episodes that finished inside this rollout.
    pub episode_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// GAE: `δ_k = r_k + γ(1−d_k)V_{k+1} − V_k`, `A_k = δ_k + γλ(1−d_k)A_{k+1}`.
/// `last_value` bootstraps the step after the final sample.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for k in (0..n).rev() {
        let next_value = if k + 1 < n { values[k + 1] } else { last_value };
        let live = if dones[k] { 0.0 } else { 1.0 };
        let delta = rewards[k] + gamma * live * next_value - values[k];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[k] = next_adv;
    }
    adv
}

/// Running state of a rollout across calls: the pending observation and the
/// return accumulated by the current episode.
#[derive(Debug, Clone)]
pub struct RolloutState {
    pub obs: Vec<f64>,
    pub episode_return: f64,
}

impl RolloutState {
    pub fn start(env: &mut TradingEnv) -> Self {
        RolloutState {
            obs: env.reset(),
            episode_return: 0.0,
        }
    }
}

pub fn ppo_collect<R: Rng>(
    env: &mut TradingEnv,
    state: &mut RolloutState,
    policy: &GaussianPolicy,
    value: &Mlp,
    length: usize,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<RolloutBatch> {
    let mut b = RolloutBatch::default();
    for _ in 0..length {
        let (action, lp) = policy.sample(&state.obs, rng)?;
        let v = value.predict_one(&state.obs)?[0];
        let step = env.step(action)?;
        b.obs.push(std::mem::replace(&mut state.obs, step.observation));
        b.actions.push(action);
        b.log_probs.push(lp);
        b.values.push(v);
        b.rewards.push(step.reward);
        b.dones.push(step.done);
        state.episode_return += step.reward;
        if step.done {
            b.episode_returns.push(state.episode_return);
            state.episode_return = 0.0;
            state.obs = env.reset();
        }
    }
    let last_value = value.predict_one(&state.obs)?[0];
    b.advantages = compute_gae(&b.rewards, &b.values, &b.dones, last_value, cfg.gamma, cfg.gae_lambda);
    b.returns = b.advantages.iter().zip(&b.values).map(|(a, v)| a + v).collect();
    Ok(b)
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoDiagnostics {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

pub struct PpoOptimizers {
    pub policy: Adam,
    pub value: Adam,
}

impl PpoOptimizers {
    pub fn new(policy: &GaussianPolicy, value: &Mlp, lr: f64) -> Self {
        PpoOptimizers {
            policy: Adam::new(policy.mean.param_count() + policy.log_std.len(), lr),
            value: Adam::new(value.param_count(), lr),
        }
    }
}

fn rows(obs: &[Vec<f64>], idx: &[usize]) -> Array2<f64> {
    let w = obs[idx[0]].len();
    Array2::from_shape_fn((idx.len(), w), |(i, j)| obs[idx[i]][j])
}

/// Clipped-surrogate policy update and value regression over `cfg.epochs`
/// shuffled passes. Advantages are normalised to zero mean and unit
/// variance first.
pub fn ppo_update<R: Rng>(
    policy: &mut GaussianPolicy,
    value: &mut Mlp,
    opt: &mut PpoOptimizers,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoDiagnostics> {
    let n = batch.len();
    if n == 0 {
        return Err(CrnError::Contract("empty rollout batch".into()));
    }
    let mean_adv = batch.advantages.iter().sum::<f64>() / n as f64;
    let std_adv = (batch.advantages.iter().map(|a| (a - mean_adv).powi(2)).sum::<f64>() / n as f64).sqrt();
    let adv: Vec<f64> = batch.advantages.iter().map(|a| (a - mean_adv) / (std_adv + 1e-8)).collect();

    let mut idx: Vec<usize> = (0..n).collect();
    let mut ratio_sum = 0.0;
    let mut clipped = 0usize;
    let mut seen = 0usize;
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut minibatches = 0usize;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(cfg.minibatch) {
            let m = chunk.len() as f64;
            let x = rows(&batch.obs, chunk);

            let cache = policy.mean.forward(&x)?;
            let means = cache.output();
            let std: Vec<f64> = policy.log_std.iter().map(|l| l.exp()).collect();
            let mut d_mean = Array2::zeros(means.dim());
            let mut d_log_std = vec![0.0; policy.log_std.len()];
            let mut loss = 0.0;
            for (i, &k) in chunk.iter().enumerate() {
                let mu = [means[[i, 0]], means[[i, 1]]];
                let a = &batch.actions[k];
                let lp = gaussian_log_prob(a, &mu, &policy.log_std);
                let ratio = (lp - batch.log_probs[k]).exp();
                let a_k = adv[k];
                loss -= clipped_surrogate(ratio, a_k, cfg.clip) / m;
                ratio_sum += ratio;
                seen += 1;
                if (ratio - 1.0).abs() > cfg.clip {
                    clipped += 1;
                }
                let active = !((a_k > 0.0 && ratio > 1.0 + cfg.clip) || (a_k < 0.0 && ratio < 1.0 - cfg.clip));
                if active {
                    let d_lp = -a_k * ratio / m;
                    for j in 0..2 {
                        let z = (a[j] - mu[j]) / std[j];
                        d_mean[[i, j]] = d_lp * z / std[j];
                        d_log_std[j] += d_lp * (z * z - 1.0);
                    }
                }
            }
            if !loss.is_finite() {
                return Err(CrnError::Training("non-finite policy loss".into()));
            }
            policy_loss += loss;
            let (mut grad, _) = policy.mean.backward(&cache, &d_mean)?;
            grad.extend_from_slice(&d_log_std);
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            let mut flat = policy.flat_params();
            opt.policy.step(&mut flat, &grad)?;
            policy.set_flat_params(&flat);

            let vcache = value.forward(&x)?;
            let v = vcache.output();
            let mut dv = Array2::zeros(v.dim());
            let mut vl = 0.0;
            for (i, &k) in chunk.iter().enumerate() {
                let diff = v[[i, 0]] - batch.returns[k];
                vl += 0.5 * diff * diff / m;
                dv[[i, 0]] = diff / m;
            }
            if !vl.is_finite() {
                return Err(CrnError::Training("non-finite value loss".into()));
            }
            value_loss += vl;
            let (mut vgrad, _) = value.backward(&vcache, &dv)?;
            clip_grad_norm(&mut vgrad, cfg.max_grad_norm);
            opt.value.step(value.params_mut(), &vgrad)?;
            minibatches += 1;
        }
    }
    Ok(PpoDiagnostics {
        mean_ratio: ratio_sum / seen as f64,
        clip_fraction: clipped as f64 / seen as f64,
        policy_loss: policy_loss / minibatches as f64,
        value_loss: value_loss / minibatches as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, NetSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gae_base_cases() {
        let a = compute_gae(&[1.0], &[0.5], &[false], 2.0, 0.99, 0.95);
        assert!((a[0] - (1.0 + 0.99 * 2.0 - 0.5)).abs() < 1e-12);
        let d = compute_gae(&[1.0, 1.0], &[0.5, 0.5], &[true, false], 9.0, 0.99, 0.95);
        assert!((d[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn surrogate_clipping() {
        assert!((clipped_surrogate(2.0, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_surrogate(1.0, 0.7, 0.2) - 0.7).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
    }

    fn nets() -> (GaussianPolicy, Mlp) {
        let policy = GaussianPolicy {
            mean: Mlp::new(NetSpec::mlp(3, &[8], 2, Activation::Tanh, Activation::Linear, 1)).unwrap(),
            log_std: vec![0.0, 0.0],
        };
        let value = Mlp::new(NetSpec::mlp(3, &[8], 1, Activation::Tanh, Activation::Linear, 2)).unwrap();
        (policy, value)
    }

    fn batch(policy: &GaussianPolicy, adv: f64) -> RolloutBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = RolloutBatch::default();
        for i in 0..32 {
            let obs = vec![i as f64 / 32.0, 0.5, -0.2];
            let (a, lp) = policy.sample(&obs, &mut rng).unwrap();
            b.obs.push(obs);
            b.actions.push(a);
            b.log_probs.push(lp);
            b.values.push(0.0);
            b.rewards.push(0.0);
            b.dones.push(false);
            b.advantages.push(adv);
            b.returns.push(0.0);
        }
        b
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let (mut policy, mut value) = nets();
        let before = policy.clone();
        let b = batch(&policy, 0.0);
        let cfg = PpoConfig::default();
        let mut opt = PpoOptimizers::new(&policy, &value, cfg.lr);
        let d = ppo_update(&mut policy, &mut value, &mut opt, &b, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(policy, before);
        assert_eq!(d.clip_fraction, 0.0);
        assert!((d.mean_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_minibatch_has_unit_ratio_and_updates_move_policy() {
        let (mut policy, mut value) = nets();
        let mut b = batch(&policy, 0.0);
        for (i, a) in b.advantages.iter_mut().enumerate() {
            *a = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let cfg = PpoConfig { epochs: 1, minibatch: 32, ..PpoConfig::default() };
        let mut opt = PpoOptimizers::new(&policy, &value, cfg.lr);
        let before = policy.clone();
        let d = ppo_update(&mut policy, &mut value, &mut opt, &b, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!((d.mean_ratio - 1.0).abs() < 1e-12);
        // Identity ratio: the surrogate is the mean (normalised) advantage, 0 here.
        assert!(d.policy_loss.abs() < 1e-12);
        assert_ne!(policy, before);
        assert!((0.0..=1.0).contains(&d.clip_fraction));
    }

    #[test]
    fn log_prob_matches_closed_form() {
        let lp = gaussian_log_prob(&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert!((lp + (2.0 * PI).ln()).abs() < 1e-12);
    }
}
