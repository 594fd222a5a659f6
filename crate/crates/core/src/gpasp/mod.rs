//! Attention-encoder PPO learner with a self-predictive latent objective
//! and gradient-norm loss balancing.

mod agent;
mod network;

pub use agent::{Act, ActMode, Agent, LossReport, Step, TrainLogRow, Trajectory};
pub use network::{encode, policy_logits, transition, value, LatentVars, Network, LOGVAR_MAX, LOGVAR_MIN, MASK_LOGIT};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradNormConfig {
    pub initial_lambda: f64,
    pub eta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub eps: f64,
}

impl Default for GradNormConfig {
    fn default() -> Self {
        GradNormConfig {
            initial_lambda: 1.0,
            eta: 0.5,
            lambda_min: 0.01,
            lambda_max: 10.0,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpaspConfig {
    /// Observation window length L.
    pub history_len: usize,
    /// Extra pure-noise channels appended to each observation row.
    pub noise_channels: usize,
    pub heads: usize,
    pub d_k: usize,
    /// Width of the attention output projection.
    pub d_model: usize,
    pub d_z: usize,
    pub hidden: usize,
    /// Hidden layers of the encoder MLP.
    pub mlp_layers: usize,
    /// Hidden layers of the policy, value and transition MLPs.
    pub head_layers: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
    pub gradnorm: GradNormConfig,
    /// EMA factor of the target networks.
    pub ema_beta: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Fraction of `learning_rate` reached at the end of a training run;
    /// the rate falls linearly from 1.0. 1.0 keeps it constant.
    pub lr_final_fraction: f64,
    pub momentum: f64,
    /// Global gradient-norm clip; disabled when absent.
    pub max_grad_norm: Option<f64>,
    pub epochs: usize,
    pub minibatch: usize,
    pub seed: u64,
}

impl Default for GpaspConfig {
    fn default() -> Self {
        GpaspConfig {
            history_len: 8,
            noise_channels: 0,
            heads: 2,
            d_k: 16,
            d_model: 32,
            d_z: 16,
            hidden: 64,
            mlp_layers: 2,
            head_layers: 2,
            gamma: 0.95,
            gae_lambda: 0.9,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            normalize_advantages: true,
            gradnorm: GradNormConfig::default(),
            ema_beta: 0.9,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.01,
            lr_final_fraction: 1.0,
            momentum: 0.9,
            max_grad_norm: Some(1.0),
            epochs: 2,
            minibatch: 64,
            seed: 7,
        }
    }
}

impl GpaspConfig {
    /// Smaller network used for the desk-scale training runs.
    pub fn compact() -> Self {
        GpaspConfig {
            history_len: 4,
            d_k: 8,
            d_model: 16,
            d_z: 8,
            hidden: 32,
            mlp_layers: 1,
            head_layers: 1,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            lr_final_fraction: 0.1,
            ..GpaspConfig::default()
        }
    }
}

/// z = μ + exp(½ log σ²) ⊙ ε, with ε held constant.
pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, eps: Var) -> Var {
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let noise = g.mul(std, eps);
    g.add(mu, noise)
}

/// Generalised advantage estimates and value targets.
///
/// `next_values[t]` is the bootstrap value of the successor state; a done
/// flag drops the bootstrap and cuts the recursion.
pub fn gae(rewards: &[f64], values: &[f64], next_values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_values[t] * cont - values[t];
        running = delta + gamma * lambda * cont * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Scalar PPO loss terms for one batch (graph handles).
#[derive(Debug, Clone, Copy)]
pub struct PpoLosses {
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    /// policy + c_v·value − c_e·entropy.
    pub total: Var,
}

/// Clipped surrogate, squared value error and policy entropy.
///
/// `logits` are already masked; `actions[b]` indexes the taken path.
#[allow(clippy::too_many_arguments)]
pub fn ppo_losses(
    g: &mut Graph,
    logits: Var,
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    values: Var,
    returns: &[f64],
    cfg: &GpaspConfig,
) -> PpoLosses {
    let b = actions.len();
    let col = |v: &[f64]| crate::autodiff::Tensor { rows: v.len(), cols: 1, data: v.to_vec() };
    let logp_all = g.log_softmax_rows(logits);
    let logp = g.gather(logp_all, actions);
    let old = g.leaf(col(old_log_probs));
    let diff = g.sub(logp, old);
    let ratio = g.exp(diff);
    let adv = g.leaf(col(advantages));
    let s1 = g.mul(ratio, adv);
    let clipped = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let s2 = g.mul(clipped, adv);
    let m = g.min(s1, s2);
    let surrogate = g.mean(m);
    let policy = g.neg(surrogate);

    let target = g.leaf(col(returns));
    let err = g.sub(values, target);
    let sq = g.square(err);
    let vmean = g.mean(sq);
    let value = g.scale(vmean, 0.5);

    let probs = g.softmax_rows(logits);
    let plogp = g.mul(probs, logp_all);
    let neg_h = g.sum(plogp);
    let entropy = g.scale(neg_h, -1.0 / b as f64);

    let cv = g.scale(value, cfg.value_coef);
    let ce = g.scale(entropy, cfg.entropy_coef);
    let t = g.add(policy, cv);
    let total = g.sub(t, ce);
    PpoLosses {
        policy,
        value,
        entropy,
        total,
    }
}

/// Batch mean of ½ Σ_i (log σ̂²/σ̄² + (σ̄² + (μ̄−μ̂)²)/σ̂² − 1).
///
/// The target (μ̄, log σ̄²) must be constant leaves.
pub fn aux_kl(g: &mut Graph, pred: LatentVars, target: LatentVars) -> Var {
    let rows = g.shape(pred.mu).0;
    let log_ratio = g.sub(pred.logvar, target.logvar);
    let var_pred = g.exp(pred.logvar);
    let var_tgt = g.exp(target.logvar);
    let gap = g.sub(target.mu, pred.mu);
    let gap2 = g.square(gap);
    let num = g.add(var_tgt, gap2);
    let frac = g.div(num, var_pred);
    let s = g.add(log_ratio, frac);
    let s = g.add_scalar(s, -1.0);
    let total = g.sum(s);
    g.scale(total, 0.5 / rows as f64)
}

/// Scalar form of [`aux_kl`] for a single row.
pub fn aux_kl_value(mu_hat: &[f64], logvar_hat: &[f64], mu_bar: &[f64], logvar_bar: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..mu_hat.len() {
        let vh = logvar_hat[i].exp();
        let vb = logvar_bar[i].exp();
        s += logvar_hat[i] - logvar_bar[i] + (vb + (mu_bar[i] - mu_hat[i]).powi(2)) / vh - 1.0;
    }
    0.5 * s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNormState {
    pub lambda: f64,
    pub eta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub eps: f64,
}

impl From<&GradNormConfig> for GradNormState {
    fn from(c: &GradNormConfig) -> Self {
        GradNormState {
            lambda: c.initial_lambda.clamp(c.lambda_min, c.lambda_max),
            eta: c.eta,
            lambda_min: c.lambda_min,
            lambda_max: c.lambda_max,
            eps: c.eps,
        }
    }
}

/// λ ← clip(λ·(G_RL/(G_aux+ε))^η, λ_min, λ_max).
pub fn gradnorm_update(state: &mut GradNormState, g_rl: f64, g_aux: f64) -> f64 {
    let ratio = g_rl / (g_aux + state.eps);
    let next = state.lambda * ratio.powf(state.eta);
    state.lambda = if next.is_finite() {
        next.clamp(state.lambda_min, state.lambda_max)
    } else {
        state.lambda_max
    };
    state.lambda
}

/// target ← β·target + (1−β)·online, elementwise.
pub fn ema_update(target: &mut Network, online: &Network, beta: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::Checkpoint("EMA target and online networks differ in shape".into()));
    }
    for (t, o) in target.tensors.iter_mut().zip(&online.tensors) {
        for (a, b) in t.data.iter_mut().zip(&o.data) {
            *a = beta * *a + (1.0 - beta) * b;
        }
    }
    Ok(())
}
