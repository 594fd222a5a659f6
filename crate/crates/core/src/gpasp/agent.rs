//! Acting, batch preparation, the joint training step and checkpoints.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

use super::network::{encode, policy_logits, transition, value, LatentVars, Network, MASK_LOGIT};
use super::{aux_kl, ema_update, gae, gradnorm_update, ppo_losses, reparameterize, GpaspConfig, GradNormState, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    /// Latent noise used; stored so training can rebuild the same z.
    pub eps: Vec<f64>,
}

/// One decision of one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// Flattened L×d_h window, oldest row first.
    pub obs: Vec<f64>,
    pub up: Vec<bool>,
    pub eps: Vec<f64>,
    pub action: usize,
    pub old_log_prob: f64,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub aux: f64,
    pub total: f64,
    pub lambda: f64,
    pub g_rl: f64,
    pub g_aux: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub update: u64,
    pub episode: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub aux_loss: f64,
    pub lambda: f64,
    pub g_rl: f64,
    pub g_aux: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct OptState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: u64,
}

/// Flattened training samples with advantages and value targets.
#[derive(Debug, Clone, Default)]
struct Batch {
    obs: Vec<Vec<f64>>,
    next_obs: Vec<Vec<f64>>,
    up: Vec<Vec<bool>>,
    eps: Vec<Vec<f64>>,
    actions: Vec<usize>,
    old_log_probs: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub cfg: GpaspConfig,
    pub num_paths: usize,
    /// Feature width d_h of one window row.
    pub obs_dim: usize,
    pub online: Network,
    pub target: Network,
    pub gradnorm: GradNormState,
    pub updates: u64,
    /// Multiplier on the configured learning rate, set by the training loop.
    #[serde(default = "unit")]
    pub lr_scale: f64,
    opt: OptState,
}

fn unit() -> f64 {
    1.0
}

const CHECKPOINT_FORMAT: &str = "gpasp-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    agent: Agent,
}

fn stack_rows(rows: &[&[f64]], width: usize) -> Tensor {
    let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor {
        rows: data.len() / width,
        cols: width,
        data,
    }
}

fn mask_tensor(up: &[&[bool]]) -> Tensor {
    let cols = up[0].len();
    let data = up
        .iter()
        .flat_map(|u| u.iter().map(|&x| if x { 0.0 } else { MASK_LOGIT }))
        .collect();
    Tensor {
        rows: up.len(),
        cols,
        data,
    }
}

impl Agent {
    pub fn new(cfg: GpaspConfig, num_paths: usize, obs_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let online = Network::new(&cfg, obs_dim, num_paths, &mut rng);
        let target = online.clone();
        let gradnorm = GradNormState::from(&cfg.gradnorm);
        Agent {
            cfg,
            num_paths,
            obs_dim,
            online,
            target,
            gradnorm,
            updates: 0,
            lr_scale: 1.0,
            opt: OptState::default(),
        }
    }

    fn window(&self) -> usize {
        self.cfg.history_len
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        let want = self.window() * self.obs_dim;
        if obs.len() != want {
            return Err(Error::Shape {
                expected: (self.window(), self.obs_dim),
                got: (obs.len() / self.obs_dim.max(1), self.obs_dim),
            });
        }
        Ok(())
    }

    /// Encodes a window with the online encoder, samples (or takes the mean
    /// of) the latent and picks a path with the target policy head. Down
    /// paths are masked out; `None` when every path is down.
    pub fn act(&self, obs: &[f64], up: &[bool], mode: ActMode, rng: &mut impl Rng) -> Result<Option<Act>> {
        self.check_obs(obs)?;
        if !up.iter().any(|&u| u) {
            return Ok(None);
        }
        let d_z = self.cfg.d_z;
        let eps: Vec<f64> = match mode {
            ActMode::Sample => (0..d_z).map(|_| rng.sample(StandardNormal)).collect(),
            ActMode::Greedy => vec![0.0; d_z],
        };
        let mut g = Graph::new();
        let p = self.online.bind(&mut g);
        let pt = self.target.bind(&mut g);
        let x = g.leaf(stack_rows(&[obs], self.obs_dim));
        let lat = encode(&mut g, &self.online, &p, x, 1, self.window())?;
        let e = g.leaf(Tensor::row(eps.clone()));
        let z = reparameterize(&mut g, lat.mu, lat.logvar, e);
        let logits = policy_logits(&mut g, &self.target, &pt, z);
        let mask = g.leaf(mask_tensor(&[up]));
        let masked = g.add(logits, mask);
        let logp = g.log_softmax_rows(masked);
        let v = value(&mut g, &self.online, &p, z);
        let logp = g.value(logp).data.clone();
        let action = match mode {
            ActMode::Greedy => {
                let mut best = None::<usize>;
                for m in (0..up.len()).filter(|&m| up[m]) {
                    if best.is_none_or(|b| logp[m] > logp[b]) {
                        best = Some(m);
                    }
                }
                best.expect("at least one path is up")
            }
            ActMode::Sample => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = None;
                let mut last_up = 0;
                for m in (0..up.len()).filter(|&m| up[m]) {
                    last_up = m;
                    acc += logp[m].exp();
                    if chosen.is_none() && u < acc {
                        chosen = Some(m);
                    }
                }
                chosen.unwrap_or(last_up)
            }
        };
        Ok(Some(Act {
            action,
            log_prob: logp[action],
            value: g.value(v).item(),
            eps,
        }))
    }

    /// Values V(z_t) with stored noise, and bootstrap values V(μ̄_{t+1})
    /// from the target encoder.
    fn evaluate_values(&self, obs: &[&[f64]], eps: &[&[f64]], next_obs: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
        let b = obs.len();
        let mut g = Graph::new();
        let p = self.online.bind(&mut g);
        let pt = self.target.bind(&mut g);
        let x = g.leaf(stack_rows(obs, self.obs_dim));
        let lat = encode(&mut g, &self.online, &p, x, b, self.window())?;
        let e = g.leaf(stack_rows(eps, self.cfg.d_z));
        let z = reparameterize(&mut g, lat.mu, lat.logvar, e);
        let v = value(&mut g, &self.online, &p, z);
        let xn = g.leaf(stack_rows(next_obs, self.obs_dim));
        let tl = encode(&mut g, &self.target, &pt, xn, b, self.window())?;
        let vn = value(&mut g, &self.online, &p, tl.mu);
        Ok((g.value(v).data.clone(), g.value(vn).data.clone()))
    }

    fn prepare(&self, trajectories: &[Trajectory]) -> Result<Batch> {
        let mut batch = Batch::default();
        for traj in trajectories.iter().filter(|t| !t.steps.is_empty()) {
            let obs: Vec<&[f64]> = traj.steps.iter().map(|s| s.obs.as_slice()).collect();
            let eps: Vec<&[f64]> = traj.steps.iter().map(|s| s.eps.as_slice()).collect();
            let next: Vec<&[f64]> = traj.steps.iter().map(|s| s.next_obs.as_slice()).collect();
            let mut values = Vec::with_capacity(obs.len());
            let mut next_values = Vec::with_capacity(obs.len());
            for chunk in (0..obs.len()).collect::<Vec<_>>().chunks(256) {
                let r = chunk[0]..chunk[chunk.len() - 1] + 1;
                let (v, vn) = self.evaluate_values(&obs[r.clone()], &eps[r.clone()], &next[r])?;
                values.extend(v);
                next_values.extend(vn);
            }
            let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
            let dones: Vec<bool> = traj.steps.iter().map(|s| s.done).collect();
            let (adv, ret) = gae(&rewards, &values, &next_values, &dones, self.cfg.gamma, self.cfg.gae_lambda);
            for (s, (a, r)) in traj.steps.iter().zip(adv.into_iter().zip(ret)) {
                batch.obs.push(s.obs.clone());
                batch.next_obs.push(s.next_obs.clone());
                batch.up.push(s.up.clone());
                batch.eps.push(s.eps.clone());
                batch.actions.push(s.action);
                batch.old_log_probs.push(s.old_log_prob);
                batch.advantages.push(a);
                batch.returns.push(r);
            }
        }
        if self.cfg.normalize_advantages && batch.advantages.len() > 1 {
            let n = batch.advantages.len() as f64;
            let mean = batch.advantages.iter().sum::<f64>() / n;
            let std = (batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            for a in &mut batch.advantages {
                *a = (*a - mean) / (std + 1e-8);
            }
        }
        Ok(batch)
    }

    /// PPO epochs over shuffled minibatches of the given trajectories.
    pub fn train(&mut self, trajectories: &[Trajectory]) -> Result<Vec<LossReport>> {
        let batch = self.prepare(trajectories)?;
        let n = batch.actions.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ self.updates.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<usize> = (0..n).collect();
        let mut reports = Vec::new();
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.cfg.minibatch.max(1)) {
                reports.push(self.train_step_indices(&batch, chunk)?);
            }
        }
        Ok(reports)
    }

    /// One joint gradient step on the given trajectories as a single batch.
    pub fn train_step(&mut self, trajectories: &[Trajectory]) -> Result<LossReport> {
        let batch = self.prepare(trajectories)?;
        if batch.actions.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let idx: Vec<usize> = (0..batch.actions.len()).collect();
        self.train_step_indices(&batch, &idx)
    }

    fn train_step_indices(&mut self, batch: &Batch, idx: &[usize]) -> Result<LossReport> {
        let b = idx.len();
        let l = self.window();
        let d_z = self.cfg.d_z;

        // Target latents of the successor windows, as constants.
        let (mu_bar, lv_bar) = {
            let mut tg = Graph::new();
            let pt = self.target.bind(&mut tg);
            let rows: Vec<&[f64]> = idx.iter().map(|&i| batch.next_obs[i].as_slice()).collect();
            let xn = tg.leaf(stack_rows(&rows, self.obs_dim));
            let t = encode(&mut tg, &self.target, &pt, xn, b, l)?;
            (tg.value(t.mu).clone(), tg.value(t.logvar).clone())
        };

        let mut g = Graph::new();
        let p = self.online.bind(&mut g);
        let rows: Vec<&[f64]> = idx.iter().map(|&i| batch.obs[i].as_slice()).collect();
        let x = g.leaf(stack_rows(&rows, self.obs_dim));
        let lat = encode(&mut g, &self.online, &p, x, b, l)?;
        let eps_rows: Vec<&[f64]> = idx.iter().map(|&i| batch.eps[i].as_slice()).collect();
        let e = g.leaf(stack_rows(&eps_rows, d_z));
        let z = reparameterize(&mut g, lat.mu, lat.logvar, e);
        let logits = policy_logits(&mut g, &self.online, &p, z);
        let ups: Vec<&[bool]> = idx.iter().map(|&i| batch.up[i].as_slice()).collect();
        let mask = g.leaf(mask_tensor(&ups));
        let masked = g.add(logits, mask);
        let v = value(&mut g, &self.online, &p, z);
        let actions: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();
        let old: Vec<f64> = idx.iter().map(|&i| batch.old_log_probs[i]).collect();
        let adv: Vec<f64> = idx.iter().map(|&i| batch.advantages[i]).collect();
        let ret: Vec<f64> = idx.iter().map(|&i| batch.returns[i]).collect();
        let ppo = ppo_losses(&mut g, masked, &actions, &old, &adv, v, &ret, &self.cfg);

        let mut onehot = Tensor::zeros(b, self.num_paths);
        for (r, &a) in actions.iter().enumerate() {
            onehot.data[r * self.num_paths + a] = 1.0;
        }
        let oh = g.leaf(onehot);
        let pred = transition(&mut g, &self.online, &p, z, oh);
        let target = LatentVars {
            mu: g.leaf(mu_bar),
            logvar: g.leaf(lv_bar),
        };
        let aux = aux_kl(&mut g, pred, target);

        let mut report = LossReport {
            policy: g.value(ppo.policy).item(),
            value: g.value(ppo.value).item(),
            entropy: g.value(ppo.entropy).item(),
            aux: g.value(aux).item(),
            total: 0.0,
            lambda: self.gradnorm.lambda,
            g_rl: 0.0,
            g_aux: 0.0,
        };
        let rl = g.value(ppo.total).item();
        if !rl.is_finite() || !report.aux.is_finite() {
            return Err(Error::NonFiniteLoss(format!("{report:?}")));
        }

        let g_rl = g.backward(ppo.total);
        let g_aux = g.backward(aux);
        let enc_norm = |grads: &Gradients, p: &[Var]| -> f64 {
            p[self.online.encoder.clone()]
                .iter()
                .filter_map(|&v| grads.get(v))
                .map(Tensor::norm_sq)
                .sum::<f64>()
                .sqrt()
        };
        report.g_rl = enc_norm(&g_rl, &p);
        report.g_aux = enc_norm(&g_aux, &p);
        report.lambda = gradnorm_update(&mut self.gradnorm, report.g_rl, report.g_aux);
        report.total = rl + report.lambda * report.aux;

        let mut grads: Vec<Vec<f64>> = p
            .iter()
            .zip(&self.online.tensors)
            .map(|(&v, t)| {
                let mut out = g_rl.get(v).map_or_else(|| vec![0.0; t.data.len()], |x| x.data.clone());
                if let Some(a) = g_aux.get(v) {
                    for (o, x) in out.iter_mut().zip(&a.data) {
                        *o += report.lambda * x;
                    }
                }
                out
            })
            .collect();
        if let Some(max) = self.cfg.max_grad_norm {
            let norm = grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
            if norm > max {
                let k = max / norm;
                grads.iter_mut().flatten().for_each(|x| *x *= k);
            }
        }
        self.apply_gradients(&grads);
        ema_update(&mut self.target, &self.online, self.cfg.ema_beta)?;
        self.updates += 1;
        Ok(report)
    }

    fn apply_gradients(&mut self, grads: &[Vec<f64>]) {
        let lr = self.cfg.learning_rate * self.lr_scale;
        if self.opt.first.is_empty() {
            self.opt.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            if self.cfg.optimizer == OptimizerKind::Adam {
                self.opt.second = self.opt.first.clone();
            }
        }
        self.opt.t += 1;
        let t = self.opt.t as i32;
        for (i, (param, grad)) in self.online.tensors.iter_mut().zip(grads).enumerate() {
            match self.cfg.optimizer {
                OptimizerKind::Sgd => {
                    for (w, g) in param.data.iter_mut().zip(grad) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::Momentum => {
                    let vel = &mut self.opt.first[i];
                    for ((w, g), v) in param.data.iter_mut().zip(grad).zip(vel.iter_mut()) {
                        *v = self.cfg.momentum * *v + g;
                        *w -= lr * *v;
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                    let c1 = 1.0 - f64::powi(b1, t);
                    let c2 = 1.0 - f64::powi(b2, t);
                    let m = &mut self.opt.first[i];
                    let s = &mut self.opt.second[i];
                    for (k, (w, g)) in param.data.iter_mut().zip(grad).enumerate() {
                        m[k] = b1 * m[k] + (1.0 - b1) * g;
                        s[k] = b2 * s[k] + (1.0 - b2) * g * g;
                        *w -= lr * (m[k] / c1) / ((s[k] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            agent: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", ck.format)));
        }
        let a = ck.agent;
        if !a.online.same_shape(&a.target) {
            return Err(Error::Checkpoint("online and target shapes differ".into()));
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Agent::from_json(&s)
    }
}
