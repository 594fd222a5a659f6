//! Parameter store and forward passes of the encoder and heads.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

use super::GpaspConfig;

/// Lower and upper clamp of every predicted log-variance.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 4.0;

/// Additive logit mask for unavailable paths.
pub const MASK_LOGIT: f64 = -1e4;

/// All parameter arrays with their names, grouped by sub-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub encoder: Range<usize>,
    pub policy: Range<usize>,
    pub value: Range<usize>,
    pub transition: Range<usize>,
    pub heads: usize,
    pub mlp_layers: usize,
}

struct Builder<'a, R: Rng> {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.names.push(name);
        self.tensors.push(Tensor { rows, cols, data });
    }

    fn bias(&mut self, name: String, cols: usize) {
        self.names.push(name);
        self.tensors.push(Tensor::zeros(1, cols));
    }

    fn mlp(&mut self, prefix: &str, input: usize, hidden: usize, layers: usize, output: usize) {
        let mut width = input;
        for l in 0..layers {
            self.weight(format!("{prefix}.w{l}"), width, hidden);
            self.bias(format!("{prefix}.b{l}"), hidden);
            width = hidden;
        }
        self.weight(format!("{prefix}.out_w"), width, output);
        self.bias(format!("{prefix}.out_b"), output);
    }
}

impl Network {
    pub fn new(cfg: &GpaspConfig, obs_dim: usize, num_paths: usize, rng: &mut impl Rng) -> Self {
        let mut b = Builder {
            names: Vec::new(),
            tensors: Vec::new(),
            rng,
        };
        for k in 0..cfg.heads {
            b.weight(format!("enc.wq{k}"), obs_dim, cfg.d_k);
            b.weight(format!("enc.wk{k}"), obs_dim, cfg.d_k);
            b.weight(format!("enc.wv{k}"), obs_dim, cfg.d_k);
        }
        b.weight("enc.wo".into(), cfg.heads * cfg.d_k, cfg.d_model);
        b.weight("enc.query".into(), obs_dim, 1);
        b.mlp("enc.mlp", cfg.d_model, cfg.hidden, cfg.mlp_layers, 2 * cfg.d_z);
        let encoder = 0..b.tensors.len();
        b.mlp("policy", cfg.d_z, cfg.hidden, cfg.head_layers, num_paths);
        let policy = encoder.end..b.tensors.len();
        b.mlp("value", cfg.d_z, cfg.hidden, cfg.head_layers, 1);
        let value = policy.end..b.tensors.len();
        b.mlp("transition", cfg.d_z + num_paths, cfg.hidden, cfg.head_layers, 2 * cfg.d_z);
        let transition = value.end..b.tensors.len();
        Network {
            names: b.names,
            tensors: b.tensors,
            encoder,
            policy,
            value,
            transition,
            heads: cfg.heads,
            mlp_layers: cfg.mlp_layers,
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Places every parameter on the graph as a leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    pub fn same_shape(&self, other: &Network) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }
}

fn mlp(g: &mut Graph, p: &[Var], x: Var, layers: usize) -> Var {
    let mut h = x;
    for l in 0..layers {
        let a = g.matmul(h, p[2 * l]);
        let a = g.add_row(a, p[2 * l + 1]);
        h = g.tanh(a);
    }
    let out = g.matmul(h, p[2 * layers]);
    g.add_row(out, p[2 * layers + 1])
}

/// Encoder output for a batch: μ and clamped log σ², both B×d_z.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub logvar: Var,
}

/// Multi-head self-attention over the L positions of each window, pooled
/// with a learned query, then an MLP emitting (μ, log σ²).
///
/// `x` stacks B windows as a (B·L)×d_h matrix, oldest position first.
pub fn encode(g: &mut Graph, net: &Network, p: &[Var], x: Var, batch: usize, window: usize) -> Result<LatentVars> {
    let (rows, _) = g.shape(x);
    if rows != batch * window {
        return Err(Error::Shape {
            expected: (batch * window, g.shape(x).1),
            got: g.shape(x),
        });
    }
    let enc = &p[net.encoder.clone()];
    let heads = net.heads;
    let d_k = g.shape(enc[0]).1;
    let inv_sqrt = 1.0 / (d_k as f64).sqrt();
    let mut head_out = Vec::with_capacity(heads);
    for k in 0..heads {
        let q = g.matmul(x, enc[3 * k]);
        let kk = g.matmul(x, enc[3 * k + 1]);
        let v = g.matmul(x, enc[3 * k + 2]);
        let mut per_sample = Vec::with_capacity(batch);
        for b in 0..batch {
            let qb = g.slice_rows(q, b * window, window);
            let kb = g.slice_rows(kk, b * window, window);
            let vb = g.slice_rows(v, b * window, window);
            let kt = g.transpose(kb);
            let s = g.matmul(qb, kt);
            let s = g.scale(s, inv_sqrt);
            let a = g.softmax_rows(s);
            per_sample.push(g.matmul(a, vb));
        }
        head_out.push(if batch == 1 { per_sample[0] } else { g.concat_rows(&per_sample) });
    }
    let h = if heads == 1 { head_out[0] } else { g.concat_cols(&head_out) };
    let o = g.matmul(h, enc[3 * heads]);
    let scores = g.matmul(x, enc[3 * heads + 1]);
    let scores = g.reshape(scores, batch, window)?;
    let beta = g.softmax_rows(scores);
    let mut pooled = Vec::with_capacity(batch);
    for b in 0..batch {
        let wb = g.slice_rows(beta, b, 1);
        let ob = g.slice_rows(o, b * window, window);
        pooled.push(g.matmul(wb, ob));
    }
    let pooled = if batch == 1 { pooled[0] } else { g.concat_rows(&pooled) };
    let out = mlp(g, &enc[3 * heads + 2..], pooled, net.mlp_layers);
    let d_z = g.shape(out).1 / 2;
    let mu = g.slice_cols(out, 0, d_z);
    let raw = g.slice_cols(out, d_z, d_z);
    let logvar = g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
    Ok(LatentVars { mu, logvar })
}

fn head_layers(range: &Range<usize>) -> usize {
    range.len() / 2 - 1
}

/// Unmasked policy logits, B×M.
pub fn policy_logits(g: &mut Graph, net: &Network, p: &[Var], z: Var) -> Var {
    mlp(g, &p[net.policy.clone()], z, head_layers(&net.policy))
}

/// State values, B×1.
pub fn value(g: &mut Graph, net: &Network, p: &[Var], z: Var) -> Var {
    mlp(g, &p[net.value.clone()], z, head_layers(&net.value))
}

/// Latent transition g_θ(z, a): predicted μ̂ and clamped log σ̂².
pub fn transition(g: &mut Graph, net: &Network, p: &[Var], z: Var, action_onehot: Var) -> LatentVars {
    let input = g.concat_cols(&[z, action_onehot]);
    let out = mlp(g, &p[net.transition.clone()], input, head_layers(&net.transition));
    let d_z = g.shape(out).1 / 2;
    let mu = g.slice_cols(out, 0, d_z);
    let raw = g.slice_cols(out, d_z, d_z);
    let logvar = g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
    LatentVars { mu, logvar }
}
