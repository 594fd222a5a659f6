//! Reward drift monitor with hierarchical recovery decisions.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

/// Guard for divisions by the reference reward.
const EPS_G: f64 = 1e-9;
/// Relative slack on the deviation band, above rounding error of a window mean.
const BAND_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorParams {
    pub alpha0: f64,
    pub mul0: f64,
    pub thr0: f64,
    /// Minimum window fill before any decision.
    pub min_samples: usize,
    pub window: usize,
    /// Reference update factor.
    pub beta: f64,
    /// Stability threshold on the relative gap between window mean and reference.
    pub delta: f64,
    /// Severity threshold separating light refits from full retraining.
    pub lambda: f64,
    /// Lower bound of the raw reward; observations are shifted by `-reward_floor`.
    pub reward_floor: f64,
}

impl Default for MonitorParams {
    fn default() -> Self {
        MonitorParams {
            alpha0: 0.1,
            mul0: 2.0,
            thr0: 3.0,
            min_samples: 5,
            window: 20,
            beta: 0.1,
            delta: 0.05,
            lambda: 0.5,
            reward_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    LightRefit,
    FullRetrain,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Continue => "continue",
            Decision::LightRefit => "light_refit",
            Decision::FullRetrain => "full_retrain",
        })
    }
}

/// One row of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: u64,
    pub rwd: f64,
    pub srwd: f64,
    pub dev: f64,
    #[serde(rename = "F")]
    pub fluctuation: f64,
    pub cnt: i64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorState {
    pub params: MonitorParams,
    pub srwd: f64,
    pub dev: f64,
    pub cnt: i64,
    pub window: VecDeque<f64>,
    pub arwd: f64,
    pub alpha: f64,
    pub mul: f64,
    pub thr: f64,
    pub fluctuation: f64,
    pub steps: u64,
    pub log: Vec<DecisionRecord>,
}

impl MonitorState {
    pub fn new(params: MonitorParams) -> Self {
        MonitorState {
            params,
            srwd: 0.0,
            dev: 0.0,
            cnt: 0,
            window: VecDeque::with_capacity(params.window + 1),
            arwd: 0.0,
            alpha: params.alpha0,
            mul: params.mul0,
            thr: params.thr0,
            fluctuation: 0.0,
            steps: 0,
            log: Vec::new(),
        }
    }

    /// Back to the empty-window condition; parameters and the log survive.
    pub fn reset(&mut self) {
        let log = std::mem::take(&mut self.log);
        let steps = self.steps;
        *self = MonitorState::new(self.params);
        self.log = log;
        self.steps = steps;
    }

    /// Feeds one raw reward and returns the recovery decision.
    pub fn observe(&mut self, raw: f64) -> Decision {
        let p = self.params;
        let rwd = raw - p.reward_floor;
        self.steps += 1;
        let decision = self.step(rwd, &p);
        self.log.push(DecisionRecord {
            step: self.steps,
            rwd,
            srwd: self.srwd,
            dev: self.dev,
            fluctuation: self.fluctuation,
            cnt: self.cnt,
            decision,
        });
        decision
    }

    fn step(&mut self, rwd: f64, p: &MonitorParams) -> Decision {
        if self.window.is_empty() {
            self.srwd = rwd;
            self.dev = 0.5 * rwd;
            self.cnt = 0;
            self.arwd = 0.0;
            self.alpha = p.alpha0;
            self.mul = p.mul0;
            self.thr = p.thr0;
            self.fluctuation = 0.0;
        }
        self.window.push_back(rwd);
        self.arwd = self.window.iter().sum::<f64>() / self.window.len() as f64;
        self.dev = (1.0 - self.alpha) * self.dev + self.alpha * (rwd - self.srwd).abs();
        if self.window.len() < p.min_samples {
            return Decision::Continue;
        }
        if self.window.len() >= p.window {
            self.window.pop_front();
        }
        let denom = self.srwd.abs().max(EPS_G);
        let f = (self.dev / denom).min(1.0);
        self.fluctuation = f;
        self.alpha = p.alpha0 * (1.0 + f);
        self.mul = p.mul0 * (1.0 - f);
        self.thr = p.thr0 * (1.0 + f);
        if (self.arwd - self.srwd).abs() / denom < p.delta {
            self.srwd = (1.0 - p.beta) * self.srwd + p.beta * self.arwd;
        }
        // The band never shrinks below float noise on the window mean.
        let band = self.mul * self.dev + BAND_RTOL * self.arwd.abs().max(EPS_G);
        if rwd > self.arwd + band {
            if self.cnt < 0 {
                self.cnt = 0;
            }
            self.cnt += 1;
        }
        if rwd < self.arwd - band {
            if self.cnt > 0 {
                self.cnt = 0;
            }
            self.cnt -= 1;
        }
        if self.cnt.unsigned_abs() as f64 > self.thr {
            self.cnt = 0;
            if f < p.lambda {
                Decision::LightRefit
            } else {
                Decision::FullRetrain
            }
        } else {
            Decision::Continue
        }
    }

    /// Writes the decision log as CSV.
    pub fn write_log<W: Write>(&self, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.log {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| crate::Error::io("decision log", e))?;
        Ok(())
    }
}
