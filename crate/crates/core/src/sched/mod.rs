//! Per-slot path selection.

mod baselines;
mod nnpe;

pub use baselines::{min_rtt_select, random_select, RoundRobin};
pub use nnpe::{cholesky_solve, select_path_nnpe, PreferenceEstimate};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Length of a path feature vector.
pub const FEATURE_DIM: usize = 7;

/// Index of each component in a feature vector.
pub mod feature {
    pub const SRTT: usize = 0;
    pub const SNR: usize = 1;
    pub const THROUGHPUT: usize = 2;
    pub const HEADROOM: usize = 3;
    pub const LOSS: usize = 4;
    pub const UP: usize = 5;
    pub const BIAS: usize = 6;
}

/// Raw per-path observations a UE has at slot start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathObservation {
    pub up: bool,
    /// Smoothed RTT, or the handshake RTT (2 × propagation) before any sample.
    pub srtt_s: f64,
    pub snr_db: f64,
    pub throughput_bps: f64,
    pub cwnd: f64,
    pub in_flight: f64,
    pub recent_loss: bool,
}

/// Fixed per-scenario normalisers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureScales {
    pub srtt_cap_s: f64,
    pub snr_max_db: f64,
    pub capacity_bps: f64,
}

impl Default for FeatureScales {
    fn default() -> Self {
        FeatureScales {
            srtt_cap_s: 0.5,
            snr_max_db: 30.0,
            capacity_bps: 12e6,
        }
    }
}

/// Feature vector S for one path: normalised SRTT, SNR, throughput, cwnd
/// headroom, recent loss, up flag and a constant bias.
pub fn path_features(obs: &PathObservation, scales: &FeatureScales) -> Vec<f64> {
    let unit = |x: f64| if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
    let headroom = if obs.cwnd > 0.0 {
        (obs.cwnd - obs.in_flight) / obs.cwnd
    } else {
        0.0
    };
    vec![
        unit(obs.srtt_s / scales.srtt_cap_s),
        unit(obs.snr_db / scales.snr_max_db),
        unit(obs.throughput_bps / scales.capacity_bps),
        unit(headroom),
        if obs.recent_loss { 1.0 } else { 0.0 },
        if obs.up { 1.0 } else { 0.0 },
        1.0,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Random,
    Rr,
    Minrtt,
    Nnpe,
    Gpasp,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] = [
        SchedulerKind::Random,
        SchedulerKind::Rr,
        SchedulerKind::Minrtt,
        SchedulerKind::Nnpe,
        SchedulerKind::Gpasp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Random => "random",
            SchedulerKind::Rr => "rr",
            SchedulerKind::Minrtt => "minrtt",
            SchedulerKind::Nnpe => "nnpe",
            SchedulerKind::Gpasp => "gpasp",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownScheduler(s.to_string()))
    }
}
