//! Congestion controllers. Windows are kept in MSS units; all controllers
//! run once per slot per UE over that UE's subflows.

mod estimators;
mod olia;
mod phacc;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use estimators::{Estimators, IntervalSample};
pub use olia::{olia_step, Olia, OliaParams};
pub use phacc::{
    ca_increase, classify_loss, edbss_growth_factor, edbss_step, ema, init_window, EdbssParams,
    LossVerdict, Phacc, PhaccParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    SlowStart,
    CongestionAvoidance,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::SlowStart => "slow_start",
            Phase::CongestionAvoidance => "congestion_avoidance",
        })
    }
}

/// What the controller did to a subflow in the last update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CcEvent {
    None,
    Init,
    Restart,
    SlowStartGrowth,
    Increase,
    CongestionHalve,
    HandoverBackoff,
}

impl fmt::Display for CcEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CcEvent::None => "none",
            CcEvent::Init => "init",
            CcEvent::Restart => "restart",
            CcEvent::SlowStartGrowth => "slow_start_growth",
            CcEvent::Increase => "increase",
            CcEvent::CongestionHalve => "congestion_halve",
            CcEvent::HandoverBackoff => "handover_backoff",
        })
    }
}

/// Why a subflow is being (re)activated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// First use of the subflow.
    Created,
    /// The path came back up after being down.
    Reconnected,
    /// Selected again after sitting idle for longer than its timeout.
    AfterIdle,
}

/// Per-subflow congestion state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcState {
    /// Congestion window, MSS. Fractional growth accumulates; sends use the floor.
    pub cwnd: f64,
    /// Slow-start threshold, MSS.
    pub sst: f64,
    /// SNR-aware increase coefficient λ, in [0, ρ].
    pub lambda: f64,
    /// Window history queue, one sample per active slot, oldest first.
    pub history: VecDeque<f64>,
    pub history_cap: usize,
    pub est: Estimators,
    pub last_event: CcEvent,
    /// OLIA inter-loss byte counters (l1 since last loss, l2 between the last two).
    pub bytes_since_loss: f64,
    pub bytes_between_losses: f64,
}

impl CcState {
    pub fn new(initial_cwnd: f64, initial_sst: f64, history_cap: usize, rtt_window: usize) -> Self {
        CcState {
            cwnd: initial_cwnd.max(1.0),
            sst: initial_sst,
            lambda: 1.0,
            history: VecDeque::with_capacity(history_cap),
            history_cap: history_cap.max(1),
            est: Estimators::new(rtt_window),
            last_event: CcEvent::None,
            bytes_since_loss: 0.0,
            bytes_between_losses: 0.0,
        }
    }

    pub fn phase(&self) -> Phase {
        if self.cwnd < self.sst {
            Phase::SlowStart
        } else {
            Phase::CongestionAvoidance
        }
    }

    /// Whole packets the window admits.
    pub fn window_packets(&self) -> u32 {
        self.cwnd.floor().max(1.0) as u32
    }

    pub fn record_history(&mut self) {
        if self.history.len() == self.history_cap {
            self.history.pop_front();
        }
        self.history.push_back(self.cwnd);
    }
}

/// Everything a controller learns about one subflow over one slot.
#[derive(Debug, Clone, Default)]
pub struct SlotSignals {
    /// The subflow carried traffic or resolved packets this slot.
    pub active: bool,
    pub acked_packets: u32,
    pub acked_bytes: u64,
    pub rtt_samples: Vec<f64>,
    pub interval_s: f64,
    /// At least one packet of this subflow was declared lost (coalesced).
    pub loss: bool,
    /// A lost packet was sent while a distance-based handover flag was up.
    pub loss_geo_handover: bool,
    /// A lost packet was sent in a slot where the path-selection indicator changed.
    pub loss_after_switch: bool,
    /// Selection indicator for this path changed this slot.
    pub switched_now: bool,
    /// Distance-based handover condition holds now.
    pub geo_handover_now: bool,
    pub snr_db: f64,
    pub snr_max_db: f64,
}

/// Controller names accepted by configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Phacc,
    PhaccNoGpasp,
    Olia,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Phacc, ControllerKind::PhaccNoGpasp, ControllerKind::Olia];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Phacc => "phacc",
            ControllerKind::PhaccNoGpasp => "phacc_no_gpasp",
            ControllerKind::Olia => "olia",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "phacc" => Ok(ControllerKind::Phacc),
            "phacc_no_gpasp" => Ok(ControllerKind::PhaccNoGpasp),
            "olia" => Ok(ControllerKind::Olia),
            other => Err(Error::UnknownController(other.to_string())),
        }
    }
}

/// Tunables for all controllers, loadable from the `[cc]` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcConfig {
    pub initial_sst: f64,
    pub initial_window: f64,
    pub history_len: usize,
    pub rtt_window: usize,
    pub phacc: PhaccParams,
    pub olia: OliaParams,
}

impl Default for CcConfig {
    fn default() -> Self {
        CcConfig {
            initial_sst: 64.0,
            initial_window: 4.0,
            history_len: 32,
            rtt_window: 64,
            phacc: PhaccParams::default(),
            olia: OliaParams::default(),
        }
    }
}

/// A congestion controller chosen by name.
#[derive(Debug, Clone)]
pub enum Controller {
    Phacc(Phacc),
    Olia(Olia),
}

impl Controller {
    pub fn new(kind: ControllerKind, cfg: &CcConfig) -> Self {
        match kind {
            ControllerKind::Phacc => Controller::Phacc(Phacc::new(cfg.phacc.clone(), true, cfg.initial_window)),
            ControllerKind::PhaccNoGpasp => {
                Controller::Phacc(Phacc::new(cfg.phacc.clone(), false, cfg.initial_window))
            }
            ControllerKind::Olia => Controller::Olia(Olia::new(cfg.olia.clone(), cfg.initial_window, cfg.initial_sst)),
        }
    }

    /// Prepares subflow `path` for sending after creation, reconnection or
    /// an idle period.
    pub fn on_activate(&self, flows: &mut [CcState], path: usize, why: Activation, mss_bytes: u32) {
        match self {
            Controller::Phacc(p) => p.on_activate(flows, path, why, mss_bytes),
            Controller::Olia(o) => o.on_activate(flows, path, why),
        }
    }

    /// End-of-slot update over all of one UE's subflows.
    pub fn on_slot_end(&self, flows: &mut [CcState], signals: &[SlotSignals], mss_bytes: u32) {
        match self {
            Controller::Phacc(p) => p.on_slot_end(flows, signals, mss_bytes),
            Controller::Olia(o) => o.on_slot_end(flows, signals, mss_bytes),
        }
    }
}
