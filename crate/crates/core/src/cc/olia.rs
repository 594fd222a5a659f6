//! Opportunistic linked-increases (OLIA) coupled congestion control, the
//! standard MPTCP baseline. Per ACK on subflow r in congestion avoidance:
//!
//! w_r += (w_r / rtt_r²) / (Σ_p w_p / rtt_p)² + α_r / w_r
//!
//! where α_r shifts window from the largest subflows toward the ones with
//! the best inter-loss distance. Losses halve the subflow window.

use serde::{Deserialize, Serialize};

use super::{Activation, CcEvent, CcState, IntervalSample, SlotSignals};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OliaParams {
    /// Restart from the initial window after an idle period longer than
    /// the retransmission timeout.
    pub restart_after_idle: bool,
}

impl Default for OliaParams {
    fn default() -> Self {
        OliaParams {
            restart_after_idle: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Olia {
    pub params: OliaParams,
    pub initial_window: f64,
    pub initial_sst: f64,
}

/// α_r for every subflow. Subflows without an RTT estimate get 0 and are
/// excluded from the path set.
fn alphas(flows: &[CcState]) -> Vec<f64> {
    let established: Vec<usize> = (0..flows.len()).filter(|&i| flows[i].est.srtt_s.is_some()).collect();
    let mut alpha = vec![0.0; flows.len()];
    if established.len() < 2 {
        return alpha;
    }
    let quality = |i: usize| {
        let l = flows[i].bytes_since_loss.max(flows[i].bytes_between_losses);
        l * l / flows[i].est.srtt_s.unwrap_or(1.0)
    };
    let best_q = established.iter().map(|&i| quality(i)).fold(f64::MIN, f64::max);
    let max_w = established.iter().map(|&i| flows[i].cwnd).fold(f64::MIN, f64::max);
    let best: Vec<usize> = established.iter().copied().filter(|&i| quality(i) == best_q).collect();
    let largest: Vec<usize> = established.iter().copied().filter(|&i| flows[i].cwnd == max_w).collect();
    let collected: Vec<usize> = best.iter().copied().filter(|i| !largest.contains(i)).collect();
    if collected.is_empty() {
        return alpha;
    }
    let n = established.len() as f64;
    for &i in &collected {
        alpha[i] = 1.0 / (n * collected.len() as f64);
    }
    for &i in &largest {
        alpha[i] = -1.0 / (n * largest.len() as f64);
    }
    alpha
}

/// One slot of OLIA over a UE's subflows: windows after applying every
/// ACK (in order) and halving subflows that saw a loss.
pub fn olia_step(flows: &mut [CcState], signals: &[SlotSignals], mss_bytes: u32) {
    let alpha = alphas(flows);
    let rate_sum: f64 = flows
        .iter()
        .filter_map(|f| f.est.srtt_s.map(|t| f.cwnd / t))
        .sum();
    for (r, s) in signals.iter().enumerate() {
        let flow = &mut flows[r];
        if !s.active {
            flow.last_event = CcEvent::None;
            continue;
        }
        flow.bytes_since_loss += s.acked_bytes as f64 / f64::from(mss_bytes);
        if s.loss {
            flow.cwnd = (flow.cwnd / 2.0).floor().max(1.0);
            flow.sst = flow.cwnd;
            flow.bytes_between_losses = flow.bytes_since_loss;
            flow.bytes_since_loss = 0.0;
            flow.last_event = CcEvent::CongestionHalve;
        } else if s.acked_packets > 0 {
            for _ in 0..s.acked_packets {
                if flow.cwnd < flow.sst {
                    flow.cwnd += 1.0;
                    flow.last_event = CcEvent::SlowStartGrowth;
                } else {
                    let coupled = match flow.est.srtt_s {
                        Some(t) if rate_sum > 0.0 => (flow.cwnd / (t * t)) / (rate_sum * rate_sum),
                        _ => 1.0 / flow.cwnd,
                    };
                    flow.cwnd = (flow.cwnd + coupled + alpha[r] / flow.cwnd).max(1.0);
                    flow.last_event = CcEvent::Increase;
                }
            }
        } else {
            flow.last_event = CcEvent::None;
        }
    }
}

impl Olia {
    pub fn new(params: OliaParams, initial_window: f64, initial_sst: f64) -> Self {
        Olia {
            params,
            initial_window,
            initial_sst,
        }
    }

    pub fn on_activate(&self, flows: &mut [CcState], path: usize, why: Activation) {
        let flow = &mut flows[path];
        match why {
            Activation::Created | Activation::Reconnected => {
                flow.cwnd = self.initial_window;
                flow.sst = self.initial_sst;
                flow.last_event = CcEvent::Init;
            }
            Activation::AfterIdle if self.params.restart_after_idle => {
                if flow.cwnd > self.initial_window {
                    flow.sst = flow.sst.max(0.75 * flow.cwnd);
                    flow.cwnd = self.initial_window;
                    flow.last_event = CcEvent::Restart;
                }
            }
            Activation::AfterIdle => {}
        }
    }

    pub fn on_slot_end(&self, flows: &mut [CcState], signals: &[SlotSignals], mss_bytes: u32) {
        for (flow, s) in flows.iter_mut().zip(signals) {
            if s.active {
                flow.est.update(&IntervalSample {
                    delivered_bytes: s.acked_bytes,
                    interval_s: s.interval_s,
                    rtts: s.rtt_samples.clone(),
                });
            }
        }
        olia_step(flows, signals, mss_bytes);
        for (flow, s) in flows.iter_mut().zip(signals) {
            if s.active {
                flow.record_history();
            }
        }
    }
}
