//! Proactive handover-aware congestion control.
//!
//! Three mechanisms share one per-slot update:
//! * cross-flow slow-start initialisation from EMA'd window histories,
//! * exponentially decaying boost slow start (EDBSS),
//! * multi-metric loss differentiation and an SNR-weighted increase in
//!   congestion avoidance.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Activation, CcEvent, CcState, IntervalSample, SlotSignals};

/// EDBSS shape parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdbssParams {
    /// Sigmoid steepness `a`.
    pub a: f64,
    /// Sigmoid midpoint `b` as a fraction of SST.
    pub b: f64,
    /// Early boost amplitude.
    pub gamma_boost: f64,
    /// Boost decay scale ϱ, MSS.
    pub decay_mss: f64,
    /// Cap on the per-RTT multiplicative increase.
    pub m_max: f64,
}

impl Default for EdbssParams {
    fn default() -> Self {
        EdbssParams {
            a: 10.0,
            b: 0.5,
            gamma_boost: 1.0,
            decay_mss: 20.0,
            m_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaccParams {
    /// Reduction factor for handover-induced losses, in (0.5, 1).
    pub gamma: f64,
    /// RTT allowance Δ_R above the propagation estimate, seconds.
    pub delta_r_s: f64,
    /// Smoothing σ of the SNR coefficient λ.
    pub sigma: f64,
    /// Load-balancing degree ρ, upper bound on λ.
    pub rho: f64,
    /// Weight of the newest sample in the window-history EMA.
    pub history_ema: f64,
    pub edbss: EdbssParams,
}

impl Default for PhaccParams {
    fn default() -> Self {
        PhaccParams {
            gamma: 0.85,
            delta_r_s: 0.015,
            sigma: 0.3,
            rho: 1.0,
            history_ema: 0.25,
            edbss: EdbssParams::default(),
        }
    }
}

/// Exponential moving average over samples, oldest first.
pub fn ema<'a>(samples: impl IntoIterator<Item = &'a f64>, newest_weight: f64) -> Option<f64> {
    samples
        .into_iter()
        .fold(None, |acc, &x| Some(acc.map_or(x, |e| (1.0 - newest_weight) * e + newest_weight * x)))
}

/// Slow-start initial window for a created or reconnected subflow:
/// the EMA of its own history, else the mean of the siblings' history EMAs,
/// else `initial_window`; capped by the BDP `bdp_cap` and floored at 1 MSS.
pub fn init_window(
    own: &VecDeque<f64>,
    siblings: &[&VecDeque<f64>],
    bdp_cap: Option<f64>,
    initial_window: f64,
    newest_weight: f64,
) -> f64 {
    let estimate = match ema(own, newest_weight) {
        Some(e) => e,
        None => {
            let emas: Vec<f64> = siblings.iter().filter_map(|h| ema(h.iter(), newest_weight)).collect();
            if emas.is_empty() {
                initial_window
            } else {
                emas.iter().sum::<f64>() / emas.len() as f64
            }
        }
    };
    bdp_cap.map_or(estimate, |b| b.min(estimate)).max(1.0)
}

/// EDBSS multiplicative factor min(1 + ξ(w)·ζ(w), M_max).
pub fn edbss_growth_factor(w: f64, sst: f64, p: &EdbssParams) -> f64 {
    let xi = 1.0 / (1.0 + (p.a * (w / sst - p.b)).exp());
    let zeta = 1.0 + p.gamma_boost * (-w / p.decay_mss).exp();
    (1.0 + xi * zeta).min(p.m_max)
}

/// One EDBSS round: w' = w · min(1 + ξ(w)·ζ(w), M_max).
pub fn edbss_step(w: f64, sst: f64, p: &EdbssParams) -> f64 {
    w * edbss_growth_factor(w, sst, p)
}

/// Outcome of the loss classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVerdict {
    /// Handover coincides with throughput drop and RTT inflation.
    CongestionDuringHandover,
    /// Handover without congestion evidence: gentle reduction.
    HandoverInduced,
    /// No handover indicator: treated as congestion.
    Congestion,
}

/// Window after a coalesced loss event, floored to whole MSS (min 1).
pub fn classify_loss(con1: bool, con2: bool, con3: bool, w: f64, gamma: f64) -> (f64, LossVerdict) {
    let (raw, verdict) = match (con1, con2 && con3) {
        (true, true) => (w / 2.0, LossVerdict::CongestionDuringHandover),
        (true, false) => (gamma * w, LossVerdict::HandoverInduced),
        (false, _) => (w / 2.0, LossVerdict::Congestion),
    };
    (raw.floor().max(1.0), verdict)
}

/// Congestion-avoidance increment in MSS for one subflow with smoothed RTT
/// `rtt_s` and window-max RTT `max_rtt_s`. `flows` lists (window, srtt) of
/// every established subflow of the UE, this one included:
///
/// λ · 3·max(w_i/τ_i)²·√T / (2·τ·(Σ w_i/τ_i)^{5/2})
pub fn ca_increase(lambda: f64, rtt_s: f64, max_rtt_s: f64, flows: &[(f64, f64)]) -> f64 {
    let rates = flows.iter().filter(|(_, t)| *t > 0.0).map(|(w, t)| w / t);
    let (max_rate, total) = rates.fold((0.0f64, 0.0f64), |(mx, s), r| (mx.max(r), s + r));
    if total <= 0.0 || rtt_s <= 0.0 {
        return 0.0;
    }
    lambda * 3.0 * max_rate * max_rate * max_rtt_s.max(0.0).sqrt() / (2.0 * rtt_s * total.powf(2.5))
}

#[derive(Debug, Clone)]
pub struct Phacc {
    pub params: PhaccParams,
    /// Whether scheduler path switches feed the handover predicate.
    pub use_action_prior: bool,
    pub initial_window: f64,
}

impl Phacc {
    pub fn new(params: PhaccParams, use_action_prior: bool, initial_window: f64) -> Self {
        Phacc {
            params,
            use_action_prior,
            initial_window,
        }
    }

    pub fn on_activate(&self, flows: &mut [CcState], path: usize, why: Activation, mss_bytes: u32) {
        if why == Activation::AfterIdle || flows[path].cwnd >= flows[path].sst {
            return;
        }
        let own = &flows[path];
        let bdp_cap = match (own.est.predicted_bps, own.est.min_rtt_s) {
            (c, Some(d)) if c > 0.0 => Some(c * d / (f64::from(mss_bytes) * 8.0)),
            _ => None,
        };
        let siblings: Vec<&VecDeque<f64>> = flows
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != path)
            .map(|(_, f)| &f.history)
            .collect();
        let w = init_window(&own.history, &siblings, bdp_cap, self.initial_window, self.params.history_ema);
        let flow = &mut flows[path];
        flow.cwnd = w;
        flow.last_event = CcEvent::Init;
    }

    pub fn on_slot_end(&self, flows: &mut [CcState], signals: &[SlotSignals], _mss_bytes: u32) {
        let p = &self.params;
        for (m, s) in signals.iter().enumerate() {
            if !s.active {
                flows[m].last_event = CcEvent::None;
                continue;
            }
            let prev_prediction = flows[m].est.predicted_bps;
            let prev_prop = flows[m].est.min_rtt_s;
            flows[m].est.update(&IntervalSample {
                delivered_bytes: s.acked_bytes,
                interval_s: s.interval_s,
                rtts: s.rtt_samples.clone(),
            });

            if s.loss {
                let flow = &mut flows[m];
                if flow.cwnd < flow.sst {
                    flow.sst = flow.cwnd;
                }
                let con1 = s.geo_handover_now
                    || s.loss_geo_handover
                    || (self.use_action_prior && (s.switched_now || s.loss_after_switch));
                let throughput_now = if s.acked_bytes == 0 { 0.0 } else { flow.est.throughput_bps };
                let con2 = prev_prediction > 0.0 && throughput_now < prev_prediction;
                let con3 = match (flow.est.srtt_s, prev_prop) {
                    (Some(rtt), Some(prop)) => rtt > prop + p.delta_r_s,
                    _ => false,
                };
                let (w, verdict) = classify_loss(con1, con2, con3, flow.cwnd, p.gamma);
                flow.cwnd = w;
                flow.sst = w;
                flow.last_event = match verdict {
                    LossVerdict::HandoverInduced => CcEvent::HandoverBackoff,
                    _ => CcEvent::CongestionHalve,
                };
            } else if s.acked_packets > 0 {
                if flows[m].cwnd < flows[m].sst {
                    let flow = &mut flows[m];
                    flow.cwnd = edbss_step(flow.cwnd, flow.sst, &p.edbss);
                    flow.last_event = CcEvent::SlowStartGrowth;
                } else {
                    let ratio = if s.snr_max_db != 0.0 { s.snr_db / s.snr_max_db } else { 0.0 };
                    let lambda = (p.sigma * ratio + (1.0 - p.sigma) * flows[m].lambda).clamp(0.0, p.rho);
                    let peers: Vec<(f64, f64)> = flows
                        .iter()
                        .filter_map(|f| f.est.srtt_s.map(|t| (f.cwnd, t)))
                        .collect();
                    let flow = &mut flows[m];
                    flow.lambda = lambda;
                    let rtt = flow.est.srtt_s.unwrap_or(0.0);
                    let max_rtt = flow.est.max_rtt_s.unwrap_or(rtt);
                    flow.cwnd += ca_increase(lambda, rtt, max_rtt, &peers);
                    flow.last_event = CcEvent::Increase;
                }
            } else {
                flows[m].last_event = CcEvent::None;
            }
            flows[m].record_history();
        }
    }
}
