use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Measurement block feeding PHACC: throughput TP, predicted bandwidth C,
/// smoothed RTT τ, propagation estimate D (window minimum RTT) and the
/// window maximum RTT T.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimators {
    /// Throughput over the last interval, bits/s.
    pub throughput_bps: f64,
    /// EWMA bandwidth prediction, bits/s.
    pub predicted_bps: f64,
    pub srtt_s: Option<f64>,
    pub min_rtt_s: Option<f64>,
    pub max_rtt_s: Option<f64>,
    /// Weight kept on the previous prediction.
    pub prediction_memory: f64,
    rtts: VecDeque<f64>,
    window: usize,
}

/// ACK stream summary for one interval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalSample {
    pub delivered_bytes: u64,
    pub interval_s: f64,
    pub rtts: Vec<f64>,
}

impl Estimators {
    pub fn new(window: usize) -> Self {
        Estimators {
            throughput_bps: 0.0,
            predicted_bps: 0.0,
            srtt_s: None,
            min_rtt_s: None,
            max_rtt_s: None,
            prediction_memory: 0.8,
            rtts: VecDeque::new(),
            window: window.max(1),
        }
    }

    /// Folds one interval into the estimators. Returns false (and changes
    /// nothing) when the interval carried no samples.
    pub fn update(&mut self, sample: &IntervalSample) -> bool {
        if sample.delivered_bytes == 0 && sample.rtts.is_empty() {
            return false;
        }
        if sample.interval_s > 0.0 {
            self.throughput_bps = sample.delivered_bytes as f64 * 8.0 / sample.interval_s;
            self.predicted_bps = if self.predicted_bps > 0.0 {
                self.prediction_memory * self.predicted_bps + (1.0 - self.prediction_memory) * self.throughput_bps
            } else {
                self.throughput_bps
            };
        }
        for &rtt in &sample.rtts {
            self.srtt_s = Some(match self.srtt_s {
                Some(s) => 0.875 * s + 0.125 * rtt,
                None => rtt,
            });
            if self.rtts.len() == self.window {
                self.rtts.pop_front();
            }
            self.rtts.push_back(rtt);
        }
        if !self.rtts.is_empty() {
            self.min_rtt_s = self.rtts.iter().copied().reduce(f64::min);
            self.max_rtt_s = self.rtts.iter().copied().reduce(f64::max);
        }
        true
    }
}
