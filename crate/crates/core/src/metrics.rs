//! Out-of-order delivery, throughput and QoS metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::{ArrivalLog, Packet, PacketStatus};

/// Reorder severity of one UE's delivered packets.
///
/// `ranks[i]` is the arrival rank of the i-th delivered packet in sequence
/// order. Returns `(degree, rate)`: the mean rank drop to the successor and
/// the fraction of packets with a drop. The last packet has no successor
/// and contributes zero.
pub fn ofo_degree(ranks: &[usize]) -> Result<(f64, f64)> {
    let n = ranks.len();
    if n == 0 {
        return Err(Error::NotAPermutation(0));
    }
    let mut seen = vec![false; n];
    for &r in ranks {
        if r == 0 || r > n || seen[r - 1] {
            return Err(Error::NotAPermutation(n));
        }
        seen[r - 1] = true;
    }
    let mut total = 0usize;
    let mut count = 0usize;
    for w in ranks.windows(2) {
        if w[0] > w[1] {
            total += w[0] - w[1];
            count += 1;
        }
    }
    Ok((total as f64 / n as f64, count as f64 / n as f64))
}

/// Weights of the two objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub goodput: f64,
    pub ofo: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights { goodput: 1.0, ofo: 1.0 }
    }
}

/// `ω1 · normalized_goodput − ω2 · ofo`.
pub fn objective(normalized_goodput: f64, ofo: f64, w1: f64, w2: f64) -> f64 {
    w1 * normalized_goodput - w2 * ofo
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub delivered_per_ue: Vec<u64>,
    pub ofo_per_ue: Vec<f64>,
    pub ofo_degree: f64,
    pub median_ofo_degree: f64,
    pub ofo_rate: f64,
    /// Total delivered packets.
    pub throughput_packets: u64,
    pub goodput_bps: f64,
    pub plr: f64,
    pub pdr: f64,
    pub mean_delay_s: f64,
    pub jitter_s: f64,
    pub objective: f64,
    pub sent: u64,
    pub lost: u64,
    /// Set when nothing was delivered.
    pub empty: bool,
}

/// Column names of [`EpisodeMetrics::csv_row`].
pub const CSV_HEADER: [&str; 13] = [
    "throughput_packets",
    "goodput_bps",
    "ofo_degree",
    "median_ofo_degree",
    "ofo_rate",
    "plr",
    "pdr",
    "mean_delay_s",
    "jitter_s",
    "objective",
    "sent",
    "lost",
    "empty",
];

impl EpisodeMetrics {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.throughput_packets.to_string(),
            format!("{:.6}", self.goodput_bps),
            format!("{:.9}", self.ofo_degree),
            format!("{:.9}", self.median_ofo_degree),
            format!("{:.9}", self.ofo_rate),
            format!("{:.9}", self.plr),
            format!("{:.9}", self.pdr),
            format!("{:.9}", self.mean_delay_s),
            format!("{:.9}", self.jitter_s),
            format!("{:.9}", self.objective),
            self.sent.to_string(),
            self.lost.to_string(),
            self.empty.to_string(),
        ]
    }
}

/// Episode-level inputs needed besides the per-UE records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryContext {
    pub packet_bytes: u32,
    pub duration_s: f64,
    pub capacity_bound_bps: f64,
    pub weights: ObjectiveWeights,
}

/// One UE's view: arrival ranks in sequence order plus counters.
struct UeRecord {
    ranks: Vec<usize>,
    sent: u64,
    lost: u64,
    delays: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

fn combine(records: &[UeRecord], ctx: &SummaryContext) -> EpisodeMetrics {
    let mut m = EpisodeMetrics::default();
    let mut weighted = 0.0;
    let mut ofo_count = 0.0;
    let mut delays = Vec::new();
    for r in records {
        let x = r.ranks.len() as u64;
        m.delivered_per_ue.push(x);
        m.sent += r.sent;
        m.lost += r.lost;
        let (f, rate) = if x > 0 {
            ofo_degree(&r.ranks).expect("arrival ranks form a permutation")
        } else {
            (0.0, 0.0)
        };
        m.ofo_per_ue.push(f);
        weighted += f * x as f64;
        ofo_count += rate * x as f64;
        delays.extend_from_slice(&r.delays);
    }
    m.throughput_packets = m.delivered_per_ue.iter().sum();
    let delivered = m.throughput_packets as f64;
    m.empty = m.throughput_packets == 0;
    if !m.empty {
        m.ofo_degree = weighted / delivered;
        m.ofo_rate = ofo_count / delivered;
        let active: Vec<f64> = m
            .ofo_per_ue
            .iter()
            .zip(&m.delivered_per_ue)
            .filter(|(_, &x)| x > 0)
            .map(|(&f, _)| f)
            .collect();
        m.median_ofo_degree = median(&active);
        m.mean_delay_s = delays.iter().sum::<f64>() / delays.len() as f64;
        let var = delays.iter().map(|d| (d - m.mean_delay_s).powi(2)).sum::<f64>() / delays.len() as f64;
        m.jitter_s = var.sqrt();
    }
    let resolved = m.throughput_packets + m.lost;
    if resolved > 0 {
        m.plr = m.lost as f64 / resolved as f64;
        m.pdr = 1.0 - m.plr;
    } else {
        m.pdr = 1.0;
    }
    if ctx.duration_s > 0.0 {
        m.goodput_bps = delivered * f64::from(ctx.packet_bytes) * 8.0 / ctx.duration_s;
    }
    let norm = if ctx.capacity_bound_bps > 0.0 {
        m.goodput_bps / ctx.capacity_bound_bps
    } else {
        0.0
    };
    m.objective = objective(norm, m.ofo_degree, ctx.weights.goodput, ctx.weights.ofo);
    m
}

/// Metrics from the receiver logs of every UE.
pub fn summarize(logs: &[ArrivalLog], ctx: &SummaryContext) -> EpisodeMetrics {
    let records: Vec<UeRecord> = logs
        .iter()
        .map(|l| UeRecord {
            ranks: l.ranks_in_seq_order(),
            sent: l.sent,
            lost: l.lost,
            delays: l.delays.clone(),
        })
        .collect();
    combine(&records, ctx)
}

/// Metrics recomputed from raw per-UE packet records alone.
pub fn summarize_packets(per_ue: &[Vec<Packet>], ctx: &SummaryContext) -> EpisodeMetrics {
    let records: Vec<UeRecord> = per_ue
        .iter()
        .map(|pkts| {
            let mut acked: Vec<&Packet> = pkts.iter().filter(|p| p.status == PacketStatus::Acked).collect();
            acked.sort_by_key(|p| p.seq);
            let mut by_arrival: Vec<(f64, u64)> = acked
                .iter()
                .map(|p| (p.deliver_time.expect("acked packets have a delivery time"), p.seq))
                .collect();
            by_arrival.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let ranks = acked
                .iter()
                .map(|p| by_arrival.iter().position(|&(_, s)| s == p.seq).expect("present") + 1)
                .collect();
            UeRecord {
                ranks,
                sent: pkts.len() as u64,
                lost: pkts.iter().filter(|p| p.status == PacketStatus::Lost).count() as u64,
                delays: acked.iter().map(|p| p.deliver_time.unwrap() - p.send_time).collect(),
            }
        })
        .collect();
    combine(&records, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_examples() {
        assert_eq!(ofo_degree(&[1, 2, 3, 4]).unwrap(), (0.0, 0.0));
        assert_eq!(ofo_degree(&[2, 1, 4, 3]).unwrap(), (0.5, 0.5));
        assert_eq!(ofo_degree(&[4, 3, 2, 1]).unwrap(), (0.75, 0.75));
        assert_eq!(ofo_degree(&[1]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn rejects_non_permutations() {
        assert!(ofo_degree(&[]).is_err());
        assert!(ofo_degree(&[1, 1]).is_err());
        assert!(ofo_degree(&[0, 1]).is_err());
        assert!(ofo_degree(&[1, 3]).is_err());
    }

    #[test]
    fn objective_arithmetic() {
        assert_eq!(objective(0.3, 0.5, 0.0, 1.0), -0.5);
        assert!((objective(0.8, 0.3, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(objective(0.9, 0.4, 1.0, 0.0) > objective(0.8, 0.4, 1.0, 0.0));
    }

    fn ctx() -> SummaryContext {
        SummaryContext {
            packet_bytes: 1000,
            duration_s: 1.0,
            capacity_bound_bps: 1e6,
            weights: ObjectiveWeights::default(),
        }
    }

    #[test]
    fn throughput_sums_ues() {
        let log = |n: u64| ArrivalLog {
            entries: (1..=n).map(|s| (s, s as f64)).collect(),
            sent: n,
            acked: n,
            delays: vec![0.05; n as usize],
            ..ArrivalLog::default()
        };
        let m = summarize(&[log(10), log(10)], &ctx());
        assert_eq!(m.throughput_packets, 20);
        assert_eq!(m.goodput_bps, 160_000.0);
        assert_eq!(m.plr, 0.0);
        assert_eq!(m.pdr, 1.0);
        assert!((m.objective - 0.16).abs() < 1e-12);
        assert!(m.jitter_s.abs() < 1e-12);
    }

    #[test]
    fn all_lost() {
        let log = ArrivalLog {
            sent: 5,
            lost: 5,
            ..ArrivalLog::default()
        };
        let m = summarize(&[log], &ctx());
        assert!(m.empty);
        assert_eq!((m.plr, m.pdr, m.goodput_bps), (1.0, 0.0, 0.0));
    }
}
