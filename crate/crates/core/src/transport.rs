//! Per-UE multipath sender and receiver model.
//!
//! Each UAV keeps one drop-tail FIFO shared by every UE routed through it.
//! A packet departs at `max(now, queue_free_at)` and arrives one
//! propagation delay later; ACKs come back loss-free over the same
//! propagation delay. Losses are realised when a packet enters the network
//! but only become visible to the sender at its timeout.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cc::{CcConfig, CcState, SlotSignals};
use crate::scenario::{LinkState, ScenarioConfig, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketStatus {
    InFlight,
    Acked,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Packet {
    /// Per-UE sequence number, starting at 1.
    pub seq: u64,
    pub ue: usize,
    pub path: usize,
    pub size_bytes: u32,
    pub send_time: f64,
    pub send_slot: usize,
    /// Receiver arrival time; set once the packet is acknowledged.
    pub deliver_time: Option<f64>,
    pub status: PacketStatus,
    /// Path feature vector at send time.
    pub features: Vec<f64>,
    /// Distance-based handover flag of the path at send time.
    pub geo_handover: bool,
    /// The path-selection indicator changed in the send slot.
    pub switched: bool,
    #[serde(skip)]
    scheduled_arrival: Option<f64>,
}

/// Scheduler feedback for one resolved packet: choice c and response time t̃.
#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    pub ue: usize,
    pub path: usize,
    pub features: Vec<f64>,
    pub choice: f64,
    pub response_time: f64,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeoutConfig {
    /// Fixed T_max; when absent T_max = multiplier · srtt clamped to [min_s, max_s].
    pub fixed_s: Option<f64>,
    pub srtt_multiplier: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// T_max before the first RTT sample.
    pub initial_s: f64,
}

impl Default for TimeoutConfig {
    fn default() -> Self {
        TimeoutConfig {
            fixed_s: None,
            srtt_multiplier: 4.0,
            min_s: 0.2,
            max_s: 2.0,
            initial_s: 1.0,
        }
    }
}

impl TimeoutConfig {
    pub fn t_max(&self, srtt: Option<f64>) -> f64 {
        if let Some(t) = self.fixed_s {
            return t;
        }
        match srtt {
            Some(s) => (self.srtt_multiplier * s).clamp(self.min_s, self.max_s),
            None => self.initial_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub timeout: TimeoutConfig,
    /// Offered load per UE in packets/s; saturating source when absent.
    pub app_rate_pps: Option<f64>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            timeout: TimeoutConfig::default(),
            app_rate_pps: None,
        }
    }
}

/// Per-(UE, path) sending state.
#[derive(Debug, Clone)]
pub struct Subflow {
    pub ue: usize,
    pub path: usize,
    /// Packets sent and not yet resolved.
    pub in_flight: u32,
    pub cc: CcState,
    pub activated: bool,
    pub last_send_time: Option<f64>,
    pub was_up: bool,
    counters: SlotSignals,
}

impl Subflow {
    pub fn new(ue: usize, path: usize, cc: CcState) -> Self {
        Subflow {
            ue,
            path,
            in_flight: 0,
            cc,
            activated: false,
            last_send_time: None,
            was_up: true,
            counters: SlotSignals::default(),
        }
    }
}

/// Receiver-side record of delivered packets.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ArrivalLog {
    /// (seq, receiver arrival time) in acknowledgement order.
    pub entries: Vec<(u64, f64)>,
    pub sent: u64,
    pub acked: u64,
    pub lost: u64,
    pub duplicate_acks: u64,
    /// One-way delay of every delivered packet, seconds.
    pub delays: Vec<f64>,
}

impl ArrivalLog {
    /// Arrival ranks (1-based, ordered by receiver arrival time, ties by
    /// sequence) listed in sequence order.
    pub fn ranks_in_seq_order(&self) -> Vec<usize> {
        let mut by_arrival: Vec<(f64, u64)> = self.entries.iter().map(|&(s, t)| (t, s)).collect();
        by_arrival.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut ranked: Vec<(u64, usize)> = by_arrival
            .iter()
            .enumerate()
            .map(|(rank, &(_, seq))| (seq, rank + 1))
            .collect();
        ranked.sort_unstable_by_key(|&(seq, _)| seq);
        ranked.into_iter().map(|(_, r)| r).collect()
    }

    /// Delivered sequence numbers in ascending order.
    pub fn delivered_seqs(&self) -> Vec<u64> {
        let mut seqs: Vec<u64> = self.entries.iter().map(|&(s, _)| s).collect();
        seqs.sort_unstable();
        seqs
    }
}

/// Drop-tail FIFO in front of a UAV backhaul.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinkQueue {
    pub free_at: f64,
}

impl LinkQueue {
    /// Departure time of a packet entering at `now`, or `None` when the
    /// backlog exceeds `buffer_s` or the link has no capacity.
    pub fn enqueue(&mut self, now: f64, service_s: f64, buffer_s: f64) -> Option<f64> {
        if !service_s.is_finite() || service_s <= 0.0 {
            return None;
        }
        let backlog = (self.free_at - now).max(0.0);
        if backlog > buffer_s {
            return None;
        }
        let depart = now.max(self.free_at);
        self.free_at = depart + service_s;
        Some(depart)
    }
}

/// What happened to a packet once it entered the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckEvent {
    pub ue: usize,
    pub seq: u64,
    pub arrive_time: f64,
    pub ack_time: f64,
    pub rtt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossCause {
    Channel,
    BufferOverflow,
    NoCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEvent {
    pub ue: usize,
    pub seq: u64,
    pub cause: LossCause,
}

/// Per-packet trace row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub slot: usize,
    pub ue: usize,
    pub path: usize,
    pub seq: u64,
    pub event: String,
    pub rtt_s: Option<f64>,
    pub bytes: u32,
}

/// Send-time context stamped onto every packet of one burst.
#[derive(Debug, Clone)]
pub struct SendContext<'a> {
    pub slot: usize,
    pub size_bytes: u32,
    pub features: &'a [f64],
    pub geo_handover: bool,
    pub switched: bool,
    /// Application packets available; `None` for a saturating source.
    pub budget: Option<u32>,
}

/// Emits as many packets as the window allows (`floor(w) − in_flight`).
/// Nothing is sent on a down link.
pub fn try_send(
    subflow: &mut Subflow,
    link: &LinkState,
    clock: f64,
    next_seq: &mut u64,
    ctx: &SendContext<'_>,
) -> Vec<Packet> {
    if !link.up {
        return Vec::new();
    }
    let room = subflow.cc.window_packets().saturating_sub(subflow.in_flight);
    let count = ctx.budget.map_or(room, |b| b.min(room));
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        out.push(Packet {
            seq: *next_seq,
            ue: subflow.ue,
            path: subflow.path,
            size_bytes: ctx.size_bytes,
            send_time: clock,
            send_slot: ctx.slot,
            deliver_time: None,
            status: PacketStatus::InFlight,
            features: ctx.features.to_vec(),
            geo_handover: ctx.geo_handover,
            switched: ctx.switched,
            scheduled_arrival: None,
        });
        *next_seq += 1;
    }
    subflow.in_flight += count;
    if count > 0 {
        subflow.last_send_time = Some(clock);
    }
    out
}

/// Realises freshly sent packets: channel loss at the link's current loss
/// probability, then the shared FIFO (drop-tail), then propagation.
pub fn deliver_step(
    packets: &[Packet],
    world: &WorldState,
    cfg: &ScenarioConfig,
    queues: &mut [LinkQueue],
    rng: &mut impl Rng,
) -> (Vec<AckEvent>, Vec<LossEvent>) {
    let mut acks = Vec::new();
    let mut losses = Vec::new();
    for p in packets {
        let link = world.link(p.ue, p.path);
        let ch = cfg.channel(p.path);
        if link.capacity_bps <= 0.0 || !link.up {
            losses.push(LossEvent {
                ue: p.ue,
                seq: p.seq,
                cause: LossCause::NoCapacity,
            });
            continue;
        }
        if link.loss_prob > 0.0 && rng.random::<f64>() < link.loss_prob {
            losses.push(LossEvent {
                ue: p.ue,
                seq: p.seq,
                cause: LossCause::Channel,
            });
            continue;
        }
        let bits = f64::from(p.size_bytes) * 8.0;
        let service = bits / link.capacity_bps;
        let buffer_s = ch.buffer_packets as f64 * f64::from(cfg.mss_bytes) * 8.0 / ch.capacity_bps;
        match queues[p.path].enqueue(p.send_time, service, buffer_s) {
            Some(depart) => {
                let arrive = depart + link.prop_delay_s;
                let ack_time = arrive + link.prop_delay_s;
                acks.push(AckEvent {
                    ue: p.ue,
                    seq: p.seq,
                    arrive_time: arrive,
                    ack_time,
                    rtt: ack_time - p.send_time,
                });
            }
            None => losses.push(LossEvent {
                ue: p.ue,
                seq: p.seq,
                cause: LossCause::BufferOverflow,
            }),
        }
    }
    (acks, losses)
}

/// Marks a packet acknowledged. Returns `None` (and counts a duplicate)
/// when the packet was already resolved.
pub fn on_ack(subflow: &mut Subflow, packet: &mut Packet, rtt: f64, arrive_time: f64, log: &mut ArrivalLog) -> Option<Feedback> {
    if packet.status != PacketStatus::InFlight {
        log.duplicate_acks += 1;
        return None;
    }
    packet.status = PacketStatus::Acked;
    packet.deliver_time = Some(arrive_time);
    subflow.in_flight = subflow.in_flight.saturating_sub(1);
    log.acked += 1;
    log.entries.push((packet.seq, arrive_time));
    log.delays.push(arrive_time - packet.send_time);
    let c = &mut subflow.counters;
    c.acked_packets += 1;
    c.acked_bytes += u64::from(packet.size_bytes);
    c.rtt_samples.push(rtt);
    Some(Feedback {
        ue: packet.ue,
        path: packet.path,
        features: packet.features.clone(),
        choice: 1.0,
        response_time: rtt,
        slot: packet.send_slot,
    })
}

/// Declares a packet lost after its timeout. No-op unless in flight.
pub fn on_timeout(subflow: &mut Subflow, packet: &mut Packet, t_max: f64, log: &mut ArrivalLog) -> Option<Feedback> {
    if packet.status != PacketStatus::InFlight {
        return None;
    }
    packet.status = PacketStatus::Lost;
    subflow.in_flight = subflow.in_flight.saturating_sub(1);
    log.lost += 1;
    let c = &mut subflow.counters;
    c.loss = true;
    c.loss_geo_handover |= packet.geo_handover;
    c.loss_after_switch |= packet.switched;
    Some(Feedback {
        ue: packet.ue,
        path: packet.path,
        features: packet.features.clone(),
        choice: -1.0,
        response_time: t_max,
        slot: packet.send_slot,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Ack,
    Timeout,
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: f64,
    order: u64,
    kind: EventKind,
    ue: usize,
    seq: u64,
    value: f64,
    arrive: f64,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.order.cmp(&self.order))
    }
}

/// Sender + receiver state of one UE.
#[derive(Debug, Clone)]
pub struct UeSender {
    pub subflows: Vec<Subflow>,
    /// All packets ever sent, indexed by `seq - 1`.
    pub packets: Vec<Packet>,
    pub next_seq: u64,
    pub log: ArrivalLog,
    pub current: Option<usize>,
    tokens: f64,
}

impl UeSender {
    pub fn cc_states(&self) -> Vec<CcState> {
        self.subflows.iter().map(|s| s.cc.clone()).collect()
    }
}

/// Per-slot inputs from the scheduler side for one UE.
#[derive(Debug, Clone)]
pub struct SlotPlan<'a> {
    pub path: Option<usize>,
    /// Feature vector per path at slot start.
    pub features: &'a [Vec<f64>],
    /// The selected path differs from the previous slot's.
    pub switched: bool,
}

/// The transport layer of one simulation instance.
#[derive(Debug, Clone)]
pub struct Transport {
    pub cfg: TransportConfig,
    pub ues: Vec<UeSender>,
    pub queues: Vec<LinkQueue>,
    pub record_trace: bool,
    pub trace: Vec<TraceRecord>,
    events: BinaryHeap<Scheduled>,
    order: u64,
    rng: ChaCha8Rng,
}

impl Transport {
    pub fn new(scfg: &ScenarioConfig, tcfg: TransportConfig, cc_cfg: &CcConfig, seed: u64) -> Self {
        let ues = (0..scfg.num_ues)
            .map(|n| UeSender {
                subflows: (0..scfg.num_paths)
                    .map(|m| {
                        Subflow::new(
                            n,
                            m,
                            CcState::new(cc_cfg.initial_window, cc_cfg.initial_sst, cc_cfg.history_len, cc_cfg.rtt_window),
                        )
                    })
                    .collect(),
                packets: Vec::new(),
                next_seq: 1,
                log: ArrivalLog::default(),
                current: None,
                tokens: 0.0,
            })
            .collect();
        Transport {
            cfg: tcfg,
            ues,
            queues: vec![LinkQueue::default(); scfg.num_paths],
            record_trace: false,
            trace: Vec::new(),
            events: BinaryHeap::new(),
            order: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7A45_0001),
        }
    }

    fn push(&mut self, time: f64, kind: EventKind, ue: usize, seq: u64, value: f64, arrive: f64) {
        self.order += 1;
        self.events.push(Scheduled {
            time,
            order: self.order,
            kind,
            ue,
            seq,
            value,
            arrive,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn send(&mut self, ue: usize, path: usize, now: f64, slot: usize, world: &WorldState, scfg: &ScenarioConfig, features: &[f64], switched: bool) {
        let link = world.link(ue, path);
        let budget = self.cfg.app_rate_pps.map(|_| self.ues[ue].tokens.floor().max(0.0) as u32);
        let ctx = SendContext {
            slot,
            size_bytes: scfg.mss_bytes,
            features,
            geo_handover: link.ue_uav_distance_m > scfg.ue_uav_handover_m
                || link.uav_sat_distance_m > scfg.uav_sat_handover_m,
            switched,
            budget,
        };
        let sender = &mut self.ues[ue];
        let t_max = self.cfg.timeout.t_max(sender.subflows[path].cc.est.srtt_s);
        let packets = try_send(&mut sender.subflows[path], link, now, &mut sender.next_seq, &ctx);
        if packets.is_empty() {
            return;
        }
        if self.cfg.app_rate_pps.is_some() {
            sender.tokens -= packets.len() as f64;
        }
        sender.log.sent += packets.len() as u64;
        sender.subflows[path].counters.active = true;
        let (acks, _losses) = deliver_step(&packets, world, scfg, &mut self.queues, &mut self.rng);
        let first_seq = packets[0].seq;
        for p in &packets {
            if self.record_trace {
                self.trace.push(TraceRecord {
                    slot,
                    ue,
                    path,
                    seq: p.seq,
                    event: "send".into(),
                    rtt_s: None,
                    bytes: p.size_bytes,
                });
            }
        }
        self.ues[ue].packets.extend(packets);
        for a in acks {
            let idx = (a.seq - 1) as usize;
            self.ues[ue].packets[idx].scheduled_arrival = Some(a.arrive_time);
            self.push(a.ack_time, EventKind::Ack, ue, a.seq, a.rtt, a.arrive_time);
        }
        let last_seq = self.ues[ue].next_seq;
        for seq in first_seq..last_seq {
            self.push(now + t_max, EventKind::Timeout, ue, seq, t_max, 0.0);
        }
    }

    fn handle(&mut self, ev: Scheduled, slot: usize, world: &WorldState, scfg: &ScenarioConfig, plans: &[SlotPlan<'_>], feedback: &mut Vec<Feedback>) {
        let idx = (ev.seq - 1) as usize;
        let sender = &mut self.ues[ev.ue];
        let path = sender.packets[idx].path;
        let (fb, label, rtt) = match ev.kind {
            EventKind::Ack => {
                let fb = on_ack(&mut sender.subflows[path], &mut sender.packets[idx], ev.value, ev.arrive, &mut sender.log);
                let label = if fb.is_some() { "ack" } else { "dup_ack" };
                (fb, label, Some(ev.value))
            }
            EventKind::Timeout => {
                let fb = on_timeout(&mut sender.subflows[path], &mut sender.packets[idx], ev.value, &mut sender.log);
                (fb, "timeout", None)
            }
        };
        let resolved = fb.is_some() || ev.kind == EventKind::Ack;
        if self.record_trace && resolved {
            self.trace.push(TraceRecord {
                slot,
                ue: ev.ue,
                path,
                seq: ev.seq,
                event: label.into(),
                rtt_s: rtt,
                bytes: scfg.mss_bytes,
            });
        }
        if let Some(fb) = fb {
            feedback.push(fb);
            if ev.kind == EventKind::Ack && self.ues[ev.ue].current == Some(path) {
                if let Some(plan) = plans.get(ev.ue) {
                    self.send(ev.ue, path, ev.time, slot, world, scfg, &plan.features[path], plan.switched);
                }
            }
        }
    }

    /// Runs one slot: every UE with a path sends at slot start, then ACKs
    /// and timeouts are processed in time order until the slot ends (ACKs
    /// clock out further packets on the UE's current path). Returns the
    /// per-UE, per-path slot signals and all scheduler feedback.
    pub fn run_slot(&mut self, slot: usize, world: &WorldState, scfg: &ScenarioConfig, plans: &[SlotPlan<'_>]) -> (Vec<Vec<SlotSignals>>, Vec<Feedback>) {
        let start = slot as f64 * scfg.slot_length_s;
        let end = start + scfg.slot_length_s;
        if let Some(rate) = self.cfg.app_rate_pps {
            for s in &mut self.ues {
                s.tokens = (s.tokens + rate * scfg.slot_length_s).min(rate * scfg.slot_length_s * 4.0);
            }
        }
        let mut feedback = Vec::new();
        for (n, plan) in plans.iter().enumerate() {
            self.ues[n].current = plan.path;
            if let Some(m) = plan.path {
                self.ues[n].subflows[m].counters.active = true;
                self.send(n, m, start, slot, world, scfg, &plan.features[m], plan.switched);
            }
        }
        while let Some(ev) = self.events.peek() {
            if ev.time >= end {
                break;
            }
            let ev = self.events.pop().expect("peeked");
            self.handle(ev, slot, world, scfg, plans, &mut feedback);
        }
        let signals = self
            .ues
            .iter_mut()
            .map(|s| {
                s.subflows
                    .iter_mut()
                    .map(|f| {
                        let mut sig = std::mem::take(&mut f.counters);
                        sig.active |= sig.acked_packets > 0 || sig.loss;
                        sig.interval_s = scfg.slot_length_s;
                        sig
                    })
                    .collect()
            })
            .collect();
        (signals, feedback)
    }

    /// Resolves everything still in flight without sending anything new.
    pub fn drain(&mut self, slot: usize, world: &WorldState, scfg: &ScenarioConfig) -> Vec<Feedback> {
        for s in &mut self.ues {
            s.current = None;
        }
        let mut feedback = Vec::new();
        while let Some(ev) = self.events.pop() {
            self.handle(ev, slot, world, scfg, &[], &mut feedback);
        }
        for s in &mut self.ues {
            for f in &mut s.subflows {
                f.counters = SlotSignals::default();
            }
        }
        feedback
    }

    /// sent == acked + lost + in flight, for every UE.
    pub fn conserves_packets(&self) -> bool {
        self.ues.iter().all(|s| {
            let in_flight: u64 = s.subflows.iter().map(|f| u64::from(f.in_flight)).sum();
            s.log.sent == s.log.acked + s.log.lost + in_flight
                && s.packets.len() as u64 == s.log.sent
        })
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }
}
