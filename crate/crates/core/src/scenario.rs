//! Parametric world model: UE placement, UAV waypoint mobility, a single
//! serving LEO satellite sweeping over the area once per service period,
//! per-(UE, path) link quality and handover flags.
//!
//! Every UAV is one path from a UE's point of view, so path `m` and UAV `m`
//! are used interchangeably.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Radio and queueing parameters of one UE–UAV–SAT path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathChannel {
    /// Fixed one-way delay of the satellite/ground segment, seconds.
    pub base_delay_s: f64,
    /// Bottleneck (UAV backhaul) rate at full spectral efficiency, bits/s.
    pub capacity_bps: f64,
    pub snr_max_db: f64,
    /// SNR loss per decade of UE–UAV distance beyond `snr_ref_m`, dB.
    pub snr_decay_db: f64,
    pub snr_ref_m: f64,
    /// Half-width of the uniform SNR noise, dB.
    pub snr_noise_db: f64,
    pub random_loss: f64,
    /// Extra loss probability per dB below `snr_loss_knee_db`.
    pub snr_loss_slope: f64,
    pub snr_loss_knee_db: f64,
    /// Loss probability during the burst part of a handover.
    pub handover_loss: f64,
    pub handover_burst_slots: u32,
    /// Drop-tail buffer of the shared UAV queue, packets.
    pub buffer_packets: usize,
}

impl Default for PathChannel {
    fn default() -> Self {
        PathChannel {
            base_delay_s: 0.025,
            capacity_bps: 8e6,
            snr_max_db: 30.0,
            snr_decay_db: 20.0,
            snr_ref_m: 120.0,
            snr_noise_db: 1.0,
            random_loss: 0.002,
            snr_loss_slope: 0.004,
            snr_loss_knee_db: 14.0,
            handover_loss: 0.15,
            handover_burst_slots: 2,
            buffer_packets: 80,
        }
    }
}

/// Closed waypoint loop flown at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UavTrajectory {
    pub waypoints: Vec<[f64; 2]>,
    pub speed_mps: f64,
    /// Distance already travelled along the loop at t = 0, meters.
    pub phase_m: f64,
}

impl Default for UavTrajectory {
    fn default() -> Self {
        UavTrajectory {
            waypoints: vec![[500.0, 500.0]],
            speed_mps: 0.0,
            phase_m: 0.0,
        }
    }
}

impl UavTrajectory {
    fn perimeter(&self) -> f64 {
        let n = self.waypoints.len();
        if n < 2 {
            return 0.0;
        }
        (0..n)
            .map(|i| dist2(self.waypoints[i], self.waypoints[(i + 1) % n]))
            .sum()
    }

    /// Position after `time_s` seconds.
    pub fn position_at(&self, time_s: f64) -> [f64; 2] {
        let n = self.waypoints.len();
        let perimeter = self.perimeter();
        if n < 2 || perimeter <= 0.0 || self.speed_mps == 0.0 {
            return self.waypoints.first().copied().unwrap_or([0.0, 0.0]);
        }
        let mut s = (self.phase_m + self.speed_mps * time_s).rem_euclid(perimeter);
        for i in 0..n {
            let a = self.waypoints[i];
            let b = self.waypoints[(i + 1) % n];
            let seg = dist2(a, b);
            if s <= seg || i == n - 1 {
                let f = if seg > 0.0 { (s / seg).min(1.0) } else { 0.0 };
                return [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
            }
            s -= seg;
        }
        unreachable!()
    }
}

/// Satellite pass model: the ground track sweeps along x from
/// `-half_span_m` to `+half_span_m` (relative to the area centre) once per
/// service period, at `cross_track_m` lateral offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SatellitePass {
    pub half_span_m: f64,
    pub cross_track_m: f64,
    /// When false the sub-satellite point stays at `-half_span_m`.
    pub moving: bool,
}

impl Default for SatellitePass {
    fn default() -> Self {
        SatellitePass {
            half_span_m: 850_000.0,
            cross_track_m: 0.0,
            moving: true,
        }
    }
}

/// Static description of a scenario. Every field has a default matching the
/// nine-UE, four-UAV, 1 km² setting at 550 km satellite altitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub area_side_m: f64,
    pub num_ues: usize,
    pub num_paths: usize,
    pub sat_altitude_m: f64,
    pub slot_length_s: f64,
    pub slots_per_period: usize,
    /// Maximum concurrent UEs per UAV.
    pub uav_capacity: usize,
    /// UAV–SAT visibility limit, meters.
    pub visibility_limit_m: f64,
    /// UE–UAV handover threshold, meters.
    pub ue_uav_handover_m: f64,
    /// UAV–SAT handover threshold, meters.
    pub uav_sat_handover_m: f64,
    /// UE–UAV distance beyond which the access link is down, meters.
    pub uav_range_m: f64,
    pub uav_altitude_m: f64,
    pub mss_bytes: u32,
    /// Random-walk speed of UEs; zero keeps them static.
    pub ue_speed_mps: f64,
    /// Explicit UE positions; random uniform placement when empty.
    pub ue_positions: Vec<[f64; 2]>,
    /// Switching a UE onto a path raises that path's handover flag.
    pub switch_triggers_handover: bool,
    pub satellite: SatellitePass,
    /// One entry per path; cycled when shorter than `num_paths`.
    pub channels: Vec<PathChannel>,
    /// One entry per UAV; cycled when shorter than `num_paths`.
    pub trajectories: Vec<UavTrajectory>,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let channels = vec![
            PathChannel {
                base_delay_s: 0.015,
                capacity_bps: 5e6,
                ..PathChannel::default()
            },
            PathChannel {
                base_delay_s: 0.025,
                capacity_bps: 8e6,
                ..PathChannel::default()
            },
            PathChannel {
                base_delay_s: 0.040,
                capacity_bps: 10e6,
                ..PathChannel::default()
            },
            PathChannel {
                base_delay_s: 0.060,
                capacity_bps: 12e6,
                ..PathChannel::default()
            },
        ];
        let quadrant = |cx: f64, cy: f64, phase: f64| UavTrajectory {
            waypoints: vec![
                [cx - 200.0, cy - 200.0],
                [cx + 200.0, cy - 200.0],
                [cx + 200.0, cy + 200.0],
                [cx - 200.0, cy + 200.0],
            ],
            speed_mps: 15.0,
            phase_m: phase,
        };
        let trajectories = vec![
            quadrant(250.0, 250.0, 0.0),
            quadrant(750.0, 250.0, 400.0),
            quadrant(750.0, 750.0, 800.0),
            quadrant(250.0, 750.0, 1200.0),
        ];
        ScenarioConfig {
            area_side_m: 1000.0,
            num_ues: 9,
            num_paths: 4,
            sat_altitude_m: 550_000.0,
            slot_length_s: 0.1,
            slots_per_period: 600,
            uav_capacity: 4,
            visibility_limit_m: 1_050_000.0,
            ue_uav_handover_m: 700.0,
            uav_sat_handover_m: 950_000.0,
            uav_range_m: 1_600.0,
            uav_altitude_m: 120.0,
            mss_bytes: 1200,
            ue_speed_mps: 0.0,
            ue_positions: Vec::new(),
            switch_triggers_handover: true,
            satellite: SatellitePass::default(),
            channels,
            trajectories,
            rng_seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Reduced scenario used for desk-scale training: three UEs and two
    /// heterogeneous UAV paths. UAV 0 is fast but lower-capacity and its
    /// patrol takes it away from the UEs for part of every lap, which
    /// produces regular handovers. Its link fades quickly with distance, so
    /// the lowest-RTT path is also the lossy one on the far leg.
    pub fn scaled() -> Self {
        let channels = vec![
            PathChannel {
                base_delay_s: 0.015,
                capacity_bps: 6e6,
                snr_decay_db: 30.0,
                snr_loss_slope: 0.02,
                buffer_packets: 60,
                ..PathChannel::default()
            },
            PathChannel {
                base_delay_s: 0.055,
                capacity_bps: 9e6,
                buffer_packets: 60,
                ..PathChannel::default()
            },
        ];
        let trajectories = vec![
            UavTrajectory {
                waypoints: vec![[300.0, 500.0], [1000.0, 500.0], [1000.0, 1000.0], [300.0, 1000.0]],
                speed_mps: 40.0,
                phase_m: 0.0,
            },
            UavTrajectory {
                waypoints: vec![[400.0, 300.0], [600.0, 300.0], [600.0, 500.0], [400.0, 500.0]],
                speed_mps: 10.0,
                phase_m: 0.0,
            },
        ];
        ScenarioConfig {
            num_ues: 3,
            num_paths: 2,
            slots_per_period: 200,
            uav_capacity: 3,
            ue_uav_handover_m: 650.0,
            ue_positions: vec![[350.0, 350.0], [500.0, 450.0], [650.0, 300.0]],
            channels,
            trajectories,
            ..ScenarioConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ScenarioConfig = toml::from_str(&text).map_err(|source| Error::ConfigParse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.area_side_m > 0.0) {
            return bad("area_side_m must be positive");
        }
        if self.num_ues == 0 || self.num_paths == 0 {
            return bad("num_ues and num_paths must be at least 1");
        }
        if !(self.slot_length_s > 0.0) || self.slots_per_period == 0 {
            return bad("slot_length_s must be positive and slots_per_period at least 1");
        }
        if self.uav_capacity == 0 {
            return bad("uav_capacity must be at least 1");
        }
        if !(self.visibility_limit_m > 0.0) {
            return bad("visibility_limit_m must be positive");
        }
        if self.channels.is_empty() || self.trajectories.is_empty() {
            return bad("channels and trajectories must be non-empty");
        }
        if self.mss_bytes == 0 {
            return bad("mss_bytes must be positive");
        }
        for ch in &self.channels {
            for p in [ch.random_loss, ch.handover_loss] {
                if !(0.0..=1.0).contains(&p) {
                    return bad("loss probabilities must lie in [0, 1]");
                }
            }
            if !(ch.capacity_bps >= 0.0) || !(ch.base_delay_s > 0.0) || !(ch.snr_ref_m > 0.0) {
                return bad("channel capacity must be >= 0, base delay and snr_ref_m > 0");
            }
        }
        if !self.ue_positions.is_empty() && self.ue_positions.len() != self.num_ues {
            return bad("ue_positions must be empty or list one position per UE");
        }
        Ok(())
    }

    pub fn channel(&self, path: usize) -> &PathChannel {
        &self.channels[path % self.channels.len()]
    }

    pub fn trajectory(&self, path: usize) -> &UavTrajectory {
        &self.trajectories[path % self.trajectories.len()]
    }

    /// Service period T = N_T · τ in seconds.
    pub fn period_s(&self) -> f64 {
        self.slots_per_period as f64 * self.slot_length_s
    }

    /// Sum of path capacities, the goodput normaliser for one UE stream set.
    pub fn capacity_bound_bps(&self) -> f64 {
        (0..self.num_paths).map(|m| self.channel(m).capacity_bps).sum()
    }
}

/// Link quality of one (UE, path) pair during the current slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub ue: usize,
    pub path: usize,
    pub up: bool,
    pub capacity_bps: f64,
    /// One-way propagation delay UE → server, seconds.
    pub prop_delay_s: f64,
    pub snr_db: f64,
    pub ue_uav_distance_m: f64,
    pub uav_sat_distance_m: f64,
    pub loss_prob: f64,
    pub handover_active: bool,
    /// Consecutive slots the handover flag has been raised.
    pub handover_age: u32,
    /// The UE switched onto this path in the current slot.
    pub switched_in: bool,
}

/// A violated constraint of the optimisation problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// UE outside the L_E × L_E service area.
    OutOfArea { ue: usize },
    /// More than Y^U UEs served by one UAV.
    UavOverloaded { uav: usize, served: usize },
    /// UAV beyond the satellite visibility range.
    NotVisible { uav: usize },
}

/// Mutable world state advanced once per slot.
#[derive(Debug, Clone, Serialize)]
pub struct WorldState {
    pub slot: usize,
    pub ue_positions: Vec<[f64; 2]>,
    pub uav_positions: Vec<[f64; 2]>,
    /// Sub-satellite point (x, y) in area coordinates.
    pub sat_ground: [f64; 2],
    /// `links[n][m]`.
    pub links: Vec<Vec<LinkState>>,
    /// UEs admitted per UAV in the current slot.
    pub served: Vec<usize>,
    /// Number of times a UE position was clamped back into the area.
    pub clamp_events: usize,
    #[serde(skip)]
    rng: ChaCha8Rng,
}

impl WorldState {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5CE4_A210);
        let ue_positions = if cfg.ue_positions.is_empty() {
            (0..cfg.num_ues)
                .map(|_| {
                    [
                        rng.random::<f64>() * cfg.area_side_m,
                        rng.random::<f64>() * cfg.area_side_m,
                    ]
                })
                .collect()
        } else {
            cfg.ue_positions.clone()
        };
        let mut world = WorldState {
            slot: 0,
            ue_positions,
            uav_positions: vec![[0.0, 0.0]; cfg.num_paths],
            sat_ground: [0.0, 0.0],
            links: Vec::new(),
            served: vec![0; cfg.num_paths],
            clamp_events: 0,
            rng,
        };
        world.recompute(cfg);
        world
    }

    pub fn time_s(&self, cfg: &ScenarioConfig) -> f64 {
        self.slot as f64 * cfg.slot_length_s
    }

    pub fn link(&self, ue: usize, path: usize) -> &LinkState {
        &self.links[ue][path]
    }

    /// Moves to the next slot: UAVs follow their loops, the satellite track
    /// advances, UEs random-walk (clamped to the area) and all link states
    /// are recomputed.
    pub fn advance_slot(&mut self, cfg: &ScenarioConfig) {
        self.slot += 1;
        if cfg.ue_speed_mps > 0.0 {
            let step = cfg.ue_speed_mps * cfg.slot_length_s;
            for i in 0..self.ue_positions.len() {
                let angle = self.rng.random::<f64>() * std::f64::consts::TAU;
                let mut p = self.ue_positions[i];
                p[0] += step * angle.cos();
                p[1] += step * angle.sin();
                let clamped = [p[0].clamp(0.0, cfg.area_side_m), p[1].clamp(0.0, cfg.area_side_m)];
                if clamped != p {
                    self.clamp_events += 1;
                }
                self.ue_positions[i] = clamped;
            }
        }
        self.recompute(cfg);
    }

    fn recompute(&mut self, cfg: &ScenarioConfig) {
        let t = self.time_s(cfg);
        for m in 0..cfg.num_paths {
            self.uav_positions[m] = cfg.trajectory(m).position_at(t);
        }
        let centre = cfg.area_side_m / 2.0;
        let sweep = if cfg.satellite.moving {
            let frac = (self.slot % cfg.slots_per_period) as f64 / cfg.slots_per_period as f64;
            -cfg.satellite.half_span_m + 2.0 * cfg.satellite.half_span_m * frac
        } else {
            -cfg.satellite.half_span_m
        };
        self.sat_ground = [centre + sweep, centre + cfg.satellite.cross_track_m];

        let prev = std::mem::take(&mut self.links);
        let mut links = Vec::with_capacity(cfg.num_ues);
        for n in 0..cfg.num_ues {
            let mut row = Vec::with_capacity(cfg.num_paths);
            for m in 0..cfg.num_paths {
                let ch = cfg.channel(m);
                let uav = self.uav_positions[m];
                let ue = self.ue_positions[n];
                let horiz = dist2(ue, uav);
                let d_nm = (horiz * horiz + cfg.uav_altitude_m * cfg.uav_altitude_m).sqrt();
                let dx = self.sat_ground[0] - uav[0];
                let dy = self.sat_ground[1] - uav[1];
                let dz = cfg.sat_altitude_m - cfg.uav_altitude_m;
                let d_ml = (dx * dx + dy * dy + dz * dz).sqrt();

                let noise = if ch.snr_noise_db > 0.0 {
                    (self.rng.random::<f64>() * 2.0 - 1.0) * ch.snr_noise_db
                } else {
                    0.0
                };
                let snr_db = snr_at(ch, d_nm, noise);
                let up = d_ml <= cfg.visibility_limit_m && d_nm <= cfg.uav_range_m;
                let capacity_bps = if up {
                    ch.capacity_bps * spectral_efficiency(snr_db, ch.snr_max_db)
                } else {
                    0.0
                };
                let prop_delay_s = ch.base_delay_s + (d_nm + d_ml) / SPEED_OF_LIGHT;
                let geo_handover = d_nm > cfg.ue_uav_handover_m || d_ml > cfg.uav_sat_handover_m;
                let prev_age = prev
                    .get(n)
                    .and_then(|r: &Vec<LinkState>| r.get(m))
                    .filter(|l| l.handover_active)
                    .map_or(0, |l| l.handover_age);
                let mut link = LinkState {
                    ue: n,
                    path: m,
                    up,
                    capacity_bps,
                    prop_delay_s,
                    snr_db,
                    ue_uav_distance_m: d_nm,
                    uav_sat_distance_m: d_ml,
                    loss_prob: 0.0,
                    handover_active: geo_handover,
                    handover_age: if geo_handover { prev_age + 1 } else { 0 },
                    switched_in: false,
                };
                link.loss_prob = loss_prob(ch, &link);
                row.push(link);
            }
            links.push(row);
        }
        self.links = links;
        self.served.iter_mut().for_each(|s| *s = 0);
    }

    /// Registers this slot's scheduling actions: admission against Y^U (in
    /// UE index order) and switch-induced handover flags. Returns the
    /// admitted path per UE; `None` for UEs without a path or blocked by a
    /// full UAV.
    pub fn apply_actions(
        &mut self,
        cfg: &ScenarioConfig,
        prev: &[Option<usize>],
        cur: &[Option<usize>],
    ) -> Vec<Option<usize>> {
        self.served.iter_mut().for_each(|s| *s = 0);
        let mut admitted = vec![None; cur.len()];
        for (n, action) in cur.iter().enumerate() {
            let Some(m) = *action else { continue };
            if !self.links[n][m].up || self.served[m] >= cfg.uav_capacity {
                continue;
            }
            self.served[m] += 1;
            admitted[n] = Some(m);
            let switched = prev.get(n).copied().flatten() != Some(m);
            if switched && cfg.switch_triggers_handover {
                let ch = cfg.channel(m);
                let link = &mut self.links[n][m];
                link.switched_in = true;
                if !link.handover_active {
                    link.handover_active = true;
                    link.handover_age = 1;
                }
                link.loss_prob = loss_prob(ch, link);
            }
        }
        admitted
    }

    /// Checks C1 (UE inside the area), C2 (per-UAV service limit) and C3
    /// (UAV within satellite visibility). Empty iff all hold.
    pub fn constraints_ok(&self, cfg: &ScenarioConfig) -> Vec<Violation> {
        let mut out = Vec::new();
        for (n, p) in self.ue_positions.iter().enumerate() {
            let inside = (0.0..=cfg.area_side_m).contains(&p[0]) && (0.0..=cfg.area_side_m).contains(&p[1]);
            if !inside {
                out.push(Violation::OutOfArea { ue: n });
            }
        }
        for (m, &served) in self.served.iter().enumerate() {
            if served > cfg.uav_capacity {
                out.push(Violation::UavOverloaded { uav: m, served });
            }
        }
        for m in 0..self.uav_positions.len() {
            let visible = self
                .links
                .first()
                .map_or(true, |row| row[m].uav_sat_distance_m <= cfg.visibility_limit_m);
            if !visible {
                out.push(Violation::NotVisible { uav: m });
            }
        }
        out
    }

    /// Compact text form used to compare trajectories bit for bit.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("world state serialises")
    }
}

/// Handover predicate Con_1 for subflow `path` of UE `ue`: the per-path
/// selection indicator changed, or the UE–UAV distance exceeds d_th, or the
/// UAV–SAT distance exceeds d'_th.
pub fn handover_signal(
    ue: usize,
    path: usize,
    world: &WorldState,
    cfg: &ScenarioConfig,
    prev_action: Option<usize>,
    cur_action: Option<usize>,
) -> bool {
    let link = world.link(ue, path);
    let selection_changed = (prev_action == Some(path)) != (cur_action == Some(path));
    selection_changed
        || link.ue_uav_distance_m > cfg.ue_uav_handover_m
        || link.uav_sat_distance_m > cfg.uav_sat_handover_m
}

/// SNR = SNR_max − k·log10(d / d_ref) + noise, never above SNR_max.
pub fn snr_at(ch: &PathChannel, distance_m: f64, noise_db: f64) -> f64 {
    let ratio = (distance_m / ch.snr_ref_m).max(1.0);
    (ch.snr_max_db - ch.snr_decay_db * ratio.log10() + noise_db).min(ch.snr_max_db)
}

/// Shannon efficiency relative to the efficiency at SNR_max, in (0, 1].
pub fn spectral_efficiency(snr_db: f64, snr_max_db: f64) -> f64 {
    let eff = |db: f64| (1.0 + 10f64.powf(db / 10.0)).log2();
    (eff(snr_db) / eff(snr_max_db)).clamp(0.0, 1.0)
}

fn loss_prob(ch: &PathChannel, link: &LinkState) -> f64 {
    if link.handover_active && link.handover_age <= ch.handover_burst_slots {
        return ch.handover_loss;
    }
    let deficit = (ch.snr_loss_knee_db - link.snr_db).max(0.0);
    (ch.random_loss + ch.snr_loss_slope * deficit).clamp(0.0, 1.0)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        for t in &mut cfg.trajectories {
            t.speed_mps = 0.0;
        }
        for c in &mut cfg.channels {
            c.snr_noise_db = 0.0;
        }
        cfg.satellite.moving = false;
        cfg
    }

    #[test]
    fn static_scenario_keeps_links_constant() {
        let cfg = static_cfg();
        let mut w = WorldState::new(&cfg);
        // Handover age keeps counting for UEs parked beyond the threshold.
        let strip = |links: &Vec<Vec<LinkState>>| {
            let mut l = links.clone();
            l.iter_mut().flatten().for_each(|x| x.handover_age = 0);
            l
        };
        for _ in 0..5 {
            w.advance_slot(&cfg);
        }
        let first = strip(&w.links);
        for _ in 0..20 {
            w.advance_slot(&cfg);
            assert_eq!(strip(&w.links), first);
        }
    }

    #[test]
    fn uav_leaving_visibility_goes_down_at_crossing_slot() {
        // SAT fixed above x = 0 (area centre at 500 shifted by -500).
        let mut cfg = static_cfg();
        cfg.num_paths = 1;
        cfg.num_ues = 1;
        cfg.ue_positions = vec![[0.0, 0.0]];
        cfg.uav_range_m = 1e9;
        cfg.satellite = SatellitePass {
            half_span_m: 500.0,
            cross_track_m: -500.0,
            moving: false,
        };
        cfg.slot_length_s = 1.0;
        cfg.trajectories = vec![UavTrajectory {
            waypoints: vec![[0.0, 0.0], [1000.0, 0.0]],
            speed_mps: 10.0,
            phase_m: 0.0,
        }];
        let dz = cfg.sat_altitude_m - cfg.uav_altitude_m;
        // Horizontal offset 305 m is crossed between t = 30 s and t = 31 s.
        cfg.visibility_limit_m = (dz * dz + 305.0f64 * 305.0).sqrt();
        let mut w = WorldState::new(&cfg);
        let mut first_down = None;
        for _ in 0..60 {
            if !w.links[0][0].up && first_down.is_none() {
                first_down = Some(w.slot);
            }
            w.advance_slot(&cfg);
        }
        assert_eq!(first_down, Some(31));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let mut cfg = ScenarioConfig::default();
        cfg.ue_speed_mps = 2.0;
        let run = || {
            let mut w = WorldState::new(&cfg);
            let mut out = Vec::new();
            for _ in 0..100 {
                w.advance_slot(&cfg);
                out.push(w.fingerprint());
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn default_scenario_satisfies_constraints() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        let w = WorldState::new(&cfg);
        assert!(w.constraints_ok(&cfg).is_empty());
    }

    #[test]
    fn ue_outside_area_is_c1_violation() {
        let cfg = ScenarioConfig::default();
        let mut w = WorldState::new(&cfg);
        w.ue_positions[3] = [cfg.area_side_m + 1.0, 0.0];
        assert_eq!(w.constraints_ok(&cfg), vec![Violation::OutOfArea { ue: 3 }]);
    }

    #[test]
    fn overloaded_uav_is_c2_violation() {
        let mut cfg = ScenarioConfig::default();
        cfg.uav_capacity = 1;
        let mut w = WorldState::new(&cfg);
        w.served[2] = 2;
        assert_eq!(
            w.constraints_ok(&cfg),
            vec![Violation::UavOverloaded { uav: 2, served: 2 }]
        );
    }

    #[test]
    fn admission_respects_uav_capacity() {
        let mut cfg = ScenarioConfig::default();
        cfg.uav_capacity = 2;
        let mut w = WorldState::new(&cfg);
        let cur = vec![Some(1); cfg.num_ues];
        let admitted = w.apply_actions(&cfg, &vec![None; cfg.num_ues], &cur);
        assert_eq!(admitted.iter().filter(|a| a.is_some()).count(), 2);
        assert!(w.constraints_ok(&cfg).is_empty());
    }

    #[test]
    fn handover_signal_cases() {
        let cfg = ScenarioConfig::default();
        let mut w = WorldState::new(&cfg);
        for l in w.links.iter_mut().flatten() {
            l.ue_uav_distance_m = 100.0;
            l.uav_sat_distance_m = 600_000.0;
        }
        assert!(!handover_signal(0, 1, &w, &cfg, Some(1), Some(1)));
        assert!(handover_signal(0, 1, &w, &cfg, Some(1), Some(2)));
        assert!(handover_signal(0, 2, &w, &cfg, Some(1), Some(2)));
        w.links[0][1].uav_sat_distance_m = cfg.uav_sat_handover_m + 1.0;
        assert!(handover_signal(0, 1, &w, &cfg, Some(1), Some(1)));
    }

    #[test]
    fn switch_raises_handover_burst() {
        let cfg = ScenarioConfig::default();
        let mut w = WorldState::new(&cfg);
        let m = (0..cfg.num_paths).find(|&m| w.links[0][m].up).unwrap();
        w.links[0][m].handover_active = false;
        w.links[0][m].handover_age = 0;
        let mut cur = vec![None; cfg.num_ues];
        cur[0] = Some(m);
        w.apply_actions(&cfg, &vec![None; cfg.num_ues], &cur);
        let l = &w.links[0][m];
        assert!(l.handover_active && l.switched_in);
        assert_eq!(l.loss_prob, cfg.channel(m).handover_loss);
    }

    #[test]
    fn trajectory_interpolates_along_loop() {
        let t = UavTrajectory {
            waypoints: vec![[0.0, 0.0], [100.0, 0.0], [100.0, 100.0], [0.0, 100.0]],
            speed_mps: 10.0,
            phase_m: 0.0,
        };
        assert_eq!(t.position_at(5.0), [50.0, 0.0]);
        assert_eq!(t.position_at(15.0), [100.0, 50.0]);
        assert_eq!(t.position_at(40.0), [0.0, 0.0]);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ScenarioConfig::scaled();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = ScenarioConfig::from_toml_str("num_ues = 5\n").unwrap();
        assert_eq!(partial.num_ues, 5);
        assert_eq!(partial.num_paths, 4);
        assert!(ScenarioConfig::from_toml_str("bogus = 1\n").is_err());
    }
}
