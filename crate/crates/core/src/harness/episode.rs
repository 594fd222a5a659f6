use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cc::{Activation, CcState, Controller};
use crate::error::Result;
use crate::gpasp::{ActMode, Agent, Step, Trajectory};
use crate::metrics::{summarize, EpisodeMetrics, SummaryContext};
use crate::scenario::{ScenarioConfig, WorldState};
use crate::sched::{
    min_rtt_select, path_features, random_select, select_path_nnpe, PathObservation, PreferenceEstimate, RoundRobin,
    SchedulerKind, FEATURE_DIM,
};
use crate::transport::{Feedback, PacketStatus, SlotPlan, TraceRecord, Transport};

use super::{ExperimentConfig, Scheme};

/// Features per path in a learned-scheduler observation row.
pub const GPASP_PATH_FEATURES: usize = 6;

/// Width d_h of one observation row.
pub fn gpasp_obs_dim(num_paths: usize, noise_channels: usize) -> usize {
    GPASP_PATH_FEATURES * num_paths + noise_channels
}

/// Seed of episode `episode` of run seed `seed`. Every scheme sees the
/// same world for the same pair.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (episode as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Per-slot window state of one subflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwndRecord {
    pub slot: usize,
    pub ue: usize,
    pub path: usize,
    pub cwnd: f64,
    pub sst: f64,
    pub phase: String,
    pub event: String,
}

/// Scheduler state that outlives a single episode.
#[derive(Debug, Clone)]
pub struct SchedulerRuntime {
    pub kind: SchedulerKind,
    pub nnpe: Vec<PreferenceEstimate>,
    /// Recent feedback per UE, replayed on a light refit.
    pub feedback: Vec<VecDeque<Feedback>>,
    pub buffer_len: usize,
    pub agent: Option<Agent>,
    pub act_mode: ActMode,
    /// Keep learned-scheduler transitions for training.
    pub collect: bool,
}

impl SchedulerRuntime {
    pub fn new(kind: SchedulerKind, cfg: &ExperimentConfig, agent: Option<Agent>) -> Self {
        let n = cfg.scenario.num_ues;
        let estimate = || {
            let mut e = PreferenceEstimate::new(FEATURE_DIM);
            e.ridge_scale = cfg.nnpe.ridge_scale;
            e.decay = cfg.nnpe.decay;
            e
        };
        SchedulerRuntime {
            kind,
            nnpe: (0..n).map(|_| estimate()).collect(),
            feedback: vec![VecDeque::new(); n],
            buffer_len: cfg.nnpe.buffer_len,
            agent,
            act_mode: ActMode::Greedy,
            collect: false,
        }
    }

    /// Clears every preference estimate and refits it from the buffered feedback.
    pub fn refit_nnpe(&mut self) {
        for (est, buf) in self.nnpe.iter_mut().zip(&self.feedback) {
            let (scale, decay) = (est.ridge_scale, est.decay);
            *est = PreferenceEstimate::new(est.dim);
            est.ridge_scale = scale;
            est.decay = decay;
            for f in buf {
                // Response times are validated when first recorded.
                let _ = est.record_feedback(&f.features, f.choice, f.response_time);
            }
        }
    }

    fn absorb(&mut self, fb: Vec<Feedback>) {
        for f in fb {
            let ue = f.ue;
            if self.kind == SchedulerKind::Nnpe {
                let _ = self.nnpe[ue].record_feedback(&f.features, f.choice, f.response_time);
            }
            let buf = &mut self.feedback[ue];
            buf.push_back(f);
            if buf.len() > self.buffer_len {
                buf.pop_front();
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeInput<'a> {
    pub cfg: &'a ExperimentConfig,
    pub scheme: Scheme,
    pub seed: u64,
    pub episode: usize,
    pub record_traces: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub metrics: EpisodeMetrics,
    /// Mean per-slot reward over every UE-slot with a decision.
    pub reward: f64,
    /// Mean reward of each slot across deciding UEs.
    pub slot_rewards: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    pub packet_trace: Vec<TraceRecord>,
    pub cwnd_trace: Vec<CwndRecord>,
    /// Whether the scenario constraints held on every slot.
    pub constraints_held: bool,
}

fn observation_row(
    world: &WorldState,
    scfg: &ScenarioConfig,
    tr: &Transport,
    ue: usize,
    now: f64,
    last_tput: &[f64],
    last_loss: &[bool],
    noise: usize,
    rng: &mut impl Rng,
    capacity: f64,
) -> Vec<f64> {
    let mut row = Vec::with_capacity(gpasp_obs_dim(scfg.num_paths, noise));
    for m in 0..scfg.num_paths {
        let link = world.link(ue, m);
        let cc = &tr.ues[ue].subflows[m].cc;
        let srtt = cc.est.srtt_s.unwrap_or(2.0 * link.prop_delay_s);
        let backlog = (tr.queues[m].free_at - now).max(0.0);
        row.extend_from_slice(&[
            (srtt / 0.5).min(1.0),
            (link.snr_db / scfg.channel(m).snr_max_db).clamp(0.0, 1.0),
            (last_tput[m] / capacity).min(1.0),
            if last_loss[m] { 1.0 } else { 0.0 },
            (cc.cwnd / 64.0).min(1.0),
            (backlog / 0.5).min(1.0),
        ]);
    }
    for _ in 0..noise {
        row.push(rng.sample(StandardNormal));
    }
    row
}

/// Runs one episode of `horizon` slots followed by a drain phase.
pub fn run_episode(input: EpisodeInput<'_>, rt: &mut SchedulerRuntime) -> Result<EpisodeOutput> {
    let cfg = input.cfg;
    let eseed = episode_seed(input.seed, input.episode);
    let mut scfg = cfg.scenario.clone();
    scfg.rng_seed = eseed;
    let horizon = cfg.horizon();
    let tau = scfg.slot_length_s;
    let (n_ue, n_path) = (scfg.num_ues, scfg.num_paths);
    let mss = scfg.mss_bytes;
    let scales = cfg.feature_scales();
    let window_len = cfg.gpasp.history_len;
    let noise = cfg.gpasp.noise_channels;
    let obs_dim = gpasp_obs_dim(n_path, noise);
    let use_agent = rt.kind == SchedulerKind::Gpasp;
    if use_agent && rt.agent.is_none() {
        return Err(crate::Error::Config("the gpasp scheduler needs a trained agent".into()));
    }

    let mut world = WorldState::new(&scfg);
    let controller = Controller::new(input.scheme.cc, &cfg.cc);
    let mut tr = Transport::new(&scfg, cfg.transport.clone(), &cfg.cc, eseed);
    tr.record_trace = input.record_traces;
    let mut rng = ChaCha8Rng::seed_from_u64(eseed ^ 0x5C4E_D000_0000_0001);

    let mut prev: Vec<Option<usize>> = vec![None; n_ue];
    let mut last_tput = vec![vec![0.0; n_path]; n_ue];
    let mut last_loss = vec![vec![false; n_path]; n_ue];
    let mut down_since_use = vec![vec![false; n_path]; n_ue];
    let mut windows: Vec<VecDeque<Vec<f64>>> =
        vec![std::iter::repeat_n(vec![0.0; obs_dim], window_len).collect(); n_ue];
    let mut rr = vec![RoundRobin::default(); n_ue];
    let mut steps: Vec<Vec<(usize, Step)>> = vec![Vec::new(); n_ue];
    let mut decided = vec![vec![false; horizon]; n_ue];
    let mut cwnd_trace = Vec::new();
    let mut constraints_held = true;
    let capacity_share = scfg.capacity_bound_bps() / n_ue as f64;

    for slot in 0..horizon {
        if slot > 0 {
            world.advance_slot(&scfg);
        }
        let now = slot as f64 * tau;

        let mut feats = vec![vec![Vec::new(); n_path]; n_ue];
        let mut up = vec![vec![false; n_path]; n_ue];
        let mut srtt = vec![vec![0.0; n_path]; n_ue];
        for n in 0..n_ue {
            for m in 0..n_path {
                let link = world.link(n, m);
                let sub = &tr.ues[n].subflows[m];
                if !link.up {
                    down_since_use[n][m] = true;
                }
                up[n][m] = link.up;
                srtt[n][m] = sub.cc.est.srtt_s.unwrap_or(2.0 * link.prop_delay_s);
                let obs = PathObservation {
                    up: link.up,
                    srtt_s: srtt[n][m],
                    snr_db: link.snr_db,
                    throughput_bps: last_tput[n][m],
                    cwnd: sub.cc.cwnd,
                    in_flight: f64::from(sub.in_flight),
                    recent_loss: last_loss[n][m],
                };
                feats[n][m] = path_features(&obs, &scales);
            }
            if use_agent {
                let row = observation_row(
                    &world,
                    &scfg,
                    &tr,
                    n,
                    now,
                    &last_tput[n],
                    &last_loss[n],
                    noise,
                    &mut rng,
                    scales.capacity_bps,
                );
                windows[n].pop_front();
                windows[n].push_back(row);
            }
        }

        let mut cur = vec![None; n_ue];
        for n in 0..n_ue {
            cur[n] = match rt.kind {
                SchedulerKind::Random => random_select(&up[n], &mut rng),
                SchedulerKind::Rr => rr[n].select(&up[n]),
                SchedulerKind::Minrtt => min_rtt_select(&up[n], &srtt[n]),
                SchedulerKind::Nnpe => select_path_nnpe(&rt.nnpe[n], &feats[n], &up[n], || min_rtt_select(&up[n], &srtt[n])),
                SchedulerKind::Gpasp => {
                    let agent = rt.agent.as_ref().expect("checked above");
                    let obs: Vec<f64> = windows[n].iter().flatten().copied().collect();
                    match agent.act(&obs, &up[n], rt.act_mode, &mut rng)? {
                        Some(act) => {
                            if rt.collect {
                                steps[n].push((
                                    slot,
                                    Step {
                                        obs,
                                        up: up[n].clone(),
                                        eps: act.eps,
                                        action: act.action,
                                        old_log_prob: act.log_prob,
                                        reward: 0.0,
                                        next_obs: Vec::new(),
                                        done: false,
                                    },
                                ));
                            }
                            Some(act.action)
                        }
                        None => None,
                    }
                }
            };
            decided[n][slot] = cur[n].is_some();
        }

        let admitted = world.apply_actions(&scfg, &prev, &cur);
        if !world.constraints_ok(&scfg).is_empty() {
            constraints_held = false;
        }

        for n in 0..n_ue {
            let Some(m) = admitted[n] else { continue };
            let sub = &tr.ues[n].subflows[m];
            let t_max = cfg.transport.timeout.t_max(sub.cc.est.srtt_s);
            let why = if !sub.activated {
                Some(Activation::Created)
            } else if down_since_use[n][m] {
                Some(Activation::Reconnected)
            } else if prev[n] != Some(m)
                && sub.in_flight == 0
                && sub.last_send_time.is_none_or(|t| now - t > t_max)
            {
                Some(Activation::AfterIdle)
            } else {
                None
            };
            down_since_use[n][m] = false;
            if let Some(why) = why {
                tr.ues[n].subflows[m].activated = true;
                let mut flows: Vec<CcState> = tr.ues[n].cc_states();
                controller.on_activate(&mut flows, m, why, mss);
                for (s, f) in tr.ues[n].subflows.iter_mut().zip(flows) {
                    s.cc = f;
                }
            }
        }

        let plans: Vec<SlotPlan<'_>> = (0..n_ue)
            .map(|n| SlotPlan {
                path: admitted[n],
                features: &feats[n],
                switched: admitted[n].is_some() && admitted[n] != prev[n],
            })
            .collect();
        let (mut signals, feedback) = tr.run_slot(slot, &world, &scfg, &plans);
        drop(plans);
        rt.absorb(feedback);
        if rt.kind == SchedulerKind::Nnpe {
            rt.nnpe.iter_mut().for_each(PreferenceEstimate::decay_slot);
        }

        for n in 0..n_ue {
            for m in 0..n_path {
                let link = world.link(n, m);
                let s = &mut signals[n][m];
                s.switched_now = (prev[n] == Some(m)) != (admitted[n] == Some(m));
                s.geo_handover_now =
                    link.ue_uav_distance_m > scfg.ue_uav_handover_m || link.uav_sat_distance_m > scfg.uav_sat_handover_m;
                s.snr_db = link.snr_db;
                s.snr_max_db = scfg.channel(m).snr_max_db;
                last_tput[n][m] = s.acked_bytes as f64 * 8.0 / tau;
                last_loss[n][m] = s.loss;
            }
            let mut flows = tr.ues[n].cc_states();
            controller.on_slot_end(&mut flows, &signals[n], mss);
            for (m, (s, f)) in tr.ues[n].subflows.iter_mut().zip(flows).enumerate() {
                s.cc = f;
                if input.record_traces {
                    cwnd_trace.push(CwndRecord {
                        slot,
                        ue: n,
                        path: m,
                        cwnd: s.cc.cwnd,
                        sst: s.cc.sst,
                        phase: s.cc.phase().to_string(),
                        event: s.cc.last_event.to_string(),
                    });
                }
            }
        }
        prev = admitted;
    }

    let drained = tr.drain(horizon, &world, &scfg);
    rt.absorb(drained);
    debug_assert!(tr.conserves_packets());

    let logs: Vec<_> = tr.ues.iter().map(|u| u.log.clone()).collect();
    let metrics = summarize(
        &logs,
        &SummaryContext {
            packet_bytes: mss,
            duration_s: horizon as f64 * tau,
            capacity_bound_bps: scfg.capacity_bound_bps(),
            weights: cfg.objective,
        },
    );

    // Per-slot rewards: goodput and reorder cost of the packets sent in each slot.
    let bits = f64::from(mss) * 8.0;
    let mut rewards = vec![vec![0.0; horizon]; n_ue];
    for n in 0..n_ue {
        let u = &tr.ues[n];
        let ranks = u.log.ranks_in_seq_order();
        let seqs = u.log.delivered_seqs();
        let mut count = vec![0usize; horizon];
        let mut fsum = vec![0.0; horizon];
        for (i, &seq) in seqs.iter().enumerate() {
            let p = &u.packets[(seq - 1) as usize];
            debug_assert_eq!(p.status, PacketStatus::Acked);
            let f = match ranks.get(i + 1) {
                Some(&next) if ranks[i] > next => (ranks[i] - next) as f64,
                _ => 0.0,
            };
            if p.send_slot < horizon {
                count[p.send_slot] += 1;
                fsum[p.send_slot] += f;
            }
        }
        for t in 0..horizon {
            let gp = count[t] as f64 * bits / tau / capacity_share;
            let ofo = if count[t] > 0 { fsum[t] / count[t] as f64 } else { 0.0 };
            rewards[n][t] = cfg.objective.goodput * gp - cfg.objective.ofo * ofo;
        }
    }
    let mut slot_rewards = vec![0.0; horizon];
    let mut total = 0.0;
    let mut decisions = 0usize;
    for (t, sr) in slot_rewards.iter_mut().enumerate() {
        let mut k = 0usize;
        for n in 0..n_ue {
            if decided[n][t] {
                *sr += rewards[n][t];
                k += 1;
            }
        }
        total += *sr;
        decisions += k;
        if k > 0 {
            *sr /= k as f64;
        }
    }
    let reward = if decisions > 0 { total / decisions as f64 } else { 0.0 };

    let mut trajectories = Vec::new();
    if rt.collect {
        for (n, ue_steps) in steps.into_iter().enumerate() {
            let final_obs: Vec<f64> = windows[n].iter().flatten().copied().collect();
            let len = ue_steps.len();
            let mut out: Vec<Step> = Vec::with_capacity(len);
            for (i, (slot, mut step)) in ue_steps.into_iter().enumerate() {
                step.reward = rewards[n][slot];
                step.done = i + 1 == len;
                out.push(step);
            }
            for i in 0..len {
                out[i].next_obs = if i + 1 < len { out[i + 1].obs.clone() } else { final_obs.clone() };
            }
            trajectories.push(Trajectory { steps: out });
        }
    }

    Ok(EpisodeOutput {
        metrics,
        reward,
        slot_rewards,
        trajectories,
        packet_trace: std::mem::take(&mut tr.trace),
        cwnd_trace,
        constraints_held,
    })
}
