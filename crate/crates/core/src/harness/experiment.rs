use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpasp::{ActMode, Agent, TrainLogRow};
use crate::metrics::EpisodeMetrics;
use crate::rhrm::{Decision, DecisionRecord, MonitorState};
use crate::sched::SchedulerKind;

use super::episode::{gpasp_obs_dim, run_episode, CwndRecord, EpisodeInput, SchedulerRuntime};
use super::{ExperimentConfig, ExperimentSpec, Scheme};
use crate::transport::TraceRecord;

/// One line of `episodes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scheme: String,
    pub scheduler: String,
    pub cc: String,
    pub seed: u64,
    pub episode: usize,
    /// `train` or `eval`.
    pub mode: String,
    pub reward: f64,
    pub throughput_packets: u64,
    pub goodput_bps: f64,
    pub ofo_degree: f64,
    pub median_ofo_degree: f64,
    pub ofo_rate: f64,
    pub plr: f64,
    pub pdr: f64,
    pub mean_delay_s: f64,
    pub jitter_s: f64,
    pub objective: f64,
    pub sent: u64,
    pub lost: u64,
    pub empty: bool,
}

impl EpisodeRow {
    fn new(scheme: Scheme, seed: u64, episode: usize, mode: &str, reward: f64, m: &EpisodeMetrics) -> Self {
        EpisodeRow {
            scheme: scheme.label(),
            scheduler: scheme.scheduler.to_string(),
            cc: scheme.cc.to_string(),
            seed,
            episode,
            mode: mode.into(),
            reward,
            throughput_packets: m.throughput_packets,
            goodput_bps: m.goodput_bps,
            ofo_degree: m.ofo_degree,
            median_ofo_degree: m.median_ofo_degree,
            ofo_rate: m.ofo_rate,
            plr: m.plr,
            pdr: m.pdr,
            mean_delay_s: m.mean_delay_s,
            jitter_s: m.jitter_s,
            objective: m.objective,
            sent: m.sent,
            lost: m.lost,
            empty: m.empty,
        }
    }

    /// Numeric columns aggregated in `aggregate.json`.
    pub fn metric_values(&self) -> [(&'static str, f64); 12] {
        [
            ("reward", self.reward),
            ("throughput_packets", self.throughput_packets as f64),
            ("goodput_bps", self.goodput_bps),
            ("ofo_degree", self.ofo_degree),
            ("median_ofo_degree", self.median_ofo_degree),
            ("ofo_rate", self.ofo_rate),
            ("plr", self.plr),
            ("pdr", self.pdr),
            ("mean_delay_s", self.mean_delay_s),
            ("jitter_s", self.jitter_s),
            ("objective", self.objective),
            ("lost", self.lost as f64),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Sample standard deviation (0 for a single row).
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rows: usize,
    pub metrics: BTreeMap<String, MetricStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schemes: BTreeMap<String, Aggregate>,
    pub failures: Vec<String>,
}

/// Result of training the learned scheduler for one seed.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub episode_rewards: Vec<f64>,
    pub metrics: Vec<EpisodeMetrics>,
    pub log: Vec<TrainLogRow>,
}

/// Fresh agent sized for the config.
pub fn new_agent(cfg: &ExperimentConfig, seed: u64) -> Agent {
    let mut g = cfg.gpasp.clone();
    g.seed ^= seed.wrapping_mul(0x2545_F491_4F6C_DD1D);
    Agent::new(g, cfg.scenario.num_paths, gpasp_obs_dim(cfg.scenario.num_paths, cfg.gpasp.noise_channels))
}

fn train_episodes(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    seed: u64,
    episodes: std::ops::Range<usize>,
    schedule_len: usize,
    rt: &mut SchedulerRuntime,
    out: &mut TrainOutcome,
) -> Result<()> {
    let (mode, collect) = (rt.act_mode, rt.collect);
    rt.act_mode = ActMode::Sample;
    rt.collect = true;
    let last = cfg.gpasp.lr_final_fraction;
    for ep in episodes {
        // Linear decay over the schedule, then hold at the final fraction.
        let scale = if ep < schedule_len {
            1.0 - (1.0 - last) * ep as f64 / schedule_len as f64
        } else {
            last
        };
        rt.agent.as_mut().expect("training needs an agent").lr_scale = scale;
        let res = run_episode(
            EpisodeInput {
                cfg,
                scheme,
                seed,
                episode: ep,
                record_traces: false,
            },
            rt,
        )?;
        let agent = rt.agent.as_mut().expect("training needs an agent");
        let reports = agent.train(&res.trajectories)?;
        for r in reports {
            out.log.push(TrainLogRow {
                update: agent.updates,
                episode: ep,
                policy_loss: r.policy,
                value_loss: r.value,
                entropy: r.entropy,
                aux_loss: r.aux,
                lambda: r.lambda,
                g_rl: r.g_rl,
                g_aux: r.g_aux,
                reward: res.reward,
            });
        }
        out.episode_rewards.push(res.reward);
        out.metrics.push(res.metrics);
    }
    rt.act_mode = mode;
    rt.collect = collect;
    Ok(())
}

/// Trains a fresh learned scheduler on `episodes` episodes of run seed `seed`.
pub fn train_agent(cfg: &ExperimentConfig, scheme: Scheme, seed: u64, episodes: usize) -> Result<TrainOutcome> {
    let agent = new_agent(cfg, seed);
    let mut rt = SchedulerRuntime::new(SchedulerKind::Gpasp, cfg, Some(agent));
    let mut out = TrainOutcome {
        agent: rt.agent.clone().expect("set above"),
        episode_rewards: Vec::new(),
        metrics: Vec::new(),
        log: Vec::new(),
    };
    train_episodes(cfg, scheme, seed, 0..episodes, episodes, &mut rt, &mut out)?;
    out.agent = rt.agent.take().expect("set above");
    Ok(out)
}

#[derive(Debug, Default)]
struct SeedResult {
    rows: Vec<EpisodeRow>,
    training: Vec<TrainLogRow>,
    monitor: Vec<DecisionRecord>,
    packet_traces: Vec<(usize, Vec<TraceRecord>)>,
    cwnd_traces: Vec<(usize, Vec<CwndRecord>)>,
    checkpoint: Option<Agent>,
}

fn run_seed(spec: &ExperimentSpec, scheme: Scheme, seed: u64) -> Result<SeedResult> {
    let cfg = &spec.config;
    let episodes = cfg.run.episodes;
    let mut res = SeedResult::default();

    if scheme.scheduler == SchedulerKind::Gpasp && cfg.run.train {
        let t = train_agent(cfg, scheme, seed, episodes)?;
        for (ep, (r, m)) in t.episode_rewards.iter().zip(&t.metrics).enumerate() {
            res.rows.push(EpisodeRow::new(scheme, seed, ep, "train", *r, m));
        }
        res.training = t.log;
        res.checkpoint = Some(t.agent);
        return Ok(res);
    }

    let agent = if scheme.scheduler == SchedulerKind::Gpasp {
        Some(Agent::load(&spec.checkpoint_path(seed))?)
    } else {
        None
    };
    let mut rt = SchedulerRuntime::new(scheme.scheduler, cfg, agent);
    let mut monitor = MonitorState::new(cfg.monitor.params);
    let mut retrain = TrainOutcome {
        agent: new_agent(cfg, seed),
        episode_rewards: Vec::new(),
        metrics: Vec::new(),
        log: Vec::new(),
    };
    let mut extra_episode = episodes;
    for ep in 0..episodes {
        let out = run_episode(
            EpisodeInput {
                cfg,
                scheme,
                seed,
                episode: ep,
                record_traces: cfg.run.export_traces,
            },
            &mut rt,
        )?;
        res.rows.push(EpisodeRow::new(scheme, seed, ep, "eval", out.reward, &out.metrics));
        if cfg.run.export_traces {
            res.packet_traces.push((ep, out.packet_trace));
            res.cwnd_traces.push((ep, out.cwnd_trace));
        }
        if cfg.monitor.enabled {
            match monitor.observe(out.metrics.objective) {
                Decision::Continue => {}
                Decision::LightRefit => rt.refit_nnpe(),
                Decision::FullRetrain => {
                    if rt.agent.is_some() && cfg.monitor.retrain_episodes > 0 {
                        let range = extra_episode..extra_episode + cfg.monitor.retrain_episodes;
                        extra_episode = range.end;
                        train_episodes(cfg, scheme, seed, range, 0, &mut rt, &mut retrain)?;
                    } else {
                        rt.refit_nnpe();
                    }
                }
            }
        }
    }
    res.training = retrain.log;
    res.monitor = std::mem::take(&mut monitor.log);
    Ok(res)
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn stats(values: &[f64]) -> MetricStats {
    let n = values.len();
    if n == 0 {
        return MetricStats { mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricStats { mean, std }
}

fn aggregate(rows: &[EpisodeRow]) -> BTreeMap<String, Aggregate> {
    let mut groups: BTreeMap<String, Vec<&EpisodeRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.scheme.clone()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(scheme, rs)| {
            let mut metrics = BTreeMap::new();
            for (i, (name, _)) in rs[0].metric_values().iter().enumerate() {
                let vals: Vec<f64> = rs.iter().map(|r| r.metric_values()[i].1).collect();
                metrics.insert((*name).to_string(), stats(&vals));
            }
            (
                scheme,
                Aggregate {
                    rows: rs.len(),
                    metrics,
                },
            )
        })
        .collect()
}

#[derive(Serialize)]
struct ConvergencePoint<'a> {
    scheme: &'a str,
    seed: u64,
    episode: usize,
    mode: &'a str,
    goodput_bps: f64,
    reward: f64,
}

#[derive(Serialize)]
struct BarRow<'a> {
    scheme: &'a str,
    plr_mean: f64,
    plr_std: f64,
    ofo_rate_mean: f64,
    ofo_rate_std: f64,
}

#[derive(Serialize)]
struct QosRow<'a> {
    scheme: &'a str,
    mean_delay_s: f64,
    jitter_s: f64,
    pdr: f64,
}

#[derive(Serialize)]
struct OfoPoint<'a> {
    scheme: &'a str,
    seed: u64,
    episode: usize,
    ofo_degree: f64,
    median_ofo_degree: f64,
}

/// Writes the figure data files, computed from episode rows only.
fn write_plot_data(dir: &Path, rows: &[EpisodeRow], agg: &BTreeMap<String, Aggregate>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(
        &dir.join("throughput_convergence.csv"),
        rows.iter().map(|r| ConvergencePoint {
            scheme: &r.scheme,
            seed: r.seed,
            episode: r.episode,
            mode: &r.mode,
            goodput_bps: r.goodput_bps,
            reward: r.reward,
        }),
    )?;
    write_csv(
        &dir.join("plr_ofo_rate.csv"),
        agg.iter().map(|(s, a)| BarRow {
            scheme: s,
            plr_mean: a.metrics["plr"].mean,
            plr_std: a.metrics["plr"].std,
            ofo_rate_mean: a.metrics["ofo_rate"].mean,
            ofo_rate_std: a.metrics["ofo_rate"].std,
        }),
    )?;
    write_csv(
        &dir.join("delay_jitter_pdr.csv"),
        agg.iter().map(|(s, a)| QosRow {
            scheme: s,
            mean_delay_s: a.metrics["mean_delay_s"].mean,
            jitter_s: a.metrics["jitter_s"].mean,
            pdr: a.metrics["pdr"].mean,
        }),
    )?;
    write_csv(
        &dir.join("ofo_degree_distribution.csv"),
        rows.iter().map(|r| OfoPoint {
            scheme: &r.scheme,
            seed: r.seed,
            episode: r.episode,
            ofo_degree: r.ofo_degree,
            median_ofo_degree: r.median_ofo_degree,
        }),
    )
}

/// Reads back an `episodes.csv` file.
pub fn read_episode_rows(path: &Path) -> Result<Vec<EpisodeRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Serialize)]
struct TrainingCsvRow<'a> {
    scheme: &'a str,
    seed: u64,
    update: u64,
    episode: usize,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    aux_loss: f64,
    lambda: f64,
    g_rl: f64,
    g_aux: f64,
    reward: f64,
}

#[derive(Serialize)]
struct MonitorCsvRow<'a> {
    scheme: &'a str,
    seed: u64,
    step: u64,
    rwd: f64,
    srwd: f64,
    dev: f64,
    #[serde(rename = "F")]
    fluctuation: f64,
    cnt: i64,
    decision: Decision,
}

/// Runs every (scheme, seed) combination and writes the output tree:
///
/// ```text
/// <out>/episodes.csv            one row per episode
/// <out>/aggregate.json          mean/std per metric per scheme, plus failures
/// <out>/plots/*.csv             figure data derived from episodes.csv
/// <out>/training_log.csv        per-update losses (learned scheduler)
/// <out>/monitor_log.csv         reward-monitor decisions
/// <out>/checkpoints/gpasp_seed<seed>.json
/// <out>/traces/{packets,cwnd}_<scheme>_seed<seed>_ep<episode>.csv
/// ```
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let cfg = &spec.config;
    let out = &spec.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let jobs: Vec<(Scheme, u64)> = cfg
        .run
        .schemes
        .iter()
        .flat_map(|&s| cfg.run.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let threads = if cfg.run.threads == 0 { jobs.len() } else { cfg.run.threads }.max(1);
    let mut results: Vec<Option<Result<SeedResult>>> = (0..jobs.len()).map(|_| None).collect();
    for (chunk_jobs, chunk_out) in jobs.chunks(threads).zip(results.chunks_mut(threads)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_jobs
                .iter()
                .map(|&(scheme, seed)| s.spawn(move || run_seed(spec, scheme, seed)))
                .collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().unwrap_or_else(|_| Err(Error::Config("worker panicked".into()))));
            }
        });
    }

    let mut rows = Vec::new();
    let mut training = Vec::new();
    let mut monitor = Vec::new();
    let mut failures = Vec::new();
    for ((scheme, seed), res) in jobs.iter().zip(results) {
        let label = scheme.label();
        match res.expect("every job ran") {
            Ok(r) => {
                rows.extend(r.rows);
                training.extend(r.training.into_iter().map(|t| (label.clone(), *seed, t)));
                monitor.extend(r.monitor.into_iter().map(|d| (label.clone(), *seed, d)));
                if let Some(agent) = r.checkpoint {
                    let dir = spec.checkpoint_dir();
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    agent.save(&spec.checkpoint_path(*seed))?;
                }
                if !r.packet_traces.is_empty() {
                    let dir = out.join("traces");
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    let stem = label.replace('+', "_");
                    for (ep, t) in r.packet_traces {
                        write_csv(&dir.join(format!("packets_{stem}_seed{seed}_ep{ep}.csv")), t)?;
                    }
                    for (ep, t) in r.cwnd_traces {
                        write_csv(&dir.join(format!("cwnd_{stem}_seed{seed}_ep{ep}.csv")), t)?;
                    }
                }
            }
            Err(e) => failures.push(format!("{label} seed {seed}: {e}")),
        }
    }

    write_csv(&out.join("episodes.csv"), &rows)?;
    // Derive everything else from the file just written.
    let rows = read_episode_rows(&out.join("episodes.csv"))?;
    let schemes = aggregate(&rows);
    write_plot_data(&out.join("plots"), &rows, &schemes)?;
    if !training.is_empty() {
        write_csv(
            &out.join("training_log.csv"),
            training.iter().map(|(s, seed, r)| TrainingCsvRow {
                scheme: s,
                seed: *seed,
                update: r.update,
                episode: r.episode,
                policy_loss: r.policy_loss,
                value_loss: r.value_loss,
                entropy: r.entropy,
                aux_loss: r.aux_loss,
                lambda: r.lambda,
                g_rl: r.g_rl,
                g_aux: r.g_aux,
                reward: r.reward,
            }),
        )?;
    }
    if !monitor.is_empty() {
        write_csv(
            &out.join("monitor_log.csv"),
            monitor.iter().map(|(s, seed, d)| MonitorCsvRow {
                scheme: s,
                seed: *seed,
                step: d.step,
                rwd: d.rwd,
                srwd: d.srwd,
                dev: d.dev,
                fluctuation: d.fluctuation,
                cnt: d.cnt,
                decision: d.decision,
            }),
        )?;
    }
    let report = ExperimentReport { schemes, failures };
    let json = serde_json::to_string_pretty(&report)?;
    let path = out.join("aggregate.json");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
