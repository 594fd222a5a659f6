//! Command-line front end for running experiments.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

use crate::cc::ControllerKind;
use crate::error::Result;
use crate::sched::SchedulerKind;

use super::{run_experiment, ExperimentConfig, ExperimentReport, ExperimentSpec, Scheme};

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "sagin-sim", about = "Multipath scheduling and congestion control simulator")]
pub struct Args {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Scheduler(s), comma separated: random, rr, minrtt, nnpe, gpasp.
    #[arg(long, value_delimiter = ',', value_parser = parse_scheduler)]
    pub scheduler: Vec<SchedulerKind>,
    /// Congestion controller(s), comma separated: phacc, phacc_no_gpasp, olia.
    #[arg(long, value_delimiter = ',', value_parser = parse_cc)]
    pub cc: Vec<ControllerKind>,
    /// Run seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Episodes per seed; training episodes under --train.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Train the learned scheduler and write checkpoints.
    #[arg(long)]
    pub train: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Write per-packet and per-slot window traces.
    #[arg(long)]
    pub export_traces: bool,
}

fn parse_scheduler(s: &str) -> std::result::Result<SchedulerKind, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

fn parse_cc(s: &str) -> std::result::Result<ControllerKind, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

impl Args {
    /// Loads the config file and applies the command-line overrides.
    pub fn resolve(&self) -> Result<ExperimentSpec> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if !self.scheduler.is_empty() || !self.cc.is_empty() {
            let scheds: Vec<SchedulerKind> = if self.scheduler.is_empty() {
                dedup(cfg.run.schemes.iter().map(|s| s.scheduler))
            } else {
                self.scheduler.clone()
            };
            let ccs: Vec<ControllerKind> = if self.cc.is_empty() {
                dedup(cfg.run.schemes.iter().map(|s| s.cc))
            } else {
                self.cc.clone()
            };
            cfg.run.schemes = scheds
                .iter()
                .flat_map(|&s| ccs.iter().map(move |&c| Scheme::new(s, c)))
                .collect();
        }
        if !self.seeds.is_empty() {
            cfg.run.seeds = self.seeds.clone();
        }
        if let Some(n) = self.episodes {
            cfg.run.episodes = n;
        }
        cfg.run.train |= self.train;
        cfg.run.export_traces |= self.export_traces;
        ExperimentSpec::new(cfg, &self.out)
    }
}

fn dedup<T: PartialEq>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

pub fn run(args: &Args) -> Result<ExperimentReport> {
    run_experiment(&args.resolve()?)
}

/// Parses `argv` and runs; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&args) {
        Ok(report) => {
            for (scheme, agg) in &report.schemes {
                let m = |k: &str| agg.metrics.get(k).map_or(f64::NAN, |s| s.mean);
                println!(
                    "{scheme}: rows={} goodput_bps={:.0} ofo_degree={:.4} plr={:.4} reward={:.4}",
                    agg.rows,
                    m("goodput_bps"),
                    m("ofo_degree"),
                    m("plr"),
                    m("reward")
                );
            }
            for f in &report.failures {
                eprintln!("failed: {f}");
            }
            if report.failures.is_empty() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
