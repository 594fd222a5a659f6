//! Runs every baseline scheduler next to NNPE on the scaled scenario and
//! writes the full output tree (episode CSV, aggregates, plot data).
//!
//!     cargo run --release --example compare_schedulers -- out/compare

use sagin_mpquic::cc::ControllerKind;
use sagin_mpquic::harness::{run_experiment, ExperimentConfig, ExperimentSpec, Scheme};
use sagin_mpquic::sched::SchedulerKind;

fn main() -> sagin_mpquic::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/compare".into());
    let mut cfg = ExperimentConfig::scaled();
    cfg.run.seeds = (1..=5).collect();
    cfg.run.episodes = 3;
    cfg.run.schemes = [SchedulerKind::Random, SchedulerKind::Rr, SchedulerKind::Minrtt, SchedulerKind::Nnpe]
        .into_iter()
        .map(|s| Scheme::new(s, ControllerKind::Phacc))
        .collect();
    let report = run_experiment(&ExperimentSpec::new(cfg, &out)?)?;
    println!("{:16} {:>12} {:>8} {:>10}", "scheme", "goodput", "plr", "ofo rate");
    for (scheme, agg) in &report.schemes {
        let m = |k: &str| agg.metrics[k].mean;
        println!("{scheme:16} {:>12.0} {:>8.4} {:>10.5}", m("goodput_bps"), m("plr"), m("ofo_rate"));
    }
    println!("results in {out}");
    Ok(())
}
