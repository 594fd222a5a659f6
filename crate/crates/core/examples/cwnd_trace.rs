//! Runs the same episode under each congestion controller and writes the
//! per-slot window trace of UE 0 to `cwnd_<controller>.csv`.

use sagin_mpquic::cc::ControllerKind;
use sagin_mpquic::harness::{run_episode, EpisodeInput, ExperimentConfig, SchedulerRuntime, Scheme};
use sagin_mpquic::sched::SchedulerKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::scaled();
    for cc in ControllerKind::ALL {
        let scheme = Scheme::new(SchedulerKind::Nnpe, cc);
        let mut rt = SchedulerRuntime::new(scheme.scheduler, &cfg, None);
        let out = run_episode(
            EpisodeInput {
                cfg: &cfg,
                scheme,
                seed: 3,
                episode: 0,
                record_traces: true,
            },
            &mut rt,
        )?;
        let path = format!("cwnd_{cc}.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let mut backoffs = 0;
        for r in out.cwnd_trace.iter().filter(|r| r.ue == 0) {
            backoffs += usize::from(r.event == "handover_backoff");
            w.serialize(r)?;
        }
        w.flush()?;
        println!(
            "{cc:15} goodput {:5.2} Mbit/s  plr {:.4}  ofo rate {:.5}  handover backoffs (ue 0) {backoffs}  -> {path}",
            out.metrics.goodput_bps / 1e6,
            out.metrics.plr,
            out.metrics.ofo_rate
        );
    }
    Ok(())
}
