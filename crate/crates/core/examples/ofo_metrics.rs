//! Out-of-order metrics on hand-made arrival orders, then on one simulated
//! episode where a round-robin scheduler alternates between a fast and a
//! slow path.

use sagin_mpquic::cc::ControllerKind;
use sagin_mpquic::harness::{run_episode, EpisodeInput, ExperimentConfig, SchedulerRuntime, Scheme};
use sagin_mpquic::metrics::ofo_degree;
use sagin_mpquic::sched::SchedulerKind;

fn main() -> sagin_mpquic::Result<()> {
    for ranks in [vec![1, 2, 3, 4, 5], vec![5, 4, 3, 2, 1], vec![1, 3, 2, 4], vec![2, 1, 4, 3]] {
        let (degree, rate) = ofo_degree(&ranks)?;
        println!("{ranks:?}: degree {degree:.3}, rate {rate:.3}");
    }

    let cfg = ExperimentConfig::scaled();
    for sched in [SchedulerKind::Minrtt, SchedulerKind::Rr] {
        let scheme = Scheme::new(sched, ControllerKind::Phacc);
        let mut rt = SchedulerRuntime::new(sched, &cfg, None);
        let out = run_episode(
            EpisodeInput {
                cfg: &cfg,
                scheme,
                seed: 1,
                episode: 0,
                record_traces: false,
            },
            &mut rt,
        )?;
        let m = &out.metrics;
        println!(
            "{:14} delivered {:6}  ofo degree {:.4}  median {:.4}  rate {:.5}  plr {:.4}",
            scheme.label(),
            m.throughput_packets,
            m.ofo_degree,
            m.median_ofo_degree,
            m.ofo_rate,
            m.plr
        );
    }
    Ok(())
}
