//! Trains the learned scheduler on the scaled scenario and saves a checkpoint.
//!
//!     cargo run --release --example train_gpasp -- 200 gpasp.json

use sagin_mpquic::cc::ControllerKind;
use sagin_mpquic::harness::{train_agent, ExperimentConfig, Scheme};
use sagin_mpquic::sched::SchedulerKind;

fn main() -> sagin_mpquic::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let out = args.next().unwrap_or_else(|| "gpasp.json".into());

    let cfg = ExperimentConfig::scaled();
    let scheme = Scheme::new(SchedulerKind::Gpasp, ControllerKind::Phacc);
    let t = train_agent(&cfg, scheme, 1, episodes)?;
    for (i, chunk) in t.episode_rewards.chunks(25).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("episodes {:3}..{:3}  mean reward {mean:.4}", i * 25, i * 25 + chunk.len());
    }
    if let Some(last) = t.log.last() {
        println!(
            "last update: policy {:.4} value {:.4} aux {:.4} lambda {:.3}",
            last.policy_loss, last.value_loss, last.aux_loss, last.lambda
        );
    }
    t.agent.save(out.as_ref())?;
    println!("checkpoint written to {out}");
    Ok(())
}
