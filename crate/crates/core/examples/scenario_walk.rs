//! Steps the scaled scenario and prints what UE 0 sees on each path:
//! whether the relay is reachable, its SNR, loss probability and handover flag.
//!
//!     cargo run --example scenario_walk -- 200

use sagin_mpquic::scenario::{ScenarioConfig, WorldState};

fn main() {
    let slots: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let cfg = ScenarioConfig::scaled();
    let mut world = WorldState::new(&cfg);
    println!("slot  path  up   snr_db  loss    dist_m  handover");
    for _ in 0..slots {
        if world.slot % 10 == 0 {
            for m in 0..cfg.num_paths {
                let l = world.link(0, m);
                println!(
                    "{:4}  {:4}  {:<4} {:6.1}  {:.4}  {:6.0}  {}",
                    world.slot, m, l.up, l.snr_db, l.loss_prob, l.ue_uav_distance_m, l.handover_active
                );
            }
        }
        world.advance_slot(&cfg);
    }
    let bad = world.constraints_ok(&cfg);
    println!("constraint violations at the end: {}", bad.len());
}
