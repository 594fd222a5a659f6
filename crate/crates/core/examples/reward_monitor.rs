//! Feeds the reward monitor a stable stream that then drops sharply and
//! prints every escalation. The full decision log goes to `monitor_log.csv`.

use sagin_mpquic::rhrm::{Decision, MonitorParams, MonitorState};

fn main() -> sagin_mpquic::Result<()> {
    let mut mon = MonitorState::new(MonitorParams::default());
    for step in 0..120 {
        let reward = if step < 60 { 1.0 + 0.01 * (step % 3) as f64 } else { 0.2 };
        let d = mon.observe(reward);
        if d != Decision::Continue {
            println!("step {step:3}: reward {reward:.2} -> {d:?}");
        }
    }
    let path = "monitor_log.csv";
    let file = std::fs::File::create(path).map_err(|e| sagin_mpquic::Error::Config(e.to_string()))?;
    mon.write_log(file)?;
    println!("{} decisions written to {path}", mon.log.len());
    Ok(())
}
