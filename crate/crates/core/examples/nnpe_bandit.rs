//! Closed-form preference estimation on a synthetic two-path problem.
//! Path 1 answers faster, so after a few ACKs the estimate ranks it first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sagin_mpquic::sched::{select_path_nnpe, PreferenceEstimate};

fn main() -> sagin_mpquic::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut est = PreferenceEstimate::new(3);
    // Features: (srtt, throughput, bias).
    let features = [vec![0.6, 0.3, 1.0], vec![0.2, 0.7, 1.0]];
    let up = [true, true];
    for round in 0..40 {
        let pick = select_path_nnpe(&est, &features, &up, || Some(rng.random_range(0..2))).unwrap();
        // Response time grows with srtt plus noise.
        let t = 0.05 + features[pick][0] * 0.2 + rng.random::<f64>() * 0.01;
        est.record_feedback(&features[pick], 1.0, t)?;
        if round % 8 == 7 {
            println!("after {:2} acks: theta = {:?} -> path {pick}", round + 1, est.estimate());
        }
    }
    Ok(())
}
