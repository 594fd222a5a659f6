use rand::Rng;

/// Uniform choice among up paths.
pub fn random_select(up: &[bool], rng: &mut impl Rng) -> Option<usize> {
    let candidates: Vec<usize> = (0..up.len()).filter(|&m| up[m]).collect();
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.random_range(0..candidates.len())])
    }
}

/// Lowest SRTT among up paths, ties to the lowest index.
pub fn min_rtt_select(up: &[bool], srtt: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for m in (0..up.len()).filter(|&m| up[m]) {
        if best.is_none_or(|b| srtt[m] < srtt[b]) {
            best = Some(m);
        }
    }
    best
}

/// Strict rotation that skips down paths.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundRobin {
    next: usize,
}

impl RoundRobin {
    pub fn select(&mut self, up: &[bool]) -> Option<usize> {
        let n = up.len();
        for k in 0..n {
            let m = (self.next + k) % n;
            if up[m] {
                self.next = (m + 1) % n;
                return Some(m);
            }
        }
        None
    }
}
