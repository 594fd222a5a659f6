use crate::error::{Error, Result};

/// Closed-form preference estimate of one UE.
///
/// Keeps the raw sums Σ S Sᵀ and Σ S·(c/t̃); the ridge term is added at
/// solve time as `ridge_scale · max(trace/d, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceEstimate {
    pub dim: usize,
    /// Row-major d×d sum of outer products.
    pub gram: Vec<f64>,
    pub moment: Vec<f64>,
    pub count: u64,
    pub ridge_scale: f64,
    /// Per-slot forgetting factor applied to both sums (1.0 disables).
    pub decay: f64,
}

impl PreferenceEstimate {
    pub fn new(dim: usize) -> Self {
        PreferenceEstimate {
            dim,
            gram: vec![0.0; dim * dim],
            moment: vec![0.0; dim],
            count: 0,
            ridge_scale: 1e-6,
            decay: 0.999,
        }
    }

    pub fn record_feedback(&mut self, s: &[f64], choice: f64, response_time: f64) -> Result<()> {
        if !(response_time > 0.0) {
            return Err(Error::NonPositiveResponseTime(response_time));
        }
        if s.len() != self.dim {
            return Err(Error::Shape {
                expected: (self.dim, 1),
                got: (s.len(), 1),
            });
        }
        let y = choice / response_time;
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.gram[i * self.dim + j] += s[i] * s[j];
            }
            self.moment[i] += s[i] * y;
        }
        self.count += 1;
        Ok(())
    }

    pub fn decay_slot(&mut self) {
        if self.decay < 1.0 {
            self.gram.iter_mut().for_each(|g| *g *= self.decay);
            self.moment.iter_mut().for_each(|v| *v *= self.decay);
        }
    }

    pub fn ridge(&self) -> f64 {
        let trace: f64 = (0..self.dim).map(|i| self.gram[i * self.dim + i]).sum();
        self.ridge_scale * (trace / self.dim as f64).max(1.0)
    }

    /// θ̂ = (Σ S Sᵀ + ε I)⁻¹ Σ S c/t̃.
    pub fn estimate(&self) -> Vec<f64> {
        let mut g = self.gram.clone();
        let mut theta = self.moment.clone();
        self.solve_into(&mut g, &mut theta);
        theta
    }

    /// Writes θ̂ into `theta` using `g` (dim² long) as scratch; zeros when
    /// the system is singular.
    fn solve_into(&self, g: &mut [f64], theta: &mut [f64]) {
        let d = self.dim;
        g.copy_from_slice(&self.gram);
        theta.copy_from_slice(&self.moment);
        let eps = self.ridge();
        for i in 0..d {
            g[i * d + i] += eps;
        }
        if !cholesky_solve_in_place(g, theta, d) {
            theta.fill(0.0);
        }
    }

    pub fn warmed_up(&self) -> bool {
        self.count >= self.dim as u64
    }
}

/// Solves A x = b for symmetric positive definite A (row-major n×n).
/// Returns `None` if A is not positive definite.
pub fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = a[..n * n].to_vec();
    let mut x = b[..n].to_vec();
    cholesky_solve_in_place(&mut l, &mut x, n).then_some(x)
}

/// In-place variant: `a` is overwritten by its lower factor, `x` holds b on
/// entry and the solution on success.
fn cholesky_solve_in_place(a: &mut [f64], x: &mut [f64], n: usize) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return false;
                }
                a[i * n + i] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    for i in 0..n {
        let mut sum = x[i];
        for k in 0..i {
            sum -= a[i * n + k] * x[k];
        }
        x[i] = sum / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut sum = x[i];
        for k in i + 1..n {
            sum -= a[k * n + i] * x[k];
        }
        x[i] = sum / a[i * n + i];
    }
    true
}

/// Argmax of S·θ̂ over up paths, ties to the lowest index. Falls back to
/// `cold_start` until the estimate has `dim` samples.
pub fn select_path_nnpe(
    est: &PreferenceEstimate,
    features: &[Vec<f64>],
    up: &[bool],
    cold_start: impl FnOnce() -> Option<usize>,
) -> Option<usize> {
    if !up.iter().any(|&u| u) {
        return None;
    }
    if !est.warmed_up() {
        return cold_start();
    }
    // Stack scratch for the usual small feature dimension.
    const SMALL: usize = 16;
    let d = est.dim;
    let (mut g_small, mut t_small) = ([0.0; SMALL * SMALL], [0.0; SMALL]);
    let (mut g_heap, mut t_heap);
    let (g, theta): (&mut [f64], &mut [f64]) = if d <= SMALL {
        (&mut g_small[..d * d], &mut t_small[..d])
    } else {
        g_heap = vec![0.0; d * d];
        t_heap = vec![0.0; d];
        (&mut g_heap, &mut t_heap)
    };
    est.solve_into(g, theta);
    let theta = &*theta;
    let mut best: Option<(usize, f64)> = None;
    for (m, s) in features.iter().enumerate() {
        if !up[m] {
            continue;
        }
        let score: f64 = s.iter().zip(theta).map(|(a, b)| a * b).sum();
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((m, score));
        }
    }
    best.map(|(m, _)| m)
}
