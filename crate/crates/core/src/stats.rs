//! Small statistics helpers for the Monte Carlo checks.

use serde::Serialize;

/// Binomial proportion with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// Plug-in standard error `sqrt(p(1-p)/n)`.
    pub std_error: f64,
}

const Z95: f64 = 1.959_963_984_540_054;

impl Proportion {
    /// Wilson score interval; with zero successes the upper end is the
    /// rule-of-three value `3/n`. `None` when there are no trials.
    pub fn wilson(successes: u64, trials: u64) -> Option<Self> {
        if trials == 0 {
            return None;
        }
        let n = trials as f64;
        let p = successes as f64 / n;
        let std_error = (p * (1.0 - p) / n).sqrt();
        let (lower, upper) = if successes == 0 {
            (0.0, (3.0 / n).min(1.0))
        } else {
            let z2 = Z95 * Z95;
            let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
            let half = Z95 / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
            ((centre - half).max(0.0), (centre + half).min(1.0))
        };
        Some(Self {
            successes,
            trials,
            estimate: p,
            lower,
            upper,
            std_error,
        })
    }

    /// `estimate <= bound + k * SE`, the domination test used throughout.
    pub fn dominated_by(&self, bound: f64, k: f64) -> bool {
        self.estimate <= bound + k * self.std_error.max(bound_std_error(bound, self.trials))
    }
}

/// Standard error of a Bernoulli mean at probability `p`. Used so that a
/// zero empirical count does not shrink the tolerance to zero.
pub fn bound_std_error(p: f64, trials: u64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / trials.max(1) as f64).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// `log(sum(exp(v)))` without overflow.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Sample autocorrelation at `lag`.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let m = mean(xs);
    let var: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let cov: f64 = xs.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum();
    cov / var
}
