//! Latency margins, ISS envelopes, torque-delay admissibility and the Markov
//! jump small-gain test.
//!
//! Certificates are inputs. The only synthesis here is [`lyapunov_solve`],
//! used to build matched certificates for test plants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::MarkovChain;

/// Relative tolerance of the eigenvalue witness for matrix inequalities.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("margin nonpositive")]
    MarginNonpositive,
    #[error("mode {0}: P is not symmetric positive definite")]
    NotSpd(usize),
    #[error("chain has {chain} regimes but {certs} mode certificates were given")]
    ModeCount { chain: usize, certs: usize },
    #[error("mode {0}: certificate dimension differs from mode 0")]
    Dimension(usize),
    #[error("Lyapunov equation is singular; A is not Hurwitz")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovCerts {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(default)]
    pub w_f_lin: f64,
}

impl LyapunovCerts {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be finite and positive"));
            }
        }
        if self.c1 > self.c2 {
            return Err("c1 must not exceed c2".into());
        }
        Ok(())
    }
}

/// `c3/c2 - (alpha1/c1) delta - (alpha2/c1) s_w`.
pub fn latency_margin(c: &LyapunovCerts, delta: f64, s_w: f64) -> f64 {
    c.c3 / c.c2 - c.alpha1 / c.c1 * delta - c.alpha2 / c.c1 * s_w
}

/// Largest delay with positive margin, `None` when even zero delay fails.
pub fn max_admissible_delay(c: &LyapunovCerts, s_w: f64) -> Option<f64> {
    let d = c.c1 / c.alpha1 * (c.c3 / c.c2 - c.alpha2 / c.c1 * s_w);
    (d > 0.0).then_some(d)
}

/// `sqrt(c2/c1) e^{-mu t/2} |x0| + sqrt(c4/(c1 mu)) d_sup` on each grid time.
pub fn iss_envelope(
    c: &LyapunovCerts,
    mu_lat: f64,
    x0_norm: f64,
    d_sup: f64,
    t_grid: &[f64],
) -> Result<Vec<f64>, StabilityError> {
    if !(mu_lat > 0.0) {
        return Err(StabilityError::MarginNonpositive);
    }
    let transient = (c.c2 / c.c1).sqrt() * x0_norm;
    let floor = (c.c4 / (c.c1 * mu_lat)).sqrt() * d_sup;
    Ok(t_grid
        .iter()
        .map(|t| transient * (-mu_lat * t / 2.0).exp() + floor)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorqueModel {
    pub g_t: f64,
    /// `U_T(delta) = u_t0 + u_t1 delta`.
    pub u_t0: f64,
    #[serde(default)]
    pub u_t1: f64,
    pub q_max: f64,
    pub delta_t: f64,
    pub g_bar_t: f64,
}

impl TorqueModel {
    pub fn input_energy(&self, delta_total: f64) -> f64 {
        self.u_t0 + self.u_t1 * delta_total
    }
}

/// `g_T U_T(delta) <= Q_max`.
pub fn torque_delay_admissible(tm: &TorqueModel, delta_total: f64) -> bool {
    tm.g_t * tm.input_energy(delta_total) <= tm.q_max
}

/// Delay-to-gain map `g(delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DelayGain {
    Linear {
        g_bar: f64,
    },
    /// Piecewise-linear through `(delta, g)` knots, held constant outside.
    Table {
        knots: Vec<(f64, f64)>,
    },
}

impl DelayGain {
    pub fn eval(&self, delta: f64) -> f64 {
        match self {
            DelayGain::Linear { g_bar } => g_bar * delta,
            DelayGain::Table { knots } => {
                let Some(first) = knots.first() else {
                    return 0.0;
                };
                if delta <= first.0 {
                    return first.1;
                }
                for w in knots.windows(2) {
                    let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                    if delta <= x1 {
                        return y0 + (y1 - y0) * (delta - x0) / (x1 - x0);
                    }
                }
                knots.last().unwrap().1
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCert {
    pub p: DMatrix<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contraction {
    pub beta: f64,
    /// `(1 + zeta_a) e^{-alpha_a h} + g gamma_a` per mode.
    pub per_mode: Vec<f64>,
    /// `sum_b p_ab P_b <= (1 + zeta_a) P_a` per mode.
    pub jump_ok: Vec<bool>,
    pub jump_condition_ok: bool,
    pub stable: bool,
}

fn check_modes(certs: &[ModeCert], chain: &MarkovChain) -> Result<(), StabilityError> {
    if certs.len() != chain.len() {
        return Err(StabilityError::ModeCount {
            chain: chain.len(),
            certs: certs.len(),
        });
    }
    let n = certs.first().map(|c| c.p.nrows()).unwrap_or(0);
    for (a, c) in certs.iter().enumerate() {
        if c.p.shape() != (n, n) {
            return Err(StabilityError::Dimension(a));
        }
        if c.p != c.p.transpose() && (&c.p - c.p.transpose()).norm() > PSD_TOL * c.p.norm() {
            return Err(StabilityError::NotSpd(a));
        }
        if c.p.clone().cholesky().is_none() {
            return Err(StabilityError::NotSpd(a));
        }
    }
    Ok(())
}

fn jump_mixture(certs: &[ModeCert], chain: &MarkovChain, a: usize) -> DMatrix<f64> {
    let n = certs[a].p.nrows();
    let mut m = DMatrix::zeros(n, n);
    for (b, cert) in certs.iter().enumerate() {
        m += &cert.p * chain.p[a][b];
    }
    m
}

/// `lambda_min(M) >= -tol ||M||` for symmetric `M`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let sym = (m + m.transpose()) * 0.5;
    let scale = sym.norm().max(f64::MIN_POSITIVE);
    sym.symmetric_eigenvalues().min() >= -PSD_TOL * scale
}

/// Small-gain contraction factor and jump-coupling test.
pub fn markov_contraction(
    certs: &[ModeCert],
    chain: &MarkovChain,
    h: f64,
    g_delta: f64,
) -> Result<Contraction, StabilityError> {
    check_modes(certs, chain)?;
    let per_mode: Vec<f64> = certs
        .iter()
        .map(|c| (1.0 + c.zeta) * (-c.alpha * h).exp() + g_delta * c.gamma)
        .collect();
    let jump_ok: Vec<bool> = (0..certs.len())
        .map(|a| is_psd(&(&certs[a].p * (1.0 + certs[a].zeta) - jump_mixture(certs, chain, a))))
        .collect();
    let beta = per_mode.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let jump_condition_ok = jump_ok.iter().all(|&b| b);
    Ok(Contraction {
        beta,
        per_mode,
        jump_ok,
        jump_condition_ok,
        stable: beta < 1.0 && jump_condition_ok,
    })
}

/// Smallest `zeta_a` that satisfies the jump condition for mode `a`:
/// `max(0, lambda_max(P_a^{-1/2} (sum_b p_ab P_b) P_a^{-1/2}) - 1)`.
pub fn minimal_zeta(
    certs: &[ModeCert],
    chain: &MarkovChain,
    a: usize,
) -> Result<f64, StabilityError> {
    check_modes(certs, chain)?;
    let l = certs[a]
        .p
        .clone()
        .cholesky()
        .ok_or(StabilityError::NotSpd(a))?
        .l();
    let l_inv = l.try_inverse().ok_or(StabilityError::NotSpd(a))?;
    let m = &l_inv * jump_mixture(certs, chain, a) * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    Ok((m.symmetric_eigenvalues().max() - 1.0).max(0.0))
}

/// `min_a (1 - (1+zeta_a) e^{-alpha_a h}) / (g_bar gamma_a)`; `None` when
/// some mode does not contract on its own.
pub fn torque_delay_release_bound(
    certs: &[ModeCert],
    chain: &MarkovChain,
    h: f64,
    g_bar_t: f64,
) -> Result<Option<f64>, StabilityError> {
    check_modes(certs, chain)?;
    let mut bound = f64::INFINITY;
    for c in certs {
        let contraction = (1.0 + c.zeta) * (-c.alpha * h).exp();
        if contraction >= 1.0 {
            return Ok(None);
        }
        let slope = g_bar_t * c.gamma;
        if slope > 0.0 {
            bound = bound.min((1.0 - contraction) / slope);
        }
    }
    Ok(Some(bound))
}

/// `beta + gamma_D gamma_L` and whether it is below one.
pub fn leakage_closure(beta: f64, gamma_d: f64, gamma_l: f64) -> (f64, bool) {
    let eff = beta + gamma_d * gamma_l;
    (eff, eff < 1.0)
}

/// Solve `A' P + P A = -Q` through the Kronecker form.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, StabilityError> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    // vec(A'P + PA) = (I kron A' + A' kron I) vec(P)
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, (-q).iter().cloned());
    let sol = k.lu().solve(&rhs).ok_or(StabilityError::Singular)?;
    let p = DMatrix::from_iterator(n, n, sol.iter().cloned());
    Ok((&p + p.transpose()) * 0.5)
}
