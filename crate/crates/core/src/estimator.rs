//! Discrete Kalman filter, innovation statistics, chi-square alarm bounds and
//! the coupled residual gate.
//!
//! Thresholds apply to the squared Mahalanobis norm `d2 = r' S^-1 r`
//! everywhere, so `eta` is a chi-square quantile, not its square root.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::verdict::{Condition, Verdict};

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("covariance degenerate")]
    CovarianceDegenerate,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("measurement dimension must be at least 1")]
    ZeroDimension,
    #[error("surge margin {0} is outside analytic set")]
    OutsideAnalyticSet(f64),
    #[error("{0} must be nonnegative")]
    Negative(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel {
    pub a: DMatrix<f64>,
    /// Input matrix; may have zero columns.
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl KalmanModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn meas_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let n = self.a.nrows();
        let m = self.h.nrows();
        let dim = |what: &str| Err(EstimatorError::Dimension(what.to_string()));
        if self.a.ncols() != n {
            return dim("A must be square");
        }
        if self.b.nrows() != n {
            return dim("B rows must match A");
        }
        if self.h.ncols() != n {
            return dim("H columns must match A");
        }
        if self.q.shape() != (n, n) {
            return dim("Q must be n x n");
        }
        if self.r.shape() != (m, m) {
            return dim("R must be m x m");
        }
        if m == 0 {
            return Err(EstimatorError::ZeroDimension);
        }
        if self.r.clone().cholesky().is_none() {
            return Err(EstimatorError::CovarianceDegenerate);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KalmanState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Innovation {
    pub r: DVector<f64>,
    pub s: DMatrix<f64>,
    pub d2: f64,
}

/// `(P + P') / 2`.
pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// One predict/update cycle with a Joseph-form covariance update.
pub fn kf_step(
    model: &KalmanModel,
    state: &KalmanState,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(KalmanState, Innovation), EstimatorError> {
    let n = model.state_dim();
    if state.x_hat.len() != n || state.p.shape() != (n, n) {
        return Err(EstimatorError::Dimension(
            "state does not match model".into(),
        ));
    }
    if u.len() != model.b.ncols() {
        return Err(EstimatorError::Dimension(
            "input length does not match B".into(),
        ));
    }
    if y.len() != model.meas_dim() {
        return Err(EstimatorError::Dimension(
            "measurement length does not match H".into(),
        ));
    }
    let x_pred = &model.a * &state.x_hat + &model.b * u;
    let p_pred = symmetrize(&(&model.a * &state.p * model.a.transpose() + &model.q));
    let (innovation, s_chol) = innovation(model, &x_pred, &p_pred, y)?;
    // K = P H' S^-1
    let pht = &p_pred * model.h.transpose();
    let k = s_chol.solve(&pht.transpose()).transpose();
    let x_new = x_pred + &k * &innovation.r;
    let i_kh = DMatrix::identity(n, n) - &k * &model.h;
    let p_new = &i_kh * &p_pred * i_kh.transpose() + &k * &model.r * k.transpose();
    Ok((
        KalmanState {
            x_hat: x_new,
            p: symmetrize(&p_new),
        },
        innovation,
    ))
}

fn innovation(
    model: &KalmanModel,
    x_pred: &DVector<f64>,
    p_pred: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(Innovation, nalgebra::Cholesky<f64, nalgebra::Dyn>), EstimatorError> {
    let r = y - &model.h * x_pred;
    let s = symmetrize(&(&model.h * p_pred * model.h.transpose() + &model.r));
    let chol = s
        .clone()
        .cholesky()
        .ok_or(EstimatorError::CovarianceDegenerate)?;
    let d2 = r.dot(&chol.solve(&r)).max(0.0);
    Ok((Innovation { r, s, d2 }, chol))
}

/// Chernoff bound on `P[chi2_{d_y} > eta]`: `inf_theta e^{-theta eta} (1-2 theta)^{-d_y/2}`.
///
/// For `eta > d_y` the infimum is attained at `theta = (1 - d_y/eta)/2`,
/// giving `exp(-(eta - d_y)/2) (eta/d_y)^{d_y/2}`; otherwise it is 1.
pub fn chi_square_tail_bound(eta: f64, d_y: usize) -> Result<f64, EstimatorError> {
    if eta.is_nan() || eta <= 0.0 {
        return Err(EstimatorError::Threshold(eta));
    }
    if d_y == 0 {
        return Err(EstimatorError::ZeroDimension);
    }
    let d = d_y as f64;
    if eta <= d {
        return Ok(1.0);
    }
    let log_bound = -(eta - d) / 2.0 + d / 2.0 * (eta / d).ln();
    Ok(log_bound.exp().min(1.0))
}

/// `eta0 / (1 + beta_s / M_s)`: the alarm threshold tightens near surge.
pub fn surge_coupled_threshold(eta0: f64, beta_s: f64, m_s: f64) -> Result<f64, EstimatorError> {
    if m_s.is_nan() || m_s <= 0.0 {
        return Err(EstimatorError::OutsideAnalyticSet(m_s));
    }
    if eta0.is_nan() || eta0 <= 0.0 {
        return Err(EstimatorError::Threshold(eta0));
    }
    if beta_s.is_nan() || beta_s < 0.0 {
        return Err(EstimatorError::Negative("beta_s"));
    }
    Ok(eta0 / (1.0 + beta_s / m_s))
}

/// Closed-form `d eta / d M_s`.
pub fn surge_threshold_slope(eta0: f64, beta_s: f64, m_s: f64) -> f64 {
    let q = 1.0 + beta_s / m_s;
    eta0 * beta_s / (m_s * m_s * q * q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualGateInputs {
    pub d2: f64,
    pub eta_k: f64,
    pub e_egt: f64,
    pub e_egt_max: f64,
    pub epr_residual: f64,
    pub e_epr: f64,
    /// `|h_RA - h_INS|`.
    pub ra_ins_gap: f64,
    pub e_ra: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualCondition {
    Innovation,
    Egt,
    Epr,
    RadarAltimeter,
}

impl Condition for ResidualCondition {
    fn reason(&self) -> &'static str {
        match self {
            ResidualCondition::Innovation => "innovation",
            ResidualCondition::Egt => "egt residual",
            ResidualCondition::Epr => "epr residual",
            ResidualCondition::RadarAltimeter => "radar-altimeter integrity event",
        }
    }
}

/// Statistical residual gate. Tag verification is checked elsewhere; this
/// gate never sees it.
pub fn residual_gate(g: &ResidualGateInputs) -> Verdict<ResidualCondition> {
    let mut v = Verdict::new();
    v.at_most(ResidualCondition::Innovation, g.d2, g.eta_k)
        .at_most(ResidualCondition::Egt, g.e_egt.abs(), g.e_egt_max)
        .at_most(ResidualCondition::Epr, g.epr_residual.abs(), g.e_epr)
        .at_most(
            ResidualCondition::RadarAltimeter,
            g.ra_ins_gap.abs(),
            g.e_ra,
        );
    v
}
