//! Linearized dual-spool plant: state vector, compressor-map geometry, surge
//! margin, torsional sampling limit, stress-regime gate and the actuation
//! window.
//!
//! Units follow the configuration file. Spool speeds, temperatures and flows
//! are deviations in linearized units. The Lipschitz constants `l_ndot`,
//! `l_w` and `l_s` map one second of release delay to spool-acceleration,
//! fuel-flow and surge-margin erosion respectively, so every term of
//! [`actuation_window`] is a time in seconds.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verdict::{Condition, Verdict};

pub const STATE_DIM: usize = 8;
pub const INPUT_DIM: usize = 2;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("integration step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("samples per torsional period must exceed 2, got {0}")]
    SamplingRatio(f64),
    #[error("torsional parameters must be positive")]
    TorsionalParams,
    #[error("plant state is not finite")]
    NonFinite,
}

/// Plant state, ordered `N_L, N_H, T_t4, pi_c, mdot_c, delta_tc, theta_s, omega_s`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EngineState {
    pub n_l: f64,
    pub n_h: f64,
    pub t_t4: f64,
    pub pi_c: f64,
    pub mdot_c: f64,
    pub delta_tc: f64,
    pub theta_s: f64,
    pub omega_s: f64,
}

impl EngineState {
    pub const N_L: usize = 0;
    pub const N_H: usize = 1;
    pub const T_T4: usize = 2;
    pub const PI_C: usize = 3;
    pub const MDOT_C: usize = 4;
    pub const DELTA_TC: usize = 5;
    pub const THETA_S: usize = 6;
    pub const OMEGA_S: usize = 7;

    pub fn to_vector(&self) -> StateVector {
        StateVector::from_column_slice(&[
            self.n_l,
            self.n_h,
            self.t_t4,
            self.pi_c,
            self.mdot_c,
            self.delta_tc,
            self.theta_s,
            self.omega_s,
        ])
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            n_l: v[0],
            n_h: v[1],
            t_t4: v[2],
            pi_c: v[3],
            mdot_c: v[4],
            delta_tc: v[5],
            theta_s: v[6],
            omega_s: v[7],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }

    pub fn norm_squared(&self) -> f64 {
        self.to_vector().norm_squared()
    }
}

/// Local compressor-map, operating-line and surge-boundary coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineLinearization {
    pub a_pi_n: f64,
    pub a_pi_m: f64,
    pub a_m_n: f64,
    pub a_m_u: f64,
    pub b_n: f64,
    pub b_m: f64,
    pub b_u: f64,
    pub s_n: f64,
    pub s_m: f64,
    pub s_u: f64,
    pub gamma_op: f64,
    pub gamma_pi: f64,
    pub m_s0: f64,
    /// Spool-acceleration erosion per second of delay.
    pub l_ndot: f64,
    /// Fuel-flow erosion per second of delay.
    pub l_w: f64,
    /// Surge-margin erosion per second of delay.
    pub l_s: f64,
    pub l_gamma: f64,
}

impl EngineLinearization {
    /// `b_N dN_H + b_m dmdot_c + b_u dw_f`.
    pub fn operating_line_displacement(&self, d_n_h: f64, d_mdot_c: f64, d_w_f: f64) -> f64 {
        self.b_n * d_n_h + self.b_m * d_mdot_c + self.b_u * d_w_f
    }

    /// Surge margin. Negative values are representable and mean the local
    /// linearization has left its analytic set.
    pub fn surge_margin(&self, d_op: f64, eps_pi: f64) -> f64 {
        self.m_s0 - self.gamma_op * d_op.abs() - self.gamma_pi * eps_pi.abs()
    }

    pub fn surge_distance_perturbation(
        &self,
        d_n_h: f64,
        d_mdot_c: f64,
        d_w_f: f64,
        eps_s: f64,
        eps_pi: f64,
    ) -> f64 {
        (self.s_n - self.a_pi_n) * d_n_h
            + (self.s_m - self.a_pi_m) * d_mdot_c
            + self.s_u * d_w_f
            + eps_s
            - eps_pi
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.gamma_op < 0.0 || self.gamma_pi < 0.0 {
            return Err("gamma_op and gamma_pi must be nonnegative".into());
        }
        if self.m_s0 <= 0.0 {
            return Err("m_s0 must be positive".into());
        }
        for (name, v) in [
            ("l_ndot", self.l_ndot),
            ("l_w", self.l_w),
            ("l_s", self.l_s),
            ("l_gamma", self.l_gamma),
        ] {
            if v <= 0.0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorsionalParams {
    /// Shaft inertia, kg m^2.
    pub j_s: f64,
    pub d_s: f64,
    /// Torsional compliance.
    pub gamma_s: f64,
    /// Required samples per torsional period.
    pub q_s: f64,
}

/// Longest authenticated sampling interval that still gives `q_s` samples per
/// undamped torsional period: `(2 pi / q_s) sqrt(J_s Gamma_s)`.
pub fn max_auth_sampling_interval(t: &TorsionalParams) -> Result<f64, EngineError> {
    if t.q_s.is_nan() || t.q_s <= 2.0 {
        return Err(EngineError::SamplingRatio(t.q_s));
    }
    if t.j_s <= 0.0 || t.gamma_s <= 0.0 || t.d_s <= 0.0 {
        return Err(EngineError::TorsionalParams);
    }
    Ok(2.0 * std::f64::consts::PI / t.q_s * (t.j_s * t.gamma_s).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StressRegime {
    pub m_s: f64,
    pub t_t4: f64,
    pub e_egt: f64,
    pub delta_tc: f64,
    pub gamma_s: f64,
    pub ndot_h: f64,
    pub w_f: f64,
    pub v_norm: f64,
}

impl StressRegime {
    /// Fixed-width little-endian encoding used inside integrity tags.
    pub fn encode(&self) -> Vec<u8> {
        [
            self.m_s,
            self.t_t4,
            self.e_egt,
            self.delta_tc,
            self.gamma_s,
            self.ndot_h,
            self.w_f,
            self.v_norm,
        ]
        .iter()
        .flat_map(|x| x.to_le_bytes())
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressGate {
    pub m_min: f64,
    pub t_t4_max: f64,
    pub e_egt_max: f64,
    pub ndot_max: f64,
    pub w_f_max: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StressCondition {
    Surge,
    TurbineTemperature,
    Egt,
    SpoolAcceleration,
    FuelFlow,
    Vibration,
}

impl Condition for StressCondition {
    fn reason(&self) -> &'static str {
        match self {
            StressCondition::Surge => "surge",
            StressCondition::TurbineTemperature => "turbine_temperature",
            StressCondition::Egt => "egt",
            StressCondition::SpoolAcceleration => "spool_acceleration",
            StressCondition::FuelFlow => "fuel_flow",
            StressCondition::Vibration => "vibration",
        }
    }
}

/// Certified stress-regime gate: six inequalities, inclusive at the boundary.
pub fn stress_gate_check(phi: &StressRegime, gate: &StressGate) -> Verdict<StressCondition> {
    let mut v = Verdict::new();
    v.at_least(StressCondition::Surge, phi.m_s, gate.m_min)
        .at_most(StressCondition::TurbineTemperature, phi.t_t4, gate.t_t4_max)
        .at_most(StressCondition::Egt, phi.e_egt.abs(), gate.e_egt_max)
        .at_most(
            StressCondition::SpoolAcceleration,
            phi.ndot_h.abs(),
            gate.ndot_max,
        )
        .at_most(StressCondition::FuelFlow, phi.w_f.abs(), gate.w_f_max)
        .at_most(StressCondition::Vibration, phi.v_norm, gate.v_max);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationInputs {
    /// Control deadline, s.
    pub d_ctrl: f64,
    /// Bus response time, s.
    pub r_k: f64,
    pub ndot_h: f64,
    pub ndot_max: f64,
    pub w_f: f64,
    pub w_f_max: f64,
    pub m_s: f64,
    pub l_ndot: f64,
    pub l_w: f64,
    pub l_s: f64,
}

/// The four terms of the actuation window, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActuationWindow {
    pub deadline: f64,
    pub spool: f64,
    pub fuel: f64,
    pub surge: f64,
}

impl ActuationWindow {
    pub fn new(a: &ActuationInputs) -> Self {
        Self {
            deadline: a.d_ctrl - a.r_k,
            spool: (a.ndot_max - a.ndot_h.abs()) / a.l_ndot,
            fuel: (a.w_f_max - a.w_f.abs()) / a.l_w,
            surge: a.m_s / a.l_s,
        }
    }

    pub fn value(&self) -> f64 {
        self.deadline.min(self.spool).min(self.fuel).min(self.surge)
    }
}

/// Cryptographic actuation window. A nonpositive value means release is not
/// certified regardless of verification outcome.
pub fn actuation_window(a: &ActuationInputs) -> f64 {
    ActuationWindow::new(a).value()
}

/// One plant mode: `dx = (A x + B u + c) dt + G dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantMode {
    pub drift: StateMatrix,
    pub input: InputMatrix,
    pub offset: StateVector,
    pub diffusion: StateMatrix,
}

impl PlantMode {
    pub fn zero() -> Self {
        Self {
            drift: StateMatrix::zeros(),
            input: InputMatrix::zeros(),
            offset: StateVector::zeros(),
            diffusion: StateMatrix::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorLimits {
    pub w_f_min: f64,
    pub w_f_max: f64,
    pub alpha_v_min: f64,
    pub alpha_v_max: f64,
}

impl ActuatorLimits {
    pub fn unbounded() -> Self {
        Self {
            w_f_min: f64::NEG_INFINITY,
            w_f_max: f64::INFINITY,
            alpha_v_min: f64::NEG_INFINITY,
            alpha_v_max: f64::INFINITY,
        }
    }

    /// Fuel-metering valve and variable-geometry saturation.
    pub fn saturate(&self, w_f: f64, alpha_v: f64) -> (f64, f64) {
        (
            w_f.clamp(self.w_f_min, self.w_f_max),
            alpha_v.clamp(self.alpha_v_min, self.alpha_v_max),
        )
    }
}

/// Axis-aligned certification box on the plant state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBox {
    pub lower: EngineState,
    pub upper: EngineState,
}

impl StateBox {
    pub fn unbounded() -> Self {
        let inf = f64::INFINITY;
        let hi = EngineState::from_vector(&StateVector::repeat(inf));
        let lo = EngineState::from_vector(&StateVector::repeat(-inf));
        Self {
            lower: lo,
            upper: hi,
        }
    }

    pub fn contains(&self, s: &EngineState) -> bool {
        let (x, lo, hi) = (
            s.to_vector(),
            self.lower.to_vector(),
            self.upper.to_vector(),
        );
        (0..STATE_DIM).all(|i| x[i] >= lo[i] && x[i] <= hi[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantStep {
    pub state: EngineState,
    /// Saturated input actually applied.
    pub applied: (f64, f64),
    /// False when the new state left the certification box.
    pub in_cert: bool,
}

/// One Euler-Maruyama step. The input is saturated before integration;
/// leaving the certification box is flagged on the result rather than
/// reported as an error.
pub fn step_plant(
    state: &EngineState,
    input: (f64, f64),
    mode: &PlantMode,
    limits: &ActuatorLimits,
    cert: &StateBox,
    dt: f64,
    noise: &StateVector,
) -> Result<PlantStep, EngineError> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(EngineError::NonPositiveStep(dt));
    }
    let applied = limits.saturate(input.0, input.1);
    let x = state.to_vector();
    let u = SVector::<f64, INPUT_DIM>::new(applied.0, applied.1);
    let f = mode.drift * x + mode.input * u + mode.offset;
    let next = x + f * dt + mode.diffusion * noise * dt.sqrt();
    let next = EngineState::from_vector(&next);
    if !next.is_finite() {
        return Err(EngineError::NonFinite);
    }
    Ok(PlantStep {
        state: next,
        applied,
        in_cert: cert.contains(&next),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lin() -> EngineLinearization {
        EngineLinearization {
            a_pi_n: 0.0,
            a_pi_m: 0.0,
            a_m_n: 0.0,
            a_m_u: 0.0,
            b_n: 1.0,
            b_m: 1.0,
            b_u: 1.0,
            s_n: 0.5,
            s_m: -0.3,
            s_u: 0.2,
            gamma_op: 1.0,
            gamma_pi: 0.0,
            m_s0: 0.2,
            l_ndot: 1.0,
            l_w: 1.0,
            l_s: 1.0,
            l_gamma: 1.0,
        }
    }

    #[test]
    fn operating_line_examples() {
        let l = lin();
        assert_eq!(l.operating_line_displacement(0.0, 0.0, 0.0), 0.0);
        assert!((l.operating_line_displacement(0.1, -0.2, 0.05) + 0.05).abs() < 1e-15);
        let d = l.operating_line_displacement(0.3, 0.7, -0.2);
        assert!((l.operating_line_displacement(0.6, 1.4, -0.4) - 2.0 * d).abs() < 1e-15);
    }

    #[test]
    fn surge_margin_examples() {
        let l = lin();
        assert_eq!(l.surge_margin(0.0, 0.0), l.m_s0);
        assert!((l.surge_margin(0.25, 0.0) + 0.05).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let m = l.surge_margin(i as f64 * 0.01, 0.0);
            assert!(m <= prev);
            prev = m;
        }
    }

    #[test]
    fn surge_distance_examples() {
        let mut l = lin();
        assert!((l.surge_distance_perturbation(1.0, 1.0, 1.0, 0.0, 0.0) - 0.4).abs() < 1e-15);
        let a = l.surge_distance_perturbation(0.2, 0.1, 0.3, 0.5, 0.1);
        let b = l.surge_distance_perturbation(0.2, 0.1, 0.3, 0.0, 0.1);
        assert!((a - b - 0.5).abs() < 1e-15);
        l.a_pi_n = l.s_n;
        l.a_pi_m = l.s_m;
        l.s_u = 0.0;
        assert_eq!(l.surge_distance_perturbation(3.0, -2.0, 7.0, 0.4, 0.4), 0.0);
    }

    #[test]
    fn torsional_sampling() {
        let t = TorsionalParams {
            j_s: 0.5,
            d_s: 0.1,
            gamma_s: 2.0,
            q_s: 4.0,
        };
        assert!((max_auth_sampling_interval(&t).unwrap() - PI / 2.0).abs() < 1e-12);
        let t2 = TorsionalParams { gamma_s: 4.0, ..t };
        let ratio =
            max_auth_sampling_interval(&t2).unwrap() / max_auth_sampling_interval(&t).unwrap();
        assert!((ratio - 2f64.sqrt()).abs() < 1e-12);
        let big = TorsionalParams { q_s: 1e12, ..t };
        assert!(max_auth_sampling_interval(&big).unwrap() < 1e-11);
        for q in [2.0, 1.0, f64::NAN] {
            let bad = TorsionalParams { q_s: q, ..t };
            assert!(matches!(
                max_auth_sampling_interval(&bad),
                Err(EngineError::SamplingRatio(_))
            ));
        }
    }

    fn window_inputs() -> ActuationInputs {
        ActuationInputs {
            d_ctrl: 0.05,
            r_k: 0.01,
            ndot_h: 0.0,
            ndot_max: 1e3,
            w_f: 0.0,
            w_f_max: 1e3,
            m_s: 1e3,
            l_ndot: 1.0,
            l_w: 1.0,
            l_s: 1.0,
        }
    }

    #[test]
    fn actuation_window_examples() {
        assert!((actuation_window(&window_inputs()) - 0.04).abs() < 1e-15);
        let eq = ActuationInputs {
            d_ctrl: 1.0,
            r_k: 0.5,
            ndot_h: 0.5,
            ndot_max: 1.0,
            w_f: 1.0,
            w_f_max: 2.0,
            m_s: 1.0,
            l_ndot: 1.0,
            l_w: 2.0,
            l_s: 2.0,
        };
        assert_eq!(actuation_window(&eq), 0.5);
        let sat = ActuationInputs {
            w_f: 7.0,
            w_f_max: 7.0,
            ..window_inputs()
        };
        assert!(actuation_window(&sat) <= 0.0);
    }

    #[test]
    fn actuation_window_is_monotone() {
        let base = ActuationInputs {
            d_ctrl: 1.0,
            r_k: 0.1,
            ndot_h: 0.2,
            ndot_max: 1.0,
            w_f: 0.3,
            w_f_max: 1.0,
            m_s: 0.4,
            l_ndot: 1.5,
            l_w: 1.2,
            l_s: 0.9,
        };
        let h = 1e-3;
        for i in 0..200 {
            let t = i as f64 * 0.01;
            let a = ActuationInputs {
                r_k: t,
                ndot_h: t * 0.5,
                w_f: -t * 0.4,
                m_s: t,
                ..base
            };
            let w = actuation_window(&a);
            assert!(
                actuation_window(&ActuationInputs {
                    r_k: a.r_k + h,
                    ..a
                }) <= w
            );
            assert!(
                actuation_window(&ActuationInputs {
                    ndot_h: a.ndot_h + h,
                    ..a
                }) <= w
            );
            assert!(
                actuation_window(&ActuationInputs {
                    w_f: a.w_f - h,
                    ..a
                }) <= w
            );
            assert!(
                actuation_window(&ActuationInputs {
                    m_s: a.m_s + h,
                    ..a
                }) >= w
            );
        }
    }

    fn gate() -> StressGate {
        StressGate {
            m_min: 0.1,
            t_t4_max: 1.0,
            e_egt_max: 1.0,
            ndot_max: 1.0,
            w_f_max: 1.0,
            v_max: 1.0,
        }
    }

    fn inside() -> StressRegime {
        StressRegime {
            m_s: 0.5,
            t_t4: 0.5,
            e_egt: -0.5,
            delta_tc: 0.0,
            gamma_s: 1.0,
            ndot_h: -0.5,
            w_f: 0.5,
            v_norm: 0.5,
        }
    }

    #[test]
    fn stress_gate_examples() {
        assert!(stress_gate_check(&inside(), &gate()).passed());
        let v = stress_gate_check(
            &StressRegime {
                m_s: 0.09,
                ..inside()
            },
            &gate(),
        );
        assert!(!v.passed());
        assert_eq!(v.first_failure().unwrap().reason(), "surge");
        assert!(stress_gate_check(
            &StressRegime {
                m_s: 0.1,
                ..inside()
            },
            &gate()
        )
        .passed());
    }

    #[test]
    fn stress_gate_single_violation_corners() {
        let g = gate();
        let cases: [(StressCondition, fn(&mut StressRegime)); 6] = [
            (StressCondition::Surge, |p| p.m_s = 0.0),
            (StressCondition::TurbineTemperature, |p| p.t_t4 = 1.5),
            (StressCondition::Egt, |p| p.e_egt = -1.5),
            (StressCondition::SpoolAcceleration, |p| p.ndot_h = -1.5),
            (StressCondition::FuelFlow, |p| p.w_f = 1.5),
            (StressCondition::Vibration, |p| p.v_norm = 1.5),
        ];
        for (cond, violate) in cases {
            let mut phi = inside();
            violate(&mut phi);
            let v = stress_gate_check(&phi, &g);
            assert!(!v.passed());
            assert_eq!(v.failures().collect::<Vec<_>>(), vec![cond]);
        }
    }

    #[test]
    fn zero_dynamics_leave_state_unchanged() {
        let s = EngineState {
            n_l: 1.0,
            n_h: -2.0,
            omega_s: 3.0,
            ..Default::default()
        };
        let noise = StateVector::repeat(0.7);
        let out = step_plant(
            &s,
            (0.3, 0.1),
            &PlantMode::zero(),
            &ActuatorLimits::unbounded(),
            &StateBox::unbounded(),
            0.37,
            &noise,
        )
        .unwrap();
        assert_eq!(out.state, s);
        assert!(out.in_cert);
    }

    #[test]
    fn stable_diagonal_flow_tracks_exponential() {
        let mode = PlantMode {
            drift: -StateMatrix::identity(),
            ..PlantMode::zero()
        };
        let dt = 0.01;
        let mut s = EngineState::from_vector(&StateVector::repeat(1.0));
        let x0 = s.to_vector().norm();
        let mut prev = x0;
        for k in 1..=1000 {
            s = step_plant(
                &s,
                (0.0, 0.0),
                &mode,
                &ActuatorLimits::unbounded(),
                &StateBox::unbounded(),
                dt,
                &StateVector::zeros(),
            )
            .unwrap()
            .state;
            let n = s.to_vector().norm();
            assert!(n < prev);
            prev = n;
            // Global Euler error for x' = -x is bounded by t dt e^{-t} / 2 * (1 + O(dt)).
            let t = k as f64 * dt;
            let exact = x0 * (-t).exp();
            assert!((n - exact).abs() <= x0 * t * dt * (-t).exp(), "k={k}");
        }
    }

    #[test]
    fn one_step_error_is_second_order() {
        // Local error of Euler vs e^{A dt} on diagonal A shrinks as dt^2.
        let rates = [-0.5, -1.0, -2.0, -3.0, 0.1, -0.2, -4.0, -1.5];
        let mode = PlantMode {
            drift: StateMatrix::from_diagonal(&StateVector::from_column_slice(&rates)),
            ..PlantMode::zero()
        };
        let s = EngineState::from_vector(&StateVector::repeat(1.0));
        let err = |dt: f64| {
            let next = step_plant(
                &s,
                (0.0, 0.0),
                &mode,
                &ActuatorLimits::unbounded(),
                &StateBox::unbounded(),
                dt,
                &StateVector::zeros(),
            )
            .unwrap()
            .state
            .to_vector();
            (0..8)
                .map(|i| (next[i] - (rates[i] * dt).exp()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        let max_rate_sq = 16.0;
        assert!(e1 <= 0.5 * max_rate_sq * 1e-4 * 1.01);
        assert!((e1 / e2 - 4.0).abs() < 0.1);
    }

    #[test]
    fn saturation_and_cert_flag() {
        let mode = PlantMode {
            input: InputMatrix::from_fn(|i, j| if i == 1 && j == 0 { 1.0 } else { 0.0 }),
            ..PlantMode::zero()
        };
        let limits = ActuatorLimits {
            w_f_min: 0.0,
            w_f_max: 1.0,
            alpha_v_min: -1.0,
            alpha_v_max: 1.0,
        };
        let mut cert = StateBox::unbounded();
        cert.upper.n_h = 0.5;
        let out = step_plant(
            &EngineState::default(),
            (10.0, 0.0),
            &mode,
            &limits,
            &cert,
            1.0,
            &StateVector::zeros(),
        )
        .unwrap();
        assert_eq!(out.applied, (1.0, 0.0));
        assert_eq!(out.state.n_h, 1.0);
        assert!(!out.in_cert);
        let err = step_plant(
            &EngineState::default(),
            (0.0, 0.0),
            &mode,
            &limits,
            &cert,
            0.0,
            &StateVector::zeros(),
        );
        assert_eq!(err, Err(EngineError::NonPositiveStep(0.0)));
    }
}
