//! Seeded epoch-loop simulator.
//!
//! Each epoch: regime switch, plant step, noisy telemetry, Kalman update,
//! tag and verify, residual gate, entropy accrual, key refresh, release.
//! One run is single-threaded and fully determined by `(model, theta, spec,
//! epochs, seed)`; every epoch is emitted as one canonical JSON line and the
//! lines are hashed for replay checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SMatrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bus::{self, BusError, MICROS_PER_SECOND};
use crate::channel::{self, ChannelError, MarkovChain, RenewalInputs};
use crate::crypto::{
    self, AuthOutcome, CryptoError, KeyMaterial, QuantizerSpec, SessionKey, Tagger,
    TelemetryRecord, Verifier,
};
use crate::engine::{
    self, ActuatorLimits, EngineError, EngineState, PlantMode, StateBox, StateVector, StressRegime,
    TorsionalParams, INPUT_DIM, STATE_DIM,
};
use crate::envelope::{self, Ablation, EnvelopeModel, GateInputs, Theta};
use crate::estimator::{self, EstimatorError, KalmanModel, KalmanState};
use crate::rng;
use crate::stability;
use crate::stats::{self, Proportion};
use crate::verdict::Condition;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

fn cfg<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::Config(msg.into()))
}

/// One plant regime, matrices given row by row. Omitted parts are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub drift: Vec<Vec<f64>>,
    #[serde(default)]
    pub input: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
    #[serde(default)]
    pub diffusion: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpoofSpec {
    /// Telemetry channel that receives the bias.
    pub channel: usize,
    pub start_epoch: u64,
    /// Bias added per epoch after `start_epoch`.
    pub ramp_per_epoch: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    /// Probability that a tagged record is modified in transit.
    #[serde(default)]
    pub tamper_prob: f64,
    /// Probability that the last delivered record is resent instead.
    #[serde(default)]
    pub replay_prob: f64,
    #[serde(default)]
    pub latency_inflation_us: u64,
    /// Bias injected at the sensor, before tagging.
    #[serde(default)]
    pub spoof: Option<SpoofSpec>,
}

fn one() -> f64 {
    1.0
}

fn default_tag_bytes() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    /// Epoch length, s.
    pub h: f64,
    pub modes: Vec<ModeSpec>,
    /// Regime transition matrix; identity when omitted.
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub initial_mode: usize,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// State feedback `u = u_ref - K x_hat`, 2 x 8.
    #[serde(default)]
    pub feedback: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub u_ref: [f64; INPUT_DIM],
    #[serde(default)]
    pub limits: Option<ActuatorLimits>,
    #[serde(default)]
    pub cert_box: Option<StateBox>,
    /// Measurement matrix, d_y x 8.
    pub meas: Vec<Vec<f64>>,
    pub meas_cov: Vec<Vec<f64>>,
    /// Scale on the injected measurement noise; the filter always assumes
    /// `meas_cov`.
    #[serde(default = "one")]
    pub meas_noise_scale: f64,
    #[serde(default = "one")]
    pub p0: f64,
    /// Standard deviation of both shaft-speed observations.
    #[serde(default)]
    pub shaft_sigma: f64,
    #[serde(default = "default_tag_bytes")]
    pub tag_bytes: usize,
    /// Standard deviation of the pressure-ratio model error in the surge margin.
    #[serde(default)]
    pub eps_pi_sigma: f64,
    /// Release jitter, uniform on `[0, jitter_us]`.
    #[serde(default)]
    pub jitter_us: u64,
    #[serde(default)]
    pub overrun_prob: f64,
    #[serde(default)]
    pub overrun_us: u64,
    /// Half-widths of the safe box on `y - H x`; unbounded when omitted.
    #[serde(default)]
    pub y_safe: Option<Vec<f64>>,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub s_id: u64,
}

fn smatrix<const R: usize, const C: usize>(
    rows: &[Vec<f64>],
    name: &str,
) -> Result<SMatrix<f64, R, C>, SimError> {
    if rows.len() != R || rows.iter().any(|r| r.len() != C) {
        return cfg(format!("{name} must be {R} x {C}"));
    }
    Ok(SMatrix::from_fn(|i, j| rows[i][j]))
}

fn dmatrix(rows: &[Vec<f64>], cols: usize, name: &str) -> Result<DMatrix<f64>, SimError> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return cfg(format!(
            "{name} must have {cols} columns and at least one row"
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn finite_all(rows: &[Vec<f64>]) -> bool {
    rows.iter().flatten().all(|x| x.is_finite())
}

impl ModeSpec {
    pub fn to_mode(&self, idx: usize) -> Result<PlantMode, SimError> {
        let name = |what: &str| format!("modes[{idx}].{what}");
        let zero = PlantMode::zero();
        for (what, m) in [
            ("drift", Some(&self.drift)),
            ("input", self.input.as_ref()),
            ("diffusion", self.diffusion.as_ref()),
        ] {
            if m.is_some_and(|m| !finite_all(m)) {
                return cfg(format!("{} must be finite", name(what)));
            }
        }
        Ok(PlantMode {
            drift: smatrix(&self.drift, &name("drift"))?,
            input: match &self.input {
                Some(m) => smatrix(m, &name("input"))?,
                None => zero.input,
            },
            offset: match &self.offset {
                Some(v) if v.len() == STATE_DIM => StateVector::from_column_slice(v),
                Some(_) => return cfg(format!("{} must have {STATE_DIM} entries", name("offset"))),
                None => zero.offset,
            },
            diffusion: match &self.diffusion {
                Some(m) => smatrix(m, &name("diffusion"))?,
                None => zero.diffusion,
            },
        })
    }
}

/// Discrete filter model for one regime. The offset enters as an extra input
/// column driven by a constant 1.
fn filter_model(
    mode: &PlantMode,
    h: f64,
    meas: &DMatrix<f64>,
    meas_cov: &DMatrix<f64>,
) -> KalmanModel {
    let n = STATE_DIM;
    let a = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |i, j| mode.drift[(i, j)] * h);
    let b = DMatrix::from_fn(n, INPUT_DIM + 1, |i, j| {
        if j < INPUT_DIM {
            mode.input[(i, j)] * h
        } else {
            mode.offset[i] * h
        }
    });
    let g = DMatrix::from_fn(n, n, |i, j| mode.diffusion[(i, j)]);
    let q = &g * g.transpose() * h;
    KalmanModel {
        a,
        b,
        h: meas.clone(),
        q,
        r: meas_cov.clone(),
    }
}

/// Validated, matrix-form simulation inputs.
#[derive(Debug, Clone)]
pub struct Prepared {
    modes: Vec<PlantMode>,
    filters: Vec<KalmanModel>,
    chain: MarkovChain,
    x0: EngineState,
    feedback: SMatrix<f64, INPUT_DIM, STATE_DIM>,
    limits: ActuatorLimits,
    cert: StateBox,
    meas: DMatrix<f64>,
    meas_chol_l: DMatrix<f64>,
    y_safe: Vec<f64>,
    kappa_bits: u32,
}

impl SimSpec {
    pub fn prepare(&self, model: &EnvelopeModel) -> Result<Prepared, SimError> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return cfg("sim.h must be positive");
        }
        if self.modes.is_empty() {
            return cfg("sim.modes must not be empty");
        }
        let modes = self
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| m.to_mode(i))
            .collect::<Result<Vec<_>, _>>()?;
        let chain = match &self.transition {
            Some(p) => MarkovChain::new(p.clone())?,
            None => MarkovChain::identity(modes.len()),
        };
        if chain.len() != modes.len() {
            return cfg(format!(
                "sim.transition has {} states but there are {} modes",
                chain.len(),
                modes.len()
            ));
        }
        if self.initial_mode >= modes.len() {
            return cfg("sim.initial_mode out of range");
        }
        let x0 = match &self.x0 {
            Some(v) if v.len() == STATE_DIM && v.iter().all(|x| x.is_finite()) => {
                EngineState::from_vector(&StateVector::from_column_slice(v))
            }
            Some(_) => return cfg(format!("sim.x0 must have {STATE_DIM} finite entries")),
            None => EngineState::default(),
        };
        let feedback = match &self.feedback {
            Some(k) => smatrix(k, "sim.feedback")?,
            None => SMatrix::zeros(),
        };
        let meas = dmatrix(&self.meas, STATE_DIM, "sim.meas")?;
        let d_y = meas.nrows();
        let meas_cov = dmatrix(&self.meas_cov, d_y, "sim.meas_cov")?;
        if meas_cov.nrows() != d_y {
            return cfg(format!("sim.meas_cov must be {d_y} x {d_y}"));
        }
        let meas_chol_l = match meas_cov.clone().cholesky() {
            Some(c) => c.l(),
            None => return cfg("sim.meas_cov must be symmetric positive definite"),
        };
        let filters: Vec<KalmanModel> = modes
            .iter()
            .map(|m| filter_model(m, self.h, &meas, &meas_cov))
            .collect();
        for f in &filters {
            f.validate()?;
        }
        let y_safe = match &self.y_safe {
            Some(v) if v.len() == d_y && v.iter().all(|&w| w >= 0.0) => v.clone(),
            Some(_) => return cfg(format!("sim.y_safe must have {d_y} nonnegative entries")),
            None => vec![f64::INFINITY; d_y],
        };
        for (name, p) in [
            ("sim.attack.tamper_prob", self.attack.tamper_prob),
            ("sim.attack.replay_prob", self.attack.replay_prob),
            ("sim.overrun_prob", self.overrun_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return cfg(format!("{name} must lie in [0, 1]"));
            }
        }
        if let Some(s) = &self.attack.spoof {
            if s.channel >= d_y {
                return cfg("sim.attack.spoof.channel out of range");
            }
        }
        for (name, v) in [
            ("sim.shaft_sigma", self.shaft_sigma),
            ("sim.eps_pi_sigma", self.eps_pi_sigma),
            ("sim.meas_noise_scale", self.meas_noise_scale),
            ("sim.p0", self.p0),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return cfg(format!("{name} must be nonnegative"));
            }
        }
        if !(4..=32).contains(&self.tag_bytes) {
            return cfg("sim.tag_bytes must be between 4 and 32");
        }
        if !(model.quant_delta > 0.0) {
            return cfg("quantizer delta must be positive");
        }
        let kappa = model.ledger.kappa;
        if !(kappa >= 8.0) || kappa.fract() != 0.0 || kappa as u64 % 8 != 0 || kappa > 8160.0 {
            return cfg("ledger.kappa must be a whole number of bytes for key derivation");
        }
        Ok(Prepared {
            modes,
            filters,
            chain,
            x0,
            feedback,
            limits: self.limits.unwrap_or_else(ActuatorLimits::unbounded),
            cert: self.cert_box.unwrap_or_else(StateBox::unbounded),
            meas,
            meas_chol_l,
            y_safe,
            kappa_bits: kappa as u32,
        })
    }
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub mode: usize,
    pub key_epoch: u64,
    /// Age of the current key after any refresh this epoch, s.
    pub key_age: f64,
    pub t_enforced: f64,
    pub refreshed: bool,
    pub attack: &'static str,
    pub auth: AuthOutcome,
    pub d2: f64,
    pub eta_k: Option<f64>,
    pub gate_ok: bool,
    pub latency_us: u64,
    pub deadline_miss: bool,
    pub mu_lat: f64,
    pub w_act: f64,
    pub m_s: f64,
    pub h_key: f64,
    pub b_sec: f64,
    pub predicate_ok: bool,
    pub released: bool,
    pub reason: String,
    pub in_cert: bool,
    pub unsafe_y: bool,
    pub integrity_failure: bool,
    pub state_sq_norm: f64,
}

fn num(out: &mut String, x: f64) {
    if x.is_finite() {
        let _ = write!(out, "{x:.16e}");
    } else {
        out.push_str("null");
    }
}

impl EpochRecord {
    /// Canonical JSON line: fixed field order, floats with 17 significant digits.
    pub fn to_json_line(&self) -> String {
        let mut s = String::with_capacity(512);
        let _ = write!(
            s,
            "{{\"epoch\":{},\"mode\":{},\"key_epoch\":{},\"key_age\":",
            self.epoch, self.mode, self.key_epoch
        );
        num(&mut s, self.key_age);
        s.push_str(",\"t_enforced\":");
        num(&mut s, self.t_enforced);
        let auth = serde_json::to_string(&self.auth).expect("enum serializes");
        let _ = write!(
            s,
            ",\"refreshed\":{},\"attack\":\"{}\",\"auth\":{},\"d2\":",
            self.refreshed, self.attack, auth
        );
        num(&mut s, self.d2);
        s.push_str(",\"eta_k\":");
        num(&mut s, self.eta_k.unwrap_or(f64::NAN));
        let _ = write!(
            s,
            ",\"gate_ok\":{},\"latency_us\":{},\"deadline_miss\":{},\"mu_lat\":",
            self.gate_ok, self.latency_us, self.deadline_miss
        );
        num(&mut s, self.mu_lat);
        s.push_str(",\"w_act\":");
        num(&mut s, self.w_act);
        s.push_str(",\"m_s\":");
        num(&mut s, self.m_s);
        s.push_str(",\"h_key\":");
        num(&mut s, self.h_key);
        s.push_str(",\"b_sec\":");
        num(&mut s, self.b_sec);
        let _ = write!(
            s,
            ",\"predicate_ok\":{},\"released\":{},\"reason\":\"{}\",\"in_cert\":{},\"unsafe_y\":{},\"integrity_failure\":{},\"state_sq_norm\":",
            self.predicate_ok, self.released, self.reason, self.in_cert, self.unsafe_y, self.integrity_failure
        );
        num(&mut s, self.state_sq_norm);
        s.push('}');
        s
    }
}

/// Point estimates with 95% intervals; `None` when nothing was counted.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EmpiricalRates {
    pub eps_bus_hat: Option<Proportion>,
    pub eps_st_hat: Option<Proportion>,
    pub alarm_hat: Option<Proportion>,
    pub fr_hat: Option<Proportion>,
    pub fail_int_hat: Option<Proportion>,
}

#[derive(Debug, Clone, Default)]
struct Counts {
    epochs: u64,
    miss: u64,
    st_bad: u64,
    alarms: u64,
    clean: u64,
    mismatches: u64,
    int_fail: u64,
}

impl Counts {
    fn add(&mut self, r: &EpochRecord) {
        self.epochs += 1;
        self.miss += r.deadline_miss as u64;
        self.st_bad += (r.mu_lat <= 0.0) as u64;
        self.alarms += !r.gate_ok as u64;
        if r.attack == "none" {
            self.clean += 1;
            self.mismatches += (r.auth == AuthOutcome::RejectMismatch) as u64;
        }
        self.int_fail += r.integrity_failure as u64;
    }

    fn rates(&self) -> EmpiricalRates {
        EmpiricalRates {
            eps_bus_hat: Proportion::wilson(self.miss, self.epochs),
            eps_st_hat: Proportion::wilson(self.st_bad, self.epochs),
            alarm_hat: Proportion::wilson(self.alarms, self.epochs),
            fr_hat: Proportion::wilson(self.mismatches, self.clean),
            fail_int_hat: Proportion::wilson(self.int_fail, self.epochs),
        }
    }
}

/// Rates recomputed from a stored log.
pub fn empirical_rates(log: &[EpochRecord]) -> EmpiricalRates {
    let mut c = Counts::default();
    log.iter().for_each(|r| c.add(r));
    c.rates()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub epochs: u64,
    pub seed: u64,
    pub response_us: u64,
    pub rt_converged: bool,
    pub released: u64,
    pub release_rate: Option<f64>,
    pub denial_reasons: BTreeMap<String, u64>,
    pub auth_outcomes: BTreeMap<String, u64>,
    pub rates: EmpiricalRates,
    /// Analytic comparison columns.
    pub fr_bound: f64,
    pub alarm_bound: f64,
    pub refreshes: u64,
    pub max_age_ratio: f64,
    pub predicate_violations: u64,
    /// Least-squares slope of `ln ||x||^2` over epochs.
    pub log_sq_norm_slope: Option<f64>,
    pub warnings: Vec<String>,
    pub replay_hash: String,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Hex SHA-256.
pub fn hex_digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

struct Key {
    key: SessionKey,
    age: f64,
    entropy: f64,
}

fn fresh_key<R: Rng>(
    rng: &mut R,
    epoch: u64,
    birth: f64,
    kappa_bits: u32,
    entropy: f64,
) -> Result<Key, SimError> {
    let mut k_kem = [0u8; 32];
    let mut h_puf = [0u8; 32];
    let mut h_ch = [0u8; 16];
    rng.fill(&mut k_kem);
    rng.fill(&mut h_puf);
    rng.fill(&mut h_ch);
    let m = KeyMaterial {
        k_kem: &k_kem,
        h_puf: &h_puf,
        h_ch: &h_ch,
        channel_entropy_bits: 0.0,
    };
    Ok(Key {
        key: crypto::derive_key(&m, kappa_bits, epoch, birth)?,
        age: 0.0,
        entropy,
    })
}

fn normals<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Run the loop, handing each record and its canonical line to `sink`.
pub fn run_with(
    model: &EnvelopeModel,
    theta: &Theta,
    spec: &SimSpec,
    epochs: u64,
    seed: u64,
    mut sink: impl FnMut(&EpochRecord, &str),
) -> Result<SimSummary, SimError> {
    let p = spec.prepare(model)?;
    let h = spec.h;
    let d_y = p.meas.nrows();
    let quant = QuantizerSpec {
        delta: model.quant_delta,
        sigma_n: spec.shaft_sigma,
    };

    let mut markov_rng = rng::stream(seed, rng::MARKOV);
    let mut plant_rng = rng::stream(seed, rng::PLANT);
    let mut sensor_rng = rng::stream(seed, rng::SENSOR);
    let mut verifier_rng = rng::stream(seed, rng::VERIFIER);
    let mut latency_rng = rng::stream(seed, rng::LATENCY);
    let mut attack_rng = rng::stream(seed, rng::ATTACK);
    let mut key_rng = rng::stream(seed, rng::KEYS);

    let mut warnings = Vec::new();
    let tors = TorsionalParams {
        gamma_s: theta.gamma_s,
        ..model.torsional
    };
    if let Ok(h_max) = engine::max_auth_sampling_interval(&tors) {
        if h > h_max {
            warnings.push(format!(
                "epoch length {h} s exceeds torsional sampling limit {h_max} s"
            ));
        }
    }

    let rt = bus::response_time(
        &model.tasks_at(theta.l_kem),
        model.target,
        model.rate_bps,
        &model.ver,
        model.horizon_us,
    )?;
    let deadline_us = model.deadline_us();
    let regime = model.regime_at(theta);
    let leak_rate_ch = channel::channel_leakage_rate(&regime);
    // Channel leakage is accrued per epoch below, so the refresh ledger starts from zero.
    let fresh_ledger = channel::EntropyLedger {
        dh_ch: 0.0,
        ..model.ledger
    };
    let initial_entropy = |delta_tc: f64| {
        fresh_ledger
            .residual_entropy(delta_tc)
            .min(model.ledger.kappa_target)
    };

    let mut state = p.x0;
    let mut mode = spec.initial_mode;
    let mut kf = KalmanState {
        x_hat: DVector::from_column_slice(p.x0.to_vector().as_slice()),
        p: DMatrix::identity(STATE_DIM, STATE_DIM) * spec.p0,
    };
    let mut key_epoch = 0u64;
    let mut key = fresh_key(
        &mut key_rng,
        key_epoch,
        0.0,
        p.kappa_bits,
        initial_entropy(state.delta_tc),
    )?;
    let mut tagger = Tagger::new(spec.tag_bytes)?;
    let mut verifier = Verifier::new();
    let mut nonce = 0u64;
    let mut last_msg: Option<crypto::TaggedRecord> = None;

    let mut counts = Counts::default();
    let mut hasher = Sha256::new();
    let mut denial_reasons = BTreeMap::new();
    let mut auth_outcomes = BTreeMap::new();
    let mut released = 0u64;
    let mut refreshes = 0u64;
    let mut max_age_ratio = 0.0f64;
    let mut predicate_violations = 0u64;
    let (mut ks, mut lnx) = (Vec::new(), Vec::new());

    for k in 0..epochs {
        mode = channel::markov_step(&p.chain, mode, &mut markov_rng);

        // Control from the current estimate, then the plant.
        let x_hat = StateVector::from_column_slice(kf.x_hat.as_slice());
        let u =
            SMatrix::<f64, INPUT_DIM, 1>::new(spec.u_ref[0], spec.u_ref[1]) - p.feedback * x_hat;
        let noise = StateVector::from_fn(|_, _| plant_rng.sample::<f64, _>(StandardNormal));
        let prev = state;
        let step = engine::step_plant(
            &state,
            (u[0], u[1]),
            &p.modes[mode],
            &p.limits,
            &p.cert,
            h,
            &noise,
        )?;
        state = step.state;
        let x_true = DVector::from_column_slice(state.to_vector().as_slice());

        // Sensor side.
        let v = &p.meas_chol_l * normals(&mut sensor_rng, d_y) * spec.meas_noise_scale;
        let mut y = &p.meas * &x_true + v;
        if let Some(sp) = &spec.attack.spoof {
            if k >= sp.start_epoch {
                y[sp.channel] += sp.ramp_per_epoch * (k - sp.start_epoch + 1) as f64;
            }
        }
        let shaft_meas =
            state.omega_s + spec.shaft_sigma * sensor_rng.sample::<f64, _>(StandardNormal);
        let eps_pi = spec.eps_pi_sigma * sensor_rng.sample::<f64, _>(StandardNormal);

        let u_kf = DVector::from_column_slice(&[step.applied.0, step.applied.1, 1.0]);
        let (kf_next, inn) = estimator::kf_step(&p.filters[mode], &kf, &u_kf, &y)?;
        kf = kf_next;

        let d_op = model
            .lin
            .operating_line_displacement(state.n_h, state.mdot_c, step.applied.0);
        let m_s = model.lin.surge_margin(d_op, eps_pi);
        let ndot_h = (state.n_h - prev.n_h) / h;
        let s_w = (step.applied.0 - model.certs.w_f_lin).abs();
        let phi = StressRegime {
            m_s,
            t_t4: state.t_t4,
            e_egt: 0.0,
            delta_tc: state.delta_tc,
            gamma_s: theta.gamma_s,
            ndot_h,
            w_f: step.applied.0,
            v_norm: model.ledger.v_norm,
        };
        let record = TelemetryRecord {
            epoch: k,
            nonce,
            y: y.iter().copied().collect(),
            shaft_cell: crypto::quantize(shaft_meas, quant.delta),
            residual: inn.r.iter().copied().collect(),
            s_id: spec.s_id,
            phi,
        };
        nonce += 1;
        let tagged = tagger.tag(&key.key, record)?;

        // Channel.
        let mut attack = "none";
        let mut msg = tagged;
        let roll: f64 = attack_rng.random();
        if roll < spec.attack.tamper_prob {
            attack = "tamper";
            msg.record.y[0] += 1.0;
        } else if roll < spec.attack.tamper_prob + spec.attack.replay_prob {
            if let Some(old) = &last_msg {
                attack = "replay";
                msg = old.clone();
            }
        }
        if attack == "none"
            && spec
                .attack
                .spoof
                .as_ref()
                .is_some_and(|sp| k >= sp.start_epoch)
        {
            attack = "spoof";
        }

        let own_shaft =
            state.omega_s + spec.shaft_sigma * verifier_rng.sample::<f64, _>(StandardNormal);
        let auth = verifier.verify(&key.key, &msg, own_shaft, &quant);
        last_msg = Some(msg.clone());
        *auth_outcomes
            .entry(
                serde_json::to_value(auth)
                    .expect("enum")
                    .as_str()
                    .unwrap_or("")
                    .to_string(),
            )
            .or_insert(0) += 1;

        // Residual gate.
        let eta_k = model.eta_at(m_s);
        let gate_ok = eta_k.is_some_and(|eta| inn.d2 <= eta);

        // Entropy accrual and refresh.
        let leak = model.ledger.dot_ell_side
            + model.ledger.dot_ell_vib * state.delta_tc.abs()
            + leak_rate_ch;
        key.entropy -= leak * h;
        key.age += h;
        let periods = channel::key_renewal_period(&RenewalInputs {
            ledger: model.ledger,
            delta_tc: state.delta_tc,
            regime,
            f_h: model.renewal.f_h,
            e_max: model.renewal.e_max,
            t_max: model.renewal.t_max,
            c_a_rate: model.renewal.c_a_rate,
        });
        let t_enforced = periods.t_enforced;
        let mut refreshed = false;
        if key.age >= t_enforced || key.entropy < model.ledger.kappa_min {
            key_epoch += 1;
            key = fresh_key(
                &mut key_rng,
                key_epoch,
                (k + 1) as f64 * h,
                p.kappa_bits,
                initial_entropy(state.delta_tc),
            )?;
            refreshes += 1;
            refreshed = true;
        }
        if t_enforced.is_finite() && t_enforced > 0.0 {
            max_age_ratio = max_age_ratio.max(key.age / t_enforced);
        }

        // Latency and release.
        let bus_us = if rt.converged {
            let jitter = if spec.jitter_us > 0 {
                latency_rng.random_range(0..=spec.jitter_us)
            } else {
                0
            };
            let overrun_draw: f64 = latency_rng.random();
            let overrun = if overrun_draw < spec.overrun_prob {
                spec.overrun_us
            } else {
                0
            };
            Some(rt.response_us + jitter + overrun + spec.attack.latency_inflation_us)
        } else {
            None
        };
        let (latency_us, delta_total_s, r_k_s) = match bus_us {
            Some(b) => {
                let total = b + model.ver.total_us();
                (
                    total,
                    total as f64 / MICROS_PER_SECOND as f64,
                    b as f64 / MICROS_PER_SECOND as f64,
                )
            }
            None => (u64::MAX, f64::INFINITY, f64::INFINITY),
        };
        let mut th = *theta;
        th.ndot_h = ndot_h;
        th.m_s = m_s;
        let window =
            engine::actuation_window(&crypto_free_window(model, &th, r_k_s, step.applied.0));
        let mu_lat = stability::latency_margin(&model.certs, delta_total_s, s_w);
        let h_key = key.entropy;
        let b_sec = model.budget.crypto_sum()
            + channel::leftover_from_slack(model.ledger.eps_smooth, h_key_slack(&key, model));
        let gate = GateInputs {
            verify_ok: auth.accepted(),
            b_sec,
            eps_star: model.eps_star,
            delta_total_s,
            deadline_s: deadline_us as f64 / MICROS_PER_SECOND as f64,
            w_act_s: window,
            mu_lat,
            d2: inn.d2,
            eta_k,
            h_key,
            kappa_min: model.ledger.kappa_min,
        };
        let verdict = envelope::combined_verdict(&gate, &spec.ablation);
        let predicate_ok = envelope::release_predicate(&gate).passed();
        let is_released = verdict.passed();
        if is_released && !predicate_ok && spec.ablation == Ablation::default() {
            predicate_violations += 1;
        }
        let reason = match verdict.first_failure() {
            Some(c) => c.reason().to_string(),
            None => String::new(),
        };
        if is_released {
            released += 1;
        } else {
            *denial_reasons.entry(reason.clone()).or_insert(0) += 1;
        }

        let dev = DVector::from_column_slice(&msg.record.y) - &p.meas * &x_true;
        let unsafe_y = dev.iter().zip(&p.y_safe).any(|(d, w)| d.abs() > *w);
        let sq = state.to_vector().norm_squared();
        if sq > 0.0 {
            ks.push(k as f64);
            lnx.push(sq.ln());
        }

        let rec = EpochRecord {
            epoch: k,
            mode,
            key_epoch,
            key_age: key.age,
            t_enforced,
            refreshed,
            attack,
            auth,
            d2: inn.d2,
            eta_k,
            gate_ok,
            latency_us,
            deadline_miss: latency_us > deadline_us,
            mu_lat,
            w_act: window,
            m_s,
            h_key,
            b_sec,
            predicate_ok,
            released: is_released,
            reason,
            in_cert: step.in_cert,
            unsafe_y,
            integrity_failure: auth.accepted() && gate_ok && unsafe_y,
            state_sq_norm: sq,
        };
        counts.add(&rec);
        let line = rec.to_json_line();
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
        sink(&rec, &line);
    }

    Ok(SimSummary {
        epochs,
        seed,
        response_us: rt.response_us,
        rt_converged: rt.converged,
        released,
        release_rate: (epochs > 0).then(|| released as f64 / epochs as f64),
        denial_reasons,
        auth_outcomes,
        rates: counts.rates(),
        fr_bound: crypto::false_rejection_bound(&quant),
        alarm_bound: estimator::chi_square_tail_bound(model.eta0, d_y).unwrap_or(1.0),
        refreshes,
        max_age_ratio,
        predicate_violations,
        log_sq_norm_slope: (ks.len() >= 2).then(|| stats::ols_slope(&ks, &lnx)),
        warnings,
        replay_hash: hex(&hasher.finalize()),
    })
}

fn h_key_slack(key: &Key, model: &EnvelopeModel) -> f64 {
    key.entropy - model.ledger.kappa
}

fn crypto_free_window(
    model: &EnvelopeModel,
    th: &Theta,
    r_k_s: f64,
    w_f: f64,
) -> engine::ActuationInputs {
    engine::ActuationInputs {
        w_f,
        ..model.actuation_inputs(th, r_k_s)
    }
}

/// Run and keep the whole log in memory.
pub fn run(
    model: &EnvelopeModel,
    theta: &Theta,
    spec: &SimSpec,
    epochs: u64,
    seed: u64,
) -> Result<(Vec<EpochRecord>, SimSummary), SimError> {
    let mut log = Vec::with_capacity(epochs.min(1 << 20) as usize);
    let summary = run_with(model, theta, spec, epochs, seed, |r, _| log.push(r.clone()))?;
    Ok((log, summary))
}

/// Hash of the canonical log for `(model, theta, spec, epochs, seed)`.
pub fn replay(
    model: &EnvelopeModel,
    theta: &Theta,
    spec: &SimSpec,
    epochs: u64,
    seed: u64,
) -> Result<String, SimError> {
    Ok(run_with(model, theta, spec, epochs, seed, |_, _| {})?.replay_hash)
}

/// Single-mode, noise-free spec observing the high-pressure spool.
pub fn quiet_spec() -> SimSpec {
    let mut meas = vec![vec![0.0; STATE_DIM]];
    meas[0][EngineState::N_H] = 1.0;
    SimSpec {
        h: 0.01,
        modes: vec![ModeSpec {
            drift: vec![vec![0.0; STATE_DIM]; STATE_DIM],
            input: None,
            offset: None,
            diffusion: None,
        }],
        transition: None,
        initial_mode: 0,
        x0: None,
        feedback: None,
        u_ref: [0.0; INPUT_DIM],
        limits: None,
        cert_box: None,
        meas,
        meas_cov: vec![vec![1.0]],
        meas_noise_scale: 0.0,
        p0: 1.0,
        shaft_sigma: 0.0,
        tag_bytes: 16,
        eps_pi_sigma: 0.0,
        jitter_us: 0,
        overrun_prob: 0.0,
        overrun_us: 0,
        y_safe: None,
        attack: AttackSpec::default(),
        ablation: Ablation::default(),
        s_id: 1,
    }
}

/// Stable single-mode plant with process and sensor noise, small release
/// jitter and rare overruns.
pub fn nominal_spec() -> SimSpec {
    let diag = |v: f64| {
        (0..STATE_DIM)
            .map(|i| {
                (0..STATE_DIM)
                    .map(|j| if i == j { v } else { 0.0 })
                    .collect()
            })
            .collect()
    };
    SimSpec {
        modes: vec![ModeSpec {
            drift: diag(-1.0),
            input: None,
            offset: None,
            diffusion: Some(diag(0.1)),
        }],
        meas_cov: vec![vec![0.01]],
        meas_noise_scale: 1.0,
        shaft_sigma: 0.05,
        jitter_us: 2,
        overrun_prob: 1e-3,
        overrun_us: 10,
        ..quiet_spec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::counterexample_model;

    fn diag_drift(d: &[f64; STATE_DIM]) -> Vec<Vec<f64>> {
        (0..STATE_DIM)
            .map(|i| {
                (0..STATE_DIM)
                    .map(|j| if i == j { d[i] } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn noisy_spec() -> SimSpec {
        let mut s = quiet_spec();
        s.modes[0].drift = diag_drift(&[-1.0; STATE_DIM]);
        s.modes[0].diffusion = Some(diag_drift(&[0.1; STATE_DIM]));
        s.meas_noise_scale = 1.0;
        s.meas_cov = vec![vec![0.01]];
        s
    }

    #[test]
    fn quiet_run_releases_everything() {
        let (m, th) = counterexample_model(-10);
        let (log, sum) = run(&m, &th, &quiet_spec(), 500, 3).unwrap();
        assert_eq!(sum.released, 500);
        assert_eq!(sum.rates.alarm_hat.unwrap().successes, 0);
        assert!(log.iter().all(|r| r.auth == AuthOutcome::Accept));
        let bus = sum.rates.eps_bus_hat.unwrap();
        assert_eq!((bus.estimate, bus.upper), (0.0, 3.0 / 500.0));
    }

    #[test]
    fn counterexample_denies_every_epoch() {
        let (m, th) = counterexample_model(1);
        let (log, sum) = run(&m, &th, &quiet_spec(), 200, 1).unwrap();
        assert!(log
            .iter()
            .all(|r| r.auth == AuthOutcome::Accept && !r.released && r.reason == "deadline"));
        assert_eq!(sum.denial_reasons.get("deadline"), Some(&200));
        let (m, th) = counterexample_model(0);
        let (_, sum) = run(&m, &th, &quiet_spec(), 200, 1).unwrap();
        assert_eq!(sum.released, 200);
        let mut spec = quiet_spec();
        spec.ablation.skip_timing = true;
        let (m, th) = counterexample_model(1);
        assert_eq!(run(&m, &th, &spec, 50, 1).unwrap().1.released, 50);
    }

    #[test]
    fn tamper_is_always_rejected() {
        let (m, th) = counterexample_model(-10);
        let mut spec = quiet_spec();
        spec.attack.tamper_prob = 1.0;
        let (log, sum) = run(&m, &th, &spec, 300, 9).unwrap();
        assert!(log
            .iter()
            .all(|r| r.auth == AuthOutcome::RejectForge && !r.released));
        assert_eq!(sum.rates.fail_int_hat.unwrap().successes, 0);
        assert_eq!(sum.denial_reasons.get("authentication"), Some(&300));
        // Without the tag check the residual gate alone lets the modified record through.
        spec.ablation.skip_authentication = true;
        let (_, sum) = run(&m, &th, &spec, 300, 9).unwrap();
        assert_eq!(sum.released, 300);
    }

    #[test]
    fn replays_are_caught() {
        let (m, th) = counterexample_model(-10);
        let mut spec = quiet_spec();
        spec.attack.replay_prob = 0.5;
        let (log, _) = run(&m, &th, &spec, 400, 2).unwrap();
        let replays: Vec<_> = log.iter().filter(|r| r.attack == "replay").collect();
        assert!(replays.len() > 100);
        assert!(replays
            .iter()
            .all(|r| matches!(r.auth, AuthOutcome::RejectReplay | AuthOutcome::RejectForge)));
        assert!(log
            .iter()
            .filter(|r| r.attack == "none")
            .all(|r| r.auth == AuthOutcome::Accept));
    }

    #[test]
    fn key_age_never_exceeds_enforced_period() {
        let (mut m, th) = counterexample_model(-10);
        m.ledger.dot_ell_side = 400.0;
        let (log, sum) = run(&m, &th, &quiet_spec(), 1000, 4).unwrap();
        assert!(sum.refreshes > 0);
        for r in &log {
            assert!(r.key_age <= r.t_enforced, "{r:?}");
            assert!(r.h_key >= m.ledger.kappa_min, "{r:?}");
        }
        // (256 - 128) / 400 = 0.32 s at 10 ms epochs: refresh every 32 epochs.
        assert_eq!(sum.refreshes, 1000 / 32);
    }

    #[test]
    fn released_epochs_satisfy_predicate() {
        let (m, th) = counterexample_model(-10);
        let mut spec = noisy_spec();
        spec.jitter_us = 30;
        spec.shaft_sigma = 0.1;
        let (log, sum) = run(&m, &th, &spec, 3000, 5).unwrap();
        assert_eq!(sum.predicate_violations, 0);
        assert!(log
            .iter()
            .filter(|r| r.released)
            .all(|r| r.predicate_ok && r.gate_ok && r.auth.accepted()));
        assert!(log.iter().any(|r| r.deadline_miss));
    }

    #[test]
    fn injected_overruns_show_up_in_bus_rate() {
        let (m, th) = counterexample_model(-10);
        let mut spec = quiet_spec();
        spec.overrun_prob = 0.01;
        spec.overrun_us = 100;
        let (_, sum) = run(&m, &th, &spec, 100_000, 6).unwrap();
        let p = sum.rates.eps_bus_hat.unwrap();
        assert!(p.lower <= 0.01 && 0.01 <= p.upper, "{p:?}");
    }

    #[test]
    fn nominal_alarm_rate_under_chernoff() {
        let (mut m, th) = counterexample_model(-10);
        m.eta0 = 4.0;
        let spec = noisy_spec();
        let (_, sum) = run(&m, &th, &spec, 100_000, 7).unwrap();
        let alarm = sum.rates.alarm_hat.unwrap();
        assert!(
            alarm.dominated_by(sum.alarm_bound, 3.0),
            "{alarm:?} vs {}",
            sum.alarm_bound
        );
        assert!(alarm.successes > 0);
        assert_eq!(sum.rates.fail_int_hat.unwrap().successes, 0);
    }

    #[test]
    fn false_rejection_under_bound() {
        let (m, th) = counterexample_model(-10);
        let mut spec = quiet_spec();
        spec.shaft_sigma = m.quant_delta / 4.0;
        let (_, sum) = run(&m, &th, &spec, 100_000, 8).unwrap();
        let fr = sum.rates.fr_hat.unwrap();
        assert!(
            fr.dominated_by(sum.fr_bound, 3.0),
            "{fr:?} vs {}",
            sum.fr_bound
        );
    }

    #[test]
    fn in_gate_spoof_counts_integrity_failures() {
        let (m, th) = counterexample_model(-10);
        let mut spec = noisy_spec();
        spec.y_safe = Some(vec![0.5]);
        spec.attack.spoof = Some(SpoofSpec {
            channel: 0,
            start_epoch: 100,
            ramp_per_epoch: 0.005,
        });
        let (log, sum) = run(&m, &th, &spec, 1000, 10).unwrap();
        let oracle = log
            .iter()
            .filter(|r| r.auth.accepted() && r.gate_ok && r.unsafe_y)
            .count() as u64;
        assert!(oracle > 0);
        assert_eq!(sum.rates.fail_int_hat.unwrap().successes, oracle);
        assert!(log
            .iter()
            .filter(|r| r.epoch < 100)
            .all(|r| !r.integrity_failure));
    }

    #[test]
    fn stable_plant_decays() {
        let (m, th) = counterexample_model(-10);
        let mut spec = quiet_spec();
        spec.modes[0].drift = diag_drift(&[-0.5; STATE_DIM]);
        spec.x0 = Some(vec![1.0; STATE_DIM]);
        let (_, sum) = run(&m, &th, &spec, 10_000, 11).unwrap();
        let slope = sum.log_sq_norm_slope.unwrap();
        // ln ||x||^2 falls by 2 ln(1 - 0.005) per epoch.
        assert!(
            (slope - 2.0 * (1.0f64 - 0.005).ln()).abs() < 1e-9,
            "{slope}"
        );
    }

    #[test]
    fn replay_hash_is_stable_and_seed_sensitive() {
        let (m, th) = counterexample_model(-10);
        let mut spec = noisy_spec();
        spec.jitter_us = 5;
        let a = replay(&m, &th, &spec, 200, 1).unwrap();
        assert_eq!(a, replay(&m, &th, &spec, 200, 1).unwrap());
        let mut seen = std::collections::HashSet::new();
        for s in 0..100 {
            assert!(seen.insert(replay(&m, &th, &spec, 50, s).unwrap()));
        }
        spec.modes[0].drift[0][0] = -1.0000001;
        assert_ne!(a, replay(&m, &th, &spec, 200, 1).unwrap());
    }

    #[test]
    fn zero_epochs_gives_null_rates() {
        let (m, th) = counterexample_model(0);
        let (log, sum) = run(&m, &th, &quiet_spec(), 0, 1).unwrap();
        assert!(log.is_empty());
        assert_eq!(sum.release_rate, None);
        assert_eq!(sum.rates, EmpiricalRates::default());
    }

    #[test]
    fn canonical_line_round_trips() {
        let (m, th) = counterexample_model(0);
        let mut first = String::new();
        run_with(&m, &th, &noisy_spec(), 1, 1, |_, l| first = l.to_string()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&first).unwrap();
        assert_eq!(v["epoch"], 0);
        assert_eq!(v["auth"], "accept");
        assert!(first.starts_with(
            "{\"epoch\":0,\"mode\":0,\"key_epoch\":0,\"key_age\":1.0000000000000000e-2"
        ));
    }

    #[test]
    fn config_errors_are_reported() {
        let (m, _) = counterexample_model(0);
        let mut s = quiet_spec();
        s.meas_cov = vec![vec![0.0]];
        assert!(matches!(s.prepare(&m), Err(SimError::Config(_))));
        let mut s = quiet_spec();
        s.modes[0].drift.pop();
        assert!(s
            .prepare(&m)
            .unwrap_err()
            .to_string()
            .contains("modes[0].drift"));
        let mut s = quiet_spec();
        s.attack.tamper_prob = 2.0;
        assert!(s.prepare(&m).is_err());
    }
}
