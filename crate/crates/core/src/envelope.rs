//! Combined security, timing and stability envelope.
//!
//! [`EnvelopeModel`] holds everything that stays fixed across a sweep;
//! [`Theta`] is the swept parameter point. [`EnvelopeModel::evaluate`]
//! produces the three bounds, the release verdict and the certification
//! functional for one point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{self, BusError, BusTask, PhysicsLimits, VerificationDelays, MICROS_PER_SECOND};
use crate::channel::{self, ChannelRegime, EntropyLedger, RenewalInputs, RenewalPeriods};
use crate::crypto::{self, QuantizerSpec};
use crate::engine::{
    self, ActuationInputs, ActuationWindow, EngineLinearization, StressGate, TorsionalParams,
};
use crate::estimator;
use crate::stability::{self, LyapunovCerts};
use crate::verdict::{Condition, Verdict};

#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("unknown axis {0:?}")]
    UnknownAxis(String),
    #[error("axis {axis}: {reason}")]
    AxisValue { axis: String, reason: String },
}

/// Swept parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    pub v_sigma: f64,
    pub a_d: f64,
    pub delta_tc: f64,
    pub gamma_s: f64,
    pub m_s: f64,
    pub ndot_h: f64,
    pub l_kem: u64,
    pub s_w: f64,
    pub sigma_n: f64,
}

pub const AXES: [&str; 9] = [
    "v_sigma", "a_d", "delta_tc", "gamma_s", "m_s", "ndot_h", "l_kem", "s_w", "sigma_n",
];

impl Theta {
    pub fn get(&self, axis: &str) -> Result<f64, EnvelopeError> {
        Ok(match axis {
            "v_sigma" => self.v_sigma,
            "a_d" => self.a_d,
            "delta_tc" => self.delta_tc,
            "gamma_s" => self.gamma_s,
            "m_s" => self.m_s,
            "ndot_h" => self.ndot_h,
            "l_kem" => self.l_kem as f64,
            "s_w" => self.s_w,
            "sigma_n" => self.sigma_n,
            _ => return Err(EnvelopeError::UnknownAxis(axis.to_string())),
        })
    }

    /// Set one axis. `l_kem` is rounded to the nearest bit and must be
    /// nonnegative.
    pub fn set(&mut self, axis: &str, value: f64) -> Result<(), EnvelopeError> {
        let slot = match axis {
            "v_sigma" => &mut self.v_sigma,
            "a_d" => &mut self.a_d,
            "delta_tc" => &mut self.delta_tc,
            "gamma_s" => &mut self.gamma_s,
            "m_s" => &mut self.m_s,
            "ndot_h" => &mut self.ndot_h,
            "s_w" => &mut self.s_w,
            "sigma_n" => &mut self.sigma_n,
            "l_kem" => {
                if !(value >= 0.0) || !value.is_finite() {
                    return Err(EnvelopeError::AxisValue {
                        axis: axis.into(),
                        reason: "must be a nonnegative bit count".into(),
                    });
                }
                self.l_kem = value.round() as u64;
                return Ok(());
            }
            _ => return Err(EnvelopeError::UnknownAxis(axis.to_string())),
        };
        *slot = value;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecurityBudget {
    pub eps_kem: f64,
    pub eps_aead: f64,
    pub eps_zk: f64,
    pub eps_tag: f64,
    #[serde(default)]
    pub eps_puf: f64,
    #[serde(default)]
    pub eps_bus: f64,
    #[serde(default)]
    pub eps_st: f64,
    #[serde(default)]
    pub eps_fault: f64,
    #[serde(default)]
    pub eps_leak: f64,
    #[serde(default)]
    pub eps_rt: f64,
}

impl SecurityBudget {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("eps_kem", self.eps_kem),
            ("eps_aead", self.eps_aead),
            ("eps_zk", self.eps_zk),
            ("eps_tag", self.eps_tag),
            ("eps_puf", self.eps_puf),
            ("eps_bus", self.eps_bus),
            ("eps_st", self.eps_st),
            ("eps_fault", self.eps_fault),
            ("eps_leak", self.eps_leak),
            ("eps_rt", self.eps_rt),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn crypto_sum(&self) -> f64 {
        self.eps_kem + self.eps_aead + self.eps_zk + self.eps_tag
    }
}

/// Seven-term composable bound `kem + aead + zk + puf + tag + bus + st`, clamped.
pub fn hybrid_bound(b: &SecurityBudget) -> f64 {
    (b.eps_kem + b.eps_aead + b.eps_zk + b.eps_puf + b.eps_tag + b.eps_bus + b.eps_st).min(1.0)
}

/// Threat-model decomposition `kem + aead + zk + puf + leak + fault + rt`, clamped.
pub fn decomposition_bound(b: &SecurityBudget) -> f64 {
    (b.eps_kem + b.eps_aead + b.eps_zk + b.eps_puf + b.eps_leak + b.eps_fault + b.eps_rt).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeCondition {
    Authentication,
    Security,
    Deadline,
    Untimely,
    Stability,
    Innovation,
    Entropy,
}

impl Condition for EnvelopeCondition {
    fn reason(&self) -> &'static str {
        match self {
            EnvelopeCondition::Authentication => "authentication",
            EnvelopeCondition::Security => "security",
            EnvelopeCondition::Deadline => "deadline",
            EnvelopeCondition::Untimely => "untimely",
            EnvelopeCondition::Stability => "stability",
            EnvelopeCondition::Innovation => "innovation",
            EnvelopeCondition::Entropy => "entropy",
        }
    }
}

/// Everything the release gate looks at for one epoch. Times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateInputs {
    pub verify_ok: bool,
    pub b_sec: f64,
    pub eps_star: f64,
    pub delta_total_s: f64,
    pub deadline_s: f64,
    pub w_act_s: f64,
    pub mu_lat: f64,
    pub d2: f64,
    /// `None` when the surge margin left the analytic set.
    pub eta_k: Option<f64>,
    pub h_key: f64,
    pub kappa_min: f64,
}

/// Conditions removed for ablation studies. Never set in normal operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    #[serde(default)]
    pub skip_timing: bool,
    #[serde(default)]
    pub skip_authentication: bool,
}

fn push_innovation(v: &mut Verdict<EnvelopeCondition>, g: &GateInputs) {
    match g.eta_k {
        Some(eta) => v.at_most(EnvelopeCondition::Innovation, g.d2, eta),
        None => v.flag(EnvelopeCondition::Innovation, false),
    };
}

/// The five-way release predicate: verification, residual, timeliness,
/// entropy floor and positive latency margin. Non-compensatory.
pub fn release_predicate(g: &GateInputs) -> Verdict<EnvelopeCondition> {
    let mut v = Verdict::new();
    v.flag(EnvelopeCondition::Authentication, g.verify_ok);
    push_innovation(&mut v, g);
    v.at_most(EnvelopeCondition::Untimely, g.delta_total_s, g.w_act_s)
        .at_least(EnvelopeCondition::Entropy, g.h_key, g.kappa_min)
        .positive(EnvelopeCondition::Stability, g.mu_lat);
    v
}

/// Tag verification plus the six envelope inequalities, in reporting order.
pub fn combined_verdict(g: &GateInputs, ablation: &Ablation) -> Verdict<EnvelopeCondition> {
    let mut v = Verdict::new();
    if !ablation.skip_authentication {
        v.flag(EnvelopeCondition::Authentication, g.verify_ok);
    }
    v.at_most(EnvelopeCondition::Security, g.b_sec, g.eps_star);
    if !ablation.skip_timing {
        v.at_most(EnvelopeCondition::Deadline, g.delta_total_s, g.deadline_s)
            .at_most(EnvelopeCondition::Untimely, g.delta_total_s, g.w_act_s);
    }
    v.positive(EnvelopeCondition::Stability, g.mu_lat);
    push_innovation(&mut v, g);
    v.at_least(EnvelopeCondition::Entropy, g.h_key, g.kappa_min);
    v
}

/// `B_sec + 1{B_rt < 0} + 1{B_st <= 0} + 1{H < kappa_min}`.
pub fn certification_functional(
    b_sec: f64,
    b_rt: f64,
    b_st: f64,
    h_key: f64,
    kappa_min: f64,
) -> f64 {
    b_sec
        + (b_rt < 0.0) as u8 as f64
        + (b_st <= 0.0) as u8 as f64
        + (h_key < kappa_min) as u8 as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertComponent {
    Security,
    Timing,
    Stability,
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalSpec {
    pub f_h: Option<f64>,
    pub e_max: f64,
    pub t_max: f64,
    #[serde(default)]
    pub c_a_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn at(&self, frac: f64) -> f64 {
        self.lo + frac * (self.hi - self.lo)
    }
}

/// Admissible box for the regime analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySet {
    pub v_sigma: Range,
    pub a_d: Range,
    pub delta_tc: Range,
    pub gamma_s: Range,
    pub l_kem: Range,
    pub s_w: Range,
    pub m_s: Range,
}

impl UncertaintySet {
    pub fn validate(&self) -> Result<(), String> {
        for (name, r) in [
            ("v_sigma", self.v_sigma),
            ("a_d", self.a_d),
            ("delta_tc", self.delta_tc),
            ("gamma_s", self.gamma_s),
            ("l_kem", self.l_kem),
            ("s_w", self.s_w),
            ("m_s", self.m_s),
        ] {
            if !(r.lo <= r.hi) {
                return Err(format!("{name}: lower bound exceeds upper bound"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeThresholds {
    /// Fraction of each box extent below which a value counts as small.
    pub small_frac: f64,
    /// Fraction above which it counts as large.
    pub large_frac: f64,
    /// Distance to a detected interference jump that still counts as near.
    pub jump_distance_bits: u64,
    /// Grid points used to locate jumps along the `l_kem` extent.
    pub jump_grid_steps: usize,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            small_frac: 0.1,
            large_frac: 0.9,
            jump_distance_bits: 1,
            jump_grid_steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    R0,
    R1,
    R2,
    R3,
    #[serde(rename = "mixed")]
    Mixed,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::R0 => "R0",
            Regime::R1 => "R1",
            Regime::R2 => "R2",
            Regime::R3 => "R3",
            Regime::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeModel {
    pub budget: SecurityBudget,
    pub ledger: EntropyLedger,
    pub channel: ChannelRegime,
    /// Exposure time charged in the channel entropy degradation, s.
    pub exposure_s: f64,
    pub tasks: Vec<BusTask>,
    pub target: usize,
    pub rate_bps: u64,
    pub horizon_us: Option<u64>,
    pub ver: VerificationDelays,
    pub certs: LyapunovCerts,
    pub lin: EngineLinearization,
    pub gate: StressGate,
    pub torsional: TorsionalParams,
    /// Plant control deadline used in the actuation window, s.
    pub d_ctrl_s: f64,
    pub w_f: f64,
    pub eta0: f64,
    pub beta_s: f64,
    pub renewal: RenewalSpec,
    pub quant_delta: f64,
    pub eps_star: f64,
    pub uncertainty: UncertaintySet,
    #[serde(default)]
    pub thresholds: RegimeThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochObservation {
    pub verify_ok: bool,
    pub d2: f64,
    /// Empirical deadline-miss rate charged to the advantage.
    pub eps_bus_hat: f64,
    /// Empirical nonpositive-margin rate charged to the advantage.
    pub eps_st_hat: f64,
}

impl Default for EpochObservation {
    fn default() -> Self {
        Self {
            verify_ok: true,
            d2: 0.0,
            eps_bus_hat: 0.0,
            eps_st_hat: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub parameter: &'static str,
    pub closed_form: f64,
    pub finite_diff: f64,
    pub rel_err: f64,
    /// Left and right differences where a ceiling jump sits inside the stencil.
    pub one_sided: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub theta: Theta,
    pub b_sec: f64,
    /// Bus slack in seconds; `-inf` when the response-time iteration diverged.
    pub b_rt: f64,
    pub rt_converged: bool,
    pub b_st: f64,
    pub response_us: u64,
    pub delta_total_s: f64,
    pub w_act_s: f64,
    pub window: ActuationWindow,
    pub eta_k: Option<f64>,
    pub d2: f64,
    pub h_key: f64,
    pub leftover_slack_bits: f64,
    pub dh_ch: f64,
    pub renewal: RenewalPeriods,
    pub capacity_bps: f64,
    pub torsional_h_max_s: Option<f64>,
    pub false_rejection_bound: f64,
    pub schedulability: bus::Schedulability,
    pub verdict: Verdict<EnvelopeCondition>,
    pub release_predicate: Verdict<EnvelopeCondition>,
    pub feasible: bool,
    pub summary: String,
    pub c_cert: f64,
    /// `B_sec + eps_bus_hat + eps_st_hat`.
    pub advantage: f64,
    pub hybrid_total: f64,
    pub decomposition_total: f64,
    pub regime: Option<Regime>,
    pub sensitivities: Vec<SensitivityRow>,
}

impl EnvelopeReport {
    /// Components of the certification functional that are currently charged.
    pub fn fired(&self, eps_star: f64) -> Vec<CertComponent> {
        let mut out = Vec::new();
        if self.b_sec > eps_star {
            out.push(CertComponent::Security);
        }
        if self.b_rt < 0.0 {
            out.push(CertComponent::Timing);
        }
        if self.b_st <= 0.0 {
            out.push(CertComponent::Stability);
        }
        if self
            .verdict
            .get(EnvelopeCondition::Entropy)
            .is_some_and(|c| !c.passed)
        {
            out.push(CertComponent::Entropy);
        }
        out
    }
}

/// Pieces of one evaluation that other modules reuse.
#[derive(Debug, Clone)]
struct Core {
    regime: ChannelRegime,
    ledger: EntropyLedger,
    rt: bus::RtResult,
    delta_total_s: f64,
}

impl EnvelopeModel {
    pub fn deadline_us(&self) -> u64 {
        self.tasks[self.target].deadline_us
    }

    pub fn regime_at(&self, th: &Theta) -> ChannelRegime {
        ChannelRegime {
            v_sigma: th.v_sigma,
            a_d: th.a_d,
            ..self.channel
        }
    }

    pub fn ledger_at(&self, regime: &ChannelRegime) -> EntropyLedger {
        EntropyLedger {
            dh_ch: channel::channel_entropy_degradation(regime, self.exposure_s),
            ..self.ledger
        }
    }

    pub fn tasks_at(&self, l_kem: u64) -> Vec<BusTask> {
        let mut tasks = self.tasks.clone();
        tasks[self.target].kem_bits = l_kem;
        tasks
    }

    fn core(&self, th: &Theta) -> Result<Core, EnvelopeError> {
        let regime = self.regime_at(th);
        let ledger = self.ledger_at(&regime);
        let rt = bus::response_time(
            &self.tasks_at(th.l_kem),
            self.target,
            self.rate_bps,
            &self.ver,
            self.horizon_us,
        )?;
        let delta_total_s = if rt.converged {
            rt.delta_total_us(&self.ver) as f64 / MICROS_PER_SECOND as f64
        } else {
            f64::INFINITY
        };
        Ok(Core {
            regime,
            ledger,
            rt,
            delta_total_s,
        })
    }

    pub fn security_bound(&self, th: &Theta) -> f64 {
        let ledger = self.ledger_at(&self.regime_at(th));
        self.budget.crypto_sum() + channel::leftover_hash_bound(&ledger, th.delta_tc)
    }

    /// Bus slack in seconds, `-inf` when the iteration diverged.
    pub fn timing_bound(&self, th: &Theta) -> Result<f64, EnvelopeError> {
        let c = self.core(th)?;
        Ok(c.rt
            .slack_us
            .map_or(f64::NEG_INFINITY, |s| s as f64 / MICROS_PER_SECOND as f64))
    }

    pub fn stability_bound(&self, th: &Theta) -> Result<f64, EnvelopeError> {
        let c = self.core(th)?;
        Ok(stability::latency_margin(
            &self.certs,
            c.delta_total_s,
            th.s_w,
        ))
    }

    pub fn renewal_inputs(&self, th: &Theta) -> RenewalInputs {
        RenewalInputs {
            ledger: self.ledger,
            delta_tc: th.delta_tc,
            regime: self.regime_at(th),
            f_h: self.renewal.f_h,
            e_max: self.renewal.e_max,
            t_max: self.renewal.t_max,
            c_a_rate: self.renewal.c_a_rate,
        }
    }

    pub fn renewal_periods(&self, th: &Theta) -> RenewalPeriods {
        channel::key_renewal_period(&self.renewal_inputs(th))
    }

    pub fn actuation_inputs(&self, th: &Theta, r_k_s: f64) -> ActuationInputs {
        ActuationInputs {
            d_ctrl: self.d_ctrl_s,
            r_k: r_k_s,
            ndot_h: th.ndot_h,
            ndot_max: self.gate.ndot_max,
            w_f: self.w_f,
            w_f_max: self.gate.w_f_max,
            m_s: th.m_s,
            l_ndot: self.lin.l_ndot,
            l_w: self.lin.l_w,
            l_s: self.lin.l_s,
        }
    }

    pub fn physics_limits(&self, th: &Theta) -> PhysicsLimits {
        let tors = TorsionalParams {
            gamma_s: th.gamma_s,
            ..self.torsional
        };
        PhysicsLimits {
            spool_s: (self.gate.ndot_max - th.ndot_h.abs()) / self.lin.l_ndot,
            surge_s: th.m_s / self.lin.l_s,
            torsional_s: engine::max_auth_sampling_interval(&tors).unwrap_or(f64::INFINITY),
        }
    }

    pub fn eta_at(&self, m_s: f64) -> Option<f64> {
        estimator::surge_coupled_threshold(self.eta0, self.beta_s, m_s).ok()
    }

    /// Evaluate every bound and the release verdict at `th`.
    pub fn evaluate(
        &self,
        th: &Theta,
        obs: &EpochObservation,
    ) -> Result<EnvelopeReport, EnvelopeError> {
        let c = self.core(th)?;
        let b_sec = self.budget.crypto_sum() + channel::leftover_hash_bound(&c.ledger, th.delta_tc);
        let b_rt =
            c.rt.slack_us
                .map_or(f64::NEG_INFINITY, |s| s as f64 / MICROS_PER_SECOND as f64);
        let b_st = stability::latency_margin(&self.certs, c.delta_total_s, th.s_w);
        let r_k = if c.rt.converged {
            c.rt.response_us as f64 / MICROS_PER_SECOND as f64
        } else {
            f64::INFINITY
        };
        let window = ActuationWindow::new(&self.actuation_inputs(th, r_k));
        let w_act_s = window.value();
        let eta_k = self.eta_at(th.m_s);
        let h_key = c.ledger.residual_entropy(th.delta_tc);
        let gate = GateInputs {
            verify_ok: obs.verify_ok,
            b_sec,
            eps_star: self.eps_star,
            delta_total_s: c.delta_total_s,
            deadline_s: self.deadline_us() as f64 / MICROS_PER_SECOND as f64,
            w_act_s,
            mu_lat: b_st,
            d2: obs.d2,
            eta_k,
            h_key,
            kappa_min: c.ledger.kappa_min,
        };
        let verdict = combined_verdict(&gate, &Ablation::default());
        let feasible = verdict.passed();
        let tors = TorsionalParams {
            gamma_s: th.gamma_s,
            ..self.torsional
        };
        let budget = SecurityBudget {
            eps_puf: channel::leftover_hash_bound(&c.ledger, th.delta_tc),
            eps_bus: obs.eps_bus_hat,
            eps_st: obs.eps_st_hat,
            ..self.budget
        };
        Ok(EnvelopeReport {
            theta: *th,
            b_sec,
            b_rt,
            rt_converged: c.rt.converged,
            b_st,
            response_us: c.rt.response_us,
            delta_total_s: c.delta_total_s,
            w_act_s,
            window,
            eta_k,
            d2: obs.d2,
            h_key,
            leftover_slack_bits: c.ledger.slack(th.delta_tc),
            dh_ch: c.ledger.dh_ch,
            renewal: self.renewal_periods(th),
            capacity_bps: channel::adversarial_capacity(&c.regime),
            torsional_h_max_s: engine::max_auth_sampling_interval(&tors).ok(),
            false_rejection_bound: crypto::false_rejection_bound(&QuantizerSpec {
                delta: self.quant_delta,
                sigma_n: th.sigma_n,
            }),
            schedulability: bus::schedulability_check(
                &c.rt,
                self.deadline_us(),
                &self.ver,
                &self.physics_limits(th),
            ),
            release_predicate: release_predicate(&gate),
            summary: verdict.summary(),
            verdict,
            feasible,
            c_cert: certification_functional(b_sec, b_rt, b_st, h_key, c.ledger.kappa_min),
            advantage: b_sec + obs.eps_bus_hat + obs.eps_st_hat,
            hybrid_total: hybrid_bound(&budget),
            decomposition_total: decomposition_bound(&budget),
            regime: None,
            sensitivities: Vec::new(),
        })
    }

    /// Evaluate, classify and attach the sensitivity table.
    pub fn analyze(
        &self,
        th: &Theta,
        obs: &EpochObservation,
    ) -> Result<EnvelopeReport, EnvelopeError> {
        let jumps = self.jump_map()?;
        let mut report = self.evaluate(th, obs)?;
        report.regime = Some(self.classify(th, &jumps));
        report.sensitivities = self.sensitivity_table(th, &SensitivitySteps::default())?;
        Ok(report)
    }

    /// `L_kem` values at which the interference term steps up, scanned over
    /// the uncertainty box. Each entry is the first grid value after the step.
    pub fn jump_map(&self) -> Result<Vec<u64>, EnvelopeError> {
        let lo = self.uncertainty.l_kem.lo.max(0.0).round() as u64;
        let hi = self.uncertainty.l_kem.hi.max(0.0).round() as u64;
        let steps = self.thresholds.jump_grid_steps;
        let grid: Vec<u64> = if steps == 0 || (hi - lo) as usize <= steps {
            (lo..=hi).collect()
        } else {
            (0..=steps)
                .map(|k| lo + ((hi - lo) as u128 * k as u128 / steps as u128) as u64)
                .collect()
        };
        let sweep = bus::ciphertext_sweep(
            &self.tasks,
            self.target,
            &grid,
            self.rate_bps,
            &self.ver,
            self.horizon_us,
        )?;
        Ok(sweep
            .jumps
            .iter()
            .map(|&i| sweep.rows[i].l_kem_bits)
            .collect())
    }

    /// Whether leakage-driven renewal is the binding schedule at `th` and
    /// the radar-uncertainty term dominates the leakage rate.
    pub fn renewal_dominated(&self, th: &Theta) -> bool {
        let p = self.renewal_periods(th);
        let r = self.regime_at(th);
        let radar = r.zeta_sigma * r.v_sigma;
        let others = [
            self.ledger.dot_ell_side,
            self.ledger.dot_ell_vib * th.delta_tc.abs(),
            r.zeta_0,
            r.zeta_d * r.a_d,
        ];
        p.t_key < self.renewal.t_max && p.t_key <= p.t_sync && others.iter().all(|&o| radar >= o)
    }

    /// Regime label. Checked in the order R0, R1, R2, R3; anything else is mixed.
    pub fn classify(&self, th: &Theta, jumps: &[u64]) -> Regime {
        let u = &self.uncertainty;
        let t = &self.thresholds;
        let small = |r: Range, x: f64| x <= r.at(t.small_frac);
        let large = |r: Range, x: f64| x >= r.at(t.large_frac);
        if small(u.v_sigma, th.v_sigma)
            && small(u.a_d, th.a_d)
            && small(u.delta_tc, th.delta_tc.abs())
            && small(u.s_w, th.s_w)
            && large(u.m_s, th.m_s)
        {
            return Regime::R0;
        }
        if large(u.v_sigma, th.v_sigma) && self.renewal_dominated(th) {
            return Regime::R1;
        }
        if jumps
            .iter()
            .any(|&j| j.abs_diff(th.l_kem) <= t.jump_distance_bits)
        {
            return Regime::R2;
        }
        let near_floor = th.m_s <= self.gate.m_min + t.small_frac * (u.m_s.hi - u.m_s.lo);
        if near_floor && !small(u.s_w, th.s_w) {
            return Regime::R3;
        }
        Regime::Mixed
    }

    /// Closed-form partials next to finite differences.
    pub fn sensitivity_table(
        &self,
        th: &Theta,
        h: &SensitivitySteps,
    ) -> Result<Vec<SensitivityRow>, EnvelopeError> {
        let mut rows = Vec::new();
        let ledger = self.ledger_at(&self.regime_at(th));
        let slack = ledger.slack(th.delta_tc);

        let central =
            |f: &dyn Fn(f64) -> f64, x: f64, step: f64| (f(x + step) - f(x - step)) / (2.0 * step);
        let row = |parameter, closed_form: f64, finite_diff: f64| SensitivityRow {
            parameter,
            closed_form,
            finite_diff,
            rel_err: rel_err(closed_form, finite_diff),
            one_sided: None,
        };

        // The crypto terms are constant; differencing the full sum would
        // lose the leftover term to rounding.
        let leftover_at = |axis: &str, x: f64| {
            let mut t = *th;
            t.set(axis, x).expect("known axis");
            channel::leftover_hash_bound(&self.ledger_at(&self.regime_at(&t)), t.delta_tc)
        };
        let d = th.delta_tc.abs();
        let fd_delta = if d >= h.delta_tc {
            central(&|x| leftover_at("delta_tc", x), d, h.delta_tc)
        } else {
            let f = |x| leftover_at("delta_tc", x);
            (-3.0 * f(d) + 4.0 * f(d + h.delta_tc) - f(d + 2.0 * h.delta_tc)) / (2.0 * h.delta_tc)
        };
        rows.push(row(
            "dB_sec/d|delta_tc|",
            channel::leftover_loss_slope(ledger.ell_vib(), slack),
            fd_delta,
        ));
        rows.push(row(
            "dB_sec/dV_sigma",
            channel::leftover_loss_slope(self.channel.zeta_sigma * self.exposure_s, slack),
            central(&|x| leftover_at("v_sigma", x), th.v_sigma, h.v_sigma),
        ));

        // Stability margin against KEM length, in 1/bit.
        let st_at = |l: u64| -> Result<f64, EnvelopeError> {
            let mut t = *th;
            t.l_kem = l;
            self.stability_bound(&t)
        };
        let interference_at = |l: u64| -> Result<Option<u64>, EnvelopeError> {
            let rt = bus::response_time(
                &self.tasks_at(l),
                self.target,
                self.rate_bps,
                &self.ver,
                self.horizon_us,
            )?;
            Ok(rt.converged.then(|| rt.interference_us()))
        };
        let hl = h.l_kem_bits.max(1);
        let lo = th.l_kem.saturating_sub(hl);
        let hi = th.l_kem + hl;
        let cf = -self.certs.alpha1 / (self.certs.c1 * self.rate_bps as f64);
        let (i_lo, i_mid, i_hi) = (
            interference_at(lo)?,
            interference_at(th.l_kem)?,
            interference_at(hi)?,
        );
        let (s_lo, s_mid, s_hi) = (st_at(lo)?, st_at(th.l_kem)?, st_at(hi)?);
        let mut l_row = row("dB_st/dL_kem", cf, (s_hi - s_lo) / (hi - lo) as f64);
        if !(i_lo == i_mid && i_mid == i_hi) {
            l_row.one_sided = Some((
                (s_mid - s_lo) / (th.l_kem - lo).max(1) as f64,
                (s_hi - s_mid) / (hi - th.l_kem) as f64,
            ));
        }
        rows.push(l_row);

        let cap_at = |a: f64| {
            channel::adversarial_capacity(&ChannelRegime {
                a_d: a,
                ..self.regime_at(th)
            })
        };
        rows.push(row(
            "dC_A/dA_D",
            channel::capacity_attenuation_slope(&self.regime_at(th)),
            central(&cap_at, th.a_d, h.a_d),
        ));

        let tkey_at = |v: f64| {
            let mut t = *th;
            t.v_sigma = v;
            self.renewal_periods(&t).t_key
        };
        rows.push(row(
            "dT_key/dV_sigma",
            channel::renewal_period_v_sigma_slope(&self.renewal_inputs(th)),
            central(&tkey_at, th.v_sigma, h.v_sigma),
        ));

        if th.m_s > h.m_s {
            let eta = |m: f64| self.eta_at(m).unwrap_or(f64::NAN);
            rows.push(row(
                "deta/dM_s",
                estimator::surge_threshold_slope(self.eta0, self.beta_s, th.m_s),
                central(&eta, th.m_s, h.m_s),
            ));
        }

        let delta_total = self.core(th)?.delta_total_s;
        let mu_at = |s: f64| stability::latency_margin(&self.certs, delta_total, s);
        rows.push(row(
            "dmu_lat/ds_w",
            -self.certs.alpha2 / self.certs.c1,
            central(&mu_at, th.s_w, h.s_w),
        ));
        Ok(rows)
    }

    /// Walk from `from` to `to` in `steps` increments and record the first
    /// certification component to fire.
    pub fn ray_sweep(
        &self,
        from: &Theta,
        to: &Theta,
        steps: usize,
    ) -> Result<RaySweep, EnvelopeError> {
        let mut first = None;
        let mut points = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let s = k as f64 / steps.max(1) as f64;
            let th = lerp(from, to, s);
            let rep = self.evaluate(&th, &EpochObservation::default())?;
            let fired = rep.fired(self.eps_star);
            if first.is_none() {
                if let Some(&c) = fired.first() {
                    first = Some((k, c));
                }
            }
            points.push((s, rep.c_cert, fired));
        }
        Ok(RaySweep {
            first_fired: first,
            points,
        })
    }
}

fn rel_err(closed: f64, fd: f64) -> f64 {
    if closed == fd {
        0.0
    } else {
        (closed - fd).abs() / closed.abs().max(fd.abs())
    }
}

pub fn lerp(a: &Theta, b: &Theta, s: f64) -> Theta {
    let f = |x: f64, y: f64| x + s * (y - x);
    Theta {
        v_sigma: f(a.v_sigma, b.v_sigma),
        a_d: f(a.a_d, b.a_d),
        delta_tc: f(a.delta_tc, b.delta_tc),
        gamma_s: f(a.gamma_s, b.gamma_s),
        m_s: f(a.m_s, b.m_s),
        ndot_h: f(a.ndot_h, b.ndot_h),
        l_kem: f(a.l_kem as f64, b.l_kem as f64).round() as u64,
        s_w: f(a.s_w, b.s_w),
        sigma_n: f(a.sigma_n, b.sigma_n),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaySweep {
    pub first_fired: Option<(usize, CertComponent)>,
    /// `(ray parameter, C_cert, fired components)`.
    pub points: Vec<(f64, f64, Vec<CertComponent>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySteps {
    pub delta_tc: f64,
    pub v_sigma: f64,
    pub a_d: f64,
    pub m_s: f64,
    pub s_w: f64,
    pub l_kem_bits: u64,
}

impl Default for SensitivitySteps {
    fn default() -> Self {
        Self {
            delta_tc: 1e-5,
            v_sigma: 1e-5,
            a_d: 1e-6,
            m_s: 1e-6,
            s_w: 1e-4,
            l_kem_bits: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub axis1: f64,
    pub axis2: Option<f64>,
    pub b_sec: f64,
    pub b_rt: f64,
    pub mu_lat: f64,
    pub t_key: f64,
    pub eta_k: Option<f64>,
    pub response_us: u64,
    /// Bus slack of the target task; `None` when the analysis diverged.
    pub slack_us: Option<i64>,
    pub c_cert: f64,
    pub feasible: bool,
    pub regime: Regime,
    /// Interference stepped up from the previous point on the first axis.
    pub jump: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisSpec {
    pub name: String,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

impl AxisSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.steps == 0 {
            return vec![self.from];
        }
        (0..=self.steps)
            .map(|k| self.from + (self.to - self.from) * k as f64 / self.steps as f64)
            .collect()
    }
}

/// One- or two-dimensional grid over `Theta`. Points are evaluated in
/// parallel and returned in grid order.
pub fn sweep(
    model: &EnvelopeModel,
    base: &Theta,
    axis1: &AxisSpec,
    axis2: Option<&AxisSpec>,
) -> Result<Vec<SweepPoint>, EnvelopeError> {
    base.get(&axis1.name)?;
    if let Some(a) = axis2 {
        base.get(&a.name)?;
    }
    let jumps = model.jump_map()?;
    let v1 = axis1.values();
    let v2: Vec<Option<f64>> = match axis2 {
        Some(a) => a.values().into_iter().map(Some).collect(),
        None => vec![None],
    };
    let grid: Vec<(usize, f64, Option<f64>)> = v2
        .iter()
        .flat_map(|&b| v1.iter().map(move |&a| (a, b)))
        .enumerate()
        .map(|(i, (a, b))| (i, a, b))
        .collect();
    let evaluated: Result<Vec<(SweepPoint, Option<u64>)>, EnvelopeError> = grid
        .par_iter()
        .map(|&(index, a, b)| {
            let mut th = *base;
            th.set(&axis1.name, a)?;
            if let (Some(spec), Some(b)) = (axis2, b) {
                th.set(&spec.name, b)?;
            }
            let rep = model.evaluate(&th, &EpochObservation::default())?;
            let rt = bus::response_time(
                &model.tasks_at(th.l_kem),
                model.target,
                model.rate_bps,
                &model.ver,
                model.horizon_us,
            )?;
            Ok((
                SweepPoint {
                    index,
                    axis1: a,
                    axis2: b,
                    b_sec: rep.b_sec,
                    b_rt: rep.b_rt,
                    mu_lat: rep.b_st,
                    t_key: rep.renewal.t_key,
                    eta_k: rep.eta_k,
                    response_us: rep.response_us,
                    slack_us: rt.slack_us,
                    c_cert: rep.c_cert,
                    feasible: rep.feasible,
                    regime: model.classify(&th, &jumps),
                    jump: false,
                },
                rt.converged.then(|| rt.interference_us()),
            ))
        })
        .collect();
    let mut evaluated = evaluated?;
    let row_len = v1.len();
    for i in 0..evaluated.len() {
        if i % row_len == 0 {
            continue;
        }
        let jump = match (evaluated[i - 1].1, evaluated[i].1) {
            (Some(a), Some(b)) => b > a,
            (Some(_), None) => true,
            _ => false,
        };
        evaluated[i].0.jump = jump;
    }
    Ok(evaluated.into_iter().map(|(p, _)| p).collect())
}

/// Model in which authentication is ideal and the target misses its bus
/// deadline by `eps_r_us` microseconds (or meets it when negative).
pub fn counterexample_model(eps_r_us: i64) -> (EnvelopeModel, Theta) {
    let deadline_us: u64 = 1000;
    // One bit per microsecond: R = L_kem exactly.
    let l_kem = (deadline_us as i64 + eps_r_us).max(0) as u64;
    let task = BusTask {
        id: "cmd".into(),
        payload_bits: 0,
        kem_bits: 0,
        period_us: 10_000,
        deadline_us,
        priority: 1,
        jitter_us: 0,
        c_proto_us: 0,
        blocking_us: 0,
    };
    let model = EnvelopeModel {
        budget: SecurityBudget::default(),
        ledger: EntropyLedger {
            mu_puf: 512.0,
            eps_smooth: 0.0,
            ell_side: 0.0,
            ell_vib0: 0.0,
            ell_vib1: 0.0,
            v_norm: 0.0,
            dh_ch: 0.0,
            kappa: 128.0,
            kappa_min: 128.0,
            kappa_target: 256.0,
            dot_ell_side: 0.0,
            dot_ell_vib: 0.0,
        },
        channel: ChannelRegime {
            p_a: 0.0,
            gain: 1.0,
            nu: 0.0,
            a_d: 0.0,
            v_sigma: 0.0,
            chi_sigma: 0.0,
            n0: 1.0,
            b_ch: 1.0,
            zeta_0: 0.0,
            zeta_sigma: 0.0,
            zeta_d: 0.0,
        },
        exposure_s: 1.0,
        tasks: vec![task],
        target: 0,
        rate_bps: 1_000_000,
        horizon_us: None,
        ver: VerificationDelays::default(),
        certs: LyapunovCerts {
            c1: 1.0,
            c2: 2.0,
            c3: 1.0,
            c4: 1.0,
            alpha1: 1.0,
            alpha2: 0.01,
            w_f_lin: 1.0,
        },
        lin: EngineLinearization {
            a_pi_n: 0.0,
            a_pi_m: 0.0,
            a_m_n: 0.0,
            a_m_u: 0.0,
            b_n: 1.0,
            b_m: 1.0,
            b_u: 1.0,
            s_n: 0.0,
            s_m: 0.0,
            s_u: 0.0,
            gamma_op: 1.0,
            gamma_pi: 1.0,
            m_s0: 0.3,
            l_ndot: 1.0,
            l_w: 1.0,
            l_s: 1.0,
            l_gamma: 1.0,
        },
        gate: StressGate {
            m_min: 0.05,
            t_t4_max: 1.0,
            e_egt_max: 1.0,
            ndot_max: 1.0,
            w_f_max: 1.0,
            v_max: 1.0,
        },
        torsional: TorsionalParams {
            j_s: 1.0,
            d_s: 0.1,
            gamma_s: 1.0,
            q_s: 10.0,
        },
        d_ctrl_s: 0.1,
        w_f: 0.0,
        eta0: 9.0,
        beta_s: 0.0,
        renewal: RenewalSpec {
            f_h: None,
            e_max: 1.0,
            t_max: 10.0,
            c_a_rate: 0.0,
        },
        quant_delta: 1.0,
        eps_star: 2f64.powi(-32),
        uncertainty: UncertaintySet {
            v_sigma: Range { lo: 0.0, hi: 1.0 },
            a_d: Range { lo: 0.0, hi: 1.0 },
            delta_tc: Range { lo: 0.0, hi: 1.0 },
            gamma_s: Range { lo: 1.0, hi: 1.0 },
            l_kem: Range {
                lo: 900.0,
                hi: 1100.0,
            },
            s_w: Range { lo: 0.0, hi: 1.0 },
            m_s: Range { lo: 0.05, hi: 0.5 },
        },
        thresholds: RegimeThresholds::default(),
    };
    let theta = Theta {
        v_sigma: 0.0,
        a_d: 0.0,
        delta_tc: 0.0,
        gamma_s: 1.0,
        m_s: 0.3,
        ndot_h: 0.0,
        l_kem,
        s_w: 0.0,
        sigma_n: 0.0,
    };
    (model, theta)
}

/// Reference instance: a three-task bus at one bit per microsecond where
/// the command task alone takes 3 us and meets its 14 us deadline at
/// `R = 10 us`, with every other term comfortably inside the envelope.
pub fn reference_model() -> (EnvelopeModel, Theta) {
    let task = |id: &str, bits: u64, period_us: u64, deadline_us: u64, priority: u32| BusTask {
        id: id.into(),
        payload_bits: bits,
        kem_bits: 0,
        period_us,
        deadline_us,
        priority,
        jitter_us: 0,
        c_proto_us: 0,
        blocking_us: 0,
    };
    let eps = 2f64.powi(-40);
    let model = EnvelopeModel {
        budget: SecurityBudget {
            eps_kem: eps,
            eps_aead: eps,
            eps_zk: eps,
            eps_tag: eps,
            ..Default::default()
        },
        ledger: EntropyLedger {
            mu_puf: 500.0,
            eps_smooth: 0.0,
            ell_side: 8.0,
            ell_vib0: 1.0,
            ell_vib1: 100.0,
            v_norm: 1.0,
            dh_ch: 0.0,
            kappa: 256.0,
            kappa_min: 320.0,
            kappa_target: 400.0,
            dot_ell_side: 1.0,
            dot_ell_vib: 10.0,
        },
        channel: ChannelRegime {
            p_a: 1.0,
            gain: 1.0,
            nu: 0.0,
            a_d: 0.0,
            v_sigma: 0.0,
            chi_sigma: 0.1,
            n0: 1e-3,
            b_ch: 1000.0,
            zeta_0: 0.0,
            zeta_sigma: 2.0,
            zeta_d: 0.1,
        },
        exposure_s: 1.0,
        tasks: vec![
            task("hp1", 1, 4, 4, 1),
            task("hp2", 2, 6, 6, 2),
            task("cmd", 3, 40, 14, 3),
        ],
        target: 2,
        rate_bps: 1_000_000,
        horizon_us: None,
        ver: VerificationDelays::default(),
        certs: LyapunovCerts {
            c1: 1.0,
            c2: 2.0,
            c3: 1.0,
            c4: 1.0,
            alpha1: 1e4,
            alpha2: 0.3,
            w_f_lin: 0.5,
        },
        lin: EngineLinearization {
            a_pi_n: 0.0,
            a_pi_m: 0.0,
            a_m_n: 0.0,
            a_m_u: 0.0,
            b_n: 0.0,
            b_m: 0.0,
            b_u: 0.0,
            s_n: 0.0,
            s_m: 0.0,
            s_u: 0.0,
            gamma_op: 1.0,
            gamma_pi: 1.0,
            m_s0: 0.28,
            l_ndot: 1e6,
            l_w: 1e4,
            l_s: 1e3,
            l_gamma: 1.0,
        },
        gate: StressGate {
            m_min: 0.02,
            t_t4_max: 1.0,
            e_egt_max: 1.0,
            ndot_max: 100.0,
            w_f_max: 1.0,
            v_max: 1.0,
        },
        torsional: TorsionalParams {
            j_s: 1e-6,
            d_s: 1e-4,
            gamma_s: 1.5e4,
            q_s: 10.0,
        },
        d_ctrl_s: 1e-3,
        w_f: 0.5,
        eta0: 9.0,
        beta_s: 0.05,
        renewal: RenewalSpec {
            f_h: Some(200.0),
            e_max: 1e5,
            t_max: 100.0,
            c_a_rate: 0.0,
        },
        quant_delta: 1.0,
        eps_star: 2f64.powi(-32),
        uncertainty: UncertaintySet {
            v_sigma: Range { lo: 0.0, hi: 10.0 },
            a_d: Range { lo: 0.0, hi: 5.0 },
            delta_tc: Range { lo: 0.0, hi: 0.01 },
            gamma_s: Range { lo: 1e4, hi: 2e4 },
            l_kem: Range { lo: 0.0, hi: 8.0 },
            s_w: Range { lo: 0.0, hi: 1.0 },
            m_s: Range { lo: 0.02, hi: 0.3 },
        },
        thresholds: RegimeThresholds::default(),
    };
    let theta = Theta {
        v_sigma: 0.5,
        a_d: 0.2,
        delta_tc: 5e-4,
        gamma_s: 1.5e4,
        m_s: 0.28,
        ndot_h: 10.0,
        l_kem: 0,
        s_w: 0.05,
        sigma_n: 0.125,
    };
    (model, theta)
}

/// The canned separation scenario: ideal authentication, `R = D + 1 us`.
pub fn counterexample_scenario() -> Result<EnvelopeReport, EnvelopeError> {
    let (model, theta) = counterexample_model(1);
    model.evaluate(&theta, &EpochObservation::default())
}
