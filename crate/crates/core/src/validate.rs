//! Analytic-versus-empirical checks behind `verify-bounds`.
//!
//! Each check returns a [`CheckRow`]. Monte Carlo work fans out over
//! independent sub-streams so results do not depend on the worker count.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bus::{self, BusTask, OracleOutcome, VerificationDelays};
use crate::channel::{self, extractor, ChannelRegime, MarkovChain};
use crate::crypto::{self, QuantizerSpec, Tagger, TelemetryRecord, Verifier};
use crate::engine::StressRegime;
use crate::envelope::{
    self, Ablation, EnvelopeCondition, EnvelopeModel, EpochObservation, GateInputs,
    SensitivitySteps, Theta,
};
use crate::estimator;
use crate::rng::{self, StreamRng};
use crate::sim::{self, SimSpec};
use crate::stability::{self, LyapunovCerts, ModeCert};
use crate::stats::{self, Proportion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The bound is vacuous at these settings, so nothing was tested.
    Inconclusive,
    Error,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
            Status::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub status: Status,
    pub empirical: Option<f64>,
    pub bound: Option<f64>,
    pub detail: String,
    /// Wall time; kept out of reports so they stay byte-identical.
    #[serde(skip)]
    pub runtime_s: f64,
}

impl CheckRow {
    fn new(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            empirical: None,
            bound: None,
            detail: detail.into(),
            runtime_s: 0.0,
        }
    }

    fn error(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            status: Status::Error,
            ..Self::new(name, false, detail)
        }
    }

    fn values(mut self, empirical: f64, bound: f64) -> Self {
        self.empirical = Some(empirical);
        self.bound = Some(bound);
        self
    }

    pub fn passed(&self) -> bool {
        matches!(self.status, Status::Pass | Status::Inconclusive)
    }
}

fn timed(f: impl FnOnce() -> CheckRow) -> CheckRow {
    let t = Instant::now();
    let mut row = f();
    row.runtime_s = t.elapsed().as_secs_f64();
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiCase {
    pub d_y: usize,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorSpec {
    pub n_bits: u32,
    pub min_entropy: f64,
    pub out_bits: u32,
    pub hashes: usize,
}

/// Explicit per-mode certificates to audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpCertSpec {
    pub modes: Vec<ModeCertSpec>,
    pub transition: Vec<Vec<f64>>,
    pub h: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeCertSpec {
    pub p: Vec<Vec<f64>>,
    pub alpha: f64,
    pub gamma: f64,
    /// Taken as the minimal admissible value when omitted.
    #[serde(default)]
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub seed: u64,
    pub rt_sets: usize,
    pub fr_ratios: Vec<f64>,
    pub fr_trials: u64,
    pub chi_cases: Vec<ChiCase>,
    pub chi_trials: u64,
    pub extractor: ExtractorSpec,
    pub jump_systems: usize,
    pub jump_runs: usize,
    pub jump_epochs: usize,
    pub iss_plants: usize,
    pub iss_runs: usize,
    pub sim_epochs: u64,
    pub jump_certs: Option<JumpCertSpec>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        let chi_cases = [1usize, 2, 7]
            .iter()
            .flat_map(|&d| {
                [
                    ChiCase {
                        d_y: d,
                        eta: d as f64 + 1.0,
                    },
                    ChiCase {
                        d_y: d,
                        eta: 5.0 * d as f64,
                    },
                ]
            })
            .collect();
        Self {
            seed: 20_240_601,
            rt_sets: 1000,
            fr_ratios: vec![4.0, 6.0, 8.0, 12.0],
            fr_trials: 1_000_000,
            chi_cases,
            chi_trials: 1_000_000,
            extractor: ExtractorSpec {
                n_bits: 26,
                min_entropy: 24.0,
                out_bits: 4,
                hashes: 8,
            },
            jump_systems: 3,
            jump_runs: 1000,
            jump_epochs: 10_000,
            iss_plants: 5,
            iss_runs: 100,
            sim_epochs: 20_000,
            jump_certs: None,
        }
    }
}

const CHUNKS: u64 = 64;

/// Split `trials` over fixed chunks, each with its own sub-stream.
fn chunked<T: Send>(
    trials: u64,
    seed: u64,
    stream: u64,
    f: impl Fn(&mut StreamRng, u64, u64) -> T + Sync,
) -> Vec<T> {
    (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let lo = trials * c / CHUNKS;
            let hi = trials * (c + 1) / CHUNKS;
            let mut r = rng::substream(seed, stream, c);
            f(&mut r, lo, hi)
        })
        .collect()
}

fn random_task_set(r: &mut StreamRng) -> Vec<BusTask> {
    let n = r.random_range(1..=5);
    let mut prios: Vec<u32> = (1..=n as u32).collect();
    for i in (1..n).rev() {
        prios.swap(i, r.random_range(0..=i));
    }
    (0..n)
        .map(|k| BusTask {
            id: format!("t{k}"),
            payload_bits: r.random_range(1..=20),
            kem_bits: 0,
            period_us: r.random_range(1..=20),
            deadline_us: r.random_range(1..=20),
            priority: prios[k],
            jitter_us: r.random_range(0..=20),
            c_proto_us: 0,
            blocking_us: r.random_range(0..=20),
        })
        .collect()
}

/// Fixed-point response times against the tick-level timeline on random
/// integer task sets, plus the three-task reference instance.
pub fn rt_oracle_check(seed: u64, sets: usize) -> CheckRow {
    timed(|| {
        let mut r = rng::stream(seed, rng::MONTE_CARLO);
        let ver = VerificationDelays::default();
        let (mut converged, mut mismatches) = (0usize, Vec::new());
        for s in 0..sets {
            let tasks = random_task_set(&mut r);
            let i = r.random_range(0..tasks.len());
            let horizon = bus::default_horizon(&tasks);
            let rt = match bus::response_time(&tasks, i, 1_000_000, &ver, Some(horizon)) {
                Ok(rt) => rt,
                Err(e) => return CheckRow::error("rt_oracle", e.to_string()),
            };
            if !rt.converged {
                continue;
            }
            converged += 1;
            match bus::timeline_oracle(&tasks, i, 1_000_000, horizon) {
                Ok(OracleOutcome::Completed(t)) if t == rt.response_us => {}
                other => mismatches.push(format!(
                    "set {s}: fixed point {} vs {other:?}",
                    rt.response_us
                )),
            }
        }
        let reference = reference_response();
        let ok = mismatches.is_empty() && reference == Some(10) && converged > 0;
        let detail = format!(
            "{converged}/{sets} converged sets agree with the timeline; reference R = {reference:?} us{}",
            mismatches.first().map(|m| format!("; first mismatch {m}")).unwrap_or_default()
        );
        CheckRow::new("rt_oracle", ok, detail).values(mismatches.len() as f64, 0.0)
    })
}

fn reference_response() -> Option<u64> {
    let (m, th) = envelope::reference_model();
    let rt = bus::response_time(&m.tasks_at(th.l_kem), m.target, m.rate_bps, &m.ver, None).ok()?;
    rt.converged.then_some(rt.response_us)
}

/// Sign checks on grids: capacity falls with attenuation, renewal period
/// falls with radar uncertainty, response time rises with payload and the
/// alarm threshold rises with surge margin.
pub fn monotonicity_checks(seed: u64) -> Vec<CheckRow> {
    let mut r = rng::stream(seed, rng::MONTE_CARLO + 100);
    let mut rows = Vec::new();

    rows.push(timed(|| {
        let mut violations = 0;
        let mut probes = 0;
        for _ in 0..200 {
            let reg = ChannelRegime {
                p_a: r.random_range(0.1..10.0),
                gain: r.random_range(0.1..2.0),
                nu: 0.0,
                a_d: 0.0,
                v_sigma: r.random_range(0.0..10.0),
                chi_sigma: r.random_range(0.0..1.0),
                n0: r.random_range(1e-3..1.0),
                b_ch: r.random_range(1.0..1e3),
                zeta_0: 0.0,
                zeta_sigma: 0.0,
                zeta_d: 0.0,
            };
            let mut prev = f64::INFINITY;
            for k in 0..=50 {
                let c = channel::adversarial_capacity(&ChannelRegime {
                    a_d: k as f64 * 0.2,
                    ..reg
                });
                probes += 1;
                violations += (c > prev
                    || channel::capacity_attenuation_slope(&ChannelRegime {
                        a_d: k as f64 * 0.2,
                        ..reg
                    }) > 0.0) as usize;
                prev = c;
            }
        }
        CheckRow::new(
            "capacity_vs_attenuation",
            violations == 0,
            format!("{probes} probes, {violations} sign violations"),
        )
        .values(violations as f64, 0.0)
    }));

    rows.push(timed(|| {
        let (m, th) = envelope::reference_model();
        let mut violations = 0;
        let mut probes = 0;
        for _ in 0..200 {
            let mut model = m.clone();
            model.channel.zeta_sigma = r.random_range(0.01..5.0);
            model.ledger.dot_ell_side = r.random_range(0.0..5.0);
            let delta = r.random_range(0.0..0.01);
            let mut prev = f64::INFINITY;
            for k in 0..=50 {
                let t = Theta {
                    v_sigma: k as f64 * 0.4,
                    delta_tc: delta,
                    ..th
                };
                let tk = model.renewal_periods(&t).t_key;
                probes += 1;
                violations += (tk > prev) as usize;
                prev = tk;
            }
        }
        CheckRow::new(
            "renewal_vs_radar_uncertainty",
            violations == 0,
            format!("{probes} probes, {violations} sign violations"),
        )
        .values(violations as f64, 0.0)
    }));

    rows.push(timed(|| {
        let ver = VerificationDelays::default();
        let mut violations = 0;
        let mut probes = 0;
        for _ in 0..300 {
            let tasks = random_task_set(&mut r);
            let i = r.random_range(0..tasks.len());
            let horizon = bus::default_horizon(&tasks);
            let mut prev: Option<u64> = Some(0);
            for l in 0..=20u64 {
                let mut t = tasks.clone();
                t[i].kem_bits = l;
                let rt =
                    bus::response_time(&t, i, 1_000_000, &ver, Some(horizon)).expect("valid set");
                let cur = rt.converged.then_some(rt.response_us);
                probes += 1;
                // Once diverged, it stays diverged; otherwise R never drops.
                violations += match (prev, cur) {
                    (Some(a), Some(b)) => (b < a) as usize,
                    (None, Some(_)) => 1,
                    _ => 0,
                };
                prev = cur;
            }
        }
        CheckRow::new(
            "response_vs_payload",
            violations == 0,
            format!("{probes} probes, {violations} sign violations"),
        )
        .values(violations as f64, 0.0)
    }));

    rows.push(timed(|| {
        let mut violations = 0;
        let mut probes = 0;
        for _ in 0..200 {
            let eta0 = r.random_range(0.5..50.0);
            let beta = r.random_range(0.0..1.0);
            let mut prev = 0.0;
            for k in 1..=50 {
                let m = k as f64 * 0.01;
                let eta =
                    estimator::surge_coupled_threshold(eta0, beta, m).expect("positive margin");
                probes += 1;
                violations +=
                    (eta < prev || estimator::surge_threshold_slope(eta0, beta, m) < 0.0) as usize;
                prev = eta;
            }
        }
        CheckRow::new(
            "alarm_threshold_vs_surge_margin",
            violations == 0,
            format!("{probes} probes, {violations} sign violations"),
        )
        .values(violations as f64, 0.0)
    }));
    rows
}

/// Closed-form partials against finite differences at `theta`.
pub fn sensitivity_check(model: &EnvelopeModel, theta: &Theta) -> CheckRow {
    timed(
        || match model.sensitivity_table(theta, &SensitivitySteps::default()) {
            Ok(rows) => {
                let smooth: Vec<_> = rows
                    .iter()
                    .filter(|r| r.one_sided.is_none() && r.closed_form != 0.0)
                    .collect();
                let worst = smooth.iter().map(|r| r.rel_err).fold(0.0, f64::max);
                let bad: Vec<&str> = smooth
                    .iter()
                    .filter(|r| !(r.rel_err < 1e-5))
                    .map(|r| r.parameter)
                    .collect();
                CheckRow::new(
                    "sensitivity_partials",
                    bad.is_empty(),
                    format!(
                        "{} smooth rows, worst relative error {worst:.3e}{}",
                        smooth.len(),
                        if bad.is_empty() {
                            String::new()
                        } else {
                            format!("; off: {}", bad.join(", "))
                        }
                    ),
                )
                .values(worst, 1e-5)
            }
            Err(e) => CheckRow::error("sensitivity_partials", e.to_string()),
        },
    )
}

/// Shaft-speed false rejection through the real tag/verify path.
pub fn false_rejection_check(ratio: f64, trials: u64, seed: u64) -> CheckRow {
    let name = format!("false_rejection_delta_over_sigma_{ratio}");
    timed(|| {
        let q = QuantizerSpec {
            delta: 1.0,
            sigma_n: 1.0 / ratio,
        };
        let key = crypto::derive_key(
            &crypto::KeyMaterial {
                k_kem: b"verify-bounds kem",
                h_puf: b"verify-bounds puf",
                h_ch: b"",
                channel_entropy_bits: 0.0,
            },
            256,
            0,
            0.0,
        )
        .expect("fixed key material");
        let counts = chunked(
            trials,
            seed ^ ratio.to_bits(),
            rng::VERIFIER,
            |r, lo, hi| {
                let mut tagger = Tagger::new(16).expect("tag length");
                let mut verifier = Verifier::new();
                let mut rejected = 0u64;
                for nonce in lo..hi {
                    let omega: f64 = r.random_range(-50.0..50.0);
                    let sensed = omega + q.sigma_n * r.sample::<f64, _>(StandardNormal);
                    let own = omega + q.sigma_n * r.sample::<f64, _>(StandardNormal);
                    let rec = TelemetryRecord {
                        epoch: 0,
                        nonce,
                        y: vec![sensed],
                        shaft_cell: crypto::quantize(sensed, q.delta),
                        residual: vec![],
                        s_id: 0,
                        phi: StressRegime::default(),
                    };
                    let msg = tagger.tag(&key, rec).expect("fresh nonce");
                    rejected += !verifier.verify(&key, &msg, own, &q).accepted() as u64;
                }
                rejected
            },
        );
        let p = Proportion::wilson(counts.iter().sum(), trials).expect("trials > 0");
        let bound = crypto::false_rejection_bound(&q);
        domination_row(name.clone(), "rejected", p, bound)
    })
}

fn domination_row(name: String, event: &str, p: Proportion, bound: f64) -> CheckRow {
    let detail = format!(
        "{}/{} {event}, rate {:.3e} (95% CI {:.3e}..{:.3e}) vs bound {bound:.3e}",
        p.successes, p.trials, p.estimate, p.lower, p.upper
    );
    if bound >= 1.0 {
        return CheckRow {
            status: Status::Inconclusive,
            ..CheckRow::new(name, true, detail + "; bound is vacuous")
        }
        .values(p.estimate, bound);
    }
    CheckRow::new(name, p.dominated_by(bound, 3.0), detail).values(p.estimate, bound)
}

/// Chi-square exceedance against the Chernoff tail bound.
pub fn chi_square_check(case: ChiCase, trials: u64, seed: u64) -> CheckRow {
    let name = format!("chi_square_d{}_eta{}", case.d_y, case.eta);
    timed(|| {
        let bound = match estimator::chi_square_tail_bound(case.eta, case.d_y) {
            Ok(b) => b,
            Err(e) => return CheckRow::error(name.clone(), e.to_string()),
        };
        let counts = chunked(
            trials,
            seed ^ (case.d_y as u64) << 32 ^ case.eta.to_bits(),
            rng::MONTE_CARLO,
            |r, lo, hi| {
                (lo..hi)
                    .filter(|_| {
                        (0..case.d_y)
                            .map(|_| r.sample::<f64, _>(StandardNormal).powi(2))
                            .sum::<f64>()
                            > case.eta
                    })
                    .count() as u64
            },
        );
        let p = Proportion::wilson(counts.iter().sum(), trials).expect("trials > 0");
        domination_row(name.clone(), "above eta", p, bound)
    })
}

/// Extractor output distance on a biased source, tabulated exactly for a
/// sample of hash functions from the family.
pub fn extractor_check(spec: &ExtractorSpec, seed: u64) -> CheckRow {
    timed(|| {
        if spec.n_bits > 30 || spec.out_bits == 0 || spec.out_bits > 16 || spec.hashes == 0 {
            return CheckRow::error(
                "extractor_distance",
                "source must have at most 30 bits and output 1..=16 bits",
            );
        }
        let src = extractor::BiasedSource::with_min_entropy(spec.n_bits, spec.min_entropy);
        let mut r = rng::stream(seed, rng::MONTE_CARLO + 200);
        let c = extractor::check(&src, spec.out_bits, spec.hashes, &mut r);
        let slack = c.min_entropy - spec.out_bits as f64;
        CheckRow::new(
            "extractor_distance",
            c.mean_distance <= c.bound,
            format!(
                "H_min {:.2} bits to {} bits (slack {slack:.2}), mean distance {:.3e} over {} hashes (max {:.3e}), bound {:.3e}",
                c.min_entropy, spec.out_bits, c.mean_distance, spec.hashes, c.max_distance, c.bound
            ),
        )
        .values(c.mean_distance, c.bound)
    })
}

/// A random jump-linear system with known certificates.
#[derive(Debug, Clone)]
pub struct JumpSystem {
    pub certs: Vec<ModeCert>,
    pub chain: MarkovChain,
    pub h: f64,
    pub g: f64,
    /// Flow over one epoch per mode.
    pub flow: Vec<Matrix3<f64>>,
    pub p: Vec<Matrix3<f64>>,
    /// Variance of the multiplicative disturbance per mode.
    pub noise_var: Vec<f64>,
    pub beta: f64,
}

fn random_spd(r: &mut StreamRng, n: usize, scale: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal) * scale);
    &b * b.transpose()
}

/// Draw a certified-stable system with `modes` regimes in three dimensions.
///
/// Mode `a` flows as `x' = (-alpha_a/2 I + P_a^{-1} S_a) x` with `S_a` skew,
/// so `V_a` decays exactly as `e^{-alpha_a t}`. After the regime jump the
/// state is scaled by `1 + eps`, `eps ~ N(0, v_a)`, with `v_a` chosen so the
/// one-step expectation equals the certificate's per-mode factor.
pub fn random_jump_system(r: &mut StreamRng, modes: usize) -> JumpSystem {
    let n = 3;
    let h = 0.1;
    let g = 0.05;
    loop {
        let base = random_spd(r, n, 0.7) + DMatrix::identity(n, n);
        let ps: Vec<DMatrix<f64>> = (0..modes).map(|_| &base + random_spd(r, n, 0.15)).collect();
        let mut rows = Vec::new();
        for a in 0..modes {
            let stay = r.random_range(0.6..0.95);
            let mut row: Vec<f64> = (0..modes)
                .map(|b| {
                    if b == a {
                        0.0
                    } else {
                        r.random_range(0.1..1.0)
                    }
                })
                .collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p *= (1.0 - stay) / s);
            row[a] = stay;
            rows.push(row);
        }
        let chain = MarkovChain::new(rows).expect("rows normalized");
        let mut certs: Vec<ModeCert> = ps
            .iter()
            .map(|p| ModeCert {
                p: p.clone(),
                alpha: r.random_range(2.0..4.0),
                gamma: r.random_range(0.1..1.0),
                zeta: 0.0,
            })
            .collect();
        for a in 0..modes {
            certs[a].zeta = stability::minimal_zeta(&certs, &chain, a).expect("spd");
        }
        let c = stability::markov_contraction(&certs, &chain, h, g).expect("consistent");
        if !c.stable {
            continue;
        }
        let mut flow = Vec::new();
        for cert in &certs {
            let s = DMatrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal));
            let skew = (&s - s.transpose()) * 0.5;
            let a = DMatrix::identity(n, n) * (-cert.alpha / 2.0)
                + cert.p.clone().try_inverse().expect("spd") * skew;
            let phi = (a * h).exp();
            flow.push(Matrix3::from_fn(|i, j| phi[(i, j)]));
        }
        let p = certs
            .iter()
            .map(|c| Matrix3::from_fn(|i, j| c.p[(i, j)]))
            .collect();
        let noise_var = certs
            .iter()
            .map(|c| g * c.gamma * (c.alpha * h).exp() / (1.0 + c.zeta))
            .collect();
        return JumpSystem {
            certs,
            chain,
            h,
            g,
            flow,
            p,
            noise_var,
            beta: c.beta,
        };
    }
}

/// `ln V_k` sampled every `stride` epochs for one run, starting in mode 0
/// with `V_0 = 1`.
fn jump_run(sys: &JumpSystem, epochs: usize, stride: usize, r: &mut StreamRng) -> Vec<f64> {
    let mut x = Vector3::new(1.0, 0.0, 0.0);
    x /= (x.transpose() * sys.p[0] * x)[0].sqrt();
    let mut mode = 0;
    let mut log_scale = 0.0;
    let mut out = Vec::with_capacity(epochs / stride + 1);
    out.push(0.0);
    for k in 1..=epochs {
        x = sys.flow[mode] * x;
        let next = channel::markov_step(&sys.chain, mode, r);
        let eps: f64 = r.sample::<f64, _>(StandardNormal) * sys.noise_var[mode].sqrt();
        x *= 1.0 + eps;
        mode = next;
        let norm = x.norm();
        if norm > 0.0 {
            log_scale += norm.ln();
            x /= norm;
        }
        if k % stride == 0 {
            out.push(2.0 * log_scale + (x.transpose() * sys.p[mode] * x)[0].ln());
        }
    }
    out
}

/// Slope of `log E[V_k]` per epoch, estimated across runs.
pub fn jump_log_mean_slope(sys: &JumpSystem, runs: usize, epochs: usize, seed: u64) -> f64 {
    let stride = (epochs / 100).max(1);
    let traces: Vec<Vec<f64>> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            jump_run(
                sys,
                epochs,
                stride,
                &mut rng::substream(seed, rng::MONTE_CARLO + 300, i),
            )
        })
        .collect();
    let points = traces[0].len();
    let ln_n = (runs as f64).ln();
    let ks: Vec<f64> = (0..points).map(|j| (j * stride) as f64).collect();
    let log_mean: Vec<f64> = (0..points)
        .map(|j| stats::log_sum_exp(&traces.iter().map(|t| t[j]).collect::<Vec<_>>()) - ln_n)
        .collect();
    stats::ols_slope(&ks, &log_mean)
}

pub fn jump_system_check(index: usize, runs: usize, epochs: usize, seed: u64) -> CheckRow {
    let modes = 2 + index % 3;
    let name = format!("markov_contraction_system_{index}");
    timed(|| {
        let mut r = rng::substream(seed, rng::MONTE_CARLO + 400, index as u64);
        let sys = random_jump_system(&mut r, modes);
        let slope = jump_log_mean_slope(&sys, runs, epochs, seed ^ index as u64);
        let limit = sys.beta.ln() + 0.05;
        CheckRow::new(
            name.clone(),
            slope <= limit,
            format!("{modes} modes, beta {:.4}, log-mean slope {slope:.4} per epoch vs log beta + 0.05 = {limit:.4} ({runs} runs x {epochs} epochs)", sys.beta),
        )
        .values(slope, limit)
    })
}

/// Trajectories of random Hurwitz plants under bounded piecewise-constant
/// disturbances against the envelope built from the plant's own quadratic
/// Lyapunov function.
pub fn iss_check(plants: usize, runs: usize, seed: u64) -> CheckRow {
    timed(|| {
        let n = 3;
        let dt = 0.05;
        let steps = 400;
        let d_sup = 0.5;
        let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        let mut r = rng::stream(seed, rng::MONTE_CARLO + 500);
        let (mut points, mut violations, mut worst) = (0u64, 0u64, 0.0f64);
        for _ in 0..plants {
            let a = loop {
                let a = DMatrix::identity(n, n) * -1.0
                    + DMatrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal) * 0.4);
                if a.complex_eigenvalues().iter().all(|l| l.re < -0.05) {
                    break a;
                }
            };
            let p = match stability::lyapunov_solve(&a, &DMatrix::identity(n, n)) {
                Ok(p) => p,
                Err(e) => return CheckRow::error("iss_envelope", e.to_string()),
            };
            let eig = p.clone().symmetric_eigenvalues();
            let certs = LyapunovCerts {
                c1: eig.min(),
                c2: eig.max(),
                c3: 0.5,
                c4: 2.0 * eig.max() * eig.max(),
                alpha1: 1.0,
                alpha2: 1.0,
                w_f_lin: 0.0,
            };
            let mu = stability::latency_margin(&certs, 0.0, 0.0);
            let phi = (&a * dt).exp();
            let gamma =
                a.clone().try_inverse().expect("hurwitz") * (&phi - DMatrix::identity(n, n));
            for run in 0..runs {
                let mut rr =
                    rng::substream(seed, rng::MONTE_CARLO + 600, (points << 8) ^ run as u64);
                let mut x = DVector::from_fn(n, |_, _| rr.sample::<f64, _>(StandardNormal));
                x *= rr.random_range(0.5..5.0) / x.norm();
                let env = stability::iss_envelope(&certs, mu, x.norm(), d_sup, &grid)
                    .expect("positive margin");
                for (k, e) in env.iter().enumerate() {
                    points += 1;
                    let ratio = x.norm() / e;
                    worst = worst.max(ratio);
                    violations += (ratio > 1.0) as u64;
                    if k < steps {
                        let mut d = DVector::from_fn(n, |_, _| rr.sample::<f64, _>(StandardNormal));
                        d *= d_sup * rr.random_range(0.0..=1.0f64).sqrt() / d.norm();
                        x = &phi * x + &gamma * d;
                    }
                }
            }
        }
        CheckRow::new(
            "iss_envelope",
            violations == 0,
            format!("{points} grid points over {plants} plants, {violations} above the envelope, worst |x|/envelope {worst:.3}"),
        )
        .values(violations as f64, 0.0)
    })
}

/// Certificates and chain from a configured spec, with omitted `zeta`
/// filled in by the minimal admissible value.
pub fn build_jump_certs(spec: &JumpCertSpec) -> Result<(Vec<ModeCert>, MarkovChain), String> {
    let chain = MarkovChain::new(spec.transition.clone()).map_err(|e| e.to_string())?;
    let mut certs = Vec::new();
    for (a, m) in spec.modes.iter().enumerate() {
        let n = m.p.len();
        if n == 0 || m.p.iter().any(|row| row.len() != n) {
            return Err(format!("modes[{a}].p must be square"));
        }
        certs.push(ModeCert {
            p: DMatrix::from_fn(n, n, |i, j| m.p[i][j]),
            alpha: m.alpha,
            gamma: m.gamma,
            zeta: m.zeta.unwrap_or(0.0),
        });
    }
    for a in 0..certs.len() {
        if spec.modes[a].zeta.is_none() {
            certs[a].zeta =
                stability::minimal_zeta(&certs, &chain, a).map_err(|e| format!("mode {a}: {e}"))?;
        }
    }
    Ok((certs, chain))
}

/// Audit explicitly configured mode certificates.
pub fn jump_cert_check(spec: &JumpCertSpec) -> CheckRow {
    timed(|| {
        let (certs, chain) = match build_jump_certs(spec) {
            Ok(v) => v,
            Err(e) => return CheckRow::error("configured_jump_certificates", e),
        };
        match stability::markov_contraction(&certs, &chain, spec.h, spec.g) {
            Ok(c) => CheckRow::new(
                "configured_jump_certificates",
                c.stable,
                format!(
                    "beta {:.4}, jump condition {}",
                    c.beta,
                    if c.jump_condition_ok {
                        "holds"
                    } else {
                        "fails"
                    }
                ),
            )
            .values(c.beta, 1.0),
            Err(e) => CheckRow::error("configured_jump_certificates", e.to_string()),
        }
    })
}

/// Ideal authentication with a one-microsecond deadline miss.
pub fn counterexample_check() -> CheckRow {
    timed(|| {
        let run = |eps: i64| {
            let (m, th) = envelope::counterexample_model(eps);
            m.evaluate(&th, &EpochObservation::default())
        };
        match (run(1), run(0)) {
            (Ok(miss), Ok(meet)) => {
                let auth_ok = miss
                    .verdict
                    .get(EnvelopeCondition::Authentication)
                    .is_some_and(|c| c.passed);
                let only_deadline = miss.verdict.failures().collect::<Vec<_>>()
                    == vec![EnvelopeCondition::Deadline];
                CheckRow::new(
                    "counterexample_separation",
                    auth_ok && only_deadline && meet.feasible,
                    format!("R = D + 1 us: {}; R = D: {}", miss.summary, meet.summary),
                )
            }
            (Err(e), _) | (_, Err(e)) => {
                CheckRow::error("counterexample_separation", e.to_string())
            }
        }
    })
}

/// Each of the combined conditions, violated alone, denies release.
pub fn conjunctivity_check(model: &EnvelopeModel, theta: &Theta) -> CheckRow {
    timed(|| {
        let rep = match model.evaluate(theta, &EpochObservation::default()) {
            Ok(r) => r,
            Err(e) => return CheckRow::error("envelope_conjunctivity", e.to_string()),
        };
        let base = GateInputs {
            verify_ok: true,
            b_sec: rep.b_sec,
            eps_star: model.eps_star,
            delta_total_s: rep.delta_total_s,
            deadline_s: model.deadline_us() as f64 / 1e6,
            w_act_s: rep.w_act_s,
            mu_lat: rep.b_st,
            d2: 0.0,
            eta_k: rep.eta_k,
            h_key: rep.h_key,
            kappa_min: model.ledger.kappa_min,
        };
        let healthy = envelope::combined_verdict(&base, &Ablation::default());
        if !healthy.passed() {
            return CheckRow {
                status: Status::Inconclusive,
                ..CheckRow::new(
                    "envelope_conjunctivity",
                    true,
                    format!("configured point is not feasible ({})", healthy.summary()),
                )
            };
        }
        let violations: [(EnvelopeCondition, GateInputs); 7] = [
            (
                EnvelopeCondition::Authentication,
                GateInputs {
                    verify_ok: false,
                    ..base
                },
            ),
            (
                EnvelopeCondition::Security,
                GateInputs {
                    b_sec: base.eps_star * 2.0 + 1e-300,
                    ..base
                },
            ),
            (
                EnvelopeCondition::Deadline,
                GateInputs {
                    delta_total_s: base.deadline_s * 1.0001 + 1e-12,
                    w_act_s: f64::INFINITY,
                    ..base
                },
            ),
            (
                EnvelopeCondition::Untimely,
                GateInputs {
                    w_act_s: base.delta_total_s * 0.5,
                    ..base
                },
            ),
            (
                EnvelopeCondition::Stability,
                GateInputs {
                    mu_lat: 0.0,
                    ..base
                },
            ),
            (
                EnvelopeCondition::Innovation,
                GateInputs {
                    d2: base.eta_k.unwrap_or(0.0) * 1.01 + 1e-12,
                    ..base
                },
            ),
            (
                EnvelopeCondition::Entropy,
                GateInputs {
                    h_key: base.kappa_min - 1.0,
                    ..base
                },
            ),
        ];
        let mut wrong = Vec::new();
        for (cond, g) in violations {
            let v = envelope::combined_verdict(&g, &Ablation::default());
            if v.failures().collect::<Vec<_>>() != vec![cond] {
                wrong.push(format!("{cond:?}"));
            }
        }
        let adv_ok = rep.advantage <= model.eps_star + 0.0 + 0.0;
        CheckRow::new(
            "envelope_conjunctivity",
            wrong.is_empty() && adv_ok,
            if wrong.is_empty() {
                format!(
                    "all seven single violations deny; advantage {:.3e} <= eps_star {:.3e}",
                    rep.advantage, model.eps_star
                )
            } else {
                format!("violations not isolated: {}", wrong.join(", "))
            },
        )
    })
}

/// R0 corner, R1 renewal scaling and R3 threshold direction on the
/// configured uncertainty box.
pub fn regime_checks(model: &EnvelopeModel, theta: &Theta) -> Vec<CheckRow> {
    let u = model.uncertainty;
    let corner = Theta {
        v_sigma: u.v_sigma.lo,
        a_d: u.a_d.lo,
        delta_tc: u.delta_tc.lo,
        s_w: u.s_w.lo,
        m_s: u.m_s.hi,
        ..*theta
    };
    let mut rows = Vec::new();
    rows.push(timed(|| {
        let b = model.security_bound(&corner);
        let gap = b - model.budget.crypto_sum();
        CheckRow::new(
            "regime_r0_corner",
            gap.abs() <= 1e-6,
            format!(
                "B_sec {b:.6e}, crypto sum {:.6e}",
                model.budget.crypto_sum()
            ),
        )
        .values(gap.abs(), 1e-6)
    }));
    rows.push(timed(|| {
        let v_hi = u.v_sigma.hi;
        let v_lo = u.v_sigma.at(model.thresholds.large_frac);
        let product = |v: f64| {
            model
                .renewal_periods(&Theta {
                    v_sigma: v,
                    ..corner
                })
                .t_key
                * v
        };
        let th = Theta {
            v_sigma: v_lo,
            ..corner
        };
        if v_lo <= 0.0 || !model.renewal_dominated(&th) {
            return CheckRow {
                status: Status::Inconclusive,
                ..CheckRow::new(
                    "regime_r1_renewal_scaling",
                    true,
                    "radar term does not dominate the leakage rate on the top of the box",
                )
            };
        }
        let vals: Vec<f64> = (0..=10)
            .map(|k| product(v_lo + (v_hi - v_lo) * k as f64 / 10.0))
            .collect();
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        let spread = (hi - lo) / hi;
        CheckRow::new(
            "regime_r1_renewal_scaling",
            spread < 0.02,
            format!("T_key V_sigma in [{lo:.4}, {hi:.4}] for V_sigma in [{v_lo}, {v_hi}]"),
        )
        .values(spread, 0.02)
    }));
    rows.push(timed(|| {
        let m_min = model.gate.m_min.max(1e-9);
        let etas: Vec<f64> = (0..=20)
            .map(|k| {
                model
                    .eta_at(u.m_s.hi - (u.m_s.hi - m_min) * k as f64 / 20.0)
                    .unwrap_or(f64::NAN)
            })
            .collect();
        let ok = model.beta_s == 0.0 || etas.windows(2).all(|w| w[1] < w[0]);
        CheckRow::new(
            "regime_r3_threshold",
            ok,
            format!(
                "eta_k from {:.4} at M_s = {} to {:.4} at M_min = {m_min}",
                etas[0], u.m_s.hi, etas[20]
            ),
        )
    }));
    rows
}

/// Simulator invariants: key age, release consistency and exact replay.
pub fn sim_invariants_check(
    model: &EnvelopeModel,
    theta: &Theta,
    spec: &SimSpec,
    epochs: u64,
    seed: u64,
) -> CheckRow {
    timed(|| {
        let mut over_age = 0u64;
        let mut inconsistent = 0u64;
        let first = sim::run_with(model, theta, spec, epochs, seed, |r, _| {
            over_age += (r.key_age > r.t_enforced) as u64;
            inconsistent +=
                (r.released && spec.ablation == Ablation::default() && !r.predicate_ok) as u64;
        });
        let first = match first {
            Ok(s) => s,
            Err(e) => return CheckRow::error("sim_invariants", e.to_string()),
        };
        let again = match sim::replay(model, theta, spec, epochs, seed) {
            Ok(h) => h,
            Err(e) => return CheckRow::error("sim_invariants", e.to_string()),
        };
        let ok = over_age == 0 && inconsistent == 0 && again == first.replay_hash;
        CheckRow::new(
            "sim_invariants",
            ok,
            format!(
                "{epochs} epochs: {over_age} over-age keys, {inconsistent} releases outside the predicate, replay {}",
                if again == first.replay_hash { "identical" } else { "differs" }
            ),
        )
    })
}

/// Every check, in a fixed order.
pub fn verify_bounds(
    model: &EnvelopeModel,
    theta: &Theta,
    sim: Option<&SimSpec>,
    spec: &VerifySpec,
) -> Vec<CheckRow> {
    let mut rows = vec![rt_oracle_check(spec.seed, spec.rt_sets)];
    rows.extend(monotonicity_checks(spec.seed));
    rows.push(sensitivity_check(model, theta));
    for &ratio in &spec.fr_ratios {
        rows.push(false_rejection_check(ratio, spec.fr_trials, spec.seed));
    }
    for &case in &spec.chi_cases {
        rows.push(chi_square_check(case, spec.chi_trials, spec.seed));
    }
    rows.push(extractor_check(&spec.extractor, spec.seed));
    for i in 0..spec.jump_systems {
        rows.push(jump_system_check(
            i,
            spec.jump_runs,
            spec.jump_epochs,
            spec.seed,
        ));
    }
    rows.push(iss_check(spec.iss_plants, spec.iss_runs, spec.seed));
    if let Some(j) = &spec.jump_certs {
        rows.push(jump_cert_check(j));
    }
    rows.push(counterexample_check());
    rows.push(conjunctivity_check(model, theta));
    rows.extend(regime_checks(model, theta));
    if let Some(s) = sim {
        rows.push(sim_invariants_check(
            model,
            theta,
            s,
            spec.sim_epochs,
            spec.seed,
        ));
    }
    rows
}
