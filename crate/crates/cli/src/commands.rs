//! Subcommand bodies. Each returns the process exit code on success.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use css_envelope::bus::{self, OracleOutcome};
use css_envelope::channel;
use css_envelope::envelope::{
    self, AxisSpec, EnvelopeError, EnvelopeModel, EpochObservation, Theta,
};
use css_envelope::sim::{self, SimError};
use css_envelope::stability;
use css_envelope::validate::{self, Status};
use serde::Serialize;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::report::{num, opt, Bundle};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INFEASIBLE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bus(#[from] bus::BusError),
    #[error("writing reports: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Rt,
    Envelope,
    Stability,
    Entropy,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Rt => "rt",
            Target::Envelope => "envelope",
            Target::Stability => "stability",
            Target::Entropy => "entropy",
        }
    }
}

pub struct Loaded {
    pub config: Config,
    pub bytes: Vec<u8>,
    pub model: EnvelopeModel,
    pub theta: Theta,
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let config = Config::load(path)?;
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (model, theta) = config.to_model();
    Ok(Loaded {
        config,
        bytes,
        model,
        theta,
    })
}

fn bundle(l: &Loaded, name: &str) -> Result<Bundle, CliError> {
    Ok(Bundle::create(l.config.out_dir.join(name), name, &l.bytes)?)
}

fn finish(b: Bundle, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = b.dir().to_path_buf();
    let files = b.finish()?;
    for f in &files {
        writeln!(
            out,
            "wrote {} ({})",
            dir.join(&f.file).display(),
            &f.sha256[..16]
        )?;
    }
    Ok(())
}

pub fn analyze(l: &Loaded, target: Target, out: &mut dyn Write) -> Result<u8, CliError> {
    match target {
        Target::Rt => analyze_rt(l, out),
        Target::Envelope => analyze_envelope(l, out),
        Target::Stability => analyze_stability(l, out),
        Target::Entropy => analyze_entropy(l, out),
    }
}

#[derive(Serialize)]
struct TaskRow {
    id: String,
    priority: u32,
    length_bits: u64,
    response_us: Option<u64>,
    converged: bool,
    slack_us: Option<i64>,
    interference_us: Option<u64>,
}

#[derive(Serialize)]
struct RtReport {
    target: String,
    l_kem_bits: u64,
    tasks: Vec<TaskRow>,
    /// Tick-level timeline agrees with the fixed point for the target.
    oracle_agrees: Option<bool>,
    schedulability: bus::Schedulability,
    jump_l_kem_bits: Vec<u64>,
}

fn analyze_rt(l: &Loaded, out: &mut dyn Write) -> Result<u8, CliError> {
    let m = &l.model;
    let tasks = m.tasks_at(l.theta.l_kem);
    let mut rows = Vec::new();
    for (i, t) in tasks.iter().enumerate() {
        let rt = bus::response_time(&tasks, i, m.rate_bps, &m.ver, m.horizon_us)?;
        rows.push(TaskRow {
            id: t.id.clone(),
            priority: t.priority,
            length_bits: t.length_bits(),
            response_us: rt.converged.then_some(rt.response_us),
            converged: rt.converged,
            slack_us: rt.slack_us,
            interference_us: rt.converged.then(|| rt.interference_us()),
        });
    }
    let rt = bus::response_time(&tasks, m.target, m.rate_bps, &m.ver, m.horizon_us)?;
    let horizon = m.horizon_us.unwrap_or_else(|| bus::default_horizon(&tasks));
    let oracle_agrees = if rt.converged && horizon <= 10_000_000 {
        Some(
            matches!(bus::timeline_oracle(&tasks, m.target, m.rate_bps, horizon)?, OracleOutcome::Completed(t) if t == rt.response_us),
        )
    } else {
        None
    };
    let sched =
        bus::schedulability_check(&rt, m.deadline_us(), &m.ver, &m.physics_limits(&l.theta));

    let r = m.uncertainty.l_kem;
    let (lo, hi) = (r.lo.max(0.0).floor() as u64, r.hi.max(0.0).ceil() as u64);
    let step = ((hi - lo) / 1000).max(1);
    let grid: Vec<u64> = (lo..=hi).step_by(step as usize).collect();
    let sweep = bus::ciphertext_sweep(&m.tasks, m.target, &grid, m.rate_bps, &m.ver, m.horizon_us)?;

    let mut b = bundle(l, "analyze-rt")?;
    b.csv(
        "rt_sweep.csv",
        &["L_kem_bits", "R_us", "slack_us", "jump_flag"],
        sweep.rows.iter().map(|r| {
            vec![
                r.l_kem_bits.to_string(),
                opt(r.response_us),
                opt(r.slack_us),
                (r.jump as u8).to_string(),
            ]
        }),
    )?;
    let report = RtReport {
        target: tasks[m.target].id.clone(),
        l_kem_bits: l.theta.l_kem,
        tasks: rows,
        oracle_agrees,
        schedulability: sched.clone(),
        jump_l_kem_bits: sweep
            .jumps
            .iter()
            .map(|&i| sweep.rows[i].l_kem_bits)
            .collect(),
    };
    b.json("rt_report.json", &report)?;
    writeln!(
        out,
        "target {}: R = {} us, slack = {} us, {}",
        report.target,
        opt(rt.converged.then_some(rt.response_us)),
        opt(rt.slack_us),
        if sched.schedulable {
            "schedulable".to_string()
        } else {
            format!("not schedulable (binding: {:?})", sched.binding)
        }
    )?;
    finish(b, out)?;
    Ok(if sched.schedulable && oracle_agrees != Some(false) {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    })
}

fn analyze_envelope(l: &Loaded, out: &mut dyn Write) -> Result<u8, CliError> {
    let obs = EpochObservation {
        d2: l.config.estimator.observed_d2,
        ..EpochObservation::default()
    };
    let rep = l.model.analyze(&l.theta, &obs)?;
    let mut b = bundle(l, "analyze-envelope")?;
    b.json("envelope_report.json", &rep)?;
    b.csv(
        "sensitivities.csv",
        &[
            "parameter",
            "closed_form",
            "finite_diff",
            "rel_err",
            "left",
            "right",
        ],
        rep.sensitivities.iter().map(|s| {
            vec![
                s.parameter.to_string(),
                num(s.closed_form),
                num(s.finite_diff),
                num(s.rel_err),
                opt(s.one_sided.map(|p| p.0)),
                opt(s.one_sided.map(|p| p.1)),
            ]
        }),
    )?;
    writeln!(out, "verdict: {}", rep.summary)?;
    writeln!(
        out,
        "B_sec = {:.6e}, slack = {:.6e} s, mu_lat = {:.6e}, regime {}",
        rep.b_sec,
        rep.b_rt,
        rep.b_st,
        rep.regime.map(|r| r.label()).unwrap_or("-")
    )?;
    finish(b, out)?;
    Ok(if rep.feasible {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    })
}

#[derive(Serialize)]
struct StabilityReport {
    mu_lat: f64,
    delta_total_s: f64,
    s_w: f64,
    max_admissible_delay_s: Option<f64>,
    jump: Option<JumpReport>,
}

#[derive(Serialize)]
struct JumpReport {
    certs_valid: bool,
    beta: Option<f64>,
    per_mode: Vec<f64>,
    jump_condition_ok: Option<bool>,
    stable: bool,
    error: Option<String>,
}

fn jump_report(spec: &validate::JumpCertSpec) -> JumpReport {
    let fail = |e: String| JumpReport {
        certs_valid: false,
        beta: None,
        per_mode: vec![],
        jump_condition_ok: None,
        stable: false,
        error: Some(e),
    };
    let (certs, chain) = match validate::build_jump_certs(spec) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    match stability::markov_contraction(&certs, &chain, spec.h, spec.g) {
        Ok(c) => JumpReport {
            certs_valid: true,
            beta: Some(c.beta),
            per_mode: c.per_mode,
            jump_condition_ok: Some(c.jump_condition_ok),
            stable: c.stable,
            error: None,
        },
        Err(e) => fail(e.to_string()),
    }
}

fn analyze_stability(l: &Loaded, out: &mut dyn Write) -> Result<u8, CliError> {
    let m = &l.model;
    let th = &l.theta;
    let rep = m.evaluate(th, &EpochObservation::default())?;
    let max_delay = stability::max_admissible_delay(&m.certs, th.s_w);
    let report = StabilityReport {
        mu_lat: rep.b_st,
        delta_total_s: rep.delta_total_s,
        s_w: th.s_w,
        max_admissible_delay_s: max_delay,
        jump: l.config.verify.jump_certs.as_ref().map(jump_report),
    };
    let mut b = bundle(l, "analyze-stability")?;
    let span = max_delay
        .unwrap_or(rep.delta_total_s)
        .max(rep.delta_total_s)
        * 1.25;
    let span = if span > 0.0 { span } else { 1.0 };
    b.csv(
        "latency_margin.csv",
        &["delta_s", "mu_lat"],
        (0..=100).map(|k| {
            let d = span * k as f64 / 100.0;
            vec![num(d), num(stability::latency_margin(&m.certs, d, th.s_w))]
        }),
    )?;
    b.json("stability_report.json", &report)?;
    writeln!(
        out,
        "mu_lat = {:.6e} at delta = {:.6e} s; largest admissible delay {}",
        report.mu_lat,
        report.delta_total_s,
        max_delay.map_or("none".to_string(), |d| format!("{d:.6e} s"))
    )?;
    if let Some(j) = &report.jump {
        match &j.error {
            Some(e) => writeln!(out, "jump certificates rejected: {e}")?,
            None => writeln!(
                out,
                "jump certificates: beta = {:.4}, {}",
                j.beta.unwrap_or(f64::NAN),
                if j.stable {
                    "contracting"
                } else {
                    "not contracting"
                }
            )?,
        }
    }
    finish(b, out)?;
    let ok = report.mu_lat > 0.0 && report.jump.as_ref().is_none_or(|j| j.stable);
    Ok(if ok { EXIT_OK } else { EXIT_INFEASIBLE })
}

#[derive(Serialize)]
struct EntropyReport {
    residual_entropy_bits: f64,
    kappa: f64,
    kappa_min: f64,
    leftover_slack_bits: f64,
    leftover_bound: f64,
    channel_entropy_loss_bits: f64,
    channel_leakage_rate: f64,
    capacity_bps: f64,
    capacity_attenuation_slope: f64,
    renewal: channel::RenewalPeriods,
    renewal_v_sigma_slope: f64,
    sufficient: bool,
}

fn analyze_entropy(l: &Loaded, out: &mut dyn Write) -> Result<u8, CliError> {
    let m = &l.model;
    let th = &l.theta;
    let regime = m.regime_at(th);
    let ledger = m.ledger_at(&regime);
    let inputs = m.renewal_inputs(th);
    let h = ledger.residual_entropy(th.delta_tc);
    let report = EntropyReport {
        residual_entropy_bits: h,
        kappa: ledger.kappa,
        kappa_min: ledger.kappa_min,
        leftover_slack_bits: ledger.slack(th.delta_tc),
        leftover_bound: channel::leftover_hash_bound(&ledger, th.delta_tc),
        channel_entropy_loss_bits: ledger.dh_ch,
        channel_leakage_rate: channel::channel_leakage_rate(&regime),
        capacity_bps: channel::adversarial_capacity(&regime),
        capacity_attenuation_slope: channel::capacity_attenuation_slope(&regime),
        renewal: channel::key_renewal_period(&inputs),
        renewal_v_sigma_slope: channel::renewal_period_v_sigma_slope(&inputs),
        sufficient: h >= ledger.kappa_min,
    };
    let mut b = bundle(l, "analyze-entropy")?;
    let v = m.uncertainty.v_sigma;
    b.csv(
        "renewal_vs_v_sigma.csv",
        &[
            "V_sigma",
            "T_key_s",
            "T_sync_s",
            "T_enforced_s",
            "capacity_bps",
            "B_sec",
        ],
        (0..=50).map(|k| {
            let t = Theta {
                v_sigma: v.at(k as f64 / 50.0),
                ..*th
            };
            let p = m.renewal_periods(&t);
            vec![
                num(t.v_sigma),
                num(p.t_key),
                num(p.t_sync),
                num(p.t_enforced),
                num(channel::adversarial_capacity(&m.regime_at(&t))),
                num(m.security_bound(&t)),
            ]
        }),
    )?;
    b.json("entropy_report.json", &report)?;
    writeln!(
        out,
        "H_key = {:.3} bits (kappa_min {}), leftover bound {:.3e}, T_key = {:.4} s, T_sync = {:.4} s",
        report.residual_entropy_bits, report.kappa_min, report.leftover_bound, report.renewal.t_key, report.renewal.t_sync
    )?;
    finish(b, out)?;
    Ok(if report.sufficient {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    })
}

pub fn sweep(
    l: &Loaded,
    axis1: &AxisSpec,
    axis2: Option<&AxisSpec>,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    for a in std::iter::once(axis1).chain(axis2) {
        if !(a.from.is_finite() && a.to.is_finite()) {
            return Err(CliError::Usage(format!(
                "axis {} needs finite bounds",
                a.name
            )));
        }
    }
    let points = envelope::sweep(&l.model, &l.theta, axis1, axis2).map_err(|e| match e {
        EnvelopeError::UnknownAxis(_) => CliError::Usage(e.to_string()),
        other => other.into(),
    })?;
    let name = match axis2 {
        Some(a2) => format!("sweep_{}_{}.csv", axis1.name, a2.name),
        None => format!("sweep_{}.csv", axis1.name),
    };
    let mut header = vec![axis1.name.as_str()];
    if let Some(a2) = axis2 {
        header.push(a2.name.as_str());
    }
    header.extend([
        "B_sec",
        "R_us",
        "slack_us",
        "mu_lat",
        "T_key_s",
        "eta_k",
        "C_cert",
        "feasible",
        "regime",
        "jump_flag",
    ]);
    let mut b = bundle(l, "sweep")?;
    b.csv(
        &name,
        &header,
        points.iter().map(|p| {
            let mut row = vec![num(p.axis1)];
            if let Some(v) = p.axis2 {
                row.push(num(v));
            }
            row.extend([
                num(p.b_sec),
                opt(p.slack_us.map(|_| p.response_us)),
                opt(p.slack_us),
                num(p.mu_lat),
                num(p.t_key),
                opt(p.eta_k),
                num(p.c_cert),
                (p.feasible as u8).to_string(),
                p.regime.label().to_string(),
                (p.jump as u8).to_string(),
            ]);
            row
        }),
    )?;
    let feasible = points.iter().filter(|p| p.feasible).count();
    let jumps = points.iter().filter(|p| p.jump).count();
    writeln!(
        out,
        "{} grid points, {feasible} feasible, {jumps} interference jumps",
        points.len()
    )?;
    finish(b, out)?;
    Ok(EXIT_OK)
}

pub fn simulate(l: &Loaded, epochs: u64, seed: u64, out: &mut dyn Write) -> Result<u8, CliError> {
    let spec = l
        .config
        .sim
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no [sim] section".into()))?;
    spec.prepare(&l.model)?;
    let mut b = bundle(l, "simulate")?;
    let log_name = "epoch_log.jsonl";
    let mut w = BufWriter::new(File::create(b.path(log_name))?);
    let mut write_err: Option<io::Error> = None;
    let summary = sim::run_with(&l.model, &l.theta, spec, epochs, seed, |_, line| {
        if write_err.is_none() {
            if let Err(e) = w
                .write_all(line.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
            {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    w.flush()?;
    drop(w);
    b.register(log_name)?;
    b.json("sim_summary.json", &summary)?;
    writeln!(
        out,
        "{} epochs, {} released, replay hash {}",
        summary.epochs, summary.released, summary.replay_hash
    )?;
    let show = |p: Option<css_envelope::stats::Proportion>| {
        p.map_or("n/a".to_string(), |p| {
            format!("{:.3e} [{:.3e}, {:.3e}]", p.estimate, p.lower, p.upper)
        })
    };
    writeln!(
        out,
        "alarm rate {} vs bound {:.3e}",
        show(summary.rates.alarm_hat),
        summary.alarm_bound
    )?;
    writeln!(
        out,
        "false rejection {} vs bound {:.3e}",
        show(summary.rates.fr_hat),
        summary.fr_bound
    )?;
    for warning in &summary.warnings {
        writeln!(out, "warning: {warning}")?;
    }
    finish(b, out)?;
    Ok(EXIT_OK)
}

pub fn verify_bounds(l: &Loaded, out: &mut dyn Write) -> Result<u8, CliError> {
    let rows = validate::verify_bounds(&l.model, &l.theta, l.config.sim.as_ref(), &l.config.verify);
    let mut b = bundle(l, "verify-bounds")?;
    b.json("verify_report.json", &rows)?;
    b.csv(
        "verify_report.csv",
        &["check", "status", "empirical", "bound", "detail"],
        rows.iter().map(|r| {
            vec![
                r.name.clone(),
                r.status.label().to_string(),
                opt(r.empirical),
                opt(r.bound),
                r.detail.clone(),
            ]
        }),
    )?;
    for r in &rows {
        writeln!(
            out,
            "{:<12} {:<44} {:>8.2}s  {}",
            r.status.label(),
            r.name,
            r.runtime_s,
            r.detail
        )?;
    }
    let failed = rows.iter().filter(|r| !r.passed()).count();
    let errors = rows.iter().filter(|r| r.status == Status::Error).count();
    writeln!(
        out,
        "{} checks, {failed} not passing ({errors} errors)",
        rows.len()
    )?;
    finish(b, out)?;
    Ok(if failed == 0 {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    })
}
