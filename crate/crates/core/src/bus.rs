//! Fixed-priority bus response-time analysis with post-quantum payloads.
//!
//! Time is integer microseconds so the interference ceilings are exact.
//! Transmission times round up to the next microsecond. Verification delays
//! are charged serially after the bus response, never overlapped with it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verdict::{Condition, Verdict};

pub const MICROS_PER_SECOND: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum BusError {
    #[error("bus rate must be positive")]
    ZeroRate,
    #[error("task {0}: period and deadline must be positive")]
    Timing(String),
    #[error("tasks {0} and {1} share priority {2}")]
    PriorityTie(String, String, u32),
    #[error("task index {0} out of range")]
    Index(usize),
    #[error("higher-priority task {0} has zero transmission time")]
    ZeroCost(String),
    #[error("duplicate task id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusTask {
    pub id: String,
    /// Non-KEM payload, bits.
    pub payload_bits: u64,
    /// KEM ciphertext carried by this task, bits.
    #[serde(default)]
    pub kem_bits: u64,
    pub period_us: u64,
    pub deadline_us: u64,
    /// Lower number is higher priority.
    pub priority: u32,
    #[serde(default)]
    pub jitter_us: u64,
    #[serde(default)]
    pub c_proto_us: u64,
    #[serde(default)]
    pub blocking_us: u64,
}

impl BusTask {
    pub fn length_bits(&self) -> u64 {
        self.payload_bits + self.kem_bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PayloadBudget {
    pub l_kem: u64,
    pub l_zk: u64,
    pub l_tag: u64,
    pub l_tel: u64,
    pub l_meta: u64,
    pub l_proto: u64,
}

pub fn epoch_payload(b: &PayloadBudget) -> u64 {
    b.l_kem + b.l_zk + b.l_tag + b.l_tel + b.l_meta + b.l_proto
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationDelays {
    pub d_kem_dec_us: u64,
    pub d_zk_ver_us: u64,
    pub d_mac_ver_us: u64,
    pub d_filt_us: u64,
    /// Torque propagation delay.
    pub delta_t_us: u64,
}

impl VerificationDelays {
    pub fn delta_ver_us(&self) -> u64 {
        self.d_kem_dec_us + self.d_zk_ver_us + self.d_mac_ver_us + self.d_filt_us
    }

    /// `Delta_ver + Delta_T`.
    pub fn total_us(&self) -> u64 {
        self.delta_ver_us() + self.delta_t_us
    }
}

/// `ceil(bits * 1e6 / rate)` microseconds.
pub fn serialization_us(bits: u64, rate_bps: u64) -> Result<u64, BusError> {
    if rate_bps == 0 {
        return Err(BusError::ZeroRate);
    }
    let num = bits as u128 * MICROS_PER_SECOND as u128;
    Ok(num.div_ceil(rate_bps as u128) as u64)
}

/// Worst-case transmission time `L / B_bus + C_proto`.
pub fn transmission_time(task: &BusTask, rate_bps: u64) -> Result<u64, BusError> {
    Ok(serialization_us(task.length_bits(), rate_bps)? + task.c_proto_us)
}

/// Lower envelope on the end-to-end delay from serialization and
/// verification alone.
pub fn serialization_floor(
    budget: &PayloadBudget,
    rate_bps: u64,
    ver: &VerificationDelays,
) -> Result<u64, BusError> {
    Ok(serialization_us(epoch_payload(budget), rate_bps)? + ver.total_us())
}

/// Reject ties, duplicate ids and nonpositive timing parameters.
pub fn validate_task_set(tasks: &[BusTask]) -> Result<(), BusError> {
    for (a, t) in tasks.iter().enumerate() {
        if t.period_us == 0 || t.deadline_us == 0 {
            return Err(BusError::Timing(t.id.clone()));
        }
        for u in &tasks[a + 1..] {
            if u.priority == t.priority {
                return Err(BusError::PriorityTie(
                    t.id.clone(),
                    u.id.clone(),
                    t.priority,
                ));
            }
            if u.id == t.id {
                return Err(BusError::DuplicateId(t.id.clone()));
            }
        }
    }
    Ok(())
}

/// Default divergence horizon: the sum of periods times 1000.
pub fn default_horizon(tasks: &[BusTask]) -> u64 {
    tasks
        .iter()
        .map(|t| t.period_us)
        .sum::<u64>()
        .saturating_mul(1000)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Interference {
    pub task_id: String,
    /// `ceil((R + J_j) / P_j)` at the fixed point.
    pub instances: u64,
    pub cost_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RtResult {
    pub task_id: String,
    pub response_us: u64,
    pub iterations: u32,
    pub converged: bool,
    /// `D - (R + Delta_ver + Delta_T)`; `None` when the iteration diverged.
    pub slack_us: Option<i64>,
    pub c_us: u64,
    pub blocking_us: u64,
    pub interference: Vec<Interference>,
}

impl RtResult {
    /// `R - C_i - B_i`, the higher-priority interference at the fixed point.
    pub fn interference_us(&self) -> u64 {
        self.response_us - self.c_us - self.blocking_us
    }

    pub fn delta_total_us(&self, ver: &VerificationDelays) -> u64 {
        self.response_us + ver.total_us()
    }
}

struct HpTask {
    id: String,
    c: u64,
    period: u64,
    jitter: u64,
}

fn higher_priority(
    tasks: &[BusTask],
    target: usize,
    rate_bps: u64,
) -> Result<Vec<HpTask>, BusError> {
    let me = &tasks[target];
    let mut hp = Vec::new();
    for t in tasks.iter().filter(|t| t.priority < me.priority) {
        let c = transmission_time(t, rate_bps)?;
        if c == 0 {
            return Err(BusError::ZeroCost(t.id.clone()));
        }
        hp.push(HpTask {
            id: t.id.clone(),
            c,
            period: t.period_us,
            jitter: t.jitter_us,
        });
    }
    Ok(hp)
}

/// Least fixed point of `R = C_i + B_i + sum_hp ceil((R + J_j)/P_j) C_j`,
/// iterated from `C_i + B_i`. Exceeding `horizon_us` reports `converged = false`.
pub fn response_time(
    tasks: &[BusTask],
    target: usize,
    rate_bps: u64,
    ver: &VerificationDelays,
    horizon_us: Option<u64>,
) -> Result<RtResult, BusError> {
    let me = tasks.get(target).ok_or(BusError::Index(target))?;
    validate_task_set(tasks)?;
    let c = transmission_time(me, rate_bps)?;
    let hp = higher_priority(tasks, target, rate_bps)?;
    let horizon = horizon_us.unwrap_or_else(|| default_horizon(tasks));
    let base = c + me.blocking_us;
    let mut r = base;
    let mut iterations = 0u32;
    let converged = loop {
        iterations += 1;
        let next = base
            + hp.iter()
                .map(|j| (r + j.jitter).div_ceil(j.period) * j.c)
                .sum::<u64>();
        if next > horizon {
            r = next;
            break false;
        }
        if next == r {
            break true;
        }
        r = next;
    };
    let interference = hp
        .iter()
        .map(|j| Interference {
            task_id: j.id.clone(),
            instances: (r + j.jitter).div_ceil(j.period),
            cost_us: j.c,
        })
        .collect();
    let slack_us = converged.then(|| me.deadline_us as i64 - (r + ver.total_us()) as i64);
    Ok(RtResult {
        task_id: me.id.clone(),
        response_us: r,
        iterations,
        converged,
        slack_us,
        c_us: c,
        blocking_us: me.blocking_us,
        interference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleOutcome {
    Completed(u64),
    Unbounded,
}

/// Tick-by-tick preemptive simulation of the level-i busy period.
///
/// Blocking is a job above every priority pending at time 0. Job `k` of a
/// higher-priority task is released at `k P_j - J_j`; releases before time 0
/// are pending at the start. The target completes at the first instant at
/// which its own work, the blocking work and every higher-priority job
/// released strictly earlier are done.
pub fn timeline_oracle(
    tasks: &[BusTask],
    target: usize,
    rate_bps: u64,
    horizon_us: u64,
) -> Result<OracleOutcome, BusError> {
    let me = tasks.get(target).ok_or(BusError::Index(target))?;
    validate_task_set(tasks)?;
    let c = transmission_time(me, rate_bps)?;
    let mut hp = higher_priority(tasks, target, rate_bps)?;
    hp.sort_by_key(|j| tasks.iter().find(|t| t.id == j.id).map(|t| t.priority));

    let mut blocking = me.blocking_us;
    let mut own = c;
    let mut pending = vec![0u64; hp.len()];
    // Index of the next unreleased job per task.
    let mut next_job = vec![0u64; hp.len()];
    let release_time = |j: &HpTask, k: u64| k as i128 * j.period as i128 - j.jitter as i128;
    for (idx, j) in hp.iter().enumerate() {
        while release_time(j, next_job[idx]) < 0 {
            pending[idx] += j.c;
            next_job[idx] += 1;
        }
    }
    let mut t = 0u64;
    loop {
        if blocking == 0 && own == 0 && pending.iter().all(|&p| p == 0) {
            return Ok(OracleOutcome::Completed(t));
        }
        if t >= horizon_us {
            return Ok(OracleOutcome::Unbounded);
        }
        for (idx, j) in hp.iter().enumerate() {
            while release_time(j, next_job[idx]) <= t as i128 {
                pending[idx] += j.c;
                next_job[idx] += 1;
            }
        }
        if blocking > 0 {
            blocking -= 1;
        } else if let Some(p) = pending.iter_mut().find(|p| **p > 0) {
            *p -= 1;
        } else if own > 0 {
            own -= 1;
        }
        t += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingTerm {
    Deadline,
    Spool,
    Surge,
    Torsional,
}

impl Condition for BindingTerm {
    fn reason(&self) -> &'static str {
        match self {
            BindingTerm::Deadline => "deadline",
            BindingTerm::Spool => "spool",
            BindingTerm::Surge => "surge",
            BindingTerm::Torsional => "torsional",
        }
    }
}

/// Physical delay budgets in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsLimits {
    /// `(Ndot_max - |Ndot_H|) / L_Ndot`.
    pub spool_s: f64,
    /// `M_s / L_s`.
    pub surge_s: f64,
    /// `(2 pi / q_s) sqrt(J_s Gamma_s)`.
    pub torsional_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedulability {
    pub schedulable: bool,
    pub binding: BindingTerm,
    pub delta_total_s: f64,
    pub bound_s: f64,
    pub checks: Verdict<BindingTerm>,
}

/// `R + Delta_ver + Delta_T <= min{D, spool, surge, torsional}`. The binding
/// term is the smallest bound, ties resolved in the order deadline, spool,
/// surge, torsional.
pub fn schedulability_check(
    rt: &RtResult,
    deadline_us: u64,
    ver: &VerificationDelays,
    physics: &PhysicsLimits,
) -> Schedulability {
    let bounds = [
        (
            BindingTerm::Deadline,
            deadline_us as f64 / MICROS_PER_SECOND as f64,
        ),
        (BindingTerm::Spool, physics.spool_s),
        (BindingTerm::Surge, physics.surge_s),
        (BindingTerm::Torsional, physics.torsional_s),
    ];
    let delta = if rt.converged {
        rt.delta_total_us(ver) as f64 / MICROS_PER_SECOND as f64
    } else {
        f64::INFINITY
    };
    let mut checks = Verdict::new();
    let (mut binding, mut bound) = bounds[0];
    for &(term, b) in &bounds {
        checks.at_most(term, delta, b);
        if b < bound {
            binding = term;
            bound = b;
        }
    }
    Schedulability {
        schedulable: checks.passed(),
        binding,
        delta_total_s: delta,
        bound_s: bound,
        checks,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub l_kem_bits: u64,
    pub response_us: Option<u64>,
    pub slack_us: Option<i64>,
    pub interference_us: Option<u64>,
    /// The interference term rose relative to the previous grid point, so the
    /// response stepped by a nonnegative combination of higher-priority costs.
    pub jump: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiphertextSweep {
    pub rows: Vec<SweepRow>,
    /// Indices of rows flagged as jumps.
    pub jumps: Vec<usize>,
}

/// Response time and slack along a KEM-length grid for the target task.
pub fn ciphertext_sweep(
    tasks: &[BusTask],
    target: usize,
    grid: &[u64],
    rate_bps: u64,
    ver: &VerificationDelays,
    horizon_us: Option<u64>,
) -> Result<CiphertextSweep, BusError> {
    let mut set = tasks.to_vec();
    let mut rows: Vec<SweepRow> = Vec::with_capacity(grid.len());
    for &l in grid {
        set.get_mut(target).ok_or(BusError::Index(target))?.kem_bits = l;
        let rt = response_time(&set, target, rate_bps, ver, horizon_us)?;
        let interference = rt.converged.then(|| rt.interference_us());
        let jump = match rows.last() {
            None => false,
            Some(prev) => match (prev.interference_us, interference) {
                (Some(a), Some(b)) => b > a,
                (Some(_), None) => true,
                _ => false,
            },
        };
        rows.push(SweepRow {
            l_kem_bits: l,
            response_us: rt.converged.then_some(rt.response_us),
            slack_us: rt.slack_us,
            interference_us: interference,
            jump,
        });
    }
    let jumps = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.jump)
        .map(|(i, _)| i)
        .collect();
    Ok(CiphertextSweep { rows, jumps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// Task whose transmission time is exactly `c` microseconds.
    pub(crate) fn task(id: &str, c: u64, period: u64, prio: u32) -> BusTask {
        BusTask {
            id: id.into(),
            payload_bits: 0,
            kem_bits: 0,
            period_us: period,
            deadline_us: period,
            priority: prio,
            jitter_us: 0,
            c_proto_us: c,
            blocking_us: 0,
        }
    }

    fn reference() -> Vec<BusTask> {
        vec![task("a", 1, 4, 1), task("b", 2, 6, 2), task("i", 3, 100, 3)]
    }

    #[test]
    fn transmission_examples() {
        let mut t = task("x", 1000, 10, 1);
        assert_eq!(transmission_time(&t, 100_000).unwrap(), 1000);
        t.payload_bits = 1000;
        assert_eq!(transmission_time(&t, 100_000).unwrap(), 11_000);
        t.payload_bits = 2000;
        t.c_proto_us = 0;
        assert_eq!(transmission_time(&t, 100_000).unwrap(), 20_000);
        assert_eq!(transmission_time(&t, 0), Err(BusError::ZeroRate));
        // Rounds up to the next microsecond.
        assert_eq!(serialization_us(1, 3_000_000).unwrap(), 1);
    }

    #[test]
    fn payload_and_floor_examples() {
        assert_eq!(epoch_payload(&PayloadBudget::default()), 0);
        let b = PayloadBudget {
            l_kem: 8000,
            l_zk: 2000,
            l_tag: 256,
            l_tel: 512,
            l_meta: 128,
            l_proto: 104,
        };
        assert_eq!(epoch_payload(&b), 11_000);
        let swapped = PayloadBudget {
            l_kem: 104,
            l_proto: 8000,
            ..b
        };
        assert_eq!(epoch_payload(&swapped), 11_000);
        let ver = VerificationDelays {
            d_kem_dec_us: 20_000,
            delta_t_us: 5_000,
            ..Default::default()
        };
        assert_eq!(serialization_floor(&b, 100_000, &ver).unwrap(), 135_000);
        assert_eq!(
            serialization_floor(&PayloadBudget::default(), 1, &VerificationDelays::default())
                .unwrap(),
            0
        );
    }

    #[test]
    fn reference_instance_is_ten() {
        let rt = response_time(
            &reference(),
            2,
            1_000_000,
            &VerificationDelays::default(),
            None,
        )
        .unwrap();
        assert!(rt.converged);
        assert_eq!(rt.response_us, 10);
        // 3 -> 6 -> 7 -> 9 -> 10 -> 10
        assert_eq!(rt.iterations, 5);
        assert_eq!(
            timeline_oracle(&reference(), 2, 1_000_000, 1000).unwrap(),
            OracleOutcome::Completed(10)
        );
        let counts: Vec<u64> = rt.interference.iter().map(|i| i.instances).collect();
        assert_eq!(counts, vec![3, 2]);
    }

    #[test]
    fn isolated_task_pays_only_own_cost() {
        let mut t = task("solo", 7, 50, 1);
        t.blocking_us = 4;
        let rt = response_time(&[t.clone()], 0, 1, &VerificationDelays::default(), None).unwrap();
        assert_eq!(rt.response_us, 11);
        assert_eq!(
            timeline_oracle(&[t], 0, 1, 1000).unwrap(),
            OracleOutcome::Completed(11)
        );
    }

    #[test]
    fn overloaded_hp_set_diverges() {
        let tasks = vec![task("a", 3, 4, 1), task("b", 2, 5, 2), task("i", 1, 100, 3)];
        let rt = response_time(&tasks, 2, 1, &VerificationDelays::default(), None).unwrap();
        assert!(!rt.converged);
        assert_eq!(rt.slack_us, None);
        assert_eq!(
            timeline_oracle(&tasks, 2, 1, 5000).unwrap(),
            OracleOutcome::Unbounded
        );
    }

    #[test]
    fn ties_are_rejected() {
        let tasks = vec![task("a", 1, 4, 1), task("b", 1, 4, 1)];
        assert!(matches!(
            validate_task_set(&tasks),
            Err(BusError::PriorityTie(..))
        ));
    }

    fn random_set(rng: &mut rng::StreamRng) -> Vec<BusTask> {
        let n = rng.random_range(1..=5);
        let mut prios: Vec<u32> = (1..=n as u32).collect();
        for i in (1..n).rev() {
            prios.swap(i, rng.random_range(0..=i));
        }
        (0..n)
            .map(|k| BusTask {
                id: format!("t{k}"),
                payload_bits: 0,
                kem_bits: 0,
                period_us: rng.random_range(1..=20),
                deadline_us: rng.random_range(1..=20),
                priority: prios[k],
                jitter_us: rng.random_range(0..=20),
                c_proto_us: rng.random_range(1..=20),
                blocking_us: rng.random_range(0..=20),
            })
            .collect()
    }

    #[test]
    fn fixed_point_matches_oracle_on_random_sets() {
        let mut rng = rng::stream(42, rng::MONTE_CARLO);
        let mut converged = 0;
        for _ in 0..1000 {
            let tasks = random_set(&mut rng);
            let i = rng.random_range(0..tasks.len());
            let horizon = default_horizon(&tasks);
            let rt =
                response_time(&tasks, i, 1, &VerificationDelays::default(), Some(horizon)).unwrap();
            let oracle = timeline_oracle(&tasks, i, 1, horizon).unwrap();
            if rt.converged {
                converged += 1;
                assert_eq!(
                    oracle,
                    OracleOutcome::Completed(rt.response_us),
                    "{tasks:?} target {i}"
                );
            } else {
                assert_eq!(oracle, OracleOutcome::Unbounded);
            }
        }
        assert!(converged > 300);
    }

    #[test]
    fn schedulability_examples() {
        let rt = response_time(
            &reference(),
            2,
            1_000_000,
            &VerificationDelays::default(),
            None,
        )
        .unwrap();
        let ver = VerificationDelays::default();
        let huge = PhysicsLimits {
            spool_s: 1e9,
            surge_s: 1e9,
            torsional_s: 1e9,
        };
        let s = schedulability_check(&rt, 1_000_000_000_000_000, &ver, &huge);
        assert!(s.schedulable);
        assert_eq!(s.binding, BindingTerm::Deadline);
        let eq = schedulability_check(&rt, 10, &ver, &huge);
        assert!(eq.schedulable);
        let surge = PhysicsLimits {
            surge_s: 5e-6,
            ..huge
        };
        let s = schedulability_check(&rt, 100, &ver, &surge);
        assert!(!s.schedulable);
        assert_eq!(s.binding, BindingTerm::Surge);
        assert_eq!(s.checks.first_failure(), Some(BindingTerm::Surge));
    }

    #[test]
    fn sweep_detects_single_jump() {
        // Target at 1 bit per microsecond: R = 3 + L + interference.
        let tasks = reference();
        let grid: Vec<u64> = (0..=3).collect();
        let s = ciphertext_sweep(
            &tasks,
            2,
            &grid,
            1_000_000,
            &VerificationDelays::default(),
            None,
        )
        .unwrap();
        let r: Vec<u64> = s.rows.iter().map(|r| r.response_us.unwrap()).collect();
        // C = 3, 4, 5, 6 give R = 10, 11, 12, 16.
        assert_eq!(r, vec![10, 11, 12, 16]);
        assert_eq!(s.jumps, vec![3]);
        let step = (r[3] - r[2]) - 1;
        assert!([1u64, 2, 3].contains(&step));
        let flat = ciphertext_sweep(
            &tasks,
            2,
            &[1, 1, 1],
            1_000_000,
            &VerificationDelays::default(),
            None,
        )
        .unwrap();
        assert!(flat
            .rows
            .windows(2)
            .all(|w| w[0].response_us == w[1].response_us));
        assert!(flat.jumps.is_empty());
    }

    #[test]
    fn finer_grid_agrees_with_coarse_grid() {
        let tasks = vec![
            task("a", 2, 9, 1),
            task("b", 3, 14, 2),
            task("i", 1, 500, 3),
        ];
        let ver = VerificationDelays::default();
        let coarse: Vec<u64> = (0..40).step_by(4).collect();
        let fine: Vec<u64> = (0..40).collect();
        let c = ciphertext_sweep(&tasks, 2, &coarse, 1_000_000, &ver, None).unwrap();
        let f = ciphertext_sweep(&tasks, 2, &fine, 1_000_000, &ver, None).unwrap();
        for row in &c.rows {
            let same = f
                .rows
                .iter()
                .find(|r| r.l_kem_bits == row.l_kem_bits)
                .unwrap();
            assert_eq!(same.response_us, row.response_us);
        }
        assert!(f
            .rows
            .windows(2)
            .all(|w| w[0].response_us <= w[1].response_us));
        assert!(f.rows.windows(2).all(|w| w[0].slack_us >= w[1].slack_us));
    }

    #[test]
    fn transcript_length_grows_as_lambda_log_lambda() {
        let gen = |lambda: f64| (3.0 * lambda * lambda.log2()).ceil() as u64;
        let ratios: Vec<f64> = (10..=14)
            .map(|e| {
                let lambda = (1u64 << e) as f64;
                let b = PayloadBudget {
                    l_kem: gen(lambda),
                    l_zk: gen(lambda) / 2,
                    l_tag: 256,
                    l_tel: 512,
                    l_meta: 128,
                    l_proto: 104,
                };
                epoch_payload(&b) as f64 / (lambda * lambda.log2())
            })
            .collect();
        let last = *ratios.last().unwrap();
        assert!(
            ratios.iter().all(|r| ((r - last) / last).abs() < 0.05),
            "{ratios:?}"
        );
    }

    proptest! {
        #[test]
        fn response_monotone_in_cost(
            c in 1u64..20, dc in 0u64..10, p1 in 5u64..30, p2 in 7u64..40, c1 in 1u64..3, c2 in 1u64..3
        ) {
            let mut tasks = vec![task("a", c1, p1, 1), task("b", c2, p2, 2), task("i", c, 1000, 3)];
            let ver = VerificationDelays::default();
            let r0 = response_time(&tasks, 2, 1, &ver, None).unwrap();
            tasks[2].c_proto_us = c + dc;
            let r1 = response_time(&tasks, 2, 1, &ver, None).unwrap();
            if r0.converged && r1.converged {
                prop_assert!(r1.response_us >= r0.response_us);
                prop_assert!(r1.slack_us <= r0.slack_us);
            }
        }

        #[test]
        fn floor_below_full_delay(l in 0u64..5000, dv in 0u64..1000, c in 1u64..5) {
            let ver = VerificationDelays { d_mac_ver_us: dv, ..Default::default() };
            let mut tasks = vec![task("a", c, 50, 1), task("i", 0, 1_000_000, 2)];
            tasks[1].kem_bits = l;
            let rt = response_time(&tasks, 1, 1_000_000, &ver, None).unwrap();
            let floor = serialization_floor(&PayloadBudget { l_kem: l, ..Default::default() }, 1_000_000, &ver).unwrap();
            if rt.converged {
                prop_assert!(floor <= rt.delta_total_us(&ver));
            }
        }
    }
}
