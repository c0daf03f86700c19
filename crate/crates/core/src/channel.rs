//! Markov channel regimes, Doppler-attenuated adversarial capacity, entropy
//! bookkeeping, leftover-hash bounds and key-renewal scheduling.
//!
//! Entropy is counted in bits throughout. Leakage-rate coefficients
//! (`zeta_*`, `dot_ell_*`) are bits per second; `zeta_d` is bits per second
//! per unit of attenuation `A_D`, which is itself a natural-log exponent.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("transition matrix row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("transition matrix entry ({0}, {1}) is negative or not finite")]
    Entry(usize, usize),
    #[error("transition matrix must be square and nonempty")]
    Shape,
    #[error("entropy already below floor")]
    BelowFloor,
    #[error("leakage rate must be positive")]
    NonPositiveRate,
    #[error("distribution is not normalized: {0}")]
    NotNormalized(String),
    #[error("invalid channel regime: {0}")]
    Regime(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelRegime {
    pub p_a: f64,
    pub gain: f64,
    pub nu: f64,
    pub a_d: f64,
    pub v_sigma: f64,
    pub chi_sigma: f64,
    pub n0: f64,
    pub b_ch: f64,
    pub zeta_0: f64,
    pub zeta_sigma: f64,
    pub zeta_d: f64,
}

impl ChannelRegime {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let fields = [
            ("p_a", self.p_a),
            ("gain", self.gain),
            ("a_d", self.a_d),
            ("v_sigma", self.v_sigma),
            ("chi_sigma", self.chi_sigma),
            ("n0", self.n0),
            ("b_ch", self.b_ch),
            ("zeta_0", self.zeta_0),
            ("zeta_sigma", self.zeta_sigma),
            ("zeta_d", self.zeta_d),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ChannelError::Regime(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        if self.noise_floor() <= 0.0 {
            return Err(ChannelError::Regime(
                "n0*b_ch + chi_sigma*v_sigma must be positive".into(),
            ));
        }
        Ok(())
    }

    fn noise_floor(&self) -> f64 {
        self.n0 * self.b_ch + self.chi_sigma * self.v_sigma
    }

    /// Received signal-to-noise ratio `P_A G e^{-A_D} / (N_0 B + chi V)`.
    pub fn snr(&self) -> f64 {
        self.p_a * self.gain * (-self.a_d).exp() / self.noise_floor()
    }
}

/// Attenuation from the affine Doppler law `A_D = a |nu|` used for sweeps.
pub fn attenuation_from_doppler(a: f64, nu: f64) -> f64 {
    a * nu.abs()
}

/// Adversarial capacity in bits per second.
pub fn adversarial_capacity(r: &ChannelRegime) -> f64 {
    r.b_ch * r.snr().ln_1p() / std::f64::consts::LN_2
}

/// Closed-form `dC/dA_D = -(B/ln 2) S/(1+S)`.
pub fn capacity_attenuation_slope(r: &ChannelRegime) -> f64 {
    let s = r.snr();
    -(r.b_ch / std::f64::consts::LN_2) * s / (1.0 + s)
}

/// Channel entropy degradation over an exposure of `t` seconds.
pub fn channel_entropy_degradation(r: &ChannelRegime, t: f64) -> f64 {
    (r.zeta_sigma * r.v_sigma + r.zeta_d * r.a_d) * t
}

pub fn channel_leakage_rate(r: &ChannelRegime) -> f64 {
    r.zeta_0 + r.zeta_sigma * r.v_sigma + r.zeta_d * r.a_d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub p: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self, ChannelError> {
        let chain = Self { p };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let n = self.p.len();
        if n == 0 || self.p.iter().any(|row| row.len() != n) {
            return Err(ChannelError::Shape);
        }
        for (i, row) in self.p.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if !(x >= 0.0) || !x.is_finite() {
                    return Err(ChannelError::Entry(i, j));
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(ChannelError::RowSum { row: i, sum });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn identity(n: usize) -> Self {
        Self {
            p: (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }
}

/// Draw the next regime from row `current`.
pub fn markov_step<R: Rng + ?Sized>(chain: &MarkovChain, current: usize, rng: &mut R) -> usize {
    let row = &chain.p[current];
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left u above the accumulated mass; take the last reachable state.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyLedger {
    pub mu_puf: f64,
    pub eps_smooth: f64,
    pub ell_side: f64,
    /// Clearance-independent vibration leakage, bits.
    pub ell_vib0: f64,
    /// Vibration leakage per unit `|delta_tc| v^2`, bits.
    pub ell_vib1: f64,
    /// Reference vibration norm used in the extraction bound.
    pub v_norm: f64,
    pub dh_ch: f64,
    pub kappa: f64,
    pub kappa_min: f64,
    pub kappa_target: f64,
    pub dot_ell_side: f64,
    pub dot_ell_vib: f64,
}

impl EntropyLedger {
    /// Coefficient of `|delta_tc|` in the extraction bound.
    pub fn ell_vib(&self) -> f64 {
        self.ell_vib1 * self.v_norm * self.v_norm
    }

    /// Min-entropy left after side, vibration and channel losses.
    pub fn residual_entropy(&self, delta_tc: f64) -> f64 {
        self.mu_puf
            - self.ell_side
            - vibration_leakage_bound(self.ell_vib0, self.ell_vib1, delta_tc, self.v_norm)
            - self.dh_ch
    }

    /// `H - kappa`: the exponent slack in the leftover bound.
    pub fn slack(&self, delta_tc: f64) -> f64 {
        self.residual_entropy(delta_tc) - self.kappa
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("mu_puf", self.mu_puf),
            ("eps_smooth", self.eps_smooth),
            ("ell_side", self.ell_side),
            ("ell_vib0", self.ell_vib0),
            ("ell_vib1", self.ell_vib1),
            ("v_norm", self.v_norm),
            ("dh_ch", self.dh_ch),
            ("kappa", self.kappa),
            ("kappa_min", self.kappa_min),
            ("kappa_target", self.kappa_target),
            ("dot_ell_side", self.dot_ell_side),
            ("dot_ell_vib", self.dot_ell_vib),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("{name} must be finite and nonnegative"));
            }
        }
        if self.kappa_target <= self.kappa_min {
            return Err("kappa_target must exceed kappa_min".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenewalInputs {
    pub ledger: EntropyLedger,
    pub delta_tc: f64,
    pub regime: ChannelRegime,
    /// High-spool frequency, Hz. `None` disables spool-synchronous renewal.
    pub f_h: Option<f64>,
    pub e_max: f64,
    pub t_max: f64,
    pub c_a_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RenewalPeriods {
    pub t_key: f64,
    pub t_sync: f64,
    pub t_enforced: f64,
}

pub fn renewal_rate(inp: &RenewalInputs) -> f64 {
    inp.ledger.dot_ell_side
        + inp.ledger.dot_ell_vib * inp.delta_tc.abs()
        + channel_leakage_rate(&inp.regime)
}

pub fn key_renewal_period(inp: &RenewalInputs) -> RenewalPeriods {
    let rate = renewal_rate(inp);
    let budget = inp.ledger.kappa_target - inp.ledger.kappa_min;
    let t_key = if rate > 0.0 {
        (budget / rate).min(inp.t_max)
    } else {
        inp.t_max
    };
    let t_sync = match inp.f_h {
        Some(f) if f > 0.0 => inp.e_max / f,
        _ => f64::INFINITY,
    };
    RenewalPeriods {
        t_key,
        t_sync,
        t_enforced: t_key.min(t_sync),
    }
}

/// Closed-form `dT_key/dV_Sigma` with the cap inactive.
pub fn renewal_period_v_sigma_slope(inp: &RenewalInputs) -> f64 {
    let rate = renewal_rate(inp);
    -(inp.ledger.kappa_target - inp.ledger.kappa_min) * inp.regime.zeta_sigma / (rate * rate)
}

/// Longest admissible renewal interval when entropy decays at least at
/// `ell_lower_rate` bits per second from `h0`.
pub fn renewal_upper_bound(
    h0: f64,
    kappa_min: f64,
    ell_lower_rate: f64,
) -> Result<f64, ChannelError> {
    if !(ell_lower_rate > 0.0) {
        return Err(ChannelError::NonPositiveRate);
    }
    if h0 < kappa_min {
        return Err(ChannelError::BelowFloor);
    }
    Ok((h0 - kappa_min) / ell_lower_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seconds")]
pub enum RefreshEnvelope {
    Feasible(f64),
    Infeasible,
}

/// Refresh horizon charged against adversarial channel throughput.
pub fn threat_refresh_envelope(
    h_eps: f64,
    kappa_min: f64,
    dh_ch: f64,
    dot_ell_side: f64,
    dot_ell_vib: f64,
    delta_tc: f64,
    c_a_rate: f64,
) -> RefreshEnvelope {
    let num = h_eps - kappa_min - dh_ch;
    let den = dot_ell_side + dot_ell_vib * delta_tc.abs() + c_a_rate;
    if num > 0.0 && den > 0.0 {
        RefreshEnvelope::Feasible(num / den)
    } else {
        RefreshEnvelope::Infeasible
    }
}

/// Statistical-distance bound of the extracted key from uniform.
pub fn leftover_hash_bound(ledger: &EntropyLedger, delta_tc: f64) -> f64 {
    leftover_from_slack(ledger.eps_smooth, ledger.slack(delta_tc))
}

/// `eps + 2^{-slack/2} / 2`, clamped to 1.
pub fn leftover_from_slack(eps_smooth: f64, slack: f64) -> f64 {
    (eps_smooth + 0.5 * (-slack / 2.0).exp2()).min(1.0)
}

/// Closed-form derivative of the extraction term with respect to a loss that
/// enters the slack with unit coefficient `c`: `(ln2/4) c 2^{-slack/2}`.
pub fn leftover_loss_slope(coefficient: f64, slack: f64) -> f64 {
    std::f64::consts::LN_2 / 4.0 * coefficient * (-slack / 2.0).exp2()
}

pub fn vibration_leakage_bound(ell_vib0: f64, ell_vib1: f64, delta_tc: f64, v_norm: f64) -> f64 {
    ell_vib0 + ell_vib1 * delta_tc.abs() * v_norm * v_norm
}

/// Expected log-ratio of posterior to prior guessing probability, in bits.
///
/// `channel[t][l]` is `P[l | theta = t]`.
pub fn bayesian_leakage_gain(prior: &[f64], channel: &[Vec<f64>]) -> Result<f64, ChannelError> {
    let tol = 1e-9;
    if prior.is_empty() || prior.iter().any(|&p| !(p >= 0.0)) {
        return Err(ChannelError::NotNormalized(
            "prior has negative or missing mass".into(),
        ));
    }
    if (prior.iter().sum::<f64>() - 1.0).abs() > tol {
        return Err(ChannelError::NotNormalized("prior".into()));
    }
    if channel.len() != prior.len() {
        return Err(ChannelError::NotNormalized(
            "channel rows must match prior support".into(),
        ));
    }
    let n_obs = channel[0].len();
    for (t, row) in channel.iter().enumerate() {
        if row.len() != n_obs || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(ChannelError::NotNormalized(format!("channel row {t}")));
        }
        if (row.iter().sum::<f64>() - 1.0).abs() > tol {
            return Err(ChannelError::NotNormalized(format!("channel row {t}")));
        }
    }
    let prior_max = prior.iter().cloned().fold(0.0, f64::max);
    let mut gain = 0.0;
    for l in 0..n_obs {
        let joint: Vec<f64> = prior
            .iter()
            .zip(channel)
            .map(|(p, row)| p * row[l])
            .collect();
        let p_l: f64 = joint.iter().sum();
        if p_l == 0.0 {
            continue;
        }
        let post_max = joint.iter().cloned().fold(0.0, f64::max) / p_l;
        gain += p_l * (post_max / prior_max).log2();
    }
    Ok(gain)
}

/// Empirical extractor check: a biased-bit source hashed by a strongly
/// universal family, with the output distribution tabulated exactly.
pub mod extractor {
    use rand::Rng;
    use rayon::prelude::*;
    use serde::Serialize;

    /// Multiply-add-shift hash `((a x + b) mod 2^64) >> (64 - out_bits)`.
    /// For inputs of at most `64 - out_bits + 1` bits this family is
    /// strongly universal, which is more than the leftover lemma needs.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct MultiplyAddShift {
        pub a: u64,
        pub b: u64,
        pub out_bits: u32,
    }

    impl MultiplyAddShift {
        pub fn random<R: Rng + ?Sized>(rng: &mut R, out_bits: u32) -> Self {
            Self {
                a: rng.random(),
                b: rng.random(),
                out_bits,
            }
        }

        #[inline]
        pub fn hash(&self, x: u64) -> u64 {
            self.a.wrapping_mul(x).wrapping_add(self.b) >> (64 - self.out_bits)
        }
    }

    /// `n` independent bits, each 1 with probability `p_one <= 1/2`.
    #[derive(Debug, Clone, Copy, PartialEq, Serialize)]
    pub struct BiasedSource {
        pub n_bits: u32,
        pub p_one: f64,
    }

    impl BiasedSource {
        /// Source of `n_bits` with min-entropy exactly `h_min` bits.
        pub fn with_min_entropy(n_bits: u32, h_min: f64) -> Self {
            let q = (-h_min / n_bits as f64).exp2();
            Self {
                n_bits,
                p_one: 1.0 - q,
            }
        }

        pub fn min_entropy(&self) -> f64 {
            -(self.n_bits as f64) * (1.0 - self.p_one).max(self.p_one).log2()
        }

        fn weight_probability(&self, w: u32) -> f64 {
            self.p_one.powi(w as i32) * (1.0 - self.p_one).powi((self.n_bits - w) as i32)
        }
    }

    /// Exact statistical distance between `h(X)` and uniform on `out_bits`.
    pub fn exact_distance(source: &BiasedSource, h: &MultiplyAddShift) -> f64 {
        let bins = 1usize << h.out_bits;
        let weights = source.n_bits as usize + 1;
        // counts[bin][popcount]; exact integer tallies, combined once at the end.
        let mut counts = vec![0u32; bins * weights];
        for x in 0..(1u64 << source.n_bits) {
            let bin = h.hash(x) as usize;
            counts[bin * weights + x.count_ones() as usize] += 1;
        }
        let wp: Vec<f64> = (0..weights as u32)
            .map(|w| source.weight_probability(w))
            .collect();
        let uniform = 1.0 / bins as f64;
        let mut distance = 0.0;
        for bin in 0..bins {
            let mass: f64 = (0..weights)
                .map(|w| counts[bin * weights + w] as f64 * wp[w])
                .sum();
            distance += (mass - uniform).abs();
        }
        distance / 2.0
    }

    #[derive(Debug, Clone, Serialize)]
    pub struct ExtractorCheck {
        pub min_entropy: f64,
        pub out_bits: u32,
        pub hashes: usize,
        /// Mean over sampled hash functions, i.e. the distance of
        /// `(h(X), h)` from `(U, h)`.
        pub mean_distance: f64,
        pub max_distance: f64,
        pub bound: f64,
    }

    pub fn check<R: Rng + ?Sized>(
        source: &BiasedSource,
        out_bits: u32,
        hashes: usize,
        rng: &mut R,
    ) -> ExtractorCheck {
        let family: Vec<MultiplyAddShift> = (0..hashes)
            .map(|_| MultiplyAddShift::random(rng, out_bits))
            .collect();
        let d: Vec<f64> = family
            .par_iter()
            .map(|h| exact_distance(source, h))
            .collect();
        let slack = source.min_entropy() - out_bits as f64;
        ExtractorCheck {
            min_entropy: source.min_entropy(),
            out_bits,
            hashes,
            mean_distance: d.iter().sum::<f64>() / hashes as f64,
            max_distance: d.iter().cloned().fold(0.0, f64::max),
            bound: super::leftover_from_slack(0.0, slack),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn regime() -> ChannelRegime {
        ChannelRegime {
            p_a: 3.0,
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
        }
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(
            adversarial_capacity(&ChannelRegime {
                p_a: 0.0,
                ..regime()
            }),
            0.0
        );
        let r = ChannelRegime {
            p_a: 1e3,
            n0: 1.0,
            b_ch: 1e3,
            ..regime()
        };
        assert!((adversarial_capacity(&r) - 1e3).abs() < 1e-9);
        let r = ChannelRegime {
            a_d: 0.7,
            v_sigma: 2.0,
            chi_sigma: 0.5,
            b_ch: 50.0,
            ..regime()
        };
        let h = 1e-6;
        let fd = (adversarial_capacity(&ChannelRegime {
            a_d: r.a_d + h,
            ..r
        }) - adversarial_capacity(&ChannelRegime {
            a_d: r.a_d - h,
            ..r
        })) / (2.0 * h);
        let cf = capacity_attenuation_slope(&r);
        assert!(((fd - cf) / cf).abs() < 1e-6);
    }

    #[test]
    fn degradation_and_rate_examples() {
        let r = ChannelRegime {
            zeta_sigma: 0.5,
            v_sigma: 2.0,
            ..regime()
        };
        assert_eq!(channel_entropy_degradation(&r, 0.0), 0.0);
        assert_eq!(channel_entropy_degradation(&r, 3.0), 3.0);
        assert_eq!(
            channel_entropy_degradation(&r, 6.0),
            2.0 * channel_entropy_degradation(&r, 3.0)
        );
        assert_eq!(channel_leakage_rate(&regime()), 0.0);
        let r = ChannelRegime {
            zeta_0: 0.1,
            zeta_sigma: 0.2,
            v_sigma: 3.0,
            zeta_d: 0.05,
            a_d: 2.0,
            ..regime()
        };
        assert!((channel_leakage_rate(&r) - 0.8).abs() < 1e-15);
    }

    fn ledger() -> EntropyLedger {
        EntropyLedger {
            mu_puf: 256.0,
            eps_smooth: 0.0,
            ell_side: 0.0,
            ell_vib0: 0.0,
            ell_vib1: 0.0,
            v_norm: 1.0,
            dh_ch: 0.0,
            kappa: 128.0,
            kappa_min: 128.0,
            kappa_target: 192.0,
            dot_ell_side: 0.0,
            dot_ell_vib: 0.0,
        }
    }

    fn renewal() -> RenewalInputs {
        RenewalInputs {
            ledger: ledger(),
            delta_tc: 0.0,
            regime: regime(),
            f_h: None,
            e_max: 1000.0,
            t_max: 60.0,
            c_a_rate: 0.0,
        }
    }

    #[test]
    fn renewal_examples() {
        let p = key_renewal_period(&renewal());
        assert_eq!(
            (p.t_key, p.t_sync, p.t_enforced),
            (60.0, f64::INFINITY, 60.0)
        );
        let mut inp = renewal();
        inp.ledger.dot_ell_side = 8.0;
        assert_eq!(key_renewal_period(&inp).t_key, 8.0);
        inp.f_h = Some(200.0);
        let p = key_renewal_period(&inp);
        assert_eq!((p.t_sync, p.t_enforced), (5.0, 5.0));
    }

    #[test]
    fn renewal_bounds_examples() {
        assert_eq!(renewal_upper_bound(128.0, 128.0, 4.0).unwrap(), 0.0);
        assert_eq!(renewal_upper_bound(256.0, 128.0, 4.0).unwrap(), 32.0);
        assert_eq!(renewal_upper_bound(256.0, 128.0, 2.0).unwrap(), 64.0);
        assert_eq!(
            renewal_upper_bound(100.0, 128.0, 2.0)
                .unwrap_err()
                .to_string(),
            "entropy already below floor"
        );
        assert_eq!(
            threat_refresh_envelope(100.0, 128.0, 0.0, 1.0, 0.0, 0.0, 1.0),
            RefreshEnvelope::Infeasible
        );
        assert_eq!(
            threat_refresh_envelope(200.0, 128.0, 40.0, 8.0, 0.0, 0.0, 8.0),
            RefreshEnvelope::Feasible(2.0)
        );
        let RefreshEnvelope::Feasible(slow) =
            threat_refresh_envelope(200.0, 128.0, 40.0, 8.0, 0.0, 0.0, 16.0)
        else {
            panic!()
        };
        assert!(slow < 2.0);
    }

    #[test]
    fn leftover_examples() {
        let mut l = ledger();
        l.mu_puf = l.kappa;
        l.eps_smooth = 0.01;
        assert_eq!(leftover_hash_bound(&l, 0.0), 0.51);
        l.eps_smooth = 0.0;
        l.mu_puf = l.kappa + 20.0;
        assert_eq!(leftover_hash_bound(&l, 0.0), 2f64.powi(-11));
        assert!((leftover_hash_bound(&l, 0.0) - 4.883e-4).abs() < 1e-7);
        for k in [10, 20] {
            let eps = 2f64.powi(-k);
            let mut l = ledger();
            l.eps_smooth = 1e-9;
            l.mu_puf = l.kappa + 2.0 * (1.0 / eps).log2();
            assert!(leftover_hash_bound(&l, 0.0) <= l.eps_smooth + eps / 2.0 + 1e-18);
        }
        l.mu_puf = 0.0;
        assert_eq!(leftover_hash_bound(&l, 0.0), 1.0);
    }

    #[test]
    fn leftover_clearance_slope_matches_closed_form() {
        let mut l = ledger();
        l.mu_puf = 160.0;
        l.ell_vib1 = 4.0;
        l.v_norm = 1.5;
        l.kappa = 128.0;
        for delta in [0.1, 0.5, 1.0] {
            let h = 1e-6;
            let fd = (leftover_hash_bound(&l, delta + h) - leftover_hash_bound(&l, delta - h))
                / (2.0 * h);
            let cf = leftover_loss_slope(l.ell_vib(), l.slack(delta));
            assert!(((fd - cf) / cf).abs() < 1e-6, "delta={delta}");
        }
    }

    #[test]
    fn vibration_examples() {
        assert_eq!(vibration_leakage_bound(0.1, 2.0, 0.0, 5.0), 0.1);
        assert!((vibration_leakage_bound(0.1, 2.0, 0.05, 3.0) - 1.0).abs() < 1e-15);
        let base = vibration_leakage_bound(0.0, 2.0, 0.05, 3.0);
        assert!((vibration_leakage_bound(0.0, 2.0, 0.05, 6.0) - 4.0 * base).abs() < 1e-15);
    }

    /// Bayes rule written out term by term, independent of the closed form.
    fn brute_force_gain(prior: &[f64], channel: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for l in 0..channel[0].len() {
            let p_l: f64 = (0..prior.len()).map(|t| prior[t] * channel[t][l]).sum();
            let mut best = 0.0f64;
            for t in 0..prior.len() {
                best = best.max(prior[t] * channel[t][l] / p_l);
            }
            let prior_best = prior.iter().cloned().fold(0.0, f64::max);
            total += p_l * (best.ln() - prior_best.ln()) / std::f64::consts::LN_2;
        }
        total
    }

    #[test]
    fn bayesian_leakage_examples() {
        let prior = [0.3, 0.7];
        let blind = vec![vec![0.2, 0.8], vec![0.2, 0.8]];
        assert!(bayesian_leakage_gain(&prior, &blind).unwrap().abs() < 1e-15);
        let reveal = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!((bayesian_leakage_gain(&[0.5, 0.5], &reveal).unwrap() - 1.0).abs() < 1e-15);
        let mut rng = rng::stream(9, rng::MONTE_CARLO);
        for _ in 0..100 {
            let mut joint = [[0.0f64; 3]; 3];
            for row in joint.iter_mut() {
                for x in row.iter_mut() {
                    *x = rand::Rng::random::<f64>(&mut rng) + 1e-3;
                }
            }
            let z: f64 = joint.iter().flatten().sum();
            let prior: Vec<f64> = joint.iter().map(|r| r.iter().sum::<f64>() / z).collect();
            let channel: Vec<Vec<f64>> = joint
                .iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.iter().map(|x| x / s).collect()
                })
                .collect();
            let got = bayesian_leakage_gain(&prior, &channel).unwrap();
            assert!((got - brute_force_gain(&prior, &channel)).abs() < 1e-12);
        }
        assert!(bayesian_leakage_gain(&[0.5, 0.6], &reveal).is_err());
    }

    #[test]
    fn markov_examples() {
        let mut rng = rng::stream(1, rng::MARKOV);
        let id = MarkovChain::identity(3);
        assert!((0..100).all(|_| markov_step(&id, 2, &mut rng) == 2));
        let flip = MarkovChain::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!((0..100).all(|_| markov_step(&flip, 0, &mut rng) == 1));
        let fair = MarkovChain::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let mut s = 0;
        let mut ones = 0;
        for _ in 0..100_000 {
            s = markov_step(&fair, s, &mut rng);
            ones += s;
        }
        assert!((ones as f64 / 1e5 - 0.5).abs() < 0.01);
        assert!(matches!(
            MarkovChain::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]]),
            Err(ChannelError::RowSum { .. })
        ));
    }

    #[test]
    fn extractor_small_instance_within_bound() {
        // 16-bit source with 12 bits of min-entropy, 2 output bits: slack 10.
        let src = extractor::BiasedSource::with_min_entropy(16, 12.0);
        assert!((src.min_entropy() - 12.0).abs() < 1e-12);
        let mut rng = rng::stream(2, rng::MONTE_CARLO);
        let c = extractor::check(&src, 2, 8, &mut rng);
        assert!(c.mean_distance <= c.bound, "{c:?}");
    }

    proptest! {
        #[test]
        fn capacity_nonincreasing(a in 0.0f64..5.0, da in 0.0f64..2.0, v in 0.0f64..5.0, dv in 0.0f64..2.0) {
            let r = ChannelRegime { a_d: a, v_sigma: v, chi_sigma: 0.3, b_ch: 10.0, ..regime() };
            let c = adversarial_capacity(&r);
            let more_attenuation = adversarial_capacity(&ChannelRegime { a_d: a + da, ..r });
            let more_uncertainty = adversarial_capacity(&ChannelRegime { v_sigma: v + dv, ..r });
            prop_assert!(more_attenuation <= c);
            prop_assert!(more_uncertainty <= c);
        }

        #[test]
        fn renewal_decreasing_in_v_sigma(v in 0.1f64..50.0, dv in 0.01f64..5.0) {
            let mut inp = renewal();
            inp.t_max = 1e12;
            inp.regime.zeta_sigma = 0.4;
            inp.regime.v_sigma = v;
            let a = key_renewal_period(&inp).t_key;
            inp.regime.v_sigma = v + dv;
            prop_assert!(key_renewal_period(&inp).t_key < a);
        }

        #[test]
        fn enforced_is_min(rate in 0.0f64..20.0, f in 1.0f64..500.0, tmax in 0.1f64..100.0) {
            let mut inp = renewal();
            inp.ledger.dot_ell_side = rate;
            inp.f_h = Some(f);
            inp.t_max = tmax;
            let p = key_renewal_period(&inp);
            prop_assert_eq!(p.t_enforced, p.t_key.min(p.t_sync));
            prop_assert!(p.t_enforced <= tmax);
        }

        #[test]
        fn leftover_monotone(d in 0.0f64..2.0, dd in 0.0f64..1.0, ch in 0.0f64..20.0, dch in 0.0f64..5.0) {
            let mut l = ledger();
            l.mu_puf = 150.0;
            l.ell_vib1 = 3.0;
            l.dh_ch = ch;
            let b = leftover_hash_bound(&l, d);
            prop_assert!(leftover_hash_bound(&l, d + dd) >= b);
            l.dh_ch = ch + dch;
            prop_assert!(leftover_hash_bound(&l, d) >= b);
        }
    }

    #[test]
    fn renewal_slope_matches_closed_form() {
        let mut inp = renewal();
        inp.t_max = 1e9;
        inp.ledger.dot_ell_side = 0.5;
        inp.regime.zeta_sigma = 0.3;
        for v in [0.5, 2.0, 10.0] {
            inp.regime.v_sigma = v;
            let h = 1e-6 * v;
            let mut hi = inp;
            hi.regime.v_sigma = v + h;
            let mut lo = inp;
            lo.regime.v_sigma = v - h;
            let fd = (key_renewal_period(&hi).t_key - key_renewal_period(&lo).t_key) / (2.0 * h);
            let cf = renewal_period_v_sigma_slope(&inp);
            assert!(((fd - cf) / cf).abs() < 1e-6);
        }
    }
}
