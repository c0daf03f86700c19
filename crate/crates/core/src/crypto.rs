//! Telemetry tagging pipeline and authentication-failure arithmetic.
//!
//! Keys come from HKDF-SHA256 and tags from truncated HMAC-SHA256. The KEM
//! and proof system are length and advantage models only; the MAC is real
//! so that field coverage and quantization false rejection can be measured.
//!
//! Shaft speed is quantized by the tagger to the nearest cell (ties to even)
//! and the cell index is covered by the tag. The verifier accepts when its
//! own independently noised reading lies within one step `Delta` of the cell
//! centre. Acceptance is therefore guaranteed whenever the two noise draws
//! differ by at most `Delta/2`, which is the event the false-rejection bound
//! controls.

use std::collections::HashSet;
use std::fmt;

use hkdf::Hkdf;
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::engine::StressRegime;

type HmacSha256 = Hmac<Sha256>;

const KDF_SALT: &[u8] = b"css-envelope kdf v1";
const TAG_DOMAIN: &[u8] = b"css-envelope tag v1";

#[derive(Debug, Error, PartialEq)]
pub enum CryptoError {
    #[error("key length {0} bits is not a positive multiple of 8")]
    KeyLength(u32),
    #[error("key length {0} bits exceeds the KDF output limit")]
    KeyTooLong(u32),
    #[error("KDF input {0} is empty")]
    EmptyInput(&'static str),
    #[error("channel hash may be empty only when the channel contributes no entropy")]
    ChannelInput,
    #[error("nonce discipline violated: nonce {nonce} reused under key epoch {epoch}")]
    NonceReuse { epoch: u64, nonce: u64 },
    #[error("tag length must be between 4 and 32 bytes, got {0}")]
    TagLength(usize),
}

/// Session key. Its bytes are never printed or serialized.
#[derive(Clone, PartialEq)]
pub struct SessionKey {
    bytes: Vec<u8>,
    pub epoch: u64,
    pub birth_time: f64,
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionKey")
            .field("bits", &(self.bytes.len() * 8))
            .field("epoch", &self.epoch)
            .field("birth_time", &self.birth_time)
            .finish_non_exhaustive()
    }
}

impl SessionKey {
    pub fn bits(&self) -> usize {
        self.bytes.len() * 8
    }

    #[cfg(test)]
    pub(crate) fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct KeyMaterial<'a> {
    pub k_kem: &'a [u8],
    pub h_puf: &'a [u8],
    pub h_ch: &'a [u8],
    /// Channel entropy the ledger credits to `h_ch`, bits.
    pub channel_entropy_bits: f64,
}

fn length_prefixed(parts: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in parts {
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        out.extend_from_slice(p);
    }
    out
}

/// `K = KDF(K_kem || H_puf || H_ch)` with unambiguous length framing.
pub fn derive_key(
    m: &KeyMaterial<'_>,
    kappa_bits: u32,
    epoch: u64,
    birth_time: f64,
) -> Result<SessionKey, CryptoError> {
    if kappa_bits == 0 || kappa_bits % 8 != 0 {
        return Err(CryptoError::KeyLength(kappa_bits));
    }
    if m.k_kem.is_empty() {
        return Err(CryptoError::EmptyInput("k_kem"));
    }
    if m.h_puf.is_empty() {
        return Err(CryptoError::EmptyInput("h_puf"));
    }
    if m.h_ch.is_empty() && m.channel_entropy_bits != 0.0 {
        return Err(CryptoError::ChannelInput);
    }
    let ikm = length_prefixed(&[m.k_kem, m.h_puf, m.h_ch]);
    let hk = Hkdf::<Sha256>::new(Some(KDF_SALT), &ikm);
    let mut okm = vec![0u8; kappa_bits as usize / 8];
    hk.expand(&epoch.to_le_bytes(), &mut okm)
        .map_err(|_| CryptoError::KeyTooLong(kappa_bits))?;
    Ok(SessionKey {
        bytes: okm,
        epoch,
        birth_time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub delta: f64,
    pub sigma_n: f64,
}

/// Nearest cell index of `value`, ties to even.
pub fn quantize(value: f64, delta: f64) -> i64 {
    (value / delta).round_ties_even() as i64
}

/// Fields covered by the integrity tag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetryRecord {
    pub epoch: u64,
    pub nonce: u64,
    pub y: Vec<f64>,
    pub shaft_cell: i64,
    pub residual: Vec<f64>,
    pub s_id: u64,
    pub phi: StressRegime,
}

impl TelemetryRecord {
    /// Canonical byte encoding fed to the MAC.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * (self.y.len() + self.residual.len()) + 64);
        out.extend_from_slice(TAG_DOMAIN);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.nonce.to_le_bytes());
        for v in [&self.y, &self.residual] {
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for x in v.iter() {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        out.extend_from_slice(&self.shaft_cell.to_le_bytes());
        out.extend_from_slice(&self.s_id.to_le_bytes());
        out.extend_from_slice(&self.phi.encode());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedRecord {
    pub record: TelemetryRecord,
    pub tag: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthOutcome {
    Accept,
    RejectMismatch,
    RejectForge,
    RejectReplay,
}

impl AuthOutcome {
    pub fn accepted(self) -> bool {
        self == AuthOutcome::Accept
    }
}

/// Set of `(key epoch, nonce)` pairs seen so far.
#[derive(Debug, Default, Clone)]
pub struct NonceLedger {
    seen: HashSet<(u64, u64)>,
}

impl NonceLedger {
    /// Record the pair; false if it was already present.
    pub fn insert(&mut self, epoch: u64, nonce: u64) -> bool {
        self.seen.insert((epoch, nonce))
    }

    pub fn contains(&self, epoch: u64, nonce: u64) -> bool {
        self.seen.contains(&(epoch, nonce))
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Position of the first repeated `(key epoch, nonce)` pair, if any.
pub fn nonce_ledger_check(stream: &[(u64, u64)]) -> Result<(), usize> {
    let mut ledger = NonceLedger::default();
    for (i, &(e, n)) in stream.iter().enumerate() {
        if !ledger.insert(e, n) {
            return Err(i);
        }
    }
    Ok(())
}

fn mac(key: &SessionKey, record: &TelemetryRecord) -> HmacSha256 {
    let mut m =
        <HmacSha256 as KeyInit>::new_from_slice(&key.bytes).expect("HMAC accepts any key length");
    m.update(&record.encode());
    m
}

/// Tagging side. Refuses to tag twice under one `(key epoch, nonce)`.
#[derive(Debug)]
pub struct Tagger {
    tag_bytes: usize,
    used: NonceLedger,
}

impl Tagger {
    pub fn new(tag_bytes: usize) -> Result<Self, CryptoError> {
        if !(4..=32).contains(&tag_bytes) {
            return Err(CryptoError::TagLength(tag_bytes));
        }
        Ok(Self {
            tag_bytes,
            used: NonceLedger::default(),
        })
    }

    pub fn tag(
        &mut self,
        key: &SessionKey,
        record: TelemetryRecord,
    ) -> Result<TaggedRecord, CryptoError> {
        if !self.used.insert(key.epoch, record.nonce) {
            return Err(CryptoError::NonceReuse {
                epoch: key.epoch,
                nonce: record.nonce,
            });
        }
        let full = mac(key, &record).finalize().into_bytes();
        Ok(TaggedRecord {
            record,
            tag: full[..self.tag_bytes].to_vec(),
        })
    }
}

/// Verifying side with its own replay ledger.
#[derive(Debug, Default)]
pub struct Verifier {
    seen: NonceLedger,
}

impl Verifier {
    pub fn new() -> Self {
        Self::default()
    }

    /// Check the tag, then replay, then quantizer consistency against the
    /// verifier's own shaft reading.
    pub fn verify(
        &mut self,
        key: &SessionKey,
        msg: &TaggedRecord,
        own_shaft_reading: f64,
        quant: &QuantizerSpec,
    ) -> AuthOutcome {
        if mac(key, &msg.record)
            .verify_truncated_left(&msg.tag)
            .is_err()
        {
            return AuthOutcome::RejectForge;
        }
        if !self.seen.insert(key.epoch, msg.record.nonce) {
            return AuthOutcome::RejectReplay;
        }
        let centre = msg.record.shaft_cell as f64 * quant.delta;
        if (centre - own_shaft_reading).abs() <= quant.delta {
            AuthOutcome::Accept
        } else {
            AuthOutcome::RejectMismatch
        }
    }
}

/// `min(1, 2 exp(-Delta^2 / (16 sigma^2)))`, zero for noiseless telemetry.
pub fn false_rejection_bound(q: &QuantizerSpec) -> f64 {
    if q.sigma_n == 0.0 {
        return 0.0;
    }
    (2.0 * (-(q.delta * q.delta) / (16.0 * q.sigma_n * q.sigma_n)).exp()).min(1.0)
}

/// Length generator for transcript components, bits as a function of the
/// security parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LengthGenerator {
    Fixed {
        bits: u64,
    },
    /// `ceil(c lambda log2 lambda)`.
    LambdaLog {
        c: f64,
    },
}

impl LengthGenerator {
    pub fn bits(&self, lambda: u64) -> u64 {
        match *self {
            LengthGenerator::Fixed { bits } => bits,
            LengthGenerator::LambdaLog { c } => {
                let l = lambda as f64;
                (c * l * l.log2()).ceil().max(0.0) as u64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbstractPrimitiveModel {
    pub eps_kem: f64,
    pub eps_aead: f64,
    pub eps_zk: f64,
    pub eps_tag: f64,
    pub p_nonce: f64,
    pub l_kem: LengthGenerator,
    pub l_zk: LengthGenerator,
}

impl AbstractPrimitiveModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("eps_kem", self.eps_kem),
            ("eps_aead", self.eps_aead),
            ("eps_zk", self.eps_zk),
            ("eps_tag", self.eps_tag),
            ("p_nonce", self.p_nonce),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// `eps_tag + p_fr + p_nonce`, clamped to 1.
pub fn auth_failure_bound(m: &AbstractPrimitiveModel, q: &QuantizerSpec) -> f64 {
    (m.eps_tag + false_rejection_bound(q) + m.p_nonce).min(1.0)
}
