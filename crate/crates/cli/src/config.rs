//! Configuration file: TOML, or JSON when the extension is `.json`.

use std::fmt;
use std::path::{Path, PathBuf};

use css_envelope::bus::{self, BusTask, VerificationDelays};
use css_envelope::channel::{ChannelRegime, EntropyLedger};
use css_envelope::engine::{EngineLinearization, StressGate, TorsionalParams};
use css_envelope::envelope::{
    EnvelopeModel, RegimeThresholds, RenewalSpec, SecurityBudget, Theta, UncertaintySet,
};
use css_envelope::sim::SimSpec;
use css_envelope::stability::LyapunovCerts;
use css_envelope::validate::VerifySpec;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    /// Relative to the working directory.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub engine: EngineSection,
    pub estimator: EstimatorSection,
    pub channel: ChannelSection,
    pub bus: BusSection,
    pub stability: StabilitySection,
    pub crypto: CryptoSection,
    pub envelope: EnvelopeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("css-envelope-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    /// Control deadline for the actuation window, s.
    pub d_ctrl_s: f64,
    /// Commanded fuel flow at the operating point.
    pub w_f: f64,
    /// Delay sensitivities `l_ndot`, `l_w`, `l_s` are per second of delay.
    pub linearization: EngineLinearization,
    pub gate: StressGate,
    pub torsional: TorsionalParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub eta0: f64,
    pub beta_s: f64,
    /// Residual statistic charged in `analyze --target envelope`.
    #[serde(default)]
    pub observed_d2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub exposure_s: f64,
    /// `zeta_d` is in bits/s per unit attenuation.
    pub regime: ChannelRegime,
    pub ledger: EntropyLedger,
    pub renewal: RenewalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSection {
    pub rate_bps: u64,
    /// Id of the task carrying the KEM ciphertext.
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_us: Option<u64>,
    #[serde(default)]
    pub verification: VerificationDelays,
    pub tasks: Vec<BusTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub certs: LyapunovCerts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CryptoSection {
    pub budget: SecurityBudget,
    /// Shaft-speed quantization step.
    pub quant_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSection {
    pub eps_star: f64,
    pub theta: Theta,
    pub uncertainty: UncertaintySet,
    #[serde(default)]
    pub thresholds: RegimeThresholds,
}

#[derive(Debug)]
pub enum ConfigError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Syntax or type error at a known location.
    Parse {
        file: PathBuf,
        line: Option<usize>,
        field: String,
        message: String,
    },
    /// Well-formed but inconsistent.
    Invalid {
        file: PathBuf,
        line: Option<usize>,
        field: String,
        message: String,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            ConfigError::Parse {
                file,
                line,
                field,
                message,
            }
            | ConfigError::Invalid {
                file,
                line,
                field,
                message,
            } => {
                write!(f, "{}", file.display())?;
                if let Some(l) = line {
                    write!(f, ":{l}")?;
                }
                if field.is_empty() || field == "." {
                    write!(f, ": {message}")
                } else {
                    write!(f, ": {field}: {message}")
                }
            }
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

/// Best-effort line of `field` (dotted path) in a TOML document: the key
/// under its table header, else the header itself.
fn locate_toml(text: &str, field: &str) -> Option<usize> {
    let parts: Vec<&str> = field
        .split('.')
        .map(|p| p.split('[').next().unwrap_or(p))
        .filter(|p| !p.is_empty())
        .collect();
    let (key, table) = parts.split_last()?;
    let table = table.join(".");
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
            if current == field.split('[').next().unwrap_or(field) {
                header_line = header_line.or(Some(i + 1));
            }
            continue;
        }
        if current == table && line.split('=').next().map(str::trim) == Some(*key) {
            return Some(i + 1);
        }
    }
    header_line
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if json {
            Self::parse_json(&text, path)?
        } else {
            Self::parse_toml(&text, path)?
        };
        cfg.validate()
            .map_err(|(field, message)| ConfigError::Invalid {
                file: path.to_path_buf(),
                line: if json {
                    None
                } else {
                    locate_toml(&text, &field)
                },
                field,
                message,
            })?;
        Ok(cfg)
    }

    fn parse_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
            file: path.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)),
            field: String::new(),
            message: e.message().to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse {
                file: path.to_path_buf(),
                line: inner
                    .span()
                    .map(|s| line_of(text, s.start))
                    .or_else(|| locate_toml(text, &field)),
                field,
                message: inner.message().to_string(),
            }
        })
    }

    fn parse_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse {
                file: path.to_path_buf(),
                line: Some(inner.line()),
                field,
                message: inner.to_string(),
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn target_index(&self) -> Option<usize> {
        self.bus.tasks.iter().position(|t| t.id == self.bus.target)
    }

    /// Cross-field checks. Errors carry the dotted field path.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let err = |f: &str, m: String| Err((f.to_string(), m));
        if self.schema_version != SCHEMA_VERSION {
            return err(
                "schema_version",
                format!(
                    "unsupported schema version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            );
        }
        if let Err(e) = bus::validate_task_set(&self.bus.tasks) {
            return err("bus.tasks", e.to_string());
        }
        if self.target_index().is_none() {
            return err(
                "bus.target",
                format!("no task with id {:?}", self.bus.target),
            );
        }
        if self.bus.rate_bps == 0 {
            return err("bus.rate_bps", "must be positive".into());
        }
        if let Err(m) = self.crypto.budget.validate() {
            return err("crypto.budget", m);
        }
        if !(self.crypto.quant_delta > 0.0 && self.crypto.quant_delta.is_finite()) {
            return err("crypto.quant_delta", "must be positive".into());
        }
        if let Err(m) = self.channel.ledger.validate() {
            return err("channel.ledger", m);
        }
        if let Err(e) = self.channel.regime.validate() {
            return err("channel.regime", e.to_string());
        }
        let r = &self.channel.renewal;
        if !(r.f_h.is_none_or(|f| f > 0.0) && r.e_max > 0.0 && r.t_max > 0.0 && r.c_a_rate >= 0.0) {
            return err(
                "channel.renewal",
                "f_h (when set), e_max and t_max must be positive and c_a_rate nonnegative".into(),
            );
        }
        if !(self.channel.exposure_s >= 0.0) {
            return err("channel.exposure_s", "must be nonnegative".into());
        }
        if let Err(m) = self.engine.linearization.validate() {
            return err("engine.linearization", m);
        }
        let t = &self.engine.torsional;
        if !(t.j_s > 0.0 && t.gamma_s > 0.0 && t.q_s > 0.0) {
            return err(
                "engine.torsional",
                "j_s, gamma_s and q_s must be positive".into(),
            );
        }
        if !(self.engine.d_ctrl_s > 0.0) {
            return err("engine.d_ctrl_s", "must be positive".into());
        }
        if let Err(m) = self.stability.certs.validate() {
            return err("stability.certs", m);
        }
        if !(self.estimator.eta0 > 0.0) {
            return err("estimator.eta0", "must be positive".into());
        }
        if !(self.estimator.beta_s >= 0.0) {
            return err("estimator.beta_s", "must be nonnegative".into());
        }
        if !(self.envelope.eps_star > 0.0 && self.envelope.eps_star < 1.0) {
            return err("envelope.eps_star", "must lie in (0, 1)".into());
        }
        if let Err(m) = self.envelope.uncertainty.validate() {
            return err("envelope.uncertainty", m);
        }
        if let Some(s) = &self.sim {
            let (model, _) = self.to_model();
            if let Err(e) = s.prepare(&model) {
                return err("sim", e.to_string());
            }
        }
        if let Some(j) = &self.verify.jump_certs {
            if j.transition.len() != j.modes.len() {
                return err(
                    "verify.jump_certs.transition",
                    format!(
                        "has {} rows but there are {} modes",
                        j.transition.len(),
                        j.modes.len()
                    ),
                );
            }
        }
        Ok(())
    }

    pub fn to_model(&self) -> (EnvelopeModel, Theta) {
        let model = EnvelopeModel {
            budget: self.crypto.budget,
            ledger: self.channel.ledger,
            channel: self.channel.regime,
            exposure_s: self.channel.exposure_s,
            tasks: self.bus.tasks.clone(),
            target: self.target_index().unwrap_or(0),
            rate_bps: self.bus.rate_bps,
            horizon_us: self.bus.horizon_us,
            ver: self.bus.verification,
            certs: self.stability.certs,
            lin: self.engine.linearization,
            gate: self.engine.gate,
            torsional: self.engine.torsional,
            d_ctrl_s: self.engine.d_ctrl_s,
            w_f: self.engine.w_f,
            eta0: self.estimator.eta0,
            beta_s: self.estimator.beta_s,
            renewal: self.channel.renewal,
            quant_delta: self.crypto.quant_delta,
            eps_star: self.envelope.eps_star,
            uncertainty: self.envelope.uncertainty,
            thresholds: self.envelope.thresholds,
        };
        (model, self.envelope.theta)
    }

    pub fn from_model(model: &EnvelopeModel, theta: &Theta, sim: Option<SimSpec>) -> Self {
        Config {
            schema_version: SCHEMA_VERSION,
            out_dir: default_out_dir(),
            engine: EngineSection {
                d_ctrl_s: model.d_ctrl_s,
                w_f: model.w_f,
                linearization: model.lin,
                gate: model.gate,
                torsional: model.torsional,
            },
            estimator: EstimatorSection {
                eta0: model.eta0,
                beta_s: model.beta_s,
                observed_d2: 0.0,
            },
            channel: ChannelSection {
                exposure_s: model.exposure_s,
                regime: model.channel,
                ledger: model.ledger,
                renewal: model.renewal,
            },
            bus: BusSection {
                rate_bps: model.rate_bps,
                target: model.tasks[model.target].id.clone(),
                horizon_us: model.horizon_us,
                verification: model.ver,
                tasks: model.tasks.clone(),
            },
            stability: StabilitySection { certs: model.certs },
            crypto: CryptoSection {
                budget: model.budget,
                quant_delta: model.quant_delta,
            },
            envelope: EnvelopeSection {
                eps_star: model.eps_star,
                theta: *theta,
                uncertainty: model.uncertainty,
                thresholds: model.thresholds,
            },
            sim,
            verify: VerifySpec::default(),
        }
    }
}
