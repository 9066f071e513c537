//! Scenario configuration files (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghz::{GhzEve, Shuffle};
use crate::network::{ChannelSpec, EveStrategy, RelayMode, Retransmission};
use crate::protocols::{DuplexPairing, DEFAULT_SAMPLE_FRACTION};
use crate::transport::TransportOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    Standard,
    BitRevelation,
    Randomized,
    Duplex,
    Transport,
    DropoutSharing,
    Ghz,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Standard => "standard",
            ProtocolKind::BitRevelation => "bit_revelation",
            ProtocolKind::Randomized => "randomized",
            ProtocolKind::Duplex => "duplex",
            ProtocolKind::Transport => "transport",
            ProtocolKind::DropoutSharing => "dropout_sharing",
            ProtocolKind::Ghz => "ghz",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    #[serde(default)]
    pub relays: usize,
    /// Per-relay modes; defaults to all `ir`, or all drop-out when
    /// `dropout_p` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<RelayMode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_p: Option<f64>,
    /// One erasure probability per link; defaults to none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_erasure: Option<Vec<f64>>,
    /// Links with an intercept/resend eavesdropper.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eve_links: Vec<usize>,
    #[serde(default)]
    pub retransmission: Retransmission,
}

fn default_sample_fraction() -> f64 {
    DEFAULT_SAMPLE_FRACTION
}

fn default_weights() -> [f64; 2] {
    [0.5, 0.5]
}

fn default_sessions() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default = "default_sample_fraction")]
    pub sample_fraction: f64,
    #[serde(default = "default_pairing")]
    pub pairing: DuplexPairing,
    #[serde(default)]
    pub shuffle: Shuffle,
    #[serde(default)]
    pub ghz_eve: GhzEve,
    /// Standard / bit-revelation split for `randomized`.
    #[serde(default = "default_weights")]
    pub weights: [f64; 2],
    #[serde(default)]
    pub transport: TransportOptions,
    /// Active relays per logical channel for `dropout_sharing`
    /// (default `n − 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required: Option<usize>,
    #[serde(default)]
    pub include_all_active: bool,
    /// Fraction of GHZ pairs spent on the Bell check.
    #[serde(default)]
    pub bell_sample: f64,
    /// Independent sessions for asynchronous transport.
    #[serde(default = "default_sessions")]
    pub sessions: u32,
}

fn default_pairing() -> DuplexPairing {
    DuplexPairing::Sequential
}

impl Default for Options {
    fn default() -> Self {
        Self {
            sample_fraction: default_sample_fraction(),
            pairing: default_pairing(),
            shuffle: Shuffle::default(),
            ghz_eve: GhzEve::default(),
            weights: default_weights(),
            transport: TransportOptions::default(),
            required: None,
            include_all_active: false,
            bell_sample: 0.0,
            sessions: default_sessions(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub topology: Topology,
    /// Timeslots per session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<u64>,
    /// GHZ triples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triples: Option<usize>,
    pub protocol: ProtocolKind,
    #[serde(default)]
    pub options: Options,
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config {
                path,
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The seed from the file, overridden by `cli_seed`. There is no
    /// implicit entropy.
    pub fn resolve_seed(&self, cli_seed: Option<u64>) -> Result<u64> {
        cli_seed.or(self.seed).ok_or_else(|| {
            invalid(
                "seed",
                "no seed in the config and none given on the command line",
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(invalid(
                "version",
                format!(
                    "unsupported schema version {}, expected {SCHEMA_VERSION}",
                    self.version
                ),
            ));
        }
        if self.name.trim().is_empty() {
            return Err(invalid("name", "scenario name is empty"));
        }
        let o = &self.options;
        if !(0.0..=1.0).contains(&o.sample_fraction) {
            return Err(invalid("options.sample_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&o.bell_sample) {
            return Err(invalid("options.bell_sample", "must lie in [0, 1]"));
        }
        if o.sessions == 0 {
            return Err(invalid("options.sessions", "must be at least 1"));
        }
        match self.protocol {
            ProtocolKind::Ghz => {
                if self.triples.unwrap_or(0) == 0 {
                    return Err(invalid(
                        "triples",
                        "ghz scenarios need a positive triple count",
                    ));
                }
            }
            kind => {
                if self.slots.unwrap_or(0) == 0 {
                    return Err(invalid("slots", "a positive slot count is required"));
                }
                self.channel_spec()?;
                if kind == ProtocolKind::Duplex && self.topology.relays != 0 {
                    return Err(invalid("topology.relays", "duplex runs over a direct link"));
                }
                if kind == ProtocolKind::DropoutSharing && self.topology.relays < 2 {
                    return Err(invalid(
                        "topology.relays",
                        "drop-out sharing needs at least two relays",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn channel_spec(&self) -> Result<ChannelSpec> {
        let t = &self.topology;
        let modes = match (&t.modes, t.dropout_p) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "topology.dropout_p",
                    "give either modes or dropout_p, not both",
                ))
            }
            (Some(m), None) => {
                if m.len() != t.relays {
                    return Err(invalid(
                        "topology.modes",
                        format!("{} modes for {} relays", m.len(), t.relays),
                    ));
                }
                m.clone()
            }
            (None, Some(p)) => vec![RelayMode::Dropout { p }; t.relays],
            (None, None) => vec![RelayMode::Ir; t.relays],
        };
        let mut spec = ChannelSpec::with_modes(modes);
        if let Some(e) = &t.link_erasure {
            spec.link_erasure = e.clone();
        }
        spec.eve = t
            .eve_links
            .iter()
            .map(|&l| EveStrategy::intercept_resend(l))
            .collect();
        spec.retransmission = t.retransmission;
        spec.validate()
            .map_err(|e| invalid("topology", e.to_string()))?;
        Ok(spec)
    }
}
