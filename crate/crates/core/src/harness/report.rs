//! Scenario and reproduction reports, as JSON and as plain-text tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::stats::Rate;

/// A measured value with the counts behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: Option<f64>,
    /// Events counted, when the value is a ratio.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits: Option<u64>,
    /// Samples the value was computed from.
    pub samples: u64,
}

impl Metric {
    pub fn rate(r: Rate) -> Self {
        Self {
            value: r.value(),
            hits: Some(r.hits),
            samples: r.total,
        }
    }

    pub fn ratio(hits: u64, total: u64) -> Self {
        Self::rate(Rate::new(hits, total))
    }

    pub fn value(value: Option<f64>, samples: u64) -> Self {
        Self {
            value,
            hits: None,
            samples,
        }
    }

    /// A closed-form prediction; no samples involved.
    pub fn exact(value: f64) -> Self {
        Self::value(Some(value), 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Compared against a published figure known not to match; reported,
    /// not judged.
    Discrepancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: Option<f64>,
    pub expected: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    pub fn within(
        name: impl Into<String>,
        measured: Option<f64>,
        expected: f64,
        tolerance: f64,
    ) -> Self {
        let ok = measured.is_some_and(|m| (m - expected).abs() <= tolerance);
        Self {
            name: name.into(),
            measured,
            expected,
            tolerance,
            status: if ok {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            note: None,
        }
    }

    /// Passes when `measured > bound`.
    pub fn above(name: impl Into<String>, measured: Option<f64>, bound: f64) -> Self {
        let ok = measured.is_some_and(|m| m > bound);
        Self {
            name: name.into(),
            measured,
            expected: bound,
            tolerance: 0.0,
            status: if ok {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            note: Some("lower bound".into()),
        }
    }

    pub fn discrepancy(
        name: impl Into<String>,
        measured: Option<f64>,
        published: f64,
        note: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            measured,
            expected: published,
            tolerance: 0.0,
            status: CheckStatus::Discrepancy,
            note: Some(note.into()),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

/// Per-logical-channel breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRow {
    pub channel: String,
    pub slots: u64,
    pub key_bits: u64,
    pub qber: Metric,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub protocol: String,
    pub seed: u64,
    /// What the run is meant to show.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<String>,
    pub counters: BTreeMap<String, u64>,
    pub metrics: BTreeMap<String, Metric>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<ChannelRow>,
    pub announcements: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(scenario: impl Into<String>, protocol: impl Into<String>, seed: u64) -> Self {
        Self {
            scenario: scenario.into(),
            protocol: protocol.into(),
            seed,
            ..Default::default()
        }
    }

    pub fn count(&mut self, key: &str, value: u64) -> &mut Self {
        self.counters.insert(key.to_string(), value);
        self
    }

    pub fn metric(&mut self, key: &str, m: Metric) -> &mut Self {
        self.metrics.insert(key.to_string(), m);
        self
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "scenario: {}  protocol: {}  seed: {}",
            self.scenario, self.protocol, self.seed
        )
        .unwrap();
        if let Some(c) = &self.claim {
            writeln!(out, "claim: {c}").unwrap();
        }
        if !self.counters.is_empty() {
            writeln!(out, "\n{:<34} {:>12}", "counter", "value").unwrap();
            for (k, v) in &self.counters {
                writeln!(out, "{k:<34} {v:>12}").unwrap();
            }
        }
        writeln!(out, "{:<34} {:>12}", "announcements", self.announcements).unwrap();
        if !self.metrics.is_empty() {
            writeln!(out, "\n{:<34} {:>12} {:>12}", "metric", "value", "samples").unwrap();
            for (k, m) in &self.metrics {
                writeln!(out, "{k:<34} {:>12} {:>12}", fmt_opt(m.value), m.samples).unwrap();
            }
        }
        if !self.channels.is_empty() {
            writeln!(
                out,
                "\n{:<12} {:>10} {:>10} {:>10}",
                "channel", "slots", "key_bits", "qber"
            )
            .unwrap();
            for c in &self.channels {
                writeln!(
                    out,
                    "{:<12} {:>10} {:>10} {:>10}",
                    c.channel,
                    c.slots,
                    c.key_bits,
                    fmt_opt(c.qber.value)
                )
                .unwrap();
            }
        }
        if !self.checks.is_empty() {
            writeln!(
                out,
                "\n{:<44} {:>10} {:>10} {:>8}  status",
                "check", "measured", "expected", "tol"
            )
            .unwrap();
            for c in &self.checks {
                let status = match c.status {
                    CheckStatus::Pass => "PASS",
                    CheckStatus::Fail => "FAIL",
                    CheckStatus::Discrepancy => "NOTED",
                };
                writeln!(
                    out,
                    "{:<44} {:>10} {:>10.6} {:>8}  {status}",
                    c.name,
                    fmt_opt(c.measured),
                    c.expected,
                    fmt_tol(c.tolerance)
                )
                .unwrap();
                if let Some(n) = &c.note {
                    writeln!(out, "    {n}").unwrap();
                }
            }
        }
        out
    }
}

fn fmt_tol(t: f64) -> String {
    if t != 0.0 && t < 1e-4 {
        format!("{t:.0e}")
    } else {
        t.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}
