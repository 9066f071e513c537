//! Scenario runner, persistence of run artifacts and the reproduction
//! suite.
//!
//! A run directory holds everything needed to recompute its report:
//!
//! ```text
//! out/
//!   scenario.json       config with the seed filled in
//!   sessions/           session logs and partition sidecars
//!   ghz.json            GHZ outcomes (ghz scenarios only)
//!   announcements.csv
//!   report.json
//! ```

pub mod config;
pub mod experiments;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{Options, ProtocolKind, ScenarioConfig, Topology, SCHEMA_VERSION};
pub use experiments::{reproduce, EXPERIMENTS};
pub use report::{ChannelRow, Check, CheckStatus, Metric, Report};

use crate::announce::{self, Announcement};
use crate::bb84::Bit;
use crate::dropout::{establish_shared_key, DropoutOptions};
use crate::error::{Error, Result};
use crate::ghz::{chsh_from_trials, ChshTrial, GhzConfig, GhzSession};
use crate::network::{run_session, Participant, SessionData};
use crate::persist::SessionStore;
use crate::protocols::{
    bit_revelation, duplex_filter, duplex_parity, randomize_postprocessing, sift_bb84, DuplexLogs,
};
use crate::rng::SeedSource;
use crate::statevector::BellOutcome;
use crate::transport::async_assemble;

/// What a GHZ run leaves behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhzRecord {
    pub m: Vec<Bit>,
    pub associations: Vec<(u64, u64)>,
    /// `(triple, a, b, m)` for triples kept for the key.
    pub outcomes: Vec<(usize, Bit, Bit, Bit)>,
    pub eve_outcomes: Vec<BellOutcome>,
    pub chsh_trials: Vec<ChshTrial>,
}

impl GhzRecord {
    pub fn from_session(s: &GhzSession) -> Self {
        Self {
            m: s.published_m.clone(),
            associations: s.associations.clone(),
            outcomes: s.outcomes(),
            eve_outcomes: s.eve_outcomes.clone(),
            chsh_trials: s.chsh_trials.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifacts {
    Sessions(Vec<SessionData>),
    Ghz(GhzRecord),
}

/// Seed for session `i` of a run.
pub fn session_seed(seed: u64, i: u32) -> u64 {
    SeedSource::new(seed).child(&format!("session/{i}")).seed()
}

/// Runs the quantum part of a scenario.
pub fn execute(cfg: &ScenarioConfig, seed: u64) -> Result<Artifacts> {
    cfg.validate()?;
    if cfg.protocol == ProtocolKind::Ghz {
        let gc = GhzConfig {
            triples: cfg.triples.unwrap_or(0),
            shuffle: cfg.options.shuffle,
            eve: cfg.options.ghz_eve,
        };
        let mut rng = SeedSource::new(seed).stream("ghz");
        let mut s = GhzSession::distribute(&gc, &mut rng)?;
        s.bell_check(cfg.options.bell_sample, &mut rng)?;
        s.measure_endpoints(&mut rng)?;
        return Ok(Artifacts::Ghz(GhzRecord::from_session(&s)));
    }
    let spec = cfg.channel_spec()?;
    let slots = cfg.slots.unwrap_or(0);
    let count = match cfg.protocol {
        ProtocolKind::Duplex => 2,
        ProtocolKind::Transport => cfg.options.sessions,
        _ => 1,
    };
    let sessions = (0..count)
        .map(|i| Ok(run_session(&spec, slots, session_seed(seed, i))?.with_id(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Artifacts::Sessions(sessions))
}

fn key_qber(alice: &[Bit], bob: &[Bit]) -> Metric {
    let diff = alice.iter().zip(bob).filter(|(a, b)| a != b).count() as u64;
    Metric::ratio(diff, alice.len().min(bob.len()) as u64)
}

/// Classical post-processing and statistics.
pub fn evaluate(
    cfg: &ScenarioConfig,
    seed: u64,
    artifacts: &Artifacts,
) -> Result<(Report, Vec<Announcement>)> {
    let mut r = Report::new(&cfg.name, cfg.protocol.name(), seed);
    let mut rng = SeedSource::new(seed).stream("postprocess");
    let o = &cfg.options;
    let mut ann = Vec::new();

    let sessions = match artifacts {
        Artifacts::Ghz(g) => {
            let total = g.m.len() as u64;
            let agree = g
                .outcomes
                .iter()
                .filter(|&&(_, a, b, m)| a == b ^ m)
                .count() as u64;
            let parity_ok = g
                .outcomes
                .iter()
                .filter(|&&(_, a, b, m)| a ^ b == m)
                .count() as u64;
            r.count("triples", total)
                .count("key_bits", g.outcomes.len() as u64)
                .count("bell_check_pairs", g.chsh_trials.len() as u64)
                .metric(
                    "agreement_rate",
                    Metric::ratio(agree, g.outcomes.len() as u64),
                )
                .metric(
                    "parity_error_rate",
                    Metric::ratio(g.outcomes.len() as u64 - parity_ok, g.outcomes.len() as u64),
                )
                .metric(
                    "chsh_s",
                    Metric::value(chsh_from_trials(&g.chsh_trials), g.chsh_trials.len() as u64),
                );
            if !g.eve_outcomes.is_empty() {
                let even = g
                    .eve_outcomes
                    .iter()
                    .filter(|e| matches!(e, BellOutcome::B1 | BellOutcome::B3))
                    .count() as u64;
                r.metric(
                    "eve_b1_b3_fraction",
                    Metric::ratio(even, g.eve_outcomes.len() as u64),
                );
            }
            ann.push(Announcement::GhzBits(g.m.clone()));
            ann.extend(
                g.associations
                    .iter()
                    .map(|&(a, b)| Announcement::GhzAssociation {
                        alice_slot: a,
                        bob_slot: b,
                    }),
            );
            r.announcements = ann.len() as u64;
            return Ok((r, ann));
        }
        Artifacts::Sessions(s) => s,
    };
    let first = sessions
        .first()
        .ok_or_else(|| Error::InvalidParameter("no sessions".into()))?;
    let total_slots: u64 = sessions.iter().map(|s| s.slots).sum();
    r.count("slots", total_slots)
        .count("sessions", sessions.len() as u64);
    let (alice, bob) = (first.log(Participant::Alice), first.log(Participant::Bob));

    match cfg.protocol {
        ProtocolKind::Standard | ProtocolKind::BitRevelation => {
            let (ka, kb) = if cfg.protocol == ProtocolKind::Standard {
                sift_bb84(&alice, &bob, o.sample_fraction, &mut rng)?
            } else {
                bit_revelation(&alice, &bob, o.sample_fraction, &mut rng)?
            };
            r.count("joined", ka.overlap)
                .count("kept", ka.kept)
                .count("sampled", ka.sample_slots.len() as u64)
                .count("key_bits", ka.slots.len() as u64)
                .metric("kept_fraction", Metric::ratio(ka.kept, ka.overlap))
                .metric(
                    "qber",
                    Metric::value(ka.qber_estimate, ka.sample_slots.len() as u64),
                )
                .metric("key_disagreement", key_qber(&ka.bits(), &kb.bits()));
        }
        ProtocolKind::Randomized => {
            let out =
                randomize_postprocessing(&alice, &bob, o.weights, o.sample_fraction, &mut rng)?;
            let (s, b) = (&out.standard.0, &out.revelation.0);
            r.count("standard_slots", s.overlap)
                .count("revelation_slots", b.overlap)
                .count("key_bits", out.alice.len() as u64)
                .metric(
                    "combined_rate",
                    Metric::ratio(s.kept + b.kept, s.overlap + b.overlap),
                )
                .metric(
                    "standard_qber",
                    Metric::value(s.qber_estimate, s.sample_slots.len() as u64),
                )
                .metric(
                    "revelation_qber",
                    Metric::value(b.qber_estimate, b.sample_slots.len() as u64),
                );
        }
        ProtocolKind::Duplex => {
            let logs = DuplexLogs::interleave(&sessions[0], &sessions[1])?;
            let sets = duplex_filter(&logs);
            let out = duplex_parity(&logs, o.pairing)?;
            r.count("set1", sets.set1.len() as u64)
                .count("set2", sets.set2.len() as u64)
                .count("set3", sets.set3.len() as u64)
                .count("tuples", out.tuples.len() as u64)
                .count("unpaired", out.unpaired)
                .count("alice_failures", out.alice_failures)
                .count("key_bits", out.alice.len() as u64)
                .metric(
                    "failure_rate",
                    Metric::ratio(out.alice_failures, out.tuples.len() as u64),
                )
                .metric("key_disagreement", key_qber(&out.alice.bits, &out.bob.bits))
                .metric(
                    "flip_key_agreement",
                    Metric::value(out.flip_key_agreement, out.alice.len() as u64),
                );
            ann = announce::from_duplex(&out);
        }
        ProtocolKind::Transport => {
            let a = async_assemble(sessions, &o.transport)?;
            let st = &a.stats;
            r.count("fully_open", st.fully_open)
                .count("fully_closed", st.fully_closed)
                .count("dual_pairs", st.dual_pairs)
                .count("cover_pairs", st.cover_pairs)
                .count("unmatched", st.unmatched)
                .count("key_bits", a.alice.len() as u64)
                .metric("key_rate", Metric::ratio(a.alice.len() as u64, total_slots))
                .metric("key_disagreement", key_qber(&a.alice.bits, &a.bob.bits));
            ann = announce::from_assembly(&a);
        }
        ProtocolKind::DropoutSharing => {
            let n = first.relay_count();
            let required = o.required.unwrap_or(n - 1);
            let opts = DropoutOptions {
                transport: o.transport,
                include_all_active: o.include_all_active,
            };
            let res = establish_shared_key(first, required, &opts)?;
            let open = first
                .slot_numbers()
                .filter(|&t| n - first.dropout_mask(t).count_ones() as usize >= required)
                .count() as u64;
            r.count("key_bits", res.alice.len() as u64)
                .count("complete", u64::from(res.complete))
                .metric("measured_f", Metric::rate(res.measured_f))
                .metric("open_fraction", Metric::ratio(open, first.slots))
                .metric(
                    "final_disagreement",
                    key_qber(&res.alice.bits, &res.bob.bits),
                );
            if let Some(f) = res.predicted_f {
                r.metric("predicted_f", Metric::exact(f));
            }
            for ch in &res.channels {
                r.channels.push(ChannelRow {
                    channel: ch.label(),
                    slots: ch.slots.len() as u64,
                    key_bits: ch.alice.len() as u64,
                    qber: key_qber(&ch.alice.bits, &ch.bob.bits),
                });
            }
            ann = announce::from_dropout(first);
        }
        ProtocolKind::Ghz => unreachable!("handled above"),
    }
    r.announcements = ann.len() as u64;
    Ok((r, ann))
}

/// Executes, persists and evaluates a scenario. With `out = None` nothing is
/// written.
pub fn run(cfg: &ScenarioConfig, cli_seed: Option<u64>, out: Option<&Path>) -> Result<Report> {
    let seed = cfg.resolve_seed(cli_seed)?;
    let artifacts = execute(cfg, seed)?;
    let (report, ann) = evaluate(cfg, seed, &artifacts)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut resolved = cfg.clone();
        resolved.seed = Some(seed);
        fs::write(dir.join("scenario.json"), resolved.to_json() + "\n")?;
        match &artifacts {
            Artifacts::Sessions(sessions) => {
                let store = SessionStore::open(dir.join("sessions"))?;
                for s in sessions {
                    store.append(s)?;
                }
            }
            Artifacts::Ghz(g) => fs::write(dir.join("ghz.json"), serde_json::to_string(g)? + "\n")?,
        }
        fs::write(
            dir.join("announcements.csv"),
            announce::write_announcements(&ann),
        )?;
        fs::write(dir.join("report.json"), report.to_json())?;
    }
    Ok(report)
}

/// Loads a run directory written by [`run`].
pub fn load_run(dir: &Path) -> Result<(ScenarioConfig, u64, Artifacts)> {
    let cfg = ScenarioConfig::load(&dir.join("scenario.json"))?;
    let seed = cfg.resolve_seed(None)?;
    let artifacts = if cfg.protocol == ProtocolKind::Ghz {
        Artifacts::Ghz(serde_json::from_str(&fs::read_to_string(
            dir.join("ghz.json"),
        )?)?)
    } else {
        Artifacts::Sessions(SessionStore::open(dir.join("sessions"))?.load_all()?)
    };
    Ok((cfg, seed, artifacts))
}

/// Recomputes a run's report from its persisted artifacts.
pub fn report_from_dir(dir: &Path) -> Result<Report> {
    let (cfg, seed, artifacts) = load_run(dir)?;
    Ok(evaluate(&cfg, seed, &artifacts)?.0)
}

/// Summary of loose session logs: transport assembly across all of them.
pub fn report_from_logs(paths: &[PathBuf]) -> Result<Report> {
    let sessions = paths
        .iter()
        .map(|p| crate::persist::load_log(p))
        .collect::<Result<Vec<_>>>()?;
    let slots = sessions.iter().map(|s| s.slots).max().unwrap_or(0);
    let cfg = ScenarioConfig {
        version: SCHEMA_VERSION,
        name: "logs".into(),
        seed: Some(0),
        topology: Topology {
            relays: sessions.first().map_or(0, SessionData::relay_count),
            ..Default::default()
        },
        slots: Some(slots.max(1)),
        triples: None,
        protocol: ProtocolKind::Transport,
        options: Options::default(),
    };
    Ok(evaluate(&cfg, 0, &Artifacts::Sessions(sessions))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(protocol: &str, extra: &str) -> ScenarioConfig {
        ScenarioConfig::parse(&format!(
            r#"{{"version":1,"name":"t","seed":11,"slots":20000,"triples":2000,"protocol":"{protocol}"{extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn every_protocol_runs() {
        let cases = [
            ("standard", ""),
            ("bit_revelation", ""),
            ("randomized", ""),
            ("duplex", ""),
            (
                "transport",
                r#","topology":{"relays":2},"options":{"sessions":2}"#,
            ),
            (
                "dropout_sharing",
                r#","topology":{"relays":4,"dropout_p":0.5}"#,
            ),
            (
                "ghz",
                r#","options":{"bell_sample":0.2,"shuffle":"derangement"}"#,
            ),
        ];
        for (p, extra) in cases {
            let r = run(&cfg(p, extra), None, None).unwrap();
            assert_eq!(r.protocol, p);
            assert!(r.counters["key_bits"] > 0, "{p}");
        }
    }

    #[test]
    fn transport_rate_and_determinism() {
        let c = cfg("transport", r#","topology":{"relays":2}"#);
        let a = run(&c, None, None).unwrap();
        let rate = a.metrics["key_rate"].value.unwrap();
        assert!((rate - 0.5).abs() < 0.02, "{rate}");
        assert_eq!(a.to_json(), run(&c, None, None).unwrap().to_json());
        assert_ne!(a.to_json(), run(&c, Some(12), None).unwrap().to_json());
    }

    #[test]
    fn run_directory_recomputes_its_report() {
        for (p, extra) in [
            (
                "dropout_sharing",
                r#","topology":{"relays":3,"dropout_p":0.3}"#,
            ),
            ("ghz", r#","options":{"bell_sample":0.1}"#),
            ("duplex", ""),
        ] {
            let dir = tempfile::tempdir().unwrap();
            let r = run(&cfg(p, extra), None, Some(dir.path())).unwrap();
            assert_eq!(report_from_dir(dir.path()).unwrap(), r);
            let on_disk = fs::read_to_string(dir.path().join("report.json")).unwrap();
            assert_eq!(on_disk, r.to_json());
        }
    }
}
