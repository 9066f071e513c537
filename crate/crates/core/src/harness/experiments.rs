//! Built-in reproduction experiments. Each one runs pinned scenarios and
//! compares the measured values with the published or independently derived
//! targets.

use super::config::ScenarioConfig;
use super::report::{Check, Metric, Report};
use super::{evaluate, execute};
use crate::dropout::{predict_open, predict_useful, DropoutParams};
use crate::error::{Error, Result};
use crate::protocols::{duplex_filter, duplex_parity, example_duplex_table, DuplexPairing};
use crate::rng::SeedSource;

pub const EXPERIMENTS: [&str; 7] = [
    "rate-vs-relays",
    "dropout-fractions",
    "dropout-n10",
    "duplex-eve",
    "bitrev-fractions",
    "ghz-attack",
    "compromised-relay",
];

/// Runs one named experiment.
pub fn reproduce(name: &str, seed: u64) -> Result<Report> {
    let src = SeedSource::new(seed);
    let mut r = match name {
        "rate-vs-relays" => rate_vs_relays(&src)?,
        "dropout-fractions" => dropout_fractions(&src)?,
        "dropout-n10" => dropout_n10(&src)?,
        "duplex-eve" => duplex_eve(&src)?,
        "bitrev-fractions" => bitrev_fractions(&src)?,
        "ghz-attack" => ghz_attack(&src)?,
        "compromised-relay" => compromised_relay(&src)?,
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown experiment '{other}', expected one of {}",
                EXPERIMENTS.join(", ")
            )))
        }
    };
    r.scenario = name.to_string();
    r.seed = seed;
    Ok(r)
}

fn scenario(json: &str) -> ScenarioConfig {
    ScenarioConfig::parse(json).expect("built-in scenario is valid")
}

/// Runs a sub-scenario on its own child seed.
fn sub(src: &SeedSource, label: &str, json: &str) -> Result<Report> {
    let cfg = scenario(json);
    let seed = src.child(label).seed();
    let artifacts = execute(&cfg, seed)?;
    Ok(evaluate(&cfg, seed, &artifacts)?.0)
}

fn value(r: &Report, key: &str) -> Option<f64> {
    r.metrics.get(key).and_then(|m| m.value)
}

fn absorb(into: &mut Report, prefix: &str, from: &Report) {
    for (k, v) in &from.counters {
        into.counters.insert(format!("{prefix}.{k}"), *v);
    }
    for (k, v) in &from.metrics {
        into.metrics.insert(format!("{prefix}.{k}"), v.clone());
    }
    into.announcements += from.announcements;
}

fn rate_vs_relays(src: &SeedSource) -> Result<Report> {
    let mut r = Report::new("", "transport", 0);
    r.claim =
        Some("ideal bit transport yields one shared bit per two slots for any relay count".into());
    for n in [1usize, 2, 3, 4, 6] {
        let s = sub(
            src,
            &format!("n{n}"),
            &format!(
                r#"{{"version":1,"name":"transport-n{n}","slots":100000,"protocol":"transport","topology":{{"relays":{n}}}}}"#
            ),
        )?;
        r.checks.push(Check::within(
            format!("key_rate n={n}"),
            value(&s, "key_rate"),
            0.5,
            0.01,
        ));
        r.checks.push(Check::within(
            format!("key_disagreement n={n}"),
            value(&s, "key_disagreement"),
            0.0,
            0.0,
        ));
        absorb(&mut r, &format!("n{n}"), &s);
    }
    Ok(r)
}

fn dropout_fractions(src: &SeedSource) -> Result<Report> {
    let params = DropoutParams::new(4, 0.5)?;
    let s = sub(
        src,
        "n4",
        r#"{"version":1,"name":"dropout-n4","slots":1000000,"protocol":"dropout_sharing","topology":{"relays":4,"dropout_p":0.5}}"#,
    )?;
    let mut r = Report::new("", "dropout_sharing", 0);
    r.claim = Some(
        "n=4, p=1/2: a slot is open with probability 5/16 and useful with probability 1/4".into(),
    );
    r.checks.push(Check::within(
        "predicted open",
        Some(predict_open(&params)),
        5.0 / 16.0,
        1e-12,
    ));
    r.checks.push(Check::within(
        "predicted f",
        Some(predict_useful(&params)),
        0.25,
        1e-12,
    ));
    r.checks.push(Check::within(
        "measured open",
        value(&s, "open_fraction"),
        5.0 / 16.0,
        0.005,
    ));
    r.checks.push(Check::within(
        "measured f",
        value(&s, "measured_f"),
        0.25,
        0.005,
    ));
    r.checks.push(Check::within(
        "final key disagreement",
        value(&s, "final_disagreement"),
        0.0,
        0.0,
    ));
    r.channels = s.channels.clone();
    absorb(&mut r, "n4", &s);
    Ok(r)
}

fn dropout_n10(src: &SeedSource) -> Result<Report> {
    let params = DropoutParams::new(10, 0.5)?;
    let predicted = predict_useful(&params);
    let s = sub(
        src,
        "n10",
        r#"{"version":1,"name":"dropout-n10","slots":200000,"protocol":"dropout_sharing","topology":{"relays":10,"dropout_p":0.5}}"#,
    )?;
    let mut r = Report::new("", "dropout_sharing", 0);
    r.claim = Some("n=10, p=1/2: the useful fraction is about 0.01".into());
    r.metrics
        .insert("predicted_f".into(), Metric::exact(predicted));
    r.checks.push(Check::within(
        "predicted f vs 10/1024",
        Some(predicted),
        10.0 / 1024.0,
        1e-12,
    ));
    r.checks.push(Check::within(
        "predicted f vs published 0.01",
        Some(predicted),
        0.01,
        0.001,
    ));
    r.checks.push(Check::within(
        "measured f",
        value(&s, "measured_f"),
        predicted,
        0.0015,
    ));
    absorb(&mut r, "n10", &s);
    Ok(r)
}

fn duplex_eve(src: &SeedSource) -> Result<Report> {
    let eve = sub(
        src,
        "eve",
        r#"{"version":1,"name":"duplex-eve","slots":100000,"protocol":"duplex","topology":{"eve_links":[0]}}"#,
    )?;
    let ideal = sub(
        src,
        "ideal",
        r#"{"version":1,"name":"duplex-ideal","slots":100000,"protocol":"duplex"}"#,
    )?;
    let mut r = Report::new("", "duplex", 0);
    r.claim =
        Some("intercept/resend on both directions gives a verification error rate of 3/8".into());
    r.checks.push(Check::within(
        "eve failure rate",
        value(&eve, "failure_rate"),
        0.375,
        0.01,
    ));
    r.checks.push(Check::within(
        "ideal failure rate",
        value(&ideal, "failure_rate"),
        0.0,
        0.0,
    ));
    r.checks.push(Check::within(
        "ideal key disagreement",
        value(&ideal, "key_disagreement"),
        0.0,
        0.0,
    ));

    let table = example_duplex_table();
    let sets = duplex_filter(&table);
    let tuples = duplex_parity(&table, DuplexPairing::Sequential)?;
    let set1_ok = sets.set1 == [1, 4, 7, 10, 12, 13, 17];
    let got: Vec<(u64, u64, u8)> = tuples
        .tuples
        .iter()
        .map(|p| (p.t, p.t_tilde, p.f.as_u8()))
        .collect();
    let tuples_ok = got == [(3, 2, 1), (5, 6, 1), (9, 8, 0), (11, 14, 1), (15, 16, 0)];
    r.checks.push(Check::within(
        "worked example set1",
        Some(f64::from(u8::from(set1_ok))),
        1.0,
        0.0,
    ));
    r.checks.push(Check::within(
        "worked example tuples",
        Some(f64::from(u8::from(tuples_ok))),
        1.0,
        0.0,
    ));
    absorb(&mut r, "eve", &eve);
    absorb(&mut r, "ideal", &ideal);
    Ok(r)
}

fn bitrev_fractions(src: &SeedSource) -> Result<Report> {
    let ideal = sub(
        src,
        "ideal",
        r#"{"version":1,"name":"bitrev-ideal","slots":100000,"protocol":"bit_revelation"}"#,
    )?;
    let eve = sub(
        src,
        "eve",
        r#"{"version":1,"name":"bitrev-eve","slots":100000,"protocol":"bit_revelation","topology":{"eve_links":[0]},"options":{"sample_fraction":1.0}}"#,
    )?;
    let mut r = Report::new("", "bit_revelation", 0);
    r.claim = Some(
        "bit revelation keeps a quarter of the slots and exposes an intercept/resend attack".into(),
    );
    let kept = value(&ideal, "kept_fraction");
    r.checks
        .push(Check::within("ideal kept fraction", kept, 0.25, 0.01));
    r.checks.push(Check::within(
        "ideal key disagreement",
        value(&ideal, "key_disagreement"),
        0.0,
        0.0,
    ));
    r.checks.push(
        Check::above("eve key qber", value(&eve, "qber"), 0.25)
            .with_note("case enumeration gives 1/3"),
    );
    r.checks.push(Check::discrepancy(
        "discarded fraction",
        kept.map(|k| 1.0 - k),
        5.0 / 8.0,
        "published figure of 5/8; the case enumeration gives 3/4",
    ));
    absorb(&mut r, "ideal", &ideal);
    absorb(&mut r, "eve", &eve);
    Ok(r)
}

fn ghz_attack(src: &SeedSource) -> Result<Report> {
    let base = r#""version":1,"protocol":"ghz","triples":10000"#;
    let ideal = sub(src, "ideal", &format!(r#"{{{base},"name":"ghz-ideal"}}"#))?;
    let plain = sub(
        src,
        "plain",
        &format!(r#"{{{base},"name":"ghz-plain","options":{{"ghz_eve":"bell_resend"}}}}"#),
    )?;
    let deranged = sub(
        src,
        "deranged",
        &format!(
            r#"{{{base},"name":"ghz-deranged","options":{{"ghz_eve":"bell_resend","shuffle":"derangement"}}}}"#
        ),
    )?;
    let chsh = sub(
        src,
        "chsh",
        r#"{"version":1,"protocol":"ghz","triples":40000,"name":"ghz-chsh","options":{"bell_sample":1.0}}"#,
    )?;
    let mut r = Report::new("", "ghz", 0);
    r.claim = Some("a Bell-measuring Eve is caught once the triples are shuffled".into());
    r.checks.push(Check::within(
        "ideal parity error",
        value(&ideal, "parity_error_rate"),
        0.0,
        0.0,
    ));
    r.checks.push(Check::within(
        "unshuffled attack parity error",
        value(&plain, "parity_error_rate"),
        0.0,
        0.0,
    ));
    r.checks.push(Check::within(
        "unshuffled eve outcomes in {B1,B3}",
        value(&plain, "eve_b1_b3_fraction"),
        1.0,
        0.0,
    ));
    let err = value(&deranged, "parity_error_rate");
    r.checks.push(
        Check::within("deranged attack parity error", err, 0.5, 0.01)
            .with_note("six-qubit state vector oracle"),
    );
    r.checks.push(Check::discrepancy(
        "deranged attack parity error vs stated",
        err,
        0.25,
        "stated figure of 0.25; the six-qubit oracle gives 1/2",
    ));
    r.checks.push(Check::within(
        "ideal CHSH S",
        value(&chsh, "chsh_s"),
        2.0 * std::f64::consts::SQRT_2,
        0.05,
    ));
    absorb(&mut r, "ideal", &ideal);
    absorb(&mut r, "unshuffled", &plain);
    absorb(&mut r, "deranged", &deranged);
    absorb(&mut r, "chsh", &chsh);
    Ok(r)
}

fn compromised_relay(src: &SeedSource) -> Result<Report> {
    let s = sub(
        src,
        "n4",
        r#"{"version":1,"name":"compromised-relay","slots":1000000,"protocol":"dropout_sharing","topology":{"relays":4,"modes":[
            {"kind":"dropout","p":0.5},{"kind":"compromised_always_on","p":0.5},
            {"kind":"dropout","p":0.5},{"kind":"dropout","p":0.5}]}}"#,
    )?;
    let mut r = Report::new("", "dropout_sharing", 0);
    r.claim = Some("a relay that claims drop-outs but keeps measuring shows errors only on channels that exclude it".into());
    for ch in &s.channels {
        let includes = ch.channel.contains('2');
        let (expected, tol) = if includes { (0.0, 0.005) } else { (0.25, 0.01) };
        r.checks.push(Check::within(
            format!("qber channel {}", ch.channel),
            ch.qber.value,
            expected,
            tol,
        ));
    }
    r.channels = s.channels.clone();
    absorb(&mut r, "n4", &s);
    Ok(r)
}
