//! Acceptance criteria AC1–AC11. Runs every criterion, prints one line each
//! and exits non-zero unless the set of failures is exactly
//! `EXPECTED_FAILURES`.

use std::f64::consts::SQRT_2;
use std::time::{Duration, Instant};

use qkdlab::dropout::{
    detect_compromised, establish_shared_key, predict_open, predict_useful, DropoutOptions,
    DropoutParams,
};
use qkdlab::ghz::{run_ghz_session, GhzConfig, GhzEve, GhzSession, Shuffle};
use qkdlab::harness::{self, ScenarioConfig, EXPERIMENTS};
use qkdlab::network::{run_session, Observation};
use qkdlab::protocols::{
    bit_revelation, duplex_filter, duplex_parity, example_duplex_table, sift_bb84, DuplexLogs,
    DuplexPairing,
};
use qkdlab::statevector::{chsh_estimate, BellOutcome, PureState};
use qkdlab::stats::chi_square_uniform;
use qkdlab::transport::{assemble_key, dual, PartitionId, TransportOptions};
use qkdlab::{Basis, Bit, ChannelSpec, Participant, RelayMode, SeedSource, SessionData};

/// Criteria whose stated target is contradicted by an independent oracle.
/// They are still checked against the stated value and reported as FAIL.
const EXPECTED_FAILURES: &[&str] = &["AC10"];

#[derive(Default)]
struct Outcome {
    checks: Vec<(String, bool)>,
    notes: Vec<String>,
}

impl Outcome {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.checks.push((what.into(), ok));
    }

    fn within(&mut self, name: &str, measured: Option<f64>, expected: f64, tol: f64) {
        let ok = measured.is_some_and(|m| (m - expected).abs() <= tol);
        let shown = measured.map_or("-".to_string(), |m| format!("{m:.5}"));
        self.check(ok, format!("{name} {shown} (want {expected:.5} ± {tol})"));
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}

fn rng(label: &str) -> qkdlab::SimRng {
    SeedSource::new(0xAC).stream(label)
}

fn obs(s: &SessionData, member: usize, t: u64) -> Option<Observation> {
    s.observation(Participant::at(member, s.relay_count()), t)
}

fn ratio(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

fn ac1(o: &mut Outcome) {
    for (i, n) in [1usize, 2, 3, 4, 6].into_iter().enumerate() {
        let start = Instant::now();
        let s = run_session(&ChannelSpec::ideal(n), 100_000, 100 + i as u64).unwrap();
        let a = assemble_key(&s, &TransportOptions::default());
        o.within(&format!("n={n} rate"), a.key_rate().value(), 0.5, 0.01);
        o.check(a.alice.bits == a.bob.bits, format!("n={n} keys equal"));
        o.check(
            start.elapsed() < Duration::from_secs(10),
            format!("n={n} under 10 s"),
        );
    }
}

fn ac2(o: &mut Outcome) {
    let mut all = true;
    for len in 2..=12usize {
        let mut seen = vec![false; 1 << len];
        for bits in 0..1u32 << len {
            let s = PartitionId::from_bits(len, bits);
            let d = dual(s);
            let oracle: Vec<bool> = (0..len - 1).map(|i| s.basis(i) == s.basis(i + 1)).collect();
            let dual_open: Vec<bool> = (0..len - 1).map(|i| d.basis(i) == d.basis(i + 1)).collect();
            all &= dual(d) == s
                && oracle.iter().zip(&dual_open).all(|(a, b)| a != b)
                && !seen[d.bits() as usize];
            seen[d.bits() as usize] = true;
        }
        all &= seen.iter().all(|&x| x);
    }
    o.check(
        all,
        "involution, complementation and bijectivity for chains up to 10 relays",
    );
    use Basis::{X, Y};
    o.check(
        dual(PartitionId::new(&[X, X, X, Y])) == PartitionId::new(&[X, Y, X, X]),
        "XXXY <-> XYXX",
    );
    let extremes = (2..=12).all(|len| {
        let open = PartitionId::new(&vec![X; len]);
        open.openness().is_fully_open() && dual(open).openness().is_fully_closed()
    });
    o.check(extremes, "fully open pairs with fully closed");
}

fn ac3(o: &mut Outcome) {
    let (mut pairs, mut bad) = (0usize, 0usize);
    for i in 0..100u64 {
        let n = (i % 4 + 1) as usize;
        let s = run_session(&ChannelSpec::ideal(n), 10_000, 3000 + i).unwrap();
        let a = assemble_key(&s, &TransportOptions::default());
        for p in &a.announcements {
            pairs += 1;
            let alice = obs(&s, 0, p.t_alice.t).unwrap().bit;
            let bob = obs(&s, n + 1, p.t_bob.t).unwrap().bit ^ p.correction();
            bad += usize::from(alice != bob);
        }
    }
    o.check(
        bad == 0 && pairs > 0,
        format!("{bad} mismatches over {pairs} pairs"),
    );
}

fn ac4(o: &mut Outcome) {
    let mut worst: f64 = 0.0;
    for n in 1..=12usize {
        for k in 0..=10u128 {
            for required in 1..=n {
                let (mut open, mut useful) = (0u128, 0u128);
                for pattern in 0u32..1 << n {
                    let d = pattern.count_ones();
                    let w = k.pow(d) * (10 - k).pow(n as u32 - d);
                    let active = n - d as usize;
                    open += if active >= required { w } else { 0 };
                    useful += if active == required { w } else { 0 };
                }
                let denom = 10u128.pow(n as u32) as f64;
                let params = DropoutParams::with_required(n, k as f64 / 10.0, required).unwrap();
                worst = worst
                    .max((predict_open(&params) - open as f64 / denom).abs())
                    .max((predict_useful(&params) - useful as f64 / denom).abs());
            }
        }
    }
    o.check(
        worst < 1e-12,
        format!("closed forms vs enumeration, max error {worst:.1e}"),
    );

    let s = run_session(&ChannelSpec::dropout(4, 0.5), 1_000_000, 44).unwrap();
    let active = |t| 4 - s.dropout_mask(t).count_ones() as usize;
    let open = s.slot_numbers().filter(|&t| active(t) >= 3).count();
    let useful = s.slot_numbers().filter(|&t| active(t) == 3).count();
    o.within("n=4 P(open)", ratio(open, 1_000_000), 5.0 / 16.0, 0.005);
    o.within("n=4 f", ratio(useful, 1_000_000), 0.25, 0.005);
    let f10 = predict_useful(&DropoutParams::new(10, 0.5).unwrap());
    o.within("n=10 predicted f", Some(f10), 0.00977, 0.00001);
    o.within("n=10 predicted f vs 0.01", Some(f10), 0.01, 0.001);
}

fn ac5(o: &mut Outcome) {
    let s = run_session(&ChannelSpec::dropout(4, 0.5), 3_400_000, 55).unwrap();
    let r = establish_shared_key(&s, 3, &DropoutOptions::default()).unwrap();
    o.check(
        r.complete && r.alice.bits == r.bob.bits,
        "final keys identical",
    );
    let len = r.alice.len();
    o.check(len >= 100_000, format!("{len} final key bits"));
    let (_, p) = chi_square_uniform(&[
        r.alice.bits.iter().filter(|b| !b.is_one()).count() as u64,
        r.alice.bits.iter().filter(|b| b.is_one()).count() as u64,
    ]);
    o.check(p > 0.01, format!("final key uniform, p = {p:.3}"));
    // A relay learns at most the shares of the channels it sits in; its best
    // guess of a final bit is their XOR.
    for relay in 1..=4 {
        let mut cells = [0u64; 4];
        for i in 0..len {
            let guess = r
                .channels
                .iter()
                .filter(|c| c.active_set.contains(&relay))
                .fold(Bit::ZERO, |acc, c| acc ^ c.alice.bits[i]);
            cells[2 * guess.as_u8() as usize + r.alice.bits[i].as_u8() as usize] += 1;
        }
        let (_, p) = chi_square_uniform(&cells);
        o.check(
            p > 0.01,
            format!("relay {relay} transcript: (guess, key) uniform, p = {p:.3}"),
        );
    }
}

fn ac6(o: &mut Outcome) {
    let mut modes = vec![RelayMode::Dropout { p: 0.5 }; 4];
    modes[1] = RelayMode::CompromisedAlwaysOn { p: 0.5 };
    let s = run_session(&ChannelSpec::with_modes(modes), 1_000_000, 66).unwrap();
    for ch in detect_compromised(&s, 1.0, &mut rng("ac6")).unwrap() {
        let label: String = ch.active_set.iter().map(|j| j.to_string()).collect();
        if ch.active_set.contains(&2) {
            o.within(&format!("channel {label} qber"), ch.qber, 0.0, 0.005);
        } else {
            o.within(&format!("channel {label} qber"), ch.qber, 0.25, 0.01);
        }
    }
}

fn duplex(eve: bool, seed: u64) -> DuplexLogs {
    let mut spec = ChannelSpec::ideal(0);
    if eve {
        spec = spec.with_eve(0);
    }
    let a = run_session(&spec, 100_000, seed).unwrap();
    let b = run_session(&spec, 100_000, seed + 1).unwrap();
    DuplexLogs::interleave(&a, &b).unwrap()
}

fn ac7(o: &mut Outcome) {
    let out = duplex_parity(&duplex(true, 70), DuplexPairing::Sequential).unwrap();
    o.within("eve failure rate", out.failure_rate(), 0.375, 0.01);
    let ideal = duplex_parity(&duplex(false, 72), DuplexPairing::Sequential).unwrap();
    o.check(
        ideal.alice_failures == 0,
        format!("ideal failures {}", ideal.alice_failures),
    );
    o.check(
        ideal.alice.bits == ideal.bob.bits && !ideal.alice.is_empty(),
        "ideal final keys equal",
    );
    let table = example_duplex_table();
    o.check(
        duplex_filter(&table).set1 == [1, 4, 7, 10, 12, 13, 17],
        "worked example set1",
    );
    let tuples: Vec<(u64, u64, u8)> = duplex_parity(&table, DuplexPairing::Sequential)
        .unwrap()
        .tuples
        .iter()
        .map(|p| (p.t, p.t_tilde, p.f.as_u8()))
        .collect();
    o.check(
        tuples == [(3, 2, 1), (5, 6, 1), (9, 8, 0), (11, 14, 1), (15, 16, 0)],
        "worked example tuples",
    );
}

fn logs(s: &SessionData) -> (Vec<qkdlab::SlotRecord>, Vec<qkdlab::SlotRecord>) {
    (s.log(Participant::Alice), s.log(Participant::Bob))
}

fn ac8(o: &mut Outcome) {
    let s = run_session(&ChannelSpec::ideal(0), 100_000, 80).unwrap();
    let (a, b) = logs(&s);
    let (ka, kb) = bit_revelation(&a, &b, 0.1, &mut rng("ac8")).unwrap();
    let complement = ka
        .origin
        .iter()
        .chain(&ka.sample_slots)
        .all(|&t| obs(&s, 0, t).unwrap().basis != obs(&s, 1, t).unwrap().basis);
    o.check(
        complement && ka.bits() == kb.bits(),
        "kept slots have c_A = not c_B",
    );
    let kept = ka.kept_fraction();
    o.within("kept fraction", kept, 0.25, 0.01);
    let e = run_session(&ChannelSpec::ideal(0).with_eve(0), 100_000, 81).unwrap();
    let (a, b) = logs(&e);
    let (ea, _) = bit_revelation(&a, &b, 1.0, &mut rng("ac8e")).unwrap();
    let q = ea.qber_estimate.unwrap_or(0.0);
    o.check(q > 0.25, format!("eve key qber {q:.4} > 0.25"));
    o.note(format!(
        "discarded fraction {:.4} vs published 5/8 (enumeration gives 3/4)",
        1.0 - kept.unwrap_or(0.0)
    ));
}

fn ac9(o: &mut Outcome) {
    let s = run_session(&ChannelSpec::ideal(0).with_eve(0), 100_000, 90).unwrap();
    let (a, b) = logs(&s);
    let (ka, _) = sift_bb84(&a, &b, 1.0, &mut rng("ac9")).unwrap();
    o.within("sifted qber", ka.qber_estimate, 0.25, 0.01);
}

fn ac10(o: &mut Outcome) {
    let mut r = rng("ac10");
    let parity_errors = |shuffle, eve, r: &mut qkdlab::SimRng| {
        let s = run_ghz_session(
            &GhzConfig {
                triples: 10_000,
                shuffle,
                eve,
            },
            r,
        )
        .unwrap();
        let out = s.outcomes();
        let bad = out.iter().filter(|&&(_, a, b, m)| a ^ b != m).count();
        (bad, out.len(), s.eve_outcomes)
    };
    let (bad, total, _) = parity_errors(Shuffle::Uniform, GhzEve::None, &mut r);
    o.check(
        bad == 0 && total == 10_000,
        format!("ideal parity law: {bad} errors over {total}"),
    );
    let (bad, _, eve) = parity_errors(Shuffle::Identity, GhzEve::BellResend, &mut r);
    let confined = eve
        .iter()
        .all(|e| matches!(e, BellOutcome::B1 | BellOutcome::B3));
    o.check(
        bad == 0 && confined,
        format!("unshuffled attack: {bad} errors, outcomes in {{B1,B3}}: {confined}"),
    );
    let (bad, total, _) = parity_errors(Shuffle::Derangement, GhzEve::BellResend, &mut r);
    o.within(
        "deranged attack parity error (stated)",
        ratio(bad, total),
        0.25,
        0.01,
    );
    o.note("two-triple state-vector oracle (tests/ghz_oracle.rs) gives 1/2 for this attack");
    let s = chsh_estimate(|_| PureState::bell(BellOutcome::B1), 100_000, &mut r).unwrap();
    o.within("ideal CHSH S, B1 source", Some(s), 2.0 * SQRT_2, 0.05);
    let cfg = GhzConfig {
        triples: 40_000,
        shuffle: Shuffle::Uniform,
        eve: GhzEve::None,
    };
    let mut g = GhzSession::distribute(&cfg, &mut r).unwrap();
    let s = g.bell_check(1.0, &mut r).unwrap();
    o.within("ideal CHSH S, distributed pairs", s, 2.0 * SQRT_2, 0.05);
}

fn ac11(o: &mut Outcome) {
    for name in EXPERIMENTS {
        let a = harness::reproduce(name, 11).unwrap().to_json();
        let b = harness::reproduce(name, 11).unwrap().to_json();
        o.check(a == b, format!("{name} byte-identical"));
    }
    let cfg = ScenarioConfig::parse(
        r#"{"version":1,"name":"det","seed":5,"slots":20000,"protocol":"transport","topology":{"relays":3}}"#,
    )
    .unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    harness::run(&cfg, None, Some(d1.path())).unwrap();
    harness::run(&cfg, None, Some(d2.path())).unwrap();
    for f in [
        "report.json",
        "announcements.csv",
        "sessions/session-000000.log",
    ] {
        let same =
            std::fs::read(d1.path().join(f)).unwrap() == std::fs::read(d2.path().join(f)).unwrap();
        o.check(same, format!("run artifact {f} byte-identical"));
    }
}

type Criterion = (&'static str, &'static str, u64, fn(&mut Outcome));

const CRITERIA: [Criterion; 11] = [
    ("AC1", "bit-transport rate", 50, ac1),
    ("AC2", "dual-channel structure", 1, ac2),
    ("AC3", "chain theorem", 30, ac3),
    ("AC4", "drop-out formulas", 60, ac4),
    ("AC5", "secret sharing", 60, ac5),
    ("AC6", "compromised-relay detection", 60, ac6),
    ("AC7", "duplex eve", 30, ac7),
    ("AC8", "bit revelation", 30, ac8),
    ("AC9", "intercept/resend baseline", 10, ac9),
    ("AC10", "GHZ scheme", 120, ac10),
    ("AC11", "determinism", 120, ac11),
];

fn main() {
    let mut failed = Vec::new();
    for (id, title, budget, f) in CRITERIA {
        let start = Instant::now();
        let mut o = Outcome::default();
        f(&mut o);
        let secs = start.elapsed().as_secs_f64();
        o.check(
            secs < budget as f64,
            format!("{secs:.1} s within {budget} s budget"),
        );
        let status = if o.passed() { "PASS" } else { "FAIL" };
        println!("{id:<5} {status}  {title}");
        for (what, ok) in &o.checks {
            println!("      {} {what}", if *ok { "ok  " } else { "FAIL" });
        }
        for n in &o.notes {
            println!("      NOTE {n}");
        }
        if !o.passed() {
            failed.push(id);
        }
    }
    let unexpected: Vec<_> = failed
        .iter()
        .filter(|id| !EXPECTED_FAILURES.contains(id))
        .collect();
    let fixed: Vec<_> = EXPECTED_FAILURES
        .iter()
        .filter(|id| !failed.contains(id))
        .collect();
    println!(
        "\nacceptance: {} of {} criteria pass; expected failures: {:?}",
        CRITERIA.len() - failed.len(),
        CRITERIA.len(),
        EXPECTED_FAILURES
    );
    if !unexpected.is_empty() || !fixed.is_empty() {
        println!("unexpected failures: {unexpected:?}; expected failures that now pass: {fixed:?}");
        std::process::exit(1);
    }
}
