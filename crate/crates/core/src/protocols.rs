//! Classical post-processing over direct-link logs: standard sifting,
//! bit revelation, the duplex parity protocol and per-slot randomization
//! between the first two.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bb84::{Basis, Bit};
use crate::error::{Error, Result};
use crate::network::{Observation, Participant, SessionData, SlotRecord};
use crate::transport::{KeyShare, ProtocolVariant, Provenance};

pub const DEFAULT_SAMPLE_FRACTION: f64 = 0.1;

/// One party's view of a post-processed key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftedKey {
    /// Key slots and bits. After bit revelation, `t` is the renumbered
    /// index (1-based) and `origin` holds the raw slot.
    pub slots: Vec<(u64, Bit)>,
    pub origin: Vec<u64>,
    /// Disagreement rate on the compared sample; `None` if nothing was
    /// compared.
    pub qber_estimate: Option<f64>,
    /// Raw slots published and discarded for the comparison.
    pub sample_slots: Vec<u64>,
    /// Slots that passed the keep rule, before sampling.
    pub kept: u64,
    /// Slots where both logs had a record.
    pub overlap: u64,
}

impl SiftedKey {
    pub fn bits(&self) -> Vec<Bit> {
        self.slots.iter().map(|&(_, b)| b).collect()
    }

    pub fn kept_fraction(&self) -> Option<f64> {
        (self.overlap > 0).then(|| self.kept as f64 / self.overlap as f64)
    }
}

/// Joins two logs on slot number.
fn join(alice: &[SlotRecord], bob: &[SlotRecord]) -> Vec<(SlotRecord, SlotRecord)> {
    let bob: BTreeMap<u64, SlotRecord> = bob.iter().map(|r| (r.t, *r)).collect();
    let mut joined: Vec<_> = alice
        .iter()
        .filter_map(|a| bob.get(&a.t).map(|b| (*a, *b)))
        .collect();
    joined.sort_by_key(|(a, _)| a.t);
    joined
}

fn check_fraction(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidParameter(format!(
            "sample fraction {f} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Kept candidates: (raw slot, alice bit, bob bit).
fn finish<R: Rng + ?Sized>(
    candidates: Vec<(u64, Bit, Bit)>,
    overlap: u64,
    sample_fraction: f64,
    renumber: bool,
    rng: &mut R,
) -> (SiftedKey, SiftedKey) {
    let kept = candidates.len();
    let k = ((kept as f64) * sample_fraction).round() as usize;
    let mut in_sample = vec![false; kept];
    for i in index::sample(rng, kept, k.min(kept)).iter() {
        in_sample[i] = true;
    }
    let mut errors = 0u64;
    let mut sample_slots = Vec::with_capacity(k);
    let (mut a_slots, mut b_slots, mut origin) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &(t, a, b)) in candidates.iter().enumerate() {
        if in_sample[i] {
            sample_slots.push(t);
            errors += u64::from(a != b);
        } else {
            let label = if renumber { i as u64 + 1 } else { t };
            a_slots.push((label, a));
            b_slots.push((label, b));
            origin.push(t);
        }
    }
    let qber = (k > 0).then(|| errors as f64 / k as f64);
    let make = |slots| SiftedKey {
        slots,
        origin: origin.clone(),
        qber_estimate: qber,
        sample_slots: sample_slots.clone(),
        kept: kept as u64,
        overlap,
    };
    (make(a_slots), make(b_slots))
}

/// Standard BB84 sifting: keep slots where the bases match, then publish a
/// random `sample_fraction` of them to estimate the error rate.
pub fn sift_bb84<R: Rng + ?Sized>(
    alice_log: &[SlotRecord],
    bob_log: &[SlotRecord],
    sample_fraction: f64,
    rng: &mut R,
) -> Result<(SiftedKey, SiftedKey)> {
    check_fraction(sample_fraction)?;
    let joined = join(alice_log, bob_log);
    let candidates = joined
        .iter()
        .filter(|(a, b)| a.c == b.c)
        .map(|(a, b)| (a.t, a.b, b.b))
        .collect();
    Ok(finish(
        candidates,
        joined.len() as u64,
        sample_fraction,
        false,
        rng,
    ))
}

/// Bit revelation: Alice publishes `b_A`; slots with `b_A = b_B` are
/// discarded. On the rest Bob knows the bases differed, so Alice keeps
/// `c_A` and Bob keeps the complement of `c_B`. Survivors are renumbered
/// from 1 and the sample compares those basis bits.
pub fn bit_revelation<R: Rng + ?Sized>(
    alice_log: &[SlotRecord],
    bob_log: &[SlotRecord],
    sample_fraction: f64,
    rng: &mut R,
) -> Result<(SiftedKey, SiftedKey)> {
    check_fraction(sample_fraction)?;
    let joined = join(alice_log, bob_log);
    let candidates = joined
        .iter()
        .filter(|(a, b)| a.b != b.b)
        .map(|(a, b)| (a.t, a.c.as_bit(), !b.c.as_bit()))
        .collect();
    Ok(finish(
        candidates,
        joined.len() as u64,
        sample_fraction,
        true,
        rng,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Odd slots: Alice sends, Bob measures.
    AliceToBob,
    /// Even slots: Bob sends, Alice measures.
    BobToAlice,
}

/// One duplex slot. `sender`/`receiver` are (c, b) of whoever sent and
/// measured in that direction, so even slots hold `(c̃_B, b̃_B)` and
/// `(c̃_A, b̃_A)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplexSlot {
    pub t: u64,
    pub sender: Observation,
    pub receiver: Observation,
}

impl DuplexSlot {
    pub fn direction(&self) -> Direction {
        if self.t % 2 == 1 {
            Direction::AliceToBob
        } else {
            Direction::BobToAlice
        }
    }

    fn alice(&self) -> Observation {
        match self.direction() {
            Direction::AliceToBob => self.sender,
            Direction::BobToAlice => self.receiver,
        }
    }

    fn bob(&self) -> Observation {
        match self.direction() {
            Direction::AliceToBob => self.receiver,
            Direction::BobToAlice => self.sender,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DuplexLogs {
    pub slots: Vec<DuplexSlot>,
}

impl DuplexLogs {
    /// Interleaves two direct-link sessions: slot `t` of `a_to_b` becomes
    /// `2t − 1`, slot `t` of `b_to_a` (whose "Alice" is physically Bob)
    /// becomes `2t`. Slots lost in transit are left out. The same call
    /// covers two entirely separate transmissions.
    pub fn interleave(a_to_b: &SessionData, b_to_a: &SessionData) -> Result<Self> {
        for s in [a_to_b, b_to_a] {
            if s.relay_count() != 0 {
                return Err(Error::InvalidParameter(format!(
                    "duplex needs direct links, session {} has {} relays",
                    s.session_id,
                    s.relay_count()
                )));
            }
        }
        let mut slots = Vec::new();
        let max = a_to_b.slots.max(b_to_a.slots);
        for t in 1..=max {
            for (s, label) in [(a_to_b, 2 * t - 1), (b_to_a, 2 * t)] {
                if t > s.slots {
                    continue;
                }
                if let (Some(tx), Some(rx)) = (
                    s.observation(Participant::Alice, t),
                    s.observation(Participant::Bob, t),
                ) {
                    slots.push(DuplexSlot {
                        t: label,
                        sender: tx,
                        receiver: rx,
                    });
                }
            }
        }
        Ok(Self { slots })
    }

    fn get(&self, t: u64) -> Option<&DuplexSlot> {
        self.slots
            .binary_search_by_key(&t, |s| s.t)
            .ok()
            .map(|i| &self.slots[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DuplexSets {
    /// Mismatched-basis slots, discarded.
    pub set1: Vec<u64>,
    /// Remaining odd slots.
    pub set2: Vec<u64>,
    /// Remaining even slots.
    pub set3: Vec<u64>,
}

pub fn duplex_filter(duplex: &DuplexLogs) -> DuplexSets {
    let mut sets = DuplexSets::default();
    for s in &duplex.slots {
        if s.sender.basis != s.receiver.basis {
            sets.set1.push(s.t);
        } else if s.direction() == Direction::AliceToBob {
            sets.set2.push(s.t);
        } else {
            sets.set3.push(s.t);
        }
    }
    sets
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplexPairing {
    /// Bob pairs slots where his two bits are equal; only indices are sent.
    MatchEqual,
    /// Bob pairs set 2 and set 3 in order and sends a flip bit.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityTuple {
    pub t: u64,
    pub t_tilde: u64,
    /// 1 means Alice flips her set-3 bit before comparing.
    pub f: Bit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplexOutcome {
    pub tuples: Vec<ParityTuple>,
    pub alice_failures: u64,
    pub unpaired: u64,
    pub alice: KeyShare,
    pub bob: KeyShare,
    /// How often the published flip bit equals the key bit, over surviving
    /// pairs. Near 1/2 means the flip bit says nothing about the key.
    pub flip_key_agreement: Option<f64>,
}

impl DuplexOutcome {
    pub fn failure_rate(&self) -> Option<f64> {
        (!self.tuples.is_empty()).then(|| self.alice_failures as f64 / self.tuples.len() as f64)
    }
}

/// Bob pairs filtered odd and even slots and Alice checks each pair:
/// `b_A(t)` must equal `b̃_A(t̃) ⊕ f`. Pairs that pass yield the odd-slot
/// bit `b` as the key bit, whatever `b̃` was.
pub fn duplex_parity(duplex: &DuplexLogs, pairing: DuplexPairing) -> Result<DuplexOutcome> {
    let sets = duplex_filter(duplex);
    let bob_bit = |t: u64| duplex.get(t).expect("slot from filter").bob().bit;
    let alice_bit = |t: u64| duplex.get(t).expect("slot from filter").alice().bit;

    let mut tuples = Vec::new();
    let unpaired = match pairing {
        DuplexPairing::Sequential => {
            for (&t, &tt) in sets.set2.iter().zip(&sets.set3) {
                tuples.push(ParityTuple {
                    t,
                    t_tilde: tt,
                    f: bob_bit(t) ^ bob_bit(tt),
                });
            }
            (sets.set2.len() + sets.set3.len() - 2 * tuples.len()) as u64
        }
        DuplexPairing::MatchEqual => {
            let mut queues: [VecDeque<u64>; 2] = Default::default();
            for &tt in &sets.set3 {
                queues[usize::from(bob_bit(tt).is_one())].push_back(tt);
            }
            let mut leftover = 0u64;
            for &t in &sets.set2 {
                match queues[usize::from(bob_bit(t).is_one())].pop_front() {
                    Some(tt) => tuples.push(ParityTuple {
                        t,
                        t_tilde: tt,
                        f: Bit::ZERO,
                    }),
                    None => leftover += 1,
                }
            }
            leftover + queues.iter().map(|q| q.len() as u64).sum::<u64>()
        }
    };

    let mut failures = 0;
    let (mut a_key, mut b_key) = (Vec::new(), Vec::new());
    let mut flip_matches = 0u64;
    for tp in &tuples {
        if alice_bit(tp.t) != alice_bit(tp.t_tilde) ^ tp.f {
            failures += 1;
            continue;
        }
        a_key.push(alice_bit(tp.t));
        b_key.push(bob_bit(tp.t));
        flip_matches += u64::from(tp.f == bob_bit(tp.t));
    }
    let prov = Provenance {
        sessions: Vec::new(),
        variant: ProtocolVariant::Duplex,
        channel: match pairing {
            DuplexPairing::MatchEqual => "match_equal".into(),
            DuplexPairing::Sequential => "sequential".into(),
        },
    };
    let flip_key_agreement = (!b_key.is_empty()).then(|| flip_matches as f64 / b_key.len() as f64);
    Ok(DuplexOutcome {
        tuples,
        alice_failures: failures,
        unpaired,
        alice: KeyShare::new(a_key, prov.clone()),
        bob: KeyShare::new(b_key, prov),
        flip_key_agreement,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostProcessing {
    Standard,
    BitRevelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedOutput {
    pub assignment: Vec<(u64, PostProcessing)>,
    pub standard: (SiftedKey, SiftedKey),
    pub revelation: (SiftedKey, SiftedKey),
    /// Standard key followed by the bit-revelation key.
    pub alice: KeyShare,
    pub bob: KeyShare,
}

impl RandomizedOutput {
    /// Combined kept slots over all joined slots.
    pub fn combined_rate(&self) -> Option<f64> {
        let total = self.standard.0.overlap + self.revelation.0.overlap;
        (total > 0).then(|| (self.standard.0.kept + self.revelation.0.kept) as f64 / total as f64)
    }
}

/// Assigns each slot to standard sifting with probability `weights[0]` or
/// to bit revelation with `weights[1]`, then runs each stream. A weight of
/// exactly 1 assigns everything without consuming randomness.
pub fn randomize_postprocessing<R: Rng + ?Sized>(
    alice_log: &[SlotRecord],
    bob_log: &[SlotRecord],
    weights: [f64; 2],
    sample_fraction: f64,
    rng: &mut R,
) -> Result<RandomizedOutput> {
    if weights.iter().any(|w| !(0.0..=1.0).contains(w))
        || (weights[0] + weights[1] - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidParameter(format!(
            "weights {weights:?} must be non-negative and sum to 1"
        )));
    }
    let mut assignment = Vec::with_capacity(alice_log.len());
    let (mut a_std, mut a_rev) = (Vec::new(), Vec::new());
    for r in alice_log {
        let choice = if weights[0] >= 1.0 {
            PostProcessing::Standard
        } else if weights[1] >= 1.0 {
            PostProcessing::BitRevelation
        } else if rng.random_bool(weights[0]) {
            PostProcessing::Standard
        } else {
            PostProcessing::BitRevelation
        };
        assignment.push((r.t, choice));
        match choice {
            PostProcessing::Standard => a_std.push(*r),
            PostProcessing::BitRevelation => a_rev.push(*r),
        }
    }
    let standard = sift_bb84(&a_std, bob_log, sample_fraction, rng)?;
    let revelation = bit_revelation(&a_rev, bob_log, sample_fraction, rng)?;
    let prov = Provenance {
        sessions: Vec::new(),
        variant: ProtocolVariant::Sifted,
        channel: "randomized".into(),
    };
    let cat = |x: &SiftedKey, y: &SiftedKey| {
        let mut bits = x.bits();
        bits.extend(y.bits());
        KeyShare::new(bits, prov.clone())
    };
    Ok(RandomizedOutput {
        alice: cat(&standard.0, &revelation.0),
        bob: cat(&standard.1, &revelation.1),
        assignment,
        standard,
        revelation,
    })
}

/// Builds a duplex log from explicit per-slot values. `rows` lists
/// `(t, sender_basis, sender_bit, receiver_basis, receiver_bit)`.
pub fn duplex_from_rows(rows: &[(u64, Basis, u8, Basis, u8)]) -> Result<DuplexLogs> {
    let bit =
        |v: u8| Bit::from_u8(v).ok_or_else(|| Error::InvalidParameter(format!("bit value {v}")));
    let mut slots = rows
        .iter()
        .map(|&(t, cs, bs, cr, br)| {
            Ok(DuplexSlot {
                t,
                sender: Observation {
                    basis: cs,
                    bit: bit(bs)?,
                },
                receiver: Observation {
                    basis: cr,
                    bit: bit(br)?,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    slots.sort_by_key(|s| s.t);
    Ok(DuplexLogs { slots })
}

/// The 18-slot worked duplex example. Receiver bits in mismatched slots are
/// unrecorded and given as 0.
pub fn example_duplex_table() -> DuplexLogs {
    duplex_from_rows(&[
        (1, Basis::X, 1, Basis::Y, 0),
        (3, Basis::X, 1, Basis::X, 1),
        (5, Basis::Y, 0, Basis::Y, 0),
        (7, Basis::X, 0, Basis::Y, 0),
        (9, Basis::Y, 1, Basis::Y, 1),
        (11, Basis::X, 1, Basis::X, 1),
        (13, Basis::Y, 0, Basis::X, 0),
        (15, Basis::Y, 1, Basis::Y, 1),
        (17, Basis::X, 0, Basis::Y, 0),
        (2, Basis::X, 0, Basis::X, 0),
        (4, Basis::X, 0, Basis::Y, 0),
        (6, Basis::Y, 1, Basis::Y, 1),
        (8, Basis::X, 1, Basis::X, 1),
        (10, Basis::X, 1, Basis::Y, 0),
        (12, Basis::Y, 0, Basis::X, 0),
        (14, Basis::Y, 0, Basis::Y, 0),
        (16, Basis::Y, 1, Basis::Y, 1),
        (18, Basis::X, 0, Basis::X, 0),
    ])
    .expect("example table is well formed")
}
