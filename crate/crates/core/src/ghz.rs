//! Key distribution through an intermediary holding the third particle of
//! GHZ-type triples `(|B1,0⟩ + |B3,1⟩)/√2`.
//!
//! Alice and Bob each receive one particle per triple. The intermediary
//! later measures its particles and publishes the bits `m` together with
//! which Alice and Bob timeslots belong to the same triple. Since
//! `a ⊕ b = m`, Bob corrects his bit with `m`. Bob's particles may be
//! shuffled across timeslots so an eavesdropper cannot tell which two
//! particles to Bell-measure together.
//!
//! The intermediary's measurement commutes with everything Alice, Bob and
//! an eavesdropper do to the other particles, so it is performed first.
//! Every stored state then has at most two live qubits and an attack joins
//! at most two of them.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bb84::Bit;
use crate::error::{Error, Result};
use crate::statevector::{
    prepare_ghz_type, BellOutcome, ChshTally, PureState, CHSH_ALICE, CHSH_BOB,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GhzEve {
    #[default]
    None,
    /// Bell-measure the two particles in each physical timeslot and resend
    /// the observed Bell state.
    BellResend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shuffle {
    #[default]
    Identity,
    Uniform,
    /// Uniform over permutations with no fixed point.
    Derangement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GhzConfig {
    pub triples: usize,
    #[serde(default)]
    pub shuffle: Shuffle,
    #[serde(default)]
    pub eve: GhzEve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Holder {
    Alice(usize),
    Bob(usize),
}

#[derive(Debug, Clone)]
struct Stored {
    state: PureState,
    holders: Vec<Holder>,
}

#[derive(Debug, Clone)]
pub struct GhzSession {
    /// `shuffle[s]` is the triple whose Bob particle travels in Bob slot
    /// `s` (0-based).
    pub shuffle: Vec<usize>,
    pub published_m: Vec<Bit>,
    /// `(alice_slot, bob_slot)`, 1-based, in Alice slot order.
    pub associations: Vec<(u64, u64)>,
    /// Outcome of the attack in each physical slot, if there was one.
    pub eve_outcomes: Vec<BellOutcome>,
    /// Settings and outcomes of every Bell-check trial.
    pub chsh_trials: Vec<ChshTrial>,
    stored: Vec<Option<Stored>>,
    alice_at: Vec<usize>,
    bob_at: Vec<usize>,
    alice_bits: Vec<Option<Bit>>,
    bob_bits: Vec<Option<Bit>>,
    /// Triples consumed by the Bell check.
    sampled: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChshTrial {
    pub triple: usize,
    pub x: usize,
    pub y: usize,
    pub a: Bit,
    pub b: Bit,
}

/// S value of recorded trials.
pub fn chsh_from_trials(trials: &[ChshTrial]) -> Option<f64> {
    if trials.is_empty() {
        return None;
    }
    let mut tally = ChshTally::default();
    for t in trials {
        tally.record(t.x, t.y, t.a, t.b);
    }
    Some(tally.s_value())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhzKeyResult {
    pub alice_bits: Vec<Bit>,
    pub bob_bits: Vec<Bit>,
    pub agreement_rate: Option<f64>,
}

impl GhzKeyResult {
    pub fn parity_error_rate(&self) -> Option<f64> {
        self.agreement_rate.map(|a| 1.0 - a)
    }
}

/// Bob's key bit after parity correction.
pub fn correct_bob_bit(b: Bit, m: Bit) -> Bit {
    b ^ m
}

fn permutation<R: Rng + ?Sized>(n: usize, shuffle: Shuffle, rng: &mut R) -> Result<Vec<usize>> {
    let mut p: Vec<usize> = (0..n).collect();
    match shuffle {
        Shuffle::Identity => {}
        Shuffle::Uniform => p.shuffle(rng),
        Shuffle::Derangement => {
            if n < 2 {
                return Err(Error::InvalidParameter(
                    "a derangement needs at least two triples".into(),
                ));
            }
            loop {
                p.shuffle(rng);
                if p.iter().enumerate().all(|(i, &v)| i != v) {
                    break;
                }
            }
        }
    }
    Ok(p)
}

impl GhzSession {
    /// Prepares the triples, lets the intermediary measure, distributes the
    /// particles and applies the attack, if any.
    pub fn distribute<R: Rng + ?Sized>(config: &GhzConfig, rng: &mut R) -> Result<Self> {
        let m_count = config.triples;
        if m_count == 0 {
            return Err(Error::InvalidParameter("need at least one triple".into()));
        }
        let shuffle = permutation(m_count, config.shuffle, rng)?;
        let mut bob_slot_of = vec![0; m_count];
        for (s, &k) in shuffle.iter().enumerate() {
            bob_slot_of[k] = s;
        }

        let mut published_m = Vec::with_capacity(m_count);
        let mut stored = Vec::with_capacity(m_count);
        for (k, &bob_slot) in bob_slot_of.iter().enumerate() {
            let (m, pair) = prepare_ghz_type().measure_and_remove(2, 0.0, rng)?;
            published_m.push(m);
            stored.push(Some(Stored {
                state: pair.expect("two qubits remain"),
                holders: vec![Holder::Alice(k), Holder::Bob(bob_slot)],
            }));
        }
        let associations = (0..m_count)
            .map(|k| (k as u64 + 1, bob_slot_of[k] as u64 + 1))
            .collect();

        let mut session = GhzSession {
            shuffle,
            published_m,
            associations,
            eve_outcomes: Vec::new(),
            chsh_trials: Vec::new(),
            stored,
            alice_at: (0..m_count).collect(),
            bob_at: bob_slot_of
                .iter()
                .enumerate()
                .fold(vec![0; m_count], |mut v, (k, &s)| {
                    v[s] = k;
                    v
                }),
            alice_bits: vec![None; m_count],
            bob_bits: vec![None; m_count],
            sampled: vec![false; m_count],
        };
        if config.eve == GhzEve::BellResend {
            for s in 0..m_count {
                let outcome = session.intercept(s, rng)?;
                session.eve_outcomes.push(outcome);
            }
        }
        Ok(session)
    }

    pub fn triples(&self) -> usize {
        self.published_m.len()
    }

    fn position(&self, id: usize, who: Holder) -> usize {
        let st = self.stored[id].as_ref().expect("live state");
        st.holders
            .iter()
            .position(|&h| h == who)
            .expect("holder present")
    }

    /// Bell-measures the two particles travelling in physical slot `s` and
    /// replaces them with a fresh pair in the observed Bell state.
    fn intercept<R: Rng + ?Sized>(&mut self, s: usize, rng: &mut R) -> Result<BellOutcome> {
        let (ia, ib) = (self.alice_at[s], self.bob_at[s]);
        let (alice, bob) = (Holder::Alice(s), Holder::Bob(s));
        let (outcome, rest, holders) = if ia == ib {
            let st = self.stored[ia].take().expect("live state");
            let qa = st
                .holders
                .iter()
                .position(|&h| h == alice)
                .expect("alice qubit");
            let qb = st
                .holders
                .iter()
                .position(|&h| h == bob)
                .expect("bob qubit");
            let (o, rest) = st.state.bell_measure_and_remove(qa, qb, rng)?;
            let holders: Vec<Holder> = st
                .holders
                .into_iter()
                .filter(|&h| h != alice && h != bob)
                .collect();
            (o, rest, holders)
        } else {
            let qa = self.position(ia, alice);
            let qb = self.position(ib, bob);
            let sa = self.stored[ia].take().expect("live state");
            let sb = self.stored[ib].take().expect("live state");
            let joined = sa.state.tensor(&sb.state)?;
            let offset = sa.state.num_qubits();
            let (o, rest) = joined.bell_measure_and_remove(qa, offset + qb, rng)?;
            let holders: Vec<Holder> = sa
                .holders
                .into_iter()
                .chain(sb.holders)
                .filter(|&h| h != alice && h != bob)
                .collect();
            (o, rest, holders)
        };
        if let Some(state) = rest {
            let id = self.stored.len();
            for &h in &holders {
                match h {
                    Holder::Alice(t) => self.alice_at[t] = id,
                    Holder::Bob(t) => self.bob_at[t] = id,
                }
            }
            self.stored.push(Some(Stored { state, holders }));
        }
        let id = self.stored.len();
        self.stored.push(Some(Stored {
            state: PureState::bell(outcome),
            holders: vec![alice, bob],
        }));
        self.alice_at[s] = id;
        self.bob_at[s] = id;
        Ok(outcome)
    }

    fn measure<R: Rng + ?Sized>(&mut self, who: Holder, angle: f64, rng: &mut R) -> Result<Bit> {
        let id = match who {
            Holder::Alice(s) => self.alice_at[s],
            Holder::Bob(s) => self.bob_at[s],
        };
        let q = self.position(id, who);
        let st = self.stored[id].as_mut().expect("live state");
        let (bit, post) = st.state.measure_qubit(q, angle, rng)?;
        st.state = post;
        Ok(bit)
    }

    fn flip(&mut self, who: Holder) -> Result<()> {
        let id = match who {
            Holder::Alice(s) => self.alice_at[s],
            Holder::Bob(s) => self.bob_at[s],
        };
        let q = self.position(id, who);
        self.stored[id]
            .as_mut()
            .expect("live state")
            .state
            .apply_x(q)
    }

    /// Runs a CHSH test on a random `sample_fraction` of the associated
    /// pairs, which are then excluded from the key. For pairs whose
    /// intermediary bit is 1, Bob first flips his particle so the expected
    /// state is `B1` either way. Returns `None` when nothing was sampled.
    pub fn bell_check<R: Rng + ?Sized>(
        &mut self,
        sample_fraction: f64,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        if !(0.0..=1.0).contains(&sample_fraction) {
            return Err(Error::InvalidParameter(format!(
                "sample fraction {sample_fraction} outside [0, 1]"
            )));
        }
        if self.alice_bits.iter().any(Option::is_some) {
            return Err(Error::InvalidParameter(
                "Bell check must precede the key measurements".into(),
            ));
        }
        let open: Vec<usize> = (0..self.triples()).filter(|&k| !self.sampled[k]).collect();
        let k = ((open.len() as f64) * sample_fraction).round() as usize;
        if k == 0 {
            return Ok(None);
        }
        let mut picks: Vec<usize> = index::sample(rng, open.len(), k)
            .iter()
            .map(|i| open[i])
            .collect();
        picks.sort_unstable();
        for triple in picks {
            let (a_slot, b_slot) = self.associations[triple];
            let (alice, bob) = (
                Holder::Alice(a_slot as usize - 1),
                Holder::Bob(b_slot as usize - 1),
            );
            if self.published_m[triple].is_one() {
                self.flip(bob)?;
            }
            let (x, y) = (
                usize::from(rng.random_bool(0.5)),
                usize::from(rng.random_bool(0.5)),
            );
            let a = self.measure(alice, CHSH_ALICE[x], rng)?;
            let b = self.measure(bob, CHSH_BOB[y], rng)?;
            self.chsh_trials.push(ChshTrial { triple, x, y, a, b });
            self.sampled[triple] = true;
        }
        Ok(chsh_from_trials(
            &self.chsh_trials[self.chsh_trials.len() - k..],
        ))
    }

    /// Alice and Bob measure every particle not used by the Bell check in
    /// the computational basis.
    pub fn measure_endpoints<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        for triple in 0..self.triples() {
            if self.sampled[triple] || self.alice_bits[triple].is_some() {
                continue;
            }
            let (a_slot, b_slot) = self.associations[triple];
            let (ai, bi) = (a_slot as usize - 1, b_slot as usize - 1);
            self.alice_bits[ai] = Some(self.measure(Holder::Alice(ai), 0.0, rng)?);
            self.bob_bits[bi] = Some(self.measure(Holder::Bob(bi), 0.0, rng)?);
        }
        Ok(())
    }

    /// Raw `(a, b, m)` for each triple still in the key, by triple index.
    pub fn outcomes(&self) -> Vec<(usize, Bit, Bit, Bit)> {
        self.associations
            .iter()
            .enumerate()
            .filter_map(|(k, &(a, b))| {
                let a_bit = self.alice_bits[a as usize - 1]?;
                let b_bit = self.bob_bits[b as usize - 1]?;
                Some((k, a_bit, b_bit, self.published_m[k]))
            })
            .collect()
    }

    /// Number of live qubits in the largest stored state.
    pub fn max_stored_qubits(&self) -> usize {
        self.stored
            .iter()
            .flatten()
            .map(|s| s.state.num_qubits())
            .max()
            .unwrap_or(0)
    }

    pub fn derive_key(&self) -> Result<GhzKeyResult> {
        let outcomes = self.outcomes();
        if outcomes.is_empty() && self.sampled.iter().any(|s| !s) {
            return Err(Error::InvalidParameter(
                "endpoints have not measured yet".into(),
            ));
        }
        let alice_bits: Vec<Bit> = outcomes.iter().map(|&(_, a, _, _)| a).collect();
        let bob_bits: Vec<Bit> = outcomes
            .iter()
            .map(|&(_, _, b, m)| correct_bob_bit(b, m))
            .collect();
        let agree = alice_bits
            .iter()
            .zip(&bob_bits)
            .filter(|(a, b)| a == b)
            .count();
        Ok(GhzKeyResult {
            agreement_rate: (!alice_bits.is_empty())
                .then(|| agree as f64 / alice_bits.len() as f64),
            alice_bits,
            bob_bits,
        })
    }
}

/// Distribution followed by the endpoint measurements.
pub fn run_ghz_session<R: Rng + ?Sized>(config: &GhzConfig, rng: &mut R) -> Result<GhzSession> {
    let mut s = GhzSession::distribute(config, rng)?;
    s.measure_endpoints(rng)?;
    Ok(s)
}
