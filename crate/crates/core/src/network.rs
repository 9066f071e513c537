//! Timeslot engine for a linear channel A -> R1 -> ... -> Rn -> B.
//!
//! Every slot, Alice prepares a random BB84 state which is handed along the
//! chain. Link `j` joins position `j` to position `j + 1` (Alice is position
//! 0, Bob is `n + 1`). Each relay measures in a random basis and forwards the
//! collapsed state, unless it drops out (passes the qubit untouched). An
//! intercept/resend eavesdropper may sit on any link, and any link may erase
//! the qubit, which removes the slot for everybody downstream.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bb84::{self, Basis, Bit, Qubit};
use crate::error::{Error, Result};
use crate::rng::{SeedSource, SimRng};

/// Relay counts are capped so per-slot relay sets fit in a `u32` bitmap.
pub const MAX_RELAYS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelayMode {
    /// Trusted intercept/resend relay: measures every slot.
    Ir,
    /// Passes the qubit through unmeasured with probability `p` per slot and
    /// announces that it did.
    Dropout { p: f64 },
    /// Announces drop-outs with probability `p` but measures every slot
    /// anyway. Its measurements are copied to the eavesdropper's log.
    CompromisedAlwaysOn { p: f64 },
}

impl RelayMode {
    pub fn dropout_probability(&self) -> Option<f64> {
        match *self {
            RelayMode::Ir => None,
            RelayMode::Dropout { p } | RelayMode::CompromisedAlwaysOn { p } => Some(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Retransmission {
    #[default]
    Immediate,
    /// Relays hold retransmissions until `k` slots have accumulated. This
    /// only changes when the onward pulse leaves, not what it carries.
    Batch { k: u64 },
    /// Each relay fills a fraction `r` of its onward slots with its own fresh
    /// states. Those slots carry nothing from upstream and are announced.
    Padded { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EveKind {
    None,
    InterceptResend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EveStrategy {
    pub kind: EveKind,
    pub link: usize,
}

impl EveStrategy {
    pub fn intercept_resend(link: usize) -> Self {
        Self {
            kind: EveKind::InterceptResend,
            link,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub relay_modes: Vec<RelayMode>,
    /// Erasure probability per link, `relay_count + 1` entries.
    pub link_erasure: Vec<f64>,
    #[serde(default)]
    pub eve: Vec<EveStrategy>,
    #[serde(default)]
    pub retransmission: Retransmission,
    /// Test hook: every participant uses this basis instead of a random one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_basis: Option<Basis>,
}

impl ChannelSpec {
    /// `n` IR relays, lossless links, no eavesdropper.
    pub fn ideal(n: usize) -> Self {
        Self::with_modes(vec![RelayMode::Ir; n])
    }

    pub fn with_modes(relay_modes: Vec<RelayMode>) -> Self {
        let links = relay_modes.len() + 1;
        Self {
            relay_modes,
            link_erasure: vec![0.0; links],
            eve: Vec::new(),
            retransmission: Retransmission::Immediate,
            fixed_basis: None,
        }
    }

    pub fn dropout(n: usize, p: f64) -> Self {
        Self::with_modes(vec![RelayMode::Dropout { p }; n])
    }

    pub fn with_eve(mut self, link: usize) -> Self {
        self.eve.push(EveStrategy::intercept_resend(link));
        self
    }

    pub fn relay_count(&self) -> usize {
        self.relay_modes.len()
    }

    pub fn link_count(&self) -> usize {
        self.relay_modes.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.relay_count();
        if n > MAX_RELAYS {
            return Err(Error::InvalidSpec(format!(
                "{n} relays exceeds the cap of {MAX_RELAYS}"
            )));
        }
        if self.link_erasure.len() != n + 1 {
            return Err(Error::InvalidSpec(format!(
                "link_erasure has {} entries, expected {}",
                self.link_erasure.len(),
                n + 1
            )));
        }
        for (j, &e) in self.link_erasure.iter().enumerate() {
            check_probability(e, &format!("link_erasure[{j}]"))?;
        }
        for (i, mode) in self.relay_modes.iter().enumerate() {
            if let Some(p) = mode.dropout_probability() {
                check_probability(p, &format!("relay_modes[{i}].p"))?;
            }
        }
        let mut seen = vec![false; n + 1];
        for (i, e) in self.eve.iter().enumerate() {
            if e.link > n {
                return Err(Error::InvalidSpec(format!(
                    "eve[{i}].link {} out of range 0..={n}",
                    e.link
                )));
            }
            if e.kind == EveKind::InterceptResend {
                if seen[e.link] {
                    return Err(Error::InvalidSpec(format!(
                        "two eavesdroppers on link {}",
                        e.link
                    )));
                }
                seen[e.link] = true;
            }
        }
        match self.retransmission {
            Retransmission::Immediate => {}
            Retransmission::Batch { k } => {
                if k == 0 {
                    return Err(Error::InvalidSpec("batch size k must be >= 1".into()));
                }
            }
            Retransmission::Padded { r } => {
                if !(0.0..1.0).contains(&r) {
                    return Err(Error::InvalidSpec(format!(
                        "padding ratio {r} outside [0,1)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Slot in which a relay's onward pulse for slot `t` leaves.
    pub fn emission_slot(&self, t: u64) -> u64 {
        match self.retransmission {
            Retransmission::Batch { k } => t.div_ceil(k) * k,
            _ => t,
        }
    }

    fn eve_on(&self, link: usize) -> bool {
        self.eve
            .iter()
            .any(|e| e.link == link && e.kind == EveKind::InterceptResend)
    }
}

fn check_probability(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{what} = {p} outside [0,1]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Participant {
    Alice,
    /// 1-based relay index.
    Relay(usize),
    Bob,
}

impl Participant {
    pub fn position(self, relay_count: usize) -> usize {
        match self {
            Participant::Alice => 0,
            Participant::Relay(j) => j,
            Participant::Bob => relay_count + 1,
        }
    }

    pub fn at(position: usize, relay_count: usize) -> Participant {
        match position {
            0 => Participant::Alice,
            p if p == relay_count + 1 => Participant::Bob,
            p => Participant::Relay(p),
        }
    }
}

impl fmt::Display for Participant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Participant::Alice => write!(f, "A"),
            Participant::Relay(j) => write!(f, "R{j}"),
            Participant::Bob => write!(f, "B"),
        }
    }
}

impl FromStr for Participant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "A" => Ok(Participant::Alice),
            "B" => Ok(Participant::Bob),
            _ => s
                .strip_prefix('R')
                .and_then(|j| j.parse().ok())
                .filter(|&j: &usize| j >= 1)
                .map(Participant::Relay)
                .ok_or_else(|| format!("unknown participant `{s}`")),
        }
    }
}

/// Where an eavesdropper's records come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EveTap {
    /// Intercept/resend on link `j`.
    Link(usize),
    /// Shadow copy of a compromised relay's measurements.
    Relay(usize),
}

impl fmt::Display for EveTap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EveTap::Link(j) => write!(f, "E{j}"),
            EveTap::Relay(j) => write!(f, "C{j}"),
        }
    }
}

impl FromStr for EveTap {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |rest: &str| rest.parse::<usize>().ok();
        if let Some(j) = s.strip_prefix('E').and_then(parse) {
            Ok(EveTap::Link(j))
        } else if let Some(j) = s.strip_prefix('C').and_then(parse) {
            Ok(EveTap::Relay(j))
        } else {
            Err(format!("unknown eavesdropper tap `{s}`"))
        }
    }
}

/// Basis and bit one participant recorded in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub basis: Basis,
    pub bit: Bit,
}

/// The `(t, c, b)` tuple a participant records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: u64,
    pub c: Basis,
    pub b: Bit,
}

impl SlotRecord {
    pub fn new(t: u64, c: Basis, b: Bit) -> Self {
        Self { t, c, b }
    }
}

/// Everything recorded during one run of a channel.
///
/// Logs are stored densely by slot (index `t - 1`); slots are numbered
/// from 1. A relay that drops out, a participant downstream of an erasure, and
/// anyone upstream of a padding relay has no record for that slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionData {
    pub spec: ChannelSpec,
    pub slots: u64,
    pub session_id: u32,
    pub(crate) records: Vec<Vec<Option<Observation>>>,
    pub(crate) eve: BTreeMap<EveTap, Vec<Option<Observation>>>,
    /// Announced drop-outs per slot, bit `j - 1` for relay `j`.
    pub(crate) dropout: Vec<u32>,
    /// Relay that padded the slot, if any.
    pub(crate) padding_owner: Vec<Option<u8>>,
    /// Link on which the slot's qubit was lost, if any.
    pub(crate) lost_on: Vec<Option<u8>>,
}

impl SessionData {
    pub(crate) fn empty(spec: ChannelSpec, slots: u64, session_id: u32) -> Self {
        let n = spec.relay_count();
        let len = slots as usize;
        let mut eve = BTreeMap::new();
        for e in spec
            .eve
            .iter()
            .filter(|e| e.kind == EveKind::InterceptResend)
        {
            eve.insert(EveTap::Link(e.link), vec![None; len]);
        }
        for (i, m) in spec.relay_modes.iter().enumerate() {
            if matches!(m, RelayMode::CompromisedAlwaysOn { .. }) {
                eve.insert(EveTap::Relay(i + 1), vec![None; len]);
            }
        }
        Self {
            spec,
            slots,
            session_id,
            records: vec![vec![None; len]; n + 2],
            eve,
            dropout: vec![0; len],
            padding_owner: vec![None; len],
            lost_on: vec![None; len],
        }
    }

    pub fn with_id(mut self, session_id: u32) -> Self {
        self.session_id = session_id;
        self
    }

    pub fn relay_count(&self) -> usize {
        self.spec.relay_count()
    }

    pub fn participants(&self) -> impl Iterator<Item = Participant> + '_ {
        let n = self.relay_count();
        (0..n + 2).map(move |p| Participant::at(p, n))
    }

    fn idx(&self, t: u64) -> Option<usize> {
        (1..=self.slots).contains(&t).then(|| (t - 1) as usize)
    }

    pub fn observation(&self, who: Participant, t: u64) -> Option<Observation> {
        let i = self.idx(t)?;
        self.records
            .get(who.position(self.relay_count()))?
            .get(i)
            .copied()
            .flatten()
    }

    /// Same as [`observation`](Self::observation) but by chain position.
    pub(crate) fn observation_at(&self, position: usize, t: u64) -> Option<Observation> {
        self.records[position][(t - 1) as usize]
    }

    pub fn record(&self, who: Participant, t: u64) -> Option<SlotRecord> {
        self.observation(who, t)
            .map(|o| SlotRecord::new(t, o.basis, o.bit))
    }

    /// One participant's ordered log.
    pub fn log(&self, who: Participant) -> Vec<SlotRecord> {
        let pos = who.position(self.relay_count());
        collect_log(&self.records[pos])
    }

    pub fn eve_taps(&self) -> impl Iterator<Item = EveTap> + '_ {
        self.eve.keys().copied()
    }

    pub fn eve_log(&self, tap: EveTap) -> Vec<SlotRecord> {
        self.eve
            .get(&tap)
            .map(|l| collect_log(l))
            .unwrap_or_default()
    }

    pub fn eve_observation(&self, tap: EveTap, t: u64) -> Option<Observation> {
        let i = self.idx(t)?;
        self.eve.get(&tap)?[i]
    }

    /// Whether relay `j` (1-based) announced a drop-out in slot `t`.
    pub fn dropped(&self, relay: usize, t: u64) -> bool {
        self.idx(t)
            .is_some_and(|i| self.dropout[i] & (1 << (relay - 1)) != 0)
    }

    /// Bitmap of announced drop-outs in slot `t` (bit `j - 1` for relay `j`).
    pub fn dropout_mask(&self, t: u64) -> u32 {
        self.idx(t).map_or(0, |i| self.dropout[i])
    }

    pub fn padding_owner(&self, t: u64) -> Option<usize> {
        self.idx(t)
            .and_then(|i| self.padding_owner[i])
            .map(usize::from)
    }

    pub fn padding_slots(&self, relay: usize) -> Vec<u64> {
        self.slot_numbers()
            .filter(|&t| self.padding_owner(t) == Some(relay))
            .collect()
    }

    pub fn lost_on_link(&self, t: u64) -> Option<usize> {
        self.idx(t).and_then(|i| self.lost_on[i]).map(usize::from)
    }

    pub fn erased(&self, t: u64) -> bool {
        self.lost_on_link(t).is_some()
    }

    pub fn erased_slots(&self) -> Vec<u64> {
        self.slot_numbers().filter(|&t| self.erased(t)).collect()
    }

    pub fn slot_numbers(&self) -> impl Iterator<Item = u64> {
        1..=self.slots
    }

    /// Chain positions that took part in slot `t`: Alice, every relay that
    /// did not announce a drop-out, and Bob.
    pub fn active_positions(&self, t: u64) -> Vec<usize> {
        let n = self.relay_count();
        let mask = self.dropout_mask(t);
        let mut v = Vec::with_capacity(n + 2);
        v.push(0);
        v.extend((1..=n).filter(|j| mask & (1 << (j - 1)) == 0));
        v.push(n + 1);
        v
    }
}

fn collect_log(slots: &[Option<Observation>]) -> Vec<SlotRecord> {
    slots
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.map(|o| SlotRecord::new(i as u64 + 1, o.basis, o.bit)))
        .collect()
}

/// Per-participant and per-link random streams for one session.
struct Streams {
    participants: Vec<SimRng>,
    eve: Vec<SimRng>,
    erasure: Vec<SimRng>,
    dropout: Vec<SimRng>,
    padding: Vec<SimRng>,
}

impl Streams {
    fn new(seed: u64, n: usize) -> Self {
        let src = SeedSource::new(seed).child("network");
        let named = |prefix: &str, count: usize| -> Vec<SimRng> {
            (0..count)
                .map(|i| src.stream(&format!("{prefix}/{i}")))
                .collect()
        };
        Self {
            participants: named("participant", n + 2),
            eve: named("eve", n + 1),
            erasure: named("erasure", n + 1),
            dropout: named("dropout", n + 1),
            padding: named("padding", n + 1),
        }
    }
}

/// Runs `slots` timeslots over the channel. Deterministic in
/// `(spec, slots, seed)`.
pub fn run_session(spec: &ChannelSpec, slots: u64, seed: u64) -> Result<SessionData> {
    spec.validate()?;
    if slots == 0 {
        return Err(Error::InvalidParameter(
            "session needs at least one timeslot".into(),
        ));
    }
    let n = spec.relay_count();
    let mut data = SessionData::empty(spec.clone(), slots, 0);
    let mut rng = Streams::new(seed, n);
    let pad_ratio = match spec.retransmission {
        Retransmission::Padded { r } => r,
        _ => 0.0,
    };

    for i in 0..slots as usize {
        let choose_basis = |r: &mut SimRng| spec.fixed_basis.unwrap_or_else(|| Basis::random(r));

        // Most downstream relay claiming the slot for padding owns it.
        let mut owner = None;
        if pad_ratio > 0.0 {
            for j in (1..=n).rev() {
                if rng.padding[j].random_bool(pad_ratio) {
                    owner = Some(j);
                    break;
                }
            }
        }

        let mut mask = 0u32;
        for (idx, mode) in spec.relay_modes.iter().enumerate() {
            if let Some(p) = mode.dropout_probability() {
                if rng.dropout[idx + 1].random_bool(p) {
                    mask |= 1 << idx;
                }
            }
        }
        if let Some(j) = owner {
            mask &= !(1 << (j - 1));
            data.padding_owner[i] = Some(j as u8);
        }
        data.dropout[i] = mask;

        let start = owner.unwrap_or(0);
        let mut q: Qubit = {
            let r = &mut rng.participants[start];
            let basis = choose_basis(r);
            bb84::prepare(basis, Bit::random(r))
        };
        data.records[start][i] = Some(Observation {
            basis: q.basis,
            bit: q.bit,
        });

        for link in start..=n {
            if spec.eve_on(link) {
                let r = &mut rng.eve[link];
                let basis = choose_basis(r);
                let (bit, post) = bb84::measure(q, basis, r);
                data.eve.get_mut(&EveTap::Link(link)).expect("eve log")[i] =
                    Some(Observation { basis, bit });
                q = post;
            }
            let e = spec.link_erasure[link];
            if e > 0.0 && rng.erasure[link].random_bool(e) {
                data.lost_on[i] = Some(link as u8);
                break;
            }
            let pos = link + 1;
            let r = &mut rng.participants[pos];
            if pos == n + 1 {
                let basis = choose_basis(r);
                let (bit, _) = bb84::measure(q, basis, r);
                data.records[pos][i] = Some(Observation { basis, bit });
                continue;
            }
            let announced_drop = mask & (1 << (pos - 1)) != 0;
            match spec.relay_modes[pos - 1] {
                RelayMode::Dropout { .. } if announced_drop => {}
                mode => {
                    let basis = choose_basis(r);
                    let (bit, post) = bb84::measure(q, basis, r);
                    let obs = Some(Observation { basis, bit });
                    if matches!(mode, RelayMode::CompromisedAlwaysOn { .. }) {
                        data.eve.get_mut(&EveTap::Relay(pos)).expect("shadow log")[i] = obs;
                    }
                    if !announced_drop {
                        data.records[pos][i] = obs;
                    }
                    q = post;
                }
            }
        }
    }
    Ok(data)
}

/// State of one link of the active chain in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkCheck {
    pub from: Participant,
    pub to: Participant,
    /// Adjacent participants chose the same basis.
    pub open: bool,
    pub bits_agree: bool,
}

/// Link-by-link openness for slot `t` along the active chain (relays that
/// announced a drop-out are contracted out).
pub fn propagation_check(session: &SessionData, t: u64) -> Result<Vec<LinkCheck>> {
    if !(1..=session.slots).contains(&t) {
        return Err(Error::InvalidParameter(format!(
            "timeslot {t} outside 1..={}",
            session.slots
        )));
    }
    let n = session.relay_count();
    let chain = session.active_positions(t);
    let obs = chain
        .iter()
        .map(|&p| {
            session
                .observation_at(p, t)
                .ok_or_else(|| Error::MissingRecord {
                    participant: Participant::at(p, n).to_string(),
                    t,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chain
        .windows(2)
        .zip(obs.windows(2))
        .map(|(p, o)| LinkCheck {
            from: Participant::at(p[0], n),
            to: Participant::at(p[1], n),
            open: o[0].basis == o[1].basis,
            bits_agree: o[0].bit == o[1].bit,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{binomial_sigma, chi_square_uniform};

    #[test]
    fn invalid_specs_are_rejected_before_running() {
        let mut spec = ChannelSpec::ideal(2);
        spec.link_erasure[1] = 1.5;
        assert!(matches!(
            run_session(&spec, 10, 1),
            Err(Error::InvalidSpec(_))
        ));

        let spec = ChannelSpec::dropout(2, -0.1);
        assert!(run_session(&spec, 10, 1).is_err());

        let spec = ChannelSpec::ideal(1).with_eve(2);
        assert!(run_session(&spec, 10, 1).is_err());

        let mut spec = ChannelSpec::ideal(1);
        spec.retransmission = Retransmission::Padded { r: 1.0 };
        assert!(run_session(&spec, 10, 1).is_err());
        spec.retransmission = Retransmission::Batch { k: 0 };
        assert!(run_session(&spec, 10, 1).is_err());

        let mut spec = ChannelSpec::ideal(1);
        spec.link_erasure.pop();
        assert!(run_session(&spec, 10, 1).is_err());

        assert!(run_session(&ChannelSpec::ideal(1), 0, 1).is_err());
    }

    #[test]
    fn forced_equal_bases_propagate_alices_bit() {
        let mut spec = ChannelSpec::ideal(1);
        spec.fixed_basis = Some(Basis::Y);
        let s = run_session(&spec, 2_000, 11).unwrap();
        for t in s.slot_numbers() {
            let a = s.record(Participant::Alice, t).unwrap();
            let b = s.record(Participant::Bob, t).unwrap();
            assert_eq!(a.b, b.b);
            assert_eq!(s.record(Participant::Relay(1), t).unwrap().b, a.b);
        }
    }

    #[test]
    fn open_links_always_agree_in_ideal_runs() {
        let s = run_session(&ChannelSpec::ideal(3), 20_000, 5).unwrap();
        for t in s.slot_numbers() {
            for link in propagation_check(&s, t).unwrap() {
                if link.open {
                    assert!(link.bits_agree, "slot {t} {:?}", link);
                }
            }
        }
    }

    #[test]
    fn all_x_slot_is_fully_open_and_xxxy_closes_last_link() {
        let s = run_session(&ChannelSpec::ideal(2), 5_000, 9).unwrap();
        let bases = |t| -> Vec<Basis> {
            s.participants()
                .map(|p| s.record(p, t).unwrap().c)
                .collect()
        };
        let find = |want: [Basis; 4]| {
            s.slot_numbers()
                .find(|&t| bases(t) == want)
                .expect("pattern occurs in 5000 slots")
        };
        use Basis::{X, Y};
        let t1 = find([X, X, X, X]);
        let checks = propagation_check(&s, t1).unwrap();
        assert!(checks.iter().all(|l| l.open && l.bits_agree));

        let t2 = find([X, X, X, Y]);
        let open: Vec<bool> = propagation_check(&s, t2)
            .unwrap()
            .iter()
            .map(|l| l.open)
            .collect();
        assert_eq!(open, vec![true, true, false]);
    }

    #[test]
    fn eve_on_open_link_breaks_agreement_a_quarter_of_the_time() {
        let mut spec = ChannelSpec::ideal(1).with_eve(0);
        spec.fixed_basis = None;
        let s = run_session(&spec, 200_000, 21).unwrap();
        let (mut agree, mut total) = (0u64, 0u64);
        for t in s.slot_numbers() {
            let l0 = propagation_check(&s, t).unwrap()[0];
            if l0.open {
                total += 1;
                agree += u64::from(l0.bits_agree);
            }
        }
        let f = agree as f64 / total as f64;
        assert!((f - 0.75).abs() < 0.01, "agreement {f}");
    }

    #[test]
    fn sixteen_basis_patterns_are_equally_likely() {
        let n_slots = 100_000u64;
        let s = run_session(&ChannelSpec::ideal(2), n_slots, 3).unwrap();
        let mut counts = [0u64; 16];
        for t in s.slot_numbers() {
            let idx = s
                .participants()
                .enumerate()
                .map(|(k, p)| (s.record(p, t).unwrap().c == Basis::Y) as usize * (1 << k))
                .sum::<usize>();
            counts[idx] += 1;
        }
        let expected = n_slots as f64 / 16.0;
        let sigma = (n_slots as f64 * (1.0 / 16.0) * (15.0 / 16.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 4.0 * sigma, "{counts:?}");
        }
        let (_, p) = chi_square_uniform(&counts);
        assert!(p > 0.001, "chi-square p = {p}");
    }

    #[test]
    fn each_participant_picks_bases_fairly() {
        let n_slots = 50_000u64;
        let s = run_session(&ChannelSpec::ideal(3), n_slots, 4).unwrap();
        for p in s.participants() {
            let ys = s.log(p).iter().filter(|r| r.c == Basis::Y).count() as f64;
            let f = ys / n_slots as f64;
            assert!(
                (f - 0.5).abs() < 4.0 * binomial_sigma(0.5, n_slots),
                "{p}: {f}"
            );
        }
    }

    #[test]
    fn dropout_counts_follow_the_binomial() {
        let (n, p, n_slots) = (4usize, 0.3, 100_000u64);
        let s = run_session(&ChannelSpec::dropout(n, p), n_slots, 8).unwrap();
        let mut by_active = [0u64; 5];
        for t in s.slot_numbers() {
            let active = n - s.dropout_mask(t).count_ones() as usize;
            by_active[active] += 1;
            for j in 1..=n {
                if s.dropped(j, t) {
                    assert!(s.record(Participant::Relay(j), t).is_none());
                } else {
                    assert!(s.record(Participant::Relay(j), t).is_some());
                }
            }
        }
        for (k, &count) in by_active.iter().enumerate() {
            let binom = (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
            let prob = binom * (1.0 - p).powi(k as i32) * p.powi((n - k) as i32);
            let f = count as f64 / n_slots as f64;
            assert!(
                (f - prob).abs() < 4.0 * binomial_sigma(prob, n_slots) + 1e-9,
                "k={k}"
            );
        }
    }

    #[test]
    fn compromised_relay_measures_while_claiming_dropout() {
        let spec = ChannelSpec::with_modes(vec![
            RelayMode::Dropout { p: 0.5 },
            RelayMode::CompromisedAlwaysOn { p: 0.5 },
            RelayMode::Dropout { p: 0.5 },
        ]);
        let s = run_session(&spec, 4_000, 12).unwrap();
        let mut claimed = 0;
        for t in s.slot_numbers() {
            assert!(s.eve_observation(EveTap::Relay(2), t).is_some());
            if s.dropped(2, t) {
                claimed += 1;
                assert!(s.record(Participant::Relay(2), t).is_none());
            } else {
                assert_eq!(
                    s.record(Participant::Relay(2), t).map(|r| (r.c, r.b)),
                    s.eve_observation(EveTap::Relay(2), t)
                        .map(|o| (o.basis, o.bit))
                );
            }
        }
        assert!(claimed > 1_800 && claimed < 2_200);
    }

    #[test]
    fn erasure_removes_the_slot_downstream_only() {
        let mut spec = ChannelSpec::ideal(2);
        spec.link_erasure = vec![0.0, 0.3, 0.0];
        let s = run_session(&spec, 10_000, 2).unwrap();
        let erased = s.erased_slots();
        assert!(!erased.is_empty());
        for t in s.slot_numbers() {
            assert!(s.record(Participant::Alice, t).is_some());
            assert!(s.record(Participant::Relay(1), t).is_some());
            let downstream = s.record(Participant::Relay(2), t).is_some();
            assert_eq!(downstream, !s.erased(t));
            assert_eq!(s.record(Participant::Bob, t).is_some(), !s.erased(t));
            if s.erased(t) {
                assert_eq!(s.lost_on_link(t), Some(1));
            }
        }
    }

    #[test]
    fn batching_changes_the_schedule_not_the_data() {
        let spec = ChannelSpec::ideal(2);
        let mut batched = spec.clone();
        batched.retransmission = Retransmission::Batch { k: 8 };
        let a = run_session(&spec, 3_000, 6).unwrap();
        let b = run_session(&batched, 3_000, 6).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(batched.emission_slot(1), 8);
        assert_eq!(batched.emission_slot(8), 8);
        assert_eq!(batched.emission_slot(9), 16);
        assert_eq!(spec.emission_slot(9), 9);
    }

    #[test]
    fn padding_slots_carry_relay_states_only() {
        let mut spec = ChannelSpec::ideal(1);
        spec.retransmission = Retransmission::Padded { r: 0.25 };
        let s = run_session(&spec, 40_000, 14).unwrap();
        let padded = s.padding_slots(1);
        let f = padded.len() as f64 / 40_000.0;
        assert!((f - 0.25).abs() < 0.01, "padding fraction {f}");
        for t in s.slot_numbers() {
            let is_pad = s.padding_owner(t).is_some();
            assert_eq!(s.record(Participant::Alice, t).is_none(), is_pad);
            assert!(s.record(Participant::Bob, t).is_some());
            assert!(s.record(Participant::Relay(1), t).is_some());
        }
        // Relay -> Bob agreement on padding slots with matching bases.
        for &t in &padded {
            let r = s.record(Participant::Relay(1), t).unwrap();
            let b = s.record(Participant::Bob, t).unwrap();
            if r.c == b.c {
                assert_eq!(r.b, b.b);
            }
        }
    }

    #[test]
    fn missing_records_are_reported_not_treated_as_closed() {
        let mut spec = ChannelSpec::ideal(1);
        spec.link_erasure = vec![1.0, 0.0];
        let s = run_session(&spec, 3, 1).unwrap();
        assert!(matches!(
            propagation_check(&s, 1),
            Err(Error::MissingRecord { .. })
        ));
        assert!(propagation_check(&s, 4).is_err());
    }

    #[test]
    fn participant_and_tap_labels_round_trip() {
        for p in [Participant::Alice, Participant::Relay(3), Participant::Bob] {
            assert_eq!(p.to_string().parse::<Participant>().unwrap(), p);
        }
        for tap in [EveTap::Link(0), EveTap::Relay(2)] {
            assert_eq!(tap.to_string().parse::<EveTap>().unwrap(), tap);
        }
        assert!("R0".parse::<Participant>().is_err());
        assert!("Q".parse::<EveTap>().is_err());
    }
}
