//! Bit transport: turning partially closed logical channels into end-to-end
//! key bits.
//!
//! A session is partitioned by the basis string `c_A c_1 ... c_n c_B` of each
//! slot. Link `j` is *open* in a slot when its two endpoints chose the same
//! basis; open links carry the bit unchanged in ideal operation. A slot
//! whose links are all open yields a key bit directly. Any other slot can
//! be paired with a slot from its *dual* partition, whose openness pattern
//! is the exact complement. Walking from Alice, the bit travels over the
//! open links of one slot, hops to the other slot at a *pivot* relay (where
//! openness flips) and continues until it reaches Bob.
//!
//! Two announcement styles are supported:
//!
//! - [`TransportMode::Matched`]: pivot relays only pair slots in which they
//!   recorded the same bit, so nothing but slot numbers is published.
//! - [`TransportMode::Parity`]: pivot relays publish
//!   `b_j(t1) xor b_j(t2)` and Bob folds the parities into his bit. Every
//!   dual slot can be used, and leftovers from unequal partition counts can
//!   be paired with any slot whose open links cover the missing ones.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bb84::{Basis, Bit};
use crate::error::{Error, Result};
use crate::network::{Participant, SessionData};
use crate::stats::Rate;

/// Basis string of one slot along a chain, `len` symbols packed LSB-first
/// (bit `i` set means participant `i` chose Y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartitionId {
    len: u8,
    bits: u32,
}

impl PartitionId {
    pub fn new(bases: &[Basis]) -> Self {
        assert!(
            (2..=32).contains(&bases.len()),
            "chain length {} unsupported",
            bases.len()
        );
        let bits = bases
            .iter()
            .enumerate()
            .fold(0u32, |acc, (i, b)| acc | (u32::from(*b == Basis::Y) << i));
        Self {
            len: bases.len() as u8,
            bits,
        }
    }

    pub fn from_bits(len: usize, bits: u32) -> Self {
        assert!((2..=32).contains(&len));
        Self {
            len: len as u8,
            bits: bits & low_mask(len),
        }
    }

    pub fn len(&self) -> usize {
        usize::from(self.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn basis(&self, i: usize) -> Basis {
        if self.bits >> i & 1 == 1 {
            Basis::Y
        } else {
            Basis::X
        }
    }

    pub fn relay_count(&self) -> usize {
        self.len() - 2
    }

    pub fn openness(&self) -> Openness {
        let links = self.len() - 1;
        let closed = (self.bits ^ (self.bits >> 1)) & low_mask(links);
        Openness {
            links: links as u8,
            open: !closed & low_mask(links),
        }
    }

    /// The partition with the same `c_A` whose openness is the complement.
    /// Equivalent to flipping every odd-position basis.
    pub fn dual(&self) -> PartitionId {
        PartitionId::from_bits(self.len(), self.bits ^ alternating_mask(self.len()))
    }

    /// XOR with the mask `c_A c̄_A c_A c̄_A ...` taken literally. Agrees with
    /// [`dual`](Self::dual) when `c_A = X`; for `c_A = Y` it also flips
    /// Alice's basis and is not an involution. Kept for comparison only.
    pub fn literal_mask_dual(&self) -> PartitionId {
        let mask = if self.basis(0) == Basis::X {
            alternating_mask(self.len())
        } else {
            !alternating_mask(self.len()) & low_mask(self.len())
        };
        PartitionId::from_bits(self.len(), self.bits ^ mask)
    }

    /// Chain members (1..=relay_count) at which openness changes.
    pub fn pivots(&self) -> Result<Vec<usize>> {
        let o = self.openness();
        if o.is_fully_open() || o.is_fully_closed() {
            return Err(Error::Undefined(format!(
                "partition {self} is fully open or fully closed and has no pivots"
            )));
        }
        Ok(o.pivots())
    }

    /// Rendering with open (□) and closed (■) links between basis symbols.
    pub fn render_links(&self) -> String {
        let o = self.openness();
        let mut s = String::new();
        for i in 0..self.len() {
            if i > 0 {
                s.push(if o.is_open(i - 1) { '□' } else { '■' });
            }
            s.push(self.basis(i).symbol());
        }
        s
    }
}

impl fmt::Display for PartitionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            write!(f, "{}", self.basis(i))?;
        }
        Ok(())
    }
}

impl FromStr for PartitionId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bases = s
            .chars()
            .map(Basis::from_symbol)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidParameter(format!("bad partition string `{s}`")))?;
        if !(2..=32).contains(&bases.len()) {
            return Err(Error::InvalidParameter(format!(
                "partition `{s}` has bad length"
            )));
        }
        Ok(PartitionId::new(&bases))
    }
}

fn low_mask(len: usize) -> u32 {
    if len >= 32 {
        u32::MAX
    } else {
        (1u32 << len) - 1
    }
}

/// `0101...` over `len` positions (position 0 unflipped).
fn alternating_mask(len: usize) -> u32 {
    0xAAAA_AAAA & low_mask(len)
}

/// Link openness of a partition: bit `j` set when link `j` is open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Openness {
    links: u8,
    open: u32,
}

impl Openness {
    pub fn from_bits(links: usize, open: u32) -> Self {
        Self {
            links: links as u8,
            open: open & low_mask(links),
        }
    }

    pub fn links(&self) -> usize {
        usize::from(self.links)
    }

    pub fn bits(&self) -> u32 {
        self.open
    }

    pub fn is_open(&self, link: usize) -> bool {
        self.open >> link & 1 == 1
    }

    pub fn is_fully_open(&self) -> bool {
        self.open == low_mask(self.links())
    }

    pub fn is_fully_closed(&self) -> bool {
        self.open == 0
    }

    pub fn complement(&self) -> Openness {
        Openness::from_bits(self.links(), !self.open)
    }

    pub fn to_vec(&self) -> Vec<bool> {
        (0..self.links()).map(|j| self.is_open(j)).collect()
    }

    fn pivots(&self) -> Vec<usize> {
        (1..self.links())
            .filter(|&j| self.is_open(j - 1) != self.is_open(j))
            .collect()
    }
}

pub fn dual(s: PartitionId) -> PartitionId {
    s.dual()
}

pub fn pivots(s: PartitionId) -> Result<Vec<usize>> {
    s.pivots()
}

/// Global slot identifier, so slots from several sessions can be mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotId {
    pub session: u32,
    pub t: u64,
}

impl SlotId {
    pub fn new(session: u32, t: u64) -> Self {
        Self { session, t }
    }
}

/// One slot seen along a chain: bases and bits packed LSB-first by chain
/// member.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainSlot {
    pub id: SlotId,
    pub bases: u32,
    pub bits: u32,
}

impl ChainSlot {
    pub fn bit(&self, member: usize) -> Bit {
        Bit::new(self.bits >> member & 1 == 1)
    }
}

/// Slots in which exactly the chain `members` took part, in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainView {
    pub members: Vec<Participant>,
    pub slots: Vec<ChainSlot>,
}

impl ChainView {
    /// Full chain A, R1..Rn, B: slots with a record from everyone, no
    /// announced drop-out and no padding.
    pub fn full(session: &SessionData) -> Self {
        let n = session.relay_count();
        Self::for_active_set(session, low_mask(n))
    }

    /// Chain through the relays in `active` (bit `j - 1` for relay `j`),
    /// restricted to slots whose announced active set is exactly that.
    pub fn for_active_set(session: &SessionData, active: u32) -> Self {
        let n = session.relay_count();
        let positions: Vec<usize> = std::iter::once(0)
            .chain((1..=n).filter(|j| active >> (j - 1) & 1 == 1))
            .chain(std::iter::once(n + 1))
            .collect();
        let members = positions.iter().map(|&p| Participant::at(p, n)).collect();
        let dropped = !active & low_mask(n);
        let mut slots = Vec::new();
        for t in session.slot_numbers() {
            if session.dropout_mask(t) != dropped || session.padding_owner(t).is_some() {
                continue;
            }
            if let Some(slot) = pack_slot(session, &positions, t) {
                slots.push(slot);
            }
        }
        Self { members, slots }
    }

    pub fn chain_len(&self) -> usize {
        self.members.len()
    }

    pub fn partition_of(&self, slot: &ChainSlot) -> PartitionId {
        PartitionId::from_bits(self.chain_len(), slot.bases)
    }

    /// Concatenates views over the same chain (used for multi-session
    /// assembly).
    pub fn concat(views: Vec<ChainView>) -> Result<ChainView> {
        let mut it = views.into_iter();
        let mut first = it
            .next()
            .ok_or_else(|| Error::InvalidParameter("no sessions to assemble".into()))?;
        for v in it {
            if v.members != first.members {
                return Err(Error::InvalidParameter(
                    "chain members differ between views".into(),
                ));
            }
            first.slots.extend(v.slots);
        }
        Ok(first)
    }
}

fn pack_slot(session: &SessionData, positions: &[usize], t: u64) -> Option<ChainSlot> {
    let (mut bases, mut bits) = (0u32, 0u32);
    for (i, &p) in positions.iter().enumerate() {
        let o = session.observation_at(p, t)?;
        bases |= u32::from(o.basis == Basis::Y) << i;
        bits |= u32::from(o.bit.is_one()) << i;
    }
    Some(ChainSlot {
        id: SlotId::new(session.session_id, t),
        bases,
        bits,
    })
}

/// Groups a session's fully-participating slots by basis string.
pub fn partition(session: &SessionData) -> BTreeMap<PartitionId, Vec<SlotId>> {
    partition_view(&ChainView::full(session))
}

pub fn partition_view(view: &ChainView) -> BTreeMap<PartitionId, Vec<SlotId>> {
    let mut map: BTreeMap<PartitionId, Vec<SlotId>> = BTreeMap::new();
    for s in &view.slots {
        map.entry(view.partition_of(s)).or_default().push(s.id);
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Openness patterns are exact complements.
    Dual,
    /// Leftover pairing: the two patterns together cover every link.
    Cover,
}

/// Two slots combined into one end-to-end bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportPair {
    pub t1: SlotId,
    pub t2: SlotId,
    /// Chain members at which the route switches slots.
    pub pivots: Vec<usize>,
    /// Slot whose first link carries the bit (Alice reads this one).
    pub t_alice: SlotId,
    /// Slot whose last link carries the bit (Bob reads this one).
    pub t_bob: SlotId,
    /// Published parity per pivot; all zero for matched pairs.
    pub parities: Vec<Bit>,
    pub kind: PairKind,
}

impl TransportPair {
    /// XOR of all published parities: Bob's correction.
    pub fn correction(&self) -> Bit {
        self.parities.iter().fold(Bit::ZERO, |a, &b| a ^ b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    /// Pivot relays only pair slots in which they recorded equal bits.
    Matched,
    /// Pivot relays publish parities.
    #[default]
    Parity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportOptions {
    pub mode: TransportMode,
    /// Pair leftover slots by openness cover after dual pairing. Only used
    /// in parity mode.
    pub cover_leftovers: bool,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            mode: TransportMode::Parity,
            cover_leftovers: true,
        }
    }
}

impl TransportOptions {
    pub fn matched() -> Self {
        Self {
            mode: TransportMode::Matched,
            cover_leftovers: false,
        }
    }

    pub fn parity_dual_only() -> Self {
        Self {
            mode: TransportMode::Parity,
            cover_leftovers: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolVariant {
    Transport,
    Sifted,
    BitRevelation,
    Duplex,
    DropoutShare,
    DropoutCombined,
    Ghz,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sessions: Vec<u32>,
    pub variant: ProtocolVariant,
    /// Logical channel tag, e.g. the relay set `124`.
    pub channel: String,
}

/// An ordered bit string with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyShare {
    pub bits: Vec<Bit>,
    pub provenance: Provenance,
}

impl KeyShare {
    pub fn new(bits: Vec<Bit>, provenance: Provenance) -> Self {
        Self { bits, provenance }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn truncated(&self, len: usize) -> KeyShare {
        KeyShare {
            bits: self.bits[..len.min(self.bits.len())].to_vec(),
            provenance: self.provenance.clone(),
        }
    }

    /// Bitwise XOR over the common prefix.
    pub fn xor(&self, other: &KeyShare) -> Vec<Bit> {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a ^ b)
            .collect()
    }

    /// Fraction of differing positions over the common prefix.
    pub fn disagreement(&self, other: &KeyShare) -> Rate {
        let total = self.bits.len().min(other.bits.len()) as u64;
        let diff = self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count() as u64;
        Rate::new(diff, total)
    }

    pub fn to_bit_string(&self) -> String {
        self.bits
            .iter()
            .map(|b| if b.is_one() { '1' } else { '0' })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportStats {
    pub slots: u64,
    pub fully_open: u64,
    pub fully_closed: u64,
    pub dual_pairs: u64,
    pub cover_pairs: u64,
    pub unmatched: u64,
}

impl TransportStats {
    pub fn key_bits(&self) -> u64 {
        self.fully_open + self.dual_pairs + self.cover_pairs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub alice: KeyShare,
    pub bob: KeyShare,
    /// Fully open slots, in slot order (each yields a bit on its own).
    pub open_slots: Vec<SlotId>,
    /// Pair announcements in `t_alice` order.
    pub announcements: Vec<TransportPair>,
    pub stats: TransportStats,
}

impl Assembly {
    pub fn key_rate(&self) -> Rate {
        Rate::new(self.alice.len() as u64, self.stats.slots)
    }
}

/// Pairs dual-partition slots in which every pivot relay recorded the same
/// bit, FIFO within each pivot-bit bucket. Each slot is used at most once;
/// anything left unmatched is dropped.
pub fn match_pairs(
    slots_s: &[ChainSlot],
    slots_dual: &[ChainSlot],
    chain_len: usize,
) -> Vec<TransportPair> {
    let Some(first) = slots_s.first().or(slots_dual.first()) else {
        return Vec::new();
    };
    let pid = PartitionId::from_bits(chain_len, first.bases);
    let Ok(piv) = pid.pivots() else {
        return Vec::new();
    };
    let key = |s: &ChainSlot| {
        piv.iter()
            .fold(0u32, |acc, &j| acc << 1 | (s.bits >> j & 1))
    };
    let mut buckets: BTreeMap<u32, VecDeque<&ChainSlot>> = BTreeMap::new();
    for s in slots_s {
        buckets.entry(key(s)).or_default().push_back(s);
    }
    let mut out = Vec::new();
    for d in slots_dual {
        if let Some(s) = buckets.get_mut(&key(d)).and_then(|q| q.pop_front()) {
            let mut pair = route_pair(s, d, chain_len, PairKind::Dual);
            debug_assert!(pair.parities.iter().all(|p| !p.is_one()));
            pair.parities.iter_mut().for_each(|p| *p = Bit::ZERO);
            out.push(pair);
        }
    }
    out
}

/// Builds the announcement for two slots whose open links together cover
/// the chain. The route stays in one slot as long as it can.
fn route_pair(a: &ChainSlot, b: &ChainSlot, chain_len: usize, kind: PairKind) -> TransportPair {
    let links = chain_len - 1;
    let oa = PartitionId::from_bits(chain_len, a.bases).openness();
    let ob = PartitionId::from_bits(chain_len, b.bases).openness();
    debug_assert_eq!((oa.bits() | ob.bits()), low_mask(links));
    let run = |o: &Openness| (0..links).take_while(|&j| o.is_open(j)).count();
    let mut on_a = run(&oa) >= run(&ob);
    let t_alice = if on_a { a.id } else { b.id };
    let mut pivots = Vec::new();
    let mut parities = Vec::new();
    for link in 0..links {
        let open_here = if on_a {
            oa.is_open(link)
        } else {
            ob.is_open(link)
        };
        if !open_here {
            // Switch at the member just before this link.
            pivots.push(link);
            parities.push(a.bit(link) ^ b.bit(link));
            on_a = !on_a;
        }
    }
    TransportPair {
        t1: a.id,
        t2: b.id,
        pivots,
        t_alice,
        t_bob: if on_a { a.id } else { b.id },
        parities,
        kind,
    }
}

/// Assembles the end-to-end key over a session's full chain.
pub fn assemble_key(session: &SessionData, opts: &TransportOptions) -> Assembly {
    let view = ChainView::full(session);
    assemble_view(&view, opts, vec![session.session_id], "full")
}

/// Assembles over several persisted sessions of the same topology.
/// Slots are identified by `(session, t)` and buckets span sessions.
pub fn async_assemble(sessions: &[SessionData], opts: &TransportOptions) -> Result<Assembly> {
    let first = sessions
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty session store".into()))?;
    let n = first.relay_count();
    let mut ids = BTreeSet::new();
    for s in sessions {
        if s.relay_count() != n {
            return Err(Error::TopologyMismatch {
                expected: n,
                found: s.relay_count(),
                session: s.session_id,
            });
        }
        if !ids.insert(s.session_id) {
            return Err(Error::InvalidParameter(format!(
                "session id {} appears twice",
                s.session_id
            )));
        }
    }
    let view = ChainView::concat(sessions.iter().map(ChainView::full).collect())?;
    Ok(assemble_view(
        &view,
        opts,
        ids.into_iter().collect(),
        "full",
    ))
}

/// Core assembly over any chain view.
pub fn assemble_view(
    view: &ChainView,
    opts: &TransportOptions,
    sessions: Vec<u32>,
    channel: &str,
) -> Assembly {
    let len = view.chain_len();
    let links = len - 1;
    let full = low_mask(links);
    let mut stats = TransportStats {
        slots: view.slots.len() as u64,
        ..Default::default()
    };

    let mut groups: BTreeMap<PartitionId, Vec<ChainSlot>> = BTreeMap::new();
    let mut open_slots = Vec::new();
    for s in &view.slots {
        let pid = view.partition_of(s);
        let o = pid.openness();
        if o.is_fully_open() {
            open_slots.push(*s);
        } else if o.is_fully_closed() {
            stats.fully_closed += 1;
        } else {
            groups.entry(pid).or_default().push(*s);
        }
    }
    stats.fully_open = open_slots.len() as u64;

    let mut pairs = Vec::new();
    let mut leftovers: Vec<ChainSlot> = Vec::new();
    for (pid, slots) in &groups {
        let d = pid.dual();
        if d < *pid {
            continue;
        }
        let empty = Vec::new();
        let duals = groups.get(&d).unwrap_or(&empty);
        match opts.mode {
            TransportMode::Matched => {
                let matched = match_pairs(slots, duals, len);
                stats.unmatched += (slots.len() + duals.len() - 2 * matched.len()) as u64;
                pairs.extend(matched);
            }
            TransportMode::Parity => {
                let m = slots.len().min(duals.len());
                pairs.extend(
                    slots
                        .iter()
                        .zip(duals)
                        .map(|(a, b)| route_pair(a, b, len, PairKind::Dual)),
                );
                leftovers.extend_from_slice(&slots[m..]);
                leftovers.extend_from_slice(&duals[m..]);
            }
        }
    }
    stats.dual_pairs = pairs.len() as u64;

    if opts.mode == TransportMode::Parity {
        if opts.cover_leftovers {
            let before = pairs.len();
            leftovers.sort_by_key(|s| s.id);
            let unmatched = pair_by_cover(&leftovers, len, full, &mut pairs);
            stats.cover_pairs = (pairs.len() - before) as u64;
            stats.unmatched = unmatched;
        } else {
            stats.unmatched = leftovers.len() as u64;
        }
    }

    pairs.sort_by_key(|p| (p.t_alice, p.t_bob));
    let lookup: BTreeMap<SlotId, &ChainSlot> = view.slots.iter().map(|s| (s.id, s)).collect();
    let last = len - 1;
    let mut alice = Vec::with_capacity(open_slots.len() + pairs.len());
    let mut bob = Vec::with_capacity(open_slots.len() + pairs.len());
    for s in &open_slots {
        alice.push(s.bit(0));
        bob.push(s.bit(last));
    }
    for p in &pairs {
        alice.push(lookup[&p.t_alice].bit(0));
        bob.push(lookup[&p.t_bob].bit(last) ^ p.correction());
    }
    let prov = Provenance {
        sessions,
        variant: ProtocolVariant::Transport,
        channel: channel.to_string(),
    };
    Assembly {
        alice: KeyShare::new(alice, prov.clone()),
        bob: KeyShare::new(bob, prov),
        open_slots: open_slots.iter().map(|s| s.id).collect(),
        announcements: pairs,
        stats,
    }
}

/// Greedy leftover pairing: patterns with the fewest open links go first
/// and take the tightest compatible partner. Returns the unpaired count.
fn pair_by_cover(
    leftovers: &[ChainSlot],
    len: usize,
    full: u32,
    pairs: &mut Vec<TransportPair>,
) -> u64 {
    let pattern = |s: &ChainSlot| PartitionId::from_bits(len, s.bases).openness().bits();
    let mut queues: BTreeMap<(u32, u32), VecDeque<ChainSlot>> = BTreeMap::new();
    for s in leftovers {
        let w = pattern(s);
        queues.entry((w.count_ones(), w)).or_default().push_back(*s);
    }
    let order: Vec<(u32, u32)> = queues.keys().copied().collect();
    for &key in &order {
        let w = key.1;
        while let Some(front) = queues.get_mut(&key).and_then(|q| q.pop_front()) {
            let partner_key = order.iter().copied().find(|&(_, v)| {
                (w | v) == full
                    && queues
                        .get(&(v.count_ones(), v))
                        .is_some_and(|q| !q.is_empty())
            });
            match partner_key {
                Some(pk) => {
                    let partner = queues
                        .get_mut(&pk)
                        .and_then(|q| q.pop_front())
                        .expect("nonempty");
                    let (a, b) = if front.id <= partner.id {
                        (front, partner)
                    } else {
                        (partner, front)
                    };
                    pairs.push(route_pair(&a, &b, len, PairKind::Cover));
                }
                None => {
                    queues.get_mut(&key).expect("queue").push_front(front);
                    break;
                }
            }
        }
    }
    queues.values().map(|q| q.len() as u64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{run_session, ChannelSpec};

    fn p(s: &str) -> PartitionId {
        s.parse().unwrap()
    }

    #[test]
    fn dual_examples() {
        assert_eq!(dual(p("XXXY")), p("XYXX"));
        assert_eq!(dual(p("XXXX")), p("XYXY"));
        assert_eq!(dual(p("XXYYX")), p("XYYXX"));
    }

    #[test]
    fn literal_mask_agrees_for_x_and_flips_alice_for_y() {
        for bits in 0..16u32 {
            let s = PartitionId::from_bits(4, bits);
            if s.basis(0) == Basis::X {
                assert_eq!(s.literal_mask_dual(), s.dual());
            } else {
                assert_eq!(s.literal_mask_dual().basis(0), Basis::X);
                assert_ne!(s.literal_mask_dual().literal_mask_dual(), s);
            }
        }
    }

    #[test]
    fn pivot_examples() {
        assert_eq!(pivots(p("XXXY")).unwrap(), vec![2]);
        assert_eq!(pivots(p("XXYY")).unwrap(), vec![1, 2]);
        assert_eq!(pivots(p("XYXX")).unwrap(), vec![2]);
        assert!(pivots(p("XXXX")).is_err());
        assert!(pivots(p("XYXY")).is_err());
    }

    #[test]
    fn renders_the_eight_x_channels_for_two_relays() {
        let expected = [
            "X□X□X□X",
            "X□X□X■Y",
            "X□X■Y■X",
            "X□X■Y□Y",
            "X■Y■X□X",
            "X■Y■X■Y",
            "X■Y□Y■X",
            "X■Y□Y□Y",
        ];
        for (row, want) in expected.iter().enumerate() {
            // Row k lists (c1, c2, cB) as a binary count, c1 most significant.
            let r = row as u32;
            let bits = (r >> 2 & 1) << 1 | (r >> 1 & 1) << 2 | (r & 1) << 3;
            assert_eq!(PartitionId::from_bits(4, bits).render_links(), *want);
        }
    }

    #[test]
    fn partition_string_round_trips_and_rejects_garbage() {
        assert_eq!(p("XYYX").to_string(), "XYYX");
        assert!("XQ".parse::<PartitionId>().is_err());
        assert!("X".parse::<PartitionId>().is_err());
    }

    fn slot(t: u64, bases: [Basis; 4], bits: [u8; 4]) -> ChainSlot {
        let pid = PartitionId::new(&bases);
        let b = bits
            .iter()
            .enumerate()
            .fold(0u32, |a, (i, &v)| a | (u32::from(v) << i));
        ChainSlot {
            id: SlotId::new(0, t),
            bases: pid.bits(),
            bits: b,
        }
    }

    #[test]
    fn worked_two_slot_example_pairs_slot_5_with_12() {
        use Basis::{X, Y};
        // Records (t, c, b) for A, R1, R2, B.
        let t5 = slot(5, [X, X, X, Y], [1, 1, 1, 0]);
        let t12 = slot(12, [X, Y, X, X], [1, 0, 1, 1]);
        let pairs = match_pairs(&[t5], &[t12], 4);
        assert_eq!(pairs.len(), 1);
        let pair = &pairs[0];
        assert_eq!(pair.t_alice.t, 5);
        assert_eq!(pair.t_bob.t, 12);
        assert_eq!(pair.pivots, vec![2]);
        assert_eq!(t5.bit(2), t12.bit(2));
    }

    #[test]
    fn pivots_that_never_agree_produce_no_pairs() {
        use Basis::{X, Y};
        let a = slot(1, [X, X, X, Y], [0, 0, 0, 1]);
        let b = slot(2, [X, Y, X, X], [1, 0, 1, 1]);
        assert!(match_pairs(&[a], &[b], 4).is_empty());
        assert!(match_pairs(&[], &[], 4).is_empty());
    }

    #[test]
    fn parity_pairing_uses_disagreeing_pivots() {
        use Basis::{X, Y};
        let a = slot(1, [X, X, X, Y], [0, 0, 0, 1]);
        let b = slot(2, [X, Y, X, X], [1, 0, 1, 1]);
        let pair = route_pair(&a, &b, 4, PairKind::Dual);
        assert_eq!(pair.parities, vec![Bit::ONE]);
        // Alice 0 at slot 1; Bob 1 at slot 2 corrected by parity 1 -> 0.
        assert_eq!(a.bit(0), b.bit(3) ^ pair.correction());
    }

    #[test]
    fn empty_session_partitions_to_nothing() {
        let mut spec = ChannelSpec::ideal(2);
        spec.link_erasure = vec![1.0, 0.0, 0.0];
        let s = run_session(&spec, 50, 1).unwrap();
        assert!(partition(&s).is_empty());
        let a = assemble_key(&s, &TransportOptions::default());
        assert!(a.alice.is_empty());
        assert_eq!(a.key_rate().value(), None);
    }

    #[test]
    fn xxxy_slot_lands_in_its_partition() {
        let s = run_session(&ChannelSpec::ideal(2), 2_000, 5).unwrap();
        let parts = partition(&s);
        let xxxy = p("XXXY");
        for &id in &parts[&xxxy] {
            let bases: Vec<Basis> = s
                .participants()
                .map(|q| s.record(q, id.t).unwrap().c)
                .collect();
            assert_eq!(PartitionId::new(&bases), xxxy);
        }
        let total: usize = parts.values().map(Vec::len).sum();
        assert_eq!(total, 2_000);
    }

    #[test]
    fn ideal_keys_agree_in_every_mode() {
        for n in 1..=4 {
            let s = run_session(&ChannelSpec::ideal(n), 20_000, 40 + n as u64).unwrap();
            for opts in [
                TransportOptions::default(),
                TransportOptions::matched(),
                TransportOptions::parity_dual_only(),
            ] {
                let a = assemble_key(&s, &opts);
                assert_eq!(a.alice.bits, a.bob.bits, "n={n} {opts:?}");
                assert_eq!(a.alice.len() as u64, a.stats.key_bits());
            }
        }
    }

    #[test]
    fn matched_mode_loses_rate_beyond_one_pivot() {
        let s = run_session(&ChannelSpec::ideal(2), 100_000, 77).unwrap();
        let matched = assemble_key(&s, &TransportOptions::matched())
            .key_rate()
            .value()
            .unwrap();
        let parity = assemble_key(&s, &TransportOptions::default())
            .key_rate()
            .value()
            .unwrap();
        assert!((parity - 0.5).abs() < 0.01, "parity {parity}");
        // Two-pivot partitions pair at most half their dual slots.
        assert!(matched < 0.45 && matched > 0.42, "matched {matched}");
    }

    #[test]
    fn key_starts_with_open_slots_in_order() {
        let s = run_session(&ChannelSpec::ideal(1), 4_000, 8).unwrap();
        let a = assemble_key(&s, &TransportOptions::default());
        assert!(a.open_slots.windows(2).all(|w| w[0] < w[1]));
        assert!(a
            .announcements
            .windows(2)
            .all(|w| w[0].t_alice <= w[1].t_alice));
        let mut used = BTreeSet::new();
        for id in a
            .open_slots
            .iter()
            .copied()
            .chain(a.announcements.iter().flat_map(|p| [p.t1, p.t2]))
        {
            assert!(used.insert(id), "slot {id:?} used twice");
        }
    }

    #[test]
    fn async_rejects_mismatched_topologies_and_duplicate_ids() {
        let a = run_session(&ChannelSpec::ideal(2), 100, 1).unwrap();
        let b = run_session(&ChannelSpec::ideal(3), 100, 2)
            .unwrap()
            .with_id(1);
        assert!(matches!(
            async_assemble(&[a.clone(), b], &TransportOptions::default()),
            Err(Error::TopologyMismatch { .. })
        ));
        assert!(async_assemble(&[a.clone(), a.clone()], &TransportOptions::default()).is_err());
        assert!(async_assemble(&[], &TransportOptions::default()).is_err());
    }

    #[test]
    fn async_with_one_session_equals_assemble_key() {
        let s = run_session(&ChannelSpec::ideal(3), 5_000, 3).unwrap();
        let opts = TransportOptions::default();
        assert_eq!(
            async_assemble(std::slice::from_ref(&s), &opts).unwrap(),
            assemble_key(&s, &opts)
        );
    }
}
