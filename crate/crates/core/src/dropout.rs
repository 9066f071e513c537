//! Key sharing over drop-out relays.
//!
//! Each relay skips a slot with probability `p` and says so afterwards. A
//! slot in which exactly `required` relays were active belongs to the
//! logical channel through those relays; the dropped relays are contracted
//! out and bit transport runs on what is left. Alice and Bob XOR the keys of
//! every logical channel, so a relay that is absent from at least one of
//! them learns nothing about the result.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bb84::Bit;
use crate::error::{Error, Result};
use crate::network::{SessionData, MAX_RELAYS};
use crate::stats::Rate;
use crate::transport::{
    assemble_view, ChainView, KeyShare, ProtocolVariant, Provenance, SlotId, TransportOptions,
    TransportStats,
};

/// Cap on the number of logical channels enumerated for one session.
const MAX_CHANNELS: u128 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutParams {
    pub n: usize,
    pub p: f64,
    pub required: usize,
}

impl DropoutParams {
    /// `required = n − 1`: one extra relay beyond what spans the distance.
    pub fn new(n: usize, p: f64) -> Result<Self> {
        Self::with_required(n, p, n.saturating_sub(1))
    }

    pub fn with_required(n: usize, p: f64, required: usize) -> Result<Self> {
        let params = Self { n, p, required };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n > MAX_RELAYS {
            return Err(Error::InvalidParameter(format!(
                "{} relays exceeds the limit of {MAX_RELAYS}",
                self.n
            )));
        }
        if !(1..=self.n).contains(&self.required) {
            return Err(Error::InvalidParameter(format!(
                "required active relays {} must lie in 1..={}",
                self.required, self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidParameter(format!(
                "drop-out probability {} outside [0, 1]",
                self.p
            )));
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn binomial_term(n: usize, k: usize, p: f64) -> f64 {
    binomial(n, k) * (1.0 - p).powi(k as i32) * p.powi((n - k) as i32)
}

/// Probability that at least `required` relays are active in a slot.
pub fn predict_open(params: &DropoutParams) -> f64 {
    (params.required..=params.n)
        .map(|k| binomial_term(params.n, k, params.p))
        .sum()
}

/// Probability that exactly `required` relays are active (the usable
/// fraction of slots).
pub fn predict_useful(params: &DropoutParams) -> f64 {
    binomial_term(params.n, params.required, params.p)
}

/// Relay sets of size `k` out of `n`, as bitmaps in increasing order.
pub fn active_sets(n: usize, k: usize) -> Result<Vec<u32>> {
    let count = (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128);
    if k > n || count > MAX_CHANNELS {
        return Err(Error::InvalidParameter(format!(
            "{count} logical channels for {k} of {n} relays is too many"
        )));
    }
    if k == 0 {
        return Ok(vec![0]);
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut v: u64 = (1 << k) - 1;
    while v < 1 << n {
        out.push(v as u32);
        // Next bitmap with the same popcount.
        let c = v & v.wrapping_neg();
        let r = v + c;
        v = (((r ^ v) >> 2) / c) | r;
    }
    Ok(out)
}

/// Relay indices (1-based) in a bitmap.
pub fn relays_in(mask: u32) -> Vec<usize> {
    (1..=32).filter(|j| mask >> (j - 1) & 1 == 1).collect()
}

/// Channel tag such as `124`; relays above 9 are comma separated.
pub fn channel_label(relays: &[usize]) -> String {
    if relays.iter().all(|&j| j < 10) {
        relays.iter().map(|j| j.to_string()).collect()
    } else {
        relays
            .iter()
            .map(|j| j.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogicalChannel {
    pub active_set: Vec<usize>,
    pub slots: Vec<SlotId>,
    pub alice: KeyShare,
    pub bob: KeyShare,
    pub stats: TransportStats,
}

impl LogicalChannel {
    pub fn label(&self) -> String {
        channel_label(&self.active_set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DropoutOptions {
    pub transport: TransportOptions,
    /// Also use slots where every relay was active as one more share.
    pub include_all_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedKeyResult {
    pub alice: KeyShare,
    pub bob: KeyShare,
    pub channels: Vec<LogicalChannel>,
    /// `None` when the relays do not share one drop-out probability.
    pub predicted_f: Option<f64>,
    pub measured_f: Rate,
    /// False when some channel produced no key or coverage fails; the final
    /// key is then empty.
    pub complete: bool,
}

/// XOR of several shares after truncating them to the shortest.
pub fn xor_shares(shares: &[&KeyShare], provenance: Provenance) -> KeyShare {
    let len = shares.iter().map(|s| s.len()).min().unwrap_or(0);
    let bits = (0..len)
        .map(|i| shares.iter().fold(Bit::ZERO, |acc, s| acc ^ s.bits[i]))
        .collect();
    KeyShare::new(bits, provenance)
}

fn session_params(session: &SessionData, required: usize) -> Result<(DropoutParams, Option<f64>)> {
    let n = session.relay_count();
    let ps: Vec<Option<f64>> = session
        .spec
        .relay_modes
        .iter()
        .map(|m| m.dropout_probability())
        .collect();
    let p = match ps.first() {
        Some(Some(p0)) if ps.iter().all(|p| *p == Some(*p0)) => Some(*p0),
        _ => None,
    };
    let params = DropoutParams::with_required(n, p.unwrap_or(0.0), required)?;
    Ok((params, p))
}

/// Builds every logical channel with exactly `required` active relays and
/// combines their keys.
pub fn establish_shared_key(
    session: &SessionData,
    required: usize,
    opts: &DropoutOptions,
) -> Result<SharedKeyResult> {
    let (params, p) = session_params(session, required)?;
    let n = params.n;
    let mut masks = active_sets(n, required)?;
    if opts.include_all_active && required < n {
        masks.push(((1u64 << n) - 1) as u32);
    }

    let useful = session
        .slot_numbers()
        .filter(|&t| n - session.dropout_mask(t).count_ones() as usize == required)
        .count() as u64;

    let mut channels = Vec::with_capacity(masks.len());
    for mask in masks {
        let relays = relays_in(mask);
        let label = channel_label(&relays);
        let view = ChainView::for_active_set(session, mask);
        let mut a = assemble_view(&view, &opts.transport, vec![session.session_id], &label);
        a.alice.provenance.variant = ProtocolVariant::DropoutShare;
        a.bob.provenance.variant = ProtocolVariant::DropoutShare;
        channels.push(LogicalChannel {
            active_set: relays,
            slots: view.slots.iter().map(|s| s.id).collect(),
            alice: a.alice,
            bob: a.bob,
            stats: a.stats,
        });
    }

    let sets: Vec<&[usize]> = channels.iter().map(|c| c.active_set.as_slice()).collect();
    let covered = check_coverage(&sets, n).holds;
    let complete = covered && channels.iter().all(|c| !c.alice.is_empty());
    let prov = Provenance {
        sessions: vec![session.session_id],
        variant: ProtocolVariant::DropoutCombined,
        channel: channels
            .iter()
            .map(LogicalChannel::label)
            .collect::<Vec<_>>()
            .join("+"),
    };
    let (alice, bob) = if complete {
        (
            xor_shares(
                &channels.iter().map(|c| &c.alice).collect::<Vec<_>>(),
                prov.clone(),
            ),
            xor_shares(&channels.iter().map(|c| &c.bob).collect::<Vec<_>>(), prov),
        )
    } else {
        (
            KeyShare::new(Vec::new(), prov.clone()),
            KeyShare::new(Vec::new(), prov),
        )
    };
    Ok(SharedKeyResult {
        alice,
        bob,
        channels,
        predicted_f: p.map(|p| predict_useful(&DropoutParams { p, ..params })),
        measured_f: Rate::new(useful, session.slots),
        complete,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageVerdict {
    pub holds: bool,
    /// Relays present in every channel.
    pub never_absent: Vec<usize>,
}

/// Every relay `1..=n` must be missing from at least one channel. Alice and
/// Bob are in every channel by construction.
pub fn check_coverage(active_sets: &[&[usize]], n: usize) -> CoverageVerdict {
    let never_absent: Vec<usize> = (1..=n)
        .filter(|j| active_sets.iter().all(|set| set.contains(j)))
        .collect();
    CoverageVerdict {
        holds: never_absent.is_empty(),
        never_absent,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelQber {
    pub active_set: Vec<usize>,
    pub key_bits: u64,
    pub sampled: u64,
    pub qber: Option<f64>,
}

/// Compares a random `sample_fraction` of each logical channel's key. A
/// relay that measures while claiming to be absent shows up as errors in
/// the channels that exclude it.
pub fn detect_compromised<R: Rng + ?Sized>(
    session: &SessionData,
    sample_fraction: f64,
    rng: &mut R,
) -> Result<Vec<ChannelQber>> {
    if !(0.0..=1.0).contains(&sample_fraction) {
        return Err(Error::InvalidParameter(format!(
            "sample fraction {sample_fraction} outside [0, 1]"
        )));
    }
    let n = session.relay_count();
    let required = n.saturating_sub(1).max(1);
    let result = establish_shared_key(session, required, &DropoutOptions::default())?;
    let mut out = Vec::with_capacity(result.channels.len());
    for ch in &result.channels {
        let len = ch.alice.len();
        let k = ((len as f64) * sample_fraction).round() as usize;
        let errors = index::sample(rng, len, k.min(len))
            .iter()
            .filter(|&i| ch.alice.bits[i] != ch.bob.bits[i])
            .count();
        out.push(ChannelQber {
            active_set: ch.active_set.clone(),
            key_bits: len as u64,
            sampled: k as u64,
            qber: (k > 0).then(|| errors as f64 / k as f64),
        });
    }
    Ok(out)
}
