//! Public announcements as `kind,fields...` CSV records.
//!
//! | kind        | fields                                      |
//! |-------------|---------------------------------------------|
//! | `open`      | session, t                                  |
//! | `transport` | session, t_alice, session, t_bob, parities  |
//! | `parity`    | t, t̃, f                                     |
//! | `dropout`   | session, t, bitmap                          |
//! | `ghz-m`     | bit string                                  |
//! | `ghz-assoc` | alice slot, bob slot                        |
//!
//! Parity lists and bit strings are written as runs of `0`/`1` (empty when
//! there is nothing to publish).

use std::fmt;
use std::str::FromStr;

use crate::bb84::Bit;
use crate::error::{Error, Result};
use crate::ghz::GhzSession;
use crate::network::SessionData;
use crate::protocols::{DuplexOutcome, ParityTuple};
use crate::transport::{Assembly, SlotId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Announcement {
    Open(SlotId),
    Transport {
        alice: SlotId,
        bob: SlotId,
        parities: Vec<Bit>,
    },
    Parity(ParityTuple),
    Dropout {
        slot: SlotId,
        bitmap: u32,
    },
    GhzBits(Vec<Bit>),
    GhzAssociation {
        alice_slot: u64,
        bob_slot: u64,
    },
}

fn bits_to_string(bits: &[Bit]) -> String {
    bits.iter()
        .map(|b| if b.is_one() { '1' } else { '0' })
        .collect()
}

fn parse_bits(s: &str) -> Option<Vec<Bit>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(Bit::ZERO),
            '1' => Some(Bit::ONE),
            _ => None,
        })
        .collect()
}

impl fmt::Display for Announcement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Announcement::Open(s) => write!(f, "open,{},{}", s.session, s.t),
            Announcement::Transport {
                alice,
                bob,
                parities,
            } => write!(
                f,
                "transport,{},{},{},{},{}",
                alice.session,
                alice.t,
                bob.session,
                bob.t,
                bits_to_string(parities)
            ),
            Announcement::Parity(p) => write!(f, "parity,{},{},{}", p.t, p.t_tilde, p.f),
            Announcement::Dropout { slot, bitmap } => {
                write!(f, "dropout,{},{},{bitmap}", slot.session, slot.t)
            }
            Announcement::GhzBits(bits) => write!(f, "ghz-m,{}", bits_to_string(bits)),
            Announcement::GhzAssociation {
                alice_slot,
                bob_slot,
            } => write!(f, "ghz-assoc,{alice_slot},{bob_slot}"),
        }
    }
}

impl FromStr for Announcement {
    type Err = String;

    fn from_str(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split(',').collect();
        let want = |n: usize| {
            if fields.len() == n {
                Ok(())
            } else {
                Err(format!(
                    "`{}` needs {} fields, found {}",
                    fields[0],
                    n - 1,
                    fields.len() - 1
                ))
            }
        };
        fn num<T: FromStr>(s: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("bad number `{s}`"))
        }
        let bits = |s: &str| parse_bits(s).ok_or_else(|| format!("bad bit string `{s}`"));
        match fields[0] {
            "open" => {
                want(3)?;
                Ok(Announcement::Open(SlotId::new(
                    num(fields[1])?,
                    num(fields[2])?,
                )))
            }
            "transport" => {
                want(6)?;
                Ok(Announcement::Transport {
                    alice: SlotId::new(num(fields[1])?, num(fields[2])?),
                    bob: SlotId::new(num(fields[3])?, num(fields[4])?),
                    parities: bits(fields[5])?,
                })
            }
            "parity" => {
                want(4)?;
                let f = bits(fields[3])?;
                if f.len() != 1 {
                    return Err(format!("flip bit must be one bit, found `{}`", fields[3]));
                }
                Ok(Announcement::Parity(ParityTuple {
                    t: num(fields[1])?,
                    t_tilde: num(fields[2])?,
                    f: f[0],
                }))
            }
            "dropout" => {
                want(4)?;
                Ok(Announcement::Dropout {
                    slot: SlotId::new(num(fields[1])?, num(fields[2])?),
                    bitmap: num(fields[3])?,
                })
            }
            "ghz-m" => {
                want(2)?;
                Ok(Announcement::GhzBits(bits(fields[1])?))
            }
            "ghz-assoc" => {
                want(3)?;
                Ok(Announcement::GhzAssociation {
                    alice_slot: num(fields[1])?,
                    bob_slot: num(fields[2])?,
                })
            }
            other => Err(format!("unknown announcement kind `{other}`")),
        }
    }
}

pub fn write_announcements(items: &[Announcement]) -> String {
    let mut out = String::new();
    for a in items {
        out.push_str(&a.to_string());
        out.push('\n');
    }
    out
}

pub fn read_announcements(text: &str) -> Result<Vec<Announcement>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.parse().map_err(|e: String| Error::parse(i + 1, e)))
        .collect()
}

/// Everything Alice and Bob need to rebuild a transport key.
pub fn from_assembly(a: &Assembly) -> Vec<Announcement> {
    a.open_slots
        .iter()
        .map(|&s| Announcement::Open(s))
        .chain(a.announcements.iter().map(|p| Announcement::Transport {
            alice: p.t_alice,
            bob: p.t_bob,
            parities: p.parities.clone(),
        }))
        .collect()
}

pub fn from_duplex(d: &DuplexOutcome) -> Vec<Announcement> {
    d.tuples.iter().map(|&p| Announcement::Parity(p)).collect()
}

pub fn from_dropout(session: &SessionData) -> Vec<Announcement> {
    session
        .slot_numbers()
        .filter_map(|t| {
            let bitmap = session.dropout_mask(t);
            (bitmap != 0).then(|| Announcement::Dropout {
                slot: SlotId::new(session.session_id, t),
                bitmap,
            })
        })
        .collect()
}

pub fn from_ghz(s: &GhzSession) -> Vec<Announcement> {
    std::iter::once(Announcement::GhzBits(s.published_m.clone()))
        .chain(
            s.associations
                .iter()
                .map(|&(a, b)| Announcement::GhzAssociation {
                    alice_slot: a,
                    bob_slot: b,
                }),
        )
        .collect()
}
