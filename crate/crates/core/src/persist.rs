//! Line-oriented session logs and a directory store for asynchronous
//! assembly.
//!
//! ```text
//! qkdlab-log v1
//! # session=0
//! # slots=3
//! # spec={"relay_modes":[...],...}
//! t,participant,c,b,flags
//! 1,A,X,1,
//! 1,R1,Y,0,
//! 1,B,Y,0,
//! 2,DROP,,,1
//! ```
//!
//! Participants are `A`, `Rj`, `B`, eavesdropper taps `Ej` (link `j`) and
//! `Cj` (compromised relay `j`). Per-slot announcements use the same
//! columns with empty `c` and `b`: `DROP` carries the drop-out bitmap, `PAD`
//! the padding relay and `LOST` the link where the qubit was lost.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use crate::bb84::{Basis, Bit};
use crate::error::{Error, Result};
use crate::network::{ChannelSpec, EveTap, Observation, Participant, SessionData};
use crate::transport::{partition, PartitionId, SlotId};

pub const LOG_HEADER: &str = "qkdlab-log v1";
pub const INDEX_HEADER: &str = "qkdlab-partidx v1";
const COLUMNS: &str = "t,participant,c,b,flags";

pub fn write_log(session: &SessionData) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{LOG_HEADER}").unwrap();
    writeln!(out, "# session={}", session.session_id).unwrap();
    writeln!(out, "# slots={}", session.slots).unwrap();
    writeln!(out, "# spec={}", serde_json::to_string(&session.spec)?).unwrap();
    writeln!(out, "{COLUMNS}").unwrap();
    let taps: Vec<EveTap> = session.eve_taps().collect();
    for t in session.slot_numbers() {
        for who in session.participants() {
            if let Some(o) = session.observation(who, t) {
                writeln!(out, "{t},{who},{},{},", o.basis, o.bit).unwrap();
            }
        }
        for &tap in &taps {
            if let Some(o) = session.eve_observation(tap, t) {
                writeln!(out, "{t},{tap},{},{},", o.basis, o.bit).unwrap();
            }
        }
        let mask = session.dropout_mask(t);
        if mask != 0 {
            writeln!(out, "{t},DROP,,,{mask}").unwrap();
        }
        if let Some(r) = session.padding_owner(t) {
            writeln!(out, "{t},PAD,,,{r}").unwrap();
        }
        if let Some(l) = session.lost_on_link(t) {
            writeln!(out, "{t},LOST,,,{l}").unwrap();
        }
    }
    Ok(out)
}

pub fn save_log(session: &SessionData, path: &Path) -> Result<()> {
    fs::write(path, write_log(session)?)?;
    Ok(())
}

fn meta<'a>(
    line: Option<(usize, String)>,
    key: &str,
    buf: &'a mut String,
) -> Result<(usize, &'a str)> {
    let (no, text) = line.ok_or_else(|| Error::parse(0, format!("missing `# {key}=` line")))?;
    *buf = text;
    buf.strip_prefix("# ")
        .and_then(|rest| rest.strip_prefix(key))
        .and_then(|rest| rest.strip_prefix('='))
        .map(|v| (no, v))
        .ok_or_else(|| Error::parse(no, format!("expected `# {key}=...`")))
}

pub fn read_log<R: Read>(reader: R) -> Result<SessionData> {
    let mut lines = BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)));
    let mut next = || lines.next().transpose();

    match next()? {
        Some((_, h)) if h == LOG_HEADER => {}
        Some((no, h)) => {
            return Err(Error::parse(
                no,
                format!("expected header `{LOG_HEADER}`, found `{h}`"),
            ))
        }
        None => return Err(Error::parse(1, "empty log")),
    }
    let mut buf = String::new();
    let (no, v) = meta(next()?, "session", &mut buf)?;
    let session_id: u32 = v
        .parse()
        .map_err(|_| Error::parse(no, format!("bad session id `{v}`")))?;
    let (no, v) = meta(next()?, "slots", &mut buf)?;
    let slots: u64 = v
        .parse()
        .map_err(|_| Error::parse(no, format!("bad slot count `{v}`")))?;
    let (no, v) = meta(next()?, "spec", &mut buf)?;
    let spec: ChannelSpec =
        serde_json::from_str(v).map_err(|e| Error::parse(no, format!("bad spec: {e}")))?;
    spec.validate()
        .map_err(|e| Error::parse(no, e.to_string()))?;
    match next()? {
        Some((_, c)) if c == COLUMNS => {}
        Some((no, c)) => {
            return Err(Error::parse(
                no,
                format!("expected column line `{COLUMNS}`, found `{c}`"),
            ))
        }
        None => return Err(Error::parse(5, "missing column line")),
    }

    let mut s = SessionData::empty(spec, slots, session_id);
    let n = s.relay_count();
    while let Some((no, line)) = next()? {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                no,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let t: u64 = fields[0]
            .parse()
            .map_err(|_| Error::parse(no, format!("bad slot `{}`", fields[0])))?;
        if !(1..=slots).contains(&t) {
            return Err(Error::parse(no, format!("slot {t} outside 1..={slots}")));
        }
        let i = (t - 1) as usize;
        let number = |what: &str| -> Result<u32> {
            fields[4]
                .parse()
                .map_err(|_| Error::parse(no, format!("bad {what} `{}`", fields[4])))
        };
        match fields[1] {
            "DROP" => {
                let mask = number("drop-out bitmap")?;
                if n < 32 && mask >> n != 0 {
                    return Err(Error::parse(
                        no,
                        format!("bitmap {mask} names relays beyond {n}"),
                    ));
                }
                s.dropout[i] = mask;
            }
            "PAD" => {
                let r = number("padding relay")?;
                if r == 0 || r as usize > n {
                    return Err(Error::parse(no, format!("padding relay {r} out of range")));
                }
                s.padding_owner[i] = Some(r as u8);
            }
            "LOST" => {
                let l = number("link")?;
                if l as usize > n {
                    return Err(Error::parse(no, format!("link {l} out of range")));
                }
                s.lost_on[i] = Some(l as u8);
            }
            who => {
                let obs = observation(fields[2], fields[3]).ok_or_else(|| {
                    Error::parse(no, format!("bad basis/bit `{},{}`", fields[2], fields[3]))
                })?;
                if !fields[4].is_empty() {
                    return Err(Error::parse(
                        no,
                        format!("unexpected flags `{}`", fields[4]),
                    ));
                }
                if let Ok(p) = who.parse::<Participant>() {
                    let pos = p.position(n);
                    if pos > n + 1 || (matches!(p, Participant::Relay(j) if j > n)) {
                        return Err(Error::parse(
                            no,
                            format!("participant {who} not in a {n}-relay chain"),
                        ));
                    }
                    s.records[pos][i] = Some(obs);
                } else if let Ok(tap) = who.parse::<EveTap>() {
                    let log = s.eve.get_mut(&tap).ok_or_else(|| {
                        Error::parse(no, format!("tap {who} not configured by the spec"))
                    })?;
                    log[i] = Some(obs);
                } else {
                    return Err(Error::parse(no, format!("unknown participant `{who}`")));
                }
            }
        }
    }
    Ok(s)
}

fn observation(c: &str, b: &str) -> Option<Observation> {
    let mut cs = c.chars();
    let basis = Basis::from_symbol(cs.next()?).filter(|_| cs.next().is_none())?;
    let bit = match b {
        "0" => Bit::ZERO,
        "1" => Bit::ONE,
        _ => return None,
    };
    Some(Observation { basis, bit })
}

pub fn load_log(path: &Path) -> Result<SessionData> {
    read_log(fs::File::open(path)?)
}

/// Sidecar listing each partition's slots.
pub fn write_partition_index(session: &SessionData) -> String {
    let mut out = format!("{INDEX_HEADER}\n# session={}\n", session.session_id);
    for (pid, ids) in partition(session) {
        let slots: Vec<String> = ids.iter().map(|id| id.t.to_string()).collect();
        writeln!(out, "{pid},{}", slots.join(" ")).unwrap();
    }
    out
}

pub fn read_partition_index(text: &str) -> Result<BTreeMap<PartitionId, Vec<SlotId>>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h == INDEX_HEADER => {}
        other => {
            return Err(Error::parse(
                1,
                format!(
                    "expected header `{INDEX_HEADER}`, found {:?}",
                    other.map(|o| o.1)
                ),
            ))
        }
    }
    let (no, line) = lines
        .next()
        .ok_or_else(|| Error::parse(2, "missing session line"))?;
    let session: u32 = line
        .strip_prefix("# session=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(no, "expected `# session=<id>`"))?;
    let mut map = BTreeMap::new();
    for (no, line) in lines {
        let (pid, slots) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(no, "expected `partition,slots`"))?;
        let pid: PartitionId = pid
            .parse()
            .map_err(|e: Error| Error::parse(no, e.to_string()))?;
        let ids = slots
            .split_whitespace()
            .map(|t| t.parse().map(|t| SlotId::new(session, t)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::parse(no, "bad slot number"))?;
        map.insert(pid, ids);
    }
    Ok(map)
}

/// Append-only directory of session logs with partition sidecars.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn log_path(&self, id: u32) -> PathBuf {
        self.dir.join(format!("session-{id:06}.log"))
    }

    fn index_path(&self, id: u32) -> PathBuf {
        self.dir.join(format!("session-{id:06}.idx"))
    }

    /// Adds a session; ids must be unique within the store.
    pub fn append(&self, session: &SessionData) -> Result<PathBuf> {
        let path = self.log_path(session.session_id);
        if path.exists() {
            return Err(Error::InvalidParameter(format!(
                "session {} already stored",
                session.session_id
            )));
        }
        fs::write(
            self.index_path(session.session_id),
            write_partition_index(session),
        )?;
        save_log(session, &path)?;
        Ok(path)
    }

    pub fn session_ids(&self) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name
                .strip_prefix("session-")
                .and_then(|r| r.strip_suffix(".log"))
                .and_then(|r| r.parse().ok())
            {
                ids.push(id);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }

    pub fn load(&self, id: u32) -> Result<SessionData> {
        load_log(&self.log_path(id))
    }

    pub fn partition_index(&self, id: u32) -> Result<BTreeMap<PartitionId, Vec<SlotId>>> {
        read_partition_index(&fs::read_to_string(self.index_path(id))?)
    }

    /// Loads every session in id order.
    pub fn load_all(&self) -> Result<Vec<SessionData>> {
        self.session_ids()?
            .into_iter()
            .map(|id| self.load(id))
            .collect()
    }
}
