//! Per-GI adaptation rule tables and their 24-bit word format.
//!
//! Word layout, most significant bit first:
//!
//! | bits  | field         |
//! |-------|---------------|
//! | 23:18 | pair id       |
//! | 17:14 | switch vector |
//! | 13:6  | Q code        |
//! | 5:0   | reserved (0)  |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{SearchSpace, StaticDesign};
use crate::lossmap::IlMatrix;

pub const TABLE_SLOTS: usize = 64;
pub const MAGIC: &[u8; 4] = b"PRT1";
pub const HEADER_BYTES: usize = 8;
pub const EMPTY_WORD: u32 = 0xFF_FFFF;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("invalid {field}: {msg}")]
    Field { field: &'static str, msg: String },
    #[error("GI {gi} has {pairs} peers, more than the {TABLE_SLOTS} table slots")]
    Capacity { gi: usize, pairs: usize },
    #[error("no rule for pair id {0}")]
    Miss(u8),
    #[error("no design point for IL {0} dB")]
    MissingDesignPoint(f64),
    #[error("malformed table file: {0}")]
    Format(String),
}

fn field_err(field: &'static str, msg: impl Into<String>) -> RuleError {
    RuleError::Field { field, msg: msg.into() }
}

/// Bitrate-select switches S1..S4; exactly one is closed in a valid rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SwitchVector {
    pub s1: bool,
    pub s2: bool,
    pub s3: bool,
    pub s4: bool,
}

impl SwitchVector {
    pub fn one_hot(index: usize) -> Self {
        assert!(index < 4, "switch index {index} out of range");
        SwitchVector { s1: index == 0, s2: index == 1, s3: index == 2, s4: index == 3 }
    }

    /// The four switches as bits, S1 most significant.
    pub fn bits(self) -> u32 {
        (u32::from(self.s1) << 3) | (u32::from(self.s2) << 2) | (u32::from(self.s3) << 1) | u32::from(self.s4)
    }

    pub fn from_bits(bits: u32) -> Self {
        SwitchVector { s1: bits & 8 != 0, s2: bits & 4 != 0, s3: bits & 2 != 0, s4: bits & 1 != 0 }
    }

    /// Position of the closed switch, if exactly one is closed.
    pub fn index(self) -> Option<usize> {
        match self.bits() {
            0b1000 => Some(0),
            0b0100 => Some(1),
            0b0010 => Some(2),
            0b0001 => Some(3),
            _ => None,
        }
    }
}

impl fmt::Display for SwitchVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04b}", self.bits())
    }
}

impl FromStr for SwitchVector {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 4 || !s.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(field_err("switch_vector", format!("expected four binary digits, got `{s}`")));
        }
        Ok(SwitchVector::from_bits(u32::from_str_radix(s, 2).expect("checked digits")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RuleEntry {
    pub pair_id: u8,
    pub switch_vector: SwitchVector,
    pub q_code: u8,
    pub reserved: u8,
}

/// Number of Q codes, one per grid value.
pub const Q_CODES: u8 = 29;

pub fn encode_entry(entry: &RuleEntry) -> Result<u32, RuleError> {
    if entry.pair_id >= 64 {
        return Err(field_err("pair_id", format!("{} does not fit in 6 bits", entry.pair_id)));
    }
    if entry.switch_vector.index().is_none() {
        return Err(field_err("switch_vector", format!("{} is not one-hot", entry.switch_vector)));
    }
    if entry.q_code >= Q_CODES {
        return Err(field_err("q_code", format!("{} is beyond the {Q_CODES}-entry grid", entry.q_code)));
    }
    if entry.reserved != 0 {
        return Err(field_err("reserved", "reserved bits must be zero"));
    }
    Ok((u32::from(entry.pair_id) << 18) | (entry.switch_vector.bits() << 14) | (u32::from(entry.q_code) << 6))
}

pub fn decode_entry(word: u32) -> Result<RuleEntry, RuleError> {
    if word > 0xFF_FFFF {
        return Err(field_err("word", format!("{word:#x} is wider than 24 bits")));
    }
    let reserved = (word & 0x3F) as u8;
    if reserved != 0 {
        return Err(field_err("reserved", format!("reserved bits are {reserved:#08b}")));
    }
    let switch_vector = SwitchVector::from_bits((word >> 14) & 0xF);
    if switch_vector.index().is_none() {
        return Err(field_err("switch_vector", format!("{switch_vector} is not one-hot")));
    }
    let q_code = ((word >> 6) & 0xFF) as u8;
    if q_code >= Q_CODES {
        return Err(field_err("q_code", format!("{q_code} is beyond the {Q_CODES}-entry grid")));
    }
    Ok(RuleEntry { pair_id: (word >> 18) as u8, switch_vector, q_code, reserved })
}

/// Latency of one rule-driven reconfiguration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationLatency {
    pub table_access_ps: f64,
    pub q_tuning_ps: f64,
    pub serdes_wakeup_ps: f64,
}

impl Default for AdaptationLatency {
    fn default() -> Self {
        AdaptationLatency { table_access_ps: 40.0, q_tuning_ps: 25.0, serdes_wakeup_ps: 200.0 }
    }
}

impl AdaptationLatency {
    pub fn total_ps(&self) -> f64 {
        self.table_access_ps + self.q_tuning_ps + self.serdes_wakeup_ps
    }

    pub fn total_ns(&self) -> f64 {
        self.total_ps() / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleTable {
    pub gi_id: u16,
    pub entries: Vec<Option<RuleEntry>>,
    pub access_latency_ps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleJson {
    pub pair_id: u8,
    pub switch: String,
    pub q: f64,
    pub br_gbps: f64,
}

impl RuleTable {
    pub fn new(gi_id: u16) -> Self {
        RuleTable { gi_id, entries: vec![None; TABLE_SLOTS], access_latency_ps: 40 }
    }

    pub fn populated(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn lookup(&self, pair_id: u8) -> Result<RuleEntry, RuleError> {
        self.entries.get(usize::from(pair_id)).copied().flatten().ok_or(RuleError::Miss(pair_id))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, RuleError> {
        let mut out = Vec::with_capacity(HEADER_BYTES + 3 * TABLE_SLOTS);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.gi_id.to_be_bytes());
        out.extend_from_slice(&(TABLE_SLOTS as u16).to_be_bytes());
        for slot in &self.entries {
            let word = match slot {
                Some(e) => encode_entry(e)?,
                None => EMPTY_WORD,
            };
            out.extend_from_slice(&word.to_be_bytes()[1..]);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RuleError> {
        if bytes.len() != HEADER_BYTES + 3 * TABLE_SLOTS {
            return Err(RuleError::Format(format!("expected {} bytes, got {}", HEADER_BYTES + 3 * TABLE_SLOTS, bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(RuleError::Format("bad magic".into()));
        }
        let gi_id = u16::from_be_bytes([bytes[4], bytes[5]]);
        let count = u16::from_be_bytes([bytes[6], bytes[7]]);
        if usize::from(count) != TABLE_SLOTS {
            return Err(RuleError::Format(format!("entry count {count}, expected {TABLE_SLOTS}")));
        }
        let mut table = RuleTable::new(gi_id);
        for (slot, chunk) in bytes[HEADER_BYTES..].chunks_exact(3).enumerate() {
            let word = u32::from_be_bytes([0, chunk[0], chunk[1], chunk[2]]);
            if word == EMPTY_WORD {
                continue;
            }
            let entry = decode_entry(word)?;
            if usize::from(entry.pair_id) != slot {
                return Err(RuleError::Format(format!("slot {slot} holds pair id {}", entry.pair_id)));
            }
            table.entries[slot] = Some(entry);
        }
        Ok(table)
    }

    pub fn to_json(&self, space: &SearchSpace) -> Vec<RuleJson> {
        self.entries
            .iter()
            .flatten()
            .map(|e| RuleJson {
                pair_id: e.pair_id,
                switch: e.switch_vector.to_string(),
                q: space.q_grid[usize::from(e.q_code)],
                br_gbps: space.br_set_gbps[e.switch_vector.index().expect("valid entry")],
            })
            .collect()
    }
}

/// Pair ids local to each sending GI: receivers in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIdMap {
    peers: Vec<Vec<usize>>,
}

impl PairIdMap {
    /// All GIs share one crossbar group.
    pub fn lexicographic(n_gis: usize) -> Self {
        PairIdMap { peers: (0..n_gis).map(|s| (0..n_gis).filter(|&d| d != s).collect()).collect() }
    }

    /// GIs only talk within their group; `groups[g]` is the group of GI `g`.
    pub fn grouped(groups: &[usize]) -> Self {
        let n = groups.len();
        PairIdMap {
            peers: (0..n).map(|s| (0..n).filter(|&d| d != s && groups[d] == groups[s]).collect()).collect(),
        }
    }

    pub fn n_gis(&self) -> usize {
        self.peers.len()
    }

    pub fn peers(&self, src: usize) -> &[usize] {
        &self.peers[src]
    }

    pub fn pair_id(&self, src: usize, dst: usize) -> Option<u8> {
        self.peers.get(src)?.iter().position(|&d| d == dst).and_then(|i| u8::try_from(i).ok())
    }
}

pub fn build_rule_tables(
    design: &StaticDesign,
    il_matrix: &IlMatrix,
    pair_map: &PairIdMap,
    space: &SearchSpace,
) -> Result<Vec<RuleTable>, RuleError> {
    if space.q_grid.len() > usize::from(Q_CODES) || space.br_set_gbps.len() > 4 {
        return Err(field_err("search_space", "grid does not fit the word format"));
    }
    let mut tables = Vec::with_capacity(pair_map.n_gis());
    for src in 0..pair_map.n_gis() {
        let peers = pair_map.peers(src);
        if peers.len() > TABLE_SLOTS {
            return Err(RuleError::Capacity { gi: src, pairs: peers.len() });
        }
        let gi_id = u16::try_from(src).map_err(|_| field_err("gi_id", "more than 65535 GIs"))?;
        let mut table = RuleTable::new(gi_id);
        for (pair_id, &dst) in peers.iter().enumerate() {
            let il = il_matrix.get(src, dst);
            let point = design.point_for_il(il).ok_or(RuleError::MissingDesignPoint(il))?;
            let q_code = space.q_index(point.q_factor).ok_or_else(|| field_err("q_code", "Q not on grid"))?;
            let br_index = space.br_index(point.bitrate_gbps).ok_or_else(|| field_err("switch_vector", "BR not in set"))?;
            table.entries[pair_id] = Some(RuleEntry {
                pair_id: pair_id as u8,
                switch_vector: SwitchVector::one_hot(br_index),
                q_code: q_code as u8,
                reserved: 0,
            });
        }
        tables.push(table);
    }
    Ok(tables)
}
