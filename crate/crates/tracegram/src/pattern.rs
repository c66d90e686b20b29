//! Offset pattern recognition, within a rank and across ranks.
//!
//! File offsets are the one argument that routinely differs between
//! otherwise identical calls. Two regularities cover almost all of them in
//! practice:
//!
//! * within one rank, the i-th call of a loop seeks to `i*step + start`,
//! * across ranks, a coefficient of that term is `rank*slope + base`.
//!
//! [`PatternStore::encode_offset`] folds the first form online while
//! recording. [`finalize_patterns`] applies the second form once all ranks
//! are known, rewriting per-rank signature tables so that ranks doing
//! rank-shifted variants of the same work end up with byte-identical tables.
//! [`OffsetDecoder`] replays the recording-side state machine to reproduce
//! exact offsets during decompression.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Mutex;

use thiserror::Error;

use crate::cst::SignatureTable;
use crate::model::{self, ArgValue, CallSignature};

/// One coefficient of an offset term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coeff {
    /// Same value on every rank.
    Fixed(i64),
    /// `rank * slope + base`, recognized at finalization.
    RankLinear { slope: i64, base: i64 },
}

impl Coeff {
    /// Concrete value of this coefficient on `rank`.
    pub fn resolve(&self, rank: u32) -> i64 {
        match *self {
            Coeff::Fixed(v) => v,
            Coeff::RankLinear { slope, base } => {
                (rank as i64).wrapping_mul(slope).wrapping_add(base)
            }
        }
    }

    fn fixed_value(&self) -> Option<i64> {
        match *self {
            Coeff::Fixed(v) => Some(v),
            Coeff::RankLinear { .. } => None,
        }
    }
}

/// A folded offset argument.
///
/// `Literal` is a single offset; `IterLinear` is the arithmetic term
/// `i*step + start` where `i` counts prior same-shaped calls of the rank.
/// An `IterLinear` with step 0 is never produced (a constant offset stays
/// `Literal`), and a `RankLinear` coefficient with slope 0 is never produced
/// (values equal across ranks need no rank term).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OffsetPattern {
    Literal(Coeff),
    IterLinear { step: Coeff, start: Coeff },
}

const WIRE_LITERAL: u8 = 0;
const WIRE_ITER: u8 = 1;
const WIRE_LITERAL_RANK: u8 = 2;
const WIRE_ITER_RANK: u8 = 3;

/// Errors from [`OffsetPattern::read_wire`].
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("offset pattern truncated at byte {0}")]
    Truncated(usize),
    #[error("unknown offset pattern tag {0:#04x}")]
    BadTag(u8),
    #[error("invalid offset pattern flags {0:#04x}")]
    BadFlags(u8),
}

fn read_i64(buf: &[u8], pos: usize) -> Result<i64, WireError> {
    let bytes = buf
        .get(pos..pos + 8)
        .ok_or(WireError::Truncated(buf.len()))?;
    Ok(i64::from_le_bytes(bytes.try_into().unwrap()))
}

impl OffsetPattern {
    /// Wire tag, which doubles as the pattern's shape discriminant.
    pub fn shape_tag(&self) -> u8 {
        match self {
            OffsetPattern::Literal(Coeff::Fixed(_)) => WIRE_LITERAL,
            OffsetPattern::Literal(Coeff::RankLinear { .. }) => WIRE_LITERAL_RANK,
            OffsetPattern::IterLinear { step, start } => {
                if step.fixed_value().is_some() && start.fixed_value().is_some() {
                    WIRE_ITER
                } else {
                    WIRE_ITER_RANK
                }
            }
        }
    }

    /// Append the little-endian wire form of this pattern.
    ///
    /// Tag 0: literal value (i64). Tag 1: iteration term, step then start
    /// (i64 each). Tag 2: rank-wrapped literal, slope then base. Tag 3:
    /// iteration term with rank-wrapped coefficients: a flag byte (bit 0 =
    /// step wrapped, bit 1 = start wrapped), then each coefficient as one
    /// i64 if plain or slope+base if wrapped.
    pub fn write_wire(&self, out: &mut Vec<u8>) {
        match self {
            OffsetPattern::Literal(Coeff::Fixed(v)) => {
                out.push(WIRE_LITERAL);
                out.extend_from_slice(&v.to_le_bytes());
            }
            OffsetPattern::Literal(Coeff::RankLinear { slope, base }) => {
                out.push(WIRE_LITERAL_RANK);
                out.extend_from_slice(&slope.to_le_bytes());
                out.extend_from_slice(&base.to_le_bytes());
            }
            OffsetPattern::IterLinear { step, start } => {
                match (step.fixed_value(), start.fixed_value()) {
                    (Some(a), Some(b)) => {
                        out.push(WIRE_ITER);
                        out.extend_from_slice(&a.to_le_bytes());
                        out.extend_from_slice(&b.to_le_bytes());
                    }
                    _ => {
                        out.push(WIRE_ITER_RANK);
                        let mut flags = 0u8;
                        if step.fixed_value().is_none() {
                            flags |= 1;
                        }
                        if start.fixed_value().is_none() {
                            flags |= 2;
                        }
                        out.push(flags);
                        for coeff in [step, start] {
                            match *coeff {
                                Coeff::Fixed(v) => out.extend_from_slice(&v.to_le_bytes()),
                                Coeff::RankLinear { slope, base } => {
                                    out.extend_from_slice(&slope.to_le_bytes());
                                    out.extend_from_slice(&base.to_le_bytes());
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Parse a wire-form pattern from the head of `buf`; returns the pattern
    /// and the number of bytes consumed.
    pub fn read_wire(buf: &[u8]) -> Result<(Self, usize), WireError> {
        let tag = *buf.first().ok_or(WireError::Truncated(0))?;
        match tag {
            WIRE_LITERAL => {
                let v = read_i64(buf, 1)?;
                Ok((OffsetPattern::Literal(Coeff::Fixed(v)), 9))
            }
            WIRE_LITERAL_RANK => {
                let slope = read_i64(buf, 1)?;
                let base = read_i64(buf, 9)?;
                Ok((OffsetPattern::Literal(Coeff::RankLinear { slope, base }), 17))
            }
            WIRE_ITER => {
                let step = read_i64(buf, 1)?;
                let start = read_i64(buf, 9)?;
                Ok((
                    OffsetPattern::IterLinear {
                        step: Coeff::Fixed(step),
                        start: Coeff::Fixed(start),
                    },
                    17,
                ))
            }
            WIRE_ITER_RANK => {
                let flags = *buf.get(1).ok_or(WireError::Truncated(1))?;
                if flags == 0 || flags > 3 {
                    return Err(WireError::BadFlags(flags));
                }
                let mut pos = 2;
                let mut coeffs = [Coeff::Fixed(0); 2];
                for (i, coeff) in coeffs.iter_mut().enumerate() {
                    if flags & (1 << i) != 0 {
                        let slope = read_i64(buf, pos)?;
                        let base = read_i64(buf, pos + 8)?;
                        *coeff = Coeff::RankLinear { slope, base };
                        pos += 16;
                    } else {
                        *coeff = Coeff::Fixed(read_i64(buf, pos)?);
                        pos += 8;
                    }
                }
                Ok((
                    OffsetPattern::IterLinear {
                        step: coeffs[0],
                        start: coeffs[1],
                    },
                    pos,
                ))
            }
            other => Err(WireError::BadTag(other)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("rank {rank} handle {handle} is already mapped to a group-wide id")]
    DoubleOpen { rank: u32, handle: u32 },
}

#[derive(Debug)]
struct PatternState {
    /// Calls seen in the current run of this key.
    count: u64,
    /// Offset of the run's first call.
    start: i64,
    /// Per-iteration step, fixed after the run's second call.
    step: Option<i64>,
}

/// Per-rank store of offset-folding state, keyed by the call's signature
/// bytes with every offset slot masked out.
///
/// Thread ids are part of the key (they are part of the signature), so
/// concurrent application threads fold their loops independently and replay
/// deterministically.
#[derive(Debug, Default)]
pub struct PatternStore {
    states: Mutex<HashMap<Vec<u8>, PatternState>>,
}

impl PatternStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fold one raw offset into a pattern term.
    ///
    /// The first call of a key emits `Literal` and starts a run. The second
    /// call fixes the step hypothesis `offset - start`; a zero step keeps
    /// emitting `Literal` while the offset repeats. Later calls emit
    /// `IterLinear` while `offset == count*step + start` holds and otherwise
    /// reset the run as if the call were first.
    pub fn encode_offset(&self, key: &[u8], offset: i64) -> OffsetPattern {
        let mut states = self.states.lock().unwrap();
        match states.entry(key.to_vec()) {
            Entry::Vacant(slot) => {
                slot.insert(PatternState {
                    count: 1,
                    start: offset,
                    step: None,
                });
                OffsetPattern::Literal(Coeff::Fixed(offset))
            }
            Entry::Occupied(mut slot) => {
                let st = slot.get_mut();
                let reset = |st: &mut PatternState| {
                    st.count = 1;
                    st.start = offset;
                    st.step = None;
                    OffsetPattern::Literal(Coeff::Fixed(offset))
                };
                match st.step {
                    None => match offset.checked_sub(st.start) {
                        Some(0) => {
                            st.count = 2;
                            st.step = Some(0);
                            OffsetPattern::Literal(Coeff::Fixed(st.start))
                        }
                        Some(step) => {
                            let start = st.start;
                            st.count = 2;
                            st.step = Some(step);
                            OffsetPattern::IterLinear {
                                step: Coeff::Fixed(step),
                                start: Coeff::Fixed(start),
                            }
                        }
                        None => reset(st),
                    },
                    Some(0) => {
                        if offset == st.start {
                            st.count += 1;
                            OffsetPattern::Literal(Coeff::Fixed(st.start))
                        } else {
                            reset(st)
                        }
                    }
                    Some(step) => {
                        let expected = (st.count as i64)
                            .checked_mul(step)
                            .and_then(|v| v.checked_add(st.start));
                        if expected == Some(offset) {
                            let start = st.start;
                            st.count += 1;
                            OffsetPattern::IterLinear {
                                step: Coeff::Fixed(step),
                                start: Coeff::Fixed(start),
                            }
                        } else {
                            reset(st)
                        }
                    }
                }
            }
        }
    }
}

/// Replays offset folding during decompression.
///
/// Feed it every offset-bearing call of one rank in stream order, under the
/// same masked key the recorder used; it recounts run positions and resolves
/// rank-wrapped coefficients to reproduce the exact recorded offsets.
#[derive(Debug, Default)]
pub struct OffsetDecoder {
    next_index: HashMap<Vec<u8>, u64>,
}

impl OffsetDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decode(&mut self, key: &[u8], pattern: &OffsetPattern, rank: u32) -> i64 {
        match pattern {
            OffsetPattern::Literal(c) => {
                self.next_index.insert(key.to_vec(), 1);
                c.resolve(rank)
            }
            OffsetPattern::IterLinear { step, start } => {
                let i = self.next_index.entry(key.to_vec()).or_insert(1);
                let v = (*i as i64)
                    .wrapping_mul(step.resolve(rank))
                    .wrapping_add(start.resolve(rank));
                *i += 1;
                v
            }
        }
    }
}

/// Fit `values[r] = r*slope + base` exactly over all ranks.
///
/// Returns `None` for fewer than two ranks, for values that do not fit, and
/// for constant values (slope 0 needs no rank term).
pub fn recognize_rank_linear(values: &[i64]) -> Option<(i64, i64)> {
    if values.len() < 2 {
        return None;
    }
    let base = values[0];
    let slope = values[1].checked_sub(base)?;
    if slope == 0 {
        return None;
    }
    for (r, &v) in values.iter().enumerate() {
        let expected = (r as i64).checked_mul(slope)?.checked_add(base)?;
        if v != expected {
            return None;
        }
    }
    Some((slope, base))
}

/// Decoded view of one offset-bearing table entry.
struct OffsetEntry {
    rank: usize,
    index: u32,
    call: model::DecodedCall,
}

/// Rewrite per-rank signature tables so that coefficients varying linearly
/// with rank become explicit `rank*slope + base` terms.
///
/// Entries are grouped by their signature with offset coefficient values
/// blanked out (shape and every other argument kept). A group qualifies when
/// ranks 0..K-1 for some K >= 2 each contribute exactly one entry; ranks
/// beyond K may lack the shape entirely (common when only the first K ranks
/// act as writers). Each coefficient that fits a rank-linear form across the
/// group is rewritten in place, leaving entry order, indices, and counts
/// untouched. With a single rank, or for groups that do not qualify, tables
/// pass through unchanged.
pub fn finalize_patterns(tables: &[SignatureTable]) -> Vec<SignatureTable> {
    let ranks = tables.len();
    let out: Vec<SignatureTable> = tables.iter().map(SignatureTable::clone_table).collect();
    if ranks < 2 {
        return out;
    }

    let mut groups: BTreeMap<Vec<u8>, Vec<OffsetEntry>> = BTreeMap::new();
    for (rank, table) in tables.iter().enumerate() {
        for (index, sig, _count) in table.entries() {
            let Ok(call) = model::decode_signature(sig.as_bytes()) else {
                continue;
            };
            if !call.args.iter().any(|a| matches!(a, ArgValue::Offset(_))) {
                continue;
            }
            let key = shape_key(&call);
            groups
                .entry(key)
                .or_default()
                .push(OffsetEntry { rank, index, call });
        }
    }

    let existing: Vec<HashSet<Vec<u8>>> = tables
        .iter()
        .map(|t| {
            t.entries()
                .map(|(_, sig, _)| sig.as_bytes().to_vec())
                .collect()
        })
        .collect();
    let mut planned: HashSet<Vec<u8>> = HashSet::new();

    for entries in groups.values() {
        if entries.len() < 2 || entries.len() > ranks {
            continue;
        }
        if entries.iter().enumerate().any(|(i, e)| e.rank != i) {
            continue;
        }
        let mut calls: Vec<model::DecodedCall> =
            entries.iter().map(|e| e.call.clone()).collect();
        if !rewrite_group(&mut calls) {
            continue;
        }
        // The rewritten forms must stay unique within each rank's table;
        // skip the whole group on any collision rather than corrupt it.
        let new_bytes: Vec<Vec<u8>> = calls
            .iter()
            .map(|c| {
                model::make_signature(&model::CallRecord {
                    func: c.func,
                    args: c.args.clone(),
                    thread_id: c.thread_id,
                    call_depth: c.call_depth,
                    t_entry: 0,
                    t_exit: 0,
                })
                .into_bytes()
            })
            .collect();
        let collides = entries.iter().zip(&new_bytes).any(|(e, bytes)| {
            planned.contains(bytes)
                || (existing[e.rank].contains(bytes)
                    && tables[e.rank].index_of_bytes(bytes) != Some(e.index))
        });
        if collides {
            continue;
        }
        for (e, bytes) in entries.iter().zip(&new_bytes) {
            planned.insert(bytes.clone());
            out[e.rank]
                .replace_signature(e.index, CallSignature::from_bytes(bytes.clone()))
                .expect("rewritten signature collided after collision check");
        }
    }
    out
}

/// Signature bytes of a call with every offset coefficient value blanked but
/// the pattern shape kept, used to line entries up across ranks.
fn shape_key(call: &model::DecodedCall) -> Vec<u8> {
    let mut key = Vec::with_capacity(32);
    key.extend_from_slice(&call.func.0.to_le_bytes());
    key.push(call.call_depth);
    key.extend_from_slice(&call.thread_id.to_le_bytes());
    key.push(call.args.len() as u8);
    for arg in &call.args {
        match arg {
            ArgValue::Offset(p) => {
                key.push(0xfe);
                key.push(p.shape_tag());
            }
            other => {
                let rec = model::CallRecord {
                    func: call.func,
                    args: vec![other.clone()],
                    thread_id: 0,
                    call_depth: 0,
                    t_entry: 0,
                    t_exit: 0,
                };
                let bytes = model::make_signature(&rec).into_bytes();
                // Skip the fixed 8-byte header and the argument count.
                key.extend_from_slice(&bytes[8..]);
            }
        }
    }
    key
}

/// Rewrite rank-linear coefficients in a group of shape-aligned calls.
/// Returns false when nothing was rewritten.
fn rewrite_group(calls: &mut [model::DecodedCall]) -> bool {
    let argc = calls[0].args.len();
    let mut changed = false;
    for slot in 0..argc {
        if !matches!(calls[0].args[slot], ArgValue::Offset(_)) {
            continue;
        }
        for coeff_idx in 0..2 {
            let values: Option<Vec<i64>> = calls
                .iter()
                .map(|c| match &c.args[slot] {
                    ArgValue::Offset(p) => coeff_of(p, coeff_idx).and_then(|c| c.fixed_value()),
                    _ => None,
                })
                .collect();
            let Some(values) = values else { continue };
            let Some((slope, base)) = recognize_rank_linear(&values) else {
                continue;
            };
            for call in calls.iter_mut() {
                if let ArgValue::Offset(p) = &mut call.args[slot] {
                    set_coeff(p, coeff_idx, Coeff::RankLinear { slope, base });
                }
            }
            changed = true;
        }
    }
    changed
}

fn coeff_of(p: &OffsetPattern, idx: usize) -> Option<Coeff> {
    match (p, idx) {
        (OffsetPattern::Literal(c), 0) => Some(*c),
        (OffsetPattern::IterLinear { step, .. }, 0) => Some(*step),
        (OffsetPattern::IterLinear { start, .. }, 1) => Some(*start),
        _ => None,
    }
}

fn set_coeff(p: &mut OffsetPattern, idx: usize, c: Coeff) {
    match (p, idx) {
        (OffsetPattern::Literal(v), 0) => *v = c,
        (OffsetPattern::IterLinear { step, .. }, 0) => *step = c,
        (OffsetPattern::IterLinear { start, .. }, 1) => *start = c,
        _ => {}
    }
}

/// Group-wide unique ids for collectively opened files.
///
/// Every rank of a collective open gets the same id for its local handle, so
/// later calls on that file produce identical signatures on every rank even
/// when the local descriptor values differ.
#[derive(Debug, Default)]
pub struct HandleRegistry {
    inner: Mutex<HandleState>,
}

#[derive(Debug, Default)]
struct HandleState {
    next_id: u32,
    by_rank: HashMap<(u32, u32), u32>,
}

impl HandleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Map each rank's local handle to one fresh group-wide id.
    ///
    /// Ids are sequential from 0 in open order. A rank whose handle is
    /// already mapped fails the whole open with `DoubleOpen`.
    pub fn collective_open(&self, handles: &[(u32, u32)]) -> Result<u32, PatternError> {
        let mut st = self.inner.lock().unwrap();
        for &(rank, handle) in handles {
            if st.by_rank.contains_key(&(rank, handle)) {
                return Err(PatternError::DoubleOpen { rank, handle });
            }
        }
        let id = st.next_id;
        st.next_id += 1;
        for &(rank, handle) in handles {
            st.by_rank.insert((rank, handle), id);
        }
        Ok(id)
    }

    /// Group-wide id for a rank's local handle, if one was assigned.
    pub fn lookup(&self, rank: u32, handle: u32) -> Option<u32> {
        self.inner.lock().unwrap().by_rank.get(&(rank, handle)).copied()
    }
}
