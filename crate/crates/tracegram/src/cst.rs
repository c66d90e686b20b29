//! Call signature tables: dense interning of canonical signatures.
//!
//! Each rank interns every recorded call's signature into its own table and
//! feeds only the small integer index to the grammar builder, so the grammar
//! works over a dense terminal alphabet. At finalization the per-rank tables
//! are merged into one table plus per-rank index remaps.

use std::collections::HashMap;
use std::sync::RwLock;

use thiserror::Error;

use crate::model::CallSignature;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CstError {
    #[error("signature table is full")]
    TableFull,
    #[error("no entry at index {0}")]
    BadIndex(u32),
    #[error("replacement signature already interned at a different index")]
    DuplicateSignature,
    #[error("malformed signature table at byte {at}: {reason}")]
    Malformed { at: usize, reason: &'static str },
}

/// Highest index a table may hand out.
const MAX_INDEX: u32 = u32::MAX - 1;

#[derive(Debug, Default)]
struct TableInner {
    by_sig: HashMap<CallSignature, u32>,
    entries: Vec<(CallSignature, u64)>,
}

/// Append-only signature/index bijection with occurrence counts.
///
/// Interning is internally synchronized; application threads of one rank may
/// intern concurrently. Indices are dense and assigned in first-appearance
/// order, which makes a table a deterministic function of its intern
/// sequence.
#[derive(Debug, Default)]
pub struct SignatureTable {
    inner: RwLock<TableInner>,
}

impl SignatureTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index for a signature, assigning the next free index on first sight
    /// and bumping the occurrence count every time.
    pub fn intern(&self, sig: CallSignature) -> Result<u32, CstError> {
        let mut inner = self.inner.write().unwrap();
        if let Some(&idx) = inner.by_sig.get(&sig) {
            inner.entries[idx as usize].1 += 1;
            return Ok(idx);
        }
        if inner.entries.len() as u64 > MAX_INDEX as u64 {
            return Err(CstError::TableFull);
        }
        let idx = inner.entries.len() as u32;
        inner.by_sig.insert(sig.clone(), idx);
        inner.entries.push((sig, 1));
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, sig: &CallSignature) -> Option<u32> {
        self.inner.read().unwrap().by_sig.get(sig).copied()
    }

    pub fn index_of_bytes(&self, bytes: &[u8]) -> Option<u32> {
        // Temporary key; signatures hash by their bytes.
        let key = CallSignature::from_bytes(bytes.to_vec());
        self.index_of(&key)
    }

    pub fn signature_at(&self, idx: u32) -> Option<CallSignature> {
        self.inner
            .read()
            .unwrap()
            .entries
            .get(idx as usize)
            .map(|(s, _)| s.clone())
    }

    pub fn count_at(&self, idx: u32) -> Option<u64> {
        self.inner
            .read()
            .unwrap()
            .entries
            .get(idx as usize)
            .map(|&(_, c)| c)
    }

    /// Snapshot of all entries as `(index, signature, count)` in index order.
    pub fn entries(&self) -> std::vec::IntoIter<(u32, CallSignature, u64)> {
        let inner = self.inner.read().unwrap();
        inner
            .entries
            .iter()
            .enumerate()
            .map(|(i, (s, c))| (i as u32, s.clone(), *c))
            .collect::<Vec<_>>()
            .into_iter()
    }

    /// Swap the signature stored at `idx`, keeping index and count.
    ///
    /// Fails if the new signature already names a different entry; the
    /// table's bijection is never broken.
    pub fn replace_signature(&self, idx: u32, sig: CallSignature) -> Result<(), CstError> {
        let mut inner = self.inner.write().unwrap();
        if idx as usize >= inner.entries.len() {
            return Err(CstError::BadIndex(idx));
        }
        if let Some(&existing) = inner.by_sig.get(&sig) {
            if existing == idx {
                return Ok(());
            }
            return Err(CstError::DuplicateSignature);
        }
        let old = inner.entries[idx as usize].0.clone();
        inner.by_sig.remove(&old);
        inner.by_sig.insert(sig.clone(), idx);
        inner.entries[idx as usize].0 = sig;
        Ok(())
    }

    /// Deep copy; tables are not `Clone` because of the interior lock.
    pub fn clone_table(&self) -> SignatureTable {
        let inner = self.inner.read().unwrap();
        let copy = TableInner {
            by_sig: inner.by_sig.clone(),
            entries: inner.entries.clone(),
        };
        SignatureTable {
            inner: RwLock::new(copy),
        }
    }

    /// Little-endian byte form: entry count, then each entry as signature
    /// length, signature bytes, occurrence count.
    pub fn serialize(&self) -> Vec<u8> {
        let inner = self.inner.read().unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(&(inner.entries.len() as u32).to_le_bytes());
        for (sig, count) in &inner.entries {
            out.extend_from_slice(&(sig.len() as u32).to_le_bytes());
            out.extend_from_slice(sig.as_bytes());
            out.extend_from_slice(&count.to_le_bytes());
        }
        out
    }

    /// Inverse of [`serialize`](Self::serialize); offsets in errors are
    /// relative to `bytes`.
    pub fn deserialize(bytes: &[u8]) -> Result<SignatureTable, CstError> {
        let read_u32 = |at: usize| -> Result<u32, CstError> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or(CstError::Malformed {
                    at,
                    reason: "truncated",
                })
        };
        let count = read_u32(0)? as usize;
        // Every entry needs at least its length and count fields.
        if count > bytes.len() / 12 {
            return Err(CstError::Malformed {
                at: 0,
                reason: "entry count larger than file can hold",
            });
        }
        let mut inner = TableInner {
            by_sig: HashMap::with_capacity(count),
            entries: Vec::with_capacity(count),
        };
        let mut at = 4usize;
        for _ in 0..count {
            let len = read_u32(at)? as usize;
            at += 4;
            let raw = bytes.get(at..at + len).ok_or(CstError::Malformed {
                at,
                reason: "signature extends past end",
            })?;
            let sig = CallSignature::from_bytes(raw.to_vec());
            at += len;
            let cnt = bytes
                .get(at..at + 8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                .ok_or(CstError::Malformed {
                    at,
                    reason: "truncated count",
                })?;
            at += 8;
            let idx = inner.entries.len() as u32;
            if inner.by_sig.insert(sig.clone(), idx).is_some() {
                return Err(CstError::Malformed {
                    at,
                    reason: "duplicate signature",
                });
            }
            inner.entries.push((sig, cnt));
        }
        if at != bytes.len() {
            return Err(CstError::Malformed {
                at,
                reason: "trailing bytes",
            });
        }
        Ok(SignatureTable {
            inner: RwLock::new(inner),
        })
    }
}

/// Merge per-rank tables into one table plus per-rank index remaps.
///
/// Entries are scanned rank 0 first, each rank in index order, and keep
/// their first-appearance position; occurrence counts of shared signatures
/// are summed. `remaps[r][i]` is the merged index of rank `r`'s entry `i`.
pub fn merge_tables(tables: &[SignatureTable]) -> Result<(SignatureTable, Vec<Vec<u32>>), CstError> {
    let merged = SignatureTable::new();
    let mut remaps = Vec::with_capacity(tables.len());
    for table in tables {
        let inner = table.inner.read().unwrap();
        let mut remap = Vec::with_capacity(inner.entries.len());
        for (sig, count) in &inner.entries {
            let mut m = merged.inner.write().unwrap();
            let idx = match m.by_sig.get(sig) {
                Some(&idx) => {
                    m.entries[idx as usize].1 += count;
                    idx
                }
                None => {
                    if m.entries.len() as u64 > MAX_INDEX as u64 {
                        return Err(CstError::TableFull);
                    }
                    let idx = m.entries.len() as u32;
                    m.by_sig.insert(sig.clone(), idx);
                    m.entries.push((sig.clone(), *count));
                    idx
                }
            };
            remap.push(idx);
        }
        remaps.push(remap);
    }
    Ok((merged, remaps))
}
