//! Inter-process finalization: one pass over all per-rank states that
//! rewrites rank-linear offset coefficients, merges signature tables,
//! renames grammar terminals into the merged space, deduplicates the
//! grammars, and deflate-packs the timestamp logs.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::cst::{merge_tables, CstError, SignatureTable};
use crate::grammar::{grammar_equal, Grammar, GrammarError};
use crate::pattern::finalize_patterns;
use crate::session::RankLocal;

/// Ceiling on one rank's unpacked timestamp block (bytes).
const UNPACK_LIMIT: u64 = 1 << 30;

#[derive(Debug, Error)]
pub enum FinalizeError {
    #[error("rank states must cover ranks 0..P-1 in order; found rank {found} at position {position}")]
    BadRankSet { position: usize, found: u32 },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Table(#[from] CstError),
    #[error("timestamp block: {reason}")]
    Codec { reason: String },
}

/// The trace after inter-process compression, ready for the archive writer.
#[derive(Debug)]
pub struct MergeResult {
    pub merged_table: SignatureTable,
    /// Pairwise distinct grammars, in first-appearance rank order.
    pub unique_grammars: Vec<Grammar>,
    /// Per rank, which unique grammar reproduces its stream.
    pub cfg_index: Vec<u32>,
    /// Per rank, the deflate-packed timestamp block.
    pub packed_timestamps: Vec<Vec<u8>>,
}

/// Run the full finalization pipeline over all ranks' frozen states.
///
/// `inter_patterns` gates the cross-rank coefficient rewrite; everything
/// downstream is unconditional. Output is deterministic for equal input.
pub fn finalize_trace(
    rank_locals: Vec<RankLocal>,
    inter_patterns: bool,
) -> Result<MergeResult, FinalizeError> {
    for (position, local) in rank_locals.iter().enumerate() {
        if local.rank as usize != position {
            return Err(FinalizeError::BadRankSet {
                position,
                found: local.rank,
            });
        }
    }
    let tables: Vec<SignatureTable> = rank_locals.iter().map(|l| l.table.clone_table()).collect();
    let tables = if inter_patterns {
        finalize_patterns(&tables)
    } else {
        tables
    };
    let (merged_table, remaps) = merge_tables(&tables)?;
    let mut unique_grammars: Vec<Grammar> = Vec::new();
    let mut unique_bytes: Vec<Vec<u8>> = Vec::new();
    let mut cfg_index = Vec::with_capacity(rank_locals.len());
    let mut packed_timestamps = Vec::with_capacity(rank_locals.len());
    for (local, remap) in rank_locals.iter().zip(&remaps) {
        let remapped = local.grammar.remap_terminals(remap)?;
        let bytes = remapped.serialize();
        let slot = unique_bytes.iter().position(|b| *b == bytes);
        let slot = match slot {
            Some(i) => i,
            None => {
                debug_assert!(unique_grammars.iter().all(|g| !grammar_equal(g, &remapped)));
                unique_bytes.push(bytes);
                unique_grammars.push(remapped);
                unique_grammars.len() - 1
            }
        };
        cfg_index.push(slot as u32);
        packed_timestamps.push(pack_timestamps(&local.timestamps));
    }
    Ok(MergeResult {
        merged_table,
        unique_grammars,
        cfg_index,
        packed_timestamps,
    })
}

/// Deflate-pack a timestamp log. The raw block is the little-endian
/// (entry, exit) u32 pairs in call order: 8 bytes per recorded call.
pub fn pack_timestamps(log: &[(u32, u32)]) -> Vec<u8> {
    let mut raw = Vec::with_capacity(log.len() * 8);
    for (entry, exit) in log {
        raw.extend_from_slice(&entry.to_le_bytes());
        raw.extend_from_slice(&exit.to_le_bytes());
    }
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&raw).expect("in-memory deflate cannot fail");
    enc.finish().expect("in-memory deflate cannot fail")
}

/// Exact inverse of [`pack_timestamps`].
pub fn unpack_timestamps(packed: &[u8]) -> Result<Vec<(u32, u32)>, FinalizeError> {
    let mut dec = DeflateDecoder::new(packed);
    let mut raw = Vec::new();
    dec.by_ref()
        .take(UNPACK_LIMIT)
        .read_to_end(&mut raw)
        .map_err(|e| FinalizeError::Codec {
            reason: format!("deflate: {e}"),
        })?;
    if raw.len() as u64 >= UNPACK_LIMIT {
        return Err(FinalizeError::Codec {
            reason: "unpacked block exceeds size limit".into(),
        });
    }
    if (dec.total_in() as usize) < packed.len() {
        return Err(FinalizeError::Codec {
            reason: "trailing bytes after deflate stream".into(),
        });
    }
    if raw.len() % 8 != 0 {
        return Err(FinalizeError::Codec {
            reason: "block length is not a multiple of 8".into(),
        });
    }
    Ok(raw
        .chunks_exact(8)
        .map(|c| {
            (
                u32::from_le_bytes(c[0..4].try_into().unwrap()),
                u32::from_le_bytes(c[4..8].try_into().unwrap()),
            )
        })
        .collect())
}
