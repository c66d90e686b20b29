//! On-disk trace archive: a five-file directory holding the compressed
//! trace, a bit-deterministic writer, and a validating reader that
//! decompresses back to full call records.
//!
//! Layout: `grammars.dat` (deduplicated grammars), `cst.dat` (merged
//! signature table), `index.dat` (per-rank grammar index),
//! `timestamps.dat` (per-rank deflate blocks), `meta.txt` (sorted
//! `key=value` text). Each binary file opens with magic `RCTG`, format
//! version, and a CRC-32 of the remaining bytes, all little-endian.

pub mod convert;
pub mod stats;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cst::{CstError, SignatureTable};
use crate::finalize::{unpack_timestamps, MergeResult};
use crate::grammar::{Grammar, GrammarError};
use crate::model::{
    decode_signature, masked_key_by_type, ArgValue, CallRecord, FunctionInfo, FunctionRegistry,
};
use crate::pattern::OffsetDecoder;
use crate::session::FilterConfig;

pub const MAGIC: &[u8; 4] = b"RCTG";
pub const FORMAT_VERSION: u32 = 1;

pub const GRAMMARS_FILE: &str = "grammars.dat";
pub const CST_FILE: &str = "cst.dat";
pub const INDEX_FILE: &str = "index.dat";
pub const TIMESTAMPS_FILE: &str = "timestamps.dat";
pub const META_FILE: &str = "meta.txt";

/// Default seconds per clock tick (4-byte tick storage at 100 ns).
pub const DEFAULT_TIME_RESOLUTION: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt archive: {file} at byte {offset}: {reason}")]
    CorruptArchive {
        file: String,
        offset: usize,
        reason: String,
    },
    #[error("invalid metadata: {reason}")]
    BadMeta { reason: String },
    #[error("rank {rank} out of range (archive has {count} rank(s))")]
    RankOutOfRange { rank: u32, count: u32 },
}

fn corrupt(file: &str, offset: usize, reason: impl Into<String>) -> ArchiveError {
    ArchiveError::CorruptArchive {
        file: file.to_string(),
        offset,
        reason: reason.into(),
    }
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = flate2::Crc::new();
    crc.update(bytes);
    crc.sum()
}

/// Everything about a trace that is not the compressed stream itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveMeta {
    /// Registered functions in id order.
    pub functions: Vec<FunctionInfo>,
    pub rank_count: u32,
    /// Seconds per clock tick.
    pub time_resolution: f64,
    pub filter: Option<FilterConfig>,
    /// Free-form extra pairs (e.g. the generating workload); keys must not
    /// collide with the reserved ones.
    pub extra: BTreeMap<String, String>,
}

impl ArchiveMeta {
    pub fn new(functions: Vec<FunctionInfo>, rank_count: u32) -> ArchiveMeta {
        ArchiveMeta {
            functions,
            rank_count,
            time_resolution: DEFAULT_TIME_RESOLUTION,
            filter: None,
            extra: BTreeMap::new(),
        }
    }

    fn to_text(&self) -> Result<String, ArchiveError> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in &self.extra {
            pairs.insert(k.clone(), v.clone());
        }
        pairs.insert("codec".into(), "deflate".into());
        pairs.insert("format_version".into(), FORMAT_VERSION.to_string());
        pairs.insert("rank_count".into(), self.rank_count.to_string());
        pairs.insert("time_resolution".into(), format!("{:e}", self.time_resolution));
        pairs.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
        for (id, f) in self.functions.iter().enumerate() {
            let slots = f
                .offset_slots
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(";");
            pairs.insert(format!("func.{id}"), format!("{}|{}|{}", f.arity, slots, f.name));
        }
        if let Some(filter) = &self.filter {
            pairs.insert(
                "filter_prefixes".into(),
                serde_json::to_string(&filter.prefixes).unwrap(),
            );
            let layers = match &filter.enabled_layers {
                None => "all".to_string(),
                Some(set) => {
                    serde_json::to_string(&set.iter().collect::<Vec<_>>()).unwrap()
                }
            };
            pairs.insert("filter_layers".into(), layers);
        }
        let mut out = String::new();
        for (k, v) in &pairs {
            if k.contains('=') || k.contains('\n') || v.contains('\n') || k.is_empty() {
                return Err(ArchiveError::BadMeta {
                    reason: format!("key {k:?} or its value cannot be encoded"),
                });
            }
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        Ok(out)
    }

    fn from_text(text: &str) -> Result<ArchiveMeta, ArchiveError> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        let mut offset = 0usize;
        for line in text.split('\n') {
            if !line.is_empty() {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| corrupt(META_FILE, offset, "line without '='"))?;
                if pairs.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(corrupt(META_FILE, offset, format!("duplicate key {k:?}")));
                }
            }
            offset += line.len() + 1;
        }
        let mut take = |key: &str| -> Result<String, ArchiveError> {
            pairs
                .remove(key)
                .ok_or_else(|| corrupt(META_FILE, 0, format!("missing key {key:?}")))
        };
        let version = take("format_version")?;
        if version != FORMAT_VERSION.to_string() {
            return Err(corrupt(
                META_FILE,
                0,
                format!("unsupported format version {version:?}"),
            ));
        }
        let codec = take("codec")?;
        if codec != "deflate" {
            return Err(corrupt(META_FILE, 0, format!("unsupported codec {codec:?}")));
        }
        let rank_count: u32 = take("rank_count")?
            .parse()
            .map_err(|_| corrupt(META_FILE, 0, "rank_count is not an integer"))?;
        let time_resolution: f64 = take("time_resolution")?
            .parse()
            .map_err(|_| corrupt(META_FILE, 0, "time_resolution is not a number"))?;
        if !(time_resolution.is_finite() && time_resolution > 0.0) {
            return Err(corrupt(META_FILE, 0, "time_resolution must be positive"));
        }
        let _ = pairs.remove("tool_version");
        let mut funcs: BTreeMap<u16, FunctionInfo> = BTreeMap::new();
        let func_keys: Vec<String> = pairs
            .keys()
            .filter(|k| k.starts_with("func."))
            .cloned()
            .collect();
        for key in func_keys {
            let value = pairs.remove(&key).unwrap();
            let id: u16 = key["func.".len()..]
                .parse()
                .map_err(|_| corrupt(META_FILE, 0, format!("bad function key {key:?}")))?;
            let mut parts = value.splitn(3, '|');
            let (arity, slots, name) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(s), Some(n)) => (a, s, n),
                _ => return Err(corrupt(META_FILE, 0, format!("bad function entry {key:?}"))),
            };
            let arity: u8 = arity
                .parse()
                .map_err(|_| corrupt(META_FILE, 0, format!("bad arity in {key:?}")))?;
            let mut offset_slots = Vec::new();
            for s in slots.split(';').filter(|s| !s.is_empty()) {
                offset_slots.push(
                    s.parse::<u8>()
                        .map_err(|_| corrupt(META_FILE, 0, format!("bad slot in {key:?}")))?,
                );
            }
            if name.is_empty() {
                return Err(corrupt(META_FILE, 0, format!("empty name in {key:?}")));
            }
            funcs.insert(
                id,
                FunctionInfo {
                    name: name.to_string(),
                    arity,
                    offset_slots,
                    layer: String::new(),
                },
            );
        }
        let mut functions = Vec::with_capacity(funcs.len());
        for (want, (id, info)) in funcs.into_iter().enumerate() {
            if id as usize != want {
                return Err(corrupt(
                    META_FILE,
                    0,
                    format!("function ids not dense: missing func.{want}"),
                ));
            }
            functions.push(info);
        }
        // Normalize through the registry (re-derives layer tags).
        let registry = FunctionRegistry::from_snapshot(&functions)
            .map_err(|e| corrupt(META_FILE, 0, format!("bad function registry: {e}")))?;
        let functions = registry.snapshot();
        let filter = match pairs.remove("filter_prefixes") {
            None => {
                pairs.remove("filter_layers");
                None
            }
            Some(prefixes) => {
                let prefixes: Vec<String> = serde_json::from_str(&prefixes)
                    .map_err(|_| corrupt(META_FILE, 0, "filter_prefixes is not a JSON list"))?;
                let enabled_layers = match pairs.remove("filter_layers").as_deref() {
                    None | Some("all") => None,
                    Some(json) => {
                        let layers: Vec<String> = serde_json::from_str(json).map_err(|_| {
                            corrupt(META_FILE, 0, "filter_layers is not a JSON list")
                        })?;
                        Some(layers.into_iter().collect())
                    }
                };
                Some(FilterConfig {
                    prefixes,
                    enabled_layers,
                })
            }
        };
        Ok(ArchiveMeta {
            functions,
            rank_count,
            time_resolution,
            filter,
            extra: pairs,
        })
    }
}

fn write_chunk(path: &Path, body: &[u8]) -> io::Result<()> {
    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&crc32(body).to_le_bytes());
    out.extend_from_slice(body);
    fs::write(path, out)
}

/// Validate a binary file's header and return its body.
fn read_chunk(dir: &Path, name: &str) -> Result<(Vec<u8>, u64), ArchiveError> {
    let bytes = fs::read(dir.join(name)).map_err(|e| corrupt(name, 0, format!("unreadable: {e}")))?;
    let size = bytes.len() as u64;
    if bytes.len() < 12 {
        return Err(corrupt(name, bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(corrupt(name, 0, "bad magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(name, 4, format!("unsupported version {version}")));
    }
    let stored = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let body = bytes[12..].to_vec();
    if crc32(&body) != stored {
        return Err(corrupt(name, 8, "checksum mismatch"));
    }
    Ok((body, size))
}

struct Cursor<'a> {
    file: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(file: &'static str, bytes: &'a [u8]) -> Self {
        Cursor { file, bytes, pos: 0 }
    }

    /// File-relative offset of the read position (header included).
    fn at(&self) -> usize {
        self.pos + 12
    }

    fn u32(&mut self) -> Result<u32, ArchiveError> {
        let b = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| corrupt(self.file, self.at(), "truncated"))?;
        self.pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn slice(&mut self, len: usize) -> Result<&'a [u8], ArchiveError> {
        let b = self
            .bytes
            .get(self.pos..self.pos + len)
            .ok_or_else(|| corrupt(self.file, self.at(), "truncated"))?;
        self.pos += len;
        Ok(b)
    }

    fn finish(&self) -> Result<(), ArchiveError> {
        if self.pos != self.bytes.len() {
            return Err(corrupt(self.file, self.at(), "trailing bytes"));
        }
        Ok(())
    }
}

/// Write a finalized trace to `dir`. Output is byte-identical for equal
/// inputs.
pub fn write_archive(result: &MergeResult, meta: &ArchiveMeta, dir: &Path) -> Result<(), ArchiveError> {
    let ranks = result.cfg_index.len();
    if ranks != meta.rank_count as usize || ranks != result.packed_timestamps.len() {
        return Err(ArchiveError::BadMeta {
            reason: format!(
                "rank_count {} does not match trace ({} index, {} timestamp blocks)",
                meta.rank_count,
                ranks,
                result.packed_timestamps.len()
            ),
        });
    }
    let meta_text = meta.to_text()?;
    fs::create_dir_all(dir)?;

    let mut grammars = Vec::new();
    grammars.extend_from_slice(&(result.unique_grammars.len() as u32).to_le_bytes());
    for g in &result.unique_grammars {
        let bytes = g.serialize();
        grammars.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        grammars.extend_from_slice(&bytes);
    }
    write_chunk(&dir.join(GRAMMARS_FILE), &grammars)?;

    write_chunk(&dir.join(CST_FILE), &result.merged_table.serialize())?;

    let mut index = Vec::new();
    index.extend_from_slice(&(ranks as u32).to_le_bytes());
    for &i in &result.cfg_index {
        index.extend_from_slice(&i.to_le_bytes());
    }
    write_chunk(&dir.join(INDEX_FILE), &index)?;

    let mut ts = Vec::new();
    ts.extend_from_slice(&(ranks as u32).to_le_bytes());
    for block in &result.packed_timestamps {
        ts.extend_from_slice(&(block.len() as u32).to_le_bytes());
    }
    for block in &result.packed_timestamps {
        ts.extend_from_slice(block);
    }
    write_chunk(&dir.join(TIMESTAMPS_FILE), &ts)?;

    fs::write(dir.join(META_FILE), meta_text)?;
    Ok(())
}

/// A fully validated archive, ready for decompression and conversion.
#[derive(Debug)]
pub struct ArchiveReader {
    dir: PathBuf,
    meta: ArchiveMeta,
    registry: FunctionRegistry,
    grammars: Vec<Grammar>,
    table: SignatureTable,
    cfg_index: Vec<u32>,
    timestamps: Vec<Vec<(u32, u32)>>,
    file_bytes: BTreeMap<String, u64>,
}

impl ArchiveReader {
    /// Open and validate all five files. Any structural damage surfaces
    /// here or in `read_records`, never as a panic.
    pub fn open(dir: &Path) -> Result<ArchiveReader, ArchiveError> {
        let mut file_bytes = BTreeMap::new();

        let meta_text = fs::read_to_string(dir.join(META_FILE))
            .map_err(|e| corrupt(META_FILE, 0, format!("unreadable: {e}")))?;
        file_bytes.insert(META_FILE.to_string(), meta_text.len() as u64);
        let meta = ArchiveMeta::from_text(&meta_text)?;
        let registry = FunctionRegistry::from_snapshot(&meta.functions)
            .map_err(|e| corrupt(META_FILE, 0, format!("bad function registry: {e}")))?;

        let (body, size) = read_chunk(dir, GRAMMARS_FILE)?;
        file_bytes.insert(GRAMMARS_FILE.to_string(), size);
        let mut cur = Cursor::new(GRAMMARS_FILE, &body);
        let count = cur.u32()? as usize;
        if count > body.len() / 4 {
            return Err(corrupt(GRAMMARS_FILE, 12, "grammar count larger than file"));
        }
        let mut grammars = Vec::with_capacity(count);
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let start = cur.at();
            let bytes = cur.slice(len)?;
            let g = Grammar::deserialize(bytes).map_err(|e| match e {
                GrammarError::Malformed { at, reason } => corrupt(GRAMMARS_FILE, start + at, reason),
                other => corrupt(GRAMMARS_FILE, start, other.to_string()),
            })?;
            grammars.push(g);
        }
        cur.finish()?;

        let (body, size) = read_chunk(dir, CST_FILE)?;
        file_bytes.insert(CST_FILE.to_string(), size);
        let table = SignatureTable::deserialize(&body).map_err(|e| match e {
            CstError::Malformed { at, reason } => corrupt(CST_FILE, at + 12, reason),
            other => corrupt(CST_FILE, 12, other.to_string()),
        })?;

        let (body, size) = read_chunk(dir, INDEX_FILE)?;
        file_bytes.insert(INDEX_FILE.to_string(), size);
        let mut cur = Cursor::new(INDEX_FILE, &body);
        let ranks = cur.u32()? as usize;
        if ranks != meta.rank_count as usize {
            return Err(corrupt(
                INDEX_FILE,
                12,
                format!("rank count {} does not match metadata {}", ranks, meta.rank_count),
            ));
        }
        let mut cfg_index = Vec::with_capacity(ranks);
        for _ in 0..ranks {
            let at = cur.at();
            let i = cur.u32()?;
            if i as usize >= grammars.len() {
                return Err(corrupt(
                    INDEX_FILE,
                    at,
                    format!("grammar index {i} out of range ({} grammars)", grammars.len()),
                ));
            }
            cfg_index.push(i);
        }
        cur.finish()?;

        let (body, size) = read_chunk(dir, TIMESTAMPS_FILE)?;
        file_bytes.insert(TIMESTAMPS_FILE.to_string(), size);
        let mut cur = Cursor::new(TIMESTAMPS_FILE, &body);
        let ts_ranks = cur.u32()? as usize;
        if ts_ranks != meta.rank_count as usize {
            return Err(corrupt(
                TIMESTAMPS_FILE,
                12,
                format!("rank count {} does not match metadata {}", ts_ranks, meta.rank_count),
            ));
        }
        let mut lens = Vec::with_capacity(ts_ranks);
        for _ in 0..ts_ranks {
            lens.push(cur.u32()? as usize);
        }
        let mut timestamps = Vec::with_capacity(ts_ranks);
        for len in lens {
            let at = cur.at();
            let block = cur.slice(len)?;
            let pairs = unpack_timestamps(block)
                .map_err(|e| corrupt(TIMESTAMPS_FILE, at, e.to_string()))?;
            timestamps.push(pairs);
        }
        cur.finish()?;

        Ok(ArchiveReader {
            dir: dir.to_path_buf(),
            meta,
            registry,
            grammars,
            table,
            cfg_index,
            timestamps,
            file_bytes,
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &ArchiveMeta {
        &self.meta
    }

    pub fn registry(&self) -> &FunctionRegistry {
        &self.registry
    }

    pub fn rank_count(&self) -> u32 {
        self.meta.rank_count
    }

    pub fn unique_grammar_count(&self) -> usize {
        self.grammars.len()
    }

    pub fn grammar_for_rank(&self, rank: u32) -> Option<&Grammar> {
        self.cfg_index
            .get(rank as usize)
            .map(|&i| &self.grammars[i as usize])
    }

    pub fn table(&self) -> &SignatureTable {
        &self.table
    }

    /// Actual on-disk size of each archive file.
    pub fn file_bytes(&self) -> &BTreeMap<String, u64> {
        &self.file_bytes
    }

    /// Decompress one rank back to its full record stream.
    pub fn read_records(&self, rank: u32) -> Result<Vec<CallRecord>, ArchiveError> {
        if rank as usize >= self.cfg_index.len() {
            return Err(ArchiveError::RankOutOfRange {
                rank,
                count: self.cfg_index.len() as u32,
            });
        }
        let ts = &self.timestamps[rank as usize];
        let grammar = &self.grammars[self.cfg_index[rank as usize] as usize];
        let terminals = grammar
            .expand_with_limit(ts.len() as u64)
            .map_err(|e| corrupt(GRAMMARS_FILE, 12, e.to_string()))?;
        if terminals.len() != ts.len() {
            return Err(corrupt(
                TIMESTAMPS_FILE,
                12,
                format!(
                    "rank {rank}: grammar expands to {} record(s) but timestamp block holds {}",
                    terminals.len(),
                    ts.len()
                ),
            ));
        }
        let mut decoder = OffsetDecoder::new();
        let mut records = Vec::with_capacity(terminals.len());
        for (k, &t) in terminals.iter().enumerate() {
            let sig = self
                .table
                .signature_at(t)
                .ok_or_else(|| corrupt(CST_FILE, 12, format!("terminal {t} out of range")))?;
            let decoded = decode_signature(sig.as_bytes())
                .map_err(|e| corrupt(CST_FILE, 12, format!("signature {t}: {e}")))?;
            let key = masked_key_by_type(
                decoded.func,
                decoded.call_depth,
                decoded.thread_id,
                &decoded.args,
            );
            let mut args = decoded.args;
            for arg in args.iter_mut() {
                if let ArgValue::Offset(p) = arg {
                    *arg = ArgValue::Int(decoder.decode(&key, p, rank));
                }
            }
            records.push(CallRecord {
                func: decoded.func,
                args,
                thread_id: decoded.thread_id,
                call_depth: decoded.call_depth,
                t_entry: ts[k].0,
                t_exit: ts[k].1,
            });
        }
        Ok(records)
    }
}


#[cfg(test)]
mod tests {
    use super::tests_support::{registry, strided_archive, strided_locals};
    use super::*;
    use crate::finalize::finalize_trace;
    use crate::pattern::HandleRegistry;
    use crate::session::RankTracer;
    use std::sync::Arc;

    fn write_strided(dir: &Path, p: u32, m: u32, chunk: i64) -> ArchiveMeta {
        strided_archive(dir, p, m, chunk)
    }

    #[test]
    fn roundtrip_preserves_records_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let meta = write_strided(dir.path(), 2, 2, 10);
        let reader = ArchiveReader::open(dir.path()).unwrap();
        assert_eq!(reader.meta(), &meta);
        assert_eq!(reader.rank_count(), 2);
        assert_eq!(reader.unique_grammar_count(), 1);
        let recs = reader.read_records(1).unwrap();
        assert_eq!(recs.len(), 4);
        // lseek offsets for rank 1: rank*10 + i*2*10 = 10, 30.
        let offsets: Vec<i64> = recs
            .iter()
            .filter(|r| r.func.0 == 0)
            .map(|r| match r.args[1] {
                ArgValue::Int(v) => v,
                _ => panic!("offset not decoded"),
            })
            .collect();
        assert_eq!(offsets, vec![10, 30]);
        // Timestamps attach in stream order, entry < exit.
        for r in &recs {
            assert!(r.t_entry < r.t_exit);
        }
    }

    #[test]
    fn writes_are_bit_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_strided(a.path(), 4, 3, 8);
        write_strided(b.path(), 4, 3, 8);
        for name in [GRAMMARS_FILE, CST_FILE, INDEX_FILE, TIMESTAMPS_FILE, META_FILE] {
            let x = fs::read(a.path().join(name)).unwrap();
            let y = fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name} differs between identical runs");
        }
    }

    #[test]
    fn empty_single_rank_archive_reads_back_empty() {
        let reg = registry();
        let t = RankTracer::new(0, Arc::clone(&reg), Arc::new(HandleRegistry::new()));
        let result = finalize_trace(vec![t.finalize_rank().unwrap()], true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_archive(&result, &ArchiveMeta::new(reg.snapshot(), 1), dir.path()).unwrap();
        let reader = ArchiveReader::open(dir.path()).unwrap();
        assert_eq!(reader.read_records(0).unwrap(), vec![]);
        assert!(matches!(
            reader.read_records(1),
            Err(ArchiveError::RankOutOfRange { rank: 1, count: 1 })
        ));
    }

    #[test]
    fn header_damage_is_located() {
        let dir = tempfile::tempdir().unwrap();
        write_strided(dir.path(), 2, 2, 10);
        // Magic.
        let path = dir.path().join(CST_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        match ArchiveReader::open(dir.path()) {
            Err(ArchiveError::CorruptArchive { file, offset: 0, .. }) => {
                assert_eq!(file, CST_FILE)
            }
            other => panic!("expected corrupt cst.dat, got {other:?}"),
        }
        bytes[0] ^= 0xff;
        // Version.
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        match ArchiveReader::open(dir.path()) {
            Err(ArchiveError::CorruptArchive { file, offset: 4, .. }) => {
                assert_eq!(file, CST_FILE)
            }
            other => panic!("expected version error, got {other:?}"),
        }
        bytes[4] = 1;
        // Body byte: caught by the checksum.
        let last = bytes.len() - 1;
        bytes[last] ^= 0x10;
        fs::write(&path, &bytes).unwrap();
        match ArchiveReader::open(dir.path()) {
            Err(ArchiveError::CorruptArchive { file, offset: 8, reason }) => {
                assert_eq!(file, CST_FILE);
                assert!(reason.contains("checksum"));
            }
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_strided(dir.path(), 2, 2, 10);
        let path = dir.path().join(INDEX_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..5]).unwrap();
        assert!(matches!(
            ArchiveReader::open(dir.path()),
            Err(ArchiveError::CorruptArchive { .. })
        ));
        fs::remove_file(&path).unwrap();
        assert!(matches!(
            ArchiveReader::open(dir.path()),
            Err(ArchiveError::CorruptArchive { .. })
        ));
    }

    #[test]
    fn mismatched_rank_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let reg = registry();
        let result = finalize_trace(strided_locals(&reg, 2, 2, 10), true).unwrap();
        let meta = ArchiveMeta::new(reg.snapshot(), 3);
        assert!(matches!(
            write_archive(&result, &meta, dir.path()),
            Err(ArchiveError::BadMeta { .. })
        ));
    }

    #[test]
    fn meta_filter_and_extra_roundtrip() {
        let reg = registry();
        let result = finalize_trace(strided_locals(&reg, 1, 1, 4), true).unwrap();
        let mut meta = ArchiveMeta::new(reg.snapshot(), 1);
        meta.filter = Some(FilterConfig {
            prefixes: vec!["/scratch".into(), "/projects=x".into()],
            enabled_layers: Some(["posix".to_string(), "mpi".to_string()].into_iter().collect()),
        });
        meta.extra.insert("workload".into(), "{\"kind\":\"demo\"}".into());
        let dir = tempfile::tempdir().unwrap();
        write_archive(&result, &meta, dir.path()).unwrap();
        let reader = ArchiveReader::open(dir.path()).unwrap();
        assert_eq!(reader.meta(), &meta);
        assert_eq!(reader.meta().extra["workload"], "{\"kind\":\"demo\"}");
    }
}
