//! Summary statistics computed from an archive without decompressing
//! the full record stream.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::model::decode_signature;

use super::{corrupt, ArchiveError, ArchiveReader, CST_FILE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionStats {
    pub name: String,
    pub layer: String,
    pub calls: u64,
    pub unique_signatures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub rank_count: u32,
    pub total_records: u64,
    pub unique_grammars: usize,
    pub merged_signatures: usize,
    pub per_function: Vec<FunctionStats>,
    pub file_bytes: BTreeMap<String, u64>,
}

/// Tally call counts per function from the merged signature table and
/// combine with structural sizes. Cheap: never expands a grammar.
pub fn stats(reader: &ArchiveReader) -> Result<StatsReport, ArchiveError> {
    let mut by_func: BTreeMap<u16, (u64, u64)> = BTreeMap::new();
    let mut total = 0u64;
    for (idx, sig, count) in reader.table().entries() {
        let decoded = decode_signature(sig.as_bytes())
            .map_err(|e| corrupt(CST_FILE, 12, format!("signature {idx}: {e}")))?;
        let slot = by_func.entry(decoded.func.0).or_insert((0, 0));
        slot.0 += count;
        slot.1 += 1;
        total += count;
    }
    let mut per_function = Vec::with_capacity(by_func.len());
    for (func, (calls, unique)) in by_func {
        let info = reader
            .registry()
            .info(crate::model::FunctionId(func))
            .map_err(|_| corrupt(CST_FILE, 12, format!("unregistered function {func}")))?;
        per_function.push(FunctionStats {
            name: info.name.clone(),
            layer: info.layer.clone(),
            calls,
            unique_signatures: unique,
        });
    }
    Ok(StatsReport {
        rank_count: reader.rank_count(),
        total_records: total,
        unique_grammars: reader.unique_grammar_count(),
        merged_signatures: reader.table().len(),
        per_function,
        file_bytes: reader.file_bytes().clone(),
    })
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ranks:             {}", self.rank_count)?;
        writeln!(f, "records:           {}", self.total_records)?;
        writeln!(f, "unique grammars:   {}", self.unique_grammars)?;
        writeln!(f, "merged signatures: {}", self.merged_signatures)?;
        writeln!(f, "per function (calls / unique signatures):")?;
        for fs in &self.per_function {
            writeln!(
                f,
                "  {:<24} {:>10} / {:<6} [{}]",
                fs.name, fs.calls, fs.unique_signatures, fs.layer
            )?;
        }
        writeln!(f, "file bytes:")?;
        for (name, bytes) in &self.file_bytes {
            writeln!(f, "  {name:<16} {bytes:>10}")?;
        }
        Ok(())
    }
}
