//! Scaling sweeps: run one workload at several scales and tabulate archive
//! sizes and structural counts, CSV-ready.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::archive::{
    ArchiveReader, CST_FILE, GRAMMARS_FILE, INDEX_FILE, TIMESTAMPS_FILE,
};

use super::{run_workload, HarnessError, WorkloadKind, WorkloadSpec};

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Rank count `p`.
    Ranks,
    /// Iteration count: `m` where the kind has one, `len` for random
    /// workloads, block/transfer ratio for ior_like.
    Iterations,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BenchRow {
    pub scale_param: u64,
    pub grammars_bytes: u64,
    pub cst_bytes: u64,
    pub index_bytes: u64,
    pub timestamps_bytes: u64,
    pub unique_grammars: u64,
    pub cst_entries: u64,
}

impl BenchRow {
    /// Size of the structural core (grammars + signature table), the part
    /// that stays constant under cross-rank pattern recognition.
    pub fn core_bytes(&self) -> u64 {
        self.grammars_bytes + self.cst_bytes
    }
}

/// `base` with its swept parameter replaced by `value`.
pub fn scaled_spec(
    base: &WorkloadSpec,
    axis: SweepAxis,
    value: u64,
) -> Result<WorkloadSpec, HarnessError> {
    let mut spec = base.clone();
    let v32 = u32::try_from(value).map_err(|_| HarnessError::InvalidSpec {
        reason: format!("scale value {value} too large"),
    })?;
    match (axis, &mut spec.kind) {
        (SweepAxis::Ranks, WorkloadKind::StridedShared { p, .. })
        | (SweepAxis::Ranks, WorkloadKind::IorLike { p, .. })
        | (SweepAxis::Ranks, WorkloadKind::CheckpointSeries { p, .. })
        | (SweepAxis::Ranks, WorkloadKind::CollectiveAgg { p, .. }) => *p = v32,
        (SweepAxis::Ranks, WorkloadKind::SerialNested { .. })
        | (SweepAxis::Ranks, WorkloadKind::Random { .. }) => {
            return Err(HarnessError::InvalidSpec {
                reason: "this workload kind has no rank parameter".to_string(),
            })
        }
        (SweepAxis::Iterations, WorkloadKind::SerialNested { m, .. })
        | (SweepAxis::Iterations, WorkloadKind::StridedShared { m, .. })
        | (SweepAxis::Iterations, WorkloadKind::CollectiveAgg { m, .. }) => *m = v32,
        (SweepAxis::Iterations, WorkloadKind::CheckpointSeries { iters_per_file, .. }) => {
            *iters_per_file = v32
        }
        (SweepAxis::Iterations, WorkloadKind::Random { len, .. }) => *len = v32,
        (SweepAxis::Iterations, WorkloadKind::IorLike { block, transfer, .. }) => {
            *block = (value as i64).checked_mul(*transfer).ok_or_else(|| {
                HarnessError::InvalidSpec {
                    reason: "block size overflows".to_string(),
                }
            })?
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Run `base` once per scale value, writing each archive under `scratch`,
/// and collect one row per run.
pub fn bench_sweep(
    base: &WorkloadSpec,
    axis: SweepAxis,
    values: &[u64],
    scratch: &Path,
) -> Result<Vec<BenchRow>, HarnessError> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let spec = scaled_spec(base, axis, value)?;
        let dir = scratch.join(format!("sweep-{value}"));
        run_workload(&spec, &dir)?;
        let reader = ArchiveReader::open(&dir)?;
        let bytes = reader.file_bytes();
        rows.push(BenchRow {
            scale_param: value,
            grammars_bytes: bytes[GRAMMARS_FILE],
            cst_bytes: bytes[CST_FILE],
            index_bytes: bytes[INDEX_FILE],
            timestamps_bytes: bytes[TIMESTAMPS_FILE],
            unique_grammars: reader.unique_grammar_count() as u64,
            cst_entries: reader.table().len() as u64,
        });
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scale_param",
        "grammars_bytes",
        "cst_bytes",
        "index_bytes",
        "timestamps_bytes",
        "unique_grammars",
        "cst_entries",
    ])
    .map_err(to_io)?;
    for row in rows {
        w.write_record(&[
            row.scale_param.to_string(),
            row.grammars_bytes.to_string(),
            row.cst_bytes.to_string(),
            row.index_bytes.to_string(),
            row.timestamps_bytes.to_string(),
            row.unique_grammars.to_string(),
            row.cst_entries.to_string(),
        ])
        .map_err(to_io)?;
    }
    w.flush()
}

fn to_io(e: csv::Error) -> io::Error {
    io::Error::new(io::ErrorKind::Other, e)
}

/// Parse a sweep argument: `"8"` is a single value, `"2..64"` doubles from
/// the start until the inclusive end (2, 4, 8, ..., 64).
pub fn parse_scale_range(text: &str) -> Option<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let start: u64 = a.parse().ok()?;
        let end: u64 = b.parse().ok()?;
        if start == 0 || end < start {
            return None;
        }
        let mut values = Vec::new();
        let mut v = start;
        while v <= end {
            values.push(v);
            v = v.checked_mul(2)?;
        }
        Some(values)
    } else {
        let v: u64 = text.parse().ok()?;
        if v == 0 {
            None
        } else {
            Some(vec![v])
        }
    }
}
