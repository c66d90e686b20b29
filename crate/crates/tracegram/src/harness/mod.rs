//! Workload harness: deterministic multi-rank simulations that drive the
//! tracer, an independently computed oracle of every record the tracer
//! should keep, archive verification against that oracle, and scaling
//! sweeps.
//!
//! The oracle never looks inside the tracer: it re-derives clocks, call
//! depths, filtering, and handle substitution from the program alone, so a
//! defect anywhere in the compression pipeline shows up as a verification
//! mismatch instead of being copied into the expectation.

mod bench;
mod program;

pub use bench::{bench_sweep, parse_scale_range, scaled_spec, write_bench_csv, BenchRow, SweepAxis};
pub use program::{build_plan, Call, Plan, Program};

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{write_archive, ArchiveError, ArchiveMeta, ArchiveReader};
use crate::finalize::{finalize_trace, FinalizeError};
use crate::model::{ArgValue, CallRecord, FunctionRegistry, ModelError};
use crate::pattern::PatternError;
use crate::session::{FilterConfig, RankTracer, SessionError};

/// Metadata key under which an archive stores its generating workload.
pub const WORKLOAD_KEY: &str = "workload";

fn default_true() -> bool {
    true
}

fn default_threads() -> u8 {
    1
}

/// Shape and parameters of one synthetic workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadKind {
    /// One rank, `m` outer iterations of `n` equal-sized writes plus fsync.
    SerialNested { m: u32, n: u32, size: u32 },
    /// `p` ranks interleave chunks of a shared file: rank r seeks to
    /// `r*chunk + i*p*chunk` then writes `chunk` bytes, `m` times.
    StridedShared { p: u32, m: u32, chunk: i64 },
    /// `p` ranks collectively open one shared file, then each writes its
    /// `block`-byte region in `transfer`-byte pieces.
    IorLike { p: u32, block: i64, transfer: i64 },
    /// Every rank writes a series of plot files, many iterations each; new
    /// call shapes appear only when a new file opens.
    CheckpointSeries {
        p: u32,
        files: u32,
        iters_per_file: u32,
    },
    /// Collective aggregation: the first few ranks write coalesced chunks
    /// on behalf of everyone, the rest only send their data.
    CollectiveAgg {
        p: u32,
        aggregators: u32,
        m: u32,
        chunk: i64,
    },
    /// One rank, `len` calls drawn pseudo-randomly from the first
    /// `alphabet` operation templates.
    Random { seed: u64, len: u32, alphabet: u32 },
}

/// A complete run description: workload shape, optional filtering, and
/// pattern-recognition toggles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    #[serde(flatten)]
    pub kind: WorkloadKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
    #[serde(default = "default_true")]
    pub intra_pattern: bool,
    #[serde(default = "default_true")]
    pub inter_pattern: bool,
    /// 1 or 2 application threads per rank (2 tags alternate calls).
    #[serde(default = "default_threads")]
    pub threads: u8,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind) -> WorkloadSpec {
        WorkloadSpec {
            kind,
            filter: None,
            intra_pattern: true,
            inter_pattern: true,
            threads: 1,
        }
    }

    pub fn rank_count(&self) -> u32 {
        match self.kind {
            WorkloadKind::SerialNested { .. } | WorkloadKind::Random { .. } => 1,
            WorkloadKind::StridedShared { p, .. }
            | WorkloadKind::IorLike { p, .. }
            | WorkloadKind::CheckpointSeries { p, .. }
            | WorkloadKind::CollectiveAgg { p, .. } => p,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |reason: &str| {
            Err(HarnessError::InvalidSpec {
                reason: reason.to_string(),
            })
        };
        if !(self.threads == 1 || self.threads == 2) {
            return bad("threads must be 1 or 2");
        }
        if let Some(filter) = &self.filter {
            filter.validate()?;
        }
        match self.kind {
            WorkloadKind::SerialNested { m, n, size } => {
                if m < 1 || n < 1 || size < 1 {
                    return bad("serial_nested requires m, n, size >= 1");
                }
            }
            WorkloadKind::StridedShared { p, m, chunk } => {
                if p < 1 || m < 1 || chunk < 1 {
                    return bad("strided_shared requires p, m, chunk >= 1");
                }
            }
            WorkloadKind::IorLike { p, block, transfer } => {
                if p < 1 || block < 1 || transfer < 1 {
                    return bad("ior_like requires p, block, transfer >= 1");
                }
            }
            WorkloadKind::CheckpointSeries {
                p,
                files,
                iters_per_file,
            } => {
                if p < 1 || files < 1 || iters_per_file < 1 {
                    return bad("checkpoint_series requires p, files, iters_per_file >= 1");
                }
            }
            WorkloadKind::CollectiveAgg {
                p,
                aggregators,
                m,
                chunk,
            } => {
                if p < 1 || aggregators < 1 || m < 1 || chunk < 1 {
                    return bad("collective_agg requires p, aggregators, m, chunk >= 1");
                }
                if aggregators > p {
                    return bad("collective_agg requires aggregators <= p");
                }
            }
            WorkloadKind::Random { len, alphabet, .. } => {
                if len < 1 || alphabet < 1 {
                    return bad("random requires len, alphabet >= 1");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid workload: {reason}")]
    InvalidSpec { reason: String },
    #[error("archive carries no workload description")]
    NoWorkload,
    #[error("stored workload does not parse: {0}")]
    BadWorkload(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Finalize(#[from] FinalizeError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The uncompressed truth: every record each rank's tracer should have
/// kept, in stream order, with exact timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleLog {
    pub ranks: Vec<Vec<CallRecord>>,
}

impl OracleLog {
    pub fn total_records(&self) -> u64 {
        self.ranks.iter().map(|r| r.len() as u64).sum()
    }
}

/// Issue one call (and its nested children) to a tracer.
pub fn drive_call(tracer: &RankTracer, call: &Call) -> Result<(), SessionError> {
    let token = tracer.begin_call(call.tid, call.func)?;
    for child in &call.children {
        drive_call(tracer, child)?;
    }
    tracer.end_call(token, call.args.clone())?;
    Ok(())
}

/// Run a workload: drive every rank through a tracer, finalize, write the
/// archive into `dir`, and return the independently computed oracle.
/// Identical specs produce byte-identical archives.
pub fn run_workload(spec: &WorkloadSpec, dir: &Path) -> Result<OracleLog, HarnessError> {
    let plan = build_plan(spec)?;
    let oracle = oracle_for_plan(spec, &plan);
    let mut locals = Vec::with_capacity(plan.programs.len());
    for program in &plan.programs {
        let mut tracer = RankTracer::new(
            program.rank,
            plan.registry.clone(),
            plan.handles.clone(),
        )
        .with_intra_patterns(spec.intra_pattern);
        if let Some(filter) = &spec.filter {
            tracer = tracer.with_filter(filter.clone())?;
        }
        for phase in &program.phases {
            for call in phase {
                drive_call(&tracer, call)?;
            }
        }
        let local = tracer.finalize_rank()?;
        debug_assert_eq!(
            local.recorded as usize,
            oracle.ranks[program.rank as usize].len(),
            "tracer and oracle disagree on kept-call count for rank {}",
            program.rank
        );
        locals.push(local);
    }
    let result = finalize_trace(locals, spec.inter_pattern)?;
    let mut meta = ArchiveMeta::new(plan.registry.snapshot(), spec.rank_count());
    meta.filter = spec.filter.clone();
    meta.extra.insert(
        WORKLOAD_KEY.to_string(),
        serde_json::to_string(spec).expect("workload specs always serialize"),
    );
    write_archive(&result, &meta, dir)?;
    Ok(oracle)
}

/// Compute the oracle alone, without tracers or file output.
pub fn build_oracle(spec: &WorkloadSpec) -> Result<OracleLog, HarnessError> {
    let plan = build_plan(spec)?;
    Ok(oracle_for_plan(spec, &plan))
}

fn oracle_for_plan(spec: &WorkloadSpec, plan: &Plan) -> OracleLog {
    let ranks = plan
        .programs
        .iter()
        .map(|program| {
            let mut state = OracleState {
                registry: &plan.registry,
                uid_map: &plan.uid_map,
                filter: spec.filter.as_ref(),
                rank: program.rank,
                clock: 0,
                tracked: HashSet::new(),
                records: Vec::new(),
            };
            for phase in &program.phases {
                for call in phase {
                    state.walk(call, 0);
                }
            }
            state.records
        })
        .collect();
    OracleLog { ranks }
}

/// Re-implementation of the recording semantics used only for checking:
/// entry and exit each advance the clock by one tick whether or not the
/// call is kept; children complete before their parent; filtering and
/// handle substitution match the tracer's contract.
struct OracleState<'a> {
    registry: &'a FunctionRegistry,
    uid_map: &'a HashMap<(u32, u32), u32>,
    filter: Option<&'a FilterConfig>,
    rank: u32,
    clock: u32,
    tracked: HashSet<u32>,
    records: Vec<CallRecord>,
}

impl OracleState<'_> {
    fn walk(&mut self, call: &Call, depth: u8) {
        let t_entry = self.clock;
        self.clock = self.clock.wrapping_add(1);
        for child in &call.children {
            self.walk(child, depth + 1);
        }
        let t_exit = self.clock;
        self.clock = self.clock.wrapping_add(1);
        if !self.keep(call) {
            return;
        }
        let args = call
            .args
            .iter()
            .map(|a| match a {
                ArgValue::Handle(h) => match self.uid_map.get(&(self.rank, *h)) {
                    Some(&uid) => ArgValue::UniqueHandle(uid),
                    None => a.clone(),
                },
                other => other.clone(),
            })
            .collect();
        self.records.push(CallRecord {
            func: call.func,
            args,
            thread_id: call.tid,
            call_depth: depth,
            t_entry,
            t_exit,
        });
    }

    fn keep(&mut self, call: &Call) -> bool {
        let Some(filter) = self.filter else {
            return true;
        };
        if let Some(layers) = &filter.enabled_layers {
            let layer = self
                .registry
                .info(call.func)
                .map(|i| i.layer.clone())
                .unwrap_or_default();
            if !layers.contains(&layer) {
                return false;
            }
        }
        let path = call.args.iter().find_map(|a| match a {
            ArgValue::Str(s) => Some(s.as_str()),
            _ => None,
        });
        let keep = if let Some(path) = path {
            filter.prefixes.is_empty() || filter.prefixes.iter().any(|p| path.starts_with(p))
        } else if filter.prefixes.is_empty() {
            true
        } else {
            let handles: Vec<u32> = call
                .args
                .iter()
                .filter_map(|a| match a {
                    ArgValue::Handle(h) => Some(*h),
                    _ => None,
                })
                .collect();
            if handles.is_empty() {
                true
            } else {
                handles.iter().any(|h| self.tracked.contains(h))
            }
        };
        if keep && path.is_some() {
            for a in &call.args {
                if let ArgValue::Handle(h) = a {
                    self.tracked.insert(*h);
                }
            }
        }
        keep
    }
}

/// Outcome of checking an archive against its regenerated oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub rank_count: u32,
    pub records_checked: u64,
    pub mismatches: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            write!(
                f,
                "ok: {} record(s) across {} rank(s) match the oracle",
                self.records_checked, self.rank_count
            )
        } else {
            writeln!(
                f,
                "FAILED: {} mismatch(es) over {} rank(s)",
                self.mismatches.len(),
                self.rank_count
            )?;
            for m in &self.mismatches {
                writeln!(f, "  {m}")?;
            }
            Ok(())
        }
    }
}

const MISMATCH_LIMIT: usize = 8;

/// Decompress `dir` and compare every record of every rank, timestamps
/// included, against an oracle rebuilt from the workload stored in the
/// archive's own metadata.
pub fn verify_archive(dir: &Path) -> Result<VerifyReport, HarnessError> {
    let reader = ArchiveReader::open(dir)?;
    let json = reader
        .meta()
        .extra
        .get(WORKLOAD_KEY)
        .ok_or(HarnessError::NoWorkload)?;
    let spec: WorkloadSpec =
        serde_json::from_str(json).map_err(|e| HarnessError::BadWorkload(e.to_string()))?;
    let oracle = build_oracle(&spec)?;
    let mut report = VerifyReport {
        rank_count: reader.rank_count(),
        records_checked: 0,
        mismatches: Vec::new(),
    };
    let note = |report: &mut VerifyReport, msg: String| {
        if report.mismatches.len() < MISMATCH_LIMIT {
            report.mismatches.push(msg);
        }
    };
    if reader.meta().filter != spec.filter {
        note(
            &mut report,
            "metadata filter differs from the stored workload's filter".to_string(),
        );
    }
    if reader.rank_count() as usize != oracle.ranks.len() {
        note(
            &mut report,
            format!(
                "archive has {} rank(s), workload implies {}",
                reader.rank_count(),
                oracle.ranks.len()
            ),
        );
        return Ok(report);
    }
    for rank in 0..reader.rank_count() {
        let got = reader.read_records(rank)?;
        let want = &oracle.ranks[rank as usize];
        if got.len() != want.len() {
            note(
                &mut report,
                format!(
                    "rank {rank}: decoded {} record(s), oracle holds {}",
                    got.len(),
                    want.len()
                ),
            );
            continue;
        }
        for (i, (g, w)) in got.iter().zip(want).enumerate() {
            report.records_checked += 1;
            if g != w {
                note(
                    &mut report,
                    format!("rank {rank} record {i}: decoded {g:?}, oracle {w:?}"),
                );
            }
        }
    }
    Ok(report)
}
