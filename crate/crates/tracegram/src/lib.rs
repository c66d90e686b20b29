//! Grammar-based compression for parallel I/O call traces.
//!
//! An HPC application running on `P` ranks issues millions of I/O calls, but
//! almost all of them are instances of a handful of patterns: the same
//! function, called at the same nesting depth, with arguments that either
//! repeat exactly or advance by a fixed stride. This crate exploits that
//! structure three ways:
//!
//! * each rank's call stream is interned into a [call signature
//!   table](cst::SignatureTable) and compressed online into a context-free
//!   grammar by a run-length variant of the Sequitur algorithm
//!   ([`grammar::Grammar`]),
//! * file offsets that advance linearly within a rank are folded into
//!   `i*step + start` terms, and offsets that differ linearly *across* ranks
//!   are folded into `rank*slope + base` terms ([`pattern`]),
//! * at finalization the per-rank tables are merged, grammars are rewritten
//!   onto the merged table and deduplicated, and the result is written as a
//!   small five-file archive ([`archive`]) from which every call of every
//!   rank can be reproduced exactly, timestamps included.
//!
//! The [`harness`] module generates synthetic multi-rank workloads (nested
//! write loops, strided shared-file access, checkpoint series, collective
//! aggregation, ...) and retains an independent oracle of every recorded call
//! so archives can be verified bit-for-bit. A thin `tracegram` binary exposes
//! the same machinery as subcommands (`gen`, `verify`, `dump`, `convert`,
//! `stats`, `bench`).
//!
//! The `examples/` directory is the best starting point; each example is a
//! runnable tour of one capability:
//!
//! ```text
//! cargo run --example build_grammar      # online grammar inference
//! cargo run --example offset_patterns    # within-rank offset folding
//! cargo run --example multi_rank_merge   # cross-rank merge + dedup
//! cargo run --example trace_session      # recording API: depth, threads, filters
//! cargo run --example archive_roundtrip  # write, read back, verify lossless
//! cargo run --example export_formats     # Chrome trace JSON and CSV output
//! cargo run --example scaling_bench      # archive size vs. rank count
//! ```

pub mod archive;
pub mod cli;
pub mod cst;
pub mod finalize;
pub mod grammar;
pub mod harness;
pub mod model;
pub mod pattern;
pub mod session;

pub use archive::{write_archive, ArchiveMeta, ArchiveReader};
pub use cst::SignatureTable;
pub use finalize::finalize_trace;
pub use grammar::Grammar;
pub use harness::{run_workload, verify_archive, WorkloadKind, WorkloadSpec};
pub use model::{ArgValue, CallRecord, FunctionId, FunctionRegistry};
pub use session::RankTracer;
