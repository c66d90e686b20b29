//! Merging per-rank traces: dedup identical grammars, fold rank offsets.
//!
//! Four ranks interleave chunks of a shared file. Each rank's offsets differ
//! (rank r starts at r*chunk), so the per-rank signature tables differ in
//! one constant. Finalization merges the tables, recognizes that the
//! constant is linear in the rank, rewrites it as `rank*slope + base`, and
//! after that rewrite all four grammars are identical, so the archive keeps
//! exactly one.

use std::sync::Arc;

use tracegram::finalize::finalize_trace;
use tracegram::model::{ArgValue, FunctionRegistry};
use tracegram::pattern::HandleRegistry;
use tracegram::session::RankTracer;

fn main() {
    let registry = Arc::new(FunctionRegistry::new());
    let lseek = registry.register("lseek", 2, &[1]).unwrap();
    let write = registry.register("write", 2, &[]).unwrap();
    let handles = Arc::new(HandleRegistry::new());

    let (p, m, chunk) = (4u32, 50i64, 4096i64);

    let mut locals = Vec::new();
    for rank in 0..p {
        let tracer = RankTracer::new(rank, Arc::clone(&registry), Arc::clone(&handles));
        for i in 0..m {
            let offset = i64::from(rank) * chunk + i * i64::from(p) * chunk;
            let tok = tracer.begin_call(0, lseek).unwrap();
            tracer
                .end_call(tok, vec![ArgValue::Handle(3), ArgValue::Int(offset)])
                .unwrap();
            let tok = tracer.begin_call(0, write).unwrap();
            tracer
                .end_call(tok, vec![ArgValue::Handle(3), ArgValue::Int(chunk)])
                .unwrap();
        }
        let local = tracer.finalize_rank().unwrap();
        println!(
            "rank {}: {} calls, {} signatures, {} grammar rules",
            rank,
            local.recorded,
            local.table.len(),
            local.grammar.rule_count()
        );
        locals.push(local);
    }

    let merged = finalize_trace(locals, true).unwrap();
    println!(
        "\nmerged: {} signatures across all ranks",
        merged.merged_table.len()
    );
    println!(
        "unique grammars after dedup: {} (index per rank: {:?})",
        merged.unique_grammars.len(),
        merged.cfg_index
    );
    assert_eq!(merged.unique_grammars.len(), 1);
    assert_eq!(merged.cfg_index, vec![0, 0, 0, 0]);

    // The rank-dependent seek offset now lives in the shared table as a
    // rank*slope + base term; print the folded signatures.
    for (idx, sig, count) in merged.merged_table.entries() {
        let call = tracegram::model::decode_signature(sig.as_bytes()).unwrap();
        let name = registry.name(call.func).unwrap();
        println!("  signature {}: {} x{} args {:?}", idx, name, count, call.args);
    }
}
