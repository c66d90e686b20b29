//! The recording API: nesting depth, threads, and capture filters.
//!
//! A tracer wraps each call in begin/end tokens. Nesting is tracked per
//! thread (a collective write that internally issues a pwrite records the
//! child at depth 1), two threads record concurrently without mixing their
//! stacks, and a filter can restrict capture to a path prefix while still
//! following the descriptors that open returns.

use std::sync::Arc;

use tracegram::model::{decode_signature, ArgValue, FunctionRegistry};
use tracegram::pattern::HandleRegistry;
use tracegram::session::{FilterConfig, RankTracer};

fn main() {
    let registry = Arc::new(FunctionRegistry::new());
    let open = registry.register("open", 2, &[]).unwrap();
    let mpi_write = registry.register("MPI_File_write_at", 3, &[1]).unwrap();
    let pwrite = registry.register("pwrite", 3, &[2]).unwrap();
    let handles = Arc::new(HandleRegistry::new());

    // Depth: the collective call opens before its nested pwrite closes after.
    let tracer = RankTracer::new(0, Arc::clone(&registry), Arc::clone(&handles));
    let outer = tracer.begin_call(0, mpi_write).unwrap();
    let inner = tracer.begin_call(0, pwrite).unwrap();
    tracer
        .end_call(
            inner,
            vec![ArgValue::Handle(7), ArgValue::Int(65536), ArgValue::Int(0)],
        )
        .unwrap();
    tracer
        .end_call(
            outer,
            vec![ArgValue::Handle(9), ArgValue::Int(0), ArgValue::Int(65536)],
        )
        .unwrap();

    // Threads: each thread id keeps its own call stack.
    let t0 = tracer.begin_call(0, pwrite).unwrap();
    let t1 = tracer.begin_call(1, pwrite).unwrap();
    tracer
        .end_call(
            t1,
            vec![ArgValue::Handle(3), ArgValue::Int(100), ArgValue::Int(0)],
        )
        .unwrap();
    tracer
        .end_call(
            t0,
            vec![ArgValue::Handle(3), ArgValue::Int(100), ArgValue::Int(0)],
        )
        .unwrap();

    let local = tracer.finalize_rank().unwrap();
    println!("unfiltered session: {} calls recorded", local.recorded);
    for (idx, sig, count) in local.table.entries() {
        let call = decode_signature(sig.as_bytes()).unwrap();
        println!(
            "  signature {}: {} depth={} thread={} x{}",
            idx,
            registry.name(call.func).unwrap(),
            call.call_depth,
            call.thread_id,
            count
        );
    }

    // Filters: keep only calls touching checkpoint files. The open's path
    // argument matches the prefix, and the handle it returns is tracked so
    // the follow-up pwrite on that handle is kept too; the scratch-file
    // calls disappear.
    let filter = FilterConfig {
        prefixes: vec!["/ckpt/".to_string()],
        enabled_layers: None,
    };
    let tracer = RankTracer::new(0, Arc::clone(&registry), Arc::clone(&handles))
        .with_filter(filter)
        .unwrap();

    for (path, fd) in [("/ckpt/step42.dat", 5u32), ("/scratch/tmp.dat", 6u32)] {
        let tok = tracer.begin_call(0, open).unwrap();
        tracer
            .end_call(
                tok,
                vec![ArgValue::Str(path.to_string()), ArgValue::Handle(fd)],
            )
            .unwrap();
        let tok = tracer.begin_call(0, pwrite).unwrap();
        tracer
            .end_call(
                tok,
                vec![ArgValue::Handle(fd), ArgValue::Int(4096), ArgValue::Int(0)],
            )
            .unwrap();
    }

    let local = tracer.finalize_rank().unwrap();
    println!("\nfiltered to /ckpt/: {} calls recorded", local.recorded);
    assert_eq!(local.recorded, 2);
    for (_, sig, _) in local.table.entries() {
        let call = decode_signature(sig.as_bytes()).unwrap();
        println!(
            "  kept: {} args {:?}",
            registry.name(call.func).unwrap(),
            call.args
        );
    }
}
