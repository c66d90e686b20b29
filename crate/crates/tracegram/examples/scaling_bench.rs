//! Archive size versus rank count, with and without cross-rank folding.
//!
//! Sweeps a strided workload from 2 to 64 ranks twice. With cross-rank
//! offset folding the grammar and signature payload is identical at every
//! scale (only the tiny per-rank index and timestamp blocks grow); with
//! folding disabled each rank keeps its own offsets, so the core payload
//! grows with the rank count.

use std::path::PathBuf;

use tracegram::harness::{
    bench_sweep, scaled_spec, write_bench_csv, SweepAxis, WorkloadKind, WorkloadSpec,
};

fn main() {
    let scales: Vec<u64> = vec![2, 4, 8, 16, 32, 64];
    let base = WorkloadSpec::new(WorkloadKind::StridedShared {
        p: 2,
        m: 500,
        chunk: 4096,
    });

    let scratch = scratch_dir("scaling_bench");
    std::fs::create_dir_all(&scratch).unwrap();

    let folded = bench_sweep(&base, SweepAxis::Ranks, &scales, &scratch).expect("sweep runs");

    let mut unfolded_base = base.clone();
    unfolded_base.inter_pattern = false;
    let unfolded =
        bench_sweep(&unfolded_base, SweepAxis::Ranks, &scales, &scratch).expect("sweep runs");

    println!("core payload = grammars.dat + cst.dat\n");
    println!(
        "{:>6} {:>18} {:>18} {:>16}",
        "ranks", "core (folded)", "core (unfolded)", "unique grammars"
    );
    for (f, u) in folded.iter().zip(&unfolded) {
        println!(
            "{:>6} {:>18} {:>18} {:>10} vs {:<3}",
            f.scale_param,
            f.core_bytes(),
            u.core_bytes(),
            f.unique_grammars,
            u.unique_grammars
        );
    }

    assert!(folded.windows(2).all(|w| w[0].core_bytes() == w[1].core_bytes()));
    assert!(unfolded.windows(2).all(|w| w[0].core_bytes() < w[1].core_bytes()));

    let csv_path = scratch.join("sweep.csv");
    let out = std::fs::File::create(&csv_path).unwrap();
    write_bench_csv(&folded, out).unwrap();
    println!("\nfolded sweep written to {}", csv_path.display());

    // scaled_spec is the piece the sweep is made of; it pins one axis and
    // rescales the other, so it can also drive custom experiments.
    let at_32 = scaled_spec(&base, SweepAxis::Ranks, 32).unwrap();
    println!("spec at 32 ranks: {}", serde_json::to_string(&at_32).unwrap());

    std::fs::remove_dir_all(&scratch).ok();
}

fn scratch_dir(tag: &str) -> PathBuf {
    let mut dir = std::env::temp_dir();
    dir.push(format!("tracegram-example-{}-{}", tag, std::process::id()));
    dir
}
