//! Exporting an archive to external formats plus summary statistics.
//!
//! Converts a small collective-write archive into a Chrome trace-viewer
//! timeline (load it at ui.perfetto.dev or chrome://tracing) and a flat CSV
//! table, and prints the per-function statistics report.

use std::path::PathBuf;

use tracegram::archive::convert::{to_chrome_timeline, to_columnar};
use tracegram::archive::stats::stats;
use tracegram::harness::{run_workload, WorkloadKind, WorkloadSpec};
use tracegram::ArchiveReader;

fn main() {
    let spec = WorkloadSpec::new(WorkloadKind::IorLike {
        p: 4,
        block: 1 << 20,
        transfer: 1 << 18,
    });

    let dir = scratch_dir("export_formats");
    run_workload(&spec, &dir).expect("workload runs");
    let reader = ArchiveReader::open(&dir).expect("archive opens");

    let timeline_path = dir.join("timeline.json");
    let mut out = std::fs::File::create(&timeline_path).unwrap();
    to_chrome_timeline(&reader, &mut out).expect("timeline export");
    let timeline = std::fs::read_to_string(&timeline_path).unwrap();
    let events: serde_json::Value = serde_json::from_str(&timeline).unwrap();
    println!(
        "chrome timeline: {} events, {} bytes -> {}",
        events.as_array().unwrap().len(),
        timeline.len(),
        timeline_path.display()
    );
    println!("first event: {}", events[0]);

    let csv_path = dir.join("calls.csv");
    let out = std::fs::File::create(&csv_path).unwrap();
    to_columnar(&reader, out).expect("csv export");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    println!("\ncsv: {} lines -> {}", csv.lines().count(), csv_path.display());
    for line in csv.lines().take(4) {
        println!("  {}", line);
    }

    let report = stats(&reader).expect("stats");
    println!("\n{}", report);
    println!(
        "as json: {}",
        serde_json::to_string_pretty(&report).unwrap()
    );

    std::fs::remove_dir_all(&dir).ok();
}

fn scratch_dir(tag: &str) -> PathBuf {
    let mut dir = std::env::temp_dir();
    dir.push(format!("tracegram-example-{}-{}", tag, std::process::id()));
    dir
}
