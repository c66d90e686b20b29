//! Command-line front end over the harness and archive modules.
//!
//! Exit codes: 0 success, 1 verification failure (or other runtime error),
//! 2 usage error, 3 corrupt archive.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::archive::{convert, stats, ArchiveError, ArchiveReader};
use crate::harness::{
    bench_sweep, parse_scale_range, run_workload, scaled_spec, verify_archive, write_bench_csv,
    HarnessError, SweepAxis, WorkloadKind, WorkloadSpec,
};
use crate::model::ArgValue;
use crate::session::FilterConfig;

#[derive(Parser)]
#[command(
    name = "tracegram",
    version,
    about = "Grammar-compressed I/O trace toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an archive from a synthetic workload.
    Gen(GenArgs),
    /// Re-derive the workload's oracle and check the archive against it.
    Verify { archive: PathBuf },
    /// Print decompressed records as text.
    Dump {
        archive: PathBuf,
        /// Restrict to one rank.
        #[arg(long)]
        rank: Option<u32>,
    },
    /// Convert an archive to an interchange format.
    Convert {
        archive: PathBuf,
        #[arg(long, value_enum)]
        format: ConvertFormat,
        /// Output file (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Summarize an archive.
    Stats {
        archive: PathBuf,
        /// Emit machine-readable JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Sweep rank or iteration count and tabulate archive sizes as CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ConvertFormat {
    Chrome,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Serial,
    Strided,
    Ior,
    Checkpoint,
    Collective,
    Random,
}

/// Parameters shared by `gen` and `bench` (everything except p and m,
/// which bench treats as sweepable).
#[derive(Args)]
struct CommonParams {
    /// Writes per iteration (serial).
    #[arg(long, default_value_t = 4)]
    n: u32,
    /// Bytes per write (serial).
    #[arg(long, default_value_t = 4096)]
    size: u32,
    /// Chunk bytes (strided, collective).
    #[arg(long, default_value_t = 1024)]
    chunk: i64,
    /// Per-rank region bytes (ior).
    #[arg(long, default_value_t = 1 << 20)]
    block: i64,
    /// Transfer bytes per write (ior).
    #[arg(long, default_value_t = 1 << 18)]
    transfer: i64,
    /// File count (checkpoint).
    #[arg(long, default_value_t = 5)]
    files: u32,
    /// Iterations per file (checkpoint).
    #[arg(long, default_value_t = 10)]
    iters_per_file: u32,
    /// Requested aggregator count (collective).
    #[arg(long, default_value_t = 8)]
    aggregators: u32,
    /// RNG seed (random).
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Call count (random).
    #[arg(long, default_value_t = 100)]
    len: u32,
    /// Operation templates in play, 1-6 (random).
    #[arg(long, default_value_t = 6)]
    alphabet: u32,
    /// Store offsets verbatim instead of folding within-rank patterns.
    #[arg(long)]
    no_intra_pattern: bool,
    /// Skip cross-rank coefficient folding at finalization.
    #[arg(long)]
    no_inter_pattern: bool,
    /// Keep only paths with one of these prefixes (repeatable).
    #[arg(long)]
    filter_prefix: Vec<String>,
    /// Keep only these layers: posix, mpi, hdf5 (repeatable).
    #[arg(long)]
    filter_layer: Vec<String>,
    /// Application threads per rank (1 or 2).
    #[arg(long, default_value_t = 1)]
    threads: u8,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Rank count (parallel kinds).
    #[arg(long, default_value_t = 2)]
    p: u32,
    /// Outer iteration count.
    #[arg(long, default_value_t = 10)]
    m: u32,
    #[command(flatten)]
    params: CommonParams,
    /// Archive directory to create.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Rank count: a value or a doubling range like 2..64.
    #[arg(long)]
    p: Option<String>,
    /// Iteration count: a value or a doubling range like 10..1000.
    #[arg(long)]
    m: Option<String>,
    #[command(flatten)]
    params: CommonParams,
    /// CSV output file (stdout when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn build_spec(kind: KindArg, p: u32, m: u32, params: &CommonParams) -> WorkloadSpec {
    let kind = match kind {
        KindArg::Serial => WorkloadKind::SerialNested {
            m,
            n: params.n,
            size: params.size,
        },
        KindArg::Strided => WorkloadKind::StridedShared {
            p,
            m,
            chunk: params.chunk,
        },
        KindArg::Ior => WorkloadKind::IorLike {
            p,
            block: params.block,
            transfer: params.transfer,
        },
        KindArg::Checkpoint => WorkloadKind::CheckpointSeries {
            p,
            files: params.files,
            iters_per_file: params.iters_per_file,
        },
        KindArg::Collective => WorkloadKind::CollectiveAgg {
            p,
            aggregators: params.aggregators,
            m,
            chunk: params.chunk,
        },
        KindArg::Random => WorkloadKind::Random {
            seed: params.seed,
            len: params.len,
            alphabet: params.alphabet,
        },
    };
    let mut spec = WorkloadSpec::new(kind);
    if !params.filter_prefix.is_empty() || !params.filter_layer.is_empty() {
        spec.filter = Some(FilterConfig {
            prefixes: params.filter_prefix.clone(),
            enabled_layers: if params.filter_layer.is_empty() {
                None
            } else {
                Some(params.filter_layer.iter().cloned().collect())
            },
        });
    }
    spec.intra_pattern = !params.no_intra_pattern;
    spec.inter_pattern = !params.no_inter_pattern;
    spec.threads = params.threads;
    spec
}

/// Run the CLI against `argv` (including the program name) and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        // A consumer that closes the pipe early (dump | head) got all it
        // wanted; stop quietly instead of reporting an error.
        Err(err) if is_broken_pipe(&err) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn is_broken_pipe(err: &HarnessError) -> bool {
    let io_err = match err {
        HarnessError::Io(e) => e,
        HarnessError::Archive(ArchiveError::Io(e)) => e,
        _ => return false,
    };
    io_err.kind() == io::ErrorKind::BrokenPipe
}

fn exit_code(err: &HarnessError) -> i32 {
    match err {
        HarnessError::Archive(ArchiveError::CorruptArchive { .. }) => 3,
        HarnessError::Archive(ArchiveError::RankOutOfRange { .. })
        | HarnessError::InvalidSpec { .. } => 2,
        _ => 1,
    }
}

fn out_stream(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn usage(reason: String) -> HarnessError {
    HarnessError::InvalidSpec { reason }
}

fn dispatch(cli: Cli) -> Result<i32, HarnessError> {
    match cli.cmd {
        Cmd::Gen(args) => {
            let spec = build_spec(args.kind, args.p, args.m, &args.params);
            let oracle = run_workload(&spec, &args.output)?;
            writeln!(
                io::stdout().lock(),
                "wrote {} ({} record(s), {} rank(s))",
                args.output.display(),
                oracle.total_records(),
                spec.rank_count()
            )
            .map_err(HarnessError::Io)?;
            Ok(0)
        }
        Cmd::Verify { archive } => {
            let report = verify_archive(&archive)?;
            writeln!(io::stdout().lock(), "{report}").map_err(HarnessError::Io)?;
            Ok(if report.passed() { 0 } else { 1 })
        }
        Cmd::Dump { archive, rank } => {
            let reader = ArchiveReader::open(&archive)?;
            let mut out = io::stdout().lock();
            let ranks: Vec<u32> = match rank {
                Some(r) => vec![r],
                None => (0..reader.rank_count()).collect(),
            };
            for r in ranks {
                for rec in reader.read_records(r)? {
                    let name = reader
                        .registry()
                        .name(rec.func)
                        .unwrap_or_else(|_| format!("func{}", rec.func.0));
                    let args: Vec<String> = rec.args.iter().map(format_arg).collect();
                    writeln!(
                        out,
                        "r{r} t{} d{} {}({}) @{}..{}",
                        rec.thread_id,
                        rec.call_depth,
                        name,
                        args.join(", "),
                        rec.t_entry,
                        rec.t_exit
                    )
                    .map_err(HarnessError::Io)?;
                }
            }
            Ok(0)
        }
        Cmd::Convert {
            archive,
            format,
            output,
        } => {
            let reader = ArchiveReader::open(&archive)?;
            let out = out_stream(&output)?;
            match format {
                ConvertFormat::Chrome => convert::to_chrome_timeline(&reader, out)?,
                ConvertFormat::Csv => convert::to_columnar(&reader, out)?,
            }
            Ok(0)
        }
        Cmd::Stats { archive, json } => {
            let reader = ArchiveReader::open(&archive)?;
            let report = stats::stats(&reader)?;
            let mut out = io::stdout().lock();
            if json {
                writeln!(
                    out,
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                )
                .map_err(HarnessError::Io)?;
            } else {
                write!(out, "{report}").map_err(HarnessError::Io)?;
            }
            Ok(0)
        }
        Cmd::Bench(args) => {
            let base = build_spec(args.kind, 2, 10, &args.params);
            let parse = |name: &str, text: &str| {
                parse_scale_range(text)
                    .ok_or_else(|| usage(format!("bad {name} value {text:?}")))
            };
            let p_range = args.p.as_deref().map(|t| parse("--p", t)).transpose()?;
            let m_range = args.m.as_deref().map(|t| parse("--m", t)).transpose()?;
            let p_is_sweep = p_range.as_ref().map_or(false, |v| v.len() > 1);
            let m_is_sweep = m_range.as_ref().map_or(false, |v| v.len() > 1);
            if p_is_sweep && m_is_sweep {
                return Err(usage("only one of --p/--m may be a range".to_string()));
            }
            let axis = if p_is_sweep {
                SweepAxis::Ranks
            } else if m_is_sweep {
                SweepAxis::Iterations
            } else if args.p.is_some() && !matches!(args.kind, KindArg::Serial | KindArg::Random) {
                SweepAxis::Ranks
            } else if args.m.is_some() {
                SweepAxis::Iterations
            } else {
                return Err(usage("give a sweep via --p or --m".to_string()));
            };
            // A single value on the other axis pins it for the whole sweep.
            let base = match axis {
                SweepAxis::Ranks => match &m_range {
                    Some(m) => scaled_spec(&base, SweepAxis::Iterations, m[0])?,
                    None => base,
                },
                SweepAxis::Iterations => match &p_range {
                    Some(p) => scaled_spec(&base, SweepAxis::Ranks, p[0])?,
                    None => base,
                },
            };
            let values = match axis {
                SweepAxis::Ranks => p_range.expect("axis implies the flag"),
                SweepAxis::Iterations => m_range.expect("axis implies the flag"),
            };
            let scratch = std::env::temp_dir().join(format!(
                "tracegram-bench-{}-{}",
                std::process::id(),
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_nanos())
                    .unwrap_or(0)
            ));
            let rows = bench_sweep(&base, axis, &values, &scratch);
            let _ = std::fs::remove_dir_all(&scratch);
            let rows = rows?;
            let out = out_stream(&args.output)?;
            write_bench_csv(&rows, out).map_err(HarnessError::Io)?;
            Ok(0)
        }
    }
}

fn format_arg(arg: &ArgValue) -> String {
    match arg {
        ArgValue::Int(v) => v.to_string(),
        ArgValue::Str(s) => format!("{s:?}"),
        ArgValue::Handle(h) => format!("h{h}"),
        ArgValue::UniqueHandle(u) => format!("g{u}"),
        ArgValue::Offset(_) => "<pattern>".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_vec(args: &[&str]) -> i32 {
        run(std::iter::once("tracegram").chain(args.iter().copied()))
    }

    #[test]
    fn gen_then_verify_exits_zero() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t");
        let out_s = out.to_str().unwrap();
        assert_eq!(
            run_vec(&["gen", "--kind", "strided", "--p", "4", "--m", "20", "-o", out_s]),
            0
        );
        assert_eq!(run_vec(&["verify", out_s]), 0);
        assert_eq!(run_vec(&["stats", out_s, "--json"]), 0);
        assert_eq!(run_vec(&["dump", out_s, "--rank", "1"]), 0);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_vec(&["gen", "--kind", "bogus", "-o", "x"]), 2);
        assert_eq!(run_vec(&["nonsense"]), 2);
        assert_eq!(run_vec(&["bench", "--kind", "strided"]), 2);
        assert_eq!(run_vec(&["--help"]), 0);
    }

    #[test]
    fn corrupt_archive_exits_three() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t");
        let out_s = out.to_str().unwrap();
        assert_eq!(
            run_vec(&["gen", "--kind", "serial", "--m", "2", "-o", out_s]),
            0
        );
        let cst = out.join("cst.dat");
        let mut bytes = std::fs::read(&cst).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&cst, bytes).unwrap();
        assert_eq!(run_vec(&["verify", out_s]), 3);
        assert_eq!(run_vec(&["stats", out_s]), 3);
    }

    #[test]
    fn convert_writes_requested_format() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t");
        let out_s = out.to_str().unwrap();
        assert_eq!(
            run_vec(&[
                "gen", "--kind", "ior", "--p", "2", "--block", "64", "--transfer", "32",
                "-o", out_s
            ]),
            0
        );
        let json_path = dir.path().join("t.json");
        let csv_path = dir.path().join("t.csv");
        assert_eq!(
            run_vec(&[
                "convert",
                out_s,
                "--format",
                "chrome",
                "-o",
                json_path.to_str().unwrap()
            ]),
            0
        );
        assert_eq!(
            run_vec(&[
                "convert",
                out_s,
                "--format",
                "csv",
                "-o",
                csv_path.to_str().unwrap()
            ]),
            0
        );
        let parsed: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert!(!parsed.as_array().unwrap().is_empty());
        let csv_text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(csv_text.starts_with("rank,tid,depth,func"));
    }

    #[test]
    fn bench_range_on_p_emits_one_row_per_scale() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("rows.csv");
        assert_eq!(
            run_vec(&[
                "bench",
                "--kind",
                "strided",
                "--p",
                "2..8",
                "--m",
                "10",
                "-o",
                csv_path.to_str().unwrap()
            ]),
            0
        );
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("2,"));
    }
}
