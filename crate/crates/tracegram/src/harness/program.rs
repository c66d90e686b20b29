//! Deterministic call programs: exactly which calls each simulated rank
//! issues, phase by phase. A phase is one outer iteration of the workload,
//! which lets callers sample tracer state between iterations.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ArgValue, FunctionId, FunctionRegistry};
use crate::pattern::HandleRegistry;

use super::{HarnessError, WorkloadKind, WorkloadSpec};

/// One simulated call. Children run between the call's entry and exit, one
/// nesting level deeper.
#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub func: FunctionId,
    pub tid: u32,
    pub args: Vec<ArgValue>,
    pub children: Vec<Call>,
}

impl Call {
    fn leaf(func: FunctionId, args: Vec<ArgValue>) -> Call {
        Call {
            func,
            tid: 0,
            args,
            children: Vec::new(),
        }
    }
}

/// Everything one rank will execute.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub rank: u32,
    pub phases: Vec<Vec<Call>>,
}

/// A fully prepared run: function registry, collective-handle ids, and one
/// program per rank. Building a plan performs the simulated collective
/// opens, so `uid_map` already knows every (rank, handle) -> shared id pair.
pub struct Plan {
    pub registry: Arc<FunctionRegistry>,
    pub handles: Arc<HandleRegistry>,
    pub uid_map: HashMap<(u32, u32), u32>,
    pub programs: Vec<Program>,
}

/// Aggregators actually used: never more than requested, never more than
/// half the ranks (so sender ranks exist whenever P > 1).
pub(crate) fn effective_aggregators(p: u32, aggregators: u32) -> u32 {
    aggregators.min((p / 2).max(1))
}

pub fn build_plan(spec: &WorkloadSpec) -> Result<Plan, HarnessError> {
    spec.validate()?;
    let registry = FunctionRegistry::new();
    let handles = HandleRegistry::new();
    let mut uid_map = HashMap::new();

    let programs = match spec.kind {
        WorkloadKind::SerialNested { m, n, size } => {
            let write = registry.register("write", 2, &[])?;
            let fsync = registry.register("fsync", 1, &[])?;
            let mut phases = Vec::with_capacity(m as usize);
            for _ in 0..m {
                let mut phase = Vec::with_capacity(n as usize + 1);
                for _ in 0..n {
                    phase.push(Call::leaf(
                        write,
                        vec![ArgValue::Handle(3), ArgValue::Int(size as i64)],
                    ));
                }
                phase.push(Call::leaf(fsync, vec![ArgValue::Handle(3)]));
                phases.push(phase);
            }
            vec![Program { rank: 0, phases }]
        }

        WorkloadKind::StridedShared { p, m, chunk } => {
            let lseek = registry.register("lseek", 2, &[1])?;
            let write = registry.register("write", 2, &[])?;
            (0..p)
                .map(|rank| {
                    let phases = (0..m)
                        .map(|i| {
                            let offset =
                                rank as i64 * chunk + i as i64 * p as i64 * chunk;
                            vec![
                                Call::leaf(
                                    lseek,
                                    vec![ArgValue::Handle(3), ArgValue::Int(offset)],
                                ),
                                Call::leaf(
                                    write,
                                    vec![ArgValue::Handle(3), ArgValue::Int(chunk)],
                                ),
                            ]
                        })
                        .collect();
                    Program { rank, phases }
                })
                .collect()
        }

        WorkloadKind::IorLike { p, block, transfer } => {
            let open = registry.register("MPI_File_open", 2, &[])?;
            let write_at = registry.register("MPI_File_write_at", 3, &[1])?;
            let pwrite = registry.register("pwrite", 3, &[1])?;
            let close = registry.register("MPI_File_close", 1, &[])?;
            // All ranks open the shared file collectively; their local
            // descriptors (100 + rank) collapse to one shared id.
            let pairs: Vec<(u32, u32)> = (0..p).map(|r| (r, 100 + r)).collect();
            let uid = handles.collective_open(&pairs)?;
            for &(r, h) in &pairs {
                uid_map.insert((r, h), uid);
            }
            let writes = ((block + transfer - 1) / transfer) as u32;
            (0..p)
                .map(|rank| {
                    let fh = ArgValue::Handle(100 + rank);
                    let mut phases = Vec::with_capacity(writes as usize + 2);
                    phases.push(vec![Call::leaf(
                        open,
                        vec![ArgValue::Str("shared.dat".into()), fh.clone()],
                    )]);
                    for j in 0..writes {
                        let offset = rank as i64 * block + j as i64 * transfer;
                        let mut call = Call::leaf(
                            write_at,
                            vec![
                                fh.clone(),
                                ArgValue::Int(offset),
                                ArgValue::Int(transfer),
                            ],
                        );
                        call.children.push(Call::leaf(
                            pwrite,
                            vec![
                                ArgValue::Handle(7),
                                ArgValue::Int(offset),
                                ArgValue::Int(transfer),
                            ],
                        ));
                        phases.push(vec![call]);
                    }
                    phases.push(vec![Call::leaf(close, vec![fh.clone()])]);
                    Program { rank, phases }
                })
                .collect()
        }

        WorkloadKind::CheckpointSeries {
            p,
            files,
            iters_per_file,
        } => {
            let open = registry.register("open", 2, &[])?;
            let write = registry.register("write", 2, &[])?;
            let fsync = registry.register("fsync", 1, &[])?;
            (0..p)
                .map(|rank| {
                    let mut phases = Vec::new();
                    for f in 0..files {
                        let fd = ArgValue::Handle(3 + f);
                        for it in 0..iters_per_file {
                            let mut phase = Vec::new();
                            if it == 0 {
                                phase.push(Call::leaf(
                                    open,
                                    vec![ArgValue::Str(format!("plot-{f}")), fd.clone()],
                                ));
                            }
                            phase.push(Call::leaf(
                                write,
                                vec![fd.clone(), ArgValue::Int(65536)],
                            ));
                            phase.push(Call::leaf(fsync, vec![fd.clone()]));
                            phases.push(phase);
                        }
                    }
                    Program { rank, phases }
                })
                .collect()
        }

        WorkloadKind::CollectiveAgg {
            p,
            aggregators,
            m,
            chunk,
        } => {
            let send = registry.register("MPI_Send", 1, &[])?;
            let pwrite = registry.register("pwrite", 3, &[1])?;
            let agg = effective_aggregators(p, aggregators);
            let coalesced = (p + agg - 1) / agg;
            (0..p)
                .map(|rank| {
                    let phases = (0..m)
                        .map(|i| {
                            if rank < agg {
                                (0..coalesced)
                                    .map(|j| {
                                        let slot =
                                            (i as i64 * coalesced as i64 + j as i64)
                                                * agg as i64
                                                + rank as i64;
                                        Call::leaf(
                                            pwrite,
                                            vec![
                                                ArgValue::Handle(9),
                                                ArgValue::Int(slot * chunk),
                                                ArgValue::Int(chunk),
                                            ],
                                        )
                                    })
                                    .collect()
                            } else {
                                vec![Call::leaf(send, vec![ArgValue::Int(chunk)])]
                            }
                        })
                        .collect();
                    Program { rank, phases }
                })
                .collect()
        }

        WorkloadKind::Random {
            seed,
            len,
            alphabet,
        } => {
            let ops = [
                registry.register("write", 2, &[])?,
                registry.register("read", 2, &[])?,
                registry.register("lseek", 2, &[1])?,
                registry.register("pwrite", 3, &[1])?,
                registry.register("fsync", 1, &[])?,
                registry.register("open", 2, &[])?,
            ];
            let k = (alphabet as usize).clamp(1, ops.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut phase = Vec::with_capacity(len as usize);
            for _ in 0..len {
                let op = rng.gen_range(0..k);
                let fd = ArgValue::Handle(3 + rng.gen_range(0..4));
                let count = ArgValue::Int(rng.gen_range(1..=1 << 20));
                let offset = ArgValue::Int(rng.gen_range(0..1 << 20));
                let path = ArgValue::Str(format!("f{}", rng.gen_range(0..4)));
                phase.push(match op {
                    0 => Call::leaf(ops[0], vec![fd, count]),
                    1 => Call::leaf(ops[1], vec![fd, count]),
                    2 => Call::leaf(ops[2], vec![fd, offset]),
                    3 => Call::leaf(ops[3], vec![fd, offset, count]),
                    4 => Call::leaf(ops[4], vec![fd]),
                    _ => Call::leaf(ops[5], vec![path, fd]),
                });
            }
            vec![Program {
                rank: 0,
                phases: vec![phase],
            }]
        }
    };

    let mut programs = programs;
    if spec.threads == 2 {
        for program in &mut programs {
            assign_alternating_threads(program);
        }
    }

    Ok(Plan {
        registry: Arc::new(registry),
        handles: Arc::new(handles),
        uid_map,
        programs,
    })
}

/// Tag top-level calls with thread ids 0,1,0,1,...; nested calls stay on
/// their parent's thread.
fn assign_alternating_threads(program: &mut Program) {
    let mut i = 0u64;
    for phase in &mut program.phases {
        for call in phase {
            set_tid(call, (i % 2) as u32);
            i += 1;
        }
    }
}

fn set_tid(call: &mut Call, tid: u32) {
    call.tid = tid;
    for child in &mut call.children {
        set_tid(child, tid);
    }
}
