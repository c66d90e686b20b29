//! Per-rank tracing session: call bracketing, depth tracking, filtering,
//! timestamping, and routing of finished calls into the offset-pattern
//! store, the signature table, and the grammar.
//!
//! A [`RankTracer`] plays the role of the interposition layer's per-process
//! state: `begin_call` is the prologue (captures entry tick and call depth),
//! `end_call` the epilogue (captures exit tick, applies filtering, encodes
//! offsets, interns the signature, appends to the grammar). All entry points
//! take `&self` and are safe to drive from several application threads.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::cst::{CstError, SignatureTable};
use crate::grammar::Grammar;
use crate::model::{make_signature, masked_key_by_slots, ArgValue, CallRecord, FunctionId, FunctionRegistry};
use crate::pattern::{Coeff, HandleRegistry, OffsetPattern, PatternStore};

/// Which calls a tracer keeps.
///
/// A call carrying a path argument is kept when the path starts with any of
/// `prefixes` (an empty list keeps every path). A call carrying only file
/// handles is kept when one of them was tracked by an earlier recorded
/// path-bearing call. Calls in layers outside `enabled_layers` are dropped
/// before any of that.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FilterConfig {
    #[serde(default)]
    pub prefixes: Vec<String>,
    /// `None` enables every layer.
    #[serde(default)]
    pub enabled_layers: Option<std::collections::BTreeSet<String>>,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        if self.prefixes.iter().any(|p| p.is_empty()) {
            return Err(SessionError::BadFilter {
                reason: "empty path prefix",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown function id {func}")]
    UnknownFunction { func: u16 },
    #[error("call depth beyond 255 on thread {thread_id}")]
    DepthOverflow { thread_id: u32 },
    #[error("out-of-order call completion on thread {thread_id}")]
    StackMismatch { thread_id: u32 },
    #[error("{depth} call(s) still open on thread {thread_id} at finalization")]
    UnbalancedCalls { thread_id: u32, depth: usize },
    #[error("{func} takes {expected} argument(s), got {got}")]
    ArityMismatch {
        func: String,
        expected: u8,
        got: usize,
    },
    #[error("bad argument {index} to {func}: {reason}")]
    BadArgument {
        func: String,
        index: usize,
        reason: &'static str,
    },
    #[error("invalid filter: {reason}")]
    BadFilter { reason: &'static str },
    #[error(transparent)]
    Table(#[from] CstError),
}

/// Receipt for an open call, returned by `begin_call` and redeemed by
/// `end_call`. Tokens are single-use and thread-bound.
#[derive(Debug)]
pub struct CallToken {
    func: FunctionId,
    thread_id: u32,
    depth: u8,
    t_entry: u32,
    seq: u64,
}

#[derive(Debug)]
struct OpenCall {
    seq: u64,
}

#[derive(Debug, Default)]
struct Core {
    grammar: Grammar,
    timestamps: Vec<(u32, u32)>,
}

/// Everything one rank accumulated, frozen at finalization.
#[derive(Debug)]
pub struct RankLocal {
    pub rank: u32,
    pub grammar: Grammar,
    pub table: SignatureTable,
    pub timestamps: Vec<(u32, u32)>,
    pub recorded: u64,
}

/// One rank's tracing state.
pub struct RankTracer {
    rank: u32,
    registry: Arc<FunctionRegistry>,
    handles: Arc<HandleRegistry>,
    filter: Option<FilterConfig>,
    intra_patterns: bool,
    /// (ticks within a call, ticks between calls)
    clock_steps: (u32, u32),
    clock: AtomicU32,
    token_seq: AtomicU64,
    stacks: Mutex<HashMap<u32, Vec<OpenCall>>>,
    tracked_handles: Mutex<HashSet<u32>>,
    patterns: PatternStore,
    table: SignatureTable,
    core: Mutex<Core>,
}

impl std::fmt::Debug for RankTracer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RankTracer")
            .field("rank", &self.rank)
            .field("recorded", &self.table.len())
            .finish_non_exhaustive()
    }
}

impl RankTracer {
    pub fn new(
        rank: u32,
        registry: Arc<FunctionRegistry>,
        handles: Arc<HandleRegistry>,
    ) -> RankTracer {
        RankTracer {
            rank,
            registry,
            handles,
            filter: None,
            intra_patterns: true,
            clock_steps: (1, 1),
            clock: AtomicU32::new(0),
            token_seq: AtomicU64::new(0),
            stacks: Mutex::new(HashMap::new()),
            tracked_handles: Mutex::new(HashSet::new()),
            patterns: PatternStore::new(),
            table: SignatureTable::new(),
            core: Mutex::new(Core::default()),
        }
    }

    pub fn with_filter(mut self, filter: FilterConfig) -> Result<RankTracer, SessionError> {
        filter.validate()?;
        self.filter = Some(filter);
        Ok(self)
    }

    /// Disable linear offset recognition; offsets are then stored verbatim.
    pub fn with_intra_patterns(mut self, enabled: bool) -> RankTracer {
        self.intra_patterns = enabled;
        self
    }

    /// Simulated-clock increments: `within` ticks from entry to exit of one
    /// call, `between` ticks from one call's exit to the next one's entry.
    pub fn with_clock_steps(mut self, within: u32, between: u32) -> RankTracer {
        self.clock_steps = (within, between);
        self
    }

    /// Number of distinct call signatures interned so far. Sampling this
    /// between iterations shows when a workload stops producing new shapes.
    pub fn signature_count(&self) -> usize {
        self.table.len()
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    /// Call prologue: assign depth and entry tick, push the call frame.
    pub fn begin_call(&self, thread_id: u32, func: FunctionId) -> Result<CallToken, SessionError> {
        if self.registry.info(func).is_err() {
            return Err(SessionError::UnknownFunction { func: func.0 });
        }
        let mut stacks = self.stacks.lock().unwrap();
        let stack = stacks.entry(thread_id).or_default();
        if stack.len() > u8::MAX as usize {
            return Err(SessionError::DepthOverflow { thread_id });
        }
        let depth = stack.len() as u8;
        let seq = self.token_seq.fetch_add(1, Ordering::Relaxed);
        let t_entry = self.clock.fetch_add(self.clock_steps.0, Ordering::Relaxed);
        stack.push(OpenCall { seq });
        Ok(CallToken {
            func,
            thread_id,
            depth,
            t_entry,
            seq,
        })
    }

    /// Call epilogue: pop the frame, filter, and store the call if kept.
    /// Returns whether the call was recorded.
    pub fn end_call(&self, token: CallToken, args: Vec<ArgValue>) -> Result<bool, SessionError> {
        {
            let mut stacks = self.stacks.lock().unwrap();
            let stack = stacks
                .get_mut(&token.thread_id)
                .ok_or(SessionError::StackMismatch {
                    thread_id: token.thread_id,
                })?;
            match stack.last() {
                Some(top) if top.seq == token.seq => {
                    stack.pop();
                }
                _ => {
                    return Err(SessionError::StackMismatch {
                        thread_id: token.thread_id,
                    })
                }
            }
        }
        let t_exit = self.clock.fetch_add(self.clock_steps.1, Ordering::Relaxed);
        let info = self
            .registry
            .info(token.func)
            .map_err(|_| SessionError::UnknownFunction { func: token.func.0 })?;
        if args.len() != info.arity as usize {
            return Err(SessionError::ArityMismatch {
                func: info.name.clone(),
                expected: info.arity,
                got: args.len(),
            });
        }
        for (i, arg) in args.iter().enumerate() {
            let reason = match arg {
                ArgValue::Offset(_) => Some("offset patterns are assigned internally"),
                ArgValue::UniqueHandle(_) => Some("unique handles are assigned internally"),
                _ => None,
            };
            if let Some(reason) = reason {
                return Err(SessionError::BadArgument {
                    func: info.name.clone(),
                    index: i,
                    reason,
                });
            }
        }
        if !self.keep(&info.layer, &args) {
            return Ok(false);
        }
        // Collectively opened handles collapse to their shared id so that
        // rank-local descriptor numbering cannot split identical streams.
        let mut args = args;
        for arg in args.iter_mut() {
            if let ArgValue::Handle(h) = arg {
                if let Some(uid) = self.handles.lookup(self.rank, *h) {
                    *arg = ArgValue::UniqueHandle(uid);
                }
            }
        }
        if !info.offset_slots.is_empty() {
            let key = masked_key_by_slots(
                token.func,
                token.depth,
                token.thread_id,
                &args,
                &info.offset_slots,
            );
            for &slot in &info.offset_slots {
                let slot = slot as usize;
                let value = match args.get(slot) {
                    Some(ArgValue::Int(v)) => *v,
                    _ => {
                        return Err(SessionError::BadArgument {
                            func: info.name.clone(),
                            index: slot,
                            reason: "offset slot argument must be an integer",
                        })
                    }
                };
                let pattern = if self.intra_patterns {
                    self.patterns.encode_offset(&key, value)
                } else {
                    OffsetPattern::Literal(Coeff::Fixed(value))
                };
                args[slot] = ArgValue::Offset(pattern);
            }
        }
        let record = CallRecord {
            func: token.func,
            args,
            thread_id: token.thread_id,
            call_depth: token.depth,
            t_entry: token.t_entry,
            t_exit,
        };
        let terminal = self.table.intern(make_signature(&record))?;
        let mut core = self.core.lock().unwrap();
        core.grammar.append(terminal);
        core.timestamps.push((token.t_entry, t_exit));
        Ok(true)
    }

    /// Filtering decision, and handle tracking for kept path-bearing calls.
    fn keep(&self, layer: &str, args: &[ArgValue]) -> bool {
        let Some(filter) = &self.filter else {
            return true;
        };
        if let Some(layers) = &filter.enabled_layers {
            if !layers.contains(layer) {
                return false;
            }
        }
        let path = args.iter().find_map(|a| match a {
            ArgValue::Str(s) => Some(s.as_str()),
            _ => None,
        });
        let keep = if let Some(path) = path {
            filter.prefixes.is_empty() || filter.prefixes.iter().any(|p| path.starts_with(p))
        } else if filter.prefixes.is_empty() {
            true
        } else {
            let handles: Vec<u32> = args
                .iter()
                .filter_map(|a| match a {
                    ArgValue::Handle(h) => Some(*h),
                    _ => None,
                })
                .collect();
            if handles.is_empty() {
                // No path and no handle: not tied to any file; keep.
                true
            } else {
                let tracked = self.tracked_handles.lock().unwrap();
                handles.iter().any(|h| tracked.contains(h))
            }
        };
        if keep && path.is_some() {
            let mut tracked = self.tracked_handles.lock().unwrap();
            for a in args {
                if let ArgValue::Handle(h) = a {
                    tracked.insert(*h);
                }
            }
        }
        keep
    }

    /// Freeze this rank's stream. Fails while any call is still open.
    pub fn finalize_rank(self) -> Result<RankLocal, SessionError> {
        {
            let stacks = self.stacks.lock().unwrap();
            for (&thread_id, stack) in stacks.iter() {
                if !stack.is_empty() {
                    return Err(SessionError::UnbalancedCalls {
                        thread_id,
                        depth: stack.len(),
                    });
                }
            }
        }
        let core = self.core.into_inner().unwrap();
        let recorded = core.timestamps.len() as u64;
        Ok(RankLocal {
            rank: self.rank,
            grammar: core.grammar,
            table: self.table,
            timestamps: core.timestamps,
            recorded,
        })
    }
}
