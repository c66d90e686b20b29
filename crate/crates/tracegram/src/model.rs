//! Core trace vocabulary: functions, argument values, call records, and the
//! canonical signature encoding everything else keys on.
//!
//! A *call signature* is the byte string that identifies a call up to
//! repetition: function, nesting depth, thread, and arguments, but never
//! timestamps. Two calls compress to the same table entry exactly when their
//! signature bytes are equal, so the encoding here is the single source of
//! truth for call identity across the whole crate.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::pattern::OffsetPattern;

/// Dense identifier for a registered function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionId(pub u16);

/// One decoded argument of a recorded call.
///
/// `Handle` is a process-local descriptor value; `UniqueHandle` is a
/// group-wide id substituted for handles of collectively opened files.
/// `Offset` holds a folded offset term and only ever appears in argument
/// slots the registry declares offset-bearing; application code supplies raw
/// offsets as `Int`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ArgValue {
    Int(i64),
    Str(String),
    Handle(u32),
    UniqueHandle(u32),
    Offset(OffsetPattern),
}

/// A single recorded call, timestamps in simulated clock ticks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub func: FunctionId,
    pub args: Vec<ArgValue>,
    pub thread_id: u32,
    pub call_depth: u8,
    pub t_entry: u32,
    pub t_exit: u32,
}

/// Canonical signature bytes of a call. See [`make_signature`].
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallSignature(Vec<u8>);

impl CallSignature {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        CallSignature(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for CallSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CallSignature({} bytes)", self.0.len())
    }
}

/// Registration metadata for one function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionInfo {
    pub name: String,
    pub arity: u8,
    /// Argument positions that carry file offsets, sorted ascending.
    pub offset_slots: Vec<u8>,
    /// Interface layer, inferred from the name prefix at registration.
    pub layer: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("function {name:?} already registered with a different declaration")]
    ConflictingRegistration { name: String },
    #[error("unknown function id {0}")]
    UnknownFunction(u16),
    #[error("function table is full")]
    RegistryFull,
}

/// Errors from [`decode_signature`] on malformed bytes.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignatureError {
    #[error("signature truncated at byte {at}")]
    UnexpectedEnd { at: usize },
    #[error("unknown argument tag {tag:#04x} at byte {at}")]
    BadTag { at: usize, tag: u8 },
    #[error("string argument at byte {at} is not valid UTF-8")]
    BadUtf8 { at: usize },
    #[error("{extra} trailing bytes after signature")]
    TrailingBytes { extra: usize },
}

/// Infer the interface layer of a function from its name.
fn infer_layer(name: &str) -> &'static str {
    if name.starts_with("MPI_") {
        "mpi"
    } else if name.starts_with("H5") {
        "hdf5"
    } else {
        "posix"
    }
}

/// Thread-safe name/id table for traced functions.
///
/// Ids are dense and assigned in registration order, so every rank of a run
/// that registers the same functions in the same order sees the same ids.
/// Registration is idempotent for an identical declaration and rejects a
/// conflicting one.
#[derive(Debug, Default)]
pub struct FunctionRegistry {
    inner: RwLock<RegistryInner>,
}

#[derive(Debug, Default)]
struct RegistryInner {
    by_name: HashMap<String, FunctionId>,
    infos: Vec<Arc<FunctionInfo>>,
}

impl FunctionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &self,
        name: &str,
        arity: u8,
        offset_slots: &[u8],
    ) -> Result<FunctionId, ModelError> {
        let mut slots: Vec<u8> = offset_slots.to_vec();
        slots.sort_unstable();
        slots.dedup();
        let mut inner = self.inner.write().unwrap();
        if let Some(&id) = inner.by_name.get(name) {
            let info = &inner.infos[id.0 as usize];
            if info.arity == arity && info.offset_slots == slots {
                return Ok(id);
            }
            return Err(ModelError::ConflictingRegistration {
                name: name.to_string(),
            });
        }
        if inner.infos.len() > u16::MAX as usize {
            return Err(ModelError::RegistryFull);
        }
        let id = FunctionId(inner.infos.len() as u16);
        inner.by_name.insert(name.to_string(), id);
        inner.infos.push(Arc::new(FunctionInfo {
            name: name.to_string(),
            arity,
            offset_slots: slots,
            layer: infer_layer(name).to_string(),
        }));
        Ok(id)
    }

    pub fn lookup(&self, name: &str) -> Option<FunctionId> {
        self.inner.read().unwrap().by_name.get(name).copied()
    }

    pub fn info(&self, id: FunctionId) -> Result<Arc<FunctionInfo>, ModelError> {
        self.inner
            .read()
            .unwrap()
            .infos
            .get(id.0 as usize)
            .cloned()
            .ok_or(ModelError::UnknownFunction(id.0))
    }

    pub fn name(&self, id: FunctionId) -> Result<String, ModelError> {
        self.info(id).map(|i| i.name.clone())
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().infos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All registrations in id order.
    pub fn snapshot(&self) -> Vec<FunctionInfo> {
        self.inner
            .read()
            .unwrap()
            .infos
            .iter()
            .map(|info| (**info).clone())
            .collect()
    }

    /// Rebuild a registry from a snapshot, preserving ids.
    pub fn from_snapshot(infos: &[FunctionInfo]) -> Result<Self, ModelError> {
        let reg = Self::new();
        for info in infos {
            reg.register(&info.name, info.arity, &info.offset_slots)?;
        }
        Ok(reg)
    }
}

// Wire tags for argument values inside a signature.
const TAG_INT: u8 = 0;
const TAG_STR: u8 = 1;
const TAG_HANDLE: u8 = 2;
const TAG_UNIQUE_HANDLE: u8 = 3;
const TAG_OFFSET: u8 = 4;
/// Placeholder written for a masked argument slot.
const TAG_MASKED: u8 = 0xff;

fn encode_arg(arg: &ArgValue, out: &mut Vec<u8>) {
    match arg {
        ArgValue::Int(v) => {
            out.push(TAG_INT);
            out.extend_from_slice(&v.to_le_bytes());
        }
        ArgValue::Str(s) => {
            out.push(TAG_STR);
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        ArgValue::Handle(h) => {
            out.push(TAG_HANDLE);
            out.extend_from_slice(&h.to_le_bytes());
        }
        ArgValue::UniqueHandle(h) => {
            out.push(TAG_UNIQUE_HANDLE);
            out.extend_from_slice(&h.to_le_bytes());
        }
        ArgValue::Offset(p) => {
            out.push(TAG_OFFSET);
            p.write_wire(out);
        }
    }
}

fn encode_call(
    func: FunctionId,
    call_depth: u8,
    thread_id: u32,
    args: &[ArgValue],
    mask: impl Fn(usize, &ArgValue) -> bool,
) -> Vec<u8> {
    assert!(args.len() <= u8::MAX as usize, "argument list too long");
    let mut out = Vec::with_capacity(16 + args.len() * 9);
    out.extend_from_slice(&func.0.to_le_bytes());
    out.push(call_depth);
    out.extend_from_slice(&thread_id.to_le_bytes());
    out.push(args.len() as u8);
    for (i, arg) in args.iter().enumerate() {
        if mask(i, arg) {
            out.push(TAG_MASKED);
        } else {
            encode_arg(arg, &mut out);
        }
    }
    out
}

/// Encode the canonical signature of a record.
///
/// Layout, all little-endian: function id (u16), call depth (u8), thread id
/// (u32), argument count (u8), then each argument as a tag byte plus payload.
/// Timestamps never enter the signature, so repeated calls that differ only
/// in time collapse to one entry.
pub fn make_signature(record: &CallRecord) -> CallSignature {
    CallSignature(encode_call(
        record.func,
        record.call_depth,
        record.thread_id,
        &record.args,
        |_, _| false,
    ))
}

/// Signature bytes with the arguments at `slots` replaced by a placeholder.
///
/// Used on the recording side, where offset slots still hold raw `Int`
/// values, to key offset-pattern state.
pub fn masked_key_by_slots(
    func: FunctionId,
    call_depth: u8,
    thread_id: u32,
    args: &[ArgValue],
    slots: &[u8],
) -> Vec<u8> {
    encode_call(func, call_depth, thread_id, args, |i, _| {
        slots.contains(&(i as u8))
    })
}

/// Signature bytes with every `Offset` argument replaced by a placeholder.
///
/// Used on the decoding side; matches [`masked_key_by_slots`] output for the
/// same call because folded offsets sit exactly in the declared slots.
pub fn masked_key_by_type(
    func: FunctionId,
    call_depth: u8,
    thread_id: u32,
    args: &[ArgValue],
) -> Vec<u8> {
    encode_call(func, call_depth, thread_id, args, |_, a| {
        matches!(a, ArgValue::Offset(_))
    })
}

/// A signature parsed back into its fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedCall {
    pub func: FunctionId,
    pub call_depth: u8,
    pub thread_id: u32,
    pub args: Vec<ArgValue>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SignatureError> {
        if self.buf.len() - self.pos < n {
            return Err(SignatureError::UnexpectedEnd { at: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, SignatureError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, SignatureError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SignatureError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, SignatureError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse signature bytes back into call fields. Inverse of [`make_signature`].
pub fn decode_signature(bytes: &[u8]) -> Result<DecodedCall, SignatureError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let func = FunctionId(cur.u16()?);
    let call_depth = cur.u8()?;
    let thread_id = cur.u32()?;
    let argc = cur.u8()? as usize;
    let mut args = Vec::with_capacity(argc);
    for _ in 0..argc {
        let at = cur.pos;
        let tag = cur.u8()?;
        let arg = match tag {
            TAG_INT => ArgValue::Int(cur.i64()?),
            TAG_STR => {
                let len = cur.u32()? as usize;
                let at = cur.pos;
                let raw = cur.take(len)?;
                let s = std::str::from_utf8(raw)
                    .map_err(|_| SignatureError::BadUtf8 { at })?;
                ArgValue::Str(s.to_string())
            }
            TAG_HANDLE => ArgValue::Handle(cur.u32()?),
            TAG_UNIQUE_HANDLE => ArgValue::UniqueHandle(cur.u32()?),
            TAG_OFFSET => {
                let (p, used) = OffsetPattern::read_wire(&cur.buf[cur.pos..]).map_err(
                    |e| match e {
                        crate::pattern::WireError::Truncated(off) => {
                            SignatureError::UnexpectedEnd { at: cur.pos + off }
                        }
                        crate::pattern::WireError::BadTag(tag)
                        | crate::pattern::WireError::BadFlags(tag) => {
                            SignatureError::BadTag { at: cur.pos, tag }
                        }
                    },
                )?;
                cur.pos += used;
                ArgValue::Offset(p)
            }
            other => return Err(SignatureError::BadTag { at, tag: other }),
        };
        args.push(arg);
    }
    if cur.pos != bytes.len() {
        return Err(SignatureError::TrailingBytes {
            extra: bytes.len() - cur.pos,
        });
    }
    Ok(DecodedCall {
        func,
        call_depth,
        thread_id,
        args,
    })
}
