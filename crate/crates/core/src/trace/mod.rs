//! Memory-trace data model.
//!
//! A [`Trace`] is an ordered stream of GPU memory requests ([`MemAccess`])
//! interleaved with kernel-boundary markers ([`KernelMarker`]). Requests are
//! pre-split so that none crosses a 64-byte line boundary; the simulator never
//! splits a request itself.

mod format;
pub mod gen;
pub mod reuse;

pub use format::{read_trace, read_trace_text, write_trace, write_trace_text, ParseError, ParseErrorKind};
pub use gen::{generate, GenError, LayerKind, LayerSpec};

use thiserror::Error;

/// Cache line size in bytes. Fixed across the hierarchy.
pub const LINE_BYTES: u64 = 64;

#[inline]
pub fn line_of(addr: u64) -> u64 {
    addr & !(LINE_BYTES - 1)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccessKind {
    Load,
    Store,
}

/// One GPU memory request.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct MemAccess {
    pub seq: u64,
    pub pc: u64,
    pub addr: u64,
    pub size: u8,
    pub kind: AccessKind,
    pub cu_id: u8,
    pub kernel_id: u32,
}

impl MemAccess {
    pub fn line(&self) -> u64 {
        line_of(self.addr)
    }

    pub fn is_store(&self) -> bool {
        self.kind == AccessKind::Store
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum MarkerScope {
    /// Kernel boundary: caches self-invalidate valid data.
    Kernel,
    /// Kernel semantics plus a flush of all dirty L2 data.
    SystemScope,
}

/// Synchronization point closing kernel `kernel_id`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct KernelMarker {
    pub seq: u64,
    pub kernel_id: u32,
    pub scope: MarkerScope,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum TraceEntry {
    Access(MemAccess),
    Marker(KernelMarker),
}

impl TraceEntry {
    pub fn seq(&self) -> u64 {
        match self {
            TraceEntry::Access(a) => a.seq,
            TraceEntry::Marker(m) => m.seq,
        }
    }
}

/// Where a trace came from. Serialized as an optional trailer in the binary format.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TraceMeta {
    pub generator: String,
    pub params: String,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    pub meta: TraceMeta,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("record {index}: seq {seq} does not exceed previous seq {prev}")]
    SeqNotIncreasing { index: usize, seq: u64, prev: u64 },
    #[error("record {index}: kernel id {kernel_id} regresses below {prev}")]
    KernelRegression { index: usize, kernel_id: u32, prev: u32 },
    #[error("record {index}: access at {addr:#x} of {size} bytes crosses a line boundary or has invalid size")]
    CrossesLine { index: usize, addr: u64, size: u8 },
    #[error("record {index}: cu id {cu_id} out of range (num_cus = {num_cus})")]
    CuOutOfRange { index: usize, cu_id: u8, num_cus: usize },
}

impl Trace {
    pub fn new(meta: TraceMeta) -> Self {
        Trace { entries: Vec::new(), meta }
    }

    pub fn accesses(&self) -> impl Iterator<Item = &MemAccess> {
        self.entries.iter().filter_map(|e| match e {
            TraceEntry::Access(a) => Some(a),
            TraceEntry::Marker(_) => None,
        })
    }

    pub fn markers(&self) -> impl Iterator<Item = &KernelMarker> {
        self.entries.iter().filter_map(|e| match e {
            TraceEntry::Marker(m) => Some(m),
            TraceEntry::Access(_) => None,
        })
    }

    pub fn num_accesses(&self) -> usize {
        self.accesses().count()
    }

    pub fn next_seq(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.seq() + 1)
    }

    /// Appends `other` after this trace, renumbering seq and shifting kernel ids
    /// so that `other`'s kernels follow this trace's last kernel.
    pub fn concat(&mut self, other: &Trace) {
        let seq_base = self.next_seq();
        let kernel_base = match self.entries.last() {
            None => 0,
            Some(TraceEntry::Marker(m)) => m.kernel_id + 1,
            Some(TraceEntry::Access(a)) => a.kernel_id,
        };
        for (i, e) in other.entries.iter().enumerate() {
            let seq = seq_base + i as u64;
            self.entries.push(match *e {
                TraceEntry::Access(a) => TraceEntry::Access(MemAccess {
                    seq,
                    kernel_id: a.kernel_id + kernel_base,
                    ..a
                }),
                TraceEntry::Marker(m) => TraceEntry::Marker(KernelMarker {
                    seq,
                    kernel_id: m.kernel_id + kernel_base,
                    ..m
                }),
            });
        }
    }

    /// Checks the structural invariants: strictly increasing seq, non-decreasing
    /// kernel ids (markers close the kernel they name), and line-contained requests.
    pub fn validate(&self, num_cus: usize) -> Result<(), TraceError> {
        let mut prev_seq: Option<u64> = None;
        let mut min_kernel = 0u32;
        for (index, e) in self.entries.iter().enumerate() {
            let seq = e.seq();
            if let Some(prev) = prev_seq {
                if seq <= prev {
                    return Err(TraceError::SeqNotIncreasing { index, seq, prev });
                }
            }
            prev_seq = Some(seq);
            match e {
                TraceEntry::Access(a) => {
                    if a.kernel_id < min_kernel {
                        return Err(TraceError::KernelRegression {
                            index,
                            kernel_id: a.kernel_id,
                            prev: min_kernel,
                        });
                    }
                    min_kernel = a.kernel_id;
                    let off = a.addr % LINE_BYTES;
                    if a.size == 0 || a.size as u64 > LINE_BYTES || off + a.size as u64 > LINE_BYTES {
                        return Err(TraceError::CrossesLine { index, addr: a.addr, size: a.size });
                    }
                    if a.cu_id as usize >= num_cus {
                        return Err(TraceError::CuOutOfRange { index, cu_id: a.cu_id, num_cus });
                    }
                }
                TraceEntry::Marker(m) => {
                    if m.kernel_id < min_kernel {
                        return Err(TraceError::KernelRegression {
                            index,
                            kernel_id: m.kernel_id,
                            prev: min_kernel,
                        });
                    }
                    min_kernel = m.kernel_id + 1;
                }
            }
        }
        Ok(())
    }
}

/// Incremental trace construction with automatic seq numbering.
#[derive(Debug, Default)]
pub struct TraceBuilder {
    trace: Trace,
    kernel_id: u32,
}

impl TraceBuilder {
    pub fn new(meta: TraceMeta) -> Self {
        TraceBuilder { trace: Trace::new(meta), kernel_id: 0 }
    }

    pub fn kernel_id(&self) -> u32 {
        self.kernel_id
    }

    pub fn push(&mut self, pc: u64, addr: u64, size: u8, kind: AccessKind, cu_id: u8) {
        let seq = self.trace.entries.len() as u64;
        self.trace.entries.push(TraceEntry::Access(MemAccess {
            seq,
            pc,
            addr,
            size,
            kind,
            cu_id,
            kernel_id: self.kernel_id,
        }));
    }

    pub fn load(&mut self, pc: u64, addr: u64, size: u8, cu_id: u8) {
        self.push(pc, addr, size, AccessKind::Load, cu_id);
    }

    pub fn store(&mut self, pc: u64, addr: u64, size: u8, cu_id: u8) {
        self.push(pc, addr, size, AccessKind::Store, cu_id);
    }

    /// Closes the current kernel.
    pub fn marker(&mut self, scope: MarkerScope) {
        let seq = self.trace.entries.len() as u64;
        self.trace.entries.push(TraceEntry::Marker(KernelMarker {
            seq,
            kernel_id: self.kernel_id,
            scope,
        }));
        self.kernel_id += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.trace.entries.is_empty()
    }

    pub fn finish(self) -> Trace {
        self.trace
    }
}
