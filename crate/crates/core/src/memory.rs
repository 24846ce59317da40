//! Byte-level functional memory, used to check that no caching policy changes
//! what ends up in DRAM.
//!
//! A store "writes" its own seq number into every byte it covers. Comparing
//! images across policies then detects lost, duplicated or reordered writes.

use std::collections::BTreeMap;

use crate::trace::{MemAccess, Trace, LINE_BYTES};

/// Written bytes of one line: a presence mask plus per-byte values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineBytes {
    mask: u64,
    vals: [u64; LINE_BYTES as usize],
}

impl Default for LineBytes {
    fn default() -> Self {
        LineBytes { mask: 0, vals: [0; LINE_BYTES as usize] }
    }
}

impl LineBytes {
    pub fn from_store(req: &MemAccess) -> Self {
        let mut b = LineBytes::default();
        b.write_store(req);
        b
    }

    pub fn write_store(&mut self, req: &MemAccess) {
        let off = (req.addr % LINE_BYTES) as usize;
        for i in off..off + req.size as usize {
            self.mask |= 1u64 << i;
            self.vals[i] = req.seq;
        }
    }

    /// Overlays the written bytes of `newer` onto `self`.
    pub fn merge(&mut self, newer: &LineBytes) {
        for i in 0..LINE_BYTES as usize {
            if newer.mask & (1u64 << i) != 0 {
                self.vals[i] = newer.vals[i];
            }
        }
        self.mask |= newer.mask;
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn byte(&self, i: usize) -> Option<u64> {
        (self.mask & (1u64 << i) != 0).then_some(self.vals[i])
    }
}

/// Contents of DRAM at line granularity; only lines that were ever written appear.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MemoryImage {
    lines: BTreeMap<u64, LineBytes>,
}

impl MemoryImage {
    pub fn write(&mut self, line: u64, data: &LineBytes) {
        if !data.is_empty() {
            self.lines.entry(line).or_default().merge(data);
        }
    }

    pub fn line(&self, line: u64) -> Option<&LineBytes> {
        self.lines.get(&line)
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Written lines in address order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &LineBytes)> {
        self.lines.iter().map(|(l, b)| (*l, b))
    }

    /// The image a flat, cacheless memory reaches by applying every store in
    /// trace order.
    pub fn from_trace_order(trace: &Trace) -> Self {
        let mut img = MemoryImage::default();
        for a in trace.accesses().filter(|a| a.is_store()) {
            img.write(a.line(), &LineBytes::from_store(a));
        }
        img
    }
}
