//! Footprint and reuse summaries of a trace.

use std::collections::HashMap;

use super::{AccessKind, Trace, LINE_BYTES};

/// Per-line reference counts, split by access kind.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LineRefs {
    pub loads: u64,
    pub stores: u64,
}

/// Counts references to every 64-byte line touched by `trace`.
pub fn line_references(trace: &Trace) -> HashMap<u64, LineRefs> {
    let mut refs: HashMap<u64, LineRefs> = HashMap::new();
    for a in trace.accesses() {
        let r = refs.entry(a.line()).or_default();
        match a.kind {
            AccessKind::Load => r.loads += 1,
            AccessKind::Store => r.stores += 1,
        }
    }
    refs
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceSummary {
    pub loads: u64,
    pub stores: u64,
    pub kernels: u64,
    pub distinct_lines: u64,
    pub distinct_load_lines: u64,
    pub distinct_store_lines: u64,
    pub footprint_bytes: u64,
    /// Mean references per distinct line.
    pub reuse_degree: f64,
    /// Largest reference count of any single line.
    pub max_line_refs: u64,
}

impl TraceSummary {
    pub fn of(trace: &Trace) -> Self {
        let refs = line_references(trace);
        let mut s = TraceSummary {
            kernels: trace.markers().count() as u64,
            distinct_lines: refs.len() as u64,
            footprint_bytes: refs.len() as u64 * LINE_BYTES,
            ..Default::default()
        };
        for r in refs.values() {
            s.loads += r.loads;
            s.stores += r.stores;
            s.distinct_load_lines += u64::from(r.loads > 0);
            s.distinct_store_lines += u64::from(r.stores > 0);
            s.max_line_refs = s.max_line_refs.max(r.loads + r.stores);
        }
        if s.distinct_lines > 0 {
            s.reuse_degree = (s.loads + s.stores) as f64 / s.distinct_lines as f64;
        }
        s
    }
}

impl std::fmt::Display for TraceSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "records={}", self.loads + self.stores)?;
        writeln!(f, "loads={}", self.loads)?;
        writeln!(f, "stores={}", self.stores)?;
        writeln!(f, "kernels={}", self.kernels)?;
        writeln!(f, "distinct_lines={}", self.distinct_lines)?;
        writeln!(f, "distinct_load_lines={}", self.distinct_load_lines)?;
        writeln!(f, "distinct_store_lines={}", self.distinct_store_lines)?;
        writeln!(f, "footprint_bytes={}", self.footprint_bytes)?;
        writeln!(f, "reuse_degree={:.4}", self.reuse_degree)?;
        write!(f, "max_line_refs={}", self.max_line_refs)
    }
}
