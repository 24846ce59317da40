use std::fmt;

use serde::{Deserialize, Serialize};

/// Counters of one simulation run.
///
/// Stores never look up the L1 and are counted in `l1_bypassed`. At the L2,
/// `l2_misses` counts allocating load misses (each fetches its line from
/// DRAM) and `l2_bypassed` counts requests forwarded to DRAM without
/// allocating.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub cycles: u64,
    pub requests_total: u64,
    pub loads: u64,
    pub stores: u64,
    pub l1_hits: u64,
    pub l1_misses: u64,
    pub l1_bypassed: u64,
    pub l1_coalesced: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub l2_store_allocs: u64,
    pub l2_bypassed: u64,
    pub l2_coalesced: u64,
    /// Dirty lines written back on eviction or flush.
    pub writebacks: u64,
    /// Subset of `writebacks` caused by system-scope flushes.
    pub flush_writes: u64,
    pub rinse_writes: u64,
    pub dram_reads: u64,
    pub dram_writes: u64,
    pub read_row_hits: u64,
    pub read_row_misses: u64,
    pub write_row_hits: u64,
    pub write_row_misses: u64,
    pub cache_stall_cycles: u64,
    pub l1_stall_cycles: u64,
    pub l2_stall_cycles: u64,
    pub l1_tag_accesses: u64,
    pub l2_tag_accesses: u64,
    pub invalidated_lines: u64,
    pub bypass_decisions_cache: u64,
    pub bypass_decisions_bypass: u64,
}

impl RunStats {
    pub fn coalesced_count(&self) -> u64 {
        self.l1_coalesced + self.l2_coalesced
    }

    pub fn dram_accesses(&self) -> u64 {
        self.dram_reads + self.dram_writes
    }

    pub fn row_hits(&self) -> u64 {
        self.read_row_hits + self.write_row_hits
    }

    pub fn row_misses(&self) -> u64 {
        self.read_row_misses + self.write_row_misses
    }

    pub fn row_hit_ratio(&self) -> f64 {
        ratio(self.row_hits(), self.dram_accesses())
    }

    pub fn read_row_hit_ratio(&self) -> f64 {
        ratio(self.read_row_hits, self.dram_reads)
    }

    pub fn write_row_hit_ratio(&self) -> f64 {
        ratio(self.write_row_hits, self.dram_writes)
    }

    pub fn stalls_per_request(&self) -> f64 {
        ratio(self.cache_stall_cycles, self.requests_total)
    }

    /// Checks the counter identities that every run must satisfy.
    pub fn check_conservation(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        if self.requests_total != self.loads + self.stores {
            errs.push("requests_total != loads + stores");
        }
        if self.requests_total != self.l1_hits + self.l1_misses + self.l1_bypassed + self.l1_coalesced {
            errs.push("requests_total != l1 outcomes");
        }
        if self.dram_accesses() != self.l2_misses + self.l2_bypassed + self.writebacks + self.rinse_writes {
            errs.push("dram accesses != l2 misses + bypasses + writebacks + rinses");
        }
        if self.dram_accesses() != self.row_hits() + self.row_misses() {
            errs.push("dram accesses != row hits + row misses");
        }
        if self.cache_stall_cycles != self.l1_stall_cycles + self.l2_stall_cycles {
            errs.push("stall split does not add up");
        }
        if self.flush_writes > self.writebacks {
            errs.push("flush writes exceed writebacks");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }

    /// Every counter as `(name, value)`, in a fixed order.
    pub fn fields(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("cycles", self.cycles),
            ("requests_total", self.requests_total),
            ("loads", self.loads),
            ("stores", self.stores),
            ("l1_hits", self.l1_hits),
            ("l1_misses", self.l1_misses),
            ("l1_bypassed", self.l1_bypassed),
            ("l1_coalesced", self.l1_coalesced),
            ("l2_hits", self.l2_hits),
            ("l2_misses", self.l2_misses),
            ("l2_store_allocs", self.l2_store_allocs),
            ("l2_bypassed", self.l2_bypassed),
            ("l2_coalesced", self.l2_coalesced),
            ("coalesced_count", self.coalesced_count()),
            ("writebacks", self.writebacks),
            ("flush_writes", self.flush_writes),
            ("rinse_writes", self.rinse_writes),
            ("dram_reads", self.dram_reads),
            ("dram_writes", self.dram_writes),
            ("read_row_hits", self.read_row_hits),
            ("read_row_misses", self.read_row_misses),
            ("write_row_hits", self.write_row_hits),
            ("write_row_misses", self.write_row_misses),
            ("row_hits", self.row_hits()),
            ("row_misses", self.row_misses()),
            ("cache_stall_cycles", self.cache_stall_cycles),
            ("l1_stall_cycles", self.l1_stall_cycles),
            ("l2_stall_cycles", self.l2_stall_cycles),
            ("l1_tag_accesses", self.l1_tag_accesses),
            ("l2_tag_accesses", self.l2_tag_accesses),
            ("invalidated_lines", self.invalidated_lines),
            ("bypass_decisions_cache", self.bypass_decisions_cache),
            ("bypass_decisions_bypass", self.bypass_decisions_bypass),
        ]
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One `key=value` line per counter, then the derived ratios.
impl fmt::Display for RunStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.fields() {
            writeln!(f, "{k}={v}")?;
        }
        writeln!(f, "row_hit_ratio={:.6}", self.row_hit_ratio())?;
        write!(f, "stalls_per_request={:.6}", self.stalls_per_request())
    }
}
