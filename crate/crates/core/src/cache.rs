//! Set-associative cache model shared by the L1s and the L2.
//!
//! Lines move through `Invalid -> Busy -> Valid` on a load miss. At an L2 with
//! [`WritePolicy::CoalesceDirty`] stores merge into lines and mark them
//! `Dirty`; a store miss allocates a dirty line without fetching it. Misses
//! are tracked in MSHRs that coalesce later requests to the same line,
//! including requests that bypass the cache. Replacement is LRU over the
//! non-Busy ways, preferring Invalid ways.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::LineBytes;
use crate::trace::{AccessKind, MemAccess, LINE_BYTES};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheLevel {
    L1,
    L2,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WritePolicy {
    /// Stores pass through without allocating.
    WriteThroughNoAllocate,
    /// Stores merge into dirty lines that are written back on eviction or flush.
    CoalesceDirty,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheConfig {
    pub size_bytes: u64,
    pub line_bytes: u64,
    pub associativity: u64,
    pub level: CacheLevel,
    pub write_policy: WritePolicy,
    pub mshr_entries: usize,
    /// `usize::MAX` means unbounded.
    pub mshr_targets_per_entry: usize,
    pub allocation_bypass: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("cache size {size} is not a whole number of {assoc}-way sets of {line}-byte lines")]
    Geometry { size: u64, assoc: u64, line: u64 },
    #[error("mshr_entries and mshr_targets_per_entry must be at least 1")]
    Mshr,
    #[error("flush_dirty called on a write-through cache")]
    FlushOnWriteThrough,
}

impl CacheConfig {
    /// 16 KB, 64 B lines, 16-way write-through, 32 MSHRs of 8 targets.
    pub fn l1_default() -> Self {
        CacheConfig {
            size_bytes: 16 << 10,
            line_bytes: LINE_BYTES,
            associativity: 16,
            level: CacheLevel::L1,
            write_policy: WritePolicy::WriteThroughNoAllocate,
            mshr_entries: 32,
            mshr_targets_per_entry: 8,
            allocation_bypass: false,
        }
    }

    /// 4 MB, 64 B lines, 16-way, 1024 MSHRs (128 per tag bank) of 16 targets.
    pub fn l2_default() -> Self {
        CacheConfig {
            size_bytes: 4 << 20,
            line_bytes: LINE_BYTES,
            associativity: 16,
            level: CacheLevel::L2,
            write_policy: WritePolicy::CoalesceDirty,
            mshr_entries: 1024,
            mshr_targets_per_entry: 16,
            allocation_bypass: false,
        }
    }

    pub fn num_sets(&self) -> u64 {
        self.size_bytes / (self.associativity * self.line_bytes)
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        let geometry = CacheError::Geometry {
            size: self.size_bytes,
            assoc: self.associativity,
            line: self.line_bytes,
        };
        if self.line_bytes != LINE_BYTES || self.associativity == 0 {
            return Err(geometry);
        }
        let set_bytes = self.associativity * self.line_bytes;
        if self.size_bytes == 0 || self.size_bytes % set_bytes != 0 {
            return Err(geometry);
        }
        if self.mshr_entries == 0 || self.mshr_targets_per_entry == 0 {
            return Err(CacheError::Mshr);
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum LineStatus {
    Invalid,
    Valid,
    Busy,
    Dirty,
}

#[derive(Clone, Debug)]
pub struct LineState {
    pub line_addr: u64,
    pub state: LineStatus,
    pub lru_stamp: u64,
    /// A store hit this line while its fill was pending; it becomes Dirty on fill.
    pub dirty_on_fill: bool,
    data: Option<Box<LineBytes>>,
}

impl LineState {
    fn invalid() -> Self {
        LineState {
            line_addr: 0,
            state: LineStatus::Invalid,
            lru_stamp: 0,
            dirty_on_fill: false,
            data: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MshrEntry {
    pub line_addr: u64,
    pub targets: Vec<u64>,
    pub is_bypass: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum StallCause {
    /// Every way of the target set is Busy.
    SetBusy,
    MshrFull,
    TargetsFull,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum AccessResult {
    Hit,
    MissAllocated,
    MissBypassed,
    CoalescedOntoPending,
    StalledFull(StallCause),
}

/// A line leaving the cache. `data` holds the written bytes of a dirty line
/// when data tracking is enabled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Eviction {
    pub line_addr: u64,
    pub was_dirty: bool,
    pub data: Option<Box<LineBytes>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessOutcome {
    pub result: AccessResult,
    pub evicted: Option<Eviction>,
    /// The access turned a clean or absent line Dirty.
    pub became_dirty: bool,
}

impl AccessOutcome {
    fn of(result: AccessResult) -> Self {
        AccessOutcome { result, evicted: None, became_dirty: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FillResult {
    pub released: Vec<u64>,
    pub installed: bool,
    pub became_dirty: bool,
}

/// Outcome tallies. Stalls count failed attempts, the rest count requests.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses_allocated: u64,
    pub misses_bypassed: u64,
    pub coalesced: u64,
    pub stalled_attempts: u64,
}

impl CacheCounters {
    pub fn requests(&self) -> u64 {
        self.hits + self.misses_allocated + self.misses_bypassed + self.coalesced
    }
}

#[derive(Clone, Debug)]
pub struct Cache {
    cfg: CacheConfig,
    num_sets: u64,
    lines: Vec<LineState>,
    mshr: HashMap<u64, MshrEntry>,
    clock: u64,
    track_data: bool,
    counters: CacheCounters,
}

impl Cache {
    pub fn new(cfg: CacheConfig) -> Result<Self, CacheError> {
        cfg.validate()?;
        let num_sets = cfg.num_sets();
        let lines = vec![LineState::invalid(); (num_sets * cfg.associativity) as usize];
        Ok(Cache {
            cfg,
            num_sets,
            lines,
            mshr: HashMap::new(),
            clock: 0,
            track_data: false,
            counters: CacheCounters::default(),
        })
    }

    /// Keep the written bytes of dirty lines so writebacks carry data.
    pub fn with_data_tracking(mut self, on: bool) -> Self {
        self.track_data = on;
        self
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &CacheCounters {
        &self.counters
    }

    pub fn set_index(&self, line_addr: u64) -> u64 {
        (line_addr / LINE_BYTES) % self.num_sets
    }

    fn ways(&self, set: u64) -> std::ops::Range<usize> {
        let a = self.cfg.associativity as usize;
        let start = set as usize * a;
        start..start + a
    }

    fn find(&self, line_addr: u64) -> Option<usize> {
        self.ways(self.set_index(line_addr))
            .find(|&i| self.lines[i].state != LineStatus::Invalid && self.lines[i].line_addr == line_addr)
    }

    fn touch(&mut self, idx: usize) {
        self.clock += 1;
        self.lines[idx].lru_stamp = self.clock;
    }

    pub fn state_of(&self, line_addr: u64) -> LineStatus {
        self.find(line_addr).map_or(LineStatus::Invalid, |i| self.lines[i].state)
    }

    pub fn mshr_entry(&self, line_addr: u64) -> Option<&MshrEntry> {
        self.mshr.get(&line_addr)
    }

    pub fn mshr_in_use(&self) -> usize {
        self.mshr.len()
    }

    /// Least-recently-used non-Busy way of `set`, Invalid ways first.
    /// `None` when every way is Busy.
    pub fn evict_victim(&self, set: u64) -> Option<usize> {
        let mut best: Option<usize> = None;
        for i in self.ways(set) {
            let l = &self.lines[i];
            match l.state {
                LineStatus::Invalid => return Some(i),
                LineStatus::Busy => {}
                LineStatus::Valid | LineStatus::Dirty => {
                    if best.map_or(true, |b| l.lru_stamp < self.lines[b].lru_stamp) {
                        best = Some(i);
                    }
                }
            }
        }
        best
    }

    /// Clears way `idx`, returning what it held.
    fn take_line(&mut self, idx: usize) -> Option<Eviction> {
        let l = std::mem::replace(&mut self.lines[idx], LineState::invalid());
        match l.state {
            LineStatus::Invalid => None,
            LineStatus::Busy => unreachable!("busy lines are never victims"),
            LineStatus::Valid | LineStatus::Dirty => Some(Eviction {
                line_addr: l.line_addr,
                was_dirty: l.state == LineStatus::Dirty,
                data: if l.state == LineStatus::Dirty { l.data } else { None },
            }),
        }
    }

    fn install(&mut self, idx: usize, line_addr: u64, state: LineStatus) {
        self.lines[idx] = LineState {
            line_addr,
            state,
            lru_stamp: 0,
            dirty_on_fill: false,
            data: None,
        };
        self.touch(idx);
    }

    fn merge_store(&mut self, idx: usize, req: &MemAccess) {
        if self.track_data {
            self.lines[idx]
                .data
                .get_or_insert_with(Default::default)
                .write_store(req);
        }
    }

    fn new_mshr(&mut self, line_addr: u64, id: u64, is_bypass: bool) {
        let prev = self.mshr.insert(line_addr, MshrEntry { line_addr, targets: vec![id], is_bypass });
        debug_assert!(prev.is_none());
    }

    fn stalled(&mut self, cause: StallCause) -> AccessOutcome {
        self.counters.stalled_attempts += 1;
        AccessOutcome::of(AccessResult::StalledFull(cause))
    }

    fn record(&mut self, outcome: AccessOutcome) -> AccessOutcome {
        match outcome.result {
            AccessResult::Hit => self.counters.hits += 1,
            AccessResult::MissAllocated => self.counters.misses_allocated += 1,
            AccessResult::MissBypassed => self.counters.misses_bypassed += 1,
            AccessResult::CoalescedOntoPending => self.counters.coalesced += 1,
            AccessResult::StalledFull(_) => {}
        }
        outcome
    }

    /// Presents one request. `cacheable` is the routing decision for this
    /// level; the request's `seq` identifies it in MSHR target lists.
    pub fn access(&mut self, req: &MemAccess, cacheable: bool) -> AccessOutcome {
        let out = match req.kind {
            AccessKind::Load => self.load(req, cacheable),
            AccessKind::Store => self.store(req, cacheable),
        };
        if matches!(out.result, AccessResult::StalledFull(_)) {
            out
        } else {
            self.record(out)
        }
    }

    fn coalesce(&mut self, line_addr: u64, id: u64) -> AccessOutcome {
        let limit = self.cfg.mshr_targets_per_entry;
        let entry = self.mshr.get_mut(&line_addr).expect("pending line has an mshr entry");
        if entry.targets.len() >= limit {
            return self.stalled(StallCause::TargetsFull);
        }
        entry.targets.push(id);
        AccessOutcome::of(AccessResult::CoalescedOntoPending)
    }

    fn load(&mut self, req: &MemAccess, cacheable: bool) -> AccessOutcome {
        let line_addr = req.line();
        if let Some(idx) = self.find(line_addr) {
            match self.lines[idx].state {
                LineStatus::Valid | LineStatus::Dirty => {
                    // Present data serves bypassing loads too; they just never install.
                    self.touch(idx);
                    return AccessOutcome::of(AccessResult::Hit);
                }
                LineStatus::Busy => return self.coalesce(line_addr, req.seq),
                LineStatus::Invalid => unreachable!(),
            }
        }
        if self.mshr.contains_key(&line_addr) {
            return self.coalesce(line_addr, req.seq);
        }
        if self.mshr.len() >= self.cfg.mshr_entries {
            return self.stalled(StallCause::MshrFull);
        }
        if !cacheable {
            self.new_mshr(line_addr, req.seq, true);
            return AccessOutcome::of(AccessResult::MissBypassed);
        }
        let set = self.set_index(line_addr);
        match self.evict_victim(set) {
            None if self.cfg.allocation_bypass => {
                self.new_mshr(line_addr, req.seq, true);
                AccessOutcome::of(AccessResult::MissBypassed)
            }
            None => self.stalled(StallCause::SetBusy),
            Some(way) => {
                let evicted = self.take_line(way);
                self.install(way, line_addr, LineStatus::Busy);
                self.new_mshr(line_addr, req.seq, false);
                AccessOutcome { result: AccessResult::MissAllocated, evicted, became_dirty: false }
            }
        }
    }

    fn store(&mut self, req: &MemAccess, cacheable: bool) -> AccessOutcome {
        let line_addr = req.line();
        let present = self.find(line_addr);
        if self.cfg.write_policy == WritePolicy::WriteThroughNoAllocate || !cacheable {
            // Forwarded. A dirty copy (or pending dirty fill) absorbs the bytes
            // as well so a later writeback cannot resurrect older data.
            if let Some(idx) = present {
                let l = &self.lines[idx];
                if l.state == LineStatus::Dirty || l.dirty_on_fill {
                    self.merge_store(idx, req);
                }
            }
            return AccessOutcome::of(AccessResult::MissBypassed);
        }
        if let Some(idx) = present {
            let became_dirty = match self.lines[idx].state {
                LineStatus::Valid => {
                    self.lines[idx].state = LineStatus::Dirty;
                    true
                }
                LineStatus::Busy => {
                    self.lines[idx].dirty_on_fill = true;
                    false
                }
                _ => false,
            };
            self.merge_store(idx, req);
            self.touch(idx);
            return AccessOutcome { result: AccessResult::Hit, evicted: None, became_dirty };
        }
        let set = self.set_index(line_addr);
        match self.evict_victim(set) {
            None if self.cfg.allocation_bypass => AccessOutcome::of(AccessResult::MissBypassed),
            None => self.stalled(StallCause::SetBusy),
            Some(way) => {
                let evicted = self.take_line(way);
                self.install(way, line_addr, LineStatus::Dirty);
                self.merge_store(way, req);
                AccessOutcome { result: AccessResult::MissAllocated, evicted, became_dirty: true }
            }
        }
    }

    /// Completes the outstanding miss for `line_addr`, releasing all of its targets.
    ///
    /// # Panics
    /// If no MSHR entry exists for the line.
    pub fn fill(&mut self, line_addr: u64) -> FillResult {
        let entry = self
            .mshr
            .remove(&line_addr)
            .unwrap_or_else(|| panic!("fill of {line_addr:#x} without an outstanding miss"));
        let mut result = FillResult { released: entry.targets, ..Default::default() };
        if !entry.is_bypass {
            let idx = self.find(line_addr).expect("allocated miss owns a busy line");
            let l = &mut self.lines[idx];
            debug_assert_eq!(l.state, LineStatus::Busy);
            if l.dirty_on_fill {
                l.state = LineStatus::Dirty;
                l.dirty_on_fill = false;
                result.became_dirty = true;
            } else {
                l.state = LineStatus::Valid;
            }
            result.installed = true;
        }
        result
    }

    /// Invalidates every Valid line; Dirty and Busy lines are kept.
    /// Returns the invalidated line addresses in way order.
    pub fn self_invalidate_lines(&mut self) -> Vec<u64> {
        let mut out = Vec::new();
        for l in &mut self.lines {
            if l.state == LineStatus::Valid {
                out.push(l.line_addr);
                *l = LineState::invalid();
            }
        }
        out
    }

    pub fn self_invalidate(&mut self) -> usize {
        self.self_invalidate_lines().len()
    }

    /// Writes back and invalidates every Dirty line, ordered by
    /// `(row_key(line), line)` so that lines sharing a DRAM row are adjacent.
    pub fn flush_dirty(&mut self, row_key: impl Fn(u64) -> u64) -> Result<Vec<Eviction>, CacheError> {
        if self.cfg.write_policy != WritePolicy::CoalesceDirty {
            return Err(CacheError::FlushOnWriteThrough);
        }
        let mut out: Vec<Eviction> = Vec::new();
        for idx in 0..self.lines.len() {
            if self.lines[idx].state == LineStatus::Dirty {
                out.extend(self.take_line(idx));
            }
        }
        out.sort_by_key(|e| (row_key(e.line_addr), e.line_addr));
        Ok(out)
    }

    /// Writes back a Dirty line but keeps it resident as Valid.
    pub fn clean_line(&mut self, line_addr: u64) -> Option<Eviction> {
        let idx = self.find(line_addr)?;
        let l = &mut self.lines[idx];
        if l.state != LineStatus::Dirty {
            return None;
        }
        l.state = LineStatus::Valid;
        Some(Eviction { line_addr, was_dirty: true, data: l.data.take() })
    }

    pub fn lines_in(&self, status: LineStatus) -> Vec<u64> {
        let mut v: Vec<u64> = self
            .lines
            .iter()
            .filter(|l| l.state == status)
            .map(|l| l.line_addr)
            .collect();
        v.sort_unstable();
        v
    }

    /// Structural self-check: one MSHR entry per line, bounded targets, every
    /// Busy line owned by a non-bypass entry and vice versa.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (addr, e) in &self.mshr {
            if *addr != e.line_addr {
                return Err(format!("mshr key {addr:#x} holds entry for {:#x}", e.line_addr));
            }
            if e.targets.len() > self.cfg.mshr_targets_per_entry {
                return Err(format!("mshr entry {addr:#x} over target limit"));
            }
            let busy = self.find(*addr).map(|i| self.lines[i].state) == Some(LineStatus::Busy);
            if !e.is_bypass && !busy {
                return Err(format!("allocating mshr entry {addr:#x} has no busy line"));
            }
        }
        if self.mshr.len() > self.cfg.mshr_entries {
            return Err("mshr over capacity".into());
        }
        for l in &self.lines {
            if l.state == LineStatus::Busy && self.mshr.get(&l.line_addr).map_or(true, |e| e.is_bypass) {
                return Err(format!("busy line {:#x} has no owning mshr entry", l.line_addr));
            }
            if l.state == LineStatus::Dirty && self.cfg.write_policy != WritePolicy::CoalesceDirty {
                return Err("dirty line in a write-through cache".into());
            }
        }
        for set in 0..self.num_sets {
            let mut seen: Vec<u64> = self
                .ways(set)
                .filter(|&i| self.lines[i].state != LineStatus::Invalid)
                .map(|i| self.lines[i].line_addr)
                .collect();
            let n = seen.len();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != n {
                return Err(format!("duplicate tag in set {set}"));
            }
        }
        Ok(())
    }
}
