//! Cycle-approximate driver: CUs issue trace requests into per-CU L1s, a
//! banked shared L2 and the DRAM model, all on one clock.
//!
//! Loads go CU → L1 → L2 → DRAM and back; stores skip the L1 and are posted
//! (they retire once the L2 has accepted them). Each cache level admits a
//! bounded number of tag lookups per cycle, and a request that cannot query
//! its cache in a cycle blocks the requests queued behind it. Every blocked
//! request-cycle counts as a cache stall.

mod policy;
mod stats;

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use thiserror::Error;

use crate::adaptive::{DirtyBlockIndex, PredictorConfig, PredictorTable, ReuseTracker};
use crate::cache::{AccessResult, Cache, CacheConfig, CacheError, Eviction, LineStatus};
use crate::dram::{Dram, DramConfig, DramConfigError};
use crate::memory::{LineBytes, MemoryImage};
use crate::trace::{AccessKind, MarkerScope, MemAccess, Trace, TraceEntry, TraceError, LINE_BYTES};

pub use policy::{route, BypassReason, Policy, PolicyConfig, PolicyError, RequestPath};
pub use stats::RunStats;

/// Uncontended round-trip latencies seen by a CU, in cycles.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Latencies {
    pub l1: u64,
    pub l2: u64,
    pub mem: u64,
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies { l1: 50, l2: 125, mem: 225 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub num_cus: u16,
    pub l1: CacheConfig,
    pub l2: CacheConfig,
    pub l2_banks: u64,
    pub l1_tag_ports: usize,
    pub l2_tag_ports_per_bank: usize,
    pub dram: DramConfig,
    pub issue_width: usize,
    /// Outstanding requests a CU may have before it stops issuing.
    pub max_inflight_per_cu: usize,
    pub latencies: Latencies,
    pub predictor: PredictorConfig,
    /// Carry store bytes through the hierarchy and record DRAM contents.
    pub track_data: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            num_cus: 64,
            l1: CacheConfig::l1_default(),
            l2: CacheConfig::l2_default(),
            l2_banks: 8,
            l1_tag_ports: 2,
            l2_tag_ports_per_bank: 1,
            dram: DramConfig::default(),
            issue_width: 1,
            max_inflight_per_cu: 40,
            latencies: Latencies::default(),
            predictor: PredictorConfig::default(),
            track_data: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid trace: {0}")]
    InvalidTrace(#[from] TraceError),
    #[error("invalid policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("invalid cache configuration: {0}")]
    Cache(#[from] CacheError),
    #[error("invalid DRAM configuration: {0}")]
    Dram(#[from] DramConfigError),
    #[error("invalid engine configuration: {0}")]
    Config(String),
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.l1.validate()?;
        self.l2.validate()?;
        self.dram.validate()?;
        self.predictor.validate().map_err(EngineError::Config)?;
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.num_cus == 0 || self.num_cus > 256 {
            return bad("num_cus must be within 1..=256");
        }
        if self.issue_width == 0 || self.max_inflight_per_cu == 0 {
            return bad("issue_width and max_inflight_per_cu must be positive");
        }
        if self.l1_tag_ports == 0 || self.l2_tag_ports_per_bank == 0 || self.l2_banks == 0 {
            return bad("tag ports and L2 banks must be positive");
        }
        let l = self.latencies;
        if !(0 < l.l1 && l.l1 < l.l2 && l.l2 < l.mem) {
            return bad("latencies must be strictly increasing: l1 < l2 < mem");
        }
        if l.l1 < 2 || l.l2 <= l.l1 / 2 {
            return bad("l1 latency too small to split into request and response hops");
        }
        if l.mem < l.l1 / 2 + self.dram.uncontended_latency() {
            return bad("mem latency is below the L1 hop plus the uncontended DRAM access time");
        }
        Ok(())
    }

    fn to_l2_hop(&self) -> u64 {
        self.latencies.l1 / 2
    }

    fn l2_return_hop(&self) -> u64 {
        self.latencies.l2 - self.to_l2_hop()
    }

    fn mem_return_hop(&self) -> u64 {
        self.latencies.mem - self.to_l2_hop() - self.dram.uncontended_latency()
    }

    fn l2_bank(&self, line: u64) -> usize {
        ((line / LINE_BYTES) % self.l2_banks) as usize
    }
}

/// Simulates `trace` on a fresh system.
pub fn run(trace: &Trace, cfg: &EngineConfig, policy: PolicyConfig) -> Result<RunStats, EngineError> {
    Simulator::new(cfg.clone(), policy)?.execute(trace)
}

/// Persistent simulated system. Cache, DRAM and predictor state carry over
/// between [`Simulator::execute`] calls; the clock keeps running.
pub struct Simulator {
    cfg: EngineConfig,
    policy: PolicyConfig,
    l1s: Vec<Cache>,
    l2: Cache,
    dram: Dram,
    dbi: DirtyBlockIndex,
    predictor: PredictorTable,
    tracker: ReuseTracker,
    image: Option<MemoryImage>,
    now: u64,
}

impl Simulator {
    pub fn new(cfg: EngineConfig, policy: PolicyConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        policy.validate()?;
        let l1cfg = CacheConfig { allocation_bypass: policy.allocation_bypass, ..cfg.l1.clone() };
        let l2cfg = CacheConfig { allocation_bypass: policy.allocation_bypass, ..cfg.l2.clone() };
        let l1 = Cache::new(l1cfg)?;
        let l2 = Cache::new(l2cfg)?.with_data_tracking(cfg.track_data);
        Ok(Simulator {
            l1s: vec![l1; cfg.num_cus as usize],
            l2,
            dram: Dram::new(cfg.dram.clone())?,
            dbi: DirtyBlockIndex::default(),
            predictor: PredictorTable::new(cfg.predictor.clone()),
            tracker: ReuseTracker::default(),
            image: cfg.track_data.then(MemoryImage::default),
            now: 0,
            cfg,
            policy,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn policy(&self) -> PolicyConfig {
        self.policy
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn l1(&self, cu: usize) -> &Cache {
        &self.l1s[cu]
    }

    pub fn l2(&self) -> &Cache {
        &self.l2
    }

    pub fn dram(&self) -> &Dram {
        &self.dram
    }

    pub fn dbi(&self) -> &DirtyBlockIndex {
        &self.dbi
    }

    pub fn predictor(&self) -> &PredictorTable {
        &self.predictor
    }

    /// DRAM contents, when the config enables data tracking.
    pub fn memory_image(&self) -> Option<&MemoryImage> {
        self.image.as_ref()
    }

    /// Cross-checks cache structures and the dirty block index.
    pub fn audit(&self) -> Result<(), String> {
        for (i, c) in self.l1s.iter().enumerate() {
            c.check_invariants().map_err(|e| format!("L1[{i}]: {e}"))?;
        }
        self.l2.check_invariants().map_err(|e| format!("L2: {e}"))?;
        let diffs = self.dbi.audit(&self.l2.lines_in(LineStatus::Dirty));
        if !diffs.is_empty() {
            return Err(format!("dirty block index disagrees with L2: {diffs:?}"));
        }
        Ok(())
    }

    /// Drives `trace` to completion starting at the current cycle. The
    /// returned stats cover this call only.
    pub fn execute(&mut self, trace: &Trace) -> Result<RunStats, EngineError> {
        trace.validate(self.cfg.num_cus as usize)?;
        let mut run = Run::new(self, trace);
        run.drive();
        let stats = run.finish();
        debug_assert_eq!(stats.check_conservation(), Ok(()));
        Ok(stats)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    L1HitDone(u32),
    ArriveL2(u32),
    DramReadDone(u64),
    RespondL1(u32),
}

struct Req {
    acc: MemAccess,
    path: RequestPath,
}

struct Phase {
    /// Request indices per CU, in seq order.
    per_cu: Vec<VecDeque<u32>>,
    count: usize,
    scope: Option<MarkerScope>,
}

#[derive(Copy, Clone, PartialEq, Eq)]
enum PhaseState {
    Running,
    /// Waiting for the system-scope flush writes to reach DRAM.
    Flushing,
}

struct DramReq {
    line: u64,
    kind: AccessKind,
}

struct Run<'a> {
    sim: &'a mut Simulator,
    reqs: Vec<Req>,
    seqs: Vec<u64>,
    phases: VecDeque<Phase>,
    state: PhaseState,
    outstanding: usize,
    inflight: Vec<usize>,
    events: BinaryHeap<Reverse<(u64, u64, Event)>>,
    event_order: u64,
    l1_queues: Vec<VecDeque<u32>>,
    l1_fills: Vec<VecDeque<u64>>,
    l2_queues: Vec<VecDeque<u32>>,
    l2_fills: Vec<VecDeque<u64>>,
    queued: usize,
    dram_waiting: Vec<VecDeque<DramReq>>,
    waiting_banks: BTreeSet<usize>,
    start: u64,
    last_activity: u64,
    stats: RunStats,
}

impl<'a> Run<'a> {
    fn new(sim: &'a mut Simulator, trace: &Trace) -> Self {
        let n_cu = sim.cfg.num_cus as usize;
        let new_phase = || Phase { per_cu: vec![VecDeque::new(); n_cu], count: 0, scope: None };
        let mut reqs = Vec::new();
        let mut phases = VecDeque::new();
        let mut cur = new_phase();
        for e in &trace.entries {
            match e {
                TraceEntry::Access(a) => {
                    cur.per_cu[a.cu_id as usize].push_back(reqs.len() as u32);
                    cur.count += 1;
                    reqs.push(Req {
                        acc: *a,
                        path: RequestPath { l1_cacheable: false, l2_cacheable: false, bypass_reason: None },
                    });
                }
                TraceEntry::Marker(m) => {
                    cur.scope = Some(m.scope);
                    phases.push_back(std::mem::replace(&mut cur, new_phase()));
                }
            }
        }
        if cur.count > 0 {
            phases.push_back(cur);
        }
        let seqs = reqs.iter().map(|r| r.acc.seq).collect();
        let banks = sim.cfg.l2_banks as usize;
        let dram_banks = sim.cfg.dram.num_banks();
        let start = sim.now;
        Run {
            reqs,
            seqs,
            phases,
            state: PhaseState::Running,
            outstanding: 0,
            inflight: vec![0; n_cu],
            events: BinaryHeap::new(),
            event_order: 0,
            l1_queues: vec![VecDeque::new(); n_cu],
            l1_fills: vec![VecDeque::new(); n_cu],
            l2_queues: vec![VecDeque::new(); banks],
            l2_fills: vec![VecDeque::new(); banks],
            queued: 0,
            dram_waiting: (0..dram_banks).map(|_| VecDeque::new()).collect(),
            waiting_banks: BTreeSet::new(),
            start,
            last_activity: start,
            stats: RunStats::default(),
            sim,
        }
    }

    fn idx_of_seq(&self, seq: u64) -> u32 {
        self.seqs.binary_search(&seq).expect("target seq belongs to this run") as u32
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        self.event_order += 1;
        self.events.push(Reverse((at, self.event_order, ev)));
    }

    fn drive(&mut self) {
        let mut now = self.start;
        if let Some(p) = self.phases.front() {
            self.outstanding = p.count;
        }
        loop {
            self.handle_events(now);
            self.advance_phases(now);
            if self.phases.is_empty() && self.idle() {
                break;
            }
            self.issue(now);
            self.l1_cycle(now);
            self.l2_cycle(now);
            self.dram_cycle(now);
            now = self.next_time(now);
        }
        let end = self.last_activity.max(self.sim.dram.idle_at()).max(self.start);
        self.stats.cycles = end - self.start;
        self.sim.now = end;
    }

    fn finish(self) -> RunStats {
        self.stats
    }

    fn idle(&self) -> bool {
        self.events.is_empty() && self.queued == 0 && self.waiting_banks.is_empty()
    }

    fn next_time(&self, now: u64) -> u64 {
        if self.queued > 0 || !self.waiting_banks.is_empty() || self.can_issue() {
            return now + 1;
        }
        let mut next = u64::MAX;
        if let Some(Reverse((t, _, _))) = self.events.peek() {
            next = *t;
        }
        if self.state == PhaseState::Flushing {
            next = next.min(self.sim.dram.idle_at());
        }
        if next == u64::MAX {
            now + 1
        } else {
            next.max(now + 1)
        }
    }

    fn can_issue(&self) -> bool {
        if self.state != PhaseState::Running {
            return false;
        }
        let Some(p) = self.phases.front() else { return false };
        p.per_cu
            .iter()
            .zip(&self.inflight)
            .any(|(q, &n)| !q.is_empty() && n < self.sim.cfg.max_inflight_per_cu)
    }

    fn handle_events(&mut self, now: u64) {
        while let Some(Reverse((t, _, ev))) = self.events.peek().copied() {
            if t > now {
                break;
            }
            self.events.pop();
            self.last_activity = self.last_activity.max(t);
            match ev {
                Event::L1HitDone(idx) => self.complete(idx, now),
                Event::ArriveL2(idx) => {
                    let bank = self.sim.cfg.l2_bank(self.reqs[idx as usize].acc.line());
                    self.l2_queues[bank].push_back(idx);
                    self.queued += 1;
                }
                Event::DramReadDone(line) => {
                    let bank = self.sim.cfg.l2_bank(line);
                    self.l2_fills[bank].push_back(line);
                    self.queued += 1;
                }
                Event::RespondL1(idx) => {
                    let a = self.reqs[idx as usize].acc;
                    self.l1_fills[a.cu_id as usize].push_back(a.line());
                    self.queued += 1;
                }
            }
        }
    }

    fn complete(&mut self, idx: u32, now: u64) {
        let cu = self.reqs[idx as usize].acc.cu_id as usize;
        self.inflight[cu] -= 1;
        self.outstanding -= 1;
        self.last_activity = self.last_activity.max(now);
    }

    /// Applies kernel markers once their phase has fully drained.
    fn advance_phases(&mut self, now: u64) {
        loop {
            let Some(p) = self.phases.front() else { return };
            match self.state {
                PhaseState::Running => {
                    let drained = self.outstanding == 0
                        && p.per_cu.iter().all(|q| q.is_empty())
                        && self.idle();
                    if !drained {
                        return;
                    }
                    match p.scope {
                        None => {}
                        Some(scope) => {
                            self.self_invalidate();
                            if scope == MarkerScope::SystemScope {
                                self.flush(now);
                                self.state = PhaseState::Flushing;
                                continue;
                            }
                        }
                    }
                }
                PhaseState::Flushing => {
                    if !self.waiting_banks.is_empty() || self.sim.dram.idle_at() > now {
                        return;
                    }
                    self.state = PhaseState::Running;
                }
            }
            self.phases.pop_front();
            if let Some(next) = self.phases.front() {
                self.outstanding = next.count;
            }
        }
    }

    fn self_invalidate(&mut self) {
        let mut n = 0;
        for c in &mut self.sim.l1s {
            n += c.self_invalidate() as u64;
        }
        for line in self.sim.l2.self_invalidate_lines() {
            n += 1;
            self.end_of_life(line);
        }
        for ev in self.sim.tracker.drain_shadow() {
            self.sim.predictor.train(ev.pc, ev.reused);
        }
        self.stats.invalidated_lines += n;
    }

    fn flush(&mut self, now: u64) {
        if self.sim.policy.policy != Policy::CacheRW {
            return;
        }
        let dram_cfg = self.sim.cfg.dram.clone();
        let lines = self.sim.l2.flush_dirty(|l| dram_cfg.row_of(l)).expect("L2 coalesces dirty lines");
        for ev in lines {
            self.sim.dbi.clear(ev.line_addr);
            self.end_of_life(ev.line_addr);
            self.stats.writebacks += 1;
            self.stats.flush_writes += 1;
            self.dram_write(ev.line_addr, ev.data.as_deref(), now);
        }
    }

    fn track_insert(&mut self, acc: &MemAccess) {
        if let Some(ev) = self.sim.tracker.insert(acc.line(), acc.pc, acc.kind) {
            self.sim.predictor.train(ev.pc, ev.reused);
        }
    }

    /// Sampled sets keep watching PCs the predictor sends around the L2.
    fn observe_bypass(&mut self, idx: u32) {
        let r = &self.reqs[idx as usize];
        if r.path.bypass_reason != Some(BypassReason::Predictor) {
            return;
        }
        let line = r.acc.line();
        if self.sim.cfg.predictor.is_sampled(self.sim.l2.set_index(line)) {
            self.sim.tracker.observe_bypass(line, r.acc.pc, r.acc.kind);
        }
    }

    fn end_of_life(&mut self, line: u64) {
        if let Some(ev) = self.sim.tracker.end_of_life(line) {
            self.sim.predictor.train(ev.pc, ev.reused);
        }
    }

    fn issue(&mut self, now: u64) {
        if self.state != PhaseState::Running {
            return;
        }
        let Some(phase) = self.phases.front_mut() else { return };
        let cfg = &self.sim.cfg;
        let policy = self.sim.policy;
        for cu in 0..cfg.num_cus as usize {
            for _ in 0..cfg.issue_width {
                if self.inflight[cu] >= cfg.max_inflight_per_cu {
                    break;
                }
                let Some(idx) = phase.per_cu[cu].pop_front() else { break };
                self.inflight[cu] += 1;
                let req = &mut self.reqs[idx as usize];
                let pred = policy.pc_bypass.then_some(&self.sim.predictor);
                let path = route(&policy, &req.acc, pred);
                if policy.pc_bypass && path.bypass_reason != Some(BypassReason::Policy) {
                    if path.l2_cacheable {
                        self.stats.bypass_decisions_cache += 1;
                    } else {
                        self.stats.bypass_decisions_bypass += 1;
                    }
                }
                req.path = path;
                self.stats.requests_total += 1;
                match req.acc.kind {
                    AccessKind::Load => {
                        self.stats.loads += 1;
                        self.l1_queues[cu].push_back(idx);
                        self.queued += 1;
                    }
                    AccessKind::Store => {
                        self.stats.stores += 1;
                        self.stats.l1_bypassed += 1;
                        self.event_order += 1;
                        let at = now + cfg.to_l2_hop();
                        self.events.push(Reverse((at, self.event_order, Event::ArriveL2(idx))));
                    }
                }
            }
        }
    }

    fn l1_cycle(&mut self, now: u64) {
        let ports = self.sim.cfg.l1_tag_ports;
        let hop = self.sim.cfg.to_l2_hop();
        let l1_lat = self.sim.cfg.latencies.l1;
        for cu in 0..self.l1_queues.len() {
            if self.l1_fills[cu].is_empty() && self.l1_queues[cu].is_empty() {
                continue;
            }
            let mut budget = ports;
            while let Some(&line) = self.l1_fills[cu].front() {
                let cache = &mut self.sim.l1s[cu];
                let needs_port = !cache.mshr_entry(line).expect("pending L1 miss").is_bypass;
                if needs_port && budget == 0 {
                    break;
                }
                self.l1_fills[cu].pop_front();
                self.queued -= 1;
                if needs_port {
                    budget -= 1;
                    self.stats.l1_tag_accesses += 1;
                }
                let fill = cache.fill(line);
                for seq in fill.released {
                    let idx = self.idx_of_seq(seq);
                    self.complete(idx, now);
                }
            }
            while let Some(&idx) = self.l1_queues[cu].front() {
                let req = &self.reqs[idx as usize];
                let cacheable = req.path.l1_cacheable;
                if cacheable && budget == 0 {
                    self.stall_l1(cu);
                    break;
                }
                if cacheable {
                    budget -= 1;
                    self.stats.l1_tag_accesses += 1;
                }
                let out = self.sim.l1s[cu].access(&req.acc, cacheable);
                match out.result {
                    AccessResult::StalledFull(_) => {
                        self.stall_l1(cu);
                        break;
                    }
                    AccessResult::Hit => {
                        self.stats.l1_hits += 1;
                        self.schedule(now + l1_lat, Event::L1HitDone(idx));
                    }
                    AccessResult::MissAllocated => {
                        self.stats.l1_misses += 1;
                        self.schedule(now + hop, Event::ArriveL2(idx));
                    }
                    AccessResult::MissBypassed => {
                        self.stats.l1_bypassed += 1;
                        self.schedule(now + hop, Event::ArriveL2(idx));
                    }
                    AccessResult::CoalescedOntoPending => self.stats.l1_coalesced += 1,
                }
                self.l1_queues[cu].pop_front();
                self.queued -= 1;
            }
        }
    }

    fn stall_l1(&mut self, cu: usize) {
        let n = self.l1_queues[cu].len() as u64;
        self.stats.l1_stall_cycles += n;
        self.stats.cache_stall_cycles += n;
    }

    fn stall_l2(&mut self, bank: usize) {
        let n = self.l2_queues[bank].len() as u64;
        self.stats.l2_stall_cycles += n;
        self.stats.cache_stall_cycles += n;
    }

    fn l2_cycle(&mut self, now: u64) {
        let ports = self.sim.cfg.l2_tag_ports_per_bank;
        let ret = self.sim.cfg.l2_return_hop();
        for bank in 0..self.l2_queues.len() {
            if self.l2_fills[bank].is_empty() && self.l2_queues[bank].is_empty() {
                continue;
            }
            let mut budget = ports;
            while let Some(&line) = self.l2_fills[bank].front() {
                let needs_port = !self.sim.l2.mshr_entry(line).expect("pending L2 miss").is_bypass;
                if needs_port && budget == 0 {
                    break;
                }
                self.l2_fills[bank].pop_front();
                self.queued -= 1;
                if needs_port {
                    budget -= 1;
                    self.stats.l2_tag_accesses += 1;
                }
                let fill = self.sim.l2.fill(line);
                if fill.became_dirty {
                    self.mark_dirty(line);
                }
                let back = now + self.sim.cfg.mem_return_hop();
                for seq in fill.released {
                    let idx = self.idx_of_seq(seq);
                    self.schedule(back, Event::RespondL1(idx));
                }
            }
            while let Some(&idx) = self.l2_queues[bank].front() {
                let acc = self.reqs[idx as usize].acc;
                let cacheable = self.reqs[idx as usize].path.l2_cacheable;
                if cacheable && budget == 0 {
                    self.stall_l2(bank);
                    break;
                }
                if cacheable {
                    budget -= 1;
                    self.stats.l2_tag_accesses += 1;
                }
                let out = self.sim.l2.access(&acc, cacheable);
                if let AccessResult::StalledFull(_) = out.result {
                    self.stall_l2(bank);
                    break;
                }
                self.l2_queues[bank].pop_front();
                self.queued -= 1;
                if let Some(ev) = out.evicted {
                    self.evicted(ev, now);
                }
                if out.became_dirty {
                    self.mark_dirty(acc.line());
                }
                let tracking = self.sim.policy.pc_bypass;
                match (acc.kind, out.result) {
                    (_, AccessResult::StalledFull(_)) => unreachable!(),
                    (AccessKind::Load, AccessResult::Hit) => {
                        self.stats.l2_hits += 1;
                        if tracking {
                            self.sim.tracker.on_hit(acc.line(), acc.kind);
                        }
                        self.schedule(now + ret, Event::RespondL1(idx));
                    }
                    (AccessKind::Load, AccessResult::MissAllocated) => {
                        self.stats.l2_misses += 1;
                        if tracking {
                            self.track_insert(&acc);
                        }
                        self.dram_read(acc.line(), now);
                    }
                    (AccessKind::Load, AccessResult::MissBypassed) => {
                        self.stats.l2_bypassed += 1;
                        self.observe_bypass(idx);
                        self.dram_read(acc.line(), now);
                    }
                    (AccessKind::Load, AccessResult::CoalescedOntoPending) => self.stats.l2_coalesced += 1,
                    (AccessKind::Store, r) => {
                        match r {
                            AccessResult::Hit => {
                                self.stats.l2_hits += 1;
                                if tracking {
                                    self.sim.tracker.on_hit(acc.line(), acc.kind);
                                }
                            }
                            AccessResult::MissAllocated => {
                                self.stats.l2_store_allocs += 1;
                                if tracking {
                                    self.track_insert(&acc);
                                }
                            }
                            AccessResult::MissBypassed => {
                                self.stats.l2_bypassed += 1;
                                self.observe_bypass(idx);
                                let data = self.sim.cfg.track_data.then(|| LineBytes::from_store(&acc));
                                self.dram_write(acc.line(), data.as_ref(), now);
                            }
                            _ => unreachable!("stores never coalesce onto pending misses"),
                        }
                        self.complete(idx, now);
                    }
                }
            }
        }
    }

    fn mark_dirty(&mut self, line: u64) {
        let row = self.sim.cfg.dram.row_of(line);
        self.sim.dbi.mark(line, row);
    }

    fn evicted(&mut self, ev: Eviction, now: u64) {
        self.end_of_life(ev.line_addr);
        if !ev.was_dirty {
            return;
        }
        let rinse = if self.sim.policy.cache_rinse {
            self.sim.dbi.on_dirty_evict(ev.line_addr)
        } else {
            self.sim.dbi.clear(ev.line_addr);
            Vec::new()
        };
        self.stats.writebacks += 1;
        self.dram_write(ev.line_addr, ev.data.as_deref(), now);
        for line in rinse {
            let cleaned = self.sim.l2.clean_line(line).expect("indexed line is dirty");
            self.stats.rinse_writes += 1;
            self.dram_write(line, cleaned.data.as_deref(), now);
        }
    }

    fn dram_read(&mut self, line: u64, now: u64) {
        self.dram_request(DramReq { line, kind: AccessKind::Load }, now);
    }

    fn dram_write(&mut self, line: u64, data: Option<&LineBytes>, now: u64) {
        if let (Some(img), Some(d)) = (self.sim.image.as_mut(), data) {
            img.write(line, d);
        }
        self.dram_request(DramReq { line, kind: AccessKind::Store }, now);
    }

    fn dram_request(&mut self, req: DramReq, now: u64) {
        let bank = self.sim.cfg.dram.bank_index(req.line);
        if self.dram_waiting[bank].is_empty() && self.sim.dram.can_accept(bank, now) {
            self.dram_issue(req, now);
        } else {
            self.dram_waiting[bank].push_back(req);
            self.waiting_banks.insert(bank);
        }
    }

    fn dram_issue(&mut self, req: DramReq, now: u64) {
        let out = self.sim.dram.access(req.line, req.kind, now).expect("bank has room");
        let s = &mut self.stats;
        match (req.kind, out.row_hit) {
            (AccessKind::Load, true) => s.read_row_hits += 1,
            (AccessKind::Load, false) => s.read_row_misses += 1,
            (AccessKind::Store, true) => s.write_row_hits += 1,
            (AccessKind::Store, false) => s.write_row_misses += 1,
        }
        match req.kind {
            AccessKind::Load => {
                s.dram_reads += 1;
                self.schedule(out.completion, Event::DramReadDone(req.line));
            }
            AccessKind::Store => s.dram_writes += 1,
        }
    }

    fn dram_cycle(&mut self, now: u64) {
        if self.waiting_banks.is_empty() {
            return;
        }
        let banks: Vec<usize> = self.waiting_banks.iter().copied().collect();
        for bank in banks {
            while !self.dram_waiting[bank].is_empty() && self.sim.dram.can_accept(bank, now) {
                let req = self.dram_waiting[bank].pop_front().expect("non-empty");
                self.dram_issue(req, now);
            }
            if self.dram_waiting[bank].is_empty() {
                self.waiting_banks.remove(&bank);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceBuilder;

    fn one_load(addr: u64) -> Trace {
        let mut b = TraceBuilder::default();
        b.load(0, addr, 4, 0);
        b.finish()
    }

    #[test]
    fn empty_trace_is_all_zero() {
        let s = run(&Trace::default(), &EngineConfig::default(), PolicyConfig::CACHE_RW).unwrap();
        assert_eq!(s, RunStats::default());
    }

    #[test]
    fn uncontended_latencies() {
        let cfg = EngineConfig::default();
        let s = run(&one_load(0x1000), &cfg, PolicyConfig::UNCACHED).unwrap();
        assert_eq!(s.cycles, 225);
        let mut sim = Simulator::new(cfg, PolicyConfig::CACHE_R).unwrap();
        assert_eq!(sim.execute(&one_load(0x1000)).unwrap().cycles, 225);
        let again = sim.execute(&one_load(0x1000)).unwrap();
        assert_eq!(again.cycles, 50);
        assert_eq!(again.l1_hits, 1);
    }

    #[test]
    fn l2_hit_latency() {
        let cfg = EngineConfig::default();
        let mut sim = Simulator::new(cfg, PolicyConfig::CACHE_R).unwrap();
        sim.execute(&one_load(0x1000)).unwrap();
        let mut b = TraceBuilder::default();
        b.load(0, 0x1000, 4, 1);
        let s = sim.execute(&b.finish()).unwrap();
        assert_eq!((s.cycles, s.l2_hits), (125, 1));
    }

    #[test]
    fn uncached_never_hits() {
        let mut b = TraceBuilder::default();
        for i in 0..50 {
            b.load(0, 0x1000 + (i % 5) * 64, 4, (i % 4) as u8);
            b.store(1, 0x9000 + (i % 3) * 64, 4, (i % 4) as u8);
        }
        b.marker(MarkerScope::SystemScope);
        let s = run(&b.finish(), &EngineConfig::default(), PolicyConfig::UNCACHED).unwrap();
        assert_eq!((s.l1_hits, s.l2_hits), (0, 0));
        assert_eq!(s.requests_total, 100);
        s.check_conservation().unwrap();
    }

    #[test]
    fn kernel_regression_is_rejected() {
        let mut t = one_load(0);
        if let TraceEntry::Access(a) = &mut t.entries[0] {
            a.kernel_id = 3;
        }
        let mut b = TraceBuilder::default();
        b.load(0, 64, 4, 0);
        let mut t2 = b.finish();
        if let TraceEntry::Access(a) = &mut t2.entries[0] {
            a.seq = 1;
        }
        t.entries.extend(t2.entries);
        assert!(matches!(
            run(&t, &EngineConfig::default(), PolicyConfig::UNCACHED),
            Err(EngineError::InvalidTrace(_))
        ));
    }

    #[test]
    fn stores_coalesce_until_flush() {
        let mut b = TraceBuilder::default();
        for _ in 0..4 {
            for l in 0..8 {
                b.store(0, 0x8000 + l * 64, 64, 0);
            }
        }
        b.marker(MarkerScope::SystemScope);
        let t = b.finish();
        let cfg = EngineConfig::default();
        let rw = run(&t, &cfg, PolicyConfig::CACHE_RW).unwrap();
        let r = run(&t, &cfg, PolicyConfig::CACHE_R).unwrap();
        assert_eq!(r.dram_writes, 32);
        assert_eq!(rw.dram_writes, 8);
        assert_eq!(rw.flush_writes, 8);
    }

    #[test]
    fn rejects_bad_latencies() {
        let cfg = EngineConfig { latencies: Latencies { l1: 50, l2: 40, mem: 225 }, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(EngineError::Config(_))));
        let cfg = EngineConfig { latencies: Latencies { l1: 50, l2: 60, mem: 100 }, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
