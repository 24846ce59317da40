use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::trace::AccessKind;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Cache,
    Bypass,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    /// Table size; must be a power of two.
    pub entries: usize,
    pub counter_bits: u32,
    pub threshold: u8,
    pub initial: u8,
    /// About one L2 set in `sample_stride` keeps tracking predictor-bypassed
    /// requests, so bypassed PCs still produce training events. 0 disables sampling.
    pub sample_stride: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig { entries: 1024, counter_bits: 2, threshold: 2, initial: 2, sample_stride: 32 }
    }
}

impl PredictorConfig {
    pub fn max_counter(&self) -> u8 {
        ((1u32 << self.counter_bits) - 1) as u8
    }

    /// Whether L2 set `set` is a sampled set. Sets are picked by a
    /// multiplicative hash rather than a plain modulus, which would put every
    /// sampled line on the same DRAM channel.
    pub fn is_sampled(&self, set: u64) -> bool {
        self.sample_stride > 0 && (set.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40) % self.sample_stride == 0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.entries.is_power_of_two() {
            return Err(format!("predictor entries must be a power of two, got {}", self.entries));
        }
        if !(1..=8).contains(&self.counter_bits) {
            return Err("predictor counter_bits must be within 1..=8".into());
        }
        if self.threshold > self.max_counter() || self.initial > self.max_counter() {
            return Err("predictor threshold and initial value must fit the counter width".into());
        }
        Ok(())
    }
}

/// Saturating counters indexed by a fold of the request PC.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictorTable {
    cfg: PredictorConfig,
    counters: Vec<u8>,
}

impl PredictorTable {
    pub fn new(cfg: PredictorConfig) -> Self {
        PredictorTable { counters: vec![cfg.initial; cfg.entries], cfg }
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    /// XOR-folds the PC into `log2(entries)` bits.
    pub fn index(&self, pc: u64) -> usize {
        let bits = self.cfg.entries.trailing_zeros();
        if bits == 0 {
            return 0;
        }
        let mask = (1u64 << bits) - 1;
        let mut x = pc;
        let mut idx = 0;
        while x != 0 {
            idx ^= x & mask;
            x >>= bits;
        }
        idx as usize
    }

    pub fn counter(&self, pc: u64) -> u8 {
        self.counters[self.index(pc)]
    }

    pub fn decide(&self, pc: u64) -> Decision {
        if self.counter(pc) < self.cfg.threshold {
            Decision::Bypass
        } else {
            Decision::Cache
        }
    }

    pub fn train(&mut self, pc: u64, reused: bool) {
        let max = self.cfg.max_counter();
        let i = self.index(pc);
        let c = &mut self.counters[i];
        *c = if reused { (*c + 1).min(max) } else { c.saturating_sub(1) };
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TrainingEvent {
    pub pc: u64,
    pub reused: bool,
}

/// Remembers which PC inserted each L2 line and whether the line was reused.
///
/// A line counts as reused when a request of the inserting kind hits it: a
/// later load for a load-filled line, a later store for a store-allocated
/// one. A store that merely overwrites a load-filled line saves no DRAM
/// traffic and does not count.
///
/// Requests that bypass the L2 on the predictor's advice are still observed
/// in sampled sets. Those lines are tracked as shadow entries, as if they had
/// been inserted, so a bypassed PC can earn its way back to caching.
#[derive(Clone, Debug, Default)]
pub struct ReuseTracker {
    lines: HashMap<u64, Tracked>,
}

#[derive(Copy, Clone, Debug)]
struct Tracked {
    event: TrainingEvent,
    kind: AccessKind,
    shadow: bool,
}

impl ReuseTracker {
    /// Starts tracking a line installed in the L2. A shadow entry for the same
    /// line ends and its event is returned.
    pub fn insert(&mut self, line_addr: u64, pc: u64, kind: AccessKind) -> Option<TrainingEvent> {
        let t = Tracked { event: TrainingEvent { pc, reused: false }, kind, shadow: false };
        let prev = self.lines.insert(line_addr, t);
        debug_assert!(prev.map_or(true, |p| p.shadow), "line {line_addr:#x} inserted twice");
        prev.map(|p| p.event)
    }

    pub fn on_hit(&mut self, line_addr: u64, kind: AccessKind) {
        if let Some(t) = self.lines.get_mut(&line_addr) {
            if t.kind == kind {
                t.event.reused = true;
            }
        }
    }

    /// A predictor-bypassed request in a sampled set: a hit on a tracked line,
    /// otherwise the start of a shadow entry.
    pub fn observe_bypass(&mut self, line_addr: u64, pc: u64, kind: AccessKind) {
        if self.lines.contains_key(&line_addr) {
            self.on_hit(line_addr, kind);
        } else {
            let t = Tracked { event: TrainingEvent { pc, reused: false }, kind, shadow: true };
            self.lines.insert(line_addr, t);
        }
    }

    pub fn end_of_life(&mut self, line_addr: u64) -> Option<TrainingEvent> {
        self.lines.remove(&line_addr).map(|t| t.event)
    }

    /// Ends every shadow entry, in line address order.
    pub fn drain_shadow(&mut self) -> Vec<TrainingEvent> {
        let mut shadow: Vec<u64> = self.lines.iter().filter(|(_, t)| t.shadow).map(|(l, _)| *l).collect();
        shadow.sort_unstable();
        shadow.into_iter().filter_map(|l| self.end_of_life(l)).collect()
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}
