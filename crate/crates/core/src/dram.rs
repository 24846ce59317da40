//! Banked DRAM with an open-row policy.
//!
//! Line addresses map channel-first: consecutive lines go to consecutive
//! channels, then banks, then columns of one row, then the next row. Each bank
//! serves requests FIFO; a row hit costs `t_row_hit`, a row miss `t_row_miss`,
//! and every transfer then holds its channel's data bus for `t_bus`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{AccessKind, LINE_BYTES};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DramConfig {
    pub channels: u64,
    pub banks_per_channel: u64,
    pub row_bytes: u64,
    pub t_row_hit: u64,
    pub t_row_miss: u64,
    pub t_bus: u64,
    pub queue_depth: usize,
}

impl Default for DramConfig {
    fn default() -> Self {
        DramConfig {
            channels: 16,
            banks_per_channel: 16,
            row_bytes: 2048,
            t_row_hit: 40,
            t_row_miss: 97,
            t_bus: 3,
            queue_depth: 32,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DramConfigError {
    #[error("channels and banks_per_channel must be powers of two")]
    Geometry,
    #[error("row_bytes must be a power-of-two multiple of 64, got {0}")]
    RowBytes(u64),
    #[error("DRAM latencies and queue depth must be positive")]
    Timing,
}

impl DramConfig {
    pub fn validate(&self) -> Result<(), DramConfigError> {
        if !self.channels.is_power_of_two() || !self.banks_per_channel.is_power_of_two() {
            return Err(DramConfigError::Geometry);
        }
        if self.row_bytes < LINE_BYTES || !self.row_bytes.is_power_of_two() {
            return Err(DramConfigError::RowBytes(self.row_bytes));
        }
        if self.t_row_hit == 0 || self.t_row_miss == 0 || self.t_bus == 0 || self.queue_depth == 0 {
            return Err(DramConfigError::Timing);
        }
        Ok(())
    }

    pub fn columns(&self) -> u64 {
        self.row_bytes / LINE_BYTES
    }

    pub fn num_banks(&self) -> usize {
        (self.channels * self.banks_per_channel) as usize
    }

    /// Latency of a lone row-miss access on an idle device.
    pub fn uncontended_latency(&self) -> u64 {
        self.t_row_miss + self.t_bus
    }

    pub fn map_address(&self, addr: u64) -> DramCoord {
        let line = addr / LINE_BYTES;
        let channel = line % self.channels;
        let rest = line / self.channels;
        let bank = rest % self.banks_per_channel;
        let rest = rest / self.banks_per_channel;
        let column = rest % self.columns();
        let row = rest / self.columns();
        DramCoord { channel, bank, row, column }
    }

    /// Global row id: `(row, channel, bank)` packed with the row in the high bits.
    pub fn row_of(&self, addr: u64) -> u64 {
        let c = self.map_address(addr);
        let bank_bits = self.banks_per_channel.trailing_zeros();
        let ch_bits = self.channels.trailing_zeros();
        (c.row << (ch_bits + bank_bits)) | (c.channel << bank_bits) | c.bank
    }

    /// Flat bank index `channel * banks_per_channel + bank`.
    pub fn bank_index(&self, addr: u64) -> usize {
        let c = self.map_address(addr);
        (c.channel * self.banks_per_channel + c.bank) as usize
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct DramCoord {
    pub channel: u64,
    pub bank: u64,
    pub row: u64,
    pub column: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct DramOutcome {
    pub completion: u64,
    pub service_latency: u64,
    pub row_hit: bool,
}

/// The target bank's queue is full; retry later.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Backpressure;

#[derive(Clone, Debug, Default)]
pub struct BankState {
    pub open_row: Option<u64>,
    pub busy_until: u64,
    /// Completion times of admitted, unfinished requests in arrival order.
    queue: VecDeque<u64>,
}

impl BankState {
    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DramStats {
    pub reads: u64,
    pub writes: u64,
    pub read_row_hits: u64,
    pub read_row_misses: u64,
    pub write_row_hits: u64,
    pub write_row_misses: u64,
}

impl DramStats {
    pub fn accesses(&self) -> u64 {
        self.reads + self.writes
    }

    pub fn row_hits(&self) -> u64 {
        self.read_row_hits + self.write_row_hits
    }

    pub fn row_misses(&self) -> u64 {
        self.read_row_misses + self.write_row_misses
    }
}

/// Reserved transfer windows `[start, end)` on one channel's data bus.
/// Transfers may fill gaps left between earlier reservations.
#[derive(Clone, Debug, Default)]
struct Bus {
    busy: BTreeMap<u64, u64>,
}

impl Bus {
    /// Books the earliest `dur`-cycle window starting at or after `ready`
    /// and returns its end.
    fn reserve(&mut self, ready: u64, dur: u64, now: u64) -> u64 {
        while let Some((&s, &e)) = self.busy.first_key_value() {
            if e > now {
                break;
            }
            self.busy.remove(&s);
        }
        let mut t = ready;
        if let Some((_, &e)) = self.busy.range(..=t).next_back() {
            t = t.max(e);
        }
        for (&s, &e) in self.busy.range(t..) {
            if s >= t + dur {
                break;
            }
            t = t.max(e);
        }
        self.busy.insert(t, t + dur);
        t + dur
    }
}

#[derive(Clone, Debug)]
pub struct Dram {
    cfg: DramConfig,
    banks: Vec<BankState>,
    buses: Vec<Bus>,
    stats: DramStats,
}

impl Dram {
    pub fn new(cfg: DramConfig) -> Result<Self, DramConfigError> {
        cfg.validate()?;
        Ok(Dram {
            banks: vec![BankState::default(); cfg.num_banks()],
            buses: vec![Bus::default(); cfg.channels as usize],
            stats: DramStats::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &DramConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &DramStats {
        &self.stats
    }

    pub fn bank(&self, idx: usize) -> &BankState {
        &self.banks[idx]
    }

    /// Whether bank `idx` can admit a request at `now`.
    pub fn can_accept(&mut self, idx: usize, now: u64) -> bool {
        let bank = &mut self.banks[idx];
        while bank.queue.front().is_some_and(|&t| t <= now) {
            bank.queue.pop_front();
        }
        bank.queue.len() < self.cfg.queue_depth
    }

    /// Cycle at which every admitted request has completed.
    pub fn idle_at(&self) -> u64 {
        self.banks.iter().map(|b| b.busy_until).max().unwrap_or(0)
    }

    pub fn access(&mut self, line_addr: u64, kind: AccessKind, now: u64) -> Result<DramOutcome, Backpressure> {
        let coord = self.cfg.map_address(line_addr);
        let idx = (coord.channel * self.cfg.banks_per_channel + coord.bank) as usize;
        if !self.can_accept(idx, now) {
            return Err(Backpressure);
        }
        let bank = &mut self.banks[idx];
        let row_hit = bank.open_row == Some(coord.row);
        let start = now.max(bank.busy_until);
        let ready = start + if row_hit { self.cfg.t_row_hit } else { self.cfg.t_row_miss };
        let completion = self.buses[coord.channel as usize].reserve(ready, self.cfg.t_bus, now);
        bank.busy_until = completion;
        bank.open_row = Some(coord.row);
        bank.queue.push_back(completion);

        let s = &mut self.stats;
        match (kind, row_hit) {
            (AccessKind::Load, true) => s.read_row_hits += 1,
            (AccessKind::Load, false) => s.read_row_misses += 1,
            (AccessKind::Store, true) => s.write_row_hits += 1,
            (AccessKind::Store, false) => s.write_row_misses += 1,
        }
        match kind {
            AccessKind::Load => s.reads += 1,
            AccessKind::Store => s.writes += 1,
        }
        Ok(DramOutcome { completion, service_latency: completion - now, row_hit })
    }
}
