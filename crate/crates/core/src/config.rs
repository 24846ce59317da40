//! TOML configuration file for the simulated system.
//!
//! Five sections, `[gpu]`, `[caches]`, `[dram]`, `[engine]` and `[opts]`.
//! Missing keys take their defaults and unknown keys are rejected.
//! [`SimConfigFile::defaults_toml`] prints every key with its default value.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::PredictorConfig;
use crate::cache::CacheConfig;
use crate::dram::DramConfig;
use crate::engine::{EngineConfig, Latencies};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpuSection {
    pub num_cus: u16,
    pub issue_width: usize,
    pub max_inflight_per_cu: usize,
    pub l1_latency: u64,
    pub l2_latency: u64,
    pub mem_latency: u64,
}

impl Default for GpuSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        GpuSection {
            num_cus: e.num_cus,
            issue_width: e.issue_width,
            max_inflight_per_cu: e.max_inflight_per_cu,
            l1_latency: e.latencies.l1,
            l2_latency: e.latencies.l2,
            mem_latency: e.latencies.mem,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CachesSection {
    pub line_bytes: u64,
    pub l1_size_bytes: u64,
    pub l1_associativity: u64,
    pub l1_mshr_entries: u32,
    pub l1_mshr_targets: u32,
    pub l1_tag_ports: u32,
    pub l2_size_bytes: u64,
    pub l2_associativity: u64,
    pub l2_mshr_entries: u32,
    pub l2_mshr_targets: u32,
    pub l2_banks: u64,
    pub l2_tag_ports_per_bank: u32,
}

impl Default for CachesSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        CachesSection {
            line_bytes: e.l1.line_bytes,
            l1_size_bytes: e.l1.size_bytes,
            l1_associativity: e.l1.associativity,
            l1_mshr_entries: e.l1.mshr_entries as u32,
            l1_mshr_targets: e.l1.mshr_targets_per_entry as u32,
            l1_tag_ports: e.l1_tag_ports as u32,
            l2_size_bytes: e.l2.size_bytes,
            l2_associativity: e.l2.associativity,
            l2_mshr_entries: e.l2.mshr_entries as u32,
            l2_mshr_targets: e.l2.mshr_targets_per_entry as u32,
            l2_banks: e.l2_banks,
            l2_tag_ports_per_bank: e.l2_tag_ports_per_bank as u32,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub track_data: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptsSection {
    pub predictor_entries: usize,
    pub predictor_counter_bits: u32,
    pub predictor_threshold: u8,
    pub predictor_initial: u8,
    pub predictor_sample_stride: u64,
}

impl Default for OptsSection {
    fn default() -> Self {
        let p = PredictorConfig::default();
        OptsSection {
            predictor_entries: p.entries,
            predictor_counter_bits: p.counter_bits,
            predictor_threshold: p.threshold,
            predictor_initial: p.initial,
            predictor_sample_stride: p.sample_stride,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfigFile {
    pub gpu: GpuSection,
    pub caches: CachesSection,
    pub dram: DramConfig,
    pub engine: EngineSection,
    pub opts: OptsSection,
}

const KEY_DOCS: &[(&str, &str)] = &[
    ("num_cus", "compute units, one private L1 each"),
    ("issue_width", "requests a CU may issue per cycle"),
    ("max_inflight_per_cu", "outstanding requests per CU before issue stalls"),
    ("l1_latency", "L1 hit round trip, cycles"),
    ("l2_latency", "L2 hit round trip, cycles"),
    ("mem_latency", "uncontended memory round trip, cycles"),
    ("line_bytes", "cache line size; only 64 is supported"),
    ("l1_size_bytes", "per-CU L1 capacity"),
    ("l1_mshr_entries", "outstanding L1 misses"),
    ("l1_mshr_targets", "requests merged per L1 miss"),
    ("l1_tag_ports", "L1 lookups per cycle"),
    ("l2_size_bytes", "shared L2 capacity"),
    ("l2_mshr_entries", "outstanding L2 misses, all banks"),
    ("l2_mshr_targets", "requests merged per L2 miss"),
    ("l2_banks", "L2 tag banks, line-interleaved"),
    ("l2_tag_ports_per_bank", "lookups per bank per cycle"),
    ("channels", "DRAM channels"),
    ("banks_per_channel", "banks per DRAM channel"),
    ("row_bytes", "DRAM row size"),
    ("t_row_hit", "open-row access, cycles"),
    ("t_row_miss", "precharge + activate + access, cycles"),
    ("t_bus", "data bus occupancy per line, cycles"),
    ("queue_depth", "requests queued per bank"),
    ("track_data", "carry store bytes and keep a memory image"),
    ("predictor_entries", "PC bypass table size, power of two"),
    ("predictor_counter_bits", "saturating counter width"),
    ("predictor_threshold", "counter value at or above which a PC caches"),
    ("predictor_initial", "counter value at reset"),
    ("predictor_sample_stride", "about one L2 set in n keeps training bypassed PCs; 0 disables"),
];

impl SimConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfigFile = toml::from_str(text)?;
        cfg.to_engine_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Default configuration as TOML, every key annotated.
    pub fn defaults_toml() -> String {
        Self::default().to_toml()
    }

    pub fn to_toml(&self) -> String {
        let raw = toml::to_string(self).expect("config serializes");
        let mut out = String::from("# micachesim configuration\n");
        for line in raw.lines() {
            let key = line.split(" = ").next().unwrap_or("");
            match KEY_DOCS.iter().find(|(k, _)| *k == key) {
                Some((_, doc)) => out.push_str(&format!("{line}  # {doc}\n")),
                None => {
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn to_engine_config(&self) -> Result<EngineConfig, ConfigError> {
        let c = &self.caches;
        let base = EngineConfig::default();
        let cfg = EngineConfig {
            num_cus: self.gpu.num_cus,
            l1: CacheConfig {
                size_bytes: c.l1_size_bytes,
                line_bytes: c.line_bytes,
                associativity: c.l1_associativity,
                mshr_entries: c.l1_mshr_entries as usize,
                mshr_targets_per_entry: c.l1_mshr_targets as usize,
                ..base.l1
            },
            l2: CacheConfig {
                size_bytes: c.l2_size_bytes,
                line_bytes: c.line_bytes,
                associativity: c.l2_associativity,
                mshr_entries: c.l2_mshr_entries as usize,
                mshr_targets_per_entry: c.l2_mshr_targets as usize,
                ..base.l2
            },
            l2_banks: c.l2_banks,
            l1_tag_ports: c.l1_tag_ports as usize,
            l2_tag_ports_per_bank: c.l2_tag_ports_per_bank as usize,
            dram: self.dram.clone(),
            issue_width: self.gpu.issue_width,
            max_inflight_per_cu: self.gpu.max_inflight_per_cu,
            latencies: Latencies { l1: self.gpu.l1_latency, l2: self.gpu.l2_latency, mem: self.gpu.mem_latency },
            predictor: PredictorConfig {
                entries: self.opts.predictor_entries,
                counter_bits: self.opts.predictor_counter_bits,
                threshold: self.opts.predictor_threshold,
                initial: self.opts.predictor_initial,
                sample_stride: self.opts.predictor_sample_stride,
            },
            track_data: self.engine.track_data,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}
