//! Trace-driven, cycle-approximate simulator of a coherent CPU-GPU memory
//! hierarchy: per-CU L1 caches, a shared banked L2 and an HBM-like DRAM with
//! open-row banks.
//!
//! The simulator compares three GPU caching policies (no caching, read
//! caching, read/write caching with L2 write coalescing) and three adaptive
//! optimizations layered on read/write caching: allocation bypass,
//! row-locality-aware cache rinsing driven by a dirty block index, and
//! PC-indexed L2 bypass prediction.
//!
//! Start with [`trace::gen`] to build a workload, [`engine::run`] to simulate
//! it and [`report`] to turn a policy sweep into normalized tables and charts.
//! The `examples/` directory has one runnable program per capability.

pub mod trace;
pub mod adaptive;
pub mod cache;
pub mod dram;
pub mod engine;
pub mod memory;
pub mod report;
pub mod config;
pub mod cli;
