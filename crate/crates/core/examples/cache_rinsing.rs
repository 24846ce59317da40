//! Scattered whole-line stores that crowd a few L2 sets. On each dirty eviction,
//! rinsing also writes back the other dirty lines of the same DRAM row, so
//! writes reach DRAM in row-sized batches.
//!
//! cargo run --release --example cache_rinsing

use micachesim::engine::{run, EngineConfig, PolicyConfig};
use micachesim::trace::gen::gen_scattered_stores;
use micachesim::trace::LINE_BYTES;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EngineConfig::default();
    // 16 lines in each of 64 DRAM rows, visited in random order. Lines of one
    // row are a full channel-and-bank sweep apart, so they share few L2 sets.
    let row_stride = LINE_BYTES * cfg.dram.channels * cfg.dram.banks_per_channel;
    let trace = gen_scattered_stores(64, 16, row_stride, 16, 7);
    for cell in [PolicyConfig::CACHE_RW_AB, PolicyConfig::CACHE_RW_CR] {
        let s = run(&trace, &cfg, cell)?;
        println!(
            "{:<11} dram_writes={} rinse_writes={} flush_writes={} write row-hit ratio={:.3} cycles={}",
            cell.label(),
            s.dram_writes,
            s.rinse_writes,
            s.flush_writes,
            s.write_row_hit_ratio(),
            s.cycles
        );
    }
    Ok(())
}
