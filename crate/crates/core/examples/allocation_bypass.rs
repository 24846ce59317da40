//! Every CU floods one L1 set with more outstanding misses than it has ways.
//! Without allocation bypass the extra misses stall until a fill frees a way;
//! with it they go around the cache.
//!
//! cargo run --release --example allocation_bypass

use micachesim::engine::{run, EngineConfig, PolicyConfig};
use micachesim::trace::gen::gen_set_contention;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EngineConfig::default();
    let trace = gen_set_contention(8, 32, 16, cfg.l1.num_sets());
    for cell in [PolicyConfig::CACHE_RW, PolicyConfig::CACHE_RW_AB] {
        let s = run(&trace, &cfg, cell)?;
        println!(
            "{:<11} cycles={:>7} stalls/request={:>8.3} l1 stall cycles={:>7} l1_bypassed={:>5} dram={}",
            cell.label(),
            s.cycles,
            s.stalls_per_request(),
            s.l1_stall_cycles,
            s.l1_bypassed,
            s.dram_accesses()
        );
    }
    Ok(())
}
