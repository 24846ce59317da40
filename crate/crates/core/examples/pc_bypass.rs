//! A trace mixing a streaming instruction with a reused lookup table. The PC
//! predictor learns to send the streaming PC around the L2 while the table
//! stays cached.
//!
//! cargo run --release --example pc_bypass

use micachesim::adaptive::Decision;
use micachesim::engine::{EngineConfig, PolicyConfig, Simulator};
use micachesim::trace::{MarkerScope, TraceBuilder, TraceMeta, LINE_BYTES};

const STREAM_PC: u64 = 0x100;
const TABLE_PC: u64 = 0x200;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let num_cus = 8u64;
    let mut b = TraceBuilder::new(TraceMeta { generator: "pc_bypass example".into(), ..Default::default() });
    let mut fresh = 0x4000_0000u64;
    for k in 0..16u64 {
        for i in 0..8192u64 {
            b.load(STREAM_PC, fresh, LINE_BYTES as u8, (i % num_cus) as u8);
            fresh += LINE_BYTES;
            if i % 4 == 0 {
                let line = (i / 4) % 512;
                let cu = ((i / 4 / 512 + k) % num_cus) as u8;
                b.load(TABLE_PC, 0x1000_0000 + line * LINE_BYTES, LINE_BYTES as u8, cu);
            }
        }
        b.marker(if k == 15 { MarkerScope::SystemScope } else { MarkerScope::Kernel });
    }
    let trace = b.finish();

    let cfg = EngineConfig { num_cus: num_cus as u16, ..EngineConfig::default() };
    for cell in [PolicyConfig::CACHE_RW_CR, PolicyConfig::CACHE_RW_PCBY] {
        let mut sim = Simulator::new(cfg.clone(), cell)?;
        let s = sim.execute(&trace)?;
        println!(
            "{:<12} cycles={} dram_reads={} l2_hits={} bypassed={} predictor(stream)={:?} predictor(table)={:?}",
            cell.label(),
            s.cycles,
            s.dram_reads,
            s.l2_hits,
            s.bypass_decisions_bypass,
            sim.predictor().decide(STREAM_PC),
            sim.predictor().decide(TABLE_PC),
        );
        if cell.pc_bypass {
            assert_eq!(sim.predictor().decide(STREAM_PC), Decision::Bypass);
        }
    }
    Ok(())
}
