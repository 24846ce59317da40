//! Runs three contrasting layers under the three static cache policies and
//! prints cycles and DRAM traffic normalized to Uncached.
//!
//! cargo run --release --example policy_compare

use micachesim::engine::{EngineConfig, PolicyConfig};
use micachesim::report::{classify, normalize, run_sweep, Metric};
use micachesim::trace::{generate, LayerKind, LayerSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = EngineConfig::default();
    let cells = [PolicyConfig::UNCACHED, PolicyConfig::CACHE_R, PolicyConfig::CACHE_RW];
    let workloads = [
        ("streaming", LayerSpec::new(LayerKind::Streaming, &[1 << 18])),
        ("fc", LayerSpec::new(LayerKind::FullyConnected, &[256, 256]).batch(8)),
        ("rnn", LayerSpec::new(LayerKind::Rnn, &[128, 16])),
    ];
    for (name, spec) in workloads {
        let trace = generate(&spec.seed(1))?;
        let sweep = run_sweep(name, &trace, &cfg, &cells, cells.len())?;
        let cycles = normalize(&sweep, Metric::Cycles)?;
        let dram = normalize(&sweep, Metric::DramAccesses)?;
        println!("{name}: {}", classify(&sweep)?);
        for ((cell, c), (_, d)) in cycles.iter().zip(&dram) {
            let s = sweep.get(cell).unwrap();
            println!(
                "  {:<8} cycles={:>9} ({:.3}x)  dram={:>7} ({:.3}x)  l1_hits={} l2_hits={}",
                cell.label(),
                s.cycles,
                c.unwrap_or(f64::NAN),
                s.dram_accesses(),
                d.unwrap_or(f64::NAN),
                s.l1_hits,
                s.l2_hits
            );
        }
    }
    Ok(())
}
