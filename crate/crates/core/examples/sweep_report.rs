//! Sweeps the six-cell policy matrix over the seven layer generators and
//! writes CSV, SVG charts and the classification table.
//!
//! cargo run --release --example sweep_report -- [outdir]

use std::path::PathBuf;

use micachesim::engine::{EngineConfig, PolicyConfig};
use micachesim::report::{classify, run_sweep, write_artifacts};
use micachesim::trace::{generate, LayerKind, LayerSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let outdir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("micachesim-sweep"));
    let parallel = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cfg = EngineConfig::default();
    let workloads = [
        ("streaming", LayerSpec::new(LayerKind::Streaming, &[1 << 19])),
        ("pooling", LayerSpec::new(LayerKind::Pooling, &[64, 64, 8, 2, 2])),
        ("fc", LayerSpec::new(LayerKind::FullyConnected, &[256, 256]).batch(8)),
        ("gemm", LayerSpec::new(LayerKind::GemmTiled, &[256, 256, 256, 32])),
        ("rnn", LayerSpec::new(LayerKind::Rnn, &[128, 16])),
        ("lrn", LayerSpec::new(LayerKind::LrnNeighbor, &[64, 64, 32, 5])),
        ("softmax", LayerSpec::new(LayerKind::SoftmaxSmall, &[128, 128])),
    ];
    let mut sweeps = Vec::new();
    for (name, spec) in workloads {
        let trace = generate(&spec.seed(1))?;
        let sweep = run_sweep(name, &trace, &cfg, &PolicyConfig::SWEEP, parallel)?;
        println!("{name:<10} {}", classify(&sweep)?);
        sweeps.push(sweep);
    }
    for path in write_artifacts(&sweeps, &outdir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
