//! Generates one trace per layer kind, prints its footprint summary and
//! writes it in both trace formats.
//!
//! cargo run --example generate_trace -- [outdir]

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use micachesim::trace::reuse::TraceSummary;
use micachesim::trace::{generate, read_trace, write_trace, write_trace_text, LayerKind, LayerSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let outdir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("micachesim-traces"));
    std::fs::create_dir_all(&outdir)?;

    let layers = [
        LayerSpec::new(LayerKind::Streaming, &[1 << 16]),
        LayerSpec::new(LayerKind::Pooling, &[64, 64, 8, 2, 2]),
        LayerSpec::new(LayerKind::FullyConnected, &[256, 256]).batch(8),
        LayerSpec::new(LayerKind::GemmTiled, &[128, 128, 128, 32]),
        LayerSpec::new(LayerKind::Rnn, &[128, 16]),
        LayerSpec::new(LayerKind::LrnNeighbor, &[64, 64, 32, 5]),
        LayerSpec::new(LayerKind::SoftmaxSmall, &[128, 128]),
    ];
    for spec in layers {
        let spec = spec.seed(1);
        let trace = generate(&spec)?;
        let s = TraceSummary::of(&trace);
        assert_eq!(s.distinct_lines, spec.footprint_lines());
        println!(
            "{:<10} records={:>7} kernels={:>2} lines={:>6} reuse={:.2}",
            spec.kind.name(),
            s.loads + s.stores,
            s.kernels,
            s.distinct_lines,
            s.reuse_degree
        );

        let bin = outdir.join(format!("{}.trace", spec.kind.name()));
        write_trace(&trace, BufWriter::new(File::create(&bin)?))?;
        assert_eq!(read_trace(BufReader::new(File::open(&bin)?))?, trace);
        let text = outdir.join(format!("{}.txt", spec.kind.name()));
        write_trace_text(&trace, BufWriter::new(File::create(&text)?))?;
    }
    println!("traces in {}", outdir.display());
    Ok(())
}
