//! Address mapping and row-buffer behaviour of the DRAM model on its own:
//! a sequential stream keeps rows open, a row-strided one does not.
//!
//! cargo run --example dram_locality

use micachesim::dram::{Dram, DramConfig};
use micachesim::trace::{AccessKind, LINE_BYTES};

fn drive(dram: &mut Dram, lines: impl Iterator<Item = u64>) -> u64 {
    let mut now = 0;
    let mut done = 0;
    for l in lines {
        loop {
            match dram.access(l * LINE_BYTES, AccessKind::Load, now) {
                Ok(o) => {
                    done = done.max(o.completion);
                    break;
                }
                Err(_) => now += 1,
            }
        }
    }
    done
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DramConfig::default();
    println!("line -> (channel, bank, row, column)");
    for l in [0u64, 1, 15, 16, 255, 256, 257, 8192] {
        let c = cfg.map_address(l * LINE_BYTES);
        println!("  {l:>5} -> ({}, {}, {}, {})", c.channel, c.bank, c.row, c.column);
    }

    let n = 1u64 << 16;
    let lines_per_row_span = cfg.channels * cfg.banks_per_channel * cfg.columns();
    let patterns: [(&str, Box<dyn Iterator<Item = u64>>); 2] = [
        ("sequential", Box::new(0..n)),
        // same bank, a new row every access
        ("row-strided", Box::new((0..n).map(move |i| i * lines_per_row_span))),
    ];
    for (name, lines) in patterns {
        let mut dram = Dram::new(cfg.clone())?;
        let end = drive(&mut dram, lines);
        let s = dram.stats();
        println!(
            "{name:<11} accesses={} row hits={} ratio={:.4} finished at cycle {end}",
            s.accesses(),
            s.row_hits(),
            s.row_hits() as f64 / s.accesses() as f64
        );
    }
    Ok(())
}
