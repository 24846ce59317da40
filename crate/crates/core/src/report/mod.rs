//! Policy sweeps and their reports: normalized metric tables, the workload
//! classification rule, CSV output and SVG bar charts.

mod svg;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{run, EngineConfig, EngineError, Policy, PolicyConfig, RunStats};
use crate::trace::Trace;

pub use svg::{bar_chart, ChartOptions};

/// Relative spread of static-policy cycles below which a workload is memory-insensitive.
pub const INSENSITIVE_SPREAD: f64 = 1.05;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("sweep `{0}` has no Uncached baseline")]
    MissingBaseline(String),
    #[error("sweep `{workload}` lacks static policy {missing}")]
    IncompleteSweep { workload: String, missing: &'static str },
    #[error("nothing to report")]
    EmptySweep,
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Error)]
#[error("workload `{workload}`, cell {cell}: {source}")]
pub struct SweepError {
    pub workload: String,
    pub cell: String,
    #[source]
    pub source: EngineError,
}

/// Stats of one workload under several policy cells.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub workload: String,
    pub cells: BTreeMap<PolicyConfig, RunStats>,
}

impl SweepResult {
    pub fn new(workload: impl Into<String>) -> Self {
        SweepResult { workload: workload.into(), cells: BTreeMap::new() }
    }

    pub fn get(&self, cell: &PolicyConfig) -> Option<&RunStats> {
        self.cells.get(cell)
    }

    /// Cells in the standard sweep order, then any others.
    pub fn ordered(&self) -> Vec<(PolicyConfig, &RunStats)> {
        let mut v: Vec<(PolicyConfig, &RunStats)> = self.cells.iter().map(|(c, s)| (*c, s)).collect();
        let rank = |c: &PolicyConfig| PolicyConfig::SWEEP.iter().position(|x| x == c).unwrap_or(usize::MAX);
        v.sort_by_key(|(c, _)| (rank(c), *c));
        v
    }
}

/// Runs `trace` under every cell, using up to `parallel` worker threads.
/// Results do not depend on `parallel`.
pub fn run_sweep(
    workload: &str,
    trace: &Trace,
    cfg: &EngineConfig,
    cells: &[PolicyConfig],
    parallel: usize,
) -> Result<SweepResult, SweepError> {
    let one = |cell: &PolicyConfig| {
        run(trace, cfg, *cell).map_err(|source| SweepError {
            workload: workload.to_string(),
            cell: cell.label(),
            source,
        })
    };
    let results: Vec<Result<RunStats, SweepError>> = if parallel <= 1 {
        cells.iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .expect("thread pool");
        pool.install(|| cells.par_iter().map(one).collect())
    };
    let mut sweep = SweepResult::new(workload);
    for (cell, r) in cells.iter().zip(results) {
        sweep.cells.insert(*cell, r?);
    }
    Ok(sweep)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Cycles,
    DramAccesses,
    DramReads,
    DramWrites,
    StallsPerRequest,
    /// Reported raw rather than normalized.
    RowHitRatio,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Cycles,
        Metric::DramAccesses,
        Metric::DramReads,
        Metric::DramWrites,
        Metric::StallsPerRequest,
        Metric::RowHitRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cycles => "cycles",
            Metric::DramAccesses => "dram_accesses",
            Metric::DramReads => "dram_reads",
            Metric::DramWrites => "dram_writes",
            Metric::StallsPerRequest => "stalls_per_request",
            Metric::RowHitRatio => "row_hit_ratio",
        }
    }

    pub fn is_normalized(self) -> bool {
        self != Metric::RowHitRatio
    }

    pub fn value(self, s: &RunStats) -> f64 {
        match self {
            Metric::Cycles => s.cycles as f64,
            Metric::DramAccesses => s.dram_accesses() as f64,
            Metric::DramReads => s.dram_reads as f64,
            Metric::DramWrites => s.dram_writes as f64,
            Metric::StallsPerRequest => s.stalls_per_request(),
            Metric::RowHitRatio => s.row_hit_ratio(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-cell metric values, divided by the Uncached value for normalized
/// metrics. `None` marks a ratio with a zero baseline.
pub fn normalize(sweep: &SweepResult, metric: Metric) -> Result<Vec<(PolicyConfig, Option<f64>)>, ReportError> {
    let base = sweep
        .get(&PolicyConfig::UNCACHED)
        .ok_or_else(|| ReportError::MissingBaseline(sweep.workload.clone()))?;
    let b = metric.value(base);
    Ok(sweep
        .ordered()
        .into_iter()
        .map(|(c, s)| {
            let v = metric.value(s);
            let r = if !metric.is_normalized() {
                Some(v)
            } else if b == 0.0 {
                None
            } else {
                Some(v / b)
            };
            (c, r)
        })
        .collect())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    MemoryInsensitive,
    ReuseSensitive,
    ThroughputSensitive,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::MemoryInsensitive => "memory-insensitive",
            Category::ReuseSensitive => "reuse-sensitive",
            Category::ThroughputSensitive => "throughput-sensitive",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub category: Category,
    /// Cycles of Uncached, CacheR and CacheRW, normalized to Uncached.
    pub static_cycles: [f64; 3],
    pub min: f64,
    pub max: f64,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [u, r, rw] = self.static_cycles;
        write!(
            f,
            "{} (uncached={u:.4} cacher={r:.4} cacherw={rw:.4} spread={:.4})",
            self.category,
            self.max / self.min
        )
    }
}

/// Groups a workload by how its static policies compare: within 5% of each
/// other is memory-insensitive, Uncached strictly fastest is
/// throughput-sensitive, anything else is reuse-sensitive.
pub fn classify(sweep: &SweepResult) -> Result<Classification, ReportError> {
    let mut cycles = [0u64; 3];
    for (i, p) in Policy::STATIC.iter().enumerate() {
        let s = sweep.get(&PolicyConfig::of(*p)).ok_or_else(|| ReportError::IncompleteSweep {
            workload: sweep.workload.clone(),
            missing: p.name(),
        })?;
        cycles[i] = s.cycles;
    }
    let base = cycles[0].max(1) as f64;
    let static_cycles = cycles.map(|c| c as f64 / base);
    let min = static_cycles.iter().copied().fold(f64::INFINITY, f64::min);
    let max = static_cycles.iter().copied().fold(0.0, f64::max);
    let spread = if max == 0.0 {
        1.0
    } else if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    };
    let category = if spread < INSENSITIVE_SPREAD {
        Category::MemoryInsensitive
    } else if cycles[0] < cycles[1] && cycles[0] < cycles[2] {
        Category::ThroughputSensitive
    } else {
        Category::ReuseSensitive
    };
    Ok(Classification { category, static_cycles, min, max })
}

pub const CSV_HEADER: &str = "workload,policy,flags,cycles,requests_total,dram_reads,dram_writes,dram_accesses,\
row_hit_ratio,read_row_hit_ratio,write_row_hit_ratio,cache_stall_cycles,stalls_per_request,\
norm_cycles,norm_dram_accesses,norm_stalls_per_request";

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_f64(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".into(),
    }
}

/// One row per (workload, cell). Floats are written with full round-trip precision.
pub fn write_csv<W: Write>(sweeps: &[SweepResult], mut w: W) -> Result<(), ReportError> {
    if sweeps.is_empty() {
        return Err(ReportError::EmptySweep);
    }
    let io = |source| ReportError::Io { path: PathBuf::from("<csv>"), source };
    writeln!(w, "{CSV_HEADER}").map_err(io)?;
    for sweep in sweeps {
        let norm = |m| -> Result<BTreeMap<PolicyConfig, Option<f64>>, ReportError> {
            Ok(normalize(sweep, m)?.into_iter().collect())
        };
        let nc = norm(Metric::Cycles)?;
        let nd = norm(Metric::DramAccesses)?;
        let ns = norm(Metric::StallsPerRequest)?;
        for (cell, s) in sweep.ordered() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                csv_text(&sweep.workload),
                cell.label(),
                cell.flags(),
                s.cycles,
                s.requests_total,
                s.dram_reads,
                s.dram_writes,
                s.dram_accesses(),
                csv_f64(Some(s.row_hit_ratio())),
                csv_f64(Some(s.read_row_hit_ratio())),
                csv_f64(Some(s.write_row_hit_ratio())),
                s.cache_stall_cycles,
                csv_f64(Some(s.stalls_per_request())),
                csv_f64(nc[&cell]),
                csv_f64(nd[&cell]),
                csv_f64(ns[&cell]),
            )
            .map_err(io)?;
        }
    }
    Ok(())
}

/// Writes `sweep.csv`, one chart per metric and `classification.txt` into
/// `outdir`, returning the written paths.
pub fn write_artifacts(sweeps: &[SweepResult], outdir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let io_at = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(outdir).map_err(io_at(outdir))?;
    let mut written = Vec::new();

    let csv_path = outdir.join("sweep.csv");
    let mut buf = Vec::new();
    write_csv(sweeps, &mut buf)?;
    std::fs::write(&csv_path, buf).map_err(io_at(&csv_path))?;
    written.push(csv_path);

    for metric in Metric::ALL {
        let log_scale = metric == Metric::StallsPerRequest;
        let svg = bar_chart(sweeps, metric, &ChartOptions { log_scale, ..Default::default() })?;
        let path = outdir.join(format!("{}.svg", metric.name()));
        std::fs::write(&path, svg).map_err(io_at(&path))?;
        written.push(path);
    }

    let path = outdir.join("classification.txt");
    let mut text = String::new();
    for sweep in sweeps {
        text.push_str(&format!("{} {}\n", sweep.workload, classify(sweep)?));
    }
    std::fs::write(&path, text).map_err(io_at(&path))?;
    written.push(path);
    Ok(written)
}
