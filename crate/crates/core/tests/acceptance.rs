//! Acceptance checks. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use micachesim::cache::{AccessResult, Cache, CacheConfig, CacheLevel, WritePolicy};
use micachesim::engine::{run, EngineConfig, PolicyConfig, RunStats, Simulator};
use micachesim::report::{classify, run_sweep, write_artifacts, Category, SweepResult};
use micachesim::trace::gen::{
    gen_random, gen_repeated_stores, gen_scattered_stores, gen_set_contention, generate, RandomSpec,
};
use micachesim::trace::{AccessKind, LayerKind, LayerSpec, MarkerScope, Trace, LINE_BYTES};

struct Check {
    pass: bool,
    detail: String,
    /// Everything the criterion produced, compared byte for byte across repeated runs.
    artifact: String,
}

fn check(pass: bool, detail: String, artifact: String) -> Check {
    Check { pass, detail, artifact }
}

fn stats_dump(label: &str, s: &RunStats) -> String {
    format!("[{label}]\n{s}\n")
}

// 1 -----------------------------------------------------------------------

/// Textbook LRU: each set is a recency-ordered list, most recent first.
struct LruOracle {
    sets: Vec<Vec<(u64, bool)>>,
    ways: usize,
}

impl LruOracle {
    fn new(sets: usize, ways: usize) -> Self {
        LruOracle { sets: vec![Vec::new(); sets], ways }
    }

    /// Returns (hit, evicted line and its dirtiness).
    fn access(&mut self, line: u64, allocate: bool, dirty: bool) -> (bool, Option<(u64, bool)>) {
        let n = self.sets.len() as u64;
        let set = &mut self.sets[((line / LINE_BYTES) % n) as usize];
        if let Some(pos) = set.iter().position(|(l, _)| *l == line) {
            if !allocate {
                return (true, None);
            }
            let (l, d) = set.remove(pos);
            set.insert(0, (l, d || dirty));
            return (true, None);
        }
        if !allocate {
            return (false, None);
        }
        let evicted = if set.len() == self.ways { set.pop() } else { None };
        set.insert(0, (line, dirty));
        (false, evicted)
    }
}

fn crit1_lru_oracle() -> Check {
    let start = Instant::now();
    let l1 = CacheConfig::l1_default();
    let l2_small = CacheConfig {
        size_bytes: 8 << 10,
        associativity: 4,
        level: CacheLevel::L2,
        write_policy: WritePolicy::CoalesceDirty,
        ..CacheConfig::l2_default()
    };
    let mut mismatches = 0u64;
    let mut compared = 0u64;
    let mut misses = 0u64;
    for i in 0..100u64 {
        let cfg = if i % 2 == 0 { l1.clone() } else { l2_small.clone() };
        let write_back = cfg.write_policy == WritePolicy::CoalesceDirty;
        let trace = gen_random(&RandomSpec { accesses: 10_000, footprint_lines: 1024, seed: 1000 + i, ..Default::default() });
        let mut cache = Cache::new(cfg.clone()).unwrap();
        let mut oracle = LruOracle::new(cfg.num_sets() as usize, cfg.associativity as usize);
        for a in trace.accesses() {
            let line = a.line();
            let store = a.kind == AccessKind::Store;
            let present_before = cache.state_of(line) != micachesim::cache::LineStatus::Invalid;
            let out = cache.access(a, true);
            if out.result == AccessResult::MissAllocated && !store {
                cache.fill(line);
            }
            let got_hit = if store && !write_back { present_before } else { out.result == AccessResult::Hit };
            let got_evict = out.evicted.as_ref().map(|e| (e.line_addr, e.was_dirty));
            let allocate = !store || write_back;
            let (want_hit, want_evict) = oracle.access(line, allocate, store && write_back);
            compared += 1;
            misses += u64::from(!want_hit);
            if got_hit != want_hit || got_evict != want_evict {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches == 0 && secs < 10.0,
        format!("{compared} accesses over 100 traces, {misses} oracle misses, {mismatches} mismatches, {secs:.2}s"),
        format!("compared={compared} misses={misses} mismatches={mismatches}"),
    )
}

// 2 -----------------------------------------------------------------------

/// Flat memory: byte address -> seq of the last store covering it, in trace order.
fn flat_memory(trace: &Trace) -> BTreeMap<u64, u64> {
    let mut m = BTreeMap::new();
    for a in trace.accesses().filter(|a| a.kind == AccessKind::Store) {
        for b in a.addr..a.addr + a.size as u64 {
            m.insert(b, a.seq);
        }
    }
    m
}

fn crit2_write_visibility() -> Check {
    let cfg = EngineConfig {
        l2: CacheConfig { size_bytes: 64 << 10, ..CacheConfig::l2_default() },
        track_data: true,
        ..EngineConfig::default()
    };
    let mut bad = Vec::new();
    let mut rinses = 0;
    let mut writebacks = 0;
    let mut art = String::new();
    for i in 0..20u64 {
        let trace = gen_random(&RandomSpec {
            accesses: 6000,
            num_cus: 16,
            footprint_lines: 4096,
            store_fraction: 0.4,
            kernels: 3,
            seed: 2000 + i,
            final_scope: Some(MarkerScope::SystemScope),
            ..Default::default()
        });
        let want = flat_memory(&trace);
        for cell in PolicyConfig::SWEEP {
            let mut sim = Simulator::new(cfg.clone(), cell).unwrap();
            let s = sim.execute(&trace).unwrap();
            rinses += s.rinse_writes;
            writebacks += s.writebacks;
            let mut got = BTreeMap::new();
            for (line, bytes) in sim.memory_image().unwrap().iter() {
                for i in 0..LINE_BYTES as usize {
                    if let Some(v) = bytes.byte(i) {
                        got.insert(line + i as u64, v);
                    }
                }
            }
            if got != want {
                bad.push(format!("trace {i} {}", cell.label()));
            }
            let _ = writeln!(art, "{i} {} bytes={} cycles={}", cell.label(), got.len(), s.cycles);
        }
    }
    check(
        bad.is_empty() && rinses > 0,
        format!("20 traces x 6 cells, {writebacks} writebacks and {rinses} rinse writes exercised, mismatching: {bad:?}"),
        art,
    )
}

// 3 -----------------------------------------------------------------------

fn crit3_reuse_fixture() -> Check {
    let (n_in, n_out, batch, e) = (512u64, 512u64, 16u64, 4u64);
    let spec = LayerSpec::new(LayerKind::FullyConnected, &[n_in, n_out]).batch(batch as u32).seed(1);
    let trace = generate(&spec).unwrap();
    // closed form: every weight line and every input line is read, nothing else is
    let closed = (n_in * n_out * e).div_ceil(LINE_BYTES) + (batch * n_in * e).div_ceil(LINE_BYTES);
    let counted: HashSet<u64> = trace.accesses().filter(|a| a.kind == AccessKind::Load).map(|a| a.line()).collect();
    let cfg = EngineConfig::default();
    let u = run(&trace, &cfg, PolicyConfig::UNCACHED).unwrap();
    let r = run(&trace, &cfg, PolicyConfig::CACHE_R).unwrap();
    let within = (r.dram_reads as f64 - closed as f64).abs() / closed as f64;
    let reduction = 1.0 - r.dram_reads as f64 / u.dram_reads as f64;
    check(
        counted.len() as u64 == closed && within <= 0.05 && reduction >= 0.90,
        format!(
            "cold lines {closed} (trace count {}), CacheR reads {} ({:.2}% off), Uncached reads {}, reduction {:.1}%",
            counted.len(),
            r.dram_reads,
            within * 100.0,
            u.dram_reads,
            reduction * 100.0
        ),
        stats_dump("uncached", &u) + &stats_dump("cacher", &r),
    )
}

// 4 -----------------------------------------------------------------------

fn crit4_write_coalescing() -> Check {
    let (cus, lines, mult) = (64u16, 32u64, 4u64);
    let trace = gen_repeated_stores(cus, lines, mult);
    let stores = trace.accesses().filter(|a| a.kind == AccessKind::Store).count() as u64;
    let distinct: HashSet<u64> = trace.accesses().map(|a| a.line()).collect();
    let threshold = 1.0 - distinct.len() as f64 / stores as f64;
    let cfg = EngineConfig::default();
    let r = run(&trace, &cfg, PolicyConfig::CACHE_R).unwrap();
    let rw = run(&trace, &cfg, PolicyConfig::CACHE_RW).unwrap();
    let reduction = 1.0 - rw.dram_writes as f64 / r.dram_writes as f64;
    check(
        r.dram_writes == stores && rw.dram_writes == distinct.len() as u64 && reduction >= 0.5,
        format!(
            "CacheR writes {} (stores {stores}), CacheRW writes {} (lines {}), reduction {:.1}% (expected {:.1}%)",
            r.dram_writes,
            rw.dram_writes,
            distinct.len(),
            reduction * 100.0,
            threshold * 100.0
        ),
        stats_dump("cacher", &r) + &stats_dump("cacherw", &rw),
    )
}

// 5 -----------------------------------------------------------------------

fn crit5_streaming() -> Check {
    let trace = generate(&LayerSpec::new(LayerKind::Streaming, &[1 << 19]).seed(1)).unwrap();
    let cfg = EngineConfig::default();
    let u = run(&trace, &cfg, PolicyConfig::UNCACHED).unwrap();
    let r = run(&trace, &cfg, PolicyConfig::CACHE_R).unwrap();
    let diff = (r.dram_accesses() as f64 - u.dram_accesses() as f64).abs() / u.dram_accesses() as f64;
    check(
        diff <= 0.01 && r.cycles >= u.cycles,
        format!(
            "DRAM accesses {} vs {} ({:.2}% apart), cycles {} vs {}",
            r.dram_accesses(),
            u.dram_accesses(),
            diff * 100.0,
            r.cycles,
            u.cycles
        ),
        stats_dump("uncached", &u) + &stats_dump("cacher", &r),
    )
}

// 6 -----------------------------------------------------------------------

fn crit6_allocation_bypass() -> Check {
    let cfg = EngineConfig::default();
    let trace = gen_set_contention(8, 32, 16, cfg.l1.num_sets());
    let rw = run(&trace, &cfg, PolicyConfig::CACHE_RW).unwrap();
    let ab = run(&trace, &cfg, PolicyConfig::CACHE_RW_AB).unwrap();
    let factor = if ab.stalls_per_request() == 0.0 {
        f64::INFINITY
    } else {
        rw.stalls_per_request() / ab.stalls_per_request()
    };
    let dram = (ab.dram_accesses() as f64 - rw.dram_accesses() as f64).abs() / rw.dram_accesses() as f64;
    check(
        factor >= 10.0 && dram <= 0.02,
        format!(
            "stalls/request {:.3} -> {:.3} ({factor:.1}x), DRAM accesses {} vs {} ({:.2}% apart)",
            rw.stalls_per_request(),
            ab.stalls_per_request(),
            rw.dram_accesses(),
            ab.dram_accesses(),
            dram * 100.0
        ),
        stats_dump("cacherw", &rw) + &stats_dump("cacherw-ab", &ab),
    )
}

// 7 -----------------------------------------------------------------------

fn crit7_cache_rinsing() -> Check {
    let cfg = EngineConfig::default();
    let d = &cfg.dram;
    // lines sharing a DRAM row sit this far apart under channel-first mapping
    let row_stride = LINE_BYTES * d.channels * d.banks_per_channel;
    let trace = gen_scattered_stores(64, 16, row_stride, 16, 7);
    let ab = run(&trace, &cfg, PolicyConfig::CACHE_RW_AB).unwrap();
    let cr = run(&trace, &cfg, PolicyConfig::CACHE_RW_CR).unwrap();
    check(
        cr.write_row_hit_ratio() >= ab.write_row_hit_ratio() && cr.dram_writes == ab.dram_writes && cr.rinse_writes > 0,
        format!(
            "write row-hit ratio {:.3} -> {:.3}, DRAM writes {} vs {}, {} rinse writes",
            ab.write_row_hit_ratio(),
            cr.write_row_hit_ratio(),
            ab.dram_writes,
            cr.dram_writes,
            cr.rinse_writes
        ),
        stats_dump("cacherw-ab", &ab) + &stats_dump("cacherw-cr", &cr),
    )
}

// 8 -----------------------------------------------------------------------

/// Three rounds of an elementwise layer run as eight short kernels, each
/// followed by a fully-connected layer. The two layers use disjoint PCs.
fn mixed_fixture() -> Trace {
    let fc = generate(&LayerSpec::new(LayerKind::FullyConnected, &[256, 256]).batch(8).seed(1)).unwrap();
    let mut t = Trace::default();
    for _ in 0..3 {
        for k in 0..8 {
            t.concat(&generate(&LayerSpec::new(LayerKind::Streaming, &[1 << 16]).seed(1 + k)).unwrap());
        }
        t.concat(&fc);
    }
    t
}

fn crit8_pc_bypass() -> Check {
    let trace = mixed_fixture();
    let cfg = EngineConfig::default();
    let mut art = String::new();
    let mut best = u64::MAX;
    for cell in [PolicyConfig::UNCACHED, PolicyConfig::CACHE_R, PolicyConfig::CACHE_RW] {
        let s = run(&trace, &cfg, cell).unwrap();
        best = best.min(s.cycles);
        art += &stats_dump(&cell.label(), &s);
    }
    let p = run(&trace, &cfg, PolicyConfig::CACHE_RW_PCBY).unwrap();
    art += &stats_dump("cacherw-pcby", &p);
    let ratio = p.cycles as f64 / best as f64;
    check(
        ratio <= 1.05,
        format!(
            "PCby cycles {} vs best static {best} ({ratio:.3}x), predictor bypassed {} of {} decisions",
            p.cycles,
            p.bypass_decisions_bypass,
            p.bypass_decisions_bypass + p.bypass_decisions_cache
        ),
        art,
    )
}

// 9 -----------------------------------------------------------------------

fn single_load() -> Trace {
    let mut b = micachesim::trace::TraceBuilder::default();
    b.load(0x100, 0x1_0000, 4, 0);
    b.finish()
}

fn crit9_latency() -> Check {
    let cfg = EngineConfig::default();
    let t = single_load();
    let u = run(&t, &cfg, PolicyConfig::UNCACHED).unwrap();
    let mut sim = Simulator::new(cfg, PolicyConfig::CACHE_R).unwrap();
    let first = sim.execute(&t).unwrap();
    let again = sim.execute(&t).unwrap();
    check(
        u.cycles.abs_diff(225) <= 5 && again.cycles.abs_diff(50) <= 2 && again.l1_hits == 1,
        format!("uncached load {} cycles, CacheR cold {} cycles, repeated {} cycles", u.cycles, first.cycles, again.cycles),
        format!("{} {} {}", u.cycles, first.cycles, again.cycles),
    )
}

// 10 ----------------------------------------------------------------------

fn matrix(seed: u64) -> Vec<(String, Trace)> {
    let specs: [(LayerKind, &[u64], u32); 7] = [
        (LayerKind::Streaming, &[1 << 19], 1),
        (LayerKind::Pooling, &[64, 64, 8, 2, 2], 1),
        (LayerKind::FullyConnected, &[256, 256], 8),
        (LayerKind::GemmTiled, &[256, 256, 256, 32], 1),
        (LayerKind::Rnn, &[128, 16], 1),
        (LayerKind::LrnNeighbor, &[64, 64, 32, 5], 1),
        (LayerKind::SoftmaxSmall, &[128, 128], 1),
    ];
    specs
        .iter()
        .map(|(k, d, b)| (k.name().to_string(), generate(&LayerSpec::new(*k, d).batch(*b).seed(seed)).unwrap()))
        .collect()
}

fn sweep_matrix(seed: u64, cells: &[PolicyConfig], parallel: usize) -> Vec<SweepResult> {
    let cfg = EngineConfig::default();
    matrix(seed)
        .iter()
        .map(|(name, t)| run_sweep(name, t, &cfg, cells, parallel).unwrap())
        .collect()
}

fn crit10_classification(seed1: &[SweepResult]) -> Check {
    let statics = [PolicyConfig::UNCACHED, PolicyConfig::CACHE_R, PolicyConfig::CACHE_RW];
    let mut per_seed: Vec<Vec<(String, Category)>> = Vec::new();
    let mut art = String::new();
    for seed in 1..=3u64 {
        let sweeps = if seed == 1 { seed1.to_vec() } else { sweep_matrix(seed, &statics, 4) };
        let mut row = Vec::new();
        for s in &sweeps {
            let c = classify(s).unwrap();
            let _ = writeln!(art, "seed {seed} {} {c}", s.workload);
            row.push((s.workload.clone(), c.category));
        }
        per_seed.push(row);
    }
    let stable = per_seed.iter().all(|r| r == &per_seed[0]);
    let present: HashSet<Category> = per_seed[0].iter().map(|(_, c)| *c).collect();
    let summary: Vec<String> = per_seed[0].iter().map(|(w, c)| format!("{w}={c}")).collect();
    check(
        stable && present.len() == 3,
        format!("{} (stable across seeds 1-3: {stable})", summary.join(" ")),
        art,
    )
}

// 11 ----------------------------------------------------------------------

fn artifacts(sweeps: &[SweepResult]) -> HashMap<String, Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_artifacts(sweeps, dir.path()).unwrap();
    paths
        .iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap()))
        .collect()
}

fn run_all(seed1: &[SweepResult]) -> Vec<(&'static str, Check)> {
    vec![
        ("functional LRU oracle equivalence", crit1_lru_oracle()),
        ("write visibility across all cells", crit2_write_visibility()),
        ("reuse-sensitive fixture", crit3_reuse_fixture()),
        ("write coalescing fixture", crit4_write_coalescing()),
        ("throughput-sensitive fixture", crit5_streaming()),
        ("allocation bypass", crit6_allocation_bypass()),
        ("cache rinsing", crit7_cache_rinsing()),
        ("PC-based bypass", crit8_pc_bypass()),
        ("latency sanity", crit9_latency()),
        ("classification", crit10_classification(seed1)),
    ]
}

fn main() {
    let start = Instant::now();
    let serial = sweep_matrix(1, &PolicyConfig::SWEEP, 1);
    let first = run_all(&serial);

    let parallel = sweep_matrix(1, &PolicyConfig::SWEEP, 4);
    let second = run_all(&parallel);
    let mut diverged: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|((_, a), (_, b))| a.artifact != b.artifact)
        .map(|((n, _), _)| *n)
        .collect();
    let (a, b) = (artifacts(&serial), artifacts(&parallel));
    if a != b {
        diverged.push("sweep artifacts");
    }
    let det = check(
        diverged.is_empty(),
        format!("{} criteria and {} sweep artifacts compared across reruns and --parallel 1/4, diverged: {diverged:?}", first.len(), a.len()),
        String::new(),
    );

    let mut failed = 0;
    let all = first.into_iter().chain(std::iter::once(("determinism", det)));
    for (i, (name, c)) in all.enumerate() {
        failed += usize::from(!c.pass);
        println!("{} [{}] {name}: {}", if c.pass { "PASS" } else { "FAIL" }, i + 1, c.detail);
    }
    println!("acceptance: {} of 11 passed in {:.1}s", 11 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

