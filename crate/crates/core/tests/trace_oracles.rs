use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use micachesim::cache::{AccessResult, Cache, CacheConfig, CacheLevel, WritePolicy};
use micachesim::trace::gen::{gen_random, generate, RandomSpec};
use micachesim::trace::reuse::line_references;
use micachesim::trace::{
    read_trace, read_trace_text, write_trace, write_trace_text, AccessKind, LayerKind, LayerSpec, MarkerScope,
    Trace, TraceEntry, LINE_BYTES,
};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn lowest_addr(t: &Trace) -> u64 {
    t.accesses().map(|a| a.addr).min().unwrap()
}

/// Stack distance of every re-reference, keyed by position in the access stream.
/// Distinct lines touched strictly between two uses of the same line.
fn stack_distances(lines: &[u64]) -> Vec<(usize, u64, u64)> {
    struct Fenwick(Vec<i64>);
    impl Fenwick {
        fn add(&mut self, mut i: usize, v: i64) {
            i += 1;
            while i < self.0.len() {
                self.0[i] += v;
                i += i & i.wrapping_neg();
            }
        }
        fn prefix(&self, mut i: usize) -> i64 {
            let mut s = 0;
            while i > 0 {
                s += self.0[i];
                i -= i & i.wrapping_neg();
            }
            s
        }
    }
    let mut fw = Fenwick(vec![0; lines.len() + 1]);
    let mut last: HashMap<u64, usize> = HashMap::new();
    let mut out = Vec::new();
    for (t, &l) in lines.iter().enumerate() {
        if let Some(p) = last.insert(l, t) {
            let d = fw.prefix(t) - fw.prefix(p + 1);
            out.push((t, l, d as u64));
            fw.add(p, -1);
        }
        fw.add(t, 1);
    }
    out
}

/// Fully associative LRU cache that counts misses.
fn lru_misses(lines: impl IntoIterator<Item = u64>, capacity: usize) -> u64 {
    let mut q: VecDeque<u64> = VecDeque::new();
    let mut misses = 0;
    for l in lines {
        if let Some(pos) = q.iter().position(|&x| x == l) {
            q.remove(pos);
        } else {
            misses += 1;
            if q.len() == capacity {
                q.pop_back();
            }
        }
        q.push_front(l);
    }
    misses
}

#[test]
fn streaming_cu_line_sets_are_disjoint() {
    let t = generate(&LayerSpec::new(LayerKind::Streaming, &[65536]).cus(64)).unwrap();
    let mut per_cu: BTreeMap<u8, HashSet<u64>> = BTreeMap::new();
    for a in t.accesses() {
        per_cu.entry(a.cu_id).or_default().insert(a.line());
    }
    assert_eq!(per_cu.len(), 64);
    let mut union = HashSet::new();
    let mut total = 0;
    for set in per_cu.values() {
        total += set.len();
        union.extend(set.iter().copied());
    }
    assert_eq!(union.len(), 4096);
    assert_eq!(total, union.len(), "some line is touched by two CUs");
    for r in line_references(&t).values() {
        assert_eq!((r.loads, r.stores), (1, 1));
    }
}

#[test]
fn fc_weight_reuse_distance_peaks_at_weight_footprint() {
    let (n_in, n_out, batch) = (512u64, 512u64, 16u32);
    let t = generate(&LayerSpec::new(LayerKind::FullyConnected, &[n_in, n_out]).batch(batch)).unwrap();
    let base = lowest_addr(&t);
    let w_end = base + n_in * n_out * 4;
    let w_lines = n_in * n_out * 4 / LINE_BYTES;
    let lines: Vec<u64> = t.accesses().map(|a| a.line()).collect();
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    for (_, l, d) in stack_distances(&lines) {
        if l < w_end {
            *hist.entry(d).or_default() += 1;
        }
    }
    assert_eq!(hist.values().sum::<u64>(), (batch as u64 - 1) * w_lines);
    // between two uses sit the other weight lines plus two items' worth of input and output lines
    let slack = 2 * (n_in + n_out) * 4 / LINE_BYTES;
    let (lo, hi) = (*hist.keys().next().unwrap(), *hist.keys().last().unwrap());
    assert!(lo >= w_lines - 1 && hi <= w_lines - 1 + slack, "{lo}..{hi}");
    assert!(hi - lo < w_lines / 100, "spread {lo}..{hi}");
}

#[test]
fn pooling_reference_counts_match_window_enumeration() {
    let (w, h, win, s) = (128u64, 128u64, 3u64, 2u64);
    let t = generate(&LayerSpec::new(LayerKind::Pooling, &[w, h, 1, win, s])).unwrap();
    let base = lowest_addr(&t);
    let mut expected: HashMap<u64, u64> = HashMap::new();
    let (oh, ow) = ((h - win) / s + 1, (w - win) / s + 1);
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..win {
                for kx in 0..win {
                    *expected.entry(base + ((oy * s + ky) * w + ox * s + kx) * 4).or_default() += 1;
                }
            }
        }
    }
    let mut seen: HashMap<u64, u64> = HashMap::new();
    for a in t.accesses().filter(|a| a.kind == AccessKind::Load) {
        *seen.entry(a.addr).or_default() += 1;
    }
    assert_eq!(seen, expected);
    assert_eq!(t.accesses().filter(|a| a.is_store()).count() as u64, oh * ow);
}

#[test]
fn gemm_ideal_cache_misses_equal_distinct_lines() {
    let (m, n, k, tile) = (128u64, 128u64, 128u64, 32u64);
    let t = generate(&LayerSpec::new(LayerKind::GemmTiled, &[m, n, k, tile])).unwrap();
    let base = lowest_addr(&t);
    let b_base = base + m * k * 4;
    let b_end = b_base + k * n * 4;
    let b_loads: Vec<u64> = t
        .accesses()
        .filter(|a| a.kind == AccessKind::Load && (b_base..b_end).contains(&a.addr))
        .map(|a| a.line())
        .collect();
    let b_distinct = b_loads.iter().collect::<HashSet<_>>().len();
    assert_eq!(b_distinct as u64, k * n * 4 / LINE_BYTES);
    // inter-tile reuse exists: every B line comes back once per tile row
    assert_eq!(b_loads.len() as u64, b_distinct as u64 * (m / tile));
    assert_eq!(lru_misses(b_loads.iter().copied(), b_distinct), b_distinct as u64);
    // a single panel's worth of capacity cannot hold the reuse across tile rows
    let panel = (k * tile * 4 / LINE_BYTES) as usize;
    assert_eq!(lru_misses(b_loads.iter().copied(), panel), b_loads.len() as u64);

    let all: Vec<u64> = t.accesses().map(|a| a.line()).collect();
    let distinct = all.iter().collect::<HashSet<_>>().len();
    assert_eq!(lru_misses(all.iter().copied(), distinct), distinct as u64);
}

#[test]
fn rnn_kernels_reload_weights() {
    let t = generate(&LayerSpec::new(LayerKind::Rnn, &[128, 16])).unwrap();
    let markers: Vec<_> = t.markers().collect();
    assert_eq!(markers.len(), 16);
    assert!(markers[..15].iter().all(|m| m.scope == MarkerScope::Kernel));
    assert_eq!(markers[15].scope, MarkerScope::SystemScope);
    let base = lowest_addr(&t);
    let w_end = base + 4 * 128 * 128 * 4;
    let mut per_line: HashMap<u64, Vec<u32>> = HashMap::new();
    for a in t.accesses().filter(|a| a.addr < w_end) {
        per_line.entry(a.line()).or_default().push(a.kernel_id);
    }
    assert_eq!(per_line.len(), 4096);
    for kernels in per_line.values() {
        assert_eq!(kernels, &(0..16).collect::<Vec<u32>>());
    }
}

/// Replays `t` through an L2-style cache with instant fills and compares each
/// load outcome to a set model that forgets clean lines at every marker.
#[test]
fn kernel_boundary_invalidation_matches_oracle() {
    let t = generate(&LayerSpec::new(LayerKind::Rnn, &[128, 16])).unwrap();
    let cfg = CacheConfig {
        level: CacheLevel::L2,
        write_policy: WritePolicy::CoalesceDirty,
        ..CacheConfig::l2_default()
    };
    let mut cache = Cache::new(cfg).unwrap();
    let mut clean: HashSet<u64> = HashSet::new();
    let mut dirty: HashSet<u64> = HashSet::new();
    let mut cross_kernel_misses = 0;
    let mut prev_kernel: HashSet<u64> = HashSet::new();
    for e in &t.entries {
        match e {
            TraceEntry::Access(a) => {
                let out = cache.access(a, true);
                let present = clean.contains(&a.line()) || dirty.contains(&a.line());
                match a.kind {
                    AccessKind::Load => {
                        assert_eq!(out.result == AccessResult::Hit, present, "seq {}", a.seq);
                        if out.result == AccessResult::MissAllocated {
                            cache.fill(a.line());
                            clean.insert(a.line());
                            if prev_kernel.contains(&a.line()) {
                                cross_kernel_misses += 1;
                            }
                        }
                    }
                    AccessKind::Store => {
                        clean.remove(&a.line());
                        dirty.insert(a.line());
                    }
                }
            }
            TraceEntry::Marker(m) => {
                prev_kernel = std::mem::take(&mut clean);
                let mut gone = cache.self_invalidate_lines();
                gone.sort_unstable();
                let mut want: Vec<u64> = prev_kernel.iter().copied().collect();
                want.sort_unstable();
                assert_eq!(gone, want);
                if m.scope == MarkerScope::SystemScope {
                    let flushed = cache.flush_dirty(|l| l).unwrap();
                    assert_eq!(flushed.len(), dirty.len());
                    dirty.clear();
                }
            }
        }
    }
    // every weight line misses again in each of the 15 later kernels
    assert!(cross_kernel_misses >= 15 * 4096);
}

#[test]
fn million_record_binary_round_trip_digest() {
    let t = gen_random(&RandomSpec { accesses: 1_000_000, kernels: 7, seed: 11, ..Default::default() });
    let mut bytes = Vec::new();
    write_trace(&t, &mut bytes).unwrap();
    let back = read_trace(bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    write_trace(&back, &mut again).unwrap();
    assert_eq!(Sha256::digest(&bytes), Sha256::digest(&again));
    assert_eq!(back, t);
}

#[test]
fn generators_are_byte_deterministic() {
    let digest = |spec: &LayerSpec| {
        let mut bytes = Vec::new();
        write_trace(&generate(spec).unwrap(), &mut bytes).unwrap();
        Sha256::digest(&bytes)
    };
    for (kind, dims) in [
        (LayerKind::Streaming, vec![4096]),
        (LayerKind::Pooling, vec![32, 32, 2, 3, 2]),
        (LayerKind::FullyConnected, vec![64, 64]),
        (LayerKind::GemmTiled, vec![64, 64, 64, 16]),
        (LayerKind::Rnn, vec![32, 4]),
        (LayerKind::LrnNeighbor, vec![16, 16, 8, 5]),
        (LayerKind::SoftmaxSmall, vec![32, 64]),
    ] {
        let spec = LayerSpec::new(kind, &dims).batch(2).seed(9);
        assert_eq!(digest(&spec), digest(&spec), "{kind:?}");
    }
}

fn layer_strategy() -> impl Strategy<Value = LayerSpec> {
    let cus = 1u16..=64;
    prop_oneof![
        (1u64..5000, cus.clone()).prop_map(|(n, c)| LayerSpec::new(LayerKind::Streaming, &[n]).cus(c)),
        (1u64..6, 1u64..5, 1u64..4, 1u64..4, 1u64..4).prop_map(|(w, h, c, win, s)| {
            LayerSpec::new(LayerKind::Pooling, &[16 * w, 3 + h, c, win, s])
        }),
        (1u64..80, 1u64..80, 1u32..4).prop_map(|(i, o, b)| LayerSpec::new(LayerKind::FullyConnected, &[i, o]).batch(b)),
        (1u64..4, 1u64..4, 1u64..4, prop::sample::select(vec![8u64, 16])).prop_map(|(m, n, k, t)| {
            LayerSpec::new(LayerKind::GemmTiled, &[m * t, n * t, k * t, t])
        }),
        (1u64..40, 1u64..5).prop_map(|(h, s)| LayerSpec::new(LayerKind::Rnn, &[h, s])),
        (1u64..20, 1u64..20, 1u64..10, prop::sample::select(vec![1u64, 3, 5]))
            .prop_map(|(w, h, c, win)| LayerSpec::new(LayerKind::LrnNeighbor, &[w, h, c, win])),
        (1u64..20, 1u64..100).prop_map(|(r, c)| LayerSpec::new(LayerKind::SoftmaxSmall, &[r, c])),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn footprint_matches_closed_form(spec in layer_strategy(), seed in 0u64..1000) {
        let spec = spec.seed(seed);
        let t = generate(&spec).unwrap();
        prop_assert_eq!(line_references(&t).len() as u64, spec.footprint_lines());
        prop_assert!(t.validate(spec.num_cus as usize).is_ok());
        if spec.kind == LayerKind::Pooling {
            let loads = t.accesses().filter(|a| !a.is_store()).count() as u64;
            let stores = t.accesses().filter(|a| a.is_store()).count() as u64;
            prop_assert_eq!(loads, stores * spec.dims[3] * spec.dims[3]);
        }
    }

    #[test]
    fn binary_and_text_round_trip(accesses in 0usize..400, kernels in 1u32..5, seed in any::<u64>(), end in 0u8..3) {
        let final_scope = [None, Some(MarkerScope::Kernel), Some(MarkerScope::SystemScope)][end as usize];
        let t = gen_random(&RandomSpec { accesses, kernels, seed, final_scope, ..Default::default() });
        let mut bytes = Vec::new();
        write_trace(&t, &mut bytes).unwrap();
        prop_assert_eq!(&read_trace(bytes.as_slice()).unwrap(), &t);
        let mut text = Vec::new();
        write_trace_text(&t, &mut text).unwrap();
        let parsed = read_trace_text(std::str::from_utf8(&text).unwrap()).unwrap();
        prop_assert_eq!(parsed.entries, t.entries);
    }
}
