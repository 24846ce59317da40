//! Synthetic trace generators mimicking the access structure of common
//! machine-intelligence layer families.
//!
//! Every generator lays tensors out row-major, one after another, each starting
//! on a 4 KiB boundary. The first base address is derived from the seed, so two
//! seeds produce the same access structure at different DRAM rows. Work is split
//! into work-groups that are dealt round-robin over CUs. References a work-group
//! would serve out of its local data store are omitted from the trace; the
//! `lds_filter` fraction controls how much of that intra-work-group reuse is
//! removed where a layer has any.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{line_of, AccessKind, MarkerScope, Trace, TraceBuilder, TraceMeta, LINE_BYTES};

/// Lanes per wavefront; one wavefront-wide access is the unit of line-granular work.
pub const WAVEFRONT_LANES: u64 = 64;
pub const DEFAULT_MAX_FOOTPRINT: u64 = 1 << 30;
const PAGE: u64 = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("layer spec describes no work")]
    EmptySpec,
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("footprint of {bytes} bytes exceeds the configured maximum of {max} bytes")]
    FootprintTooLarge { bytes: u64, max: u64 },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Streaming,
    Pooling,
    FullyConnected,
    GemmTiled,
    Rnn,
    LrnNeighbor,
    SoftmaxSmall,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Streaming,
        LayerKind::Pooling,
        LayerKind::FullyConnected,
        LayerKind::GemmTiled,
        LayerKind::Rnn,
        LayerKind::LrnNeighbor,
        LayerKind::SoftmaxSmall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Streaming => "streaming",
            LayerKind::Pooling => "pooling",
            LayerKind::FullyConnected => "fc",
            LayerKind::GemmTiled => "gemm",
            LayerKind::Rnn => "rnn",
            LayerKind::LrnNeighbor => "lrn",
            LayerKind::SoftmaxSmall => "softmax",
        }
    }

    /// Dimension tuple layout, for usage messages.
    pub fn dims_help(self) -> &'static str {
        match self {
            LayerKind::Streaming => "n_elements",
            LayerKind::Pooling => "width,height,channels,window,stride",
            LayerKind::FullyConnected => "n_in,n_out",
            LayerKind::GemmTiled => "m,n,k,tile",
            LayerKind::Rnn => "hidden,seq_len",
            LayerKind::LrnNeighbor => "width,height,channels,window",
            LayerKind::SoftmaxSmall => "rows,cols",
        }
    }

    fn arity(self) -> usize {
        match self {
            LayerKind::Streaming => 1,
            LayerKind::FullyConnected | LayerKind::Rnn | LayerKind::SoftmaxSmall => 2,
            LayerKind::GemmTiled | LayerKind::LrnNeighbor => 4,
            LayerKind::Pooling => 5,
        }
    }

    fn default_lds_filter(self) -> f64 {
        match self {
            LayerKind::SoftmaxSmall => 0.0,
            _ => 1.0,
        }
    }

    /// Distinct per-layer PC space so concatenated traces never share instructions.
    fn pc(self, instr: u64) -> u64 {
        let code = LayerKind::ALL.iter().position(|k| *k == self).unwrap() as u64 + 1;
        0x4000_0000 | (code << 16) | (instr << 3)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "streaming" | "stream" => LayerKind::Streaming,
            "pooling" | "pool" => LayerKind::Pooling,
            "fc" | "fully-connected" | "fully_connected" => LayerKind::FullyConnected,
            "gemm" | "gemm-tiled" => LayerKind::GemmTiled,
            "rnn" => LayerKind::Rnn,
            "lrn" => LayerKind::LrnNeighbor,
            "softmax" => LayerKind::SoftmaxSmall,
            other => return Err(GenError::InvalidSpec(format!("unknown layer kind {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub dims: Vec<u64>,
    pub element_bytes: u8,
    pub batch: u32,
    pub seed: u64,
    pub num_cus: u16,
    /// Fraction of intra-work-group reuse served by the LDS; `None` takes the layer default.
    pub lds_filter: Option<f64>,
    pub max_footprint: u64,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, dims: &[u64]) -> Self {
        LayerSpec {
            kind,
            dims: dims.to_vec(),
            element_bytes: 4,
            batch: 1,
            seed: 0,
            num_cus: 64,
            lds_filter: None,
            max_footprint: DEFAULT_MAX_FOOTPRINT,
        }
    }

    pub fn batch(mut self, batch: u32) -> Self {
        self.batch = batch;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn cus(mut self, num_cus: u16) -> Self {
        self.num_cus = num_cus;
        self
    }

    pub fn element_bytes(mut self, bytes: u8) -> Self {
        self.element_bytes = bytes;
        self
    }

    pub fn lds_filter(mut self, fraction: f64) -> Self {
        self.lds_filter = Some(fraction);
        self
    }

    fn lds(&self) -> f64 {
        self.lds_filter.unwrap_or_else(|| self.kind.default_lds_filter())
    }

    fn e(&self) -> u64 {
        self.element_bytes as u64
    }

    fn validate(&self) -> Result<(), GenError> {
        if self.dims.len() != self.kind.arity() {
            return Err(GenError::InvalidSpec(format!(
                "{} expects {} dimensions ({}), got {}",
                self.kind,
                self.kind.arity(),
                self.kind.dims_help(),
                self.dims.len()
            )));
        }
        if self.element_bytes != 4 && self.element_bytes != 8 {
            return Err(GenError::InvalidSpec("element_bytes must be 4 or 8".into()));
        }
        if self.num_cus == 0 || self.num_cus > 256 {
            return Err(GenError::InvalidSpec("num_cus must be in 1..=256".into()));
        }
        if self.batch == 0 {
            return Err(GenError::InvalidSpec("batch must be at least 1".into()));
        }
        let f = self.lds();
        if !(0.0..=1.0).contains(&f) {
            return Err(GenError::InvalidSpec("lds_filter must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Total bytes of all tensors the layer touches, from the spec alone.
    pub fn tensor_bytes(&self) -> u64 {
        let e = self.e();
        let d = &self.dims;
        let b = self.batch as u64;
        let sat = |xs: &[u64]| xs.iter().fold(1u64, |acc, x| acc.saturating_mul(*x));
        match self.kind {
            LayerKind::Streaming => sat(&[d[0], e]),
            LayerKind::FullyConnected => sat(&[d[0], d[1], e])
                .saturating_add(sat(&[b, d[0], e]))
                .saturating_add(sat(&[b, d[1], e])),
            LayerKind::Pooling => {
                let (oh, ow) = pool_out(d);
                sat(&[d[0], d[1], d[2], e]).saturating_add(sat(&[oh, ow, d[2], e]))
            }
            LayerKind::GemmTiled => sat(&[d[0], d[2], e])
                .saturating_add(sat(&[d[2], d[1], e]))
                .saturating_add(sat(&[d[0], d[1], e])),
            LayerKind::Rnn => sat(&[4, d[0], d[0], e]).saturating_add(sat(&[d[1] + 1, d[0], e])),
            LayerKind::LrnNeighbor => sat(&[2, d[0], d[1], d[2], e]),
            LayerKind::SoftmaxSmall => sat(&[2, d[0], d[1], e]),
        }
    }

    /// Distinct 64-byte lines the generated trace touches, computed in closed form.
    pub fn footprint_lines(&self) -> u64 {
        let e = self.e();
        let d = &self.dims;
        let b = self.batch as u64;
        let lines = |bytes: u64| bytes.div_ceil(LINE_BYTES);
        match self.kind {
            LayerKind::Streaming => lines(d[0] * e),
            LayerKind::FullyConnected => lines(d[0] * d[1] * e) + lines(b * d[0] * e) + lines(b * d[1] * e),
            LayerKind::Pooling => {
                let (w, c, win, s) = (d[0], d[2], d[3], d[4]);
                let (oh, ow) = pool_out(d);
                let rows = touched(oh, s, win).len() as u64;
                let cols = touched(ow, s, win);
                let input = c * rows * distinct_row_lines(w, &cols, e);
                input + lines(c * oh * ow * e)
            }
            LayerKind::GemmTiled => lines(d[0] * d[2] * e) + lines(d[2] * d[1] * e) + lines(d[0] * d[1] * e),
            LayerKind::Rnn => lines(4 * d[0] * d[0] * e) + lines((d[1] + 1) * d[0] * e),
            LayerKind::LrnNeighbor => 2 * lines(d[0] * d[1] * d[2] * e),
            LayerKind::SoftmaxSmall => 2 * lines(d[0] * d[1] * e),
        }
    }

    pub fn params_string(&self) -> String {
        let dims: Vec<String> = self.dims.iter().map(u64::to_string).collect();
        format!(
            "layer={} dims={} element_bytes={} batch={} cus={} lds_filter={}",
            self.kind,
            dims.join(","),
            self.element_bytes,
            self.batch,
            self.num_cus,
            self.lds()
        )
    }
}

fn pool_out(d: &[u64]) -> (u64, u64) {
    let (w, h, win, s) = (d[0], d[1], d[3], d[4]);
    if win == 0 || s == 0 || win > w || win > h {
        return (0, 0);
    }
    ((h - win) / s + 1, (w - win) / s + 1)
}

/// Input coordinates touched along one axis by `n_out` windows.
fn touched(n_out: u64, stride: u64, window: u64) -> BTreeSet<u64> {
    (0..n_out).flat_map(|o| (0..window).map(move |k| o * stride + k)).collect()
}

/// Distinct lines touched in one line-aligned input row, given the touched columns.
fn distinct_row_lines(w: u64, cols: &BTreeSet<u64>, e: u64) -> u64 {
    debug_assert!((w * e) % LINE_BYTES == 0, "pooling rows are line-aligned");
    cols.iter().map(|c| c * e / LINE_BYTES).collect::<BTreeSet<_>>().len() as u64
}

/// Sequential tensor allocator.
struct Layout {
    next: u64,
}

impl Layout {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Layout { next: 0x1000_0000 + rng.gen_range(0..16_384u64) * PAGE }
    }

    fn alloc(&mut self, bytes: u64) -> u64 {
        let base = self.next;
        self.next = (base + bytes.max(1)).div_ceil(PAGE) * PAGE;
        base
    }
}

/// Emits one request per line covering `[addr, addr + bytes)`.
fn emit_range(b: &mut TraceBuilder, pc: u64, addr: u64, bytes: u64, kind: AccessKind, cu: u8) {
    let end = addr + bytes;
    let mut a = addr;
    while a < end {
        let next = (line_of(a) + LINE_BYTES).min(end);
        b.push(pc, a, (next - a) as u8, kind, cu);
        a = next;
    }
}

fn repeats(lds_filter: f64, uses: u64) -> u64 {
    1 + ((1.0 - lds_filter) * uses.saturating_sub(1) as f64).round() as u64
}

fn meta(spec: &LayerSpec) -> TraceMeta {
    TraceMeta {
        generator: format!("gen_{}", spec.kind),
        params: spec.params_string(),
        seed: spec.seed,
    }
}

fn check_footprint(spec: &LayerSpec) -> Result<(), GenError> {
    let bytes = spec.tensor_bytes();
    if bytes > spec.max_footprint {
        return Err(GenError::FootprintTooLarge { bytes, max: spec.max_footprint });
    }
    Ok(())
}

/// Dispatches on `spec.kind`.
pub fn generate(spec: &LayerSpec) -> Result<Trace, GenError> {
    spec.validate()?;
    if spec.dims.iter().any(|&d| d == 0) {
        return match spec.kind {
            LayerKind::Pooling | LayerKind::GemmTiled => Err(GenError::InvalidSpec(
                "all dimensions, window and stride must be positive".into(),
            )),
            _ => Err(GenError::EmptySpec),
        };
    }
    check_footprint(spec)?;
    let trace = match spec.kind {
        LayerKind::Streaming => gen_streaming(spec),
        LayerKind::FullyConnected => gen_fully_connected(spec),
        LayerKind::Pooling => gen_pooling(spec)?,
        LayerKind::GemmTiled => gen_gemm_tiled(spec)?,
        LayerKind::Rnn => gen_rnn(spec),
        LayerKind::LrnNeighbor => gen_lrn(spec)?,
        LayerKind::SoftmaxSmall => gen_softmax(spec),
    };
    Ok(trace)
}

fn cu_for(spec: &LayerSpec, work_group: u64) -> u8 {
    (work_group % spec.num_cus as u64) as u8
}

/// Element-wise layer applied in place: every line is loaded once, then
/// overwritten once. Work-groups are one wavefront of consecutive elements.
fn gen_streaming(spec: &LayerSpec) -> Trace {
    let (n, e) = (spec.dims[0], spec.e());
    let mut layout = Layout::new(spec.seed);
    let data = layout.alloc(n * e);
    let mut b = TraceBuilder::new(meta(spec));
    let chunks = n.div_ceil(WAVEFRONT_LANES);
    for wg in 0..chunks {
        let cu = cu_for(spec, wg);
        let off = wg * WAVEFRONT_LANES * e;
        let bytes = (n - wg * WAVEFRONT_LANES).min(WAVEFRONT_LANES) * e;
        emit_range(&mut b, spec.kind.pc(0), data + off, bytes, AccessKind::Load, cu);
        emit_range(&mut b, spec.kind.pc(1), data + off, bytes, AccessKind::Store, cu);
    }
    b.marker(MarkerScope::SystemScope);
    b.finish()
}

/// Matrix-vector per batch item. A work-group owns the weight rows feeding one
/// output line, so every weight line is loaded exactly once per batch item.
fn gen_fully_connected(spec: &LayerSpec) -> Trace {
    let (n_in, n_out, e) = (spec.dims[0], spec.dims[1], spec.e());
    let batch = spec.batch as u64;
    let mut layout = Layout::new(spec.seed);
    let weights = layout.alloc(n_out * n_in * e);
    let inputs = layout.alloc(batch * n_in * e);
    let outputs = layout.alloc(batch * n_out * e);
    let rows_per_wg = LINE_BYTES / e;
    let wgs = n_out.div_ceil(rows_per_wg);
    let mut b = TraceBuilder::new(meta(spec));
    for item in 0..batch {
        for wg in 0..wgs {
            let cu = cu_for(spec, wg);
            let r0 = wg * rows_per_wg;
            let r1 = (r0 + rows_per_wg).min(n_out);
            emit_range(&mut b, spec.kind.pc(0), inputs + item * n_in * e, n_in * e, AccessKind::Load, cu);
            emit_range(&mut b, spec.kind.pc(1), weights + r0 * n_in * e, (r1 - r0) * n_in * e, AccessKind::Load, cu);
            emit_range(
                &mut b,
                spec.kind.pc(2),
                outputs + (item * n_out + r0) * e,
                (r1 - r0) * e,
                AccessKind::Store,
                cu,
            );
        }
    }
    b.marker(MarkerScope::SystemScope);
    b.finish()
}

/// Max pooling with element-granular references: window² loads per stored output.
/// One work-group per output row.
fn gen_pooling(spec: &LayerSpec) -> Result<Trace, GenError> {
    let d = &spec.dims;
    let (w, h, c, win, s) = (d[0], d[1], d[2], d[3], d[4]);
    let e = spec.e();
    if win > w || win > h {
        return Err(GenError::InvalidSpec("pooling window larger than the input".into()));
    }
    if (w * e) % LINE_BYTES != 0 {
        return Err(GenError::InvalidSpec("pooling input rows must be a whole number of lines".into()));
    }
    let (oh, ow) = pool_out(d);
    let mut layout = Layout::new(spec.seed);
    let input = layout.alloc(c * h * w * e);
    let output = layout.alloc(c * oh * ow * e);
    let mut b = TraceBuilder::new(meta(spec));
    for ch in 0..c {
        for oy in 0..oh {
            let cu = cu_for(spec, ch * oh + oy);
            for ox in 0..ow {
                for ky in 0..win {
                    for kx in 0..win {
                        let (y, x) = (oy * s + ky, ox * s + kx);
                        let addr = input + ((ch * h + y) * w + x) * e;
                        b.load(spec.kind.pc(0), addr, e as u8, cu);
                    }
                }
                let addr = output + ((ch * oh + oy) * ow + ox) * e;
                b.store(spec.kind.pc(1), addr, e as u8, cu);
            }
        }
    }
    b.marker(MarkerScope::SystemScope);
    Ok(b.finish())
}

/// Output-tiled GEMM. Each tile stages its A row panel and B column panel
/// through the LDS, so a panel line appears once per tile (more when
/// `lds_filter` < 1). B panels are re-read by every tile row.
fn gen_gemm_tiled(spec: &LayerSpec) -> Result<Trace, GenError> {
    let d = &spec.dims;
    let (m, n, k, t) = (d[0], d[1], d[2], d[3]);
    if m % t != 0 || n % t != 0 || k % t != 0 {
        return Err(GenError::InvalidSpec("tile must divide m, n and k".into()));
    }
    let e = spec.e();
    let mut layout = Layout::new(spec.seed);
    let a = layout.alloc(m * k * e);
    let bm = layout.alloc(k * n * e);
    let cm = layout.alloc(m * n * e);
    let reps = repeats(spec.lds(), t);
    let mut b = TraceBuilder::new(meta(spec));
    let tiles_n = n / t;
    for ti in 0..m / t {
        for tj in 0..tiles_n {
            let cu = cu_for(spec, ti * tiles_n + tj);
            let mut a_lines = BTreeSet::new();
            for r in ti * t..(ti + 1) * t {
                let start = a + r * k * e;
                a_lines.extend((line_of(start)..start + k * e).step_by(LINE_BYTES as usize));
            }
            let mut b_lines = Vec::new();
            let mut seen = BTreeSet::new();
            for r in 0..k {
                let start = bm + (r * n + tj * t) * e;
                for l in (line_of(start)..start + t * e).step_by(LINE_BYTES as usize) {
                    if seen.insert(l) {
                        b_lines.push(l);
                    }
                }
            }
            for _ in 0..reps {
                for &l in &a_lines {
                    b.load(spec.kind.pc(0), l, LINE_BYTES as u8, cu);
                }
                for &l in &b_lines {
                    b.load(spec.kind.pc(1), l, LINE_BYTES as u8, cu);
                }
            }
            for r in ti * t..(ti + 1) * t {
                let start = cm + (r * n + tj * t) * e;
                emit_range(&mut b, spec.kind.pc(2), start, t * e, AccessKind::Store, cu);
            }
        }
    }
    b.marker(MarkerScope::SystemScope);
    Ok(b.finish())
}

/// One kernel per time step. Each step reloads the shared gate weights
/// (four gates of hidden x hidden), reads the previous hidden state and writes
/// the next one. The final boundary is system scope.
fn gen_rnn(spec: &LayerSpec) -> Trace {
    let (hidden, steps, e) = (spec.dims[0], spec.dims[1], spec.e());
    let mut layout = Layout::new(spec.seed);
    let weights = layout.alloc(4 * hidden * hidden * e);
    let states = layout.alloc((steps + 1) * hidden * e);
    let rows_per_wg = LINE_BYTES / e;
    let wgs = (4 * hidden).div_ceil(rows_per_wg);
    let state_lines = (hidden * e).div_ceil(LINE_BYTES);
    let mut b = TraceBuilder::new(meta(spec));
    for step in 0..steps {
        let prev = states + step * hidden * e;
        let next = states + (step + 1) * hidden * e;
        for wg in 0..wgs {
            let cu = cu_for(spec, wg);
            let r0 = wg * rows_per_wg;
            let r1 = (r0 + rows_per_wg).min(4 * hidden);
            emit_range(&mut b, spec.kind.pc(0), prev, hidden * e, AccessKind::Load, cu);
            emit_range(&mut b, spec.kind.pc(1), weights + r0 * hidden * e, (r1 - r0) * hidden * e, AccessKind::Load, cu);
            let mut j = wg;
            while j < state_lines {
                let lo = next + j * LINE_BYTES;
                let hi = (lo + LINE_BYTES).min(next + hidden * e);
                emit_range(&mut b, spec.kind.pc(2), lo, hi - lo, AccessKind::Store, cu);
                j += wgs;
            }
        }
        let scope = if step + 1 == steps { MarkerScope::SystemScope } else { MarkerScope::Kernel };
        b.marker(scope);
    }
    b.finish()
}

/// Cross-channel local response normalization. A work-group owns one wavefront
/// of pixels across all channels and slides a channel window over them; with
/// the default LDS filter every input line is read once.
fn gen_lrn(spec: &LayerSpec) -> Result<Trace, GenError> {
    let d = &spec.dims;
    let (w, h, c, win) = (d[0], d[1], d[2], d[3]);
    if win % 2 == 0 {
        return Err(GenError::InvalidSpec("lrn window must be odd".into()));
    }
    let e = spec.e();
    let plane = w * h;
    let mut layout = Layout::new(spec.seed);
    let input = layout.alloc(c * plane * e);
    let output = layout.alloc(c * plane * e);
    let half = win / 2;
    let reloads = repeats(spec.lds(), win) - 1;
    let mut b = TraceBuilder::new(meta(spec));
    for wg in 0..plane.div_ceil(WAVEFRONT_LANES) {
        let cu = cu_for(spec, wg);
        let off = wg * WAVEFRONT_LANES * e;
        let bytes = (plane - wg * WAVEFRONT_LANES).min(WAVEFRONT_LANES) * e;
        let chan = |ch: u64| input + ch * plane * e + off;
        for ch in 0..half.min(c) {
            emit_range(&mut b, spec.kind.pc(0), chan(ch), bytes, AccessKind::Load, cu);
        }
        for ch in 0..c {
            if ch + half < c {
                emit_range(&mut b, spec.kind.pc(0), chan(ch + half), bytes, AccessKind::Load, cu);
            }
            let lo = ch.saturating_sub(half);
            let hi = (ch + half).min(c - 1);
            for nb in (lo..=hi).filter(|&x| x != ch + half).take(reloads as usize) {
                emit_range(&mut b, spec.kind.pc(1), chan(nb), bytes, AccessKind::Load, cu);
            }
            emit_range(&mut b, spec.kind.pc(2), output + ch * plane * e + off, bytes, AccessKind::Store, cu);
        }
    }
    b.marker(MarkerScope::SystemScope);
    Ok(b.finish())
}

/// Row softmax with three passes over each row (max, sum, normalize). Pass 2
/// and 3 reloads are dropped as the LDS filter approaches 1.
fn gen_softmax(spec: &LayerSpec) -> Trace {
    let (rows, cols, e) = (spec.dims[0], spec.dims[1], spec.e());
    let mut layout = Layout::new(spec.seed);
    let input = layout.alloc(rows * cols * e);
    let output = layout.alloc(rows * cols * e);
    let reload_passes = repeats(spec.lds(), 3) - 1;
    let mut b = TraceBuilder::new(meta(spec));
    for r in 0..rows {
        let cu = cu_for(spec, r);
        let x = input + r * cols * e;
        let y = output + r * cols * e;
        emit_range(&mut b, spec.kind.pc(0), x, cols * e, AccessKind::Load, cu);
        if reload_passes == 2 {
            emit_range(&mut b, spec.kind.pc(1), x, cols * e, AccessKind::Load, cu);
        }
        let end = x + cols * e;
        let mut a = x;
        while a < end {
            let next = (line_of(a) + LINE_BYTES).min(end);
            if reload_passes >= 1 {
                b.load(spec.kind.pc(2), a, (next - a) as u8, cu);
            }
            b.store(spec.kind.pc(3), y + (a - x), (next - a) as u8, cu);
            a = next;
        }
    }
    b.marker(MarkerScope::SystemScope);
    b.finish()
}

pub fn gen_streaming_spec(n: u64) -> LayerSpec {
    LayerSpec::new(LayerKind::Streaming, &[n])
}

/// Parameters for [`gen_random`].
#[derive(Clone, Debug)]
pub struct RandomSpec {
    pub accesses: usize,
    pub num_cus: u16,
    pub footprint_lines: u64,
    pub store_fraction: f64,
    pub kernels: u32,
    pub distinct_pcs: u64,
    pub seed: u64,
    /// Scope of the final marker; `None` ends the trace without one.
    pub final_scope: Option<MarkerScope>,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            accesses: 10_000,
            num_cus: 8,
            footprint_lines: 2048,
            store_fraction: 0.3,
            kernels: 4,
            distinct_pcs: 16,
            seed: 0,
            final_scope: Some(MarkerScope::SystemScope),
        }
    }
}

/// Random mixed trace. Stores are data-race free: a line is only ever stored by
/// the CU with `line_index % num_cus == cu`, so the final memory image does not
/// depend on timing.
pub fn gen_random(spec: &RandomSpec) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = TraceBuilder::new(TraceMeta {
        generator: "gen_random".into(),
        params: format!(
            "accesses={} cus={} lines={} stores={} kernels={}",
            spec.accesses, spec.num_cus, spec.footprint_lines, spec.store_fraction, spec.kernels
        ),
        seed: spec.seed,
    });
    let base = 0x2000_0000u64;
    let kernels = spec.kernels.max(1) as usize;
    let sizes = [4u8, 8, 16, 32, 64];
    for i in 0..spec.accesses {
        if i > 0 && i % spec.accesses.div_ceil(kernels) == 0 {
            b.marker(MarkerScope::Kernel);
        }
        let cu = rng.gen_range(0..spec.num_cus) as u8;
        let pc = 0x1000 + rng.gen_range(0..spec.distinct_pcs.max(1)) * 8;
        let size = sizes[rng.gen_range(0..sizes.len())];
        let off = rng.gen_range(0..LINE_BYTES / size as u64) * size as u64;
        if rng.gen_bool(spec.store_fraction) {
            let slots = spec.footprint_lines.div_ceil(spec.num_cus as u64).max(1);
            let line = rng.gen_range(0..slots) * spec.num_cus as u64 + cu as u64;
            b.store(pc, base + line * LINE_BYTES + off, size, cu);
        } else {
            let line = rng.gen_range(0..spec.footprint_lines);
            b.load(pc, base + line * LINE_BYTES + off, size, cu);
        }
    }
    if let Some(scope) = spec.final_scope {
        b.marker(scope);
    }
    b.finish()
}

/// Every CU loads `lines_per_round` distinct lines that all index one L1 set,
/// for `rounds` rounds, each round a separate kernel. With a 16-way L1 the 17th
/// outstanding line finds every way of the set Busy. CU `c` uses set
/// `c % l1_sets`, which also spreads CUs over L2 banks.
pub fn gen_set_contention(num_cus: u16, lines_per_round: u64, rounds: u64, l1_sets: u64) -> Trace {
    let mut b = TraceBuilder::new(TraceMeta {
        generator: "gen_set_contention".into(),
        params: format!("cus={num_cus} lines={lines_per_round} rounds={rounds} sets={l1_sets}"),
        seed: 0,
    });
    let stride = l1_sets * LINE_BYTES;
    for round in 0..rounds {
        for cu in 0..num_cus as u64 {
            let base = 0x3000_0000 + (round * num_cus as u64 + cu) * lines_per_round * stride + (cu % l1_sets) * LINE_BYTES;
            for i in 0..lines_per_round {
                b.load(0x2000 + 8 * cu, base + i * stride, LINE_BYTES as u8, cu as u8);
            }
        }
        b.marker(if round + 1 == rounds { MarkerScope::SystemScope } else { MarkerScope::Kernel });
    }
    b.finish()
}

/// Whole-line stores scattered over many DRAM rows: `lines_per_row` lines in
/// each of `rows` rows (lines of one row are `row_stride` bytes apart), visited
/// in a seeded random order. Each line is stored exactly once.
pub fn gen_scattered_stores(rows: u64, lines_per_row: u64, row_stride: u64, num_cus: u16, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row_span = row_stride * 32;
    let mut lines: Vec<u64> = (0..rows)
        .flat_map(|r| (0..lines_per_row).map(move |i| 0x4000_0000 + r * row_span + i * row_stride))
        .collect();
    for i in (1..lines.len()).rev() {
        let j = rng.gen_range(0..=i);
        lines.swap(i, j);
    }
    let mut b = TraceBuilder::new(TraceMeta {
        generator: "gen_scattered_stores".into(),
        params: format!("rows={rows} lines_per_row={lines_per_row} stride={row_stride}"),
        seed,
    });
    for (i, &l) in lines.iter().enumerate() {
        b.store(0x3000, l, LINE_BYTES as u8, (i % num_cus as usize) as u8);
    }
    b.marker(MarkerScope::SystemScope);
    b.finish()
}

/// Each CU stores element-sized values over its own lines, touching every
/// line `multiplicity` times, with the sweep repeated line by line.
pub fn gen_repeated_stores(num_cus: u16, lines_per_cu: u64, multiplicity: u64) -> Trace {
    let mut b = TraceBuilder::new(TraceMeta {
        generator: "gen_repeated_stores".into(),
        params: format!("cus={num_cus} lines={lines_per_cu} multiplicity={multiplicity}"),
        seed: 0,
    });
    let per_store = LINE_BYTES / multiplicity.clamp(1, 16);
    for i in 0..lines_per_cu {
        for cu in 0..num_cus as u64 {
            let line = 0x5000_0000 + (i * num_cus as u64 + cu) * LINE_BYTES;
            for m in 0..multiplicity {
                let off = (m * per_store) % LINE_BYTES;
                b.store(0x4000, line + off, per_store as u8, cu as u8);
            }
        }
    }
    b.marker(MarkerScope::SystemScope);
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::reuse::line_references;
    use std::collections::HashMap;

    #[test]
    fn streaming_small_counts() {
        let t = generate(&LayerSpec::new(LayerKind::Streaming, &[1024]).cus(1)).unwrap();
        let refs = line_references(&t);
        assert_eq!(refs.values().filter(|r| r.loads > 0).count(), 64);
        assert_eq!(refs.values().filter(|r| r.stores > 0).count(), 64);
        assert!(refs.values().all(|r| r.loads == 1 && r.stores == 1));
    }

    #[test]
    fn zero_elements_is_empty_spec() {
        assert_eq!(generate(&gen_streaming_spec(0)), Err(GenError::EmptySpec));
        assert_eq!(
            generate(&LayerSpec::new(LayerKind::Rnn, &[128, 0])),
            Err(GenError::EmptySpec)
        );
    }

    #[test]
    fn pooling_rejects_zero_stride() {
        let spec = LayerSpec::new(LayerKind::Pooling, &[16, 16, 1, 2, 0]);
        assert!(matches!(generate(&spec), Err(GenError::InvalidSpec(_))));
        let spec = LayerSpec::new(LayerKind::Pooling, &[16, 16, 1, 0, 2]);
        assert!(matches!(generate(&spec), Err(GenError::InvalidSpec(_))));
    }

    #[test]
    fn gemm_rejects_non_dividing_tile() {
        let spec = LayerSpec::new(LayerKind::GemmTiled, &[96, 64, 64, 64]);
        assert!(matches!(generate(&spec), Err(GenError::InvalidSpec(_))));
    }

    #[test]
    fn fc_footprint_limit() {
        let mut spec = LayerSpec::new(LayerKind::FullyConnected, &[1 << 14, 1 << 14]);
        assert!(matches!(generate(&spec), Err(GenError::FootprintTooLarge { .. })));
        spec.max_footprint = u64::MAX;
        spec.dims = vec![64, 64];
        assert!(generate(&spec).is_ok());
    }

    #[test]
    fn fc_weight_lines_loaded_batch_times() {
        let spec = LayerSpec::new(LayerKind::FullyConnected, &[256, 256]).batch(8);
        let t = generate(&spec).unwrap();
        let pc = LayerKind::FullyConnected.pc(1);
        let mut counts: HashMap<u64, u64> = HashMap::new();
        for a in t.accesses().filter(|a| a.pc == pc) {
            *counts.entry(a.line()).or_default() += 1;
        }
        assert_eq!(counts.len(), 4096);
        assert!(counts.values().all(|&c| c == 8));
    }

    #[test]
    fn fc_batch_one_has_no_weight_reuse() {
        let t = generate(&LayerSpec::new(LayerKind::FullyConnected, &[128, 64])).unwrap();
        let pc = LayerKind::FullyConnected.pc(1);
        let mut seen = BTreeSet::new();
        assert!(t.accesses().filter(|a| a.pc == pc).all(|a| seen.insert(a.line())));
    }

    #[test]
    fn pooling_ratio_is_window_squared() {
        for (win, s) in [(2, 2), (3, 1), (3, 2)] {
            let t = generate(&LayerSpec::new(LayerKind::Pooling, &[32, 32, 2, win, s])).unwrap();
            let loads = t.accesses().filter(|a| !a.is_store()).count() as u64;
            let stores = t.accesses().filter(|a| a.is_store()).count() as u64;
            assert_eq!(loads, stores * win * win);
        }
    }

    #[test]
    fn gemm_single_tile_loads_once() {
        let t = generate(&LayerSpec::new(LayerKind::GemmTiled, &[32, 32, 32, 32])).unwrap();
        let refs = line_references(&t);
        assert!(refs.values().all(|r| r.loads <= 1));
    }

    #[test]
    fn gemm_b_lines_loaded_per_tile_row() {
        let t = generate(&LayerSpec::new(LayerKind::GemmTiled, &[128, 128, 128, 32])).unwrap();
        let pc = LayerKind::GemmTiled.pc(1);
        let mut counts: HashMap<u64, u64> = HashMap::new();
        for a in t.accesses().filter(|a| a.pc == pc) {
            *counts.entry(a.line()).or_default() += 1;
        }
        assert!(counts.values().all(|&c| c == 4));
    }

    #[test]
    fn rnn_structure() {
        let t = generate(&LayerSpec::new(LayerKind::Rnn, &[128, 16])).unwrap();
        assert_eq!(t.markers().count(), 16);
        assert_eq!(t.markers().last().unwrap().scope, MarkerScope::SystemScope);
        let pc = LayerKind::Rnn.pc(1);
        let mut counts: HashMap<u64, u64> = HashMap::new();
        for a in t.accesses().filter(|a| a.pc == pc) {
            *counts.entry(a.line()).or_default() += 1;
        }
        assert_eq!(counts.len(), 4096);
        assert!(counts.values().all(|&c| c == 16));
        t.validate(64).unwrap();
    }

    #[test]
    fn lds_filter_controls_softmax_reloads() {
        let full = generate(&LayerSpec::new(LayerKind::SoftmaxSmall, &[4, 64])).unwrap();
        let filtered = generate(&LayerSpec::new(LayerKind::SoftmaxSmall, &[4, 64]).lds_filter(1.0)).unwrap();
        let loads = |t: &Trace| t.accesses().filter(|a| !a.is_store()).count();
        assert_eq!(loads(&full), 3 * loads(&filtered));
    }

    #[test]
    fn lrn_reads_inputs_once_by_default() {
        let t = generate(&LayerSpec::new(LayerKind::LrnNeighbor, &[32, 32, 8, 5])).unwrap();
        assert!(line_references(&t).values().all(|r| r.loads + r.stores == 1));
        let t = generate(&LayerSpec::new(LayerKind::LrnNeighbor, &[32, 32, 8, 5]).lds_filter(0.0)).unwrap();
        assert!(line_references(&t).values().any(|r| r.loads > 1));
    }

    #[test]
    fn seeds_move_the_layout() {
        let a = generate(&gen_streaming_spec(4096).seed(1)).unwrap();
        let b = generate(&gen_streaming_spec(4096).seed(2)).unwrap();
        assert_ne!(a.entries, b.entries);
        assert_eq!(a.num_accesses(), b.num_accesses());
    }

    #[test]
    fn random_trace_stores_are_partitioned() {
        let t = gen_random(&RandomSpec::default());
        t.validate(8).unwrap();
        for a in t.accesses().filter(|a| a.is_store()) {
            assert_eq!(((a.line() - 0x2000_0000) / 64) % 8, a.cu_id as u64);
        }
    }
}
