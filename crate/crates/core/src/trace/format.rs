//! Trace file format.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! header (16 B): "MITR" | u16 version = 1 | u16 flags | u64 record count
//! record (32 B): u64 seq | u64 pc | u64 addr | u8 size | u8 kind | u8 cu_id | u8 scope | u32 kernel_id
//!                kind: 0 = Load, 1 = Store, 2 = KernelMarker; scope: 0 = Kernel, 1 = SystemScope
//! trailer      : present iff flags bit 0 is set;
//!                u32 len | generator | u32 len | params | u64 seed
//! ```
//!
//! The text form has one record per line with the same eight fields separated by
//! whitespace. `kind` may be written as `L`/`S`/`K` or numerically, integers may be
//! hex (`0x..`), and `#` starts a comment.

use std::io::{Read, Write};

use thiserror::Error;

use super::{AccessKind, KernelMarker, MarkerScope, MemAccess, Trace, TraceEntry, TraceMeta};

pub const MAGIC: [u8; 4] = *b"MITR";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 16;
pub const RECORD_BYTES: usize = 32;
const FLAG_META: u16 = 1;

const KIND_LOAD: u8 = 0;
const KIND_STORE: u8 = 1;
const KIND_MARKER: u8 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("trace parse error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: u64,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("truncated stream")]
    Truncated,
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("i/o: {0}")]
    Io(String),
}

fn err(offset: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { offset: offset as u64, kind }
}

/// Writes `trace` in the binary format and returns the number of bytes written.
pub fn write_trace<W: Write>(trace: &Trace, mut sink: W) -> std::io::Result<u64> {
    let has_meta = trace.meta != TraceMeta::default();
    let mut buf = Vec::with_capacity(HEADER_BYTES + RECORD_BYTES * trace.entries.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(if has_meta { FLAG_META } else { 0 }).to_le_bytes());
    buf.extend_from_slice(&(trace.entries.len() as u64).to_le_bytes());
    for e in &trace.entries {
        let (seq, pc, addr, size, kind, cu, scope, kernel) = match *e {
            TraceEntry::Access(a) => {
                let kind = match a.kind {
                    AccessKind::Load => KIND_LOAD,
                    AccessKind::Store => KIND_STORE,
                };
                (a.seq, a.pc, a.addr, a.size, kind, a.cu_id, 0u8, a.kernel_id)
            }
            TraceEntry::Marker(m) => {
                let scope = match m.scope {
                    MarkerScope::Kernel => 0,
                    MarkerScope::SystemScope => 1,
                };
                (m.seq, 0, 0, 0, KIND_MARKER, 0, scope, m.kernel_id)
            }
        };
        buf.extend_from_slice(&seq.to_le_bytes());
        buf.extend_from_slice(&pc.to_le_bytes());
        buf.extend_from_slice(&addr.to_le_bytes());
        buf.extend_from_slice(&[size, kind, cu, scope]);
        buf.extend_from_slice(&kernel.to_le_bytes());
    }
    if has_meta {
        for s in [&trace.meta.generator, &trace.meta.params] {
            buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
            buf.extend_from_slice(s.as_bytes());
        }
        buf.extend_from_slice(&trace.meta.seed.to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(buf.len() as u64)
}

/// Reads a trace in either the binary or the text form.
pub fn read_trace<R: Read>(mut source: R) -> Result<Trace, ParseError> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| err(0, ParseErrorKind::Io(e.to_string())))?;
    if bytes.starts_with(&MAGIC) {
        parse_binary(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| err(e.valid_up_to(), ParseErrorKind::Malformed("invalid utf-8".into())))?;
        read_trace_text(text)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        if self.bytes.len() - self.pos < n {
            return Err(err(self.pos, ParseErrorKind::Truncated));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ParseError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ParseError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ParseError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ParseError> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| err(at, ParseErrorKind::Malformed("trailer string is not utf-8".into())))
    }
}

fn parse_binary(bytes: &[u8]) -> Result<Trace, ParseError> {
    let mut c = Cursor { bytes, pos: 0 };
    c.take(4)?;
    let version = c.u16()?;
    if version != VERSION {
        return Err(err(4, ParseErrorKind::Version(version)));
    }
    let flags = c.u16()?;
    if flags & !FLAG_META != 0 {
        return Err(err(6, ParseErrorKind::Malformed(format!("unknown flags {flags:#x}"))));
    }
    let count = c.u64()?;
    let available = (bytes.len() - HEADER_BYTES) / RECORD_BYTES;
    if count > available as u64 {
        return Err(err(HEADER_BYTES + available * RECORD_BYTES, ParseErrorKind::Truncated));
    }
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = c.pos;
        let seq = c.u64()?;
        let pc = c.u64()?;
        let addr = c.u64()?;
        let [size, kind, cu_id, scope] = <[u8; 4]>::try_from(c.take(4)?).unwrap();
        let kernel_id = c.u32()?;
        entries.push(decode(at, seq, pc, addr, size, kind, cu_id, scope, kernel_id)?);
    }
    let mut meta = TraceMeta::default();
    if flags & FLAG_META != 0 {
        meta.generator = c.string()?;
        meta.params = c.string()?;
        meta.seed = c.u64()?;
    }
    if c.pos != bytes.len() {
        return Err(err(c.pos, ParseErrorKind::Malformed("trailing bytes".into())));
    }
    Ok(Trace { entries, meta })
}

#[allow(clippy::too_many_arguments)]
fn decode(
    at: usize,
    seq: u64,
    pc: u64,
    addr: u64,
    size: u8,
    kind: u8,
    cu_id: u8,
    scope: u8,
    kernel_id: u32,
) -> Result<TraceEntry, ParseError> {
    let access = |kind| {
        if scope != 0 {
            return Err(err(at, ParseErrorKind::Malformed("scope set on an access".into())));
        }
        Ok(TraceEntry::Access(MemAccess { seq, pc, addr, size, kind, cu_id, kernel_id }))
    };
    match kind {
        KIND_LOAD => access(AccessKind::Load),
        KIND_STORE => access(AccessKind::Store),
        KIND_MARKER => {
            let scope = match scope {
                0 => MarkerScope::Kernel,
                1 => MarkerScope::SystemScope,
                s => return Err(err(at, ParseErrorKind::Malformed(format!("bad scope {s}")))),
            };
            Ok(TraceEntry::Marker(KernelMarker { seq, kernel_id, scope }))
        }
        k => Err(err(at, ParseErrorKind::Malformed(format!("bad kind {k}")))),
    }
}

fn parse_int(tok: &str) -> Option<u64> {
    match tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => tok.parse().ok(),
    }
}

/// Parses the line-oriented text form.
pub fn read_trace_text(text: &str) -> Result<Trace, ParseError> {
    let mut entries = Vec::new();
    let mut offset = 0usize;
    for raw in text.split_inclusive('\n') {
        let at = offset;
        offset += raw.len();
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 8 {
            return Err(err(
                at,
                ParseErrorKind::Malformed(format!("expected 8 fields, found {}", toks.len())),
            ));
        }
        let num = |i: usize| {
            parse_int(toks[i])
                .ok_or_else(|| err(at, ParseErrorKind::Malformed(format!("bad integer {:?}", toks[i]))))
        };
        let narrow = |i: usize, max: u64| {
            num(i).and_then(|v| {
                if v <= max {
                    Ok(v)
                } else {
                    Err(err(at, ParseErrorKind::Malformed(format!("field {} out of range", i + 1))))
                }
            })
        };
        let kind = match toks[4] {
            "L" | "l" => KIND_LOAD,
            "S" | "s" => KIND_STORE,
            "K" | "k" => KIND_MARKER,
            _ => narrow(4, 255)? as u8,
        };
        entries.push(decode(
            at,
            num(0)?,
            num(1)?,
            num(2)?,
            narrow(3, 255)? as u8,
            kind,
            narrow(5, 255)? as u8,
            narrow(6, 255)? as u8,
            narrow(7, u32::MAX as u64)? as u32,
        )?);
    }
    Ok(Trace { entries, meta: TraceMeta::default() })
}

/// Writes the text form (metadata becomes a leading comment).
pub fn write_trace_text<W: Write>(trace: &Trace, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "# seq pc addr size kind cu scope kernel")?;
    if trace.meta != TraceMeta::default() {
        writeln!(
            sink,
            "# generator={} params={} seed={}",
            trace.meta.generator, trace.meta.params, trace.meta.seed
        )?;
    }
    for e in &trace.entries {
        match e {
            TraceEntry::Access(a) => {
                let k = if a.is_store() { 'S' } else { 'L' };
                writeln!(
                    sink,
                    "{} {:#x} {:#x} {} {} {} 0 {}",
                    a.seq, a.pc, a.addr, a.size, k, a.cu_id, a.kernel_id
                )?;
            }
            TraceEntry::Marker(m) => {
                let s = u8::from(m.scope == MarkerScope::SystemScope);
                writeln!(sink, "{} 0 0 0 K 0 {} {}", m.seq, s, m.kernel_id)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceBuilder;

    const FIXTURE: &str = "\
# three records
0 0x400 0x1000 64 L 3 0 0
1 0x408 0x1040 4 S 3 0 0   # a store
2 0 0 0 K 0 1 0
";

    #[test]
    fn text_fixture_parses() {
        let t = read_trace(FIXTURE.as_bytes()).unwrap();
        assert_eq!(t.entries.len(), 3);
        assert_eq!(
            t.entries[0],
            TraceEntry::Access(MemAccess {
                seq: 0,
                pc: 0x400,
                addr: 0x1000,
                size: 64,
                kind: AccessKind::Load,
                cu_id: 3,
                kernel_id: 0
            })
        );
        assert_eq!(
            t.entries[1],
            TraceEntry::Access(MemAccess {
                seq: 1,
                pc: 0x408,
                addr: 0x1040,
                size: 4,
                kind: AccessKind::Store,
                cu_id: 3,
                kernel_id: 0
            })
        );
        assert_eq!(
            t.entries[2],
            TraceEntry::Marker(KernelMarker { seq: 2, kernel_id: 0, scope: MarkerScope::SystemScope })
        );
    }

    #[test]
    fn empty_trace_is_header_only() {
        let t = Trace::default();
        let mut buf = Vec::new();
        assert_eq!(write_trace(&t, &mut buf).unwrap(), HEADER_BYTES as u64);
        assert_eq!(&buf[..4], b"MITR");
        assert_eq!(read_trace(&buf[..]).unwrap(), t);
    }

    #[test]
    fn binary_round_trip_with_meta() {
        let mut b = TraceBuilder::new(TraceMeta { generator: "x".into(), params: "n=3".into(), seed: 9 });
        b.load(7, 0x40, 64, 1);
        b.marker(MarkerScope::SystemScope);
        let t = b.finish();
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        assert_eq!(read_trace(&buf[..]).unwrap(), t);
    }

    #[test]
    fn version_mismatch_reports_offset() {
        let mut buf = Vec::new();
        write_trace(&Trace::default(), &mut buf).unwrap();
        buf[4] = 2;
        let e = read_trace(&buf[..]).unwrap_err();
        assert_eq!(e, ParseError { offset: 4, kind: ParseErrorKind::Version(2) });
    }

    #[test]
    fn truncated_record_reports_offset() {
        let mut b = TraceBuilder::new(TraceMeta::default());
        b.load(0, 0, 64, 0);
        b.load(0, 64, 64, 0);
        let mut buf = Vec::new();
        write_trace(&b.finish(), &mut buf).unwrap();
        buf.truncate(HEADER_BYTES + RECORD_BYTES + 5);
        let e = read_trace(&buf[..]).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Truncated);
        assert_eq!(e.offset, (HEADER_BYTES + RECORD_BYTES) as u64);
    }

    #[test]
    fn malformed_kind_reports_record_offset() {
        let mut b = TraceBuilder::new(TraceMeta::default());
        b.load(0, 0, 64, 0);
        let mut buf = Vec::new();
        write_trace(&b.finish(), &mut buf).unwrap();
        buf[HEADER_BYTES + 25] = 9;
        let e = read_trace(&buf[..]).unwrap_err();
        assert_eq!(e.offset, HEADER_BYTES as u64);
        assert!(matches!(e.kind, ParseErrorKind::Malformed(_)));
    }

    #[test]
    fn malformed_text_line_reports_line_offset() {
        let text = "0 0 0 64 L 0 0 0\n1 0 zz 64 L 0 0 0\n";
        let e = read_trace(text.as_bytes()).unwrap_err();
        assert_eq!(e.offset, 17);
    }

    #[test]
    fn text_writer_round_trips_entries() {
        let t = read_trace(FIXTURE.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_trace_text(&t, &mut out).unwrap();
        assert_eq!(read_trace(&out[..]).unwrap(), t);
    }
}
