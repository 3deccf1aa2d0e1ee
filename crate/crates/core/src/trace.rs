//! CSI trace types and the `.csi.jsonl` trace format.
//!
//! A trace file is JSON Lines: one header object followed by one object per
//! packet.
//!
//! ```text
//! {"type":"header","trace_id":"t0","n_links":2,"n_subcarriers":30,"rate_hz":100}
//! {"t_us":0,"csi":[[[re,im],...],[[re,im],...]]}
//! ```
//!
//! Numbers are written in shortest round-trip exponent form, so
//! `parse_trace(write_trace(t)) == t` bit for bit.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("missing or invalid header line")]
    MissingHeader,
    #[error("line {line}: malformed packet: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: timestamp {t_us} does not follow {prev_us}")]
    NonMonotonicTimestamp { line: usize, prev_us: i64, t_us: i64 },
    #[error("line {line}: expected {expected_links}x{expected_subcarriers} samples, found {found}")]
    DimensionMismatch {
        line: usize,
        expected_links: usize,
        expected_subcarriers: usize,
        found: String,
    },
    #[error("invalid trace metadata: {0}")]
    InvalidMeta(String),
}

/// One complex channel coefficient for a link and subcarrier.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CsiSample {
    pub re: f64,
    pub im: f64,
}

impl CsiSample {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    pub fn amplitude(&self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn phase(&self) -> f64 {
        self.im.atan2(self.re)
    }
}

impl From<Complex64> for CsiSample {
    fn from(c: Complex64) -> Self {
        Self { re: c.re, im: c.im }
    }
}

impl From<CsiSample> for Complex64 {
    fn from(s: CsiSample) -> Self {
        Complex64::new(s.re, s.im)
    }
}

/// Amplitude and phase (radians, `(-pi, pi]`) of a sample.
pub fn to_polar(s: CsiSample) -> (f64, f64) {
    let phase = s.phase();
    // atan2 returns -pi for (negative, -0.0); fold it onto +pi.
    let phase = if phase == -PI { PI } else { phase };
    (s.amplitude(), phase)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub trace_id: String,
    pub n_links: usize,
    pub n_subcarriers: usize,
    pub nominal_rate_hz: f64,
}

impl Default for TraceMeta {
    fn default() -> Self {
        Self {
            trace_id: String::new(),
            n_links: 2,
            n_subcarriers: 30,
            nominal_rate_hz: 100.0,
        }
    }
}

impl TraceMeta {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.n_links < 2 {
            return Err(TraceError::InvalidMeta(format!(
                "n_links must be >= 2, got {}",
                self.n_links
            )));
        }
        if self.n_subcarriers < 2 {
            return Err(TraceError::InvalidMeta(format!(
                "n_subcarriers must be >= 2, got {}",
                self.n_subcarriers
            )));
        }
        if !(self.nominal_rate_hz.is_finite() && self.nominal_rate_hz > 0.0) {
            return Err(TraceError::InvalidMeta(format!(
                "rate_hz must be positive, got {}",
                self.nominal_rate_hz
            )));
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.n_links * self.n_subcarriers
    }
}

/// A packet's samples are stored link-major: `samples[link * n_subcarriers + subcarrier]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiPacket {
    pub t_us: i64,
    pub samples: Vec<CsiSample>,
}

impl CsiPacket {
    pub fn sample(&self, n_subcarriers: usize, link: usize, subcarrier: usize) -> CsiSample {
        self.samples[link * n_subcarriers + subcarrier]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiTrace {
    pub meta: TraceMeta,
    pub packets: Vec<CsiPacket>,
}

impl CsiTrace {
    /// Builds a trace, checking every invariant.
    pub fn new(meta: TraceMeta, packets: Vec<CsiPacket>) -> Result<Self, TraceError> {
        meta.validate()?;
        let mut prev: Option<i64> = None;
        for (i, p) in packets.iter().enumerate() {
            let line = i + 2;
            if p.t_us < 0 {
                return Err(TraceError::MalformedLine {
                    line,
                    reason: format!("negative timestamp {}", p.t_us),
                });
            }
            if let Some(prev_us) = prev {
                if p.t_us <= prev_us {
                    return Err(TraceError::NonMonotonicTimestamp {
                        line,
                        prev_us,
                        t_us: p.t_us,
                    });
                }
            }
            if p.samples.len() != meta.n_channels() {
                return Err(TraceError::DimensionMismatch {
                    line,
                    expected_links: meta.n_links,
                    expected_subcarriers: meta.n_subcarriers,
                    found: format!("{} samples", p.samples.len()),
                });
            }
            if let Some(bad) = p.samples.iter().find(|s| !s.is_finite()) {
                return Err(TraceError::MalformedLine {
                    line,
                    reason: format!("non-finite sample {bad:?}"),
                });
            }
            prev = Some(p.t_us);
        }
        Ok(Self { meta, packets })
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn start_us(&self) -> Option<i64> {
        self.packets.first().map(|p| p.t_us)
    }

    pub fn end_us(&self) -> Option<i64> {
        self.packets.last().map(|p| p.t_us)
    }

    /// Applies `f` to every sample, keeping timestamps and metadata.
    pub fn map_samples(&self, f: impl Fn(CsiSample) -> CsiSample) -> CsiTrace {
        let packets = self
            .packets
            .iter()
            .map(|p| CsiPacket {
                t_us: p.t_us,
                samples: p.samples.iter().map(|&s| f(s)).collect(),
            })
            .collect();
        CsiTrace {
            meta: self.meta.clone(),
            packets,
        }
    }
}

#[derive(Deserialize)]
struct HeaderLine {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    trace_id: String,
    n_links: usize,
    n_subcarriers: usize,
    rate_hz: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PacketLine {
    t_us: i64,
    csi: Vec<Vec<[f64; 2]>>,
}

/// Parses and validates a `.csi.jsonl` trace.
pub fn parse_trace(bytes: &[u8]) -> Result<CsiTrace, TraceError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TraceError::MalformedLine {
        line: 0,
        reason: format!("invalid UTF-8: {e}"),
    })?;
    let mut lines = text
        .split('\n')
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());

    let (_, header_line) = lines.next().ok_or(TraceError::MissingHeader)?;
    let header: HeaderLine =
        serde_json::from_str(header_line).map_err(|_| TraceError::MissingHeader)?;
    if header.kind != "header" {
        return Err(TraceError::MissingHeader);
    }
    let meta = TraceMeta {
        trace_id: header.trace_id,
        n_links: header.n_links,
        n_subcarriers: header.n_subcarriers,
        nominal_rate_hz: header.rate_hz,
    };
    meta.validate()?;

    let mut packets = Vec::new();
    let mut prev: Option<i64> = None;
    for (idx, raw) in lines {
        let line = idx + 1;
        let pkt: PacketLine = serde_json::from_str(raw).map_err(|e| TraceError::MalformedLine {
            line,
            reason: e.to_string(),
        })?;
        if pkt.t_us < 0 {
            return Err(TraceError::MalformedLine {
                line,
                reason: format!("negative timestamp {}", pkt.t_us),
            });
        }
        if let Some(prev_us) = prev {
            if pkt.t_us <= prev_us {
                return Err(TraceError::NonMonotonicTimestamp {
                    line,
                    prev_us,
                    t_us: pkt.t_us,
                });
            }
        }
        prev = Some(pkt.t_us);
        if pkt.csi.len() != meta.n_links
            || pkt.csi.iter().any(|l| l.len() != meta.n_subcarriers)
        {
            let shape: Vec<usize> = pkt.csi.iter().map(Vec::len).collect();
            return Err(TraceError::DimensionMismatch {
                line,
                expected_links: meta.n_links,
                expected_subcarriers: meta.n_subcarriers,
                found: format!("{shape:?}"),
            });
        }
        let samples = pkt
            .csi
            .into_iter()
            .flatten()
            .map(|[re, im]| CsiSample { re, im })
            .collect();
        packets.push(CsiPacket {
            t_us: pkt.t_us,
            samples,
        });
    }
    Ok(CsiTrace { meta, packets })
}

fn push_f64(out: &mut String, v: f64) {
    // `{:e}` is the shortest representation that parses back to the same bits.
    let _ = write!(out, "{v:e}");
}

pub fn write_header(meta: &TraceMeta) -> String {
    let mut out = String::from("{\"type\":\"header\",\"trace_id\":");
    out.push_str(&serde_json::to_string(&meta.trace_id).expect("string serializes"));
    let _ = write!(
        out,
        ",\"n_links\":{},\"n_subcarriers\":{},\"rate_hz\":",
        meta.n_links, meta.n_subcarriers
    );
    push_f64(&mut out, meta.nominal_rate_hz);
    out.push_str("}\n");
    out
}

pub fn write_packet(meta: &TraceMeta, packet: &CsiPacket, out: &mut String) {
    let _ = write!(out, "{{\"t_us\":{},\"csi\":[", packet.t_us);
    for link in 0..meta.n_links {
        if link > 0 {
            out.push(',');
        }
        out.push('[');
        for sc in 0..meta.n_subcarriers {
            if sc > 0 {
                out.push(',');
            }
            let s = packet.sample(meta.n_subcarriers, link, sc);
            out.push('[');
            push_f64(out, s.re);
            out.push(',');
            push_f64(out, s.im);
            out.push(']');
        }
        out.push(']');
    }
    out.push_str("]}\n");
}

/// Serializes a trace to `.csi.jsonl` bytes.
pub fn write_trace(trace: &CsiTrace) -> Vec<u8> {
    let mut out = write_header(&trace.meta);
    for p in &trace.packets {
        write_packet(&trace.meta, p, &mut out);
    }
    out.into_bytes()
}
