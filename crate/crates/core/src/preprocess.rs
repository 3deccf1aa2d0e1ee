//! Uniform resampling and low-pass filtering of CSI streams.

use std::f64::consts::PI;

use thiserror::Error;

use crate::trace::{CsiPacket, CsiSample, CsiTrace, TraceMeta};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("need at least 2 packets to interpolate, got {0}")]
    TooFewPackets(usize),
    #[error("invalid target rate {0} Hz")]
    InvalidRate(f64),
    #[error("cutoff {cutoff_hz} Hz must be positive and below Nyquist ({nyquist_hz} Hz)")]
    InvalidCutoff { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("filter order must be >= 1")]
    InvalidOrder,
}

/// A real series sampled on the grid `t0_us + k / rate_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    pub rate_hz: f64,
    pub t0_us: i64,
    pub values: Vec<f64>,
}

impl UniformSeries {
    pub fn new(rate_hz: f64, t0_us: i64, values: Vec<f64>) -> Self {
        Self {
            rate_hz,
            t0_us,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_us(&self, k: usize) -> i64 {
        grid_time_us(self.t0_us, self.rate_hz, k)
    }
}

/// Timestamp of grid point `k`, rounded to whole microseconds.
pub fn grid_time_us(t0_us: i64, rate_hz: f64, k: usize) -> i64 {
    t0_us + (k as f64 * 1e6 / rate_hz).round() as i64
}

/// Converts a duration to a whole number of samples at `rate_hz`.
pub fn ms_to_samples(ms: f64, rate_hz: f64) -> usize {
    (ms * rate_hz / 1000.0).round().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            cutoff_hz: 10.0,
            order: 2,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, rate_hz: f64) -> Result<(), PreprocessError> {
        let nyquist_hz = rate_hz / 2.0;
        if self.order == 0 {
            return Err(PreprocessError::InvalidOrder);
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist_hz) {
            return Err(PreprocessError::InvalidCutoff {
                cutoff_hz: self.cutoff_hz,
                nyquist_hz,
            });
        }
        Ok(())
    }

    /// Magnitude response of the discretized filter at `freq_hz`:
    /// the Butterworth response on the bilinear-warped frequency axis.
    pub fn magnitude_at(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        let warped = (PI * freq_hz / rate_hz).tan() / (PI * self.cutoff_hz / rate_hz).tan();
        1.0 / (1.0 + warped.powi(2 * self.order as i32)).sqrt()
    }
}

/// One second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    pub fn coefficients(&self) -> ([f64; 3], [f64; 2]) {
        ([self.b0, self.b1, self.b2], [self.a1, self.a2])
    }
}

/// Butterworth low-pass designed by the bilinear transform with a prewarped
/// cutoff. Odd orders end with a first-order section (b2 = a2 = 0).
pub fn butterworth_sections(spec: &FilterSpec, rate_hz: f64) -> Result<Vec<Biquad>, PreprocessError> {
    spec.validate(rate_hz)?;
    let k = (PI * spec.cutoff_hz / rate_hz).tan();
    let n = spec.order;
    let mut sections = Vec::with_capacity(n.div_ceil(2));
    for pair in 0..n / 2 {
        let q = 1.0 / (2.0 * (PI * (n - 1 - 2 * pair) as f64 / (2 * n) as f64).cos());
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        sections.push(Biquad {
            b0,
            b1: 2.0 * b0,
            b2: b0,
            a1: 2.0 * (k * k - 1.0) * norm,
            a2: (1.0 - k / q + k * k) * norm,
        });
    }
    if n % 2 == 1 {
        let norm = 1.0 / (1.0 + k);
        sections.push(Biquad {
            b0: k * norm,
            b1: k * norm,
            b2: 0.0,
            a1: (k - 1.0) * norm,
            a2: 0.0,
        });
    }
    Ok(sections)
}

#[derive(Debug, Clone, Copy, Default)]
struct SectionState {
    s1: f64,
    s2: f64,
}

/// Streaming state of a biquad cascade for one channel.
///
/// The first input primes every section to its steady state for that value,
/// so a constant input passes through unchanged from the first sample.
#[derive(Debug, Clone)]
pub struct LowpassState {
    sections: Vec<Biquad>,
    state: Vec<SectionState>,
    primed: bool,
}

impl LowpassState {
    pub fn new(sections: Vec<Biquad>) -> Self {
        let state = vec![SectionState::default(); sections.len()];
        Self {
            sections,
            state,
            primed: false,
        }
    }

    pub fn design(spec: &FilterSpec, rate_hz: f64) -> Result<Self, PreprocessError> {
        Ok(Self::new(butterworth_sections(spec, rate_hz)?))
    }

    fn prime(&mut self, x: f64) {
        for (sec, st) in self.sections.iter().zip(self.state.iter_mut()) {
            st.s2 = (sec.b2 - sec.a2) * x;
            st.s1 = (sec.b1 - sec.a1) * x + st.s2;
        }
        self.primed = true;
    }

    pub fn process(&mut self, x: f64) -> f64 {
        if !self.primed {
            self.prime(x);
        }
        let mut v = x;
        for (sec, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = sec.b0 * v + st.s1;
            st.s1 = sec.b1 * v - sec.a1 * y + st.s2;
            st.s2 = sec.b2 * v - sec.a2 * y;
            v = y;
        }
        v
    }
}

/// Causal single-pass low-pass filter; output length equals input length.
pub fn lowpass(series: &UniformSeries, spec: &FilterSpec) -> Result<UniformSeries, PreprocessError> {
    let mut state = LowpassState::design(spec, series.rate_hz)?;
    let values = series.values.iter().map(|&x| state.process(x)).collect();
    Ok(UniformSeries {
        rate_hz: series.rate_hz,
        t0_us: series.t0_us,
        values,
    })
}

/// Linear interpolation between two samples at fraction `w` in `[0, 1]`.
#[inline]
pub fn lerp_sample(a: CsiSample, b: CsiSample, w: f64) -> CsiSample {
    CsiSample {
        re: a.re + w * (b.re - a.re),
        im: a.im + w * (b.im - a.im),
    }
}

/// Interpolates the packet at `t_us` from its bracketing packets.
/// Grid points that coincide with an input packet copy it exactly.
pub fn interpolate_at(prev: &CsiPacket, next: &CsiPacket, t_us: i64) -> CsiPacket {
    if t_us == prev.t_us {
        return prev.clone();
    }
    if t_us == next.t_us {
        return CsiPacket {
            t_us,
            samples: next.samples.clone(),
        };
    }
    let w = (t_us - prev.t_us) as f64 / (next.t_us - prev.t_us) as f64;
    CsiPacket {
        t_us,
        samples: prev
            .samples
            .iter()
            .zip(&next.samples)
            .map(|(&a, &b)| lerp_sample(a, b, w))
            .collect(),
    }
}

/// Resamples a trace onto the uniform grid spanning its first to last timestamp.
/// Real and imaginary parts are interpolated independently; no extrapolation.
pub fn interpolate_uniform(trace: &CsiTrace, target_rate_hz: f64) -> Result<CsiTrace, PreprocessError> {
    if !(target_rate_hz.is_finite() && target_rate_hz > 0.0) {
        return Err(PreprocessError::InvalidRate(target_rate_hz));
    }
    let n = trace.packets.len();
    if n < 2 {
        return Err(PreprocessError::TooFewPackets(n));
    }
    let t0 = trace.packets[0].t_us;
    let t_last = trace.packets[n - 1].t_us;
    let mut out = Vec::new();
    let mut seg = 0;
    for k in 0.. {
        let t = grid_time_us(t0, target_rate_hz, k);
        if t > t_last {
            break;
        }
        while seg + 2 < n && trace.packets[seg + 1].t_us <= t {
            seg += 1;
        }
        out.push(interpolate_at(&trace.packets[seg], &trace.packets[seg + 1], t));
    }
    Ok(CsiTrace {
        meta: TraceMeta {
            nominal_rate_hz: target_rate_hz,
            ..trace.meta.clone()
        },
        packets: out,
    })
}

/// Low-pass filters every real and imaginary channel of a uniform trace.
pub fn lowpass_trace(trace: &CsiTrace, spec: &FilterSpec) -> Result<CsiTrace, PreprocessError> {
    let rate = trace.meta.nominal_rate_hz;
    let mut filters = TraceFilter::new(trace.meta.n_channels(), spec, rate)?;
    let packets = trace
        .packets
        .iter()
        .map(|p| filters.process(p))
        .collect();
    Ok(CsiTrace {
        meta: trace.meta.clone(),
        packets,
    })
}

/// Per-channel filter bank used by both batch and streaming preprocessing.
#[derive(Debug, Clone)]
pub struct TraceFilter {
    re: Vec<LowpassState>,
    im: Vec<LowpassState>,
}

impl TraceFilter {
    pub fn new(n_channels: usize, spec: &FilterSpec, rate_hz: f64) -> Result<Self, PreprocessError> {
        let proto = LowpassState::design(spec, rate_hz)?;
        Ok(Self {
            re: vec![proto.clone(); n_channels],
            im: vec![proto; n_channels],
        })
    }

    pub fn process(&mut self, packet: &CsiPacket) -> CsiPacket {
        let samples = packet
            .samples
            .iter()
            .enumerate()
            .map(|(c, s)| CsiSample {
                re: self.re[c].process(s.re),
                im: self.im[c].process(s.im),
            })
            .collect();
        CsiPacket {
            t_us: packet.t_us,
            samples,
        }
    }
}

/// Interpolation followed by low-pass filtering.
pub fn preprocess_trace(
    trace: &CsiTrace,
    target_rate_hz: f64,
    spec: &FilterSpec,
) -> Result<CsiTrace, PreprocessError> {
    let uniform = interpolate_uniform(trace, target_rate_hz)?;
    lowpass_trace(&uniform, spec)
}
