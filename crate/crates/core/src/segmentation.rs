//! Activity segmentation from antenna-pair phase-difference variance.
//!
//! The segmentation signal is the log10 of the sliding population variance
//! of the inter-antenna phase difference, averaged over a set of subcarriers.
//! A sample is *stable* when the mean of that signal over the following
//! stable window is at or below the calibrated threshold `delta`. An activity
//! endpoint is the first sample of a stable run that follows enough
//! fluctuation; the activity window is the fixed span ending there.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::features::{select_subcarriers, unwrap_phase};
use crate::preprocess::{grid_time_us, ms_to_samples, preprocess_trace, PreprocessError, UniformSeries};
use crate::trace::{to_polar, CsiPacket, CsiTrace};

/// Variance floor before taking log10.
pub const VAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("link index {0} out of range")]
    BadLinkIndex(usize),
    #[error("subcarrier index {0} out of range")]
    BadSubcarrierIndex(usize),
    #[error("variance window must span at least 2 samples, got {0}")]
    WindowTooShort(usize),
    #[error("calibration trace too short: {have_ms} ms, need {need_ms} ms")]
    TraceTooShort { have_ms: f64, need_ms: f64 },
    #[error("end timestamp {0} us lies outside the trace")]
    EndOutOfRange(i64),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Phase difference between two links of the same packet and subcarrier.
#[inline]
pub fn packet_phase_difference(
    packet: &CsiPacket,
    n_subcarriers: usize,
    link_a: usize,
    link_b: usize,
    subcarrier: usize,
) -> f64 {
    let (_, pa) = to_polar(packet.sample(n_subcarriers, link_a, subcarrier));
    let (_, pb) = to_polar(packet.sample(n_subcarriers, link_b, subcarrier));
    wrap_angle(pa - pb)
}

fn check_indices(trace: &CsiTrace, links: &[usize], subcarriers: &[usize]) -> Result<(), SegmentError> {
    if let Some(&l) = links.iter().find(|&&l| l >= trace.meta.n_links) {
        return Err(SegmentError::BadLinkIndex(l));
    }
    if let Some(&s) = subcarriers.iter().find(|&&s| s >= trace.meta.n_subcarriers) {
        return Err(SegmentError::BadSubcarrierIndex(s));
    }
    Ok(())
}

/// Per-subcarrier wrapped phase difference `theta_a - theta_b` of a uniform trace.
pub fn phase_difference_stream(
    trace: &CsiTrace,
    link_a: usize,
    link_b: usize,
    subcarriers: &[usize],
) -> Result<Vec<UniformSeries>, SegmentError> {
    if link_a == link_b {
        return Err(SegmentError::BadLinkIndex(link_b));
    }
    check_indices(trace, &[link_a, link_b], subcarriers)?;
    let n_sc = trace.meta.n_subcarriers;
    let t0 = trace.start_us().unwrap_or(0);
    Ok(subcarriers
        .iter()
        .map(|&sc| {
            UniformSeries::new(
                trace.meta.nominal_rate_hz,
                t0,
                trace
                    .packets
                    .iter()
                    .map(|p| packet_phase_difference(p, n_sc, link_a, link_b, sc))
                    .collect(),
            )
        })
        .collect())
}

/// Two-pass population variance. Batch and streaming code both call this
/// with values in time order so their results agree bit for bit.
pub fn population_variance<'a, I>(values: I) -> f64
where
    I: Iterator<Item = &'a f64> + Clone,
{
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

pub fn mean_of<'a, I>(values: I) -> f64
where
    I: Iterator<Item = &'a f64>,
{
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Combines per-subcarrier window variances into one log-variance sample.
pub fn log_mean_variance(variances: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = variances.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    let v = if n == 0 { 0.0 } else { sum / n as f64 };
    v.max(VAR_FLOOR).log10()
}

/// Log10 of the sliding phase-difference variance.
///
/// Each subcarrier's difference series is unwrapped along time first, so a
/// still difference sitting near `+-pi` does not read as motion.
/// `log_var[i]` covers source samples `[i, i + window)`; its timestamp is
/// that of the last sample in the window, `source_offset + i` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiffVarianceStream {
    pub rate_hz: f64,
    /// Timestamp of the first output sample.
    pub t0_us: i64,
    /// Start of the source grid.
    pub grid_t0_us: i64,
    /// Grid index of the first output sample (= window length - 1).
    pub source_offset: usize,
    pub var_window_ms: f64,
    pub log_var: Vec<f64>,
}

impl PhaseDiffVarianceStream {
    pub fn len(&self) -> usize {
        self.log_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_var.is_empty()
    }

    pub fn time_us(&self, i: usize) -> i64 {
        grid_time_us(self.grid_t0_us, self.rate_hz, i + self.source_offset)
    }
}

pub fn log_variance_stream(
    diff: &[UniformSeries],
    var_window_ms: f64,
) -> Result<PhaseDiffVarianceStream, SegmentError> {
    let first = diff.first().ok_or(SegmentError::BadSubcarrierIndex(0))?;
    let rate = first.rate_hz;
    let w = ms_to_samples(var_window_ms, rate);
    if w < 2 {
        return Err(SegmentError::WindowTooShort(w));
    }
    let n = diff.iter().map(UniformSeries::len).min().unwrap_or(0);
    let unwrapped: Vec<Vec<f64>> = diff.iter().map(|d| unwrap_phase(&d.values[..n])).collect();
    let log_var = if n < w {
        Vec::new()
    } else {
        (0..=n - w)
            .map(|i| log_mean_variance(unwrapped.iter().map(|d| population_variance(d[i..i + w].iter()))))
            .collect()
    };
    Ok(PhaseDiffVarianceStream {
        rate_hz: rate,
        t0_us: grid_time_us(first.t0_us, rate, w - 1),
        grid_t0_us: first.t0_us,
        source_offset: w - 1,
        var_window_ms,
        log_var,
    })
}

/// Stability threshold calibrated on a still recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableThreshold {
    pub delta: f64,
    pub mu_stable: f64,
    pub sigma_stable: f64,
    pub var_window_ms: f64,
    pub stable_window_ms: f64,
    pub rate_hz: f64,
}

impl StableThreshold {
    /// `delta = mu + 6 sigma` of a log-variance stream.
    pub fn from_stream(stream: &PhaseDiffVarianceStream, stable_window_ms: f64) -> Self {
        let mu = mean_of(stream.log_var.iter());
        let sigma = population_variance(stream.log_var.iter()).sqrt();
        Self {
            delta: mu + 6.0 * sigma,
            mu_stable: mu,
            sigma_stable: sigma,
            var_window_ms: stream.var_window_ms,
            stable_window_ms,
            rate_hz: stream.rate_hz,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }
}

/// Subcarriers used for segmentation under `cfg`.
pub fn segmentation_subcarriers(cfg: &Config, n_subcarriers: usize) -> Vec<usize> {
    cfg.segment
        .subcarriers
        .clone()
        .unwrap_or_else(|| select_subcarriers(n_subcarriers, cfg.features.n_subcarriers).unwrap_or_default())
}

/// Log-variance stream of an already preprocessed (uniform, filtered) trace.
pub fn variance_stream_of(trace: &CsiTrace, cfg: &Config) -> Result<PhaseDiffVarianceStream, SegmentError> {
    let subs = segmentation_subcarriers(cfg, trace.meta.n_subcarriers);
    let diff = phase_difference_stream(trace, cfg.segment.link_a, cfg.segment.link_b, &subs)?;
    log_variance_stream(&diff, cfg.segment.var_window_ms)
}

/// Calibrates the stability threshold from a known-still raw trace.
pub fn calibrate_threshold(stable_trace: &CsiTrace, cfg: &Config) -> Result<StableThreshold, SegmentError> {
    let need_ms = 10.0 * cfg.segment.var_window_ms;
    let have_ms = match (stable_trace.start_us(), stable_trace.end_us()) {
        (Some(a), Some(b)) => (b - a) as f64 / 1000.0,
        _ => 0.0,
    };
    if have_ms < need_ms {
        return Err(SegmentError::TraceTooShort { have_ms, need_ms });
    }
    let pre = preprocess_trace(
        stable_trace,
        cfg.preprocess.target_rate_hz,
        &cfg.preprocess.filter(),
    )?;
    let stream = variance_stream_of(&pre, cfg)?;
    let th = StableThreshold::from_stream(&stream, cfg.segment.stable_window_ms);
    Ok(match cfg.segment.delta_override {
        Some(d) => th.with_delta(d),
        None => th,
    })
}

/// Turns a sequence of stability flags into transition events.
///
/// A transition fires on a stable sample preceded by at least
/// `min_fluct` non-stable samples, and no sooner than `refractory` samples
/// after the previous transition.
#[derive(Debug, Clone)]
pub struct TransitionTracker {
    min_fluct: usize,
    refractory: usize,
    nonstable_run: usize,
    index: usize,
    last: Option<usize>,
}

impl TransitionTracker {
    pub fn new(min_fluct: usize, refractory: usize) -> Self {
        Self {
            min_fluct: min_fluct.max(1),
            refractory,
            nonstable_run: 0,
            index: 0,
            last: None,
        }
    }

    pub fn for_threshold(th: &StableThreshold, min_fluct_ms: f64) -> Self {
        Self::new(
            ms_to_samples(min_fluct_ms, th.rate_hz),
            ms_to_samples(th.stable_window_ms, th.rate_hz),
        )
    }

    /// Feeds the flag for the next sample; returns its index when it is a transition.
    pub fn push(&mut self, stable: bool) -> Option<usize> {
        let i = self.index;
        self.index += 1;
        if !stable {
            self.nonstable_run += 1;
            return None;
        }
        let fire = self.nonstable_run >= self.min_fluct
            && self.last.is_none_or(|last| i - last >= self.refractory);
        self.nonstable_run = 0;
        if fire {
            self.last = Some(i);
            Some(i)
        } else {
            None
        }
    }
}

/// Stability of each sample that has a full stable window ahead of it.
pub fn stable_flags(stream: &PhaseDiffVarianceStream, th: &StableThreshold) -> Vec<bool> {
    let s = ms_to_samples(th.stable_window_ms, stream.rate_hz).max(1);
    if stream.len() < s {
        return Vec::new();
    }
    (0..=stream.len() - s)
        .map(|i| mean_of(stream.log_var[i..i + s].iter()) <= th.delta)
        .collect()
}

/// Indices (into the stream) of fluctuation-to-stable transitions.
pub fn detect_endpoint_indices(
    stream: &PhaseDiffVarianceStream,
    th: &StableThreshold,
    min_fluct_ms: f64,
) -> Vec<usize> {
    let mut tracker = TransitionTracker::for_threshold(th, min_fluct_ms);
    stable_flags(stream, th)
        .into_iter()
        .filter_map(|f| tracker.push(f))
        .collect()
}

/// Timestamps of fluctuation-to-stable transitions, strictly increasing.
pub fn detect_endpoints(stream: &PhaseDiffVarianceStream, th: &StableThreshold, min_fluct_ms: f64) -> Vec<i64> {
    detect_endpoint_indices(stream, th, min_fluct_ms)
        .into_iter()
        .map(|i| stream.time_us(i))
        .collect()
}

/// Preprocessed amplitude and phase over a fixed window ending at an endpoint.
///
/// Channels are link-major: channel `l * subcarriers.len() + k` is link `l`,
/// subcarrier `subcarriers[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySegment {
    pub start_us: i64,
    pub end_us: i64,
    pub window_ms: f64,
    pub rate_hz: f64,
    pub truncated: bool,
    pub n_links: usize,
    pub subcarriers: Vec<usize>,
    pub times_us: Vec<i64>,
    pub amplitude: Vec<Vec<f64>>,
    pub phase: Vec<Vec<f64>>,
}

impl ActivitySegment {
    /// Builds a segment from the preprocessed packets with `start_us <= t < end_us`.
    pub fn from_packets<'a>(
        packets: impl Iterator<Item = &'a CsiPacket>,
        n_links: usize,
        n_subcarriers: usize,
        subcarriers: &[usize],
        span: SegmentSpan,
        rate_hz: f64,
    ) -> Self {
        let n_ch = n_links * subcarriers.len();
        let mut amplitude = vec![Vec::new(); n_ch];
        let mut phase = vec![Vec::new(); n_ch];
        let mut times_us = Vec::new();
        for p in packets.filter(|p| p.t_us >= span.start_us && p.t_us < span.end_us) {
            times_us.push(p.t_us);
            for link in 0..n_links {
                for (k, &sc) in subcarriers.iter().enumerate() {
                    let (a, ph) = to_polar(p.sample(n_subcarriers, link, sc));
                    amplitude[link * subcarriers.len() + k].push(a);
                    phase[link * subcarriers.len() + k].push(ph);
                }
            }
        }
        Self {
            start_us: span.start_us,
            end_us: span.end_us,
            window_ms: span.window_ms,
            rate_hz,
            truncated: span.truncated,
            n_links,
            subcarriers: subcarriers.to_vec(),
            times_us,
            amplitude,
            phase,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.times_us.len()
    }

    /// The trailing `window_ms` of this segment, with the same end.
    pub fn tail(&self, window_ms: f64) -> ActivitySegment {
        let span = SegmentSpan::ending_at(self.end_us, window_ms, self.start_us);
        let from = self.times_us.partition_point(|&t| t < span.start_us);
        let cut = |v: &Vec<Vec<f64>>| v.iter().map(|c| c[from..].to_vec()).collect();
        ActivitySegment {
            start_us: span.start_us,
            end_us: self.end_us,
            window_ms,
            rate_hz: self.rate_hz,
            truncated: span.truncated || (self.truncated && span.start_us == self.start_us),
            n_links: self.n_links,
            subcarriers: self.subcarriers.clone(),
            times_us: self.times_us[from..].to_vec(),
            amplitude: cut(&self.amplitude),
            phase: cut(&self.phase),
        }
    }
}

/// Time span of a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSpan {
    pub start_us: i64,
    pub end_us: i64,
    pub window_ms: f64,
    pub truncated: bool,
}

impl SegmentSpan {
    /// `[end - window, end)`, clamped to `earliest_us`.
    pub fn ending_at(end_us: i64, window_ms: f64, earliest_us: i64) -> Self {
        let start = end_us - (window_ms * 1000.0).round() as i64;
        let truncated = start < earliest_us;
        Self {
            start_us: start.max(earliest_us),
            end_us,
            window_ms,
            truncated,
        }
    }
}

/// Cuts the activity window ending at `end_us` out of a preprocessed trace.
pub fn extract_segment(
    trace: &CsiTrace,
    end_us: i64,
    window_ms: f64,
    subcarriers: &[usize],
) -> Result<ActivitySegment, SegmentError> {
    check_indices(trace, &[], subcarriers)?;
    let (first, last) = match (trace.start_us(), trace.end_us()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(SegmentError::EndOutOfRange(end_us)),
    };
    if end_us < first || end_us > last {
        return Err(SegmentError::EndOutOfRange(end_us));
    }
    let span = SegmentSpan::ending_at(end_us, window_ms, first);
    let lo = trace.packets.partition_point(|p| p.t_us < span.start_us);
    let hi = trace.packets.partition_point(|p| p.t_us < span.end_us);
    Ok(ActivitySegment::from_packets(
        trace.packets[lo..hi].iter(),
        trace.meta.n_links,
        trace.meta.n_subcarriers,
        subcarriers,
        span,
        trace.meta.nominal_rate_hz,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{CsiSample, TraceMeta};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn stream_of(values: Vec<f64>) -> PhaseDiffVarianceStream {
        PhaseDiffVarianceStream {
            rate_hz: 100.0,
            t0_us: 0,
            grid_t0_us: 0,
            source_offset: 0,
            var_window_ms: 200.0,
            log_var: values,
        }
    }

    fn threshold(delta: f64) -> StableThreshold {
        StableThreshold {
            delta,
            mu_stable: delta,
            sigma_stable: 0.0,
            var_window_ms: 200.0,
            stable_window_ms: 1000.0,
            rate_hz: 100.0,
        }
    }

    #[test]
    fn wrap_arithmetic() {
        assert!((wrap_angle(3.0 - -3.0) - (6.0 - 2.0 * PI)).abs() < 1e-15);
        assert!((wrap_angle(6.0 - 2.0 * PI) + 0.28319).abs() < 1e-5);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(0.5), 0.5);
    }

    fn meta2(n_sc: usize) -> TraceMeta {
        TraceMeta {
            trace_id: "s".into(),
            n_links: 2,
            n_subcarriers: n_sc,
            nominal_rate_hz: 100.0,
        }
    }

    #[test]
    fn identical_links_give_zero_difference() {
        let packets = (0..10)
            .map(|k| {
                let s = CsiSample::new((k as f64).cos(), (k as f64 * 0.3).sin());
                CsiPacket {
                    t_us: 10_000 * k,
                    samples: vec![s; 6],
                }
            })
            .collect();
        let t = CsiTrace::new(meta2(3), packets).unwrap();
        let d = phase_difference_stream(&t, 0, 1, &[0, 2]).unwrap();
        assert!(d.iter().all(|s| s.values.iter().all(|&v| v == 0.0)));
        assert_eq!(phase_difference_stream(&t, 0, 2, &[0]), Err(SegmentError::BadLinkIndex(2)));
        assert_eq!(phase_difference_stream(&t, 0, 1, &[3]), Err(SegmentError::BadSubcarrierIndex(3)));
    }

    #[test]
    fn scripted_phase_difference_matches_direct_computation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let phases: Vec<(f64, f64)> = (0..50).map(|_| (rng.gen_range(-PI..PI), rng.gen_range(-PI..PI))).collect();
        let packets = phases
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| CsiPacket {
                t_us: 10_000 * k as i64,
                samples: vec![
                    CsiSample::new(2.0 * a.cos(), 2.0 * a.sin()),
                    CsiSample::default(),
                    CsiSample::new(0.5 * b.cos(), 0.5 * b.sin()),
                    CsiSample::default(),
                ],
            })
            .collect();
        let t = CsiTrace::new(meta2(2), packets).unwrap();
        let d = phase_difference_stream(&t, 0, 1, &[0]).unwrap();
        for (k, &(a, b)) in phases.iter().enumerate() {
            let mut direct = a - b;
            while direct > PI {
                direct -= 2.0 * PI;
            }
            while direct <= -PI {
                direct += 2.0 * PI;
            }
            assert!((d[0].values[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_difference_floors_at_minus_twelve() {
        let d = vec![UniformSeries::new(100.0, 0, vec![0.7; 100])];
        let s = log_variance_stream(&d, 200.0).unwrap();
        assert_eq!(s.len(), 81);
        assert!(s.log_var.iter().all(|&v| v == -12.0));
        assert_eq!(s.t0_us, 190_000);
    }

    #[test]
    fn alternating_unit_difference_gives_zero() {
        let v: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let s = log_variance_stream(&[UniformSeries::new(100.0, 0, v)], 200.0).unwrap();
        assert!(s.log_var.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn window_too_short() {
        let d = vec![UniformSeries::new(100.0, 0, vec![0.0; 10])];
        assert_eq!(log_variance_stream(&d, 10.0), Err(SegmentError::WindowTooShort(1)));
    }

    #[test]
    fn random_stream_matches_brute_force_windows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        // steps below pi, so unwrapping leaves the series untouched
        let series: Vec<UniformSeries> = (0..3)
            .map(|_| {
                let mut x = 0.0;
                UniformSeries::new(100.0, 0, (0..300).map(|_| { x += rng.gen_range(-3.0..3.0); wrap_angle(x) }).collect())
            })
            .collect();
        let walks: Vec<Vec<f64>> = series
            .iter()
            .map(|s| {
                let mut acc = vec![s.values[0]];
                for k in 1..s.len() {
                    let step = wrap_angle(s.values[k] - s.values[k - 1]);
                    acc.push(acc[k - 1] + step);
                }
                acc
            })
            .collect();
        let s = log_variance_stream(&series, 200.0).unwrap();
        for (i, &lv) in s.log_var.iter().enumerate() {
            let mut acc = 0.0;
            for ser in &walks {
                let win = &ser[i..i + 20];
                let m = win.iter().sum::<f64>() / 20.0;
                acc += win.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 20.0;
            }
            let oracle = (acc / 3.0).max(VAR_FLOOR).log10();
            assert!((lv - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_stream_threshold_is_the_constant() {
        let th = StableThreshold::from_stream(&stream_of(vec![-3.5; 400]), 1000.0);
        assert_eq!(th.sigma_stable, 0.0);
        assert_eq!(th.delta, -3.5);
    }

    #[test]
    fn stable_stream_has_no_transitions() {
        assert!(detect_endpoints(&stream_of(vec![-5.0; 1000]), &threshold(-3.0), 500.0).is_empty());
        assert!(detect_endpoints(&stream_of(vec![0.0; 1000]), &threshold(-3.0), 500.0).is_empty());
    }

    #[test]
    fn fluctuation_then_still_gives_one_transition() {
        let mut v = vec![-5.0; 200];
        v.extend(vec![0.0; 200]);
        v.extend(vec![-5.0; 300]);
        let ends = detect_endpoint_indices(&stream_of(v), &threshold(-3.0), 500.0);
        // Stable needs window mean <= -3: at most 40 of 100 samples at 0.
        assert_eq!(ends, vec![360]);
    }

    #[test]
    fn short_fluctuation_is_ignored() {
        let mut v = vec![-5.0; 200];
        v.extend(vec![0.0; 10]);
        v.extend(vec![-5.0; 300]);
        assert!(detect_endpoint_indices(&stream_of(v), &threshold(-4.0), 500.0).is_empty());
    }

    #[test]
    fn tracker_enforces_refractory_period() {
        let mut t = TransitionTracker::new(2, 10);
        let flags = [false, false, true, false, false, true, false, false, false, true, true, false, false, true];
        let fired: Vec<usize> = flags.iter().filter_map(|&f| t.push(f)).collect();
        assert_eq!(fired, vec![2, 13]);
    }

    fn uniform_trace(n: usize) -> CsiTrace {
        let packets = (0..n)
            .map(|k| CsiPacket {
                t_us: 10_000 * k as i64,
                samples: (0..4).map(|c| CsiSample::new(k as f64 + c as f64, 1.0)).collect(),
            })
            .collect();
        CsiTrace::new(meta2(2), packets).unwrap()
    }

    #[test]
    fn segment_spans() {
        let t = uniform_trace(600);
        let s = extract_segment(&t, 5_000_000, 3000.0, &[0, 1]).unwrap();
        assert_eq!((s.start_us, s.end_us, s.truncated), (2_000_000, 5_000_000, false));
        assert_eq!(s.n_samples(), 300);
        assert_eq!(s.amplitude.len(), 4);
        assert_eq!(s.times_us[0], 2_000_000);
        assert_eq!(*s.times_us.last().unwrap(), 4_990_000);

        let s = extract_segment(&t, 1_000_000, 3000.0, &[1]).unwrap();
        assert_eq!((s.start_us, s.truncated), (0, true));
        assert_eq!(s.n_samples(), 100);

        assert_eq!(
            extract_segment(&t, 6_000_000, 3000.0, &[1]),
            Err(SegmentError::EndOutOfRange(6_000_000))
        );
        let tail = extract_segment(&t, 5_000_000, 5000.0, &[0, 1]).unwrap().tail(3000.0);
        assert_eq!(tail, extract_segment(&t, 5_000_000, 3000.0, &[0, 1]).unwrap());
    }

    #[test]
    fn default_window_is_three_seconds() {
        assert_eq!(Config::default().segment.window_ms, 3000.0);
    }

    proptest! {
        #[test]
        fn transitions_satisfy_their_definition(
            runs in proptest::collection::vec((any::<bool>(), 1usize..200), 1..20),
            delta in -4.0f64..-1.0,
        ) {
            let mut v = Vec::new();
            for (hi, len) in runs {
                v.extend(std::iter::repeat(if hi { 0.0 } else { -5.0 }).take(len));
            }
            let stream = stream_of(v);
            let th = threshold(delta);
            let flags = stable_flags(&stream, &th);
            let ends = detect_endpoint_indices(&stream, &th, 500.0);
            for w in ends.windows(2) {
                prop_assert!(w[1] >= w[0] + 100);
            }
            for &e in &ends {
                prop_assert!(flags[e]);
                prop_assert!(e >= 50 && flags[e - 50..e].iter().all(|f| !f));
            }
        }
    }
}
