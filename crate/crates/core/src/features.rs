//! Seven-statistic feature vectors over amplitude and phase channels.
//!
//! Layout is row-major over `(link, subcarrier, channel, feature)`, channel
//! being amplitude then phase. Feature order per series:
//!
//! | idx | feature |
//! |-----|---------|
//! | 0 | normalized STD `std / (|mean| + 1e-9)` |
//! | 1 | MAD `median(|x - median(x)|)` |
//! | 2 | activity period (ms) |
//! | 3 | signal offset `mean(last 10%) - mean(first 10%)` |
//! | 4 | interquartile range (linear-interpolated quantiles) |
//! | 5 | 16-bin histogram entropy (bits) |
//! | 6 | max rate of change per second |
//!
//! Changing any of these is a breaking change for saved models; bump
//! [`FEATURE_LAYOUT_VERSION`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::ActivitySegment;

pub const FEATURE_LAYOUT_VERSION: u32 = 1;
pub const FEATURES_PER_SERIES: usize = 7;
pub const ENTROPY_BINS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("need 2 <= k <= n subcarriers, got n={n}, k={k}")]
    BadCounts { n: usize, k: usize },
    #[error("segment channel {0} is empty")]
    EmptyChannel(usize),
    #[error("vector length {found} does not match scaler length {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("cannot fit a scaler on an empty set")]
    EmptySet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    #[default]
    AmplitudeAndPhase,
    AmplitudeOnly,
}

impl ChannelMode {
    pub fn n_channels(self) -> usize {
        match self {
            ChannelMode::AmplitudeAndPhase => 2,
            ChannelMode::AmplitudeOnly => 1,
        }
    }

    pub fn dimension(self, n_links: usize, n_subcarriers: usize) -> usize {
        n_links * n_subcarriers * self.n_channels() * FEATURES_PER_SERIES
    }
}

/// `k` subcarrier indices spread evenly over `0..n`, rounding half up.
pub fn select_subcarriers(n_total: usize, k: usize) -> Result<Vec<usize>, FeatureError> {
    if k < 2 || k > n_total {
        return Err(FeatureError::BadCounts { n: n_total, k });
    }
    Ok((0..k)
        .map(|i| {
            let x = (i * (n_total - 1)) as f64 / (k - 1) as f64;
            (x + 0.5).floor() as usize
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation quantile of sorted data (position `p * (n - 1)`).
fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let pos = p * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

fn median(x: &[f64]) -> f64 {
    quantile_sorted(&sorted(x), 0.5)
}

fn edge_len(n: usize) -> usize {
    (n / 10).max(1)
}

pub fn normalized_std(x: &[f64]) -> f64 {
    std_dev(x) / (mean(x).abs() + 1e-9)
}

pub fn median_abs_deviation(x: &[f64]) -> f64 {
    let m = median(x);
    let dev: Vec<f64> = x.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Span (ms) covering every sample that deviates from the mean by more than
/// twice the standard deviation of the leading 10%.
pub fn activity_period_ms(x: &[f64], rate_hz: f64) -> f64 {
    let m = mean(x);
    let sigma_first = std_dev(&x[..edge_len(x.len())]);
    // Floating-point slack so a constant series has no outliers.
    let limit = 2.0 * sigma_first + 1e-12 * (1.0 + m.abs());
    let first = x.iter().position(|v| (v - m).abs() > limit);
    let last = x.iter().rposition(|v| (v - m).abs() > limit);
    match (first, last) {
        (Some(a), Some(b)) => (b - a + 1) as f64 * 1000.0 / rate_hz,
        _ => 0.0,
    }
}

pub fn signal_offset(x: &[f64]) -> f64 {
    let k = edge_len(x.len());
    mean(&x[x.len() - k..]) - mean(&x[..k])
}

pub fn interquartile_range(x: &[f64]) -> f64 {
    let s = sorted(x);
    quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
}

pub fn histogram_entropy_bits(x: &[f64]) -> f64 {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return 0.0;
    }
    let mut counts = [0usize; ENTROPY_BINS];
    for &v in x {
        let b = ((v - lo) / (hi - lo) * ENTROPY_BINS as f64).floor() as usize;
        counts[b.min(ENTROPY_BINS - 1)] += 1;
    }
    let n = x.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn max_velocity(x: &[f64], rate_hz: f64) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max) * rate_hz
}

/// The seven statistics of one series, in layout order.
pub fn series_features(x: &[f64], rate_hz: f64) -> [f64; FEATURES_PER_SERIES] {
    [
        normalized_std(x),
        median_abs_deviation(x),
        activity_period_ms(x, rate_hz),
        signal_offset(x),
        interquartile_range(x),
        histogram_entropy_bits(x),
        max_velocity(x, rate_hz),
    ]
}

/// Incremental phase unwrapper: keeps consecutive outputs within `pi`
/// of each other by adding multiples of `2 pi`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseUnwrapper {
    prev: Option<f64>,
    offset: f64,
}

impl PhaseUnwrapper {
    pub fn push(&mut self, v: f64) -> f64 {
        use std::f64::consts::PI;
        if let Some(p) = self.prev {
            let d = v - p;
            if d > PI {
                self.offset -= 2.0 * PI * ((d + PI) / (2.0 * PI)).floor();
            } else if d < -PI {
                self.offset += 2.0 * PI * ((-d + PI) / (2.0 * PI)).floor();
            }
        }
        self.prev = Some(v);
        v + self.offset
    }
}

/// Unwraps a phase series so consecutive jumps stay within `pi`.
pub fn unwrap_phase(x: &[f64]) -> Vec<f64> {
    let mut u = PhaseUnwrapper::default();
    x.iter().map(|&v| u.push(v)).collect()
}

/// Removes the least-squares line through `(index, value)`.
pub fn detrend(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let y_mean = mean(x);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (v - y_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    x.iter()
        .enumerate()
        .map(|(i, &v)| v - y_mean - slope * (i as f64 - t_mean))
        .collect()
}

/// Phase channel as fed to the feature stage: unwrapped then detrended.
pub fn conditioned_phase(x: &[f64]) -> Vec<f64> {
    detrend(&unwrap_phase(x))
}

pub fn extract_features(seg: &ActivitySegment, mode: ChannelMode) -> Result<FeatureVector, FeatureError> {
    let n_ch = seg.amplitude.len();
    let mut values = Vec::with_capacity(n_ch * mode.n_channels() * FEATURES_PER_SERIES);
    for ch in 0..n_ch {
        let amp = &seg.amplitude[ch];
        if amp.is_empty() || seg.phase[ch].is_empty() {
            return Err(FeatureError::EmptyChannel(ch));
        }
        values.extend(series_features(amp, seg.rate_hz));
        if mode == ChannelMode::AmplitudeAndPhase {
            values.extend(series_features(&conditioned_phase(&seg.phase[ch]), seg.rate_hz));
        }
    }
    Ok(FeatureVector { values })
}

/// Per-dimension standardization fitted on training vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Dimensions whose spread is below this are treated as constant.
const ZERO_STD: f64 = 1e-12;

impl Scaler {
    pub fn fit(vectors: &[FeatureVector]) -> Result<Self, FeatureError> {
        let first = vectors.first().ok_or(FeatureError::EmptySet)?;
        let d = first.len();
        if let Some(v) = vectors.iter().find(|v| v.len() != d) {
            return Err(FeatureError::LengthMismatch {
                expected: d,
                found: v.len(),
            });
        }
        let n = vectors.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| vectors.iter().map(|v| v.values[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                (vectors.iter().map(|v| (v.values[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn is_constant(&self, j: usize) -> bool {
        self.std[j] < ZERO_STD
    }

    pub fn constant_dimensions(&self) -> Vec<usize> {
        (0..self.dimension()).filter(|&j| self.is_constant(j)).collect()
    }

    pub fn transform(&self, v: &FeatureVector) -> Result<FeatureVector, FeatureError> {
        self.check(v)?;
        Ok(FeatureVector {
            values: v
                .values
                .iter()
                .enumerate()
                .map(|(j, &x)| if self.is_constant(j) { 0.0 } else { (x - self.mean[j]) / self.std[j] })
                .collect(),
        })
    }

    /// Inverse of [`Scaler::transform`]; constant dimensions map back to their mean.
    pub fn inverse(&self, z: &FeatureVector) -> Result<FeatureVector, FeatureError> {
        self.check(z)?;
        Ok(FeatureVector {
            values: z
                .values
                .iter()
                .enumerate()
                .map(|(j, &x)| if self.is_constant(j) { self.mean[j] } else { x * self.std[j] + self.mean[j] })
                .collect(),
        })
    }

    fn check(&self, v: &FeatureVector) -> Result<(), FeatureError> {
        if v.len() != self.dimension() {
            return Err(FeatureError::LengthMismatch {
                expected: self.dimension(),
                found: v.len(),
            });
        }
        Ok(())
    }
}

/// Standardizes `vectors`, fitting a scaler on them when none is given.
pub fn standardize(
    vectors: &[FeatureVector],
    scaler: Option<&Scaler>,
) -> Result<(Vec<FeatureVector>, Scaler), FeatureError> {
    let scaler = match scaler {
        Some(s) => s.clone(),
        None => Scaler::fit(vectors)?,
    };
    let out = vectors.iter().map(|v| scaler.transform(v)).collect::<Result<_, _>>()?;
    Ok((out, scaler))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn segment(n: usize, f: impl Fn(usize, usize) -> f64) -> ActivitySegment {
        let n_ch = 2 * 4;
        ActivitySegment {
            start_us: 0,
            end_us: n as i64 * 10_000,
            window_ms: n as f64 * 10.0,
            rate_hz: 100.0,
            truncated: false,
            n_links: 2,
            subcarriers: vec![0, 10, 19, 29],
            times_us: (0..n as i64).map(|k| k * 10_000).collect(),
            amplitude: (0..n_ch).map(|c| (0..n).map(|k| f(c, k)).collect()).collect(),
            phase: (0..n_ch).map(|c| (0..n).map(|k| 0.01 * f(c, k)).collect()).collect(),
        }
    }

    #[test]
    fn evenly_spread_subcarriers() {
        assert_eq!(select_subcarriers(30, 4).unwrap(), vec![0, 10, 19, 29]);
        assert_eq!(select_subcarriers(30, 2).unwrap(), vec![0, 29]);
        assert_eq!(select_subcarriers(5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(select_subcarriers(30, 1), Err(FeatureError::BadCounts { n: 30, k: 1 }));
        assert_eq!(select_subcarriers(3, 4), Err(FeatureError::BadCounts { n: 3, k: 4 }));
    }

    #[test]
    fn constant_series_is_degenerate() {
        let f = series_features(&[0.3; 300], 100.0);
        for (i, v) in f.iter().enumerate() {
            assert!(v.abs() < 1e-12, "feature {i} = {v}");
        }
    }

    #[test]
    fn hand_series() {
        let x = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(median_abs_deviation(&x), 1.5);
        // Q1 at position 0.75 -> 1.75, Q3 at 2.25 -> 5.0
        assert_eq!(interquartile_range(&x), 3.25);
        assert_eq!(max_velocity(&x, 100.0), 400.0);
        assert_eq!(signal_offset(&x), 7.0);
        // mean 3.75, std sqrt(7.1875)
        assert!((normalized_std(&x) - 7.1875f64.sqrt() / (3.75 + 1e-9)).abs() < 1e-15);
        // sigma_first = 0 so every sample deviates: span of 4 samples.
        assert_eq!(activity_period_ms(&x, 100.0), 40.0);
        // bins: 1 -> 0, 2 -> 2, 4 -> 6, 8 -> 15: four singletons.
        assert_eq!(histogram_entropy_bits(&x), 2.0);
    }

    #[test]
    fn period_spans_the_burst() {
        let mut x: Vec<f64> = (0..300).map(|k| 0.1 * (k as f64 * 2.1).sin()).collect();
        for (k, v) in x.iter_mut().enumerate().take(200).skip(120) {
            *v = ((k as f64) * 0.9).sin() * 5.0;
        }
        let p = activity_period_ms(&x, 100.0);
        assert!(p > 700.0 && p <= 800.0, "{p}");
    }

    #[test]
    fn vector_dimensions() {
        let seg = segment(300, |c, k| (c as f64 + 1.0) * (k as f64 * 0.1).sin());
        assert_eq!(extract_features(&seg, ChannelMode::AmplitudeAndPhase).unwrap().len(), 112);
        assert_eq!(extract_features(&seg, ChannelMode::AmplitudeOnly).unwrap().len(), 56);
        assert_eq!(ChannelMode::AmplitudeAndPhase.dimension(2, 4), 112);
        let full = extract_features(&seg, ChannelMode::AmplitudeAndPhase).unwrap();
        let amp = extract_features(&seg, ChannelMode::AmplitudeOnly).unwrap();
        for ch in 0..8 {
            assert_eq!(amp.values[ch * 7..ch * 7 + 7], full.values[ch * 14..ch * 14 + 7]);
        }
        let again = extract_features(&seg, ChannelMode::AmplitudeAndPhase).unwrap();
        assert_eq!(
            full.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            again.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn empty_channel_rejected() {
        let seg = segment(0, |_, _| 0.0);
        assert_eq!(
            extract_features(&seg, ChannelMode::AmplitudeAndPhase),
            Err(FeatureError::EmptyChannel(0))
        );
    }

    #[test]
    fn unwrap_and_detrend() {
        use std::f64::consts::PI;
        let ramp: Vec<f64> = (0..100).map(|k| k as f64 * 0.5).collect();
        let wrapped: Vec<f64> = ramp.iter().map(|&v| crate::segmentation::wrap_angle(v)).collect();
        let un = unwrap_phase(&wrapped);
        for (a, b) in un.iter().zip(&ramp) {
            assert!((a - b - (un[0] - ramp[0])).abs() < 1e-9);
        }
        assert!(conditioned_phase(&wrapped).iter().all(|v| v.abs() < 1e-9));
        assert!(un.windows(2).all(|w| (w[1] - w[0]).abs() <= PI));
    }

    #[test]
    fn standardize_fitting_set() {
        let vs: Vec<FeatureVector> = (0..20)
            .map(|i| FeatureVector::from(vec![i as f64, (i * i) as f64 * 0.3, 5.0]))
            .collect();
        let (z, scaler) = standardize(&vs, None).unwrap();
        assert_eq!(scaler.constant_dimensions(), vec![2]);
        for j in 0..2 {
            let col: Vec<f64> = z.iter().map(|v| v.values[j]).collect();
            assert!(mean(&col).abs() < 1e-9);
            assert!((std_dev(&col) - 1.0).abs() < 1e-9);
        }
        assert!(z.iter().all(|v| v.values[2] == 0.0));
        for (orig, zz) in vs.iter().zip(&z) {
            let back = scaler.inverse(zz).unwrap();
            for (a, b) in back.values.iter().zip(&orig.values) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(matches!(
            scaler.transform(&FeatureVector::from(vec![1.0])),
            Err(FeatureError::LengthMismatch { expected: 3, found: 1 })
        ));
    }

    // Independent straight-line reimplementation of the frozen formulas.
    fn oracle(x: &[f64], r: f64) -> [f64; 7] {
        let n = x.len();
        let mu = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
        let mut s = x.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| {
            let pos = p * (n - 1) as f64;
            let i = pos as usize;
            if i + 1 < n { s[i] * (1.0 - (pos - i as f64)) + s[i + 1] * (pos - i as f64) } else { s[i] }
        };
        let med = q(0.5);
        let mut dev: Vec<f64> = x.iter().map(|v| (v - med).abs()).collect();
        dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let dpos = 0.5 * (n - 1) as f64;
        let di = dpos as usize;
        let mad = if di + 1 < n { dev[di] + (dpos - di as f64) * (dev[di + 1] - dev[di]) } else { dev[di] };
        let k = std::cmp::max(1, n / 10);
        let head = &x[..k];
        let hm = head.iter().sum::<f64>() / k as f64;
        let hs = (head.iter().map(|v| (v - hm).powi(2)).sum::<f64>() / k as f64).sqrt();
        let out: Vec<usize> = (0..n).filter(|&i| (x[i] - mu).abs() > 2.0 * hs + 1e-12 * (1.0 + mu.abs())).collect();
        let period = if out.is_empty() { 0.0 } else { (out[out.len() - 1] - out[0] + 1) as f64 * 1000.0 / r };
        let offset = x[n - k..].iter().sum::<f64>() / k as f64 - hm;
        let (lo, hi) = (s[0], s[n - 1]);
        let entropy = if hi > lo {
            let mut c = [0f64; 16];
            for v in x {
                let mut b = ((v - lo) / (hi - lo) * 16.0) as usize;
                if b > 15 { b = 15; }
                c[b] += 1.0;
            }
            c.iter().filter(|&&v| v > 0.0).map(|v| { let p = v / n as f64; -p * p.log2() }).sum()
        } else { 0.0 };
        let mut vel = 0.0f64;
        for i in 1..n { vel = vel.max((x[i] - x[i - 1]).abs()); }
        [sd / (mu.abs() + 1e-9), mad, period, offset, q(0.75) - q(0.25), entropy, vel * r]
    }

    proptest! {
        #[test]
        fn matches_oracle(x in proptest::collection::vec(-50.0f64..50.0, 1..120)) {
            let got = series_features(&x, 100.0);
            let want = oracle(&x, 100.0);
            for i in 0..7 {
                prop_assert!((got[i] - want[i]).abs() <= 1e-9 * (1.0 + want[i].abs()), "feature {} {} vs {}", i, got[i], want[i]);
            }
        }

        #[test]
        fn shift_and_scale_behaviour(
            x in proptest::collection::vec(-50.0f64..50.0, 2..120),
            shift in -100.0f64..100.0,
            c in 0.01f64..20.0,
        ) {
            let f = series_features(&x, 100.0);
            let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let fs = series_features(&shifted, 100.0);
            let tol = |a: f64| 1e-9 * (1.0 + a.abs()) + 1e-9 * shift.abs();
            prop_assert!((fs[1] - f[1]).abs() <= tol(f[1]));
            prop_assert!((fs[4] - f[4]).abs() <= tol(f[4]));
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            let fc = series_features(&scaled, 100.0);
            for i in [1usize, 4, 6] {
                prop_assert!((fc[i] - c * f[i]).abs() <= 1e-9 * (1.0 + (c * f[i]).abs()));
            }
            prop_assert!(f[5] >= 0.0 && f[5] <= 4.0 + 1e-12);
        }
    }
}
