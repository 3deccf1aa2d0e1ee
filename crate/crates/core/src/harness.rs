//! End-to-end detection, scoring and window-size search.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::features::{extract_features, select_subcarriers, ChannelMode, FeatureError, FeatureVector, PhaseUnwrapper};
use crate::ocsvm::{fit, grid_search, Label, OcSvmModel, SvmError, TrainParams};
use crate::par::{self, Execution};
use crate::preprocess::{grid_time_us, interpolate_at, ms_to_samples, preprocess_trace, PreprocessError, TraceFilter};
use crate::segmentation::{
    detect_endpoints, log_mean_variance, mean_of, packet_phase_difference, population_variance,
    segmentation_subcarriers, variance_stream_of, ActivitySegment, PhaseDiffVarianceStream, SegmentError,
    SegmentSpan, StableThreshold, TransitionTracker,
};
use crate::synth::{EventKind, GroundTruth};
use crate::trace::{CsiPacket, CsiTrace, TraceMeta};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error("threshold does not fit this configuration: {0}")]
    Incompatible(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("packet at {t_us} us does not follow {prev_us} us")]
    OutOfOrder { prev_us: i64, t_us: i64 },
}

/// A fall alarm raised at a fluctuation-to-stable transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub t_end_us: i64,
    pub score: f64,
    /// Start of the classified activity window.
    #[serde(default)]
    pub segment_start_us: i64,
}

fn check_threshold(cfg: &Config, th: &StableThreshold) -> Result<(), HarnessError> {
    if th.rate_hz != cfg.preprocess.target_rate_hz {
        return Err(HarnessError::Incompatible(format!(
            "calibrated at {} Hz, pipeline runs at {} Hz",
            th.rate_hz, cfg.preprocess.target_rate_hz
        )));
    }
    if th.var_window_ms != cfg.segment.var_window_ms {
        return Err(HarnessError::Incompatible(format!(
            "calibrated with a {} ms variance window, config uses {} ms",
            th.var_window_ms, cfg.segment.var_window_ms
        )));
    }
    Ok(())
}

/// A trace after preprocessing and endpoint detection.
#[derive(Debug, Clone)]
pub struct Segmented {
    pub preprocessed: CsiTrace,
    pub stream: PhaseDiffVarianceStream,
    pub endpoints: Vec<i64>,
}

impl Segmented {
    /// Activity windows ending at each endpoint.
    pub fn segments(&self, window_ms: f64, subcarriers: &[usize]) -> Vec<ActivitySegment> {
        let t = &self.preprocessed;
        let first = t.start_us().unwrap_or(0);
        self.endpoints
            .iter()
            .map(|&end| {
                let span = SegmentSpan::ending_at(end, window_ms, first);
                let lo = t.packets.partition_point(|p| p.t_us < span.start_us);
                let hi = t.packets.partition_point(|p| p.t_us < span.end_us);
                ActivitySegment::from_packets(
                    t.packets[lo..hi].iter(),
                    t.meta.n_links,
                    t.meta.n_subcarriers,
                    subcarriers,
                    span,
                    t.meta.nominal_rate_hz,
                )
            })
            .collect()
    }
}

pub fn segment_trace(trace: &CsiTrace, cfg: &Config, th: &StableThreshold) -> Result<Segmented, HarnessError> {
    check_threshold(cfg, th)?;
    let preprocessed = preprocess_trace(trace, cfg.preprocess.target_rate_hz, &cfg.preprocess.filter())?;
    let stream = variance_stream_of(&preprocessed, cfg)?;
    let endpoints = detect_endpoints(&stream, th, cfg.segment.min_fluct_ms);
    Ok(Segmented {
        preprocessed,
        stream,
        endpoints,
    })
}

pub fn feature_subcarriers(cfg: &Config, meta: &TraceMeta) -> Result<Vec<usize>, HarnessError> {
    Ok(select_subcarriers(meta.n_subcarriers, cfg.features.n_subcarriers)?)
}

fn classify(seg: &ActivitySegment, model: &OcSvmModel) -> Result<Option<Detection>, HarnessError> {
    let x = extract_features(seg, model.channels)?;
    let d = model.decide_raw(&x)?;
    Ok(d.is_fall.then_some(Detection {
        t_end_us: seg.end_us,
        score: d.score,
        segment_start_us: seg.start_us,
    }))
}

/// Batch detector. Features use the channel layout the model was trained on.
pub fn run_detector(
    trace: &CsiTrace,
    cfg: &Config,
    th: &StableThreshold,
    model: &OcSvmModel,
) -> Result<Vec<Detection>, HarnessError> {
    let seg = segment_trace(trace, cfg, th)?;
    let subs = feature_subcarriers(cfg, &trace.meta)?;
    let mut out = Vec::new();
    for s in seg.segments(cfg.segment.window_ms, &subs) {
        out.extend(classify(&s, model)?);
    }
    Ok(out)
}

/// Packet-at-a-time detector producing the same detections as [`run_detector`].
///
/// Each stage keeps only the history the batch computation would read:
/// one raw packet for interpolation, the variance window of phase
/// differences, the stable window of log-variances and enough preprocessed
/// packets to cut an activity window.
#[derive(Debug)]
pub struct StreamingDetector {
    model: OcSvmModel,
    th: StableThreshold,
    rate_hz: f64,
    n_links: usize,
    n_subcarriers: usize,
    link_a: usize,
    link_b: usize,
    seg_subs: Vec<usize>,
    feat_subs: Vec<usize>,
    window_ms: f64,
    var_w: usize,
    stable_w: usize,
    filter: TraceFilter,
    tracker: TransitionTracker,
    prev: Option<CsiPacket>,
    t0_us: Option<i64>,
    next_k: usize,
    history: VecDeque<CsiPacket>,
    history_cap: usize,
    unwrappers: Vec<PhaseUnwrapper>,
    diffs: Vec<VecDeque<f64>>,
    log_var: VecDeque<f64>,
    /// Number of log-variance samples produced so far.
    n_log_var: usize,
}

impl StreamingDetector {
    pub fn new(meta: &TraceMeta, cfg: &Config, th: &StableThreshold, model: OcSvmModel) -> Result<Self, HarnessError> {
        check_threshold(cfg, th)?;
        let rate = cfg.preprocess.target_rate_hz;
        let seg_subs = segmentation_subcarriers(cfg, meta.n_subcarriers);
        let (la, lb) = (cfg.segment.link_a, cfg.segment.link_b);
        if la == lb || la >= meta.n_links {
            return Err(SegmentError::BadLinkIndex(la.max(lb)).into());
        }
        if lb >= meta.n_links {
            return Err(SegmentError::BadLinkIndex(lb).into());
        }
        if let Some(&s) = seg_subs.iter().find(|&&s| s >= meta.n_subcarriers) {
            return Err(SegmentError::BadSubcarrierIndex(s).into());
        }
        let var_w = ms_to_samples(cfg.segment.var_window_ms, rate);
        if var_w < 2 {
            return Err(SegmentError::WindowTooShort(var_w).into());
        }
        let stable_w = ms_to_samples(th.stable_window_ms, rate).max(1);
        let window_ms = cfg.segment.window_ms;
        Ok(Self {
            feat_subs: feature_subcarriers(cfg, meta)?,
            filter: TraceFilter::new(meta.n_channels(), &cfg.preprocess.filter(), rate)?,
            tracker: TransitionTracker::for_threshold(th, cfg.segment.min_fluct_ms),
            model,
            th: th.clone(),
            rate_hz: rate,
            n_links: meta.n_links,
            n_subcarriers: meta.n_subcarriers,
            link_a: la,
            link_b: lb,
            unwrappers: vec![PhaseUnwrapper::default(); seg_subs.len()],
            diffs: vec![VecDeque::with_capacity(var_w); seg_subs.len()],
            seg_subs,
            window_ms,
            var_w,
            stable_w,
            prev: None,
            t0_us: None,
            next_k: 0,
            history: VecDeque::new(),
            history_cap: ms_to_samples(window_ms, rate) + stable_w + var_w + 2,
            log_var: VecDeque::with_capacity(stable_w),
            n_log_var: 0,
        })
    }

    /// Feeds one raw packet; returns detections that became decidable.
    pub fn push(&mut self, packet: &CsiPacket) -> Result<Vec<Detection>, HarnessError> {
        let mut out = Vec::new();
        let Some(prev) = self.prev.take() else {
            self.t0_us = Some(packet.t_us);
            self.prev = Some(packet.clone());
            return Ok(out);
        };
        if packet.t_us <= prev.t_us {
            let prev_us = prev.t_us;
            self.prev = Some(prev);
            return Err(HarnessError::OutOfOrder {
                prev_us,
                t_us: packet.t_us,
            });
        }
        let t0 = self.t0_us.unwrap_or(prev.t_us);
        loop {
            let t = grid_time_us(t0, self.rate_hz, self.next_k);
            if t >= packet.t_us {
                break;
            }
            let p = interpolate_at(&prev, packet, t);
            self.next_k += 1;
            out.extend(self.uniform(p)?);
        }
        self.prev = Some(packet.clone());
        Ok(out)
    }

    /// Flushes the grid point that coincides with the final packet, if any.
    pub fn finish(&mut self) -> Result<Vec<Detection>, HarnessError> {
        let (Some(last), Some(t0)) = (self.prev.clone(), self.t0_us) else {
            return Ok(Vec::new());
        };
        // a single packet never forms a grid
        if self.next_k == 0 {
            return Ok(Vec::new());
        }
        let t = grid_time_us(t0, self.rate_hz, self.next_k);
        if t == last.t_us {
            self.next_k += 1;
            return self.uniform(last);
        }
        Ok(Vec::new())
    }

    fn uniform(&mut self, packet: CsiPacket) -> Result<Vec<Detection>, HarnessError> {
        let p = self.filter.process(&packet);
        for ((d, u), &sc) in self.diffs.iter_mut().zip(&mut self.unwrappers).zip(&self.seg_subs) {
            if d.len() == self.var_w {
                d.pop_front();
            }
            d.push_back(u.push(packet_phase_difference(&p, self.n_subcarriers, self.link_a, self.link_b, sc)));
        }
        if self.history.len() == self.history_cap {
            self.history.pop_front();
        }
        self.history.push_back(p);

        if self.diffs[0].len() < self.var_w {
            return Ok(Vec::new());
        }
        let lv = log_mean_variance(self.diffs.iter().map(|d| population_variance(d.iter())));
        if self.log_var.len() == self.stable_w {
            self.log_var.pop_front();
        }
        self.log_var.push_back(lv);
        self.n_log_var += 1;
        if self.log_var.len() < self.stable_w {
            return Ok(Vec::new());
        }
        // flag for the log-variance sample that opens the current stable window
        let i = self.n_log_var - self.stable_w;
        let stable = mean_of(self.log_var.iter()) <= self.th.delta;
        let Some(idx) = self.tracker.push(stable) else {
            return Ok(Vec::new());
        };
        debug_assert_eq!(idx, i);
        let t0 = self.t0_us.unwrap_or(0);
        let end = grid_time_us(t0, self.rate_hz, i + self.var_w - 1);
        let span = SegmentSpan::ending_at(end, self.window_ms, t0);
        let seg = ActivitySegment::from_packets(
            self.history.iter(),
            self.n_links,
            self.n_subcarriers,
            &self.feat_subs,
            span,
            self.rate_hz,
        );
        Ok(classify(&seg, &self.model)?.into_iter().collect())
    }
}

/// Streams a trace through [`StreamingDetector`] in chunks of `chunk` packets.
pub fn run_streaming(
    trace: &CsiTrace,
    cfg: &Config,
    th: &StableThreshold,
    model: &OcSvmModel,
    chunk: usize,
) -> Result<Vec<Detection>, HarnessError> {
    let mut det = StreamingDetector::new(&trace.meta, cfg, th, model.clone())?;
    let mut out = Vec::new();
    for block in trace.packets.chunks(chunk.max(1)) {
        for p in block {
            out.extend(det.push(p)?);
        }
    }
    out.extend(det.finish()?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOutcome {
    pub kind: EventKind,
    pub end_us: i64,
    /// Index into the (time-sorted) detection list.
    pub detection: Option<usize>,
    pub offset_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fdr: f64,
    pub fpr: f64,
    pub matched: usize,
    pub missed: usize,
    pub false_alarms: usize,
    pub correct_rejections: usize,
    pub fpr_definition: String,
    /// Human-subject figures the synthetic numbers can be compared against.
    pub reference_fdr: f64,
    pub reference_fpr: f64,
    pub events: Vec<EventOutcome>,
}

pub const FPR_DEFINITION: &str = "false_alarms / (false_alarms + fall-like events without an alarm); \
    false alarms are detections not matched to a fall";

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl EvalReport {
    fn from_counts(matched: usize, missed: usize, false_alarms: usize, correct_rejections: usize, events: Vec<EventOutcome>) -> Self {
        Self {
            fdr: ratio(matched, matched + missed),
            fpr: ratio(false_alarms, false_alarms + correct_rejections),
            matched,
            missed,
            false_alarms,
            correct_rejections,
            fpr_definition: FPR_DEFINITION.into(),
            reference_fdr: 0.89,
            reference_fpr: 0.13,
            events,
        }
    }

    /// Pools counts (and event tables) over several traces.
    pub fn combine<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Self {
        let (mut m, mut mi, mut fa, mut cr) = (0, 0, 0, 0);
        let mut events = Vec::new();
        for r in reports {
            m += r.matched;
            mi += r.missed;
            fa += r.false_alarms;
            cr += r.correct_rejections;
            events.extend(r.events.iter().cloned());
        }
        Self::from_counts(m, mi, fa, cr, events)
    }
}

/// Greedy nearest-first one-to-one matching of `times` to `targets` within `tol`.
/// Ties on distance go to the lower target index, then the lower time index.
fn greedy_match(times: &[i64], used: &mut [bool], targets: &[i64], tol_us: i64) -> Vec<Option<usize>> {
    let mut pairs: Vec<(i64, usize, usize)> = Vec::new();
    for (e, &te) in targets.iter().enumerate() {
        for (d, &td) in times.iter().enumerate() {
            let dist = (td - te).abs();
            if !used[d] && dist <= tol_us {
                pairs.push((dist, e, d));
            }
        }
    }
    pairs.sort_unstable();
    let mut assigned = vec![None; targets.len()];
    for (_, e, d) in pairs {
        if assigned[e].is_none() && !used[d] {
            assigned[e] = Some(d);
            used[d] = true;
        }
    }
    assigned
}

/// Scores detections against ground truth. Detections are first matched to
/// fall ends; leftovers near fall-like ends, or anywhere else, are false alarms.
pub fn evaluate(detections: &[Detection], truth: &GroundTruth, match_tol_ms: f64) -> EvalReport {
    let mut dets = detections.to_vec();
    dets.sort_by(|a, b| a.t_end_us.cmp(&b.t_end_us).then(a.score.total_cmp(&b.score)));
    let times: Vec<i64> = dets.iter().map(|d| d.t_end_us).collect();
    let tol_us = (match_tol_ms * 1000.0).round() as i64;
    let mut used = vec![false; times.len()];

    let falls: Vec<_> = truth.events.iter().filter(|e| e.kind.is_fall()).collect();
    let like: Vec<_> = truth.events.iter().filter(|e| e.kind.is_fall_like()).collect();
    let fall_hits = greedy_match(&times, &mut used, &falls.iter().map(|e| e.end_us).collect::<Vec<_>>(), tol_us);
    let like_hits = greedy_match(&times, &mut used, &like.iter().map(|e| e.end_us).collect::<Vec<_>>(), tol_us);

    let outcome = |e: &crate::synth::TruthEvent, hit: Option<usize>| EventOutcome {
        kind: e.kind,
        end_us: e.end_us,
        detection: hit,
        offset_ms: hit.map(|d| (times[d] - e.end_us) as f64 / 1000.0),
    };
    let mut events: Vec<EventOutcome> = falls.iter().zip(&fall_hits).map(|(e, &h)| outcome(e, h)).collect();
    events.extend(like.iter().zip(&like_hits).map(|(e, &h)| outcome(e, h)));

    let matched = fall_hits.iter().filter(|h| h.is_some()).count();
    let false_alarms = times.len() - matched;
    let correct_rejections = like_hits.iter().filter(|h| h.is_none()).count();
    EvalReport::from_counts(matched, falls.len() - matched, false_alarms, correct_rejections, events)
}

/// An activity window with its class.
#[derive(Debug, Clone)]
pub struct LabeledSegment {
    pub label: Label,
    pub kind: Option<EventKind>,
    pub segment: ActivitySegment,
}

/// Cuts a window at every endpoint and labels it from the nearest
/// fall/fall-like end within `match_tol_ms`. Unmatched endpoints are non-falls.
pub fn labeled_segments(
    trace: &CsiTrace,
    truth: &GroundTruth,
    cfg: &Config,
    th: &StableThreshold,
    window_ms: f64,
) -> Result<Vec<LabeledSegment>, HarnessError> {
    let seg = segment_trace(trace, cfg, th)?;
    let subs = feature_subcarriers(cfg, &trace.meta)?;
    let targets: Vec<_> = truth.events.iter().filter(|e| e.expect_endpoint).collect();
    let ends: Vec<i64> = targets.iter().map(|e| e.end_us).collect();
    let mut used = vec![false; seg.endpoints.len()];
    let hits = greedy_match(
        &seg.endpoints,
        &mut used,
        &ends,
        (cfg.eval.match_tol_ms * 1000.0).round() as i64,
    );
    let mut kind_of = vec![None; seg.endpoints.len()];
    for (e, h) in hits.iter().enumerate() {
        if let Some(d) = h {
            kind_of[*d] = Some(targets[e].kind);
        }
    }
    Ok(seg
        .segments(window_ms, &subs)
        .into_iter()
        .zip(kind_of)
        .map(|(segment, kind)| LabeledSegment {
            label: if kind == Some(EventKind::Fall) { Label::Fall } else { Label::NonFall },
            kind,
            segment,
        })
        .collect())
}

/// Labeled windows for many traces, processed in parallel.
pub fn labeled_corpus(
    cases: &[(CsiTrace, GroundTruth)],
    cfg: &Config,
    th: &StableThreshold,
    window_ms: f64,
    exec: Execution,
) -> Result<Vec<LabeledSegment>, HarnessError> {
    let per = par::try_map(exec, cases, |(t, g)| labeled_segments(t, g, cfg, th, window_ms))?;
    Ok(per.into_iter().flatten().collect())
}

/// Gamma multipliers (of 1 / dimension) and nu values tried by `svm.grid_search`.
pub const GAMMA_SCALES: [f64; 3] = [0.1, 0.3, 1.0];
pub const NU_GRID: [f64; 3] = [0.03, 0.05, 0.1];

/// Trains a model on the fall-labeled windows of a corpus.
///
/// With `svm.grid_search` one stratified fold is held out to pick
/// `(gamma, nu)`, then the model is refit on every fall window.
pub fn train_on(segments: &[LabeledSegment], cfg: &Config, channels: ChannelMode) -> Result<OcSvmModel, HarnessError> {
    let vectors = segments
        .iter()
        .map(|s| extract_features(&s.segment, channels))
        .collect::<Result<Vec<_>, _>>()?;
    let falls: Vec<FeatureVector> = vectors
        .iter()
        .zip(segments)
        .filter(|(_, s)| s.label == Label::Fall)
        .map(|(v, _)| v.clone())
        .collect();
    if falls.is_empty() {
        return Err(HarnessError::InsufficientData("no fall segments to train on".into()));
    }
    let dim = falls[0].len();
    let (nu, gamma) = if cfg.svm.grid_search {
        let (gamma, nu) = pick_hyperparameters(&vectors, segments, cfg, channels)?;
        (nu, cfg.svm.gamma.unwrap_or(gamma))
    } else {
        (cfg.svm.nu, cfg.svm.gamma_for(dim))
    };
    Ok(fit(&falls, channels, &TrainParams::new(nu, gamma))?)
}

fn pick_hyperparameters(
    vectors: &[FeatureVector],
    segments: &[LabeledSegment],
    cfg: &Config,
    channels: ChannelMode,
) -> Result<(f64, f64), HarnessError> {
    let k = cfg.eval.folds.max(2);
    let labels: Vec<Label> = segments.iter().map(|s| s.label).collect();
    let n_fall = labels.iter().filter(|&&l| l == Label::Fall).count();
    if n_fall < k || labels.len() - n_fall < k {
        return Err(HarnessError::InsufficientData(format!(
            "grid search needs at least {k} fall and {k} non-fall segments"
        )));
    }
    let folds = stratified_folds(&labels, k, cfg.eval.split_seed);
    let train: Vec<FeatureVector> = (0..vectors.len())
        .filter(|&i| folds[i] != 0 && labels[i] == Label::Fall)
        .map(|i| vectors[i].clone())
        .collect();
    let validation: Vec<(FeatureVector, Label)> = (0..vectors.len())
        .filter(|&i| folds[i] == 0)
        .map(|i| (vectors[i].clone(), labels[i]))
        .collect();
    let dim = vectors[0].len() as f64;
    let gammas: Vec<f64> = GAMMA_SCALES.iter().map(|g| g / dim).collect();
    let (best, _) = grid_search(&train, &validation, channels, &gammas, &NU_GRID)?;
    Ok((best.gamma, best.nu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSearch {
    pub lo_ms: f64,
    pub hi_ms: f64,
    pub step_ms: f64,
    pub fine_step_ms: f64,
}

impl Default for WindowSearch {
    fn default() -> Self {
        Self {
            lo_ms: 1000.0,
            hi_ms: 5000.0,
            step_ms: 500.0,
            fine_step_ms: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window_ms: f64,
    pub fdr: f64,
    pub fpr: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSearchResult {
    pub best_ms: f64,
    pub coarse: Vec<WindowScore>,
    pub fine: Vec<WindowScore>,
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi <= lo || step <= 0.0 {
        return vec![lo];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

fn best_of(scores: &[WindowScore]) -> WindowScore {
    scores
        .iter()
        .copied()
        .fold(None::<WindowScore>, |b, s| match b {
            Some(b) if b.metric > s.metric || (b.metric == s.metric && b.window_ms <= s.window_ms) => Some(b),
            _ => Some(s),
        })
        .expect("non-empty grid")
}

/// Stratified fold assignment: each class is shuffled with `seed` and dealt
/// round-robin into `k` folds.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for class in [Label::Fall, Label::NonFall] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    fold
}

/// Pooled cross-validated FDR and FPR of windows cut to `window_ms`.
pub fn cross_validate(
    data: &[LabeledSegment],
    window_ms: f64,
    cfg: &Config,
    exec: Execution,
) -> Result<WindowScore, HarnessError> {
    let k = cfg.eval.folds.max(2);
    let channels = cfg.features.channels;
    let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
    let folds = stratified_folds(&labels, k, cfg.eval.split_seed);
    let vectors = par::try_map(exec, data, |s| extract_features(&s.segment.tail(window_ms), channels))?;
    let per_fold = par::try_map_range(exec, k, |f| -> Result<[usize; 4], HarnessError> {
        let train: Vec<FeatureVector> = (0..data.len())
            .filter(|&i| folds[i] != f && labels[i] == Label::Fall)
            .map(|i| vectors[i].clone())
            .collect();
        let gamma = cfg.svm.gamma_for(train.first().map_or(1, |v| v.len()));
        let model = fit(&train, channels, &TrainParams::new(cfg.svm.nu, gamma).sequential())?;
        let mut c = [0usize; 4]; // tp, falls, fp, others
        for i in (0..data.len()).filter(|&i| folds[i] == f) {
            let hit = model.decide_raw(&vectors[i])?.is_fall as usize;
            match labels[i] {
                Label::Fall => {
                    c[0] += hit;
                    c[1] += 1;
                }
                Label::NonFall => {
                    c[2] += hit;
                    c[3] += 1;
                }
            }
        }
        Ok(c)
    })?;
    let t = per_fold
        .iter()
        .fold([0usize; 4], |a, c| [a[0] + c[0], a[1] + c[1], a[2] + c[2], a[3] + c[3]]);
    let (fdr, fpr) = (ratio(t[0], t[1]), ratio(t[2], t[3]));
    Ok(WindowScore {
        window_ms,
        fdr,
        fpr,
        metric: fdr - fpr,
    })
}

/// Two-phase window search: a coarse sweep, then a fine sweep over
/// `[best - step, best + step]`. The largest cross-validated FDR - FPR wins;
/// ties go to the smaller window. `data` should be cut at `search.hi_ms` or longer.
pub fn search_window_size(
    data: &[LabeledSegment],
    search: &WindowSearch,
    cfg: &Config,
    exec: Execution,
) -> Result<WindowSearchResult, HarnessError> {
    let k = cfg.eval.folds.max(2);
    let n_fall = data.iter().filter(|s| s.label == Label::Fall).count();
    let n_other = data.len() - n_fall;
    if n_fall < k || n_other < k {
        return Err(HarnessError::InsufficientData(format!(
            "{k}-fold search needs at least {k} fall and {k} non-fall segments, got {n_fall} and {n_other}"
        )));
    }
    let score_all = |ws: &[f64]| -> Result<Vec<WindowScore>, HarnessError> {
        ws.iter().map(|&w| cross_validate(data, w, cfg, exec)).collect()
    };
    let coarse = score_all(&grid(search.lo_ms, search.hi_ms, search.step_ms))?;
    let c = best_of(&coarse);
    if search.hi_ms <= search.lo_ms {
        return Ok(WindowSearchResult {
            best_ms: search.lo_ms,
            coarse,
            fine: Vec::new(),
        });
    }
    let lo = (c.window_ms - search.step_ms).max(search.lo_ms);
    let hi = (c.window_ms + search.step_ms).min(search.hi_ms);
    let fine_grid = grid(lo, hi, search.fine_step_ms);
    let mut fine = Vec::with_capacity(fine_grid.len());
    for w in fine_grid {
        match coarse.iter().find(|s| s.window_ms == w) {
            Some(s) => fine.push(*s),
            None => fine.push(cross_validate(data, w, cfg, exec)?),
        }
    }
    Ok(WindowSearchResult {
        best_ms: best_of(&fine).window_ms,
        coarse,
        fine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::TruthEvent;
    use proptest::prelude::*;

    fn truth(events: &[(EventKind, i64)]) -> GroundTruth {
        GroundTruth {
            trace_id: "t".into(),
            events: events
                .iter()
                .map(|&(kind, end_ms)| TruthEvent {
                    kind,
                    start_us: (end_ms - 1000) * 1000,
                    end_us: end_ms * 1000,
                    expect_endpoint: kind.expects_endpoint(),
                })
                .collect(),
        }
    }

    fn det(t_ms: i64, score: f64) -> Detection {
        Detection {
            t_end_us: t_ms * 1000,
            score,
            segment_start_us: 0,
        }
    }

    fn mixed() -> GroundTruth {
        truth(&[
            (EventKind::Fall, 5000),
            (EventKind::SitDown, 10_000),
            (EventKind::Fall, 15_000),
            (EventKind::LieDown, 20_000),
            (EventKind::Walk, 25_000),
        ])
    }

    #[test]
    fn perfect_detections() {
        let r = evaluate(&[det(5000, 1.0), det(15_000, 0.5)], &mixed(), 500.0);
        assert_eq!((r.fdr, r.fpr), (1.0, 0.0));
        assert_eq!((r.matched, r.missed, r.false_alarms, r.correct_rejections), (2, 0, 0, 2));
        assert_eq!(r.fpr_definition, FPR_DEFINITION);
    }

    #[test]
    fn no_detections() {
        let r = evaluate(&[], &mixed(), 500.0);
        assert_eq!(r.fdr, 0.0);
        assert_eq!(r.false_alarms, 0);
        assert_eq!(r.missed, 2);
    }

    #[test]
    fn alarms_away_from_falls_are_false() {
        let r = evaluate(&[det(5300, 1.0), det(10_100, 1.0), det(22_000, 1.0)], &mixed(), 500.0);
        assert_eq!((r.matched, r.false_alarms, r.correct_rejections), (1, 2, 1));
        assert!((r.fpr - 2.0 / 3.0).abs() < 1e-12);
        let fall = r.events.iter().find(|e| e.end_us == 5_000_000).unwrap();
        assert_eq!(fall.offset_ms, Some(300.0));
    }

    #[test]
    fn tolerance_is_inclusive_and_one_to_one() {
        let r = evaluate(&[det(4500, 1.0), det(5500, 1.0)], &truth(&[(EventKind::Fall, 5000)]), 500.0);
        assert_eq!((r.matched, r.false_alarms), (1, 1));
        // equal distance: the earlier detection wins
        assert_eq!(r.events[0].detection, Some(0));
        let r = evaluate(&[det(5501, 1.0)], &truth(&[(EventKind::Fall, 5000)]), 500.0);
        assert_eq!(r.matched, 0);
    }

    #[test]
    fn combine_pools_counts() {
        let a = evaluate(&[det(5000, 1.0)], &mixed(), 500.0);
        let b = evaluate(&[det(10_000, 1.0)], &mixed(), 500.0);
        let c = EvalReport::combine([&a, &b]);
        assert_eq!((c.matched, c.missed, c.false_alarms, c.correct_rejections), (1, 3, 1, 3));
        assert_eq!(c.events.len(), a.events.len() + b.events.len());
    }

    #[test]
    fn folds_are_stratified_and_seeded() {
        let labels: Vec<Label> = (0..53).map(|i| if i % 3 == 0 { Label::Fall } else { Label::NonFall }).collect();
        let f = stratified_folds(&labels, 5, 9);
        assert_eq!(f, stratified_folds(&labels, 5, 9));
        for class in [Label::Fall, Label::NonFall] {
            let mut per = [0usize; 5];
            for (i, &l) in labels.iter().enumerate() {
                if l == class {
                    per[f[i]] += 1;
                }
            }
            assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1, "{per:?}");
        }
    }

    #[test]
    fn window_grid_and_tie_break() {
        assert_eq!(grid(1000.0, 5000.0, 500.0).len(), 9);
        assert_eq!(grid(3000.0, 3000.0, 500.0), vec![3000.0]);
        let s = |w: f64, m: f64| WindowScore {
            window_ms: w,
            fdr: m,
            fpr: 0.0,
            metric: m,
        };
        assert_eq!(best_of(&[s(3000.0, 0.5), s(2000.0, 0.5), s(4000.0, 0.4)]).window_ms, 2000.0);
        assert_eq!(best_of(&[s(3000.0, 0.5), s(3500.0, 0.6)]).window_ms, 3500.0);
    }

    #[test]
    fn search_needs_both_classes() {
        let err = search_window_size(&[], &WindowSearch::default(), &Config::default(), Execution::Sequential);
        assert!(matches!(err, Err(HarnessError::InsufficientData(_))));
    }

    fn arb_case() -> impl Strategy<Value = (Vec<(i64, f64)>, Vec<(u8, i64)>)> {
        (
            prop::collection::vec((0i64..60_000, -1.0f64..1.0), 0..12),
            prop::collection::vec((0u8..4, 0i64..60_000), 0..8),
        )
    }

    fn to_truth(ev: &[(u8, i64)]) -> GroundTruth {
        let kinds = [EventKind::Fall, EventKind::SitDown, EventKind::LieDown, EventKind::Walk];
        truth(&ev.iter().map(|&(k, t)| (kinds[k as usize], t)).collect::<Vec<_>>())
    }

    proptest! {
        #[test]
        fn evaluate_ignores_detection_order((d, ev) in arb_case(), seed in any::<u64>()) {
            let g = to_truth(&ev);
            let dets: Vec<Detection> = d.iter().map(|&(t, s)| det(t, s)).collect();
            let mut shuffled = dets.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = evaluate(&dets, &g, 500.0);
            let b = evaluate(&shuffled, &g, 500.0);
            prop_assert_eq!((a.matched, a.missed, a.false_alarms, a.correct_rejections),
                            (b.matched, b.missed, b.false_alarms, b.correct_rejections));
        }

        #[test]
        fn raising_the_score_cut_is_monotone((d, ev) in arb_case(), lo in -1.0f64..1.0, step in 0.0f64..1.0) {
            let g = to_truth(&ev);
            let dets: Vec<Detection> = d.iter().map(|&(t, s)| det(t, s)).collect();
            let cut = |c: f64| dets.iter().copied().filter(|x| x.score >= c).collect::<Vec<_>>();
            let a = evaluate(&cut(lo), &g, 500.0);
            let b = evaluate(&cut(lo + step), &g, 500.0);
            prop_assert!(b.fdr <= a.fdr);
            prop_assert!(b.false_alarms <= a.false_alarms);
            prop_assert!(b.fpr <= a.fpr);
            prop_assert!(a.fdr >= 0.0 && a.fdr <= 1.0 && a.fpr >= 0.0 && a.fpr <= 1.0);
        }
    }
}
