//! Seeded synthetic CSI traces with ground-truth activity labels.
//!
//! Each link/subcarrier carries a fixed complex baseline `B`. An activity adds
//! a perturbation `g A(t) exp(j(psi + kappa_l c_s Theta(t)))`: `A` is a
//! kind-specific envelope, `Theta` the accumulated rotation and `kappa_l` a
//! per-link rate whose sign differs between the two links, so the inter-link
//! phase difference spins while someone moves. Envelopes rise from and
//! return to zero, so once the body comes to rest the channel, and with it
//! the phase difference, freezes at the baseline.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{CsiPacket, CsiSample, CsiTrace, TraceMeta};

/// Minimum still time after a fall or fall-like activity.
pub const REST_AFTER_MS: u64 = 2000;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("malformed scenario: {0}")]
    MalformedScenario(String),
    #[error("events {first} and {second} overlap")]
    OverlappingEvents { first: usize, second: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Fall,
    SitDown,
    LieDown,
    Walk,
    StandUp,
    Still,
    Sweep,
}

impl EventKind {
    pub fn is_fall(self) -> bool {
        self == EventKind::Fall
    }

    pub fn is_fall_like(self) -> bool {
        matches!(self, EventKind::SitDown | EventKind::LieDown)
    }

    /// Activities that end in a fluctuation-to-stable transition.
    pub fn expects_endpoint(self) -> bool {
        self.is_fall() || self.is_fall_like()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub kind: EventKind,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration_ms: u64,
    pub rate_hz: f64,
    pub noise_sigma: f64,
    pub events: Vec<Event>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::InvalidScenario(m));
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return invalid(format!("rate_hz {} must be positive", self.rate_hz));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return invalid(format!("noise_sigma {} must be non-negative", self.noise_sigma));
        }
        if self.duration_ms == 0 {
            return invalid("duration_ms must be positive".into());
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.start_ms >= e.end_ms || e.end_ms > self.duration_ms {
                return invalid(format!(
                    "event {i} [{}, {}] ms is empty or outside [0, {}]",
                    e.start_ms, e.end_ms, self.duration_ms
                ));
            }
        }
        let mut order: Vec<usize> = (0..self.events.len()).collect();
        order.sort_by_key(|&i| (self.events[i].start_ms, i));
        for w in order.windows(2) {
            if self.events[w[1]].start_ms < self.events[w[0]].end_ms {
                return Err(SynthError::OverlappingEvents {
                    first: w[0].min(w[1]),
                    second: w[0].max(w[1]),
                });
            }
        }
        if order.windows(2).any(|w| w[0] > w[1]) {
            return invalid("events must be listed in time order".into());
        }
        for (i, e) in self.events.iter().enumerate() {
            let next_active = self.events[i + 1..].iter().find(|n| n.kind != EventKind::Still);
            if e.kind.expects_endpoint() {
                let rest_end = e.end_ms + REST_AFTER_MS;
                if rest_end > self.duration_ms || next_active.is_some_and(|n| n.start_ms < rest_end) {
                    return invalid(format!("event {i} ({:?}) needs {REST_AFTER_MS} ms of still after it", e.kind));
                }
            }
            if e.kind == EventKind::StandUp && e.end_ms < self.duration_ms {
                let ok = self
                    .events
                    .get(i + 1)
                    .is_some_and(|n| n.start_ms == e.end_ms && n.kind != EventKind::Still);
                if !ok {
                    return invalid(format!("stand_up event {i} must run straight into another activity"));
                }
            }
        }
        Ok(())
    }

    pub fn trace_id(&self) -> String {
        format!("synth-{}", self.seed)
    }
}

pub fn load_scenario(bytes: &[u8]) -> Result<Scenario, SynthError> {
    let sc: Scenario =
        serde_json::from_slice(bytes).map_err(|e| SynthError::MalformedScenario(e.to_string()))?;
    sc.validate()?;
    Ok(sc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motion {
    /// Perturbation magnitude relative to a unit baseline.
    pub amplitude: f64,
    /// Rotation rate of the perturbation phase, revolutions per second.
    pub rate: f64,
}

/// Envelope constants of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub n_links: usize,
    pub n_subcarriers: usize,
    /// Uniform timestamp jitter, +/- microseconds.
    pub jitter_us: i64,
    /// Fast initial collapse of a fall.
    pub collapse: Motion,
    pub collapse_ms: f64,
    /// Closing taper of every envelope.
    pub release_ms: f64,
    /// Motion of a fall after the collapse.
    pub settle: Motion,
    pub sit_down: Motion,
    pub lie_down: Motion,
    pub walk: Motion,
    pub sweep: Motion,
    pub stand_up: Motion,
    /// Per-event gain is drawn from `[1 - s, 1 + s]`.
    pub gain_spread: f64,
    /// Per-event rate factor is drawn from `[1 - s, 1 + s]`.
    pub rate_spread: f64,
    /// Std of a per-packet, per-link real gain (receiver AGC); 0 disables.
    pub agc_sigma: f64,
    /// Body reflection strength relative to the mean static path; scales
    /// every motion amplitude.
    pub body_scale: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_links: 2,
            n_subcarriers: 30,
            jitter_us: 1000,
            collapse: Motion { amplitude: 3.0, rate: 3.5 },
            collapse_ms: 400.0,
            release_ms: 250.0,
            settle: Motion { amplitude: 2.0, rate: 1.0 },
            sit_down: Motion { amplitude: 2.0, rate: 0.9 },
            lie_down: Motion { amplitude: 2.0, rate: 1.1 },
            walk: Motion { amplitude: 1.5, rate: 1.5 },
            sweep: Motion { amplitude: 1.2, rate: 2.5 },
            stand_up: Motion { amplitude: 2.0, rate: 2.0 },
            gain_spread: 0.2,
            rate_spread: 0.15,
            agc_sigma: 0.25,
            body_scale: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub kind: EventKind,
    pub start_us: i64,
    pub end_us: i64,
    pub expect_endpoint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub trace_id: String,
    pub events: Vec<TruthEvent>,
}

impl GroundTruth {
    pub fn of(sc: &Scenario) -> Self {
        Self {
            trace_id: sc.trace_id(),
            events: sc
                .events
                .iter()
                .map(|e| TruthEvent {
                    kind: e.kind,
                    start_us: e.start_ms as i64 * 1000,
                    end_us: e.end_ms as i64 * 1000,
                    expect_endpoint: e.kind.expects_endpoint(),
                })
                .collect(),
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Amplitude and accumulated rotation (radians) `tau` seconds into an event
/// lasting `span` seconds. Every envelope starts and ends at zero.
fn envelope(kind: EventKind, p: &SynthParams, tau: f64, span: f64, rate_k: f64) -> (f64, f64) {
    let release = smoothstep((span - tau) / (p.release_ms / 1000.0).min(span / 2.0));
    let attack = |secs: f64| smoothstep(tau / secs.min(span / 2.0));
    let spin = |m: &Motion| 2.0 * PI * m.rate * rate_k * tau;
    let (a, theta) = match kind {
        EventKind::Still => (0.0, 0.0),
        EventKind::Fall => {
            let tc = (p.collapse_ms / 1000.0).min(span / 2.0);
            let fc = p.collapse.rate * rate_k;
            if tau < tc {
                // chirp: rate climbs from fc/2 to 3fc/2
                let u = tau / tc;
                let theta = 2.0 * PI * fc * tc * (0.5 * u + 0.5 * u * u);
                (p.collapse.amplitude * attack(0.1), theta)
            } else {
                let theta = 2.0 * PI * fc * tc + 2.0 * PI * p.settle.rate * rate_k * (tau - tc);
                let w = smoothstep((tau - tc) / 0.2);
                (p.collapse.amplitude + w * (p.settle.amplitude - p.collapse.amplitude), theta)
            }
        }
        EventKind::SitDown => (p.sit_down.amplitude * attack(0.4 * span), spin(&p.sit_down)),
        EventKind::LieDown => (p.lie_down.amplitude * attack(0.4 * span), spin(&p.lie_down)),
        EventKind::StandUp => (p.stand_up.amplitude * attack(0.2), spin(&p.stand_up)),
        EventKind::Walk | EventKind::Sweep => {
            let m = if kind == EventKind::Walk { &p.walk } else { &p.sweep };
            let a = m.amplitude * (0.7 + 0.3 * (2.0 * PI * 0.8 * tau).sin()) * attack(0.3);
            // rate swings +/-30% at 0.5 Hz
            let f = m.rate * rate_k;
            (a, 2.0 * PI * f * (tau + 0.3 / PI * (1.0 - (PI * tau).cos())))
        }
    };
    (a * release, theta)
}

struct EventDraw {
    gain: f64,
    rate_k: f64,
    /// Phase offset per (link, subcarrier), link-major.
    psi: Vec<f64>,
}

/// Generates the trace and its labels with default envelope constants.
pub fn generate_trace(sc: &Scenario) -> Result<(CsiTrace, GroundTruth), SynthError> {
    generate_trace_with(sc, &SynthParams::default())
}

pub fn generate_trace_with(sc: &Scenario, p: &SynthParams) -> Result<(CsiTrace, GroundTruth), SynthError> {
    sc.validate()?;
    if p.n_links < 2 || p.n_subcarriers < 2 {
        return Err(SynthError::InvalidScenario("need at least 2 links and 2 subcarriers".into()));
    }
    let (nl, ns) = (p.n_links, p.n_subcarriers);
    let n_ch = nl * ns;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);

    let baseline: Vec<Complex64> = (0..n_ch)
        .map(|_| Complex64::from_polar(rng.gen_range(0.8..1.2), rng.gen_range(-PI..PI)))
        .collect();
    // alternate rotation direction between links
    let kappa: Vec<f64> = (0..nl)
        .map(|l| {
            let k = rng.gen_range(0.7..1.3);
            if l % 2 == 0 { k } else { -k }
        })
        .collect();
    let sc_factor: Vec<f64> = (0..ns)
        .map(|s| 1.0 + 0.2 * (s as f64 / (ns - 1) as f64 - 0.5))
        .collect();
    let draws: Vec<EventDraw> = sc
        .events
        .iter()
        .map(|_| EventDraw {
            gain: rng.gen_range(1.0 - p.gain_spread..=1.0 + p.gain_spread),
            rate_k: rng.gen_range(1.0 - p.rate_spread..=1.0 + p.rate_spread),
            psi: (0..n_ch).map(|_| rng.gen_range(-PI..PI)).collect(),
        })
        .collect();

    let perturbation = |ev: usize, tau: f64, out: &mut [Complex64]| {
        let e = &sc.events[ev];
        let d = &draws[ev];
        let span = (e.end_ms - e.start_ms) as f64 / 1000.0;
        let (a, theta) = envelope(e.kind, p, tau, span, d.rate_k);
        if a == 0.0 {
            return;
        }
        for l in 0..nl {
            for s in 0..ns {
                let c = l * ns + s;
                out[c] += Complex64::from_polar(p.body_scale * d.gain * a, d.psi[c] + kappa[l] * sc_factor[s] * theta);
            }
        }
    };

    let noise = Normal::new(0.0, sc.noise_sigma.max(0.0)).expect("finite sigma");
    let agc = Normal::new(0.0, p.agc_sigma.max(0.0)).expect("finite sigma");
    let period_us = 1e6 / sc.rate_hz;
    let duration_us = sc.duration_ms as i64 * 1000;
    let n_packets = (duration_us as f64 / period_us).floor() as usize + 1;
    let max_jitter = p.jitter_us.min((period_us / 2.0).floor() as i64 - 1).max(0);

    let active: Vec<usize> = (0..sc.events.len())
        .filter(|&i| sc.events[i].kind != EventKind::Still)
        .collect();
    let mut packets = Vec::with_capacity(n_packets);
    let mut h = vec![Complex64::default(); n_ch];
    let mut gains = vec![1.0; nl];
    for k in 0..n_packets {
        let nominal = (k as f64 * period_us).round() as i64;
        let jitter = if k == 0 || max_jitter == 0 { 0 } else { rng.gen_range(-max_jitter..=max_jitter) };
        let t_us = (nominal + jitter).clamp(0, duration_us);
        let t_ms = t_us as f64 / 1000.0;

        h.copy_from_slice(&baseline);
        if let Some(i) = active.iter().copied().find(|&i| {
            let e = &sc.events[i];
            (e.start_ms as f64) <= t_ms && t_ms < e.end_ms as f64
        }) {
            perturbation(i, (t_ms - sc.events[i].start_ms as f64) / 1000.0, &mut h);
        }

        if p.agc_sigma > 0.0 {
            for g in gains.iter_mut() {
                *g = (1.0 + agc.sample(&mut rng)).max(0.1);
            }
        }
        let samples = h
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let n = Complex64::new(noise.sample(&mut rng), noise.sample(&mut rng));
                CsiSample::from((v + n) * gains[c / ns])
            })
            .collect();
        packets.push(CsiPacket { t_us, samples });
    }

    let meta = TraceMeta {
        trace_id: sc.trace_id(),
        n_links: nl,
        n_subcarriers: ns,
        nominal_rate_hz: sc.rate_hz,
    };
    let trace = CsiTrace::new(meta, packets).map_err(|e| SynthError::InvalidScenario(e.to_string()))?;
    Ok((trace, GroundTruth::of(sc)))
}

/// A named list of scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPack {
    pub name: String,
    pub scenarios: Vec<Scenario>,
}

impl ScenarioPack {
    pub fn from_json(bytes: &[u8]) -> Result<Self, SynthError> {
        let pack: ScenarioPack =
            serde_json::from_slice(bytes).map_err(|e| SynthError::MalformedScenario(e.to_string()))?;
        for sc in &pack.scenarios {
            sc.validate()?;
        }
        Ok(pack)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("pack serializes");
        s.push('\n');
        s
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.scenarios
            .iter()
            .flat_map(|s| &s.events)
            .filter(|e| e.kind == kind)
            .count()
    }
}

pub const BENCH_NOISE_SIGMA: f64 = 0.02;
pub const BENCH_RATE_HZ: f64 = 100.0;
pub const CALIBRATION_SEED: u64 = 7;

/// Sequential scenario builder; times in ms, rounded to 10 ms.
struct Timeline {
    t: u64,
    events: Vec<Event>,
}

impl Timeline {
    fn new(lead_ms: u64) -> Self {
        Self { t: lead_ms, events: Vec::new() }
    }

    fn push(&mut self, kind: EventKind, dur_ms: u64) {
        self.events.push(Event {
            kind,
            start_ms: self.t,
            end_ms: self.t + dur_ms,
        });
        self.t += dur_ms;
    }

    fn pause(&mut self, ms: u64) {
        self.t += ms;
    }

    fn finish(self, seed: u64) -> Scenario {
        Scenario {
            seed,
            duration_ms: self.t,
            rate_hz: BENCH_RATE_HZ,
            noise_sigma: BENCH_NOISE_SIGMA,
            events: self.events,
        }
    }
}

fn ms(rng: &mut ChaCha8Rng, lo: u64, hi: u64) -> u64 {
    rng.gen_range(lo / 10..=hi / 10) * 10
}

fn activity_ms(rng: &mut ChaCha8Rng, kind: EventKind) -> u64 {
    match kind {
        EventKind::Fall => ms(rng, 1000, 1500),
        _ => ms(rng, 1500, 2500),
    }
}

/// Traces of fall / fall-like activities, each followed by rest. A quarter of
/// the traces end with the person standing up and walking off.
fn activity_pack(name: &str, pack_seed: u64, seed_base: u64, kinds: Vec<EventKind>, per_trace: usize) -> ScenarioPack {
    let mut rng = ChaCha8Rng::seed_from_u64(pack_seed);
    let mut kinds = kinds;
    kinds.shuffle(&mut rng);
    let scenarios = kinds
        .chunks(per_trace)
        .enumerate()
        .map(|(n, chunk)| {
            let mut tl = Timeline::new(ms(&mut rng, 3500, 4000));
            for &k in chunk {
                let d = activity_ms(&mut rng, k);
                tl.push(k, d);
                tl.pause(ms(&mut rng, 2500, 3500));
            }
            if n % 4 == 3 {
                let d = ms(&mut rng, 800, 1200);
                tl.push(EventKind::StandUp, d);
                let d = ms(&mut rng, 2000, 3000);
                tl.push(EventKind::Walk, d);
            }
            tl.finish(seed_base + n as u64)
        })
        .collect();
    ScenarioPack {
        name: name.into(),
        scenarios,
    }
}

/// 230 falls and 510 fall-like activities (255 sit-downs, 255 lie-downs),
/// four per trace, followed by 24 traces of walking, sweeping and standing up
/// that should produce no endpoint.
pub fn benchmark_pack() -> ScenarioPack {
    let mut kinds = vec![EventKind::Fall; 230];
    kinds.extend(vec![EventKind::SitDown; 255]);
    kinds.extend(vec![EventKind::LieDown; 255]);
    let mut pack = activity_pack("benchmark", 0xB0, 1000, kinds, 4);
    pack.scenarios.extend(motion_only_scenarios(0xB1, 1500, 24));
    pack
}

/// Names accepted by [`builtin_pack`].
pub const PACK_NAMES: [&str; 3] = ["benchmark", "training", "burst3s"];

pub fn builtin_pack(name: &str) -> Option<ScenarioPack> {
    match name {
        "benchmark" => Some(benchmark_pack()),
        "training" => Some(training_pack()),
        "burst3s" => Some(burst_pack()),
        _ => None,
    }
}

/// Falls only, on seeds disjoint from the benchmark.
pub fn training_pack() -> ScenarioPack {
    activity_pack("training", 0x7A, 5000, vec![EventKind::Fall; 480], 4)
}

/// Ongoing motion with no fluctuation-to-stable transition.
pub fn motion_only_scenarios(pack_seed: u64, seed_base: u64, n: usize) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(pack_seed);
    (0..n)
        .map(|i| {
            let mut tl = Timeline::new(ms(&mut rng, 3000, 4000));
            match i % 3 {
                0 => tl.push(EventKind::Walk, ms(&mut rng, 6000, 10000)),
                1 => tl.push(EventKind::Sweep, ms(&mut rng, 6000, 10000)),
                _ => {
                    let d = ms(&mut rng, 800, 1200);
                    tl.push(EventKind::StandUp, d);
                    let d = ms(&mut rng, 4000, 8000);
                    tl.push(EventKind::Walk, d);
                }
            }
            tl.finish(seed_base + i as u64)
        })
        .collect()
}

/// 3 s bursts: 150 falls (collapse within the first 400 ms, then settling)
/// and 150 lie-downs. Each burst follows a walk, a sweep or a pause directly,
/// so windows longer than the burst pick up unrelated context.
pub fn burst_pack() -> ScenarioPack {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3B);
    let mut kinds = vec![EventKind::Fall; 150];
    kinds.extend(vec![EventKind::LieDown; 150]);
    kinds.shuffle(&mut rng);
    let scenarios = kinds
        .chunks(3)
        .enumerate()
        .map(|(n, chunk)| {
            let mut tl = Timeline::new(ms(&mut rng, 3000, 3500));
            for &k in chunk {
                let d = ms(&mut rng, 500, 2500);
                match rng.gen_range(0..3) {
                    0 => tl.push(EventKind::Walk, d),
                    1 => tl.push(EventKind::Sweep, d),
                    _ => tl.pause(d),
                }
                tl.push(k, 3000);
                tl.pause(ms(&mut rng, 3000, 3500));
            }
            tl.finish(8000 + n as u64)
        })
        .collect();
    ScenarioPack {
        name: "burst3s".into(),
        scenarios,
    }
}

/// A still recording for threshold calibration.
pub fn still_scenario(seed: u64, duration_ms: u64) -> Scenario {
    Scenario {
        seed,
        duration_ms,
        rate_hz: BENCH_RATE_HZ,
        noise_sigma: BENCH_NOISE_SIGMA,
        events: Vec::new(),
    }
}

/// One fall in the middle of a 12 s recording.
pub fn single_fall_scenario(seed: u64) -> Scenario {
    Scenario {
        seed,
        duration_ms: 12_000,
        rate_hz: BENCH_RATE_HZ,
        noise_sigma: BENCH_NOISE_SIGMA,
        events: vec![Event {
            kind: EventKind::Fall,
            start_ms: 4000,
            end_ms: 5200,
        }],
    }
}
