#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use antifall::harness::{labeled_corpus, train_on};
use antifall::segmentation::calibrate_threshold;
use antifall::synth::{generate_trace, still_scenario, GroundTruth, ScenarioPack, CALIBRATION_SEED};
use antifall::{ChannelMode, Config, CsiTrace, Execution, OcSvmModel, StableThreshold};

pub type Case = (CsiTrace, GroundTruth);

pub fn pack_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("packs").join(format!("{name}.pack.json"))
}

pub fn shipped_pack(name: &str) -> ScenarioPack {
    ScenarioPack::from_json(&std::fs::read(pack_path(name)).expect("pack file")).expect("valid pack")
}

pub fn generate(pack: &ScenarioPack) -> Vec<Case> {
    antifall::par::map(Execution::Parallel, &pack.scenarios, |s| generate_trace(s).expect("valid scenario"))
}

pub fn threshold() -> &'static StableThreshold {
    static TH: OnceLock<StableThreshold> = OnceLock::new();
    TH.get_or_init(|| {
        let (still, _) = generate_trace(&still_scenario(CALIBRATION_SEED, 60_000)).unwrap();
        calibrate_threshold(&still, &Config::default()).unwrap()
    })
}

pub fn training_cases() -> &'static [Case] {
    static CASES: OnceLock<Vec<Case>> = OnceLock::new();
    CASES.get_or_init(|| generate(&shipped_pack("training")))
}

pub fn benchmark_cases() -> &'static [Case] {
    static CASES: OnceLock<Vec<Case>> = OnceLock::new();
    CASES.get_or_init(|| generate(&shipped_pack("benchmark")))
}

pub fn trained_model(channels: ChannelMode) -> OcSvmModel {
    let cfg = Config::default();
    let segs = labeled_corpus(training_cases(), &cfg, threshold(), cfg.segment.window_ms, Execution::Parallel).unwrap();
    train_on(&segs, &cfg, channels).unwrap()
}

pub fn default_model() -> &'static OcSvmModel {
    static M: OnceLock<OcSvmModel> = OnceLock::new();
    M.get_or_init(|| trained_model(ChannelMode::AmplitudeAndPhase))
}
