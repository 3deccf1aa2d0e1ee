use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use antifall::config::ConfigError;
use antifall::harness::{
    evaluate, labeled_segments, run_detector, run_streaming, search_window_size, segment_trace, train_on,
    Detection, HarnessError, LabeledSegment, WindowSearch,
};
use antifall::ocsvm::{Label, SvmError};
use antifall::segmentation::calibrate_threshold;
use antifall::synth::{builtin_pack, generate_trace_with, load_scenario, GroundTruth, ScenarioPack, SynthParams, PACK_NAMES};
use antifall::trace::{parse_trace, write_trace};
use antifall::{ActivitySegment, Config, CsiTrace, Execution, OcSvmModel, StableThreshold};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Device-free fall detection from WiFi CSI traces.
#[derive(Parser)]
#[command(name = "afd", version)]
struct Cli {
    /// JSON config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set svm.nu=0.1`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic trace and its ground truth.
    Simulate(SimulateArgs),
    /// Fit the stable-state threshold on a still recording.
    Calibrate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find activity endpoints and optionally cut labeled windows.
    Segment {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        threshold: PathBuf,
        #[arg(long)]
        window_ms: Option<f64>,
        /// Write one `<trace_id>-seg-NNN.json` per endpoint here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Label the written windows from this ground truth; labels are
        /// merged into `<out_dir>/labels.json`.
        #[arg(long, requires = "out_dir")]
        truth: Option<PathBuf>,
    },
    /// Train the one-class model on fall-labeled windows.
    Train {
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the detector on a trace.
    Detect {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        threshold: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Feed packets one at a time through the streaming detector.
        #[arg(long)]
        stream: bool,
        #[arg(long, default_value_t = 64)]
        chunk: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score detections against ground truth.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Coarse-then-fine search for the activity window size.
    SearchWindow {
        /// Directory of `*.csi.jsonl` traces with `*.truth.json` sidecars.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        threshold: PathBuf,
    },
    /// Write a built-in scenario pack.
    Pack {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PACK_NAMES))]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct SimulateSource {
    /// One `.scenario.json`.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// A scenario pack; writes one trace per scenario.
    #[arg(long)]
    pack: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: SimulateSource,
    /// Trace path for `--scenario`.
    #[arg(long, required_unless_present = "pack")]
    out: Option<PathBuf>,
    /// Ground-truth path for `--scenario`; defaults next to the trace.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output directory for `--pack`.
    #[arg(long, required_unless_present = "scenario")]
    out_dir: Option<PathBuf>,
    /// Generator constants (JSON); defaults otherwise.
    #[arg(long)]
    params: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Config(String),
    Insufficient(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Input(_) => 2,
            Failure::Config(_) => 3,
            Failure::Insufficient(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Config(m) | Failure::Insufficient(m) | Failure::Other(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Incompatible(_) => Failure::Config(e.to_string()),
            HarnessError::InsufficientData(_) | HarnessError::Svm(SvmError::EmptyTrainingSet) => {
                Failure::Insufficient(e.to_string())
            }
            HarnessError::Svm(_) => Failure::Other(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write(path, s)
}

fn print_json<T: Serialize>(value: &T) {
    use std::io::Write;
    // a closed pipe (`afd eval ... | head`) is not an error
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn read_trace(path: &Path) -> Result<CsiTrace> {
    parse_trace(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn read_model(path: &Path) -> Result<OcSvmModel> {
    OcSvmModel::from_json(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))
}

/// `t.csi.jsonl` -> `t.truth.json`.
fn truth_path_for(trace: &Path) -> PathBuf {
    let name = trace.file_name().and_then(|n| n.to_str()).unwrap_or("trace");
    let stem = name.strip_suffix(".csi.jsonl").unwrap_or(name);
    trace.with_file_name(format!("{stem}.truth.json"))
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            Config::from_json(&bytes)?
        }
        None => Config::default(),
    };
    for kv in &cli.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("`--set {kv}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let params: SynthParams = match &args.params {
        Some(p) => read_json(p)?,
        None => SynthParams::default(),
    };
    if let Some(path) = &args.source.scenario {
        let sc = load_scenario(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let out = args.out.as_ref().expect("clap enforces --out");
        let (trace, truth) = generate_trace_with(&sc, &params).map_err(|e| Failure::Input(e.to_string()))?;
        write(out, write_trace(&trace))?;
        write_json(&args.truth.clone().unwrap_or_else(|| truth_path_for(out)), &truth)?;
        eprintln!("{}: {} packets", out.display(), trace.len());
        return Ok(());
    }
    let path = args.source.pack.as_ref().expect("clap enforces one source");
    let pack = ScenarioPack::from_json(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let dir = args.out_dir.as_ref().expect("clap enforces --out-dir");
    create_dir(dir)?;
    let generated = antifall::par::try_map(Execution::default(), &pack.scenarios, |sc| generate_trace_with(sc, &params))
        .map_err(|e| Failure::Input(e.to_string()))?;
    for (trace, truth) in &generated {
        let out = dir.join(format!("{}.csi.jsonl", trace.meta.trace_id));
        write(&out, write_trace(trace))?;
        write_json(&truth_path_for(&out), truth)?;
    }
    eprintln!("{}: {} traces", dir.display(), generated.len());
    Ok(())
}

fn segment(
    cfg: &Config,
    trace: &Path,
    threshold: &Path,
    out_dir: Option<&Path>,
    truth: Option<&Path>,
) -> Result<()> {
    let t = read_trace(trace)?;
    let th: StableThreshold = read_json(threshold)?;
    let seg = segment_trace(&t, cfg, &th)?;
    print_json(&serde_json::json!({ "trace_id": t.meta.trace_id, "endpoints_us": seg.endpoints }));
    let Some(dir) = out_dir else {
        return Ok(());
    };
    create_dir(dir)?;
    let windows: Vec<(ActivitySegment, Option<Label>)> = match truth {
        Some(p) => {
            let g: GroundTruth = read_json(p)?;
            labeled_segments(&t, &g, cfg, &th, cfg.segment.window_ms)?
                .into_iter()
                .map(|s| (s.segment, Some(s.label)))
                .collect()
        }
        None => {
            let subs = antifall::harness::feature_subcarriers(cfg, &t.meta)?;
            seg.segments(cfg.segment.window_ms, &subs).into_iter().map(|s| (s, None)).collect()
        }
    };
    // labels accumulate across traces segmented into the same directory
    let labels_path = dir.join("labels.json");
    let mut labels: BTreeMap<String, Label> = if truth.is_some() && labels_path.exists() {
        read_json(&labels_path)?
    } else {
        BTreeMap::new()
    };
    for (i, (s, label)) in windows.iter().enumerate() {
        let name = format!("{}-seg-{i:03}.json", t.meta.trace_id);
        write_json(&dir.join(&name), s)?;
        if let Some(l) = label {
            labels.insert(name, *l);
        }
    }
    if truth.is_some() {
        write_json(&labels_path, &labels)?;
    }
    eprintln!("{}: {} windows", dir.display(), windows.len());
    Ok(())
}

fn train(cfg: &Config, segments: &Path, labels: &Path, out: &Path) -> Result<()> {
    let labels: BTreeMap<String, Label> = read_json(labels)?;
    let data = labels
        .iter()
        .map(|(name, &label)| {
            Ok(LabeledSegment {
                label,
                kind: None,
                segment: read_json(&segments.join(name))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = train_on(&data, cfg, cfg.features.channels)?;
    write(out, model.to_json())?;
    eprintln!(
        "{}: {} support vectors, nu {}, gamma {:.6}",
        out.display(),
        model.support_vectors.len(),
        model.nu,
        model.gamma
    );
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<Vec<(CsiTrace, GroundTruth)>> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".csi.jsonl")))
        .collect();
    paths.sort();
    paths.iter().map(|p| Ok((read_trace(p)?, read_json(&truth_path_for(p))?))).collect()
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Simulate(args) => simulate(args),
        Cmd::Calibrate { trace, out } => {
            let cfg = load_config(cli)?;
            let th = calibrate_threshold(&read_trace(trace)?, &cfg).map_err(|e| Failure::Input(e.to_string()))?;
            write_json(out, &th)?;
            eprintln!("delta {:.4} (mu {:.4}, sigma {:.4})", th.delta, th.mu_stable, th.sigma_stable);
            Ok(())
        }
        Cmd::Segment {
            trace,
            threshold,
            window_ms,
            out_dir,
            truth,
        } => {
            let mut cfg = load_config(cli)?;
            if let Some(w) = window_ms {
                cfg.set("segment.window_ms", &w.to_string())?;
            }
            segment(&cfg, trace, threshold, out_dir.as_deref(), truth.as_deref())
        }
        Cmd::Train { segments, labels, out } => train(&load_config(cli)?, segments, labels, out),
        Cmd::Detect {
            trace,
            threshold,
            model,
            stream,
            chunk,
            out,
        } => {
            let cfg = load_config(cli)?;
            let t = read_trace(trace)?;
            let th: StableThreshold = read_json(threshold)?;
            let m = read_model(model)?;
            let dets: Vec<Detection> = if *stream {
                run_streaming(&t, &cfg, &th, &m, *chunk)?
            } else {
                run_detector(&t, &cfg, &th, &m)?
            };
            match out {
                Some(p) => write_json(p, &dets),
                None => {
                    print_json(&dets);
                    Ok(())
                }
            }
        }
        Cmd::Eval { detections, truth } => {
            let cfg = load_config(cli)?;
            let dets: Vec<Detection> = read_json(detections)?;
            let g: GroundTruth = read_json(truth)?;
            print_json(&evaluate(&dets, &g, cfg.eval.match_tol_ms));
            Ok(())
        }
        Cmd::SearchWindow { corpus, threshold } => {
            let cfg = load_config(cli)?;
            let th: StableThreshold = read_json(threshold)?;
            let cases = load_corpus(corpus)?;
            let search = WindowSearch::default();
            let data = antifall::harness::labeled_corpus(&cases, &cfg, &th, search.hi_ms, Execution::default())?;
            let res = search_window_size(&data, &search, &cfg, Execution::default())?;
            print_json(&res);
            Ok(())
        }
        Cmd::Pack { name, out } => {
            let pack = builtin_pack(name).expect("clap restricts names");
            write(out, pack.to_json())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("afd: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
