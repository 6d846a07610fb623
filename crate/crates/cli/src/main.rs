//! `scenario`: extract, evaluate, synthesize and serve.
//!
//! Exit codes: 0 ok, 1 I/O, 2 usage, 3 schema (tracks, query, labels or
//! manifest), 4 interpretation, 5 provider, 6 export.

use clap::{Args, Parser, Subcommand, ValueEnum};
use scenario_core::activity::DetectionParams;
use scenario_core::criticality::{Comparison, CriticalityConfig, MetricKind, MetricParams};
use scenario_core::evaluation::{
    classification_metrics, match_predictions, read_labels, write_labels, ClassificationMetrics,
    ConfusionCounts, GroundTruthLabel, MatchMode,
};
use scenario_core::export::ExportConfig;
use scenario_core::pipeline::{run_pipeline, ExportFormat, Manifest, PipelineConfig, PipelineError, MANIFEST_VERSION};
use scenario_core::schema::{to_braced_text, validate_query, ScenarioQuery};
use scenario_core::search::SearchParams;
use scenario_core::store::{parse_tracks_csv, RecordingConfig, StoreError, DEFAULT_FRAME_RATE};
use scenario_core::synth::{synthetic_corpus, CorpusSpec};
use scenario_core::understanding::{interpret, InterpretError, Provider, ProviderConfig};
use serde::Serialize;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Interpretation(String),
    #[error("{0}")]
    Provider(String),
    #[error("{0}")]
    Export(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Schema(_) => 3,
            CliError::Interpretation(_) => 4,
            CliError::Provider(_) => 5,
            CliError::Export(_) => 6,
        }
    }
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Parser)]
#[command(name = "scenario", version, about = "Driving-scenario extraction from trajectory recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search a recording for a described scenario and export the pool.
    Extract(ExtractArgs),
    /// Score extraction manifests against ground-truth labels.
    Evaluate(EvaluateArgs),
    /// Write a synthetic recording and its labels.
    Synth(SynthArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("query").required(true).args(["query_text", "query_json"])))]
struct ExtractArgs {
    /// tracks.csv of one recording
    #[arg(long)]
    tracks: PathBuf,
    /// defaults to the file stem
    #[arg(long)]
    recording_id: Option<String>,
    #[arg(long, default_value_t = DEFAULT_FRAME_RATE)]
    frame_rate: f64,
    #[arg(long)]
    query_text: Option<String>,
    /// canonical ScenarioQuery JSON
    #[arg(long)]
    query_json: Option<PathBuf>,
    #[arg(long, default_value = "offline")]
    provider: Provider,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// criticality metric; without it every match is selected
    #[arg(long, requires = "threshold")]
    metric: Option<MetricKind>,
    #[arg(long, requires = "metric", allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// defaults to the metric's own direction
    #[arg(long, requires = "metric")]
    cmp: Option<Comparison>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "xosc")]
    format: Vec<ExportFormat>,
    /// label stored in the manifest for evaluation
    #[arg(long)]
    category: Option<String>,
    /// m/s²
    #[arg(long, default_value_t = DetectionParams::default().a_lon_threshold)]
    accel_threshold: f64,
    /// seconds
    #[arg(long, default_value_t = DetectionParams::default().min_activity_duration)]
    min_activity_duration: f64,
    /// seconds
    #[arg(long, default_value_t = DetectionParams::default().lane_change_half_window)]
    lane_change_half_window: f64,
    /// seconds
    #[arg(long, default_value_t = SearchParams::default().end_position_grace)]
    end_position_grace: f64,
    /// seconds
    #[arg(long, default_value_t = SearchParams::default().min_window_duration)]
    min_window_duration: f64,
    #[arg(long, default_value_t = ExportConfig::default().precision)]
    precision: usize,
    /// keep dataset y as is (default negates it)
    #[arg(long)]
    no_flip_y: bool,
    /// ego columns in the CarMaker text too
    #[arg(long)]
    include_ego_in_text: bool,
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Instance,
    Frame,
}

impl From<ModeArg> for MatchMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Instance => MatchMode::Instance,
            ModeArg::Frame => MatchMode::Frame,
        }
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// manifest.json from extract; repeat for several categories
    #[arg(long, required = true)]
    predictions: Vec<PathBuf>,
    /// labels CSV (category, egoId, targetId, frameStart, frameEnd)
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value = "instance")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    iou: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    following: usize,
    #[arg(long, default_value_t = 0)]
    cut_in: usize,
    #[arg(long, default_value_t = 0)]
    cut_out: usize,
    #[arg(long, default_value_t = 0)]
    distractors: usize,
    #[arg(long, default_value_t = DEFAULT_FRAME_RATE)]
    frame_rate: f64,
    /// writes tracks.csv and labels.csv here
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
    /// keep uploads and pools on disk
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// seconds
    #[arg(long, default_value_t = 3600)]
    session_idle: u64,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => extract(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn provider_config(endpoint: Option<String>, model: Option<String>, retries: Option<u32>) -> ProviderConfig {
    let mut cfg = ProviderConfig::from_env();
    if let Some(e) = endpoint {
        cfg.endpoint = e;
    }
    if let Some(m) = model {
        cfg.model = m;
    }
    if let Some(r) = retries {
        cfg.max_retries = r;
    }
    cfg
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io(format!("writing {}", path.display())))
}

fn store_error(e: StoreError) -> CliError {
    match e {
        StoreError::Io(source) => CliError::Io {
            context: "reading tracks".into(),
            source,
        },
        other => CliError::Schema(format!("tracks: {other}")),
    }
}

fn extract(a: ExtractArgs) -> Result<(), CliError> {
    let recording_id = a.recording_id.clone().unwrap_or_else(|| {
        a.tracks
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "recording".into())
    });
    let criticality = a.metric.map(|kind| {
        let c = CriticalityConfig::new(kind, a.threshold.expect("required by clap"));
        match a.cmp {
            Some(cmp) => c.with_comparison(cmp),
            None => c,
        }
    });
    let config = PipelineConfig {
        recording: RecordingConfig::new(recording_id, a.frame_rate),
        search: SearchParams {
            detection: DetectionParams {
                a_lon_threshold: a.accel_threshold,
                min_activity_duration: a.min_activity_duration,
                lane_change_half_window: a.lane_change_half_window,
            },
            end_position_grace: a.end_position_grace,
            min_window_duration: a.min_window_duration,
        },
        criticality,
        metric_params: MetricParams::default(),
        export: ExportConfig {
            flip_y: !a.no_flip_y,
            include_ego_in_text: a.include_ego_in_text,
            precision: a.precision,
        },
        formats: a.format.clone(),
        parallel: !a.sequential,
    };
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out).map_err(io(format!("creating {}", a.out.display())))?;
    let mut log = Vec::new();

    let (query, transcript) = match (&a.query_text, &a.query_json) {
        (Some(text), None) => {
            let pcfg = provider_config(a.endpoint.clone(), a.model.clone(), a.max_retries);
            log.push(format!(
                "interpreting description with the {} provider",
                format!("{:?}", a.provider).to_lowercase()
            ));
            match interpret(text, a.provider, &pcfg) {
                Ok((q, t)) => (q, t),
                Err(e) => {
                    if let InterpretError::Provider { transcript, .. } = &e {
                        let json = serde_json::to_string_pretty(transcript).expect("serializable");
                        write(&a.out.join("transcript.json"), json)?;
                    }
                    return Err(match e {
                        InterpretError::Provider { .. } | InterpretError::Credential(_) => {
                            CliError::Provider(e.to_string())
                        }
                        InterpretError::Config(m) => CliError::Usage(m),
                        other => CliError::Interpretation(other.to_string()),
                    });
                }
            }
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(io(format!("reading {}", path.display())))?;
            let q: ScenarioQuery = serde_json::from_str(&text)
                .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
            log.push(format!("query read from {}", path.display()));
            (q, None)
        }
        _ => return Err(CliError::Usage("give exactly one of --query-text, --query-json".into())),
    };
    if let Err(v) = validate_query(query.clone()) {
        let msg: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        return Err(CliError::Schema(format!("query: {}", msg.join("; "))));
    }
    if let Some(t) = &transcript {
        let json = serde_json::to_string_pretty(t).expect("serializable");
        write(&a.out.join("transcript.json"), json)?;
    }
    log.push(format!("query:\n{}", to_braced_text(&query)));

    let file = File::open(&a.tracks).map_err(io(format!("opening {}", a.tracks.display())))?;
    let store = parse_tracks_csv(BufReader::new(file), config.recording.clone()).map_err(store_error)?;
    log.push(format!(
        "loaded {} vehicles, {} rows from {}",
        store.len(),
        store.row_count(),
        a.tracks.display()
    ));

    let out = run_pipeline(
        &store,
        &query,
        a.query_text.as_deref(),
        a.category.as_deref(),
        &config,
    )
    .map_err(|e| match e {
        PipelineError::Schema(_) => CliError::Schema(e.to_string()),
        PipelineError::Config(_) => CliError::Usage(e.to_string()),
        PipelineError::Export { .. } => CliError::Export(e.to_string()),
    })?;
    log.push(format!(
        "{} matches, {} selected",
        out.manifest.match_count, out.manifest.selected_count
    ));
    for f in &out.files {
        write(&a.out.join(&f.file_name), &f.content)?;
        log.push(format!("wrote {}", f.file_name));
    }
    let manifest_path = a.out.join("manifest.json");
    let json = serde_json::to_string_pretty(&out.manifest).expect("serializable");
    write(&manifest_path, json + "\n")?;
    log.push("wrote manifest.json".into());
    write(&a.out.join("run.log"), log.join("\n") + "\n")?;
    println!(
        "{}",
        serde_json::json!({
            "manifest": manifest_path,
            "match_count": out.manifest.match_count,
            "selected_count": out.manifest.selected_count,
        })
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct CategoryResult {
    category: Option<String>,
    predictions: usize,
    labels: usize,
    counts: ConfusionCounts,
    metrics: ClassificationMetrics,
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    mode: MatchMode,
    iou_threshold: f64,
    categories: Vec<CategoryResult>,
    total: CategoryResult,
}

fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path).map_err(io(format!("reading {}", path.display())))?;
    let probe: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    let version = probe.get("manifest_version").and_then(|v| v.as_u64());
    if version != Some(MANIFEST_VERSION as u64) {
        return Err(CliError::Schema(format!(
            "{}: manifest_version {:?} is not supported (expected {MANIFEST_VERSION})",
            path.display(),
            version
        )));
    }
    serde_json::from_value(probe).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let mode: MatchMode = a.mode.into();
    let file = File::open(&a.truth).map_err(io(format!("opening {}", a.truth.display())))?;
    let truth = read_labels(BufReader::new(file))
        .map_err(|e| CliError::Schema(format!("{}: {e}", a.truth.display())))?;
    let mut categories = Vec::new();
    let mut total_counts = ConfusionCounts::default();
    let (mut total_pred, mut total_labels) = (0, 0);
    for path in &a.predictions {
        let manifest = read_manifest(path)?;
        let predictions = manifest.predictions();
        let labels: Vec<GroundTruthLabel> = truth
            .iter()
            .filter(|t| manifest.category.as_ref().is_none_or(|c| *c == t.category))
            .cloned()
            .collect();
        let counts = match_predictions(&predictions, &labels, mode, a.iou)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        total_counts = total_counts + counts;
        total_pred += predictions.len();
        total_labels += labels.len();
        categories.push(CategoryResult {
            category: manifest.category.clone(),
            predictions: predictions.len(),
            labels: labels.len(),
            counts,
            metrics: classification_metrics(counts),
        });
    }
    let report = EvaluationReport {
        mode,
        iou_threshold: a.iou,
        total: CategoryResult {
            category: None,
            predictions: total_pred,
            labels: total_labels,
            counts: total_counts,
            metrics: classification_metrics(total_counts),
        },
        categories,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let spec = CorpusSpec {
        following: a.following,
        cut_in: a.cut_in,
        cut_out: a.cut_out,
        distractors: a.distractors,
    };
    let corpus = synthetic_corpus(a.seed, spec, a.frame_rate).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out).map_err(io(format!("creating {}", a.out.display())))?;
    write(&a.out.join("tracks.csv"), corpus.csv())?;
    let mut buf = Vec::new();
    write_labels(&mut buf, &corpus.labels).map_err(|e| CliError::Schema(e.to_string()))?;
    write(&a.out.join("labels.csv"), buf)?;
    println!(
        "{}",
        serde_json::json!({
            "tracks": a.out.join("tracks.csv"),
            "labels": a.out.join("labels.csv"),
            "vehicles": corpus.store.len(),
            "label_count": corpus.labels.len(),
        })
    );
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let config = scenario_service::ServiceConfig {
        idle_timeout: std::time::Duration::from_secs(a.session_idle),
        data_dir: a.data_dir,
        provider: provider_config(a.endpoint, a.model, None),
        ..Default::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(io("starting runtime"))?;
    runtime
        .block_on(scenario_service::serve(a.addr, scenario_service::AppState::new(config)))
        .map_err(io(format!("serving on {}", a.addr)))
}
