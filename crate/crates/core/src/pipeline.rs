//! One-shot extraction: query + recording -> scored pool + export files.
//!
//! The [`Manifest`] produced here is what `extract` writes and what
//! `evaluate` reads back.

use crate::criticality::{evaluate_match, CriticalityConfig, MetricParams, PoolEntry};
use crate::evaluation::Prediction;
use crate::export::{to_carmaker_text, to_openscenario, ExportConfig, ExportError};
use crate::interval::FrameInterval;
use crate::par::{self, Execution};
use crate::schema::{validate_query, ScenarioQuery, Violation};
use crate::search::{find_matches_with, ScenarioMatch, SearchParams};
use crate::store::{RecordingConfig, TrajectoryStore, VehicleId};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid query: {}", join(.0))]
    Schema(Vec<Violation>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("export of {scenario_id} failed: {source}")]
    Export {
        scenario_id: String,
        source: ExportError,
    },
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Xosc,
    Cmtxt,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Xosc => "xosc",
            ExportFormat::Cmtxt => "txt",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            ExportFormat::Xosc => "application/xml",
            ExportFormat::Cmtxt => "text/plain; charset=utf-8",
        }
    }

    pub fn render(
        self,
        scenario: &ScenarioMatch,
        store: &TrajectoryStore,
        cfg: &ExportConfig,
    ) -> Result<String, ExportError> {
        match self {
            ExportFormat::Xosc => to_openscenario(scenario, store, cfg),
            ExportFormat::Cmtxt => to_carmaker_text(scenario, store, cfg),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportFormat::Xosc => "xosc",
            ExportFormat::Cmtxt => "cmtxt",
        })
    }
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "xosc" => Ok(ExportFormat::Xosc),
            "cmtxt" => Ok(ExportFormat::Cmtxt),
            other => Err(format!("unknown export format `{other}`, expected xosc or cmtxt")),
        }
    }
}

/// Every knob of a run, defaults included, so a manifest can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub recording: RecordingConfig,
    pub search: SearchParams,
    /// Without a metric every match is selected.
    pub criticality: Option<CriticalityConfig>,
    pub metric_params: MetricParams,
    pub export: ExportConfig,
    pub formats: Vec<ExportFormat>,
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            recording: RecordingConfig::default(),
            search: SearchParams::default(),
            criticality: None,
            metric_params: MetricParams::default(),
            export: ExportConfig::default(),
            formats: vec![ExportFormat::Xosc],
            parallel: true,
        }
    }
}

impl PipelineConfig {
    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let e = |s: String| PipelineError::Config(s);
        self.recording.validate().map_err(|x| e(x.to_string()))?;
        self.search.detection.validate().map_err(|x| e(x.to_string()))?;
        self.metric_params.validate().map_err(|x| e(x.to_string()))?;
        self.export.validate().map_err(|x| e(x.to_string()))?;
        if !(self.search.end_position_grace.is_finite() && self.search.end_position_grace >= 0.0) {
            return Err(e("end_position_grace must be non-negative".into()));
        }
        if !(self.search.min_window_duration.is_finite() && self.search.min_window_duration >= 0.0)
        {
            return Err(e("min_window_duration must be non-negative".into()));
        }
        if let Some(c) = &self.criticality {
            if !c.threshold.is_finite() {
                return Err(e(format!("threshold must be finite, got {}", c.threshold)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scenario_id: String,
    #[serde(flatten)]
    pub entry: PoolEntry,
    /// format -> file name, only for selected entries
    #[serde(default)]
    pub exports: Vec<(ExportFormat, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub category: Option<String>,
    pub description: Option<String>,
    pub query: ScenarioQuery,
    pub config: PipelineConfig,
    pub match_count: usize,
    pub selected_count: usize,
    pub matches: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn selected(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.matches.iter().filter(|m| m.entry.passes)
    }

    /// Predictions of the selected pool, one per ego-target pair.
    pub fn predictions(&self) -> Vec<Prediction> {
        self.selected()
            .flat_map(|m| Prediction::from_match(&m.entry.scenario, self.category.as_deref()))
            .collect()
    }
}

/// An export rendered in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportFile {
    pub scenario_id: String,
    pub format: ExportFormat,
    pub file_name: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub manifest: Manifest,
    pub files: Vec<ExportFile>,
}

pub fn scenario_id(m: &ScenarioMatch) -> String {
    let targets: Vec<String> = m.targets.iter().map(|t| t.target_id.to_string()).collect();
    format!(
        "{}-ego{}-t{}-f{}",
        m.recording_id,
        m.ego_id,
        targets.join("_"),
        m.scenario_window.start
    )
}

/// Search + criticality for one recording; entries keep search order.
pub fn score_matches(
    store: &TrajectoryStore,
    query: &ScenarioQuery,
    config: &PipelineConfig,
) -> Result<Vec<PoolEntry>, PipelineError> {
    config.validate()?;
    let q = validate_query(query.clone()).map_err(PipelineError::Schema)?;
    let exec = config.execution();
    let matches = find_matches_with(store, &q, &config.search, exec);
    Ok(match &config.criticality {
        Some(c) => par::map(exec, &matches, |m| {
            evaluate_match(store, m, c, &config.metric_params)
        }),
        None => matches
            .into_iter()
            .map(|scenario| PoolEntry {
                scenario,
                reports: Vec::new(),
                passes: true,
            })
            .collect(),
    })
}

/// Full run: search, score, and render the selected scenarios.
pub fn run_pipeline(
    store: &TrajectoryStore,
    query: &ScenarioQuery,
    description: Option<&str>,
    category: Option<&str>,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let mut config = config.clone();
    if let Some(c) = &mut config.criticality {
        c.comparison = Some(c.comparison());
    }
    let config = &config;
    let entries = score_matches(store, query, config)?;
    let mut files = Vec::new();
    let mut matches = Vec::with_capacity(entries.len());
    for entry in entries {
        let id = scenario_id(&entry.scenario);
        let mut exports = Vec::new();
        if entry.passes {
            for &format in &config.formats {
                let content = format
                    .render(&entry.scenario, store, &config.export)
                    .map_err(|source| PipelineError::Export {
                        scenario_id: id.clone(),
                        source,
                    })?;
                let file_name = format!("{id}.{}", format.extension());
                exports.push((format, file_name.clone()));
                files.push(ExportFile {
                    scenario_id: id.clone(),
                    format,
                    file_name,
                    content,
                });
            }
        }
        matches.push(ManifestEntry {
            scenario_id: id,
            entry,
            exports,
        });
    }
    let selected_count = matches.iter().filter(|m| m.entry.passes).count();
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        category: category.map(str::to_string),
        description: description.map(str::to_string),
        query: query.clone(),
        config: config.clone(),
        match_count: matches.len(),
        selected_count,
        matches,
    };
    Ok(PipelineOutput { manifest, files })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Ego,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub role: Role,
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub lane_id: u32,
    pub x_velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub frame: u32,
    /// seconds since the scenario start
    pub time: f64,
    pub vehicles: Vec<VehicleState>,
    /// metric value per target in scenario order; `None` where undefined
    pub metrics: Vec<Option<f64>>,
}

/// Per-frame states over the scenario window, every `stride`-th frame.
pub fn scenario_frames(entry: &PoolEntry, store: &TrajectoryStore, stride: u32) -> Vec<FrameState> {
    let stride = stride.max(1);
    let w: FrameInterval = entry.scenario.scenario_window;
    let fr = store.frame_rate();
    let mut actors = vec![(entry.scenario.ego_id, Role::Ego)];
    actors.extend(entry.scenario.targets.iter().map(|t| (t.target_id, Role::Target)));
    w.frames()
        .step_by(stride as usize)
        .map(|frame| {
            let vehicles = actors
                .iter()
                .filter_map(|&(id, role)| {
                    let s = store.get(id).ok()?.sample_at(frame)?;
                    Some(VehicleState {
                        id,
                        role,
                        x: s.x,
                        y: s.y,
                        width: s.width,
                        height: s.height,
                        lane_id: s.lane_id,
                        x_velocity: s.x_velocity,
                    })
                })
                .collect();
            let metrics = entry
                .scenario
                .targets
                .iter()
                .map(|t| {
                    let r = entry
                        .reports
                        .iter()
                        .find(|r| r.target_id == t.target_id)?
                        .report
                        .as_ref()?;
                    let i = frame.checked_sub(t.analysis_window.start)? as usize;
                    r.series.get(i).copied().flatten()
                })
                .collect();
            FrameState {
                frame,
                time: (frame - w.start) as f64 / fr,
                vehicles,
                metrics,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criticality::{Comparison, MetricKind};
    use crate::schema::tests::cut_in_query;
    use crate::synth::{synthetic_corpus, CorpusSpec};

    fn corpus() -> TrajectoryStore {
        let spec = CorpusSpec {
            cut_in: 3,
            ..Default::default()
        };
        synthetic_corpus(7, spec, 25.0).unwrap().store
    }

    #[test]
    fn cut_in_pool_with_ttc() {
        let store = corpus();
        let cfg = PipelineConfig {
            criticality: Some(CriticalityConfig::new(MetricKind::TTC, 10.0)),
            ..Default::default()
        };
        let out = run_pipeline(&store, &cut_in_query(), None, Some("cut-in"), &cfg).unwrap();
        assert_eq!(out.manifest.match_count, 3);
        assert_eq!(out.manifest.selected_count, 3);
        assert_eq!(out.files.len(), 3);
        assert!(out.files.iter().all(|f| f.file_name.ends_with(".xosc")));
        assert_eq!(out.manifest.predictions().len(), 3);

        let unreachable = PipelineConfig {
            criticality: Some(
                CriticalityConfig::new(MetricKind::TTC, -1.0).with_comparison(Comparison::Le),
            ),
            ..Default::default()
        };
        let out = run_pipeline(&store, &cut_in_query(), None, None, &unreachable).unwrap();
        assert_eq!(out.manifest.match_count, 3);
        assert_eq!(out.manifest.selected_count, 0);
        assert!(out.files.is_empty());
    }

    #[test]
    fn manifest_round_trip() {
        let store = corpus();
        let cfg = PipelineConfig {
            criticality: Some(CriticalityConfig::new(MetricKind::THW, 5.0)),
            formats: vec![ExportFormat::Xosc, ExportFormat::Cmtxt],
            ..Default::default()
        };
        let out = run_pipeline(&store, &cut_in_query(), Some("text"), None, &cfg).unwrap();
        let json = serde_json::to_string_pretty(&out.manifest).unwrap();
        let back: Manifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, out.manifest);
        assert!(json.contains("\"end_position_grace\""));
        assert!(json.contains("\"ttc_tau\""));
    }

    #[test]
    fn sequential_equals_parallel() {
        let store = corpus();
        let par = PipelineConfig {
            criticality: Some(CriticalityConfig::new(MetricKind::TTC, 10.0)),
            ..Default::default()
        };
        let seq = PipelineConfig {
            parallel: false,
            ..par.clone()
        };
        let a = run_pipeline(&store, &cut_in_query(), None, None, &par).unwrap();
        let b = run_pipeline(&store, &cut_in_query(), None, None, &seq).unwrap();
        assert_eq!(a.manifest.matches, b.manifest.matches);
        assert_eq!(a.files, b.files);
    }

    #[test]
    fn frames_stride() {
        let store = corpus();
        let cfg = PipelineConfig {
            criticality: Some(CriticalityConfig::new(MetricKind::TTC, 10.0)),
            ..Default::default()
        };
        let entries = score_matches(&store, &cut_in_query(), &cfg).unwrap();
        let e = &entries[0];
        let n = e.scenario.scenario_window.len() as usize;
        assert_eq!(scenario_frames(e, &store, 1).len(), n);
        assert_eq!(scenario_frames(e, &store, 5).len(), n.div_ceil(5));
        let f = &scenario_frames(e, &store, 1)[0];
        assert_eq!(f.vehicles.len(), 2);
        assert_eq!(f.metrics.len(), 1);
    }

    #[test]
    fn bad_config() {
        let store = corpus();
        let mut cfg = PipelineConfig::default();
        cfg.export.precision = 1;
        assert!(matches!(
            run_pipeline(&store, &cut_in_query(), None, None, &cfg),
            Err(PipelineError::Config(_))
        ));
        assert_eq!("XOSC".parse::<ExportFormat>().unwrap(), ExportFormat::Xosc);
        assert!("abc".parse::<ExportFormat>().is_err());
    }
}
