//! Surrogate safety metrics over an analysis window, and pool filtering.
//!
//! Every metric is computed frame by frame from the ego and target samples.
//! Quantities are measured along the ego's travel direction: speeds are
//! `|x_velocity|`, accelerations are signed so that positive means speeding
//! up, and `gap` is the bumper-to-bumper distance from the ego's front to the
//! target's rear. Frames where a metric has no meaning carry no value.

use crate::interval::FrameInterval;
use crate::par::{self, Execution};
use crate::search::ScenarioMatch;
use crate::store::{StoreError, TrackSample, Trajectory, TrajectoryStore, VehicleId};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CriticalityError {
    #[error("ego covers {ego} but target covers {target}")]
    MismatchedInterval {
        ego: FrameInterval,
        target: FrameInterval,
    },
    #[error("{kind} needs at least 3 frames, got {frames}")]
    InsufficientData { kind: MetricKind, frames: usize },
    #[error("ego and target do not travel in the same direction")]
    DirectionMismatch,
    #[error("invalid metric parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scale {
    Acceleration,
    Distance,
    Jerk,
    Time,
    Velocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    DST,
    RLongA,
    PSD,
    DHW,
    LongJ,
    LatJ,
    TTC,
    PTTC,
    TET,
    TIT,
    THW,
    DeltaV,
}

impl MetricKind {
    pub const ALL: [MetricKind; 12] = [
        MetricKind::DST,
        MetricKind::RLongA,
        MetricKind::PSD,
        MetricKind::DHW,
        MetricKind::LongJ,
        MetricKind::LatJ,
        MetricKind::TTC,
        MetricKind::PTTC,
        MetricKind::TET,
        MetricKind::TIT,
        MetricKind::THW,
        MetricKind::DeltaV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::DST => "DST",
            MetricKind::RLongA => "RLongA",
            MetricKind::PSD => "PSD",
            MetricKind::DHW => "DHW",
            MetricKind::LongJ => "LongJ",
            MetricKind::LatJ => "LatJ",
            MetricKind::TTC => "TTC",
            MetricKind::PTTC => "PTTC",
            MetricKind::TET => "TET",
            MetricKind::TIT => "TIT",
            MetricKind::THW => "THW",
            MetricKind::DeltaV => "DeltaV",
        }
    }

    pub fn scale(self) -> Scale {
        use MetricKind::*;
        match self {
            DST | RLongA => Scale::Acceleration,
            PSD | DHW => Scale::Distance,
            LongJ | LatJ => Scale::Jerk,
            TTC | PTTC | TET | TIT | THW => Scale::Time,
            DeltaV => Scale::Velocity,
        }
    }

    /// Direction in which values become more critical.
    pub fn default_comparison(self) -> Comparison {
        use MetricKind::*;
        match self {
            // exposure grows with danger even though it is measured in seconds
            TET | TIT => Comparison::Ge,
            _ => match self.scale() {
                Scale::Time | Scale::Distance => Comparison::Le,
                Scale::Acceleration | Scale::Jerk | Scale::Velocity => Comparison::Ge,
            },
        }
    }

    fn is_exposure(self) -> bool {
        matches!(self, MetricKind::TET | MetricKind::TIT)
    }

    fn is_jerk(self) -> bool {
        matches!(self, MetricKind::LongJ | MetricKind::LatJ)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("unknown metric `{0}`")]
pub struct UnknownMetric(pub String);

impl FromStr for MetricKind {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    /// passes when `aggregate <= threshold`
    Le,
    /// passes when `aggregate >= threshold`
    Ge,
}

impl Comparison {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Le => value <= threshold,
            Comparison::Ge => value >= threshold,
        }
    }
}

impl FromStr for Comparison {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "le" | "<=" | "≤" => Ok(Comparison::Le),
            "ge" | ">=" | "≥" => Ok(Comparison::Ge),
            other => Err(format!("unknown comparison `{other}`, expected le or ge")),
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparison::Le => "le",
            Comparison::Ge => "ge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    /// TTC threshold for TET/TIT, s
    pub ttc_tau: f64,
    /// safety time for DST, s
    pub safety_time_ts: f64,
    /// braking capability for PSD, m/s²
    pub max_deceleration: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            ttc_tau: 3.0,
            safety_time_ts: 1.0,
            max_deceleration: 7.5,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<(), CriticalityError> {
        for (name, v) in [
            ("ttc_tau", self.ttc_tau),
            ("safety_time_ts", self.safety_time_ts),
            ("max_deceleration", self.max_deceleration),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CriticalityError::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalityConfig {
    pub kind: MetricKind,
    pub threshold: f64,
    /// Falls back to the kind's default when absent.
    #[serde(default)]
    pub comparison: Option<Comparison>,
}

impl CriticalityConfig {
    pub fn new(kind: MetricKind, threshold: f64) -> Self {
        Self {
            kind,
            threshold,
            comparison: None,
        }
    }

    pub fn with_comparison(mut self, comparison: Comparison) -> Self {
        self.comparison = Some(comparison);
        self
    }

    pub fn comparison(&self) -> Comparison {
        self.comparison
            .unwrap_or_else(|| self.kind.default_comparison())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub kind: MetricKind,
    pub frames: FrameInterval,
    /// One entry per frame of `frames`; `None` where the metric is undefined.
    pub series: Vec<Option<f64>>,
    pub aggregate: Option<f64>,
    pub threshold: f64,
    pub comparison: Comparison,
    pub passes_threshold: bool,
}

impl CriticalityReport {
    /// Aggregates `series` for `kind`: worst frame for instantaneous
    /// metrics, the total for TET/TIT.
    pub fn aggregate_of(kind: MetricKind, series: &[Option<f64>]) -> Option<f64> {
        let defined = series.iter().flatten().copied();
        use MetricKind::*;
        match kind {
            TET | TIT => Some(defined.sum()),
            TTC | PTTC | THW | DHW | PSD => defined.reduce(f64::min),
            LongJ | LatJ => defined.map(f64::abs).reduce(f64::max),
            DST | RLongA | DeltaV => defined.reduce(f64::max),
        }
    }

    pub fn passes(aggregate: Option<f64>, comparison: Comparison, threshold: f64) -> bool {
        aggregate.is_some_and(|a| comparison.holds(a, threshold))
    }
}

/// Longitudinal state of one frame, projected on the travel direction.
#[derive(Debug, Clone, Copy)]
struct PairState {
    gap: f64,
    v_ego: f64,
    v_tgt: f64,
    a_ego: f64,
    a_tgt: f64,
}

impl PairState {
    fn new(e: &TrackSample, t: &TrackSample, sign: f64) -> Self {
        Self {
            gap: sign * (t.center_x() - e.center_x()) - (e.width + t.width) / 2.0,
            v_ego: e.x_velocity.abs(),
            v_tgt: t.x_velocity.abs(),
            a_ego: sign * e.x_acceleration,
            a_tgt: sign * t.x_acceleration,
        }
    }

    fn closing(&self) -> f64 {
        self.v_ego - self.v_tgt
    }

    /// Leader-based metrics need the target ahead of the ego.
    fn leading(&self) -> Option<f64> {
        (self.gap > 0.0).then_some(self.gap)
    }

    fn ttc(&self) -> Option<f64> {
        let gap = self.leading()?;
        let dv = self.closing();
        (dv > 0.0).then(|| gap / dv)
    }

    fn pttc(&self) -> Option<f64> {
        let gap = self.leading()?;
        smallest_positive_root(
            0.5 * (self.a_tgt - self.a_ego),
            self.v_tgt - self.v_ego,
            gap,
        )
    }

    fn thw(&self) -> Option<f64> {
        let gap = self.leading()?;
        (self.v_ego > 0.0).then(|| gap / self.v_ego)
    }

    fn dst(&self, ts: f64) -> Option<f64> {
        let gap = self.leading()?;
        let denom = 2.0 * (gap - ts * self.v_tgt);
        (denom > 0.0).then(|| self.closing().powi(2) / denom)
    }

    fn rlonga(&self) -> Option<f64> {
        let gap = self.leading()?;
        let required = self.a_tgt - self.closing().powi(2) / (2.0 * gap);
        Some((-required).max(0.0))
    }

    fn psd(&self, a_max: f64) -> Option<f64> {
        let gap = self.leading()?;
        (self.v_ego > 0.0).then(|| gap / (self.v_ego * self.v_ego / (2.0 * a_max)))
    }
}

/// Smallest `t > 0` with `a·t² + b·t + c = 0`.
fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    const EPS: f64 = 1e-12;
    if a.abs() < EPS {
        if b.abs() < EPS {
            return None;
        }
        let t = -c / b;
        return (t > 0.0).then_some(t);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    // numerically stable pair
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = [q / a, if q != 0.0 { c / q } else { f64::NAN }];
    roots.sort_by(|x, y| x.total_cmp(y));
    roots.into_iter().find(|t| t.is_finite() && *t > 0.0)
}

/// Central difference times the frame rate; one-sided at both ends.
pub fn finite_difference(values: &[f64], frame_rate: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| match i {
            _ if n < 2 => f64::NAN,
            0 => (values[1] - values[0]) * frame_rate,
            i if i == n - 1 => (values[i] - values[i - 1]) * frame_rate,
            i => (values[i + 1] - values[i - 1]) * frame_rate / 2.0,
        })
        .collect()
}

/// TET/TIT contributions of a TTC series; frames without TTC contribute
/// nothing.
pub fn exposure_series(
    kind: MetricKind,
    ttc: &[Option<f64>],
    tau: f64,
    dt: f64,
) -> Vec<Option<f64>> {
    ttc.iter()
        .map(|t| {
            t.map(|t| {
                if t > tau {
                    0.0
                } else if kind == MetricKind::TIT {
                    dt * (tau - t)
                } else {
                    dt
                }
            })
        })
        .collect()
}

/// Per-frame metric over two slices covering the same frames.
pub fn compute_series(
    ego: &Trajectory,
    tgt: &Trajectory,
    config: &CriticalityConfig,
    params: &MetricParams,
    frame_rate: f64,
) -> Result<CriticalityReport, CriticalityError> {
    params.validate()?;
    let frames = ego.frame_range();
    if tgt.frame_range() != frames {
        return Err(CriticalityError::MismatchedInterval {
            ego: frames,
            target: tgt.frame_range(),
        });
    }
    let sign = match (ego.direction(), tgt.direction()) {
        (Some(a), Some(b)) if a == b => a.sign(),
        _ => return Err(CriticalityError::DirectionMismatch),
    };
    let kind = config.kind;
    if kind.is_jerk() && ego.len() < 3 {
        return Err(CriticalityError::InsufficientData {
            kind,
            frames: ego.len(),
        });
    }
    let states = || {
        ego.samples()
            .iter()
            .zip(tgt.samples())
            .map(|(e, t)| PairState::new(e, t, sign))
    };
    let series: Vec<Option<f64>> = match kind {
        MetricKind::DHW => states().map(|s| s.leading()).collect(),
        MetricKind::THW => states().map(|s| s.thw()).collect(),
        MetricKind::TTC => states().map(|s| s.ttc()).collect(),
        MetricKind::PTTC => states().map(|s| s.pttc()).collect(),
        MetricKind::DST => states().map(|s| s.dst(params.safety_time_ts)).collect(),
        MetricKind::RLongA => states().map(|s| s.rlonga()).collect(),
        MetricKind::PSD => states().map(|s| s.psd(params.max_deceleration)).collect(),
        MetricKind::DeltaV => states().map(|s| Some(s.closing().abs())).collect(),
        MetricKind::TET | MetricKind::TIT => {
            let ttc: Vec<Option<f64>> = states().map(|s| s.ttc()).collect();
            exposure_series(kind, &ttc, params.ttc_tau, 1.0 / frame_rate)
        }
        MetricKind::LongJ | MetricKind::LatJ => {
            let acc: Vec<f64> = ego
                .samples()
                .iter()
                .map(|s| {
                    if kind == MetricKind::LongJ {
                        sign * s.x_acceleration
                    } else {
                        s.y_acceleration
                    }
                })
                .collect();
            finite_difference(&acc, frame_rate)
                .into_iter()
                .map(Some)
                .collect()
        }
    };
    debug_assert!(kind.is_exposure() || series.len() == ego.len());
    let aggregate = CriticalityReport::aggregate_of(kind, &series);
    let comparison = config.comparison();
    Ok(CriticalityReport {
        kind,
        frames,
        series,
        aggregate,
        threshold: config.threshold,
        comparison,
        passes_threshold: CriticalityReport::passes(aggregate, comparison, config.threshold),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target_id: VehicleId,
    pub report: Option<CriticalityReport>,
    /// Set when the metric could not be computed; such a target fails.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub scenario: ScenarioMatch,
    pub reports: Vec<TargetReport>,
    pub passes: bool,
}

/// Reports for every target of one match, each over its own analysis window.
pub fn evaluate_match(
    store: &TrajectoryStore,
    scenario: &ScenarioMatch,
    config: &CriticalityConfig,
    params: &MetricParams,
) -> PoolEntry {
    let reports: Vec<TargetReport> = scenario
        .targets
        .iter()
        .map(|tw| {
            let w = tw.analysis_window;
            let result = (|| {
                let ego = store.get(scenario.ego_id)?.slice(w.start, w.end)?;
                let tgt = store.get(tw.target_id)?.slice(w.start, w.end)?;
                compute_series(&ego, &tgt, config, params, store.frame_rate())
            })();
            match result {
                Ok(r) => TargetReport {
                    target_id: tw.target_id,
                    report: Some(r),
                    error: None,
                },
                Err(e) => TargetReport {
                    target_id: tw.target_id,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let passes = !reports.is_empty()
        && reports
            .iter()
            .all(|r| r.report.as_ref().is_some_and(|r| r.passes_threshold));
    PoolEntry {
        scenario: scenario.clone(),
        reports,
        passes,
    }
}

/// Splits the pool into (selected, rejected), both in input order.
pub fn filter_pool(
    matches: &[ScenarioMatch],
    store: &TrajectoryStore,
    config: &CriticalityConfig,
    params: &MetricParams,
) -> (Vec<PoolEntry>, Vec<PoolEntry>) {
    filter_pool_with(matches, store, config, params, Execution::default())
}

pub fn filter_pool_with(
    matches: &[ScenarioMatch],
    store: &TrajectoryStore,
    config: &CriticalityConfig,
    params: &MetricParams,
    exec: Execution,
) -> (Vec<PoolEntry>, Vec<PoolEntry>) {
    par::map(exec, matches, |m| evaluate_match(store, m, config, params))
        .into_iter()
        .partition(|e| e.passes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::TargetWindow;
    use crate::store::RecordingConfig;
    use proptest::prelude::*;

    const FR: f64 = 25.0;
    const DT: f64 = 1.0 / FR;
    const LEN: f64 = 4.0;

    /// Constant-acceleration vehicle towards `dir`, `x0` is the rear bumper
    /// for +x travel.
    fn body(id: u32, n: u32, x0: f64, v: f64, a: f64, dir: f64) -> Trajectory {
        let samples = (0..n)
            .map(|f| {
                let t = f as f64 * DT;
                TrackSample {
                    frame: f,
                    x: dir * (x0 + v * t + 0.5 * a * t * t),
                    y: 10.0,
                    width: LEN,
                    height: 1.8,
                    x_velocity: dir * (v + a * t),
                    y_velocity: 0.0,
                    x_acceleration: dir * a,
                    y_acceleration: 0.0,
                    lane_id: 2,
                }
            })
            .collect();
        Trajectory::new(id, samples).unwrap()
    }

    fn run(kind: MetricKind, ego: &Trajectory, tgt: &Trajectory) -> CriticalityReport {
        compute_series(
            ego,
            tgt,
            &CriticalityConfig::new(kind, 3.0),
            &MetricParams::default(),
            FR,
        )
        .unwrap()
    }

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1e-12)
    }

    #[test]
    fn names_round_trip() {
        for k in MetricKind::ALL {
            assert_eq!(k.name().parse::<MetricKind>().unwrap(), k);
            assert_eq!(serde_json::to_value(k).unwrap(), k.name());
        }
        assert!("ET".parse::<MetricKind>().is_err());
    }

    #[test]
    fn ttc_four_seconds() {
        // gap 20 m: rear of target 20 m past the ego's front
        for dir in [1.0, -1.0] {
            let ego = body(1, 50, 0.0, 30.0, 0.0, dir);
            let tgt = body(2, 50, 0.0, 25.0, 0.0, dir);
            // shift target so the gap at frame 0 is 20 m
            let tgt = shift(&tgt, dir * (20.0 + LEN));
            let r = run(MetricKind::TTC, &ego, &tgt);
            assert!(rel_close(r.series[0].unwrap(), 4.0));
            assert!(rel_close(r.aggregate.unwrap(), 20.0 / 5.0 - 49.0 * DT));
            assert!(r.passes_threshold == (r.aggregate.unwrap() <= 3.0));
        }
    }

    fn shift(t: &Trajectory, dx: f64) -> Trajectory {
        let s = t
            .samples()
            .iter()
            .map(|s| TrackSample { x: s.x + dx, ..*s })
            .collect();
        Trajectory::new(t.vehicle_id(), s).unwrap()
    }

    #[test]
    fn no_closing_means_no_ttc() {
        let ego = body(1, 30, 0.0, 30.0, 0.0, 1.0);
        let tgt = body(2, 30, 50.0, 30.0, 0.0, 1.0);
        let r = run(MetricKind::TTC, &ego, &tgt);
        assert!(r.series.iter().all(Option::is_none));
        assert_eq!(r.aggregate, None);
        assert_eq!(r.comparison, Comparison::Le);
        assert!(!r.passes_threshold);
    }

    #[test]
    fn thw_two_seconds() {
        let ego = body(1, 10, 0.0, 15.0, 0.0, 1.0);
        let tgt = body(2, 10, 30.0 + LEN, 15.0, 0.0, 1.0);
        let r = run(MetricKind::THW, &ego, &tgt);
        for v in &r.series {
            assert!(rel_close(v.unwrap(), 2.0));
        }
        let r = run(MetricKind::DHW, &ego, &tgt);
        assert!(rel_close(r.aggregate.unwrap(), 30.0));
    }

    #[test]
    fn tet_tit_hand_sum() {
        let ttc = [Some(3.0), Some(2.0), Some(1.0), Some(5.0)];
        let tet = exposure_series(MetricKind::TET, &ttc, 2.5, 0.04);
        let tit = exposure_series(MetricKind::TIT, &ttc, 2.5, 0.04);
        let sum = |s: &[Option<f64>]| CriticalityReport::aggregate_of(MetricKind::TET, s).unwrap();
        assert!((sum(&tet) - 0.08).abs() < 1e-15);
        assert!((sum(&tit) - 0.04 * (0.5 + 1.5)).abs() < 1e-15);
    }

    #[test]
    fn ttc_just_before_collision() {
        // closing at 5 m/s from 1 m: contact after exactly 5 frames
        let ego = body(1, 6, 0.0, 30.0, 0.0, 1.0);
        let tgt = body(2, 6, 1.0 + LEN, 25.0, 0.0, 1.0);
        let r = run(MetricKind::TTC, &ego, &tgt);
        assert!((r.series[4].unwrap() - DT).abs() < 1e-9);
        assert_eq!(r.series[5], None);
        assert!(r.series.iter().flatten().all(|v| *v > 0.0));
    }

    #[test]
    fn pttc_with_acceleration() {
        // ego 20 m/s, target 20 m/s braking at 2 m/s², gap 16 m → t² = 16
        let ego = body(1, 2, 0.0, 20.0, 0.0, 1.0);
        let tgt = body(2, 2, 16.0 + LEN, 20.0, -2.0, 1.0);
        let r = run(MetricKind::PTTC, &ego, &tgt);
        assert!(rel_close(r.series[0].unwrap(), 4.0));
        assert_eq!(smallest_positive_root(1.0, 0.0, 1.0), None);
        assert_eq!(smallest_positive_root(0.0, -2.0, 4.0), Some(2.0));
    }

    #[test]
    fn target_behind_has_no_gap_metrics() {
        let ego = body(1, 5, 50.0, 30.0, 0.0, 1.0);
        let tgt = body(2, 5, 0.0, 35.0, 0.0, 1.0);
        for k in [MetricKind::DHW, MetricKind::TTC, MetricKind::PSD, MetricKind::THW] {
            assert!(run(k, &ego, &tgt).series.iter().all(Option::is_none), "{k}");
        }
        assert!(rel_close(run(MetricKind::DeltaV, &ego, &tgt).aggregate.unwrap(), 5.0));
    }

    #[test]
    fn jerk_needs_three_frames() {
        let ego = body(1, 2, 0.0, 20.0, 0.0, 1.0);
        let tgt = body(2, 2, 40.0, 20.0, 0.0, 1.0);
        let err = compute_series(
            &ego,
            &tgt,
            &CriticalityConfig::new(MetricKind::LongJ, 1.0),
            &MetricParams::default(),
            FR,
        )
        .unwrap_err();
        assert!(matches!(err, CriticalityError::InsufficientData { frames: 2, .. }));
    }

    #[test]
    fn mismatch_errors() {
        let ego = body(1, 10, 0.0, 20.0, 0.0, 1.0);
        let tgt = body(2, 9, 40.0, 20.0, 0.0, 1.0);
        let cfg = CriticalityConfig::new(MetricKind::TTC, 1.0);
        let p = MetricParams::default();
        assert!(matches!(
            compute_series(&ego, &tgt, &cfg, &p, FR),
            Err(CriticalityError::MismatchedInterval { .. })
        ));
        let back = body(2, 10, 40.0, 20.0, 0.0, -1.0);
        assert!(matches!(
            compute_series(&ego, &back, &cfg, &p, FR),
            Err(CriticalityError::DirectionMismatch)
        ));
        let bad = MetricParams {
            ttc_tau: 0.0,
            ..p
        };
        assert!(compute_series(&ego, &body(2, 10, 40.0, 20.0, 0.0, 1.0), &cfg, &bad, FR).is_err());
    }

    #[test]
    fn jerk_of_linear_and_quadratic_profiles() {
        // linear acceleration: every difference is exact
        let lin: Vec<f64> = (0..20).map(|i| 0.5 + 0.3 * i as f64 * DT).collect();
        for j in finite_difference(&lin, FR) {
            assert!((j - 0.3).abs() < 1e-9);
        }
        // quadratic: central difference is exact at interior points
        let quad: Vec<f64> = (0..20).map(|i| (i as f64 * DT).powi(2)).collect();
        let d = finite_difference(&quad, FR);
        for (i, j) in d.iter().enumerate().take(19).skip(1) {
            assert!((j - 2.0 * i as f64 * DT).abs() < 1e-9);
        }
    }

    #[test]
    fn pool_filtering() {
        let ego = body(1, 50, 0.0, 30.0, 0.0, 1.0);
        let tgt = shift(&body(2, 50, 0.0, 25.0, 0.0, 1.0), 20.0 + LEN);
        let store =
            TrajectoryStore::from_trajectories(RecordingConfig::new("t", FR), vec![ego, tgt])
                .unwrap();
        let w = FrameInterval::new(0, 0).unwrap();
        let m = ScenarioMatch {
            recording_id: "t".into(),
            ego_id: 1,
            targets: vec![TargetWindow {
                target_id: 2,
                analysis_window: w,
            }],
            scenario_window: w,
        };
        let p = MetricParams::default();
        let (sel, rej) = filter_pool(std::slice::from_ref(&m), &store, &CriticalityConfig::new(MetricKind::TTC, 3.0), &p);
        assert!(sel.is_empty());
        assert_eq!(rej.len(), 1);
        let (sel, rej) = filter_pool(std::slice::from_ref(&m), &store, &CriticalityConfig::new(MetricKind::TTC, 5.0), &p);
        assert_eq!(sel.len(), 1);
        assert!(rej.is_empty());
        assert!(rel_close(sel[0].reports[0].report.as_ref().unwrap().aggregate.unwrap(), 4.0));
        let (sel, rej) = filter_pool(&[], &store, &CriticalityConfig::new(MetricKind::TTC, 5.0), &p);
        assert!(sel.is_empty() && rej.is_empty());
        // unknown target fails rather than panicking
        let mut bad = m;
        bad.targets[0].target_id = 99;
        let (sel, rej) = filter_pool(&[bad], &store, &CriticalityConfig::new(MetricKind::TTC, 5.0), &p);
        assert!(sel.is_empty());
        assert!(rej[0].reports[0].error.is_some());
    }

    proptest! {
        #[test]
        fn tit_bounded_by_tau_tet(
            ttc in prop::collection::vec(prop::option::of(0.01f64..10.0), 0..200),
            tau in 0.1f64..6.0,
        ) {
            let tet = CriticalityReport::aggregate_of(
                MetricKind::TET, &exposure_series(MetricKind::TET, &ttc, tau, DT)).unwrap();
            let tit = CriticalityReport::aggregate_of(
                MetricKind::TIT, &exposure_series(MetricKind::TIT, &ttc, tau, DT)).unwrap();
            prop_assert!(tit <= tau * tet + 1e-12);
            prop_assert!(tit >= 0.0);
        }

        #[test]
        fn constant_velocity_closed_form(
            gap in 1.0f64..200.0, v_ego in 1.0f64..50.0, v_tgt in 0.5f64..50.0,
        ) {
            let ego = body(1, 1, 0.0, v_ego, 0.0, 1.0);
            let tgt = body(2, 1, gap + LEN, v_tgt, 0.0, 1.0);
            let dhw = run(MetricKind::DHW, &ego, &tgt).series[0].unwrap();
            let thw = run(MetricKind::THW, &ego, &tgt).series[0].unwrap();
            let ttc = run(MetricKind::TTC, &ego, &tgt).series[0];
            prop_assert!(rel_close(dhw, gap));
            prop_assert!(rel_close(thw, gap / v_ego));
            if v_ego > v_tgt {
                prop_assert!(rel_close(ttc.unwrap(), gap / (v_ego - v_tgt)));
            } else {
                prop_assert!(ttc.is_none());
            }
        }

        #[test]
        fn psd_above_one_iff_gap_exceeds_stopping_distance(
            gap in 0.1f64..200.0, v in 1.0f64..50.0, a_max in 1.0f64..10.0,
        ) {
            let s = PairState { gap, v_ego: v, v_tgt: v, a_ego: 0.0, a_tgt: 0.0 };
            let psd = s.psd(a_max).unwrap();
            prop_assert_eq!(psd > 1.0, gap > v * v / (2.0 * a_max));
        }
    }
}
