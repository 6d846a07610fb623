//! Matching a scenario query against every ego/target pairing of a recording.
//!
//! For each candidate ego the maximal windows where its longitudinal and
//! lateral activities equal the query's ego activities are intersected with
//! each other vehicle's matching target windows. The resulting analysis
//! window `[t1, t2]` is kept when the target starts in the requested
//! position at `t1`, reaches the requested end position within a grace
//! period after `t2`, and lasts long enough.

use crate::activity::{ActivityTimeline, DetectionParams, LateralActivity, LongitudinalActivity};
use crate::interval::FrameInterval;
use crate::par::{self, Execution};
use crate::position::{classify_position, RelativePosition};
use crate::schema::{ScenarioQuery, TargetSpec, ValidatedQuery};
use crate::store::{coexistence_window, Trajectory, TrajectoryStore, VehicleId};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub detection: DetectionParams,
    /// seconds past `t2` in which the end position may be reached
    pub end_position_grace: f64,
    /// seconds
    pub min_window_duration: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            detection: DetectionParams::default(),
            end_position_grace: 2.0,
            min_window_duration: 1.0,
        }
    }
}

impl SearchParams {
    pub fn grace_frames(&self, frame_rate: f64) -> u32 {
        (self.end_position_grace.max(0.0) * frame_rate + 1e-9).floor() as u32
    }

    pub fn long_enough(&self, window: FrameInterval, frame_rate: f64) -> bool {
        window.len() as f64 + 1e-9 >= self.min_window_duration * frame_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TargetWindow {
    pub target_id: VehicleId,
    /// `[t1, t2]`, inside the ego/target coexistence window
    pub analysis_window: FrameInterval,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioMatch {
    pub recording_id: String,
    pub ego_id: VehicleId,
    /// One entry per query target, in query order.
    pub targets: Vec<TargetWindow>,
    /// Hull of all analysis windows.
    pub scenario_window: FrameInterval,
}

impl ScenarioMatch {
    fn sort_key(&self) -> (VehicleId, u32, Vec<TargetWindow>) {
        (self.ego_id, self.scenario_window.start, self.targets.clone())
    }
}

/// Per-vehicle state shared by every query clause.
struct Prepared<'a> {
    store: &'a TrajectoryStore,
    timelines: Vec<Option<ActivityTimeline>>,
    /// vehicle indices sorted by first frame
    by_start: Vec<usize>,
    frame_rate: f64,
}

impl<'a> Prepared<'a> {
    fn new(store: &'a TrajectoryStore, params: &SearchParams, exec: Execution) -> Self {
        let fr = store.frame_rate();
        let timelines = par::map(exec, store.trajectories(), |t| {
            t.direction()?;
            match ActivityTimeline::detect(t, &params.detection, fr) {
                Ok(tl) => Some(tl),
                Err(e) => {
                    log::debug!("vehicle {} skipped: {e}", t.vehicle_id());
                    None
                }
            }
        });
        let mut by_start: Vec<usize> = (0..store.len()).collect();
        by_start.sort_by_key(|&i| (store.trajectories()[i].first_frame(), i));
        Self {
            store,
            timelines,
            by_start,
            frame_rate: fr,
        }
    }

    fn traj(&self, i: usize) -> &Trajectory {
        &self.store.trajectories()[i]
    }

    /// Usable vehicles other than `ego` whose frames overlap `range` and who
    /// drive in the ego's direction.
    fn neighbours(&self, ego: usize, range: FrameInterval) -> impl Iterator<Item = usize> + '_ {
        let upto = self
            .by_start
            .partition_point(|&i| self.traj(i).first_frame() <= range.end);
        let dir = self.traj(ego).direction();
        self.by_start[..upto].iter().copied().filter(move |&i| {
            i != ego
                && self.timelines[i].is_some()
                && self.traj(i).last_frame() >= range.start
                && self.traj(i).direction() == dir
        })
    }
}

fn position(ego: &Trajectory, tgt: &Trajectory, frame: u32) -> RelativePosition {
    let (Some(e), Some(t)) = (ego.sample_at(frame), tgt.sample_at(frame)) else {
        return RelativePosition::OutOfScope;
    };
    let v = ego.direction().map_or(0.0, |d| d.sign());
    classify_position(e.lane_id, t.lane_id, e.center_x(), t.center_x(), v)
        .unwrap_or(RelativePosition::OutOfScope)
}

fn end_positions<'a>(
    ego: &'a Trajectory,
    tgt: &'a Trajectory,
    window: FrameInterval,
    coexist: FrameInterval,
    grace: u32,
) -> impl Iterator<Item = RelativePosition> + 'a {
    let last = window.end.saturating_add(grace).min(coexist.end);
    (window.end..=last).map(move |f| position(ego, tgt, f))
}

/// A window where the target's activities match one target clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub ego_id: VehicleId,
    pub target_id: VehicleId,
    /// Index of the query target clause.
    pub target_index: usize,
    pub window: FrameInterval,
    pub observed: Observation,
}

/// What was actually seen in a candidate window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    /// Ego activities: the first one in the window that differs from the
    /// query, or the one at `t1` when nothing differs.
    pub ego_longitudinal: Option<LongitudinalActivity>,
    pub ego_lateral: Option<LateralActivity>,
    /// Whether the ego carried the queried activities over the whole window.
    pub ego_matched: bool,
    pub start_position: RelativePosition,
    /// Position at `t2`.
    pub end_position: RelativePosition,
    /// Whether the queried end position appears within the grace period.
    pub end_matched: bool,
    pub frames: u32,
}

struct PairScan<'p> {
    prep: &'p Prepared<'p>,
    query: &'p ScenarioQuery,
    params: &'p SearchParams,
    ego_windows: Vec<FrameInterval>,
    ego: usize,
}

impl PairScan<'_> {
    /// Calls `emit` for every candidate of clause `spec_index` against `tgt`.
    /// Windows where the ego's activities do not match are only reported
    /// when `include_ego_mismatch` is set.
    fn scan(
        &self,
        tgt: usize,
        spec_index: usize,
        include_ego_mismatch: bool,
        mut emit: impl FnMut(Candidate),
    ) {
        let spec: &TargetSpec = &self.query.targets[spec_index];
        let ego_t = self.prep.traj(self.ego);
        let tgt_t = self.prep.traj(tgt);
        let Some(coexist) = coexistence_window(ego_t, tgt_t) else { return };
        let tl = self.prep.timelines[tgt].as_ref().expect("usable neighbour");
        let ego_tl = self.prep.timelines[self.ego].as_ref().expect("usable ego");
        let grace = self.params.grace_frames(self.prep.frame_rate);

        let observe = |window: FrameInterval, ego_matched: bool| {
            // report the first ego activity that breaks the clause, else the one at t1
            let lon_at = |f| ego_tl.longitudinal_at(f);
            let lat_at = |f| ego_tl.lateral_at(f);
            let ego_longitudinal = window
                .frames()
                .map(lon_at)
                .find(|k| *k != Some(self.query.ego.longitudinal))
                .unwrap_or_else(|| lon_at(window.start));
            let ego_lateral = window
                .frames()
                .map(lat_at)
                .find(|k| *k != Some(self.query.ego.lateral))
                .unwrap_or_else(|| lat_at(window.start));
            let end_matched = end_positions(ego_t, tgt_t, window, coexist, grace)
                .any(|p| p == spec.end.member);
            Candidate {
                ego_id: ego_t.vehicle_id(),
                target_id: tgt_t.vehicle_id(),
                target_index: spec_index,
                window,
                observed: Observation {
                    ego_longitudinal,
                    ego_lateral,
                    ego_matched,
                    start_position: position(ego_t, tgt_t, window.start),
                    end_position: position(ego_t, tgt_t, window.end),
                    end_matched,
                    frames: window.len(),
                },
            }
        };

        for tw in tl.windows_matching(spec.longitudinal, spec.lateral) {
            let Some(base) = tw.intersect(&coexist) else { continue };
            let mut covered = 0;
            for ew in &self.ego_windows {
                if let Some(w) = base.intersect(ew) {
                    covered += w.len();
                    emit(observe(w, true));
                }
            }
            if covered < base.len()
                && include_ego_mismatch
                && position(ego_t, tgt_t, base.start) == spec.start.member
            {
                emit(observe(base, false));
            }
        }
    }
}

impl Candidate {
    pub fn accepted(&self, query: &ScenarioQuery, params: &SearchParams, frame_rate: f64) -> bool {
        rejection_reasons(self, query, params, frame_rate).is_empty()
    }
}

/// Why a candidate was not returned as a match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    EgoLongitudinal {
        expected: LongitudinalActivity,
        observed: Option<LongitudinalActivity>,
    },
    EgoLateral {
        expected: LateralActivity,
        observed: Option<LateralActivity>,
    },
    StartPosition {
        expected: RelativePosition,
        observed: RelativePosition,
    },
    EndPosition {
        expected: RelativePosition,
        observed: RelativePosition,
    },
    Duration { seconds: f64, required: f64 },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |o: &Option<String>| o.clone().unwrap_or_else(|| "nothing".into());
        match self {
            Rejection::EgoLongitudinal { expected, observed } => write!(
                f,
                "ego longitudinal mismatch: expected {expected}, observed {}",
                opt(&observed.map(|o| o.to_string()))
            ),
            Rejection::EgoLateral { expected, observed } => write!(
                f,
                "ego lateral mismatch: expected {expected}, observed {}",
                opt(&observed.map(|o| o.to_string()))
            ),
            Rejection::StartPosition { expected, observed } => {
                write!(f, "start position: expected {expected}, observed {observed}")
            }
            Rejection::EndPosition { expected, observed } => {
                write!(f, "end position: expected {expected}, observed {observed}")
            }
            Rejection::Duration { seconds, required } => {
                write!(f, "duration: {seconds:.2} s is shorter than {required:.2} s")
            }
        }
    }
}

fn rejection_reasons(
    c: &Candidate,
    query: &ScenarioQuery,
    params: &SearchParams,
    frame_rate: f64,
) -> Vec<Rejection> {
    let spec = &query.targets[c.target_index];
    let o = &c.observed;
    let mut out = Vec::new();
    if !o.ego_matched {
        if o.ego_longitudinal != Some(query.ego.longitudinal) {
            out.push(Rejection::EgoLongitudinal {
                expected: query.ego.longitudinal,
                observed: o.ego_longitudinal,
            });
        }
        if o.ego_lateral != Some(query.ego.lateral) {
            out.push(Rejection::EgoLateral {
                expected: query.ego.lateral,
                observed: o.ego_lateral,
            });
        }
    }
    if o.start_position != spec.start.member {
        out.push(Rejection::StartPosition {
            expected: spec.start.member,
            observed: o.start_position,
        });
    }
    if !o.end_matched {
        out.push(Rejection::EndPosition {
            expected: spec.end.member,
            observed: o.end_position,
        });
    }
    if !params.long_enough(c.window, frame_rate) {
        out.push(Rejection::Duration {
            seconds: c.window.duration(frame_rate),
            required: params.min_window_duration,
        });
    }
    out
}

/// Rejection reasons for one candidate; empty when it was accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub candidate: Candidate,
    pub reasons: Vec<Rejection>,
}

/// Explains each candidate against the query. Accepted candidates get an
/// empty reason list.
pub fn disambiguate_report(
    query: &ScenarioQuery,
    params: &SearchParams,
    frame_rate: f64,
    candidates: &[Candidate],
) -> Vec<Explanation> {
    candidates
        .iter()
        .map(|c| Explanation {
            candidate: *c,
            reasons: rejection_reasons(c, query, params, frame_rate),
        })
        .collect()
}

/// Every candidate window for every clause, including windows where only the
/// ego's activities failed but the target started in the queried position.
pub fn find_candidates(
    store: &TrajectoryStore,
    query: &ValidatedQuery,
    params: &SearchParams,
    exec: Execution,
) -> Vec<Candidate> {
    let prep = Prepared::new(store, params, exec);
    let per_ego = par::map_range(exec, store.len(), |ego| {
        let mut out = Vec::new();
        if prep.timelines[ego].is_none() {
            return out;
        }
        let scan = PairScan {
            prep: &prep,
            query,
            params,
            ego_windows: prep.timelines[ego]
                .as_ref()
                .expect("checked")
                .windows_matching(query.ego.longitudinal, query.ego.lateral),
            ego,
        };
        for tgt in prep.neighbours(ego, prep.traj(ego).frame_range()) {
            for k in 0..query.targets.len() {
                scan.scan(tgt, k, true, |c| out.push(c));
            }
        }
        out
    });
    let mut all: Vec<Candidate> = per_ego.into_iter().flatten().collect();
    all.sort_by_key(|c| (c.ego_id, c.window.start, c.target_id, c.target_index, c.window.end));
    all
}

/// Assigns a distinct target to every clause; each choice yields one match.
fn assign(
    hits: &[Vec<TargetWindow>],
    chosen: &mut Vec<TargetWindow>,
    out: &mut Vec<Vec<TargetWindow>>,
) {
    let k = chosen.len();
    if k == hits.len() {
        out.push(chosen.clone());
        return;
    }
    for h in &hits[k] {
        if chosen.iter().any(|c| c.target_id == h.target_id) {
            continue;
        }
        chosen.push(*h);
        assign(hits, chosen, out);
        chosen.pop();
    }
}

pub fn find_matches(
    store: &TrajectoryStore,
    query: &ValidatedQuery,
    params: &SearchParams,
) -> Vec<ScenarioMatch> {
    find_matches_with(store, query, params, Execution::default())
}

/// [`find_matches`] with an explicit execution strategy; both strategies
/// return identical results.
pub fn find_matches_with(
    store: &TrajectoryStore,
    query: &ValidatedQuery,
    params: &SearchParams,
    exec: Execution,
) -> Vec<ScenarioMatch> {
    let prep = Prepared::new(store, params, exec);
    let fr = prep.frame_rate;
    let per_ego = par::map_range(exec, store.len(), |ego| {
        let mut out: Vec<ScenarioMatch> = Vec::new();
        let Some(ego_tl) = prep.timelines[ego].as_ref() else {
            return out;
        };
        let ego_windows = ego_tl.windows_matching(query.ego.longitudinal, query.ego.lateral);
        if ego_windows.is_empty() {
            return out;
        }
        let neighbours: Vec<usize> = prep.neighbours(ego, prep.traj(ego).frame_range()).collect();
        for ew in &ego_windows {
            let scan = PairScan {
                prep: &prep,
                query,
                params,
                ego_windows: vec![*ew],
                ego,
            };
            let hits: Vec<Vec<TargetWindow>> = (0..query.targets.len())
                .map(|k| {
                    let mut v = Vec::new();
                    for &tgt in &neighbours {
                        scan.scan(tgt, k, false, |c| {
                            if c.accepted(query, params, fr) {
                                v.push(TargetWindow {
                                    target_id: c.target_id,
                                    analysis_window: c.window,
                                });
                            }
                        });
                    }
                    v
                })
                .collect();
            if hits.iter().any(Vec::is_empty) {
                continue;
            }
            let mut combos = Vec::new();
            assign(&hits, &mut Vec::with_capacity(hits.len()), &mut combos);
            for targets in combos {
                let scenario_window = targets
                    .iter()
                    .map(|t| t.analysis_window)
                    .reduce(|a, b| a.hull(&b))
                    .expect("at least one target");
                out.push(ScenarioMatch {
                    recording_id: store.recording_id().to_string(),
                    ego_id: prep.traj(ego).vehicle_id(),
                    targets,
                    scenario_window,
                });
            }
        }
        out
    });
    let mut all: Vec<ScenarioMatch> = per_ego.into_iter().flatten().collect();
    all.sort_by_key(ScenarioMatch::sort_key);
    all.dedup_by(|a, b| a.ego_id == b.ego_id && a.targets == b.targets);
    all
}
