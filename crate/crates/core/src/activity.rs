//! Longitudinal and lateral activity segmentation.
//!
//! Every frame of a trajectory carries exactly one longitudinal and one
//! lateral activity. Frame labels are merged into maximal runs; the boundary
//! between two runs is the event at which one activity ends and the next
//! begins.

use crate::interval::FrameInterval;
use crate::store::Trajectory;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("acceleration threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("invalid detection parameters: {0}")]
    InvalidParams(String),
    #[error("lane change with zero longitudinal velocity has no direction")]
    UndecidableDirection,
    #[error("opposite lane changes too close together at frames {frames:?}")]
    Ambiguous { frames: Vec<u32> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LongitudinalActivity {
    #[serde(rename = "keep velocity")]
    KeepVelocity,
    #[serde(rename = "acceleration")]
    Acceleration,
    #[serde(rename = "deceleration")]
    Deceleration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LateralActivity {
    #[serde(rename = "follow lane")]
    FollowLane,
    #[serde(rename = "lane change left")]
    LaneChangeLeft,
    #[serde(rename = "lane change right")]
    LaneChangeRight,
}

impl LongitudinalActivity {
    pub const ALL: [Self; 3] = [Self::KeepVelocity, Self::Acceleration, Self::Deceleration];

    pub fn label(self) -> &'static str {
        match self {
            Self::KeepVelocity => "keep velocity",
            Self::Acceleration => "acceleration",
            Self::Deceleration => "deceleration",
        }
    }
}

impl LateralActivity {
    pub const ALL: [Self; 3] = [Self::FollowLane, Self::LaneChangeLeft, Self::LaneChangeRight];

    pub fn label(self) -> &'static str {
        match self {
            Self::FollowLane => "follow lane",
            Self::LaneChangeLeft => "lane change left",
            Self::LaneChangeRight => "lane change right",
        }
    }
}

impl fmt::Display for LongitudinalActivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl fmt::Display for LateralActivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A maximal frame interval carrying one activity of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivitySegment<K> {
    pub kind: K,
    pub frames: FrameInterval,
}

pub type LongitudinalSegment = ActivitySegment<LongitudinalActivity>;
pub type LateralSegment = ActivitySegment<LateralActivity>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionParams {
    /// m/s²
    pub a_lon_threshold: f64,
    /// seconds
    pub min_activity_duration: f64,
    /// seconds on each side of a lane crossing
    pub lane_change_half_window: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            a_lon_threshold: 0.2,
            min_activity_duration: 1.0,
            lane_change_half_window: 2.0,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<(), DetectionError> {
        if !self.a_lon_threshold.is_finite() || self.a_lon_threshold <= 0.0 {
            return Err(DetectionError::InvalidThreshold(self.a_lon_threshold));
        }
        if !self.min_activity_duration.is_finite() || self.min_activity_duration < 0.0 {
            return Err(DetectionError::InvalidParams(
                "min_activity_duration must be >= 0".into(),
            ));
        }
        if !self.lane_change_half_window.is_finite() || self.lane_change_half_window < 0.0 {
            return Err(DetectionError::InvalidParams(
                "lane_change_half_window must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Half window in frames, rounded down.
    pub fn half_window_frames(&self, frame_rate: f64) -> u32 {
        (self.lane_change_half_window * frame_rate + 1e-9).floor() as u32
    }

    /// Whether a run of `len` frames is shorter than the minimum activity duration.
    pub fn is_short_run(&self, len: usize, frame_rate: f64) -> bool {
        (len as f64) + 1e-9 < self.min_activity_duration * frame_rate
    }
}

pub fn classify_longitudinal(
    a_lon: f64,
    a_thr: f64,
) -> Result<LongitudinalActivity, DetectionError> {
    if !a_lon.is_finite() {
        return Err(DetectionError::NonFinite("a_lon"));
    }
    if !a_thr.is_finite() || a_thr <= 0.0 {
        return Err(DetectionError::InvalidThreshold(a_thr));
    }
    Ok(if a_lon < -a_thr {
        LongitudinalActivity::Deceleration
    } else if a_lon > a_thr {
        LongitudinalActivity::Acceleration
    } else {
        LongitudinalActivity::KeepVelocity
    })
}

/// Lane ids grow towards the driver's right when travelling towards +x, so
/// the direction of a lane change flips with the sign of `v_lon`.
pub fn classify_lateral(delta_lane: i32, v_lon: f64) -> Result<LateralActivity, DetectionError> {
    if !v_lon.is_finite() {
        return Err(DetectionError::NonFinite("v_lon"));
    }
    if delta_lane == 0 {
        return Ok(LateralActivity::FollowLane);
    }
    if v_lon == 0.0 {
        return Err(DetectionError::UndecidableDirection);
    }
    Ok(if (delta_lane > 0) == (v_lon > 0.0) {
        LateralActivity::LaneChangeRight
    } else {
        LateralActivity::LaneChangeLeft
    })
}

/// Longitudinal acceleration along the direction of travel.
///
/// highD accelerations are image-frame x components; for vehicles driving
/// towards -x the sign is flipped so braking reads as negative.
pub fn longitudinal_acceleration(traj: &Trajectory) -> impl Iterator<Item = f64> + '_ {
    let sign = traj.direction().map_or(1.0, |d| d.sign());
    traj.samples().iter().map(move |s| sign * s.x_acceleration)
}

struct Run<K> {
    kind: K,
    len: usize,
}

/// Merges runs shorter than the minimum duration into a neighbour, shortest
/// first (earliest on ties). The longer neighbour absorbs; the preceding one
/// wins a tie.
fn absorb_short_runs<K: Copy + PartialEq>(runs: &mut Vec<Run<K>>, is_short: impl Fn(usize) -> bool) {
    while runs.len() > 1 {
        let victim = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| is_short(r.len))
            .min_by_key(|(i, r)| (r.len, *i))
            .map(|(i, _)| i);
        let Some(i) = victim else { break };
        let into = match (i.checked_sub(1), (i + 1 < runs.len()).then_some(i + 1)) {
            (Some(p), Some(n)) => {
                if runs[n].len > runs[p].len {
                    n
                } else {
                    p
                }
            }
            (Some(p), None) => p,
            (None, Some(n)) => n,
            (None, None) => unreachable!("more than one run"),
        };
        let len = runs[i].len;
        runs[into].len += len;
        runs.remove(i);
        // the absorbing run may now touch a run of its own kind
        let at = if into > i { into - 1 } else { into };
        if at + 1 < runs.len() && runs[at + 1].kind == runs[at].kind {
            runs[at].len += runs[at + 1].len;
            runs.remove(at + 1);
        }
        if at > 0 && runs[at - 1].kind == runs[at].kind {
            runs[at - 1].len += runs[at].len;
            runs.remove(at);
        }
    }
}

fn runs_to_segments<K: Copy>(first_frame: u32, runs: &[Run<K>]) -> Vec<ActivitySegment<K>> {
    let mut start = first_frame;
    runs.iter()
        .map(|r| {
            let seg = ActivitySegment {
                kind: r.kind,
                frames: FrameInterval {
                    start,
                    end: start + r.len as u32 - 1,
                },
            };
            start += r.len as u32;
            seg
        })
        .collect()
}

pub fn segment_longitudinal(
    traj: &Trajectory,
    params: &DetectionParams,
    frame_rate: f64,
) -> Result<Vec<LongitudinalSegment>, DetectionError> {
    params.validate()?;
    let mut runs: Vec<Run<LongitudinalActivity>> = Vec::new();
    for a in longitudinal_acceleration(traj) {
        let kind = classify_longitudinal(a, params.a_lon_threshold)?;
        match runs.last_mut() {
            Some(r) if r.kind == kind => r.len += 1,
            _ => runs.push(Run { kind, len: 1 }),
        }
    }
    absorb_short_runs(&mut runs, |len| params.is_short_run(len, frame_rate));
    Ok(runs_to_segments(traj.first_frame(), &runs))
}

pub fn segment_lateral(
    traj: &Trajectory,
    params: &DetectionParams,
    frame_rate: f64,
) -> Result<Vec<LateralSegment>, DetectionError> {
    params.validate()?;
    let range = traj.frame_range();
    let w = params.half_window_frames(frame_rate);
    let v_sign = traj.direction().map_or(0.0, |d| d.sign());

    // (direction, window, crossing frames) for merged lane-change windows
    let mut windows: Vec<(LateralActivity, FrameInterval, Vec<u32>)> = Vec::new();
    for pair in traj.samples().windows(2) {
        let delta = pair[1].lane_id as i32 - pair[0].lane_id as i32;
        if delta == 0 {
            continue;
        }
        let crossing = pair[1].frame;
        let kind = classify_lateral(delta, v_sign)?;
        let window = FrameInterval {
            start: crossing.saturating_sub(w).max(range.start),
            end: crossing.saturating_add(w).min(range.end),
        };
        match windows.last_mut() {
            Some((k, win, frames)) if window.start <= win.end.saturating_add(1) => {
                if *k == kind {
                    win.end = win.end.max(window.end);
                    frames.push(crossing);
                } else if window.start <= win.end {
                    let mut all = frames.clone();
                    all.push(crossing);
                    return Err(DetectionError::Ambiguous { frames: all });
                } else {
                    windows.push((kind, window, vec![crossing]));
                }
            }
            _ => windows.push((kind, window, vec![crossing])),
        }
    }

    let mut out = Vec::with_capacity(windows.len() * 2 + 1);
    let mut cursor = range.start;
    for (kind, win, _) in windows {
        if win.start > cursor {
            out.push(ActivitySegment {
                kind: LateralActivity::FollowLane,
                frames: FrameInterval {
                    start: cursor,
                    end: win.start - 1,
                },
            });
        }
        out.push(ActivitySegment { kind, frames: win });
        cursor = win.end + 1;
    }
    if cursor <= range.end {
        out.push(ActivitySegment {
            kind: LateralActivity::FollowLane,
            frames: FrameInterval {
                start: cursor,
                end: range.end,
            },
        });
    }
    Ok(out)
}

/// Both channels of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityTimeline {
    pub longitudinal: Vec<LongitudinalSegment>,
    pub lateral: Vec<LateralSegment>,
}

impl ActivityTimeline {
    pub fn detect(
        traj: &Trajectory,
        params: &DetectionParams,
        frame_rate: f64,
    ) -> Result<Self, DetectionError> {
        Ok(Self {
            longitudinal: segment_longitudinal(traj, params, frame_rate)?,
            lateral: segment_lateral(traj, params, frame_rate)?,
        })
    }

    pub fn longitudinal_at(&self, frame: u32) -> Option<LongitudinalActivity> {
        kind_at(&self.longitudinal, frame)
    }

    pub fn lateral_at(&self, frame: u32) -> Option<LateralActivity> {
        kind_at(&self.lateral, frame)
    }

    /// Maximal intervals where both channels carry the requested kinds.
    pub fn windows_matching(
        &self,
        longitudinal: LongitudinalActivity,
        lateral: LateralActivity,
    ) -> Vec<FrameInterval> {
        let mut out = Vec::new();
        for lon in self.longitudinal.iter().filter(|s| s.kind == longitudinal) {
            for lat in self.lateral.iter().filter(|s| s.kind == lateral) {
                if let Some(w) = lon.frames.intersect(&lat.frames) {
                    out.push(w);
                }
            }
        }
        out.sort();
        out
    }
}

fn kind_at<K: Copy>(segments: &[ActivitySegment<K>], frame: u32) -> Option<K> {
    let i = segments.partition_point(|s| s.frames.end < frame);
    segments
        .get(i)
        .filter(|s| s.frames.contains(frame))
        .map(|s| s.kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{TrackSample, Trajectory};
    use proptest::prelude::*;

    fn traj_from(accels: &[f64], lanes: &[u32], vx: f64) -> Trajectory {
        let samples = accels
            .iter()
            .zip(lanes)
            .enumerate()
            .map(|(i, (&a, &l))| TrackSample {
                frame: i as u32,
                x: i as f64,
                y: 0.0,
                width: 4.0,
                height: 2.0,
                x_velocity: vx,
                y_velocity: 0.0,
                x_acceleration: a,
                y_acceleration: 0.0,
                lane_id: l,
            })
            .collect();
        Trajectory::new(1, samples).unwrap()
    }

    fn seg<K>(kind: K, a: u32, b: u32) -> ActivitySegment<K> {
        ActivitySegment {
            kind,
            frames: FrameInterval::new(a, b).unwrap(),
        }
    }

    /// Literal three-branch transcription of the threshold rule.
    fn longitudinal_rule(a: f64, thr: f64) -> LongitudinalActivity {
        if a < -thr {
            LongitudinalActivity::Deceleration
        } else if a > thr {
            LongitudinalActivity::Acceleration
        } else {
            LongitudinalActivity::KeepVelocity
        }
    }

    /// Literal transcription of the lane-change direction rule.
    fn lateral_rule(dl: i32, v: f64) -> LateralActivity {
        if dl == 0 {
            LateralActivity::FollowLane
        } else if (dl > 0 && v > 0.0) || (dl < 0 && v < 0.0) {
            LateralActivity::LaneChangeRight
        } else {
            LateralActivity::LaneChangeLeft
        }
    }

    /// Frame-label oracle: relabel the shortest short run until none remain.
    fn brute_force_longitudinal(
        accels: &[f64],
        params: &DetectionParams,
        frame_rate: f64,
    ) -> Vec<LongitudinalSegment> {
        let mut labels: Vec<LongitudinalActivity> =
            accels.iter().map(|&a| longitudinal_rule(a, params.a_lon_threshold)).collect();
        loop {
            let mut runs: Vec<(usize, usize)> = Vec::new(); // (start, end) inclusive
            let mut s = 0;
            for i in 1..=labels.len() {
                if i == labels.len() || labels[i] != labels[s] {
                    runs.push((s, i - 1));
                    s = i;
                }
            }
            if runs.len() <= 1 {
                break;
            }
            let mut best: Option<usize> = None;
            for (k, &(a, b)) in runs.iter().enumerate() {
                let len = b - a + 1;
                if (len as f64) + 1e-9 < params.min_activity_duration * frame_rate {
                    match best {
                        Some(j) if runs[j].1 - runs[j].0 < len => {}
                        _ => best = Some(k),
                    }
                }
            }
            let Some(k) = best else { break };
            let len_of = |j: usize| runs[j].1 - runs[j].0 + 1;
            let target = if k == 0 {
                k + 1
            } else if k == runs.len() - 1 {
                k - 1
            } else if len_of(k + 1) > len_of(k - 1) {
                k + 1
            } else {
                k - 1
            };
            let new_label = labels[runs[target].0];
            for l in &mut labels[runs[k].0..=runs[k].1] {
                *l = new_label;
            }
        }
        let mut out = Vec::new();
        let mut s = 0;
        for i in 1..=labels.len() {
            if i == labels.len() || labels[i] != labels[s] {
                out.push(seg(labels[s], s as u32, i as u32 - 1));
                s = i;
            }
        }
        out
    }

    #[test]
    fn longitudinal_branches() {
        use LongitudinalActivity::*;
        assert_eq!(classify_longitudinal(-0.5, 0.2), Ok(Deceleration));
        assert_eq!(classify_longitudinal(0.5, 0.2), Ok(Acceleration));
        assert_eq!(classify_longitudinal(0.2, 0.2), Ok(KeepVelocity));
        assert_eq!(classify_longitudinal(-0.2, 0.2), Ok(KeepVelocity));
        assert!(classify_longitudinal(f64::NAN, 0.2).is_err());
        assert!(classify_longitudinal(0.1, 0.0).is_err());
    }

    #[test]
    fn lateral_branches() {
        use LateralActivity::*;
        assert_eq!(classify_lateral(0, 30.0), Ok(FollowLane));
        assert_eq!(classify_lateral(1, 30.0), Ok(LaneChangeRight));
        assert_eq!(classify_lateral(1, -30.0), Ok(LaneChangeLeft));
        assert_eq!(classify_lateral(-1, -30.0), Ok(LaneChangeRight));
        assert_eq!(classify_lateral(0, 0.0), Ok(FollowLane));
        assert_eq!(classify_lateral(1, 0.0), Err(DetectionError::UndecidableDirection));
    }

    #[test]
    fn lateral_truth_table_and_mirror() {
        for dl in -2..=2 {
            for v in [-30.0, 30.0] {
                assert_eq!(classify_lateral(dl, v).unwrap(), lateral_rule(dl, v), "dl={dl} v={v}");
                assert_eq!(classify_lateral(dl, v), classify_lateral(-dl, -v));
            }
        }
    }

    #[test]
    fn constant_acceleration_single_segment() {
        let t = traj_from(&[0.0; 100], &[3; 100], 30.0);
        let segs = segment_longitudinal(&t, &DetectionParams::default(), 25.0).unwrap();
        assert_eq!(segs, vec![seg(LongitudinalActivity::KeepVelocity, 0, 99)]);
    }

    #[test]
    fn brake_then_accelerate() {
        let accels: Vec<f64> = (0..100).map(|i| if i < 50 { -1.0 } else { 1.0 }).collect();
        let t = traj_from(&accels, &[3; 100], 30.0);
        let params = DetectionParams {
            min_activity_duration: 0.0,
            ..Default::default()
        };
        let segs = segment_longitudinal(&t, &params, 25.0).unwrap();
        assert_eq!(
            segs,
            vec![
                seg(LongitudinalActivity::Deceleration, 0, 49),
                seg(LongitudinalActivity::Acceleration, 50, 99)
            ]
        );
    }

    #[test]
    fn negative_direction_flips_acceleration() {
        // x acceleration +1 while driving towards -x is braking
        let t = traj_from(&[1.0; 40], &[2; 40], -30.0);
        let segs = segment_longitudinal(&t, &DetectionParams::default(), 25.0).unwrap();
        assert_eq!(segs, vec![seg(LongitudinalActivity::Deceleration, 0, 39)]);
    }

    #[test]
    fn short_blip_absorbed() {
        let mut accels = vec![0.0; 100];
        for a in &mut accels[40..45] {
            *a = 1.0;
        }
        let t = traj_from(&accels, &[3; 100], 30.0);
        let segs = segment_longitudinal(&t, &DetectionParams::default(), 25.0).unwrap();
        assert_eq!(segs, vec![seg(LongitudinalActivity::KeepVelocity, 0, 99)]);
    }

    #[test]
    fn tie_goes_to_preceding_neighbour() {
        // 30 accel, 5 keep, 30 decel: the keep blip joins the accel run
        let mut accels = vec![1.0; 30];
        accels.extend([0.0; 5]);
        accels.extend([-1.0; 30]);
        let t = traj_from(&accels, &[3; 65], 30.0);
        let segs = segment_longitudinal(&t, &DetectionParams::default(), 25.0).unwrap();
        assert_eq!(
            segs,
            vec![
                seg(LongitudinalActivity::Acceleration, 0, 34),
                seg(LongitudinalActivity::Deceleration, 35, 64)
            ]
        );
    }

    #[test]
    fn constant_lane_follows() {
        let t = traj_from(&[0.0; 50], &[2; 50], 30.0);
        let segs = segment_lateral(&t, &DetectionParams::default(), 25.0).unwrap();
        assert_eq!(segs, vec![seg(LateralActivity::FollowLane, 0, 49)]);
    }

    #[test]
    fn lane_change_window() {
        let lanes: Vec<u32> = (0..200).map(|f| if f < 100 { 2 } else { 3 }).collect();
        let t = traj_from(&[0.0; 200], &lanes, 30.0);
        let params = DetectionParams::default(); // 2 s * 25 Hz = 50 frames
        let segs = segment_lateral(&t, &params, 25.0).unwrap();
        assert_eq!(
            segs,
            vec![
                seg(LateralActivity::FollowLane, 0, 49),
                seg(LateralActivity::LaneChangeRight, 50, 150),
                seg(LateralActivity::FollowLane, 151, 199)
            ]
        );
        let lanes: Vec<u32> = (0..200).map(|f| if f < 100 { 3 } else { 2 }).collect();
        let t = traj_from(&[0.0; 200], &lanes, -30.0);
        let segs = segment_lateral(&t, &params, 25.0).unwrap();
        assert_eq!(segs[1], seg(LateralActivity::LaneChangeRight, 50, 150));
    }

    #[test]
    fn lane_change_window_clipped_and_merged() {
        // crossings at 10 and 60, same direction, windows overlap
        let lanes: Vec<u32> = (0..120)
            .map(|f| match f {
                0..=9 => 2,
                10..=59 => 3,
                _ => 4,
            })
            .collect();
        let t = traj_from(&[0.0; 120], &lanes, 30.0);
        let segs = segment_lateral(&t, &DetectionParams::default(), 25.0).unwrap();
        assert_eq!(
            segs,
            vec![
                seg(LateralActivity::LaneChangeRight, 0, 110),
                seg(LateralActivity::FollowLane, 111, 119)
            ]
        );
    }

    #[test]
    fn opposite_crossings_are_ambiguous() {
        let lanes: Vec<u32> = (0..200)
            .map(|f| if (100..130).contains(&f) { 3 } else { 2 })
            .collect();
        let t = traj_from(&[0.0; 200], &lanes, 30.0);
        match segment_lateral(&t, &DetectionParams::default(), 25.0) {
            Err(DetectionError::Ambiguous { frames }) => assert_eq!(frames, vec![100, 130]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn windows_matching_intersects_channels() {
        let accels: Vec<f64> = (0..200).map(|f| if f >= 80 { 1.0 } else { 0.0 }).collect();
        let lanes: Vec<u32> = (0..200).map(|f| if f < 100 { 2 } else { 3 }).collect();
        let t = traj_from(&accels, &lanes, 30.0);
        let tl = ActivityTimeline::detect(&t, &DetectionParams::default(), 25.0).unwrap();
        assert_eq!(
            tl.windows_matching(
                LongitudinalActivity::Acceleration,
                LateralActivity::LaneChangeRight
            ),
            vec![FrameInterval::new(80, 150).unwrap()]
        );
        assert_eq!(tl.lateral_at(150), Some(LateralActivity::LaneChangeRight));
        assert_eq!(tl.lateral_at(151), Some(LateralActivity::FollowLane));
        assert_eq!(tl.longitudinal_at(500), None);
    }

    fn check_tiling<K: Copy + PartialEq + std::fmt::Debug>(segs: &[ActivitySegment<K>], first: u32, last: u32) {
        assert_eq!(segs.first().unwrap().frames.start, first);
        assert_eq!(segs.last().unwrap().frames.end, last);
        for w in segs.windows(2) {
            assert_eq!(w[0].frames.end + 1, w[1].frames.start);
            assert_ne!(w[0].kind, w[1].kind);
        }
    }

    proptest! {
        #[test]
        fn longitudinal_rule_oracle(a in -5.0f64..5.0, thr in 0.001f64..3.0) {
            prop_assert_eq!(classify_longitudinal(a, thr).unwrap(), longitudinal_rule(a, thr));
        }

        #[test]
        fn longitudinal_matches_brute_force(
            accels in proptest::collection::vec(prop_oneof![Just(0.0), Just(0.5), Just(-0.5), -1.0f64..1.0], 1..300),
            min_dur in 0.0f64..2.0,
        ) {
            let t = traj_from(&accels, &vec![3; accels.len()], 30.0);
            let params = DetectionParams { min_activity_duration: min_dur, ..Default::default() };
            let segs = segment_longitudinal(&t, &params, 25.0).unwrap();
            check_tiling(&segs, 0, accels.len() as u32 - 1);
            prop_assert_eq!(segs, brute_force_longitudinal(&accels, &params, 25.0));
        }

        #[test]
        fn lateral_tiles(changes in proptest::collection::vec(0u32..400, 0..4), w in 0.0f64..3.0) {
            let lanes: Vec<u32> = (0..400u32).map(|f| 2 + changes.iter().filter(|&&c| f >= c).count() as u32).collect();
            let t = traj_from(&vec![0.0; 400], &lanes, 30.0);
            let params = DetectionParams { lane_change_half_window: w, ..Default::default() };
            let segs = segment_lateral(&t, &params, 25.0).unwrap();
            check_tiling(&segs, 0, 399);
        }
    }
}
