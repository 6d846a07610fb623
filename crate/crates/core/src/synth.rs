//! Deterministic recordings with known scenario labels.
//!
//! Episodes are laid out in time slots that do not overlap, so vehicles of
//! different episodes never coexist. Each slot holds at most one episode per
//! carriageway: lanes 2–4 drive towards −x and lanes 5–7 towards +x, as in
//! highD. Distractors keep their lane and speed, and are placed in the lane
//! that cannot form a query match with the episode sharing their slot.

use crate::activity::DetectionParams;
use crate::evaluation::GroundTruthLabel;
use crate::interval::FrameInterval;
use crate::store::{RecordingConfig, StoreError, TrackSample, Trajectory, TrajectoryStore, VehicleId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const LANE_WIDTH: f64 = 3.75;
const CAR_LENGTH: f64 = 4.5;
const CAR_WIDTH: f64 = 1.9;
/// frames per slot, plus an idle gap between slots
const SLOT_FRAMES: u32 = 300;
const SLOT_GAP: u32 = 25;
/// lateral manoeuvre duration, s
const LANE_CHANGE_TIME: f64 = 4.0;

pub const FOLLOWING: &str = "following";
pub const CUT_IN: &str = "cut-in";
pub const CUT_OUT: &str = "cut-out";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("corpus spec requests nothing")]
    EmptySpec,
    #[error("frame rate must be positive")]
    FrameRate,
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub following: usize,
    pub cut_in: usize,
    pub cut_out: usize,
    pub distractors: usize,
}

impl CorpusSpec {
    fn episodes(&self) -> usize {
        self.following + self.cut_in + self.cut_out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub store: TrajectoryStore,
    pub labels: Vec<GroundTruthLabel>,
}

impl SyntheticCorpus {
    pub fn csv(&self) -> String {
        let mut buf = Vec::new();
        self.store.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn labels_of(&self, category: &str) -> Vec<GroundTruthLabel> {
        self.labels
            .iter()
            .filter(|l| l.category == category)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Following,
    CutIn,
    CutOut,
}

/// Lanes counted from the driver's right: 0 right, 1 middle, 2 left.
#[derive(Debug, Clone, Copy)]
struct Carriageway {
    positive: bool,
}

impl Carriageway {
    fn lane_id(self, local: u32) -> u32 {
        if self.positive {
            7 - local
        } else {
            2 + local
        }
    }

    fn dir(self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }

    /// Image y of a lane centre; lane ids grow downward.
    fn lane_y(self, local: u32) -> f64 {
        let id = self.lane_id(local) as f64;
        id * LANE_WIDTH - LANE_WIDTH / 2.0 + if self.positive { 1.5 } else { 0.0 }
    }

    /// x of the road start in the travel direction.
    fn origin(self) -> f64 {
        if self.positive {
            20.0
        } else {
            420.0
        }
    }
}

fn round3(v: f64) -> f64 {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Longitudinal motion in travel coordinates.
struct Motion {
    s0: f64,
    v0: f64,
    /// (from frame offset, acceleration) steps, sorted
    accel: Vec<(u32, f64)>,
}

impl Motion {
    fn constant(s0: f64, v0: f64) -> Self {
        Self {
            s0,
            v0,
            accel: vec![(0, 0.0)],
        }
    }

    /// (s, v, a) per frame offset, integrated exactly per step.
    fn states(&self, n: u32, dt: f64) -> Vec<(f64, f64, f64)> {
        let (mut s, mut v) = (self.s0, self.v0);
        let mut out = Vec::with_capacity(n as usize);
        for k in 0..n {
            let a = self
                .accel
                .iter()
                .rev()
                .find(|(f, _)| *f <= k)
                .map_or(0.0, |(_, a)| *a);
            out.push((s, v, a));
            s += v * dt + 0.5 * a * dt * dt;
            v += a * dt;
        }
        out
    }
}

/// Lateral motion: lane before and after a crossing at `cross` (offset).
struct Lateral {
    from: u32,
    to: u32,
    cross: Option<u32>,
}

impl Lateral {
    fn keep(lane: u32) -> Self {
        Self {
            from: lane,
            to: lane,
            cross: None,
        }
    }

    /// (lane, y, vy, ay) at offset k; a cosine blend centred on the crossing.
    fn state(&self, road: Carriageway, k: u32, dt: f64) -> (u32, f64, f64, f64) {
        let y0 = road.lane_y(self.from);
        let Some(c) = self.cross else {
            return (road.lane_id(self.from), y0, 0.0, 0.0);
        };
        let y1 = road.lane_y(self.to);
        let t = (k as f64 - c as f64) * dt;
        let half = LANE_CHANGE_TIME / 2.0;
        let lane = road.lane_id(if k < c { self.from } else { self.to });
        if t <= -half {
            return (lane, y0, 0.0, 0.0);
        }
        if t >= half {
            return (lane, y1, 0.0, 0.0);
        }
        let w = PI / LANE_CHANGE_TIME;
        let u = (t + half) * w;
        let d = y1 - y0;
        (
            lane,
            y0 + d * (1.0 - u.cos()) / 2.0,
            d * w * u.sin() / 2.0,
            d * w * w * u.cos() / 2.0,
        )
    }
}

struct VehiclePlan {
    road: Carriageway,
    start: u32,
    frames: u32,
    motion: Motion,
    lateral: Lateral,
}

impl VehiclePlan {
    fn build(&self, id: VehicleId, frame_rate: f64) -> Result<Trajectory, StoreError> {
        let dt = 1.0 / frame_rate;
        let dir = self.road.dir();
        let samples = self
            .motion
            .states(self.frames, dt)
            .into_iter()
            .enumerate()
            .map(|(k, (s, v, a))| {
                let (lane, y, vy, ay) = self.lateral.state(self.road, k as u32, dt);
                let xc = self.road.origin() + dir * s;
                TrackSample {
                    frame: self.start + k as u32,
                    x: round3(xc - CAR_LENGTH / 2.0),
                    y: round3(y - CAR_WIDTH / 2.0),
                    width: CAR_LENGTH,
                    height: CAR_WIDTH,
                    x_velocity: round3(dir * v),
                    y_velocity: round3(vy),
                    x_acceleration: round3(dir * a),
                    y_acceleration: round3(ay),
                    lane_id: lane,
                }
            })
            .collect();
        Trajectory::new(id, samples)
    }
}

struct Episode {
    ego: VehiclePlan,
    target: VehiclePlan,
    /// expected analysis window as offsets into the slot
    window: (u32, u32),
    category: &'static str,
    /// local lane where distractors cannot form a match
    free_lane: u32,
}

fn episode(kind: Kind, road: Carriageway, start: u32, rng: &mut ChaCha8Rng, fr: f64) -> Episode {
    let n = SLOT_FRAMES;
    // lane-change activity spans the default half window around a crossing
    let half = DetectionParams::default().half_window_frames(fr);
    let jitter = rng.random_range(-1.0..1.0);
    match kind {
        Kind::Following => {
            let brake_at = 100 + rng.random_range(0..25u32);
            let brake_len = (3.0 * fr).round() as u32;
            let v = 28.0 + jitter;
            let gap = 30.0 + 5.0 * jitter;
            let braking = vec![(0, 0.0), (brake_at, -2.0), (brake_at + brake_len, 0.0)];
            Episode {
                ego: VehiclePlan {
                    road,
                    start,
                    frames: n,
                    motion: Motion {
                        s0: 0.0,
                        v0: v,
                        accel: braking.clone(),
                    },
                    lateral: Lateral::keep(1),
                },
                target: VehiclePlan {
                    road,
                    start,
                    frames: n,
                    motion: Motion {
                        s0: gap + CAR_LENGTH,
                        v0: v,
                        accel: braking,
                    },
                    lateral: Lateral::keep(1),
                },
                window: (brake_at, brake_at + brake_len - 1),
                category: FOLLOWING,
                free_lane: 0,
            }
        }
        Kind::CutIn | Kind::CutOut => {
            let cross = 150 + rng.random_range(0..20u32);
            let t_cross = cross as f64 / fr;
            let v_ego = 30.0 + 0.5 * jitter;
            let a = 0.8;
            // speed and lead of the target when it crosses the lane marking
            let (v_c, lead_c) = if kind == Kind::CutIn {
                (v_ego - 2.5, 20.0)
            } else {
                (v_ego - 2.0, 25.0)
            };
            let v0 = v_c - a * t_cross;
            let ego_s = |t: f64| 40.0 + v_ego * t;
            let s0 = ego_s(t_cross) + lead_c - v0 * t_cross - 0.5 * a * t_cross * t_cross;
            let (lateral, category, free_lane) = if kind == Kind::CutIn {
                (
                    Lateral {
                        from: 2,
                        to: 1,
                        cross: Some(cross),
                    },
                    CUT_IN,
                    0,
                )
            } else {
                (
                    Lateral {
                        from: 1,
                        to: 0,
                        cross: Some(cross),
                    },
                    CUT_OUT,
                    2,
                )
            };
            Episode {
                ego: VehiclePlan {
                    road,
                    start,
                    frames: n,
                    motion: Motion::constant(40.0, v_ego),
                    lateral: Lateral::keep(1),
                },
                target: VehiclePlan {
                    road,
                    start,
                    frames: n,
                    motion: Motion {
                        s0,
                        v0,
                        accel: vec![(0, a)],
                    },
                    lateral,
                },
                window: (cross - half, cross + half),
                category,
                free_lane,
            }
        }
    }
}

/// Builds a noise-free corpus with the requested episodes and distractors.
/// The same seed always gives the same bytes.
pub fn synthetic_corpus(
    seed: u64,
    spec: CorpusSpec,
    frame_rate: f64,
) -> Result<SyntheticCorpus, SynthError> {
    if spec.episodes() + spec.distractors == 0 {
        return Err(SynthError::EmptySpec);
    }
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(SynthError::FrameRate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds: Vec<Kind> = std::iter::repeat_n(Kind::Following, spec.following)
        .chain(std::iter::repeat_n(Kind::CutIn, spec.cut_in))
        .chain(std::iter::repeat_n(Kind::CutOut, spec.cut_out))
        .collect();
    // slot i, carriageway i % 2
    let slots = kinds.len().div_ceil(2).max(1);
    let slot_start = |i: usize| 1 + i as u32 * (SLOT_FRAMES + SLOT_GAP);
    let road_of = |i: usize| Carriageway { positive: i.is_multiple_of(2) };

    let mut trajectories = Vec::new();
    let mut labels = Vec::new();
    let mut next_id: VehicleId = 1;
    let mut free_lanes: Vec<(usize, Carriageway, u32)> = Vec::new();
    for (i, kind) in kinds.iter().enumerate() {
        let slot = i / 2;
        let road = road_of(i);
        let start = slot_start(slot);
        let ep = episode(*kind, road, start, &mut rng, frame_rate);
        let (ego_id, tgt_id) = (next_id, next_id + 1);
        next_id += 2;
        trajectories.push(ep.ego.build(ego_id, frame_rate)?);
        trajectories.push(ep.target.build(tgt_id, frame_rate)?);
        labels.push(GroundTruthLabel {
            category: ep.category.to_string(),
            ego_id,
            target_id: tgt_id,
            frames: FrameInterval::new(start + ep.window.0, start + ep.window.1)
                .expect("ordered window"),
        });
        free_lanes.push((slot, road, ep.free_lane));
    }
    // carriageways without an episode are free in every lane
    for slot in 0..slots {
        for positive in [true, false] {
            let road = Carriageway { positive };
            if !free_lanes
                .iter()
                .any(|(s, r, _)| *s == slot && r.positive == positive)
            {
                free_lanes.push((slot, road, 1));
            }
        }
    }
    free_lanes.sort_by_key(|(s, r, _)| (*s, !r.positive));
    let mut used = vec![0u32; free_lanes.len()];
    for d in 0..spec.distractors {
        let k = d % free_lanes.len();
        let (slot, road, lane) = free_lanes[k];
        let v = 26.0 + rng.random_range(0.0..6.0);
        let plan = VehiclePlan {
            road,
            start: slot_start(slot),
            frames: SLOT_FRAMES,
            // same speed within a lane would be needed to keep spacing; a
            // long stagger avoids any overtaking inside the slot
            motion: Motion::constant(200.0 * used[k] as f64, v),
            lateral: Lateral::keep(lane),
        };
        used[k] += 1;
        trajectories.push(plan.build(next_id, frame_rate)?);
        next_id += 1;
    }
    let store = TrajectoryStore::from_trajectories(
        RecordingConfig::new(format!("synthetic-{seed}"), frame_rate),
        trajectories,
    )?;
    Ok(SyntheticCorpus { store, labels })
}

/// Unlabelled traffic for load tests: `tracks` vehicles spread over
/// `frames` frames, each a few hundred frames long, with random speed
/// changes and lane changes.
pub fn random_traffic(
    seed: u64,
    tracks: usize,
    frames: u32,
    frame_rate: f64,
) -> Result<TrajectoryStore, SynthError> {
    if tracks == 0 || frames == 0 {
        return Err(SynthError::EmptySpec);
    }
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(SynthError::FrameRate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(tracks);
    for i in 0..tracks {
        let len = rng.random_range(200..=600u32).min(frames);
        let start = 1 + rng.random_range(0..=frames - len);
        let road = Carriageway {
            positive: rng.random_bool(0.5),
        };
        let lane = rng.random_range(0..3u32);
        let mut accel = vec![(0u32, 0.0)];
        let mut k = 0;
        while k < len {
            k += rng.random_range(40..160u32);
            let a = [-1.5, 0.0, 0.0, 1.0][rng.random_range(0..4usize)];
            accel.push((k, a));
        }
        // keep speeds well away from zero whatever the draws
        let v0 = 25.0 + rng.random_range(0.0..10.0);
        let lateral = if len > 150 && rng.random_bool(0.4) {
            let to = if lane == 1 {
                [0, 2][rng.random_range(0..2usize)]
            } else {
                1
            };
            Lateral {
                from: lane,
                to,
                cross: Some(rng.random_range(60..len - 60)),
            }
        } else {
            Lateral::keep(lane)
        };
        let plan = VehiclePlan {
            road,
            start,
            frames: len,
            motion: Motion {
                s0: rng.random_range(0.0..100.0),
                v0,
                accel,
            },
            lateral,
        };
        out.push(plan.build(i as VehicleId + 1, frame_rate)?);
    }
    Ok(TrajectoryStore::from_trajectories(
        RecordingConfig::new(format!("traffic-{seed}"), frame_rate),
        out,
    )?)
}
