//! Target position relative to the ego vehicle.

use crate::interval::FrameInterval;
use crate::store::{coexistence_window, Trajectory};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PositionError {
    #[error("ego longitudinal velocity is zero or unknown; left/right is undefined")]
    UndecidableDirection,
    #[error("vehicles {0} and {1} never coexist")]
    EmptyWindow(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelativePosition {
    #[serde(rename = "front")]
    Front,
    #[serde(rename = "behind")]
    Behind,
    #[serde(rename = "left adjacent lane")]
    LeftAdjacent,
    #[serde(rename = "right adjacent lane")]
    RightAdjacent,
    #[serde(rename = "lane next to left adjacent lane")]
    LaneNextToLeftAdjacent,
    #[serde(rename = "lane next to right adjacent lane")]
    LaneNextToRightAdjacent,
    #[serde(rename = "out of scope")]
    OutOfScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PositionGroup {
    #[serde(rename = "same lane")]
    SameLane,
    #[serde(rename = "adjacent lane")]
    AdjacentLane,
    #[serde(rename = "lane next to adjacent lane")]
    LaneNextToAdjacentLane,
}

impl RelativePosition {
    /// The six classifiable positions, in taxonomy order.
    pub const MEMBERS: [Self; 6] = [
        Self::Front,
        Self::Behind,
        Self::LeftAdjacent,
        Self::RightAdjacent,
        Self::LaneNextToLeftAdjacent,
        Self::LaneNextToRightAdjacent,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Front => "front",
            Self::Behind => "behind",
            Self::LeftAdjacent => "left adjacent lane",
            Self::RightAdjacent => "right adjacent lane",
            Self::LaneNextToLeftAdjacent => "lane next to left adjacent lane",
            Self::LaneNextToRightAdjacent => "lane next to right adjacent lane",
            Self::OutOfScope => "out of scope",
        }
    }

    pub fn group(self) -> Option<PositionGroup> {
        match self {
            Self::Front | Self::Behind => Some(PositionGroup::SameLane),
            Self::LeftAdjacent | Self::RightAdjacent => Some(PositionGroup::AdjacentLane),
            Self::LaneNextToLeftAdjacent | Self::LaneNextToRightAdjacent => {
                Some(PositionGroup::LaneNextToAdjacentLane)
            }
            Self::OutOfScope => None,
        }
    }
}

impl PositionGroup {
    pub const ALL: [Self; 3] = [Self::SameLane, Self::AdjacentLane, Self::LaneNextToAdjacentLane];

    pub fn label(self) -> &'static str {
        match self {
            Self::SameLane => "same lane",
            Self::AdjacentLane => "adjacent lane",
            Self::LaneNextToAdjacentLane => "lane next to adjacent lane",
        }
    }

    pub fn members(self) -> [RelativePosition; 2] {
        match self {
            Self::SameLane => [RelativePosition::Front, RelativePosition::Behind],
            Self::AdjacentLane => [RelativePosition::LeftAdjacent, RelativePosition::RightAdjacent],
            Self::LaneNextToAdjacentLane => [
                RelativePosition::LaneNextToLeftAdjacent,
                RelativePosition::LaneNextToRightAdjacent,
            ],
        }
    }
}

impl fmt::Display for RelativePosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl fmt::Display for PositionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Classifies the target's position from lane ids and bounding-box centers.
///
/// `delta_lane = lane_tgt - lane_ego`, `dx = x_center_tgt - x_center_ego`.
/// Lane ids grow downward in the image, which is the driver's right when
/// travelling towards +x and the driver's left when travelling towards -x.
pub fn classify_position(
    lane_ego: u32,
    lane_tgt: u32,
    x_center_ego: f64,
    x_center_tgt: f64,
    v_lon_ego: f64,
) -> Result<RelativePosition, PositionError> {
    if v_lon_ego == 0.0 || !v_lon_ego.is_finite() {
        return Err(PositionError::UndecidableDirection);
    }
    let delta_lane = lane_tgt as i64 - lane_ego as i64;
    let dx = x_center_tgt - x_center_ego;
    // normalise to the +x case; -x mirrors both axes
    let (dl, ahead) = if v_lon_ego > 0.0 {
        (delta_lane, dx)
    } else {
        (-delta_lane, -dx)
    };
    use RelativePosition::*;
    Ok(match dl {
        0 if ahead > 0.0 => Front,
        0 if ahead < 0.0 => Behind,
        0 => OutOfScope,
        -1 => LeftAdjacent,
        1 => RightAdjacent,
        -2 => LaneNextToLeftAdjacent,
        2 => LaneNextToRightAdjacent,
        _ => OutOfScope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionSpan {
    pub position: RelativePosition,
    pub frames: FrameInterval,
}

/// Position of `tgt` relative to `ego` at one frame; `None` outside coexistence.
pub fn position_at(
    ego: &Trajectory,
    tgt: &Trajectory,
    frame: u32,
) -> Option<Result<RelativePosition, PositionError>> {
    let e = ego.sample_at(frame)?;
    let t = tgt.sample_at(frame)?;
    let v = ego.direction().map_or(0.0, |d| d.sign());
    Some(classify_position(e.lane_id, t.lane_id, e.center_x(), t.center_x(), v))
}

/// Frame-wise positions merged into maximal spans over the coexistence window.
pub fn position_timeline(
    ego: &Trajectory,
    tgt: &Trajectory,
) -> Result<Vec<PositionSpan>, PositionError> {
    let window = coexistence_window(ego, tgt)
        .ok_or(PositionError::EmptyWindow(ego.vehicle_id(), tgt.vehicle_id()))?;
    let v = ego.direction().map_or(0.0, |d| d.sign());
    let es = ego.samples_in(window).expect("window inside ego range");
    let ts = tgt.samples_in(window).expect("window inside target range");
    let mut spans: Vec<PositionSpan> = Vec::new();
    for (e, t) in es.iter().zip(ts) {
        let p = classify_position(e.lane_id, t.lane_id, e.center_x(), t.center_x(), v)?;
        match spans.last_mut() {
            Some(s) if s.position == p => s.frames.end = e.frame,
            _ => spans.push(PositionSpan {
                position: p,
                frames: FrameInterval::single(e.frame),
            }),
        }
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::TrackSample;
    use proptest::prelude::*;
    use RelativePosition::*;

    /// Literal transcription of the two direction-specific case tables.
    fn position_rule(delta_lane: i64, dx: f64, v: f64) -> RelativePosition {
        if v < 0.0 {
            match delta_lane {
                0 if dx < 0.0 => Front,
                0 if dx > 0.0 => Behind,
                1 => LeftAdjacent,
                -1 => RightAdjacent,
                2 => LaneNextToLeftAdjacent,
                -2 => LaneNextToRightAdjacent,
                _ => OutOfScope,
            }
        } else {
            match delta_lane {
                0 if dx > 0.0 => Front,
                0 if dx < 0.0 => Behind,
                -1 => LeftAdjacent,
                1 => RightAdjacent,
                -2 => LaneNextToLeftAdjacent,
                2 => LaneNextToRightAdjacent,
                _ => OutOfScope,
            }
        }
    }

    #[test]
    fn examples() {
        assert_eq!(classify_position(3, 3, 100.0, 90.0, -30.0), Ok(Front));
        assert_eq!(classify_position(3, 2, 0.0, 50.0, 30.0), Ok(LeftAdjacent));
        assert_eq!(classify_position(3, 5, 0.0, -50.0, 30.0), Ok(LaneNextToRightAdjacent));
        assert_eq!(classify_position(3, 6, 0.0, 5.0, 30.0), Ok(OutOfScope));
        assert_eq!(classify_position(3, 3, 5.0, 5.0, 30.0), Ok(OutOfScope));
        assert_eq!(
            classify_position(3, 3, 5.0, 6.0, 0.0),
            Err(PositionError::UndecidableDirection)
        );
    }

    #[test]
    fn exhaustive_truth_table() {
        let mut cases = 0;
        for v in [-30.0, 30.0] {
            for dl in -2i64..=2 {
                for dx in [-10.0, 10.0] {
                    let ego_lane = 4u32;
                    let tgt_lane = (ego_lane as i64 + dl) as u32;
                    let got = classify_position(ego_lane, tgt_lane, 100.0, 100.0 + dx, v).unwrap();
                    assert_eq!(got, position_rule(dl, dx, v), "v={v} dl={dl} dx={dx}");
                    // duality: flip travel direction while negating dx and dl
                    let mirrored_lane = (ego_lane as i64 - dl) as u32;
                    let dual = classify_position(ego_lane, mirrored_lane, 100.0, 100.0 - dx, -v).unwrap();
                    assert_eq!(got, dual);
                    cases += 1;
                }
            }
        }
        assert_eq!(cases, 20);
    }

    fn traj(id: u32, lanes: &[u32], xs: &[f64], vx: f64) -> Trajectory {
        let samples = lanes
            .iter()
            .zip(xs)
            .enumerate()
            .map(|(f, (&lane_id, &x))| TrackSample {
                frame: f as u32,
                x,
                y: 0.0,
                width: 4.0,
                height: 2.0,
                x_velocity: vx,
                y_velocity: 0.0,
                x_acceleration: 0.0,
                y_acceleration: 0.0,
                lane_id,
            })
            .collect();
        Trajectory::new(id, samples).unwrap()
    }

    #[test]
    fn permanent_right_neighbour() {
        let ego = traj(1, &[3; 30], &[0.0; 30], 30.0);
        let tgt = traj(2, &[4; 30], &[5.0; 30], 30.0);
        let spans = position_timeline(&ego, &tgt).unwrap();
        assert_eq!(
            spans,
            vec![PositionSpan {
                position: RightAdjacent,
                frames: FrameInterval::new(0, 29).unwrap()
            }]
        );
    }

    #[test]
    fn cut_in_timeline() {
        let ego_x: Vec<f64> = (0..100).map(|f| f as f64).collect();
        let tgt_x: Vec<f64> = (0..100).map(|f| f as f64 + 20.0).collect();
        let tgt_lanes: Vec<u32> = (0..100).map(|f| if f < 50 { 2 } else { 3 }).collect();
        let ego = traj(1, &[3; 100], &ego_x, 30.0);
        let tgt = traj(2, &tgt_lanes, &tgt_x, 30.0);
        let spans = position_timeline(&ego, &tgt).unwrap();
        // frame-wise oracle
        let expected: Vec<RelativePosition> = (0..100)
            .map(|f| position_rule(tgt_lanes[f] as i64 - 3, tgt_x[f] - ego_x[f], 30.0))
            .collect();
        let mut expanded = Vec::new();
        for s in &spans {
            for _ in s.frames.frames() {
                expanded.push(s.position);
            }
        }
        assert_eq!(expanded, expected);
        assert_eq!(
            spans.iter().map(|s| (s.position, s.frames.start, s.frames.end)).collect::<Vec<_>>(),
            vec![(LeftAdjacent, 0, 49), (Front, 50, 99)]
        );
    }

    #[test]
    fn swapping_roles_flips_front_behind() {
        let a = traj(1, &[3; 10], &[0.0; 10], 30.0);
        let b = traj(2, &[3; 10], &[30.0; 10], 30.0);
        assert_eq!(position_timeline(&a, &b).unwrap()[0].position, Front);
        assert_eq!(position_timeline(&b, &a).unwrap()[0].position, Behind);
    }

    #[test]
    fn disjoint_vehicles() {
        let a = traj(1, &[3; 10], &[0.0; 10], 30.0);
        let samples: Vec<TrackSample> = a
            .samples()
            .iter()
            .map(|s| TrackSample { frame: s.frame + 100, ..*s })
            .collect();
        let b = Trajectory::new(2, samples).unwrap();
        assert_eq!(position_timeline(&a, &b), Err(PositionError::EmptyWindow(1, 2)));
    }

    proptest! {
        #[test]
        fn duality(lane_ego in 3u32..10, dl in -4i64..=4, dx in -50.0f64..50.0, v in prop_oneof![-40.0f64..-0.1, 0.1f64..40.0]) {
            let t1 = (lane_ego as i64 + dl) as u32;
            let t2 = (lane_ego as i64 - dl) as u32;
            prop_assert_eq!(
                classify_position(lane_ego, t1, 0.0, dx, v),
                classify_position(lane_ego, t2, 0.0, -dx, -v)
            );
            prop_assert_eq!(classify_position(lane_ego, t1, 0.0, dx, v).unwrap(), position_rule(dl, dx, v));
        }
    }
}
