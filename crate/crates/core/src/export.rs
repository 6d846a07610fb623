//! OpenSCENARIO and CarMaker text output for a match's scenario window.
//!
//! Positions are the dataset's `x` and `y` columns. With `flip_y` the image
//! frame (y down) becomes the world frame (y up). Heading is 0 for vehicles
//! driving towards +x and π otherwise; z, pitch and roll are zero.

use crate::search::ScenarioMatch;
use crate::store::{StoreError, TrackSample, Trajectory, TrajectoryStore, TravelDirection, VehicleId};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

/// Version written into the FileHeader.
pub const OPENSCENARIO_REV: (u32, u32) = (1, 0);
/// Fixed so identical inputs give identical bytes.
pub const HEADER_DATE: &str = "2024-01-01T00:00:00";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("scenario window is empty")]
    EmptyWindow,
    #[error("nothing to export: the match has no non-ego vehicle")]
    NoTargets,
    #[error("precision must be at least 2, got {0}")]
    InvalidPrecision(usize),
    #[error("vehicle {0} has no samples inside the scenario window")]
    Absent(VehicleId),
    #[error("vertex times of vehicle {0} are not strictly increasing at the printed precision")]
    NonIncreasingTime(VehicleId),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportConfig {
    pub flip_y: bool,
    pub include_ego_in_text: bool,
    /// decimal places
    pub precision: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            flip_y: true,
            include_ego_in_text: false,
            precision: 3,
        }
    }
}

impl ExportConfig {
    pub fn validate(&self) -> Result<(), ExportError> {
        if self.precision < 2 {
            return Err(ExportError::InvalidPrecision(self.precision));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportVertex {
    pub frame: u32,
    /// seconds since the window start
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub h: f64,
    pub p: f64,
    pub r: f64,
}

/// Fixed decimals, trailing zeros trimmed down to one fractional digit.
pub fn format_number(v: f64, precision: usize) -> String {
    let mut s = format!("{v:.precision$}");
    if s.contains('.') {
        let keep = s.trim_end_matches('0').len();
        s.truncate(keep);
        if s.ends_with('.') {
            s.push('0');
        }
    }
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s = s.trim_start_matches('-').to_string();
    }
    s
}

fn heading(traj: &Trajectory) -> f64 {
    match traj.direction() {
        Some(TravelDirection::Negative) => PI,
        _ => 0.0,
    }
}

fn vertex(s: &TrackSample, start: u32, frame_rate: f64, h: f64, cfg: &ExportConfig) -> ExportVertex {
    ExportVertex {
        frame: s.frame,
        time: (s.frame - start) as f64 / frame_rate,
        x: s.x,
        y: if cfg.flip_y { -s.y } else { s.y },
        z: 0.0,
        h,
        p: 0.0,
        r: 0.0,
    }
}

/// Vertices of one vehicle over the match's scenario window, in frame order.
pub fn vehicle_vertices(
    scenario: &ScenarioMatch,
    store: &TrajectoryStore,
    vehicle_id: VehicleId,
    cfg: &ExportConfig,
) -> Result<Vec<ExportVertex>, ExportError> {
    let w = scenario.scenario_window;
    let traj = store.get(vehicle_id)?;
    let Some(part) = traj.frame_range().intersect(&w) else {
        return Err(ExportError::Absent(vehicle_id));
    };
    let h = heading(traj);
    Ok(traj
        .samples_in(part)?
        .iter()
        .map(|s| vertex(s, w.start, store.frame_rate(), h, cfg))
        .collect())
}

/// Ego first, then targets in query order; repeated ids appear once.
fn actors(scenario: &ScenarioMatch) -> Vec<(VehicleId, bool)> {
    let mut out = vec![(scenario.ego_id, true)];
    for t in &scenario.targets {
        if !out.iter().any(|(id, _)| *id == t.target_id) {
            out.push((t.target_id, false));
        }
    }
    out
}

fn check_times(id: VehicleId, vs: &[ExportVertex], precision: usize) -> Result<(), ExportError> {
    let printed: Vec<f64> = vs
        .iter()
        .map(|v| format_number(v.time, precision).parse().expect("formatted number"))
        .collect();
    if printed.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExportError::NonIncreasingTime(id));
    }
    Ok(())
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn entity_name(id: VehicleId, is_ego: bool) -> String {
    if is_ego {
        format!("ego_{id}")
    } else {
        format!("target_{id}")
    }
}

struct Xml {
    out: String,
    depth: usize,
}

impl Xml {
    fn line(&mut self, text: &str) {
        for _ in 0..self.depth {
            self.out.push_str("    ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn open(&mut self, text: &str) {
        self.line(text);
        self.depth += 1;
    }

    fn close(&mut self, text: &str) {
        self.depth -= 1;
        self.line(text);
    }
}

fn world_position(v: &ExportVertex, p: usize) -> String {
    let f = |x| format_number(x, p);
    format!(
        "<WorldPosition x=\"{}\" y=\"{}\" z=\"{}\" h=\"{}\" p=\"{}\" r=\"{}\"/>",
        f(v.x),
        f(v.y),
        f(v.z),
        f(v.h),
        f(v.p),
        f(v.r)
    )
}

fn write_vehicle(xml: &mut Xml, traj: &Trajectory, name: &str) {
    let s = traj.samples()[0];
    xml.open(&format!("<ScenarioObject name=\"{}\">", escape_attr(name)));
    xml.open(&format!(
        "<Vehicle name=\"{}\" vehicleCategory=\"car\">",
        escape_attr(name)
    ));
    xml.line("<ParameterDeclarations/>");
    xml.open("<BoundingBox>");
    xml.line(&format!(
        "<Center x=\"{}\" y=\"0.0\" z=\"{}\"/>",
        format_number(s.width / 2.0, 3),
        format_number(s.height / 2.0, 3)
    ));
    // highD width runs along x, height across
    xml.line(&format!(
        "<Dimensions width=\"{}\" length=\"{}\" height=\"1.5\"/>",
        format_number(s.height, 3),
        format_number(s.width, 3)
    ));
    xml.close("</BoundingBox>");
    xml.line("<Performance maxSpeed=\"70.0\" maxAcceleration=\"10.0\" maxDeceleration=\"10.0\"/>");
    xml.open("<Axles>");
    xml.line("<FrontAxle maxSteering=\"0.5\" wheelDiameter=\"0.6\" trackWidth=\"1.6\" positionX=\"2.8\" positionZ=\"0.3\"/>");
    xml.line("<RearAxle maxSteering=\"0.0\" wheelDiameter=\"0.6\" trackWidth=\"1.6\" positionX=\"0.0\" positionZ=\"0.3\"/>");
    xml.close("</Axles>");
    xml.line("<Properties/>");
    xml.close("</Vehicle>");
    xml.close("</ScenarioObject>");
}

fn start_trigger(xml: &mut Xml, name: &str) {
    xml.open("<StartTrigger>");
    xml.open("<ConditionGroup>");
    xml.open(&format!(
        "<Condition name=\"{}\" delay=\"0\" conditionEdge=\"none\">",
        escape_attr(name)
    ));
    xml.open("<ByValueCondition>");
    xml.line("<SimulationTimeCondition value=\"0\" rule=\"greaterThan\"/>");
    xml.close("</ByValueCondition>");
    xml.close("</Condition>");
    xml.close("</ConditionGroup>");
    xml.close("</StartTrigger>");
}

/// One OpenSCENARIO document with a polyline trajectory per vehicle.
pub fn to_openscenario(
    scenario: &ScenarioMatch,
    store: &TrajectoryStore,
    cfg: &ExportConfig,
) -> Result<String, ExportError> {
    cfg.validate()?;
    let p = cfg.precision;
    let w = scenario.scenario_window;
    if w.is_empty() {
        return Err(ExportError::EmptyWindow);
    }
    let mut vehicles = Vec::new();
    for (id, is_ego) in actors(scenario) {
        let vs = vehicle_vertices(scenario, store, id, cfg)?;
        check_times(id, &vs, p)?;
        vehicles.push((id, is_ego, store.get(id)?, vs));
    }

    let mut xml = Xml {
        out: String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"),
        depth: 0,
    };
    xml.open("<OpenSCENARIO>");
    xml.line(&format!(
        "<FileHeader revMajor=\"{}\" revMinor=\"{}\" date=\"{HEADER_DATE}\" description=\"{}\" author=\"scenario-extract\"/>",
        OPENSCENARIO_REV.0,
        OPENSCENARIO_REV.1,
        escape_attr(&format!(
            "recording {} ego {} frames {}",
            scenario.recording_id, scenario.ego_id, w
        ))
    ));
    xml.line("<ParameterDeclarations/>");
    xml.line("<CatalogLocations/>");
    xml.line("<RoadNetwork/>");
    xml.open("<Entities>");
    for (id, is_ego, traj, _) in &vehicles {
        write_vehicle(&mut xml, traj, &entity_name(*id, *is_ego));
    }
    xml.close("</Entities>");

    xml.open("<Storyboard>");
    xml.open("<Init>");
    xml.open("<Actions>");
    for (id, is_ego, _, vs) in &vehicles {
        xml.open(&format!("<Private entityRef=\"{}\">", entity_name(*id, *is_ego)));
        xml.open("<PrivateAction>");
        xml.open("<TeleportAction>");
        xml.open("<Position>");
        xml.line(&world_position(&vs[0], p));
        xml.close("</Position>");
        xml.close("</TeleportAction>");
        xml.close("</PrivateAction>");
        xml.close("</Private>");
    }
    xml.close("</Actions>");
    xml.close("</Init>");
    xml.open("<Story name=\"replay\">");
    xml.open("<Act name=\"replay\">");
    for (id, is_ego, _, vs) in &vehicles {
        let name = entity_name(*id, *is_ego);
        xml.open(&format!(
            "<ManeuverGroup maximumExecutionCount=\"1\" name=\"{name}_group\">"
        ));
        xml.open("<Actors selectTriggeringEntities=\"false\">");
        xml.line(&format!("<EntityRef entityRef=\"{name}\"/>"));
        xml.close("</Actors>");
        xml.open(&format!("<Maneuver name=\"{name}_maneuver\">"));
        xml.open(&format!("<Event name=\"{name}_event\" priority=\"overwrite\">"));
        xml.open(&format!("<Action name=\"{name}_follow\">"));
        xml.open("<PrivateAction>");
        xml.open("<RoutingAction>");
        xml.open("<FollowTrajectoryAction>");
        xml.open(&format!("<Trajectory name=\"{name}_trajectory\" closed=\"false\">"));
        xml.line("<ParameterDeclarations/>");
        xml.open("<Shape>");
        xml.open("<Polyline>");
        for v in vs {
            xml.open(&format!("<Vertex time=\"{}\">", format_number(v.time, p)));
            xml.open("<Position>");
            xml.line(&world_position(v, p));
            xml.close("</Position>");
            xml.close("</Vertex>");
        }
        xml.close("</Polyline>");
        xml.close("</Shape>");
        xml.close("</Trajectory>");
        xml.open("<TimeReference>");
        xml.line("<Timing domainAbsoluteRelative=\"absolute\" scale=\"1.0\" offset=\"0.0\"/>");
        xml.close("</TimeReference>");
        xml.line("<TrajectoryFollowingMode followingMode=\"position\"/>");
        xml.close("</FollowTrajectoryAction>");
        xml.close("</RoutingAction>");
        xml.close("</PrivateAction>");
        xml.close("</Action>");
        start_trigger(&mut xml, &format!("{name}_start"));
        xml.close("</Event>");
        xml.close("</Maneuver>");
        xml.close("</ManeuverGroup>");
    }
    start_trigger(&mut xml, "act_start");
    xml.close("</Act>");
    xml.close("</Story>");
    xml.line("<StopTrigger/>");
    xml.close("</Storyboard>");
    xml.close("</OpenSCENARIO>");
    Ok(xml.out)
}

fn text_table(
    scenario: &ScenarioMatch,
    store: &TrajectoryStore,
    cfg: &ExportConfig,
    ids: &[VehicleId],
) -> Result<String, ExportError> {
    cfg.validate()?;
    let p = cfg.precision;
    let w = scenario.scenario_window;
    if w.is_empty() {
        return Err(ExportError::EmptyWindow);
    }
    let columns: Vec<Vec<ExportVertex>> = ids
        .iter()
        .map(|&id| vehicle_vertices(scenario, store, id, cfg))
        .collect::<Result<_, _>>()?;
    let mut out = String::from("#time");
    for id in ids {
        let _ = write!(out, ", x_{id}, y_{id}");
    }
    out.push('\n');
    let mut cursors = vec![0usize; ids.len()];
    for frame in w.frames() {
        out.push_str(&format_number(
            (frame - w.start) as f64 / store.frame_rate(),
            p,
        ));
        for (col, cur) in columns.iter().zip(cursors.iter_mut()) {
            match col.get(*cur) {
                Some(v) if v.frame == frame => {
                    let _ = write!(out, ", {}, {}", format_number(v.x, p), format_number(v.y, p));
                    *cur += 1;
                }
                _ => out.push_str(", , "),
            }
        }
        // cells of an absent last vehicle leave a trailing blank
        let trimmed = out.trim_end_matches(' ').len();
        out.truncate(trimmed);
        out.push('\n');
    }
    Ok(out)
}

/// CarMaker text: time column plus an (x, y) pair per non-ego vehicle.
pub fn to_carmaker_text(
    scenario: &ScenarioMatch,
    store: &TrajectoryStore,
    cfg: &ExportConfig,
) -> Result<String, ExportError> {
    let ids: Vec<VehicleId> = actors(scenario)
        .into_iter()
        .filter(|(_, is_ego)| cfg.include_ego_in_text || !is_ego)
        .map(|(id, _)| id)
        .collect();
    if !actors(scenario).iter().any(|(_, is_ego)| !is_ego) {
        return Err(ExportError::NoTargets);
    }
    text_table(scenario, store, cfg, &ids)
}

/// The ego's path as `#time, x_<id>, y_<id>` rows.
///
/// CarMaker places the ego on a road-network path, so this file has to be
/// turned into path nodes by hand.
pub fn emit_ego_path(
    scenario: &ScenarioMatch,
    store: &TrajectoryStore,
    cfg: &ExportConfig,
) -> Result<String, ExportError> {
    text_table(scenario, store, cfg, &[scenario.ego_id])
}
