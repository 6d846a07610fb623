//! Comparing extracted scenarios with labelled ground truth.
//!
//! Accuracy here is `tp / (tp + fp + fn)`: there is no notion of a true
//! negative when mining scenarios, so it is not the textbook formula.

use crate::interval::FrameInterval;
use crate::search::ScenarioMatch;
use crate::store::VehicleId;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("label row {row}: frameStart {start} is after frameEnd {end}")]
    EmptyInterval { row: usize, start: u32, end: u32 },
    #[error("label file: {0}")]
    Csv(#[from] csv::Error),
    #[error("iou threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub category: String,
    pub ego_id: VehicleId,
    pub target_id: VehicleId,
    pub frames: FrameInterval,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    category: String,
    #[serde(rename = "egoId")]
    ego_id: VehicleId,
    #[serde(rename = "targetId")]
    target_id: VehicleId,
    #[serde(rename = "frameStart")]
    frame_start: u32,
    #[serde(rename = "frameEnd")]
    frame_end: u32,
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<GroundTruthLabel>, LabelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<LabelRow>().enumerate() {
        let r = row?;
        let frames = FrameInterval::new(r.frame_start, r.frame_end).ok_or(
            LabelError::EmptyInterval {
                row: i + 1,
                start: r.frame_start,
                end: r.frame_end,
            },
        )?;
        out.push(GroundTruthLabel {
            category: r.category,
            ego_id: r.ego_id,
            target_id: r.target_id,
            frames,
        });
    }
    Ok(out)
}

pub fn write_labels<W: Write>(writer: W, labels: &[GroundTruthLabel]) -> Result<(), LabelError> {
    let mut w = csv::Writer::from_writer(writer);
    for l in labels {
        w.serialize(LabelRow {
            category: l.category.clone(),
            ego_id: l.ego_id,
            target_id: l.target_id,
            frame_start: l.frames.start,
            frame_end: l.frames.end,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One predicted (ego, target) episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prediction {
    /// When set, only labels of the same category can match.
    pub category: Option<String>,
    pub ego_id: VehicleId,
    pub target_id: VehicleId,
    pub frames: FrameInterval,
}

impl Prediction {
    /// One prediction per target of the match, over its analysis window.
    pub fn from_match(m: &ScenarioMatch, category: Option<&str>) -> Vec<Prediction> {
        m.targets
            .iter()
            .map(|t| Prediction {
                category: category.map(str::to_string),
                ego_id: m.ego_id,
                target_id: t.target_id,
                frames: t.analysis_window,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// one-to-one episodes by temporal IoU
    Instance,
    /// every (ego, target, frame) tuple counted separately
    Frame,
}

fn compatible(p: &Prediction, t: &GroundTruthLabel) -> bool {
    p.ego_id == t.ego_id
        && p.target_id == t.target_id
        && p.category.as_ref().is_none_or(|c| *c == t.category)
}

pub fn match_predictions(
    predicted: &[Prediction],
    truth: &[GroundTruthLabel],
    mode: MatchMode,
    iou_threshold: f64,
) -> Result<ConfusionCounts, LabelError> {
    match mode {
        MatchMode::Instance => {
            if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
                return Err(LabelError::Threshold(iou_threshold));
            }
            Ok(match_instances(predicted, truth, iou_threshold))
        }
        MatchMode::Frame => Ok(match_frames(predicted, truth)),
    }
}

fn match_instances(predicted: &[Prediction], truth: &[GroundTruthLabel], thr: f64) -> ConfusionCounts {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            if !compatible(p, t) {
                continue;
            }
            let iou = p.frames.iou(&t.frames);
            if iou + 1e-12 >= thr {
                pairs.push((iou, i, j));
            }
        }
    }
    // highest IoU first; ties by content so input order does not matter
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| predicted[a.1].cmp(&predicted[b.1]))
            .then_with(|| label_key(&truth[a.2]).cmp(&label_key(&truth[b.2])))
    });
    let mut used_p = vec![false; predicted.len()];
    let mut used_t = vec![false; truth.len()];
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            tp += 1;
        }
    }
    ConfusionCounts::new(
        tp,
        predicted.len() as u64 - tp,
        truth.len() as u64 - tp,
    )
}

fn label_key(l: &GroundTruthLabel) -> (&str, VehicleId, VehicleId, FrameInterval) {
    (&l.category, l.ego_id, l.target_id, l.frames)
}

fn match_frames(predicted: &[Prediction], truth: &[GroundTruthLabel]) -> ConfusionCounts {
    type Key = (Option<String>, VehicleId, VehicleId, u32);
    let with_cat = predicted.iter().any(|p| p.category.is_some());
    let pred: HashSet<Key> = predicted
        .iter()
        .flat_map(|p| {
            let c = if with_cat { p.category.clone() } else { None };
            p.frames.frames().map(move |f| (c.clone(), p.ego_id, p.target_id, f))
        })
        .collect();
    let gt: HashSet<Key> = truth
        .iter()
        .flat_map(|t| {
            let c = with_cat.then(|| t.category.clone());
            t.frames.frames().map(move |f| (c.clone(), t.ego_id, t.target_id, f))
        })
        .collect();
    let tp = pred.intersection(&gt).count() as u64;
    ConfusionCounts::new(tp, pred.len() as u64 - tp, gt.len() as u64 - tp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn classification_metrics(c: ConfusionCounts) -> ClassificationMetrics {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    ClassificationMetrics {
        accuracy: ratio(c.tp, c.tp + c.fp + c.fn_),
        precision,
        recall,
        f1,
    }
}
