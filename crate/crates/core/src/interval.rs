use serde::{Deserialize, Serialize};
use std::fmt;

/// Inclusive range of frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameInterval {
    pub start: u32,
    pub end: u32,
}

impl FrameInterval {
    /// Returns `None` when `start > end`.
    pub fn new(start: u32, end: u32) -> Option<Self> {
        (start <= end).then_some(Self { start, end })
    }

    pub fn single(frame: u32) -> Self {
        Self {
            start: frame,
            end: frame,
        }
    }

    /// Number of frames covered.
    pub fn len(&self) -> u32 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: u32) -> bool {
        self.start <= frame && frame <= self.end
    }

    pub fn contains_interval(&self, other: &FrameInterval) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn intersect(&self, other: &FrameInterval) -> Option<FrameInterval> {
        FrameInterval::new(self.start.max(other.start), self.end.min(other.end))
    }

    /// Smallest interval covering both.
    pub fn hull(&self, other: &FrameInterval) -> FrameInterval {
        FrameInterval {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }

    /// Temporal intersection-over-union counted in frames.
    pub fn iou(&self, other: &FrameInterval) -> f64 {
        let inter = self.intersect(other).map_or(0, |i| i.len()) as f64;
        let union = self.len() as f64 + other.len() as f64 - inter;
        inter / union
    }

    pub fn frames(&self) -> impl Iterator<Item = u32> {
        self.start..=self.end
    }

    /// Duration in seconds at the given sampling rate.
    pub fn duration(&self, frame_rate: f64) -> f64 {
        self.len() as f64 / frame_rate
    }
}

impl fmt::Display for FrameInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}..{}]", self.start, self.end)
    }
}
