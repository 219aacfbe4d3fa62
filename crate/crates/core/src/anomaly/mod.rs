//! Anchor-referenced hash-distance anomaly detection.

mod detector;
mod events;
mod smoothing;
mod valleys;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagehash::HashConfig;

pub use detector::{replay, DetectorState, FrameVerdict};
pub use events::{merge_events, AnomalyEvent, Verdict};
pub use smoothing::{fit_weights, sg_smooth, Smoother};
pub use valleys::{find_valleys, prominence, ValleyTracker};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    pub window: usize,
    pub polyorder: usize,
    pub valley_min_separation: usize,
    /// Fraction of the observed signal range.
    pub valley_prominence: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            window: 31,
            polyorder: 3,
            valley_min_separation: 15,
            valley_prominence: 0.10,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!("window must be odd and at least 3, got {}", self.window)));
        }
        if self.polyorder >= self.window {
            return Err(Error::Config(format!(
                "polyorder {} must be below window {}",
                self.polyorder, self.window
            )));
        }
        if !(0.0..=1.0).contains(&self.valley_prominence) {
            return Err(Error::Config(format!(
                "valley_prominence must be in [0, 1], got {}",
                self.valley_prominence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    #[serde(flatten)]
    pub smoothing: SmoothingConfig,
    /// Move the anchor to the first valley after each excursion. Off gives
    /// the fixed-anchor behaviour.
    pub reselect_anchor: bool,
    pub event_gap: usize,
    pub event_min_len: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            smoothing: SmoothingConfig::default(),
            reselect_anchor: true,
            event_gap: 10,
            event_min_len: 8,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        if self.event_min_len == 0 {
            return Err(Error::Config("event_min_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub raw: Vec<u32>,
    pub smoothed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub session_id: String,
    pub threshold: u32,
    pub hash: HashConfig,
    pub anchors: Vec<u64>,
    pub series: Series,
    pub events: Vec<AnomalyEvent>,
}

impl AnomalyReport {
    pub fn frame_count(&self) -> usize {
        self.series.raw.len()
    }

    /// Per-frame flag: the frame lies inside some event.
    pub fn frame_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.frame_count()];
        for ev in &self.events {
            for f in ev.start..=ev.end.min(flags.len().saturating_sub(1) as u64) {
                flags[f as usize] = true;
            }
        }
        flags
    }

    pub fn event(&self, id: usize) -> Result<&AnomalyEvent> {
        self.events
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no event {id} (report has {})", self.events.len())))
    }

    pub fn set_verdict(&mut self, id: usize, verdict: Verdict) -> Result<()> {
        let n = self.events.len();
        let ev = self
            .events
            .get_mut(id)
            .ok_or_else(|| Error::invalid(format!("no event {id} (report has {n})")))?;
        ev.verdict = verdict;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
