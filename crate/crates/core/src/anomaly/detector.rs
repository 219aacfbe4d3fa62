use std::collections::VecDeque;

use super::events::{merge_events, AnomalyEvent};
use super::smoothing::Smoother;
use super::valleys::ValleyTracker;
use super::{AnomalyReport, DetectorConfig, Series};
use crate::error::{Error, Result};
use crate::imagehash::{hamming, HashConfig, PerceptualHash};

/// Output for one frame once its smoothed distance is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameVerdict {
    pub index: u64,
    pub smoothed: f64,
    pub flagged: bool,
}

/// Streaming anomaly detector for one session.
///
/// Each frame's hash is compared with the current anchor. The smoothed
/// value for frame `i` needs the raw distances up to `i + window / 2`, so
/// verdicts trail the input by half a window; [`DetectorState::finalize`]
/// flushes the tail with truncated windows. After an excursion above the
/// threshold, the first confirmed valley becomes the new anchor and every
/// later frame is compared against it.
#[derive(Debug, Clone)]
pub struct DetectorState {
    cfg: DetectorConfig,
    hash: HashConfig,
    threshold: u32,
    smoother: Smoother,
    valleys: ValleyTracker,
    anchor: Option<PerceptualHash>,
    anchor_index: u64,
    anchors: Vec<u64>,
    /// `(first frame, anchor index)` for every anchor change.
    anchor_spans: Vec<(u64, u64)>,
    /// Hashes the valley search may still reach back to.
    recent: VecDeque<(u64, PerceptualHash)>,
    raw: Vec<u32>,
    raw_f: Vec<f64>,
    smoothed: Vec<f64>,
    flags: Vec<bool>,
}

impl DetectorState {
    pub fn new(threshold: u32, hash: HashConfig, cfg: DetectorConfig) -> Result<Self> {
        hash.validate()?;
        cfg.validate()?;
        let smoother = Smoother::new(cfg.smoothing.window, cfg.smoothing.polyorder)?;
        Ok(DetectorState {
            valleys: ValleyTracker::new(&cfg.smoothing),
            cfg,
            hash,
            threshold,
            smoother,
            anchor: None,
            anchor_index: 0,
            anchors: Vec::new(),
            anchor_spans: Vec::new(),
            recent: VecDeque::new(),
            raw: Vec::new(),
            raw_f: Vec::new(),
            smoothed: Vec::new(),
            flags: Vec::new(),
        })
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn hash_config(&self) -> HashConfig {
        self.hash
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn anchor_index(&self) -> u64 {
        self.anchor_index
    }

    pub fn anchors(&self) -> &[u64] {
        &self.anchors
    }

    pub fn raw(&self) -> &[u32] {
        &self.raw
    }

    pub fn smoothed(&self) -> &[f64] {
        &self.smoothed
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn excursion_seen(&self) -> bool {
        self.valleys.excursion_seen()
    }

    /// Index the next call to [`step`](Self::step) must carry.
    pub fn next_index(&self) -> u64 {
        self.raw.len() as u64
    }

    /// Frames whose verdict is still pending.
    pub fn lag(&self) -> usize {
        self.smoother.half()
    }

    /// Feed the next frame's hash. Returns the verdict of the frame half a
    /// window back once it becomes available.
    pub fn step(&mut self, frame_hash: &PerceptualHash, frame_index: u64) -> Result<Option<FrameVerdict>> {
        if frame_hash.config() != self.hash {
            return Err(Error::IncompatibleHash {
                left: format!("{}/{}", self.hash.algo, self.hash.size),
                right: format!("{}/{}", frame_hash.algorithm(), frame_hash.size()),
            });
        }
        if frame_index != self.next_index() {
            return Err(Error::Misaligned(frame_index));
        }
        let anchor = self.anchor.get_or_insert_with(|| frame_hash.clone());
        if self.anchors.is_empty() {
            self.anchor_index = frame_index;
            self.anchors.push(frame_index);
            self.anchor_spans.push((frame_index, frame_index));
        }
        let d = hamming(anchor, frame_hash)?;
        self.raw.push(d);
        self.raw_f.push(f64::from(d));
        self.recent.push_back((frame_index, frame_hash.clone()));
        let keep = self.smoother.half() + self.cfg.smoothing.valley_min_separation + 2;
        while self.recent.len() > keep {
            self.recent.pop_front();
        }

        let half = self.smoother.half();
        if self.raw.len() > half {
            let e = self.raw.len() - 1 - half;
            Ok(Some(self.emit(e)))
        } else {
            Ok(None)
        }
    }

    fn emit(&mut self, e: usize) -> FrameVerdict {
        debug_assert_eq!(e, self.smoothed.len());
        let max = f64::from(self.hash.max_distance());
        let s = self.smoother.at(&self.raw_f, e).clamp(0.0, max);
        let flagged = s > f64::from(self.threshold);
        self.smoothed.push(s);
        self.flags.push(flagged);
        let valley = self.valleys.push(s, flagged);
        if let Some(v) = valley.filter(|_| self.cfg.reselect_anchor) {
            self.reset_anchor(v as u64);
        }
        FrameVerdict {
            index: e as u64,
            smoothed: s,
            flagged,
        }
    }

    fn reset_anchor(&mut self, v: u64) {
        let Some((_, h)) = self.recent.iter().find(|(i, _)| *i == v) else {
            log::error!("valley frame {v} fell out of the hash window; anchor kept");
            return;
        };
        self.anchor = Some(h.clone());
        self.anchor_index = v;
        self.anchors.push(v);
        self.anchor_spans.push((self.next_index(), v));
    }

    /// Anchor frame whose hash was compared with frame `frame`.
    pub fn anchor_for(&self, frame: u64) -> u64 {
        anchor_at(&self.anchor_spans, frame)
    }

    /// Flush the lagged tail and build the session report.
    pub fn finalize(mut self, session_id: &str) -> AnomalyReport {
        while self.smoothed.len() < self.raw.len() {
            let e = self.smoothed.len();
            self.emit(e);
        }
        let events = self.events();
        AnomalyReport {
            session_id: session_id.to_string(),
            threshold: self.threshold,
            hash: self.hash,
            anchors: self.anchors,
            series: Series {
                raw: self.raw,
                smoothed: self.smoothed,
            },
            events,
        }
    }

    /// Events over the frames with a verdict so far.
    pub fn events(&self) -> Vec<AnomalyEvent> {
        merge_events(
            &self.flags,
            &self.raw,
            &|f| self.anchor_for(f),
            self.cfg.event_gap,
            self.cfg.event_min_len,
        )
    }
}

fn anchor_at(spans: &[(u64, u64)], frame: u64) -> u64 {
    spans
        .iter()
        .take_while(|(from, _)| *from <= frame)
        .last()
        .map_or(0, |&(_, a)| a)
}

/// Offline pass over a finished raw distance series: smooth the whole
/// series, flag against the threshold, then replay the valley rule in
/// emission order. Returns `(smoothed, flags, anchors)`; for a series
/// produced by [`DetectorState`] it reproduces the detector's own output.
pub fn replay(raw: &[u32], threshold: u32, hash: HashConfig, cfg: &DetectorConfig) -> Result<(Vec<f64>, Vec<bool>, Vec<u64>)> {
    let series: Vec<f64> = raw.iter().map(|&d| f64::from(d)).collect();
    if series.is_empty() {
        return Ok((Vec::new(), Vec::new(), Vec::new()));
    }
    let max = f64::from(hash.max_distance());
    let smoothed: Vec<f64> = super::sg_smooth(&series, cfg.smoothing.window, cfg.smoothing.polyorder)?
        .into_iter()
        .map(|v| v.clamp(0.0, max))
        .collect();
    let flags: Vec<bool> = smoothed.iter().map(|&s| s > f64::from(threshold)).collect();
    let mut anchors = vec![0u64];
    if cfg.reselect_anchor {
        let mut tracker = ValleyTracker::new(&cfg.smoothing);
        for (s, f) in smoothed.iter().zip(&flags) {
            if let Some(v) = tracker.push(*s, *f) {
                anchors.push(v as u64);
            }
        }
    }
    Ok((smoothed, flags, anchors))
}
