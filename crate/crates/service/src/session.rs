//! One proctoring session: calibration, then live monitoring, then review.
//!
//! Everything here is synchronous; the HTTP layer serialises access to a
//! session behind a mutex.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hashproctor_core::anomaly::{AnomalyEvent, AnomalyReport, DetectorConfig, DetectorState, Verdict};
use hashproctor_core::calibration::{Arrow, CalibrationConfig, CalibrationSession, Stimulus};
use hashproctor_core::detections::{resolve_hybrid, HybridResolver, RawDetection};
use hashproctor_core::facehide::{hide, HideConfig};
use hashproctor_core::imagehash::HashConfig;
use hashproctor_core::pipeline::{clip_range, frame_file_name, HIDDEN_DIR, REPORT_FILE};
use hashproctor_core::{BoundingBox, Error, Frame, Result};
use serde::{Deserialize, Serialize};

pub const CALIBRATION_DIR: &str = "calibration";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Calibrating,
    Monitoring,
    Finished,
}

/// Body of `POST /sessions`. Every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSettings {
    pub hash: HashConfig,
    pub hide: HideConfig,
    #[serde(alias = "smoothing")]
    pub detector: DetectorConfig,
    /// Screen geometry and stimulus timing. Its `hash` is replaced by the
    /// session hash.
    pub calibration: CalibrationConfig,
}

impl SessionSettings {
    pub fn validate(&self) -> Result<()> {
        self.hash.validate()?;
        self.hide.validate()?;
        self.detector.validate()?;
        CalibrationConfig {
            hash: self.hash,
            ..self.calibration
        }
        .validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub phase: Phase,
    pub hash: HashConfig,
    pub hide: HideConfig,
    pub detector: DetectorConfig,
    pub threshold: Option<u32>,
    pub accepted_captures: usize,
    pub required_captures: usize,
    pub frames: u64,
    pub events: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationAck {
    pub accepted: bool,
    pub accepted_captures: usize,
    pub required_captures: usize,
    /// Set once enough captures are in; the session can then start.
    pub threshold: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaggedFlag {
    pub index: u64,
    pub smoothed: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameAck {
    pub index: u64,
    /// Verdict for `index - lag`, once the smoother has enough context.
    pub lagged: Option<LaggedFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesView {
    pub threshold: u32,
    pub lag: usize,
    pub raw: Vec<u32>,
    pub smoothed: Vec<f64>,
    pub flags: Vec<bool>,
    pub anchors: Vec<u64>,
}

/// Stand-in for a live face detector: a fixed box in the middle of the
/// frame, no eyes, no landmarks.
pub fn stub_detection(frame: u64, width: u32, height: u32) -> RawDetection {
    let (w, h) = ((width * 2 / 5).max(1), (height * 3 / 5).max(1));
    RawDetection {
        frame,
        face: BoundingBox::new(((width - w) / 2) as i32, ((height - h) / 2) as i32, w, h).ok(),
        eyes: Vec::new(),
        landmarks: None,
    }
}

pub struct Session {
    id: String,
    phase: Phase,
    settings: SessionSettings,
    dir: PathBuf,
    calibration: CalibrationSession,
    detector: Option<DetectorState>,
    resolver: HybridResolver,
    frame_size: Option<(u32, u32)>,
    /// Verdicts set while monitoring, by event id.
    verdicts: BTreeMap<usize, Verdict>,
    report: Option<AnomalyReport>,
}

impl Session {
    /// New session storing its files under `dir`.
    pub fn new(id: String, settings: SessionSettings, dir: PathBuf) -> Result<Self> {
        settings.validate()?;
        let calibration = CalibrationSession::new(
            id.clone(),
            CalibrationConfig {
                hash: settings.hash,
                ..settings.calibration
            },
        )?;
        std::fs::create_dir_all(dir.join(HIDDEN_DIR)).map_err(|e| io(&dir, e))?;
        Ok(Session {
            id,
            phase: Phase::Calibrating,
            settings,
            dir,
            calibration,
            detector: None,
            resolver: HybridResolver::new(),
            frame_size: None,
            verdicts: BTreeMap::new(),
            report: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hidden_dir(&self) -> PathBuf {
        self.dir.join(HIDDEN_DIR)
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id.clone(),
            phase: self.phase,
            hash: self.settings.hash,
            hide: self.settings.hide,
            detector: self.settings.detector,
            threshold: self.calibration.threshold(),
            accepted_captures: self.calibration.accepted_count(),
            required_captures: self.calibration.config().required_captures,
            frames: self.frames(),
            events: self.events().len(),
        }
    }

    fn frames(&self) -> u64 {
        match (&self.report, &self.detector) {
            (Some(r), _) => r.frame_count() as u64,
            (None, Some(d)) => d.next_index(),
            (None, None) => 0,
        }
    }

    fn require(&self, phase: Phase) -> Result<()> {
        if self.phase != phase {
            return Err(Error::State(format!("session {} is {:?}, not {:?}", self.id, self.phase, phase)));
        }
        Ok(())
    }

    pub fn next_stimulus(&mut self) -> Result<Stimulus> {
        self.require(Phase::Calibrating)?;
        self.calibration.next_stimulus()
    }

    /// Answer the current stimulus. The photo is hidden like a session
    /// frame before it is kept, so the threshold is measured on the same
    /// kind of image as the live distances.
    pub fn respond(&mut self, key: Arrow, photo: Frame, detection: Option<RawDetection>) -> Result<CalibrationAck> {
        self.require(Phase::Calibrating)?;
        let stimulus = *self
            .calibration
            .current()
            .ok_or_else(|| Error::State("no stimulus has been issued".into()))?;
        let k = self.calibration.captures().len() as u64;
        let raw = detection.unwrap_or_else(|| stub_detection(k, photo.width(), photo.height()));
        let record = resolve_hybrid(Some(&raw), None, None, k);
        let hidden = hide(&photo, &record, &self.settings.hide)?;
        let accepted = self.calibration.record_response(&stimulus, key, Some(hidden))?;
        if self.calibration.is_complete() {
            self.calibration.finalize()?;
            self.calibration.save(&self.dir.join(CALIBRATION_DIR))?;
        }
        Ok(CalibrationAck {
            accepted,
            accepted_captures: self.calibration.accepted_count(),
            required_captures: self.calibration.config().required_captures,
            threshold: self.calibration.threshold(),
        })
    }

    pub fn start(&mut self) -> Result<()> {
        self.require(Phase::Calibrating)?;
        let threshold = self.calibration.threshold().ok_or(Error::MissingThreshold)?;
        self.detector = Some(DetectorState::new(threshold, self.settings.hash, self.settings.detector)?);
        self.phase = Phase::Monitoring;
        Ok(())
    }

    /// Hide, store, hash and detect one frame. Frames must arrive in index
    /// order starting at 0.
    pub fn ingest(&mut self, index: u64, frame: Frame, detection: Option<RawDetection>) -> Result<FrameAck> {
        self.require(Phase::Monitoring)?;
        let det = self.detector.as_mut().expect("monitoring without a detector");
        if index != det.next_index() {
            return Err(Error::Misaligned(index));
        }
        let size = (frame.width(), frame.height());
        if *self.frame_size.get_or_insert(size) != size {
            return Err(Error::InvalidInput(format!(
                "frame {index} is {}x{}, session frames are {}x{}",
                size.0,
                size.1,
                self.frame_size.unwrap().0,
                self.frame_size.unwrap().1
            )));
        }
        if let Some(d) = &detection {
            if d.frame != index {
                return Err(Error::Misaligned(d.frame));
            }
        }
        let raw = detection.unwrap_or_else(|| stub_detection(index, size.0, size.1));
        // Resolve against a copy so a failed frame leaves no trace.
        let mut resolver = self.resolver.clone();
        let record = resolver.resolve(Some(&raw), None, index);
        let hidden = hide(&frame, &record, &self.settings.hide)?;
        let hash = self.settings.hash.hash_frame(&hidden)?;
        hidden.save(&self.dir.join(HIDDEN_DIR).join(frame_file_name(index as usize)))?;
        let verdict = det.step(&hash, index)?;
        self.resolver = resolver;
        Ok(FrameAck {
            index,
            lagged: verdict.map(|v| LaggedFlag {
                index: v.index,
                smoothed: v.smoothed,
                flagged: v.flagged,
            }),
        })
    }

    pub fn series(&self) -> Result<SeriesView> {
        if let Some(r) = &self.report {
            return Ok(SeriesView {
                threshold: r.threshold,
                lag: 0,
                raw: r.series.raw.clone(),
                smoothed: r.series.smoothed.clone(),
                flags: r.frame_flags(),
                anchors: r.anchors.clone(),
            });
        }
        Ok(match &self.detector {
            Some(d) => SeriesView {
                threshold: d.threshold(),
                lag: d.lag(),
                raw: d.raw().to_vec(),
                smoothed: d.smoothed().to_vec(),
                flags: d.flags().to_vec(),
                anchors: d.anchors().to_vec(),
            },
            None => SeriesView {
                threshold: self.calibration.threshold().unwrap_or(0),
                lag: self.settings.detector.smoothing.window / 2,
                raw: Vec::new(),
                smoothed: Vec::new(),
                flags: Vec::new(),
                anchors: Vec::new(),
            },
        })
    }

    /// Events so far with their verdicts. While monitoring, events that are
    /// still open may grow or merge.
    pub fn events(&self) -> Vec<AnomalyEvent> {
        if let Some(r) = &self.report {
            return r.events.clone();
        }
        let mut events = self.detector.as_ref().map(|d| d.events()).unwrap_or_default();
        for (&id, &v) in &self.verdicts {
            if let Some(e) = events.get_mut(id) {
                e.verdict = v;
            }
        }
        events
    }

    pub fn set_verdict(&mut self, event_id: usize, verdict: Verdict) -> Result<AnomalyEvent> {
        if let Some(r) = &mut self.report {
            r.set_verdict(event_id, verdict)?;
            r.write(&self.dir.join(REPORT_FILE))?;
            return Ok(r.events[event_id].clone());
        }
        let events = self.events();
        if event_id >= events.len() {
            return Err(unknown_event(event_id));
        }
        self.verdicts.insert(event_id, verdict);
        Ok(AnomalyEvent { verdict, ..events[event_id].clone() })
    }

    /// Flush the smoother, merge final events and write the report.
    pub fn finish(&mut self) -> Result<&AnomalyReport> {
        self.require(Phase::Monitoring)?;
        let det = self.detector.take().expect("monitoring without a detector");
        let mut report = det.finalize(&self.id);
        for (&id, &v) in &self.verdicts {
            // Ids beyond the final event list were merged away.
            let _ = report.set_verdict(id, v);
        }
        report.write(&self.dir.join(REPORT_FILE))?;
        self.report = Some(report);
        self.phase = Phase::Finished;
        Ok(self.report.as_ref().unwrap())
    }

    pub fn report(&self) -> Result<&AnomalyReport> {
        self.report
            .as_ref()
            .ok_or_else(|| Error::State(format!("session {} is not finished", self.id)))
    }

    /// Hidden frame files for an event, padded by `pad` frames each side.
    pub fn clip(&self, event_id: usize, pad: u64) -> Result<Vec<PathBuf>> {
        let events = self.events();
        let event = events.get(event_id).ok_or_else(|| unknown_event(event_id))?;
        let range = match &self.report {
            Some(r) => clip_range(r, event, pad),
            None => {
                let last = self.frames().saturating_sub(1);
                event.start.saturating_sub(pad)..=(event.end + pad).min(last)
            }
        };
        Ok(range
            .map(|i| self.dir.join(HIDDEN_DIR).join(frame_file_name(i as usize)))
            .collect())
    }
}

fn unknown_event(id: usize) -> Error {
    Error::InvalidInput(format!("unknown event {id}"))
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}
