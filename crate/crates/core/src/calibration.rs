//! Session calibration: the crosshair/arrow stimulus protocol and the
//! session threshold, the largest pairwise hash distance among the photos
//! captured while the student looked at the stimuli.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::frame::Frame;
use crate::imagehash::{hamming, HashConfig, PerceptualHash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrow {
    Up,
    Down,
    Left,
    Right,
}

impl Arrow {
    pub const ALL: [Arrow; 4] = [Arrow::Up, Arrow::Down, Arrow::Left, Arrow::Right];
}

impl std::str::FromStr for Arrow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "up" | "arrowup" => Ok(Arrow::Up),
            "down" | "arrowdown" => Ok(Arrow::Down),
            "left" | "arrowleft" => Ok(Arrow::Left),
            "right" | "arrowright" => Ok(Arrow::Right),
            other => Err(Error::invalid(format!("unknown arrow key {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    /// Crosshair centre in screen pixels.
    pub position: (u32, u32),
    pub arrow: Arrow,
    /// Seconds for the circle to shrink onto the crosshair.
    pub shrink_duration: f64,
    /// Seconds the arrow stays visible.
    pub response_window: f64,
    /// When to take the photo, in seconds after the arrow appears.
    pub capture_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub screen_width: u32,
    pub screen_height: u32,
    /// Crosshair radius; positions keep this distance from the screen edge.
    pub margin: u32,
    /// Accepted captures needed to finish. The screen is split 3x3 and every
    /// cell is visited once per nine positions.
    pub required_captures: usize,
    pub shrink_duration: f64,
    pub response_window: f64,
    pub capture_offset: f64,
    pub hash: HashConfig,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            screen_width: 1280,
            screen_height: 720,
            margin: 40,
            required_captures: 9,
            shrink_duration: 2.0,
            response_window: 0.5,
            capture_offset: 0.25,
            hash: HashConfig::default(),
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.hash.validate()?;
        if self.screen_width <= 2 * self.margin + 3 || self.screen_height <= 2 * self.margin + 3 {
            return Err(Error::Config(format!(
                "screen {}x{} too small for margin {}",
                self.screen_width, self.screen_height, self.margin
            )));
        }
        if self.required_captures < 2 {
            return Err(Error::Config("required_captures must be at least 2".into()));
        }
        if !(self.response_window > 0.0) || !(self.shrink_duration >= 0.0) {
            return Err(Error::Config("stimulus durations must be positive".into()));
        }
        if !(0.0..=self.response_window).contains(&self.capture_offset) {
            return Err(Error::Config("capture_offset must lie inside the response window".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Capture {
    pub photo: Option<Frame>,
    pub position: (u32, u32),
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct CalibrationSession {
    pub session_id: String,
    config: CalibrationConfig,
    rng: ChaCha8Rng,
    cell_order: Vec<usize>,
    positions_issued: usize,
    stimuli: Vec<Stimulus>,
    captures: Vec<Capture>,
    current: Option<Stimulus>,
    answered: bool,
    last_correct: bool,
    threshold: Option<u32>,
}

impl CalibrationSession {
    pub fn new(session_id: impl Into<String>, config: CalibrationConfig) -> Result<Self> {
        config.validate()?;
        Ok(CalibrationSession {
            session_id: session_id.into(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            cell_order: Vec::new(),
            positions_issued: 0,
            stimuli: Vec::new(),
            captures: Vec::new(),
            current: None,
            answered: true,
            last_correct: true,
            threshold: None,
        })
    }

    pub fn config(&self) -> &CalibrationConfig {
        &self.config
    }

    pub fn hash_config(&self) -> HashConfig {
        self.config.hash
    }

    pub fn stimuli(&self) -> &[Stimulus] {
        &self.stimuli
    }

    pub fn captures(&self) -> &[Capture] {
        &self.captures
    }

    pub fn current(&self) -> Option<&Stimulus> {
        self.current.as_ref()
    }

    pub fn accepted_count(&self) -> usize {
        self.captures.iter().filter(|c| c.accepted).count()
    }

    pub fn is_complete(&self) -> bool {
        self.accepted_count() >= self.config.required_captures
    }

    pub fn threshold(&self) -> Option<u32> {
        self.threshold
    }

    pub fn is_finalized(&self) -> bool {
        self.threshold.is_some()
    }

    fn fresh_position(&mut self) -> (u32, u32) {
        let k = self.positions_issued % 9;
        if k == 0 {
            self.cell_order = (0..9).collect();
            self.cell_order.shuffle(&mut self.rng);
        }
        self.positions_issued += 1;
        let cell = self.cell_order[k];
        let c = &self.config;
        let axis = |len: u32, idx: usize, rng: &mut ChaCha8Rng| {
            let lo = f64::from(c.margin);
            let span = f64::from(len - 2 * c.margin - 1);
            let a = lo + span * idx as f64 / 3.0;
            let b = lo + span * (idx + 1) as f64 / 3.0;
            rng.gen_range(a..b).floor() as u32
        };
        let x = axis(c.screen_width, cell % 3, &mut self.rng);
        let y = axis(c.screen_height, cell / 3, &mut self.rng);
        (x, y)
    }

    /// Issue the next stimulus. After a correct answer (or at the start) the
    /// crosshair moves to a new random position; after a wrong or missing
    /// answer it stays where it was with a new random arrow.
    pub fn next_stimulus(&mut self) -> Result<Stimulus> {
        if self.is_finalized() {
            return Err(Error::State(format!("calibration {} is already finalized", self.session_id)));
        }
        if self.is_complete() {
            return Err(Error::State(format!(
                "calibration {} already has {} accepted captures",
                self.session_id,
                self.accepted_count()
            )));
        }
        let unanswered = !self.answered;
        let position = match self.current {
            Some(cur) if unanswered || !self.last_correct => cur.position,
            _ => self.fresh_position(),
        };
        let arrow = Arrow::ALL[self.rng.gen_range(0..4)];
        let stimulus = Stimulus {
            position,
            arrow,
            shrink_duration: self.config.shrink_duration,
            response_window: self.config.response_window,
            capture_offset: self.config.capture_offset,
        };
        self.stimuli.push(stimulus);
        self.current = Some(stimulus);
        self.answered = false;
        Ok(stimulus)
    }

    /// Record the key pressed for `stimulus`. Returns whether the capture was
    /// accepted. An accepted answer needs the photo taken during the window.
    pub fn record_response(&mut self, stimulus: &Stimulus, pressed: Arrow, photo: Option<Frame>) -> Result<bool> {
        if self.is_finalized() {
            return Err(Error::State(format!("calibration {} is already finalized", self.session_id)));
        }
        match self.current {
            Some(cur) if !self.answered && cur == *stimulus => {}
            _ => return Err(Error::State("response does not match the current stimulus".into())),
        }
        let accepted = pressed == stimulus.arrow;
        if accepted && photo.is_none() {
            return Err(Error::Capture("an accepted response needs a photo".into()));
        }
        self.captures.push(Capture {
            photo: if accepted { photo } else { None },
            position: stimulus.position,
            accepted,
        });
        self.answered = true;
        self.last_correct = accepted;
        Ok(accepted)
    }

    pub fn accepted_photos(&self) -> Vec<&Frame> {
        self.captures
            .iter()
            .filter(|c| c.accepted)
            .filter_map(|c| c.photo.as_ref())
            .collect()
    }

    pub fn compute_threshold(&self) -> Result<u32> {
        let photos: Vec<Frame> = self.accepted_photos().into_iter().cloned().collect();
        threshold_from_frames(&photos, self.config.hash, Execution::default())
    }

    /// Fix the threshold; no further stimuli or responses are accepted.
    pub fn finalize(&mut self) -> Result<u32> {
        if let Some(t) = self.threshold {
            return Ok(t);
        }
        let t = self.compute_threshold()?;
        self.threshold = Some(t);
        self.current = None;
        Ok(t)
    }

    /// Write accepted photos and the session file into `dir`.
    pub fn save(&self, dir: &Path) -> Result<SessionFile> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut captures = Vec::new();
        for (k, c) in self.captures.iter().filter(|c| c.accepted).enumerate() {
            let name = format!("capture_{k:03}.png");
            if let Some(photo) = &c.photo {
                photo.save(&dir.join(&name))?;
            }
            captures.push(CaptureEntry {
                position: c.position,
                photo: PathBuf::from(name),
            });
        }
        let file = SessionFile {
            session_id: self.session_id.clone(),
            hash: self.config.hash,
            captures,
            threshold: self.threshold,
        };
        file.write(&dir.join(SESSION_FILE_NAME))?;
        Ok(file)
    }
}

pub const SESSION_FILE_NAME: &str = "session.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureEntry {
    pub position: (u32, u32),
    /// Relative to the session file's directory.
    pub photo: PathBuf,
}

/// On-disk calibration result consumed by the anomaly pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub session_id: String,
    pub hash: HashConfig,
    pub captures: Vec<CaptureEntry>,
    pub threshold: Option<u32>,
}

impl SessionFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SessionFile = serde_json::from_str(&text)?;
        file.hash.validate()?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_photos(&self, base: &Path) -> Result<Vec<Frame>> {
        self.captures.iter().map(|c| Frame::load(&base.join(&c.photo))).collect()
    }
}

/// Largest Hamming distance over all unordered pairs.
pub fn max_pairwise_distance(hashes: &[PerceptualHash]) -> Result<u32> {
    if hashes.len() < 2 {
        return Err(Error::InsufficientCalibration { accepted: hashes.len() });
    }
    let mut best = 0;
    for (i, a) in hashes.iter().enumerate() {
        for b in &hashes[i + 1..] {
            best = best.max(hamming(a, b)?);
        }
    }
    Ok(best)
}

/// Hash every photo with `cfg` and return the largest pairwise distance.
pub fn threshold_from_frames(photos: &[Frame], cfg: HashConfig, exec: Execution) -> Result<u32> {
    cfg.validate()?;
    if photos.len() < 2 {
        return Err(Error::InsufficientCalibration { accepted: photos.len() });
    }
    let hashes = exec::try_map(exec, photos, |p| cfg.hash_frame(p))?;
    max_pairwise_distance(&hashes)
}

/// PNG files of a directory in name order.
pub fn list_photos(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}
