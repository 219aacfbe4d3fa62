//! End-to-end run over an image-sequence directory: resolve detections,
//! hide faces, hash the hidden frames, detect anomalies, write the hidden
//! frames and the report.

mod scenario;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anomaly::{AnomalyEvent, AnomalyReport, DetectorConfig, DetectorState};
use crate::calibration::{list_photos, max_pairwise_distance, SessionFile, SESSION_FILE_NAME};
use crate::detections::{parse_detections, resolve_hybrid, resolve_stream, DetectionRecord, DetectionStream};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::facehide::{hide, HideConfig};
use crate::frame::Frame;
use crate::imagehash::{HashConfig, PerceptualHash};

pub use scenario::{
    frame_file_name, generate_scenario, AnomalySegment, Pose, PositionChange, ScenarioFiles, Shadow,
    SyntheticScenario, CALIBRATION_DETECTIONS, CALIBRATION_DIR, FRAMES_DIR,
};

pub const HIDDEN_DIR: &str = "hidden";
pub const REPORT_FILE: &str = "report.json";
pub const DEFAULT_CLIP_PAD: u64 = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub frames_dir: PathBuf,
    pub primary_detections: PathBuf,
    #[serde(default)]
    pub fallback_detections: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    /// A calibration session file, a directory holding one, or a directory
    /// of calibration photos.
    pub calibration: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_session_id")]
    pub session_id: String,
    #[serde(default)]
    pub hide: HideConfig,
    #[serde(default, alias = "smoothing")]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub hash: HashConfig,
    /// Frames hidden and hashed per parallel batch.
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

fn default_session_id() -> String {
    "session".into()
}

fn default_chunk() -> usize {
    64
}

impl PipelineConfig {
    /// Parse TOML; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.frames_dir);
        fix(&mut cfg.primary_detections);
        fix(&mut cfg.calibration);
        fix(&mut cfg.output_dir);
        cfg.fallback_detections.as_mut().map(fix);
        cfg.ground_truth.as_mut().map(fix);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.hide.validate()?;
        self.detector.validate()?;
        self.hash.validate()?;
        if self.chunk == 0 {
            return Err(Error::Config("chunk must be at least 1".into()));
        }
        let mut required = vec![&self.frames_dir, &self.primary_detections];
        required.extend(self.fallback_detections.as_ref());
        required.extend(self.ground_truth.as_ref());
        for p in required {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if !self.calibration.exists() {
            return Err(Error::MissingThreshold);
        }
        Ok(())
    }
}

/// The per-frame stage settings shared by file and in-memory runs.
#[derive(Debug, Clone, Copy)]
pub struct Stages {
    pub hide: HideConfig,
    pub hash: HashConfig,
    pub detector: DetectorConfig,
    pub threshold: u32,
    pub chunk: usize,
    pub exec: Execution,
}

/// Hide, hash and detect frames `0..n`. `load` fetches frame `i`; `sink`
/// receives each hidden frame. Both run inside parallel batches, while the
/// detector consumes hashes strictly in frame order, so the result does not
/// depend on `exec`.
pub fn run_stream<L, S>(
    n: usize,
    records: &[DetectionRecord],
    stages: &Stages,
    session_id: &str,
    load: L,
    sink: S,
) -> Result<AnomalyReport>
where
    L: Fn(usize) -> Result<Frame> + Sync,
    S: Fn(usize, &Frame) -> Result<()> + Sync,
{
    if records.len() != n {
        return Err(Error::invalid(format!("{} detection records for {n} frames", records.len())));
    }
    let mut det = DetectorState::new(stages.threshold, stages.hash, stages.detector)?;
    let chunk = stages.chunk.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let hashes = exec::try_map(stages.exec, &(start..end).collect::<Vec<_>>(), |&i| {
            let frame = load(i)?;
            let hidden = hide(&frame, &records[i], &stages.hide)?;
            sink(i, &hidden)?;
            stages.hash.hash_frame(&hidden)
        })?;
        for (i, h) in (start..end).zip(&hashes) {
            det.step(h, i as u64)?;
        }
        start = end;
    }
    Ok(det.finalize(session_id))
}

/// Hidden-frame threshold from calibration photos. Each photo is hidden
/// with its entry in `detections` (indexed by photo order) before hashing;
/// without detections the photos are hashed as they are.
pub fn threshold_from_photos(
    photos: &[Frame],
    detections: Option<&DetectionStream>,
    hide_cfg: &HideConfig,
    hash: HashConfig,
    exec: Execution,
) -> Result<u32> {
    if photos.len() < 2 {
        return Err(Error::InsufficientCalibration { accepted: photos.len() });
    }
    let indexed: Vec<(usize, &Frame)> = photos.iter().enumerate().collect();
    let hashes = exec::try_map(exec, &indexed, |&(k, photo)| match detections {
        Some(d) => {
            let rec = resolve_hybrid(d.get(k as u64), None, None, k as u64);
            hash.hash_frame(&hide(photo, &rec, hide_cfg)?)
        }
        None => hash.hash_frame(photo),
    })?;
    max_pairwise_distance(&hashes)
}

/// Resolve the session threshold from a calibration path (see
/// [`PipelineConfig::calibration`]). A session file with a stored threshold
/// wins; otherwise the photos are hidden and hashed.
pub fn calibration_threshold(path: &Path, hide_cfg: &HideConfig, hash: HashConfig, exec: Execution) -> Result<u32> {
    let session_path = if path.is_dir() { path.join(SESSION_FILE_NAME) } else { path.to_path_buf() };
    let dir = if path.is_dir() { path.to_path_buf() } else { path.parent().unwrap_or(Path::new(".")).to_path_buf() };
    let detections_path = dir.join(CALIBRATION_DETECTIONS);
    let detections = if detections_path.exists() {
        Some(parse_detections(&detections_path)?)
    } else {
        None
    };
    let photos: Vec<Frame> = if session_path.is_file() {
        let file = SessionFile::read(&session_path)?;
        if file.hash != hash {
            return Err(Error::Config(format!(
                "calibration used {}/{} but the run uses {}/{}",
                file.hash.algo, file.hash.size, hash.algo, hash.size
            )));
        }
        if let Some(t) = file.threshold {
            return Ok(t);
        }
        file.load_photos(&dir)?
    } else if path.is_dir() {
        list_photos(path)?.iter().map(|p| Frame::load(p)).collect::<Result<_>>()?
    } else {
        return Err(Error::MissingThreshold);
    };
    if photos.len() < 2 {
        return Err(Error::MissingThreshold);
    }
    if detections.is_none() {
        log::warn!("no {CALIBRATION_DETECTIONS} next to the calibration photos; hashing them unhidden");
    }
    threshold_from_photos(&photos, detections.as_ref(), hide_cfg, hash, exec)
}

/// `frame_%06d.png` files of a directory, checked to run 0, 1, 2, ...
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames = Vec::new();
    for (i, p) in list_photos(dir)?.into_iter().enumerate() {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let index = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".png"))
            .and_then(|s| s.parse::<u64>().ok());
        match index {
            Some(k) if k == i as u64 => frames.push(p),
            Some(_) => return Err(Error::Misaligned(i as u64)),
            None => log::debug!("skipping {}", p.display()),
        }
    }
    Ok(frames)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: AnomalyReport,
    pub report_path: PathBuf,
    pub hidden_dir: PathBuf,
}

pub fn run_pipeline(cfg: &PipelineConfig, exec: Execution) -> Result<PipelineOutput> {
    cfg.validate()?;
    let frames = list_frames(&cfg.frames_dir)?;
    let n = frames.len() as u64;
    let primary = parse_detections(&cfg.primary_detections)?;
    let fallback = cfg.fallback_detections.as_deref().map(parse_detections).transpose()?;
    for stream in std::iter::once(&primary).chain(fallback.as_ref()) {
        if let Some(bad) = stream.entries().map(|e| e.frame).find(|&f| f >= n) {
            return Err(Error::Misaligned(bad));
        }
    }
    let threshold = calibration_threshold(&cfg.calibration, &cfg.hide, cfg.hash, exec)?;
    let records = resolve_stream(&primary, fallback.as_ref(), n);

    let hidden_dir = cfg.output_dir.join(HIDDEN_DIR);
    std::fs::create_dir_all(&hidden_dir).map_err(|e| Error::io(&hidden_dir, e))?;
    let stages = Stages {
        hide: cfg.hide,
        hash: cfg.hash,
        detector: cfg.detector,
        threshold,
        chunk: cfg.chunk,
        exec,
    };
    let report = run_stream(
        frames.len(),
        &records,
        &stages,
        &cfg.session_id,
        |i| Frame::load(&frames[i]),
        |i, hidden| hidden.save(&hidden_dir.join(frame_file_name(i))),
    )?;
    let report_path = cfg.output_dir.join(REPORT_FILE);
    report.write(&report_path)?;
    Ok(PipelineOutput {
        report,
        report_path,
        hidden_dir,
    })
}

/// Frame range of a clip around an event, clamped to the session.
pub fn clip_range(report: &AnomalyReport, event: &AnomalyEvent, pad: u64) -> std::ops::RangeInclusive<u64> {
    let last = (report.frame_count() as u64).saturating_sub(1);
    event.start.saturating_sub(pad)..=(event.end + pad).min(last)
}

/// Hidden frame paths for event `event_id`, `pad` frames either side.
pub fn extract_clip(report: &AnomalyReport, event_id: usize, hidden_dir: &Path, pad: u64) -> Result<Vec<PathBuf>> {
    let event = report.event(event_id)?;
    clip_range(report, event, pad)
        .map(|i| {
            let p = hidden_dir.join(frame_file_name(i as usize));
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::invalid(format!("hidden frame {} is missing", p.display())))
            }
        })
        .collect()
}

/// Threshold from a scenario's calibration photos, hidden like the frames.
pub fn scenario_threshold(s: &SyntheticScenario, hide_cfg: &HideConfig, hash: HashConfig, exec: Execution) -> Result<u32> {
    let photos: Vec<Frame> = exec::map_range(exec, s.calibration_photos, |k| s.calibration_photo(k));
    let dets = DetectionStream::from_entries((0..s.calibration_photos).map(|k| s.calibration_detection(k)));
    threshold_from_photos(&photos, Some(&dets), hide_cfg, hash, exec)
}

/// Resolved detections for every frame of a scenario.
pub fn scenario_records(s: &SyntheticScenario) -> Vec<DetectionRecord> {
    let n = s.duration_frames;
    let primary = DetectionStream::from_entries((0..n).map(|i| s.primary_detection(i)));
    let fallback = DetectionStream::from_entries((0..n).map(|i| s.fallback_detection(i)));
    resolve_stream(&primary, Some(&fallback), n as u64)
}

/// Hidden-frame hashes of a scenario, rendered on the fly.
pub fn scenario_hashes(s: &SyntheticScenario, hide_cfg: &HideConfig, hash: HashConfig, exec: Execution) -> Result<Vec<PerceptualHash>> {
    s.validate()?;
    let records = scenario_records(s);
    exec::try_map_range(exec, s.duration_frames, |i| {
        hash.hash_frame(&hide(&s.render_frame(i), &records[i], hide_cfg)?)
    })
}

/// Feed a finished hash series through a fresh detector.
pub fn detect_series(
    hashes: &[PerceptualHash],
    threshold: u32,
    hash: HashConfig,
    detector: &DetectorConfig,
    session_id: &str,
) -> Result<AnomalyReport> {
    let mut det = DetectorState::new(threshold, hash, *detector)?;
    for (i, h) in hashes.iter().enumerate() {
        det.step(h, i as u64)?;
    }
    Ok(det.finalize(session_id))
}

/// [`run_pipeline`] on a scenario rendered on the fly, with nothing
/// written to disk.
pub fn run_scenario(
    s: &SyntheticScenario,
    hide_cfg: &HideConfig,
    hash: HashConfig,
    detector: &DetectorConfig,
    exec: Execution,
) -> Result<AnomalyReport> {
    let threshold = scenario_threshold(s, hide_cfg, hash, exec)?;
    let hashes = scenario_hashes(s, hide_cfg, hash, exec)?;
    detect_series(&hashes, threshold, hash, detector, &format!("scenario-{}", s.seed))
}
