//! Procedural exam-taking footage with known anomalies, for end-to-end runs
//! without recorded video or a face detector.
//!
//! A flat-shaded person (torso, head, hair, eyes, mouth) sits in front of a
//! wall and desk. Every frame gets a pose: the current sitting position,
//! plus the transform of any anomaly segment covering the frame, plus a
//! small random jitter. Pixel noise and an optional moving shadow are added
//! on top. Detections are computed from the same pose, so boxes and
//! landmarks follow the head exactly.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detections::{write_detections, write_ground_truth, GroundTruthLabel, LandmarkSet, RawDetection};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::frame::{BoundingBox, Frame, PixelFormat};

/// Rigid head-and-body transform: rotation about the head centre, then
/// scale, then translation (pixels at 240 lines; scaled with frame height).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pose {
    pub shift: (f64, f64),
    pub rotate: f64,
    pub scale: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Pose {
            shift: (0.0, 0.0),
            rotate: 0.0,
            scale: 1.0,
        }
    }
}

impl Pose {
    fn compose(&self, other: &Pose) -> Pose {
        Pose {
            shift: (self.shift.0 + other.shift.0, self.shift.1 + other.shift.1),
            rotate: self.rotate + other.rotate,
            scale: self.scale * other.scale,
        }
    }

    fn is_identity(&self) -> bool {
        *self == Pose::default()
    }
}

/// Frames `start..end` show an anomaly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySegment {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub transform: Pose,
}

/// From `frame` on, the normal pose becomes `pose` (relative to the base).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionChange {
    pub frame: usize,
    pub pose: Pose,
}

/// A vertical shadow edge: pixels left of `split` x width are darkened by
/// up to `amplitude`, varying sinusoidally with `period` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    pub amplitude: f64,
    pub period: f64,
    #[serde(default = "default_split")]
    pub split: f64,
}

fn default_split() -> f64 {
    0.45
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScenario {
    pub seed: u64,
    pub duration_frames: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    /// Uniform per-channel pixel noise, `-noise..=noise`.
    pub noise: u8,
    /// Per-frame pose jitter (pixels; degrees at half this value).
    pub jitter: f64,
    pub calibration_photos: usize,
    /// Pose jitter of calibration photos (the head follows the stimulus).
    pub calibration_spread: f64,
    pub primary_dropout: f64,
    /// Chance the fallback detector finds the face on a frame.
    pub fallback_recall: f64,
    pub anomaly_segments: Vec<AnomalySegment>,
    pub position_changes: Vec<PositionChange>,
    pub shadow: Option<Shadow>,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        SyntheticScenario {
            seed: 7,
            duration_frames: 300,
            width: 320,
            height: 240,
            fps: 25.0,
            noise: 1,
            jitter: 1.0,
            calibration_photos: 9,
            calibration_spread: 2.0,
            primary_dropout: 0.03,
            fallback_recall: 0.8,
            anomaly_segments: Vec::new(),
            position_changes: Vec::new(),
            shadow: None,
        }
    }
}

const SKIN: [f64; 3] = [224.0, 172.0, 140.0];
const SKIN_DARK: [f64; 3] = [196.0, 146.0, 118.0];
const HAIR: [f64; 3] = [70.0, 48.0, 34.0];
const SHIRT: [f64; 3] = [60.0, 90.0, 150.0];
const EYE_WHITE: [f64; 3] = [245.0, 245.0, 240.0];
const PUPIL: [f64; 3] = [30.0, 25.0, 25.0];
const LIPS: [f64; 3] = [170.0, 80.0, 80.0];
const DESK: [f64; 3] = [140.0, 100.0, 60.0];
const FRAME_WOOD: [f64; 3] = [90.0, 60.0, 40.0];
const PICTURE: [f64; 3] = [120.0, 160.0, 120.0];

/// Eye centres in person space.
const EYES: [(f64, f64); 2] = [(-12.0, -6.0), (12.0, -6.0)];

fn in_ellipse(p: (f64, f64), c: (f64, f64), rx: f64, ry: f64) -> bool {
    let dx = (p.0 - c.0) / rx;
    let dy = (p.1 - c.1) / ry;
    dx * dx + dy * dy <= 1.0
}

fn in_rect(p: (f64, f64), x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
    p.0 >= x0 && p.0 < x1 && p.1 >= y0 && p.1 < y1
}

/// Colour of the person at person-space point `p`, if any part covers it.
fn person_color(p: (f64, f64)) -> Option<[f64; 3]> {
    for (i, &e) in EYES.iter().enumerate() {
        if in_ellipse(p, e, 2.5, 2.5) {
            return Some(PUPIL);
        }
        if in_ellipse(p, e, 7.0, 3.5) {
            return Some(EYE_WHITE);
        }
        let bx = if i == 0 { -19.0 } else { 5.0 };
        if in_rect(p, bx, -16.0, bx + 14.0, -13.0) {
            return Some(HAIR);
        }
    }
    if in_ellipse(p, (0.0, 20.0), 10.0, 3.0) {
        return Some(LIPS);
    }
    if in_ellipse(p, (0.0, 5.0), 3.0, 7.0) {
        return Some(SKIN_DARK);
    }
    if in_ellipse(p, (0.0, 0.0), 30.0, 38.0) {
        // Fringe over the forehead.
        return Some(if p.1 < -26.0 { HAIR } else { SKIN });
    }
    if in_ellipse(p, (0.0, -12.0), 34.0, 32.0) {
        return Some(HAIR);
    }
    if in_rect(p, -12.0, 30.0, 12.0, 56.0) {
        return Some(SKIN_DARK);
    }
    if in_ellipse(p, (0.0, 125.0), 78.0, 75.0) {
        return Some(SHIRT);
    }
    None
}

/// 68 landmark points in person space: jaw, brows, nose, eyes, mouth.
fn person_landmarks() -> Vec<(f64, f64)> {
    use std::f64::consts::PI;
    let mut pts = Vec::with_capacity(68);
    for i in 0..17 {
        let t = PI * f64::from(i) / 16.0;
        pts.push((-28.0 * t.cos(), -4.0 + 38.0 * t.sin()));
    }
    for side in [-1.0, 1.0] {
        for i in 0..5 {
            pts.push((side * (4.0 + 4.0 * f64::from(i)), -15.0));
        }
    }
    for i in 0..4 {
        pts.push((0.0, -8.0 + 4.0 * f64::from(i)));
    }
    for i in 0..5 {
        pts.push((-6.0 + 3.0 * f64::from(i), 9.0));
    }
    for &(ex, ey) in &EYES {
        for i in 0..6 {
            let t = 2.0 * PI * f64::from(i) / 6.0;
            pts.push((ex + 7.0 * t.cos(), ey + 3.5 * t.sin()));
        }
    }
    for (n, rx, ry) in [(12, 10.0, 4.0), (8, 6.0, 2.0)] {
        for i in 0..n {
            let t = 2.0 * PI * f64::from(i) / f64::from(n);
            pts.push((rx * t.cos(), 20.0 + ry * t.sin()));
        }
    }
    pts
}

/// Maps person space to frame pixels for one pose.
#[derive(Debug, Clone, Copy)]
struct Placement {
    centre: (f64, f64),
    k: f64,
    pose: Pose,
    cos: f64,
    sin: f64,
}

impl Placement {
    fn new(width: u32, height: u32, pose: Pose) -> Self {
        let k = f64::from(height) / 240.0;
        let (sin, cos) = pose.rotate.to_radians().sin_cos();
        Placement {
            centre: (f64::from(width) / 2.0, 0.42 * f64::from(height)),
            k,
            pose,
            cos,
            sin,
        }
    }

    fn forward(&self, p: (f64, f64)) -> (f64, f64) {
        let s = self.pose.scale * self.k;
        let (x, y) = (p.0 * s, p.1 * s);
        (
            self.centre.0 + self.cos * x - self.sin * y + self.pose.shift.0 * self.k,
            self.centre.1 + self.sin * x + self.cos * y + self.pose.shift.1 * self.k,
        )
    }

    fn inverse(&self, q: (f64, f64)) -> (f64, f64) {
        let s = self.pose.scale * self.k;
        let x = q.0 - self.centre.0 - self.pose.shift.0 * self.k;
        let y = q.1 - self.centre.1 - self.pose.shift.1 * self.k;
        ((self.cos * x + self.sin * y) / s, (-self.sin * x + self.cos * y) / s)
    }

    fn boxed(&self, pts: &[(f64, f64)]) -> Option<BoundingBox> {
        let mapped: Vec<_> = pts.iter().map(|&p| self.forward(p)).collect();
        BoundingBox::enclosing(&mapped)
    }

    fn ellipse_box(&self, c: (f64, f64), rx: f64, ry: f64) -> Option<BoundingBox> {
        let pts: Vec<_> = (0..32)
            .map(|i| {
                let t = std::f64::consts::TAU * f64::from(i) / 32.0;
                (c.0 + rx * t.cos(), c.1 + ry * t.sin())
            })
            .collect();
        self.boxed(&pts)
    }
}

fn background(x: u32, y: u32, w: u32, h: u32) -> [f64; 3] {
    let (fx, fy) = (f64::from(x) / f64::from(w), f64::from(y) / f64::from(h));
    if fy >= 0.82 {
        return DESK;
    }
    if (0.08..0.30).contains(&fx) && (0.12..0.42).contains(&fy) {
        let inner = (0.1..0.28).contains(&fx) && (0.15..0.39).contains(&fy);
        return if inner { PICTURE } else { FRAME_WOOD };
    }
    let v = 205.0 - 35.0 * fy;
    [v, v - 6.0, v - 16.0]
}

fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

const STREAM_POSE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_PRIMARY: u64 = 3;
const STREAM_FALLBACK: u64 = 4;
const STREAM_CALIBRATION: u64 = 5;

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::Config(format!("frame size {}x{} is too small", self.width, self.height)));
        }
        if self.fps <= 0.0 {
            return Err(Error::Config("fps must be positive".into()));
        }
        for p in [self.primary_dropout, self.fallback_recall] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        let mut segs = self.anomaly_segments.clone();
        segs.sort_by_key(|s| s.start);
        for s in &segs {
            if s.start >= s.end || s.end > self.duration_frames {
                return Err(Error::Config(format!(
                    "segment {}..{} is empty or beyond {} frames",
                    s.start, s.end, self.duration_frames
                )));
            }
        }
        for pair in segs.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::Config(format!(
                    "segments {}..{} and {}..{} overlap",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                )));
            }
        }
        Ok(())
    }

    pub fn is_anomalous(&self, frame: usize) -> bool {
        self.anomaly_segments.iter().any(|s| (s.start..s.end).contains(&frame))
    }

    /// Normal sitting position in effect at `frame`.
    pub fn position_at(&self, frame: usize) -> Pose {
        self.position_changes
            .iter()
            .filter(|c| c.frame <= frame)
            .max_by_key(|c| c.frame)
            .map_or_else(Pose::default, |c| c.pose)
    }

    fn jitter(&self, stream: u64, index: usize, amount: f64) -> Pose {
        if amount == 0.0 {
            return Pose::default();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, stream, index as u64));
        Pose {
            shift: (rng.gen_range(-amount..=amount), rng.gen_range(-amount..=amount)),
            rotate: rng.gen_range(-amount..=amount) * 0.5,
            scale: 1.0,
        }
    }

    pub fn pose_at(&self, frame: usize) -> Pose {
        let mut pose = self.position_at(frame);
        if let Some(s) = self.anomaly_segments.iter().find(|s| (s.start..s.end).contains(&frame)) {
            pose = pose.compose(&s.transform);
        }
        pose.compose(&self.jitter(STREAM_POSE, frame, self.jitter))
    }

    fn calibration_pose(&self, k: usize) -> Pose {
        self.jitter(STREAM_CALIBRATION, k, self.calibration_spread)
    }

    fn render(&self, pose: Pose, noise_index: u64, shade: f64) -> Frame {
        let (w, h) = (self.width, self.height);
        let place = Placement::new(w, h, pose);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, STREAM_NOISE, noise_index));
        let split = self.shadow.map_or(0, |s| (s.split * f64::from(w)) as u32);
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for y in 0..h {
            for x in 0..w {
                let q = (f64::from(x) + 0.5, f64::from(y) + 0.5);
                let c = person_color(place.inverse(q)).unwrap_or_else(|| background(x, y, w, h));
                // Key light from the right, so flat regions still brighten
                // left to right.
                let light = 0.8 + 0.35 * f64::from(x) / f64::from(w);
                let f = light * if x < split { shade } else { 1.0 };
                for ch in c {
                    let n = if self.noise > 0 {
                        f64::from(rng.gen_range(-i16::from(self.noise)..=i16::from(self.noise)))
                    } else {
                        0.0
                    };
                    data.push((ch * f + n).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Frame::new(w, h, PixelFormat::Rgb, data).expect("buffer sized to frame")
    }

    fn shade_at(&self, frame: usize) -> f64 {
        self.shadow.map_or(1.0, |s| {
            let phase = std::f64::consts::TAU * frame as f64 / s.period.max(1.0);
            1.0 - s.amplitude * (0.5 + 0.5 * phase.sin())
        })
    }

    pub fn render_frame(&self, frame: usize) -> Frame {
        self.render(self.pose_at(frame), frame as u64, self.shade_at(frame))
            .with_index(frame as u64, frame as f64 / self.fps)
    }

    /// Calibration photo `k`: base position, stimulus-driven jitter, no shadow.
    pub fn calibration_photo(&self, k: usize) -> Frame {
        self.render(self.calibration_pose(k), u64::MAX - k as u64, 1.0)
    }

    fn detection_for(&self, frame: u64, pose: Pose, with_landmarks: bool) -> RawDetection {
        let place = Placement::new(self.width, self.height, pose);
        let eyes = EYES
            .iter()
            .filter_map(|&c| place.boxed(&[(c.0 - 10.0, c.1 - 7.0), (c.0 + 10.0, c.1 + 7.0), (c.0 - 10.0, c.1 + 7.0), (c.0 + 10.0, c.1 - 7.0)]))
            .collect();
        RawDetection {
            frame,
            face: place.ellipse_box((0.0, 0.0), 30.0, 38.0),
            eyes,
            landmarks: with_landmarks.then(|| self.landmarks_for(pose)),
        }
    }

    fn landmarks_for(&self, pose: Pose) -> LandmarkSet {
        let place = Placement::new(self.width, self.height, pose);
        LandmarkSet::new(person_landmarks().into_iter().map(|p| place.forward(p)).collect())
    }

    fn miss(frame: u64) -> RawDetection {
        RawDetection {
            frame,
            face: None,
            eyes: Vec::new(),
            landmarks: None,
        }
    }

    fn draw(&self, stream: u64, frame: usize) -> f64 {
        ChaCha8Rng::seed_from_u64(mix(self.seed, stream, frame as u64)).gen()
    }

    /// Landmark detector output (with dropout).
    pub fn primary_detection(&self, frame: usize) -> RawDetection {
        if self.draw(STREAM_PRIMARY, frame) < self.primary_dropout {
            return Self::miss(frame as u64);
        }
        self.detection_for(frame as u64, self.pose_at(frame), true)
    }

    /// Box-only fallback detector output.
    pub fn fallback_detection(&self, frame: usize) -> RawDetection {
        if self.draw(STREAM_FALLBACK, frame) >= self.fallback_recall {
            return Self::miss(frame as u64);
        }
        self.detection_for(frame as u64, self.pose_at(frame), false)
    }

    pub fn calibration_detection(&self, k: usize) -> RawDetection {
        self.detection_for(k as u64, self.calibration_pose(k), true)
    }

    pub fn ground_truth(&self, frame: usize) -> GroundTruthLabel {
        GroundTruthLabel {
            frame: frame as u64,
            face_present: true,
            eyes_correct: Some(true),
            anomaly: self.is_anomalous(frame),
            true_landmarks: Some(self.landmarks_for(self.pose_at(frame))),
        }
    }

    pub fn truth_flags(&self) -> Vec<bool> {
        (0..self.duration_frames).map(|i| self.is_anomalous(i)).collect()
    }

    /// Whether the pose never moves (no jitter, no transforms).
    pub fn is_static(&self) -> bool {
        self.jitter == 0.0
            && self.anomaly_segments.iter().all(|s| s.transform.is_identity())
            && self.position_changes.iter().all(|c| c.pose.is_identity())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: SyntheticScenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Where [`generate_scenario`] put everything.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFiles {
    pub root: PathBuf,
    pub frames_dir: PathBuf,
    pub primary: PathBuf,
    pub fallback: PathBuf,
    pub ground_truth: PathBuf,
    pub calibration_dir: PathBuf,
    /// Ready-to-run pipeline config writing into `root/out`.
    pub config: PathBuf,
}

pub const FRAMES_DIR: &str = "frames";
pub const CALIBRATION_DIR: &str = "calibration";
pub const CALIBRATION_DETECTIONS: &str = "detections.jsonl";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Render the scenario to `out`: `frames/frame_%06d.png`, detection and
/// ground-truth sidecars, calibration photos with their detections, and a
/// `pipeline.toml` pointing at all of it.
pub fn generate_scenario(s: &SyntheticScenario, out: &Path, exec: Execution) -> Result<ScenarioFiles> {
    s.validate()?;
    let frames_dir = out.join(FRAMES_DIR);
    let calibration_dir = out.join(CALIBRATION_DIR);
    for d in [&frames_dir, &calibration_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    exec::try_map(exec, &(0..s.duration_frames).collect::<Vec<_>>(), |&i| {
        s.render_frame(i).save(&frames_dir.join(frame_file_name(i)))
    })?;
    for k in 0..s.calibration_photos {
        s.calibration_photo(k).save(&calibration_dir.join(format!("photo_{k:02}.png")))?;
    }
    let cal_dets: Vec<_> = (0..s.calibration_photos).map(|k| s.calibration_detection(k)).collect();
    write_detections(&calibration_dir.join(CALIBRATION_DETECTIONS), &cal_dets)?;

    let files = ScenarioFiles {
        root: out.to_path_buf(),
        primary: out.join("primary.jsonl"),
        fallback: out.join("fallback.jsonl"),
        ground_truth: out.join("ground_truth.jsonl"),
        config: out.join("pipeline.toml"),
        frames_dir,
        calibration_dir,
    };
    let n = s.duration_frames;
    write_detections(&files.primary, &(0..n).map(|i| s.primary_detection(i)).collect::<Vec<_>>())?;
    write_detections(&files.fallback, &(0..n).map(|i| s.fallback_detection(i)).collect::<Vec<_>>())?;
    write_ground_truth(&files.ground_truth, &(0..n).map(|i| s.ground_truth(i)).collect::<Vec<_>>())?;
    let config = format!(
        "frames_dir = \"{FRAMES_DIR}\"\nprimary_detections = \"primary.jsonl\"\n\
         fallback_detections = \"fallback.jsonl\"\nground_truth = \"ground_truth.jsonl\"\n\
         calibration = \"{CALIBRATION_DIR}\"\noutput_dir = \"out\"\nsession_id = \"scenario-{}\"\n",
        s.seed
    );
    std::fs::write(&files.config, config).map_err(|e| Error::io(&files.config, e))?;
    Ok(files)
}
