//! Detection sidecars, hybrid primary/fallback/previous-frame resolution and
//! detection-quality metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::BoundingBox;

/// Facial landmark positions in pixel coordinates (depth already dropped).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkSet(Vec<(f64, f64)>);

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        LandmarkSet(points)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One line of a detections sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub frame: u64,
    pub face: Option<BoundingBox>,
    #[serde(default)]
    pub eyes: Vec<BoundingBox>,
    #[serde(default)]
    pub landmarks: Option<LandmarkSet>,
}

impl RawDetection {
    /// Whether the detector reported anything for this frame. A line with a
    /// null face, no eyes and null landmarks records a detector miss.
    pub fn is_hit(&self) -> bool {
        self.face.is_some() || !self.eyes.is_empty() || self.landmarks.as_ref().is_some_and(|l| !l.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Primary,
    Fallback,
    Carried,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: u64,
    pub face: Option<BoundingBox>,
    pub eyes: Vec<BoundingBox>,
    pub landmarks: Option<LandmarkSet>,
    pub provenance: Provenance,
}

impl DetectionRecord {
    pub fn none(frame_index: u64) -> Self {
        DetectionRecord {
            frame_index,
            face: None,
            eyes: Vec::new(),
            landmarks: None,
            provenance: Provenance::None,
        }
    }

    fn from_raw(raw: &RawDetection, frame_index: u64, provenance: Provenance) -> Self {
        DetectionRecord {
            frame_index,
            face: raw.face,
            eyes: raw.eyes.clone(),
            landmarks: raw.landmarks.clone().filter(|l| !l.is_empty()),
            provenance,
        }
    }

    /// Whether a detector produced this record (carried records excluded).
    pub fn is_detected(&self) -> bool {
        matches!(self.provenance, Provenance::Primary | Provenance::Fallback)
    }
}

/// Parsed sidecar: entries in frame order, one per frame.
#[derive(Debug, Clone, Default)]
pub struct DetectionStream {
    entries: BTreeMap<u64, RawDetection>,
    /// Frames that appeared more than once; the last line won.
    pub duplicates: Vec<u64>,
}

impl DetectionStream {
    pub fn from_entries(entries: impl IntoIterator<Item = RawDetection>) -> Self {
        let mut stream = DetectionStream::default();
        for e in entries {
            stream.insert(e);
        }
        stream
    }

    fn insert(&mut self, e: RawDetection) {
        let frame = e.frame;
        if self.entries.insert(frame, e).is_some() {
            self.duplicates.push(frame);
        }
    }

    pub fn get(&self, frame: u64) -> Option<&RawDetection> {
        self.entries.get(&frame)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RawDetection> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<Vec<(usize, T)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map(|v| (i + 1, v))
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
        })
        .collect()
}

/// Read a detections sidecar (JSON lines). Duplicate frames keep the last
/// line and are reported in [`DetectionStream::duplicates`].
pub fn parse_detections(path: &Path) -> Result<DetectionStream> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections_str(path, &text)
}

pub fn parse_detections_str(path: &Path, text: &str) -> Result<DetectionStream> {
    let mut stream = DetectionStream::default();
    for (_, e) in parse_jsonl::<RawDetection>(path, text)? {
        stream.insert(e);
    }
    for f in &stream.duplicates {
        log::warn!("{}: frame {f} listed more than once, keeping the last entry", path.display());
    }
    Ok(stream)
}

pub fn write_detections(path: &Path, entries: &[RawDetection]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Pick the record for one frame: primary hit, else fallback hit, else the
/// previous frame's record carried forward, else nothing.
pub fn resolve_hybrid(
    primary: Option<&RawDetection>,
    fallback: Option<&RawDetection>,
    previous: Option<&DetectionRecord>,
    frame_index: u64,
) -> DetectionRecord {
    if let Some(p) = primary.filter(|p| p.is_hit()) {
        return DetectionRecord::from_raw(p, frame_index, Provenance::Primary);
    }
    if let Some(f) = fallback.filter(|f| f.is_hit()) {
        return DetectionRecord::from_raw(f, frame_index, Provenance::Fallback);
    }
    match previous.filter(|p| p.provenance != Provenance::None) {
        Some(prev) => DetectionRecord {
            frame_index,
            provenance: Provenance::Carried,
            ..prev.clone()
        },
        None => DetectionRecord::none(frame_index),
    }
}

/// Sequential fold of [`resolve_hybrid`] over a session.
#[derive(Debug, Default, Clone)]
pub struct HybridResolver {
    previous: Option<DetectionRecord>,
}

impl HybridResolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn resolve(
        &mut self,
        primary: Option<&RawDetection>,
        fallback: Option<&RawDetection>,
        frame_index: u64,
    ) -> DetectionRecord {
        let rec = resolve_hybrid(primary, fallback, self.previous.as_ref(), frame_index);
        self.previous = Some(rec.clone());
        rec
    }
}

/// Resolve frames `0..frame_count` from a primary and optional fallback stream.
pub fn resolve_stream(
    primary: &DetectionStream,
    fallback: Option<&DetectionStream>,
    frame_count: u64,
) -> Vec<DetectionRecord> {
    let mut resolver = HybridResolver::new();
    (0..frame_count)
        .map(|i| resolver.resolve(primary.get(i), fallback.and_then(|f| f.get(i)), i))
        .collect()
}

/// One line of a ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub frame: u64,
    pub face_present: bool,
    #[serde(default)]
    pub eyes_correct: Option<bool>,
    #[serde(default)]
    pub anomaly: bool,
    #[serde(default)]
    pub true_landmarks: Option<LandmarkSet>,
}

/// Ground truth sorted by frame. Duplicate frames are rejected.
pub fn parse_ground_truth(path: &Path) -> Result<Vec<GroundTruthLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = BTreeMap::new();
    for (line, label) in parse_jsonl::<GroundTruthLabel>(path, &text)? {
        let frame = label.frame;
        if labels.insert(frame, label).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("frame {frame} labelled twice"),
            });
        }
    }
    Ok(labels.into_values().collect())
}

pub fn write_ground_truth(path: &Path, labels: &[GroundTruthLabel]) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn by_frame(records: &[DetectionRecord]) -> BTreeMap<u64, &DetectionRecord> {
    records.iter().map(|r| (r.frame_index, r)).collect()
}

/// Percentage of labelled faces for which a detector (primary or fallback)
/// produced a record.
pub fn face_detected_rate(labels: &[GroundTruthLabel], records: &[DetectionRecord]) -> Result<f64> {
    let recs = by_frame(records);
    let mut faces = 0u64;
    let mut hits = 0u64;
    for l in labels.iter().filter(|l| l.face_present) {
        faces += 1;
        if recs.get(&l.frame).is_some_and(|r| r.is_detected()) {
            hits += 1;
        }
    }
    if faces == 0 {
        return Err(Error::UndefinedRate("face detected rate"));
    }
    Ok(100.0 * hits as f64 / faces as f64)
}

/// Percentage of face-labelled frames whose detected record carries at least
/// one eye box and whose label marks the eyes as correct.
pub fn eye_detected_rate(labels: &[GroundTruthLabel], records: &[DetectionRecord]) -> Result<f64> {
    let recs = by_frame(records);
    let mut faces = 0u64;
    let mut hits = 0u64;
    for l in labels.iter().filter(|l| l.face_present) {
        faces += 1;
        let has_eyes = recs
            .get(&l.frame)
            .is_some_and(|r| r.is_detected() && !r.eyes.is_empty());
        if has_eyes && l.eyes_correct == Some(true) {
            hits += 1;
        }
    }
    if faces == 0 {
        return Err(Error::UndefinedRate("eye detected rate"));
    }
    Ok(100.0 * hits as f64 / faces as f64)
}

/// Per-frame landmark comparison input.
#[derive(Debug, Clone)]
pub struct LandmarkFrame {
    pub detected: Vec<(f64, f64)>,
    pub truth: Vec<(f64, f64)>,
    pub left_pupil: (f64, f64),
    pub right_pupil: (f64, f64),
}

/// Mean landmark displacement normalised by the inter-pupil distance:
/// per frame the mean of `|d_i - g_i| / |g_le - g_re|`, then averaged over
/// frames.
pub fn avg_normalized_error(frames: &[LandmarkFrame]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::invalid("no frames to compare"));
    }
    let mut total = 0.0;
    for (k, f) in frames.iter().enumerate() {
        if f.detected.len() != f.truth.len() || f.truth.is_empty() {
            return Err(Error::invalid(format!(
                "frame {k}: {} detected vs {} true landmarks",
                f.detected.len(),
                f.truth.len()
            )));
        }
        let iod = dist(f.left_pupil, f.right_pupil);
        if iod == 0.0 || !iod.is_finite() {
            return Err(Error::DegenerateGeometry(format!("frame {k}: zero inter-pupil distance")));
        }
        let sum: f64 = f.detected.iter().zip(&f.truth).map(|(&d, &g)| dist(d, g)).sum();
        total += sum / (f.truth.len() as f64 * iod);
    }
    Ok(total / frames.len() as f64)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(frame: u64, face: bool) -> RawDetection {
        RawDetection {
            frame,
            face: face.then(|| BoundingBox::new(frame as i32, 0, 10, 10).unwrap()),
            eyes: vec![],
            landmarks: None,
        }
    }

    fn parse(text: &str) -> Result<DetectionStream> {
        parse_detections_str(Path::new("test.jsonl"), text)
    }

    #[test]
    fn empty_file_is_empty_stream() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn duplicate_frame_last_wins() {
        let s = parse(
            "{\"frame\":5,\"face\":[1,1,4,4],\"eyes\":[],\"landmarks\":null}\n\
             {\"frame\":5,\"face\":[2,2,4,4],\"eyes\":[],\"landmarks\":null}\n",
        )
        .unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(5).unwrap().face.unwrap().x, 2);
        assert_eq!(s.duplicates, vec![5]);
    }

    #[test]
    fn sorted_by_frame() {
        let s = parse(
            "{\"frame\":2,\"face\":null,\"eyes\":[],\"landmarks\":null}\n\
             {\"frame\":0,\"face\":[0,0,3,3],\"eyes\":[[1,1,1,1]],\"landmarks\":[[1.5,2.0]]}\n\
             \n\
             {\"frame\":1,\"face\":null,\"eyes\":[],\"landmarks\":null}\n",
        )
        .unwrap();
        let frames: Vec<u64> = s.entries().map(|e| e.frame).collect();
        assert_eq!(frames, [0, 1, 2]);
        assert_eq!(s.get(0).unwrap().landmarks.as_ref().unwrap().points(), &[(1.5, 2.0)]);
    }

    #[test]
    fn malformed_line_names_line() {
        let err = parse("{\"frame\":0,\"face\":null}\n{\"frame\":1,\"face\":[1,2]}\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_detections(Path::new("/definitely/not/here.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn hybrid_priority() {
        let p = raw(0, true);
        let f = RawDetection {
            face: Some(BoundingBox::new(50, 50, 5, 5).unwrap()),
            ..raw(0, false)
        };
        let q = DetectionRecord {
            frame_index: 3,
            face: Some(BoundingBox::new(9, 9, 9, 9).unwrap()),
            eyes: vec![BoundingBox::new(10, 10, 2, 2).unwrap()],
            landmarks: None,
            provenance: Provenance::Primary,
        };
        assert_eq!(resolve_hybrid(Some(&p), Some(&f), Some(&q), 4).provenance, Provenance::Primary);
        let r = resolve_hybrid(None, Some(&f), Some(&q), 4);
        assert_eq!((r.provenance, r.face), (Provenance::Fallback, f.face));
        let r = resolve_hybrid(None, None, Some(&q), 4);
        assert_eq!(r.provenance, Provenance::Carried);
        assert_eq!((r.frame_index, r.face, &r.eyes), (4, q.face, &q.eyes));
        assert_eq!(resolve_hybrid(None, None, None, 4).provenance, Provenance::None);
    }

    #[test]
    fn miss_lines_count_as_absent() {
        let miss = raw(0, false);
        let f = raw(0, true);
        assert_eq!(resolve_hybrid(Some(&miss), Some(&f), None, 0).provenance, Provenance::Fallback);
        assert_eq!(resolve_hybrid(Some(&miss), None, None, 0).provenance, Provenance::None);
    }

    fn label(frame: u64, face: bool, eyes: Option<bool>) -> GroundTruthLabel {
        GroundTruthLabel {
            frame,
            face_present: face,
            eyes_correct: eyes,
            anomaly: false,
            true_landmarks: None,
        }
    }

    fn rec(frame: u64, provenance: Provenance, eyes: usize) -> DetectionRecord {
        DetectionRecord {
            frame_index: frame,
            face: Some(BoundingBox::new(0, 0, 4, 4).unwrap()),
            eyes: vec![BoundingBox::new(1, 1, 1, 1).unwrap(); eyes],
            landmarks: None,
            provenance,
        }
    }

    #[test]
    fn detected_rate_scaled_examples() {
        let labels: Vec<_> = (0..10_000).map(|i| label(i, true, Some(i < 9741))).collect();
        let records: Vec<_> = (0..10_000)
            .map(|i| {
                if i < 9293 {
                    rec(i, Provenance::Primary, 2)
                } else {
                    rec(i, Provenance::Carried, 2)
                }
            })
            .collect();
        let face = face_detected_rate(&labels, &records).unwrap();
        assert!((face - 92.93).abs() < 1e-9);

        let all: Vec<_> = (0..10_000).map(|i| rec(i, Provenance::Fallback, 1)).collect();
        assert_eq!(face_detected_rate(&labels, &all).unwrap(), 100.0);
        let eyes = eye_detected_rate(&labels, &all).unwrap();
        assert!((eyes - 97.41).abs() < 1e-9);
    }

    #[test]
    fn rates_need_faces() {
        let labels = vec![label(0, false, None)];
        let records = vec![rec(0, Provenance::Primary, 2)];
        assert!(matches!(face_detected_rate(&labels, &records), Err(Error::UndefinedRate(_))));
        assert!(matches!(eye_detected_rate(&labels, &records), Err(Error::UndefinedRate(_))));
    }

    #[test]
    fn normalized_error_basics() {
        let truth = vec![(10.0, 10.0), (20.0, 10.0), (15.0, 20.0)];
        let f = LandmarkFrame {
            detected: truth.clone(),
            truth: truth.clone(),
            left_pupil: (10.0, 10.0),
            right_pupil: (20.0, 10.0),
        };
        assert_eq!(avg_normalized_error(std::slice::from_ref(&f)).unwrap(), 0.0);

        let single = LandmarkFrame {
            detected: vec![(13.0, 14.0)],
            truth: vec![(10.0, 10.0)],
            left_pupil: (0.0, 0.0),
            right_pupil: (3.0, 4.0),
        };
        assert!((avg_normalized_error(&[single]).unwrap() - 1.0).abs() < 1e-12);

        let degenerate = LandmarkFrame {
            left_pupil: (5.0, 5.0),
            right_pupil: (5.0, 5.0),
            ..f
        };
        assert!(matches!(
            avg_normalized_error(&[degenerate]),
            Err(Error::DegenerateGeometry(_))
        ));
    }
}
