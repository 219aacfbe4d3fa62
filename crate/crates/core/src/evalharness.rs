//! Detection metrics, hash-method comparison and throughput measurement.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::anomaly::{AnomalyReport, DetectorConfig, DetectorState};
use crate::calibration::threshold_from_frames;
use crate::detections::{DetectionRecord, GroundTruthLabel};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::facehide::{hide, HideConfig, HideMode};
use crate::frame::Frame;
use crate::imagehash::{HashAlgorithm, HashConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Count outcomes with anomaly as the positive class.
pub fn confusion(truth: &[bool], flags: &[bool]) -> Result<ConfusionCounts> {
    if truth.len() != flags.len() {
        return Err(Error::invalid(format!(
            "{} ground-truth labels but {} flags",
            truth.len(),
            flags.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&t, &f) in truth.iter().zip(flags) {
        match (t, f) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Compare a report's per-frame flags with ground truth. Every frame of
/// the report needs exactly one label.
pub fn evaluate_report(report: &AnomalyReport, labels: &[GroundTruthLabel]) -> Result<ConfusionCounts> {
    let n = report.frame_count();
    let mut truth = vec![None; n];
    for l in labels {
        let slot = truth
            .get_mut(l.frame as usize)
            .ok_or(Error::Misaligned(l.frame))?;
        if slot.replace(l.anomaly).is_some() {
            return Err(Error::Misaligned(l.frame));
        }
    }
    let truth = truth
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.ok_or(Error::Misaligned(i as u64)))
        .collect::<Result<Vec<bool>>>()?;
    confusion(&truth, &report.frame_flags())
}

/// Percentages, each rounded to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
}

fn pct(num: u64, den: u64) -> f64 {
    (num as f64 * 1000.0 / den as f64).round() / 10.0
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::UndefinedRate("accuracy")),
        n => Ok(pct(c.tp + c.tn, n)),
    }
}

pub fn recall(c: &ConfusionCounts) -> Result<f64> {
    match c.tp + c.fn_ {
        0 => Err(Error::UndefinedRate("recall")),
        n => Ok(pct(c.tp, n)),
    }
}

pub fn precision(c: &ConfusionCounts) -> Result<f64> {
    match c.tp + c.fp {
        0 => Err(Error::UndefinedRate("precision")),
        n => Ok(pct(c.tp, n)),
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    Ok(Metrics {
        accuracy: accuracy(c)?,
        recall: recall(c)?,
        precision: precision(c)?,
    })
}

/// F1 in [0, 1] from unrounded precision and recall.
pub fn f1(c: &ConfusionCounts) -> Result<f64> {
    if c.tp + c.fn_ == 0 {
        return Err(Error::UndefinedRate("recall"));
    }
    if c.tp + c.fp == 0 {
        return Err(Error::UndefinedRate("precision"));
    }
    let p = c.tp as f64 / (c.tp + c.fp) as f64;
    let r = c.tp as f64 / (c.tp + c.fn_) as f64;
    if p + r == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * p * r / (p + r))
}

/// One line of the per-participant results table. Metrics that are
/// undefined for the run are `None` and print as `N/A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub participant: String,
    pub mode: HideMode,
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

impl MetricsRow {
    pub fn new(participant: impl Into<String>, mode: HideMode, c: &ConfusionCounts) -> Self {
        MetricsRow {
            participant: participant.into(),
            mode,
            accuracy: accuracy(c).ok(),
            recall: recall(c).ok(),
            precision: precision(c).ok(),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |v| format!("{v:.1}"))
}

pub const CSV_HEADER: &str = "participant,mode,accuracy,recall,precision";

pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.participant,
            r.mode,
            cell(r.accuracy),
            cell(r.recall),
            cell(r.precision)
        );
    }
    out
}

pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let text = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::to_string_pretty(rows)? + "\n"
    } else {
        rows_to_csv(rows)
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A participant's blur and mask results side by side (six metric columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WideRow {
    pub participant: String,
    pub blur: [Option<f64>; 3],
    pub mask: [Option<f64>; 3],
}

/// Pivot long rows into one row per participant, in first-seen order.
pub fn wide_table(rows: &[MetricsRow]) -> Vec<WideRow> {
    let mut out: Vec<WideRow> = Vec::new();
    for r in rows {
        let idx = match out.iter().position(|w| w.participant == r.participant) {
            Some(i) => i,
            None => {
                out.push(WideRow {
                    participant: r.participant.clone(),
                    blur: [None; 3],
                    mask: [None; 3],
                });
                out.len() - 1
            }
        };
        let cols = [r.accuracy, r.recall, r.precision];
        match r.mode {
            HideMode::Blur => out[idx].blur = cols,
            HideMode::Mask => out[idx].mask = cols,
        }
    }
    out
}

pub fn wide_to_csv(rows: &[WideRow]) -> String {
    let mut out = String::from("participant,blur_acc,blur_rec,blur_pre,mask_acc,mask_rec,mask_pre\n");
    for r in rows {
        let cols: Vec<String> = r.blur.iter().chain(&r.mask).map(|v| cell(*v)).collect();
        let _ = writeln!(out, "{},{}", r.participant, cols.join(","));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashMethodRow {
    pub method: HashAlgorithm,
    pub size: u32,
    pub threshold: u32,
    /// `None` when precision or recall is undefined for the run.
    pub f1: Option<f64>,
    pub fps: f64,
}

/// Run the detector once per `(method, size)` over already-hidden frames.
/// The threshold for each configuration comes from `calibration` with the
/// same hash. Rows come back in `methods x sizes` order; configurations
/// are evaluated in parallel when `exec` allows.
pub fn compare_hash_methods(
    frames: &[Frame],
    calibration: &[Frame],
    truth: &[bool],
    methods: &[HashAlgorithm],
    sizes: &[u32],
    detector: &DetectorConfig,
    exec: Execution,
) -> Result<Vec<HashMethodRow>> {
    if frames.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} frames but {} ground-truth labels",
            frames.len(),
            truth.len()
        )));
    }
    let configs: Vec<HashConfig> = methods
        .iter()
        .flat_map(|&m| sizes.iter().map(move |&s| HashConfig::new(m, s)))
        .collect::<Result<_>>()?;
    exec::try_map(exec, &configs, |&hash| {
        let threshold = threshold_from_frames(calibration, hash, Execution::Sequential)?;
        let start = Instant::now();
        let mut det = DetectorState::new(threshold, hash, *detector)?;
        for (i, f) in frames.iter().enumerate() {
            det.step(&hash.hash_frame(f)?, i as u64)?;
        }
        let report = det.finalize("compare");
        let elapsed = start.elapsed().as_secs_f64().max(1e-9);
        let c = confusion(truth, &report.frame_flags())?;
        Ok(HashMethodRow {
            method: hash.algo,
            size: hash.size,
            threshold,
            f1: f1(&c).ok(),
            fps: frames.len() as f64 / elapsed,
        })
    })
}

/// Row with the highest defined F1 (earliest on ties).
pub fn best_row(rows: &[HashMethodRow]) -> Option<&HashMethodRow> {
    rows.iter()
        .filter(|r| r.f1.is_some())
        .fold(None, |best: Option<&HashMethodRow>, r| match best {
            Some(b) if b.f1 >= r.f1 => Some(b),
            _ => Some(r),
        })
}

pub fn hash_rows_to_csv(rows: &[HashMethodRow]) -> String {
    let mut out = String::from("method,size,threshold,f1,fps\n");
    for r in rows {
        let f1 = r.f1.map_or_else(|| "N/A".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(out, "{},{},{},{},{:.1}", r.method, r.size, r.threshold, f1, r.fps);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchStage {
    Blur,
    Mask,
    Hash,
    Pipeline,
}

impl std::str::FromStr for BenchStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blur" => Ok(BenchStage::Blur),
            "mask" => Ok(BenchStage::Mask),
            "hash" => Ok(BenchStage::Hash),
            "pipeline" => Ok(BenchStage::Pipeline),
            other => Err(Error::invalid(format!("unknown bench stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub stage: BenchStage,
    pub frames: usize,
    /// Median seconds per repetition.
    pub elapsed: f64,
    pub fps: f64,
}

impl BenchResult {
    pub fn from_elapsed(stage: BenchStage, frames: usize, elapsed: f64) -> Result<Self> {
        if elapsed <= 0.0 {
            return Err(Error::invalid("elapsed time must be positive"));
        }
        Ok(BenchResult {
            stage,
            frames,
            elapsed,
            fps: frames as f64 / elapsed,
        })
    }
}

/// Everything a stage needs to process one frame.
#[derive(Debug, Clone)]
pub struct BenchInput {
    pub frames: Vec<Frame>,
    /// One per frame, same order.
    pub detections: Vec<DetectionRecord>,
    pub hide: HideConfig,
    pub hash: HashConfig,
    pub detector: DetectorConfig,
    pub threshold: u32,
}

fn run_stage(stage: BenchStage, input: &BenchInput) -> Result<()> {
    let mode = |m| HideConfig { mode: m, ..input.hide };
    match stage {
        BenchStage::Blur | BenchStage::Mask => {
            let cfg = mode(if stage == BenchStage::Blur { HideMode::Blur } else { HideMode::Mask });
            for (f, d) in input.frames.iter().zip(&input.detections) {
                std::hint::black_box(hide(f, d, &cfg)?);
            }
        }
        BenchStage::Hash => {
            for f in &input.frames {
                std::hint::black_box(input.hash.hash_frame(f)?);
            }
        }
        BenchStage::Pipeline => {
            let mut det = DetectorState::new(input.threshold, input.hash, input.detector)?;
            for (i, (f, d)) in input.frames.iter().zip(&input.detections).enumerate() {
                let hidden = hide(f, d, &input.hide)?;
                det.step(&input.hash.hash_frame(&hidden)?, i as u64)?;
            }
            std::hint::black_box(det.finalize("bench"));
        }
    }
    Ok(())
}

/// Median wall-clock FPS of `stage` over `repetitions` passes on one
/// thread, after one untimed warm-up pass.
pub fn bench_fps(stage: BenchStage, input: &BenchInput, repetitions: usize) -> Result<BenchResult> {
    if input.frames.is_empty() || repetitions == 0 {
        return Err(Error::invalid("bench needs at least one frame and one repetition"));
    }
    if input.detections.len() != input.frames.len() {
        return Err(Error::invalid("bench needs one detection per frame"));
    }
    run_stage(stage, input)?;
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        run_stage(stage, input)?;
        times.push(start.elapsed());
    }
    let med = median(&mut times).as_secs_f64().max(1e-9);
    BenchResult::from_elapsed(stage, input.frames.len(), med)
}

fn median(times: &mut [Duration]) -> Duration {
    times.sort();
    let n = times.len();
    if n % 2 == 1 {
        times[n / 2]
    } else {
        (times[n / 2 - 1] + times[n / 2]) / 2
    }
}
