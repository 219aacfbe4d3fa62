//! Face hiding: Gaussian blur of the face box or filled disks over facial
//! landmarks, with the eye boxes copied back from the input afterwards.

use serde::{Deserialize, Serialize};

use crate::detections::{DetectionRecord, LandmarkSet, Provenance};
use crate::error::{Error, Result};
use crate::frame::{BoundingBox, Frame, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HideMode {
    Blur,
    Mask,
}

impl std::str::FromStr for HideMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blur" => Ok(HideMode::Blur),
            "mask" => Ok(HideMode::Mask),
            other => Err(Error::invalid(format!("unknown hide mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for HideMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HideMode::Blur => "blur",
            HideMode::Mask => "mask",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HideConfig {
    pub mode: HideMode,
    pub blur_level: u32,
    pub point_size: u32,
    pub mask_color: Rgb,
    pub preserve_eyes: bool,
}

impl Default for HideConfig {
    fn default() -> Self {
        HideConfig {
            mode: HideMode::Mask,
            blur_level: 30,
            point_size: 26,
            mask_color: Rgb::WHITE,
            preserve_eyes: true,
        }
    }
}

impl HideConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blur_level == 0 {
            return Err(Error::Config("blur_level must be at least 1".into()));
        }
        if self.point_size == 0 {
            return Err(Error::Config("point_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of a hide operation. `skipped` is set when the requested region
/// did not touch the frame and the input was returned unchanged.
#[derive(Debug, Clone)]
pub struct Hidden {
    pub frame: Frame,
    pub skipped: bool,
}

/// Normalised 1-D Gaussian with side `2 * level + 1` and sigma `level / 2`.
pub fn gaussian_kernel(level: u32) -> Vec<f32> {
    let radius = level as i64;
    let sigma = f64::from(level) / 2.0;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| (w / total) as f32).collect()
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`.. 2 1 | 0 1 2 .. n-1 | n-2 ..`), folding as many times as needed.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Blur a `w x h` interleaved sub-image in place of `out`, returning unrounded
/// values. Borders reflect at the sub-image edges.
pub(crate) fn blur_plane(src: &[u8], w: usize, h: usize, channels: usize, kernel: &[f32]) -> Vec<f32> {
    let radius = (kernel.len() / 2) as i64;
    let mut tmp = vec![0f32; w * h * channels];
    // Horizontal pass over a padded copy of each row.
    let padded_w = w + 2 * radius as usize;
    let mut padded = vec![0f32; padded_w * channels];
    for y in 0..h {
        let row = &src[y * w * channels..(y + 1) * w * channels];
        for px in 0..padded_w {
            let sx = reflect(px as i64 - radius, w);
            for c in 0..channels {
                padded[px * channels + c] = f32::from(row[sx * channels + c]);
            }
        }
        let out = &mut tmp[y * w * channels..(y + 1) * w * channels];
        for x in 0..w {
            let window = &padded[x * channels..(x + kernel.len()) * channels];
            for c in 0..channels {
                let mut acc = 0f32;
                for (k, wgt) in kernel.iter().enumerate() {
                    acc += window[k * channels + c] * wgt;
                }
                out[x * channels + c] = acc;
            }
        }
    }
    // Vertical pass: accumulate whole rows so the inner loop runs over
    // contiguous memory.
    let stride = w * channels;
    let mut out = vec![0f32; w * h * channels];
    for y in 0..h {
        let dst = &mut out[y * stride..(y + 1) * stride];
        for (k, wgt) in kernel.iter().enumerate() {
            let sy = reflect(y as i64 + k as i64 - radius, h);
            let srow = &tmp[sy * stride..(sy + 1) * stride];
            for (d, s) in dst.iter_mut().zip(srow) {
                *d += s * wgt;
            }
        }
    }
    out
}

fn restore_boxes(out: &mut Frame, original: &Frame, boxes: &[BoundingBox]) {
    let ch = original.channels();
    for b in boxes {
        if let Some((x0, y0, x1, y1)) = b.clip(original.width(), original.height()) {
            for y in y0..y1 {
                let (s, e) = (original.offset(x0, y), original.offset(x1 - 1, y) + ch);
                out.data_mut()[s..e].copy_from_slice(&original.data()[s..e]);
            }
        }
    }
}

/// Gaussian-blur the face box (clipped to the frame), then copy the eye
/// boxes back from the input. A face box entirely outside the frame leaves
/// the frame untouched and sets `skipped`.
pub fn blur_face(frame: &Frame, face: &BoundingBox, eyes: &[BoundingBox], level: u32) -> Result<Hidden> {
    if level == 0 {
        return Err(Error::invalid("blur level must be at least 1"));
    }
    let Some((x0, y0, x1, y1)) = face.clip(frame.width(), frame.height()) else {
        log::warn!("frame {}: face box {face:?} lies outside the frame, not blurred", frame.index);
        return Ok(Hidden {
            frame: frame.clone(),
            skipped: true,
        });
    };
    let ch = frame.channels();
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let mut sub = Vec::with_capacity(w * h * ch);
    for y in y0..y1 {
        let s = frame.offset(x0, y);
        sub.extend_from_slice(&frame.data()[s..s + w * ch]);
    }
    let blurred = blur_plane(&sub, w, h, ch, &gaussian_kernel(level));
    let mut out = frame.clone();
    for (row, y) in (y0..y1).enumerate() {
        let s = out.offset(x0, y);
        let dst = &mut out.data_mut()[s..s + w * ch];
        for (d, v) in dst.iter_mut().zip(&blurred[row * w * ch..(row + 1) * w * ch]) {
            *d = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    restore_boxes(&mut out, frame, eyes);
    Ok(Hidden {
        frame: out,
        skipped: false,
    })
}

/// Paint a filled disk of diameter `point_size` (radius `point_size / 2`,
/// rounded down) at every landmark, then copy the eye boxes back.
pub fn mask_face(
    frame: &Frame,
    landmarks: &LandmarkSet,
    eyes: &[BoundingBox],
    point_size: u32,
    color: Rgb,
) -> Result<Frame> {
    if landmarks.is_empty() {
        return Err(Error::invalid("cannot mask with an empty landmark set"));
    }
    if point_size == 0 {
        return Err(Error::invalid("point size must be at least 1"));
    }
    let mut out = frame.clone();
    let radius = f64::from(point_size / 2);
    let r2 = radius * radius;
    let (fw, fh) = (i64::from(frame.width()), i64::from(frame.height()));
    let paint = paint_value(frame, color);
    let ch = frame.channels();
    for &(lx, ly) in landmarks.points() {
        if !lx.is_finite() || !ly.is_finite() {
            continue;
        }
        let ys = ((ly - radius).ceil() as i64).max(0);
        let ye = ((ly + radius).floor() as i64).min(fh - 1);
        for y in ys..=ye {
            let dy = y as f64 - ly;
            let span = (r2 - dy * dy).max(0.0).sqrt();
            let mut xs = ((lx - span).ceil() as i64).max(0);
            let mut xe = ((lx + span).floor() as i64).min(fw - 1);
            // Float sqrt can land one pixel off; settle the ends exactly.
            let inside = |x: i64| {
                let dx = x as f64 - lx;
                dx * dx + dy * dy <= r2
            };
            while xs > 0 && inside(xs - 1) {
                xs -= 1;
            }
            while xs <= xe && !inside(xs) {
                xs += 1;
            }
            while xe < fw - 1 && inside(xe + 1) {
                xe += 1;
            }
            while xe >= xs && !inside(xe) {
                xe -= 1;
            }
            if xs > xe {
                continue;
            }
            let s = out.offset(xs as u32, y as u32);
            let e = out.offset(xe as u32, y as u32) + ch;
            for px in out.data_mut()[s..e].chunks_exact_mut(ch) {
                px.copy_from_slice(&paint[..ch]);
            }
        }
    }
    restore_boxes(&mut out, frame, eyes);
    Ok(out)
}

fn paint_value(frame: &Frame, color: Rgb) -> [u8; 3] {
    match frame.channels() {
        1 => {
            let scaled = 299 * u32::from(color.0) + 587 * u32::from(color.1) + 114 * u32::from(color.2);
            [((scaled + 500) / 1000) as u8, 0, 0]
        }
        _ => [color.0, color.1, color.2],
    }
}

fn fill_box(frame: &mut Frame, b: &BoundingBox, color: Rgb) {
    let paint = paint_value(frame, color);
    let ch = frame.channels();
    if let Some((x0, y0, x1, y1)) = b.clip(frame.width(), frame.height()) {
        for y in y0..y1 {
            let (s, e) = (frame.offset(x0, y), frame.offset(x1 - 1, y) + ch);
            for px in frame.data_mut()[s..e].chunks_exact_mut(ch) {
                px.copy_from_slice(&paint[..ch]);
            }
        }
    }
}

/// Hide the face described by `detection` according to `cfg`.
///
/// Without any detection the whole frame is hidden. In mask mode a record
/// with a face box but no landmarks has its whole face box filled; in blur
/// mode a record with landmarks but no face box blurs the landmarks'
/// enclosing box.
pub fn hide(frame: &Frame, detection: &DetectionRecord, cfg: &HideConfig) -> Result<Frame> {
    cfg.validate()?;
    let eyes: &[BoundingBox] = if cfg.preserve_eyes { &detection.eyes } else { &[] };
    if detection.provenance == Provenance::None {
        return Ok(match cfg.mode {
            HideMode::Blur => blur_face(frame, &frame.bounds(), &[], cfg.blur_level)?.frame,
            HideMode::Mask => {
                let mut out = frame.clone();
                fill_box(&mut out, &frame.bounds(), cfg.mask_color);
                out
            }
        });
    }
    match cfg.mode {
        HideMode::Mask => match &detection.landmarks {
            Some(lm) if !lm.is_empty() => mask_face(frame, lm, eyes, cfg.point_size, cfg.mask_color),
            _ => {
                let face = detection
                    .face
                    .ok_or_else(|| Error::invalid("detection has neither landmarks nor a face box"))?;
                let mut out = frame.clone();
                fill_box(&mut out, &face, cfg.mask_color);
                restore_boxes(&mut out, frame, eyes);
                Ok(out)
            }
        },
        HideMode::Blur => {
            let face = match detection.face {
                Some(f) => f,
                None => detection
                    .landmarks
                    .as_ref()
                    .and_then(|lm| BoundingBox::enclosing(lm.points()))
                    .ok_or_else(|| Error::invalid("detection has neither a face box nor landmarks"))?,
            };
            Ok(blur_face(frame, &face, eyes, cfg.blur_level)?.frame)
        }
    }
}
