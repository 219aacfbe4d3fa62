//! Valley (inverted-peak) detection on smoothed distance series.

use super::SmoothingConfig;

/// Whether `i` is a local minimum within `sep` samples: strictly below every
/// earlier neighbour, not above any later one (so the first sample of a flat
/// bottom wins), and not at either end of the series.
fn is_local_min(s: &[f64], i: usize, sep: usize) -> bool {
    if i == 0 || i + 1 >= s.len() {
        return false;
    }
    let lo = i.saturating_sub(sep.max(1));
    let hi = (i + sep.max(1)).min(s.len() - 1);
    s[lo..i].iter().all(|&v| v > s[i]) && s[i + 1..=hi].iter().all(|&v| v >= s[i])
}

/// Prominence of the inverted peak at `i`: how far the series rises on each
/// side before reaching a lower point (or the end), taking the smaller side.
pub fn prominence(s: &[f64], i: usize) -> f64 {
    let v = s[i];
    let side = |range: &mut dyn Iterator<Item = usize>| {
        let mut top = v;
        for j in range {
            if s[j] < v {
                break;
            }
            top = top.max(s[j]);
        }
        top
    };
    let left = side(&mut (0..i).rev());
    let right = side(&mut (i + 1..s.len()));
    left.min(right) - v
}

/// Valleys of a complete series: local minima (see the separation rule
/// above) whose prominence is at least `cfg.valley_prominence` times the
/// series range and whose value does not exceed `threshold`. Indices come
/// back in increasing order.
pub fn find_valleys(smoothed: &[f64], threshold: f64, cfg: &SmoothingConfig) -> Vec<usize> {
    if smoothed.len() < 3 {
        return Vec::new();
    }
    let (min, max) = smoothed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let needed = cfg.valley_prominence * (max - min);
    (1..smoothed.len() - 1)
        .filter(|&i| smoothed[i] <= threshold)
        .filter(|&i| is_local_min(smoothed, i, cfg.valley_min_separation))
        .filter(|&i| {
            // A flat bottom that runs into the end of the series never rises
            // again, so it is not a valley.
            let run_end = (i..smoothed.len()).take_while(|&j| smoothed[j] == smoothed[i]).last().unwrap();
            run_end + 1 < smoothed.len()
        })
        .filter(|&i| prominence(smoothed, i) >= needed)
        .collect()
}

/// Causal valley confirmation for the streaming detector.
///
/// Fed one smoothed value at a time. Once an excursion above the threshold
/// has been seen, the first sample `v` after the excursion peak that is a
/// local minimum within `valley_min_separation` and sits at least
/// `valley_prominence` x (observed range) below that peak is confirmed, as
/// soon as the samples up to `v + valley_min_separation` are known.
#[derive(Debug, Clone)]
pub struct ValleyTracker {
    sep: usize,
    prominence: f64,
    values: Vec<f64>,
    min: f64,
    max: f64,
    excursion: Option<Excursion>,
    /// Valleys must come after this index (the current anchor).
    floor: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Excursion {
    peak_index: usize,
    peak: f64,
}

impl ValleyTracker {
    pub fn new(cfg: &SmoothingConfig) -> Self {
        ValleyTracker {
            sep: cfg.valley_min_separation.max(1),
            prominence: cfg.valley_prominence,
            values: Vec::new(),
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            excursion: None,
            floor: None,
        }
    }

    pub fn excursion_seen(&self) -> bool {
        self.excursion.is_some()
    }

    /// Restrict future valleys to indices after `anchor`.
    pub fn set_anchor(&mut self, anchor: usize) {
        self.floor = Some(anchor);
    }

    /// Append the next smoothed value; returns a newly confirmed valley.
    pub fn push(&mut self, value: f64, flagged: bool) -> Option<usize> {
        let e = self.values.len();
        self.values.push(value);
        self.min = self.min.min(value);
        self.max = self.max.max(value);
        if flagged && self.excursion.is_none() {
            self.excursion = Some(Excursion {
                peak_index: e,
                peak: value,
            });
        }
        if let Some(x) = self.excursion.as_mut() {
            if value > x.peak {
                x.peak = value;
                x.peak_index = e;
            }
        }

        let x = self.excursion?;
        let v = e.checked_sub(self.sep)?;
        if v <= x.peak_index || self.floor.is_some_and(|f| v <= f) {
            return None;
        }
        if !is_local_min(&self.values, v, self.sep) {
            return None;
        }
        // The excursion peak lies before v; the drop from it must be large
        // enough relative to everything seen so far.
        let drop = x.peak - self.values[v];
        if drop < self.prominence * (self.max - self.min) || drop <= 0.0 {
            return None;
        }
        self.excursion = None;
        self.floor = Some(v);
        Some(v)
    }
}
