//! Savitzky–Golay smoothing with truncated windows at the series edges.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Weights `w` such that `Σ w[j] * y[lo + j]` is the value at offset 0 of
/// the least-squares polynomial of degree `order` through samples at
/// integer offsets `lo..=hi`.
///
/// Built from the discrete orthogonal polynomials of the sample offsets
/// (three-term recurrence), which avoids forming the ill-conditioned normal
/// equations.
pub fn fit_weights(lo: i64, hi: i64, order: usize) -> Vec<f64> {
    assert!(lo <= 0 && hi >= 0, "offset range must contain 0");
    let xs: Vec<f64> = (lo..=hi).map(|x| x as f64).collect();
    let order = order.min(xs.len() - 1);
    let mut weights = vec![0.0; xs.len()];
    let mut prev = vec![0.0; xs.len()];
    let mut cur = vec![1.0; xs.len()];
    let (mut prev_at0, mut cur_at0) = (0.0, 1.0);
    let mut prev_norm = 1.0;
    for k in 0..=order {
        let norm: f64 = cur.iter().map(|p| p * p).sum();
        for (w, p) in weights.iter_mut().zip(&cur) {
            *w += cur_at0 * p / norm;
        }
        if k == order {
            break;
        }
        let alpha = xs.iter().zip(&cur).map(|(x, p)| x * p * p).sum::<f64>() / norm;
        let beta = if k == 0 { 0.0 } else { norm / prev_norm };
        let next: Vec<f64> = xs
            .iter()
            .zip(cur.iter().zip(&prev))
            .map(|(x, (c, p))| (x - alpha) * c - beta * p)
            .collect();
        let next_at0 = -alpha * cur_at0 - beta * prev_at0;
        prev = std::mem::replace(&mut cur, next);
        prev_at0 = std::mem::replace(&mut cur_at0, next_at0);
        prev_norm = norm;
    }
    weights
}

/// A reusable smoother for one `(window, order)` pair. Interior weights are
/// computed once; edge weights on first use.
#[derive(Debug, Clone)]
pub struct Smoother {
    window: usize,
    order: usize,
    interior: Vec<f64>,
    edges: HashMap<(i64, i64), Vec<f64>>,
}

impl Smoother {
    pub fn new(window: usize, order: usize) -> Result<Self> {
        if window < 3 || window.is_multiple_of(2) {
            return Err(Error::Config(format!("window must be odd and at least 3, got {window}")));
        }
        if order >= window {
            return Err(Error::Config(format!("polyorder {order} must be below window {window}")));
        }
        let half = (window / 2) as i64;
        Ok(Smoother {
            window,
            order,
            interior: fit_weights(-half, half, order),
            edges: HashMap::new(),
        })
    }

    pub fn half(&self) -> usize {
        self.window / 2
    }

    /// Smoothed value at `i`, using the samples of `series` within half a
    /// window of `i`.
    pub fn at(&mut self, series: &[f64], i: usize) -> f64 {
        let half = self.half();
        let lo = i.min(half);
        let hi = (series.len() - 1 - i).min(half);
        let samples = &series[i - lo..=i + hi];
        let weights = if lo == half && hi == half {
            &self.interior
        } else {
            let order = self.order;
            self.edges
                .entry((lo as i64, hi as i64))
                .or_insert_with(|| fit_weights(-(lo as i64), hi as i64, order))
        };
        weights.iter().zip(samples).map(|(w, y)| w * y).sum()
    }
}

/// Smooth a whole series. Near the edges the window is truncated and the
/// polynomial order capped at the number of samples minus one.
pub fn sg_smooth(series: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    let mut s = Smoother::new(window, order)?;
    if series.is_empty() {
        return Err(Error::invalid("cannot smooth an empty series"));
    }
    Ok((0..series.len()).map(|i| s.at(series, i)).collect())
}
