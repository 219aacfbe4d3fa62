//! Reference implementations written straight from the definitions, used
//! to check the library bit for bit.

#![allow(dead_code)]

use hashproctor_core::{Frame, PixelFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random RGB image with blocky structure plus per-pixel noise.
pub fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Frame {
    let block = rng.gen_range(1..=8u32);
    let bw = w.div_ceil(block) as usize;
    let base: Vec<[u8; 3]> = (0..bw * h.div_ceil(block) as usize).map(|_| rng.gen()).collect();
    let noise = rng.gen_range(0..=40i16);
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let b = base[(y / block) as usize * bw + (x / block) as usize];
            for c in b {
                let n = if noise > 0 { rng.gen_range(-noise..=noise) } else { 0 };
                data.push((i16::from(c) + n).clamp(0, 255) as u8);
            }
        }
    }
    Frame::new(w, h, PixelFormat::Rgb, data).unwrap()
}

/// Luma in integer arithmetic: round(0.299 R + 0.587 G + 0.114 B), halves up.
pub fn gray(frame: &Frame) -> Vec<i64> {
    match frame.format() {
        PixelFormat::Gray => frame.data().iter().map(|&v| i64::from(v)).collect(),
        PixelFormat::Rgb => frame
            .data()
            .chunks(3)
            .map(|p| {
                let s = 299 * i64::from(p[0]) + 587 * i64::from(p[1]) + 114 * i64::from(p[2]);
                // floor(s / 1000 + 1/2)
                (2 * s + 1000).div_euclid(2000)
            })
            .collect(),
    }
}

/// Bilinear sample of the source at the rational coordinate `num / den`
/// along one axis: returns (lower index, upper index, weight of upper as a
/// numerator over `den`).
fn axis_sample(num: i128, den: i128, len: i128) -> (usize, usize, i128) {
    let hi = (len - 1) * den;
    let pos = num.clamp(0, hi);
    let i0 = pos / den;
    let frac = pos - i0 * den;
    let i1 = (i0 + 1).min(len - 1);
    (i0 as usize, i1 as usize, frac)
}

/// Pixel-centre bilinear resize. Output pixel `(ox, oy)` samples source
/// coordinate `((ox + 1/2) * w / ow - 1/2, (oy + 1/2) * h / oh - 1/2)`.
/// Values come back multiplied by `(2 ow) (2 oh)`, so they are exact.
pub fn resize(img: &[i64], w: u32, h: u32, ow: u32, oh: u32) -> Vec<i128> {
    let (w, h, ow, oh) = (i128::from(w), i128::from(h), i128::from(ow), i128::from(oh));
    let (dx, dy) = (2 * ow, 2 * oh);
    let px = |x: usize, y: usize| i128::from(img[y * w as usize + x]);
    let mut out = Vec::new();
    for oy in 0..oh {
        let (y0, y1, fy) = axis_sample((2 * oy + 1) * h - oh, dy, h);
        for ox in 0..ow {
            let (x0, x1, fx) = axis_sample((2 * ox + 1) * w - ow, dx, w);
            let top = px(x0, y0) * (dx - fx) + px(x1, y0) * fx;
            let bottom = px(x0, y1) * (dx - fx) + px(x1, y1) * fx;
            out.push(top * (dy - fy) + bottom * fy);
        }
    }
    out
}

pub fn dhash(frame: &Frame, n: u32) -> Vec<bool> {
    let g = resize(&gray(frame), frame.width(), frame.height(), n + 1, n);
    let n = n as usize;
    let mut bits = Vec::new();
    for r in 0..n {
        for c in 0..n {
            bits.push(g[r * (n + 1) + c] < g[r * (n + 1) + c + 1]);
        }
    }
    bits
}

pub fn ahash(frame: &Frame, n: u32) -> Vec<bool> {
    let g = resize(&gray(frame), frame.width(), frame.height(), n, n);
    let sum: i128 = g.iter().sum();
    let count = g.len() as i128;
    g.iter().map(|&v| v * count > sum).collect()
}

/// Textbook 2-D DCT-II of the `4n x 4n` grid, top-left `n x n` block,
/// thresholded at the median of the block without its DC term.
pub fn phash(frame: &Frame, n: u32) -> Vec<bool> {
    let m = 4 * n as usize;
    let g = resize(&gray(frame), frame.width(), frame.height(), m as u32, m as u32);
    let scale = (4 * m * m) as f64;
    let x: Vec<f64> = g.iter().map(|&v| v as f64 / scale).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let n = n as usize;
    let cos = |k: usize, i: usize| (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * m) as f64).cos();
    let table: Vec<Vec<f64>> = (0..n).map(|k| (0..m).map(|i| cos(k, i)).collect()).collect();
    let mut coeffs = Vec::with_capacity(n * n);
    for u in 0..n {
        for v in 0..n {
            let mut acc = 0.0;
            for yy in 0..m {
                for xx in 0..m {
                    // Removing the mean only changes the DC term.
                    acc += (x[yy * m + xx] - mean) * table[u][yy] * table[v][xx];
                }
            }
            coeffs.push(acc);
        }
    }
    // Exact zeros in real arithmetic, up to rounding.
    let peak = coeffs[1..].iter().fold(0.0f64, |a, c| a.max(c.abs()));
    for c in &mut coeffs[1..] {
        if c.abs() <= peak * 1e-9 {
            *c = 0.0;
        }
    }
    coeffs[0] = mean * (m * m) as f64;
    let mut ac = coeffs[1..].to_vec();
    ac.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ac.len();
    let median = if k % 2 == 1 { ac[k / 2] } else { (ac[k / 2 - 1] + ac[k / 2]) / 2.0 };
    coeffs.iter().map(|&c| c > median).collect()
}

pub fn hamming(a: &[bool], b: &[bool]) -> u32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// Largest distance over every unordered pair, by exhaustive search.
pub fn max_pairwise(bits: &[Vec<bool>]) -> u32 {
    let mut best = 0;
    for i in 0..bits.len() {
        for j in 0..bits.len() {
            if i != j {
                best = best.max(hamming(&bits[i], &bits[j]));
            }
        }
    }
    best
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Savitzky-Golay by brute force: at each sample, fit a polynomial of
/// degree `min(p, len - 1)` to the samples within `w / 2` (truncated at the
/// ends) through the normal equations, and evaluate it at the sample.
pub fn sg(series: &[f64], w: usize, p: usize) -> Vec<f64> {
    let half = w / 2;
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(series.len() - 1);
            let deg = p.min(hi - lo);
            // Offsets scaled to [-1, 1] keep the normal equations tame.
            let s = half.max(1) as f64;
            let xs: Vec<f64> = (lo..=hi).map(|j| (j as f64 - i as f64) / s).collect();
            let ys = &series[lo..=hi];
            let mut ata = vec![vec![0.0; deg + 1]; deg + 1];
            let mut aty = vec![0.0; deg + 1];
            for (x, y) in xs.iter().zip(ys) {
                for r in 0..=deg {
                    for c in 0..=deg {
                        ata[r][c] += x.powi((r + c) as i32);
                    }
                    aty[r] += x.powi(r as i32) * y;
                }
            }
            solve(ata, aty)[0]
        })
        .collect()
}
