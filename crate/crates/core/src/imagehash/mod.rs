//! Perceptual hashing: grayscale preprocessing, aHash/dHash/pHash and
//! Hamming distance.
//!
//! All three algorithms downsample with [`resize`] and threshold the grid.
//! They operate on the unnormalised grid from the resampler, which is exact
//! for whole-number input, so the same image always hashes to the same bits.

mod gray;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use gray::{resize, to_grayscale, GrayImage};

use crate::error::{Error, Result};
use crate::frame::Frame;
use gray::resize_scaled;

pub const DEFAULT_HASH_SIZE: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashAlgorithm {
    Ahash,
    Dhash,
    Phash,
}

impl HashAlgorithm {
    pub const ALL: [HashAlgorithm; 3] = [HashAlgorithm::Ahash, HashAlgorithm::Dhash, HashAlgorithm::Phash];

    fn prefix(self) -> char {
        match self {
            HashAlgorithm::Ahash => 'a',
            HashAlgorithm::Dhash => 'd',
            HashAlgorithm::Phash => 'p',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HashAlgorithm::Ahash => "ahash",
            HashAlgorithm::Dhash => "dhash",
            HashAlgorithm::Phash => "phash",
        }
    }
}

impl fmt::Display for HashAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HashAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ahash" | "a" => Ok(HashAlgorithm::Ahash),
            "dhash" | "d" => Ok(HashAlgorithm::Dhash),
            "phash" | "p" => Ok(HashAlgorithm::Phash),
            other => Err(Error::invalid(format!("unknown hash algorithm {other:?}"))),
        }
    }
}

/// Algorithm plus hash size; serialised as `{"algo": "dhash", "size": 12}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashConfig {
    pub algo: HashAlgorithm,
    pub size: u32,
}

impl Default for HashConfig {
    fn default() -> Self {
        HashConfig {
            algo: HashAlgorithm::Dhash,
            size: DEFAULT_HASH_SIZE,
        }
    }
}

impl HashConfig {
    pub fn new(algo: HashAlgorithm, size: u32) -> Result<Self> {
        check_size(size)?;
        Ok(HashConfig { algo, size })
    }

    pub fn validate(&self) -> Result<()> {
        check_size(self.size)
    }

    pub fn hash_image(&self, img: &GrayImage) -> Result<PerceptualHash> {
        match self.algo {
            HashAlgorithm::Ahash => ahash(img, self.size),
            HashAlgorithm::Dhash => dhash(img, self.size),
            HashAlgorithm::Phash => phash(img, self.size),
        }
    }

    pub fn hash_frame(&self, frame: &Frame) -> Result<PerceptualHash> {
        self.hash_image(&to_grayscale(frame))
    }

    /// Largest possible Hamming distance, `size²`.
    pub fn max_distance(&self) -> u32 {
        self.size * self.size
    }
}

fn check_size(size: u32) -> Result<()> {
    if size < 2 {
        return Err(Error::invalid(format!("hash size must be at least 2, got {size}")));
    }
    // Keeps every intermediate of the exact resize well inside f64 precision.
    if size > 64 {
        return Err(Error::invalid(format!("hash size {size} exceeds 64")));
    }
    Ok(())
}

/// A `size²`-bit fingerprint. Bit `i` is grid cell `(i / size, i % size)`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PerceptualHash {
    algo: HashAlgorithm,
    size: u32,
    words: Vec<u64>,
}

impl PerceptualHash {
    pub fn from_bits<I: IntoIterator<Item = bool>>(algo: HashAlgorithm, size: u32, bits: I) -> Result<Self> {
        check_size(size)?;
        let len = (size * size) as usize;
        let mut words = vec![0u64; len.div_ceil(64)];
        let mut n = 0;
        for (i, b) in bits.into_iter().enumerate() {
            if i >= len {
                return Err(Error::invalid(format!("more than {len} bits for hash size {size}")));
            }
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
            n = i + 1;
        }
        if n != len {
            return Err(Error::invalid(format!("{n} bits for hash size {size}, need {len}")));
        }
        Ok(PerceptualHash { algo, size, words })
    }

    pub fn algorithm(&self) -> HashAlgorithm {
        self.algo
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn config(&self) -> HashConfig {
        HashConfig {
            algo: self.algo,
            size: self.size,
        }
    }

    pub fn len(&self) -> usize {
        (self.size * self.size) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len(), "bit {i} out of range");
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(|i| self.bit(i))
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Every bit flipped.
    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        let tail = self.len() % 64;
        if tail != 0 {
            *words.last_mut().unwrap() &= (1u64 << tail) - 1;
        }
        PerceptualHash {
            algo: self.algo,
            size: self.size,
            words,
        }
    }

    /// Copy with bit `i` flipped.
    pub fn with_flipped(&self, i: usize) -> Self {
        assert!(i < self.len(), "bit {i} out of range");
        let mut out = self.clone();
        out.words[i / 64] ^= 1 << (i % 64);
        out
    }
}

impl fmt::Debug for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PerceptualHash({self})")
    }
}

/// `d:12:<hex>`: algorithm prefix, size, then the bit string as lowercase
/// hex, first bit in the most significant position, zero-padded at the end
/// to a whole nibble.
impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:", self.algo.prefix(), self.size)?;
        let len = self.len();
        for start in (0..len).step_by(4) {
            let nibble = (0..4).fold(0u8, |acc, k| {
                let i = start + k;
                (acc << 1) | u8::from(i < len && self.bit(i))
            });
            write!(f, "{nibble:x}")?;
        }
        Ok(())
    }
}

impl FromStr for PerceptualHash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed hash string {s:?}"));
        let mut parts = s.splitn(3, ':');
        let (algo, size, hex) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(n), Some(h)) => (a, n, h),
            _ => return Err(bad()),
        };
        let algo: HashAlgorithm = algo.parse()?;
        let size: u32 = size.parse().map_err(|_| bad())?;
        check_size(size)?;
        let len = (size * size) as usize;
        if hex.len() != len.div_ceil(4) {
            return Err(bad());
        }
        let mut bits = Vec::with_capacity(len + 3);
        for c in hex.chars() {
            if c.is_ascii_uppercase() {
                return Err(bad());
            }
            let v = c.to_digit(16).ok_or_else(bad)?;
            bits.extend((0..4).rev().map(|k| v >> k & 1 == 1));
        }
        if bits[len..].iter().any(|&b| b) {
            return Err(bad());
        }
        bits.truncate(len);
        PerceptualHash::from_bits(algo, size, bits)
    }
}

impl Serialize for PerceptualHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PerceptualHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Difference hash: bit set where a cell is darker than its right neighbour.
pub fn dhash(img: &GrayImage, size: u32) -> Result<PerceptualHash> {
    check_size(size)?;
    let n = size as usize;
    let (grid, _) = resize_scaled(img, size + 1, size);
    let bits = (0..n).flat_map(|r| {
        let row = &grid[r * (n + 1)..(r + 1) * (n + 1)];
        (0..n).map(move |c| row[c] < row[c + 1])
    });
    PerceptualHash::from_bits(HashAlgorithm::Dhash, size, bits)
}

/// Average hash: bit set where a cell is strictly brighter than the mean.
pub fn ahash(img: &GrayImage, size: u32) -> Result<PerceptualHash> {
    check_size(size)?;
    let (grid, _) = resize_scaled(img, size, size);
    let count = grid.len() as f64;
    let sum: f64 = grid.iter().sum();
    // v > sum / count without the division.
    PerceptualHash::from_bits(HashAlgorithm::Ahash, size, grid.iter().map(|&v| v * count > sum))
}

/// DCT hash: 2-D DCT-II of a `4N x 4N` downsample, low-frequency `N x N`
/// block thresholded at the median of its AC coefficients.
///
/// The unnormalised transform is used (`X[u][v] = Σ x cos(..) cos(..)`).
/// AC terms are computed on the mean-centred grid so that flat regions give
/// exact zeros; the DC term is the plain sum.
pub fn phash(img: &GrayImage, size: u32) -> Result<PerceptualHash> {
    check_size(size)?;
    let n = size as usize;
    let m = 4 * n;
    let (grid, _) = resize_scaled(img, m as u32, m as u32);
    let count = grid.len() as f64;
    let sum: f64 = grid.iter().sum();
    // Scaled by `count` to stay integral: count * (v - mean).
    let centred: Vec<f64> = grid.iter().map(|&v| v * count - sum).collect();

    let cos: Vec<f64> = (0..n)
        .flat_map(|k| {
            (0..m).map(move |x| {
                (std::f64::consts::PI * (2 * x + 1) as f64 * k as f64 / (2 * m) as f64).cos()
            })
        })
        .collect();
    let basis = |k: usize| &cos[k * m..(k + 1) * m];

    // Rows first: rowdct[y][v] for the first n column frequencies.
    let mut rowdct = vec![0.0; m * n];
    for y in 0..m {
        let row = &centred[y * m..(y + 1) * m];
        for v in 0..n {
            rowdct[y * n + v] = row.iter().zip(basis(v)).map(|(a, b)| a * b).sum();
        }
    }
    let mut coeffs = vec![0.0; n * n];
    for u in 0..n {
        let bu = basis(u);
        for v in 0..n {
            coeffs[u * n + v] = (0..m).map(|y| rowdct[y * n + v] * bu[y]).sum();
        }
    }
    // Terms that vanish exactly in real arithmetic come out as rounding
    // residue of either sign; zero them so ties at the median are exact.
    let peak = coeffs[1..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    for c in &mut coeffs[1..] {
        if c.abs() <= peak * ZERO_REL {
            *c = 0.0;
        }
    }
    coeffs[0] = sum * count;

    let mut ac: Vec<f64> = coeffs[1..].to_vec();
    ac.sort_by(f64::total_cmp);
    let mid = ac.len() / 2;
    let median = if ac.len() % 2 == 1 {
        ac[mid]
    } else {
        (ac[mid - 1] + ac[mid]) / 2.0
    };
    PerceptualHash::from_bits(HashAlgorithm::Phash, size, coeffs.iter().map(|&c| c > median))
}

/// Relative size below which a DCT coefficient counts as zero.
const ZERO_REL: f64 = 1e-9;

/// Number of differing bits. Hashes must share algorithm and size.
pub fn hamming(a: &PerceptualHash, b: &PerceptualHash) -> Result<u32> {
    if a.algo != b.algo || a.size != b.size {
        return Err(Error::IncompatibleHash {
            left: format!("{}/{}", a.algo, a.size),
            right: format!("{}/{}", b.algo, b.size),
        });
    }
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum())
}
