use crate::error::{Error, Result};
use crate::frame::{Frame, PixelFormat};

/// Single-channel luminance raster with values in `[0, 255]`.
///
/// Values are `f64` so that resampled grids keep their fractional part;
/// frames converted with [`to_grayscale`] hold whole numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty image {width}x{height}")));
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::invalid(format!("luminance {v} outside [0, 255]")));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn from_u8(width: u32, height: u32, data: &[u8]) -> Result<Self> {
        GrayImage::new(width, height, data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }
}

/// BT.601 luma, rounded half up. Gray frames pass through unchanged.
pub fn to_grayscale(frame: &Frame) -> GrayImage {
    let data = match frame.format() {
        PixelFormat::Gray => frame.data().iter().map(|&v| f64::from(v)).collect(),
        PixelFormat::Rgb => frame
            .data()
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .collect(),
    };
    GrayImage {
        width: frame.width(),
        height: frame.height(),
        data,
    }
}

#[inline]
fn luma(r: u8, g: u8, b: u8) -> f64 {
    // Integer form of 0.299 R + 0.587 G + 0.114 B so that x.5 rounds up
    // exactly instead of depending on binary float representation.
    let scaled = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
    f64::from((scaled + 500) / 1000)
}

/// Two-tap interpolation weights along one axis, in units of `1 / (2 * out)`.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: u64,
    w1: u64,
}

/// Pixel-centre aligned source taps: output `d` samples the source at
/// `(d + 0.5) * input / output - 0.5`, clamped to the valid range.
fn axis_taps(input: u32, output: u32) -> Vec<Tap> {
    let (input, output) = (i64::from(input), i64::from(output));
    let den = 2 * output;
    (0..output)
        .map(|d| {
            let num = ((2 * d + 1) * input - output).max(0);
            let (i0, frac) = (num / den, num % den);
            if i0 >= input - 1 {
                let last = (input - 1) as usize;
                Tap {
                    i0: last,
                    i1: last,
                    w0: den as u64,
                    w1: 0,
                }
            } else {
                Tap {
                    i0: i0 as usize,
                    i1: i0 as usize + 1,
                    w0: (den - frac) as u64,
                    w1: frac as u64,
                }
            }
        })
        .collect()
}

/// Bilinear resample scaled by the common weight denominator.
///
/// The returned values equal the resampled image times `scale`. Weights are
/// integers, so for whole-number inputs every value is an exact integer and
/// comparisons between grid cells are free of rounding.
pub(crate) fn resize_scaled(img: &GrayImage, w: u32, h: u32) -> (Vec<f64>, f64) {
    let xt = axis_taps(img.width, w);
    let yt = axis_taps(img.height, h);
    let src_w = img.width as usize;
    let mut out = Vec::with_capacity(w as usize * h as usize);
    let mut row0 = vec![0.0; w as usize];
    let mut row1 = vec![0.0; w as usize];
    let horizontal = |y: usize, dst: &mut [f64]| {
        let row = &img.data[y * src_w..(y + 1) * src_w];
        for (o, t) in dst.iter_mut().zip(&xt) {
            *o = row[t.i0] * t.w0 as f64 + row[t.i1] * t.w1 as f64;
        }
    };
    for t in &yt {
        horizontal(t.i0, &mut row0);
        horizontal(t.i1, &mut row1);
        out.extend(
            row0.iter()
                .zip(&row1)
                .map(|(a, b)| a * t.w0 as f64 + b * t.w1 as f64),
        );
    }
    let scale = (4 * u64::from(w) * u64::from(h)) as f64;
    (out, scale)
}

/// Bilinear resize with pixel-centre alignment. Same-size resizes return the
/// input unchanged.
pub fn resize(img: &GrayImage, w: u32, h: u32) -> Result<GrayImage> {
    if w == 0 || h == 0 {
        return Err(Error::invalid(format!("resize target {w}x{h} is empty")));
    }
    let (scaled, scale) = resize_scaled(img, w, h);
    Ok(GrayImage {
        width: w,
        height: h,
        data: scaled.into_iter().map(|v| v / scale).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_rgb_is_255() {
        let f = Frame::new(1, 1, PixelFormat::Rgb, vec![255, 255, 255]).unwrap();
        assert_eq!(to_grayscale(&f).data(), &[255.0]);
    }

    #[test]
    fn gray_passes_through() {
        let f = Frame::new(2, 2, PixelFormat::Gray, vec![0, 17, 128, 255]).unwrap();
        assert_eq!(to_grayscale(&f).data(), &[0.0, 17.0, 128.0, 255.0]);
    }

    #[test]
    fn mixed_rgb_luma() {
        // 0.299*100 + 0.587*200 + 0.114*50 = 29.9 + 117.4 + 5.7 = 153.0
        let f = Frame::new(1, 1, PixelFormat::Rgb, vec![100, 200, 50]).unwrap();
        assert_eq!(to_grayscale(&f).data(), &[153.0]);
    }

    #[test]
    fn luma_rounds_half_up() {
        // 0.299 * 5 = 1.495 -> 1; 0.587 * 5 = 2.935 -> 3; 0.114 * 5 + 0.299 * 5 = 2.065 -> 2
        assert_eq!(luma(5, 0, 0), 1.0);
        assert_eq!(luma(0, 5, 0), 3.0);
        // 0.299 * 1 + 0.587 * 1 + 0.114 * 0 = 0.886 -> 1
        assert_eq!(luma(1, 1, 0), 1.0);
        // 0.114 * 5 = 0.57 -> 1, 0.114 * 4 = 0.456 -> 0
        assert_eq!(luma(0, 0, 5), 1.0);
        assert_eq!(luma(0, 0, 4), 0.0);
    }

    #[test]
    fn same_size_is_identity() {
        let img = GrayImage::new(3, 2, vec![1.0, 2.5, 3.0, 250.0, 0.0, 7.0]).unwrap();
        assert_eq!(resize(&img, 3, 2).unwrap(), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = GrayImage::new(7, 5, vec![93.0; 35]).unwrap();
        for (w, h) in [(1, 1), (3, 9), (13, 12), (40, 2)] {
            let r = resize(&img, w, h).unwrap();
            assert!(r.data().iter().all(|&v| v == 93.0), "{w}x{h}");
        }
    }

    #[test]
    fn row_downsample_matches_hand_bilinear() {
        // Source centres for a 4 -> 2 downsample sit at x = 0.5 and x = 2.5,
        // so each output averages one adjacent pair.
        let img = GrayImage::new(4, 1, vec![0.0, 100.0, 200.0, 255.0]).unwrap();
        assert_eq!(resize(&img, 2, 1).unwrap().data(), &[50.0, 227.5]);
    }

    #[test]
    fn zero_target_rejected() {
        let img = GrayImage::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(resize(&img, 0, 2).is_err());
        assert!(resize(&img, 2, 0).is_err());
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(GrayImage::new(1, 1, vec![256.0]).is_err());
        assert!(GrayImage::new(1, 1, vec![-1.0]).is_err());
        assert!(GrayImage::new(2, 1, vec![1.0]).is_err());
    }
}
