//! Raster frames and the small geometry types shared by every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelFormat {
    Gray,
    Rgb,
}

impl PixelFormat {
    pub fn channels(self) -> usize {
        match self {
            PixelFormat::Gray => 1,
            PixelFormat::Rgb => 3,
        }
    }
}

/// An indexed 8-bit raster, interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    /// Seconds since the start of the sequence.
    pub timestamp: f64,
    width: u32,
    height: u32,
    format: PixelFormat,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, format: PixelFormat, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty frame {width}x{height}")));
        }
        let expected = width as usize * height as usize * format.channels();
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "frame buffer holds {} bytes, {width}x{height} {format:?} needs {expected}",
                data.len()
            )));
        }
        Ok(Frame {
            index: 0,
            timestamp: 0.0,
            width,
            height,
            format,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self> {
        let data = std::iter::repeat_n([color.0, color.1, color.2], width as usize * height as usize)
            .flatten()
            .collect();
        Frame::new(width, height, PixelFormat::Rgb, data)
    }

    pub fn with_index(mut self, index: u64, timestamp: f64) -> Self {
        self.index = index;
        self.timestamp = timestamp;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn format(&self) -> PixelFormat {
        self.format
    }

    pub fn channels(&self) -> usize {
        self.format.channels()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Byte offset of pixel `(x, y)`.
    #[inline]
    pub fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels()
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels()]
    }

    pub fn bounds(&self) -> BoundingBox {
        BoundingBox {
            x: 0,
            y: 0,
            w: self.width,
            h: self.height,
        }
    }

    pub fn from_dynamic(img: image::DynamicImage) -> Result<Self> {
        use image::DynamicImage;
        match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Frame::new(w, h, PixelFormat::Gray, g.into_raw())
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Frame::new(w, h, PixelFormat::Rgb, rgb.into_raw())
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Frame::from_dynamic(img)
    }

    /// Decode an in-memory PNG.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
        Frame::from_dynamic(img)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.data,
            self.width,
            self.height,
            self.color_type(),
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: "<memory>".into(),
            source,
        })?;
        Ok(out.into_inner())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width,
            self.height,
            self.color_type(),
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    fn color_type(&self) -> image::ExtendedColorType {
        match self.format {
            PixelFormat::Gray => image::ExtendedColorType::L8,
            PixelFormat::Rgb => image::ExtendedColorType::Rgb8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub const WHITE: Rgb = Rgb(255, 255, 255);
}

impl Default for Rgb {
    fn default() -> Self {
        Rgb::WHITE
    }
}

/// Axis-aligned pixel box; `x`/`y` may lie outside the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x: i32,
    pub y: i32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: i32, y: i32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::invalid(format!("bounding box {w}x{h} is empty")));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    /// Intersection with a `width` x `height` frame as `(x0, y0, x1, y1)`,
    /// half-open; `None` when disjoint.
    pub fn clip(&self, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
        let x0 = i64::from(self.x).max(0);
        let y0 = i64::from(self.y).max(0);
        let x1 = (i64::from(self.x) + i64::from(self.w)).min(i64::from(width));
        let y1 = (i64::from(self.y) + i64::from(self.h)).min(i64::from(height));
        (x0 < x1 && y0 < y1).then_some((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= i64::from(self.x)
            && y >= i64::from(self.y)
            && x < i64::from(self.x) + i64::from(self.w)
            && y < i64::from(self.y) + i64::from(self.h)
    }

    /// Smallest box covering every point, rounded outward.
    pub fn enclosing(points: &[(f64, f64)]) -> Option<Self> {
        let first = points.first()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.0, first.1, first.0, first.1);
        for &(x, y) in points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let (x0, y0) = (x0.floor() as i32, y0.floor() as i32);
        let w = (x1.ceil() as i32 - x0 + 1).max(1) as u32;
        let h = (y1.ceil() as i32 - y0 + 1).max(1) as u32;
        Some(BoundingBox { x: x0, y: y0, w, h })
    }
}

// Sidecar files carry boxes as `[x, y, w, h]`.
impl Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [i64::from(self.x), i64::from(self.y), i64::from(self.w), i64::from(self.h)].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y, w, h] = <[i64; 4]>::deserialize(d)?;
        let bad = |what: &str| serde::de::Error::custom(format!("bounding box {what} out of range"));
        let x = i32::try_from(x).map_err(|_| bad("x"))?;
        let y = i32::try_from(y).map_err(|_| bad("y"))?;
        let w = u32::try_from(w).ok().filter(|&w| w >= 1).ok_or_else(|| bad("width"))?;
        let h = u32::try_from(h).ok().filter(|&h| h >= 1).ok_or_else(|| bad("height"))?;
        Ok(BoundingBox { x, y, w, h })
    }
}
