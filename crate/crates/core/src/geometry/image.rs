use serde::{Deserialize, Serialize};

use super::Vec2;
use crate::{Error, Result};

/// Interleaved RGB image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn pixel(&self, col: usize, row: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, col: usize, row: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = Image::zeros(self.width, self.height);
        for row in 0..self.height {
            for col in 0..self.width {
                out.set_pixel(self.width - 1 - col, row, self.pixel(col, row));
            }
        }
        out
    }

    /// Bilinear sample at continuous pixel coordinates. Locations outside
    /// `[0, width] × [0, height]` return exactly zero; inside, neighbours
    /// clamp to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        if !(x >= 0.0 && y >= 0.0 && x <= self.width as f64 && y <= self.height as f64) {
            return [0.0; 3];
        }
        let u = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let v = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (c0, r0) = (u.floor() as usize, v.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(self.width - 1), (r0 + 1).min(self.height - 1));
        let (fu, fv) = ((u - c0 as f64) as f32, (v - r0 as f64) as f32);
        let (a, b, c, d) = (self.pixel(c0, r0), self.pixel(c1, r0), self.pixel(c0, r1), self.pixel(c1, r1));
        std::array::from_fn(|k| {
            let top = a[k] * (1.0 - fu) + b[k] * fu;
            let bot = c[k] * (1.0 - fu) + d[k] * fu;
            top * (1.0 - fv) + bot * fv
        })
    }
}

/// Axis-aligned pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub center: Vec2,
    pub size: Vec2,
}

impl BBox {
    pub fn from_min_max(min: Vec2, max: Vec2) -> Self {
        Self { center: (min + max) * 0.5, size: max - min }
    }

    pub fn min(&self) -> Vec2 {
        self.center - self.size * 0.5
    }

    pub fn max(&self) -> Vec2 {
        self.center + self.size * 0.5
    }

    pub fn area(&self) -> f64 {
        self.size.x * self.size.y
    }

    /// Closed-interval containment.
    pub fn contains(&self, p: &Vec2) -> bool {
        let (lo, hi) = (self.min(), self.max());
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }

    /// True when the box overlaps `[0, width] × [0, height]` with positive area.
    pub fn intersects_image(&self, width: usize, height: usize) -> bool {
        let (lo, hi) = (self.min(), self.max());
        self.size.x > 0.0 && self.size.y > 0.0 && hi.x > 0.0 && hi.y > 0.0 && lo.x < width as f64 && lo.y < height as f64
    }
}

/// Affine map from crop pixel coordinates to full-image pixel
/// coordinates: `full = scale · crop + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropMapping {
    pub scale: f64,
    pub offset: Vec2,
}

impl CropMapping {
    pub fn to_full(&self, crop: &Vec2) -> Vec2 {
        crop * self.scale + self.offset
    }

    pub fn to_crop(&self, full: &Vec2) -> Vec2 {
        (full - self.offset) / self.scale
    }
}

/// Square crop centred on `b` with side `expansion · max(w, h)`,
/// resampled bilinearly to `out_res × out_res`. Samples falling outside
/// the image are zero.
pub fn crop_transform(image: &Image, b: &BBox, out_res: usize, expansion: f64) -> Result<(Image, CropMapping)> {
    if !(b.size.x > 0.0 && b.size.y > 0.0) {
        return Err(Error::Degenerate(format!("crop box has zero area: size {:?}", b.size.as_slice())));
    }
    if !(expansion > 0.0) || out_res == 0 {
        return Err(Error::InvalidInput("crop expansion and resolution must be positive".into()));
    }
    if !b.intersects_image(image.width, image.height) {
        return Err(Error::InvalidInput("crop box does not intersect the image".into()));
    }
    let side = expansion * b.size.x.max(b.size.y);
    let mapping = CropMapping { scale: side / out_res as f64, offset: b.center - Vec2::new(side, side) * 0.5 };
    let mut out = Image::zeros(out_res, out_res);
    for row in 0..out_res {
        for col in 0..out_res {
            let full = mapping.to_full(&Vec2::new(col as f64 + 0.5, row as f64 + 0.5));
            out.set_pixel(col, row, image.sample_bilinear(full.x, full.y));
        }
    }
    Ok((out, mapping))
}
