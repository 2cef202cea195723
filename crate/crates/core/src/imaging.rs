//! Pixel containers and resampling helpers shared by every stage.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Luma weights used for every grayscale conversion in the crate.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }

    pub fn lerp(self, o: Point, t: f64) -> Point {
        Point::new(
            (1.0 - t) * self.x + t * o.x,
            (1.0 - t) * self.y + t * o.y,
        )
    }

    pub fn normalized(self) -> Point {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self.scale(1.0 / n)
        }
    }

    /// Rotates a direction by +90 degrees in image coordinates (y down),
    /// turning an "up" vector into the matching "right" vector.
    pub fn perp(self) -> Point {
        Point::new(-self.y, self.x)
    }
}

/// Single-channel float image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Replicate-border access.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xc, yc)
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }
}

pub fn to_gray(img: &RgbImage) -> Plane {
    let (w, h) = img.dimensions();
    Plane::from_fn(w as usize, h as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32);
        LUMA[0] * p[0] as f32 + LUMA[1] * p[1] as f32 + LUMA[2] * p[2] as f32
    })
}

pub fn mirror(img: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(img)
}

pub fn flip_vertical(img: &RgbImage) -> RgbImage {
    image::imageops::flip_vertical(img)
}

/// Clockwise quarter turn.
pub fn rotate90(img: &RgbImage) -> RgbImage {
    image::imageops::rotate90(img)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[inline]
fn px(img: &RgbImage, x: isize, y: isize) -> [f32; 3] {
    let (w, h) = img.dimensions();
    let xc = x.clamp(0, w as isize - 1) as u32;
    let yc = y.clamp(0, h as isize - 1) as u32;
    let p = img.get_pixel(xc, yc);
    [p[0] as f32, p[1] as f32, p[2] as f32]
}

/// Bilinear sample with replicated borders.
pub fn sample_bilinear_rgb(img: &RgbImage, x: f64, y: f64) -> [f32; 3] {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = (x - x0) as f32;
    let fy = (y - y0) as f32;
    let (xi, yi) = (x0 as isize, y0 as isize);
    let a = px(img, xi, yi);
    let b = px(img, xi + 1, yi);
    let c = px(img, xi, yi + 1);
    let d = px(img, xi + 1, yi + 1);
    let mut out = [0.0f32; 3];
    for k in 0..3 {
        out[k] = (a[k] * (1.0 - fx) + b[k] * fx) * (1.0 - fy) + (c[k] * (1.0 - fx) + d[k] * fx) * fy;
    }
    out
}

/// Keys cubic convolution kernel with a = -0.5.
#[inline]
fn cubic_weight(t: f32) -> f32 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Bicubic sample with replicated borders. Output is not clamped.
pub fn sample_bicubic_rgb(img: &RgbImage, x: f64, y: f64) -> [f32; 3] {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = (x - x0) as f32;
    let fy = (y - y0) as f32;
    let (xi, yi) = (x0 as isize, y0 as isize);
    let wx = [
        cubic_weight(1.0 + fx),
        cubic_weight(fx),
        cubic_weight(1.0 - fx),
        cubic_weight(2.0 - fx),
    ];
    let wy = [
        cubic_weight(1.0 + fy),
        cubic_weight(fy),
        cubic_weight(1.0 - fy),
        cubic_weight(2.0 - fy),
    ];
    let mut out = [0.0f32; 3];
    for (j, wyj) in wy.iter().enumerate() {
        let mut row = [0.0f32; 3];
        for (i, wxi) in wx.iter().enumerate() {
            let p = px(img, xi + i as isize - 1, yi + j as isize - 1);
            for k in 0..3 {
                row[k] += wxi * p[k];
            }
        }
        for k in 0..3 {
            out[k] += wyj * row[k];
        }
    }
    out
}

/// Round half up and clamp into the 8-bit range.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[inline]
pub fn quantize_rgb(v: [f32; 3]) -> Rgb<u8> {
    Rgb([quantize(v[0]), quantize(v[1]), quantize(v[2])])
}

/// Mean absolute per-channel difference, in 8-bit units.
pub fn mean_abs_diff(a: &RgbImage, b: &RgbImage) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let total: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs() as u64)
        .sum();
    total as f64 / a.as_raw().len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolators_reproduce_pixels_at_integer_positions() {
        let img = RgbImage::from_fn(7, 5, |x, y| Rgb([(x * 30) as u8, (y * 40) as u8, ((x + y) * 9) as u8]));
        for y in 0..5 {
            for x in 0..7 {
                let p = img.get_pixel(x, y);
                let bl = sample_bilinear_rgb(&img, x as f64, y as f64);
                let bc = sample_bicubic_rgb(&img, x as f64, y as f64);
                for k in 0..3 {
                    assert!((bl[k] - p[k] as f32).abs() < 1e-4);
                    assert!((bc[k] - p[k] as f32).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(1.5), 2);
        assert_eq!(quantize(1.49), 1);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
    }

    #[test]
    fn cubic_weights_partition_unity() {
        for i in 0..10 {
            let f = i as f32 / 10.0;
            let s = cubic_weight(1.0 + f) + cubic_weight(f) + cubic_weight(1.0 - f) + cubic_weight(2.0 - f);
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}
