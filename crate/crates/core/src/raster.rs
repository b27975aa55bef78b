//! Minimal 2D raster containers shared by the unwrapping, labeling and
//! evaluation stages.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

/// Row-major 2D grid. `x` indexes columns (width), `y` rows (height).
#[derive(Debug, Clone, PartialEq)]
pub struct Image2<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Binary mask over a raster.
pub type Mask = Image2<bool>;

impl<T: Clone> Image2<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Image2<T> {
    /// Wraps `data` (row-major). Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let w = self.width;
        self.data[y * w + x] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Image2<U> {
        Image2 {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl Image2<f64> {
    /// Bilinear interpolation at a continuous pixel coordinate. Returns `None`
    /// outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if self.width == 0 || self.height == 0 {
            return None;
        }
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let v00 = *self.get(x0, y0);
        let v10 = *self.get(x1, y0);
        let v01 = *self.get(x0, y1);
        let v11 = *self.get(x1, y1);
        let top = v00 + (v10 - v00) * fx;
        let bottom = v01 + (v11 - v01) * fx;
        Some(top + (bottom - top) * fy)
    }

    /// Writes the image as an 8-bit PNG after clamping to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(x as usize, y as usize).clamp(0.0, 1.0);
            Luma([(v * 255.0).round() as u8])
        });
        img.save(path)
    }

    /// Writes the image as a 16-bit TIFF after clamping to `[0, 1]`.
    pub fn save_tiff16(&self, path: &Path) -> image::ImageResult<()> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
                let v = self.get(x as usize, y as usize).clamp(0.0, 1.0);
                Luma([(v * 65535.0).round_ties_even() as u16])
            });
        img.save(path)
    }

    /// Reads a 16-bit grayscale TIFF back into `[0, 1]` floats.
    pub fn load_tiff16(path: &Path) -> image::ImageResult<Self> {
        let img = image::open(path)?.into_luma16();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
        Ok(Self::from_vec(w as usize, h as usize, data))
    }
}

impl Image2<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn save_png(&self, path: &Path) -> image::ImageResult<()> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if *self.get(x as usize, y as usize) { 255 } else { 0 }])
        });
        img.save(path)
    }

    /// Reads a PNG mask; any nonzero pixel is `true`.
    pub fn load_png(path: &Path) -> image::ImageResult<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v != 0).collect();
        Ok(Self::from_vec(w as usize, h as usize, data))
    }
}

/// Axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn is_empty(&self) -> bool {
        self.width() == 0 || self.height() == 0
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && self.x1 <= width && self.y1 <= height
    }
}

/// Normalized 1D Gaussian kernel truncated at `3 sigma`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &Image2<f64>, sigma: f64) -> Image2<f64> {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return img.clone();
    }
    let r = (k.len() / 2) as isize;
    let (w, h) = img.dims();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let tmp: Image2<f64> = Image2::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| *kv * *img.get(clamp(x as isize + i as isize - r, w), y))
            .sum()
    });
    Image2::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| *kv * *tmp.get(x, clamp(y as isize + i as isize - r, h)))
            .sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_exact_at_pixels_and_midpoints() {
        let img = Image2::from_fn(4, 3, |x, y| (x * 10 + y) as f64);
        assert_eq!(img.sample_bilinear(2.0, 1.0), Some(21.0));
        assert_eq!(img.sample_bilinear(3.0, 2.0), Some(32.0));
        assert!((img.sample_bilinear(1.5, 0.5).unwrap() - 15.5).abs() < 1e-12);
        assert_eq!(img.sample_bilinear(-0.1, 0.0), None);
        assert_eq!(img.sample_bilinear(3.01, 0.0), None);
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let flat = Image2::filled(7, 5, 0.25);
        let b = gaussian_blur(&flat, 1.3);
        assert!(b.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
        let k = gaussian_kernel(2.0);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.len(), 13);
    }

    #[test]
    fn rect_relations() {
        let a = Rect::new(0, 0, 10, 5);
        let b = Rect::new(0, 5, 10, 10);
        assert!(!a.intersects(&b));
        assert!(a.intersects(&Rect::new(9, 4, 12, 6)));
        assert!(a.contains(9, 4) && !a.contains(10, 4));
    }
}
