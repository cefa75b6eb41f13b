use std::path::Path;

use super::{DataError, Result};

/// Single-channel image with intensities in `[0, 1]`. Pixel `(x, y)` covers
/// the square `[x, x+1) x [y, y+1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(DataError::Image(format!(
                "{width}x{height} image cannot hold {} pixels",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    fn at_or_zero(&self, x: isize, y: isize) -> f32 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    /// Bilinear sample at continuous position `(x, y)`; outside the frame
    /// reads as 0.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let (fx, fy) = (x - 0.5, y - 0.5);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (ax, ay) = ((fx - x0) as f32, (fy - y0) as f32);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = self.at_or_zero(x0, y0) * (1.0 - ax) + self.at_or_zero(x0 + 1, y0) * ax;
        let bot = self.at_or_zero(x0, y0 + 1) * (1.0 - ax) + self.at_or_zero(x0 + 1, y0 + 1) * ax;
        top * (1.0 - ay) + bot * ay
    }

    /// Output of size `width x height` where pixel center `q` takes the
    /// value at `src(q)` in this image.
    pub fn warp(&self, width: usize, height: usize, src: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = src(x as f64 + 0.5, y as f64 + 0.5);
                data.push(self.sample(sx, sy));
            }
        }
        Self { width, height, data }
    }

    pub fn mirror(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Self { data, ..*self }
    }

    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, v: f32) {
        for y in y0.min(self.height)..y1.min(self.height) {
            for x in x0.min(self.width)..x1.min(self.width) {
                self.set(x, y, v);
            }
        }
    }

    /// Separable Gaussian blur with standard deviation `sigma`; borders
    /// replicate the edge pixel.
    pub fn blur(&self, sigma: f64) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let half = (3.0 * sigma).ceil() as isize;
        let mut k: Vec<f32> = (-half..=half).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
        let total: f32 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= total);
        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = vec![0.0f32; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = (x + i as isize - half).clamp(0, w - 1);
                    acc += kv * self.data[(y * w + xx) as usize];
                }
                tmp[(y * w + x) as usize] = acc;
            }
        }
        let mut out = vec![0.0f32; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = (y + i as isize - half).clamp(0, h - 1);
                    acc += kv * tmp[(yy * w + x) as usize];
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        Self { data: out, ..*self }
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer matches dimensions");
        img.save(path).map_err(|e| DataError::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| DataError::Image(format!("{}: {e}", path.display())))?;
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        let data = g.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
        Self::new(w as usize, h as usize, data)
    }
}

/// Color image used for prediction overlays.
#[derive(Clone, Debug)]
pub struct Overlay {
    inner: image::RgbImage,
}

impl Overlay {
    pub fn from_gray(img: &GrayImage, scale: usize) -> Self {
        let s = scale.max(1);
        let mut inner = image::RgbImage::new((img.width() * s) as u32, (img.height() * s) as u32);
        for (x, y, px) in inner.enumerate_pixels_mut() {
            let v = (img.get(x as usize / s, y as usize / s).clamp(0.0, 1.0) * 255.0).round() as u8;
            *px = image::Rgb([v, v, v]);
        }
        Self { inner }
    }

    /// Draws a filled dot centered at `(x, y)` in the source image's pixel
    /// coordinates, scaled by the overlay factor.
    pub fn dot(&mut self, x: f64, y: f64, scale: usize, color: [u8; 3]) {
        let (cx, cy) = (x * scale as f64, y * scale as f64);
        let r = (scale as f64 * 0.75).max(1.5);
        let (w, h) = (self.inner.width() as i64, self.inner.height() as i64);
        for py in (cy - r).floor() as i64..=(cy + r).ceil() as i64 {
            for px in (cx - r).floor() as i64..=(cx + r).ceil() as i64 {
                let (dx, dy) = (px as f64 + 0.5 - cx, py as f64 + 0.5 - cy);
                if px >= 0 && py >= 0 && px < w && py < h && dx * dx + dy * dy <= r * r {
                    self.inner.put_pixel(px as u32, py as u32, image::Rgb(color));
                }
            }
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.inner.get_pixel(x, y).0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.inner.save(path).map_err(|e| DataError::Image(format!("{}: {e}", path.display())))
    }
}
