//! Floating-point rasters in the unit interval with 8-bit storage.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("cannot read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot write image {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A row-major raster with `C` interleaved channels, values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image<const C: usize> {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

pub type Rgb = Image<3>;
pub type Rgba = Image<4>;
pub type Gray = Image<1>;

/// Boolean per-pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let mut rows = Mask::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let lo = x.saturating_sub(radius);
                    let hi = (x + radius).min(self.width - 1);
                    for xx in lo..=hi {
                        rows.set(xx, y, true);
                    }
                }
            }
        }
        let mut out = Mask::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                if rows.get(x, y) {
                    let lo = y.saturating_sub(radius);
                    let hi = (y + radius).min(self.height - 1);
                    for yy in lo..=hi {
                        out.set(x, yy, true);
                    }
                }
            }
        }
        out
    }
}

/// Round to 8-bit with ties to even, after clamping to [0, 1].
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

pub fn from_u8(v: u8) -> f32 {
    f32::from(v) / 255.0
}

impl<const C: usize> Image<C> {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * C],
        }
    }

    pub fn filled(width: usize, height: usize, value: [f32; C]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(C) {
            px.copy_from_slice(&value);
        }
        img
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; C]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * C, "raster buffer size");
        Image { width, height, data }
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

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; C] {
        let i = (y * self.width + x) * C;
        let mut out = [0.0; C];
        out.copy_from_slice(&self.data[i..i + C]);
        out
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, v: [f32; C]) {
        let i = (y * self.width + x) * C;
        self.data[i..i + C].copy_from_slice(&v);
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Snap every value to the 8-bit grid used for storage.
    pub fn quantized(&self) -> Self {
        self.map(|v| from_u8(to_u8(v)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| to_u8(*v)).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width * height * C, "byte buffer size");
        Image {
            width,
            height,
            data: bytes.iter().map(|b| from_u8(*b)).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.pixel(self.width - 1 - x, y))
    }

    /// Bilinear sample at continuous coordinates where pixel `i` has its
    /// center at `i`; coordinates outside are clamped to the border.
    pub fn sample_clamped(&self, x: f32, y: f32) -> [f32; C] {
        let xm = (self.width - 1) as f32;
        let ym = (self.height - 1) as f32;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        let mut out = [0.0; C];
        for c in 0..C {
            let top = p00[c] + (p10[c] - p00[c]) * fx;
            let bot = p01[c] + (p11[c] - p01[c]) * fx;
            out[c] = top + (bot - top) * fy;
        }
        out
    }

    /// Box-filter resize: each output pixel is the overlap-weighted mean of
    /// the source pixels its footprint covers.
    pub fn resize_area(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let wx = area_weights(self.width, width);
        let wy = area_weights(self.height, height);
        let mut tmp = vec![0.0f32; width * self.height * C];
        for y in 0..self.height {
            for (ox, taps) in wx.iter().enumerate() {
                let mut acc = [0.0f32; C];
                for &(sx, w) in taps {
                    let p = self.pixel(sx, y);
                    for c in 0..C {
                        acc[c] += w * p[c];
                    }
                }
                let i = (y * width + ox) * C;
                tmp[i..i + C].copy_from_slice(&acc);
            }
        }
        let mut out = Self::new(width, height);
        for (oy, taps) in wy.iter().enumerate() {
            for x in 0..width {
                let mut acc = [0.0f32; C];
                for &(sy, w) in taps {
                    let i = (sy * width + x) * C;
                    for c in 0..C {
                        acc[c] += w * tmp[i + c];
                    }
                }
                out.put(x, oy, acc);
            }
        }
        out
    }

    /// Bilinear resize with half-pixel aligned centers.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        Self::from_fn(width, height, |x, y| {
            let fx = (x as f32 + 0.5) * sx - 0.5;
            let fy = (y as f32 + 0.5) * sy - 0.5;
            self.sample_clamped(fx, fy)
        })
    }

    /// Mean and population standard deviation over every stored value.
    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|v| f64::from(*v)).sum::<f64>() / n;
        let var = self
            .data
            .iter()
            .map(|v| (f64::from(*v) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }
}

/// Per output index, the source indices and normalized overlap weights of a
/// box filter mapping `src` samples onto `dst` samples.
pub fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut taps = Vec::with_capacity(last - first);
            for s in first..last {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if overlap > 1e-12 {
                    taps.push((s, (overlap / scale) as f32));
                }
            }
            taps
        })
        .collect()
}

impl Rgb {
    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path)
            .map_err(|source| RasterError::Read {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self::from_bytes(w as usize, h as usize, img.as_raw()))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        ensure_parent(path)?;
        image::save_buffer(
            path,
            &self.to_bytes(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| RasterError::Write {
            path: path.display().to_string(),
            source,
        })
    }
}

impl Rgba {
    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path)
            .map_err(|source| RasterError::Read {
                path: path.display().to_string(),
                source,
            })?
            .to_rgba8();
        let (w, h) = img.dimensions();
        Ok(Self::from_bytes(w as usize, h as usize, img.as_raw()))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        ensure_parent(path)?;
        image::save_buffer(
            path,
            &self.to_bytes(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgba8,
        )
        .map_err(|source| RasterError::Write {
            path: path.display().to_string(),
            source,
        })
    }
}

fn ensure_parent(path: &Path) -> Result<(), RasterError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| RasterError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    Ok(())
}
