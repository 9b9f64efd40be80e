//! Floating-point RGB images, binary masks, and UV textures.
//!
//! Continuous pixel coordinates follow one convention everywhere: pixel
//! `(i, j)` covers `[i, i+1) x [j, j+1)`, so its center sits at
//! `(i + 0.5, j + 0.5)`. Bilinear lookups subtract the half pixel and clamp
//! to the edge.

use crate::error::{Error, Result};

/// Interleaved RGB image with `f64` channels, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "rgb buffer has {} values, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn same_shape(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamped(&self) -> RgbImage {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        out
    }

    /// Zeroes every pixel where `mask` is false.
    pub fn masked(&self, mask: &Mask) -> RgbImage {
        let mut out = self.clone();
        for (i, &m) in mask.data().iter().enumerate() {
            if !m {
                out.data[i * 3..i * 3 + 3].fill(0.0);
            }
        }
        out
    }

    /// Bilinear taps at continuous coordinates: four `(pixel index, weight)`
    /// pairs with clamp-to-edge addressing.
    #[inline]
    pub fn bilinear_taps(width: usize, height: usize, x: f64, y: f64) -> [(usize, f64); 4] {
        let sx = x - 0.5;
        let sy = y - 0.5;
        let x0f = sx.floor();
        let y0f = sy.floor();
        let fx = sx - x0f;
        let fy = sy - y0f;
        let clampi = |v: f64, n: usize| -> usize { (v.max(0.0) as usize).min(n - 1) };
        let x0 = clampi(x0f, width);
        let x1 = clampi(x0f + 1.0, width);
        let y0 = clampi(y0f, height);
        let y1 = clampi(y0f + 1.0, height);
        [
            (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
            (y0 * width + x1, fx * (1.0 - fy)),
            (y1 * width + x0, (1.0 - fx) * fy),
            (y1 * width + x1, fx * fy),
        ]
    }

    /// Bilinear lookup at continuous coordinates.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (idx, w) in Self::bilinear_taps(self.width, self.height, x, y) {
            for c in 0..3 {
                out[c] += w * self.data[idx * 3 + c];
            }
        }
        out
    }

    /// 2x2 box downsample. Both sides must be even.
    pub fn downsample2(&self) -> RgbImage {
        let w = self.width / 2;
        let h = self.height / 2;
        RgbImage::from_fn(w, h, |x, y| {
            let mut c = [0.0; 3];
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let p = self.get(2 * x + dx, 2 * y + dy);
                for k in 0..3 {
                    c[k] += 0.25 * p[k];
                }
            }
            c
        })
    }

    /// Bilinear 2x upsample (half-pixel centers, clamp-to-edge).
    pub fn upsample2(&self) -> RgbImage {
        let mut tmp = RgbImage::new(self.width * 2, self.height);
        for y in 0..self.height {
            for x in 0..self.width * 2 {
                let (a, b, wa) = upsample_taps(x, self.width);
                let pa = self.get(a, y);
                let pb = self.get(b, y);
                tmp.set(x, y, mix(pa, pb, wa));
            }
        }
        let mut out = RgbImage::new(self.width * 2, self.height * 2);
        for y in 0..self.height * 2 {
            let (a, b, wa) = upsample_taps(y, self.height);
            for x in 0..self.width * 2 {
                out.set(x, y, mix(tmp.get(x, a), tmp.get(x, b), wa));
            }
        }
        out
    }

    /// Adjoint of [`RgbImage::upsample2`]: maps a gradient on the upsampled
    /// grid back onto the coarse grid.
    pub fn upsample2_adjoint(&self) -> RgbImage {
        let cw = self.width / 2;
        let ch = self.height / 2;
        let mut tmp = RgbImage::new(self.width, ch);
        for y in 0..self.height {
            let (a, b, wa) = upsample_taps(y, ch);
            for x in 0..self.width {
                let g = self.get(x, y);
                add_scaled(&mut tmp, x, a, g, wa);
                add_scaled(&mut tmp, x, b, g, 1.0 - wa);
            }
        }
        let mut out = RgbImage::new(cw, ch);
        for y in 0..ch {
            for x in 0..self.width {
                let (a, b, wa) = upsample_taps(x, cw);
                let g = tmp.get(x, y);
                add_scaled(&mut out, a, y, g, wa);
                add_scaled(&mut out, b, y, g, 1.0 - wa);
            }
        }
        out
    }

    /// Resizes a square power-of-two image to another power-of-two side by
    /// repeated box downsampling or bilinear upsampling.
    pub fn resize_pow2(&self, side: usize) -> Result<RgbImage> {
        if self.width != self.height || !self.width.is_power_of_two() || !side.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "cannot resize {}x{} to {side}x{side}",
                self.width, self.height
            )));
        }
        let mut out = self.clone();
        while out.width > side {
            out = out.downsample2();
        }
        while out.width < side {
            out = out.upsample2();
        }
        Ok(out)
    }

    /// Separable Gaussian blur with clamp-to-edge borders, kernel radius `ceil(3 sigma)`.
    pub fn gaussian_blur(&self, sigma: f64) -> RgbImage {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= sum);
        let (w, h) = (self.width as isize, self.height as isize);
        let horiz = RgbImage::from_fn(self.width, self.height, |x, y| {
            let mut c = [0.0; 3];
            for (k, kw) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - radius).clamp(0, w - 1) as usize;
                let p = self.get(sx, y);
                for ch in 0..3 {
                    c[ch] += kw * p[ch];
                }
            }
            c
        });
        RgbImage::from_fn(self.width, self.height, |x, y| {
            let mut c = [0.0; 3];
            for (k, kw) in kernel.iter().enumerate() {
                let sy = (y as isize + k as isize - radius).clamp(0, h - 1) as usize;
                let p = horiz.get(x, sy);
                for ch in 0..3 {
                    c[ch] += kw * p[ch];
                }
            }
            c
        })
    }

    pub fn add_assign(&mut self, other: &RgbImage) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs_diff(&self, other: &RgbImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
fn upsample_taps(out: usize, n_in: usize) -> (usize, usize, f64) {
    let i = out / 2;
    if out.is_multiple_of(2) {
        (i, i.saturating_sub(1), 0.75)
    } else {
        (i, (i + 1).min(n_in - 1), 0.75)
    }
}

#[inline]
fn mix(a: [f64; 3], b: [f64; 3], wa: f64) -> [f64; 3] {
    [
        wa * a[0] + (1.0 - wa) * b[0],
        wa * a[1] + (1.0 - wa) * b[1],
        wa * a[2] + (1.0 - wa) * b[2],
    ]
}

#[inline]
fn add_scaled(img: &mut RgbImage, x: usize, y: usize, g: [f64; 3], w: f64) {
    let i = (y * img.width + x) * 3;
    for c in 0..3 {
        img.data[i + c] += w * g[c];
    }
}

/// Binary image mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
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

    pub fn from_raw(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask buffer has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    /// Downsamples by `factor` keeping a pixel only when its whole block is set.
    pub fn downsample_all(&self, factor: usize) -> Mask {
        let w = self.width / factor;
        let h = self.height / factor;
        Mask::from_fn(w, h, |x, y| {
            (0..factor).all(|dy| (0..factor).all(|dx| self.get(x * factor + dx, y * factor + dy)))
        })
    }
}

/// Square UV texture with a validity channel; invalid texels are black.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pixels: RgbImage,
    validity: Mask,
}

impl TextureMap {
    /// Builds a texture, clamping colors to `[0, 1]` and blacking out invalid texels.
    pub fn new(pixels: RgbImage, validity: Mask) -> Result<Self> {
        if pixels.width() != pixels.height() {
            return Err(Error::InvalidInput(format!(
                "texture must be square, got {}x{}",
                pixels.width(),
                pixels.height()
            )));
        }
        if validity.width() != pixels.width() || validity.height() != pixels.height() {
            return Err(Error::InvalidInput("validity mask does not match texture size".into()));
        }
        let pixels = pixels.clamped().masked(&validity);
        Ok(Self { pixels, validity })
    }

    /// A texture valid everywhere.
    pub fn complete(pixels: RgbImage) -> Result<Self> {
        let validity = Mask::full(pixels.width(), pixels.height());
        Self::new(pixels, validity)
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn validity(&self) -> &Mask {
        &self.validity
    }

    pub fn resolution(&self) -> usize {
        self.pixels.width()
    }

    /// Resamples to another power-of-two side. Validity shrinks conservatively:
    /// a coarse texel is valid only if every fine texel beneath it is, and an
    /// upsampled texel inherits its parent's validity.
    pub fn resized(&self, side: usize) -> Result<TextureMap> {
        let res = self.resolution();
        if side == res {
            return Ok(self.clone());
        }
        let pixels = self.pixels.resize_pow2(side)?;
        let validity = if side < res {
            self.validity.downsample_all(res / side)
        } else {
            let f = side / res;
            Mask::from_fn(side, side, |x, y| self.validity.get(x / f, y / f))
        };
        TextureMap::new(pixels, validity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_at_pixel_center_is_exact() {
        let img = RgbImage::from_fn(4, 4, |x, y| [x as f64, y as f64, 0.5]);
        assert_eq!(img.sample(2.5, 1.5), [2.0, 1.0, 0.5]);
        assert_eq!(img.sample(2.0, 1.5), [1.5, 1.0, 0.5]);
        // clamp to edge
        assert_eq!(img.sample(0.1, 0.2), [0.0, 0.0, 0.5]);
    }

    #[test]
    fn upsample_adjoint_matches_dot_product() {
        let a = RgbImage::from_fn(4, 4, |x, y| [(x * 3 + y) as f64 * 0.1, (x as f64).sin(), (y as f64).cos()]);
        let b = RgbImage::from_fn(8, 8, |x, y| [(x + 2 * y) as f64 * 0.05, (y as f64 * 0.3).sin(), 0.7]);
        let lhs: f64 = a.upsample2().data().iter().zip(b.data()).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.data().iter().zip(b.upsample2_adjoint().data()).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn texture_blackens_invalid_texels() {
        let pixels = RgbImage::filled(2, 2, [0.5, 1.5, -0.2]);
        let mut validity = Mask::full(2, 2);
        validity.set(1, 1, false);
        let tex = TextureMap::new(pixels, validity).unwrap();
        assert_eq!(tex.pixels().get(0, 0), [0.5, 1.0, 0.0]);
        assert_eq!(tex.pixels().get(1, 1), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_blur_is_constant() {
        let img = RgbImage::filled(9, 7, [0.3, 0.6, 0.9]);
        assert!(img.gaussian_blur(2.0).max_abs_diff(&img) < 1e-12);
    }
}
