//! Row-major RGB float images and the resamplers shared by every module.

use std::path::Path;

use crate::nn::{Scalar, Tensor};
use crate::{Error, Result};

/// An RGB image stored row-major as `height × width × 3` floats.
///
/// The value range is not fixed by the type: loaded files hold `[0, 255]`,
/// network tensors hold `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
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
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear sample at continuous pixel coordinates where pixel `(i, j)`
    /// has its center at `(i + 0.5, j + 0.5)`. Coordinates clamp at the border.
    pub fn sample_clamped(&self, x: f64, y: f64) -> [f32; 3] {
        let px = x - 0.5;
        let py = y - 0.5;
        let x0 = px.floor();
        let y0 = py.floor();
        let fx = (px - x0) as f32;
        let fy = (py - y0) as f32;
        let clamp_x = |v: f64| v.clamp(0.0, (self.width - 1) as f64) as usize;
        let clamp_y = |v: f64| v.clamp(0.0, (self.height - 1) as f64) as usize;
        let (xa, xb) = (clamp_x(x0), clamp_x(x0 + 1.0));
        let (ya, yb) = (clamp_y(y0), clamp_y(y0 + 1.0));
        bilerp(
            self.get(xa, ya),
            self.get(xb, ya),
            self.get(xa, yb),
            self.get(xb, yb),
            fx,
            fy,
        )
    }

    /// Resize with bilinear interpolation (half-pixel centers, clamped edges).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Image::from_fn(width, height, |x, y| {
            self.sample_clamped((x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy)
        })
    }

    /// Exact area-weighted resize: each output pixel is the mean of the input
    /// area it covers. Used for every downscale.
    pub fn resize_area(&self, width: usize, height: usize) -> Image {
        let wx = area_weights(self.width, width);
        let wy = area_weights(self.height, height);
        // separable: rows first, then columns
        let mut tmp = vec![0.0f64; self.height * width * 3];
        for y in 0..self.height {
            for (ox, taps) in wx.iter().enumerate() {
                let mut acc = [0.0f64; 3];
                for &(ix, w) in taps {
                    let p = self.get(ix, y);
                    for c in 0..3 {
                        acc[c] += w * p[c] as f64;
                    }
                }
                let o = (y * width + ox) * 3;
                tmp[o..o + 3].copy_from_slice(&acc);
            }
        }
        let mut out = Image::new(width, height);
        for (oy, taps) in wy.iter().enumerate() {
            for x in 0..width {
                let mut acc = [0.0f64; 3];
                for &(iy, w) in taps {
                    let o = (iy * width + x) * 3;
                    for c in 0..3 {
                        acc[c] += w * tmp[o + c];
                    }
                }
                out.set(x, oy, [acc[0] as f32, acc[1] as f32, acc[2] as f32]);
            }
        }
        out
    }

    /// Area-weighted when shrinking in both axes, bilinear otherwise.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            self.clone()
        } else if width <= self.width && height <= self.height {
            self.resize_area(width, height)
        } else {
            self.resize_bilinear(width, height)
        }
    }

    /// Mean over non-overlapping `factor × factor` blocks.
    pub fn downsample_box(&self, factor: usize) -> Result<Image> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot box-downsample {}x{} by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f64;
        Ok(Image::from_fn(w, h, |x, y| {
            let mut acc = [0.0f64; 3];
            for dy in 0..factor {
                for dx in 0..factor {
                    let p = self.get(x * factor + dx, y * factor + dy);
                    for c in 0..3 {
                        acc[c] += p[c] as f64;
                    }
                }
            }
            [(acc[0] * norm) as f32, (acc[1] * norm) as f32, (acc[2] * norm) as f32]
        }))
    }

    /// Horizontal concatenation of equally tall images.
    pub fn hconcat(images: &[&Image]) -> Result<Image> {
        let height = images.first().map(|i| i.height).unwrap_or(0);
        if images.iter().any(|i| i.height != height) {
            return Err(Error::ShapeMismatch("hconcat needs equal heights".into()));
        }
        let width: usize = images.iter().map(|i| i.width).sum();
        let mut out = Image::new(width, height);
        let mut x0 = 0;
        for img in images {
            for y in 0..height {
                for x in 0..img.width {
                    out.set(x0 + x, y, img.get(x, y));
                }
            }
            x0 += img.width;
        }
        Ok(out)
    }

    /// Planar `[3, H, W]` copy of the pixels.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let n = self.width * self.height;
        let mut data = vec![T::zero(); 3 * n];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * n + i] = T::lit(px[c] as f64);
            }
        }
        Tensor::from_vec(&[3, self.height, self.width], data).expect("length matches")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Image> {
        let (c, h, w) = t.chw();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("expected 3 channels, got {c}")));
        }
        let n = h * w;
        let src = t.data();
        let mut data = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                data.push(src[c * n + i].as_f32());
            }
        }
        Image::from_vec(w, h, data)
    }

    /// Load any PNG/JPEG as RGB with values in `[0, 255]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let rgb = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
        Ok(Self::from_rgb8(&rgb))
    }

    pub fn from_rgb8(rgb: &image::RgbImage) -> Image {
        let (w, h) = rgb.dimensions();
        Image {
            width: w as usize,
            height: h as usize,
            data: rgb.as_raw().iter().map(|&b| b as f32).collect(),
        }
    }

    /// Round and clamp `[0, 255]` values to 8 bits.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw: Vec<u8> = self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer length matches dimensions")
    }

    /// Write an 8-bit image; the format follows the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8().save(path).map_err(|e| Error::image(path, e))
    }
}

#[inline]
pub(crate) fn bilerp(a: [f32; 3], b: [f32; 3], c: [f32; 3], d: [f32; 3], fx: f32, fy: f32) -> [f32; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let top = a[i] + (b[i] - a[i]) * fx;
        let bot = c[i] + (d[i] - c[i]) * fx;
        out[i] = top + (bot - top) * fy;
    }
    out
}

/// For every output index, the input indices it overlaps and their
/// normalized overlap weights.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((i, overlap / scale));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_resize_preserves_mean_on_integer_factor() {
        let img = Image::from_fn(8, 4, |x, y| [(x + y) as f32, x as f32, y as f32]);
        let a = img.resize_area(4, 2);
        let b = img.downsample_box(2).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn area_resize_non_integer_ratio_keeps_constant() {
        let img = Image::filled(7, 5, [3.0, 4.0, 5.0]);
        let out = img.resize_area(3, 2);
        for px in out.data().chunks(3) {
            assert!((px[0] - 3.0).abs() < 1e-5 && (px[2] - 5.0).abs() < 1e-5);
        }
    }

    #[test]
    fn bilinear_identity_at_same_size() {
        let img = Image::from_fn(5, 3, |x, y| [x as f32, y as f32, 1.0]);
        assert_eq!(img.resize_bilinear(5, 3), img);
    }

    #[test]
    fn rejects_wrong_buffer_length() {
        assert!(Image::from_vec(2, 2, vec![0.0; 11]).is_err());
    }
}
