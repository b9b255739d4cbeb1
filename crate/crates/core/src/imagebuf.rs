//! Row-major RGB float images.
//!
//! The same buffer type carries equirectangular panoramas and perspective
//! face renders. Values are linear-light RGB, nominally in `[0, 1]`.

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// A perspective view (cube face, transition plane or rendered camera).
pub type FaceImage = Image;

/// An equirectangular panorama. Entry points that need one check
/// `width == 2 * height` with [`Image::check_erp`].
pub type ErpImage = Image;

impl Image {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::validation(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                CHANNELS
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::validation(format!(
                "image dimensions differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Checks the 2:1 equirectangular aspect.
    pub fn check_erp(&self) -> Result<()> {
        if self.height < 2 || self.width != 2 * self.height {
            return Err(Error::validation(format!(
                "equirectangular image must be H x 2H with H >= 2, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Elementwise `a*self + b*other`.
    pub fn lincomb(&self, a: f64, other: &Image, b: f64) -> Result<Image> {
        self.same_dims(other)?;
        Ok(Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Image) -> Result<()> {
        self.same_dims(other)?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max))
    }

    /// Bilinear sample at continuous pixel coordinates, clamping at all
    /// borders. Coordinate `k.0` is the center of texel `k`.
    pub fn sample_clamped(&self, u: f64, v: f64) -> [f64; 3] {
        let (c0, c1, fu) = clamp_taps(u, self.width);
        let (r0, r1, fv) = clamp_taps(v, self.height);
        self.blend4(r0, r1, c0, c1, fu, fv)
    }

    /// Bilinear sample with longitude wrap (columns) and latitude clamp
    /// (rows), the equirectangular boundary policy.
    pub fn sample_erp(&self, u: f64, v: f64) -> [f64; 3] {
        let (c0, c1, fu) = wrap_taps(u, self.width);
        let (r0, r1, fv) = clamp_taps(v, self.height);
        self.blend4(r0, r1, c0, c1, fu, fv)
    }

    #[inline]
    fn blend4(&self, r0: usize, r1: usize, c0: usize, c1: usize, fu: f64, fv: f64) -> [f64; 3] {
        let p00 = self.pixel(r0, c0);
        let p01 = self.pixel(r0, c1);
        let p10 = self.pixel(r1, c0);
        let p11 = self.pixel(r1, c1);
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = p00[k] + (p01[k] - p00[k]) * fu;
            let bot = p10[k] + (p11[k] - p10[k]) * fu;
            out[k] = top + (bot - top) * fv;
        }
        out
    }
}

/// Two clamped taps and the fractional weight of the second one.
#[inline]
pub(crate) fn clamp_taps(x: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let x = x.clamp(0.0, max);
    let i0 = x.floor();
    let f = x - i0;
    let i0 = i0 as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, f)
}

/// Two taps with periodic wrap and the fractional weight of the second one.
#[inline]
pub(crate) fn wrap_taps(x: f64, n: usize) -> (usize, usize, f64) {
    let nf = n as f64;
    let x = x.rem_euclid(nf);
    let i0 = x.floor();
    let f = x - i0;
    let i0 = (i0 as usize) % n;
    let i1 = (i0 + 1) % n;
    (i0, i1, f)
}
