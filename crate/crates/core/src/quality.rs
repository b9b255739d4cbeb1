//! Image quality and seam metrics.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) with `C1 = 0.01^2`,
//! `C2 = 0.03^2` for unit dynamic range. The local map has the input's size.
//! Columns wrap around, as longitude does in a panorama; near the top and
//! bottom rows the window is truncated and renormalized. The score is the
//! mean over pixels and channels.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::imagebuf::{ErpImage, Image, CHANNELS};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Value returned by [`psnr`] for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let n = a.data().len();
    if n == 0 {
        return Err(Error::validation("empty image"));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Mean structural similarity. Both sides must be at least 11 pixels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let (h, w) = a.dims();
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::validation(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    Ok(SsimEval::new(a, b).mean())
}

/// Mean SSIM without the minimum-size check (the truncated window covers
/// the whole image when it is small).
pub fn ssim_any_size(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    if a.data().is_empty() {
        return Err(Error::validation("empty image"));
    }
    Ok(SsimEval::new(a, b).mean())
}

/// Mean SSIM and its gradient w.r.t. `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    a.same_dims(b)?;
    if a.data().is_empty() {
        return Err(Error::validation("empty image"));
    }
    let ev = SsimEval::new(a, b);
    Ok((ev.mean(), ev.grad_a(a, b)))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    k
}

/// Separable Gaussian filter on single-channel planes, circular along rows
/// and renormalized at the top and bottom.
///
/// With `K` the symmetric kernel (wrapped horizontally, zero-padded
/// vertically) and `n` the per-pixel sum of in-bounds taps,
/// `F x = (K x) / n` and `F^T z = K (z / n)`.
struct Window {
    taps: [f64; SSIM_WINDOW],
    inv_norm: Vec<f64>,
    h: usize,
    w: usize,
}

impl Window {
    fn new(h: usize, w: usize) -> Self {
        let taps = gaussian_taps();
        let ones = vec![1.0; h * w];
        let mut win = Self {
            taps,
            inv_norm: Vec::new(),
            h,
            w,
        };
        win.inv_norm = win.convolve(&ones).into_iter().map(|v| 1.0 / v).collect();
        win
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.convolve(x);
        for (v, s) in y.iter_mut().zip(&self.inv_norm) {
            *v *= s;
        }
        y
    }

    fn apply_t(&self, z: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = z.iter().zip(&self.inv_norm).map(|(a, b)| a * b).collect();
        self.convolve(&scaled)
    }

    fn convolve(&self, x: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let r = SSIM_WINDOW / 2;
        let mut tmp = vec![0.0; h * w];
        let mut padded = vec![0.0; w + 2 * r];
        for row in 0..h {
            let src = &x[row * w..(row + 1) * w];
            for (j, p) in padded.iter_mut().enumerate() {
                *p = src[(j as isize - r as isize).rem_euclid(w as isize) as usize];
            }
            let dst = &mut tmp[row * w..(row + 1) * w];
            for (i, d) in dst.iter_mut().enumerate() {
                let win = &padded[i..i + SSIM_WINDOW];
                let mut acc = 0.0;
                for k in 0..SSIM_WINDOW {
                    acc += self.taps[k] * win[k];
                }
                *d = acc;
            }
        }
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            let dst = &mut out[i * w..(i + 1) * w];
            for k in 0..SSIM_WINDOW {
                let j = i as isize + k as isize - r as isize;
                if j < 0 || j as usize >= h {
                    continue;
                }
                let t = self.taps[k];
                let src = &tmp[j as usize * w..(j as usize + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += t * s;
                }
            }
        }
        out
    }
}

struct ChannelStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

struct SsimEval {
    win: Window,
    stats: Vec<ChannelStats>,
}

fn plane(img: &Image, ch: usize) -> Vec<f64> {
    img.data().iter().skip(ch).step_by(CHANNELS).copied().collect()
}

impl SsimEval {
    fn new(a: &Image, b: &Image) -> Self {
        let (h, w) = a.dims();
        let win = Window::new(h, w);
        let stats = (0..CHANNELS)
            .map(|ch| {
                let pa = plane(a, ch);
                let pb = plane(b, ch);
                let mu_a = win.apply(&pa);
                let mu_b = win.apply(&pb);
                let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).collect::<Vec<_>>();
                let ea2 = win.apply(&sq(&pa, &pa));
                let eb2 = win.apply(&sq(&pb, &pb));
                let eab = win.apply(&sq(&pa, &pb));
                let n = h * w;
                let mut var_a = vec![0.0; n];
                let mut var_b = vec![0.0; n];
                let mut cov = vec![0.0; n];
                for i in 0..n {
                    var_a[i] = ea2[i] - mu_a[i] * mu_a[i];
                    var_b[i] = eb2[i] - mu_b[i] * mu_b[i];
                    cov[i] = eab[i] - mu_a[i] * mu_b[i];
                }
                ChannelStats {
                    mu_a,
                    mu_b,
                    var_a,
                    var_b,
                    cov,
                }
            })
            .collect();
        Self { win, stats }
    }

    fn mean(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in &self.stats {
            for i in 0..s.mu_a.len() {
                let a1 = 2.0 * s.mu_a[i] * s.mu_b[i] + SSIM_C1;
                let a2 = 2.0 * s.cov[i] + SSIM_C2;
                let b1 = s.mu_a[i] * s.mu_a[i] + s.mu_b[i] * s.mu_b[i] + SSIM_C1;
                let b2 = s.var_a[i] + s.var_b[i] + SSIM_C2;
                total += a1 * a2 / (b1 * b2);
                count += 1;
            }
        }
        total / count as f64
    }

    fn grad_a(&self, a: &Image, b: &Image) -> Image {
        let (h, w) = a.dims();
        let n = h * w;
        let scale = 1.0 / (n * CHANNELS) as f64;
        let mut out = Image::new(h, w);
        for (ch, s) in self.stats.iter().enumerate() {
            let mut g1 = vec![0.0; n];
            let mut g2 = vec![0.0; n];
            let mut g3 = vec![0.0; n];
            for i in 0..n {
                let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
                let a1 = 2.0 * ma * mb + SSIM_C1;
                let a2 = 2.0 * s.cov[i] + SSIM_C2;
                let b1 = ma * ma + mb * mb + SSIM_C1;
                let b2 = s.var_a[i] + s.var_b[i] + SSIM_C2;
                let d_mu = 2.0 * mb * a2 / (b1 * b2) - 2.0 * ma * a1 * a2 / (b1 * b1 * b2);
                let d_var = -a1 * a2 / (b1 * b2 * b2);
                let d_cov = 2.0 * a1 / (b1 * b2);
                g1[i] = scale * (d_mu - 2.0 * ma * d_var - mb * d_cov);
                g2[i] = scale * d_var;
                g3[i] = scale * d_cov;
            }
            let t1 = self.win.apply_t(&g1);
            let t2 = self.win.apply_t(&g2);
            let t3 = self.win.apply_t(&g3);
            let pa = plane(a, ch);
            let pb = plane(b, ch);
            let dst = out.data_mut();
            for i in 0..n {
                dst[i * CHANNELS + ch] = t1[i] + 2.0 * pa[i] * t2[i] + pb[i] * t3[i];
            }
        }
        out
    }
}

/// Marks ERP pixels lying on cube-face boundaries: the nearest columns to
/// the vertical face edges at yaw +-45 and +-135 degrees (within the
/// latitude band of the side faces), and the nearest rows to the curves
/// where the side faces meet the top and bottom faces. Ties mark both
/// neighbours.
pub fn seam_mask(erp_h: usize, erp_w: usize) -> Vec<bool> {
    let (h, w) = (erp_h as f64, erp_w as f64);
    let mut mask = vec![false; erp_h * erp_w];
    let col_of = |theta: f64| (theta / (2.0 * PI) + 0.5) * w - 0.5;
    let row_of = |phi: f64| (-phi / PI + 0.5) * h - 0.5;
    let edge_lat = (PI / 4.0).cos().atan();
    for k in [-3.0, -1.0, 1.0, 3.0] {
        let u0 = col_of(k * PI / 4.0);
        for col in 0..erp_w {
            let du = (col as f64 - u0).rem_euclid(w);
            let du = du.min(w - du);
            if du > 0.5 + 1e-9 {
                continue;
            }
            for row in 0..erp_h {
                let phi = -((row as f64 + 0.5) / h - 0.5) * PI;
                if phi.abs() <= edge_lat + 0.5 * PI / h {
                    mask[row * erp_w + col] = true;
                }
            }
        }
    }
    for col in 0..erp_w {
        let theta = ((col as f64 + 0.5) / w - 0.5) * 2.0 * PI;
        let axis = (theta / (PI / 2.0)).round() * (PI / 2.0);
        let lat = (theta - axis).cos().atan();
        for sign in [1.0, -1.0] {
            let v0 = row_of(sign * lat);
            for row in 0..erp_h {
                if (row as f64 - v0).abs() <= 0.5 + 1e-9 {
                    mask[row * erp_w + col] = true;
                }
            }
        }
    }
    mask
}

/// Per-pixel gradient magnitude per unit arc on the sphere,
/// `(|dx| / cos(phi) + |dy|) / 2` from central differences with wrapped
/// columns and clamped rows, channel-averaged. Columns are `cos(phi)`
/// narrower than rows away from the equator.
fn gradient_magnitude(e: &ErpImage) -> Vec<f64> {
    let (h, w) = e.dims();
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        let up = row.saturating_sub(1);
        let down = (row + 1).min(h - 1);
        let phi = -((row as f64 + 0.5) / h as f64 - 0.5) * PI;
        let stretch = 1.0 / phi.cos();
        for col in 0..w {
            let left = e.pixel(row, (col + w - 1) % w);
            let right = e.pixel(row, (col + 1) % w);
            let top = e.pixel(up, col);
            let bottom = e.pixel(down, col);
            let mut d = 0.0;
            for k in 0..3 {
                d += 0.5 * ((right[k] - left[k]).abs() / 2.0 * stretch + (bottom[k] - top[k]).abs() / 2.0);
            }
            out[row * w + col] = d / 3.0;
        }
    }
    out
}

/// Mean gradient magnitude on cube-face boundaries divided by the mean
/// elsewhere; 1.0 when both are zero.
pub fn seam_score(e: &ErpImage) -> Result<f64> {
    e.check_erp()?;
    let (h, w) = e.dims();
    let mask = seam_mask(h, w);
    let d = gradient_magnitude(e);
    let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
    for (v, m) in d.iter().zip(&mask) {
        if *m {
            on += v;
            n_on += 1;
        } else {
            off += v;
            n_off += 1;
        }
    }
    let on = if n_on > 0 { on / n_on as f64 } else { 0.0 };
    let off = if n_off > 0 { off / n_off as f64 } else { 0.0 };
    if on == 0.0 && off == 0.0 {
        return Ok(1.0);
    }
    if off == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(on / off)
}
