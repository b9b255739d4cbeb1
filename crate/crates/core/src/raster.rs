//! Tile-based perspective rasterizer for 3D Gaussians.
//!
//! Forward: every Gaussian is projected to a 2D splat through the
//! first-order perspective Jacobian, splats are globally sorted by
//! camera-frame depth (ties by index) and binned into 16x16 tiles, and each
//! pixel composites its tile list front to back:
//!
//! ```text
//! alpha_i = min(0.99, opacity_i * exp(-0.5 d^T conic_i d))   (skipped if < 1/255)
//! C       = sum_i color_i alpha_i T_i + background T_final,   T_{i+1} = T_i (1 - alpha_i)
//! ```
//!
//! Compositing stops once `T` falls below `1e-4`. The backward pass replays
//! each pixel back to front and is exact for this forward formula; it does
//! not differentiate through the sort order or the cutoffs.
//!
//! Image coordinates: column `x` grows to the right (camera `+x`), row `y`
//! grows downward (camera `-y`); pixel `k.0` is a texel center and the
//! principal point is `(W/2 - 0.5, H/2 - 0.5)`.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagebuf::{FaceImage, Image};
use crate::scene::{normalized, GaussianScene, Gaussian3D, MAX_SCALE, MIN_SCALE, PARAM_COUNT};
use crate::sphergeo::CameraPose;

/// Low-pass dilation added to the 2D covariance diagonal, in pixels squared.
pub const LOWPASS: f64 = 0.3;
pub const TILE: usize = 16;
/// Per-splat contribution floor.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
pub const MAX_ALPHA: f64 = 0.99;
/// Transmittance below which compositing stops.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;
/// Off-axis ratios used in the projection Jacobian are clamped to this
/// multiple of the half field of view tangent.
pub const FRUSTUM_GUARD: f64 = 1.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerspectiveIntrinsics {
    pub fov: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl PerspectiveIntrinsics {
    pub fn new(fov: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fov,
            width,
            height,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn with_clip(mut self, near: f64, far: f64) -> Result<Self> {
        self.near = near;
        self.far = far;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov < PI) {
            return Err(Error::validation(format!("field of view must be in (0, pi), got {}", self.fov)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::validation(format!(
                "clip range must satisfy 0 < near < far, got {} .. {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("image size must be non-zero"));
        }
        Ok(())
    }

    /// Focal length in pixels, `(W/2) / tan(fov/2)`.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.fov / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0 - 0.5, self.height as f64 / 2.0 - 0.5)
    }
}

/// A Gaussian projected into one view.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatPrimitive2D {
    /// Index of the source Gaussian in the scene.
    pub index: usize,
    pub mean2d: [f64; 2],
    /// Dilated 2D covariance `(xx, xy, yy)` in pixels squared.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, `(xx, xy, yy)`.
    pub conic: [f64; 3],
    /// Camera-frame z.
    pub depth: f64,
    pub alpha: f64,
    pub color: [f64; 3],
    /// Half extents of the pixel box where the splat can reach the
    /// contribution floor.
    pub radius: [f64; 2],
    /// Camera-frame mean.
    pub cam: Vector3<f64>,
    /// Perspective Jacobian at `cam`, rows for pixel x and y.
    pub jacobian: Matrix2x3<f64>,
    /// `(tx/tz, ty/tz)` used in the Jacobian, after the frustum clamp.
    pub jacobian_ratio: [f64; 2],
    pub jacobian_clamped: [bool; 2],
}

/// Projects one Gaussian, or returns `None` when it is clipped by the depth
/// range or cannot reach the contribution floor at any pixel center.
pub fn project_gaussian(
    g: &Gaussian3D,
    pose: &CameraPose,
    intr: &PerspectiveIntrinsics,
) -> Option<SplatPrimitive2D> {
    project_indexed(0, g, pose, intr)
}

fn project_indexed(
    index: usize,
    g: &Gaussian3D,
    pose: &CameraPose,
    intr: &PerspectiveIntrinsics,
) -> Option<SplatPrimitive2D> {
    let t = pose.world_to_camera(&g.mu);
    if !(t.z > intr.near && t.z < intr.far) {
        return None;
    }
    let opacity = g.opacity();
    if opacity < MIN_ALPHA {
        return None;
    }
    let f = intr.focal();
    let (cx, cy) = intr.principal_point();
    let (tx, ty, tz) = (t.x, t.y, t.z);
    // the Jacobian is evaluated with the mean clamped to 1.3x the frustum
    let lim = [FRUSTUM_GUARD * (intr.width as f64 / 2.0) / f, FRUSTUM_GUARD * (intr.height as f64 / 2.0) / f];
    let ratio = [tx / tz, ty / tz];
    let clamped = [ratio[0].abs() > lim[0], ratio[1].abs() > lim[1]];
    let jr = [ratio[0].clamp(-lim[0], lim[0]), ratio[1].clamp(-lim[1], lim[1])];
    let jacobian = Matrix2x3::new(f / tz, 0.0, -f * jr[0] / tz, 0.0, -f / tz, f * jr[1] / tz);
    let m = jacobian * pose.r_wc();
    let cov = m * g.covariance() * m.transpose();
    let (xx, xy, yy) = (cov[(0, 0)] + LOWPASS, 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)] + LOWPASS);
    let det = xx * yy - xy * xy;
    if !(det > 0.0) {
        return None;
    }
    let conic = [yy / det, -xy / det, xx / det];
    let mean2d = [f * tx / tz + cx, -f * ty / tz + cy];

    // opacity * G >= 1/255  <=>  d^T conic d <= 2 ln(255 opacity)
    let reach = 2.0 * (opacity / MIN_ALPHA).ln();
    let radius = [
        (reach * xx).sqrt() * (1.0 + 1e-9) + 1e-9,
        (reach * yy).sqrt() * (1.0 + 1e-9) + 1e-9,
    ];
    let (w, h) = (intr.width as f64, intr.height as f64);
    if (mean2d[0] + radius[0]).floor() < (mean2d[0] - radius[0]).ceil()
        || (mean2d[1] + radius[1]).floor() < (mean2d[1] - radius[1]).ceil()
        || mean2d[0] + radius[0] < 0.0
        || mean2d[0] - radius[0] > w - 1.0
        || mean2d[1] + radius[1] < 0.0
        || mean2d[1] - radius[1] > h - 1.0
    {
        return None;
    }
    Some(SplatPrimitive2D {
        index,
        mean2d,
        cov2d: [xx, xy, yy],
        conic,
        depth: tz,
        alpha: opacity,
        color: [g.color.x, g.color.y, g.color.z],
        radius,
        cam: t,
        jacobian,
        jacobian_ratio: jr,
        jacobian_clamped: clamped,
    })
}

/// Result of a forward pass. Holds what the backward pass replays.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: FaceImage,
    /// Accumulated opacity `1 - T_final` per pixel.
    pub alpha_map: Vec<f64>,
    /// Number of tile-list entries each pixel walked before stopping.
    pub contributors: Vec<u32>,
    final_t: Vec<f64>,
    splats: Vec<SplatPrimitive2D>,
    tile_lists: Vec<Vec<u32>>,
    tiles_x: usize,
    fingerprint: u64,
}

impl RenderOutput {
    /// Projected splats in compositing (depth) order.
    pub fn splats(&self) -> &[SplatPrimitive2D] {
        &self.splats
    }
}

fn fingerprint(scene: &GaussianScene, pose: &CameraPose, intr: &PerspectiveIntrinsics) -> u64 {
    let mut h = DefaultHasher::new();
    scene.len().hash(&mut h);
    for g in &scene.gaussians {
        for v in g.to_params() {
            v.to_bits().hash(&mut h);
        }
    }
    for v in scene.background.iter().chain(pose.to_row_major().iter()) {
        v.to_bits().hash(&mut h);
    }
    for v in [intr.fov, intr.near, intr.far] {
        v.to_bits().hash(&mut h);
    }
    (intr.width, intr.height).hash(&mut h);
    h.finish()
}

/// Compact per-tile copy of the splat data touched by the inner loop.
struct TileSplats {
    mean: Vec<[f64; 2]>,
    conic: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    color: Vec<[f64; 3]>,
}

impl TileSplats {
    fn gather(list: &[u32], splats: &[SplatPrimitive2D]) -> Self {
        let mut t = TileSplats {
            mean: Vec::with_capacity(list.len()),
            conic: Vec::with_capacity(list.len()),
            alpha: Vec::with_capacity(list.len()),
            color: Vec::with_capacity(list.len()),
        };
        for &i in list {
            let s = &splats[i as usize];
            t.mean.push(s.mean2d);
            t.conic.push(s.conic);
            t.alpha.push(s.alpha);
            t.color.push(s.color);
        }
        t
    }

    /// `(G, raw alpha)` at pixel offset, or `None` when below the floor.
    #[inline(always)]
    fn eval(&self, k: usize, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
        let [mx, my] = self.mean[k];
        let [a, b, c] = self.conic[k];
        let dx = px - mx;
        let dy = py - my;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if power > 0.0 {
            return None;
        }
        let g = power.exp();
        let raw = self.alpha[k] * g;
        if raw < MIN_ALPHA {
            return None;
        }
        Some((g, raw, dx, dy))
    }
}

struct TileRect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

fn tile_rect(tile: usize, tiles_x: usize, width: usize, height: usize) -> TileRect {
    let x0 = (tile % tiles_x) * TILE;
    let y0 = (tile / tiles_x) * TILE;
    TileRect {
        x0,
        y0,
        x1: (x0 + TILE).min(width),
        y1: (y0 + TILE).min(height),
    }
}

pub fn rasterize(
    scene: &GaussianScene,
    pose: &CameraPose,
    intr: &PerspectiveIntrinsics,
) -> Result<RenderOutput> {
    intr.validate()?;
    scene.validate()?;
    let (w, h) = (intr.width, intr.height);

    let mut splats: Vec<SplatPrimitive2D> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_indexed(i, g, pose, intr))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let c0 = (s.mean2d[0] - s.radius[0]).ceil().max(0.0) as usize;
        let c1 = ((s.mean2d[0] + s.radius[0]).floor() as usize).min(w - 1);
        let r0 = (s.mean2d[1] - s.radius[1]).ceil().max(0.0) as usize;
        let r1 = ((s.mean2d[1] + s.radius[1]).floor() as usize).min(h - 1);
        for ty in r0 / TILE..=r1 / TILE {
            for tx in c0 / TILE..=c1 / TILE {
                tile_lists[ty * tiles_x + tx].push(si as u32);
            }
        }
    }

    let bg = [scene.background.x, scene.background.y, scene.background.z];
    let tile_results: Vec<(Vec<[f64; 3]>, Vec<f64>, Vec<u32>)> = tile_lists
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let rect = tile_rect(tile, tiles_x, w, h);
            let ts = TileSplats::gather(list, &splats);
            let n_px = (rect.x1 - rect.x0) * (rect.y1 - rect.y0);
            let mut colors = Vec::with_capacity(n_px);
            let mut ts_out = Vec::with_capacity(n_px);
            let mut counts = Vec::with_capacity(n_px);
            for py in rect.y0..rect.y1 {
                for px in rect.x0..rect.x1 {
                    let (pxf, pyf) = (px as f64, py as f64);
                    let mut t = 1.0;
                    let mut c = [0.0; 3];
                    let mut last = 0u32;
                    for k in 0..list.len() {
                        if t < MIN_TRANSMITTANCE {
                            break;
                        }
                        let Some((_, raw, _, _)) = ts.eval(k, pxf, pyf) else {
                            continue;
                        };
                        let alpha = raw.min(MAX_ALPHA);
                        let wgt = alpha * t;
                        let col = ts.color[k];
                        c[0] += col[0] * wgt;
                        c[1] += col[1] * wgt;
                        c[2] += col[2] * wgt;
                        t *= 1.0 - alpha;
                        last = k as u32 + 1;
                    }
                    colors.push([c[0] + t * bg[0], c[1] + t * bg[1], c[2] + t * bg[2]]);
                    ts_out.push(t);
                    counts.push(last);
                }
            }
            (colors, ts_out, counts)
        })
        .collect();

    let mut image = Image::new(h, w);
    let mut final_t = vec![1.0; w * h];
    let mut contributors = vec![0u32; w * h];
    for (tile, (colors, ts, counts)) in tile_results.into_iter().enumerate() {
        let rect = tile_rect(tile, tiles_x, w, h);
        let mut i = 0;
        for py in rect.y0..rect.y1 {
            for px in rect.x0..rect.x1 {
                image.set_pixel(py, px, colors[i]);
                final_t[py * w + px] = ts[i];
                contributors[py * w + px] = counts[i];
                i += 1;
            }
        }
    }
    let alpha_map = final_t.iter().map(|t| 1.0 - t).collect();

    Ok(RenderOutput {
        image,
        alpha_map,
        contributors,
        final_t,
        splats,
        tile_lists,
        tiles_x,
        fingerprint: fingerprint(scene, pose, intr),
    })
}

/// Per-Gaussian gradients from one or more backward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGradients {
    /// Packed like [`Gaussian3D::to_params`].
    pub params: Vec<[f64; PARAM_COUNT]>,
    /// Norm of the gradient w.r.t. the projected 2D mean, summed over views.
    pub mean2d_norm: Vec<f64>,
    /// Number of views in which each Gaussian was projected.
    pub visible: Vec<u32>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            params: vec![[0.0; PARAM_COUNT]; n],
            mean2d_norm: vec![0.0; n],
            visible: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn accumulate(&mut self, other: &SceneGradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for k in 0..PARAM_COUNT {
                a[k] += b[k];
            }
        }
        for (a, b) in self.mean2d_norm.iter_mut().zip(&other.mean2d_norm) {
            *a += b;
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a += b;
        }
    }
}

// per-splat accumulator layout: mean x/y, conic xx/xy/yy, opacity, color rgb
const ACC: usize = 9;

/// Gradients of `L = sum(grad_image * image)` w.r.t. every Gaussian
/// parameter, for the snapshot rendered by `forward`.
pub fn rasterize_backward(
    scene: &GaussianScene,
    pose: &CameraPose,
    intr: &PerspectiveIntrinsics,
    forward: &RenderOutput,
    grad_image: &Image,
) -> Result<SceneGradients> {
    if fingerprint(scene, pose, intr) != forward.fingerprint {
        return Err(Error::Contract(
            "backward pass called with a scene, pose or intrinsics different from the forward pass".into(),
        ));
    }
    let (w, h) = (intr.width, intr.height);
    if grad_image.dims() != (h, w) {
        return Err(Error::validation(format!(
            "gradient image is {}x{}, render is {h}x{w}",
            grad_image.height(),
            grad_image.width()
        )));
    }
    if !grad_image.is_finite() {
        return Err(Error::validation("gradient image has non-finite values"));
    }
    let bg = [scene.background.x, scene.background.y, scene.background.z];
    let splats = &forward.splats;
    let tiles_x = forward.tiles_x;
    let gdata = grad_image.data();

    let tile_acc: Vec<Vec<[f64; ACC]>> = forward
        .tile_lists
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let mut acc = vec![[0.0; ACC]; list.len()];
            if list.is_empty() {
                return acc;
            }
            let rect = tile_rect(tile, tiles_x, w, h);
            let ts = TileSplats::gather(list, splats);
            for py in rect.y0..rect.y1 {
                for px in rect.x0..rect.x1 {
                    let pix = py * w + px;
                    let g = [gdata[pix * 3], gdata[pix * 3 + 1], gdata[pix * 3 + 2]];
                    if g == [0.0; 3] {
                        continue;
                    }
                    let (pxf, pyf) = (px as f64, py as f64);
                    let mut t = forward.final_t[pix];
                    let mut behind = [bg[0] * t, bg[1] * t, bg[2] * t];
                    for k in (0..forward.contributors[pix] as usize).rev() {
                        let Some((gauss, raw, dx, dy)) = ts.eval(k, pxf, pyf) else {
                            continue;
                        };
                        let alpha = raw.min(MAX_ALPHA);
                        let t_k = t / (1.0 - alpha);
                        let col = ts.color[k];
                        let a = &mut acc[k];
                        let wgt = alpha * t_k;
                        a[6] += wgt * g[0];
                        a[7] += wgt * g[1];
                        a[8] += wgt * g[2];
                        let inv = 1.0 / (1.0 - alpha);
                        let d_alpha = g[0] * (t_k * col[0] - behind[0] * inv)
                            + g[1] * (t_k * col[1] - behind[1] * inv)
                            + g[2] * (t_k * col[2] - behind[2] * inv);
                        behind[0] += col[0] * wgt;
                        behind[1] += col[1] * wgt;
                        behind[2] += col[2] * wgt;
                        t = t_k;
                        if raw < MAX_ALPHA {
                            a[5] += d_alpha * gauss;
                            let d_g = d_alpha * ts.alpha[k] * gauss;
                            let [ca, cb, cc] = ts.conic[k];
                            a[0] += d_g * (ca * dx + cb * dy);
                            a[1] += d_g * (cb * dx + cc * dy);
                            a[2] += -0.5 * d_g * dx * dx;
                            a[3] += -d_g * dx * dy;
                            a[4] += -0.5 * d_g * dy * dy;
                        }
                    }
                }
            }
            acc
        })
        .collect();

    // deterministic reduction in tile order
    let mut per_splat = vec![[0.0; ACC]; splats.len()];
    for (list, acc) in forward.tile_lists.iter().zip(&tile_acc) {
        for (&si, a) in list.iter().zip(acc) {
            let dst = &mut per_splat[si as usize];
            for k in 0..ACC {
                dst[k] += a[k];
            }
        }
    }

    let mut out = SceneGradients::zeros(scene.len());
    let f = intr.focal();
    for (s, acc) in splats.iter().zip(&per_splat) {
        let g = &scene.gaussians[s.index];
        out.params[s.index] = splat_to_param_grads(g, s, pose.r_wc(), f, acc);
        out.mean2d_norm[s.index] = (acc[0] * acc[0] + acc[1] * acc[1]).sqrt();
        out.visible[s.index] = 1;
    }
    Ok(out)
}

/// Chains 2D splat gradients to the Gaussian's parameters.
fn splat_to_param_grads(
    g: &Gaussian3D,
    s: &SplatPrimitive2D,
    r_wc: &Matrix3<f64>,
    f: f64,
    acc: &[f64; ACC],
) -> [f64; PARAM_COUNT] {
    let mut out = [0.0; PARAM_COUNT];

    // color and opacity
    out[11] = acc[6];
    out[12] = acc[7];
    out[13] = acc[8];
    let op = s.alpha;
    out[10] = acc[5] * op * (1.0 - op);

    // conic -> dilated covariance (full symmetric-matrix gradients)
    let conic = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let g_conic = Matrix2::new(acc[2], 0.5 * acc[3], 0.5 * acc[3], acc[4]);
    let g_cov2 = -(conic * g_conic * conic);

    // cov2 = M Sigma M^T with M = J R_wc
    let jac = s.jacobian;
    let m = jac * r_wc;
    let sigma = g.covariance();
    let g_m = 2.0 * g_cov2 * m * sigma;
    let g_j = g_m * r_wc.transpose();
    let g_sigma = m.transpose() * g_cov2 * m;

    // camera-frame mean from the Jacobian and the projected mean
    let (tx, ty, tz) = (s.cam.x, s.cam.y, s.cam.z);
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    let mut g_t = Vector3::zeros();
    g_t.z += g_j[(0, 0)] * (-f / tz2);
    g_t.z += g_j[(1, 1)] * (f / tz2);
    // J02 = -f rx / tz and J12 = f ry / tz, with r = t/tz unless clamped
    let [rx, ry] = s.jacobian_ratio;
    if s.jacobian_clamped[0] {
        g_t.z += g_j[(0, 2)] * (f * rx / tz2);
    } else {
        g_t.x += g_j[(0, 2)] * (-f / tz2);
        g_t.z += g_j[(0, 2)] * (2.0 * f * tx / tz3);
    }
    if s.jacobian_clamped[1] {
        g_t.z += g_j[(1, 2)] * (-f * ry / tz2);
    } else {
        g_t.y += g_j[(1, 2)] * (f / tz2);
        g_t.z += g_j[(1, 2)] * (-2.0 * f * ty / tz3);
    }
    g_t.x += acc[0] * f / tz;
    g_t.z += acc[0] * (-f * tx / tz2);
    g_t.y += acc[1] * (-f / tz);
    g_t.z += acc[1] * (f * ty / tz2);
    let g_mu = r_wc.transpose() * g_t;
    out[0] = g_mu.x;
    out[1] = g_mu.y;
    out[2] = g_mu.z;

    // Sigma = L L^T with L = R(q) diag(s)
    let qn = normalized(&g.rot_q);
    let rot = crate::scene::quat_to_matrix(&qn);
    let scale = g.scale();
    let l = rot * Matrix3::from_diagonal(&scale);
    let g_l = 2.0 * g_sigma * l;
    let (lo, hi) = (MIN_SCALE.ln(), MAX_SCALE.ln());
    for k in 0..3 {
        let ds = (0..3).map(|i| g_l[(i, k)] * rot[(i, k)]).sum::<f64>();
        let ls = g.log_scale[k];
        out[7 + k] = if ls > lo && ls < hi { ds * scale[k] } else { 0.0 };
    }
    let g_r = g_l * Matrix3::from_diagonal(&scale);
    let dq = quat_matrix_grad(&qn, &g_r);
    let norm = g.rot_q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = (0..4).map(|k| dq[k] * qn[k]).sum();
    for k in 0..4 {
        out[3 + k] = (dq[k] - qn[k] * dot) / norm;
    }
    out
}

/// Gradient w.r.t. a unit quaternion `(w, x, y, z)` given `dL/dR`.
fn quat_matrix_grad(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let r = |i: usize, j: usize| g[(i, j)];
    [
        2.0 * (-z * r(0, 1) + y * r(0, 2) + z * r(1, 0) - x * r(1, 2) - y * r(2, 0) + x * r(2, 1)),
        2.0 * (y * r(0, 1) + z * r(0, 2) + y * r(1, 0) - 2.0 * x * r(1, 1) - w * r(1, 2) + z * r(2, 0)
            + w * r(2, 1)
            - 2.0 * x * r(2, 2)),
        2.0 * (-2.0 * y * r(0, 0) + x * r(0, 1) + w * r(0, 2) + x * r(1, 0) + z * r(1, 2) - w * r(2, 0)
            + z * r(2, 1)
            - 2.0 * y * r(2, 2)),
        2.0 * (-2.0 * z * r(0, 0) - w * r(0, 1) + x * r(0, 2) + w * r(1, 0) - 2.0 * z * r(1, 1)
            + y * r(1, 2)
            + x * r(2, 0)
            + y * r(2, 1)),
    ]
}
