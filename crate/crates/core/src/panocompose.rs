//! Panorama assembly from rendered perspective views.
//!
//! Base faces stitch into `E_c`, transition faces into `E_t`, and the
//! composite is `E_r = (rotate(E_t, -45deg) + E_c) / 2`. Every step is
//! linear in the face pixels, so [`PanoPipeline::backward`] pushes an
//! ERP-domain gradient back to the scene through exact adjoints.

use std::f64::consts::{FRAC_PI_4, PI};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagebuf::{wrap_taps, ErpImage, FaceImage, Image};
use crate::raster::{rasterize, rasterize_backward, PerspectiveIntrinsics, RenderOutput, SceneGradients};
use crate::scene::GaussianScene;
use crate::sphergeo::{base_view_poses, transition_view_poses, CameraPose, FaceLayout, StitchPlan};

/// Yaw offset between the base and transition cubes.
pub const TRANSITION_YAW: f64 = FRAC_PI_4;

/// Recovers the unpadded face resolution from a padded face size.
fn face_res_for(size: usize, p: usize, erp_h: usize) -> Result<usize> {
    (2..=size)
        .find(|&r| FaceLayout::new(r, p, erp_h, 2 * erp_h).is_ok_and(|l| l.size == size))
        .ok_or_else(|| {
            Error::validation(format!(
                "face size {size} is not a padded face size for padding {p} at ERP height {erp_h}"
            ))
        })
}

/// Stitches six faces (in cube-face order) rendered with padding `p` into
/// an `erp_h x 2 erp_h` panorama.
pub fn stitch_views(faces: &[FaceImage], p: usize, erp_h: usize) -> Result<ErpImage> {
    if faces.len() != 6 {
        return Err(Error::validation(format!("expected 6 faces, got {}", faces.len())));
    }
    let size = faces[0].width();
    if faces.iter().any(|f| f.dims() != (size, size)) {
        return Err(Error::validation("faces must be square and of equal size"));
    }
    let face_res = face_res_for(size, p, erp_h)?;
    let layout = FaceLayout::new(face_res, p, erp_h, 2 * erp_h)?;
    StitchPlan::new(&layout).apply(faces)
}

/// Column shift applied by a yaw of `psi`, snapped to an integer when it is
/// one up to rounding.
fn yaw_shift(psi: f64, width: usize) -> f64 {
    let s = psi / (2.0 * PI) * width as f64;
    let r = s.round();
    if (s - r).abs() < 1e-9 {
        r
    } else {
        s
    }
}

/// Yaw rotation: `out(theta) = in(theta + psi)`, a circular column shift by
/// `psi / 2pi * W` (bilinear for fractional shifts).
pub fn rotate_erp_yaw(e: &ErpImage, psi: f64) -> Result<ErpImage> {
    e.check_erp()?;
    let (h, w) = e.dims();
    let s = yaw_shift(psi, w);
    let src = e.data();
    let mut out = Image::new(h, w);
    let dst = out.data_mut();
    for col in 0..w {
        let (c0, c1, f) = wrap_taps(col as f64 + s, w);
        for row in 0..h {
            let o = (row * w + col) * 3;
            let a = (row * w + c0) * 3;
            let b = (row * w + c1) * 3;
            for k in 0..3 {
                dst[o + k] = if f == 0.0 {
                    src[a + k]
                } else {
                    (1.0 - f) * src[a + k] + f * src[b + k]
                };
            }
        }
    }
    Ok(out)
}

/// Transpose of [`rotate_erp_yaw`] for the same `psi`.
pub fn rotate_erp_yaw_adjoint(grad: &ErpImage, psi: f64) -> Result<ErpImage> {
    grad.check_erp()?;
    let (h, w) = grad.dims();
    let s = yaw_shift(psi, w);
    let g = grad.data();
    let mut out = Image::new(h, w);
    let dst = out.data_mut();
    for col in 0..w {
        let (c0, c1, f) = wrap_taps(col as f64 + s, w);
        for row in 0..h {
            let o = (row * w + col) * 3;
            let a = (row * w + c0) * 3;
            let b = (row * w + c1) * 3;
            for k in 0..3 {
                dst[a + k] += (1.0 - f) * g[o + k];
                if f != 0.0 {
                    dst[b + k] += f * g[o + k];
                }
            }
        }
    }
    Ok(out)
}

/// `E_r = (rotate(E_t, -45deg) + E_c) / 2`.
pub fn compose_er(e_c: &ErpImage, e_t: &ErpImage) -> Result<ErpImage> {
    e_c.same_dims(e_t)?;
    let back = rotate_erp_yaw(e_t, -TRANSITION_YAW)?;
    e_c.lincomb(0.5, &back, 0.5)
}

/// Gradients of [`compose_er`] w.r.t. `E_c` and `E_t`.
pub fn compose_er_backward(grad: &ErpImage) -> Result<(ErpImage, ErpImage)> {
    let half = grad.map(|v| 0.5 * v);
    let g_t = rotate_erp_yaw_adjoint(&half, -TRANSITION_YAW)?;
    Ok((half, g_t))
}

/// Rendering setup shared by training, evaluation and the CLI.
#[derive(Clone, Debug)]
pub struct PanoPipeline {
    layout: FaceLayout,
    plan: StitchPlan,
    intr: PerspectiveIntrinsics,
    transition: bool,
}

/// Everything one pipeline render produces.
#[derive(Clone, Debug)]
pub struct PanoRender {
    /// Base views, then transition views when enabled.
    pub poses: Vec<CameraPose>,
    pub views: Vec<RenderOutput>,
    pub e_c: ErpImage,
    pub e_t: Option<ErpImage>,
    /// The composite, or `E_c` itself without transition planes.
    pub e_r: ErpImage,
}

impl PanoPipeline {
    pub fn new(erp_h: usize, face_res: usize, padding_p: usize, transition: bool) -> Result<Self> {
        let layout = FaceLayout::new(face_res, padding_p, erp_h, 2 * erp_h)?;
        if transition && (2 * erp_h) % 8 != 0 {
            return Err(Error::validation(format!(
                "transition planes need an ERP width divisible by 8, got {}",
                2 * erp_h
            )));
        }
        let intr = PerspectiveIntrinsics::new(layout.render_fov(), layout.size, layout.size)?;
        Ok(Self {
            plan: StitchPlan::new(&layout),
            layout,
            intr,
            transition,
        })
    }

    pub fn layout(&self) -> &FaceLayout {
        &self.layout
    }

    pub fn intrinsics(&self) -> &PerspectiveIntrinsics {
        &self.intr
    }

    pub fn uses_transition(&self) -> bool {
        self.transition
    }

    pub fn view_count(&self) -> usize {
        if self.transition {
            12
        } else {
            6
        }
    }

    /// Per-view poses: six base faces, then six transition faces.
    pub fn view_poses(&self, pose: &CameraPose) -> Result<Vec<CameraPose>> {
        let mut out = base_view_poses(pose)?.to_vec();
        if self.transition {
            out.extend(transition_view_poses(pose)?);
        }
        Ok(out)
    }

    /// Ground-truth views for a panorama, matching [`Self::view_poses`].
    pub fn cut_views(&self, erp: &ErpImage) -> Result<Vec<FaceImage>> {
        erp.check_erp()?;
        if erp.dims() != (self.layout.erp_h, self.layout.erp_w) {
            return Err(Error::validation(format!(
                "panorama is {}x{}, pipeline expects {}x{}",
                erp.height(),
                erp.width(),
                self.layout.erp_h,
                self.layout.erp_w
            )));
        }
        let mut out = crate::sphergeo::erp_to_cubemap_with(erp, &self.layout);
        if self.transition {
            let rotated = rotate_erp_yaw(erp, TRANSITION_YAW)?;
            out.extend(crate::sphergeo::erp_to_cubemap_with(&rotated, &self.layout));
        }
        Ok(out)
    }

    pub fn render_view(&self, scene: &GaussianScene, pose: &CameraPose) -> Result<RenderOutput> {
        rasterize(scene, pose, &self.intr)
    }

    pub fn render(&self, scene: &GaussianScene, pose: &CameraPose) -> Result<PanoRender> {
        let poses = self.view_poses(pose)?;
        let views = poses
            .par_iter()
            .map(|p| rasterize(scene, p, &self.intr))
            .collect::<Result<Vec<_>>>()?;
        let faces: Vec<FaceImage> = views.iter().map(|v| v.image.clone()).collect();
        let e_c = self.plan.apply(&faces[..6])?;
        let (e_t, e_r) = if self.transition {
            let e_t = self.plan.apply(&faces[6..])?;
            let e_r = compose_er(&e_c, &e_t)?;
            (Some(e_t), e_r)
        } else {
            (None, e_c.clone())
        };
        Ok(PanoRender {
            poses,
            views,
            e_c,
            e_t,
            e_r,
        })
    }

    /// Per-view gradients for an ERP-domain gradient on `E_r`.
    pub fn view_gradients(&self, grad_er: &ErpImage) -> Result<Vec<FaceImage>> {
        if self.transition {
            let (g_c, g_t) = compose_er_backward(grad_er)?;
            let mut out = self.plan.adjoint(&g_c)?;
            out.extend(self.plan.adjoint(&g_t)?);
            Ok(out)
        } else {
            self.plan.adjoint(grad_er)
        }
    }

    /// Scene gradients of `sum(grad_er * E_r)` for a render from [`Self::render`].
    pub fn backward(
        &self,
        scene: &GaussianScene,
        render: &PanoRender,
        grad_er: &ErpImage,
    ) -> Result<SceneGradients> {
        let grads = self.view_gradients(grad_er)?;
        let per_view = render
            .poses
            .par_iter()
            .zip(&render.views)
            .zip(&grads)
            .map(|((p, v), g)| rasterize_backward(scene, p, &self.intr, v, g))
            .collect::<Result<Vec<_>>>()?;
        let mut total = SceneGradients::zeros(scene.len());
        for g in &per_view {
            total.accumulate(g);
        }
        Ok(total)
    }
}
