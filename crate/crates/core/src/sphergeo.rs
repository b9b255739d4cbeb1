//! Spherical and cubemap geometry.
//!
//! Conventions used throughout the crate:
//!
//! * Cube (and camera) frame: `x` right, `y` up, `z` forward. The unit cube
//!   spans `[-0.5, 0.5]` on every axis; the Front face is the plane `z = 0.5`.
//! * Longitude `theta = atan2(x, z)` in `(-pi, pi]`, latitude
//!   `phi = atan2(y, hypot(x, z))` in `[-pi/2, pi/2]`.
//! * Equirectangular pixel `(u, v)`: `u = (theta/2pi + 0.5) W - 0.5`,
//!   `v = (-phi/pi + 0.5) H - 0.5`. Coordinate `k.0` is the center of texel
//!   `k`; columns wrap, rows clamp.
//! * Face images: row 0 is the top of the view (camera `+y`), column 0 its
//!   left edge (camera `-x`). Samples are placed at the ends of the grid
//!   range (corner samples hit the face corners).

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::imagebuf::{clamp_taps, ErpImage, FaceImage, Image};

/// Rotation orthonormality tolerance accepted by [`CameraPose::new`].
pub const POSE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalCoord {
    /// Longitude in radians, `(-pi, pi]`.
    pub theta: f64,
    /// Latitude in radians, `[-pi/2, pi/2]`.
    pub phi: f64,
}

impl SphericalCoord {
    /// Normalizes into the canonical ranges: longitude wraps, latitude clamps.
    pub fn new(theta: f64, phi: f64) -> Self {
        let mut theta = (theta + PI).rem_euclid(2.0 * PI) - PI;
        if theta <= -PI {
            theta = PI;
        }
        Self {
            theta,
            phi: phi.clamp(-FRAC_PI_2, FRAC_PI_2),
        }
    }

    /// Unit direction in the cube frame.
    pub fn to_dir(self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(cp * st, sp, cp * ct)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErpPixel {
    pub u: f64,
    pub v: f64,
}

impl ErpPixel {
    /// Applies the boundary policy: `u` wraps into `[-0.5, W - 0.5)`, `v`
    /// clamps into `[-0.5, H - 0.5]`.
    pub fn wrapped(self, erp_h: usize, erp_w: usize) -> Self {
        let w = erp_w as f64;
        let h = erp_h as f64;
        Self {
            u: (self.u + 0.5).rem_euclid(w) - 0.5,
            v: self.v.clamp(-0.5, h - 0.5),
        }
    }
}

pub fn dir_to_spherical(x: f64, y: f64, z: f64) -> Result<SphericalCoord> {
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::Domain("direction has non-finite components".into()));
    }
    if x == 0.0 && y == 0.0 && z == 0.0 {
        return Err(Error::Domain("zero direction has no spherical coordinates".into()));
    }
    let mut theta = if x == 0.0 && z == 0.0 { 0.0 } else { x.atan2(z) };
    if theta == -PI {
        theta = PI;
    }
    let phi = y.atan2(x.hypot(z));
    Ok(SphericalCoord { theta, phi })
}

pub fn spherical_to_erp_pixel(c: SphericalCoord, erp_h: usize, erp_w: usize) -> ErpPixel {
    ErpPixel {
        u: (c.theta / (2.0 * PI) + 0.5) * erp_w as f64 - 0.5,
        v: (-c.phi / PI + 0.5) * erp_h as f64 - 0.5,
    }
}

/// Inverse of [`spherical_to_erp_pixel`].
pub fn erp_pixel_to_spherical(p: ErpPixel, erp_h: usize, erp_w: usize) -> SphericalCoord {
    SphericalCoord {
        theta: ((p.u + 0.5) / erp_w as f64 - 0.5) * 2.0 * PI,
        phi: -((p.v + 0.5) / erp_h as f64 - 0.5) * PI,
    }
}

/// Unit direction through the center of ERP texel `(row, col)`.
pub fn erp_texel_dir(row: usize, col: usize, erp_h: usize, erp_w: usize) -> Vector3<f64> {
    erp_pixel_to_spherical(
        ErpPixel {
            u: col as f64,
            v: row as f64,
        },
        erp_h,
        erp_w,
    )
    .to_dir()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CubeFaceId {
    Front,
    Right,
    Back,
    Left,
    Up,
    Down,
}

impl CubeFaceId {
    /// Fixed enumeration order, also the tie-break order for face assignment.
    pub const ALL: [CubeFaceId; 6] = [
        CubeFaceId::Front,
        CubeFaceId::Right,
        CubeFaceId::Back,
        CubeFaceId::Left,
        CubeFaceId::Up,
        CubeFaceId::Down,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CubeFaceId::Front => "front",
            CubeFaceId::Right => "right",
            CubeFaceId::Back => "back",
            CubeFaceId::Left => "left",
            CubeFaceId::Up => "up",
            CubeFaceId::Down => "down",
        }
    }

    /// Outward unit normal of the face.
    pub fn axis(self) -> Vector3<f64> {
        match self {
            CubeFaceId::Front => Vector3::new(0.0, 0.0, 1.0),
            CubeFaceId::Right => Vector3::new(1.0, 0.0, 0.0),
            CubeFaceId::Back => Vector3::new(0.0, 0.0, -1.0),
            CubeFaceId::Left => Vector3::new(-1.0, 0.0, 0.0),
            CubeFaceId::Up => Vector3::new(0.0, 1.0, 0.0),
            CubeFaceId::Down => Vector3::new(0.0, -1.0, 0.0),
        }
    }

    /// Rotation taking cube-frame vectors into this face's camera frame:
    /// `R_y^T(psi)` for the horizontal faces, `R_x^T(psi)` for up/down.
    pub fn camera_rotation(self) -> Matrix3<f64> {
        match self {
            CubeFaceId::Front => rot_y_deg(0.0).transpose(),
            CubeFaceId::Right => rot_y_deg(90.0).transpose(),
            CubeFaceId::Back => rot_y_deg(180.0).transpose(),
            CubeFaceId::Left => rot_y_deg(270.0).transpose(),
            CubeFaceId::Up => rot_x_deg(-90.0).transpose(),
            CubeFaceId::Down => rot_x_deg(90.0).transpose(),
        }
    }

    /// Face with the largest absolute axis component; ties go to the
    /// earlier face in [`CubeFaceId::ALL`].
    pub fn dominant(d: &Vector3<f64>) -> CubeFaceId {
        let mut best = CubeFaceId::Front;
        let mut best_val = f64::NEG_INFINITY;
        for face in CubeFaceId::ALL {
            let v = face.axis().dot(d);
            if v > best_val {
                best_val = v;
                best = face;
            }
        }
        best
    }
}

pub fn rot_x(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    rot_x_sc(s, c)
}

pub fn rot_y(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    rot_y_sc(s, c)
}

/// [`rot_x`] in degrees, exact for multiples of 90.
pub fn rot_x_deg(deg: f64) -> Matrix3<f64> {
    let (s, c) = sin_cos_deg(deg);
    rot_x_sc(s, c)
}

/// [`rot_y`] in degrees, exact for multiples of 90.
pub fn rot_y_deg(deg: f64) -> Matrix3<f64> {
    let (s, c) = sin_cos_deg(deg);
    rot_y_sc(s, c)
}

fn rot_x_sc(s: f64, c: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y_sc(s: f64, c: f64) -> Matrix3<f64> {
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let quarter = deg / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        deg.to_radians().sin_cos()
    }
}

/// Max-abs deviation of `r^T r` from identity and `|det r - 1|`.
pub fn rotation_error(r: &Matrix3<f64>) -> (f64, f64) {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    (ortho, (r.determinant() - 1.0).abs())
}

/// World-to-camera transform `x_cam = r_wc * x_world + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    r_wc: Matrix3<f64>,
    t: Vector3<f64>,
}

impl CameraPose {
    pub fn new(r_wc: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let (ortho, det) = rotation_error(&r_wc);
        if !(ortho <= POSE_TOLERANCE && det <= POSE_TOLERANCE) || !t.iter().all(|v| v.is_finite()) {
            return Err(Error::validation(format!(
                "pose rotation is not orthonormal (|R^T R - I| = {ortho:.3e}, |det - 1| = {det:.3e})"
            )));
        }
        Ok(Self { r_wc, t })
    }

    pub fn identity() -> Self {
        Self {
            r_wc: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    /// Camera at `center` with rotation `r_wc`.
    pub fn from_center(r_wc: Matrix3<f64>, center: Vector3<f64>) -> Result<Self> {
        Self::new(r_wc, -(r_wc * center))
    }

    pub fn r_wc(&self) -> &Matrix3<f64> {
        &self.r_wc
    }

    pub fn t(&self) -> &Vector3<f64> {
        &self.t
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r_wc.transpose() * self.t)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r_wc * p + self.t
    }

    /// Applies `r` in the camera frame: `[r * r_wc | r * t]`. The camera
    /// center is unchanged.
    pub fn rotated_in_camera(&self, r: &Matrix3<f64>) -> CameraPose {
        CameraPose {
            r_wc: r * self.r_wc,
            t: r * self.t,
        }
    }

    /// Row-major `[R | T]` as 12 values.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.r_wc;
        let t = &self.t;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Self::new(r, Vector3::new(v[3], v[7], v[11]))
    }
}

/// Yaw pre-rotation that turns the base cube into the transition cube.
pub fn transition_rotation() -> Matrix3<f64> {
    rot_y_deg(45.0).transpose()
}

/// The six cube-face poses, indexed in [`CubeFaceId::ALL`] order.
pub fn base_view_poses(pose: &CameraPose) -> Result<[CameraPose; 6]> {
    let pose = CameraPose::new(pose.r_wc, pose.t)?;
    Ok(CubeFaceId::ALL.map(|f| pose.rotated_in_camera(&f.camera_rotation())))
}

/// The six transition-plane poses: the base set of the pose pre-rotated by
/// 45 degrees of yaw.
pub fn transition_view_poses(pose: &CameraPose) -> Result<[CameraPose; 6]> {
    let pose = CameraPose::new(pose.r_wc, pose.t)?;
    base_view_poses(&pose.rotated_in_camera(&transition_rotation()))
}

/// Nominal padded field of view, `2 pi p / H + pi / 2`.
pub fn padded_fov(p: usize, erp_h: usize) -> f64 {
    2.0 * PI * p as f64 / erp_h as f64 + FRAC_PI_2
}

/// Resolution and padding of one cube face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceLayout {
    /// Unpadded samples per side.
    pub face_res: usize,
    /// Padding in ERP-height pixels.
    pub padding_p: usize,
    pub erp_h: usize,
    pub erp_w: usize,
    /// Extra face pixels added on each side.
    pub pad_px: usize,
    /// Padded samples per side, `face_res + 2 * pad_px`.
    pub size: usize,
    /// Half-width of the sampling grid on the cube plane, `0.5 + 2p/H`.
    pub half_extent: f64,
}

impl FaceLayout {
    pub fn new(face_res: usize, padding_p: usize, erp_h: usize, erp_w: usize) -> Result<Self> {
        if face_res < 2 {
            return Err(Error::validation(format!("face resolution must be >= 2, got {face_res}")));
        }
        if erp_h < 2 || erp_w < 2 {
            return Err(Error::validation(format!(
                "equirectangular size must be at least 2x2, got {erp_h}x{erp_w}"
            )));
        }
        let ratio = 2.0 * padding_p as f64 / erp_h as f64;
        if ratio >= 0.5 {
            return Err(Error::validation(format!(
                "padding too large: 2*p/H = {ratio} must stay below 0.5 \
                 (the padded grid range [-0.5 - 2p/H, 0.5 + 2p/H] would reach the opposite face center)"
            )));
        }
        let pad_px = (ratio * (face_res - 1) as f64).round() as usize;
        Ok(Self {
            face_res,
            padding_p,
            erp_h,
            erp_w,
            pad_px,
            size: face_res + 2 * pad_px,
            half_extent: 0.5 + ratio,
        })
    }

    /// Sampling range on the cube plane, per axis.
    pub fn grid_range(&self) -> (f64, f64) {
        (-self.half_extent, self.half_extent)
    }

    /// Cube-plane coordinate of sample `i` along an axis.
    pub fn plane_coord(&self, i: usize) -> f64 {
        let t = i as f64 / (self.size - 1) as f64;
        -self.half_extent * (1.0 - t) + self.half_extent * t
    }

    /// Pinhole focal length (pixels) that renders exactly this grid.
    pub fn focal(&self) -> f64 {
        (self.size - 1) as f64 / (4.0 * self.half_extent)
    }

    /// Field of view of a pinhole camera whose pixel centers coincide with
    /// the grid samples, for `focal = (size / 2) / tan(fov / 2)`.
    pub fn render_fov(&self) -> f64 {
        let n = self.size as f64;
        2.0 * (2.0 * self.half_extent * n / (n - 1.0)).atan()
    }

    /// Point on the face plane (distance 0.5) for face pixel `(row, col)`,
    /// in the face's camera frame.
    pub fn camera_point(&self, row: usize, col: usize) -> Vector3<f64> {
        Vector3::new(self.plane_coord(col), self.plane_coord(self.size - 1 - row), 0.5)
    }

    /// Continuous face pixel `(col, row)` of a camera-frame direction, or
    /// `None` behind the camera.
    pub fn camera_dir_to_pixel(&self, d: &Vector3<f64>) -> Option<(f64, f64)> {
        if d.z <= 0.0 {
            return None;
        }
        let x = 0.5 * d.x / d.z;
        let y = 0.5 * d.y / d.z;
        let e = self.half_extent;
        let span = (self.size - 1) as f64;
        Some(((x + e) / (2.0 * e) * span, (e - y) / (2.0 * e) * span))
    }
}

/// Face pixel to ERP pixel lookup for one cube face.
#[derive(Clone, Debug)]
pub struct SamplingGrid {
    pub face: CubeFaceId,
    pub layout: FaceLayout,
    /// Row-major, `layout.size` squared entries.
    pub coords: Vec<ErpPixel>,
}

impl SamplingGrid {
    pub fn from_layout(face: CubeFaceId, layout: &FaceLayout) -> Self {
        let to_cube = face.camera_rotation().transpose();
        let n = layout.size;
        let mut coords = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                let p = to_cube * layout.camera_point(row, col);
                // points on the face plane are never the zero vector
                let s = dir_to_spherical(p.x, p.y, p.z).expect("face point is non-zero");
                coords.push(spherical_to_erp_pixel(s, layout.erp_h, layout.erp_w));
            }
        }
        Self {
            face,
            layout: *layout,
            coords,
        }
    }

    /// 3D point on the cube for grid sample `(row, col)`.
    pub fn cube_point(&self, row: usize, col: usize) -> Vector3<f64> {
        self.face.camera_rotation().transpose() * self.layout.camera_point(row, col)
    }

    pub fn at(&self, row: usize, col: usize) -> ErpPixel {
        self.coords[row * self.layout.size + col]
    }
}

pub fn face_grid(
    face: CubeFaceId,
    face_res: usize,
    p: usize,
    erp_h: usize,
    erp_w: usize,
) -> Result<SamplingGrid> {
    let layout = FaceLayout::new(face_res, p, erp_h, erp_w)?;
    Ok(SamplingGrid::from_layout(face, &layout))
}

/// Cuts an equirectangular image into six (padded) cube faces, in
/// [`CubeFaceId::ALL`] order.
pub fn erp_to_cubemap(erp: &ErpImage, face_res: usize, p: usize) -> Result<Vec<FaceImage>> {
    erp.check_erp()?;
    let layout = FaceLayout::new(face_res, p, erp.height(), erp.width())?;
    Ok(erp_to_cubemap_with(erp, &layout))
}

pub(crate) fn erp_to_cubemap_with(erp: &ErpImage, layout: &FaceLayout) -> Vec<FaceImage> {
    CubeFaceId::ALL
        .iter()
        .map(|&face| {
            let grid = SamplingGrid::from_layout(face, layout);
            let n = layout.size;
            Image::from_fn(n, n, |r, c| {
                let px = grid.at(r, c);
                erp.sample_erp(px.u, px.v)
            })
        })
        .collect()
}

/// One weighted face texel contributing to an ERP pixel.
#[derive(Clone, Copy, Debug)]
struct Tap {
    face: u8,
    texel: u32,
    weight: f64,
}

/// Sparse linear map from six face images to an ERP image.
///
/// Each ERP texel direction is bilinearly sampled from every face whose
/// padded grid covers it. Without padding only the dominant face
/// contributes. With padding, faces are weighted by a linear ramp that is
/// 1 inside the unpadded face and falls to 0 at the padded grid edge, and
/// weights are normalized per pixel.
#[derive(Clone, Debug)]
pub struct StitchPlan {
    layout: FaceLayout,
    offsets: Vec<u32>,
    taps: Vec<Tap>,
}

impl StitchPlan {
    pub fn new(layout: &FaceLayout) -> Self {
        let (h, w) = (layout.erp_h, layout.erp_w);
        let rotations = CubeFaceId::ALL.map(|f| f.camera_rotation());
        let mut offsets = Vec::with_capacity(h * w + 1);
        let mut taps = Vec::with_capacity(h * w * 4);
        offsets.push(0);
        let ramp = 2.0 * layout.half_extent - 1.0;
        let mut weighted: Vec<(usize, f64, f64, f64)> = Vec::with_capacity(6);
        for row in 0..h {
            for col in 0..w {
                let d = erp_texel_dir(row, col, h, w);
                weighted.clear();
                if layout.padding_p == 0 {
                    let face = CubeFaceId::dominant(&d);
                    let dc = rotations[face.index()] * d;
                    let (x, y) = layout.camera_dir_to_pixel(&dc).expect("dominant face is in front");
                    weighted.push((face.index(), 1.0, x, y));
                } else {
                    for (fi, r) in rotations.iter().enumerate() {
                        let dc = r * d;
                        if dc.z <= 0.0 {
                            continue;
                        }
                        let m = (dc.x / dc.z).abs().max((dc.y / dc.z).abs());
                        let wgt = if m <= 1.0 {
                            1.0
                        } else {
                            (1.0 - (m - 1.0) / ramp).max(0.0)
                        };
                        if wgt > 0.0 {
                            let (x, y) = layout.camera_dir_to_pixel(&dc).expect("z > 0");
                            weighted.push((fi, wgt, x, y));
                        }
                    }
                    let total: f64 = weighted.iter().map(|e| e.1).sum();
                    for e in weighted.iter_mut() {
                        e.1 /= total;
                    }
                }
                for &(fi, wf, x, y) in &weighted {
                    push_bilinear(&mut taps, fi, wf, x, y, layout.size);
                }
                offsets.push(taps.len() as u32);
            }
        }
        Self {
            layout: *layout,
            offsets,
            taps,
        }
    }

    pub fn layout(&self) -> &FaceLayout {
        &self.layout
    }

    fn check_faces(&self, faces: &[FaceImage]) -> Result<()> {
        if faces.len() != 6 {
            return Err(Error::validation(format!("expected 6 faces, got {}", faces.len())));
        }
        let n = self.layout.size;
        for (i, f) in faces.iter().enumerate() {
            if f.dims() != (n, n) {
                return Err(Error::validation(format!(
                    "face {} is {}x{}, layout expects {n}x{n}",
                    CubeFaceId::ALL[i].name(),
                    f.height(),
                    f.width()
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&self, faces: &[FaceImage]) -> Result<ErpImage> {
        self.check_faces(faces)?;
        let (h, w) = (self.layout.erp_h, self.layout.erp_w);
        let mut out = Image::new(h, w);
        let data = out.data_mut();
        for px in 0..h * w {
            let mut acc = [0.0; 3];
            for tap in &self.taps[self.offsets[px] as usize..self.offsets[px + 1] as usize] {
                let src = faces[tap.face as usize].data();
                let i = tap.texel as usize * 3;
                acc[0] += tap.weight * src[i];
                acc[1] += tap.weight * src[i + 1];
                acc[2] += tap.weight * src[i + 2];
            }
            data[px * 3..px * 3 + 3].copy_from_slice(&acc);
        }
        Ok(out)
    }

    /// Transpose of [`StitchPlan::apply`]: maps an ERP-domain gradient to
    /// the six face gradients.
    pub fn adjoint(&self, grad: &ErpImage) -> Result<Vec<FaceImage>> {
        let (h, w) = (self.layout.erp_h, self.layout.erp_w);
        if grad.dims() != (h, w) {
            return Err(Error::validation(format!(
                "gradient is {}x{}, plan expects {h}x{w}",
                grad.height(),
                grad.width()
            )));
        }
        let n = self.layout.size;
        let mut faces = vec![Image::new(n, n); 6];
        let g = grad.data();
        for px in 0..h * w {
            let gp = [g[px * 3], g[px * 3 + 1], g[px * 3 + 2]];
            for tap in &self.taps[self.offsets[px] as usize..self.offsets[px + 1] as usize] {
                let dst = faces[tap.face as usize].data_mut();
                let i = tap.texel as usize * 3;
                dst[i] += tap.weight * gp[0];
                dst[i + 1] += tap.weight * gp[1];
                dst[i + 2] += tap.weight * gp[2];
            }
        }
        Ok(faces)
    }

    /// Per-pixel sum of weights (1 everywhere for a well-formed plan).
    pub fn weight_sums(&self) -> Vec<f64> {
        (0..self.offsets.len() - 1)
            .map(|px| {
                self.taps[self.offsets[px] as usize..self.offsets[px + 1] as usize]
                    .iter()
                    .map(|t| t.weight)
                    .sum()
            })
            .collect()
    }

    /// Faces contributing to ERP pixel `(row, col)`.
    pub fn faces_at(&self, row: usize, col: usize) -> Vec<CubeFaceId> {
        let px = row * self.layout.erp_w + col;
        let mut out: Vec<CubeFaceId> = Vec::new();
        for tap in &self.taps[self.offsets[px] as usize..self.offsets[px + 1] as usize] {
            let f = CubeFaceId::ALL[tap.face as usize];
            if !out.contains(&f) {
                out.push(f);
            }
        }
        out
    }
}

fn push_bilinear(taps: &mut Vec<Tap>, face: usize, weight: f64, x: f64, y: f64, n: usize) {
    let (c0, c1, fu) = clamp_taps(x, n);
    let (r0, r1, fv) = clamp_taps(y, n);
    let corners = [
        (r0, c0, (1.0 - fu) * (1.0 - fv)),
        (r0, c1, fu * (1.0 - fv)),
        (r1, c0, (1.0 - fu) * fv),
        (r1, c1, fu * fv),
    ];
    for (r, c, b) in corners {
        if b != 0.0 {
            taps.push(Tap {
                face: face as u8,
                texel: (r * n + c) as u32,
                weight: weight * b,
            });
        }
    }
}

/// Reassembles an ERP image from six faces laid out per `layout`.
pub fn cubemap_to_erp(faces: &[FaceImage], layout: &FaceLayout) -> Result<ErpImage> {
    StitchPlan::new(layout).apply(faces)
}
