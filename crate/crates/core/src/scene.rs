//! Gaussian scene model and persistence.
//!
//! Each primitive stores unconstrained parameters: a quaternion that is
//! normalized on use, per-axis log-scales and an opacity logit. Color is a
//! plain RGB triple (no view dependence).
//!
//! Binary scene file (`.tpgs`), little-endian:
//!
//! ```text
//! magic       "TPGS"
//! version     u32 = 1
//! count       u64
//! sh_degree   u32 = 0
//! background  f32 x 3
//! bounds      f32 x 6 (min xyz, max xyz)
//! records     count x { mu f32x3, rot_q f32x4 (w x y z), log_scale f32x3,
//!                       opacity_logit f32, color f32x3 }
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::linear_to_srgb8;
use crate::error::{Error, Result};

pub const MIN_SCALE: f64 = 1e-7;
pub const MAX_SCALE: f64 = 1e3;
pub const INIT_OPACITY: f64 = 0.1;

/// Scalar parameters per Gaussian.
pub const PARAM_COUNT: usize = 14;

const MAGIC: &[u8; 4] = b"TPGS";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 8 + 4 + 12 + 24;
const RECORD_BYTES: usize = PARAM_COUNT * 4;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mu: Vector3<f64>,
    /// Quaternion `(w, x, y, z)`, normalized before use.
    pub rot_q: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn isotropic(mu: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self {
            mu,
            rot_q: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Per-axis scale, clamped to `[MIN_SCALE, MAX_SCALE]`.
    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(|l| l.exp().clamp(MIN_SCALE, MAX_SCALE))
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        quat_to_matrix(&normalized(&self.rot_q))
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance3d(self)
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|v| v.is_finite())
    }

    /// Restores the stored invariants: unit quaternion, clamped log-scale.
    pub fn normalize(&mut self) {
        self.rot_q = normalized(&self.rot_q);
        let (lo, hi) = (MIN_SCALE.ln(), MAX_SCALE.ln());
        self.log_scale = self.log_scale.map(|l| l.clamp(lo, hi));
    }

    /// Packed parameters: mu, rot_q, log_scale, opacity_logit, color.
    pub fn to_params(&self) -> [f64; PARAM_COUNT] {
        let q = &self.rot_q;
        [
            self.mu.x,
            self.mu.y,
            self.mu.z,
            q[0],
            q[1],
            q[2],
            q[3],
            self.log_scale.x,
            self.log_scale.y,
            self.log_scale.z,
            self.opacity_logit,
            self.color.x,
            self.color.y,
            self.color.z,
        ]
    }

    pub fn from_params(p: &[f64; PARAM_COUNT]) -> Self {
        Self {
            mu: Vector3::new(p[0], p[1], p[2]),
            rot_q: [p[3], p[4], p[5], p[6]],
            log_scale: Vector3::new(p[7], p[8], p[9]),
            opacity_logit: p[10],
            color: Vector3::new(p[11], p[12], p[13]),
        }
    }
}

pub(crate) fn normalized(q: &[f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    q.map(|v| v / n)
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `R S S^T R^T` for the Gaussian's rotation and (clamped) scale.
pub fn covariance3d(g: &Gaussian3D) -> Matrix3<f64> {
    let m = g.rotation() * Matrix3::from_diagonal(&g.scale());
    let cov = m * m.transpose();
    // exact symmetry
    (cov + cov.transpose()) * 0.5
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn cube(half: f64) -> Self {
        Self::new(Vector3::repeat(-half), Vector3::repeat(half))
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.extent().iter().all(|&e| e > 0.0 && e.is_finite()))
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian3D>,
    pub background: Vector3<f64>,
    pub bounds: Aabb,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian3D>, background: Vector3<f64>, bounds: Aabb) -> Self {
        Self {
            gaussians,
            background,
            bounds,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::validation(format!("gaussian {i} has non-finite parameters")));
            }
        }
        if !self.background.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("background is not finite"));
        }
        Ok(())
    }

    /// Rounds every stored value to `f32`, the precision of the scene file.
    pub fn round_to_f32(&mut self) {
        for g in &mut self.gaussians {
            *g = Gaussian3D::from_params(&g.to_params().map(|v| v as f32 as f64));
        }
        self.background = self.background.map(|v| v as f32 as f64);
        self.bounds.min = self.bounds.min.map(|v| v as f32 as f64);
        self.bounds.max = self.bounds.max.map(|v| v as f32 as f64);
    }
}

/// `n` isotropic Gaussians uniform in `bounds`, deterministic in `seed`.
///
/// Scale is half the mean nearest-neighbor distance, estimated on at most
/// 1000 points and corrected for the subsampled density.
pub fn init_random(n: usize, bounds: Aabb, seed: u64) -> Result<GaussianScene> {
    if n == 0 {
        return Err(Error::validation("init_random needs at least one gaussian"));
    }
    if bounds.is_degenerate() {
        return Err(Error::validation("init_random needs non-degenerate bounds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = bounds.extent();
    let positions: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            let r: [f64; 3] = rng.random();
            bounds.min + Vector3::new(r[0] * ext.x, r[1] * ext.y, r[2] * ext.z)
        })
        .collect();
    let colors: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            let r: [f64; 3] = rng.random();
            Vector3::new(r[0], r[1], r[2])
        })
        .collect();

    let scale = 0.5 * mean_nn_distance(&positions, &bounds);
    let gaussians = positions
        .into_iter()
        .zip(colors)
        .map(|(mu, c)| Gaussian3D::isotropic(mu, scale, INIT_OPACITY, c))
        .collect();
    Ok(GaussianScene::new(gaussians, Vector3::zeros(), bounds))
}

fn mean_nn_distance(points: &[Vector3<f64>], bounds: &Aabb) -> f64 {
    let m = points.len().min(1000);
    if m < 2 {
        // single point: a twentieth of the mean box edge
        return bounds.extent().mean() / 20.0;
    }
    let sub = &points[..m];
    let total: f64 = sub
        .iter()
        .enumerate()
        .map(|(i, p)| {
            sub.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    let density_correction = (m as f64 / points.len() as f64).cbrt();
    total / m as f64 * density_correction
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(HEADER_BYTES + RECORD_BYTES * scene.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in scene
        .background
        .iter()
        .chain(scene.bounds.min.iter())
        .chain(scene.bounds.max.iter())
    {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for g in &scene.gaussians {
        for v in g.to_params() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&bytes, path)
}

fn f32_at(bytes: &[u8], off: usize) -> f64 {
    f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64
}

fn parse_scene(bytes: &[u8], path: &Path) -> Result<GaussianScene> {
    let header_err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg: format!("invalid scene header: {msg}"),
    };
    if bytes.len() < HEADER_BYTES {
        return Err(header_err(format!("file has {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(header_err("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(header_err(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let sh_degree = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if sh_degree != 0 {
        return Err(header_err(format!("unsupported appearance degree {sh_degree}")));
    }
    let h: Vec<f64> = (0..9).map(|k| f32_at(bytes, 20 + 4 * k)).collect();
    if !h.iter().all(|v| v.is_finite()) {
        return Err(header_err("non-finite background or bounds".into()));
    }
    let background = Vector3::new(h[0], h[1], h[2]);
    let bounds = Aabb::new(Vector3::new(h[3], h[4], h[5]), Vector3::new(h[6], h[7], h[8]));

    let mut gaussians = Vec::with_capacity(count);
    for i in 0..count {
        let off = HEADER_BYTES + i * RECORD_BYTES;
        if off + RECORD_BYTES > bytes.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                record: i,
                msg: "truncated record".into(),
            });
        }
        let mut p = [0.0; PARAM_COUNT];
        for (k, slot) in p.iter_mut().enumerate() {
            *slot = f32_at(bytes, off + 4 * k);
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                record: i,
                msg: "non-finite parameter".into(),
            });
        }
        if p[3..7].iter().all(|&v| v == 0.0) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                record: i,
                msg: "zero quaternion".into(),
            });
        }
        gaussians.push(Gaussian3D::from_params(&p));
    }
    let expected = HEADER_BYTES + count * RECORD_BYTES;
    if bytes.len() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            record: count,
            msg: format!("{} trailing bytes", bytes.len() as i64 - expected as i64),
        });
    }
    Ok(GaussianScene::new(gaussians, background, bounds))
}

/// ASCII PLY with positions and 8-bit sRGB colors, for external viewers.
pub fn export_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", scene.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for g in &scene.gaussians {
        let c = g.color.map(linear_to_srgb8);
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            g.mu.x as f32, g.mu.y as f32, g.mu.z as f32, c.x, c.y, c.z
        ));
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
