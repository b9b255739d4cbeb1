//! Dataset I/O, synthetic datasets and the per-pixel spherical oracle
//! renderer.
//!
//! Dataset directory layout:
//!
//! ```text
//! 000000.png 000001.png ...   8-bit sRGB equirectangular frames
//! poses.txt                   one line per frame: 12 floats, row-major [R_wc | T]
//! split.txt                   optional: test frame indices, one per line
//! ```
//!
//! Pixels are decoded to linear light on load and encoded on save.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagebuf::{ErpImage, Image};
use crate::raster::{DEFAULT_FAR, DEFAULT_NEAR, LOWPASS, MAX_ALPHA, MIN_ALPHA, MIN_TRANSMITTANCE};
use crate::scene::{init_random, Aabb, GaussianScene};
use crate::sphergeo::{erp_texel_dir, rot_y, CameraPose, POSE_TOLERANCE};

/// Tolerance on `R R^T - I` for poses read from disk.
pub const POSE_FILE_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_TEST_EVERY: usize = 8;

pub fn srgb_encode(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_decode(s: f64) -> f64 {
    if s <= 0.04045 {
        s / 12.92
    } else {
        ((s + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb8(v: f64) -> u8 {
    (srgb_encode(v) * 255.0).round() as u8
}

pub fn srgb8_to_linear(b: u8) -> f64 {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| std::array::from_fn(|i| srgb_decode(i as f64 / 255.0)))[b as usize]
}

/// Round trip through 8-bit sRGB: the values a PNG save/load would yield.
pub fn quantize_srgb8(img: &Image) -> Image {
    img.map(|v| srgb8_to_linear(linear_to_srgb8(v)))
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(srgb8_to_linear).collect();
    Image::from_vec(h as usize, w as usize, data)
}

pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data().iter().map(|&v| linear_to_srgb8(v)).collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .ok_or_else(|| Error::validation("image buffer does not match its dimensions"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: ErpImage,
    pub pose: CameraPose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanoDataset {
    /// Ordered by frame index.
    pub frames: Vec<Frame>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub name: String,
    pub erp_h: usize,
}

/// How frames are divided into train and test sets.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitSpec {
    /// `split.txt` when present, else every eighth frame.
    Auto,
    /// Frames with `index % n == 0` are test frames.
    EveryNth(usize),
    TestIndices(Vec<usize>),
    /// Every frame is a training frame.
    AllTrain,
}

impl PanoDataset {
    pub fn erp_w(&self) -> usize {
        2 * self.erp_h
    }

    pub fn train_frames(&self) -> impl Iterator<Item = &Frame> {
        self.train.iter().map(|&i| &self.frames[i])
    }

    pub fn test_frames(&self) -> impl Iterator<Item = &Frame> {
        self.test.iter().map(|&i| &self.frames[i])
    }

    /// Replaces the split. `EveryNth` keeps every frame for training when
    /// it would otherwise leave none.
    pub fn apply_split(&mut self, spec: &SplitSpec) -> Result<()> {
        let n = self.frames.len();
        let test: Vec<usize> = match spec {
            SplitSpec::Auto => every_nth(n, DEFAULT_TEST_EVERY),
            SplitSpec::EveryNth(k) => {
                if *k == 0 {
                    return Err(Error::validation("test split period must be positive"));
                }
                every_nth(n, *k)
            }
            SplitSpec::TestIndices(ix) => {
                let mut ix = ix.clone();
                ix.sort_unstable();
                ix.dedup();
                if let Some(&bad) = ix.iter().find(|&&i| i >= n) {
                    return Err(Error::validation(format!("test index {bad} out of range for {n} frames")));
                }
                ix
            }
            SplitSpec::AllTrain => Vec::new(),
        };
        self.train = (0..n).filter(|i| test.binary_search(i).is_err()).collect();
        self.test = test;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::validation("dataset has no frames"));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.image.check_erp()?;
            if f.image.height() != self.erp_h {
                return Err(Error::validation(format!(
                    "frame {i} is {}x{}, dataset resolution is {}x{}",
                    f.image.height(),
                    f.image.width(),
                    self.erp_h,
                    self.erp_w()
                )));
            }
        }
        if self.train.iter().any(|i| self.test.contains(i)) {
            return Err(Error::validation("train and test splits overlap"));
        }
        Ok(())
    }
}

fn every_nth(n: usize, k: usize) -> Vec<usize> {
    let test: Vec<usize> = (0..n).filter(|i| i % k == 0).collect();
    if test.len() == n {
        Vec::new()
    } else {
        test
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

pub fn format_pose_line(pose: &CameraPose) -> String {
    pose.to_row_major().iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" ")
}

/// Parses a pose file. Rotations within [`POSE_FILE_TOLERANCE`] of
/// orthonormal are projected onto the nearest rotation.
pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<CameraPose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        record: line,
        msg,
    };
    let mut poses = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(ln + 1, format!("bad number {t:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        let vals: [f64; 12] = vals
            .try_into()
            .map_err(|v: Vec<f64>| parse_err(ln + 1, format!("expected 12 values, got {}", v.len())))?;
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(parse_err(ln + 1, "non-finite value".into()));
        }
        let r = Matrix3::new(vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10]);
        let dev = (r * r.transpose() - Matrix3::identity()).abs().max();
        if dev > POSE_FILE_TOLERANCE || r.determinant() <= 0.0 {
            return Err(parse_err(
                ln + 1,
                format!("rotation is not orthonormal (|R R^T - I| = {dev:.3e}, det = {:.3e})", r.determinant()),
            ));
        }
        // valid rotations are kept bit-exact
        let r = if dev > POSE_TOLERANCE { nearest_rotation(&r) } else { r };
        let pose = CameraPose::new(r, Vector3::new(vals[3], vals[7], vals[11])).map_err(|e| parse_err(ln + 1, e.to_string()))?;
        poses.push(pose);
    }
    Ok(poses)
}

/// Closest rotation in the Frobenius norm.
pub fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

pub fn write_poses(poses: &[CameraPose], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for p in poses {
        text.push_str(&format_pose_line(p));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_split(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.parse::<usize>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            record: ln + 1,
            msg: format!("bad frame index {line:?}: {e}"),
        })?);
    }
    Ok(out)
}

/// Numbered PNG files in `dir`, sorted by index.
pub fn list_frames(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(idx) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok()) {
            frames.push((idx, path));
        }
    }
    frames.sort();
    Ok(frames)
}

pub fn load_dataset(dir: impl AsRef<Path>, split: &SplitSpec) -> Result<PanoDataset> {
    let dir = dir.as_ref();
    let files = list_frames(dir)?;
    if files.is_empty() {
        return Err(Error::validation(format!("{}: no numbered PNG frames", dir.display())));
    }
    let poses = read_poses(dir.join("poses.txt"))?;
    for (k, (idx, _)) in files.iter().enumerate() {
        if *idx != k {
            return Err(Error::validation(format!(
                "{}: frames must be numbered 0..n without gaps, missing {}",
                dir.display(),
                frame_file_name(k)
            )));
        }
    }
    if poses.len() < files.len() {
        return Err(Error::Parse {
            path: dir.join("poses.txt"),
            record: poses.len() + 1,
            msg: format!("missing pose line for frame {}", poses.len()),
        });
    }
    let images = files.par_iter().map(|(_, p)| read_png(p)).collect::<Result<Vec<_>>>()?;
    let erp_h = images[0].height();
    let frames = images.into_iter().zip(poses).map(|(image, pose)| Frame { image, pose }).collect();
    let mut ds = PanoDataset {
        frames,
        train: Vec::new(),
        test: Vec::new(),
        name: dir.file_name().and_then(|s| s.to_str()).unwrap_or("dataset").to_string(),
        erp_h,
    };
    let split_file = dir.join("split.txt");
    let spec = match split {
        SplitSpec::Auto if split_file.exists() => SplitSpec::TestIndices(read_split(&split_file)?),
        other => other.clone(),
    };
    ds.apply_split(&spec)?;
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &PanoDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ds.frames
        .par_iter()
        .enumerate()
        .try_for_each(|(i, f)| write_png(&f.image, dir.join(frame_file_name(i))))?;
    let poses: Vec<CameraPose> = ds.frames.iter().map(|f| f.pose.clone()).collect();
    write_poses(&poses, dir.join("poses.txt"))?;
    let split: String = ds.test.iter().map(|i| format!("{i}\n")).collect();
    let path = dir.join("split.txt");
    fs::write(&path, split).map_err(|e| Error::io(&path, e))
}

/// Half-width of the cube holding synthetic scenes.
pub const SYNTHETIC_RADIUS: f64 = 2.0;
/// Inner and outer radius of the shell holding synthetic Gaussians,
/// uniform in volume so no view direction is favored.
pub const SYNTHETIC_SHELL: (f64, f64) = (1.0, 2.0);
/// Radius of the synthetic camera orbit.
pub const SYNTHETIC_ORBIT: f64 = 0.3;

/// A random anisotropic scene around an orbit of panoramic cameras, with
/// frames from [`oracle_render_erp`] quantized to 8-bit sRGB.
pub fn make_synthetic(
    n_gaussians: usize,
    n_poses: usize,
    erp_h: usize,
    seed: u64,
) -> Result<(GaussianScene, PanoDataset)> {
    if n_poses == 0 {
        return Err(Error::validation("synthetic dataset needs at least one pose"));
    }
    if erp_h < 2 {
        return Err(Error::validation("ERP height must be at least 2"));
    }
    let mut scene = init_random(n_gaussians, Aabb::cube(SYNTHETIC_RADIUS), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    for g in &mut scene.gaussians {
        let dir = loop {
            let v = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let n: f64 = v.norm();
            if n > 1e-9 {
                break v / n;
            }
        };
        let (r0, r1) = (SYNTHETIC_SHELL.0.powi(3), SYNTHETIC_SHELL.1.powi(3));
        g.mu = dir * rng.random_range(r0..r1).cbrt();
        g.log_scale = Vector3::from_fn(|_, _| rng.random_range(0.05f64..0.2).ln());
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
        g.rot_q = q.map(|v| v / n);
        g.opacity_logit = crate::scene::logit(rng.random_range(0.6..0.95));
    }
    scene.background = Vector3::new(0.35, 0.4, 0.45);
    scene.round_to_f32();

    let poses = (0..n_poses)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / n_poses as f64;
            let center = SYNTHETIC_ORBIT * Vector3::new(a.cos(), 0.1 * (2.0 * a).sin(), a.sin());
            let yaw = rng.random_range(-0.4..0.4);
            CameraPose::from_center(rot_y(yaw), center)
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = poses
        .into_iter()
        .map(|pose| {
            let image = quantize_srgb8(&oracle_render_erp(&scene, &pose, erp_h)?);
            Ok(Frame { image, pose })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = PanoDataset {
        frames,
        train: Vec::new(),
        test: Vec::new(),
        name: format!("synthetic-{seed}"),
        erp_h,
    };
    ds.apply_split(&SplitSpec::Auto)?;
    Ok((scene, ds))
}

struct OracleSplat {
    /// Rows: tangent x, tangent y, and the unit direction to the mean.
    frame: Matrix3<f64>,
    depth: f64,
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

/// Reference panorama renderer without cube faces or tiles.
///
/// Each Gaussian is projected on its own axis: onto the plane tangent to
/// the sphere at the direction of its mean, with the on-axis Jacobian and
/// `H / pi` pixels per unit of the plane. A pixel evaluates every Gaussian
/// at the point where its ray meets that plane, sorts hits by distance and
/// composites with the rasterizer's rules.
pub fn oracle_render_erp(scene: &GaussianScene, pose: &CameraPose, erp_h: usize) -> Result<ErpImage> {
    scene.validate()?;
    if erp_h < 2 {
        return Err(Error::validation("ERP height must be at least 2"));
    }
    let erp_w = 2 * erp_h;
    let f = erp_h as f64 / std::f64::consts::PI;
    let r_wc = pose.r_wc();
    let mut splats: Vec<OracleSplat> = Vec::with_capacity(scene.len());
    let mut order: Vec<usize> = Vec::with_capacity(scene.len());
    for g in &scene.gaussians {
        let t = pose.world_to_camera(&g.mu);
        let depth = t.norm();
        let opacity = g.opacity();
        if !(depth > DEFAULT_NEAR && depth < DEFAULT_FAR) || opacity < MIN_ALPHA {
            continue;
        }
        let frame = ray_frame(&(t / depth));
        let cov = r_wc * g.covariance() * r_wc.transpose();
        let p = frame.fixed_rows::<2>(0) * (f / depth);
        let c2 = p * cov * p.transpose();
        let (xx, xy, yy) = (c2[(0, 0)] + LOWPASS, 0.5 * (c2[(0, 1)] + c2[(1, 0)]), c2[(1, 1)] + LOWPASS);
        let det = xx * yy - xy * xy;
        if !(det > 0.0) {
            continue;
        }
        order.push(splats.len());
        splats.push(OracleSplat {
            frame,
            depth,
            conic: [yy / det, -xy / det, xx / det],
            opacity,
            color: [g.color.x, g.color.y, g.color.z],
        });
    }
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));
    let bg = [scene.background.x, scene.background.y, scene.background.z];
    let rows: Vec<Vec<f64>> = (0..erp_h)
        .into_par_iter()
        .map(|row| {
            let mut out = Vec::with_capacity(erp_w * 3);
            for col in 0..erp_w {
                let d = erp_texel_dir(row, col, erp_h, erp_w);
                let mut t = 1.0;
                let mut c = [0.0; 3];
                for &i in &order {
                    if t < MIN_TRANSMITTANCE {
                        break;
                    }
                    let s = &splats[i];
                    let local = s.frame * d;
                    if local.z <= 0.0 {
                        continue;
                    }
                    let dx = f * local.x / local.z;
                    let dy = f * local.y / local.z;
                    let [a, b, cc] = s.conic;
                    let power = -0.5 * (a * dx * dx + cc * dy * dy) - b * dx * dy;
                    if power > 0.0 {
                        continue;
                    }
                    let raw = s.opacity * power.exp();
                    if raw < MIN_ALPHA {
                        continue;
                    }
                    let alpha = raw.min(MAX_ALPHA);
                    for k in 0..3 {
                        c[k] += s.color[k] * alpha * t;
                    }
                    t *= 1.0 - alpha;
                }
                for k in 0..3 {
                    out.push(c[k] + t * bg[k]);
                }
            }
            out
        })
        .collect();
    Image::from_vec(erp_h, erp_w, rows.concat())
}

/// Rows: tangent x (increasing longitude), tangent y (increasing
/// latitude), and `d` itself.
fn ray_frame(d: &Vector3<f64>) -> Matrix3<f64> {
    let theta = d.x.atan2(d.z);
    let phi = d.y.atan2(d.x.hypot(d.z));
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Matrix3::new(ct, 0.0, -st, -sp * st, cp, -sp * ct, d.x, d.y, d.z)
}
