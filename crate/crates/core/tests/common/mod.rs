//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls into the rasterizer or the panorama pipeline: the
//! naive renderer re-derives projection and compositing from the formulas,
//! and the high-precision helpers evaluate geometry with 256-bit floats
//! unless a caller asks for fewer bits.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, Radix, RoundingMode, Sign};
use nalgebra::{Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tpgs::raster::PerspectiveIntrinsics;
use tpgs::{CameraPose, Gaussian3D, GaussianScene, Image};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// naive renderer

const DILATION: f64 = 0.3;
const ALPHA_FLOOR: f64 = 1.0 / 255.0;
const ALPHA_CAP: f64 = 0.99;
const T_FLOOR: f64 = 1e-4;
const GUARD: f64 = 1.3;

#[derive(Clone, Debug)]
pub struct NaiveSplat {
    pub index: usize,
    pub depth: f64,
    pub mean: [f64; 2],
    pub cov: [f64; 3],
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    /// Jacobian ratios after the frustum clamp, and whether each was clamped.
    pub ratio: [f64; 2],
    pub clamped: [bool; 2],
}

/// Branch decisions of one render: everything that makes the forward
/// formula piecewise.
#[derive(Clone, Debug)]
pub struct Branches {
    /// Per Gaussian, the clamped Jacobian ratio per axis (None = unclamped).
    pub clamp: Vec<[Option<f64>; 2]>,
    /// Per pixel, contributing Gaussians in order with their alpha-cap flag.
    pub pixels: Vec<Vec<(usize, bool)>>,
}

pub struct Naive {
    pub image: Image,
    pub final_t: Vec<f64>,
    pub splats: Vec<NaiveSplat>,
    pub branches: Branches,
}

fn rotation_of(g: &Gaussian3D) -> Matrix3<f64> {
    let [w, x, y, z] = g.rot_q;
    let q = Quaternion::new(w, x, y, z);
    if q.norm() == 0.0 {
        return Matrix3::identity();
    }
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

pub fn sigma3(g: &Gaussian3D) -> Matrix3<f64> {
    let s = g.log_scale.map(|l| l.exp().clamp(1e-7, 1e3));
    let r = rotation_of(g);
    r * Matrix3::from_diagonal(&s.component_mul(&s)) * r.transpose()
}

fn focal(intr: &PerspectiveIntrinsics) -> f64 {
    intr.width as f64 / 2.0 / (intr.fov / 2.0).tan()
}

/// Projects one Gaussian; `frozen` replaces the clamp decision per axis.
pub fn naive_project(
    index: usize,
    g: &Gaussian3D,
    pose: &CameraPose,
    intr: &PerspectiveIntrinsics,
    frozen: Option<[Option<f64>; 2]>,
) -> Option<NaiveSplat> {
    let t = pose.r_wc() * g.mu + pose.t();
    if !(t.z > intr.near && t.z < intr.far) {
        return None;
    }
    let f = focal(intr);
    let lim = [
        GUARD * intr.width as f64 / 2.0 / f,
        GUARD * intr.height as f64 / 2.0 / f,
    ];
    let raw = [t.x / t.z, t.y / t.z];
    let mut ratio = [0.0; 2];
    let mut clamped = [false; 2];
    for k in 0..2 {
        match frozen {
            Some(fz) => {
                ratio[k] = fz[k].unwrap_or(raw[k]);
                clamped[k] = fz[k].is_some();
            }
            None => {
                clamped[k] = raw[k].abs() > lim[k];
                ratio[k] = raw[k].clamp(-lim[k], lim[k]);
            }
        }
    }
    // image rows grow downward, so the y row is negated
    let j = Matrix2x3::new(f / t.z, 0.0, -f * ratio[0] / t.z, 0.0, -f / t.z, f * ratio[1] / t.z);
    let m = j * pose.r_wc();
    let c = m * sigma3(g) * m.transpose();
    let (a, b, d) = (c[(0, 0)] + DILATION, c[(0, 1)], c[(1, 1)] + DILATION);
    let det = a * d - b * b;
    if !(det > 0.0) {
        return None;
    }
    Some(NaiveSplat {
        index,
        depth: t.z,
        mean: [
            f * t.x / t.z + intr.width as f64 / 2.0 - 0.5,
            -f * t.y / t.z + intr.height as f64 / 2.0 - 0.5,
        ],
        cov: [a, b, d],
        conic: [d / det, -b / det, a / det],
        opacity: 1.0 / (1.0 + (-g.opacity_logit).exp()),
        color: [g.color.x, g.color.y, g.color.z],
        ratio,
        clamped,
    })
}

fn gaussian_weight(s: &NaiveSplat, px: f64, py: f64) -> (f64, f64) {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    let power = -0.5 * q;
    (power, s.opacity * power.exp())
}

/// Full-sort per-pixel renderer: every Gaussian is tested at every pixel.
pub fn naive_render(scene: &GaussianScene, pose: &CameraPose, intr: &PerspectiveIntrinsics) -> Naive {
    let mut splats: Vec<NaiveSplat> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| naive_project(i, g, pose, intr, None))
        .collect();
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    let mut clamp = vec![[None, None]; scene.len()];
    for s in &splats {
        for k in 0..2 {
            if s.clamped[k] {
                clamp[s.index][k] = Some(s.ratio[k]);
            }
        }
    }
    let (w, h) = (intr.width, intr.height);
    let mut image = Image::new(h, w);
    let mut final_t = vec![0.0; w * h];
    let mut pixels = Vec::with_capacity(w * h);
    let bg = scene.background;
    for py in 0..h {
        for px in 0..w {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let mut list = Vec::new();
            for s in &splats {
                if t < T_FLOOR {
                    break;
                }
                let (power, raw) = gaussian_weight(s, px as f64, py as f64);
                if power > 0.0 || raw < ALPHA_FLOOR {
                    continue;
                }
                let capped = raw > ALPHA_CAP;
                let a = if capped { ALPHA_CAP } else { raw };
                for k in 0..3 {
                    c[k] += s.color[k] * a * t;
                }
                t *= 1.0 - a;
                list.push((s.index, capped));
            }
            image.set_pixel(py, px, [c[0] + t * bg.x, c[1] + t * bg.y, c[2] + t * bg.z]);
            final_t[py * w + px] = t;
            pixels.push(list);
        }
    }
    Naive {
        image,
        final_t,
        splats,
        branches: Branches { clamp, pixels },
    }
}

/// Renders with every branch decision taken from `br`, so the result is a
/// smooth function of the scene parameters near the point `br` came from.
pub fn frozen_render(scene: &GaussianScene, pose: &CameraPose, intr: &PerspectiveIntrinsics, br: &Branches) -> Image {
    let splats: Vec<Option<NaiveSplat>> = scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| naive_project(i, g, pose, intr, Some(br.clamp[i])))
        .collect();
    let (w, h) = (intr.width, intr.height);
    let bg = scene.background;
    Image::from_fn(h, w, |py, px| {
        let mut t = 1.0;
        let mut c = [0.0; 3];
        for &(gi, capped) in &br.pixels[py * w + px] {
            let s = splats[gi].as_ref().expect("contributing Gaussian stays projected");
            let (_, raw) = gaussian_weight(s, px as f64, py as f64);
            let a = if capped { ALPHA_CAP } else { raw };
            for k in 0..3 {
                c[k] += s.color[k] * a * t;
            }
            t *= 1.0 - a;
        }
        [c[0] + t * bg.x, c[1] + t * bg.y, c[2] + t * bg.z]
    })
}

pub fn weighted_sum(a: &Image, w: &Image) -> f64 {
    a.data().iter().zip(w.data()).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// random scenes

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(Quaternion::new(v[0], v[1], v[2], v[3]))
        .to_rotation_matrix()
        .into_inner()
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
    let center = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    CameraPose::from_center(random_rotation(rng), center).unwrap()
}

pub fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

/// Gaussian with camera-frame mean `cam` seen from `pose`.
pub fn gaussian_at(rng: &mut ChaCha8Rng, pose: &CameraPose, cam: Vector3<f64>, opacity: (f64, f64)) -> Gaussian3D {
    let mu = pose.r_wc().transpose() * (cam - pose.t());
    Gaussian3D {
        mu,
        rot_q: random_quat(rng),
        log_scale: Vector3::from_fn(|_, _| (rng.random_range(0.04..0.3) * cam.z / 2.0).ln()),
        opacity_logit: {
            let o: f64 = rng.random_range(opacity.0..opacity.1);
            (o / (1.0 - o)).ln()
        },
        color: Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)),
    }
}

/// `n` Gaussians spread over (and slightly past) the view frustum.
pub fn random_scene_in_view(
    rng: &mut ChaCha8Rng,
    n: usize,
    pose: &CameraPose,
    intr: &PerspectiveIntrinsics,
    opacity: (f64, f64),
) -> GaussianScene {
    let tan_half = (intr.fov / 2.0).tan();
    let gaussians = (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(1.5..5.0);
            let cam = Vector3::new(
                z * tan_half * rng.random_range(-1.2..1.2),
                z * tan_half * rng.random_range(-1.2..1.2),
                z,
            );
            gaussian_at(rng, pose, cam, opacity)
        })
        .collect();
    let background = Vector3::from_fn(|_, _| rng.random_range(0.0..1.0));
    GaussianScene::new(gaussians, background, tpgs::scene::Aabb::cube(10.0))
}

pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
}

/// Smooth test panorama: a few low-frequency harmonics on the sphere.
pub fn smooth_erp(h: usize, seed: u64) -> Image {
    let mut r = rng(seed);
    let coef: Vec<[f64; 6]> = (0..3)
        .map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0)))
        .collect();
    let w = 2 * h;
    Image::from_fn(h, w, |row, col| {
        let d = tpgs::sphergeo::erp_texel_dir(row, col, h, w);
        std::array::from_fn(|ch| {
            let c = &coef[ch];
            let v = c[0] * d.x + c[1] * d.y + c[2] * d.z + 0.5 * (c[3] * d.x * d.y + c[4] * d.y * d.z + c[5] * d.z * d.x);
            0.5 + 0.25 * v
        })
    })
}

// ---------------------------------------------------------------------------
// high-precision evaluation

pub const HP_BITS: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

pub struct Hp {
    cc: Consts,
    pi: BigFloat,
    bits: usize,
}

impl Hp {
    pub fn new() -> Self {
        Self::with_bits(HP_BITS)
    }

    pub fn with_bits(bits: usize) -> Self {
        let mut cc = Consts::new().expect("constant cache");
        let pi = cc.pi(bits, RM);
        Self { cc, pi, bits }
    }

    pub fn num(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, self.bits)
    }

    pub fn pi(&self) -> BigFloat {
        self.pi.clone()
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, self.bits, RM)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, self.bits, RM)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, self.bits, RM)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, self.bits, RM)
    }

    pub fn sqrt(&self, a: &BigFloat) -> BigFloat {
        a.sqrt(self.bits, RM)
    }

    pub fn sin(&mut self, a: &BigFloat) -> BigFloat {
        a.sin(self.bits, RM, &mut self.cc)
    }

    pub fn cos(&mut self, a: &BigFloat) -> BigFloat {
        a.cos(self.bits, RM, &mut self.cc)
    }

    /// Two-argument arctangent in `(-pi, pi]`, with `atan2(0, 0) = 0`.
    pub fn atan2(&mut self, y: &BigFloat, x: &BigFloat) -> BigFloat {
        let half_pi = self.div(&self.pi(), &self.num(2.0));
        if x.is_zero() {
            return if y.is_zero() {
                self.num(0.0)
            } else if y.is_positive() {
                half_pi
            } else {
                half_pi.neg()
            };
        }
        let base = self.div(y, x).atan(self.bits, RM, &mut self.cc);
        if x.is_positive() {
            base
        } else if y.is_negative() && !y.is_zero() {
            self.sub(&base, &self.pi())
        } else {
            self.add(&base, &self.pi())
        }
    }

    /// Nearest `f64`, from the top 128 mantissa bits.
    pub fn f64(&mut self, a: &BigFloat) -> f64 {
        let Some((words, _, sign, exp, _)) = a.as_raw_parts() else {
            panic!("non-finite value");
        };
        if a.is_zero() {
            return 0.0;
        }
        let n = words.len();
        let lo = if n > 1 { words[n - 2] } else { 0 };
        let m = ((words[n - 1] as u128) << 64) | lo as u128;
        // the mantissa is a fraction in [0.5, 1) scaled by 2^128
        let v = m as f64 * 2f64.powi(-128) * 2f64.powi(exp);
        if sign == Sign::Neg {
            -v
        } else {
            v
        }
    }

    /// Nearest `f64` through a decimal round trip; slow, used to check [`Hp::f64`].
    pub fn f64_decimal(&mut self, a: &BigFloat) -> f64 {
        if a.is_zero() {
            return 0.0;
        }
        a.format(Radix::Dec, RM, &mut self.cc)
            .expect("finite value formats")
            .parse::<f64>()
            .expect("formatted value parses")
    }
}

// ---------------------------------------------------------------------------
// finite differences

pub const PARAMS: usize = 14;
pub const GROUPS: [(&str, std::ops::Range<usize>); 5] = [
    ("position", 0..3),
    ("rotation", 3..7),
    ("scale", 7..10),
    ("opacity", 10..11),
    ("color", 11..14),
];

/// Central differences of `loss` for every parameter of every Gaussian,
/// with step `1e-4` relative to the parameter (at least `1e-6`).
pub fn central_differences(scene: &GaussianScene, loss: impl Fn(&GaussianScene) -> f64) -> Vec<[f64; PARAMS]> {
    let mut out = vec![[0.0; PARAMS]; scene.len()];
    for i in 0..scene.len() {
        let base = scene.gaussians[i].to_params();
        for k in 0..PARAMS {
            let h = 1e-4 * base[k].abs().max(1e-2);
            let eval = |delta: f64| {
                let mut p = base;
                p[k] += delta;
                let mut s = scene.clone();
                s.gaussians[i] = Gaussian3D::from_params(&p);
                loss(&s)
            };
            out[i][k] = (eval(h) - eval(-h)) / (2.0 * h);
        }
    }
    out
}

/// Worst relative error per parameter group, `|fd - an| / max(|fd|, |an|)`
/// over each group's gradient vector. Groups where both vectors are below
/// `floor` agree absolutely and count as zero error.
pub fn group_errors(fd: &[[f64; PARAMS]], an: &[[f64; PARAMS]], floor: f64) -> [f64; 5] {
    let mut worst = [0.0f64; 5];
    for (a, b) in fd.iter().zip(an) {
        for (gi, (_, range)) in GROUPS.iter().enumerate() {
            let (mut d, mut na, mut nb) = (0.0, 0.0, 0.0);
            for k in range.clone() {
                d += (a[k] - b[k]).powi(2);
                na += a[k] * a[k];
                nb += b[k] * b[k];
            }
            let denom = na.sqrt().max(nb.sqrt());
            if denom < floor {
                continue;
            }
            worst[gi] = worst[gi].max(d.sqrt() / denom);
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// SSIM by direct window sums

/// Mean SSIM from explicit 11x11 window sums: Gaussian weights (sigma
/// 1.5), columns wrapped, rows truncated with the weights renormalized.
pub fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let (h, w) = a.dims();
    let g: Vec<f64> = (-5i64..=5).map(|d| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp()).collect();
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            for ch in 0..3 {
                let (mut sw, mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dr in -5i64..=5 {
                    let rr = r + dr;
                    if rr < 0 || rr >= h as i64 {
                        continue;
                    }
                    for dc in -5i64..=5 {
                        let cc = (c + dc).rem_euclid(w as i64);
                        let wt = g[(dr + 5) as usize] * g[(dc + 5) as usize];
                        let x = a.pixel(rr as usize, cc as usize)[ch];
                        let y = b.pixel(rr as usize, cc as usize)[ch];
                        sw += wt;
                        ma += wt * x;
                        mb += wt * y;
                        aa += wt * x * x;
                        bb += wt * y * y;
                        ab += wt * x * y;
                    }
                }
                let (ma, mb) = (ma / sw, mb / sw);
                let va = aa / sw - ma * ma;
                let vb = bb / sw - mb * mb;
                let cov = ab / sw - ma * mb;
                total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    total / (3 * h * w) as f64
}

/// SSIM of two constant images with values `x` and `y`.
pub fn ssim_constant(x: f64, y: f64) -> f64 {
    (2.0 * x * y + 1e-4) / (x * x + y * y + 1e-4)
}

pub fn shift_columns(a: &Image, k: usize) -> Image {
    let w = a.width();
    Image::from_fn(a.height(), w, |r, c| a.pixel(r, (c + k) % w))
}

// ---------------------------------------------------------------------------
// panorama chain with frozen branches

/// The view pipeline rebuilt from the naive renderer, with every view's
/// branch decisions frozen at construction.
pub struct FrozenPipeline {
    pub poses: Vec<CameraPose>,
    pub intr: PerspectiveIntrinsics,
    pub plan: tpgs::sphergeo::StitchPlan,
    pub branches: Vec<Branches>,
}

impl FrozenPipeline {
    pub fn new(pipe: &tpgs::panocompose::PanoPipeline, scene: &GaussianScene, pose: &CameraPose) -> Self {
        let poses = pipe.view_poses(pose).unwrap();
        let intr = *pipe.intrinsics();
        let branches = poses.iter().map(|p| naive_render(scene, p, &intr).branches).collect();
        Self {
            poses,
            intr,
            plan: tpgs::sphergeo::StitchPlan::new(pipe.layout()),
            branches,
        }
    }

    pub fn erp(&self, scene: &GaussianScene) -> Image {
        let views: Vec<Image> = self
            .poses
            .iter()
            .zip(&self.branches)
            .map(|(p, b)| frozen_render(scene, p, &self.intr, b))
            .collect();
        let e_c = self.plan.apply(&views[..6]).unwrap();
        if views.len() == 12 {
            let e_t = self.plan.apply(&views[6..]).unwrap();
            tpgs::panocompose::compose_er(&e_c, &e_t).unwrap()
        } else {
            e_c
        }
    }
}

/// Gaussians around a panoramic camera at `center`, in every direction.
pub fn random_scene_around(rng: &mut ChaCha8Rng, n: usize, center: Vector3<f64>, scale: (f64, f64)) -> GaussianScene {
    let gaussians = (0..n)
        .map(|_| {
            let d: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
            let mu = center + d.normalize() * rng.random_range(1.5..3.0);
            Gaussian3D {
                mu,
                rot_q: random_quat(rng),
                log_scale: Vector3::from_fn(|_, _| rng.random_range(scale.0..scale.1).ln()),
                opacity_logit: {
                    let o: f64 = rng.random_range(0.3..0.9);
                    (o / (1.0 - o)).ln()
                },
                color: Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)),
            }
        })
        .collect();
    let background = Vector3::from_fn(|_, _| rng.random_range(0.0..1.0));
    GaussianScene::new(gaussians, background, tpgs::scene::Aabb::cube(10.0))
}

/// Photometric loss with the sign of every L1 residual frozen at `base`, so
/// finite differences never straddle the kink of `|x - y|`.
pub fn frozen_photometric(base: &Image, gt: &Image, w: tpgs::optim::LossWeights) -> impl Fn(&Image) -> f64 {
    let signs: Vec<f64> = base.data().iter().zip(gt.data()).map(|(x, y)| (x - y).signum()).collect();
    let gt = gt.clone();
    move |img: &Image| {
        let n = signs.len() as f64;
        let l1 = img.data().iter().zip(gt.data()).zip(&signs).map(|((x, y), s)| s * (x - y)).sum::<f64>() / n;
        let ssim_only = tpgs::optim::LossWeights { lambda1: 0.0, lambda2: 1.0 };
        let d_ssim = tpgs::optim::photometric_loss(img, &gt, ssim_only).unwrap().0;
        w.lambda1 * l1 + w.lambda2 * d_ssim
    }
}
