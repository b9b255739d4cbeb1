//! Two-stage training: per-view losses on cube faces and transition planes
//! first, then losses on the composed panorama.

use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::{quantize_srgb8, PanoDataset};
use crate::error::{Error, Result};
use crate::imagebuf::{FaceImage, Image};
use crate::panocompose::PanoPipeline;
use crate::quality::{psnr, seam_score, ssim, ssim_any_size, ssim_with_grad};
use crate::raster::SceneGradients;
use crate::scene::{init_random, Aabb, Gaussian3D, GaussianScene, PARAM_COUNT};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    /// Initial position rate, multiplied by `scene_radius`.
    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub densify_interval: usize,
    /// Last stage-1 iteration at which densify/prune runs.
    pub densify_until: usize,
    /// Mean view-space positional gradient (pixels) above which a Gaussian
    /// is cloned or split. `inf` disables densification.
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    pub max_gaussians: usize,
    /// Gaussians larger than this fraction of `scene_radius` are split,
    /// smaller ones cloned.
    pub percent_dense: f64,
    pub init_gaussians: usize,
    pub scene_radius: f64,
    pub background: [f64; 3],
    pub padding_p: usize,
    pub face_res: usize,
    pub transition_planes: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.8,
            lambda2: 0.2,
            stage1_iters: 7000,
            stage2_iters: 3000,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            densify_interval: 100,
            densify_until: 3500,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 0.005,
            max_gaussians: 100_000,
            percent_dense: 0.01,
            init_gaussians: 10_000,
            scene_radius: 2.0,
            background: [0.0; 3],
            padding_p: 16,
            face_res: 256,
            transition_planes: true,
            seed: 0,
        }
    }
}

/// The three ablation switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub disable_tp: bool,
    pub disable_op: bool,
    pub disable_cp: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_position", self.lr_position),
            ("lr_position_final", self.lr_position_final),
            ("lr_rotation", self.lr_rotation),
            ("lr_scale", self.lr_scale),
            ("lr_opacity", self.lr_opacity),
            ("lr_color", self.lr_color),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.densify_interval == 0 {
            return Err(Error::validation("densify_interval must be positive"));
        }
        if !(self.scene_radius > 0.0) {
            return Err(Error::validation("scene_radius must be positive"));
        }
        if self.densify_grad_threshold.is_nan() || self.densify_grad_threshold < 0.0 {
            return Err(Error::validation("densify_grad_threshold must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.prune_opacity_threshold) {
            return Err(Error::validation("prune_opacity_threshold must be in [0, 1]"));
        }
        if !(self.percent_dense >= 0.0 && self.percent_dense.is_finite()) {
            return Err(Error::validation("percent_dense must be >= 0"));
        }
        if self.max_gaussians == 0 {
            return Err(Error::validation("max_gaussians must be positive"));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn total_iters(&self) -> usize {
        self.stage1_iters + self.stage2_iters
    }

    pub fn with_ablation(&self, a: Ablation) -> TrainConfig {
        let mut c = self.clone();
        if a.disable_tp {
            c.transition_planes = false;
        }
        if a.disable_op {
            c.stage1_iters += c.stage2_iters;
            c.stage2_iters = 0;
        }
        if a.disable_cp {
            c.padding_p = 0;
        }
        c
    }

    pub fn pipeline(&self, erp_h: usize) -> Result<PanoPipeline> {
        PanoPipeline::new(erp_h, self.face_res, self.padding_p, self.transition_planes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

pub fn l1_loss(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let n = a.data().len();
    if n == 0 {
        return Err(Error::validation("empty image"));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64)
}

/// `(1 - SSIM(a, b)) / 2`. Images smaller than the SSIM window use the
/// truncated window.
pub fn d_ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok((1.0 - ssim_any_size(a, b)?) / 2.0)
}

/// `lambda1 * L1 + lambda2 * D-SSIM` and its gradient w.r.t. `render`.
pub fn photometric_loss(render: &Image, gt: &Image, w: LossWeights) -> Result<(f64, Image)> {
    render.same_dims(gt)?;
    let n = render.data().len();
    if n == 0 {
        return Err(Error::validation("empty image"));
    }
    if render.data() == gt.data() {
        // exact minimum; skip the rounding noise of the SSIM adjoint
        return Ok((0.0, Image::new(render.height(), render.width())));
    }
    let l1 = l1_loss(render, gt)?;
    let (s, ds) = ssim_with_grad(render, gt)?;
    let loss = w.lambda1 * l1 + w.lambda2 * (1.0 - s) / 2.0;
    let inv = 1.0 / n as f64;
    let data = render
        .data()
        .iter()
        .zip(gt.data())
        .zip(ds.data())
        .map(|((r, g), d)| {
            let sign = if r > g {
                1.0
            } else if r < g {
                -1.0
            } else {
                0.0
            };
            w.lambda1 * sign * inv - 0.5 * w.lambda2 * d
        })
        .collect();
    Ok((loss, Image::from_vec(render.height(), render.width(), data)?))
}

/// Adam with per-parameter-group rates and per-Gaussian step counts.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    m: Vec<[f64; PARAM_COUNT]>,
    v: Vec<[f64; PARAM_COUNT]>,
    steps: Vec<u32>,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![[0.0; PARAM_COUNT]; n],
            v: vec![[0.0; PARAM_COUNT]; n],
            steps: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Keeps the state of the Gaussians in `keep` (old indices, in order).
    fn select(&mut self, keep: &[usize]) {
        self.m = keep.iter().map(|&i| self.m[i]).collect();
        self.v = keep.iter().map(|&i| self.v[i]).collect();
        self.steps = keep.iter().map(|&i| self.steps[i]).collect();
    }

    fn push_fresh(&mut self) {
        self.m.push([0.0; PARAM_COUNT]);
        self.v.push([0.0; PARAM_COUNT]);
        self.steps.push(0);
    }

    pub fn step(&mut self, scene: &mut GaussianScene, grads: &SceneGradients, lrs: &[f64; PARAM_COUNT]) {
        for (i, g) in scene.gaussians.iter_mut().enumerate() {
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let bc1 = 1.0 - ADAM_BETA1.powi(t);
            let bc2 = 1.0 - ADAM_BETA2.powi(t);
            let mut p = g.to_params();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..PARAM_COUNT {
                let gk = grads.params[i][k];
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lrs[k] * mh / (vh.sqrt() + ADAM_EPS);
            }
            let mut ng = Gaussian3D::from_params(&p);
            ng.normalize();
            ng.color = ng.color.map(|c| c.clamp(0.0, 1.0));
            *g = ng;
        }
    }
}

/// One row of the loss series.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub stage: u8,
    pub loss: f64,
    pub gaussians: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeldOutMetrics {
    /// Frames the metrics average over (test split, or train when empty).
    pub frames: Vec<usize>,
    pub psnr: f64,
    pub ssim: f64,
    pub seam: f64,
    /// Mean panorama loss over the training frames, before quantization.
    pub train_erp_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterRecord>,
    pub stage_seconds: [f64; 2],
    /// Metrics of the scene between the stages, when both ran.
    pub stage1_metrics: Option<HeldOutMetrics>,
    pub final_metrics: Option<HeldOutMetrics>,
}

impl TrainReport {
    pub fn stage_records(&self, stage: u8) -> impl Iterator<Item = &IterRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,stage,loss,gaussians\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{:.17e},{}\n", r.iteration, r.stage, r.loss, r.gaussians));
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let json = |m: &HeldOutMetrics| {
            serde_json::json!({
                "frames": m.frames,
                "psnr": m.psnr,
                "ssim": m.ssim,
                "seam": m.seam,
                "train_erp_loss": m.train_erp_loss,
            })
        };
        let v = serde_json::json!({
            "stage1_iterations": self.stage_records(1).count(),
            "stage2_iterations": self.stage_records(2).count(),
            "stage1_seconds": self.stage_seconds[0],
            "stage2_seconds": self.stage_seconds[1],
            "final_gaussians": self.records.last().map(|r| r.gaussians),
            "stage1_metrics": self.stage1_metrics.as_ref().map(json),
            "final_metrics": self.final_metrics.as_ref().map(json),
        });
        serde_json::to_string_pretty(&v).expect("json values serialize")
    }
}

/// Random initial scene inside a cube of half-width `scene_radius` around
/// the camera centroid, with points kept at least half that radius away
/// from every training camera.
pub fn init_scene(dataset: &PanoDataset, cfg: &TrainConfig) -> Result<GaussianScene> {
    cfg.validate()?;
    let centers: Vec<Vector3<f64>> = dataset.frames.iter().map(|f| f.pose.center()).collect();
    if centers.is_empty() {
        return Err(Error::validation("dataset has no frames"));
    }
    let centroid = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = cfg.scene_radius;
    let bounds = Aabb::new(centroid.add_scalar(-r), centroid.add_scalar(r));
    let mut scene = init_random(cfg.init_gaussians, bounds, cfg.seed)?;
    let min_dist = 0.5 * r;
    for g in &mut scene.gaussians {
        let nearest = centers
            .iter()
            .min_by(|a, b| (g.mu - **a).norm().total_cmp(&(g.mu - **b).norm()))
            .expect("non-empty");
        let d = g.mu - nearest;
        let n = d.norm();
        if n < min_dist {
            let dir = if n > 1e-9 { d / n } else { Vector3::z() };
            g.mu = nearest + dir * (min_dist + n);
        }
    }
    scene.background = Vector3::from(cfg.background);
    Ok(scene)
}

struct Trainer<'a> {
    cfg: TrainConfig,
    dataset: &'a PanoDataset,
    pipeline: PanoPipeline,
    scene: GaussianScene,
    adam: Adam,
    rng: ChaCha8Rng,
    grad_accum: Vec<f64>,
    grad_count: Vec<u32>,
    iteration: usize,
    report: TrainReport,
}

impl<'a> Trainer<'a> {
    fn new(scene: GaussianScene, dataset: &'a PanoDataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        dataset.validate()?;
        if dataset.train.is_empty() {
            return Err(Error::validation("dataset has no training frames"));
        }
        scene.validate()?;
        let n = scene.len();
        Ok(Self {
            pipeline: cfg.pipeline(dataset.erp_h)?,
            cfg: cfg.clone(),
            dataset,
            adam: Adam::new(n),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd3a5_17f1),
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            iteration: 0,
            report: TrainReport::default(),
            scene,
        })
    }

    fn learning_rates(&self) -> [f64; PARAM_COUNT] {
        let c = &self.cfg;
        let total = c.total_iters().max(1) as f64;
        let t = (self.iteration as f64 / total).clamp(0.0, 1.0);
        let pos = (c.lr_position.ln() * (1.0 - t) + c.lr_position_final.ln() * t).exp() * c.scene_radius;
        let mut lr = [0.0; PARAM_COUNT];
        lr[0..3].fill(pos);
        lr[3..7].fill(c.lr_rotation);
        lr[7..10].fill(c.lr_scale);
        lr[10] = c.lr_opacity;
        lr[11..14].fill(c.lr_color);
        lr
    }

    fn record(&mut self, stage: u8, loss: f64) {
        self.iteration += 1;
        self.report.records.push(IterRecord {
            iteration: self.iteration,
            stage,
            loss,
            gaussians: self.scene.len(),
        });
    }

    fn stage1(&mut self, iters: usize) -> Result<()> {
        let start = Instant::now();
        let nviews = self.pipeline.view_count();
        let train = self.dataset.train.clone();
        let mut targets: Vec<Option<Vec<FaceImage>>> = vec![None; train.len()];
        for k in 0..iters {
            let idx = k % (train.len() * nviews);
            let (fi, vi) = (idx / nviews, idx % nviews);
            let frame = &self.dataset.frames[train[fi]];
            if targets[fi].is_none() {
                targets[fi] = Some(self.pipeline.cut_views(&frame.image)?);
            }
            let gt = &targets[fi].as_ref().expect("filled above")[vi];
            let pose = self.pipeline.view_poses(&frame.pose)?[vi].clone();
            let out = self.pipeline.render_view(&self.scene, &pose)?;
            let (loss, grad) = photometric_loss(&out.image, gt, self.cfg.weights())?;
            let grads =
                crate::raster::rasterize_backward(&self.scene, &pose, self.pipeline.intrinsics(), &out, &grad)?;
            for i in 0..self.scene.len() {
                if grads.visible[i] > 0 {
                    self.grad_accum[i] += grads.mean2d_norm[i];
                    self.grad_count[i] += 1;
                }
            }
            let lrs = self.learning_rates();
            self.adam.step(&mut self.scene, &grads, &lrs);
            self.record(1, loss);
            if (k + 1) % self.cfg.densify_interval == 0 && k + 1 <= self.cfg.densify_until {
                self.densify_and_prune();
            }
        }
        self.report.stage_seconds[0] += start.elapsed().as_secs_f64();
        Ok(())
    }

    fn stage2(&mut self, iters: usize) -> Result<()> {
        let start = Instant::now();
        let train = self.dataset.train.clone();
        for k in 0..iters {
            let frame = &self.dataset.frames[train[k % train.len()]];
            let render = self.pipeline.render(&self.scene, &frame.pose)?;
            let (loss, grad) = photometric_loss(&render.e_r, &frame.image, self.cfg.weights())?;
            let grads = self.pipeline.backward(&self.scene, &render, &grad)?;
            let lrs = self.learning_rates();
            self.adam.step(&mut self.scene, &grads, &lrs);
            self.record(2, loss);
        }
        self.report.stage_seconds[1] += start.elapsed().as_secs_f64();
        Ok(())
    }

    fn densify_and_prune(&mut self) {
        let c = &self.cfg;
        let n = self.scene.len();
        let old = std::mem::take(&mut self.scene.gaussians);
        let mut keep: Vec<usize> = (0..n).collect();
        let mut added: Vec<Gaussian3D> = Vec::new();
        let mut split_away = vec![false; n];

        if c.densify_grad_threshold.is_finite() {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&i| self.grad_count[i] > 0)
                .map(|i| (self.grad_accum[i] / self.grad_count[i] as f64, i))
                .filter(|(g, _)| *g >= c.densify_grad_threshold)
                .collect();
            cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let big = c.percent_dense * c.scene_radius;
            for (_, i) in cand {
                if n + added.len() >= c.max_gaussians {
                    break;
                }
                let g = &old[i];
                if g.scale().max() > big {
                    let rot = g.rotation();
                    let s = g.scale();
                    for _ in 0..2 {
                        let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut self.rng));
                        let mut child = g.clone();
                        child.mu = g.mu + rot * s.component_mul(&z);
                        child.log_scale = g.log_scale.add_scalar(-(1.6f64).ln());
                        added.push(child);
                    }
                    split_away[i] = true;
                } else {
                    added.push(g.clone());
                }
            }
        }

        keep.retain(|&i| !split_away[i] && old[i].opacity() >= c.prune_opacity_threshold);
        let mut added: Vec<Gaussian3D> =
            added.into_iter().filter(|g| g.opacity() >= c.prune_opacity_threshold).collect();
        let room = c.max_gaussians.saturating_sub(keep.len());
        added.truncate(room);

        self.adam.select(&keep);
        let mut kept = vec![false; n];
        for &i in &keep {
            kept[i] = true;
        }
        let mut next: Vec<Gaussian3D> = old.into_iter().zip(kept).filter_map(|(g, k)| k.then_some(g)).collect();
        for g in added {
            next.push(g);
            self.adam.push_fresh();
        }
        self.scene.gaussians = next;
        self.grad_accum = vec![0.0; self.scene.len()];
        self.grad_count = vec![0; self.scene.len()];
    }
}

/// Stage 1 only: per-view losses with densify/prune.
pub fn train_intra(scene: GaussianScene, dataset: &PanoDataset, cfg: &TrainConfig) -> Result<(GaussianScene, TrainReport)> {
    let mut t = Trainer::new(scene, dataset, cfg)?;
    t.stage1(cfg.stage1_iters)?;
    Ok((t.scene, t.report))
}

/// Stage 2 only: losses on the composed panorama, topology frozen.
pub fn train_inter(scene: GaussianScene, dataset: &PanoDataset, cfg: &TrainConfig) -> Result<(GaussianScene, TrainReport)> {
    let mut t = Trainer::new(scene, dataset, cfg)?;
    t.iteration = cfg.stage1_iters;
    t.stage2(cfg.stage2_iters)?;
    Ok((t.scene, t.report))
}

/// Both stages with shared optimizer state, then the scene is rounded to
/// file precision and evaluated.
pub fn train(scene: GaussianScene, dataset: &PanoDataset, cfg: &TrainConfig) -> Result<(GaussianScene, TrainReport)> {
    let mut t = Trainer::new(scene, dataset, cfg)?;
    t.stage1(cfg.stage1_iters)?;
    if cfg.stage1_iters > 0 && cfg.stage2_iters > 0 {
        let mut snapshot = t.scene.clone();
        snapshot.round_to_f32();
        t.report.stage1_metrics = Some(evaluate(&snapshot, dataset, cfg)?);
    }
    t.stage2(cfg.stage2_iters)?;
    let mut scene = t.scene;
    let mut report = t.report;
    scene.round_to_f32();
    report.final_metrics = Some(evaluate(&scene, dataset, cfg)?);
    Ok((scene, report))
}

/// Held-out metrics of the composed panorama, on renders quantized to
/// 8-bit sRGB (the values a saved PNG would hold).
pub fn evaluate(scene: &GaussianScene, dataset: &PanoDataset, cfg: &TrainConfig) -> Result<HeldOutMetrics> {
    let pipeline = cfg.pipeline(dataset.erp_h)?;
    let frames = if dataset.test.is_empty() {
        dataset.train.clone()
    } else {
        dataset.test.clone()
    };
    let (mut p, mut s, mut seam) = (0.0, 0.0, 0.0);
    for &i in &frames {
        let f = &dataset.frames[i];
        let img = quantize_srgb8(&pipeline.render(scene, &f.pose)?.e_r);
        p += psnr(&img, &f.image)?;
        s += ssim(&img, &f.image)?;
        seam += seam_score(&img)?;
    }
    let n = frames.len().max(1) as f64;
    let mut erp_loss = 0.0;
    for f in dataset.train_frames() {
        let r = pipeline.render(scene, &f.pose)?;
        erp_loss += photometric_loss(&r.e_r, &f.image, cfg.weights())?.0;
    }
    Ok(HeldOutMetrics {
        frames,
        psnr: p / n,
        ssim: s / n,
        seam: seam / n,
        train_erp_loss: erp_loss / dataset.train.len().max(1) as f64,
    })
}
