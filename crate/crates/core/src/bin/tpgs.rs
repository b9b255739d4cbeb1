use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tpgs::config::{load_config, ConfigFile};
use tpgs::dataio::{
    frame_file_name, list_frames, load_dataset, make_synthetic, read_png, read_poses, save_dataset, write_png,
    PanoDataset, SplitSpec,
};
use tpgs::optim::{init_scene, train, Ablation, TrainConfig};
use tpgs::panocompose::stitch_views;
use tpgs::quality::{psnr, seam_score, ssim};
use tpgs::scene::{load_scene, save_scene};
use tpgs::sphergeo::{erp_to_cubemap, CubeFaceId, FaceLayout};
use tpgs::CameraPose;

#[derive(Parser)]
#[command(name = "tpgs", version, about = "Panoramic Gaussian splatting through cube faces and transition planes")]
struct Cli {
    /// Maximum number of worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    /// ERP panorama to six faces.
    ToCube,
    /// Six faces to an ERP panorama.
    ToErp,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Train,
    All,
}

#[derive(clap::Args)]
struct AblationArgs {
    /// Drop the six transition views; the panorama is the base stitch alone.
    #[arg(long)]
    disable_tp: bool,
    /// Single-stage training: per-view losses for the whole budget.
    #[arg(long)]
    disable_op: bool,
    /// No cube padding (p = 0).
    #[arg(long)]
    disable_cp: bool,
}

impl AblationArgs {
    fn get(&self) -> Ablation {
        Ablation {
            disable_tp: self.disable_tp,
            disable_op: self.disable_op,
            disable_cp: self.disable_cp,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert between an ERP panorama and six (padded) cube faces.
    Project {
        #[arg(long, value_enum)]
        direction: Direction,
        /// Unpadded face resolution (default: the ERP height).
        #[arg(long)]
        face_res: Option<usize>,
        /// Padding in ERP-height pixels.
        #[arg(long, default_value_t = 0)]
        padding: usize,
        /// ERP height for `to-erp` (default: from the faces' metadata file).
        #[arg(long)]
        erp_height: Option<usize>,
        /// Input PNG (`to-cube`) or face directory (`to-erp`).
        input: PathBuf,
        /// Output directory (`to-cube`) or PNG (`to-erp`).
        output: PathBuf,
    },
    /// Train a scene on a dataset: per-view stage, then panorama stage.
    Train {
        /// Training config (`key = value` lines).
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (overrides the config's `dataset`).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Where to write the trained scene.
        #[arg(long)]
        out_scene: PathBuf,
        /// Loss series CSV; a summary JSON is written next to it.
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        ablation: AblationArgs,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render ERP panoramas of a scene through the view pipeline.
    Render {
        /// Scene file to render.
        #[arg(long)]
        scene: PathBuf,
        /// Render the poses of this dataset.
        #[arg(long, conflicts_with = "poses")]
        dataset: Option<PathBuf>,
        /// Which dataset frames to render.
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Pose file (12 numbers per line) instead of a dataset.
        #[arg(long, requires = "erp_height")]
        poses: Option<PathBuf>,
        /// Panorama height; required with `--poses`, defaults to the dataset's.
        #[arg(long)]
        erp_height: Option<usize>,
        /// Training config providing face resolution and padding.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationArgs,
        /// Output directory for `%06d.png` frames.
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR, SSIM and seam score of rendered frames against ground truth.
    Eval {
        /// Directory of rendered `%06d.png` frames.
        #[arg(long)]
        renders: PathBuf,
        /// Directory with ground-truth frames of the same names.
        #[arg(long)]
        gt: PathBuf,
        /// Output CSV (per-frame rows and a mean row).
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset and its ground-truth scene.
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of ground-truth Gaussians.
        #[arg(long, default_value_t = 16)]
        gaussians: usize,
        /// Number of panoramic frames; every eighth is held out for testing.
        #[arg(long, default_value_t = 8)]
        poses: usize,
        /// Panorama height; the width is twice this.
        #[arg(long, default_value_t = 128)]
        erp_height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Ground-truth scene path (default: `<out>/gt_scene.tpgs`).
        #[arg(long)]
        scene_out: Option<PathBuf>,
    },
    /// Train the four ablation rows and write a comparison table.
    Ablate {
        /// Training config shared by all four rows.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (overrides the config's `dataset`).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output CSV: variant, psnr, ssim, seam.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<tpgs::Error> for Failure {
    fn from(e: tpgs::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Project {
            direction,
            face_res,
            padding,
            erp_height,
            input,
            output,
        } => match direction {
            Direction::ToCube => project_to_cube(&input, &output, face_res, padding),
            Direction::ToErp => project_to_erp(&input, &output, face_res, padding, erp_height),
        },
        Command::Train {
            config,
            dataset,
            out_scene,
            report,
            ablation,
            seed,
        } => {
            let (cfg, ds) = setup(&config, dataset, seed, ablation.get())?;
            let scene = init_scene(&ds, &cfg)?;
            let (scene, rep) = train(scene, &ds, &cfg)?;
            save_scene(&scene, &out_scene)?;
            write_text(&report, &rep.to_csv())?;
            write_text(&report.with_extension("json"), &rep.summary_json())?;
            if let Some(m) = &rep.final_metrics {
                println!("psnr {:.4} ssim {:.4} seam {:.4}", m.psnr, m.ssim, m.seam);
            }
            Ok(())
        }
        Command::Render {
            scene,
            dataset,
            split,
            poses,
            erp_height,
            config,
            ablation,
            out,
        } => {
            let cfg = match &config {
                Some(c) => load_config(c)?.train,
                None => TrainConfig::default(),
            };
            let cfg = cfg.with_ablation(ablation.get());
            let scene = load_scene(&scene)?;
            let (indexed, erp_h): (Vec<(usize, CameraPose)>, usize) = match (dataset, poses) {
                (Some(d), _) => {
                    let ds = load_dataset(&d, &SplitSpec::Auto)?;
                    let idx = match split {
                        SplitArg::Test => ds.test.clone(),
                        SplitArg::Train => ds.train.clone(),
                        SplitArg::All => (0..ds.frames.len()).collect(),
                    };
                    (idx.into_iter().map(|i| (i, ds.frames[i].pose.clone())).collect(), ds.erp_h)
                }
                (None, Some(p)) => {
                    let h = erp_height.ok_or_else(|| Failure::Usage("--poses needs --erp-height".into()))?;
                    (read_poses(&p)?.into_iter().enumerate().collect(), h)
                }
                (None, None) => return Err(Failure::Usage("render needs --dataset or --poses".into())),
            };
            let pipeline = cfg.pipeline(erp_h).map_err(|e| Failure::Usage(e.to_string()))?;
            fs::create_dir_all(&out).map_err(|e| tpgs::Error::io(&out, e))?;
            for (i, pose) in indexed {
                let r = pipeline.render(&scene, &pose)?;
                write_png(&r.e_r, out.join(frame_file_name(i)))?;
            }
            Ok(())
        }
        Command::Eval { renders, gt, out } => eval(&renders, &gt, &out),
        Command::Synth {
            out,
            gaussians,
            poses,
            erp_height,
            seed,
            scene_out,
        } => {
            if gaussians == 0 {
                return Err(Failure::Usage("--gaussians must be at least 1".into()));
            }
            let (scene, ds) = make_synthetic(gaussians, poses, erp_height, seed).map_err(|e| Failure::Usage(e.to_string()))?;
            save_dataset(&ds, &out)?;
            save_scene(&scene, scene_out.unwrap_or_else(|| out.join("gt_scene.tpgs")))?;
            Ok(())
        }
        Command::Ablate {
            config,
            dataset,
            out,
            seed,
        } => {
            let rows = [
                ("3DGS(P)", Ablation { disable_tp: true, disable_op: true, disable_cp: true }),
                ("+TP", Ablation { disable_tp: false, disable_op: true, disable_cp: true }),
                ("+TP+OP", Ablation { disable_tp: false, disable_op: false, disable_cp: true }),
                ("+TP+OP+CP", Ablation::default()),
            ];
            let mut csv = String::from("variant,psnr,ssim,seam\n");
            for (name, a) in rows {
                let (cfg, ds) = setup(&config, dataset.clone(), seed, a)?;
                let (_, rep) = train(init_scene(&ds, &cfg)?, &ds, &cfg)?;
                let m = rep.final_metrics.expect("train evaluates");
                println!("{name:<10} psnr {:.4} ssim {:.4} seam {:.4}", m.psnr, m.ssim, m.seam);
                csv.push_str(&format!("{name},{:.6},{:.6},{:.6}\n", m.psnr, m.ssim, m.seam));
            }
            write_text(&out, &csv)
        }
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| tpgs::Error::io(path, e).into())
}

fn setup(config: &Path, dataset: Option<PathBuf>, seed: Option<u64>, a: Ablation) -> Result<(TrainConfig, PanoDataset), Failure> {
    let ConfigFile { mut train, dataset: cfg_ds } = load_config(config)?;
    if let Some(s) = seed {
        train.seed = s;
    }
    let dir = dataset
        .or(cfg_ds)
        .ok_or_else(|| Failure::Usage("no dataset: pass --dataset or set `dataset` in the config".into()))?;
    let ds = load_dataset(&dir, &SplitSpec::Auto)?;
    let cfg = train.with_ablation(a);
    cfg.pipeline(ds.erp_h).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok((cfg, ds))
}

const CUBE_META: &str = "cubemap.txt";

fn project_to_cube(input: &Path, out: &Path, face_res: Option<usize>, p: usize) -> CliResult {
    let erp = read_png(input)?;
    erp.check_erp().map_err(|e| Failure::Usage(e.to_string()))?;
    let face_res = face_res.unwrap_or(erp.height());
    FaceLayout::new(face_res, p, erp.height(), erp.width()).map_err(|e| Failure::Usage(e.to_string()))?;
    let faces = erp_to_cubemap(&erp, face_res, p)?;
    fs::create_dir_all(out).map_err(|e| tpgs::Error::io(out, e))?;
    for (face, img) in CubeFaceId::ALL.iter().zip(&faces) {
        write_png(img, out.join(format!("{}.png", face.name())))?;
    }
    write_text(
        &out.join(CUBE_META),
        &format!("face_res = {face_res}\npadding = {p}\nerp_height = {}\n", erp.height()),
    )
}

fn project_to_erp(
    input: &Path,
    out: &Path,
    face_res: Option<usize>,
    p: usize,
    erp_height: Option<usize>,
) -> CliResult {
    let mut padding = p;
    let mut erp_h = erp_height;
    let meta = input.join(CUBE_META);
    if meta.exists() {
        let text = fs::read_to_string(&meta).map_err(|e| tpgs::Error::io(&meta, e))?;
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                let v: usize = v.trim().parse().map_err(|_| Failure::Runtime(format!("{}: bad value {v:?}", meta.display())))?;
                match k.trim() {
                    "padding" if p == 0 => padding = v,
                    "erp_height" if erp_h.is_none() => erp_h = Some(v),
                    _ => {}
                }
            }
        }
    }
    let erp_h = erp_h.ok_or_else(|| Failure::Usage("--erp-height is required without a cubemap.txt".into()))?;
    let faces = CubeFaceId::ALL
        .iter()
        .map(|f| read_png(input.join(format!("{}.png", f.name()))))
        .collect::<tpgs::Result<Vec<_>>>()?;
    if let Some(r) = face_res {
        FaceLayout::new(r, padding, erp_h, 2 * erp_h).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let erp = stitch_views(&faces, padding, erp_h).map_err(|e| Failure::Usage(e.to_string()))?;
    write_png(&erp, out).map_err(Failure::from)
}

fn eval(renders: &Path, gt: &Path, out: &Path) -> CliResult {
    let frames = list_frames(renders)?;
    if frames.is_empty() {
        return Err(Failure::Runtime(format!("{}: no numbered PNG frames", renders.display())));
    }
    let mut csv = String::from("frame,psnr,ssim,seam\n");
    let (mut sp, mut ss, mut sm) = (0.0, 0.0, 0.0);
    for (idx, path) in &frames {
        let r = read_png(path)?;
        let g = read_png(gt.join(frame_file_name(*idx)))?;
        let (p, s, m) = (psnr(&r, &g)?, ssim(&r, &g)?, seam_score(&r)?);
        sp += p;
        ss += s;
        sm += m;
        csv.push_str(&format!("{idx},{p:.10},{s:.10},{m:.10}\n"));
    }
    let n = frames.len() as f64;
    csv.push_str(&format!("mean,{:.10},{:.10},{:.10}\n", sp / n, ss / n, sm / n));
    println!("mean psnr {:.4} ssim {:.4} seam {:.4}", sp / n, ss / n, sm / n);
    write_text(out, &csv)
}
