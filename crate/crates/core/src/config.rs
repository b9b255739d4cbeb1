//! Flat `key = value` configuration files.
//!
//! Blank lines and text after `#` are ignored. Keys are the field names of
//! [`TrainConfig`] plus `dataset`, a path resolved against the directory
//! holding the config file. Booleans are `true`/`false`, `background` takes
//! three numbers, and `inf` is accepted for `densify_grad_threshold`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::optim::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, path, base)
}

/// Parses config text; `origin` names the source in errors and `base`
/// anchors relative paths.
pub fn parse_config(text: &str, origin: &Path, base: &Path) -> Result<ConfigFile> {
    let mut cfg = ConfigFile {
        train: TrainConfig::default(),
        dataset: None,
    };
    for (ln, raw) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            record: ln + 1,
            msg,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        set_key(&mut cfg, key, value, base).map_err(err)?;
    }
    cfg.train.validate().map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        record: 0,
        msg: e.to_string(),
    })?;
    Ok(cfg)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{key}: cannot parse {v:?}: {e}"))
}

fn set_key(cfg: &mut ConfigFile, key: &str, v: &str, base: &Path) -> std::result::Result<(), String> {
    let t = &mut cfg.train;
    match key {
        "dataset" => cfg.dataset = Some(base.join(v)),
        "lambda1" => t.lambda1 = num(key, v)?,
        "lambda2" => t.lambda2 = num(key, v)?,
        "stage1_iters" => t.stage1_iters = num(key, v)?,
        "stage2_iters" => t.stage2_iters = num(key, v)?,
        "lr_position" => t.lr_position = num(key, v)?,
        "lr_position_final" => t.lr_position_final = num(key, v)?,
        "lr_rotation" => t.lr_rotation = num(key, v)?,
        "lr_scale" => t.lr_scale = num(key, v)?,
        "lr_opacity" => t.lr_opacity = num(key, v)?,
        "lr_color" => t.lr_color = num(key, v)?,
        "densify_interval" => t.densify_interval = num(key, v)?,
        "densify_until" => t.densify_until = num(key, v)?,
        "densify_grad_threshold" => t.densify_grad_threshold = num(key, v)?,
        "prune_opacity_threshold" => t.prune_opacity_threshold = num(key, v)?,
        "max_gaussians" => t.max_gaussians = num(key, v)?,
        "percent_dense" => t.percent_dense = num(key, v)?,
        "init_gaussians" => t.init_gaussians = num(key, v)?,
        "scene_radius" => t.scene_radius = num(key, v)?,
        "padding_p" => t.padding_p = num(key, v)?,
        "face_res" => t.face_res = num(key, v)?,
        "transition_planes" => t.transition_planes = num(key, v)?,
        "seed" => t.seed = num(key, v)?,
        "background" => {
            let vals = v.split_whitespace().map(|s| num::<f64>(key, s)).collect::<std::result::Result<Vec<_>, _>>()?;
            t.background = vals
                .try_into()
                .map_err(|v: Vec<f64>| format!("background: expected 3 values, got {}", v.len()))?;
        }
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}
