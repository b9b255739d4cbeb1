//! Gaussian splatting for panoramas through cube faces and transition
//! planes.
//!
//! An equirectangular (ERP) panorama is cut into six perspective cube faces
//! plus six transition views yawed by 45 degrees. Each view is rendered by
//! a tile rasterizer, and the views are stitched back into panoramas and
//! composed. Training first fits the per-view images, then the composed
//! panorama, with gradients carried through every resampling step.
//!
//! Modules, bottom up:
//! - [`sphergeo`]: spherical and ERP coordinates, cube faces, padding, stitching plans
//! - [`scene`]: Gaussian parameters and the scene file
//! - [`raster`]: forward and backward tile rasterization
//! - [`panocompose`]: stitching, yaw rotation and composition
//! - [`quality`]: PSNR, SSIM and the seam score
//! - [`optim`]: losses, Adam and the two training stages
//! - [`dataio`]: datasets, PNG, synthetic data and the oracle renderer
//! - [`config`]: config files

pub mod config;
pub mod dataio;
pub mod error;
pub mod imagebuf;
pub mod optim;
pub mod panocompose;
pub mod quality;
pub mod raster;
pub mod scene;
pub mod sphergeo;

pub use error::{Error, Result};
pub use imagebuf::{ErpImage, FaceImage, Image};
pub use scene::{Gaussian3D, GaussianScene};
pub use sphergeo::CameraPose;
