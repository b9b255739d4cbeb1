//! C ABI over the `tpgs` core: scene files, panorama rendering, cube-map
//! projection and the quality metrics.
//!
//! Conventions:
//! - Every fallible call returns a [`TpgsStatus`]; on failure a message is
//!   available from [`tpgs_last_error`] on the same thread.
//! - Scenes and images are opaque handles created by this library and
//!   released with the matching `*_free` function. Freeing NULL is a no-op.
//! - Images are row-major, interleaved RGB `double`s in linear [0, 1].
//! - Poses are 3x4 world-to-camera matrices `[R | t]`, row-major, 12 values.
//! - Panics never cross the boundary; they surface as `TPGS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tpgs::panocompose::PanoPipeline;
use tpgs::quality::{psnr, seam_score, ssim};
use tpgs::scene::{load_scene, save_scene};
use tpgs::sphergeo::{cubemap_to_erp, erp_to_cubemap, padded_fov, FaceLayout};
use tpgs::{CameraPose, Error, GaussianScene, Image};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TpgsStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A path was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Input outside the domain of an operation.
    Domain = 3,
    /// A size, shape or setting check failed.
    Validation = 4,
    /// A file record could not be parsed.
    Parse = 5,
    /// A file could not be read or written.
    Io = 6,
    /// A file had the wrong layout.
    Format = 7,
    /// Inconsistent paired inputs.
    Contract = 8,
    /// Internal panic; the handles passed in are still valid.
    Panic = 9,
}

/// Opaque Gaussian scene.
pub struct TpgsScene(GaussianScene);

/// Opaque RGB image.
pub struct TpgsImage(Image);

/// Number of cube faces, in the order front, right, back, left, up, down.
pub const TPGS_CUBE_FACES: usize = 6;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    // interior NULs cannot cross into C; replace them rather than drop the text
    let msg = CString::new(msg.replace('\0', "?")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> TpgsStatus {
    match err {
        Error::Domain(_) => TpgsStatus::Domain,
        Error::Validation(_) => TpgsStatus::Validation,
        Error::Parse { .. } => TpgsStatus::Parse,
        Error::Contract(_) => TpgsStatus::Contract,
        Error::Io { .. } => TpgsStatus::Io,
        Error::Format { .. } => TpgsStatus::Format,
    }
}

struct Failure(TpgsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any failure for [`tpgs_last_error`] and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TpgsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TpgsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            TpgsStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(TpgsStatus::NullArgument, format!("{name} is NULL"))
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TpgsStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

fn boxed_image(img: Image) -> *mut TpgsImage {
    Box::into_raw(Box::new(TpgsImage(img)))
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The string stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn tpgs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

// ---------------------------------------------------------------------------
// scenes

/// Loads a scene file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tpgs_scene_load(path: *const c_char, out: *mut *mut TpgsScene) -> TpgsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let scene = load_scene(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(TpgsScene(scene)));
        Ok(())
    })
}

/// Writes `scene` to `path`.
///
/// # Safety
/// `scene` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tpgs_scene_save(scene: *const TpgsScene, path: *const c_char) -> TpgsStatus {
    guard(|| {
        let scene = deref(scene, "scene")?;
        save_scene(&scene.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Number of Gaussians in `scene`; 0 for NULL.
///
/// # Safety
/// `scene` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tpgs_scene_len(scene: *const TpgsScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `scene` must be NULL or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tpgs_scene_free(scene: *mut TpgsScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

// ---------------------------------------------------------------------------
// images

/// Creates a `height` x `width` image. `rgb` holds `height * width * 3`
/// values, or is NULL for a black image.
///
/// # Safety
/// A non-NULL `rgb` must point to `height * width * 3` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn tpgs_image_new(
    height: usize,
    width: usize,
    rgb: *const f64,
    out: *mut *mut TpgsImage,
) -> TpgsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let n = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Failure(TpgsStatus::Validation, "image size overflows".into()))?;
        let img = if rgb.is_null() {
            Image::new(height, width)
        } else {
            Image::from_vec(height, width, std::slice::from_raw_parts(rgb, n).to_vec())?
        };
        *out = boxed_image(img);
        Ok(())
    })
}

/// # Safety
/// `img` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tpgs_image_height(img: *const TpgsImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `img` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tpgs_image_width(img: *const TpgsImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// Pixel data, `height * width * 3` doubles, valid until the image is freed.
///
/// # Safety
/// `img` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tpgs_image_data(img: *const TpgsImage) -> *const f64 {
    img.as_ref().map_or(ptr::null(), |i| i.0.data().as_ptr())
}

/// # Safety
/// `img` must be NULL or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn tpgs_image_free(img: *mut TpgsImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

// ---------------------------------------------------------------------------
// rendering and projection

/// Renders the `erp_h` x `2*erp_h` panorama of `scene` seen from `pose`
/// through padded cube faces, composited with the 45-degree transition cube
/// when `transition` is true.
///
/// # Safety
/// `pose` must point to 12 doubles; handles must come from this library.
#[no_mangle]
pub unsafe extern "C" fn tpgs_render_erp(
    scene: *const TpgsScene,
    pose: *const f64,
    erp_h: usize,
    face_res: usize,
    padding_p: usize,
    transition: bool,
    out: *mut *mut TpgsImage,
) -> TpgsStatus {
    guard(|| {
        let scene = deref(scene, "scene")?;
        let out = out_ptr(out, "out")?;
        if pose.is_null() {
            return Err(null("pose"));
        }
        let m: &[f64; 12] = &*(pose as *const [f64; 12]);
        let pose = CameraPose::from_row_major(m)?;
        let pipe = PanoPipeline::new(erp_h, face_res, padding_p, transition)?;
        let render = pipe.render(&scene.0, &pose)?;
        *out = boxed_image(render.e_r);
        Ok(())
    })
}

/// Cuts a panorama into six padded faces of `face_res` nominal pixels,
/// written to `out[0..6]` in face order.
///
/// # Safety
/// `out` must point to six writable handle slots.
#[no_mangle]
pub unsafe extern "C" fn tpgs_erp_to_cubemap(
    erp: *const TpgsImage,
    face_res: usize,
    padding_p: usize,
    out: *mut *mut TpgsImage,
) -> TpgsStatus {
    guard(|| {
        let erp = deref(erp, "erp")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let faces = erp_to_cubemap(&erp.0, face_res, padding_p)?;
        for (k, face) in faces.into_iter().enumerate() {
            *out.add(k) = boxed_image(face);
        }
        Ok(())
    })
}

/// Stitches six padded faces back into an `erp_h` x `2*erp_h` panorama.
///
/// # Safety
/// `faces` must point to six image handles from this library.
#[no_mangle]
pub unsafe extern "C" fn tpgs_cubemap_to_erp(
    faces: *const *const TpgsImage,
    face_res: usize,
    padding_p: usize,
    erp_h: usize,
    out: *mut *mut TpgsImage,
) -> TpgsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if faces.is_null() {
            return Err(null("faces"));
        }
        let faces: Vec<Image> = (0..TPGS_CUBE_FACES)
            .map(|k| deref(*faces.add(k), "face").map(|f| f.0.clone()))
            .collect::<Result<_, _>>()?;
        let layout = FaceLayout::new(face_res, padding_p, erp_h, 2 * erp_h)?;
        *out = boxed_image(cubemap_to_erp(&faces, &layout)?);
        Ok(())
    })
}

/// Field of view of a face padded by `p` ERP pixels at height `erp_h`, in
/// radians; NaN when `erp_h` is 0.
#[no_mangle]
pub extern "C" fn tpgs_padded_fov(p: usize, erp_h: usize) -> f64 {
    if erp_h == 0 {
        return f64::NAN;
    }
    padded_fov(p, erp_h)
}

// ---------------------------------------------------------------------------
// metrics

unsafe fn metric2(
    a: *const TpgsImage,
    b: *const TpgsImage,
    out: *mut f64,
    f: fn(&Image, &Image) -> tpgs::Result<f64>,
) -> TpgsStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        let out = out_ptr(out, "out")?;
        *out = f(&a.0, &b.0)?;
        Ok(())
    })
}

/// PSNR of two same-size images in dB, capped at 99 for identical inputs.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tpgs_psnr(a: *const TpgsImage, b: *const TpgsImage, out: *mut f64) -> TpgsStatus {
    metric2(a, b, out, psnr)
}

/// Mean SSIM of two same-size images.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tpgs_ssim(a: *const TpgsImage, b: *const TpgsImage, out: *mut f64) -> TpgsStatus {
    metric2(a, b, out, ssim)
}

/// Seam score of a panorama: mean gradient magnitude on cube-face boundaries
/// divided by the mean elsewhere; near 1 means no visible seams.
///
/// # Safety
/// `erp` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tpgs_seam_score(erp: *const TpgsImage, out: *mut f64) -> TpgsStatus {
    guard(|| {
        let erp = deref(erp, "erp")?;
        let out = out_ptr(out, "out")?;
        *out = seam_score(&erp.0)?;
        Ok(())
    })
}
