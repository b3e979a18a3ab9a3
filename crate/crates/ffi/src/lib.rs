//! C interface to `ngfreg`.
//!
//! Objects are opaque heap handles released with the matching `*_free`.
//! Every fallible call returns an [`NgfregStatus`]; on failure the message is
//! available from [`ngfreg_last_error`] on the same thread. Panics are caught
//! and reported as [`NgfregStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ngfreg::io::{read_deformation, read_volume, write_deformation, write_volume};
use ngfreg::transfer::deformation_to_image_grid;
use ngfreg::warp::warp_image;
use ngfreg::{
    landmark_error, register, DeformationField, Error, Grid3, Image3, LandmarkSet, Levels, MultilevelConfig, NgfParams,
    Precision, PtVariant,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NgfregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    GridMismatch = 4,
    Numeric = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NgfregPrecision {
    Double = 0,
    Single = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NgfregPtVariant {
    Gather = 0,
    Scatter = 1,
    RedBlack = 2,
}

/// Scalar volume.
pub struct NgfregImage {
    inner: Image3<f64>,
}

/// Deformation (positions) on a deformation grid.
pub struct NgfregDeformation {
    inner: DeformationField<f64>,
}

/// Registration settings, initialized to the library defaults.
pub struct NgfregConfig {
    inner: MultilevelConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NgfregStatus {
    match e {
        _ if e.is_io() => NgfregStatus::Io,
        Error::Level { source, .. } => status_of(source),
        Error::GridMismatch(_) => NgfregStatus::GridMismatch,
        Error::Numeric(_) | Error::NonFinite(_) => NgfregStatus::Numeric,
        _ => NgfregStatus::InvalidArgument,
    }
}

struct Fail(NgfregStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NgfregStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(NgfregStatus::InvalidArgument, msg.into())
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NgfregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NgfregStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            NgfregStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn array3<T: Copy>(p: *const T, what: &str) -> Result<[T; 3], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok([*p, *p.add(1), *p.add(2)])
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn grid_from(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Grid3, Fail> {
    Ok(Grid3::new(dims, spacing, origin)?)
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len != src.len() {
        return Err(invalid(format!("buffer holds {len} values, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, len);
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ngfreg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ngfreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Read a MetaImage volume.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_image_read(path: *const c_char, out: *mut *mut NgfregImage) -> NgfregStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, NgfregImage { inner: read_volume(p)? })
    })
}

/// Create a volume from `dims[0]*dims[1]*dims[2]` values, x fastest.
///
/// # Safety
/// `dims`, `spacing` and `origin` point to three values each; `data` to
/// `len` values.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_image_create(
    dims: *const usize,
    spacing: *const f64,
    origin: *const f64,
    data: *const f64,
    len: usize,
    out: *mut *mut NgfregImage,
) -> NgfregStatus {
    guard(|| {
        let grid = grid_from(array3(dims, "dims")?, array3(spacing, "spacing")?, array3(origin, "origin")?)?;
        if data.is_null() {
            return Err(null("data"));
        }
        if len != grid.len() {
            return Err(invalid(format!("got {len} values for {} voxels", grid.len())));
        }
        let values = std::slice::from_raw_parts(data, len).to_vec();
        put(out, NgfregImage { inner: Image3::new(grid, values)? })
    })
}

/// Write a volume; `.mhd` paths get a sibling `.raw` file.
///
/// # Safety
/// `image` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_image_write(image: *const NgfregImage, path: *const c_char) -> NgfregStatus {
    guard(|| Ok(write_volume(&get(image, "image")?.inner, path_arg(path, "path")?)?))
}

/// Dimensions, spacing and origin; any output pointer may be null.
///
/// # Safety
/// Non-null outputs must hold three values.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_image_geometry(
    image: *const NgfregImage,
    dims: *mut usize,
    spacing: *mut f64,
    origin: *mut f64,
) -> NgfregStatus {
    guard(|| {
        let g = *get(image, "image")?.inner.grid();
        for d in 0..3 {
            if !dims.is_null() {
                *dims.add(d) = g.dims()[d];
            }
            if !spacing.is_null() {
                *spacing.add(d) = g.spacing()[d];
            }
            if !origin.is_null() {
                *origin.add(d) = g.origin()[d];
            }
        }
        Ok(())
    })
}

/// Copy the voxel values into `out`, which must hold exactly `len` values.
///
/// # Safety
/// `out` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_image_copy_values(image: *const NgfregImage, out: *mut f64, len: usize) -> NgfregStatus {
    guard(|| copy_out(get(image, "image")?.inner.values(), out, len))
}

/// # Safety
/// `image` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_image_free(image: *mut NgfregImage) {
    free(image)
}

/// Settings with library defaults. Free with [`ngfreg_config_free`].
#[no_mangle]
pub extern "C" fn ngfreg_config_new() -> *mut NgfregConfig {
    Box::into_raw(Box::new(NgfregConfig {
        inner: MultilevelConfig::default(),
    }))
}

/// # Safety
/// `config` must come from [`ngfreg_config_new`] (or be null).
#[no_mangle]
pub unsafe extern "C" fn ngfreg_config_free(config: *mut NgfregConfig) {
    free(config)
}

/// Regularization weight.
///
/// # Safety
/// `config` must come from [`ngfreg_config_new`].
#[no_mangle]
pub unsafe extern "C" fn ngfreg_config_set_alpha(config: *mut NgfregConfig, alpha: f64) -> NgfregStatus {
    guard(|| {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid(format!("alpha must be > 0, got {alpha}")));
        }
        get_mut(config, "config")?.inner.alpha = alpha;
        Ok(())
    })
}

/// Edge parameters of the template (`tau`) and reference (`rho`).
///
/// # Safety
/// `config` must come from [`ngfreg_config_new`].
#[no_mangle]
pub unsafe extern "C" fn ngfreg_config_set_edge(config: *mut NgfregConfig, tau: f64, rho: f64) -> NgfregStatus {
    guard(|| {
        get_mut(config, "config")?.inner.ngf = NgfParams::new(tau, rho)?;
        Ok(())
    })
}

/// Pyramid depth; 0 picks it automatically.
///
/// # Safety
/// `config` must come from [`ngfreg_config_new`].
#[no_mangle]
pub unsafe extern "C" fn ngfreg_config_set_levels(config: *mut NgfregConfig, levels: usize) -> NgfregStatus {
    guard(|| {
        get_mut(config, "config")?.inner.levels = if levels == 0 { Levels::Auto } else { Levels::Fixed(levels) };
        Ok(())
    })
}

/// Image cells per deformation cell.
///
/// # Safety
/// `config` must come from [`ngfreg_config_new`].
#[no_mangle]
pub unsafe extern "C" fn ngfreg_config_set_grid_ratio(config: *mut NgfregConfig, ratio: usize) -> NgfregStatus {
    guard(|| {
        if ratio == 0 {
            return Err(invalid("grid ratio must be >= 1"));
        }
        get_mut(config, "config")?.inner.grid_ratio = ratio;
        Ok(())
    })
}

/// Worker threads; 0 uses all cores.
///
/// # Safety
/// `config` must come from [`ngfreg_config_new`].
#[no_mangle]
pub unsafe extern "C" fn ngfreg_config_set_threads(config: *mut NgfregConfig, threads: usize) -> NgfregStatus {
    guard(|| {
        get_mut(config, "config")?.inner.workers = threads;
        Ok(())
    })
}

/// Iteration cap per level.
///
/// # Safety
/// `config` must come from [`ngfreg_config_new`].
#[no_mangle]
pub unsafe extern "C" fn ngfreg_config_set_max_iterations(config: *mut NgfregConfig, n: usize) -> NgfregStatus {
    guard(|| {
        get_mut(config, "config")?.inner.lbfgs.max_iterations = n;
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`ngfreg_config_new`].
#[no_mangle]
pub unsafe extern "C" fn ngfreg_config_set_precision(config: *mut NgfregConfig, precision: NgfregPrecision) -> NgfregStatus {
    guard(|| {
        get_mut(config, "config")?.inner.precision = match precision {
            NgfregPrecision::Double => Precision::F64,
            NgfregPrecision::Single => Precision::F32,
        };
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`ngfreg_config_new`].
#[no_mangle]
pub unsafe extern "C" fn ngfreg_config_set_pt_variant(config: *mut NgfregConfig, variant: NgfregPtVariant) -> NgfregStatus {
    guard(|| {
        get_mut(config, "config")?.inner.pt_variant = match variant {
            NgfregPtVariant::Gather => PtVariant::Gather,
            NgfregPtVariant::Scatter => PtVariant::ScatterAtomic,
            NgfregPtVariant::RedBlack => PtVariant::RedBlack,
        };
        Ok(())
    })
}

/// Register `template` onto `reference` (same grid). A null `config` uses
/// the defaults.
///
/// # Safety
/// Handles must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_register(
    reference: *const NgfregImage,
    template: *const NgfregImage,
    config: *const NgfregConfig,
    out: *mut *mut NgfregDeformation,
) -> NgfregStatus {
    guard(|| {
        let r = &get(reference, "reference")?.inner;
        let t = &get(template, "template")?.inner;
        let default = MultilevelConfig::default();
        let cfg = config.as_ref().map_or(&default, |c| &c.inner);
        let (y, _) = register(r, t, cfg)?;
        put(out, NgfregDeformation { inner: y })
    })
}

/// Template resampled through the deformation onto its own grid.
///
/// # Safety
/// Handles must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_warp(
    template: *const NgfregImage,
    deformation: *const NgfregDeformation,
    out: *mut *mut NgfregImage,
) -> NgfregStatus {
    guard(|| {
        let t = &get(template, "template")?.inner;
        let y = &get(deformation, "deformation")?.inner;
        let yhat = deformation_to_image_grid(y, t.grid())?;
        put(out, NgfregImage { inner: warp_image(t, &yhat).warped })
    })
}

/// # Safety
/// `path` must be nul-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_deformation_read(path: *const c_char, out: *mut *mut NgfregDeformation) -> NgfregStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, NgfregDeformation { inner: read_deformation(p)? })
    })
}

/// # Safety
/// `deformation` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_deformation_write(deformation: *const NgfregDeformation, path: *const c_char) -> NgfregStatus {
    guard(|| Ok(write_deformation(&get(deformation, "deformation")?.inner, path_arg(path, "path")?)?))
}

/// Deformation grid dimensions.
///
/// # Safety
/// `dims` must hold three values.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_deformation_dims(deformation: *const NgfregDeformation, dims: *mut usize) -> NgfregStatus {
    guard(|| {
        let g = *get(deformation, "deformation")?.inner.grid();
        if dims.is_null() {
            return Err(null("dims"));
        }
        for d in 0..3 {
            *dims.add(d) = g.dims()[d];
        }
        Ok(())
    })
}

/// Copy positions into `out` (length `3 * points`): all x, then all y, then
/// all z, in mm.
///
/// # Safety
/// `out` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_deformation_copy_positions(
    deformation: *const NgfregDeformation,
    out: *mut f64,
    len: usize,
) -> NgfregStatus {
    guard(|| copy_out(&get(deformation, "deformation")?.inner.to_flat(), out, len))
}

/// Largest displacement in voxels of `image`'s grid.
///
/// # Safety
/// Handles must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_deformation_max_displacement(
    deformation: *const NgfregDeformation,
    image: *const NgfregImage,
    out: *mut f64,
) -> NgfregStatus {
    guard(|| {
        let y = &get(deformation, "deformation")?.inner;
        let g = get(image, "image")?.inner.grid();
        *get_mut(out, "out")? = y.max_displacement_voxels(g);
        Ok(())
    })
}

/// # Safety
/// `deformation` must come from this library (or be null).
#[no_mangle]
pub unsafe extern "C" fn ngfreg_deformation_free(deformation: *mut NgfregDeformation) {
    free(deformation)
}

/// Mean and standard deviation of the landmark error in mm. Points are
/// `count` world-coordinate triples (x, y, z interleaved); `image` supplies
/// the domain used to flag points outside it.
///
/// # Safety
/// Point arrays must hold `3 * count` values; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn ngfreg_landmark_error(
    deformation: *const NgfregDeformation,
    image: *const NgfregImage,
    reference_points: *const f64,
    template_points: *const f64,
    count: usize,
    mean: *mut f64,
    stddev: *mut f64,
) -> NgfregStatus {
    guard(|| {
        let y = &get(deformation, "deformation")?.inner;
        let g = get(image, "image")?.inner.grid();
        let points = |p: *const f64, what: &str| -> Result<LandmarkSet, Fail> {
            if p.is_null() {
                return Err(null(what));
            }
            let raw = std::slice::from_raw_parts(p, 3 * count);
            Ok(LandmarkSet::from_world(raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())?)
        };
        let e = landmark_error(y, &points(reference_points, "reference_points")?, &points(template_points, "template_points")?, g)?;
        if let Some(m) = mean.as_mut() {
            *m = e.mean;
        }
        if let Some(s) = stddev.as_mut() {
            *s = e.stddev;
        }
        Ok(())
    })
}
