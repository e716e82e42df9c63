//! C ABI for `inpaint-forge`.
//!
//! Every fallible call returns a [`ForgeStatus`]; on failure the message is
//! available from [`forge_last_error`] on the same thread. Objects are
//! opaque handles released with their matching `*_free` function. Strings
//! returned through out-parameters are released with [`forge_string_free`].
//! Panics never cross the boundary; they surface as
//! `FORGE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use inpaint_forge::mask_ops::{dilate, iou, BinaryMask};
use inpaint_forge::metrics::{self, FeatureSet};
use inpaint_forge::pipeline::{build, BuildConfig};
use inpaint_forge::relations::{spatial_location, LocationThird};
use inpaint_forge::scene_graph::{parse_scene_graphs, BBox, ParseReport, SceneGraph};
use inpaint_forge::ForgeError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForgeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Config = 6,
    EmptyInput = 7,
    Contract = 8,
    Numeric = 9,
    Image = 10,
    Provider = 11,
    Panic = 12,
}

/// Pixel box: `x`, `y` top-left, `w`, `h` extent.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForgeBBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl From<ForgeBBox> for BBox {
    fn from(b: ForgeBBox) -> Self {
        BBox::new(b.x, b.y, b.w, b.h)
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForgeLocation {
    Left = 0,
    Center = 1,
    Right = 2,
}

/// Parsed annotation file.
pub struct ForgeSceneGraphs {
    graphs: Vec<SceneGraph>,
    report: ParseReport,
}

/// Binary mask.
pub struct ForgeMask(BinaryMask);

struct Failure(ForgeStatus, String);

impl From<ForgeError> for Failure {
    fn from(e: ForgeError) -> Self {
        let status = match &e {
            ForgeError::Io { .. } => ForgeStatus::Io,
            ForgeError::Parse { .. } => ForgeStatus::Parse,
            ForgeError::InvalidParameter(_) | ForgeError::DimensionMismatch(_) => ForgeStatus::InvalidArgument,
            ForgeError::Registry(_) | ForgeError::Config(_) => ForgeStatus::Config,
            ForgeError::EmptyRelationCorpus | ForgeError::EmptyInput(_) => ForgeStatus::EmptyInput,
            ForgeError::Contract(_) => ForgeStatus::Contract,
            ForgeError::Numeric(_) => ForgeStatus::Numeric,
            ForgeError::Image { .. } => ForgeStatus::Image,
            ForgeError::Provider { .. } => ForgeStatus::Provider,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(ForgeStatus::InvalidArgument, message.into())
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ForgeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ForgeStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {message}"));
            ForgeStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(ForgeStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    non_null(p, what)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ForgeStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    non_null(out, "output pointer")?;
    out.write(value);
    Ok(())
}

/// Box `value` into a new handle; checks `out` first so nothing leaks.
unsafe fn write_handle<T>(out: *mut *mut T, value: impl FnOnce() -> Result<T, Failure>) -> Result<(), Failure> {
    non_null(out, "output pointer")?;
    out.write(Box::into_raw(Box::new(value()?)));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn forge_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failed call on this thread; empty if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn forge_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn forge_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_scene_graphs_load(path: *const c_char, out: *mut *mut ForgeSceneGraphs) -> ForgeStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        write_handle(out, || {
            let (graphs, report) = parse_scene_graphs(path)?;
            Ok(ForgeSceneGraphs { graphs, report })
        })
    })
}

/// Number of graphs; 0 for a null handle.
///
/// # Safety
/// `graphs` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn forge_scene_graphs_len(graphs: *const ForgeSceneGraphs) -> usize {
    graphs.as_ref().map_or(0, |g| g.graphs.len())
}

/// Dropped objects plus dropped relations seen while parsing.
///
/// # Safety
/// `graphs` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn forge_scene_graphs_warning_count(graphs: *const ForgeSceneGraphs) -> usize {
    graphs.as_ref().map_or(0, |g| g.report.warning_count())
}

/// # Safety
/// `graphs` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_scene_graphs_object_count(
    graphs: *const ForgeSceneGraphs,
    index: usize,
    out: *mut usize,
) -> ForgeStatus {
    guard(|| {
        non_null(graphs, "graphs")?;
        let graphs = &*graphs;
        let g = graphs
            .graphs
            .get(index)
            .ok_or_else(|| invalid(format!("graph index {index} out of range")))?;
        write_out(out, g.objects.len())
    })
}

/// # Safety
/// `graphs` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn forge_scene_graphs_free(graphs: *mut ForgeSceneGraphs) {
    if !graphs.is_null() {
        drop(Box::from_raw(graphs));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_new(width: usize, height: usize, out: *mut *mut ForgeMask) -> ForgeStatus {
    guard(|| {
        if width == 0 || height == 0 {
            return Err(invalid("mask dimensions must be positive"));
        }
        write_handle(out, || Ok(ForgeMask(BinaryMask::new(width, height))))
    })
}

/// Mask with `bbox` (clipped to the mask) set.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_from_bbox(
    width: usize,
    height: usize,
    bbox: ForgeBBox,
    out: *mut *mut ForgeMask,
) -> ForgeStatus {
    guard(|| {
        if width == 0 || height == 0 {
            return Err(invalid("mask dimensions must be positive"));
        }
        write_handle(out, || {
            Ok(ForgeMask(BinaryMask::from_bbox(width, height, &bbox.into())))
        })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_load_png(path: *const c_char, out: *mut *mut ForgeMask) -> ForgeStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        write_handle(out, || Ok(ForgeMask(BinaryMask::load_png(path)?)))
    })
}

/// # Safety
/// `mask` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_save_png(mask: *const ForgeMask, path: *const c_char) -> ForgeStatus {
    guard(|| {
        non_null(mask, "mask")?;
        let path = path_arg(path, "path")?;
        (&*mask).0.save_png(path)?;
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_width(mask: *const ForgeMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.width())
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_height(mask: *const ForgeMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.height())
}

/// Number of set pixels.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_count(mask: *const ForgeMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.count())
}

fn check_bounds(mask: &BinaryMask, x: usize, y: usize) -> Result<(), Failure> {
    if x < mask.width() && y < mask.height() {
        Ok(())
    } else {
        Err(invalid(format!(
            "pixel ({x}, {y}) outside {}x{}",
            mask.width(),
            mask.height()
        )))
    }
}

/// # Safety
/// `mask` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_get(mask: *const ForgeMask, x: usize, y: usize, out: *mut bool) -> ForgeStatus {
    guard(|| {
        non_null(mask, "mask")?;
        let m = &(*mask).0;
        check_bounds(m, x, y)?;
        write_out(out, m.get(x, y))
    })
}

/// # Safety
/// `mask` must be a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_set(mask: *mut ForgeMask, x: usize, y: usize, value: bool) -> ForgeStatus {
    guard(|| {
        non_null(mask, "mask")?;
        let m = &mut (*mask).0;
        check_bounds(m, x, y)?;
        m.set(x, y, value);
        Ok(())
    })
}

/// Dilate with a `k`x`k` square (`k` odd); writes a new handle.
///
/// # Safety
/// `mask` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_dilate(mask: *const ForgeMask, k: usize, out: *mut *mut ForgeMask) -> ForgeStatus {
    guard(|| {
        non_null(mask, "mask")?;
        let mask = &*mask;
        write_handle(out, || Ok(ForgeMask(dilate(&mask.0, k)?)))
    })
}

/// # Safety
/// `mask` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn forge_mask_free(mask: *mut ForgeMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

#[no_mangle]
pub extern "C" fn forge_iou(a: ForgeBBox, b: ForgeBBox) -> f64 {
    iou(&a.into(), &b.into())
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_spatial_location(
    bbox: ForgeBBox,
    image_width: i64,
    out: *mut ForgeLocation,
) -> ForgeStatus {
    guard(|| {
        if image_width <= 0 {
            return Err(invalid("image width must be positive"));
        }
        let location = match spatial_location(&bbox.into(), image_width) {
            LocationThird::Left => ForgeLocation::Left,
            LocationThird::Center => ForgeLocation::Center,
            LocationThird::Right => ForgeLocation::Right,
        };
        write_out(out, location)
    })
}

unsafe fn feature_set(data: *const f32, rows: usize, dim: usize, what: &str) -> Result<FeatureSet, Failure> {
    non_null(data, what)?;
    let len = rows
        .checked_mul(dim)
        .ok_or_else(|| invalid(format!("{what}: {rows}x{dim} overflows")))?;
    let values = std::slice::from_raw_parts(data, len).to_vec();
    Ok(FeatureSet::new(rows, dim, values)?)
}

/// FID between two row-major feature matrices with `dim` columns.
///
/// # Safety
/// `a` must point to `a_rows * dim` floats, `b` to `b_rows * dim`;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_fid(
    a: *const f32,
    a_rows: usize,
    b: *const f32,
    b_rows: usize,
    dim: usize,
    out: *mut f64,
) -> ForgeStatus {
    guard(|| {
        let fa = feature_set(a, a_rows, dim, "a")?;
        let fb = feature_set(b, b_rows, dim, "b")?;
        write_out(out, metrics::fid(&fa, &fb)?)
    })
}

/// FID between two feature files.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_fid_files(a_path: *const c_char, b_path: *const c_char, out: *mut f64) -> ForgeStatus {
    guard(|| {
        let fa = FeatureSet::load(path_arg(a_path, "a_path")?)?;
        let fb = FeatureSet::load(path_arg(b_path, "b_path")?)?;
        write_out(out, metrics::fid(&fa, &fb)?)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_clip_distance_file(path: *const c_char, out: *mut f64) -> ForgeStatus {
    guard(|| {
        let pairs = metrics::load_similarity_pairs(path_arg(path, "path")?)?;
        write_out(out, metrics::clip_distance(&pairs)?)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_clip_accuracy_file(path: *const c_char, k: usize, out: *mut f64) -> ForgeStatus {
    guard(|| {
        let pairs = metrics::load_classification_pairs(path_arg(path, "path")?)?;
        write_out(out, metrics::clip_accuracy(&pairs, k)?)
    })
}

/// Mean recall over samples with non-empty ground truth. `excluded` may be
/// null.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn forge_relsim_file(path: *const c_char, out: *mut f64, excluded: *mut usize) -> ForgeStatus {
    guard(|| {
        let sets = metrics::load_relation_sets(path_arg(path, "path")?)?;
        let score = metrics::relsim(&sets)?;
        if !excluded.is_null() {
            excluded.write(score.excluded);
        }
        write_out(out, score.score)
    })
}

/// Run a build from a TOML config. On success `report_json`, if not null,
/// receives the build report; free it with `forge_string_free`.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `report_json` must be
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn forge_build(config_path: *const c_char, report_json: *mut *mut c_char) -> ForgeStatus {
    guard(|| {
        let config = BuildConfig::load(path_arg(config_path, "config_path")?)?;
        let report = build(&config)?;
        if !report_json.is_null() {
            let json = serde_json::to_string(&report).map_err(|e| Failure(ForgeStatus::Parse, e.to_string()))?;
            let c = CString::new(json).map_err(|e| Failure(ForgeStatus::Parse, e.to_string()))?;
            report_json.write(c.into_raw());
        }
        Ok(())
    })
}
