//! C ABI over the benchmark core.
//!
//! Conventions: every fallible call returns [`LbStatus`] and writes its
//! result through out-pointers; `lb_last_error` returns a thread-local
//! message for the most recent failure. Handles (`LbModel`,
//! `LbPatterns`) are opaque and freed with their `_free` functions.
//! Buffers are caller-allocated, row-major, length = height * width.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};

use lesionbench::error::Error;
use lesionbench::harness::{resolve_config, run_experiment, Overrides, Scale};
use lesionbench::netcore::NetworkModel;
use lesionbench::saliency::{explain, MethodKind, MethodSpec, PatternSet};
use lesionbench::synthgen::perlin_field;
use lesionbench::tensor::Tensor;
use lesionbench::xmetrics::{
    average_precision, precision_at_specificity, roc_auc, ScoredPixels,
};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Generation = 6,
    Protocol = 7,
    Unsupported = 8,
    Internal = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &Error) -> LbStatus {
    match err {
        Error::Config(_) | Error::Shape(_) => LbStatus::InvalidArgument,
        Error::Io(_) => LbStatus::Io,
        Error::Format(_) | Error::Json(_) | Error::Image(_) => LbStatus::Format,
        Error::Numeric(_) | Error::Training { .. } => LbStatus::Numeric,
        Error::Generation { .. } => LbStatus::Generation,
        Error::Protocol(_) => LbStatus::Protocol,
        Error::Unsupported(_) => LbStatus::Unsupported,
        Error::Stage { .. } => LbStatus::Internal,
    }
}

fn fail(err: Error) -> LbStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn null_fail(what: &str) -> LbStatus {
    set_error(&format!("{what} is null"));
    LbStatus::NullPointer
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string.
unsafe fn cstr_arg(ptr: *const c_char, what: &str) -> Result<String, LbStatus> {
    if ptr.is_null() {
        return Err(null_fail(what));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s.to_string()),
        Err(_) => {
            set_error(&format!("{what} is not valid UTF-8"));
            Err(LbStatus::InvalidArgument)
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Deterministic Perlin background, min-max normalized to [0, 1].
/// `out` must hold `height * width` floats.
///
/// # Safety
/// `out` must point to at least `height * width` writable floats.
#[no_mangle]
pub unsafe extern "C" fn lb_perlin_field(
    seed: u64,
    grid_rows: u32,
    grid_cols: u32,
    height: u32,
    width: u32,
    out: *mut f32,
) -> LbStatus {
    if out.is_null() {
        return null_fail("out");
    }
    match perlin_field(seed, (grid_rows as usize, grid_cols as usize), (height as usize, width as usize)) {
        Ok(img) => {
            std::ptr::copy_nonoverlapping(img.pixels().as_ptr(), out, img.pixels().len());
            LbStatus::Ok
        }
        Err(e) => fail(e),
    }
}

unsafe fn scored(
    scores: *const f32,
    labels: *const u8,
    len: usize,
) -> Result<ScoredPixels, LbStatus> {
    if scores.is_null() {
        return Err(null_fail("scores"));
    }
    if labels.is_null() {
        return Err(null_fail("labels"));
    }
    let s = std::slice::from_raw_parts(scores, len);
    let l = std::slice::from_raw_parts(labels, len);
    ScoredPixels::new(s.iter().map(|&v| v as f64).collect(), l.to_vec()).map_err(fail)
}

/// ROC-AUC with midrank tie handling.
///
/// # Safety
/// `scores` and `labels` must point to `len` readable elements.
#[no_mangle]
pub unsafe extern "C" fn lb_roc_auc(
    scores: *const f32,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> LbStatus {
    if out.is_null() {
        return null_fail("out");
    }
    match scored(scores, labels, len) {
        Ok(sp) => {
            *out = roc_auc(&sp);
            LbStatus::Ok
        }
        Err(status) => status,
    }
}

/// Average precision (score-descending, index-ascending tie order).
///
/// # Safety
/// `scores` and `labels` must point to `len` readable elements.
#[no_mangle]
pub unsafe extern "C" fn lb_average_precision(
    scores: *const f32,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> LbStatus {
    if out.is_null() {
        return null_fail("out");
    }
    match scored(scores, labels, len) {
        Ok(sp) => {
            *out = average_precision(&sp);
            LbStatus::Ok
        }
        Err(status) => status,
    }
}

/// Precision at the given specificity (e.g. 0.99). `degenerate` is set
/// when no threshold satisfies the false-positive budget.
///
/// # Safety
/// Pointer arguments as in `lb_roc_auc`; `degenerate` may be null.
#[no_mangle]
pub unsafe extern "C" fn lb_precision_at_specificity(
    scores: *const f32,
    labels: *const u8,
    len: usize,
    specificity: f64,
    out: *mut f64,
    degenerate: *mut bool,
) -> LbStatus {
    if out.is_null() {
        return null_fail("out");
    }
    match scored(scores, labels, len) {
        Ok(sp) => {
            let (p, d) = precision_at_specificity(&sp, specificity);
            *out = p;
            if !degenerate.is_null() {
                *degenerate = d;
            }
            LbStatus::Ok
        }
        Err(status) => status,
    }
}

/// Opaque trained-model handle.
pub struct LbModel {
    model: NetworkModel,
}

/// Opaque pattern-set handle for PatternNet / PatternAttribution.
pub struct LbPatterns {
    patterns: PatternSet,
}

/// Load a checkpoint written by the pipeline (`runs/<cond>/<k>/checkpoint`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn lb_model_load(path: *const c_char, out: *mut *mut LbModel) -> LbStatus {
    if out.is_null() {
        return null_fail("out");
    }
    let path = match cstr_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match lesionbench::netcore::load_model(Path::new(&path)) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(LbModel { model }));
            LbStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `model` must come from `lb_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lb_model_free(model: *mut LbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Raster shape the model expects.
///
/// # Safety
/// Pointers must be valid; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lb_model_input_shape(
    model: *const LbModel,
    height: *mut u32,
    width: *mut u32,
) -> LbStatus {
    if model.is_null() {
        return null_fail("model");
    }
    if height.is_null() || width.is_null() {
        return null_fail("shape out");
    }
    match (*model).model.input_shape {
        lesionbench::netcore::InputShape::Chw { height: h, width: w, .. } => {
            *height = h as u32;
            *width = w as u32;
            LbStatus::Ok
        }
        lesionbench::netcore::InputShape::Flat { .. } => {
            set_error("model takes flat features, not rasters");
            LbStatus::Unsupported
        }
    }
}

unsafe fn pixels_tensor(
    model: &NetworkModel,
    pixels: *const f32,
    height: u32,
    width: u32,
) -> Result<Tensor, LbStatus> {
    if pixels.is_null() {
        return Err(null_fail("pixels"));
    }
    let n = height as usize * width as usize;
    let data = std::slice::from_raw_parts(pixels, n).to_vec();
    let t = Tensor::from_vec(&[1, 1, height as usize, width as usize], data).map_err(fail)?;
    match model.input_shape {
        lesionbench::netcore::InputShape::Chw { height: mh, width: mw, .. }
            if (mh, mw) == (height as usize, width as usize) =>
        {
            Ok(t)
        }
        _ => {
            set_error(&format!("model does not accept {height}x{width} rasters"));
            Err(LbStatus::InvalidArgument)
        }
    }
}

/// Predicted class (1 or 2) for one grayscale raster in [0, 1].
///
/// # Safety
/// `pixels` must hold `height * width` floats; `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn lb_model_predict(
    model: *const LbModel,
    pixels: *const f32,
    height: u32,
    width: u32,
    out_class: *mut u32,
) -> LbStatus {
    if model.is_null() {
        return null_fail("model");
    }
    if out_class.is_null() {
        return null_fail("out_class");
    }
    let t = match pixels_tensor(&(*model).model, pixels, height, width) {
        Ok(t) => t,
        Err(s) => return s,
    };
    match (*model).model.predict(&t) {
        Ok(labels) => {
            *out_class = labels[0] as u32;
            LbStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Load a pattern set written by the explain stage (`patterns/<cond>.pat`).
///
/// # Safety
/// `path` must be valid; `model` must be the matching live handle.
#[no_mangle]
pub unsafe extern "C" fn lb_patterns_load(
    path: *const c_char,
    model: *const LbModel,
    out: *mut *mut LbPatterns,
) -> LbStatus {
    if model.is_null() {
        return null_fail("model");
    }
    if out.is_null() {
        return null_fail("out");
    }
    let path = match cstr_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match lesionbench::saliency::load_patterns(Path::new(&path), (*model).model.layers.len()) {
        Ok(patterns) => {
            *out = Box::into_raw(Box::new(LbPatterns { patterns }));
            LbStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `patterns` must come from `lb_patterns_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lb_patterns_free(patterns: *mut LbPatterns) {
    if !patterns.is_null() {
        drop(Box::from_raw(patterns));
    }
}

/// Heatmap for one raster: `method` is the snake_case method name,
/// `target_class` is 1 or 2, `out` receives `height * width` relevances.
/// `patterns` may be null for methods that do not need it.
///
/// # Safety
/// Buffers as documented; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn lb_explain(
    model: *const LbModel,
    patterns: *const LbPatterns,
    pixels: *const f32,
    height: u32,
    width: u32,
    method: *const c_char,
    target_class: u32,
    out: *mut f32,
) -> LbStatus {
    if model.is_null() {
        return null_fail("model");
    }
    if out.is_null() {
        return null_fail("out");
    }
    let method = match cstr_arg(method, "method") {
        Ok(m) => m,
        Err(s) => return s,
    };
    let kind = match MethodKind::parse(&method) {
        Ok(k) => k,
        Err(e) => return fail(e),
    };
    let t = match pixels_tensor(&(*model).model, pixels, height, width) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let record = match (*model).model.forward(&t) {
        Ok((_, r)) => r,
        Err(e) => return fail(e),
    };
    let pattern_ref = patterns.as_ref().map(|p| &p.patterns);
    match explain(
        &(*model).model,
        &record,
        &MethodSpec::new(kind),
        target_class as u8,
        pattern_ref,
        "ffi",
    ) {
        Ok(map) => {
            std::ptr::copy_nonoverlapping(map.relevance.as_ptr(), out, map.relevance.len());
            LbStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Run the full pipeline. `config_path` and `scale` may be null; `seed`
/// and `out_dir` are required. Equivalent to `lesionbench run-all`.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings or null where
/// documented.
#[no_mangle]
pub unsafe extern "C" fn lb_run_experiment(
    config_path: *const c_char,
    scale: *const c_char,
    seed: u64,
    out_dir: *const c_char,
) -> LbStatus {
    let out_dir = match cstr_arg(out_dir, "out_dir") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let mut overrides = Overrides::default();
    if !config_path.is_null() {
        let path = match cstr_arg(config_path, "config_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        overrides = match Overrides::from_config_file(Path::new(&path)) {
            Ok(o) => o,
            Err(e) => return fail(e),
        };
    }
    if !scale.is_null() {
        let s = match cstr_arg(scale, "scale") {
            Ok(s) => s,
            Err(st) => return st,
        };
        overrides.scale = match Scale::parse(&s) {
            Ok(sc) => Some(sc),
            Err(e) => return fail(e),
        };
    }
    overrides.seed = Some(seed);
    overrides.out = Some(PathBuf::from(out_dir));
    let cfg = match resolve_config(&overrides) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match run_experiment(&cfg) {
        Ok(_) => LbStatus::Ok,
        Err(e) => fail(e),
    }
}
