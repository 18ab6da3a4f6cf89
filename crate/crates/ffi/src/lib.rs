//! C ABI for the corrmark pipeline.
//!
//! Every fallible function returns a [`CmStatus`]; on failure the message is
//! available from [`cm_last_error`] on the same thread. Sequences and plans
//! are opaque handles released with their `_free` function. Strings returned
//! through `out` parameters are owned by the caller and released with
//! [`cm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use corrmark::correspondence::{build_prompt_plan, sparsify_indices, PromptPlan};
use corrmark::error::PlanError;
use corrmark::eval::{harmonic_mean, MetricReport};
use corrmark::mask_store::{load_frames, load_masks, FrameSequence, MaskFormat, MaskSequence};
use corrmark::render::{render_sequence_with_threads, write_outputs, MarkStyle, MarkTier};
use corrmark::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad argument or configuration.
    InvalidArgument = 3,
    /// Unreadable or inconsistent input data.
    Data = 4,
    Backend = 5,
    Budget = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmMaskFormat {
    /// Directory of indexed PNG masks.
    IndexedPng = 0,
    /// Single RLE JSON file.
    RleJson = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmTier {
    MarkersOnly = 0,
    MarkersPlusOutline = 1,
    MarkersPlusMask = 2,
}

/// Frames and aligned instance masks.
pub struct CmSequence {
    frames: FrameSequence,
    masks: MaskSequence,
}

/// A selection and placement plan for one sequence.
pub struct CmPlan {
    plan: PromptPlan,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> CmStatus {
    if matches!(e, Error::Plan(PlanError::InvalidCount { .. } | PlanError::InvalidK)) {
        return CmStatus::InvalidArgument;
    }
    match e.exit_code() {
        2 => CmStatus::InvalidArgument,
        4 => CmStatus::Backend,
        5 => CmStatus::Budget,
        _ => CmStatus::Data,
    }
}

struct Fail(CmStatus, String);

impl<E: Into<Error>> From<E> for Fail {
    fn from(e: E) -> Self {
        let e = e.into();
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CmStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(CmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = CString::new(s)
        .map_err(|_| Fail(CmStatus::Data, "string contains a nul byte".into()))?
        .into_raw();
    Ok(())
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn cm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes the `m` retained frame indices of an `n`-frame sequence into `out`,
/// which must hold at least `capacity` entries; `*out_len` receives the count.
///
/// # Safety
/// `out` must point to `capacity` writable `size_t` values.
#[no_mangle]
pub unsafe extern "C" fn cm_sparsify(
    n: usize,
    m: usize,
    out: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> CmStatus {
    guard(|| {
        if out.is_null() || out_len.is_null() {
            return Err(null("out"));
        }
        let plan = sparsify_indices(n, m)?;
        *out_len = plan.indices.len();
        if plan.indices.len() > capacity {
            return Err(Fail(
                CmStatus::BufferTooSmall,
                format!("need {} entries, buffer holds {capacity}", plan.indices.len()),
            ));
        }
        ptr::copy_nonoverlapping(plan.indices.as_ptr(), out, plan.indices.len());
        Ok(())
    })
}

/// Loads a frame directory and its masks.
///
/// # Safety
/// Paths must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_sequence_load(
    frames_dir: *const c_char,
    masks_path: *const c_char,
    format: CmMaskFormat,
    out: *mut *mut CmSequence,
) -> CmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let frames = load_frames(&path_arg(frames_dir, "frames_dir")?)?;
        let format = match format {
            CmMaskFormat::IndexedPng => MaskFormat::IndexedPng,
            CmMaskFormat::RleJson => MaskFormat::RleJson,
        };
        let masks = load_masks(&path_arg(masks_path, "masks_path")?, format, Some(&frames))?;
        *out = Box::into_raw(Box::new(CmSequence { frames, masks }));
        Ok(())
    })
}

/// Number of frames, or 0 for null.
///
/// # Safety
/// `seq` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cm_sequence_len(seq: *const CmSequence) -> usize {
    seq.as_ref().map_or(0, |s| s.frames.len())
}

/// # Safety
/// `seq` must be null or a handle from [`cm_sequence_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn cm_sequence_free(seq: *mut CmSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Builds a plan retaining `m` frames and marking up to `k` tracklets.
///
/// # Safety
/// `seq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_plan_build(
    seq: *const CmSequence,
    m: usize,
    k: usize,
    diameter_px: u32,
    tier: CmTier,
    out: *mut *mut CmPlan,
) -> CmStatus {
    guard(|| {
        let seq = seq.as_ref().ok_or_else(|| null("seq"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let tier = match tier {
            CmTier::MarkersOnly => MarkTier::MarkersOnly,
            CmTier::MarkersPlusOutline => MarkTier::MarkersPlusOutline,
            CmTier::MarkersPlusMask => MarkTier::MarkersPlusMask,
        };
        let style = MarkStyle::default().with_diameter(diameter_px).with_tier(tier);
        style
            .validate()
            .map_err(|e| Fail(CmStatus::InvalidArgument, e.to_string()))?;
        if k == 0 {
            return Err(Fail(CmStatus::InvalidArgument, "k must be at least 1".into()));
        }
        let plan = build_prompt_plan(&seq.frames, &seq.masks, m, k, &style, None)?;
        *out = Box::into_raw(Box::new(CmPlan { plan }));
        Ok(())
    })
}

/// Number of tracklets the plan marks, or 0 for null.
///
/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cm_plan_k_effective(plan: *const CmPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.plan.tracklets.k_effective)
}

/// Serializes the plan as JSON into a new string.
///
/// # Safety
/// `plan` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_plan_to_json(plan: *const CmPlan, out: *mut *mut c_char) -> CmStatus {
    guard(|| {
        let plan = plan.as_ref().ok_or_else(|| null("plan"))?;
        let json = serde_json::to_string(&plan.plan).expect("plan serializes");
        write_string(out, json)
    })
}

/// # Safety
/// `plan` must be null or a handle from [`cm_plan_build`], freed once.
#[no_mangle]
pub unsafe extern "C" fn cm_plan_free(plan: *mut CmPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Renders the plan's retained frames and writes marked PNGs plus
/// `manifest.json` into `out_dir`. `threads` of 0 uses one worker.
///
/// # Safety
/// Handles must be live and belong together; `out_dir` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn cm_render_to_dir(
    seq: *const CmSequence,
    plan: *const CmPlan,
    out_dir: *const c_char,
    threads: usize,
) -> CmStatus {
    guard(|| {
        let seq = seq.as_ref().ok_or_else(|| null("seq"))?;
        let plan = &plan.as_ref().ok_or_else(|| null("plan"))?.plan;
        let dir = path_arg(out_dir, "out_dir")?;
        let annotated = render_sequence_with_threads(&seq.frames, &seq.masks, plan, threads.max(1))?;
        let hash = corrmark::cli::config_hash(&serde_json::json!({
            "command": "ffi-render",
            "m": plan.sparsify.indices.len(),
            "k": plan.tracklets.k_requested,
            "style": plan.style,
        }));
        write_outputs(&dir, &annotated, plan, &hash)?;
        Ok(())
    })
}

/// Scores candidates against references. Inputs are JSON: a list of strings
/// and a list of reference lists. The report is written as JSON into `out`.
///
/// # Safety
/// Inputs must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_metrics_json(
    candidates_json: *const c_char,
    references_json: *const c_char,
    out: *mut *mut c_char,
) -> CmStatus {
    guard(|| {
        let bad_json = |e: serde_json::Error| Fail(CmStatus::InvalidArgument, e.to_string());
        let cands: Vec<String> =
            serde_json::from_str(str_arg(candidates_json, "candidates_json")?).map_err(bad_json)?;
        let refs: Vec<Vec<String>> =
            serde_json::from_str(str_arg(references_json, "references_json")?).map_err(bad_json)?;
        let report = MetricReport::compute(&cands, &refs)?;
        write_string(out, serde_json::to_string(&report).expect("report serializes"))
    })
}

/// Harmonic mean of two non-negative scores; 0 when both are 0.
#[no_mangle]
pub extern "C" fn cm_harmonic_mean(a: f64, b: f64) -> f64 {
    harmonic_mean(a, b)
}
