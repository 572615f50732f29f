//! C ABI for the reward engine.
//!
//! Every fallible function returns a [`ScgrpoStatus`]; on failure a
//! description is available from [`scgrpo_last_error_message`] on the same
//! thread until the next failing call. Engines are opaque handles created by
//! [`scgrpo_engine_new`] and released with [`scgrpo_engine_free`]. Ground truth
//! is passed as the same JSON object the HTTP service accepts, for example
//! `{"label":"anomalous","location":"top left","type":"scratch"}`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use scgrpo::grpo::compute_advantages;
use scgrpo::{matches_pattern, Gating, GridSpec, GroundTruthSpec, PatternKind, RewardEngine, RewardMode, TypeTaxonomy};

pub const SCGRPO_MODE_FULL: u32 = 0;
pub const SCGRPO_MODE_ACCURACY_ONLY: u32 = 1;
pub const SCGRPO_GATING_INDICATOR: u32 = 0;
pub const SCGRPO_GATING_INDICATOR_AND_CORRECT: u32 = 1;
pub const SCGRPO_PATTERN_NORMAL: u32 = 0;
pub const SCGRPO_PATTERN_ABNORMAL: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScgrpoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidGroundTruth = 4,
    InvalidArgument = 5,
    Internal = 6,
}

/// Opaque scoring engine.
pub struct ScgrpoEngine {
    inner: RewardEngine,
}

/// Reward components of one scored output. `parsed` is 1 when the output
/// follows one of the two tag patterns, else 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScgrpoBreakdown {
    pub r_con: f64,
    pub r_acc: f64,
    pub r_loc: f64,
    pub r_type: f64,
    pub total: f64,
    pub parsed: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type FfiResult<T> = Result<T, (ScgrpoStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> ScgrpoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScgrpoStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside scgrpo");
            ScgrpoStatus::Internal
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err((ScgrpoStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (ScgrpoStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn null(what: &str) -> (ScgrpoStatus, String) {
    (ScgrpoStatus::NullPointer, format!("{what} is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scgrpo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn scgrpo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates an engine. `taxonomy` is the taxonomy file text, or null for the
/// built-in taxonomy.
///
/// # Safety
/// `taxonomy` is null or a valid NUL-terminated string; `out` is a valid
/// pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn scgrpo_engine_new(
    grid: u32,
    mode: u32,
    gating: u32,
    taxonomy: *const c_char,
    out: *mut *mut ScgrpoEngine,
) -> ScgrpoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = |m: String| (ScgrpoStatus::InvalidConfig, m);
        let grid = GridSpec::new(grid).map_err(|e| cfg(e.to_string()))?;
        let mode = match mode {
            SCGRPO_MODE_FULL => RewardMode::Full,
            SCGRPO_MODE_ACCURACY_ONLY => RewardMode::AccuracyOnly,
            m => return Err(cfg(format!("unknown mode {m}"))),
        };
        let gating = match gating {
            SCGRPO_GATING_INDICATOR => Gating::Indicator,
            SCGRPO_GATING_INDICATOR_AND_CORRECT => Gating::IndicatorAndCorrect,
            g => return Err(cfg(format!("unknown gating {g}"))),
        };
        let taxonomy = if taxonomy.is_null() {
            TypeTaxonomy::default()
        } else {
            TypeTaxonomy::parse(text(taxonomy, "taxonomy")?).map_err(|e| cfg(e.to_string()))?
        };
        let engine = Box::new(ScgrpoEngine { inner: RewardEngine::new(grid, taxonomy, mode, gating) });
        *out = Box::into_raw(engine);
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` is null or a handle from [`scgrpo_engine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scgrpo_engine_free(engine: *mut ScgrpoEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Scores `raw_output` against a JSON ground-truth object.
///
/// # Safety
/// `engine` is a live handle; `raw_output` and `ground_truth_json` are valid
/// NUL-terminated strings; `out` points to writable storage.
#[no_mangle]
pub unsafe extern "C" fn scgrpo_engine_score(
    engine: *const ScgrpoEngine,
    raw_output: *const c_char,
    ground_truth_json: *const c_char,
    out: *mut ScgrpoBreakdown,
) -> ScgrpoStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let raw = text(raw_output, "raw_output")?;
        let gt_text = text(ground_truth_json, "ground_truth_json")?;
        let bad_gt = |m: String| (ScgrpoStatus::InvalidGroundTruth, m);
        let spec: GroundTruthSpec = serde_json::from_str(gt_text).map_err(|e| bad_gt(e.to_string()))?;
        let gt = engine.inner.resolve(&spec).map_err(|e| bad_gt(e.to_string()))?;
        let scored = engine
            .inner
            .score_detailed(raw, &gt)
            .map_err(|e| (ScgrpoStatus::Internal, e.to_string()))?;
        let b = scored.breakdown;
        *out = ScgrpoBreakdown {
            r_con: b.r_con,
            r_acc: b.r_acc,
            r_loc: b.r_loc,
            r_type: b.r_type,
            total: b.total,
            parsed: scored.parse.is_ok() as i32,
        };
        Ok(())
    })
}

/// Writes 1 to `out` if `raw_output` follows the given pattern, else 0.
///
/// # Safety
/// `raw_output` is a valid NUL-terminated string; `out` points to writable
/// storage.
#[no_mangle]
pub unsafe extern "C" fn scgrpo_matches_pattern(raw_output: *const c_char, pattern: u32, out: *mut i32) -> ScgrpoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = match pattern {
            SCGRPO_PATTERN_NORMAL => PatternKind::Normal,
            SCGRPO_PATTERN_ABNORMAL => PatternKind::Abnormal,
            p => return Err((ScgrpoStatus::InvalidArgument, format!("unknown pattern {p}"))),
        };
        *out = matches_pattern(text(raw_output, "raw_output")?, kind) as i32;
        Ok(())
    })
}

/// Group-normalized advantages of `len` rewards, written to `out` (which may
/// alias `rewards`). All advantages are 0 when the group's standard deviation
/// is below `std_floor`.
///
/// # Safety
/// `rewards` and `out` point to at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn scgrpo_compute_advantages(
    rewards: *const f64,
    len: usize,
    std_floor: f64,
    out: *mut f64,
) -> ScgrpoStatus {
    guard(|| {
        if rewards.is_null() {
            return Err(null("rewards"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let input = std::slice::from_raw_parts(rewards, len).to_vec();
        let adv = compute_advantages(&input, std_floor).map_err(|e| (ScgrpoStatus::InvalidArgument, e.to_string()))?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&adv);
        Ok(())
    })
}
