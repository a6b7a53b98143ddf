//! C ABI over the veilgate store, sanitizer, restorer and metrics.
//!
//! Strings cross the boundary as NUL-terminated UTF-8. Strings returned through
//! `out` parameters are owned by the caller and must be released with
//! [`vg_string_free`]. On any status other than `VG_STATUS_OK` the message from
//! [`vg_last_error`] describes the failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use veilgate::corpus::PrivacyItem;
use veilgate::extraction::{Extractor, RuleExtractor};
use veilgate::gateway::check_input;
use veilgate::metrics::{
    bleu_n, group_normalize_rewards, meteor, rouge_l, score_extraction, tokenize, TrigramEmbedder,
};
use veilgate::restorer::restore;
use veilgate::sanitizer::sanitize;
use veilgate::store::{MappingStore, StoreError};
use veilgate::{PrivacyLevel, Taxonomy};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Io = 5,
    Corrupt = 6,
    PlaceholderInInput = 7,
    Store = 8,
    Panic = 9,
}

/// Opaque handle to a mapping store.
pub struct VgStore {
    inner: MappingStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

struct Failure(VgStatus, String);

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::Io(_) => VgStatus::Io,
            StoreError::Corrupt { .. } => VgStatus::Corrupt,
            StoreError::EmptyUser | StoreError::EmptyValue | StoreError::Grammar(_) => VgStatus::InvalidArgument,
            _ => VgStatus::Store,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(VgStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VgStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(VgStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(VgStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        arg(p, name).map(Some)
    }
}

unsafe fn store<'a>(p: *const VgStore) -> Result<&'a MappingStore, Failure> {
    p.as_ref()
        .map(|s| &s.inner)
        .ok_or_else(|| Failure(VgStatus::NullArgument, "store is null".into()))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(VgStatus::NullArgument, "output pointer is null".into()));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| invalid("result contains a NUL byte"))?;
    put(out, c.into_raw())
}

fn parse_items(json: &str) -> Result<Vec<PrivacyItem>, Failure> {
    serde_json::from_str(json).map_err(|e| invalid(format!("items: {e}")))
}

fn level(n: u32) -> Result<PrivacyLevel, Failure> {
    match n {
        2 => Ok(PrivacyLevel::PL2),
        3 => Ok(PrivacyLevel::PL3),
        4 => Ok(PrivacyLevel::PL4),
        _ => Err(invalid(format!("mask level must be 2, 3 or 4, got {n}"))),
    }
}

/// Message for the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn vg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn vg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens (or creates) a persistent store in `dir`; a null `dir` gives an in-memory store.
///
/// # Safety
/// `dir` must be null or a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vg_store_open(dir: *const c_char, out: *mut *mut VgStore) -> VgStatus {
    guard(|| {
        let inner = match opt_arg(dir, "dir")? {
            Some(d) => MappingStore::open(d)?,
            None => MappingStore::in_memory(),
        };
        put(out, Box::into_raw(Box::new(VgStore { inner })))
    })
}

/// # Safety
/// `store` must be null or a handle from [`vg_store_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vg_store_free(store: *mut VgStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Masks `text` for `user_id` with typed placeholders.
///
/// `items_json` is a JSON array of `{original_text, privacy_type, privacy_level}`;
/// when null the built-in pattern extractor runs (using `real_name` if given).
/// `mask_level` is 2, 3 or 4. The result is the sanitized record as JSON.
///
/// # Safety
/// Pointer arguments must be valid strings (nullable ones may be null); `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vg_sanitize(
    store: *const VgStore,
    user_id: *const c_char,
    text: *const c_char,
    items_json: *const c_char,
    real_name: *const c_char,
    mask_level: u32,
    out_json: *mut *mut c_char,
) -> VgStatus {
    guard(|| {
        let store = self::store(store)?;
        let (user, text) = (arg(user_id, "user_id")?, arg(text, "text")?);
        let threshold = level(mask_level)?;
        check_input(text).map_err(|e| Failure(VgStatus::PlaceholderInInput, e.to_string()))?;
        let items = match opt_arg(items_json, "items_json")? {
            Some(j) => parse_items(j)?,
            None => RuleExtractor
                .extract(text, opt_arg(real_name, "real_name")?)
                .map_err(|e| Failure(VgStatus::Store, e.to_string()))?,
        };
        let masked = sanitize(user, text, &items, threshold, store)?;
        put_string(out_json, serde_json::to_string(&masked).expect("record serializes"))
    })
}

/// Replaces `user_id`'s placeholders in `text`. The result is the restored
/// text; `out_unresolved` (nullable) receives the count of placeholders left as-is.
///
/// # Safety
/// Pointer arguments must be valid; `out_text` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vg_restore(
    store: *const VgStore,
    user_id: *const c_char,
    text: *const c_char,
    out_text: *mut *mut c_char,
    out_unresolved: *mut usize,
) -> VgStatus {
    guard(|| {
        let store = self::store(store)?;
        let restored = restore(arg(user_id, "user_id")?, arg(text, "text")?, store);
        if !out_unresolved.is_null() {
            out_unresolved.write(restored.unresolved.len());
        }
        put_string(out_text, restored.text)
    })
}

/// Original value of one placeholder; `VG_STATUS_NOT_FOUND` when unknown.
///
/// # Safety
/// Pointer arguments must be valid; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vg_lookup(
    store: *const VgStore,
    user_id: *const c_char,
    placeholder: *const c_char,
    out_value: *mut *mut c_char,
) -> VgStatus {
    guard(|| {
        let store = self::store(store)?;
        let (user, ph) = (arg(user_id, "user_id")?, arg(placeholder, "placeholder")?);
        match store.lookup_by_placeholder(user, ph)? {
            Some(v) => put_string(out_value, v),
            None => Err(Failure(VgStatus::NotFound, format!("no mapping for {ph}"))),
        }
    })
}

/// Number of mappings held for `user_id`.
///
/// # Safety
/// Pointer arguments must be valid.
#[no_mangle]
pub unsafe extern "C" fn vg_mapping_count(
    store: *const VgStore,
    user_id: *const c_char,
    out_count: *mut usize,
) -> VgStatus {
    guard(|| {
        let n = self::store(store)?.mapping_count(arg(user_id, "user_id")?);
        put(out_count, n)
    })
}

/// Deletes every mapping of `user_id`; `out_deleted` (nullable) receives how many.
///
/// # Safety
/// Pointer arguments must be valid.
#[no_mangle]
pub unsafe extern "C" fn vg_delete_user(
    store: *const VgStore,
    user_id: *const c_char,
    out_deleted: *mut usize,
) -> VgStatus {
    guard(|| {
        let n = self::store(store)?.delete_user(arg(user_id, "user_id")?)?;
        if !out_deleted.is_null() {
            out_deleted.write(n);
        }
        Ok(())
    })
}

/// Compacts the store's log.
///
/// # Safety
/// `store` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn vg_compact(store: *const VgStore) -> VgStatus {
    guard(|| Ok(self::store(store)?.compact()?))
}

/// Scores predicted items against gold items (both JSON arrays) and returns
/// `{precision, recall, f1, ...}` as JSON.
///
/// # Safety
/// Pointer arguments must be valid; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vg_score_extraction(
    pred_json: *const c_char,
    gold_json: *const c_char,
    out_json: *mut *mut c_char,
) -> VgStatus {
    guard(|| {
        let preds = parse_items(arg(pred_json, "pred_json")?)?;
        let golds = parse_items(arg(gold_json, "gold_json")?)?;
        let score = score_extraction(&preds, &golds, &TrigramEmbedder::default(), Taxonomy::canonical());
        put_string(out_json, serde_json::to_string(&score).expect("score serializes"))
    })
}

/// Which text-overlap metric [`vg_text_metric`] computes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VgTextMetric {
    Bleu1 = 1,
    Bleu2 = 2,
    Meteor = 3,
    RougeL = 4,
}

/// Scores `candidate` against `reference` after the library's tokenization.
///
/// # Safety
/// Pointer arguments must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vg_text_metric(
    metric: VgTextMetric,
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> VgStatus {
    guard(|| {
        let c = tokenize(arg(candidate, "candidate")?);
        let r = tokenize(arg(reference, "reference")?);
        let v = match metric {
            VgTextMetric::Bleu1 => bleu_n(&c, &r, 1),
            VgTextMetric::Bleu2 => bleu_n(&c, &r, 2),
            VgTextMetric::Meteor => meteor(&c, &r),
            VgTextMetric::RougeL => rouge_l(&c, &r),
        };
        put(out, v)
    })
}

/// Writes the group-normalized `rewards[0..len]` into `out[0..len]`.
///
/// # Safety
/// `rewards` and `out` must point to `len` doubles each.
#[no_mangle]
pub unsafe extern "C" fn vg_group_normalize(rewards: *const f64, len: usize, out: *mut f64) -> VgStatus {
    guard(|| {
        if rewards.is_null() || out.is_null() {
            return Err(Failure(VgStatus::NullArgument, "rewards or out is null".into()));
        }
        let input = std::slice::from_raw_parts(rewards, len);
        let normalized = group_normalize_rewards(input).map_err(|e| invalid(e.to_string()))?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&normalized);
        Ok(())
    })
}
