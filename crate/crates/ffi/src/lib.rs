//! C ABI over the capref metrics and agreement statistics.
//!
//! Every fallible function returns a [`CaprefStatus`] and writes its result
//! through an out-pointer. On failure [`capref_last_error`] describes the
//! most recent error on the calling thread. Strings returned by the library
//! must be released with [`capref_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use capref::analysis::{reformulation_stats, LengthUnit, ReformulationPair};
use capref::humaneval::{self, Judgment, Pooling};
use capref::metrics::{self, EvalItem, EvalSet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaprefStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ComputeError = 4,
    Panic = 5,
}

/// Opaque collection of (candidate, references) items.
pub struct CaprefEvalSet {
    items: Vec<EvalItem>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(message).expect("nul bytes removed"));
}

struct Failure(CaprefStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> CaprefStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CaprefStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CaprefStatus::Panic
        }
    }
}

fn invalid(message: impl ToString) -> Failure {
    Failure(CaprefStatus::InvalidArgument, message.to_string())
}

fn compute(message: impl ToString) -> Failure {
    Failure(CaprefStatus::ComputeError, message.to_string())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(CaprefStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CaprefStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(CaprefStatus::NullPointer, "output pointer is null".into()))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(CaprefStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn owned_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| compute("result contains a nul byte"))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn capref_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn capref_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn capref_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn capref_eval_set_new() -> *mut CaprefEvalSet {
    Box::into_raw(Box::new(CaprefEvalSet { items: Vec::new() }))
}

/// # Safety
/// `set` must come from [`capref_eval_set_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn capref_eval_set_free(set: *mut CaprefEvalSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Adds one item. Fails on a repeated `image_id` or when `n_refs` is 0.
///
/// # Safety
/// All strings must be nul-terminated; `refs` must point to `n_refs` of them.
#[no_mangle]
pub unsafe extern "C" fn capref_eval_set_add_item(
    set: *mut CaprefEvalSet,
    image_id: *const c_char,
    candidate: *const c_char,
    refs: *const *const c_char,
    n_refs: usize,
) -> CaprefStatus {
    guard(|| {
        let set = out(set)?;
        let image_id = text(image_id, "image_id")?;
        let candidate = text(candidate, "candidate")?;
        let refs = slice(refs, n_refs, "refs")?
            .iter()
            .map(|&r| text(r, "reference").map(metrics::tokenize))
            .collect::<FfiResult<Vec<_>>>()?;
        if refs.is_empty() {
            return Err(invalid(format!("item `{image_id}` has no references")));
        }
        if set.items.iter().any(|i| i.image_id == image_id) {
            return Err(invalid(format!("duplicate item `{image_id}`")));
        }
        set.items.push(EvalItem {
            image_id: image_id.to_owned(),
            candidate: metrics::tokenize(candidate),
            references: refs,
        });
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn capref_eval_set_len(set: *const CaprefEvalSet, len: *mut usize) -> CaprefStatus {
    guard(|| {
        let set = set
            .as_ref()
            .ok_or_else(|| Failure(CaprefStatus::NullPointer, "set is null".into()))?;
        *out(len)? = set.items.len();
        Ok(())
    })
}

unsafe fn score(set: *const CaprefEvalSet, result: *mut f64, f: fn(&EvalSet) -> metrics::Result<f64>) -> CaprefStatus {
    guard(|| {
        let set = set
            .as_ref()
            .ok_or_else(|| Failure(CaprefStatus::NullPointer, "set is null".into()))?;
        let result = out(result)?;
        let eval = EvalSet::new(set.items.clone()).map_err(invalid)?;
        *result = f(&eval).map_err(compute)?;
        Ok(())
    })
}

/// Corpus BLEU-4 on the 0 to 100 scale.
///
/// # Safety
/// `set` must be a live handle; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capref_bleu4(set: *const CaprefEvalSet, result: *mut f64) -> CaprefStatus {
    score(set, result, |s| metrics::bleu4(s).map(|r| r.score))
}

/// CIDEr-D on its raw 0 to 10 scale. Needs at least two items.
///
/// # Safety
/// `set` must be a live handle; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capref_cider_d(set: *const CaprefEvalSet, result: *mut f64) -> CaprefStatus {
    score(set, result, |s| metrics::cider_d(s).map(|r| r.score))
}

/// Word-level edit distance between two captions after tokenization.
///
/// # Safety
/// `a` and `b` must be nul-terminated; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capref_levenshtein_words(
    a: *const c_char,
    b: *const c_char,
    result: *mut usize,
) -> CaprefStatus {
    guard(|| {
        let a = metrics::tokenize(text(a, "a")?);
        let b = metrics::tokenize(text(b, "b")?);
        *out(result)? = metrics::levenshtein_words(&a, &b);
        Ok(())
    })
}

/// Two-sided exact sign test p-value.
///
/// # Safety
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capref_sign_test(wins_a: u64, wins_b: u64, result: *mut f64) -> CaprefStatus {
    guard(|| {
        *out(result)? = humaneval::sign_test(wins_a, wins_b);
        Ok(())
    })
}

/// Cohen's kappa between two raters' category codes.
///
/// # Safety
/// `a` and `b` must each point to `n` values; `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn capref_cohen_kappa(a: *const u32, b: *const u32, n: usize, result: *mut f64) -> CaprefStatus {
    guard(|| {
        let a = slice(a, n, "a")?;
        let b = slice(b, n, "b")?;
        *out(result)? = humaneval::cohen_kappa(a, b).map_err(invalid)?;
        Ok(())
    })
}

/// Fleiss' kappa over a row-major `items x categories` count table whose
/// rows each sum to `raters`.
///
/// # Safety
/// `table` must point to `items * categories` values; `result` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn capref_fleiss_kappa(
    table: *const usize,
    items: usize,
    categories: usize,
    raters: usize,
    result: *mut f64,
) -> CaprefStatus {
    guard(|| {
        let len = items
            .checked_mul(categories)
            .ok_or_else(|| invalid("table size overflows"))?;
        let flat = slice(table, len, "table")?;
        let rows: Vec<Vec<usize>> = if categories == 0 {
            Vec::new()
        } else {
            flat.chunks(categories).map(<[usize]>::to_vec).collect()
        };
        *out(result)? = humaneval::fleiss_kappa(&rows, raters).map_err(invalid)?;
        Ok(())
    })
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(input: &str) -> FfiResult<Vec<T>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| invalid(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Per-axis preference results for JSONL judgments, as a JSON array.
/// `pooling` is 0 for all judgments, 1 for per-item majority.
///
/// # Safety
/// `judgments_jsonl` must be nul-terminated; `result` must be writable. The
/// returned string must be released with [`capref_string_free`].
#[no_mangle]
pub unsafe extern "C" fn capref_humaneval_aggregate(
    judgments_jsonl: *const c_char,
    pooling: u32,
    result: *mut *mut c_char,
) -> CaprefStatus {
    guard(|| {
        let result = out(result)?;
        let judgments: Vec<Judgment> = parse_jsonl(text(judgments_jsonl, "judgments")?)?;
        let pooling = match pooling {
            0 => Pooling::AllJudgments,
            1 => Pooling::ItemMajority,
            p => return Err(invalid(format!("unknown pooling {p}"))),
        };
        let results = humaneval::aggregate(&judgments, pooling).map_err(invalid)?;
        *result = owned_string(serde_json::to_string(&results).expect("results serialize"))?;
        Ok(())
    })
}

/// Reformulation statistics for JSONL pairs, as a JSON object. `unit` is 0
/// for characters, 1 for words.
///
/// # Safety
/// `pairs_jsonl` must be nul-terminated; `result` must be writable. The
/// returned string must be released with [`capref_string_free`].
#[no_mangle]
pub unsafe extern "C" fn capref_reformulation_stats(
    pairs_jsonl: *const c_char,
    unit: u32,
    result: *mut *mut c_char,
) -> CaprefStatus {
    guard(|| {
        let result = out(result)?;
        let pairs: Vec<ReformulationPair> = parse_jsonl(text(pairs_jsonl, "pairs")?)?;
        let unit = match unit {
            0 => LengthUnit::Characters,
            1 => LengthUnit::Words,
            u => return Err(invalid(format!("unknown unit {u}"))),
        };
        let stats = reformulation_stats(&pairs, unit).map_err(invalid)?;
        *result = owned_string(serde_json::to_string(&stats).expect("stats serialize"))?;
        Ok(())
    })
}
