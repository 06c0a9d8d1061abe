//! C ABI over `stw-core`.
//!
//! Every function returns a [`StwStatus`]. On failure a message is kept per
//! thread and can be fetched with [`stw_last_error`]. Strings handed out by
//! this library are NUL-terminated, owned by the caller and released with
//! [`stw_string_free`]. Handles are opaque and released with their `_free`
//! function; passing NULL to any `_free` is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chrono::DateTime;
use stw_core::anchor::{build_merkle, prove_inclusion, to_base58_address, verify_inclusion, InclusionProof};
use stw_core::diff::compute_diff;
use stw_core::ingest::{extract_article, CanonicalDocument};
use stw_core::receipt::Receipt;
use stw_core::stampcore::{derive_stamp_hash, extend_chain, hash_content, hash_text};
use stw_core::Hash256;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StwStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    /// The input parsed but a check on it failed.
    VerificationFailed = 4,
    Panic = 5,
}

/// Extracted page: canonical text, title and content hash.
pub struct StwDocument {
    doc: CanonicalDocument,
    content_hash: Hash256,
}

/// Ordered leaves of a Merkle batch under construction.
pub struct StwBatch {
    leaves: Vec<Hash256>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(StwStatus, String);

type Outcome<T> = Result<T, Failure>;

fn fail<T>(status: StwStatus, msg: impl Into<String>) -> Outcome<T> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Outcome<()>) -> StwStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => StwStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            StwStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return fail(StwStatus::NullArgument, format!("{name} is NULL"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(StwStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn hash_arg(p: *const c_char, name: &str) -> Outcome<Hash256> {
    let s = str_arg(p, name)?;
    s.parse()
        .or_else(|e| fail(StwStatus::InvalidInput, format!("{name}: {e}")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Outcome<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(StwStatus::NullArgument, format!("{name} is NULL")))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("NUL bytes replaced").into_raw()
}

unsafe fn write_str(out: *mut *mut c_char, s: String) -> Outcome<()> {
    *out_arg(out, "out")? = to_c(s);
    Ok(())
}

/// Library version, a static string. Do not free.
#[no_mangle]
pub extern "C" fn stw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The caller frees it.
#[no_mangle]
pub extern "C" fn stw_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn stw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// SHA-256 of UTF-8 `text` as 64 hex characters.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stw_hash_text(text: *const c_char, out: *mut *mut c_char) -> StwStatus {
    guard(|| write_str(out, hash_text(str_arg(text, "text")?).to_hex()))
}

/// Stamp hash from a hex content hash and a Unix time in seconds.
///
/// # Safety
/// Pointer arguments as for [`stw_hash_text`].
#[no_mangle]
pub unsafe extern "C" fn stw_stamp_hash(
    content_hash: *const c_char,
    unix_secs: i64,
    out: *mut *mut c_char,
) -> StwStatus {
    guard(|| {
        let h1 = hash_arg(content_hash, "content_hash")?;
        let at = DateTime::from_timestamp(unix_secs, 0)
            .ok_or_else(|| Failure(StwStatus::InvalidInput, format!("time {unix_secs} out of range")))?;
        write_str(out, derive_stamp_hash(&h1, at).to_hex())
    })
}

/// Next chain value from the previous one and a stamp hash.
///
/// # Safety
/// Pointer arguments as for [`stw_hash_text`].
#[no_mangle]
pub unsafe extern "C" fn stw_chain_extend(
    prev: *const c_char,
    stamp_hash: *const c_char,
    out: *mut *mut c_char,
) -> StwStatus {
    guard(|| {
        let prev = hash_arg(prev, "prev")?;
        let h2 = hash_arg(stamp_hash, "stamp_hash")?;
        write_str(out, extend_chain(&prev, &h2).to_hex())
    })
}

/// Base58Check anchor address of a hex Merkle root.
///
/// # Safety
/// Pointer arguments as for [`stw_hash_text`].
#[no_mangle]
pub unsafe extern "C" fn stw_anchor_address(root: *const c_char, out: *mut *mut c_char) -> StwStatus {
    guard(|| write_str(out, to_base58_address(&hash_arg(root, "root")?)))
}

/// Checks a receipt JSON document offline. `text` may be NULL to use the
/// receipt's embedded text. Writes the report JSON to `report_out` when it
/// is not NULL. Returns `VERIFICATION_FAILED` for a well-formed receipt that
/// does not verify.
///
/// # Safety
/// `receipt_json` and a non-NULL `text` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn stw_verify_receipt(
    receipt_json: *const c_char,
    text: *const c_char,
    report_out: *mut *mut c_char,
) -> StwStatus {
    guard(|| {
        let raw = str_arg(receipt_json, "receipt_json")?;
        let receipt: Receipt =
            serde_json::from_str(raw).or_else(|e| fail(StwStatus::InvalidInput, format!("receipt: {e}")))?;
        let text = if text.is_null() { None } else { Some(str_arg(text, "text")?) };
        let report = receipt.verify(text);
        if !report_out.is_null() {
            *report_out = to_c(serde_json::to_string(&report).expect("report serializes"));
        }
        if report.overall_valid {
            Ok(())
        } else {
            fail(StwStatus::VerificationFailed, format!("failed: {}", report.failed_checks().join(", ")))
        }
    })
}

/// Word-level diff script between two texts, as JSON.
///
/// # Safety
/// Pointer arguments as for [`stw_hash_text`].
#[no_mangle]
pub unsafe extern "C" fn stw_diff(old: *const c_char, new: *const c_char, out: *mut *mut c_char) -> StwStatus {
    guard(|| {
        let script = compute_diff(str_arg(old, "old")?, str_arg(new, "new")?);
        write_str(out, serde_json::to_string(&script).expect("script serializes"))
    })
}

// ---- documents ----

/// Extracts the article from `len` bytes of HTML. `charset` may be NULL.
///
/// # Safety
/// `html` must point to `len` readable bytes; `url` and a non-NULL `charset`
/// must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stw_document_extract(
    html: *const u8,
    len: usize,
    charset: *const c_char,
    url: *const c_char,
    out: *mut *mut StwDocument,
) -> StwStatus {
    guard(|| {
        if html.is_null() {
            return fail(StwStatus::NullArgument, "html is NULL");
        }
        let body = std::slice::from_raw_parts(html, len);
        let charset = if charset.is_null() { None } else { Some(str_arg(charset, "charset")?) };
        let url = str_arg(url, "url")?;
        let out = out_arg(out, "out")?;
        let doc = extract_article(body, charset, url, None, chrono::Utc::now())
            .or_else(|e| fail(StwStatus::InvalidInput, e.to_string()))?;
        let content_hash = hash_content(&doc);
        *out = Box::into_raw(Box::new(StwDocument { doc, content_hash }));
        Ok(())
    })
}

unsafe fn doc_ref<'a>(doc: *const StwDocument) -> Outcome<&'a StwDocument> {
    doc.as_ref()
        .ok_or_else(|| Failure(StwStatus::NullArgument, "document is NULL".into()))
}

/// # Safety
/// `doc` must be a live handle from [`stw_document_extract`].
#[no_mangle]
pub unsafe extern "C" fn stw_document_text(doc: *const StwDocument, out: *mut *mut c_char) -> StwStatus {
    guard(|| write_str(out, doc_ref(doc)?.doc.canonical_text.clone()))
}

/// # Safety
/// `doc` must be a live handle from [`stw_document_extract`].
#[no_mangle]
pub unsafe extern "C" fn stw_document_title(doc: *const StwDocument, out: *mut *mut c_char) -> StwStatus {
    guard(|| write_str(out, doc_ref(doc)?.doc.web_title.clone()))
}

/// # Safety
/// `doc` must be a live handle from [`stw_document_extract`].
#[no_mangle]
pub unsafe extern "C" fn stw_document_content_hash(doc: *const StwDocument, out: *mut *mut c_char) -> StwStatus {
    guard(|| write_str(out, doc_ref(doc)?.content_hash.to_hex()))
}

/// # Safety
/// `doc` must be NULL or a handle from [`stw_document_extract`], freed once.
#[no_mangle]
pub unsafe extern "C" fn stw_document_free(doc: *mut StwDocument) {
    if !doc.is_null() {
        drop(Box::from_raw(doc));
    }
}

// ---- merkle batches ----

#[no_mangle]
pub extern "C" fn stw_batch_new() -> *mut StwBatch {
    Box::into_raw(Box::new(StwBatch { leaves: Vec::new() }))
}

unsafe fn batch_mut<'a>(batch: *mut StwBatch) -> Outcome<&'a mut StwBatch> {
    batch
        .as_mut()
        .ok_or_else(|| Failure(StwStatus::NullArgument, "batch is NULL".into()))
}

/// Appends a hex leaf.
///
/// # Safety
/// `batch` must be a live handle; `leaf` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stw_batch_push(batch: *mut StwBatch, leaf: *const c_char) -> StwStatus {
    guard(|| {
        let leaf = hash_arg(leaf, "leaf")?;
        batch_mut(batch)?.leaves.push(leaf);
        Ok(())
    })
}

/// # Safety
/// `batch` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stw_batch_len(batch: *const StwBatch) -> usize {
    batch.as_ref().map_or(0, |b| b.leaves.len())
}

/// Hex Merkle root; fails on an empty batch.
///
/// # Safety
/// `batch` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stw_batch_root(batch: *mut StwBatch, out: *mut *mut c_char) -> StwStatus {
    guard(|| {
        let root = build_merkle(&batch_mut(batch)?.leaves).or_else(|e| fail(StwStatus::InvalidInput, e.to_string()))?;
        write_str(out, root.to_hex())
    })
}

/// Inclusion proof for the leaf at `index`, as JSON.
///
/// # Safety
/// `batch` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stw_batch_proof(batch: *mut StwBatch, index: usize, out: *mut *mut c_char) -> StwStatus {
    guard(|| {
        let proof =
            prove_inclusion(&batch_mut(batch)?.leaves, index).or_else(|e| fail(StwStatus::InvalidInput, e.to_string()))?;
        write_str(out, serde_json::to_string(&proof).expect("proof serializes"))
    })
}

/// # Safety
/// `batch` must be NULL or a handle from [`stw_batch_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn stw_batch_free(batch: *mut StwBatch) {
    if !batch.is_null() {
        drop(Box::from_raw(batch));
    }
}

/// Checks an inclusion proof JSON document. `VERIFICATION_FAILED` when the
/// path does not lead to the stated root.
///
/// # Safety
/// `proof_json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stw_verify_proof(proof_json: *const c_char) -> StwStatus {
    guard(|| {
        let proof: InclusionProof = serde_json::from_str(str_arg(proof_json, "proof_json")?)
            .or_else(|e| fail(StwStatus::InvalidInput, format!("proof: {e}")))?;
        if verify_inclusion(&proof) {
            Ok(())
        } else {
            fail(StwStatus::VerificationFailed, "proof does not reach its root")
        }
    })
}
