//! C ABI over the mmrerank core.
//!
//! Every fallible function returns an [`MmrStatus`]; on failure the message is
//! available from [`mmr_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.
//! Strings crossing the boundary are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mmrerank::corpus::{load_embeddings, normalize_answer, EmbeddingTable, Question};
use mmrerank::reader::{load_reader, ReadCandidate, ReaderModel};
use mmrerank::reranker::{load_reranker, RerankerModel};
use mmrerank::retrieval::{patch_grid, top_k};
use mmrerank::supervision::vqa_accuracy;
use mmrerank::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    NotFound = 6,
    Empty = 7,
    BufferTooSmall = 8,
    Untrained = 9,
    Panic = 10,
}

/// One sliding-window patch; pixel offsets of its top-left corner.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MmrPatch {
    pub patch_index: usize,
    pub x: u32,
    pub y: u32,
    pub kernel: u32,
}

/// Embedding table loaded from an EMB1 or JSONL file.
pub struct MmrEmbeddings {
    table: EmbeddingTable,
    ids: Vec<CString>,
    rows: HashMap<String, usize>,
}

/// Trained reranker scorer.
pub struct MmrReranker {
    model: RerankerModel,
}

/// Trained reader.
pub struct MmrReader {
    model: ReaderModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(MmrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MmrStatus::Io,
            Error::Parse { .. } | Error::BadMagic { .. } | Error::Truncated(_) | Error::Json(_) => {
                MmrStatus::Parse
            }
            Error::MissingEmbedding(_) | Error::MissingCandidate(_) | Error::MissingLabels(_) => {
                MmrStatus::NotFound
            }
            Error::Empty(_) => MmrStatus::Empty,
            Error::Untrained => MmrStatus::Untrained,
            _ => MmrStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn fail<T>(status: MmrStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, records any error or panic, and converts the outcome to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MmrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MmrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MmrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(MmrStatus::NullArgument, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(MmrStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        fail(MmrStatus::NullArgument, format!("{name} is null"))
    } else {
        Ok(())
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slot<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    non_null(p, name)?;
    Ok(&mut *p)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn mmr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mmr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the patch grid of a `width` x `height` image into `out`.
/// `*out_len` receives the number of patches; when it exceeds `capacity`
/// nothing is written and `MMR_STATUS_BUFFER_TOO_SMALL` is returned, so a
/// call with `capacity = 0` queries the size.
///
/// # Safety
/// `out` must point to `capacity` writable patches (may be NULL when
/// `capacity` is 0) and `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmr_patch_grid(
    width: u32,
    height: u32,
    kernel: u32,
    stride: u32,
    out: *mut MmrPatch,
    capacity: usize,
    out_len: *mut usize,
) -> MmrStatus {
    guard(|| {
        let out_len = out_slot(out_len, "out_len")?;
        let grid = patch_grid(width, height, kernel, stride)?;
        *out_len = grid.len();
        if grid.len() > capacity {
            return fail(
                MmrStatus::BufferTooSmall,
                format!("{} patches do not fit in {capacity}", grid.len()),
            );
        }
        non_null(out, "out")?;
        for (i, p) in grid.iter().enumerate() {
            *out.add(i) = MmrPatch {
                patch_index: p.patch_index,
                x: p.x,
                y: p.y,
                kernel: p.kernel,
            };
        }
        Ok(())
    })
}

/// VQA accuracy of `prediction` against `n_answers` annotator answers.
///
/// # Safety
/// `answers` must point to `n_answers` NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmr_vqa_accuracy(
    prediction: *const c_char,
    answers: *const *const c_char,
    n_answers: usize,
    out: *mut f64,
) -> MmrStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let pred = str_arg(prediction, "prediction")?;
        let answers = slice_arg(answers, n_answers, "answers")?
            .iter()
            .map(|&a| str_arg(a, "answer").map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        *out = vqa_accuracy(pred, &answers);
        Ok(())
    })
}

/// Loads an embedding table (EMB1 or JSONL).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mmr_embeddings_load(path: *const c_char, out: *mut *mut MmrEmbeddings) -> MmrStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = ptr::null_mut();
        let table = load_embeddings(Path::new(str_arg(path, "path")?))?;
        let ids = (0..table.len())
            .map(|i| CString::new(table.id(i)).or_else(|_| fail(MmrStatus::Parse, "id contains NUL")))
            .collect::<Result<_, _>>()?;
        let rows = (0..table.len()).map(|i| (table.id(i).to_owned(), i)).collect();
        *out = Box::into_raw(Box::new(MmrEmbeddings { table, ids, rows }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from [`mmr_embeddings_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mmr_embeddings_free(h: *mut MmrEmbeddings) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `h` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn mmr_embeddings_len(h: *const MmrEmbeddings) -> usize {
    h.as_ref().map_or(0, |h| h.table.len())
}

/// # Safety
/// `h` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn mmr_embeddings_dim(h: *const MmrEmbeddings) -> usize {
    h.as_ref().map_or(0, |h| h.table.dim())
}

/// Id of row `row`, borrowed from the handle; NULL when out of range.
///
/// # Safety
/// `h` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mmr_embeddings_id(h: *const MmrEmbeddings, row: usize) -> *const c_char {
    h.as_ref()
        .and_then(|h| h.ids.get(row))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Exact inner-product top-`k` of `query` against the table. Writes up to `k`
/// row indices and scores, ordered by score descending then id ascending;
/// `*out_len` receives the count written.
///
/// # Safety
/// `query` must hold `dim` floats; `out_rows` and `out_scores` must hold `k` entries.
#[no_mangle]
pub unsafe extern "C" fn mmr_embeddings_top_k(
    h: *const MmrEmbeddings,
    query: *const f32,
    dim: usize,
    k: usize,
    out_rows: *mut usize,
    out_scores: *mut f64,
    out_len: *mut usize,
) -> MmrStatus {
    guard(|| {
        non_null(h, "handle")?;
        let h = &*h;
        let out_len = out_slot(out_len, "out_len")?;
        let query = slice_arg(query, dim, "query")?;
        let hits = top_k(query, &h.table, k)?;
        if !hits.is_empty() {
            non_null(out_rows, "out_rows")?;
            non_null(out_scores, "out_scores")?;
        }
        for (i, (id, score)) in hits.iter().enumerate() {
            *out_rows.add(i) = h.rows[id];
            *out_scores.add(i) = *score;
        }
        *out_len = hits.len();
        Ok(())
    })
}

/// Loads a reranker checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mmr_reranker_load(path: *const c_char, out: *mut *mut MmrReranker) -> MmrStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = ptr::null_mut();
        let model = load_reranker(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(MmrReranker { model }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from [`mmr_reranker_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mmr_reranker_free(h: *mut MmrReranker) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of features the scorer expects.
///
/// # Safety
/// `h` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn mmr_reranker_feature_dim(h: *const MmrReranker) -> usize {
    h.as_ref().map_or(0, |h| h.model.feature_dim())
}

/// Scores one feature vector of length `n_features`.
///
/// # Safety
/// `features` must hold `n_features` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mmr_reranker_score(
    h: *const MmrReranker,
    features: *const f64,
    n_features: usize,
    out: *mut f64,
) -> MmrStatus {
    guard(|| {
        non_null(h, "handle")?;
        let out = out_slot(out, "out")?;
        *out = (*h).model.score(slice_arg(features, n_features, "features")?)?;
        Ok(())
    })
}

/// Loads a reader checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mmr_reader_load(path: *const c_char, out: *mut *mut MmrReader) -> MmrStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = ptr::null_mut();
        let model = load_reader(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(MmrReader { model }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from [`mmr_reader_load`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mmr_reader_free(h: *mut MmrReader) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of leading candidates the reader consumes.
///
/// # Safety
/// `h` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn mmr_reader_k(h: *const MmrReader) -> usize {
    h.as_ref().map_or(0, |h| h.model.k)
}

/// Answers a question from raw candidate texts and their ranking scores,
/// in rank order. Only the first k candidates are read. The answer is copied
/// into `out` with a terminating NUL; `*out_len` receives its byte length
/// without the NUL, and `MMR_STATUS_BUFFER_TOO_SMALL` is returned if
/// `capacity` cannot hold it.
///
/// # Safety
/// `texts` and `scores` must hold `n` entries; `out` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn mmr_reader_predict(
    h: *const MmrReader,
    question: *const c_char,
    texts: *const *const c_char,
    scores: *const f64,
    n: usize,
    out: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> MmrStatus {
    guard(|| {
        non_null(h, "handle")?;
        let model = &(*h).model;
        let out_len = out_slot(out_len, "out_len")?;
        let question = Question {
            question_id: String::new(),
            image_id: String::new(),
            text: str_arg(question, "question")?.to_owned(),
            answers: Vec::new(),
        };
        let n = n.min(model.k);
        let texts = slice_arg(texts, n, "texts")?
            .iter()
            .map(|&t| str_arg(t, "text").map(normalize_answer))
            .collect::<Result<Vec<_>, _>>()?;
        let scores = slice_arg(scores, n, "scores")?;
        let candidates: Vec<ReadCandidate> = texts
            .iter()
            .zip(scores)
            .map(|(t, &score)| ReadCandidate { text: t, score })
            .collect();
        let answer = model.predict_read(&question, &candidates)?.as_bytes();
        *out_len = answer.len();
        if answer.len() >= capacity {
            return fail(
                MmrStatus::BufferTooSmall,
                format!("answer needs {} bytes", answer.len() + 1),
            );
        }
        non_null(out, "out")?;
        ptr::copy_nonoverlapping(answer.as_ptr(), out.cast::<u8>(), answer.len());
        *out.add(answer.len()) = 0;
        Ok(())
    })
}
