//! C ABI for loading models, decoding, and evaluating corpora from other
//! languages. Handles are opaque pointers owned by the caller and released
//! with the matching `_free` function; every fallible call returns a status
//! code, with a thread-local message behind `srnn_last_error`.

use segrnn::data_eval::{evaluate, load_corpus, Corpus, Instance, Prediction};
use segrnn::model::AnyModel;
use segrnn::storage::load_model;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrnnStatus {
    SrnnOk = 0,
    SrnnNullArgument = 1,
    SrnnUtf8Error = 2,
    SrnnIoError = 3,
    SrnnParseError = 4,
    SrnnValidationError = 5,
    SrnnIndexOutOfRange = 6,
    SrnnBufferTooSmall = 7,
}

/// One decoded segment: `duration` tokens starting at `start`, with an index
/// into the model's label inventory. A duration of 0 means the model does
/// not produce segment boundaries (CTC); only the label is meaningful then.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SrnnSegment {
    pub start: usize,
    pub duration: usize,
    pub label: usize,
}

/// Corpus-level metrics, mirroring the evaluation table.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SrnnMetrics {
    pub p_seg: f64,
    pub r_seg: f64,
    pub f_seg: f64,
    pub p_tag: f64,
    pub r_tag: f64,
    pub f_tag: f64,
    pub error_rate: f64,
}

/// Opaque model handle.
pub struct SrnnModel {
    inner: AnyModel,
}

/// Opaque corpus handle.
pub struct SrnnCorpus {
    inner: Corpus,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &segrnn::Error) -> SrnnStatus {
    match err {
        segrnn::Error::Io(_) => SrnnStatus::SrnnIoError,
        segrnn::Error::CorpusParse { .. } | segrnn::Error::ModelFormat(_) => {
            SrnnStatus::SrnnParseError
        }
        _ => SrnnStatus::SrnnValidationError,
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, SrnnStatus> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(SrnnStatus::SrnnNullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(SrnnStatus::SrnnUtf8Error)
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn srnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent error on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn srnn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Load a model file. On success `*out` owns the handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn srnn_model_load(
    path: *const c_char,
    out: *mut *mut SrnnModel,
) -> SrnnStatus {
    if out.is_null() {
        set_error("null output argument");
        return SrnnStatus::SrnnNullArgument;
    }
    *out = ptr::null_mut();
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_model(path) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(SrnnModel { inner: model }));
            SrnnStatus::SrnnOk
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// # Safety
/// `model` must come from `srnn_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn srnn_model_free(model: *mut SrnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of labels in the model inventory.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn srnn_model_label_count(model: *const SrnnModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.labels().len()
}

/// Copy the NUL-terminated name of label `index` into `buf`.
///
/// # Safety
/// `model` must be a live handle and `buf` writable for `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn srnn_model_label_name(
    model: *const SrnnModel,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
) -> SrnnStatus {
    if model.is_null() || buf.is_null() {
        set_error("null argument");
        return SrnnStatus::SrnnNullArgument;
    }
    let labels = (*model).inner.labels();
    let Some(name) = labels.get(index) else {
        set_error("label index out of range");
        return SrnnStatus::SrnnIndexOutOfRange;
    };
    let bytes = name.as_bytes();
    if bytes.len() + 1 > buf_len {
        set_error("buffer too small for label name");
        return SrnnStatus::SrnnBufferTooSmall;
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
    *buf.add(bytes.len()) = 0;
    SrnnStatus::SrnnOk
}

/// Load a corpus file. On success `*out` owns the handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn srnn_corpus_load(
    path: *const c_char,
    out: *mut *mut SrnnCorpus,
) -> SrnnStatus {
    if out.is_null() {
        set_error("null output argument");
        return SrnnStatus::SrnnNullArgument;
    }
    *out = ptr::null_mut();
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_corpus(path, None) {
        Ok(corpus) => {
            *out = Box::into_raw(Box::new(SrnnCorpus { inner: corpus }));
            SrnnStatus::SrnnOk
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// # Safety
/// `corpus` must come from `srnn_corpus_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn srnn_corpus_free(corpus: *mut SrnnCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of instances in the corpus.
///
/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn srnn_corpus_len(corpus: *const SrnnCorpus) -> usize {
    if corpus.is_null() {
        return 0;
    }
    (*corpus).inner.len()
}

fn label_index(model: &AnyModel, name: &str) -> usize {
    model.labels().iter().position(|l| l == name).unwrap_or(usize::MAX)
}

/// Decode instance `index` of the corpus. On success `*out_segments` points
/// at `*out_len` segments allocated by the library; release them with
/// `srnn_segments_free`. Segmental models fill start/duration; CTC yields
/// label-only segments with duration 0.
///
/// # Safety
/// All pointers must be valid; the handles must be live.
#[no_mangle]
pub unsafe extern "C" fn srnn_decode(
    model: *const SrnnModel,
    corpus: *const SrnnCorpus,
    index: usize,
    out_segments: *mut *mut SrnnSegment,
    out_len: *mut usize,
) -> SrnnStatus {
    if model.is_null() || corpus.is_null() || out_segments.is_null() || out_len.is_null() {
        set_error("null argument");
        return SrnnStatus::SrnnNullArgument;
    }
    *out_segments = ptr::null_mut();
    *out_len = 0;
    let model = &(*model).inner;
    let corpus = &(*corpus).inner;
    let Some(instance) = corpus.instances.get(index) else {
        set_error("instance index out of range");
        return SrnnStatus::SrnnIndexOutOfRange;
    };
    let segments: Vec<SrnnSegment> = match model.predict(instance) {
        Ok(Prediction::Segments(segs)) => segs
            .into_iter()
            .map(|(start, duration, label)| SrnnSegment {
                start,
                duration,
                label: label_index(model, &label),
            })
            .collect(),
        Ok(Prediction::Labels(labels)) => labels
            .into_iter()
            .map(|label| SrnnSegment { start: 0, duration: 0, label: label_index(model, &label) })
            .collect(),
        Err(e) => {
            set_error(&e.to_string());
            return status_of(&e);
        }
    };
    let mut boxed = segments.into_boxed_slice();
    *out_len = boxed.len();
    *out_segments = if boxed.is_empty() { ptr::null_mut() } else { boxed.as_mut_ptr() };
    std::mem::forget(boxed);
    SrnnStatus::SrnnOk
}

/// Release a segment array from `srnn_decode`.
///
/// # Safety
/// `segments`/`len` must come from a successful `srnn_decode`.
#[no_mangle]
pub unsafe extern "C" fn srnn_segments_free(segments: *mut SrnnSegment, len: usize) {
    if !segments.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(segments, len)));
    }
}

/// Decode the whole corpus and score it against its own gold annotation.
///
/// # Safety
/// All pointers must be valid; the handles must be live.
#[no_mangle]
pub unsafe extern "C" fn srnn_evaluate(
    model: *const SrnnModel,
    corpus: *const SrnnCorpus,
    out: *mut SrnnMetrics,
) -> SrnnStatus {
    if model.is_null() || corpus.is_null() || out.is_null() {
        set_error("null argument");
        return SrnnStatus::SrnnNullArgument;
    }
    let model = &(*model).inner;
    let corpus = &(*corpus).inner;
    let run = || -> segrnn::Result<segrnn::data_eval::SegMetrics> {
        let preds: Vec<Prediction> = corpus
            .instances
            .iter()
            .map(|i| model.predict(i))
            .collect::<segrnn::Result<_>>()?;
        let refs: Vec<&Instance> = corpus.instances.iter().collect();
        evaluate(&preds, &refs)
    };
    match run() {
        Ok(m) => {
            *out = SrnnMetrics {
                p_seg: m.p_seg,
                r_seg: m.r_seg,
                f_seg: m.f_seg,
                p_tag: m.p_tag,
                r_tag: m.r_tag,
                f_tag: m.f_tag,
                error_rate: m.error_rate,
            };
            SrnnStatus::SrnnOk
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}
