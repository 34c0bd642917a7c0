//! C interface to the nightshift library.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_load` / `*_new` function and released with the matching `*_free`.
//! Fallible functions return an [`NsStatus`]; the message of the most
//! recent failure on the calling thread is available from
//! [`ns_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nightshift::geoeval::{pose_error, Pose};
use nightshift::image::Image;
use nightshift::pipeline::{Featurizer, RunConfig};
use nightshift::retrieval::RetrievalIndex;
use nightshift::translator::{load_checkpoint, CycleModel};
use nightshift::vlad::{DescriptorDb, PcaModel, Vocabulary};
use nightshift::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NsStatus {
    Ok = 0,
    InvalidArgument = 1,
    InvalidState = 2,
    Data = 3,
    Load = 4,
    Io = 5,
    Diverged = 6,
    NullPointer = 7,
    Panic = 8,
}

/// Visual vocabulary (k cluster centers).
pub struct NsVocabulary(Vocabulary);
/// PCA projection model.
pub struct NsPca(PcaModel);
/// Image to global descriptor pipeline.
pub struct NsFeaturizer(Featurizer);
/// Searchable descriptor database.
pub struct NsIndex(RetrievalIndex);
/// Trained night-to-day translation model.
pub struct NsTranslator(CycleModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

fn status_of(err: &Error) -> NsStatus {
    match err {
        Error::InvalidArgument(_) => NsStatus::InvalidArgument,
        Error::InvalidState(_) => NsStatus::InvalidState,
        Error::Data(_) => NsStatus::Data,
        Error::Load(_) => NsStatus::Load,
        Error::Io { .. } => NsStatus::Io,
        Error::Diverged(_) => NsStatus::Diverged,
    }
}

struct Fail(NsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NsStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(NsStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

unsafe fn image_arg(pixels: *const u8, height: usize, width: usize) -> Result<Image, Fail> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let n = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Fail(NsStatus::InvalidArgument, "image size overflows".into()))?;
    let bytes = std::slice::from_raw_parts(pixels, n);
    Ok(Image::from_rgb8(height, width, bytes)?)
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ns_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ns_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ns_vocabulary_load(path: *const c_char, out: *mut *mut NsVocabulary) -> NsStatus {
    guard(|| put(out, NsVocabulary(Vocabulary::load(&path_arg(path)?)?)))
}

/// # Safety
/// `v` must be null or come from [`ns_vocabulary_load`].
#[no_mangle]
pub unsafe extern "C" fn ns_vocabulary_free(v: *mut NsVocabulary) {
    free(v)
}

/// Number of clusters, 0 for a null handle.
///
/// # Safety
/// `v` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ns_vocabulary_k(v: *const NsVocabulary) -> usize {
    v.as_ref().map_or(0, |v| v.0.k())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ns_pca_load(path: *const c_char, out: *mut *mut NsPca) -> NsStatus {
    guard(|| put(out, NsPca(PcaModel::load(&path_arg(path)?)?)))
}

/// # Safety
/// `p` must be null or come from [`ns_pca_load`].
#[no_mangle]
pub unsafe extern "C" fn ns_pca_free(p: *mut NsPca) {
    free(p)
}

/// Featurizer with default extraction settings. `pca` may be null to keep
/// full VLAD vectors. Both models are copied.
///
/// # Safety
/// `vocab` must be a live handle, `pca` null or live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ns_featurizer_new(
    vocab: *const NsVocabulary,
    pca: *const NsPca,
    out: *mut *mut NsFeaturizer,
) -> NsStatus {
    guard(|| {
        let vocab = borrow(vocab, "vocabulary")?.0.clone();
        let pca = pca.as_ref().map(|p| p.0.clone());
        put(out, NsFeaturizer(Featurizer::new(vocab, pca, &RunConfig::default())?))
    })
}

/// # Safety
/// `f` must be null or come from [`ns_featurizer_new`].
#[no_mangle]
pub unsafe extern "C" fn ns_featurizer_free(f: *mut NsFeaturizer) {
    free(f)
}

/// Length of the descriptors produced by `f`, 0 for a null handle.
///
/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ns_featurizer_output_dim(f: *const NsFeaturizer) -> usize {
    f.as_ref().map_or(0, |f| f.0.output_dim())
}

/// Describe an interleaved 8-bit RGB image into `out[0..out_len]`;
/// `out_len` must equal [`ns_featurizer_output_dim`].
///
/// # Safety
/// `pixels` must hold `height * width * 3` bytes and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ns_featurizer_describe(
    f: *const NsFeaturizer,
    pixels: *const u8,
    height: usize,
    width: usize,
    out: *mut f64,
    out_len: usize,
) -> NsStatus {
    guard(|| {
        let f = borrow(f, "featurizer")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != f.0.output_dim() {
            return Err(Fail(
                NsStatus::InvalidArgument,
                format!("output buffer holds {out_len} values, descriptor has {}", f.0.output_dim()),
            ));
        }
        let v = f.0.describe(&image_arg(pixels, height, width)?)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&v);
        Ok(())
    })
}

/// Load a descriptor database file into a search index.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ns_index_load(path: *const c_char, out: *mut *mut NsIndex) -> NsStatus {
    guard(|| {
        let db = DescriptorDb::load(&path_arg(path)?)?;
        put(out, NsIndex(RetrievalIndex::without_poses(&db)?))
    })
}

/// # Safety
/// `i` must be null or come from [`ns_index_load`].
#[no_mangle]
pub unsafe extern "C" fn ns_index_free(i: *mut NsIndex) {
    free(i)
}

/// Number of entries, 0 for a null handle.
///
/// # Safety
/// `i` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ns_index_len(i: *const NsIndex) -> usize {
    i.as_ref().map_or(0, |i| i.0.len())
}

/// Descriptor length, 0 for a null handle.
///
/// # Safety
/// `i` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ns_index_dim(i: *const NsIndex) -> usize {
    i.as_ref().map_or(0, |i| i.0.dim())
}

/// Nearest entry to `query` by Euclidean distance.
///
/// # Safety
/// `query` must hold `len` doubles; `out_entry` and `out_distance` writable.
#[no_mangle]
pub unsafe extern "C" fn ns_index_query(
    i: *const NsIndex,
    query: *const f64,
    len: usize,
    out_entry: *mut usize,
    out_distance: *mut f64,
) -> NsStatus {
    guard(|| {
        let index = &borrow(i, "index")?.0;
        if query.is_null() || out_entry.is_null() || out_distance.is_null() {
            return Err(null("query or output"));
        }
        let q = std::slice::from_raw_parts(query, len);
        let m = index.query("query", q)?;
        let pos = index
            .entries()
            .iter()
            .position(|e| e.id == m.reference_id)
            .expect("match comes from the index");
        *out_entry = pos;
        *out_distance = m.distance;
        Ok(())
    })
}

/// Copy the id of entry `entry` into `buf` (NUL-terminated, truncated to
/// `cap`). Returns the id length in bytes without the terminator, or
/// `usize::MAX` for an invalid handle or entry.
///
/// # Safety
/// `buf` must be null (to query the length) or hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn ns_index_entry_id(i: *const NsIndex, entry: usize, buf: *mut c_char, cap: usize) -> usize {
    let Some(e) = i.as_ref().and_then(|i| i.0.entries().get(entry)) else {
        return usize::MAX;
    };
    let bytes = e.id.as_bytes();
    if !buf.is_null() && cap > 0 {
        let n = bytes.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
    }
    bytes.len()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ns_translator_load(path: *const c_char, out: *mut *mut NsTranslator) -> NsStatus {
    guard(|| put(out, NsTranslator(load_checkpoint(&path_arg(path)?)?)))
}

/// # Safety
/// `t` must be null or come from [`ns_translator_load`].
#[no_mangle]
pub unsafe extern "C" fn ns_translator_free(t: *mut NsTranslator) {
    free(t)
}

/// Translate a night image to day. Input and output are interleaved 8-bit
/// RGB of the same size and may not overlap.
///
/// # Safety
/// `pixels` and `out` must each hold `height * width * 3` bytes.
#[no_mangle]
pub unsafe extern "C" fn ns_translator_translate(
    t: *const NsTranslator,
    pixels: *const u8,
    height: usize,
    width: usize,
    out: *mut u8,
) -> NsStatus {
    guard(|| {
        let model = &borrow(t, "translator")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let img = model.translate(&image_arg(pixels, height, width)?)?;
        let bytes = img.to_rgb8();
        std::slice::from_raw_parts_mut(out, bytes.len()).copy_from_slice(&bytes);
        Ok(())
    })
}

/// Translation (meters) and rotation (degrees) error between two poses,
/// each given as `[tx, ty, tz, qw, qx, qy, qz]`.
///
/// # Safety
/// `estimate` and `truth` must hold 7 doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ns_pose_error(
    estimate: *const f64,
    truth: *const f64,
    out_meters: *mut f64,
    out_degrees: *mut f64,
) -> NsStatus {
    guard(|| {
        if estimate.is_null() || truth.is_null() || out_meters.is_null() || out_degrees.is_null() {
            return Err(null("pose or output"));
        }
        let pose = |p: *const f64| -> Result<Pose, Fail> {
            let v = std::slice::from_raw_parts(p, 7);
            Ok(Pose::new([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])?)
        };
        let (m, d) = pose_error(&pose(estimate)?, &pose(truth)?)?;
        *out_meters = m;
        *out_degrees = d;
        Ok(())
    })
}
