//! C ABI over the optskills engine: pure numeric kernels, the skill
//! document validator, and an opaque skill-library handle.
//!
//! Every function returns an [`OptskillsStatus`]. On failure, a message is
//! kept per thread and can be read with [`optskills_last_error`]. Strings
//! returned through out-pointers are owned by the caller and must be
//! released with [`optskills_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use optskills::archetype::{cosine_distance_raw, fuse_raw, Ingredients};
use optskills::clustering::{adjusted_rand_index, dbscan_raw, pairwise_f1};
use optskills::evaluation::{answers_match, MatchTolerance};
use optskills::rollout::parse_result_line;
use optskills::skills::markdown::describe_errors;
use optskills::skills::{load_library, save_library, validate_skill_markdown, Skill, SkillError, SkillLibrary};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptskillsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidDocument = 4,
    NotFound = 5,
    Io = 6,
    CorruptLibrary = 7,
    Panic = 8,
}

/// Opaque skill library.
pub struct OptskillsLibrary {
    inner: SkillLibrary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(OptskillsStatus, String);

impl Failure {
    fn new(status: OptskillsStatus, message: impl Into<String>) -> Self {
        Failure(status, message.into())
    }
}

impl From<SkillError> for Failure {
    fn from(e: SkillError) -> Self {
        let status = match &e {
            SkillError::Io(_) => OptskillsStatus::Io,
            SkillError::CorruptLibrary(_) => OptskillsStatus::CorruptLibrary,
            SkillError::InvalidSkillDocument(_) | SkillError::NameChanged { .. } => OptskillsStatus::InvalidDocument,
            SkillError::MissingSkill(_) | SkillError::UnknownSkillId(_) => OptskillsStatus::NotFound,
            _ => OptskillsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, records its failure message and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OptskillsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            OptskillsStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            OptskillsStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(OptskillsStatus::NullArgument, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(OptskillsStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

/// # Safety
/// `p` must be null (only when `len == 0`) or point to `len` readable values.
unsafe fn read_slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn to_c_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("NULs removed").into_raw()
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::new(OptskillsStatus::InvalidArgument, e.to_string())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn optskills_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn optskills_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes `Norm(alpha * w + (1 - alpha) * v)` into `out` (length `len`).
///
/// # Safety
/// `w`, `v` and `out` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn optskills_fuse(
    w: *const f64,
    v: *const f64,
    len: usize,
    alpha: f64,
    out: *mut f64,
) -> OptskillsStatus {
    guard(|| {
        let (w, v) = (read_slice(w, len, "w")?, read_slice(v, len, "v")?);
        non_null(out, "out")?;
        let fused = fuse_raw(w, v, alpha).map_err(invalid)?;
        ptr::copy_nonoverlapping(fused.as_ptr(), out, len);
        Ok(())
    })
}

/// # Safety
/// `a` and `b` must point to `len` doubles; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn optskills_cosine_distance(
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> OptskillsStatus {
    guard(|| {
        let (a, b) = (read_slice(a, len, "a")?, read_slice(b, len, "b")?);
        non_null(out, "out")?;
        *out = cosine_distance_raw(a, b).map_err(invalid)?;
        Ok(())
    })
}

/// DBSCAN under cosine distance over `n` row-major points of dimension
/// `dim`. Writes one label per point into `labels`; noise is -1.
///
/// # Safety
/// `points` must hold `n * dim` doubles and `labels` room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn optskills_dbscan(
    points: *const f64,
    n: usize,
    dim: usize,
    epsilon: f64,
    min_samples: usize,
    labels: *mut i64,
) -> OptskillsStatus {
    guard(|| {
        let total = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let flat = read_slice(points, total, "points")?;
        non_null(labels, "labels")?;
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let rows: Vec<&[f64]> = flat.chunks_exact(dim).collect();
        let assignment = dbscan_raw(&rows, epsilon, min_samples).map_err(invalid)?;
        ptr::copy_nonoverlapping(assignment.labels.as_ptr(), labels, n);
        Ok(())
    })
}

/// # Safety
/// `pred` and `truth` must point to `n` labels; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn optskills_adjusted_rand_index(
    pred: *const i64,
    truth: *const i64,
    n: usize,
    out: *mut f64,
) -> OptskillsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = adjusted_rand_index(read_slice(pred, n, "pred")?, read_slice(truth, n, "truth")?).map_err(invalid)?;
        Ok(())
    })
}

/// # Safety
/// `pred` and `truth` must point to `n` labels; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn optskills_pairwise_f1(
    pred: *const i64,
    truth: *const i64,
    n: usize,
    out: *mut f64,
) -> OptskillsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = pairwise_f1(read_slice(pred, n, "pred")?, read_slice(truth, n, "truth")?).map_err(invalid)?;
        Ok(())
    })
}

/// `|pred - truth| <= max(absolute, relative * |truth|)`.
///
/// # Safety
/// `out` must point to one bool.
#[no_mangle]
pub unsafe extern "C" fn optskills_answers_match(
    pred: f64,
    truth: f64,
    absolute: f64,
    relative: f64,
    out: *mut bool,
) -> OptskillsStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = answers_match(pred, truth, MatchTolerance { absolute, relative }).map_err(invalid)?;
        Ok(())
    })
}

/// Value of the last `RESULT:` line; `found` is false when there is none.
///
/// # Safety
/// `stdout_text` must be a NUL-terminated string; `value` and `found` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn optskills_parse_result_line(
    stdout_text: *const c_char,
    value: *mut f64,
    found: *mut bool,
) -> OptskillsStatus {
    guard(|| {
        let text = read_str(stdout_text, "stdout_text")?;
        non_null(value, "value")?;
        non_null(found, "found")?;
        match parse_result_line(text) {
            Some(v) => {
                *value = v;
                *found = true;
            }
            None => *found = false,
        }
        Ok(())
    })
}

/// Checks a skill document against the required template. Returns
/// `InvalidDocument` with every problem in the last-error message.
///
/// # Safety
/// `document` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn optskills_validate_skill(document: *const c_char) -> OptskillsStatus {
    guard(|| {
        let text = read_str(document, "document")?;
        validate_skill_markdown(text)
            .map(|_| ())
            .map_err(|errs| Failure::new(OptskillsStatus::InvalidDocument, describe_errors(&errs)))
    })
}

/// New empty library. Release with [`optskills_library_free`].
#[no_mangle]
pub extern "C" fn optskills_library_new() -> *mut OptskillsLibrary {
    Box::into_raw(Box::new(OptskillsLibrary { inner: SkillLibrary::new() }))
}

/// Loads a persisted library directory into `*out`.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn optskills_library_load(dir: *const c_char, out: *mut *mut OptskillsLibrary) -> OptskillsStatus {
    guard(|| {
        let dir = read_str(dir, "dir")?;
        non_null(out, "out")?;
        let inner = load_library(Path::new(dir))?;
        *out = Box::into_raw(Box::new(OptskillsLibrary { inner }));
        Ok(())
    })
}

/// # Safety
/// `lib` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn optskills_library_save(lib: *const OptskillsLibrary, dir: *const c_char) -> OptskillsStatus {
    guard(|| {
        non_null(lib, "lib")?;
        let dir = read_str(dir, "dir")?;
        save_library(&(*lib).inner, Path::new(dir))?;
        Ok(())
    })
}

/// # Safety
/// `lib` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn optskills_library_free(lib: *mut OptskillsLibrary) {
    if !lib.is_null() {
        drop(Box::from_raw(lib));
    }
}

/// Number of skills; 0 for a null handle.
///
/// # Safety
/// `lib` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn optskills_library_len(lib: *const OptskillsLibrary) -> usize {
    lib.as_ref().map_or(0, |l| l.inner.len())
}

/// Library version (number of committed updates); 0 for a null handle.
///
/// # Safety
/// `lib` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn optskills_library_version(lib: *const OptskillsLibrary) -> u64 {
    lib.as_ref().map_or(0, |l| l.inner.version())
}

/// Id of the `index`-th skill in id order.
///
/// # Safety
/// `lib` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn optskills_library_skill_id(
    lib: *const OptskillsLibrary,
    index: usize,
    out: *mut *mut c_char,
) -> OptskillsStatus {
    guard(|| {
        non_null(lib, "lib")?;
        non_null(out, "out")?;
        let skill = (*lib)
            .inner
            .iter()
            .nth(index)
            .ok_or_else(|| Failure::new(OptskillsStatus::NotFound, format!("no skill at index {index}")))?;
        *out = to_c_string(&skill.skill_id);
        Ok(())
    })
}

/// Full markdown of the skill with id `skill_id`.
///
/// # Safety
/// `lib` must be a live handle, `skill_id` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn optskills_library_document(
    lib: *const OptskillsLibrary,
    skill_id: *const c_char,
    out: *mut *mut c_char,
) -> OptskillsStatus {
    guard(|| {
        non_null(lib, "lib")?;
        let id = read_str(skill_id, "skill_id")?;
        non_null(out, "out")?;
        let skill = (*lib)
            .inner
            .get(id)
            .ok_or_else(|| Failure::new(OptskillsStatus::NotFound, format!("unknown skill `{id}`")))?;
        *out = to_c_string(&skill.document);
        Ok(())
    })
}

/// Validates `document` and adds it as a new skill; the assigned id is
/// written to `*id_out`. `provenance` may be null.
///
/// # Safety
/// `lib` must be a live handle; string arguments NUL-terminated (or null
/// where allowed); `id_out` writable.
#[no_mangle]
pub unsafe extern "C" fn optskills_library_insert(
    lib: *mut OptskillsLibrary,
    document: *const c_char,
    timestamp: *const c_char,
    provenance: *const c_char,
    id_out: *mut *mut c_char,
) -> OptskillsStatus {
    guard(|| {
        non_null(lib, "lib")?;
        let document = read_str(document, "document")?;
        let timestamp = read_str(timestamp, "timestamp")?;
        let provenance = if provenance.is_null() { None } else { Some(read_str(provenance, "provenance")?.to_string()) };
        non_null(id_out, "id_out")?;
        let library = &mut (*lib).inner;
        let outline = validate_skill_markdown(document)
            .map_err(|errs| Failure::new(OptskillsStatus::InvalidDocument, describe_errors(&errs)))?;
        let id = library.fresh_skill_id(&outline.name, timestamp);
        let skill = Skill::from_document(id.clone(), document, Ingredients::default(), provenance, timestamp)?;
        library.insert(skill, timestamp)?;
        *id_out = to_c_string(&id);
        Ok(())
    })
}
