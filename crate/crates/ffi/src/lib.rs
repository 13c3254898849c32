//! C ABI over the discrete information engine, the loss functions and the
//! dataset container.
//!
//! Conventions:
//! * every fallible function returns an [`SiStatus`] and writes results
//!   through out-pointers;
//! * on failure, [`si_last_error`] returns a message for the calling thread;
//! * handles are opaque and released with their `_free` function;
//! * variable sets are comma-separated variable names, e.g. `"v1,v2"`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use superinfo::checks::run_mi_checks;
use superinfo::data::{load_container, DataError, DatasetContainer};
use superinfo::info::{
    conditional_mi, entropy, gaussian_linear_mi, interaction_info, mutual_info, InfoError, JointDistribution,
    Variable,
};
use superinfo::loss::{gaussian_kl, nt_xent, superinfo_total, LossParts, LossWeights};
use superinfo::tensor::{Tape, Tensor, TensorError};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidDistribution = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    Panic = 7,
}

/// A validated joint distribution over named discrete variables.
pub struct SiJoint {
    inner: JointDistribution,
}

/// A dataset container loaded from disk.
pub struct SiDataset {
    inner: DatasetContainer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SiStatus, String);

impl From<InfoError> for Failure {
    fn from(e: InfoError) -> Self {
        let status = match e {
            InfoError::UnknownVariable(_)
            | InfoError::EmptySet
            | InfoError::OverlappingSets(_)
            | InfoError::InvalidArgument(_) => SiStatus::InvalidArgument,
            _ => SiStatus::InvalidDistribution,
        };
        Failure(status, e.to_string())
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let status = match e {
            DataError::Io { .. } => SiStatus::Io,
            _ => SiStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        Failure(SiStatus::InvalidArgument, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SiStatus::InvalidArgument, msg.into())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SiStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SiStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller guarantees that non-null pointers are valid.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(SiStatus::NullPointer, format!("{what} is null")))
}

fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller guarantees that non-null pointers are valid.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(SiStatus::NullPointer, format!("{what} is null")))
}

fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SiStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null and NUL-terminated by contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(SiStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null and at least `len` elements by contract.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure(SiStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null and at least `len` writable elements by contract.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn names(list: &str) -> Vec<&str> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Message describing the last failure on this thread, or NULL after a
/// success. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn si_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn si_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a joint from `n_vars` variables (names and cardinalities) and a
/// row-major probability table whose first variable varies slowest.
///
/// # Safety
/// `names` must hold `n_vars` NUL-terminated strings, `cards` `n_vars`
/// values, `probs` `n_probs` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_joint_new(
    names: *const *const c_char,
    cards: *const usize,
    n_vars: usize,
    probs: *const f64,
    n_probs: usize,
    out: *mut *mut SiJoint,
) -> SiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let name_ptrs = slice(names, n_vars, "names")?;
        let cards = slice(cards, n_vars, "cards")?;
        let vars = name_ptrs
            .iter()
            .zip(cards)
            .map(|(&n, &c)| Ok(Variable::new(c_str(n, "variable name")?, c)))
            .collect::<Result<Vec<_>, Failure>>()?;
        let joint = JointDistribution::new(vars, slice(probs, n_probs, "probs")?.to_vec())?;
        *out = Box::into_raw(Box::new(SiJoint { inner: joint }));
        Ok(())
    })
}

/// Parses a joint from the CSV format (`var:<name>:<card>` columns, then `p`).
///
/// # Safety
/// `csv` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_joint_from_csv(csv: *const c_char, out: *mut *mut SiJoint) -> SiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let joint = JointDistribution::from_csv(c_str(csv, "csv")?)?;
        *out = Box::into_raw(Box::new(SiJoint { inner: joint }));
        Ok(())
    })
}

/// Releases a joint. NULL is ignored.
///
/// # Safety
/// `joint` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn si_joint_free(joint: *mut SiJoint) {
    if !joint.is_null() {
        // SAFETY: allocated by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(joint) });
    }
}

/// Number of variables in the joint.
///
/// # Safety
/// `joint` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_joint_num_variables(joint: *const SiJoint, out: *mut usize) -> SiStatus {
    guard(|| {
        *out_ref(out, "out")? = non_null(joint, "joint")?.inner.variables().len();
        Ok(())
    })
}

/// `H(subset)` in nats.
///
/// # Safety
/// `joint` must be a live handle, `subset` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn si_entropy(joint: *const SiJoint, subset: *const c_char, out: *mut f64) -> SiStatus {
    guard(|| {
        let j = &non_null(joint, "joint")?.inner;
        *out_ref(out, "out")? = entropy(j, &names(c_str(subset, "subset")?))?;
        Ok(())
    })
}

/// `I(a; b)` in nats.
///
/// # Safety
/// `joint` must be a live handle, `a` and `b` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn si_mutual_info(
    joint: *const SiJoint,
    a: *const c_char,
    b: *const c_char,
    out: *mut f64,
) -> SiStatus {
    guard(|| {
        let j = &non_null(joint, "joint")?.inner;
        *out_ref(out, "out")? = mutual_info(j, &names(c_str(a, "a")?), &names(c_str(b, "b")?))?;
        Ok(())
    })
}

/// `I(a; b | c)` in nats.
///
/// # Safety
/// `joint` must be a live handle, the sets NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn si_conditional_mi(
    joint: *const SiJoint,
    a: *const c_char,
    b: *const c_char,
    c: *const c_char,
    out: *mut f64,
) -> SiStatus {
    guard(|| {
        let j = &non_null(joint, "joint")?.inner;
        let (a, b, c) = (names(c_str(a, "a")?), names(c_str(b, "b")?), names(c_str(c, "c")?));
        *out_ref(out, "out")? = conditional_mi(j, &a, &b, &c)?;
        Ok(())
    })
}

/// `I(a; b; c) = I(a; c) - I(a; c | b)` in nats; may be negative.
///
/// # Safety
/// `joint` must be a live handle, the sets NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn si_interaction_info(
    joint: *const SiJoint,
    a: *const c_char,
    b: *const c_char,
    c: *const c_char,
    out: *mut f64,
) -> SiStatus {
    guard(|| {
        let j = &non_null(joint, "joint")?.inner;
        let (a, b, c) = (names(c_str(a, "a")?), names(c_str(b, "b")?), names(c_str(c, "c")?));
        *out_ref(out, "out")? = interaction_info(j, &a, &b, &c)?;
        Ok(())
    })
}

/// `0.5 ln(1 + w^2 / s^2)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_gaussian_linear_mi(weight: f64, noise_std: f64, out: *mut f64) -> SiStatus {
    guard(|| {
        *out_ref(out, "out")? = gaussian_linear_mi(weight, noise_std)?;
        Ok(())
    })
}

fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Tensor<f64>, Failure> {
    let len = rows.checked_mul(cols).ok_or_else(|| invalid(format!("{what} is too large")))?;
    Ok(Tensor::new(vec![rows, cols], slice(p, len, what)?.to_vec())?)
}

fn finite(v: f64, what: &str) -> Result<f64, Failure> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Failure(SiStatus::Numeric, format!("{what} is not finite")))
    }
}

/// NT-Xent loss of two row-major `n x dim` embedding batches.
///
/// # Safety
/// `z1` and `z2` must hold `n * dim` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_nt_xent(
    z1: *const f64,
    z2: *const f64,
    n: usize,
    dim: usize,
    tau: f64,
    out: *mut f64,
) -> SiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(matrix(z1, n, dim, "z1")?);
        let b = tape.constant(matrix(z2, n, dim, "z2")?);
        let l = nt_xent(&mut tape, a, b, tau)?;
        *out = finite(tape.scalar_value(l)?, "loss")?;
        Ok(())
    })
}

/// KL from `N(mu, exp(logvar))` to `N(0, I)`, summed over dims and averaged
/// over the `n` rows.
///
/// # Safety
/// `mu` and `logvar` must hold `n * dim` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_gaussian_kl(
    mu: *const f64,
    logvar: *const f64,
    n: usize,
    dim: usize,
    out: *mut f64,
) -> SiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut tape = Tape::<f64>::new();
        let m = tape.constant(matrix(mu, n, dim, "mu")?);
        let lv = tape.constant(matrix(logvar, n, dim, "logvar")?);
        let kl = gaussian_kl(&mut tape, m, lv)?;
        *out = finite(tape.scalar_value(kl)?, "kl")?;
        Ok(())
    })
}

/// `l_cl + sum(lambda_i * part_i)` for `parts = [l_cl, l_kl_1, l_kl_2, l_re_1,
/// l_re_2]` and `lambdas = [lambda1, lambda2, lambda3, lambda4]`.
///
/// # Safety
/// `parts` must hold 5 values, `lambdas` 4; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_superinfo_total(parts: *const f64, lambdas: *const f64, out: *mut f64) -> SiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let p = slice(parts, 5, "parts")?;
        let l = slice(lambdas, 4, "lambdas")?;
        let w = LossWeights {
            lambda1: l[0],
            lambda2: l[1],
            lambda3: l[2],
            lambda4: l[3],
            ..Default::default()
        };
        w.validate().map_err(|e| invalid(e.to_string()))?;
        let parts = LossParts {
            l_cl: p[0],
            l_kl_1: p[1],
            l_kl_2: p[2],
            l_re_1: p[3],
            l_re_2: p[4],
        };
        *out = superinfo_total(parts, &w).l_total;
        Ok(())
    })
}

/// Runs the identity suites; `all_passed` receives 1 or 0.
///
/// # Safety
/// `all_passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_run_mi_checks(trials: usize, seed: u64, all_passed: *mut c_int) -> SiStatus {
    guard(|| {
        let out = out_ref(all_passed, "all_passed")?;
        if trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        *out = c_int::from(run_mi_checks(trials, seed)?.all_passed());
        Ok(())
    })
}

/// Loads a dataset container file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_dataset_load(path: *const c_char, out: *mut *mut SiDataset) -> SiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let c = load_container(Path::new(c_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(SiDataset { inner: c }));
        Ok(())
    })
}

/// Releases a dataset. NULL is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn si_dataset_free(dataset: *mut SiDataset) {
    if !dataset.is_null() {
        // SAFETY: allocated by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Sample count, flattened sample width, and whether labels are present.
///
/// # Safety
/// `dataset` must be a live handle; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn si_dataset_shape(
    dataset: *const SiDataset,
    n: *mut usize,
    dim: *mut usize,
    has_labels: *mut c_int,
) -> SiStatus {
    guard(|| {
        let d = &non_null(dataset, "dataset")?.inner;
        *out_ref(n, "n")? = d.len();
        *out_ref(dim, "dim")? = d.dim();
        *out_ref(has_labels, "has_labels")? = c_int::from(d.labels.is_some());
        Ok(())
    })
}

/// Copies the row-major samples into `out`, which must hold exactly
/// `n * dim` floats.
///
/// # Safety
/// `dataset` must be a live handle; `out` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn si_dataset_samples(dataset: *const SiDataset, out: *mut f32, len: usize) -> SiStatus {
    guard(|| {
        let d = &non_null(dataset, "dataset")?.inner;
        let data = d.samples.data();
        if len != data.len() {
            return Err(invalid(format!("buffer holds {len} floats, dataset has {}", data.len())));
        }
        slice_mut(out, len, "out")?.copy_from_slice(data);
        Ok(())
    })
}

/// Copies the labels into `out`, which must hold exactly `n` values.
///
/// # Safety
/// `dataset` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn si_dataset_labels(dataset: *const SiDataset, out: *mut u32, len: usize) -> SiStatus {
    guard(|| {
        let d = &non_null(dataset, "dataset")?.inner;
        let labels = d.labels.as_ref().ok_or_else(|| invalid("dataset has no labels"))?;
        if len != labels.len() {
            return Err(invalid(format!("buffer holds {len} labels, dataset has {}", labels.len())));
        }
        slice_mut(out, len, "out")?.copy_from_slice(labels);
        Ok(())
    })
}
