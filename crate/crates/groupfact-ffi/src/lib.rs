//! C ABI for the groupfact library.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free` function. Every fallible call returns a [`GfStatus`];
//! on failure a thread-local message is readable via [`gf_last_error`].
//! Matrices cross the boundary as dense row-major `double` buffers with the
//! feature dimension as rows. No function panics across the boundary.

use groupfact::classify::{self, DecisionRule};
use groupfact::error::Error;
use groupfact::inference::{self, FitOptions, Posterior};
use groupfact::model::{GroupedDataset, Hyperparams};
use ndarray::Array2;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result of an FFI call. Values match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    /// Null handle, invalid UTF-8, or an internal panic.
    Usage = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
}

/// Decision rule for `gf_predict`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfRule {
    NearestBasis = 0,
    FarthestBasis = 1,
    ScaledNearestBasis = 2,
}

impl From<GfRule> for DecisionRule {
    fn from(r: GfRule) -> Self {
        match r {
            GfRule::NearestBasis => DecisionRule::NearestBasis,
            GfRule::FarthestBasis => DecisionRule::FarthestBasis,
            GfRule::ScaledNearestBasis => DecisionRule::ScaledNearestBasis,
        }
    }
}

/// Model and solver settings; mirror the library defaults when zeroed via
/// `gf_params_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GfFitParams {
    pub a: f64,
    pub b: f64,
    /// Activation prior shared by all classes (the C ABI does not expose
    /// per-class values).
    pub c: f64,
    pub num_classes: usize,
    pub num_individual: usize,
    pub max_iters: usize,
    pub min_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

/// Opaque multi-subject dataset handle.
pub struct GfDataset {
    inner: GroupedDataset,
    complete: bool,
}

/// Opaque posterior handle.
pub struct GfPosterior {
    inner: Posterior,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> GfStatus {
    match err.exit_code() {
        2 => GfStatus::Config,
        3 => GfStatus::Data,
        4 => GfStatus::Numeric,
        _ => GfStatus::Usage,
    }
}

fn fail(err: Error) -> GfStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn guard<F: FnOnce() -> GfStatus>(f: F) -> GfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            GfStatus::Usage
        }
    }
}

/// Copies the most recent error message for this thread into `buf`
/// (NUL-terminated, truncated to `cap`). Returns the full message length.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn gf_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Fills `params` with the library defaults (a = b = c = 0.1, K = 3, J = 1,
/// 500 sweeps, tolerance 1e-6).
///
/// # Safety
/// `params` must point to a writable `GfFitParams`.
#[no_mangle]
pub unsafe extern "C" fn gf_params_default(params: *mut GfFitParams) {
    if params.is_null() {
        return;
    }
    let h = Hyperparams::default();
    let o = FitOptions::default();
    *params = GfFitParams {
        a: h.a,
        b: h.b,
        c: h.c[0],
        num_classes: h.k,
        num_individual: h.j,
        max_iters: o.max_iters,
        min_iters: o.min_iters,
        rel_tol: o.rel_tol,
        seed: o.seed,
    };
}

/// Creates an empty dataset; add subjects with `gf_dataset_add_subject`.
#[no_mangle]
pub extern "C" fn gf_dataset_new() -> *mut GfDataset {
    Box::into_raw(Box::new(GfDataset {
        inner: GroupedDataset { features: Vec::new(), labels: Some(Vec::new()) },
        complete: false,
    }))
}

/// Appends one subject.
///
/// `features` is row-major `num_features x num_frames` (frame index varies
/// fastest); `labels` holds `num_frames` class ids in `1..=K`.
///
/// # Safety
/// `dataset` must come from `gf_dataset_new` and not be freed; `features`
/// must hold `num_features * num_frames` doubles; `labels` must hold
/// `num_frames` entries.
#[no_mangle]
pub unsafe extern "C" fn gf_dataset_add_subject(
    dataset: *mut GfDataset,
    features: *const f64,
    num_features: usize,
    num_frames: usize,
    labels: *const u32,
) -> GfStatus {
    guard(|| {
        let Some(ds) = dataset.as_mut() else {
            set_error("null dataset handle");
            return GfStatus::Usage;
        };
        if features.is_null() || labels.is_null() {
            set_error("null buffer");
            return GfStatus::Usage;
        }
        if num_features == 0 || num_frames == 0 {
            set_error("empty subject");
            return GfStatus::Data;
        }
        let flat = std::slice::from_raw_parts(features, num_features * num_frames);
        let x = Array2::from_shape_fn((num_features, num_frames), |(m, n)| flat[m * num_frames + n]);
        let y: Vec<usize> =
            std::slice::from_raw_parts(labels, num_frames).iter().map(|&v| v as usize).collect();
        ds.inner.features.push(x);
        ds.inner.labels.as_mut().unwrap().push(y);
        match ds.inner.validate(None) {
            Ok(()) => {
                ds.complete = true;
                GfStatus::Ok
            }
            Err(e) => {
                ds.inner.features.pop();
                ds.inner.labels.as_mut().unwrap().pop();
                fail(e)
            }
        }
    })
}

/// Draws a synthetic dataset from the generative model; labels cycle
/// through `1..=num_classes`.
#[no_mangle]
pub extern "C" fn gf_dataset_sample(
    params: GfFitParams,
    num_subjects: usize,
    num_features: usize,
    num_frames: usize,
    seed: u64,
) -> *mut GfDataset {
    let run = || -> Result<GfDataset, Error> {
        let h = hyperparams_of(&params)?;
        let labels: Vec<Vec<usize>> = (0..num_subjects)
            .map(|_| (0..num_frames).map(|n| n % h.k + 1).collect())
            .collect();
        let (ds, _) = groupfact::model::sample_dataset(&h, &labels, num_features, seed)?;
        Ok(GfDataset { inner: ds, complete: true })
    };
    match catch_unwind(run) {
        Ok(Ok(ds)) => Box::into_raw(Box::new(ds)),
        Ok(Err(e)) => {
            fail(e);
            ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

/// Releases a dataset handle. Null is a no-op.
///
/// # Safety
/// `dataset` must be a live handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn gf_dataset_free(dataset: *mut GfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

fn hyperparams_of(p: &GfFitParams) -> Result<Hyperparams, Error> {
    let h = Hyperparams {
        a: p.a,
        b: p.b,
        c: vec![p.c; p.num_classes],
        k: p.num_classes,
        j: p.num_individual,
    };
    h.validate()?;
    Ok(h)
}

fn fit_options_of(p: &GfFitParams) -> Result<FitOptions, Error> {
    let o = FitOptions {
        max_iters: p.max_iters,
        min_iters: p.min_iters,
        rel_tol: p.rel_tol,
        seed: p.seed,
        track_elbo_every: 1,
    };
    o.validate()?;
    Ok(o)
}

/// Runs variational inference; returns a posterior handle or null.
///
/// # Safety
/// `dataset` must be a live handle with at least one subject.
#[no_mangle]
pub unsafe extern "C" fn gf_fit(dataset: *const GfDataset, params: GfFitParams) -> *mut GfPosterior {
    let run = AssertUnwindSafe(|| -> Result<Posterior, Error> {
        let ds = dataset
            .as_ref()
            .filter(|d| d.complete)
            .ok_or_else(|| Error::Config("null or empty dataset handle".into()))?;
        let h = hyperparams_of(&params)?;
        let opts = fit_options_of(&params)?;
        Ok(inference::fit(&ds.inner, &h, &opts)?.posterior)
    });
    match catch_unwind(run) {
        Ok(Ok(post)) => Box::into_raw(Box::new(GfPosterior { inner: post })),
        Ok(Err(e)) => {
            fail(e);
            ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

/// Releases a posterior handle. Null is a no-op.
///
/// # Safety
/// `posterior` must be a live handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn gf_posterior_free(posterior: *mut GfPosterior) {
    if !posterior.is_null() {
        drop(Box::from_raw(posterior));
    }
}

/// Number of features (M) of a posterior; 0 for null.
///
/// # Safety
/// `posterior` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gf_posterior_num_features(posterior: *const GfPosterior) -> usize {
    posterior.as_ref().map_or(0, |p| p.inner.num_features())
}

/// Number of classes (K) of a posterior; 0 for null.
///
/// # Safety
/// `posterior` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gf_posterior_num_classes(posterior: *const GfPosterior) -> usize {
    posterior.as_ref().map_or(0, |p| p.inner.num_classes())
}

/// Copies the posterior-mean common basis E[A_C] into `out`, row-major
/// `num_features x num_classes`.
///
/// # Safety
/// `out` must hold `num_features * num_classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn gf_posterior_common_basis(
    posterior: *const GfPosterior,
    out: *mut f64,
) -> GfStatus {
    guard(|| {
        let Some(p) = posterior.as_ref() else {
            set_error("null posterior handle");
            return GfStatus::Usage;
        };
        if out.is_null() {
            set_error("null output buffer");
            return GfStatus::Usage;
        }
        let basis = p.inner.mean_common_basis();
        let k = basis.ncols();
        for ((m, kk), &v) in basis.indexed_iter() {
            *out.add(m * k + kk) = v;
        }
        GfStatus::Ok
    })
}

/// Classifies frames against a posterior's common basis.
///
/// `features` is row-major `num_features x num_frames`; `out_labels`
/// receives `num_frames` class ids in `1..=K`.
///
/// # Safety
/// Buffers must match the documented sizes; `posterior` must be live.
#[no_mangle]
pub unsafe extern "C" fn gf_predict(
    posterior: *const GfPosterior,
    features: *const f64,
    num_features: usize,
    num_frames: usize,
    rule: GfRule,
    out_labels: *mut u32,
) -> GfStatus {
    guard(|| {
        let Some(p) = posterior.as_ref() else {
            set_error("null posterior handle");
            return GfStatus::Usage;
        };
        if features.is_null() || out_labels.is_null() {
            set_error("null buffer");
            return GfStatus::Usage;
        }
        let flat = std::slice::from_raw_parts(features, num_features * num_frames);
        let x = Array2::from_shape_fn((num_features, num_frames), |(m, n)| flat[m * num_frames + n]);
        let ds = GroupedDataset { features: vec![x], labels: None };
        match classify::predict(&ds, &p.inner, rule.into()) {
            Ok(pred) => {
                for (n, &lab) in pred.labels[0].iter().enumerate() {
                    *out_labels.add(n) = lab as u32;
                }
                GfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

unsafe fn path_of<'a>(path: *const c_char) -> Result<&'a str, Error> {
    if path.is_null() {
        return Err(Error::Config("null path".into()));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Error::Config("path is not valid UTF-8".into()))
}

/// Writes a posterior to the flat CSV format.
///
/// # Safety
/// `posterior` must be live; `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn gf_posterior_save_csv(
    posterior: *const GfPosterior,
    path: *const c_char,
) -> GfStatus {
    guard(|| {
        let Some(p) = posterior.as_ref() else {
            set_error("null posterior handle");
            return GfStatus::Usage;
        };
        let run = || -> Result<(), Error> {
            let path = path_of(path)?;
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            p.inner.save_csv(BufWriter::new(file))
        };
        match run() {
            Ok(()) => GfStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Reads a posterior from the flat CSV format; returns null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn gf_posterior_load_csv(path: *const c_char) -> *mut GfPosterior {
    let run = AssertUnwindSafe(|| -> Result<Posterior, Error> {
        let path = path_of(path)?;
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Posterior::load_csv(BufReader::new(file))
    });
    match catch_unwind(run) {
        Ok(Ok(post)) => Box::into_raw(Box::new(GfPosterior { inner: post })),
        Ok(Err(e)) => {
            fail(e);
            ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn default_params() -> GfFitParams {
        let mut p = GfFitParams {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            num_classes: 0,
            num_individual: 0,
            max_iters: 0,
            min_iters: 0,
            rel_tol: 0.0,
            seed: 0,
        };
        unsafe { gf_params_default(&mut p) };
        p
    }

    #[test]
    fn defaults_populated() {
        let p = default_params();
        assert_eq!(p.a, 0.1);
        assert_eq!(p.num_classes, 3);
        assert_eq!(p.num_individual, 1);
        assert_eq!(p.max_iters, 500);
    }

    #[test]
    fn sample_fit_predict_roundtrip() {
        let mut p = default_params();
        p.num_classes = 2;
        p.max_iters = 10;
        p.min_iters = 2;
        let ds = gf_dataset_sample(p, 2, 4, 20, 7);
        assert!(!ds.is_null());
        unsafe {
            let post = gf_fit(ds, p);
            assert!(!post.is_null(), "fit failed: {}", last_error());
            assert_eq!(gf_posterior_num_features(post), 4);
            assert_eq!(gf_posterior_num_classes(post), 2);

            let mut basis = vec![0.0f64; 4 * 2];
            assert_eq!(gf_posterior_common_basis(post, basis.as_mut_ptr()), GfStatus::Ok);
            assert!(basis.iter().all(|&v| v > 0.0 && v.is_finite()));

            // classify the basis columns themselves: each must match its class
            let mut frames = vec![0.0f64; 4 * 2];
            for m in 0..4 {
                for n in 0..2 {
                    frames[m * 2 + n] = basis[m * 2 + n];
                }
            }
            let mut labels = [0u32; 2];
            assert_eq!(
                gf_predict(post, frames.as_ptr(), 4, 2, GfRule::NearestBasis, labels.as_mut_ptr()),
                GfStatus::Ok
            );
            assert_eq!(labels, [1, 2]);
            gf_posterior_free(post);
            gf_dataset_free(ds);
        }
    }

    #[test]
    fn manual_dataset_and_validation() {
        let ds = gf_dataset_new();
        let feats = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3 features x 2 frames
        let labels = [1u32, 2];
        unsafe {
            assert_eq!(gf_dataset_add_subject(ds, feats.as_ptr(), 3, 2, labels.as_ptr()), GfStatus::Ok);
            // second subject with a different feature count is rejected
            assert_eq!(
                gf_dataset_add_subject(ds, feats.as_ptr(), 2, 3, labels.as_ptr()),
                GfStatus::Data
            );
            assert!(last_error().contains("features"));
            let neg = [-1.0f64, 2.0];
            assert_eq!(
                gf_dataset_add_subject(ds, neg.as_ptr(), 1, 2, labels.as_ptr()),
                GfStatus::Data
            );
            gf_dataset_free(ds);
        }
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = default_params();
        p.a = -1.0;
        let ds = gf_dataset_sample(p, 1, 2, 4, 0);
        assert!(ds.is_null());
        assert_eq!(unsafe { gf_last_error(std::ptr::null_mut(), 0) }, last_error().len());
        assert!(last_error().contains("positive"));
    }

    #[test]
    fn null_handles_are_safe() {
        unsafe {
            gf_dataset_free(std::ptr::null_mut());
            gf_posterior_free(std::ptr::null_mut());
            assert_eq!(gf_posterior_num_features(std::ptr::null()), 0);
            let mut out = [0.0f64];
            assert_eq!(gf_posterior_common_basis(std::ptr::null(), out.as_mut_ptr()), GfStatus::Usage);
            let p = default_params();
            assert!(gf_fit(std::ptr::null(), p).is_null());
            assert_eq!(status_of(&Error::Config(String::new())), GfStatus::Config);
        }
    }

    #[test]
    fn posterior_csv_through_files() {
        let mut p = default_params();
        p.num_classes = 2;
        p.max_iters = 5;
        p.min_iters = 1;
        let ds = gf_dataset_sample(p, 1, 3, 12, 1);
        let dir = std::env::temp_dir().join("groupfact_ffi_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("posterior.csv");
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        unsafe {
            let post = gf_fit(ds, p);
            assert!(!post.is_null());
            assert_eq!(gf_posterior_save_csv(post, cpath.as_ptr()), GfStatus::Ok);
            let loaded = gf_posterior_load_csv(cpath.as_ptr());
            assert!(!loaded.is_null(), "{}", last_error());
            let (mut b1, mut b2) = (vec![0.0; 6], vec![0.0; 6]);
            gf_posterior_common_basis(post, b1.as_mut_ptr());
            gf_posterior_common_basis(loaded, b2.as_mut_ptr());
            assert_eq!(b1, b2, "basis must round-trip bitwise through CSV");
            gf_posterior_free(post);
            gf_posterior_free(loaded);
            gf_dataset_free(ds);
            let missing = CString::new(dir.join("absent.csv").to_str().unwrap()).unwrap();
            assert!(gf_posterior_load_csv(missing.as_ptr()).is_null());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    fn last_error() -> String {
        let mut buf = vec![0i8; 512];
        unsafe { gf_last_error(buf.as_mut_ptr() as *mut c_char, buf.len()) };
        let bytes: Vec<u8> = buf.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
        String::from_utf8(bytes).unwrap()
    }
}
