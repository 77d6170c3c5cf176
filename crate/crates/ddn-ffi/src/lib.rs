//! C ABI over the model archives and inference entry points of `ddn-core`.
//!
//! The surface is deliberately small: load an archive into an opaque
//! handle, ask what it is, run inference into caller-owned buffers, free
//! the handle. Every function returns a [`DdnStatus`]; on failure a
//! human-readable message is stored per thread and readable through
//! [`ddn_last_error`] until the next failing call on the same thread.
//! Every entry point catches panics at the boundary (status
//! [`DdnStatus::Panic`]), so no unwind ever crosses into C.
//!
//! The matching header lives at `include/ddn.h`; it is maintained by hand
//! and must stay in sync with the signatures here.
//!
//! Ownership rules: handles returned through `ddn_model_load` belong to
//! the caller and must be released exactly once with `ddn_model_free`;
//! strings returned by `ddn_version`, `ddn_model_kind`, and
//! `ddn_last_error` are borrowed and must not be freed.

use ddn_core::archive::{load_model, Model};
use ddn_core::ddn::{infer, DdnGibbsConfig};
use ddn_core::mrf::predict::{drf_predict, DrfConfig, DrfMethod};
use ddn_core::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result of every fallible call. `Ok` is zero; everything else leaves a
/// message in [`ddn_last_error`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdnStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Dimension = 6,
    /// Archive format version not understood by this build.
    Version = 7,
    Divergence = 8,
    /// A panic was caught at the FFI boundary.
    Panic = 9,
}

/// Opaque model handle; constructed by [`ddn_model_load`], released by
/// [`ddn_model_free`].
pub struct DdnModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    // Interior NULs cannot come from our error formatting, but never panic
    // inside the error path: replace them if they somehow appear.
    let sanitized = msg.replace('\0', "?");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> DdnStatus {
    match err {
        Error::Io { .. } => DdnStatus::Io,
        Error::Parse { .. } => DdnStatus::Parse,
        Error::Validation(_) => DdnStatus::Validation,
        Error::Dimension(_) => DdnStatus::Dimension,
        Error::Version { .. } => DdnStatus::Version,
        Error::Divergence(_) => DdnStatus::Divergence,
    }
}

fn fail(status: DdnStatus, msg: &str) -> DdnStatus {
    set_last_error(msg);
    status
}

fn fail_err(err: &Error) -> DdnStatus {
    fail(status_of(err), &err.to_string())
}

/// Runs `f` with a panic net. `AssertUnwindSafe` is sound here because a
/// failing call transfers nothing back to the caller: outputs are only
/// considered written when the status is `Ok`, and the handle holds no
/// interior mutability that a panic could tear.
fn guarded<F: FnOnce() -> DdnStatus>(f: F) -> DdnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = if let Some(s) = payload.downcast_ref::<&str>() {
                s.to_string()
            } else if let Some(s) = payload.downcast_ref::<String>() {
                s.clone()
            } else {
                "panic of unknown type".to_string()
            };
            fail(DdnStatus::Panic, &format!("panic at the C boundary: {msg}"))
        }
    }
}

/// The crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread (empty string if
/// none). Borrowed; valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ddn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a model archive. On `Ok`, `*out` owns the handle.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to a writable
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn ddn_model_load(
    path: *const c_char,
    out: *mut *mut DdnModel,
) -> DdnStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(DdnStatus::NullArgument, "ddn_model_load: null argument");
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(DdnStatus::InvalidUtf8, "ddn_model_load: path is not UTF-8"),
        };
        match load_model(Path::new(path)) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(DdnModel { model })) };
                DdnStatus::Ok
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// Releases a handle from [`ddn_model_load`]. Null is a no-op.
///
/// # Safety
/// `model` must be a pointer returned by `ddn_model_load` that has not
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn ddn_model_free(model: *mut DdnModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// The archive kind as a static string: "mrf", "dn_lr", "dn_mlp",
/// "backbone", or "ddn". Null input gives a null pointer.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ddn_model_kind(model: *const DdnModel) -> *const c_char {
    if model.is_null() {
        return std::ptr::null();
    }
    let kind = unsafe { &(*model).model }.kind();
    match kind {
        "mrf" => c"mrf".as_ptr(),
        "dn_lr" => c"dn_lr".as_ptr(),
        "dn_mlp" => c"dn_mlp".as_ptr(),
        "backbone" => c"backbone".as_ptr(),
        _ => c"ddn".as_ptr(),
    }
}

/// Writes the archive's `(d, m, n)` dimension triple.
///
/// # Safety
/// `model` must be a live handle; `d`, `m`, `n` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddn_model_dims(
    model: *const DdnModel,
    d: *mut usize,
    m: *mut usize,
    n: *mut usize,
) -> DdnStatus {
    guarded(|| {
        if model.is_null() || d.is_null() || m.is_null() || n.is_null() {
            return fail(DdnStatus::NullArgument, "ddn_model_dims: null argument");
        }
        let dims = unsafe { &(*model).model }.dims();
        unsafe {
            *d = dims.0;
            *m = dims.1;
            *n = dims.2;
        }
        DdnStatus::Ok
    })
}

/// Marginal label probabilities from a `ddn` archive by Gibbs sampling
/// with the mixture estimator. `features` carries `n_features` raw inputs;
/// `out` must hold `out_len == n` doubles.
///
/// # Safety
/// `model` must be a live handle; `features` must point to `n_features`
/// doubles; `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ddn_ddn_marginals(
    model: *const DdnModel,
    features: *const f64,
    n_features: usize,
    n_samples: usize,
    burn_in: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> DdnStatus {
    guarded(|| {
        if model.is_null() || features.is_null() || out.is_null() {
            return fail(DdnStatus::NullArgument, "ddn_ddn_marginals: null argument");
        }
        let ddn = match unsafe { &(*model).model } {
            Model::Ddn(ddn) => ddn,
            other => {
                return fail(
                    DdnStatus::Validation,
                    &format!("ddn_ddn_marginals wants a ddn archive, handle holds {:?}", other.kind()),
                )
            }
        };
        if n_features != ddn.feature_dim() {
            return fail(
                DdnStatus::Dimension,
                &format!("model reads {} features, caller passed {}", ddn.feature_dim(), n_features),
            );
        }
        if out_len != ddn.label_count() {
            return fail(
                DdnStatus::Dimension,
                &format!("model has {} labels, output buffer holds {}", ddn.label_count(), out_len),
            );
        }
        if n_samples == 0 {
            return fail(DdnStatus::Validation, "n_samples must be >= 1");
        }
        let features = unsafe { std::slice::from_raw_parts(features, n_features) };
        let cfg = DdnGibbsConfig { n_samples, burn_in, time_budget: None, seed };
        let est = infer(ddn, features, &cfg);
        unsafe { std::slice::from_raw_parts_mut(out, out_len) }.copy_from_slice(&est.p);
        DdnStatus::Ok
    })
}

/// Marginal label probabilities (or degenerate 0/1 values for MAP) from an
/// `mrf` archive. `evidence` carries `n_evidence` continuous activations,
/// binarized at `tau_e`. `method`: 0 exact, 1 Gibbs, 2 belief propagation,
/// 3 MAP; `n_samples` and `seed` only matter for Gibbs; the other methods
/// run with library defaults.
///
/// # Safety
/// `model` must be a live handle; `evidence` must point to `n_evidence`
/// doubles; `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ddn_mrf_marginals(
    model: *const DdnModel,
    evidence: *const f64,
    n_evidence: usize,
    method: i32,
    n_samples: usize,
    seed: u64,
    tau_e: f64,
    out: *mut f64,
    out_len: usize,
) -> DdnStatus {
    guarded(|| {
        if model.is_null() || evidence.is_null() || out.is_null() {
            return fail(DdnStatus::NullArgument, "ddn_mrf_marginals: null argument");
        }
        let mrf = match unsafe { &(*model).model } {
            Model::Mrf(mrf) => mrf,
            other => {
                return fail(
                    DdnStatus::Validation,
                    &format!("ddn_mrf_marginals wants an mrf archive, handle holds {:?}", other.kind()),
                )
            }
        };
        if n_evidence != mrf.n_evidence() {
            return fail(
                DdnStatus::Dimension,
                &format!("model reads {} evidence values, caller passed {}", mrf.n_evidence(), n_evidence),
            );
        }
        if out_len != mrf.n_labels() {
            return fail(
                DdnStatus::Dimension,
                &format!("model has {} labels, output buffer holds {}", mrf.n_labels(), out_len),
            );
        }
        if !(0.0..=1.0).contains(&tau_e) {
            return fail(DdnStatus::Validation, &format!("tau_e {tau_e} outside [0, 1]"));
        }
        let mut cfg = DrfConfig::default();
        cfg.method = match method {
            0 => DrfMethod::Exact,
            1 => DrfMethod::Gibbs,
            2 => DrfMethod::Bp,
            3 => DrfMethod::Map,
            other => {
                return fail(
                    DdnStatus::Validation,
                    &format!("method {other} not in {{0 exact, 1 gibbs, 2 bp, 3 map}}"),
                )
            }
        };
        cfg.tau_e = tau_e;
        if cfg.method == DrfMethod::Gibbs {
            if n_samples == 0 {
                return fail(DdnStatus::Validation, "n_samples must be >= 1");
            }
            cfg.gibbs.n_samples = n_samples;
        }
        cfg.gibbs.seed = seed;
        cfg.map.seed = seed;
        let evidence = unsafe { std::slice::from_raw_parts(evidence, n_evidence) };
        match drf_predict(mrf, evidence, &cfg) {
            Ok(answer) => {
                let p = answer.probabilities();
                unsafe { std::slice::from_raw_parts_mut(out, out_len) }.copy_from_slice(&p);
                DdnStatus::Ok
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// Thresholds probabilities into label bits: `out[i] = probs[i] > threshold`.
///
/// # Safety
/// `probs` must point to `len` doubles and `out` to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ddn_threshold(
    probs: *const f64,
    len: usize,
    threshold: f64,
    out: *mut u8,
) -> DdnStatus {
    guarded(|| {
        if probs.is_null() || out.is_null() {
            return fail(DdnStatus::NullArgument, "ddn_threshold: null argument");
        }
        if !(0.0..=1.0).contains(&threshold) {
            return fail(DdnStatus::Validation, &format!("threshold {threshold} outside [0, 1]"));
        }
        let probs = unsafe { std::slice::from_raw_parts(probs, len) };
        let out = unsafe { std::slice::from_raw_parts_mut(out, len) };
        for (o, &p) in out.iter_mut().zip(probs) {
            *o = (p > threshold) as u8;
        }
        DdnStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_a_nul_terminated_utf8_string() {
        let v = unsafe { CStr::from_ptr(ddn_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn last_error_starts_empty_and_updates() {
        set_last_error("");
        let empty = unsafe { CStr::from_ptr(ddn_last_error()) };
        assert_eq!(empty.to_bytes(), b"");
        set_last_error("boom");
        let msg = unsafe { CStr::from_ptr(ddn_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "boom");
    }

    #[test]
    fn status_mapping_covers_every_error_variant() {
        assert_eq!(status_of(&Error::Validation("x".into())), DdnStatus::Validation);
        assert_eq!(status_of(&Error::Dimension("x".into())), DdnStatus::Dimension);
        assert_eq!(status_of(&Error::Divergence("x".into())), DdnStatus::Divergence);
        assert_eq!(
            status_of(&Error::Version { found: 9, expected: 1 }),
            DdnStatus::Version
        );
        assert_eq!(
            status_of(&Error::Parse { path: "p".into(), line: 1, msg: "m".into() }),
            DdnStatus::Parse
        );
    }

    #[test]
    fn guarded_turns_panics_into_status() {
        let status = guarded(|| panic!("deliberate test panic"));
        assert_eq!(status, DdnStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ddn_last_error()) };
        assert!(msg.to_str().unwrap().contains("deliberate test panic"));
    }

    #[test]
    fn interior_nul_in_error_is_sanitized() {
        set_last_error("a\0b");
        let msg = unsafe { CStr::from_ptr(ddn_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "a?b");
    }
}
