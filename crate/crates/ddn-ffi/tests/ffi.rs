//! Exercises the extern "C" surface from Rust: build real archives with
//! ddn-core, then drive them exclusively through the C entry points and
//! check the answers against direct library calls.

use ddn_core::archive::{save_model, Model};
use ddn_core::ddn::{infer, Backbone, DdnGibbsConfig, DeepDependencyNetwork};
use ddn_core::dn::ConditionalDn;
use ddn_core::mrf::{exact, Feature, PairwiseMrf};
use ddn_core::rng::Rng;
use ddn_ffi::{
    ddn_ddn_marginals, ddn_last_error, ddn_model_dims, ddn_model_free, ddn_model_kind,
    ddn_model_load, ddn_mrf_marginals, ddn_threshold, ddn_version, DdnModel, DdnStatus,
};
use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

fn load(path: &Path) -> *mut DdnModel {
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut DdnModel = ptr::null_mut();
    let status = unsafe { ddn_model_load(cpath.as_ptr(), &mut handle) };
    assert_eq!(status, DdnStatus::Ok, "load failed: {}", last_error());
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ddn_last_error()) }.to_str().unwrap().to_string()
}

fn kind_of(handle: *const DdnModel) -> String {
    unsafe { CStr::from_ptr(ddn_model_kind(handle)) }.to_str().unwrap().to_string()
}

fn small_mrf() -> PairwiseMrf {
    // Two labels coupled to each other and to one evidence node each.
    let features = vec![
        Feature::Unary { node: 0 },
        Feature::Unary { node: 1 },
        Feature::pair(0, 1),
        Feature::pair(0, 2),
        Feature::pair(1, 3),
    ];
    let weights = vec![-0.4, 0.3, 0.8, 1.5, -1.0];
    PairwiseMrf::new(2, 2, features, weights, 5).unwrap()
}

fn small_ddn(seed: u64) -> DeepDependencyNetwork {
    let mut rng = Rng::new(seed);
    let backbone = Backbone::new(2, 3, &[6], &mut rng);
    let head = ConditionalDn::new_lr(3, 3).unwrap();
    DeepDependencyNetwork::new(backbone, head).unwrap()
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(ddn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn load_kind_dims_free_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&Model::Mrf(small_mrf()), &path).unwrap();

    let handle = load(&path);
    assert_eq!(kind_of(handle), "mrf");
    let (mut d, mut m, mut n) = (0usize, 0usize, 0usize);
    let status = unsafe { ddn_model_dims(handle, &mut d, &mut m, &mut n) };
    assert_eq!(status, DdnStatus::Ok);
    // mrf convention: d = m = evidence nodes, n = labels.
    assert_eq!((d, m, n), (2, 2, 2));
    unsafe { ddn_model_free(handle) };
}

#[test]
fn missing_file_reports_io_with_a_message() {
    let cpath = CString::new("/nonexistent/model.json").unwrap();
    let mut handle: *mut DdnModel = ptr::null_mut();
    let status = unsafe { ddn_model_load(cpath.as_ptr(), &mut handle) };
    assert_eq!(status, DdnStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("/nonexistent/model.json"), "{}", last_error());
}

#[test]
fn null_arguments_are_caught() {
    let mut handle: *mut DdnModel = ptr::null_mut();
    assert_eq!(
        unsafe { ddn_model_load(ptr::null(), &mut handle) },
        DdnStatus::NullArgument
    );
    let cpath = CString::new("x").unwrap();
    assert_eq!(
        unsafe { ddn_model_load(cpath.as_ptr(), ptr::null_mut()) },
        DdnStatus::NullArgument
    );
    assert!(unsafe { ddn_model_kind(ptr::null()) }.is_null());
    // Freeing null is a documented no-op.
    unsafe { ddn_model_free(ptr::null_mut()) };
}

#[test]
fn non_utf8_path_is_rejected() {
    let bytes: &[u8] = b"\xff\xfe\0";
    let mut handle: *mut DdnModel = ptr::null_mut();
    let status =
        unsafe { ddn_model_load(bytes.as_ptr() as *const std::ffi::c_char, &mut handle) };
    assert_eq!(status, DdnStatus::InvalidUtf8);
}

#[test]
fn mrf_exact_marginals_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let mrf = small_mrf();
    save_model(&Model::Mrf(mrf.clone()), &path).unwrap();

    let handle = load(&path);
    let evidence = [0.9, 0.2]; // binarizes to [1, 0] at tau_e = 0.5
    let mut out = [0.0f64; 2];
    let status = unsafe {
        ddn_mrf_marginals(handle, evidence.as_ptr(), 2, 0, 0, 0, 0.5, out.as_mut_ptr(), 2)
    };
    assert_eq!(status, DdnStatus::Ok, "{}", last_error());
    let want = exact::label_marginals(&mrf, &[1, 0]);
    for (got, want) in out.iter().zip(&want.p) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    unsafe { ddn_model_free(handle) };
}

#[test]
fn mrf_map_answers_are_bits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&Model::Mrf(small_mrf()), &path).unwrap();

    let handle = load(&path);
    let evidence = [0.9, 0.2];
    let mut out = [0.5f64; 2];
    let status = unsafe {
        ddn_mrf_marginals(handle, evidence.as_ptr(), 2, 3, 0, 0, 0.5, out.as_mut_ptr(), 2)
    };
    assert_eq!(status, DdnStatus::Ok, "{}", last_error());
    assert!(out.iter().all(|&p| p == 0.0 || p == 1.0), "{out:?}");
    unsafe { ddn_model_free(handle) };
}

#[test]
fn mrf_marginals_validate_dimensions_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&Model::Mrf(small_mrf()), &path).unwrap();
    let handle = load(&path);
    let evidence = [0.9, 0.2];
    let mut out = [0.0f64; 2];

    // Wrong evidence width.
    let status = unsafe {
        ddn_mrf_marginals(handle, evidence.as_ptr(), 1, 0, 0, 0, 0.5, out.as_mut_ptr(), 2)
    };
    assert_eq!(status, DdnStatus::Dimension);
    // Wrong output width.
    let status = unsafe {
        ddn_mrf_marginals(handle, evidence.as_ptr(), 2, 0, 0, 0, 0.5, out.as_mut_ptr(), 1)
    };
    assert_eq!(status, DdnStatus::Dimension);
    // Unknown method id.
    let status = unsafe {
        ddn_mrf_marginals(handle, evidence.as_ptr(), 2, 7, 0, 0, 0.5, out.as_mut_ptr(), 2)
    };
    assert_eq!(status, DdnStatus::Validation);
    // Gibbs without samples.
    let status = unsafe {
        ddn_mrf_marginals(handle, evidence.as_ptr(), 2, 1, 0, 0, 0.5, out.as_mut_ptr(), 2)
    };
    assert_eq!(status, DdnStatus::Validation);
    unsafe { ddn_model_free(handle) };
}

#[test]
fn ddn_marginals_match_the_library_and_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ddn.json");
    let ddn = small_ddn(31);
    save_model(&Model::Ddn(ddn.clone()), &path).unwrap();

    let handle = load(&path);
    let features = [0.4, -1.2];
    let mut out_a = [0.0f64; 3];
    let mut out_b = [0.0f64; 3];
    for out in [&mut out_a, &mut out_b] {
        let status = unsafe {
            ddn_ddn_marginals(handle, features.as_ptr(), 2, 200, 0, 7, out.as_mut_ptr(), 3)
        };
        assert_eq!(status, DdnStatus::Ok, "{}", last_error());
    }
    assert_eq!(out_a, out_b, "same seed must reproduce bitwise");

    let cfg = DdnGibbsConfig { n_samples: 200, burn_in: 0, time_budget: None, seed: 7 };
    let want = infer(&ddn, &features, &cfg);
    for (got, want) in out_a.iter().zip(&want.p) {
        assert_eq!(got, want, "FFI and library disagree");
    }
    unsafe { ddn_model_free(handle) };
}

#[test]
fn ddn_marginals_reject_wrong_model_kind() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&Model::Mrf(small_mrf()), &path).unwrap();
    let handle = load(&path);
    let features = [0.0, 0.0];
    let mut out = [0.0f64; 2];
    let status = unsafe {
        ddn_ddn_marginals(handle, features.as_ptr(), 2, 10, 0, 1, out.as_mut_ptr(), 2)
    };
    assert_eq!(status, DdnStatus::Validation);
    assert!(last_error().contains("mrf"), "{}", last_error());
    unsafe { ddn_model_free(handle) };
}

#[test]
fn threshold_is_strict() {
    let probs = [0.2, 0.5, 0.51, 1.0];
    let mut bits = [9u8; 4];
    let status = unsafe { ddn_threshold(probs.as_ptr(), 4, 0.5, bits.as_mut_ptr()) };
    assert_eq!(status, DdnStatus::Ok);
    // 0.5 is NOT above the 0.5 threshold.
    assert_eq!(bits, [0, 0, 1, 1]);

    let status = unsafe { ddn_threshold(probs.as_ptr(), 4, 1.5, bits.as_mut_ptr()) };
    assert_eq!(status, DdnStatus::Validation);
}

#[test]
fn internal_panic_comes_back_as_status_panic() {
    // Exact enumeration refuses more than 20 labels by panicking; the
    // boundary must convert that into a status instead of unwinding.
    let n = 21;
    let features: Vec<Feature> = (0..n).map(|node| Feature::Unary { node }).collect();
    let weights = vec![0.1; n];
    let big = PairwiseMrf::new(n, 0, features, weights, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.json");
    save_model(&Model::Mrf(big), &path).unwrap();

    let handle = load(&path);
    let mut out = vec![0.0f64; n];
    let status = unsafe {
        ddn_mrf_marginals(handle, ptr::NonNull::<f64>::dangling().as_ptr(), 0, 0, 0, 0, 0.5, out.as_mut_ptr(), n)
    };
    assert_eq!(status, DdnStatus::Panic, "{}", last_error());
    assert!(last_error().contains("enumeration"), "{}", last_error());
    unsafe { ddn_model_free(handle) };
}
