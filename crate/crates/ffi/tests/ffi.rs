//! Exercise the C ABI exactly as a foreign caller would: status codes,
//! out-pointers, handles, and parity with the core crate.

use std::ffi::{CStr, CString};

use lesionbench::netcore::{save_model, NetworkModel};
use lesionbench::rng::CounterRng;
use lesionbench::saliency::{explain, MethodKind, MethodSpec};
use lesionbench::tensor::Tensor;
use lesionbench_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lb_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(lb_version()) };
    assert!(!v.to_bytes().is_empty());
}

#[test]
fn perlin_matches_core_and_rejects_nulls() {
    let mut buf = vec![0.0f32; 32 * 48];
    let status = unsafe { lb_perlin_field(7, 5, 8, 32, 48, buf.as_mut_ptr()) };
    assert_eq!(status, LbStatus::Ok);
    let core = lesionbench::synthgen::perlin_field(7, (5, 8), (32, 48)).unwrap();
    assert_eq!(buf, core.pixels());

    let status = unsafe { lb_perlin_field(7, 5, 8, 32, 48, std::ptr::null_mut()) };
    assert_eq!(status, LbStatus::NullPointer);
    assert!(last_error().contains("null"));

    // invalid grid surfaces as InvalidArgument
    let status = unsafe { lb_perlin_field(7, 0, 8, 32, 48, buf.as_mut_ptr()) };
    assert_eq!(status, LbStatus::InvalidArgument);
}

#[test]
fn metrics_match_hand_values() {
    let scores = [0.9f32, 0.8, 0.1, 0.7];
    let labels = [1u8, 0, 0, 1];
    let mut auc = 0.0f64;
    let status =
        unsafe { lb_roc_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut auc) };
    assert_eq!(status, LbStatus::Ok);
    assert_eq!(auc, 0.75);

    let mut ap = 0.0f64;
    assert_eq!(
        unsafe { lb_average_precision(scores.as_ptr(), labels.as_ptr(), 4, &mut ap) },
        LbStatus::Ok
    );
    assert!((ap - 5.0 / 6.0).abs() < 1e-12);

    let mut prec = -1.0f64;
    let mut degenerate = false;
    assert_eq!(
        unsafe {
            lb_precision_at_specificity(
                scores.as_ptr(),
                labels.as_ptr(),
                4,
                0.99,
                &mut prec,
                &mut degenerate,
            )
        },
        LbStatus::Ok
    );
    assert!(prec >= 0.0);

    // single-class input violates the protocol
    let one = [1u8, 1, 1, 1];
    let status = unsafe { lb_roc_auc(scores.as_ptr(), one.as_ptr(), 4, &mut auc) };
    assert_eq!(status, LbStatus::Protocol);
}

#[test]
fn model_handles_roundtrip_and_explain_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let model = NetworkModel::conv_classifier((16, 16), &[4], 8, 2, 5).unwrap();
    let path = dir.path().join("checkpoint");
    save_model(&model, &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut handle: *mut LbModel = std::ptr::null_mut();
    assert_eq!(unsafe { lb_model_load(cpath.as_ptr(), &mut handle) }, LbStatus::Ok);
    assert!(!handle.is_null());

    let (mut h, mut w) = (0u32, 0u32);
    assert_eq!(unsafe { lb_model_input_shape(handle, &mut h, &mut w) }, LbStatus::Ok);
    assert_eq!((h, w), (16, 16));

    let mut rng = CounterRng::new(9);
    let pixels: Vec<f32> = (0..256).map(|_| rng.next_f64() as f32).collect();

    let mut class = 0u32;
    assert_eq!(
        unsafe { lb_model_predict(handle, pixels.as_ptr(), 16, 16, &mut class) },
        LbStatus::Ok
    );
    let t = Tensor::from_vec(&[1, 1, 16, 16], pixels.clone()).unwrap();
    assert_eq!(class, model.predict(&t).unwrap()[0] as u32);

    let method = CString::new("lrp_z").unwrap();
    let mut heat = vec![0.0f32; 256];
    assert_eq!(
        unsafe {
            lb_explain(handle, std::ptr::null(), pixels.as_ptr(), 16, 16, method.as_ptr(), 2, heat.as_mut_ptr())
        },
        LbStatus::Ok
    );
    let (_, record) = model.forward(&t).unwrap();
    let core_map =
        explain(&model, &record, &MethodSpec::new(MethodKind::LrpZ), 2, None, "x").unwrap();
    assert_eq!(heat, core_map.relevance);

    // unknown method name
    let bad = CString::new("occlusion").unwrap();
    assert_eq!(
        unsafe {
            lb_explain(handle, std::ptr::null(), pixels.as_ptr(), 16, 16, bad.as_ptr(), 2, heat.as_mut_ptr())
        },
        LbStatus::InvalidArgument
    );
    // pattern methods demand a pattern set
    let pm = CString::new("pattern_net").unwrap();
    assert_eq!(
        unsafe {
            lb_explain(handle, std::ptr::null(), pixels.as_ptr(), 16, 16, pm.as_ptr(), 2, heat.as_mut_ptr())
        },
        LbStatus::Unsupported
    );

    // wrong raster size is rejected before any compute
    assert_eq!(
        unsafe { lb_model_predict(handle, pixels.as_ptr(), 8, 8, &mut class) },
        LbStatus::InvalidArgument
    );

    unsafe { lb_model_free(handle) };

    let mut missing: *mut LbModel = std::ptr::null_mut();
    let nope = CString::new(dir.path().join("nope").to_str().unwrap().to_string()).unwrap();
    assert_eq!(unsafe { lb_model_load(nope.as_ptr(), &mut missing) }, LbStatus::Io);
    assert!(missing.is_null());
}

#[test]
fn generated_header_covers_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("lesionbench.h");
    let text = std::fs::read_to_string(&header).expect("cbindgen header exists");
    for symbol in [
        "LbStatus",
        "LbModel",
        "LbPatterns",
        "lb_version",
        "lb_last_error",
        "lb_perlin_field",
        "lb_roc_auc",
        "lb_average_precision",
        "lb_precision_at_specificity",
        "lb_model_load",
        "lb_model_free",
        "lb_model_predict",
        "lb_patterns_load",
        "lb_patterns_free",
        "lb_explain",
        "lb_run_experiment",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}
