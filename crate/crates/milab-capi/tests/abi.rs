//! Exercises the C ABI exactly as a foreign caller would: through the
//! exported extern "C" functions and raw pointers.

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use milab::model::{Composition, MilConfig, MilModel, Pooling};
use milab_capi::*;

fn checkpoint(composition: Composition) -> (tempfile::TempDir, PathBuf, MilModel) {
    let model = MilModel::init(
        MilConfig {
            input_dim: 4,
            feature_dim: 6,
            attention_hidden: 3,
            predictor_hidden: 5,
            num_classes: 3,
            pooling: Pooling::Attention,
            composition,
            self_attention_heads: 1,
        },
        11,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.milab");
    milab::checkpoint::save(&model, &path).unwrap();
    (dir, path, model)
}

fn load(path: &std::path::Path) -> *mut MilabModel {
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut MilabModel = ptr::null_mut();
    let status = unsafe { milab_model_load(c_path.as_ptr(), &mut handle) };
    assert_eq!(status, MilabStatus::Ok, "{}", last_error());
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(milab_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn version_is_exposed() {
    let v = unsafe { CStr::from_ptr(milab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn load_forward_contributions_roundtrip() {
    let (_dir, path, model) = checkpoint(Composition::Additive);
    let handle = load(&path);

    assert_eq!(unsafe { milab_model_num_classes(handle) }, 3);
    assert_eq!(unsafe { milab_model_input_dim(handle) }, 4);
    assert_eq!(unsafe { milab_model_is_additive(handle) }, 1);

    let bag: Vec<f64> = (0..5 * 4).map(|i| (i as f64) * 0.17 - 1.4).collect();
    let mut logits = [0.0f64; 3];
    let mut attention = [0.0f64; 5];
    let status = unsafe {
        milab_model_forward(
            handle,
            bag.as_ptr(),
            5,
            4,
            logits.as_mut_ptr(),
            attention.as_mut_ptr(),
        )
    };
    assert_eq!(status, MilabStatus::Ok, "{}", last_error());

    // must agree bit-for-bit with the native library path
    let native = model
        .forward(&milab::autodiff::Tensor::new(vec![5, 4], bag.clone()).unwrap())
        .unwrap();
    for (a, b) in logits.iter().zip(native.logits.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let alpha_sum: f64 = attention.iter().sum();
    assert!((alpha_sum - 1.0).abs() < 1e-9);

    // contributions: C×N row-major, row sums equal logits
    let mut contributions = [0.0f64; 3 * 5];
    let status = unsafe {
        milab_model_contributions(handle, bag.as_ptr(), 5, 4, contributions.as_mut_ptr())
    };
    assert_eq!(status, MilabStatus::Ok, "{}", last_error());
    for c in 0..3 {
        let row_sum: f64 = contributions[c * 5..(c + 1) * 5].iter().sum();
        assert!((row_sum - logits[c]).abs() <= 1e-9);
    }

    unsafe { milab_model_free(handle) };
}

#[test]
fn null_and_dimension_errors() {
    let (_dir, path, _) = checkpoint(Composition::Additive);
    let handle = load(&path);

    let mut out: *mut MilabModel = ptr::null_mut();
    assert_eq!(
        unsafe { milab_model_load(ptr::null(), &mut out) },
        MilabStatus::InvalidArgument
    );

    let bag = [0.0f64; 8];
    let mut logits = [0.0f64; 3];
    // wrong feature dimension
    let status = unsafe {
        milab_model_forward(handle, bag.as_ptr(), 2, 4 + 1, logits.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(status, MilabStatus::InvalidArgument);
    assert!(last_error().contains("dim"), "{}", last_error());

    // empty bag
    let status = unsafe {
        milab_model_forward(handle, bag.as_ptr(), 0, 4, logits.as_mut_ptr(), ptr::null_mut())
    };
    assert_eq!(status, MilabStatus::InvalidArgument);

    assert_eq!(unsafe { milab_model_num_classes(ptr::null()) }, -1);
    unsafe { milab_model_free(handle) };
    unsafe { milab_model_free(ptr::null_mut()) };
}

#[test]
fn missing_file_is_io_and_garbage_is_format() {
    let mut out: *mut MilabModel = ptr::null_mut();
    let bad = CString::new("/nonexistent/model.milab").unwrap();
    assert_eq!(
        unsafe { milab_model_load(bad.as_ptr(), &mut out) },
        MilabStatus::Io
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.milab");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { milab_model_load(c_path.as_ptr(), &mut out) },
        MilabStatus::Format
    );
    assert!(last_error().contains("checkpoint"), "{}", last_error());
}

#[test]
fn joint_model_contributions_return_composition_status() {
    let (_dir, path, _) = checkpoint(Composition::Joint);
    let handle = load(&path);
    assert_eq!(unsafe { milab_model_is_additive(handle) }, 0);
    let bag = [0.25f64; 3 * 4];
    let mut contributions = [0.0f64; 3 * 3];
    let status = unsafe {
        milab_model_contributions(handle, bag.as_ptr(), 3, 4, contributions.as_mut_ptr())
    };
    assert_eq!(status, MilabStatus::Composition);
    assert!(last_error().contains("additive"), "{}", last_error());
    unsafe { milab_model_free(handle) };
}

#[test]
fn generated_header_covers_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("milab.h");
    let text = std::fs::read_to_string(&header).expect("cbindgen header present");
    for symbol in [
        "MILAB_H",
        "typedef struct MilabModel MilabModel;",
        "MilabStatus",
        "MILAB_STATUS_COMPOSITION",
        "milab_model_load",
        "milab_model_free",
        "milab_model_forward",
        "milab_model_contributions",
        "milab_last_error",
        "milab_version",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}
