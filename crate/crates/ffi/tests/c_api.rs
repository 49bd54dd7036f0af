use std::ffi::{CStr, CString};
use std::ptr;

use spgp_ffi::*;

fn values(n: usize, p: usize, m: usize) -> Vec<f64> {
    (0..n * p * m)
        .map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0)
        .collect()
}

fn targets(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect()
}

fn last_error() -> String {
    let p = spgp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn new_tensor(n: usize, p: usize, m: usize) -> *mut SpgpTensor {
    let v = values(n, p, m);
    let mut t = ptr::null_mut();
    assert_eq!(spgp_tensor_new(n, p, m, v.as_ptr(), &mut t), SpgpStatus::Ok);
    t
}

unsafe fn fit(t: *const SpgpTensor, n: usize, variant: SpgpMaskVariant) -> *mut SpgpModel {
    let y = targets(n);
    let mut opts = spgp_train_options_default();
    opts.variant = variant;
    opts.max_iters = 40;
    opts.restarts = 1;
    opts.seed = 3;
    let mut model = ptr::null_mut();
    let status = spgp_model_fit(t, y.as_ptr(), y.len(), &opts, &mut model);
    assert_eq!(status, SpgpStatus::Ok, "{}", last_error());
    model
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(spgp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn tensor_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("x.spgp").to_str().unwrap()).unwrap();
    unsafe {
        let t = new_tensor(4, 3, 2);
        assert_eq!(spgp_tensor_write(t, path.as_ptr()), SpgpStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(spgp_tensor_read(path.as_ptr(), &mut back), SpgpStatus::Ok);
        let (mut n, mut p, mut m) = (0, 0, 0);
        assert_eq!(spgp_tensor_dims(back, &mut n, &mut p, &mut m), SpgpStatus::Ok);
        assert_eq!((n, p, m), (4, 3, 2));
        spgp_tensor_free(t);
        spgp_tensor_free(back);
    }
}

#[test]
fn fit_predict_save_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.spgm").to_str().unwrap()).unwrap();
    unsafe {
        let t = new_tensor(8, 4, 2);
        let model = fit(t, 8, SpgpMaskVariant::Softmax);

        let mut mean = vec![0.0; 8];
        let mut var = vec![0.0; 8];
        assert_eq!(
            spgp_model_predict(model, t, mean.as_mut_ptr(), var.as_mut_ptr(), 8),
            SpgpStatus::Ok
        );
        assert!(var.iter().all(|v| *v >= 0.0));

        assert_eq!(spgp_model_save(model, path.as_ptr()), SpgpStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(spgp_model_load(path.as_ptr(), &mut loaded), SpgpStatus::Ok);
        let mut mean2 = vec![0.0; 8];
        let mut var2 = vec![0.0; 8];
        assert_eq!(
            spgp_model_predict(loaded, t, mean2.as_mut_ptr(), var2.as_mut_ptr(), 8),
            SpgpStatus::Ok
        );
        assert_eq!(mean, mean2);
        assert_eq!(var, var2);

        let mut hp = [0.0; 3];
        assert_eq!(spgp_model_hypers(loaded, hp.as_mut_ptr()), SpgpStatus::Ok);
        assert!(hp.iter().all(|v| v.is_finite()));

        let mut p = 0;
        assert_eq!(spgp_model_positions(loaded, &mut p), SpgpStatus::Ok);
        let mut w = vec![0.0; p];
        assert_eq!(spgp_model_weights(loaded, w.as_mut_ptr(), p), SpgpStatus::Ok);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut zeros = usize::MAX;
        assert_eq!(spgp_model_sparsity(loaded, 1e-5, &mut zeros), SpgpStatus::Ok);
        assert_eq!(zeros, w.iter().filter(|v| **v < 1e-5).count());

        spgp_model_free(model);
        spgp_model_free(loaded);
        spgp_tensor_free(t);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut t = ptr::null_mut();
        let bad = [1.0, f64::NAN];
        assert_eq!(spgp_tensor_new(1, 1, 2, bad.as_ptr(), &mut t), SpgpStatus::Data);
        assert!(last_error().contains("non-finite"));
        assert!(t.is_null());

        assert_eq!(spgp_tensor_new(1, 1, 1, ptr::null(), &mut t), SpgpStatus::NullPointer);

        let missing = CString::new("/nonexistent/dir/x.spgp").unwrap();
        assert_eq!(spgp_tensor_read(missing.as_ptr(), &mut t), SpgpStatus::Io);

        let train = new_tensor(6, 3, 2);
        let model = fit(train, 6, SpgpMaskVariant::Mean);
        let other = new_tensor(2, 3, 4);
        let mut mean = [0.0; 2];
        let mut var = [0.0; 2];
        assert_eq!(
            spgp_model_predict(model, other, mean.as_mut_ptr(), var.as_mut_ptr(), 2),
            SpgpStatus::Shape
        );
        assert_eq!(
            spgp_model_predict(model, train, mean.as_mut_ptr(), var.as_mut_ptr(), 2),
            SpgpStatus::InvalidArgument
        );
        spgp_model_free(model);
        spgp_tensor_free(train);
        spgp_tensor_free(other);

        // Success clears the previous message.
        let ok = new_tensor(1, 1, 1);
        assert!(spgp_last_error().is_null());
        spgp_tensor_free(ok);
    }
}

#[test]
fn corrupted_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.spgm");
    let path = CString::new(file.to_str().unwrap()).unwrap();
    unsafe {
        let t = new_tensor(5, 2, 2);
        let model = fit(t, 5, SpgpMaskVariant::Prior);
        assert_eq!(spgp_model_save(model, path.as_ptr()), SpgpStatus::Ok);
        let mut bytes = std::fs::read(&file).unwrap();
        let i = bytes.len() - 12;
        bytes[i] ^= 1;
        std::fs::write(&file, bytes).unwrap();
        let mut loaded = ptr::null_mut();
        assert_eq!(spgp_model_load(path.as_ptr(), &mut loaded), SpgpStatus::Checksum);
        assert!(loaded.is_null());
        spgp_model_free(model);
        spgp_tensor_free(t);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/spgp.h")).unwrap();
    for name in [
        "spgp_tensor_new",
        "spgp_model_fit",
        "spgp_model_predict",
        "spgp_last_error",
        "SPGP_STATUS_OK",
        "typedef struct SpgpModel SpgpModel",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
