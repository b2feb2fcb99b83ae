//! Exercises the C ABI through the exported symbols, the way a foreign
//! binding would.

use rbcv_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

const OU_CONFIG: &str = r#"
model = "ou"
algorithm = 1
i_max = 3
m_small = 300
m_large = 3000
trial_size = 10
test_size = 5
small_trial_size = 3
steps = 25
out_dir = "PLACEHOLDER"
box_active = ["theta", "sigma"]
box_lo = [0.5, 0.5]
box_hi = [1.5, 2.0]
"#;

fn write_config(dir: &std::path::Path) -> CString {
    let path = dir.join("exp.toml");
    std::fs::write(&path, OU_CONFIG.replace("PLACEHOLDER", &dir.join("out").to_string_lossy()))
        .unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0i8; 256];
    unsafe {
        rbcv_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn full_pipeline_through_the_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path());

    unsafe {
        let mut exp: *mut RbcvExperiment = ptr::null_mut();
        let status = rbcv_experiment_load(config_path.as_ptr(), &mut exp);
        assert_eq!(status, RbcvStatus::Ok, "{}", last_error());
        assert_eq!(rbcv_experiment_param_dim(exp), 2);

        let out_dir = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
        assert_eq!(rbcv_offline_run(exp, out_dir.as_ptr()), RbcvStatus::Ok, "{}", last_error());

        let manifest = CString::new(dir.path().join("out/basis.json").to_str().unwrap()).unwrap();
        let mut basis: *mut RbcvBasis = ptr::null_mut();
        assert_eq!(rbcv_basis_load(manifest.as_ptr(), &mut basis), RbcvStatus::Ok);
        assert_eq!(rbcv_basis_len(basis), 3);

        assert_eq!(rbcv_online_run(exp, basis, out_dir.as_ptr()), RbcvStatus::Ok, "{}", last_error());
        assert!(dir.path().join("out/results.csv").exists());
        assert!(dir.path().join("out/summary.csv").exists());

        // Raw single query.
        let lambda = [1.0f64, 1.0];
        let mut report = RbcvReport {
            mean: 0.0,
            variance: 0.0,
            half_width: 0.0,
            replicates: 0,
            reduction_factor: 0.0,
        };
        let status = rbcv_single(exp, ptr::null(), lambda.as_ptr(), 2, 0, &mut report);
        assert_eq!(status, RbcvStatus::Ok, "{}", last_error());
        assert_eq!(report.replicates, 300);
        assert!(report.variance > 0.0);
        assert_eq!(report.reduction_factor, 1.0);

        // Controlled single query at a selected parameter: the recycled
        // element cancels it to rounding.
        let mut controlled = report;
        let status = rbcv_single(exp, basis, lambda.as_ptr(), 2, 500, &mut controlled);
        assert_eq!(status, RbcvStatus::Ok, "{}", last_error());
        assert_eq!(controlled.replicates, 500);
        assert!(controlled.variance <= report.variance);

        rbcv_basis_free(basis);
        rbcv_experiment_free(exp);
    }
}

#[test]
fn error_paths_report_codes_and_messages() {
    unsafe {
        let mut exp: *mut RbcvExperiment = ptr::null_mut();
        let missing = CString::new("/nonexistent/rbcv.toml").unwrap();
        assert_eq!(
            rbcv_experiment_load(missing.as_ptr(), &mut exp),
            RbcvStatus::Config
        );
        assert!(last_error().contains("cannot read"));

        assert_eq!(
            rbcv_experiment_load(ptr::null(), &mut exp),
            RbcvStatus::InvalidArgument
        );

        let mut basis: *mut RbcvBasis = ptr::null_mut();
        assert_eq!(
            rbcv_basis_load(missing.as_ptr(), &mut basis),
            RbcvStatus::Io
        );

        // Wrong arity in a single query.
        let dir = tempfile::tempdir().unwrap();
        let config_path = write_config(dir.path());
        assert_eq!(
            rbcv_experiment_load(config_path.as_ptr(), &mut exp),
            RbcvStatus::Ok
        );
        let lambda = [1.0f64];
        let mut report = RbcvReport {
            mean: 0.0,
            variance: 0.0,
            half_width: 0.0,
            replicates: 0,
            reduction_factor: 0.0,
        };
        assert_eq!(
            rbcv_single(exp, ptr::null(), lambda.as_ptr(), 1, 0, &mut report),
            RbcvStatus::InvalidArgument
        );
        assert!(last_error().contains("expects 2 coordinates"));
        rbcv_experiment_free(exp);

        // Frees tolerate null.
        rbcv_experiment_free(ptr::null_mut());
        rbcv_basis_free(ptr::null_mut());
    }
}

#[test]
fn version_and_header_exist() {
    let v = unsafe { CStr::from_ptr(rbcv_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));

    let header = std::fs::read_to_string(write_header_path()).expect("generated header");
    for symbol in [
        "rbcv_experiment_load",
        "rbcv_offline_run",
        "rbcv_online_run",
        "rbcv_single",
        "rbcv_basis_load",
        "rbcv_last_error_message",
        "RbcvStatus",
        "RbcvReport",
    ] {
        assert!(header.contains(symbol), "header misses {symbol}");
    }
}
