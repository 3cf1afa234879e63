use std::ffi::{CStr, CString};
use std::ptr;

use sdtr_ffi::*;

fn last_error() -> String {
    let p = sdtr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulated(n: u32, horizon: u32, seed: u64) -> *mut SdtrCohort {
    let mut cohort = ptr::null_mut();
    let s = unsafe { sdtr_cohort_simulate(1, horizon, n, seed, &mut cohort) };
    assert_eq!(s, SdtrStatus::Ok);
    assert!(!cohort.is_null());
    cohort
}

#[test]
fn simulate_fit_value_round_trip() {
    let cohort = simulated(2000, 10, 7);
    let (mut n, mut t) = (0usize, 0usize);
    assert_eq!(unsafe { sdtr_cohort_shape(cohort, &mut n, &mut t) }, SdtrStatus::Ok);
    assert_eq!((n, t), (2000, 10));

    let mut model = ptr::null_mut();
    let s = unsafe { sdtr_fit(cohort, SdtrMethod::Csql as i32, ptr::null(), &mut model) };
    assert_eq!(s, SdtrStatus::Ok, "{}", last_error());

    let mut len = 0usize;
    let s = unsafe { sdtr_model_decision_coefficients(model, 1, ptr::null_mut(), 0, &mut len) };
    assert_eq!(s, SdtrStatus::BufferTooSmall);
    assert_eq!(len, 6);
    let mut psi = vec![0.0; len];
    let s = unsafe { sdtr_model_decision_coefficients(model, 3, psi.as_mut_ptr(), psi.len(), &mut len) };
    assert_eq!(s, SdtrStatus::Ok);
    assert!(psi.iter().all(|v| v.is_finite()) && psi.iter().any(|v| *v != 0.0));
    let s = unsafe { sdtr_model_decision_coefficients(model, 11, psi.as_mut_ptr(), psi.len(), &mut len) };
    assert_eq!(s, SdtrStatus::InvalidArgument);

    let (mut value, mut se) = (f64::NAN, f64::NAN);
    assert_eq!(unsafe { sdtr_model_value(model, cohort, &mut value, &mut se) }, SdtrStatus::Ok);
    assert!(value.is_finite() && value > 0.0 && se > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sdtr_model_save(model, path.as_ptr()) }, SdtrStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { sdtr_model_load(path.as_ptr(), &mut loaded) }, SdtrStatus::Ok);
    let mut again = vec![0.0; 6];
    unsafe { sdtr_model_decision_coefficients(loaded, 3, again.as_mut_ptr(), 6, &mut len) };
    assert_eq!(again, psi);
    let mut v2 = 0.0;
    assert_eq!(unsafe { sdtr_model_value(loaded, cohort, &mut v2, ptr::null_mut()) }, SdtrStatus::Ok);
    assert_eq!(v2, value);

    unsafe {
        sdtr_model_free(loaded);
        sdtr_model_free(model);
        sdtr_cohort_free(cohort);
    }
}

#[test]
fn csol_and_stagewise_fits() {
    let cohort = simulated(500, 3, 1);
    let mut opts = sdtr_fit_options_default();
    opts.k = 1.0;
    opts.l1 = 0.0;
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { sdtr_fit(cohort, SdtrMethod::Csol as i32, &opts, &mut model) }, SdtrStatus::Ok);
    let mut psi = [0.0; 6];
    let mut len = 0;
    unsafe { sdtr_model_decision_coefficients(model, 2, psi.as_mut_ptr(), 6, &mut len) };
    assert!(psi.iter().all(|v| v.is_finite()));
    unsafe { sdtr_model_free(model) };

    opts.censoring = SdtrCensoring::None as i32;
    let mut cq = ptr::null_mut();
    let s = unsafe { sdtr_fit(cohort, SdtrMethod::Cq as i32, &opts, &mut cq) };
    assert_eq!(s, SdtrStatus::Ok, "{}", last_error());
    let mut first = [0.0; 6];
    let mut second = [0.0; 6];
    unsafe {
        sdtr_model_decision_coefficients(cq, 1, first.as_mut_ptr(), 6, &mut len);
        sdtr_model_decision_coefficients(cq, 2, second.as_mut_ptr(), 6, &mut len);
    }
    assert_ne!(first, second);
    unsafe {
        sdtr_model_free(cq);
        sdtr_cohort_free(cohort);
    }
}

#[test]
fn argument_errors_report_status_and_message() {
    let mut cohort = ptr::null_mut();
    assert_eq!(unsafe { sdtr_cohort_simulate(3, 10, 100, 1, &mut cohort) }, SdtrStatus::InvalidArgument);
    assert!(last_error().contains("scenario"));
    assert!(cohort.is_null());
    assert_eq!(unsafe { sdtr_cohort_simulate(1, 10, 100, 1, ptr::null_mut()) }, SdtrStatus::NullArgument);
    assert!(last_error().contains("out"));

    let cohort = simulated(50, 2, 3);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { sdtr_fit(cohort, 9, ptr::null(), &mut model) }, SdtrStatus::InvalidArgument);
    assert!(last_error().contains("method"));
    let mut opts = sdtr_fit_options_default();
    opts.survival_floor = 0.0;
    assert_eq!(
        unsafe { sdtr_fit(cohort, SdtrMethod::Cq as i32, &opts, &mut model) },
        SdtrStatus::InvalidArgument
    );
    assert!(model.is_null());
    unsafe { sdtr_cohort_free(cohort) };
    unsafe { sdtr_cohort_free(ptr::null_mut()) };
}

#[test]
fn load_reports_data_and_numerical_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,stage,action,reward,at_risk,x\n1,1,1,1.0,1,0.5\n1,2,7,1.0,1,0.5\n").unwrap();
    let path = CString::new(bad.to_str().unwrap()).unwrap();
    let mut cohort = ptr::null_mut();
    assert_eq!(unsafe { sdtr_cohort_load(path.as_ptr(), 0, 0.0, 0, &mut cohort) }, SdtrStatus::Data);
    assert!(last_error().contains("line 3"), "{}", last_error());

    let singular = dir.path().join("singular.csv");
    std::fs::write(
        &singular,
        "id,stage,action,reward,at_risk,x\n1,1,1,1.0,1,1\n2,1,-1,2.0,1,1\n3,1,1,3.0,1,1\n4,1,-1,1.5,1,1\n",
    )
    .unwrap();
    let path = CString::new(singular.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sdtr_cohort_load(path.as_ptr(), 0, 0.0, 0, &mut cohort) }, SdtrStatus::Ok);
    let mut opts = sdtr_fit_options_default();
    opts.censoring = SdtrCensoring::None as i32;
    let mut model = ptr::null_mut();
    let s = unsafe { sdtr_fit(cohort, SdtrMethod::Cq as i32, &opts, &mut model) };
    assert_eq!(s, SdtrStatus::Numerical);
    assert!(last_error().contains("rank deficient"));
    unsafe { sdtr_cohort_free(cohort) };
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(sdtr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sdtr.h")).unwrap();
    for name in [
        "typedef struct SdtrCohort SdtrCohort;",
        "SdtrStatus sdtr_fit(",
        "sdtr_model_value(",
        "SDTR_STATUS_NUMERICAL = 4",
        "SDTR_METHOD_CSOL = 2",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"sdtr.h\"\nint main(void) {\n  SdtrCohort *c = 0;\n  SdtrFitOptions o = sdtr_fit_options_default();\n  (void)o;\n  return sdtr_cohort_simulate(1, 10, 100, 7, &c) == SDTR_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let o = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
