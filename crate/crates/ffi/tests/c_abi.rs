use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use ttcm::model::{eval_ct_closed_form, simulate_tacs, Configuration, KineticParams};
use ttcm_ffi::*;

const CONFIG: &str = r#"{"input":{"terms":[{"lambda":1.0,"mu":-0.1},{"lambda":2.0,"mu":-1.5}]},
    "regions":[{"id":"a","K1":0.5,"k2":0.4,"k3":0.2,"k4":0.1}]}"#;

fn config_handle(json: &str) -> *mut TtcmConfig {
    let json = CString::new(json).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { ttcm_config_from_json(json.as_ptr(), &mut cfg) }, TtcmStatus::Ok);
    cfg
}

fn last_error() -> String {
    let p = ttcm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn eval_matches_core() {
    let cfg = config_handle(CONFIG);
    let times = [0.5, 1.0, 5.0, 20.0];
    let mut out = [0.0; 4];
    let status = unsafe { ttcm_eval_ct(cfg, 0, times.as_ptr(), 4, out.as_mut_ptr()) };
    assert_eq!(status, TtcmStatus::Ok);
    let core: Configuration = serde_json::from_str(CONFIG).unwrap();
    for (t, v) in times.iter().zip(out) {
        let expected = eval_ct_closed_form(&core.regions()[0].params, core.input(), *t).unwrap();
        assert_eq!(v, expected);
    }
    assert_eq!(unsafe { ttcm_config_n_regions(cfg) }, 1);
    let status = unsafe { ttcm_eval_ct(cfg, 3, times.as_ptr(), 4, out.as_mut_ptr()) };
    assert_eq!(status, TtcmStatus::InvalidInput);
    assert!(last_error().contains("out of range"));
    unsafe { ttcm_config_free(cfg) };
}

#[test]
fn error_codes_and_messages() {
    let bad = CString::new(r#"{"input":{"terms":[]},"regions":[]}"#).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { ttcm_config_from_json(bad.as_ptr(), &mut cfg) }, TtcmStatus::InvalidInput);
    assert!(cfg.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { ttcm_config_from_json(ptr::null(), &mut cfg) }, TtcmStatus::NullPointer);

    let (mut a1, mut a2) = (0.0, 0.0);
    assert_eq!(unsafe { ttcm_compute_alphas(2.0, 0.0, 2.0, &mut a1, &mut a2) }, TtcmStatus::DegenerateParams);
    assert_eq!(unsafe { ttcm_compute_alphas(3.0, 0.0, 1.0, &mut a1, &mut a2) }, TtcmStatus::Ok);
    assert!(ttcm_last_error_message().is_null());
    assert!((a1 + 1.0).abs() < 1e-15 && (a2 + 3.0).abs() < 1e-15);
}

#[test]
fn simulate_and_read_back() {
    let cfg = config_handle(CONFIG);
    let times = [1.0, 2.0, 4.0];
    let mut tacs = ptr::null_mut();
    assert_eq!(unsafe { ttcm_simulate(cfg, times.as_ptr(), 3, &mut tacs) }, TtcmStatus::Ok);
    let (mut n, mut t) = (0, 0);
    assert_eq!(unsafe { ttcm_tacs_dims(tacs, &mut n, &mut t) }, TtcmStatus::Ok);
    assert_eq!((n, t), (1, 3));
    let mut curve = [0.0; 3];
    assert_eq!(unsafe { ttcm_tacs_curve(tacs, 0, curve.as_mut_ptr(), 3) }, TtcmStatus::Ok);
    let core: Configuration = serde_json::from_str(CONFIG).unwrap();
    let expected = simulate_tacs(&core, &times, None, None).unwrap();
    assert_eq!(&curve[..], expected.curve("a").unwrap());
    assert_eq!(unsafe { ttcm_tacs_curve(tacs, 0, curve.as_mut_ptr(), 2) }, TtcmStatus::InvalidInput);
    unsafe {
        ttcm_tacs_free(tacs);
        ttcm_config_free(cfg);
    }
}

#[test]
fn fit_guard_and_zero_data() {
    let times: Vec<f64> = (1..=9).map(f64::from).collect();
    let zeros = vec![0.0; 3 * times.len()];
    let mut tacs = ptr::null_mut();
    let status = unsafe { ttcm_tacs_new(times.as_ptr(), times.len(), zeros.as_ptr(), 3, &mut tacs) };
    assert_eq!(status, TtcmStatus::Ok);

    let mut fit = ptr::null_mut();
    let opts = CString::new(r#"{"p": 1, "n_starts": 1}"#).unwrap();
    assert_eq!(unsafe { ttcm_fit_joint(tacs, opts.as_ptr(), &mut fit) }, TtcmStatus::InsufficientSamples);
    assert!(fit.is_null());

    let times: Vec<f64> = (1..=10).map(f64::from).collect();
    let zeros = vec![0.0; 3 * times.len()];
    unsafe { ttcm_tacs_free(tacs) };
    let status = unsafe { ttcm_tacs_new(times.as_ptr(), times.len(), zeros.as_ptr(), 3, &mut tacs) };
    assert_eq!(status, TtcmStatus::Ok);
    assert_eq!(unsafe { ttcm_fit_joint(tacs, opts.as_ptr(), &mut fit) }, TtcmStatus::Ok);
    assert!(unsafe { ttcm_fit_converged(fit) });
    assert_eq!(unsafe { ttcm_fit_sse(fit) }, 0.0);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { ttcm_fit_to_json(fit, &mut json) }, TtcmStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_string_lossy().into_owned();
    assert!(text.contains("\"gauge_indeterminate\":true"));
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { ttcm_fit_config(fit, &mut cfg) }, TtcmStatus::Ok);
    assert_eq!(unsafe { ttcm_config_n_regions(cfg) }, 3);
    unsafe {
        ttcm_string_free(json);
        ttcm_config_free(cfg);
        ttcm_fit_free(fit);
        ttcm_tacs_free(tacs);
    }
    assert!(unsafe { ttcm_fit_sse(ptr::null()) }.is_nan());
}

#[test]
fn richness_through_the_boundary() {
    let cfg = config_handle(CONFIG);
    let mut ok = true;
    assert_eq!(unsafe { ttcm_check_richness(cfg, 1e-9, &mut ok) }, TtcmStatus::Ok);
    assert!(!ok);
    unsafe { ttcm_config_free(cfg) };
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(ttcm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/ttcm.h")).unwrap();
    for name in [
        "ttcm_last_error_message",
        "ttcm_config_from_json",
        "ttcm_config_free",
        "ttcm_eval_ct",
        "ttcm_simulate",
        "ttcm_tacs_new",
        "ttcm_fit_joint",
        "ttcm_fit_free",
        "ttcm_check_richness",
        "TTCM_STATUS_NO_CONVERGENCE",
        "typedef struct TtcmConfig TtcmConfig",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

fn staticlib() -> Option<PathBuf> {
    // target/<profile>/deps/<test binary> → target/<profile>/libttcm_ffi.a
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libttcm_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_against_header() {
    let Ok(out) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success());
    let include = crate_dir().join("include");
    let source = crate_dir().join("examples/smoke.c");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&source)
        .status()
        .unwrap();
    assert!(status.success(), "header does not compile as C99");

    let Some(lib) = staticlib() else {
        eprintln!("static library not built; link step skipped");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-I"])
        .arg(&include)
        .arg(&source)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "linking against {} failed", lib.display());
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 5);
    let core: Configuration = serde_json::from_str(CONFIG).unwrap();
    let params: KineticParams = core.regions()[0].params;
    let got: f64 = lines[4].parse().unwrap();
    let expected = eval_ct_closed_form(&params, core.input(), 20.0).unwrap();
    assert_eq!(got, expected);
}
