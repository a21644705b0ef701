use std::ffi::{CStr, CString};
use std::ptr;

use retrial_ffi::*;

const SMALL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/configs/small_m1.toml");

fn last_error() -> String {
    unsafe { CStr::from_ptr(retrial_last_error()) }.to_string_lossy().into_owned()
}

fn load(path: &str) -> *mut RetrialConfig {
    let path = CString::new(path).unwrap();
    let mut cfg = ptr::null_mut();
    let st = unsafe { retrial_config_load(path.as_ptr(), &mut cfg) };
    assert_eq!(st, RetrialStatus::Ok, "{}", last_error());
    cfg
}

#[test]
fn solve_round_trip_matches_core() {
    let cfg = load(SMALL);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { retrial_solve(cfg, &mut sol) }, RetrialStatus::Ok, "{}", last_error());
    let mut m = RetrialMeasures::default();
    assert_eq!(unsafe { retrial_solution_measures(sol, &mut m) }, RetrialStatus::Ok);

    let sys = retrial_core::config::ConfigFile::load(SMALL.as_ref()).unwrap().to_system().unwrap();
    let dist = retrial_core::solver::stationary(&sys).unwrap();
    let r = retrial_core::performance::report(&dist, &sys).unwrap();
    assert_eq!(m.l_orb, r.l_orb);
    assert_eq!(m.p_b2, r.p_b2);
    assert_eq!(m.n, dist.n);

    let mut p = 0.0;
    assert_eq!(unsafe { retrial_solution_joint(sol, 0, 0, &mut p) }, RetrialStatus::Ok);
    assert_eq!(p, dist.joint(0, 0).unwrap());
    assert_eq!(unsafe { retrial_solution_joint(sol, 0, 99, &mut p) }, RetrialStatus::Domain);
    assert!(!last_error().is_empty());

    let levels = unsafe { retrial_solution_orbit_marginal(sol, ptr::null_mut(), 0) };
    assert_eq!(levels, m.n + 1);
    let mut buf = vec![0.0; levels];
    unsafe { retrial_solution_orbit_marginal(sol, buf.as_mut_ptr(), buf.len()) };
    assert!((buf.iter().sum::<f64>() - m.captured_mass).abs() < 1e-12);

    unsafe {
        retrial_solution_free(sol);
        retrial_config_free(cfg);
    }
}

#[test]
fn overload_is_reported_as_unstable() {
    let cfg = load(SMALL);
    let name = CString::new("lambda_o").unwrap();
    assert_eq!(unsafe { retrial_config_set(cfg, name.as_ptr(), 50.0) }, RetrialStatus::Ok);
    let (mut rho, mut stable) = (0.0, true);
    assert_eq!(unsafe { retrial_stability(cfg, &mut rho, &mut stable) }, RetrialStatus::Ok);
    assert!(rho > 1.0 && !stable);
    let mut sol = ptr::null_mut();
    assert_eq!(unsafe { retrial_solve(cfg, &mut sol) }, RetrialStatus::Unstable);
    assert!(sol.is_null());
    unsafe { retrial_config_free(cfg) };
}

#[test]
fn bad_arguments() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { retrial_config_parse(ptr::null(), &mut cfg) }, RetrialStatus::NullArgument);
    let junk = CString::new("servers = 3").unwrap();
    assert_eq!(unsafe { retrial_config_parse(junk.as_ptr(), &mut cfg) }, RetrialStatus::InvalidConfig);
    assert!(cfg.is_null());

    let cfg = load(SMALL);
    let name = CString::new("g").unwrap();
    assert_eq!(unsafe { retrial_config_set(cfg, name.as_ptr(), 2.5) }, RetrialStatus::InvalidConfig);
    let name = CString::new("mu").unwrap();
    assert_eq!(unsafe { retrial_config_set(cfg, name.as_ptr(), 1.0) }, RetrialStatus::InvalidConfig);
    assert!(last_error().contains("mu"));
    unsafe {
        retrial_config_free(cfg);
        retrial_config_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(retrial_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/retrial.h")).unwrap();
    for sym in ["retrial_solve", "retrial_config_load", "retrial_last_error", "RetrialMeasures", "RETRIAL_STATUS_UNSTABLE"] {
        assert!(h.contains(sym), "{sym} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include/retrial.h"))
        .status()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(status.success());
}
