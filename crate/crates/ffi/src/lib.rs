//! C interface to `retrial-core`.
//!
//! Handles are opaque and owned by the caller, who releases them with the matching `_free`
//! function. Every fallible call returns a [`RetrialStatus`]; the message of the most recent
//! failure on the calling thread is available from [`retrial_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use retrial_core::config::{ConfigFile, SweepParam};
use retrial_core::solver::StationaryDistribution;
use retrial_core::{ergodicity, performance, solver, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrialStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidConfig = 2,
    Unstable = 3,
    Convergence = 4,
    Budget = 5,
    Domain = 6,
    Io = 7,
    Panic = 8,
}

/// Model parameters.
pub struct RetrialConfig {
    file: ConfigFile,
}

/// A solved instance together with its performance measures.
pub struct RetrialSolution {
    dist: StationaryDistribution,
    measures: RetrialMeasures,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RetrialMeasures {
    pub l_b: f64,
    pub l_orb: f64,
    pub l_s: f64,
    pub p_b1: f64,
    pub p_bb1: f64,
    pub p_b2: f64,
    pub p_bb2: f64,
    pub e_b: f64,
    pub captured_mass: f64,
    /// Highest orbit level kept.
    pub n: usize,
    pub k0: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> RetrialStatus {
    match e {
        Error::InvalidConfig(_) | Error::Parse(_) | Error::Dimension(_) => RetrialStatus::InvalidConfig,
        Error::Unstable(_) => RetrialStatus::Unstable,
        Error::Convergence(_) | Error::Truncation { .. } | Error::Singular(_) => RetrialStatus::Convergence,
        Error::Budget(_) | Error::TooLarge(_) => RetrialStatus::Budget,
        Error::Domain(_) => RetrialStatus::Domain,
        Error::Io(_) => RetrialStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), RetrialStatus>) -> RetrialStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RetrialStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            RetrialStatus::Panic
        }
    }
}

fn fail(e: Error) -> RetrialStatus {
    set_error(e.to_string());
    status_of(&e)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, RetrialStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(RetrialStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        RetrialStatus::InvalidConfig
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, RetrialStatus> {
    p.as_ref().ok_or_else(|| {
        set_error(format!("{what} is null"));
        RetrialStatus::NullArgument
    })
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, RetrialStatus> {
    p.as_mut().ok_or_else(|| {
        set_error(format!("{what} is null"));
        RetrialStatus::NullArgument
    })
}

/// Message of the last failed call on this thread. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn retrial_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn retrial_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a configuration from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn retrial_config_parse(toml: *const c_char, out: *mut *mut RetrialConfig) -> RetrialStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let out = out_arg(out, "out")?;
        let file = ConfigFile::parse(text).map_err(fail)?;
        file.to_system().map_err(fail)?;
        *out = Box::into_raw(Box::new(RetrialConfig { file }));
        Ok(())
    })
}

/// Load a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn retrial_config_load(path: *const c_char, out: *mut *mut RetrialConfig) -> RetrialStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let file = ConfigFile::load(Path::new(path)).map_err(fail)?;
        file.to_system().map_err(fail)?;
        *out = Box::into_raw(Box::new(RetrialConfig { file }));
        Ok(())
    })
}

/// Set one of `g`, `c`, `lambda_o`, `lambda_h`, `lambda_r`. The handle is left unchanged on error.
///
/// # Safety
/// `cfg` must come from this library and `name` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn retrial_config_set(cfg: *mut RetrialConfig, name: *const c_char, value: f64) -> RetrialStatus {
    guard(|| {
        let cfg = out_arg(cfg, "cfg")?;
        let name = str_arg(name, "name")?;
        let param = match name {
            "g" => SweepParam::G,
            "c" => SweepParam::C,
            "lambda_o" => SweepParam::LambdaO,
            "lambda_h" => SweepParam::LambdaH,
            "lambda_r" => SweepParam::LambdaR,
            other => return Err(fail(Error::InvalidConfig(format!("unknown parameter {other}")))),
        };
        let file = cfg.file.with_param(param, value).map_err(fail)?;
        file.to_system().map_err(fail)?;
        cfg.file = file;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn retrial_config_free(cfg: *mut RetrialConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Load `rho` and whether the solver accepts the instance as stable.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn retrial_stability(cfg: *const RetrialConfig, rho: *mut f64, stable: *mut bool) -> RetrialStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let rho = out_arg(rho, "rho")?;
        let stable = out_arg(stable, "stable")?;
        let sys = cfg.file.to_system().map_err(fail)?;
        let rep = ergodicity::stability_check(&sys).map_err(fail)?;
        *rho = rep.rho;
        *stable = rep.admits_solution();
        Ok(())
    })
}

/// Compute the stationary distribution and its measures.
///
/// # Safety
/// `cfg` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn retrial_solve(cfg: *const RetrialConfig, out: *mut *mut RetrialSolution) -> RetrialStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let out = out_arg(out, "out")?;
        let sys = cfg.file.to_system().map_err(fail)?;
        let dist = solver::stationary(&sys).map_err(fail)?;
        let r = performance::report(&dist, &sys).map_err(fail)?;
        let measures = RetrialMeasures {
            l_b: r.l_b,
            l_orb: r.l_orb,
            l_s: r.l_s,
            p_b1: r.p_b1,
            p_bb1: r.p_bb1,
            p_b2: r.p_b2,
            p_bb2: r.p_bb2,
            e_b: r.e_b,
            captured_mass: r.captured_mass,
            n: dist.n,
            k0: dist.k0,
        };
        *out = Box::into_raw(Box::new(RetrialSolution { dist, measures }));
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn retrial_solution_measures(sol: *const RetrialSolution, out: *mut RetrialMeasures) -> RetrialStatus {
    guard(|| {
        let sol = ref_arg(sol, "sol")?;
        *out_arg(out, "out")? = sol.measures;
        Ok(())
    })
}

/// `P(i, b)`: orbit size `i`, `b` busy servers.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn retrial_solution_joint(
    sol: *const RetrialSolution,
    i: usize,
    b: usize,
    out: *mut f64,
) -> RetrialStatus {
    guard(|| {
        let sol = ref_arg(sol, "sol")?;
        let out = out_arg(out, "out")?;
        *out = sol.dist.joint(i, b).map_err(fail)?;
        Ok(())
    })
}

/// Copy `P(i, •)` for `i = 0..min(len, N + 1)` into `buf` and return the number of levels held.
///
/// # Safety
/// `buf` must hold `len` doubles, or be null with `len = 0`.
#[no_mangle]
pub unsafe extern "C" fn retrial_solution_orbit_marginal(sol: *const RetrialSolution, buf: *mut f64, len: usize) -> usize {
    let Some(sol) = sol.as_ref() else {
        set_error("sol is null");
        return 0;
    };
    let marginal = performance::orbit_marginal(&sol.dist);
    if !buf.is_null() {
        let dst = std::slice::from_raw_parts_mut(buf, len);
        for (d, s) in dst.iter_mut().zip(&marginal) {
            *d = *s;
        }
    }
    marginal.len()
}

/// # Safety
/// `sol` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn retrial_solution_free(sol: *mut RetrialSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}
