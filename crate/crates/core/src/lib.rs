//! Stationary analysis of a multi-server retrial queue with two batch Markovian
//! arrival classes, guard servers for the priority class, phase-type service
//! and MMPP-modulated retrials.
//!
//! The orbit size is the level of an asymptotically quasi-Toeplitz Markov chain.
//! [`solver::stationary`] computes the level distribution by censoring,
//! [`performance`] turns it into blocking probabilities and means, and
//! [`optimizer`] dimensions the number of guard servers.

pub mod config;
pub mod des;
pub mod ergodicity;
pub mod error;
pub mod generator;
pub mod linalg;
pub mod models;
pub mod optimizer;
pub mod performance;
pub mod solver;

pub use error::{Error, Result};
pub use models::{BmapSpec, MmppSpec, PhSpec, SolverOptions, SystemConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Format with 12 significant digits, `%.12g` style.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{v:.11e}");
        let (mant, e) = s.split_once('e').unwrap();
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{e}")
    }
}

#[cfg(test)]
mod tests {
    use super::fmt_sig;

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(0.2148), "0.2148");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(123456.0), "123456");
        assert_eq!(fmt_sig(1.5e-9), "1.5e-9");
        assert_eq!(fmt_sig(-2.0), "-2");
    }
}
