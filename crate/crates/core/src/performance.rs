//! Performance measures of a solved instance.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{self, BmapSpec, SystemConfig};
use crate::solver::StationaryDistribution;

#[derive(Debug, Clone, Serialize)]
pub struct PerformanceReport {
    /// `P(i, •)`, `i = 0..=N`.
    pub orbit_marginal: Vec<f64>,
    /// `P(•, b)`, `b = 0..=c`.
    pub server_marginal: Vec<f64>,
    pub l_b: f64,
    pub l_orb: f64,
    /// Geometric extrapolation of `Σ_{i>N} i P(i, •)`.
    pub l_orb_tail: f64,
    pub l_s: f64,
    pub p_b1: f64,
    pub p_bb1: f64,
    pub p_b2: f64,
    pub p_bb2: f64,
    pub e_b: f64,
    pub captured_mass: f64,
}

pub fn joint_pmf(dist: &StationaryDistribution, i: usize, b: usize) -> Result<f64> {
    dist.joint(i, b)
}

pub fn orbit_marginal(dist: &StationaryDistribution) -> Vec<f64> {
    (0..=dist.n).map(|i| dist.level_mass(i)).collect()
}

pub fn server_marginal(dist: &StationaryDistribution) -> Vec<f64> {
    (0..=dist.c)
        .map(|b| {
            let seg = dist.index.segment(b);
            dist.levels.iter().map(|p| p[seg.clone()].iter().sum::<f64>()).sum()
        })
        .collect()
}

/// Which arrival class a blocking formula refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Primary,
    Priority,
}

/// Per-phase weight vectors indexed by `n = 1..=cap` and the arrival-phase coordinate.
fn class_parts(cfg: &SystemConfig, class: Class) -> (&BmapSpec, usize) {
    match class {
        Class::Primary => (&cfg.bmap1, cfg.g),
        Class::Priority => (&cfg.bmap2, cfg.c),
    }
}

fn phase_of(dist: &StationaryDistribution, class: Class, b: usize, local: usize) -> usize {
    let ix = &dist.index;
    let mb = ix.m.pow(b as u32);
    match class {
        Class::Primary => (local / (ix.v * mb)) % ix.w,
        Class::Priority => (local / mb) % ix.v,
    }
}

/// `Σ_{n=1}^{cap} Σ_i P_{i,cap−n} w_n`, with `w_n` a function of the arrival phase.
fn weighted(dist: &StationaryDistribution, class: Class, cap: usize, w: impl Fn(usize) -> Vec<f64>) -> f64 {
    let mut total = 0.0;
    for n in 1..=cap {
        let b = cap - n;
        let wn = w(n);
        for i in 0..=dist.n {
            for (local, &p) in dist.sub_vector(i, b).iter().enumerate() {
                total += p * wn[phase_of(dist, class, b, local)];
            }
        }
    }
    total
}

fn row_sums(b: &BmapSpec, k: usize) -> Vec<f64> {
    crate::linalg::row_sums(b.d(k).as_ref())
}

fn blocking(dist: &StationaryDistribution, cfg: &SystemConfig, class: Class, min_form: bool) -> Result<(f64, f64)> {
    let (bmap, cap) = class_parts(cfg, class);
    let lambda = models::arrival_rate(bmap)?;
    let lambda_b = models::batch_arrival_rate(bmap)?;
    let nstar = bmap.max_batch();
    let order = bmap.order();
    let accepted = if min_form {
        weighted(dist, class, cap, |n| {
            let mut w = vec![0.0; order];
            for k in 1..=nstar {
                let rs = row_sums(bmap, k);
                for (x, r) in w.iter_mut().zip(rs) {
                    *x += k.min(n) as f64 * r;
                }
            }
            w
        })
    } else {
        weighted(dist, class, cap, |n| {
            let mut w = vec![0.0; order];
            for k in 0..=n {
                let rs = row_sums(bmap, k);
                for (x, r) in w.iter_mut().zip(rs) {
                    *x += (k as f64 - n as f64) * r;
                }
            }
            w
        })
    };
    let batches = weighted(dist, class, cap, |n| {
        let mut w = vec![0.0; order];
        for k in 1..=n {
            for (x, r) in w.iter_mut().zip(row_sums(bmap, k)) {
                *x += r;
            }
        }
        w
    });
    Ok((1.0 - accepted / lambda, 1.0 - batches / lambda_b))
}

/// `(P_b1, P_bb1)` as displayed, with `Σ_{k=0}^{n} (k−n) D_k` weights.
pub fn blocking_primary(dist: &StationaryDistribution, cfg: &SystemConfig) -> Result<(f64, f64)> {
    blocking(dist, cfg, Class::Primary, false)
}

/// `(P_b2, P_bb2)` as displayed.
pub fn blocking_priority(dist: &StationaryDistribution, cfg: &SystemConfig) -> Result<(f64, f64)> {
    blocking(dist, cfg, Class::Priority, false)
}

/// `P_b1` from the accepted-rate form `Σ_{k≥1} min(k, n) D_k e`.
pub fn blocking_primary_min_form(dist: &StationaryDistribution, cfg: &SystemConfig) -> Result<f64> {
    Ok(blocking(dist, cfg, Class::Primary, true)?.0)
}

pub fn blocking_priority_min_form(dist: &StationaryDistribution, cfg: &SystemConfig) -> Result<f64> {
    Ok(blocking(dist, cfg, Class::Priority, true)?.0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Summary {
    pub l_b: f64,
    pub l_orb: f64,
    pub l_orb_tail: f64,
    pub l_s: f64,
    pub e_b: f64,
}

pub fn summary_measures(dist: &StationaryDistribution, cfg: &SystemConfig) -> Result<Summary> {
    let orbit = orbit_marginal(dist);
    let servers = server_marginal(dist);
    let l_b: f64 = servers.iter().enumerate().map(|(b, p)| b as f64 * p).sum();
    let l_orb: f64 = orbit.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
    let l_orb_tail = orbit_tail(&orbit);
    let p00 = dist.joint(0, 0)?;
    if p00 <= 0.0 {
        return Err(Error::Domain("P(0,0) = 0: mean busy period undefined".into()));
    }
    let lambda = models::arrival_rate(&cfg.bmap1)? + models::arrival_rate(&cfg.bmap2)?;
    Ok(Summary {
        l_b,
        l_orb,
        l_orb_tail,
        l_s: l_orb + l_b,
        e_b: (1.0 / p00 - 1.0) / lambda,
    })
}

/// `Σ_{i>N} i P(i,•)` assuming geometric decay at the ratio of the last three levels.
fn orbit_tail(orbit: &[f64]) -> f64 {
    let n = orbit.len() - 1;
    if n < 2 || orbit[n - 2] <= 0.0 {
        return 0.0;
    }
    let r = (orbit[n] / orbit[n - 2]).sqrt();
    if !(r < 1.0) {
        return f64::INFINITY;
    }
    let nf = n as f64;
    orbit[n] * (nf * r / (1.0 - r) + r / ((1.0 - r) * (1.0 - r)))
}

pub fn report(dist: &StationaryDistribution, cfg: &SystemConfig) -> Result<PerformanceReport> {
    let (p_b1, p_bb1) = blocking_primary(dist, cfg)?;
    let (p_b2, p_bb2) = blocking_priority(dist, cfg)?;
    let s = summary_measures(dist, cfg)?;
    Ok(PerformanceReport {
        orbit_marginal: orbit_marginal(dist),
        server_marginal: server_marginal(dist),
        l_b: s.l_b,
        l_orb: s.l_orb,
        l_orb_tail: s.l_orb_tail,
        l_s: s.l_s,
        p_b1,
        p_bb1,
        p_b2,
        p_bb2,
        e_b: s.e_b,
        captured_mass: dist.captured_mass,
    })
}

impl PerformanceReport {
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("L_b", self.l_b),
            ("L_orb", self.l_orb),
            ("L_orb_tail", self.l_orb_tail),
            ("L_s", self.l_s),
            ("P_b1", self.p_b1),
            ("P_bb1", self.p_bb1),
            ("P_b2", self.p_b2),
            ("P_bb2", self.p_bb2),
            ("E_B", self.e_b),
            ("captured_mass", self.captured_mass),
        ]
    }

    /// `key=value` lines.
    pub fn write_text<W: Write>(&self, out: &mut W) -> Result<()> {
        for (k, v) in self.scalars() {
            writeln!(out, "{k}={}", crate::fmt_sig(v))?;
        }
        for (b, p) in self.server_marginal.iter().enumerate() {
            writeln!(out, "P(*,{b})={}", crate::fmt_sig(*p))?;
        }
        Ok(())
    }

    /// `measure,value` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "measure,value")?;
        for (k, v) in self.scalars() {
            writeln!(out, "{k},{}", crate::fmt_sig(v))?;
        }
        for (i, p) in self.orbit_marginal.iter().enumerate() {
            writeln!(out, "\"P({i},*)\",{}", crate::fmt_sig(*p))?;
        }
        for (b, p) in self.server_marginal.iter().enumerate() {
            writeln!(out, "\"P(*,{b})\",{}", crate::fmt_sig(*p))?;
        }
        Ok(())
    }
}
