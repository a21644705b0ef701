//! Stability of the orbit process.

use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::{limiting_blocks, GeneratorView};
use crate::linalg::{self, kron, kron_power_sum, solve_null_left, Csr};
use crate::models::{self, dot, SystemConfig};

/// Largest order of `Y₂₂` that is materialized densely.
pub const DENSE_Y22_LIMIT: usize = 4000;

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub mu_bar_1: f64,
    pub mu_bar_2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `λ₁/μ̄₁ + λ₂/μ̄₂`.
    pub rho: f64,
    /// `rho < 1`.
    pub stable: bool,
    /// `rho ∈ [0.95, 1)`: expect a heavy orbit tail.
    pub near_critical: bool,
    /// `1 − y Y'(1) e` for the stationary vector `y` of `Y(1)`; `None` when too large.
    pub drift_margin: Option<f64>,
}

impl StabilityReport {
    /// Gate used by the solver: the load condition and, when available, a positive drift margin.
    pub fn admits_solution(&self) -> bool {
        self.stable && self.drift_margin.is_none_or(|m| m > 0.0)
    }
}

/// Stationary vector of `S^{⊕n} + S₀^{⊕n}(I_{M^{n-1}} ⊗ ς)` and the matching `μ̄`.
pub fn busy_service_rate(cfg: &SystemConfig, n: usize) -> Result<(Vec<f64>, f64)> {
    let ph = &cfg.service;
    let m = ph.order();
    let s0 = ph.exit_column();
    let sn = kron_power_sum(ph.s.as_ref(), n);
    let s0n = kron_power_sum(s0.as_ref(), n);
    let restart = kron(
        linalg::identity(m.pow(n as u32 - 1)).as_ref(),
        ph.alpha_row().as_ref(),
    );
    let a = &sn + &s0n * &restart;
    let x = solve_null_left(a.as_ref())
        .map_err(|e| Error::Singular(format!("busy-server phase system for n = {n}: {e}")))?;
    let out = &s0n * Mat::<f64>::from_fn(s0n.ncols(), 1, |_, _| 1.0);
    let col: Vec<f64> = (0..out.nrows()).map(|i| out[(i, 0)]).collect();
    Ok((x.clone(), dot(&x, &col)))
}

pub fn stability_check(cfg: &SystemConfig) -> Result<StabilityReport> {
    let (x1, mu_bar_1) = busy_service_rate(cfg, cfg.g)?;
    let (x2, mu_bar_2) = busy_service_rate(cfg, cfg.c)?;
    let lambda1 = models::arrival_rate(&cfg.bmap1)?;
    let lambda2 = models::arrival_rate(&cfg.bmap2)?;
    let rho = lambda1 / mu_bar_1 + lambda2 / mu_bar_2;
    let gen = GeneratorView::build(cfg)?;
    let drift_margin = match drift_margin(&gen) {
        Ok(m) => Some(m),
        Err(Error::TooLarge(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(StabilityReport {
        x1,
        x2,
        mu_bar_1,
        mu_bar_2,
        lambda1,
        lambda2,
        rho,
        stable: rho < 1.0,
        near_critical: (0.95..1.0).contains(&rho),
        drift_margin,
    })
}

/// Index range of the irreducible block `Y₂₂`: levels `g−1..=c`.
pub fn y22_range(gen: &GeneratorView) -> std::ops::Range<usize> {
    gen.index.segment(gen.g - 1).start..gen.k()
}

fn dense_sub(a: &Csr, start: usize) -> Mat<f64> {
    let n = a.nrows() - start;
    let mut out = Mat::zeros(n, n);
    for (i, j, v) in a.triplets() {
        if i >= start && j >= start {
            out[(i - start, j - start)] += v;
        }
    }
    out
}

/// `1 − y Σ_k k Y_k e`, positive when the limiting chain drifts towards lower levels.
pub fn drift_margin(gen: &GeneratorView) -> Result<f64> {
    let range = y22_range(gen);
    if range.len() > DENSE_Y22_LIMIT {
        return Err(Error::TooLarge(format!(
            "Y22 has order {} > {DENSE_Y22_LIMIT}",
            range.len()
        )));
    }
    let ys = limiting_blocks(gen)?;
    let mut y1 = Csr::zeros(gen.k(), gen.k());
    for y in &ys {
        y1 = y1.add(y);
    }
    let mut a = dense_sub(&y1, range.start);
    for i in 0..a.nrows() {
        a[(i, i)] -= 1.0;
    }
    let y = solve_null_left(a.as_ref())?;
    let mut up = vec![0.0; range.len()];
    for (k, yk) in ys.iter().enumerate().skip(1) {
        for (slot, s) in up.iter_mut().zip(yk.row_sums().into_iter().skip(range.start)) {
            *slot += k as f64 * s;
        }
    }
    Ok(1.0 - dot(&y, &up))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DetDerivative {
    /// Sign of `[det(zI − Y₂₂(z))]'` at `z = 1`.
    pub sign: f64,
    /// `log10 |derivative|`.
    pub log10_abs: f64,
    /// The derivative itself; may underflow to zero for large blocks.
    pub value: f64,
}

/// Central difference of `det(zI − Y₂₂(z))` at `z = 1` with step `1e-5`.
pub fn det_derivative_check(gen: &GeneratorView) -> Result<DetDerivative> {
    let range = y22_range(gen);
    if range.len() > DENSE_Y22_LIMIT {
        return Err(Error::TooLarge(format!(
            "Y22 has order {} > {DENSE_Y22_LIMIT}; the determinant check is a desk-scale validator",
            range.len()
        )));
    }
    let ys = limiting_blocks(gen)?;
    let h = 1e-5;
    let logdet_at = |z: f64| {
        let mut yz = Csr::zeros(gen.k(), gen.k());
        let mut zk = 1.0;
        for y in &ys {
            yz = yz.add(&y.scale(zk));
            zk *= z;
        }
        let mut a = dense_sub(&yz, range.start);
        a *= -1.0;
        for i in 0..a.nrows() {
            a[(i, i)] += z;
        }
        linalg::log_det(a.as_ref())
    };
    let (s1, l1) = logdet_at(1.0 + h);
    let (s2, l2) = logdet_at(1.0 - h);
    let top = l1.max(l2);
    let scaled = s1 * (l1 - top).exp() - s2 * (l2 - top).exp();
    let sign = if scaled > 0.0 {
        1.0
    } else if scaled < 0.0 {
        -1.0
    } else {
        0.0
    };
    let log10_abs = (scaled.abs().ln() + top - (2.0 * h).ln()) / std::f64::consts::LN_10;
    Ok(DetDerivative {
        sign,
        log10_abs,
        value: sign * 10f64.powf(log10_abs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{cellular, BmapSpec, MmppSpec, PhSpec};

    fn exp_config(c: usize, g: usize, l1: f64, l2: f64, mu: f64) -> SystemConfig {
        SystemConfig::new(
            BmapSpec::poisson(l1),
            BmapSpec::poisson(l2),
            MmppSpec::constant(2.0),
            PhSpec::exponential(mu),
            c,
            g,
        )
        .unwrap()
    }

    #[test]
    fn exponential_collapses_to_counts() {
        let cfg = exp_config(5, 3, 1.0, 1.0, 1.5);
        let rep = stability_check(&cfg).unwrap();
        assert_eq!(rep.x1, vec![1.0]);
        assert!((rep.mu_bar_1 - 4.5).abs() < 1e-12);
        assert!((rep.mu_bar_2 - 7.5).abs() < 1e-12);
        assert!((rep.rho - (1.0 / 4.5 + 1.0 / 7.5)).abs() < 1e-12);
    }

    #[test]
    fn two_phase_two_servers_by_hand() {
        // X[S⊕S + S0⊕S0 (I⊗ς)] = 0 expanded for M = 2, n = 2.
        let cfg = cellular::config(3, 2, 1.0, 1.0, 1.0).unwrap();
        let (x, mu) = busy_service_rate(&cfg, 2).unwrap();
        let s = [[-23.0, 9.0], [14.0, -17.0]];
        let s0 = [14.0, 3.0];
        let a = [0.4, 0.6];
        let mut q = [[0.0; 4]; 4];
        for i in 0..4 {
            let (p1, p2) = (i / 2, i % 2);
            for j in 0..4 {
                let (q1, q2) = (j / 2, j % 2);
                if p2 == q2 {
                    q[i][j] += s[p1][q1];
                }
                if p1 == q1 {
                    q[i][j] += s[p2][q2];
                }
            }
            // completion of server 1: remaining phase p2 moves to slot 1, fresh start in slot 2
            for k in 0..2 {
                q[i][p2 * 2 + k] += s0[p1] * a[k];
                q[i][p1 * 2 + k] += s0[p2] * a[k];
            }
        }
        let rows: Vec<Vec<f64>> = q.iter().map(|r| r.to_vec()).collect();
        let y = crate::linalg::gth_stationary(crate::linalg::from_rows(&rows).as_ref()).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-12);
        }
        let expect: f64 = (0..4).map(|i| y[i] * (s0[i / 2] + s0[i % 2])).sum();
        assert!((mu - expect).abs() < 1e-10);
    }

    #[test]
    fn time_rescaling_invariance() {
        let a = cellular::config(4, 2, 0.5, 0.5, 1.0).unwrap();
        let s = 3.7;
        let b = SystemConfig::new(
            a.bmap1.scaled(s),
            a.bmap2.scaled(s),
            a.mmpp.scaled(s),
            a.service.scaled(s),
            4,
            2,
        )
        .unwrap();
        let ra = stability_check(&a).unwrap().rho;
        let rb = stability_check(&b).unwrap().rho;
        assert!((ra - rb).abs() < 1e-12);
    }

    #[test]
    fn det_sign_follows_load() {
        let light = exp_config(3, 2, 0.5, 0.5, 1.0);
        let heavy = exp_config(3, 2, 3.0, 0.5, 1.0);
        let gl = GeneratorView::build(&light).unwrap();
        let gh = GeneratorView::build(&heavy).unwrap();
        assert_eq!(det_derivative_check(&gl).unwrap().sign, 1.0);
        assert_eq!(det_derivative_check(&gh).unwrap().sign, -1.0);
        assert!(drift_margin(&gl).unwrap() > 0.0);
        assert!(drift_margin(&gh).unwrap() < 0.0);
    }
}
