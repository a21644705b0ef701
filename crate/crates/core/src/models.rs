//! Input processes, their validation and scalar rate summaries.

use std::fmt;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, gth_stationary};

/// Relative tolerance for "zero row sum" checks.
pub const ROW_SUM_TOL: f64 = 1e-10;

/// Batch Markovian arrival process `D_0, D_1, …, D_{n*}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BmapSpec {
    pub matrices: Vec<Mat<f64>>,
}

/// Retrial modulator: `T0` and the diagonal of `T1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmppSpec {
    pub t0: Mat<f64>,
    pub t1: Vec<f64>,
}

/// Phase-type law `(ς, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhSpec {
    pub alpha: Vec<f64>,
    pub s: Mat<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Tolerance on the `G` fixed-point residual and on boundary insensitivity.
    pub epsilon: f64,
    /// Tail-mass tolerance that fixes the truncation level.
    pub epsilon0: f64,
    pub n_max: usize,
    pub max_g_iter: usize,
    /// First boundary tried by the doubling search for `k0`.
    pub k0_start: usize,
    /// Skip the search and use this boundary.
    pub k0: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            epsilon0: 1e-6,
            n_max: 400,
            max_g_iter: 100_000,
            k0_start: 16,
            k0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Primary (originating) class.
    pub bmap1: BmapSpec,
    /// Priority (handoff) class.
    pub bmap2: BmapSpec,
    pub mmpp: MmppSpec,
    pub service: PhSpec,
    pub c: usize,
    pub g: usize,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub item: String,
    pub row: Option<usize>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{} (row {}): {}", self.item, r, self.rule),
            None => write!(f, "{}: {}", self.item, self.rule),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, item: &str, row: Option<usize>, rule: impl Into<String>) {
        self.violations.push(Violation {
            item: item.to_string(),
            row,
            rule: rule.into(),
        });
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.rule.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let lines: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", lines.join("; "))
    }
}

impl BmapSpec {
    pub fn new(matrices: Vec<Mat<f64>>) -> Self {
        Self { matrices }
    }

    pub fn from_rows(matrices: &[Vec<Vec<f64>>]) -> Self {
        Self::new(matrices.iter().map(|m| linalg::from_rows(m)).collect())
    }

    /// Poisson process of the given rate.
    pub fn poisson(rate: f64) -> Self {
        Self::from_rows(&[vec![vec![-rate]], vec![vec![rate]]])
    }

    pub fn order(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.nrows())
    }

    /// Largest batch size `n*`.
    pub fn max_batch(&self) -> usize {
        self.matrices.len().saturating_sub(1)
    }

    /// `D_k`, or zero beyond `n*`.
    pub fn d(&self, k: usize) -> Mat<f64> {
        self.matrices
            .get(k)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(self.order(), self.order()))
    }

    pub fn has_batch(&self, k: usize) -> bool {
        self.matrices
            .get(k)
            .is_some_and(|m| linalg::max_abs(m.as_ref()) > 0.0)
    }

    /// `D(1) = Σ_k D_k`.
    pub fn generator(&self) -> Mat<f64> {
        let w = self.order();
        let mut out = Mat::zeros(w, w);
        for m in &self.matrices {
            out += m;
        }
        out
    }

    /// `D(z) = Σ_k D_k z^k`.
    pub fn eval(&self, z: f64) -> Mat<f64> {
        let w = self.order();
        let mut out = Mat::zeros(w, w);
        let mut zk = 1.0;
        for m in &self.matrices {
            out += zk * m;
            zk *= z;
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.matrices.iter().map(|m| s * m).collect())
    }

    fn check(&self, name: &str, rep: &mut ValidationReport) {
        if self.matrices.len() < 2 {
            rep.push(name, None, "needs D_0 and at least one batch matrix D_1..D_n*");
            return;
        }
        let w = self.order();
        if w == 0 {
            rep.push(name, None, "matrices must be nonempty");
            return;
        }
        for (k, m) in self.matrices.iter().enumerate() {
            let item = format!("{name}.D{k}");
            if m.nrows() != w || m.ncols() != w {
                rep.push(&item, None, format!("must be {w}x{w}"));
                return;
            }
            if !all_finite(m.as_ref()) {
                rep.push(&item, None, "entries must be finite");
                return;
            }
        }
        let d0 = &self.matrices[0];
        for i in 0..w {
            if d0[(i, i)] >= 0.0 {
                rep.push(&format!("{name}.D0"), Some(i), "diagonal must be strictly negative");
            }
            for j in 0..w {
                if i != j && d0[(i, j)] < 0.0 {
                    rep.push(&format!("{name}.D0"), Some(i), "off-diagonal entries must be nonnegative");
                }
            }
        }
        for (k, m) in self.matrices.iter().enumerate().skip(1) {
            for i in 0..w {
                if (0..w).any(|j| m[(i, j)] < 0.0) {
                    rep.push(&format!("{name}.D{k}"), Some(i), "entries must be nonnegative");
                }
            }
        }
        if !(1..self.matrices.len()).any(|k| self.has_batch(k)) {
            rep.push(name, None, "at least one batch matrix must be nonzero");
        }
        let gen = self.generator();
        check_conservative(name, "D(1)", gen.as_ref(), diag_scale(self.matrices[0].as_ref()), rep);
        if !irreducible(gen.as_ref()) {
            rep.push(name, None, "D(1) must be irreducible");
        }
        if linalg::solve_linear(d0.as_ref(), &vec![1.0; w]).is_err() {
            rep.push(&format!("{name}.D0"), None, "must be nonsingular");
        }
    }
}

impl MmppSpec {
    pub fn new(t0: Mat<f64>, t1: Vec<f64>) -> Self {
        Self { t0, t1 }
    }

    /// Constant per-customer retrial rate `sigma`.
    pub fn constant(sigma: f64) -> Self {
        Self::new(linalg::from_rows(&[vec![-sigma]]), vec![sigma])
    }

    pub fn order(&self) -> usize {
        self.t1.len()
    }

    pub fn t1_matrix(&self) -> Mat<f64> {
        let r = self.order();
        Mat::from_fn(r, r, |i, j| if i == j { self.t1[i] } else { 0.0 })
    }

    /// `T = T0 + T1`.
    pub fn generator(&self) -> Mat<f64> {
        &self.t0 + self.t1_matrix()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(s * &self.t0, self.t1.iter().map(|v| s * v).collect())
    }

    fn check(&self, rep: &mut ValidationReport) {
        let r = self.order();
        if r == 0 {
            rep.push("mmpp", None, "T1 must be nonempty");
            return;
        }
        if self.t0.nrows() != r || self.t0.ncols() != r {
            rep.push("mmpp.T0", None, format!("must be {r}x{r} to match T1"));
            return;
        }
        if !all_finite(self.t0.as_ref()) || self.t1.iter().any(|v| !v.is_finite()) {
            rep.push("mmpp", None, "entries must be finite");
            return;
        }
        for (i, &s) in self.t1.iter().enumerate() {
            if s <= 0.0 {
                rep.push("mmpp.T1", Some(i), "retrial intensities must be strictly positive");
            }
        }
        for i in 0..r {
            if (0..r).any(|j| j != i && self.t0[(i, j)] < 0.0) {
                rep.push("mmpp.T0", Some(i), "off-diagonal entries must be nonnegative");
            }
        }
        let t = self.generator();
        check_conservative("mmpp", "T0+T1", t.as_ref(), diag_scale(self.t0.as_ref()), rep);
        if !irreducible(t.as_ref()) {
            rep.push("mmpp", None, "T0+T1 must be irreducible");
        }
    }
}

impl PhSpec {
    pub fn new(alpha: Vec<f64>, s: Mat<f64>) -> Self {
        Self { alpha, s }
    }

    pub fn exponential(mu: f64) -> Self {
        Self::new(vec![1.0], linalg::from_rows(&[vec![-mu]]))
    }

    pub fn order(&self) -> usize {
        self.alpha.len()
    }

    /// Exit vector `S₀ = -S e`.
    pub fn exit_vector(&self) -> Vec<f64> {
        linalg::row_sums(self.s.as_ref())
            .into_iter()
            .map(|v| -v)
            .collect()
    }

    pub fn exit_column(&self) -> Mat<f64> {
        let s0 = self.exit_vector();
        Mat::from_fn(s0.len(), 1, |i, _| s0[i])
    }

    pub fn alpha_row(&self) -> Mat<f64> {
        Mat::from_fn(1, self.alpha.len(), |_, j| self.alpha[j])
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.alpha.clone(), s * &self.s)
    }

    fn check(&self, rep: &mut ValidationReport) {
        let m = self.order();
        if m == 0 {
            rep.push("ph.alpha", None, "must be nonempty");
            return;
        }
        if self.s.nrows() != m || self.s.ncols() != m {
            rep.push("ph.S", None, format!("must be {m}x{m} to match alpha"));
            return;
        }
        if !all_finite(self.s.as_ref()) || self.alpha.iter().any(|v| !v.is_finite()) {
            rep.push("ph", None, "entries must be finite");
            return;
        }
        if self.alpha.iter().any(|&a| a < 0.0) {
            rep.push("ph.alpha", None, "PH initial vector must be nonnegative");
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            rep.push("ph.alpha", None, "PH initial vector must sum to 1");
        }
        let scale = diag_scale(self.s.as_ref());
        for i in 0..m {
            if self.s[(i, i)] >= 0.0 {
                rep.push("ph.S", Some(i), "diagonal must be strictly negative");
            }
            if (0..m).any(|j| j != i && self.s[(i, j)] < 0.0) {
                rep.push("ph.S", Some(i), "off-diagonal entries must be nonnegative");
            }
        }
        let s0 = self.exit_vector();
        for (i, &v) in s0.iter().enumerate() {
            if v < -ROW_SUM_TOL * scale {
                rep.push("ph.S", Some(i), "row sums must be nonpositive");
            }
        }
        if !s0.iter().any(|&v| v > ROW_SUM_TOL * scale) {
            rep.push("ph.S", None, "exit vector S0 must have a strictly positive entry");
        }
        if linalg::solve_linear(self.s.as_ref(), &vec![1.0; m]).is_err() {
            rep.push("ph.S", None, "must be nonsingular");
        }
    }
}

impl SystemConfig {
    /// Build and validate; small row-sum residuals are absorbed into diagonals.
    pub fn new(
        bmap1: BmapSpec,
        bmap2: BmapSpec,
        mmpp: MmppSpec,
        service: PhSpec,
        c: usize,
        g: usize,
    ) -> Result<Self> {
        Self {
            bmap1,
            bmap2,
            mmpp,
            service,
            c,
            g,
            solver: SolverOptions::default(),
        }
        .checked()
    }

    pub fn with_solver(mut self, solver: SolverOptions) -> Result<Self> {
        self.solver = solver;
        self.checked()
    }

    /// Repair tiny row-sum residuals, then validate.
    pub fn checked(mut self) -> Result<Self> {
        self.repair();
        let rep = validate(&self);
        if rep.is_valid() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(rep.to_string()))
        }
    }

    fn repair(&mut self) {
        fn fix(m: &mut Mat<f64>, gen_sums: &[f64]) {
            let scale = diag_scale(m.as_ref());
            for (i, &s) in gen_sums.iter().enumerate() {
                if s != 0.0 && s.abs() <= ROW_SUM_TOL * scale {
                    m[(i, i)] -= s;
                }
            }
        }
        for b in [&mut self.bmap1, &mut self.bmap2] {
            if b.matrices.len() >= 2 && b.matrices.iter().all(|m| m.nrows() == b.order() && m.ncols() == b.order()) {
                let sums = linalg::row_sums(b.generator().as_ref());
                fix(&mut b.matrices[0], &sums);
            }
        }
        if self.mmpp.t0.nrows() == self.mmpp.order() && self.mmpp.t0.ncols() == self.mmpp.order() {
            let sums = linalg::row_sums(self.mmpp.generator().as_ref());
            fix(&mut self.mmpp.t0, &sums);
        }
    }

    pub fn r(&self) -> usize {
        self.mmpp.order()
    }

    pub fn w(&self) -> usize {
        self.bmap1.order()
    }

    pub fn v(&self) -> usize {
        self.bmap2.order()
    }

    pub fn m(&self) -> usize {
        self.service.order()
    }

    /// `RWV` times `Σ_{b≤c} M^b`.
    pub fn state_count(&self) -> usize {
        state_count(self.c, self.r(), self.w(), self.v(), self.m())
    }

    pub fn with_servers(&self, c: usize, g: usize) -> Self {
        let mut out = self.clone();
        out.c = c;
        out.g = g;
        out
    }
}

/// Number of states per level: `RWV·(1 - M^{c+1})/(1 - M)`.
pub fn state_count(c: usize, r: usize, w: usize, v: usize, m: usize) -> usize {
    r * w * v * (0..=c).map(|b| m.pow(b as u32)).sum::<usize>()
}

/// Report every violated invariant; never panics on bad numbers.
pub fn validate(config: &SystemConfig) -> ValidationReport {
    let mut rep = ValidationReport::default();
    if config.c < 2 {
        rep.push("servers.c", None, "c must be at least 2");
    }
    if config.g < 1 || config.g + 1 > config.c {
        rep.push("servers.g", None, "g must satisfy 1 ≤ g ≤ c−1");
    }
    config.bmap1.check("bmap1", &mut rep);
    config.bmap2.check("bmap2", &mut rep);
    config.mmpp.check(&mut rep);
    config.service.check(&mut rep);
    let s = &config.solver;
    if !(s.epsilon > 0.0 && s.epsilon.is_finite()) {
        rep.push("solver.epsilon", None, "must be positive");
    }
    if !(s.epsilon0 > 0.0 && s.epsilon0 < 1.0) {
        rep.push("solver.epsilon0", None, "must lie in (0, 1)");
    }
    if s.n_max == 0 {
        rep.push("solver.N_max", None, "must be at least 1");
    }
    if s.k0_start == 0 {
        rep.push("solver.k0_start", None, "must be at least 1");
    }
    rep
}

/// Stationary vector of an irreducible conservative generator.
pub fn stationary_vector(generator: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let n = generator.nrows();
    if generator.ncols() != n {
        return Err(Error::InvalidConfig("generator must be square".into()));
    }
    let scale = diag_scale(generator);
    for (i, s) in linalg::row_sums(generator).into_iter().enumerate() {
        if s.abs() > ROW_SUM_TOL * scale.max(1.0) {
            return Err(Error::InvalidConfig(format!("row {i} does not sum to zero")));
        }
    }
    gth_stationary(generator)
}

/// `θ Σ_k k D_k e`.
pub fn arrival_rate(bmap: &BmapSpec) -> Result<f64> {
    let theta = stationary_vector(bmap.generator().as_ref())?;
    let mut rate = 0.0;
    for (k, m) in bmap.matrices.iter().enumerate().skip(1) {
        let rs = linalg::row_sums(m.as_ref());
        rate += k as f64 * dot(&theta, &rs);
    }
    Ok(rate)
}

/// `θ (−D_0) e`.
pub fn batch_arrival_rate(bmap: &BmapSpec) -> Result<f64> {
    let theta = stationary_vector(bmap.generator().as_ref())?;
    let rs = linalg::row_sums(bmap.matrices[0].as_ref());
    Ok(-dot(&theta, &rs))
}

/// `θ₀ T₁ e`.
pub fn retrial_rate(mmpp: &MmppSpec) -> Result<f64> {
    let theta = stationary_vector(mmpp.generator().as_ref())?;
    Ok(dot(&theta, &mmpp.t1))
}

/// `[−ς S^{-1} e]^{-1}`.
pub fn service_rate(ph: &PhSpec) -> Result<f64> {
    Ok(1.0 / mean_service_time(ph)?)
}

pub fn mean_service_time(ph: &PhSpec) -> Result<f64> {
    let m = ph.order();
    let neg: Mat<f64> = -&ph.s;
    let tau = linalg::solve_linear(neg.as_ref(), &vec![1.0; m])?;
    Ok(dot(&ph.alpha, &tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    pub lambda1: f64,
    pub lambda_b1: f64,
    pub lambda2: f64,
    pub lambda_b2: f64,
    pub sigma: f64,
    pub mu: f64,
}

pub fn rates(config: &SystemConfig) -> Result<Rates> {
    Ok(Rates {
        lambda1: arrival_rate(&config.bmap1)?,
        lambda_b1: batch_arrival_rate(&config.bmap1)?,
        lambda2: arrival_rate(&config.bmap2)?,
        lambda_b2: batch_arrival_rate(&config.bmap2)?,
        sigma: retrial_rate(&config.mmpp)?,
        mu: service_rate(&config.service)?,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn all_finite(m: MatRef<'_, f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m[(i, j)].is_finite()))
}

fn diag_scale(m: MatRef<'_, f64>) -> f64 {
    (0..m.nrows().min(m.ncols()))
        .map(|i| m[(i, i)].abs())
        .fold(0.0, f64::max)
}

/// `scale` is the magnitude the row-sum residual is measured against, usually `|diag(D₀)|`.
fn check_conservative(name: &str, what: &str, gen: MatRef<'_, f64>, scale: f64, rep: &mut ValidationReport) {
    let scale = scale.max(f64::MIN_POSITIVE);
    for (i, s) in linalg::row_sums(gen).into_iter().enumerate() {
        if s.abs() > ROW_SUM_TOL * scale {
            rep.push(name, Some(i), format!("{what} must have zero row sums"));
        }
    }
}

/// Strong connectivity of the off-diagonal support.
pub(crate) fn irreducible(gen: MatRef<'_, f64>) -> bool {
    let n = gen.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let v = if forward { gen[(i, j)] } else { gen[(j, i)] };
                if i != j && v > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n <= 1 || (reach(true) && reach(false))
}

/// The cellular-network instance used throughout the examples.
pub mod cellular {
    use super::*;

    pub fn originating(lambda_o: f64) -> BmapSpec {
        BmapSpec::from_rows(&[
            vec![vec![-11.0, 2.0], vec![5.0, -20.0]],
            vec![vec![8.0, 1.0], vec![3.0, 12.0]],
        ])
        .scaled(lambda_o)
    }

    pub fn handoff(lambda_h: f64) -> BmapSpec {
        BmapSpec::from_rows(&[
            vec![vec![-3.0, 0.0], vec![1.0, -2.0]],
            vec![vec![1.0, 2.0], vec![0.0, 1.0]],
        ])
        .scaled(lambda_h)
    }

    pub fn retrials(lambda_r: f64) -> MmppSpec {
        MmppSpec::new(
            linalg::from_rows(&[vec![-15.0, 3.0], vec![4.0, -19.0]]),
            vec![12.0, 15.0],
        )
        .scaled(lambda_r)
    }

    pub fn service() -> PhSpec {
        PhSpec::new(
            vec![0.4, 0.6],
            linalg::from_rows(&[vec![-23.0, 9.0], vec![14.0, -17.0]]),
        )
    }

    /// Exponential service with the same mean as [`service`].
    pub fn service_exponential() -> PhSpec {
        PhSpec::exponential(service_rate(&service()).expect("valid PH"))
    }

    pub fn config(c: usize, g: usize, lambda_o: f64, lambda_h: f64, lambda_r: f64) -> Result<SystemConfig> {
        SystemConfig::new(
            originating(lambda_o),
            handoff(lambda_h),
            retrials(lambda_r),
            service(),
            c,
            g,
        )
    }

    /// Same arrivals and retrials with single-phase service.
    pub fn config_exponential(
        c: usize,
        g: usize,
        lambda_o: f64,
        lambda_h: f64,
        lambda_r: f64,
    ) -> Result<SystemConfig> {
        SystemConfig::new(
            originating(lambda_o),
            handoff(lambda_h),
            retrials(lambda_r),
            service_exponential(),
            c,
            g,
        )
    }
}
