//! Stationary level distribution by censoring on orbit levels.
//!
//! All level-down matrices `G_k` and `G` only have nonzero columns on the
//! states with `1..=g` busy servers (a retrial is the only way down), so they
//! are stored column-compressed as `K × m` with `m = RWV·Σ_{l=1}^{g} M^l`.

use std::io::Write;
use std::time::Instant;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatRef};
use serde::Serialize;

use crate::ergodicity::stability_check;
use crate::error::{Error, Result};
use crate::generator::{limiting_blocks, GeneratorView, StateIndex};
use crate::linalg::{self, Csr};
use crate::models::SystemConfig;

/// `G` in column-compressed form.
#[derive(Debug, Clone)]
pub struct LevelDown {
    /// Global column indices carried by `g`.
    pub cols: Vec<usize>,
    /// `K × cols.len()`.
    pub g: Mat<f64>,
}

impl LevelDown {
    pub fn zeros(k: usize, cols: Vec<usize>) -> Self {
        let m = cols.len();
        Self {
            cols,
            g: Mat::zeros(k, m),
        }
    }

    /// Rows of `g` at the carried columns: the `m × m` matrix used when chaining products.
    pub fn square(&self) -> Mat<f64> {
        let m = self.cols.len();
        Mat::from_fn(m, m, |i, j| self.g[(self.cols[i], j)])
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let k = self.g.nrows();
        let mut out = Mat::zeros(k, k);
        for (jj, &j) in self.cols.iter().enumerate() {
            for i in 0..k {
                out[(i, j)] = self.g[(i, jj)];
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        linalg::row_sums(self.g.as_ref())
    }

    /// `x G` restricted to the carried columns.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let m = self.cols.len();
        let mut out = vec![0.0; m];
        for (j, o) in out.iter_mut().enumerate() {
            let col = self.g.col(j);
            let mut s = 0.0;
            for (i, &xi) in x.iter().enumerate() {
                s += xi * col[i];
            }
            *o = s;
        }
        out
    }

    /// Expand a vector over the carried columns to length `K`.
    pub fn scatter(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.g.nrows()];
        for (&c, &v) in self.cols.iter().zip(y) {
            out[c] = v;
        }
        out
    }
}

/// Global column indices of states with `1..=g` busy servers.
pub fn carried_columns(gen: &GeneratorView) -> Vec<usize> {
    (gen.index.segment(1).start..gen.index.segment(gen.g).end).collect()
}

fn matmul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    faer::linalg::matmul::matmul(out.as_mut(), faer::Accum::Replace, a, b, 1.0, faer::Par::Seq);
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct GReport {
    pub iterations: usize,
    pub residual: f64,
    /// Largest deviation of `G` rows from `Y(1)` rows on levels with fewer than `g` busy servers.
    pub low_rows_deviation: f64,
    /// `max |G e − 1|`.
    pub row_sum_defect: f64,
    /// Residual sequence of the iteration.
    #[serde(skip)]
    pub history: Vec<f64>,
}

/// Minimal nonnegative solution of `G = Σ_k Y_k G^k` by iteration from zero, stopped once both
/// the step and `max |1 − G e|` are below `epsilon`.
pub fn compute_g(gen: &GeneratorView, epsilon: f64, max_iter: usize) -> Result<(LevelDown, GReport)> {
    let ys = limiting_blocks(gen)?;
    let cols = carried_columns(gen);
    let k = gen.k();
    let y0 = ys[0].select_cols(&cols).to_dense();
    let mut cur = LevelDown::zeros(k, cols.clone());
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let gc = cur.square();
        let mut next = y0.clone();
        let mut power = cur.g.clone();
        for (kk, y) in ys.iter().enumerate().skip(1) {
            if kk > 1 {
                power = matmul(power.as_ref(), gc.as_ref());
            }
            if y.nnz() > 0 {
                next += y.mul_dense(power.as_ref());
            }
        }
        let res = linalg::norm_inf((&next - &cur.g).as_ref());
        history.push(res);
        cur.g = next;
        // iterates increase monotonically to a stochastic G, so the row-sum gap bounds the error;
        // a zero step means the floating-point fixed point is reached
        let stochastic = || cur.row_sums().iter().all(|s| (1.0 - s).abs() <= epsilon);
        if res <= epsilon && (res == 0.0 || stochastic()) {
            let y1: Csr = ys.iter().fold(Csr::zeros(k, k), |acc, y| acc.add(y));
            let low = gen.index.segment(gen.g).start;
            let full = cur.to_dense();
            let mut dev = 0.0f64;
            for i in 0..low {
                for j in 0..k {
                    dev = dev.max((full[(i, j)] - y1.get(i, j)).abs());
                }
            }
            let row_sum_defect = cur
                .row_sums()
                .into_iter()
                .fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
            let report = GReport {
                iterations: it,
                residual: res,
                low_rows_deviation: dev,
                row_sum_defect,
                history,
            };
            return Ok((cur, report));
        }
    }
    Err(Error::Convergence(format!(
        "G iteration stopped after {max_iter} steps with residual {:.3e}",
        history.last().copied().unwrap_or(f64::NAN)
    )))
}

/// Dense `Q_{j,j} + Σ_n Q_{j,j+n} G_{j+n-1}⋯G_j` given the products `pis[n-1]`.
fn censored_diag(gen: &GeneratorView, j: usize, pis: &[Mat<f64>], cols: &[usize]) -> Mat<f64> {
    let k = gen.k();
    let mut h = Mat::zeros(k, k);
    gen.gamma0.add_to_dense(&mut h, 1.0);
    for (i, &t) in gen.retrial.iter().enumerate() {
        h[(i, i)] -= j as f64 * t;
    }
    for (n, pi) in pis.iter().enumerate() {
        let prod = gen.up[n].mul_dense(pi.as_ref());
        for (jj, &c) in cols.iter().enumerate() {
            let src = prod.col(jj);
            let mut dst = h.col_mut(c);
            for i in 0..k {
                dst[i] += src[i];
            }
        }
    }
    h
}

/// Access to `G_j` with `G_j = G` at and above the boundary.
pub struct GSequence<'a> {
    pub g: &'a LevelDown,
    /// `G_0 … G_{k0-1}` (compressed, `K × m`).
    pub seq: Vec<Mat<f64>>,
}

impl GSequence<'_> {
    pub fn k0(&self) -> usize {
        self.seq.len()
    }

    pub fn get(&self, j: usize) -> MatRef<'_, f64> {
        self.seq.get(j).map_or(self.g.g.as_ref(), |m| m.as_ref())
    }

    /// `G_{j+n-1}⋯G_j` for `n = 1..=kmax`, compressed.
    fn products_above(&self, j: usize, kmax: usize) -> Vec<Mat<f64>> {
        let cols = &self.g.cols;
        let mut out: Vec<Mat<f64>> = Vec::with_capacity(kmax);
        for n in 1..=kmax {
            let top = self.get(j + n - 1).to_owned();
            let mut prod = top;
            for jj in (j..j + n - 1).rev() {
                let gj = self.get(jj);
                let sq = Mat::from_fn(cols.len(), cols.len(), |a, b| gj[(cols[a], b)]);
                prod = matmul(prod.as_ref(), sq.as_ref());
            }
            out.push(prod);
        }
        out
    }

    /// `x G_{n-1}⋯G_j` as a length-`K` vector.
    fn left_chain(&self, x: &[f64], n: usize, j: usize) -> Vec<f64> {
        let cols = &self.g.cols;
        let mut v = x.to_vec();
        for jj in (j..n).rev() {
            let gj = self.get(jj);
            let mut y = vec![0.0; gj.nrows()];
            let compressed: Vec<f64> = (0..cols.len())
                .map(|c| {
                    let col = gj.col(c);
                    v.iter().zip(col.iter()).map(|(a, b)| a * b).sum()
                })
                .collect();
            for (&c, val) in cols.iter().zip(compressed) {
                y[c] = val;
            }
            v = y;
        }
        v
    }
}

/// `G_{b-1}, …, G_0` from the boundary `G_b = G`, returned in ascending order.
pub fn backward_g_sequence(gen: &GeneratorView, g: &LevelDown, boundary: usize) -> Result<Vec<Mat<f64>>> {
    let kmax = gen.kmax();
    let cols = &g.cols;
    let down_c = gen.down1.select_cols(cols).to_dense();
    let mut desc: Vec<Mat<f64>> = Vec::with_capacity(boundary);
    for kk in (0..boundary).rev() {
        // G_j for j > kk is either computed (desc) or G above the boundary.
        let getter = |j: usize| -> MatRef<'_, f64> {
            if j >= boundary {
                g.g.as_ref()
            } else {
                desc[boundary - 1 - j].as_ref()
            }
        };
        let mut pis = Vec::with_capacity(kmax);
        for n in 1..=kmax {
            let mut prod = getter(kk + n).to_owned();
            for jj in (kk + 1..kk + n).rev() {
                let gj = getter(jj);
                let sq = Mat::from_fn(cols.len(), cols.len(), |a, b| gj[(cols[a], b)]);
                prod = matmul(prod.as_ref(), sq.as_ref());
            }
            pis.push(prod);
        }
        let mut h = censored_diag(gen, kk + 1, &pis, cols);
        h *= -1.0;
        let lu = PartialPivLu::new(h.as_ref());
        let rhs = ((kk + 1) as f64) * &down_c;
        let gk = lu.solve(&rhs);
        if !gk.as_ref().is_all_finite() {
            return Err(Error::Singular(format!("censored diagonal at level {}", kk + 1)));
        }
        desc.push(gk);
    }
    desc.reverse();
    Ok(desc)
}

/// `G` is solved to `epsilon · G_TOL_FACTOR`.
pub const G_TOL_FACTOR: f64 = 1e-2;

/// Roundoff level below which boundary tolerances cannot be met.
pub const BOUNDARY_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryChoice {
    pub k0: usize,
    /// Largest entrywise change of the distribution when the boundary was last doubled;
    /// NaN when the boundary was fixed by the caller.
    pub defect: f64,
    pub tried: Vec<(usize, f64)>,
}

/// Largest entrywise difference of two distributions, missing levels read as zero.
pub fn distribution_defect(a: &StationaryDistribution, b: &StationaryDistribution) -> f64 {
    let levels = a.levels.len().max(b.levels.len());
    let mut worst: f64 = 0.0;
    for i in 0..levels {
        match (a.levels.get(i), b.levels.get(i)) {
            (Some(x), Some(y)) => {
                for (u, v) in x.iter().zip(y) {
                    worst = worst.max((u - v).abs());
                }
            }
            (Some(x), None) | (None, Some(x)) => {
                worst = x.iter().fold(worst, |m, v| m.max(v.abs()));
            }
            (None, None) => {}
        }
    }
    worst
}

fn solve_with_boundary(
    gen: &GeneratorView,
    g: &LevelDown,
    cfg: &SystemConfig,
    boundary: usize,
) -> Result<StationaryDistribution> {
    let seq = backward_g_sequence(gen, g, boundary)?;
    forward(gen, &GSequence { g, seq }, cfg)
}

/// Doubling search for the boundary `k0` above which `G_k` is replaced by `G`: accepted once
/// doubling it moves no probability by more than `max(epsilon, BOUNDARY_FLOOR)`.
pub fn choose_k0(
    gen: &GeneratorView,
    g: &LevelDown,
    cfg: &SystemConfig,
) -> Result<(BoundaryChoice, StationaryDistribution)> {
    let opts = &cfg.solver;
    let limit = opts.n_max;
    let mut b = opts.k0_start.max(1);
    let mut prev = solve_with_boundary(gen, g, cfg, b)?;
    let mut tried = Vec::new();
    loop {
        let b2 = 2 * b;
        if b2 > limit {
            return Err(Error::Convergence(format!(
                "boundary search exceeded N_max = {limit}; last defects {tried:?}"
            )));
        }
        let cur = solve_with_boundary(gen, g, cfg, b2)?;
        let d = distribution_defect(&prev, &cur);
        tried.push((b2, d));
        if d <= opts.epsilon.max(BOUNDARY_FLOOR) {
            return Ok((
                BoundaryChoice {
                    k0: b2,
                    defect: d,
                    tried,
                },
                cur,
            ));
        }
        prev = cur;
        b = b2;
    }
}

/// Stationary distribution over orbit levels `0..=N`.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryDistribution {
    #[serde(skip)]
    pub levels: Vec<Vec<f64>>,
    pub n: usize,
    pub k0: usize,
    /// `Σ_{j≤N} P_j e`.
    pub captured_mass: f64,
    /// Geometric estimate of the mass above `N`.
    pub tail_mass_bound: f64,
    pub boundary_defect: f64,
    pub g_iterations: usize,
    pub g_residual: f64,
    pub epsilon: f64,
    pub epsilon0: f64,
    pub fingerprint: String,
    pub c: usize,
    pub g: usize,
    #[serde(skip)]
    pub index: StateIndex,
    pub seconds: f64,
}

impl StationaryDistribution {
    /// `P(i, b)`.
    pub fn joint(&self, i: usize, b: usize) -> Result<f64> {
        if i > self.n || b > self.c {
            return Err(Error::Domain(format!(
                "(i, b) = ({i}, {b}) outside 0..={} × 0..={}",
                self.n, self.c
            )));
        }
        Ok(self.levels[i][self.index.segment(b)].iter().sum())
    }

    pub fn level_mass(&self, i: usize) -> f64 {
        self.levels.get(i).map_or(0.0, |p| p.iter().sum())
    }

    /// Phase-resolved sub-vector `P_{i,b}`.
    pub fn sub_vector(&self, i: usize, b: usize) -> &[f64] {
        &self.levels[i][self.index.segment(b)]
    }

    /// `level,busy,probability` rows after a `#`-prefixed metadata header.
    pub fn write_csv<W: Write>(&self, out: &mut W, header: &[(String, String)]) -> Result<()> {
        for (k, v) in header {
            writeln!(out, "# {k}={v}")?;
        }
        let own = [
            ("captured_mass", crate::fmt_sig(self.captured_mass)),
            ("tail_mass_bound", crate::fmt_sig(self.tail_mass_bound)),
            ("epsilon", crate::fmt_sig(self.epsilon)),
            ("epsilon0", crate::fmt_sig(self.epsilon0)),
            ("k0", self.k0.to_string()),
            ("N", self.n.to_string()),
        ];
        for (k, v) in own {
            if !header.iter().any(|(h, _)| h == k) {
                writeln!(out, "# {k}={v}")?;
            }
        }
        writeln!(out, "level,busy,probability")?;
        for i in 0..=self.n {
            for b in 0..=self.c {
                writeln!(out, "{i},{b},{}", crate::fmt_sig(self.joint(i, b)?))?;
            }
        }
        Ok(())
    }
}

/// Full solve: stability gate, `G`, boundary, censored forward recursion.
///
/// Dense kernels run sequentially so one solve is deterministic; sweeps parallelize across solves.
pub fn stationary(cfg: &SystemConfig) -> Result<StationaryDistribution> {
    let t0 = Instant::now();
    let stab = stability_check(cfg)?;
    if !stab.admits_solution() {
        return Err(Error::Unstable(format!(
            "rho = {:.6}, drift margin = {}",
            stab.rho,
            stab.drift_margin.map_or("n/a".into(), |m| format!("{m:.6}"))
        )));
    }
    faer::set_global_parallelism(faer::Par::Seq);
    let gen = GeneratorView::build(cfg)?;
    let opts = &cfg.solver;
    // G error feeds into every G_k; keep it well under the boundary tolerance
    let (g, grep) = compute_g(&gen, opts.epsilon * G_TOL_FACTOR, opts.max_g_iter)?;
    let (choice, mut dist) = match opts.k0 {
        Some(b) => (
            BoundaryChoice {
                k0: b,
                defect: f64::NAN,
                tried: Vec::new(),
            },
            solve_with_boundary(&gen, &g, cfg, b)?,
        ),
        None => choose_k0(&gen, &g, cfg)?,
    };
    dist.boundary_defect = choice.defect;
    dist.g_iterations = grep.iterations;
    dist.g_residual = grep.residual;
    dist.seconds = t0.elapsed().as_secs_f64();
    Ok(dist)
}

/// Forward recursion `P_j = Σ_i P_i H̄_{i,j} (−H̄_{j,j})^{-1}` with the tail stopping rule.
pub fn forward(gen: &GeneratorView, gs: &GSequence<'_>, cfg: &SystemConfig) -> Result<StationaryDistribution> {
    let opts = &cfg.solver;
    let kmax = gen.kmax();
    let cols = &gs.g.cols;

    let h00 = censored_diag(gen, 0, &gs.products_above(0, kmax), cols);
    let p0 = linalg::solve_null_left(h00.as_ref())?;
    let mut levels = vec![p0];
    let mut total: f64 = 1.0;
    let k0 = gs.k0();

    let finish = |levels: Vec<Vec<f64>>, tail_ratio: f64| -> StationaryDistribution {
        let sum: f64 = levels.iter().map(|p| p.iter().sum::<f64>()).sum();
        let last: f64 = levels.last().unwrap().iter().sum();
        let tail = if tail_ratio < 1.0 {
            last * tail_ratio / (1.0 - tail_ratio)
        } else {
            f64::INFINITY
        };
        let norm = sum + if tail.is_finite() { tail } else { 0.0 };
        let levels: Vec<Vec<f64>> = levels
            .into_iter()
            .map(|p| p.into_iter().map(|x| x / norm).collect())
            .collect();
        StationaryDistribution {
            n: levels.len() - 1,
            levels,
            k0,
            captured_mass: sum / norm,
            tail_mass_bound: if tail.is_finite() { tail / norm } else { f64::INFINITY },
            boundary_defect: f64::NAN,
            g_iterations: 0,
            g_residual: f64::NAN,
            epsilon: opts.epsilon,
            epsilon0: opts.epsilon0,
            fingerprint: crate::config::fingerprint(cfg),
            c: cfg.c,
            g: cfg.g,
            index: gen.index.clone(),
            seconds: 0.0,
        }
    };

    for j in 1..=opts.n_max {
        let mut rhs = vec![0.0; gen.k()];
        for i in j.saturating_sub(kmax)..j {
            let pi = &levels[i];
            // P_i Q_{i,j}
            let direct = gen.up[j - i - 1].vec_mul(pi);
            for (r, d) in rhs.iter_mut().zip(direct) {
                *r += d;
            }
            // Σ_{n>j} P_i Q_{i,n} G_{n-1}⋯G_j
            for n in (j + 1)..=(i + kmax) {
                let v = gen.up[n - i - 1].vec_mul(pi);
                let chained = gs.left_chain(&v, n, j);
                for (r, d) in rhs.iter_mut().zip(chained) {
                    *r += d;
                }
            }
        }
        let mut h = censored_diag(gen, j, &gs.products_above(j, kmax), cols);
        h *= -1.0;
        let lu = PartialPivLu::new(h.as_ref());
        let b = Mat::from_fn(gen.k(), 1, |r, _| rhs[r]);
        let x = lu.solve_transpose(&b);
        let pj: Vec<f64> = (0..gen.k()).map(|r| x[(r, 0)].max(0.0)).collect();
        if pj.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(format!("censored diagonal at level {j}")));
        }
        let mass: f64 = pj.iter().sum();
        let prev: f64 = levels[j - 1].iter().sum();
        levels.push(pj);
        total += mass;
        let ratio = if prev > 0.0 { mass / prev } else { 0.0 };
        let tail = if ratio < 1.0 { mass * ratio / (1.0 - ratio) } else { f64::INFINITY };
        if j > k0 && mass / total < opts.epsilon0 && tail / total < opts.epsilon0 {
            return Ok(finish(levels, ratio));
        }
    }
    let n = levels.len() - 1;
    let last: f64 = levels[n].iter().sum();
    let prev: f64 = levels[n - 1].iter().sum();
    let partial = finish(levels, if prev > 0.0 { last / prev } else { 0.0 });
    Err(Error::Truncation {
        n_max: opts.n_max,
        tail: partial.tail_mass_bound,
        partial: Box::new(partial),
    })
}

/// Dense `H̄_{i,j}` for `0 ≤ i ≤ j ≤ n` (small instances only).
pub fn censored_blocks(gen: &GeneratorView, gs: &GSequence<'_>, n: usize) -> Vec<Vec<Option<Mat<f64>>>> {
    let k = gen.k();
    let kmax = gen.kmax();
    let mut out = vec![vec![None; n + 1]; n + 1];
    for i in 0..=n {
        for j in i..=n {
            let mut h = if i == j {
                gen.q_diag(i).to_dense()
            } else if j - i <= kmax {
                gen.up[j - i - 1].to_dense()
            } else {
                Mat::zeros(k, k)
            };
            for m in (j + 1)..=(i + kmax) {
                let mut prod = gen.up[m - i - 1].to_dense();
                for jj in (j..m).rev() {
                    let gj = LevelDown {
                        cols: gs.g.cols.clone(),
                        g: gs.get(jj).to_owned(),
                    };
                    prod = &prod * gj.to_dense();
                }
                h += prod;
            }
            out[i][j] = Some(h);
        }
    }
    out
}

/// `F_0 = I`, `F_j = Σ_{i<j} F_i H̄_{i,j} (−H̄_{j,j})^{-1}` (small instances only).
pub fn forward_f(hbar: &[Vec<Option<Mat<f64>>>]) -> Vec<Mat<f64>> {
    let n = hbar.len() - 1;
    let k = hbar[0][0].as_ref().unwrap().nrows();
    let mut fs = vec![linalg::identity(k)];
    for j in 1..=n {
        let mut acc = Mat::zeros(k, k);
        for (i, f) in fs.iter().enumerate() {
            acc += f * hbar[i][j].as_ref().unwrap();
        }
        let neg: Mat<f64> = -hbar[j][j].as_ref().unwrap();
        let lu = PartialPivLu::new(neg.as_ref());
        // acc · (−H̄_jj)^{-1} = ((−H̄_jj)^{-T} accᵀ)ᵀ
        let x = lu.solve_transpose(acc.transpose().to_owned());
        fs.push(x.transpose().to_owned());
    }
    fs
}
