//! Kronecker algebra, a small CSR type and the dense kernels the solver leans on.

use std::collections::BTreeMap;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatRef};

use crate::error::{Error, Result};

pub fn identity(n: usize) -> Mat<f64> {
    Mat::identity(n, n)
}

pub fn from_rows(rows: &[Vec<f64>]) -> Mat<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

pub fn to_rows(a: MatRef<'_, f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

pub fn row_sums(a: MatRef<'_, f64>) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).sum())
        .collect()
}

pub fn max_abs(a: MatRef<'_, f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// Infinity norm (max absolute row sum).
pub fn norm_inf(a: MatRef<'_, f64>) -> f64 {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn kron(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let (p, q) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * p, a.ncols() * q, |i, j| {
        a[(i / p, j / q)] * b[(i % p, j % q)]
    })
}

pub fn kron_sum(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if a.nrows() != a.ncols() || b.nrows() != b.ncols() {
        return Err(Error::Dimension(format!(
            "kron_sum needs square operands, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let left = kron(a, identity(b.nrows()).as_ref());
    let right = kron(identity(a.nrows()).as_ref(), b);
    Ok(left + right)
}

/// `A^{⊗l}`, with `A^{⊗0} = [1]`.
pub fn kron_power_product(a: MatRef<'_, f64>, l: usize) -> Mat<f64> {
    let mut out = Mat::<f64>::identity(1, 1);
    for _ in 0..l {
        out = kron(out.as_ref(), a);
    }
    out
}

/// `A^{⊕l} = Σ_{m<l} I_{n^m} ⊗ A ⊗ I_{n^{l-m-1}}` with `n` the row count of `A`.
///
/// Rectangular `A` is allowed; an `n × k` operand yields an `n^l × k·n^{l-1}` result,
/// so the column vector `S₀` maps `M^l` phase tuples onto `M^{l-1}` tuples.
/// `A^{⊕0}` is the 1×1 zero.
pub fn kron_power_sum(a: MatRef<'_, f64>, l: usize) -> Mat<f64> {
    if l == 0 {
        return Mat::zeros(1, 1);
    }
    let n = a.nrows();
    let k = a.ncols();
    let rows = n.pow(l as u32);
    let cols = k * n.pow(l as u32 - 1);
    let mut out = Mat::<f64>::zeros(rows, cols);
    for m in 0..l {
        let left = identity(n.pow(m as u32));
        let right = identity(n.pow((l - m - 1) as u32));
        let term = kron(kron(left.as_ref(), a).as_ref(), right.as_ref());
        out += term;
    }
    out
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_diag(d: &[f64]) -> Self {
        Self::from_triplets(
            d.len(),
            d.len(),
            d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect(),
        )
    }

    /// Duplicates are summed; exact zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows_of = Vec::with_capacity(t.len());
        for (i, j, v) in t {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) outside {nrows}x{ncols}");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                rows_of.push(i);
                last = Some((i, j));
            }
        }
        let mut kept_idx = Vec::with_capacity(indices.len());
        let mut kept_val = Vec::with_capacity(values.len());
        for ((&i, &j), &v) in rows_of.iter().zip(&indices).zip(&values) {
            if v != 0.0 {
                indptr[i + 1] += 1;
                kept_idx.push(j);
                kept_val.push(v);
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices: kept_idx,
            values: kept_val,
        }
    }

    pub fn from_dense(a: MatRef<'_, f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                let v = a[(i, j)];
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[s..e]
            .iter()
            .copied()
            .zip(self.values[s..e].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut out = Mat::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            out[(i, j)] += v;
        }
        out
    }

    pub fn kron(&self, other: &Csr) -> Csr {
        let mut t = Vec::with_capacity(self.nnz() * other.nnz());
        for (i, j, a) in self.triplets() {
            for (p, q, b) in other.triplets() {
                t.push((i * other.nrows + p, j * other.ncols + q, a * b));
            }
        }
        Csr::from_triplets(self.nrows * other.nrows, self.ncols * other.ncols, t)
    }

    pub fn scale(&self, s: f64) -> Csr {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        if s == 0.0 {
            return Csr::zeros(self.nrows, self.ncols);
        }
        out
    }

    pub fn add(&self, other: &Csr) -> Csr {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let t = self.triplets().chain(other.triplets()).collect();
        Csr::from_triplets(self.nrows, self.ncols, t)
    }

    /// Left-multiply every row `i` by `d[i]`.
    pub fn scale_rows(&self, d: &[f64]) -> Csr {
        let t = self
            .triplets()
            .map(|(i, j, v)| (i, j, v * d[i]))
            .collect();
        Csr::from_triplets(self.nrows, self.ncols, t)
    }

    pub fn transpose(&self) -> Csr {
        let t = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Csr::from_triplets(self.ncols, self.nrows, t)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Keep only the listed columns, renumbered `0..cols.len()`.
    pub fn select_cols(&self, cols: &[usize]) -> Csr {
        let mut map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            map[c] = k;
        }
        let t = self
            .triplets()
            .filter(|&(_, j, _)| map[j] != usize::MAX)
            .map(|(i, j, v)| (i, map[j], v))
            .collect();
        Csr::from_triplets(self.nrows, cols.len(), t)
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `xᵀ A`.
    pub fn vec_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, v) in self.row(i) {
                    out[j] += xi * v;
                }
            }
        }
        out
    }

    /// `A B` for dense `B`.
    pub fn mul_dense(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(b.nrows(), self.ncols);
        let n = b.ncols();
        // row-major copies so each nonzero becomes one contiguous axpy
        let mut rows = vec![0.0; b.nrows() * n];
        for c in 0..n {
            for (r, &v) in b.col(c).iter().enumerate() {
                rows[r * n + c] = v;
            }
        }
        let mut acc = vec![0.0; self.nrows * n];
        for i in 0..self.nrows {
            let dst = &mut acc[i * n..(i + 1) * n];
            for (j, v) in self.row(i) {
                for (d, s) in dst.iter_mut().zip(&rows[j * n..(j + 1) * n]) {
                    *d += v * s;
                }
            }
        }
        Mat::from_fn(self.nrows, n, |i, c| acc[i * n + c])
    }

    /// Add `self` into the dense matrix `out`.
    pub fn add_to_dense(&self, out: &mut Mat<f64>, scale: f64) {
        for (i, j, v) in self.triplets() {
            out[(i, j)] += scale * v;
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }
}

pub fn kron_chain(factors: &[&Csr]) -> Csr {
    let mut out = Csr::identity(1);
    for f in factors {
        out = out.kron(f);
    }
    out
}

/// Square grid of sparse blocks indexed by server occupancy `(l, l')`.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    blocks: BTreeMap<(usize, usize), Csr>,
}

impl BlockMatrix {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut offsets = vec![0];
        for s in &sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        Self {
            sizes,
            offsets,
            blocks: BTreeMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn block(&self, l: usize, lp: usize) -> Option<&Csr> {
        self.blocks.get(&(l, lp))
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&(usize, usize), &Csr)> {
        self.blocks.iter()
    }

    /// Accumulate `b` into block `(l, lp)`.
    pub fn add_block(&mut self, l: usize, lp: usize, b: Csr) -> Result<()> {
        if b.nrows() != self.sizes[l] || b.ncols() != self.sizes[lp] {
            return Err(Error::Dimension(format!(
                "block ({l},{lp}) must be {}x{}, got {}x{}",
                self.sizes[l],
                self.sizes[lp],
                b.nrows(),
                b.ncols()
            )));
        }
        let entry = self.blocks.entry((l, lp));
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(b);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = o.get().add(&b);
                o.insert(sum);
            }
        }
        Ok(())
    }

    pub fn to_csr(&self) -> Csr {
        let n = self.order();
        let t = self
            .blocks
            .iter()
            .flat_map(|(&(l, lp), b)| {
                let (r0, c0) = (self.offsets[l], self.offsets[lp]);
                b.triplets().map(move |(i, j, v)| (r0 + i, c0 + j, v))
            })
            .collect();
        Csr::from_triplets(n, n, t)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        self.to_csr().to_dense()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.order()];
        for (&(l, lp), b) in &self.blocks {
            let xs = &x[self.offsets[lp]..self.offsets[lp + 1]];
            let y = b.mul_vec(xs);
            for (k, v) in y.into_iter().enumerate() {
                out[self.offsets[l] + k] += v;
            }
        }
        out
    }
}

/// Solve `A x = b` by partial-pivot LU, checking the residual.
pub fn solve_linear(a: MatRef<'_, f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "solve_linear with {}x{} and rhs {}",
            n,
            a.ncols(),
            b.len()
        )));
    }
    let lu = PartialPivLu::new(a);
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    let xs: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    check_residual(a, &xs, b)?;
    Ok(xs)
}

fn check_residual(a: MatRef<'_, f64>, x: &[f64], b: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite solution".into()));
    }
    let n = a.nrows();
    let scale = norm_inf(a) * x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut s = -b[i];
        for j in 0..n {
            s += a[(i, j)] * x[j];
        }
        worst = worst.max(s.abs());
    }
    if worst > 1e-10 * scale.max(1.0) {
        return Err(Error::Singular(format!("residual {worst:.3e}")));
    }
    Ok(())
}

/// Row vector `x` with `x A = 0`, `x e = 1`, for `A` with a one-dimensional left null space.
pub fn solve_null_left(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension("solve_null_left needs a square matrix".into()));
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let pivot = (0..n)
        .max_by(|&i, &j| a[(i, i)].abs().total_cmp(&a[(j, j)].abs()))
        .unwrap();
    // x B = e_pivot where B is A with column `pivot` replaced by ones.
    let bt = Mat::from_fn(n, n, |i, j| if i == pivot { 1.0 } else { a[(j, i)] });
    let mut rhs = vec![0.0; n];
    rhs[pivot] = 1.0;
    let x = solve_linear(bt.as_ref(), &rhs)?;
    let s: f64 = x.iter().sum();
    Ok(x.into_iter().map(|v| v / s).collect())
}

/// Stationary vector of an irreducible conservative generator by state reduction (GTH).
pub fn gth_stationary(q: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let n = q.nrows();
    if q.ncols() != n || n == 0 {
        return Err(Error::Dimension("generator must be square and nonempty".into()));
    }
    let mut a = Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { q[(i, j)] });
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "negative off-diagonal entry at ({i},{j})"
                )));
            }
        }
    }
    for k in (1..n).rev() {
        let s: f64 = (0..k).map(|j| a[(k, j)]).sum();
        if s <= 0.0 {
            return Err(Error::InvalidConfig(
                "generator is reducible (state reduction hit a zero pivot)".into(),
            ));
        }
        for i in 0..k {
            a[(i, k)] /= s;
        }
        for i in 0..k {
            let aik = a[(i, k)];
            if aik != 0.0 {
                for j in 0..k {
                    if i != j {
                        a[(i, j)] += aik * a[(k, j)];
                    }
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    for k in 1..n {
        x[k] = (0..k).map(|i| x[i] * a[(i, k)]).sum();
    }
    let total: f64 = x.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidConfig("state reduction failed".into()));
    }
    Ok(x.into_iter().map(|v| v / total).collect())
}

/// Sign and natural log of `|det A|` from an LU factorization.
pub fn log_det(a: MatRef<'_, f64>) -> (f64, f64) {
    let n = a.nrows();
    let lu = PartialPivLu::new(a);
    let u = lu.U();
    let mut sign = 1.0;
    let mut log = 0.0;
    for i in 0..n {
        let d = u[(i, i)];
        if d == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        if d < 0.0 {
            sign = -sign;
        }
        log += d.abs().ln();
    }
    let (fwd, _) = lu.P().arrays();
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut k = start;
        while !seen[k] {
            seen[k] = true;
            k = fwd[k];
            len += 1;
        }
        if len % 2 == 0 {
            sign = -sign;
        }
    }
    (sign, log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_power_sum_of_column_vector() {
        let s0 = from_rows(&[vec![5.0], vec![3.0]]);
        let k = kron_power_sum(s0.as_ref(), 2);
        let expect = kron(s0.as_ref(), identity(2).as_ref()) + kron(identity(2).as_ref(), s0.as_ref());
        assert_eq!((k.nrows(), k.ncols()), (4, 2));
        assert_eq!(k, expect);
        assert_eq!(k[(0, 0)], 10.0);
        assert_eq!(k[(1, 0)], 3.0);
        assert_eq!(k[(1, 1)], 5.0);
    }

    #[test]
    fn kron_sum_of_scalars() {
        let a = from_rows(&[vec![-1.0]]);
        let b = from_rows(&[vec![-2.0]]);
        assert_eq!(kron_sum(a.as_ref(), b.as_ref()).unwrap()[(0, 0)], -3.0);
        let r = from_rows(&[vec![1.0, 2.0]]);
        assert!(kron_sum(r.as_ref(), b.as_ref()).is_err());
    }

    #[test]
    fn power_conventions() {
        let s = from_rows(&[vec![-2.0, 1.0], vec![0.5, -3.0]]);
        assert_eq!(kron_power_product(s.as_ref(), 0)[(0, 0)], 1.0);
        assert_eq!(kron_power_sum(s.as_ref(), 1), s);
        assert_eq!(kron_power_sum(s.as_ref(), 0)[(0, 0)], 0.0);
    }

    #[test]
    fn gth_two_state() {
        let q = from_rows(&[vec![-3.0, 3.0], vec![8.0, -8.0]]);
        let x = gth_stationary(q.as_ref()).unwrap();
        assert!((x[0] - 8.0 / 11.0).abs() < 1e-15);
        assert!((x[1] - 3.0 / 11.0).abs() < 1e-15);
        let one = from_rows(&[vec![0.0]]);
        assert_eq!(gth_stationary(one.as_ref()).unwrap(), vec![1.0]);
    }

    #[test]
    fn gth_rejects_reducible() {
        let q = from_rows(&[vec![-1.0, 1.0], vec![0.0, 0.0]]);
        assert!(gth_stationary(q.as_ref()).is_err());
    }

    #[test]
    fn null_left_matches_gth() {
        let q = from_rows(&[
            vec![-4.0, 1.0, 3.0],
            vec![2.0, -2.5, 0.5],
            vec![0.25, 0.75, -1.0],
        ]);
        let a = gth_stationary(q.as_ref()).unwrap();
        let b = solve_null_left(q.as_ref()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn solve_identity_and_singular() {
        let x = solve_linear(identity(3).as_ref(), &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(x, vec![1.0; 3]);
        let s = from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(solve_linear(s.as_ref(), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn log_det_sign() {
        let a = from_rows(&[vec![0.0, 2.0], vec![3.0, 0.0]]);
        let (s, l) = log_det(a.as_ref());
        assert_eq!(s, -1.0);
        assert!((l - 6f64.ln()).abs() < 1e-14);
        let b = from_rows(&[vec![2.0, 1.0, 0.0], vec![0.0, -1.0, 4.0], vec![1.0, 0.0, 3.0]]);
        let (s, l) = log_det(b.as_ref());
        assert!((s * l.exp() - (-6.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn csr_round_trip_and_products() {
        let a = from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 0.0, -1.0]]);
        let c = Csr::from_dense(a.as_ref());
        assert_eq!(c.nnz(), 3);
        assert_eq!(c.to_dense(), a);
        assert_eq!(c.mul_vec(&[1.0, 2.0, 3.0]), vec![7.0, -3.0]);
        assert_eq!(c.vec_mul(&[1.0, 1.0]), vec![1.0, 0.0, 1.0]);
        let b = from_rows(&[vec![1.0, 1.0], vec![2.0, 0.0], vec![0.0, 3.0]]);
        assert_eq!(c.mul_dense(b.as_ref()), &a * &b);
        let k = c.kron(&Csr::from_dense(b.as_ref()));
        assert_eq!(k.to_dense(), kron(a.as_ref(), b.as_ref()));
        assert_eq!(c.transpose().to_dense(), a.transpose().to_owned());
    }

    #[test]
    fn block_matrix_assembly() {
        let mut bm = BlockMatrix::new(vec![1, 2]);
        bm.add_block(0, 1, Csr::from_dense(from_rows(&[vec![1.0, 2.0]]).as_ref()))
            .unwrap();
        bm.add_block(1, 1, Csr::identity(2)).unwrap();
        bm.add_block(1, 1, Csr::identity(2)).unwrap();
        assert!(bm.add_block(0, 0, Csr::identity(2)).is_err());
        let d = bm.to_dense();
        assert_eq!(d[(0, 2)], 2.0);
        assert_eq!(d[(2, 2)], 2.0);
        assert_eq!(bm.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, 2.0, 2.0]);
    }
}
