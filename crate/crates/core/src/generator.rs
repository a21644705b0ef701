//! Level-structured generator of the orbit-size chain and its limiting blocks.

use std::io::Write;
use std::ops::Range;

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg::{self, kron_power_product, kron_power_sum, BlockMatrix, Csr};
use crate::models::SystemConfig;

/// Flat index within a level ↔ `(b, r, ν, γ, m¹..mᵇ)`, lexicographic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateIndex {
    pub c: usize,
    pub r: usize,
    pub w: usize,
    pub v: usize,
    pub m: usize,
    offsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateTuple {
    pub b: usize,
    pub r: usize,
    pub nu: usize,
    pub gamma: usize,
    pub phases: Vec<usize>,
}

impl StateIndex {
    pub fn new(c: usize, r: usize, w: usize, v: usize, m: usize) -> Self {
        let mut offsets = vec![0];
        for b in 0..=c {
            offsets.push(offsets[b] + r * w * v * m.pow(b as u32));
        }
        Self {
            c,
            r,
            w,
            v,
            m,
            offsets,
        }
    }

    pub fn for_config(cfg: &SystemConfig) -> Self {
        Self::new(cfg.c, cfg.r(), cfg.w(), cfg.v(), cfg.m())
    }

    pub fn len(&self) -> usize {
        self.offsets[self.c + 1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// States with `b` busy servers.
    pub fn segment(&self, b: usize) -> Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        (0..=self.c).map(|b| self.segment(b).len()).collect()
    }

    /// Busy-server count of a flat index.
    pub fn busy(&self, idx: usize) -> usize {
        self.offsets.partition_point(|&o| o <= idx) - 1
    }

    pub fn index(&self, t: &StateTuple) -> usize {
        let mut local = (t.r * self.w + t.nu) * self.v + t.gamma;
        for &p in &t.phases {
            local = local * self.m + p;
        }
        self.offsets[t.b] + local
    }

    pub fn tuple(&self, idx: usize) -> StateTuple {
        let b = self.busy(idx);
        let mut local = idx - self.offsets[b];
        let mut phases = vec![0; b];
        for k in (0..b).rev() {
            phases[k] = local % self.m;
            local /= self.m;
        }
        let gamma = local % self.v;
        local /= self.v;
        let nu = local % self.w;
        let r = local / self.w;
        StateTuple {
            b,
            r,
            nu,
            gamma,
            phases,
        }
    }
}

/// Blocks of the generator; `Q_{i,i}`, `Q_{i,i-1}` follow from `i` by linearity.
#[derive(Debug, Clone)]
pub struct GeneratorView {
    pub index: StateIndex,
    pub c: usize,
    pub g: usize,
    /// `Q_{i,i}` at `i = 0`.
    pub gamma0: Csr,
    /// Diagonal of `T1 ⊗ I` on levels with fewer than `g` busy servers, zero elsewhere.
    pub retrial: Vec<f64>,
    /// `Q_{i,i-1} / i`.
    pub down1: Csr,
    /// `up[k-1] = Q_{i,i+k}`.
    pub up: Vec<Csr>,
    blocks_gamma0: BlockMatrix,
    blocks_down1: BlockMatrix,
    blocks_up: Vec<BlockMatrix>,
    delta: Vec<f64>,
}

struct Parts {
    r: usize,
    w: usize,
    v: usize,
    m: usize,
    t: Mat<f64>,
    t1: Mat<f64>,
    d: Vec<Mat<f64>>,
    e: Vec<Mat<f64>>,
    s: Mat<f64>,
    s0: Mat<f64>,
    alpha: Mat<f64>,
}

impl Parts {
    fn new(cfg: &SystemConfig) -> Self {
        Self {
            r: cfg.r(),
            w: cfg.w(),
            v: cfg.v(),
            m: cfg.m(),
            t: cfg.mmpp.generator(),
            t1: cfg.mmpp.t1_matrix(),
            d: cfg.bmap1.matrices.clone(),
            e: cfg.bmap2.matrices.clone(),
            s: cfg.service.s.clone(),
            s0: cfg.service.exit_column(),
            alpha: cfg.service.alpha_row(),
        }
    }

    fn dk(&self, k: usize) -> Option<&Mat<f64>> {
        self.d.get(k).filter(|m| linalg::max_abs(m.as_ref()) > 0.0)
    }

    fn ek(&self, k: usize) -> Option<&Mat<f64>> {
        self.e.get(k).filter(|m| linalg::max_abs(m.as_ref()) > 0.0)
    }

    fn sp(m: &Mat<f64>) -> Csr {
        Csr::from_dense(m.as_ref())
    }

    fn eye(n: usize) -> Csr {
        Csr::identity(n)
    }

    fn ml(&self, l: usize) -> usize {
        self.m.pow(l as u32)
    }

    /// `I_{M^l} ⊗ ς^{⊗r}`.
    fn start(&self, l: usize, r: usize) -> Csr {
        Self::eye(self.ml(l)).kron(&Self::sp(&kron_power_product(self.alpha.as_ref(), r)))
    }

    /// `T ⊕ D ⊕ E ⊕ S^{⊕l}` with arbitrary `D`, `E` blocks.
    fn diag_block(&self, l: usize, d: &Mat<f64>, e: &Mat<f64>) -> Csr {
        let (ir, iw, iv, im) = (Self::eye(self.r), Self::eye(self.w), Self::eye(self.v), Self::eye(self.ml(l)));
        let t = linalg::kron_chain(&[&Self::sp(&self.t), &iw, &iv, &im]);
        let dd = linalg::kron_chain(&[&ir, &Self::sp(d), &iv, &im]);
        let ee = linalg::kron_chain(&[&ir, &iw, &Self::sp(e), &im]);
        let ss = Self::eye(self.r * self.w * self.v).kron(&Self::sp(&kron_power_sum(self.s.as_ref(), l)));
        t.add(&dd).add(&ee).add(&ss)
    }

    /// `I_{RWV} ⊗ S₀^{⊕l}`.
    fn service(&self, l: usize) -> Csr {
        Self::eye(self.r * self.w * self.v).kron(&Self::sp(&kron_power_sum(self.s0.as_ref(), l)))
    }

    /// `I_R ⊗ D ⊗ I_V ⊗ I_{M^l} ⊗ ς^{⊗r}`.
    fn primary(&self, l: usize, r: usize, d: &Mat<f64>) -> Csr {
        linalg::kron_chain(&[&Self::eye(self.r), &Self::sp(d), &Self::eye(self.v), &self.start(l, r)])
    }

    /// `I_{RW} ⊗ E ⊗ I_{M^l} ⊗ ς^{⊗r}`.
    fn priority(&self, l: usize, r: usize, e: &Mat<f64>) -> Csr {
        linalg::kron_chain(&[&Self::eye(self.r * self.w), &Self::sp(e), &self.start(l, r)])
    }

    /// `T1 ⊗ I_{WVM^l} ⊗ ς`.
    fn retrial_success(&self, l: usize) -> Csr {
        linalg::kron_chain(&[&Self::sp(&self.t1), &Self::eye(self.w * self.v), &self.start(l, 1)])
    }
}

impl GeneratorView {
    pub fn build(cfg: &SystemConfig) -> Result<Self> {
        let (c, g) = (cfg.c, cfg.g);
        if c < 2 || g < 1 || g >= c {
            return Err(Error::InvalidConfig("g must satisfy 1 ≤ g ≤ c−1".into()));
        }
        let p = Parts::new(cfg);
        let index = StateIndex::for_config(cfg);
        let sizes = index.segment_sizes();
        let zero_w = Mat::<f64>::zeros(p.w, p.w);
        let zero_v = Mat::<f64>::zeros(p.v, p.v);

        let mut gamma0 = BlockMatrix::new(sizes.clone());
        for l in 0..=c {
            gamma0.add_block(l, l, p.diag_block(l, &p.d[0], &p.e[0]))?;
            if l >= 1 {
                gamma0.add_block(l, l - 1, p.service(l))?;
            }
            for r in 1..=(c - l) {
                if l < g && r <= g - l {
                    let d = p.dk(r).unwrap_or(&zero_w);
                    let e = p.ek(r).unwrap_or(&zero_v);
                    if p.dk(r).is_some() {
                        gamma0.add_block(l, l + r, p.primary(l, r, d))?;
                    }
                    if p.ek(r).is_some() {
                        gamma0.add_block(l, l + r, p.priority(l, r, e))?;
                    }
                } else if let Some(e) = p.ek(r) {
                    gamma0.add_block(l, l + r, p.priority(l, r, e))?;
                }
            }
        }

        let mut down1 = BlockMatrix::new(sizes.clone());
        let mut retrial = vec![0.0; index.len()];
        for l in 0..g {
            down1.add_block(l, l + 1, p.retrial_success(l))?;
            let seg = index.segment(l);
            let per_r = seg.len() / p.r;
            for (k, slot) in retrial[seg].iter_mut().enumerate() {
                *slot = cfg.mmpp.t1[k / per_r];
            }
        }

        let kmax = (1..=cfg.bmap1.max_batch().max(cfg.bmap2.max_batch()))
            .filter(|&k| p.dk(k).is_some() || p.ek(k).is_some())
            .max()
            .unwrap_or(0);
        let mut blocks_up = Vec::with_capacity(kmax);
        for k in 1..=kmax {
            let mut up = BlockMatrix::new(sizes.clone());
            for l in 0..=c {
                if l < g {
                    if let Some(d) = p.dk(k + g - l) {
                        up.add_block(l, g, p.primary(l, g - l, d))?;
                    }
                } else if let Some(d) = p.dk(k) {
                    up.add_block(l, l, p.primary(l, 0, d))?;
                }
                if let Some(e) = p.ek(k + c - l) {
                    up.add_block(l, c, p.priority(l, c - l, e))?;
                }
            }
            blocks_up.push(up);
        }

        let gamma0_csr = gamma0.to_csr();
        let delta = gamma0_csr.diag().into_iter().map(|x| -x).collect();
        Ok(Self {
            c,
            g,
            gamma0: gamma0_csr,
            retrial,
            down1: down1.to_csr(),
            up: blocks_up.iter().map(|b| b.to_csr()).collect(),
            blocks_gamma0: gamma0,
            blocks_down1: down1,
            blocks_up,
            index,
            delta,
        })
    }

    /// State-space size `K` of one level.
    pub fn k(&self) -> usize {
        self.index.len()
    }

    pub fn kmax(&self) -> usize {
        self.up.len()
    }

    /// `Q_{i,i}`.
    pub fn q_diag(&self, i: usize) -> Csr {
        if i == 0 {
            return self.gamma0.clone();
        }
        let d: Vec<f64> = self.retrial.iter().map(|&t| -(i as f64) * t).collect();
        self.gamma0.add(&Csr::from_diag(&d))
    }

    /// `Q_{i,i-1}` for `i ≥ 1`.
    pub fn q_down(&self, i: usize) -> Csr {
        self.down1.scale(i as f64)
    }

    /// `Q_{i,i+k}`, independent of `i`.
    pub fn q_up(&self, k: usize) -> Option<&Csr> {
        k.checked_sub(1).and_then(|j| self.up.get(j))
    }

    /// Diagonal of `Λ_i = Δ + i T̃₁ Î`.
    pub fn lambda(&self, i: usize) -> Vec<f64> {
        self.delta
            .iter()
            .zip(&self.retrial)
            .map(|(&d, &t)| d + i as f64 * t)
            .collect()
    }

    /// Diagonal of `Δ`.
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// Levels `l ≥ g` indicator (diagonal of `Ī`).
    pub fn i_bar(&self) -> Vec<f64> {
        let start = self.index.segment(self.g).start;
        (0..self.k()).map(|j| if j >= start { 1.0 } else { 0.0 }).collect()
    }

    /// `Γ_k`: `Γ_0 = Q_{0,0}`, `Γ_k = Q_{i,i+k}`.
    pub fn gamma(&self, k: usize) -> Option<&Csr> {
        if k == 0 {
            Some(&self.gamma0)
        } else {
            self.q_up(k)
        }
    }

    /// `Υ`.
    pub fn upsilon(&self) -> Csr {
        let inv: Vec<f64> = self
            .retrial
            .iter()
            .map(|&t| if t > 0.0 { 1.0 / t } else { 0.0 })
            .collect();
        self.down1.scale_rows(&inv)
    }

    /// Row-sum residual of `[Q_{i,i-1} | Q_{i,i} | Q_{i,i+k}]`.
    pub fn conservation_residual(&self, i: usize) -> f64 {
        let mut sums = self.q_diag(i).row_sums();
        if i > 0 {
            for (s, d) in sums.iter_mut().zip(self.q_down(i).row_sums()) {
                *s += d;
            }
        }
        for u in &self.up {
            for (s, d) in sums.iter_mut().zip(u.row_sums()) {
                *s += d;
            }
        }
        sums.into_iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn block_of(&self, name: BlockName) -> Option<&BlockMatrix> {
        match name {
            BlockName::Gamma0 => Some(&self.blocks_gamma0),
            BlockName::Down => Some(&self.blocks_down1),
            BlockName::Up(k) => k.checked_sub(1).and_then(|j| self.blocks_up.get(j)),
        }
    }

    /// Write block `(l, lp)` of `Q_{i,i}`, `Q_{i,i-1}` or `Q_{i,i+k}` as `row,col,value` lines.
    pub fn dump_block<W: Write>(
        &self,
        out: &mut W,
        which: DumpTarget,
        l: usize,
        lp: usize,
    ) -> Result<()> {
        if l > self.c || lp > self.c {
            return Err(Error::Domain(format!("block ({l},{lp}) outside 0..={}", self.c)));
        }
        let full = match which {
            DumpTarget::Diag(i) => self.q_diag(i),
            DumpTarget::Down(i) => self.q_down(i),
            DumpTarget::Up(k) => self
                .q_up(k)
                .cloned()
                .unwrap_or_else(|| Csr::zeros(self.k(), self.k())),
        };
        let rows = self.index.segment(l);
        let cols = self.index.segment(lp);
        writeln!(out, "row,col,value")?;
        for i in rows.clone() {
            for (j, v) in full.row(i) {
                if cols.contains(&j) {
                    writeln!(out, "{},{},{}", i - rows.start, j - cols.start, crate::fmt_sig(v))?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockName {
    Gamma0,
    Down,
    Up(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpTarget {
    Diag(usize),
    Down(usize),
    Up(usize),
}

/// `Y_0 … Y_{k_max+1}`.
pub fn limiting_blocks(gen: &GeneratorView) -> Result<Vec<Csr>> {
    let ibar = gen.i_bar();
    let mut scale = vec![0.0; gen.k()];
    for (j, (&d, &b)) in gen.delta().iter().zip(&ibar).enumerate() {
        if b > 0.0 {
            if d <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "diagonal entry {j} of Δ is not positive"
                )));
            }
            scale[j] = 1.0 / d;
        }
    }
    let mut out = Vec::with_capacity(gen.kmax() + 2);
    out.push(gen.upsilon());
    out.push(gen.gamma0.scale_rows(&scale).add(&Csr::from_diag(&ibar)));
    for k in 1..=gen.kmax() {
        out.push(gen.up[k - 1].scale_rows(&scale));
    }
    Ok(out)
}

/// `Σ_k Y_k z^k` from the block sequence.
pub fn eval_y_series(blocks: &[Csr], z: f64) -> Result<Csr> {
    check_z(z)?;
    let mut out = Csr::zeros(blocks[0].nrows(), blocks[0].ncols());
    let mut zk = 1.0;
    for b in blocks {
        out = out.add(&b.scale(zk));
        zk *= z;
    }
    Ok(out)
}

fn check_z(z: f64) -> Result<()> {
    if !(z > 0.0 && z <= 1.0) {
        return Err(Error::Domain(format!("z = {z} must lie in (0, 1]")));
    }
    Ok(())
}

/// `Y(z) = Υ + Ī z + Δ^{-1} Ī Γ(z) z`, with `Γ(z)` assembled from `D(z)` and `E(z)`.
pub fn eval_y(cfg: &SystemConfig, z: f64) -> Result<Csr> {
    check_z(z)?;
    eval_y_unchecked(cfg, z)
}

/// [`eval_y`] without the range check, for the determinant derivative just above 1.
pub(crate) fn eval_y_unchecked(cfg: &SystemConfig, z: f64) -> Result<Csr> {
    let gen = GeneratorView::build(cfg)?;
    let gz = gamma_z(cfg, z)?;
    let ibar = gen.i_bar();
    let scale: Vec<f64> = gen
        .delta()
        .iter()
        .zip(&ibar)
        .map(|(&d, &b)| if b > 0.0 { z / d } else { 0.0 })
        .collect();
    let zdiag: Vec<f64> = ibar.iter().map(|b| b * z).collect();
    Ok(gen
        .upsilon()
        .add(&Csr::from_diag(&zdiag))
        .add(&gz.scale_rows(&scale)))
}

/// Truncated power series `z^{-n} (A(z) − Σ_{k<n} A_k z^k) = Σ_{k≥n} A_k z^{k-n}`.
fn shifted(ms: &[Mat<f64>], n: usize, z: f64) -> Mat<f64> {
    let dim = ms[0].nrows();
    let mut out = Mat::zeros(dim, dim);
    for (k, m) in ms.iter().enumerate().skip(n) {
        out += z.powi((k - n) as i32) * m;
    }
    out
}

fn gamma_z(cfg: &SystemConfig, z: f64) -> Result<Csr> {
    let p = Parts::new(cfg);
    let (c, g) = (cfg.c, cfg.g);
    let index = StateIndex::for_config(cfg);
    let mut bm = BlockMatrix::new(index.segment_sizes());
    let dz = cfg.bmap1.eval(z);
    let ez = cfg.bmap2.eval(z);
    let zero_w = Mat::<f64>::zeros(p.w, p.w);
    let zero_v = Mat::<f64>::zeros(p.v, p.v);
    for l in 0..=c {
        if l >= 1 {
            bm.add_block(l, l - 1, p.service(l))?;
        }
        if l < g {
            bm.add_block(l, l, p.diag_block(l, &p.d[0], &p.e[0]))?;
            // Ξ_{g-l}(z)
            let n = g - l;
            let xi_d = shifted(&p.d, n, z);
            let xi_e = p.e.get(n).cloned().unwrap_or_else(|| zero_v.clone());
            bm.add_block(l, g, p.primary(l, n, &xi_d))?;
            bm.add_block(l, g, p.priority(l, n, &xi_e))?;
            for r in 1..(g - l) {
                let d = p.d.get(r).unwrap_or(&zero_w);
                let e = p.e.get(r).unwrap_or(&zero_v);
                bm.add_block(l, l + r, p.primary(l, r, d))?;
                bm.add_block(l, l + r, p.priority(l, r, e))?;
            }
            for r in (g + 1 - l)..(c - l) {
                if let Some(e) = p.e.get(r) {
                    bm.add_block(l, l + r, p.priority(l, r, e))?;
                }
            }
        } else {
            // Θ_l(z)
            let e_part = if l == c { &ez } else { &p.e[0] };
            bm.add_block(l, l, p.diag_block(l, &dz, e_part))?;
            for r in 1..(c - l) {
                if let Some(e) = p.e.get(r) {
                    bm.add_block(l, l + r, p.priority(l, r, e))?;
                }
            }
        }
        if l < c {
            // Ψ_{c-l}(z)
            let n = c - l;
            bm.add_block(l, c, p.priority(l, n, &shifted(&p.e, n, z)))?;
        }
    }
    Ok(bm.to_csr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::cellular;

    #[test]
    fn dimensions() {
        assert_eq!(StateIndex::new(8, 2, 2, 2, 2).len(), 4088);
        assert_eq!(StateIndex::new(10, 2, 2, 2, 2).len(), 16376);
    }

    #[test]
    fn index_round_trip() {
        let ix = StateIndex::new(3, 2, 1, 2, 3);
        for k in 0..ix.len() {
            assert_eq!(ix.index(&ix.tuple(k)), k);
        }
        let t = ix.tuple(ix.segment(2).start);
        assert_eq!(t.b, 2);
        assert_eq!(t.phases, vec![0, 0]);
    }

    #[test]
    fn conservative_small() {
        let cfg = cellular::config(3, 2, 1.0, 1.0, 1.0).unwrap();
        let gen = GeneratorView::build(&cfg).unwrap();
        for i in [0, 1, 5] {
            assert!(gen.conservation_residual(i) < 1e-9);
        }
        assert_eq!(gen.kmax(), 1);
    }

    #[test]
    fn limiting_blocks_stochastic() {
        let cfg = cellular::config(3, 2, 1.0, 1.5, 0.5).unwrap();
        let gen = GeneratorView::build(&cfg).unwrap();
        let ys = limiting_blocks(&gen).unwrap();
        let y1 = eval_y_series(&ys, 1.0).unwrap();
        for s in y1.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(ys.iter().all(|y| y.is_nonnegative()));
    }

    #[test]
    fn eval_y_paths_agree() {
        let cfg = cellular::config(4, 2, 0.7, 1.3, 0.9).unwrap();
        let gen = GeneratorView::build(&cfg).unwrap();
        let ys = limiting_blocks(&gen).unwrap();
        for z in [0.5, 0.9, 1.0] {
            let a = eval_y_series(&ys, z).unwrap().to_dense();
            let b = eval_y(&cfg, z).unwrap().to_dense();
            assert!(linalg::max_abs((&a - &b).as_ref()) < 1e-12, "z = {z}");
        }
        assert!(eval_y(&cfg, 0.0).is_err());
        assert!(eval_y(&cfg, 1.5).is_err());
    }
}
