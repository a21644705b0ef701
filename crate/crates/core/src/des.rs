//! Discrete-event simulation of the queue and a brute-force truncated CTMC.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::generator::GeneratorView;
use crate::linalg::{gth_stationary, Csr};
use crate::models::{BmapSpec, PhSpec, SystemConfig};
use crate::solver::StationaryDistribution;

/// Largest truncated chain `brute_force_ctmc` accepts.
pub const BRUTE_FORCE_STATES: usize = 200_000;
/// Largest truncated chain solved with dense state reduction.
pub const DENSE_STATES: usize = 6_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    /// 99% half-width.
    pub half_width: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        (x - self.mean).abs() <= self.half_width
    }

    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Interval { mean, half_width: f64::INFINITY };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let t = StudentsT::new(0.0, 1.0, n - 1.0)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.995);
        Interval {
            mean,
            half_width: t * (var / n).sqrt(),
        }
    }
}

/// Customer flows of one class within one replication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Flow {
    pub batches: u64,
    pub arrived: u64,
    pub admitted: u64,
    pub orbited: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Replication {
    pub l_b: f64,
    pub l_orb: f64,
    pub p_b1: f64,
    pub p_b2: f64,
    /// `P(i, b)` for `i ≤ max_level`.
    pub joint: Vec<Vec<f64>>,
    pub primary: Flow,
    pub priority: Flow,
    pub events: u64,
    /// Mean orbit over the first and second half of the measured window.
    pub orbit_halves: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct SimEstimate {
    pub l_b: Interval,
    pub l_orb: Interval,
    pub p_b1: Interval,
    pub p_b2: Interval,
    /// `P(i, b)` for `i ≤ max_level`, `b ≤ c`.
    pub joint: Vec<Vec<Interval>>,
    pub replications: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Orbit mean grew markedly over the run in most replications.
    pub drift: bool,
    pub runs: Vec<Replication>,
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub horizon: f64,
    pub replications: usize,
    pub seed: u64,
    /// Highest orbit level tabulated in `joint`.
    pub max_level: usize,
    /// Fraction of the horizon discarded before measuring.
    pub warmup: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            horizon: 1e6,
            replications: 20,
            seed: 1,
            max_level: 10,
            warmup: 0.1,
        }
    }
}

/// Outcomes leaving one phase of a BMAP: `(cumulative rate, batch size, next phase)`.
struct BmapTable {
    out: Vec<f64>,
    moves: Vec<Vec<(f64, usize, usize)>>,
}

impl BmapTable {
    fn new(b: &BmapSpec) -> Self {
        let n = b.order();
        let mut out = vec![0.0; n];
        let mut moves = vec![Vec::new(); n];
        for v in 0..n {
            let mut acc = 0.0;
            for (k, d) in b.matrices.iter().enumerate() {
                for u in 0..n {
                    let r = d[(v, u)];
                    if (k > 0 || u != v) && r > 0.0 {
                        acc += r;
                        moves[v].push((acc, k, u));
                    }
                }
            }
            out[v] = acc;
        }
        BmapTable { out, moves }
    }

    fn draw(&self, v: usize, rng: &mut impl Rng) -> (usize, usize) {
        pick(&self.moves[v], self.out[v] * rng.random::<f64>())
    }
}

fn pick(moves: &[(f64, usize, usize)], u: f64) -> (usize, usize) {
    let i = moves.partition_point(|m| m.0 <= u).min(moves.len() - 1);
    (moves[i].1, moves[i].2)
}

/// Service phase outcomes: `(cumulative rate, 1 if completion, next phase)`.
struct PhTable {
    out: Vec<f64>,
    moves: Vec<Vec<(f64, usize, usize)>>,
    alpha: Vec<f64>,
}

impl PhTable {
    fn new(ph: &PhSpec) -> Self {
        let m = ph.order();
        let s0 = ph.exit_vector();
        let mut out = vec![0.0; m];
        let mut moves = vec![Vec::new(); m];
        for p in 0..m {
            let mut acc = 0.0;
            for q in 0..m {
                if q != p && ph.s[(p, q)] > 0.0 {
                    acc += ph.s[(p, q)];
                    moves[p].push((acc, 0, q));
                }
            }
            if s0[p] > 0.0 {
                acc += s0[p];
                moves[p].push((acc, 1, 0));
            }
            out[p] = acc;
        }
        let mut alpha = Vec::with_capacity(m);
        let mut acc = 0.0;
        for a in &ph.alpha {
            acc += a;
            alpha.push(acc);
        }
        PhTable { out, moves, alpha }
    }

    fn start(&self, rng: &mut impl Rng) -> usize {
        let u = rng.random::<f64>() * self.alpha[self.alpha.len() - 1];
        self.alpha.partition_point(|&a| a <= u).min(self.alpha.len() - 1)
    }
}

/// Draw one PH service time.
pub fn sample_ph(ph: &PhSpec, rng: &mut impl Rng) -> f64 {
    let t = PhTable::new(ph);
    let mut p = t.start(rng);
    let mut time = 0.0;
    loop {
        time += exp(t.out[p], rng);
        let (done, q) = pick(&t.moves[p], t.out[p] * rng.random::<f64>());
        if done == 1 {
            return time;
        }
        p = q;
    }
}

/// Simulate `n` batches of a BMAP from phase 0: returns `(elapsed time, batch sizes)`.
pub fn sample_bmap(b: &BmapSpec, n: usize, rng: &mut impl Rng) -> (f64, Vec<usize>) {
    let t = BmapTable::new(b);
    let mut v = 0;
    let mut time = 0.0;
    let mut sizes = Vec::with_capacity(n);
    while sizes.len() < n {
        time += exp(t.out[v], rng);
        let (k, u) = t.draw(v, rng);
        v = u;
        if k > 0 {
            sizes.push(k);
        }
    }
    (time, sizes)
}

fn exp(rate: f64, rng: &mut impl Rng) -> f64 {
    -(1.0 - rng.random::<f64>()).ln() / rate
}

struct Model {
    c: usize,
    g: usize,
    b1: BmapTable,
    b2: BmapTable,
    ph: PhTable,
    env_out: Vec<f64>,
    env_moves: Vec<Vec<(f64, usize, usize)>>,
    sigma: Vec<f64>,
}

impl Model {
    fn new(cfg: &SystemConfig) -> Self {
        let r = cfg.mmpp.order();
        let mut env_out = vec![0.0; r];
        let mut env_moves = vec![Vec::new(); r];
        for a in 0..r {
            let mut acc = 0.0;
            for b in 0..r {
                if a != b && cfg.mmpp.t0[(a, b)] > 0.0 {
                    acc += cfg.mmpp.t0[(a, b)];
                    env_moves[a].push((acc, 0, b));
                }
            }
            env_out[a] = acc;
        }
        Model {
            c: cfg.c,
            g: cfg.g,
            b1: BmapTable::new(&cfg.bmap1),
            b2: BmapTable::new(&cfg.bmap2),
            ph: PhTable::new(&cfg.service),
            env_out,
            env_moves,
            sigma: cfg.mmpp.t1.clone(),
        }
    }
}

fn replicate(model: &Model, opts: &SimOptions, rep: u64) -> Replication {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(rep);
    let m = model.ph.out.len();
    let c = model.c;
    let (mut r, mut nu, mut gamma) = (0usize, 0usize, 0usize);
    let mut phases = vec![0u32; m];
    let mut busy = 0usize;
    let mut orbit = 0usize;
    let mut t: f64 = 0.0;
    let start = opts.warmup * opts.horizon;
    let mid = 0.5 * (start + opts.horizon);
    let levels = opts.max_level + 1;
    let mut joint = vec![vec![0.0; c + 1]; levels];
    let (mut area_b, mut area_orb) = (0.0, 0.0);
    let mut halves = (0.0, 0.0);
    let mut primary = Flow::default();
    let mut priority = Flow::default();
    let mut events = 0u64;
    let mut svc = vec![0.0; m];

    loop {
        let env = model.env_out[r];
        let a1 = model.b1.out[nu];
        let a2 = model.b2.out[gamma];
        let retry = if busy < model.g { orbit as f64 * model.sigma[r] } else { 0.0 };
        let mut service = 0.0;
        for p in 0..m {
            svc[p] = phases[p] as f64 * model.ph.out[p];
            service += svc[p];
        }
        let total = env + a1 + a2 + retry + service;
        let dt = exp(total, &mut rng);
        // time in the current state, clipped to the measured window
        let lo = t.max(start);
        let hi = (t + dt).min(opts.horizon);
        if hi > lo {
            let span = hi - lo;
            area_b += busy as f64 * span;
            area_orb += orbit as f64 * span;
            if orbit < levels {
                joint[orbit][busy] += span;
            }
            let first = (hi.min(mid) - lo).max(0.0);
            halves.0 += orbit as f64 * first;
            halves.1 += orbit as f64 * (span - first);
        }
        t += dt;
        if t >= opts.horizon {
            break;
        }
        events += 1;
        let measured = t >= start;
        let mut u = rng.random::<f64>() * total;
        if u < env {
            r = pick(&model.env_moves[r], u).1;
            continue;
        }
        u -= env;
        if u < a1 {
            let (k, next) = pick(&model.b1.moves[nu], u);
            nu = next;
            if k > 0 {
                let admitted = if busy < model.g { k.min(model.g - busy) } else { 0 };
                for _ in 0..admitted {
                    phases[model.ph.start(&mut rng)] += 1;
                }
                busy += admitted;
                orbit += k - admitted;
                if measured {
                    primary.batches += 1;
                    primary.arrived += k as u64;
                    primary.admitted += admitted as u64;
                    primary.orbited += (k - admitted) as u64;
                }
            }
            continue;
        }
        u -= a1;
        if u < a2 {
            let (k, next) = pick(&model.b2.moves[gamma], u);
            gamma = next;
            if k > 0 {
                let admitted = k.min(c - busy);
                for _ in 0..admitted {
                    phases[model.ph.start(&mut rng)] += 1;
                }
                busy += admitted;
                orbit += k - admitted;
                if measured {
                    priority.batches += 1;
                    priority.arrived += k as u64;
                    priority.admitted += admitted as u64;
                    priority.orbited += (k - admitted) as u64;
                }
            }
            continue;
        }
        u -= a2;
        if u < retry {
            orbit -= 1;
            busy += 1;
            phases[model.ph.start(&mut rng)] += 1;
            continue;
        }
        u -= retry;
        let mut p = 0;
        while p + 1 < m && u >= svc[p] {
            u -= svc[p];
            p += 1;
        }
        let (done, q) = pick(&model.ph.moves[p], u / phases[p] as f64);
        phases[p] -= 1;
        if done == 1 {
            busy -= 1;
        } else {
            phases[q] += 1;
        }
    }
    let window = opts.horizon - start;
    for row in &mut joint {
        for x in row.iter_mut() {
            *x /= window;
        }
    }
    let ratio = |f: &Flow| if f.arrived > 0 { f.orbited as f64 / f.arrived as f64 } else { 0.0 };
    Replication {
        l_b: area_b / window,
        l_orb: area_orb / window,
        p_b1: ratio(&primary),
        p_b2: ratio(&priority),
        joint,
        primary,
        priority,
        events,
        orbit_halves: (halves.0 / (mid - start), halves.1 / (opts.horizon - mid)),
    }
}

/// Independent replications of the queue, each on its own ChaCha stream of `seed`.
pub fn simulate(cfg: &SystemConfig, opts: &SimOptions) -> Result<SimEstimate> {
    if !(opts.horizon > 0.0 && (0.0..1.0).contains(&opts.warmup)) {
        return Err(Error::Domain(format!(
            "horizon {} with warm-up fraction {} leaves no measured window",
            opts.horizon, opts.warmup
        )));
    }
    if opts.replications == 0 {
        return Err(Error::Domain("need at least one replication".into()));
    }
    let model = Model::new(cfg);
    let runs: Vec<Replication> = (0..opts.replications as u64)
        .into_par_iter()
        .map(|rep| replicate(&model, opts, rep))
        .collect();
    let of = |f: &dyn Fn(&Replication) -> f64| -> Interval {
        Interval::from_samples(&runs.iter().map(f).collect::<Vec<_>>())
    };
    let joint = (0..=opts.max_level)
        .map(|i| (0..=cfg.c).map(|b| of(&|r: &Replication| r.joint[i][b])).collect())
        .collect();
    let growing = runs
        .iter()
        .filter(|r| r.orbit_halves.1 > 1.5 * r.orbit_halves.0 + 1.0)
        .count();
    Ok(SimEstimate {
        l_b: of(&|r| r.l_b),
        l_orb: of(&|r| r.l_orb),
        p_b1: of(&|r| r.p_b1),
        p_b2: of(&|r| r.p_b2),
        joint,
        replications: opts.replications,
        horizon: opts.horizon,
        seed: opts.seed,
        drift: 2 * growing > runs.len(),
        runs,
    })
}

impl SimEstimate {
    /// Server marginal `P(•, b)` restricted to the tabulated levels, per replication mean.
    pub fn server_marginal(&self) -> Vec<Interval> {
        let c = self.joint[0].len() - 1;
        (0..=c)
            .map(|b| {
                let xs: Vec<f64> = self
                    .runs
                    .iter()
                    .map(|r| r.joint.iter().map(|row| row[b]).sum())
                    .collect();
                Interval::from_samples(&xs)
            })
            .collect()
    }

    /// Same `level,busy,probability` layout as the analytic CSV, plus a half-width column.
    pub fn write_csv<W: Write>(&self, out: &mut W, header: &[(String, String)]) -> Result<()> {
        for (k, v) in header {
            writeln!(out, "# {k}={v}")?;
        }
        for (k, x) in [("L_b", self.l_b), ("L_orb", self.l_orb), ("P_b1", self.p_b1), ("P_b2", self.p_b2)] {
            writeln!(
                out,
                "# {k}={} +- {}",
                crate::fmt_sig(x.mean),
                crate::fmt_sig(x.half_width)
            )?;
        }
        writeln!(out, "# drift={}", self.drift)?;
        writeln!(out, "level,busy,probability,half_width")?;
        for (i, row) in self.joint.iter().enumerate() {
            for (b, x) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{i},{b},{},{}",
                    crate::fmt_sig(x.mean),
                    crate::fmt_sig(x.half_width)
                )?;
            }
        }
        Ok(())
    }
}

/// The generator restricted to levels `0..=cap`, transitions above `cap` dropped.
pub fn truncated_generator(gen: &GeneratorView, cap: usize) -> Csr {
    let k = gen.k();
    let mut trips = Vec::new();
    for i in 0..=cap {
        for (r, c, v) in gen.q_diag(i).triplets() {
            trips.push((i * k + r, i * k + c, v));
        }
        if i > 0 {
            for (r, c, v) in gen.q_down(i).triplets() {
                trips.push((i * k + r, (i - 1) * k + c, v));
            }
        }
        for (n, up) in gen.up.iter().enumerate() {
            let j = i + n + 1;
            if j > cap {
                break;
            }
            for (r, c, v) in up.triplets() {
                trips.push((i * k + r, j * k + c, v));
            }
        }
    }
    Csr::from_triplets(k * (cap + 1), k * (cap + 1), trips)
}

/// Stationary law of the chain truncated at orbit size `cap`.
///
/// Transitions that would leave the truncated range are removed together with their share of
/// the diagonal, and the conservative result is solved by state reduction.
pub fn brute_force_ctmc(cfg: &SystemConfig, cap: usize) -> Result<StationaryDistribution> {
    let gen = GeneratorView::build(cfg)?;
    let k = gen.k();
    let n = k * (cap + 1);
    if n > BRUTE_FORCE_STATES {
        return Err(Error::TooLarge(format!("{n} truncated states > {BRUTE_FORCE_STATES}")));
    }
    if n > DENSE_STATES {
        return Err(Error::TooLarge(format!(
            "{n} truncated states exceed the dense oracle limit {DENSE_STATES}"
        )));
    }
    let q = truncated_generator(&gen, cap);
    let mut dense = q.to_dense();
    for (i, s) in q.row_sums().into_iter().enumerate() {
        dense[(i, i)] -= s;
    }
    let x = gth_stationary(dense.as_ref())?;
    let levels: Vec<Vec<f64>> = x.chunks(k).map(|c| c.to_vec()).collect();
    Ok(StationaryDistribution {
        n: cap,
        levels,
        k0: 0,
        captured_mass: 1.0,
        tail_mass_bound: 0.0,
        boundary_defect: f64::NAN,
        g_iterations: 0,
        g_residual: f64::NAN,
        epsilon: f64::NAN,
        epsilon0: f64::NAN,
        fingerprint: crate::config::fingerprint(cfg),
        c: cfg.c,
        g: cfg.g,
        index: gen.index.clone(),
        seconds: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{self, cellular, MmppSpec};

    #[test]
    fn ph_sample_mean() {
        let ph = cellular::service();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_ph(&ph, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let target = 1.0 / 8.1288;
        assert!((mean - target).abs() < 3.0 * sd / (n as f64).sqrt() + 1e-4 * target);
    }

    #[test]
    fn bmap_rates_reproduced() {
        let mut b = cellular::originating(1.0);
        // add size-2 batches to exercise the batch-rate estimator
        b.matrices.push(crate::linalg::from_rows(&[vec![0.5, 0.0], vec![0.0, 1.0]]));
        b.matrices[0][(0, 0)] -= 0.5;
        b.matrices[0][(1, 1)] -= 1.0;
        let lambda = models::arrival_rate(&b).unwrap();
        let lambda_b = models::batch_arrival_rate(&b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 40;
        let n = 20_000;
        let (mut rate, mut brate) = (Vec::new(), Vec::new());
        for _ in 0..reps {
            let (t, sizes) = sample_bmap(&b, n, &mut rng);
            brate.push(n as f64 / t);
            rate.push(sizes.iter().sum::<usize>() as f64 / t);
        }
        for (xs, target) in [(rate, lambda), (brate, lambda_b)] {
            let m = xs.iter().sum::<f64>() / reps as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
            assert!((m - target).abs() < 3.0 * sd / (reps as f64).sqrt() + 1e-3 * target, "{m} vs {target}");
        }
    }

    #[test]
    fn truncated_rows_conserve_below_cap() {
        let cfg = SystemConfig::new(
            BmapSpec::poisson(1.0),
            BmapSpec::poisson(0.5),
            MmppSpec::constant(2.0),
            PhSpec::exponential(1.0),
            3,
            2,
        )
        .unwrap();
        let gen = GeneratorView::build(&cfg).unwrap();
        let cap = 6;
        let q = truncated_generator(&gen, cap);
        let k = gen.k();
        for (i, s) in q.row_sums().into_iter().enumerate() {
            if i / k < cap {
                assert!(s.abs() < 1e-12, "row {i}: {s}");
            }
        }
    }

    #[test]
    fn flows_balance_and_short_run() {
        let cfg = cellular::config_exponential(3, 2, 0.1, 0.1, 1.0).unwrap();
        let opts = SimOptions {
            horizon: 2_000.0,
            replications: 3,
            seed: 11,
            max_level: 3,
            warmup: 0.1,
        };
        let est = simulate(&cfg, &opts).unwrap();
        for r in &est.runs {
            for f in [r.primary, r.priority] {
                assert_eq!(f.admitted + f.orbited, f.arrived);
            }
        }
        assert!(!est.drift);
        let again = simulate(&cfg, &opts).unwrap();
        assert_eq!(est.l_orb.mean, again.l_orb.mean);
        assert!(simulate(&cfg, &SimOptions { warmup: 1.0, ..opts }).is_err());
    }
}
