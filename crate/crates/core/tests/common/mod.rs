#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use retrial_core::des::{brute_force_ctmc, truncated_generator};
use retrial_core::generator::GeneratorView;
use retrial_core::models::{BmapSpec, MmppSpec, PhSpec, SystemConfig};
use retrial_core::solver;

pub const CONFIGS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");

/// Scalar BMAP with rate `lambda` and batch sizes 1..=2 in proportion `(1-q, q)`.
pub fn scalar_bmap(lambda: f64, q: f64) -> BmapSpec {
    let mut m = vec![vec![vec![-lambda]], vec![vec![lambda * (1.0 - q)]]];
    if q > 0.0 {
        m.push(vec![vec![lambda * q]]);
    }
    BmapSpec::from_rows(&m)
}

pub fn random_config(rng: &mut ChaCha8Rng) -> SystemConfig {
    loop {
        let c = rng.random_range(3..=6);
        let g = rng.random_range(1..c);
        let mu = rng.random_range(0.5..2.0);
        let l1 = rng.random_range(0.05..0.6) * g as f64 * mu;
        let l2 = rng.random_range(0.05..0.3) * c as f64 * mu;
        let q1 = if rng.random_bool(0.5) { rng.random_range(0.0..0.5) } else { 0.0 };
        let q2 = if rng.random_bool(0.5) { rng.random_range(0.0..0.5) } else { 0.0 };
        let sigma = rng.random_range(0.5..5.0);
        let mut cfg = SystemConfig::new(
            scalar_bmap(l1, q1),
            scalar_bmap(l2, q2),
            MmppSpec::constant(sigma),
            PhSpec::exponential(mu),
            c,
            g,
        )
        .unwrap();
        cfg.solver.epsilon = 1e-12;
        cfg.solver.epsilon0 = 1e-10;
        // keep the orbit tail short enough for the dense oracle
        let stab = retrial_core::ergodicity::stability_check(&cfg).unwrap();
        if stab.rho < 0.8 && stab.drift_margin.is_some_and(|m| m > 0.25) {
            return cfg;
        }
    }
}

pub fn compare(cfg: &SystemConfig) -> (f64, f64) {
    compare_with_cap(cfg, |n| 2 * n + 40)
}

pub fn compare_with_cap(cfg: &SystemConfig, cap: impl Fn(usize) -> usize) -> (f64, f64) {
    let dist = solver::stationary(cfg).unwrap();
    let cap = cap(dist.n);
    let brute = brute_force_ctmc(cfg, cap).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..=dist.n {
        for b in 0..=cfg.c {
            let d = (dist.joint(i, b).unwrap() - brute.joint(i, b).unwrap()).abs();
            worst = worst.max(d);
        }
    }
    let gen = GeneratorView::build(cfg).unwrap();
    let q = truncated_generator(&gen, dist.n);
    let p: Vec<f64> = dist.levels.concat();
    let pq = q.vec_mul(&p);
    (worst, pq.iter().fold(0.0, |m: f64, x| m.max(x.abs())))
}

