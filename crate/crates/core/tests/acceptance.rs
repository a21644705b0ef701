//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use retrial_core::config::{ConfigFile, SweepParam};
use retrial_core::des::{simulate, SimOptions};
use retrial_core::ergodicity::{det_derivative_check, stability_check};
use retrial_core::generator::{GeneratorView, StateIndex};
use retrial_core::models::{self, cellular, SystemConfig};
use retrial_core::optimizer::{optimize_c, optimize_g, Evaluator};
use retrial_core::performance;
use retrial_core::solver::{self, StationaryDistribution};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn load(name: &str) -> ConfigFile {
    ConfigFile::load(&Path::new(common::CONFIGS).join(name)).expect("fixture parses")
}

fn within_rel(x: f64, target: f64, tol: f64) -> bool {
    ((x - target) / target).abs() <= tol
}

fn rates() -> Outcome {
    let t = Instant::now();
    let r = models::rates(&cellular::config(8, 6, 1.0, 1.0, 1.0).unwrap()).unwrap();
    let r2 = models::rates(&cellular::config(8, 6, 2.0, 3.0, 0.5).unwrap()).unwrap();
    let ok = within_rel(r.lambda1, 10.6364, 1e-4)
        && within_rel(r.lambda2, 1.6667, 1e-4)
        && within_rel(r.sigma, 13.2857, 1e-4)
        && within_rel(r.mu, 8.1288, 1e-4)
        && within_rel(r2.lambda1, 2.0 * 10.6364, 1e-4)
        && within_rel(r2.lambda2, 3.0 * 1.6667, 1e-4)
        && within_rel(r2.sigma, 0.5 * 13.2857, 1e-4);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        ok && secs < 1.0,
        format!(
            "lambda1={:.6} lambda2={:.6} sigma={:.6} mu={:.6} ({secs:.3}s)",
            r.lambda1, r.lambda2, r.sigma, r.mu
        ),
    )
}

fn dimensions() -> Outcome {
    let t = Instant::now();
    let k8 = models::state_count(8, 2, 2, 2, 2);
    let k10 = models::state_count(10, 2, 2, 2, 2);
    let via_index = StateIndex::new(8, 2, 2, 2, 2).len();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        k8 == 4088 && k10 == 16376 && via_index == 4088 && secs < 1.0,
        format!("K(c=8)={k8} K(c=10)={k10} index={via_index}"),
    )
}

fn table1(dist: &StationaryDistribution, solve_time: Duration) -> Outcome {
    let p = |i, b| dist.joint(i, b).unwrap();
    let row0: f64 = (0..=8).map(|b| p(0, b)).sum();
    let col3: f64 = (0..=10).map(|i| p(i, 3)).sum();
    let total: f64 = (0..=10).flat_map(|i| (0..=8).map(move |b| (i, b))).map(|(i, b)| p(i, b)).sum();
    let checks = [
        ("P(0,3)", p(0, 3), 0.2148),
        ("P(0,0)", p(0, 0), 0.0467),
        ("P(1,6)", p(1, 6), 0.0208),
        ("P(2,6)", p(2, 6), 0.0109),
        ("row0", row0, 0.9084),
        ("col3", col3, 0.2206),
        ("total", total, 0.999),
    ];
    let mut pass = solve_time.as_secs_f64() <= 600.0;
    let mut parts = Vec::new();
    for (name, got, want) in checks {
        let ok = (got - want).abs() <= 2e-3;
        pass &= ok;
        parts.push(format!("{name}={got:.4}/{want}{}", if ok { "" } else { "!" }));
    }
    parts.push(format!("{:.0}s", solve_time.as_secs_f64()));
    outcome(pass, parts.join(" "))
}

fn oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut diff, mut res) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let cfg = common::random_config(&mut rng);
        let (d, r) = common::compare(&cfg);
        diff = diff.max(d);
        res = res.max(r);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        diff <= 1e-6 && res <= 1e-7 && secs < 60.0,
        format!("max|dP|={diff:.1e} max||PQ||={res:.1e} ({secs:.1}s)"),
    )
}

fn simulation(cfg: &SystemConfig, dist: &StationaryDistribution) -> Outcome {
    let t = Instant::now();
    let sim = simulate(cfg, &SimOptions::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let s = performance::summary_measures(dist, cfg).unwrap();
    let (p_b1, _) = performance::blocking_primary(dist, cfg).unwrap();
    let (p_b2, _) = performance::blocking_priority(dist, cfg).unwrap();
    let checks = [
        ("P(0,3)", sim.joint[0][3], dist.joint(0, 3).unwrap()),
        ("L_b", sim.l_b, s.l_b),
        ("P_b1", sim.p_b1, p_b1),
        ("P_b2", sim.p_b2, p_b2),
    ];
    let mut pass = secs <= 900.0 && !sim.drift;
    let mut parts = Vec::new();
    for (name, ci, exact) in checks {
        let ok = ci.contains(exact);
        pass &= ok;
        parts.push(format!("{name}: {exact:.5} in {:.5}±{:.1e}{}", ci.mean, ci.half_width, if ok { "" } else { "!" }));
    }
    parts.push(format!("({secs:.0}s)"));
    outcome(pass, parts.join(", "))
}

fn stability_gate() -> Outcome {
    let base = cellular::config(8, 6, 1.0, 2.0, 2.0).unwrap();
    let stab = stability_check(&base).unwrap();
    let per_unit = models::arrival_rate(&base.bmap1).unwrap() / stab.mu_bar_1;
    let fixed = stab.lambda2 / stab.mu_bar_2;
    let table1 = Path::new(common::CONFIGS).join("table1.toml");
    let mut pass = true;
    let mut parts = Vec::new();
    for rho in [0.5, 0.7, 0.85, 0.9, 0.95, 1.05, 1.1, 1.25, 1.5, 2.0] {
        let lambda_o = (rho - fixed) / per_unit;
        let cfg = cellular::config(8, 6, lambda_o, 2.0, 2.0).unwrap();
        let rep = stability_check(&cfg).unwrap();
        let det = det_derivative_check(&GeneratorView::build(&cfg).unwrap()).unwrap();
        let mut ok = (rep.rho - rho).abs() < 1e-9 && rep.stable == (det.sign > 0.0);
        ok &= rep.admits_solution() == rep.stable;
        if !rep.stable {
            let status = Command::new(env!("CARGO_BIN_EXE_retrial"))
                .arg("solve")
                .arg(&table1)
                .args(["--set", &format!("lambda_o={lambda_o}")])
                .args(["--out", "/dev/null"])
                .stderr(Stdio::null())
                .status()
                .unwrap();
            ok &= status.code() == Some(2);
        }
        pass &= ok;
        parts.push(format!("{rho}:{}{}", if det.sign > 0.0 { '+' } else { '-' }, if ok { "" } else { "!" }));
    }
    outcome(pass, format!("rho:det-sign {}", parts.join(" ")))
}

fn blocking_identity(fixtures: &[(&str, &SystemConfig, &StationaryDistribution)]) -> Outcome {
    let mut worst = 0.0f64;
    for (_, cfg, dist) in fixtures {
        let (a1, _) = performance::blocking_primary(dist, cfg).unwrap();
        let (a2, _) = performance::blocking_priority(dist, cfg).unwrap();
        let b1 = performance::blocking_primary_min_form(dist, cfg).unwrap();
        let b2 = performance::blocking_priority_min_form(dist, cfg).unwrap();
        worst = worst.max((a1 - b1).abs()).max((a2 - b2).abs());
    }
    let names: Vec<&str> = fixtures.iter().map(|f| f.0).collect();
    outcome(worst <= 1e-12, format!("max diff {worst:.1e} over {}", names.join(", ")))
}

fn nonincreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs())
}

fn figure_properties() -> Outcome {
    let base = load("guard_sweep_m1.toml");
    let lrs = [0.5, 1.0, 2.0];
    // curves[lr][g - 1] = (L_orb, P_b1, P_b2), None when unstable
    let mut curves = Vec::new();
    for lr in lrs {
        let file = base.with_param(SweepParam::LambdaR, lr).unwrap();
        let mut curve = Vec::new();
        for g in 1..=9 {
            let cfg = file.with_param(SweepParam::G, g as f64).unwrap().to_system().unwrap();
            curve.push(match solver::stationary(&cfg) {
                Ok(dist) => {
                    let s = performance::summary_measures(&dist, &cfg).unwrap();
                    let (b1, _) = performance::blocking_primary(&dist, &cfg).unwrap();
                    let (b2, _) = performance::blocking_priority(&dist, &cfg).unwrap();
                    Some((s.l_orb, b1, b2))
                }
                Err(retrial_core::Error::Unstable(_)) => None,
                Err(e) => panic!("g = {g}, lambda_r = {lr}: {e}"),
            });
        }
        curves.push(curve);
    }
    let unstable: Vec<usize> = (1..=9).filter(|&g| curves.iter().any(|c| c[g - 1].is_none())).collect();
    let mut monotone = true;
    for curve in &curves {
        let pts: Vec<(f64, f64, f64)> = curve.iter().flatten().copied().collect();
        let l: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let b1: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let b2: Vec<f64> = pts.iter().map(|p| -p.2).collect();
        monotone &= nonincreasing(&l) && nonincreasing(&b1) && nonincreasing(&b2);
    }
    let mut spread = [0.0f64; 3];
    for g in 1..=9 {
        let pts: Vec<(f64, f64, f64)> = curves.iter().filter_map(|c| c[g - 1]).collect();
        if pts.len() < lrs.len() {
            continue;
        }
        let vals = [
            pts.iter().map(|p| p.0).collect::<Vec<_>>(),
            pts.iter().map(|p| p.1).collect::<Vec<_>>(),
            pts.iter().map(|p| p.2).collect::<Vec<_>>(),
        ];
        for (s, v) in spread.iter_mut().zip(vals) {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            *s = s.max((hi - lo) / lo);
        }
    }
    let overlap = spread.iter().all(|&s| s <= 0.05);
    outcome(
        monotone && overlap && unstable.is_empty(),
        format!(
            "unstable g={unstable:?}; monotone over stable g: {monotone}; max relative spread across lambda_r: L_orb {:.1}%, P_b1 {:.1}%, P_b2 {:.1}%",
            100.0 * spread[0],
            100.0 * spread[1],
            100.0 * spread[2]
        ),
    )
}

fn optimizer() -> Outcome {
    let file = load("small_m1.toml");
    let base = file.to_system().unwrap();
    let ev = Evaluator::new();
    let thresholds = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
    let mut pass = true;
    let mut parts = Vec::new();

    for p0 in thresholds {
        let got = optimize_g(&base, base.c, p0, &ev).unwrap().g_star;
        let want = (1..base.c)
            .filter(|&g| {
                let e = ev.evaluate(&base.with_servers(base.c, g)).unwrap();
                e.stable && e.p_b2 <= p0
            })
            .max();
        pass &= got == want;
        parts.push(format!("p0={p0:e}:g*={got:?}"));
    }

    let (p1, p2) = (0.1, 1e-3);
    let got = optimize_c(&base, p1, p2, 8, &ev).unwrap();
    let mut want = None;
    'outer: for c in 2..=8 {
        for g in (1..c).rev() {
            let e = ev.evaluate(&base.with_servers(c, g)).unwrap();
            if e.stable && e.p_b1 <= p1 && e.p_b2 <= p2 {
                want = Some((c, g));
                break 'outer;
            }
        }
    }
    let ok_c = got.c_star.zip(got.g_star) == want;
    pass &= ok_c;
    parts.push(format!("(c*,g*)={want:?}"));

    let mut invariant = true;
    for p0 in thresholds {
        let stars: Vec<Option<usize>> = [1.0, 10.0, 20.0]
            .iter()
            .map(|&lr| {
                let cfg = file.with_param(SweepParam::LambdaR, lr).unwrap().to_system().unwrap();
                optimize_g(&cfg, cfg.c, p0, &ev).unwrap().g_star
            })
            .collect();
        invariant &= stars.windows(2).all(|w| w[0] == w[1]);
    }
    pass &= invariant;
    parts.push(format!("g* same across lambda_r: {invariant}"));
    outcome(pass, parts.join(" "))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        println!("criterion {n} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "rates", rates());
    report(2, "dimensions", dimensions());

    let t1_cfg = cellular::config(8, 6, 2.0, 2.0, 2.0).unwrap();
    let t = Instant::now();
    let t1 = solver::stationary(&t1_cfg).unwrap();
    let t1_time = t.elapsed();
    report(3, "reference distribution", table1(&t1, t1_time));
    report(4, "oracle equivalence", oracle());
    report(5, "simulation", simulation(&t1_cfg, &t1));
    report(6, "stability gate", stability_gate());

    let small = load("small_m1.toml").to_system().unwrap();
    let small_dist = solver::stationary(&small).unwrap();
    let sweep = load("guard_sweep_m1.toml").to_system().unwrap();
    let sweep_dist = solver::stationary(&sweep).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random = common::random_config(&mut rng);
    let random_dist = solver::stationary(&random).unwrap();
    report(
        7,
        "blocking identity",
        blocking_identity(&[
            ("table1", &t1_cfg, &t1),
            ("small_m1", &small, &small_dist),
            ("guard_sweep_m1", &sweep, &sweep_dist),
            ("random", &random, &random_dist),
        ]),
    );
    report(8, "figure properties", figure_properties());
    report(9, "optimizer", optimizer());

    println!("{failed} of 9 criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
