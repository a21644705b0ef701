//! Dimensioning of guard servers and total servers.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::fingerprint;
use crate::error::{Error, Result};
use crate::models::SystemConfig;
use crate::{performance, solver};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub p_b1: f64,
    pub p_b2: f64,
    pub l_orb: f64,
    pub captured_mass: f64,
    /// `false` when the solver refused the instance as unstable.
    pub stable: bool,
}

impl Evaluation {
    fn unstable() -> Self {
        Evaluation {
            p_b1: f64::NAN,
            p_b2: f64::NAN,
            l_orb: f64::NAN,
            captured_mass: f64::NAN,
            stable: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    Infeasible,
    BudgetExhausted,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::BudgetExhausted => "budget-exhausted",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationResult {
    pub g_star: Option<usize>,
    pub c_star: Option<usize>,
    /// Feasible `g` for every examined `c`.
    pub feasible_set: BTreeMap<usize, Vec<usize>>,
    /// Keyed by `(g, c)`.
    pub evaluations: BTreeMap<(usize, usize), Evaluation>,
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub status: Status,
    pub diagnostics: Vec<String>,
}

impl OptimizationResult {
    /// Smallest captured mass among the solved instances.
    pub fn min_captured_mass(&self) -> f64 {
        self.evaluations
            .values()
            .filter(|e| e.stable)
            .map(|e| e.captured_mass)
            .fold(f64::NAN, f64::min)
    }

    /// `g,c,stable,P_b1,P_b2,L_orb,feasible` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "g,c,stable,P_b1,P_b2,L_orb,feasible")?;
        for (&(g, c), e) in &self.evaluations {
            let feasible = self.feasible_set.get(&c).is_some_and(|v| v.contains(&g));
            writeln!(
                out,
                "{g},{c},{},{},{},{},{}",
                e.stable,
                crate::fmt_sig(e.p_b1),
                crate::fmt_sig(e.p_b2),
                crate::fmt_sig(e.l_orb),
                feasible
            )?;
        }
        Ok(())
    }
}

/// Solves instances once per fingerprint.
#[derive(Default)]
pub struct Evaluator {
    cache: Mutex<HashMap<String, Evaluation>>,
    solves: Mutex<usize>,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of full solves performed so far.
    pub fn solves(&self) -> usize {
        *self.solves.lock().unwrap()
    }

    pub fn evaluate(&self, cfg: &SystemConfig) -> Result<Evaluation> {
        let key = fingerprint(cfg);
        if let Some(e) = self.cache.lock().unwrap().get(&key) {
            return Ok(*e);
        }
        let e = match solver::stationary(cfg) {
            Ok(dist) => {
                let (p_b1, _) = performance::blocking_primary(&dist, cfg)?;
                let (p_b2, _) = performance::blocking_priority(&dist, cfg)?;
                let s = performance::summary_measures(&dist, cfg)?;
                Evaluation {
                    p_b1,
                    p_b2,
                    l_orb: s.l_orb,
                    captured_mass: dist.captured_mass,
                    stable: true,
                }
            }
            Err(Error::Unstable(_)) => Evaluation::unstable(),
            Err(e) => return Err(e),
        };
        *self.solves.lock().unwrap() += 1;
        self.cache.lock().unwrap().insert(key, e);
        Ok(e)
    }
}

fn with_servers(base: &SystemConfig, c: usize, g: usize) -> SystemConfig {
    let mut cfg = base.clone();
    cfg.c = c;
    cfg.g = g;
    cfg
}

/// Largest `g ∈ 1..c` with `P_b2(g) ≤ p0`.
///
/// Scans downward from `c − 1` and stops at the first feasible `g`, then evaluates `g − 1` to
/// confirm that `P_b2` keeps decreasing. Any monotonicity violation seen along the way
/// triggers a full scan.
pub fn optimize_g(base: &SystemConfig, c: usize, p0: f64, ev: &Evaluator) -> Result<OptimizationResult> {
    if c < 2 {
        return Err(Error::InvalidConfig(format!("c = {c}: need at least two servers")));
    }
    let mut evals: BTreeMap<(usize, usize), Evaluation> = BTreeMap::new();
    let eval = |g: usize, evals: &mut BTreeMap<(usize, usize), Evaluation>| -> Result<Evaluation> {
        let e = ev.evaluate(&with_servers(base, c, g))?;
        evals.insert((g, c), e);
        Ok(e)
    };
    let mut diagnostics = Vec::new();
    let mut found = None;
    let mut monotone = true;
    let mut last: Option<f64> = None;
    for g in (1..c).rev() {
        let e = eval(g, &mut evals)?;
        if !e.stable {
            // smaller g only raises the primary load
            diagnostics.push(format!("g = {g} unstable"));
            break;
        }
        if last.is_some_and(|l| e.p_b2 > l) {
            monotone = false;
            break;
        }
        last = Some(e.p_b2);
        if e.p_b2 <= p0 {
            found = Some(g);
            if g > 1 {
                let below = eval(g - 1, &mut evals)?;
                if below.stable && below.p_b2 > e.p_b2 {
                    monotone = false;
                }
            }
            break;
        }
    }
    if !monotone {
        diagnostics.push("P_b2 not monotone in g; full scan".into());
        found = None;
        for g in 1..c {
            let e = eval(g, &mut evals)?;
            if e.stable && e.p_b2 <= p0 {
                found = Some(g);
            }
        }
    }
    let feasible: Vec<usize> = evals
        .iter()
        .filter(|(_, e)| e.stable && e.p_b2 <= p0)
        .map(|(&(g, _), _)| g)
        .collect();
    if evals.values().all(|e| !e.stable) {
        diagnostics.push("no evaluated g is stable".into());
    }
    Ok(OptimizationResult {
        g_star: found,
        c_star: found.map(|_| c),
        feasible_set: BTreeMap::from([(c, feasible)]),
        evaluations: evals,
        p0: Some(p0),
        p1: None,
        p2: None,
        status: if found.is_some() { Status::Optimal } else { Status::Infeasible },
        diagnostics,
    })
}

/// Smallest `c ∈ 2..=c_max` with a nonempty `Θ = {g : P_b1 ≤ p1, P_b2 ≤ p2}`; the witness is the
/// largest `g ∈ Θ`.
pub fn optimize_c(base: &SystemConfig, p1: f64, p2: f64, c_max: usize, ev: &Evaluator) -> Result<OptimizationResult> {
    let mut evaluations = BTreeMap::new();
    let mut feasible_set = BTreeMap::new();
    for c in 2..=c_max {
        let results: Vec<(usize, Result<Evaluation>)> = (1..c)
            .into_par_iter()
            .map(|g| (g, ev.evaluate(&with_servers(base, c, g))))
            .collect();
        let mut theta = Vec::new();
        for (g, r) in results {
            let e = r?;
            if e.stable && e.p_b1 <= p1 && e.p_b2 <= p2 {
                theta.push(g);
            }
            evaluations.insert((g, c), e);
        }
        let witness = theta.iter().copied().max();
        feasible_set.insert(c, theta);
        if let Some(g) = witness {
            return Ok(OptimizationResult {
                g_star: Some(g),
                c_star: Some(c),
                feasible_set,
                evaluations,
                p0: None,
                p1: Some(p1),
                p2: Some(p2),
                status: Status::Optimal,
                diagnostics: Vec::new(),
            });
        }
    }
    Ok(OptimizationResult {
        g_star: None,
        c_star: None,
        feasible_set,
        evaluations,
        p0: None,
        p1: Some(p1),
        p2: Some(p2),
        status: Status::BudgetExhausted,
        diagnostics: vec![format!("no feasible (g, c) with c <= {c_max}")],
    })
}
