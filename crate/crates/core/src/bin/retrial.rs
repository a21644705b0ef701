use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use retrial_core::config::{manifest_hash, ConfigFile, SweepParam};
use retrial_core::des::{self, SimOptions};
use retrial_core::generator::GeneratorView;
use retrial_core::optimizer::{self, Evaluator};
use retrial_core::{ergodicity, fmt_sig, models, performance, solver, Error, Result, SystemConfig};

#[derive(Parser)]
#[command(name = "retrial", version, about = "Stationary analysis of a two-class BMAP retrial queue with guard servers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML model description.
    config: PathBuf,
    /// Output file; standard output when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Override a sweepable parameter, e.g. `g=4` or `lambda_r=10`.
    #[arg(long = "set", value_name = "PARAM=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    epsilon0: Option<f64>,
    #[arg(long = "n-max")]
    n_max: Option<usize>,
    /// Fix the boundary level instead of searching for it.
    #[arg(long)]
    k0: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model and list every violated rule.
    Validate(Common),
    /// Arrival, retrial and service rates, and the level size.
    Rates(Common),
    /// Load, busy-server service rates and the drift check.
    Stability {
        #[command(flatten)]
        common: Common,
        /// Also evaluate the sign of the determinant derivative.
        #[arg(long)]
        det: bool,
    },
    /// Stationary distribution as `level,busy,probability`.
    Solve(Common),
    /// Performance measures of the stationary regime.
    Measures {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Discrete-event simulation with 99% confidence intervals.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e6)]
        horizon: f64,
        #[arg(long, default_value_t = 20)]
        replications: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "max-level", default_value_t = 10)]
        max_level: usize,
    },
    /// Largest number of guard-free servers meeting a priority blocking target.
    OptimizeG {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p0: f64,
    },
    /// Smallest number of servers meeting both blocking targets.
    OptimizeC {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p1: f64,
        #[arg(long)]
        p2: f64,
        #[arg(long = "c-max")]
        c_max: usize,
    },
    /// Vary one parameter over a grid; uses the `[sweep]` section unless both flags are given.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: Option<CliParam>,
        /// Comma-separated grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CliParam {
    G,
    C,
    LambdaO,
    LambdaH,
    LambdaR,
}

impl From<CliParam> for SweepParam {
    fn from(p: CliParam) -> Self {
        match p {
            CliParam::G => SweepParam::G,
            CliParam::C => SweepParam::C,
            CliParam::LambdaO => SweepParam::LambdaO,
            CliParam::LambdaH => SweepParam::LambdaH,
            CliParam::LambdaR => SweepParam::LambdaR,
        }
    }
}

fn parse_param(name: &str) -> Result<SweepParam> {
    Ok(match name {
        "g" => SweepParam::G,
        "c" => SweepParam::C,
        "lambda_o" => SweepParam::LambdaO,
        "lambda_h" => SweepParam::LambdaH,
        "lambda_r" => SweepParam::LambdaR,
        _ => return Err(Error::InvalidConfig(format!("unknown parameter `{name}`"))),
    })
}

/// Loaded config with the manifest of this run.
struct Run {
    file: ConfigFile,
    manifest: String,
    command: String,
    common: Common,
}

impl Run {
    fn load(command: &str, common: &Common) -> Result<Self> {
        let text = std::fs::read_to_string(&common.config)?;
        let mut file = ConfigFile::parse(&text)?;
        for s in &common.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("--set expects PARAM=VALUE, got `{s}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("--set {k}: `{v}` is not a number")))?;
            file = file.with_param(parse_param(k.trim())?, v)?;
        }
        let solver = &mut file.solver;
        if common.epsilon.is_some() {
            solver.epsilon = common.epsilon;
        }
        if common.epsilon0.is_some() {
            solver.epsilon0 = common.epsilon0;
        }
        if common.n_max.is_some() {
            solver.n_max = common.n_max;
        }
        if common.k0.is_some() {
            solver.k0 = common.k0;
        }
        let overrides = overrides(common);
        Ok(Run {
            manifest: manifest_hash(&text, command, &overrides),
            file,
            command: command.to_string(),
            common: common.clone(),
        })
    }

    fn system(&self) -> Result<SystemConfig> {
        self.file.to_system()
    }

    fn header(&self, cfg: &SystemConfig, captured_mass: f64, extra: &[(&str, String)]) -> Vec<(String, String)> {
        let mut h = vec![
            ("manifest".to_string(), self.manifest.clone()),
            ("version".to_string(), retrial_core::VERSION.to_string()),
            ("command".to_string(), self.command.clone()),
            ("config".to_string(), self.common.config.display().to_string()),
            ("overrides".to_string(), overrides(&self.common).join(" ")),
            ("captured_mass".to_string(), fmt_sig(captured_mass)),
            ("epsilon".to_string(), fmt_sig(cfg.solver.epsilon)),
            ("epsilon0".to_string(), fmt_sig(cfg.solver.epsilon0)),
            ("N_max".to_string(), cfg.solver.n_max.to_string()),
        ];
        h.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
        h
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        open_output(self.common.out.as_deref())
    }
}

fn overrides(common: &Common) -> Vec<String> {
    let mut o: Vec<String> = common.set.iter().map(|s| format!("set {s}")).collect();
    if let Some(v) = common.epsilon {
        o.push(format!("epsilon={v}"));
    }
    if let Some(v) = common.epsilon0 {
        o.push(format!("epsilon0={v}"));
    }
    if let Some(v) = common.n_max {
        o.push(format!("N_max={v}"));
    }
    if let Some(v) = common.k0 {
        o.push(format!("k0={v}"));
    }
    o
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_header(out: &mut dyn Write, header: &[(String, String)]) -> Result<()> {
    for (k, v) in header {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

fn validate(run: &Run) -> Result<()> {
    let cfg = run.file.to_system_unchecked()?;
    let report = models::validate(&cfg);
    let mut out = run.output()?;
    if report.is_valid() {
        writeln!(out, "valid")?;
        out.flush()?;
        Ok(())
    } else {
        writeln!(out, "{report}")?;
        out.flush()?;
        Err(Error::InvalidConfig(format!("{} violation(s)", report.violations.len())))
    }
}

fn rates(run: &Run) -> Result<()> {
    let cfg = run.system()?;
    let r = models::rates(&cfg)?;
    let mut out = run.output()?;
    for (k, v) in [
        ("lambda1", r.lambda1),
        ("lambda_b1", r.lambda_b1),
        ("lambda2", r.lambda2),
        ("lambda_b2", r.lambda_b2),
        ("sigma", r.sigma),
        ("mu", r.mu),
    ] {
        writeln!(out, "{k}={}", fmt_sig(v))?;
    }
    writeln!(out, "K={}", cfg.state_count())?;
    out.flush()?;
    Ok(())
}

fn stability(run: &Run, det: bool) -> Result<()> {
    let cfg = run.system()?;
    let rep = ergodicity::stability_check(&cfg)?;
    let mut out = run.output()?;
    writeln!(out, "rho={}", fmt_sig(rep.rho))?;
    writeln!(out, "lambda1={}", fmt_sig(rep.lambda1))?;
    writeln!(out, "lambda2={}", fmt_sig(rep.lambda2))?;
    writeln!(out, "mu_bar_1={}", fmt_sig(rep.mu_bar_1))?;
    writeln!(out, "mu_bar_2={}", fmt_sig(rep.mu_bar_2))?;
    writeln!(out, "stable={}", rep.stable)?;
    writeln!(out, "near_critical={}", rep.near_critical)?;
    match rep.drift_margin {
        Some(m) => writeln!(out, "drift_margin={}", fmt_sig(m))?,
        None => writeln!(out, "drift_margin=unavailable")?,
    }
    if det {
        let gen = GeneratorView::build(&cfg)?;
        let d = ergodicity::det_derivative_check(&gen)?;
        writeln!(out, "det_derivative_sign={}", d.sign)?;
        writeln!(out, "det_derivative_log10={}", fmt_sig(d.log10_abs))?;
    }
    writeln!(out, "admits_solution={}", rep.admits_solution())?;
    out.flush()?;
    Ok(())
}

fn solve(run: &Run) -> Result<()> {
    let cfg = run.system()?;
    let dist = solver::stationary(&cfg)?;
    let header = run.header(
        &cfg,
        dist.captured_mass,
        &[
            ("N", dist.n.to_string()),
            ("k0", dist.k0.to_string()),
            ("tail_mass_bound", fmt_sig(dist.tail_mass_bound)),
            ("fingerprint", dist.fingerprint.clone()),
        ],
    );
    let mut out = run.output()?;
    dist.write_csv(&mut out, &header)?;
    out.flush()?;
    Ok(())
}

fn measures(run: &Run, format: Format) -> Result<()> {
    let cfg = run.system()?;
    let dist = solver::stationary(&cfg)?;
    let rep = performance::report(&dist, &cfg)?;
    let header = run.header(&cfg, dist.captured_mass, &[("N", dist.n.to_string())]);
    let mut out = run.output()?;
    write_header(&mut out, &header)?;
    match format {
        Format::Text => rep.write_text(&mut out)?,
        Format::Csv => rep.write_csv(&mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn simulate(run: &Run, opts: SimOptions) -> Result<()> {
    let cfg = run.system()?;
    let est = des::simulate(&cfg, &opts)?;
    let captured: f64 = est.joint.iter().flatten().map(|x| x.mean).sum();
    let header = run.header(
        &cfg,
        captured,
        &[
            ("seed", opts.seed.to_string()),
            ("horizon", fmt_sig(opts.horizon)),
            ("replications", opts.replications.to_string()),
        ],
    );
    let mut out = run.output()?;
    est.write_csv(&mut out, &header)?;
    out.flush()?;
    Ok(())
}

fn optimization_output(run: &Run, cfg: &SystemConfig, res: &optimizer::OptimizationResult) -> Result<()> {
    let opt = |v: Option<usize>| v.map_or("none".to_string(), |x| x.to_string());
    let thr = |v: Option<f64>| v.map_or("none".to_string(), fmt_sig);
    let header = run.header(
        cfg,
        res.min_captured_mass(),
        &[
            ("status", res.status.as_str().to_string()),
            ("g_star", opt(res.g_star)),
            ("c_star", opt(res.c_star)),
            ("p0", thr(res.p0)),
            ("p1", thr(res.p1)),
            ("p2", thr(res.p2)),
            ("diagnostics", res.diagnostics.join("; ")),
        ],
    );
    let mut out = run.output()?;
    write_header(&mut out, &header)?;
    res.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn optimize_g(run: &Run, p0: f64) -> Result<()> {
    let cfg = run.file.to_system_unchecked()?;
    let res = optimizer::optimize_g(&cfg, cfg.c, p0, &Evaluator::new())?;
    optimization_output(run, &cfg, &res)
}

fn optimize_c(run: &Run, p1: f64, p2: f64, c_max: usize) -> Result<()> {
    let cfg = run.file.to_system_unchecked()?;
    let res = optimizer::optimize_c(&cfg, p1, p2, c_max, &Evaluator::new())?;
    optimization_output(run, &cfg, &res)?;
    if res.status == optimizer::Status::BudgetExhausted {
        return Err(Error::Budget(format!("no feasible (g, c) with c <= {c_max}")));
    }
    Ok(())
}

struct SweepRow {
    value: f64,
    l_orb: f64,
    p_b1: f64,
    p_b2: f64,
    l_b: f64,
    rho: f64,
    captured_mass: f64,
}

fn sweep_point(file: &ConfigFile, param: SweepParam, value: f64) -> Result<SweepRow> {
    let cfg = file.with_param(param, value)?.to_system()?;
    let rho = ergodicity::stability_check(&cfg)?.rho;
    match solver::stationary(&cfg) {
        Ok(dist) => {
            let rep = performance::report(&dist, &cfg)?;
            Ok(SweepRow {
                value,
                l_orb: rep.l_orb,
                p_b1: rep.p_b1,
                p_b2: rep.p_b2,
                l_b: rep.l_b,
                rho,
                captured_mass: dist.captured_mass,
            })
        }
        Err(Error::Unstable(_)) => Ok(SweepRow {
            value,
            l_orb: f64::NAN,
            p_b1: f64::NAN,
            p_b2: f64::NAN,
            l_b: f64::NAN,
            rho,
            captured_mass: f64::NAN,
        }),
        Err(e) => Err(e),
    }
}

fn sweep(run: &Run, param: Option<CliParam>, values: Option<Vec<f64>>) -> Result<()> {
    let (param, values) = match (param, values, &run.file.sweep) {
        (Some(p), Some(v), _) => (SweepParam::from(p), v),
        (None, None, Some(s)) => (s.param, s.values.clone()),
        (p, v, Some(s)) => (p.map_or(s.param, SweepParam::from), v.unwrap_or_else(|| s.values.clone())),
        _ => {
            return Err(Error::InvalidConfig(
                "sweep needs --param and --values or a [sweep] section".into(),
            ))
        }
    };
    let rows: Vec<Result<SweepRow>> = values
        .par_iter()
        .map(|&v| sweep_point(&run.file, param, v))
        .collect();
    let rows: Vec<SweepRow> = rows.into_iter().collect::<Result<_>>()?;
    let cfg = run.file.to_system_unchecked()?;
    let captured = rows
        .iter()
        .map(|r| r.captured_mass)
        .filter(|m| !m.is_nan())
        .fold(f64::NAN, f64::min);
    let header = run.header(&cfg, captured, &[("param", param.name().to_string())]);
    let mut out = run.output()?;
    write_header(&mut out, &header)?;
    writeln!(out, "{},L_orb,P_b1,P_b2,L_b,rho", param.name())?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_sig(r.value),
            fmt_sig(r.l_orb),
            fmt_sig(r.p_b1),
            fmt_sig(r.p_b2),
            fmt_sig(r.l_b),
            fmt_sig(r.rho)
        )?;
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(c) => validate(&Run::load("validate", &c)?),
        Command::Rates(c) => rates(&Run::load("rates", &c)?),
        Command::Stability { common, det } => stability(&Run::load("stability", &common)?, det),
        Command::Solve(c) => solve(&Run::load("solve", &c)?),
        Command::Measures { common, format } => measures(&Run::load("measures", &common)?, format),
        Command::Simulate {
            common,
            horizon,
            replications,
            seed,
            max_level,
        } => simulate(
            &Run::load("simulate", &common)?,
            SimOptions {
                horizon,
                replications,
                seed,
                max_level,
                ..SimOptions::default()
            },
        ),
        Command::OptimizeG { common, p0 } => optimize_g(&Run::load("optimize-g", &common)?, p0),
        Command::OptimizeC { common, p1, p2, c_max } => {
            optimize_c(&Run::load("optimize-c", &common)?, p1, p2, c_max)
        }
        Command::Sweep { common, param, values } => sweep(&Run::load("sweep", &common)?, param, values),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
