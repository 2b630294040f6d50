use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use fairstack::bounds::{bounds_report, ReportOptions};
use fairstack::config::{Config, NamedScenario};
use fairstack::experiments::{self, BetaGrid, SweepMeta, SweepOptions};
use fairstack::fairness::{self, FairnessKind, FairnessSpec};
use fairstack::model::{self, Sampler};
use fairstack::objectives::Objective;
use fairstack::solvers::{self, EquilibriumResult, Targets};
use fairstack::{agent, rng, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "fairstack", version, about = "Fair Stackelberg equilibria for strategic learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check scenario invariants and fairness properties.
    Validate(Common),
    /// Solve the constrained and unconstrained problems.
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        problem: Problem,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Evaluate every applicable optimality-loss bound.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        fairness: Option<KindArg>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 32)]
        starts: usize,
    },
    /// Sweep the fairness budget and write CSV and SVG.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        problem: Problem,
        /// lo:hi:n followed by lin or geo.
        #[arg(long, conflicts_with = "beta")]
        beta_grid: Option<String>,
        /// Single-point sweep.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Compare peer-learned estimates with the closed form.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Peers sampled per group.
        #[arg(long)]
        peers: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct Problem {
    #[arg(long, value_enum)]
    objective: Option<ObjArg>,
    #[arg(long, value_enum)]
    fairness: Option<KindArg>,
    #[arg(long, default_value_t = 32)]
    starts: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjArg {
    Acc,
    Sw,
}

impl From<ObjArg> for Objective {
    fn from(o: ObjArg) -> Self {
        match o {
            ObjArg::Acc => Objective::Accuracy,
            ObjArg::Sw => Objective::SocialWelfare,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    L1,
    L2,
    Asym,
}

impl From<KindArg> for FairnessKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::L1 => FairnessKind::L1,
            KindArg::L2 => FairnessKind::L2,
            KindArg::Asym => FairnessKind::Asym,
        }
    }
}

enum Failure {
    Lib(Error),
    Validation(String),
    NonConvergence(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    config: Config,
    out: PathBuf,
    seed: u64,
    quiet: bool,
}

impl Ctx {
    fn new(c: &Common) -> Result<Ctx, Failure> {
        let config = Config::load(&c.config)?;
        let seed = c.seed.or(config.seed).unwrap_or(0);
        Ok(Ctx {
            config,
            out: c.out.clone(),
            seed,
            quiet: c.quiet,
        })
    }

    fn say(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
        }
    }

    fn out_path(&self, name: &str) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })?;
        Ok(self.out.join(name))
    }

    fn write(&self, name: &str, text: &str) -> Outcome {
        let p = self.out_path(name)?;
        std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })?;
        Ok(())
    }

    fn objective(&self, arg: Option<ObjArg>) -> Result<Objective, Failure> {
        Ok(match arg {
            Some(o) => o.into(),
            None => self.config.sweep.objective()?.unwrap_or(Objective::Accuracy),
        })
    }

    fn spec(&self, ns: &NamedScenario, kind: Option<KindArg>, beta: Option<f64>) -> Result<FairnessSpec, Failure> {
        Ok(self.config.fairness_spec(&ns.scenario, kind.map(Into::into), beta)?)
    }

    /// File name for per-scenario output: `base.ext` alone, `base-name.ext` with splits.
    fn per_scenario(&self, base: &str, ext: &str, ns: &NamedScenario) -> String {
        if self.config.scenarios.len() == 1 {
            format!("{base}.{ext}")
        } else {
            format!("{base}-{}.{ext}", sanitize(&ns.name))
        }
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn fmt_vec(v: &DVector<f64>) -> String {
    // + 0.0 turns -0.0 into 0.0
    let parts: Vec<String> = v.iter().map(|x| format!("{:.9}", x + 0.0)).collect();
    format!("({})", parts.join(", "))
}

fn describe(r: &EquilibriumResult) -> String {
    let mut s = format!(
        "    w = {}  {} = {:.12}",
        fmt_vec(r.weights()),
        r.objective.label(),
        r.objective_value + 0.0
    );
    if let Some(d) = r.delta_value {
        let _ = write!(s, "  delta = {d:.12}");
    }
    let _ = write!(
        s,
        "\n    geometry = {}, iterations = {}, converged = {}",
        r.geometry.label(),
        r.iterations,
        r.converged
    );
    if r.heuristic {
        s.push_str(", heuristic");
    }
    if r.degenerate {
        s.push_str(", degenerate");
    }
    s.push('\n');
    s
}

fn cmd_validate(c: &Common) -> Outcome {
    let ctx = Ctx::new(c)?;
    let mut text = String::new();
    let mut failures = Vec::new();
    for ns in &ctx.config.scenarios {
        let rep = model::validate_scenario(&ns.scenario);
        let _ = writeln!(text, "scenario '{}' (d = {})", ns.name, ns.scenario.dim());
        if rep.is_valid() {
            let _ = writeln!(text, "  structure: ok");
        } else {
            for v in &rep.violations {
                let _ = writeln!(text, "  violation {:?}: {}", v.kind, v.message);
                failures.push(format!("{}: {:?}", ns.name, v.kind));
            }
            continue;
        }
        if ctx.config.fairness.is_some() {
            let spec = ctx.spec(ns, None, None)?;
            let pr = fairness::property_report(&ns.scenario, &spec)?;
            let _ = write!(text, "{pr}");
        }
    }
    ctx.say(&text);
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("invalid scenario ({})", failures.join("; "))))
    }
}

fn require_valid(ns: &NamedScenario) -> Outcome {
    let rep = model::validate_scenario(&ns.scenario);
    if rep.is_valid() {
        return Ok(());
    }
    let kinds: Vec<String> = rep.violations.iter().map(|v| format!("{:?}: {}", v.kind, v.message)).collect();
    Err(Failure::Validation(format!("scenario '{}' is invalid: {}", ns.name, kinds.join("; "))))
}

fn cmd_solve(c: &Common, p: &Problem, beta: Option<f64>) -> Outcome {
    let ctx = Ctx::new(c)?;
    let obj = ctx.objective(p.objective)?;
    let mut text = String::new();
    let mut stalled = Vec::new();
    for ns in &ctx.config.scenarios {
        require_valid(ns)?;
        let spec = ctx.spec(ns, p.fairness, beta)?;
        let targets = Targets::from_scenario(&ns.scenario)?;
        let unc = solvers::solve_unconstrained(obj, &targets);
        let _ = writeln!(
            text,
            "scenario '{}': {} objective, {} fairness, beta = {}",
            ns.name,
            obj.label(),
            spec.kind().label(),
            spec.beta
        );
        let _ = write!(text, "  unconstrained (delta there = {:.12})\n{}", spec.delta(unc.weights()), describe(&unc));
        let best = if spec.kind().is_convex() {
            let r = solvers::solve_constrained(obj, &spec, &targets)?;
            let _ = write!(text, "  constrained\n{}", describe(&r));
            r
        } else {
            let s = solvers::solve_nonconvex_sandwich(obj, &spec, &targets, p.starts, ctx.seed)?;
            let _ = write!(text, "  restricted (inner ellipsoid)\n{}", describe(&s.restricted));
            let _ = write!(text, "  multistart (best fair point found)\n{}", describe(&s.multistart));
            let _ = write!(text, "  envelope (outer ellipsoid, ball only)\n{}", describe(&s.envelope));
            let _ = writeln!(
                text,
                "  sandwich restricted <= multistart <= envelope: {}",
                if s.ordered() { "holds" } else { "VIOLATED" }
            );
            s.multistart
        };
        let _ = writeln!(text, "  realized loss = {:.12}", unc.objective_value - best.objective_value);
        if !best.converged {
            stalled.push(ns.name.clone());
        }
    }
    ctx.say(&text);
    ctx.write("solve.txt", &text)?;
    if stalled.is_empty() {
        Ok(())
    } else {
        Err(Failure::NonConvergence(format!("solver did not converge for {}", stalled.join(", "))))
    }
}

fn cmd_bounds(c: &Common, kind: Option<KindArg>, beta: Option<f64>, starts: usize) -> Outcome {
    let ctx = Ctx::new(c)?;
    let mut text = String::new();
    let opts = ReportOptions {
        solve: true,
        starts,
        seed: ctx.seed,
    };
    for ns in &ctx.config.scenarios {
        require_valid(ns)?;
        let spec = ctx.spec(ns, kind, beta)?;
        let targets = Targets::from_scenario(&ns.scenario)?;
        let rep = bounds_report(&spec, &targets, &opts)?;
        let _ = writeln!(text, "scenario '{}'", ns.name);
        let _ = write!(text, "{rep}");
        ctx.write(&ctx.per_scenario("bounds", "csv", ns), &rep.to_csv())?;
    }
    ctx.say(&text);
    ctx.write("bounds.txt", &text)?;
    Ok(())
}

fn cmd_sweep(c: &Common, p: &Problem, grid: Option<&str>, beta: Option<f64>) -> Outcome {
    let ctx = Ctx::new(c)?;
    let obj = ctx.objective(p.objective)?;
    let grid: Option<BetaGrid> = match grid {
        Some(g) => Some(g.parse()?),
        None => ctx.config.sweep.grid()?,
    };
    let starts = ctx.config.sweep.starts.unwrap_or(p.starts);
    let opts = SweepOptions { starts, seed: ctx.seed };
    let mut results = Vec::new();
    let mut text = String::new();
    for ns in &ctx.config.scenarios {
        require_valid(ns)?;
        let spec = ctx.spec(ns, p.fairness, Some(0.0))?;
        let targets = Targets::from_scenario(&ns.scenario)?;
        let values = match (beta, grid) {
            (Some(b), _) => vec![b],
            (None, Some(g)) => g.values(),
            (None, None) => {
                let unc = solvers::solve_unconstrained(obj, &targets);
                BetaGrid::default_for(spec.delta(unc.weights())).values()
            }
        };
        let meta = SweepMeta {
            label: ns.name.clone(),
            cost_case: ctx.config.sweep.cost_case.clone().unwrap_or_default(),
            seed: ctx.seed,
        };
        let res = experiments::beta_sweep(&spec, &targets, &values, obj, &opts, meta)?;
        let path = ctx.out_path(&ctx.per_scenario("sweep", "csv", ns))?;
        experiments::emit_csv(&res, &path)?;
        let failed = res.points.iter().filter(|pt| !pt.converged).count();
        let _ = writeln!(
            text,
            "scenario '{}': {} points, unconstrained {} = {:.12}, recovery threshold = {:.12}, monotone = {}, failed = {failed}",
            ns.name,
            res.points.len(),
            obj.label(),
            res.unconstrained_value,
            res.unconstrained_delta,
            res.is_monotone()
        );
        for pt in &res.points {
            if let Some(e) = &pt.error {
                let _ = writeln!(text, "  beta = {}: {e}", pt.beta);
            }
        }
        let _ = writeln!(text, "  wrote {}", path.display());
        results.push(res);
    }
    let title = ctx.config.sweep.title.clone().unwrap_or_else(|| {
        format!(
            "{} under {} fairness",
            if obj == Objective::Accuracy { "accuracy" } else { "social welfare" },
            results[0].kind.label()
        )
    });
    let svg = ctx.out_path("sweep.svg")?;
    experiments::emit_plot(&results, &svg, &title)?;
    let _ = writeln!(text, "wrote {}", svg.display());
    ctx.say(&text);
    let failed: usize = results.iter().map(|r| r.points.iter().filter(|p| !p.converged).count()).sum();
    if failed > 0 {
        return Err(Failure::NonConvergence(format!("{failed} sweep points did not converge")));
    }
    Ok(())
}

fn cmd_simulate(c: &Common, peers: Option<usize>, noise: Option<f64>) -> Outcome {
    let ctx = Ctx::new(c)?;
    let n = peers.unwrap_or(ctx.config.simulate.n_per_group);
    let noise = noise.unwrap_or(ctx.config.simulate.noise_sd);
    let mut text = String::new();
    for ns in &ctx.config.scenarios {
        require_valid(ns)?;
        let s = &ns.scenario;
        let d = s.dim();
        let mut wr = rng::stream(ctx.seed, &[0x51, 0]);
        let random_w = DVector::from_fn(d, |_, _| rand::Rng::random::<f64>(&mut wr) * 2.0 - 1.0);
        let policies = [s.ground_truth.clone(), random_w.normalize() * 0.8];
        let _ = writeln!(text, "scenario '{}': {n} peers per group, noise sd {noise}", ns.name);
        for g in 0..2 {
            let group = s.group(g);
            let sampler = group.sampler.clone().unwrap_or_else(|| Sampler {
                mean: DVector::zeros(d),
                factor: group.projector.clone(),
            });
            let mut dev_closed = 0.0f64;
            let mut dev_rowspace = 0.0f64;
            for (k, w) in policies.iter().enumerate() {
                let seed = rng::derive_seed(ctx.seed, &[0x51, g as u64 + 1, k as u64]);
                let data = agent::sample_peers(&sampler, w, n, seed, noise)?;
                let erm = agent::peer_estimate_erm(&data);
                let closed = agent::peer_estimate_closed_form(&group.projector, w)?;
                dev_closed = dev_closed.max((&erm - closed).amax());
                let row_proj = model::projector_from_samples(data.features(), d)?.projector;
                dev_rowspace = dev_rowspace.max((&erm - row_proj * w).amax());
            }
            let _ = writeln!(
                text,
                "  group {}: max |ERM - Pi_g w| = {dev_closed:.3e}, max |ERM - P_rows w| = {dev_rowspace:.3e}",
                g + 1
            );
        }
    }
    ctx.say(&text);
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Validate(c) => cmd_validate(c),
        Command::Solve { common, problem, beta } => cmd_solve(common, problem, *beta),
        Command::Bounds {
            common,
            fairness,
            beta,
            starts,
        } => cmd_bounds(common, *fairness, *beta, *starts),
        Command::Sweep {
            common,
            problem,
            beta_grid,
            beta,
        } => cmd_sweep(common, problem, beta_grid.as_deref(), *beta),
        Command::Simulate { common, peers, noise } => cmd_simulate(common, *peers, *noise),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Numeric { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::NonConvergence(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_NONCONVERGENCE)
        }
    }
}
