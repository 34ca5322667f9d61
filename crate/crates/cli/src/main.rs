mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anisolab::exponents::region_memberships;
use anisolab::grid::GridField;
use anisolab::solver::{run_ladder, LadderOptions, LevelMethod, WeightSpec};
use anisolab::stability::{
    geometric_radii, nonexistence_certificate, stability_index, EigenOptions, NonlinearityEval,
};
use anisolab::truncations::{default_samples, verify_properties, TruncationPair};
use anisolab::{Error, ExponentData, Grid, Nonlinearity, ProblemSpec, SolverTolerances, StabilityVariant};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use config::{RunConfig, WeightKind};

/// Experiments for the singular anisotropic p-Laplace equation.
#[derive(Parser, Debug)]
#[command(name = "anisolab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Exponents, regions, beta window and theorem applicability.
    Thresholds,
    /// Checks the truncation pair properties on a sample grid.
    TruncationCheck,
    /// Runs the regularization ladder and writes level fields.
    Solve,
    /// Smallest value of the stability quotient for a candidate field.
    Stability,
    /// Radius sweep and nonexistence certificate for a candidate field.
    Sweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Thresholds => "thresholds",
            Self::TruncationCheck => "truncation-check",
            Self::Solve => "solve",
            Self::Stability => "stability",
            Self::Sweep => "sweep",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum MethodArg {
    Direct,
    FixedPoint,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum VariantArg {
    AsWritten,
    WeightedByG,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum WeightArg {
    Constant,
    RadialPower,
    File,
}

/// Every flag overrides the matching config key.
#[derive(Args, Debug, Default)]
struct Flags {
    /// TOML config (dotted keys allowed).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Anisotropy exponents, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gamma: Option<f64>,
    /// Cap M of the exponential nonlinearity.
    #[arg(long, global = true, allow_hyphen_values = true)]
    cap: Option<f64>,
    #[arg(long, global = true)]
    weight_floor: Option<f64>,
    #[arg(long, global = true, value_enum)]
    weight: Option<WeightArg>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    weight_c: Option<f64>,
    #[arg(long, global = true)]
    weight_s: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    weight_center: Option<Vec<f64>>,
    #[arg(long, global = true)]
    weight_path: Option<PathBuf>,
    #[arg(long, global = true)]
    weight_m: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    lo: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    hi: Option<Vec<f64>>,
    /// Cells per axis.
    #[arg(long, global = true)]
    res: Option<usize>,
    #[arg(long, global = true)]
    inner_tol: Option<f64>,
    #[arg(long, global = true)]
    fix_tol: Option<f64>,
    #[arg(long, global = true)]
    inner_max_iter: Option<usize>,
    #[arg(long, global = true)]
    outer_max_iter: Option<usize>,
    #[arg(long, global = true)]
    k: Option<u32>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Candidate field file for `stability` and `sweep`.
    #[arg(long, global = true)]
    field: Option<PathBuf>,
    /// Constant candidate field when no file is given.
    #[arg(long, global = true, allow_hyphen_values = true)]
    u_const: Option<f64>,
    /// Constant potential replacing f'(u) in `stability`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    lambda: Option<f64>,
    #[arg(long, global = true, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, global = true, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long, global = true)]
    cconst: Option<f64>,
    #[arg(long, global = true)]
    n_max: Option<u32>,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl Flags {
    fn resolve(self, command: Command) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                RunConfig::from_toml(&text).map_err(|e| Error::Parse(e.to_string()))?
            }
            None => RunConfig::default(),
        };
        c.subcommand = command.name().into();
        set!(self.p => c.p);
        if self.delta.is_some() {
            c.problem.delta = self.delta;
        }
        if self.gamma.is_some() {
            c.problem.gamma = self.gamma;
        }
        if self.cap.is_some() {
            c.problem.cap = self.cap;
        }
        set!(self.weight_floor => c.problem.weight_floor);
        if let Some(w) = self.weight {
            c.weight.kind = match w {
                WeightArg::Constant => WeightKind::Constant,
                WeightArg::RadialPower => WeightKind::RadialPower,
                WeightArg::File => WeightKind::File,
            };
        }
        set!(self.weight_c => c.weight.c);
        set!(self.weight_s => c.weight.s);
        set!(self.weight_center => c.weight.center);
        if self.weight_path.is_some() {
            c.weight.path = self.weight_path;
        }
        if self.weight_m.is_some() {
            c.weight.m = self.weight_m;
        }
        set!(self.lo => c.grid.lo);
        set!(self.hi => c.grid.hi);
        set!(self.res => c.grid.res);
        if self.inner_tol.is_some() {
            c.tolerances.inner = self.inner_tol;
        }
        set!(self.fix_tol => c.tolerances.fix);
        set!(self.inner_max_iter => c.tolerances.inner_max_iter);
        set!(self.outer_max_iter => c.tolerances.outer_max_iter);
        set!(self.k => c.truncation.k);
        set!(self.alpha => c.truncation.alpha);
        set!(self.samples => c.truncation.samples);
        if self.field.is_some() {
            c.stability.field = self.field;
        }
        set!(self.u_const => c.stability.u_const);
        if self.lambda.is_some() {
            c.stability.lambda = self.lambda;
        }
        if let Some(v) = self.variant {
            c.stability.variant = match v {
                VariantArg::AsWritten => StabilityVariant::AsWritten,
                VariantArg::WeightedByG => StabilityVariant::WeightedByG,
            };
        }
        set!(self.radii => c.sweep.radii);
        set!(self.cconst => c.sweep.cconst);
        set!(self.n_max => c.n_max);
        if let Some(m) = self.method {
            c.method = match m {
                MethodArg::Direct => LevelMethod::Direct,
                MethodArg::FixedPoint => LevelMethod::FixedPoint,
            };
        }
        set!(self.out => c.out);
        set!(self.seed => c.seed);
        Ok(c)
    }
}

fn problem_spec(c: &RunConfig) -> anyhow::Result<ProblemSpec> {
    let e = ExponentData::new(c.p.clone())?;
    let kind = match (c.problem.cap, c.problem.delta) {
        (Some(_), Some(_)) => bail!(Error::InvalidInput(
            "set either problem.cap or problem.delta, not both".into()
        )),
        (Some(cap), None) => Nonlinearity::ExpSingular { cap },
        (None, Some(delta)) => Nonlinearity::MixedPower {
            delta,
            gamma: c.problem.gamma.unwrap_or(delta),
        },
        (None, None) => bail!(Error::InvalidInput(
            "the problem needs problem.delta (mixed power) or problem.cap (exponential)".into()
        )),
    };
    Ok(ProblemSpec::new(kind, c.problem.weight_floor, e)?)
}

fn build_grid(c: &RunConfig) -> anyhow::Result<Arc<Grid>> {
    let (lo, hi) = c.box_corners().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(Grid::new(lo, hi, vec![c.grid.res; c.dim()])?)
}

fn box_center(grid: &Grid) -> Vec<f64> {
    (0..grid.dim()).map(|i| 0.5 * (grid.lo()[i] + grid.hi()[i])).collect()
}

fn read_field(path: &Path, grid: &Arc<Grid>) -> anyhow::Result<GridField> {
    let text = fs::read_to_string(path).with_context(|| format!("reading field {}", path.display()))?;
    let f = GridField::from_text(&text)?;
    if f.grid().res() != grid.res() || f.grid().lo() != grid.lo() || f.grid().hi() != grid.hi() {
        bail!(Error::InvalidInput(format!(
            "field {} does not match the configured grid",
            path.display()
        )));
    }
    // rebind onto the configured grid so all fields share one Arc
    Ok(GridField::from_values(grid, f.into_values())?)
}

fn build_weight(c: &RunConfig, grid: &Arc<Grid>) -> anyhow::Result<WeightSpec> {
    Ok(match c.weight.kind {
        WeightKind::Constant => WeightSpec::constant(grid, c.weight.c)?,
        WeightKind::RadialPower => {
            let center = if c.weight.center.is_empty() {
                box_center(grid)
            } else {
                c.weight.center.clone()
            };
            if center.len() != grid.dim() {
                bail!(Error::InvalidInput("weight.center has the wrong dimension".into()));
            }
            WeightSpec::radial_power(grid, c.weight.s, &center)?
        }
        WeightKind::File => {
            let path = c
                .weight
                .path
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("weight.kind = file needs weight.path".into()))?;
            WeightSpec::new(read_field(path, grid)?, c.weight.m.unwrap_or(f64::INFINITY))?
        }
    })
}

fn candidate(c: &RunConfig, grid: &Arc<Grid>) -> anyhow::Result<GridField> {
    match &c.stability.field {
        Some(path) => read_field(path, grid),
        None => Ok(GridField::constant(grid, c.stability.u_const)),
    }
}

/// Nested objects become dotted keys; arrays and scalars are kept.
fn flatten(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn write_json(dir: &Path, name: &str, v: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn run(command: Command, c: &RunConfig) -> anyhow::Result<()> {
    let out = &c.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.resolved.toml"), c.to_toml()?)?;
    match command {
        Command::Thresholds => {
            let spec = problem_spec(c)?;
            let report = region_memberships(&spec);
            let mut flat = Map::new();
            flatten("", &serde_json::to_value(&report)?, &mut flat);
            let v = Value::Object(flat);
            write_json(out, "thresholds.json", &v)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Command::TruncationCheck => {
            let e = ExponentData::new(c.p.clone())?;
            let tp = TruncationPair::new(c.truncation.k, c.truncation.alpha, e.p_max())?;
            let samples = default_samples(c.truncation.k, c.truncation.samples);
            let report = verify_properties(&tp, &samples, e.p())?;
            write_json(out, "truncation.json", &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            report.into_result()?;
        }
        Command::Solve => {
            let e = ExponentData::new(c.p.clone())?;
            let grid = build_grid(c)?;
            let weight = build_weight(c, &grid)?;
            let opts = LadderOptions {
                method: c.method,
                tolerances: SolverTolerances {
                    inner_tol: c.tolerances.inner,
                    fix_tol: c.tolerances.fix,
                    inner_max_iter: c.tolerances.inner_max_iter,
                    outer_max_iter: c.tolerances.outer_max_iter,
                },
                seed: c.seed,
                ..LadderOptions::default()
            };
            let report = run_ladder(c.n_max, &weight, &e, &opts)?;
            for (lvl, f) in report.levels.iter().zip(&report.fields) {
                fs::write(out.join(format!("u_{}.txt", lvl.n)), f.to_text())?;
            }
            write_json(out, "ladder.json", &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(f) = &report.failure {
                bail!(Error::NonConvergence {
                    what: format!("ladder level {}: {}", f.level, f.message),
                    iterations: 0,
                    residual: f64::NAN,
                });
            }
        }
        Command::Stability => {
            let e = ExponentData::new(c.p.clone())?;
            let grid = build_grid(c)?;
            let g = build_weight(c, &grid)?.field().clone();
            let u = candidate(c, &grid)?;
            let nl = match c.stability.lambda {
                Some(slope) => NonlinearityEval::Linear { slope },
                None => NonlinearityEval::from_spec(&problem_spec(c)?),
            };
            let report = stability_index(&u, &nl, &g, &e, c.stability.variant, &EigenOptions::default())?;
            write_json(out, "stability.json", &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep => {
            let spec = problem_spec(c)?;
            let grid = build_grid(c)?;
            let g = build_weight(c, &grid)?.field().clone();
            let u = candidate(c, &grid)?;
            let radii = if c.sweep.radii.is_empty() {
                let half = (0..grid.dim())
                    .map(|i| 0.5 * (grid.hi()[i] - grid.lo()[i]))
                    .fold(f64::INFINITY, f64::min);
                geometric_radii(0.05 * half, 0.5 * half, 6)
            } else {
                c.sweep.radii.clone()
            };
            let cert = nonexistence_certificate(&spec, &u, &g, c.sweep.cconst, &radii)?;
            fs::write(out.join("sweep.csv"), cert.sweep.to_csv())?;
            write_json(out, "certificate.json", &cert)?;
            println!("{}", cert.conclusion);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonConvergence { .. } => 3,
                Error::NotApplicable(_) | Error::HypothesisViolated(_) => 4,
                Error::PropertyViolation { .. } => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = cli.command;
    let result = cli.flags.resolve(command).and_then(|c| run(command, &c));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
