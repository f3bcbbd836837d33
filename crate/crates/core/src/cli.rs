//! Command-line front end.
//!
//! Every subcommand writes `<out>/<name>.json` holding the crate version,
//! the seed, the resolved configuration and the result. A `--config` file
//! holds flat `key = value` lines whose keys are the long flag names; its
//! entries are placed ahead of the command-line flags, so flags win.
//!
//! Exit codes: 0 pass, 1 experiment failure, 2 invalid input.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::constants::ellipticity_threshold;
use crate::envelope::dfk;
use crate::error::{Error, Result};
use crate::experiments::{
    blowup_experiment, eigenvalue_constraint_check, ellipticity_check, envelope_check, subspace_bounds_check,
    BlowupOptions, ExperimentReport, SubspaceOptions,
};
use crate::fracop::{linear_fracop, linear_fracop_ycoords, profile_by_name, QuadratureSpec, TestFunctionProfile};
use crate::infimum::{f_ks, InfOptions, SearchMode};
use crate::report::to_json_string;
use crate::solver::{modulus_report, solve_global, GridShape, SolveMethod, SolveOptions};
use crate::symcone::SymMatrix;

pub const THREADS_ENV: &str = "FRAC_HESSIAN_THREADS";

#[derive(Parser, Debug)]
#[command(name = "frac-hessian", version, about = "Fractional k-Hessian operators and experiments")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Flat `key = value` file; command-line flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (also read from FRAC_HESSIAN_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ellipticity constants chain.
    Constants(ConstantsArgs),
    /// Envelope invariants on random generators.
    EnvelopeCheck(EnvelopeArgs),
    /// One linear operator value `L_M[u](x)` with `M = Df_k(diag b)`.
    Eval(EvalArgs),
    /// `F_{k,s}[u](x)` by multi-start search.
    Inf(InfArgs),
    /// Blow-up rate along the degenerate family.
    Blowup(BlowupArgs),
    /// Subspace integral bounds over random frames.
    Subspace(SubspaceArgs),
    /// Eigenvalue constraints on the level sets.
    Eigencheck(EigenArgs),
    /// Restricted infimum against the constants chain.
    Ellipticity(EllipticityArgs),
    /// Global equation on a grid.
    Solve(SolveArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct QuadArgs {
    #[arg(long, default_value_t = 48)]
    pub n_radial: usize,
    #[arg(long, default_value_t = 32)]
    pub n_angular: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub r_min: f64,
    #[arg(long, default_value_t = 1e4)]
    pub r_max: f64,
}

impl QuadArgs {
    fn spec(&self, seed: u64) -> QuadratureSpec {
        QuadratureSpec {
            n_radial: self.n_radial,
            n_angular: self.n_angular,
            r_min: self.r_min,
            r_max: self.r_max,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ProfileArgs {
    #[arg(long, default_value = "smoothed_cone")]
    pub profile: String,
    /// Profile parameter (`a` for the cone, `c` for the dimple and quadratic).
    #[arg(long, allow_negative_numbers = true)]
    pub param: Option<f64>,
}

impl ProfileArgs {
    fn load(&self) -> Result<TestFunctionProfile> {
        profile_by_name(&self.profile, self.param)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ConstantsArgs {
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 0.75)]
    pub s: f64,
    #[arg(long = "L", default_value_t = 1.0)]
    #[serde(rename = "L")]
    pub l: f64,
    #[arg(long = "SC", default_value_t = 1.0)]
    #[serde(rename = "SC")]
    pub sc: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eta0: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EnvelopeArgs {
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 50)]
    pub tests: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorPath {
    /// Isotropic coordinates `z = √M⁻¹y`.
    Z,
    /// Original coordinates with the anisotropic kernel.
    Y,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0.75)]
    pub s: f64,
    /// Evaluation point, comma separated (default: origin).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Option<Vec<f64>>,
    /// Diagonal of the generator `B` (default: ones).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub b: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "z")]
    pub path: OperatorPath,
    #[command(flatten)]
    pub quad: QuadArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 8)]
    pub n_starts: usize,
    #[arg(long, default_value_t = 4000)]
    pub max_evals: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub xtol: f64,
    /// Restrict the search to diagonal generators.
    #[arg(long)]
    pub diagonal: bool,
}

impl SearchArgs {
    fn options(&self, quad: QuadratureSpec, seed: u64) -> InfOptions {
        InfOptions {
            n_starts: self.n_starts,
            seed,
            mode: if self.diagonal { SearchMode::Diagonal } else { SearchMode::Full },
            max_evals: self.max_evals,
            xtol: self.xtol,
            quad,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InfArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0.75)]
    pub s: f64,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x: Option<Vec<f64>>,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub quad: QuadArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BlowupArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 0.75)]
    pub s: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps_min: f64,
    #[arg(long, default_value_t = 1e-1)]
    pub eps_max: f64,
    /// Log-spaced sweep points.
    #[arg(long, default_value_t = 9)]
    pub count: usize,
    #[arg(long, default_value_t = 0.05)]
    pub slope_tol: f64,
    /// Logs the soft lower bound for this `η0`.
    #[arg(long)]
    pub eta0: Option<f64>,
    #[command(flatten)]
    pub quad: QuadArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SubspaceArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 0.75)]
    pub s: f64,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    /// Measured `η0`; enables the lower bound.
    #[arg(long)]
    pub eta0: Option<f64>,
    #[command(flatten)]
    pub quad: QuadArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EigenArgs {
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EllipticityArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, default_value_t = 0.75)]
    pub s: f64,
    /// Evaluation point; its length fixes the dimension.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0,0,0")]
    pub x: Vec<f64>,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub quad: QuadArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Policy,
    Picard,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0.75)]
    pub s: f64,
    /// Points per axis.
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    /// Box half-width.
    #[arg(long = "R", default_value_t = 8.0)]
    #[serde(rename = "R")]
    pub radius: f64,
    #[arg(long, value_enum, default_value = "policy")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    #[arg(long, default_value_t = 30)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub residual_tol: f64,
    /// Direction count of the discrete operator.
    #[arg(long, default_value_t = 128)]
    pub directions: usize,
    #[arg(long, default_value_t = 3)]
    pub n_starts: usize,
    #[arg(long, default_value_t = 64.0)]
    pub max_cond: f64,
    #[arg(long)]
    pub allow_3d: bool,
    /// Grid file stem inside the output directory.
    #[arg(long, default_value = "u")]
    pub stem: String,
}

/// Splices `--config` entries in front of the command-line flags.
fn expand_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = strs.get(i + 1).cloned();
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let mut flags = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key = value", lineno + 1))?;
        let key = key.trim();
        let key = if matches!(key, "L" | "SC" | "R") { key.to_string() } else { key.replace('_', "-") };
        match value.trim() {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            v => {
                flags.push(format!("--{key}"));
                flags.push(v.to_string());
            }
        }
    }
    let names = [
        "constants",
        "envelope-check",
        "eval",
        "inf",
        "blowup",
        "subspace",
        "eigencheck",
        "ellipticity",
        "solve",
    ];
    let at = strs
        .iter()
        .position(|a| names.contains(&a.as_str()))
        .map_or(strs.len(), |i| i + 1);
    let mut out: Vec<OsString> = args[..at].to_vec();
    out.extend(flags.into_iter().map(OsString::from));
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidInput(_)
            | Error::SOutOfRange { .. }
            | Error::EpsOutOfRange { .. }
            | Error::IndexOutOfRange { .. }
            | Error::DimensionMismatch { .. }
            | Error::ConeViolation { .. }
            | Error::TailUnbounded { .. }
            | Error::AnisotropyTooExtreme { .. }
            | Error::FrameNotOrthonormal { .. }
    )
}

struct Output<'a> {
    dir: &'a Path,
    seed: u64,
}

impl Output<'_> {
    fn write(&self, name: &str, config: &impl Serialize, result: Value) -> Result<PathBuf> {
        fs::create_dir_all(self.dir)?;
        let doc = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": name,
            "seed": self.seed,
            "config": serde_json::to_value(config)?,
            "result": result,
        });
        let path = self.dir.join(format!("{name}.json"));
        fs::write(&path, to_json_string(&doc)?)?;
        Ok(path)
    }

    fn experiment(&self, name: &str, config: &impl Serialize, rep: &ExperimentReport) -> Result<bool> {
        self.write(name, config, serde_json::to_value(rep)?)?;
        fs::write(self.dir.join(format!("{name}.csv")), rep.samples_csv())?;
        println!("{name}: {:?}", rep.verdict);
        for note in &rep.notes {
            println!("  note: {note}");
        }
        // Not-applicable inputs are a legitimate answer, not a failure.
        Ok(rep.verdict != crate::experiments::Verdict::Fail)
    }
}

fn origin_or(x: &Option<Vec<f64>>, n: usize) -> Result<Vec<f64>> {
    let x = x.clone().unwrap_or_else(|| vec![0.0; n]);
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    Ok(x)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    let out = Output {
        dir: &cli.out,
        seed: cli.seed,
    };
    let seed = cli.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match &cli.command {
        Command::Constants(a) => {
            let rep = ellipticity_threshold(a.n, a.s, a.l, a.sc, a.eta0)?;
            out.write("constants", a, serde_json::to_value(&rep)?)?;
            println!("eps0 = {:e}", rep.eps0.closed_form);
            Ok(true)
        }
        Command::EnvelopeCheck(a) => {
            let rep = envelope_check(a.n, a.k, a.samples, a.tests, &mut rng)?;
            out.experiment("envelope_check", a, &rep)
        }
        Command::Eval(a) => {
            let u = a.profile.load()?;
            let x = origin_or(&a.x, a.n)?;
            let b = a.b.clone().unwrap_or_else(|| vec![1.0; a.n]);
            if b.len() != a.n {
                return Err(Error::DimensionMismatch { expected: a.n, got: b.len() });
            }
            let m = dfk(&SymMatrix::from_diagonal(&b), a.k)?;
            let quad = a.quad.spec(seed);
            let v = match a.path {
                OperatorPath::Z => linear_fracop(&u, &m, &x, a.s, &quad)?,
                OperatorPath::Y => linear_fracop_ycoords(&u, &m, &x, a.s, &quad)?,
            };
            out.write("eval", a, json!({ "operator": v, "M": m.to_record() }))?;
            println!("value = {}", v.value);
            Ok(true)
        }
        Command::Inf(a) => {
            let u = a.profile.load()?;
            let x = origin_or(&a.x, a.n)?;
            let opts = a.search.options(a.quad.spec(seed), seed);
            let r = f_ks(&u, &x, a.k, a.s, &opts)?;
            out.write("inf", a, serde_json::to_value(r.to_record())?)?;
            println!("F = {}", r.value);
            Ok(true)
        }
        Command::Blowup(a) => {
            if !(a.eps_min > 0.0 && a.eps_max > a.eps_min && a.count >= 2) {
                return Err(Error::InvalidInput("need 0 < eps_min < eps_max and count >= 2".into()));
            }
            let ratio = (a.eps_max / a.eps_min).ln() / (a.count - 1) as f64;
            let eps: Vec<f64> = (0..a.count).map(|i| a.eps_max * (-(i as f64) * ratio).exp()).collect();
            let opts = BlowupOptions {
                quad: a.quad.spec(seed),
                slope_tol: a.slope_tol,
                eta0: a.eta0,
            };
            let rep = blowup_experiment(&a.profile.load()?, a.n, a.s, &eps, &opts)?;
            out.experiment("blowup", a, &rep)
        }
        Command::Subspace(a) => {
            let opts = SubspaceOptions {
                quad: a.quad.spec(seed),
                ..Default::default()
            };
            let rep = subspace_bounds_check(&a.profile.load()?, a.n, a.s, a.eta0, a.frames, &opts, &mut rng)?;
            out.experiment("subspace", a, &rep)
        }
        Command::Eigencheck(a) => {
            let rep = eigenvalue_constraint_check(a.n, a.eps, a.samples, &mut rng)?;
            out.experiment("eigencheck", a, &rep)
        }
        Command::Ellipticity(a) => {
            let opts = a.search.options(a.quad.spec(seed), seed);
            let rep = ellipticity_check(&a.profile.load()?, &a.x, a.s, &opts)?;
            out.experiment("ellipticity", a, &rep)
        }
        Command::Solve(a) => {
            let phi = a.profile.load()?;
            let mut opts = SolveOptions {
                method: match a.method {
                    MethodArg::Policy => SolveMethod::Policy,
                    MethodArg::Picard => SolveMethod::Picard,
                },
                damping: a.damping,
                max_iters: a.max_iters,
                residual_tol: a.residual_tol,
                max_cond: a.max_cond,
                allow_3d: a.allow_3d,
                ..Default::default()
            };
            opts.quad.n_angular = a.directions;
            opts.quad.seed = seed;
            opts.inf.n_starts = a.n_starts;
            opts.inf.seed = seed;
            let shape = GridShape {
                n: a.n,
                m: a.m,
                radius: a.radius,
            };
            let res = solve_global(&phi, a.k, a.s, shape, &opts)?;
            fs::create_dir_all(&cli.out)?;
            let files = res.write(&cli.out.join(&a.stem), a.s, a.k)?;
            let modulus = modulus_report(&res.u);
            let result = json!({
                "converged": res.converged,
                "residual_history": res.residual_history,
                "linear_iterations": res.linear_iterations,
                "max_cond_used": res.max_cond_used,
                "modulus": modulus,
                "phi_lipschitz": phi.lipschitz(),
                "phi_semiconcavity": phi.semiconcavity(),
                "files": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
            });
            out.write("solve", a, result)?;
            println!("residual = {:e} after {} iterations", res.final_residual(), res.residual_history.len() - 1);
            Ok(res.converged)
        }
    }
}

fn configure_threads(cli: &Cli) -> std::result::Result<(), String> {
    let from_env = std::env::var(THREADS_ENV).ok();
    let threads = match (cli.threads, from_env) {
        (Some(t), _) => Some(t),
        (None, Some(v)) => Some(v.parse::<usize>().map_err(|_| format!("{THREADS_ENV} must be an integer"))?),
        _ => None,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err("thread count must be positive".into());
        }
        // A pool configured earlier in the same process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                0
            } else {
                2
            };
        }
    };
    if let Err(e) = configure_threads(&cli) {
        eprintln!("error: {e}");
        return 2;
    }
    match dispatch(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage_error(&e) {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_entries_precede_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "# comment\nn = 4\ns=0.6\nL = 2\n").unwrap();
        let args: Vec<OsString> = ["frac-hessian", "constants", "--config", cfg.to_str().unwrap(), "--n", "2"]
            .iter()
            .map(OsString::from)
            .collect();
        let expanded = expand_config(args).unwrap();
        let cli = Cli::try_parse_from(expanded).unwrap();
        let Command::Constants(a) = cli.command else { panic!() };
        assert_eq!(a.n, 2);
        assert_eq!(a.s, 0.6);
        assert_eq!(a.l, 2.0);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        fs::write(&cfg, "bogus = 1\n").unwrap();
        let code = run(["frac-hessian", "constants", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, 2);
        fs::write(&cfg, "no separator\n").unwrap();
        assert_eq!(run(["frac-hessian", "constants", "--config", cfg.to_str().unwrap()]), 2);
    }

    #[test]
    fn error_classes() {
        assert!(is_usage_error(&Error::InvalidInput(String::new())));
        assert!(!is_usage_error(&Error::Diverged {
            iter: 1,
            residual: 1.0,
            min: 0.1
        }));
    }
}
