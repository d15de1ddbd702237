//! `splitdae` command-line driver.
//!
//! Exit codes: 0 success, 1 domain failure (solver failure, structure
//! violation, failed audit), 2 usage or file-format error.

mod config;
mod model;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitdae::dae::{check_index1, State};
use splitdae::harness::{
    convergence_csv, energy_csv, eps_csv, replay_energy_csv, run_convergence, run_eps_study, run_phs_convergence,
    ConvergenceOptions, ConvergenceProblem, ConvergenceReport, Method,
};
use splitdae::integrators::{dae_step_counted, uniform_steps, IntegratorKind, StepConfig};
use splitdae::linalg::LuFactor;
use splitdae::phs::{
    direct_implicit_euler, dissipativity_check, phs_integrate, regularize, PhsDae, PhsScheme, PhsTrajectory,
    Quadrature, RegularizedPhs,
};
use splitdae::splitting::{splitting_step_counted, SchemeKind};
use splitdae::{Error, Scalar};

use config::{parse_list, RunConfig};
use model::{read_phs_unchecked, resolve, Model};

#[derive(Parser)]
#[command(
    name = "splitdae",
    version,
    about = "Operator splitting for coupled DAEs and port-Hamiltonian systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural conditions of a model.
    Validate {
        /// Model file or built-in name.
        #[arg(id = "path", value_name = "MODEL")]
        model: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Integrate a model and write the trajectory as CSV.
    Integrate(Common),
    /// Step-size sweep against a fine monolithic reference.
    Convergence(Common),
    /// Distance between regularized and direct solutions over an epsilon grid.
    EpsStudy(Common),
    /// Per-step energy audit of a port-Hamiltonian run.
    Energy {
        #[command(flatten)]
        common: Common,
        /// Re-audit an existing energy CSV instead of integrating.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// lc | decay | circuit2 | synthetic:N_DYN:N_ALG | path to a model file
    #[arg(long)]
    model: Option<String>,
    /// lie | strang | monolithic
    #[arg(long)]
    scheme: Option<String>,
    /// euler | midpoint
    #[arg(long)]
    integrator: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long = "h-ref")]
    h_ref: Option<f64>,
    /// Final time.
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Comma-separated epsilon grid for eps-study.
    #[arg(long)]
    epsilons: Option<String>,
    /// Comma-separated step sizes, largest first.
    #[arg(long)]
    hs: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let list = |flag: &str, v: &Option<String>| {
            v.as_deref()
                .map(parse_list)
                .transpose()
                .map_err(|e| Error::InvalidArgument(format!("--{flag}: {e}")))
        };
        let flags = RunConfig {
            model: self.model.clone(),
            scheme: self.scheme.clone(),
            integrator: self.integrator.clone(),
            h: self.h,
            h_ref: self.h_ref,
            t_end: self.t_end,
            epsilon: self.epsilon,
            epsilons: list("epsilons", &self.epsilons)?,
            hs: list("hs", &self.hs)?,
            out: self.out.clone(),
            seed: self.seed,
        };
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path)?.merged(flags),
            None => flags,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A failed command: exit code and message.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::FileFormat(_) | Error::InvalidArgument(_) | Error::Io(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { model, common } => cmd_validate(model, &common),
        Command::Integrate(c) => c.resolve().map_err(Failure::from).and_then(|cfg| cmd_integrate(&cfg)),
        Command::Convergence(c) => c.resolve().map_err(Failure::from).and_then(|cfg| cmd_convergence(&cfg)),
        Command::EpsStudy(c) => c.resolve().map_err(Failure::from).and_then(|cfg| cmd_eps_study(&cfg)),
        Command::Energy { common, replay } => common
            .resolve()
            .map_err(Failure::from)
            .and_then(|cfg| cmd_energy(&cfg, replay.as_deref())),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn required_model(cfg: &RunConfig) -> Result<Model, Failure> {
    let model_arg = cfg.model.as_deref().ok_or_else(|| usage("--model is required"))?;
    Ok(resolve(model_arg, cfg.seed)?)
}

fn integrator(cfg: &RunConfig, default: IntegratorKind) -> Result<IntegratorKind, Failure> {
    Ok(cfg
        .integrator
        .as_deref()
        .map(str::parse)
        .transpose()?
        .unwrap_or(default))
}

fn phs_scheme(cfg: &RunConfig, default: PhsScheme) -> Result<PhsScheme, Failure> {
    Ok(cfg.scheme.as_deref().map(str::parse).transpose()?.unwrap_or(default))
}

fn write_out(cfg: &RunConfig, default: &str, text: &str) -> Result<PathBuf, Failure> {
    let path = cfg.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::write(&path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn f(v: f64) -> String {
    format!("{v:.16e}")
}

fn cmd_validate(model: Option<String>, common: &Common) -> Outcome {
    let cfg = common.resolve()?;
    let model_arg = model
        .or(cfg.model)
        .ok_or_else(|| usage("a model file or name is required"))?;
    let path = Path::new(&model_arg);
    // Files are parsed unchecked so that every failing condition is listed.
    let loaded = if path.exists()
        && splitdae::models::model_file_kind(&std::fs::read_to_string(path).map_err(Error::from)?)? == "phs"
    {
        Model::Phs {
            name: model_arg.clone(),
            phs: read_phs_unchecked(path)?,
            x0: Vec::new(),
        }
    } else {
        resolve(&model_arg, cfg.seed)?
    };
    match loaded {
        Model::Phs { name, phs, .. } => {
            let report = phs.validate_structure();
            println!("model: {name} (n = {}, m = {})", phs.n(), phs.m());
            print!("{report}");
            let ok = report.all_passed();
            println!("{}", if ok { "PASS" } else { "FAIL" });
            Ok(if ok { 0 } else { 1 })
        }
        Model::Coupled { name, dae, s0, .. } => {
            let report = check_index1(&dae, &s0);
            let residual = dae.algebraic_residual(&s0)?.norm_inf();
            println!("model: {name}");
            println!(
                "{:<36} {} (condition estimate {:.3e})",
                "index-1 algebraic Jacobian",
                if report.regular { "PASS" } else { "FAIL" },
                report.condition_estimate
            );
            println!("{:<36} {residual:.3e}", "initial constraint residual");
            println!("{}", if report.regular { "PASS" } else { "FAIL" });
            Ok(if report.regular { 0 } else { 1 })
        }
    }
}

fn cmd_integrate(cfg: &RunConfig) -> Outcome {
    let model = required_model(cfg)?;
    let h = cfg.h.unwrap_or(1e-2);
    let t_end = cfg.t_end.unwrap_or(1.0);
    match model {
        Model::Coupled { name, dae, split, s0 } => {
            let kind = integrator(cfg, IntegratorKind::ImplicitMidpoint)?;
            let method = match cfg.scheme.as_deref().unwrap_or("strang") {
                "monolithic" => Method::Monolithic,
                other => Method::Split(other.parse::<SchemeKind>()?),
            };
            let n = uniform_steps(t_end - s0.t, h)?;
            let step_cfg = StepConfig::new(h);
            let mut csv = String::from("t");
            for v in dae.names() {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
            let row = |csv: &mut String, s: &State<f64>| {
                csv.push_str(&f(s.t));
                for v in s.flat().iter() {
                    csv.push(',');
                    csv.push_str(&f(*v));
                }
                csv.push('\n');
            };
            row(&mut csv, &s0);
            let mut cur = s0.clone();
            let mut iterations = 0;
            for k in 1..=n {
                let stepped = match method {
                    Method::Monolithic => dae_step_counted(&dae, &cur, kind, &step_cfg),
                    Method::Split(scheme) => splitting_step_counted(&split, &cur, scheme, kind, &step_cfg),
                };
                let (mut next, it) = stepped.map_err(|e| Failure {
                    code: 1,
                    message: format!("solver failed at t = {}: {e}", cur.t),
                })?;
                next.t = if k == n { t_end } else { s0.t + k as f64 * h };
                iterations += it;
                row(&mut csv, &next);
                cur = next;
            }
            let path = write_out(cfg, "trajectory.csv", &csv)?;
            println!("model: {name}, scheme: {}, integrator: {}", method.name(), kind.name());
            println!("steps: {n}");
            println!("newton iterations: {iterations}");
            println!("final state: {}", join(cur.flat().iter().copied()));
            println!("written: {}", path.display());
            Ok(0)
        }
        Model::Phs { name, phs, x0 } => {
            let scheme = phs_scheme(cfg, PhsScheme::Strang)?;
            let kind = integrator(cfg, IntegratorKind::ImplicitMidpoint)?;
            let traj = integrate_phs(&phs, &x0, cfg.epsilon, scheme, kind, h, t_end)?;
            let mut csv = String::from("t");
            for i in 0..phs.n() {
                let _ = write!(csv, ",x{i}");
            }
            csv.push_str(",H");
            for i in 0..phs.m() {
                let _ = write!(csv, ",y{i}");
            }
            csv.push('\n');
            for k in 0..traj.len() {
                csv.push_str(&f(traj.times[k]));
                for v in traj.states[k]
                    .iter()
                    .chain(std::iter::once(&traj.energies[k]))
                    .chain(traj.outputs[k].iter())
                {
                    csv.push(',');
                    csv.push_str(&f(*v));
                }
                csv.push('\n');
            }
            let path = write_out(cfg, "trajectory.csv", &csv)?;
            println!("model: {name}, scheme: {}, integrator: {}", scheme.name(), kind.name());
            if let Some(eps) = cfg.epsilon {
                println!("epsilon: {eps:e} (H column is the regularized Hamiltonian)");
            }
            println!("steps: {}", traj.len() - 1);
            println!("final H: {:.16e}", traj.energies.last().copied().unwrap_or(f64::NAN));
            println!("written: {}", path.display());
            Ok(0)
        }
    }
}

/// Regularized path when `epsilon` is set or `E` is invertible; otherwise
/// the direct implicit Euler solve, which is the only unregularized scheme.
fn integrate_phs(
    phs: &PhsDae<f64>,
    x0: &[f64],
    epsilon: Option<f64>,
    scheme: PhsScheme,
    kind: IntegratorKind,
    h: f64,
    t_end: f64,
) -> Result<PhsTrajectory<f64>, Failure> {
    let reg = match epsilon {
        Some(eps) => Some(regularize(phs, eps)?),
        None if LuFactor::new(&phs.e).is_ok() => Some(RegularizedPhs::from_regular(phs)?),
        None => None,
    };
    match reg {
        Some(reg) => Ok(phs_integrate(&reg, x0, 0.0, t_end, scheme, kind, &StepConfig::new(h))?),
        None if scheme == PhsScheme::Monolithic && kind == IntegratorKind::ImplicitEuler => {
            Ok(direct_implicit_euler(phs, x0, 0.0, t_end, h)?)
        }
        None => Err(usage(
            "E is singular: pass --epsilon, or use --scheme monolithic --integrator euler for the direct solve",
        )),
    }
}

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| format!("{v:.10e}")).collect::<Vec<_>>().join(" ")
}

fn print_orders<T: Scalar>(report: &ConvergenceReport<T>) {
    println!("{:<10} {:>14}", "variable", "order");
    for (i, name) in report.variable_names.iter().enumerate() {
        let order = report.observed_orders.as_ref().map(|o| o[i].as_f64());
        let tag = if i < report.differential_count {
            ""
        } else {
            "  (algebraic)"
        };
        match order {
            Some(o) => println!("{name:<10} {o:>14.4}{tag}"),
            None => println!("{name:<10} {:>14}{tag}", "n/a"),
        }
    }
    for (h, fail) in report.step_sizes.iter().zip(&report.failures) {
        if let Some(msg) = fail {
            println!("h = {:e}: failed ({msg})", h.as_f64());
        }
    }
}

fn cmd_convergence(cfg: &RunConfig) -> Outcome {
    let hs = cfg
        .hs
        .clone()
        .ok_or_else(|| usage("--hs is required (comma-separated step sizes)"))?;
    if hs.is_empty() {
        return Err(usage("--hs must not be empty"));
    }
    let model = required_model(cfg)?;
    let t_end = cfg.t_end.unwrap_or(1.0);
    let smallest = hs.iter().copied().fold(f64::INFINITY, f64::min);
    let h_ref = cfg.h_ref.unwrap_or(smallest / 64.0);
    let kind = integrator(cfg, IntegratorKind::ImplicitMidpoint)?;
    let report = match model {
        Model::Coupled { name, dae, split, s0 } => {
            let method = match cfg.scheme.as_deref().unwrap_or("strang") {
                "monolithic" => Method::Monolithic,
                other => Method::Split(other.parse::<SchemeKind>()?),
            };
            let problem = ConvergenceProblem {
                name,
                model: dae,
                split,
                s0,
            };
            run_convergence(
                &problem,
                method,
                kind,
                &hs,
                h_ref,
                t_end,
                &ConvergenceOptions::default(),
            )?
        }
        Model::Phs { name, phs, x0 } => {
            let reg = match cfg.epsilon {
                Some(eps) => regularize(&phs, eps)?,
                None => RegularizedPhs::from_regular(&phs)
                    .map_err(|_| usage("E is singular: a PHS convergence study needs --epsilon"))?,
            };
            let scheme = phs_scheme(cfg, PhsScheme::Strang)?;
            run_phs_convergence(&name, &reg, &x0, scheme, kind, &hs, h_ref, t_end)?
        }
    };
    let path = write_out(cfg, "convergence.csv", &convergence_csv(&report))?;
    println!(
        "model: {}, scheme: {}, integrator: {}, h_ref = {h_ref:e}, T = {t_end}",
        report.model, report.scheme, report.integrator
    );
    print_orders(&report);
    println!("written: {}", path.display());
    Ok(if report.failures.iter().any(Option::is_some) {
        1
    } else {
        0
    })
}

const DEFAULT_EPSILONS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

fn cmd_eps_study(cfg: &RunConfig) -> Outcome {
    let epsilons = cfg.epsilons.clone().unwrap_or_else(|| DEFAULT_EPSILONS.to_vec());
    if epsilons.is_empty() {
        return Err(usage("the epsilon grid is empty"));
    }
    let Model::Phs { name, phs, x0 } = required_model(cfg)? else {
        return Err(usage("epsilon study requires a PHS model"));
    };
    let h = cfg.h.unwrap_or(1e-3);
    let t_end = cfg.t_end.unwrap_or(0.5);
    let report = run_eps_study(&phs, &x0, &epsilons, h, t_end)?;
    let path = write_out(cfg, "eps_study.csv", &eps_csv(&report))?;
    println!("model: {name}, h = {h:e}, T = {t_end}");
    println!("{:>12} {:>24}", "epsilon", "deviation");
    for (e, d) in report.epsilons.iter().zip(&report.deviations) {
        println!("{e:>12.3e} {d:>24.16e}");
    }
    println!("monotone: {}", report.monotone);
    println!("written: {}", path.display());
    Ok(if report.monotone { 0 } else { 1 })
}

/// Tolerance of replayed audits: ten times the default Newton tolerance.
const REPLAY_TOLERANCE: f64 = 1e-11;

fn cmd_energy(cfg: &RunConfig, replay: Option<&Path>) -> Outcome {
    if let Some(path) = replay {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let report = replay_energy_csv(&text, REPLAY_TOLERANCE)?;
        println!("replayed: {} ({} steps)", path.display(), report.audits.len());
        if let Some(k) = report.first_failure() {
            let a = &report.audits[k];
            println!("first violation at t = {:e}: slack {:e}", a.t_end, a.slack);
        }
        println!("{}", if report.passed { "PASS" } else { "FAIL" });
        return Ok(if report.passed { 0 } else { 1 });
    }
    let Model::Phs { name, phs, x0 } = required_model(cfg)? else {
        return Err(usage("energy audit requires a PHS model"));
    };
    let scheme = phs_scheme(cfg, PhsScheme::Strang)?;
    let kind = integrator(cfg, IntegratorKind::ImplicitMidpoint)?;
    let h = cfg.h.unwrap_or(1e-2);
    let t_end = cfg.t_end.unwrap_or(1.0);
    let traj = integrate_phs(&phs, &x0, cfg.epsilon, scheme, kind, h, t_end)?;
    let report = dissipativity_check(&traj, &phs.input, Quadrature::Trapezoid, f64::default_tolerance())?;
    let path = write_out(cfg, "energy.csv", &energy_csv(&traj, &report))?;
    println!(
        "model: {name}, scheme: {}, integrator: {}, h = {h:e}, T = {t_end}",
        scheme.name(),
        kind.name()
    );
    println!("steps: {}", report.audits.len());
    println!("worst slack: {:e}", report.worst_slack().unwrap_or(0.0));
    println!("tolerance: {:e}", report.tolerance);
    println!("written: {}", path.display());
    println!("{}", if report.passed { "PASS" } else { "FAIL" });
    Ok(if report.passed { 0 } else { 1 })
}
