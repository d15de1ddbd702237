//! Convergence studies, ε-studies and their CSV files.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dae::{CoupledDae, State, Trajectory};
use crate::error::{Error, Result};
use crate::integrators::{integrate, uniform_steps, IntegratorKind, StepConfig};
use crate::phs::{
    direct_implicit_euler, phs_integrate, regularize, DissipativityReport, EnergyAudit, PhsDae, PhsScheme,
    PhsTrajectory, RegularizedPhs,
};
use crate::scalar::Scalar;
use crate::splitting::{splitting_integrate, SchemeKind, SplitPair};

/// How the convergence runs advance the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Monolithic,
    Split(SchemeKind),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Monolithic => "monolithic",
            Method::Split(s) => s.name(),
        }
    }
}

/// A coupled model with its split and initial state.
#[derive(Clone, Debug)]
pub struct ConvergenceProblem<T: Scalar> {
    pub name: String,
    pub model: CoupledDae<T>,
    pub split: SplitPair<T>,
    pub s0: State<T>,
}

/// Monolithic integration with step `h_ref`.
pub fn reference_solution<T: Scalar>(
    model: &CoupledDae<T>,
    s0: &State<T>,
    t_end: T,
    h_ref: T,
    kind: IntegratorKind,
) -> Result<Trajectory<T>> {
    uniform_steps(t_end - s0.t, h_ref)?;
    integrate(model, s0, t_end, kind, &StepConfig::new(h_ref))
}

/// Absolute per-component differences at the final time.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalErrors<T> {
    pub differential: Vec<T>,
    pub algebraic: Vec<T>,
}

impl<T: Scalar> FinalErrors<T> {
    /// Maximum over all components.
    pub fn max_norm(&self) -> T {
        self.differential
            .iter()
            .chain(&self.algebraic)
            .fold(T::zero(), |m, &v| m.max(v))
    }

    pub fn all(&self) -> Vec<T> {
        self.differential.iter().chain(&self.algebraic).copied().collect()
    }
}

pub fn error_at_final<T: Scalar>(traj: &Trajectory<T>, reference: &State<T>) -> Result<FinalErrors<T>> {
    let last = traj
        .last()
        .ok_or_else(|| Error::GridMismatch("empty trajectory".into()))?;
    let tol = T::lit(1e-12) * T::one().max(reference.t.abs());
    if (last.t - reference.t).abs() > tol {
        return Err(Error::GridMismatch(format!(
            "trajectory ends at {} but the reference at {}",
            last.t, reference.t
        )));
    }
    if last.partition() != reference.partition() {
        return Err(Error::GridMismatch(
            "trajectory and reference have different partitions".into(),
        ));
    }
    let diff = |a: crate::linalg::Vector<T>, b: crate::linalg::Vector<T>| -> Vec<T> {
        a.iter().zip(b.iter()).map(|(x, y)| (*x - *y).abs()).collect()
    };
    Ok(FinalErrors {
        differential: diff(last.y(), reference.y()),
        algebraic: diff(last.z(), reference.z()),
    })
}

/// Least-squares slope of `ln e` against `ln h`.
pub fn observed_order<T: Scalar>(errors: &[T], hs: &[T]) -> Result<T> {
    if errors.len() != hs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} errors for {} step sizes",
            errors.len(),
            hs.len()
        )));
    }
    if hs.len() < 2 {
        return Err(Error::DegenerateData("at least two step sizes are needed".into()));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > T::zero()) || !e.is_finite()) {
        return Err(Error::DegenerateData(format!(
            "error value {e} is not positive and finite"
        )));
    }
    if hs.iter().any(|h| !(*h > T::zero())) {
        return Err(Error::DegenerateData("step sizes must be positive".into()));
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.as_f64().ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.as_f64().ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateData("all step sizes are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(T::lit(sxy / sxx))
}

/// Outcome of a step-size sweep.
#[derive(Clone, Debug)]
pub struct ConvergenceReport<T> {
    pub model: String,
    pub scheme: String,
    pub integrator: String,
    pub step_sizes: Vec<T>,
    /// `errors[i][v]`: error of variable `v` (differential first) at `step_sizes[i]`;
    /// NaN where the run failed.
    pub errors: Vec<Vec<T>>,
    pub variable_names: Vec<String>,
    /// Number of leading differential variables in each error row.
    pub differential_count: usize,
    /// Per-variable fitted orders; `None` with fewer than two step sizes.
    pub observed_orders: Option<Vec<T>>,
    /// Largest algebraic residual over every stored state, per step size.
    pub max_constraint_residual: Vec<T>,
    /// Failure diagnostics per step size.
    pub failures: Vec<Option<String>>,
    /// `‖ref(h_ref) − ref(h_ref/2)‖_∞` at the final time, when checked.
    pub reference_drift: Option<T>,
}

impl<T: Scalar> ConvergenceReport<T> {
    pub fn differential_orders(&self) -> Option<&[T]> {
        self.observed_orders.as_deref().map(|o| &o[..self.differential_count])
    }

    /// Passes when the reference changed by less than 1% of the coarsest
    /// differential error under `h_ref` halving; `None` when unchecked.
    pub fn reference_guard(&self) -> Option<bool> {
        let drift = self.reference_drift?;
        let coarsest = self.errors.first()?[..self.differential_count]
            .iter()
            .fold(T::zero(), |m, &v| m.max(v));
        Some(drift < T::lit(0.01) * coarsest)
    }
}

/// Options for [`run_convergence`].
#[derive(Clone, Copy, Debug)]
pub struct ConvergenceOptions<T> {
    pub newton_tol: T,
    /// Also computes the reference with `h_ref/2` to measure its drift.
    pub check_reference: bool,
}

impl<T: Scalar> Default for ConvergenceOptions<T> {
    fn default() -> Self {
        ConvergenceOptions {
            newton_tol: T::default_tolerance(),
            check_reference: false,
        }
    }
}

fn check_step_sizes<T: Scalar>(hs: &[T]) -> Result<()> {
    if hs.is_empty() {
        return Err(Error::InvalidArgument("no step sizes given".into()));
    }
    if hs.iter().any(|h| !(*h > T::zero()) || !h.is_finite()) {
        return Err(Error::InvalidArgument("step sizes must be positive".into()));
    }
    if hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("step sizes must be strictly decreasing".into()));
    }
    Ok(())
}

/// Computes the reference once, sweeps `hs` in parallel and fits orders.
pub fn run_convergence<T: Scalar>(
    problem: &ConvergenceProblem<T>,
    method: Method,
    kind: IntegratorKind,
    hs: &[T],
    h_ref: T,
    t_end: T,
    opts: &ConvergenceOptions<T>,
) -> Result<ConvergenceReport<T>> {
    check_step_sizes(hs)?;
    let reference = reference_solution(&problem.model, &problem.s0, t_end, h_ref, kind)?;
    let ref_final = reference.last().expect("reference has a start state").clone();
    let drift = if opts.check_reference {
        let finer = reference_solution(&problem.model, &problem.s0, t_end, h_ref * T::lit(0.5), kind)?;
        Some(finer.last().expect("start state").y().sub(&ref_final.y()).norm_inf())
    } else {
        None
    };
    let mut report = run_convergence_against(problem, method, kind, hs, &ref_final, t_end, opts)?;
    report.reference_drift = drift;
    Ok(report)
}

/// [`run_convergence`] against a precomputed reference final state.
pub fn run_convergence_against<T: Scalar>(
    problem: &ConvergenceProblem<T>,
    method: Method,
    kind: IntegratorKind,
    hs: &[T],
    reference: &State<T>,
    t_end: T,
    opts: &ConvergenceOptions<T>,
) -> Result<ConvergenceReport<T>> {
    check_step_sizes(hs)?;
    let p = problem.model.partition();
    let width = p.ny() + p.nz();
    let runs: Vec<std::result::Result<(Vec<T>, T), String>> = hs
        .par_iter()
        .map(|&h| {
            let cfg = StepConfig::new(h).with_newton_tol(opts.newton_tol);
            let traj = match method {
                Method::Monolithic => integrate(&problem.model, &problem.s0, t_end, kind, &cfg),
                Method::Split(scheme) => splitting_integrate(&problem.split, &problem.s0, t_end, scheme, kind, &cfg),
            }
            .map_err(|e| e.to_string())?;
            let errors = error_at_final(&traj, reference).map_err(|e| e.to_string())?;
            let mut worst = T::zero();
            for s in &traj.states {
                let r = problem.model.algebraic_residual(s).map_err(|e| e.to_string())?;
                worst = worst.max(r.norm_inf());
            }
            Ok((errors.all(), worst))
        })
        .collect();

    let mut errors = Vec::with_capacity(hs.len());
    let mut residuals = Vec::with_capacity(hs.len());
    let mut failures = Vec::with_capacity(hs.len());
    for run in runs {
        match run {
            Ok((e, r)) => {
                errors.push(e);
                residuals.push(r);
                failures.push(None);
            }
            Err(msg) => {
                errors.push(vec![T::nan(); width]);
                residuals.push(T::nan());
                failures.push(Some(msg));
            }
        }
    }
    let observed_orders = (hs.len() >= 2).then(|| {
        (0..width)
            .map(|v| {
                let col: Vec<T> = errors.iter().map(|row| row[v]).collect();
                observed_order(&col, hs).unwrap_or_else(|_| T::nan())
            })
            .collect()
    });
    let mut variable_names = problem.model.names().to_vec();
    if variable_names.len() != width {
        variable_names = (0..width).map(|i| format!("var_{i}")).collect();
    }
    Ok(ConvergenceReport {
        model: problem.name.clone(),
        scheme: method.name().into(),
        integrator: kind.name().into(),
        step_sizes: hs.to_vec(),
        errors,
        variable_names,
        differential_count: p.ny(),
        observed_orders,
        max_constraint_residual: residuals,
        failures,
        reference_drift: None,
    })
}

/// Step-size sweep of a split PHS integration against a monolithic
/// midpoint reference on the same (possibly regularized) model.
pub fn run_phs_convergence<T: Scalar>(
    name: &str,
    model: &RegularizedPhs<T>,
    x0: &[T],
    scheme: PhsScheme,
    kind: IntegratorKind,
    hs: &[T],
    h_ref: T,
    t_end: T,
) -> Result<ConvergenceReport<T>> {
    check_step_sizes(hs)?;
    let reference = phs_integrate(
        model,
        x0,
        T::zero(),
        t_end,
        PhsScheme::Monolithic,
        IntegratorKind::ImplicitMidpoint,
        &StepConfig::new(h_ref),
    )?;
    let target = reference.last().expect("start state").clone();
    let n = model.n();
    let runs: Vec<std::result::Result<Vec<T>, String>> = hs
        .par_iter()
        .map(|&h| {
            let traj = phs_integrate(model, x0, T::zero(), t_end, scheme, kind, &StepConfig::new(h))
                .map_err(|e| e.to_string())?;
            let last = traj.last().expect("start state");
            Ok(last.iter().zip(target.iter()).map(|(a, b)| (*a - *b).abs()).collect())
        })
        .collect();
    let mut errors = Vec::with_capacity(hs.len());
    let mut failures = Vec::with_capacity(hs.len());
    for run in runs {
        match run {
            Ok(e) => {
                errors.push(e);
                failures.push(None);
            }
            Err(msg) => {
                errors.push(vec![T::nan(); n]);
                failures.push(Some(msg));
            }
        }
    }
    let observed_orders = (hs.len() >= 2).then(|| {
        (0..n)
            .map(|v| {
                let col: Vec<T> = errors.iter().map(|row| row[v]).collect();
                observed_order(&col, hs).unwrap_or_else(|_| T::nan())
            })
            .collect()
    });
    Ok(ConvergenceReport {
        model: name.into(),
        scheme: scheme.name().into(),
        integrator: kind.name().into(),
        step_sizes: hs.to_vec(),
        errors,
        variable_names: (0..n).map(|i| format!("x{i}")).collect(),
        differential_count: n,
        observed_orders,
        max_constraint_residual: vec![T::zero(); hs.len()],
        failures,
        reference_drift: None,
    })
}

fn fmt_float<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

/// `h,var_0,…` rows followed by `order,…`.
pub fn convergence_csv<T: Scalar>(report: &ConvergenceReport<T>) -> String {
    let width = report.errors.first().map_or(0, Vec::len);
    let mut out = String::from("h");
    for v in 0..width {
        let _ = write!(out, ",var_{v}");
    }
    out.push('\n');
    for (h, row) in report.step_sizes.iter().zip(&report.errors) {
        out.push_str(&fmt_float(*h));
        for e in row {
            out.push(',');
            out.push_str(&fmt_float(*e));
        }
        out.push('\n');
    }
    out.push_str("order");
    for v in 0..width {
        let o = report.observed_orders.as_ref().map_or(T::nan(), |o| o[v]);
        out.push(',');
        out.push_str(&fmt_float(o));
    }
    out.push('\n');
    out
}

pub fn write_convergence_csv<T: Scalar>(report: &ConvergenceReport<T>, path: &Path) -> Result<()> {
    std::fs::write(path, convergence_csv(report))?;
    Ok(())
}

/// Deviation of the regularized solution from the direct DAE solution.
#[derive(Clone, Debug)]
pub struct EpsStudyReport<T> {
    pub epsilons: Vec<T>,
    /// `‖x_ε(T) − x_direct(T)‖_∞` per ε.
    pub deviations: Vec<T>,
    /// Largest `(ε/2)|Δ xᵀQx|` over the steps of each regularized run.
    pub max_eps_terms: Vec<T>,
    /// Deviations strictly decrease with ε.
    pub monotone: bool,
}

impl<T: Scalar> EpsStudyReport<T> {
    /// Log-log slope of the ε-term against ε.
    pub fn eps_term_slope(&self) -> Result<T> {
        observed_order(&self.max_eps_terms, &self.epsilons)
    }
}

/// Compares implicit Euler on `E_ε` with implicit Euler on `E` itself, both
/// with step `h` from the same consistent `x0`.
pub fn run_eps_study<T: Scalar>(p: &PhsDae<T>, x0: &[T], epsilons: &[T], h: T, t_end: T) -> Result<EpsStudyReport<T>> {
    if epsilons.is_empty() {
        return Err(Error::InvalidArgument("no epsilon values given".into()));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "epsilon values must be strictly decreasing".into(),
        ));
    }
    let direct = direct_implicit_euler(p, x0, T::zero(), t_end, h)?;
    let target = direct.last().expect("start state").clone();
    let cfg = StepConfig::new(h);
    let runs: Vec<Result<(T, T)>> = epsilons
        .par_iter()
        .map(|&eps| {
            let reg = regularize(p, eps)?;
            let traj = phs_integrate(
                &reg,
                x0,
                T::zero(),
                t_end,
                PhsScheme::Monolithic,
                IntegratorKind::ImplicitEuler,
                &cfg,
            )?;
            let dev = traj.last().expect("start state").sub(&target).norm_inf();
            let half = T::lit(0.5) * eps;
            let eps_term = traj
                .quad_forms
                .windows(2)
                .map(|w| half * (w[1] - w[0]).abs())
                .fold(T::zero(), T::max);
            Ok((dev, eps_term))
        })
        .collect();
    let mut deviations = Vec::with_capacity(epsilons.len());
    let mut max_eps_terms = Vec::with_capacity(epsilons.len());
    for r in runs {
        let (d, e) = r?;
        deviations.push(d);
        max_eps_terms.push(e);
    }
    let monotone = deviations.windows(2).all(|w| w[1] < w[0]);
    Ok(EpsStudyReport {
        epsilons: epsilons.to_vec(),
        deviations,
        max_eps_terms,
        monotone,
    })
}

/// `epsilon,deviation`
pub fn eps_csv<T: Scalar>(report: &EpsStudyReport<T>) -> String {
    let mut out = String::from("epsilon,deviation\n");
    for (e, d) in report.epsilons.iter().zip(&report.deviations) {
        let _ = writeln!(out, "{},{}", fmt_float(*e), fmt_float(*d));
    }
    out
}

pub fn write_eps_csv<T: Scalar>(report: &EpsStudyReport<T>, path: &Path) -> Result<()> {
    std::fs::write(path, eps_csv(report))?;
    Ok(())
}

/// `t,H,supplied,slack,eps_term`: the initial energy, then one row per step.
pub fn energy_csv<T: Scalar>(traj: &PhsTrajectory<T>, report: &DissipativityReport<T>) -> String {
    let mut out = String::from("t,H,supplied,slack,eps_term\n");
    if let (Some(t0), Some(h0)) = (traj.times.first(), traj.energies.first()) {
        let zero = fmt_float(T::zero());
        let _ = writeln!(out, "{},{},{zero},{zero},{zero}", fmt_float(*t0), fmt_float(*h0));
    }
    for a in &report.audits {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_float(a.t_end),
            fmt_float(a.h_end),
            fmt_float(a.supplied),
            fmt_float(a.slack),
            fmt_float(a.eps_term)
        );
    }
    out
}

/// Re-audits an energy CSV: slack is recomputed from `H` and `supplied`,
/// and a step fails when either the recomputed or the recorded slack is
/// below `-tolerance`.
pub fn replay_energy_csv<T: Scalar>(text: &str, tolerance: T) -> Result<DissipativityReport<T>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::FileFormat("empty energy file".into()))?;
    if header.trim() != "t,H,supplied,slack,eps_term" {
        return Err(Error::FileFormat(format!("unexpected header '{header}'")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::FileFormat(format!("line {}: {e}", i + 2)))?;
        if vals.len() != 5 {
            return Err(Error::FileFormat(format!(
                "line {}: expected 5 fields, found {}",
                i + 2,
                vals.len()
            )));
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::FileFormat("energy file has no data rows".into()));
    }
    let mut audits = Vec::with_capacity(rows.len() - 1);
    let mut passed = true;
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let supplied = T::lit(b[2]);
        let slack = supplied - (T::lit(b[1]) - T::lit(a[1]));
        passed &= slack >= -tolerance && T::lit(b[3]) >= -tolerance;
        audits.push(EnergyAudit {
            t_start: T::lit(a[0]),
            t_end: T::lit(b[0]),
            h_start: T::lit(a[1]),
            h_end: T::lit(b[1]),
            supplied,
            slack: slack.min(T::lit(b[3])),
            eps_term: T::lit(b[4]),
            eps_term_norm: T::nan(),
        });
    }
    Ok(DissipativityReport {
        audits,
        tolerance,
        allowance: T::zero(),
        passed,
    })
}
