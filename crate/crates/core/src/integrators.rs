//! One-step implicit integrators for semi-explicit DAEs.
//!
//! Both schemes solve the differential update and the constraints as one
//! Newton system over the non-frozen unknowns. Frozen differential blocks are
//! copied through unchanged.

use std::str::FromStr;

use crate::dae::{CoupledDae, State, Trajectory};
use crate::error::{Error, Result};
use crate::newton::NewtonConfig;
pub use crate::newton::{newton_solve, NewtonSolution};
use crate::scalar::Scalar;

/// Implicit one-step method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IntegratorKind {
    /// Backward Euler, order 1. Right-hand sides are evaluated at `t + h`.
    ImplicitEuler,
    /// Implicit midpoint rule, order 2. Right-hand sides are evaluated at
    /// `t + h/2`; algebraic variables are re-projected onto the constraint
    /// at `t + h`.
    ImplicitMidpoint,
}

impl IntegratorKind {
    pub fn order(self) -> u32 {
        match self {
            IntegratorKind::ImplicitEuler => 1,
            IntegratorKind::ImplicitMidpoint => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IntegratorKind::ImplicitEuler => "euler",
            IntegratorKind::ImplicitMidpoint => "midpoint",
        }
    }
}

impl FromStr for IntegratorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" | "implicit_euler" | "implicit-euler" => Ok(IntegratorKind::ImplicitEuler),
            "midpoint" | "implicit_midpoint" | "implicit-midpoint" => Ok(IntegratorKind::ImplicitMidpoint),
            other => Err(Error::InvalidArgument(format!("unknown integrator '{other}'"))),
        }
    }
}

/// Step size and nonlinear-solver settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig<T> {
    pub h: T,
    pub newton_tol: T,
    pub newton_max_iter: usize,
    /// Inner steps taken per call to [`dae_step`]; 1 means one implicit step
    /// of size `h`.
    pub substeps: usize,
}

impl<T: Scalar> StepConfig<T> {
    pub fn new(h: T) -> Self {
        StepConfig {
            h,
            newton_tol: T::default_tolerance(),
            newton_max_iter: 50,
            substeps: 1,
        }
    }

    pub fn with_h(self, h: T) -> Self {
        StepConfig { h, ..self }
    }

    pub fn with_substeps(self, substeps: usize) -> Self {
        StepConfig { substeps, ..self }
    }

    pub fn with_newton_tol(self, newton_tol: T) -> Self {
        StepConfig { newton_tol, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > T::zero()) || !self.h.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.h
            )));
        }
        if !(self.newton_tol > T::zero()) {
            return Err(Error::InvalidArgument("newton_tol must be positive".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn newton(&self) -> NewtonConfig<T> {
        NewtonConfig {
            tol: self.newton_tol,
            max_iter: self.newton_max_iter,
            ..NewtonConfig::default()
        }
    }
}

/// Advances `s` by `cfg.h`.
pub fn dae_step<T: Scalar>(
    dae: &CoupledDae<T>,
    s: &State<T>,
    kind: IntegratorKind,
    cfg: &StepConfig<T>,
) -> Result<State<T>> {
    dae_step_counted(dae, s, kind, cfg).map(|(s, _)| s)
}

/// [`dae_step`] that also reports the Newton iterations spent.
pub fn dae_step_counted<T: Scalar>(
    dae: &CoupledDae<T>,
    s: &State<T>,
    kind: IntegratorKind,
    cfg: &StepConfig<T>,
) -> Result<(State<T>, usize)> {
    cfg.validate()?;
    dae.check_state(s)?;
    let newton = cfg.newton();
    let sub_h = cfg.h / T::from_usize_lossy(cfg.substeps);
    let mut cur = s.clone();
    let mut iterations = 0;
    for _ in 0..cfg.substeps {
        let (next, it) = single_step(dae, &cur, kind, sub_h, &newton)?;
        cur = next;
        iterations += it;
    }
    cur.t = s.t + cfg.h;
    Ok((cur, iterations))
}

fn single_step<T: Scalar>(
    dae: &CoupledDae<T>,
    s: &State<T>,
    kind: IntegratorKind,
    h: T,
    newton: &NewtonConfig<T>,
) -> Result<(State<T>, usize)> {
    let ny = dae.active_y_len();
    let y0 = dae.gather_active_y(s);
    let mut x0 = y0.clone();
    x0.extend(dae.gather_active_z(s));
    let half = T::lit(0.5);

    // Builds the evaluation state (end point or midpoint) from unknowns.
    let eval_state = |x: &[T]| -> State<T> {
        let mut e = s.clone();
        match kind {
            IntegratorKind::ImplicitEuler => {
                e.t = s.t + h;
                dae.scatter_active_y(&mut e, &x[..ny]);
            }
            IntegratorKind::ImplicitMidpoint => {
                e.t = s.t + half * h;
                let ym: Vec<T> = y0.iter().zip(&x[..ny]).map(|(&a, &b)| half * (a + b)).collect();
                dae.scatter_active_y(&mut e, &ym);
            }
        }
        dae.scatter_active_z(&mut e, &x[ny..]);
        e
    };
    let residual = |x: &[T]| -> Result<crate::linalg::Vector<T>> {
        let e = eval_state(x);
        let f = dae.active_f(&e)?;
        let mut r = Vec::with_capacity(x.len());
        r.extend((0..ny).map(|i| x[i] - y0[i] - h * f[i]));
        r.extend_from_slice(&dae.active_constraints(&e)?);
        Ok(r.into())
    };
    let sol = newton_solve(residual, &x0, newton)?;
    let mut next = s.clone();
    next.t = s.t + h;
    dae.scatter_active_y(&mut next, &sol.x[..ny]);
    dae.scatter_active_z(&mut next, &sol.x[ny..]);
    match kind {
        IntegratorKind::ImplicitEuler => Ok((next, sol.iterations)),
        IntegratorKind::ImplicitMidpoint => {
            let (projected, it) = dae.project(&next, newton)?;
            Ok((projected, sol.iterations + it))
        }
    }
}

/// Number of uniform steps of size `h` covering `span`; errors when `span / h`
/// is not within `1e-9` of an integer.
pub fn uniform_steps<T: Scalar>(span: T, h: T) -> Result<usize> {
    if span < T::zero() {
        return Err(Error::InvalidArgument(format!(
            "end time precedes start time by {}",
            -span
        )));
    }
    let ratio = span / h;
    let n = ratio.round();
    if (ratio - n).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(16.0) * n) {
        return Err(Error::InvalidArgument(format!(
            "interval {span} is not a whole number of steps of size {h}"
        )));
    }
    n.to_usize()
        .ok_or_else(|| Error::InvalidArgument("step count overflow".into()))
}

/// Time of grid point `k` out of `n` on `[t0, t_end]`. The last point is
/// exactly `t_end`.
pub(crate) fn grid_time<T: Scalar>(t0: T, t_end: T, h: T, k: usize, n: usize) -> T {
    if k == n {
        t_end
    } else {
        t0 + T::from_usize_lossy(k) * h
    }
}

/// Repeated [`dae_step`] on a uniform grid from `s0.t` to `t_end`.
pub fn integrate<T: Scalar>(
    dae: &CoupledDae<T>,
    s0: &State<T>,
    t_end: T,
    kind: IntegratorKind,
    cfg: &StepConfig<T>,
) -> Result<Trajectory<T>> {
    let mut traj = Trajectory::single(s0.clone());
    let iterations = drive(
        s0,
        t_end,
        cfg,
        |s, c| dae_step_counted(dae, s, kind, c),
        |s| traj.push(s),
    )?;
    traj.newton_iterations = iterations;
    Ok(traj)
}

/// Like [`integrate`] but keeps only the final state.
pub fn integrate_final<T: Scalar>(
    dae: &CoupledDae<T>,
    s0: &State<T>,
    t_end: T,
    kind: IntegratorKind,
    cfg: &StepConfig<T>,
) -> Result<State<T>> {
    let mut last = s0.clone();
    drive(
        s0,
        t_end,
        cfg,
        |s, c| dae_step_counted(dae, s, kind, c),
        |s| {
            last = s;
            Ok(())
        },
    )?;
    Ok(last)
}

/// Uniform-grid stepping loop shared by the monolithic and split drivers.
/// Returns the total Newton iterations.
pub(crate) fn drive<T: Scalar>(
    s0: &State<T>,
    t_end: T,
    cfg: &StepConfig<T>,
    mut step: impl FnMut(&State<T>, &StepConfig<T>) -> Result<(State<T>, usize)>,
    mut sink: impl FnMut(State<T>) -> Result<()>,
) -> Result<usize> {
    cfg.validate()?;
    let n = uniform_steps(t_end - s0.t, cfg.h)?;
    let mut cur = s0.clone();
    let mut iterations = 0;
    for k in 1..=n {
        let (mut next, it) = step(&cur, cfg)?;
        next.t = grid_time(s0.t, t_end, cfg.h, k, n);
        iterations += it;
        sink(next.clone())?;
        cur = next;
    }
    Ok(iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae::{BlockFn, Partition};
    use crate::linalg::{expm, Matrix, Vector};
    use std::sync::Arc;

    fn decay() -> CoupledDae<f64> {
        let f: BlockFn<f64> = Arc::new(|s| Vector::from_vec(vec![-s.y1[0]]));
        CoupledDae::ode(1, 0, f, Arc::new(|_| Vector::zeros(0))).unwrap()
    }

    fn start(dae: &CoupledDae<f64>, y: &[f64]) -> State<f64> {
        State::from_stacked(&dae.partition(), 0.0, y, &vec![0.0; dae.partition().nz()]).unwrap()
    }

    #[test]
    fn euler_and_midpoint_on_decay() {
        let dae = decay();
        let cfg = StepConfig::new(0.1);
        let e = dae_step(&dae, &start(&dae, &[1.0]), IntegratorKind::ImplicitEuler, &cfg).unwrap();
        assert!((e.y1[0] - 1.0 / 1.1).abs() < 1e-13);
        assert!((e.t - 0.1).abs() < 1e-16);
        let m = dae_step(&dae, &start(&dae, &[1.0]), IntegratorKind::ImplicitMidpoint, &cfg).unwrap();
        assert!((m.y1[0] - 0.95 / 1.05).abs() < 1e-13);
    }

    #[test]
    fn semi_explicit_euler() {
        let p = Partition::new(1, 0, 1, 0).unwrap();
        let dae: CoupledDae<f64> = CoupledDae::new(
            p,
            Arc::new(|s| Vector::from_vec(vec![s.z1[0]])),
            Arc::new(|s| Vector::from_vec(vec![s.z1[0] - s.y1[0]])),
            Arc::new(|_| Vector::zeros(0)),
            Arc::new(|_| Vector::zeros(0)),
        );
        let s0 = State::from_stacked(&p, 0.0, &[1.0], &[1.0]).unwrap();
        let s1 = dae_step(&dae, &s0, IntegratorKind::ImplicitEuler, &StepConfig::new(0.1)).unwrap();
        assert!((s1.y1[0] - 1.0 / 0.9).abs() < 1e-12);
        assert!((s1.z1[0] - s1.y1[0]).abs() < 1e-12);
    }

    #[test]
    fn integrate_midpoint_power() {
        let dae = decay();
        let traj = integrate(
            &dae,
            &start(&dae, &[1.0]),
            1.0,
            IntegratorKind::ImplicitMidpoint,
            &StepConfig::new(0.1),
        )
        .unwrap();
        assert_eq!(traj.len(), 11);
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        assert!((traj.last().unwrap().y1[0] - (0.95f64 / 1.05).powi(10)).abs() < 1e-12);
        assert!(traj.newton_iterations >= 10);
    }

    #[test]
    fn integrate_zero_span() {
        let dae = decay();
        let traj = integrate(
            &dae,
            &start(&dae, &[2.0]),
            0.0,
            IntegratorKind::ImplicitEuler,
            &StepConfig::new(0.1),
        )
        .unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.states[0].y1[0], 2.0);
    }

    #[test]
    fn integrate_rejects_non_uniform_grid() {
        let dae = decay();
        let err = integrate(
            &dae,
            &start(&dae, &[1.0]),
            0.25,
            IntegratorKind::ImplicitEuler,
            &StepConfig::new(0.1),
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        let err = dae_step(
            &dae,
            &start(&dae, &[1.0]),
            IntegratorKind::ImplicitEuler,
            &StepConfig::new(-0.1),
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    fn linear_ode(a: Matrix<f64>) -> CoupledDae<f64> {
        let n = a.rows();
        let f: BlockFn<f64> = Arc::new(move |s| a.matvec(&s.y1).unwrap());
        CoupledDae::ode(n, 0, f, Arc::new(|_| Vector::zeros(0))).unwrap()
    }

    #[test]
    fn midpoint_matches_expm_to_second_order() {
        let a = Matrix::from_f64_rows(&[&[-0.5, 1.0], &[-2.0, -0.1]]);
        let dae = linear_ode(a.clone());
        let x0 = [1.0, -0.5];
        let exact = expm(&a).unwrap().matvec(&x0).unwrap();
        let err = |h: f64| {
            let s = integrate_final(
                &dae,
                &start(&dae, &x0),
                1.0,
                IntegratorKind::ImplicitMidpoint,
                &StepConfig::new(h),
            )
            .unwrap();
            s.y1.sub(&exact).norm_inf()
        };
        let (e1, e2) = (err(0.05), err(0.025));
        assert!(e1 < 0.05 * 0.05, "error {e1} exceeds C h^2");
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn observed_orders_on_decay() {
        let dae = decay();
        let exact = (-1.0f64).exp();
        for (kind, expected) in [
            (IntegratorKind::ImplicitEuler, 2.0),
            (IntegratorKind::ImplicitMidpoint, 4.0),
        ] {
            let errs: Vec<f64> = [0.02, 0.01, 0.005]
                .iter()
                .map(|&h| {
                    let s = integrate_final(&dae, &start(&dae, &[1.0]), 1.0, kind, &StepConfig::new(h)).unwrap();
                    (s.y1[0] - exact).abs()
                })
                .collect();
            for w in errs.windows(2) {
                let ratio = w[0] / w[1];
                assert!((ratio / expected - 1.0).abs() < 0.1, "{kind:?}: ratio {ratio}");
            }
        }
    }

    #[test]
    fn midpoint_conserves_norm_of_skew_flow() {
        let j = Matrix::from_f64_rows(&[&[0.0, 1.0, -0.3], &[-1.0, 0.0, 0.7], &[0.3, -0.7, 0.0]]);
        let dae = linear_ode(j);
        let x0 = [1.0, 0.5, -0.25];
        let n0 = Vector::from_vec(x0.to_vec()).norm2();
        let cfg = StepConfig::new(0.01);
        let traj = integrate(&dae, &start(&dae, &x0), 100.0, IntegratorKind::ImplicitMidpoint, &cfg).unwrap();
        assert_eq!(traj.len(), 10_001);
        let drift = traj
            .states
            .iter()
            .map(|s| (s.y1.norm2() - n0).abs())
            .fold(0.0, f64::max);
        assert!(drift <= cfg.newton_tol * 1e4, "drift {drift}");
    }

    #[test]
    fn constraints_hold_after_every_step() {
        let p = Partition::new(1, 1, 1, 1).unwrap();
        let dae: CoupledDae<f64> = CoupledDae::new(
            p,
            Arc::new(|s| Vector::from_vec(vec![s.z1[0] - s.y2[0]])),
            Arc::new(|s| Vector::from_vec(vec![s.z1[0] + 0.2 * s.z1[0].powi(3) - s.y1[0] + s.z2[0]])),
            Arc::new(|s| Vector::from_vec(vec![s.y1[0] - 0.5 * s.z2[0]])),
            Arc::new(|s| Vector::from_vec(vec![2.0 * s.z2[0] - s.y2[0].sin()])),
        );
        let s0 = crate::dae::consistent_init(
            &dae,
            &State::from_stacked(&p, 0.0, &[0.5, 0.2], &[0.0, 0.0]).unwrap(),
            1e-12,
        )
        .unwrap();
        for kind in [IntegratorKind::ImplicitEuler, IntegratorKind::ImplicitMidpoint] {
            let cfg = StepConfig::new(0.05);
            let traj = integrate(&dae, &s0, 2.0, kind, &cfg).unwrap();
            for s in &traj.states {
                assert!(dae.algebraic_residual(s).unwrap().norm_inf() <= cfg.newton_tol);
            }
        }
    }

    #[test]
    fn frozen_model_returns_y_bitwise() {
        let p = Partition::new(2, 1, 1, 0).unwrap();
        let full: CoupledDae<f64> = CoupledDae::new(
            p,
            Arc::new(|s| s.y1.scaled(2.0)),
            Arc::new(|s| Vector::from_vec(vec![s.z1[0] - s.y1[0] * s.y2[0]])),
            Arc::new(|s| s.y2.scaled(-1.0)),
            Arc::new(|_| Vector::zeros(0)),
        );
        let (_, g1, _, g2) = full.blocks();
        let frozen = CoupledDae::from_blocks(p, None, g1.clone(), None, g2.clone(), &full);
        let s0 = State::from_stacked(&p, 0.0, &[0.1 + 0.2, 1.0 / 3.0, 7.0], &[0.0]).unwrap();
        for kind in [IntegratorKind::ImplicitEuler, IntegratorKind::ImplicitMidpoint] {
            let s1 = dae_step(&frozen, &s0, kind, &StepConfig::new(0.1)).unwrap();
            assert_eq!(s1.y1, s0.y1);
            assert_eq!(s1.y2, s0.y2);
            assert!((s1.z1[0] - s0.y1[0] * s0.y2[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn substeps_split_the_step() {
        let dae = decay();
        let cfg = StepConfig::new(0.1).with_substeps(4);
        let s = dae_step(&dae, &start(&dae, &[1.0]), IntegratorKind::ImplicitEuler, &cfg).unwrap();
        assert!((s.y1[0] - 1.025f64.powi(-4)).abs() < 1e-13);
        assert_eq!(s.t, 0.1);
    }

    #[test]
    fn single_precision_decay() {
        let f: BlockFn<f32> = Arc::new(|s| Vector::from_vec(vec![-s.y1[0]]));
        let dae = CoupledDae::ode(1, 0, f, Arc::new(|_| Vector::zeros(0))).unwrap();
        let s0 = State::from_stacked(&dae.partition(), 0.0f32, &[1.0], &[]).unwrap();
        let s = integrate_final(&dae, &s0, 1.0, IntegratorKind::ImplicitMidpoint, &StepConfig::new(0.1)).unwrap();
        assert!((s.y1[0] - 0.367_572_5).abs() < 1e-5, "{}", s.y1[0]);
    }

    #[test]
    fn parses_kind_names() {
        assert_eq!(
            "Midpoint".parse::<IntegratorKind>().unwrap(),
            IntegratorKind::ImplicitMidpoint
        );
        assert_eq!(
            "euler".parse::<IntegratorKind>().unwrap(),
            IntegratorKind::ImplicitEuler
        );
        assert!("rk4".parse::<IntegratorKind>().is_err());
    }
}
