//! Subsystem decompositions and Lie-Trotter / Strang drivers.
//!
//! A [`SplitPair`] holds two models on the same unknowns. One splitting step
//! advances the first model, then the second starting from the first's
//! output (and, for Strang, the first again), each with one call to the
//! underlying implicit integrator.

use std::str::FromStr;
use std::sync::Arc;

use crate::dae::{lift_constraint_model, BlockFn, CoupledDae, CoupledDaeWithConstraint, State, Trajectory};
use crate::error::{Error, Result};
use crate::integrators::{dae_step_counted, drive, IntegratorKind, StepConfig};
use crate::linalg::Vector;
use crate::newton::{default_fd_step, fd_jacobian};
use crate::scalar::Scalar;

/// How a [`SplitPair`] was derived from its parent model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    /// Both subsystems keep every algebraic constraint.
    Doubled,
    /// Each subsystem keeps only its own constraint; requires that no
    /// subsystem reads the other's algebraic variables.
    DifferentialCoupling,
    /// Doubled split of a model with a dedicated coupling equation.
    Lagrangian,
    /// Two user-supplied right-hand sides acting on the same variables,
    /// `x' = f1(x) + f2(x)`.
    Additive,
}

/// Composition scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// sub1 for `h`, then sub2 for `h`.
    LieTrotter,
    /// sub1 for `h/2`, sub2 for `h`, sub1 for `h/2`.
    Strang,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::LieTrotter => "lie",
            SchemeKind::Strang => "strang",
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lie" | "lie-trotter" | "lie_trotter" | "lietrotter" => Ok(SchemeKind::LieTrotter),
            "strang" => Ok(SchemeKind::Strang),
            other => Err(Error::InvalidArgument(format!("unknown splitting scheme '{other}'"))),
        }
    }
}

/// Two subsystems derived from a parent model.
#[derive(Clone, Debug)]
pub struct SplitPair<T: Scalar> {
    pub sub1: CoupledDae<T>,
    pub sub2: CoupledDae<T>,
    pub kind: SplitKind,
    /// Model whose constraints are re-solved after every macro step; `None`
    /// for additive ODE splits.
    parent: Option<CoupledDae<T>>,
}

impl<T: Scalar> SplitPair<T> {
    pub fn parent(&self) -> Option<&CoupledDae<T>> {
        self.parent.as_ref()
    }
}

/// `sub1 = (f1, g1, 0, g2)`, `sub2 = (0, g1, f2, g2)`.
pub fn doubled_split<T: Scalar>(dae: &CoupledDae<T>) -> SplitPair<T> {
    let p = dae.partition();
    let (f1, g1, f2, g2) = dae.blocks();
    SplitPair {
        sub1: CoupledDae::from_blocks(p, f1.clone(), g1.clone(), None, g2.clone(), dae),
        sub2: CoupledDae::from_blocks(p, None, g1.clone(), f2.clone(), g2.clone(), dae),
        kind: SplitKind::Doubled,
        parent: Some(dae.clone()),
    }
}

/// Largest finite-difference sensitivity allowed for a certified-absent
/// cross dependence.
pub const COUPLING_TOLERANCE: f64 = 1e-8;

/// `sub1 = (f1, g1)` over `(y1, z1)`, `sub2 = (f2, g2)` over `(y2, z2)`;
/// constraints are not doubled.
///
/// The model's coupling flags must declare that neither side reads the other
/// side's algebraic variables, and this is re-checked by finite differences
/// at `s0`.
pub fn differential_coupling_split<T: Scalar>(dae: &CoupledDae<T>, s0: &State<T>) -> Result<SplitPair<T>> {
    let flags = dae.coupling();
    if flags.sub1_reads_z2 || flags.sub2_reads_z1 {
        return Err(Error::CouplingViolation(
            "model declares dependence on the other subsystem's algebraic variables".into(),
        ));
    }
    dae.check_state(s0)?;
    let p = dae.partition();
    let tol = T::lit(COUPLING_TOLERANCE);
    let step = default_fd_step::<T>();

    if p.nz2 > 0 && p.ny1 + p.nz1 > 0 {
        let mut side1 = |z2: &[T]| {
            let mut s = s0.clone();
            s.z2.copy_from_slice(z2);
            Ok(Vector::concat(&[&dae.f1(&s)?, &dae.g1(&s)?]))
        };
        let jac = fd_jacobian(&mut side1, &s0.z2, p.ny1 + p.nz1, step)?;
        if jac.max_abs() > tol {
            return Err(Error::CouplingViolation(format!(
                "(f1, g1) depends on z2 (sensitivity {:e})",
                jac.max_abs()
            )));
        }
    }
    if p.nz1 > 0 && p.ny2 + p.nz2 > 0 {
        let mut side2 = |z1: &[T]| {
            let mut s = s0.clone();
            s.z1.copy_from_slice(z1);
            Ok(Vector::concat(&[&dae.f2(&s)?, &dae.g2(&s)?]))
        };
        let jac = fd_jacobian(&mut side2, &s0.z1, p.ny2 + p.nz2, step)?;
        if jac.max_abs() > tol {
            return Err(Error::CouplingViolation(format!(
                "(f2, g2) depends on z1 (sensitivity {:e})",
                jac.max_abs()
            )));
        }
    }
    let (f1, g1, f2, g2) = dae.blocks();
    Ok(SplitPair {
        sub1: CoupledDae::from_blocks(p, f1.clone(), g1.clone(), None, None, dae),
        sub2: CoupledDae::from_blocks(p, None, None, f2.clone(), g2.clone(), dae),
        kind: SplitKind::DifferentialCoupling,
        parent: Some(dae.clone()),
    })
}

/// Doubled split of the lifted model: the coupling equation `k` and the
/// coupling variable appear in both subsystems.
pub fn lagrangian_split<T: Scalar>(m: &CoupledDaeWithConstraint<T>) -> SplitPair<T> {
    let mut pair = doubled_split(&lift_constraint_model(m));
    pair.kind = SplitKind::Lagrangian;
    pair
}

/// Classical ODE splitting `x' = f_a(x) + f_b(x)`; both functions act on the
/// same `ny` variables.
pub fn additive_split<T: Scalar>(ny: usize, fa: BlockFn<T>, fb: BlockFn<T>) -> Result<SplitPair<T>> {
    let none: BlockFn<T> = Arc::new(|_: &State<T>| Vector::zeros(0));
    Ok(SplitPair {
        sub1: CoupledDae::ode(ny, 0, fa, none.clone())?,
        sub2: CoupledDae::ode(ny, 0, fb, none)?,
        kind: SplitKind::Additive,
        parent: None,
    })
}

/// One macro step of size `cfg.h`.
///
/// Time convention: each subflow covers its own sub-interval of
/// `[t, t + h]`; Lie runs both subsystems over `[t, t + h]`, Strang runs
/// sub1 over `[t, t + h/2]`, sub2 over `[t, t + h]` and sub1 over
/// `[t + h/2, t + h]`.
pub fn splitting_step<T: Scalar>(
    pair: &SplitPair<T>,
    s: &State<T>,
    scheme: SchemeKind,
    kind: IntegratorKind,
    cfg: &StepConfig<T>,
) -> Result<State<T>> {
    splitting_step_counted(pair, s, scheme, kind, cfg).map(|(s, _)| s)
}

/// [`splitting_step`] that also reports the Newton iterations spent.
pub fn splitting_step_counted<T: Scalar>(
    pair: &SplitPair<T>,
    s: &State<T>,
    scheme: SchemeKind,
    kind: IntegratorKind,
    cfg: &StepConfig<T>,
) -> Result<(State<T>, usize)> {
    cfg.validate()?;
    let h = cfg.h;
    let half = cfg.with_h(h * T::lit(0.5));
    let t0 = s.t;
    let (mut cur, mut iters) = match scheme {
        SchemeKind::LieTrotter => {
            let (a, i1) = dae_step_counted(&pair.sub1, s, kind, cfg)?;
            let (b, i2) = dae_step_counted(&pair.sub2, &a.with_time(t0), kind, cfg)?;
            (b, i1 + i2)
        }
        SchemeKind::Strang => {
            let (a, i1) = dae_step_counted(&pair.sub1, s, kind, &half)?;
            let t_half = a.t;
            let (b, i2) = dae_step_counted(&pair.sub2, &a.with_time(t0), kind, cfg)?;
            let (c, i3) = dae_step_counted(&pair.sub1, &b.with_time(t_half), kind, &half)?;
            (c, i1 + i2 + i3)
        }
    };
    cur.t = t0 + h;
    if let Some(parent) = &pair.parent {
        let (projected, it) = parent.project(&cur, &cfg.newton())?;
        cur = projected;
        iters += it;
    }
    Ok((cur, iters))
}

/// Repeated [`splitting_step`] on a uniform grid.
pub fn splitting_integrate<T: Scalar>(
    pair: &SplitPair<T>,
    s0: &State<T>,
    t_end: T,
    scheme: SchemeKind,
    kind: IntegratorKind,
    cfg: &StepConfig<T>,
) -> Result<Trajectory<T>> {
    let mut traj = Trajectory::single(s0.clone());
    let iterations = drive(
        s0,
        t_end,
        cfg,
        |s, c| splitting_step_counted(pair, s, scheme, kind, c),
        |s| traj.push(s),
    )?;
    traj.newton_iterations = iterations;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae::{consistent_init, reduced_ode_model, CouplingFlags, Partition};
    use crate::linalg::{expm, Matrix};

    fn block(f: impl Fn(&State<f64>) -> Vec<f64> + Send + Sync + 'static) -> BlockFn<f64> {
        Arc::new(move |s| Vector::from_vec(f(s)))
    }

    fn state(y1: f64, y2: f64, z1: f64, z2: f64) -> State<f64> {
        State::from_stacked(&Partition::new(1, 1, 1, 1).unwrap(), 0.0, &[y1, y2], &[z1, z2]).unwrap()
    }

    fn constant_model() -> CoupledDae<f64> {
        CoupledDae::new(
            Partition::new(1, 1, 1, 1).unwrap(),
            block(|_| vec![1.0]),
            block(|s| vec![s.z1[0] - 1.0]),
            block(|_| vec![2.0]),
            block(|s| vec![s.z2[0] - 2.0]),
        )
    }

    #[test]
    fn doubled_split_of_constants() {
        let pair = doubled_split(&constant_model());
        let s = state(0.3, -4.0, 7.0, 0.5);
        assert_eq!(pair.sub1.stacked_rhs(&s).unwrap().as_slice(), &[1.0, 6.0, 0.0, -1.5]);
        assert_eq!(pair.sub2.stacked_rhs(&s).unwrap().as_slice(), &[0.0, 6.0, 2.0, -1.5]);
        let f_sum: Vec<f64> = [0, 2]
            .iter()
            .map(|&i| pair.sub1.stacked_rhs(&s).unwrap()[i] + pair.sub2.stacked_rhs(&s).unwrap()[i])
            .collect();
        assert_eq!(f_sum, vec![1.0, 2.0]);
        assert!(pair.sub1.y2_frozen() && !pair.sub1.y1_frozen());
        assert!(pair.sub2.y1_frozen() && !pair.sub2.y2_frozen());
    }

    #[test]
    fn doubled_split_of_pure_ode() {
        let ode = CoupledDae::ode(1, 1, block(|s| vec![-s.y2[0]]), block(|s| vec![s.y1[0]])).unwrap();
        let pair = doubled_split(&ode);
        let s = State::from_stacked(&ode.partition(), 0.0, &[1.0, 2.0], &[]).unwrap();
        assert_eq!(pair.sub1.stacked_rhs(&s).unwrap().as_slice(), &[-2.0, 0.0]);
        assert_eq!(pair.sub2.stacked_rhs(&s).unwrap().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn zero_dynamics_is_a_fixed_point() {
        let dae = CoupledDae::new(
            Partition::new(1, 1, 1, 1).unwrap(),
            block(|_| vec![0.0]),
            block(|s| vec![s.z1[0] - s.y1[0] - s.z2[0]]),
            block(|_| vec![0.0]),
            block(|s| vec![2.0 * s.z2[0] - s.y2[0]]),
        );
        let s0 = consistent_init(&dae, &state(1.0, 3.0, 0.0, 0.0), 1e-12).unwrap();
        let pair = doubled_split(&dae);
        for scheme in [SchemeKind::LieTrotter, SchemeKind::Strang] {
            let traj = splitting_integrate(
                &pair,
                &s0,
                1.0,
                scheme,
                IntegratorKind::ImplicitMidpoint,
                &StepConfig::new(0.1),
            )
            .unwrap();
            for s in &traj.states {
                assert_eq!(s.y(), s0.y());
                assert!(s.z().sub(&s0.z()).norm_inf() < 1e-12);
            }
        }
    }

    /// y1' = y2, 0 = z1 − y1 ; y2' = y1, 0 = z2 − y2.
    fn differential_only() -> CoupledDae<f64> {
        CoupledDae::new(
            Partition::new(1, 1, 1, 1).unwrap(),
            block(|s| vec![s.y2[0]]),
            block(|s| vec![s.z1[0] - s.y1[0]]),
            block(|s| vec![s.y1[0]]),
            block(|s| vec![s.z2[0] - s.y2[0]]),
        )
        .with_coupling(CouplingFlags {
            sub1_reads_z2: false,
            sub2_reads_z1: false,
        })
    }

    #[test]
    fn differential_coupling_split_exact_substeps() {
        let dae = differential_only();
        let s0 = state(1.0, 0.5, 1.0, 0.5);
        let pair = differential_coupling_split(&dae, &s0).unwrap();
        assert!(pair.sub1.z2_frozen() && pair.sub2.z1_frozen());
        let h = 0.1;
        // Exact subflows: y1 += h·y2, then y2 += h·y1_new.
        let y1 = 1.0 + h * 0.5;
        let y2 = 0.5 + h * y1;
        let cfg = StepConfig::new(h).with_substeps(1);
        let s1 = splitting_step(
            &pair,
            &s0,
            SchemeKind::LieTrotter,
            IntegratorKind::ImplicitMidpoint,
            &cfg,
        )
        .unwrap();
        // Midpoint is exact for a constant right-hand side.
        assert!((s1.y1[0] - y1).abs() < 1e-13);
        assert!((s1.y2[0] - y2).abs() < 1e-13);
        assert!((s1.z1[0] - s1.y1[0]).abs() < 1e-12 && (s1.z2[0] - s1.y2[0]).abs() < 1e-12);
    }

    #[test]
    fn differential_coupling_split_detects_violation() {
        let lying = CoupledDae::new(
            Partition::new(1, 1, 1, 1).unwrap(),
            block(|s| vec![s.y2[0]]),
            block(|s| vec![s.z1[0] - s.y1[0] + 0.5 * s.z2[0]]),
            block(|s| vec![s.y1[0]]),
            block(|s| vec![s.z2[0] - s.y2[0]]),
        )
        .with_coupling(CouplingFlags {
            sub1_reads_z2: false,
            sub2_reads_z1: false,
        });
        let err = differential_coupling_split(&lying, &state(1.0, 0.5, 1.0, 0.5)).unwrap_err();
        assert!(matches!(err, Error::CouplingViolation(_)));
        let flagged = constant_model();
        assert!(matches!(
            differential_coupling_split(&flagged, &state(0.0, 0.0, 0.0, 0.0)),
            Err(Error::CouplingViolation(_))
        ));
    }

    #[test]
    fn decoupled_model_touches_own_variables_only() {
        let dae = CoupledDae::new(
            Partition::new(1, 1, 1, 1).unwrap(),
            block(|s| vec![-s.y1[0]]),
            block(|s| vec![s.z1[0] - 2.0 * s.y1[0]]),
            block(|s| vec![-3.0 * s.y2[0]]),
            block(|s| vec![s.z2[0] + s.y2[0]]),
        )
        .with_coupling(CouplingFlags {
            sub1_reads_z2: false,
            sub2_reads_z1: false,
        });
        let s0 = state(1.0, 1.0, 2.0, -1.0);
        let pair = differential_coupling_split(&dae, &s0).unwrap();
        let a = crate::integrators::dae_step(&pair.sub1, &s0, IntegratorKind::ImplicitEuler, &StepConfig::new(0.1))
            .unwrap();
        assert_eq!((a.y2.clone(), a.z2.clone()), (s0.y2.clone(), s0.z2.clone()));
        let b = crate::integrators::dae_step(&pair.sub2, &s0, IntegratorKind::ImplicitEuler, &StepConfig::new(0.1))
            .unwrap();
        assert_eq!((b.y1.clone(), b.z1.clone()), (s0.y1.clone(), s0.z1.clone()));
    }

    #[test]
    fn commuting_scalar_flows_compose_exactly() {
        let pair = additive_split(1, block(|s| vec![s.y1[0]]), block(|s| vec![2.0 * s.y1[0]])).unwrap();
        let s0 = State::from_stacked(&pair.sub1.partition(), 0.0, &[1.0], &[]).unwrap();
        let cfg = StepConfig::new(0.1).with_substeps(200);
        let s1 = splitting_step(
            &pair,
            &s0,
            SchemeKind::LieTrotter,
            IntegratorKind::ImplicitMidpoint,
            &cfg,
        )
        .unwrap();
        assert!((s1.y1[0] - 0.3f64.exp()).abs() < 1e-7, "{}", s1.y1[0]);
        assert!((s1.y1[0] - 1.349_858_8).abs() < 1e-6);
    }

    fn linear(a: Matrix<f64>) -> BlockFn<f64> {
        Arc::new(move |s| a.matvec(&s.y1).unwrap())
    }

    #[test]
    fn strang_local_defect_is_third_order() {
        let a1 = Matrix::from_f64_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let a2 = Matrix::from_f64_rows(&[&[-1.0, 0.0], &[0.0, 0.0]]);
        let sum = a1.add(&a2).unwrap();
        let pair = additive_split(2, linear(a1), linear(a2)).unwrap();
        let x0 = [1.0, 0.5];
        let s0 = State::from_stacked(&pair.sub1.partition(), 0.0, &x0, &[]).unwrap();
        let hs = [0.1, 0.05, 0.025];
        let defects: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let cfg = StepConfig::new(h).with_substeps(400);
                let s = splitting_step(&pair, &s0, SchemeKind::Strang, IntegratorKind::ImplicitMidpoint, &cfg).unwrap();
                let exact = expm(&sum.scaled(h)).unwrap().matvec(&x0).unwrap();
                s.y1.sub(&exact).norm_inf()
            })
            .collect();
        let slope = (defects[0] / defects[2]).ln() / (hs[0] / hs[2]).ln();
        assert!(slope >= 2.7, "local order {slope}, defects {defects:?}");
    }

    /// Explicit constraints z = φ(y): splitting the DAE equals splitting the
    /// reduced ODE.
    #[test]
    fn dae_split_matches_reduced_ode_split() {
        let dae = CoupledDae::new(
            Partition::new(1, 1, 1, 1).unwrap(),
            block(|s| vec![-s.z2[0] + 0.1 * s.z1[0]]),
            block(|s| vec![s.z1[0] - s.y1[0] * s.y1[0]]),
            block(|s| vec![s.z1[0] - s.y2[0]]),
            block(|s| vec![s.z2[0] - s.y2[0].sin()]),
        );
        let s0 = consistent_init(&dae, &state(0.8, 0.3, 0.0, 0.0), 1e-12).unwrap();
        let ode = reduced_ode_model(&dae, &[0.0, 0.0]).unwrap();
        let ode_s0 = State::from_stacked(&ode.partition(), 0.0, &s0.y(), &[]).unwrap();
        let cfg = StepConfig::new(0.05);
        for scheme in [SchemeKind::LieTrotter, SchemeKind::Strang] {
            let a = splitting_integrate(
                &doubled_split(&dae),
                &s0,
                1.0,
                scheme,
                IntegratorKind::ImplicitMidpoint,
                &cfg,
            )
            .unwrap();
            let b = splitting_integrate(
                &doubled_split(&ode),
                &ode_s0,
                1.0,
                scheme,
                IntegratorKind::ImplicitMidpoint,
                &cfg,
            )
            .unwrap();
            for (sa, sb) in a.states.iter().zip(&b.states) {
                assert!(sa.y().sub(&sb.y()).norm_inf() < 1e-10, "{scheme:?}");
            }
        }
    }

    #[test]
    fn freezing_is_bitwise_and_states_stay_consistent() {
        let dae = CoupledDae::new(
            Partition::new(1, 1, 1, 1).unwrap(),
            block(|s| vec![s.z1[0] - s.y2[0]]),
            block(|s| vec![s.z1[0] - s.y1[0] + 0.3 * s.z2[0]]),
            block(|s| vec![-s.z2[0]]),
            block(|s| vec![s.z2[0] - s.y1[0] * s.y2[0]]),
        );
        let s0 = consistent_init(&dae, &state(0.7, -0.4, 0.0, 0.0), 1e-12).unwrap();
        let pair = doubled_split(&dae);
        let cfg = StepConfig::new(0.1);
        let a = crate::integrators::dae_step(&pair.sub1, &s0, IntegratorKind::ImplicitMidpoint, &cfg).unwrap();
        assert_eq!(a.y2, s0.y2);
        let b = crate::integrators::dae_step(&pair.sub2, &a, IntegratorKind::ImplicitMidpoint, &cfg).unwrap();
        assert_eq!(b.y1, a.y1);
        let traj = splitting_integrate(
            &pair,
            &s0,
            2.0,
            SchemeKind::Strang,
            IntegratorKind::ImplicitMidpoint,
            &cfg,
        )
        .unwrap();
        for s in &traj.states {
            assert!(dae.algebraic_residual(s).unwrap().norm_inf() <= 10.0 * cfg.newton_tol);
        }
    }

    #[test]
    fn scheme_names_parse() {
        assert_eq!("lie".parse::<SchemeKind>().unwrap(), SchemeKind::LieTrotter);
        assert_eq!("Strang".parse::<SchemeKind>().unwrap(), SchemeKind::Strang);
        assert!("yoshida".parse::<SchemeKind>().is_err());
    }
}
