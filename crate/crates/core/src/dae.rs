//! Coupled semi-explicit index-1 DAEs.
//!
//! Two subsystems share the time axis:
//!
//! ```text
//! y1' = f1(y1, y2, z1, z2)      0 = g1(y1, y2, z1, z2)
//! y2' = f2(y1, y2, z1, z2)      0 = g2(y1, y2, z1, z2)
//! ```
//!
//! A right-hand side block may be *frozen*: a frozen `f` means the matching
//! differential variables do not move, a frozen `g` means the matching
//! algebraic variables are held fixed and their constraint is not solved.
//! Splitting builds its subsystems this way.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{condition_estimate, LuFactor, Matrix, Vector};
use crate::newton::{fd_jacobian, newton_solve, NewtonConfig};
use crate::scalar::Scalar;

/// Sizes of the differential (`y1`, `y2`) and algebraic (`z1`, `z2`) blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct Partition {
    pub ny1: usize,
    pub ny2: usize,
    pub nz1: usize,
    pub nz2: usize,
}

impl Partition {
    pub fn new(ny1: usize, ny2: usize, nz1: usize, nz2: usize) -> Result<Self> {
        if ny1 + ny2 == 0 {
            return Err(Error::InvalidArgument(
                "a coupled DAE needs at least one differential variable".into(),
            ));
        }
        Ok(Partition { ny1, ny2, nz1, nz2 })
    }

    pub fn ny(&self) -> usize {
        self.ny1 + self.ny2
    }

    pub fn nz(&self) -> usize {
        self.nz1 + self.nz2
    }

    pub fn len(&self) -> usize {
        self.ny() + self.nz()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Snapshot of all unknowns at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct State<T> {
    pub t: T,
    pub y1: Vector<T>,
    pub y2: Vector<T>,
    pub z1: Vector<T>,
    pub z2: Vector<T>,
}

impl<T: Scalar> State<T> {
    pub fn new(t: T, y1: Vector<T>, y2: Vector<T>, z1: Vector<T>, z2: Vector<T>) -> Self {
        State { t, y1, y2, z1, z2 }
    }

    pub fn zeros(p: &Partition) -> Self {
        State {
            t: T::zero(),
            y1: Vector::zeros(p.ny1),
            y2: Vector::zeros(p.ny2),
            z1: Vector::zeros(p.nz1),
            z2: Vector::zeros(p.nz2),
        }
    }

    /// Builds a state from stacked `y = (y1, y2)` and `z = (z1, z2)`.
    pub fn from_stacked(p: &Partition, t: T, y: &[T], z: &[T]) -> Result<Self> {
        if y.len() != p.ny() || z.len() != p.nz() {
            return Err(Error::DimensionMismatch(format!(
                "state needs {} differential and {} algebraic values, got {} and {}",
                p.ny(),
                p.nz(),
                y.len(),
                z.len()
            )));
        }
        Ok(State {
            t,
            y1: y[..p.ny1].to_vec().into(),
            y2: y[p.ny1..].to_vec().into(),
            z1: z[..p.nz1].to_vec().into(),
            z2: z[p.nz1..].to_vec().into(),
        })
    }

    pub fn partition(&self) -> Partition {
        Partition {
            ny1: self.y1.len(),
            ny2: self.y2.len(),
            nz1: self.z1.len(),
            nz2: self.z2.len(),
        }
    }

    pub fn y(&self) -> Vector<T> {
        Vector::concat(&[&self.y1, &self.y2])
    }

    pub fn z(&self) -> Vector<T> {
        Vector::concat(&[&self.z1, &self.z2])
    }

    /// All components in the order `(y1, y2, z1, z2)`.
    pub fn flat(&self) -> Vector<T> {
        Vector::concat(&[&self.y1, &self.y2, &self.z1, &self.z2])
    }

    pub fn set_z(&mut self, z: &[T]) {
        let n1 = self.z1.len();
        self.z1.copy_from_slice(&z[..n1]);
        self.z2.copy_from_slice(&z[n1..]);
    }

    pub fn with_time(mut self, t: T) -> Self {
        self.t = t;
        self
    }
}

/// Right-hand side block: a function of the full state.
pub type BlockFn<T> = Arc<dyn Fn(&State<T>) -> Vector<T> + Send + Sync>;

/// Analytic Jacobian of the stacked algebraic residuals with respect to the
/// stacked algebraic variables.
pub type AlgebraicJacobianFn<T> = Arc<dyn Fn(&State<T>) -> Matrix<T> + Send + Sync>;

/// Declares whether a subsystem reads the other subsystem's algebraic
/// variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CouplingFlags {
    /// `f1` or `g1` depends on `z2`.
    pub sub1_reads_z2: bool,
    /// `f2` or `g2` depends on `z1`.
    pub sub2_reads_z1: bool,
}

impl Default for CouplingFlags {
    fn default() -> Self {
        CouplingFlags {
            sub1_reads_z2: true,
            sub2_reads_z1: true,
        }
    }
}

/// Coupled semi-explicit DAE.
#[derive(Clone)]
pub struct CoupledDae<T> {
    partition: Partition,
    f1: Option<BlockFn<T>>,
    g1: Option<BlockFn<T>>,
    f2: Option<BlockFn<T>>,
    g2: Option<BlockFn<T>>,
    coupling: CouplingFlags,
    algebraic_jacobian: Option<AlgebraicJacobianFn<T>>,
    names: Vec<String>,
}

impl<T: Scalar> fmt::Debug for CoupledDae<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoupledDae")
            .field("partition", &self.partition)
            .field("f1", &self.f1.is_some())
            .field("g1", &self.g1.is_some())
            .field("f2", &self.f2.is_some())
            .field("g2", &self.g2.is_some())
            .field("coupling", &self.coupling)
            .finish()
    }
}

fn default_names(p: &Partition) -> Vec<String> {
    let mut names = Vec::with_capacity(p.len());
    for (prefix, n) in [("y1", p.ny1), ("y2", p.ny2), ("z1", p.nz1), ("z2", p.nz2)] {
        names.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    names
}

impl<T: Scalar> CoupledDae<T> {
    pub fn new(partition: Partition, f1: BlockFn<T>, g1: BlockFn<T>, f2: BlockFn<T>, g2: BlockFn<T>) -> Self {
        CoupledDae {
            names: default_names(&partition),
            partition,
            f1: Some(f1),
            g1: Some(g1),
            f2: Some(f2),
            g2: Some(g2),
            coupling: CouplingFlags::default(),
            algebraic_jacobian: None,
        }
    }

    /// Pure ODE `y1' = f1`, `y2' = f2` without algebraic variables.
    pub fn ode(ny1: usize, ny2: usize, f1: BlockFn<T>, f2: BlockFn<T>) -> Result<Self> {
        let p = Partition::new(ny1, ny2, 0, 0)?;
        let empty: BlockFn<T> = Arc::new(|_: &State<T>| Vector::zeros(0));
        Ok(Self::new(p, f1, empty.clone(), f2, empty).with_coupling(CouplingFlags {
            sub1_reads_z2: false,
            sub2_reads_z1: false,
        }))
    }

    pub fn with_coupling(mut self, flags: CouplingFlags) -> Self {
        self.coupling = flags;
        self
    }

    pub fn with_algebraic_jacobian(mut self, jac: AlgebraicJacobianFn<T>) -> Self {
        self.algebraic_jacobian = Some(jac);
        self
    }

    /// Variable names in `(y1, y2, z1, z2)` order.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.partition.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} variables",
                names.len(),
                self.partition.len()
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn coupling(&self) -> CouplingFlags {
        self.coupling
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn analytic_algebraic_jacobian(&self) -> Option<&AlgebraicJacobianFn<T>> {
        self.algebraic_jacobian.as_ref()
    }

    pub(crate) fn blocks(
        &self,
    ) -> (
        &Option<BlockFn<T>>,
        &Option<BlockFn<T>>,
        &Option<BlockFn<T>>,
        &Option<BlockFn<T>>,
    ) {
        (&self.f1, &self.g1, &self.f2, &self.g2)
    }

    pub(crate) fn from_blocks(
        partition: Partition,
        f1: Option<BlockFn<T>>,
        g1: Option<BlockFn<T>>,
        f2: Option<BlockFn<T>>,
        g2: Option<BlockFn<T>>,
        template: &CoupledDae<T>,
    ) -> Self {
        CoupledDae {
            partition,
            f1,
            g1,
            f2,
            g2,
            coupling: template.coupling,
            algebraic_jacobian: None,
            names: template.names.clone(),
        }
    }

    pub fn y1_frozen(&self) -> bool {
        self.f1.is_none()
    }

    pub fn y2_frozen(&self) -> bool {
        self.f2.is_none()
    }

    pub fn z1_frozen(&self) -> bool {
        self.g1.is_none()
    }

    pub fn z2_frozen(&self) -> bool {
        self.g2.is_none()
    }

    fn eval(block: &Option<BlockFn<T>>, s: &State<T>, len: usize, what: &str) -> Result<Vector<T>> {
        match block {
            None => Ok(Vector::zeros(len)),
            Some(f) => {
                let v = f(s);
                if v.len() != len {
                    return Err(Error::DimensionMismatch(format!(
                        "{what} returned {} values, expected {len}",
                        v.len()
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::EvaluationFailure(format!("{what} at t = {}", s.t)));
                }
                Ok(v)
            }
        }
    }

    /// `f1(s)`, or zeros when frozen.
    pub fn f1(&self, s: &State<T>) -> Result<Vector<T>> {
        Self::eval(&self.f1, s, self.partition.ny1, "f1")
    }

    pub fn f2(&self, s: &State<T>) -> Result<Vector<T>> {
        Self::eval(&self.f2, s, self.partition.ny2, "f2")
    }

    /// `g1(s)`, or zeros when frozen.
    pub fn g1(&self, s: &State<T>) -> Result<Vector<T>> {
        Self::eval(&self.g1, s, self.partition.nz1, "g1")
    }

    pub fn g2(&self, s: &State<T>) -> Result<Vector<T>> {
        Self::eval(&self.g2, s, self.partition.nz2, "g2")
    }

    /// Stacked right-hand side `(f1, g1, f2, g2)` with zeros for frozen blocks.
    pub fn stacked_rhs(&self, s: &State<T>) -> Result<Vector<T>> {
        Ok(Vector::concat(&[
            &self.f1(s)?,
            &self.g1(s)?,
            &self.f2(s)?,
            &self.g2(s)?,
        ]))
    }

    /// Stacked `(g1, g2)` over every block, frozen ones included as zeros.
    pub fn algebraic_residual(&self, s: &State<T>) -> Result<Vector<T>> {
        Ok(Vector::concat(&[&self.g1(s)?, &self.g2(s)?]))
    }

    /// Residuals of the constraints this model actually solves.
    pub(crate) fn active_constraints(&self, s: &State<T>) -> Result<Vector<T>> {
        let mut out = Vec::with_capacity(self.partition.nz());
        if self.g1.is_some() {
            out.extend_from_slice(&self.g1(s)?);
        }
        if self.g2.is_some() {
            out.extend_from_slice(&self.g2(s)?);
        }
        Ok(out.into())
    }

    pub(crate) fn active_z_len(&self) -> usize {
        let p = self.partition;
        (if self.g1.is_some() { p.nz1 } else { 0 }) + (if self.g2.is_some() { p.nz2 } else { 0 })
    }

    pub(crate) fn active_y_len(&self) -> usize {
        let p = self.partition;
        (if self.f1.is_some() { p.ny1 } else { 0 }) + (if self.f2.is_some() { p.ny2 } else { 0 })
    }

    pub(crate) fn gather_active_z(&self, s: &State<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(self.active_z_len());
        if self.g1.is_some() {
            out.extend_from_slice(&s.z1);
        }
        if self.g2.is_some() {
            out.extend_from_slice(&s.z2);
        }
        out
    }

    pub(crate) fn scatter_active_z(&self, s: &mut State<T>, z: &[T]) {
        let mut off = 0;
        if self.g1.is_some() {
            let n = s.z1.len();
            s.z1.copy_from_slice(&z[off..off + n]);
            off += n;
        }
        if self.g2.is_some() {
            let n = s.z2.len();
            s.z2.copy_from_slice(&z[off..off + n]);
        }
    }

    pub(crate) fn gather_active_y(&self, s: &State<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(self.active_y_len());
        if self.f1.is_some() {
            out.extend_from_slice(&s.y1);
        }
        if self.f2.is_some() {
            out.extend_from_slice(&s.y2);
        }
        out
    }

    pub(crate) fn scatter_active_y(&self, s: &mut State<T>, y: &[T]) {
        let mut off = 0;
        if self.f1.is_some() {
            let n = s.y1.len();
            s.y1.copy_from_slice(&y[off..off + n]);
            off += n;
        }
        if self.f2.is_some() {
            let n = s.y2.len();
            s.y2.copy_from_slice(&y[off..off + n]);
        }
    }

    /// Active differential right-hand sides, stacked.
    pub(crate) fn active_f(&self, s: &State<T>) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(self.active_y_len());
        if self.f1.is_some() {
            out.extend_from_slice(&self.f1(s)?);
        }
        if self.f2.is_some() {
            out.extend_from_slice(&self.f2(s)?);
        }
        Ok(out)
    }

    pub(crate) fn check_state(&self, s: &State<T>) -> Result<()> {
        if s.partition() != self.partition {
            return Err(Error::DimensionMismatch(format!(
                "state partition {:?} does not match model {:?}",
                s.partition(),
                self.partition
            )));
        }
        Ok(())
    }

    /// Solves this model's active constraints for its active algebraic
    /// variables, holding `y` (and any frozen `z`) fixed.
    pub(crate) fn project(&self, s: &State<T>, cfg: &NewtonConfig<T>) -> Result<(State<T>, usize)> {
        if self.active_z_len() == 0 {
            return Ok((s.clone(), 0));
        }
        let mut work = s.clone();
        let z0 = self.gather_active_z(s);
        let sol = newton_solve(
            |z: &[T]| {
                let mut trial = s.clone();
                self.scatter_active_z(&mut trial, z);
                self.active_constraints(&trial)
            },
            &z0,
            cfg,
        )?;
        self.scatter_active_z(&mut work, &sol.x);
        Ok((work, sol.iterations))
    }
}

/// Central finite-difference Jacobian of stacked `(g1, g2)` with respect to
/// stacked `(z1, z2)`. Column `j` uses the increment `fd_step * (1 + |z_j|)`.
pub fn algebraic_jacobian<T: Scalar>(dae: &CoupledDae<T>, s: &State<T>, fd_step: T) -> Result<Matrix<T>> {
    if fd_step <= T::zero() {
        return Err(Error::InvalidArgument("fd_step must be positive".into()));
    }
    dae.check_state(s)?;
    let p = dae.partition();
    let z0 = s.z();
    let mut f = |z: &[T]| {
        let mut trial = s.clone();
        trial.set_z(z);
        dae.algebraic_residual(&trial)
    };
    f(&z0)?;
    fd_jacobian(&mut f, &z0, p.nz(), fd_step)
}

/// Outcome of the index-1 regularity test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Index1Report<T> {
    pub regular: bool,
    /// `‖J‖₁·‖J⁻¹‖₁` of the algebraic Jacobian; infinite when singular.
    pub condition_estimate: T,
}

/// Checks that `∂(g1, g2)/∂(z1, z2)` is nonsingular at `s`.
pub fn check_index1<T: Scalar>(dae: &CoupledDae<T>, s: &State<T>) -> Index1Report<T> {
    if dae.partition().nz() == 0 {
        return Index1Report {
            regular: true,
            condition_estimate: T::one(),
        };
    }
    let jac = match dae.analytic_algebraic_jacobian() {
        Some(j) => Ok(j(s)),
        None => algebraic_jacobian(dae, s, crate::newton::default_fd_step()),
    };
    let singular = Index1Report {
        regular: false,
        condition_estimate: T::infinity(),
    };
    let Ok(jac) = jac else { return singular };
    if LuFactor::new(&jac).is_err() {
        return singular;
    }
    Index1Report {
        regular: true,
        condition_estimate: condition_estimate(&jac).unwrap_or_else(T::infinity),
    }
}

/// Returns a state with the differential values of `guess` and algebraic
/// values solving `(g1, g2) = 0` to `tol` (damped Newton, at most 50
/// iterations).
pub fn consistent_init<T: Scalar>(dae: &CoupledDae<T>, guess: &State<T>, tol: T) -> Result<State<T>> {
    dae.check_state(guess)?;
    let (s, _) = dae.project(guess, &NewtonConfig::with_tol(tol))?;
    Ok(s)
}

/// Evaluates the reduced ODE `y' = f(y, φ(y))`.
///
/// The algebraic variables are found by Newton from the hint stored in `s`;
/// returns `(f1, f2)` and the solved state.
pub fn reduce_to_ode_with_state<T: Scalar>(
    dae: &CoupledDae<T>,
    s: &State<T>,
) -> Result<(Vector<T>, Vector<T>, State<T>)> {
    dae.check_state(s)?;
    let (solved, _) = dae.project(s, &NewtonConfig::default())?;
    Ok((dae.f1(&solved)?, dae.f2(&solved)?, solved))
}

/// `(y1', y2')` of the reduced ODE at the differential values in `s`,
/// using `s`'s algebraic values as the Newton starting point.
pub fn reduce_to_ode<T: Scalar>(dae: &CoupledDae<T>, s: &State<T>) -> Result<(Vector<T>, Vector<T>)> {
    let (f1, f2, _) = reduce_to_ode_with_state(dae, s)?;
    Ok((f1, f2))
}

/// Pure-ODE model whose right-hand side is the reduced ODE of `dae`.
/// Algebraic variables are recomputed from `z_hint` at every evaluation.
pub fn reduced_ode_model<T: Scalar>(dae: &CoupledDae<T>, z_hint: &[T]) -> Result<CoupledDae<T>> {
    let p = dae.partition();
    if z_hint.len() != p.nz() {
        return Err(Error::DimensionMismatch("z_hint length".into()));
    }
    let lift = {
        let z_hint = z_hint.to_vec();
        move |s: &State<T>| {
            let mut full = State::from_stacked(&p, s.t, &s.y(), &z_hint).expect("sizes checked");
            full.t = s.t;
            full
        }
    };
    let (d1, l1) = (dae.clone(), lift.clone());
    let f1: BlockFn<T> = Arc::new(move |s| match reduce_to_ode(&d1, &l1(s)) {
        Ok((f1, _)) => f1,
        Err(_) => Vector::from_vec(vec![T::nan(); p.ny1]),
    });
    let d2 = dae.clone();
    let f2: BlockFn<T> = Arc::new(move |s| match reduce_to_ode(&d2, &lift(s)) {
        Ok((_, f2)) => f2,
        Err(_) => Vector::from_vec(vec![T::nan(); p.ny2]),
    });
    let ode = CoupledDae::ode(p.ny1, p.ny2, f1, f2)?;
    ode.with_names(dae.names()[..p.ny()].to_vec())
}

/// Block function of a model with a dedicated coupling variable `u_c`:
/// receives the state and the current `u_c`.
pub type ConstrainedFn<T> = Arc<dyn Fn(&State<T>, &[T]) -> Vector<T> + Send + Sync>;

/// Coupled DAE with a coupling equation `0 = k(...)` and a Lagrangian
/// coupling variable `u_c` entering `g1` and `g2`.
#[derive(Clone)]
pub struct CoupledDaeWithConstraint<T> {
    pub partition: Partition,
    pub nu: usize,
    pub f1: ConstrainedFn<T>,
    pub g1: ConstrainedFn<T>,
    pub f2: ConstrainedFn<T>,
    pub g2: ConstrainedFn<T>,
    pub k: ConstrainedFn<T>,
    pub coupling: CouplingFlags,
    /// Names in `(y1, y2, z1, z2, u_c)` order.
    pub names: Vec<String>,
}

impl<T: Scalar> CoupledDaeWithConstraint<T> {
    /// Stacked `(g1, g2, k)` at `s` with coupling variables `uc`.
    pub fn constraint_residual(&self, s: &State<T>, uc: &[T]) -> Vector<T> {
        Vector::concat(&[&(self.g1)(s, uc), &(self.g2)(s, uc), &(self.k)(s, uc)])
    }
}

/// Rewrites a constrained model as a plain [`CoupledDae`]: `u_c` is appended
/// to `z2` and `k` to `g2`.
pub fn lift_constraint_model<T: Scalar>(m: &CoupledDaeWithConstraint<T>) -> CoupledDae<T> {
    let p = m.partition;
    let lifted = Partition { nz2: p.nz2 + m.nu, ..p };
    // Splits a lifted state into the original state and u_c.
    let view = move |s: &State<T>| -> (State<T>, Vector<T>) {
        let orig = State {
            t: s.t,
            y1: s.y1.clone(),
            y2: s.y2.clone(),
            z1: s.z1.clone(),
            z2: s.z2[..p.nz2].to_vec().into(),
        };
        (orig, s.z2[p.nz2..].to_vec().into())
    };
    let wrap = |f: ConstrainedFn<T>| -> BlockFn<T> {
        Arc::new(move |s: &State<T>| {
            let (orig, uc) = view(s);
            f(&orig, &uc)
        })
    };
    let g2 = m.g2.clone();
    let k = m.k.clone();
    let g2k: BlockFn<T> = Arc::new(move |s: &State<T>| {
        let (orig, uc) = view(s);
        Vector::concat(&[&g2(&orig, &uc), &k(&orig, &uc)])
    });
    let dae = CoupledDae::new(lifted, wrap(m.f1.clone()), wrap(m.g1.clone()), wrap(m.f2.clone()), g2k).with_coupling(
        CouplingFlags {
            // g1 reads u_c, which now lives in z2; g2 reads it too.
            sub1_reads_z2: m.coupling.sub1_reads_z2 || m.nu > 0,
            sub2_reads_z1: m.coupling.sub2_reads_z1,
        },
    );
    if m.names.len() == lifted.len() {
        dae.with_names(m.names.clone()).expect("name count checked")
    } else {
        dae
    }
}

/// Solution samples on a time grid.
#[derive(Clone, Debug, Default)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<State<T>>,
    /// Newton iterations spent producing the trajectory.
    pub newton_iterations: usize,
}

impl<T: Scalar> Trajectory<T> {
    pub fn single(s: State<T>) -> Self {
        Trajectory {
            times: vec![s.t],
            states: vec![s],
            newton_iterations: 0,
        }
    }

    pub fn push(&mut self, s: State<T>) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if s.t <= last {
                return Err(Error::GridMismatch(format!(
                    "time {} does not increase past {}",
                    s.t, last
                )));
            }
        }
        self.times.push(s.t);
        self.states.push(s);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&State<T>> {
        self.states.last()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn block(f: impl Fn(&State<f64>) -> Vec<f64> + Send + Sync + 'static) -> BlockFn<f64> {
        Arc::new(move |s| Vector::from_vec(f(s)))
    }

    /// One differential variable per side, one algebraic per side.
    fn two_by_two(
        g1: impl Fn(&State<f64>) -> Vec<f64> + Send + Sync + 'static,
        g2: impl Fn(&State<f64>) -> Vec<f64> + Send + Sync + 'static,
    ) -> CoupledDae<f64> {
        CoupledDae::new(
            Partition::new(1, 1, 1, 1).unwrap(),
            block(|_| vec![0.0]),
            block(g1),
            block(|_| vec![0.0]),
            block(g2),
        )
    }

    fn state(y1: f64, y2: f64, z1: f64, z2: f64) -> State<f64> {
        State::new(
            0.0,
            Vector::from_vec(vec![y1]),
            Vector::from_vec(vec![y2]),
            Vector::from_vec(vec![z1]),
            Vector::from_vec(vec![z2]),
        )
    }

    #[test]
    fn partition_rejects_empty_differential_part() {
        assert!(Partition::new(0, 0, 1, 0).is_err());
        assert_eq!(Partition::new(1, 2, 3, 4).unwrap().len(), 10);
    }

    #[test]
    fn jacobian_of_identities() {
        let dae = two_by_two(|s| vec![s.z1[0]], |s| vec![s.z2[0]]);
        let j = algebraic_jacobian(&dae, &state(0.3, 0.1, 0.7, -2.0), 1e-7).unwrap();
        assert!(j.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn jacobian_of_linear_residuals() {
        let dae = two_by_two(|s| vec![s.z1[0] + 2.0 * s.z2[0]], |s| vec![3.0 * s.z1[0] + s.z2[0]]);
        let j = algebraic_jacobian(&dae, &state(0.0, 0.0, 1.0, 1.0), 1e-7).unwrap();
        let expected = Matrix::from_f64_rows(&[&[1.0, 2.0], &[3.0, 1.0]]);
        assert!(j.sub(&expected).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn jacobian_of_square() {
        let p = Partition::new(1, 0, 1, 0).unwrap();
        let dae = CoupledDae::new(
            p,
            block(|_| vec![0.0]),
            block(|s| vec![s.z1[0] * s.z1[0]]),
            block(|_| vec![]),
            block(|_| vec![]),
        );
        let mut s = State::zeros(&p);
        s.z1[0] = 3.0;
        let j = algebraic_jacobian(&dae, &s, 1e-5).unwrap();
        assert!((j[(0, 0)] - 6.0).abs() < 1e-6);
        assert!(algebraic_jacobian(&dae, &s, 0.0).is_err());
    }

    #[test]
    fn jacobian_reports_non_finite_residuals() {
        let dae = two_by_two(|s| vec![s.z1[0].ln()], |s| vec![s.z2[0]]);
        let err = algebraic_jacobian(&dae, &state(0.0, 0.0, -1.0, 0.0), 1e-7).unwrap_err();
        assert!(matches!(err, Error::EvaluationFailure(_)));
    }

    #[test]
    fn index1_examples() {
        let dae = two_by_two(|s| vec![s.z1[0] - s.z2[0]], |s| vec![s.z1[0] - s.z2[0]]);
        let r = check_index1(&dae, &state(0.0, 0.0, 0.0, 0.0));
        assert!(!r.regular);
        assert!(r.condition_estimate.is_infinite());

        let ode = CoupledDae::ode(1, 0, block(|s| vec![-s.y1[0]]), block(|_| vec![])).unwrap();
        let r = check_index1(&ode, &State::zeros(&ode.partition()));
        assert!(r.regular);
        assert_eq!(r.condition_estimate, 1.0);

        let good = two_by_two(|s| vec![2.0 * s.z1[0]], |s| vec![s.z2[0]]);
        let r = check_index1(&good, &state(0.0, 0.0, 0.0, 0.0));
        assert!(r.regular);
        assert_relative_eq!(r.condition_estimate, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn index1_uses_analytic_hook() {
        let dae = two_by_two(|s| vec![s.z1[0]], |s| vec![s.z2[0]])
            .with_algebraic_jacobian(Arc::new(|_| Matrix::from_f64_rows(&[&[1.0, 1.0], &[1.0, 1.0]])));
        assert!(!check_index1(&dae, &state(0.0, 0.0, 0.0, 0.0)).regular);
    }

    #[test]
    fn consistent_init_explicit_constraint() {
        let p = Partition::new(1, 0, 1, 0).unwrap();
        let dae = CoupledDae::new(
            p,
            block(|_| vec![0.0]),
            block(|s| vec![s.z1[0] - s.y1[0] * s.y1[0]]),
            block(|_| vec![]),
            block(|_| vec![]),
        );
        let mut guess = State::zeros(&p);
        guess.y1[0] = 2.0;
        guess.z1[0] = 1.0;
        let s = consistent_init(&dae, &guess, 1e-12).unwrap();
        assert!((s.z1[0] - 4.0).abs() < 1e-12);
        assert_eq!(s.y1[0], 2.0);
    }

    #[test]
    fn consistent_init_linear_constraints() {
        let dae = two_by_two(|s| vec![2.0 * s.z1[0] - 2.0], |s| vec![4.0 * s.z2[0] - 4.0]);
        let s = consistent_init(&dae, &state(0.0, 0.0, 0.0, 0.0), 1e-12).unwrap();
        assert!((s.z1[0] - 1.0).abs() < 1e-12 && (s.z2[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn consistent_init_without_solution_diverges() {
        let dae = two_by_two(|s| vec![s.z1[0] * s.z1[0] + 1.0], |s| vec![s.z2[0]]);
        let err = consistent_init(&dae, &state(0.0, 0.0, 1.0, 0.0), 1e-12).unwrap_err();
        assert!(matches!(err, Error::NewtonDivergence { .. }));
    }

    #[test]
    fn reduce_pure_ode_and_identity_constraint() {
        let ode = CoupledDae::ode(1, 1, block(|s| vec![-s.y1[0]]), block(|s| vec![s.y1[0]])).unwrap();
        let mut s = State::zeros(&ode.partition());
        s.y1[0] = 3.0;
        let (a, b) = reduce_to_ode(&ode, &s).unwrap();
        assert_eq!((a[0], b[0]), (-3.0, 3.0));

        let p = Partition::new(1, 0, 1, 0).unwrap();
        let dae = CoupledDae::new(
            p,
            block(|s| vec![s.z1[0]]),
            block(|s| vec![s.z1[0] - s.y1[0]]),
            block(|_| vec![]),
            block(|_| vec![]),
        );
        let mut s = State::zeros(&p);
        s.y1[0] = 1.5;
        let (a, _) = reduce_to_ode(&dae, &s).unwrap();
        assert!((a[0] - 1.5).abs() < 1e-12);
    }

    /// Linear model y' = A y + B z, 0 = C y + D z: the reduced Jacobian is the
    /// Schur complement A − B D⁻¹ C.
    #[test]
    fn reduced_ode_derivative_is_schur_complement() {
        let a = Matrix::from_f64_rows(&[&[0.5, -1.0], &[2.0, 0.1]]);
        let b = Matrix::from_f64_rows(&[&[1.0, 0.0], &[0.3, -2.0]]);
        let c = Matrix::from_f64_rows(&[&[1.0, 2.0], &[-1.0, 0.5]]);
        let d = Matrix::from_f64_rows(&[&[3.0, 1.0], &[-1.0, 2.0]]);
        let (a1, b1, c1, d1) = (a.clone(), b.clone(), c.clone(), d.clone());
        let f = move |s: &State<f64>, row: usize| {
            a1.row(row).iter().zip(s.y().iter()).map(|(p, q)| p * q).sum::<f64>()
                + b1.row(row).iter().zip(s.z().iter()).map(|(p, q)| p * q).sum::<f64>()
        };
        let g = move |s: &State<f64>, row: usize| {
            c1.row(row).iter().zip(s.y().iter()).map(|(p, q)| p * q).sum::<f64>()
                + d1.row(row).iter().zip(s.z().iter()).map(|(p, q)| p * q).sum::<f64>()
        };
        let (fa, fb, ga, gb) = (f.clone(), f, g.clone(), g);
        let dae = CoupledDae::new(
            Partition::new(1, 1, 1, 1).unwrap(),
            block(move |s| vec![fa(s, 0)]),
            block(move |s| vec![ga(s, 0)]),
            block(move |s| vec![fb(s, 1)]),
            block(move |s| vec![gb(s, 1)]),
        );
        let dinv = LuFactor::new(&d).unwrap().inverse();
        let schur = a.sub(&b.matmul(&dinv).unwrap().matmul(&c).unwrap()).unwrap();
        let y0 = [0.4, -0.7];
        let h = 1e-5;
        for j in 0..2 {
            let mut yp = y0;
            let mut ym = y0;
            yp[j] += h;
            ym[j] -= h;
            let sp = State::from_stacked(&dae.partition(), 0.0, &yp, &[0.0, 0.0]).unwrap();
            let sm = State::from_stacked(&dae.partition(), 0.0, &ym, &[0.0, 0.0]).unwrap();
            let (p1, p2) = reduce_to_ode(&dae, &sp).unwrap();
            let (m1, m2) = reduce_to_ode(&dae, &sm).unwrap();
            let col = [(p1[0] - m1[0]) / (2.0 * h), (p2[0] - m2[0]) / (2.0 * h)];
            for i in 0..2 {
                assert!((col[i] - schur[(i, j)]).abs() < 1e-6, "entry ({i},{j})");
            }
        }
    }

    fn constrained_toy(nu: usize) -> CoupledDaeWithConstraint<f64> {
        let cf = |f: fn(&State<f64>, &[f64]) -> Vec<f64>| -> ConstrainedFn<f64> {
            Arc::new(move |s, u| Vector::from_vec(f(s, u)))
        };
        CoupledDaeWithConstraint {
            partition: Partition::new(1, 1, 1, 1).unwrap(),
            nu,
            f1: cf(|s, _| vec![s.z1[0] - s.y1[0]]),
            g1: if nu == 0 {
                cf(|s, _| vec![s.z1[0] - s.y2[0]])
            } else {
                cf(|s, u| vec![s.z1[0] - s.y2[0] + u[0]])
            },
            f2: cf(|s, _| vec![-s.z2[0]]),
            g2: if nu == 0 {
                cf(|s, _| vec![s.z2[0] - s.y1[0]])
            } else {
                cf(|s, u| vec![s.z2[0] - s.y1[0] - u[0]])
            },
            k: if nu == 0 {
                cf(|_, _| vec![])
            } else {
                cf(|s, _| vec![s.z1[0] - s.z2[0]])
            },
            coupling: CouplingFlags::default(),
            names: vec![],
        }
    }

    #[test]
    fn lift_with_no_coupling_variable_is_identity() {
        let m = constrained_toy(0);
        let lifted = lift_constraint_model(&m);
        assert_eq!(lifted.partition(), m.partition);
        let s = state(0.3, -0.2, 1.1, 0.7);
        let expected = Vector::concat(&[&(m.f1)(&s, &[]), &(m.g1)(&s, &[]), &(m.f2)(&s, &[]), &(m.g2)(&s, &[])]);
        assert_eq!(lifted.stacked_rhs(&s).unwrap(), expected);
    }

    #[test]
    fn lift_appends_coupling_to_side_two() {
        let m = constrained_toy(1);
        let lifted = lift_constraint_model(&m);
        let p = lifted.partition();
        assert_eq!((p.nz1, p.nz2), (1, 2));
        let s = lifted_state(0.3, -0.2, 1.1, 0.7, 0.25);
        let j = algebraic_jacobian(&lifted, &s, 1e-7).unwrap();
        assert_eq!((j.rows(), j.cols()), (3, 3));
        let orig = state(0.3, -0.2, 1.1, 0.7);
        let expected = m.constraint_residual(&orig, &[0.25]);
        assert_eq!(lifted.algebraic_residual(&s).unwrap(), expected);
    }

    fn lifted_state(y1: f64, y2: f64, z1: f64, z2: f64, u: f64) -> State<f64> {
        State::new(
            0.0,
            Vector::from_vec(vec![y1]),
            Vector::from_vec(vec![y2]),
            Vector::from_vec(vec![z1]),
            Vector::from_vec(vec![z2, u]),
        )
    }

    #[test]
    fn trajectory_requires_increasing_times() {
        let p = Partition::new(1, 0, 0, 0).unwrap();
        let mut traj = Trajectory::single(State::<f64>::zeros(&p));
        assert!(traj.push(State::zeros(&p)).is_err());
        assert!(traj.push(State::zeros(&p).with_time(0.5)).is_ok());
        assert_eq!(traj.len(), 2);
    }

    proptest! {
        #[test]
        fn consistent_init_meets_tolerance(y1 in -3.0f64..3.0, y2 in -3.0f64..3.0) {
            let dae = two_by_two(
                |s| vec![s.z1[0] + 0.1 * s.z1[0].powi(3) - s.y1[0] - s.z2[0]],
                |s| vec![2.0 * s.z2[0] - s.y2[0] * s.y1[0]],
            );
            let s = consistent_init(&dae, &state(y1, y2, 0.0, 0.0), 1e-12).unwrap();
            prop_assert!(dae.algebraic_residual(&s).unwrap().norm_inf() <= 1e-12);
        }

        #[test]
        fn lifted_residuals_match_original(y1 in -2.0f64..2.0, y2 in -2.0f64..2.0, z1 in -2.0f64..2.0, z2 in -2.0f64..2.0, u in -2.0f64..2.0) {
            let m = constrained_toy(1);
            let lifted = lift_constraint_model(&m);
            let s = lifted_state(y1, y2, z1, z2, u);
            let orig = state(y1, y2, z1, z2);
            prop_assert_eq!(lifted.f1(&s).unwrap(), (m.f1)(&orig, &[u]));
            prop_assert_eq!(lifted.f2(&s).unwrap(), (m.f2)(&orig, &[u]));
            prop_assert_eq!(lifted.algebraic_residual(&s).unwrap(), m.constraint_residual(&orig, &[u]));
        }

        #[test]
        fn index1_agrees_with_lu(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
            // Second row is a multiple of the first when c == 0.
            let dae = two_by_two(
                move |s| vec![a * s.z1[0] + b * s.z2[0]],
                move |s| vec![2.0 * a * s.z1[0] + (2.0 * b + c) * s.z2[0]],
            );
            let s = state(0.0, 0.0, 0.0, 0.0);
            let jac = algebraic_jacobian(&dae, &s, crate::newton::default_fd_step()).unwrap();
            prop_assert_eq!(check_index1(&dae, &s).regular, LuFactor::new(&jac).is_ok());
        }
    }
}
