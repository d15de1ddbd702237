//! Linear port-Hamiltonian descriptor systems
//!
//! ```text
//! E x' = (J - R) Q x + B u(t),    y = Bᵀ Q x,    H(x) = ½ xᵀ Qᵀ E x
//! ```
//!
//! with the regularization `E_ε = E + εI`, the conservative / dissipative
//! split `E_ε x' = J Q x` and `E_ε x' = -R Q x + B u`, and per-step energy
//! audits.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::integrators::{grid_time, uniform_steps, IntegratorKind, StepConfig};
use crate::linalg::{dot, quadratic_form, symmetry_and_min_eigenvalue, LuFactor, Matrix, Vector, PSD_TOLERANCE};
use crate::models::InputSignal;
use crate::scalar::Scalar;

/// Relative tolerance of the equality conditions (`EᵀQ = QᵀE`, `J = -Jᵀ`).
pub const STRUCTURE_TOLERANCE: f64 = 1e-12;

/// Port-Hamiltonian DAE with constant matrices.
#[derive(Clone, Debug)]
pub struct PhsDae<T> {
    pub e: Matrix<T>,
    pub j: Matrix<T>,
    pub r: Matrix<T>,
    pub q: Matrix<T>,
    pub b: Matrix<T>,
    pub input: InputSignal<T>,
}

/// Outcome of one structural condition.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Measured violation; zero when the condition holds exactly.
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureReport {
    pub checks: Vec<StructureCheck>,
}

impl StructureReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &StructureCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// `Err(StructureViolation)` naming every failed condition.
    pub fn into_result(self) -> Result<()> {
        if self.all_passed() {
            return Ok(());
        }
        let msg: Vec<String> = self
            .failures()
            .map(|c| format!("{} (violation {:.3e})", c.name, c.violation))
            .collect();
        Err(Error::StructureViolation(msg.join("; ")))
    }
}

impl fmt::Display for StructureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<36} {} (violation {:.3e})",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.violation
            )?;
        }
        Ok(())
    }
}

impl<T: Scalar> PhsDae<T> {
    /// Checks dimensions only; see [`PhsDae::checked`].
    pub fn new(
        e: Matrix<T>,
        j: Matrix<T>,
        r: Matrix<T>,
        q: Matrix<T>,
        b: Matrix<T>,
        input: InputSignal<T>,
    ) -> Result<Self> {
        let n = e.rows();
        for (name, m) in [("E", &e), ("J", &j), ("R", &r), ("Q", &q)] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if b.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, expected {n}",
                b.rows()
            )));
        }
        for (name, m) in [("E", &e), ("J", &j), ("R", &r), ("Q", &q), ("B", &b)] {
            if m.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(PhsDae { e, j, r, q, b, input })
    }

    /// [`PhsDae::new`] followed by the structural conditions.
    pub fn checked(
        e: Matrix<T>,
        j: Matrix<T>,
        r: Matrix<T>,
        q: Matrix<T>,
        b: Matrix<T>,
        input: InputSignal<T>,
    ) -> Result<Self> {
        let p = Self::new(e, j, r, q, b, input)?;
        p.validate_structure().into_result()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.e.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn with_input(self, input: InputSignal<T>) -> Self {
        PhsDae { input, ..self }
    }

    pub fn validate_structure(&self) -> StructureReport {
        validate_structure(self)
    }

    /// `½ xᵀ Qᵀ E x`
    pub fn hamiltonian(&self, x: &[T]) -> Result<T> {
        energy(&self.q, &self.e, x)
    }

    /// `Bᵀ Q x`
    pub fn output(&self, x: &[T]) -> Result<Vector<T>> {
        self.b.transpose().matvec(&self.q.matvec(x)?)
    }

    pub fn input_at(&self, t: T) -> Vector<T> {
        self.input.eval(t, self.m())
    }

    /// `(J - R) Q`
    pub fn system_matrix(&self) -> Matrix<T> {
        self.j
            .sub(&self.r)
            .and_then(|a| a.matmul(&self.q))
            .expect("dimensions checked at construction")
    }

    /// Indices of the zero rows of `E`.
    pub fn algebraic_rows(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.e.row(i).iter().all(|v| *v == T::zero()))
            .collect()
    }

    /// Solves the algebraic rows of `E x' = (J-R)Qx + Bu(t)` for the states
    /// whose columns of `E` vanish, keeping the remaining entries of `x`.
    pub fn consistent_state(&self, x: &[T], t: T) -> Result<Vector<T>> {
        let n = self.n();
        if x.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "state of length {} for n = {n}",
                x.len()
            )));
        }
        let rows = self.algebraic_rows();
        let cols: Vec<usize> = (0..n)
            .filter(|&j| (0..n).all(|i| self.e[(i, j)] == T::zero()))
            .collect();
        if rows.len() != cols.len() {
            return Err(Error::InvalidArgument(format!(
                "{} zero rows but {} zero columns in E; cannot separate algebraic states",
                rows.len(),
                cols.len()
            )));
        }
        let mut out = Vector::from_vec(x.to_vec());
        if rows.is_empty() {
            return Ok(out);
        }
        let a = self.system_matrix();
        let mut xd = x.to_vec();
        for &c in &cols {
            xd[c] = T::zero();
        }
        let rhs_full = a.matvec(&xd)?.add(&self.b.matvec(&self.input_at(t))?);
        let rhs: Vec<T> = rows.iter().map(|&i| -rhs_full[i]).collect();
        let xa = LuFactor::new(&a.select(&rows, &cols))?.solve(&rhs)?;
        for (k, &c) in cols.iter().enumerate() {
            out[c] = xa[k];
        }
        Ok(out)
    }
}

fn energy<T: Scalar>(q: &Matrix<T>, e: &Matrix<T>, x: &[T]) -> Result<T> {
    if x.len() != e.rows() {
        return Err(Error::DimensionMismatch(format!(
            "state of length {} for n = {}",
            x.len(),
            e.rows()
        )));
    }
    Ok(T::lit(0.5) * dot(&q.matvec(x)?, &e.matvec(x)?))
}

/// Checks `EᵀQ = QᵀE`, `J = -Jᵀ`, `R = Rᵀ ≥ 0` and `Q = Qᵀ > 0`.
pub fn validate_structure<T: Scalar>(p: &PhsDae<T>) -> StructureReport {
    let scale = |x: T| T::one().max(x);
    let tol = T::lit(STRUCTURE_TOLERANCE);
    let mut checks = Vec::with_capacity(4);

    let etq = p.e.transpose().matmul(&p.q).expect("square");
    let sym = etq.sub(&etq.transpose()).expect("square").norm_inf();
    checks.push(StructureCheck {
        name: "E^T Q symmetry",
        passed: sym <= tol * scale(p.e.norm_inf() * p.q.norm_inf()),
        violation: sym.as_f64(),
    });

    let skew = p.j.add(&p.j.transpose()).expect("square").norm_inf();
    checks.push(StructureCheck {
        name: "J skew-symmetry",
        passed: skew <= tol * scale(p.j.norm_inf()),
        violation: skew.as_f64(),
    });

    let (r_asym, r_min) = symmetry_and_min_eigenvalue(&p.r).expect("square");
    let r_scale = scale(p.r.max_abs());
    checks.push(StructureCheck {
        name: "R symmetric positive semidefinite",
        passed: r_asym <= tol * r_scale && r_min >= -T::lit(PSD_TOLERANCE) * r_scale,
        violation: r_asym.max(-r_min).max(T::zero()).as_f64(),
    });

    let (q_asym, q_min) = symmetry_and_min_eigenvalue(&p.q).expect("square");
    checks.push(StructureCheck {
        name: "Q symmetric positive definite",
        passed: q_asym <= tol * scale(p.q.max_abs()) && q_min > T::zero(),
        violation: q_asym.max(-q_min).max(T::zero()).as_f64(),
    });

    StructureReport { checks }
}

/// Right-hand side family of the split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// `E_ε x' = J Q x`
    Conservative,
    /// `E_ε x' = -R Q x + B u(t)`
    Dissipative,
    /// `E_ε x' = (J - R) Q x + B u(t)`
    Full,
}

/// PHS with `E` replaced by `E_ε = E + εI`, in explicit ODE form.
#[derive(Clone, Debug)]
pub struct RegularizedPhs<T> {
    base: PhsDae<T>,
    epsilon: T,
    e_eps: Matrix<T>,
    /// `E_ε⁻¹ J Q`
    conservative: Matrix<T>,
    /// `-E_ε⁻¹ R Q`
    dissipative: Matrix<T>,
    /// `E_ε⁻¹ B`
    input_map: Matrix<T>,
    /// `‖E_εᵀQ - QᵀE_ε‖_∞`
    symmetry_violation: T,
}

/// `E_ε = E + εI`, factorized once.
pub fn regularize<T: Scalar>(p: &PhsDae<T>, epsilon: T) -> Result<RegularizedPhs<T>> {
    if !(epsilon > T::zero()) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    RegularizedPhs::build(p, epsilon)
}

impl<T: Scalar> RegularizedPhs<T> {
    /// Uses `E` itself (`ε = 0`); requires a nonsingular `E`.
    pub fn from_regular(p: &PhsDae<T>) -> Result<Self> {
        Self::build(p, T::zero())
    }

    fn build(p: &PhsDae<T>, epsilon: T) -> Result<Self> {
        let n = p.n();
        let e_eps = p.e.add(&Matrix::identity(n).scaled(epsilon))?;
        let lu = LuFactor::new(&e_eps).map_err(|_| Error::StillSingular {
            epsilon: epsilon.as_f64(),
        })?;
        let conservative = lu.solve_matrix(&p.j.matmul(&p.q)?)?;
        let dissipative = lu.solve_matrix(&p.r.matmul(&p.q)?)?.scaled(-T::one());
        let input_map = lu.solve_matrix(&p.b)?;
        let etq = e_eps.transpose().matmul(&p.q)?;
        let symmetry_violation = etq.sub(&etq.transpose())?.norm_inf();
        Ok(RegularizedPhs {
            base: p.clone(),
            epsilon,
            e_eps,
            conservative,
            dissipative,
            input_map,
            symmetry_violation,
        })
    }

    pub fn base(&self) -> &PhsDae<T> {
        &self.base
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn e_eps(&self) -> &Matrix<T> {
        &self.e_eps
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn symmetry_violation(&self) -> T {
        self.symmetry_violation
    }

    /// `½ xᵀ Qᵀ E_ε x`
    pub fn hamiltonian(&self, x: &[T]) -> Result<T> {
        energy(&self.base.q, &self.e_eps, x)
    }

    pub fn output(&self, x: &[T]) -> Result<Vector<T>> {
        self.base.output(x)
    }

    /// Linear part of the stage right-hand side.
    pub fn stage_matrix(&self, stage: Stage) -> Matrix<T> {
        match stage {
            Stage::Conservative => self.conservative.clone(),
            Stage::Dissipative => self.dissipative.clone(),
            Stage::Full => self.conservative.add(&self.dissipative).expect("same shape"),
        }
    }

    fn forcing(&self, stage: Stage, t: T) -> Result<Option<Vector<T>>> {
        if stage == Stage::Conservative || self.base.input.is_zero() {
            return Ok(None);
        }
        Ok(Some(self.input_map.matvec(&self.base.input_at(t))?))
    }

    fn rhs(&self, stage: Stage, x: &[T], t: T) -> Result<Vector<T>> {
        let mut v = match stage {
            Stage::Conservative => self.conservative.matvec(x)?,
            Stage::Dissipative => self.dissipative.matvec(x)?,
            Stage::Full => self.conservative.matvec(x)?.add(&self.dissipative.matvec(x)?),
        };
        if let Some(f) = self.forcing(stage, t)? {
            v = v.add(&f);
        }
        Ok(v)
    }

    /// `E_ε⁻¹ J Q x`
    pub fn conservative_rhs(&self, x: &[T], t: T) -> Result<Vector<T>> {
        self.rhs(Stage::Conservative, x, t)
    }

    /// `E_ε⁻¹ (-R Q x + B u(t))`
    pub fn dissipative_rhs(&self, x: &[T], t: T) -> Result<Vector<T>> {
        self.rhs(Stage::Dissipative, x, t)
    }

    /// `E_ε⁻¹ ((J - R) Q x + B u(t))`
    pub fn full_rhs(&self, x: &[T], t: T) -> Result<Vector<T>> {
        self.rhs(Stage::Full, x, t)
    }
}

/// Composition used to advance a PHS.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhsScheme {
    /// One step of the unsplit system.
    Monolithic,
    /// Conservative for `h`, then dissipative for `h`.
    LieTrotter,
    /// Conservative `h/2`, dissipative `h`, conservative `h/2`.
    Strang,
}

impl PhsScheme {
    pub fn name(self) -> &'static str {
        match self {
            PhsScheme::Monolithic => "monolithic",
            PhsScheme::LieTrotter => "lie",
            PhsScheme::Strang => "strang",
        }
    }
}

impl FromStr for PhsScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "monolithic" | "none" => Ok(PhsScheme::Monolithic),
            "lie" | "lie-trotter" | "lie_trotter" => Ok(PhsScheme::LieTrotter),
            "strang" => Ok(PhsScheme::Strang),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Energy bookkeeping over one macro step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyAudit<T> {
    pub t_start: T,
    pub t_end: T,
    pub h_start: T,
    pub h_end: T,
    /// Trapezoidal quadrature of `yᵀu` over the step.
    pub supplied: T,
    /// `supplied - (h_end - h_start)`; nonnegative for a dissipative step.
    pub slack: T,
    /// `(ε/2) |x_endᵀ Q x_end - x_startᵀ Q x_start|`
    pub eps_term: T,
    /// `(ε/2) |‖x_end‖_Q - ‖x_start‖_Q|`
    pub eps_term_norm: T,
}

impl<T: Scalar> EnergyAudit<T> {
    fn new(t: (T, T), h: (T, T), supplied: T, eps: T, qf: (T, T)) -> Self {
        let half = T::lit(0.5) * eps;
        EnergyAudit {
            t_start: t.0,
            t_end: t.1,
            h_start: h.0,
            h_end: h.1,
            supplied,
            slack: supplied - (h.1 - h.0),
            eps_term: half * (qf.1 - qf.0).abs(),
            eps_term_norm: half * (qf.1.max(T::zero()).sqrt() - qf.0.max(T::zero()).sqrt()).abs(),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.h_start, self.h_end, self.supplied, self.slack, self.eps_term]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Result of one PHS macro step.
#[derive(Clone, Debug)]
pub struct PhsStepResult<T> {
    pub x_next: Vector<T>,
    pub audit: EnergyAudit<T>,
    /// `(t, y)` at the nodes of the stage that carries the input.
    pub stage_outputs: Vec<(T, Vector<T>)>,
}

/// Exact solve of one implicit step of `x' = A x + f(t)` with fixed size.
#[derive(Clone, Debug)]
struct LinearStep<T> {
    stage: Stage,
    h: T,
    /// Forcing evaluation offset within the step.
    offset: T,
    lhs: LuFactor<T>,
    rhs: Matrix<T>,
}

impl<T: Scalar> LinearStep<T> {
    fn new(p: &RegularizedPhs<T>, stage: Stage, kind: IntegratorKind, h: T) -> Result<Self> {
        let a = p.stage_matrix(stage);
        let id = Matrix::identity(p.n());
        let (theta, offset) = match kind {
            IntegratorKind::ImplicitEuler => (T::one(), h),
            IntegratorKind::ImplicitMidpoint => (T::lit(0.5), T::lit(0.5) * h),
        };
        let lhs = LuFactor::new(&id.sub(&a.scaled(theta * h))?)?;
        let rhs = id.add(&a.scaled((T::one() - theta) * h))?;
        Ok(LinearStep {
            stage,
            h,
            offset,
            lhs,
            rhs,
        })
    }

    fn apply(&self, p: &RegularizedPhs<T>, x: &[T], t: T) -> Result<Vector<T>> {
        let mut b = self.rhs.matvec(x)?;
        if let Some(f) = p.forcing(self.stage, t + self.offset)? {
            b = b.axpy(self.h, &f);
        }
        let next = self.lhs.solve(&b)?;
        if !next.is_finite() {
            return Err(Error::EvaluationFailure(format!("non-finite state at t = {t}")));
        }
        Ok(next)
    }
}

/// Precomputed stage solvers for a fixed model, scheme and step size.
#[derive(Clone, Debug)]
pub struct PhsStepper<'a, T> {
    model: &'a RegularizedPhs<T>,
    scheme: PhsScheme,
    h: T,
    substeps: usize,
    /// (stage, inner step) pairs in application order.
    plan: Vec<(LinearStep<T>, T)>,
}

impl<'a, T: Scalar> PhsStepper<'a, T> {
    pub fn new(
        model: &'a RegularizedPhs<T>,
        scheme: PhsScheme,
        kind: IntegratorKind,
        cfg: &StepConfig<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.h;
        let k = T::from_usize_lossy(cfg.substeps);
        let half = T::lit(0.5) * h;
        let stages: Vec<(Stage, T)> = match scheme {
            PhsScheme::Monolithic => vec![(Stage::Full, h)],
            PhsScheme::LieTrotter => vec![(Stage::Conservative, h), (Stage::Dissipative, h)],
            PhsScheme::Strang => vec![
                (Stage::Conservative, half),
                (Stage::Dissipative, h),
                (Stage::Conservative, half),
            ],
        };
        let mut plan: Vec<(LinearStep<T>, T)> = Vec::with_capacity(stages.len());
        for (stage, span) in stages {
            // The two conservative Strang stages share one factorization.
            if let Some((existing, _)) = plan.iter().find(|(s, sp)| s.stage == stage && *sp == span) {
                let copy = existing.clone();
                plan.push((copy, span));
                continue;
            }
            plan.push((LinearStep::new(model, stage, kind, span / k)?, span));
        }
        Ok(PhsStepper {
            model,
            scheme,
            h,
            substeps: cfg.substeps,
            plan,
        })
    }

    pub fn h(&self) -> T {
        self.h
    }

    /// Runs one stage from `t0`; returns the end state and the visited nodes.
    fn run(&self, idx: usize, x: &Vector<T>, t0: T, record: bool) -> Result<(Vector<T>, Vec<(T, Vector<T>)>)> {
        let (step, _) = &self.plan[idx];
        let mut cur = x.clone();
        let mut nodes = Vec::new();
        if record {
            nodes.push((t0, cur.clone()));
        }
        for i in 0..self.substeps {
            let t = t0 + T::from_usize_lossy(i) * step.h;
            cur = step.apply(self.model, &cur, t)?;
            if record {
                nodes.push((t0 + T::from_usize_lossy(i + 1) * step.h, cur.clone()));
            }
        }
        Ok((cur, nodes))
    }

    /// One macro step from `(t, x)`.
    pub fn step(&self, x: &[T], t: T) -> Result<PhsStepResult<T>> {
        let x0 = Vector::from_vec(x.to_vec());
        let (x_next, nodes) = match self.scheme {
            PhsScheme::Monolithic => self.run(0, &x0, t, true)?,
            PhsScheme::LieTrotter => {
                let (z, _) = self.run(0, &x0, t, false)?;
                self.run(1, &z, t, true)?
            }
            PhsScheme::Strang => {
                let (z, _) = self.run(0, &x0, t, false)?;
                let (v, nodes) = self.run(1, &z, t, true)?;
                let (w, _) = self.run(2, &v, t + T::lit(0.5) * self.h, false)?;
                (w, nodes)
            }
        };
        let p = self.model;
        let m = p.base.m();
        let mut stage_outputs = Vec::with_capacity(nodes.len());
        let mut power = Vec::with_capacity(nodes.len());
        for (tn, xn) in &nodes {
            let y = p.output(xn)?;
            power.push(dot(&y, &p.base.input.eval(*tn, m)));
            stage_outputs.push((*tn, y));
        }
        let mut supplied = T::zero();
        for i in 1..nodes.len() {
            supplied += T::lit(0.5) * (nodes[i].0 - nodes[i - 1].0) * (power[i] + power[i - 1]);
        }
        let q = &p.base.q;
        let audit = EnergyAudit::new(
            (t, t + self.h),
            (p.hamiltonian(&x0)?, p.hamiltonian(&x_next)?),
            supplied,
            p.epsilon,
            (quadratic_form(&x0, q)?, quadratic_form(&x_next, q)?),
        );
        Ok(PhsStepResult {
            x_next,
            audit,
            stage_outputs,
        })
    }
}

/// Conservative `h/2`, dissipative `h`, conservative `h/2`.
pub fn phs_strang_step<T: Scalar>(
    p: &RegularizedPhs<T>,
    x: &[T],
    t: T,
    kind: IntegratorKind,
    cfg: &StepConfig<T>,
) -> Result<PhsStepResult<T>> {
    PhsStepper::new(p, PhsScheme::Strang, kind, cfg)?.step(x, t)
}

/// Conservative `h`, then dissipative `h`.
pub fn phs_lie_step<T: Scalar>(
    p: &RegularizedPhs<T>,
    x: &[T],
    t: T,
    kind: IntegratorKind,
    cfg: &StepConfig<T>,
) -> Result<PhsStepResult<T>> {
    PhsStepper::new(p, PhsScheme::LieTrotter, kind, cfg)?.step(x, t)
}

/// Trajectory of a PHS integration.
#[derive(Clone, Debug, Default)]
pub struct PhsTrajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Vector<T>>,
    /// `y = BᵀQx` at every grid point.
    pub outputs: Vec<Vector<T>>,
    /// Hamiltonian of the integrated model (`H_ε` on the regularized path).
    pub energies: Vec<T>,
    /// `xᵀQx` at every grid point.
    pub quad_forms: Vec<T>,
    /// Supplied energy per step as computed by the integrator; empty when
    /// unknown.
    pub supplied: Vec<T>,
    /// Regularization used; zero for the direct solve.
    pub epsilon: T,
}

impl<T: Scalar> PhsTrajectory<T> {
    fn start(epsilon: T) -> Self {
        PhsTrajectory {
            epsilon,
            ..Default::default()
        }
    }

    fn record(&mut self, base: &PhsDae<T>, h_fn: impl Fn(&[T]) -> Result<T>, t: T, x: Vector<T>) -> Result<()> {
        self.outputs.push(base.output(&x)?);
        self.energies.push(h_fn(&x)?);
        self.quad_forms.push(quadratic_form(&x, &base.q)?);
        self.times.push(t);
        self.states.push(x);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&Vector<T>> {
        self.states.last()
    }
}

/// Uniform-grid integration of the regularized model.
pub fn phs_integrate<T: Scalar>(
    p: &RegularizedPhs<T>,
    x0: &[T],
    t0: T,
    t_end: T,
    scheme: PhsScheme,
    kind: IntegratorKind,
    cfg: &StepConfig<T>,
) -> Result<PhsTrajectory<T>> {
    if x0.len() != p.n() {
        return Err(Error::DimensionMismatch(format!(
            "state of length {} for n = {}",
            x0.len(),
            p.n()
        )));
    }
    let stepper = PhsStepper::new(p, scheme, kind, cfg)?;
    let n = uniform_steps(t_end - t0, cfg.h)?;
    let mut traj = PhsTrajectory::start(p.epsilon);
    let h_fn = |x: &[T]| p.hamiltonian(x);
    traj.record(&p.base, h_fn, t0, Vector::from_vec(x0.to_vec()))?;
    let mut x = Vector::from_vec(x0.to_vec());
    for k in 1..=n {
        let t = grid_time(t0, t_end, cfg.h, k - 1, n);
        let step = stepper.step(&x, t)?;
        traj.supplied.push(step.audit.supplied);
        x = step.x_next;
        traj.record(&p.base, h_fn, grid_time(t0, t_end, cfg.h, k, n), x.clone())?;
    }
    Ok(traj)
}

/// Implicit Euler on the unregularized descriptor system,
/// `(E - h(J-R)Q) x₊ = E x + h B u(t + h)`.
pub fn direct_implicit_euler<T: Scalar>(p: &PhsDae<T>, x0: &[T], t0: T, t_end: T, h: T) -> Result<PhsTrajectory<T>> {
    StepConfig::new(h).validate()?;
    if x0.len() != p.n() {
        return Err(Error::DimensionMismatch(format!(
            "state of length {} for n = {}",
            x0.len(),
            p.n()
        )));
    }
    let lu = LuFactor::new(&p.e.sub(&p.system_matrix().scaled(h))?)?;
    let n = uniform_steps(t_end - t0, h)?;
    let mut traj = PhsTrajectory::start(T::zero());
    let h_fn = |x: &[T]| p.hamiltonian(x);
    let mut x = Vector::from_vec(x0.to_vec());
    traj.record(p, h_fn, t0, x.clone())?;
    for k in 1..=n {
        let t_next = grid_time(t0, t_end, h, k, n);
        let mut rhs = p.e.matvec(&x)?;
        if !p.input.is_zero() {
            rhs = rhs.axpy(h, &p.b.matvec(&p.input_at(t_next))?);
        }
        x = lu.solve(&rhs)?;
        if !x.is_finite() {
            return Err(Error::EvaluationFailure(format!("non-finite state at t = {t_next}")));
        }
        traj.record(p, h_fn, t_next, x.clone())?;
    }
    Ok(traj)
}

/// Quadrature rule for `∫ yᵀu`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Quadrature {
    #[default]
    Trapezoid,
}

/// Per-step audits and the overall verdict of [`dissipativity_check`].
#[derive(Clone, Debug)]
pub struct DissipativityReport<T> {
    pub audits: Vec<EnergyAudit<T>>,
    /// Slack below `-tolerance` fails the check.
    pub tolerance: T,
    /// Quadrature-error part of `tolerance`.
    pub allowance: T,
    pub passed: bool,
}

impl<T: Scalar> DissipativityReport<T> {
    pub fn worst_slack(&self) -> Option<T> {
        self.audits.iter().map(|a| a.slack).reduce(T::min)
    }

    /// Index of the first failing step.
    pub fn first_failure(&self) -> Option<usize> {
        self.audits.iter().position(|a| !(a.slack >= -self.tolerance))
    }
}

/// Audits `H(t_{k+1}) - H(t_k) ≤ ∫ yᵀu` on every step of `traj`.
///
/// The supplied energy is taken from the integrator's stage quadrature when
/// recorded, otherwise from the trapezoid rule on the trajectory outputs.
/// The tolerance is `10·newton_tol` plus the allowance `h·max|Δ²(yᵀu)|/4`
/// for the trapezoid error.
pub fn dissipativity_check<T: Scalar>(
    traj: &PhsTrajectory<T>,
    input: &InputSignal<T>,
    quadrature: Quadrature,
    newton_tol: T,
) -> Result<DissipativityReport<T>> {
    let Quadrature::Trapezoid = quadrature;
    let n = traj.states.len();
    if traj.outputs.len() != n || traj.energies.len() != n || n == 0 {
        return Err(Error::MissingOutputs);
    }
    let power: Vec<T> = traj
        .outputs
        .iter()
        .zip(&traj.times)
        .map(|(y, &t)| dot(y, &input.eval(t, y.len())))
        .collect();
    let mut allowance = T::zero();
    for k in 1..n.saturating_sub(1) {
        let h = traj.times[k + 1] - traj.times[k - 1];
        let d2 = (power[k + 1] - T::lit(2.0) * power[k] + power[k - 1]).abs();
        allowance = allowance.max(T::lit(0.125) * h * d2);
    }
    let use_recorded = traj.supplied.len() + 1 == n;
    let mut audits = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n.saturating_sub(1) {
        let (t0, t1) = (traj.times[k], traj.times[k + 1]);
        let supplied = if use_recorded {
            traj.supplied[k]
        } else {
            T::lit(0.5) * (t1 - t0) * (power[k] + power[k + 1])
        };
        let qf = if traj.quad_forms.len() == n {
            (traj.quad_forms[k], traj.quad_forms[k + 1])
        } else {
            (T::zero(), T::zero())
        };
        audits.push(EnergyAudit::new(
            (t0, t1),
            (traj.energies[k], traj.energies[k + 1]),
            supplied,
            traj.epsilon,
            qf,
        ));
    }
    let tolerance = T::lit(10.0) * newton_tol + allowance;
    let passed = audits.iter().all(|a| a.slack >= -tolerance);
    Ok(DissipativityReport {
        audits,
        tolerance,
        allowance,
        passed,
    })
}

/// Both sides of `H(x(t+h)) - H(x(t)) ≤ ∫yᵀu + ε-term` for one step, with
/// the unregularized `H` evaluated on a regularized trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbedBoundStep<T> {
    pub t_start: T,
    pub t_end: T,
    /// `H(x_end) - H(x_start)`
    pub energy_change: T,
    pub supplied: T,
    /// `(ε/2)|Δ xᵀQx|`
    pub eps_term: T,
    /// `(ε/2)|Δ ‖x‖_Q|`
    pub eps_term_norm: T,
    /// `supplied + eps_term - energy_change`
    pub margin: T,
    /// `supplied + eps_term_norm - energy_change`
    pub margin_norm: T,
}

pub fn perturbed_energy_bound<T: Scalar>(
    p: &RegularizedPhs<T>,
    traj: &PhsTrajectory<T>,
    input: &InputSignal<T>,
) -> Result<Vec<PerturbedBoundStep<T>>> {
    let n = traj.states.len();
    if traj.outputs.len() != n {
        return Err(Error::MissingOutputs);
    }
    let audit = dissipativity_check(traj, input, Quadrature::Trapezoid, T::zero())?;
    let base = p.base();
    let mut out = Vec::with_capacity(audit.audits.len());
    for (k, a) in audit.audits.iter().enumerate() {
        let (x0, x1) = (&traj.states[k], &traj.states[k + 1]);
        let energy_change = base.hamiltonian(x1)? - base.hamiltonian(x0)?;
        let q0 = quadratic_form(x0, &base.q)?;
        let q1 = quadratic_form(x1, &base.q)?;
        let half = T::lit(0.5) * p.epsilon();
        let eps_term = half * (q1 - q0).abs();
        let eps_term_norm = half * (q1.sqrt() - q0.sqrt()).abs();
        out.push(PerturbedBoundStep {
            t_start: a.t_start,
            t_end: a.t_end,
            energy_change,
            supplied: a.supplied,
            eps_term,
            eps_term_norm,
            margin: a.supplied + eps_term - energy_change,
            margin_norm: a.supplied + eps_term_norm - energy_change,
        });
    }
    Ok(out)
}
