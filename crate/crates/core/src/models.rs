//! Built-in models, the synthetic port-Hamiltonian generator and JSON model
//! files.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dae::{
    consistent_init, BlockFn, ConstrainedFn, CoupledDae, CoupledDaeWithConstraint, CouplingFlags, Partition, State,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::phs::PhsDae;
use crate::scalar::Scalar;

/// Element values of the coupled LC oscillator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcParams {
    pub r1: f64,
    pub r2: f64,
    pub c1: f64,
    pub c2: f64,
    pub l1: f64,
    pub l2: f64,
}

impl Default for LcParams {
    fn default() -> Self {
        LcParams {
            r1: 1.0,
            r2: 1.0,
            c1: 1.0,
            c2: 1.0,
            l1: 1.0,
            l2: 1.0,
        }
    }
}

impl LcParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("R1", self.r1),
            ("R2", self.r2),
            ("C1", self.c1),
            ("C2", self.c2),
            ("L1", self.l1),
            ("L2", self.l2),
        ];
        for (name, v) in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Two RLC loops joined by a coupling current `jco`.
///
/// Variables: `y1 = (u1, jL1)`, `z1 = (u2)`, `y2 = (jL2, u4)`, `z2 = (u3)`,
/// `u_c = (jco)`; coupling equation `u2 = u3`.
pub fn lc_oscillator<T: Scalar>(p: &LcParams) -> Result<CoupledDaeWithConstraint<T>> {
    p.validate()?;
    let (r1, r2) = (T::lit(p.r1), T::lit(p.r2));
    let (c1, c2) = (T::lit(p.c1), T::lit(p.c2));
    let (l1, l2) = (T::lit(p.l1), T::lit(p.l2));
    let v = |x: Vec<T>| Vector::from_vec(x);

    let f1: ConstrainedFn<T> = Arc::new(move |s, _| {
        let (u1, u2) = (s.y1[0], s.z1[0]);
        v(vec![(u2 - u1) / (r1 * c1), u2 / l1])
    });
    let g1: ConstrainedFn<T> = Arc::new(move |s, uc| {
        let (u1, jl1, u2) = (s.y1[0], s.y1[1], s.z1[0]);
        v(vec![(u2 - u1) / r1 + jl1 + uc[0]])
    });
    let f2: ConstrainedFn<T> = Arc::new(move |s, _| {
        let (u4, u3) = (s.y2[1], s.z2[0]);
        v(vec![u3 / l2, -(u4 - u3) / (r2 * c2)])
    });
    let g2: ConstrainedFn<T> = Arc::new(move |s, uc| {
        let (jl2, u4, u3) = (s.y2[0], s.y2[1], s.z2[0]);
        v(vec![-(u4 - u3) / r2 + jl2 - uc[0]])
    });
    let k: ConstrainedFn<T> = Arc::new(move |s, _| v(vec![s.z1[0] - s.z2[0]]));

    Ok(CoupledDaeWithConstraint {
        partition: Partition::new(2, 2, 1, 1)?,
        nu: 1,
        f1,
        g1,
        f2,
        g2,
        k,
        coupling: CouplingFlags {
            sub1_reads_z2: false,
            sub2_reads_z1: false,
        },
        names: ["u1", "jL1", "jL2", "u4", "u2", "u3", "jco"].map(String::from).to_vec(),
    })
}

/// Default differential initial values `(u1, jL1, jL2, u4)`.
pub const LC_DEFAULT_Y0: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

/// Consistent state of the lifted oscillator (`z = (u2, u3, jco)`) for the
/// differential values `y0`.
pub fn lc_consistent_state<T: Scalar>(dae: &CoupledDae<T>, y0: &[T]) -> Result<State<T>> {
    let p = dae.partition();
    let guess = State::from_stacked(&p, T::zero(), y0, &vec![T::zero(); p.nz()])?;
    consistent_init(dae, &guess, T::default_tolerance())
}

/// Scalar test equation `y' = -lambda * y`.
pub fn decay<T: Scalar>(lambda: T) -> Result<CoupledDae<T>> {
    let f: BlockFn<T> = Arc::new(move |s| Vector::from_vec(vec![-lambda * s.y1[0]]));
    let none: BlockFn<T> = Arc::new(|_| Vector::zeros(0));
    CoupledDae::ode(1, 0, f, none)?.with_names(vec!["y".into()])
}

/// Time-dependent port input `u(t)`.
#[derive(Clone)]
pub enum InputSignal<T> {
    Zero,
    /// `amplitude * sin(2π f1 t) * sin(2π f2 t)` on every port.
    SineProduct {
        f1: T,
        f2: T,
        amplitude: T,
    },
    /// Piecewise-linear interpolation of tabulated values, held constant
    /// outside the table.
    Samples {
        times: Vec<T>,
        values: Vec<Vector<T>>,
    },
    Custom(Arc<dyn Fn(T) -> Vector<T> + Send + Sync>),
}

impl<T: fmt::Debug> fmt::Debug for InputSignal<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSignal::Zero => write!(f, "Zero"),
            InputSignal::SineProduct { f1, f2, amplitude } => {
                write!(f, "SineProduct({f1:?} Hz, {f2:?} Hz, amplitude {amplitude:?})")
            }
            InputSignal::Samples { times, .. } => write!(f, "Samples({} points)", times.len()),
            InputSignal::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl<T: Scalar> InputSignal<T> {
    pub fn sine_product(f1: T, f2: T, amplitude: T) -> Result<Self> {
        if !(f1 > T::zero() && f2 > T::zero()) {
            return Err(Error::InvalidArgument(
                "sine-product frequencies must be positive".into(),
            ));
        }
        Ok(InputSignal::SineProduct { f1, f2, amplitude })
    }

    pub fn samples(times: Vec<T>, values: Vec<Vector<T>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} sample times for {} sample values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sample times must increase strictly".into()));
        }
        let width = values[0].len();
        if values.iter().any(|v| v.len() != width) {
            return Err(Error::InvalidArgument("sample values differ in length".into()));
        }
        Ok(InputSignal::Samples { times, values })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, InputSignal::Zero)
    }

    /// `u(t)` with `m` components.
    pub fn eval(&self, t: T, m: usize) -> Vector<T> {
        match self {
            InputSignal::Zero => Vector::zeros(m),
            InputSignal::SineProduct { f1, f2, amplitude } => {
                let two_pi = T::lit(2.0 * std::f64::consts::PI);
                let v = *amplitude * (two_pi * *f1 * t).sin() * (two_pi * *f2 * t).sin();
                Vector::from_vec(vec![v; m])
            }
            InputSignal::Samples { times, values } => {
                let i = times.partition_point(|&s| s <= t);
                let v = if i == 0 {
                    values[0].clone()
                } else if i == times.len() {
                    values[i - 1].clone()
                } else {
                    let w = (t - times[i - 1]) / (times[i] - times[i - 1]);
                    values[i - 1].scaled(T::one() - w).add(&values[i].scaled(w))
                };
                fit(v, m)
            }
            InputSignal::Custom(f) => fit(f(t), m),
        }
    }
}

fn fit<T: Scalar>(v: Vector<T>, m: usize) -> Vector<T> {
    if v.len() == m {
        v
    } else {
        let mut out = vec![T::zero(); m];
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o = *x;
        }
        Vector::from_vec(out)
    }
}

/// Element values of the six-state port-Hamiltonian circuit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhsCircuitParams {
    pub r: [f64; 5],
    pub c1: f64,
    pub c2: f64,
    /// Inductance of the single inductor (`L1` in the flow matrix).
    pub l: f64,
}

impl Default for PhsCircuitParams {
    fn default() -> Self {
        PhsCircuitParams {
            r: [0.5, 0.5, 0.5, 0.5, 5.0],
            c1: 5e-4,
            c2: 5e-4,
            l: 20.0,
        }
    }
}

/// `E = diag(0, C1, 0, L, 0, C2)` for `x = (u1, u2, u3, j1, u4, u5)`.
pub fn phs_circuit_flow_matrix<T: Scalar>(p: &PhsCircuitParams) -> Matrix<T> {
    Matrix::from_diag(&[T::zero(), T::lit(p.c1), T::zero(), T::lit(p.l), T::zero(), T::lit(p.c2)])
}

/// `sin(2π·50 t) · sin(2π·500 t)`
pub fn phs_circuit_input<T: Scalar>() -> InputSignal<T> {
    InputSignal::SineProduct {
        f1: T::lit(50.0),
        f2: T::lit(500.0),
        amplitude: T::one(),
    }
}

/// Six-state circuit with `E` and the input built from `params` and `J`,
/// `R`, `B` read from `path` (a JSON object with at least those fields).
pub fn phs_circuit_example<T: Scalar>(params: &PhsCircuitParams, path: &Path) -> Result<PhsDae<T>> {
    let text = std::fs::read_to_string(path)?;
    phs_circuit_from_str(params, &text)
}

const CIRCUIT_DEMO: &str = include_str!("../data/circuit2_demo.json");

/// The circuit with the bundled illustrative `J`, `R`, `B`.
pub fn phs_circuit_demo<T: Scalar>() -> Result<PhsDae<T>> {
    phs_circuit_from_str(&PhsCircuitParams::default(), CIRCUIT_DEMO)
}

fn phs_circuit_from_str<T: Scalar>(params: &PhsCircuitParams, text: &str) -> Result<PhsDae<T>> {
    #[derive(Deserialize)]
    #[allow(non_snake_case)]
    struct Blocks {
        J: Vec<Vec<f64>>,
        R: Vec<Vec<f64>>,
        B: Vec<Vec<f64>>,
    }
    let blocks: Blocks = serde_json::from_str(text).map_err(json_error)?;
    let j = matrix_field("J", &blocks.J, 6, 6)?;
    let r = matrix_field("R", &blocks.R, 6, 6)?;
    let b = matrix_field("B", &blocks.B, 6, 1)?;
    PhsDae::checked(
        phs_circuit_flow_matrix(params),
        j,
        r,
        Matrix::identity(6),
        b,
        phs_circuit_input(),
    )
}

/// Random dissipative PHS with `E = diag(1, …, 1, 0, …, 0)`, `Q = I`,
/// skew `J`, `R = MᵀM + 1e-3·I` and a single port on the first state.
pub fn synthetic_phs_dae<T: Scalar>(n_dyn: usize, n_alg: usize, seed: u64) -> Result<PhsDae<T>> {
    if n_dyn == 0 {
        return Err(Error::InvalidArgument(
            "synthetic model needs at least one dynamic state".into(),
        ));
    }
    let n = n_dyn + n_alg;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Matrix<T> {
        let data = (0..n * n).map(|_| T::lit(rng.gen_range(-1.0..=1.0))).collect();
        Matrix::from_row_major(n, n, data).expect("square by construction")
    };
    let a = draw(&mut rng);
    let j = a.sub(&a.transpose())?.scaled(T::lit(0.5));
    let m = draw(&mut rng);
    let r = m
        .transpose()
        .matmul(&m)?
        .add(&Matrix::identity(n).scaled(T::lit(1e-3)))?;
    let r = r.symmetric_part();
    let diag: Vec<T> = (0..n).map(|i| if i < n_dyn { T::one() } else { T::zero() }).collect();
    let mut b = Matrix::zeros(n, 1);
    b[(0, 0)] = T::one();
    PhsDae::checked(
        Matrix::from_diag(&diag),
        j,
        r,
        Matrix::identity(n),
        b,
        InputSignal::Zero,
    )
}

// ---------------------------------------------------------------------------
// Model files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputDesc {
    Zero,
    SineProduct {
        f1: f64,
        f2: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Samples {
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

impl InputDesc {
    pub fn to_signal<T: Scalar>(&self) -> Result<InputSignal<T>> {
        match self {
            InputDesc::Zero => Ok(InputSignal::Zero),
            InputDesc::SineProduct { f1, f2, amplitude } => {
                InputSignal::sine_product(T::lit(*f1), T::lit(*f2), T::lit(*amplitude))
            }
            InputDesc::Samples { times, values } => InputSignal::samples(
                times.iter().map(|&t| T::lit(t)).collect(),
                values
                    .iter()
                    .map(|v| Vector::from_vec(v.iter().map(|&x| T::lit(x)).collect()))
                    .collect(),
            ),
        }
    }

    /// Descriptor of a signal; custom signals have none.
    pub fn from_signal<T: Scalar>(s: &InputSignal<T>) -> Option<Self> {
        Some(match s {
            InputSignal::Zero => InputDesc::Zero,
            InputSignal::SineProduct { f1, f2, amplitude } => InputDesc::SineProduct {
                f1: f1.as_f64(),
                f2: f2.as_f64(),
                amplitude: amplitude.as_f64(),
            },
            InputSignal::Samples { times, values } => InputDesc::Samples {
                times: times.iter().map(|t| t.as_f64()).collect(),
                values: values.iter().map(|v| v.iter().map(|x| x.as_f64()).collect()).collect(),
            },
            InputSignal::Custom(_) => return None,
        })
    }
}

/// On-disk form of a [`PhsDae`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct PhsFile {
    pub kind: String,
    pub n: usize,
    pub m: usize,
    pub E: Vec<Vec<f64>>,
    pub J: Vec<Vec<f64>>,
    pub R: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub Q: Option<Vec<Vec<f64>>>,
    pub B: Vec<Vec<f64>>,
    #[serde(default = "zero_input")]
    pub input: InputDesc,
}

fn zero_input() -> InputDesc {
    InputDesc::Zero
}

impl PhsFile {
    pub fn from_model<T: Scalar>(p: &PhsDae<T>) -> Result<Self> {
        let rows = |m: &Matrix<T>| {
            m.to_rows()
                .iter()
                .map(|r| r.iter().map(|x| x.as_f64()).collect())
                .collect()
        };
        Ok(PhsFile {
            kind: "phs".into(),
            n: p.n(),
            m: p.m(),
            E: rows(&p.e),
            J: rows(&p.j),
            R: rows(&p.r),
            Q: Some(rows(&p.q)),
            B: rows(&p.b),
            input: InputDesc::from_signal(&p.input)
                .ok_or_else(|| Error::InvalidArgument("custom input signals cannot be saved".into()))?,
        })
    }

    /// Dimension checks only.
    pub fn to_unchecked_model<T: Scalar>(&self) -> Result<PhsDae<T>> {
        if self.kind != "phs" {
            return Err(Error::FileFormat(format!(
                "expected kind \"phs\", found \"{}\"",
                self.kind
            )));
        }
        let (n, m) = (self.n, self.m);
        let q = match &self.Q {
            Some(q) => matrix_field("Q", q, n, n)?,
            None => Matrix::identity(n),
        };
        PhsDae::new(
            matrix_field("E", &self.E, n, n)?,
            matrix_field("J", &self.J, n, n)?,
            matrix_field("R", &self.R, n, n)?,
            q,
            matrix_field("B", &self.B, n, m)?,
            self.input
                .to_signal()
                .map_err(|e| Error::FileFormat(format!("input: {e}")))?,
        )
    }
}

fn json_error(e: serde_json::Error) -> Error {
    Error::FileFormat(format!("line {}, column {}: {e}", e.line(), e.column()))
}

fn matrix_field<T: Scalar>(name: &str, rows: &[Vec<f64>], n_rows: usize, n_cols: usize) -> Result<Matrix<T>> {
    if rows.len() != n_rows {
        return Err(Error::FileFormat(format!(
            "field {name}: expected {n_rows} rows, found {}",
            rows.len()
        )));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n_cols {
            return Err(Error::FileFormat(format!(
                "field {name}: row {i} has {} entries, expected {n_cols}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::FileFormat(format!(
                "field {name}: row {i} has a non-finite entry"
            )));
        }
    }
    let data = rows.iter().flatten().map(|&v| T::lit(v)).collect();
    Matrix::from_row_major(n_rows, n_cols, data)
}

/// Parses a PHS file without checking the structural conditions.
pub fn parse_phs_unchecked<T: Scalar>(text: &str) -> Result<PhsDae<T>> {
    let file: PhsFile = serde_json::from_str(text).map_err(json_error)?;
    file.to_unchecked_model()
}

/// Reads a PHS model file and enforces the structural conditions.
pub fn load_phs<T: Scalar>(path: &Path) -> Result<PhsDae<T>> {
    let model = parse_phs_unchecked(&std::fs::read_to_string(path)?)?;
    model.validate_structure().into_result()?;
    Ok(model)
}

pub fn save_phs<T: Scalar>(p: &PhsDae<T>, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&PhsFile::from_model(p)?).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// On-disk form of a linear coupled DAE
/// `[y1'; y2'] = A [y; z]`, `0 = G [y; z]` with `y = (y1, y2)` and
/// `z = (z1, z2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct CoupledLinearFile {
    pub kind: String,
    pub partition: Partition,
    pub A: Vec<Vec<f64>>,
    pub G: Vec<Vec<f64>>,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub z0: Option<Vec<f64>>,
    #[serde(default)]
    pub names: Option<Vec<String>>,
}

/// A loaded linear coupled model with its initial guess.
#[derive(Clone, Debug)]
pub struct LinearCoupledModel<T: Scalar> {
    pub dae: CoupledDae<T>,
    /// Initial state; algebraic values are a guess to be made consistent.
    pub initial: State<T>,
}

pub fn parse_coupled<T: Scalar>(text: &str) -> Result<LinearCoupledModel<T>> {
    let file: CoupledLinearFile = serde_json::from_str(text).map_err(json_error)?;
    if file.kind != "coupled_linear" {
        return Err(Error::FileFormat(format!(
            "expected kind \"coupled_linear\", found \"{}\"",
            file.kind
        )));
    }
    let p = file.partition;
    if p.ny() == 0 {
        return Err(Error::FileFormat(
            "partition: at least one differential variable required".into(),
        ));
    }
    let width = p.len();
    let a: Matrix<T> = matrix_field("A", &file.A, p.ny(), width)?;
    let g: Matrix<T> = matrix_field("G", &file.G, p.nz(), width)?;
    let (ny, ny1, nz1) = (p.ny(), p.ny1, p.nz1);
    // Column ranges of z1 and z2 in the stacked (y, z) vector.
    let z1_cols = ny..ny + nz1;
    let z2_cols = ny + nz1..width;
    let reads = |m: &Matrix<T>, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        rows.into_iter().any(|i| cols.clone().any(|j| m[(i, j)] != T::zero()))
    };
    let coupling = CouplingFlags {
        sub1_reads_z2: reads(&a, 0..ny1, z2_cols.clone()) || reads(&g, 0..nz1, z2_cols),
        sub2_reads_z1: reads(&a, ny1..ny, z1_cols.clone()) || reads(&g, nz1..p.nz(), z1_cols),
    };
    let a = Arc::new(a);
    let g = Arc::new(g);
    let rows = |m: Arc<Matrix<T>>, lo: usize, hi: usize| -> BlockFn<T> {
        Arc::new(move |s: &State<T>| {
            let x = s.flat();
            Vector::from_vec((lo..hi).map(|i| crate::linalg::dot(m.row(i), &x)).collect())
        })
    };
    let mut dae = CoupledDae::new(
        p,
        rows(a.clone(), 0, ny1),
        rows(g.clone(), 0, nz1),
        rows(a, ny1, ny),
        rows(g, nz1, p.nz()),
    )
    .with_coupling(coupling);
    if let Some(names) = file.names {
        dae = dae
            .with_names(names)
            .map_err(|e| Error::FileFormat(format!("names: {e}")))?;
    }
    let y0 = file.y0.unwrap_or_else(|| vec![0.0; ny]);
    let z0 = file.z0.unwrap_or_else(|| vec![0.0; p.nz()]);
    if y0.len() != ny || z0.len() != p.nz() {
        return Err(Error::FileFormat(format!(
            "initial values: expected {ny} + {} entries, found {} + {}",
            p.nz(),
            y0.len(),
            z0.len()
        )));
    }
    let lit = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<_>>();
    let initial = State::from_stacked(&p, T::zero(), &lit(&y0), &lit(&z0))?;
    Ok(LinearCoupledModel { dae, initial })
}

/// Reads a linear coupled DAE file.
pub fn load_coupled<T: Scalar>(path: &Path) -> Result<LinearCoupledModel<T>> {
    parse_coupled(&std::fs::read_to_string(path)?)
}

/// Model file kind (`"phs"` or `"coupled_linear"`) without full parsing.
pub fn model_file_kind(text: &str) -> Result<String> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    let k: Kind = serde_json::from_str(text).map_err(json_error)?;
    Ok(k.kind)
}
