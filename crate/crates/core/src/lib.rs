//! Operator splitting for coupled semi-explicit index-1 DAEs and
//! port-Hamiltonian DAEs.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common double-precision case.

pub mod dae;
pub mod error;
pub mod harness;
pub mod integrators;
pub mod linalg;
pub mod models;
pub mod newton;
pub mod phs;
pub mod scalar;
pub mod splitting;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Vector64 = linalg::Vector<f64>;
pub type State64 = dae::State<f64>;
pub type CoupledDae64 = dae::CoupledDae<f64>;
pub type Trajectory64 = dae::Trajectory<f64>;
pub type StepConfig64 = integrators::StepConfig<f64>;
pub type SplitPair64 = splitting::SplitPair<f64>;
pub type PhsDae64 = phs::PhsDae<f64>;
pub type RegularizedPhs64 = phs::RegularizedPhs<f64>;
pub type PhsTrajectory64 = phs::PhsTrajectory<f64>;
pub type InputSignal64 = models::InputSignal<f64>;
pub type ConvergenceReport64 = harness::ConvergenceReport<f64>;
pub type EpsStudyReport64 = harness::EpsStudyReport<f64>;

pub type Matrix32 = linalg::Matrix<f32>;
pub type Vector32 = linalg::Vector<f32>;
pub type State32 = dae::State<f32>;
pub type CoupledDae32 = dae::CoupledDae<f32>;
pub type PhsDae32 = phs::PhsDae<f32>;
