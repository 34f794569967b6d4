//! Hamilton-Poisson realizations of ODE systems with `n − 1` first integrals,
//! and numerical certification of their linearizing chart.
//!
//! A system `ẋ = X(x)` with Casimirs `C₁..C_{n−2}`, Hamiltonian `H` and
//! rescaling `ν` satisfies `Xᵢ = ν · ∂(C₁,…,C_{n−2},xᵢ,H)/∂(x₁,…,xₙ)`.
//! Under `u = (1/ν, C₁/ν, …, H/ν)` and `ds = −div(X) dt` it becomes `u′ = u`.

pub mod calculus;
pub mod expr;
pub mod flow;
pub mod linearize;
pub mod model;
pub mod poisson;
pub mod report;

pub use calculus::{GradientMode, ScalarField, VectorField};
pub use expr::{Dual, EvalError, Expression, Parameters, ParseError};
pub use model::{IntegrableSystem, SampleBox};
pub use report::VerificationReport;
